//! Supervised training: Adam with step-halving learning rate, seeded
//! shuffling, mini-batch gradient averaging and per-epoch checkpoints.
//!
//! All randomness is derived from `seed`: the shuffle of epoch `e` from
//! `(seed, e)` and the dropout masks of the `j`-th sample of optimizer step
//! `s` from `(seed, s, j)`. Per-sample work inside a batch runs in parallel,
//! but results are reduced in batch order, so a run is bit-for-bit
//! reproducible and a resumed run matches an uninterrupted one.

use std::fmt::{self, Write as _};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::eval::{rmse_relative, EvalError, RmseReport};
use crate::kitti::SamplePair;
use crate::network::checkpoint::DType;
use crate::network::model::Prediction;
use crate::network::{
    Checkpoint, DeepPcoModel, Gradients, LossBreakdown, NetworkError, ParamStore,
};
use crate::pose::PoseVector6;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss\n{0}")]
    NonFiniteLoss(Box<BatchDump>),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Learning rate halves every this many epochs.
    pub halve_every: usize,
    pub k: f64,
    pub seed: u64,
    /// Trunk dropout rate the model is expected to be built with.
    pub dropout: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 8,
            epochs: 30,
            halve_every: 10,
            k: 100.0,
            seed: 0,
            dropout: 0.5,
            clip_norm: Some(10.0),
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 11] = [
        "lr",
        "beta1",
        "beta2",
        "epsilon",
        "batch_size",
        "epochs",
        "halve_every",
        "k",
        "seed",
        "dropout",
        "clip_norm",
    ];

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        let pos = |x: f64| x.is_finite() && x > 0.0;
        if !(pos(self.lr0) && pos(self.epsilon) && pos(self.k)) {
            return bad("lr, epsilon and k must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.epochs == 0 || self.halve_every == 0 {
            return bad("batch_size, epochs and halve_every must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.clip_norm.is_some_and(|c| !pos(c)) {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 * 0.5f64.powi((epoch / self.halve_every) as i32)
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("`{v}` is not a valid value"))
        }
        match key {
            "lr" => self.lr0 = num(value)?,
            "beta1" => self.beta1 = num(value)?,
            "beta2" => self.beta2 = num(value)?,
            "epsilon" => self.epsilon = num(value)?,
            "batch_size" => self.batch_size = num(value)?,
            "epochs" => self.epochs = num(value)?,
            "halve_every" => self.halve_every = num(value)?,
            "k" => self.k = num(value)?,
            "seed" => self.seed = num(value)?,
            "dropout" => self.dropout = num(value)?,
            "clip_norm" => {
                self.clip_norm = if matches!(value, "none" | "off") {
                    None
                } else {
                    Some(num(value)?)
                }
            }
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults.
    pub fn from_text(text: &str) -> Result<Self, TrainError> {
        let mut cfg = Self::default();
        for (line, key, value) in parse_key_values(text)? {
            cfg.set(&key, &value)
                .map_err(|reason| TrainError::Config { line, reason })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let clip = self.clip_norm.map_or("none".to_string(), |c| c.to_string());
        format!(
            "lr = {}\nbeta1 = {}\nbeta2 = {}\nepsilon = {}\nbatch_size = {}\nepochs = {}\nhalve_every = {}\nk = {}\nseed = {}\ndropout = {}\nclip_norm = {}\n",
            self.lr0, self.beta1, self.beta2, self.epsilon, self.batch_size, self.epochs, self.halve_every, self.k, self.seed, self.dropout, clip
        )
    }
}

/// Flat `key = value` text: `#` starts a comment, blank lines are ignored.
/// Returns `(line number, key, value)` triples.
pub fn parse_key_values(text: &str) -> Result<Vec<(usize, String, String)>, TrainError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| TrainError::Config {
            line: i + 1,
            reason: format!("expected `key = value`, found `{line}`"),
        })?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// First/second moment estimates per parameter, in parameter declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store
            .iter()
            .map(|(_, p)| vec![0.0; p.tensor.len()])
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One Adam update of a flat parameter slice; `t` is the 1-based step.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    theta: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    cfg: &TrainConfig,
) {
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..theta.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let (mh, vh) = (m[i] / c1, v[i] / c2);
        theta[i] -= lr * mh / (vh.sqrt() + cfg.epsilon);
    }
}

/// Applies one Adam step to every parameter. `grads` is dense, one vector per
/// parameter in declaration order.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &[Vec<f64>],
    state: &mut AdamState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} parameters, {} gradients, {} moments",
            store.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for (i, id) in ids.into_iter().enumerate() {
        let param = store.get_mut(id);
        let n = param.tensor.len();
        if grads[i].len() != n || state.m[i].len() != n || state.v[i].len() != n {
            return Err(TrainError::ShapeMismatch(format!(
                "parameter {}: {} values, gradient {}",
                param.name,
                n,
                grads[i].len()
            )));
        }
        adam_update(
            param.tensor.data_mut(),
            &grads[i],
            &mut state.m[i],
            &mut state.v[i],
            state.step,
            lr,
            cfg,
        );
    }
    Ok(())
}

fn dense(store: &ParamStore) -> Vec<Vec<f64>> {
    store
        .iter()
        .map(|(_, p)| vec![0.0; p.tensor.len()])
        .collect()
}

fn accumulate(acc: &mut [Vec<f64>], g: &Gradients) {
    for (id, vals) in g.iter() {
        for (a, v) in acc[id.0].iter_mut().zip(vals) {
            *a += v;
        }
    }
}

pub fn global_norm(grads: &[Vec<f64>]) -> f64 {
    grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
}

/// Mean losses of one optimizer step (batch mean).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub loss: LossBreakdown,
}

/// Sample-weighted mean losses over one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochSummary>,
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str =
        "epoch,step,lr,loss_total,loss_trans_subnet,loss_orient_subnet";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.steps {
            writeln!(
                s,
                "{},{},{},{},{},{}",
                r.epoch,
                r.step,
                r.lr,
                r.loss.total,
                r.loss.translation_subnet,
                r.loss.orientation_subnet
            )
            .unwrap();
        }
        s
    }
}

/// Everything needed to continue a run exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub adam: AdamState,
    pub epochs_done: usize,
    pub history: TrainHistory,
}

impl TrainState {
    pub fn new(model: &DeepPcoModel) -> Self {
        Self {
            adam: AdamState::new(model.params()),
            epochs_done: 0,
            history: TrainHistory::default(),
        }
    }
}

/// Context of a batch whose loss or gradient was not finite.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchDump {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub samples: Vec<usize>,
    pub losses: Vec<LossBreakdown>,
    pub labels: Vec<PoseVector6>,
    pub parameter_digest: String,
}

impl fmt::Display for BatchDump {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "epoch {} step {} lr {} params {}",
            self.epoch, self.step, self.lr, self.parameter_digest
        )?;
        for ((i, l), y) in self.samples.iter().zip(&self.losses).zip(&self.labels) {
            writeln!(
                f,
                "  sample {i}: loss {} (trans {}, orient {}) label {:?}",
                l.total,
                l.translation_subnet,
                l.orientation_subnet,
                y.to_array()
            )?;
        }
        Ok(())
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x5EED, |acc, p| splitmix(acc ^ splitmix(*p)))
}

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

/// Sample order of one epoch.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[
        seed,
        SHUFFLE_STREAM,
        epoch as u64,
    ])));
    order
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Writes `epoch_NNN.ckpt` (parameters plus optimizer state) after each epoch.
    pub checkpoint_dir: Option<&'a Path>,
    /// Continue from this state instead of starting fresh.
    pub resume: Option<TrainState>,
    pub on_epoch: Option<&'a mut dyn FnMut(&EpochSummary)>,
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch:03}.ckpt"))
}

/// Trains `model` in place through `cfg.epochs` epochs.
pub fn train(
    model: &mut DeepPcoModel,
    data: &[SamplePair],
    cfg: &TrainConfig,
    mut opts: TrainOptions,
) -> Result<TrainState, TrainError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let model_dropout = model.config().translation.dropout;
    if model_dropout != cfg.dropout {
        return Err(TrainError::InvalidConfig(format!(
            "model built with dropout {model_dropout}, config says {}",
            cfg.dropout
        )));
    }
    let mut state = opts.resume.take().unwrap_or_else(|| TrainState::new(model));
    if state.adam.m.len() != model.params().len() {
        return Err(TrainError::ShapeMismatch(
            "optimizer state does not match the model".into(),
        ));
    }
    if let Some(dir) = opts.checkpoint_dir {
        fs::create_dir_all(dir).map_err(|source| TrainError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }

    for epoch in state.epochs_done..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let order = epoch_order(cfg.seed, epoch, data.len());
        let mut epoch_sum = LossBreakdown::default();
        for chunk in order.chunks(cfg.batch_size) {
            let step = state.adam.step;
            let frozen: &DeepPcoModel = model;
            let results: Vec<(LossBreakdown, Gradients)> = chunk
                .par_iter()
                .enumerate()
                .map(|(j, &idx)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
                        cfg.seed,
                        DROPOUT_STREAM,
                        step,
                        j as u64,
                    ]));
                    frozen.loss_and_gradients(
                        &data[idx].input,
                        &data[idx].label,
                        cfg.k,
                        true,
                        &mut rng,
                    )
                })
                .collect::<Result<_, _>>()?;

            let mut grads = dense(model.params());
            let mut batch = LossBreakdown::default();
            for (l, g) in &results {
                batch.total += l.total;
                batch.translation_subnet += l.translation_subnet;
                batch.orientation_subnet += l.orientation_subnet;
                accumulate(&mut grads, g);
            }
            let scale = 1.0 / chunk.len() as f64;
            grads.iter_mut().flatten().for_each(|g| *g *= scale);
            let norm = global_norm(&grads);
            if !batch.total.is_finite() || !norm.is_finite() {
                return Err(TrainError::NonFiniteLoss(Box::new(BatchDump {
                    epoch,
                    step,
                    lr,
                    samples: chunk.to_vec(),
                    losses: results.iter().map(|r| r.0).collect(),
                    labels: chunk.iter().map(|&i| data[i].label).collect(),
                    parameter_digest: model.params().digest(),
                })));
            }
            if let Some(clip) = cfg.clip_norm {
                if norm > clip {
                    let s = clip / norm;
                    grads.iter_mut().flatten().for_each(|g| *g *= s);
                }
            }
            adam_step(model.params_mut(), &grads, &mut state.adam, lr, cfg)?;
            model.params_mut().round_to_f32();

            epoch_sum.total += batch.total;
            epoch_sum.translation_subnet += batch.translation_subnet;
            epoch_sum.orientation_subnet += batch.orientation_subnet;
            state.history.steps.push(StepRecord {
                epoch,
                step: state.adam.step,
                lr,
                loss: LossBreakdown {
                    total: batch.total * scale,
                    translation_subnet: batch.translation_subnet * scale,
                    orientation_subnet: batch.orientation_subnet * scale,
                },
            });
        }
        let n = data.len() as f64;
        let summary = EpochSummary {
            epoch,
            lr,
            loss: LossBreakdown {
                total: epoch_sum.total / n,
                translation_subnet: epoch_sum.translation_subnet / n,
                orientation_subnet: epoch_sum.orientation_subnet / n,
            },
        };
        state.history.epochs.push(summary);
        state.epochs_done = epoch + 1;
        if let Some(dir) = opts.checkpoint_dir {
            training_checkpoint(model, &state)
                .write(&checkpoint_path(dir, epoch))
                .map_err(TrainError::from)?;
        }
        if let Some(cb) = opts.on_epoch.as_mut() {
            cb(&summary);
        }
    }
    Ok(state)
}

/// Model parameters plus optimizer state and loss history.
pub fn training_checkpoint(model: &DeepPcoModel, state: &TrainState) -> Checkpoint {
    let mut ck = Checkpoint::from_model(model);
    for (i, (_, p)) in model.params().iter().enumerate() {
        ck.push_f64(
            format!("adam.m.{}", p.name),
            p.tensor.shape().to_vec(),
            state.adam.m[i].clone(),
        );
        ck.push_f64(
            format!("adam.v.{}", p.name),
            p.tensor.shape().to_vec(),
            state.adam.v[i].clone(),
        );
    }
    ck.push_f64("train.step", vec![1], vec![state.adam.step as f64]);
    ck.push_f64("train.epochs_done", vec![1], vec![state.epochs_done as f64]);
    let steps: Vec<f64> = state
        .history
        .steps
        .iter()
        .flat_map(|r| {
            [
                r.epoch as f64,
                r.step as f64,
                r.lr,
                r.loss.total,
                r.loss.translation_subnet,
                r.loss.orientation_subnet,
            ]
        })
        .collect();
    ck.push_f64(
        "train.history.steps",
        vec![state.history.steps.len(), 6],
        steps,
    );
    let epochs: Vec<f64> = state
        .history
        .epochs
        .iter()
        .flat_map(|r| {
            [
                r.epoch as f64,
                r.lr,
                r.loss.total,
                r.loss.translation_subnet,
                r.loss.orientation_subnet,
            ]
        })
        .collect();
    ck.push_f64(
        "train.history.epochs",
        vec![state.history.epochs.len(), 5],
        epochs,
    );
    ck
}

/// Rebuilds the model and, when present, the training state of a checkpoint.
pub fn load_training_checkpoint(ck: &Checkpoint) -> Result<(DeepPcoModel, TrainState), TrainError> {
    let model = ck.to_model()?;
    let mut state = TrainState::new(&model);
    let Some(step) = ck.blob("train.step") else {
        return Ok((model, state));
    };
    let f64_blob = |name: &str| -> Result<&[f64], TrainError> {
        match ck.blob(name) {
            Some(b) if b.dtype == DType::F64 => Ok(&b.values),
            _ => Err(NetworkError::Checkpoint(format!("missing f64 blob {name}")).into()),
        }
    };
    for (i, (_, p)) in model.params().iter().enumerate() {
        let (m, v) = (
            f64_blob(&format!("adam.m.{}", p.name))?,
            f64_blob(&format!("adam.v.{}", p.name))?,
        );
        if m.len() != p.tensor.len() || v.len() != p.tensor.len() {
            return Err(TrainError::ShapeMismatch(format!(
                "optimizer moments of {}",
                p.name
            )));
        }
        state.adam.m[i] = m.to_vec();
        state.adam.v[i] = v.to_vec();
    }
    state.adam.step = step.values.first().copied().unwrap_or(0.0) as u64;
    state.epochs_done = f64_blob("train.epochs_done")?
        .first()
        .copied()
        .unwrap_or(0.0) as usize;
    let loss = |a: f64, b: f64, c: f64| LossBreakdown {
        total: a,
        translation_subnet: b,
        orientation_subnet: c,
    };
    state.history.steps = f64_blob("train.history.steps")?
        .chunks_exact(6)
        .map(|r| StepRecord {
            epoch: r[0] as usize,
            step: r[1] as u64,
            lr: r[2],
            loss: loss(r[3], r[4], r[5]),
        })
        .collect();
    state.history.epochs = f64_blob("train.history.epochs")?
        .chunks_exact(5)
        .map(|r| EpochSummary {
            epoch: r[0] as usize,
            lr: r[1],
            loss: loss(r[2], r[3], r[4]),
        })
        .collect();
    Ok((model, state))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub predictions: Vec<Prediction>,
    pub report: RmseReport,
}

impl Evaluation {
    pub fn fused(&self) -> Vec<PoseVector6> {
        self.predictions.iter().map(|p| p.fused).collect()
    }
}

/// Eval-mode predictions for every pair and their RMSE against the labels.
pub fn evaluate(model: &DeepPcoModel, data: &[SamplePair]) -> Result<Evaluation, TrainError> {
    let predictions: Vec<Prediction> = data
        .par_iter()
        .map(|s| model.predict(&s.input))
        .collect::<Result<_, _>>()?;
    let fused: Vec<PoseVector6> = predictions.iter().map(|p| p.fused).collect();
    let labels: Vec<PoseVector6> = data.iter().map(|s| s.label).collect();
    let report = rmse_relative(&fused, &labels)?;
    Ok(Evaluation {
        predictions,
        report,
    })
}

/// RMSE of always predicting zero motion.
pub fn zero_baseline(data: &[SamplePair]) -> Result<RmseReport, TrainError> {
    let labels: Vec<PoseVector6> = data.iter().map(|s| s.label).collect();
    Ok(rmse_relative(
        &vec![PoseVector6::zeros(); labels.len()],
        &labels,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{stack_pair, DepthImage, ProjectionConfig};
    use crate::network::ModelConfig;
    use nalgebra::Vector3;
    use rand::Rng;

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            lr0: 1e-3,
            epochs: 2,
            batch_size: 3,
            seed: 11,
            dropout: 0.5,
            ..TrainConfig::default()
        }
    }

    fn toy_data(n: usize, seed: u64) -> Vec<SamplePair> {
        let cfg = ProjectionConfig::tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let shift = rng.random_range(0..4usize);
                let (w, h) = (cfg.width(), cfg.height());
                let mut a = vec![0.0; w * h];
                let mut b = vec![0.0; w * h];
                for c in 0..h {
                    for r in 0..w {
                        let v = ((r * 7 + c * 3) % 23) as f64 * 10.0;
                        a[c * w + r] = v;
                        b[c * w + (r + shift) % w] = v;
                    }
                }
                let (a, b) = (
                    DepthImage::from_values(cfg, a).unwrap(),
                    DepthImage::from_values(cfg, b).unwrap(),
                );
                SamplePair {
                    input: stack_pair(&a, &b).unwrap(),
                    label: PoseVector6::new(
                        Vector3::new(0.2 * shift as f64, 0.0, 0.0),
                        Vector3::new(0.0, 0.0, 0.01 * shift as f64),
                    ),
                }
            })
            .collect()
    }

    fn model(dropout: f64) -> DeepPcoModel {
        DeepPcoModel::new(
            ModelConfig::tiny(&ProjectionConfig::tiny()).with_dropout(dropout),
            3,
        )
        .unwrap()
    }

    #[test]
    fn learning_rate_schedule() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(0), 1e-4);
        assert_eq!(c.lr_at(9), 1e-4);
        assert_eq!(c.lr_at(10), 5e-5);
        assert_eq!(c.lr_at(29), 2.5e-5);
    }

    #[test]
    fn adam_closed_form_and_quadratic() {
        let c = TrainConfig::default();
        let (mut th, mut m, mut v) = ([1.0], [0.0], [0.0]);
        adam_update(&mut th, &[0.0], &mut m, &mut v, 1, 0.1, &c);
        assert_eq!(th, [1.0]);
        adam_update(&mut th, &[1.0], &mut m, &mut v, 1, 0.1, &c);
        assert!((th[0] - 0.9).abs() < 1e-6, "{}", th[0]);

        let (mut th, mut m, mut v) = ([1.0], [0.0], [0.0]);
        for t in 1..=100 {
            let g = [2.0 * th[0]];
            adam_update(&mut th, &g, &mut m, &mut v, t, 0.1, &c);
        }
        assert!(th[0].abs() < 0.1, "{}", th[0]);
    }

    #[test]
    fn adam_step_checks_shapes() {
        let mut m = model(0.5);
        let mut state = AdamState::new(m.params());
        let cfg = TrainConfig::default();
        assert!(matches!(
            adam_step(m.params_mut(), &[], &mut state, 1e-3, &cfg),
            Err(TrainError::ShapeMismatch(_))
        ));
        let digest = m.params().digest();
        let zero = dense(m.params());
        adam_step(m.params_mut(), &zero, &mut state, 1e-3, &cfg).unwrap();
        assert_eq!(m.params().digest(), digest);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn config_text_round_trip_and_errors() {
        let mut c = quick_cfg();
        c.clip_norm = None;
        assert_eq!(TrainConfig::from_text(&c.to_text()).unwrap(), c);
        let parsed =
            TrainConfig::from_text("# comment\nlr = 0.001\n\nepochs=5 # trailing\n").unwrap();
        assert_eq!((parsed.lr0, parsed.epochs, parsed.batch_size), (1e-3, 5, 8));
        assert!(matches!(
            TrainConfig::from_text("lr 0.1"),
            Err(TrainError::Config { line: 1, .. })
        ));
        assert!(matches!(
            TrainConfig::from_text("\nbogus = 1"),
            Err(TrainError::Config { line: 2, .. })
        ));
        assert!(matches!(
            TrainConfig::from_text("batch_size = 0"),
            Err(TrainError::InvalidConfig(_))
        ));
    }

    #[test]
    fn step_count_and_determinism() {
        let data = toy_data(7, 1);
        let cfg = quick_cfg();
        let mut a = model(0.5);
        let sa = train(&mut a, &data, &cfg, TrainOptions::default()).unwrap();
        assert_eq!(sa.adam.step, 2 * 3);
        assert_eq!(sa.history.steps.len(), 6);
        assert_eq!(sa.history.epochs.len(), 2);
        let mut b = model(0.5);
        let sb = train(&mut b, &data, &cfg, TrainOptions::default()).unwrap();
        assert_eq!(sa.history, sb.history);
        assert_eq!(a.params().digest(), b.params().digest());
        assert!(sa
            .history
            .to_csv()
            .starts_with("epoch,step,lr,loss_total,loss_trans_subnet,loss_orient_subnet\n0,1,"));
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let data = toy_data(5, 2);
        let cfg = TrainConfig {
            epochs: 3,
            ..quick_cfg()
        };
        let mut full = model(0.5);
        let full_state = train(&mut full, &data, &cfg, TrainOptions::default()).unwrap();

        let mut part = model(0.5);
        let short = TrainConfig {
            epochs: 1,
            ..cfg.clone()
        };
        train(
            &mut part,
            &data,
            &short,
            TrainOptions {
                checkpoint_dir: Some(dir.path()),
                ..Default::default()
            },
        )
        .unwrap();
        let ck = Checkpoint::read(&checkpoint_path(dir.path(), 0)).unwrap();
        let (mut resumed, state) = load_training_checkpoint(&ck).unwrap();
        assert_eq!(state.epochs_done, 1);
        let resumed_state = train(
            &mut resumed,
            &data,
            &cfg,
            TrainOptions {
                resume: Some(state),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(resumed_state.history, full_state.history);
        assert_eq!(resumed.params().digest(), full.params().digest());
    }

    #[test]
    fn memorizes_a_single_sample() {
        let data = toy_data(1, 3);
        let cfg = TrainConfig {
            lr0: 1e-3,
            epochs: 200,
            halve_every: 25,
            batch_size: 1,
            dropout: 0.0,
            clip_norm: None,
            ..TrainConfig::default()
        };
        let mut m = model(0.0);
        let state = train(&mut m, &data, &cfg, TrainOptions::default()).unwrap();
        assert_eq!(state.adam.step, 200);
        let last = state.history.steps.last().unwrap().loss.total;
        assert!(last < 1e-6, "final loss {last}");
    }

    #[test]
    fn evaluate_is_pure_and_repeatable() {
        let data = toy_data(4, 4);
        let m = model(0.5);
        let before = m.params().digest();
        let a = evaluate(&m, &data).unwrap();
        let b = evaluate(&m, &data).unwrap();
        assert_eq!(a, b);
        assert_eq!(m.params().digest(), before);
    }

    #[test]
    fn zero_output_baseline_is_motion_norm() {
        let step = PoseVector6::new(Vector3::new(0.3, 0.4, 0.0), Vector3::new(0.0, 0.0, 0.05));
        let mut data = toy_data(3, 5);
        data.iter_mut().for_each(|s| s.label = step);
        let r = zero_baseline(&data).unwrap();
        assert!((r.t_rel - 0.5).abs() < 1e-12);
        assert!((r.r_rel - 0.05).abs() < 1e-12);

        let mut m = model(0.5);
        let ids: Vec<_> = m.params().iter().map(|(id, _)| id).collect();
        for id in ids {
            m.params_mut().get_mut(id).tensor.data_mut().fill(0.0);
        }
        assert_eq!(evaluate(&m, &data).unwrap().report, r);
    }

    #[test]
    fn non_finite_loss_aborts_with_dump() {
        let mut data = toy_data(2, 6);
        data[1].label = PoseVector6::from_array([f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let mut m = model(0.5);
        match train(&mut m, &data, &quick_cfg(), TrainOptions::default()) {
            Err(TrainError::NonFiniteLoss(dump)) => {
                assert!(dump.samples.contains(&1));
                assert!(dump.to_string().contains("sample 1"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_empty_dataset_and_dropout_mismatch() {
        let mut m = model(0.5);
        assert!(matches!(
            train(&mut m, &[], &quick_cfg(), TrainOptions::default()),
            Err(TrainError::EmptyDataset)
        ));
        let cfg = TrainConfig {
            dropout: 0.2,
            ..quick_cfg()
        };
        assert!(matches!(
            train(&mut m, &toy_data(1, 0), &cfg, TrainOptions::default()),
            Err(TrainError::InvalidConfig(_))
        ));
    }
}
