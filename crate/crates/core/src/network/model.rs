//! The dual sub-network pose regressor.
//!
//! Each sub-network runs a conv stack (leaky ReLU after every convolution),
//! flattens, passes a shared FC trunk with dropout, then splits into FC
//! branches. Both sub-networks emit a full 6-DOF vector and are trained on
//! the full label; at inference the translation comes from the translation
//! sub-network and the orientation from the orientation sub-network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::config::{ConvSpec, HeadLayout, SubNetConfig, SubNetKind};
use super::graph::{Gradients, Graph, NodeId, ParamId};
use super::tensor::Tensor;
use super::NetworkError;
use crate::encoding::{FramePairInput, ProjectionConfig};
use crate::pose::PoseVector6;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

/// Named parameters in declaration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            tensor,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Rounds every value to the nearest `f32`, the checkpoint storage precision.
    pub fn round_to_f32(&mut self) {
        for p in &mut self.params {
            p.tensor
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = *v as f32 as f64);
        }
    }

    /// SHA-256 over names and values; changes whenever any parameter does.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            for v in p.tensor.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelMode {
    /// Both sub-networks; translation and orientation fused from the specialists.
    Dual,
    /// Translation sub-network alone predicts the full pose.
    TranslationOnly,
    /// Orientation sub-network alone predicts the full pose.
    OrientationOnly,
}

impl ModelMode {
    pub fn name(self) -> &'static str {
        match self {
            ModelMode::Dual => "dual",
            ModelMode::TranslationOnly => "translation-only",
            ModelMode::OrientationOnly => "orientation-only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "dual" => Some(ModelMode::Dual),
            "translation-only" => Some(ModelMode::TranslationOnly),
            "orientation-only" => Some(ModelMode::OrientationOnly),
            _ => None,
        }
    }

    fn uses(self, kind: SubNetKind) -> bool {
        !matches!(
            (self, kind),
            (ModelMode::TranslationOnly, SubNetKind::Orientation)
                | (ModelMode::OrientationOnly, SubNetKind::Translation)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub translation: SubNetConfig,
    pub orientation: SubNetConfig,
    pub mode: ModelMode,
}

impl ModelConfig {
    pub fn tiny(projection: &ProjectionConfig) -> Self {
        let (h, w) = (projection.height(), projection.width());
        Self {
            translation: SubNetConfig::tiny(SubNetKind::Translation, h, w),
            orientation: SubNetConfig::tiny(SubNetKind::Orientation, h, w),
            mode: ModelMode::Dual,
        }
    }

    pub fn full(projection: &ProjectionConfig) -> Self {
        let (h, w) = (projection.height(), projection.width());
        Self {
            translation: SubNetConfig::full(SubNetKind::Translation, h, w),
            orientation: SubNetConfig::full(SubNetKind::Orientation, h, w),
            mode: ModelMode::Dual,
        }
    }

    pub fn with_mode(mut self, mode: ModelMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_heads(mut self, heads: HeadLayout) -> Self {
        self.translation.heads = heads;
        self.orientation.heads = heads;
        self
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.translation.dropout = rate;
        self.orientation.dropout = rate;
        self
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.translation.kind != SubNetKind::Translation
            || self.orientation.kind != SubNetKind::Orientation
        {
            return Err(NetworkError::InvalidConfig(
                "sub-network kinds are swapped".into(),
            ));
        }
        let dims = |c: &SubNetConfig| (c.input_height, c.input_width);
        if dims(&self.translation) != dims(&self.orientation) {
            return Err(NetworkError::InvalidConfig(
                "sub-networks disagree on input size".into(),
            ));
        }
        self.translation.validate()?;
        self.orientation.validate()
    }

    pub fn input_size(&self) -> (usize, usize) {
        (self.translation.input_height, self.translation.input_width)
    }

    pub fn to_text(&self) -> String {
        format!(
            "mode {}\n{}{}",
            self.mode.name(),
            self.translation.to_text(),
            self.orientation.to_text()
        )
    }

    pub fn from_text(text: &str) -> Result<Self, NetworkError> {
        let mut mode = ModelMode::Dual;
        let mut sections: Vec<String> = Vec::new();
        for line in text.lines() {
            let trimmed = line.trim();
            if let Some(m) = trimmed.strip_prefix("mode ") {
                mode = ModelMode::parse(m.trim())
                    .ok_or_else(|| NetworkError::InvalidConfig(format!("unknown mode `{m}`")))?;
            } else if trimmed.starts_with("subnet ") {
                sections.push(format!("{line}\n"));
            } else if let Some(current) = sections.last_mut() {
                current.push_str(line);
                current.push('\n');
            } else if !trimmed.is_empty() && !trimmed.starts_with('#') {
                return Err(NetworkError::InvalidConfig(format!(
                    "unexpected line before any subnet: `{trimmed}`"
                )));
            }
        }
        let mut translation = None;
        let mut orientation = None;
        for s in &sections {
            let cfg = SubNetConfig::from_text(s)?;
            match cfg.kind {
                SubNetKind::Translation => translation = Some(cfg),
                SubNetKind::Orientation => orientation = Some(cfg),
            }
        }
        let cfg = Self {
            translation: translation.ok_or_else(|| {
                NetworkError::InvalidConfig("missing translation sub-network".into())
            })?,
            orientation: orientation.ok_or_else(|| {
                NetworkError::InvalidConfig("missing orientation sub-network".into())
            })?,
            mode,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical text; checkpoints are bound to it.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_text().as_bytes()).into()
    }

    pub fn parameter_count(&self) -> Result<usize, NetworkError> {
        let mut n = 0;
        if self.mode.uses(SubNetKind::Translation) {
            n += self.translation.parameter_count()?;
        }
        if self.mode.uses(SubNetKind::Orientation) {
            n += self.orientation.parameter_count()?;
        }
        Ok(n)
    }
}

#[derive(Debug, Clone)]
struct ConvLayer {
    spec: ConvSpec,
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
struct FcLayer {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
struct Branch {
    hidden: Vec<FcLayer>,
    head: FcLayer,
}

/// Kaiming fan-in normal init, rounded to `f32`.
fn init_weights(rng: &mut ChaCha8Rng, count: usize, fan_in: usize, gain: f64) -> Vec<f64> {
    let std = (gain / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    (0..count)
        .map(|_| normal.sample(rng) as f32 as f64)
        .collect()
}

fn fc_layer(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    name: &str,
    n_in: usize,
    n_out: usize,
    gain: f64,
) -> FcLayer {
    let weight = Tensor::new(
        vec![n_out, n_in],
        init_weights(rng, n_in * n_out, n_in, gain),
    )
    .expect("fc weight");
    FcLayer {
        weight: store.add(format!("{name}.weight"), weight),
        bias: store.add(format!("{name}.bias"), Tensor::zeros(&[n_out])),
    }
}

#[derive(Debug, Clone)]
pub struct SubNet {
    config: SubNetConfig,
    convs: Vec<ConvLayer>,
    trunk: Vec<FcLayer>,
    branches: Vec<Branch>,
}

impl SubNet {
    fn build(
        config: &SubNetConfig,
        prefix: &str,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, NetworkError> {
        config.validate()?;
        let act_gain = 2.0 / (1.0 + config.slope * config.slope);
        let convs = config
            .conv
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let fan_in = spec.in_channels * spec.kernel * spec.kernel;
                let w = Tensor::new(
                    vec![
                        spec.out_channels,
                        spec.in_channels,
                        spec.kernel,
                        spec.kernel,
                    ],
                    init_weights(rng, spec.weight_count(), fan_in, act_gain),
                )
                .expect("conv weight");
                ConvLayer {
                    spec: *spec,
                    weight: store.add(format!("{prefix}.conv{i}.weight"), w),
                    bias: store.add(
                        format!("{prefix}.conv{i}.bias"),
                        Tensor::zeros(&[spec.out_channels]),
                    ),
                }
            })
            .collect();

        let mut width = config.flattened_len()?;
        let mut trunk = Vec::new();
        for (i, &n) in config.fc_trunk.iter().enumerate() {
            trunk.push(fc_layer(
                store,
                rng,
                &format!("{prefix}.fc{i}"),
                width,
                n,
                act_gain,
            ));
            width = n;
        }
        let heads: &[(&str, usize)] = match config.heads {
            HeadLayout::TwoBranch => &[("trans", 3), ("orient", 3)],
            HeadLayout::SingleBranch => &[("pose", 6)],
        };
        let branches = heads
            .iter()
            .map(|&(name, out)| {
                let mut w = width;
                let hidden = config
                    .branch_hidden
                    .iter()
                    .enumerate()
                    .map(|(i, &n)| {
                        let layer = fc_layer(
                            store,
                            rng,
                            &format!("{prefix}.{name}.fc{i}"),
                            w,
                            n,
                            act_gain,
                        );
                        w = n;
                        layer
                    })
                    .collect();
                Branch {
                    hidden,
                    head: fc_layer(store, rng, &format!("{prefix}.{name}.head"), w, out, 1.0),
                }
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            convs,
            trunk,
            branches,
        })
    }

    pub fn config(&self) -> &SubNetConfig {
        &self.config
    }

    fn linear(
        &self,
        store: &ParamStore,
        g: &mut Graph,
        x: NodeId,
        layer: &FcLayer,
    ) -> Result<NodeId, NetworkError> {
        let w = g.param(layer.weight, store.get(layer.weight).tensor.clone());
        let b = g.param(layer.bias, store.get(layer.bias).tensor.clone());
        g.linear(x, w, b)
    }

    /// Records the forward pass; the returned node is the 6-vector `[p, q]`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        store: &ParamStore,
        g: &mut Graph,
        input: NodeId,
        training: bool,
        rng: &mut R,
    ) -> Result<NodeId, NetworkError> {
        let shape = g.value(input).shape().to_vec();
        let expected = [
            self.config.kind.input_channels(),
            self.config.input_height,
            self.config.input_width,
        ];
        if shape != expected {
            return Err(NetworkError::ShapeMismatch(format!(
                "{} sub-network expects input {expected:?}, got {shape:?}",
                self.config.kind.name()
            )));
        }
        let slope = self.config.slope;
        let mut x = input;
        for layer in &self.convs {
            let w = g.param(layer.weight, store.get(layer.weight).tensor.clone());
            let b = g.param(layer.bias, store.get(layer.bias).tensor.clone());
            x = g.conv2d(x, w, b, layer.spec)?;
            x = g.leaky_relu(x, slope)?;
        }
        x = g.flatten(x)?;
        for layer in &self.trunk {
            x = self.linear(store, g, x, layer)?;
            x = g.leaky_relu(x, slope)?;
            x = g.dropout(x, self.config.dropout, training, rng)?;
        }
        let mut outs = Vec::with_capacity(self.branches.len());
        for branch in &self.branches {
            let mut y = x;
            for layer in &branch.hidden {
                y = self.linear(store, g, y, layer)?;
                y = g.leaky_relu(y, slope)?;
            }
            outs.push(self.linear(store, g, y, &branch.head)?);
        }
        if outs.len() == 1 {
            Ok(outs[0])
        } else {
            g.concat(&outs)
        }
    }
}

/// 6-vector output nodes of the sub-networks present in the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelOutputs {
    pub translation: Option<NodeId>,
    pub orientation: Option<NodeId>,
}

/// Raw 6-DOF predictions of each sub-network, plus the fused pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub fused: PoseVector6,
    pub translation_subnet: Option<[f64; 6]>,
    pub orientation_subnet: Option<[f64; 6]>,
}

/// Loss of one forward pass, split per sub-network.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub translation_subnet: f64,
    pub orientation_subnet: f64,
}

/// Fusion rule: `p` from the translation sub-network, `q` from the
/// orientation sub-network; a lone sub-network supplies both.
pub fn fuse(translation: Option<&[f64; 6]>, orientation: Option<&[f64; 6]>) -> PoseVector6 {
    let (p_src, q_src) = match (translation, orientation) {
        (Some(t), Some(o)) => (t, o),
        (Some(t), None) => (t, t),
        (None, Some(o)) => (o, o),
        (None, None) => return PoseVector6::zeros(),
    };
    PoseVector6::from_array([p_src[0], p_src[1], p_src[2], q_src[3], q_src[4], q_src[5]])
}

#[derive(Debug, Clone)]
pub struct DeepPcoModel {
    config: ModelConfig,
    store: ParamStore,
    translation: Option<SubNet>,
    orientation: Option<SubNet>,
}

impl DeepPcoModel {
    /// Fresh model with seeded initialization.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, NetworkError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::default();
        let translation = if config.mode.uses(SubNetKind::Translation) {
            Some(SubNet::build(
                &config.translation,
                "trans",
                &mut store,
                &mut rng,
            )?)
        } else {
            None
        };
        let orientation = if config.mode.uses(SubNetKind::Orientation) {
            Some(SubNet::build(
                &config.orientation,
                "orient",
                &mut store,
                &mut rng,
            )?)
        } else {
            None
        };
        Ok(Self {
            config,
            store,
            translation,
            orientation,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        pair: &FramePairInput,
        training: bool,
        rng: &mut R,
    ) -> Result<ModelOutputs, NetworkError> {
        let translation = match &self.translation {
            Some(net) => {
                let x = g.input(pair.translation.clone());
                Some(net.forward(&self.store, g, x, training, rng)?)
            }
            None => None,
        };
        let orientation = match &self.orientation {
            Some(net) => {
                let x = g.input(pair.orientation.clone());
                Some(net.forward(&self.store, g, x, training, rng)?)
            }
            None => None,
        };
        Ok(ModelOutputs {
            translation,
            orientation,
        })
    }

    fn read6(g: &Graph, id: Option<NodeId>) -> Option<[f64; 6]> {
        id.map(|n| {
            g.value(n)
                .data()
                .try_into()
                .expect("sub-network emits a 6-vector")
        })
    }

    /// Eval-mode prediction (dropout off).
    pub fn predict(&self, pair: &FramePairInput) -> Result<Prediction, NetworkError> {
        let mut g = Graph::new();
        // eval mode never draws from the generator
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut g, pair, false, &mut rng)?;
        let t = Self::read6(&g, out.translation);
        let o = Self::read6(&g, out.orientation);
        Ok(Prediction {
            fused: fuse(t.as_ref(), o.as_ref()),
            translation_subnet: t,
            orientation_subnet: o,
        })
    }

    /// Forward + backward of the summed sub-network losses for one pair.
    pub fn loss_and_gradients<R: Rng + ?Sized>(
        &self,
        pair: &FramePairInput,
        label: &PoseVector6,
        k: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<(LossBreakdown, Gradients), NetworkError> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, pair, training, rng)?;
        let truth = label.to_array();
        let mut parts = Vec::new();
        let mut breakdown = LossBreakdown::default();
        if let Some(t) = out.translation {
            let l = g.loss6(t, truth, k)?;
            breakdown.translation_subnet = g.value(l).data()[0];
            parts.push(l);
        }
        if let Some(o) = out.orientation {
            let l = g.loss6(o, truth, k)?;
            breakdown.orientation_subnet = g.value(l).data()[0];
            parts.push(l);
        }
        let total = g.sum(&parts)?;
        breakdown.total = g.value(total).data()[0];
        let grads = g.backward(total)?;
        Ok((breakdown, grads))
    }
}
