use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use deeppco::encoding::{project_cloud, stack_pair, DepthImage, ProjectionConfig, ProjectionStats};
use deeppco::eval::{
    export_trajectory_svg, format_drift_csv, format_drift_table, format_rmse_csv,
    format_rmse_table, kitti_drift, path_distances, rmse_relative, trajectory_csv, EvalError,
};
use deeppco::kitti::{
    read_calibration, read_kitti_poses, read_velodyne_bin, relative_label, write_kitti_trajectory,
    DatasetLayout, PairStream, SamplePair,
};
use deeppco::network::{Checkpoint, DeepPcoModel};
use deeppco::pose::{
    compose, invert, pose_to_vec6_lenient, relative_poses, vec6_to_pose, EulerConvention, Pose,
    PoseVector6,
};
use deeppco::synthetic::{generate_sequence, MotionSpec, SceneSpec};
use deeppco::trainer::{
    load_training_checkpoint, train, training_checkpoint, EpochSummary, TrainOptions, TrainState,
};
use serde::Serialize;

use crate::error::CliError;
use crate::settings::Settings;

const STREAM_WINDOW: usize = 8;

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Checkpoint::from_bytes(&bytes).map_err(|e| CliError::format(path, e.to_string()))
}

fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), CliError> {
    write_file(path, ck.to_bytes()?)
}

fn json_line<T: Serialize>(out: &mut String, value: &T) {
    out.push_str(&serde_json::to_string(value).expect("plain struct serializes"));
    out.push('\n');
}

fn relative_csv(rels: &[PoseVector6]) -> String {
    let mut s = String::from("pair,x,y,z,q_x,q_y,q_z\n");
    for (i, r) in rels.iter().enumerate() {
        let a = r.to_array();
        s.push_str(&format!(
            "{i},{},{},{},{},{},{}\n",
            a[0], a[1], a[2], a[3], a[4], a[5]
        ));
    }
    s
}

/// Sorted `*.bin` files of a directory, or the file itself.
fn scan_inputs(input: &Path) -> Result<Vec<PathBuf>, CliError> {
    let meta = fs::metadata(input).map_err(|e| CliError::io(input, e))?;
    if meta.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .map_err(|e| CliError::io(input, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    files.sort();
    Ok(files)
}

fn encode_file(
    path: &Path,
    cfg: &ProjectionConfig,
) -> Result<(DepthImage, ProjectionStats, usize), CliError> {
    let scan = read_velodyne_bin(path)?;
    let (img, stats) =
        project_cloud(&scan.cloud, cfg).map_err(|e| CliError::format(path, e.to_string()))?;
    Ok((img, stats, scan.dropped_non_finite))
}

#[derive(Serialize)]
struct EncodeStats<'a> {
    file: &'a str,
    points: usize,
    dropped_non_finite: usize,
    in_fov: usize,
    out_of_fov: usize,
    in_fov_fraction: f64,
    collisions: usize,
    nonzero_cells: usize,
}

pub fn encode(s: &Settings, input: &Path, out: &Path) -> Result<usize, CliError> {
    let files = scan_inputs(input)?;
    if files.is_empty() {
        eprintln!("warning: no .bin scans under {}", input.display());
        return Ok(0);
    }
    create_dir(out)?;
    let cfg = s.projection();
    let mut stats_text = String::new();
    for path in &files {
        let (img, stats, dropped) = encode_file(path, &cfg)?;
        let stem = path
            .file_stem()
            .map_or("scan".into(), |s| s.to_string_lossy().into_owned());
        let pgm_path = out.join(format!("{stem}.pgm"));
        let mut pgm = Vec::new();
        img.write_pgm(&mut pgm).expect("writing to memory");
        write_file(&pgm_path, pgm)?;
        json_line(
            &mut stats_text,
            &EncodeStats {
                file: &stem,
                points: stats.total,
                dropped_non_finite: dropped,
                in_fov: stats.in_fov,
                out_of_fov: stats.out_of_fov,
                in_fov_fraction: stats.in_fov_fraction(),
                collisions: stats.collisions,
                nonzero_cells: img.nonzero_cells(),
            },
        );
    }
    write_file(&out.join("stats.jsonl"), stats_text)?;
    Ok(files.len())
}

#[derive(Serialize)]
struct PrepStats<'a> {
    sequence: &'a str,
    frames: usize,
    pairs: usize,
    calibrated: bool,
    path_length_m: f64,
    mean_in_fov_fraction: f64,
    min_nonzero_fraction: f64,
}

/// Checks each sequence, encodes every frame and writes relative labels.
pub fn prep(s: &Settings, data: &Path, sequences: &[String], out: &Path) -> Result<(), CliError> {
    let layout = DatasetLayout::new(data);
    let sequences = if sequences.is_empty() {
        layout.sequences()?
    } else {
        sequences.to_vec()
    };
    if sequences.is_empty() {
        eprintln!("warning: no sequences under {}", data.display());
        return Ok(());
    }
    create_dir(out)?;
    let cfg = s.projection();
    let conv = EulerConvention::default();
    let cells = (cfg.width() * cfg.height()) as f64;
    let mut report = String::new();
    for seq in &sequences {
        let files = layout.scan_files(seq)?;
        let poses = read_kitti_poses(&layout.poses_path(seq))?;
        if files.len() != poses.len() {
            return Err(deeppco::kitti::KittiError::LengthMismatch {
                scans: files.len(),
                poses: poses.len(),
            }
            .into());
        }
        let extrinsic = read_calibration(&layout.calib_path(seq))?;
        let (mut fov_sum, mut min_nonzero) = (0.0, f64::INFINITY);
        for f in &files {
            let (img, stats, _) = encode_file(f, &cfg)?;
            fov_sum += stats.in_fov_fraction();
            min_nonzero = min_nonzero.min(img.nonzero_cells() as f64 / cells);
        }
        let labels = poses
            .windows(2)
            .map(|w| relative_label(&w[0], &w[1], extrinsic.as_ref(), conv))
            .collect::<Result<Vec<_>, _>>()?;
        write_file(
            &out.join(format!("{seq}_labels.csv")),
            relative_csv(&labels),
        )?;
        let n = files.len();
        json_line(
            &mut report,
            &PrepStats {
                sequence: seq,
                frames: n,
                pairs: n.saturating_sub(1),
                calibrated: extrinsic.is_some(),
                path_length_m: path_distances(&poses).last().copied().unwrap_or(0.0),
                mean_in_fov_fraction: if n > 0 { fov_sum / n as f64 } else { 0.0 },
                min_nonzero_fraction: if n > 0 { min_nonzero } else { 0.0 },
            },
        );
    }
    write_file(&out.join("prep.jsonl"), &report)?;
    print!("{report}");
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MotionKind {
    /// Independent zero-mean steps.
    Uniform,
    /// Velocity-style random walk within the same bounds.
    RandomWalk,
    /// Straight line, 0.8 m per frame.
    Constant,
}

pub fn sequence_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (index as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

fn motion(kind: MotionKind, seed: u64) -> MotionSpec {
    match kind {
        MotionKind::Uniform => MotionSpec::desk(seed),
        MotionKind::RandomWalk => MotionSpec::desk_random_walk(seed),
        MotionKind::Constant => {
            MotionSpec::Constant(PoseVector6::from_array([0.8, 0.0, 0.0, 0.0, 0.0, 0.0]))
        }
    }
}

fn desk_scene(s: &Settings, seed: u64) -> SceneSpec {
    SceneSpec {
        points_per_frame: s.profile.points_per_frame(),
        ..SceneSpec::desk(seed, s.projection())
    }
}

pub fn synth(
    s: &Settings,
    sequences: &[String],
    frames: usize,
    kind: MotionKind,
    out: &Path,
) -> Result<(), CliError> {
    let layout = DatasetLayout::new(out);
    for (i, seq) in sequences.iter().enumerate() {
        let seed = sequence_seed(s.train.seed, i);
        let generated = generate_sequence(&desk_scene(s, seed), &motion(kind, seed ^ 1), frames)?;
        generated.write_kitti(&layout, seq)?;
        eprintln!("sequence {seq}: {frames} frames, seed {seed}");
    }
    Ok(())
}

/// In-memory synthetic training pairs from one sequence.
pub fn synthetic_pairs(s: &Settings, pairs: usize) -> Result<Vec<SamplePair>, CliError> {
    let seed = sequence_seed(s.train.seed, 0);
    let seq = generate_sequence(
        &desk_scene(s, seed),
        &motion(MotionKind::Uniform, seed ^ 1),
        pairs + 1,
    )?;
    Ok(seq.pairs(&s.projection())?)
}

pub fn load_pairs(
    s: &Settings,
    data: &Path,
    sequences: &[String],
) -> Result<Vec<SamplePair>, CliError> {
    let layout = DatasetLayout::new(data);
    let sequences = if sequences.is_empty() {
        layout.sequences()?
    } else {
        sequences.to_vec()
    };
    let mut pairs = Vec::new();
    for seq in &sequences {
        let stream = PairStream::open(
            &layout,
            seq,
            s.projection(),
            STREAM_WINDOW,
            EulerConvention::default(),
        )?;
        for p in stream {
            pairs.push(p?);
        }
    }
    Ok(pairs)
}

pub enum TrainData<'a> {
    Dataset {
        root: &'a Path,
        sequences: &'a [String],
    },
    Synthetic {
        pairs: usize,
    },
}

pub fn train_cmd(
    s: &Settings,
    data: TrainData,
    resume: Option<&Path>,
    out: &Path,
) -> Result<TrainState, CliError> {
    let pairs = match data {
        TrainData::Dataset { root, sequences } => load_pairs(s, root, sequences)?,
        TrainData::Synthetic { pairs } => synthetic_pairs(s, pairs)?,
    };
    create_dir(out)?;
    write_file(&out.join("run_config.txt"), s.to_text())?;
    let expected = s.model_config();
    let (mut model, state) = match resume {
        Some(path) => {
            let ck = read_checkpoint(path)?;
            if ck.digest != expected.digest() {
                return Err(deeppco::network::NetworkError::DigestMismatch {
                    expected: hex::encode(expected.digest()),
                    found: hex::encode(ck.digest),
                }
                .into());
            }
            let (model, state) = load_training_checkpoint(&ck)?;
            (model, Some(state))
        }
        None => (DeepPcoModel::new(expected, s.train.seed)?, None),
    };
    eprintln!(
        "training on {} pairs, {} parameters",
        pairs.len(),
        model.params().scalar_count()
    );
    let mut log = |e: &EpochSummary| {
        eprintln!(
            "epoch {:>3} lr {:.3e} loss {:.6} (translation {:.6}, orientation {:.6})",
            e.epoch, e.lr, e.loss.total, e.loss.translation_subnet, e.loss.orientation_subnet
        );
    };
    let opts = TrainOptions {
        checkpoint_dir: Some(out),
        resume: state,
        on_epoch: Some(&mut log),
    };
    let state = train(&mut model, &pairs, &s.train, opts)?;
    write_checkpoint(
        &out.join("model.ckpt"),
        &training_checkpoint(&model, &state),
    )?;
    write_file(&out.join("loss.csv"), state.history.to_csv())?;
    Ok(state)
}

/// Loads a checkpoint, checking it against the settings when the
/// architecture was given explicitly.
pub fn load_model(s: &Settings, path: &Path) -> Result<DeepPcoModel, CliError> {
    let ck = read_checkpoint(path)?;
    if s.architecture_explicit {
        let expected = s.model_config();
        let mut model = DeepPcoModel::new(expected, 0)?;
        ck.restore_into(&mut model)?;
        return Ok(model);
    }
    Ok(ck.to_model()?)
}

pub struct InferOutput {
    pub relative: Vec<PoseVector6>,
    pub trajectory: Vec<Pose>,
}

pub fn infer(
    s: &Settings,
    model_path: &Path,
    data: &Path,
    sequence: &str,
    out: &Path,
) -> Result<InferOutput, CliError> {
    let model = load_model(s, model_path)?;
    let (h, w) = model.config().input_size();
    let cfg = s.projection();
    if (cfg.height(), cfg.width()) != (h, w) {
        return Err(CliError::Usage(format!(
            "checkpoint expects {h} x {w} images but profile {} encodes {} x {}; pass the matching --profile",
            s.profile.name(),
            cfg.height(),
            cfg.width()
        )));
    }
    let layout = DatasetLayout::new(data);
    let files = layout.scan_files(sequence)?;
    if files.len() < 2 {
        return Err(deeppco::kitti::KittiError::TooFewFrames(files.len()).into());
    }
    let poses_path = layout.poses_path(sequence);
    let gt = if poses_path.exists() {
        Some(read_kitti_poses(&poses_path)?)
    } else {
        None
    };
    let extrinsic = read_calibration(&layout.calib_path(sequence))?;

    let mut relative = Vec::with_capacity(files.len() - 1);
    let mut prev = encode_file(&files[0], &cfg)?.0;
    for f in &files[1..] {
        let next = encode_file(f, &cfg)?.0;
        let input = stack_pair(&prev, &next)?;
        relative.push(model.predict(&input)?.fused);
        prev = next;
    }

    // predictions live in the scan frame; trajectories in the pose-file frame
    let conv = EulerConvention::default();
    let start = gt.as_ref().map_or(Pose::identity(), |g| g[0]);
    let mut trajectory = vec![start];
    for r in &relative {
        let mut step = vec6_to_pose(r, conv);
        if let Some(tr) = &extrinsic {
            step = compose(&compose(tr, &step), &invert(tr));
        }
        trajectory.push(compose(trajectory.last().unwrap(), &step));
    }

    create_dir(out)?;
    write_file(
        &out.join(format!("{sequence}_relative.csv")),
        relative_csv(&relative),
    )?;
    write_kitti_trajectory(&out.join(format!("{sequence}.txt")), &trajectory)?;
    if let Some(gt) = &gt {
        if gt.len() == trajectory.len() {
            let labels = gt
                .windows(2)
                .map(|w| relative_label(&w[0], &w[1], extrinsic.as_ref(), conv))
                .collect::<Result<Vec<_>, _>>()?;
            let report = rmse_relative(&relative, &labels)?;
            print!("{}", format_rmse_table(&[(sequence, &report)]));
        }
    }
    Ok(InferOutput {
        relative,
        trajectory,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Table,
    Csv,
}

/// Relative 6-vectors of consecutive poses; gimbal-locked steps use the
/// tie-broken decomposition.
fn relative_vectors(traj: &[Pose]) -> Result<Vec<PoseVector6>, CliError> {
    let conv = EulerConvention::default();
    Ok(relative_poses(traj)
        .iter()
        .map(|r| pose_to_vec6_lenient(r, conv).map(|v| v.0))
        .collect::<Result<_, _>>()?)
}

pub fn eval_cmd(
    pred_path: &Path,
    gt_path: &Path,
    name: Option<&str>,
    format: ReportFormat,
    out: Option<&Path>,
) -> Result<String, CliError> {
    let pred = read_kitti_poses(pred_path)?;
    let gt = read_kitti_poses(gt_path)?;
    if pred.len() != gt.len() {
        return Err(CliError::format(
            pred_path,
            format!(
                "{} poses but ground truth {} has {}",
                pred.len(),
                gt_path.display(),
                gt.len()
            ),
        ));
    }
    let name = name.map(str::to_string).unwrap_or_else(|| {
        gt_path
            .file_stem()
            .map_or("sequence".into(), |s| s.to_string_lossy().into_owned())
    });
    let rmse = rmse_relative(&relative_vectors(&pred)?, &relative_vectors(&gt)?)?;
    let drift = match kitti_drift(&pred, &gt) {
        Ok(d) => Some(d),
        Err(EvalError::TrajectoryTooShort { path_length }) => {
            eprintln!("note: drift skipped, ground-truth path is {path_length:.1} m");
            None
        }
        Err(e) => return Err(e.into()),
    };
    let rmse_rows = [(name.as_str(), &rmse)];
    let mut report = match format {
        ReportFormat::Table => format_rmse_table(&rmse_rows),
        ReportFormat::Csv => format_rmse_csv(&rmse_rows),
    };
    if let Some(d) = &drift {
        let rows = [(name.as_str(), d)];
        report.push('\n');
        report.push_str(&match format {
            ReportFormat::Table => format_drift_table(&rows),
            ReportFormat::Csv => format_drift_csv(&rows),
        });
    }
    if let Some(out) = out {
        create_dir(out)?;
        write_file(&out.join("rmse.csv"), format_rmse_csv(&rmse_rows))?;
        if let Some(d) = &drift {
            write_file(
                &out.join("drift.csv"),
                format_drift_csv(&[(name.as_str(), d)]),
            )?;
        }
        write_file(&out.join(format!("{name}_pred.csv")), trajectory_csv(&pred))?;
        export_trajectory_svg(&out.join(format!("{name}.svg")), &pred, &gt)?;
    }
    Ok(report)
}

/// Flushes stdout, ignoring a closed pipe.
pub fn flush_stdout() {
    let _ = std::io::stdout().flush();
}
