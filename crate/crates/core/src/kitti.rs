//! KITTI odometry ingestion: Velodyne scans, ground-truth poses, calibration,
//! and the consecutive-frame training pairs built from them.
//!
//! On-disk layout (directory names configurable through [`DatasetLayout`]):
//!
//! ```text
//! <root>/sequences/<id>/velodyne/<frame>.bin   f32 LE (x, y, z, intensity) × N
//! <root>/sequences/<id>/calib.txt              optional, `Tr:` line = velodyne→camera
//! <root>/poses/<id>.txt                        12 reals per line, row-major [R|t]
//! ```

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rayon::prelude::*;
use thiserror::Error;

use crate::encoding::{
    project_cloud, stack_pair, DepthImage, EncodeError, FramePairInput, PointCloud,
    ProjectionConfig,
};
use crate::pose::{
    compose, invert, pose_to_vec6_lenient, relative_pose, EulerConvention, Pose, PoseError,
    PoseVector6,
};

/// Rotation blocks read from text may drift this far from orthonormal before
/// the line is rejected; anything past 1e-9 is re-orthonormalized.
pub const POSE_FILE_ORTHONORMAL_TOL: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum KittiError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: size {len} bytes is not a multiple of 16")]
    TruncatedFile { path: PathBuf, len: usize },
    #[error("{path}:{line}: {reason}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{scans} scans but {poses} poses")]
    LengthMismatch { scans: usize, poses: usize },
    #[error("need at least two frames to form a pair, got {0}")]
    TooFewFrames(usize),
    #[error("sequence {0} appears in both train and test splits")]
    OverlappingSplit(String),
    #[error("frame {frame}: {source}")]
    Encode { frame: usize, source: EncodeError },
    #[error(transparent)]
    Pose(#[from] PoseError),
}

impl KittiError {
    fn io(path: &Path, source: io::Error) -> Self {
        KittiError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// I/O failures as opposed to malformed content.
    pub fn is_io(&self) -> bool {
        matches!(self, KittiError::Io { .. })
    }
}

/// Parsed Velodyne scan plus the number of non-finite points dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct VelodyneScan {
    pub cloud: PointCloud,
    pub dropped_non_finite: usize,
}

pub fn parse_velodyne(bytes: &[u8], path: &Path) -> Result<VelodyneScan, KittiError> {
    if !bytes.len().is_multiple_of(16) {
        return Err(KittiError::TruncatedFile {
            path: path.to_path_buf(),
            len: bytes.len(),
        });
    }
    let mut points = Vec::with_capacity(bytes.len() / 16);
    let mut intensity = Vec::with_capacity(bytes.len() / 16);
    let mut dropped = 0;
    for rec in bytes.chunks_exact(16) {
        let f = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().unwrap());
        let (x, y, z, w) = (f(0), f(1), f(2), f(3));
        if !(x.is_finite() && y.is_finite() && z.is_finite() && w.is_finite()) {
            dropped += 1;
            continue;
        }
        points.push(Vector3::new(x as f64, y as f64, z as f64));
        intensity.push(w);
    }
    let cloud =
        PointCloud::with_intensity(points, intensity).expect("finite points, matching intensity");
    Ok(VelodyneScan {
        cloud,
        dropped_non_finite: dropped,
    })
}

pub fn read_velodyne_bin(path: &Path) -> Result<VelodyneScan, KittiError> {
    let bytes = fs::read(path).map_err(|e| KittiError::io(path, e))?;
    parse_velodyne(&bytes, path)
}

/// Encodes points as f32 quadruples; intensity defaults to 0.
pub fn write_velodyne_bin(path: &Path, cloud: &PointCloud) -> Result<(), KittiError> {
    let mut buf = Vec::with_capacity(cloud.len() * 16);
    for (i, p) in cloud.points().iter().enumerate() {
        let w = cloud.intensity().map_or(0.0, |v| v[i]);
        for v in [p.x as f32, p.y as f32, p.z as f32, w] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| KittiError::io(path, e))
}

fn parse_row12(line: &str) -> Result<[f64; 12], String> {
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| format!("`{t}` is not a number"))
        })
        .collect::<Result<_, _>>()?;
    let arr: [f64; 12] = vals
        .as_slice()
        .try_into()
        .map_err(|_| format!("expected 12 values, found {}", vals.len()))?;
    if arr.iter().any(|v| !v.is_finite()) {
        return Err("non-finite value".into());
    }
    Ok(arr)
}

fn pose_from_row(row: &[f64; 12]) -> Result<Pose, String> {
    let strict = Pose::from_row_major_3x4(row);
    match strict {
        Ok(p) => Ok(p),
        Err(PoseError::NotOrthonormal { deviation }) if deviation <= POSE_FILE_ORTHONORMAL_TOL => {
            let r = nalgebra::Matrix3::new(
                row[0], row[1], row[2], row[4], row[5], row[6], row[8], row[9], row[10],
            );
            let r = crate::pose::orthonormalize(&r);
            Pose::new(r, Vector3::new(row[3], row[7], row[11])).map_err(|e| e.to_string())
        }
        Err(e) => Err(e.to_string()),
    }
}

/// Parses pose-file text. Blank lines are skipped; line numbers are 1-based.
pub fn parse_kitti_poses(text: &str, path: &Path) -> Result<Vec<Pose>, KittiError> {
    let mut poses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| KittiError::MalformedLine {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let row = parse_row12(line).map_err(malformed)?;
        poses.push(pose_from_row(&row).map_err(malformed)?);
    }
    Ok(poses)
}

pub fn read_kitti_poses(path: &Path) -> Result<Vec<Pose>, KittiError> {
    let text = fs::read_to_string(path).map_err(|e| KittiError::io(path, e))?;
    parse_kitti_poses(&text, path)
}

/// One line per pose, shortest round-trip decimal form.
pub fn format_kitti_trajectory(traj: &[Pose]) -> String {
    let mut s = String::new();
    for pose in traj {
        let row = pose.to_row_major_3x4();
        let line: Vec<String> = row
            .iter()
            .map(|v| format!("{}", if *v == 0.0 { 0.0 } else { *v }))
            .collect();
        writeln!(s, "{}", line.join(" ")).unwrap();
    }
    s
}

pub fn write_kitti_trajectory(path: &Path, traj: &[Pose]) -> Result<(), KittiError> {
    let mut f = fs::File::create(path).map_err(|e| KittiError::io(path, e))?;
    f.write_all(format_kitti_trajectory(traj).as_bytes())
        .map_err(|e| KittiError::io(path, e))
}

/// Velodyne→camera extrinsic from a KITTI `calib.txt` (`Tr:` line).
pub fn read_calibration(path: &Path) -> Result<Option<Pose>, KittiError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(KittiError::io(path, e)),
    };
    for (i, line) in text.lines().enumerate() {
        if let Some(rest) = line.strip_prefix("Tr:") {
            let malformed = |reason: String| KittiError::MalformedLine {
                path: path.to_path_buf(),
                line: i + 1,
                reason,
            };
            let row = parse_row12(rest).map_err(malformed)?;
            return pose_from_row(&row).map(Some).map_err(malformed);
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    train: Vec<String>,
    test: Vec<String>,
}

impl SplitSpec {
    pub fn new(train: Vec<String>, test: Vec<String>) -> Result<Self, KittiError> {
        let train_set: BTreeSet<&String> = train.iter().collect();
        if let Some(dup) = test.iter().find(|s| train_set.contains(s)) {
            return Err(KittiError::OverlappingSplit(dup.clone()));
        }
        Ok(Self { train, test })
    }

    /// Sequences 00–03 and 05–09 for training, 04 and 10 for testing.
    pub fn kitti_default() -> Self {
        let ids = |v: &[u32]| v.iter().map(|i| format!("{i:02}")).collect();
        Self::new(ids(&[0, 1, 2, 3, 5, 6, 7, 8, 9]), ids(&[4, 10])).expect("disjoint")
    }

    pub fn train(&self) -> &[String] {
        &self.train
    }

    pub fn test(&self) -> &[String] {
        &self.test
    }
}

/// Paths of a dataset rooted at `root`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetLayout {
    pub root: PathBuf,
    pub sequences_dir: String,
    pub velodyne_dir: String,
    pub poses_dir: String,
}

impl DatasetLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            sequences_dir: "sequences".into(),
            velodyne_dir: "velodyne".into(),
            poses_dir: "poses".into(),
        }
    }

    pub fn velodyne_dir(&self, seq: &str) -> PathBuf {
        self.root
            .join(&self.sequences_dir)
            .join(seq)
            .join(&self.velodyne_dir)
    }

    pub fn scan_path(&self, seq: &str, frame: usize) -> PathBuf {
        self.velodyne_dir(seq).join(format!("{frame:06}.bin"))
    }

    pub fn calib_path(&self, seq: &str) -> PathBuf {
        self.root
            .join(&self.sequences_dir)
            .join(seq)
            .join("calib.txt")
    }

    pub fn poses_path(&self, seq: &str) -> PathBuf {
        self.root.join(&self.poses_dir).join(format!("{seq}.txt"))
    }

    /// Scan files of a sequence in frame order.
    pub fn scan_files(&self, seq: &str) -> Result<Vec<PathBuf>, KittiError> {
        let dir = self.velodyne_dir(seq);
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| KittiError::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "bin"))
            .collect();
        files.sort();
        Ok(files)
    }

    /// Sequence ids present under the sequences directory.
    pub fn sequences(&self) -> Result<Vec<String>, KittiError> {
        let dir = self.root.join(&self.sequences_dir);
        let mut ids: Vec<String> = fs::read_dir(&dir)
            .map_err(|e| KittiError::io(&dir, e))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        ids.sort();
        Ok(ids)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanRecord {
    pub sequence: String,
    pub frame: usize,
    pub cloud: PointCloud,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub input: FramePairInput,
    pub label: PoseVector6,
}

/// Ground-truth relative motion between two absolute poses, expressed in the
/// sensor frame when a sensor→reference `extrinsic` is given.
pub fn relative_label(
    from: &Pose,
    to: &Pose,
    extrinsic: Option<&Pose>,
    conv: EulerConvention,
) -> Result<PoseVector6, KittiError> {
    let rel = relative_pose(from, to);
    let rel = match extrinsic {
        Some(tr) => compose(&compose(&invert(tr), &rel), tr),
        None => rel,
    };
    Ok(pose_to_vec6_lenient(&rel, conv)?.0)
}

fn encode(
    cloud: &PointCloud,
    frame: usize,
    cfg: &ProjectionConfig,
) -> Result<DepthImage, KittiError> {
    project_cloud(cloud, cfg)
        .map(|(img, _)| img)
        .map_err(|source| KittiError::Encode { frame, source })
}

/// Builds `N − 1` pairs from `N` frames; pair `i` covers frames `i → i + 1`.
pub fn build_pairs(
    scans: &[ScanRecord],
    poses: &[Pose],
    cfg: &ProjectionConfig,
    extrinsic: Option<&Pose>,
    conv: EulerConvention,
) -> Result<Vec<SamplePair>, KittiError> {
    if scans.len() != poses.len() {
        return Err(KittiError::LengthMismatch {
            scans: scans.len(),
            poses: poses.len(),
        });
    }
    if scans.len() < 2 {
        return Err(KittiError::TooFewFrames(scans.len()));
    }
    let images: Vec<DepthImage> = scans
        .par_iter()
        .map(|s| encode(&s.cloud, s.frame, cfg))
        .collect::<Result<_, _>>()?;
    images
        .windows(2)
        .zip(poses.windows(2))
        .map(|(img, pose)| {
            Ok(SamplePair {
                input: stack_pair(&img[0], &img[1]).expect("same config"),
                label: relative_label(&pose[0], &pose[1], extrinsic, conv)?,
            })
        })
        .collect()
}

/// Lazily reads and encodes a sequence from disk, holding at most `window`
/// encoded frames ahead of the consumer. Frames inside a window are read and
/// encoded concurrently; output order is always frame order.
pub struct PairStream {
    files: Vec<PathBuf>,
    poses: Vec<Pose>,
    cfg: ProjectionConfig,
    extrinsic: Option<Pose>,
    conv: EulerConvention,
    window: usize,
    next_to_load: usize,
    ready: VecDeque<(usize, DepthImage)>,
    previous: Option<(usize, DepthImage)>,
    failed: bool,
}

impl PairStream {
    pub fn open(
        layout: &DatasetLayout,
        seq: &str,
        cfg: ProjectionConfig,
        window: usize,
        conv: EulerConvention,
    ) -> Result<Self, KittiError> {
        let files = layout.scan_files(seq)?;
        let poses = read_kitti_poses(&layout.poses_path(seq))?;
        if files.len() != poses.len() {
            return Err(KittiError::LengthMismatch {
                scans: files.len(),
                poses: poses.len(),
            });
        }
        if files.len() < 2 {
            return Err(KittiError::TooFewFrames(files.len()));
        }
        let extrinsic = read_calibration(&layout.calib_path(seq))?;
        Ok(Self {
            files,
            poses,
            cfg,
            extrinsic,
            conv,
            window: window.max(1),
            next_to_load: 0,
            ready: VecDeque::new(),
            previous: None,
            failed: false,
        })
    }

    pub fn pair_count(&self) -> usize {
        self.files.len() - 1
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn extrinsic(&self) -> Option<&Pose> {
        self.extrinsic.as_ref()
    }

    fn refill(&mut self) -> Result<(), KittiError> {
        let end = (self.next_to_load + self.window).min(self.files.len());
        let cfg = self.cfg;
        let loaded: Vec<(usize, DepthImage)> = (self.next_to_load..end)
            .into_par_iter()
            .map(|i| {
                let scan = read_velodyne_bin(&self.files[i])?;
                Ok((i, encode(&scan.cloud, i, &cfg)?))
            })
            .collect::<Result<_, KittiError>>()?;
        self.next_to_load = end;
        self.ready.extend(loaded);
        Ok(())
    }

    fn next_frame(&mut self) -> Option<Result<(usize, DepthImage), KittiError>> {
        if self.ready.is_empty() && self.next_to_load < self.files.len() {
            if let Err(e) = self.refill() {
                return Some(Err(e));
            }
        }
        self.ready.pop_front().map(Ok)
    }
}

impl Iterator for PairStream {
    type Item = Result<SamplePair, KittiError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let step = (|| {
            if self.previous.is_none() {
                match self.next_frame()? {
                    Ok(f) => self.previous = Some(f),
                    Err(e) => return Some(Err(e)),
                }
            }
            let (j, curr) = match self.next_frame()? {
                Ok(f) => f,
                Err(e) => return Some(Err(e)),
            };
            let (i, prev) = self
                .previous
                .replace((j, curr.clone()))
                .expect("previous frame loaded");
            let label = relative_label(
                &self.poses[i],
                &self.poses[j],
                self.extrinsic.as_ref(),
                self.conv,
            );
            Some(label.map(|label| SamplePair {
                input: stack_pair(&prev, &curr).expect("same config"),
                label,
            }))
        })();
        if matches!(step, Some(Err(_))) {
            self.failed = true;
        }
        step
    }
}
