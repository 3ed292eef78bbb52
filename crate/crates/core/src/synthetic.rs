//! Synthetic lidar sequences under known rigid motion.
//!
//! A scene is a set of surfaces in the world frame: a ground plane plus boxes
//! and upright cylinders. Each frame samples `points_per_frame` points
//! uniformly by area over those surfaces (the ground only inside a square
//! window centred under the sensor), expresses them in the sensor frame, and
//! perturbs each point along its ray by Gaussian range noise.
//!
//! Surface sampling draws from the same seed for every frame, so frames at
//! the same pose produce identical pre-noise scans and points on objects are
//! the same world points from frame to frame. Noise uses a per-frame seed.

use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::encoding::{project_point, PointCloud, ProjectionConfig};
use crate::kitti::{
    build_pairs, write_kitti_trajectory, write_velodyne_bin, DatasetLayout, KittiError, SamplePair,
    ScanRecord,
};
use crate::pose::{compose, invert, vec6_to_pose, EulerConvention, Pose, PoseVector6};

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("frame {0}: no generated point falls inside the field of view")]
    DegenerateScene(usize),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid motion: {0}")]
    InvalidMotion(String),
    #[error("need at least two frames, got {0}")]
    TooFewFrames(usize),
    #[error(transparent)]
    Kitti(#[from] KittiError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    /// Horizontal plane `z = height`, sampled in a `2·half_window` square under the sensor.
    Ground { height: f64, half_window: f64 },
    /// Box resting on its bottom face; side and top faces are sampled.
    Box {
        center: Vector3<f64>,
        half_extents: Vector3<f64>,
        yaw: f64,
    },
    /// Upright cylinder; only the lateral surface is sampled.
    Cylinder {
        base: Vector3<f64>,
        radius: f64,
        height: f64,
    },
}

impl Primitive {
    fn area(&self) -> f64 {
        match self {
            Primitive::Ground { half_window, .. } => 4.0 * half_window * half_window,
            Primitive::Box {
                half_extents: e, ..
            } => 8.0 * e.z * (e.x + e.y) + 4.0 * e.x * e.y,
            Primitive::Cylinder { radius, height, .. } => std::f64::consts::TAU * radius * height,
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R, sensor_xy: (f64, f64)) -> Vector3<f64> {
        match self {
            Primitive::Ground {
                height,
                half_window,
            } => Vector3::new(
                sensor_xy.0 + rng.random_range(-half_window..*half_window),
                sensor_xy.1 + rng.random_range(-half_window..*half_window),
                *height,
            ),
            Primitive::Box {
                center,
                half_extents: e,
                yaw,
            } => {
                let (side_x, side_y, top) = (4.0 * e.y * e.z, 4.0 * e.x * e.z, 4.0 * e.x * e.y);
                let pick = rng.random_range(0.0..2.0 * (side_x + side_y) + top);
                let (u, v) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let local = if pick < 2.0 * side_x {
                    Vector3::new(sign * e.x, u * e.y, v * e.z)
                } else if pick < 2.0 * (side_x + side_y) {
                    Vector3::new(u * e.x, sign * e.y, v * e.z)
                } else {
                    Vector3::new(u * e.x, v * e.y, e.z)
                };
                let (s, c) = yaw.sin_cos();
                center
                    + Vector3::new(
                        c * local.x - s * local.y,
                        s * local.x + c * local.y,
                        local.z,
                    )
            }
            Primitive::Cylinder {
                base,
                radius,
                height,
            } => {
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                base + Vector3::new(
                    radius * a.cos(),
                    radius * a.sin(),
                    rng.random_range(0.0..*height),
                )
            }
        }
    }

    /// Distance along the unit ray `o + t·d` to the first hit with `t > 0`.
    fn raycast(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        const EPS: f64 = 1e-9;
        match self {
            Primitive::Ground { height, .. } => {
                let t = (height - o.z) / d.z;
                (d.z < 0.0 && t > EPS).then_some(t)
            }
            Primitive::Box {
                center,
                half_extents: e,
                yaw,
            } => {
                let (s, c) = yaw.sin_cos();
                let rel = o - center;
                let lo = Vector3::new(c * rel.x + s * rel.y, -s * rel.x + c * rel.y, rel.z);
                let ld = Vector3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z);
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                for k in 0..3 {
                    if ld[k].abs() < 1e-15 {
                        if lo[k].abs() > e[k] {
                            return None;
                        }
                        continue;
                    }
                    let (a, b) = ((-e[k] - lo[k]) / ld[k], (e[k] - lo[k]) / ld[k]);
                    t0 = t0.max(a.min(b));
                    t1 = t1.min(a.max(b));
                }
                if t0 > t1 || t1 <= EPS {
                    None
                } else if t0 > EPS {
                    Some(t0)
                } else {
                    Some(t1)
                }
            }
            Primitive::Cylinder {
                base,
                radius,
                height,
            } => {
                let (ox, oy) = (o.x - base.x, o.y - base.y);
                let a = d.x * d.x + d.y * d.y;
                if a < 1e-15 {
                    return None;
                }
                let b = 2.0 * (ox * d.x + oy * d.y);
                let c = ox * ox + oy * oy - radius * radius;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)]
                    .into_iter()
                    .find(|&t| {
                        let z = o.z + t * d.z;
                        t > EPS && z >= base.z && z <= base.z + height
                    })
            }
        }
    }

    fn validate(&self) -> Result<(), SyntheticError> {
        let ok = match self {
            Primitive::Ground {
                height,
                half_window,
            } => height.is_finite() && *half_window > 0.0,
            Primitive::Box {
                center,
                half_extents,
                yaw,
            } => {
                center.iter().all(|v| v.is_finite())
                    && half_extents.iter().all(|v| *v > 0.0)
                    && yaw.is_finite()
            }
            Primitive::Cylinder {
                base,
                radius,
                height,
            } => base.iter().all(|v| v.is_finite()) && *radius > 0.0 && *height > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(SyntheticError::InvalidScene(format!("{self:?}")))
        }
    }
}

/// How a frame's points are placed on the scene surfaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// Uniform by surface area; hidden surfaces are sampled too.
    Area,
    /// Fixed beams in the sensor frame, `elevations` rows evenly spread over
    /// the field of view and `points_per_frame / elevations` azimuth steps;
    /// each beam returns its first hit. The ground plane is unbounded here.
    Beams { elevations: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    pub sampling: Sampling,
    pub points_per_frame: usize,
    /// Standard deviation of the range noise, meters.
    pub range_noise: f64,
    pub seed: u64,
    /// Field of view and `d_max`; points beyond `d_max` are discarded.
    pub projection: ProjectionConfig,
}

impl SceneSpec {
    /// Ground 1.73 m below the sensor with boxes and cylinders scattered in
    /// a ring 6–24 m around the origin, 2,000 points per frame.
    pub fn desk(seed: u64, projection: ProjectionConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD35C);
        let ground = -1.73;
        let mut primitives = vec![Primitive::Ground {
            height: ground,
            half_window: 12.0,
        }];
        let objects = 28;
        for i in 0..objects {
            let a =
                std::f64::consts::TAU * (i as f64 + rng.random_range(0.0..0.8)) / objects as f64;
            let r = rng.random_range(6.0..24.0);
            let h = rng.random_range(1.5..6.0);
            if i % 3 == 2 {
                primitives.push(Primitive::Cylinder {
                    base: Vector3::new(r * a.cos(), r * a.sin(), ground),
                    radius: rng.random_range(0.3..1.5),
                    height: h,
                });
            } else {
                primitives.push(Primitive::Box {
                    center: Vector3::new(r * a.cos(), r * a.sin(), ground + h / 2.0),
                    half_extents: Vector3::new(
                        rng.random_range(0.5..3.0),
                        rng.random_range(0.5..3.0),
                        h / 2.0,
                    ),
                    yaw: rng.random_range(0.0..std::f64::consts::PI),
                });
            }
        }
        Self {
            primitives,
            sampling: Sampling::Area,
            points_per_frame: 2000,
            range_noise: 0.02,
            seed,
            projection,
        }
    }

    pub fn validate(&self) -> Result<(), SyntheticError> {
        if let Sampling::Beams { elevations } = self.sampling {
            if elevations == 0 || elevations > self.points_per_frame {
                return Err(SyntheticError::InvalidScene(
                    "beam rows must be between 1 and the point count".into(),
                ));
            }
        }
        if self.primitives.is_empty() || self.points_per_frame == 0 {
            return Err(SyntheticError::InvalidScene(
                "scene needs primitives and a positive point count".into(),
            ));
        }
        if !(self.range_noise.is_finite() && self.range_noise >= 0.0) {
            return Err(SyntheticError::InvalidScene(
                "range noise must be non-negative".into(),
            ));
        }
        self.primitives.iter().try_for_each(Primitive::validate)
    }

    /// Pre-noise world points for a sensor at `sensor`.
    fn sample_world(&self, sensor: &Pose) -> Vec<Vector3<f64>> {
        match self.sampling {
            Sampling::Area => self.sample_area(sensor),
            Sampling::Beams { elevations } => self.cast_beams(sensor, elevations),
        }
    }

    fn cast_beams(&self, sensor: &Pose, elevations: usize) -> Vec<Vector3<f64>> {
        let azimuths = self.points_per_frame / elevations;
        let (lo, hi) = (self.projection.phi_min(), self.projection.phi_max());
        let origin = *sensor.translation();
        let d_max = self.projection.d_max();
        let mut out = Vec::with_capacity(azimuths * elevations);
        for e in 0..elevations {
            let phi = lo + (e as f64 + 0.5) * (hi - lo) / elevations as f64;
            for a in 0..azimuths {
                let theta = std::f64::consts::TAU * (a as f64 + 0.5) / azimuths as f64;
                let local =
                    Vector3::new(phi.cos() * theta.cos(), phi.cos() * theta.sin(), phi.sin());
                let dir = sensor.rotation() * local;
                let hit = self
                    .primitives
                    .iter()
                    .filter_map(|p| p.raycast(&origin, &dir))
                    .fold(f64::INFINITY, f64::min);
                if hit <= d_max {
                    out.push(origin + dir * hit);
                }
            }
        }
        out
    }

    fn sample_area(&self, sensor: &Pose) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let areas: Vec<f64> = self.primitives.iter().map(Primitive::area).collect();
        let total: f64 = areas.iter().sum();
        let xy = (sensor.translation().x, sensor.translation().y);
        (0..self.points_per_frame)
            .map(|_| {
                let mut pick = rng.random_range(0.0..total);
                let mut idx = 0;
                while idx + 1 < areas.len() && pick >= areas[idx] {
                    pick -= areas[idx];
                    idx += 1;
                }
                self.primitives[idx].sample(&mut rng, xy)
            })
            .collect()
    }

    /// Scan seen from `sensor`: points in the sensor frame within `d_max`,
    /// with range noise drawn from `noise_seed`.
    pub fn scan(&self, sensor: &Pose, noise_seed: u64) -> Vec<Vector3<f64>> {
        let to_sensor = invert(sensor);
        let d_max = self.projection.d_max();
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let noise = Normal::new(0.0, self.range_noise.max(f64::MIN_POSITIVE)).expect("valid sigma");
        self.sample_world(sensor)
            .into_iter()
            .map(|w| to_sensor.transform_point(&w))
            .filter_map(|p| {
                let d = p.norm();
                let n = if self.range_noise > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                let d_noisy = d + n;
                (d > 1e-6 && d_noisy > 1e-6 && d_noisy <= d_max).then(|| p * (d_noisy / d))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MotionSpec {
    Constant(PoseVector6),
    /// `offset + amplitude ⊙ sin(2π i / period)`, component-wise.
    Sinusoidal {
        offset: PoseVector6,
        amplitude: PoseVector6,
        period: f64,
    },
    /// Each step is the previous one plus uniform jitter in `±jitter`,
    /// clamped component-wise to `[lower, upper]`.
    RandomWalk {
        start: PoseVector6,
        jitter: [f64; 6],
        lower: [f64; 6],
        upper: [f64; 6],
        seed: u64,
    },
    /// Independent steps drawn uniformly from `[lower, upper]` component-wise.
    Uniform {
        lower: [f64; 6],
        upper: [f64; 6],
        seed: u64,
    },
}

impl MotionSpec {
    pub fn steps(&self, n: usize) -> Result<Vec<PoseVector6>, SyntheticError> {
        let steps: Vec<PoseVector6> = match self {
            MotionSpec::Constant(s) => vec![*s; n],
            MotionSpec::Sinusoidal {
                offset,
                amplitude,
                period,
            } => {
                if !(period.is_finite() && *period > 0.0) {
                    return Err(SyntheticError::InvalidMotion(
                        "period must be positive".into(),
                    ));
                }
                let (o, a) = (offset.to_array(), amplitude.to_array());
                (0..n)
                    .map(|i| {
                        let s = (std::f64::consts::TAU * i as f64 / period).sin();
                        PoseVector6::from_array(std::array::from_fn(|k| o[k] + a[k] * s))
                    })
                    .collect()
            }
            MotionSpec::RandomWalk {
                start,
                jitter,
                lower,
                upper,
                seed,
            } => {
                if (0..6).any(|k| lower[k] > upper[k] || jitter[k] < 0.0) {
                    return Err(SyntheticError::InvalidMotion(
                        "random-walk bounds are inconsistent".into(),
                    ));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let mut cur = start.to_array();
                let mut out = Vec::with_capacity(n);
                for _ in 0..n {
                    for k in 0..6 {
                        let j = if jitter[k] > 0.0 {
                            rng.random_range(-jitter[k]..=jitter[k])
                        } else {
                            0.0
                        };
                        cur[k] = (cur[k] + j).clamp(lower[k], upper[k]);
                    }
                    out.push(PoseVector6::from_array(cur));
                }
                out
            }
            MotionSpec::Uniform { lower, upper, seed } => {
                if (0..6).any(|k| lower[k] > upper[k]) {
                    return Err(SyntheticError::InvalidMotion(
                        "uniform bounds are inconsistent".into(),
                    ));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                (0..n)
                    .map(|_| {
                        PoseVector6::from_array(std::array::from_fn(|k| {
                            if lower[k] < upper[k] {
                                rng.random_range(lower[k]..=upper[k])
                            } else {
                                lower[k]
                            }
                        }))
                    })
                    .collect()
            }
        };
        for (i, s) in steps.iter().enumerate() {
            if !s.to_array().iter().all(|v| v.is_finite()) {
                return Err(SyntheticError::InvalidMotion(format!(
                    "step {i} is not finite"
                )));
            }
            let angle = vec6_to_pose(s, EulerConvention::ZYX_INTRINSIC).rotation_angle();
            if angle >= std::f64::consts::FRAC_PI_4 {
                return Err(SyntheticError::InvalidMotion(format!(
                    "step {i} rotates {angle:.3} rad, limit is pi/4"
                )));
            }
        }
        Ok(steps)
    }

    /// Independent zero-mean steps: mostly planar motion with a little
    /// heave, roll and pitch. Accumulated attitude stays small over a few
    /// hundred frames.
    pub fn desk(seed: u64) -> Self {
        let upper = [0.9, 0.3, 0.05, 0.01, 0.01, 0.12];
        MotionSpec::Uniform {
            lower: upper.map(|v| -v),
            upper,
            seed,
        }
    }

    /// Velocity-style random walk with the same bounds as [`MotionSpec::desk`].
    pub fn desk_random_walk(seed: u64) -> Self {
        let upper = [0.9, 0.3, 0.05, 0.01, 0.01, 0.12];
        MotionSpec::RandomWalk {
            start: PoseVector6::zeros(),
            jitter: upper.map(|v| 0.5 * v),
            lower: upper.map(|v| -v),
            upper,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSequence {
    pub scans: Vec<PointCloud>,
    /// Absolute sensor poses, `poses[0]` at the identity.
    pub poses: Vec<Pose>,
    /// Motion steps; `labels[i]` is the relative pose from frame `i` to `i + 1`.
    pub labels: Vec<PoseVector6>,
}

fn frame_noise_seed(seed: u64, frame: usize) -> u64 {
    seed.rotate_left(17) ^ (frame as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xA5A5
}

pub fn generate_sequence(
    scene: &SceneSpec,
    motion: &MotionSpec,
    n_frames: usize,
) -> Result<SyntheticSequence, SyntheticError> {
    if n_frames < 2 {
        return Err(SyntheticError::TooFewFrames(n_frames));
    }
    scene.validate()?;
    let conv = EulerConvention::ZYX_INTRINSIC;
    let labels = motion.steps(n_frames - 1)?;
    let mut poses = Vec::with_capacity(n_frames);
    poses.push(Pose::identity());
    for s in &labels {
        let next = compose(poses.last().unwrap(), &vec6_to_pose(s, conv));
        poses.push(next);
    }
    let scans: Vec<PointCloud> = poses
        .par_iter()
        .enumerate()
        .map(|(i, pose)| {
            let pts = scene.scan(pose, frame_noise_seed(scene.seed, i));
            if !pts
                .iter()
                .any(|p| project_point(p.x, p.y, p.z, &scene.projection).is_ok())
            {
                return Err(SyntheticError::DegenerateScene(i));
            }
            Ok(PointCloud::new(pts).expect("finite generated points"))
        })
        .collect::<Result<_, _>>()?;
    Ok(SyntheticSequence {
        scans,
        poses,
        labels,
    })
}

impl SyntheticSequence {
    /// Encoded training pairs with labels recomputed from the absolute poses.
    pub fn pairs(&self, cfg: &ProjectionConfig) -> Result<Vec<SamplePair>, SyntheticError> {
        let records: Vec<ScanRecord> = self
            .scans
            .iter()
            .enumerate()
            .map(|(i, c)| ScanRecord {
                sequence: "synthetic".into(),
                frame: i,
                cloud: c.clone(),
            })
            .collect();
        Ok(build_pairs(
            &records,
            &self.poses,
            cfg,
            None,
            EulerConvention::ZYX_INTRINSIC,
        )?)
    }

    /// Writes scans and poses in the KITTI odometry layout under `layout`.
    pub fn write_kitti(
        &self,
        layout: &DatasetLayout,
        sequence: &str,
    ) -> Result<(), SyntheticError> {
        let io = |p: &Path, e| {
            SyntheticError::Kitti(KittiError::Io {
                path: p.to_path_buf(),
                source: e,
            })
        };
        let velo = layout.velodyne_dir(sequence);
        std::fs::create_dir_all(&velo).map_err(|e| io(&velo, e))?;
        let poses_path = layout.poses_path(sequence);
        let poses_dir = poses_path.parent().expect("poses file has a parent");
        std::fs::create_dir_all(poses_dir).map_err(|e| io(poses_dir, e))?;
        for (i, scan) in self.scans.iter().enumerate() {
            write_velodyne_bin(&layout.scan_path(sequence, i), scan)?;
        }
        write_kitti_trajectory(&poses_path, &self.poses)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::project_cloud;
    use crate::kitti::{read_kitti_poses, PairStream};
    use crate::pose::integrate_trajectory;

    fn scene(seed: u64) -> SceneSpec {
        SceneSpec::desk(seed, ProjectionConfig::tiny())
    }

    fn v(p: [f64; 3], q: [f64; 3]) -> PoseVector6 {
        PoseVector6::new(Vector3::from(p), Vector3::from(q))
    }

    #[test]
    fn zero_motion_gives_identical_clean_scans() {
        let s = SceneSpec {
            range_noise: 0.0,
            ..scene(1)
        };
        let seq = generate_sequence(&s, &MotionSpec::Constant(PoseVector6::zeros()), 4).unwrap();
        assert!(seq.scans.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn pure_translation_labels() {
        let step = v([0.5, 0.0, 0.0], [0.0; 3]);
        let seq = generate_sequence(&scene(2), &MotionSpec::Constant(step), 5).unwrap();
        assert!(seq
            .labels
            .iter()
            .all(|l| l.to_array() == [0.5, 0.0, 0.0, 0.0, 0.0, 0.0]));
        let pairs = seq.pairs(&ProjectionConfig::tiny()).unwrap();
        for p in &pairs {
            let d = p
                .label
                .to_array()
                .iter()
                .zip(step.to_array())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(d < 1e-12);
        }
    }

    #[test]
    fn random_walk_labels_integrate_to_poses() {
        let seq = generate_sequence(&scene(3), &MotionSpec::desk_random_walk(9), 60).unwrap();
        let rebuilt = integrate_trajectory(
            &Pose::identity(),
            &seq.labels,
            EulerConvention::ZYX_INTRINSIC,
        );
        for (a, b) in rebuilt.iter().zip(&seq.poses) {
            assert!((a.to_homogeneous() - b.to_homogeneous()).abs().max() < 1e-12);
        }
    }

    #[test]
    fn clean_points_lie_on_surfaces_within_range() {
        let s = SceneSpec {
            range_noise: 0.0,
            ..scene(4)
        };
        let pose = vec6_to_pose(
            &v([1.0, -2.0, 0.1], [0.02, -0.01, 0.7]),
            EulerConvention::ZYX_INTRINSIC,
        );
        let world = s.sample_world(&pose);
        for w in &world {
            let on_surface = s.primitives.iter().any(|p| match p {
                Primitive::Ground { height, .. } => (w.z - height).abs() < 1e-9,
                Primitive::Cylinder {
                    base,
                    radius,
                    height,
                } => {
                    ((w.xy() - base.xy()).norm() - radius).abs() < 1e-9
                        && w.z >= base.z - 1e-9
                        && w.z <= base.z + height + 1e-9
                }
                Primitive::Box {
                    center,
                    half_extents: e,
                    yaw,
                } => {
                    let d = w - center;
                    let (s, c) = yaw.sin_cos();
                    let l = Vector3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z);
                    let inside = l.x.abs() <= e.x + 1e-9
                        && l.y.abs() <= e.y + 1e-9
                        && l.z.abs() <= e.z + 1e-9;
                    let on_face = (l.x.abs() - e.x).abs() < 1e-9
                        || (l.y.abs() - e.y).abs() < 1e-9
                        || (l.z - e.z).abs() < 1e-9;
                    inside && on_face
                }
            });
            assert!(on_surface, "{w:?}");
        }
        assert!(s
            .scan(&pose, 0)
            .iter()
            .all(|p| p.norm() <= s.projection.d_max()));
    }

    #[test]
    fn seeds_are_deterministic_and_distinct() {
        let m = MotionSpec::desk_random_walk(1);
        let a = generate_sequence(&scene(5), &m, 3).unwrap();
        let b = generate_sequence(&scene(5), &m, 3).unwrap();
        let c = generate_sequence(&scene(6), &m, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.scans[0], c.scans[0]);
    }

    #[test]
    fn frames_are_not_degenerate_at_tiny_resolution() {
        let cfg = ProjectionConfig::tiny();
        let seq = generate_sequence(&scene(7), &MotionSpec::desk(7), 250).unwrap();
        for scan in &seq.scans {
            let (img, _) = project_cloud(scan, &cfg).unwrap();
            let frac = img.nonzero_cells() as f64 / (cfg.width() * cfg.height()) as f64;
            assert!(frac >= 0.3, "only {:.1}% of cells filled", 100.0 * frac);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let big_turn = MotionSpec::Constant(v([0.0; 3], [0.0, 0.0, 1.0]));
        assert!(matches!(
            generate_sequence(&scene(1), &big_turn, 3),
            Err(SyntheticError::InvalidMotion(_))
        ));
        assert!(matches!(
            generate_sequence(&scene(1), &MotionSpec::Constant(PoseVector6::zeros()), 1),
            Err(SyntheticError::TooFewFrames(1))
        ));
        // everything far above the sensor
        let sky = SceneSpec {
            primitives: vec![Primitive::Ground {
                height: 30.0,
                half_window: 5.0,
            }],
            ..scene(1)
        };
        assert!(matches!(
            generate_sequence(&sky, &MotionSpec::Constant(PoseVector6::zeros()), 2),
            Err(SyntheticError::DegenerateScene(0))
        ));
    }

    #[test]
    fn kitti_layout_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let layout = DatasetLayout::new(dir.path());
        let seq = generate_sequence(&scene(8), &MotionSpec::desk_random_walk(8), 6).unwrap();
        seq.write_kitti(&layout, "00").unwrap();
        let poses = read_kitti_poses(&layout.poses_path("00")).unwrap();
        assert_eq!(poses.len(), 6);
        for (a, b) in poses.iter().zip(&seq.poses) {
            assert!((a.to_homogeneous() - b.to_homogeneous()).abs().max() < 1e-9);
        }
        let stream = PairStream::open(
            &layout,
            "00",
            ProjectionConfig::tiny(),
            2,
            EulerConvention::ZYX_INTRINSIC,
        )
        .unwrap();
        let pairs: Vec<SamplePair> = stream.collect::<Result<_, _>>().unwrap();
        assert_eq!(pairs.len(), 5);
        for (p, l) in pairs.iter().zip(&seq.labels) {
            let d = p
                .label
                .to_array()
                .iter()
                .zip(l.to_array())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(d < 1e-9);
        }
    }
}
