//! Panoramic depth encoding of point clouds.
//!
//! A point's azimuth `θ = atan2(y, x)` is wrapped to `[0, 2π)` and binned
//! into `width` columns; its elevation `φ = asin(z / |p|)` is binned into
//! `height` rows starting at `φ_min`. Each cell stores the inverse-normalized
//! range of the nearest point that lands in it, so near surfaces are bright
//! and empty cells are 0.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::Vector3;
use thiserror::Error;

use crate::network::tensor::Tensor;

const TWO_PI: f64 = 2.0 * PI;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodeError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("point ({0}, {1}, {2}) has a non-finite coordinate")]
    NonFinitePoint(f64, f64, f64),
    #[error("point is at the sensor origin")]
    AtOrigin,
    #[error("elevation {phi} rad outside the field of view")]
    OutOfFov { phi: f64 },
    #[error("frames were encoded with different projection configs")]
    ConfigMismatch,
    #[error("invalid projection config: {0}")]
    InvalidConfig(&'static str),
    #[error("intensity count {intensity} does not match point count {points}")]
    IntensityCount { points: usize, intensity: usize },
}

/// Unordered lidar returns in the sensor frame, meters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
    intensity: Option<Vec<f32>>,
}

impl PointCloud {
    /// Rejects non-finite coordinates; points exactly at the origin are dropped.
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self, EncodeError> {
        Self::build(points, None)
    }

    pub fn with_intensity(
        points: Vec<Vector3<f64>>,
        intensity: Vec<f32>,
    ) -> Result<Self, EncodeError> {
        if points.len() != intensity.len() {
            return Err(EncodeError::IntensityCount {
                points: points.len(),
                intensity: intensity.len(),
            });
        }
        Self::build(points, Some(intensity))
    }

    fn build(points: Vec<Vector3<f64>>, intensity: Option<Vec<f32>>) -> Result<Self, EncodeError> {
        if let Some(p) = points.iter().find(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(EncodeError::NonFinitePoint(p.x, p.y, p.z));
        }
        let keep: Vec<bool> = points.iter().map(|p| *p != Vector3::zeros()).collect();
        let intensity = intensity.map(|values| {
            values
                .into_iter()
                .zip(&keep)
                .filter(|(_, k)| **k)
                .map(|(v, _)| v)
                .collect()
        });
        let points = points
            .into_iter()
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(p, _)| p)
            .collect();
        Ok(Self { points, intensity })
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn intensity(&self) -> Option<&[f32]> {
        self.intensity.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Image geometry of the panoramic projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionConfig {
    width: usize,
    height: usize,
    phi_min: f64,
    phi_max: f64,
    d_max: f64,
}

impl ProjectionConfig {
    pub fn new(
        width: usize,
        height: usize,
        phi_min: f64,
        phi_max: f64,
        d_max: f64,
    ) -> Result<Self, EncodeError> {
        if width == 0 || height == 0 {
            return Err(EncodeError::InvalidConfig(
                "image dimensions must be positive",
            ));
        }
        if !(phi_min.is_finite() && phi_max.is_finite() && phi_max > phi_min) {
            return Err(EncodeError::InvalidConfig(
                "elevation range must satisfy phi_min < phi_max",
            ));
        }
        if phi_min < -PI / 2.0 || phi_max > PI / 2.0 {
            return Err(EncodeError::InvalidConfig(
                "elevation range must lie within [-pi/2, pi/2]",
            ));
        }
        if !(d_max.is_finite() && d_max > 0.0) {
            return Err(EncodeError::InvalidConfig("d_max must be positive"));
        }
        Ok(Self {
            width,
            height,
            phi_min,
            phi_max,
            d_max,
        })
    }

    /// HDL-64E geometry: 64 rows, 1024 columns, elevation −24.9°..+2.0°, 80 m.
    pub fn kitti_hdl64() -> Self {
        Self::new(1024, 64, (-24.9f64).to_radians(), 2.0f64.to_radians(), 80.0)
            .expect("valid preset")
    }

    /// Desk-scale geometry, same field of view at 16 × 64.
    pub fn tiny() -> Self {
        Self::new(64, 16, (-24.9f64).to_radians(), 2.0f64.to_radians(), 80.0).expect("valid preset")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn phi_min(&self) -> f64 {
        self.phi_min
    }

    pub fn phi_max(&self) -> f64 {
        self.phi_max
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    /// Radians per azimuth column.
    pub fn delta_theta(&self) -> f64 {
        TWO_PI / self.width as f64
    }

    /// Radians per elevation row.
    pub fn delta_phi(&self) -> f64 {
        (self.phi_max - self.phi_min) / self.height as f64
    }
}

/// Image location of a projected point. `r` indexes azimuth, `c` elevation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedPoint {
    pub r: usize,
    pub c: usize,
    pub range: f64,
    pub theta: f64,
    pub phi: f64,
}

/// Azimuth wrapped to `[0, 2π)`.
pub fn wrapped_azimuth(x: f64, y: f64) -> f64 {
    let theta = y.atan2(x);
    if theta < 0.0 {
        let w = theta + TWO_PI;
        // θ = −0⁺ rounds up to exactly 2π
        if w >= TWO_PI {
            0.0
        } else {
            w
        }
    } else {
        theta
    }
}

pub fn project_point(
    x: f64,
    y: f64,
    z: f64,
    cfg: &ProjectionConfig,
) -> Result<ProjectedPoint, EncodeError> {
    if !(x.is_finite() && y.is_finite() && z.is_finite()) {
        return Err(EncodeError::NonFinitePoint(x, y, z));
    }
    let range = (x * x + y * y + z * z).sqrt();
    if range == 0.0 {
        return Err(EncodeError::AtOrigin);
    }
    let theta = wrapped_azimuth(x, y);
    let phi = (z / range).clamp(-1.0, 1.0).asin();
    if phi < cfg.phi_min || phi >= cfg.phi_max {
        return Err(EncodeError::OutOfFov { phi });
    }
    let r = ((theta / cfg.delta_theta()).floor() as usize).min(cfg.width - 1);
    let c = ((phi - cfg.phi_min) / cfg.delta_phi()).floor() as usize;
    let c = c.min(cfg.height - 1);
    Ok(ProjectedPoint {
        r,
        c,
        range,
        theta,
        phi,
    })
}

/// Inverse range normalization onto `[0, 255]`; ranges past `d_max` map to 0.
pub fn normalize_depth(d: f64, cfg: &ProjectionConfig) -> f64 {
    255.0 * (1.0 - d.min(cfg.d_max) / cfg.d_max)
}

/// Height × width grid of normalized depths. Row `c = 0` is the lowest
/// elevation bin; exports flip it so the top row is `φ_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    grid: Vec<f64>,
    config: ProjectionConfig,
}

impl DepthImage {
    pub fn empty(config: ProjectionConfig) -> Self {
        Self {
            grid: vec![0.0; config.width * config.height],
            config,
        }
    }

    /// Image from row-major values (row `c = 0` first); `None` on a size mismatch.
    pub fn from_values(config: ProjectionConfig, grid: Vec<f64>) -> Option<Self> {
        (grid.len() == config.width * config.height).then_some(Self { grid, config })
    }

    pub fn config(&self) -> &ProjectionConfig {
        &self.config
    }

    /// Value at elevation row `c`, azimuth column `r`.
    pub fn get(&self, c: usize, r: usize) -> f64 {
        self.grid[c * self.config.width + r]
    }

    pub fn values(&self) -> &[f64] {
        &self.grid
    }

    pub fn nonzero_cells(&self) -> usize {
        self.grid.iter().filter(|v| **v != 0.0).count()
    }

    /// Rows ordered top (`φ_max`) to bottom, quantized to 8 bits.
    pub fn to_gray8(&self) -> Vec<u8> {
        let (w, h) = (self.config.width, self.config.height);
        let mut out = Vec::with_capacity(w * h);
        for c in (0..h).rev() {
            out.extend(
                self.grid[c * w..(c + 1) * w]
                    .iter()
                    .map(|v| v.round().clamp(0.0, 255.0) as u8),
            );
        }
        out
    }

    /// Binary PGM (P5, maxval 255).
    pub fn write_pgm<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(
            out,
            "P5\n{} {}\n255\n",
            self.config.width, self.config.height
        )?;
        out.write_all(&self.to_gray8())
    }
}

/// Bookkeeping from one cloud projection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProjectionStats {
    pub total: usize,
    pub in_fov: usize,
    pub out_of_fov: usize,
    /// Points that landed in an already occupied cell.
    pub collisions: usize,
}

impl ProjectionStats {
    pub fn in_fov_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.in_fov as f64 / self.total as f64
        }
    }
}

/// Projects every point; per cell the nearest point wins, ties going to the
/// lower point index, so the image does not depend on point order.
pub fn project_cloud(
    pc: &PointCloud,
    cfg: &ProjectionConfig,
) -> Result<(DepthImage, ProjectionStats), EncodeError> {
    if pc.is_empty() {
        return Err(EncodeError::EmptyCloud);
    }
    let mut best: Vec<Option<(f64, usize)>> = vec![None; cfg.width * cfg.height];
    let mut stats = ProjectionStats {
        total: pc.len(),
        ..Default::default()
    };
    for (idx, p) in pc.points().iter().enumerate() {
        let proj = match project_point(p.x, p.y, p.z, cfg) {
            Ok(proj) => proj,
            Err(EncodeError::OutOfFov { .. }) => {
                stats.out_of_fov += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        stats.in_fov += 1;
        let cell = &mut best[proj.c * cfg.width + proj.r];
        match cell {
            None => *cell = Some((proj.range, idx)),
            Some((range, _)) => {
                stats.collisions += 1;
                // indices only grow here, so strict < keeps the lower index on ties
                if proj.range < *range {
                    *cell = Some((proj.range, idx));
                }
            }
        }
    }
    let grid = best
        .iter()
        .map(|b| b.map_or(0.0, |(d, _)| normalize_depth(d, cfg)))
        .collect();
    Ok((DepthImage { grid, config: *cfg }, stats))
}

/// Two consecutive frames prepared for both sub-networks, scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePairInput {
    /// `(2, H, W)`: earlier frame then later frame.
    pub translation: Tensor,
    /// `(6, H, W)`: earlier frame replicated 3×, then later frame 3×.
    pub orientation: Tensor,
}

impl FramePairInput {
    pub fn height(&self) -> usize {
        self.translation.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.translation.shape()[2]
    }
}

pub fn stack_pair(prev: &DepthImage, curr: &DepthImage) -> Result<FramePairInput, EncodeError> {
    if prev.config != curr.config {
        return Err(EncodeError::ConfigMismatch);
    }
    let (h, w) = (prev.config.height, prev.config.width);
    let scaled = |img: &DepthImage| img.grid.iter().map(|v| v / 255.0).collect::<Vec<f64>>();
    let (a, b) = (scaled(prev), scaled(curr));

    let mut trans = Vec::with_capacity(2 * h * w);
    trans.extend_from_slice(&a);
    trans.extend_from_slice(&b);
    let mut orient = Vec::with_capacity(6 * h * w);
    for frame in [&a, &b] {
        for _ in 0..3 {
            orient.extend_from_slice(frame);
        }
    }
    Ok(FramePairInput {
        translation: Tensor::new(vec![2, h, w], trans).expect("shape matches"),
        orientation: Tensor::new(vec![6, h, w], orient).expect("shape matches"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg_360() -> ProjectionConfig {
        ProjectionConfig::new(360, 16, -0.4, 0.1, 80.0).unwrap()
    }

    #[test]
    fn forward_point_lands_mid_row() {
        let cfg = ProjectionConfig::new(64, 16, -0.2, 0.2, 80.0).unwrap();
        let p = project_point(1.0, 0.0, 0.0, &cfg).unwrap();
        assert_eq!((p.theta, p.phi, p.r), (0.0, 0.0, 0));
        assert_eq!(p.c, (0.2 / cfg.delta_phi()).floor() as usize);
        assert_eq!(p.c, 8);
    }

    #[test]
    fn azimuth_quadrants() {
        let cfg = cfg_360();
        assert_eq!(project_point(0.0, 1.0, 0.0, &cfg).unwrap().r, 90);
        // oracle: θ = atan2(−1, 0) = −π/2, wrapped +2π → 3π/2, ⌊(3π/2)/(2π/360)⌋ = 270
        let theta = (-1.0f64).atan2(0.0) + 2.0 * PI;
        assert_eq!((theta / (2.0 * PI / 360.0)).floor() as usize, 270);
        assert_eq!(project_point(0.0, -1.0, 0.0, &cfg).unwrap().r, 270);
    }

    #[test]
    fn azimuth_just_below_zero_wraps_into_last_column() {
        let cfg = cfg_360();
        let p = project_point(1.0, -1e-300, 0.0, &cfg).unwrap();
        assert!(p.r == 0 || p.r == 359);
        let p = project_point(1.0, -1e-6, 0.0, &cfg).unwrap();
        assert_eq!(p.r, 359);
    }

    #[test]
    fn out_of_fov_and_origin_rejected() {
        let cfg = cfg_360();
        assert!(matches!(
            project_point(0.0, 0.0, 0.0, &cfg),
            Err(EncodeError::AtOrigin)
        ));
        assert!(matches!(
            project_point(1.0, 0.0, 5.0, &cfg),
            Err(EncodeError::OutOfFov { .. })
        ));
        // upper bound is exclusive
        let z = 0.1f64.tan();
        assert!(matches!(
            project_point(1.0, 0.0, z * 1.000001, &cfg),
            Err(EncodeError::OutOfFov { .. })
        ));
    }

    #[test]
    fn normalize_depth_examples() {
        let cfg = cfg_360();
        assert!((normalize_depth(1e-12, &cfg) - 255.0).abs() < 1e-9);
        assert_eq!(normalize_depth(80.0, &cfg), 0.0);
        assert_eq!(normalize_depth(40.0, &cfg), 127.5);
        assert_eq!(normalize_depth(500.0, &cfg), 0.0);
    }

    #[test]
    fn normalize_depth_strictly_decreasing() {
        let cfg = cfg_360();
        let mut prev = normalize_depth(1e-3, &cfg);
        for i in 2..=8000 {
            let v = normalize_depth(i as f64 * 0.01, &cfg);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn point_at_d_max_leaves_cell_at_zero() {
        let cfg = cfg_360();
        let pc = PointCloud::new(vec![Vector3::new(80.0, 0.0, 0.0)]).unwrap();
        let (img, stats) = project_cloud(&pc, &cfg).unwrap();
        assert_eq!(img.nonzero_cells(), 0);
        assert_eq!(stats.in_fov, 1);
    }

    #[test]
    fn nearest_point_wins_collision() {
        let cfg = cfg_360();
        let pc = PointCloud::new(vec![
            Vector3::new(50.0, 0.0, 0.0),
            Vector3::new(5.0, 0.0, 0.0),
        ])
        .unwrap();
        let (img, stats) = project_cloud(&pc, &cfg).unwrap();
        let p = project_point(5.0, 0.0, 0.0, &cfg).unwrap();
        assert_eq!(img.get(p.c, p.r), normalize_depth(5.0, &cfg));
        assert_eq!(img.nonzero_cells(), 1);
        assert_eq!(stats.collisions, 1);
    }

    #[test]
    fn distinct_cells_counted() {
        let cfg = ProjectionConfig::tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // one point per chosen cell, aimed at the cell centre
        let mut cells: Vec<(usize, usize)> = (0..cfg.height())
            .flat_map(|c| (0..cfg.width()).map(move |r| (c, r)))
            .collect();
        cells.shuffle(&mut rng);
        let k = 300;
        let points = cells[..k]
            .iter()
            .map(|&(c, r)| {
                let theta = (r as f64 + 0.5) * cfg.delta_theta();
                let phi = cfg.phi_min() + (c as f64 + 0.5) * cfg.delta_phi();
                let d = rng.random_range(1.0..70.0);
                Vector3::new(
                    d * phi.cos() * theta.cos(),
                    d * phi.cos() * theta.sin(),
                    d * phi.sin(),
                )
            })
            .collect();
        let (img, stats) = project_cloud(&PointCloud::new(points).unwrap(), &cfg).unwrap();
        assert_eq!(img.nonzero_cells(), k);
        assert_eq!(stats.collisions, 0);
    }

    #[test]
    fn empty_cloud_rejected_and_origin_dropped() {
        let cfg = cfg_360();
        assert_eq!(
            project_cloud(&PointCloud::default(), &cfg).unwrap_err(),
            EncodeError::EmptyCloud
        );
        let pc = PointCloud::new(vec![Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0)]).unwrap();
        assert_eq!(pc.len(), 1);
        assert!(PointCloud::new(vec![Vector3::new(f64::NAN, 0.0, 0.0)]).is_err());
    }

    #[test]
    fn stack_pair_layout() {
        let cfg = ProjectionConfig::tiny();
        let zero = DepthImage::empty(cfg);
        let pair = stack_pair(&zero, &zero).unwrap();
        assert_eq!(pair.translation.shape(), &[2, 16, 64]);
        assert_eq!(pair.orientation.shape(), &[6, 16, 64]);
        assert!(pair.orientation.data().iter().all(|v| *v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mk = |rng: &mut ChaCha8Rng| {
            let pts = (0..500)
                .map(|_| {
                    Vector3::new(
                        rng.random_range(-30.0..30.0),
                        rng.random_range(-30.0..30.0),
                        rng.random_range(-3.0..0.5),
                    )
                })
                .collect();
            project_cloud(&PointCloud::new(pts).unwrap(), &cfg)
                .unwrap()
                .0
        };
        let (a, b) = (mk(&mut rng), mk(&mut rng));
        let pair = stack_pair(&a, &b).unwrap();
        let o = &pair.orientation;
        assert_eq!(o.outer(0), o.outer(1));
        assert_eq!(o.outer(1), o.outer(2));
        assert_eq!(o.outer(3), o.outer(5));
        assert_eq!(pair.translation.outer(0), o.outer(0));
        assert_eq!(pair.translation.outer(1), o.outer(4));
        let first: Vec<f64> = a.values().iter().map(|v| v / 255.0).collect();
        assert_eq!(pair.translation.outer(0), &first[..]);

        let same = stack_pair(&a, &a).unwrap();
        for ch in 1..6 {
            assert_eq!(same.orientation.outer(0), same.orientation.outer(ch));
        }
    }

    #[test]
    fn stack_pair_rejects_config_mismatch() {
        let a = DepthImage::empty(ProjectionConfig::tiny());
        let b = DepthImage::empty(ProjectionConfig::kitti_hdl64());
        assert_eq!(stack_pair(&a, &b).unwrap_err(), EncodeError::ConfigMismatch);
    }

    #[test]
    fn pgm_header_and_row_order() {
        let cfg = ProjectionConfig::new(4, 2, -0.2, 0.2, 10.0).unwrap();
        // lands in the top elevation row (c = 1)
        let pc = PointCloud::new(vec![Vector3::new(5.0, 0.0, 0.5)]).unwrap();
        let (img, _) = project_cloud(&pc, &cfg).unwrap();
        let mut buf = Vec::new();
        img.write_pgm(&mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n4 2\n255\n"));
        let pixels = &buf[b"P5\n4 2\n255\n".len()..];
        assert_eq!(pixels.len(), 8);
        assert_ne!(pixels[0], 0);
        assert!(pixels[1..].iter().all(|v| *v == 0));
    }
}
