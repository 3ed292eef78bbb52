//! Rigid-body poses and their Euler, quaternion and matrix views.
//!
//! Composition convention (used everywhere in this crate): poses act on
//! column vectors, `x_world = R * x_child + t`. `compose(a, b)` is the
//! homogeneous product `A * B`, i.e. `b` is applied first and `a` second.
//! A trajectory is a list of absolute poses `T_i` (sensor-to-world) and the
//! relative motion between frames is `T_i^{-1} * T_{i+1}`.
//!
//! Euler vectors are indexed by axis: `q = (angle about x, angle about y,
//! angle about z)`. The [`EulerConvention`] only decides the order in which
//! the three axis rotations are multiplied. The project-wide default is
//! intrinsic Z-Y-X (yaw, then pitch, then roll), so
//! `R = Rz(q[2]) * Ry(q[1]) * Rx(q[0])`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Matrix4, Vector3};
use thiserror::Error;

/// Rotation blocks drifting further than this from orthonormal are re-orthonormalized.
pub const REORTHONORMALIZE_TOL: f64 = 1e-9;
/// Accepted deviation from orthonormality for rotation inputs.
pub const ORTHONORMAL_INPUT_TOL: f64 = 1e-6;
/// Accepted deviation of a quaternion norm from one.
pub const UNIT_QUATERNION_TOL: f64 = 1e-6;
/// Middle Euler angles closer than this to ±π/2 are treated as gimbal lock.
pub const GIMBAL_LOCK_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoseError {
    /// The middle angle sits at ±π/2. `fallback` holds the decomposition with
    /// the third angle forced to zero, which still reproduces the rotation.
    #[error("gimbal lock: middle Euler angle at ±π/2 (fallback {fallback:?})")]
    GimbalLock { fallback: [f64; 3] },
    #[error("quaternion norm {norm} deviates from 1 by more than {UNIT_QUATERNION_TOL}")]
    NonUnitQuaternion { norm: f64 },
    #[error("rotation matrix is not orthonormal (max |RᵀR − I| = {deviation:e})")]
    NotOrthonormal { deviation: f64 },
    #[error("rotation matrix has determinant {det}, expected +1")]
    NotProperRotation { det: f64 },
    #[error("non-finite pose component")]
    NonFinite,
    #[error("Euler axis order must name three distinct axes for a Tait-Bryan convention")]
    RepeatedAxis,
    #[error("unknown Euler convention `{0}`")]
    UnknownConvention(String),
}

impl PoseError {
    /// Tie-broken angles carried by a gimbal-lock signal.
    pub fn gimbal_fallback(&self) -> Option<Vector3<f64>> {
        match self {
            PoseError::GimbalLock { fallback } => Some(Vector3::from(*fallback)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    fn letter(self) -> char {
        match self {
            Axis::X => 'x',
            Axis::Y => 'y',
            Axis::Z => 'z',
        }
    }

    fn from_letter(c: char) -> Option<Self> {
        match c.to_ascii_lowercase() {
            'x' => Some(Axis::X),
            'y' => Some(Axis::Y),
            'z' => Some(Axis::Z),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RotationFrame {
    /// Each rotation is about the axes of the already-rotated frame.
    Intrinsic,
    /// Each rotation is about the fixed world axes.
    Extrinsic,
}

/// Axis order plus intrinsic/extrinsic tag for Euler-valued quantities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EulerConvention {
    order: [Axis; 3],
    frame: RotationFrame,
}

impl EulerConvention {
    /// Intrinsic yaw-pitch-roll, the project default.
    pub const ZYX_INTRINSIC: EulerConvention = EulerConvention {
        order: [Axis::Z, Axis::Y, Axis::X],
        frame: RotationFrame::Intrinsic,
    };

    pub fn new(order: [Axis; 3], frame: RotationFrame) -> Result<Self, PoseError> {
        if order[0] == order[1] || order[1] == order[2] || order[0] == order[2] {
            return Err(PoseError::RepeatedAxis);
        }
        Ok(Self { order, frame })
    }

    pub fn order(&self) -> [Axis; 3] {
        self.order
    }

    pub fn frame(&self) -> RotationFrame {
        self.frame
    }

    /// Order of the factors in `R = R_a * R_b * R_c`.
    fn product_order(&self) -> [Axis; 3] {
        match self.frame {
            RotationFrame::Intrinsic => self.order,
            RotationFrame::Extrinsic => [self.order[2], self.order[1], self.order[0]],
        }
    }
}

impl Default for EulerConvention {
    fn default() -> Self {
        Self::ZYX_INTRINSIC
    }
}

impl fmt::Display for EulerConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let order: String = self.order.iter().map(|a| a.letter()).collect();
        let frame = match self.frame {
            RotationFrame::Intrinsic => "intrinsic",
            RotationFrame::Extrinsic => "extrinsic",
        };
        write!(f, "{order}-{frame}")
    }
}

impl FromStr for EulerConvention {
    type Err = PoseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || PoseError::UnknownConvention(s.to_string());
        let (order, frame) = s.split_once('-').ok_or_else(unknown)?;
        let frame = match frame {
            "intrinsic" => RotationFrame::Intrinsic,
            "extrinsic" => RotationFrame::Extrinsic,
            _ => return Err(unknown()),
        };
        let axes: Vec<Axis> = order
            .chars()
            .map(Axis::from_letter)
            .collect::<Option<_>>()
            .ok_or_else(unknown)?;
        let order: [Axis; 3] = axes.try_into().map_err(|_| unknown())?;
        EulerConvention::new(order, frame)
    }
}

/// Wraps an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    // rem_euclid maps −π to π already; guard the open lower end
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

/// Rotation by `angle` about a single coordinate axis.
pub fn axis_rotation(axis: Axis, angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    match axis {
        Axis::X => Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c),
        Axis::Y => Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
        Axis::Z => Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
    }
}

pub fn euler_to_rotation(q: &Vector3<f64>, conv: EulerConvention) -> Matrix3<f64> {
    let [a, b, c] = conv.product_order();
    axis_rotation(a, q[a.index()]) * axis_rotation(b, q[b.index()]) * axis_rotation(c, q[c.index()])
}

/// Largest absolute entry of `RᵀR − I`.
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).abs().max()
}

fn check_rotation(r: &Matrix3<f64>, tol: f64) -> Result<(), PoseError> {
    if r.iter().any(|v| !v.is_finite()) {
        return Err(PoseError::NonFinite);
    }
    let deviation = orthonormality_error(r);
    if deviation > tol {
        return Err(PoseError::NotOrthonormal { deviation });
    }
    let det = r.determinant();
    if (det - 1.0).abs() > tol.max(1e-9) * 3.0 {
        return Err(PoseError::NotProperRotation { det });
    }
    Ok(())
}

/// Gram-Schmidt on the columns, keeping the first column's direction.
pub fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let c0 = r.column(0).normalize();
    let c1 = r.column(1) - c0 * c0.dot(&r.column(1));
    let c1 = c1.normalize();
    let c2 = c0.cross(&c1);
    Matrix3::from_columns(&[c0, c1, c2])
}

/// Decomposes `r` into axis-indexed Euler angles.
///
/// On gimbal lock the third factor's angle is set to zero and the result is
/// delivered through [`PoseError::GimbalLock`]'s `fallback`.
pub fn rotation_to_euler(
    r: &Matrix3<f64>,
    conv: EulerConvention,
) -> Result<Vector3<f64>, PoseError> {
    check_rotation(r, ORTHONORMAL_INPUT_TOL)?;
    let [ax_a, ax_b, ax_c] = conv.product_order();
    let (i, j, k) = (ax_a.index(), ax_b.index(), ax_c.index());
    // +1 for cyclic (x,y,z) orders, −1 otherwise
    let parity = if (j + 3 - i) % 3 == 1 { 1.0 } else { -1.0 };

    let beta = (parity * r[(i, k)]).clamp(-1.0, 1.0).asin();
    let mut q = Vector3::zeros();
    if (beta.abs() - FRAC_PI_2).abs() < GIMBAL_LOCK_TOL {
        let beta = FRAC_PI_2.copysign(beta);
        // With the third angle fixed at 0, R * R_b(β)ᵀ is a pure rotation about axis a.
        let m = r * axis_rotation(ax_b, beta).transpose();
        let (u, v) = ((i + 1) % 3, (i + 2) % 3);
        q[i] = wrap_angle(m[(v, u)].atan2(m[(u, u)]));
        q[j] = beta;
        q[k] = 0.0;
        return Err(PoseError::GimbalLock {
            fallback: [q[0], q[1], q[2]],
        });
    }
    q[i] = wrap_angle((-parity * r[(j, k)]).atan2(r[(k, k)]));
    q[j] = beta;
    q[k] = wrap_angle((-parity * r[(i, j)]).atan2(r[(i, i)]));
    Ok(q)
}

/// Rotation matrix of a unit quaternion given as (w, x, y, z).
pub fn quaternion_to_rotation(w: f64, x: f64, y: f64, z: f64) -> Result<Matrix3<f64>, PoseError> {
    let norm = (w * w + x * x + y * y + z * z).sqrt();
    if !norm.is_finite() || (norm - 1.0).abs() > UNIT_QUATERNION_TOL {
        return Err(PoseError::NonUnitQuaternion { norm });
    }
    let (w, x, y, z) = (w / norm, x / norm, y / norm, z / norm);
    Ok(Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

pub fn quaternion_to_euler(
    w: f64,
    x: f64,
    y: f64,
    z: f64,
    conv: EulerConvention,
) -> Result<Vector3<f64>, PoseError> {
    rotation_to_euler(&quaternion_to_rotation(w, x, y, z)?, conv)
}

/// Network target: translation `p` (meters) and axis-indexed Euler angles `q` (radians).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseVector6 {
    pub p: Vector3<f64>,
    pub q: Vector3<f64>,
}

impl PoseVector6 {
    /// Euler components are wrapped into (−π, π].
    pub fn new(p: Vector3<f64>, q: Vector3<f64>) -> Self {
        Self {
            p,
            q: q.map(wrap_angle),
        }
    }

    pub fn zeros() -> Self {
        Self {
            p: Vector3::zeros(),
            q: Vector3::zeros(),
        }
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self::new(
            Vector3::new(v[0], v[1], v[2]),
            Vector3::new(v[3], v[4], v[5]),
        )
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.p[0], self.p[1], self.p[2], self.q[0], self.q[1], self.q[2],
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Validates the rotation block (within 1e-6) and re-orthonormalizes small drift.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, PoseError> {
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(PoseError::NonFinite);
        }
        check_rotation(&rotation, ORTHONORMAL_INPUT_TOL)?;
        Ok(Self::from_parts_renormalized(rotation, translation))
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    fn from_parts_renormalized(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let rotation = if orthonormality_error(&rotation) > REORTHONORMALIZE_TOL {
            orthonormalize(&rotation)
        } else {
            rotation
        };
        Self {
            rotation,
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Row-major 3×4 `[R|t]`, the KITTI pose layout.
    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t[0],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t[1],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t[2],
        ]
    }

    pub fn from_row_major_3x4(v: &[f64; 12]) -> Result<Self, PoseError> {
        let rotation = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        Self::new(rotation, Vector3::new(v[3], v[7], v[11]))
    }

    /// Applies the pose to a point.
    pub fn transform_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    /// Angle of the rotation block, from the trace.
    pub fn rotation_angle(&self) -> f64 {
        let c = 0.5 * (self.rotation.trace() - 1.0);
        c.clamp(-1.0, 1.0).acos()
    }
}

/// `a ∘ b`: applies `b` first, then `a`.
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    Pose::from_parts_renormalized(
        a.rotation * b.rotation,
        a.rotation * b.translation + a.translation,
    )
}

pub fn invert(a: &Pose) -> Pose {
    let rt = a.rotation.transpose();
    Pose {
        rotation: rt,
        translation: -(rt * a.translation),
    }
}

/// Motion from `from` to `to`, so that `compose(from, result) == to`.
pub fn relative_pose(from: &Pose, to: &Pose) -> Pose {
    compose(&invert(from), to)
}

pub fn vec6_to_pose(v: &PoseVector6, conv: EulerConvention) -> Pose {
    Pose {
        rotation: euler_to_rotation(&v.q, conv),
        translation: v.p,
    }
}

pub fn pose_to_vec6(a: &Pose, conv: EulerConvention) -> Result<PoseVector6, PoseError> {
    let q = rotation_to_euler(&a.rotation, conv)?;
    Ok(PoseVector6 {
        p: a.translation,
        q,
    })
}

/// Like [`pose_to_vec6`], but takes the tie-broken decomposition on gimbal
/// lock. The flag reports whether that happened.
pub fn pose_to_vec6_lenient(
    a: &Pose,
    conv: EulerConvention,
) -> Result<(PoseVector6, bool), PoseError> {
    match pose_to_vec6(a, conv) {
        Ok(v) => Ok((v, false)),
        Err(PoseError::GimbalLock { fallback }) => Ok((
            PoseVector6 {
                p: a.translation,
                q: Vector3::from(fallback),
            },
            true,
        )),
        Err(e) => Err(e),
    }
}

/// Chains relative motions onto `start`; the output has `rels.len() + 1` poses.
pub fn integrate_trajectory(
    start: &Pose,
    rels: &[PoseVector6],
    conv: EulerConvention,
) -> Vec<Pose> {
    let mut out = Vec::with_capacity(rels.len() + 1);
    out.push(*start);
    let mut current = *start;
    for rel in rels {
        current = compose(&current, &vec6_to_pose(rel, conv));
        out.push(current);
    }
    out
}

/// Relative motions between consecutive poses of an absolute trajectory.
pub fn relative_poses(traj: &[Pose]) -> Vec<Pose> {
    traj.windows(2)
        .map(|w| relative_pose(&w[0], &w[1]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const CONV: EulerConvention = EulerConvention::ZYX_INTRINSIC;

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        let q = Vector3::new(
            rng.random_range(-PI..PI),
            rng.random_range(-1.5..1.5),
            rng.random_range(-PI..PI),
        );
        let t = Vector3::new(
            rng.random_range(-50.0..50.0),
            rng.random_range(-50.0..50.0),
            rng.random_range(-5.0..5.0),
        );
        vec6_to_pose(&PoseVector6::new(t, q), CONV)
    }

    fn max_abs_diff(a: &Matrix4<f64>, b: &Matrix4<f64>) -> f64 {
        (a - b).abs().max()
    }

    #[test]
    fn zero_angles_give_identity() {
        assert_eq!(
            euler_to_rotation(&Vector3::zeros(), CONV),
            Matrix3::identity()
        );
        assert_eq!(
            rotation_to_euler(&Matrix3::identity(), CONV).unwrap(),
            Vector3::zeros()
        );
    }

    #[test]
    fn half_turn_about_x() {
        let r = euler_to_rotation(&Vector3::new(PI, 0.0, 0.0), CONV);
        let expected = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
        assert!((r - expected).abs().max() < 1e-15);
        let q = rotation_to_euler(&expected, CONV).unwrap();
        assert_eq!(q, Vector3::new(PI, 0.0, 0.0));
    }

    #[test]
    fn euler_matches_explicit_three_axis_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let (roll, pitch, yaw) = (
                rng.random_range(-3.0..3.0),
                rng.random_range(-1.5..1.5),
                rng.random_range(-3.0..3.0),
            );
            let (sr, cr) = f64::sin_cos(roll);
            let (sp, cp) = f64::sin_cos(pitch);
            let (sy, cy) = f64::sin_cos(yaw);
            let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cr, -sr, 0.0, sr, cr);
            let ry = Matrix3::new(cp, 0.0, sp, 0.0, 1.0, 0.0, -sp, 0.0, cp);
            let rz = Matrix3::new(cy, -sy, 0.0, sy, cy, 0.0, 0.0, 0.0, 1.0);
            let oracle = rz * ry * rx;
            let r = euler_to_rotation(&Vector3::new(roll, pitch, yaw), CONV);
            assert!((r - oracle).abs().max() < 1e-14);
        }
    }

    #[test]
    fn every_tait_bryan_order_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let orders = [
            [Axis::X, Axis::Y, Axis::Z],
            [Axis::X, Axis::Z, Axis::Y],
            [Axis::Y, Axis::X, Axis::Z],
            [Axis::Y, Axis::Z, Axis::X],
            [Axis::Z, Axis::X, Axis::Y],
            [Axis::Z, Axis::Y, Axis::X],
        ];
        for order in orders {
            for frame in [RotationFrame::Intrinsic, RotationFrame::Extrinsic] {
                let conv = EulerConvention::new(order, frame).unwrap();
                for _ in 0..100 {
                    let r = random_pose(&mut rng).rotation;
                    let q = rotation_to_euler(&r, conv).unwrap();
                    assert!(
                        (euler_to_rotation(&q, conv) - r).abs().max() < 1e-9,
                        "{conv}"
                    );
                }
            }
        }
    }

    #[test]
    fn extrinsic_xyz_equals_intrinsic_zyx() {
        let conv =
            EulerConvention::new([Axis::X, Axis::Y, Axis::Z], RotationFrame::Extrinsic).unwrap();
        let q = Vector3::new(0.3, -0.2, 1.1);
        assert!(
            (euler_to_rotation(&q, conv) - euler_to_rotation(&q, CONV))
                .abs()
                .max()
                < 1e-15
        );
    }

    #[test]
    fn gimbal_lock_is_signalled_with_usable_fallback() {
        for pitch in [FRAC_PI_2, -FRAC_PI_2] {
            let r = euler_to_rotation(&Vector3::new(0.4, pitch, 0.9), CONV);
            let err = rotation_to_euler(&r, CONV).unwrap_err();
            let fallback = err.gimbal_fallback().unwrap();
            // third factor in Z-Y-X is the roll about x
            assert_eq!(fallback[0], 0.0);
            assert!((euler_to_rotation(&fallback, CONV) - r).abs().max() < 1e-9);
        }
    }

    #[test]
    fn quaternion_examples() {
        assert_eq!(
            quaternion_to_euler(1.0, 0.0, 0.0, 0.0, CONV).unwrap(),
            Vector3::zeros()
        );
        let q = quaternion_to_euler(0.0, 1.0, 0.0, 0.0, CONV).unwrap();
        assert!((q - Vector3::new(PI, 0.0, 0.0)).abs().max() < 1e-15);
        assert!(matches!(
            quaternion_to_euler(1.1, 0.0, 0.0, 0.0, CONV),
            Err(PoseError::NonUnitQuaternion { .. })
        ));
    }

    #[test]
    fn quaternion_agrees_with_independent_euler_extraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let v = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let uq = UnitQuaternion::from_scaled_axis(v * 2.0);
            let (w, x, y, z) = (uq.w, uq.i, uq.j, uq.k);
            let (roll, pitch, yaw) = uq.euler_angles();
            let q = quaternion_to_euler(w, x, y, z, CONV).unwrap();
            let oracle = Vector3::new(roll, pitch, yaw);
            let d = (q - oracle).map(wrap_angle);
            assert!(d.abs().max() < 1e-9, "{q} vs {oracle}");
        }
    }

    #[test]
    fn compose_and_invert_match_homogeneous_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let (a, b) = (random_pose(&mut rng), random_pose(&mut rng));
            let ab = compose(&a, &b);
            assert!(
                max_abs_diff(
                    &ab.to_homogeneous(),
                    &(a.to_homogeneous() * b.to_homogeneous())
                ) < 1e-12
            );
            let inv = a.to_homogeneous().try_inverse().unwrap();
            assert!(max_abs_diff(&invert(&a).to_homogeneous(), &inv) < 1e-12);
        }
    }

    #[test]
    fn simple_compose_invert_cases() {
        let t = Pose::from_translation(Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(compose(&Pose::identity(), &t), t);
        assert_eq!(invert(&Pose::identity()), Pose::identity());
        assert_eq!(*invert(&t).translation(), Vector3::new(-1.0, -2.0, -3.0));
        assert_eq!(relative_pose(&t, &t).to_homogeneous(), Matrix4::identity());
        assert_eq!(relative_pose(&Pose::identity(), &t), t);
    }

    #[test]
    fn vec6_simple_cases() {
        assert_eq!(
            pose_to_vec6(&Pose::identity(), CONV).unwrap(),
            PoseVector6::zeros()
        );
        let v = pose_to_vec6(&Pose::from_translation(Vector3::new(1.0, 2.0, 3.0)), CONV).unwrap();
        assert_eq!(v.p, Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(v.q, Vector3::zeros());
        assert_eq!(
            vec6_to_pose(&v, CONV),
            Pose::from_translation(Vector3::new(1.0, 2.0, 3.0))
        );
    }

    #[test]
    fn integrate_trajectory_edge_cases() {
        let start = Pose::from_translation(Vector3::new(4.0, 0.0, 1.0));
        assert_eq!(integrate_trajectory(&start, &[], CONV), vec![start]);
        let traj = integrate_trajectory(&start, &[PoseVector6::zeros(); 5], CONV);
        assert_eq!(traj.len(), 6);
        assert!(traj.iter().all(|p| *p == start));
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(-PI), PI);
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + FRAC_PI_2).abs() < 1e-15);
        assert_eq!(wrap_angle(0.0), 0.0);
    }

    #[test]
    fn convention_parses_and_prints() {
        let c: EulerConvention = "zyx-intrinsic".parse().unwrap();
        assert_eq!(c, CONV);
        assert_eq!(c.to_string(), "zyx-intrinsic");
        assert!("zzx-intrinsic".parse::<EulerConvention>().is_err());
        assert!("zyx".parse::<EulerConvention>().is_err());
    }

    #[test]
    fn non_orthonormal_input_rejected() {
        let r = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 1.1));
        assert!(matches!(
            Pose::new(r, Vector3::zeros()),
            Err(PoseError::NotOrthonormal { .. })
        ));
        let reflection = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(matches!(
            Pose::new(reflection, Vector3::zeros()),
            Err(PoseError::NotProperRotation { .. })
        ));
    }
}
