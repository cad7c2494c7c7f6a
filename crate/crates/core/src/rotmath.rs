//! Rotation representations and conversions.
//!
//! Four interchangeable forms are supported: axis-angle vectors, 3x3 rotation
//! matrices, the continuous 6D representation (first two matrix columns,
//! re-orthogonalized by Gram-Schmidt) and intrinsic X-Y-Z Euler triples.
//!
//! Numerical notes:
//! - `aa_to_mat` switches to a two-term Taylor series below an angle of 1e-8
//!   so the map stays smooth through the origin.
//! - `mat_to_aa` recovers the angle with `atan2(|skew|/2, (tr-1)/2)`, which is
//!   well conditioned over the whole range, and extracts the axis near pi from
//!   the dominant diagonal of the symmetrized outer-product term.
//! - Analytic Jacobians are provided for `aa_to_mat` and `sixd_to_mat`; both
//!   are exercised against central finite differences in the tests.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Angle below which series expansions replace the closed-form Rodrigues
/// coefficients.
const TAYLOR_ANGLE: f64 = 1e-8;

/// Frobenius deviation from orthonormality beyond which a matrix is rejected.
const ORTHONORMALITY_TOL: f64 = 1e-6;

/// Tolerance for degenerate 6D inputs (near-zero or collinear columns).
const SIXD_TOL: f64 = 1e-9;

/// Tolerance for the antipodal circular-mean rejection.
const ANTIPODAL_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum RotError {
    /// The matrix is not orthonormal within 1e-6, or is a reflection.
    #[error("matrix is not a rotation (orthonormality deviation {0:.3e})")]
    NotARotation(f64),
    /// The 6D input has a near-zero first column or a collinear column pair.
    #[error("degenerate 6D representation (residual norm {0:.3e})")]
    DegenerateSixD(f64),
    /// The circular mean of two antipodal angles is undefined.
    #[error("circular mean of antipodal angles is ambiguous")]
    AmbiguousMean,
}

/// Axis-angle rotation: direction is the axis, norm is the angle in radians.
///
/// Conversions out of matrices return the canonical range `|v| <= pi`; as an
/// input any magnitude is accepted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisAngle(pub Vector3<f64>);

impl AxisAngle {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        AxisAngle(Vector3::new(x, y, z))
    }

    pub fn zero() -> Self {
        AxisAngle(Vector3::zeros())
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }
}

/// A validated 3x3 rotation matrix.
///
/// Values are only constructed through conversions from other representations
/// or through [`RotMat::from_matrix`], which enforces orthonormality within
/// 1e-6 and positive determinant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotMat(Matrix3<f64>);

impl RotMat {
    /// Validates `m` and wraps it. Fails with `NotARotation` when `m^T m`
    /// deviates from the identity by more than 1e-6 (Frobenius) or when the
    /// determinant is not positive.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, RotError> {
        let dev = orthonormality_deviation(&m);
        if dev > ORTHONORMALITY_TOL || m.determinant() <= 0.0 {
            return Err(RotError::NotARotation(dev.max(1.0)));
        }
        Ok(RotMat(m))
    }

    /// Wraps a matrix that is a rotation by construction.
    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        RotMat(m)
    }

    pub fn identity() -> Self {
        RotMat(Matrix3::identity())
    }

    pub fn as_matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Matrix3<f64> {
        self.0
    }

    /// Composition `self * rhs` (apply `rhs` first).
    pub fn compose(&self, rhs: &RotMat) -> RotMat {
        RotMat(self.0 * rhs.0)
    }

    /// The inverse rotation (transpose).
    pub fn inverse(&self) -> RotMat {
        RotMat(self.0.transpose())
    }

    /// Rotates a vector.
    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Frobenius deviation of `m^T m` from the identity.
    pub fn orthonormality_deviation(&self) -> f64 {
        orthonormality_deviation(&self.0)
    }
}

fn orthonormality_deviation(m: &Matrix3<f64>) -> f64 {
    (m.transpose() * m - Matrix3::identity()).norm()
}

/// Continuous 6D rotation representation: the first two columns of a rotation
/// matrix, stored column-major as `[a1; a2]`. Any pair of non-degenerate
/// vectors maps to a rotation; the map is invariant to positive scaling of
/// either column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SixD(pub [f64; 6]);

impl SixD {
    pub fn col1(&self) -> Vector3<f64> {
        Vector3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn col2(&self) -> Vector3<f64> {
        Vector3::new(self.0[3], self.0[4], self.0[5])
    }
}

/// Intrinsic X-Y-Z Euler angles (roll about x, then pitch about the new y,
/// then yaw about the new z), each wrapped to `(-pi, pi]`.
///
/// `gimbal_lock` is set by [`mat_to_euler`] when `|pitch|` is at `pi/2` and
/// the decomposition collapses to the `roll_x = 0` convention; it is ignored
/// on input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerXYZ {
    pub roll_x: f64,
    pub pitch_y: f64,
    pub yaw_z: f64,
    #[serde(default)]
    pub gimbal_lock: bool,
}

impl EulerXYZ {
    pub fn new(roll_x: f64, pitch_y: f64, yaw_z: f64) -> Self {
        EulerXYZ { roll_x, pitch_y, yaw_z, gimbal_lock: false }
    }
}

/// Rodrigues coefficients `A = sin(t)/t`, `B = (1-cos(t))/t^2` with series
/// fallbacks near zero.
fn rodrigues_coefficients(angle: f64) -> (f64, f64) {
    if angle < TAYLOR_ANGLE {
        // Two-term series; at this magnitude the truncation error is below
        // f64 resolution.
        (1.0 - angle * angle / 6.0, 0.5 - angle * angle / 24.0)
    } else {
        (angle.sin() / angle, (1.0 - angle.cos()) / (angle * angle))
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Converts an axis-angle vector to a rotation matrix (Rodrigues).
pub fn aa_to_mat(v: &AxisAngle) -> RotMat {
    let angle = v.0.norm();
    let (a, b) = rodrigues_coefficients(angle);
    let k = skew(&v.0);
    RotMat(Matrix3::identity() + k * a + k * k * b)
}

/// `aa_to_mat` together with the analytic Jacobian `dR/dv_i` for each of the
/// three axis-angle components.
pub fn aa_to_mat_jacobian(v: &AxisAngle) -> (RotMat, [Matrix3<f64>; 3]) {
    let angle = v.0.norm();
    let (a, b) = rodrigues_coefficients(angle);
    // a1 = (dA/dt)/t and b1 = (dB/dt)/t stay finite at t = 0.
    let (a1, b1) = if angle < 1e-3 {
        let t2 = angle * angle;
        (-1.0 / 3.0 + t2 / 30.0, -1.0 / 12.0 + t2 / 180.0)
    } else {
        let (s, c) = (angle.sin(), angle.cos());
        let t2 = angle * angle;
        ((angle * c - s) / (t2 * angle), (angle * s - 2.0 + 2.0 * c) / (t2 * t2))
    };
    let k = skew(&v.0);
    let k2 = k * k;
    let r = Matrix3::identity() + k * a + k2 * b;
    let mut jac = [Matrix3::zeros(); 3];
    for (i, j) in jac.iter_mut().enumerate() {
        let mut e = Vector3::zeros();
        e[i] = 1.0;
        let ki = skew(&e);
        *j = k * (a1 * v.0[i]) + ki * a + k2 * (b1 * v.0[i]) + (ki * k + k * ki) * b;
    }
    (RotMat(r), jac)
}

/// Converts a rotation matrix to the canonical axis-angle vector
/// (`|v| <= pi`; the axis sign at exactly pi is canonicalized but inherently
/// ambiguous).
pub fn mat_to_aa(m: &RotMat) -> Result<AxisAngle, RotError> {
    let dev = m.orthonormality_deviation();
    if dev > ORTHONORMALITY_TOL || m.0.determinant() <= 0.0 {
        return Err(RotError::NotARotation(dev.max(1.0)));
    }
    let r = &m.0;
    let sv = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let s = sv.norm() / 2.0;
    let c = (r.trace() - 1.0) / 2.0;
    let angle = s.atan2(c);
    if angle < TAYLOR_ANGLE {
        return Ok(AxisAngle(sv * 0.5));
    }
    if angle < std::f64::consts::PI - 1e-4 {
        return Ok(AxisAngle(sv * (angle / (2.0 * s))));
    }
    // Near pi the skew part vanishes; recover the axis from the symmetric
    // part, whose dominant diagonal is numerically stable.
    let sym = (r + r.transpose()) / 2.0 - Matrix3::identity() * c;
    let one_minus_c = 1.0 - c;
    let diag = [sym[(0, 0)], sym[(1, 1)], sym[(2, 2)]];
    let i = (0..3).max_by(|&a, &b| diag[a].total_cmp(&diag[b])).unwrap();
    let ai = (diag[i].max(0.0) / one_minus_c).sqrt();
    let mut axis = Vector3::zeros();
    axis[i] = ai;
    for j in 0..3 {
        if j != i {
            axis[j] = sym[(i, j)] / (one_minus_c * ai);
        }
    }
    axis.normalize_mut();
    // Align with the (tiny but sign-bearing) skew part when available,
    // otherwise pick a canonical sign.
    let sign = if sv.norm() > 1e-12 {
        if axis.dot(&sv) < 0.0 {
            -1.0
        } else {
            1.0
        }
    } else {
        let lead = (0..3).find(|&j| axis[j].abs() > 1e-3).unwrap_or(0);
        if axis[lead] < 0.0 {
            -1.0
        } else {
            1.0
        }
    };
    Ok(AxisAngle(axis * (sign * angle)))
}

/// The canonical rotation angle of a matrix, in `[0, pi]`.
pub fn rotation_angle(m: &RotMat) -> f64 {
    let r = &m.0;
    let sv = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    (sv.norm() / 2.0).atan2((r.trace() - 1.0) / 2.0)
}

/// Orthogonalizes a 6D representation into a rotation matrix (Gram-Schmidt on
/// the two columns, third column by cross product).
pub fn sixd_to_mat(r: &SixD) -> Result<RotMat, RotError> {
    let (m, _) = sixd_gram_schmidt(r)?;
    Ok(RotMat(m))
}

/// `sixd_to_mat` together with the analytic Jacobian `dR/dr_i` for each of
/// the six inputs.
pub fn sixd_to_mat_jacobian(r: &SixD) -> Result<(RotMat, [Matrix3<f64>; 6]), RotError> {
    let (m, parts) = sixd_gram_schmidt(r)?;
    let (b1, b2, n1, n2, p) = parts;
    let db1_da1 = (Matrix3::identity() - b1 * b1.transpose()) / n1;
    let du_db1 = -(b1 * parts_a2(r).transpose() + Matrix3::identity() * p);
    let du_da2 = Matrix3::identity() - b1 * b1.transpose();
    let db2_du = (Matrix3::identity() - b2 * b2.transpose()) / n2;
    let mut jac = [Matrix3::zeros(); 6];
    for i in 0..3 {
        let mut e = Vector3::zeros();
        e[i] = 1.0;
        let db1 = db1_da1 * e;
        let db2 = db2_du * (du_db1 * db1);
        let db3 = db1.cross(&b2) + b1.cross(&db2);
        jac[i] = Matrix3::from_columns(&[db1, db2, db3]);
    }
    for i in 0..3 {
        let mut e = Vector3::zeros();
        e[i] = 1.0;
        let db2 = db2_du * (du_da2 * e);
        let db3 = b1.cross(&db2);
        jac[i + 3] = Matrix3::from_columns(&[Vector3::zeros(), db2, db3]);
    }
    Ok((RotMat(m), jac))
}

fn parts_a2(r: &SixD) -> Vector3<f64> {
    r.col2()
}

#[allow(clippy::type_complexity)]
fn sixd_gram_schmidt(
    r: &SixD,
) -> Result<(Matrix3<f64>, (Vector3<f64>, Vector3<f64>, f64, f64, f64)), RotError> {
    let a1 = r.col1();
    let a2 = r.col2();
    let n1 = a1.norm();
    if n1 < SIXD_TOL {
        return Err(RotError::DegenerateSixD(n1));
    }
    let b1 = a1 / n1;
    let p = b1.dot(&a2);
    let u = a2 - b1 * p;
    let n2 = u.norm();
    if n2 < SIXD_TOL {
        return Err(RotError::DegenerateSixD(n2));
    }
    let b2 = u / n2;
    let b3 = b1.cross(&b2);
    Ok((Matrix3::from_columns(&[b1, b2, b3]), (b1, b2, n1, n2, p)))
}

/// Extracts the 6D representation (first two columns) of a rotation matrix.
pub fn mat_to_sixd(m: &RotMat) -> SixD {
    let r = &m.0;
    SixD([r[(0, 0)], r[(1, 0)], r[(2, 0)], r[(0, 1)], r[(1, 1)], r[(2, 1)]])
}

/// Builds a rotation from intrinsic X-Y-Z Euler angles:
/// `R = Rx(roll) * Ry(pitch) * Rz(yaw)`.
pub fn euler_to_mat(e: &EulerXYZ) -> RotMat {
    let (sa, ca) = e.roll_x.sin_cos();
    let (sb, cb) = e.pitch_y.sin_cos();
    let (sc, cc) = e.yaw_z.sin_cos();
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, ca, -sa, 0.0, sa, ca);
    let ry = Matrix3::new(cb, 0.0, sb, 0.0, 1.0, 0.0, -sb, 0.0, cb);
    let rz = Matrix3::new(cc, -sc, 0.0, sc, cc, 0.0, 0.0, 0.0, 1.0);
    RotMat(rx * ry * rz)
}

/// Decomposes a rotation into intrinsic X-Y-Z Euler angles.
///
/// At gimbal lock (`|pitch| = pi/2`) only the sum/difference of roll and yaw
/// is observable; the returned solution sets `roll_x = 0`, carries the whole
/// residual in `yaw_z` and flags `gimbal_lock`.
pub fn mat_to_euler(m: &RotMat) -> EulerXYZ {
    let r = &m.0;
    let s_pitch = r[(0, 2)].clamp(-1.0, 1.0);
    if 1.0 - s_pitch.abs() < 1e-12 {
        let pitch = if s_pitch > 0.0 { std::f64::consts::FRAC_PI_2 } else { -std::f64::consts::FRAC_PI_2 };
        return EulerXYZ {
            roll_x: 0.0,
            pitch_y: pitch,
            yaw_z: r[(1, 0)].atan2(r[(1, 1)]),
            gimbal_lock: true,
        };
    }
    EulerXYZ {
        roll_x: (-r[(1, 2)]).atan2(r[(2, 2)]),
        pitch_y: s_pitch.asin(),
        yaw_z: (-r[(0, 1)]).atan2(r[(0, 0)]),
        gimbal_lock: false,
    }
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut w = a.rem_euclid(two_pi);
    if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}

/// Circular mean of two angles via `atan2(sin a + sin b, cos a + cos b)`.
///
/// Fails with `AmbiguousMean` when the inputs are antipodal within 1e-9, where
/// both candidate midpoints are equally valid.
pub fn mean_angle(a: f64, b: f64) -> Result<f64, RotError> {
    let diff = wrap_angle(a - b);
    if (std::f64::consts::PI - diff.abs()).abs() < ANTIPODAL_TOL {
        return Err(RotError::AmbiguousMean);
    }
    Ok((a.sin() + b.sin()).atan2(a.cos() + b.cos()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::UnitQuaternion;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_aa(rng: &mut ChaCha8Rng, max_angle: f64) -> AxisAngle {
        // Uniform direction, uniform angle in (0, max_angle).
        loop {
            let v = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                let angle = rng.gen_range(1e-6..max_angle);
                return AxisAngle(v / n * angle);
            }
        }
    }

    fn mat_diff(a: &RotMat, b: &RotMat) -> f64 {
        (a.as_matrix() - b.as_matrix()).norm()
    }

    #[test]
    fn aa_to_mat_zero_is_identity() {
        let r = aa_to_mat(&AxisAngle::zero());
        assert_eq!(r.as_matrix(), &Matrix3::identity());
    }

    #[test]
    fn quarter_turn_about_z_maps_x_to_y() {
        let r = aa_to_mat(&AxisAngle::new(0.0, 0.0, PI / 2.0));
        let y = r.apply(&Vector3::x());
        assert_relative_eq!(y, Vector3::y(), epsilon = 1e-12);
    }

    // Composition oracle: an independent quaternion product must agree with
    // matrix composition.
    #[test]
    fn composition_matches_quaternion_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let a = random_aa(&mut rng, PI - 0.01);
            let b = random_aa(&mut rng, PI - 0.01);
            let composed = aa_to_mat(&a).compose(&aa_to_mat(&b));
            let qa = UnitQuaternion::from_scaled_axis(a.0);
            let qb = UnitQuaternion::from_scaled_axis(b.0);
            let oracle = (qa * qb).to_rotation_matrix();
            assert!((composed.as_matrix() - oracle.matrix()).norm() < 1e-12);
        }
    }

    #[test]
    fn aa_to_mat_matches_quaternion_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let v = random_aa(&mut rng, PI - 1e-6);
            let ours = aa_to_mat(&v);
            let oracle = UnitQuaternion::from_scaled_axis(v.0).to_rotation_matrix();
            assert!((ours.as_matrix() - oracle.matrix()).norm() < 1e-12);
        }
    }

    #[test]
    fn aa_round_trip_including_near_pi() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for i in 0..1000 {
            // A quarter of the draws sit within 1e-3 of pi to exercise the
            // dominant-diagonal branch.
            let max = if i % 4 == 0 { PI - 1e-12 } else { PI - 1e-3 };
            let v = if i % 4 == 0 {
                let d = random_aa(&mut rng, 1.0);
                AxisAngle(d.0 / d.0.norm() * rng.gen_range(PI - 1e-3..max))
            } else {
                random_aa(&mut rng, max)
            };
            let back = mat_to_aa(&aa_to_mat(&v)).unwrap();
            let err = (back.0 - v.0).norm().min((back.0 + v.0).norm());
            assert!(err < 1e-8, "round trip error {err:.3e} at angle {:.6}", v.angle());
            // The sign flip is only legitimate at angle pi itself.
            if (back.0 + v.0).norm() < (back.0 - v.0).norm() {
                assert!(v.angle() > PI - 1e-6);
            }
        }
    }

    #[test]
    fn aa_two_pi_shift_same_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..100 {
            let v = random_aa(&mut rng, PI - 0.01);
            let shifted = AxisAngle(v.0 * (1.0 + 2.0 * PI / v.0.norm()));
            assert!(mat_diff(&aa_to_mat(&v), &aa_to_mat(&shifted)) < 1e-9);
        }
    }

    #[test]
    fn produced_matrices_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..500 {
            let v = random_aa(&mut rng, PI);
            assert!(aa_to_mat(&v).orthonormality_deviation() < 1e-9);
            let r = SixD([
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ]);
            if let Ok(m) = sixd_to_mat(&r) {
                assert!(m.orthonormality_deviation() < 1e-9);
            }
        }
    }

    #[test]
    fn mat_to_aa_rejects_non_rotations() {
        let refl = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(RotMat::from_matrix(refl).is_err());
        let scaled = RotMat(Matrix3::identity() * 1.001);
        assert!(matches!(mat_to_aa(&scaled), Err(RotError::NotARotation(_))));
    }

    #[test]
    fn sixd_round_trip_and_scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..500 {
            let v = random_aa(&mut rng, PI - 0.01);
            let m = aa_to_mat(&v);
            let r = mat_to_sixd(&m);
            assert!(mat_diff(&sixd_to_mat(&r).unwrap(), &m) < 1e-9);
            let scale1 = rng.gen_range(0.1..10.0);
            let scale2 = rng.gen_range(0.1..10.0);
            let scaled = SixD([
                r.0[0] * scale1,
                r.0[1] * scale1,
                r.0[2] * scale1,
                r.0[3] * scale2,
                r.0[4] * scale2,
                r.0[5] * scale2,
            ]);
            assert!(mat_diff(&sixd_to_mat(&scaled).unwrap(), &m) < 1e-9);
        }
    }

    #[test]
    fn sixd_degenerate_inputs_rejected() {
        assert!(matches!(
            sixd_to_mat(&SixD([0.0; 6])),
            Err(RotError::DegenerateSixD(_))
        ));
        // Collinear columns.
        assert!(matches!(
            sixd_to_mat(&SixD([1.0, 0.0, 0.0, 2.0, 0.0, 0.0])),
            Err(RotError::DegenerateSixD(_))
        ));
    }

    #[test]
    fn aa_jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let h = 1e-6;
        for _ in 0..100 {
            let v = random_aa(&mut rng, PI - 0.05);
            let (_, jac) = aa_to_mat_jacobian(&v);
            for i in 0..3 {
                let mut vp = v;
                let mut vm = v;
                vp.0[i] += h;
                vm.0[i] -= h;
                let fd = (aa_to_mat(&vp).into_inner() - aa_to_mat(&vm).into_inner()) / (2.0 * h);
                let denom = fd.norm().max(jac[i].norm()).max(1e-6);
                assert!(
                    (jac[i] - fd).norm() / denom < 1e-4,
                    "component {i}: rel err {:.3e}",
                    (jac[i] - fd).norm() / denom
                );
            }
        }
    }

    #[test]
    fn sixd_jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let h = 1e-6;
        for _ in 0..100 {
            let r = SixD(std::array::from_fn(|_| rng.gen_range(-1.5..1.5)));
            let Ok((_, jac)) = sixd_to_mat_jacobian(&r) else { continue };
            for i in 0..6 {
                let mut rp = r;
                let mut rm = r;
                rp.0[i] += h;
                rm.0[i] -= h;
                let fd = (sixd_to_mat(&rp).unwrap().into_inner()
                    - sixd_to_mat(&rm).unwrap().into_inner())
                    / (2.0 * h);
                let denom = fd.norm().max(jac[i].norm()).max(1e-6);
                assert!(
                    (jac[i] - fd).norm() / denom < 1e-4,
                    "component {i}: rel err {:.3e}",
                    (jac[i] - fd).norm() / denom
                );
            }
        }
    }

    #[test]
    fn euler_round_trip_away_from_lock() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..500 {
            let e = EulerXYZ::new(
                rng.gen_range(-PI + 1e-3..PI - 1e-3),
                rng.gen_range(-PI / 2.0 + 1e-3..PI / 2.0 - 1e-3),
                rng.gen_range(-PI + 1e-3..PI - 1e-3),
            );
            let m = euler_to_mat(&e);
            let back = mat_to_euler(&m);
            assert!(!back.gimbal_lock);
            assert_relative_eq!(back.roll_x, e.roll_x, epsilon = 1e-8);
            assert_relative_eq!(back.pitch_y, e.pitch_y, epsilon = 1e-8);
            assert_relative_eq!(back.yaw_z, e.yaw_z, epsilon = 1e-8);
        }
    }

    #[test]
    fn gimbal_lock_flagged_with_roll_zero() {
        for sign in [1.0, -1.0] {
            let e = EulerXYZ::new(0.3, sign * PI / 2.0, 0.2);
            let m = euler_to_mat(&e);
            let d = mat_to_euler(&m);
            assert!(d.gimbal_lock);
            assert_eq!(d.roll_x, 0.0);
            // The lock solution must reproduce the same matrix.
            assert!(mat_diff(&euler_to_mat(&d), &m) < 1e-8);
        }
    }

    #[test]
    fn mean_angle_simple_and_wrapped() {
        assert_relative_eq!(mean_angle(0.2, 0.4).unwrap(), 0.3, epsilon = 1e-12);
        let m = mean_angle(PI - 0.1, -PI + 0.1).unwrap();
        assert!(
            (m - PI).abs() < 1e-9 || (m + PI).abs() < 1e-9,
            "wrapped mean must sit at +/- pi, got {m}"
        );
        assert!((wrap_angle(m).abs() - PI).abs() < 1e-9);
    }

    #[test]
    fn mean_angle_antipodal_is_ambiguous() {
        assert_eq!(mean_angle(0.0, PI), Err(RotError::AmbiguousMean));
        assert_eq!(mean_angle(-PI / 2.0, PI / 2.0), Err(RotError::AmbiguousMean));
        assert_eq!(mean_angle(1.0, 1.0 + PI), Err(RotError::AmbiguousMean));
    }

    #[test]
    fn rotation_angle_matches_axis_angle_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for _ in 0..200 {
            let v = random_aa(&mut rng, PI - 1e-6);
            assert_relative_eq!(rotation_angle(&aa_to_mat(&v)), v.angle(), epsilon = 1e-9);
        }
    }

    proptest! {
        #[test]
        fn prop_aa_round_trip(
            x in -1.0f64..1.0,
            y in -1.0f64..1.0,
            z in -1.0f64..1.0,
            scale in 1e-4f64..3.0,
        ) {
            let d = Vector3::new(x, y, z);
            prop_assume!(d.norm() > 1e-3);
            let angle = (scale).min(PI - 1e-6);
            let v = AxisAngle(d / d.norm() * angle);
            let back = mat_to_aa(&aa_to_mat(&v)).unwrap();
            prop_assert!((back.0 - v.0).norm() < 1e-8);
        }

        #[test]
        fn prop_mean_angle_lies_between(a in -3.0f64..3.0, b in -3.0f64..3.0) {
            prop_assume!((std::f64::consts::PI - wrap_angle(a - b).abs()).abs() > 1e-6);
            let m = mean_angle(a, b).unwrap();
            // The mean halves the wrapped difference on each side.
            let da = wrap_angle(a - m).abs();
            let db = wrap_angle(b - m).abs();
            prop_assert!((da - db).abs() < 1e-9);
            prop_assert!(da <= std::f64::consts::PI / 2.0 + 1e-9);
        }
    }
}
