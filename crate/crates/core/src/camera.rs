//! Weak-perspective camera, rigid extrinsics and point-set alignment.
//!
//! The camera is the standard weak-perspective triple `k = (s, tx, ty)`:
//! a point projects to `s * (x, y) + (tx, ty)`, depth is dropped. Rigid
//! alignment (Kabsch) and similarity alignment (Umeyama) both run on an SVD
//! of the 3x3 cross-covariance with the usual determinant sign fix, so the
//! returned rotation is always proper even when a reflection would fit
//! better.

use crate::rotmath::RotMat;
use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("point sets have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("degenerate configuration: cross-covariance rank < 2")]
    DegenerateConfiguration,
}

/// Weak-perspective camera `k = (s, tx, ty)`: uniform image scale plus a 2D
/// image-plane translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakPerspective {
    pub s: f64,
    pub tx: f64,
    pub ty: f64,
}

impl WeakPerspective {
    pub fn new(s: f64, tx: f64, ty: f64) -> Self {
        WeakPerspective { s, tx, ty }
    }

    pub fn project_point(&self, p: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.s * p.x + self.tx, self.s * p.y + self.ty)
    }
}

/// Projects a set of 3D points with a weak-perspective camera.
pub fn project(points: &[Vector3<f64>], k: &WeakPerspective) -> Vec<Vector2<f64>> {
    points.iter().map(|p| k.project_point(p)).collect()
}

/// Rigid transform `x -> R x + t` mapping model coordinates into dataset
/// coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extrinsics {
    pub rot: RotMat,
    pub t: Vector3<f64>,
}

impl Extrinsics {
    pub fn identity() -> Self {
        Extrinsics { rot: RotMat::identity(), t: Vector3::zeros() }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rot.apply(p) + self.t
    }
}

/// Similarity transform `x -> scale * R x + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rot: RotMat,
    pub t: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rot.apply(p) * self.scale + self.t
    }
}

struct KabschParts {
    rot: Matrix3<f64>,
    src_centroid: Vector3<f64>,
    dst_centroid: Vector3<f64>,
    sign_fixed_singular_sum: f64,
    src_variance: f64,
}

/// Shared Kabsch core: cross-covariance SVD with determinant sign fix.
fn kabsch_parts(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<KabschParts, GeomError> {
    if src.len() != dst.len() {
        return Err(GeomError::LengthMismatch(src.len(), dst.len()));
    }
    if src.len() < 3 {
        return Err(GeomError::TooFewPoints { need: 3, got: src.len() });
    }
    let n = src.len() as f64;
    let src_centroid = src.iter().sum::<Vector3<f64>>() / n;
    let dst_centroid = dst.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    let mut src_variance = 0.0;
    for (p, q) in src.iter().zip(dst) {
        let pc = p - src_centroid;
        let qc = q - dst_centroid;
        h += pc * qc.transpose();
        src_variance += pc.norm_squared();
    }
    let svd = h.svd(true, true);
    let sigma = svd.singular_values;
    if sigma[1] <= 1e-12 * sigma[0].max(1e-12) {
        return Err(GeomError::DegenerateConfiguration);
    }
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let v = v_t.transpose();
    // Sign fix on the smallest singular direction keeps det(R) = +1.
    let d = (v * u.transpose()).determinant().signum();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let rot = v * fix * u.transpose();
    let sign_fixed_singular_sum = sigma[0] + sigma[1] + d * sigma[2];
    Ok(KabschParts { rot, src_centroid, dst_centroid, sign_fixed_singular_sum, src_variance })
}

/// Least-squares rigid alignment (Kabsch): the `(R, t)` minimizing
/// `sum |R p_i + t - q_i|^2` over proper rotations.
///
/// Used to initialize fitting extrinsics from the named init joints. Fails on
/// mismatched or too-few points and on configurations whose cross-covariance
/// has rank < 2 (collinear or coincident point sets).
pub fn init_extrinsics_svd(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
) -> Result<Extrinsics, GeomError> {
    let parts = kabsch_parts(src, dst)?;
    let t = parts.dst_centroid - parts.rot * parts.src_centroid;
    Ok(Extrinsics { rot: RotMat::from_matrix_unchecked(parts.rot), t })
}

/// Least-squares similarity alignment (Umeyama): scale, rotation and
/// translation minimizing `sum |s R p_i + t - q_i|^2`.
pub fn similarity_align(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
) -> Result<Similarity, GeomError> {
    let parts = kabsch_parts(src, dst)?;
    if parts.src_variance <= 0.0 {
        return Err(GeomError::DegenerateConfiguration);
    }
    let scale = parts.sign_fixed_singular_sum / parts.src_variance;
    let t = parts.dst_centroid - parts.rot * parts.src_centroid * scale;
    Ok(Similarity { scale, rot: RotMat::from_matrix_unchecked(parts.rot), t })
}
