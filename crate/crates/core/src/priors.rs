//! Pose-space embedding and regularizers: a PCA code over stacked joint
//! rotations, the Geman-McClure robust kernel, and the per-group weights
//! shared by the fitter and the trainer.

use crate::bodymodel::ModelParams;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Embedding file format version.
pub const EMBEDDING_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PriorError {
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("latent dimension {latent} must be in 1..={ambient}")]
    BadLatentDim { latent: usize, ambient: usize },
    #[error("sample {index} has {got} coordinates, expected {expected}")]
    RaggedData { index: usize, expected: usize, got: usize },
    #[error("unsupported embedding file (kind '{kind}', version {version})")]
    UnsupportedFormat { kind: String, version: u32 },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Linear PCA embedding: `encode` projects onto `latent_dim` orthonormal
/// principal directions around the sample mean, `decode` maps back.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcaEmbedding {
    /// Ambient dimension D.
    pub dim: usize,
    /// Latent dimension d.
    pub latent_dim: usize,
    /// Sample mean, length D.
    pub mean: Vec<f64>,
    /// Orthonormal rows, d x D, sorted by descending explained variance.
    pub basis: Vec<Vec<f64>>,
    /// Variance captured by each basis row.
    pub eigenvalues: Vec<f64>,
}

impl PcaEmbedding {
    /// Fits the embedding on row-per-sample data.
    ///
    /// Principal directions come from the eigendecomposition of the sample
    /// covariance, ordered by descending eigenvalue (index order on ties) and
    /// sign-fixed so each row's largest-magnitude entry is positive, making
    /// the result independent of the eigensolver's sign conventions.
    pub fn fit(data: &[Vec<f64>], latent_dim: usize) -> Result<Self, PriorError> {
        let n = data.len();
        if n < 2 {
            return Err(PriorError::TooFewSamples { need: 2, got: n });
        }
        let dim = data[0].len();
        for (index, row) in data.iter().enumerate() {
            if row.len() != dim {
                return Err(PriorError::RaggedData { index, expected: dim, got: row.len() });
            }
        }
        if latent_dim == 0 || latent_dim > dim {
            return Err(PriorError::BadLatentDim { latent: latent_dim, ambient: dim });
        }

        let mut mean = vec![0.0; dim];
        for row in data {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }

        let mut cov = DMatrix::<f64>::zeros(dim, dim);
        for row in data {
            let centered = DVector::from_iterator(dim, row.iter().zip(&mean).map(|(x, m)| x - m));
            cov += &centered * centered.transpose();
        }
        cov /= n as f64;

        let eig = cov.symmetric_eigen();
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });

        let mut basis = Vec::with_capacity(latent_dim);
        let mut eigenvalues = Vec::with_capacity(latent_dim);
        for &col in order.iter().take(latent_dim) {
            let mut row: Vec<f64> = eig.eigenvectors.column(col).iter().copied().collect();
            let lead = row
                .iter()
                .enumerate()
                .max_by(|(ia, a), (ib, b)| {
                    a.abs()
                        .partial_cmp(&b.abs())
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(ib.cmp(ia))
                })
                .map(|(_, v)| *v)
                .unwrap_or(0.0);
            if lead < 0.0 {
                for v in row.iter_mut() {
                    *v = -*v;
                }
            }
            basis.push(row);
            eigenvalues.push(eig.eigenvalues[col].max(0.0));
        }
        Ok(PcaEmbedding { dim, latent_dim, mean, basis, eigenvalues })
    }

    /// Projects an ambient vector to the latent code.
    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim, "ambient dimension");
        self.basis
            .iter()
            .map(|row| row.iter().zip(x).zip(&self.mean).map(|((b, xi), m)| b * (xi - m)).sum())
            .collect()
    }

    /// Reconstructs an ambient vector from a latent code.
    pub fn decode(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.latent_dim, "latent dimension");
        let mut out = self.mean.clone();
        for (row, zi) in self.basis.iter().zip(z) {
            for (o, b) in out.iter_mut().zip(row) {
                *o += b * zi;
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), PriorError> {
        let envelope = EmbeddingEnvelope {
            version: EMBEDDING_FORMAT_VERSION,
            kind: "pca-embedding".into(),
            embedding: self.clone(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&envelope)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PriorError> {
        let text = std::fs::read_to_string(path)?;
        let envelope: EmbeddingEnvelope = serde_json::from_str(&text)?;
        if envelope.kind != "pca-embedding" || envelope.version != EMBEDDING_FORMAT_VERSION {
            return Err(PriorError::UnsupportedFormat {
                kind: envelope.kind,
                version: envelope.version,
            });
        }
        Ok(envelope.embedding)
    }
}

#[derive(Serialize, Deserialize)]
struct EmbeddingEnvelope {
    version: u32,
    kind: String,
    embedding: PcaEmbedding,
}

/// Geman-McClure robust kernel `sigma^2 e^2 / (sigma^2 + e^2)`: quadratic
/// near zero, saturating at `sigma^2` for gross errors.
pub fn geman_mcclure(e: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    s2 * e * e / (s2 + e * e)
}

/// Derivative of [`geman_mcclure`] with respect to `e`.
pub fn geman_mcclure_grad(e: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    let denom = s2 + e * e;
    2.0 * s2 * s2 * e / (denom * denom)
}

/// Per-group squared-magnitude weights shared by the fitter's priors and the
/// trainer's regularizers. A zero weight leaves that group unconstrained.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct GroupWeights {
    /// Joint rotations (axis-angle coordinates or decoded rotations).
    pub rot: f64,
    /// Latent pose code.
    pub latent: f64,
    /// Shape coefficients.
    pub shape: f64,
    /// Expression coefficients.
    pub expr: f64,
    /// Global rotation; zero keeps orientation free to match the data.
    pub global_rot: f64,
    /// Weak-perspective camera parameters.
    pub cam: f64,
    /// Data-term weight used by the fitter.
    pub data: f64,
}

impl Default for GroupWeights {
    fn default() -> Self {
        GroupWeights {
            rot: 0.01,
            latent: 0.01,
            shape: 0.1,
            expr: 0.1,
            global_rot: 0.0,
            cam: 0.0,
            data: 1e6,
        }
    }
}

/// Weighted L2 prior over a full parameter set. Camera intrinsics are
/// penalized toward scale one and zero offset so the unit camera is the
/// prior's rest point.
pub fn l2_prior(params: &ModelParams, w: &GroupWeights) -> f64 {
    let mut total = w.global_rot * params.global_rot.0.norm_squared();
    for r in &params.joint_rots {
        total += w.rot * r.0.norm_squared();
    }
    for b in &params.beta {
        total += w.shape * b * b;
    }
    for p in &params.psi {
        total += w.expr * p * p;
    }
    let k = &params.camera;
    total += w.cam * ((k.s - 1.0) * (k.s - 1.0) + k.tx * k.tx + k.ty * k.ty);
    if let Some(z) = &params.latent {
        for zi in z {
            total += w.latent * zi * zi;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_orthonormal_rows(rng: &mut ChaCha8Rng, d: usize, dim: usize) -> Vec<Vec<f64>> {
        // QR of a random Gaussian matrix: the first d columns of Q are an
        // orthonormal frame independent of our fit under test.
        let g = DMatrix::<f64>::from_fn(dim, dim, |_, _| rng.sample(StandardNormal));
        let qr = g.qr();
        let q = qr.q();
        (0..d).map(|i| q.column(i).iter().copied().collect()).collect()
    }

    #[test]
    fn rank_one_data_recovers_the_line() {
        let dim = 9;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut direction: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm: f64 = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in direction.iter_mut() {
            *v /= norm;
        }
        let mean: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let data: Vec<Vec<f64>> = (0..40)
            .map(|_| {
                let t: f64 = rng.gen_range(-2.0..2.0);
                mean.iter().zip(&direction).map(|(m, d)| m + t * d).collect()
            })
            .collect();
        let emb = PcaEmbedding::fit(&data, 1).unwrap();
        // Same line up to sign; the fit's sign convention is canonical.
        let dot: f64 = emb.basis[0].iter().zip(&direction).map(|(a, b)| a * b).sum();
        assert!(dot.abs() > 1.0 - 1e-9);
        // Every sample reconstructs exactly: the data is rank one.
        for row in &data {
            let rec = emb.decode(&emb.encode(row));
            for (a, b) in rec.iter().zip(row) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn encode_decode_round_trips_latent_codes() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let dim = 12;
        let d = 4;
        let data: Vec<Vec<f64>> =
            (0..100).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let emb = PcaEmbedding::fit(&data, d).unwrap();
        for _ in 0..50 {
            let z: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let z2 = emb.encode(&emb.decode(&z));
            for (a, b) in z2.iter().zip(&z) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn decode_encode_is_an_orthogonal_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let dim = 10;
        let data: Vec<Vec<f64>> =
            (0..80).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let emb = PcaEmbedding::fit(&data, 3).unwrap();
        for _ in 0..30 {
            let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let p1 = emb.decode(&emb.encode(&x));
            let p2 = emb.decode(&emb.encode(&p1));
            for (a, b) in p1.iter().zip(&p2) {
                assert!((a - b).abs() < 1e-10);
            }
            // Residual orthogonal to the subspace: projecting it gives the
            // mean back.
            let resid: Vec<f64> = x.iter().zip(&p1).map(|(a, b)| a - b).collect();
            let z = emb.encode(&resid.iter().zip(&emb.mean).map(|(r, m)| r + m).collect::<Vec<_>>());
            assert!(z.iter().all(|v| v.abs() < 1e-10));
        }
    }

    // Planted-subspace oracle: data drawn exactly from a known random
    // orthonormal frame must be reproduced by the fitted projector.
    #[test]
    fn planted_subspaces_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for trial in 0..100 {
            let dim = rng.gen_range(4usize..14);
            let d = rng.gen_range(1..=3usize.min(dim - 1));
            let frame = random_orthonormal_rows(&mut rng, d, dim);
            let mean: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let data: Vec<Vec<f64>> = (0..60 + 10 * d)
                .map(|_| {
                    let z: Vec<f64> =
                        (0..d).map(|i| rng.gen_range(-1.0..1.0) * (3.0 - i as f64)).collect();
                    (0..dim)
                        .map(|k| {
                            mean[k] + frame.iter().zip(&z).map(|(f, zi)| f[k] * zi).sum::<f64>()
                        })
                        .collect()
                })
                .collect();
            let emb = PcaEmbedding::fit(&data, d).unwrap();
            // Compare projectors, not bases: the span is the invariant.
            let planted = projector(&frame, dim);
            let fitted = projector(&emb.basis, dim);
            let diff: f64 = planted
                .iter()
                .zip(&fitted)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(diff < 1e-8, "trial {trial}: projector mismatch {diff}");
            // Basis rows orthonormal and sign-canonical.
            for (i, ri) in emb.basis.iter().enumerate() {
                for (jj, rj) in emb.basis.iter().enumerate() {
                    let dot: f64 = ri.iter().zip(rj).map(|(a, b)| a * b).sum();
                    let want = if i == jj { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-9);
                }
                let lead = ri.iter().cloned().fold(0.0f64, |acc, v| {
                    if v.abs() > acc.abs() {
                        v
                    } else {
                        acc
                    }
                });
                assert!(lead > 0.0);
            }
        }
    }

    fn projector(rows: &[Vec<f64>], dim: usize) -> Vec<f64> {
        let mut p = vec![0.0; dim * dim];
        for row in rows {
            for i in 0..dim {
                for jj in 0..dim {
                    p[i * dim + jj] += row[i] * row[jj];
                }
            }
        }
        p
    }

    #[test]
    fn fit_rejects_bad_inputs() {
        assert!(matches!(
            PcaEmbedding::fit(&[vec![1.0, 2.0]], 1),
            Err(PriorError::TooFewSamples { .. })
        ));
        assert!(matches!(
            PcaEmbedding::fit(&[vec![1.0, 2.0], vec![3.0]], 1),
            Err(PriorError::RaggedData { .. })
        ));
        assert!(matches!(
            PcaEmbedding::fit(&[vec![1.0, 2.0], vec![3.0, 4.0]], 3),
            Err(PriorError::BadLatentDim { .. })
        ));
    }

    #[test]
    fn geman_mcclure_shape_and_gradient() {
        let sigma = 0.1;
        assert_eq!(geman_mcclure(0.0, sigma), 0.0);
        // Half saturation exactly at e = sigma.
        assert!((geman_mcclure(sigma, sigma) - sigma * sigma / 2.0).abs() < 1e-15);
        // Monotone in |e| and bounded by sigma^2.
        let mut prev = 0.0;
        for i in 1..200 {
            let e = i as f64 * 0.05;
            let v = geman_mcclure(e, sigma);
            assert!(v > prev && v < sigma * sigma);
            prev = v;
        }
        // Gradient against central differences.
        let h = 1e-7;
        for &e in &[-2.0, -0.3, -0.05, 0.02, 0.1, 0.7, 5.0] {
            let fd = (geman_mcclure(e + h, sigma) - geman_mcclure(e - h, sigma)) / (2.0 * h);
            let an = geman_mcclure_grad(e, sigma);
            assert!((fd - an).abs() < 1e-6 * fd.abs().max(1e-3), "e={e}: {an} vs {fd}");
        }
    }

    #[test]
    fn prior_is_zero_at_rest_and_counts_each_group() {
        use crate::bodymodel::PartKind;
        let w = GroupWeights::default();
        let rest = ModelParams::zero(PartKind::Body);
        assert_eq!(l2_prior(&rest, &w), 0.0);

        let mut p = rest.clone();
        p.joint_rots[3] = crate::rotmath::AxisAngle::new(0.2, 0.0, -0.1);
        let rot_only = l2_prior(&p, &w);
        assert!((rot_only - 0.01 * (0.04 + 0.01)).abs() < 1e-15);

        p.beta[0] = 2.0;
        assert!((l2_prior(&p, &w) - rot_only - 0.1 * 4.0).abs() < 1e-12);

        // Global rotation and camera are unpenalized by default.
        p.global_rot = crate::rotmath::AxisAngle::new(9.0, 9.0, 9.0);
        p.camera = crate::camera::WeakPerspective::new(55.0, -3.0, 8.0);
        assert!((l2_prior(&p, &w) - rot_only - 0.4).abs() < 1e-12);

        p.latent = Some(vec![1.0, -2.0]);
        assert!((l2_prior(&p, &w) - rot_only - 0.4 - 0.01 * 5.0).abs() < 1e-12);
    }
}
