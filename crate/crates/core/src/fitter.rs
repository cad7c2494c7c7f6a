//! Per-sample parameter fitting against 3D joints or 2D keypoints.
//!
//! Both entry points minimize a robust data term plus the shared L2 priors
//! with the backtracking Adam loop from [`crate::optim`]:
//!
//! * [`fit_3d`] matches evaluation joints to metric 3D targets. Extrinsics
//!   are seeded by rigid alignment on the model's named init joints; the
//!   targets are pulled back into the model frame once, and the residual
//!   rigid motion is carried by the global orientation plus a translation
//!   refinement that is folded into the reported extrinsics.
//! * [`fit_2d`] matches weak-perspective projections to pixel keypoints,
//!   with the pose parameterized through a low-dimensional embedding.
//!
//! Fits are independent per sample; [`fit_dataset`] fans them out across a
//! worker pool.

use nalgebra::{Matrix3, Vector2, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::bodymodel::{
    backward_joints, forward_joints, model_forward, rest_joints, shape_rest, KinematicModel,
    ModelParams, PoseGrad, EXPR_DIM, SHAPE_DIM,
};
use crate::camera::{init_extrinsics_svd, Extrinsics, WeakPerspective};
use crate::dataset::{Dataset, Supervision};
use crate::optim::{minimize, AdamParams, MinimizeConfig, Objective};
use crate::priors::{geman_mcclure, GroupWeights, PcaEmbedding};
use crate::rotmath::{aa_to_mat, aa_to_mat_jacobian, mat_to_aa, AxisAngle, RotMat};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FitError {
    #[error("too few usable joints: need {needed}, got {got}")]
    TooFewJoints { needed: usize, got: usize },
    #[error("degenerate initialization: {0}")]
    DegenerateConfiguration(String),
    #[error("2D fitting requires a pose embedding")]
    MissingEmbedding,
    #[error("bad fit input: {0}")]
    BadInput(String),
}

/// Optimization schedule and weights for one fit.
#[derive(Debug, Clone)]
pub struct FitConfig {
    /// Geman-McClure scale, in the unit of the data term (meters for 3D,
    /// pixels for 2D).
    pub sigma: f64,
    pub weights: GroupWeights,
    /// Iterations for the first stage (global orientation and
    /// camera/translation only).
    pub stage1_iters: usize,
    /// Iterations for the second stage (all parameters).
    pub stage2_iters: usize,
    /// Relative objective decrease under which iterations count as stalled.
    pub tol_rel: f64,
    /// Adam step size.
    pub lr: f64,
}

impl FitConfig {
    /// Defaults for metric 3D fitting: sigma 0.1 m, data weight 1e6.
    pub fn for_3d() -> Self {
        FitConfig {
            sigma: 0.1,
            weights: GroupWeights::default(),
            stage1_iters: 200,
            stage2_iters: 6000,
            tol_rel: 1e-14,
            lr: 0.05,
        }
    }

    /// Defaults for pixel 2D fitting: sigma 100 px, unit data weight.
    pub fn for_2d() -> Self {
        FitConfig {
            sigma: 100.0,
            weights: GroupWeights { data: 1.0, ..GroupWeights::default() },
            stage1_iters: 300,
            stage2_iters: 24000,
            tol_rel: 1e-14,
            lr: 0.1,
        }
    }
}

/// Objective decomposition at the returned parameters.
#[derive(Debug, Clone, Copy)]
pub struct FitBreakdown {
    pub data: f64,
    pub prior: f64,
    pub total: f64,
}

/// Result of one fit.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub params: ModelParams,
    /// 3D mode only: rigid map from the posed model to the target frame that
    /// remains after the fitted global orientation absorbed the
    /// initialization rotation. Pure translation up to round-off.
    pub extrinsics: Option<Extrinsics>,
    /// Objective at the start and after every accepted step; non-increasing.
    pub trace: Vec<f64>,
    pub breakdown: FitBreakdown,
    pub iterations: usize,
    pub converged: bool,
}

/// Derivative of the robust data penalty with respect to the residual
/// vector, divided by the residual: d rho(|r|)/dr = gm_over_e(|r|) * r.
/// Smooth at r = 0.
fn gm_grad_over_e(e: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    let denom = s2 + e * e;
    2.0 * s2 * s2 / (denom * denom)
}

/// Coordinate layout shared by both objectives. The 3D layout carries
/// explicit per-joint rotations and a translation refinement; the 2D layout
/// replaces them with the embedding code and the camera.
#[derive(Debug, Clone, Copy)]
struct Layout {
    num_rot_coords: usize,
    has_expr: bool,
    /// Latent dimension (2D mode), zero in 3D mode.
    latent_dim: usize,
    /// True when the vector ends with [s, tx, ty].
    has_camera: bool,
    /// True when coordinates 3..6 are a model-frame translation refinement.
    has_delta: bool,
}

impl Layout {
    fn dim(&self) -> usize {
        3 + if self.has_delta { 3 } else { 0 }
            + self.num_rot_coords
            + self.latent_dim
            + SHAPE_DIM
            + if self.has_expr { EXPR_DIM } else { 0 }
            + if self.has_camera { 3 } else { 0 }
    }

    fn delta_range(&self) -> std::ops::Range<usize> {
        3..6
    }

    fn rot_range(&self) -> std::ops::Range<usize> {
        let start = if self.has_delta { 6 } else { 3 };
        start..start + self.num_rot_coords
    }

    fn latent_range(&self) -> std::ops::Range<usize> {
        let start = self.rot_range().end;
        start..start + self.latent_dim
    }

    fn beta_range(&self) -> std::ops::Range<usize> {
        let start = self.latent_range().end;
        start..start + SHAPE_DIM
    }

    fn psi_range(&self) -> std::ops::Range<usize> {
        let start = self.beta_range().end;
        start..start + if self.has_expr { EXPR_DIM } else { 0 }
    }

    fn cam_range(&self) -> std::ops::Range<usize> {
        let start = self.psi_range().end;
        start..start + if self.has_camera { 3 } else { 0 }
    }
}

/// 3D data term against targets already pulled back into the model frame.
struct Objective3d<'a> {
    model: &'a KinematicModel,
    targets: &'a [Vector3<f64>],
    visible: &'a [bool],
    cfg: &'a FitConfig,
    layout: Layout,
}

impl Objective3d<'_> {
    fn unpack(&self, x: &[f64]) -> (RotMat, Vec<RotMat>, Vector3<f64>, Vec<f64>, Vec<f64>) {
        let l = &self.layout;
        let global = aa_to_mat(&AxisAngle::new(x[0], x[1], x[2]));
        let delta = Vector3::new(x[3], x[4], x[5]);
        let rots: Vec<RotMat> = x[l.rot_range()]
            .chunks_exact(3)
            .map(|c| aa_to_mat(&AxisAngle::new(c[0], c[1], c[2])))
            .collect();
        let beta = x[l.beta_range()].to_vec();
        let psi = if l.has_expr { x[l.psi_range()].to_vec() } else { vec![0.0; EXPR_DIM] };
        (global, rots, delta, beta, psi)
    }

    fn terms(&self, x: &[f64]) -> (f64, f64) {
        let (global, rots, delta, beta, psi) = self.unpack(x);
        let cache = forward_joints(self.model, &global, &rots, &beta, &psi)
            .expect("layout matches model");
        let w = &self.cfg.weights;
        let mut data = 0.0;
        for (k, q) in self.targets.iter().enumerate() {
            if !self.visible[k] {
                continue;
            }
            let r = cache.joints3d[k] + delta - q;
            data += w.data * geman_mcclure(r.norm(), self.cfg.sigma);
        }
        (data, self.prior_terms(x))
    }

    fn prior_terms(&self, x: &[f64]) -> f64 {
        let l = &self.layout;
        let w = &self.cfg.weights;
        let mut prior = w.global_rot * x[..3].iter().map(|v| v * v).sum::<f64>();
        prior += w.rot * x[l.rot_range()].iter().map(|v| v * v).sum::<f64>();
        prior += w.shape * x[l.beta_range()].iter().map(|v| v * v).sum::<f64>();
        if l.has_expr {
            prior += w.expr * x[l.psi_range()].iter().map(|v| v * v).sum::<f64>();
        }
        prior
    }
}

impl Objective for Objective3d<'_> {
    fn eval(&self, x: &[f64]) -> f64 {
        let (data, prior) = self.terms(x);
        data + prior
    }

    fn eval_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let l = self.layout;
        grad.fill(0.0);
        let (g_aa, jac_g) = aa_to_mat_jacobian(&AxisAngle::new(x[0], x[1], x[2]));
        let delta = Vector3::new(x[3], x[4], x[5]);
        let rot_x = &x[l.rot_range()];
        let mut rots = Vec::with_capacity(l.num_rot_coords / 3);
        let mut jacs = Vec::with_capacity(l.num_rot_coords / 3);
        for c in rot_x.chunks_exact(3) {
            let (r, j) = aa_to_mat_jacobian(&AxisAngle::new(c[0], c[1], c[2]));
            rots.push(r);
            jacs.push(j);
        }
        let beta = x[l.beta_range()].to_vec();
        let psi = if l.has_expr { x[l.psi_range()].to_vec() } else { vec![0.0; EXPR_DIM] };
        let cache = forward_joints(self.model, &g_aa, &rots, &beta, &psi)
            .expect("layout matches model");

        let w = &self.cfg.weights;
        let mut data = 0.0;
        let mut d_joints = vec![Vector3::zeros(); self.targets.len()];
        let mut d_delta = Vector3::zeros();
        for (k, q) in self.targets.iter().enumerate() {
            if !self.visible[k] {
                continue;
            }
            let r = cache.joints3d[k] + delta - q;
            let e = r.norm();
            data += w.data * geman_mcclure(e, self.cfg.sigma);
            let dj = r * (w.data * gm_grad_over_e(e, self.cfg.sigma));
            d_joints[k] = dj;
            d_delta += dj;
        }
        let pg: PoseGrad = backward_joints(self.model, &cache, &d_joints);

        for i in 0..3 {
            grad[i] = jac_g[i].component_mul(&pg.d_global).sum();
        }
        grad[l.delta_range()].copy_from_slice(d_delta.as_slice());
        let rot_start = l.rot_range().start;
        for (j, jac) in jacs.iter().enumerate() {
            for i in 0..3 {
                grad[rot_start + 3 * j + i] = jac[i].component_mul(&pg.d_locals[j]).sum();
            }
        }
        grad[l.beta_range()].copy_from_slice(&pg.d_beta);
        if l.has_expr {
            grad[l.psi_range()].copy_from_slice(&pg.d_psi);
        }

        // Priors: quadratic per group, gradient 2*lambda*theta.
        let mut prior = 0.0;
        let mut add_group = |range: std::ops::Range<usize>, lambda: f64| {
            for i in range {
                prior += lambda * x[i] * x[i];
                grad[i] += 2.0 * lambda * x[i];
            }
        };
        add_group(0..3, w.global_rot);
        add_group(l.rot_range(), w.rot);
        add_group(l.beta_range(), w.shape);
        if l.has_expr {
            add_group(l.psi_range(), w.expr);
        }
        data + prior
    }
}

/// 2D reprojection term with the pose decoded from an embedding code.
struct Objective2d<'a> {
    model: &'a KinematicModel,
    emb: &'a PcaEmbedding,
    targets: &'a [Vector2<f64>],
    visible: &'a [bool],
    cfg: &'a FitConfig,
    layout: Layout,
}

impl Objective2d<'_> {
    fn decode_rots(&self, z: &[f64]) -> (Vec<f64>, Vec<RotMat>, Vec<[Matrix3<f64>; 3]>) {
        let theta = self.emb.decode(z);
        let mut rots = Vec::with_capacity(theta.len() / 3);
        let mut jacs = Vec::with_capacity(theta.len() / 3);
        for c in theta.chunks_exact(3) {
            let (r, j) = aa_to_mat_jacobian(&AxisAngle::new(c[0], c[1], c[2]));
            rots.push(r);
            jacs.push(j);
        }
        (theta, rots, jacs)
    }

    fn prior_terms(&self, x: &[f64]) -> f64 {
        let l = &self.layout;
        let w = &self.cfg.weights;
        let mut prior = w.global_rot * x[..3].iter().map(|v| v * v).sum::<f64>();
        prior += w.latent * x[l.latent_range()].iter().map(|v| v * v).sum::<f64>();
        prior += w.shape * x[l.beta_range()].iter().map(|v| v * v).sum::<f64>();
        if l.has_expr {
            prior += w.expr * x[l.psi_range()].iter().map(|v| v * v).sum::<f64>();
        }
        let cam = &x[l.cam_range()];
        prior += w.cam * ((cam[0] - 1.0) * (cam[0] - 1.0) + cam[1] * cam[1] + cam[2] * cam[2]);
        prior
    }

    fn terms(&self, x: &[f64]) -> (f64, f64) {
        let l = &self.layout;
        let global = aa_to_mat(&AxisAngle::new(x[0], x[1], x[2]));
        let (_, rots, _) = self.decode_rots(&x[l.latent_range()]);
        let beta = x[l.beta_range()].to_vec();
        let psi = if l.has_expr { x[l.psi_range()].to_vec() } else { vec![0.0; EXPR_DIM] };
        let cache = forward_joints(self.model, &global, &rots, &beta, &psi)
            .expect("layout matches model");
        let cam = &x[l.cam_range()];
        let w = &self.cfg.weights;
        let mut data = 0.0;
        for (k, q) in self.targets.iter().enumerate() {
            if !self.visible[k] {
                continue;
            }
            let j = &cache.joints3d[k];
            let p = Vector2::new(cam[0] * j.x + cam[1], cam[0] * j.y + cam[2]);
            data += w.data * geman_mcclure((p - q).norm(), self.cfg.sigma);
        }
        (data, self.prior_terms(x))
    }
}

impl Objective for Objective2d<'_> {
    fn eval(&self, x: &[f64]) -> f64 {
        let (data, prior) = self.terms(x);
        data + prior
    }

    fn eval_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let l = self.layout;
        grad.fill(0.0);
        let (global, jac_g) = aa_to_mat_jacobian(&AxisAngle::new(x[0], x[1], x[2]));
        let (_, rots, jacs) = self.decode_rots(&x[l.latent_range()]);
        let beta = x[l.beta_range()].to_vec();
        let psi = if l.has_expr { x[l.psi_range()].to_vec() } else { vec![0.0; EXPR_DIM] };
        let cache = forward_joints(self.model, &global, &rots, &beta, &psi)
            .expect("layout matches model");
        let cam = &x[l.cam_range()];
        let (s, tx, ty) = (cam[0], cam[1], cam[2]);

        let w = &self.cfg.weights;
        let mut data = 0.0;
        let mut d_joints = vec![Vector3::zeros(); self.targets.len()];
        let (mut ds, mut dtx, mut dty) = (0.0, 0.0, 0.0);
        for (k, q) in self.targets.iter().enumerate() {
            if !self.visible[k] {
                continue;
            }
            let j = &cache.joints3d[k];
            let p = Vector2::new(s * j.x + tx, s * j.y + ty);
            let r = p - q;
            let e = r.norm();
            data += w.data * geman_mcclure(e, self.cfg.sigma);
            let dp = r * (w.data * gm_grad_over_e(e, self.cfg.sigma));
            d_joints[k] = Vector3::new(s * dp.x, s * dp.y, 0.0);
            ds += dp.x * j.x + dp.y * j.y;
            dtx += dp.x;
            dty += dp.y;
        }
        let pg = backward_joints(self.model, &cache, &d_joints);

        for i in 0..3 {
            grad[i] = jac_g[i].component_mul(&pg.d_global).sum();
        }
        // Rotation gradient pulled back through the decode map
        // theta = mu + B^T z, so dL/dz = B * dL/dtheta.
        let mut d_theta = vec![0.0; self.emb.dim];
        for (j, jac) in jacs.iter().enumerate() {
            for i in 0..3 {
                d_theta[3 * j + i] = jac[i].component_mul(&pg.d_locals[j]).sum();
            }
        }
        let z_start = l.latent_range().start;
        for (zi, row) in self.emb.basis.iter().enumerate() {
            grad[z_start + zi] = row.iter().zip(&d_theta).map(|(b, d)| b * d).sum();
        }
        grad[l.beta_range()].copy_from_slice(&pg.d_beta);
        if l.has_expr {
            grad[l.psi_range()].copy_from_slice(&pg.d_psi);
        }
        let cam_start = l.cam_range().start;
        grad[cam_start] = ds;
        grad[cam_start + 1] = dtx;
        grad[cam_start + 2] = dty;

        let mut prior = 0.0;
        let mut add_group = |range: std::ops::Range<usize>, lambda: f64| {
            for i in range {
                prior += lambda * x[i] * x[i];
                grad[i] += 2.0 * lambda * x[i];
            }
        };
        add_group(0..3, w.global_rot);
        add_group(l.latent_range(), w.latent);
        add_group(l.beta_range(), w.shape);
        if l.has_expr {
            add_group(l.psi_range(), w.expr);
        }
        prior += w.cam * ((s - 1.0) * (s - 1.0) + tx * tx + ty * ty);
        grad[cam_start] += 2.0 * w.cam * (s - 1.0);
        grad[cam_start + 1] += 2.0 * w.cam * tx;
        grad[cam_start + 2] += 2.0 * w.cam * ty;
        data + prior
    }
}

fn minimize_config(cfg: &FitConfig, iters: usize, lr: f64) -> MinimizeConfig {
    MinimizeConfig {
        adam: AdamParams { lr, ..AdamParams::default() },
        max_iters: iters,
        tol_rel: cfg.tol_rel,
        patience: 40,
        ..MinimizeConfig::default()
    }
}

/// Stage-two rounds: the iteration budget is spent in restarted chunks.
const STAGE2_ROUNDS: usize = 6;

/// Runs the two-stage schedule and concatenates the traces. Stage two starts
/// from the stage-one minimizer and restarts the optimizer several times
/// along the way: a restart drops the accumulated moments and the annealed
/// backtracking state, which frees the weakly determined coordinates (held
/// only by the priors) to keep moving after the data-critical coordinates
/// have pinned the step size down. Every round starts from the previous
/// round's minimizer, so the joined trace stays non-increasing.
fn two_stage(
    obj: &dyn Objective,
    x0: Vec<f64>,
    stage1_active: Vec<bool>,
    cfg: &FitConfig,
) -> (Vec<f64>, Vec<f64>, usize, bool) {
    let r1 = minimize(obj, &x0, &stage1_active, &minimize_config(cfg, cfg.stage1_iters, cfg.lr));
    let all = vec![true; x0.len()];
    let mut trace = r1.trace;
    let mut iterations = r1.iterations;
    let mut x = r1.x;
    let mut converged = false;
    let per_round = (cfg.stage2_iters / STAGE2_ROUNDS).max(1);
    for _ in 0..STAGE2_ROUNDS {
        let r = minimize(obj, &x, &all, &minimize_config(cfg, per_round, cfg.lr));
        trace.extend_from_slice(&r.trace[1..]);
        iterations += r.iterations;
        x = r.x;
        converged = r.converged;
    }
    (x, trace, iterations, converged)
}

/// Selects the joints used for rigid initialization: the model's named init
/// joints when at least three are visible, otherwise all visible joints.
fn init_selection(model: &KinematicModel, visible: &[bool]) -> Vec<usize> {
    let named: Vec<usize> = model
        .init_eval_joints
        .iter()
        .copied()
        .filter(|&k| visible[k])
        .collect();
    if named.len() >= 3 {
        named
    } else {
        (0..visible.len()).filter(|&k| visible[k]).collect()
    }
}

/// Fits all parameters to metric 3D evaluation-joint targets, starting from
/// the zero pose.
pub fn fit_3d(
    model: &KinematicModel,
    targets: &[Vector3<f64>],
    visible: &[bool],
    cfg: &FitConfig,
) -> Result<FitReport, FitError> {
    fit_3d_from(model, targets, visible, cfg, &ModelParams::zero(model.part))
}

/// [`fit_3d`] from an explicit starting estimate.
pub fn fit_3d_from(
    model: &KinematicModel,
    targets: &[Vector3<f64>],
    visible: &[bool],
    cfg: &FitConfig,
    init: &ModelParams,
) -> Result<FitReport, FitError> {
    let k = model.num_eval_joints();
    if targets.len() != k || visible.len() != k {
        return Err(FitError::BadInput(format!(
            "expected {k} targets and flags, got {} and {}",
            targets.len(),
            visible.len()
        )));
    }
    init.validate_for(model).map_err(|e| FitError::BadInput(e.to_string()))?;
    let num_visible = visible.iter().filter(|&&v| v).count();
    if num_visible < 3 {
        return Err(FitError::TooFewJoints { needed: 3, got: num_visible });
    }

    // Rigid seed: align the initial pose's joints to the targets over the
    // init selection, then pull the targets back into the model frame so the
    // optimization never sees the world rotation.
    let init_joints = model_forward(model, init).map_err(|e| FitError::BadInput(e.to_string()))?;
    let sel = init_selection(model, visible);
    let src: Vec<Vector3<f64>> = sel.iter().map(|&i| init_joints.joints3d[i]).collect();
    let dst: Vec<Vector3<f64>> = sel.iter().map(|&i| targets[i]).collect();
    let ext = init_extrinsics_svd(&src, &dst)
        .map_err(|e| FitError::DegenerateConfiguration(e.to_string()))?;
    let r0_inv = ext.rot.inverse();
    // Pulled-back targets are rounded to a nanometer grid: rigidly
    // equivalent target sets then produce bit-identical problems (the
    // alignment itself is exact only to round-off), so the fitted pose
    // cannot depend on the world frame.
    let pulled: Vec<Vector3<f64>> = targets
        .iter()
        .map(|q| (r0_inv.apply(&(q - ext.t)) * 1e9).map(f64::round) * 1e-9)
        .collect();

    let layout = Layout {
        num_rot_coords: 3 * (model.num_joints() - 1),
        has_expr: model.has_expressions(),
        latent_dim: 0,
        has_camera: false,
        has_delta: true,
    };
    let mut x0 = vec![0.0; layout.dim()];
    x0[..3].copy_from_slice(init.global_rot.0.as_slice());
    for (j, r) in init.joint_rots.iter().enumerate() {
        x0[layout.rot_range().start + 3 * j..layout.rot_range().start + 3 * j + 3]
            .copy_from_slice(r.0.as_slice());
    }
    x0[layout.beta_range()].copy_from_slice(&init.beta);
    if layout.has_expr {
        x0[layout.psi_range()].copy_from_slice(&init.psi);
    }

    let obj = Objective3d { model, targets: &pulled, visible, cfg, layout };
    let mut stage1 = vec![false; layout.dim()];
    stage1[..6].fill(true);
    let (x, trace, iterations, converged) = two_stage(&obj, x0, stage1, cfg);
    let (data, prior) = obj.terms(&x);

    // Fold the frozen seed rotation into the reported global orientation so
    // the parameters stand alone, leaving a pure-translation remainder.
    let (g_fit, _, delta, beta, psi) = obj.unpack(&x);
    let g_world = ext.rot.compose(&g_fit);
    let root = rest_joints(model, &shape_rest(model, &beta, &psi).expect("checked dims"))[0];
    let t_res = ext.rot.apply(&(root + delta)) + ext.t - root;
    let params = ModelParams {
        part: model.part,
        global_rot: mat_to_aa(&g_world).expect("composition of rotations"),
        joint_rots: x[layout.rot_range()]
            .chunks_exact(3)
            .map(|c| AxisAngle::new(c[0], c[1], c[2]))
            .collect(),
        beta,
        psi,
        camera: init.camera,
        latent: None,
    };
    Ok(FitReport {
        params,
        extrinsics: Some(Extrinsics { rot: RotMat::identity(), t: t_res }),
        breakdown: FitBreakdown { data, prior, total: data + prior },
        trace,
        iterations,
        converged,
    })
}

/// Fits pose (through the embedding), shape, global orientation, and the
/// weak-perspective camera to pixel keypoints.
pub fn fit_2d(
    model: &KinematicModel,
    emb: &PcaEmbedding,
    targets: &[Vector2<f64>],
    visible: &[bool],
    cfg: &FitConfig,
) -> Result<FitReport, FitError> {
    let k = model.num_eval_joints();
    if targets.len() != k || visible.len() != k {
        return Err(FitError::BadInput(format!(
            "expected {k} targets and flags, got {} and {}",
            targets.len(),
            visible.len()
        )));
    }
    let d = 3 * (model.num_joints() - 1);
    if emb.dim != d {
        return Err(FitError::BadInput(format!(
            "embedding decodes {} rotation coordinates, model needs {d}",
            emb.dim
        )));
    }
    let num_visible = visible.iter().filter(|&&v| v).count();
    if num_visible < 4 {
        return Err(FitError::TooFewJoints { needed: 4, got: num_visible });
    }

    let layout = Layout {
        num_rot_coords: 0,
        has_expr: model.has_expressions(),
        latent_dim: emb.latent_dim,
        has_camera: true,
        has_delta: false,
    };

    // Camera seed from extents and centroids of the mean-pose joints against
    // the visible keypoints.
    let mean_rots: Vec<RotMat> = emb
        .decode(&vec![0.0; emb.latent_dim])
        .chunks_exact(3)
        .map(|c| aa_to_mat(&AxisAngle::new(c[0], c[1], c[2])))
        .collect();
    let cache = forward_joints(
        model,
        &RotMat::identity(),
        &mean_rots,
        &vec![0.0; SHAPE_DIM],
        &vec![0.0; EXPR_DIM],
    )
    .expect("embedding dims checked");
    let (mut jmin, mut jmax) = (Vector2::repeat(f64::INFINITY), Vector2::repeat(f64::NEG_INFINITY));
    let (mut qmin, mut qmax) = (jmin, jmax);
    let mut jcen = Vector2::zeros();
    let mut qcen = Vector2::zeros();
    for (k, q) in targets.iter().enumerate() {
        if !visible[k] {
            continue;
        }
        let jxy = Vector2::new(cache.joints3d[k].x, cache.joints3d[k].y);
        jmin = jmin.inf(&jxy);
        jmax = jmax.sup(&jxy);
        qmin = qmin.inf(q);
        qmax = qmax.sup(q);
        jcen += jxy;
        qcen += q;
    }
    let n = num_visible as f64;
    jcen /= n;
    qcen /= n;
    let jext = (jmax - jmin).x + (jmax - jmin).y;
    let qext = (qmax - qmin).x + (qmax - qmin).y;
    let s0 = if jext > 1e-9 { qext / jext } else { 1.0 };
    let t0 = qcen - jcen * s0;

    let mut x0 = vec![0.0; layout.dim()];
    let cam_start = layout.cam_range().start;
    x0[cam_start] = s0;
    x0[cam_start + 1] = t0.x;
    x0[cam_start + 2] = t0.y;

    let obj = Objective2d { model, emb, targets, visible, cfg, layout };
    let mut stage1 = vec![false; layout.dim()];
    stage1[..3].fill(true);
    stage1[layout.cam_range()].fill(true);
    let (x, trace, iterations, converged) = two_stage(&obj, x0, stage1, cfg);
    let (data, prior) = obj.terms(&x);

    let z = x[layout.latent_range()].to_vec();
    let theta = emb.decode(&z);
    let cam = &x[layout.cam_range()];
    let params = ModelParams {
        part: model.part,
        global_rot: AxisAngle::new(x[0], x[1], x[2]),
        joint_rots: theta.chunks_exact(3).map(|c| AxisAngle::new(c[0], c[1], c[2])).collect(),
        beta: x[layout.beta_range()].to_vec(),
        psi: if layout.has_expr { x[layout.psi_range()].to_vec() } else { vec![0.0; EXPR_DIM] },
        camera: WeakPerspective::new(cam[0], cam[1], cam[2]),
        latent: Some(z),
    };
    Ok(FitReport {
        params,
        extrinsics: None,
        breakdown: FitBreakdown { data, prior, total: data + prior },
        trace,
        iterations,
        converged,
    })
}

/// Fits every sample of a dataset independently on a pool of `jobs` workers.
/// Results keep the sample order; each sample succeeds or fails on its own.
/// 2D supervision requires `emb`.
pub fn fit_dataset(
    model: &KinematicModel,
    ds: &Dataset,
    emb: Option<&PcaEmbedding>,
    cfg: &FitConfig,
    jobs: usize,
) -> Vec<Result<FitReport, FitError>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .expect("worker pool");
    pool.install(|| {
        ds.samples
            .par_iter()
            .map(|s| match &s.supervision {
                Supervision::ThreeD { joints, present } => fit_3d(model, joints, present, cfg),
                Supervision::TwoD { joints, visible } => {
                    let emb = emb.ok_or(FitError::MissingEmbedding)?;
                    fit_2d(model, emb, joints, visible, cfg)
                }
            })
            .collect()
    })
}
