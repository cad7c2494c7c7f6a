//! Reverse-mode derivatives of the posing pipeline.
//!
//! [`forward_joints`] runs shape -> rest joints -> forward kinematics ->
//! skinning -> evaluation-joint regression while keeping every intermediate;
//! [`backward_joints`] pulls a gradient on the evaluation joints back to the
//! rotation matrices (global and per-joint local) and the shape and
//! expression coefficients. Rotation gradients are left in matrix space; the
//! caller contracts them with whatever Jacobian produced its rotations
//! (axis-angle, 6D, or a linear pose code).

use super::{KinematicModel, ModelError, EXPR_DIM, SHAPE_DIM};
use crate::rotmath::RotMat;
use nalgebra::{Matrix3, Vector3};

/// Forward intermediates needed by [`backward_joints`].
#[derive(Debug, Clone)]
pub struct JointsCache {
    /// Evaluation joints, K x 3.
    pub joints3d: Vec<Vector3<f64>>,
    /// Posed vertices, N x 3.
    pub vertices: Vec<Vector3<f64>>,
    /// Global rotation and position per kinematic joint.
    pub joint_globals: Vec<(RotMat, Vector3<f64>)>,
    rest_vertices: Vec<Vector3<f64>>,
    rest: Vec<Vector3<f64>>,
}

/// Gradients of a scalar loss with respect to the posing inputs. Rotation
/// entries are gradients with respect to the nine matrix components.
#[derive(Debug, Clone)]
pub struct PoseGrad {
    pub d_global: Matrix3<f64>,
    /// One matrix gradient per non-root joint, in joint order.
    pub d_locals: Vec<Matrix3<f64>>,
    pub d_beta: Vec<f64>,
    pub d_psi: Vec<f64>,
}

/// Poses the model from explicit rotation matrices and records every
/// intermediate for the backward pass.
pub fn forward_joints(
    model: &KinematicModel,
    global_rot: &RotMat,
    local_rots: &[RotMat],
    beta: &[f64],
    psi: &[f64],
) -> Result<JointsCache, ModelError> {
    let j = model.num_joints();
    if local_rots.len() != j - 1 {
        return Err(ModelError::DimensionMismatch(format!(
            "expected {} local rotations, got {}",
            j - 1,
            local_rots.len()
        )));
    }
    let rest_vertices = super::shape_rest(model, beta, psi)?;
    let rest = super::rest_joints(model, &rest_vertices);

    let mut joint_globals: Vec<(RotMat, Vector3<f64>)> = Vec::with_capacity(j);
    joint_globals.push((global_rot.clone(), rest[0]));
    for idx in 1..j {
        let parent = model.parents[idx].expect("validated topology");
        let (pr, pp) = &joint_globals[parent];
        let rot = pr.compose(&local_rots[idx - 1]);
        let pos = pp + pr.apply(&(rest[idx] - rest[parent]));
        joint_globals.push((rot, pos));
    }

    let vertices = super::skin(model, &rest_vertices, &rest, &joint_globals);
    let joints3d = model
        .external_regressor
        .iter()
        .map(|row| row.iter().map(|&(v, w)| vertices[v] * w).sum())
        .collect();
    Ok(JointsCache { joints3d, vertices, joint_globals, rest_vertices, rest })
}

/// Pulls `d_joints` (gradient on the evaluation joints) back through
/// regression, skinning, forward kinematics, the joint regressor, and the
/// shape bases.
pub fn backward_joints(
    model: &KinematicModel,
    cache: &JointsCache,
    d_joints: &[Vector3<f64>],
) -> PoseGrad {
    let j = model.num_joints();
    let n = model.num_vertices();
    assert_eq!(d_joints.len(), model.num_eval_joints(), "gradient per evaluation joint");

    // Evaluation regression: joints3d_k = sum_v er[k][v] * vert_v.
    // Only vertices in the regressor support receive gradient.
    let mut d_vert = vec![Vector3::zeros(); n];
    for (k, row) in model.external_regressor.iter().enumerate() {
        for &(v, w) in row {
            d_vert[v] += d_joints[k] * w;
        }
    }

    // Skinning: vert_v = sum_j w[v][j] * (R_j (x_v - c_j) + p_j).
    let mut d_rot = vec![Matrix3::zeros(); j];
    let mut d_pos = vec![Vector3::zeros(); j];
    let mut d_rest_vert = vec![Vector3::zeros(); n];
    let mut d_rest = vec![Vector3::zeros(); j];
    for (v, row) in model.skin_weights.iter().enumerate() {
        let dv = d_vert[v];
        if dv == Vector3::zeros() {
            continue;
        }
        for &(jj, w) in row {
            let (r, _) = &cache.joint_globals[jj];
            let arm = cache.rest_vertices[v] - cache.rest[jj];
            d_rot[jj] += (dv * arm.transpose()) * w;
            d_pos[jj] += dv * w;
            let pulled = r.as_matrix().transpose() * dv * w;
            d_rest_vert[v] += pulled;
            d_rest[jj] -= pulled;
        }
    }

    // Forward kinematics, children before parents:
    //   R_idx = R_par L_idx,  p_idx = p_par + R_par (c_idx - c_par).
    let mut d_locals = vec![Matrix3::zeros(); j - 1];
    for idx in (1..j).rev() {
        let parent = model.parents[idx].expect("validated topology");
        let pr = cache.joint_globals[parent].0.as_matrix();
        let local = cache.joint_globals[parent].0.inverse().compose(&cache.joint_globals[idx].0);
        let offset = cache.rest[idx] - cache.rest[parent];

        d_locals[idx - 1] = pr.transpose() * d_rot[idx];
        let d_rot_idx = d_rot[idx];
        d_rot[parent] += d_rot_idx * local.as_matrix().transpose();

        let dp = d_pos[idx];
        d_pos[parent] += dp;
        d_rot[parent] += dp * offset.transpose();
        let pulled = pr.transpose() * dp;
        d_rest[idx] += pulled;
        d_rest[parent] -= pulled;
    }
    let d_global = d_rot[0];
    d_rest[0] += d_pos[0];

    // Rest joints: c_j = sum_v jr[j][v] * x_v.
    for (jj, row) in model.joint_regressor.iter().enumerate() {
        let dc = d_rest[jj];
        if dc == Vector3::zeros() {
            continue;
        }
        for &(v, w) in row {
            d_rest_vert[v] += dc * w;
        }
    }

    // Shaped rest vertices: x_v = template_v + S_v beta + E_v psi.
    let mut d_beta = vec![0.0; SHAPE_DIM];
    let mut d_psi = vec![0.0; EXPR_DIM];
    for (v, dx) in d_rest_vert.iter().enumerate() {
        if *dx == Vector3::zeros() {
            continue;
        }
        for (i, b) in model.shape_basis[v].iter().enumerate() {
            d_beta[i] += b.dot(dx);
        }
        for (i, b) in model.expr_basis[v].iter().enumerate() {
            d_psi[i] += b.dot(dx);
        }
    }

    PoseGrad { d_global, d_locals, d_beta, d_psi }
}
