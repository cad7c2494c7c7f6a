//! Parametric skinned kinematic model: shape blendshapes, forward kinematics
//! about rest-joint pivots, and linear blend skinning.
//!
//! A model is a rooted joint tree (`parents[j] < j`, root first) over a
//! vertex template. Shape and expression coefficients displace the template
//! linearly; rest joints are regressed from the shaped vertices; posing
//! rotates each joint about its rest position; vertices follow their joints
//! through convex skinning weights; evaluation joints are regressed from the
//! posed vertices by a second convex regressor.

mod grad;

pub use grad::{backward_joints, forward_joints, JointsCache, PoseGrad};

use crate::camera::WeakPerspective;
use crate::rotmath::{aa_to_mat, mat_to_aa, AxisAngle, RotMat};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

/// Number of shape coefficients.
pub const SHAPE_DIM: usize = 10;
/// Number of expression coefficients (face part only; zero effect elsewhere).
pub const EXPR_DIM: usize = 10;
/// Model file format version.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("bad topology: {0}")]
    BadTopology(String),
    #[error("regressor or weight row {row} sums to {sum}, expected 1 within 1e-9")]
    NonStochasticRow { row: usize, sum: f64 },
    #[error("part {part:?} expects {expected} {what}, model has {got}")]
    WrongCount { part: PartKind, what: &'static str, expected: usize, got: usize },
    #[error("unknown joint role '{0}'")]
    UnknownRole(String),
    #[error("unsupported model file (kind '{kind}', version {version})")]
    UnsupportedFormat { kind: String, version: u32 },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartKind {
    Body,
    Hand,
    Face,
}

impl PartKind {
    /// Kinematic joint count J for this part.
    pub fn num_joints(self) -> usize {
        match self {
            PartKind::Body => 22,
            PartKind::Hand => 16,
            PartKind::Face => 2,
        }
    }

    /// Evaluation joint count K for this part.
    pub fn num_eval_joints(self) -> usize {
        match self {
            PartKind::Body => 17,
            PartKind::Hand => 21,
            PartKind::Face => 10,
        }
    }
}

/// Sparse convex row: (index, weight) pairs summing to one.
pub type SparseRow = Vec<(usize, f64)>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KinematicModel {
    pub part: PartKind,
    /// Rest-pose vertices, meters. N x 3.
    pub template: Vec<Vector3<f64>>,
    /// Triangles over the template, for mesh export.
    pub faces: Vec<[u32; 3]>,
    /// Parent of each joint; `None` exactly at the root (index 0),
    /// `parents[j] < j` elsewhere.
    pub parents: Vec<Option<usize>>,
    /// Per-vertex shape displacement basis, N x SHAPE_DIM.
    pub shape_basis: Vec<Vec<Vector3<f64>>>,
    /// Per-vertex expression displacement basis, N x EXPR_DIM (empty inner
    /// vectors for parts without expressions).
    pub expr_basis: Vec<Vec<Vector3<f64>>>,
    /// Rest-joint regressor: J convex rows over vertices.
    pub joint_regressor: Vec<SparseRow>,
    /// Skinning weights: N convex rows over joints.
    pub skin_weights: Vec<SparseRow>,
    /// Evaluation-joint regressor: K convex rows over vertices.
    pub external_regressor: Vec<SparseRow>,
    /// Named kinematic joints (indices into the J joints).
    pub roles_kinematic: BTreeMap<String, usize>,
    /// Named evaluation joints (indices into the K eval joints).
    pub roles_eval: BTreeMap<String, usize>,
    /// Eval-joint indices used to seed rigid extrinsics (hips + shoulders for
    /// the body; a named four-joint set otherwise).
    pub init_eval_joints: Vec<usize>,
}

impl KinematicModel {
    pub fn num_vertices(&self) -> usize {
        self.template.len()
    }

    pub fn num_joints(&self) -> usize {
        self.parents.len()
    }

    pub fn num_eval_joints(&self) -> usize {
        self.external_regressor.len()
    }

    pub fn has_expressions(&self) -> bool {
        self.expr_basis.iter().any(|b| !b.is_empty())
    }

    /// Looks up a kinematic joint role.
    pub fn kinematic_role(&self, name: &str) -> Result<usize, ModelError> {
        self.roles_kinematic.get(name).copied().ok_or_else(|| ModelError::UnknownRole(name.into()))
    }

    /// Looks up an evaluation joint role.
    pub fn eval_role(&self, name: &str) -> Result<usize, ModelError> {
        self.roles_eval.get(name).copied().ok_or_else(|| ModelError::UnknownRole(name.into()))
    }

    /// Structural validation: topology, counts, convex rows, role indices.
    pub fn validate(&self) -> Result<(), ModelError> {
        let j = self.num_joints();
        let k = self.num_eval_joints();
        let n = self.num_vertices();
        if j != self.part.num_joints() {
            return Err(ModelError::WrongCount {
                part: self.part,
                what: "kinematic joints",
                expected: self.part.num_joints(),
                got: j,
            });
        }
        if k != self.part.num_eval_joints() {
            return Err(ModelError::WrongCount {
                part: self.part,
                what: "evaluation joints",
                expected: self.part.num_eval_joints(),
                got: k,
            });
        }
        if self.parents.is_empty() || self.parents[0].is_some() {
            return Err(ModelError::BadTopology("joint 0 must be the root".into()));
        }
        for (idx, p) in self.parents.iter().enumerate().skip(1) {
            match p {
                Some(parent) if *parent < idx => {}
                _ => {
                    return Err(ModelError::BadTopology(format!(
                        "joint {idx} must have a parent with smaller index"
                    )))
                }
            }
        }
        if self.shape_basis.len() != n || self.skin_weights.len() != n {
            return Err(ModelError::DimensionMismatch(
                "shape basis and skin weights must have one row per vertex".into(),
            ));
        }
        if self.expr_basis.len() != n {
            return Err(ModelError::DimensionMismatch(
                "expression basis must have one row per vertex".into(),
            ));
        }
        for (v, b) in self.shape_basis.iter().enumerate() {
            if b.len() != SHAPE_DIM {
                return Err(ModelError::DimensionMismatch(format!(
                    "shape basis row {v} has {} entries, expected {SHAPE_DIM}",
                    b.len()
                )));
            }
        }
        for (v, b) in self.expr_basis.iter().enumerate() {
            if !b.is_empty() && b.len() != EXPR_DIM {
                return Err(ModelError::DimensionMismatch(format!(
                    "expression basis row {v} has {} entries, expected 0 or {EXPR_DIM}",
                    b.len()
                )));
            }
        }
        if self.joint_regressor.len() != j {
            return Err(ModelError::DimensionMismatch(
                "joint regressor must have one row per joint".into(),
            ));
        }
        check_convex_rows(&self.joint_regressor, n)?;
        check_convex_rows(&self.skin_weights, j)?;
        check_convex_rows(&self.external_regressor, n)?;
        for (_, &idx) in &self.roles_kinematic {
            if idx >= j {
                return Err(ModelError::BadTopology(format!("kinematic role index {idx} >= {j}")));
            }
        }
        for (_, &idx) in &self.roles_eval {
            if idx >= k {
                return Err(ModelError::BadTopology(format!("eval role index {idx} >= {k}")));
            }
        }
        for &idx in &self.init_eval_joints {
            if idx >= k {
                return Err(ModelError::BadTopology(format!("init joint index {idx} >= {k}")));
            }
        }
        for f in &self.faces {
            if f.iter().any(|&v| v as usize >= n) {
                return Err(ModelError::BadTopology("face references missing vertex".into()));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON serialization.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("model serialization cannot fail");
        let mut hasher = Sha256::new();
        hasher.update(&json);
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let envelope = ModelEnvelope {
            version: MODEL_FORMAT_VERSION,
            kind: "kinematic-model".into(),
            model: self.clone(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&envelope)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        let envelope: ModelEnvelope = serde_json::from_str(&text)?;
        if envelope.kind != "kinematic-model" || envelope.version != MODEL_FORMAT_VERSION {
            return Err(ModelError::UnsupportedFormat {
                kind: envelope.kind,
                version: envelope.version,
            });
        }
        envelope.model.validate()?;
        Ok(envelope.model)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelEnvelope {
    version: u32,
    kind: String,
    model: KinematicModel,
}

fn check_convex_rows(rows: &[SparseRow], max_index: usize) -> Result<(), ModelError> {
    for (i, row) in rows.iter().enumerate() {
        let mut sum = 0.0;
        for &(idx, w) in row {
            if idx >= max_index {
                return Err(ModelError::DimensionMismatch(format!(
                    "row {i} references index {idx} >= {max_index}"
                )));
            }
            if w < -1e-12 {
                return Err(ModelError::NonStochasticRow { row: i, sum: w });
            }
            sum += w;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ModelError::NonStochasticRow { row: i, sum });
        }
    }
    Ok(())
}

/// Full parameter set for one part instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub part: PartKind,
    /// Root orientation.
    pub global_rot: AxisAngle,
    /// Local rotations for joints 1..J (J-1 entries).
    pub joint_rots: Vec<AxisAngle>,
    /// Shape coefficients, SHAPE_DIM entries.
    pub beta: Vec<f64>,
    /// Expression coefficients, EXPR_DIM entries (inert unless the model has
    /// an expression basis).
    pub psi: Vec<f64>,
    /// Weak-perspective camera.
    pub camera: WeakPerspective,
    /// Optional low-dimensional pose code the rotations were decoded from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<Vec<f64>>,
}

impl ModelParams {
    /// Zero pose, mean shape, unit camera.
    pub fn zero(part: PartKind) -> Self {
        ModelParams {
            part,
            global_rot: AxisAngle::zero(),
            joint_rots: vec![AxisAngle::zero(); part.num_joints() - 1],
            beta: vec![0.0; SHAPE_DIM],
            psi: vec![0.0; EXPR_DIM],
            camera: WeakPerspective::new(1.0, 0.0, 0.0),
            latent: None,
        }
    }

    pub fn validate_for(&self, model: &KinematicModel) -> Result<(), ModelError> {
        if self.part != model.part {
            return Err(ModelError::DimensionMismatch(format!(
                "params are for {:?}, model is {:?}",
                self.part, model.part
            )));
        }
        if self.joint_rots.len() != model.num_joints() - 1 {
            return Err(ModelError::DimensionMismatch(format!(
                "expected {} joint rotations, got {}",
                model.num_joints() - 1,
                self.joint_rots.len()
            )));
        }
        if self.beta.len() != SHAPE_DIM {
            return Err(ModelError::DimensionMismatch(format!(
                "expected {SHAPE_DIM} shape coefficients, got {}",
                self.beta.len()
            )));
        }
        if self.psi.len() != EXPR_DIM {
            return Err(ModelError::DimensionMismatch(format!(
                "expected {EXPR_DIM} expression coefficients, got {}",
                self.psi.len()
            )));
        }
        Ok(())
    }
}

/// Output of [`model_forward`].
#[derive(Debug, Clone)]
pub struct PosedOutput {
    /// Posed vertices, N x 3.
    pub vertices: Vec<Vector3<f64>>,
    /// Evaluation joints regressed from the posed vertices, K x 3.
    pub joints3d: Vec<Vector3<f64>>,
    /// Global rotation and position of every kinematic joint.
    pub joint_globals: Vec<(RotMat, Vector3<f64>)>,
}

/// Shaped rest vertices: `template + shape_basis * beta + expr_basis * psi`.
pub fn shape_rest(
    model: &KinematicModel,
    beta: &[f64],
    psi: &[f64],
) -> Result<Vec<Vector3<f64>>, ModelError> {
    if beta.len() != SHAPE_DIM {
        return Err(ModelError::DimensionMismatch(format!(
            "expected {SHAPE_DIM} shape coefficients, got {}",
            beta.len()
        )));
    }
    if psi.len() != EXPR_DIM {
        return Err(ModelError::DimensionMismatch(format!(
            "expected {EXPR_DIM} expression coefficients, got {}",
            psi.len()
        )));
    }
    let mut out = Vec::with_capacity(model.template.len());
    for (v, t) in model.template.iter().enumerate() {
        let mut p = *t;
        for (i, b) in model.shape_basis[v].iter().enumerate() {
            p += b * beta[i];
        }
        for (i, b) in model.expr_basis[v].iter().enumerate() {
            p += b * psi[i];
        }
        out.push(p);
    }
    Ok(out)
}

/// Rest joints regressed from shaped rest vertices.
pub fn rest_joints(model: &KinematicModel, rest_vertices: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    model
        .joint_regressor
        .iter()
        .map(|row| row.iter().map(|&(v, w)| rest_vertices[v] * w).sum())
        .collect()
}

/// Forward kinematics: composes local rotations about rest-joint pivots into
/// per-joint global rotations and posed joint positions.
pub fn fk(
    model: &KinematicModel,
    global_rot: &AxisAngle,
    joint_rots: &[AxisAngle],
    rest: &[Vector3<f64>],
) -> Result<Vec<(RotMat, Vector3<f64>)>, ModelError> {
    let j = model.num_joints();
    if joint_rots.len() != j - 1 {
        return Err(ModelError::DimensionMismatch(format!(
            "expected {} joint rotations, got {}",
            j - 1,
            joint_rots.len()
        )));
    }
    if rest.len() != j {
        return Err(ModelError::DimensionMismatch(format!(
            "expected {j} rest joints, got {}",
            rest.len()
        )));
    }
    let mut globals: Vec<(RotMat, Vector3<f64>)> = Vec::with_capacity(j);
    globals.push((aa_to_mat(global_rot), rest[0]));
    for idx in 1..j {
        let parent = model.parents[idx].expect("validated topology");
        let local = aa_to_mat(&joint_rots[idx - 1]);
        let (pr, pp) = &globals[parent];
        let rot = pr.compose(&local);
        let pos = pp + pr.apply(&(rest[idx] - rest[parent]));
        globals.push((rot, pos));
    }
    Ok(globals)
}

/// Inverts [`fk`] on rotations: recovers the global and local axis-angle
/// rotations that produce the given joint globals.
pub fn local_from_global(
    model: &KinematicModel,
    globals: &[(RotMat, Vector3<f64>)],
) -> Result<(AxisAngle, Vec<AxisAngle>), ModelError> {
    if globals.len() != model.num_joints() {
        return Err(ModelError::DimensionMismatch(format!(
            "expected {} joint globals, got {}",
            model.num_joints(),
            globals.len()
        )));
    }
    let global = mat_to_aa(&globals[0].0)
        .map_err(|e| ModelError::DimensionMismatch(format!("invalid root rotation: {e}")))?;
    let mut locals = Vec::with_capacity(globals.len() - 1);
    for idx in 1..globals.len() {
        let parent = model.parents[idx].expect("validated topology");
        let local = globals[parent].0.inverse().compose(&globals[idx].0);
        locals.push(mat_to_aa(&local).map_err(|e| {
            ModelError::DimensionMismatch(format!("invalid composed rotation at joint {idx}: {e}"))
        })?);
    }
    Ok((global, locals))
}

/// Linear blend skinning: each vertex follows its joints' rigid transforms
/// (rotation about the rest joint, then translation to the posed joint).
pub fn skin(
    model: &KinematicModel,
    rest_vertices: &[Vector3<f64>],
    rest: &[Vector3<f64>],
    globals: &[(RotMat, Vector3<f64>)],
) -> Vec<Vector3<f64>> {
    rest_vertices
        .iter()
        .enumerate()
        .map(|(v, x)| {
            let mut out = Vector3::zeros();
            for &(j, w) in &model.skin_weights[v] {
                let (r, p) = &globals[j];
                out += (r.apply(&(x - rest[j])) + p) * w;
            }
            out
        })
        .collect()
}

/// Full differentiable-pipeline forward pass: shape, FK, skinning, and
/// evaluation-joint regression.
pub fn model_forward(
    model: &KinematicModel,
    params: &ModelParams,
) -> Result<PosedOutput, ModelError> {
    params.validate_for(model)?;
    let rest_vertices = shape_rest(model, &params.beta, &params.psi)?;
    let rest = rest_joints(model, &rest_vertices);
    let globals = fk(model, &params.global_rot, &params.joint_rots, &rest)?;
    let vertices = skin(model, &rest_vertices, &rest, &globals);
    let joints3d = model
        .external_regressor
        .iter()
        .map(|row| row.iter().map(|&(v, w)| vertices[v] * w).sum())
        .collect();
    Ok(PosedOutput { vertices, joints3d, joint_globals: globals })
}

/// Mirrors a hand parameter set across the x = 0 plane: every axis-angle
/// `(x, y, z)` becomes `(x, -y, -z)`. Applying it twice is the identity.
pub fn flip_hand(params: &ModelParams) -> ModelParams {
    let flip = |a: &AxisAngle| AxisAngle::new(a.0.x, -a.0.y, -a.0.z);
    ModelParams {
        part: params.part,
        global_rot: flip(&params.global_rot),
        joint_rots: params.joint_rots.iter().map(flip).collect(),
        beta: params.beta.clone(),
        psi: params.psi.clone(),
        camera: params.camera,
        latent: params.latent.clone(),
    }
}

/// Serializes a posed mesh as Wavefront OBJ text: vertex and face lines only.
pub fn obj_string(vertices: &[Vector3<f64>], faces: &[[u32; 3]]) -> String {
    let mut out = String::with_capacity(vertices.len() * 32 + faces.len() * 16);
    for v in vertices {
        out.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
    }
    for f in faces {
        // OBJ indices are 1-based.
        out.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Hand-built 3-joint chain with 6 vertices for oracle tests. The part
    /// tag is Face (J = 2) deliberately NOT used; validation is bypassed by
    /// calling internals directly where needed.
    fn chain_model() -> KinematicModel {
        // Joints at x = 0, 1, 2 on a 3-joint chain; two vertices per joint.
        let template = vec![
            Vector3::new(0.0, 0.1, 0.0),
            Vector3::new(0.0, -0.1, 0.0),
            Vector3::new(1.0, 0.1, 0.0),
            Vector3::new(1.0, -0.1, 0.0),
            Vector3::new(2.0, 0.1, 0.0),
            Vector3::new(2.0, -0.1, 0.0),
        ];
        let n = template.len();
        let mut shape_basis = vec![vec![Vector3::zeros(); SHAPE_DIM]; n];
        // First shape mode stretches x, second lifts y.
        for (v, t) in template.iter().enumerate() {
            shape_basis[v][0] = Vector3::new(0.1 * t.x, 0.0, 0.0);
            shape_basis[v][1] = Vector3::new(0.0, 0.05, 0.0);
        }
        KinematicModel {
            part: PartKind::Face, // placeholder tag; chain has J=3
            template,
            faces: vec![[0, 1, 2], [1, 3, 2], [2, 3, 4], [3, 5, 4]],
            parents: vec![None, Some(0), Some(1)],
            shape_basis,
            expr_basis: vec![vec![]; n],
            joint_regressor: vec![
                vec![(0, 0.5), (1, 0.5)],
                vec![(2, 0.5), (3, 0.5)],
                vec![(4, 0.5), (5, 0.5)],
            ],
            skin_weights: vec![
                vec![(0, 1.0)],
                vec![(0, 1.0)],
                vec![(0, 0.5), (1, 0.5)],
                vec![(1, 1.0)],
                vec![(1, 0.5), (2, 0.5)],
                vec![(2, 1.0)],
            ],
            external_regressor: vec![
                vec![(0, 0.5), (1, 0.5)],
                vec![(2, 0.5), (3, 0.5)],
                vec![(4, 0.5), (5, 0.5)],
            ],
            roles_kinematic: BTreeMap::new(),
            roles_eval: BTreeMap::new(),
            init_eval_joints: vec![0, 1, 2],
        }
    }

    fn chain_params(rng: &mut ChaCha8Rng) -> (AxisAngle, Vec<AxisAngle>, Vec<f64>, Vec<f64>) {
        let (global, joints) = {
            let mut aa = || {
                AxisAngle::new(
                    rng.gen_range(-0.8..0.8),
                    rng.gen_range(-0.8..0.8),
                    rng.gen_range(-0.8..0.8),
                )
            };
            (aa(), vec![aa(), aa()])
        };
        let beta: Vec<f64> = (0..SHAPE_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let psi = vec![0.0; EXPR_DIM];
        (global, joints, beta, psi)
    }

    fn chain_forward(
        model: &KinematicModel,
        global: &AxisAngle,
        joints: &[AxisAngle],
        beta: &[f64],
        psi: &[f64],
    ) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>, Vec<(RotMat, Vector3<f64>)>) {
        let rest_vertices = shape_rest(model, beta, psi).unwrap();
        let rest = rest_joints(model, &rest_vertices);
        let globals = fk(model, global, joints, &rest).unwrap();
        let vertices = skin(model, &rest_vertices, &rest, &globals);
        let joints3d = model
            .external_regressor
            .iter()
            .map(|row| row.iter().map(|&(v, w)| vertices[v] * w).sum())
            .collect();
        (vertices, joints3d, globals)
    }

    #[test]
    fn zero_pose_reproduces_rest_vertices() {
        let model = chain_model();
        let beta = vec![0.3, -0.2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let psi = vec![0.0; EXPR_DIM];
        let rest_vertices = shape_rest(&model, &beta, &psi).unwrap();
        let (vertices, _, _) = chain_forward(
            &model,
            &AxisAngle::zero(),
            &[AxisAngle::zero(), AxisAngle::zero()],
            &beta,
            &psi,
        );
        for (a, b) in vertices.iter().zip(&rest_vertices) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn shape_rest_is_affine_in_beta() {
        let model = chain_model();
        let psi = vec![0.0; EXPR_DIM];
        let a: Vec<f64> = (0..SHAPE_DIM).map(|i| 0.1 * i as f64).collect();
        let b: Vec<f64> = (0..SHAPE_DIM).map(|i| -0.05 * i as f64 + 0.2).collect();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let ra = shape_rest(&model, &a, &psi).unwrap();
        let rb = shape_rest(&model, &b, &psi).unwrap();
        let rsum = shape_rest(&model, &sum, &psi).unwrap();
        let zero = shape_rest(&model, &vec![0.0; SHAPE_DIM], &psi).unwrap();
        for v in 0..model.num_vertices() {
            let lin = ra[v] + rb[v] - zero[v];
            assert!((rsum[v] - lin).norm() < 1e-12);
        }
    }

    // Independent recursive oracle: compose transforms along each root-to-
    // joint path, one path at a time.
    fn fk_oracle(
        model: &KinematicModel,
        global: &AxisAngle,
        joints: &[AxisAngle],
        rest: &[Vector3<f64>],
    ) -> Vec<(RotMat, Vector3<f64>)> {
        fn compose_path(
            model: &KinematicModel,
            global: &AxisAngle,
            joints: &[AxisAngle],
            rest: &[Vector3<f64>],
            idx: usize,
        ) -> (RotMat, Vector3<f64>) {
            match model.parents[idx] {
                None => (aa_to_mat(global), rest[idx]),
                Some(p) => {
                    let (pr, pp) = compose_path(model, global, joints, rest, p);
                    let local = aa_to_mat(&joints[idx - 1]);
                    (pr.compose(&local), pp + pr.apply(&(rest[idx] - rest[p])))
                }
            }
        }
        (0..model.num_joints())
            .map(|idx| compose_path(model, global, joints, rest, idx))
            .collect()
    }

    #[test]
    fn fk_matches_recursive_oracle() {
        let model = chain_model();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..100 {
            let (global, joints, beta, psi) = chain_params(&mut rng);
            let rest_vertices = shape_rest(&model, &beta, &psi).unwrap();
            let rest = rest_joints(&model, &rest_vertices);
            let got = fk(&model, &global, &joints, &rest).unwrap();
            let want = fk_oracle(&model, &global, &joints, &rest);
            for ((gr, gp), (wr, wp)) in got.iter().zip(&want) {
                assert!((gr.as_matrix() - wr.as_matrix()).norm() < 1e-10);
                assert!((gp - wp).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn local_from_global_inverts_fk() {
        let model = chain_model();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let (global, joints, beta, psi) = chain_params(&mut rng);
            let rest_vertices = shape_rest(&model, &beta, &psi).unwrap();
            let rest = rest_joints(&model, &rest_vertices);
            let globals = fk(&model, &global, &joints, &rest).unwrap();
            let (g2, j2) = local_from_global(&model, &globals).unwrap();
            assert!((g2.0 - global.0).norm() < 1e-9);
            for (a, b) in j2.iter().zip(&joints) {
                assert!((a.0 - b.0).norm() < 1e-9);
            }
        }
    }

    // One-hot skinning oracle: a fully-bound vertex moves rigidly with its
    // joint.
    #[test]
    fn one_hot_weights_move_vertices_rigidly() {
        let model = chain_model();
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..50 {
            let (global, joints, beta, psi) = chain_params(&mut rng);
            let rest_vertices = shape_rest(&model, &beta, &psi).unwrap();
            let rest = rest_joints(&model, &rest_vertices);
            let globals = fk(&model, &global, &joints, &rest).unwrap();
            let posed = skin(&model, &rest_vertices, &rest, &globals);
            for (v, row) in model.skin_weights.iter().enumerate() {
                if row.len() == 1 {
                    let (j, w) = row[0];
                    assert_eq!(w, 1.0);
                    let (r, p) = &globals[j];
                    let rigid = r.apply(&(rest_vertices[v] - rest[j])) + p;
                    assert!((posed[v] - rigid).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn eval_joints_inside_vertex_hull() {
        let model = chain_model();
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for _ in 0..50 {
            let (global, joints, beta, psi) = chain_params(&mut rng);
            let (vertices, joints3d, _) = chain_forward(&model, &global, &joints, &beta, &psi);
            for axis in 0..3 {
                let min = vertices.iter().map(|v| v[axis]).fold(f64::INFINITY, f64::min);
                let max = vertices.iter().map(|v| v[axis]).fold(f64::NEG_INFINITY, f64::max);
                for j in &joints3d {
                    assert!(j[axis] >= min - 1e-12 && j[axis] <= max + 1e-12);
                }
            }
        }
    }

    #[test]
    fn flip_hand_is_an_involution() {
        let mut params = ModelParams::zero(PartKind::Hand);
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        params.global_rot = AxisAngle::new(0.3, -0.2, 0.7);
        for r in params.joint_rots.iter_mut() {
            *r = AxisAngle::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
        }
        let back = flip_hand(&flip_hand(&params));
        assert_eq!(back, params);
    }

    // Mirror-consistency oracle: a model mirrored across x = 0 posed with
    // flipped parameters reproduces the x-negated original surface.
    #[test]
    fn flip_matches_mirrored_model() {
        let model = chain_model();
        let mirrored = {
            let mut m = model.clone();
            for t in m.template.iter_mut() {
                t.x = -t.x;
            }
            for row in m.shape_basis.iter_mut() {
                for b in row.iter_mut() {
                    b.x = -b.x;
                }
            }
            m
        };
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        for _ in 0..50 {
            let (global, joints, beta, psi) = chain_params(&mut rng);
            let (vertices, _, _) = chain_forward(&model, &global, &joints, &beta, &psi);
            let flip = |a: &AxisAngle| AxisAngle::new(a.0.x, -a.0.y, -a.0.z);
            let fj: Vec<AxisAngle> = joints.iter().map(flip).collect();
            let (mv, _, _) = chain_forward(&mirrored, &flip(&global), &fj, &beta, &psi);
            for (a, b) in vertices.iter().zip(&mv) {
                let mirror_a = Vector3::new(-a.x, a.y, a.z);
                assert!((mirror_a - b).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn obj_export_has_vertex_and_face_lines_only() {
        let model = chain_model();
        let text = obj_string(&model.template, &model.faces);
        let mut v = 0;
        let mut f = 0;
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("v ") {
                assert_eq!(rest.split_whitespace().count(), 3);
                v += 1;
            } else if let Some(rest) = line.strip_prefix("f ") {
                let idx: Vec<usize> =
                    rest.split_whitespace().map(|t| t.parse().unwrap()).collect();
                assert_eq!(idx.len(), 3);
                assert!(idx.iter().all(|&i| i >= 1 && i <= model.template.len()));
                f += 1;
            } else {
                panic!("unexpected OBJ line: {line}");
            }
        }
        assert_eq!(v, model.template.len());
        assert_eq!(f, model.faces.len());
    }
}
