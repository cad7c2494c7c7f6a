//! Synthetic model and dataset generators.
//!
//! Models are ring meshes along a fixed skeleton: every kinematic joint owns
//! an 8-vertex ring whose centroid sits exactly on the joint, interior rings
//! add volume along each bone, and the joint and evaluation regressors
//! average rings, so regressed joints coincide with kinematic joints by
//! construction.
//!
//! Poses are drawn from a low-rank linear manifold seeded from the model's
//! content hash: every dataset generated from the same model shares the
//! manifold, which is what makes a pose embedding fitted on one dataset
//! transfer to another.
//!
//! The skeleton is nearly planar, and samples are posed by a y-axis global
//! rotation before a weak-perspective projection, so a 2D observation has a
//! genuine mirror-depth ambiguity. The image-like descriptor carries
//! relative depth-order signs that resolve it; the 2D-only descriptor does
//! not.

use crate::bodymodel::{
    model_forward, rest_joints, shape_rest, KinematicModel, ModelError, ModelParams, PartKind,
    SparseRow, EXPR_DIM, SHAPE_DIM,
};
use crate::camera::{project, WeakPerspective};
use crate::dataset::{
    CorruptionConfig, DatasetFile, DatasetHeader, DescriptorKind, Sample, SealedTruth,
    Supervision, SupervisionKind,
};
use crate::rotmath::AxisAngle;
use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::collections::BTreeMap;

/// Every descriptor is padded to this length regardless of part.
pub const DESCRIPTOR_DIM: usize = 64;
/// Crop size in pixels; 2D keypoints live in `[0, CROP)^2`.
pub const CROP: f64 = 256.0;
/// Number of relative depth-order cues in the image-like descriptor.
pub const DEPTH_CUES: usize = 8;

/// Intrinsic dimension of the pose manifold for each part.
pub fn pose_manifold_dim(part: PartKind) -> usize {
    match part {
        PartKind::Body => 8,
        PartKind::Hand => 6,
        PartKind::Face => 2,
    }
}

struct RingSpec {
    center: Vector3<f64>,
    axis: Vector3<f64>,
    radius: f64,
    /// Skinning row shared by every vertex of the ring.
    skin: SparseRow,
}

/// Unit offsets of an 8-vertex ring; sign-symmetric so the centroid is the
/// center exactly, with no trigonometric rounding.
const RING_OFFSETS: [(f64, f64); 8] = [
    (1.0, 0.0),
    (std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2),
    (0.0, 1.0),
    (-std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2),
    (-1.0, 0.0),
    (-std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2),
    (0.0, -1.0),
    (std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2),
];

const RING_SIZE: usize = RING_OFFSETS.len();

struct MeshBuilder {
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[u32; 3]>,
    skin: Vec<SparseRow>,
}

impl MeshBuilder {
    fn new() -> Self {
        MeshBuilder { vertices: Vec::new(), faces: Vec::new(), skin: Vec::new() }
    }

    /// Adds one ring and returns its vertex indices.
    fn add_ring(&mut self, spec: &RingSpec) -> Vec<usize> {
        let axis = if spec.axis.norm() < 1e-12 {
            Vector3::new(0.0, 1.0, 0.0)
        } else {
            spec.axis.normalize()
        };
        // Frame perpendicular to the axis, seeded from its least-aligned
        // coordinate direction.
        let pick = if axis.x.abs() <= axis.y.abs() && axis.x.abs() <= axis.z.abs() {
            Vector3::new(1.0, 0.0, 0.0)
        } else if axis.y.abs() <= axis.z.abs() {
            Vector3::new(0.0, 1.0, 0.0)
        } else {
            Vector3::new(0.0, 0.0, 1.0)
        };
        let u = axis.cross(&pick).normalize();
        let w = axis.cross(&u);
        let base = self.vertices.len();
        for (cu, cw) in RING_OFFSETS {
            self.vertices.push(spec.center + (u * cu + w * cw) * spec.radius);
            self.skin.push(spec.skin.clone());
        }
        (base..base + RING_SIZE).collect()
    }

    /// Triangulates the tube between two rings.
    fn connect(&mut self, a: &[usize], b: &[usize]) {
        for k in 0..RING_SIZE {
            let k2 = (k + 1) % RING_SIZE;
            let (a0, a1, b0, b1) = (a[k] as u32, a[k2] as u32, b[k] as u32, b[k2] as u32);
            self.faces.push([a0, b0, b1]);
            self.faces.push([a0, b1, a1]);
        }
    }
}

struct Skeleton {
    names: Vec<&'static str>,
    parents: Vec<Option<usize>>,
    rest: Vec<Vector3<f64>>,
    radii: Vec<f64>,
    /// (name, kinematic joint, optional tip extension along the bone).
    eval_points: Vec<(&'static str, usize, Option<f64>)>,
    init_roles: Vec<&'static str>,
}

fn body_skeleton() -> Skeleton {
    let spec: [(&str, Option<usize>, [f64; 3], f64); 22] = [
        ("pelvis", None, [0.00, 1.00, 0.000], 0.10),
        ("spine1", Some(0), [0.00, 1.12, 0.010], 0.095),
        ("spine2", Some(1), [0.00, 1.24, -0.010], 0.095),
        ("chest", Some(2), [0.00, 1.36, 0.005], 0.10),
        ("neck", Some(3), [0.00, 1.52, 0.000], 0.045),
        ("head", Some(4), [0.00, 1.64, 0.015], 0.08),
        ("l_hip", Some(0), [0.09, 0.98, 0.005], 0.06),
        ("l_knee", Some(6), [0.10, 0.55, 0.010], 0.05),
        ("l_ankle", Some(7), [0.11, 0.12, -0.010], 0.04),
        ("l_foot", Some(8), [0.12, 0.03, 0.070], 0.03),
        ("r_hip", Some(0), [-0.09, 0.98, 0.005], 0.06),
        ("r_knee", Some(10), [-0.10, 0.55, 0.010], 0.05),
        ("r_ankle", Some(11), [-0.11, 0.12, -0.010], 0.04),
        ("r_foot", Some(12), [-0.12, 0.03, 0.070], 0.03),
        ("l_shoulder", Some(3), [0.18, 1.44, 0.000], 0.05),
        ("l_elbow", Some(14), [0.30, 1.18, 0.015], 0.04),
        ("l_wrist", Some(15), [0.42, 0.95, -0.005], 0.03),
        ("l_hand", Some(16), [0.47, 0.86, 0.010], 0.025),
        ("r_shoulder", Some(3), [-0.18, 1.44, 0.000], 0.05),
        ("r_elbow", Some(18), [-0.30, 1.18, 0.015], 0.04),
        ("r_wrist", Some(19), [-0.42, 0.95, -0.005], 0.03),
        ("r_hand", Some(20), [-0.47, 0.86, 0.010], 0.025),
    ];
    Skeleton {
        names: spec.iter().map(|s| s.0).collect(),
        parents: spec.iter().map(|s| s.1).collect(),
        rest: spec.iter().map(|s| Vector3::new(s.2[0], s.2[1], s.2[2])).collect(),
        radii: spec.iter().map(|s| s.3).collect(),
        eval_points: vec![
            ("pelvis", 0, None),
            ("spine2", 2, None),
            ("chest", 3, None),
            ("neck", 4, None),
            ("head", 5, None),
            ("l_hip", 6, None),
            ("l_knee", 7, None),
            ("l_ankle", 8, None),
            ("r_hip", 10, None),
            ("r_knee", 11, None),
            ("r_ankle", 12, None),
            ("l_shoulder", 14, None),
            ("l_elbow", 15, None),
            ("l_wrist", 16, None),
            ("r_shoulder", 18, None),
            ("r_elbow", 19, None),
            ("r_wrist", 20, None),
        ],
        init_roles: vec!["l_hip", "r_hip", "l_shoulder", "r_shoulder"],
    }
}

fn hand_skeleton() -> Skeleton {
    let spec: [(&str, Option<usize>, [f64; 3], f64); 16] = [
        ("wrist", None, [0.000, 0.000, 0.000], 0.030),
        ("thumb1", Some(0), [0.030, -0.010, 0.030], 0.012),
        ("thumb2", Some(1), [0.060, -0.015, 0.045], 0.010),
        ("thumb3", Some(2), [0.080, -0.020, 0.055], 0.008),
        ("index1", Some(0), [0.090, 0.000, 0.025], 0.011),
        ("index2", Some(4), [0.125, 0.000, 0.028], 0.009),
        ("index3", Some(5), [0.150, 0.000, 0.030], 0.008),
        ("middle1", Some(0), [0.090, 0.000, 0.008], 0.011),
        ("middle2", Some(7), [0.130, 0.000, 0.008], 0.009),
        ("middle3", Some(8), [0.160, 0.000, 0.008], 0.008),
        ("ring1", Some(0), [0.090, 0.000, -0.012], 0.011),
        ("ring2", Some(10), [0.125, 0.000, -0.014], 0.009),
        ("ring3", Some(11), [0.150, 0.000, -0.016], 0.008),
        ("pinky1", Some(0), [0.085, 0.000, -0.030], 0.010),
        ("pinky2", Some(13), [0.110, 0.000, -0.034], 0.008),
        ("pinky3", Some(14), [0.130, 0.000, -0.037], 0.007),
    ];
    Skeleton {
        names: spec.iter().map(|s| s.0).collect(),
        parents: spec.iter().map(|s| s.1).collect(),
        rest: spec.iter().map(|s| Vector3::new(s.2[0], s.2[1], s.2[2])).collect(),
        radii: spec.iter().map(|s| s.3).collect(),
        eval_points: vec![
            ("wrist", 0, None),
            ("thumb1", 1, None),
            ("thumb2", 2, None),
            ("thumb3", 3, None),
            ("thumb_tip", 3, Some(0.02)),
            ("index1", 4, None),
            ("index2", 5, None),
            ("index3", 6, None),
            ("index_tip", 6, Some(0.02)),
            ("middle1", 7, None),
            ("middle2", 8, None),
            ("middle3", 9, None),
            ("middle_tip", 9, Some(0.02)),
            ("ring1", 10, None),
            ("ring2", 11, None),
            ("ring3", 12, None),
            ("ring_tip", 12, Some(0.02)),
            ("pinky1", 13, None),
            ("pinky2", 14, None),
            ("pinky3", 15, None),
            ("pinky_tip", 15, Some(0.018)),
        ],
        init_roles: vec!["wrist", "thumb1", "index1", "pinky1"],
    }
}

fn face_skeleton() -> Skeleton {
    let spec: [(&str, Option<usize>, [f64; 3], f64); 2] = [
        ("skull", None, [0.000, 0.000, 0.000], 0.055),
        ("jaw", Some(0), [0.000, -0.045, 0.020], 0.035),
    ];
    Skeleton {
        names: spec.iter().map(|s| s.0).collect(),
        parents: spec.iter().map(|s| s.1).collect(),
        rest: spec.iter().map(|s| Vector3::new(s.2[0], s.2[1], s.2[2])).collect(),
        radii: spec.iter().map(|s| s.3).collect(),
        // Landmarks are free-standing rings; the kinematic column names the
        // joint they are skinned to.
        eval_points: vec![
            ("l_brow", 0, None),
            ("r_brow", 0, None),
            ("l_eye", 0, None),
            ("r_eye", 0, None),
            ("nose_tip", 0, None),
            ("l_cheek", 0, None),
            ("r_cheek", 0, None),
            ("l_mouth", 1, None),
            ("r_mouth", 1, None),
            ("chin", 1, None),
        ],
        init_roles: vec!["l_eye", "r_eye", "nose_tip", "chin"],
    }
}

fn face_landmark_positions() -> Vec<Vector3<f64>> {
    vec![
        Vector3::new(0.035, 0.045, 0.055),
        Vector3::new(-0.035, 0.045, 0.055),
        Vector3::new(0.030, 0.020, 0.060),
        Vector3::new(-0.030, 0.020, 0.060),
        Vector3::new(0.000, -0.005, 0.075),
        Vector3::new(0.050, -0.020, 0.045),
        Vector3::new(-0.050, -0.020, 0.045),
        Vector3::new(0.025, -0.042, 0.055),
        Vector3::new(-0.025, -0.042, 0.055),
        Vector3::new(0.000, -0.075, 0.045),
    ]
}

/// Interior rings added along every bone.
const BONE_RINGS: usize = 2;

/// Generates a part model. The geometry is fixed per part; the seed shapes
/// only the smooth displacement bases.
pub fn gen_model(part: PartKind, seed: u64) -> KinematicModel {
    let skel = match part {
        PartKind::Body => body_skeleton(),
        PartKind::Hand => hand_skeleton(),
        PartKind::Face => face_skeleton(),
    };
    let j = skel.names.len();
    let mut builder = MeshBuilder::new();

    // One ring per kinematic joint, centered exactly on it.
    let mut joint_rings: Vec<Vec<usize>> = Vec::with_capacity(j);
    for idx in 0..j {
        let axis = match skel.parents[idx] {
            Some(p) => skel.rest[idx] - skel.rest[p],
            None => Vector3::new(0.0, 1.0, 0.0),
        };
        let ring = builder.add_ring(&RingSpec {
            center: skel.rest[idx],
            axis,
            radius: skel.radii[idx],
            skin: vec![(idx, 1.0)],
        });
        joint_rings.push(ring);
    }

    // Interior rings along each bone, skinned by a ramp between parent and
    // child, plus tube faces joint-to-joint.
    for idx in 1..j {
        let p = skel.parents[idx].unwrap();
        let axis = skel.rest[idx] - skel.rest[p];
        let mut prev = joint_rings[p].clone();
        for k in 1..=BONE_RINGS {
            let t = k as f64 / (BONE_RINGS + 1) as f64;
            let ring = builder.add_ring(&RingSpec {
                center: skel.rest[p] + axis * t,
                axis,
                radius: skel.radii[p] * (1.0 - t) + skel.radii[idx] * t,
                skin: vec![(p, 1.0 - t), (idx, t)],
            });
            builder.connect(&prev, &ring);
            prev = ring;
        }
        builder.connect(&prev, &joint_rings[idx]);
    }

    // Evaluation points: joint rings, tip rings past distal joints, or
    // free-standing landmark rings (face).
    let mut external_regressor: Vec<SparseRow> = Vec::new();
    let mut roles_eval = BTreeMap::new();
    if part == PartKind::Face {
        for (k, (name, joint, _)) in skel.eval_points.iter().enumerate() {
            let ring = builder.add_ring(&RingSpec {
                center: face_landmark_positions()[k],
                axis: Vector3::new(0.0, 0.0, 1.0),
                radius: 0.008,
                skin: vec![(*joint, 1.0)],
            });
            external_regressor
                .push(ring.iter().map(|&v| (v, 1.0 / RING_SIZE as f64)).collect());
            roles_eval.insert(name.to_string(), k);
        }
    } else {
        for (k, (name, joint, tip)) in skel.eval_points.iter().enumerate() {
            let ring = match tip {
                None => joint_rings[*joint].clone(),
                Some(ext) => {
                    let p = skel.parents[*joint].unwrap();
                    let dir = (skel.rest[*joint] - skel.rest[p]).normalize();
                    builder.add_ring(&RingSpec {
                        center: skel.rest[*joint] + dir * *ext,
                        axis: dir,
                        radius: skel.radii[*joint] * 0.8,
                        skin: vec![(*joint, 1.0)],
                    })
                }
            };
            external_regressor
                .push(ring.iter().map(|&v| (v, 1.0 / RING_SIZE as f64)).collect());
            roles_eval.insert(name.to_string(), k);
        }
    }

    let n = builder.vertices.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shape_basis = smooth_fields(&mut rng, &builder.vertices, SHAPE_DIM, 0.02);
    center_on_joints(&mut shape_basis, &joint_rings);
    let expr_basis = if part == PartKind::Face {
        let mut basis = smooth_fields(&mut rng, &builder.vertices, EXPR_DIM, 0.01);
        center_on_joints(&mut basis, &joint_rings);
        basis
    } else {
        vec![vec![]; n]
    };

    let joint_regressor = joint_rings
        .iter()
        .map(|ring| ring.iter().map(|&v| (v, 1.0 / RING_SIZE as f64)).collect())
        .collect();
    let roles_kinematic: BTreeMap<String, usize> =
        skel.names.iter().enumerate().map(|(i, n)| (n.to_string(), i)).collect();
    let init_eval_joints =
        skel.init_roles.iter().map(|r| roles_eval[&r.to_string()]).collect();

    let model = KinematicModel {
        part,
        template: builder.vertices,
        faces: builder.faces,
        parents: skel.parents,
        shape_basis,
        expr_basis,
        joint_regressor,
        skin_weights: builder.skin,
        external_regressor,
        roles_kinematic,
        roles_eval,
        init_eval_joints,
    };
    model.validate().expect("generated model is structurally valid");
    model
}

/// Smooth sinusoidal displacement fields: low spatial frequency, one fixed
/// direction per mode, amplitude in meters per unit coefficient.
fn smooth_fields(
    rng: &mut ChaCha8Rng,
    vertices: &[Vector3<f64>],
    modes: usize,
    amplitude: f64,
) -> Vec<Vec<Vector3<f64>>> {
    let mut params = Vec::with_capacity(modes);
    for _ in 0..modes {
        let dir = {
            let v = Vector3::new(
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            );
            if v.norm() < 1e-9 {
                Vector3::new(0.0, 1.0, 0.0)
            } else {
                v.normalize()
            }
        };
        let freq = Vector3::new(
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
        );
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        params.push((dir, freq, phase));
    }
    let mut fields: Vec<Vec<Vector3<f64>>> = vertices
        .iter()
        .map(|p| {
            params
                .iter()
                .map(|(dir, freq, phase)| dir * (amplitude * (freq.dot(p) + phase).sin()))
                .collect()
        })
        .collect();
    // Remove each mode's mean displacement: shape changes deform the surface
    // but never translate it, keeping shape separable from placement.
    let n = vertices.len().max(1) as f64;
    for m in 0..modes {
        let mean: Vector3<f64> = fields.iter().map(|row| row[m]).sum::<Vector3<f64>>() / n;
        for row in fields.iter_mut() {
            row[m] -= mean;
        }
    }
    fields
}

/// Shifts each deformation mode so its mean displacement over the joint
/// rings is exactly zero. Uniform translation of the rest joints is a motion
/// the data term of a fit can never see (it trades off against extrinsic
/// translation), so the bases must not contain it.
fn center_on_joints(fields: &mut [Vec<Vector3<f64>>], joint_rings: &[Vec<usize>]) {
    if fields.is_empty() || fields[0].is_empty() {
        return;
    }
    let modes = fields[0].len();
    for m in 0..modes {
        let mut c = Vector3::zeros();
        for ring in joint_rings {
            let jc: Vector3<f64> = ring.iter().map(|&v| fields[v][m]).sum();
            c += jc / ring.len() as f64;
        }
        c /= joint_rings.len() as f64;
        for row in fields.iter_mut() {
            row[m] -= c;
        }
    }
}

/// Configuration for [`gen_dataset`].
#[derive(Debug, Clone)]
pub struct GenDataConfig {
    pub name: String,
    pub seed: u64,
    pub num_samples: usize,
    pub supervision: SupervisionKind,
    pub descriptor: DescriptorKind,
    pub corruption: CorruptionConfig,
}

/// The linear pose manifold shared by every dataset of one model.
pub struct PoseManifold {
    pub mean: Vec<f64>,
    /// D x d, D = 3 * (J - 1).
    pub basis: Vec<Vec<f64>>,
}

impl PoseManifold {
    /// Derived from the model content hash, not the dataset seed: two
    /// datasets of the same model share it exactly.
    pub fn for_model(model: &KinematicModel) -> Self {
        let hash = model.content_hash();
        let seed = u64::from_str_radix(&hash[..16], 16).expect("hash is hex");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = pose_manifold_dim(model.part);
        let dim = 3 * (model.num_joints() - 1);
        let scale = 0.3 / (d as f64).sqrt();
        let mean: Vec<f64> =
            (0..dim).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
        let basis: Vec<Vec<f64>> = (0..dim)
            .map(|_| (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        PoseManifold { mean, basis }
    }

    pub fn latent_dim(&self) -> usize {
        self.basis.first().map_or(0, |r| r.len())
    }

    /// Maps a latent code to stacked axis-angle coordinates.
    pub fn decode(&self, z: &[f64]) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.basis)
            .map(|(m, row)| m + row.iter().zip(z).map(|(a, zi)| a * zi).sum::<f64>())
            .collect()
    }
}

/// Pixels-per-meter scale that puts the template comfortably inside the crop.
fn base_scale(model: &KinematicModel) -> f64 {
    let mut min = Vector3::repeat(f64::INFINITY);
    let mut max = Vector3::repeat(f64::NEG_INFINITY);
    for v in &model.template {
        min = min.inf(v);
        max = max.sup(v);
    }
    let extent = (max - min).amax().max(1e-6);
    200.0 / extent
}

/// Synthesizes a dataset with ground truth in the sealed block.
pub fn gen_dataset(model: &KinematicModel, cfg: &GenDataConfig) -> Result<DatasetFile, ModelError> {
    let manifold = PoseManifold::for_model(model);
    let k = model.num_eval_joints();
    let corruption = cfg.corruption;

    // Independent substreams per corruption channel, seeded in fixed order,
    // so one channel's draw count never shifts another channel.
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut next = || ChaCha8Rng::seed_from_u64(master.gen::<u64>());
    let mut rng_pose = next();
    let mut rng_cam = next();
    let mut rng_sup = next();
    let mut rng_missing = next();
    let mut rng_trunc = next();
    let mut rng_desc = next();

    let s_base = base_scale(model);
    let mut samples = Vec::with_capacity(cfg.num_samples);
    let mut truth = Vec::with_capacity(cfg.num_samples);

    for _ in 0..cfg.num_samples {
        // True parameters.
        let z: Vec<f64> = (0..manifold.latent_dim())
            .map(|_| rng_pose.sample::<f64, _>(StandardNormal))
            .collect();
        let theta = manifold.decode(&z);
        let joint_rots: Vec<AxisAngle> =
            theta.chunks(3).map(|c| AxisAngle::new(c[0], c[1], c[2])).collect();
        let alpha: f64 = rng_pose.gen_range(-1.0..1.0);
        let beta: Vec<f64> =
            (0..SHAPE_DIM).map(|_| 0.3 * rng_pose.sample::<f64, _>(StandardNormal)).collect();
        let psi: Vec<f64> = if model.has_expressions() {
            (0..EXPR_DIM).map(|_| 0.3 * rng_pose.sample::<f64, _>(StandardNormal)).collect()
        } else {
            vec![0.0; EXPR_DIM]
        };

        let mut params = ModelParams {
            part: model.part,
            global_rot: AxisAngle::new(0.0, alpha, 0.0),
            joint_rots,
            beta,
            psi,
            camera: WeakPerspective::new(1.0, 0.0, 0.0),
            latent: None,
        };

        // Camera: jittered scale, then centered on the posed joints.
        let posed = model_forward(model, &params)?;
        let s = s_base * rng_cam.gen_range(0.85..1.15);
        let (mut cx, mut cy) = (0.0, 0.0);
        for p in &posed.joints3d {
            cx += p.x;
            cy += p.y;
        }
        cx /= k as f64;
        cy /= k as f64;
        let tx = CROP / 2.0 - s * cx + rng_cam.gen_range(-5.0..5.0);
        let ty = CROP / 2.0 - s * cy + rng_cam.gen_range(-5.0..5.0);
        params.camera = WeakPerspective::new(s, tx, ty);

        let p2d_clean = project(&posed.joints3d, &params.camera);

        // Per-sample truncation: one crop edge becomes opaque.
        let truncated = rng_trunc.gen_range(0.0..1.0) < corruption.truncate_rate;
        let cut_edge = rng_trunc.gen_range(0..4u8);
        let cut_at: f64 = CROP * rng_trunc.gen_range(0.3..0.6);
        let survives_cut = |p: &Vector2<f64>| -> bool {
            if !truncated {
                return true;
            }
            match cut_edge {
                0 => p.x >= cut_at,
                1 => p.x <= CROP - cut_at,
                2 => p.y >= cut_at,
                _ => p.y <= CROP - cut_at,
            }
        };
        let in_crop =
            |p: &Vector2<f64>| p.x >= 0.0 && p.x < CROP && p.y >= 0.0 && p.y < CROP;
        let visible: Vec<bool> = p2d_clean.iter().map(|p| in_crop(p) && survives_cut(p)).collect();

        let supervision = match cfg.supervision {
            SupervisionKind::ThreeD => {
                let joints: Vec<Vector3<f64>> = posed
                    .joints3d
                    .iter()
                    .map(|p| {
                        p + Vector3::new(
                            corruption.sigma3d * rng_sup.sample::<f64, _>(StandardNormal),
                            corruption.sigma3d * rng_sup.sample::<f64, _>(StandardNormal),
                            corruption.sigma3d * rng_sup.sample::<f64, _>(StandardNormal),
                        )
                    })
                    .collect();
                let present: Vec<bool> = (0..k)
                    .map(|_| rng_missing.gen_range(0.0..1.0) >= corruption.missing_rate)
                    .collect();
                Supervision::ThreeD { joints, present }
            }
            SupervisionKind::TwoD => {
                let joints: Vec<Vector2<f64>> = p2d_clean
                    .iter()
                    .map(|p| {
                        p + Vector2::new(
                            corruption.sigma2d * rng_sup.sample::<f64, _>(StandardNormal),
                            corruption.sigma2d * rng_sup.sample::<f64, _>(StandardNormal),
                        )
                    })
                    .collect();
                Supervision::TwoD { joints, visible: visible.clone() }
            }
        };

        let descriptor = build_descriptor(
            cfg.descriptor,
            &p2d_clean,
            &visible,
            &posed.joints3d,
            corruption.sigma2d,
            corruption.descriptor_noise,
            &mut rng_desc,
        );

        samples.push(Sample { descriptor, supervision, annotation: None });
        truth.push(params);
    }

    let header = DatasetHeader::new(
        &cfg.name,
        model.part,
        cfg.supervision,
        cfg.descriptor,
        DESCRIPTOR_DIM,
        k,
        cfg.seed,
        model.content_hash(),
        corruption,
    );
    Ok(DatasetFile { header, samples, sealed_eval: Some(SealedTruth { params: truth }) })
}

/// Builds the input descriptor for one sample.
///
/// Image kind: noisy crop-normalized keypoints (masked to zero when not
/// visible), then depth-order signs relative to the root evaluation joint
/// from the true geometry, then zero padding; Gaussian noise on every
/// component. Pose2d kind: clean masked keypoints only, no depth cues, no
/// noise.
fn build_descriptor(
    kind: DescriptorKind,
    p2d_clean: &[Vector2<f64>],
    visible: &[bool],
    joints3d: &[Vector3<f64>],
    sigma2d: f64,
    descriptor_noise: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let k = p2d_clean.len();
    assert!(2 * k + DEPTH_CUES <= DESCRIPTOR_DIM, "descriptor layout overflow");
    let mut out = Vec::with_capacity(DESCRIPTOR_DIM);
    match kind {
        DescriptorKind::Image => {
            for (p, vis) in p2d_clean.iter().zip(visible) {
                if *vis {
                    out.push(
                        (p.x + sigma2d * rng.sample::<f64, _>(StandardNormal)) / CROP,
                    );
                    out.push(
                        (p.y + sigma2d * rng.sample::<f64, _>(StandardNormal)) / CROP,
                    );
                } else {
                    // Keep the draw count independent of visibility.
                    let _: f64 = rng.sample(StandardNormal);
                    let _: f64 = rng.sample(StandardNormal);
                    out.push(0.0);
                    out.push(0.0);
                }
            }
            for i in 1..=DEPTH_CUES {
                let bit = if i < joints3d.len() {
                    if joints3d[i].z >= joints3d[0].z {
                        1.0
                    } else {
                        -1.0
                    }
                } else {
                    0.0
                };
                out.push(bit);
            }
            out.resize(DESCRIPTOR_DIM, 0.0);
            for v in out.iter_mut() {
                *v += descriptor_noise * rng.sample::<f64, _>(StandardNormal);
            }
        }
        DescriptorKind::Pose2d => {
            for (p, vis) in p2d_clean.iter().zip(visible) {
                if *vis {
                    out.push(p.x / CROP);
                    out.push(p.y / CROP);
                } else {
                    out.push(0.0);
                    out.push(0.0);
                }
            }
            out.resize(DESCRIPTOR_DIM, 0.0);
        }
    }
    out
}
