//! Dataset containers and IO.
//!
//! A sample pairs an input descriptor with exactly one kind of supervision:
//! 3D joints with a presence mask, or 2D keypoints with a visibility mask.
//! Annotation adds per-sample parameter estimates alongside the supervision.
//!
//! Ground-truth parameters travel in a separate sealed block that only the
//! evaluation loader exposes. The training view ([`Dataset`]) has no field
//! for them, so nothing downstream of [`Dataset::load_training`] can read
//! ground truth even by accident.

use crate::bodymodel::{ModelParams, PartKind};
use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Dataset file format version.
pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("unsupported dataset file (kind '{kind}', version {version})")]
    UnsupportedFormat { kind: String, version: u32 },
    #[error("sample {index}: {problem}")]
    BadSample { index: usize, problem: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// What kind of supervision every sample in a dataset carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupervisionKind {
    ThreeD,
    TwoD,
}

/// What the input descriptor encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptorKind {
    /// Image-like observation: noisy normalized 2D keypoints plus relative
    /// depth-order cues.
    Image,
    /// Clean normalized 2D keypoints only; carries no depth information.
    Pose2d,
}

/// Noise and dropout applied when a dataset is synthesized.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionConfig {
    /// Gaussian noise on 3D joints, meters.
    pub sigma3d: f64,
    /// Probability that a 3D joint is dropped from the presence mask.
    pub missing_rate: f64,
    /// Gaussian noise on 2D keypoints, pixels.
    pub sigma2d: f64,
    /// Probability that a sample is truncated at a crop edge.
    pub truncate_rate: f64,
    /// Gaussian noise on every descriptor component.
    pub descriptor_noise: f64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        CorruptionConfig {
            sigma3d: 0.005,
            missing_rate: 0.1,
            sigma2d: 2.0,
            truncate_rate: 0.1,
            descriptor_noise: 0.01,
        }
    }
}

impl CorruptionConfig {
    /// No noise, no dropout, no truncation.
    pub fn none() -> Self {
        CorruptionConfig {
            sigma3d: 0.0,
            missing_rate: 0.0,
            sigma2d: 0.0,
            truncate_rate: 0.0,
            descriptor_noise: 0.0,
        }
    }
}

/// Supervision attached to one sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Supervision {
    /// Evaluation-joint positions in model-world meters with a per-joint
    /// presence mask.
    ThreeD { joints: Vec<Vector3<f64>>, present: Vec<bool> },
    /// Keypoints in crop pixels with a per-joint visibility mask.
    TwoD { joints: Vec<Vector2<f64>>, visible: Vec<bool> },
}

impl Supervision {
    pub fn kind(&self) -> SupervisionKind {
        match self {
            Supervision::ThreeD { .. } => SupervisionKind::ThreeD,
            Supervision::TwoD { .. } => SupervisionKind::TwoD,
        }
    }

    pub fn num_joints(&self) -> usize {
        match self {
            Supervision::ThreeD { joints, .. } => joints.len(),
            Supervision::TwoD { joints, .. } => joints.len(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sample {
    /// Input descriptor, length `header.descriptor_dim`.
    pub descriptor: Vec<f64>,
    pub supervision: Supervision,
    /// Parameter estimate produced by a fitter or annotator; never ground
    /// truth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<ModelParams>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub version: u32,
    pub kind: String,
    pub name: String,
    pub part: PartKind,
    pub supervision: SupervisionKind,
    pub descriptor: DescriptorKind,
    pub descriptor_dim: usize,
    pub num_eval_joints: usize,
    pub seed: u64,
    /// Content hash of the model the data was synthesized from.
    pub model_hash: String,
    pub corruption: CorruptionConfig,
}

impl DatasetHeader {
    pub fn new(
        name: &str,
        part: PartKind,
        supervision: SupervisionKind,
        descriptor: DescriptorKind,
        descriptor_dim: usize,
        num_eval_joints: usize,
        seed: u64,
        model_hash: String,
        corruption: CorruptionConfig,
    ) -> Self {
        DatasetHeader {
            version: DATASET_FORMAT_VERSION,
            kind: "dataset".into(),
            name: name.into(),
            part,
            supervision,
            descriptor,
            descriptor_dim,
            num_eval_joints,
            seed,
            model_hash,
            corruption,
        }
    }
}

/// Ground-truth parameters, stored apart from the samples and visible only
/// through [`DatasetFile`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SealedTruth {
    /// True parameters per sample, in sample order.
    pub params: Vec<ModelParams>,
}

/// Training view of a dataset: descriptors, supervision, annotations. No
/// ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<Sample>,
}

/// Full on-disk form: the training view plus the sealed ground-truth block
/// used only for evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetFile {
    pub header: DatasetHeader,
    pub samples: Vec<Sample>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sealed_eval: Option<SealedTruth>,
}

fn validate_header(header: &DatasetHeader) -> Result<(), DatasetError> {
    if header.kind != "dataset" || header.version != DATASET_FORMAT_VERSION {
        return Err(DatasetError::UnsupportedFormat {
            kind: header.kind.clone(),
            version: header.version,
        });
    }
    Ok(())
}

fn validate_samples(header: &DatasetHeader, samples: &[Sample]) -> Result<(), DatasetError> {
    for (index, s) in samples.iter().enumerate() {
        if s.descriptor.len() != header.descriptor_dim {
            return Err(DatasetError::BadSample {
                index,
                problem: format!(
                    "descriptor has {} components, header says {}",
                    s.descriptor.len(),
                    header.descriptor_dim
                ),
            });
        }
        if s.supervision.kind() != header.supervision {
            return Err(DatasetError::BadSample {
                index,
                problem: "supervision kind differs from header".into(),
            });
        }
        let (n, masks) = match &s.supervision {
            Supervision::ThreeD { joints, present } => (joints.len(), present.len()),
            Supervision::TwoD { joints, visible } => (joints.len(), visible.len()),
        };
        if n != header.num_eval_joints || masks != n {
            return Err(DatasetError::BadSample {
                index,
                problem: format!(
                    "{n} joints with {masks} mask entries, header says {}",
                    header.num_eval_joints
                ),
            });
        }
    }
    Ok(())
}

impl DatasetFile {
    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    /// Evaluation loader: keeps the sealed ground-truth block.
    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path)?;
        let file: DatasetFile = serde_json::from_str(&text)?;
        validate_header(&file.header)?;
        validate_samples(&file.header, &file.samples)?;
        if let Some(sealed) = &file.sealed_eval {
            if sealed.params.len() != file.samples.len() {
                return Err(DatasetError::BadSample {
                    index: sealed.params.len().min(file.samples.len()),
                    problem: "sealed block length differs from sample count".into(),
                });
            }
        }
        Ok(file)
    }

    /// Drops the sealed block, leaving the training view.
    pub fn into_training(self) -> Dataset {
        Dataset { header: self.header, samples: self.samples }
    }
}

impl Dataset {
    /// Training loader: the sealed ground-truth block is discarded before
    /// this returns, and the returned type cannot carry it.
    pub fn load_training(path: &Path) -> Result<Self, DatasetError> {
        Ok(DatasetFile::load(path)?.into_training())
    }

    /// Saves the training view. Any sealed block the source file had is gone.
    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let file = DatasetFile {
            header: self.header.clone(),
            samples: self.samples.clone(),
            sealed_eval: None,
        };
        file.save(path)
    }
}
