//! Library for building 3D pseudo-ground-truth annotations over a simplified
//! parametric skinned human model.
//!
//! The crate provides the full desk-scale pipeline: rotation representations
//! ([`rotmath`]), the skinned kinematic model and its hand-derived reverse-mode
//! gradients ([`bodymodel`]), cameras and rigid/similarity alignment
//! ([`camera`]), PCA pose priors and robust penalties ([`priors`]), a
//! per-sample optimization fitter ([`fitter`]), a neural annotator trained
//! with auxiliary 3D and target 2D supervision ([`annotator`]), body-hand
//! integration ([`integrate`]), evaluation metrics ([`metrics`]) and
//! deterministic synthetic data generation ([`synthdata`]).

pub mod bodymodel;
pub mod camera;
pub mod dataset;
pub mod fitter;
pub mod optim;
pub mod priors;
pub mod rotmath;
pub mod synthdata;
