//! Crowd-aware crop sampling for multi-person pose datasets.
//!
//! Source scenes with many annotated people are cut into crops whose
//! crowdedness, occlusion and person-scale distribution follow configured
//! targets. The crate also ships a synthetic scene generator, dataset
//! statistics and an OKS keypoint evaluator.

pub mod annomodel;
pub mod cli;
pub mod evaluator;
pub mod exec;
pub mod geometry;
pub mod rng;
pub mod sampler;
pub mod scenegen;
pub mod spindex;
pub mod stats;
pub mod synth;

pub use annomodel::{Dataset, PersonAnnotation, SourceScene};
pub use exec::Execution;
pub use geometry::{BBox, Keypoint, Rect};
pub use sampler::{sample_dataset, CropRecord, GenerationConfig};
pub use stats::DatasetStats;
