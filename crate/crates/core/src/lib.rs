//! Hierarchical whole-slide lesion analysis.
//!
//! Slides are scanned at a fine level to build a lesion probability heatmap,
//! connected heatmap components above a physical size become region
//! proposals, and each region is classified at a coarser level by majority
//! vote over randomly sampled patches. Slide labels follow from the most
//! severe region. The crate also carries the evaluation harness (accuracy at
//! patch, region and slide level, Cohen's kappa, stratified folds) and the
//! interpretability tools (decision-stump feature ranking, class activation
//! maps).

pub mod classify;
pub mod detect;
pub mod error;
pub mod evaluate;
pub mod exec;
pub mod explain;
pub mod inference;
pub mod labels;
pub mod pipeline;
pub mod pyramid;
pub mod raster;
pub mod synth;

pub use error::{Error, Result};
pub use exec::Execution;
pub use labels::{max_severity, to_binary, BinaryLabel, ClassLabel, PhysicalCalibration};
