//! Annotation ambiguity tooling for pedestrian detection datasets.
//!
//! The crate is split along the data flow of a typical session:
//!
//! - [`model`] and [`io`]: ground truth, detections and their file formats.
//! - [`ambiguity`]: per-instance ambiguity from annotator answer counts,
//!   dataset scoring and tag-distribution histograms.
//! - [`prune`]: threshold pruning and representativeness reports.
//! - [`eval`]: benchmark subsets, greedy IoU matching, MR/FPPI curves,
//!   log-average miss rate and precision/recall/F1.

pub mod ambiguity;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod prune;

pub use error::{Error, Result};
pub use model::{
    AnnotatorAnswers, BoundingBox, Dataset, Detection, ImageRecord, Instance, OcclusionTag,
    ProvenanceEntry, TagLevel, TruncationTag,
};
