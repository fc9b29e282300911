//! Cell-level alignment of two segmentation outputs of the same tissue.
//!
//! A coarse rigid registration of cell centroids by Coherent Point Drift is
//! refined by graph matching inside dense windows, filtered for local
//! consistency and finalized with a weighted affine fit. Landmark metrics,
//! cross-modality feature concordance and a synthetic scenario generator
//! support evaluation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cpd;
pub mod error;
pub mod evaluation;
pub mod fit;
pub mod geometry;
pub mod graph;
pub mod io;
pub mod matching;
pub mod pipeline;
pub mod spatial;
pub mod synth;

#[doc(hidden)]
pub mod cli;

pub use error::{Error, Result};
pub use geometry::{AffineTransform, Point2D, RigidTransform};
pub use io::{CellRecord, CellTable, LandmarkSet};
pub use matching::{Match, MatchSet};
pub use pipeline::{align, align_large, AlignmentConfig, AlignmentResult};

/// Crate version, as recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
