//! Streaming approximate nearest neighbor fields for video.
//!
//! Every patch of every incoming frame is matched against a fixed dictionary
//! of unit-norm reference patches. Candidates are narrowed per query by
//! intersecting "rings" (distance shells around anchor references), each of
//! which is a contiguous window of a pre-sorted distance row and therefore
//! costs one distance evaluation and two binary searches.
//!
//! The crate is organised bottom-up:
//!
//! * [`patch`]: frames, patch extraction, normalisation, metrics.
//! * [`model`]: cluster tree, reference dictionary and sorted distance rows.
//! * [`search`]: the per-query ring-intersection search.
//! * [`engine`]: frame-level propagation of matches through time.
//! * [`transforms`]: reconstruction and effect transfer from a field.
//! * [`eval`]: exact oracle, coherency statistics and efficiency summaries.
//! * [`format`]: the `RIAN` model and `ANNF` stream file formats.

pub mod color;
pub mod engine;
mod error;
pub mod eval;
pub mod format;
pub mod model;
pub mod patch;
pub mod search;
pub mod synth;
pub mod transforms;

pub use engine::{init_field, process_frame, AnnField, FieldStream, FrameStats};
pub use error::{Error, Result};
pub use model::{build_model, ModelBuild, ModelSource, ReferenceModel};
pub use patch::{distance, extract_patches, normalize_patch, Frame, MetricKind, Patch, PatchGrid, PatchShape};
pub use search::{riann_query, QueryResult, QueryScratch, SearchParams};
