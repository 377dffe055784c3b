//! Label transfer from RGB segmentation masks onto co-aligned multispectral
//! imagery, plus the surrounding dataset tooling: frame planning and pairing,
//! mask codecs, augmentation filters, detection evaluation, stage timing, and
//! the human review log.
//!
//! Every pipeline stage is a plain library call; the `matt` binary in the
//! `matt-cli` crate is a thin wrapper over this crate.

pub mod dataset;
pub mod evaluate;
pub mod imgproc;
pub mod ingest;
pub mod maskio;
pub mod pipeline;
pub mod review;
pub mod timing;
pub mod transfer;

mod band;
mod error;

pub use band::Band;
pub use error::{Error, Result};

pub use ingest::{CaptureMeta, FramePair, Period, SensorProfile};
pub use maskio::{BBoxNorm, Geometry, LabelFile, LabelMode, LabelRecord, Mask, MaskSet, PolygonNorm};
pub use transfer::AffineCal;

/// Version string recorded in dataset provenance.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
