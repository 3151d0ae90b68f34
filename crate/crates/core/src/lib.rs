//! Post-hoc transformer checkpoint composition.
//!
//! The crate re-composes fine-tuned checkpoints of a shared pretrained
//! model without further training: layer swapping with transition zones,
//! model soups (uniform and magnitude-weighted), TIES-merging,
//! row-threshold sparsification and layer reversion — plus the row-level
//! delta analysis (MAV statistics and fraction-above-threshold grids) that
//! motivates where to swap.
//!
//! Modules:
//! * [`store`] — single-file tensor containers: lazy reader, streaming
//!   atomic writer, compatibility checks, per-tensor diffs.
//! * [`topology`] — tensor-name classification into (layer, kind).
//! * [`delta`] — `W_ft − W_pre` row MAVs, heatmap grids, CSV/JSON/SVG
//!   exports, inverse-MAV expert weights.
//! * [`merge`] — the merge strategies themselves.
//! * [`recipe`] — declarative JSON merge recipes with a file executor.
//! * [`fixture`] — deterministic synthetic checkpoint triples.

pub mod chunks;
pub mod delta;
pub mod error;
pub mod fixture;
pub mod merge;
pub mod recipe;
pub mod store;
pub mod topology;

pub use error::{Error, Result};
