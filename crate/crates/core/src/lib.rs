//! Voxel-connectivity aware airway segmentation.
//!
//! Binary airway masks are re-expressed as 26 connectivity channels (one per
//! neighbor direction of the 3×3×3 window), a small 3-D encoder-decoder learns
//! to predict those channels, and predictions are decoded back into a mask by
//! keeping only pairwise-consistent links. Around that core live the CT
//! preprocessing steps, the tiling machinery, fuzzy-connectedness
//! consolidation, metrics, a synthetic phantom generator and a raw+JSON volume
//! format.
//!
//! # Modules
//! - [`voxel`]: grid types and the 26-neighbor scheme
//! - [`connectivity`]: encode / pairwise agreement / decode
//! - [`preprocess`]: lung mask, convex-hull repair, distance transform, windowing
//! - [`tiler`]: sliding-window planning, training samples, stitching
//! - [`model`]: toy 3-D U-Net, Dice connectivity loss, Adam, checkpoints
//! - [`fuzzy`]: fuzzy connectedness consolidation
//! - [`metrics`]: DSC / TPR / FPR / PPV
//! - [`phantom`]: synthetic airway phantoms
//! - [`pipeline`]: preprocessing and segmentation glue shared by the CLI
//! - [`volio`]: volume persistence

pub mod connectivity;
pub mod error;
pub mod fuzzy;
pub mod metrics;
pub mod model;
pub mod phantom;
pub mod pipeline;
pub mod preprocess;
pub mod tiler;
pub mod volio;
pub mod voxel;

pub use connectivity::{decode_connectivity, encode_connectivity, pairwise_agreement_filter, ConnectivityCube, CubeKind};
pub use error::{Error, Result};
pub use voxel::{BinaryMask, NeighborScheme, Shape3, Volume, CHANNELS};
