//! Desk-scale crop-field delineation toolkit.
//!
//! The pipeline mirrors a field-boundary mapping workflow end to end:
//!
//! 1. [`synth`] generates deterministic synthetic agricultural landscapes
//!    (field polygons + multi-season imagery) with controllable field-size
//!    distributions, standing in for commercial satellite imagery.
//! 2. [`geom`] rasterizes field polygons into the three training labels
//!    (extent, boundary, distance-to-boundary) plus a supervision mask, and
//!    vectorizes predicted instance rasters back to polygons.
//! 3. [`data`] assembles model-ready datasets: geographic block splits,
//!    random-crop tiling, partial-label subsampling under a labeling budget,
//!    block-mean downsampling, and train-time augmentation.
//! 4. [`nn`] is an attention residual U-Net with three sigmoid heads,
//!    implemented with explicit forward/backward passes (no autodiff
//!    framework) so gradients are auditable against finite differences.
//! 5. [`train`] provides the Tanimoto-with-complement loss (optionally
//!    averaged over fractal depths), the masked multi-task training loop,
//!    and pretrain/fine-tune workflows.
//! 6. [`instance`] extracts individual fields from extent/boundary
//!    probability maps via hierarchical watershed segmentation.
//! 7. [`eval`] computes pixel metrics (OA, F1, MCC) restricted to the
//!    supervision mask and instance metrics (per-field IoU, median IoU,
//!    IoU_k curves).
//!
//! [`reference`] holds slow, independent reference implementations (brute
//! force rasterizers, a naive priority-flood watershed, finite differences)
//! used by the test and acceptance suites to cross-check the fast paths.
//!
//! With the default `parallel` feature, data-parallel inner loops (batch
//! gradients, per-tile inference, scene generation, grid searches) run on
//! rayon; disabling the feature compiles the same code paths sequentially.

pub mod data;
pub mod error;
pub mod eval;
pub mod geom;
pub mod instance;
pub mod nn;
pub mod parallel;
pub mod raster;
pub mod reference;
pub mod synth;
pub mod train;

pub use error::FieldkitError;
pub use raster::{GridGeometry, RasterGrid};
