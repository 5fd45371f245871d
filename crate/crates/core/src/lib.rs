//! Linear-time superpixel detection and quality assessment for uncalibrated
//! 8-bit RGB (or false-color) images.
//!
//! The pipeline runs in six stages over row stripes of the input:
//!
//! 1. [`constancy`]: per-channel self-organizing histogram stretch.
//! 2. [`naming`]: static decision tree mapping every RGB triple onto a prior
//!    dictionary of color names (49 + 1 fine, 11 + 1 coarse).
//! 3. [`segmentation`]: two-pass connected-component labeling of the color
//!    maps with seam merging between stripes.
//! 4. [`contours`]: 4/8-adjacency cross-aura contour maps, roundness and the
//!    texture rule.
//! 5. [`sdt`]: segment description table.
//! 6. [`reconstruction`]: object-mean view, VQ error image and RMSE.
//!
//! [`vq`] holds the inductive k-means baselines, [`qa`] the z-score evaluation
//! harness and [`pipeline`] the driver used by the `qnq` binary.

pub mod codec;
pub mod constancy;
pub mod contours;
pub mod error;
pub mod io;
pub mod naming;
pub mod pipeline;
pub mod qa;
pub mod raster;
pub mod reconstruction;
pub mod sdt;
pub mod segmentation;
pub mod vq;

pub use error::{QnqError, Result};
pub use raster::{Histogram256, RasterImage, TileScheme};
