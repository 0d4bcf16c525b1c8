//! Sub-pixel land cover fraction estimation toolkit.
//!
//! Estimates per-cell built-up and vegetation fractions from coarse-resolution
//! multiband rasters. A small convolutional regression network is trained
//! against fractions aggregated from a fine-resolution hard-classified label
//! raster; linear-regression and random-forest baselines plus a full accuracy
//! assessment suite round out the pipeline.
//!
//! Modules:
//! - [`raster`]: raster/label containers, on-disk format, alignment, synthetic scenes
//! - [`features`]: spectral indices (EBBI/NDVI), padding, input tensor assembly
//! - [`reference`]: ISODATA reference maps, fraction aggregation, confusion/kappa
//! - [`nn`]: from-scratch convolutional regression (forward/backward/Adam)
//! - [`baselines`]: linear regression and random forest regression baselines
//! - [`eval`]: fraction metrics, block aggregation, ROC, histograms, k-fold CV

pub mod baselines;
pub mod error;
pub mod eval;
pub mod features;
pub mod nn;
pub mod raster;
pub mod reference;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
