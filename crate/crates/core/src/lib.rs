//! Plaque characterization pipelines on synthetic vessel phantoms.
//!
//! The crate is organized bottom-up:
//!
//! * [`volume`] — 3D scalar volumes, trilinear sampling, histogram
//!   equalization, raw+header file container.
//! * [`mpr`] — centerline resampling, rotation-minimizing frames,
//!   multi-planar reformatting, cube cutting, polar transform.
//! * [`radiomics`] — LoG / Haar-wavelet image transforms and first-order,
//!   shape, GLCM, GLRLM feature extraction.
//! * [`gbt`] — second-order gradient-boosted trees with logistic loss.
//! * [`nn`] — a small dense/convolutional/recurrent network engine with
//!   manual backprop, trained by Adam.
//! * [`phantom`] — synthetic stenotic-vessel volume generator with ground
//!   truth lesion records.
//! * [`eval`] — labels, stratified grouped cross-validation folds, ranking
//!   and confusion-matrix metrics.
//! * [`pipeline`] — lesion sample construction, augmentation, and the four
//!   scoring approaches end to end.
//! * [`config`] — experiment configuration files tying it all together.

pub mod config;
pub mod eval;
pub mod gbt;
pub mod mpr;
pub mod nn;
pub mod phantom;
pub mod pipeline;
pub mod radiomics;
pub mod rng;
pub mod volume;
