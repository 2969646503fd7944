//! Stain translation and mitosis detection on histopathology patches.
//!
//! The crate covers the full experiment path: a procedural phantom simulator
//! that produces aligned pseudo-H&E / pseudo-PHH3 patch pairs with known
//! mitosis ground truth, stain separation and candidate detection, generator
//! and classifier networks with hand-rolled backpropagation, adversarial
//! training in paired and unpaired regimes, scenario-based classifier
//! training, and an F1 sweep/report harness.
//!
//! Modules mirror the pipeline stages:
//!
//! - [`domain`]: shared value types, the dataset manifest, validation.
//! - [`phantom`]: the simulator (the stand-in for a double-stained corpus).
//! - [`stainprep`]: color deconvolution, blob detection, rebalancing,
//!   augmentation.
//! - [`nets`]: network specs, forward/backward passes, checkpoints.
//! - [`ganlab`]: adversarial training loops and translation/feature
//!   extraction inference.
//! - [`mitoclass`]: scenario training-set construction, classifier training,
//!   prediction.
//! - [`evalkit`]: confusion counts, F1, threshold/epoch sweeps, reports.
//! - [`pipeline`]: experiment configuration, run directories, stage
//!   sequencing.
//!
//! Data-parallel inner loops go through [`par`]; building with
//! `--no-default-features` drops the rayon dependency and falls back to
//! sequential execution with identical results.

pub mod domain;
pub mod error;
pub mod evalkit;
pub mod ganlab;
pub mod mitoclass;
pub mod nets;
pub mod par;
pub mod phantom;
pub mod pipeline;
pub mod stainprep;

pub use error::{Error, Result};
