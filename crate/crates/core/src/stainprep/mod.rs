//! Data preparation: stain separation, candidate detection, rebalancing,
//! augmentation.

mod augment;
mod balance;
mod blobs;
mod deconv;

pub use augment::{augment, augment_array, compose_ops, DIHEDRAL_OPS};
pub use balance::rebalance;
pub use blobs::{
    detect_negative_candidates, detect_positive_candidates, doh_response, gaussian_blur,
    inverted_luminance, CandidateKind, CandidateSet, Detection,
};
pub use deconv::{color_deconvolve, color_deconvolve_pixels, StainMatrix, LOG_EPSILON};

use serde::{Deserialize, Serialize};

/// Tunable detection parameters. The paper gives no values for any of
/// these; defaults are calibrated on phantom data and spelled out in the
/// config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StainPrepParams {
    /// Stain OD vectors used for separation; defaults to the classic
    /// H/E/DAB triple, matching the phantom's default.
    pub stain_matrix: StainMatrix,
    /// DAB concentration above which a pixel counts as positive signal.
    pub dab_threshold: f64,
    /// Minimum connected-region area (pixels) for a positive candidate.
    pub min_area: usize,
    /// Scale-space grid for Determinant-of-Hessian blob detection.
    pub doh_sigmas: Vec<f64>,
    /// Response threshold on the scale-normalized DoH.
    pub doh_threshold: f64,
    /// Radius around a positive center inside which negatives are discarded.
    pub exclusion_radius: f64,
    /// Minimum separation between any two reported detections.
    pub min_separation: f64,
}

impl Default for StainPrepParams {
    fn default() -> Self {
        StainPrepParams {
            stain_matrix: StainMatrix::hed(),
            dab_threshold: 0.3,
            min_area: 6,
            doh_sigmas: vec![2.0, 3.0, 4.0, 6.0, 8.0],
            doh_threshold: 1e-4,
            exclusion_radius: 10.0,
            min_separation: 10.0,
        }
    }
}
