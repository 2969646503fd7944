//! Core value types shared by every pipeline stage.
//!
//! All types here are immutable after construction and safe to share across
//! parallel workers. Patches are stored on disk as 8-bit PNGs and converted
//! to `[0,1]` reals at load time; all math downstream happens in real space.

mod manifest;
mod store;
mod validate;

pub use manifest::DatasetManifest;
pub use store::{load_patch_pixels, patch_identity, save_patch_pixels, CorpusStore};
pub use validate::{validate_sample, ValidationOutcome, Violation};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The side length every classifier-bound patch must have.
pub const PATCH_SIDE: usize = 100;

/// Feature map dimensions tapped from the generator's last residual block.
pub const FEATURE_SIDE: usize = 25;
pub const FEATURE_CHANNELS: usize = 256;

/// Stain domain of a patch. Translation maps one to the other, never to
/// itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StainDomain {
    #[serde(rename = "HE")]
    He,
    #[serde(rename = "PHH3")]
    Phh3,
}

impl StainDomain {
    pub fn opposite(self) -> Self {
        match self {
            StainDomain::He => StainDomain::Phh3,
            StainDomain::Phh3 => StainDomain::He,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StainDomain::He => "HE",
            StainDomain::Phh3 => "PHH3",
        }
    }
}

impl std::fmt::Display for StainDomain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for StainDomain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "HE" | "he" => Ok(StainDomain::He),
            "PHH3" | "phh3" => Ok(StainDomain::Phh3),
            other => Err(Error::Config(format!("unknown stain domain `{other}`"))),
        }
    }
}

/// Sample class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "mitosis")]
    Mitosis,
    #[serde(rename = "non_mitosis")]
    NonMitosis,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Mitosis => "mitosis",
            Label::NonMitosis => "non_mitosis",
        }
    }

    /// Binary target used by classifier losses.
    pub fn target(self) -> f64 {
        match self {
            Label::Mitosis => 1.0,
            Label::NonMitosis => 0.0,
        }
    }
}

impl std::str::FromStr for Label {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mitosis" => Ok(Label::Mitosis),
            "non_mitosis" => Ok(Label::NonMitosis),
            other => Err(Error::Config(format!("unknown label `{other}`"))),
        }
    }
}

/// Split a sample belongs to. Assignment is by source slide: no source_id
/// may appear in more than one split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "gan_train")]
    GanTrain,
    #[serde(rename = "cls_train")]
    ClsTrain,
    #[serde(rename = "test")]
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::GanTrain => "gan_train",
            Split::ClsTrain => "cls_train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gan_train" => Ok(Split::GanTrain),
            "cls_train" => Ok(Split::ClsTrain),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// A fixed-size image tile with stain tag and provenance.
///
/// `pixels` is an `(H, W, 3)` array of intensities in `[0,1]`. `center` is
/// the patch center in the source slide frame (kept even for phantom data so
/// positive/negative de-duplication works uniformly).
#[derive(Debug, Clone)]
pub struct Patch {
    pub pixels: Array3<f64>,
    pub stain: StainDomain,
    pub source_id: String,
    pub center: (i64, i64),
}

impl Patch {
    pub fn new(
        pixels: Array3<f64>,
        stain: StainDomain,
        source_id: impl Into<String>,
        center: (i64, i64),
    ) -> Result<Self> {
        let patch = Patch {
            pixels,
            stain,
            source_id: source_id.into(),
            center,
        };
        patch.check_range()?;
        Ok(patch)
    }

    /// Height and width.
    pub fn dims(&self) -> (usize, usize) {
        let s = self.pixels.shape();
        (s[0], s[1])
    }

    pub fn is_classifier_sized(&self) -> bool {
        self.pixels.shape() == [PATCH_SIDE, PATCH_SIDE, 3]
    }

    fn check_range(&self) -> Result<()> {
        if self.pixels.shape()[2] != 3 {
            return Err(Error::ShapeMismatch {
                expected: "HxWx3".into(),
                got: format!("{:?}", self.pixels.shape()),
            });
        }
        for &v in self.pixels.iter() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::Precondition(format!(
                    "patch pixel {v} outside [0,1]"
                )));
            }
        }
        Ok(())
    }
}

/// One labeled sample in a dataset manifest.
///
/// Field names are part of the on-disk contract (see `DatasetManifest`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub patch_ref: String,
    pub label: Label,
    pub stain: StainDomain,
    pub paired_ref: Option<String>,
    pub split: Split,
    pub source_id: String,
    pub center_row: i64,
    pub center_col: i64,
}

/// Activation grid tapped from the generator's last residual block.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub values: Array3<f64>,
    pub origin_patch: String,
}

impl FeatureMap {
    /// Validates the pinned 25x25x256 shape and finiteness.
    pub fn new(values: Array3<f64>, origin_patch: impl Into<String>) -> Result<Self> {
        if values.shape() != [FEATURE_SIDE, FEATURE_SIDE, FEATURE_CHANNELS] {
            return Err(Error::ShapeMismatch {
                expected: format!("{FEATURE_SIDE}x{FEATURE_SIDE}x{FEATURE_CHANNELS}"),
                got: format!("{:?}", values.shape()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("non-finite feature value".into()));
        }
        Ok(FeatureMap {
            values,
            origin_patch: origin_patch.into(),
        })
    }
}

/// Class-ratio handling: the raw pool imbalance, the training target ratio,
/// and the oversampling weight applied to positives.
///
/// Ratios are expressed as negatives per positive: `full_ratio: 60.0` means
/// a pool imbalance of 1:60.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassRatioConfig {
    pub full_ratio: f64,
    pub train_ratio: u32,
    pub oversample_weight: f64,
}

impl Default for ClassRatioConfig {
    fn default() -> Self {
        ClassRatioConfig {
            full_ratio: 60.0,
            train_ratio: 5,
            oversample_weight: 5.0,
        }
    }
}

impl ClassRatioConfig {
    /// Training ratio and oversampling must cancel to 1:1 effective exposure.
    pub fn validate(&self) -> Result<()> {
        if self.full_ratio <= 0.0 {
            return Err(Error::Config("full_ratio must be positive".into()));
        }
        if self.train_ratio == 0 {
            return Err(Error::Config("train_ratio must be at least 1".into()));
        }
        if (self.oversample_weight - f64::from(self.train_ratio)).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "oversample_weight ({}) must equal train_ratio ({}) for 1:1 effective exposure",
                self.oversample_weight, self.train_ratio
            )));
        }
        Ok(())
    }
}
