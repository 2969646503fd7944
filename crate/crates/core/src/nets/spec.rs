//! Declarative architecture specifications.
//!
//! Each spec pins the layer recipe, derives its spatial shape trace by pure
//! arithmetic (no weights needed), and fingerprints itself for checkpoint
//! verification. Widths and block counts are parametric with the reference
//! values as defaults; golden tests pin the default traces and parameter
//! counts.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Generator: 7x7 stem, two 2-strided downsampling convs, `n_blocks`
/// residual blocks at `4 * base_width` channels, two fractionally
/// 1/2-strided convs, 7x7 head with a bounded output activation. The
/// feature tap is the output of the last residual block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSpec {
    pub base_width: usize,
    pub n_blocks: usize,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            base_width: 64,
            n_blocks: 9,
        }
    }
}

impl GeneratorSpec {
    pub fn body_channels(&self) -> usize {
        4 * self.base_width
    }

    /// `(side, channels)` after the stem, each downsampling stage, the
    /// residual body (= the feature tap), each upsampling stage, and the
    /// head, starting from the input.
    pub fn shape_trace(&self, side: usize) -> Vec<(usize, usize)> {
        let bw = self.base_width;
        let down1 = (side + 2 - 3) / 2 + 1;
        let down2 = (down1 + 2 - 3) / 2 + 1;
        let up1 = (down2 - 1) * 2 - 2 + 3 + 1;
        let up2 = (up1 - 1) * 2 - 2 + 3 + 1;
        vec![
            (side, 3),
            (side, bw),
            (down1, 2 * bw),
            (down2, 4 * bw), // residual body and feature tap
            (up1, 2 * bw),
            (up2, bw),
            (up2, 3),
        ]
    }

    pub fn param_count(&self) -> usize {
        let bw = self.base_width;
        let stem = 7 * 7 * 3 * bw + bw;
        let down1 = 3 * 3 * bw * (2 * bw) + 2 * bw;
        let down2 = 3 * 3 * (2 * bw) * (4 * bw) + 4 * bw;
        let block = 2 * (3 * 3 * (4 * bw) * (4 * bw) + 4 * bw);
        let up1 = 3 * 3 * (4 * bw) * (2 * bw) + 2 * bw;
        let up2 = 3 * 3 * (2 * bw) * bw + bw;
        let head = 7 * 7 * bw * 3 + 3;
        stem + down1 + down2 + self.n_blocks * block + up1 + up2 + head
    }

    pub fn fingerprint(&self) -> String {
        fingerprint("generator", self)
    }
}

/// Baseline patch classifier: fully convolutional, all convs unpadded.
/// Layer order: [3x3 s2] [3x3] [3x3] [3x3 s2] [3x3 x4] [14x14 -> 1].
/// Output widths are `base_widths` scaled by `gamma`, rounded to the
/// nearest even integer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineClassifierSpec {
    pub base_widths: [usize; 8],
    pub gamma: f64,
}

impl Default for BaselineClassifierSpec {
    fn default() -> Self {
        BaselineClassifierSpec {
            base_widths: [32, 32, 64, 64, 64, 64, 128, 128],
            gamma: 0.6,
        }
    }
}

impl BaselineClassifierSpec {
    /// Indices of the two 2-strided convolutions.
    pub const STRIDED: [usize; 2] = [0, 3];
    pub const FINAL_KERNEL: usize = 14;

    pub fn scaled_widths(&self) -> [usize; 8] {
        let mut out = [0usize; 8];
        for (o, &b) in out.iter_mut().zip(self.base_widths.iter()) {
            let scaled = b as f64 * self.gamma;
            *o = (((scaled / 2.0).round() as usize) * 2).max(2);
        }
        out
    }

    /// Spatial side after each convolution, starting with the input side.
    pub fn shape_trace(&self, side: usize) -> Vec<usize> {
        let mut trace = vec![side];
        let mut s = side;
        for i in 0..8 {
            let stride = if Self::STRIDED.contains(&i) { 2 } else { 1 };
            s = (s - 3) / stride + 1;
            trace.push(s);
        }
        trace.push(s - Self::FINAL_KERNEL + 1);
        trace
    }

    pub fn param_count(&self) -> usize {
        let w = self.scaled_widths();
        let mut count = 0;
        let mut in_c = 3;
        for &out_c in &w {
            count += 3 * 3 * in_c * out_c + out_c;
            in_c = out_c;
        }
        count += Self::FINAL_KERNEL * Self::FINAL_KERNEL * in_c + 1;
        count
    }

    pub fn fingerprint(&self) -> String {
        fingerprint("baseline_classifier", self)
    }
}

/// Feature-map classifier for 25x25x256 inputs: seven unpadded 3x3 convs,
/// one 2-strided 3x3 conv, one final 1x1 conv. The 256 -> 1 reduction
/// happens in three halvings (first conv, strided conv, first post-stride
/// conv) with the remainder in the last layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureClassifierSpec {}

impl FeatureClassifierSpec {
    pub const IN_CHANNELS: usize = 256;
    /// Output widths of the eight 3x3 convs; index 3 is the strided one.
    pub const WIDTHS: [usize; 8] = [128, 128, 128, 64, 32, 32, 32, 32];
    pub const STRIDED: usize = 3;

    pub fn shape_trace(&self, side: usize) -> Vec<usize> {
        let mut trace = vec![side];
        let mut s = side;
        for i in 0..8 {
            let stride = if i == Self::STRIDED { 2 } else { 1 };
            s = (s - 3) / stride + 1;
            trace.push(s);
        }
        trace.push(s); // final 1x1 conv
        trace
    }

    pub fn param_count(&self) -> usize {
        let mut count = 0;
        let mut in_c = Self::IN_CHANNELS;
        for &out_c in &Self::WIDTHS {
            count += 3 * 3 * in_c * out_c + out_c;
            in_c = out_c;
        }
        count += in_c + 1; // 1x1 conv to a single channel
        count
    }

    pub fn fingerprint(&self) -> String {
        fingerprint("feature_classifier", self)
    }
}

/// Patch-level real/fake discriminator: 2-strided 4x4 convs, then a
/// 1-channel conv producing a spatial logit map (never a single scalar).
/// The conditional variant takes source and target concatenated
/// (6 input channels).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorSpec {
    pub in_channels: usize,
    pub widths: Vec<usize>,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        DiscriminatorSpec {
            in_channels: 3,
            widths: vec![64, 128, 256, 512],
        }
    }
}

impl DiscriminatorSpec {
    pub fn conditional(mut self) -> Self {
        self.in_channels = 6;
        self
    }

    pub fn shape_trace(&self, side: usize) -> Vec<usize> {
        let mut trace = vec![side];
        let mut s = side;
        for _ in &self.widths {
            s = (s + 2 - 4) / 2 + 1;
            trace.push(s);
        }
        s = s + 2 - 4 + 1;
        trace.push(s);
        trace
    }

    pub fn param_count(&self) -> usize {
        let mut count = 0;
        let mut in_c = self.in_channels;
        for &out_c in &self.widths {
            count += 4 * 4 * in_c * out_c + out_c;
            in_c = out_c;
        }
        count += 4 * 4 * in_c + 1;
        count
    }

    pub fn fingerprint(&self) -> String {
        fingerprint("discriminator", self)
    }
}

fn fingerprint<S: Serialize>(kind: &str, spec: &S) -> String {
    let body = serde_json::json!({ "kind": kind, "spec": spec });
    let bytes = serde_json::to_vec(&body).expect("spec serializes");
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}
