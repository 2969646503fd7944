//! Color deconvolution: inverting the Beer-Lambert stain mixing model.
//!
//! A pixel is modeled as `I = exp(-OD)` per RGB channel with
//! `OD = c_h * H + c_e * E + c_d * D`, the rows of the stain matrix being
//! the optical-density unit vectors of the stains. Deconvolution recovers
//! the concentration triple per pixel by a direct 3x3 solve.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::domain::Patch;
use crate::error::{Error, Result};
use crate::par;

/// Intensities are clamped to this value before the log; half a
/// quantization level below the darkest 8-bit value.
pub const LOG_EPSILON: f64 = 1.0 / 512.0;

/// 3x3 matrix whose rows are stain optical-density unit vectors
/// (hematoxylin, eosin/counterstain, DAB).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StainMatrixRepr", into = "StainMatrixRepr")]
pub struct StainMatrix {
    rows: [[f64; 3]; 3],
    inverse: [[f64; 3]; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StainMatrixRepr {
    rows: [[f64; 3]; 3],
}

impl TryFrom<StainMatrixRepr> for StainMatrix {
    type Error = Error;
    fn try_from(repr: StainMatrixRepr) -> Result<Self> {
        StainMatrix::new(repr.rows)
    }
}

impl From<StainMatrix> for StainMatrixRepr {
    fn from(m: StainMatrix) -> Self {
        StainMatrixRepr { rows: m.rows }
    }
}

/// Condition-number bound (1-norm) above which a matrix is rejected.
const MAX_CONDITION: f64 = 1e4;

impl StainMatrix {
    /// Builds a stain matrix, normalizing each row to unit Euclidean norm
    /// and rejecting singular or ill-conditioned inputs.
    pub fn new(rows: [[f64; 3]; 3]) -> Result<Self> {
        let mut normed = [[0.0; 3]; 3];
        for (i, row) in rows.iter().enumerate() {
            let norm = (row[0] * row[0] + row[1] * row[1] + row[2] * row[2]).sqrt();
            if !norm.is_finite() || norm < 1e-12 {
                return Err(Error::SingularStainMatrix(format!(
                    "stain vector {i} has zero norm"
                )));
            }
            // already-unit rows pass through untouched so serialized
            // matrices roundtrip bit-exactly
            if (norm - 1.0).abs() < 1e-12 {
                normed[i] = *row;
            } else {
                for c in 0..3 {
                    normed[i][c] = row[c] / norm;
                }
            }
        }
        let inverse = invert3(&normed).ok_or_else(|| {
            Error::SingularStainMatrix("determinant is zero".into())
        })?;
        let cond = norm1(&normed) * norm1(&inverse);
        if !cond.is_finite() || cond > MAX_CONDITION {
            return Err(Error::SingularStainMatrix(format!(
                "condition number {cond:.3e} exceeds bound {MAX_CONDITION:.0e}"
            )));
        }
        Ok(StainMatrix {
            rows: normed,
            inverse,
        })
    }

    /// The classic hematoxylin / eosin / DAB unit vectors from the color
    /// deconvolution literature. Also the phantom's default, so simulator
    /// and separation are mutually consistent by construction.
    pub fn hed() -> Self {
        StainMatrix::new([
            [0.65, 0.70, 0.29],
            [0.07, 0.99, 0.11],
            [0.27, 0.57, 0.78],
        ])
        .expect("reference stain vectors are well-conditioned")
    }

    pub fn rows(&self) -> &[[f64; 3]; 3] {
        &self.rows
    }

    /// Optical density of a concentration triple: `OD = c . S`.
    pub fn mix(&self, conc: [f64; 3]) -> [f64; 3] {
        let mut od = [0.0; 3];
        for (s, &c) in conc.iter().enumerate() {
            for ch in 0..3 {
                od[ch] += c * self.rows[s][ch];
            }
        }
        od
    }

    /// Solves `od = c . S` for the concentration triple.
    pub fn unmix(&self, od: [f64; 3]) -> [f64; 3] {
        let mut c = [0.0; 3];
        for j in 0..3 {
            c[j] = od[0] * self.inverse[0][j]
                + od[1] * self.inverse[1][j]
                + od[2] * self.inverse[2][j];
        }
        c
    }

    /// Renders a concentration triple to RGB intensity (`I = exp(-OD)`).
    pub fn render(&self, conc: [f64; 3]) -> [f64; 3] {
        let od = self.mix(conc);
        [(-od[0]).exp(), (-od[1]).exp(), (-od[2]).exp()]
    }
}

fn invert3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det.abs() < 1e-12 {
        return None;
    }
    let inv_det = 1.0 / det;
    let mut inv = [[0.0; 3]; 3];
    inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_det;
    inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det;
    inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det;
    inv[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_det;
    inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det;
    inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det;
    inv[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_det;
    inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det;
    inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det;
    Some(inv)
}

fn norm1(m: &[[f64; 3]; 3]) -> f64 {
    (0..3)
        .map(|j| (0..3).map(|i| m[i][j].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Per-pixel stain concentrations of a patch: an `(H, W, 3)` map with
/// channels (hematoxylin, eosin, DAB). Concentrations are deliberately not
/// clipped to be non-negative, so stain-matrix miscalibration stays visible.
pub fn color_deconvolve(patch: &Patch, stains: &StainMatrix) -> Array3<f64> {
    color_deconvolve_pixels(&patch.pixels, stains)
}

/// [`color_deconvolve`] on a raw pixel array.
pub fn color_deconvolve_pixels(pixels: &Array3<f64>, stains: &StainMatrix) -> Array3<f64> {
    let (h, w) = (pixels.shape()[0], pixels.shape()[1]);
    let rows = par::map_range(h, |y| {
        let mut row = vec![0.0; w * 3];
        for x in 0..w {
            let od = [
                -(pixels[[y, x, 0]].max(LOG_EPSILON)).ln(),
                -(pixels[[y, x, 1]].max(LOG_EPSILON)).ln(),
                -(pixels[[y, x, 2]].max(LOG_EPSILON)).ln(),
            ];
            let c = stains.unmix(od);
            row[x * 3..x * 3 + 3].copy_from_slice(&c);
        }
        row
    });
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array3::from_shape_vec((h, w, 3), flat).expect("row-major concentration buffer")
}
