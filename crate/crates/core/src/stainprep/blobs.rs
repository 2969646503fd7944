//! Candidate detection: positive candidates from DAB signal in PHH3,
//! negative candidates from Determinant-of-Hessian blobs in H&E.

use ndarray::{Array2, Array3};

use crate::domain::{Patch, StainDomain};
use crate::error::{Error, Result};
use crate::par;
use crate::stainprep::deconv::{color_deconvolve, StainMatrix};

/// What a candidate set contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateKind {
    PositivePhh3,
    NegativeHe,
}

/// One detection: center in patch coordinates (row, col) plus a score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub center: (f64, f64),
    pub score: f64,
}

impl Detection {
    pub fn distance_to(&self, other: (f64, f64)) -> f64 {
        let dr = self.center.0 - other.0;
        let dc = self.center.1 - other.1;
        (dr * dr + dc * dc).sqrt()
    }
}

/// Detections on one patch, de-duplicated to a minimum separation.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub detections: Vec<Detection>,
    pub source_patch: String,
    pub kind: CandidateKind,
}

impl CandidateSet {
    pub fn empty(source_patch: impl Into<String>, kind: CandidateKind) -> Self {
        CandidateSet {
            detections: Vec::new(),
            source_patch: source_patch.into(),
            kind,
        }
    }

    pub fn centers(&self) -> Vec<(f64, f64)> {
        self.detections.iter().map(|d| d.center).collect()
    }
}

/// Connected regions of DAB concentration above `dab_threshold` with area
/// at least `min_area`, reported by centroid with mean-DAB score.
///
/// This deterministic rule stands in for the pre-trained CNN filter of the
/// reference pipeline; swap in a learned selector by filtering the returned
/// set.
pub fn detect_positive_candidates(
    phh3_patch: &Patch,
    stains: &StainMatrix,
    dab_threshold: f64,
    min_area: usize,
    min_separation: f64,
) -> Result<CandidateSet> {
    if phh3_patch.stain != StainDomain::Phh3 {
        return Err(Error::Precondition(format!(
            "positive candidates require a PHH3 patch, got {}",
            phh3_patch.stain
        )));
    }
    let conc = color_deconvolve(phh3_patch, stains);
    let (h, w) = (conc.shape()[0], conc.shape()[1]);
    let mut detections = Vec::new();
    let mut visited = vec![false; h * w];
    let mut stack = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            if visited[idx] || !(conc[[y, x, 2]] > dab_threshold) {
                continue;
            }
            // flood fill one component (8-connectivity)
            let mut sum_r = 0.0;
            let mut sum_c = 0.0;
            let mut sum_dab = 0.0;
            let mut area = 0usize;
            visited[idx] = true;
            stack.push((y, x));
            while let Some((cy, cx)) = stack.pop() {
                area += 1;
                sum_r += cy as f64;
                sum_c += cx as f64;
                sum_dab += conc[[cy, cx, 2]];
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let ny = cy as i64 + dy;
                        let nx = cx as i64 + dx;
                        if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                            continue;
                        }
                        let (ny, nx) = (ny as usize, nx as usize);
                        let nidx = ny * w + nx;
                        if !visited[nidx] && conc[[ny, nx, 2]] > dab_threshold {
                            visited[nidx] = true;
                            stack.push((ny, nx));
                        }
                    }
                }
            }
            if area >= min_area.max(1) {
                detections.push(Detection {
                    center: (sum_r / area as f64, sum_c / area as f64),
                    score: sum_dab / area as f64,
                });
            }
        }
    }
    Ok(CandidateSet {
        detections: suppress(detections, min_separation),
        source_patch: phh3_patch.source_id.clone(),
        kind: CandidateKind::PositivePhh3,
    })
}

/// Scale-space Determinant-of-Hessian maxima on the inverted-luminance
/// image, minus any detection within `exclusion_radius` of a positive
/// center.
pub fn detect_negative_candidates(
    he_patch: &Patch,
    positives: &CandidateSet,
    doh_sigmas: &[f64],
    doh_threshold: f64,
    exclusion_radius: f64,
    min_separation: f64,
) -> Result<CandidateSet> {
    if he_patch.stain != StainDomain::He {
        return Err(Error::Precondition(format!(
            "negative candidates require an HE patch, got {}",
            he_patch.stain
        )));
    }
    if doh_sigmas.is_empty() {
        return Err(Error::Config("doh_sigmas must not be empty".into()));
    }
    let img = inverted_luminance(&he_patch.pixels);
    let responses: Vec<Array2<f64>> =
        par::map(doh_sigmas, |&sigma| doh_response(&img, sigma));

    let (h, w) = img.dim();
    let mut maxima: Vec<(Detection, f64)> = Vec::new();
    for (si, resp) in responses.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                let r = resp[[y, x]];
                if !(r > doh_threshold) {
                    continue;
                }
                if !is_spatial_max(resp, y, x) {
                    continue;
                }
                let above = si + 1 < responses.len() && responses[si + 1][[y, x]] > r;
                let below = si > 0 && responses[si - 1][[y, x]] > r;
                if above || below {
                    continue;
                }
                maxima.push((
                    Detection {
                        center: (y as f64, x as f64),
                        score: r,
                    },
                    doh_sigmas[si],
                ));
            }
        }
    }

    // Non-maximum suppression with radius = sigma of the stronger maximum,
    // tightened to the configured minimum separation.
    maxima.sort_by(|a, b| {
        b.0.score
            .partial_cmp(&a.0.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(order_key(&a.0).cmp(&order_key(&b.0)))
    });
    let mut kept: Vec<(Detection, f64)> = Vec::new();
    'outer: for (det, sigma) in maxima {
        for (k, ks) in &kept {
            if k.distance_to(det.center) <= ks.max(min_separation) {
                continue 'outer;
            }
        }
        kept.push((det, sigma));
    }

    let detections = kept
        .into_iter()
        .map(|(d, _)| d)
        .filter(|d| {
            positives
                .detections
                .iter()
                .all(|p| d.distance_to(p.center) > exclusion_radius)
        })
        .collect();

    Ok(CandidateSet {
        detections,
        source_patch: he_patch.source_id.clone(),
        kind: CandidateKind::NegativeHe,
    })
}

fn order_key(d: &Detection) -> (i64, i64) {
    (d.center.0 as i64, d.center.1 as i64)
}

/// Greedy min-separation suppression, strongest detections first.
fn suppress(mut detections: Vec<Detection>, min_separation: f64) -> Vec<Detection> {
    detections.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(order_key(a).cmp(&order_key(b)))
    });
    let mut kept: Vec<Detection> = Vec::new();
    'outer: for det in detections {
        for k in &kept {
            if k.distance_to(det.center) < min_separation {
                continue 'outer;
            }
        }
        kept.push(det);
    }
    kept
}

/// `1 - luminance`, so dark cell bodies become bright blobs.
pub fn inverted_luminance(pixels: &Array3<f64>) -> Array2<f64> {
    let (h, w) = (pixels.shape()[0], pixels.shape()[1]);
    Array2::from_shape_fn((h, w), |(y, x)| {
        1.0 - (0.299 * pixels[[y, x, 0]] + 0.587 * pixels[[y, x, 1]] + 0.114 * pixels[[y, x, 2]])
    })
}

/// Scale-normalized Determinant of Hessian at scale `sigma`:
/// blur, central-difference Hessian, `sigma^4 * (Lxx*Lyy - Lxy^2)`.
pub fn doh_response(img: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let l = gaussian_blur(img, sigma);
    let (h, w) = l.dim();
    let at = |y: isize, x: isize| l[[reflect(y, h), reflect(x, w)]];
    let s4 = sigma.powi(4);
    Array2::from_shape_fn((h, w), |(y, x)| {
        let (yi, xi) = (y as isize, x as isize);
        let lxx = at(yi, xi - 1) - 2.0 * at(yi, xi) + at(yi, xi + 1);
        let lyy = at(yi - 1, xi) - 2.0 * at(yi, xi) + at(yi + 1, xi);
        let lxy =
            (at(yi - 1, xi - 1) + at(yi + 1, xi + 1) - at(yi - 1, xi + 1) - at(yi + 1, xi - 1))
                / 4.0;
        s4 * (lxx * lyy - lxy * lxy)
    })
}

fn is_spatial_max(resp: &Array2<f64>, y: usize, x: usize) -> bool {
    let (h, w) = resp.dim();
    let r = resp[[y, x]];
    for dy in -1i64..=1 {
        for dx in -1i64..=1 {
            if dy == 0 && dx == 0 {
                continue;
            }
            let ny = y as i64 + dy;
            let nx = x as i64 + dx;
            if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                continue;
            }
            if resp[[ny as usize, nx as usize]] > r {
                return false;
            }
        }
    }
    true
}

/// Separable Gaussian blur with symmetric (mirrored) borders.
pub fn gaussian_blur(img: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() - 1) / 2;
    let (h, w) = img.dim();
    // horizontal pass
    let mut tmp = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let sx = reflect(x as isize + k as isize - radius as isize, w);
                acc += kv * img[[y, sx]];
            }
            tmp[[y, x]] = acc;
        }
    }
    // vertical pass
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let sy = reflect(y as isize + k as isize - radius as isize, h);
                acc += kv * tmp[[sy, x]];
            }
            out[[y, x]] = acc;
        }
    }
    out
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let mut kernel: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }
    kernel
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}
