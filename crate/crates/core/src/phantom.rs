//! Procedural simulator producing aligned pseudo-H&E / pseudo-PHH3 patch
//! pairs with known mitosis ground truth.
//!
//! Nuclei are rendered as anisotropic Gaussian blobs in optical-density
//! space; mitotic figures as irregular multi-lobed clusters, darker in H&E
//! and carrying DAB signal in PHH3 at identical coordinates. The rendered
//! pixel is `exp(-sum(concentration * OD_vector))` per channel, so stain
//! separation recovers the planted concentrations up to noise. Everything
//! is a pure function of `(config, index)`: same seed, same bits.

use std::path::Path;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{
    save_patch_pixels, DatasetManifest, Label, Patch, SampleRecord, Split, StainDomain,
};
use crate::error::{Error, Result};
use crate::par;
use crate::stainprep::StainMatrix;

/// Simulator configuration. `imbalance_target` is expressed as negatives
/// per positive (60.0 means the nominal 1:60 pool).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub seed: u64,
    pub patch_size: usize,
    pub nuclei_per_patch: (usize, usize),
    pub mitosis_rate: f64,
    pub stain_od_matrix: StainMatrix,
    pub noise_level: f64,
    pub imbalance_target: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            seed: 0,
            patch_size: 100,
            nuclei_per_patch: (4, 9),
            mitosis_rate: 1.0 / 61.0,
            stain_od_matrix: StainMatrix::hed(),
            noise_level: 0.005,
            imbalance_target: 60.0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.nuclei_per_patch;
        if lo < 1 || lo > hi {
            return Err(Error::Config(format!(
                "nuclei_per_patch range ({lo}, {hi}) is empty or excludes the subject nucleus"
            )));
        }
        if !(0.0..=1.0).contains(&self.mitosis_rate) {
            return Err(Error::Config("mitosis_rate must be in [0,1]".into()));
        }
        if self.noise_level < 0.0 || !self.noise_level.is_finite() {
            return Err(Error::Config("noise_level must be >= 0".into()));
        }
        if self.patch_size < 32 {
            return Err(Error::Config("patch_size must be at least 32".into()));
        }
        if self.imbalance_target <= 0.0 {
            return Err(Error::Config("imbalance_target must be positive".into()));
        }
        Ok(())
    }

    /// Per-nucleus mitosis probability that realizes the pool imbalance.
    pub fn corpus_mitosis_rate(&self) -> f64 {
        1.0 / (1.0 + self.imbalance_target)
    }
}

/// Minimum center-to-center distance between nuclei; keeps DAB components
/// of neighbouring mitoses from merging.
const MIN_NUCLEUS_SEPARATION: f64 = 20.0;
const BORDER_MARGIN: f64 = 11.0;

#[derive(Debug, Clone)]
struct Lobe {
    cy: f64,
    cx: f64,
    inv_2saa: f64,
    inv_2sbb: f64,
    cos_t: f64,
    sin_t: f64,
    rel_amp: f64,
}

impl Lobe {
    fn density(&self, y: f64, x: f64) -> f64 {
        let dy = y - self.cy;
        let dx = x - self.cx;
        let u = dx * self.cos_t + dy * self.sin_t;
        let v = -dx * self.sin_t + dy * self.cos_t;
        self.rel_amp * (-(u * u * self.inv_2saa + v * v * self.inv_2sbb)).exp()
    }
}

#[derive(Debug, Clone)]
struct Nucleus {
    center: (f64, f64),
    mitotic: bool,
    lobes: Vec<Lobe>,
    hematoxylin: f64,
    counterstain: f64,
    dab: f64,
}

impl Nucleus {
    fn shape(&self, y: f64, x: f64) -> f64 {
        self.lobes.iter().map(|l| l.density(y, x)).sum()
    }
}

/// Low-frequency background field in [0,1].
#[derive(Debug, Clone)]
struct BackgroundField {
    waves: Vec<(f64, f64, f64, f64)>, // (amp, fy, fx, phase)
    total_amp: f64,
}

impl BackgroundField {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        let mut waves = Vec::with_capacity(4);
        let mut total = 0.0;
        for _ in 0..4 {
            let amp = rng.random_range(0.5..1.0);
            let fy = rng.random_range(0.004..0.018);
            let fx = rng.random_range(0.004..0.018);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            total += amp;
            waves.push((amp, fy, fx, phase));
        }
        BackgroundField {
            waves,
            total_amp: total,
        }
    }

    fn eval(&self, y: f64, x: f64) -> f64 {
        let v: f64 = self
            .waves
            .iter()
            .map(|(a, fy, fx, p)| a * (std::f64::consts::TAU * (fy * y + fx * x) + p).cos())
            .sum();
        0.5 * (1.0 + v / self.total_amp)
    }
}

#[derive(Debug, Clone)]
struct Scene {
    nuclei: Vec<Nucleus>,
    background: BackgroundField,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn stream_seed(seed: u64, index: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(index)) ^ stream)
}

fn sample_nucleus(rng: &mut ChaCha8Rng, center: (f64, f64), mitosis_rate: f64) -> Nucleus {
    let mitotic = rng.random::<f64>() < mitosis_rate;
    let mut lobes = Vec::new();
    if mitotic {
        // Condensed-chromosome cluster: several small lobes at balanced
        // angles, so the cluster centroid stays near the nucleus center.
        let n_lobes = rng.random_range(3..=5);
        let base_angle = rng.random_range(0.0..std::f64::consts::TAU);
        for k in 0..n_lobes {
            let angle = base_angle
                + std::f64::consts::TAU * k as f64 / n_lobes as f64
                + rng.random_range(-0.3..0.3);
            let radius = rng.random_range(1.2..3.2);
            let sa = rng.random_range(1.8..2.4);
            let sb = sa * rng.random_range(0.65..1.0);
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let rel_amp = rng.random_range(0.75..1.0);
            lobes.push(Lobe {
                cy: center.0 + radius * angle.sin(),
                cx: center.1 + radius * angle.cos(),
                inv_2saa: 1.0 / (2.0 * sa * sa),
                inv_2sbb: 1.0 / (2.0 * sb * sb),
                cos_t: theta.cos(),
                sin_t: theta.sin(),
                rel_amp,
            });
        }
    } else {
        let sa = rng.random_range(3.0..4.5);
        let sb = sa * rng.random_range(0.6..1.0);
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        lobes.push(Lobe {
            cy: center.0,
            cx: center.1,
            inv_2saa: 1.0 / (2.0 * sa * sa),
            inv_2sbb: 1.0 / (2.0 * sb * sb),
            cos_t: theta.cos(),
            sin_t: theta.sin(),
            rel_amp: 1.0,
        });
    }
    let (hematoxylin, counterstain, dab) = if mitotic {
        (
            rng.random_range(1.5..2.0),
            rng.random_range(0.8..1.1),
            rng.random_range(1.4..1.9),
        )
    } else {
        let h = rng.random_range(0.85..1.25);
        (h, h * rng.random_range(0.75..0.95), 0.0)
    };
    Nucleus {
        center,
        mitotic,
        lobes,
        hematoxylin,
        counterstain,
        dab,
    }
}

fn sample_scene(config: &PhantomConfig, rng: &mut ChaCha8Rng, mitosis_rate: f64) -> Scene {
    let size = config.patch_size as f64;
    let (lo, hi) = config.nuclei_per_patch;
    let n_nuclei = rng.random_range(lo..=hi);
    let background = BackgroundField::sample(rng);

    let half = size / 2.0;
    let subject_center = (
        half + rng.random_range(-2.0..2.0),
        half + rng.random_range(-2.0..2.0),
    );
    let mut nuclei = vec![sample_nucleus(rng, subject_center, mitosis_rate)];

    let margin_hi = size - BORDER_MARGIN;
    for _ in 1..n_nuclei {
        let mut placed = None;
        for _ in 0..60 {
            if margin_hi <= BORDER_MARGIN {
                break;
            }
            let cand = (
                rng.random_range(BORDER_MARGIN..margin_hi),
                rng.random_range(BORDER_MARGIN..margin_hi),
            );
            let clear = nuclei.iter().all(|n: &Nucleus| {
                let dy = n.center.0 - cand.0;
                let dx = n.center.1 - cand.1;
                (dy * dy + dx * dx).sqrt() >= MIN_NUCLEUS_SEPARATION
            });
            if clear {
                placed = Some(cand);
                break;
            }
        }
        if let Some(center) = placed {
            nuclei.push(sample_nucleus(rng, center, mitosis_rate));
        }
    }
    Scene { nuclei, background }
}

fn render_stain(
    scene: &Scene,
    config: &PhantomConfig,
    stain: StainDomain,
    noise_rng: &mut ChaCha8Rng,
) -> Array3<f64> {
    let size = config.patch_size;
    let stains = &config.stain_od_matrix;
    let noise = Normal::new(0.0, config.noise_level.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let mut pixels = Array3::zeros((size, size, 3));
    for y in 0..size {
        for x in 0..size {
            let (yf, xf) = (y as f64, x as f64);
            let bg = scene.background.eval(yf, xf);
            let (mut c_h, mut c_e, mut c_d) = match stain {
                StainDomain::He => (0.0, 0.12 + 0.18 * bg, 0.0),
                StainDomain::Phh3 => (0.0, 0.04 + 0.06 * bg, 0.0),
            };
            for nucleus in &scene.nuclei {
                let s = nucleus.shape(yf, xf);
                if s <= 1e-6 {
                    continue;
                }
                match stain {
                    StainDomain::He => c_h += nucleus.hematoxylin * s,
                    StainDomain::Phh3 => {
                        c_h += nucleus.counterstain * s;
                        c_d += nucleus.dab * s;
                    }
                }
            }
            if config.noise_level > 0.0 {
                c_e = c_e.max(0.0);
            }
            let rgb = stains.render([c_h, c_e, c_d]);
            for (c, value) in rgb.iter().enumerate() {
                let noisy = if config.noise_level > 0.0 {
                    value + noise.sample(noise_rng)
                } else {
                    *value
                };
                pixels[[y, x, c]] = noisy.clamp(0.0, 1.0);
            }
        }
    }
    pixels
}

/// Builds one aligned pair with the identity fields supplied by the caller.
fn generate_pair_with_identity(
    config: &PhantomConfig,
    index: u64,
    mitosis_rate: f64,
    source_id: &str,
    center: (i64, i64),
) -> Result<(Patch, Patch, Vec<((i64, i64), Label)>)> {
    config.validate()?;
    let mut scene_rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, index, 0));
    let scene = sample_scene(config, &mut scene_rng, mitosis_rate);

    let mut he_noise = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, index, 1));
    let mut phh3_noise = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, index, 2));
    let he_pixels = render_stain(&scene, config, StainDomain::He, &mut he_noise);
    let phh3_pixels = render_stain(&scene, config, StainDomain::Phh3, &mut phh3_noise);

    let ground_truth = scene
        .nuclei
        .iter()
        .map(|n| {
            let label = if n.mitotic {
                Label::Mitosis
            } else {
                Label::NonMitosis
            };
            ((n.center.0.round() as i64, n.center.1.round() as i64), label)
        })
        .collect();

    let he = Patch::new(he_pixels, StainDomain::He, source_id, center)?;
    let phh3 = Patch::new(phh3_pixels, StainDomain::Phh3, source_id, center)?;
    Ok((he, phh3, ground_truth))
}

/// Generates one pixel-aligned pseudo-H&E / pseudo-PHH3 pair.
///
/// The returned ground truth lists every nucleus as `(patch-local center,
/// label)`; the first entry is the central subject nucleus whose label the
/// corpus uses as the sample label. Calling twice with the same arguments
/// yields bit-identical pixel arrays.
pub fn generate_pair(
    config: &PhantomConfig,
    index: u64,
) -> Result<(Patch, Patch, Vec<((i64, i64), Label)>)> {
    let half = (config.patch_size / 2) as i64;
    generate_pair_with_identity(
        config,
        index,
        config.mitosis_rate,
        &format!("phantom_pair_{index}"),
        (half, half),
    )
}

/// Split sizes mirroring the 5/9/4-of-18 protocol, proportionally for other
/// slide counts (each split keeps at least one slide).
pub fn slide_split_counts(n_slides: usize) -> Result<(usize, usize, usize)> {
    if n_slides < 3 {
        return Err(Error::Config(format!(
            "cannot form gan_train/cls_train/test splits from {n_slides} slides (need >= 3)"
        )));
    }
    let n = n_slides as f64;
    let mut gan = ((n * 5.0 / 18.0).round() as usize).max(1);
    let mut test = ((n * 4.0 / 18.0).round() as usize).max(1);
    while gan + test + 1 > n_slides {
        if gan >= test && gan > 1 {
            gan -= 1;
        } else if test > 1 {
            test -= 1;
        }
    }
    let cls = n_slides - gan - test;
    Ok((gan, cls, test))
}

/// Generates a slide-structured corpus: patch PNGs plus a manifest with
/// slide-level split assignment, class imbalance near `imbalance_target`,
/// and `paired_ref` set on every record (one HE and one PHH3 record per
/// sample site, cross-linked).
pub fn generate_corpus(
    config: &PhantomConfig,
    n_slides: usize,
    patches_per_slide: usize,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    config.validate()?;
    if patches_per_slide == 0 {
        return Err(Error::Config("patches_per_slide must be positive".into()));
    }
    let (gan, cls, _test) = slide_split_counts(n_slides)?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir.join("patches/he"))?;
    std::fs::create_dir_all(out_dir.join("patches/phh3"))?;

    let rate = config.corpus_mitosis_rate();
    let grid = (patches_per_slide as f64).sqrt().ceil() as usize;
    let ps = config.patch_size as i64;
    let total = n_slides * patches_per_slide;

    let results: Vec<Result<(SampleRecord, SampleRecord)>> = par::map_range(total, |i| {
        let slide = i / patches_per_slide;
        let k = i % patches_per_slide;
        let source_id = format!("slide_{slide:03}");
        let split = if slide < gan {
            Split::GanTrain
        } else if slide < gan + cls {
            Split::ClsTrain
        } else {
            Split::Test
        };
        let center = (
            ps / 2 + ps * (k / grid) as i64,
            ps / 2 + ps * (k % grid) as i64,
        );
        let (he, phh3, truth) =
            generate_pair_with_identity(config, i as u64, rate, &source_id, center)?;
        let label = truth[0].1;
        let he_ref = format!("patches/he/slide_{slide:03}_patch_{k:04}.png");
        let phh3_ref = format!("patches/phh3/slide_{slide:03}_patch_{k:04}.png");
        save_patch_pixels(out_dir.join(&he_ref), &he.pixels)?;
        save_patch_pixels(out_dir.join(&phh3_ref), &phh3.pixels)?;
        let he_record = SampleRecord {
            patch_ref: he_ref.clone(),
            label,
            stain: StainDomain::He,
            paired_ref: Some(phh3_ref.clone()),
            split,
            source_id: source_id.clone(),
            center_row: center.0,
            center_col: center.1,
        };
        let phh3_record = SampleRecord {
            patch_ref: phh3_ref,
            label,
            stain: StainDomain::Phh3,
            paired_ref: Some(he_ref),
            split,
            source_id,
            center_row: center.0,
            center_col: center.1,
        };
        Ok((he_record, phh3_record))
    });

    let mut records = Vec::with_capacity(total * 2);
    for r in results {
        let (he, phh3) = r?;
        records.push(he);
        records.push(phh3);
    }
    let manifest = DatasetManifest::new(records);
    manifest.save(out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}
