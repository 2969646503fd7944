//! Acceptance suite: one test per criterion, each printing a PASS line
//! with its runtime. A shared gate serializes the tests so the stated
//! runtime bounds are measured without cross-test contention.

mod common;

use std::sync::Mutex;
use std::time::{Duration, Instant};

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stainbridge_core::domain::{ClassRatioConfig, CorpusStore, Label, Split, StainDomain};
use stainbridge_core::error::Error;
use stainbridge_core::evalkit;
use stainbridge_core::ganlab::derive_seed;
use stainbridge_core::mitoclass::{build_training_set, Scenario, ScenarioConfig};
use stainbridge_core::nets::{
    bce_with_logits, lsgan, weighted_bce_logit, BaselineClassifierSpec, Checkpoint,
    CheckpointMeta, Classifier, Discriminator, DiscriminatorSpec, FeatureClassifierSpec,
    GenCache, Generator, GeneratorSpec, GradStore, Net, SeqCache, Sequential,
};
use stainbridge_core::phantom::PhantomConfig;
use stainbridge_core::stainprep::{
    color_deconvolve_pixels, detect_negative_candidates, rebalance, CandidateKind, CandidateSet,
    StainMatrix,
};

static GATE: Mutex<()> = Mutex::new(());

fn timed<F: FnOnce()>(criterion: &str, bound: Duration, f: F) {
    let _guard = GATE.lock().unwrap_or_else(|p| p.into_inner());
    let started = Instant::now();
    f();
    let elapsed = started.elapsed();
    assert!(
        elapsed <= bound,
        "criterion {criterion}: runtime {elapsed:?} exceeds bound {bound:?}"
    );
    println!("criterion {criterion}: PASS ({elapsed:.2?})");
}

// ---------------------------------------------------------------- 1

#[test]
fn criterion_1_architecture_conformance() {
    timed("1 (architecture conformance)", Duration::from_secs(1), || {
        let gen = GeneratorSpec::default();
        assert_eq!(
            gen.shape_trace(100),
            vec![
                (100, 3),
                (100, 64),
                (50, 128),
                (25, 256),
                (50, 128),
                (100, 64),
                (100, 3)
            ]
        );

        let baseline = BaselineClassifierSpec::default();
        assert_eq!(
            baseline.shape_trace(100),
            vec![100, 49, 47, 45, 22, 20, 18, 16, 14, 1]
        );

        let feature = FeatureClassifierSpec::default();
        assert_eq!(
            feature.shape_trace(25),
            vec![25, 23, 21, 19, 9, 7, 5, 3, 1, 1]
        );

        // layer-by-layer shape enumeration of built networks agrees
        let bc: Classifier<f32> = Classifier::build_baseline(&baseline, 0);
        let sides: Vec<usize> = bc
            .body
            .shape_trace(100, 3)
            .into_iter()
            .map(|(s, _)| s)
            .collect();
        let mut conv_sides = vec![sides[0]];
        for &s in &sides[1..] {
            if *conv_sides.last().unwrap() != s {
                conv_sides.push(s);
            }
        }
        assert_eq!(conv_sides, baseline.shape_trace(100));

        let fc: Classifier<f32> = Classifier::build_feature(&feature, 0);
        let trace = fc.body.shape_trace(25, 256);
        assert_eq!(trace.last().unwrap().0, 1);
        let channels: Vec<usize> = trace.iter().map(|&(_, c)| c).collect();
        assert!(channels.contains(&128) && channels.contains(&64) && channels.contains(&32));
    });
}

// ---------------------------------------------------------------- 2

struct GradCheck {
    checked: usize,
}

/// Central-difference check on `n_coords` random weight coordinates.
/// `loss_fn` is forward-only; the analytic gradients are computed once.
fn finite_difference_check<N, L>(
    net: &mut N,
    grads: &GradStore<f64>,
    loss_fn: L,
    n_coords: usize,
    seed: u64,
) -> GradCheck
where
    N: Net<f64>,
    L: Fn(&N) -> f64,
{
    let shapes = net.named_param_shapes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    while checked < n_coords {
        let (name, shape) = &shapes[rng.random_range(0..shapes.len())];
        let idx: Vec<usize> = shape.iter().map(|&s| rng.random_range(0..s)).collect();
        let h = 3e-7;
        fn bump<N: Net<f64>>(net: &mut N, name: &str, idx: &[usize], delta: f64) {
            net.visit_params_mut(&mut |pname, mut view| {
                if pname == name {
                    view[idx] += delta;
                }
            });
        }
        let mut at = |delta: f64| -> f64 {
            bump(net, name, &idx, delta);
            let loss = loss_fn(net);
            bump(net, name, &idx, -delta);
            loss
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        let analytic = grads.get(name).map_or(0.0, |g| g[idx.as_slice()]);
        // Relative tolerance 1e-3 with an absolute floor of one relu-kink
        // jump (~1e-6 here). Instance norm centers preactivations at zero,
        // so any finite window can cross an activation kink; an h-sweep on
        // contested coordinates shows the analytic value is the h->0 limit
        // (rel 5e-8 at h=3e-7) while wider steps pick up kink noise.
        let diff = (fd - analytic).abs();
        let rel = diff / fd.abs().max(analytic.abs()).max(1e-12);
        assert!(
            rel <= 1e-3 || diff <= 1e-6,
            "{name}{idx:?}: fd {fd:.6e} vs analytic {analytic:.6e} (rel {rel:.2e})"
        );
        checked += 1;
    }
    GradCheck { checked }
}

#[test]
fn criterion_2_gradient_checks() {
    timed("2 (gradient checks)", Duration::from_secs(60), || {
        let mut rng = ChaCha8Rng::seed_from_u64(7101);

        // generator: smooth linear probes on the output and the feature
        // tap (kink-free, so central differences see the true Jacobian)
        let mut gen: Generator<f64> = Generator::build(&GeneratorSpec::default(), 11);
        let x = Array3::from_shape_fn((3, 64, 64), |_| rng.random::<f64>());
        let out_probe = Array3::from_shape_fn((3, 64, 64), |_| rng.random::<f64>() - 0.5);
        let tap_probe = Array3::from_shape_fn((256, 16, 16), |_| rng.random::<f64>() - 0.5);
        let gen_grads = {
            let (out, tap, cache): (_, _, GenCache<f64>) = gen.forward(&x);
            let g_out = out_probe.mapv(|v| v / out.len() as f64);
            let g_tap = tap_probe.mapv(|v| v / tap.len() as f64);
            let mut grads = GradStore::new();
            gen.backward(&cache, Some(&g_out), Some(&g_tap), &mut grads);
            grads
        };
        let gen_loss = |g: &Generator<f64>| {
            let (out, tap) = g.forward_infer(&x);
            (&out * &out_probe).sum() / out.len() as f64
                + (&tap * &tap_probe).sum() / tap.len() as f64
        };
        let r = finite_difference_check(&mut gen, &gen_grads, gen_loss, 20, 1);
        assert!(r.checked >= 20);

        // baseline classifier: weighted cross-entropy on one sample
        let mut bc: Classifier<f64> = Classifier::build_baseline(&BaselineClassifierSpec::default(), 12);
        let img = Array3::from_shape_fn((3, 100, 100), |_| rng.random::<f64>());
        let bc_grads = {
            let (logit, cache): (f64, SeqCache<f64>) = bc.forward_logit(&img).unwrap();
            let (_, d_logit) = weighted_bce_logit(logit, 1.0, 5.0);
            let mut grads = GradStore::new();
            bc.backward_from_logit(&cache, d_logit, &mut grads);
            grads
        };
        let bc_loss = |c: &Classifier<f64>| {
            let (logit, _) = c.forward_logit(&img).unwrap();
            weighted_bce_logit(logit, 1.0, 5.0).0
        };
        let r = finite_difference_check(&mut bc, &bc_grads, bc_loss, 20, 2);
        assert!(r.checked >= 20);

        // feature classifier
        let mut fc: Classifier<f64> = Classifier::build_feature(&FeatureClassifierSpec::default(), 13);
        let fm = Array3::from_shape_fn((256, 25, 25), |_| rng.random::<f64>() - 0.3);
        let fc_grads = {
            let (logit, cache) = fc.forward_logit(&fm).unwrap();
            let (_, d_logit) = weighted_bce_logit(logit, 0.0, 1.0);
            let mut grads = GradStore::new();
            fc.backward_from_logit(&cache, d_logit, &mut grads);
            grads
        };
        let fc_loss = |c: &Classifier<f64>| {
            let (logit, _) = c.forward_logit(&fm).unwrap();
            weighted_bce_logit(logit, 0.0, 1.0).0
        };
        let r = finite_difference_check(&mut fc, &fc_grads, fc_loss, 20, 3);
        assert!(r.checked >= 20);

        // discriminators, both objectives
        let mut disc: Discriminator<f64> = Discriminator::build(&DiscriminatorSpec::default(), 14);
        let dx = Array3::from_shape_fn((3, 64, 64), |_| rng.random::<f64>());
        let d_grads = {
            let (map, cache) = disc.forward(&dx);
            let (_, g_ls) = lsgan(&map, 1.0);
            let (_, g_ce) = bce_with_logits(&map, 0.0);
            let mut grads = GradStore::new();
            disc.backward(&cache, &(&g_ls + &g_ce), &mut grads);
            grads
        };
        let d_loss = |d: &Discriminator<f64>| {
            let map = d.forward_infer(&dx);
            lsgan(&map, 1.0).0 + bce_with_logits(&map, 0.0).0
        };
        let r = finite_difference_check(&mut disc, &d_grads, d_loss, 20, 4);
        assert!(r.checked >= 20);
    });
}

// ---------------------------------------------------------------- 3

#[test]
fn criterion_3_deconvolution_oracle() {
    timed("3 (deconvolution oracle)", Duration::from_secs(10), || {
        let stains = StainMatrix::hed();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let side = 64;
        // forward-synthesize a random concentration field in [0,2]^3
        let conc = Array3::from_shape_fn((side, side, 3), |_| rng.random::<f64>() * 2.0);
        let mut pixels = Array3::zeros((side, side, 3));
        for y in 0..side {
            for x in 0..side {
                let rgb = stains.render([conc[[y, x, 0]], conc[[y, x, 1]], conc[[y, x, 2]]]);
                for c in 0..3 {
                    pixels[[y, x, c]] = rgb[c];
                }
            }
        }

        // noise-free round trip within 1e-6
        let recovered = color_deconvolve_pixels(&pixels, &stains);
        let max_err = recovered
            .iter()
            .zip(conc.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err < 1e-6, "noise-free max error {max_err:.3e}");

        // at the phantom's default noise: mean relative error within 5%
        let noise_level = PhantomConfig::default().noise_level;
        let noisy = pixels.mapv(|v| {
            let n: f64 = rng.random::<f64>() * 2.0 - 1.0;
            (v + n * noise_level * 1.732).clamp(0.0, 1.0)
        });
        let recovered = color_deconvolve_pixels(&noisy, &stains);
        let mut err_sum = 0.0;
        let mut ref_sum = 0.0;
        for (a, b) in recovered.iter().zip(conc.iter()) {
            err_sum += (a - b).abs();
            ref_sum += b.abs();
        }
        let rel = err_sum / ref_sum;
        assert!(rel < 0.05, "noisy relative error {rel:.4}");
    });
}

// ---------------------------------------------------------------- 4

/// Brute-force scale-space DoH oracle: direct convolution with analytic
/// Gaussian-derivative kernels, independent of the blur-then-difference
/// implementation path.
fn oracle_doh_peak(img: &Array2<f64>, sigmas: &[f64]) -> ((usize, usize), f64) {
    let (h, w) = img.dim();
    let mut best = ((0, 0), f64::MIN);
    for &sigma in sigmas {
        let radius = (3.0 * sigma).ceil() as isize;
        let g = |d: f64| (-d * d / (2.0 * sigma * sigma)).exp();
        // separable analytic kernels for Lxx, Lyy, Lxy
        let mut norm = 0.0;
        for i in -radius..=radius {
            norm += g(i as f64);
        }
        let gxx: Vec<f64> = (-radius..=radius)
            .map(|i| {
                let d = i as f64;
                (d * d - sigma * sigma) / sigma.powi(4) * g(d) / norm
            })
            .collect();
        let g0: Vec<f64> = (-radius..=radius).map(|i| g(i as f64) / norm).collect();
        let gx: Vec<f64> = (-radius..=radius)
            .map(|i| {
                let d = i as f64;
                -d / (sigma * sigma) * g(d) / norm
            })
            .collect();
        let conv = |ky: &[f64], kx: &[f64], y: usize, x: usize| -> f64 {
            let mut acc = 0.0;
            for (i, kyv) in ky.iter().enumerate() {
                let sy = y as isize + i as isize - radius;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for (j, kxv) in kx.iter().enumerate() {
                    let sx = x as isize + j as isize - radius;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    acc += kyv * kxv * img[[sy as usize, sx as usize]];
                }
            }
            acc
        };
        for y in 10..h - 10 {
            for x in 10..w - 10 {
                let lxx = conv(&g0, &gxx, y, x);
                let lyy = conv(&gxx, &g0, y, x);
                let lxy = conv(&gx, &gx, y, x);
                let resp = sigma.powi(4) * (lxx * lyy - lxy * lxy);
                if resp > best.1 {
                    best = ((y, x), resp);
                }
            }
        }
    }
    best
}

#[test]
fn criterion_4_blob_detection_oracle() {
    timed("4 (blob detection oracle)", Duration::from_secs(30), || {
        let sigmas = [2.0, 3.0, 4.0, 6.0, 8.0];
        let center = (50usize, 50usize);
        let mut pixels = Array3::from_elem((100, 100, 3), 0.9);
        for y in 0..100 {
            for x in 0..100 {
                let d = ((y as f64 - 50.0).powi(2) + (x as f64 - 50.0).powi(2)).sqrt();
                if d <= 8.0 {
                    for c in 0..3 {
                        pixels[[y, x, c]] = 0.15;
                    }
                }
            }
        }
        let patch =
            stainbridge_core::domain::Patch::new(pixels, StainDomain::He, "disk", (0, 0)).unwrap();
        let positives = CandidateSet::empty("disk", CandidateKind::PositivePhh3);
        let set =
            detect_negative_candidates(&patch, &positives, &sigmas, 1e-4, 10.0, 10.0).unwrap();
        assert_eq!(set.detections.len(), 1);
        let d = &set.detections[0];
        let dist = ((d.center.0 - center.0 as f64).powi(2)
            + (d.center.1 - center.1 as f64).powi(2))
        .sqrt();
        assert!(dist <= 2.0, "detection {:?} off center", d.center);

        // independent oracle peak agrees
        let inv = stainbridge_core::stainprep::inverted_luminance(&patch.pixels);
        let ((oy, ox), _) = oracle_doh_peak(&inv, &sigmas);
        let oracle_dist =
            ((oy as f64 - d.center.0).powi(2) + (ox as f64 - d.center.1).powi(2)).sqrt();
        assert!(
            oracle_dist <= 2.0,
            "oracle peak ({oy},{ox}) disagrees with detection {:?}",
            d.center
        );

        // 90-degree rotation equivariance within 1 px
        let off_patch = {
            let mut pixels = Array3::from_elem((100, 100, 3), 0.9);
            for y in 0..100 {
                for x in 0..100 {
                    let d = ((y as f64 - 30.0).powi(2) + (x as f64 - 62.0).powi(2)).sqrt();
                    if d <= 8.0 {
                        for c in 0..3 {
                            pixels[[y, x, c]] = 0.15;
                        }
                    }
                }
            }
            stainbridge_core::domain::Patch::new(pixels, StainDomain::He, "disk2", (0, 0)).unwrap()
        };
        let base =
            detect_negative_candidates(&off_patch, &positives, &sigmas, 1e-4, 10.0, 10.0).unwrap();
        let rotated = stainbridge_core::stainprep::augment(&off_patch, 1).unwrap();
        let rot =
            detect_negative_candidates(&rotated, &positives, &sigmas, 1e-4, 10.0, 10.0).unwrap();
        assert_eq!(base.detections.len(), rot.detections.len());
        for det in &base.detections {
            let expect = (99.0 - det.center.1, det.center.0);
            assert!(
                rot.detections.iter().any(|r| r.distance_to(expect) <= 1.0),
                "no rotated detection within 1 px of {expect:?}"
            );
        }
    });
}

// ---------------------------------------------------------------- 5

#[test]
fn criterion_5_rebalance_exactness() {
    timed("5 (rebalance exactness)", Duration::from_secs(5), || {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        for case in 0..50 {
            let p = 1 + rng.random_range(0..60);
            let n = rng.random_range(0..600);
            let mut records = Vec::new();
            for i in 0..p + n {
                records.push(stainbridge_core::domain::SampleRecord {
                    patch_ref: format!("r{i}.png"),
                    label: if i < p { Label::Mitosis } else { Label::NonMitosis },
                    stain: StainDomain::He,
                    paired_ref: None,
                    split: Split::ClsTrain,
                    source_id: format!("s{}", i % 5),
                    center_row: i as i64,
                    center_col: 0,
                });
            }
            let (selected, weights) =
                rebalance(&records, &ClassRatioConfig::default(), case as u64).unwrap();
            let pos = selected.iter().filter(|r| r.label == Label::Mitosis).count();
            let neg = selected.len() - pos;
            assert_eq!(pos, p, "case {case}: positives dropped");
            assert_eq!(neg, (5 * p).min(n), "case {case}: wrong negative count");
            for (r, &w) in selected.iter().zip(weights.iter()) {
                match r.label {
                    Label::Mitosis => assert_eq!(w, 5.0),
                    Label::NonMitosis => assert_eq!(w, 1.0),
                }
            }
        }
    });
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_6_scenario_isolation() {
    timed("6 (scenario isolation)", Duration::from_secs(10), || {
        let dir = tempfile::tempdir().unwrap();
        let store = common::corpus(dir.path(), 606, 4, 6, 100, 2.0);

        // synthetic_unpaired construction performs zero paired_ref reads
        let tiny = common::tiny_generator();
        let gen: Generator<f32> = Generator::build(&tiny, 3);
        let ckpt = Checkpoint::from_net(
            &gen,
            CheckpointMeta {
                kind: "generator".into(),
                spec: serde_json::to_value(&tiny).unwrap(),
                fingerprint: tiny.fingerprint(),
                dtype: String::new(),
                epoch: 0,
                from_stain: Some(StainDomain::Phh3),
                to_stain: Some(StainDomain::He),
            },
        );
        let ckpt_path = dir.path().join("p2h.ckpt");
        ckpt.save(&ckpt_path).unwrap();
        let config = ScenarioConfig {
            scenario: Scenario::SyntheticUnpaired,
            source_checkpoint: Some(ckpt_path),
            augmentation: false,
            epochs: 1,
            seed: derive_seed(6, "c6", 0),
            ..Default::default()
        };
        let before = store.pair_reads();
        build_training_set(&store, &config).unwrap();
        assert_eq!(store.pair_reads(), before, "paired_ref was consulted");

        // gan_features fails fast when any paired_ref is missing
        let mut manifest = store.manifest().clone();
        for r in &mut manifest.records {
            if r.split == Split::ClsTrain && r.stain == StainDomain::He {
                r.paired_ref = None;
            }
        }
        manifest.save(dir.path().join("manifest.jsonl")).unwrap();
        let store = CorpusStore::open(dir.path()).unwrap();
        let full = GeneratorSpec::default();
        let gen: Generator<f32> = Generator::build(&full, 4);
        let ckpt = Checkpoint::from_net(
            &gen,
            CheckpointMeta {
                kind: "generator".into(),
                spec: serde_json::to_value(&full).unwrap(),
                fingerprint: full.fingerprint(),
                dtype: String::new(),
                epoch: 0,
                from_stain: Some(StainDomain::He),
                to_stain: Some(StainDomain::Phh3),
            },
        );
        let h2p_path = dir.path().join("h2p.ckpt");
        ckpt.save(&h2p_path).unwrap();
        let config = ScenarioConfig {
            scenario: Scenario::GanFeatures,
            source_checkpoint: Some(h2p_path),
            epochs: 1,
            ..Default::default()
        };
        let err = build_training_set(&store, &config);
        assert!(
            matches!(err, Err(Error::Precondition(_))),
            "expected fail-fast precondition error, got {err:?}"
        );
    });
}

// ---------------------------------------------------------------- 8

#[test]
fn criterion_8_metric_arithmetic() {
    timed("8 (metric arithmetic)", Duration::from_secs(5), || {
        // the (tp=5, fp=5, fn=10) fixture, exactly
        let counts = evalkit::ConfusionCounts {
            tp: 5,
            fp: 5,
            fn_: 10,
            tn: 0,
        };
        let m = evalkit::f1(counts);
        assert_eq!(m.precision, 0.5);
        assert_eq!(m.recall, 1.0 / 3.0);
        assert_eq!(m.f1, 0.4);

        // sweep cells match independent recomputation bit-exactly
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(88);
        let rows: Vec<evalkit::PredictionRow> = (0..200)
            .map(|i| evalkit::PredictionRow {
                id: format!("s{i}"),
                probability: rng.random::<f64>(),
                label: if rng.random::<f64>() < 0.1 {
                    Label::Mitosis
                } else {
                    Label::NonMitosis
                },
            })
            .collect();
        let path = dir.path().join("epoch_003.csv");
        evalkit::write_predictions(&path, &rows).unwrap();
        let grid = evalkit::default_thresholds();
        let report = evalkit::sweep("fixture", &[(3, path)], &grid).unwrap();
        for _ in 0..10 {
            let cell = &report.cells[rng.random_range(0..report.cells.len())];
            let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0, 0, 0);
            for r in &rows {
                match (r.probability > cell.threshold, r.label) {
                    (true, Label::Mitosis) => tp += 1,
                    (true, Label::NonMitosis) => fp += 1,
                    (false, Label::Mitosis) => fn_ += 1,
                    (false, Label::NonMitosis) => tn += 1,
                }
            }
            assert_eq!((tp, fp, fn_, tn), (
                cell.counts.tp,
                cell.counts.fp,
                cell.counts.fn_,
                cell.counts.tn
            ));
            // zero-denominator cells return 0 by the documented convention
            let precision = if tp + fp == 0 {
                0.0
            } else {
                tp as f64 / (tp + fp) as f64
            };
            let recall = if tp + fn_ == 0 {
                0.0
            } else {
                tp as f64 / (tp + fn_) as f64
            };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            assert_eq!(precision.to_bits(), cell.metrics.precision.to_bits());
            assert_eq!(recall.to_bits(), cell.metrics.recall.to_bits());
            assert_eq!(f1.to_bits(), cell.metrics.f1.to_bits());
        }
    });
}

// ------------------------------------------------------------- 7 & 9

/// Reduced-scale protocol configuration: 18 slides, 5/9/4 split, epochs
/// within the stated bounds, full-width networks, seed-pinned.
#[allow(dead_code)]
fn protocol_config() -> stainbridge_core::pipeline::ExperimentConfig {
    use stainbridge_core::pipeline::ExperimentConfig;
    let mut config = ExperimentConfig::default();
    config.seed = 42;
    config.phantom.n_slides = 18;
    config.phantom.patches_per_slide = 14;
    config.phantom.simulator.imbalance_target = 7.0;
    config.phantom.simulator.mitosis_rate = 1.0 / 8.0;
    config.gan.paired.epochs = 3;
    config.gan.paired.checkpoint_interval = 3;
    config.gan.unpaired.epochs = 4;
    config.gan.unpaired.checkpoint_interval = 4;
    config.scenarios = Scenario::ALL
        .iter()
        .map(|&s| ScenarioConfig {
            scenario: s,
            epochs: 16,
            batch_size: 4,
            learning_rate: 2e-4,
            checkpoint_interval: 4,
            augmentation: true,
            ..Default::default()
        })
        .collect();
    config
}

#[test]
fn criterion_7_and_9_end_to_end_protocol_and_determinism() {
    let _guard = GATE.lock().unwrap_or_else(|p| p.into_inner());
    let started = Instant::now();

    let config = protocol_config();
    let root = tempfile::tempdir().unwrap();
    let root_a = root.path().join("a");
    let root_b = root.path().join("b");

    let report_a =
        stainbridge_core::pipeline::reproduce_protocol(&config, &root_a, false).unwrap();
    assert_eq!(report_a.split_counts, (5, 9, 4));

    // the all-positive baseline on the imbalanced test pool
    let store = CorpusStore::open(report_a.run_dir.join("phantom")).unwrap();
    let test_records: Vec<_> = store
        .manifest()
        .split(Split::Test)
        .filter(|r| r.stain == StainDomain::He)
        .collect();
    let positives = test_records
        .iter()
        .filter(|r| r.label == Label::Mitosis)
        .count();
    assert!(positives >= 3, "degenerate test pool: {positives} positives");
    let p = positives as f64 / test_records.len() as f64;
    let floor = 2.0 * p / (p + 1.0);
    println!(
        "criterion 7: test pool {} samples, {} positives (rate {:.3}), all-positive F1 floor {:.3}",
        test_records.len(),
        positives,
        p,
        floor
    );

    let mut best = std::collections::HashMap::new();
    for row in &report_a.rows {
        let f1 = row.best_f1.unwrap_or(0.0);
        println!(
            "criterion 7: {} best F1 {:.4} (epoch {:?}, threshold {:?})",
            row.scenario, f1, row.best_epoch, row.best_threshold
        );
        assert!(
            row.present && f1 > floor,
            "{} best F1 {f1:.4} does not exceed the floor {floor:.4}",
            row.scenario
        );
        best.insert(row.scenario.clone(), f1);
    }
    let baseline_f1 = best["baseline"];
    let features_f1 = best["gan_features"];
    assert!(
        features_f1 >= baseline_f1 - 0.05,
        "gan_features {features_f1:.4} below baseline {baseline_f1:.4} - 0.05"
    );
    println!("criterion 7: PASS ({:.2?})", started.elapsed());

    // criterion 9: identical seed reproduces the report grid bit-identically
    let rerun_started = Instant::now();
    let report_b =
        stainbridge_core::pipeline::reproduce_protocol(&config, &root_b, false).unwrap();
    assert_eq!(report_a.reports.len(), report_b.reports.len());
    for (a, b) in report_a.reports.iter().zip(report_b.reports.iter()) {
        assert_eq!(a, b, "EvalReport for {} differs between runs", a.scenario);
        let json_a = serde_json::to_string(a).unwrap();
        let json_b = serde_json::to_string(b).unwrap();
        assert_eq!(json_a, json_b, "serialized grid differs for {}", a.scenario);
    }
    println!("criterion 9: PASS ({:.2?})", rerun_started.elapsed());
}

// unused-import guards for items used only in some cfg paths
#[allow(dead_code)]
fn _keep(s: Sequential<f64>) -> usize {
    s.layers.len()
}
