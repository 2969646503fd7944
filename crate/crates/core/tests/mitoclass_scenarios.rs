//! Scenario construction, classifier training, and prediction contracts.

mod common;

use common::{corpus, tiny_generator};
use stainbridge_core::domain::{
    ClassRatioConfig, CorpusStore, DatasetManifest, Label, Split, StainDomain,
};
use stainbridge_core::error::Error;
use stainbridge_core::ganlab::derive_seed;
use stainbridge_core::mitoclass::{
    build_eval_set, build_training_set, load_classifier, predict, train_classifier, Scenario,
    ScenarioConfig, SampleInput,
};
use stainbridge_core::nets::{
    weighted_bce_logit, BaselineClassifierSpec, Checkpoint, CheckpointMeta, Classifier,
    ClassifierKind, Generator, GeneratorSpec, Net,
};

fn small_baseline_spec() -> BaselineClassifierSpec {
    BaselineClassifierSpec {
        base_widths: [8, 8, 8, 8, 8, 8, 8, 8],
        gamma: 1.0,
    }
}

fn scenario_config(scenario: Scenario, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        scenario,
        seed,
        epochs: 4,
        batch_size: 4,
        learning_rate: 1e-3,
        augmentation: false,
        checkpoint_interval: 2,
        baseline_spec: small_baseline_spec(),
        ..Default::default()
    }
}

fn write_generator_ckpt(
    path: &std::path::Path,
    spec: &GeneratorSpec,
    seed: u64,
    from: StainDomain,
    to: StainDomain,
) {
    let gen: Generator<f32> = Generator::build(spec, seed);
    Checkpoint::from_net(
        &gen,
        CheckpointMeta {
            kind: "generator".into(),
            spec: serde_json::to_value(spec).unwrap(),
            fingerprint: spec.fingerprint(),
            dtype: String::new(),
            epoch: 0,
            from_stain: Some(from),
            to_stain: Some(to),
        },
    )
    .save(path)
    .unwrap();
}

#[test]
fn baseline_set_is_real_patches_with_manifest_labels() {
    let dir = tempfile::tempdir().unwrap();
    let store = corpus(dir.path(), 51, 4, 6, 100, 3.0);
    let config = scenario_config(Scenario::Baseline, 1);
    let set = build_training_set(&store, &config).unwrap();
    assert_eq!(set.kind, ClassifierKind::Baseline);
    assert!(!set.samples.is_empty());
    for sample in &set.samples {
        match &sample.input {
            SampleInput::Image(img) => assert_eq!(img.shape(), [100, 100, 3]),
            other => panic!("baseline must carry images, got {other:?}"),
        }
        let record = store.record_by_ref(&sample.id).unwrap();
        assert_eq!(record.label.target() as f32, sample.target);
        assert_eq!(record.stain, StainDomain::He);
    }
    // positives weighted by the oversampling factor
    assert!(set
        .samples
        .iter()
        .all(|s| (s.target == 1.0) == (s.weight == 5.0)));
}

#[test]
fn baseline_forbids_a_source_checkpoint_and_gan_scenarios_require_one() {
    let mut config = scenario_config(Scenario::Baseline, 1);
    config.source_checkpoint = Some("g.ckpt".into());
    assert!(matches!(config.validate(), Err(Error::Precondition(_))));
    let config = scenario_config(Scenario::SyntheticPaired, 1);
    assert!(matches!(config.validate(), Err(Error::Precondition(_))));
}

#[test]
fn synthetic_unpaired_build_reads_zero_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let store = corpus(dir.path(), 53, 4, 8, 100, 2.0);
    let spec = tiny_generator();
    let ckpt_path = dir.path().join("p2h.ckpt");
    write_generator_ckpt(&ckpt_path, &spec, 5, StainDomain::Phh3, StainDomain::He);
    let mut config = scenario_config(Scenario::SyntheticUnpaired, 2);
    config.source_checkpoint = Some(ckpt_path);
    let before = store.pair_reads();
    let set = build_training_set(&store, &config).unwrap();
    assert_eq!(store.pair_reads(), before, "synthetic_unpaired touched pairs");
    // inputs are translated images tagged from PHH3 records
    for sample in &set.samples {
        let record = store.record_by_ref(&sample.id).unwrap();
        assert_eq!(record.stain, StainDomain::Phh3);
    }
}

#[test]
fn gan_features_build_needs_every_pair_and_yields_feature_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let store = corpus(dir.path(), 57, 4, 3, 100, 2.0);
    let spec = GeneratorSpec::default();
    let ckpt_path = dir.path().join("h2p.ckpt");
    write_generator_ckpt(&ckpt_path, &spec, 5, StainDomain::He, StainDomain::Phh3);

    let mut config = scenario_config(Scenario::GanFeatures, 3);
    config.source_checkpoint = Some(ckpt_path.clone());
    let before = store.pair_reads();
    let set = build_training_set(&store, &config).unwrap();
    assert!(store.pair_reads() > before, "gan_features must resolve pairs");
    assert_eq!(set.kind, ClassifierKind::Feature);
    for sample in &set.samples {
        match &sample.input {
            SampleInput::Features(variants) => {
                assert_eq!(variants.len(), 1); // augmentation off
                assert_eq!(variants[0].shape(), [256, 25, 25]);
            }
            other => panic!("expected features, got {other:?}"),
        }
    }

    // drop one counterpart record: the build must fail fast
    let mut manifest = store.manifest().clone();
    let victim = manifest
        .records
        .iter()
        .position(|r| {
            r.split == Split::ClsTrain && r.stain == StainDomain::He && r.label == Label::NonMitosis
        })
        .unwrap();
    manifest.records[victim].paired_ref = None;
    manifest.save(dir.path().join("manifest.jsonl")).unwrap();
    let store = CorpusStore::open(dir.path()).unwrap();
    let mut config = scenario_config(Scenario::GanFeatures, 3);
    config.source_checkpoint = Some(ckpt_path);
    config.ratio = ClassRatioConfig {
        train_ratio: 50,
        oversample_weight: 50.0,
        ..Default::default()
    };
    let err = build_training_set(&store, &config);
    assert!(
        matches!(err, Err(Error::Precondition(_))),
        "expected fail-fast on missing pair, got {err:?}"
    );
}

/// Memorization oracle: a small set against a full-capacity classifier for
/// many epochs must reach training accuracy 1.0.
#[test]
fn small_set_is_memorized_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    // 2 cls-train slides x 10 patches = 20 HE samples at ~1:1
    let store = corpus(dir.path(), 61, 4, 10, 100, 1.0);
    let mut config = scenario_config(Scenario::Baseline, 4);
    config.epochs = 200;
    config.checkpoint_interval = 200;
    config.baseline_spec = BaselineClassifierSpec::default();
    config.learning_rate = 1e-3;
    let set = build_training_set(&store, &config).unwrap();
    assert_eq!(set.samples.len(), 20);
    let (_, trace) = train_classifier(&set, &config, dir.path().join("cls")).unwrap();
    let final_acc = trace.records.last().unwrap().accuracy.unwrap();
    assert_eq!(final_acc, 1.0, "memorization failed: {final_acc}");
}

/// With a zero-initialized classifier every sample's loss is ln 2, so the
/// weighted and unweighted means coincide exactly.
#[test]
fn rebalance_weights_degenerate_to_uniform_at_zero_logits() {
    let dir = tempfile::tempdir().unwrap();
    let store = corpus(dir.path(), 63, 4, 6, 100, 2.0);
    let config = scenario_config(Scenario::Baseline, 5);
    let set = build_training_set(&store, &config).unwrap();
    let mut net: Classifier<f32> = Classifier::build_baseline(&config.baseline_spec, 0);
    net.visit_params_mut(&mut |_, mut v| v.fill(0.0));

    let mut weighted_num = 0.0;
    let mut weighted_den = 0.0;
    let mut uniform_num = 0.0;
    for sample in &set.samples {
        let img = match &sample.input {
            SampleInput::Image(img) => img,
            _ => unreachable!(),
        };
        let x = ndarray::Array3::from_shape_fn((3, 100, 100), |(c, y, xx)| img[[y, xx, c]]);
        let (logit, _) = net.forward_logit(&x).unwrap();
        assert_eq!(logit, 0.0);
        let (wl, _) = weighted_bce_logit(logit, sample.target, sample.weight);
        weighted_num += f64::from(wl);
        weighted_den += f64::from(sample.weight);
        let (ul, _) = weighted_bce_logit(logit, sample.target, 1.0);
        uniform_num += f64::from(ul);
    }
    let weighted_mean = weighted_num / weighted_den;
    let uniform_mean = uniform_num / set.samples.len() as f64;
    assert!((weighted_mean - uniform_mean).abs() < 1e-12);
    assert!((weighted_mean - std::f64::consts::LN_2).abs() < 1e-6);
}

#[test]
fn training_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let store = corpus(dir.path(), 67, 4, 4, 100, 2.0);
    let mut config = scenario_config(Scenario::Baseline, 6);
    config.augmentation = true;
    let set = build_training_set(&store, &config).unwrap();
    let (a, trace_a) = train_classifier(&set, &config, dir.path().join("a")).unwrap();
    let (b, trace_b) = train_classifier(&set, &config, dir.path().join("b")).unwrap();
    assert_eq!(trace_a.loss_sequences(), trace_b.loss_sequences());
    for ((na, ta), (nb, tb)) in a.tensors.iter().zip(b.tensors.iter()) {
        assert_eq!(na, nb);
        assert_eq!(ta, tb, "weights diverged for {na}");
    }
}

#[test]
fn prediction_is_pure_order_preserving_and_bounded() {
    let dir = tempfile::tempdir().unwrap();
    let store = corpus(dir.path(), 69, 4, 4, 100, 2.0);
    let config = scenario_config(Scenario::Baseline, 7);
    let set = build_training_set(&store, &config).unwrap();
    let (_, trace) = train_classifier(&set, &config, dir.path().join("cls")).unwrap();
    let (_, ckpt_name) = trace.checkpoints().pop().unwrap();
    let handle = load_classifier(dir.path().join("cls").join(ckpt_name)).unwrap();

    let eval = build_eval_set(&store, Scenario::Baseline, Split::Test, None).unwrap();
    let mut inputs = eval.inputs.clone();
    let duplicate = inputs[0].clone();
    inputs.push(duplicate);
    let probs = predict(&handle, &inputs).unwrap();
    assert_eq!(probs.len(), inputs.len());
    assert_eq!(probs[0], *probs.last().unwrap(), "prediction is not pure");
    for &p in &probs {
        assert!(p > 0.0 && p < 1.0, "probability {p} outside (0,1)");
    }
}

/// Held-out separation: a classifier trained on the phantom corpus scores
/// true mitoses above non-mitoses on average.
#[test]
fn trained_classifier_separates_held_out_classes() {
    let dir = tempfile::tempdir().unwrap();
    let store = corpus(dir.path(), 73, 6, 10, 100, 2.0);
    let mut config = scenario_config(Scenario::Baseline, 8);
    config.epochs = 12;
    config.checkpoint_interval = 12;
    config.augmentation = true;
    let set = build_training_set(&store, &config).unwrap();
    let (_, trace) = train_classifier(&set, &config, dir.path().join("cls")).unwrap();
    let (_, ckpt_name) = trace.checkpoints().pop().unwrap();
    let handle = load_classifier(dir.path().join("cls").join(ckpt_name)).unwrap();

    let eval = build_eval_set(&store, Scenario::Baseline, Split::Test, None).unwrap();
    let probs = predict(&handle, &eval.inputs).unwrap();
    let (mut pos_sum, mut pos_n, mut neg_sum, mut neg_n) = (0.0, 0, 0.0, 0);
    for (p, label) in probs.iter().zip(&eval.labels) {
        match label {
            Label::Mitosis => {
                pos_sum += p;
                pos_n += 1;
            }
            Label::NonMitosis => {
                neg_sum += p;
                neg_n += 1;
            }
        }
    }
    assert!(pos_n > 0 && neg_n > 0, "test split lacks a class");
    let pos_mean = pos_sum / pos_n as f64;
    let neg_mean = neg_sum / neg_n as f64;
    assert!(
        pos_mean > neg_mean,
        "no separation: mitoses {pos_mean:.3} vs non-mitoses {neg_mean:.3}"
    );
}

/// The test pool is used as-is: no rebalancing, raw imbalance preserved.
#[test]
fn eval_set_keeps_the_raw_imbalance() {
    let dir = tempfile::tempdir().unwrap();
    let store = corpus(dir.path(), 79, 6, 8, 100, 4.0);
    let eval = build_eval_set(&store, Scenario::Baseline, Split::Test, None).unwrap();
    let manifest_test: Vec<_> = store
        .manifest()
        .split(Split::Test)
        .filter(|r| r.stain == StainDomain::He)
        .collect();
    assert_eq!(eval.inputs.len(), manifest_test.len());
    let eval_pos = eval.labels.iter().filter(|l| **l == Label::Mitosis).count();
    let manifest_pos = manifest_test
        .iter()
        .filter(|r| r.label == Label::Mitosis)
        .count();
    assert_eq!(eval_pos, manifest_pos);
}

#[test]
fn augmentation_is_label_invariant_across_variants() {
    let dir = tempfile::tempdir().unwrap();
    let store = corpus(dir.path(), 83, 4, 3, 100, 2.0);
    let spec = GeneratorSpec::default();
    let ckpt_path = dir.path().join("h2p.ckpt");
    write_generator_ckpt(&ckpt_path, &spec, 9, StainDomain::He, StainDomain::Phh3);
    let mut config = scenario_config(Scenario::GanFeatures, 10);
    config.augmentation = true;
    config.source_checkpoint = Some(ckpt_path);
    let set = build_training_set(&store, &config).unwrap();
    for sample in &set.samples {
        let record = store.record_by_ref(&sample.id).unwrap();
        assert_eq!(record.label.target() as f32, sample.target);
        match &sample.input {
            SampleInput::Features(variants) => assert_eq!(variants.len(), 8),
            other => panic!("expected 8 feature variants, got {other:?}"),
        }
    }
}

#[test]
fn empty_cls_split_is_a_precondition_error() {
    let dir = tempfile::tempdir().unwrap();
    let store = corpus(dir.path(), 87, 4, 3, 100, 2.0);
    let manifest = DatasetManifest::new(
        store
            .manifest()
            .records
            .iter()
            .filter(|r| r.split != Split::ClsTrain)
            .cloned()
            .collect(),
    );
    manifest.save(dir.path().join("manifest.jsonl")).unwrap();
    let store = CorpusStore::open(dir.path()).unwrap();
    let config = scenario_config(Scenario::Baseline, 11);
    assert!(matches!(
        build_training_set(&store, &config),
        Err(Error::Precondition(_))
    ));
}

// referenced helper shared with other suites
#[allow(dead_code)]
fn seed_note() -> u64 {
    derive_seed(0, "doc", 0)
}
