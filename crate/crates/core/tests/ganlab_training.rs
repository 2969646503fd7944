//! Training-dynamics and inference contracts for the adversarial loops.

mod common;

use common::{corpus, tiny_discriminator, tiny_generator};
use stainbridge_core::domain::{DatasetManifest, Split, StainDomain};
use stainbridge_core::error::Error;
use stainbridge_core::ganlab::{
    extract_features, load_generator, train_paired, train_unpaired, translate, PairedGanConfig,
    UnpairedGanConfig,
};
use stainbridge_core::nets::{
    patch_to_input, Checkpoint, CheckpointMeta, Generator, GeneratorSpec, Net,
};

fn paired_config(seed: u64, epochs: u32) -> PairedGanConfig {
    PairedGanConfig {
        epochs,
        seed,
        learning_rate: 2e-4,
        checkpoint_interval: 100,
        generator: tiny_generator(),
        discriminator: tiny_discriminator(),
        ..Default::default()
    }
}

/// 50-pair phantom corpus, 30 epochs: the reconstruction term must
/// improve, and the trained translator must beat an untrained one against
/// the aligned ground truth.
#[test]
fn paired_training_reduces_l1_and_beats_untrained_translation() {
    let dir = tempfile::tempdir().unwrap();
    // 18 slides -> 5 GAN-train slides x 10 patches = 50 pairs
    let store = corpus(dir.path(), 71, 18, 10, 64, 5.0);
    let out = dir.path().join("gan");
    let config = paired_config(7, 30);
    let (ckpt, trace) =
        train_paired(&store, (StainDomain::Phh3, StainDomain::He), &config, &out).unwrap();
    let losses = trace.loss_sequences();
    assert_eq!(losses.len(), 30);
    let first_l1 = losses.first().unwrap().2;
    let last_l1 = losses.last().unwrap().2;
    assert!(
        last_l1 < first_l1,
        "L1 did not improve: first {first_l1}, last {last_l1}"
    );

    // translation check on held-out test pairs
    let test_records: Vec<_> = store
        .manifest()
        .split(Split::Test)
        .filter(|r| r.stain == StainDomain::Phh3)
        .take(6)
        .cloned()
        .collect();
    let sources: Vec<_> = test_records
        .iter()
        .map(|r| store.load_patch(r).unwrap())
        .collect();
    let truths: Vec<_> = test_records
        .iter()
        .map(|r| store.load_paired_patch(r).unwrap())
        .collect();

    ckpt.save(out.join("trained.ckpt")).unwrap();
    let trained = load_generator(out.join("trained.ckpt")).unwrap();
    let untrained_net: Generator<f32> = Generator::build(&config.generator, 999);
    let untrained_ckpt = Checkpoint::from_net(
        &untrained_net,
        CheckpointMeta {
            kind: "generator".into(),
            spec: serde_json::to_value(&config.generator).unwrap(),
            fingerprint: config.generator.fingerprint(),
            dtype: String::new(),
            epoch: 0,
            from_stain: Some(StainDomain::Phh3),
            to_stain: Some(StainDomain::He),
        },
    );
    untrained_ckpt.save(out.join("untrained.ckpt")).unwrap();
    let untrained = load_generator(out.join("untrained.ckpt")).unwrap();

    let mae_of = |translated: &[stainbridge_core::domain::Patch]| -> f64 {
        translated
            .iter()
            .zip(&truths)
            .map(|(a, b)| {
                let d = &a.pixels - &b.pixels;
                d.iter().map(|v| v.abs()).sum::<f64>() / d.len() as f64
            })
            .sum::<f64>()
            / truths.len() as f64
    };
    let trained_out = translate(&trained, &sources).unwrap();
    let untrained_out = translate(&untrained, &sources).unwrap();
    // output contract: tag flipped, order and shape preserved
    assert_eq!(trained_out.len(), sources.len());
    for (t, s) in trained_out.iter().zip(&sources) {
        assert_eq!(t.stain, StainDomain::He);
        assert_eq!(t.source_id, s.source_id);
        assert_eq!(t.pixels.shape(), s.pixels.shape());
    }
    let trained_mae = mae_of(&trained_out);
    let untrained_mae = mae_of(&untrained_out);
    assert!(
        trained_mae < untrained_mae,
        "trained {trained_mae} vs untrained {untrained_mae}"
    );
}

#[test]
fn zero_objective_leaves_weights_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let store = corpus(dir.path(), 3, 3, 2, 48, 3.0);
    let config = PairedGanConfig {
        adversarial_weight: 0.0,
        l1_weight: 0.0,
        epochs: 1,
        seed: 5,
        generator: tiny_generator(),
        discriminator: tiny_discriminator(),
        ..Default::default()
    };
    let before: Generator<f32> = Generator::build(
        &config.generator,
        stainbridge_core::ganlab::derive_seed(config.seed, "paired.gen", 0),
    );
    let (ckpt, _) = train_paired(
        &store,
        (StainDomain::He, StainDomain::Phh3),
        &config,
        dir.path().join("gan"),
    )
    .unwrap();
    let mut want = Vec::new();
    before.visit_params(&mut |name, v| want.push((name.to_string(), v.to_owned())));
    for ((name_a, a), (name_b, b)) in want.iter().zip(ckpt.tensors.iter()) {
        assert_eq!(name_a, name_b);
        assert_eq!(a, b, "weights changed for {name_a}");
    }
}

#[test]
fn paired_training_is_deterministic_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let store = corpus(dir.path(), 13, 3, 3, 48, 3.0);
    let run = |out: &str| {
        train_paired(
            &store,
            (StainDomain::Phh3, StainDomain::He),
            &paired_config(11, 3),
            dir.path().join(out),
        )
        .unwrap()
    };
    let (ckpt_a, trace_a) = run("a");
    let (ckpt_b, trace_b) = run("b");
    assert_eq!(trace_a.loss_sequences(), trace_b.loss_sequences());
    for ((na, ta), (nb, tb)) in ckpt_a.tensors.iter().zip(ckpt_b.tensors.iter()) {
        assert_eq!(na, nb);
        assert_eq!(ta, tb);
    }
    let (_, trace_c) = train_paired(
        &store,
        (StainDomain::Phh3, StainDomain::He),
        &paired_config(12, 3),
        dir.path().join("c"),
    )
    .unwrap();
    assert_ne!(trace_a.loss_sequences(), trace_c.loss_sequences());
}

#[test]
fn unpaired_record_fails_paired_training() {
    let dir = tempfile::tempdir().unwrap();
    let store = corpus(dir.path(), 17, 3, 2, 48, 3.0);
    let mut manifest = store.manifest().clone();
    for r in &mut manifest.records {
        if r.split == Split::GanTrain && r.stain == StainDomain::He {
            r.paired_ref = None;
        }
    }
    manifest.save(dir.path().join("manifest.jsonl")).unwrap();
    let store = CorpusStoreReload::open(dir.path());
    let err = train_paired(
        &store,
        (StainDomain::He, StainDomain::Phh3),
        &paired_config(1, 1),
        dir.path().join("gan"),
    );
    assert!(matches!(err, Err(Error::Precondition(_))));
}

// thin alias so the reload reads as intent
struct CorpusStoreReload;
impl CorpusStoreReload {
    fn open(path: &std::path::Path) -> stainbridge_core::domain::CorpusStore {
        stainbridge_core::domain::CorpusStore::open(path).unwrap()
    }
}

/// Unpaired training improves the cycle-reconstruction error and never
/// touches pairing metadata.
#[test]
fn unpaired_training_improves_cycle_and_ignores_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let store = corpus(dir.path(), 29, 6, 4, 64, 4.0);
    let baseline_pair_reads = store.pair_reads();
    let config = UnpairedGanConfig {
        epochs: 30,
        seed: 23,
        checkpoint_interval: 100,
        generator: tiny_generator(),
        discriminator: tiny_discriminator(),
        ..Default::default()
    };
    let (ckpt_ab, ckpt_ba, trace) =
        train_unpaired(&store, &config, dir.path().join("cycle")).unwrap();
    assert_eq!(
        store.pair_reads(),
        baseline_pair_reads,
        "unpaired training consulted paired_ref"
    );
    let losses = trace.loss_sequences();
    let first_cycle = losses.first().unwrap().2;
    let last_cycle = losses.last().unwrap().2;
    assert!(
        last_cycle < first_cycle,
        "cycle did not improve: first {first_cycle}, last {last_cycle}"
    );
    assert_eq!(
        (ckpt_ab.meta.from_stain, ckpt_ab.meta.to_stain),
        (Some(StainDomain::He), Some(StainDomain::Phh3))
    );
    assert_eq!(
        (ckpt_ba.meta.from_stain, ckpt_ba.meta.to_stain),
        (Some(StainDomain::Phh3), Some(StainDomain::He))
    );
}

#[test]
fn unpaired_training_needs_both_stains() {
    let dir = tempfile::tempdir().unwrap();
    let store = corpus(dir.path(), 31, 3, 2, 48, 3.0);
    let mut manifest = DatasetManifest::new(
        store
            .manifest()
            .records
            .iter()
            .filter(|r| r.stain == StainDomain::He || r.split != Split::GanTrain)
            .cloned()
            .collect(),
    );
    for r in &mut manifest.records {
        r.paired_ref = None;
    }
    manifest.save(dir.path().join("manifest.jsonl")).unwrap();
    let store = CorpusStoreReload::open(dir.path());
    let err = train_unpaired(
        &store,
        &UnpairedGanConfig {
            epochs: 1,
            generator: tiny_generator(),
            discriminator: tiny_discriminator(),
            ..Default::default()
        },
        dir.path().join("cycle"),
    );
    assert!(matches!(err, Err(Error::Precondition(_))));
}

#[test]
fn translate_rejects_stain_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let store = corpus(dir.path(), 37, 3, 2, 48, 3.0);
    let config = tiny_generator();
    let gen: Generator<f32> = Generator::build(&config, 1);
    let ckpt = Checkpoint::from_net(
        &gen,
        CheckpointMeta {
            kind: "generator".into(),
            spec: serde_json::to_value(&config).unwrap(),
            fingerprint: config.fingerprint(),
            dtype: String::new(),
            epoch: 0,
            from_stain: Some(StainDomain::Phh3),
            to_stain: Some(StainDomain::He),
        },
    );
    ckpt.save(dir.path().join("g.ckpt")).unwrap();
    let handle = load_generator(dir.path().join("g.ckpt")).unwrap();
    let he_record = store
        .manifest()
        .records
        .iter()
        .find(|r| r.stain == StainDomain::He)
        .unwrap()
        .clone();
    let he_patch = store.load_patch(&he_record).unwrap();
    assert!(matches!(
        translate(&handle, &[he_patch]),
        Err(Error::StainMismatch { .. })
    ));
}

/// Feature extraction: right shape, identical to the forward tap, and
/// sensitive to input orientation (characterization: no equivariance
/// claim).
#[test]
fn feature_extraction_matches_forward_tap_and_is_orientation_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let store = corpus(dir.path(), 41, 3, 2, 100, 3.0);
    let spec = GeneratorSpec::default();
    let gen: Generator<f32> = Generator::build(&spec, 77);
    let ckpt = Checkpoint::from_net(
        &gen,
        CheckpointMeta {
            kind: "generator".into(),
            spec: serde_json::to_value(&spec).unwrap(),
            fingerprint: spec.fingerprint(),
            dtype: String::new(),
            epoch: 0,
            from_stain: Some(StainDomain::He),
            to_stain: Some(StainDomain::Phh3),
        },
    );
    ckpt.save(dir.path().join("h2p.ckpt")).unwrap();
    let handle = load_generator(dir.path().join("h2p.ckpt")).unwrap();

    let he_record = store
        .manifest()
        .records
        .iter()
        .find(|r| r.stain == StainDomain::He)
        .unwrap()
        .clone();
    let patch = store.load_patch(&he_record).unwrap();
    let maps = extract_features(&handle, std::slice::from_ref(&patch)).unwrap();
    assert_eq!(maps.len(), 1);
    assert_eq!(maps[0].values.shape(), [25, 25, 256]);

    // identical to the full forward pass's tap
    let (_, tap) = gen.forward_infer(&patch_to_input::<f32>(&patch));
    let tap_hwc = stainbridge_core::nets::chw_to_hwc(&tap);
    assert_eq!(maps[0].values, tap_hwc);

    // rotating the input changes the features
    let rotated = stainbridge_core::stainprep::augment(&patch, 2).unwrap();
    let rotated_maps = extract_features(&handle, &[rotated]).unwrap();
    assert_ne!(maps[0].values, rotated_maps[0].values);

    // wrong-direction checkpoint is refused
    let p2h = Checkpoint::from_net(
        &gen,
        CheckpointMeta {
            kind: "generator".into(),
            spec: serde_json::to_value(&spec).unwrap(),
            fingerprint: spec.fingerprint(),
            dtype: String::new(),
            epoch: 0,
            from_stain: Some(StainDomain::Phh3),
            to_stain: Some(StainDomain::He),
        },
    );
    p2h.save(dir.path().join("p2h.ckpt")).unwrap();
    let p2h_handle = load_generator(dir.path().join("p2h.ckpt")).unwrap();
    assert!(extract_features(&p2h_handle, &[patch]).is_err());
}
