//! Classifier training and prediction for the four experimental scenarios.
//!
//! Scenario isolation is part of the contract and instrumented through the
//! corpus store's pair-read counter: the baseline path never touches GAN
//! code, the synthetic paths read only the PHH3 records they translate (no
//! pair lookups), and the feature path must resolve every record's
//! double-stained counterpart or fail fast.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{ClassRatioConfig, CorpusStore, Label, SampleRecord, Split, StainDomain};
use crate::error::{Error, Result};
use crate::ganlab::{
    derive_seed, extract_features, load_generator, translate, GeneratorHandle, TraceRecord,
    TrainingTrace,
};
use crate::nets::{
    feature_to_input, logit_to_probability, peek_meta, weighted_bce_logit, Adam, AdamConfig,
    BaselineClassifierSpec, Checkpoint, CheckpointMeta, Classifier, ClassifierKind,
    FeatureClassifierSpec, GradStore, Scalar,
};
use crate::par;
use crate::stainprep::{augment_array, rebalance, DIHEDRAL_OPS};

/// The four experimental scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "synthetic_paired")]
    SyntheticPaired,
    #[serde(rename = "synthetic_unpaired")]
    SyntheticUnpaired,
    #[serde(rename = "gan_features")]
    GanFeatures,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::Baseline,
        Scenario::SyntheticPaired,
        Scenario::SyntheticUnpaired,
        Scenario::GanFeatures,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Baseline => "baseline",
            Scenario::SyntheticPaired => "synthetic_paired",
            Scenario::SyntheticUnpaired => "synthetic_unpaired",
            Scenario::GanFeatures => "gan_features",
        }
    }

    pub fn needs_gan(self) -> bool {
        !matches!(self, Scenario::Baseline)
    }

    pub fn classifier_kind(self) -> ClassifierKind {
        match self {
            Scenario::GanFeatures => ClassifierKind::Feature,
            _ => ClassifierKind::Baseline,
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Scenario::Baseline),
            "synthetic_paired" => Ok(Scenario::SyntheticPaired),
            "synthetic_unpaired" => Ok(Scenario::SyntheticUnpaired),
            "gan_features" => Ok(Scenario::GanFeatures),
            other => Err(Error::Config(format!("unknown scenario `{other}`"))),
        }
    }
}

/// Per-scenario training configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    /// GAN checkpoint for the synthetic and feature scenarios; the baseline
    /// must not have one.
    pub source_checkpoint: Option<PathBuf>,
    pub ratio: ClassRatioConfig,
    pub augmentation: bool,
    pub epochs: u32,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub checkpoint_interval: u32,
    pub baseline_spec: BaselineClassifierSpec,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            scenario: Scenario::Baseline,
            source_checkpoint: None,
            ratio: ClassRatioConfig::default(),
            augmentation: true,
            epochs: 60,
            batch_size: 4,
            learning_rate: 2e-4,
            seed: 0,
            checkpoint_interval: 10,
            baseline_spec: BaselineClassifierSpec::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.ratio.validate()?;
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        match (self.scenario.needs_gan(), &self.source_checkpoint) {
            (true, None) => Err(Error::Precondition(format!(
                "scenario `{}` requires source_checkpoint",
                self.scenario
            ))),
            (false, Some(_)) => Err(Error::Precondition(
                "the baseline scenario forbids source_checkpoint".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// One training sample: an image in `(H, W, 3)` order (augmented lazily at
/// train time) or precomputed feature variants in network `(C, H, W)`
/// layout (one per dihedral op when augmentation is on).
#[derive(Debug, Clone)]
pub enum SampleInput {
    Image(Array3<f32>),
    Features(Vec<Array3<f32>>),
}

#[derive(Debug, Clone)]
pub struct TrainSample {
    pub input: SampleInput,
    pub target: f32,
    pub weight: f32,
    pub id: String,
}

#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub kind: ClassifierKind,
    pub samples: Vec<TrainSample>,
    pub augmentation: bool,
}

fn hwc_f32(pixels: &ndarray::Array3<f64>) -> Array3<f32> {
    pixels.mapv(|v| v as f32)
}

fn chw_from_hwc(hwc: &Array3<f32>) -> Array3<f32> {
    let (h, w, c) = hwc.dim();
    Array3::from_shape_fn((c, h, w), |(ci, y, x)| hwc[[y, x, ci]])
}

/// Builds the scenario's training set from the `cls_train` split:
/// baseline from real H&E patches, synthetic scenarios from translated
/// PHH3 patches with PHH3 reference-standard labels, gan_features from
/// deep-feature maps of real H&E patches with labels resolved through the
/// double-stained counterpart. Rebalancing weights come from
/// [`rebalance`]; the test pool is never passed through here.
pub fn build_training_set(store: &CorpusStore, config: &ScenarioConfig) -> Result<TrainingSet> {
    config.validate()?;
    let handle = match &config.source_checkpoint {
        Some(path) => Some(load_generator(path)?),
        None => None,
    };

    let source_stain = match config.scenario {
        Scenario::Baseline | Scenario::GanFeatures => StainDomain::He,
        Scenario::SyntheticPaired | Scenario::SyntheticUnpaired => StainDomain::Phh3,
    };
    let records: Vec<SampleRecord> = store
        .manifest()
        .split(Split::ClsTrain)
        .filter(|r| r.stain == source_stain)
        .cloned()
        .collect();
    if records.is_empty() {
        return Err(Error::Precondition(format!(
            "cls_train split has no {source_stain} records"
        )));
    }

    let (selected, weights) =
        rebalance(&records, &config.ratio, derive_seed(config.seed, "rebalance", 0))?;

    match config.scenario {
        Scenario::Baseline => {
            let loaded: Vec<Result<Array3<f32>>> =
                par::map(&selected, |r| Ok(hwc_f32(&store.load_patch(r)?.pixels)));
            let samples = assemble_image_samples(&selected, &weights, loaded)?;
            Ok(TrainingSet {
                kind: ClassifierKind::Baseline,
                samples,
                augmentation: config.augmentation,
            })
        }
        Scenario::SyntheticPaired | Scenario::SyntheticUnpaired => {
            let handle = handle.as_ref().expect("validated above");
            let (from, to) = handle.direction()?;
            if (from, to) != (StainDomain::Phh3, StainDomain::He) {
                return Err(Error::Precondition(format!(
                    "synthetic scenarios need a PHH3->HE generator, got {from}->{to}"
                )));
            }
            let loaded: Vec<Result<crate::domain::Patch>> =
                par::map(&selected, |r| store.load_patch(r));
            let patches: Vec<crate::domain::Patch> = loaded.into_iter().collect::<Result<_>>()?;
            let translated = translate(handle, &patches)?;
            let images: Vec<Result<Array3<f32>>> =
                translated.iter().map(|p| Ok(hwc_f32(&p.pixels))).collect();
            let samples = assemble_image_samples(&selected, &weights, images)?;
            Ok(TrainingSet {
                kind: ClassifierKind::Baseline,
                samples,
                augmentation: config.augmentation,
            })
        }
        Scenario::GanFeatures => {
            let handle = handle.as_ref().expect("validated above");
            // Resolve every label through the aligned PHH3 counterpart
            // first; a missing pair is a hard error before any extraction.
            let mut labels = Vec::with_capacity(selected.len());
            for r in &selected {
                labels.push(store.paired_record(r)?.label);
            }
            let loaded: Vec<Result<crate::domain::Patch>> =
                par::map(&selected, |r| store.load_patch(r));
            let patches: Vec<crate::domain::Patch> = loaded.into_iter().collect::<Result<_>>()?;

            let ops: Vec<usize> = if config.augmentation {
                (0..DIHEDRAL_OPS).collect()
            } else {
                vec![0]
            };
            // features of each dihedral variant, extracted once up front
            let mut variant_patches = Vec::with_capacity(patches.len() * ops.len());
            for patch in &patches {
                for &op in &ops {
                    let pixels = augment_array(&patch.pixels, op)?;
                    variant_patches.push(crate::domain::Patch {
                        pixels,
                        stain: patch.stain,
                        source_id: patch.source_id.clone(),
                        center: patch.center,
                    });
                }
            }
            let maps = extract_features(handle, &variant_patches)?;
            let mut samples = Vec::with_capacity(selected.len());
            for (i, (record, label)) in selected.iter().zip(labels.iter()).enumerate() {
                let variants: Vec<Array3<f32>> = maps[i * ops.len()..(i + 1) * ops.len()]
                    .iter()
                    .map(|m| feature_to_input::<f32>(m))
                    .collect();
                samples.push(TrainSample {
                    input: SampleInput::Features(variants),
                    target: label.target() as f32,
                    weight: weights[i] as f32,
                    id: record.patch_ref.clone(),
                });
            }
            Ok(TrainingSet {
                kind: ClassifierKind::Feature,
                samples,
                augmentation: config.augmentation,
            })
        }
    }
}

fn assemble_image_samples(
    selected: &[SampleRecord],
    weights: &[f64],
    images: Vec<Result<Array3<f32>>>,
) -> Result<Vec<TrainSample>> {
    let mut samples = Vec::with_capacity(selected.len());
    for ((record, &weight), image) in selected.iter().zip(weights.iter()).zip(images) {
        samples.push(TrainSample {
            input: SampleInput::Image(image?),
            target: record.label.target() as f32,
            weight: weight as f32,
            id: record.patch_ref.clone(),
        });
    }
    Ok(samples)
}

fn classifier_for(kind: ClassifierKind, config: &ScenarioConfig, seed: u64) -> Classifier<f32> {
    match kind {
        ClassifierKind::Baseline => Classifier::build_baseline(&config.baseline_spec, seed),
        ClassifierKind::Feature => Classifier::build_feature(&FeatureClassifierSpec::default(), seed),
    }
}

fn net_input(sample: &TrainSample, op: usize) -> Result<Array3<f32>> {
    match &sample.input {
        SampleInput::Image(hwc) => {
            let augmented = augment_array(hwc, op)?;
            Ok(chw_from_hwc(&augmented))
        }
        SampleInput::Features(variants) => Ok(variants[op % variants.len()].clone()),
    }
}

/// Trains a classifier with weighted binary cross-entropy (the
/// oversampling factor enters as per-sample loss weights). Per-epoch
/// checkpoints land in `out_dir` for the epoch sweep; deterministic given
/// the config seed.
pub fn train_classifier(
    training_set: &TrainingSet,
    config: &ScenarioConfig,
    out_dir: impl AsRef<Path>,
) -> Result<(Checkpoint<f32>, TrainingTrace)> {
    config.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let n = training_set.samples.len();
    if n == 0 {
        return Err(Error::DegenerateClass("empty training set".into()));
    }

    let mut net = classifier_for(
        training_set.kind,
        config,
        derive_seed(config.seed, "cls.init", 0),
    );
    let mut adam = Adam::new(AdamConfig {
        learning_rate: config.learning_rate,
        ..Default::default()
    });

    let mut trace = TrainingTrace::default();
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "cls.order", u64::from(epoch)));
        order.shuffle(&mut rng);
        let ops: Vec<usize> = if training_set.augmentation {
            let mut op_rng =
                ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "cls.aug", u64::from(epoch)));
            (0..n).map(|_| op_rng.random_range(0..DIHEDRAL_OPS)).collect()
        } else {
            vec![0; n]
        };

        let mut loss_sum = 0.0f64;
        let mut weight_sum = 0.0f64;
        let mut correct = 0usize;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let results: Vec<Result<(GradStore<f32>, f32, f32, bool)>> =
                par::map(batch, |&i| {
                    let sample = &training_set.samples[i];
                    let x = net_input(sample, ops[i])?;
                    let (logit, cache) = net.forward_logit(&x)?;
                    let (loss, d_logit) =
                        weighted_bce_logit(logit, sample.target, sample.weight);
                    let mut store = GradStore::new();
                    net.backward_from_logit(&cache, d_logit, &mut store);
                    let hit = (logit_to_probability(logit) > 0.5)
                        == (sample.target > 0.5);
                    Ok((store, loss, sample.weight, hit))
                });
            let mut grads = GradStore::new();
            let mut batch_weight = 0.0f32;
            for r in results {
                let (store, loss, weight, hit) = r?;
                loss_sum += f64::from(loss);
                weight_sum += f64::from(weight);
                batch_weight += weight;
                correct += usize::from(hit);
                grads.merge(store);
            }
            if !loss_sum.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    value: loss_sum,
                });
            }
            grads.scale(1.0 / batch_weight);
            adam.step(&mut net, &grads);
        }

        let checkpoint_name =
            if epoch % config.checkpoint_interval == 0 || epoch == config.epochs {
                let name = format!("cls_epoch_{epoch:03}.ckpt");
                checkpoint_of(&net, config, training_set.kind, epoch).save(out_dir.join(&name))?;
                Some(name)
            } else {
                None
            };
        trace.push(TraceRecord {
            epoch,
            loss: loss_sum / weight_sum,
            adv_loss: 0.0,
            recon_loss: 0.0,
            accuracy: Some(correct as f64 / n as f64),
            wall_clock_s: started.elapsed().as_secs_f64(),
            checkpoint: checkpoint_name,
        })?;
        log::info!(
            "cls {} epoch {epoch}/{}: loss {:.4} acc {:.3}",
            config.scenario,
            config.epochs,
            loss_sum / weight_sum,
            correct as f64 / n as f64
        );
    }

    let final_ckpt = checkpoint_of(&net, config, training_set.kind, config.epochs);
    final_ckpt.save(out_dir.join("cls_final.ckpt"))?;
    trace.save(out_dir.join("trace.csv"))?;
    Ok((final_ckpt, trace))
}

fn checkpoint_of(
    net: &Classifier<f32>,
    config: &ScenarioConfig,
    kind: ClassifierKind,
    epoch: u32,
) -> Checkpoint<f32> {
    let (kind_str, spec, fingerprint) = match kind {
        ClassifierKind::Baseline => (
            "baseline_classifier",
            serde_json::to_value(&config.baseline_spec).expect("spec serializes"),
            config.baseline_spec.fingerprint(),
        ),
        ClassifierKind::Feature => (
            "feature_classifier",
            serde_json::to_value(FeatureClassifierSpec::default()).expect("spec serializes"),
            FeatureClassifierSpec::default().fingerprint(),
        ),
    };
    Checkpoint::from_net(
        net,
        CheckpointMeta {
            kind: kind_str.into(),
            spec,
            fingerprint,
            dtype: String::new(),
            epoch,
            from_stain: None,
            to_stain: None,
        },
    )
}

/// A classifier loaded from a checkpoint.
pub enum ClassifierHandle {
    F32(Box<Classifier<f32>>),
    F64(Box<Classifier<f64>>),
}

pub fn load_classifier(path: impl AsRef<Path>) -> Result<ClassifierHandle> {
    let path = path.as_ref();
    let meta = peek_meta(path)?;
    let build = |seed: u64| -> Result<(ClassifierKind, BaselineClassifierSpec)> {
        let _ = seed;
        match meta.kind.as_str() {
            "baseline_classifier" => Ok((
                ClassifierKind::Baseline,
                serde_json::from_value(meta.spec.clone())?,
            )),
            "feature_classifier" => Ok((ClassifierKind::Feature, BaselineClassifierSpec::default())),
            other => Err(Error::BadCheckpoint {
                path: path.to_path_buf(),
                reason: format!("expected a classifier checkpoint, found `{other}`"),
            }),
        }
    };
    let (kind, baseline_spec) = build(0)?;
    fn assemble<T: Scalar>(
        path: &Path,
        kind: ClassifierKind,
        baseline_spec: &BaselineClassifierSpec,
    ) -> Result<Classifier<T>> {
        let ckpt: Checkpoint<T> = Checkpoint::load(path)?;
        let mut net = match kind {
            ClassifierKind::Baseline => {
                ckpt.verify_fingerprint(&baseline_spec.fingerprint())?;
                Classifier::build_baseline(baseline_spec, 0)
            }
            ClassifierKind::Feature => {
                ckpt.verify_fingerprint(&FeatureClassifierSpec::default().fingerprint())?;
                Classifier::build_feature(&FeatureClassifierSpec::default(), 0)
            }
        };
        ckpt.apply_to(&mut net)?;
        Ok(net)
    }
    match meta.dtype.as_str() {
        "f32" => Ok(ClassifierHandle::F32(Box::new(assemble(
            path,
            kind,
            &baseline_spec,
        )?))),
        "f64" => Ok(ClassifierHandle::F64(Box::new(assemble(
            path,
            kind,
            &baseline_spec,
        )?))),
        other => Err(Error::BadCheckpoint {
            path: path.to_path_buf(),
            reason: format!("unknown dtype `{other}`"),
        }),
    }
}

impl ClassifierHandle {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            ClassifierHandle::F32(c) => c.kind,
            ClassifierHandle::F64(c) => c.kind,
        }
    }
}

/// Probabilities for a batch of network-ready inputs, order preserving.
pub fn predict(handle: &ClassifierHandle, inputs: &[Array3<f32>]) -> Result<Vec<f64>> {
    let results: Vec<Result<f64>> = match handle {
        ClassifierHandle::F32(net) => par::map(inputs, |x| net.forward_prob(x)),
        ClassifierHandle::F64(net) => {
            par::map(inputs, |x| net.forward_prob(&x.mapv(f64::from)))
        }
    };
    results.into_iter().collect()
}

/// Evaluation pool: inputs, labels, and stable sample ids. Built from the
/// requested split with no rebalancing and no augmentation, so the test
/// pool keeps its raw imbalance.
pub struct EvalSet {
    pub kind: ClassifierKind,
    pub inputs: Vec<Array3<f32>>,
    pub labels: Vec<Label>,
    pub ids: Vec<String>,
}

/// Builds the evaluation pool for a scenario: real H&E patches for the
/// image scenarios, deep features of real H&E patches for gan_features.
pub fn build_eval_set(
    store: &CorpusStore,
    scenario: Scenario,
    split: Split,
    gan: Option<&GeneratorHandle>,
) -> Result<EvalSet> {
    let records: Vec<SampleRecord> = store
        .manifest()
        .split(split)
        .filter(|r| r.stain == StainDomain::He)
        .cloned()
        .collect();
    if records.is_empty() {
        return Err(Error::Precondition(format!(
            "split {split:?} has no HE records"
        )));
    }
    let labels: Vec<Label> = records.iter().map(|r| r.label).collect();
    let ids: Vec<String> = records.iter().map(|r| r.patch_ref.clone()).collect();
    let loaded: Vec<Result<crate::domain::Patch>> = par::map(&records, |r| store.load_patch(r));
    let patches: Vec<crate::domain::Patch> = loaded.into_iter().collect::<Result<_>>()?;

    match scenario {
        Scenario::GanFeatures => {
            let handle = gan.ok_or_else(|| {
                Error::Precondition("gan_features evaluation requires a generator".into())
            })?;
            let maps = extract_features(handle, &patches)?;
            Ok(EvalSet {
                kind: ClassifierKind::Feature,
                inputs: maps.iter().map(|m| feature_to_input::<f32>(m)).collect(),
                labels,
                ids,
            })
        }
        _ => Ok(EvalSet {
            kind: ClassifierKind::Baseline,
            inputs: patches
                .iter()
                .map(|p| chw_from_hwc(&hwc_f32(&p.pixels)))
                .collect(),
            labels,
            ids,
        }),
    }
}
