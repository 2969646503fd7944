//! Experiment orchestration: configuration, content-addressed run
//! directories, stage sequencing, and the full reproduction protocol
//! (18 slides, 5/9/4 split, four scenarios, comparison report).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{CorpusStore, Split};
use crate::error::{Error, Result};
use crate::evalkit::{
    render_comparison, sweep, write_predictions, ComparisonRow, EvalReport, PredictionRow,
    PINNED_THRESHOLD,
};
use crate::ganlab::{
    derive_seed, load_generator, train_paired, train_unpaired, PairedGanConfig, TrainingTrace,
    UnpairedGanConfig,
};
use crate::mitoclass::{
    build_eval_set, build_training_set, load_classifier, predict, Scenario, ScenarioConfig,
};
use crate::phantom::{generate_corpus, slide_split_counts, PhantomConfig};
use crate::stainprep::StainPrepParams;

/// Environment variable naming the run-root directory.
pub const RUN_ROOT_ENV: &str = "STAINBRIDGE_RUN_ROOT";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSection {
    pub n_slides: usize,
    pub patches_per_slide: usize,
    pub simulator: PhantomConfig,
}

impl Default for PhantomSection {
    fn default() -> Self {
        PhantomSection {
            n_slides: 18,
            patches_per_slide: 16,
            simulator: PhantomConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanSection {
    pub paired: PairedGanConfig,
    pub unpaired: UnpairedGanConfig,
}

/// Threshold grid specification; expands to a sorted grid with the pinned
/// operating points merged in.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdGridSpec {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
    pub pinned: Vec<f64>,
}

impl Default for ThresholdGridSpec {
    fn default() -> Self {
        ThresholdGridSpec {
            start: 0.50,
            stop: 0.99,
            step: 0.01,
            pinned: vec![PINNED_THRESHOLD],
        }
    }
}

impl ThresholdGridSpec {
    pub fn to_grid(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0 && self.stop >= self.start) {
            return Err(Error::Config("invalid threshold grid".into()));
        }
        let mut grid = Vec::new();
        let n = ((self.stop - self.start) / self.step).round() as usize;
        for i in 0..=n {
            grid.push((self.start + i as f64 * self.step * 1.0).min(self.stop));
        }
        grid.extend(self.pinned.iter().copied());
        grid.sort_by(|a, b| a.partial_cmp(b).expect("finite thresholds"));
        grid.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        Ok(grid)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub thresholds: ThresholdGridSpec,
}

/// Top-level experiment configuration. Unknown keys are rejected; the
/// resolved form (with derived per-stage seeds) is written next to every
/// run's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub run_root: Option<PathBuf>,
    pub phantom: PhantomSection,
    pub stainprep: StainPrepParams,
    pub gan: GanSection,
    pub scenarios: Vec<ScenarioConfig>,
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            run_root: None,
            phantom: PhantomSection::default(),
            stainprep: StainPrepParams::default(),
            gan: GanSection::default(),
            scenarios: Scenario::ALL
                .iter()
                .map(|&s| ScenarioConfig {
                    scenario: s,
                    ..Default::default()
                })
                .collect(),
            eval: EvalSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::Unreadable {
            path: path.as_ref().to_path_buf(),
            source: e,
        })?;
        Ok(toml::from_str(&text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Derives per-stage seeds from the global seed (mixing in any
    /// explicitly set sub-seed) so one seed pins the whole run.
    pub fn resolve(&self) -> ExperimentConfig {
        let mut resolved = self.clone();
        resolved.phantom.simulator.seed =
            derive_seed(self.seed, "stage.phantom", self.phantom.simulator.seed);
        resolved.gan.paired.seed =
            derive_seed(self.seed, "stage.gan-paired", self.gan.paired.seed);
        resolved.gan.unpaired.seed =
            derive_seed(self.seed, "stage.gan-unpaired", self.gan.unpaired.seed);
        for sc in &mut resolved.scenarios {
            sc.seed = derive_seed(
                self.seed,
                &format!("stage.cls.{}", sc.scenario),
                sc.seed,
            );
        }
        resolved
    }

    /// Content digest of the resolved configuration; keys the run
    /// directory.
    pub fn digest(&self) -> Result<String> {
        let text = self.to_toml()?;
        let hash = Sha256::digest(text.as_bytes());
        let mut hex = String::new();
        for b in hash.iter().take(6) {
            hex.push_str(&format!("{b:02x}"));
        }
        Ok(hex)
    }

    pub fn scenario_config(&self, scenario: Scenario) -> Option<&ScenarioConfig> {
        self.scenarios.iter().find(|c| c.scenario == scenario)
    }
}

/// Resolves the run root: explicit override, then the environment
/// variable, then the config, then `./runs`.
pub fn run_root(config: &ExperimentConfig, cli_override: Option<&Path>) -> PathBuf {
    if let Some(p) = cli_override {
        return p.to_path_buf();
    }
    if let Ok(p) = std::env::var(RUN_ROOT_ENV) {
        if !p.is_empty() {
            return PathBuf::from(p);
        }
    }
    config
        .run_root
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Pipeline stages, in dependency order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Phantom,
    GanPairedP2H,
    GanPairedH2P,
    GanUnpaired,
    ClsTrain(Scenario),
    ClsPredict(Scenario),
    Eval,
}

impl Stage {
    pub fn name(&self) -> String {
        match self {
            Stage::Phantom => "phantom".into(),
            Stage::GanPairedP2H => "gan-paired-p2h".into(),
            Stage::GanPairedH2P => "gan-paired-h2p".into(),
            Stage::GanUnpaired => "gan-unpaired".into(),
            Stage::ClsTrain(s) => format!("cls-train-{s}"),
            Stage::ClsPredict(s) => format!("cls-predict-{s}"),
            Stage::Eval => "eval".into(),
        }
    }

    pub fn parse(name: &str) -> Result<Stage> {
        let stage = match name {
            "phantom" => Stage::Phantom,
            "gan-paired-p2h" => Stage::GanPairedP2H,
            "gan-paired-h2p" => Stage::GanPairedH2P,
            "gan-unpaired" => Stage::GanUnpaired,
            "eval" => Stage::Eval,
            other => {
                if let Some(s) = other.strip_prefix("cls-train-") {
                    Stage::ClsTrain(s.parse()?)
                } else if let Some(s) = other.strip_prefix("cls-predict-") {
                    Stage::ClsPredict(s.parse()?)
                } else {
                    return Err(Error::Config(format!("unknown stage `{other}`")));
                }
            }
        };
        Ok(stage)
    }

    /// CLI subcommand that produces this stage's outputs.
    pub fn producer(&self) -> &'static str {
        match self {
            Stage::Phantom => "phantom",
            Stage::GanPairedP2H | Stage::GanPairedH2P => "gan-train-paired",
            Stage::GanUnpaired => "gan-train-unpaired",
            Stage::ClsTrain(_) => "cls-train",
            Stage::ClsPredict(_) => "cls-predict",
            Stage::Eval => "eval-sweep",
        }
    }

    pub fn dir(&self, run_dir: &Path) -> PathBuf {
        match self {
            Stage::Phantom => run_dir.join("phantom"),
            Stage::GanPairedP2H => run_dir.join("gan/paired_p2h"),
            Stage::GanPairedH2P => run_dir.join("gan/paired_h2p"),
            Stage::GanUnpaired => run_dir.join("gan/unpaired"),
            Stage::ClsTrain(s) => run_dir.join("cls").join(s.as_str()),
            Stage::ClsPredict(s) => run_dir.join("pred").join(s.as_str()),
            Stage::Eval => run_dir.join("eval"),
        }
    }

    fn gan_dependency(scenario: Scenario) -> Option<Stage> {
        match scenario {
            Scenario::Baseline => None,
            Scenario::SyntheticPaired => Some(Stage::GanPairedP2H),
            Scenario::SyntheticUnpaired => Some(Stage::GanUnpaired),
            Scenario::GanFeatures => Some(Stage::GanPairedH2P),
        }
    }

    pub fn deps(&self, scenarios: &[Scenario]) -> Vec<Stage> {
        match self {
            Stage::Phantom => vec![],
            Stage::GanPairedP2H | Stage::GanPairedH2P | Stage::GanUnpaired => {
                vec![Stage::Phantom]
            }
            Stage::ClsTrain(s) => {
                let mut deps = vec![Stage::Phantom];
                deps.extend(Stage::gan_dependency(*s));
                deps
            }
            Stage::ClsPredict(s) => {
                let mut deps = vec![Stage::ClsTrain(*s)];
                if *s == Scenario::GanFeatures {
                    deps.push(Stage::GanPairedH2P);
                }
                deps
            }
            Stage::Eval => scenarios.iter().map(|&s| Stage::ClsPredict(s)).collect(),
        }
    }

    /// All stages for the given scenario set, topologically ordered.
    pub fn schedule(scenarios: &[Scenario]) -> Vec<Stage> {
        let mut stages = vec![Stage::Phantom];
        let gans: Vec<Stage> = scenarios
            .iter()
            .filter_map(|&s| Stage::gan_dependency(s))
            .collect();
        for g in [Stage::GanPairedP2H, Stage::GanPairedH2P, Stage::GanUnpaired] {
            if gans.contains(&g) && !stages.contains(&g) {
                stages.push(g);
            }
        }
        for &s in scenarios {
            stages.push(Stage::ClsTrain(s));
        }
        for &s in scenarios {
            stages.push(Stage::ClsPredict(s));
        }
        stages.push(Stage::Eval);
        stages
    }
}

fn done_marker(stage_dir: &Path) -> PathBuf {
    stage_dir.join(".done")
}

fn classifier_epochs(cls_dir: &Path) -> Result<Vec<(u32, String)>> {
    let trace = TrainingTrace::load(cls_dir.join("trace.csv"))?;
    Ok(trace.checkpoints())
}

/// Runs one stage inside `run_dir`. Upstream stages must have completed
/// (their absence is an error naming the producing stage); existing valid
/// outputs are skipped unless `force` is set.
pub fn run_stage(
    stage: Stage,
    config: &ExperimentConfig,
    run_dir: &Path,
    force: bool,
) -> Result<Vec<PathBuf>> {
    let scenarios: Vec<Scenario> = config.scenarios.iter().map(|c| c.scenario).collect();
    for dep in stage.deps(&scenarios) {
        if !done_marker(&dep.dir(run_dir)).exists() {
            return Err(Error::MissingArtifact {
                stage: stage.name(),
                what: format!("outputs of stage `{}`", dep.name()),
                producer: dep.producer().to_string(),
            });
        }
    }

    let stage_dir = stage.dir(run_dir);
    if done_marker(&stage_dir).exists() {
        if !force {
            log::info!("stage {} already complete, skipping", stage.name());
            return Ok(vec![stage_dir]);
        }
        std::fs::remove_dir_all(&stage_dir)?;
    }
    std::fs::create_dir_all(&stage_dir)?;
    log::info!("running stage {}", stage.name());

    match stage {
        Stage::Phantom => {
            generate_corpus(
                &config.phantom.simulator,
                config.phantom.n_slides,
                config.phantom.patches_per_slide,
                &stage_dir,
            )?;
        }
        Stage::GanPairedP2H | Stage::GanPairedH2P => {
            let store = CorpusStore::open(Stage::Phantom.dir(run_dir))?;
            let (direction, tag) = if stage == Stage::GanPairedP2H {
                (
                    (crate::domain::StainDomain::Phh3, crate::domain::StainDomain::He),
                    "p2h",
                )
            } else {
                (
                    (crate::domain::StainDomain::He, crate::domain::StainDomain::Phh3),
                    "h2p",
                )
            };
            let mut cfg = config.gan.paired.clone();
            cfg.seed = derive_seed(cfg.seed, tag, 0);
            train_paired(&store, direction, &cfg, &stage_dir)?;
        }
        Stage::GanUnpaired => {
            let store = CorpusStore::open(Stage::Phantom.dir(run_dir))?;
            train_unpaired(&store, &config.gan.unpaired, &stage_dir)?;
        }
        Stage::ClsTrain(scenario) => {
            let store = CorpusStore::open(Stage::Phantom.dir(run_dir))?;
            let mut cfg = config
                .scenario_config(scenario)
                .cloned()
                .ok_or_else(|| {
                    Error::Config(format!("scenario `{scenario}` not in configuration"))
                })?;
            cfg.source_checkpoint = gan_checkpoint_path(scenario, run_dir);
            let training_set = build_training_set(&store, &cfg)?;
            train_classifier(&training_set, &cfg, &stage_dir)?;
        }
        Stage::ClsPredict(scenario) => {
            let store = CorpusStore::open(Stage::Phantom.dir(run_dir))?;
            let gan = match gan_checkpoint_path(scenario, run_dir) {
                Some(path) if scenario == Scenario::GanFeatures => {
                    Some(load_generator(path)?)
                }
                _ => None,
            };
            let eval_set = build_eval_set(&store, scenario, Split::Test, gan.as_ref())?;
            let cls_dir = Stage::ClsTrain(scenario).dir(run_dir);
            for (epoch, ckpt_name) in classifier_epochs(&cls_dir)? {
                let handle = load_classifier(cls_dir.join(&ckpt_name))?;
                let probs = predict(&handle, &eval_set.inputs)?;
                let rows: Vec<PredictionRow> = eval_set
                    .ids
                    .iter()
                    .zip(probs.iter())
                    .zip(eval_set.labels.iter())
                    .map(|((id, &probability), &label)| PredictionRow {
                        id: id.clone(),
                        probability,
                        label,
                    })
                    .collect();
                write_predictions(stage_dir.join(format!("epoch_{epoch:03}.csv")), &rows)?;
            }
        }
        Stage::Eval => {
            let grid = config.eval.thresholds.to_grid()?;
            let mut reports = Vec::new();
            for &scenario in &scenarios {
                let pred_dir = Stage::ClsPredict(scenario).dir(run_dir);
                let cls_dir = Stage::ClsTrain(scenario).dir(run_dir);
                let epochs: Vec<(u32, PathBuf)> = match classifier_epochs(&cls_dir) {
                    Ok(list) => list
                        .into_iter()
                        .map(|(e, _)| (e, pred_dir.join(format!("epoch_{e:03}.csv"))))
                        .collect(),
                    Err(_) => Vec::new(),
                };
                let report = sweep(scenario.as_str(), &epochs, &grid)?;
                report.save(stage_dir.join(format!("{scenario}.json")))?;
                if let Ok(trace) = TrainingTrace::load(cls_dir.join("trace.csv")) {
                    crate::evalkit::render_trace_plot(
                        &trace,
                        stage_dir.join(format!("{scenario}_training.png")),
                    )?;
                }
                reports.push(report);
            }
            render_comparison(&reports, &stage_dir)?;
        }
    }

    std::fs::write(done_marker(&stage_dir), stage.name())?;
    Ok(vec![stage_dir])
}

use crate::mitoclass::train_classifier;

fn gan_checkpoint_path(scenario: Scenario, run_dir: &Path) -> Option<PathBuf> {
    match scenario {
        Scenario::Baseline => None,
        Scenario::SyntheticPaired => {
            Some(Stage::GanPairedP2H.dir(run_dir).join("generator_final.ckpt"))
        }
        Scenario::SyntheticUnpaired => {
            Some(Stage::GanUnpaired.dir(run_dir).join("g_phh32he_final.ckpt"))
        }
        Scenario::GanFeatures => {
            Some(Stage::GanPairedH2P.dir(run_dir).join("generator_final.ckpt"))
        }
    }
}

/// Outcome of a full protocol run.
#[derive(Debug)]
pub struct ReproduceReport {
    pub run_dir: PathBuf,
    pub split_counts: (usize, usize, usize),
    pub rows: Vec<ComparisonRow>,
    pub reports: Vec<EvalReport>,
}

/// Prepares the content-addressed run directory, writing the resolved
/// configuration and provenance if new. Returns `(run_dir, resolved)`.
pub fn prepare_run_dir(
    config: &ExperimentConfig,
    root: &Path,
) -> Result<(PathBuf, ExperimentConfig)> {
    let resolved = config.resolve();
    let digest = resolved.digest()?;
    let run_dir = root.join(format!("run_{digest}"));
    std::fs::create_dir_all(&run_dir)?;
    let config_path = run_dir.join("config.resolved.toml");
    if !config_path.exists() {
        std::fs::write(&config_path, resolved.to_toml()?)?;
        let provenance = serde_json::json!({
            "version": env!("CARGO_PKG_VERSION"),
            "config_digest": digest,
        });
        std::fs::write(
            run_dir.join("provenance.json"),
            serde_json::to_string_pretty(&provenance)?,
        )?;
    }
    Ok((run_dir, resolved))
}

/// Executes the full split protocol (GAN training slides / classifier
/// slides / held-out test slides) across every configured scenario and
/// renders the comparison. Requires the 18-slide phantom corpus layout.
pub fn reproduce_protocol(
    config: &ExperimentConfig,
    root: &Path,
    force: bool,
) -> Result<ReproduceReport> {
    if config.phantom.n_slides != 18 {
        return Err(Error::Precondition(format!(
            "the reproduction protocol requires 18 phantom slides, got {}",
            config.phantom.n_slides
        )));
    }
    let (run_dir, resolved) = prepare_run_dir(config, root)?;
    let split_counts = slide_split_counts(resolved.phantom.n_slides)?;
    log::info!(
        "protocol split: {} GAN-train / {} classifier-train / {} test slides",
        split_counts.0,
        split_counts.1,
        split_counts.2
    );

    let scenarios: Vec<Scenario> = resolved.scenarios.iter().map(|c| c.scenario).collect();
    for stage in Stage::schedule(&scenarios) {
        run_stage(stage, &resolved, &run_dir, force)?;
    }

    let eval_dir = Stage::Eval.dir(&run_dir);
    let mut reports = Vec::new();
    for &s in &scenarios {
        reports.push(EvalReport::load(eval_dir.join(format!("{s}.json")))?);
    }
    let (_, rows) = render_comparison(&reports, &eval_dir)?;
    Ok(ReproduceReport {
        run_dir,
        split_counts,
        rows,
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_roundtrips_through_toml() {
        let config = ExperimentConfig::default();
        let text = config.to_toml().unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.digest().unwrap(), config.digest().unwrap());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<ExperimentConfig>("bogus_key = 1");
        assert!(err.is_err());
    }

    #[test]
    fn resolution_is_deterministic_and_seed_sensitive() {
        let config = ExperimentConfig::default();
        assert_eq!(
            config.resolve().digest().unwrap(),
            config.resolve().digest().unwrap()
        );
        let mut other = ExperimentConfig::default();
        other.seed = 1;
        assert_ne!(
            config.resolve().digest().unwrap(),
            other.resolve().digest().unwrap()
        );
    }

    #[test]
    fn threshold_grid_contains_the_pinned_point() {
        let grid = ThresholdGridSpec::default().to_grid().unwrap();
        assert!(grid.iter().any(|&t| (t - 0.97).abs() < 1e-12));
        assert!(grid.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(grid.len(), 50);
    }

    #[test]
    fn stage_names_roundtrip() {
        let scenarios = Scenario::ALL.to_vec();
        for stage in Stage::schedule(&scenarios) {
            assert_eq!(Stage::parse(&stage.name()).unwrap(), stage);
        }
    }

    #[test]
    fn eval_without_predictions_names_the_producer() {
        let dir = tempfile::tempdir().unwrap();
        let config = ExperimentConfig::default();
        let err = run_stage(Stage::Eval, &config, dir.path(), false).unwrap_err();
        match err {
            Error::MissingArtifact { producer, .. } => {
                assert_eq!(producer, "cls-predict");
            }
            other => panic!("expected MissingArtifact, got {other}"),
        }
    }

    #[test]
    fn reproduce_requires_eighteen_slides() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = ExperimentConfig::default();
        config.phantom.n_slides = 6;
        assert!(matches!(
            reproduce_protocol(&config, dir.path(), false),
            Err(Error::Precondition(_))
        ));
    }
}
