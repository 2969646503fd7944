//! `stainbridge` — stain translation and mitosis detection pipeline.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use stainbridge_core::domain::{
    load_patch_pixels, save_patch_pixels, CorpusStore, DatasetManifest, Patch, SampleRecord,
    Split, StainDomain,
};
use stainbridge_core::evalkit::{
    render_comparison, sweep, write_predictions, EvalReport, PredictionRow,
};
use stainbridge_core::ganlab::{
    extract_features, load_generator, save_feature_maps, train_paired, train_unpaired, translate,
};
use stainbridge_core::mitoclass::{
    build_eval_set, build_training_set, load_classifier, predict, train_classifier, Scenario,
};
use stainbridge_core::phantom::generate_corpus;
use stainbridge_core::pipeline::{
    prepare_run_dir, reproduce_protocol, run_root, run_stage, ExperimentConfig, Stage,
};
use stainbridge_core::stainprep::{
    color_deconvolve, detect_negative_candidates, detect_positive_candidates, rebalance,
    CandidateSet, StainMatrix,
};

#[derive(Parser)]
#[command(
    name = "stainbridge",
    version,
    about = "Stain translation and mitosis detection on histopathology patches"
)]
struct Cli {
    /// Experiment configuration file (TOML); defaults apply when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the experiment's global seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Recompute outputs even when they already exist
    #[arg(long, global = true)]
    force: bool,

    /// Run-root directory (or set STAINBRIDGE_RUN_ROOT)
    #[arg(long, global = true)]
    run_root: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StainArg {
    He,
    Phh3,
}

impl From<StainArg> for StainDomain {
    fn from(s: StainArg) -> Self {
        match s {
            StainArg::He => StainDomain::He,
            StainArg::Phh3 => StainDomain::Phh3,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    GanTrain,
    ClsTrain,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::GanTrain => Split::GanTrain,
            SplitArg::ClsTrain => Split::ClsTrain,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Positive,
    Negative,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Baseline,
    SyntheticPaired,
    SyntheticUnpaired,
    GanFeatures,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::Baseline => Scenario::Baseline,
            ScenarioArg::SyntheticPaired => Scenario::SyntheticPaired,
            ScenarioArg::SyntheticUnpaired => Scenario::SyntheticUnpaired,
            ScenarioArg::GanFeatures => Scenario::GanFeatures,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom corpus (aligned pseudo-H&E / pseudo-PHH3 pairs)
    Phantom {
        /// Output corpus directory
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_slides: Option<usize>,
        #[arg(long)]
        patches_per_slide: Option<usize>,
        #[arg(long)]
        patch_size: Option<usize>,
        #[arg(long)]
        nuclei_min: Option<usize>,
        #[arg(long)]
        nuclei_max: Option<usize>,
        #[arg(long)]
        mitosis_rate: Option<f64>,
        #[arg(long)]
        noise_level: Option<f64>,
        /// Negatives per positive in the raw pool (60 = the nominal 1:60)
        #[arg(long)]
        imbalance_target: Option<f64>,
        /// Stain OD matrix as "h1,h2,h3;e1,e2,e3;d1,d2,d3"
        #[arg(long)]
        stain_matrix: Option<String>,
    },
    /// Color-deconvolve one patch image into H/E/DAB concentration maps
    Deconvolve {
        #[arg(long)]
        image: PathBuf,
        /// Output JSON (concentrations) plus per-channel preview PNGs
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect positive (PHH3/DAB) or negative (H&E/DoH) candidates
    Candidates {
        /// Corpus directory with manifest.jsonl
        #[arg(long)]
        root: PathBuf,
        #[arg(long, value_enum)]
        kind: KindArg,
        /// Output JSONL, one line per patch
        #[arg(long)]
        out: PathBuf,
    },
    /// Rebalance a split's records (keep positives, subsample negatives)
    Rebalance {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, value_enum, default_value = "cls-train")]
        split: SplitArg,
        #[arg(long, value_enum, default_value = "he")]
        stain: StainArg,
        /// Output manifest (JSONL)
        #[arg(long)]
        out: PathBuf,
        /// Output per-record weights (CSV)
        #[arg(long)]
        weights: PathBuf,
    },
    /// Train the conditional (paired) translator
    GanTrainPaired {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, value_enum)]
        from: StainArg,
        #[arg(long, value_enum)]
        to: StainArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the cycle-consistent (unpaired) translators
    GanTrainUnpaired {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Translate a split's patches with a trained generator
    Translate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        root: PathBuf,
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract 25x25x256 deep-feature maps from real H&E patches
    ExtractFeatures {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        root: PathBuf,
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
        /// Output feature container (binary)
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a scenario classifier
    ClsTrain {
        #[arg(long, value_enum)]
        scenario: ScenarioArg,
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// GAN checkpoint for the synthetic/feature scenarios
        #[arg(long)]
        gan_checkpoint: Option<PathBuf>,
    },
    /// Emit a predictions file (id, probability, label) for a split
    ClsPredict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        scenario: ScenarioArg,
        #[arg(long)]
        root: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        gan_checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep the (epoch x threshold) grid over per-epoch prediction files
    EvalSweep {
        /// Directory containing epoch_XXX.csv prediction files
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        scenario: String,
        /// Output report (JSON)
        #[arg(long)]
        out: PathBuf,
    },
    /// Render report tables, curves, and plots
    EvalRender {
        /// Report JSON files (repeatable)
        #[arg(long = "report", required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a single pipeline stage inside the content-addressed run dir
    Run {
        /// Stage name (phantom, gan-paired-p2h, gan-paired-h2p,
        /// gan-unpaired, cls-train-<scenario>, cls-predict-<scenario>,
        /// eval)
        stage: String,
    },
    /// Execute the full 5/9/4 protocol across all configured scenarios
    Reproduce,
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn parse_stain_matrix(text: &str) -> anyhow::Result<StainMatrix> {
    let mut rows = [[0.0; 3]; 3];
    let parts: Vec<&str> = text.split(';').collect();
    if parts.len() != 3 {
        bail!("stain matrix needs 3 ';'-separated rows");
    }
    for (i, row) in parts.iter().enumerate() {
        let vals: Vec<&str> = row.split(',').collect();
        if vals.len() != 3 {
            bail!("stain row {i} needs 3 comma-separated values");
        }
        for (j, v) in vals.iter().enumerate() {
            rows[i][j] = v.trim().parse()?;
        }
    }
    Ok(StainMatrix::new(rows)?)
}

fn candidate_json(patch_ref: &str, set: &CandidateSet) -> serde_json::Value {
    serde_json::json!({
        "patch_ref": patch_ref,
        "detections": set
            .detections
            .iter()
            .map(|d| serde_json::json!({"row": d.center.0, "col": d.center.1, "score": d.score}))
            .collect::<Vec<_>>(),
    })
}

fn records_of(
    store: &CorpusStore,
    stain: StainDomain,
    split: Option<Split>,
) -> Vec<SampleRecord> {
    store
        .manifest()
        .records
        .iter()
        .filter(|r| r.stain == stain && split.map_or(true, |s| r.split == s))
        .cloned()
        .collect()
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let config = load_config(&cli)?;

    match &cli.command {
        Command::Phantom {
            out,
            n_slides,
            patches_per_slide,
            patch_size,
            nuclei_min,
            nuclei_max,
            mitosis_rate,
            noise_level,
            imbalance_target,
            stain_matrix,
        } => {
            let mut sim = config.phantom.simulator.clone();
            sim.seed = stainbridge_core::ganlab::derive_seed(config.seed, "stage.phantom", sim.seed);
            if let Some(v) = patch_size {
                sim.patch_size = *v;
            }
            if let Some(v) = nuclei_min {
                sim.nuclei_per_patch.0 = *v;
            }
            if let Some(v) = nuclei_max {
                sim.nuclei_per_patch.1 = *v;
            }
            if let Some(v) = mitosis_rate {
                sim.mitosis_rate = *v;
            }
            if let Some(v) = noise_level {
                sim.noise_level = *v;
            }
            if let Some(v) = imbalance_target {
                sim.imbalance_target = *v;
            }
            if let Some(text) = stain_matrix {
                sim.stain_od_matrix = parse_stain_matrix(text)?;
            }
            let n = n_slides.unwrap_or(config.phantom.n_slides);
            let pps = patches_per_slide.unwrap_or(config.phantom.patches_per_slide);
            let manifest = generate_corpus(&sim, n, pps, out)?;
            println!(
                "wrote {} records over {n} slides to {}",
                manifest.records.len(),
                out.display()
            );
        }
        Command::Deconvolve { image, out } => {
            let pixels = load_patch_pixels(image)?;
            let (h, w) = (pixels.shape()[0], pixels.shape()[1]);
            let patch = Patch::new(pixels, StainDomain::Phh3, "cli", (0, 0))?;
            let conc = color_deconvolve(&patch, &config.stainprep.stain_matrix.clone());
            let body = serde_json::json!({
                "shape": [h, w, 3],
                "channels": ["hematoxylin", "eosin", "dab"],
                "data": conc.as_slice().expect("standard layout"),
            });
            std::fs::write(out, serde_json::to_vec(&body)?)?;
            for (c, name) in ["hematoxylin", "eosin", "dab"].iter().enumerate() {
                let max = conc
                    .slice(ndarray::s![.., .., c])
                    .iter()
                    .cloned()
                    .fold(1e-9f64, f64::max);
                let preview = ndarray::Array3::from_shape_fn((h, w, 3), |(y, x, _)| {
                    (conc[[y, x, c]] / max).clamp(0.0, 1.0)
                });
                let path = out.with_extension(format!("{name}.png"));
                save_patch_pixels(&path, &preview)?;
            }
            println!("wrote concentrations to {}", out.display());
        }
        Command::Candidates { root, kind, out } => {
            let store = CorpusStore::open(root)?;
            let params = &config.stainprep;
            let stains = config.stainprep.stain_matrix.clone();
            let mut lines = Vec::new();
            match kind {
                KindArg::Positive => {
                    for record in &records_of(&store, StainDomain::Phh3, None) {
                        let patch = store.load_patch(record)?;
                        let set = detect_positive_candidates(
                            &patch,
                            &stains,
                            params.dab_threshold,
                            params.min_area,
                            params.min_separation,
                        )?;
                        lines.push(candidate_json(&record.patch_ref, &set));
                    }
                }
                KindArg::Negative => {
                    for record in &records_of(&store, StainDomain::He, None) {
                        let patch = store.load_patch(record)?;
                        let positives = match record.paired_ref.as_deref() {
                            Some(_) => {
                                let phh3 = store.load_paired_patch(record)?;
                                detect_positive_candidates(
                                    &phh3,
                                    &stains,
                                    params.dab_threshold,
                                    params.min_area,
                                    params.min_separation,
                                )?
                            }
                            None => CandidateSet::empty(
                                record.source_id.clone(),
                                stainbridge_core::stainprep::CandidateKind::PositivePhh3,
                            ),
                        };
                        let set = detect_negative_candidates(
                            &patch,
                            &positives,
                            &params.doh_sigmas,
                            params.doh_threshold,
                            params.exclusion_radius,
                            params.min_separation,
                        )?;
                        lines.push(candidate_json(&record.patch_ref, &set));
                    }
                }
            }
            let text: String = lines
                .iter()
                .map(|l| format!("{l}\n"))
                .collect();
            std::fs::write(out, text)?;
            println!("wrote {} candidate sets to {}", lines.len(), out.display());
        }
        Command::Rebalance {
            root,
            split,
            stain,
            out,
            weights,
        } => {
            let store = CorpusStore::open(root)?;
            let records = records_of(&store, (*stain).into(), Some((*split).into()));
            let ratio = config
                .scenarios
                .first()
                .map(|s| s.ratio.clone())
                .unwrap_or_default();
            let (selected, w) = rebalance(&records, &ratio, config.seed)?;
            DatasetManifest::new(selected.clone()).save(out)?;
            let mut csv = String::from("patch_ref,weight\n");
            for (r, w) in selected.iter().zip(w.iter()) {
                csv.push_str(&format!("{},{w}\n", r.patch_ref));
            }
            std::fs::write(weights, csv)?;
            println!("kept {} records", selected.len());
        }
        Command::GanTrainPaired { root, from, to, out } => {
            let store = CorpusStore::open(root)?;
            let (_, trace) = train_paired(
                &store,
                ((*from).into(), (*to).into()),
                &config.gan.paired,
                out,
            )?;
            println!(
                "trained {} epochs; final loss {:.4}",
                trace.records.len(),
                trace.records.last().map(|r| r.loss).unwrap_or(f64::NAN)
            );
        }
        Command::GanTrainUnpaired { root, out } => {
            let store = CorpusStore::open(root)?;
            let (_, _, trace) = train_unpaired(&store, &config.gan.unpaired, out)?;
            println!(
                "trained {} epochs; final cycle {:.4}",
                trace.records.len(),
                trace
                    .records
                    .last()
                    .map(|r| r.recon_loss)
                    .unwrap_or(f64::NAN)
            );
        }
        Command::Translate {
            checkpoint,
            root,
            split,
            out,
        } => {
            let store = CorpusStore::open(root)?;
            let handle = load_generator(checkpoint)?;
            let (from, to) = handle.direction()?;
            let records = records_of(&store, from, split.map(Into::into));
            let patches: Vec<Patch> = records
                .iter()
                .map(|r| store.load_patch(r))
                .collect::<stainbridge_core::Result<_>>()?;
            let translated = translate(&handle, &patches)?;
            std::fs::create_dir_all(out.join("patches"))?;
            let mut out_records = Vec::new();
            for (record, patch) in records.iter().zip(&translated) {
                let name = Path::new(&record.patch_ref)
                    .file_name()
                    .map(|f| f.to_string_lossy().to_string())
                    .unwrap_or_else(|| "patch.png".into());
                let rel = format!("patches/{name}");
                save_patch_pixels(out.join(&rel), &patch.pixels)?;
                let mut r = record.clone();
                r.patch_ref = rel;
                r.stain = to;
                r.paired_ref = None;
                out_records.push(r);
            }
            DatasetManifest::new(out_records).save(out.join("manifest.jsonl"))?;
            println!("translated {} patches {from}->{to}", translated.len());
        }
        Command::ExtractFeatures {
            checkpoint,
            root,
            split,
            out,
        } => {
            let store = CorpusStore::open(root)?;
            let handle = load_generator(checkpoint)?;
            let records = records_of(&store, StainDomain::He, split.map(Into::into));
            let patches: Vec<Patch> = records
                .iter()
                .map(|r| store.load_patch(r))
                .collect::<stainbridge_core::Result<_>>()?;
            let maps = extract_features(&handle, &patches)?;
            save_feature_maps(out, &maps)?;
            println!("extracted {} feature maps to {}", maps.len(), out.display());
        }
        Command::ClsTrain {
            scenario,
            root,
            out,
            gan_checkpoint,
        } => {
            let store = CorpusStore::open(root)?;
            let scenario: Scenario = (*scenario).into();
            let mut cfg = config
                .scenario_config(scenario)
                .cloned()
                .unwrap_or_else(|| stainbridge_core::mitoclass::ScenarioConfig {
                    scenario,
                    ..Default::default()
                });
            cfg.scenario = scenario;
            cfg.source_checkpoint = gan_checkpoint.clone();
            let set = build_training_set(&store, &cfg)?;
            let (_, trace) = train_classifier(&set, &cfg, out)?;
            println!(
                "trained {} epochs; final accuracy {:.3}",
                trace.records.len(),
                trace
                    .records
                    .last()
                    .and_then(|r| r.accuracy)
                    .unwrap_or(f64::NAN)
            );
        }
        Command::ClsPredict {
            checkpoint,
            scenario,
            root,
            split,
            gan_checkpoint,
            out,
        } => {
            let store = CorpusStore::open(root)?;
            let scenario: Scenario = (*scenario).into();
            let gan = match gan_checkpoint {
                Some(path) => Some(load_generator(path)?),
                None => None,
            };
            let eval = build_eval_set(&store, scenario, (*split).into(), gan.as_ref())?;
            let handle = load_classifier(checkpoint)?;
            let probs = predict(&handle, &eval.inputs)?;
            let rows: Vec<PredictionRow> = eval
                .ids
                .iter()
                .zip(&probs)
                .zip(&eval.labels)
                .map(|((id, &probability), &label)| PredictionRow {
                    id: id.clone(),
                    probability,
                    label,
                })
                .collect();
            write_predictions(out, &rows)?;
            println!("wrote {} predictions to {}", rows.len(), out.display());
        }
        Command::EvalSweep { pred, scenario, out } => {
            let mut files = Vec::new();
            for entry in std::fs::read_dir(pred)? {
                let entry = entry?;
                let name = entry.file_name().to_string_lossy().to_string();
                if let Some(num) = name
                    .strip_prefix("epoch_")
                    .and_then(|s| s.strip_suffix(".csv"))
                {
                    files.push((num.parse::<u32>()?, entry.path()));
                }
            }
            files.sort_by_key(|(e, _)| *e);
            if files.is_empty() {
                bail!(
                    "no epoch_XXX.csv prediction files in {} (produce them with `cls-predict`)",
                    pred.display()
                );
            }
            let grid = config.eval.thresholds.to_grid()?;
            let report = sweep(scenario, &files, &grid)?;
            report.save(out)?;
            let best = report.best_cell();
            println!(
                "swept {} epochs x {} thresholds; best F1 {:.4}",
                report.epochs.len(),
                report.thresholds.len(),
                best.map(|c| c.metrics.f1).unwrap_or(f64::NAN)
            );
        }
        Command::EvalRender { reports, out } => {
            let mut loaded = Vec::new();
            for path in reports {
                loaded.push(EvalReport::load(path)?);
            }
            let (written, rows) = render_comparison(&loaded, out)?;
            for row in &rows {
                if row.present {
                    println!(
                        "{}: best F1 {:.4} (epoch {}, threshold {:.2})",
                        row.scenario,
                        row.best_f1.unwrap_or(0.0),
                        row.best_epoch.unwrap_or(0),
                        row.best_threshold.unwrap_or(0.0)
                    );
                } else {
                    println!("{}: absent", row.scenario);
                }
            }
            println!("wrote {} files to {}", written.len(), out.display());
        }
        Command::Run { stage } => {
            let stage = Stage::parse(stage)?;
            let root = run_root(&config, cli.run_root.as_deref());
            let (run_dir, resolved) = prepare_run_dir(&config, &root)?;
            run_stage(stage, &resolved, &run_dir, cli.force)?;
            println!("stage {} complete in {}", stage.name(), run_dir.display());
        }
        Command::Reproduce => {
            let root = run_root(&config, cli.run_root.as_deref());
            let report = reproduce_protocol(&config, &root, cli.force)?;
            println!(
                "split: {} GAN-train / {} classifier-train / {} test slides",
                report.split_counts.0, report.split_counts.1, report.split_counts.2
            );
            for row in &report.rows {
                if row.present {
                    println!(
                        "{}: best F1 {:.4} (epoch {}, threshold {:.2})",
                        row.scenario,
                        row.best_f1.unwrap_or(0.0),
                        row.best_epoch.unwrap_or(0),
                        row.best_threshold.unwrap_or(0.0)
                    );
                } else {
                    println!("{}: absent", row.scenario);
                }
            }
            println!("artifacts in {}", report.run_dir.display());
        }
    }

    Ok(())
}
