//! Command-line front end: prepare, synth, train, evaluate, ablate,
//! report.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    clean_text, compute_stats, exclude_incomplete, load_manifest, save_manifest, split_dataset,
    translate_article, DatasetManifest, DatasetSplit, IdentityTranslator, Label, Language,
    NewsArticle,
};
use crate::encoder::EmbeddingCache;
use crate::error::{Error, Result};
use crate::eval::{
    compute_metrics, per_language_breakdown, run_ablation_suite, AblationSpec, EvaluationReport,
    LabeledReport,
};
use crate::features::{extract_bundles, EncoderSet};
use crate::fusion::FeatureBundle;
use crate::imageproc::{load_and_preprocess, load_tensor, save_tensor, ImageTensor};
use crate::parallel::try_map_items;
use crate::synthetic::write_synthetic_corpus;
use crate::train::{evaluate_on_split, load_checkpoint, save_checkpoint, train, TrainConfig};

pub const CACHE_DIR_ENV: &str = "MMFND_CACHE_DIR";
pub const RUN_CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Parser, Debug)]
#[command(
    name = "mmfnd",
    version,
    about = "Multilingual multimodal news classification experiment kit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Clean and validate a raw manifest into a prepared dataset
    /// directory with precomputed image tensors.
    Prepare(PrepareArgs),
    /// Generate a deterministic synthetic corpus.
    Synth(SynthArgs),
    /// Train the fusion classifier on a train/test split.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write metric reports.
    Evaluate(EvaluateArgs),
    /// Run an ablation suite, retraining once per row.
    Ablate(AblateArgs),
    /// Render charts from a previously written report JSON.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    /// Raw JSONL manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    pub force: bool,
    /// Disable data-parallel processing.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug, Clone)]
pub struct CommonRunArgs {
    /// Prepared (or raw) JSONL manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Encoder backend set.
    #[arg(long, default_value = "stub")]
    pub backend: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Train fraction of the split.
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonRunArgs,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// Restrict evaluation to the test ids of this split JSON.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonRunArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Modality,
    Multimodal,
    Caption,
}

impl Suite {
    fn spec(self) -> AblationSpec {
        match self {
            Suite::Modality => AblationSpec::modality(),
            Suite::Multimodal => AblationSpec::multimodal(),
            Suite::Caption => AblationSpec::caption(),
        }
    }
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub suite: Suite,
    #[command(flatten)]
    pub common: CommonRunArgs,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Report JSON written by `evaluate` or `ablate`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

/// On-disk run configuration. Command-line flags override file
/// values, which override these defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub split_ratio: f64,
    pub split_seed: u64,
    pub parallel: bool,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: RUN_CONFIG_SCHEMA_VERSION,
            split_ratio: 0.8,
            split_seed: 42,
            parallel: true,
            train: TrainConfig::default(),
        }
    }
}

fn load_run_config(path: Option<&Path>) -> Result<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config: RunConfig = toml::from_str(&raw)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if config.schema_version != RUN_CONFIG_SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "{}: unsupported config schema_version {}",
            path.display(),
            config.schema_version
        )));
    }
    Ok(config)
}

fn resolve_config(args: &CommonRunArgs) -> Result<RunConfig> {
    let mut config = load_run_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.train.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        config.train.epochs = epochs;
    }
    if let Some(batch_size) = args.batch_size {
        config.train.batch_size = batch_size;
    }
    if let Some(lr) = args.learning_rate {
        config.train.learning_rate = lr;
    }
    if let Some(ratio) = args.ratio {
        config.split_ratio = ratio;
    }
    if args.sequential {
        config.parallel = false;
    }
    config.train.validate()?;
    Ok(config)
}

fn encoder_set(backend: &str) -> Result<EncoderSet> {
    match backend {
        "stub" => Ok(EncoderSet::stub()),
        other => Err(Error::Config(format!(
            "unknown encoder backend '{other}' (available: stub)"
        ))),
    }
}

/// Refuse to write into a non-empty directory unless forced.
fn ensure_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(Error::Config(format!(
                "output directory {} exists and is not empty; pass --force to reuse it",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn cache_dir(out: &Path) -> PathBuf {
    match std::env::var_os(CACHE_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => out.join("cache"),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn load_image(manifest: &DatasetManifest, article: &NewsArticle) -> Result<Option<ImageTensor>> {
    let Some(path) = manifest.image_path(article) else {
        return Ok(None);
    };
    let tensor = if path.extension().is_some_and(|e| e == "t224") {
        load_tensor(&path)?
    } else {
        load_and_preprocess(&path, Some(&article.id))?
    };
    Ok(Some(tensor))
}

fn load_images(manifest: &DatasetManifest, parallel: bool) -> Result<Vec<Option<ImageTensor>>> {
    try_map_items(&manifest.records, parallel, |a| load_image(manifest, a))
}

fn run_prepare(args: &PrepareArgs) -> Result<()> {
    ensure_out_dir(&args.out, args.force)?;
    let raw = load_manifest(&args.manifest)?;
    let parallel = !args.sequential;

    let translator = IdentityTranslator;
    let cleaned: Vec<NewsArticle> = raw
        .records
        .iter()
        .map(|rec| {
            let mut rec = rec.clone();
            rec.text = clean_text(&rec.text);
            rec.text_en = rec.text_en.as_deref().map(clean_text);
            translate_article(&rec, &translator)
        })
        .collect::<Result<_>>()?;
    let cleaned = DatasetManifest {
        records: cleaned,
        root_dir: raw.root_dir.clone(),
        schema_version: raw.schema_version,
    };

    let (kept, dropped) = exclude_incomplete(&cleaned);
    log::info!("kept {} records, dropped {}", kept.records.len(), dropped.len());

    let images_dir = args.out.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    let tensors = load_images(&kept, parallel)?;
    let mut prepared_records = Vec::with_capacity(kept.records.len());
    for (rec, tensor) in kept.records.iter().zip(tensors) {
        let tensor = tensor.expect("exclude_incomplete kept only decodable images");
        let rel = format!("images/{}.t224", rec.id);
        save_tensor(&tensor, args.out.join(&rel))?;
        let mut rec = rec.clone();
        rec.image_ref = Some(rel);
        prepared_records.push(rec);
    }
    let prepared = DatasetManifest {
        records: prepared_records,
        root_dir: args.out.clone(),
        schema_version: kept.schema_version,
    };
    save_manifest(&prepared, args.out.join("manifest.jsonl"))?;
    write_json(&args.out.join("dropped.json"), &dropped)?;
    write_json(&args.out.join("stats.json"), &compute_stats(&prepared))?;
    Ok(())
}

struct SplitData {
    train_bundles: Vec<FeatureBundle>,
    train_labels: Vec<Label>,
    test_bundles: Vec<FeatureBundle>,
    test_labels: Vec<Label>,
    split: DatasetSplit,
}

fn index_by_id<'a>(
    manifest: &'a DatasetManifest,
    ids: &[String],
    what: &str,
) -> Result<Vec<&'a NewsArticle>> {
    let by_id: HashMap<&str, &NewsArticle> = manifest
        .records
        .iter()
        .map(|r| (r.id.as_str(), r))
        .collect();
    ids.iter()
        .map(|id| {
            by_id.get(id.as_str()).copied().ok_or_else(|| {
                Error::Eval(format!("{what} id '{id}' not present in manifest"))
            })
        })
        .collect()
}

fn extract_split(
    manifest: &DatasetManifest,
    config: &RunConfig,
    encoders: &EncoderSet,
    cache: &EmbeddingCache,
) -> Result<SplitData> {
    let split = split_dataset(manifest, config.split_ratio, config.split_seed)?;
    let train_articles = index_by_id(manifest, &split.train_ids, "train")?;
    let test_articles = index_by_id(manifest, &split.test_ids, "test")?;

    let bundles_for = |articles: &[&NewsArticle]| -> Result<Vec<FeatureBundle>> {
        let owned: Vec<NewsArticle> = articles.iter().map(|a| (*a).clone()).collect();
        let images = load_images(
            &DatasetManifest {
                records: owned.clone(),
                root_dir: manifest.root_dir.clone(),
                schema_version: manifest.schema_version,
            },
            config.parallel,
        )?;
        extract_bundles(
            &owned,
            &images,
            encoders,
            config.train.mask,
            Some(cache),
            config.parallel,
        )
    };
    let train_bundles = bundles_for(&train_articles)?;
    let test_bundles = bundles_for(&test_articles)?;
    Ok(SplitData {
        train_bundles,
        train_labels: train_articles.iter().map(|a| a.label).collect(),
        test_bundles,
        test_labels: test_articles.iter().map(|a| a.label).collect(),
        split,
    })
}

fn run_train(args: &TrainArgs) -> Result<()> {
    let common = &args.common;
    ensure_out_dir(&common.out, common.force)?;
    let config = resolve_config(common)?;
    let encoders = encoder_set(&common.backend)?;
    let manifest = load_manifest(&common.manifest)?;
    let cache = EmbeddingCache::new(cache_dir(&common.out))?;

    let data = extract_split(&manifest, &config, &encoders, &cache)?;
    let (checkpoint, log) = train(&data.train_bundles, &data.train_labels, &config.train)?;
    if let Some(reason) = &log.aborted {
        return Err(Error::Numerical(format!("training aborted: {reason}")));
    }

    save_checkpoint(&checkpoint, common.out.join("model.ckpt"))?;
    let log_path = common.out.join("train_log.csv");
    std::fs::write(&log_path, log.to_csv()).map_err(|e| Error::io(&log_path, e))?;
    write_json(&common.out.join("split.json"), &data.split)?;
    write_json(&common.out.join("run_config.json"), &config)?;

    // quick holdout readout for the console
    let predictions = evaluate_on_split(&checkpoint, &data.test_bundles)?;
    let predicted: Vec<Label> = predictions.iter().map(|p| p.label).collect();
    let metrics = compute_metrics(&predicted, &data.test_labels)?;
    println!(
        "trained {} epochs; holdout accuracy {:.3} on {} records",
        checkpoint.epoch, metrics.accuracy, metrics.support
    );
    Ok(())
}

fn run_evaluate(args: &EvaluateArgs) -> Result<()> {
    let common = &args.common;
    ensure_out_dir(&common.out, common.force)?;
    let config = resolve_config(common)?;
    let encoders = encoder_set(&common.backend)?;
    let manifest = load_manifest(&common.manifest)?;
    let checkpoint = load_checkpoint(&args.model)?;
    let cache = EmbeddingCache::new(cache_dir(&common.out))?;

    let articles: Vec<&NewsArticle> = match &args.split {
        Some(split_path) => {
            let raw = std::fs::read_to_string(split_path).map_err(|e| Error::io(split_path, e))?;
            let split: DatasetSplit = serde_json::from_str(&raw)?;
            index_by_id(&manifest, &split.test_ids, "test")?
        }
        None => manifest.records.iter().collect(),
    };
    let owned: Vec<NewsArticle> = articles.iter().map(|a| (*a).clone()).collect();
    let subset = DatasetManifest {
        records: owned.clone(),
        root_dir: manifest.root_dir.clone(),
        schema_version: manifest.schema_version,
    };
    let images = load_images(&subset, config.parallel)?;
    let bundles = extract_bundles(
        &owned,
        &images,
        &encoders,
        checkpoint.config.mask,
        Some(&cache),
        config.parallel,
    )?;
    let predictions = evaluate_on_split(&checkpoint, &bundles)?;
    let predicted: Vec<Label> = predictions.iter().map(|p| p.label).collect();
    let actual: Vec<Label> = owned.iter().map(|a| a.label).collect();
    let languages: Vec<Language> = owned.iter().map(|a| a.language).collect();

    let mut report = EvaluationReport::new("evaluation", checkpoint.config.clone());
    report.rows.push(LabeledReport {
        label: "model".into(),
        report: compute_metrics(&predicted, &actual)?,
    });
    report.per_language = per_language_breakdown(&languages, &predicted, &actual)?;

    write_json(&common.out.join("report.json"), &report)?;
    let csv_path = common.out.join("report.csv");
    std::fs::write(&csv_path, report.to_csv()).map_err(|e| Error::io(&csv_path, e))?;
    crate::plot::render_report_charts(&report, &common.out)?;
    println!("{}", report.to_csv().trim_end());
    Ok(())
}

fn run_ablate(args: &AblateArgs) -> Result<()> {
    let common = &args.common;
    ensure_out_dir(&common.out, common.force)?;
    let config = resolve_config(common)?;
    let encoders = encoder_set(&common.backend)?;
    let manifest = load_manifest(&common.manifest)?;
    let cache = EmbeddingCache::new(cache_dir(&common.out))?;

    // extract with every pathway enabled so each row can re-mask
    let mut full_config = config.clone();
    full_config.train.mask = crate::fusion::PathwayMask::all();
    let data = extract_split(&manifest, &full_config, &encoders, &cache)?;

    let spec = args.suite.spec();
    let report = run_ablation_suite(
        &data.train_bundles,
        &data.train_labels,
        &data.test_bundles,
        &data.test_labels,
        &config.train,
        &spec,
    )?;
    let stem = &spec.name;
    write_json(&common.out.join(format!("{stem}.json")), &report)?;
    let csv_path = common.out.join(format!("{stem}.csv"));
    std::fs::write(&csv_path, report.to_csv()).map_err(|e| Error::io(&csv_path, e))?;
    crate::plot::render_report_charts(&report, &common.out)?;
    println!("{}", report.to_csv().trim_end());
    Ok(())
}

fn run_report(args: &ReportArgs) -> Result<()> {
    ensure_out_dir(&args.out, args.force)?;
    let raw = std::fs::read_to_string(&args.input).map_err(|e| Error::io(&args.input, e))?;
    let report: EvaluationReport = serde_json::from_str(&raw)?;
    let written = crate::plot::render_report_charts(&report, &args.out)?;
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn run_synth(args: &SynthArgs) -> Result<()> {
    ensure_out_dir(&args.out, args.force)?;
    let manifest = write_synthetic_corpus(&args.out, args.count, args.seed)?;
    println!("wrote {}", manifest.display());
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Prepare(args) => run_prepare(args),
        Command::Synth(args) => run_synth(args),
        Command::Train(args) => run_train(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Ablate(args) => run_ablate(args),
        Command::Report(args) => run_report(args),
    }
}
