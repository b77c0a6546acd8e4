use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use mmsair::dataset::{label_statistics, load_dataset_with, split_dataset, ChatRecord, FieldMap, Validation};
use mmsair::encoders::{EmbeddingStore, Modality, ProviderKind, Providers, ThumbnailSource};
use mmsair::harness::{self, PipelineCheckConfig, TaskMode, TrainConfig};
use mmsair::tensor::FdStencil;
use mmsair::Checkpoint;

#[derive(Parser)]
#[command(name = "mmsair", version, about = "Joint sentiment and intent models for chat messages with stickers")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write checkpoint, log and metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Run the six-row modality ablation.
    Ablate(TrainArgs),
    /// Run sentiment-only, intent-only and joint training.
    TaskGrid(TrainArgs),
    /// Label statistics of a dataset as JSON.
    Stats(StatsArgs),
    /// Finite-difference check of the full pipeline with toy encoders.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct DataArgs {
    /// JSONL dataset.
    #[arg(long)]
    data: PathBuf,
    /// Source key overrides, e.g. `context=text,sticker_image_ref=img`.
    #[arg(long)]
    field_map: Option<String>,
    /// Keep records that break the class/text rules, logging a warning.
    #[arg(long)]
    lenient: bool,
}

impl DataArgs {
    fn load(&self) -> Result<Vec<ChatRecord>> {
        let fields = match &self.field_map {
            Some(s) => FieldMap::parse(s)?,
            None => FieldMap::default(),
        };
        let mode = if self.lenient { Validation::Lenient } else { Validation::Strict };
        Ok(load_dataset_with(&self.data, &fields, mode)?)
    }
}

#[derive(Args)]
struct ProviderArgs {
    /// Directory that `sticker_image_ref` paths are relative to. Defaults to the dataset's directory.
    #[arg(long)]
    thumbnails: Option<PathBuf>,
    #[arg(long)]
    context_store: Option<PathBuf>,
    #[arg(long)]
    sticker_text_store: Option<PathBuf>,
    #[arg(long)]
    image_store: Option<PathBuf>,
}

impl ProviderArgs {
    fn build(&self, config: &TrainConfig, data: &Path) -> Result<Providers> {
        let open = |path: &Option<PathBuf>, kind: ProviderKind, modality: Modality, width: usize| -> Result<Option<EmbeddingStore>> {
            match (path, kind) {
                (Some(p), ProviderKind::Precomputed) => Ok(Some(EmbeddingStore::open_expecting(p, modality, width)?)),
                (None, ProviderKind::Precomputed) => bail!("{} provider is precomputed; pass --{}-store", modality.name(), modality.name().replace('_', "-")),
                (Some(_), ProviderKind::Toy) => {
                    log::warn!("ignoring {} store: provider is toy", modality.name());
                    Ok(None)
                }
                (None, ProviderKind::Toy) => Ok(None),
            }
        };
        let dir = self
            .thumbnails
            .clone()
            .unwrap_or_else(|| data.parent().map(Path::to_path_buf).unwrap_or_default());
        Ok(Providers {
            context_store: open(&self.context_store, config.context_provider, Modality::Context, config.d_model)?,
            sticker_text_store: open(&self.sticker_text_store, config.sticker_text_provider, Modality::StickerText, config.d_model)?,
            image_store: open(&self.image_store, config.image_provider, Modality::StickerImage, config.image_input_dim)?,
            thumbnails: ThumbnailSource::Dir(dir),
        })
    }
}

/// Every field is optional and overrides the config file, which overrides the defaults.
#[derive(Args)]
struct ConfigArgs {
    /// TOML file with any subset of the training options.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    train_batch: Option<usize>,
    #[arg(long)]
    eval_batch: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Sentiment loss weight.
    #[arg(long)]
    alpha: Option<f64>,
    /// Intent loss weight.
    #[arg(long)]
    beta: Option<f64>,
    /// joint, sentiment_only or intent_only.
    #[arg(long)]
    task_mode: Option<TaskMode>,
    #[arg(long)]
    drop_context: bool,
    #[arg(long)]
    drop_sticker_image: bool,
    #[arg(long)]
    drop_sticker_text: bool,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    num_heads: Option<usize>,
    #[arg(long)]
    d_comb: Option<usize>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    image_input_dim: Option<usize>,
    #[arg(long)]
    conv_kernel: Option<usize>,
    /// toy or precomputed.
    #[arg(long)]
    context_provider: Option<ProviderKind>,
    #[arg(long)]
    sticker_text_provider: Option<ProviderKind>,
    #[arg(long)]
    image_provider: Option<ProviderKind>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut c = match &self.config {
            Some(p) => TrainConfig::from_toml_file(p)?,
            None => TrainConfig::default(),
        };
        macro_rules! over {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        over!(
            epochs, train_batch, eval_batch, learning_rate, beta1, beta2, epsilon, alpha, beta, task_mode, d_model, num_heads, vocab_size,
            image_input_dim, conv_kernel, context_provider, sticker_text_provider, image_provider, seed
        );
        if self.d_comb.is_some() {
            c.d_comb = self.d_comb;
        }
        c.drop_context |= self.drop_context;
        c.drop_sticker_image |= self.drop_sticker_image;
        c.drop_sticker_text |= self.drop_sticker_text;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Held-out JSONL; when absent the dataset is split.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long, default_value_t = 0.9)]
    train_fraction: f64,
    #[arg(long, default_value_t = 42)]
    split_seed: u64,
    #[command(flatten)]
    providers: ProviderArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

impl TrainArgs {
    fn split(&self) -> Result<(Vec<ChatRecord>, Vec<ChatRecord>)> {
        let records = self.data.load()?;
        match &self.test {
            Some(t) => {
                let test = DataArgs {
                    data: t.clone(),
                    field_map: self.data.field_map.clone(),
                    lenient: self.data.lenient,
                }
                .load()?;
                Ok((records, test))
            }
            None => Ok(split_dataset(&records, self.train_fraction, self.split_seed)?),
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    providers: ProviderArgs,
    /// Write the metrics JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 8)]
    d_model: usize,
    #[arg(long, default_value_t = 2)]
    num_heads: usize,
    #[arg(long, default_value_t = 4)]
    batch: usize,
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => write(p, text),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let config = args.config.resolve()?;
    let providers = args.providers.build(&config, &args.data.data)?;
    let (train, test) = args.split()?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let start = Instant::now();
    let test_ref = (!test.is_empty()).then_some(test.as_slice());
    let outcome = harness::train(&config, &train, test_ref, &providers)?;
    let train_secs = start.elapsed().as_secs_f64();
    outcome.checkpoint().save(args.out.join("checkpoint.msck"))?;
    write(&args.out.join("train_log.jsonl"), &outcome.log_jsonl())?;
    write(&args.out.join("config.toml"), &config.to_toml())?;
    let mut summary = json!({
        "train_samples": train.len(),
        "test_samples": test.len(),
        "train_runtime_secs": train_secs,
    });
    if let Some(t) = test_ref {
        summary["final"] = serde_json::to_value(harness::evaluate(&outcome.model, &config, t, &providers)?)?;
        if let (Some(best), Some(model)) = (&outcome.best, outcome.best_model()) {
            summary["best_epoch"] = json!(best.epoch);
            summary["best"] = serde_json::to_value(harness::evaluate(&model, &config, t, &providers)?)?;
        }
    }
    write(&args.out.join("metrics.json"), &serde_json::to_string_pretty(&summary)?)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let (config, model) = harness::model_from_checkpoint(&ck)?;
    let providers = args.providers.build(&config, &args.data.data)?;
    let records = args.data.load()?;
    let report = harness::evaluate(&model, &config, &records, &providers)?;
    emit(&args.out, &serde_json::to_string_pretty(&report)?)
}

fn cmd_experiment(args: &TrainArgs, grid: bool) -> Result<()> {
    let config = args.config.resolve()?;
    let providers = args.providers.build(&config, &args.data.data)?;
    let (train, test) = args.split()?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let rows = if grid {
        harness::run_task_grid(&config, &train, &test, &providers)?
    } else {
        harness::run_ablation(&config, &train, &test, &providers)?
    };
    let stem = if grid { "task_grid" } else { "ablation" };
    write(&args.out.join(format!("{stem}.json")), &serde_json::to_string_pretty(&rows)?)?;
    let table = harness::format_table(&rows);
    write(&args.out.join(format!("{stem}.md")), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_stats(args: &StatsArgs) -> Result<()> {
    let records = args.data.load()?;
    emit(&args.out, &label_statistics(&records)?.to_json())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<bool> {
    let cfg = PipelineCheckConfig {
        d_model: args.d_model,
        num_heads: args.num_heads,
        batch: args.batch,
        ..PipelineCheckConfig::default()
    };
    let start = Instant::now();
    let mut ok = true;
    for seed in 0..args.seeds {
        let r = harness::pipeline_gradcheck(&cfg, seed)?;
        let pass = r.passed(args.tolerance);
        ok &= pass;
        println!(
            "seed {seed:>3}: max rel error {:.3e} over {} entries {}",
            r.max_rel_error,
            r.entries_checked,
            if pass { "PASS" } else { "FAIL" }
        );
    }
    println!(
        "{} ({} stencil, eps {:e}, {:.1}s)",
        if ok { "PASS" } else { "FAIL" },
        if cfg.stencil == FdStencil::FivePoint { "5-point" } else { "3-point" },
        cfg.eps,
        start.elapsed().as_secs_f64()
    );
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_experiment(a, false),
        Command::TaskGrid(a) => cmd_experiment(a, true),
        Command::Stats(a) => cmd_stats(a),
        Command::Gradcheck(a) => match cmd_gradcheck(a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::FAILURE,
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
