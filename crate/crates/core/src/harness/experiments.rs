use serde::{Deserialize, Serialize};

use super::config::{TaskMode, TrainConfig};
use super::train::{evaluate_examples, train_examples, EpochLog, MetricsReport};
use crate::dataset::ChatRecord;
use crate::encoders::Providers;
use crate::model::{prepare_examples, AblationFlags, Example};
use crate::tensor::Scalar;
use crate::Error;

/// Table rows of the modality ablation, in reporting order.
pub fn ablation_rows() -> Vec<(&'static str, AblationFlags)> {
    let flags = |c, i, t| AblationFlags {
        drop_context: c,
        drop_sticker_image: i,
        drop_sticker_text: t,
    };
    vec![
        ("MMSAIR", flags(false, false, false)),
        ("w/o C_F", flags(true, false, false)),
        ("w/o S_F", flags(false, true, false)),
        ("w/o ST_F", flags(false, false, true)),
        ("w/o S_F&ST_F (Context-only)", flags(false, true, true)),
        ("w/o C_F&ST_F (Image-only)", flags(true, false, true)),
    ]
}

/// Table rows of the task comparison, in reporting order.
pub fn task_rows() -> Vec<(&'static str, TaskMode)> {
    vec![
        ("SA", TaskMode::SentimentOnly),
        ("IR", TaskMode::IntentOnly),
        ("MSAIRS", TaskMode::Joint),
    ]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub name: String,
    pub ablation: AblationFlags,
    pub task_mode: TaskMode,
    pub final_metrics: MetricsReport,
    pub best_epoch: usize,
    pub best_metrics: MetricsReport,
    /// Largest gradient entry seen in any dropped encoder over the whole run.
    pub dropped_grad_max: Scalar,
    pub log: Vec<EpochLog>,
}

fn dropped_groups(flags: AblationFlags) -> Vec<&'static str> {
    let mut out = Vec::new();
    if flags.drop_context {
        out.push("context_encoder");
    }
    if flags.drop_sticker_image {
        out.push("image_encoder");
    }
    if flags.drop_sticker_text {
        out.push("sticker_text_encoder");
    }
    out
}

fn run_row(name: &str, config: &TrainConfig, train: &[Example], test: &[Example]) -> Result<ExperimentRow, Error> {
    log::info!("running {name}");
    let out = train_examples(config, train, Some(test))?;
    let final_metrics = evaluate_examples(&out.model, config, test)?;
    let best = out.best.as_ref().expect("test set given");
    let best_model = out.best_model().expect("test set given");
    let best_metrics = evaluate_examples(&best_model, config, test)?;
    let dropped_grad_max = dropped_groups(config.ablation())
        .into_iter()
        .map(|g| out.grad_max(g))
        .fold(0.0, Scalar::max);
    Ok(ExperimentRow {
        name: name.to_string(),
        ablation: config.ablation(),
        task_mode: config.task_mode,
        final_metrics,
        best_epoch: best.epoch,
        best_metrics,
        dropped_grad_max,
        log: out.log,
    })
}

fn prepare(config: &TrainConfig, train: &[ChatRecord], test: &[ChatRecord], providers: &Providers) -> Result<(Vec<Example>, Vec<Example>), Error> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config("experiments need non-empty train and test sets".into()));
    }
    let enc = config.encoder();
    Ok((prepare_examples(train, &enc, providers)?, prepare_examples(test, &enc, providers)?))
}

/// One full training run per ablation row, all else equal to `config`.
pub fn run_ablation(config: &TrainConfig, train: &[ChatRecord], test: &[ChatRecord], providers: &Providers) -> Result<Vec<ExperimentRow>, Error> {
    let (train, test) = prepare(config, train, test, providers)?;
    ablation_rows()
        .into_iter()
        .map(|(name, flags)| {
            let mut c = config.clone();
            c.set_ablation(flags);
            run_row(name, &c, &train, &test)
        })
        .collect()
}

/// One full training run per task mode, all else equal to `config`.
pub fn run_task_grid(config: &TrainConfig, train: &[ChatRecord], test: &[ChatRecord], providers: &Providers) -> Result<Vec<ExperimentRow>, Error> {
    let (train, test) = prepare(config, train, test, providers)?;
    task_rows()
        .into_iter()
        .map(|(name, mode)| {
            let c = TrainConfig {
                task_mode: mode,
                ..config.clone()
            };
            run_row(name, &c, &train, &test)
        })
        .collect()
}

/// Markdown table of final and best-epoch accuracy and weighted F1 (in %).
pub fn format_table(rows: &[ExperimentRow]) -> String {
    let cell = |v: Option<Scalar>| v.map_or("-".to_string(), |x| format!("{:.2}", 100.0 * x));
    let mut s = String::from(
        "| Model | SA Acc | SA W-F1 | IR Acc | IR W-F1 | best epoch | best SA Acc | best SA W-F1 | best IR Acc | best IR W-F1 |\n\
         |---|---|---|---|---|---|---|---|---|---|\n",
    );
    for r in rows {
        let m = |rep: &MetricsReport| {
            [
                cell(rep.sentiment.as_ref().map(|t| t.accuracy)),
                cell(rep.sentiment.as_ref().map(|t| t.weighted_f1)),
                cell(rep.intent.as_ref().map(|t| t.accuracy)),
                cell(rep.intent.as_ref().map(|t| t.weighted_f1)),
            ]
            .join(" | ")
        };
        s.push_str(&format!(
            "| {} | {} | {} | {} |\n",
            r.name,
            m(&r.final_metrics),
            r.best_epoch,
            m(&r.best_metrics)
        ));
    }
    s
}
