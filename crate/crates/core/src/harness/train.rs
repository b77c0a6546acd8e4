use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{TaskMode, TrainConfig};
use super::metrics::{task_metrics, TaskMetrics};
use crate::checkpoint::Checkpoint;
use crate::dataset::{ChatRecord, IntentLabel, Label, SentimentLabel};
use crate::encoders::{names, Providers};
use crate::model::{prepare_examples, Example, Model};
use crate::optim::{adam_step, AdamState};
use crate::params::ParamSet;
use crate::prediction;
use crate::tensor::Scalar;
use crate::Error;

/// Parameter groups used for gradient bookkeeping, in reporting order.
pub const PARAM_GROUPS: [&str; 6] = [
    "context_encoder",
    "sticker_text_encoder",
    "image_encoder",
    "fusion",
    "sentiment_head",
    "intent_head",
];

pub fn param_group(name: &str) -> &'static str {
    if name.starts_with(names::CONTEXT_PREFIX) {
        "context_encoder"
    } else if name.starts_with(names::STICKER_TEXT_PREFIX) {
        "sticker_text_encoder"
    } else if name.starts_with(names::IMAGE_PREFIX) {
        "image_encoder"
    } else if name.starts_with(prediction::SENTIMENT_HEAD_PREFIX) {
        "sentiment_head"
    } else if name.starts_with(prediction::INTENT_HEAD_PREFIX) {
        "intent_head"
    } else {
        debug_assert!(name.starts_with("fusion."), "unknown parameter {name}");
        "fusion"
    }
}

/// Test-set scores recorded after an epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochEval {
    pub sentiment_accuracy: Option<Scalar>,
    pub sentiment_weighted_f1: Option<Scalar>,
    pub intent_accuracy: Option<Scalar>,
    pub intent_weighted_f1: Option<Scalar>,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean weighted joint loss over the epoch's batches.
    pub loss: Scalar,
    pub sentiment_loss: Scalar,
    pub intent_loss: Scalar,
    /// Accuracy on the full training set after the epoch's updates.
    pub train_sentiment_accuracy: Option<Scalar>,
    pub train_intent_accuracy: Option<Scalar>,
    /// Largest absolute gradient entry seen in each parameter group this epoch.
    pub grad_max: BTreeMap<String, Scalar>,
    /// Probabilities clamped inside the log this epoch.
    pub clamped: usize,
    pub test: Option<EpochEval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: usize,
    pub task_mode: TaskMode,
    pub sentiment: Option<TaskMetrics>,
    pub intent: Option<TaskMetrics>,
    pub config: TrainConfig,
    pub runtime_secs: Scalar,
}

impl MetricsReport {
    /// Mean accuracy over the reported tasks; used to pick the best epoch.
    pub fn score(&self) -> Scalar {
        let accs: Vec<Scalar> = [&self.sentiment, &self.intent]
            .into_iter()
            .flatten()
            .map(|m| m.accuracy)
            .collect();
        accs.iter().sum::<Scalar>() / accs.len() as Scalar
    }
}

#[derive(Debug, Clone)]
pub struct BestEpoch {
    pub epoch: usize,
    pub score: Scalar,
    pub params: ParamSet,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub config: TrainConfig,
    pub model: Model,
    pub adam: AdamState,
    pub log: Vec<EpochLog>,
    /// Highest test score so far, earliest epoch on ties. Only with a test set.
    pub best: Option<BestEpoch>,
}

impl TrainOutcome {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: serde_json::to_value(&self.config).expect("config serializes"),
            params: self.model.params.clone(),
            adam: Some(self.adam.clone()),
        }
    }

    pub fn best_model(&self) -> Option<Model> {
        self.best.as_ref().map(|b| Model {
            config: self.model.config.clone(),
            params: b.params.clone(),
        })
    }

    pub fn log_jsonl(&self) -> String {
        self.log
            .iter()
            .map(|l| serde_json::to_string(l).expect("log serializes") + "\n")
            .collect()
    }

    /// Largest gradient entry seen in `group` over the whole run.
    pub fn grad_max(&self, group: &str) -> Scalar {
        self.log
            .iter()
            .filter_map(|l| l.grad_max.get(group))
            .fold(0.0, |a, &b| a.max(b))
    }
}

/// Trains from scratch. Inputs for every record are resolved up front, so a
/// missing embedding fails before any update.
pub fn train(config: &TrainConfig, train_records: &[ChatRecord], test_records: Option<&[ChatRecord]>, providers: &Providers) -> Result<TrainOutcome, Error> {
    config.validate()?;
    if train_records.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let enc = config.encoder();
    let train_set = prepare_examples(train_records, &enc, providers)?;
    let test_set = match test_records {
        Some(r) if r.is_empty() => return Err(Error::Config("test set is empty".into())),
        Some(r) => Some(prepare_examples(r, &enc, providers)?),
        None => None,
    };
    train_examples(config, &train_set, test_set.as_deref())
}

pub fn train_examples(config: &TrainConfig, train_set: &[Example], test_set: Option<&[Example]>) -> Result<TrainOutcome, Error> {
    config.validate()?;
    let mut model = Model::init(config.model_config(), config.seed)?;
    let mut adam = AdamState::new(&model.params);
    let (optim, weights, ablation) = (config.optim(), config.loss_weights(), config.ablation());
    let groups: Vec<&'static str> = model.params.names().map(param_group).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<BestEpoch> = None;

    for epoch in 1..=config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);

        let mut grad_max: BTreeMap<String, Scalar> = PARAM_GROUPS.iter().map(|g| (g.to_string(), 0.0)).collect();
        let (mut loss_sum, mut l1_sum, mut l2_sum, mut clamped, mut batches) = (0.0, 0.0, 0.0, 0, 0);
        for chunk in order.chunks(config.train_batch) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (g, bound, loss, _) = model.batch_loss(&batch, ablation, weights)?;
            let grads = bound.gradients(&g.backward(loss.total)?);
            for (group, grad) in groups.iter().zip(&grads) {
                let slot = grad_max.get_mut(*group).expect("known group");
                *slot = slot.max(grad.max_abs());
            }
            adam_step(&mut model.params, &grads, &mut adam, &optim)?;
            loss_sum += g.value(loss.total).item();
            l1_sum += g.value(loss.sentiment).item();
            l2_sum += g.value(loss.intent).item();
            clamped += g.clamp_count();
            batches += 1;
        }

        let train_eval = evaluate_examples(&model, config, train_set)?;
        let test = match test_set {
            Some(t) => {
                let report = evaluate_examples(&model, config, t)?;
                let score = report.score();
                if best.as_ref().map_or(true, |b| score > b.score) {
                    best = Some(BestEpoch {
                        epoch,
                        score,
                        params: model.params.clone(),
                    });
                }
                Some(EpochEval {
                    sentiment_accuracy: report.sentiment.as_ref().map(|m| m.accuracy),
                    sentiment_weighted_f1: report.sentiment.as_ref().map(|m| m.weighted_f1),
                    intent_accuracy: report.intent.as_ref().map(|m| m.accuracy),
                    intent_weighted_f1: report.intent.as_ref().map(|m| m.weighted_f1),
                })
            }
            None => None,
        };
        let n = batches as Scalar;
        let entry = EpochLog {
            epoch,
            loss: loss_sum / n,
            sentiment_loss: l1_sum / n,
            intent_loss: l2_sum / n,
            train_sentiment_accuracy: train_eval.sentiment.as_ref().map(|m| m.accuracy),
            train_intent_accuracy: train_eval.intent.as_ref().map(|m| m.accuracy),
            grad_max,
            clamped,
            test,
        };
        log::info!(
            "epoch {epoch}: loss {:.6} sentiment {:.6} intent {:.6}",
            entry.loss,
            entry.sentiment_loss,
            entry.intent_loss
        );
        log.push(entry);
    }

    Ok(TrainOutcome {
        config: config.clone(),
        model,
        adam,
        log,
        best,
    })
}

/// Metrics for the tasks `config.task_mode` trains, over `examples`.
pub fn evaluate_examples(model: &Model, config: &TrainConfig, examples: &[Example]) -> Result<MetricsReport, Error> {
    if examples.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let start = Instant::now();
    let ablation = config.ablation();
    let mut pred_s = Vec::with_capacity(examples.len());
    let mut pred_i = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(config.eval_batch) {
        let inputs: Vec<_> = chunk.iter().map(|e| &e.inputs).collect();
        for (s, i) in model.predict_codes(&inputs, ablation)? {
            pred_s.push(s);
            pred_i.push(i);
        }
    }
    let gold_s: Vec<usize> = examples.iter().map(|e| e.sentiment).collect();
    let gold_i: Vec<usize> = examples.iter().map(|e| e.intent).collect();
    let s_names: Vec<&str> = SentimentLabel::ALL.iter().map(|l| l.name()).collect();
    let i_names: Vec<&str> = IntentLabel::ALL.iter().map(|l| l.name()).collect();
    let mode = config.task_mode;
    Ok(MetricsReport {
        samples: examples.len(),
        task_mode: mode,
        sentiment: mode.trains_sentiment().then(|| task_metrics(&gold_s, &pred_s, &s_names)),
        intent: mode.trains_intent().then(|| task_metrics(&gold_i, &pred_i, &i_names)),
        config: config.clone(),
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

pub fn evaluate(model: &Model, config: &TrainConfig, records: &[ChatRecord], providers: &Providers) -> Result<MetricsReport, Error> {
    let examples = prepare_examples(records, &config.encoder(), providers)?;
    evaluate_examples(model, config, &examples)
}

/// Rebuilds the model a checkpoint describes and checks its parameters fit.
pub fn model_from_checkpoint(ck: &Checkpoint) -> Result<(TrainConfig, Model), Error> {
    let config: TrainConfig = serde_json::from_value(ck.config.clone())
        .map_err(|e| Error::Checkpoint(format!("config echo is not a training config: {e}")))?;
    let model = Model::from_params(config.model_config(), ck.params.clone())?;
    Ok((config, model))
}

pub fn evaluate_checkpoint(ck: &Checkpoint, records: &[ChatRecord], providers: &Providers) -> Result<MetricsReport, Error> {
    let (config, model) = model_from_checkpoint(ck)?;
    evaluate(&model, &config, records, providers)
}
