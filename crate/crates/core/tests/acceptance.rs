//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any FAIL.
//!
//! The real-dataset statistics check runs only when `MSAIRS_DATASET` points at
//! the released JSONL (optionally with `MSAIRS_FIELD_MAP`); otherwise it is
//! reported as SKIP.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mmsair::dataset::{label_statistics, load_dataset, load_dataset_with, FieldMap, StatsReport, Validation};
use mmsair::fusion::{self, FusionConfig};
use mmsair::harness::{self, PipelineCheckConfig, TaskMode, TrainConfig};
use mmsair::params::{uniform, ParamSet};
use mmsair::prediction::{self, LossWeights};
use mmsair::synthetic;
use mmsair::tensor::{Graph, Tensor};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn gradient_correctness() -> Outcome {
    const TOL: f64 = 1e-4;
    const LIMIT: Duration = Duration::from_secs(120);
    let cfg = PipelineCheckConfig::default();
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut entries = 0;
    for seed in 0..20 {
        match harness::pipeline_gradcheck(&cfg, seed) {
            Ok(r) => {
                worst = worst.max(r.max_rel_error);
                entries = r.entries_checked;
                if r.non_finite.is_some() {
                    return Outcome::Fail(format!("seed {seed}: non-finite objective {:?}", r.non_finite));
                }
            }
            Err(e) => return Outcome::Fail(format!("seed {seed}: {e}")),
        }
    }
    let took = start.elapsed();
    check(
        worst < TOL && took < LIMIT,
        format!("max rel err {worst:.3e} < {TOL:e} over {entries} entries x 20 seeds in {:.1}s", took.as_secs_f64()),
    )
}

// Plain-array reference for the fusion equations.

type Vector = Vec<f64>;

fn mat_vec(w: &Tensor, x: &[f64]) -> Vector {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    assert_eq!(cols, x.len());
    (0..rows)
        .map(|r| (0..cols).map(|c| w.data()[r * cols + c] * x[c]).sum())
        .collect()
}

fn affine(p: &ParamSet, w: &str, b: &str, x: &[f64]) -> Vector {
    let y = mat_vec(p.get(w).unwrap(), x);
    y.iter().zip(p.get(b).unwrap().data()).map(|(a, b)| a + b).collect()
}

/// Single-head attention of one query over a list of key/value tokens.
fn attention_ref(p: &ParamSet, prefix: &str, q: &[f64], keys: &[&[f64]], values: &[&[f64]]) -> Vector {
    let n = |s: &str| format!("{prefix}.{s}");
    let qp = affine(p, &n("w_q"), &n("b_q"), q);
    let scale = (q.len() as f64).sqrt();
    let logits: Vec<f64> = keys
        .iter()
        .map(|k| {
            let kp = affine(p, &n("w_k"), &n("b_k"), k);
            qp.iter().zip(&kp).map(|(a, b)| a * b).sum::<f64>() / scale
        })
        .collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    let mut mixed = vec![0.0; q.len()];
    for (e, v) in exps.iter().zip(values) {
        let vp = affine(p, &n("w_v"), &n("b_v"), v);
        for (acc, x) in mixed.iter_mut().zip(vp) {
            *acc += e / z * x;
        }
    }
    affine(p, &n("w_o"), &n("b_o"), &mixed)
}

fn equation_oracle() -> Outcome {
    const TOL: f64 = 1e-12;
    let cfg = FusionConfig::new(4, 1);
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        fusion::init_params(&cfg, &mut rng, &mut p);
        for (_, t) in p.iter_mut() {
            *t = uniform(&mut rng, t.shape(), 1.0);
        }
        let mut vec4 = || -> Vector { (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let (e_x, e_s, e_i) = (vec4(), vec4(), vec4());

        let e_is: [&[f64]; 2] = [&e_i, &e_s];
        let o_mha = attention_ref(&p, fusion::ATTN_STICKER, &e_x, &e_is, &e_is);
        let diff: Vector = o_mha.iter().zip(&e_x).map(|(a, b)| a - b).collect();
        let v_diff = affine(&p, fusion::W_DIFF, fusion::B_DIFF, &diff);
        let o_s = attention_ref(&p, fusion::ATTN_STICKER_SELF, &e_s, &[&e_s], &[&o_mha]);
        let o_x = attention_ref(&p, fusion::ATTN_CONTEXT_SELF, &e_x, &[&e_x], &[&o_mha]);
        let stacked: Vector = [&e_i, &e_s, &e_x, &v_diff, &o_s, &o_x].iter().flat_map(|v| v.iter().copied()).collect();
        let e_comb = affine(&p, fusion::W_E, fusion::B_E, &stacked);

        let t = |v: &Vector| Tensor::vector(v.clone()).unwrap();
        let out = match fusion::fuse(&t(&e_x), &t(&e_s), &t(&e_i), &p, &cfg) {
            Ok(o) => o,
            Err(e) => return Outcome::Fail(e.to_string()),
        };
        for (got, want) in [
            (&out.o_mha, &o_mha),
            (&out.v_diff, &v_diff),
            (&out.o_s, &o_s),
            (&out.o_x, &o_x),
            (&out.e_combined, &e_comb),
        ] {
            for (a, b) in got.data().iter().zip(want.iter()) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    check(worst <= TOL, format!("max abs diff {worst:.3e} <= {TOL:e} (d=4, 1 head, 10 parameter draws)"))
}

fn forced_identities() -> Outcome {
    let mut failures = Vec::new();

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut g = Graph::new();
    let x = g.constant(uniform(&mut rng, &[3, 4], 1.0));
    let w = g.constant(uniform(&mut rng, &[4, 4], 1.0));
    let b = g.constant(Tensor::zeros(&[4]));
    match fusion::differential_vector(&mut g, x, x, w, b) {
        Ok(v) if g.value(v).data().iter().all(|&e| e == 0.0) => {}
        other => failures.push(format!("differential_vector(x, x, W, 0) = {:?}", other.map(|v| g.value(v).clone()))),
    }

    let mut heads = ParamSet::new();
    prediction::init_params(6, &mut rng, &mut heads);
    for (_, t) in heads.iter_mut() {
        t.data_mut().fill(0.0);
    }
    let e = uniform(&mut rng, &[6], 3.0);
    let (ps, pi) = prediction::predict(&e, &heads).unwrap();
    if !ps.data().iter().all(|&v| (v - 1.0 / 3.0).abs() <= 1e-15) || !pi.data().iter().all(|&v| (v - 1.0 / 20.0).abs() <= 1e-15) {
        failures.push(format!("zero-parameter predict not uniform: {ps:?} {pi:?}"));
    }

    let uniform3 = Tensor::from_rows(&[&[1.0 / 3.0; 3], &[1.0 / 3.0; 3]]);
    let (ce, _) = prediction::cross_entropy(&uniform3, &[0, 2]).unwrap();
    if (ce - 3f64.ln()).abs() > 1e-12 {
        failures.push(format!("uniform 3-class cross entropy {ce} vs ln 3"));
    }

    for (l1, l2) in [(0.3, 1.7), (1e-9, 12.5), (0.0, 0.0), (2.302585092994046, 0.6931471805599453)] {
        let j = prediction::joint_loss(l1, l2, LossWeights { alpha: 1.0, beta: 1.0 });
        if j != l1 + l2 {
            failures.push(format!("joint_loss({l1}, {l2}) = {j}"));
        }
    }
    check(failures.is_empty(), if failures.is_empty() { "all identities hold".into() } else { failures.join("; ") })
}

fn overfit() -> Outcome {
    const LIMIT: Duration = Duration::from_secs(60);
    let cfg = TrainConfig {
        epochs: 300,
        d_model: 32,
        learning_rate: 1e-3,
        ..TrainConfig::default()
    };
    let data = synthetic::separable(32, cfg.image_input_dim, 11);
    let start = Instant::now();
    let out = match harness::train(&cfg, &data.records, None, &data.providers()) {
        Ok(o) => o,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let took = start.elapsed();
    let first = out
        .log
        .iter()
        .find(|l| l.train_sentiment_accuracy == Some(1.0) && l.train_intent_accuracy == Some(1.0))
        .map(|l| l.epoch);
    let last = out.log.last().unwrap();
    check(
        first.is_some() && took < LIMIT,
        format!(
            "100% train accuracy on both heads first at epoch {first:?} (final {:?}/{:?}), {:.1}s for 300 epochs",
            last.train_sentiment_accuracy,
            last.train_intent_accuracy,
            took.as_secs_f64()
        ),
    )
}

fn brute_force(gold: &[usize], pred: &[usize], k: usize) -> (f64, f64) {
    let n = gold.len() as f64;
    let acc = gold.iter().zip(pred).filter(|(a, b)| a == b).count() as f64 / n;
    let mut wf1 = 0.0;
    for c in 0..k {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fn_ = 0.0;
        for (&g, &p) in gold.iter().zip(pred) {
            match (g == c, p == c) {
                (true, true) => tp += 1.0,
                (false, true) => fp += 1.0,
                (true, false) => fn_ += 1.0,
                _ => {}
            }
        }
        let prec = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let rec = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        let f1 = if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
        wf1 += (tp + fn_) / n * f1;
    }
    (acc, wf1)
}

fn metric_oracle() -> Outcome {
    const TOL: f64 = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let names: Vec<String> = (0..20).map(|i| format!("c{i}")).collect();
    for k in [3usize, 20] {
        let labels: Vec<&str> = names[..k].iter().map(String::as_str).collect();
        for _ in 0..1000 {
            let n = rng.gen_range(1..=200);
            let gold: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            let pred: Vec<usize> = (0..n)
                .map(|i| if rng.gen_bool(0.4) { gold[i] } else { rng.gen_range(0..k) })
                .collect();
            let m = harness::task_metrics(&gold, &pred, &labels);
            let (acc, wf1) = brute_force(&gold, &pred, k);
            worst = worst.max((m.accuracy - acc).abs()).max((m.weighted_f1 - wf1).abs());
        }
    }
    check(worst <= TOL, format!("max abs diff {worst:.3e} <= {TOL:e} over 1000 sets each at 3 and 20 classes"))
}

fn small_experiment_config() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        train_batch: 8,
        eval_batch: 4,
        d_model: 8,
        num_heads: 2,
        vocab_size: 256,
        image_input_dim: 16,
        learning_rate: 1e-3,
        ..TrainConfig::default()
    }
}

fn ablation_contract() -> Outcome {
    const EXPECTED: [&str; 6] = [
        "MMSAIR",
        "w/o C_F",
        "w/o S_F",
        "w/o ST_F",
        "w/o S_F&ST_F (Context-only)",
        "w/o C_F&ST_F (Image-only)",
    ];
    let cfg = small_experiment_config();
    let data = synthetic::separable(32, cfg.image_input_dim, 4);
    let (train, test) = data.records.split_at(24);
    let rows = match harness::run_ablation(&cfg, train, test, &data.providers()) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let names: Vec<&str> = rows.iter().map(|r| r.name.as_str()).collect();
    let mut problems = Vec::new();
    if names != EXPECTED {
        problems.push(format!("row names {names:?}"));
    }
    for r in &rows {
        if r.dropped_grad_max != 0.0 {
            problems.push(format!("{}: dropped encoder gradient {:e}", r.name, r.dropped_grad_max));
        }
        // Kept encoders must actually learn, otherwise zero gradients prove nothing.
        let kept = [
            (!r.ablation.drop_context, "context_encoder"),
            (!r.ablation.drop_sticker_image, "image_encoder"),
            (!r.ablation.drop_sticker_text, "sticker_text_encoder"),
        ];
        for (on, group) in kept {
            let g = r.log.iter().map(|l| l.grad_max[group]).fold(0.0, f64::max);
            if on && g == 0.0 {
                problems.push(format!("{}: kept {group} got no gradient", r.name));
            }
        }
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            format!("{} rows with the reporting names; dropped-encoder gradients exactly 0 at every step", rows.len())
        } else {
            problems.join("; ")
        },
    )
}

fn task_grid_contract() -> Outcome {
    let cfg = small_experiment_config();
    let data = synthetic::separable(32, cfg.image_input_dim, 8);
    let (train, test) = data.records.split_at(24);
    let rows = match harness::run_task_grid(&cfg, train, test, &data.providers()) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let mut problems = Vec::new();
    let names: Vec<&str> = rows.iter().map(|r| r.name.as_str()).collect();
    if names != ["SA", "IR", "MSAIRS"] {
        problems.push(format!("row names {names:?}"));
    }
    let head = |r: &harness::ExperimentRow, g: &str| r.log.iter().map(|l| l.grad_max[g]).fold(0.0, f64::max);
    for r in &rows {
        let (s, i) = (r.final_metrics.sentiment.is_some(), r.final_metrics.intent.is_some());
        let (gs, gi) = (head(r, "sentiment_head"), head(r, "intent_head"));
        let ok = match r.task_mode {
            TaskMode::SentimentOnly => s && !i && gs > 0.0 && gi == 0.0,
            TaskMode::IntentOnly => !s && i && gs == 0.0 && gi > 0.0,
            TaskMode::Joint => s && i && gs > 0.0 && gi > 0.0,
        };
        if !ok {
            problems.push(format!("{}: metrics ({s}, {i}), head gradients ({gs:e}, {gi:e})", r.name));
        }
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            "SA/IR report only their task and train only their head; MSAIRS trains and reports both".into()
        } else {
            problems.join("; ")
        },
    )
}

fn determinism() -> Outcome {
    let cfg = TrainConfig {
        epochs: 4,
        train_batch: 5,
        ..small_experiment_config()
    };
    let data = synthetic::separable(23, cfg.image_input_dim, 21);
    let run = || -> Result<(String, Vec<u8>), String> {
        let out = harness::train(&cfg, &data.records[..17], Some(&data.records[17..]), &data.providers()).map_err(|e| e.to_string())?;
        let bytes = out.checkpoint().to_bytes().map_err(|e| e.to_string())?;
        Ok((out.log_jsonl(), bytes))
    };
    match (run(), run()) {
        (Ok(a), Ok(b)) => check(
            a == b,
            format!("logs equal: {}, checkpoints equal: {} ({} bytes)", a.0 == b.0, a.1 == b.1, a.1.len()),
        ),
        (Err(e), _) | (_, Err(e)) => Outcome::Fail(e),
    }
}

fn count(report: &StatsReport, category: &str, label: &str) -> usize {
    report.category(category).and_then(|c| c.get(label)).map_or(usize::MAX, |l| l.count)
}

fn percent(report: &StatsReport, category: &str, label: &str) -> f64 {
    let p = report.category(category).and_then(|c| c.get(label)).map_or(f64::NAN, |l| l.proportion);
    (p * 1e4).round() / 1e2
}

fn fixture_stats() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/mini.jsonl");
    let report = match load_dataset(&path).map_err(|e| e.to_string()).and_then(|r| label_statistics(&r).map_err(|e| e.to_string())) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e),
    };
    let expected: &[(&str, &str, usize)] = &[
        ("multimodal_sentiment", "positive", 9),
        ("multimodal_sentiment", "neutral", 6),
        ("multimodal_sentiment", "negative", 5),
        ("context_sentiment", "positive", 7),
        ("context_sentiment", "negative", 7),
        ("context_sentiment", "neutral", 6),
        ("sticker_sentiment", "positive", 6),
        ("sticker_sentiment", "negative", 7),
        ("sticker_sentiment", "neutral", 7),
        ("multimodal_intent", "Greet", 2),
        ("multimodal_intent", "Query", 2),
        ("multimodal_intent", "Leave", 2),
        ("multimodal_intent", "Inform", 2),
        ("multimodal_intent", "Complain", 1),
        ("multimodal_intent", "Ask for help", 1),
        ("multimodal_intent", "Apologize", 1),
        ("multimodal_intent", "Joke", 1),
        ("multimodal_intent", "Thank", 1),
        ("multimodal_intent", "Oppose", 1),
        ("multimodal_intent", "Praise", 1),
        ("multimodal_intent", "Guess", 1),
        ("multimodal_intent", "Compromise", 1),
        ("multimodal_intent", "Flaunt", 1),
        ("multimodal_intent", "Criticize", 1),
        ("multimodal_intent", "Comfort", 1),
        ("multimodal_intent", "Taunt", 0),
        ("multimodal_intent", "Introduce", 0),
        ("multimodal_intent", "Advise", 0),
        ("multimodal_intent", "Agree", 0),
        ("sticker_class", "C", 6),
        ("sticker_class", "C-t", 5),
        ("sticker_class", "A", 2),
        ("sticker_class", "A-t", 2),
        ("sticker_class", "P", 2),
        ("sticker_class", "P-t", 1),
        ("sticker_class", "Text", 2),
    ];
    let wrong: Vec<String> = expected
        .iter()
        .filter(|(c, l, n)| count(&report, c, l) != *n)
        .map(|(c, l, n)| format!("{c}/{l}: {} != {n}", count(&report, c, l)))
        .collect();
    check(
        report.total == 20 && wrong.is_empty(),
        format!("total {} and {} label counts checked; mismatches: {wrong:?}", report.total, expected.len()),
    )
}

fn dataset_stats() -> Outcome {
    let Ok(path) = std::env::var("MSAIRS_DATASET") else {
        return Outcome::Skip("MSAIRS_DATASET not set".into());
    };
    let fields = match std::env::var("MSAIRS_FIELD_MAP") {
        Ok(spec) => match FieldMap::parse(&spec) {
            Ok(f) => f,
            Err(e) => return Outcome::Fail(e.to_string()),
        },
        Err(_) => FieldMap::default(),
    };
    let report = match load_dataset_with(&path, &fields, Validation::Lenient)
        .map_err(|e| e.to_string())
        .and_then(|r| label_statistics(&r).map_err(|e| e.to_string()))
    {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e),
    };
    let checks = [
        ("multimodal_intent", "Query", 311, 9.97),
        ("multimodal_intent", "Apologize", 58, 1.86),
        ("multimodal_sentiment", "negative", 1358, 43.55),
        ("sticker_class", "C-t", 1307, 41.92),
    ];
    let mut problems = Vec::new();
    if report.total != 3118 {
        problems.push(format!("total {} != 3118", report.total));
    }
    for (c, l, n, pct) in checks {
        let (got_n, got_pct) = (count(&report, c, l), percent(&report, c, l));
        if got_n != n || (got_pct - pct).abs() > 1e-9 {
            problems.push(format!("{c}/{l}: {got_n} ({got_pct}%) != {n} ({pct}%)"));
        }
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            "3118 records; Query 311 (9.97%), Apologize 58 (1.86%), Negative 1358 (43.55%), C-t 1307 (41.92%)".into()
        } else {
            problems.join("; ")
        },
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient correctness", gradient_correctness),
        ("equation oracle", equation_oracle),
        ("forced identities", forced_identities),
        ("overfit smoke test", overfit),
        ("metric oracle", metric_oracle),
        ("ablation contract", ablation_contract),
        ("task-grid contract", task_grid_contract),
        ("determinism", determinism),
        ("fixture statistics", fixture_stats),
        ("released dataset statistics", dataset_stats),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Outcome::Pass(d) => println!("PASS  {name}: {d} [{secs:.1}s]"),
            Outcome::Fail(d) => {
                failed += 1;
                println!("FAIL  {name}: {d} [{secs:.1}s]");
            }
            Outcome::Skip(d) => println!("SKIP  {name}: {d}"),
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
