//! One PASS/FAIL line per acceptance criterion.
//!
//! Runs without the libtest harness. Pass criterion numbers as arguments
//! (`cargo test --test acceptance -- 2 3`) to run a subset. Criterion 6
//! trains five models for 2000 steps each and dominates the runtime.
//!
//! The process fails when any deterministic criterion (1-5, 7, 8) fails.
//! Criterion 6 is a training outcome; its lines are reported as measured and
//! do not change the exit status.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::oracle;
use mimnet::checkpoint::Checkpoint;
use mimnet::config::ablation_suite;
use mimnet::eval::{discriminator_gap, evaluate, metric_mp, plan_manipulations, EvalReport};
use mimnet::gradsuite::{self, Kind};
use mimnet::memory::{sample_random_attention, BANK};
use mimnet::scorer::{Scorer, ScorerConfig};
use mimnet::toyset::{make_split, vocabulary};
use mimnet::trainer::{Trainer, TrainingData};
use mimnet::{Stage, TrainingConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

const PRIMITIVE_REL: f64 = 1e-6;
const COMPOSITE_REL: f64 = 1e-4;
const GRAD_BUDGET: Duration = Duration::from_secs(5 * 60);
const ORACLE_TOL: f64 = 1e-10;
const ORACLE_INSTANCES: u64 = 20;
const MP_ROUNDING: f64 = 0.0005;
const OVERFIT_BUDGET: Duration = Duration::from_secs(10 * 60);
const TOY_STEPS: usize = 2000;
const TOY_BATCH: usize = 16;
const TOY_BUDGET: Duration = Duration::from_secs(30 * 60);
const BACKGROUND_SHARE: f64 = 0.70;
const SAMPLER_DRAWS: usize = 16_000;
const SAMPLER_P: f64 = 0.01;

struct Line {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn line(id: &'static str, pass: bool, detail: String) -> Line {
    let l = Line { id, pass, detail };
    println!("criterion {:<3} {}  {}", l.id, if l.pass { "PASS" } else { "FAIL" }, l.detail);
    l
}

fn gradient_suite() -> Vec<Line> {
    let start = Instant::now();
    let rows = gradsuite::run_suite().unwrap();
    let elapsed = start.elapsed();
    let worst = |k: Kind| rows.iter().filter(|r| r.kind == k).map(|r| r.max_error).fold(0.0, f64::max);
    let (p, c) = (worst(Kind::Primitive), worst(Kind::Composite));
    let failing: Vec<&str> = rows.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    let pass = p <= PRIMITIVE_REL && c <= COMPOSITE_REL && failing.is_empty() && elapsed < GRAD_BUDGET;
    vec![line(
        "1",
        pass,
        format!(
            "gradient suite: {} checks, worst primitive {p:.2e} (<= {PRIMITIVE_REL:e}), worst composite {c:.2e} (<= {COMPOSITE_REL:e}), {:.1} s (< {} s){}",
            rows.len(),
            elapsed.as_secs_f64(),
            GRAD_BUDGET.as_secs(),
            if failing.is_empty() { String::new() } else { format!(", failing {failing:?}") }
        ),
    )]
}

fn loop_oracles() -> Vec<Line> {
    let checks: [(&str, fn(u64) -> oracle::Errors); 5] = [
        ("fuse_memory", oracle::fuse_memory_errors),
        ("tlu", oracle::tlu_errors),
        ("icm_forward", oracle::icm_errors),
        ("fir_forward", oracle::fir_errors),
        ("text_conformity_score", oracle::discriminator_errors),
    ];
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, f) in checks {
        let worst = (0..ORACLE_INSTANCES).flat_map(f).map(|(_, e)| e).fold(0.0, f64::max);
        pass &= worst <= ORACLE_TOL;
        parts.push(format!("{name} {worst:.1e}"));
    }
    vec![line(
        "2",
        pass,
        format!("loop oracles over {ORACLE_INSTANCES} instances each, max abs error <= {ORACLE_TOL:e}: {}", parts.join(", ")),
    )]
}

fn small_data(train: usize) -> TrainingData {
    let d = make_split(train, 8, 3, 32).unwrap();
    TrainingData::from_toy(&d.train, &vocabulary()).unwrap()
}

fn small_config(steps: usize) -> TrainingConfig {
    TrainingConfig {
        steps,
        batch_size: 4,
        seed: 9,
        ..TrainingConfig::default()
    }
}

fn bank_bits(t: &Trainer) -> Vec<u64> {
    t.store.get(BANK).unwrap().value.iter().map(|v| v.to_bits()).collect()
}

fn freeze_invariant() -> Vec<Line> {
    let data = small_data(32);
    let mut t = Trainer::new(small_config(0), vocabulary()).unwrap();
    let before = bank_bits(&t);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let batch = t.sample_batch(&data, &mut rng);
        t.adversarial_step(&data, &batch, &mut rng).unwrap();
    }
    let frozen = bank_bits(&t) == before;
    let batch = t.sample_batch(&data, &mut rng);
    t.reconstruction_step(&data, &batch, &mut rng).unwrap();
    let after = bank_bits(&t);
    let changed = after.iter().zip(&before).filter(|(a, b)| a != b).count();
    vec![line(
        "3",
        frozen && changed > 0,
        format!("memory bitwise unchanged over 100 adversarial steps: {frozen}; entries changed by 1 reconstruction step: {changed}/{}", after.len()),
    )]
}

fn mp_table() -> Vec<Line> {
    let full = metric_mp(0.171, 0.190).unwrap();
    let prior = metric_mp(0.101, 0.281).unwrap();
    let ok_full = (full - 0.139).abs() <= MP_ROUNDING;
    let ok_prior = (0.072 - MP_ROUNDING..=0.073 + MP_ROUNDING).contains(&prior);
    vec![line(
        "4",
        ok_full && ok_prior,
        format!("MP(0.171, 0.190) = {full:.4} (0.139 +/- {MP_ROUNDING}), MP(0.101, 0.281) = {prior:.4} (0.072-0.073 +/- {MP_ROUNDING})"),
    )]
}

fn overfit() -> Vec<Line> {
    let start = Instant::now();
    let r = common::overfit_four(500);
    let elapsed = start.elapsed();
    let drop = 1.0 - r.within_50 / r.first;
    let gain = 1.0 - r.final_l2 / r.baseline_l2;
    vec![line(
        "5",
        drop >= 0.30 && gain >= 0.50 && elapsed < OVERFIT_BUDGET,
        format!(
            "4-sample overfit: reconstruction loss -{:.1}% within 50 steps (>= 30%), fine L2 {:.4} -> {:.4} = -{:.1}% after 500 steps (>= 50%), {:.0} s (< {} s)",
            100.0 * drop,
            r.baseline_l2,
            r.final_l2,
            100.0 * gain,
            elapsed.as_secs_f64(),
            OVERFIT_BUDGET.as_secs()
        ),
    )]
}

struct Variant {
    name: String,
    mp: f64,
    background: f64,
    gap: f64,
    elapsed: Duration,
}

fn toy_run() -> Vec<Line> {
    let d = make_split(1024, 128, 0, 32).unwrap();
    let vocab = vocabulary();
    let train = TrainingData::from_toy(&d.train, &vocab).unwrap();
    let test = TrainingData::from_toy(&d.test, &vocab).unwrap();
    let mut scorer = Scorer::new(vocab.clone(), d.size, ScorerConfig::default()).unwrap();
    scorer.train(&d.train).unwrap();
    let plan = plan_manipulations(&d.test, 0).unwrap();
    let base = TrainingConfig {
        steps: TOY_STEPS,
        batch_size: TOY_BATCH,
        ..TrainingConfig::default()
    };
    let mut variants = Vec::new();
    for cfg in ablation_suite(&base).unwrap() {
        let start = Instant::now();
        let mut t = Trainer::new(cfg.clone(), vocab.clone()).unwrap();
        t.train(&train, None).unwrap();
        let elapsed = start.elapsed();
        let report = EvalReport {
            rows: evaluate(&t.model, &t.store, &scorer, &d.test, &plan).unwrap(),
            config_hash: String::new(),
            checkpoint_id: String::new(),
        };
        let v = Variant {
            name: cfg.ablation.as_str().to_string(),
            mp: report.mean_mp(),
            background: report.background_preserved_fraction().unwrap_or(0.0),
            gap: discriminator_gap(&t.model, &t.store, &test, Stage::Icm, 0).unwrap(),
            elapsed,
        };
        println!(
            "    variant {:<12} mp {:.4}  sim {:.4}  diff {:.4}  background preserved {:.1}%  D_I gap {:.4}  {:.0} s",
            v.name,
            v.mp,
            report.mean_sim(),
            report.mean_diff(),
            100.0 * v.background,
            v.gap,
            v.elapsed.as_secs_f64()
        );
        variants.push(v);
    }
    let full = &variants[0];
    let losers: Vec<String> = variants[1..].iter().filter(|v| v.mp > full.mp).map(|v| format!("{} {:.4}", v.name, v.mp)).collect();
    let others: Vec<String> = variants[1..].iter().map(|v| format!("{} {:.4}", v.name, v.mp)).collect();
    vec![
        line(
            "6",
            full.elapsed < TOY_BUDGET,
            format!("toy run: {TOY_STEPS} steps at batch {TOY_BATCH} in {:.0} s (< {} s)", full.elapsed.as_secs_f64(), TOY_BUDGET.as_secs()),
        ),
        line("6a", full.gap > 0.0, format!("D_I(real) - D_I(fake) = {:.4} (> 0)", full.gap)),
        line(
            "6b",
            full.background >= BACKGROUND_SHARE,
            format!(
                "background Diff < object Diff on {:.1}% of {} held-out manipulations (>= {:.0}%)",
                100.0 * full.background,
                plan.len(),
                100.0 * BACKGROUND_SHARE
            ),
        ),
        line(
            "6c",
            losers.is_empty(),
            format!(
                "full model MP {:.4} >= every single ablation [{}]{}",
                full.mp,
                others.join(", "),
                if losers.is_empty() { String::new() } else { format!("; exceeded by {}", losers.join(", ")) }
            ),
        ),
    ]
}

fn determinism() -> Vec<Line> {
    let data = small_data(16);
    let run = |seed: u64| {
        let mut t = Trainer::new(TrainingConfig { seed, ..small_config(6) }, vocabulary()).unwrap();
        let log: Vec<String> = t.train(&data, None).unwrap().iter().map(|r| r.csv_row()).collect();
        (t.checkpoint().encode().unwrap(), log)
    };
    let (a, la) = run(9);
    let (b, lb) = run(9);
    let identical = a == b && la == lb;

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let mut t = Trainer::new(small_config(4), vocabulary()).unwrap();
    t.train(&data, None).unwrap();
    t.checkpoint().save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    let lossless = back == t.checkpoint() && back.params.bitwise_eq(&t.store);

    let mut straight = Trainer::new(small_config(8), vocabulary()).unwrap();
    straight.train(&data, None).unwrap();
    let run_dir = tempfile::tempdir().unwrap();
    let mut first = Trainer::new(TrainingConfig { checkpoint_every: 3, ..small_config(3) }, vocabulary()).unwrap();
    first.train(&data, Some(run_dir.path())).unwrap();
    let mut resumed = Trainer::load(&run_dir.path().join("step_3.ckpt")).unwrap();
    resumed.config.steps = 8;
    resumed.train(&data, None).unwrap();
    let resume_equal = resumed.store.bitwise_eq(&straight.store) && resumed.adam == straight.adam;

    vec![line(
        "7",
        identical && lossless && resume_equal,
        format!("same-seed runs bit-identical: {identical}; checkpoint round-trip lossless: {lossless}; resume at step 3 equals 8 uninterrupted steps: {resume_equal}"),
    )]
}

fn sampler() -> Vec<Line> {
    let n = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut counts = vec![0usize; n];
    for _ in 0..SAMPLER_DRAWS {
        let row = sample_random_attention(n, &mut rng);
        counts[row.iter().position(|&v| v == 1.0).unwrap()] += 1;
    }
    let expected = SAMPLER_DRAWS as f64 / n as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new((n - 1) as f64).unwrap().cdf(stat);
    vec![line(
        "8",
        p > SAMPLER_P,
        format!("random-memory sampler over {n} memories, {SAMPLER_DRAWS} draws: chi-square {stat:.2}, p = {p:.4} (> {SAMPLER_P})"),
    )]
}

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |n: u32| wanted.is_empty() || wanted.contains(&n);
    let criteria: [(u32, fn() -> Vec<Line>); 8] = [
        (1, gradient_suite),
        (2, loop_oracles),
        (3, freeze_invariant),
        (4, mp_table),
        (5, overfit),
        (7, determinism),
        (8, sampler),
        (6, toy_run),
    ];
    let mut hard_failures = Vec::new();
    let mut reported = Vec::new();
    for (n, f) in criteria {
        if !run(n) {
            continue;
        }
        for l in f() {
            if l.pass {
                continue;
            }
            if n == 6 {
                reported.push(l.id);
            } else {
                hard_failures.push(l.id);
            }
        }
    }
    if !reported.is_empty() {
        println!("training-outcome criteria not met: {reported:?}");
    }
    if hard_failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {hard_failures:?}");
        ExitCode::FAILURE
    }
}
