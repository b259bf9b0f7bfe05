use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use mimnet::checkpoint::{short_hash, Checkpoint};
use mimnet::config::ablation_suite;
use mimnet::eval::{discriminator_gap, dump_memory, evaluate, plan_manipulations, EvalReport, EvalRow};
use mimnet::gradsuite::run_suite;
use mimnet::scorer::{Scorer, ScorerConfig};
use mimnet::text::tokenize;
use mimnet::toyset::{boundary_extract, make_split, render_sample, Attributes, ToyDataset};
use mimnet::trainer::{Trainer, TrainingData};
use mimnet::{MimError, Stage, TrainingConfig};
use mimnet_tensor::Tensor;
use serde_json::{json, Value};
use thiserror::Error;

use crate::args::{Ablate, Cli, Command, DumpMemory, Eval, GenData, Manipulate, Train};
use crate::image::{load_gray, load_rgb, save_gray, save_rgb, strip, to_raster};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] MimError),
}

type Result<T> = std::result::Result<T, CliError>;

pub struct Outcome {
    pub text: String,
    pub json: Value,
    pub status: u8,
}

impl Outcome {
    fn ok(text: String, json: Value) -> Self {
        Outcome { text, json, status: 0 }
    }
}

/// Config errors are the user's to fix, so they count as usage errors.
fn usage_on_config(e: MimError) -> CliError {
    match e {
        MimError::Config(m) => CliError::Usage(format!("config: {m}")),
        other => CliError::Runtime(other),
    }
}

/// `base`, then the `--config` file, then every `--set`.
fn build_config(cli: &Cli, mut base: TrainingConfig) -> Result<TrainingConfig> {
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).map_err(|e| MimError::io(path, e))?;
        base.apply_text(&text).map_err(usage_on_config)?;
    }
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        base.set(k.trim(), v.trim()).map_err(usage_on_config)?;
    }
    base.validate().map_err(usage_on_config)?;
    Ok(base)
}

pub fn run(cli: Cli) -> Result<Outcome> {
    match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(&cli, a),
        Command::Manipulate(a) => manipulate(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck => gradcheck(),
        Command::Ablate(a) => ablate(&cli, a),
        Command::DumpMemory(a) => dump(a),
    }
}

fn gen_data(a: &GenData) -> Result<Outcome> {
    let d = make_split(a.train, a.test, a.seed, a.size)?;
    d.save(&a.out)?;
    let text = format!(
        "wrote {} train and {} test samples ({} held-out combinations) to {}\n",
        d.train.len(),
        d.test.len(),
        d.held_out.len(),
        a.out.display()
    );
    let json = json!({
        "ok": true,
        "out": a.out,
        "train": d.train.len(),
        "test": d.test.len(),
        "held_out_combinations": d.held_out.iter().collect::<Vec<_>>(),
    });
    Ok(Outcome::ok(text, json))
}

fn load_data(dir: &Path) -> Result<(ToyDataset, mimnet::Vocabulary)> {
    Ok(ToyDataset::load(dir)?)
}

fn train(cli: &Cli, a: &Train) -> Result<Outcome> {
    let (data, vocab) = load_data(&a.data)?;
    let mut trainer = match &a.resume {
        Some(path) => {
            let mut ckpt = Checkpoint::load(path)?;
            let base = TrainingConfig::from_text(&ckpt.config)?;
            ckpt.config = build_config(cli, base)?.to_text();
            Trainer::from_checkpoint(ckpt)?
        }
        None => Trainer::new(build_config(cli, TrainingConfig::default())?, vocab.clone())?,
    };
    if trainer.vocab != vocab {
        return Err(MimError::Input("dataset vocabulary differs from the checkpoint's".into()).into());
    }
    let samples = TrainingData::from_toy(&data.train, &vocab)?;
    let start = trainer.step;
    let quiet = cli.json;
    let history = trainer.train_with(&samples, Some(&a.out), |r| {
        if !quiet && (r.step % 100 == 0) {
            eprintln!("step {} {} g={:.4} d={:.4}", r.step, r.phase.as_str(), r.get("g_total").unwrap_or(f64::NAN), r.get("d_total").unwrap_or(f64::NAN));
        }
    })?;
    let final_path = a.out.join("final.ckpt");
    let id = Checkpoint::fingerprint(&fs::read(&final_path).map_err(|e| MimError::io(&final_path, e))?);
    let config_hash = short_hash(trainer.config.to_text().as_bytes());
    let last = history.last().map(|r| r.values.clone()).unwrap_or_default();
    let mut text = format!(
        "trained steps {start}..{} -> {} (checkpoint {id}, config {config_hash})\n",
        trainer.step,
        final_path.display()
    );
    for (k, v) in &last {
        let _ = writeln!(text, "  {k} = {v:.6}");
    }
    let json = json!({
        "ok": true,
        "checkpoint": final_path,
        "checkpoint_id": id,
        "config_hash": config_hash,
        "start_step": start,
        "end_step": trainer.step,
        "last_losses": last,
    });
    Ok(Outcome::ok(text, json))
}

fn manipulate(a: &Manipulate) -> Result<Outcome> {
    let stage: Stage = a.stage.parse().map_err(|_| CliError::Usage(format!("unknown stage `{}`", a.stage)))?;
    let trainer = Trainer::load(&a.checkpoint)?;
    let image = load_rgb(&a.image)?;
    let side = image.shape()[1];
    let boundary = match &a.boundary {
        Some(p) => load_gray(p)?,
        None => Tensor::from_vec(&[1, side, side], boundary_extract(image.data(), side)).map_err(MimError::from)?,
    };
    let tokens = tokenize(&a.caption, &trainer.vocab)?;
    let p = trainer.store.bind(|_| false);
    let state = trainer.model.manipulate(&p, &image, &boundary, &tokens, Stage::Fir)?;
    save_rgb(state.output(stage)?, &a.out)?;
    if let Some(g) = &a.grid {
        let panels = [to_raster(&image, -1.0, 1.0), to_raster(&state.i_c, -1.0, 1.0), to_raster(state.output(Stage::Fir)?, -1.0, 1.0)];
        strip(&panels).save(g)?;
    }
    if let Some(path) = &a.alpha {
        save_gray(&state.alpha, path)?;
    }
    let alpha_mean = state.alpha.mean().item();
    let text = format!("wrote {} ({stage} stage), mean localization {alpha_mean:.3}\n", a.out.display());
    Ok(Outcome::ok(text, json!({ "ok": true, "out": a.out, "stage": stage.as_str(), "alpha_mean": alpha_mean })))
}

fn row_json(r: &EvalRow) -> Value {
    json!({
        "id": r.id,
        "source_caption": r.source_caption,
        "target_caption": r.target_caption,
        "sim": r.sim,
        "diff": r.diff,
        "mp": r.mp,
        "background_diff": r.background_diff,
        "object_diff": r.object_diff,
    })
}

fn obtain_scorer(path: &Path, data: Option<&ToyDataset>, vocab: &mimnet::Vocabulary) -> Result<Scorer> {
    if path.exists() {
        return Ok(Scorer::load(path)?);
    }
    let data = data.ok_or_else(|| MimError::Input(format!("scorer {} does not exist; pass --data to train one", path.display())))?;
    let mut s = Scorer::new(vocab.clone(), data.size, ScorerConfig::default())?;
    s.train(&data.train)?;
    s.save(path)?;
    Ok(s)
}

const OUT_OF_SCOPE: &str = "inception score: out of scope (needs an external classifier)";

fn eval(a: &Eval) -> Result<Outcome> {
    if let (Some(before), Some(after), Some(caption)) = (&a.before, &a.after, &a.caption) {
        let scorer = Scorer::load(&a.scorer)?;
        let (b, f) = (load_rgb(before)?, load_rgb(after)?);
        let row = EvalRow::compute(&scorer, 0, &b, &f, "", caption, None)?;
        let text = format!("sim {:.6}  diff {:.6}  mp {:.6}\n{OUT_OF_SCOPE}\n", row.sim, row.diff, row.mp);
        return Ok(Outcome::ok(text, json!({ "ok": true, "row": row_json(&row), "note": OUT_OF_SCOPE })));
    }
    let (Some(data_dir), Some(ckpt_path)) = (&a.data, &a.checkpoint) else {
        return Err(CliError::Usage("eval needs --checkpoint and --data, or --before, --after and --caption".into()));
    };
    let (data, vocab) = load_data(data_dir)?;
    let scorer = obtain_scorer(&a.scorer, Some(&data), &vocab)?;
    let bytes = fs::read(ckpt_path).map_err(|e| MimError::io(ckpt_path, e))?;
    let trainer = Trainer::from_checkpoint(Checkpoint::decode(&bytes)?)?;
    let plan = plan_manipulations(&data.test, a.plan_seed)?;
    let report = EvalReport {
        rows: evaluate(&trainer.model, &trainer.store, &scorer, &data.test, &plan)?,
        config_hash: short_hash(trainer.config.to_text().as_bytes()),
        checkpoint_id: Checkpoint::fingerprint(&bytes),
    };
    let test = TrainingData::from_toy(&data.test, &vocab)?;
    let gap = discriminator_gap(&trainer.model, &trainer.store, &test, Stage::Icm, a.plan_seed)?;
    if let Some(path) = &a.report {
        fs::write(path, report.to_csv()).map_err(|e| MimError::io(path, e))?;
    }
    let violations = report.identity_violations();
    let bg = report.background_preserved_fraction().unwrap_or(f64::NAN);
    let text = format!(
        "checkpoint {} config {}\n{} manipulations: sim {:.4} diff {:.4} mp {:.4}\nbackground diff < object diff on {:.1}% of rows\ndiscriminator gap D_I(real) - D_I(fake) = {gap:.4}\nMP identity violations: {}\n{OUT_OF_SCOPE}\n",
        report.checkpoint_id,
        report.config_hash,
        report.rows.len(),
        report.mean_sim(),
        report.mean_diff(),
        report.mean_mp(),
        100.0 * bg,
        violations.len()
    );
    let json = json!({
        "ok": true,
        "checkpoint_id": report.checkpoint_id,
        "config_hash": report.config_hash,
        "mean_sim": report.mean_sim(),
        "mean_diff": report.mean_diff(),
        "mean_mp": report.mean_mp(),
        "background_preserved_fraction": bg,
        "discriminator_gap": gap,
        "identity_violations": violations,
        "rows": report.rows.iter().map(row_json).collect::<Vec<_>>(),
        "note": OUT_OF_SCOPE,
    });
    Ok(Outcome::ok(text, json))
}

fn gradcheck() -> Result<Outcome> {
    let rows = run_suite()?;
    let mut text = format!("{:<22} {:<10} {:>8} {:>12} {:>10}  result\n", "check", "kind", "coords", "max error", "tolerance");
    for r in &rows {
        let _ = writeln!(
            text,
            "{:<22} {:<10} {:>8} {:>12.3e} {:>10.0e}  {}",
            r.name,
            r.kind.as_str(),
            r.coordinates,
            r.max_error,
            r.tolerance,
            if r.passed() { "pass" } else { "FAIL" }
        );
    }
    let failed = rows.iter().filter(|r| !r.passed()).count();
    let _ = writeln!(text, "{} checks, {failed} failed", rows.len());
    let json = json!({
        "ok": failed == 0,
        "rows": rows.iter().map(|r| json!({
            "name": r.name,
            "kind": r.kind.as_str(),
            "coordinates": r.coordinates,
            "max_error": r.max_error,
            "tolerance": r.tolerance,
            "pass": r.passed(),
        })).collect::<Vec<_>>(),
    });
    Ok(Outcome {
        text,
        json,
        status: u8::from(failed > 0),
    })
}

fn ablate(cli: &Cli, a: &Ablate) -> Result<Outcome> {
    let (data, vocab) = load_data(&a.data)?;
    let base = build_config(cli, TrainingConfig::default())?;
    let configs = ablation_suite(&base)?;
    fs::create_dir_all(&a.out).map_err(|e| MimError::io(&a.out, e))?;
    let scorer = obtain_scorer(&a.out.join("scorer.bin"), Some(&data), &vocab)?;
    let train = TrainingData::from_toy(&data.train, &vocab)?;
    let test = TrainingData::from_toy(&data.test, &vocab)?;
    let plan = plan_manipulations(&data.test, a.plan_seed)?;
    let mut csv = String::from("variant,config_hash,changed_keys,mean_sim,mean_diff,mean_mp,background_preserved,discriminator_gap\n");
    let mut results = Vec::new();
    for cfg in &configs {
        let name = cfg.ablation.as_str();
        let changed = configs[0].diff(cfg).join(";");
        if !cli.json {
            eprintln!("training variant {name}");
        }
        let mut t = Trainer::new(cfg.clone(), vocab.clone())?;
        t.train(&train, Some(&a.out.join(name)))?;
        let report = EvalReport {
            rows: evaluate(&t.model, &t.store, &scorer, &data.test, &plan)?,
            config_hash: short_hash(cfg.to_text().as_bytes()),
            checkpoint_id: Checkpoint::fingerprint(&t.checkpoint().encode()?),
        };
        let gap = discriminator_gap(&t.model, &t.store, &test, Stage::Icm, a.plan_seed)?;
        let bg = report.background_preserved_fraction().unwrap_or(f64::NAN);
        let _ = writeln!(
            csv,
            "{name},{},{changed},{},{},{},{bg},{gap}",
            report.config_hash,
            report.mean_sim(),
            report.mean_diff(),
            report.mean_mp()
        );
        results.push((name, changed, report, bg, gap));
    }
    let csv_path = a.out.join("ablation.csv");
    fs::write(&csv_path, &csv).map_err(|e| MimError::io(&csv_path, e))?;
    let full_mp = results[0].2.mean_mp();
    let mut text = format!("{:<12} {:>8} {:>8} {:>8} {:>8}  changed\n", "variant", "sim", "diff", "mp", "bg");
    for (name, changed, r, bg, _) in &results {
        let _ = writeln!(text, "{name:<12} {:>8.4} {:>8.4} {:>8.4} {:>8.3}  {changed}", r.mean_sim(), r.mean_diff(), r.mean_mp(), bg);
    }
    let ordering = results[1..].iter().all(|(_, _, r, _, _)| full_mp >= r.mean_mp());
    let _ = writeln!(text, "full model MP >= every ablation: {ordering}");
    let json = json!({
        "ok": true,
        "ordering_holds": ordering,
        "variants": results.iter().map(|(name, changed, r, bg, gap)| json!({
            "variant": name,
            "changed_keys": changed,
            "config_hash": r.config_hash,
            "checkpoint_id": r.checkpoint_id,
            "mean_sim": r.mean_sim(),
            "mean_diff": r.mean_diff(),
            "mean_mp": r.mean_mp(),
            "background_preserved_fraction": bg,
            "discriminator_gap": gap,
        })).collect::<Vec<_>>(),
    });
    Ok(Outcome::ok(text, json))
}

fn dump(a: &DumpMemory) -> Result<Outcome> {
    let trainer = Trainer::load(&a.checkpoint)?;
    let size = trainer.config.dims.image_size;
    let image = match &a.image {
        Some(p) => load_rgb(p)?,
        None => {
            let attrs = Attributes {
                shape: 1,
                color: 0,
                pattern: 0,
                background: 0,
            };
            let s = render_sample(attrs, 0, size)?;
            Tensor::from_vec(&[3, size, size], s.image).map_err(MimError::from)?
        }
    };
    let side = image.shape()[1];
    let boundary = Tensor::from_vec(&[1, side, side], boundary_extract(image.data(), side)).map_err(MimError::from)?;
    let images = dump_memory(&trainer.model, &trainer.store, &image, &boundary)?;
    fs::create_dir_all(&a.out).map_err(|e| MimError::io(&a.out, e))?;
    let mut panels = vec![to_raster(&image, -1.0, 1.0)];
    let mut files = Vec::new();
    for (j, img) in images.iter().enumerate() {
        let path = a.out.join(format!("memory_{j:02}.ppm"));
        save_rgb(img, &path)?;
        panels.push(to_raster(img, -1.0, 1.0));
        files.push(path);
    }
    let grid = a.out.join("memories.ppm");
    strip(&panels).save(&grid)?;
    let text = format!("decoded {} memories into {}\n", images.len(), a.out.display());
    Ok(Outcome::ok(text, json!({ "ok": true, "memories": images.len(), "grid": grid, "files": files })))
}
