use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use tsm_core::data::{DatasetSpec, Manifest, Modality};
use tsm_core::ensemble::{self, EnsembleMember, EnsembleSpec, PredictionSet};
use tsm_core::gradcheck;
use tsm_core::model::{Capacity, ModelConfig};
use tsm_core::pipeline::{self, Progress, RunConfig};
use tsm_core::train::{self, Checkpoint, EpochRecord, TrainConfig, TrainOptions};
use tsm_core::tsm::{temporal_shift, ShiftConfig};
use tsm_core::Tensor;

use crate::{
    usage, CapacityArg, Command, EnsembleArgs, EvalArgs, GenDataArgs, GradCheckArgs, ModalityArg,
    PredictArgs, ReportArgs, RunArgs, ShiftDemoArgs, TrainArgs,
};

pub fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Ensemble(a) => ensemble(a),
        Command::Eval(a) => eval(a),
        Command::Report(a) => report(a),
        Command::GradCheck(a) => grad_check(a),
        Command::ShiftDemo(a) => shift_demo(a),
        Command::Run(a) => run(a),
    }
    .map(|()| ExitCode::SUCCESS)
    .or_else(|e| match e.downcast::<Failed>() {
        Ok(_) => Ok(ExitCode::FAILURE),
        Err(e) => Err(e),
    })
}

/// A command that ran to completion but whose check did not pass.
#[derive(Debug)]
struct Failed;

impl std::fmt::Display for Failed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("check failed")
    }
}

impl std::error::Error for Failed {}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn modality(m: ModalityArg) -> Modality {
    match m {
        ModalityArg::Rgb => Modality::Rgb,
        ModalityArg::Ir => Modality::Ir,
    }
}

/// Keeps the records of one modality. A manifest without any is passed
/// through unchanged so that the modality check reports both sides.
fn select(manifest: Manifest, m: Modality) -> Manifest {
    if manifest.records.iter().any(|r| r.modality == m) {
        manifest.modality(m)
    } else {
        manifest
    }
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let cfg = RunConfig {
        seed: a.seed,
        data: DatasetSpec {
            num_classes: a.num_classes,
            clips_per_class: a.clips_per_class,
            test_clips_per_class: a.test_clips_per_class,
            ..DatasetSpec::default()
        },
        train_ratio: a.train_ratio,
        ..RunConfig::default()
    }
    .resolved();
    if !(a.train_ratio > 0.0 && a.train_ratio < 1.0) {
        return Err(usage(format!(
            "--train-ratio {} must lie strictly between 0 and 1",
            a.train_ratio
        )));
    }
    mkdir(&a.out)?;
    let splits = pipeline::prepare_data(&cfg, &a.out)?;
    write_json(
        &a.out.join("config.json"),
        &serde_json::json!({ "seed": cfg.seed, "data": cfg.data, "train_ratio": cfg.train_ratio }),
    )?;
    println!(
        "{} clips per modality: {} train, {} val, {} test",
        splits.all.len() / 2,
        splits.train.len() / 2,
        splits.val.len() / 2,
        splits.test.len() / 2
    );
    Ok(())
}

fn load_union(paths: &[PathBuf]) -> Result<Manifest> {
    let mut iter = paths.iter();
    let first = iter
        .next()
        .ok_or_else(|| usage("--train needs at least one manifest"))?;
    let mut out = Manifest::load(first)?;
    for p in iter {
        out = out.union(&Manifest::load(p)?);
    }
    Ok(out)
}

fn train(a: TrainArgs) -> Result<()> {
    let modality = modality(a.modality);
    let model_cfg = ModelConfig {
        num_classes: a.num_classes,
        in_channels: modality.channels(),
        num_segments: a.segments,
        capacity: match a.capacity {
            CapacityArg::Small => Capacity::Small,
            CapacityArg::Large => Capacity::Large,
        },
        dropout_rate: a.dropout,
        shift_enabled: !a.no_shift,
        fold_div: a.fold_div,
    };
    let defaults = TrainConfig::default();
    let mut train_cfg = TrainConfig {
        lr: a.lr.unwrap_or(defaults.lr),
        momentum: a.momentum.unwrap_or(defaults.momentum),
        weight_decay: a.weight_decay.unwrap_or(defaults.weight_decay),
        batch_size: a.batch_size.unwrap_or(defaults.batch_size),
        seed: a.seed,
        augment: !a.no_augment,
        log_wall_time: a.wall_time,
        ..defaults
    };
    if let Some(e) = a.epochs {
        match a.phase {
            1 => train_cfg.epochs_phase1 = e,
            _ => train_cfg.epochs_phase2 = e,
        }
    }
    let init = a.init_from.as_deref().map(Checkpoint::load).transpose()?;
    let train_set = select(load_union(&a.train)?, modality);
    mkdir(&a.out)?;
    let mut on_epoch = |r: &EpochRecord| {
        let val = r
            .val_top1
            .map(|v| format!(" val_top1={v:.4}"))
            .unwrap_or_default();
        eprintln!("epoch {} loss={:.4}{val}", r.epoch, r.train_loss);
    };
    let opts = TrainOptions {
        init_from: init.as_ref(),
        on_epoch: Some(&mut on_epoch),
    };
    let (ckpt, log) = match (a.phase, &a.val) {
        (1, Some(val)) => {
            let val = select(Manifest::load(val)?, modality);
            train::train_phase1(&model_cfg, &train_cfg, &train_set, &val, opts)?
        }
        (1, None) => return Err(usage("--phase 1 requires --val")),
        (_, Some(_)) => {
            return Err(usage(
                "--val conflicts with --phase 2, which trains on every --train manifest without validation",
            ))
        }
        (_, None) => train::train_phase2(&model_cfg, &train_cfg, &train_set, opts)?,
    };
    ckpt.save(&a.out.join("model.ckpt"))?;
    log.save(&a.out.join("log.csv"))?;
    write_json(
        &a.out.join("config.json"),
        &serde_json::json!({
            "phase": a.phase,
            "model": model_cfg,
            "train": train_cfg,
            "train_manifests": a.train,
            "val_manifest": a.val,
            "init_from": a.init_from,
        }),
    )?;
    if let Some(last) = log.records.last() {
        println!(
            "trained {} epochs, final loss {:.4}",
            last.epoch, last.train_loss
        );
    }
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let want = Modality::from_channels(ckpt.model_config.in_channels);
    let manifest = Manifest::load(&a.manifest)?;
    let manifest = match want {
        Some(m) => select(manifest, m),
        None => manifest,
    };
    let preds = train::predict(&ckpt, &manifest, a.batch_size)?;
    preds.save(&a.out)?;
    println!("{} predictions written to {}", preds.len(), a.out.display());
    Ok(())
}

fn ensemble(a: EnsembleArgs) -> Result<()> {
    if let Some(spec_path) = &a.spec {
        let spec = EnsembleSpec::load(spec_path)?;
        let base = spec_path.parent().unwrap_or(Path::new("."));
        let fused = spec.apply(base)?;
        fused.save(&a.out)?;
        return Ok(());
    }
    if a.preds.is_empty() {
        return Err(usage("--preds is required unless --spec is given"));
    }
    let sets = a
        .preds
        .iter()
        .map(|p| PredictionSet::load(p))
        .collect::<tsm_core::Result<Vec<_>>>()?;
    let refs: Vec<&PredictionSet> = sets.iter().collect();
    let weights = match (&a.weights, a.search) {
        (Some(w), _) => {
            if w.len() != sets.len() {
                return Err(usage(format!(
                    "--weights has {} values for {} --preds files",
                    w.len(),
                    sets.len()
                )));
            }
            w.clone()
        }
        (None, _) => {
            let labels_path = a
                .labels
                .as_ref()
                .ok_or_else(|| usage("--search requires --labels"))?;
            let labels = Manifest::load(labels_path)?.labels();
            let found = ensemble::search_weights(&refs, &labels, a.step)?;
            println!(
                "weights {:?} top1={:.4} top5={:.4}",
                found.weights, found.top1, found.top5
            );
            found.weights
        }
    };
    let pairs: Vec<_> = refs.iter().copied().zip(weights.iter().copied()).collect();
    let fused = ensemble::ensemble(&pairs)?;
    fused.save(&a.out)?;
    if let Some(spec_out) = &a.spec_out {
        // Absolute paths keep the ensemble file valid wherever it is written.
        let mut members = Vec::with_capacity(weights.len());
        for (p, &weight) in a.preds.iter().zip(&weights) {
            let abs = fs::canonicalize(p).with_context(|| format!("resolving {}", p.display()))?;
            members.push(EnsembleMember {
                path: abs.to_string_lossy().into_owned(),
                weight,
            });
        }
        let spec = EnsembleSpec { members };
        spec.save(spec_out)?;
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let preds = PredictionSet::load(&a.preds)?;
    let labels = Manifest::load(&a.labels)?.labels();
    let top1 = ensemble::topk_accuracy(&preds, &labels, 1)?;
    let top5 = ensemble::topk_accuracy(&preds, &labels, 5)?;
    println!("top1 {top1:.4}");
    println!("top5 {top5:.4}");
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let labels = Manifest::load(&a.labels)?.labels();
    let mut loaded = Vec::with_capacity(a.rows.len());
    for row in &a.rows {
        let (name, path) = row
            .split_once('=')
            .ok_or_else(|| usage(format!("--row {row:?} is not of the form name=path")))?;
        loaded.push((name.to_string(), PredictionSet::load(Path::new(path))?));
    }
    let rows: Vec<(String, &PredictionSet)> = loaded.iter().map(|(n, p)| (n.clone(), p)).collect();
    let table = ensemble::report(&rows, &labels)?;
    if a.csv {
        print!("{}", table.render_csv());
    } else {
        print!("{}", table.render_text());
    }
    Ok(())
}

fn grad_check(a: GradCheckArgs) -> Result<()> {
    let results = gradcheck::run_all(a.seed)?;
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut ok = true;
    for r in &results {
        let pass = r.max_rel_error < gradcheck::MODEL_TOLERANCE;
        ok &= pass;
        println!(
            "{:<width$}  {:.3e}  {:>5}  {}",
            r.name,
            r.max_rel_error,
            r.entries,
            if pass { "ok" } else { "FAIL" }
        );
    }
    if ok {
        Ok(())
    } else {
        Err(Failed.into())
    }
}

fn shift_demo(a: ShiftDemoArgs) -> Result<()> {
    let cfg = ShiftConfig::new(a.segments, a.fold_div);
    let (t, c) = (a.segments, a.channels);
    // Value 10*c + t + 1 marks channel c at time t.
    let x = Tensor::<f64>::from_fn(&[t, c, 1, 1], |i| (10 * (i % c) + i / c + 1) as f64);
    let y = temporal_shift(&x, &cfg)?;
    let f = cfg.fold(c);
    println!(
        "T={t} C={c} fold_div={} (shifted channels per direction: {f})",
        a.fold_div
    );
    for ch in 0..c {
        let seq = |v: &Tensor<f64>| {
            (0..t)
                .map(|s| format!("{:>3}", v.data()[s * c + ch]))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let tag = if ch < f {
            "from t+1"
        } else if ch < 2 * f {
            "from t-1"
        } else {
            "unchanged"
        };
        println!("channel {ch}: [{}] -> [{}]  {tag}", seq(&x), seq(&y));
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let cfg = cfg.resolved();
    if a.print_config {
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        return Ok(());
    }
    let out = a.out.expect("clap requires --out without --print-config");
    let quiet = a.quiet;
    let mut progress = |p: Progress<'_>| match p {
        Progress::Stage(s) => eprintln!("== {s}"),
        Progress::Epoch {
            member,
            phase,
            record,
        } if !quiet => {
            let val = record
                .val_top1
                .map(|v| format!(" val_top1={v:.4}"))
                .unwrap_or_default();
            eprintln!(
                "{member} phase {phase} epoch {} loss={:.4}{val}",
                record.epoch, record.train_loss
            );
        }
        Progress::Epoch { .. } => {}
    };
    let summary = pipeline::run(&cfg, &out, &mut progress)?;
    println!("ensemble weights {:?}", summary.weights.weights);
    println!("validation");
    print!("{}", summary.val_report.render_text());
    println!("test");
    print!("{}", summary.test_report.render_text());
    Ok(())
}
