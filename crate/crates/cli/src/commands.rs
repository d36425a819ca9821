//! `check`, `train` and `eval`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tkg_core::checkpoint::{Checkpoint, CheckpointHeader};
use tkg_core::data::Split;
use tkg_core::eval::{evaluate, reports_to_csv, EvalOptions, MetricReport};
use tkg_core::model::ModelParams;
use tkg_core::training::{final_training_state, fit, EpochStats, TrainConfig};

use crate::dataset::{self, default_history, resolve_dir, static_by_default, FALLBACK_HISTORY, NAMES_FILE};
use crate::error::{CliError, Result};
use crate::manifest::{EvalSettings, PhaseClock, RunManifest, MANIFEST_FILE};
use crate::{CheckArgs, DataArgs, EvalArgs, TrainArgs};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CURVE_FILE: &str = "curve.csv";
pub const METRICS_FILE: &str = "metrics.csv";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn require_data(args: &DataArgs) -> Result<&str> {
    args.data
        .as_deref()
        .ok_or_else(|| CliError::Usage("--data is required".into()))
}

#[derive(Serialize)]
struct DatasetStats {
    dir: PathBuf,
    num_entities: usize,
    num_relations: usize,
    snapshots: [usize; 3],
    facts: [usize; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    static_properties: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    static_edges: Option<usize>,
}

pub fn check(args: CheckArgs) -> Result<()> {
    let name = require_data(&args.data)?;
    let dir = resolve_dir(name, &args.data.data_root)?;
    let names = args.data.names.clone().or_else(|| {
        let p = dir.join(NAMES_FILE);
        p.is_file().then_some(p)
    });
    let loaded = dataset::load(name, &dir, names.as_deref())?;
    let store = &loaded.store;
    let graph = dataset::static_graph(&loaded.names);
    let splits = [Split::Train, Split::Valid, Split::Test];
    let stats = DatasetStats {
        dir: dir.clone(),
        num_entities: store.num_entities,
        num_relations: store.num_relations,
        snapshots: splits.map(|s| store.split_range(s).len()),
        facts: splits.map(|s| store.base_fact_count(s)),
        static_properties: graph.as_ref().map(|g| g.num_properties()),
        static_edges: graph.as_ref().map(|g| g.edges.len()),
    };
    if args.json {
        println!("{}", serde_json::to_string_pretty(&stats)?);
        return Ok(());
    }
    println!("dataset      {}", dir.display());
    println!("entities     {}", stats.num_entities);
    println!("relations    {}", stats.num_relations);
    for (i, s) in splits.iter().enumerate() {
        println!(
            "{:<12} {} facts over {} timestamps",
            s.name(),
            stats.facts[i],
            stats.snapshots[i]
        );
    }
    match (stats.static_properties, stats.static_edges) {
        (Some(p), Some(e)) => println!("static graph {p} property entities, {e} edges"),
        _ => println!("static graph none (no names file)"),
    }
    println!("fingerprint  {}", loaded.info.fingerprint);
    Ok(())
}

/// Training configuration from flags, with `history` already resolved.
pub fn train_config(args: &TrainArgs, history: usize) -> TrainConfig {
    TrainConfig {
        dim: args.dim,
        layers: args.layers,
        history,
        gamma: args.gamma,
        lambda1: args.lambda1,
        lambda2: args.lambda2,
        lr: args.lr,
        dropout: args.dropout,
        epochs: args.epochs,
        seed: args.seed,
        task: args.task,
        static_constraint: false,
        time_gate: !args.no_time_gate,
        grad_clip: (args.grad_clip > 0.0).then_some(args.grad_clip),
        patience: args.patience,
        kernels: args.kernels,
        kernel_width: args.kernel_width,
    }
}

/// Everything `train` needs before it touches the data.
struct TrainPlan {
    name: String,
    dir: PathBuf,
    cfg: TrainConfig,
    names: Option<PathBuf>,
    expected_fingerprint: Option<String>,
}

fn plan_from_flags(args: &TrainArgs) -> Result<TrainPlan> {
    let name = require_data(&args.data)?.to_string();
    let history = args
        .history
        .or_else(|| default_history(&name))
        .unwrap_or(FALLBACK_HISTORY);
    let mut cfg = train_config(args, history);
    if let Some(p) = &args.data.names {
        if !p.is_file() {
            return Err(CliError::Usage(format!(
                "names file {} does not exist",
                p.display()
            )));
        }
    }
    check_config(&cfg)?;
    let dir = resolve_dir(&name, &args.data.data_root)?;
    let names = args.data.names.clone().or_else(|| {
        let p = dir.join(NAMES_FILE);
        p.is_file().then_some(p)
    });
    cfg.static_constraint = if args.no_static {
        false
    } else if args.with_static {
        if names.is_none() {
            return Err(CliError::Usage(format!(
                "--static needs entity names: pass --names or add {NAMES_FILE} to {}",
                dir.display()
            )));
        }
        true
    } else {
        static_by_default(&name) && names.is_some()
    };
    let names = names.filter(|_| cfg.static_constraint);
    Ok(TrainPlan {
        name,
        dir,
        cfg,
        names,
        expected_fingerprint: None,
    })
}

fn plan_from_manifest(args: &TrainArgs, path: &Path) -> Result<TrainPlan> {
    let m = RunManifest::load(path)?;
    check_config(&m.config)?;
    let dir = match &args.data.data {
        Some(d) => resolve_dir(d, &args.data.data_root)?,
        None => m.dataset.dir.clone(),
    };
    let names =
        if m.config.static_constraint {
            let p = args.data.names.clone().or(m.dataset.names_file.clone());
            match p {
                Some(p) if p.is_file() => Some(p),
                _ => return Err(CliError::Usage(
                    "the replayed run used the static constraint but its names file is missing; pass --names"
                        .into(),
                )),
            }
        } else {
            None
        };
    Ok(TrainPlan {
        name: m.dataset.name,
        dir,
        cfg: m.config,
        names,
        expected_fingerprint: Some(m.dataset.fingerprint),
    })
}

/// Catches configuration errors before any data is read.
fn check_config(cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    cfg.model_config(1, 2, None).validate()?;
    Ok(())
}

fn curve_csv(curve: &[EpochStats], with_static: bool) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["epoch", "steps", "total_loss", "entity_loss", "relation_loss"];
    if with_static {
        header.push("static_loss");
    }
    header.extend(["grad_norm", "valid_mrr", "seconds"]);
    w.write_record(&header)?;
    for e in curve {
        let mut row = vec![
            e.epoch.to_string(),
            e.steps.to_string(),
            format!("{:.8}", e.total_loss),
            format!("{:.8}", e.entity_loss),
            format!("{:.8}", e.relation_loss),
        ];
        if with_static {
            row.push(format!("{:.8}", e.static_loss));
        }
        row.push(format!("{:.8}", e.grad_norm));
        row.push(e.valid_mrr.map(|m| format!("{m:.6}")).unwrap_or_default());
        row.push(format!("{:.3}", e.seconds));
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut clock = PhaseClock::start();
    let plan = match &args.replay {
        Some(path) => plan_from_manifest(&args, path)?,
        None => plan_from_flags(&args)?,
    };
    let cfg = plan.cfg;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(plan.name.to_lowercase()));

    let loaded = dataset::load(&plan.name, &plan.dir, plan.names.as_deref())?;
    if let Some(expected) = &plan.expected_fingerprint {
        if *expected != loaded.info.fingerprint {
            return Err(CliError::Data(format!(
                "dataset fingerprint {} differs from the manifest's {expected}",
                loaded.info.fingerprint
            )));
        }
    }
    let graph = dataset::static_graph(&loaded.names);
    let store = &loaded.store;
    log::info!(
        "{}: {} entities, {} relations, {} snapshots; history {}, static constraint {}",
        plan.name,
        store.num_entities,
        store.num_relations,
        store.len(),
        cfg.history,
        cfg.static_constraint
    );
    clock.lap("load");

    let model_cfg = cfg.model_config(store.num_entities, store.relation_vocab(), graph.as_ref());
    let params = ModelParams::init(model_cfg.clone(), cfg.seed)?;
    log::info!("{} trainable parameters", params.num_parameters());
    clock.lap("init");

    let outcome = fit(store, graph.as_ref(), params, &cfg, |_| {})?;
    clock.lap("train");

    create_dir(&out)?;
    let mut manifest = RunManifest::new("train", cfg.clone(), loaded.info.clone(), None);
    let ckpt = Checkpoint {
        header: CheckpointHeader {
            model: model_cfg,
            train: cfg.clone(),
            run_id: Some(manifest.run_id.clone()),
            epoch: outcome.best_epoch,
        },
        params: outcome.params,
        optimizer: outcome.optimizer,
        final_state: Some(outcome.final_state),
    };
    ckpt.save(&out.join(CHECKPOINT_FILE))?;
    write(
        &out.join(CURVE_FILE),
        &curve_csv(&outcome.curve, cfg.static_constraint)?,
    )?;
    clock.lap("save");

    manifest.timings = clock.into_phases();
    manifest.artifacts = vec![CHECKPOINT_FILE.into(), CURVE_FILE.into()];
    manifest.save(&out)?;
    println!(
        "trained {} epochs (kept epoch {}{}); wrote {}",
        outcome.curve.len(),
        outcome.best_epoch,
        if outcome.stopped_early {
            ", stopped early"
        } else {
            ""
        },
        out.display()
    );
    Ok(())
}

/// JSON form of one metric report, tied to the manifest that produced it.
#[derive(Debug, Serialize, Deserialize)]
pub struct ReportFile {
    pub run_id: String,
    pub report: MetricReport,
}

pub fn report_file_name(r: &MetricReport) -> String {
    format!("report_{}_{}_{}.json", r.task, r.split, r.mode)
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let mut clock = PhaseClock::start();
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let ckpt_dir = args.checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf();
    let train_manifest = ckpt_dir.join(MANIFEST_FILE);
    let (name, dir) = match &args.data.data {
        Some(d) => (d.clone(), resolve_dir(d, &args.data.data_root)?),
        None if train_manifest.is_file() => {
            let m = RunManifest::load(&train_manifest)?;
            (m.dataset.name, m.dataset.dir)
        }
        None => {
            return Err(CliError::Usage(
                "--data is required when the checkpoint has no manifest next to it".into(),
            ))
        }
    };
    let loaded = dataset::load(&name, &dir, None)?;
    let store = &loaded.store;
    let model = &ckpt.header.model;
    if model.num_entities != store.num_entities || model.num_relations != store.relation_vocab() {
        return Err(CliError::Data(format!(
            "checkpoint expects {} entities and {} relations (with inverses), dataset has {} and {}",
            model.num_entities,
            model.num_relations,
            store.num_entities,
            store.relation_vocab()
        )));
    }
    let history = args.history.unwrap_or(ckpt.header.train.history);
    if history == 0 {
        return Err(CliError::Usage("--history must be at least 1".into()));
    }
    let frozen = match &ckpt.final_state {
        Some(s) => s.clone(),
        None => final_training_state(&ckpt.params, store, ckpt.header.train.history)?,
    };
    clock.lap("load");

    let tasks = args.task.tasks();
    let mut reports = Vec::new();
    for &task in &tasks {
        let opts = EvalOptions {
            mode: args.mode,
            split: args.split,
            task,
            history,
            filtered: args.filtered,
        };
        let r = evaluate(store, &ckpt.params, &frozen, opts)?;
        log::info!(
            "{} {} {}: MRR {:.4}  H@1 {:.4}  H@3 {:.4}  H@10 {:.4} over {} queries",
            r.task,
            r.split,
            r.mode,
            r.overall.mrr,
            r.overall.hits1,
            r.overall.hits3,
            r.overall.hits10,
            r.overall.count
        );
        reports.push(r);
    }
    clock.lap("eval");

    let out = args
        .out
        .clone()
        .unwrap_or_else(|| ckpt_dir.join(format!("eval-{}-{}", args.mode.name(), args.split.name())));
    create_dir(&out)?;
    let settings = EvalSettings {
        checkpoint: args.checkpoint.clone(),
        checkpoint_run_id: ckpt.header.run_id.clone(),
        mode: args.mode.name().into(),
        split: args.split.name().into(),
        tasks: tasks.iter().map(|t| t.name().to_string()).collect(),
        history,
        filtered: args.filtered,
    };
    let mut manifest = RunManifest::new("eval", ckpt.header.train.clone(), loaded.info, Some(settings));
    let csv = reports_to_csv(&reports);
    write(&out.join(METRICS_FILE), &csv)?;
    let mut artifacts = vec![METRICS_FILE.to_string()];
    for r in reports {
        let file = report_file_name(&r);
        let body = ReportFile {
            run_id: manifest.run_id.clone(),
            report: r,
        };
        write(&out.join(&file), &(serde_json::to_string_pretty(&body)? + "\n"))?;
        artifacts.push(file);
    }
    clock.lap("write");
    manifest.timings = clock.into_phases();
    manifest.artifacts = artifacts;
    manifest.save(&out)?;
    print!("{csv}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_drops_static_column_when_disabled() {
        let e = EpochStats {
            epoch: 1,
            steps: 2,
            valid_mrr: Some(0.5),
            ..Default::default()
        };
        let with = curve_csv(std::slice::from_ref(&e), true).unwrap();
        let without = curve_csv(&[e], false).unwrap();
        assert!(with.lines().next().unwrap().contains("static_loss"));
        assert!(!without.lines().next().unwrap().contains("static_loss"));
        assert_eq!(without.lines().count(), 2);
        assert!(without.lines().nth(1).unwrap().starts_with("1,2,"));
    }

    #[test]
    fn empty_curve_has_header_only() {
        assert_eq!(curve_csv(&[], false).unwrap().lines().count(), 1);
    }
}
