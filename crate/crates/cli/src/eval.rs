use std::path::{Path, PathBuf};

use clap::ArgMatches;
use pkge_core::data::{load_triples_with, OovPolicy, Triple};
use pkge_core::eval::{self, KnownTriples, Setting, Task};
use pkge_core::{embedding, seed, NormKind};
use serde::Serialize;
use serde_json::Value;

use crate::args::{EvalArgs, EvalTask};
use crate::config::{given, read_config_file};
use crate::manifest::{self, write_atomic, MODEL_FILE};
use crate::Failure;

#[derive(Debug, Serialize)]
struct RankingReport {
    task: &'static str,
    setting: &'static str,
    mean_rank: f64,
    hits: serde_json::Map<String, Value>,
    n: usize,
}

#[derive(Debug, Serialize)]
struct ClassifyReport {
    task: &'static str,
    accuracy: f64,
    n: usize,
}

/// Resolves `--model` to the checkpoint file and the directory that may hold
/// its manifest.
fn model_paths(model: &Path) -> (PathBuf, PathBuf) {
    if model.is_dir() {
        (model.join(MODEL_FILE), model.to_path_buf())
    } else {
        let dir = model.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        (model.to_path_buf(), dir)
    }
}

pub fn run(args: &EvalArgs, m: &ArgMatches) -> Result<(), Failure> {
    if let Some(&k) = args.ks.iter().find(|&&k| k == 0) {
        return Err(Failure::config(format!("--ks entries must be at least 1, got {k}")));
    }
    let (model_file, model_dir) = model_paths(&args.model);
    if !model_file.is_file() {
        return Err(Failure::data(format!("model not found: {}", model_file.display())));
    }
    let ckpt = embedding::load(&model_file)?;
    let manifest = manifest::read_manifest(&model_dir);
    let file_cfg = args.common.config.as_deref().map(read_config_file).transpose()?;
    let norm = args
        .norm
        .or(file_cfg.as_ref().map(|c| c.norm))
        .or(manifest.as_ref().map(|m| m.config.norm))
        .unwrap_or(NormKind::L1);
    let base_seed = if given(m, "seed") {
        args.common.seed
    } else {
        file_cfg.as_ref().map(|c| c.seed).or(manifest.as_ref().map(|m| m.seed)).unwrap_or(args.common.seed)
    };

    let oov = if args.drop_oov { OovPolicy::Drop } else { OovPolicy::Reject };
    let load = |path: &Path, policy| -> Result<Vec<Triple>, Failure> {
        let loaded = load_triples_with(path, Some(&ckpt.vocab), policy)?;
        if loaded.dropped_oov > 0 {
            log::warn!("{}: dropped {} triples with unseen labels", path.display(), loaded.dropped_oov);
        }
        Ok(loaded.triples)
    };
    let test = load(&args.test, oov)?;
    let valid = args.valid.as_deref().map(|p| load(p, oov)).transpose()?;
    let train_path = args.input.clone().or_else(|| {
        manifest
            .as_ref()
            .and_then(|m| m.datasets.iter().find(|d| d.role == "train"))
            .map(|d| d.path.clone())
            .filter(|p| p.exists())
    });

    let setting = if args.filtered { Setting::Filtered } else { Setting::Raw };
    let mut known_triples: Vec<Triple> = test.clone();
    known_triples.extend(valid.iter().flatten());
    if setting == Setting::Filtered {
        match &train_path {
            Some(p) => known_triples.extend(load(p, OovPolicy::Reject)?),
            None => log::warn!("no training triples found; filtering with test and validation triples only"),
        }
    }
    let known: KnownTriples = known_triples.into_iter().collect();

    let tasks: Vec<EvalTask> = match args.task {
        EvalTask::All if valid.is_some() => vec![EvalTask::Entity, EvalTask::Relation, EvalTask::Classify],
        EvalTask::All => {
            log::warn!("no --valid given; skipping classification");
            vec![EvalTask::Entity, EvalTask::Relation]
        }
        t => vec![t],
    };
    let mut reports = Vec::new();
    for task in tasks {
        let report = match task {
            EvalTask::Entity | EvalTask::Relation => {
                let (core_task, name) = match task {
                    EvalTask::Entity => (Task::Entity, "entity"),
                    _ => (Task::Relation, "relation"),
                };
                let metrics = eval::evaluate_ranking(&ckpt.table, &test, core_task, &known, setting, &args.ks, norm)?;
                serde_json::to_value(RankingReport {
                    task: name,
                    setting: setting.as_str(),
                    mean_rank: metrics.mean_rank,
                    hits: metrics.hits.iter().map(|(k, v)| (k.to_string(), Value::from(*v))).collect(),
                    n: metrics.n_queries,
                })
            }
            _ => {
                let Some(valid) = &valid else {
                    return Err(Failure::config("--task classify needs --valid to fit thresholds"));
                };
                let mut fit_rng = seed::derived_rng(base_seed, &[1]);
                let thresholds = eval::fit_thresholds(&ckpt.table, valid, &mut fit_rng, norm)?;
                let mut test_rng = seed::derived_rng(base_seed, &[2]);
                let labeled = eval::with_corrupted_negatives(&test, ckpt.table.n_entities(), &mut test_rng)?;
                if labeled.is_empty() {
                    return Err(pkge_core::Error::EmptySplit("test").into());
                }
                serde_json::to_value(ClassifyReport {
                    task: "classify",
                    accuracy: eval::classify(&ckpt.table, &thresholds, &labeled, norm),
                    n: labeled.len(),
                })
            }
        };
        reports.push(report.expect("report serializes"));
    }
    let out = if reports.len() == 1 { reports.pop().unwrap() } else { Value::Array(reports) };
    let text = serde_json::to_string(&out).expect("report serializes");
    if let Some(path) = &args.out {
        write_atomic(path, format!("{text}\n").as_bytes())?;
    }
    println!("{text}");
    Ok(())
}
