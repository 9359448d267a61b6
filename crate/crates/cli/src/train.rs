use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use clap::ArgMatches;
use pkge_core::data::OovPolicy;
use pkge_core::embedding::render_checkpoint;
use pkge_core::{mapreduce, train, Dataset, EpochReport};
use serde::Serialize;

use crate::args::{LogFormat, TrainArgs};
use crate::config::{self, apply_hyper, given, Mode, RunConfig};
use crate::manifest::{self, Artifacts, DataSummary, Manifest, WallClock, MANIFEST_FILE, MODEL_FILE};
use crate::Failure;

pub fn resolve(args: &TrainArgs, m: &ArgMatches) -> Result<RunConfig, Failure> {
    let mut cfg = config::base_config(args.common.config.as_deref(), args.common.seed, m)?;
    apply_hyper(&mut cfg, &args.hyper, m);
    if given(m, "mode") || args.common.config.is_none() {
        cfg.mode = args.mode;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if given(m, "max_epochs") {
        cfg.max_epochs = args.max_epochs;
    }
    if given(m, "convergence_eps") {
        cfg.convergence_eps = args.convergence_eps;
    }
    cfg.workers = config::cap_workers(cfg.workers, config::thread_cap()?);
    cfg.validate()?;
    Ok(cfg)
}

/// Writes one line per epoch or round, flushed as it goes.
pub struct LineLog {
    out: BufWriter<File>,
    format: LogFormat,
}

impl LineLog {
    pub fn create(path: &Path, format: LogFormat) -> Result<Self, Failure> {
        let file = File::create(path).map_err(|e| Failure::data(format!("cannot create {}: {e}", path.display())))?;
        Ok(Self { out: BufWriter::new(file), format })
    }

    pub fn write<T: Serialize>(&mut self, record: &T, text: impl FnOnce() -> String) -> std::io::Result<()> {
        match self.format {
            LogFormat::Jsonl => serde_json::to_writer(&mut self.out, record)?,
            LogFormat::Text => self.out.write_all(text().as_bytes())?,
        }
        self.out.write_all(b"\n")?;
        self.out.flush()
    }
}

fn fmt_rel(rel: Option<f64>) -> String {
    rel.map_or_else(|| "-".to_string(), |r| format!("{r:.3e}"))
}

pub fn run(args: &TrainArgs, m: &ArgMatches) -> Result<(), Failure> {
    let started = Instant::now();
    let cfg = resolve(args, m)?;
    let oov = if args.drop_oov { OovPolicy::Drop } else { OovPolicy::Reject };
    let (dataset, stats) = Dataset::load(&args.input, args.valid.as_deref(), None, oov)?;
    let mut datasets = vec![manifest::digest("train", &args.input)?];
    if let Some(v) = &args.valid {
        datasets.push(manifest::digest("valid", v)?);
    }
    if stats.dropped_oov > 0 {
        log::warn!("dropped {} validation triples with unseen labels", stats.dropped_oov);
    }
    let load_secs = started.elapsed().as_secs_f64();

    std::fs::create_dir_all(&args.out)
        .map_err(|e| Failure::data(format!("cannot create {}: {e}", args.out.display())))?;
    let log_path = args.out.join(match args.common.log {
        LogFormat::Jsonl => "log.jsonl",
        LogFormat::Text => "log.txt",
    });
    let mut log = LineLog::create(&log_path, args.common.log)?;
    let mut log_err = None;
    let mut keep = |r: std::io::Result<()>| {
        if let Err(e) = r {
            log_err.get_or_insert(e);
        }
    };

    log::info!(
        "training {} on {} triples ({} entities, {} relations)",
        cfg.mode.as_str(),
        dataset.train.len(),
        dataset.n_entities(),
        dataset.n_relations()
    );
    let train_start = Instant::now();
    let tc = cfg.train_config();
    let (table, epochs, final_loss) = match cfg.schedule(cfg.workers) {
        None => {
            let (table, reports) = train::train_single_with(&dataset, &tc, |r: &EpochReport| {
                keep(log.write(r, || {
                    format!(
                        "epoch {:>5} loss {:>14.6} rel {:>10} active {:>8} secs {:.3}",
                        r.epoch,
                        r.loss,
                        fmt_rel(r.rel),
                        r.active,
                        r.secs
                    )
                }));
            })?;
            (table, reports.len(), reports.last().map(|r| r.loss))
        }
        Some(schedule) => {
            let (table, reports) = mapreduce::train_mapreduce_with(&dataset, &tc, &schedule, cfg.merge, |r| {
                keep(log.write(r, || {
                    format!(
                        "round {:>5} mode {} strategy {} workers {} loss {:>14.6} rel {:>10} map_secs {:.3} reduce_secs {:.3} triples_per_sec {:.0}",
                        r.round,
                        r.mode.as_str(),
                        r.strategy.map_or("-", |s| s.as_str()),
                        r.workers,
                        r.loss,
                        fmt_rel(r.rel),
                        r.map_secs,
                        r.reduce_secs,
                        r.triples_per_sec
                    )
                }));
            })?;
            let epochs = match cfg.mode {
                Mode::MrSgd => cfg.max_epochs.min(reports.len() * cfg.epochs_per_sync),
                _ => reports.len(),
            };
            (table, epochs, reports.last().map(|r| r.loss))
        }
    };
    if let Some(e) = log_err {
        return Err(Failure::data(format!("cannot write {}: {e}", log_path.display())));
    }
    let train_secs = train_start.elapsed().as_secs_f64();

    let model_path = args.out.join(MODEL_FILE);
    manifest::write_atomic(&model_path, render_checkpoint(&table, &dataset.vocab)?.as_bytes())?;
    let manifest = Manifest {
        format: "pkge-manifest v1".into(),
        seed: cfg.seed,
        config: cfg,
        datasets,
        data: DataSummary {
            entities: dataset.n_entities(),
            relations: dataset.n_relations(),
            train: dataset.train.len(),
            valid: dataset.valid.len(),
            duplicates: stats.duplicates,
            dropped_oov: stats.dropped_oov,
        },
        artifacts: Artifacts { model: model_path.clone(), log: log_path },
        epochs,
        final_loss,
        wall_clock: WallClock { load_secs, train_secs, total_secs: started.elapsed().as_secs_f64() },
    };
    let manifest_path = args.out.join(MANIFEST_FILE);
    manifest::write_json_atomic(&manifest_path, &manifest)?;
    println!(
        "{}",
        serde_json::json!({
            "model": model_path,
            "manifest": manifest_path,
            "epochs": epochs,
            "final_loss": final_loss,
        })
    );
    Ok(())
}
