use std::fmt::Write as _;
use std::time::Instant;

use clap::ArgMatches;
use pkge_core::data::{LatentSpace, OovPolicy};
use pkge_core::mapreduce::{self, RoundReport};
use pkge_core::{seed, Dataset, Vocabulary};
use serde::Serialize;

use crate::args::{BenchArgs, LogFormat};
use crate::config::{self, apply_hyper, given, Mode, RunConfig};
use crate::manifest::{write_atomic, write_json_atomic};
use crate::train::LineLog;
use crate::Failure;

#[derive(Debug, Serialize)]
struct Row {
    requested_workers: usize,
    workers: usize,
    rounds: usize,
    triples_per_sec: f64,
    map_secs_per_round: f64,
    secs_per_round: f64,
    speedup: f64,
    losses: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct BenchReport {
    mode: Mode,
    strategy: Option<&'static str>,
    triples: usize,
    entities: usize,
    relations: usize,
    config: RunConfig,
    rows: Vec<Row>,
}

fn synthetic(args: &BenchArgs, base_seed: u64) -> Result<Dataset, Failure> {
    if args.entities < 2 || args.relations == 0 || args.triples == 0 || args.latent_dim == 0 {
        return Err(Failure::config(
            "--entities must be at least 2 and --relations, --triples, --latent-dim at least 1",
        ));
    }
    let space = LatentSpace::sample(args.entities, args.relations, args.latent_dim, seed::derive(base_seed, &[0]));
    let per_relation = args.triples.div_ceil(args.relations);
    let mut triples = space.triples(per_relation, seed::derive(base_seed, &[1]));
    triples.truncate(args.triples);
    let vocab = Vocabulary::from_labels(
        (0..args.entities).map(|i| format!("e{i}")).collect(),
        (0..args.relations).map(|i| format!("r{i}")).collect(),
    )?;
    Ok(Dataset::new(triples, Vec::new(), Vec::new(), vocab)?)
}

fn resolve(args: &BenchArgs, m: &ArgMatches) -> Result<RunConfig, Failure> {
    let mut cfg = config::base_config(args.common.config.as_deref(), args.common.seed, m)?;
    apply_hyper(&mut cfg, &args.hyper, m);
    if given(m, "mode") || args.common.config.is_none() || cfg.mode == Mode::Single {
        cfg.mode = args.mode;
    }
    if cfg.mode == Mode::Single {
        return Err(Failure::config("bench times the parallel trainers: --mode must be mr-sgd or mr-bgd"));
    }
    if args.rounds == 0 {
        return Err(Failure::config("--rounds must be at least 1"));
    }
    if args.workers_list.is_empty() || args.workers_list.contains(&0) {
        return Err(Failure::config(format!(
            "--workers-list entries must be at least 1, got {:?}",
            args.workers_list
        )));
    }
    cfg.max_epochs = match cfg.mode {
        Mode::MrSgd => args.rounds * cfg.epochs_per_sync,
        _ => args.rounds,
    };
    cfg.convergence_eps = 0.0;
    cfg.workers = args.workers_list[0];
    cfg.validate()?;
    Ok(cfg)
}

fn table_text(report: &BenchReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>8} {:>8} {:>6} {:>14} {:>12} {:>12} {:>8} {:>14}",
        "workers", "effective", "rounds", "triples/s", "map s/rnd", "s/rnd", "speedup", "final loss"
    );
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{:>8} {:>8} {:>6} {:>14.0} {:>12.4} {:>12.4} {:>8.2} {:>14.6}",
            r.requested_workers,
            r.workers,
            r.rounds,
            r.triples_per_sec,
            r.map_secs_per_round,
            r.secs_per_round,
            r.speedup,
            r.losses.last().copied().unwrap_or(f64::NAN)
        );
    }
    s
}

pub fn run(args: &BenchArgs, m: &ArgMatches) -> Result<(), Failure> {
    let cfg = resolve(args, m)?;
    let cap = config::thread_cap()?;
    let dataset = if args.synthetic {
        synthetic(args, cfg.seed)?
    } else if let Some(input) = &args.input {
        Dataset::load(input, None, None, OovPolicy::Reject)?.0
    } else {
        return Err(Failure::config("bench needs --synthetic or --input"));
    };
    log::info!("bench on {} triples, worker counts {:?}", dataset.train.len(), args.workers_list);

    std::fs::create_dir_all(&args.out)
        .map_err(|e| Failure::data(format!("cannot create {}: {e}", args.out.display())))?;
    let log_path = args.out.join(match args.common.log {
        LogFormat::Jsonl => "log.jsonl",
        LogFormat::Text => "log.txt",
    });
    let mut log = LineLog::create(&log_path, args.common.log)?;
    let tc = cfg.train_config();
    let mut rows: Vec<Row> = Vec::new();
    for &requested in &args.workers_list {
        let workers = config::cap_workers(requested, cap);
        let schedule = cfg.schedule(workers).expect("parallel mode");
        let start = Instant::now();
        let mut reports: Vec<RoundReport> = Vec::new();
        let mut log_err = None;
        mapreduce::train_mapreduce_with(&dataset, &tc, &schedule, cfg.merge, |r| {
            if let Err(e) = log.write(r, || {
                format!("workers {workers} round {} loss {:.6} map_secs {:.4}", r.round, r.loss, r.map_secs)
            }) {
                log_err.get_or_insert(e);
            }
            reports.push(r.clone());
        })?;
        if let Some(e) = log_err {
            return Err(Failure::data(format!("cannot write {}: {e}", log_path.display())));
        }
        let secs = start.elapsed().as_secs_f64();
        let rounds = reports.len();
        let map_secs: f64 = reports.iter().map(|r| r.map_secs).sum();
        let per_round = match cfg.mode {
            Mode::MrSgd => dataset.train.len() * cfg.epochs_per_sync,
            _ => dataset.train.len(),
        };
        let triples_per_sec = (per_round * rounds) as f64 / map_secs.max(f64::MIN_POSITIVE);
        let speedup = rows.first().map_or(1.0, |r0| triples_per_sec / r0.triples_per_sec);
        rows.push(Row {
            requested_workers: requested,
            workers,
            rounds,
            triples_per_sec,
            map_secs_per_round: map_secs / rounds as f64,
            secs_per_round: secs / rounds as f64,
            speedup,
            losses: reports.iter().map(|r| r.loss).collect(),
        });
    }
    let report = BenchReport {
        mode: cfg.mode,
        strategy: (cfg.mode == Mode::MrSgd).then(|| cfg.merge.as_str()),
        triples: dataset.train.len(),
        entities: dataset.n_entities(),
        relations: dataset.n_relations(),
        config: cfg,
        rows,
    };
    let text = table_text(&report);
    write_json_atomic(&args.out.join("bench.json"), &report)?;
    write_atomic(&args.out.join("bench.txt"), text.as_bytes())?;
    print!("{text}");
    Ok(())
}
