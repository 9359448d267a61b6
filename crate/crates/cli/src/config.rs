use std::path::Path;

use clap::parser::ValueSource;
use clap::{ArgMatches, ValueEnum};
use pkge_core::mapreduce::SyncMode;
use pkge_core::{MergeStrategy, NormKind, SyncSchedule, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::args::Hyper;
use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Single,
    MrSgd,
    MrBgd,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Single => "single",
            Mode::MrSgd => "mr-sgd",
            Mode::MrBgd => "mr-bgd",
        }
    }

    pub fn sync_mode(self) -> Option<SyncMode> {
        match self {
            Mode::Single => None,
            Mode::MrSgd => Some(SyncMode::Sgd),
            Mode::MrBgd => Some(SyncMode::Bgd),
        }
    }
}

/// Fully resolved run configuration, echoed into the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub dim: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub norm: NormKind,
    pub max_epochs: usize,
    pub convergence_eps: f64,
    pub seed: u64,
    pub neg_per_pos: usize,
    pub merge: MergeStrategy,
    pub workers: usize,
    pub epochs_per_sync: usize,
    pub weighted_average: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            mode: Mode::Single,
            dim: t.dim,
            margin: t.margin,
            learning_rate: t.learning_rate,
            norm: t.norm,
            max_epochs: t.max_epochs,
            convergence_eps: t.convergence_eps,
            seed: t.seed,
            neg_per_pos: t.neg_per_pos,
            merge: MergeStrategy::default(),
            workers: available_cores(),
            epochs_per_sync: 1,
            weighted_average: false,
        }
    }
}

impl RunConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            dim: self.dim,
            margin: self.margin,
            learning_rate: self.learning_rate,
            norm: self.norm,
            max_epochs: self.max_epochs,
            convergence_eps: self.convergence_eps,
            seed: self.seed,
            neg_per_pos: self.neg_per_pos,
        }
    }

    pub fn schedule(&self, workers: usize) -> Option<SyncSchedule> {
        self.mode.sync_mode().map(|mode| SyncSchedule {
            mode,
            workers,
            epochs_per_sync: self.epochs_per_sync,
            weighted_average: self.weighted_average,
        })
    }

    /// Checks every field, naming the flag that sets it.
    pub fn validate(&self) -> Result<(), Failure> {
        let bad = |flag: &str, what: &str, got: String| Err(Failure::config(format!("--{flag} {what}, got {got}")));
        if self.dim == 0 {
            return bad("dim", "must be at least 1", self.dim.to_string());
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad("margin", "must be a positive number", self.margin.to_string());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("lr", "must be a positive number", self.learning_rate.to_string());
        }
        if self.convergence_eps.is_nan() || self.convergence_eps < 0.0 {
            return bad("eps", "must be non-negative", self.convergence_eps.to_string());
        }
        if self.neg_per_pos == 0 {
            return bad("neg-per-pos", "must be at least 1", "0".into());
        }
        if self.workers == 0 {
            return bad("workers", "must be at least 1", "0".into());
        }
        if self.epochs_per_sync == 0 {
            return bad("epochs-per-sync", "must be at least 1", "0".into());
        }
        Ok(())
    }
}

pub fn available_cores() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// `PKGE_THREADS`, when set, caps every worker count.
pub fn thread_cap() -> Result<Option<usize>, Failure> {
    match std::env::var("PKGE_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Failure::config(format!("PKGE_THREADS must be a positive integer, got {v:?}"))),
        },
    }
}

pub fn cap_workers(workers: usize, cap: Option<usize>) -> usize {
    cap.map_or(workers, |c| workers.min(c))
}

/// Reads a config file: either a bare config object or a manifest with a
/// `config` member. Missing keys take their defaults; unknown keys fail.
pub fn read_config_file(path: &Path) -> Result<RunConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Failure::config(format!("config {} is not valid JSON: {e}", path.display())))?;
    if let Some(inner) = value.get_mut("config").filter(|v| v.is_object()) {
        value = inner.take();
    }
    serde_json::from_value(value).map_err(|e| Failure::config(format!("config {}: {e}", path.display())))
}

pub fn given(m: &ArgMatches, id: &str) -> bool {
    m.value_source(id) == Some(ValueSource::CommandLine)
}

/// Overlays the hyperparameter flags that were given on the command line.
pub fn apply_hyper(cfg: &mut RunConfig, h: &Hyper, m: &ArgMatches) {
    if given(m, "dim") {
        cfg.dim = h.dim;
    }
    if given(m, "margin") {
        cfg.margin = h.margin;
    }
    if given(m, "learning_rate") {
        cfg.learning_rate = h.learning_rate;
    }
    if given(m, "norm") {
        cfg.norm = h.norm;
    }
    if given(m, "neg_per_pos") {
        cfg.neg_per_pos = h.neg_per_pos;
    }
    if given(m, "merge") {
        cfg.merge = h.merge;
    }
    if given(m, "epochs_per_sync") {
        cfg.epochs_per_sync = h.epochs_per_sync;
    }
    if given(m, "weighted_average") {
        cfg.weighted_average = h.weighted_average;
    }
}

pub fn base_config(path: Option<&Path>, seed: u64, m: &ArgMatches) -> Result<RunConfig, Failure> {
    let mut cfg = match path {
        Some(p) => read_config_file(p)?,
        None => RunConfig::default(),
    };
    if given(m, "seed") || path.is_none() {
        cfg.seed = seed;
    }
    Ok(cfg)
}
