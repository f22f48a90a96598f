//! Training configuration as flat `key = value` text.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are unique and
//! unknown keys are rejected. Lists are comma separated. [`TrainConfig::to_text`]
//! writes every key in a fixed order, so the output is a complete record.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::encoder::EncoderVariant;
use crate::error::{Error, Result};
use crate::model::LayerSizes;
use crate::rng::{self, Stream};
use crate::tlasgr::StepSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlobalUpdate {
    Tlasgr,
    Sgd,
}

impl FromStr for GlobalUpdate {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tlasgr" => Ok(GlobalUpdate::Tlasgr),
            "sgd" => Ok(GlobalUpdate::Sgd),
            _ => Err(Error::Config(format!("unknown global update {s:?} (expected tlasgr or sgd)"))),
        }
    }
}

impl std::fmt::Display for GlobalUpdate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GlobalUpdate::Tlasgr => "tlasgr",
            GlobalUpdate::Sgd => "sgd",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Topic counts K_1..K_L; the vocabulary size comes from the corpus.
    pub topics: Vec<usize>,
    pub variant: EncoderVariant,
    pub global_update: GlobalUpdate,
    pub batch_size: usize,
    pub iterations: u64,
    pub burn_in: u64,
    /// Number of posterior samples to collect after burn-in.
    pub samples: usize,
    pub collection_stride: u64,
    /// A new encoder snapshot is stored with every `omega_snapshot_every`-th sample.
    pub omega_snapshot_every: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub sgd_learning_rate: f64,
    pub tlasgr: StepSchedule,
    /// Fixed gamma-sampler boost; `None` picks one per draw.
    pub boost: Option<usize>,
    /// Dirichlet concentration per layer; `None` means 1/K_l.
    pub eta: Option<Vec<f64>>,
    pub r: f64,
    pub c: f64,
    pub seed: u64,
    pub checkpoint_stride: u64,
    /// Evaluate held-out perplexity every this many iterations (0 disables).
    pub eval_every: u64,
    pub train_fraction: f64,
    pub split_seed: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            topics: vec![128],
            variant: EncoderVariant::Whai,
            global_update: GlobalUpdate::Tlasgr,
            batch_size: 200,
            iterations: 5000,
            burn_in: 2000,
            samples: 3000,
            collection_stride: 1,
            omega_snapshot_every: 1,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            sgd_learning_rate: 1e-3,
            tlasgr: StepSchedule::default(),
            boost: None,
            eta: None,
            r: 1.0,
            c: 1.0,
            seed: 0,
            checkpoint_stride: 0,
            eval_every: 0,
            train_fraction: 0.7,
            split_seed: None,
        }
    }
}

/// Keys that may change between a checkpoint and its resumption.
pub const RESUMABLE_KEYS: [&str; 3] = ["iterations", "checkpoint_stride", "eval_every"];

const KEYS: [&str; 27] = [
    "topics",
    "variant",
    "global_update",
    "batch_size",
    "iterations",
    "burn_in",
    "samples",
    "collection_stride",
    "omega_snapshot_every",
    "learning_rate",
    "beta1",
    "beta2",
    "adam_epsilon",
    "sgd_learning_rate",
    "tlasgr_eps0",
    "tlasgr_tau",
    "tlasgr_decay",
    "boost",
    "eta",
    "r",
    "c",
    "seed",
    "checkpoint_stride",
    "eval_every",
    "train_fraction",
    "split_seed",
    "strict",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse { line: i + 1, msg: format!("expected key = value, got {line:?}") })?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::Parse { line: i + 1, msg: format!("duplicate key {k}") });
            }
            cfg.set(k, v.trim())?;
        }
        Ok(cfg)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "topics" => self.topics = parse_list(key, value)?,
            "variant" => self.variant = parse(key, value)?,
            "global_update" => self.global_update = value.parse()?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "iterations" => self.iterations = parse(key, value)?,
            "burn_in" => self.burn_in = parse(key, value)?,
            "samples" => self.samples = parse(key, value)?,
            "collection_stride" => self.collection_stride = parse(key, value)?,
            "omega_snapshot_every" => self.omega_snapshot_every = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "adam_epsilon" => self.adam_epsilon = parse(key, value)?,
            "sgd_learning_rate" => self.sgd_learning_rate = parse(key, value)?,
            "tlasgr_eps0" => self.tlasgr.eps0 = parse(key, value)?,
            "tlasgr_tau" => self.tlasgr.tau = parse(key, value)?,
            "tlasgr_decay" => self.tlasgr.decay = parse(key, value)?,
            "boost" => self.boost = if value == "auto" { None } else { Some(parse(key, value)?) },
            "eta" => self.eta = if value == "auto" { None } else { Some(parse_list(key, value)?) },
            "r" => self.r = parse(key, value)?,
            "c" => self.c = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "checkpoint_stride" => self.checkpoint_stride = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "train_fraction" => self.train_fraction = parse(key, value)?,
            "split_seed" => self.split_seed = if value == "auto" { None } else { Some(parse(key, value)?) },
            // Accepted for compatibility: batch reductions are always performed
            // in a fixed order, so every run is deterministic.
            "strict" => {
                let _: bool = parse(key, value)?;
            }
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        Ok(match key {
            "topics" => join(&self.topics),
            "variant" => self.variant.to_string(),
            "global_update" => self.global_update.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "iterations" => self.iterations.to_string(),
            "burn_in" => self.burn_in.to_string(),
            "samples" => self.samples.to_string(),
            "collection_stride" => self.collection_stride.to_string(),
            "omega_snapshot_every" => self.omega_snapshot_every.to_string(),
            "learning_rate" => format!("{:?}", self.learning_rate),
            "beta1" => format!("{:?}", self.beta1),
            "beta2" => format!("{:?}", self.beta2),
            "adam_epsilon" => format!("{:?}", self.adam_epsilon),
            "sgd_learning_rate" => format!("{:?}", self.sgd_learning_rate),
            "tlasgr_eps0" => format!("{:?}", self.tlasgr.eps0),
            "tlasgr_tau" => format!("{:?}", self.tlasgr.tau),
            "tlasgr_decay" => format!("{:?}", self.tlasgr.decay),
            "boost" => self.boost.map_or("auto".into(), |b| b.to_string()),
            "eta" => self
                .eta
                .as_ref()
                .map_or("auto".into(), |e| join(&e.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>())),
            "r" => format!("{:?}", self.r),
            "c" => format!("{:?}", self.c),
            "seed" => self.seed.to_string(),
            "checkpoint_stride" => self.checkpoint_stride.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "train_fraction" => format!("{:?}", self.train_fraction),
            "split_seed" => self.split_seed.map_or("auto".into(), |s| s.to_string()),
            "strict" => "true".into(),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            writeln!(s, "{k} = {}", self.get(k).expect("known key")).unwrap();
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.topics.is_empty() || self.topics.contains(&0) {
            return bad("topics must be a nonempty list of positive counts".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.iterations > 0 && self.burn_in >= self.iterations {
            return bad(format!("burn_in {} must be below iterations {}", self.burn_in, self.iterations));
        }
        if self.collection_stride == 0 || self.omega_snapshot_every == 0 {
            return bad("collection_stride and omega_snapshot_every must be positive".into());
        }
        let room = self.iterations.saturating_sub(self.burn_in);
        if (self.samples as u64).saturating_mul(self.collection_stride) > room {
            return bad(format!(
                "{} samples at stride {} do not fit in the {room} post-burn-in iterations",
                self.samples, self.collection_stride
            ));
        }
        let positive = [
            ("learning_rate", self.learning_rate),
            ("adam_epsilon", self.adam_epsilon),
            ("sgd_learning_rate", self.sgd_learning_rate),
            ("tlasgr_eps0", self.tlasgr.eps0),
            ("tlasgr_tau", self.tlasgr.tau),
            ("r", self.r),
            ("c", self.c),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{k} must be positive, got {v}"));
            }
        }
        for (k, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{k} must lie in [0, 1), got {v}"));
            }
        }
        if !(self.tlasgr.decay >= 0.0) {
            return bad("tlasgr_decay must be nonnegative".into());
        }
        if let Some(eta) = &self.eta {
            if eta.len() != self.topics.len() || eta.iter().any(|&e| !(e > 0.0)) {
                return bad(format!("eta needs {} positive values", self.topics.len()));
            }
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return bad(format!("train_fraction {} not in (0, 1]", self.train_fraction));
        }
        Ok(())
    }

    pub fn layer_sizes(&self, vocab_size: usize) -> Result<LayerSizes> {
        let mut v = vec![vocab_size];
        v.extend(&self.topics);
        LayerSizes::new(v)
    }

    pub fn eta_values(&self) -> Vec<f64> {
        self.eta.clone().unwrap_or_else(|| self.topics.iter().map(|&k| 1.0 / k as f64).collect())
    }

    pub fn effective_split_seed(&self) -> u64 {
        self.split_seed.unwrap_or_else(|| rng::subsystem_seed(self.seed, Stream::Split))
    }

    /// Keys whose values differ between two configurations.
    pub fn differing_keys(&self, other: &TrainConfig) -> Vec<&'static str> {
        KEYS.iter().copied().filter(|k| self.get(k).ok() != other.get(k).ok()).collect()
    }
}
