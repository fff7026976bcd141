//! Key-value run configuration.
//!
//! Files hold `key = value` lines; `#` starts a comment. Values given on the
//! command line override the file, which overrides the defaults.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ookb_core::eval::BaselineVariant;
use ookb_core::model::PropagationConfig;
use ookb_core::numerics::{Norm, Pooling};
use ookb_core::trainer::TrainConfig;
use ookb_core::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodKind {
    Proposed,
    Baseline,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub propagation: PropagationConfig,
    pub train: TrainConfig,
    pub train_file: Option<PathBuf>,
    pub valid_file: Option<PathBuf>,
    pub test_file: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Bundle directory; may contain a `{dataset}` placeholder.
    pub checkpoint: Option<String>,
    /// Split prefix such as `splits/{dataset}`.
    pub split: Option<String>,
    pub datasets: Vec<String>,
    pub resume: Option<PathBuf>,
    pub method: MethodKind,
    pub baseline_pooling: Pooling,
    pub baseline_variant: BaselineVariant,
    /// Checkpoint evaluations without improvement before stopping; 0 disables.
    pub early_stopping_patience: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            propagation: PropagationConfig::default(),
            train: TrainConfig::default(),
            train_file: None,
            valid_file: None,
            test_file: None,
            out_dir: None,
            checkpoint: None,
            split: None,
            datasets: Vec::new(),
            resume: None,
            method: MethodKind::Proposed,
            baseline_pooling: Pooling::Avg,
            baseline_variant: BaselineVariant::ImpliedPosition,
            early_stopping_patience: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

/// Named choices whose parser already reports a config error.
fn named<T: FromStr<Err = Error>>(value: &str) -> Result<T> {
    value.parse()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn opt_string(value: &str) -> Option<String> {
    (!value.is_empty()).then(|| value.to_owned())
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn variant_name(v: BaselineVariant) -> &'static str {
    match v {
        BaselineVariant::ImpliedPosition => "implied",
        BaselineVariant::RawNeighbor => "raw",
    }
}

impl RunConfig {
    pub const KEYS: [&'static str; 34] = [
        "dim",
        "depth",
        "mode",
        "pooling",
        "transition",
        "neighbor_cap",
        "norm",
        "bn_momentum",
        "bn_epsilon",
        "epochs",
        "minibatch",
        "tau",
        "objective",
        "seed",
        "checkpoint_every",
        "filter_negatives",
        "unit_ball",
        "alpha1",
        "alpha2",
        "beta1",
        "beta2",
        "adam_epsilon",
        "early_stopping_patience",
        "train_file",
        "valid_file",
        "test_file",
        "out_dir",
        "checkpoint",
        "split",
        "datasets",
        "resume",
        "method",
        "baseline_pooling",
        "baseline_variant",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let p = &mut self.propagation;
        let t = &mut self.train;
        match key {
            "dim" => p.dim = parse(key, value)?,
            "depth" => p.depth = parse(key, value)?,
            "mode" => p.mode = named(value)?,
            "pooling" => p.pooling = named(value)?,
            "transition" => p.transition = named(value)?,
            "neighbor_cap" => p.neighbor_cap = parse(key, value)?,
            "norm" => {
                p.norm = match value {
                    "l1" | "L1" | "1" => Norm::L1,
                    "l2" | "L2" | "2" => Norm::L2,
                    _ => return Err(Error::Config(format!("norm: expected l1 or l2, got {value:?}"))),
                }
            }
            "bn_momentum" => p.bn_momentum = parse(key, value)?,
            "bn_epsilon" => p.bn_epsilon = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "minibatch" => t.minibatch = parse(key, value)?,
            "tau" => t.tau = parse(key, value)?,
            "objective" => t.objective = named(value)?,
            "seed" => t.seed = parse(key, value)?,
            "checkpoint_every" => t.checkpoint_every = parse(key, value)?,
            "filter_negatives" => t.filter_negatives = parse_bool(key, value)?,
            "unit_ball" => t.unit_ball = parse_bool(key, value)?,
            "alpha1" => t.adam.alpha1 = parse(key, value)?,
            "alpha2" => t.adam.alpha2 = parse(key, value)?,
            "beta1" => t.adam.beta1 = parse(key, value)?,
            "beta2" => t.adam.beta2 = parse(key, value)?,
            "adam_epsilon" => t.adam.epsilon = parse(key, value)?,
            "early_stopping_patience" => self.early_stopping_patience = parse(key, value)?,
            "train_file" => self.train_file = opt_path(value),
            "valid_file" => self.valid_file = opt_path(value),
            "test_file" => self.test_file = opt_path(value),
            "out_dir" => self.out_dir = opt_path(value),
            "checkpoint" => self.checkpoint = opt_string(value),
            "split" => self.split = opt_string(value),
            "datasets" => {
                self.datasets = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_owned)
                    .collect()
            }
            "resume" => self.resume = opt_path(value),
            "method" => {
                self.method = match value {
                    "proposed" => MethodKind::Proposed,
                    "baseline" => MethodKind::Baseline,
                    _ => return Err(Error::Config(format!("method: expected proposed or baseline, got {value:?}"))),
                }
            }
            "baseline_pooling" => self.baseline_pooling = named(value)?,
            "baseline_variant" => {
                self.baseline_variant = match value {
                    "implied" => BaselineVariant::ImpliedPosition,
                    "raw" => BaselineVariant::RawNeighbor,
                    _ => return Err(Error::Config(format!("baseline_variant: expected implied or raw, got {value:?}"))),
                }
            }
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> String {
        let p = &self.propagation;
        let t = &self.train;
        match key {
            "dim" => p.dim.to_string(),
            "depth" => p.depth.to_string(),
            "mode" => p.mode.to_string(),
            "pooling" => p.pooling.to_string(),
            "transition" => p.transition.to_string(),
            "neighbor_cap" => p.neighbor_cap.to_string(),
            "norm" => format!("l{}", p.norm.p()),
            "bn_momentum" => p.bn_momentum.to_string(),
            "bn_epsilon" => p.bn_epsilon.to_string(),
            "epochs" => t.epochs.to_string(),
            "minibatch" => t.minibatch.to_string(),
            "tau" => t.tau.to_string(),
            "objective" => t.objective.to_string(),
            "seed" => t.seed.to_string(),
            "checkpoint_every" => t.checkpoint_every.to_string(),
            "filter_negatives" => t.filter_negatives.to_string(),
            "unit_ball" => t.unit_ball.to_string(),
            "alpha1" => t.adam.alpha1.to_string(),
            "alpha2" => t.adam.alpha2.to_string(),
            "beta1" => t.adam.beta1.to_string(),
            "beta2" => t.adam.beta2.to_string(),
            "adam_epsilon" => t.adam.epsilon.to_string(),
            "early_stopping_patience" => self.early_stopping_patience.to_string(),
            "train_file" => show_path(&self.train_file),
            "valid_file" => show_path(&self.valid_file),
            "test_file" => show_path(&self.test_file),
            "out_dir" => show_path(&self.out_dir),
            "checkpoint" => self.checkpoint.clone().unwrap_or_default(),
            "split" => self.split.clone().unwrap_or_default(),
            "datasets" => self.datasets.join(","),
            "resume" => show_path(&self.resume),
            "method" => match self.method {
                MethodKind::Proposed => "proposed".into(),
                MethodKind::Baseline => "baseline".into(),
            },
            "baseline_pooling" => self.baseline_pooling.to_string(),
            "baseline_variant" => variant_name(self.baseline_variant).into(),
            _ => unreachable!("every key in KEYS is handled"),
        }
    }

    /// Applies a config file, rejecting unknown and repeated keys.
    pub fn apply_text(&mut self, text: &str, source_name: &str) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Config(format!("{source_name}:{}: {message}", i + 1));
            let (k, v) = line.split_once('=').ok_or_else(|| err("expected key = value".into()))?;
            let k = k.trim();
            if !seen.insert(k.to_owned()) {
                return Err(err(format!("key {k:?} given twice")));
            }
            self.set(k, v).map_err(|e| match e {
                Error::Config(m) => err(m),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_owned(),
            source,
        })?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Applies `key=value` overrides from the command line.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Every key with its effective value, in a form `apply_text` reads back.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in Self::KEYS {
            out.push_str(&format!("{k} = {}\n", self.get(k)));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.propagation.validate()?;
        self.train.validate()
    }

    pub fn write_effective(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_owned(),
            source,
        })?;
        let path = dir.join("effective_config.txt");
        std::fs::write(&path, self.to_text()).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }
}
