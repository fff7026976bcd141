use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::batchnorm::{DEFAULT_EPSILON, DEFAULT_MOMENTUM};
use crate::numerics::{Norm, Pooling};

/// How propagation parameters relate across depth steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Independent parameters per step.
    Stacked,
    /// One parameter set shared by every step.
    Unrolled,
    /// No propagation: entity vectors are the table rows.
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transition {
    Identity,
    TanhLayer,
    ReluLayer,
    RelationReluBn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    Absolute,
    Pairwise,
}

macro_rules! named_enum {
    ($ty:ident, $what:literal, $($variant:ident => $name:literal),+) => {
        impl $ty {
            pub fn name(self) -> &'static str {
                match self {
                    $($ty::$variant => $name,)+
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    other => Err(Error::Config(format!(
                        concat!("unknown ", $what, " {:?} (expected {})"),
                        other,
                        [$($name),+].join(", ")
                    ))),
                }
            }
        }
    };
}

named_enum!(Mode, "propagation mode", Stacked => "stacked", Unrolled => "unrolled", None => "none");
named_enum!(
    Transition,
    "transition",
    Identity => "identity",
    TanhLayer => "tanh-layer",
    ReluLayer => "relu-layer",
    RelationReluBn => "relation-relu-bn"
);
named_enum!(Objective, "objective", Absolute => "absolute", Pairwise => "pairwise");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    pub depth: usize,
    pub mode: Mode,
    pub pooling: Pooling,
    pub transition: Transition,
    pub neighbor_cap: usize,
    pub norm: Norm,
    pub dim: usize,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            depth: 1,
            mode: Mode::Stacked,
            pooling: Pooling::Avg,
            transition: Transition::RelationReluBn,
            neighbor_cap: 64,
            norm: Norm::L1,
            dim: 200,
            bn_momentum: DEFAULT_MOMENTUM,
            bn_epsilon: DEFAULT_EPSILON,
        }
    }
}

impl PropagationConfig {
    /// Plain translation model without propagation.
    pub fn transe(dim: usize) -> Self {
        Self {
            depth: 0,
            mode: Mode::None,
            dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dim must be positive".into()));
        }
        if self.neighbor_cap == 0 {
            return Err(Error::Config("neighbor_cap must be at least 1".into()));
        }
        match self.mode {
            Mode::None if self.depth != 0 => {
                return Err(Error::Config(format!("mode none requires depth 0, got {}", self.depth)));
            }
            Mode::Stacked | Mode::Unrolled if self.depth == 0 => {
                return Err(Error::Config(format!("mode {} requires depth >= 1", self.mode)));
            }
            _ => {}
        }
        if !(0.0..1.0).contains(&self.bn_momentum) {
            return Err(Error::Config(format!("bn_momentum must lie in [0, 1), got {}", self.bn_momentum)));
        }
        if !(self.bn_epsilon > 0.0) {
            return Err(Error::Config(format!("bn_epsilon must be positive, got {}", self.bn_epsilon)));
        }
        Ok(())
    }

    /// Number of distinct parameter layers.
    pub fn param_layers(&self) -> usize {
        match self.mode {
            Mode::Stacked => self.depth,
            Mode::Unrolled => 1,
            Mode::None => 0,
        }
    }

    /// Parameter layer used by propagation step `step` (0-based).
    pub fn layer_for_step(&self, step: usize) -> usize {
        match self.mode {
            Mode::Stacked => step,
            _ => 0,
        }
    }
}
