//! Eager (non-recording) versions of the elementwise and reduction ops, plus
//! the shared enums for pooling and norms.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::tensor::{matmul_nt, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Sum,
    Avg,
    Max,
}

impl Pooling {
    pub const ALL: [Pooling; 3] = [Pooling::Sum, Pooling::Avg, Pooling::Max];

    pub fn name(self) -> &'static str {
        match self {
            Pooling::Sum => "sum",
            Pooling::Avg => "avg",
            Pooling::Max => "max",
        }
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Pooling::Sum),
            "avg" | "average" | "mean" => Ok(Pooling::Avg),
            "max" => Ok(Pooling::Max),
            other => Err(Error::Config(format!("unknown pooling {other:?} (expected sum, avg or max)"))),
        }
    }
}

/// Which norm scores a triplet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    L2,
}

impl Norm {
    pub fn from_p(p: u32) -> Result<Self> {
        match p {
            1 => Ok(Norm::L1),
            2 => Ok(Norm::L2),
            other => Err(Error::Config(format!("norm p must be 1 or 2, got {other}"))),
        }
    }

    pub fn p(self) -> u32 {
        match self {
            Norm::L1 => 1,
            Norm::L2 => 2,
        }
    }
}

/// `A · x_i` for every row `x_i` of `x`.
pub fn affine(a: &Tensor, x: &Tensor) -> Result<Tensor> {
    if a.rows() != a.cols() {
        return Err(Error::Shape(format!("transition matrix must be square, got {:?}", a.shape())));
    }
    matmul_nt(x, a)
}

/// Elementwise ReLU.
pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn tanh_act(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

pub fn l_norm(x: &[f64], norm: Norm) -> f64 {
    match norm {
        Norm::L1 => x.iter().map(|v| v.abs()).sum(),
        Norm::L2 => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
    }
}

/// Pools a nonempty set of equally long vectors.
pub fn pool(set: &[&[f64]], pooling: Pooling) -> Result<Vec<f64>> {
    let first = set
        .first()
        .ok_or_else(|| Error::Inference("cannot pool an empty set of vectors".into()))?;
    let d = first.len();
    if set.iter().any(|v| v.len() != d) {
        return Err(Error::Shape("pooled vectors differ in length".into()));
    }
    let mut out = first.to_vec();
    for v in &set[1..] {
        for (o, x) in out.iter_mut().zip(v.iter()) {
            match pooling {
                Pooling::Sum | Pooling::Avg => *o += x,
                Pooling::Max => *o = o.max(*x),
            }
        }
    }
    if pooling == Pooling::Avg {
        let n = set.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
    }
    Ok(out)
}
