//! Named parameters, their Adam state, and the binary checkpoint format.
//!
//! A checkpoint is two files: `params.bin` holds raw little-endian `f64`
//! values back to back, and `params.json` lists every tensor with its name,
//! shape, dtype and byte offset. Trainable parameters contribute two extra
//! tensors, `<name>.adam_m` and `<name>.adam_v`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
    pub adam: AdamMoments,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamMoments {
    pub m: Tensor,
    pub v: Tensor,
    pub steps: u64,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor, trainable: bool) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::Argument(format!("duplicate parameter name {name:?}")));
        }
        let id = ParamId(self.params.len());
        let (r, c) = value.shape();
        let adam = if trainable {
            AdamMoments {
                m: Tensor::zeros(r, c),
                v: Tensor::zeros(r, c),
                steps: 0,
            }
        } else {
            AdamMoments {
                m: Tensor::zeros(0, 0),
                v: Tensor::zeros(0, 0),
                steps: 0,
            }
        };
        self.params.push(Param {
            name: name.to_owned(),
            value,
            trainable,
            adam,
        });
        self.by_name.insert(name.to_owned(), id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Number of scalar trainable values.
    pub fn trainable_size(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut bin = Vec::new();
        let mut manifest = Vec::new();
        let mut push = |name: String, t: &Tensor, bin: &mut Vec<u8>| {
            manifest.push(TensorEntry {
                name,
                shape: [t.rows(), t.cols()],
                dtype: "f64".into(),
                offset: bin.len() as u64,
            });
            for v in t.data() {
                bin.extend_from_slice(&v.to_le_bytes());
            }
        };
        let mut params = Vec::new();
        for p in &self.params {
            push(p.name.clone(), &p.value, &mut bin);
            if p.trainable {
                push(format!("{}.adam_m", p.name), &p.adam.m, &mut bin);
                push(format!("{}.adam_v", p.name), &p.adam.v, &mut bin);
            }
            params.push(ParamEntry {
                name: p.name.clone(),
                trainable: p.trainable,
                adam_steps: p.adam.steps,
            });
        }
        let doc = Manifest {
            params,
            tensors: manifest,
        };
        let bin_path = dir.join("params.bin");
        fs::write(&bin_path, &bin).map_err(|e| Error::io(&bin_path, e))?;
        let json_path = dir.join("params.json");
        let json = serde_json::to_string_pretty(&doc).expect("manifest serialize");
        fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let json_path = dir.join("params.json");
        let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let doc: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", json_path.display())))?;
        let bin_path = dir.join("params.bin");
        let bin = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
        let tensors: HashMap<&str, &TensorEntry> = doc.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let read = |name: &str| -> Result<Tensor> {
            let entry = tensors
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("tensor {name:?} missing from manifest")))?;
            if entry.dtype != "f64" {
                return Err(Error::Checkpoint(format!("unsupported dtype {}", entry.dtype)));
            }
            let n = entry.shape[0] * entry.shape[1];
            let start = entry.offset as usize;
            let end = start + n * 8;
            let bytes = bin
                .get(start..end)
                .ok_or_else(|| Error::Checkpoint(format!("tensor {name:?} runs past end of params.bin")))?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            Tensor::from_vec(entry.shape[0], entry.shape[1], data)
        };
        let mut store = ParamStore::new();
        for p in &doc.params {
            let value = read(&p.name)?;
            let id = store.add(&p.name, value, p.trainable)?;
            if p.trainable {
                let adam = AdamMoments {
                    m: read(&format!("{}.adam_m", p.name))?,
                    v: read(&format!("{}.adam_v", p.name))?,
                    steps: p.adam_steps,
                };
                if adam.m.shape() != store.value(id).shape() || adam.v.shape() != store.value(id).shape() {
                    return Err(Error::Checkpoint(format!("Adam moments of {:?} have the wrong shape", p.name)));
                }
                store.params[id.0].adam = adam;
            }
        }
        Ok(store)
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    params: Vec<ParamEntry>,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    trainable: bool,
    adam_steps: u64,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    dtype: String,
    offset: u64,
}

/// Dense per-parameter gradients produced by a backward pass.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn new(n_params: usize) -> Self {
        Self {
            grads: vec![None; n_params],
        }
    }

    /// `None` means the parameter was not reached; its gradient is zero.
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient of `id` shaped like `store`'s value, zero when unreached.
    pub fn dense(&self, store: &ParamStore, id: ParamId) -> Tensor {
        match self.get(id) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = store.value(id).shape();
                Tensor::zeros(r, c)
            }
        }
    }

    pub(crate) fn slot(&mut self, id: ParamId, rows: usize, cols: usize) -> &mut Tensor {
        self.grads[id.0].get_or_insert_with(|| Tensor::zeros(rows, cols))
    }

    pub fn set(&mut self, id: ParamId, g: Tensor) {
        self.grads[id.0] = Some(g);
    }

    /// Negates one component; used to check that gradient checking catches
    /// a wrong sign.
    pub fn flip_sign(&mut self, id: ParamId, index: usize) {
        if let Some(g) = self.grads[id.0].as_mut() {
            g.data_mut()[index] = -g.data()[index];
        }
    }
}

/// Adam with the epoch-indexed step size `alpha1 / (alpha2 * k + 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            alpha1: 0.01,
            alpha2: 0.0001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl Adam {
    /// Step size after `epochs_done` completed epochs.
    pub fn step_size(&self, epochs_done: u64) -> f64 {
        self.alpha1 / (self.alpha2 * epochs_done as f64 + 1.0)
    }

    /// One bias-corrected Adam update of every trainable parameter.
    /// Parameters missing from `grads` are updated with a zero gradient.
    pub fn step(&self, store: &mut ParamStore, grads: &Gradients, epochs_done: u64) -> Result<()> {
        let lr = self.step_size(epochs_done);
        for (i, p) in store.params.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let g = grads.get(ParamId(i));
            if let Some(g) = g {
                if g.shape() != p.value.shape() {
                    return Err(Error::Shape(format!(
                        "gradient of {:?} is {:?}, parameter is {:?}",
                        p.name,
                        g.shape(),
                        p.value.shape()
                    )));
                }
            }
            p.adam.steps += 1;
            let t = p.adam.steps as i32;
            let bc1 = 1.0 - self.beta1.powi(t);
            let bc2 = 1.0 - self.beta2.powi(t);
            let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
            let g = g.map(Tensor::data);
            let m = p.adam.m.data_mut();
            let v = p.adam.v.data_mut();
            for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                let gj = g.map_or(0.0, |g| g[j]);
                m[j] = b1 * m[j] + (1.0 - b1) * gj;
                v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
