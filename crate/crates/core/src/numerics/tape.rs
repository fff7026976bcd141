//! Tape-based reverse-mode differentiation over batched 2-D tensors.
//!
//! A [`Tape`] borrows a [`ParamStore`] and records each op with the values
//! its backward rule needs. [`Tape::backward`] walks the tape once in reverse
//! and returns dense per-parameter [`Gradients`]. The first op producing a
//! non-finite value is remembered, and `backward` refuses to run past it.

use crate::error::{Error, Result};
use crate::numerics::batchnorm::{self, BatchStats, BnCache};
use crate::numerics::ops::{Norm, Pooling};
use crate::numerics::store::{Gradients, ParamId, ParamStore};
use crate::numerics::tensor::{matmul, matmul_nt, matmul_tn, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op {
    Input,
    Param(ParamId),
    Gather { param: ParamId, rows: Vec<u32> },
    SelectRows { src: NodeId, rows: Vec<u32> },
    Concat(Vec<NodeId>),
    MatMulT { x: NodeId, w: NodeId },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    BatchNorm { x: NodeId, gamma: NodeId, beta: NodeId, cache: BnCache, training: bool },
    SegmentPool { x: NodeId, members: Vec<u32>, offsets: Vec<u32>, kind: Pooling, argmax: Vec<u32> },
    RowNorm { x: NodeId, norm: Norm },
    Sum(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::Gather { .. } => "gather",
            Op::SelectRows { .. } => "select_rows",
            Op::Concat(_) => "concat",
            Op::MatMulT { .. } => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Relu(_) => "relu",
            Op::Tanh(_) => "tanh",
            Op::BatchNorm { .. } => "batchnorm",
            Op::SegmentPool { .. } => "pool",
            Op::RowNorm { .. } => "norm",
            Op::Sum(_) => "sum",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Batch statistics observed by a training-mode batchnorm, tagged with the
/// running-statistic parameters they should be folded into.
#[derive(Clone, Debug)]
pub struct RecordedBatch {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub stats: BatchStats,
}

pub struct Tape<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    fault: Option<String>,
    batches: Vec<RecordedBatch>,
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            fault: None,
            batches: Vec::new(),
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        if self.fault.is_none() && !value.is_finite() {
            self.fault = Some(format!("{} (node {}) produced a non-finite value", op.name(), self.nodes.len()));
        }
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// First non-finite intermediate, if any.
    pub fn fault(&self) -> Option<&str> {
        self.fault.as_deref()
    }

    /// Batch statistics of every training-mode batchnorm on the tape.
    pub fn recorded_batches(&self) -> &[RecordedBatch] {
        &self.batches
    }

    /// A constant.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Input)
    }

    /// The whole value of a parameter.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        let value = self.store.value(id).clone();
        self.push(value, Op::Param(id))
    }

    /// Selected rows of a parameter table.
    pub fn gather(&mut self, param: ParamId, rows: Vec<u32>) -> Result<NodeId> {
        let table = self.store.value(param);
        let d = table.cols();
        let mut out = Tensor::zeros(rows.len(), d);
        for (i, &r) in rows.iter().enumerate() {
            let r = r as usize;
            if r >= table.rows() {
                return Err(Error::Shape(format!(
                    "row {r} out of range for {:?} with {} rows",
                    self.store.param(param).name,
                    table.rows()
                )));
            }
            out.row_mut(i).copy_from_slice(table.row(r));
        }
        Ok(self.push(out, Op::Gather { param, rows }))
    }

    pub fn select_rows(&mut self, src: NodeId, rows: Vec<u32>) -> NodeId {
        let s = &self.nodes[src.0].value;
        let d = s.cols();
        let mut out = Tensor::zeros(rows.len(), d);
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i).copy_from_slice(s.row(r as usize));
        }
        self.push(out, Op::SelectRows { src, rows })
    }

    /// Stacks the rows of equally wide nodes.
    pub fn concat(&mut self, parts: Vec<NodeId>) -> Result<NodeId> {
        let d = parts.first().map_or(0, |p| self.nodes[p.0].value.cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for p in &parts {
            let v = &self.nodes[p.0].value;
            if v.cols() != d && v.rows() > 0 {
                return Err(Error::Shape(format!("concat of widths {} and {}", d, v.cols())));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = Tensor::from_vec(rows, d, data)?;
        Ok(self.push(out, Op::Concat(parts)))
    }

    /// `x · wᵀ`.
    pub fn matmul_t(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let y = matmul_nt(&self.nodes[x.0].value, &self.nodes[w.0].value)?;
        Ok(self.push(y, Op::MatMulT { x, w }))
    }

    fn binary(&mut self, a: NodeId, b: NodeId, sign: f64) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape() != vb.shape() {
            return Err(Error::Shape(format!("elementwise op on {:?} and {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + sign * y).collect();
        let out = Tensor::from_vec(va.rows(), va.cols(), data)?;
        let op = if sign > 0.0 { Op::Add(a, b) } else { Op::Sub(a, b) };
        Ok(self.push(out, op))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, 1.0)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, -1.0)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let out = self.nodes[x.0].value.map(|v| c * v);
        self.push(out, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let out = self.nodes[x.0].value.map(|v| v + c);
        self.push(out, Op::AddScalar(x))
    }

    /// ReLU with subgradient 0 at 0.
    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.nodes[x.0].value.map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(out, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out = self.nodes[x.0].value.map(f64::tanh);
        self.push(out, Op::Tanh(x))
    }

    /// Training-mode batchnorm. The batch statistics are recorded for a later
    /// running-average update into `running = (mean, var)` when given.
    pub fn batchnorm_train(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
        running: Option<(ParamId, ParamId)>,
    ) -> Result<NodeId> {
        let (y, cache, stats) = batchnorm::forward_train(
            &self.nodes[x.0].value,
            self.nodes[gamma.0].value.data(),
            self.nodes[beta.0].value.data(),
            eps,
        )?;
        if let Some((running_mean, running_var)) = running {
            self.batches.push(RecordedBatch {
                running_mean,
                running_var,
                stats,
            });
        }
        Ok(self.push(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache,
                training: true,
            },
        ))
    }

    /// Inference-mode batchnorm using stored running statistics.
    pub fn batchnorm_infer(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
        running: (ParamId, ParamId),
    ) -> Result<NodeId> {
        let (y, cache) = batchnorm::forward_infer(
            &self.nodes[x.0].value,
            self.nodes[gamma.0].value.data(),
            self.nodes[beta.0].value.data(),
            self.store.value(running.0).data(),
            self.store.value(running.1).data(),
            eps,
        )?;
        Ok(self.push(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache,
                training: false,
            },
        ))
    }

    /// Pools segments of rows of `x`. Segment `s` consists of rows
    /// `members[offsets[s]..offsets[s + 1]]`; every segment must be nonempty.
    pub fn segment_pool(
        &mut self,
        x: NodeId,
        members: Vec<u32>,
        offsets: Vec<u32>,
        kind: Pooling,
    ) -> Result<NodeId> {
        let xv = &self.nodes[x.0].value;
        let d = xv.cols();
        let k = offsets.len().saturating_sub(1);
        let mut out = Tensor::zeros(k, d);
        let mut argmax = if kind == Pooling::Max { vec![0u32; k * d] } else { Vec::new() };
        for s in 0..k {
            let seg = &members[offsets[s] as usize..offsets[s + 1] as usize];
            if seg.is_empty() {
                return Err(Error::Inference(format!("pooling segment {s} is empty")));
            }
            let o = out.row_mut(s);
            o.copy_from_slice(xv.row(seg[0] as usize));
            if kind == Pooling::Max {
                argmax[s * d..(s + 1) * d].iter_mut().for_each(|a| *a = seg[0]);
            }
            for &m in &seg[1..] {
                let r = xv.row(m as usize);
                for j in 0..d {
                    match kind {
                        Pooling::Sum | Pooling::Avg => o[j] += r[j],
                        Pooling::Max => {
                            if r[j] > o[j] {
                                o[j] = r[j];
                                argmax[s * d + j] = m;
                            }
                        }
                    }
                }
            }
            if kind == Pooling::Avg {
                let n = seg.len() as f64;
                o.iter_mut().for_each(|v| *v /= n);
            }
        }
        Ok(self.push(
            out,
            Op::SegmentPool {
                x,
                members,
                offsets,
                kind,
                argmax,
            },
        ))
    }

    /// Per-row L1 or L2 norm, as an `n × 1` column.
    pub fn row_norm(&mut self, x: NodeId, norm: Norm) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let data = (0..xv.rows()).map(|i| crate::numerics::ops::l_norm(xv.row(i), norm)).collect();
        let out = Tensor::from_vec(xv.rows(), 1, data).expect("column shape");
        self.push(out, Op::RowNorm { x, norm })
    }

    /// Sum of all entries, as `1 × 1`.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.nodes[x.0].value.data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Gradients of the scalar `loss` with respect to every parameter reached.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if let Some(f) = &self.fault {
            return Err(Error::Numerical(f.clone()));
        }
        let lv = &self.nodes[loss.0].value;
        if lv.shape() != (1, 1) {
            return Err(Error::Shape(format!("loss must be a scalar, got {:?}", lv.shape())));
        }
        if !lv.item().is_finite() {
            return Err(Error::Numerical(format!("loss is {}", lv.item())));
        }
        let mut grads = Gradients::new(self.store.len());
        let mut node_grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        node_grads[loss.0] = Some(Tensor::scalar(1.0));

        fn acc(slot: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
            match &mut slot[id.0] {
                Some(t) => t.add_assign(&g),
                s @ None => *s = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(dy) = node_grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(p) => {
                    let (r, c) = dy.shape();
                    grads.slot(*p, r, c).add_assign(&dy);
                }
                Op::Gather { param, rows } => {
                    let (r, c) = self.store.value(*param).shape();
                    let g = grads.slot(*param, r, c);
                    for (k, &row) in rows.iter().enumerate() {
                        for (a, b) in g.row_mut(row as usize).iter_mut().zip(dy.row(k)) {
                            *a += b;
                        }
                    }
                }
                Op::SelectRows { src, rows } => {
                    let (r, c) = self.nodes[src.0].value.shape();
                    let mut g = Tensor::zeros(r, c);
                    for (k, &row) in rows.iter().enumerate() {
                        for (a, b) in g.row_mut(row as usize).iter_mut().zip(dy.row(k)) {
                            *a += b;
                        }
                    }
                    acc(&mut node_grads, *src, g);
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let (r, c) = self.nodes[p.0].value.shape();
                        let g = Tensor::from_vec(r, c, dy.data()[start * c..(start + r) * c].to_vec())?;
                        start += r;
                        acc(&mut node_grads, *p, g);
                    }
                }
                Op::MatMulT { x, w } => {
                    let dx = matmul(&dy, &self.nodes[w.0].value)?;
                    let dw = matmul_tn(&dy, &self.nodes[x.0].value)?;
                    acc(&mut node_grads, *x, dx);
                    acc(&mut node_grads, *w, dw);
                }
                Op::Add(a, b) => {
                    acc(&mut node_grads, *a, dy.clone());
                    acc(&mut node_grads, *b, dy);
                }
                Op::Sub(a, b) => {
                    acc(&mut node_grads, *b, dy.map(|v| -v));
                    acc(&mut node_grads, *a, dy);
                }
                Op::Scale(x, c) => acc(&mut node_grads, *x, dy.map(|v| c * v)),
                Op::AddScalar(x) => acc(&mut node_grads, *x, dy),
                Op::Relu(x) => {
                    let xv = &self.nodes[x.0].value;
                    let data = dy
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                        .collect();
                    acc(&mut node_grads, *x, Tensor::from_vec(dy.rows(), dy.cols(), data)?);
                }
                Op::Tanh(x) => {
                    let data = dy
                        .data()
                        .iter()
                        .zip(node.value.data())
                        .map(|(g, y)| g * (1.0 - y * y))
                        .collect();
                    acc(&mut node_grads, *x, Tensor::from_vec(dy.rows(), dy.cols(), data)?);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    cache,
                    training,
                } => {
                    let gv = self.nodes[gamma.0].value.data();
                    let (dx, dgamma, dbeta) = if *training {
                        batchnorm::backward_train(&dy, cache, gv)
                    } else {
                        batchnorm::backward_infer(&dy, cache, gv)
                    };
                    acc(&mut node_grads, *x, dx);
                    acc(&mut node_grads, *gamma, Tensor::row_vector(&dgamma));
                    acc(&mut node_grads, *beta, Tensor::row_vector(&dbeta));
                }
                Op::SegmentPool {
                    x,
                    members,
                    offsets,
                    kind,
                    argmax,
                } => {
                    let (r, d) = self.nodes[x.0].value.shape();
                    let mut g = Tensor::zeros(r, d);
                    for s in 0..offsets.len() - 1 {
                        let seg = &members[offsets[s] as usize..offsets[s + 1] as usize];
                        let gy = dy.row(s);
                        match kind {
                            Pooling::Sum | Pooling::Avg => {
                                let w = if *kind == Pooling::Avg { 1.0 / seg.len() as f64 } else { 1.0 };
                                for &m in seg {
                                    for (a, b) in g.row_mut(m as usize).iter_mut().zip(gy) {
                                        *a += w * b;
                                    }
                                }
                            }
                            Pooling::Max => {
                                for j in 0..d {
                                    let m = argmax[s * d + j] as usize;
                                    g.data_mut()[m * d + j] += gy[j];
                                }
                            }
                        }
                    }
                    acc(&mut node_grads, *x, g);
                }
                Op::RowNorm { x, norm } => {
                    let xv = &self.nodes[x.0].value;
                    let (r, d) = xv.shape();
                    let mut g = Tensor::zeros(r, d);
                    for i in 0..r {
                        let gy = dy.get(i, 0);
                        let xr = xv.row(i);
                        let out = g.row_mut(i);
                        match norm {
                            Norm::L1 => {
                                for j in 0..d {
                                    out[j] = if xr[j] > 0.0 {
                                        gy
                                    } else if xr[j] < 0.0 {
                                        -gy
                                    } else {
                                        0.0
                                    };
                                }
                            }
                            Norm::L2 => {
                                let n = node.value.get(i, 0);
                                if n > 0.0 {
                                    for j in 0..d {
                                        out[j] = gy * xr[j] / n;
                                    }
                                }
                            }
                        }
                    }
                    acc(&mut node_grads, *x, g);
                }
                Op::Sum(x) => {
                    let (r, c) = self.nodes[x.0].value.shape();
                    acc(&mut node_grads, *x, Tensor::filled(r, c, dy.item()));
                }
            }
        }
        Ok(grads)
    }
}

/// Folds every recorded batch into the running statistics of `store`.
pub fn apply_running_updates(store: &mut ParamStore, batches: &[RecordedBatch], momentum: f64) {
    for b in batches {
        let mut mean = store.value(b.running_mean).data().to_vec();
        let mut var = store.value(b.running_var).data().to_vec();
        batchnorm::update_running(&mut mean, &mut var, &b.stats, momentum);
        store.value_mut(b.running_mean).data_mut().copy_from_slice(&mean);
        store.value_mut(b.running_var).data_mut().copy_from_slice(&var);
    }
}
