//! Gradient self-checks on small fixed fixtures.

use std::collections::BTreeSet;

use rand::Rng;

use crate::error::Result;
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triplet};
use crate::model::{forward_pairs, Mode, Model, Neighborhoods, Objective, Phase, PropagationConfig, Sampling, Transition};
use crate::numerics::gradcheck::{self, Options, Report};
use crate::numerics::ops::Norm;
use crate::numerics::{Gradients, ParamId, ParamStore, Pooling, Tape, Tensor};
use crate::rng;

/// Five entities, two relations, every entity with neighbors on both sides.
pub struct Fixture {
    pub model: Model,
    pub graph: KnowledgeGraph,
    pub pos: Vec<Triplet>,
    pub neg: Vec<Triplet>,
    pub objective: Objective,
    pub tau: f64,
}

fn t(h: u32, r: u32, tl: u32) -> Triplet {
    Triplet::new(EntityId(h), RelationId(r), EntityId(tl))
}

impl Fixture {
    pub fn new(pooling: Pooling, mode: Mode, depth: usize, objective: Objective, seed: u64) -> Result<Self> {
        let pos = vec![t(0, 0, 1), t(1, 0, 2), t(2, 1, 3), t(3, 1, 4), t(4, 0, 0), t(0, 1, 3)];
        let neg = vec![t(0, 0, 3), t(4, 0, 2), t(2, 1, 0), t(1, 1, 4), t(4, 0, 3), t(2, 1, 1)];
        let graph = KnowledgeGraph::build(pos.iter().copied());
        let cfg = PropagationConfig {
            depth,
            mode,
            pooling,
            transition: Transition::RelationReluBn,
            neighbor_cap: 64,
            norm: Norm::L1,
            dim: 4,
            ..PropagationConfig::default()
        };
        let mut model = Model::new(cfg, 5, 2, seed)?;
        // Spread gamma and beta away from 1 and 0 so that no ReLU input sits
        // on the kink and every BN parameter has a nonzero gradient.
        let mut r = rng::stream(seed, "selfcheck", 0, 0);
        let ids: Vec<(ParamId, bool)> = model
            .store()
            .iter()
            .filter(|(_, p)| p.trainable && p.name.starts_with("bn."))
            .map(|(id, p)| (id, p.name.ends_with(".gamma")))
            .collect();
        for (id, is_gamma) in ids {
            for x in model.store_mut().value_mut(id).data_mut() {
                *x = if is_gamma { r.random_range(0.6..1.4) } else { r.random_range(-0.6..0.6) };
            }
        }
        let tau = match objective {
            Objective::Absolute => 40.0,
            Objective::Pairwise => 60.0,
        };
        Ok(Self {
            model,
            graph,
            pos,
            neg,
            objective,
            tau,
        })
    }

    /// Training-mode loss and its analytic gradient under `store`.
    pub fn loss(&self, store: &ParamStore) -> Result<(f64, Gradients)> {
        let empty = BTreeSet::new();
        let hood = Neighborhoods::known(&self.graph, &empty);
        let mut tape = Tape::new(store);
        let fwd = forward_pairs(
            &mut tape,
            &self.model,
            &hood,
            &self.pos,
            &self.neg,
            self.objective,
            self.tau,
            Phase::Train,
            Sampling { seed: 0, epoch: 0 },
        )?;
        let value = tape.value(fwd.loss).item();
        Ok((value, tape.backward(fwd.loss)?))
    }
}

/// Full-model check: entity and relation vectors, transition matrices and
/// batchnorm scale and shift. `wrong_sign` flips the largest analytic entry
/// of the relation table first, which must be caught.
pub fn model_gradcheck(fixture: &Fixture, opts: Options, wrong_sign: bool) -> Result<Report> {
    let mut store = fixture.model.store().clone();
    let (_, mut grads) = fixture.loss(&store)?;
    if wrong_sign {
        let id = fixture.model.relation_param();
        let dense = grads.dense(&store, id);
        let (index, _) = dense
            .data()
            .iter()
            .enumerate()
            .fold((0, 0.0), |best, (i, g)| if g.abs() > best.1 { (i, g.abs()) } else { best });
        grads.flip_sign(id, index);
    }
    gradcheck::check(&mut store, &grads, |s| fixture.loss(s).map(|r| r.0), opts)
}

/// Primitive chain: affine, batchnorm, relu plus tanh, pooling, L1 and L2
/// norms, on random inputs.
pub fn numerics_gradcheck(pooling: Pooling, seed: u64, opts: Options) -> Result<Report> {
    let mut r = rng::stream(seed, "selfcheck-chain", 0, 0);
    let mut uniform = |rows: usize, cols: usize| {
        let data = (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(rows, cols, data)
    };
    let mut store = ParamStore::new();
    let x = store.add("x", uniform(6, 4)?, true)?;
    let a = store.add("a", uniform(4, 4)?, true)?;
    let gamma = store.add("gamma", uniform(1, 4)?, true)?;
    let beta = store.add("beta", uniform(1, 4)?, true)?;
    let forward = |s: &ParamStore| -> Result<(f64, Gradients)> {
        let mut t = Tape::new(s);
        let (xn, an, gn, bn) = (t.param(x), t.param(a), t.param(gamma), t.param(beta));
        let y = t.matmul_t(xn, an)?;
        let y = t.batchnorm_train(y, gn, bn, 1e-5, None)?;
        let rl = t.relu(y);
        let th = t.tanh(y);
        let z = t.add(rl, th)?;
        let p = t.segment_pool(z, vec![0, 2, 4, 1, 3, 5], vec![0, 3, 6], pooling)?;
        let n1 = t.row_norm(p, Norm::L1);
        let n2 = t.row_norm(z, Norm::L2);
        let s1 = t.sum(n1);
        let s2 = t.sum(n2);
        let loss = t.add(s1, s2)?;
        let value = t.value(loss).item();
        Ok((value, t.backward(loss)?))
    };
    let (_, grads) = forward(&store)?;
    gradcheck::check(&mut store, &grads, |s| forward(s).map(|r| r.0), opts)
}
