//! Batched propagation of entity vectors over the knowledge graph.
//!
//! For a set of target entities, the level sets needed at every depth are
//! worked out first (top-down), then vectors are computed bottom-up. At each
//! step all neighbor vectors that share a transition are pushed through it as
//! one batch, which is also what batchnorm normalizes over.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::kg::{Direction, EntityId, KnowledgeGraph, Neighbor};
use crate::model::{Model, Transition};
use crate::numerics::{NodeId, ParamId, Tape, Tensor};
use crate::rng;

/// Where neighbors come from.
///
/// Known entities draw neighbors from `graph`. Entities in `ookb` draw them
/// from `aux`, and never appear as anyone else's neighbor.
#[derive(Clone, Copy, Debug)]
pub struct Neighborhoods<'a> {
    pub graph: &'a KnowledgeGraph,
    pub aux: Option<&'a KnowledgeGraph>,
    pub ookb: &'a BTreeSet<EntityId>,
}

impl<'a> Neighborhoods<'a> {
    pub fn known(graph: &'a KnowledgeGraph, empty: &'a BTreeSet<EntityId>) -> Self {
        Self {
            graph,
            aux: None,
            ookb: empty,
        }
    }

    /// Neighbors of `e` before capping.
    pub fn all(&self, e: EntityId) -> Vec<Neighbor> {
        let source = if self.ookb.contains(&e) { self.aux } else { Some(self.graph) };
        match source {
            Some(g) => g.neighbors(e).filter(|n| !self.ookb.contains(&n.entity)).collect(),
            None => Vec::new(),
        }
    }
}

/// Batchnorm behavior during propagation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Batch statistics, recorded on the tape for running-average updates.
    Train,
    /// Running statistics.
    Infer,
}

/// Keys the neighbor subsampling stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sampling {
    pub seed: u64,
    pub epoch: u64,
}

impl Sampling {
    /// Fixed key used outside training.
    pub fn inference(seed: u64) -> Self {
        Self { seed, epoch: u64::MAX }
    }
}

/// Neighbors of `e` after capping: a uniform sample without replacement,
/// kept in original order, drawn from a stream keyed on `(seed, epoch, e)`.
pub fn capped_neighbors(hood: &Neighborhoods<'_>, e: EntityId, cap: usize, sampling: Sampling) -> Vec<Neighbor> {
    let all = hood.all(e);
    if all.len() <= cap {
        return all;
    }
    let mut r = rng::stream(sampling.seed, "neighbors", sampling.epoch, u64::from(e.0));
    let mut picked = sample(&mut r, all.len(), cap).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| all[i]).collect()
}

/// Output of [`propagate`]: one row per distinct target.
#[derive(Clone, Debug)]
pub struct Propagated {
    pub node: NodeId,
    pub index: HashMap<EntityId, usize>,
}

impl Propagated {
    pub fn row(&self, e: EntityId) -> Option<usize> {
        self.index.get(&e).copied()
    }
}

struct Level {
    entities: Vec<EntityId>,
    index: HashMap<EntityId, usize>,
}

impl Level {
    fn new() -> Self {
        Self {
            entities: Vec::new(),
            index: HashMap::new(),
        }
    }

    fn insert(&mut self, e: EntityId) {
        if let std::collections::hash_map::Entry::Vacant(v) = self.index.entry(e) {
            v.insert(self.entities.len());
            self.entities.push(e);
        }
    }
}

/// Computes depth-`cfg.depth` vectors of `targets` on `tape`.
///
/// Entities with no usable neighbor keep their table row at every depth;
/// an OOKB entity without auxiliary neighbors, or a known entity without a
/// table row and without neighbors, is an inference error.
pub fn propagate(
    tape: &mut Tape<'_>,
    model: &Model,
    hood: &Neighborhoods<'_>,
    targets: &[EntityId],
    phase: Phase,
    sampling: Sampling,
) -> Result<Propagated> {
    let cfg = model.config();
    let depth = cfg.depth;
    let mut memo: HashMap<EntityId, Vec<Neighbor>> = HashMap::new();

    let mut levels: Vec<Level> = (0..=depth).map(|_| Level::new()).collect();
    for &e in targets {
        levels[depth].insert(e);
    }
    for n in (1..=depth).rev() {
        let (lower, upper) = levels.split_at_mut(n);
        let below = &mut lower[n - 1];
        for &e in &upper[0].entities {
            let nb = memo
                .entry(e)
                .or_insert_with(|| capped_neighbors(hood, e, cfg.neighbor_cap, sampling));
            if nb.is_empty() {
                if hood.ookb.contains(&e) {
                    return Err(Error::Inference(format!("OOKB entity {e} has no auxiliary triplet")));
                }
                below.insert(e);
            } else {
                for x in nb.iter() {
                    below.insert(x.entity);
                }
            }
        }
    }
    for &e in &levels[0].entities {
        if hood.ookb.contains(&e) {
            return Err(Error::Inference(format!("OOKB entity {e} needs propagation depth >= 1")));
        }
        if !model.has_entity_row(e) {
            return Err(Error::Inference(format!("entity {e} is unknown and has no neighbors")));
        }
    }

    let rows = levels[0].entities.iter().map(|e| e.0).collect();
    let mut prev = tape.gather(model.entity_param(), rows)?;
    let mut params: HashMap<ParamId, NodeId> = HashMap::new();
    for n in 1..=depth {
        let layer = cfg.layer_for_step(n - 1);
        let (lower, upper) = levels.split_at(n);
        let below = &lower[n - 1];
        let here = &upper[0];

        // edges of every pooled target, grouped by transition key
        let mut groups: BTreeMap<(usize, u32), Vec<u32>> = BTreeMap::new();
        let mut edge_src: Vec<u32> = Vec::new();
        let mut edge_group: Vec<((usize, u32), u32)> = Vec::new();
        let mut pooled_targets = Vec::new();
        let mut seg_edges: Vec<std::ops::Range<usize>> = Vec::new();
        for &e in &here.entities {
            let nb = &memo[&e];
            if nb.is_empty() {
                continue;
            }
            let start = edge_src.len();
            for x in nb {
                let key = match cfg.transition {
                    Transition::Identity => (0, 0),
                    Transition::TanhLayer | Transition::ReluLayer => (x.direction.index(), 0),
                    Transition::RelationReluBn => (x.direction.index(), x.relation.0),
                };
                let src = below.index[&x.entity] as u32;
                let g = groups.entry(key).or_default();
                edge_group.push((key, g.len() as u32));
                g.push(src);
                edge_src.push(src);
            }
            pooled_targets.push(e);
            seg_edges.push(start..edge_src.len());
        }

        let out = if pooled_targets.is_empty() {
            let select = here.entities.iter().map(|e| below.index[e] as u32).collect();
            tape.select_rows(prev, select)
        } else {
            let mut offsets_in_cat: HashMap<(usize, u32), u32> = HashMap::new();
            let mut parts = Vec::new();
            let mut offset = 0u32;
            for (key, src_rows) in &groups {
                offsets_in_cat.insert(*key, offset);
                offset += src_rows.len() as u32;
                let x = tape.select_rows(prev, src_rows.clone());
                parts.push(apply_transition(tape, model, &mut params, x, *key, layer, phase)?);
            }
            let edges = if parts.len() == 1 { parts[0] } else { tape.concat(parts)? };
            let members: Vec<u32> = edge_group.iter().map(|(k, i)| offsets_in_cat[k] + i).collect();
            let mut offsets = Vec::with_capacity(seg_edges.len() + 1);
            offsets.push(0u32);
            for r in &seg_edges {
                offsets.push(r.end as u32);
            }
            let pooled = tape.segment_pool(edges, members, offsets, cfg.pooling)?;
            if pooled_targets.len() == here.entities.len() {
                pooled
            } else {
                let n_pooled = pooled_targets.len() as u32;
                let mut pooled_row = HashMap::new();
                for (i, e) in pooled_targets.iter().enumerate() {
                    pooled_row.insert(*e, i as u32);
                }
                let select = here
                    .entities
                    .iter()
                    .map(|e| pooled_row.get(e).copied().unwrap_or_else(|| n_pooled + below.index[e] as u32))
                    .collect();
                let cat = tape.concat(vec![pooled, prev])?;
                tape.select_rows(cat, select)
            }
        };
        prev = out;
    }

    let top = &levels[depth];
    Ok(Propagated {
        node: prev,
        index: top.index.clone(),
    })
}

fn param_node(tape: &mut Tape<'_>, memo: &mut HashMap<ParamId, NodeId>, id: ParamId) -> NodeId {
    *memo.entry(id).or_insert_with(|| tape.param(id))
}

fn apply_transition(
    tape: &mut Tape<'_>,
    model: &Model,
    memo: &mut HashMap<ParamId, NodeId>,
    x: NodeId,
    key: (usize, u32),
    layer: usize,
    phase: Phase,
) -> Result<NodeId> {
    let cfg = model.config();
    let dir = if key.0 == 0 { Direction::Head } else { Direction::Tail };
    let rel = crate::kg::RelationId(key.1);
    match cfg.transition {
        Transition::Identity => Ok(x),
        Transition::TanhLayer | Transition::ReluLayer => {
            let a = model.transition_param(layer, dir, rel).expect("transition parameters exist");
            let a = param_node(tape, memo, a);
            let y = tape.matmul_t(x, a)?;
            Ok(if cfg.transition == Transition::TanhLayer {
                tape.tanh(y)
            } else {
                tape.relu(y)
            })
        }
        Transition::RelationReluBn => {
            let a = model
                .transition_param(layer, dir, rel)
                .ok_or_else(|| Error::Inference(format!("unknown relation id {rel}")))?;
            let bn = model.bn_params(layer, dir, rel).expect("bn parameters exist");
            let a = param_node(tape, memo, a);
            let gamma = param_node(tape, memo, bn.gamma);
            let beta = param_node(tape, memo, bn.beta);
            let y = tape.matmul_t(x, a)?;
            let y = match phase {
                Phase::Train => tape.batchnorm_train(y, gamma, beta, cfg.bn_epsilon, Some((bn.mean, bn.var)))?,
                Phase::Infer => tape.batchnorm_infer(y, gamma, beta, cfg.bn_epsilon, (bn.mean, bn.var))?,
            };
            Ok(tape.relu(y))
        }
    }
}

/// Frozen vectors for a set of entities.
#[derive(Clone, Debug)]
pub struct Embeddings {
    index: HashMap<EntityId, usize>,
    vectors: Tensor,
}

impl Embeddings {
    pub fn new(index: HashMap<EntityId, usize>, vectors: Tensor) -> Self {
        Self { index, vectors }
    }

    pub fn get(&self, e: EntityId) -> Option<&[f64]> {
        self.index.get(&e).map(|&i| self.vectors.row(i))
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }
}

/// Inference-mode vectors of `entities`.
pub fn embed(model: &Model, hood: &Neighborhoods<'_>, entities: &[EntityId], seed: u64) -> Result<Embeddings> {
    let mut tape = Tape::new(model.store());
    let p = propagate(&mut tape, model, hood, entities, Phase::Infer, Sampling::inference(seed))?;
    if let Some(f) = tape.fault() {
        return Err(Error::Numerical(f.to_string()));
    }
    Ok(Embeddings::new(p.index, tape.value(p.node).clone()))
}
