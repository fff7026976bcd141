//! Minibatch training with Bernoulli negative sampling and Adam.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{entities_of, EntityId, KnowledgeGraph, RelationId, Triplet};
use crate::model::{forward_pairs, Model, Neighborhoods, Objective, Phase, Sampling};
use crate::numerics::tape::apply_running_updates;
use crate::numerics::{Adam, Tape};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: u64,
    pub minibatch: usize,
    pub tau: f64,
    pub objective: Objective,
    pub seed: u64,
    /// Checkpoint every this many epochs (the final epoch is always saved).
    pub checkpoint_every: u64,
    /// Reject corrupted triplets that occur in the training graph.
    pub filter_negatives: bool,
    /// Project entity rows onto the unit L2 ball after every update.
    pub unit_ball: bool,
    pub adam: Adam,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            minibatch: 5000,
            tau: 300.0,
            objective: Objective::Absolute,
            seed: 0,
            checkpoint_every: 10,
            filter_negatives: false,
            unit_ball: false,
            adam: Adam::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.minibatch == 0 {
            return Err(Error::Config("minibatch must be positive".into()));
        }
        if !(self.tau >= 0.0) || !self.tau.is_finite() {
            return Err(Error::Config(format!("tau must be a nonnegative number, got {}", self.tau)));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be positive".into()));
        }
        let a = &self.adam;
        if !(a.alpha1 > 0.0) || !(a.alpha2 >= 0.0) || !(a.epsilon > 0.0) {
            return Err(Error::Config("adam step-size parameters must be positive".into()));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Mean tails per head and heads per tail, per relation.
#[derive(Clone, Debug, PartialEq)]
pub struct BernoulliStats {
    per_relation: HashMap<RelationId, (f64, f64)>,
}

impl BernoulliStats {
    pub fn compute(g: &KnowledgeGraph) -> Result<Self> {
        if g.is_empty() {
            return Err(Error::Data("cannot compute corruption statistics of an empty graph".into()));
        }
        let mut count: HashMap<RelationId, usize> = HashMap::new();
        let mut heads: HashSet<(RelationId, EntityId)> = HashSet::new();
        let mut tails: HashSet<(RelationId, EntityId)> = HashSet::new();
        for t in g.triplets() {
            *count.entry(t.relation).or_default() += 1;
            heads.insert((t.relation, t.head));
            tails.insert((t.relation, t.tail));
        }
        let mut n_heads: HashMap<RelationId, usize> = HashMap::new();
        let mut n_tails: HashMap<RelationId, usize> = HashMap::new();
        for (r, _) in heads {
            *n_heads.entry(r).or_default() += 1;
        }
        for (r, _) in tails {
            *n_tails.entry(r).or_default() += 1;
        }
        let per_relation = count
            .into_iter()
            .map(|(r, c)| {
                let c = c as f64;
                (r, (c / n_heads[&r] as f64, c / n_tails[&r] as f64))
            })
            .collect();
        Ok(Self { per_relation })
    }

    pub fn from_values(values: impl IntoIterator<Item = (RelationId, f64, f64)>) -> Self {
        Self {
            per_relation: values.into_iter().map(|(r, a, b)| (r, (a, b))).collect(),
        }
    }

    /// `(tph, hpt)` of `r`, if `r` occurs in the graph.
    pub fn get(&self, r: RelationId) -> Option<(f64, f64)> {
        self.per_relation.get(&r).copied()
    }

    /// Probability of replacing the head: `tph / (tph + hpt)`, or ½ for a
    /// relation without statistics.
    pub fn head_probability(&self, r: RelationId) -> f64 {
        self.get(r).map_or(0.5, |(tph, hpt)| tph / (tph + hpt))
    }
}

/// Replaces the head (with the Bernoulli probability) or the tail of `t` by
/// an entity drawn uniformly from `pool`, redrawing until the result differs
/// from `t`. With `filter`, corruptions found in that graph are redrawn too,
/// up to a bounded number of attempts.
pub fn corrupt<R: Rng + ?Sized>(
    t: &Triplet,
    stats: &BernoulliStats,
    pool: &[EntityId],
    rng: &mut R,
    filter: Option<&KnowledgeGraph>,
) -> Result<Triplet> {
    const FILTER_ATTEMPTS: usize = 100;
    let replace_head = rng.random::<f64>() < stats.head_probability(t.relation);
    let original = if replace_head { t.head } else { t.tail };
    if !pool.iter().any(|&e| e != original) {
        return Err(Error::Argument(format!(
            "entity pool of size {} cannot produce a corrupted triplet",
            pool.len()
        )));
    }
    let mut attempts = 0;
    loop {
        let e = pool[rng.random_range(0..pool.len())];
        if e == original {
            continue;
        }
        let c = if replace_head {
            Triplet::new(e, t.relation, t.tail)
        } else {
            Triplet::new(t.head, t.relation, e)
        };
        attempts += 1;
        match filter {
            Some(g) if attempts < FILTER_ATTEMPTS && g.contains(&c) => continue,
            _ => return Ok(c),
        }
    }
}

/// Per-epoch record written to the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EpochMetrics {
    /// Number of completed epochs, starting at 1.
    pub epoch: u64,
    /// Objective summed over the epoch divided by the number of positives.
    pub loss: f64,
    pub mean_pos_score: f64,
    pub mean_neg_score: f64,
    pub step_size: f64,
    /// Seconds spent on the epoch.
    pub wall_time: f64,
}

pub struct Trainer<'a> {
    model: Model,
    cfg: TrainConfig,
    graph: &'a KnowledgeGraph,
    pool: Vec<EntityId>,
    stats: BernoulliStats,
    epochs_done: u64,
    no_ookb: BTreeSet<EntityId>,
}

impl<'a> Trainer<'a> {
    pub fn new(model: Model, cfg: TrainConfig, graph: &'a KnowledgeGraph) -> Result<Self> {
        Self::resume(model, cfg, graph, 0)
    }

    /// Continues a run after `epochs_done` completed epochs. Every random
    /// stream is keyed on the epoch, so a resumed run matches an
    /// uninterrupted one.
    pub fn resume(model: Model, cfg: TrainConfig, graph: &'a KnowledgeGraph, epochs_done: u64) -> Result<Self> {
        cfg.validate()?;
        let stats = BernoulliStats::compute(graph)?;
        let pool: Vec<EntityId> = entities_of(graph.triplets()).into_iter().collect();
        if pool.len() < 2 {
            return Err(Error::Data("training graph needs at least two entities".into()));
        }
        if let Some(e) = pool.iter().find(|e| !model.has_entity_row(**e)) {
            return Err(Error::Data(format!("training entity {e} has no embedding row")));
        }
        if let Some(t) = graph.triplets().iter().find(|t| t.relation.index() >= model.n_relations()) {
            return Err(Error::Data(format!("training relation {} has no embedding row", t.relation)));
        }
        Ok(Self {
            model,
            cfg,
            graph,
            pool,
            stats,
            epochs_done,
            no_ookb: BTreeSet::new(),
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn epochs_done(&self) -> u64 {
        self.epochs_done
    }

    pub fn bernoulli(&self) -> &BernoulliStats {
        &self.stats
    }

    /// Positives of epoch `k` in minibatch order, each paired with its negative.
    pub fn epoch_pairs(&self, k: u64) -> Result<(Vec<Triplet>, Vec<Triplet>)> {
        let seed = self.cfg.seed;
        let mut order: Vec<Triplet> = self.graph.triplets().to_vec();
        order.shuffle(&mut rng::stream(seed, "shuffle", k, 0));
        let mut r = rng::stream(seed, "corrupt", k, 0);
        let filter = self.cfg.filter_negatives.then_some(self.graph);
        let neg = order
            .iter()
            .map(|t| corrupt(t, &self.stats, &self.pool, &mut r, filter))
            .collect::<Result<Vec<_>>>()?;
        Ok((order, neg))
    }

    /// Runs one epoch.
    pub fn epoch(&mut self) -> Result<EpochMetrics> {
        let start = Instant::now();
        let k = self.epochs_done;
        let (pos, neg) = self.epoch_pairs(k)?;
        let hood = Neighborhoods::known(self.graph, &self.no_ookb);
        let sampling = Sampling {
            seed: self.cfg.seed,
            epoch: k,
        };
        let (mut loss_sum, mut pos_sum, mut neg_sum) = (0.0, 0.0, 0.0);
        for (b, (p, n)) in pos.chunks(self.cfg.minibatch).zip(neg.chunks(self.cfg.minibatch)).enumerate() {
            let context = |e: Error| match e {
                Error::Numerical(m) => Error::Numerical(format!("epoch {} minibatch {b}: {m}", k + 1)),
                other => other,
            };
            let tape_result = {
                let mut tape = Tape::new(self.model.store());
                let fwd = forward_pairs(
                    &mut tape,
                    &self.model,
                    &hood,
                    p,
                    n,
                    self.cfg.objective,
                    self.cfg.tau,
                    Phase::Train,
                    sampling,
                )
                .map_err(context)?;
                let loss = tape.value(fwd.loss).item();
                let grads = tape.backward(fwd.loss).map_err(context)?;
                let ps: f64 = tape.value(fwd.pos).data().iter().sum();
                let ns: f64 = tape.value(fwd.neg).data().iter().sum();
                (loss, ps, ns, grads, tape.recorded_batches().to_vec())
            };
            let (loss, ps, ns, grads, batches) = tape_result;
            self.cfg.adam.step(self.model.store_mut(), &grads, k)?;
            let momentum = self.model.config().bn_momentum;
            apply_running_updates(self.model.store_mut(), &batches, momentum);
            if self.cfg.unit_ball {
                self.model.project_entities_to_unit_ball();
            }
            loss_sum += loss;
            pos_sum += ps;
            neg_sum += ns;
        }
        self.epochs_done += 1;
        let n = pos.len() as f64;
        Ok(EpochMetrics {
            epoch: self.epochs_done,
            loss: loss_sum / n,
            mean_pos_score: pos_sum / n,
            mean_neg_score: neg_sum / n,
            step_size: self.cfg.adam.step_size(k),
            wall_time: start.elapsed().as_secs_f64(),
        })
    }

    /// Trains until `cfg.epochs` epochs are complete, calling `on_epoch`
    /// after each one.
    pub fn run<F>(&mut self, mut on_epoch: F) -> Result<()>
    where
        F: FnMut(&EpochMetrics, &Trainer<'a>) -> Result<()>,
    {
        while self.epochs_done < self.cfg.epochs {
            let m = self.epoch()?;
            on_epoch(&m, self)?;
        }
        Ok(())
    }

    /// Whether a checkpoint is due after the latest epoch.
    pub fn checkpoint_due(&self) -> bool {
        self.epochs_done.is_multiple_of(self.cfg.checkpoint_every) || self.epochs_done == self.cfg.epochs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::Triplet;

    fn t(h: u32, r: u32, tl: u32) -> Triplet {
        Triplet::new(EntityId(h), RelationId(r), EntityId(tl))
    }

    #[test]
    fn bernoulli_counts() {
        let s = BernoulliStats::compute(&KnowledgeGraph::build([t(0, 0, 1)])).unwrap();
        assert_eq!(s.get(RelationId(0)), Some((1.0, 1.0)));
        let s = BernoulliStats::compute(&KnowledgeGraph::build([t(0, 0, 1), t(0, 0, 2)])).unwrap();
        assert_eq!(s.get(RelationId(0)), Some((2.0, 1.0)));
        let s = BernoulliStats::compute(&KnowledgeGraph::build([t(0, 0, 1), t(2, 0, 1)])).unwrap();
        assert_eq!(s.get(RelationId(0)), Some((1.0, 2.0)));
        assert!(BernoulliStats::compute(&KnowledgeGraph::build([])).is_err());
    }

    #[test]
    fn forced_corruption() {
        let s = BernoulliStats::from_values([(RelationId(0), 1.0, 0.0)]);
        let mut r = rng::stream(0, "t", 0, 0);
        let c = corrupt(&t(0, 0, 1), &s, &[EntityId(0), EntityId(1)], &mut r, None).unwrap();
        assert_eq!(c, t(1, 0, 1));
        assert!(corrupt(&t(0, 0, 1), &s, &[EntityId(0)], &mut r, None).is_err());
    }

    #[test]
    fn corruption_changes_exactly_one_endpoint() {
        let s = BernoulliStats::from_values([(RelationId(0), 1.0, 1.0)]);
        let pool: Vec<EntityId> = (0..5).map(EntityId).collect();
        let mut r = rng::stream(3, "t", 0, 0);
        for _ in 0..1000 {
            let orig = t(1, 0, 2);
            let c = corrupt(&orig, &s, &pool, &mut r, None).unwrap();
            assert_ne!(c, orig);
            assert!((c.head == orig.head) != (c.tail == orig.tail));
            assert_eq!(c.relation, orig.relation);
        }
    }

    #[test]
    fn balanced_head_replacement_frequency() {
        let s = BernoulliStats::from_values([(RelationId(0), 1.0, 1.0)]);
        let pool: Vec<EntityId> = (0..10).map(EntityId).collect();
        let mut r = rng::stream(5, "t", 0, 0);
        let n = 100_000;
        let heads = (0..n)
            .filter(|_| corrupt(&t(1, 0, 2), &s, &pool, &mut r, None).unwrap().head != EntityId(1))
            .count();
        assert!((heads as f64 / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn filtering_avoids_known_triplets() {
        let g = KnowledgeGraph::build([t(0, 0, 1), t(0, 0, 2)]);
        let s = BernoulliStats::from_values([(RelationId(0), 0.0, 1.0)]);
        let pool = [EntityId(0), EntityId(1), EntityId(2), EntityId(3)];
        let mut r = rng::stream(1, "t", 0, 0);
        for _ in 0..200 {
            let c = corrupt(&t(0, 0, 1), &s, &pool, &mut r, Some(&g)).unwrap();
            assert!(!g.contains(&c));
        }
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = TrainConfig::default();
        assert_eq!((c.epochs, c.minibatch, c.tau), (300, 5000, 300.0));
        assert!(c.validate().is_ok());
        assert!(TrainConfig { minibatch: 0, ..c.clone() }.validate().is_err());
        assert!(TrainConfig { tau: -1.0, ..c }.validate().is_err());
    }
}
