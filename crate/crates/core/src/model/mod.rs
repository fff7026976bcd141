//! The propagation model and the translation-based output model.
//!
//! Parameters live in one [`ParamStore`] under stable names:
//!
//! * `entity` and `relation`: embedding tables, one row per vocabulary id;
//! * `transition.{layer}.{head|tail}.{group}`: `d × d` transition matrices,
//!   where `group` is the relation id for `relation-relu-bn` and 0 for the
//!   relation-independent layers;
//! * `bn.{layer}.{head|tail}.{relation}.{gamma|beta|mean|var}`: batchnorm
//!   parameters and running statistics for `relation-relu-bn`.

pub mod config;
pub mod propagate;
pub mod score;

use rand::Rng;
use rand_distr::{Distribution, Normal};

pub use config::{Mode, Objective, PropagationConfig, Transition};
pub use propagate::{embed, propagate, Embeddings, Neighborhoods, Phase, Propagated, Sampling};
pub use score::{forward_pairs, loss_absolute, loss_pairwise, score, tape_scores, BatchForward};

use crate::error::{Error, Result};
use crate::kg::{Direction, EntityId, RelationId};
use crate::numerics::ops::{self, Pooling};
use crate::numerics::{batchnorm, ParamId, ParamStore, Tensor};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BnIds {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub mean: ParamId,
    pub var: ParamId,
}

#[derive(Clone, Debug)]
struct ParamIds {
    entity: ParamId,
    relation: ParamId,
    transitions: Vec<ParamId>,
    bn: Vec<BnIds>,
}

#[derive(Clone, Debug)]
pub struct Model {
    cfg: PropagationConfig,
    n_entities: usize,
    n_relations: usize,
    store: ParamStore,
    ids: ParamIds,
}

const DIRECTIONS: [Direction; 2] = [Direction::Head, Direction::Tail];

fn transition_name(layer: usize, dir: Direction, group: usize) -> String {
    format!("transition.{layer}.{}.{group}", dir.name())
}

fn bn_name(layer: usize, dir: Direction, rel: usize, part: &str) -> String {
    format!("bn.{layer}.{}.{rel}.{part}", dir.name())
}

/// Transition matrices per (layer, direction).
fn transition_groups(cfg: &PropagationConfig, n_relations: usize) -> usize {
    match cfg.transition {
        Transition::Identity => 0,
        Transition::TanhLayer | Transition::ReluLayer => 1,
        Transition::RelationReluBn => n_relations,
    }
}

fn has_bn(cfg: &PropagationConfig) -> bool {
    cfg.transition == Transition::RelationReluBn
}

impl Model {
    /// A freshly initialized model. Embeddings are uniform in
    /// `±6/√d`, transition matrices are identity plus `N(0, 0.01²)` noise,
    /// batchnorm starts at `γ = 1`, `β = 0` with running statistics `(0, 1)`.
    pub fn new(cfg: PropagationConfig, n_entities: usize, n_relations: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim;
        let bound = 6.0 / (d as f64).sqrt();
        let mut r = rng::stream(seed, "init", 0, 0);
        let table = |rows: usize, r: &mut rand_chacha::ChaCha8Rng| {
            let data = (0..rows * d).map(|_| r.random_range(-bound..bound)).collect();
            Tensor::from_vec(rows, d, data)
        };
        let mut store = ParamStore::new();
        store.add("entity", table(n_entities, &mut r)?, true)?;
        store.add("relation", table(n_relations, &mut r)?, true)?;
        let noise = Normal::new(0.0, 0.01).expect("valid normal");
        let groups = transition_groups(&cfg, n_relations);
        for layer in 0..cfg.param_layers() {
            for dir in DIRECTIONS {
                for g in 0..groups {
                    let mut a = Tensor::identity(d);
                    a.data_mut().iter_mut().for_each(|v| *v += noise.sample(&mut r));
                    store.add(&transition_name(layer, dir, g), a, true)?;
                }
            }
        }
        if has_bn(&cfg) {
            for layer in 0..cfg.param_layers() {
                for dir in DIRECTIONS {
                    for rel in 0..n_relations {
                        store.add(&bn_name(layer, dir, rel, "gamma"), Tensor::filled(1, d, 1.0), true)?;
                        store.add(&bn_name(layer, dir, rel, "beta"), Tensor::zeros(1, d), true)?;
                        store.add(&bn_name(layer, dir, rel, "mean"), Tensor::zeros(1, d), false)?;
                        store.add(&bn_name(layer, dir, rel, "var"), Tensor::filled(1, d, 1.0), false)?;
                    }
                }
            }
        }
        Self::from_store(cfg, store)
    }

    /// Rebuilds a model around an existing parameter store, checking that
    /// every expected parameter is present with the right shape.
    pub fn from_store(cfg: PropagationConfig, store: ParamStore) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim;
        let find = |name: &str, rows: Option<usize>| -> Result<ParamId> {
            let id = store
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("parameter {name:?} missing")))?;
            let (r, c) = store.value(id).shape();
            if c != d || rows.is_some_and(|rows| rows != r) {
                return Err(Error::Checkpoint(format!("parameter {name:?} has shape {r}x{c}, expected width {d}")));
            }
            Ok(id)
        };
        let entity = find("entity", None)?;
        let relation = find("relation", None)?;
        let n_entities = store.value(entity).rows();
        let n_relations = store.value(relation).rows();
        let groups = transition_groups(&cfg, n_relations);
        let mut transitions = Vec::new();
        let mut bn = Vec::new();
        for layer in 0..cfg.param_layers() {
            for dir in DIRECTIONS {
                for g in 0..groups {
                    transitions.push(find(&transition_name(layer, dir, g), Some(d))?);
                }
                if has_bn(&cfg) {
                    for rel in 0..n_relations {
                        bn.push(BnIds {
                            gamma: find(&bn_name(layer, dir, rel, "gamma"), Some(1))?,
                            beta: find(&bn_name(layer, dir, rel, "beta"), Some(1))?,
                            mean: find(&bn_name(layer, dir, rel, "mean"), Some(1))?,
                            var: find(&bn_name(layer, dir, rel, "var"), Some(1))?,
                        });
                    }
                }
            }
        }
        Ok(Self {
            cfg,
            n_entities,
            n_relations,
            store,
            ids: ParamIds {
                entity,
                relation,
                transitions,
                bn,
            },
        })
    }

    pub fn config(&self) -> &PropagationConfig {
        &self.cfg
    }

    pub fn dim(&self) -> usize {
        self.cfg.dim
    }

    pub fn n_entities(&self) -> usize {
        self.n_entities
    }

    pub fn n_relations(&self) -> usize {
        self.n_relations
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn into_store(self) -> ParamStore {
        self.store
    }

    pub fn entity_param(&self) -> ParamId {
        self.ids.entity
    }

    pub fn relation_param(&self) -> ParamId {
        self.ids.relation
    }

    pub fn has_entity_row(&self, e: EntityId) -> bool {
        e.index() < self.n_entities
    }

    /// Depth-0 vector of a known entity.
    pub fn entity_vec(&self, e: EntityId) -> Result<&[f64]> {
        if !self.has_entity_row(e) {
            return Err(Error::Inference(format!("entity {e} has no embedding row")));
        }
        Ok(self.store.value(self.ids.entity).row(e.index()))
    }

    pub fn relation_vec(&self, r: RelationId) -> Result<&[f64]> {
        self.check_relation(r)?;
        Ok(self.store.value(self.ids.relation).row(r.index()))
    }

    fn check_relation(&self, r: RelationId) -> Result<()> {
        if r.index() >= self.n_relations {
            return Err(Error::Inference(format!("unknown relation id {r}")));
        }
        Ok(())
    }

    fn slot(&self, layer: usize, dir: Direction, group: usize, groups: usize) -> usize {
        (layer * 2 + dir.index()) * groups + group
    }

    /// Transition matrix applied to neighbors in position `dir` for relation
    /// `rel` at parameter layer `layer`. `None` for the identity transition.
    pub fn transition_param(&self, layer: usize, dir: Direction, rel: RelationId) -> Option<ParamId> {
        let groups = transition_groups(&self.cfg, self.n_relations);
        if groups == 0 || layer >= self.cfg.param_layers() || rel.index() >= self.n_relations {
            return None;
        }
        let g = if groups == 1 { 0 } else { rel.index() };
        Some(self.ids.transitions[self.slot(layer, dir, g, groups)])
    }

    pub fn bn_params(&self, layer: usize, dir: Direction, rel: RelationId) -> Option<BnIds> {
        if !has_bn(&self.cfg) || layer >= self.cfg.param_layers() || rel.index() >= self.n_relations {
            return None;
        }
        Some(self.ids.bn[self.slot(layer, dir, rel.index(), self.n_relations)])
    }

    /// Applies one transition to a single vector with batchnorm in inference
    /// mode.
    pub fn transition(&self, v: &[f64], rel: RelationId, dir: Direction, layer: usize) -> Result<Vec<f64>> {
        self.check_relation(rel)?;
        if v.len() != self.cfg.dim {
            return Err(Error::Shape(format!("vector of length {} for dim {}", v.len(), self.cfg.dim)));
        }
        if self.cfg.transition != Transition::Identity && layer >= self.cfg.param_layers() {
            return Err(Error::Argument(format!(
                "layer {layer} out of range for {} parameter layers",
                self.cfg.param_layers()
            )));
        }
        let x = Tensor::row_vector(v);
        let y = match self.cfg.transition {
            Transition::Identity => x,
            Transition::TanhLayer | Transition::ReluLayer => {
                let a = self.store.value(self.transition_param(layer, dir, rel).expect("layer checked"));
                let y = ops::affine(a, &x)?;
                if self.cfg.transition == Transition::TanhLayer {
                    ops::tanh_act(&y)
                } else {
                    ops::relu(&y)
                }
            }
            Transition::RelationReluBn => {
                let a = self.store.value(self.transition_param(layer, dir, rel).expect("layer checked"));
                let bn = self.bn_params(layer, dir, rel).expect("layer checked");
                let y = ops::affine(a, &x)?;
                let (y, _) = batchnorm::forward_infer(
                    &y,
                    self.store.value(bn.gamma).data(),
                    self.store.value(bn.beta).data(),
                    self.store.value(bn.mean).data(),
                    self.store.value(bn.var).data(),
                    self.cfg.bn_epsilon,
                )?;
                ops::relu(&y)
            }
        };
        Ok(y.into_vec())
    }

    /// Pooling configured for this model.
    pub fn pooling(&self) -> Pooling {
        self.cfg.pooling
    }

    /// Rescales every entity row with L2 norm above 1 onto the unit sphere.
    pub fn project_entities_to_unit_ball(&mut self) {
        let table = self.store.value_mut(self.ids.entity);
        for i in 0..table.rows() {
            let row = table.row_mut(i);
            let n = ops::l_norm(row, ops::Norm::L2);
            if n > 1.0 {
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(transition: Transition, mode: Mode, depth: usize) -> PropagationConfig {
        PropagationConfig {
            depth,
            mode,
            transition,
            dim: 4,
            ..Default::default()
        }
    }

    #[test]
    fn parameter_layout() {
        let m = Model::new(cfg(Transition::RelationReluBn, Mode::Stacked, 2), 5, 3, 1).unwrap();
        // 2 tables + 2 layers * 2 directions * 3 relations * (1 matrix + 4 bn)
        assert_eq!(m.store().len(), 2 + 2 * 2 * 3 * 5);
        let u = Model::new(cfg(Transition::RelationReluBn, Mode::Unrolled, 2), 5, 3, 1).unwrap();
        assert_eq!(u.store().len(), 2 + 2 * 3 * 5);
        let t = Model::new(cfg(Transition::TanhLayer, Mode::Stacked, 3), 5, 3, 1).unwrap();
        assert_eq!(t.store().len(), 2 + 3 * 2);
        let i = Model::new(PropagationConfig { dim: 4, ..PropagationConfig::transe(4) }, 5, 3, 1).unwrap();
        assert_eq!(i.store().len(), 2);
        assert_ne!(
            m.transition_param(0, Direction::Head, RelationId(1)),
            m.transition_param(0, Direction::Tail, RelationId(1))
        );
        assert_ne!(
            m.transition_param(0, Direction::Head, RelationId(1)),
            m.transition_param(1, Direction::Head, RelationId(1))
        );
    }

    #[test]
    fn initialization_ranges() {
        let m = Model::new(cfg(Transition::RelationReluBn, Mode::Stacked, 1), 50, 3, 9).unwrap();
        let bound = 6.0 / 2.0;
        assert!(m.store().value(m.entity_param()).data().iter().all(|v| v.abs() < bound));
        let a = m.store().value(m.transition_param(0, Direction::Tail, RelationId(2)).unwrap());
        assert!(a.max_abs_diff(&Tensor::identity(4)) < 0.1);
        let bn = m.bn_params(0, Direction::Head, RelationId(0)).unwrap();
        assert_eq!(m.store().value(bn.var).data(), &[1.0; 4]);
        assert!(!m.store().param(bn.mean).trainable);
    }

    #[test]
    fn seeded_initialization_is_reproducible() {
        let a = Model::new(cfg(Transition::RelationReluBn, Mode::Stacked, 1), 6, 2, 3).unwrap();
        let b = Model::new(cfg(Transition::RelationReluBn, Mode::Stacked, 1), 6, 2, 3).unwrap();
        let c = Model::new(cfg(Transition::RelationReluBn, Mode::Stacked, 1), 6, 2, 4).unwrap();
        let e = a.entity_param();
        assert_eq!(a.store().value(e), b.store().value(e));
        assert_ne!(a.store().value(e), c.store().value(e));
    }

    #[test]
    fn identity_transition_returns_input() {
        let m = Model::new(cfg(Transition::Identity, Mode::Stacked, 1), 2, 1, 0).unwrap();
        let v = [0.5, -1.0, 2.0, 0.0];
        assert_eq!(m.transition(&v, RelationId(0), Direction::Head, 0).unwrap(), v.to_vec());
        assert!(m.transition(&v, RelationId(1), Direction::Head, 0).is_err());
    }

    #[test]
    fn relu_bn_transition_with_identity_matrix() {
        let mut m = Model::new(cfg(Transition::RelationReluBn, Mode::Stacked, 1), 2, 1, 0).unwrap();
        let a = m.transition_param(0, Direction::Head, RelationId(0)).unwrap();
        *m.store_mut().value_mut(a) = Tensor::identity(4);
        let v = [0.5, -1.0, 2.0, 0.0];
        let y = m.transition(&v, RelationId(0), Direction::Head, 0).unwrap();
        let s = (1.0 + m.config().bn_epsilon).sqrt();
        for (yi, vi) in y.iter().zip(v) {
            assert!((yi - (vi / s).max(0.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn relu_layer_with_zero_matrix() {
        let mut m = Model::new(cfg(Transition::ReluLayer, Mode::Stacked, 1), 2, 1, 0).unwrap();
        let a = m.transition_param(0, Direction::Tail, RelationId(0)).unwrap();
        *m.store_mut().value_mut(a) = Tensor::zeros(4, 4);
        let y = m.transition(&[1.0, 2.0, 3.0, 4.0], RelationId(0), Direction::Tail, 0).unwrap();
        assert_eq!(y, vec![0.0; 4]);
    }

    #[test]
    fn from_store_rejects_missing_parameters() {
        let m = Model::new(cfg(Transition::TanhLayer, Mode::Stacked, 2), 3, 1, 0).unwrap();
        let c = cfg(Transition::TanhLayer, Mode::Stacked, 3);
        assert!(matches!(Model::from_store(c, m.into_store()), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn unit_ball_projection() {
        let mut m = Model::new(cfg(Transition::Identity, Mode::Stacked, 1), 20, 1, 5).unwrap();
        m.project_entities_to_unit_ball();
        let t = m.store().value(m.entity_param());
        for i in 0..t.rows() {
            assert!(ops::l_norm(t.row(i), ops::Norm::L2) <= 1.0 + 1e-12);
        }
    }
}
