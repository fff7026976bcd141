//! Triplet classification: threshold tuning, accuracy, OOKB vectors and the
//! translation-pooling baseline.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exec;
use crate::kg::{Direction, EntityId, LabeledTriplet, RelationId, Symbols, Triplet};
use crate::model::{embed, score, Embeddings, Model, Neighborhoods};
use crate::numerics::ops::pool;
use crate::numerics::{Pooling, Tensor};

/// Per-relation score cutoffs with a global fallback.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdTable {
    pub per_relation: BTreeMap<RelationId, f64>,
    pub global: f64,
}

impl ThresholdTable {
    pub fn get(&self, r: RelationId) -> f64 {
        self.per_relation.get(&r).copied().unwrap_or(self.global)
    }

    /// Hex SHA-256 over the exact bit patterns of every threshold.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("*\t{:016x}\n", self.global.to_bits()));
        for (r, t) in &self.per_relation {
            h.update(format!("{}\t{:016x}\n", r.0, t.to_bits()));
        }
        hex::encode(h.finalize())
    }

    /// `relation<TAB>threshold` lines; the global fallback is keyed `*`.
    pub fn to_text(&self, symbols: &Symbols) -> String {
        let mut out = format!("*\t{:?}\n", self.global);
        for (r, t) in &self.per_relation {
            let _ = writeln!(out, "{}\t{:?}", symbols.relation_name(*r), t);
        }
        out
    }

    pub fn from_text(text: &str, symbols: &Symbols, source_name: &str) -> Result<Self> {
        let mut global = None;
        let mut per_relation = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let parse_err = |message: String| Error::Parse {
                source_name: source_name.to_string(),
                line: i + 1,
                message,
            };
            let (name, value) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("expected relation<TAB>threshold".into()))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("bad threshold {value:?}")))?;
            if name == "*" {
                global = Some(value);
            } else {
                let r = symbols
                    .relation(name)
                    .ok_or_else(|| parse_err(format!("unknown relation {name:?}")))?;
                per_relation.insert(r, value);
            }
        }
        let global = global.ok_or_else(|| Error::Parse {
            source_name: source_name.to_string(),
            line: 0,
            message: "missing global threshold line".into(),
        })?;
        Ok(Self { per_relation, global })
    }
}

/// Smallest threshold maximizing accuracy of "positive iff score < threshold"
/// over `scored`, among `-∞`, the midpoints of consecutive distinct scores
/// and `+∞`. Returns the threshold and the number of correct predictions.
pub fn best_threshold(scored: &[(f64, bool)]) -> (f64, usize) {
    let mut sorted: Vec<(f64, bool)> = scored.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n_neg = sorted.iter().filter(|s| !s.1).count();
    // threshold -∞: everything predicted negative
    let mut correct = n_neg;
    let mut best = (f64::NEG_INFINITY, correct);
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == v {
            if sorted[i].1 {
                correct += 1;
            } else {
                correct -= 1;
            }
            i += 1;
        }
        let candidate = if i < sorted.len() {
            (v + sorted[i].0) / 2.0
        } else {
            f64::INFINITY
        };
        if correct > best.1 {
            best = (candidate, correct);
        }
    }
    best
}

/// Tunes one threshold per relation seen in `scored`, plus the global one.
pub fn tune_thresholds(scored: &[(RelationId, f64, bool)]) -> Result<ThresholdTable> {
    if scored.is_empty() {
        return Err(Error::Data("cannot tune thresholds on an empty validation set".into()));
    }
    let all: Vec<(f64, bool)> = scored.iter().map(|s| (s.1, s.2)).collect();
    let (global, _) = best_threshold(&all);
    let mut by_rel: BTreeMap<RelationId, Vec<(f64, bool)>> = BTreeMap::new();
    for &(r, s, l) in scored {
        by_rel.entry(r).or_default().push((s, l));
    }
    let per_relation = by_rel.into_iter().map(|(r, v)| (r, best_threshold(&v).0)).collect();
    Ok(ThresholdTable { per_relation, global })
}

pub fn classify(score: f64, threshold: f64) -> bool {
    score < threshold
}

/// Fraction of `(prediction, label)` pairs that agree.
pub fn accuracy(pairs: &[(bool, bool)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Data("accuracy of an empty test set is undefined".into()));
    }
    Ok(pairs.iter().filter(|(p, l)| p == l).count() as f64 / pairs.len() as f64)
}

/// Scores `triplets` from precomputed entity vectors.
pub fn score_all(model: &Model, vectors: &Embeddings, triplets: &[Triplet]) -> Result<Vec<f64>> {
    let norm = model.config().norm;
    exec::map_slice(triplets, |t| {
        let h = vectors
            .get(t.head)
            .ok_or_else(|| Error::Inference(format!("no vector for entity {}", t.head)))?;
        let tl = vectors
            .get(t.tail)
            .ok_or_else(|| Error::Inference(format!("no vector for entity {}", t.tail)))?;
        Ok(score(h, model.relation_vec(t.relation)?, tl, norm))
    })
    .into_iter()
    .collect()
}

fn endpoints<'a>(triplets: impl IntoIterator<Item = &'a Triplet>) -> Vec<EntityId> {
    triplets
        .into_iter()
        .flat_map(|t| [t.head, t.tail])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Vector of an OOKB entity composed from its auxiliary neighborhood by the
/// trained propagation model. Never touches `u`'s own table row.
pub fn ookb_vector(model: &Model, hood: &Neighborhoods<'_>, u: EntityId, seed: u64) -> Result<Vec<f64>> {
    if !hood.ookb.contains(&u) {
        return Err(Error::Argument(format!("entity {u} is not an OOKB entity")));
    }
    let v = embed(model, hood, &[u], seed)?;
    Ok(v.get(u).expect("target embedded").to_vec())
}

/// What the baseline pools for each auxiliary triplet of `u`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineVariant {
    /// `v_h + v_r` for `(h, r, u)`, `v_t − v_r` for `(u, r, t)`.
    ImpliedPosition,
    /// The neighbor's own vector.
    RawNeighbor,
}

/// Pools translation-implied positions of `u` over its auxiliary triplets
/// using a model trained without propagation.
pub fn baseline_ookb_vector(
    model: &Model,
    hood: &Neighborhoods<'_>,
    u: EntityId,
    pooling: Pooling,
    variant: BaselineVariant,
) -> Result<Vec<f64>> {
    if !hood.ookb.contains(&u) {
        return Err(Error::Argument(format!("entity {u} is not an OOKB entity")));
    }
    let neighbors = hood.all(u);
    if neighbors.is_empty() {
        return Err(Error::Inference(format!("OOKB entity {u} has no auxiliary triplet")));
    }
    let mut contributions = Vec::with_capacity(neighbors.len());
    for n in &neighbors {
        let v = model.entity_vec(n.entity)?;
        let r = model.relation_vec(n.relation)?;
        let c: Vec<f64> = match (variant, n.direction) {
            (BaselineVariant::RawNeighbor, _) => v.to_vec(),
            (BaselineVariant::ImpliedPosition, Direction::Head) => v.iter().zip(r).map(|(a, b)| a + b).collect(),
            (BaselineVariant::ImpliedPosition, Direction::Tail) => v.iter().zip(r).map(|(a, b)| a - b).collect(),
        };
        contributions.push(c);
    }
    let refs: Vec<&[f64]> = contributions.iter().map(Vec::as_slice).collect();
    pool(&refs, pooling)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Proposed,
    Baseline { pooling: Pooling, variant: BaselineVariant },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::Baseline { .. } => "baseline",
        }
    }
}

/// One evaluation record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EvalRecord {
    pub dataset_name: String,
    pub method: String,
    pub pooling: Pooling,
    pub accuracy: f64,
    pub n_test: usize,
    pub threshold_table_digest: String,
}

/// Vectors of every endpoint of `triplets` under `method`.
pub fn method_vectors(model: &Model, hood: &Neighborhoods<'_>, triplets: &[Triplet], method: Method, seed: u64) -> Result<Embeddings> {
    let entities = endpoints(triplets);
    match method {
        Method::Proposed => embed(model, hood, &entities, seed),
        Method::Baseline { pooling, variant } => {
            let rows = exec::map_slice(&entities, |&e| {
                if hood.ookb.contains(&e) {
                    baseline_ookb_vector(model, hood, e, pooling, variant)
                } else {
                    model.entity_vec(e).map(<[f64]>::to_vec)
                }
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            let index: HashMap<EntityId, usize> = entities.iter().enumerate().map(|(i, e)| (*e, i)).collect();
            Ok(Embeddings::new(index, Tensor::from_rows(&rows)?))
        }
    }
}

/// Tunes thresholds on `validation` and reports accuracy on `test`.
pub fn evaluate(
    model: &Model,
    hood: &Neighborhoods<'_>,
    validation: &[LabeledTriplet],
    test: &[LabeledTriplet],
    method: Method,
    dataset_name: &str,
    seed: u64,
) -> Result<(EvalRecord, ThresholdTable)> {
    if test.is_empty() {
        return Err(Error::Data(format!("{dataset_name}: test set is empty")));
    }
    if validation.is_empty() {
        return Err(Error::Data(format!("{dataset_name}: validation set is empty")));
    }
    let all: Vec<Triplet> = validation.iter().chain(test).map(|l| l.triplet).collect();
    let vectors = method_vectors(model, hood, &all, method, seed)?;
    let scores = score_all(model, &vectors, &all)?;
    let (vs, ts) = scores.split_at(validation.len());
    let scored: Vec<(RelationId, f64, bool)> = validation
        .iter()
        .zip(vs)
        .map(|(l, &s)| (l.triplet.relation, s, l.label))
        .collect();
    let table = tune_thresholds(&scored)?;
    let pairs: Vec<(bool, bool)> = test
        .iter()
        .zip(ts)
        .map(|(l, &s)| (classify(s, table.get(l.triplet.relation)), l.label))
        .collect();
    let pooling = match method {
        Method::Proposed => model.config().pooling,
        Method::Baseline { pooling, .. } => pooling,
    };
    let record = EvalRecord {
        dataset_name: dataset_name.to_string(),
        method: method.name().to_string(),
        pooling,
        accuracy: accuracy(&pairs)?,
        n_test: test.len(),
        threshold_table_digest: table.digest(),
    };
    Ok((record, table))
}

/// Fixed-width table of evaluation records.
pub fn summary_table(records: &[EvalRecord]) -> String {
    let mut out = format!("{:<16} {:<9} {:<7} {:>8} {:>7}\n", "dataset", "method", "pooling", "accuracy", "n_test");
    for r in records {
        let _ = writeln!(
            out,
            "{:<16} {:<9} {:<7} {:>8.2} {:>7}",
            r.dataset_name,
            r.method,
            r.pooling.name(),
            100.0 * r.accuracy,
            r.n_test
        );
    }
    out
}
