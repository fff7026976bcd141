//! Translation scores `‖v_h + v_r − v_t‖` and the two margin objectives.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::kg::{EntityId, Triplet};
use crate::model::propagate::{propagate, Neighborhoods, Phase, Sampling};
use crate::model::{Model, Objective};
use crate::numerics::ops::{l_norm, Norm};
use crate::numerics::{NodeId, Tape};

/// Implausibility score of one triplet's vectors.
pub fn score(h: &[f64], r: &[f64], t: &[f64], norm: Norm) -> f64 {
    let diff: Vec<f64> = h.iter().zip(r).zip(t).map(|((h, r), t)| h + r - t).collect();
    l_norm(&diff, norm)
}

/// `Σ f(pos) + [τ − f(neg)]₊`.
pub fn loss_absolute(pos: &[f64], neg: &[f64], tau: f64) -> f64 {
    debug_assert_eq!(pos.len(), neg.len());
    pos.iter().zip(neg).map(|(p, n)| p + (tau - n).max(0.0)).sum()
}

/// `Σ [τ + f(pos) − f(neg)]₊`.
pub fn loss_pairwise(pos: &[f64], neg: &[f64], tau: f64) -> f64 {
    debug_assert_eq!(pos.len(), neg.len());
    pos.iter().zip(neg).map(|(p, n)| (tau + p - n).max(0.0)).sum()
}

/// Nodes of one recorded minibatch.
#[derive(Clone, Copy, Debug)]
pub struct BatchForward {
    pub loss: NodeId,
    /// `n × 1` positive scores.
    pub pos: NodeId,
    /// `n × 1` negative scores.
    pub neg: NodeId,
}

/// Records scores of `triplets` on propagated vectors; returns an `n × 1` node.
pub fn tape_scores(
    tape: &mut Tape<'_>,
    model: &Model,
    hood: &Neighborhoods<'_>,
    triplets: &[Triplet],
    phase: Phase,
    sampling: Sampling,
) -> Result<NodeId> {
    let entities: Vec<EntityId> = triplets
        .iter()
        .flat_map(|t| [t.head, t.tail])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let prop = propagate(tape, model, hood, &entities, phase, sampling)?;
    let rows = |f: fn(&Triplet) -> EntityId| -> Vec<u32> {
        triplets.iter().map(|t| prop.index[&f(t)] as u32).collect()
    };
    let heads = tape.select_rows(prop.node, rows(|t| t.head));
    let tails = tape.select_rows(prop.node, rows(|t| t.tail));
    for t in triplets {
        if t.relation.index() >= model.n_relations() {
            return Err(Error::Inference(format!("unknown relation id {}", t.relation)));
        }
    }
    let rels = tape.gather(model.relation_param(), triplets.iter().map(|t| t.relation.0).collect())?;
    let hr = tape.add(heads, rels)?;
    let diff = tape.sub(hr, tails)?;
    Ok(tape.row_norm(diff, model.config().norm))
}

/// Records the objective over paired positives and negatives.
#[allow(clippy::too_many_arguments)]
pub fn forward_pairs(
    tape: &mut Tape<'_>,
    model: &Model,
    hood: &Neighborhoods<'_>,
    pos: &[Triplet],
    neg: &[Triplet],
    objective: Objective,
    tau: f64,
    phase: Phase,
    sampling: Sampling,
) -> Result<BatchForward> {
    if pos.len() != neg.len() {
        return Err(Error::Shape(format!("{} positives paired with {} negatives", pos.len(), neg.len())));
    }
    let all: Vec<Triplet> = pos.iter().chain(neg).copied().collect();
    let scores = tape_scores(tape, model, hood, &all, phase, sampling)?;
    let n = pos.len() as u32;
    let p = tape.select_rows(scores, (0..n).collect());
    let q = tape.select_rows(scores, (n..2 * n).collect());
    let loss = match objective {
        Objective::Absolute => {
            let neg_scaled = tape.scale(q, -1.0);
            let gap = tape.add_scalar(neg_scaled, tau);
            let hinge = tape.relu(gap);
            let s1 = tape.sum(p);
            let s2 = tape.sum(hinge);
            tape.add(s1, s2)?
        }
        Objective::Pairwise => {
            let d = tape.sub(p, q)?;
            let gap = tape.add_scalar(d, tau);
            let hinge = tape.relu(gap);
            tape.sum(hinge)
        }
    };
    Ok(BatchForward { loss, pos: p, neg: q })
}
