use std::collections::BTreeSet;

use proptest::prelude::*;

use ookb_core::dataset::{self, OokbPosition, SourceFiles};
use ookb_core::eval::{self, best_threshold, classify, tune_thresholds};
use ookb_core::kg::{self, EntityId, KnowledgeGraph, LabeledTriplet, RelationId, Symbols, Triplet};
use ookb_core::model::{
    embed, loss_absolute, loss_pairwise, score, Mode, Model, Neighborhoods, PropagationConfig, Transition,
};
use ookb_core::numerics::batchnorm::forward_train;
use ookb_core::numerics::ops::pool;
use ookb_core::numerics::{Adam, Gradients, Norm, ParamStore, Pooling, Tensor};
use ookb_core::trainer::{TrainConfig, Trainer};

fn triplet() -> impl Strategy<Value = Triplet> {
    (0u32..8, 0u32..3, 0u32..8).prop_map(|(h, r, t)| Triplet::new(EntityId(h), RelationId(r), EntityId(t)))
}

fn labeled() -> impl Strategy<Value = LabeledTriplet> {
    (triplet(), any::<bool>()).prop_map(|(triplet, label)| LabeledTriplet { triplet, label })
}

fn vector_set(dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-10.0f64..10.0, dim), 1..12)
}

fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
    v.iter().map(Vec::as_slice).collect()
}

fn src_files(train: Vec<Triplet>, valid: Vec<LabeledTriplet>, test: Vec<LabeledTriplet>) -> SourceFiles {
    SourceFiles { train, valid, test }
}

proptest! {
    #[test]
    fn neighborhood_indices_are_consistent(ts in prop::collection::vec(triplet(), 0..40)) {
        let g = KnowledgeGraph::build(ts);
        let (mut heads, mut tails) = (0, 0);
        for e in 0..g.entity_bound() as u32 {
            let e = EntityId(e);
            for t in g.head_neighborhood(e) {
                prop_assert_eq!(t.tail, e);
                heads += 1;
            }
            for t in g.tail_neighborhood(e) {
                prop_assert_eq!(t.head, e);
                tails += 1;
            }
        }
        prop_assert_eq!(heads, g.len());
        prop_assert_eq!(tails, g.len());
    }

    #[test]
    fn triplet_files_round_trip(rows in prop::collection::vec(("[a-z]{1,4}", "[A-Z_]{1,3}", "[a-z0-9.]{1,4}", any::<bool>()), 1..20)) {
        let text: String = rows
            .iter()
            .map(|(h, r, t, l)| format!("{h}\t{r}\t{t}\t{}\n", if *l { "1" } else { "-1" }))
            .collect();
        let mut symbols = Symbols::new();
        let parsed = kg::parse_triplets(&text, true, &mut symbols, "mem").unwrap();
        prop_assert_eq!(kg::format_triplets(&parsed, true, &symbols), text);
    }

    #[test]
    fn split_partition_and_invariants(
        train in prop::collection::vec(triplet(), 1..60),
        valid in prop::collection::vec(labeled(), 0..20),
        test in prop::collection::vec(labeled(), 1..20),
        pos in 0usize..3,
    ) {
        let position = [OokbPosition::Head, OokbPosition::Tail, OokbPosition::Both][pos];
        let n = test.len().div_ceil(2);
        let src = src_files(train.clone(), valid, test);
        let split = dataset::generate(&src, n, position).unwrap();
        let s = &split.stats;
        let part = dataset::split_training(&train, &split.ookb_entities);
        prop_assert_eq!(part.kept.len() + part.aux.len() + part.discarded.len(), train.len());
        prop_assert_eq!(s.training_triplets, KnowledgeGraph::build(part.kept.clone()).len());
        prop_assert_eq!(s.auxiliary_triplets, part.aux.len());
        prop_assert_eq!(s.discarded_triplets, part.discarded.len());
        prop_assert!(split.violations().is_empty(), "{:?}", split.violations());

        let again = dataset::generate(&src, n, position).unwrap();
        prop_assert_eq!(again.stats, split.stats);
        prop_assert_eq!(again.train.triplets(), split.train.triplets());
        prop_assert_eq!(again.aux, split.aux);
    }

    #[test]
    fn candidates_grow_with_n(test in prop::collection::vec(labeled(), 3..30), pos in 0usize..3) {
        let position = [OokbPosition::Head, OokbPosition::Tail, OokbPosition::Both][pos];
        let a = dataset::choose_candidates(&test, test.len() / 3, position).unwrap();
        let b = dataset::choose_candidates(&test, 2 * test.len() / 3, position).unwrap();
        let c = dataset::choose_candidates(&test, test.len(), position).unwrap();
        prop_assert!(a.is_subset(&b) && b.is_subset(&c));
    }

    #[test]
    fn pooling_is_permutation_invariant(v in vector_set(3), seed in any::<u64>()) {
        let mut shuffled = v.clone();
        let mut rng = <rand::rngs::StdRng as rand::SeedableRng>::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
        for p in Pooling::ALL {
            let a = pool(&refs(&v), p).unwrap();
            let b = pool(&refs(&shuffled), p).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{p}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn max_dominates_avg_and_singletons_are_fixed(v in vector_set(4)) {
        let max = pool(&refs(&v), Pooling::Max).unwrap();
        let avg = pool(&refs(&v), Pooling::Avg).unwrap();
        for (m, a) in max.iter().zip(&avg) {
            prop_assert!(m + 1e-12 >= *a);
        }
        for p in Pooling::ALL {
            prop_assert_eq!(pool(&[v[0].as_slice()], p).unwrap(), v[0].clone());
        }
    }

    #[test]
    fn batchnorm_standardizes(rows in 2usize..20, data in prop::collection::vec(-5.0f64..5.0, 60)) {
        let x = Tensor::from_vec(rows, 3, data[..rows * 3].to_vec()).unwrap();
        let (y, _, stats) = forward_train(&x, &[1.0; 3], &[0.0; 3], 1e-5).unwrap();
        for j in 0..3 {
            let col: Vec<f64> = (0..rows).map(|i| y.get(i, j)).collect();
            let mean = col.iter().sum::<f64>() / rows as f64;
            let var = col.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / rows as f64;
            prop_assert!(mean.abs() < 1e-9);
            let expected = stats.var[j] / (stats.var[j] + 1e-5);
            prop_assert!((var - expected).abs() < 1e-9, "{var} vs {expected}");
            prop_assert!(y.data().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn adam_with_zero_gradients_is_a_no_op(data in prop::collection::vec(-3.0f64..3.0, 6), k in 0u64..50) {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(2, 3, data.clone()).unwrap(), true).unwrap();
        let mut grads = Gradients::new(1);
        grads.set(id, Tensor::zeros(2, 3));
        let adam = Adam::default();
        for step in 0..3 {
            adam.step(&mut store, &grads, k + step).unwrap();
        }
        prop_assert_eq!(store.value(id).data(), data.as_slice());
    }

    #[test]
    fn scores_are_nonnegative_and_vanish_on_exact_translation(
        h in prop::collection::vec(-3.0f64..3.0, 5),
        r in prop::collection::vec(-3.0f64..3.0, 5),
        t in prop::collection::vec(-3.0f64..3.0, 5),
    ) {
        let exact: Vec<f64> = h.iter().zip(&r).map(|(a, b)| a + b).collect();
        for norm in [Norm::L1, Norm::L2] {
            prop_assert!(score(&h, &r, &t, norm) >= 0.0);
            prop_assert_eq!(score(&h, &r, &exact, norm), 0.0);
        }
    }

    #[test]
    fn absolute_loss_bounds(pos in prop::collection::vec(0.0f64..50.0, 1..10), extra in prop::collection::vec(0.0f64..50.0, 10), tau in 0.0f64..20.0) {
        let neg: Vec<f64> = extra[..pos.len()].iter().map(|e| e + tau).collect();
        let sum: f64 = pos.iter().sum();
        prop_assert_eq!(loss_absolute(&pos, &neg, tau), sum);
        let low: Vec<f64> = extra[..pos.len()].to_vec();
        prop_assert!(loss_absolute(&pos, &low, tau) >= 0.0);
        prop_assert!(loss_pairwise(&pos, &low, tau) >= 0.0);
    }

    #[test]
    fn classify_is_monotone_in_threshold(s in -10.0f64..10.0, a in -10.0f64..10.0, b in 0.0f64..10.0) {
        if classify(s, a) {
            prop_assert!(classify(s, a + b));
        }
    }

    #[test]
    fn tuned_thresholds_beat_every_global_candidate(
        rows in prop::collection::vec((0u32..3, -5.0f64..5.0, any::<bool>()), 1..40),
    ) {
        let scored: Vec<(RelationId, f64, bool)> = rows.iter().map(|(r, s, l)| (RelationId(*r), *s, *l)).collect();
        let table = tune_thresholds(&scored).unwrap();
        let correct = |th: &dyn Fn(RelationId) -> f64| {
            scored.iter().filter(|(r, s, l)| classify(*s, th(*r)) == *l).count()
        };
        let tuned = correct(&|r| table.get(r));
        let mut sorted: Vec<f64> = scored.iter().map(|x| x.1).collect();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        let mut candidates = vec![f64::NEG_INFINITY, f64::INFINITY];
        candidates.extend(sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        for c in candidates {
            prop_assert!(tuned >= correct(&|_| c));
        }
        let flat: Vec<(f64, bool)> = scored.iter().map(|x| (x.1, x.2)).collect();
        prop_assert!(tuned >= best_threshold(&flat).1);
    }

    #[test]
    fn uncapped_propagation_ignores_the_seed(ts in prop::collection::vec(triplet(), 1..30), s1 in any::<u64>(), s2 in any::<u64>()) {
        let g = KnowledgeGraph::build(ts);
        let cfg = PropagationConfig { dim: 3, neighbor_cap: 64, ..PropagationConfig::default() };
        let model = Model::new(cfg, 8, 3, 1).unwrap();
        let empty = BTreeSet::new();
        let hood = Neighborhoods::known(&g, &empty);
        let entities: Vec<EntityId> = kg::entities_of(g.triplets()).into_iter().collect();
        let a = embed(&model, &hood, &entities, s1).unwrap();
        let b = embed(&model, &hood, &entities, s2).unwrap();
        for e in &entities {
            prop_assert_eq!(a.get(*e), b.get(*e));
        }
    }
}

fn chain_graph() -> KnowledgeGraph {
    let t = |h, r, tl| Triplet::new(EntityId(h), RelationId(r), EntityId(tl));
    KnowledgeGraph::build([t(0, 0, 1), t(1, 0, 2), t(2, 1, 3), t(3, 1, 0), t(0, 1, 2), t(1, 1, 3), t(2, 0, 0)])
}

#[test]
fn epochs_use_every_positive_once_with_one_negative_each() {
    let g = chain_graph();
    let cfg = PropagationConfig { dim: 4, ..PropagationConfig::default() };
    let model = Model::new(cfg, 4, 2, 0).unwrap();
    let tc = TrainConfig { minibatch: 3, ..TrainConfig::default() };
    let trainer = Trainer::new(model, tc, &g).unwrap();
    for k in 0..5 {
        let (pos, neg) = trainer.epoch_pairs(k).unwrap();
        assert_eq!(pos.len(), neg.len());
        let mut a = pos.clone();
        let mut b = g.triplets().to_vec();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert_eq!(trainer.epoch_pairs(k).unwrap(), (pos, neg));
    }
}

#[test]
fn training_is_bit_reproducible() {
    let g = chain_graph();
    let run = || {
        let cfg = PropagationConfig { dim: 4, ..PropagationConfig::default() };
        let model = Model::new(cfg, 4, 2, 5).unwrap();
        let tc = TrainConfig { minibatch: 3, epochs: 3, tau: 5.0, seed: 5, ..TrainConfig::default() };
        let mut trainer = Trainer::new(model, tc, &g).unwrap();
        let losses: Vec<u64> = (0..3).map(|_| trainer.epoch().unwrap().loss.to_bits()).collect();
        let e = trainer.model().entity_param();
        (losses, trainer.model().store().value(e).clone())
    };
    assert_eq!(run(), run());
}

#[test]
fn step_size_strictly_decreases_across_epochs() {
    let adam = Adam::default();
    for k in 0..1000 {
        assert!(adam.step_size(k + 1) < adam.step_size(k));
    }
    assert_eq!(adam.step_size(0), 0.01);
}

#[test]
fn ookb_vector_needs_no_table_row() {
    let t = |h, r, tl| Triplet::new(EntityId(h), RelationId(r), EntityId(tl));
    let g = chain_graph();
    let aux = KnowledgeGraph::build([t(0, 0, 9), t(9, 1, 2)]);
    let ookb: BTreeSet<EntityId> = [EntityId(9)].into();
    let cfg = PropagationConfig {
        dim: 4,
        mode: Mode::Stacked,
        transition: Transition::RelationReluBn,
        ..PropagationConfig::default()
    };
    // Only rows 0..4: entity 9 has no row at all.
    let model = Model::new(cfg, 4, 2, 2).unwrap();
    assert!(!model.has_entity_row(EntityId(9)));
    let hood = Neighborhoods { graph: &g, aux: Some(&aux), ookb: &ookb };
    let v = eval::ookb_vector(&model, &hood, EntityId(9), 0).unwrap();
    assert_eq!(v.len(), 4);
    assert!(v.iter().all(|x| x.is_finite()));
}
