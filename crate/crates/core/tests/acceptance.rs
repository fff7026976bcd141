//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Criteria 1, 5, 6 and 7 run on the WordNet11 benchmark, read from
//! `$WN11_DIR` (default `data/wn11` under the workspace root) as
//! `train.txt`, `dev.txt` and `test.txt`. Without the files they fail.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ookb_core::dataset::{self, OokbPosition, SourceFiles};
use ookb_core::eval::{self, BaselineVariant, Method};
use ookb_core::kg::{EntityId, KnowledgeGraph, LabeledTriplet, RelationId, Symbols, Triplet};
use ookb_core::model::{
    embed, loss_absolute, loss_pairwise, score, Mode, Model, Neighborhoods, Objective, PropagationConfig,
    Transition,
};
use ookb_core::numerics::gradcheck::Options;
use ookb_core::numerics::ops::pool;
use ookb_core::numerics::{Norm, Pooling};
use ookb_core::selfcheck::{model_gradcheck, Fixture};
use ookb_core::trainer::{corrupt, BernoulliStats, TrainConfig, Trainer};

const GRADCHECK_TOLERANCE: f64 = 1e-4;
const LOSS_EXAMPLE_TOLERANCE: f64 = 1e-12;
const TOY_LOSS_TARGET: f64 = 1e-3;
const TOY_EPOCHS: u64 = 500;
const ORACLE_GRAPHS: usize = 100;
const POOLING_SETS: usize = 1000;
const POOLING_SUM_RTOL: f64 = 1e-12;
const BERNOULLI_DRAWS: usize = 100_000;
const BERNOULLI_TOLERANCE: f64 = 0.01;
const SPLIT_COUNT_TOLERANCE: f64 = 0.02;
const OOKB_GAP_POINTS: f64 = 10.0;
const OOKB_PROPOSED_MIN: f64 = 0.78;
const TRANSE_SUBSTITUTE_MIN: f64 = 0.72;
const DEPTH_GAP_POINTS: f64 = 2.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn wn11_dir() -> PathBuf {
    std::env::var_os("WN11_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/wn11"))
}

fn load_wn11(symbols: &mut Symbols) -> Result<SourceFiles, String> {
    let dir = wn11_dir();
    let (train, dev, test) = (dir.join("train.txt"), dir.join("dev.txt"), dir.join("test.txt"));
    for p in [&train, &dev, &test] {
        if !p.exists() {
            return Err(format!("WordNet11 data not found: {} is missing", p.display()));
        }
    }
    SourceFiles::load(&train, &dev, &test, symbols).map_err(|e| e.to_string())
}

// Training, validation, OOKB entities, test, auxiliary entities, auxiliary
// triplets for head/tail/both at n = 1000, 3000, 5000.
const SPLIT_COUNTS: [(OokbPosition, usize, [usize; 6]); 9] = [
    (OokbPosition::Head, 1000, [108_197, 4_613, 348, 994, 2_474, 4_352]),
    (OokbPosition::Head, 3000, [99_963, 4_184, 1_034, 2_969, 6_791, 12_376]),
    (OokbPosition::Head, 5000, [92_309, 3_845, 1_744, 4_919, 10_784, 19_625]),
    (OokbPosition::Tail, 1000, [96_968, 3_999, 942, 986, 8_191, 15_277]),
    (OokbPosition::Tail, 3000, [78_763, 3_122, 2_627, 2_880, 16_193, 31_770]),
    (OokbPosition::Tail, 5000, [67_774, 2_601, 4_011, 4_603, 20_345, 40_584]),
    (OokbPosition::Both, 1000, [93_364, 3_799, 1_238, 960, 9_899, 18_638]),
    (OokbPosition::Both, 3000, [71_097, 2_759, 3_319, 2_708, 19_218, 38_285]),
    (OokbPosition::Both, 5000, [57_601, 2_166, 4_963, 4_196, 23_792, 48_425]),
];

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut symbols = Symbols::new();
    let src = match load_wn11(&mut symbols) {
        Ok(s) => s,
        Err(e) => return outcome(false, e),
    };
    let (mut exact, mut within, mut worst) = (0, 0, 0.0f64);
    let mut misses = Vec::new();
    for (position, n, expected) in SPLIT_COUNTS {
        let split = match dataset::generate(&src, n, position) {
            Ok(s) => s,
            Err(e) => return outcome(false, format!("{position}-{n}: {e}")),
        };
        let s = &split.stats;
        let got = [
            s.training_triplets,
            s.validation_triplets,
            s.ookb_entities,
            s.test_triplets,
            s.auxiliary_entities,
            s.auxiliary_triplets,
        ];
        for (g, e) in got.iter().zip(expected) {
            if *g == e {
                exact += 1;
            } else {
                let dev = (*g as f64 - e as f64).abs() / e as f64;
                worst = worst.max(dev);
                if dev <= SPLIT_COUNT_TOLERANCE {
                    within += 1;
                }
                misses.push(format!("{position}-{n}: {g} vs {e}"));
            }
        }
    }
    let detail = format!(
        "{exact}/54 counts exact, {within} more within {:.0}%, worst deviation {:.2}% ({:.1}s){}",
        100.0 * SPLIT_COUNT_TOLERANCE,
        100.0 * worst,
        start.elapsed().as_secs_f64(),
        if misses.is_empty() { String::new() } else { format!("; {}", misses.join(", ")) }
    );
    // Near misses are reported but only an exact reproduction passes.
    outcome(exact == 54, detail)
}

fn criterion_2() -> Outcome {
    let mut worst = 0.0f64;
    let mut params = 0;
    for pooling in Pooling::ALL {
        let f = match Fixture::new(pooling, Mode::Stacked, 2, Objective::Absolute, 3) {
            Ok(f) => f,
            Err(e) => return outcome(false, e.to_string()),
        };
        match model_gradcheck(&f, Options::default(), false) {
            Ok(r) => {
                worst = worst.max(r.max_rel_error());
                params += r.params.len();
            }
            Err(e) => return outcome(false, e.to_string()),
        }
    }
    outcome(
        worst <= GRADCHECK_TOLERANCE,
        format!("{params} parameter tensors, max relative error {worst:.2e} (tolerance {GRADCHECK_TOLERANCE:e})"),
    )
}

/// Direct evaluation of `v_e = Σ_{(h,r,e)} v_h + Σ_{(e,r,t)} v_t` over the
/// triplet list, head side first, each in list order.
fn summation_oracle(triplets: &[Triplet], prev: &dyn Fn(EntityId) -> Vec<f64>, e: EntityId, dim: usize) -> Vec<f64> {
    let mut terms: Vec<Vec<f64>> = Vec::new();
    for t in triplets.iter().filter(|t| t.tail == e) {
        terms.push(prev(t.head));
    }
    for t in triplets.iter().filter(|t| t.head == e) {
        terms.push(prev(t.tail));
    }
    let mut acc = terms[0].clone();
    for term in &terms[1..] {
        for k in 0..dim {
            acc[k] += term[k];
        }
    }
    acc
}

fn random_graph(rng: &mut ChaCha8Rng) -> (Vec<Triplet>, usize, usize) {
    let n_entities = rng.random_range(2..=10);
    let n_relations = rng.random_range(1..=3);
    let n = rng.random_range(1..=20);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for _ in 0..n {
        let t = Triplet::new(
            EntityId(rng.random_range(0..n_entities) as u32),
            RelationId(rng.random_range(0..n_relations) as u32),
            EntityId(rng.random_range(0..n_entities) as u32),
        );
        if seen.insert(t) {
            out.push(t);
        }
    }
    (out, n_entities, n_relations)
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let empty = BTreeSet::new();
    let mut mismatches = 0;
    let mut mode_mismatches = 0;
    let mut compared = 0;
    for g_index in 0..ORACLE_GRAPHS {
        let (triplets, n_entities, n_relations) = random_graph(&mut rng);
        let graph = KnowledgeGraph::build(triplets.iter().copied());
        let entities: Vec<EntityId> = ookb_core::kg::entities_of(&triplets).into_iter().collect();
        let hood = Neighborhoods::known(&graph, &empty);
        for depth in [1, 2] {
            let cfg = PropagationConfig {
                depth,
                mode: Mode::Stacked,
                pooling: Pooling::Sum,
                transition: Transition::Identity,
                dim: 5,
                ..PropagationConfig::default()
            };
            let model = Model::new(cfg, n_entities, n_relations, g_index as u64).expect("model");
            let got = embed(&model, &hood, &entities, 0).expect("embed");
            let base = |e: EntityId| model.entity_vec(e).expect("row").to_vec();
            let level1 = |e: EntityId| summation_oracle(&triplets, &base, e, 5);
            for &e in &entities {
                let want = if depth == 1 {
                    level1(e)
                } else {
                    summation_oracle(&triplets, &level1, e, 5)
                };
                compared += 1;
                let same = got.get(e).expect("embedded").iter().zip(&want).all(|(a, b)| a.to_bits() == b.to_bits());
                if !same {
                    mismatches += 1;
                }
            }
        }

        let stacked_cfg = PropagationConfig {
            depth: 1,
            mode: Mode::Stacked,
            dim: 5,
            ..PropagationConfig::default()
        };
        let stacked = Model::new(stacked_cfg.clone(), n_entities, n_relations, g_index as u64).expect("model");
        let unrolled_cfg = PropagationConfig {
            mode: Mode::Unrolled,
            ..stacked_cfg
        };
        let unrolled = Model::from_store(unrolled_cfg, stacked.store().clone()).expect("shared parameters");
        let a = embed(&stacked, &hood, &entities, 0).expect("embed");
        let b = embed(&unrolled, &hood, &entities, 0).expect("embed");
        if entities.iter().any(|e| a.get(*e) != b.get(*e)) {
            mode_mismatches += 1;
        }
    }
    outcome(
        mismatches == 0 && mode_mismatches == 0,
        format!(
            "{ORACLE_GRAPHS} graphs, {compared} vectors: {mismatches} differ bitwise from the summation oracle; \
             stacked vs unrolled at depth 1 differ on {mode_mismatches} graphs"
        ),
    )
}

fn toy_min_loss() -> Result<(f64, Option<u64>), String> {
    let t = |h, tl| Triplet::new(EntityId(h), RelationId(0), EntityId(tl));
    let graph = KnowledgeGraph::build([t(0, 1), t(2, 3)]);
    let cfg = PropagationConfig {
        norm: Norm::L1,
        ..PropagationConfig::transe(1)
    };
    let model = Model::new(cfg, 4, 1, 1).map_err(|e| e.to_string())?;
    let tc = TrainConfig {
        epochs: TOY_EPOCHS,
        tau: 1.0,
        seed: 1,
        objective: Objective::Absolute,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(model, tc, &graph).map_err(|e| e.to_string())?;
    let (mut best, mut first) = (f64::INFINITY, None);
    for _ in 0..TOY_EPOCHS {
        let m = trainer.epoch().map_err(|e| e.to_string())?;
        // EpochMetrics reports the loss per positive; the objective is the sum.
        let total = m.loss * graph.len() as f64;
        best = best.min(total);
        if total < TOY_LOSS_TARGET && first.is_none() {
            first = Some(m.epoch);
        }
    }
    Ok((best, first))
}

fn criterion_4() -> Outcome {
    let tau = 300.0;
    let cases: [(&str, f64, f64); 6] = [
        ("absolute f+=0 f-=tau", loss_absolute(&[0.0], &[tau], tau), 0.0),
        ("absolute f+=0 f-=tau+5", loss_absolute(&[0.0], &[tau + 5.0], tau), 0.0),
        ("absolute f+=2 f-=tau-3", loss_absolute(&[2.0], &[tau - 3.0], tau), 5.0),
        ("pairwise f+=1 f-=1+tau", loss_pairwise(&[1.0], &[1.0 + tau], tau), 0.0),
        ("pairwise equal tau=1", loss_pairwise(&[4.0, 7.0], &[4.0, 7.0], 1.0), 2.0),
        ("pairwise f+=3 f-=1 tau=2", loss_pairwise(&[3.0], &[1.0], 2.0), 4.0),
    ];
    let mut bad: Vec<String> = cases
        .iter()
        .filter(|(_, got, want)| (got - want).abs() > LOSS_EXAMPLE_TOLERANCE)
        .map(|(name, got, want)| format!("{name}: {got} vs {want}"))
        .collect();
    let scores = [
        (score(&[1.0, 1.0], &[0.5, -1.0], &[1.5, 0.0], Norm::L1), 0.0),
        (score(&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0], Norm::L1), 2.0),
        (score(&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0], Norm::L2), 2f64.sqrt()),
    ];
    for (got, want) in scores {
        if (got - want).abs() > LOSS_EXAMPLE_TOLERANCE {
            bad.push(format!("score {got} vs {want}"));
        }
    }
    match toy_min_loss() {
        Ok((best, first)) => {
            let fit = best < TOY_LOSS_TARGET;
            let detail = format!(
                "{} hand examples ok; toy graph min loss_absolute {best:.3e} (target < {TOY_LOSS_TARGET:e}), first below at epoch {}{}",
                cases.len() + scores.len() - bad.len(),
                first.map_or("never".to_string(), |e| e.to_string()),
                if bad.is_empty() { String::new() } else { format!("; wrong: {}", bad.join(", ")) }
            );
            outcome(bad.is_empty() && fit, detail)
        }
        Err(e) => outcome(false, e),
    }
}

struct Wn11Split {
    graph: KnowledgeGraph,
    aux: KnowledgeGraph,
    ookb: BTreeSet<EntityId>,
    validation: Vec<LabeledTriplet>,
    test: Vec<LabeledTriplet>,
    n_entities: usize,
    n_relations: usize,
}

fn train_model(
    graph: &KnowledgeGraph,
    cfg: PropagationConfig,
    tc: TrainConfig,
    n_entities: usize,
    n_relations: usize,
) -> Result<(Model, Vec<f64>), String> {
    let model = Model::new(cfg, n_entities, n_relations, tc.seed).map_err(|e| e.to_string())?;
    let mut trainer = Trainer::new(model, tc, graph).map_err(|e| e.to_string())?;
    let mut losses = Vec::new();
    trainer
        .run(|m, _| {
            losses.push(m.loss);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok((trainer.into_model(), losses))
}

/// Plain TransE for the pooling baseline and the depth-0 substitute.
fn transe_setup(dim: usize) -> (PropagationConfig, TrainConfig) {
    let cfg = PropagationConfig {
        norm: Norm::L1,
        ..PropagationConfig::transe(dim)
    };
    let tc = TrainConfig {
        objective: Objective::Pairwise,
        tau: 1.0,
        unit_ball: true,
        ..TrainConfig::default()
    };
    (cfg, tc)
}

fn head_1000() -> Result<Wn11Split, String> {
    let mut symbols = Symbols::new();
    let src = load_wn11(&mut symbols)?;
    let split = dataset::generate(&src, 1000, OokbPosition::Head).map_err(|e| e.to_string())?;
    Ok(Wn11Split {
        aux: KnowledgeGraph::build(split.aux.iter().copied()),
        graph: split.train,
        ookb: split.ookb_entities,
        validation: split.validation,
        test: split.test,
        n_entities: symbols.entities.len(),
        n_relations: symbols.relations.len(),
    })
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let s = match head_1000() {
        Ok(s) => s,
        Err(e) => return outcome(false, e),
    };
    let hood = Neighborhoods {
        graph: &s.graph,
        aux: Some(&s.aux),
        ookb: &s.ookb,
    };
    let proposed_cfg = PropagationConfig {
        dim: 100,
        pooling: Pooling::Avg,
        ..PropagationConfig::default()
    };
    let run = || -> Result<(f64, f64), String> {
        let (model, _) = train_model(&s.graph, proposed_cfg, TrainConfig::default(), s.n_entities, s.n_relations)?;
        let (p, _) = eval::evaluate(&model, &hood, &s.validation, &s.test, Method::Proposed, "head-1000", 0)
            .map_err(|e| e.to_string())?;
        let (cfg, tc) = transe_setup(100);
        let (transe, _) = train_model(&s.graph, cfg, tc, s.n_entities, s.n_relations)?;
        let baseline = Method::Baseline {
            pooling: Pooling::Avg,
            variant: BaselineVariant::ImpliedPosition,
        };
        let (b, _) = eval::evaluate(&transe, &hood, &s.validation, &s.test, baseline, "head-1000", 0)
            .map_err(|e| e.to_string())?;
        Ok((p.accuracy, b.accuracy))
    };
    match run() {
        Ok((p, b)) => {
            let gap = 100.0 * (p - b);
            outcome(
                gap >= OOKB_GAP_POINTS && p >= OOKB_PROPOSED_MIN,
                format!(
                    "head-1000 proposed-avg {:.1}% vs baseline-avg {:.1}% (gap {gap:.1} points, need >= {OOKB_GAP_POINTS}; proposed needs >= {:.0}%) in {:.0}s",
                    100.0 * p,
                    100.0 * b,
                    100.0 * OOKB_PROPOSED_MIN,
                    start.elapsed().as_secs_f64()
                ),
            )
        }
        Err(e) => outcome(false, e),
    }
}

/// Training graph, validation, test, entity count, relation count.
type Standard = (KnowledgeGraph, Vec<LabeledTriplet>, Vec<LabeledTriplet>, usize, usize);

fn standard_wn11() -> Result<Standard, String> {
    let mut symbols = Symbols::new();
    let src = load_wn11(&mut symbols)?;
    let graph = KnowledgeGraph::build(src.train.iter().copied());
    Ok((graph, src.valid, src.test, symbols.entities.len(), symbols.relations.len()))
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let (graph, valid, test, n_e, n_r) = match standard_wn11() {
        Ok(x) => x,
        Err(e) => return outcome(false, e),
    };
    // Depth-0 substitute for the full d=200 propagation run.
    let (cfg, tc) = transe_setup(100);
    let run = || -> Result<f64, String> {
        let (model, _) = train_model(&graph, cfg, tc, n_e, n_r)?;
        let empty = BTreeSet::new();
        let hood = Neighborhoods::known(&graph, &empty);
        let (r, _) = eval::evaluate(&model, &hood, &valid, &test, Method::Proposed, "wn11", 0).map_err(|e| e.to_string())?;
        Ok(r.accuracy)
    };
    match run() {
        Ok(acc) => outcome(
            acc >= TRANSE_SUBSTITUTE_MIN,
            format!(
                "depth-0 substitute at d=100: {:.1}% (need >= {:.0}%) in {:.0}s",
                100.0 * acc,
                100.0 * TRANSE_SUBSTITUTE_MIN,
                start.elapsed().as_secs_f64()
            ),
        ),
        Err(e) => outcome(false, e),
    }
}

fn criterion_7() -> Outcome {
    const SUBSAMPLE_EVERY: usize = 10;
    const DIM: usize = 50;
    const EPOCHS: u64 = 50;
    let start = Instant::now();
    let (full, valid, test, n_e, n_r) = match standard_wn11() {
        Ok(x) => x,
        Err(e) => return outcome(false, e),
    };
    let graph = KnowledgeGraph::build(full.triplets().iter().copied().step_by(SUBSAMPLE_EVERY));
    let known: BTreeSet<EntityId> = ookb_core::kg::entities_of(graph.triplets());
    let keep = |v: &[LabeledTriplet]| -> Vec<LabeledTriplet> {
        v.iter()
            .filter(|l| known.contains(&l.triplet.head) && known.contains(&l.triplet.tail))
            .copied()
            .collect()
    };
    let (valid, test) = (keep(&valid), keep(&test));
    let empty = BTreeSet::new();
    let hood = Neighborhoods::known(&graph, &empty);
    let mut lines = Vec::new();
    let mut diverged = false;
    let mut stacked_acc = [0.0; 2];
    for mode in [Mode::Stacked, Mode::Unrolled] {
        for depth in 1..=4 {
            let cfg = PropagationConfig {
                depth,
                mode,
                dim: DIM,
                ..PropagationConfig::default()
            };
            let tc = TrainConfig {
                epochs: EPOCHS,
                ..TrainConfig::default()
            };
            let result = train_model(&graph, cfg, tc, n_e, n_r).and_then(|(model, losses)| {
                let ok = losses.iter().all(|l| l.is_finite()) && losses.last() <= losses.first();
                let (r, _) = eval::evaluate(&model, &hood, &valid, &test, Method::Proposed, "wn11-10pct", 0)
                    .map_err(|e| e.to_string())?;
                Ok((ok, r.accuracy))
            });
            match result {
                Ok((ok, acc)) => {
                    diverged |= !ok;
                    if mode == Mode::Stacked && depth <= 2 {
                        stacked_acc[depth - 1] = acc;
                    }
                    lines.push(format!("{mode}-{depth} {:.1}%{}", 100.0 * acc, if ok { "" } else { " diverged" }));
                }
                Err(e) => {
                    diverged = true;
                    lines.push(format!("{mode}-{depth} error: {e}"));
                }
            }
        }
    }
    let gap = 100.0 * (stacked_acc[0] - stacked_acc[1]).abs();
    outcome(
        !diverged && gap <= DEPTH_GAP_POINTS,
        format!(
            "{}; depth-1 vs depth-2 gap {gap:.1} points (need <= {DEPTH_GAP_POINTS}) in {:.0}s",
            lines.join(", "),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut perm_fail, mut dom_fail, mut single_fail) = (0, 0, 0);
    for _ in 0..POOLING_SETS {
        let dim = rng.random_range(1..=8);
        let n = rng.random_range(1..=16);
        let set: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-100.0..100.0)).collect())
            .collect();
        let mut shuffled = set.clone();
        shuffled.shuffle(&mut rng);
        let a: Vec<&[f64]> = set.iter().map(Vec::as_slice).collect();
        let b: Vec<&[f64]> = shuffled.iter().map(Vec::as_slice).collect();
        for p in Pooling::ALL {
            let (x, y) = (pool(&a, p).expect("pool"), pool(&b, p).expect("pool"));
            let ok = match p {
                Pooling::Max => x == y,
                // Reordered floating-point sums agree up to rounding.
                _ => x
                    .iter()
                    .zip(&y)
                    .all(|(u, v)| (u - v).abs() <= POOLING_SUM_RTOL * u.abs().max(v.abs()).max(1.0)),
            };
            if !ok {
                perm_fail += 1;
            }
            let single = pool(&a[..1], p).expect("pool");
            if single != set[0] {
                single_fail += 1;
            }
        }
        let (max, avg) = (pool(&a, Pooling::Max).expect("pool"), pool(&a, Pooling::Avg).expect("pool"));
        if max.iter().zip(&avg).any(|(m, v)| m < v) {
            dom_fail += 1;
        }
    }
    outcome(
        perm_fail + dom_fail + single_fail == 0,
        format!(
            "{POOLING_SETS} sets: permutation failures {perm_fail}, max<avg {dom_fail}, singleton failures {single_fail}"
        ),
    )
}

fn criterion_9() -> Outcome {
    let r = RelationId(0);
    let t = |h, tl| Triplet::new(EntityId(h), r, EntityId(tl));
    let graph = KnowledgeGraph::build([t(0, 2), t(0, 3), t(1, 4), t(1, 5)]);
    let stats = match BernoulliStats::compute(&graph) {
        Ok(s) => s,
        Err(e) => return outcome(false, e.to_string()),
    };
    let (tph, hpt) = stats.get(r).expect("relation present");
    let pool: Vec<EntityId> = (0..6).map(EntityId).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut heads = 0usize;
    for i in 0..BERNOULLI_DRAWS {
        let pos = graph.triplets()[i % graph.len()];
        let neg = corrupt(&pos, &stats, &pool, &mut rng, None).expect("corrupt");
        if neg.head != pos.head {
            heads += 1;
        }
    }
    let freq = heads as f64 / BERNOULLI_DRAWS as f64;
    let expected = tph / (tph + hpt);
    outcome(
        (tph, hpt) == (2.0, 1.0) && (freq - expected).abs() <= BERNOULLI_TOLERANCE,
        format!(
            "tph={tph} hpt={hpt}: head replaced in {freq:.4} of {BERNOULLI_DRAWS} draws, expected {expected:.4} +/- {BERNOULLI_TOLERANCE}"
        ),
    )
}

fn main() -> ExitCode {
    type Criterion = (u32, &'static str, fn() -> Outcome);
    let criteria: [Criterion; 9] = [
        (1, "dataset reproduction", criterion_1),
        (2, "gradient correctness", criterion_2),
        (3, "oracle equivalence", criterion_3),
        (4, "objective sanity", criterion_4),
        (5, "OOKB separation", criterion_5),
        (6, "standard KBC", criterion_6),
        (7, "depth study", criterion_7),
        (8, "pooling properties", criterion_8),
        (9, "Bernoulli sampling", criterion_9),
    ];
    let mut failed = 0;
    for (n, name, f) in criteria {
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!("criterion {n} ({name}): {} - {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
