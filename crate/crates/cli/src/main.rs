//! `ookb`: dataset generation, training, evaluation, prediction and gradient
//! self-checks.

mod config;

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ookb_core::bundle::Bundle;
use ookb_core::dataset::{self, OokbPosition, SourceFiles, SplitPaths};
use ookb_core::eval::{self, BaselineVariant, EvalRecord, Method, ThresholdTable};
use ookb_core::kg::{self, EntityId, KnowledgeGraph, LabeledTriplet, Symbols, Triplet};
use ookb_core::model::{Mode, Model, Neighborhoods, Objective};
use ookb_core::numerics::gradcheck::Options;
use ookb_core::numerics::Pooling;
use ookb_core::selfcheck::{self, Fixture};
use ookb_core::trainer::Trainer;
use ookb_core::{exec, Error, Result};

use crate::config::{MethodKind, RunConfig};

#[derive(Parser)]
#[command(name = "ookb", version, about = "Graph-propagated knowledge base completion")]
struct Cli {
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Key-value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override one key, `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Shorthand for `--set out_dir=DIR`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut rc = RunConfig::default();
        if let Some(path) = &self.config {
            rc.apply_file(path)?;
        }
        rc.apply_overrides(&self.overrides)?;
        if let Some(out) = &self.out {
            rc.out_dir = Some(out.clone());
        }
        rc.validate()?;
        Ok(rc)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build OOKB splits from a benchmark's train/valid/test files.
    GenOokb {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        valid: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Number of test triplets to draw OOKB candidates from.
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<usize>,
        /// head, tail or both.
        #[arg(long, value_delimiter = ',', required = true)]
        position: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model.
    Train(ConfigArgs),
    /// Tune thresholds on validation data and report test accuracy.
    Eval(ConfigArgs),
    /// Score triplets with a trained model.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Tab-separated triplets, optionally labeled.
        #[arg(long)]
        triplets: PathBuf,
        /// Auxiliary triplets introducing entities unknown to the model.
        #[arg(long)]
        aux: Option<PathBuf>,
        /// Threshold table written by `eval`.
        #[arg(long)]
        thresholds: Option<PathBuf>,
        /// Compose unknown entities with the translation baseline instead of
        /// propagation, pooling with this function.
        #[arg(long)]
        baseline: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare analytic gradients with central differences.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, hide = true)]
        inject_wrong_sign: bool,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_owned(),
        source,
    }
}

fn require_file(path: &Path) -> Result<()> {
    fs::metadata(path).map(|_| ()).map_err(|e| io_err(path, e))
}

fn required<'a, T>(value: &'a Option<T>, key: &str) -> Result<&'a T> {
    value.as_ref().ok_or_else(|| Error::Config(format!("{key} is required")))
}

fn configure_workers(workers: Option<usize>) -> Result<()> {
    let Some(n) = workers else { return Ok(()) };
    if n == 0 {
        return Err(Error::Argument("--workers must be at least 1".into()));
    }
    if n == 1 {
        exec::set_parallel(false);
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Argument(format!("cannot start {n} workers: {e}")))?;
    Ok(())
}

fn gen_ookb(
    train: &Path,
    valid: &Path,
    test: &Path,
    ns: &[usize],
    positions: &[String],
    out: &Path,
) -> Result<()> {
    if ns.contains(&0) {
        return Err(Error::Argument("n must be positive".into()));
    }
    let positions = positions
        .iter()
        .map(|p| p.parse::<OokbPosition>())
        .collect::<Result<Vec<_>>>()?;
    for p in [train, valid, test] {
        require_file(p)?;
    }
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let echo = format!(
        "train_file = {}\nvalid_file = {}\ntest_file = {}\nn = {}\nposition = {}\n",
        train.display(),
        valid.display(),
        test.display(),
        ns.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
        positions.iter().map(|p| p.name()).collect::<Vec<_>>().join(","),
    );
    let echo_path = out.join("effective_config.txt");
    fs::write(&echo_path, echo).map_err(|e| io_err(&echo_path, e))?;

    let mut symbols = Symbols::new();
    let src = SourceFiles::load(train, valid, test, &mut symbols)?;
    for &position in &positions {
        for &n in ns {
            let split = dataset::generate(&src, n, position)?;
            dataset::write_split(&split, out, &symbols)?;
            println!("split={}", split.name);
            print!("{}", split.stats.to_text());
        }
    }
    Ok(())
}

fn load_plain(path: &Path, symbols: &mut Symbols) -> Result<Vec<Triplet>> {
    Ok(kg::load_triplet_file(path, false, symbols)?
        .into_iter()
        .map(|l| l.triplet)
        .collect())
}

/// Keeps validation triplets whose entities and relations the model knows.
fn known_only(model: &Model, triplets: Vec<LabeledTriplet>) -> Vec<LabeledTriplet> {
    triplets
        .into_iter()
        .filter(|l| {
            let t = l.triplet;
            model.has_entity_row(t.head) && model.has_entity_row(t.tail) && t.relation.index() < model.n_relations()
        })
        .collect()
}

fn train(rc: &RunConfig) -> Result<()> {
    let out = required(&rc.out_dir, "out_dir")?.clone();
    let resume = match &rc.resume {
        Some(dir) => {
            let b = Bundle::load(dir)?;
            if b.model.config() != &rc.propagation {
                return Err(Error::Config(format!(
                    "propagation settings differ from the checkpoint in {}",
                    dir.display()
                )));
            }
            Some(b)
        }
        None => {
            require_file(required(&rc.train_file, "train_file")?)?;
            None
        }
    };
    if rc.early_stopping_patience > 0 {
        require_file(required(&rc.valid_file, "valid_file (needed for early stopping)")?)?;
    }
    rc.write_effective(&out)?;
    println!("epochs={} minibatch={} tau={}", rc.train.epochs, rc.train.minibatch, rc.train.tau);

    let (model, symbols, graph, epochs_done) = match resume {
        Some(b) => (b.model, b.symbols, b.graph, b.epochs_done),
        None => {
            let mut symbols = Symbols::new();
            let triplets = load_plain(rc.train_file.as_ref().expect("checked"), &mut symbols)?;
            let graph = KnowledgeGraph::build(triplets);
            let model = Model::new(
                rc.propagation.clone(),
                symbols.entities.len(),
                symbols.relations.len(),
                rc.train.seed,
            )?;
            (model, symbols, graph, 0)
        }
    };

    let validation = match (&rc.valid_file, rc.early_stopping_patience) {
        (Some(path), p) if p > 0 => {
            let mut scratch = symbols.clone();
            known_only(&model, kg::load_triplet_file(path, true, &mut scratch)?)
        }
        _ => Vec::new(),
    };
    if rc.early_stopping_patience > 0 && validation.is_empty() {
        return Err(Error::Data("no validation triplet uses only known entities and relations".into()));
    }

    let metrics_path = out.join("metrics.jsonl");
    let mut metrics = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(epochs_done > 0)
        .truncate(epochs_done == 0)
        .open(&metrics_path)
        .map_err(|e| io_err(&metrics_path, e))?;

    let mut trainer = Trainer::resume(model, rc.train.clone(), &graph, epochs_done)?;
    let (mut best, mut stale) = (f64::NEG_INFINITY, 0u64);
    let empty = BTreeSet::new();
    while trainer.epochs_done() < rc.train.epochs {
        let m = trainer.epoch()?;
        let line = serde_json::to_string(&m).expect("metrics serialize");
        writeln!(metrics, "{line}").map_err(|e| io_err(&metrics_path, e))?;
        println!(
            "epoch {} loss={:.6} pos={:.6} neg={:.6}",
            m.epoch, m.loss, m.mean_pos_score, m.mean_neg_score
        );
        if !trainer.checkpoint_due() {
            continue;
        }
        let dir = out.join("checkpoints").join(format!("epoch-{:04}", m.epoch));
        Bundle::write(&dir, trainer.model(), &symbols, &graph, Some(trainer.config()), m.epoch)?;
        if rc.early_stopping_patience > 0 {
            let hood = Neighborhoods::known(&graph, &empty);
            let (record, _) = eval::evaluate(
                trainer.model(),
                &hood,
                &validation,
                &validation,
                Method::Proposed,
                "validation",
                rc.train.seed,
            )?;
            println!("epoch {} validation_accuracy={:.4}", m.epoch, record.accuracy);
            if record.accuracy > best {
                best = record.accuracy;
                stale = 0;
                Bundle::write(&out.join("best"), trainer.model(), &symbols, &graph, Some(trainer.config()), m.epoch)?;
            } else {
                stale += 1;
                if stale >= rc.early_stopping_patience {
                    println!("early stop after epoch {}", m.epoch);
                    break;
                }
            }
        }
    }
    let done = trainer.epochs_done();
    Bundle::write(&out.join("model"), trainer.model(), &symbols, &graph, Some(trainer.config()), done)?;
    println!("saved {}", out.join("model").display());
    Ok(())
}

fn method_of(rc: &RunConfig) -> Method {
    match rc.method {
        MethodKind::Proposed => Method::Proposed,
        MethodKind::Baseline => Method::Baseline {
            pooling: rc.baseline_pooling,
            variant: rc.baseline_variant,
        },
    }
}

/// Fails with a named entity or relation if a triplet cannot be scored.
fn check_resolvable(
    model: &Model,
    symbols: &Symbols,
    triplets: impl IntoIterator<Item = Triplet>,
    ookb: &BTreeSet<EntityId>,
    aux: &KnowledgeGraph,
) -> Result<()> {
    for t in triplets {
        if t.relation.index() >= model.n_relations() {
            return Err(Error::Inference(format!(
                "relation {:?} is unknown to the model",
                symbols.relation_name(t.relation)
            )));
        }
        for e in [t.head, t.tail] {
            if ookb.contains(&e) {
                if aux.neighbors(e).next().is_none() {
                    return Err(Error::Inference(format!(
                        "entity {:?} is not in the knowledge base and has no auxiliary triplet",
                        symbols.entity_name(e)
                    )));
                }
            } else if !model.has_entity_row(e) {
                return Err(Error::Inference(format!(
                    "entity {:?} is not in the knowledge base",
                    symbols.entity_name(e)
                )));
            }
        }
    }
    Ok(())
}

fn eval_one(rc: &RunConfig, dataset_name: &str, out: &Path) -> Result<EvalRecord> {
    let checkpoint = required(&rc.checkpoint, "checkpoint")?.replace("{dataset}", dataset_name);
    let mut bundle = Bundle::load(Path::new(&checkpoint))?;
    let method = method_of(rc);
    let (record, table) = match &rc.split {
        Some(prefix) => {
            let paths = SplitPaths::from_prefix(Path::new(&prefix.replace("{dataset}", dataset_name)));
            let split = dataset::LoadedSplit::load(&paths, &mut bundle.symbols)?;
            let aux = KnowledgeGraph::build(split.aux.iter().copied());
            let all = split.validation.iter().chain(&split.test).map(|l| l.triplet);
            check_resolvable(&bundle.model, &bundle.symbols, all, &split.ookb_entities, &aux)?;
            let hood = Neighborhoods {
                graph: &bundle.graph,
                aux: Some(&aux),
                ookb: &split.ookb_entities,
            };
            eval::evaluate(
                &bundle.model,
                &hood,
                &split.validation,
                &split.test,
                method,
                dataset_name,
                rc.train.seed,
            )?
        }
        None => {
            let valid = kg::load_triplet_file(required(&rc.valid_file, "valid_file")?, true, &mut bundle.symbols)?;
            let test = kg::load_triplet_file(required(&rc.test_file, "test_file")?, true, &mut bundle.symbols)?;
            let empty = BTreeSet::new();
            let no_aux = KnowledgeGraph::build([]);
            let all = valid.iter().chain(&test).map(|l| l.triplet);
            check_resolvable(&bundle.model, &bundle.symbols, all, &empty, &no_aux)?;
            let hood = Neighborhoods::known(&bundle.graph, &empty);
            eval::evaluate(&bundle.model, &hood, &valid, &test, method, dataset_name, rc.train.seed)?
        }
    };
    let path = out.join(format!("{dataset_name}.thresholds.txt"));
    fs::write(&path, table.to_text(&bundle.symbols)).map_err(|e| io_err(&path, e))?;
    Ok(record)
}

fn eval_cmd(rc: &RunConfig) -> Result<()> {
    let out = required(&rc.out_dir, "out_dir")?.clone();
    let checkpoint = required(&rc.checkpoint, "checkpoint")?;
    let datasets: Vec<String> = if rc.datasets.is_empty() {
        if rc.split.is_some() {
            return Err(Error::Config("split needs datasets".into()));
        }
        if checkpoint.contains("{dataset}") {
            return Err(Error::Config("checkpoint uses {dataset} but no datasets are given".into()));
        }
        vec!["standard".to_owned()]
    } else {
        rc.datasets.clone()
    };
    for d in &datasets {
        let dir = PathBuf::from(checkpoint.replace("{dataset}", d));
        require_file(&dir.join("model.json")).map_err(|_| {
            Error::Checkpoint(format!("{} is not a model checkpoint (no model.json)", dir.display()))
        })?;
    }
    rc.write_effective(&out)?;
    let report_path = out.join("report.jsonl");
    let mut report = fs::File::create(&report_path).map_err(|e| io_err(&report_path, e))?;
    let mut records = Vec::new();
    for d in &datasets {
        let record = eval_one(rc, d, &out)?;
        let line = serde_json::to_string(&record).expect("record serialize");
        writeln!(report, "{line}").map_err(|e| io_err(&report_path, e))?;
        records.push(record);
    }
    let table = eval::summary_table(&records);
    let summary_path = out.join("summary.txt");
    fs::write(&summary_path, &table).map_err(|e| io_err(&summary_path, e))?;
    print!("{table}");
    Ok(())
}

fn load_queries(path: &Path, symbols: &mut Symbols) -> Result<Vec<LabeledTriplet>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let labeled = text
        .lines()
        .next()
        .is_some_and(|l| l.trim_end_matches('\r').split('\t').count() == 4);
    kg::parse_triplets(&text, labeled, symbols, &path.display().to_string())
}

fn predict(
    checkpoint: &Path,
    triplets: &Path,
    aux: Option<&Path>,
    thresholds: Option<&Path>,
    baseline: Option<&str>,
    seed: u64,
) -> Result<()> {
    let bundle = Bundle::load(checkpoint)?;
    let mut symbols = bundle.symbols.clone();
    let queries = load_queries(triplets, &mut symbols)?;
    let aux_triplets = match aux {
        Some(p) => load_plain(p, &mut symbols)?,
        None => Vec::new(),
    };
    let model = &bundle.model;
    let ookb: BTreeSet<EntityId> = queries
        .iter()
        .flat_map(|l| [l.triplet.head, l.triplet.tail])
        .chain(aux_triplets.iter().flat_map(|t| [t.head, t.tail]))
        .filter(|e| !model.has_entity_row(*e))
        .collect();
    let aux_graph = KnowledgeGraph::build(aux_triplets);
    check_resolvable(model, &symbols, queries.iter().map(|l| l.triplet), &ookb, &aux_graph)?;
    let table = match thresholds {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            Some(ThresholdTable::from_text(&text, &symbols, &p.display().to_string())?)
        }
        None => None,
    };
    let method = match baseline {
        Some(name) => Method::Baseline {
            pooling: name.parse::<Pooling>()?,
            variant: BaselineVariant::ImpliedPosition,
        },
        None => Method::Proposed,
    };
    let hood = Neighborhoods {
        graph: &bundle.graph,
        aux: Some(&aux_graph),
        ookb: &ookb,
    };
    let plain: Vec<Triplet> = queries.iter().map(|l| l.triplet).collect();
    let vectors = eval::method_vectors(model, &hood, &plain, method, seed)?;
    let scores = eval::score_all(model, &vectors, &plain)?;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "head\trelation\ttail\tscore\tthreshold\tprediction");
    for (t, s) in plain.iter().zip(scores) {
        let (th, label) = match &table {
            Some(table) => {
                let th = table.get(t.relation);
                (format!("{th}"), if eval::classify(s, th) { "1" } else { "-1" })
            }
            None => ("-".to_owned(), "-"),
        };
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{s}\t{th}\t{label}",
            symbols.entity_name(t.head),
            symbols.relation_name(t.relation),
            symbols.entity_name(t.tail)
        );
    }
    Ok(())
}

fn gradcheck(tolerance: f64, wrong_sign: bool) -> Result<()> {
    if !(tolerance > 0.0) {
        return Err(Error::Argument(format!("tolerance must be positive, got {tolerance}")));
    }
    let opts = Options::default();
    let mut failed = Vec::new();
    let mut line = |label: String, report: ookb_core::numerics::gradcheck::Report| {
        let ok = report.passes(tolerance);
        println!(
            "{label}: max_rel_error={:.3e} {}",
            report.max_rel_error(),
            if ok { "ok" } else { "FAIL" }
        );
        for p in report.failures(tolerance) {
            println!(
                "  {} index {}: analytic {:e} numeric {:e} rel_error {:.3e}",
                p.name, p.worst.index, p.worst.analytic, p.worst.numeric, p.worst.rel_error
            );
        }
        if !ok {
            failed.push(label);
        }
    };
    for pooling in Pooling::ALL {
        line(format!("numerics {pooling}"), selfcheck::numerics_gradcheck(pooling, 5, opts)?);
    }
    for mode in [Mode::Stacked, Mode::Unrolled] {
        for pooling in Pooling::ALL {
            for objective in [Objective::Absolute, Objective::Pairwise] {
                let f = Fixture::new(pooling, mode, 2, objective, 3)?;
                let report = selfcheck::model_gradcheck(&f, opts, wrong_sign)?;
                line(format!("model {mode} {pooling} {objective}"), report);
            }
        }
    }
    if failed.is_empty() {
        println!("gradcheck passed at tolerance {tolerance:e}");
        Ok(())
    } else {
        Err(Error::Numerical(format!(
            "{} gradient check(s) exceed tolerance {tolerance:e}",
            failed.len()
        )))
    }
}

fn run(cli: Cli) -> Result<()> {
    configure_workers(cli.workers)?;
    match cli.command {
        Command::GenOokb {
            train,
            valid,
            test,
            n,
            position,
            out,
        } => gen_ookb(&train, &valid, &test, &n, &position, &out),
        Command::Train(args) => train(&args.resolve()?),
        Command::Eval(args) => eval_cmd(&args.resolve()?),
        Command::Predict {
            checkpoint,
            triplets,
            aux,
            thresholds,
            baseline,
            seed,
        } => predict(
            &checkpoint,
            &triplets,
            aux.as_deref(),
            thresholds.as_deref(),
            baseline.as_deref(),
            seed,
        ),
        Command::Gradcheck {
            tolerance,
            inject_wrong_sign,
        } => gradcheck(tolerance, inject_wrong_sign),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
