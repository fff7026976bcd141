//! Construction of OOKB-entity datasets from a standard triplet
//! classification benchmark.
//!
//! Two steps: pick candidate OOKB entities from the first `n` lines of the
//! test file and keep those connected to the rest of the training graph, then
//! split the training triplets into kept / auxiliary / discarded and filter
//! the evaluation sets. Nothing here is random.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{self, entities_of, EntityId, KnowledgeGraph, LabeledTriplet, Symbols, Triplet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OokbPosition {
    Head,
    Tail,
    Both,
}

impl OokbPosition {
    pub const ALL: [OokbPosition; 3] = [OokbPosition::Head, OokbPosition::Tail, OokbPosition::Both];

    pub fn name(self) -> &'static str {
        match self {
            OokbPosition::Head => "head",
            OokbPosition::Tail => "tail",
            OokbPosition::Both => "both",
        }
    }
}

impl fmt::Display for OokbPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OokbPosition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "head" => Ok(OokbPosition::Head),
            "tail" => Ok(OokbPosition::Tail),
            "both" => Ok(OokbPosition::Both),
            other => Err(Error::Argument(format!(
                "unknown OOKB position {other:?} (expected head, tail or both)"
            ))),
        }
    }
}

/// Counts reported for a generated split.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStats {
    pub training_triplets: usize,
    pub validation_triplets: usize,
    pub test_triplets: usize,
    pub auxiliary_triplets: usize,
    pub ookb_entities: usize,
    /// Distinct non-OOKB entities occurring in auxiliary triplets.
    pub auxiliary_entities: usize,
    /// Distinct entities of any kind occurring in auxiliary triplets.
    pub auxiliary_entities_all: usize,
    pub discarded_triplets: usize,
    pub candidate_entities: usize,
    /// Auxiliary triplets whose known endpoint has no triplet left in the
    /// training split.
    pub aux_known_endpoint_missing: usize,
}

impl SplitStats {
    /// Flat `key=value` report, one per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }

    pub fn entries(&self) -> [(&'static str, usize); 10] {
        [
            ("training_triplets", self.training_triplets),
            ("validation_triplets", self.validation_triplets),
            ("ookb_entities", self.ookb_entities),
            ("test_triplets", self.test_triplets),
            ("auxiliary_entities", self.auxiliary_entities),
            ("auxiliary_triplets", self.auxiliary_triplets),
            ("auxiliary_entities_all", self.auxiliary_entities_all),
            ("discarded_triplets", self.discarded_triplets),
            ("candidate_entities", self.candidate_entities),
            ("aux_known_endpoint_missing", self.aux_known_endpoint_missing),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct OokbSplit {
    pub name: String,
    pub train: KnowledgeGraph,
    pub aux: Vec<Triplet>,
    pub ookb_entities: BTreeSet<EntityId>,
    pub validation: Vec<LabeledTriplet>,
    pub test: Vec<LabeledTriplet>,
    pub stats: SplitStats,
}

/// A broken structural rule of an [`OokbSplit`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SplitViolation {
    TrainTouchesOokb(Triplet),
    AuxOokbCount(Triplet, usize),
    TestWithoutOokb(Triplet),
    ValidationWithOokb(Triplet),
}

impl OokbSplit {
    /// Checks the rules every generated split satisfies by construction.
    pub fn violations(&self) -> Vec<SplitViolation> {
        let is_ookb = |e: EntityId| self.ookb_entities.contains(&e);
        let count = |t: &Triplet| usize::from(is_ookb(t.head)) + usize::from(is_ookb(t.tail));
        let mut out = Vec::new();
        for t in self.train.triplets() {
            if count(t) > 0 {
                out.push(SplitViolation::TrainTouchesOokb(*t));
            }
        }
        for t in &self.aux {
            if count(t) != 1 {
                out.push(SplitViolation::AuxOokbCount(*t, count(t)));
            }
        }
        for lt in &self.test {
            if count(&lt.triplet) == 0 {
                out.push(SplitViolation::TestWithoutOokb(lt.triplet));
            }
        }
        for lt in &self.validation {
            if count(&lt.triplet) > 0 {
                out.push(SplitViolation::ValidationWithOokb(lt.triplet));
            }
        }
        out
    }
}

/// Candidate OOKB entities from the first `n` test lines (labels ignored).
pub fn choose_candidates(
    test_file: &[LabeledTriplet],
    n: usize,
    position: OokbPosition,
) -> Result<BTreeSet<EntityId>> {
    if n > test_file.len() {
        return Err(Error::Argument(format!(
            "n={n} exceeds the {} available test triplets",
            test_file.len()
        )));
    }
    let mut out = BTreeSet::new();
    for lt in &test_file[..n] {
        let t = lt.triplet;
        match position {
            OokbPosition::Head => {
                out.insert(t.head);
            }
            OokbPosition::Tail => {
                out.insert(t.tail);
            }
            OokbPosition::Both => {
                out.insert(t.head);
                out.insert(t.tail);
            }
        }
    }
    Ok(out)
}

/// Keeps the candidates that share a training triplet with a non-candidate.
pub fn finalize_ookb(candidates: &BTreeSet<EntityId>, train: &[Triplet]) -> BTreeSet<EntityId> {
    let mut out = BTreeSet::new();
    for t in train {
        let (h_cand, t_cand) = (candidates.contains(&t.head), candidates.contains(&t.tail));
        if h_cand && !t_cand {
            out.insert(t.head);
        }
        if t_cand && !h_cand {
            out.insert(t.tail);
        }
    }
    out
}

/// Partitions training triplets by their number of OOKB endpoints.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TrainingPartition {
    pub kept: Vec<Triplet>,
    pub aux: Vec<Triplet>,
    pub discarded: Vec<Triplet>,
}

pub fn split_training(train: &[Triplet], ookb: &BTreeSet<EntityId>) -> TrainingPartition {
    let mut p = TrainingPartition::default();
    for t in train {
        let n = usize::from(ookb.contains(&t.head)) + usize::from(ookb.contains(&t.tail));
        match n {
            0 => p.kept.push(*t),
            1 => p.aux.push(*t),
            _ => p.discarded.push(*t),
        }
    }
    p
}

/// Test = first `n` test lines touching an OOKB entity; validation = lines
/// touching none.
pub fn filter_eval_sets(
    test_file: &[LabeledTriplet],
    valid_file: &[LabeledTriplet],
    n: usize,
    ookb: &BTreeSet<EntityId>,
) -> Result<(Vec<LabeledTriplet>, Vec<LabeledTriplet>)> {
    if n > test_file.len() {
        return Err(Error::Argument(format!(
            "n={n} exceeds the {} available test triplets",
            test_file.len()
        )));
    }
    let touches = |t: &Triplet| ookb.contains(&t.head) || ookb.contains(&t.tail);
    let test = test_file[..n].iter().filter(|lt| touches(&lt.triplet)).copied().collect();
    let validation = valid_file.iter().filter(|lt| !touches(&lt.triplet)).copied().collect();
    Ok((test, validation))
}

/// The three source files of a benchmark, already interned.
#[derive(Clone, Debug)]
pub struct SourceFiles {
    pub train: Vec<Triplet>,
    pub valid: Vec<LabeledTriplet>,
    pub test: Vec<LabeledTriplet>,
}

impl SourceFiles {
    /// Loads `train` (unlabeled), `valid` and `test` (labeled).
    pub fn load(train: &Path, valid: &Path, test: &Path, symbols: &mut Symbols) -> Result<Self> {
        let train = kg::load_triplet_file(train, false, symbols)?
            .into_iter()
            .map(|lt| lt.triplet)
            .collect();
        let valid = kg::load_triplet_file(valid, true, symbols)?;
        let test = kg::load_triplet_file(test, true, symbols)?;
        Ok(Self { train, valid, test })
    }
}

pub fn split_name(position: OokbPosition, n: usize) -> String {
    format!("{position}-{n}")
}

/// Runs both construction steps and fills in the statistics.
pub fn generate(src: &SourceFiles, n: usize, position: OokbPosition) -> Result<OokbSplit> {
    if n == 0 {
        return Err(Error::Argument("n must be positive".into()));
    }
    let candidates = choose_candidates(&src.test, n, position)?;
    let ookb = finalize_ookb(&candidates, &src.train);
    let part = split_training(&src.train, &ookb);
    let (test, validation) = filter_eval_sets(&src.test, &src.valid, n, &ookb)?;
    let train = KnowledgeGraph::build(part.kept.iter().copied());

    let aux_entities = entities_of(part.aux.iter());
    let ookb_in_aux = aux_entities.iter().filter(|e| ookb.contains(e)).count();
    let train_entities: HashSet<EntityId> = entities_of(train.triplets().iter()).into_iter().collect();
    let aux_known_endpoint_missing = part
        .aux
        .iter()
        .filter(|t| {
            let known = if ookb.contains(&t.head) { t.tail } else { t.head };
            !train_entities.contains(&known)
        })
        .count();

    let stats = SplitStats {
        training_triplets: train.len(),
        validation_triplets: validation.len(),
        test_triplets: test.len(),
        auxiliary_triplets: part.aux.len(),
        ookb_entities: ookb.len(),
        auxiliary_entities: aux_entities.len() - ookb_in_aux,
        auxiliary_entities_all: aux_entities.len(),
        discarded_triplets: part.discarded.len(),
        candidate_entities: candidates.len(),
        aux_known_endpoint_missing,
    };
    Ok(OokbSplit {
        name: split_name(position, n),
        train,
        aux: part.aux,
        ookb_entities: ookb,
        validation,
        test,
        stats,
    })
}

/// File paths of a split written under `dir` as `{position}-{n}.{part}.txt`.
#[derive(Clone, Debug)]
pub struct SplitPaths {
    pub train: PathBuf,
    pub aux: PathBuf,
    pub valid: PathBuf,
    pub test: PathBuf,
    pub ookb: PathBuf,
    pub stats: PathBuf,
    pub stats_json: PathBuf,
}

impl SplitPaths {
    pub fn new(dir: &Path, name: &str) -> Self {
        let p = |part: &str| dir.join(format!("{name}.{part}"));
        Self {
            train: p("train.txt"),
            aux: p("aux.txt"),
            valid: p("valid.txt"),
            test: p("test.txt"),
            ookb: p("ookb.txt"),
            stats: p("stats.txt"),
            stats_json: p("stats.json"),
        }
    }

    /// Parses a split prefix such as `out/head-1000`.
    pub fn from_prefix(prefix: &Path) -> Self {
        let dir = prefix.parent().unwrap_or_else(|| Path::new("."));
        let name = prefix.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Self::new(dir, &name)
    }
}

pub fn write_split(split: &OokbSplit, dir: &Path, symbols: &Symbols) -> Result<SplitPaths> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = SplitPaths::new(dir, &split.name);
    kg::write_plain_triplets(&paths.train, split.train.triplets(), symbols)?;
    kg::write_plain_triplets(&paths.aux, &split.aux, symbols)?;
    kg::write_triplet_file(&paths.valid, &split.validation, true, symbols)?;
    kg::write_triplet_file(&paths.test, &split.test, true, symbols)?;
    let mut ookb = String::new();
    for e in &split.ookb_entities {
        ookb.push_str(symbols.entity_name(*e));
        ookb.push('\n');
    }
    std::fs::write(&paths.ookb, ookb).map_err(|e| Error::io(&paths.ookb, e))?;
    std::fs::write(&paths.stats, split.stats.to_text()).map_err(|e| Error::io(&paths.stats, e))?;
    let json = serde_json::to_string_pretty(&split.stats).expect("stats serialize");
    std::fs::write(&paths.stats_json, json + "\n").map_err(|e| Error::io(&paths.stats_json, e))?;
    Ok(paths)
}

/// A split read back from disk, interned into `symbols`.
#[derive(Clone, Debug)]
pub struct LoadedSplit {
    pub train: Vec<Triplet>,
    pub aux: Vec<Triplet>,
    pub ookb_entities: BTreeSet<EntityId>,
    pub validation: Vec<LabeledTriplet>,
    pub test: Vec<LabeledTriplet>,
}

impl LoadedSplit {
    pub fn load(paths: &SplitPaths, symbols: &mut Symbols) -> Result<Self> {
        let plain = |p: &Path, s: &mut Symbols| -> Result<Vec<Triplet>> {
            Ok(kg::load_triplet_file(p, false, s)?.into_iter().map(|lt| lt.triplet).collect())
        };
        let train = plain(&paths.train, symbols)?;
        let aux = plain(&paths.aux, symbols)?;
        let validation = kg::load_triplet_file(&paths.valid, true, symbols)?;
        let test = kg::load_triplet_file(&paths.test, true, symbols)?;
        let text = std::fs::read_to_string(&paths.ookb).map_err(|e| Error::io(&paths.ookb, e))?;
        let mut ookb_entities = BTreeSet::new();
        for (i, name) in text.lines().enumerate() {
            let id = symbols.entity(name).ok_or_else(|| Error::Parse {
                source_name: paths.ookb.display().to_string(),
                line: i + 1,
                message: format!("OOKB entity {name:?} does not occur in the split"),
            })?;
            ookb_entities.insert(id);
        }
        Ok(Self {
            train,
            aux,
            ookb_entities,
            validation,
            test,
        })
    }
}
