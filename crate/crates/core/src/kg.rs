//! In-memory knowledge graph: interned vocabularies, triplets, neighborhood
//! indices and the tab-separated triplet file format.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// Bijection between names and dense 0-based ids, in insertion order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id of `name`, assigning the next id on first sight.
    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = u32::try_from(self.names.len()).expect("vocabulary exceeds u32 ids");
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Newline-delimited names; line number is the id.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for n in &self.names {
            out.push_str(n);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, source_name: &str) -> Result<Self> {
        let mut vocab = Vocabulary::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                return Err(Error::Parse {
                    source_name: source_name.to_owned(),
                    line: i + 1,
                    message: "empty vocabulary entry".into(),
                });
            }
            if vocab.get(line).is_some() {
                return Err(Error::Parse {
                    source_name: source_name.to_owned(),
                    line: i + 1,
                    message: format!("duplicate vocabulary entry {line:?}"),
                });
            }
            vocab.intern(line);
        }
        Ok(vocab)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }
}

/// Entity and relation vocabularies shared by every file loaded in a run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Symbols {
    pub entities: Vocabulary,
    pub relations: Vocabulary,
}

impl Symbols {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entity(&self, name: &str) -> Option<EntityId> {
        self.entities.get(name).map(EntityId)
    }

    pub fn relation(&self, name: &str) -> Option<RelationId> {
        self.relations.get(name).map(RelationId)
    }

    pub fn entity_name(&self, e: EntityId) -> &str {
        self.entities.name(e.0).unwrap_or("<unknown entity>")
    }

    pub fn relation_name(&self, r: RelationId) -> &str {
        self.relations.name(r.0).unwrap_or("<unknown relation>")
    }

    /// Interns a `(head, relation, tail)` name triple.
    pub fn triplet(&mut self, head: &str, relation: &str, tail: &str) -> Triplet {
        Triplet {
            head: EntityId(self.entities.intern(head)),
            relation: RelationId(self.relations.intern(relation)),
            tail: EntityId(self.entities.intern(tail)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triplet {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triplet {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }

    pub fn touches(&self, e: EntityId) -> bool {
        self.head == e || self.tail == e
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LabeledTriplet {
    pub triplet: Triplet,
    pub label: bool,
}

impl LabeledTriplet {
    pub fn positive(triplet: Triplet) -> Self {
        Self {
            triplet,
            label: true,
        }
    }
}

/// Parses triplet-file text. `source_name` is only used in error messages.
pub fn parse_triplets(
    text: &str,
    labeled: bool,
    symbols: &mut Symbols,
    source_name: &str,
) -> Result<Vec<LabeledTriplet>> {
    let err = |line: usize, message: String| Error::Parse {
        source_name: source_name.to_owned(),
        line,
        message,
    };
    let mut out = Vec::new();
    for (i, raw) in text.split_terminator('\n').enumerate() {
        let line_no = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            return Err(err(line_no, "blank line".into()));
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let expected = if labeled { 4 } else { 3 };
        if fields.len() != expected {
            let message = if labeled && fields.len() == 3 {
                "label column missing".to_owned()
            } else {
                format!("expected {expected} tab-separated fields, found {}", fields.len())
            };
            return Err(err(line_no, message));
        }
        if let Some(empty) = fields.iter().position(|f| f.is_empty()) {
            return Err(err(line_no, format!("field {} is empty", empty + 1)));
        }
        let label = if labeled {
            match fields[3] {
                "1" => true,
                "-1" => false,
                other => return Err(err(line_no, format!("bad label {other:?}, expected 1 or -1"))),
            }
        } else {
            true
        };
        let triplet = symbols.triplet(fields[0], fields[1], fields[2]);
        out.push(LabeledTriplet { triplet, label });
    }
    Ok(out)
}

/// Loads a tab-separated triplet file, extending `symbols` on first sight of
/// each name. Unlabeled files yield positive triplets.
pub fn load_triplet_file(
    path: &Path,
    labeled: bool,
    symbols: &mut Symbols,
) -> Result<Vec<LabeledTriplet>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_triplets(&text, labeled, symbols, &path.display().to_string())
}

/// Serializes triplets in the load format. Every line, including the last,
/// is newline-terminated.
pub fn format_triplets(triplets: &[LabeledTriplet], labeled: bool, symbols: &Symbols) -> String {
    let mut out = String::new();
    for lt in triplets {
        let t = lt.triplet;
        out.push_str(symbols.entity_name(t.head));
        out.push('\t');
        out.push_str(symbols.relation_name(t.relation));
        out.push('\t');
        out.push_str(symbols.entity_name(t.tail));
        if labeled {
            out.push_str(if lt.label { "\t1" } else { "\t-1" });
        }
        out.push('\n');
    }
    out
}

pub fn write_triplet_file(
    path: &Path,
    triplets: &[LabeledTriplet],
    labeled: bool,
    symbols: &Symbols,
) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(format_triplets(triplets, labeled, symbols).as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// Writes unlabeled triplets.
pub fn write_plain_triplets(path: &Path, triplets: &[Triplet], symbols: &Symbols) -> Result<()> {
    let labeled: Vec<LabeledTriplet> = triplets.iter().copied().map(LabeledTriplet::positive).collect();
    write_triplet_file(path, &labeled, false, symbols)
}

/// Which side of a triplet a neighbor sits on, seen from the entity being
/// represented. `Head` neighbors come from triplets `(h, r, e)` and are
/// transformed by the head transition; `Tail` neighbors come from `(e, r, t)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Head,
    Tail,
}

impl Direction {
    pub fn index(self) -> usize {
        match self {
            Direction::Head => 0,
            Direction::Tail => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::Head => "head",
            Direction::Tail => "tail",
        }
    }
}

/// A neighbor reached through one triplet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Neighbor {
    pub direction: Direction,
    pub relation: RelationId,
    pub entity: EntityId,
}

/// Immutable triplet set with head/tail neighborhood indices.
#[derive(Clone, Debug, Default)]
pub struct KnowledgeGraph {
    triplets: Vec<Triplet>,
    // head_index[e]: positions of (h, r, e); tail_index[e]: positions of (e, r, t)
    head_index: Vec<Vec<u32>>,
    tail_index: Vec<Vec<u32>>,
    duplicates: usize,
}

impl KnowledgeGraph {
    /// Builds the graph, collapsing duplicates and keeping first-occurrence order.
    pub fn build(triplets: impl IntoIterator<Item = Triplet>) -> Self {
        let mut seen = HashSet::new();
        let mut kept = Vec::new();
        let mut duplicates = 0;
        for t in triplets {
            if seen.insert(t) {
                kept.push(t);
            } else {
                duplicates += 1;
            }
        }
        let n = kept
            .iter()
            .map(|t| t.head.index().max(t.tail.index()) + 1)
            .max()
            .unwrap_or(0);
        let mut head_index = vec![Vec::new(); n];
        let mut tail_index = vec![Vec::new(); n];
        for (i, t) in kept.iter().enumerate() {
            let i = i as u32;
            head_index[t.tail.index()].push(i);
            tail_index[t.head.index()].push(i);
        }
        Self {
            triplets: kept,
            head_index,
            tail_index,
            duplicates,
        }
    }

    pub fn triplets(&self) -> &[Triplet] {
        &self.triplets
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    /// Number of input triplets dropped as duplicates at build time.
    pub fn duplicates_collapsed(&self) -> usize {
        self.duplicates
    }

    pub fn contains(&self, t: &Triplet) -> bool {
        self.tail_neighborhood(t.head).any(|x| x == *t)
    }

    /// Triplets `(h, r, e)` in which `e` is the tail.
    pub fn head_neighborhood(&self, e: EntityId) -> impl Iterator<Item = Triplet> + '_ {
        self.head_index
            .get(e.index())
            .into_iter()
            .flatten()
            .map(move |&i| self.triplets[i as usize])
    }

    /// Triplets `(e, r, t)` in which `e` is the head.
    pub fn tail_neighborhood(&self, e: EntityId) -> impl Iterator<Item = Triplet> + '_ {
        self.tail_index
            .get(e.index())
            .into_iter()
            .flatten()
            .map(move |&i| self.triplets[i as usize])
    }

    pub fn degree(&self, e: EntityId) -> usize {
        self.head_index.get(e.index()).map_or(0, Vec::len)
            + self.tail_index.get(e.index()).map_or(0, Vec::len)
    }

    /// Head neighbors first, then tail neighbors, each in triplet order.
    pub fn neighbors(&self, e: EntityId) -> impl Iterator<Item = Neighbor> + '_ {
        let heads = self.head_neighborhood(e).map(|t| Neighbor {
            direction: Direction::Head,
            relation: t.relation,
            entity: t.head,
        });
        let tails = self.tail_neighborhood(e).map(|t| Neighbor {
            direction: Direction::Tail,
            relation: t.relation,
            entity: t.tail,
        });
        heads.chain(tails)
    }

    /// Upper bound (exclusive) on entity ids present in the indices.
    pub fn entity_bound(&self) -> usize {
        self.head_index.len()
    }
}

/// Entities occurring as head or tail of any triplet.
pub fn entities_of<'a>(triplets: impl IntoIterator<Item = &'a Triplet>) -> BTreeSet<EntityId> {
    let mut out = BTreeSet::new();
    for t in triplets {
        out.insert(t.head);
        out.insert(t.tail);
    }
    out
}

pub fn relations_of<'a>(triplets: impl IntoIterator<Item = &'a Triplet>) -> BTreeSet<RelationId> {
    triplets.into_iter().map(|t| t.relation).collect()
}
