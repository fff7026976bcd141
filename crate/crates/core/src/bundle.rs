//! Self-describing model checkpoints.
//!
//! A bundle is a directory holding the parameter store (`params.bin`,
//! `params.json`), the configurations and epoch counter (`model.json`), both
//! vocabularies (`entities.txt`, `relations.txt`, line number = id) and the
//! training graph (`graph.txt`) that propagation runs over.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{parse_triplets, write_plain_triplets, KnowledgeGraph, Symbols, Vocabulary};
use crate::model::{Model, PropagationConfig};
use crate::numerics::ParamStore;
use crate::trainer::TrainConfig;

const FORMAT: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct Manifest {
    format: u32,
    propagation: PropagationConfig,
    train: Option<TrainConfig>,
    epochs_done: u64,
    n_entities: usize,
    n_relations: usize,
    graph_triplets: usize,
}

#[derive(Clone, Debug)]
pub struct Bundle {
    pub model: Model,
    pub symbols: Symbols,
    pub graph: KnowledgeGraph,
    pub train: Option<TrainConfig>,
    pub epochs_done: u64,
}

impl Bundle {
    pub fn save(&self, dir: &Path) -> Result<()> {
        Self::write(dir, &self.model, &self.symbols, &self.graph, self.train.as_ref(), self.epochs_done)
    }

    /// Saves a bundle from borrowed parts.
    pub fn write(
        dir: &Path,
        model: &Model,
        symbols: &Symbols,
        graph: &KnowledgeGraph,
        train: Option<&TrainConfig>,
        epochs_done: u64,
    ) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        model.store().save(dir)?;
        symbols.entities.write(&dir.join("entities.txt"))?;
        symbols.relations.write(&dir.join("relations.txt"))?;
        write_plain_triplets(&dir.join("graph.txt"), graph.triplets(), symbols)?;
        let manifest = Manifest {
            format: FORMAT,
            propagation: model.config().clone(),
            train: train.cloned(),
            epochs_done,
            n_entities: model.n_entities(),
            n_relations: model.n_relations(),
            graph_triplets: graph.len(),
        };
        let path = dir.join("model.json");
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serialize");
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("model.json");
        if !path.exists() {
            return Err(Error::Checkpoint(format!("{} is not a model checkpoint (no model.json)", dir.display())));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if m.format != FORMAT {
            return Err(Error::Checkpoint(format!("unsupported checkpoint format {}", m.format)));
        }
        let mut symbols = Symbols {
            entities: Vocabulary::read(&dir.join("entities.txt"))?,
            relations: Vocabulary::read(&dir.join("relations.txt"))?,
        };
        let model = Model::from_store(m.propagation, ParamStore::load(dir)?)?;
        if model.n_entities() != m.n_entities || model.n_relations() != m.n_relations {
            return Err(Error::Checkpoint("parameter tables disagree with model.json".into()));
        }
        if symbols.entities.len() > model.n_entities() || symbols.relations.len() > model.n_relations() {
            return Err(Error::Checkpoint("vocabulary larger than the embedding tables".into()));
        }
        let (n_e, n_r) = (symbols.entities.len(), symbols.relations.len());
        let graph_path = dir.join("graph.txt");
        let graph_text = fs::read_to_string(&graph_path).map_err(|e| Error::io(&graph_path, e))?;
        let triplets = parse_triplets(&graph_text, false, &mut symbols, &graph_path.display().to_string())?;
        if symbols.entities.len() != n_e || symbols.relations.len() != n_r {
            return Err(Error::Checkpoint("graph.txt names entities or relations outside the vocabulary".into()));
        }
        let graph = KnowledgeGraph::build(triplets.into_iter().map(|l| l.triplet));
        if graph.len() != m.graph_triplets {
            return Err(Error::Checkpoint(format!(
                "graph.txt holds {} triplets, model.json says {}",
                graph.len(),
                m.graph_triplets
            )));
        }
        Ok(Self {
            model,
            symbols,
            graph,
            train: m.train,
            epochs_done: m.epochs_done,
        })
    }
}
