//! Dataset I/O and synthetic multi-hop question generation.
//!
//! The on-disk format is JSON lines, one object per question:
//!
//! ```json
//! {"question_tokens": ["which", "r1", "of", "e3"],
//!  "triples": [["e3", "r1", "e7"]],
//!  "topic_entities": ["e3"],
//!  "answers": ["e7"]}
//! ```
//!
//! Vocabularies are built over whole files in first-occurrence order, so
//! loading is deterministic.

mod synth;

pub use synth::{generate, GeneratedDataset, Manifest, SynthConfig};

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Triple;

/// One question as stored on disk, before vocabulary indexing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawExample {
    pub question_tokens: Vec<String>,
    pub triples: Vec<[String; 3]>,
    pub topic_entities: Vec<String>,
    pub answers: Vec<String>,
}

/// Interned string table with first-occurrence ordering.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), i);
        i
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
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
}

/// Entity, relation, and question-token vocabularies of a dataset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabularies {
    pub entities: Vocab,
    pub relations: Vocab,
    pub tokens: Vocab,
}

impl Vocabularies {
    /// Display name for a relation id, covering inverse-augmented ids
    /// (`r + len` renders as `r^-1`).
    pub fn relation_name(&self, id: usize) -> String {
        let base = self.relations.len();
        if id < base {
            self.relations.name(id).to_string()
        } else {
            format!("{}^-1", self.relations.name(id - base))
        }
    }
}

/// A question with every string replaced by its vocabulary id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexedExample {
    pub tokens: Vec<usize>,
    pub triples: Vec<Triple>,
    pub topics: Vec<usize>,
    pub answers: Vec<usize>,
}

/// A fully indexed train/dev/test corpus sharing one set of vocabularies.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub vocab: Vocabularies,
    pub train: Vec<IndexedExample>,
    pub dev: Vec<IndexedExample>,
    pub test: Vec<IndexedExample>,
}

impl Dataset {
    /// Load `train.jsonl`, `dev.jsonl`, `test.jsonl` from a directory,
    /// building shared vocabularies in that file order.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Dataset> {
        let dir = dir.as_ref();
        let train_raw = load_jsonl(dir.join("train.jsonl"))?;
        let dev_raw = load_jsonl(dir.join("dev.jsonl"))?;
        let test_raw = load_jsonl(dir.join("test.jsonl"))?;
        let mut vocab = Vocabularies::default();
        let train = index_examples(&train_raw, &mut vocab);
        let dev = index_examples(&dev_raw, &mut vocab);
        let test = index_examples(&test_raw, &mut vocab);
        Ok(Dataset {
            vocab,
            train,
            dev,
            test,
        })
    }

    pub fn split(&self, name: &str) -> Result<&[IndexedExample]> {
        match name {
            "train" => Ok(&self.train),
            "dev" => Ok(&self.dev),
            "test" => Ok(&self.test),
            other => Err(Error::InvalidConfig(format!(
                "unknown split {other:?}, expected train|dev|test"
            ))),
        }
    }
}

/// Read one JSONL file of raw examples. Empty files and unparsable lines
/// are errors (with the line number).
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<RawExample>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut examples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: RawExample =
            serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                path: path.display().to_string(),
                line: lineno + 1,
                message: e.to_string(),
            })?;
        examples.push(ex);
    }
    if examples.is_empty() {
        return Err(Error::EmptyDataset(path.display().to_string()));
    }
    Ok(examples)
}

/// Write raw examples as JSONL, one compact object per line.
pub fn save_jsonl(path: impl AsRef<Path>, examples: &[RawExample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for ex in examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Intern all strings of `examples`, extending `vocab` in scan order:
/// question tokens, then triples (head, relation, tail), then topics,
/// then answers.
pub fn index_examples(examples: &[RawExample], vocab: &mut Vocabularies) -> Vec<IndexedExample> {
    examples
        .iter()
        .map(|ex| {
            let tokens = ex
                .question_tokens
                .iter()
                .map(|t| vocab.tokens.intern(t))
                .collect();
            let triples = ex
                .triples
                .iter()
                .map(|[h, r, t]| {
                    Triple::new(
                        vocab.entities.intern(h),
                        vocab.relations.intern(r),
                        vocab.entities.intern(t),
                    )
                })
                .collect();
            let topics = ex
                .topic_entities
                .iter()
                .map(|t| vocab.entities.intern(t))
                .collect();
            let answers = ex.answers.iter().map(|a| vocab.entities.intern(a)).collect();
            IndexedExample {
                tokens,
                triples,
                topics,
                answers,
            }
        })
        .collect()
}

/// Aggregate subgraph statistics of a list of examples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DatasetStats {
    pub questions: usize,
    pub avg_entities: f64,
    pub avg_facts: f64,
    pub avg_relations: f64,
}

pub fn dataset_stats(examples: &[IndexedExample]) -> DatasetStats {
    let questions = examples.len();
    let mut entities = 0usize;
    let mut facts = 0usize;
    let mut relations = 0usize;
    for ex in examples {
        let mut ents: Vec<usize> = ex
            .triples
            .iter()
            .flat_map(|t| [t.head, t.tail])
            .chain(ex.topics.iter().copied())
            .collect();
        ents.sort_unstable();
        ents.dedup();
        entities += ents.len();
        facts += ex.triples.len();
        let mut rels: Vec<usize> = ex.triples.iter().map(|t| t.relation).collect();
        rels.sort_unstable();
        rels.dedup();
        relations += rels.len();
    }
    let n = questions.max(1) as f64;
    DatasetStats {
        questions,
        avg_entities: entities as f64 / n,
        avg_facts: facts as f64 / n,
        avg_relations: relations as f64 / n,
    }
}
