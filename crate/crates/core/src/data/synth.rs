//! Synthetic multi-hop KGQA generation.
//!
//! Every question gets its own little knowledge graph drawn from a shared
//! entity/relation name pool. A question is a relation path walked from a
//! topic entity, optionally intersected with a constraint through a second
//! topic ("which r2 of r1 of e03 and r5 of e17"), and its gold answers are
//! computed by exhaustive search over the graph.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RawExample;
use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, Triple};

/// Surface forms of the question template.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct TemplateWords {
    pub lead: String,
    pub glue: String,
    pub conj: String,
}

impl Default for TemplateWords {
    fn default() -> Self {
        TemplateWords {
            lead: "which".to_string(),
            glue: "of".to_string(),
            conj: "and".to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SynthConfig {
    /// Entities per question graph.
    pub entities: usize,
    pub relation_types: usize,
    /// Facts per question graph (before any constraint fact is added).
    pub facts: usize,
    /// Reasoning hops per question, 1..=3.
    pub hops: usize,
    /// Probability that a second topic entity imposes an intersection
    /// constraint on the answers.
    pub constraint_prob: f64,
    pub template: TemplateWords,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub seed: u64,
    /// Pair up relations as exact inverses sharing head/tail sets, to
    /// stress dual-graph propagation.
    pub co_relation_stress: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            entities: 40,
            relation_types: 8,
            facts: 80,
            hops: 2,
            constraint_prob: 0.3,
            template: TemplateWords::default(),
            train: 500,
            dev: 100,
            test: 100,
            seed: 0,
            co_relation_stress: false,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.entities < 2 {
            return Err(Error::InvalidConfig("need at least 2 entities".into()));
        }
        if self.relation_types == 0 || self.facts == 0 {
            return Err(Error::InvalidConfig(
                "relation and fact counts must be positive".into(),
            ));
        }
        if !(1..=3).contains(&self.hops) {
            return Err(Error::InvalidConfig("hops must be in 1..=3".into()));
        }
        if !(0.0..=1.0).contains(&self.constraint_prob) {
            return Err(Error::InvalidConfig("constraint_prob must be in [0,1]".into()));
        }
        if self.co_relation_stress && self.relation_types % 2 != 0 {
            return Err(Error::InvalidConfig(
                "co-relation stress mode needs an even relation count".into(),
            ));
        }
        let capacity = self.entities * (self.entities - 1) * self.relation_types;
        if self.facts > capacity / 2 {
            return Err(Error::InvalidConfig(format!(
                "{} facts exceed half the {} possible distinct triples",
                self.facts, capacity
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub config: SynthConfig,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub train: Vec<RawExample>,
    pub dev: Vec<RawExample>,
    pub test: Vec<RawExample>,
    pub manifest: Manifest,
}

impl GeneratedDataset {
    /// Write `train.jsonl`, `dev.jsonl`, `test.jsonl`, `manifest.json`.
    pub fn write_dir(&self, dir: impl AsRef<std::path::Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        super::save_jsonl(dir.join("train.jsonl"), &self.train)?;
        super::save_jsonl(dir.join("dev.jsonl"), &self.dev)?;
        super::save_jsonl(dir.join("test.jsonl"), &self.test)?;
        let manifest = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(dir.join("manifest.json"), manifest)?;
        Ok(())
    }
}

const MAX_RETRIES: usize = 500;

/// Generate disjoint train/dev/test splits. Identical configs (including
/// the seed) produce byte-identical datasets.
pub fn generate(config: &SynthConfig) -> Result<GeneratedDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut make_split = |count: usize, rng: &mut ChaCha8Rng| -> Result<Vec<RawExample>> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let mut attempts = 0;
            loop {
                if attempts >= MAX_RETRIES {
                    return Err(Error::GenerationRetryExhausted(MAX_RETRIES));
                }
                attempts += 1;
                let Some(ex) = sample_question(config, rng) else {
                    continue;
                };
                let key = serde_json::to_string(&ex).expect("raw example serializes");
                if seen.insert(key) {
                    out.push(ex);
                    break;
                }
            }
        }
        Ok(out)
    };
    let train = make_split(config.train, &mut rng)?;
    let dev = make_split(config.dev, &mut rng)?;
    let test = make_split(config.test, &mut rng)?;
    let manifest = Manifest {
        config: config.clone(),
        train: train.len(),
        dev: dev.len(),
        test: test.len(),
    };
    Ok(GeneratedDataset {
        train,
        dev,
        test,
        manifest,
    })
}

fn entity_name(id: usize) -> String {
    format!("e{id:02}")
}

fn relation_name(id: usize) -> String {
    format!("r{id}")
}

/// Draw one question graph and question, or `None` when the draw dead-ends
/// (caller retries).
fn sample_question(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Option<RawExample> {
    let mut facts: BTreeSet<Triple> = BTreeSet::new();
    let insert = |facts: &mut BTreeSet<Triple>, h: usize, r: usize, t: usize| {
        facts.insert(Triple::new(h, r, t));
        if config.co_relation_stress {
            // paired inverse relation: r even <-> r+1
            let paired = if r % 2 == 0 { r + 1 } else { r - 1 };
            facts.insert(Triple::new(t, paired, h));
        }
    };
    let mut attempts = 0;
    while facts.len() < config.facts {
        attempts += 1;
        if attempts > config.facts * 50 + 1000 {
            return None;
        }
        let h = rng.gen_range(0..config.entities);
        let t = rng.gen_range(0..config.entities);
        if h == t {
            continue;
        }
        let r = rng.gen_range(0..config.relation_types);
        insert(&mut facts, h, r, t);
    }
    let triples: Vec<Triple> = facts.iter().copied().collect();
    let kg = KnowledgeGraph::new(config.entities, config.relation_types, triples);

    // walk a path of `hops` relations from a random topic
    let topic = (0..20)
        .map(|_| rng.gen_range(0..config.entities))
        .find(|&e| kg.triples_from(e).next().is_some())?;
    let mut path = Vec::with_capacity(config.hops);
    let mut cursor = topic;
    for _ in 0..config.hops {
        let options: Vec<&Triple> = kg.triples_from(cursor).collect();
        let step = options.choose(rng)?;
        path.push(step.relation);
        cursor = step.tail;
    }

    // exhaustive execution of the path
    let mut answers = execute_path(&kg, topic, &path);
    debug_assert!(answers.contains(&cursor));

    // optional intersection constraint through a second topic
    let mut constraint: Option<(usize, usize)> = None;
    if rng.gen_bool(config.constraint_prob) {
        let anchor = *answers.iter().nth(rng.gen_range(0..answers.len()))?;
        let c_rel = rng.gen_range(0..config.relation_types);
        let candidates: Vec<usize> = (0..config.entities).filter(|&e| e != anchor).collect();
        let c_ent = *candidates.choose(rng)?;
        let mut facts = kg.triples.iter().copied().collect::<BTreeSet<_>>();
        insert(&mut facts, c_ent, c_rel, anchor);
        let kg2 = KnowledgeGraph::new(
            config.entities,
            config.relation_types,
            facts.into_iter().collect(),
        );
        let allowed: BTreeSet<usize> = kg2
            .triples_from(c_ent)
            .filter(|t| t.relation == c_rel)
            .map(|t| t.tail)
            .collect();
        answers = execute_path(&kg2, topic, &path)
            .intersection(&allowed)
            .copied()
            .collect();
        if answers.is_empty() {
            return None;
        }
        constraint = Some((c_ent, c_rel));
        return build_example(config, &kg2, topic, &path, constraint, &answers);
    }
    build_example(config, &kg, topic, &path, constraint, &answers)
}

/// All entities reachable from `start` by following exactly the relation
/// sequence `path` along fact direction.
fn execute_path(kg: &KnowledgeGraph, start: usize, path: &[usize]) -> BTreeSet<usize> {
    let mut frontier = BTreeSet::from([start]);
    for &rel in path {
        let mut next = BTreeSet::new();
        for &e in &frontier {
            for t in kg.triples_from(e) {
                if t.relation == rel {
                    next.insert(t.tail);
                }
            }
        }
        frontier = next;
        if frontier.is_empty() {
            break;
        }
    }
    frontier
}

fn build_example(
    config: &SynthConfig,
    kg: &KnowledgeGraph,
    topic: usize,
    path: &[usize],
    constraint: Option<(usize, usize)>,
    answers: &BTreeSet<usize>,
) -> Option<RawExample> {
    let mut topics = vec![topic];
    if let Some((c_ent, _)) = constraint {
        if c_ent != topic {
            topics.push(c_ent);
        }
    }
    let sg = kg.extract_subgraph(&topics, config.hops).ok()?;
    let in_subgraph: BTreeSet<usize> = sg.entities.iter().copied().collect();
    if !answers.iter().all(|a| in_subgraph.contains(a)) {
        return None;
    }

    let tpl = &config.template;
    let mut question_tokens = vec![tpl.lead.clone()];
    for &rel in path.iter().rev() {
        question_tokens.push(relation_name(rel));
        question_tokens.push(tpl.glue.clone());
    }
    question_tokens.push(entity_name(topic));
    if let Some((c_ent, c_rel)) = constraint {
        question_tokens.push(tpl.conj.clone());
        question_tokens.push(relation_name(c_rel));
        question_tokens.push(tpl.glue.clone());
        question_tokens.push(entity_name(c_ent));
    }

    // emit the extracted facts with surface names, in subgraph order
    let triples = sg
        .facts
        .iter()
        .map(|f| {
            [
                entity_name(sg.entities[f.head]),
                relation_name(sg.relations[f.relation]),
                entity_name(sg.entities[f.tail]),
            ]
        })
        .collect();
    Some(RawExample {
        question_tokens,
        triples,
        topic_entities: topics.iter().map(|&t| entity_name(t)).collect(),
        answers: answers.iter().map(|&a| entity_name(a)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::index_examples;
    use crate::data::Vocabularies;

    fn small_config() -> SynthConfig {
        SynthConfig {
            entities: 12,
            relation_types: 4,
            facts: 24,
            hops: 2,
            constraint_prob: 0.5,
            train: 12,
            dev: 4,
            test: 4,
            seed: 42,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let cfg = small_config();
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        let ser = |xs: &[RawExample]| serde_json::to_string(xs).unwrap();
        assert_eq!(ser(&a.train), ser(&b.train));
        assert_eq!(ser(&a.dev), ser(&b.dev));
        assert_eq!(ser(&a.test), ser(&b.test));
    }

    #[test]
    fn splits_are_disjoint_in_question_identity() {
        let data = generate(&small_config()).unwrap();
        let mut keys = BTreeSet::new();
        for ex in data.train.iter().chain(&data.dev).chain(&data.test) {
            assert!(keys.insert(serde_json::to_string(ex).unwrap()));
        }
    }

    /// Independent oracle: re-derive the gold answers of every generated
    /// question by exhaustive search over its emitted triples.
    #[test]
    fn answers_match_exhaustive_search_oracle() {
        let cfg = small_config();
        let data = generate(&cfg).unwrap();
        for ex in data.train.iter().chain(&data.dev).chain(&data.test) {
            let oracle = oracle_answers(ex, &cfg);
            let mut got: Vec<&str> = ex.answers.iter().map(|s| s.as_str()).collect();
            got.sort_unstable();
            assert_eq!(got, oracle, "question {:?}", ex.question_tokens);
        }
    }

    /// Brute-force path + constraint evaluation straight off the tokens.
    fn oracle_answers<'a>(ex: &'a RawExample, cfg: &SynthConfig) -> Vec<&'a str> {
        let tpl = &cfg.template;
        let toks: Vec<&str> = ex.question_tokens.iter().map(|s| s.as_str()).collect();
        let conj_at = toks.iter().position(|t| *t == tpl.conj);
        let main_part = &toks[1..conj_at.unwrap_or(toks.len())];
        // main part looks like: r_k of r_{k-1} of ... r_1 of topic
        let topic = *main_part.last().unwrap();
        let rels_outer_first: Vec<&str> = main_part
            .iter()
            .step_by(2)
            .take(main_part.len() / 2)
            .copied()
            .collect();
        let mut frontier: BTreeSet<&str> = BTreeSet::from([topic]);
        for rel in rels_outer_first.iter().rev() {
            let mut next = BTreeSet::new();
            for [h, r, t] in &ex.triples {
                if frontier.contains(h.as_str()) && r == rel {
                    next.insert(t.as_str());
                }
            }
            frontier = next;
        }
        if let Some(pos) = conj_at {
            let c_rel = toks[pos + 1];
            let c_ent = toks[pos + 3];
            let allowed: BTreeSet<&str> = ex
                .triples
                .iter()
                .filter(|[h, r, _]| h == c_ent && r == c_rel)
                .map(|[_, _, t]| t.as_str())
                .collect();
            frontier = frontier.intersection(&allowed).copied().collect();
        }
        frontier.into_iter().collect()
    }

    #[test]
    fn one_hop_answers_are_all_relation_tails() {
        let cfg = SynthConfig {
            hops: 1,
            constraint_prob: 0.0,
            train: 10,
            dev: 1,
            test: 1,
            ..small_config()
        };
        let data = generate(&cfg).unwrap();
        for ex in &data.train {
            let topic = &ex.topic_entities[0];
            let rel = &ex.question_tokens[1];
            let mut expected: Vec<&String> = ex
                .triples
                .iter()
                .filter(|[h, r, _]| h == topic && r == rel)
                .map(|[_, _, t]| t)
                .collect();
            expected.sort_unstable();
            expected.dedup();
            let mut got: Vec<&String> = ex.answers.iter().collect();
            got.sort_unstable();
            assert_eq!(got, expected);
        }
    }

    #[test]
    fn topics_and_answers_live_in_the_subgraph() {
        let data = generate(&small_config()).unwrap();
        for ex in data.train.iter().chain(&data.dev).chain(&data.test) {
            let entities: BTreeSet<&String> = ex
                .triples
                .iter()
                .flat_map(|[h, _, t]| [h, t])
                .collect();
            for t in &ex.topic_entities {
                assert!(entities.contains(t));
            }
            for a in &ex.answers {
                assert!(entities.contains(a));
            }
        }
    }

    #[test]
    fn stress_mode_pairs_relations_as_inverses() {
        let cfg = SynthConfig {
            co_relation_stress: true,
            constraint_prob: 0.0,
            train: 6,
            dev: 1,
            test: 1,
            ..small_config()
        };
        let data = generate(&cfg).unwrap();
        let mut vocab = Vocabularies::default();
        for ex in &data.train {
            let indexed = &index_examples(std::slice::from_ref(ex), &mut vocab)[0];
            for t in &indexed.triples {
                let name = vocab.relations.name(t.relation);
                let rel_id: usize = name[1..].parse().unwrap();
                let paired = if rel_id % 2 == 0 { rel_id + 1 } else { rel_id - 1 };
                let paired_name = format!("r{paired}");
                let has_pair = indexed.triples.iter().any(|u| {
                    u.head == t.tail
                        && u.tail == t.head
                        && vocab.relations.name(u.relation) == paired_name
                });
                assert!(has_pair, "fact {t:?} lacks its inverse pair");
            }
        }
    }

    #[test]
    fn stress_mode_requires_even_relations() {
        let cfg = SynthConfig {
            co_relation_stress: true,
            relation_types: 3,
            ..small_config()
        };
        assert!(matches!(generate(&cfg), Err(Error::InvalidConfig(_))));
    }
}
