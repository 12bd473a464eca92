//! Knowledge graph storage, question-specific subgraph extraction (the
//! primal entity graph), and dual relation graph construction.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type EntityId = usize;
pub type RelationId = usize;

/// One directed labeled fact `(head, relation, tail)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Triple { head, relation, tail }
    }
}

/// A knowledge graph over integer entity/relation vocabularies, with
/// adjacency indexes by head and by tail covering exactly the triple list.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    pub num_entities: usize,
    pub num_relations: usize,
    pub triples: Vec<Triple>,
    by_head: Vec<Vec<usize>>,
    by_tail: Vec<Vec<usize>>,
}

impl KnowledgeGraph {
    pub fn new(num_entities: usize, num_relations: usize, triples: Vec<Triple>) -> Self {
        let mut by_head = vec![Vec::new(); num_entities];
        let mut by_tail = vec![Vec::new(); num_entities];
        for (i, t) in triples.iter().enumerate() {
            assert!(
                t.head < num_entities && t.tail < num_entities,
                "triple {i} references entity outside vocabulary of {num_entities}"
            );
            assert!(
                t.relation < num_relations,
                "triple {i} references relation outside vocabulary of {num_relations}"
            );
            by_head[t.head].push(i);
            by_tail[t.tail].push(i);
        }
        KnowledgeGraph {
            num_entities,
            num_relations,
            triples,
            by_head,
            by_tail,
        }
    }

    pub fn triples_from(&self, head: EntityId) -> impl Iterator<Item = &Triple> {
        self.by_head[head].iter().map(|&i| &self.triples[i])
    }

    pub fn triples_into(&self, tail: EntityId) -> impl Iterator<Item = &Triple> {
        self.by_tail[tail].iter().map(|&i| &self.triples[i])
    }

    /// Entities whose undirected shortest-path distance from some topic
    /// is at most `hops`, plus all facts among them.
    pub fn extract_subgraph(&self, topics: &[EntityId], hops: usize) -> Result<SubGraph> {
        if topics.is_empty() {
            return Err(Error::NoTopicEntities());
        }
        for &t in topics {
            if t >= self.num_entities {
                return Err(Error::UnknownEntity(t));
            }
        }
        // multi-source BFS on the undirected graph
        let mut dist: HashMap<EntityId, usize> = HashMap::new();
        let mut order: Vec<EntityId> = Vec::new();
        let mut queue = VecDeque::new();
        for &t in topics {
            if !dist.contains_key(&t) {
                dist.insert(t, 0);
                order.push(t);
                queue.push_back(t);
            }
        }
        while let Some(e) = queue.pop_front() {
            let d = dist[&e];
            if d == hops {
                continue;
            }
            let neighbors = self
                .by_head[e]
                .iter()
                .map(|&i| self.triples[i].tail)
                .chain(self.by_tail[e].iter().map(|&i| self.triples[i].head));
            for n in neighbors {
                if !dist.contains_key(&n) {
                    dist.insert(n, d + 1);
                    order.push(n);
                    queue.push_back(n);
                }
            }
        }
        let included: BTreeSet<EntityId> = order.iter().copied().collect();
        let facts: Vec<Triple> = self
            .triples
            .iter()
            .filter(|t| included.contains(&t.head) && included.contains(&t.tail))
            .copied()
            .collect();
        SubGraph::from_parts(order, facts, topics, self.num_relations)
    }
}

/// A fact inside a subgraph: entity indices are local, the relation is an
/// index into [`SubGraph::relations`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalFact {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

/// The primal entity graph of one question: a local view of the KG with
/// its own entity ordering, the relation types that occur, and the topic
/// entities reasoning starts from.
#[derive(Debug, Clone)]
pub struct SubGraph {
    /// Local entity index -> global entity id.
    pub entities: Vec<EntityId>,
    /// Local relation index -> global relation id, ascending. After
    /// inverse augmentation this includes ids `>= base_relations`.
    pub relations: Vec<RelationId>,
    pub facts: Vec<LocalFact>,
    /// Local indices of the question's topic entities.
    pub topics: Vec<usize>,
    pub inverse_augmented: bool,
    /// Size of the global relation vocabulary before augmentation;
    /// the inverse of relation `r` is `r + base_relations`.
    pub base_relations: usize,
}

impl SubGraph {
    /// Build from global-id parts. Entity order follows `entities`;
    /// topics must be present in it.
    pub fn from_parts(
        entities: Vec<EntityId>,
        triples: Vec<Triple>,
        topics: &[EntityId],
        base_relations: usize,
    ) -> Result<Self> {
        let index: HashMap<EntityId, usize> =
            entities.iter().enumerate().map(|(i, &e)| (e, i)).collect();
        let mut topic_local = Vec::with_capacity(topics.len());
        for &t in topics {
            match index.get(&t) {
                Some(&i) => topic_local.push(i),
                None => return Err(Error::UnknownEntity(t)),
            }
        }
        let rel_set: BTreeSet<RelationId> = triples.iter().map(|t| t.relation).collect();
        let relations: Vec<RelationId> = rel_set.into_iter().collect();
        let rel_index: HashMap<RelationId, usize> =
            relations.iter().enumerate().map(|(i, &r)| (r, i)).collect();
        let facts = triples
            .iter()
            .map(|t| LocalFact {
                head: index[&t.head],
                relation: rel_index[&t.relation],
                tail: index[&t.tail],
            })
            .collect();
        Ok(SubGraph {
            entities,
            relations,
            facts,
            topics: topic_local,
            inverse_augmented: false,
            base_relations,
        })
    }

    /// Convenience constructor used by the data pipeline: entities are
    /// collected in first-occurrence order (topics first, then triples).
    pub fn from_triples(
        triples: &[Triple],
        topics: &[EntityId],
        base_relations: usize,
    ) -> Result<Self> {
        let mut entities = Vec::new();
        let mut seen = BTreeSet::new();
        for &t in topics {
            if seen.insert(t) {
                entities.push(t);
            }
        }
        for t in triples {
            if seen.insert(t.head) {
                entities.push(t.head);
            }
            if seen.insert(t.tail) {
                entities.push(t.tail);
            }
        }
        SubGraph::from_parts(entities, triples.to_vec(), topics, base_relations)
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    /// Add `(t, r^-1, h)` for every fact `(h, r, t)`; the inverse of
    /// global relation `r` is `r + base_relations`.
    pub fn add_inverse_facts(&self) -> Result<SubGraph> {
        if self.inverse_augmented {
            return Err(Error::AlreadyAugmented);
        }
        let mut rel_set: BTreeSet<RelationId> = self.relations.iter().copied().collect();
        for f in &self.facts {
            rel_set.insert(self.relations[f.relation] + self.base_relations);
        }
        let relations: Vec<RelationId> = rel_set.into_iter().collect();
        let rel_index: HashMap<RelationId, usize> =
            relations.iter().enumerate().map(|(i, &r)| (r, i)).collect();
        let mut facts = Vec::with_capacity(self.facts.len() * 2);
        for f in &self.facts {
            let forward = rel_index[&self.relations[f.relation]];
            facts.push(LocalFact {
                head: f.head,
                relation: forward,
                tail: f.tail,
            });
        }
        for f in &self.facts {
            let inverse = rel_index[&(self.relations[f.relation] + self.base_relations)];
            facts.push(LocalFact {
                head: f.tail,
                relation: inverse,
                tail: f.head,
            });
        }
        Ok(SubGraph {
            entities: self.entities.clone(),
            relations,
            facts,
            topics: self.topics.clone(),
            inverse_augmented: true,
            base_relations: self.base_relations,
        })
    }

    /// Head and tail entity sets per local relation, over this subgraph's
    /// facts.
    pub fn role_sets(&self) -> (Vec<BTreeSet<usize>>, Vec<BTreeSet<usize>>) {
        let n = self.relations.len();
        let mut heads = vec![BTreeSet::new(); n];
        let mut tails = vec![BTreeSet::new(); n];
        for f in &self.facts {
            heads[f.relation].insert(f.head);
            tails[f.relation].insert(f.tail);
        }
        (heads, tails)
    }
}

/// Which entity overlap links two relations in the dual graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DualEdgeMode {
    /// Heads and tails pooled into one set per relation; any shared
    /// entity creates an edge.
    #[default]
    Pooled,
    /// Shared head entity or shared tail entity, role for role.
    RoleMatched,
}

/// The dual relation graph: one node per relation type occurring in the
/// subgraph (ascending relation id), an undirected adjacency with
/// self-loops, and the per-relation head/tail entity sets.
#[derive(Debug, Clone)]
pub struct DualGraph {
    /// Sorted neighbor lists over local relation indices; every node's
    /// list contains the node itself.
    pub neighbors: Vec<Vec<usize>>,
    pub head_sets: Vec<BTreeSet<usize>>,
    pub tail_sets: Vec<BTreeSet<usize>>,
    pub mode: DualEdgeMode,
}

impl DualGraph {
    pub fn num_nodes(&self) -> usize {
        self.neighbors.len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    /// Pooled head∪tail entity set of relation `i`.
    pub fn pooled_set(&self, i: usize) -> BTreeSet<usize> {
        self.head_sets[i].union(&self.tail_sets[i]).copied().collect()
    }
}

/// Connect relations that share entities across this subgraph's facts.
/// Node order is the subgraph's relation order (ascending relation id).
pub fn build_dual_graph(sg: &SubGraph, mode: DualEdgeMode) -> Result<DualGraph> {
    if sg.facts.is_empty() {
        return Err(Error::EmptySubgraph);
    }
    let (head_sets, tail_sets) = sg.role_sets();
    let n = sg.relations.len();
    let pooled: Vec<BTreeSet<usize>> = (0..n)
        .map(|i| head_sets[i].union(&tail_sets[i]).copied().collect())
        .collect();
    let mut neighbors: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            let connected = match mode {
                DualEdgeMode::Pooled => !pooled[i].is_disjoint(&pooled[j]),
                DualEdgeMode::RoleMatched => {
                    !head_sets[i].is_disjoint(&head_sets[j])
                        || !tail_sets[i].is_disjoint(&tail_sets[j])
                }
            };
            if connected {
                neighbors[i].push(j);
                neighbors[j].push(i);
            }
        }
    }
    for list in &mut neighbors {
        list.sort_unstable();
    }
    Ok(DualGraph {
        neighbors,
        head_sets,
        tail_sets,
        mode,
    })
}

/// Jaccard overlap of pooled head/tail entity sets for every dual edge,
/// keyed by ordered pair (both directions present, self-loops = 1).
/// Callers normalize a node's incident weights before propagation.
pub fn cooccurrence_weights(dg: &DualGraph) -> BTreeMap<(usize, usize), f64> {
    let pooled: Vec<BTreeSet<usize>> = (0..dg.num_nodes()).map(|i| dg.pooled_set(i)).collect();
    let mut weights = BTreeMap::new();
    for (i, neigh) in dg.neighbors.iter().enumerate() {
        for &j in neigh {
            let inter = pooled[i].intersection(&pooled[j]).count() as f64;
            let union = pooled[i].union(&pooled[j]).count() as f64;
            weights.insert((i, j), inter / union);
        }
    }
    weights
}
