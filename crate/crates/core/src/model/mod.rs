//! The per-step reasoning network: question encoding, instruction
//! generation, primal entity-graph reasoning, dual relation-graph
//! propagation, dual/primal interaction, decoding, instruction adaption,
//! and the focal loss.

mod encoder;

pub use encoder::{encode_question, QuestionEncoding};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::IndexedExample;
use crate::error::{Error, Result};
use crate::graph::{build_dual_graph, cooccurrence_weights, DualEdgeMode, DualGraph, SubGraph};
use crate::tensor::{BoundParams, ParamSpec, ParameterStore, Tape, Tensor, Var};

/// How dual-graph neighbor weights are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DualMode {
    /// Learned bilinear attention over neighbors.
    #[default]
    Attention,
    /// Frozen, row-normalized co-occurrence (Jaccard) weights.
    Cooccurrence,
    /// Dual propagation disabled: relations pass through unchanged.
    Off,
}

/// How step-0 entity embeddings are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EntityInit {
    /// Mean of projected embeddings of the relations incident to the
    /// entity; needs no per-entity parameters.
    #[default]
    RelationDerived,
    /// Learned per-entity embedding table (closed-world data only).
    Lookup,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Hidden size `d` of the recurrent encoder and the graph network.
    pub hidden: usize,
    /// Reasoning steps `n`.
    pub steps: usize,
    /// Focal loss focusing exponent.
    pub gamma: f64,
    pub entity_init: EntityInit,
    pub dual_mode: DualMode,
    /// Dual/primal interaction (both update directions) on or off.
    pub interaction: bool,
    pub dual_edges: DualEdgeMode,
    pub inverse_facts: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 128,
            steps: 3,
            gamma: 2.0,
            entity_init: EntityInit::RelationDerived,
            dual_mode: DualMode::Attention,
            interaction: true,
            dual_edges: DualEdgeMode::Pooled,
            inverse_facts: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::InvalidConfig("hidden size must be >= 1".into()));
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("reasoning steps must be >= 1".into()));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::InvalidConfig("gamma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Vocabulary sizes the parameter shapes depend on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VocabSizes {
    pub tokens: usize,
    pub entities: usize,
    /// Base relation count, before inverse augmentation.
    pub relations: usize,
}

/// One question ready for the reasoner: augmented subgraph, dual graph,
/// and the index arrays every step reuses.
#[derive(Debug, Clone)]
pub struct PreparedExample {
    pub tokens: Vec<usize>,
    pub sg: SubGraph,
    pub dual: DualGraph,
    /// Local entity ids of the gold answers present in the subgraph.
    pub answers: Vec<usize>,
    /// Counts of the question's raw subgraph (before augmentation),
    /// used by the quantile analysis.
    pub raw_entities: usize,
    pub raw_facts: usize,
    pub raw_relations: usize,

    fact_heads: Vec<usize>,
    fact_rels: Vec<usize>,
    fact_tails: Vec<usize>,
    rel_inv_counts: Vec<f64>,
    head_pair_ents: Vec<usize>,
    head_pair_rels: Vec<usize>,
    head_inv_counts: Vec<f64>,
    tail_pair_ents: Vec<usize>,
    tail_pair_rels: Vec<usize>,
    tail_inv_counts: Vec<f64>,
    incident_pair_ents: Vec<usize>,
    incident_pair_rels: Vec<usize>,
    incident_inv_counts: Vec<f64>,
    attention_mask: Tensor,
    cooc_matrix: Tensor,
    p0: Tensor,
}

impl PreparedExample {
    pub fn num_entities(&self) -> usize {
        self.sg.num_entities()
    }

    pub fn num_relations(&self) -> usize {
        self.sg.num_relations()
    }

    pub fn fact_triples(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.sg
            .facts
            .iter()
            .map(|f| (f.head, f.relation, f.tail))
    }
}

/// All per-step tensors of one forward pass, alive as long as its tape.
pub struct ModelState<'t> {
    /// `p^(0)..p^(n)`, each `[n_e]`, nonnegative, summing to 1.
    pub p_steps: Vec<Var<'t>>,
    /// `E^(0)..E^(n)`, each `[n_e, d]`.
    pub entity_steps: Vec<Var<'t>>,
    /// `R^(0)..R^(n)`, each `[n_r, d]`.
    pub relation_steps: Vec<Var<'t>>,
    /// Adapted instructions `i^(1)..i^(n)`, each `[d]`.
    pub instructions: Vec<Var<'t>>,
    /// Step query vectors `q^(1)..q^(n)`, each `[d]`.
    pub queries: Vec<Var<'t>>,
    /// Word-attention rows per step, each `[l]`.
    pub word_attention: Vec<Var<'t>>,
    /// Dual-edge attention per step, `[n_r, n_r]`; `None` when dual
    /// propagation is off.
    pub dual_attention: Vec<Option<Var<'t>>>,
    pub encoding: QuestionEncoding<'t>,
}

impl<'t> ModelState<'t> {
    pub fn p_final(&self) -> Var<'t> {
        *self.p_steps.last().expect("at least p^(0)")
    }

    pub fn entity_final(&self) -> Var<'t> {
        *self.entity_steps.last().expect("at least E^(0)")
    }

    pub fn relation_final(&self) -> Var<'t> {
        *self.relation_steps.last().expect("at least R^(0)")
    }
}

/// Focal loss over the gold answers of a distribution:
/// `-(1/|A|) Σ_a (1 - p_a)^γ · ln(p_a + 1e-12)`.
pub fn focal_loss<'t>(p: Var<'t>, answers: &[usize], gamma: f64) -> Result<Var<'t>> {
    if answers.is_empty() {
        return Err(Error::EmptyAnswerSet);
    }
    let pa = p.select_rows(answers);
    let weight = pa.neg().add_scalar(1.0).pow_scalar(gamma);
    let log_p = pa.add_scalar(1e-12).ln();
    Ok(weight
        .mul(log_p)
        .sum_all()
        .scale(-1.0 / answers.len() as f64))
}

/// The reasoning network: holds the configuration and vocabulary sizes,
/// owns parameter layout, example preparation, and the forward pass.
#[derive(Debug, Clone)]
pub struct Reasoner {
    pub cfg: ModelConfig,
    pub sizes: VocabSizes,
}

impl Reasoner {
    pub fn new(cfg: ModelConfig, sizes: VocabSizes) -> Result<Self> {
        cfg.validate()?;
        Ok(Reasoner { cfg, sizes })
    }

    /// Rows of the relation embedding table (doubled when inverse facts
    /// are in play).
    fn relation_rows(&self) -> usize {
        if self.cfg.inverse_facts {
            self.sizes.relations * 2
        } else {
            self.sizes.relations
        }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let d = self.cfg.hidden;
        let mut specs = vec![ParamSpec::uniform(
            "encoder.token_embed",
            vec![self.sizes.tokens, d],
            d,
        )];
        for gate in ["z", "r", "n"] {
            specs.push(ParamSpec::uniform(format!("encoder.gru.w_{gate}"), vec![d, d], d));
            specs.push(ParamSpec::uniform(format!("encoder.gru.u_{gate}"), vec![d, d], d));
            specs.push(ParamSpec::zeros(format!("encoder.gru.b_{gate}"), vec![d]));
        }
        specs.push(ParamSpec::uniform("instr.w_alpha", vec![d, 1], d));
        for k in 0..self.cfg.steps {
            specs.push(ParamSpec::uniform(format!("instr.w_step{k}"), vec![2 * d, d], 2 * d));
            specs.push(ParamSpec::zeros(format!("instr.b_step{k}"), vec![d]));
        }
        specs.push(ParamSpec::uniform("primal.w_rel", vec![d, d], d));
        specs.extend(mlp_specs("primal.mlp", 2 * d, d, d));
        specs.push(ParamSpec::uniform("dual.w_att", vec![d, d], d));
        specs.push(ParamSpec::uniform("dual.w_merge", vec![2 * d, d], 2 * d));
        specs.push(ParamSpec::zeros("dual.b_merge", vec![d]));
        specs.push(ParamSpec::uniform("interact.w_rel", vec![2 * d, d], 2 * d));
        specs.push(ParamSpec::zeros("interact.b_rel", vec![d]));
        specs.push(ParamSpec::uniform("interact.w_head", vec![d, d], d));
        specs.push(ParamSpec::uniform("interact.w_tail", vec![d, d], d));
        specs.extend(mlp_specs("interact.mlp", 2 * d, d, d));
        specs.extend(mlp_specs("decode.mlp", d, d, 1));
        specs.push(ParamSpec::uniform("adapt.w_merge", vec![4 * d, d], 4 * d));
        specs.push(ParamSpec::uniform("adapt.gate_w", vec![d, d], d));
        specs.push(ParamSpec::uniform("adapt.gate_u", vec![d, d], d));
        specs.push(ParamSpec::zeros("adapt.gate_b", vec![d]));
        specs.push(ParamSpec::uniform(
            "embed.relation",
            vec![self.relation_rows(), d],
            d,
        ));
        match self.cfg.entity_init {
            EntityInit::RelationDerived => {
                specs.push(ParamSpec::uniform("embed.entity_proj", vec![d, d], d));
            }
            EntityInit::Lookup => {
                specs.push(ParamSpec::uniform(
                    "embed.entity",
                    vec![self.sizes.entities, d],
                    d,
                ));
            }
        }
        specs
    }

    pub fn init_params(&self, seed: u64) -> Result<ParameterStore> {
        ParameterStore::from_specs(&self.param_specs(), seed)
    }

    /// Build the per-question structures: local subgraph (inverse facts
    /// added unless disabled), dual graph, answer mapping, index arrays.
    pub fn prepare(&self, ex: &IndexedExample) -> Result<PreparedExample> {
        let raw = SubGraph::from_triples(&ex.triples, &ex.topics, self.sizes.relations)?;
        let raw_entities = raw.num_entities();
        let raw_facts = raw.facts.len();
        let raw_relations = raw.num_relations();
        let sg = if self.cfg.inverse_facts {
            raw.add_inverse_facts()?
        } else {
            raw
        };
        if sg.facts.is_empty() {
            return Err(Error::EmptySubgraph);
        }
        let dual = build_dual_graph(&sg, self.cfg.dual_edges)?;
        let n_e = sg.num_entities();
        let n_r = sg.num_relations();

        let local_of: std::collections::HashMap<usize, usize> = sg
            .entities
            .iter()
            .enumerate()
            .map(|(i, &g)| (g, i))
            .collect();
        let answer_set: BTreeSet<usize> = ex
            .answers
            .iter()
            .filter_map(|a| local_of.get(a).copied())
            .collect();
        let answers: Vec<usize> = answer_set.into_iter().collect();

        let fact_heads: Vec<usize> = sg.facts.iter().map(|f| f.head).collect();
        let fact_rels: Vec<usize> = sg.facts.iter().map(|f| f.relation).collect();
        let fact_tails: Vec<usize> = sg.facts.iter().map(|f| f.tail).collect();

        let mut rel_counts = vec![0usize; n_r];
        for &r in &fact_rels {
            rel_counts[r] += 1;
        }
        let rel_inv_counts = rel_counts
            .iter()
            .map(|&c| if c == 0 { 0.0 } else { 1.0 / c as f64 })
            .collect();

        let pair_arrays = |role_head: bool| {
            let mut pairs = BTreeSet::new();
            for f in &sg.facts {
                let e = if role_head { f.head } else { f.tail };
                pairs.insert((e, f.relation));
            }
            let mut counts = vec![0usize; n_e];
            for &(e, _) in &pairs {
                counts[e] += 1;
            }
            let ents: Vec<usize> = pairs.iter().map(|&(e, _)| e).collect();
            let rels: Vec<usize> = pairs.iter().map(|&(_, r)| r).collect();
            let inv: Vec<f64> = counts
                .iter()
                .map(|&c| if c == 0 { 0.0 } else { 1.0 / c as f64 })
                .collect();
            (ents, rels, inv)
        };
        let (head_pair_ents, head_pair_rels, head_inv_counts) = pair_arrays(true);
        let (tail_pair_ents, tail_pair_rels, tail_inv_counts) = pair_arrays(false);

        let mut incident = BTreeSet::new();
        for f in &sg.facts {
            incident.insert((f.head, f.relation));
            incident.insert((f.tail, f.relation));
        }
        let mut incident_counts = vec![0usize; n_e];
        for &(e, _) in &incident {
            incident_counts[e] += 1;
        }
        let incident_pair_ents: Vec<usize> = incident.iter().map(|&(e, _)| e).collect();
        let incident_pair_rels: Vec<usize> = incident.iter().map(|&(_, r)| r).collect();
        let incident_inv_counts: Vec<f64> = incident_counts
            .iter()
            .map(|&c| if c == 0 { 0.0 } else { 1.0 / c as f64 })
            .collect();

        let mut mask = vec![-1e30; n_r * n_r];
        for (i, neigh) in dual.neighbors.iter().enumerate() {
            for &j in neigh {
                mask[i * n_r + j] = 0.0;
            }
        }
        let attention_mask = Tensor::matrix(n_r, n_r, mask);

        let weights = cooccurrence_weights(&dual);
        let mut cooc = vec![0.0; n_r * n_r];
        for (i, neigh) in dual.neighbors.iter().enumerate() {
            let total: f64 = neigh.iter().map(|&j| weights[&(i, j)]).sum();
            for &j in neigh {
                cooc[i * n_r + j] = weights[&(i, j)] / total;
            }
        }
        let cooc_matrix = Tensor::matrix(n_r, n_r, cooc);

        let mut p0 = vec![0.0; n_e];
        for &t in &sg.topics {
            p0[t] = 1.0 / sg.topics.len() as f64;
        }
        let p0 = Tensor::vector(p0);

        Ok(PreparedExample {
            tokens: ex.tokens.clone(),
            sg,
            dual,
            answers,
            raw_entities,
            raw_facts,
            raw_relations,
            fact_heads,
            fact_rels,
            fact_tails,
            rel_inv_counts,
            head_pair_ents,
            head_pair_rels,
            head_inv_counts,
            tail_pair_ents,
            tail_pair_rels,
            tail_inv_counts,
            incident_pair_ents,
            incident_pair_rels,
            incident_inv_counts,
            attention_mask,
            cooc_matrix,
            p0,
        })
    }

    /// Run the full iterative reasoning loop. Per step, in order:
    /// instruction generation, primal reasoning, dual propagation,
    /// entity-aware relation update, relation-aware entity update,
    /// decoding, instruction adaption.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        params: &BoundParams<'t>,
        ex: &PreparedExample,
    ) -> Result<ModelState<'t>> {
        if ex.sg.topics.is_empty() {
            return Err(Error::NoTopicEntities());
        }
        let d = self.cfg.hidden;
        let encoding = encode_question(tape, params, &ex.tokens, d)?;
        let q = encoding.summary;

        let r0 = params.get("embed.relation").select_rows(&ex.sg.relations);
        let e0 = match self.cfg.entity_init {
            EntityInit::RelationDerived => {
                let projected = r0.matmul(params.get("embed.entity_proj"));
                projected
                    .select_rows(&ex.incident_pair_rels)
                    .scatter_add_rows(&ex.incident_pair_ents, ex.num_entities())
                    .scale_rows(tape.constant(Tensor::vector(ex.incident_inv_counts.clone())))
            }
            EntityInit::Lookup => params.get("embed.entity").select_rows(&ex.sg.entities),
        };
        let p0 = tape.constant(ex.p0.clone());

        let mut state = ModelState {
            p_steps: vec![p0],
            entity_steps: vec![e0],
            relation_steps: vec![r0],
            instructions: Vec::new(),
            queries: Vec::new(),
            word_attention: Vec::new(),
            dual_attention: Vec::new(),
            encoding,
        };

        let mut i_prev = q;
        for k in 0..self.cfg.steps {
            let p_prev = *state.p_steps.last().expect("p exists");
            let e_prev = *state.entity_steps.last().expect("E exists");
            let r_prev = *state.relation_steps.last().expect("R exists");

            let (i_k, q_k, alpha) =
                self.generate_instruction(tape, params, k, q, i_prev, state.encoding.words);
            let e_tilde = self.primal_reason_step(tape, params, ex, i_k, p_prev, e_prev, r_prev);
            let (r_tilde, dual_att) = self.dual_propagate(tape, params, ex, r_prev);
            let r_new = self.entity_aware_relation_update(tape, params, ex, e_prev, r_tilde);
            let e_new = self.relation_aware_entity_update(tape, params, ex, r_new, e_tilde);
            let p_new = self.decode(params, ex, e_new);
            let i_adapted = self.adapt_instruction(tape, params, ex, i_k, e_new);

            state.p_steps.push(p_new);
            state.entity_steps.push(e_new);
            state.relation_steps.push(r_new);
            state.instructions.push(i_adapted);
            state.queries.push(q_k);
            state.word_attention.push(alpha);
            state.dual_attention.push(dual_att);
            i_prev = i_adapted;
        }
        Ok(state)
    }

    /// `q^(k) = W^(k)[q; i^(k-1)] + b^(k)`, word attention over
    /// `W_α(q^(k) ⊙ h_j)`, instruction as the attention-weighted sum.
    fn generate_instruction<'t>(
        &self,
        tape: &'t Tape,
        params: &BoundParams<'t>,
        k: usize,
        q: Var<'t>,
        i_prev: Var<'t>,
        words: Var<'t>,
    ) -> (Var<'t>, Var<'t>, Var<'t>) {
        let w_step = params.get(&format!("instr.w_step{k}"));
        let b_step = params.get(&format!("instr.b_step{k}"));
        let q_k = tape.concat(0, &[q, i_prev]).matmul(w_step).add(b_step);
        let l = words.shape()[0];
        let logits = words
            .mul_row(q_k)
            .matmul(params.get("instr.w_alpha"))
            .reshape(vec![l]);
        let alpha = logits.softmax();
        let i_k = alpha.matmul(words);
        (i_k, q_k, alpha)
    }

    /// Matching vectors `m = σ(i ⊙ W_R r)` per relation, neighbor
    /// aggregation weighted by `p^(k-1)` of the fact tail, then the
    /// update MLP over `[e^(k-1); ê]`.
    fn primal_reason_step<'t>(
        &self,
        tape: &'t Tape,
        params: &BoundParams<'t>,
        ex: &PreparedExample,
        i_k: Var<'t>,
        p_prev: Var<'t>,
        e_prev: Var<'t>,
        r_prev: Var<'t>,
    ) -> Var<'t> {
        let m_rel = r_prev
            .matmul(params.get("primal.w_rel"))
            .mul_row(i_k)
            .sigmoid();
        let e_hat = m_rel
            .select_rows(&ex.fact_rels)
            .scale_rows(p_prev.select_rows(&ex.fact_tails))
            .scatter_add_rows(&ex.fact_heads, ex.num_entities());
        mlp(params, "primal.mlp", tape.concat(1, &[e_prev, e_hat]))
    }

    /// Neighbor aggregation on the dual graph. Attention mode scores
    /// pairs bilinearly and softmaxes over the neighbor set; co-occurrence
    /// mode uses the frozen normalized Jaccard weights; off passes
    /// relations through.
    fn dual_propagate<'t>(
        &self,
        tape: &'t Tape,
        params: &BoundParams<'t>,
        ex: &PreparedExample,
        r_prev: Var<'t>,
    ) -> (Var<'t>, Option<Var<'t>>) {
        let att = match self.cfg.dual_mode {
            DualMode::Off => return (r_prev, None),
            DualMode::Attention => {
                let logits = r_prev
                    .matmul(params.get("dual.w_att"))
                    .matmul(r_prev.transpose());
                logits.add(tape.constant(ex.attention_mask.clone())).softmax()
            }
            DualMode::Cooccurrence => tape.constant(ex.cooc_matrix.clone()),
        };
        let r_hat = att.matmul(r_prev);
        let merged = tape
            .concat(1, &[r_hat, r_prev])
            .matmul(params.get("dual.w_merge"))
            .add_row(params.get("dual.b_merge"))
            .sigmoid();
        (merged, Some(att))
    }

    /// TransE-style head/tail differences averaged per relation, merged
    /// with the propagated relation embedding.
    fn entity_aware_relation_update<'t>(
        &self,
        tape: &'t Tape,
        params: &BoundParams<'t>,
        ex: &PreparedExample,
        e_prev: Var<'t>,
        r_tilde: Var<'t>,
    ) -> Var<'t> {
        if !self.cfg.interaction {
            return r_tilde;
        }
        let e_fact = e_prev
            .select_rows(&ex.fact_tails)
            .sub(e_prev.select_rows(&ex.fact_heads));
        let r_hat = e_fact
            .scatter_add_rows(&ex.fact_rels, ex.num_relations())
            .scale_rows(tape.constant(Tensor::vector(ex.rel_inv_counts.clone())));
        tape.concat(1, &[r_hat, r_tilde])
            .matmul(params.get("interact.w_rel"))
            .add_row(params.get("interact.b_rel"))
            .sigmoid()
    }

    /// Role-specific projections of incident relations, averaged per
    /// role (an empty role contributes zero), merged with the primal
    /// update through the entity MLP and a logistic squash.
    fn relation_aware_entity_update<'t>(
        &self,
        tape: &'t Tape,
        params: &BoundParams<'t>,
        ex: &PreparedExample,
        r_new: Var<'t>,
        e_tilde: Var<'t>,
    ) -> Var<'t> {
        if !self.cfg.interaction {
            return e_tilde;
        }
        let n_e = ex.num_entities();
        let head_part = r_new
            .matmul(params.get("interact.w_head"))
            .select_rows(&ex.head_pair_rels)
            .scatter_add_rows(&ex.head_pair_ents, n_e)
            .scale_rows(tape.constant(Tensor::vector(ex.head_inv_counts.clone())));
        let tail_part = r_new
            .matmul(params.get("interact.w_tail"))
            .select_rows(&ex.tail_pair_rels)
            .scatter_add_rows(&ex.tail_pair_ents, n_e)
            .scale_rows(tape.constant(Tensor::vector(ex.tail_inv_counts.clone())));
        let e_hat = head_part.add(tail_part);
        mlp(params, "interact.mlp", tape.concat(1, &[e_hat, e_tilde])).sigmoid()
    }

    /// Scalar logit per entity through the decoder MLP, softmaxed into a
    /// distribution.
    fn decode<'t>(
        &self,
        params: &BoundParams<'t>,
        ex: &PreparedExample,
        e_new: Var<'t>,
    ) -> Var<'t> {
        mlp(params, "decode.mlp", e_new)
            .reshape(vec![ex.num_entities()])
            .softmax()
    }

    /// Gate the instruction toward a topic-entity summary:
    /// `h = W_i [i; h_e; i-h_e; i⊙h_e]`, `g` from a recurrent update
    /// gate with input `h` and state `i`, `i <- (1-g)⊙i + g⊙h`.
    fn adapt_instruction<'t>(
        &self,
        tape: &'t Tape,
        params: &BoundParams<'t>,
        ex: &PreparedExample,
        i_k: Var<'t>,
        e_new: Var<'t>,
    ) -> Var<'t> {
        let h_e = e_new.select_rows(&ex.sg.topics).sum_axis(0);
        let h = tape
            .concat(0, &[i_k, h_e, i_k.sub(h_e), i_k.mul(h_e)])
            .matmul(params.get("adapt.w_merge"));
        let g = h
            .matmul(params.get("adapt.gate_w"))
            .add(i_k.matmul(params.get("adapt.gate_u")))
            .add(params.get("adapt.gate_b"))
            .sigmoid();
        i_k.add(g.mul(h.sub(i_k)))
    }
}

fn mlp_specs(prefix: &str, input: usize, hidden: usize, output: usize) -> Vec<ParamSpec> {
    vec![
        ParamSpec::uniform(format!("{prefix}_w1"), vec![input, hidden], input),
        ParamSpec::zeros(format!("{prefix}_b1"), vec![hidden]),
        ParamSpec::uniform(format!("{prefix}_w2"), vec![hidden, output], hidden),
        ParamSpec::zeros(format!("{prefix}_b2"), vec![output]),
    ]
}

/// One ReLU hidden layer, linear output.
fn mlp<'t>(params: &BoundParams<'t>, prefix: &str, x: Var<'t>) -> Var<'t> {
    x.matmul(params.get(&format!("{prefix}_w1")))
        .add_row(params.get(&format!("{prefix}_b1")))
        .relu()
        .matmul(params.get(&format!("{prefix}_w2")))
        .add_row(params.get(&format!("{prefix}_b2")))
}
