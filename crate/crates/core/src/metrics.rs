//! Evaluation metrics: Hits@1, set F1, the TransE alignment score, and
//! the quantile-group analysis over per-question records.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ModelState, PreparedExample, Reasoner};
use crate::tensor::{ParameterStore, Tape, Tensor};

/// 1 when the argmax entity is a gold answer, else 0. Ties break toward
/// the lowest entity id.
pub fn hits_at_1(p: &[f64], answers: &[usize]) -> Result<u32> {
    if answers.is_empty() {
        return Err(Error::EmptyAnswerSet);
    }
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    Ok(answers.contains(&best) as u32)
}

/// Harmonic mean of precision and recall over answer sets; 0 when the
/// prediction is empty.
pub fn f1(predicted: &[usize], answers: &[usize]) -> f64 {
    if predicted.is_empty() {
        return 0.0;
    }
    let hit = predicted.iter().filter(|e| answers.contains(e)).count() as f64;
    if hit == 0.0 {
        return 0.0;
    }
    let precision = hit / predicted.len() as f64;
    let recall = hit / answers.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Entities scoring at least `tau * max(p)`, ascending by id.
pub fn select_answers(p: &[f64], tau: f64) -> Vec<usize> {
    let max = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let cutoff = tau * max;
    p.iter()
        .enumerate()
        .filter(|(_, &v)| v >= cutoff)
        .map(|(i, _)| i)
        .collect()
}

/// Mean over facts of `|<r, e_tail - e_head>|` normalized by the hidden
/// size: how well relation embeddings align with head/tail differences.
pub fn transe_score(
    entities: &Tensor,
    relations: &Tensor,
    facts: impl Iterator<Item = (usize, usize, usize)>,
) -> f64 {
    let d = entities.cols();
    let mut total = 0.0;
    let mut count = 0usize;
    for (head, rel, tail) in facts {
        let r = relations.row(rel);
        let eh = entities.row(head);
        let et = entities.row(tail);
        let inner: f64 = r
            .iter()
            .zip(et.iter().zip(eh))
            .map(|(ri, (ti, hi))| ri * (ti - hi))
            .sum();
        total += inner.abs();
        count += 1;
    }
    if count == 0 {
        return 0.0;
    }
    total / (count as f64 * d as f64)
}

/// Per-question evaluation record; the counts describe the question's
/// raw subgraph and feed the quantile analysis.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct QuestionRecord {
    pub hit: u32,
    pub f1: f64,
    pub transe: f64,
    pub entities: usize,
    pub facts: usize,
    pub relations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub questions: usize,
    pub hits_at_1: f64,
    pub f1: f64,
    pub transe_score: f64,
    pub per_question: Vec<QuestionRecord>,
}

/// Evaluate frozen parameters over prepared questions. Questions whose
/// gold answers fell outside the subgraph count as misses.
pub fn evaluate(
    reasoner: &Reasoner,
    params: &ParameterStore,
    examples: &[PreparedExample],
    tau: f64,
) -> Result<EvalReport> {
    let mut per_question = Vec::with_capacity(examples.len());
    for ex in examples {
        let tape = Tape::new();
        let bound = tape.bind(params);
        let state = reasoner.forward(&tape, &bound, ex)?;
        per_question.push(score_question(&state, ex, tau)?);
    }
    let n = per_question.len().max(1) as f64;
    Ok(EvalReport {
        questions: per_question.len(),
        hits_at_1: per_question.iter().map(|r| r.hit as f64).sum::<f64>() / n,
        f1: per_question.iter().map(|r| r.f1).sum::<f64>() / n,
        transe_score: per_question.iter().map(|r| r.transe).sum::<f64>() / n,
        per_question,
    })
}

pub fn score_question(
    state: &ModelState<'_>,
    ex: &PreparedExample,
    tau: f64,
) -> Result<QuestionRecord> {
    let p = state.p_final().value();
    let (hit, f1_score) = if ex.answers.is_empty() {
        (0, 0.0)
    } else {
        let predicted = select_answers(p.data(), tau);
        (
            hits_at_1(p.data(), &ex.answers)?,
            f1(&predicted, &ex.answers),
        )
    };
    let transe = transe_score(
        &state.entity_final().value(),
        &state.relation_final().value(),
        ex.fact_triples(),
    );
    Ok(QuestionRecord {
        hit,
        f1: f1_score,
        transe,
        entities: ex.raw_entities,
        facts: ex.raw_facts,
        relations: ex.raw_relations,
    })
}

/// Grouping key for the quantile analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum QuantileKey {
    RelationCount,
    FactCount,
    RelationEntityRatio,
    FactEntityRatio,
}

impl QuantileKey {
    pub const ALL: [QuantileKey; 4] = [
        QuantileKey::RelationCount,
        QuantileKey::FactCount,
        QuantileKey::RelationEntityRatio,
        QuantileKey::FactEntityRatio,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            QuantileKey::RelationCount => "relation count",
            QuantileKey::FactCount => "fact count",
            QuantileKey::RelationEntityRatio => "relation/entity ratio",
            QuantileKey::FactEntityRatio => "fact/entity ratio",
        }
    }

    fn value(&self, r: &QuestionRecord) -> f64 {
        match self {
            QuantileKey::RelationCount => r.relations as f64,
            QuantileKey::FactCount => r.facts as f64,
            QuantileKey::RelationEntityRatio => r.relations as f64 / r.entities.max(1) as f64,
            QuantileKey::FactEntityRatio => r.facts as f64 / r.entities.max(1) as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct QuantileGroup {
    pub count: usize,
    pub mean_f1: f64,
}

/// Four near-equal groups of questions split at the 0.25/0.5/0.75
/// quantiles of `key`, with mean F1 per group.
#[derive(Debug, Clone, Serialize)]
pub struct QuantileReport {
    pub key: QuantileKey,
    pub groups: [QuantileGroup; 4],
}

/// Sort questions by `key` (stable: ties keep input order, so a constant
/// key splits by question order) and cut into four groups whose sizes
/// differ by at most one, earliest groups taking the remainder.
pub fn quantile_report(records: &[QuestionRecord], key: QuantileKey) -> Result<QuantileReport> {
    if records.len() < 4 {
        return Err(Error::InvalidConfig(format!(
            "quantile report needs at least 4 questions, got {}",
            records.len()
        )));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        key.value(&records[a])
            .partial_cmp(&key.value(&records[b]))
            .expect("finite keys")
    });
    let n = records.len();
    let base = n / 4;
    let rem = n % 4;
    let mut groups = Vec::with_capacity(4);
    let mut start = 0;
    for g in 0..4 {
        let size = base + usize::from(g < rem);
        let slice = &order[start..start + size];
        let mean_f1 = slice.iter().map(|&i| records[i].f1).sum::<f64>() / size as f64;
        groups.push(QuantileGroup {
            count: size,
            mean_f1,
        });
        start += size;
    }
    Ok(QuantileReport {
        key,
        groups: groups.try_into().expect("exactly 4 groups"),
    })
}

impl QuantileReport {
    /// Aligned text table, one row of quantile bands and one of mean F1.
    pub fn render(&self) -> String {
        let mut out = format!("mean F1 by {} quantile\n", self.key.label());
        out.push_str("  quantile   0-0.25   0.25-0.5   0.5-0.75   0.75-1\n");
        out.push_str(&format!(
            "  mean F1    {:<8.3} {:<10.3} {:<10.3} {:<8.3}\n",
            self.groups[0].mean_f1,
            self.groups[1].mean_f1,
            self.groups[2].mean_f1,
            self.groups[3].mean_f1
        ));
        out
    }
}
