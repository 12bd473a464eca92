//! Mini-batch training, checkpointing hooks, the finite-difference
//! gradient-verification harness, and the ablation/steps-sweep runners.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, IndexedExample};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport};
use crate::model::{focal_loss, DualMode, ModelConfig, PreparedExample, Reasoner, VocabSizes};
use crate::tensor::{AdamConfig, ParameterStore, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Evaluate the dev split every this many epochs.
    pub eval_every: usize,
    /// Stop after this many evaluations without a dev improvement.
    pub patience: usize,
    /// Answer-selection threshold used for dev/test F1.
    pub tau: f64,
    /// Clip the global L2 norm of each batch gradient to this value;
    /// `None` disables clipping. Focal loss spikes on near-zero answer
    /// probabilities otherwise blow up the recurrent stack.
    pub clip_norm: Option<f64>,
    /// When set, the best parameters are written here on every
    /// improvement.
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            lr: 7e-4,
            epochs: 100,
            seed: 0,
            eval_every: 1,
            patience: 10,
            tau: 0.5,
            clip_norm: Some(1.0),
            checkpoint: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be >= 1".into()));
        }
        // lr = 0 is allowed so a no-op pass stays observable in tests
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::InvalidConfig("learning rate must be finite and >= 0".into()));
        }
        if self.epochs == 0 || self.eval_every == 0 || self.patience == 0 {
            return Err(Error::InvalidConfig(
                "epochs, eval-every, and patience must be >= 1".into(),
            ));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::InvalidConfig("tau must be in (0, 1]".into()));
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return Err(Error::InvalidConfig("clip norm must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the training report.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_hits_at_1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_f1: Option<f64>,
}

pub struct TrainOutcome {
    pub report: Vec<EpochRecord>,
    /// Parameters at the best dev Hits@1 (ties broken by F1).
    pub best_params: ParameterStore,
    pub best_epoch: usize,
    pub best_dev: EvalReport,
    /// Train questions dropped because no gold answer was inside the
    /// subgraph.
    pub skipped_examples: usize,
}

impl TrainOutcome {
    pub fn report_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.report {
            out.push_str(&serde_json::to_string(record).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

/// Train on `dataset.train`, tracking dev metrics. Gradients of batch
/// members are accumulated sequentially into one Adam update; training
/// stops early after `patience` evaluations without improvement or when
/// the dev split is solved perfectly.
pub fn train(dataset: &Dataset, mcfg: &ModelConfig, tcfg: &TrainConfig) -> Result<TrainOutcome> {
    mcfg.validate()?;
    tcfg.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::EmptyDataset("train split".to_string()));
    }
    let sizes = VocabSizes {
        tokens: dataset.vocab.tokens.len(),
        entities: dataset.vocab.entities.len(),
        relations: dataset.vocab.relations.len(),
    };
    let reasoner = Reasoner::new(*mcfg, sizes)?;

    let mut skipped = 0usize;
    let mut train_set = Vec::with_capacity(dataset.train.len());
    for ex in &dataset.train {
        let prepared = reasoner.prepare(ex)?;
        if prepared.answers.is_empty() {
            skipped += 1;
        } else {
            train_set.push(prepared);
        }
    }
    if train_set.is_empty() {
        return Err(Error::EmptyDataset(
            "train split after dropping unanswerable questions".to_string(),
        ));
    }
    let dev_set: Vec<PreparedExample> = dataset
        .dev
        .iter()
        .map(|ex| reasoner.prepare(ex))
        .collect::<Result<_>>()?;

    let mut params = reasoner.init_params(tcfg.seed)?;
    let adam = AdamConfig {
        lr: tcfg.lr,
        ..AdamConfig::default()
    };
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(tcfg.seed.wrapping_add(0x5348_5546));

    let mut report = Vec::new();
    let mut best_params = params.clone();
    let mut best_epoch = 0usize;
    let mut best_dev: Option<EvalReport> = None;
    let mut evals_since_improvement = 0usize;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=tcfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(tcfg.batch_size) {
            let mut grad_sum: BTreeMap<String, Tensor> = BTreeMap::new();
            for &idx in batch {
                let ex = &train_set[idx];
                let tape = Tape::new();
                let bound = tape.bind(&params);
                let state = reasoner.forward(&tape, &bound, ex)?;
                let loss = focal_loss(state.p_final(), &ex.answers, mcfg.gamma)?;
                epoch_loss += loss.value().item();
                let grads = tape.backward(loss);
                for (name, grad) in grads.named(&bound) {
                    match grad_sum.get_mut(&name) {
                        Some(total) => {
                            for (t, g) in total.data_mut().iter_mut().zip(grad.data()) {
                                *t += g;
                            }
                        }
                        None => {
                            grad_sum.insert(name, grad);
                        }
                    }
                }
            }
            let mut scale = 1.0 / batch.len() as f64;
            if let Some(max_norm) = tcfg.clip_norm {
                let sq: f64 = grad_sum
                    .values()
                    .flat_map(|g| g.data())
                    .map(|g| (g * scale) * (g * scale))
                    .sum();
                let norm = sq.sqrt();
                if norm > max_norm {
                    scale *= max_norm / norm;
                }
            }
            for grad in grad_sum.values_mut() {
                for g in grad.data_mut() {
                    *g *= scale;
                }
            }
            params.adam_step(&grad_sum, &adam);
        }
        let train_loss = epoch_loss / train_set.len() as f64;

        let mut record = EpochRecord {
            epoch,
            train_loss,
            dev_hits_at_1: None,
            dev_f1: None,
        };
        let mut stop = false;
        if !dev_set.is_empty() && epoch % tcfg.eval_every == 0 {
            let dev = evaluate(&reasoner, &params, &dev_set, tcfg.tau)?;
            record.dev_hits_at_1 = Some(dev.hits_at_1);
            record.dev_f1 = Some(dev.f1);
            let improved = match &best_dev {
                None => true,
                Some(prev) => {
                    dev.hits_at_1 > prev.hits_at_1
                        || (dev.hits_at_1 == prev.hits_at_1 && dev.f1 > prev.f1)
                }
            };
            if improved {
                best_params = params.clone();
                best_epoch = epoch;
                if let Some(path) = &tcfg.checkpoint {
                    best_params.save(path)?;
                }
                evals_since_improvement = 0;
            } else {
                evals_since_improvement += 1;
            }
            let perfect = dev.hits_at_1 == 1.0 && dev.f1 == 1.0;
            if improved || best_dev.is_none() {
                best_dev = Some(dev);
            }
            if evals_since_improvement >= tcfg.patience || perfect {
                stop = true;
            }
        }
        report.push(record);
        if stop {
            break;
        }
    }

    // without a dev split the final parameters are the best we know of
    let best_dev = match best_dev {
        Some(dev) => dev,
        None => {
            best_params = params.clone();
            best_epoch = report.last().map(|r| r.epoch).unwrap_or(0);
            EvalReport {
                questions: 0,
                hits_at_1: 0.0,
                f1: 0.0,
                transe_score: 0.0,
                per_question: Vec::new(),
            }
        }
    };
    Ok(TrainOutcome {
        report,
        best_params,
        best_epoch,
        best_dev,
        skipped_examples: skipped,
    })
}

// ── Gradient verification harness ────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_abs_diff: f64,
    pub max_rel_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub entries: Vec<GradCheckEntry>,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn render(&self) -> String {
        let width = self
            .entries
            .iter()
            .map(|e| e.name.len())
            .max()
            .unwrap_or(9)
            .max(9);
        let mut out = format!("{:<width$}  {:>12}  {:>12}  result\n", "parameter", "max |diff|", "max rel err");
        for e in &self.entries {
            out.push_str(&format!(
                "{:<width$}  {:>12.3e}  {:>12.3e}  {}\n",
                e.name,
                e.max_abs_diff,
                e.max_rel_err,
                if e.pass { "ok" } else { "FAIL" }
            ));
        }
        out.push_str(&format!(
            "overall: {} (tolerance {:.1e})\n",
            if self.pass { "PASS" } else { "FAIL" },
            self.tolerance
        ));
        out
    }
}

/// Element-wise comparison of two gradient maps: a discrepancy passes
/// when it is under the 1e-8 absolute floor or within `tolerance`
/// relative to the larger magnitude.
pub fn compare_gradients(
    analytic: &BTreeMap<String, Tensor>,
    numeric: &BTreeMap<String, Tensor>,
    tolerance: f64,
) -> GradCheckReport {
    const ABS_FLOOR: f64 = 1e-8;
    let mut entries = Vec::new();
    for (name, a) in analytic {
        let n = &numeric[name];
        let mut max_abs = 0.0f64;
        let mut max_rel = 0.0f64;
        let mut pass = true;
        for (av, nv) in a.data().iter().zip(n.data()) {
            let diff = (av - nv).abs();
            let scale = av.abs().max(nv.abs());
            let rel = diff / scale.max(ABS_FLOOR);
            max_abs = max_abs.max(diff);
            max_rel = max_rel.max(rel);
            if diff > ABS_FLOOR && diff > tolerance * scale {
                pass = false;
            }
        }
        entries.push(GradCheckEntry {
            name: name.clone(),
            max_abs_diff: max_abs,
            max_rel_err: max_rel,
            pass,
        });
    }
    let pass = entries.iter().all(|e| e.pass);
    GradCheckReport {
        tolerance,
        entries,
        pass,
    }
}

/// Check reverse-mode gradients of `focal_loss ∘ forward` against central
/// finite differences (step `fd_step`) for every element of every
/// registered parameter.
pub fn gradient_check(
    reasoner: &Reasoner,
    params: &ParameterStore,
    ex: &PreparedExample,
    tolerance: f64,
    fd_step: f64,
) -> Result<GradCheckReport> {
    let loss_of = |store: &ParameterStore| -> Result<f64> {
        let tape = Tape::new();
        let bound = tape.bind(store);
        let state = reasoner.forward(&tape, &bound, ex)?;
        Ok(focal_loss(state.p_final(), &ex.answers, reasoner.cfg.gamma)?
            .value()
            .item())
    };

    let analytic = {
        let tape = Tape::new();
        tape.set_check_finite(true);
        let bound = tape.bind(params);
        let state = reasoner.forward(&tape, &bound, ex)?;
        let loss = focal_loss(state.p_final(), &ex.answers, reasoner.cfg.gamma)?;
        tape.backward(loss).named(&bound)
    };

    let mut numeric = BTreeMap::new();
    let mut work = params.clone();
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let count = params.get(&name).expect("named param").numel();
        let mut grad = vec![0.0; count];
        for i in 0..count {
            let original = params.get(&name).expect("named param").data()[i];
            work.value_mut(&name).expect("named param").data_mut()[i] = original + fd_step;
            let plus = loss_of(&work)?;
            work.value_mut(&name).expect("named param").data_mut()[i] = original - fd_step;
            let minus = loss_of(&work)?;
            work.value_mut(&name).expect("named param").data_mut()[i] = original;
            grad[i] = (plus - minus) / (2.0 * fd_step);
        }
        let shape = params.get(&name).expect("named param").shape().to_vec();
        numeric.insert(name, Tensor::new(shape, grad));
    }
    Ok(compare_gradients(&analytic, &numeric, tolerance))
}

/// Deterministic miniature instance for gradient verification: 5
/// entities, 3 base relation types, 2 topic entities, 6 facts.
pub fn tiny_instance(
    hidden: usize,
    steps: usize,
    seed: u64,
) -> Result<(Reasoner, ParameterStore, PreparedExample)> {
    use crate::graph::Triple;
    let cfg = ModelConfig {
        hidden,
        steps,
        ..ModelConfig::default()
    };
    let sizes = VocabSizes {
        tokens: 7,
        entities: 5,
        relations: 3,
    };
    let reasoner = Reasoner::new(cfg, sizes)?;
    let example = IndexedExample {
        tokens: vec![0, 3, 2, 5, 1],
        triples: vec![
            Triple::new(0, 0, 1),
            Triple::new(1, 1, 2),
            Triple::new(0, 2, 3),
            Triple::new(3, 0, 4),
            Triple::new(2, 2, 4),
            Triple::new(4, 1, 0),
        ],
        topics: vec![0, 3],
        answers: vec![2, 4],
    };
    let prepared = reasoner.prepare(&example)?;
    let params = reasoner.init_params(seed)?;
    Ok((reasoner, params, prepared))
}

// ── Ablation and reasoning-steps sweeps ───────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct VariantResult {
    pub name: String,
    pub per_seed_hits: Vec<f64>,
    pub per_seed_f1: Vec<f64>,
    pub mean_hits_at_1: f64,
    pub mean_f1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationTable {
    pub variants: Vec<VariantResult>,
}

impl AblationTable {
    pub fn variant(&self, name: &str) -> Option<&VariantResult> {
        self.variants.iter().find(|v| v.name == name)
    }

    pub fn render(&self) -> String {
        let mut out = format!("{:<26} {:>8} {:>8}\n", "model", "Hits@1", "F1");
        for v in &self.variants {
            out.push_str(&format!(
                "{:<26} {:>8.3} {:>8.3}\n",
                v.name, v.mean_hits_at_1, v.mean_f1
            ));
        }
        out
    }
}

pub const ABLATION_VARIANTS: [&str; 4] = [
    "full",
    "-dual propagation",
    "-interaction",
    "-attention (cooc)",
];

fn variant_config(base: &ModelConfig, name: &str) -> ModelConfig {
    let mut cfg = *base;
    match name {
        "full" => {}
        "-dual propagation" => cfg.dual_mode = DualMode::Off,
        "-interaction" => cfg.interaction = false,
        "-attention (cooc)" => cfg.dual_mode = DualMode::Cooccurrence,
        other => panic!("unknown ablation variant {other:?}"),
    }
    cfg
}

/// Train and test the full model and the three ablations, averaging test
/// metrics over `seeds`.
pub fn run_ablation(
    dataset: &Dataset,
    base_mcfg: &ModelConfig,
    base_tcfg: &TrainConfig,
    seeds: &[u64],
) -> Result<AblationTable> {
    let mut variants = Vec::new();
    for name in ABLATION_VARIANTS {
        let mcfg = variant_config(base_mcfg, name);
        let mut hits = Vec::with_capacity(seeds.len());
        let mut f1s = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let tcfg = TrainConfig {
                seed,
                checkpoint: None,
                ..base_tcfg.clone()
            };
            let outcome = train(dataset, &mcfg, &tcfg)?;
            let report = evaluate_split(dataset, &mcfg, &outcome.best_params, "test", tcfg.tau)?;
            hits.push(report.hits_at_1);
            f1s.push(report.f1);
        }
        let n = seeds.len() as f64;
        variants.push(VariantResult {
            name: name.to_string(),
            mean_hits_at_1: hits.iter().sum::<f64>() / n,
            mean_f1: f1s.iter().sum::<f64>() / n,
            per_seed_hits: hits,
            per_seed_f1: f1s,
        });
    }
    Ok(AblationTable { variants })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub steps: usize,
    pub test_hits_at_1: f64,
    pub test_f1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn render(&self) -> String {
        let mut out = format!("{:<10} {:>8} {:>8}\n", "model", "Hits@1", "F1");
        for row in &self.rows {
            out.push_str(&format!(
                "ours({})    {:>8.3} {:>8.3}\n",
                row.steps, row.test_hits_at_1, row.test_f1
            ));
        }
        out
    }
}

/// Train and test once per reasoning depth, holding everything else
/// fixed.
pub fn run_steps_sweep(
    dataset: &Dataset,
    base_mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    steps: &[usize],
) -> Result<SweepTable> {
    let mut rows = Vec::new();
    for &n in steps {
        let mcfg = ModelConfig {
            steps: n,
            ..*base_mcfg
        };
        let outcome = train(dataset, &mcfg, tcfg)?;
        let report = evaluate_split(dataset, &mcfg, &outcome.best_params, "test", tcfg.tau)?;
        rows.push(SweepRow {
            steps: n,
            test_hits_at_1: report.hits_at_1,
            test_f1: report.f1,
        });
    }
    Ok(SweepTable { rows })
}

/// Prepare and evaluate one named split of a dataset under frozen
/// parameters.
pub fn evaluate_split(
    dataset: &Dataset,
    mcfg: &ModelConfig,
    params: &ParameterStore,
    split: &str,
    tau: f64,
) -> Result<EvalReport> {
    let sizes = VocabSizes {
        tokens: dataset.vocab.tokens.len(),
        entities: dataset.vocab.entities.len(),
        relations: dataset.vocab.relations.len(),
    };
    let reasoner = Reasoner::new(*mcfg, sizes)?;
    let prepared: Vec<PreparedExample> = dataset
        .split(split)?
        .iter()
        .map(|ex| reasoner.prepare(ex))
        .collect::<Result<_>>()?;
    evaluate(&reasoner, params, &prepared, tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, index_examples, SynthConfig, Vocabularies};

    fn tiny_dataset() -> Dataset {
        let cfg = SynthConfig {
            entities: 10,
            relation_types: 3,
            facts: 20,
            hops: 1,
            constraint_prob: 0.0,
            train: 6,
            dev: 3,
            test: 3,
            seed: 77,
            ..SynthConfig::default()
        };
        let gen = generate(&cfg).unwrap();
        let mut vocab = Vocabularies::default();
        let train = index_examples(&gen.train, &mut vocab);
        let dev = index_examples(&gen.dev, &mut vocab);
        let test = index_examples(&gen.test, &mut vocab);
        Dataset {
            vocab,
            train,
            dev,
            test,
        }
    }

    fn small_model() -> ModelConfig {
        ModelConfig {
            hidden: 8,
            steps: 2,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_repeats_identical_losses() {
        let dataset = tiny_dataset();
        let tcfg = TrainConfig {
            lr: 0.0,
            epochs: 2,
            eval_every: 10,
            ..TrainConfig::default()
        };
        let outcome = train(&dataset, &small_model(), &tcfg).unwrap();
        assert_eq!(outcome.report.len(), 2);
        assert_eq!(outcome.report[0].train_loss, outcome.report[1].train_loss);
    }

    #[test]
    fn training_with_fixed_seed_is_reproducible() {
        let dataset = tiny_dataset();
        let tcfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let a = train(&dataset, &small_model(), &tcfg).unwrap();
        let b = train(&dataset, &small_model(), &tcfg).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.best_params, b.best_params);
    }

    #[test]
    fn single_example_loss_trends_down() {
        let mut dataset = tiny_dataset();
        dataset.train.truncate(1);
        dataset.dev.clear();
        let tcfg = TrainConfig {
            epochs: 20,
            batch_size: 1,
            ..TrainConfig::default()
        };
        let outcome = train(&dataset, &small_model(), &tcfg).unwrap();
        let losses: Vec<f64> = outcome.report.iter().map(|r| r.train_loss).collect();
        let violations = losses.windows(2).filter(|w| w[1] > w[0]).count();
        assert!(
            violations <= 2,
            "loss should trend down, got {violations} increases: {losses:?}"
        );
        assert!(losses.last().unwrap() < losses.first().unwrap());
    }

    #[test]
    fn empty_train_split_is_rejected() {
        let mut dataset = tiny_dataset();
        dataset.train.clear();
        assert!(matches!(
            train(&dataset, &small_model(), &TrainConfig::default()),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn default_train_config_matches_published_setup() {
        let tcfg = TrainConfig::default();
        assert_eq!(tcfg.batch_size, 8);
        assert_eq!(tcfg.lr, 7e-4);
        let mcfg = ModelConfig::default();
        assert_eq!(mcfg.steps, 3);
        assert_eq!(mcfg.hidden, 128);
    }

    #[test]
    fn empty_parameter_store_passes_gradient_comparison() {
        let report = compare_gradients(&BTreeMap::new(), &BTreeMap::new(), 1e-3);
        assert!(report.pass);
        assert!(report.entries.is_empty());
    }

    #[test]
    fn corrupted_gradient_is_reported_as_failure() {
        let make = |v: f64| {
            BTreeMap::from([("w".to_string(), Tensor::vector(vec![1.0, v]))])
        };
        let ok = compare_gradients(&make(2.0), &make(2.0), 1e-3);
        assert!(ok.pass);
        let bad = compare_gradients(&make(2.1), &make(2.0), 1e-3);
        assert!(!bad.pass);
        assert!(!bad.entries[0].pass);
    }

    #[test]
    fn tiny_instance_gradients_match_finite_differences() {
        let (reasoner, params, ex) = tiny_instance(4, 2, 123).unwrap();
        let report = gradient_check(&reasoner, &params, &ex, 1e-3, 1e-5).unwrap();
        assert!(report.pass, "\n{}", report.render());
    }

    #[test]
    fn checkpoint_round_trip_preserves_eval_metrics() {
        let dataset = tiny_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("best.ckpt");
        let tcfg = TrainConfig {
            epochs: 2,
            checkpoint: Some(path.clone()),
            ..TrainConfig::default()
        };
        let mcfg = small_model();
        let outcome = train(&dataset, &mcfg, &tcfg).unwrap();
        let loaded = ParameterStore::load(&path).unwrap();
        assert_eq!(outcome.best_params, loaded);
        let a = evaluate_split(&dataset, &mcfg, &outcome.best_params, "dev", 0.5).unwrap();
        let b = evaluate_split(&dataset, &mcfg, &loaded, "dev", 0.5).unwrap();
        assert_eq!(a.hits_at_1, b.hits_at_1);
        assert_eq!(a.f1, b.f1);
        assert_eq!(a.transe_score, b.transe_score);
    }
}
