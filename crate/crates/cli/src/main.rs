//! Command-line interface: synthetic data generation, training,
//! evaluation, ablations, gradient verification, and attention dumps.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 gradient
//! verification failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use kbqa_core::{
    data, metrics::QuantileKey, model::VocabSizes, quantile_report, tiny_instance, train,
    Dataset, DualMode, EntityInit, ModelConfig, ParameterStore, PreparedExample, Reasoner,
    SynthConfig, Tape, TrainConfig,
};

#[derive(Parser)]
#[command(name = "kbqa", version, about = "Dual/primal graph reasoning for multi-hop KBQA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-hop QA dataset (train/dev/test JSONL plus manifest).
    GenData(GenDataArgs),
    /// Train a model and write checkpoint, config, and report.
    Train(TrainArgs),
    /// Evaluate a trained run on one split.
    Eval(EvalArgs),
    /// Train the full model and the three ablations, print the comparison.
    Ablate(AblateArgs),
    /// Verify reverse-mode gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Write per-question word and dual-edge attention as JSON.
    DumpAttention(DumpAttentionArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DualModeArg {
    Attention,
    Cooc,
    Off,
}

impl From<DualModeArg> for DualMode {
    fn from(v: DualModeArg) -> Self {
        match v {
            DualModeArg::Attention => DualMode::Attention,
            DualModeArg::Cooc => DualMode::Cooccurrence,
            DualModeArg::Off => DualMode::Off,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum EntityInitArg {
    RelationDerived,
    Lookup,
}

impl From<EntityInitArg> for EntityInit {
    fn from(v: EntityInitArg) -> Self {
        match v {
            EntityInitArg::RelationDerived => EntityInit::RelationDerived,
            EntityInitArg::Lookup => EntityInit::Lookup,
        }
    }
}

#[derive(Args, Clone)]
struct ModelFlags {
    /// Reasoning steps n.
    #[arg(long, default_value_t = 3)]
    steps: usize,
    /// Hidden size d.
    #[arg(long, default_value_t = 128)]
    hidden: usize,
    /// Focal loss exponent.
    #[arg(long, default_value_t = 2.0)]
    gamma: f64,
    /// Dual-graph weighting.
    #[arg(long, value_enum, default_value_t = DualModeArg::Attention)]
    dual_mode: DualModeArg,
    /// Dual/primal interaction.
    #[arg(long, value_enum, default_value_t = OnOff::On)]
    interaction: OnOff,
    /// Step-0 entity embeddings.
    #[arg(long, value_enum, default_value_t = EntityInitArg::RelationDerived)]
    entity_init: EntityInitArg,
}

impl ModelFlags {
    fn to_config(&self) -> ModelConfig {
        ModelConfig {
            hidden: self.hidden,
            steps: self.steps,
            gamma: self.gamma,
            entity_init: self.entity_init.into(),
            dual_mode: self.dual_mode.into(),
            interaction: matches!(self.interaction, OnOff::On),
            ..ModelConfig::default()
        }
    }
}

#[derive(Args, Clone)]
struct TrainFlags {
    /// Adam learning rate.
    #[arg(long, default_value_t = 7e-4)]
    lr: f64,
    /// Mini-batch size.
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Evaluate the dev split every this many epochs.
    #[arg(long, default_value_t = 1)]
    eval_every: usize,
    /// Evaluations without improvement before stopping.
    #[arg(long, default_value_t = 10)]
    patience: usize,
    /// Answer-selection threshold.
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    /// Gradient clipping norm; 0 disables.
    #[arg(long, default_value_t = 1.0)]
    clip_norm: f64,
}

impl TrainFlags {
    fn to_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch,
            lr: self.lr,
            epochs: self.epochs,
            seed: self.seed,
            eval_every: self.eval_every,
            patience: self.patience,
            tau: self.tau,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
            checkpoint: None,
        }
    }
}

#[derive(Args)]
struct GenDataArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 40)]
    entities: usize,
    #[arg(long, default_value_t = 8)]
    relations: usize,
    #[arg(long, default_value_t = 80)]
    facts: usize,
    #[arg(long, default_value_t = 2)]
    hops: usize,
    #[arg(long, default_value_t = 0.3)]
    constraint_prob: f64,
    #[arg(long, default_value_t = 500)]
    train: usize,
    #[arg(long, default_value_t = 100)]
    dev: usize,
    #[arg(long, default_value_t = 100)]
    test: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pair relations as exact inverses (dual-propagation stress).
    #[arg(long)]
    stress: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory (train/dev/test JSONL).
    #[arg(long)]
    data: PathBuf,
    /// Run directory for checkpoint, config, and report.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct EvalArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Override the answer-selection threshold from the run config.
    #[arg(long)]
    tau: Option<f64>,
    /// Print the metrics as JSON instead of tables.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Number of seeds to average over (seeds 0..n).
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    /// Optional JSON output path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 8)]
    hidden: usize,
    #[arg(long, default_value_t = 2)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    tolerance: f64,
    #[arg(long, default_value_t = 1e-5)]
    fd_step: f64,
}

#[derive(Args)]
struct DumpAttentionArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "dev")]
    split: String,
    /// Output JSON path.
    #[arg(long)]
    out: PathBuf,
    /// Dump at most this many questions.
    #[arg(long)]
    limit: Option<usize>,
}

/// Run configuration persisted next to the checkpoint so `eval` and
/// `dump-attention` can rebuild the model.
#[derive(Serialize, Deserialize)]
struct RunConfig {
    model: ModelConfig,
    train: TrainConfig,
}

struct CliError {
    code: u8,
    err: anyhow::Error,
}

impl CliError {
    fn data(err: anyhow::Error) -> Self {
        CliError { code: 2, err }
    }

    fn usage(err: anyhow::Error) -> Self {
        CliError { code: 1, err }
    }
}

/// Core errors about bad configuration are usage errors; everything else
/// that bubbles up here is a data problem.
fn classify(err: kbqa_core::Error) -> CliError {
    match &err {
        kbqa_core::Error::InvalidConfig(_) => CliError::usage(err.into()),
        _ => CliError::data(err.into()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // help/version requests are not usage errors
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(CliError { code, err }) => {
            eprintln!("error: {err:#}");
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::GenData(args) => gen_data(args),
        Command::Train(args) => train_cmd(args),
        Command::Eval(args) => eval_cmd(args),
        Command::Ablate(args) => ablate_cmd(args),
        Command::Gradcheck(args) => gradcheck_cmd(args),
        Command::DumpAttention(args) => dump_attention_cmd(args),
    }
}

fn gen_data(args: GenDataArgs) -> Result<u8, CliError> {
    let config = SynthConfig {
        entities: args.entities,
        relation_types: args.relations,
        facts: args.facts,
        hops: args.hops,
        constraint_prob: args.constraint_prob,
        train: args.train,
        dev: args.dev,
        test: args.test,
        seed: args.seed,
        co_relation_stress: args.stress,
        ..SynthConfig::default()
    };
    let dataset = data::generate(&config).map_err(classify)?;
    dataset.write_dir(&args.out).map_err(classify)?;
    println!(
        "wrote {} train / {} dev / {} test questions to {}",
        dataset.train.len(),
        dataset.dev.len(),
        dataset.test.len(),
        args.out.display()
    );
    Ok(0)
}

fn load_dataset(dir: &Path) -> Result<Dataset, CliError> {
    Dataset::load_dir(dir).map_err(classify)
}

fn train_cmd(args: TrainArgs) -> Result<u8, CliError> {
    let dataset = load_dataset(&args.data)?;
    let mcfg = args.model.to_config();
    let mut tcfg = args.train.to_config();
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .map_err(CliError::data)?;
    let ckpt = args.out.join("model.ckpt");
    tcfg.checkpoint = Some(ckpt.clone());

    let outcome = train(&dataset, &mcfg, &tcfg).map_err(classify)?;
    outcome.best_params.save(&ckpt).map_err(classify)?;
    std::fs::write(args.out.join("report.jsonl"), outcome.report_jsonl())
        .map_err(|e| CliError::data(e.into()))?;
    let run_config = RunConfig {
        model: mcfg,
        train: tcfg,
    };
    std::fs::write(
        args.out.join("config.json"),
        serde_json::to_string_pretty(&run_config).expect("config serializes"),
    )
    .map_err(|e| CliError::data(e.into()))?;

    println!(
        "trained {} epochs (best at {}), dev Hits@1 {:.3} F1 {:.3}",
        outcome.report.len(),
        outcome.best_epoch,
        outcome.best_dev.hits_at_1,
        outcome.best_dev.f1
    );
    if outcome.skipped_examples > 0 {
        println!(
            "skipped {} train questions with no in-subgraph answer",
            outcome.skipped_examples
        );
    }
    println!("run written to {}", args.out.display());
    Ok(0)
}

fn load_run(run: &Path) -> Result<(RunConfig, ParameterStore), CliError> {
    let config_path = run.join("config.json");
    let raw = std::fs::read_to_string(&config_path)
        .with_context(|| format!("reading {}", config_path.display()))
        .map_err(CliError::data)?;
    let config: RunConfig = serde_json::from_str(&raw)
        .with_context(|| format!("parsing {}", config_path.display()))
        .map_err(CliError::data)?;
    let params = ParameterStore::load(run.join("model.ckpt")).map_err(classify)?;
    Ok((config, params))
}

fn eval_cmd(args: EvalArgs) -> Result<u8, CliError> {
    let dataset = load_dataset(&args.data)?;
    let (config, params) = load_run(&args.run)?;
    let tau = args.tau.unwrap_or(config.train.tau);
    let report =
        kbqa_core::evaluate_split(&dataset, &config.model, &params, &args.split, tau)
            .map_err(classify)?;

    let quantiles: Vec<_> = QuantileKey::ALL
        .iter()
        .map(|&key| quantile_report(&report.per_question, key))
        .collect::<Result<_, _>>()
        .map_err(classify)?;

    if args.json {
        let payload = serde_json::json!({
            "split": args.split,
            "tau": tau,
            "questions": report.questions,
            "hits_at_1": report.hits_at_1,
            "f1": report.f1,
            "transe_score": report.transe_score,
            "quantiles": quantiles,
        });
        println!("{}", serde_json::to_string_pretty(&payload).expect("json"));
    } else {
        println!(
            "{} split: {} questions (tau = {tau})",
            args.split, report.questions
        );
        println!("Hits@1       {:.3}", report.hits_at_1);
        println!("F1           {:.3}", report.f1);
        println!("TransE-score {:.3}", report.transe_score);
        println!();
        for q in &quantiles {
            println!("{}", q.render());
        }
    }
    Ok(0)
}

fn ablate_cmd(args: AblateArgs) -> Result<u8, CliError> {
    let dataset = load_dataset(&args.data)?;
    let mcfg = args.model.to_config();
    let tcfg = args.train.to_config();
    let seeds: Vec<u64> = (0..args.seeds).collect();
    let table = kbqa_core::run_ablation(&dataset, &mcfg, &tcfg, &seeds).map_err(classify)?;
    print!("{}", table.render());
    let full = table.variant("full").expect("full variant present");
    let no_dual = table
        .variant("-dual propagation")
        .expect("dual ablation present");
    println!(
        "full vs -dual propagation mean F1: {:.3} vs {:.3}",
        full.mean_f1, no_dual.mean_f1
    );
    if let Some(out) = args.out {
        std::fs::write(
            &out,
            serde_json::to_string_pretty(&table).expect("table serializes"),
        )
        .map_err(|e| CliError::data(e.into()))?;
        println!("ablation table written to {}", out.display());
    }
    Ok(0)
}

fn gradcheck_cmd(args: GradcheckArgs) -> Result<u8, CliError> {
    let (reasoner, params, ex) =
        tiny_instance(args.hidden, args.steps, args.seed).map_err(classify)?;
    let report =
        kbqa_core::gradient_check(&reasoner, &params, &ex, args.tolerance, args.fd_step)
            .map_err(classify)?;
    print!("{}", report.render());
    Ok(if report.pass { 0 } else { 3 })
}

fn dump_attention_cmd(args: DumpAttentionArgs) -> Result<u8, CliError> {
    let dataset = load_dataset(&args.data)?;
    let (config, params) = load_run(&args.run)?;
    let sizes = VocabSizes {
        tokens: dataset.vocab.tokens.len(),
        entities: dataset.vocab.entities.len(),
        relations: dataset.vocab.relations.len(),
    };
    let reasoner = Reasoner::new(config.model, sizes).map_err(classify)?;
    let split = dataset.split(&args.split).map_err(classify)?;
    let limit = args.limit.unwrap_or(split.len());

    let mut questions = Vec::new();
    for ex in split.iter().take(limit) {
        let prepared: PreparedExample = reasoner.prepare(ex).map_err(classify)?;
        let tape = Tape::new();
        let bound = tape.bind(&params);
        let state = reasoner.forward(&tape, &bound, &prepared).map_err(classify)?;

        let tokens: Vec<&str> = ex
            .tokens
            .iter()
            .map(|&t| dataset.vocab.tokens.name(t))
            .collect();
        let rel_names: Vec<String> = prepared
            .sg
            .relations
            .iter()
            .map(|&rid| dataset.vocab.relation_name(rid))
            .collect();

        let mut steps = Vec::new();
        for k in 0..state.word_attention.len() {
            let word_attention = state.word_attention[k].value().data().to_vec();
            let dual_attention: Option<BTreeMap<String, BTreeMap<String, f64>>> =
                state.dual_attention[k].as_ref().map(|att| {
                    let att = att.value();
                    prepared
                        .dual
                        .neighbors
                        .iter()
                        .enumerate()
                        .map(|(i, neigh)| {
                            let row: BTreeMap<String, f64> = neigh
                                .iter()
                                .map(|&j| (rel_names[j].clone(), att.row(i)[j]))
                                .collect();
                            (rel_names[i].clone(), row)
                        })
                        .collect()
                });
            steps.push(serde_json::json!({
                "step": k + 1,
                "word_attention": word_attention,
                "dual_attention": dual_attention,
            }));
        }
        questions.push(serde_json::json!({
            "question_tokens": tokens,
            "steps": steps,
        }));
    }
    std::fs::write(
        &args.out,
        serde_json::to_string_pretty(&questions).expect("attention dump serializes"),
    )
    .map_err(|e| CliError::data(e.into()))?;
    println!(
        "wrote attention for {} questions to {}",
        questions.len(),
        args.out.display()
    );
    Ok(0)
}
