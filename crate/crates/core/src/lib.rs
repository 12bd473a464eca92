//! Iterative dual/primal graph reasoning for multi-hop knowledge-base QA.
//!
//! The pipeline: a question-specific subgraph of a knowledge graph (the
//! primal entity graph) is paired with a dual graph whose nodes are the
//! subgraph's relation types. A recurrent reasoner alternates primal
//! message passing under question-derived instructions, dual-graph
//! propagation, and dual/primal interaction, then decodes an answer
//! distribution over entities. Everything runs on an in-crate f64
//! autodiff tape so gradients can be verified against finite differences.

pub mod data;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod training;

pub use data::{
    dataset_stats, generate, index_examples, load_jsonl, save_jsonl, Dataset, IndexedExample,
    RawExample, SynthConfig, Vocabularies,
};
pub use error::{Error, Result};
pub use graph::{
    build_dual_graph, cooccurrence_weights, DualEdgeMode, DualGraph, KnowledgeGraph, SubGraph,
    Triple,
};
pub use metrics::{
    evaluate, f1, hits_at_1, quantile_report, select_answers, transe_score, EvalReport,
    QuantileKey, QuantileReport, QuestionRecord,
};
pub use model::{
    encode_question, focal_loss, DualMode, EntityInit, ModelConfig, ModelState, PreparedExample,
    QuestionEncoding, Reasoner, VocabSizes,
};
pub use tensor::{
    AdamConfig, BoundParams, Gradients, ParamInit, ParamSpec, ParameterStore, Tape, Tensor, Var,
};
pub use training::{
    compare_gradients, evaluate_split, gradient_check, run_ablation, run_steps_sweep,
    tiny_instance, train, AblationTable, EpochRecord, GradCheckReport, SweepTable, TrainConfig,
    TrainOutcome,
};
