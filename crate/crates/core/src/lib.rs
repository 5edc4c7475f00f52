//! Requirement-satisfiability assessment for consent-based data processing.
//!
//! The crate holds the consent rubric, the corpus of app-store scenarios and
//! their specifications, prompt rendering, response parsing, chat backends and
//! the evaluation harness that ties them together.

pub mod corpus;
pub mod eval;
pub mod genpipe;
pub mod knowledge;
pub mod llm;
mod parallel;
pub mod promptkit;
pub mod seed;
pub mod template;
pub mod verdict;

pub use corpus::{
    cohens_kappa, load_corpus, load_ground_truth, sample_balanced, split_holdout, Corpus, CorpusError, DatasetSplit,
    GroundTruth, GroundTruthRecord, Label, Scenario, Specification, Store,
};
pub use eval::{
    compute_metrics, emit_report, run_experiment, ExperimentConfig, MetricsReport, ReportFormat, TrialKey, TrialRecord,
};
pub use genpipe::{run_pipeline, AppDescription, PipelineConfig, PracticeTriple};
pub use knowledge::{
    load_rubric, ConsentAssignment, FormulaLiteral, KnowledgeError, Requirement, RequirementId, Rubric,
    StatementPolarity,
};
pub use llm::{ChatBackend, ChatRequest, ChatResponse, LlmError, ModelParams, TranscriptRecord};
pub use promptkit::{Demonstration, PromptError, RenderedPrompt, TemplateId, TemplateKind, TemplateSet};
pub use template::{Template, TemplateError};
pub use verdict::{
    consistency_check, majority_vote, parse_response, Consistency, Extraction, MatchBuckets, Prediction, Verdict,
};
