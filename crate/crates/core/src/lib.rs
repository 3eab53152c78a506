//! Evaluation harness for comparing an LLM against SAST tools on a labeled
//! Python corpus.

pub mod corpus;
pub mod cwe;
pub mod llm;
pub mod pipeline;
pub mod protocol;
pub mod report;
pub mod sast;
pub mod scoring;

pub use corpus::{load_corpus, Corpus, CorpusFile, GroundTruthLabel, Origin};
pub use cwe::{parse_cwe, resolve_alias, AliasTable, CweId};
pub use llm::{ChatRequest, LlmClient, Mode, ReplayStore};
pub use pipeline::{run_pipeline, Pipeline, PipelineError, RunArtifact, RunConfig, ToolSpec};
pub use protocol::{ExperimentId, ExperimentSpec, PromptSet, RawModelFinding};
pub use report::ScoreTable;
pub use sast::{Finding, Source, ToolKind};
pub use scoring::{
    apply_case_policy, match_findings, metrics, CasePolicy, ConfusionCounts, MatchConfig, MetricTriple,
    ScoreReport,
};
