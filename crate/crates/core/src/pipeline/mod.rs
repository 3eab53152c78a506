//! End-to-end runs over a run directory.
//!
//! ```text
//! runs/<run-id>/
//!   config.json           effective configuration
//!   raw/<tool>/           archived SAST reports plus record.meta
//!   transcripts/expN/     one JSON transcript per corpus file
//!   parse_failures.log    file<TAB>experiment<TAB>reason, sorted
//!   tables.csv tables.md metrics.jsonl per_cwe.csv
//!   meta.json             timestamps and counts
//! ```
//!
//! Each stage reads only what earlier stages archived, so `score` and
//! `report` can be rerun without tools or network.

mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    load_corpus, validate_distribution, Corpus, CorpusError, CorpusFile, DistributionMismatch,
};
use crate::cwe::{AliasError, AliasTable, CweId};
use crate::llm::{
    ChatRequest, HttpTransport, LlmClient, LlmError, Mode, OfflineTransport, ReplayStore, Transport,
    TransportKind,
};
use crate::protocol::{
    parse_response, to_findings, ExperimentId, ExperimentSpec, PromptBuilder, PromptSet, ProtocolError,
};
use crate::report::{emit_per_cwe_chart_data, emit_tables, Format, ReportError, ScoreTable};
use crate::sast::{
    archive_report, labels_per_file, normalize_to_corpus, read_archived_report, run_bandit, run_semgrep,
    Finding, SastError, Source, ToolConfig, ToolKind, ToolRunRecord,
};
use crate::scoring::{apply_case_policy, score_sources};

pub use config::{LlmSettings, RunConfig, ToolSettings, ToolSpec};

/// Findings grouped by the source that produced them.
pub type FindingsBySource = BTreeMap<Source, Vec<Finding>>;

pub const PARSE_FAILURES_LOG: &str = "parse_failures.log";
pub const META_JSON: &str = "meta.json";
pub const CONFIG_JSON: &str = "config.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Aliases(#[from] AliasError),
    #[error(transparent)]
    Sast(#[from] SastError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    BadArchive { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TranscriptStatus {
    Answered,
    Skipped,
    Failed,
}

/// The archived exchange for one file and experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub file_id: String,
    pub experiment: ExperimentId,
    /// Labels as listed in the prompt. For Exp3 these are also the labels
    /// Case 1 accepts.
    pub labels: Vec<CweId>,
    pub status: TranscriptStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transport: Option<TransportKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request: Option<ChatRequest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
}

/// A per-file problem that was recorded and skipped.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FileEvent {
    pub file_id: String,
    pub experiment: ExperimentId,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanSummary {
    pub records: Vec<ToolRunRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AskSummary {
    pub answered: usize,
    pub skipped: usize,
    pub failed: usize,
    pub live_calls: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounts {
    pub files: usize,
    pub labels: usize,
    pub findings_by_source: BTreeMap<String, usize>,
    pub findings_outside_corpus: usize,
    pub transcripts: usize,
    pub file_events: usize,
}

/// Run metadata. Kept apart from the data files because of its timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub model: String,
    pub mode: Mode,
    pub tables: Vec<(String, crate::scoring::MatchConfig)>,
    pub counts: RunCounts,
    pub tool_runs: Vec<ToolRunRecord>,
    pub generated_at: DateTime<Utc>,
    pub version: String,
}

#[derive(Debug, Clone)]
pub struct RunArtifact {
    pub run_id: String,
    pub dir: PathBuf,
    pub tables: Vec<ScoreTable>,
    pub events: Vec<FileEvent>,
    pub meta: RunMeta,
}

/// Result of `validate`: the corpus loads and matches its declared counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Validation {
    pub files: usize,
    pub labels: usize,
    pub distinct_cwes: usize,
    pub mismatches: Vec<DistributionMismatch>,
}

/// Checks the config and the corpus without creating a run directory.
pub fn validate(cfg: &RunConfig) -> Result<Validation, PipelineError> {
    cfg.validate()?;
    let corpus = load_corpus(&cfg.manifest)?;
    for t in &cfg.tools {
        let path = match t {
            ToolSpec::Bandit { report: Some(p) }
            | ToolSpec::Semgrep { report: Some(p) }
            | ToolSpec::SonarQube { export: p }
            | ToolSpec::Sarif { path: p } => p,
            _ => continue,
        };
        if !path.is_file() {
            return Err(PipelineError::Config(format!(
                "report {} does not exist",
                path.display()
            )));
        }
    }
    let mismatches = corpus
        .declared_distribution
        .as_ref()
        .map(|d| validate_distribution(&corpus.labels, d))
        .unwrap_or_default();
    Ok(Validation {
        files: corpus.files.len(),
        labels: corpus.labels.len(),
        distinct_cwes: corpus.truth_frequency().len(),
        mismatches,
    })
}

/// Transport for the configured mode: none for replay, HTTP otherwise.
pub fn default_transport(cfg: &RunConfig) -> Result<Arc<dyn Transport>, PipelineError> {
    if cfg.llm.mode == Mode::ReplayOnly {
        return Ok(Arc::new(OfflineTransport));
    }
    let t = HttpTransport::from_env(cfg.llm.api_key.clone(), Duration::from_secs(cfg.llm.timeout_secs))
        .map_err(PipelineError::Config)?;
    Ok(Arc::new(t))
}

fn transcript_name(file_id: &str) -> String {
    format!("{}.json", file_id.replace('/', "__"))
}

pub struct Pipeline {
    cfg: RunConfig,
    corpus: Corpus,
    aliases: AliasTable,
    prompts: PromptSet,
    run_id: String,
    dir: PathBuf,
}

impl Pipeline {
    /// Validates `cfg`, loads the corpus and creates the run directory.
    pub fn open(cfg: RunConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let corpus = load_corpus(&cfg.manifest)?;
        let mut aliases = AliasTable::builtin();
        if let Some(path) = &cfg.aliases {
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            aliases.extend_from_str(&text)?;
        }
        let prompts = match &cfg.prompts_dir {
            Some(dir) => PromptSet::load_dir(dir)?,
            None => PromptSet::builtin(),
        };
        let run_id = cfg.resolve_run_id(Utc::now());
        let dir = cfg.out.join(&run_id);
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let mut recorded = cfg.clone();
        recorded.run_id = Some(run_id.clone());
        write_json(&dir.join(CONFIG_JSON), &recorded)?;
        Ok(Self {
            cfg,
            corpus,
            aliases,
            prompts,
            run_id,
            dir,
        })
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    fn raw_dir(&self, tool: &ToolSpec) -> PathBuf {
        self.dir.join("raw").join(tool.archive_name())
    }

    fn transcript_path(&self, experiment: ExperimentId, file_id: &str) -> PathBuf {
        self.dir
            .join("transcripts")
            .join(experiment.key())
            .join(transcript_name(file_id))
    }

    fn pool(&self) -> Result<rayon::ThreadPool, PipelineError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.cfg.workers)
            .build()
            .map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Runs or ingests every configured tool and archives its raw report.
    pub fn scan(&self) -> Result<ScanSummary, PipelineError> {
        let corpus_dir = if self.corpus.root.as_os_str().is_empty() {
            PathBuf::from(".")
        } else {
            self.corpus.root.clone()
        };
        let settings = &self.cfg.tool_settings;
        let mut records = Vec::new();
        for tool in &self.cfg.tools {
            let (record, raw) = match tool {
                ToolSpec::Bandit { report: None } => {
                    let cfg = ToolConfig {
                        executable: settings.bandit_executable.clone(),
                        ..ToolConfig::bandit()
                    };
                    let run = run_bandit(&corpus_dir, &cfg)?;
                    (run.record, run.raw)
                }
                ToolSpec::Semgrep { report: None } => {
                    let cfg = ToolConfig {
                        executable: settings.semgrep_executable.clone(),
                        ruleset: Some(settings.semgrep_config.clone()),
                        ..ToolConfig::semgrep()
                    };
                    let run = run_semgrep(&corpus_dir, &cfg)?;
                    (run.record, run.raw)
                }
                ToolSpec::Bandit { report: Some(p) } => ingest(ToolKind::Bandit, p)?,
                ToolSpec::Semgrep { report: Some(p) } => ingest(ToolKind::Semgrep, p)?,
                ToolSpec::SonarQube { export } => ingest(ToolKind::SonarQube, export)?,
                ToolSpec::Sarif { path } => ingest(ToolKind::Sarif, path)?,
            };
            tracing::info!(tool = %tool, digest = %record.raw_output_digest, "archived report");
            archive_report(&self.raw_dir(tool), &record, &raw)?;
            records.push(record);
        }
        Ok(ScanSummary { records })
    }

    /// Findings from the archived reports, mapped onto corpus ids, plus the
    /// number of findings that fell outside the corpus.
    pub fn tool_findings(&self) -> Result<(FindingsBySource, Vec<ToolRunRecord>, usize), PipelineError> {
        let mut by_source: FindingsBySource = BTreeMap::new();
        let mut records = Vec::new();
        let mut dropped = 0;
        for tool in &self.cfg.tools {
            let dir = self.raw_dir(tool);
            let archived = read_archived_report(&dir)?;
            let (kept, lost) = normalize_to_corpus(archived.findings, &self.corpus);
            dropped += lost;
            if kept.is_empty() {
                // Keep a row for tools that found nothing.
                let source = match archived.record.tool {
                    ToolKind::Bandit => Some(Source::Bandit),
                    ToolKind::Semgrep => Some(Source::Semgrep),
                    ToolKind::SonarQube => Some(Source::SonarQube),
                    ToolKind::Sarif => None,
                };
                if let Some(s) = source {
                    by_source.entry(s).or_default();
                }
            }
            for f in kept {
                by_source.entry(f.source.clone()).or_default().push(f);
            }
            records.push(archived.record);
        }
        Ok((by_source, records, dropped))
    }

    fn labels_for(
        &self,
        experiment: ExperimentId,
        global: &[CweId],
        per_file: &BTreeMap<String, Vec<CweId>>,
        file: &CorpusFile,
    ) -> Vec<CweId> {
        match experiment {
            ExperimentId::Exp2 => global.to_vec(),
            ExperimentId::Exp3 => per_file.get(&file.id).cloned().unwrap_or_default(),
            _ => Vec::new(),
        }
    }

    fn ask_one(
        &self,
        client: &LlmClient,
        builder: &PromptBuilder,
        spec: &ExperimentSpec,
        file: &CorpusFile,
        labels: &[CweId],
    ) -> Result<Transcript, PipelineError> {
        let mut t = Transcript {
            file_id: file.id.clone(),
            experiment: spec.id,
            labels: crate::protocol::ordered_labels(spec, labels),
            status: TranscriptStatus::Skipped,
            reason: None,
            cache_key: None,
            transport: None,
            request: None,
            response: None,
        };
        if spec.id == ExperimentId::Exp3 && labels.is_empty() {
            t.reason = Some("no SAST labels for this file".into());
            return Ok(t);
        }
        let request = builder.build_prompt(spec, file, labels)?;
        match client.complete(&request) {
            Ok(ex) => {
                t.status = TranscriptStatus::Answered;
                t.cache_key = Some(ex.cache_key);
                t.transport = Some(ex.transport);
                t.response = Some(ex.response_text);
            }
            Err(e @ LlmError::AuthError(_)) => return Err(e.into()),
            Err(e) => {
                tracing::warn!(file = %file.id, experiment = %spec.id, error = %e, "model call failed");
                t.status = TranscriptStatus::Failed;
                t.reason = Some(format!("llm: {e}"));
            }
        }
        t.request = Some(request);
        Ok(t)
    }

    /// Sends every enabled experiment's prompt for every corpus file and
    /// archives one transcript each.
    pub fn ask(&self, transport: Arc<dyn Transport>) -> Result<AskSummary, PipelineError> {
        let llm = &self.cfg.llm;
        let client = LlmClient::new(transport, ReplayStore::new(&llm.store), llm.mode)
            .with_retry(llm.retry())
            .with_rate_limit(llm.rate_limit());
        let builder = PromptBuilder::new(self.prompts.clone(), llm.model.clone(), llm.temperature);
        let global: Vec<CweId> = self.corpus.truth_frequency().into_keys().collect();
        let per_file = if self.cfg.experiments.contains(&ExperimentId::Exp3) {
            labels_per_file(
                &self
                    .tool_findings()?
                    .0
                    .into_values()
                    .flatten()
                    .collect::<Vec<_>>(),
            )
        } else {
            BTreeMap::new()
        };
        let pool = self.pool()?;
        let mut summary = AskSummary::default();
        for &experiment in &self.cfg.experiments {
            let spec = ExperimentSpec::new(experiment).with_seed(self.cfg.seed);
            let dir = self.dir.join("transcripts").join(experiment.key());
            std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let transcripts: Vec<Transcript> = pool.install(|| {
                self.corpus
                    .files
                    .par_iter()
                    .map(|file| {
                        let labels = self.labels_for(experiment, &global, &per_file, file);
                        let t = self.ask_one(&client, &builder, &spec, file, &labels)?;
                        write_json(&self.transcript_path(experiment, &file.id), &t)?;
                        Ok(t)
                    })
                    .collect::<Result<_, PipelineError>>()
            })?;
            for t in &transcripts {
                match t.status {
                    TranscriptStatus::Answered => summary.answered += 1,
                    TranscriptStatus::Skipped => summary.skipped += 1,
                    TranscriptStatus::Failed => summary.failed += 1,
                }
                if t.transport == Some(TransportKind::Live) {
                    summary.live_calls += 1;
                }
            }
        }
        Ok(summary)
    }

    fn read_transcript(
        &self,
        experiment: ExperimentId,
        file_id: &str,
    ) -> Result<Option<Transcript>, PipelineError> {
        let path = self.transcript_path(experiment, file_id);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(source) => return Err(PipelineError::Io { path, source }),
        };
        serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| PipelineError::BadArchive {
                path,
                message: e.to_string(),
            })
    }

    /// Model findings per source from the archived transcripts.
    pub fn llm_findings(&self) -> Result<(FindingsBySource, Vec<FileEvent>, usize), PipelineError> {
        let mut by_source: FindingsBySource = BTreeMap::new();
        let mut events = Vec::new();
        let mut transcripts = 0;
        for &experiment in &self.cfg.experiments {
            let sources: Vec<Source> = if experiment == ExperimentId::Exp3 {
                self.cfg
                    .cases
                    .iter()
                    .map(|&c| Source::Llm {
                        experiment,
                        case: Some(c),
                    })
                    .collect()
            } else {
                vec![Source::Llm {
                    experiment,
                    case: None,
                }]
            };
            for s in &sources {
                by_source.entry(s.clone()).or_default();
            }
            for file in &self.corpus.files {
                let event = |reason: String| FileEvent {
                    file_id: file.id.clone(),
                    experiment,
                    reason,
                };
                let Some(t) = self.read_transcript(experiment, &file.id)? else {
                    events.push(event("no transcript".into()));
                    continue;
                };
                transcripts += 1;
                let response = match (t.status, &t.response) {
                    (TranscriptStatus::Answered, Some(r)) => r,
                    _ => {
                        let reason = t.reason.clone().unwrap_or_else(|| "no response".into());
                        events.push(event(reason));
                        continue;
                    }
                };
                let raws = match parse_response(response, experiment) {
                    Ok(r) => r,
                    Err(e) => {
                        events.push(event(format!("parse: {e}")));
                        continue;
                    }
                };
                let findings = to_findings(&raws, file, experiment, &self.aliases);
                if experiment == ExperimentId::Exp3 {
                    for &case in &self.cfg.cases {
                        let kept = apply_case_policy(&findings, &t.labels, case);
                        let source = Source::Llm {
                            experiment,
                            case: Some(case),
                        };
                        by_source
                            .entry(source.clone())
                            .or_default()
                            .extend(kept.into_iter().map(|f| Finding {
                                source: source.clone(),
                                ..f
                            }));
                    }
                } else {
                    by_source.entry(sources[0].clone()).or_default().extend(findings);
                }
            }
        }
        events.sort();
        Ok((by_source, events, transcripts))
    }

    /// Table names and match rules for this run.
    fn table_plan(&self) -> Vec<(String, bool)> {
        if let Some(b) = self.cfg.require_cwe {
            let name = if b { "labeled" } else { "binary" };
            return vec![(name.into(), b)];
        }
        let exps = &self.cfg.experiments;
        let has_binary = exps.iter().any(|e| !e.is_labeled());
        let has_labeled = exps.iter().any(|e| e.is_labeled());
        let mut plan = Vec::new();
        if has_binary || !has_labeled {
            plan.push(("binary".into(), false));
        }
        if has_labeled || !has_binary {
            plan.push(("labeled".into(), true));
        }
        plan
    }

    fn in_table(&self, source: &Source, require_cwe: bool) -> bool {
        match source {
            Source::Llm { experiment, .. } if self.cfg.require_cwe.is_none() => {
                experiment.is_labeled() == require_cwe
            }
            _ => true,
        }
    }

    /// Scores archived reports and transcripts and writes all report files.
    pub fn score(&self) -> Result<RunArtifact, PipelineError> {
        let (mut sources, tool_runs, dropped) = self.tool_findings()?;
        let (llm, events, transcripts) = self.llm_findings()?;
        sources.extend(llm);

        let tables: Vec<ScoreTable> = self
            .table_plan()
            .into_iter()
            .map(|(name, require_cwe)| {
                let selected: FindingsBySource = sources
                    .iter()
                    .filter(|(s, _)| self.in_table(s, require_cwe))
                    .map(|(s, f)| (s.clone(), f.clone()))
                    .collect();
                let cfg = self.cfg.match_config(require_cwe);
                ScoreTable {
                    name,
                    report: score_sources(&selected, &self.corpus.labels, &cfg),
                }
            })
            .collect();

        emit_tables(&tables, &self.dir, &Format::ALL)?;
        emit_per_cwe_chart_data(&tables, &self.dir, self.cfg.top_k)?;
        let log: String = events
            .iter()
            .map(|e| {
                format!(
                    "{}\t{}\t{}\n",
                    e.file_id,
                    e.experiment.key(),
                    e.reason.replace(['\t', '\n'], " ")
                )
            })
            .collect();
        let log_path = self.dir.join(PARSE_FAILURES_LOG);
        std::fs::write(&log_path, log).map_err(io_err(&log_path))?;

        let meta = RunMeta {
            run_id: self.run_id.clone(),
            config_hash: self.cfg.hash8(),
            seed: self.cfg.seed,
            model: self.cfg.llm.model.clone(),
            mode: self.cfg.llm.mode,
            tables: tables.iter().map(|t| (t.name.clone(), t.report.config)).collect(),
            counts: RunCounts {
                files: self.corpus.files.len(),
                labels: self.corpus.labels.len(),
                findings_by_source: sources.iter().map(|(s, f)| (s.to_string(), f.len())).collect(),
                findings_outside_corpus: dropped,
                transcripts,
                file_events: events.len(),
            },
            tool_runs,
            generated_at: Utc::now(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        };
        write_json(&self.dir.join(META_JSON), &meta)?;
        Ok(RunArtifact {
            run_id: self.run_id.clone(),
            dir: self.dir.clone(),
            tables,
            events,
            meta,
        })
    }
}

fn ingest(tool: ToolKind, path: &Path) -> Result<(ToolRunRecord, Vec<u8>), PipelineError> {
    let raw = std::fs::read(path).map_err(io_err(path))?;
    Ok((ToolRunRecord::ingested(tool, path, &raw), raw))
}

/// scan, ask and score in one go.
pub fn run_pipeline(cfg: RunConfig, transport: Arc<dyn Transport>) -> Result<RunArtifact, PipelineError> {
    let pipeline = Pipeline::open(cfg)?;
    if !pipeline.cfg.tools.is_empty() {
        pipeline.scan()?;
    }
    if !pipeline.cfg.experiments.is_empty() {
        let summary = pipeline.ask(transport)?;
        tracing::info!(?summary, "experiments done");
    }
    pipeline.score()
}
