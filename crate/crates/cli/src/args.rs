use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use sast_triage::{CasePolicy, ExperimentId, Mode, RunConfig, ToolSpec};

#[derive(Debug, Parser)]
#[command(
    name = "sast-triage",
    version,
    about = "Score SAST tools and a chat model against a line-labeled corpus"
)]
pub struct Cli {
    /// More log output; repeat for debug. RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the config and the corpus without writing anything.
    Validate(RunArgs),
    /// Run or ingest the SAST tools into a run directory.
    Scan(RunArgs),
    /// Send every experiment's prompts for an existing run.
    Ask(RunArgs),
    /// Score archived reports and transcripts of an existing run.
    Score(RunArgs),
    /// scan, ask and score in one go.
    Run(RunArgs),
    /// Rewrite tables.csv, tables.md and per_cwe.csv from metrics.jsonl.
    Report(ReportArgs),
}

/// Flags override the TOML config, which overrides the defaults.
#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML config; relative paths in it are resolved against its directory.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Corpus manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Parent directory for run directories.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run directory name; needed to resume with `ask` or `score`.
    #[arg(long)]
    pub run_id: Option<String>,
    /// e.g. `bandit,semgrep:report.json,sonarqube:export.json,sarif:x.sarif`.
    #[arg(long, value_delimiter = ',')]
    pub tools: Option<Vec<ToolSpec>>,
    /// Experiment numbers, e.g. `1,2,3,4`.
    #[arg(long, value_delimiter = ',')]
    pub experiments: Option<Vec<ExperimentId>>,
    /// Experiment 3 policies, e.g. `1,2`.
    #[arg(long, value_delimiter = ',')]
    pub cases: Option<Vec<CasePolicy>>,
    /// live, replay or passthrough.
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Replay store directory.
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub line_tolerance: Option<u32>,
    /// Score every source with (true) or without (false) the CWE.
    #[arg(long, value_name = "BOOL")]
    pub require_cwe: Option<bool>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub workers: Option<usize>,
}

impl RunArgs {
    pub fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = &self.$flag { cfg.$($field).+ = v.clone(); })*
            };
        }
        set!(
            manifest => manifest,
            out => out,
            tools => tools,
            experiments => experiments,
            cases => cases,
            mode => llm.mode,
            store => llm.store,
            seed => seed,
            line_tolerance => line_tolerance,
            top_k => top_k,
            model => llm.model,
            temperature => llm.temperature,
            workers => workers,
        );
        if self.run_id.is_some() {
            cfg.run_id = self.run_id.clone();
        }
        if self.require_cwe.is_some() {
            cfg.require_cwe = self.require_cwe;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// A run directory containing metrics.jsonl.
    pub run_dir: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub top_k: usize,
}
