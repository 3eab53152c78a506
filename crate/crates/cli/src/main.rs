mod args;

use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::Parser;
use sast_triage::pipeline::{self, default_transport};
use sast_triage::report::{regenerate, TABLES_MD};
use sast_triage::{Pipeline, RunArtifact, RunConfig};
use tracing_subscriber::EnvFilter;

use args::{Cli, Command};

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

fn print_tables(dir: &Path) -> Result<()> {
    let path = dir.join(TABLES_MD);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    print!("{text}");
    Ok(())
}

/// `ask` and `score` continue a run that `scan` started.
fn existing_run(cfg: RunConfig, verb: &str) -> Result<Pipeline> {
    let Some(id) = &cfg.run_id else {
        bail!("{verb} works on an existing run; pass --run-id");
    };
    let dir = cfg.out.join(id);
    if !dir.is_dir() {
        bail!("run directory {} does not exist", dir.display());
    }
    Ok(Pipeline::open(cfg)?)
}

fn finish(artifact: &RunArtifact) -> Result<()> {
    if !artifact.events.is_empty() {
        eprintln!(
            "{} file-level event(s) logged in {}",
            artifact.events.len(),
            artifact.dir.join(pipeline::PARSE_FAILURES_LOG).display()
        );
    }
    eprintln!("run {} written to {}", artifact.run_id, artifact.dir.display());
    print_tables(&artifact.dir)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match cli.command {
        Command::Validate(a) => {
            let cfg = a.config()?;
            let v = pipeline::validate(&cfg)?;
            println!(
                "{} files, {} labels, {} distinct CWEs",
                v.files, v.labels, v.distinct_cwes
            );
            for m in &v.mismatches {
                println!("{}: declared {}, observed {}", m.cwe, m.declared, m.observed);
            }
            if !v.mismatches.is_empty() {
                bail!(
                    "{} CWE count(s) differ from the declared distribution",
                    v.mismatches.len()
                );
            }
        }
        Command::Scan(a) => {
            let p = Pipeline::open(a.config()?)?;
            let summary = p.scan()?;
            for r in &summary.records {
                println!("{}\t{}\t{}", r.tool, r.raw_output_digest, r.invocation);
            }
            eprintln!("run {} written to {}", p.run_id(), p.dir().display());
        }
        Command::Ask(a) => {
            let cfg = a.config()?;
            let transport = default_transport(&cfg)?;
            let p = existing_run(cfg, "ask")?;
            let s = p.ask(transport)?;
            println!(
                "answered {}, skipped {}, failed {}, live calls {}",
                s.answered, s.skipped, s.failed, s.live_calls
            );
        }
        Command::Score(a) => {
            let p = existing_run(a.config()?, "score")?;
            finish(&p.score()?)?;
        }
        Command::Run(a) => {
            let cfg = a.config()?;
            let transport = default_transport(&cfg)?;
            finish(&sast_triage::run_pipeline(cfg, transport)?)?;
        }
        Command::Report(a) => {
            regenerate(&a.run_dir, a.top_k)?;
            print_tables(&a.run_dir)?;
        }
    }
    Ok(())
}
