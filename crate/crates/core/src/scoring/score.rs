use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{match_by_cwe, match_findings, metrics, ConfusionCounts, MatchConfig, MetricTriple};
use crate::corpus::{count_by_cwe, GroundTruthLabel};
use crate::cwe::CweId;
use crate::sast::{Finding, Source};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CweScore {
    /// `None` collects false positives that carry no CWE.
    pub cwe: Option<CweId>,
    pub truth_count: u64,
    pub counts: ConfusionCounts,
    pub metrics: MetricTriple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceScore {
    pub source: Source,
    pub counts: ConfusionCounts,
    pub metrics: MetricTriple,
    /// Empty unless the CWE is part of the match rule.
    pub per_cwe: Vec<CweScore>,
}

impl SourceScore {
    pub fn cwe(&self, cwe: CweId) -> Option<&CweScore> {
        self.per_cwe.iter().find(|c| c.cwe == Some(cwe))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub config: MatchConfig,
    pub truth_frequency: BTreeMap<CweId, u64>,
    /// In [`Source`] order.
    pub sources: Vec<SourceScore>,
}

impl ScoreReport {
    pub fn source(&self, source: &Source) -> Option<&SourceScore> {
        self.sources.iter().find(|s| &s.source == source)
    }

    pub fn top_k(&self, k: usize) -> Vec<CweId> {
        top_k(&self.truth_frequency, k)
    }
}

/// The `k` most frequent CWEs, ties broken by ascending CWE number.
pub fn top_k(frequency: &BTreeMap<CweId, u64>, k: usize) -> Vec<CweId> {
    let mut ranked: Vec<(CweId, u64)> = frequency.iter().map(|(&c, &n)| (c, n)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.into_iter().take(k).map(|(c, _)| c).collect()
}

/// Metrics per CWE present in either the truth or the findings. The CWE is
/// always part of the match rule here, whatever `cfg` says.
pub fn per_cwe_f1(
    findings: &[Finding],
    truth: &[GroundTruthLabel],
    cfg: &MatchConfig,
) -> BTreeMap<CweId, MetricTriple> {
    let cfg = MatchConfig {
        require_cwe: true,
        ..*cfg
    };
    match_by_cwe(findings, truth, &cfg)
        .into_iter()
        .filter_map(|(c, counts)| Some((c?, metrics(&counts))))
        .collect()
}

fn score_one(
    source: &Source,
    findings: &[Finding],
    truth: &[GroundTruthLabel],
    cfg: &MatchConfig,
    freq: &BTreeMap<CweId, u64>,
) -> SourceScore {
    let counts = match_findings(findings, truth, cfg);
    let per_cwe = if cfg.require_cwe {
        let mut by = match_by_cwe(findings, truth, cfg);
        for c in freq.keys() {
            by.entry(Some(*c)).or_default();
        }
        by.into_iter()
            .map(|(cwe, counts)| CweScore {
                cwe,
                truth_count: cwe.and_then(|c| freq.get(&c).copied()).unwrap_or(0),
                counts,
                metrics: metrics(&counts),
            })
            .collect()
    } else {
        Vec::new()
    };
    SourceScore {
        source: source.clone(),
        counts,
        metrics: metrics(&counts),
        per_cwe,
    }
}

/// Scores every source against the same truth under one config.
pub fn score_sources(
    findings: &BTreeMap<Source, Vec<Finding>>,
    truth: &[GroundTruthLabel],
    cfg: &MatchConfig,
) -> ScoreReport {
    let freq = count_by_cwe(truth);
    let sources: Vec<SourceScore> = findings
        .par_iter()
        .map(|(source, fs)| score_one(source, fs, truth, cfg, &freq))
        .collect();
    ScoreReport {
        config: *cfg,
        truth_frequency: freq,
        sources,
    }
}
