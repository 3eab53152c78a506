use std::collections::{BTreeMap, HashMap, HashSet};

use super::{ConfusionCounts, MatchConfig};
use crate::corpus::GroundTruthLabel;
use crate::cwe::CweId;
use crate::sast::Finding;

/// Which findings and truth labels were paired.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatchResult {
    /// `(finding index, truth index)` pairs.
    pub pairs: Vec<(usize, usize)>,
    /// Findings that could never match (no line, or no CWE when one is
    /// required).
    pub unresolved: Vec<usize>,
    pub unmatched_findings: Vec<usize>,
    pub unmatched_truth: Vec<usize>,
}

impl MatchResult {
    pub fn counts(&self, cfg: &MatchConfig) -> ConfusionCounts {
        let unresolved = if cfg.unresolved_line_is_fp {
            self.unresolved.len()
        } else {
            0
        };
        ConfusionCounts::new(
            self.pairs.len() as u64,
            (self.unmatched_findings.len() + unresolved) as u64,
            self.unmatched_truth.len() as u64,
        )
    }
}

fn resolved(f: &Finding, cfg: &MatchConfig) -> bool {
    f.line.is_some() && (!cfg.require_cwe || f.cwe.is_some())
}

fn eligible(f: &Finding, t: &GroundTruthLabel, cfg: &MatchConfig) -> Option<u32> {
    let line = f.line?;
    if cfg.require_cwe && f.cwe != Some(t.cwe) {
        return None;
    }
    let dist = line.abs_diff(t.line);
    (dist <= cfg.line_tolerance).then_some(dist)
}

/// One-to-one greedy matching within each file.
///
/// Candidate pairs are taken in order of line distance, then truth line,
/// truth CWE, finding line and finding CWE.
pub fn match_detail(findings: &[Finding], truth: &[GroundTruthLabel], cfg: &MatchConfig) -> MatchResult {
    let mut by_file: HashMap<&str, (Vec<usize>, Vec<usize>)> = HashMap::new();
    let mut out = MatchResult::default();
    for (i, f) in findings.iter().enumerate() {
        if resolved(f, cfg) {
            by_file.entry(f.file_id.as_str()).or_default().0.push(i);
        } else {
            out.unresolved.push(i);
        }
    }
    for (j, t) in truth.iter().enumerate() {
        by_file.entry(t.file_id.as_str()).or_default().1.push(j);
    }

    let mut files: Vec<_> = by_file.into_iter().collect();
    files.sort_unstable_by(|a, b| a.0.cmp(b.0));
    for (_, (fs, ts)) in files {
        let mut cands = Vec::new();
        for &i in &fs {
            for &j in &ts {
                if let Some(d) = eligible(&findings[i], &truth[j], cfg) {
                    let (f, t) = (&findings[i], &truth[j]);
                    cands.push(((d, t.line, t.cwe, f.line, f.cwe), i, j));
                }
            }
        }
        cands.sort_unstable();
        let mut f_used = HashSet::new();
        let mut t_used = HashSet::new();
        for (_, i, j) in cands {
            if !f_used.contains(&i) && !t_used.contains(&j) {
                f_used.insert(i);
                t_used.insert(j);
                out.pairs.push((i, j));
            }
        }
        out.unmatched_findings
            .extend(fs.iter().copied().filter(|i| !f_used.contains(i)));
        out.unmatched_truth
            .extend(ts.iter().copied().filter(|j| !t_used.contains(j)));
    }
    out.pairs.sort_unstable();
    out.unmatched_findings.sort_unstable();
    out.unmatched_truth.sort_unstable();
    out
}

/// TP/FP/FN for `findings` against `truth`. TN is never populated.
pub fn match_findings(
    findings: &[Finding],
    truth: &[GroundTruthLabel],
    cfg: &MatchConfig,
) -> ConfusionCounts {
    match_detail(findings, truth, cfg).counts(cfg)
}

/// Counts split by CWE. TP and FN go to the truth label's CWE, FP to the
/// finding's (possibly absent) CWE, so the rows sum to the overall counts.
pub fn match_by_cwe(
    findings: &[Finding],
    truth: &[GroundTruthLabel],
    cfg: &MatchConfig,
) -> BTreeMap<Option<CweId>, ConfusionCounts> {
    let detail = match_detail(findings, truth, cfg);
    let mut out: BTreeMap<Option<CweId>, ConfusionCounts> = BTreeMap::new();
    for &(_, j) in &detail.pairs {
        out.entry(Some(truth[j].cwe)).or_default().tp += 1;
    }
    for &j in &detail.unmatched_truth {
        out.entry(Some(truth[j].cwe)).or_default().fn_ += 1;
    }
    let fp_sources = detail
        .unmatched_findings
        .iter()
        .chain(detail.unresolved.iter().filter(|_| cfg.unresolved_line_is_fp));
    for &i in fp_sources {
        out.entry(findings[i].cwe).or_default().fp += 1;
    }
    out
}
