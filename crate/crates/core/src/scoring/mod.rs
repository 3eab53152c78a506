//! Matching findings to ground truth and the precision/recall/F1 metrics.

mod matcher;
mod score;

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cwe::CweId;
use crate::sast::Finding;

pub use matcher::{match_by_cwe, match_detail, match_findings, MatchResult};
pub use score::{per_cwe_f1, score_sources, top_k, CweScore, ScoreReport, SourceScore};

/// Treatment of Exp3 answers naming CWEs outside the file's SAST labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CasePolicy {
    /// Drop them.
    Case1,
    /// Keep them.
    Case2,
}

impl CasePolicy {
    pub const ALL: [CasePolicy; 2] = [Self::Case1, Self::Case2];

    pub fn key(self) -> &'static str {
        match self {
            Self::Case1 => "case1",
            Self::Case2 => "case2",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Self::Case1 => "Case 1",
            Self::Case2 => "Case 2",
        }
    }
}

impl fmt::Display for CasePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Accepts `case1`, `Case 1` or `1`.
impl FromStr for CasePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let rest = t
            .get(..4)
            .filter(|p| p.eq_ignore_ascii_case("case"))
            .map_or(t, |_| t[4..].trim_start());
        match rest {
            "1" => Ok(Self::Case1),
            "2" => Ok(Self::Case2),
            _ => Err(format!("unknown case policy {s:?} (expected 1 or 2)")),
        }
    }
}

/// Case1 keeps findings whose CWE is in `allowed`; Case2 keeps everything.
/// Order is preserved.
pub fn apply_case_policy(findings: &[Finding], allowed: &[CweId], policy: CasePolicy) -> Vec<Finding> {
    match policy {
        CasePolicy::Case1 => findings
            .iter()
            .filter(|f| f.cwe.is_some_and(|c| allowed.contains(&c)))
            .cloned()
            .collect(),
        CasePolicy::Case2 => findings.to_vec(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MatchConfig {
    pub line_tolerance: u32,
    pub require_cwe: bool,
    /// Count findings that cannot match (no line, or no CWE when required)
    /// as false positives instead of ignoring them.
    pub unresolved_line_is_fp: bool,
}

impl MatchConfig {
    /// Line-only scoring.
    pub fn binary() -> Self {
        Self {
            line_tolerance: 0,
            require_cwe: false,
            unresolved_line_is_fp: true,
        }
    }

    /// CWE and line must both agree.
    pub fn labeled() -> Self {
        Self {
            require_cwe: true,
            ..Self::binary()
        }
    }
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self::labeled()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// No enumerable negatives exist here, so this stays `None`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tn: Option<u64>,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64) -> Self {
        Self {
            tp,
            fp,
            fn_,
            tn: None,
        }
    }
}

impl Add for ConfusionCounts {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        Self {
            tp: self.tp + rhs.tp,
            fp: self.fp + rhs.fp,
            fn_: self.fn_ + rhs.fn_,
            tn: match (self.tn, rhs.tn) {
                (None, None) => None,
                (a, b) => Some(a.unwrap_or(0) + b.unwrap_or(0)),
            },
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// tp + fp was 0 and precision was reported as 0.
    #[serde(default)]
    pub precision_degenerate: bool,
    /// tp + fn was 0 and recall was reported as 0.
    #[serde(default)]
    pub recall_degenerate: bool,
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    let denom = precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / denom
    }
}

fn ratio(num: u64, denom: u64) -> (f64, bool) {
    if denom == 0 {
        (0.0, true)
    } else {
        (num as f64 / denom as f64, false)
    }
}

impl MetricTriple {
    pub fn from_precision_recall(precision: f64, recall: f64) -> Self {
        Self {
            precision,
            recall,
            f1: f1_score(precision, recall),
            precision_degenerate: false,
            recall_degenerate: false,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.precision_degenerate || self.recall_degenerate
    }
}

/// Precision, recall and F1 from counts, with 0 for any 0/0.
pub fn metrics(counts: &ConfusionCounts) -> MetricTriple {
    let (precision, precision_degenerate) = ratio(counts.tp, counts.tp + counts.fp);
    let (recall, recall_degenerate) = ratio(counts.tp, counts.tp + counts.fn_);
    MetricTriple {
        precision,
        recall,
        f1: f1_score(precision, recall),
        precision_degenerate,
        recall_degenerate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sast::Source;

    fn cwe(n: u32) -> CweId {
        CweId::new(n).unwrap()
    }

    fn f(c: Option<u32>) -> Finding {
        Finding::new(Source::Bandit, "a.py", c.map(cwe), Some(1), "x")
    }

    #[test]
    fn case_policies() {
        let fs = vec![f(Some(78)), f(Some(89)), f(None)];
        let one = apply_case_policy(&fs, &[cwe(78)], CasePolicy::Case1);
        assert_eq!(one, vec![f(Some(78))]);
        assert_eq!(apply_case_policy(&fs, &[cwe(78)], CasePolicy::Case2), fs);
        assert!(apply_case_policy(&fs, &[], CasePolicy::Case1).is_empty());
    }

    #[test]
    fn case_parse() {
        for c in CasePolicy::ALL {
            assert_eq!(c.key().parse::<CasePolicy>().unwrap(), c);
            assert_eq!(c.display_name().parse::<CasePolicy>().unwrap(), c);
        }
        assert_eq!("2".parse::<CasePolicy>().unwrap(), CasePolicy::Case2);
        assert!("case3".parse::<CasePolicy>().is_err());
    }

    #[test]
    fn table_rows() {
        let cases = [(0.6694, 0.1504, 0.2457), (0.7413, 0.0819, 0.1475)];
        for (p, r, want) in cases {
            let got = MetricTriple::from_precision_recall(p, r).f1;
            assert!((got - want).abs() <= 0.0005, "{p} {r} -> {got}");
        }
    }

    #[test]
    fn zero_over_zero() {
        let m = metrics(&ConfusionCounts::default());
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert!(m.precision_degenerate && m.recall_degenerate);
        let m = metrics(&ConfusionCounts::new(0, 3, 0));
        assert!(!m.precision_degenerate && m.recall_degenerate);
    }

    #[test]
    fn counts_metrics() {
        let m = metrics(&ConfusionCounts::new(3, 1, 2));
        assert_eq!(m.precision, 0.75);
        assert_eq!(m.recall, 0.6);
        assert!((m.f1 - 2.0 * 0.75 * 0.6 / 1.35).abs() < 1e-12);
    }

    #[test]
    fn counts_serialize_fn_key() {
        let json = serde_json::to_string(&ConfusionCounts::new(1, 2, 3)).unwrap();
        assert_eq!(json, r#"{"tp":1,"fp":2,"fn":3}"#);
        let back: ConfusionCounts = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ConfusionCounts::new(1, 2, 3));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn f1_bounds(tp in 0u64..200, fp in 0u64..200, fn_ in 0u64..200) {
                let m = metrics(&ConfusionCounts::new(tp, fp, fn_));
                prop_assert!((0.0..=1.0).contains(&m.f1));
                prop_assert!(m.f1 <= 2.0 * m.precision.min(m.recall) + 1e-12);
                prop_assert!(m.f1 >= m.precision.min(m.recall) - 1e-12);
                prop_assert!(m.f1 <= m.precision.max(m.recall) + 1e-12);
            }

            #[test]
            fn case1_within_case2(cwes in prop::collection::vec(prop::option::of(1u32..8), 0..10),
                                  allowed in prop::collection::vec(1u32..8, 0..4)) {
                let fs: Vec<Finding> = cwes.into_iter().map(f).collect();
                let allowed: Vec<CweId> = allowed.into_iter().map(cwe).collect();
                let one = apply_case_policy(&fs, &allowed, CasePolicy::Case1);
                let two = apply_case_policy(&fs, &allowed, CasePolicy::Case2);
                prop_assert!(one.iter().all(|x| two.contains(x)));
            }
        }
    }
}
