//! Experiment prompts and model-answer parsing.

mod prompt;
mod response;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::RequestError;

pub use prompt::{ordered_labels, render_prompt, PromptBuilder, PromptSet, CODE_SLOT, LABELS_SLOT};
pub use response::{
    extract_json_array, extract_quoted_lines, parse_response, resolve_line, to_findings, RawModelFinding,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentId {
    Exp1,
    Exp2,
    Exp3,
    Exp4,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 4] = [Self::Exp1, Self::Exp2, Self::Exp3, Self::Exp4];

    pub fn key(self) -> &'static str {
        match self {
            Self::Exp1 => "exp1",
            Self::Exp2 => "exp2",
            Self::Exp3 => "exp3",
            Self::Exp4 => "exp4",
        }
    }

    pub fn number(self) -> u8 {
        self.index() as u8 + 1
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }

    pub fn label_policy(self) -> LabelPolicy {
        match self {
            Self::Exp1 => LabelPolicy::NoLabels,
            Self::Exp2 => LabelPolicy::GlobalList,
            Self::Exp3 => LabelPolicy::PerFileList,
            Self::Exp4 => LabelPolicy::ModelKnowledge,
        }
    }

    /// Whether answers carry CWE labels worth scoring.
    pub fn is_labeled(self) -> bool {
        self != Self::Exp1
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Exp{}", self.number())
    }
}

/// Accepts `exp3`, `Exp3` or `3`.
impl FromStr for ExperimentId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let digits = t
            .get(..3)
            .filter(|p| p.eq_ignore_ascii_case("exp"))
            .map_or(t, |_| &t[3..]);
        match digits {
            "1" => Ok(Self::Exp1),
            "2" => Ok(Self::Exp2),
            "3" => Ok(Self::Exp3),
            "4" => Ok(Self::Exp4),
            _ => Err(format!("unknown experiment {s:?} (expected 1-4)")),
        }
    }
}

/// Where the candidate label list in a prompt comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelPolicy {
    NoLabels,
    /// Every CWE in the corpus.
    GlobalList,
    /// The CWEs the SAST tools reported for the file.
    PerFileList,
    ModelKnowledge,
}

impl LabelPolicy {
    pub fn takes_labels(self) -> bool {
        matches!(self, Self::GlobalList | Self::PerFileList)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub id: ExperimentId,
    pub label_policy: LabelPolicy,
    pub shuffle_seed: Option<u64>,
}

impl ExperimentSpec {
    pub fn new(id: ExperimentId) -> Self {
        Self {
            id,
            label_policy: id.label_policy(),
            shuffle_seed: None,
        }
    }

    /// Sets the label shuffle seed; only kept for Exp2.
    pub fn with_seed(mut self, seed: u64) -> Self {
        if self.id == ExperimentId::Exp2 {
            self.shuffle_seed = Some(seed);
        }
        self
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.label_policy != self.id.label_policy()
            || (self.shuffle_seed.is_some() && self.id != ExperimentId::Exp2)
        {
            return Err(ProtocolError::InconsistentSpec(*self));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("{0} needs a non-empty label list")]
    LabelsRequired(ExperimentId),
    #[error("{0} takes no label list")]
    LabelsForbidden(ExperimentId),
    #[error("inconsistent experiment spec {0:?}")]
    InconsistentSpec(ExperimentSpec),
    #[error("template for {experiment}: {message}")]
    BadTemplate {
        experiment: ExperimentId,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Request(#[from] RequestError),
    #[error("no JSON array in response")]
    NoJsonFound,
    #[error("array element {index} has neither a label nor a line")]
    MalformedObject { index: usize },
}
