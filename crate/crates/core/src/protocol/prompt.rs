use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ExperimentId, ExperimentSpec, LabelPolicy, ProtocolError};
use crate::corpus::CorpusFile;
use crate::cwe::CweId;
use crate::llm::{ChatMessage, ChatRequest};

pub const CODE_SLOT: &str = "{Vul_code}";
pub const LABELS_SLOT: &str = "{labels}";

/// The four prompt templates, one per experiment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    templates: [String; 4],
}

fn strip_one_newline(text: &str) -> &str {
    text.strip_suffix('\n')
        .map(|t| t.strip_suffix('\r').unwrap_or(t))
        .unwrap_or(text)
}

impl PromptSet {
    pub fn builtin() -> Self {
        Self::from_texts([
            include_str!("../../prompts/exp1.txt"),
            include_str!("../../prompts/exp2.txt"),
            include_str!("../../prompts/exp3.txt"),
            include_str!("../../prompts/exp4.txt"),
        ])
        .expect("shipped templates are valid")
    }

    /// Reads `exp1.txt` .. `exp4.txt` from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, ProtocolError> {
        let mut texts = Vec::with_capacity(4);
        for id in ExperimentId::ALL {
            let path = dir.join(format!("{}.txt", id.key()));
            let text = std::fs::read_to_string(&path).map_err(|source| ProtocolError::Io {
                path: path.display().to_string(),
                source,
            })?;
            texts.push(text);
        }
        let [a, b, c, d]: [String; 4] = texts.try_into().expect("four templates");
        Self::from_texts([&a, &b, &c, &d])
    }

    /// One trailing newline per template is dropped; everything else is kept
    /// byte for byte.
    pub fn from_texts(texts: [&str; 4]) -> Result<Self, ProtocolError> {
        let mut templates: [String; 4] = Default::default();
        for (i, id) in ExperimentId::ALL.into_iter().enumerate() {
            let t = strip_one_newline(texts[i]);
            if !t.contains(CODE_SLOT) {
                return Err(ProtocolError::BadTemplate {
                    experiment: id,
                    message: format!("missing {CODE_SLOT}"),
                });
            }
            let wants_labels = id.label_policy().takes_labels();
            if t.contains(LABELS_SLOT) != wants_labels {
                return Err(ProtocolError::BadTemplate {
                    experiment: id,
                    message: if wants_labels {
                        format!("missing {LABELS_SLOT}")
                    } else {
                        format!("unexpected {LABELS_SLOT}")
                    },
                });
            }
            templates[i] = t.to_string();
        }
        Ok(Self { templates })
    }

    pub fn template(&self, id: ExperimentId) -> &str {
        &self.templates[id.index()]
    }
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Single-pass placeholder substitution, so placeholder-like text inside the
/// substituted code is left alone.
fn substitute(template: &str, code: &str, labels: &str) -> String {
    let mut out = String::with_capacity(template.len() + code.len() + labels.len());
    let mut rest = template;
    loop {
        let next = [(CODE_SLOT, code), (LABELS_SLOT, labels)]
            .into_iter()
            .filter_map(|(slot, value)| rest.find(slot).map(|at| (at, slot, value)))
            .min_by_key(|(at, _, _)| *at);
        match next {
            Some((at, slot, value)) => {
                out.push_str(&rest[..at]);
                out.push_str(value);
                rest = &rest[at + slot.len()..];
            }
            None => {
                out.push_str(rest);
                return out;
            }
        }
    }
}

/// Label order as sent to the model. Exp2 lists are shuffled when the spec
/// carries a seed; other lists keep the caller's order.
pub fn ordered_labels(spec: &ExperimentSpec, labels: &[CweId]) -> Vec<CweId> {
    let mut out = labels.to_vec();
    if spec.label_policy == LabelPolicy::GlobalList {
        if let Some(seed) = spec.shuffle_seed {
            out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
    }
    out
}

/// The prompt text for one file.
pub fn render_prompt(
    prompts: &PromptSet,
    spec: &ExperimentSpec,
    file: &CorpusFile,
    labels: &[CweId],
) -> Result<String, ProtocolError> {
    spec.validate()?;
    let takes = spec.label_policy.takes_labels();
    if takes && labels.is_empty() {
        return Err(ProtocolError::LabelsRequired(spec.id));
    }
    if !takes && !labels.is_empty() {
        return Err(ProtocolError::LabelsForbidden(spec.id));
    }
    let joined = ordered_labels(spec, labels)
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(", ");
    Ok(substitute(prompts.template(spec.id), &file.source_text, &joined))
}

/// Builds single-message chat requests for a fixed model and temperature.
#[derive(Debug, Clone)]
pub struct PromptBuilder {
    pub prompts: PromptSet,
    pub model: String,
    pub temperature: f64,
}

impl PromptBuilder {
    pub fn new(prompts: PromptSet, model: impl Into<String>, temperature: f64) -> Self {
        Self {
            prompts,
            model: model.into(),
            temperature,
        }
    }

    pub fn build_prompt(
        &self,
        spec: &ExperimentSpec,
        file: &CorpusFile,
        labels: &[CweId],
    ) -> Result<ChatRequest, ProtocolError> {
        let text = render_prompt(&self.prompts, spec, file, labels)?;
        Ok(ChatRequest::new(
            self.model.clone(),
            vec![ChatMessage::user(text)],
            self.temperature,
        )?)
    }
}
