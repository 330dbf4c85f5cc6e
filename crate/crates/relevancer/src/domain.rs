//! Core domain types: label schemes, query-product pairs, labeled examples,
//! and predictions. Everything here is an immutable value after construction
//! and safe to share across threads.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("unknown label {raw:?} for scheme {scheme:?}")]
    UnknownLabel { raw: String, scheme: String },
    #[error("unknown scheme {0:?} (expected esci, wands, or five_level)")]
    UnknownScheme(String),
    #[error("scheme {0:?} has no labels")]
    EmptyLabels(String),
    #[error("scheme {scheme:?} label {label:?} duplicates another label after case-folding")]
    DuplicateLabel { scheme: String, label: String },
    #[error("scheme {scheme:?} label {label:?} has no definition")]
    MissingDefinition { scheme: String, label: String },
    #[error("{0} must be non-empty after trimming")]
    EmptyField(&'static str),
    #[error("could not read scheme file: {0}")]
    Io(#[from] std::io::Error),
    #[error("could not parse scheme file: {0}")]
    Parse(#[from] toml::de::Error),
}

/// An ordered set of relevance classes with a prose definition per class.
///
/// The definitions are rendered verbatim into prompts, so their wording is
/// part of the artifact's behavior, not just documentation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelScheme {
    pub name: String,
    pub labels: Vec<String>,
    pub definitions: BTreeMap<String, String>,
}

impl LabelScheme {
    pub fn new(
        name: impl Into<String>,
        labels_and_definitions: &[(&str, &str)],
    ) -> Result<Self, DomainError> {
        let name = name.into();
        let scheme = LabelScheme {
            name,
            labels: labels_and_definitions
                .iter()
                .map(|(l, _)| l.to_string())
                .collect(),
            definitions: labels_and_definitions
                .iter()
                .map(|(l, d)| (l.to_string(), d.to_string()))
                .collect(),
        };
        scheme.validate()?;
        Ok(scheme)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.labels.is_empty() {
            return Err(DomainError::EmptyLabels(self.name.clone()));
        }
        let mut seen = std::collections::HashSet::new();
        for label in &self.labels {
            if label.trim().is_empty() {
                return Err(DomainError::EmptyField("label"));
            }
            if !seen.insert(label.to_lowercase()) {
                return Err(DomainError::DuplicateLabel {
                    scheme: self.name.clone(),
                    label: label.clone(),
                });
            }
            match self.definitions.get(label) {
                Some(d) if !d.trim().is_empty() => {}
                _ => {
                    return Err(DomainError::MissingDefinition {
                        scheme: self.name.clone(),
                        label: label.clone(),
                    })
                }
            }
        }
        Ok(())
    }

    pub fn definition(&self, label: &str) -> &str {
        &self.definitions[label]
    }

    /// Position of a canonical label within the scheme.
    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index_of(label).is_some()
    }

    pub fn from_toml_str(text: &str) -> Result<Self, DomainError> {
        let scheme: LabelScheme = toml::from_str(text)?;
        scheme.validate()?;
        Ok(scheme)
    }

    pub fn to_toml_string(&self) -> String {
        // LabelScheme serializes to plain key-value TOML; this cannot fail.
        toml::to_string(self).expect("scheme serializes to TOML")
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, DomainError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

/// Returns one of the built-in schemes by identifier: `esci`, `wands`, or
/// `five_level`. Labels are in their published order; definitions are the
/// texts rendered into the instruction block of every prompt.
pub fn builtin_scheme(name: &str) -> Result<LabelScheme, DomainError> {
    match name {
        "esci" => LabelScheme::new(
            "esci",
            &[
                (
                    "Exact",
                    "the product is relevant for the query and satisfies all the query specifications.",
                ),
                (
                    "Substitute",
                    "the product is somewhat relevant; it fails to fulfill some aspects of the query, but can be used as a functional substitute.",
                ),
                (
                    "Complement",
                    "the product does not fulfill the query but could be used in combination with a product that does.",
                ),
                (
                    "Irrelevant",
                    "the product is irrelevant to the query or fails to fulfill a central aspect of it.",
                ),
            ],
        ),
        "wands" => LabelScheme::new(
            "wands",
            &[
                (
                    "Exact",
                    "this label represents the surfaced product fully matches the search query.",
                ),
                (
                    "Partial",
                    "this label represents the surfaced product that does not fully match the search query. It only matches the target entity of the query, but does not satisfy the modifiers for the query.",
                ),
                (
                    "Irrelevant",
                    "this label indicates the product is not relevant to the query.",
                ),
            ],
        ),
        "five_level" => LabelScheme::new(
            "five_level",
            &[
                (
                    "Excellent",
                    "the product fully matches the search query and is an ideal result for it.",
                ),
                (
                    "Good",
                    "the product matches the search query with only minor mismatches on details.",
                ),
                (
                    "Okay",
                    "the product is an acceptable result for the query but misses some of its specifications.",
                ),
                ("Bad", "the product is a poor match for the search query."),
                (
                    "Embarrassing",
                    "the product is completely unrelated to the search query and should never be surfaced for it.",
                ),
            ],
        ),
        other => Err(DomainError::UnknownScheme(other.to_string())),
    }
}

/// Quote characters stripped from the ends of a raw label before matching.
const QUOTE_CHARS: [char; 7] = ['"', '\'', '`', '\u{2018}', '\u{2019}', '\u{201C}', '\u{201D}'];

/// Maps raw label text (as an LLM emitted it) onto the scheme's canonical
/// spelling. Matching is case-insensitive and ignores surrounding whitespace
/// and ASCII or typographic quotes. Idempotent on its own output.
pub fn normalize_label(text: &str, scheme: &LabelScheme) -> Result<String, DomainError> {
    let mut s = text.trim();
    loop {
        let before = s;
        s = s.trim();
        s = s.strip_prefix(QUOTE_CHARS).unwrap_or(s);
        s = s.strip_suffix(QUOTE_CHARS).unwrap_or(s);
        if s == before {
            break;
        }
    }
    let folded = s.to_lowercase();
    scheme
        .labels
        .iter()
        .find(|l| l.to_lowercase() == folded)
        .cloned()
        .ok_or_else(|| DomainError::UnknownLabel {
            raw: text.to_string(),
            scheme: scheme.name.clone(),
        })
}

/// A search query paired with a product title; the unit every stage of the
/// pipeline operates on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QPPair {
    pub query: String,
    pub product_title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub locale: Option<String>,
}

impl QPPair {
    pub fn new(query: impl Into<String>, product_title: impl Into<String>) -> Result<Self, DomainError> {
        let query = query.into();
        let product_title = product_title.into();
        if query.trim().is_empty() {
            return Err(DomainError::EmptyField("query"));
        }
        if product_title.trim().is_empty() {
            return Err(DomainError::EmptyField("product_title"));
        }
        Ok(QPPair {
            query,
            product_title,
            id: None,
            locale: None,
        })
    }

    /// Canonical single-line rendering shared by the prompt assembler and the
    /// embedder, so retrieval keys and prompt text never drift apart.
    pub fn pair_text(&self) -> String {
        format!(
            "query: {}, product title: {}",
            self.query, self.product_title
        )
    }

    /// Case-folded, whitespace-trimmed identity used for overlap exclusion
    /// and retrieval leakage guards.
    pub fn key(&self) -> PairKey {
        PairKey::new(&self.query, &self.product_title)
    }
}

/// Fold-and-trim identity of a pair: two pairs with the same key are the same
/// judgment item even if they differ in casing or surrounding whitespace.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairKey(String, String);

impl PairKey {
    pub fn new(query: &str, product_title: &str) -> Self {
        PairKey(
            query.trim().to_lowercase(),
            product_title.trim().to_lowercase(),
        )
    }
}

impl fmt::Display for PairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:?}, {:?})", self.0, self.1)
    }
}

/// A pair with its gold label and, optionally, the reasoning text used when
/// the example is rendered as a chain-of-thought demonstration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub pair: QPPair,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
}

impl LabeledExample {
    pub fn new(pair: QPPair, label: impl Into<String>) -> Self {
        LabeledExample {
            pair,
            label: label.into(),
            rationale: None,
        }
    }

    pub fn with_rationale(mut self, rationale: impl Into<String>) -> Self {
        self.rationale = Some(rationale.into());
        self
    }
}

/// Outcome of labeling one pair. Exactly one of `predicted` / `parse_error`
/// is populated; construct through [`Prediction::ok`] or [`Prediction::failed`]
/// to keep that invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub pair: QPPair,
    pub gold: Option<String>,
    pub predicted: Option<String>,
    pub raw_response: String,
    pub config_id: String,
    pub latency_ms: u64,
    pub parse_error: Option<String>,
}

impl Prediction {
    pub fn ok(
        pair: QPPair,
        gold: Option<String>,
        predicted: String,
        raw_response: String,
        config_id: String,
        latency_ms: u64,
    ) -> Self {
        Prediction {
            pair,
            gold,
            predicted: Some(predicted),
            raw_response,
            config_id,
            latency_ms,
            parse_error: None,
        }
    }

    pub fn failed(
        pair: QPPair,
        gold: Option<String>,
        error: String,
        raw_response: String,
        config_id: String,
        latency_ms: u64,
    ) -> Self {
        Prediction {
            pair,
            gold,
            predicted: None,
            raw_response,
            config_id,
            latency_ms,
            parse_error: Some(error),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.predicted.is_some()
    }
}
