//! Gold-labeled dataset ingestion, stratified sampling, and split hygiene.
//!
//! The canonical interchange format is a UTF-8, RFC 4180 CSV with header
//! `query,product_title,label` and an optional `rationale` column for
//! chain-of-thought pools. Third-party layouts (different column names,
//! single-letter label codes, other delimiters) are adapted through a
//! [`ColumnMapping`].

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DomainError, LabelScheme, LabeledExample, QPPair};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing column {0:?} in header")]
    MissingColumn(String),
    #[error("row {row}: unknown label {raw:?}")]
    UnknownLabel { row: usize, raw: String },
    #[error("row {row}: {message}")]
    MalformedRow { row: usize, message: String },
    #[error("class {class:?} has {available} examples, needs {needed}")]
    InsufficientSupport {
        class: String,
        available: usize,
        needed: usize,
    },
    #[error("total {total} is not divisible by the {classes} scheme classes")]
    IndivisibleTotal { total: usize, classes: usize },
    #[error("datasets use different schemes: {left:?} vs {right:?}")]
    SchemeMismatch { left: String, right: String },
    #[error("column mapping: {0}")]
    BadMapping(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// An ordered collection of labeled examples under a single scheme. Order is
/// stable and equals file order unless an operation says otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub scheme: LabelScheme,
    pub examples: Vec<LabeledExample>,
    pub split_name: String,
}

impl Dataset {
    pub fn new(scheme: LabelScheme, examples: Vec<LabeledExample>, split_name: impl Into<String>) -> Self {
        Dataset {
            scheme,
            examples,
            split_name: split_name.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Gold labels keyed by fold-and-trim pair identity, for oracle backends.
    pub fn gold_map(&self) -> std::collections::HashMap<crate::domain::PairKey, String> {
        self.examples
            .iter()
            .map(|e| (e.pair.key(), e.label.clone()))
            .collect()
    }
}

/// Adapter from an arbitrary CSV layout to the canonical example shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub query_col: String,
    pub title_col: String,
    pub label_col: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_map: Option<BTreeMap<String, String>>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
}

fn default_delimiter() -> char {
    ','
}

impl ColumnMapping {
    /// Mapping for the canonical `query,product_title,label[,rationale]` layout.
    pub fn canonical() -> Self {
        ColumnMapping {
            query_col: "query".into(),
            title_col: "product_title".into(),
            label_col: "label".into(),
            label_map: None,
            delimiter: ',',
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let cols = [&self.query_col, &self.title_col, &self.label_col];
        let distinct: HashSet<_> = cols.iter().collect();
        if distinct.len() != cols.len() {
            return Err(DatasetError::BadMapping(
                "query_col, title_col, and label_col must be distinct".into(),
            ));
        }
        if !self.delimiter.is_ascii() {
            return Err(DatasetError::BadMapping("delimiter must be ASCII".into()));
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let mapping: ColumnMapping = toml::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| DatasetError::BadMapping(e.to_string()))?;
        mapping.validate()?;
        Ok(mapping)
    }
}

/// Name of the optional rationale column in the canonical layout.
const RATIONALE_COL: &str = "rationale";

/// Loads a CSV into a [`Dataset`], preserving row order. Labels pass through
/// `label_map` first (matched on the trimmed raw cell) and are then
/// normalized against the scheme. Row indices in errors are 1-based data
/// rows, header excluded.
pub fn load(
    path: impl AsRef<Path>,
    mapping: &ColumnMapping,
    scheme: &LabelScheme,
) -> Result<Dataset, DatasetError> {
    mapping.validate()?;
    if let Some(map) = &mapping.label_map {
        for target in map.values() {
            if !scheme.contains(target) {
                return Err(DatasetError::BadMapping(format!(
                    "label_map target {target:?} is not a canonical {} label",
                    scheme.name
                )));
            }
        }
    }
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(mapping.delimiter as u8)
        .flexible(false)
        .from_path(path)?;

    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize, DatasetError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
    };
    let query_idx = col(&mapping.query_col)?;
    let title_idx = col(&mapping.title_col)?;
    let label_idx = col(&mapping.label_col)?;
    let rationale_idx = headers.iter().position(|h| h == RATIONALE_COL);

    let mut examples = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| DatasetError::MalformedRow {
            row,
            message: e.to_string(),
        })?;
        let field = |idx: usize| -> Result<&str, DatasetError> {
            record.get(idx).ok_or_else(|| DatasetError::MalformedRow {
                row,
                message: format!("missing field {idx}"),
            })
        };
        let pair = QPPair::new(field(query_idx)?, field(title_idx)?).map_err(|e| {
            DatasetError::MalformedRow {
                row,
                message: e.to_string(),
            }
        })?;
        let raw_label = field(label_idx)?;
        let mapped = mapping
            .label_map
            .as_ref()
            .and_then(|m| m.get(raw_label.trim()))
            .map(String::as_str)
            .unwrap_or(raw_label);
        let label = crate::domain::normalize_label(mapped, scheme).map_err(|_| {
            DatasetError::UnknownLabel {
                row,
                raw: raw_label.to_string(),
            }
        })?;
        let mut example = LabeledExample::new(pair, label);
        if let Some(ri) = rationale_idx {
            if let Some(r) = record.get(ri) {
                if !r.trim().is_empty() {
                    example = example.with_rationale(r);
                }
            }
        }
        examples.push(example);
    }

    let split_name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    Ok(Dataset::new(scheme.clone(), examples, split_name))
}

/// Writes a dataset in the canonical CSV layout. The `rationale` column is
/// emitted only when at least one example carries one.
pub fn save(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let with_rationale = dataset.examples.iter().any(|e| e.rationale.is_some());
    let mut writer = csv::Writer::from_path(path)?;
    if with_rationale {
        writer.write_record(["query", "product_title", "label", RATIONALE_COL])?;
    } else {
        writer.write_record(["query", "product_title", "label"])?;
    }
    for example in &dataset.examples {
        if with_rationale {
            writer.write_record([
                example.pair.query.as_str(),
                example.pair.product_title.as_str(),
                example.label.as_str(),
                example.rationale.as_deref().unwrap_or(""),
            ])?;
        } else {
            writer.write_record([
                example.pair.query.as_str(),
                example.pair.product_title.as_str(),
                example.label.as_str(),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Hand-rolled Fisher-Yates so shuffle order depends only on the ChaCha8
/// stream, not on distribution internals of any rand release.
pub(crate) fn fisher_yates<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        items.swap(i, j);
    }
}

/// Draws `total` examples with an exactly uniform class histogram, without
/// replacement, from a seeded ChaCha8 stream. Per-class candidates are
/// shuffled in scheme label order, then the combined selection is shuffled
/// once more; the result is a pure function of (content, total, seed).
pub fn stratified_sample(
    dataset: &Dataset,
    total: usize,
    seed: u64,
) -> Result<Dataset, DatasetError> {
    let classes = dataset.scheme.labels.len();
    if total == 0 || !total.is_multiple_of(classes) {
        return Err(DatasetError::IndivisibleTotal { total, classes });
    }
    let per_class = total / classes;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut selected: Vec<usize> = Vec::with_capacity(total);
    for label in &dataset.scheme.labels {
        let mut candidates: Vec<usize> = dataset
            .examples
            .iter()
            .enumerate()
            .filter(|(_, e)| &e.label == label)
            .map(|(i, _)| i)
            .collect();
        if candidates.len() < per_class {
            return Err(DatasetError::InsufficientSupport {
                class: label.clone(),
                available: candidates.len(),
                needed: per_class,
            });
        }
        fisher_yates(&mut candidates, &mut rng);
        selected.extend(candidates.into_iter().take(per_class));
    }
    fisher_yates(&mut selected, &mut rng);

    let examples = selected
        .into_iter()
        .map(|i| dataset.examples[i].clone())
        .collect();
    Ok(Dataset::new(
        dataset.scheme.clone(),
        examples,
        dataset.split_name.clone(),
    ))
}

/// Removes from `pool` every example whose fold-and-trim pair key occurs in
/// `test`, so few-shot pools never leak evaluation pairs.
pub fn exclude_overlap(pool: &Dataset, test: &Dataset) -> Result<Dataset, DatasetError> {
    if pool.scheme != test.scheme {
        return Err(DatasetError::SchemeMismatch {
            left: pool.scheme.name.clone(),
            right: test.scheme.name.clone(),
        });
    }
    let test_keys: HashSet<_> = test.examples.iter().map(|e| e.pair.key()).collect();
    let examples = pool
        .examples
        .iter()
        .filter(|e| !test_keys.contains(&e.pair.key()))
        .cloned()
        .collect();
    Ok(Dataset::new(
        pool.scheme.clone(),
        examples,
        pool.split_name.clone(),
    ))
}
