//! In-memory store of embedded labeled examples with exact cosine top-k
//! retrieval and greedy maximal-marginal-relevance selection.
//!
//! The store is write-once: inserts happen before [`Store::freeze`], reads
//! after. Scans are exact (no ANN indexing); corpora here are desk-scale.
//!
//! Persistence is line-delimited JSON: a versioned header line carrying the
//! dimension, then one entry per line. Vector values survive a save/load
//! round trip bit-exactly (serde_json emits shortest round-trip floats and
//! loading never re-normalizes).

use std::collections::HashSet;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{LabeledExample, PairKey, QPPair};
use crate::embed::{cosine, EmbeddingVector};

pub const STORE_FORMAT: &str = "relevancer-store";
pub const STORE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store is frozen; no further inserts")]
    Frozen,
    #[error("store must be frozen before retrieval")]
    NotFrozen,
    #[error("vector dim {got} does not match store dim {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("store is empty")]
    EmptyStore,
    #[error("lambda {0} outside [0, 1]")]
    BadLambda(f64),
    #[error("store file line {line}: {message}")]
    BadFile { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A labeled example plus its embedding, identified by insertion index.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredExample {
    pub id: u64,
    pub example: LabeledExample,
    pub vector: EmbeddingVector,
}

impl StoredExample {
    pub fn key(&self) -> PairKey {
        self.example.pair.key()
    }
}

/// Write-once vector store. Single-writer until [`Store::freeze`]; after
/// that, retrieval is read-only and safe to call from many threads.
#[derive(Debug, Clone)]
pub struct Store {
    dim: usize,
    entries: Vec<StoredExample>,
    frozen: bool,
}

/// Default MMR candidate-pool size: a top-`pool` prefilter bounds the cost
/// of the greedy selection without changing results on small stores.
pub fn default_mmr_pool(k: usize) -> usize {
    (10 * k).max(64)
}

impl Store {
    pub fn new(dim: usize) -> Self {
        Store {
            dim,
            entries: Vec::new(),
            frozen: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn entries(&self) -> &[StoredExample] {
        &self.entries
    }

    /// Appends an example; the returned id is the previous entry count.
    pub fn insert(
        &mut self,
        example: LabeledExample,
        vector: EmbeddingVector,
    ) -> Result<u64, StoreError> {
        if self.frozen {
            return Err(StoreError::Frozen);
        }
        if vector.dim() != self.dim {
            return Err(StoreError::DimensionMismatch {
                got: vector.dim(),
                expected: self.dim,
            });
        }
        let id = self.entries.len() as u64;
        self.entries.push(StoredExample { id, example, vector });
        Ok(id)
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// The `k` entries most cosine-similar to `query_vec`, excluding entries
    /// whose fold-and-trim pair key is in `exclude`. Descending similarity;
    /// ties broken by ascending insertion id. Returns fewer than `k` when the
    /// store (after exclusion) is smaller.
    pub fn top_k(
        &self,
        query_vec: &EmbeddingVector,
        k: usize,
        exclude: &HashSet<PairKey>,
    ) -> Result<Vec<&StoredExample>, StoreError> {
        if !self.frozen {
            return Err(StoreError::NotFrozen);
        }
        if self.entries.is_empty() {
            return Err(StoreError::EmptyStore);
        }
        let mut scored: Vec<(f64, &StoredExample)> = self
            .entries
            .iter()
            .filter(|e| !exclude.contains(&e.key()))
            .map(|e| (cosine(query_vec.values(), e.vector.values()), e))
            .collect();
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .expect("similarities are finite")
                .then(a.1.id.cmp(&b.1.id))
        });
        scored.truncate(k);
        Ok(scored.into_iter().map(|(_, e)| e).collect())
    }

    /// Greedy MMR over a top-`pool` candidate prefilter. The first pick is
    /// the pure-relevance argmax; each later pick maximizes
    /// `lambda * sim(candidate, query) - (1 - lambda) * max_selected sim(candidate, selected)`,
    /// with ties broken by higher query similarity then ascending insertion
    /// id. Both similarities are cosine. Returns picks in selection order.
    pub fn mmr_select(
        &self,
        query_vec: &EmbeddingVector,
        k: usize,
        lambda: f64,
        pool: usize,
        exclude: &HashSet<PairKey>,
    ) -> Result<Vec<&StoredExample>, StoreError> {
        if !(0.0..=1.0).contains(&lambda) || lambda.is_nan() {
            return Err(StoreError::BadLambda(lambda));
        }
        let candidates = self.top_k(query_vec, pool.max(k), exclude)?;

        struct Candidate<'a> {
            entry: &'a StoredExample,
            relevance: f64,
            max_sim_selected: f64,
        }
        let mut remaining: Vec<Candidate> = candidates
            .into_iter()
            .map(|entry| Candidate {
                entry,
                relevance: cosine(query_vec.values(), entry.vector.values()),
                max_sim_selected: f64::NEG_INFINITY,
            })
            .collect();

        let take = k.min(remaining.len());
        let mut picked: Vec<&StoredExample> = Vec::with_capacity(take);
        for round in 0..take {
            let best = if round == 0 {
                // Candidates arrive in top_k order, so the head is already
                // the relevance argmax under the declared tie-breaks.
                0
            } else {
                let mut best = 0;
                let mut best_score = f64::NEG_INFINITY;
                for (i, c) in remaining.iter().enumerate() {
                    let score = lambda * c.relevance - (1.0 - lambda) * c.max_sim_selected;
                    let better = score > best_score
                        || (score == best_score
                            && (c.relevance > remaining[best].relevance
                                || (c.relevance == remaining[best].relevance
                                    && c.entry.id < remaining[best].entry.id)));
                    if i == 0 || better {
                        best = i;
                        best_score = score;
                    }
                }
                best
            };
            let chosen = remaining.swap_remove(best);
            for c in &mut remaining {
                let sim = cosine(c.entry.vector.values(), chosen.entry.vector.values());
                if sim > c.max_sim_selected {
                    c.max_sim_selected = sim;
                }
            }
            picked.push(chosen.entry);
        }
        Ok(picked)
    }

    /// Writes the store as a versioned JSONL file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        let header = StoreHeader {
            format: STORE_FORMAT.into(),
            version: STORE_VERSION,
            dim: self.dim,
        };
        serde_json::to_writer(&mut w, &header).map_err(io_err)?;
        w.write_all(b"\n")?;
        for entry in &self.entries {
            let line = StoreLine {
                id: entry.id,
                query: &entry.example.pair.query,
                product_title: &entry.example.pair.product_title,
                pair_id: entry.example.pair.id.as_deref(),
                locale: entry.example.pair.locale.as_deref(),
                label: &entry.example.label,
                rationale: entry.example.rationale.as_deref(),
                vector: entry.vector.values(),
            };
            serde_json::to_writer(&mut w, &line).map_err(io_err)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Loads a store file; the result is frozen and ready for retrieval.
    pub fn load(path: impl AsRef<Path>) -> Result<Store, StoreError> {
        let file = std::fs::File::open(path)?;
        let mut lines = BufReader::new(file).lines();
        let header_line = lines.next().ok_or(StoreError::BadFile {
            line: 1,
            message: "empty store file".into(),
        })??;
        let header: StoreHeader =
            serde_json::from_str(&header_line).map_err(|e| StoreError::BadFile {
                line: 1,
                message: e.to_string(),
            })?;
        if header.format != STORE_FORMAT {
            return Err(StoreError::BadFile {
                line: 1,
                message: format!("unexpected format {:?}", header.format),
            });
        }
        if header.version != STORE_VERSION {
            return Err(StoreError::BadFile {
                line: 1,
                message: format!("unsupported version {}", header.version),
            });
        }
        let mut store = Store::new(header.dim);
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: StoreLineOwned =
                serde_json::from_str(&line).map_err(|e| StoreError::BadFile {
                    line: line_no,
                    message: e.to_string(),
                })?;
            if parsed.vector.len() != header.dim {
                return Err(StoreError::BadFile {
                    line: line_no,
                    message: format!(
                        "vector dim {} does not match store dim {}",
                        parsed.vector.len(),
                        header.dim
                    ),
                });
            }
            if parsed.id != store.entries.len() as u64 {
                return Err(StoreError::BadFile {
                    line: line_no,
                    message: format!("id {} out of sequence", parsed.id),
                });
            }
            let pair = QPPair {
                query: parsed.query,
                product_title: parsed.product_title,
                id: parsed.pair_id,
                locale: parsed.locale,
            };
            let mut example = LabeledExample::new(pair, parsed.label);
            example.rationale = parsed.rationale;
            store
                .entries
                .push(StoredExample {
                    id: parsed.id,
                    example,
                    vector: EmbeddingVector::from_normalized(parsed.vector),
                });
        }
        store.freeze();
        Ok(store)
    }
}

fn io_err(e: serde_json::Error) -> StoreError {
    StoreError::Io(std::io::Error::other(e))
}

#[derive(Serialize, Deserialize)]
struct StoreHeader {
    format: String,
    version: u32,
    dim: usize,
}

#[derive(Serialize)]
struct StoreLine<'a> {
    id: u64,
    query: &'a str,
    product_title: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pair_id: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    locale: Option<&'a str>,
    label: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    rationale: Option<&'a str>,
    vector: &'a [f64],
}

#[derive(Deserialize)]
struct StoreLineOwned {
    id: u64,
    query: String,
    product_title: String,
    #[serde(default)]
    pair_id: Option<String>,
    #[serde(default)]
    locale: Option<String>,
    label: String,
    #[serde(default)]
    rationale: Option<String>,
    vector: Vec<f64>,
}
