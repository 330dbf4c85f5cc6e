//! Text to fixed-dimension unit vectors.
//!
//! Two embedders sit behind [`EmbedderSpec`]: a deterministic offline hashing
//! embedder (character trigrams through 64-bit FNV-1a, signed buckets, L2
//! normalization) and a remote HTTP embeddings endpoint. Retrieval is keyed
//! on the whole pair, so what gets embedded is [`QPPair::pair_text`].

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::domain::QPPair;

/// Norm tolerance for the unit-vector invariant.
pub const NORM_EPSILON: f64 = 1e-6;

/// Smallest accepted hashing dimension.
pub const MIN_HASH_DIM: usize = 16;

/// Default hashing dimension: small enough for fast desk-scale MMR, large
/// enough that trigram collisions rarely flip nearest-neighbor order.
pub const DEFAULT_HASH_DIM: usize = 256;

/// Largest batch sent to a remote embeddings endpoint in one request.
pub const REMOTE_BATCH: usize = 64;

const REMOTE_RETRIES: u32 = 3;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("remote embedder unavailable after {attempts} attempts: {message}")]
    RemoteUnavailable { attempts: u32, message: String },
    #[error("remote embedder returned dim {got}, expected {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("embedding contains a non-finite value")]
    NonFinite,
    #[error("embedder spec: {0}")]
    BadSpec(String),
}

/// A unit-norm vector (within 1e-6), or the all-zero vector used as the
/// empty-text sentinel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    /// Validates finiteness and L2-normalizes; an all-zero input stays zero.
    pub fn from_raw(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(EmbeddingVector { values });
        }
        Ok(EmbeddingVector {
            values: values.into_iter().map(|v| v / norm).collect(),
        })
    }

    /// Trusted constructor for values already satisfying the norm invariant
    /// (hash embedder output, store files). Re-normalizing here would change
    /// float bits and break bit-exact persistence round-trips.
    pub(crate) fn from_normalized(values: Vec<f64>) -> Self {
        EmbeddingVector { values }
    }

    pub fn zero(dim: usize) -> Self {
        EmbeddingVector {
            values: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        cosine(&self.values, &other.values)
    }
}

/// Cosine similarity in 64-bit floats; defined as 0 when either vector has
/// zero magnitude.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let denom = na.sqrt() * nb.sqrt();
    if denom == 0.0 {
        0.0
    } else {
        dot / denom
    }
}

/// 64-bit FNV-1a over raw bytes.
pub(crate) fn fnv1a64(data: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in data {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Deterministic offline embedding: NFC-normalize, lowercase, pad with `^`
/// and `$` boundary markers, hash each character trigram with FNV-1a into
/// `hash % dim` with sign from the top hash bit, then L2-normalize. Empty
/// text maps to the zero vector. Output depends only on `(text, dim)`.
pub fn hash_embed(text: &str, dim: usize) -> EmbeddingVector {
    assert!(dim >= MIN_HASH_DIM, "hash embedder needs dim >= {MIN_HASH_DIM}");
    let normalized: String = text.nfc().collect::<String>().to_lowercase();
    if normalized.is_empty() {
        return EmbeddingVector::zero(dim);
    }
    let padded: Vec<char> = std::iter::once('^')
        .chain(normalized.chars())
        .chain(std::iter::once('$'))
        .collect();
    let mut accum = vec![0.0f64; dim];
    let mut buf = String::with_capacity(12);
    for window in padded.windows(3) {
        buf.clear();
        buf.extend(window);
        let hash = fnv1a64(buf.as_bytes());
        let bucket = (hash % dim as u64) as usize;
        let sign = if hash >> 63 == 0 { 1.0 } else { -1.0 };
        accum[bucket] += sign;
    }
    let norm = accum.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut accum {
            *v /= norm;
        }
    }
    EmbeddingVector::from_normalized(accum)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    Hash,
    Remote,
}

/// Which embedder to use and how to reach it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedderSpec {
    pub kind: EmbedderKind,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

fn default_dim() -> usize {
    DEFAULT_HASH_DIM
}

impl EmbedderSpec {
    pub fn hash(dim: usize) -> Self {
        EmbedderSpec {
            kind: EmbedderKind::Hash,
            dim,
            endpoint: None,
            model: None,
        }
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        match self.kind {
            EmbedderKind::Hash => {
                if self.dim < MIN_HASH_DIM {
                    return Err(EmbedError::BadSpec(format!(
                        "hash embedder needs dim >= {MIN_HASH_DIM}, got {}",
                        self.dim
                    )));
                }
            }
            EmbedderKind::Remote => {
                if self.endpoint.is_none() || self.model.is_none() {
                    return Err(EmbedError::BadSpec(
                        "remote embedder requires endpoint and model".into(),
                    ));
                }
                if self.dim == 0 {
                    return Err(EmbedError::BadSpec("dim must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

/// Embeds the canonical pair text of one pair.
pub fn embed_pair(pair: &QPPair, spec: &EmbedderSpec) -> Result<EmbeddingVector, EmbedError> {
    Ok(embed_pairs(std::slice::from_ref(pair), spec)?.pop().expect("one vector per pair"))
}

/// Embeds many pairs, batching remote requests up to [`REMOTE_BATCH`] texts.
pub fn embed_pairs(pairs: &[QPPair], spec: &EmbedderSpec) -> Result<Vec<EmbeddingVector>, EmbedError> {
    spec.validate()?;
    match spec.kind {
        EmbedderKind::Hash => Ok(pairs
            .iter()
            .map(|p| hash_embed(&p.pair_text(), spec.dim))
            .collect()),
        EmbedderKind::Remote => {
            let endpoint = spec.endpoint.as_deref().expect("validated");
            let model = spec.model.as_deref().expect("validated");
            let client = RemoteEmbedder::new(endpoint, model, spec.dim);
            let mut out = Vec::with_capacity(pairs.len());
            for chunk in pairs.chunks(REMOTE_BATCH) {
                let texts: Vec<String> = chunk.iter().map(|p| p.pair_text()).collect();
                out.extend(client.embed_batch(&texts)?);
            }
            Ok(out)
        }
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    embedding: Vec<f64>,
}

/// Client for an HTTP+JSON embeddings endpoint (request: model + input texts;
/// response: `data[].embedding`). Vectors are re-normalized locally before
/// they ever reach a store.
struct RemoteEmbedder {
    endpoint: String,
    model: String,
    dim: usize,
    agent: ureq::Agent,
}

impl RemoteEmbedder {
    fn new(endpoint: &str, model: &str, dim: usize) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build();
        RemoteEmbedder {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            dim,
            agent: ureq::Agent::new_with_config(config),
        }
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let mut last_error = String::new();
        for attempt in 0..=REMOTE_RETRIES {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(500 * (1 << (attempt - 1))));
            }
            match self.try_once(texts) {
                Ok(vectors) => return Ok(vectors),
                Err(Transient(message)) => last_error = message,
                Err(Permanent(err)) => return Err(err),
            }
        }
        Err(EmbedError::RemoteUnavailable {
            attempts: REMOTE_RETRIES + 1,
            message: last_error,
        })
    }

    fn try_once(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, RemoteCallError> {
        let body = EmbedRequest {
            model: &self.model,
            input: texts,
        };
        let mut request = self.agent.post(&self.endpoint);
        if let Ok(key) = std::env::var("RELEVANCER_EMBED_API_KEY") {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request
            .send_json(&body)
            .map_err(|e| Transient(e.to_string()))?;
        let status = response.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Transient(format!("http status {status}")));
        }
        if !(200..300).contains(&status) {
            return Err(Permanent(EmbedError::RemoteUnavailable {
                attempts: 1,
                message: format!("http status {status}"),
            }));
        }
        let parsed: EmbedResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| Transient(format!("bad response body: {e}")))?;
        if parsed.data.len() != texts.len() {
            return Err(Transient(format!(
                "expected {} vectors, got {}",
                texts.len(),
                parsed.data.len()
            )));
        }
        let mut out = Vec::with_capacity(parsed.data.len());
        for datum in parsed.data {
            if datum.embedding.len() != self.dim {
                return Err(Permanent(EmbedError::DimensionMismatch {
                    got: datum.embedding.len(),
                    expected: self.dim,
                }));
            }
            let vector = EmbeddingVector::from_raw(datum.embedding).map_err(Permanent)?;
            out.push(vector);
        }
        Ok(out)
    }
}

enum RemoteCallError {
    Transient(String),
    Permanent(EmbedError),
}
use RemoteCallError::{Permanent, Transient};
