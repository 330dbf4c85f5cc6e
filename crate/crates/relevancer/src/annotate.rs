//! End-to-end labeling: select demonstrations, assemble the prompt, complete
//! it against the backend, parse the label back out.
//!
//! Per-pair failures are data, not exceptions: a batch never aborts because
//! one response was garbage or one backend call exhausted its retries. The
//! failed pair surfaces as a prediction with `parse_error` set.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::domain::{normalize_label, LabelScheme, Prediction, QPPair};
use crate::embed::{embed_pairs, EmbedderSpec, EmbeddingVector};
use crate::llm::{
    backend_for, complete_with_policy, sha256_hex, Backend, Cache, LlmConfig, LlmError,
    RetryPolicy,
};
use crate::prompt::{
    assemble, select_examples_with_vector, PromptConfig, PromptError, Strategy,
};
use crate::store::Store;

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("cannot write output {path}: {message}")]
    OutputUnwritable { path: PathBuf, message: String },
    #[error("job: {0}")]
    BadJob(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Embed(#[from] crate::embed::EmbedError),
    #[error("predictions file line {line}: {message}")]
    BadPredictionFile { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Why a response yielded no usable label.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseLabelError {
    #[error("NoLabelFound: no rating structure and no unique standalone label")]
    NoLabelFound,
    #[error("UnknownLabel: {0:?} is not in the scheme")]
    UnknownLabel(String),
}

fn rating_regex() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"\{\s*["']rating["']\s*:\s*(?:"([^"]*)"|'([^']*)'|([^"'{}]+?))\s*\}"#)
            .expect("rating regex compiles")
    })
}

/// Parses a model response into a canonical label.
///
/// The last `{"rating": ..}` / `{'rating': '..'}` structure in the response
/// wins, with either quote style (or none) around the value and arbitrary
/// internal whitespace. When no structure is present, a scheme label that
/// appears as a standalone case-insensitive word exactly once (as a distinct
/// label) is accepted as a fallback.
pub fn parse_label(response: &str, scheme: &LabelScheme) -> Result<String, ParseLabelError> {
    if let Some(caps) = rating_regex().captures_iter(response).last() {
        let raw = caps
            .get(1)
            .or_else(|| caps.get(2))
            .or_else(|| caps.get(3))
            .map(|m| m.as_str())
            .unwrap_or_default();
        return normalize_label(raw, scheme)
            .map_err(|_| ParseLabelError::UnknownLabel(raw.trim().to_string()));
    }
    let mut found: Option<&str> = None;
    for label in &scheme.labels {
        let word = Regex::new(&format!(r"(?i)\b{}\b", regex::escape(label)))
            .expect("label word regex compiles");
        if word.is_match(response) {
            match found {
                None => found = Some(label),
                Some(existing) if existing == label => {}
                Some(_) => return Err(ParseLabelError::NoLabelFound),
            }
        }
    }
    found.map(|l| l.to_string()).ok_or(ParseLabelError::NoLabelFound)
}

/// Everything needed to label a batch of pairs under one configuration.
#[derive(Debug, Clone)]
pub struct AnnotationJob {
    pub test_set: Dataset,
    pub pool: Dataset,
    pub prompt_config: PromptConfig,
    pub llm_config: LlmConfig,
    pub embedder: EmbedderSpec,
    pub concurrency: usize,
    pub output_path: PathBuf,
    /// Identifier stamped on every prediction (the grid row name).
    pub config_id: String,
    /// Store full prompt text on each output row, not just its hash.
    pub keep_prompts: bool,
    pub retry: RetryPolicy,
}

impl AnnotationJob {
    pub fn validate(&self) -> Result<(), AnnotateError> {
        if self.concurrency == 0 {
            return Err(AnnotateError::BadJob("concurrency must be >= 1".into()));
        }
        if self.pool.scheme != self.test_set.scheme {
            return Err(AnnotateError::BadJob(format!(
                "pool scheme {:?} != test scheme {:?}",
                self.pool.scheme.name, self.test_set.scheme.name
            )));
        }
        self.prompt_config.validate()?;
        self.llm_config.validate()?;
        if self.prompt_config.k > 0 && self.pool.is_empty() {
            return Err(AnnotateError::BadJob("pool is empty but k > 0".into()));
        }
        Ok(())
    }

    fn needs_retrieval(&self) -> bool {
        matches!(
            self.prompt_config.strategy,
            Strategy::RagFs | Strategy::RagMmrFs
        )
    }
}

/// One output line of a labeling run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub query: String,
    pub product_title: String,
    pub gold: Option<String>,
    pub predicted: Option<String>,
    pub parse_error: Option<String>,
    pub latency_ms: u64,
    pub config_id: String,
    pub prompt_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
}

impl PredictionRow {
    pub fn into_prediction(self) -> Prediction {
        Prediction {
            pair: QPPair {
                query: self.query,
                product_title: self.product_title,
                id: None,
                locale: None,
            },
            gold: self.gold,
            predicted: self.predicted,
            raw_response: String::new(),
            config_id: self.config_id,
            latency_ms: self.latency_ms,
            parse_error: self.parse_error,
        }
    }
}

/// Reads a predictions JSONL file back into rows.
pub fn read_prediction_rows(path: impl AsRef<Path>) -> Result<Vec<PredictionRow>, AnnotateError> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        rows.push(
            serde_json::from_str(line).map_err(|e| AnnotateError::BadPredictionFile {
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(rows)
}

/// Aggregate view of a finished batch.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub n: usize,
    pub valid: usize,
    pub error_count: usize,
    pub wall_clock_s: f64,
    pub mean_latency_ms: f64,
    pub backend_calls: u64,
    pub cache_hits: u64,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

struct PairOutcome {
    prediction: Prediction,
    prompt_hash: String,
    prompt: Option<String>,
}

struct BatchContext<'a> {
    job: &'a AnnotationJob,
    store: Option<&'a Store>,
    backend: &'a dyn Backend,
    cache: &'a Cache,
    question_vecs: Option<Vec<EmbeddingVector>>,
    backend_calls: AtomicU64,
    cache_hits: AtomicU64,
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
    tokens_seen: AtomicU64,
}

impl BatchContext<'_> {
    fn label_one(&self, index: usize, pair: &QPPair, gold: Option<&str>) -> PairOutcome {
        let job = self.job;
        let gold = gold.map(str::to_string);
        let question_vec = self.question_vecs.as_ref().map(|v| &v[index]);

        let selected = match select_examples_with_vector(
            &job.prompt_config,
            pair,
            question_vec,
            &job.pool,
            self.store,
        ) {
            Ok(selected) => selected,
            Err(e) => {
                return PairOutcome {
                    prediction: Prediction::failed(
                        pair.clone(),
                        gold,
                        format!("selection: {e}"),
                        String::new(),
                        job.config_id.clone(),
                        0,
                    ),
                    prompt_hash: String::new(),
                    prompt: None,
                }
            }
        };
        let prompt = match assemble(&job.prompt_config, pair, &selected) {
            Ok(prompt) => prompt,
            Err(e) => {
                return PairOutcome {
                    prediction: Prediction::failed(
                        pair.clone(),
                        gold,
                        format!("assembly: {e}"),
                        String::new(),
                        job.config_id.clone(),
                        0,
                    ),
                    prompt_hash: String::new(),
                    prompt: None,
                }
            }
        };
        let prompt_hash = sha256_hex(&prompt.text);
        let kept_prompt = job.keep_prompts.then(|| prompt.text.clone());

        let started = Instant::now();
        let outcome = complete_with_policy(
            self.backend,
            &prompt.text,
            &job.llm_config,
            self.cache,
            &job.retry,
        );
        let record = match outcome {
            Ok(outcome) => {
                if outcome.from_cache {
                    self.cache_hits.fetch_add(1, Ordering::Relaxed);
                } else {
                    self.backend_calls.fetch_add(1, Ordering::Relaxed);
                }
                if let Some(tokens) = outcome.record.token_counts {
                    self.prompt_tokens.fetch_add(tokens.prompt, Ordering::Relaxed);
                    self.completion_tokens
                        .fetch_add(tokens.completion, Ordering::Relaxed);
                    self.tokens_seen.fetch_add(1, Ordering::Relaxed);
                }
                outcome.record
            }
            Err(e) => {
                self.backend_calls.fetch_add(1, Ordering::Relaxed);
                let latency = started.elapsed().as_millis() as u64;
                return PairOutcome {
                    prediction: Prediction::failed(
                        pair.clone(),
                        gold,
                        format!("backend: {e}"),
                        String::new(),
                        job.config_id.clone(),
                        latency,
                    ),
                    prompt_hash,
                    prompt: kept_prompt,
                };
            }
        };

        // Latency attributes the original backend cost, also on cache hits,
        // so resumed runs reproduce the same output bytes.
        let latency = record.latency_ms;
        let prediction = match parse_label(&record.response, &job.prompt_config.scheme) {
            Ok(label) => Prediction::ok(
                pair.clone(),
                gold,
                label,
                record.response,
                job.config_id.clone(),
                latency,
            ),
            Err(e) => Prediction::failed(
                pair.clone(),
                gold,
                e.to_string(),
                record.response,
                job.config_id.clone(),
                latency,
            ),
        };
        PairOutcome {
            prediction,
            prompt_hash,
            prompt: kept_prompt,
        }
    }
}

/// Labels one pair end to end with a backend built from the job's endpoint.
/// Backend and parse failures come back as a failed [`Prediction`], never as
/// an error.
pub fn label_pair(
    pair: &QPPair,
    job: &AnnotationJob,
    store: Option<&Store>,
    cache: &Cache,
) -> Result<Prediction, AnnotateError> {
    job.validate()?;
    let backend = backend_from_job(job)?;
    label_pair_with_backend(pair, None, job, store, backend.as_ref(), cache)
}

pub fn label_pair_with_backend(
    pair: &QPPair,
    gold: Option<&str>,
    job: &AnnotationJob,
    store: Option<&Store>,
    backend: &dyn Backend,
    cache: &Cache,
) -> Result<Prediction, AnnotateError> {
    let question_vecs = if job.needs_retrieval() {
        Some(embed_pairs(std::slice::from_ref(pair), &job.embedder)?)
    } else {
        None
    };
    let ctx = BatchContext {
        job,
        store,
        backend,
        cache,
        question_vecs,
        backend_calls: AtomicU64::new(0),
        cache_hits: AtomicU64::new(0),
        prompt_tokens: AtomicU64::new(0),
        completion_tokens: AtomicU64::new(0),
        tokens_seen: AtomicU64::new(0),
    };
    Ok(ctx.label_one(0, pair, gold).prediction)
}

fn backend_from_job(job: &AnnotationJob) -> Result<Box<dyn Backend>, LlmError> {
    // Oracle-style mocks may be asked about any test or pool pair.
    let mut gold = job.pool.gold_map();
    gold.extend(job.test_set.gold_map());
    backend_for(&job.llm_config, &job.test_set.scheme, &gold)
}

/// Labels the whole test set. Predictions stream to `output_path` as JSONL
/// in test-set input order regardless of completion order; at most
/// `job.concurrency` backend calls are in flight at once.
pub fn label_batch(
    job: &AnnotationJob,
    store: Option<&Store>,
    cache: &Cache,
) -> Result<(Vec<Prediction>, RunSummary), AnnotateError> {
    job.validate()?;
    let backend = backend_from_job(job)?;
    label_batch_with_backend(job, store, backend.as_ref(), cache)
}

pub fn label_batch_with_backend(
    job: &AnnotationJob,
    store: Option<&Store>,
    backend: &dyn Backend,
    cache: &Cache,
) -> Result<(Vec<Prediction>, RunSummary), AnnotateError> {
    job.validate()?;
    let started = Instant::now();
    let n = job.test_set.len();

    if job.needs_retrieval() && store.is_none() {
        return Err(AnnotateError::Prompt(PromptError::NeedStore));
    }
    let question_vecs = if job.needs_retrieval() {
        let pairs: Vec<QPPair> = job.test_set.examples.iter().map(|e| e.pair.clone()).collect();
        Some(embed_pairs(&pairs, &job.embedder)?)
    } else {
        None
    };

    let file = std::fs::File::create(&job.output_path).map_err(|e| {
        AnnotateError::OutputUnwritable {
            path: job.output_path.clone(),
            message: e.to_string(),
        }
    })?;
    let mut writer = std::io::BufWriter::new(file);

    let ctx = BatchContext {
        job,
        store,
        backend,
        cache,
        question_vecs,
        backend_calls: AtomicU64::new(0),
        cache_hits: AtomicU64::new(0),
        prompt_tokens: AtomicU64::new(0),
        completion_tokens: AtomicU64::new(0),
        tokens_seen: AtomicU64::new(0),
    };

    let next_index = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, PairOutcome)>();
    let mut predictions: Vec<Prediction> = Vec::with_capacity(n);

    std::thread::scope(|scope| -> Result<(), AnnotateError> {
        let workers = job.concurrency.min(n.max(1));
        for _ in 0..workers {
            let tx = tx.clone();
            let ctx = &ctx;
            let next_index = &next_index;
            scope.spawn(move || loop {
                let i = next_index.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let example = &ctx.job.test_set.examples[i];
                let outcome = ctx.label_one(i, &example.pair, Some(&example.label));
                if tx.send((i, outcome)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        // Reorder completions back to input order and stream them out.
        let mut pending: BTreeMap<usize, PairOutcome> = BTreeMap::new();
        let mut next_write = 0usize;
        for (i, outcome) in rx {
            pending.insert(i, outcome);
            while let Some(outcome) = pending.remove(&next_write) {
                let row = PredictionRow {
                    query: outcome.prediction.pair.query.clone(),
                    product_title: outcome.prediction.pair.product_title.clone(),
                    gold: outcome.prediction.gold.clone(),
                    predicted: outcome.prediction.predicted.clone(),
                    parse_error: outcome.prediction.parse_error.clone(),
                    latency_ms: outcome.prediction.latency_ms,
                    config_id: outcome.prediction.config_id.clone(),
                    prompt_hash: outcome.prompt_hash,
                    prompt: outcome.prompt,
                };
                let line = serde_json::to_string(&row)
                    .map_err(|e| AnnotateError::Io(std::io::Error::other(e)))?;
                writer.write_all(line.as_bytes())?;
                writer.write_all(b"\n")?;
                writer.flush()?;
                predictions.push(outcome.prediction);
                next_write += 1;
            }
        }
        Ok(())
    })?;

    let error_count = predictions.iter().filter(|p| !p.is_valid()).count();
    let total_latency: u64 = predictions.iter().map(|p| p.latency_ms).sum();
    let tokens_present = ctx.tokens_seen.load(Ordering::Relaxed) > 0;
    let summary = RunSummary {
        n,
        valid: n - error_count,
        error_count,
        wall_clock_s: started.elapsed().as_secs_f64(),
        mean_latency_ms: if n == 0 { 0.0 } else { total_latency as f64 / n as f64 },
        backend_calls: ctx.backend_calls.load(Ordering::Relaxed),
        cache_hits: ctx.cache_hits.load(Ordering::Relaxed),
        prompt_tokens: tokens_present.then(|| ctx.prompt_tokens.load(Ordering::Relaxed)),
        completion_tokens: tokens_present.then(|| ctx.completion_tokens.load(Ordering::Relaxed)),
    };
    Ok((predictions, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Dataset;
    use crate::domain::{builtin_scheme, LabeledExample};
    use crate::embed::hash_embed;
    use crate::llm::MockMode;

    fn wands() -> LabelScheme {
        builtin_scheme("wands").unwrap()
    }

    #[test]
    fn parses_single_quoted_structure() {
        assert_eq!(parse_label("{'rating': 'Partial'}", &wands()).unwrap(), "Partial");
    }

    #[test]
    fn parses_last_structure_after_cot_preamble() {
        let response = "Let's think step by step: the title covers every modifier, so the match is complete. {\"rating\": \"Exact\"}";
        assert_eq!(parse_label(response, &wands()).unwrap(), "Exact");
    }

    #[test]
    fn last_occurrence_wins() {
        let response = "{'rating': 'Exact'} ... on reflection, revised: {'rating': 'Partial'}";
        assert_eq!(parse_label(response, &wands()).unwrap(), "Partial");
    }

    #[test]
    fn garbage_is_no_label_found() {
        assert_eq!(
            parse_label("I cannot decide.", &wands()).unwrap_err(),
            ParseLabelError::NoLabelFound
        );
    }

    #[test]
    fn structure_with_foreign_label_is_unknown_label() {
        assert_eq!(
            parse_label("{'rating': 'Perfect'}", &wands()).unwrap_err(),
            ParseLabelError::UnknownLabel("Perfect".into())
        );
    }

    #[test]
    fn fallback_accepts_unique_standalone_label() {
        assert_eq!(
            parse_label("The product is an exact match for this query.", &wands()).unwrap(),
            "Exact"
        );
    }

    #[test]
    fn fallback_rejects_two_distinct_labels() {
        assert_eq!(
            parse_label("Could be Exact, could be Partial.", &wands()).unwrap_err(),
            ParseLabelError::NoLabelFound
        );
    }

    fn job(strategy: Strategy, k: usize, endpoint: &str, dir: &Path) -> (AnnotationJob, Dataset) {
        let scheme = wands();
        let pool_examples: Vec<LabeledExample> = (0..12)
            .map(|i| {
                LabeledExample::new(
                    QPPair::new(format!("pool query {i}"), format!("pool title {i}")).unwrap(),
                    scheme.labels[i % 3].clone(),
                )
                .with_rationale(format!("Let's think step by step: pool case {i}."))
            })
            .collect();
        let test_examples: Vec<LabeledExample> = (0..6)
            .map(|i| {
                LabeledExample::new(
                    QPPair::new(format!("test query {i}"), format!("test title {i}")).unwrap(),
                    scheme.labels[i % 3].clone(),
                )
            })
            .collect();
        let pool = Dataset::new(scheme.clone(), pool_examples, "pool");
        let test = Dataset::new(scheme.clone(), test_examples, "test");
        let mut prompt_config = PromptConfig::new(strategy, k, scheme);
        if strategy == Strategy::RagMmrFs {
            prompt_config.lambda = Some(0.5);
        }
        let job = AnnotationJob {
            test_set: test,
            pool: pool.clone(),
            prompt_config,
            llm_config: LlmConfig::new("mock-model", endpoint),
            embedder: EmbedderSpec::hash(64),
            concurrency: 4,
            output_path: dir.join("preds.jsonl"),
            config_id: "TEST + CFG".into(),
            keep_prompts: false,
            retry: RetryPolicy {
                max_attempts: 2,
                base_delay: std::time::Duration::from_millis(1),
                jitter: 0.0,
            },
        };
        (job, pool)
    }

    fn store_for(pool: &Dataset) -> Store {
        let mut store = Store::new(64);
        for e in &pool.examples {
            store
                .insert(e.clone(), hash_embed(&e.pair.pair_text(), 64))
                .unwrap();
        }
        store.freeze();
        store
    }

    #[test]
    fn oracle_batch_is_perfect_and_ordered() {
        let dir = tempfile::tempdir().unwrap();
        let (job, pool) = job(Strategy::RagFs, 3, "mock:oracle", dir.path());
        let store = store_for(&pool);
        let cache = Cache::in_memory();
        let (preds, summary) = label_batch(&job, Some(&store), &cache).unwrap();
        assert_eq!(preds.len(), 6);
        assert_eq!(summary.error_count, 0);
        for (p, e) in preds.iter().zip(&job.test_set.examples) {
            assert_eq!(p.pair, e.pair);
            assert_eq!(p.predicted.as_deref(), Some(e.label.as_str()));
        }
        let rows = read_prediction_rows(&job.output_path).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[0].query, "test query 0");
        assert!(rows.iter().all(|r| r.prompt.is_none()));
    }

    #[test]
    fn garbage_backend_yields_failed_predictions_not_errors() {
        struct Garbage;
        impl Backend for Garbage {
            fn call(&self, _: &str, _: &LlmConfig) -> Result<crate::llm::BackendReply, crate::llm::BackendCallError> {
                Ok(crate::llm::BackendReply {
                    text: "?????".into(),
                    token_counts: None,
                })
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let (job, _) = job(Strategy::ZeroShot, 0, "mock:oracle", dir.path());
        let cache = Cache::in_memory();
        let (preds, summary) = label_batch_with_backend(&job, None, &Garbage, &cache).unwrap();
        assert_eq!(summary.error_count, 6);
        assert!(preds.iter().all(|p| p.parse_error.as_deref() == Some(
            "NoLabelFound: no rating structure and no unique standalone label"
        )));
    }

    #[test]
    fn backend_exhaustion_is_captured_per_pair() {
        struct AlwaysDown;
        impl Backend for AlwaysDown {
            fn call(&self, _: &str, _: &LlmConfig) -> Result<crate::llm::BackendReply, crate::llm::BackendCallError> {
                Err(crate::llm::BackendCallError::Retryable {
                    status: Some(503),
                    message: "down".into(),
                })
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let (job, _) = job(Strategy::ZeroShot, 0, "mock:oracle", dir.path());
        let cache = Cache::in_memory();
        let (preds, summary) = label_batch_with_backend(&job, None, &AlwaysDown, &cache).unwrap();
        assert_eq!(preds.len(), 6);
        assert_eq!(summary.error_count, 6);
        assert!(preds[0].parse_error.as_deref().unwrap().starts_with("backend:"));
    }

    #[test]
    fn rag_job_excludes_own_pair_when_pool_contains_it() {
        let dir = tempfile::tempdir().unwrap();
        let scheme = wands();
        let shared = LabeledExample::new(QPPair::new("shared q", "shared t").unwrap(), "Exact")
            .with_rationale("Let's think step by step: shared.");
        let mut pool_examples = vec![shared.clone()];
        pool_examples.extend((0..3).map(|i| {
            LabeledExample::new(
                QPPair::new(format!("q{i}"), format!("t{i}")).unwrap(),
                "Partial",
            )
        }));
        let pool = Dataset::new(scheme.clone(), pool_examples, "pool");
        let test = Dataset::new(scheme.clone(), vec![shared], "test");
        let store = store_for(&pool);
        let job = AnnotationJob {
            test_set: test,
            pool,
            prompt_config: PromptConfig::new(Strategy::RagFs, 3, scheme),
            llm_config: LlmConfig::new("m", "mock:oracle"),
            embedder: EmbedderSpec::hash(64),
            concurrency: 1,
            output_path: dir.path().join("p.jsonl"),
            config_id: "C".into(),
            keep_prompts: true,
            retry: RetryPolicy::default(),
        };
        let cache = Cache::in_memory();
        let (preds, _) = label_batch(&job, Some(&store), &cache).unwrap();
        assert_eq!(preds[0].predicted.as_deref(), Some("Exact"));
        let rows = read_prediction_rows(&job.output_path).unwrap();
        let prompt = rows[0].prompt.as_deref().unwrap();
        // The question pair appears once, as the question, never as an example.
        assert_eq!(prompt.matches("query: shared q, product title: shared t").count(), 1);
    }

    #[test]
    fn concurrency_one_and_eight_agree() {
        let dir = tempfile::tempdir().unwrap();
        let (mut job, pool) = job(Strategy::RagMmrFs, 4, "mock:noisy:0.3:11", dir.path());
        let store = store_for(&pool);

        job.concurrency = 1;
        job.output_path = dir.path().join("c1.jsonl");
        let (a, _) = label_batch(&job, Some(&store), &Cache::in_memory()).unwrap();

        job.concurrency = 8;
        job.output_path = dir.path().join("c8.jsonl");
        let (b, _) = label_batch(&job, Some(&store), &Cache::in_memory()).unwrap();

        // Latency is a timing measurement, not pipeline content; everything
        // else must agree exactly.
        let strip = |preds: &[Prediction]| {
            preds
                .iter()
                .map(|p| (p.pair.clone(), p.gold.clone(), p.predicted.clone(), p.parse_error.clone()))
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&a), strip(&b));
    }

    #[test]
    fn rerun_with_warm_cache_makes_zero_backend_calls() {
        let dir = tempfile::tempdir().unwrap();
        let (job, pool) = job(Strategy::RagFs, 3, "mock:oracle", dir.path());
        let store = store_for(&pool);
        let cache_path = dir.path().join("cache.jsonl");

        let cache = Cache::open(&cache_path).unwrap();
        let (_, cold) = label_batch(&job, Some(&store), &cache).unwrap();
        assert_eq!(cold.backend_calls, 6);
        let first_bytes = std::fs::read(&job.output_path).unwrap();
        drop(cache);

        let cache = Cache::open(&cache_path).unwrap();
        let (_, warm) = label_batch(&job, Some(&store), &cache).unwrap();
        assert_eq!(warm.backend_calls, 0);
        assert_eq!(warm.cache_hits, 6);
        assert_eq!(std::fs::read(&job.output_path).unwrap(), first_bytes);
    }

    #[test]
    fn unwritable_output_path_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let (mut job, _) = job(Strategy::ZeroShot, 0, "mock:oracle", dir.path());
        job.output_path = dir.path().join("no_such_dir").join("preds.jsonl");
        let err = label_batch(&job, None, &Cache::in_memory()).unwrap_err();
        assert!(matches!(err, AnnotateError::OutputUnwritable { .. }));
    }

    #[test]
    fn mock_mode_round_trip_through_endpoint_spec() {
        assert!(matches!(
            crate::llm::parse_mock_endpoint("mock:noisy:0.2:42").unwrap().mode,
            MockMode::Noisy { .. }
        ));
    }
}
