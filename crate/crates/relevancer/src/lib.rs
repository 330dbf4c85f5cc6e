//! Batch labeling of query-product pairs with retrieval-augmented,
//! diversity-selected few-shot prompts against pluggable LLM backends, plus
//! the metrics to score the results against gold labels.
//!
//! The pipeline, end to end: ingest labeled pairs ([`dataset`]), embed them
//! ([`embed`]) into a frozen vector store ([`store`]), select and render
//! few-shot prompts ([`prompt`]), dispatch them with caching and retries
//! ([`llm`]), parse labels back out ([`annotate`]), score ([`eval`]), and
//! drive whole experiment grids ([`runner`]).

pub mod annotate;
pub mod dataset;
pub mod domain;
pub mod embed;
pub mod eval;
pub mod llm;
pub mod prompt;
pub mod runner;
pub mod store;

#[cfg(test)]
pub(crate) mod testutil;

pub use annotate::{label_batch, label_pair, parse_label, AnnotationJob, PredictionRow};
pub use dataset::{exclude_overlap, load, stratified_sample, ColumnMapping, Dataset};
pub use domain::{
    builtin_scheme, normalize_label, LabelScheme, LabeledExample, PairKey, Prediction, QPPair,
};
pub use embed::{embed_pair, hash_embed, EmbedderSpec, EmbeddingVector};
pub use eval::{compare, confusion, metrics, ConfusionMatrix, MetricsReport};
pub use llm::{complete, Cache, CompletionRecord, LlmConfig};
pub use prompt::{assemble, select_examples, AssembledPrompt, PromptConfig, Strategy};
pub use runner::{expand_grid, parse_config_id, run_grid, GridFile, ResultRow};
pub use store::{Store, StoredExample};
