//! Few-shot demonstration selection and prompt assembly.
//!
//! A prompt has three parts: an instruction block (task sentence, one
//! definition line per scheme label, output-format sentence), an optional
//! examples block, and the question pair. Rendering is byte-deterministic:
//! equal inputs produce equal prompt text, and the whole prompt ends on the
//! question pair line with no trailing newline.

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{fisher_yates, Dataset};
use crate::domain::{LabelScheme, LabeledExample, QPPair};
use crate::embed::{embed_pair, EmbedderSpec, EmbeddingVector};
use crate::store::{default_mmr_pool, Store, StoreError};

/// The literal cue that every rendered chain-of-thought rationale line
/// starts with.
pub const COT_CUE: &str = "Let's think step by step";

/// Header line introducing the examples block.
pub const EXAMPLES_HEADER: &str = "#### Here are some examples:";

/// Line introducing the question pair.
pub const QUESTION_HEADER: &str = "Now rate the relevance of this pair:";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("pool has {available} usable examples, strategy needs {needed}")]
    PoolTooSmall { needed: usize, available: usize },
    #[error("chain-of-thought needs a rationale on every example; missing for {pair:?}")]
    MissingRationale { pair: String },
    #[error("expected {expected} examples, got {got}")]
    ExampleCountMismatch { expected: usize, got: usize },
    #[error("strategy requires a frozen store over the pool")]
    NeedStore,
    #[error("strategy requires an embedder for the question pair")]
    NeedEmbedder,
    #[error("prompt config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Embed(#[from] crate::embed::EmbedError),
}

/// How demonstrations are chosen for a question pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    ZeroShot,
    RandomFs,
    RagFs,
    RagMmrFs,
}

/// Full prompting configuration for one experiment cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptConfig {
    pub strategy: Strategy,
    pub k: usize,
    pub lambda: Option<f64>,
    pub cot: bool,
    pub seed: u64,
    pub scheme: LabelScheme,
    /// Render examples least-relevant-first instead of selection order.
    #[serde(default)]
    pub reverse: bool,
    /// MMR candidate prefilter size; `None` means `max(10 * k, 64)`.
    #[serde(default)]
    pub mmr_pool: Option<usize>,
}

impl PromptConfig {
    pub fn new(strategy: Strategy, k: usize, scheme: LabelScheme) -> Self {
        PromptConfig {
            strategy,
            k,
            lambda: None,
            cot: false,
            seed: 0,
            scheme,
            reverse: false,
            mmr_pool: None,
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        self.scheme
            .validate()
            .map_err(|e| PromptError::BadConfig(e.to_string()))?;
        if (self.k == 0) != (self.strategy == Strategy::ZeroShot) {
            return Err(PromptError::BadConfig(format!(
                "k must be 0 exactly for zero_shot (strategy {:?}, k {})",
                self.strategy, self.k
            )));
        }
        match (self.strategy, self.lambda) {
            (Strategy::RagMmrFs, None) => {
                return Err(PromptError::BadConfig("rag_mmr_fs requires lambda".into()))
            }
            (Strategy::RagMmrFs, Some(l)) if !(0.0..=1.0).contains(&l) => {
                return Err(PromptError::BadConfig(format!("lambda {l} outside [0, 1]")))
            }
            _ => {}
        }
        Ok(())
    }

    /// Whether this configuration sits on the published experiment grid
    /// (k of 0, 8, or 16); other values run fine but are flagged non-grid.
    pub fn is_paper_grid_k(&self) -> bool {
        matches!(self.k, 0 | 8 | 16)
    }

    /// The strategy half of a grid config id, e.g. `VANILLA`, `8_FS_COT`,
    /// or `16_FS_RAG_MMR_0.25` (lambda printed with minimal decimals).
    pub fn grid_suffix(&self) -> String {
        let cot = if self.cot { "_COT" } else { "" };
        match self.strategy {
            Strategy::ZeroShot => "VANILLA".into(),
            Strategy::RandomFs => format!("{}_FS{cot}", self.k),
            Strategy::RagFs => format!("{}_FS_RAG{cot}", self.k),
            Strategy::RagMmrFs => {
                let lambda = self.lambda.unwrap_or(1.0);
                format!("{}_FS_RAG_MMR_{}{cot}", self.k, lambda)
            }
        }
    }
}

/// A demonstration plus the id it was selected under (store insertion id for
/// retrieval strategies, pool row index for random sampling).
#[derive(Debug, Clone, PartialEq)]
pub struct SelectedExample {
    pub id: u64,
    pub example: LabeledExample,
}

/// The exact prompt text for one question pair, plus the demonstrations it
/// was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledPrompt {
    pub text: String,
    pub example_ids: Vec<u64>,
    pub config_id: String,
}

/// Selects demonstrations for `question` according to the strategy. Returns
/// them in selection order, most relevant first for retrieval strategies.
/// Retrieval never returns the question pair itself.
pub fn select_examples(
    config: &PromptConfig,
    question: &QPPair,
    pool: &Dataset,
    store: Option<&Store>,
    embedder: Option<&EmbedderSpec>,
) -> Result<Vec<SelectedExample>, PromptError> {
    let question_vec = match config.strategy {
        Strategy::RagFs | Strategy::RagMmrFs => {
            let spec = embedder.ok_or(PromptError::NeedEmbedder)?;
            Some(embed_pair(question, spec)?)
        }
        _ => None,
    };
    select_examples_with_vector(config, question, question_vec.as_ref(), pool, store)
}

/// Like [`select_examples`] but takes a pre-computed question embedding, so
/// batch callers can embed the whole test set up front.
pub fn select_examples_with_vector(
    config: &PromptConfig,
    question: &QPPair,
    question_vec: Option<&EmbeddingVector>,
    pool: &Dataset,
    store: Option<&Store>,
) -> Result<Vec<SelectedExample>, PromptError> {
    config.validate()?;
    let selected = match config.strategy {
        Strategy::ZeroShot => Vec::new(),
        Strategy::RandomFs => {
            if pool.len() < config.k {
                return Err(PromptError::PoolTooSmall {
                    needed: config.k,
                    available: pool.len(),
                });
            }
            let mut indices: Vec<usize> = (0..pool.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            fisher_yates(&mut indices, &mut rng);
            indices
                .into_iter()
                .take(config.k)
                .map(|i| SelectedExample {
                    id: i as u64,
                    example: pool.examples[i].clone(),
                })
                .collect()
        }
        Strategy::RagFs | Strategy::RagMmrFs => {
            let store = store.ok_or(PromptError::NeedStore)?;
            let question_vec = question_vec.ok_or(PromptError::NeedEmbedder)?;
            let exclude: HashSet<_> = std::iter::once(question.key()).collect();
            let hits = match config.strategy {
                Strategy::RagFs => store.top_k(question_vec, config.k, &exclude)?,
                Strategy::RagMmrFs => {
                    let lambda = config.lambda.expect("validated");
                    let pool_size = config.mmr_pool.unwrap_or_else(|| default_mmr_pool(config.k));
                    store.mmr_select(question_vec, config.k, lambda, pool_size, &exclude)?
                }
                _ => unreachable!(),
            };
            if hits.len() < config.k {
                return Err(PromptError::PoolTooSmall {
                    needed: config.k,
                    available: hits.len(),
                });
            }
            hits.into_iter()
                .map(|e| SelectedExample {
                    id: e.id,
                    example: e.example.clone(),
                })
                .collect()
        }
    };
    if config.cot {
        for sel in &selected {
            match &sel.example.rationale {
                Some(r) if !r.trim().is_empty() => {}
                _ => {
                    return Err(PromptError::MissingRationale {
                        pair: sel.example.pair.pair_text(),
                    })
                }
            }
        }
    }
    Ok(selected)
}

/// Renders the instruction block for a scheme: the task sentence listing the
/// candidate labels, one definition line per label, and the output-format
/// sentence. Built-in schemes reproduce the shipped instruction fixtures.
pub fn instruction_block(scheme: &LabelScheme) -> String {
    let quoted: Vec<String> = scheme.labels.iter().map(|l| format!("'{l}'")).collect();
    let options = quoted.join(", ");
    let either = match quoted.len() {
        1 => quoted[0].clone(),
        2 => format!("{} or {}", quoted[0], quoted[1]),
        n => format!("{}, or {}", quoted[..n - 1].join(", "), quoted[n - 1]),
    };
    let mut out = format!(
        "You are a search engine in an eCommerce website. For a given customer query and a product title, please annotate each product title in the list as one of these options: {options}.\n"
    );
    for label in &scheme.labels {
        out.push_str(label);
        out.push_str(" : ");
        out.push_str(scheme.definition(label));
        out.push('\n');
    }
    out.push_str(&format!(
        "The response should be in a python dictionary format {{\"rating\":label}}, where label which is either {either}."
    ));
    out
}

fn render_example(example: &LabeledExample, cot: bool) -> String {
    let mut out = example.pair.pair_text();
    out.push('\n');
    if cot {
        // Rationales render on one line and always start with the literal cue.
        let rationale = example.rationale.as_deref().unwrap_or_default().trim();
        if rationale.starts_with(COT_CUE) {
            out.push_str(rationale);
        } else {
            out.push_str(COT_CUE);
            out.push_str(": ");
            out.push_str(rationale);
        }
        out.push('\n');
    }
    out.push_str(&format!("{{'rating': '{}'}}", example.label));
    out
}

/// Assembles the full prompt text. Demonstrations render in the given order
/// (reversed when the config asks for it); zero-shot prompts omit the
/// examples header and block entirely.
pub fn assemble(
    config: &PromptConfig,
    question: &QPPair,
    examples: &[SelectedExample],
) -> Result<AssembledPrompt, PromptError> {
    config.validate()?;
    if examples.len() != config.k {
        return Err(PromptError::ExampleCountMismatch {
            expected: config.k,
            got: examples.len(),
        });
    }
    if config.cot {
        for sel in examples {
            if sel.example.rationale.as_deref().is_none_or(|r| r.trim().is_empty()) {
                return Err(PromptError::MissingRationale {
                    pair: sel.example.pair.pair_text(),
                });
            }
        }
    }
    let ordered: Vec<&SelectedExample> = if config.reverse {
        examples.iter().rev().collect()
    } else {
        examples.iter().collect()
    };

    let mut text = instruction_block(&config.scheme);
    if !ordered.is_empty() {
        text.push_str("\n\n");
        text.push_str(EXAMPLES_HEADER);
        text.push_str("\n\n");
        let rendered: Vec<String> = ordered
            .iter()
            .map(|sel| render_example(&sel.example, config.cot))
            .collect();
        text.push_str(&rendered.join("\n\n"));
    }
    text.push_str("\n\n");
    text.push_str(QUESTION_HEADER);
    text.push('\n');
    text.push_str(&question.pair_text());

    Ok(AssembledPrompt {
        text,
        example_ids: ordered.iter().map(|sel| sel.id).collect(),
        config_id: config.grid_suffix(),
    })
}
