//! Deterministic mock backends: desk-scale stand-ins for hosted models.
//!
//! The mock reads the question pair back out of the prompt's final
//! `query: .., product title: ..` line and answers in the rating template.
//! Endpoint specs: `mock:oracle`, `mock:fixed:<Label>`,
//! `mock:noisy:<flip_rate>:<seed>`, each optionally followed by
//! `:delay=<ms>` to simulate backend latency.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{LabelScheme, PairKey};
use crate::embed::fnv1a64;

use super::{Backend, BackendCallError, BackendReply, LlmConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum MockMode {
    /// Answer with the gold label of the asked pair.
    Oracle,
    /// Answer with one fixed label regardless of the pair.
    Fixed(String),
    /// Answer with gold with probability `1 - flip_rate`, otherwise with a
    /// uniformly random *other* scheme label. The flip decision is seeded
    /// per pair, so outcomes are independent of call order and concurrency.
    Noisy { flip_rate: f64, seed: u64 },
}

pub struct MockBackend {
    mode: MockMode,
    scheme: LabelScheme,
    gold: HashMap<PairKey, String>,
    delay: Option<Duration>,
    calls: AtomicU64,
}

impl MockBackend {
    pub fn new(mode: MockMode, scheme: LabelScheme, gold: HashMap<PairKey, String>) -> Self {
        MockBackend {
            mode,
            scheme,
            gold,
            delay: None,
            calls: AtomicU64::new(0),
        }
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = Some(delay);
        self
    }

    /// Number of calls served so far; lets tests assert warm-cache runs hit
    /// the backend zero times.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    fn rating(label: &str) -> BackendReply {
        BackendReply {
            text: format!("{{'rating': '{label}'}}"),
            token_counts: None,
        }
    }

    fn gold_for(&self, key: &PairKey) -> Result<&String, BackendCallError> {
        self.gold
            .get(key)
            .ok_or_else(|| BackendCallError::Fatal(format!("unknown pair {key}")))
    }
}

impl Backend for MockBackend {
    fn call(&self, prompt: &str, _config: &LlmConfig) -> Result<BackendReply, BackendCallError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(delay) = self.delay {
            std::thread::sleep(delay);
        }
        let (query, title) = extract_question_pair(prompt)
            .ok_or_else(|| BackendCallError::Fatal("no question pair line in prompt".into()))?;
        let key = PairKey::new(&query, &title);
        match &self.mode {
            MockMode::Fixed(label) => Ok(Self::rating(label)),
            MockMode::Oracle => Ok(Self::rating(self.gold_for(&key)?)),
            MockMode::Noisy { flip_rate, seed } => {
                let gold = self.gold_for(&key)?;
                let pair_hash = fnv1a64(query.trim().to_lowercase().as_bytes())
                    ^ fnv1a64(title.trim().to_lowercase().as_bytes()).rotate_left(17);
                let mut rng = ChaCha8Rng::seed_from_u64(pair_hash ^ seed);
                let draw = rng.next_u64() as f64 / u64::MAX as f64;
                if draw < *flip_rate {
                    let others: Vec<&String> =
                        self.scheme.labels.iter().filter(|l| *l != gold).collect();
                    if others.is_empty() {
                        return Ok(Self::rating(gold));
                    }
                    let pick = (rng.next_u64() % others.len() as u64) as usize;
                    Ok(Self::rating(others[pick]))
                } else {
                    Ok(Self::rating(gold))
                }
            }
        }
    }
}

/// Pulls the question pair out of the last `query: .., product title: ..`
/// line of a prompt. Queries containing the literal separator text are not
/// supported.
pub fn extract_question_pair(prompt: &str) -> Option<(String, String)> {
    let line = prompt
        .lines()
        .rev()
        .find(|l| l.starts_with("query: ") && l.contains(", product title: "))?;
    let rest = line.strip_prefix("query: ")?;
    let (query, title) = rest.split_once(", product title: ")?;
    Some((query.to_string(), title.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockEndpoint {
    pub mode: MockMode,
    pub delay: Option<Duration>,
}

/// Parses a `mock:` endpoint spec; returns `None` for anything malformed.
pub fn parse_mock_endpoint(endpoint: &str) -> Option<MockEndpoint> {
    let rest = endpoint.strip_prefix("mock:")?;
    let mut tokens: Vec<&str> = rest.split(':').collect();
    let delay = match tokens.last().and_then(|t| t.strip_prefix("delay=")) {
        Some(ms) => {
            let ms: u64 = ms.parse().ok()?;
            tokens.pop();
            Some(Duration::from_millis(ms))
        }
        None => None,
    };
    let mode = match tokens.as_slice() {
        ["oracle"] => MockMode::Oracle,
        ["fixed", label] if !label.is_empty() => MockMode::Fixed((*label).to_string()),
        ["noisy", rate, seed] => {
            let flip_rate: f64 = rate.parse().ok()?;
            if !(0.0..=1.0).contains(&flip_rate) {
                return None;
            }
            MockMode::Noisy {
                flip_rate,
                seed: seed.parse().ok()?,
            }
        }
        _ => return None,
    };
    Some(MockEndpoint { mode, delay })
}
