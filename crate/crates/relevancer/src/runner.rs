//! Experiment grids: expand a declarative config into named (model,
//! strategy) cells, run them resumably, and consolidate Table-style reports.
//!
//! A grid run is deterministic given deterministic backends and fixed seeds,
//! and a warm-cache rerun performs zero backend calls while reproducing the
//! consolidated report byte for byte. Timing is measured when the work
//! actually happens and persisted in a sidecar, so reruns report the
//! original cost instead of re-measuring a no-op.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::{label_batch, AnnotateError, AnnotationJob, RunSummary};
use crate::dataset::{exclude_overlap, load, ColumnMapping, Dataset, DatasetError};
use crate::domain::{builtin_scheme, DomainError, LabelScheme};
use crate::embed::{embed_pairs, EmbedError, EmbedderSpec};
use crate::eval::{confusion, metrics, EvalError, MetricsReport, SortKey};
use crate::llm::{Cache, LlmConfig, LlmError, RetryPolicy};
use crate::prompt::{PromptConfig, Strategy};
use crate::store::{Store, StoreError};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("duplicate config id {0:?}")]
    DuplicateConfig(String),
    #[error("grid config: {0}")]
    BadGrid(String),
    #[error("no expanded config matches {0:?}")]
    UnknownConfigId(String),
    #[error("report file: {0}")]
    BadReport(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Annotate(#[from] AnnotateError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Whole grid file: datasets, embedder, models, strategy templates, and
/// optional per-1k-token pricing used for cost estimates.
#[derive(Debug, Clone, Deserialize)]
pub struct GridFile {
    pub grid: GridSection,
    pub embedder: EmbedderSpec,
    #[serde(default)]
    pub models: Vec<ModelEntry>,
    #[serde(default)]
    pub strategies: Vec<StrategyEntry>,
    #[serde(default)]
    pub pricing: BTreeMap<String, Price>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct GridSection {
    pub test: PathBuf,
    pub pool: PathBuf,
    pub scheme: String,
    #[serde(default = "default_cache_dir")]
    pub cache_dir: PathBuf,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub keep_prompts: bool,
    #[serde(default)]
    pub test_mapping: Option<PathBuf>,
    #[serde(default)]
    pub pool_mapping: Option<PathBuf>,
}

fn default_cache_dir() -> PathBuf {
    PathBuf::from(".cache")
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("predictions")
}

fn default_concurrency() -> usize {
    8
}

#[derive(Debug, Clone, Deserialize)]
pub struct ModelEntry {
    /// Display name used in config ids; defaults to the model id.
    #[serde(default)]
    pub name: Option<String>,
    pub model: String,
    pub endpoint: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_top_p")]
    pub top_p: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

fn default_top_p() -> f64 {
    1.0
}

fn default_max_tokens() -> u32 {
    256
}

impl ModelEntry {
    pub fn display_name(&self) -> &str {
        self.name.as_deref().unwrap_or(&self.model)
    }

    pub fn llm_config(&self) -> LlmConfig {
        LlmConfig {
            model: self.model.clone(),
            temperature: self.temperature,
            top_p: self.top_p,
            max_tokens: self.max_tokens,
            endpoint: self.endpoint.clone(),
        }
    }
}

/// One strategy template; `ks` and `lambdas` expand combinatorially.
/// Omitted lists default to the published grid values (k in {8, 16};
/// lambda in {0.75, 0.5, 0.25, 0}).
#[derive(Debug, Clone, Deserialize)]
pub struct StrategyEntry {
    pub kind: Strategy,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub ks: Option<Vec<usize>>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default)]
    pub cot: bool,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub reverse: bool,
    #[serde(default)]
    pub mmr_pool: Option<usize>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
pub struct Price {
    pub prompt_per_1k: f64,
    pub completion_per_1k: f64,
}

impl GridFile {
    /// Parses a grid file, resolving relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<GridFile, RunnerError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut grid: GridFile =
            toml::from_str(&text).map_err(|e| RunnerError::BadGrid(e.to_string()))?;
        if let Some(base) = path.parent() {
            let resolve = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&p);
                }
            };
            resolve(&mut grid.grid.test);
            resolve(&mut grid.grid.pool);
            resolve(&mut grid.grid.cache_dir);
            resolve(&mut grid.grid.output_dir);
            if let Some(m) = grid.grid.test_mapping.as_mut() {
                resolve(m);
            }
            if let Some(m) = grid.grid.pool_mapping.as_mut() {
                resolve(m);
            }
        }
        Ok(grid)
    }
}

/// Resolves a scheme reference: a builtin name first, otherwise a path to a
/// scheme definition file.
pub fn resolve_scheme(reference: &str) -> Result<LabelScheme, DomainError> {
    match builtin_scheme(reference) {
        Ok(scheme) => Ok(scheme),
        Err(DomainError::UnknownScheme(_)) if Path::new(reference).exists() => {
            LabelScheme::from_file(reference)
        }
        Err(e) => Err(e),
    }
}

/// One runnable cell of the grid.
#[derive(Debug, Clone)]
pub struct ExpandedConfig {
    pub config_id: String,
    pub model_name: String,
    pub prompt: PromptConfig,
    pub llm: LlmConfig,
}

const PAPER_KS: [usize; 2] = [8, 16];
const PAPER_LAMBDAS: [f64; 4] = [0.75, 0.5, 0.25, 0.0];

/// Expands models x strategies into uniquely named configs, in declaration
/// order. Config ids follow the published naming exactly:
/// `{MODEL} + VANILLA`, `{MODEL} + {k}_FS[_COT]`, `{MODEL} + {k}_FS_RAG[_COT]`,
/// `{MODEL} + {k}_FS_RAG_MMR_{lambda}`.
pub fn expand_grid(
    grid: &GridFile,
    scheme: &LabelScheme,
) -> Result<Vec<ExpandedConfig>, RunnerError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for model in &grid.models {
        for entry in &grid.strategies {
            for prompt in expand_strategy(entry, scheme, grid.grid.seed)? {
                let config_id = format!("{} + {}", model.display_name(), prompt.grid_suffix());
                if !seen.insert(config_id.clone()) {
                    return Err(RunnerError::DuplicateConfig(config_id));
                }
                out.push(ExpandedConfig {
                    config_id,
                    model_name: model.display_name().to_string(),
                    prompt,
                    llm: model.llm_config(),
                });
            }
        }
    }
    Ok(out)
}

fn expand_strategy(
    entry: &StrategyEntry,
    scheme: &LabelScheme,
    grid_seed: u64,
) -> Result<Vec<PromptConfig>, RunnerError> {
    let ks: Vec<usize> = match (&entry.ks, entry.k) {
        (Some(ks), _) => ks.clone(),
        (None, Some(k)) => vec![k],
        (None, None) => PAPER_KS.to_vec(),
    };
    let lambdas: Vec<f64> = match (&entry.lambdas, entry.lambda) {
        (Some(ls), _) => ls.clone(),
        (None, Some(l)) => vec![l],
        (None, None) => PAPER_LAMBDAS.to_vec(),
    };
    if entry.kind != Strategy::RagMmrFs && (entry.lambdas.is_some() || entry.lambda.is_some()) {
        return Err(RunnerError::BadGrid(format!(
            "lambda only applies to rag_mmr_fs, not {:?}",
            entry.kind
        )));
    }
    if entry.kind == Strategy::RagMmrFs && entry.cot {
        return Err(RunnerError::BadGrid(
            "rag_mmr_fs with cot has no published config naming; drop cot or use rag_fs".into(),
        ));
    }
    if entry.kind == Strategy::ZeroShot && entry.cot {
        return Err(RunnerError::BadGrid("zero_shot has no examples to carry rationales".into()));
    }

    let mut base = PromptConfig::new(entry.kind, 0, scheme.clone());
    base.cot = entry.cot;
    base.seed = entry.seed.unwrap_or(grid_seed);
    base.reverse = entry.reverse;
    base.mmr_pool = entry.mmr_pool;

    let mut configs = Vec::new();
    match entry.kind {
        Strategy::ZeroShot => {
            configs.push(base);
        }
        Strategy::RandomFs | Strategy::RagFs => {
            for &k in &ks {
                let mut c = base.clone();
                c.k = k;
                configs.push(c);
            }
        }
        Strategy::RagMmrFs => {
            for &k in &ks {
                for &lambda in &lambdas {
                    let mut c = base.clone();
                    c.k = k;
                    c.lambda = Some(lambda);
                    configs.push(c);
                }
            }
        }
    }
    for c in &configs {
        c.validate()
            .map_err(|e| RunnerError::BadGrid(e.to_string()))?;
        if !c.is_paper_grid_k() {
            eprintln!(
                "note: k={} is off the published grid (expected 0, 8, or 16)",
                c.k
            );
        }
    }
    Ok(configs)
}

/// The strategy templates that make up the full published grid shape:
/// 17 rows per model.
pub fn paper_grid_strategies() -> Vec<StrategyEntry> {
    let blank = StrategyEntry {
        kind: Strategy::ZeroShot,
        k: None,
        ks: None,
        lambda: None,
        lambdas: None,
        cot: false,
        seed: None,
        reverse: false,
        mmr_pool: None,
    };
    let with = |kind: Strategy, cot: bool| StrategyEntry { kind, cot, ..blank.clone() };
    vec![
        with(Strategy::ZeroShot, false),
        with(Strategy::RandomFs, false),
        with(Strategy::RagFs, false),
        with(Strategy::RandomFs, true),
        with(Strategy::RagFs, true),
        with(Strategy::RagMmrFs, false),
    ]
}

/// A parsed config id, the inverse of the grid naming.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedConfigId {
    pub model: String,
    pub strategy: Strategy,
    pub k: usize,
    pub lambda: Option<f64>,
    pub cot: bool,
}

/// Parses `{MODEL} + {SUFFIX}` back into its parts; `None` for anything off
/// the naming grammar.
pub fn parse_config_id(config_id: &str) -> Option<ParsedConfigId> {
    let (model, suffix) = config_id.rsplit_once(" + ")?;
    if model.is_empty() {
        return None;
    }
    let mut parsed = ParsedConfigId {
        model: model.to_string(),
        strategy: Strategy::ZeroShot,
        k: 0,
        lambda: None,
        cot: false,
    };
    if suffix == "VANILLA" {
        return Some(parsed);
    }
    let mut rest = suffix;
    if let Some(stripped) = rest.strip_suffix("_COT") {
        parsed.cot = true;
        rest = stripped;
    }
    if let Some((k_text, tail)) = rest.split_once('_') {
        parsed.k = k_text.parse().ok()?;
        if parsed.k == 0 {
            return None;
        }
        match tail {
            "FS" => parsed.strategy = Strategy::RandomFs,
            "FS_RAG" => parsed.strategy = Strategy::RagFs,
            _ => {
                let lambda_text = tail.strip_prefix("FS_RAG_MMR_")?;
                let lambda: f64 = lambda_text.parse().ok()?;
                if !(0.0..=1.0).contains(&lambda) {
                    return None;
                }
                parsed.strategy = Strategy::RagMmrFs;
                parsed.lambda = Some(lambda);
            }
        }
        Some(parsed)
    } else {
        None
    }
}

/// Per-config outcome of a grid run.
#[derive(Debug, Clone)]
pub struct ResultRow {
    pub config_id: String,
    pub metrics: MetricsReport,
    pub wall_clock_s: f64,
    pub seconds_per_record: f64,
    pub token_totals: Option<(u64, u64)>,
    pub cost_estimate: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TimingSidecar {
    wall_clock_s: f64,
    seconds_per_record: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Run one model's configs per thread; caches are per model, so groups
    /// never share a cache file.
    pub parallel_configs: bool,
    /// Restrict the run to a single config id.
    pub only: Option<String>,
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

/// Cache file for one (model, sampling config, endpoint) tuple: configs of
/// the same model share a cache; different models never do.
pub fn cache_file_name(llm: &LlmConfig) -> String {
    let params = format!(
        "{}|{}|{}|{}|{}",
        llm.model, llm.temperature, llm.top_p, llm.max_tokens, llm.endpoint
    );
    let digest = crate::llm::sha256_hex(&params);
    format!("{}-{}.jsonl", sanitize(&llm.model), &digest[..8])
}

/// Loads datasets, applies the pool/test overlap guard, builds the store
/// when any strategy retrieves, and runs every expanded config. Per-config
/// predictions and timing sidecars land in `output_dir`.
pub fn run_grid(grid: &GridFile, options: &RunOptions) -> Result<Vec<ResultRow>, RunnerError> {
    let scheme = resolve_scheme(&grid.grid.scheme)?;
    let test_mapping = match &grid.grid.test_mapping {
        Some(path) => ColumnMapping::from_file(path)?,
        None => ColumnMapping::canonical(),
    };
    let pool_mapping = match &grid.grid.pool_mapping {
        Some(path) => ColumnMapping::from_file(path)?,
        None => ColumnMapping::canonical(),
    };
    let test = load(&grid.grid.test, &test_mapping, &scheme)?;
    let raw_pool = load(&grid.grid.pool, &pool_mapping, &scheme)?;
    let pool = exclude_overlap(&raw_pool, &test)?;

    let mut expanded = expand_grid(grid, &scheme)?;
    if let Some(only) = &options.only {
        expanded.retain(|c| &c.config_id == only);
        if expanded.is_empty() {
            return Err(RunnerError::UnknownConfigId(only.clone()));
        }
    }
    if expanded.is_empty() {
        return Ok(Vec::new());
    }

    let needs_store = expanded.iter().any(|c| {
        matches!(c.prompt.strategy, Strategy::RagFs | Strategy::RagMmrFs)
    });
    let store = if needs_store {
        Some(build_store(&pool, &grid.embedder)?)
    } else {
        None
    };
    let store = store.as_ref();

    std::fs::create_dir_all(&grid.grid.output_dir)?;
    std::fs::create_dir_all(&grid.grid.cache_dir)?;

    let run_one = |config: &ExpandedConfig| -> Result<ResultRow, RunnerError> {
        let cache_path = grid.grid.cache_dir.join(cache_file_name(&config.llm));
        let cache = Cache::open(&cache_path)?;
        run_config(grid, config, &test, &pool, store, &cache, &scheme)
    };

    let mut rows: Vec<ResultRow>;
    if options.parallel_configs {
        // Group by model so no two threads touch the same cache file.
        let mut groups: BTreeMap<&str, Vec<(usize, &ExpandedConfig)>> = BTreeMap::new();
        for (i, config) in expanded.iter().enumerate() {
            groups.entry(&config.model_name).or_default().push((i, config));
        }
        let mut indexed: Vec<(usize, ResultRow)> = std::thread::scope(
            |scope| -> Result<Vec<(usize, ResultRow)>, RunnerError> {
                let mut handles = Vec::new();
                for (_, group) in groups {
                    let run_one = &run_one;
                    handles.push(scope.spawn(move || -> Result<Vec<(usize, ResultRow)>, RunnerError> {
                        let mut rows = Vec::new();
                        for (i, config) in group {
                            rows.push((i, run_one(config)?));
                        }
                        Ok(rows)
                    }));
                }
                let mut all = Vec::new();
                for handle in handles {
                    all.extend(handle.join().expect("grid worker panicked")?);
                }
                Ok(all)
            },
        )?;
        indexed.sort_by_key(|(i, _)| *i);
        rows = indexed.into_iter().map(|(_, row)| row).collect();
    } else {
        rows = Vec::with_capacity(expanded.len());
        for config in &expanded {
            rows.push(run_one(config)?);
        }
    }
    Ok(rows)
}

/// Embeds every pool example and returns the frozen store over them.
pub fn build_store(pool: &Dataset, embedder: &EmbedderSpec) -> Result<Store, RunnerError> {
    let pairs: Vec<_> = pool.examples.iter().map(|e| e.pair.clone()).collect();
    let vectors = embed_pairs(&pairs, embedder)?;
    let mut store = Store::new(embedder.dim);
    for (example, vector) in pool.examples.iter().zip(vectors) {
        store.insert(example.clone(), vector)?;
    }
    store.freeze();
    Ok(store)
}

fn run_config(
    grid: &GridFile,
    config: &ExpandedConfig,
    test: &Dataset,
    pool: &Dataset,
    store: Option<&Store>,
    cache: &Cache,
    scheme: &LabelScheme,
) -> Result<ResultRow, RunnerError> {
    let stem = sanitize(&config.config_id);
    let job = AnnotationJob {
        test_set: test.clone(),
        pool: pool.clone(),
        prompt_config: config.prompt.clone(),
        llm_config: config.llm.clone(),
        embedder: grid.embedder.clone(),
        concurrency: grid.grid.concurrency,
        output_path: grid.grid.output_dir.join(format!("{stem}.preds.jsonl")),
        config_id: config.config_id.clone(),
        keep_prompts: grid.grid.keep_prompts,
        retry: RetryPolicy::default(),
    };
    let started = Instant::now();
    let (predictions, summary) = label_batch(&job, store, cache)?;
    let wall_clock_s = started.elapsed().as_secs_f64();

    let report = metrics(&confusion(&predictions, scheme)?)?;
    let timing = resolve_timing(
        &grid.grid.output_dir.join(format!("{stem}.timing.json")),
        &summary,
        wall_clock_s,
    )?;
    let token_totals = summary
        .prompt_tokens
        .zip(summary.completion_tokens);
    let cost_estimate = token_totals.and_then(|(p, c)| {
        grid.pricing.get(&config.llm.model).map(|price| {
            p as f64 / 1000.0 * price.prompt_per_1k + c as f64 / 1000.0 * price.completion_per_1k
        })
    });
    eprintln!(
        "{}: acc {:.3}, weighted_f1 {:.3}, n {}, invalid {}, backend calls {}",
        config.config_id,
        report.accuracy,
        report.weighted_f1,
        report.n,
        report.invalid,
        summary.backend_calls
    );
    Ok(ResultRow {
        config_id: config.config_id.clone(),
        metrics: report,
        wall_clock_s,
        seconds_per_record: timing.seconds_per_record,
        token_totals,
        cost_estimate,
    })
}

/// Timing rule: a run that did backend work records its own wall clock (per
/// record); a fully cached rerun reuses the persisted measurement so that
/// reports stay byte-identical across reruns.
fn resolve_timing(
    sidecar_path: &Path,
    summary: &RunSummary,
    wall_clock_s: f64,
) -> Result<TimingSidecar, RunnerError> {
    if summary.backend_calls == 0 && sidecar_path.exists() {
        let text = std::fs::read_to_string(sidecar_path)?;
        if let Ok(timing) = serde_json::from_str::<TimingSidecar>(&text) {
            return Ok(timing);
        }
    }
    let timing = TimingSidecar {
        wall_clock_s,
        seconds_per_record: if summary.n == 0 {
            0.0
        } else {
            wall_clock_s / summary.n as f64
        },
    };
    std::fs::write(
        sidecar_path,
        serde_json::to_string_pretty(&timing).expect("timing serializes"),
    )?;
    Ok(timing)
}

const REPORT_HEADER: &str = "config_id,accuracy,macro_f1,weighted_f1,n,invalid,seconds_per_record,prompt_tokens,completion_tokens,cost_estimate";

/// Writes the consolidated grid report: one row per expanded config, metrics
/// at six decimals. Timing comes from the sidecars, so the bytes are stable
/// across warm reruns.
pub fn write_report_csv(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<(), RunnerError> {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for row in rows {
        let (pt, ct) = match row.token_totals {
            Some((p, c)) => (p.to_string(), c.to_string()),
            None => (String::new(), String::new()),
        };
        let cost = row
            .cost_estimate
            .map(|c| format!("{c:.6}"))
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{},{},{:.6},{},{},{}\n",
            escape_csv(&row.config_id),
            row.metrics.accuracy,
            row.metrics.macro_f1,
            row.metrics.weighted_f1,
            row.metrics.n,
            row.metrics.invalid,
            row.seconds_per_record,
            pt,
            ct,
            cost
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn escape_csv(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// One row of a consolidated report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub config_id: String,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub n: u64,
    pub invalid: u64,
    pub seconds_per_record: f64,
    #[serde(default)]
    pub prompt_tokens: Option<u64>,
    #[serde(default)]
    pub completion_tokens: Option<u64>,
    #[serde(default)]
    pub cost_estimate: Option<f64>,
}

pub fn read_report_csv(path: impl AsRef<Path>) -> Result<Vec<ReportRow>, RunnerError> {
    let mut reader = csv::Reader::from_path(path.as_ref())
        .map_err(|e| RunnerError::BadReport(e.to_string()))?;
    let mut rows = Vec::new();
    for record in reader.deserialize() {
        rows.push(record.map_err(|e| RunnerError::BadReport(e.to_string()))?);
    }
    Ok(rows)
}

/// Sorts report rows by the chosen key (metrics descending), ties stable by
/// config id.
pub fn sort_report_rows(rows: &mut [ReportRow], sort: SortKey) {
    rows.sort_by(|a, b| {
        let by_key = match sort {
            SortKey::WeightedF1 => b.weighted_f1.total_cmp(&a.weighted_f1),
            SortKey::MacroF1 => b.macro_f1.total_cmp(&a.macro_f1),
            SortKey::Accuracy => b.accuracy.total_cmp(&a.accuracy),
            SortKey::ConfigId => std::cmp::Ordering::Equal,
        };
        by_key.then_with(|| a.config_id.cmp(&b.config_id))
    });
}

/// Markdown rendering of a consolidated report (three-decimal metrics).
pub fn render_report_markdown(rows: &[ReportRow]) -> String {
    let mut out = String::from(
        "| config_id | acc | macro_f1 | weighted_f1 | n | invalid | s/record |\n|---|---|---|---|---|---|---|\n",
    );
    for r in rows {
        out.push_str(&format!(
            "| {} | {:.3} | {:.3} | {:.3} | {} | {} | {:.4} |\n",
            r.config_id, r.accuracy, r.macro_f1, r.weighted_f1, r.n, r.invalid, r.seconds_per_record
        ));
    }
    out
}

/// CSV rendering of (typically re-sorted) report rows, same columns as the
/// consolidated report.
pub fn render_report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in rows {
        let pt = r.prompt_tokens.map(|v| v.to_string()).unwrap_or_default();
        let ct = r.completion_tokens.map(|v| v.to_string()).unwrap_or_default();
        let cost = r.cost_estimate.map(|c| format!("{c:.6}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{},{},{:.6},{},{},{}\n",
            escape_csv(&r.config_id),
            r.accuracy,
            r.macro_f1,
            r.weighted_f1,
            r.n,
            r.invalid,
            r.seconds_per_record,
            pt,
            ct,
            cost
        ));
    }
    out
}
