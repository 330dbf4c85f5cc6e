//! `relevancer` command line: index a pool into a vector store, label a test
//! set under one grid config, score predictions, run whole grids, and render
//! reports.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 data error, 3 backend
//! exhaustion.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use relevancer::annotate::{read_prediction_rows, AnnotationJob};
use relevancer::dataset::{load, save, stratified_sample, ColumnMapping, Dataset, DatasetError};
use relevancer::domain::DomainError;
use relevancer::embed::{EmbedderKind, EmbedderSpec};
use relevancer::eval::{compare, metrics_csv, render_table, SortKey};
use relevancer::llm::{Cache, LlmError, RetryPolicy};
use relevancer::prompt::Strategy;
use relevancer::runner::{
    build_store, cache_file_name, expand_grid, read_report_csv, render_report_csv,
    render_report_markdown, resolve_scheme, run_grid, sort_report_rows, write_report_csv,
    GridFile, RunOptions, RunnerError,
};
use relevancer::store::Store;
use relevancer::{confusion, metrics};

#[derive(Parser)]
#[command(name = "relevancer", version, about = "Label query-product pairs with LLM backends and score the results")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Embed a labeled pool CSV into a frozen vector store file.
    Index {
        #[arg(long)]
        pool: PathBuf,
        /// Builtin scheme name (esci|wands|five_level) or a scheme TOML path.
        #[arg(long)]
        scheme: String,
        /// Embedder kind: hash or remote.
        #[arg(long, default_value = "hash")]
        embedder: String,
        #[arg(long, default_value_t = 256)]
        dim: usize,
        /// Remote embedder endpoint (kind = remote).
        #[arg(long)]
        endpoint: Option<String>,
        /// Remote embedder model id (kind = remote).
        #[arg(long)]
        model: Option<String>,
        /// Column mapping TOML for non-canonical CSV layouts.
        #[arg(long)]
        mapping: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label a test CSV under one config from a grid file.
    Label {
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        store: PathBuf,
        /// Grid TOML declaring models and strategies.
        #[arg(long)]
        config: PathBuf,
        /// Config id to run; may be omitted when the grid expands to one.
        #[arg(long)]
        only: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        /// Store the full prompt on each output row, not just its hash.
        #[arg(long)]
        keep_prompts: bool,
    },
    /// Score a predictions JSONL file against its gold labels.
    Eval {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        scheme: String,
        /// Metrics CSV output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Expand and run a whole experiment grid, emitting a consolidated report.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
        /// Restrict the run to one config id.
        #[arg(long)]
        only: Option<String>,
        /// Run different models' configs on parallel threads.
        #[arg(long)]
        parallel_configs: bool,
    },
    /// Re-rank and render a consolidated report.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "weighted_f1")]
        sort: String,
        /// Output format: md or csv.
        #[arg(long, default_value = "md")]
        format: String,
    },
    /// Draw a seeded stratified sample in the canonical CSV format.
    Sample {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        scheme: String,
        #[arg(long)]
        total: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        mapping: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

/// 1 usage/config, 2 data, 3 backend exhaustion.
fn exit_code(err: &RunnerError) -> i32 {
    use relevancer::annotate::AnnotateError;
    match err {
        RunnerError::BadGrid(_)
        | RunnerError::DuplicateConfig(_)
        | RunnerError::UnknownConfigId(_) => 1,
        RunnerError::Domain(DomainError::UnknownScheme(_)) => 1,
        RunnerError::Domain(_) => 2,
        RunnerError::Dataset(DatasetError::BadMapping(_)) => 1,
        RunnerError::Dataset(_) => 2,
        RunnerError::Embed(relevancer::embed::EmbedError::BadSpec(_)) => 1,
        RunnerError::Embed(_) => 3,
        RunnerError::Store(relevancer::store::StoreError::BadLambda(_)) => 1,
        RunnerError::Store(_) => 2,
        RunnerError::Llm(LlmError::BadConfig(_)) => 1,
        RunnerError::Llm(LlmError::CacheCorrupt { .. }) => 2,
        RunnerError::Llm(_) => 3,
        RunnerError::Annotate(inner) => match inner {
            AnnotateError::BadJob(_) | AnnotateError::Prompt(_) => 1,
            AnnotateError::Llm(LlmError::BadConfig(_)) => 1,
            AnnotateError::Llm(LlmError::CacheCorrupt { .. }) => 2,
            AnnotateError::Llm(_) => 3,
            AnnotateError::Embed(relevancer::embed::EmbedError::BadSpec(_)) => 1,
            AnnotateError::Embed(_) => 3,
            _ => 2,
        },
        RunnerError::Eval(_) | RunnerError::BadReport(_) | RunnerError::Io(_) => 2,
    }
}

fn run(cli: Cli) -> Result<(), RunnerError> {
    match cli.command {
        Command::Index {
            pool,
            scheme,
            embedder,
            dim,
            endpoint,
            model,
            mapping,
            out,
        } => {
            let scheme = resolve_scheme(&scheme)?;
            let mapping = mapping_or_canonical(mapping)?;
            let dataset = load(&pool, &mapping, &scheme)?;
            let kind = match embedder.as_str() {
                "hash" => EmbedderKind::Hash,
                "remote" => EmbedderKind::Remote,
                other => {
                    return Err(RunnerError::BadGrid(format!(
                        "unknown embedder {other:?} (expected hash or remote)"
                    )))
                }
            };
            let spec = EmbedderSpec {
                kind,
                dim,
                endpoint,
                model,
            };
            spec.validate().map_err(RunnerError::Embed)?;
            let store = build_store(&dataset, &spec)?;
            store.save(&out)?;
            println!(
                "indexed {} examples at dim {} into {}",
                store.len(),
                store.dim(),
                out.display()
            );
            Ok(())
        }
        Command::Label {
            test,
            store,
            config,
            only,
            out,
            cache_dir,
            keep_prompts,
        } => {
            let mut grid = GridFile::load(&config)?;
            if let Some(dir) = cache_dir {
                grid.grid.cache_dir = dir;
            }
            let scheme = resolve_scheme(&grid.grid.scheme)?;
            let mapping = match &grid.grid.test_mapping {
                Some(path) => ColumnMapping::from_file(path)?,
                None => ColumnMapping::canonical(),
            };
            let test_set = load(&test, &mapping, &scheme)?;
            let store = Store::load(&store)?;
            let pool = Dataset::new(
                scheme.clone(),
                store.entries().iter().map(|e| e.example.clone()).collect(),
                "store",
            );

            let expanded = expand_grid(&grid, &scheme)?;
            let picked = match only {
                Some(id) => expanded
                    .into_iter()
                    .find(|c| c.config_id == id)
                    .ok_or(RunnerError::UnknownConfigId(id))?,
                None => {
                    if expanded.len() != 1 {
                        return Err(RunnerError::BadGrid(format!(
                            "grid expands to {} configs; pick one with --only",
                            expanded.len()
                        )));
                    }
                    expanded.into_iter().next().expect("one config")
                }
            };
            let retrieval = matches!(picked.prompt.strategy, Strategy::RagFs | Strategy::RagMmrFs);
            if retrieval && store.dim() != grid.embedder.dim {
                return Err(RunnerError::BadGrid(format!(
                    "store dim {} != embedder dim {}",
                    store.dim(),
                    grid.embedder.dim
                )));
            }
            std::fs::create_dir_all(&grid.grid.cache_dir)?;
            let cache = Cache::open(grid.grid.cache_dir.join(cache_file_name(&picked.llm)))?;
            let job = AnnotationJob {
                test_set,
                pool,
                prompt_config: picked.prompt.clone(),
                llm_config: picked.llm.clone(),
                embedder: grid.embedder.clone(),
                concurrency: grid.grid.concurrency,
                output_path: out,
                config_id: picked.config_id.clone(),
                keep_prompts: keep_prompts || grid.grid.keep_prompts,
                retry: RetryPolicy::default(),
            };
            let (_, summary) = relevancer::label_batch(&job, retrieval.then_some(&store), &cache)?;
            println!(
                "{}: {} pairs, {} errors, {:.2}s wall clock, {:.1} ms/record mean latency, {} backend calls, {} cache hits",
                picked.config_id,
                summary.n,
                summary.error_count,
                summary.wall_clock_s,
                summary.mean_latency_ms,
                summary.backend_calls,
                summary.cache_hits
            );
            Ok(())
        }
        Command::Eval { preds, scheme, out } => {
            let scheme = resolve_scheme(&scheme)?;
            let rows = read_prediction_rows(&preds)?;
            // Group by config id, first-seen order.
            let mut order: Vec<String> = Vec::new();
            let mut grouped: std::collections::HashMap<String, Vec<relevancer::Prediction>> =
                std::collections::HashMap::new();
            for row in rows {
                let id = row.config_id.clone();
                if !grouped.contains_key(&id) {
                    order.push(id.clone());
                }
                grouped.entry(id).or_default().push(row.into_prediction());
            }
            if order.is_empty() {
                return Err(RunnerError::BadReport(format!(
                    "no predictions in {}",
                    preds.display()
                )));
            }
            let mut reports = Vec::new();
            for id in order {
                let preds = &grouped[&id];
                let report = metrics(&confusion(preds, &scheme)?)?;
                reports.push((id, report));
            }
            std::fs::write(&out, metrics_csv(&scheme, &reports))?;
            print!("{}", render_table(&compare(&reports, SortKey::WeightedF1)));
            Ok(())
        }
        Command::Grid {
            config,
            cache_dir,
            report,
            only,
            parallel_configs,
        } => {
            let mut grid = GridFile::load(&config)?;
            if let Some(dir) = cache_dir {
                grid.grid.cache_dir = dir;
            }
            let options = RunOptions {
                parallel_configs,
                only,
            };
            let rows = run_grid(&grid, &options)?;
            write_report_csv(&rows, &report)?;
            let mut report_rows = read_report_csv(&report)?;
            sort_report_rows(&mut report_rows, SortKey::WeightedF1);
            print!("{}", render_report_markdown(&report_rows));
            println!("report: {}", report.display());
            Ok(())
        }
        Command::Report { input, sort, format } => {
            let sort = SortKey::parse(&sort).ok_or_else(|| {
                RunnerError::BadGrid(format!(
                    "unknown sort key {sort:?} (expected weighted_f1, macro_f1, accuracy, or config_id)"
                ))
            })?;
            let mut rows = read_report_csv(&input)?;
            sort_report_rows(&mut rows, sort);
            match format.as_str() {
                "md" => print!("{}", render_report_markdown(&rows)),
                "csv" => print!("{}", render_report_csv(&rows)),
                other => {
                    return Err(RunnerError::BadGrid(format!(
                        "unknown format {other:?} (expected md or csv)"
                    )))
                }
            }
            Ok(())
        }
        Command::Sample {
            input,
            scheme,
            total,
            seed,
            mapping,
            out,
        } => {
            let scheme = resolve_scheme(&scheme)?;
            let mapping = mapping_or_canonical(mapping)?;
            let dataset = load(&input, &mapping, &scheme)?;
            let sampled = stratified_sample(&dataset, total, seed)?;
            save(&sampled, &out)?;
            println!(
                "sampled {} of {} examples ({} per class) into {}",
                sampled.len(),
                dataset.len(),
                total / scheme.labels.len(),
                out.display()
            );
            Ok(())
        }
    }
}

fn mapping_or_canonical(path: Option<PathBuf>) -> Result<ColumnMapping, RunnerError> {
    Ok(match path {
        Some(path) => ColumnMapping::from_file(path)?,
        None => ColumnMapping::canonical(),
    })
}
