//! End-to-end CLI coverage: the sample -> index -> grid -> report -> eval
//! flow on a scratch workspace, plus exit-code contracts.

use std::path::Path;
use std::process::{Command, Output};

use relevancer::dataset::{save, Dataset};
use relevancer::domain::{builtin_scheme, LabeledExample, QPPair};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_relevancer")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn relevancer")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn wands_corpus(n: usize, prefix: &str) -> Dataset {
    let scheme = builtin_scheme("wands").unwrap();
    let examples = (0..n)
        .map(|i| {
            LabeledExample::new(
                QPPair::new(format!("{prefix} query {i}"), format!("{prefix} title {i}")).unwrap(),
                scheme.labels[i % 3].clone(),
            )
            .with_rationale(format!("Let's think step by step: {prefix} case {i}."))
        })
        .collect();
    Dataset::new(scheme, examples, prefix)
}

const GRID_TOML: &str = "[grid]\n\
test = \"test.csv\"\n\
pool = \"pool.csv\"\n\
scheme = \"wands\"\n\
cache_dir = \"cache\"\n\
output_dir = \"predictions\"\n\
concurrency = 4\n\
seed = 3\n\n\
[embedder]\n\
kind = \"hash\"\n\
dim = 64\n\n\
[[models]]\n\
name = \"MOCK\"\n\
model = \"mock-model\"\n\
endpoint = \"mock:oracle\"\n\n\
[[strategies]]\n\
kind = \"zero_shot\"\n\n\
[[strategies]]\n\
kind = \"rag_mmr_fs\"\n\
ks = [8]\n\
lambdas = [0.5, 0.0]\n";

#[test]
fn sample_index_grid_report_eval_flow() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = wands_corpus(90, "corpus");
    save(&corpus, dir.path().join("corpus.csv")).unwrap();
    save(&wands_corpus(30, "pool"), dir.path().join("pool.csv")).unwrap();
    std::fs::write(dir.path().join("grid.toml"), GRID_TOML).unwrap();

    // sample: 30 pairs, exactly 10 per class, deterministic.
    let out = run_in(
        dir.path(),
        &[
            "sample", "--in", "corpus.csv", "--scheme", "wands", "--total", "30", "--seed", "5",
            "--out", "test.csv",
        ],
    );
    assert_ok(&out);
    let sampled = std::fs::read_to_string(dir.path().join("test.csv")).unwrap();
    assert_eq!(sampled.lines().count(), 31); // header + 30 rows

    // index the pool for standalone label runs.
    let out = run_in(
        dir.path(),
        &[
            "index", "--pool", "pool.csv", "--scheme", "wands", "--embedder", "hash", "--dim",
            "64", "--out", "store.jsonl",
        ],
    );
    assert_ok(&out);

    // grid: 3 configs (VANILLA, 8_FS_RAG_MMR_0.5, 8_FS_RAG_MMR_0).
    let out = run_in(
        dir.path(),
        &[
            "grid", "--config", "grid.toml", "--cache-dir", "cache", "--report", "report.csv",
        ],
    );
    assert_ok(&out);
    let report = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 4, "header + 3 rows:\n{report}");
    assert!(report.contains("MOCK + VANILLA"));
    assert!(report.contains("MOCK + 8_FS_RAG_MMR_0.5"));
    assert!(report.contains("MOCK + 8_FS_RAG_MMR_0"));
    for line in report.lines().skip(1) {
        assert!(line.contains("1.000000"), "oracle accuracy row: {line}");
    }

    // report: md and csv renderings.
    let out = run_in(
        dir.path(),
        &["report", "--in", "report.csv", "--sort", "weighted_f1", "--format", "md"],
    );
    assert_ok(&out);
    let md = String::from_utf8_lossy(&out.stdout);
    assert!(md.starts_with("| config_id |"));
    assert_eq!(md.lines().count(), 5);
    let out = run_in(
        dir.path(),
        &["report", "--in", "report.csv", "--sort", "accuracy", "--format", "csv"],
    );
    assert_ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("config_id,accuracy"));

    // label a single config against the prebuilt store, then eval it.
    let out = run_in(
        dir.path(),
        &[
            "label", "--test", "test.csv", "--store", "store.jsonl", "--config", "grid.toml",
            "--only", "MOCK + 8_FS_RAG_MMR_0.5", "--out", "preds.jsonl", "--cache-dir", "cache",
        ],
    );
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("30 pairs, 0 errors"), "{stdout}");

    let out = run_in(
        dir.path(),
        &["eval", "--preds", "preds.jsonl", "--scheme", "wands", "--out", "metrics.csv"],
    );
    assert_ok(&out);
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("config_id,accuracy,macro_f1,weighted_f1,n,invalid"));
    assert!(metrics.contains("1.000000"));
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("MOCK + 8_FS_RAG_MMR_0.5"));
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    save(&wands_corpus(6, "pool"), dir.path().join("pool.csv")).unwrap();

    // Usage error: unknown flag.
    let out = run_in(dir.path(), &["index", "--nonsense"]);
    assert_eq!(out.status.code(), Some(1));

    // Config error: unknown scheme name.
    let out = run_in(
        dir.path(),
        &[
            "index", "--pool", "pool.csv", "--scheme", "nope", "--embedder", "hash", "--dim",
            "64", "--out", "s.jsonl",
        ],
    );
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));

    // Data error: pool file missing.
    let out = run_in(
        dir.path(),
        &[
            "index", "--pool", "missing.csv", "--scheme", "wands", "--embedder", "hash", "--dim",
            "64", "--out", "s.jsonl",
        ],
    );
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    // Data error: label outside the scheme.
    std::fs::write(
        dir.path().join("bad.csv"),
        "query,product_title,label\na,b,NotALabel\n",
    )
    .unwrap();
    let out = run_in(
        dir.path(),
        &[
            "index", "--pool", "bad.csv", "--scheme", "wands", "--embedder", "hash", "--dim",
            "64", "--out", "s.jsonl",
        ],
    );
    assert_eq!(out.status.code(), Some(2));

    // Backend exhaustion: unreachable HTTP endpoint.
    save(&wands_corpus(1, "test"), dir.path().join("test.csv")).unwrap();
    std::fs::write(
        dir.path().join("grid.toml"),
        "[grid]\n\
         test = \"test.csv\"\n\
         pool = \"pool.csv\"\n\
         scheme = \"wands\"\n\
         cache_dir = \"cache\"\n\
         output_dir = \"predictions\"\n\
         concurrency = 1\n\n\
         [embedder]\n\
         kind = \"hash\"\n\
         dim = 64\n\n\
         [[models]]\n\
         name = \"DOWN\"\n\
         model = \"down-model\"\n\
         endpoint = \"http://127.0.0.1:1/v1/chat/completions\"\n\n\
         [[strategies]]\n\
         kind = \"zero_shot\"\n",
    )
    .unwrap();
    // Per-pair backend failures are captured as predictions, so the grid
    // itself exits 0 with an all-invalid report; exhaustion surfaces as exit
    // 3 when nothing can be labeled at all is not a grid-level failure.
    let out = run_in(
        dir.path(),
        &["grid", "--config", "grid.toml", "--cache-dir", "cache", "--report", "report.csv"],
    );
    assert_ok(&out);
    let report = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let row = report.lines().nth(1).unwrap();
    assert!(row.contains(",1,1,"), "one pair, one invalid: {row}");

    // Unknown config id is a usage error.
    let out = run_in(
        dir.path(),
        &[
            "grid", "--config", "grid.toml", "--cache-dir", "cache", "--report", "r.csv",
            "--only", "DOWN + 99_FS",
        ],
    );
    assert_eq!(out.status.code(), Some(1));

    // Backend exhaustion: an unreachable remote embedder fails the run as a
    // whole (nothing can be labeled) with exit 3.
    let out = run_in(
        dir.path(),
        &[
            "index", "--pool", "pool.csv", "--scheme", "wands", "--embedder", "remote", "--dim",
            "64", "--endpoint", "http://127.0.0.1:1/v1/embeddings", "--model", "embed-model",
            "--out", "s.jsonl",
        ],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn esci_mapping_flow_with_letter_codes() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("esci_raw.csv"),
        "search_term,item_title,esci_label\n\
         socks,knee high socks,E\n\
         dartboard,dartboard surround,S\n\
         axe,splitting axe,C\n\
         helium,white ribbon,I\n\
         socks2,ankle socks,E\n\
         dart2,steel tip darts,S\n\
         axe2,axe sharpener,C\n\
         helium2,balloon set,I\n",
    )
    .unwrap();
    std::fs::write(
        dir.path().join("mapping.toml"),
        "query_col = \"search_term\"\n\
         title_col = \"item_title\"\n\
         label_col = \"esci_label\"\n\
         delimiter = \",\"\n\n\
         [label_map]\n\
         E = \"Exact\"\n\
         S = \"Substitute\"\n\
         C = \"Complement\"\n\
         I = \"Irrelevant\"\n",
    )
    .unwrap();
    let out = run_in(
        dir.path(),
        &[
            "sample", "--in", "esci_raw.csv", "--scheme", "esci", "--mapping", "mapping.toml",
            "--total", "4", "--seed", "1", "--out", "sampled.csv",
        ],
    );
    assert_ok(&out);
    let sampled = std::fs::read_to_string(dir.path().join("sampled.csv")).unwrap();
    assert!(sampled.starts_with("query,product_title,label\n"));
    for label in ["Exact", "Substitute", "Complement", "Irrelevant"] {
        assert_eq!(sampled.matches(label).count(), 1, "{sampled}");
    }
}
