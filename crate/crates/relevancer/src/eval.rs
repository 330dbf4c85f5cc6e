//! Scoring predictions against gold labels: confusion matrix, accuracy,
//! per-class precision/recall/F1, macro F1, and support-weighted F1.
//!
//! Unparseable predictions land in a dedicated INVALID column: they count in
//! the accuracy denominator and as false negatives for their gold class,
//! never as true positives anywhere.

use serde::Serialize;
use thiserror::Error;

use crate::domain::{LabelScheme, Prediction};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction {index} has no gold label")]
    MissingGold { index: usize },
    #[error("prediction {index} carries label {label:?} outside scheme {scheme:?}")]
    UnknownLabel {
        index: usize,
        label: String,
        scheme: String,
    },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("no reports to compare")]
    NoReports,
}

/// Gold-by-predicted counts; the extra final column collects predictions
/// with a parse error.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    pub scheme: LabelScheme,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    fn empty(scheme: LabelScheme) -> Self {
        let n = scheme.labels.len();
        ConfusionMatrix {
            scheme,
            counts: vec![vec![0; n + 1]; n],
        }
    }

    /// Column index of the INVALID bucket.
    pub fn invalid_column(&self) -> usize {
        self.scheme.labels.len()
    }

    pub fn count(&self, gold: usize, predicted: usize) -> u64 {
        self.counts[gold][predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn invalid_total(&self) -> u64 {
        let col = self.invalid_column();
        self.counts.iter().map(|row| row[col]).sum()
    }

    /// Gold-class support: full row sum, invalid predictions included.
    pub fn support(&self, gold: usize) -> u64 {
        self.counts[gold].iter().sum()
    }

    fn column_sum(&self, predicted: usize) -> u64 {
        self.counts.iter().map(|row| row[predicted]).sum()
    }
}

/// Tallies predictions into a confusion matrix. Every prediction must carry
/// a gold label from the scheme.
pub fn confusion(preds: &[Prediction], scheme: &LabelScheme) -> Result<ConfusionMatrix, EvalError> {
    let mut cm = ConfusionMatrix::empty(scheme.clone());
    for (index, pred) in preds.iter().enumerate() {
        let gold = pred.gold.as_deref().ok_or(EvalError::MissingGold { index })?;
        let gold_idx = scheme.index_of(gold).ok_or_else(|| EvalError::UnknownLabel {
            index,
            label: gold.to_string(),
            scheme: scheme.name.clone(),
        })?;
        let col = match (&pred.predicted, &pred.parse_error) {
            (Some(label), _) => scheme.index_of(label).ok_or_else(|| EvalError::UnknownLabel {
                index,
                label: label.clone(),
                scheme: scheme.name.clone(),
            })?,
            (None, _) => cm.invalid_column(),
        };
        cm.counts[gold_idx][col] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub per_class: Vec<(String, ClassMetrics)>,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub n: u64,
    pub invalid: u64,
}

/// Computes the metric report from a confusion matrix. Degenerate ratios use
/// the 0/0 := 0 convention; macro F1 averages over every scheme label,
/// zero-support ones included.
pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let labels = &cm.scheme.labels;
    let class_count = labels.len();

    let mut per_class = Vec::with_capacity(class_count);
    let mut diagonal = 0u64;
    for (i, label) in labels.iter().enumerate() {
        let tp = cm.count(i, i);
        diagonal += tp;
        let support = cm.support(i);
        let predicted = cm.column_sum(i);
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push((
            label.clone(),
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
            },
        ));
    }

    // Macro is written as the uniform-weight instance of the weighted mean so
    // that equal supports give bit-equal macro and weighted values.
    let uniform_weight = 1.0 / class_count as f64;
    let macro_f1 = per_class.iter().map(|(_, m)| uniform_weight * m.f1).sum();
    let weighted_f1 = per_class
        .iter()
        .map(|(_, m)| (m.support as f64 / total as f64) * m.f1)
        .sum();

    Ok(MetricsReport {
        accuracy: diagonal as f64 / total as f64,
        per_class,
        macro_f1,
        weighted_f1,
        n: total,
        invalid: cm.invalid_total(),
    })
}

fn ratio(num: u64, denom: u64) -> f64 {
    if denom == 0 {
        0.0
    } else {
        num as f64 / denom as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SortKey {
    WeightedF1,
    MacroF1,
    Accuracy,
    ConfigId,
}

impl SortKey {
    pub fn parse(text: &str) -> Option<SortKey> {
        match text {
            "weighted_f1" => Some(SortKey::WeightedF1),
            "macro_f1" => Some(SortKey::MacroF1),
            "accuracy" => Some(SortKey::Accuracy),
            "config_id" => Some(SortKey::ConfigId),
            _ => None,
        }
    }
}

/// One rendered comparison row (three-decimal table cells).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub config_id: String,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub n: u64,
    pub invalid: u64,
}

/// Ranks reports by the chosen key (descending for metrics, ascending for
/// config id), with ties always falling back to config id order.
pub fn compare(reports: &[(String, MetricsReport)], sort: SortKey) -> Vec<CompareRow> {
    let mut rows: Vec<CompareRow> = reports
        .iter()
        .map(|(config_id, r)| CompareRow {
            config_id: config_id.clone(),
            accuracy: r.accuracy,
            macro_f1: r.macro_f1,
            weighted_f1: r.weighted_f1,
            n: r.n,
            invalid: r.invalid,
        })
        .collect();
    rows.sort_by(|a, b| {
        let by_key = match sort {
            SortKey::WeightedF1 => b.weighted_f1.total_cmp(&a.weighted_f1),
            SortKey::MacroF1 => b.macro_f1.total_cmp(&a.macro_f1),
            SortKey::Accuracy => b.accuracy.total_cmp(&a.accuracy),
            SortKey::ConfigId => std::cmp::Ordering::Equal,
        };
        by_key.then_with(|| a.config_id.cmp(&b.config_id))
    });
    rows
}

/// Machine CSV: summary columns plus per-class precision/recall/F1/support.
/// All reports must share the scheme the per-class columns come from.
pub fn metrics_csv(scheme: &LabelScheme, reports: &[(String, MetricsReport)]) -> String {
    let mut header = String::from("config_id,accuracy,macro_f1,weighted_f1,n,invalid");
    for label in &scheme.labels {
        let slug = label.to_lowercase();
        header.push_str(&format!(",precision_{slug},recall_{slug},f1_{slug},support_{slug}"));
    }
    let mut out = header;
    out.push('\n');
    for (config_id, report) in reports {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{},{}",
            csv_escape(config_id),
            report.accuracy,
            report.macro_f1,
            report.weighted_f1,
            report.n,
            report.invalid
        ));
        for (_, m) in &report.per_class {
            out.push_str(&format!(",{:.6},{:.6},{:.6},{}", m.precision, m.recall, m.f1, m.support));
        }
        out.push('\n');
    }
    out
}

fn csv_escape(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Aligned human-readable comparison table, values at three decimals.
pub fn render_table(rows: &[CompareRow]) -> String {
    let id_width = rows
        .iter()
        .map(|r| r.config_id.len())
        .chain(std::iter::once("config_id".len()))
        .max()
        .unwrap_or(9);
    let mut out = format!(
        "{:<id_width$}  {:>8}  {:>8}  {:>11}  {:>6}  {:>7}\n",
        "config_id", "acc", "macro_f1", "weighted_f1", "n", "invalid"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<id_width$}  {:>8.3}  {:>8.3}  {:>11.3}  {:>6}  {:>7}\n",
            r.config_id, r.accuracy, r.macro_f1, r.weighted_f1, r.n, r.invalid
        ));
    }
    out
}

/// Markdown comparison table, values at three decimals.
pub fn render_markdown(rows: &[CompareRow]) -> String {
    let mut out = String::from("| config_id | acc | macro_f1 | weighted_f1 | n | invalid |\n");
    out.push_str("|---|---|---|---|---|---|\n");
    for r in rows {
        out.push_str(&format!(
            "| {} | {:.3} | {:.3} | {:.3} | {} | {} |\n",
            r.config_id, r.accuracy, r.macro_f1, r.weighted_f1, r.n, r.invalid
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{builtin_scheme, QPPair};

    fn pred(gold: &str, outcome: Result<&str, &str>) -> Prediction {
        let pair = QPPair::new("q", "t").unwrap();
        match outcome {
            Ok(label) => Prediction::ok(pair, Some(gold.into()), label.into(), String::new(), "c".into(), 0),
            Err(e) => Prediction::failed(pair, Some(gold.into()), e.into(), String::new(), "c".into(), 0),
        }
    }

    fn two_class_scheme() -> LabelScheme {
        LabelScheme::new("ab", &[("A", "class a"), ("B", "class b")]).unwrap()
    }

    #[test]
    fn all_correct_predictions_fill_the_diagonal() {
        let scheme = builtin_scheme("wands").unwrap();
        let preds = vec![
            pred("Exact", Ok("Exact")),
            pred("Partial", Ok("Partial")),
            pred("Irrelevant", Ok("Irrelevant")),
        ];
        let cm = confusion(&preds, &scheme).unwrap();
        assert_eq!(cm.total(), 3);
        for i in 0..3 {
            assert_eq!(cm.count(i, i), 1);
        }
        let report = metrics(&cm).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.macro_f1, 1.0);
        assert_eq!(report.weighted_f1, 1.0);
        assert_eq!(report.invalid, 0);
    }

    #[test]
    fn parse_errors_land_in_the_invalid_column() {
        let scheme = builtin_scheme("wands").unwrap();
        let preds = vec![pred("Exact", Ok("Exact")), pred("Partial", Err("NoLabelFound"))];
        let cm = confusion(&preds, &scheme).unwrap();
        assert_eq!(cm.invalid_total(), 1);
        assert_eq!(cm.count(1, cm.invalid_column()), 1);
        let report = metrics(&cm).unwrap();
        assert_eq!(report.invalid, 1);
        assert_eq!(report.accuracy, 0.5);
    }

    #[test]
    fn ten_prediction_fixture_matches_hand_tally() {
        let scheme = builtin_scheme("wands").unwrap();
        let preds = vec![
            pred("Exact", Ok("Exact")),
            pred("Exact", Ok("Exact")),
            pred("Exact", Ok("Partial")),
            pred("Exact", Err("NoLabelFound")),
            pred("Partial", Ok("Partial")),
            pred("Partial", Ok("Partial")),
            pred("Partial", Ok("Irrelevant")),
            pred("Irrelevant", Ok("Irrelevant")),
            pred("Irrelevant", Ok("Exact")),
            pred("Irrelevant", Ok("Irrelevant")),
        ];
        let expected = [
            // columns: Exact, Partial, Irrelevant, INVALID
            [2, 1, 0, 1], // gold Exact
            [0, 2, 1, 0], // gold Partial
            [1, 0, 2, 0], // gold Irrelevant
        ];
        let cm = confusion(&preds, &scheme).unwrap();
        for (g, row) in expected.iter().enumerate() {
            for (p, want) in row.iter().enumerate() {
                assert_eq!(cm.count(g, p), *want, "cell ({g}, {p})");
            }
        }
        assert_eq!(cm.total(), 10);
    }

    #[test]
    fn missing_gold_is_an_error() {
        let scheme = builtin_scheme("wands").unwrap();
        let mut p = pred("Exact", Ok("Exact"));
        p.gold = None;
        assert!(matches!(
            confusion(&[p], &scheme),
            Err(EvalError::MissingGold { index: 0 })
        ));
    }

    // Hand-derived two-class example: gold A -> pred A: 8, A -> B: 2,
    // B -> B: 5, B -> A: 5. Accuracy 13/20, F1(A) = 16/23, F1(B) = 10/17,
    // macro = 251/391.
    #[test]
    fn two_class_hand_example() {
        let mut preds = Vec::new();
        preds.extend((0..8).map(|_| pred("A", Ok("A"))));
        preds.extend((0..2).map(|_| pred("A", Ok("B"))));
        preds.extend((0..5).map(|_| pred("B", Ok("B"))));
        preds.extend((0..5).map(|_| pred("B", Ok("A"))));
        let report = metrics(&confusion(&preds, &two_class_scheme()).unwrap()).unwrap();

        assert!((report.accuracy - 0.65).abs() < 1e-12);
        let a = &report.per_class[0].1;
        let b = &report.per_class[1].1;
        assert!((a.precision - 8.0 / 13.0).abs() < 1e-12);
        assert!((a.recall - 0.8).abs() < 1e-12);
        assert!((a.f1 - 16.0 / 23.0).abs() < 1e-12);
        assert!((b.precision - 5.0 / 7.0).abs() < 1e-12);
        assert!((b.recall - 0.5).abs() < 1e-12);
        assert!((b.f1 - 10.0 / 17.0).abs() < 1e-12);
        assert!((report.macro_f1 - 251.0 / 391.0).abs() < 1e-12);
        assert!((report.macro_f1 - 0.6420).abs() < 1e-4);
        // Equal supports: weighted equals macro, exactly.
        assert_eq!(report.weighted_f1, report.macro_f1);
    }

    #[test]
    fn empty_predicted_class_scores_zero_f1_and_macro_includes_it() {
        let scheme = builtin_scheme("wands").unwrap();
        let preds = vec![pred("Exact", Ok("Exact")), pred("Partial", Ok("Exact"))];
        let report = metrics(&confusion(&preds, &scheme).unwrap()).unwrap();
        let irrelevant = &report.per_class[2].1;
        assert_eq!(irrelevant.f1, 0.0);
        assert_eq!(irrelevant.support, 0);
        let partial = &report.per_class[1].1;
        assert_eq!(partial.f1, 0.0); // 0/0 convention on precision and recall
        let exact_f1 = report.per_class[0].1.f1;
        assert!((report.macro_f1 - exact_f1 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_matrix_is_an_error() {
        let cm = confusion(&[], &two_class_scheme()).unwrap();
        assert!(matches!(metrics(&cm), Err(EvalError::EmptyMatrix)));
    }

    fn report(acc: f64, weighted: f64) -> MetricsReport {
        MetricsReport {
            accuracy: acc,
            per_class: Vec::new(),
            macro_f1: acc,
            weighted_f1: weighted,
            n: 10,
            invalid: 0,
        }
    }

    #[test]
    fn compare_sorts_descending_with_stable_ties() {
        let reports = vec![
            ("b-config".to_string(), report(0.5, 0.7)),
            ("a-config".to_string(), report(0.6, 0.7)),
            ("c-config".to_string(), report(0.4, 0.9)),
        ];
        let rows = compare(&reports, SortKey::WeightedF1);
        let ids: Vec<&str> = rows.iter().map(|r| r.config_id.as_str()).collect();
        assert_eq!(ids, ["c-config", "a-config", "b-config"]);
    }

    #[test]
    fn table_renders_three_decimal_columns() {
        let reports = vec![(
            "LLM2 + 16_FS_RAG_MMR_0".to_string(),
            MetricsReport {
                accuracy: 0.726,
                per_class: Vec::new(),
                macro_f1: 0.687,
                weighted_f1: 0.738,
                n: 5000,
                invalid: 3,
            },
        )];
        let rows = compare(&reports, SortKey::WeightedF1);
        let table = render_table(&rows);
        assert!(table.contains("LLM2 + 16_FS_RAG_MMR_0"));
        assert!(table.contains("0.726"));
        assert!(table.contains("0.687"));
        assert!(table.contains("0.738"));
        let md = render_markdown(&rows);
        assert!(md.contains("| LLM2 + 16_FS_RAG_MMR_0 | 0.726 | 0.687 | 0.738 | 5000 | 3 |"));
    }

    #[test]
    fn metrics_csv_has_per_class_columns() {
        let scheme = builtin_scheme("wands").unwrap();
        let preds = vec![pred("Exact", Ok("Exact"))];
        let report = metrics(&confusion(&preds, &scheme).unwrap()).unwrap();
        let csv = metrics_csv(&scheme, &[("cfg".into(), report)]);
        let header = csv.lines().next().unwrap();
        assert!(header.starts_with("config_id,accuracy,macro_f1,weighted_f1,n,invalid"));
        assert!(header.contains("precision_exact,recall_exact,f1_exact,support_exact"));
        assert!(header.contains("f1_irrelevant"));
    }
}
