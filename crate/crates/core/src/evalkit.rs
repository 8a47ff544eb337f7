//! Evaluation metrics — efficacy, fidelity, utility, cost — and multi-seed
//! aggregation into report tables.

use crate::datahub::DatasetView;
use crate::error::{CoreError, Result};
use crate::gradcore::{Counts, Graph, ParamVector};
use crate::models::predict_with_graph;
use std::collections::BTreeMap;
use std::time::Duration;

/// Which poisoning scenario the metrics describe. The targeted scenario
/// additionally reports per-class accuracies for the attacked class and
/// for everything else.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Untargeted,
    Targeted { target_class: u32 },
}

#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub method: String,
    pub seed: u64,
    pub acc_heldout_overall: f64,
    /// Accuracy on the targeted class (targeted scenarios only).
    pub acc_targeted_class: Option<f64>,
    /// Accuracy on all classes except the targeted one.
    pub acc_untargeted_classes: Option<f64>,
    /// Poisoned-behavior recovery after the relearn attack, when run.
    pub poison_recovery: Option<f64>,
    pub grad_calls: u64,
    pub hvp_calls: u64,
    pub wall_clock: Duration,
}

/// Deterministic held-out accuracies for a parameter vector.
pub fn evaluate(
    graph: &Graph,
    params: &ParamVector,
    heldout: &DatasetView<'_>,
    scenario: Scenario,
    method: &str,
    seed: u64,
    counts: Counts,
    wall_clock: Duration,
) -> Result<MetricsRow> {
    if heldout.is_empty() {
        return Err(CoreError::Data("held-out set is empty".into()));
    }
    let batch = heldout.whole_batch();
    let (pred, _) = predict_with_graph(graph, params, &batch.features)?;
    let labels = heldout.labels_vec();

    let mut hits = 0usize;
    let mut t_hits = 0usize;
    let mut t_total = 0usize;
    let mut u_hits = 0usize;
    let mut u_total = 0usize;
    let target = match scenario {
        Scenario::Targeted { target_class } => Some(target_class),
        Scenario::Untargeted => None,
    };
    for (p, &y) in pred.iter().zip(&labels) {
        let hit = (*p == y) as usize;
        hits += hit;
        if let Some(t) = target {
            if y == t {
                t_hits += hit;
                t_total += 1;
            } else {
                u_hits += hit;
                u_total += 1;
            }
        }
    }
    let (acc_targeted_class, acc_untargeted_classes) = match target {
        None => (None, None),
        Some(t) => {
            if t_total == 0 {
                return Err(CoreError::Data(format!(
                    "targeted class {} absent from the held-out set",
                    t
                )));
            }
            (
                Some(t_hits as f64 / t_total as f64),
                Some(u_hits as f64 / u_total.max(1) as f64),
            )
        }
    };
    Ok(MetricsRow {
        method: method.to_string(),
        seed,
        acc_heldout_overall: hits as f64 / labels.len() as f64,
        acc_targeted_class,
        acc_untargeted_classes,
        poison_recovery: None,
        grad_calls: counts.grad,
        hvp_calls: counts.hvp,
        wall_clock,
    })
}

/// `mean ± sample std` summary of one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Unbiased sample standard deviation; `None` with a single seed.
    pub std: Option<f64>,
    pub n: usize,
}

fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n >= 2 {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        Some(var.sqrt())
    } else {
        None
    };
    Summary { mean, std, n }
}

pub const METRIC_NAMES: [&str; 4] = [
    "acc_heldout_overall",
    "acc_targeted_class",
    "acc_untargeted_classes",
    "poison_recovery",
];

fn metric_value(row: &MetricsRow, metric: &str) -> Option<f64> {
    match metric {
        "acc_heldout_overall" => Some(row.acc_heldout_overall),
        "acc_targeted_class" => row.acc_targeted_class,
        "acc_untargeted_classes" => row.acc_untargeted_classes,
        "poison_recovery" => row.poison_recovery,
        _ => None,
    }
}

/// Per-method, per-metric summaries over seeds. Output is ordered by
/// method name, then by metric in `METRIC_NAMES` order.
pub fn aggregate(rows: &[MetricsRow]) -> Vec<(String, String, Summary)> {
    let mut by_method: BTreeMap<&str, Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        by_method.entry(&r.method).or_default().push(r);
    }
    let mut out = Vec::new();
    for (method, rows) in by_method {
        for metric in METRIC_NAMES {
            let values: Vec<f64> = rows.iter().filter_map(|r| metric_value(r, metric)).collect();
            if values.is_empty() {
                continue;
            }
            out.push((method.to_string(), metric.to_string(), summarize(&values)));
        }
    }
    out
}

/// CSV for the aggregate table: `method,metric,mean,std,n`.
pub fn aggregate_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("method,metric,mean,std,n\n");
    for (method, metric, s) in aggregate(rows) {
        out.push_str(&format!(
            "{},{},{:.6},{},{}\n",
            method,
            metric,
            s.mean,
            s.std.map(|v| format!("{:.6}", v)).unwrap_or_default(),
            s.n
        ));
    }
    out
}

/// Per-seed metrics CSV. Wall-clock and other volatile fields are kept out
/// so two identical runs emit identical bytes.
pub fn rows_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(
        "method,seed,acc_heldout_overall,acc_targeted_class,acc_untargeted_classes,poison_recovery,grad_calls,hvp_calls\n",
    );
    let fmt = |v: Option<f64>| v.map(|x| format!("{:.6}", x)).unwrap_or_default();
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{},{},{},{},{}\n",
            r.method,
            r.seed,
            r.acc_heldout_overall,
            fmt(r.acc_targeted_class),
            fmt(r.acc_untargeted_classes),
            fmt(r.poison_recovery),
            r.grad_calls,
            r.hvp_calls
        ));
    }
    out
}

/// Per-method metric deltas: `after − before`, matched on (method, seed).
pub fn improvement_table(
    before: &[MetricsRow],
    after: &[MetricsRow],
) -> Result<Vec<(String, String, Summary)>> {
    if before.len() != after.len() {
        return Err(CoreError::Data(format!(
            "{} before-rows vs {} after-rows",
            before.len(),
            after.len()
        )));
    }
    let mut deltas: Vec<MetricsRow> = Vec::with_capacity(after.len());
    for (b, a) in before.iter().zip(after) {
        if b.method != a.method || b.seed != a.seed {
            return Err(CoreError::Data(format!(
                "mismatched rows: {}/{} vs {}/{}",
                b.method, b.seed, a.method, a.seed
            )));
        }
        let diff = |x: Option<f64>, y: Option<f64>| match (x, y) {
            (Some(x), Some(y)) => Some(y - x),
            _ => None,
        };
        deltas.push(MetricsRow {
            method: a.method.clone(),
            seed: a.seed,
            acc_heldout_overall: a.acc_heldout_overall - b.acc_heldout_overall,
            acc_targeted_class: diff(b.acc_targeted_class, a.acc_targeted_class),
            acc_untargeted_classes: diff(b.acc_untargeted_classes, a.acc_untargeted_classes),
            poison_recovery: diff(b.poison_recovery, a.poison_recovery),
            grad_calls: 0,
            hvp_calls: 0,
            wall_clock: Duration::ZERO,
        });
    }
    Ok(aggregate(&deltas))
}
