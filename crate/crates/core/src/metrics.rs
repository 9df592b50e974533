//! Evaluation metrics: MSE, Pearson LCC, Spearman SRCC, and report assembly.
//!
//! Correlations on constant vectors are undefined and surface as explicit
//! errors (or `None` cells in reports), never as a silent 0.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::audiogram::AudiogramCategory;
use crate::error::{Error, Result};
use crate::signal::ConditionLabel;
use crate::targets::{ComboKey, ScoreTable, TargetPair};

/// Mean squared error between two equal-length vectors.
pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth, 1)?;
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

/// Pearson linear correlation coefficient.
pub fn lcc(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth, 2)?;
    pearson(pred, truth)
}

/// Spearman rank correlation coefficient with average ranks for ties.
pub fn srcc(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth, 2)?;
    let rp = average_ranks(pred);
    let rt = average_ranks(truth);
    pearson(&rp, &rt)
}

fn check_lengths(pred: &[f64], truth: &[f64], min: usize) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "metric inputs differ in length: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.len() < min {
        return Err(Error::InvalidInput(format!(
            "metric needs at least {min} samples, got {}",
            pred.len()
        )));
    }
    Ok(())
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        let dx = xi - mx;
        let dy = yi - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "constant vector has no variance".into(),
        ));
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// Fractional (average) ranks, 1-based; tied values share the mean of their ranks.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 averaged over the tie group
        let avg = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// MSE plus (possibly undefined) correlations for one table cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricCell {
    pub mse: f64,
    pub lcc: Option<f64>,
    pub srcc: Option<f64>,
    pub n_samples: usize,
}

impl MetricCell {
    fn from_pairs(pred: &[f64], truth: &[f64]) -> Result<Self> {
        Ok(MetricCell {
            mse: mse(pred, truth)?,
            lcc: lcc(pred, truth).ok(),
            srcc: srcc(pred, truth).ok(),
            n_samples: pred.len(),
        })
    }
}

/// Per-task metric tables: overall, per condition, per hearing-loss type.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskReport {
    pub overall: MetricCell,
    pub per_condition: Vec<(ConditionLabel, MetricCell)>,
    pub per_category: Vec<(AudiogramCategory, MetricCell)>,
}

/// Utterance-level prediction pair for one combo.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TaskScores {
    pub quality: f64,
    pub intelligibility: f64,
}

/// Full evaluation report for one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub quality: TaskReport,
    pub intelligibility: TaskReport,
    pub n_total: usize,
}

/// Assemble an evaluation report from utterance-level predictions and targets.
///
/// `categories` resolves each audiogram id to its hearing-loss type. Keys of
/// `predictions` and the score table must match exactly; orphans on either
/// side are rejected and listed.
pub fn build_report(
    predictions: &BTreeMap<ComboKey, TaskScores>,
    targets: &ScoreTable,
    categories: &BTreeMap<String, AudiogramCategory>,
) -> Result<EvalReport> {
    let mut orphans: Vec<String> = Vec::new();
    for key in predictions.keys() {
        if targets.get(key).is_none() {
            orphans.push(format!("prediction without target: {key}"));
        }
    }
    for key in targets.keys() {
        if !predictions.contains_key(key) {
            orphans.push(format!("target without prediction: {key}"));
        }
    }
    for key in predictions.keys() {
        if !categories.contains_key(&key.audiogram_id) {
            orphans.push(format!(
                "audiogram {} not resolvable to a category (key {key})",
                key.audiogram_id
            ));
        }
    }
    if !orphans.is_empty() {
        return Err(Error::KeyMismatch(orphans));
    }
    if predictions.is_empty() {
        return Err(Error::InvalidInput("empty prediction set".into()));
    }

    let mut rows: Vec<(ConditionLabel, AudiogramCategory, TaskScores, TargetPair)> =
        Vec::with_capacity(predictions.len());
    for (key, scores) in predictions {
        let target = targets.get(key).expect("coverage checked above");
        let category = categories[&key.audiogram_id];
        rows.push((key.condition, category, *scores, target));
    }

    let quality = task_report(&rows, |s| s.quality, |t| t.quality)?;
    let intelligibility = task_report(&rows, |s| s.intelligibility, |t| t.intelligibility)?;
    Ok(EvalReport {
        quality,
        intelligibility,
        n_total: rows.len(),
    })
}

fn task_report(
    rows: &[(ConditionLabel, AudiogramCategory, TaskScores, TargetPair)],
    pred_of: impl Fn(&TaskScores) -> f64,
    truth_of: impl Fn(&TargetPair) -> f64,
) -> Result<TaskReport> {
    let all_pred: Vec<f64> = rows.iter().map(|r| pred_of(&r.2)).collect();
    let all_truth: Vec<f64> = rows.iter().map(|r| truth_of(&r.3)).collect();
    let overall = MetricCell::from_pairs(&all_pred, &all_truth)?;

    let mut by_condition: BTreeMap<ConditionLabel, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut by_category: BTreeMap<AudiogramCategory, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for row in rows {
        let cell = by_condition.entry(row.0).or_default();
        cell.0.push(pred_of(&row.2));
        cell.1.push(truth_of(&row.3));
        let cell = by_category.entry(row.1).or_default();
        cell.0.push(pred_of(&row.2));
        cell.1.push(truth_of(&row.3));
    }

    let mut per_condition = Vec::with_capacity(by_condition.len());
    for (label, (p, t)) in by_condition {
        per_condition.push((label, MetricCell::from_pairs(&p, &t)?));
    }
    let mut per_category = Vec::with_capacity(by_category.len());
    for (label, (p, t)) in by_category {
        per_category.push((label, MetricCell::from_pairs(&p, &t)?));
    }
    Ok(TaskReport {
        overall,
        per_condition,
        per_category,
    })
}

/// Average per-fold reports into one aggregate (mean of each defined cell).
///
/// All reports must share the same table shape. Correlations average over the
/// folds where they are defined.
pub fn aggregate_reports(reports: &[EvalReport]) -> Result<EvalReport> {
    if reports.is_empty() {
        return Err(Error::InvalidInput("no reports to aggregate".into()));
    }
    let quality = aggregate_task(reports.iter().map(|r| &r.quality).collect::<Vec<_>>())?;
    let intelligibility = aggregate_task(
        reports
            .iter()
            .map(|r| &r.intelligibility)
            .collect::<Vec<_>>(),
    )?;
    Ok(EvalReport {
        quality,
        intelligibility,
        n_total: reports.iter().map(|r| r.n_total).sum(),
    })
}

fn aggregate_task(tasks: Vec<&TaskReport>) -> Result<TaskReport> {
    let overall = aggregate_cells(tasks.iter().map(|t| &t.overall));

    let mut condition_labels: Vec<ConditionLabel> =
        tasks[0].per_condition.iter().map(|(l, _)| *l).collect();
    condition_labels.sort();
    let mut per_condition = Vec::new();
    for label in condition_labels {
        let cells: Vec<&MetricCell> = tasks
            .iter()
            .filter_map(|t| {
                t.per_condition
                    .iter()
                    .find(|(l, _)| *l == label)
                    .map(|(_, c)| c)
            })
            .collect();
        per_condition.push((label, aggregate_cells(cells.into_iter())));
    }

    let mut category_labels: Vec<AudiogramCategory> =
        tasks[0].per_category.iter().map(|(l, _)| *l).collect();
    category_labels.sort();
    let mut per_category = Vec::new();
    for label in category_labels {
        let cells: Vec<&MetricCell> = tasks
            .iter()
            .filter_map(|t| {
                t.per_category
                    .iter()
                    .find(|(l, _)| *l == label)
                    .map(|(_, c)| c)
            })
            .collect();
        per_category.push((label, aggregate_cells(cells.into_iter())));
    }

    Ok(TaskReport {
        overall,
        per_condition,
        per_category,
    })
}

fn aggregate_cells<'a>(cells: impl Iterator<Item = &'a MetricCell>) -> MetricCell {
    let cells: Vec<&MetricCell> = cells.collect();
    let k = cells.len() as f64;
    let mean_opt = |vals: Vec<Option<f64>>| -> Option<f64> {
        let defined: Vec<f64> = vals.into_iter().flatten().collect();
        if defined.is_empty() {
            None
        } else {
            Some(defined.iter().sum::<f64>() / defined.len() as f64)
        }
    };
    MetricCell {
        mse: cells.iter().map(|c| c.mse).sum::<f64>() / k,
        lcc: mean_opt(cells.iter().map(|c| c.lcc).collect()),
        srcc: mean_opt(cells.iter().map(|c| c.srcc).collect()),
        n_samples: cells.iter().map(|c| c.n_samples).sum(),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.4}"),
        None => "n/a".into(),
    }
}

impl EvalReport {
    /// CSV rows: `task,partition,row,mse,lcc,srcc,n`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("task,partition,row,mse,lcc,srcc,n\n");
        for (task_name, task) in [
            ("quality", &self.quality),
            ("intelligibility", &self.intelligibility),
        ] {
            let mut push = |partition: &str, row: &str, cell: &MetricCell| {
                out.push_str(&format!(
                    "{task_name},{partition},{row},{:.6},{},{},{}\n",
                    cell.mse,
                    fmt_opt(cell.lcc),
                    fmt_opt(cell.srcc),
                    cell.n_samples
                ));
            };
            push("overall", "all", &task.overall);
            for (label, cell) in &task.per_condition {
                push("condition", label.as_str(), cell);
            }
            for (label, cell) in &task.per_category {
                push("hearing_loss_type", label.as_str(), cell);
            }
        }
        out
    }

    /// Plain-text table, one block per task.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (task_name, task) in [
            ("Quality", &self.quality),
            ("Intelligibility", &self.intelligibility),
        ] {
            out.push_str(&format!("{task_name} (n={})\n", task.overall.n_samples));
            out.push_str(&format!(
                "  {:<18} {:>9} {:>8} {:>8} {:>7}\n",
                "row", "MSE", "LCC", "SRCC", "n"
            ));
            let mut push = |row: &str, cell: &MetricCell| {
                out.push_str(&format!(
                    "  {:<18} {:>9.6} {:>8} {:>8} {:>7}\n",
                    row,
                    cell.mse,
                    fmt_opt(cell.lcc),
                    fmt_opt(cell.srcc),
                    cell.n_samples
                ));
            };
            push("overall", &task.overall);
            for (label, cell) in &task.per_condition {
                push(label.as_str(), cell);
            }
            for (label, cell) in &task.per_category {
                push(label.as_str(), cell);
            }
            out.push('\n');
        }
        out
    }
}
