//! Mean and variance of learned attention weights across repeated runs.

use crate::error::{Error, Result};
use crate::training::trainer::RunRecord;

#[derive(Clone, Debug, PartialEq)]
pub struct WeightStats {
    pub accuracy_mean: f64,
    pub accuracy_var: f64,
    pub weight_mean: Vec<f64>,
    /// Population variance, per weight coordinate.
    pub weight_var: Vec<f64>,
    pub runs: usize,
}

fn mean_var(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    // Shifting by the first value keeps the mean of identical values exact,
    // so their variance is exactly zero.
    let x0 = xs.clone().next().unwrap_or(0.0);
    let mean = x0 + xs.clone().map(|x| x - x0).sum::<f64>() / n;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Statistics over `records`, skipping the 0-based run indices in `exclude`.
pub fn weight_statistics(records: &[RunRecord], exclude: &[usize]) -> Result<WeightStats> {
    if records.len() < 2 {
        return Err(Error::invalid(format!("need at least 2 runs, got {}", records.len())));
    }
    let shape = &records[0].attention_shape;
    if let Some(i) = records.iter().position(|r| &r.attention_shape != shape) {
        return Err(Error::invalid(format!(
            "run {} has attention shape {:?}, run 1 has {shape:?}",
            i + 1,
            records[i].attention_shape
        )));
    }
    if let Some(&k) = exclude.iter().find(|&&k| k >= records.len()) {
        return Err(Error::invalid(format!("excluded run {} does not exist", k + 1)));
    }
    let kept: Vec<&RunRecord> = records
        .iter()
        .enumerate()
        .filter(|(i, _)| !exclude.contains(i))
        .map(|(_, r)| r)
        .collect();
    if kept.is_empty() {
        return Err(Error::invalid("every run is excluded"));
    }
    let (accuracy_mean, accuracy_var) = mean_var(kept.iter().map(|r| r.final_test_acc()));
    let width = records[0].final_attention_weights.len();
    let (weight_mean, weight_var) = (0..width)
        .map(|j| mean_var(kept.iter().map(move |r| r.final_attention_weights[j])))
        .unzip();
    Ok(WeightStats {
        accuracy_mean,
        accuracy_var,
        weight_mean,
        weight_var,
        runs: kept.len(),
    })
}

/// Column names after `metric,accuracy`.
fn weight_columns(shape: &[usize]) -> Vec<String> {
    match shape {
        [n] => (1..=*n).map(|i| format!("branch{i}")).collect(),
        [n, c] => (1..=*n)
            .flat_map(|i| (1..=*c).map(move |k| format!("branch{i}_class{k}")))
            .collect(),
        _ => Vec::new(),
    }
}

/// Mean and Var rows over all runs, then a `Mean (-k)` / `Var (-k)` pair for
/// each excluded run `k` (1-based).
pub fn statistics_table(records: &[RunRecord], exclude: &[usize]) -> Result<String> {
    let mut out = String::from("metric,accuracy");
    for col in weight_columns(&records.first().map(|r| r.attention_shape.clone()).unwrap_or_default()) {
        out.push(',');
        out.push_str(&col);
    }
    out.push('\n');
    let mut rows = |label: &str, s: &WeightStats| {
        let mut mean = format!("Mean{label},{}", s.accuracy_mean);
        let mut var = format!("Var{label},{}", s.accuracy_var);
        for (m, v) in s.weight_mean.iter().zip(&s.weight_var) {
            mean.push_str(&format!(",{m}"));
            var.push_str(&format!(",{v}"));
        }
        out.push_str(&mean);
        out.push('\n');
        out.push_str(&var);
        out.push('\n');
    };
    rows("", &weight_statistics(records, &[])?);
    for &k in exclude {
        rows(&format!(" (-{})", k + 1), &weight_statistics(records, &[k])?);
    }
    Ok(out)
}
