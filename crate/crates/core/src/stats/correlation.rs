use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::StatsError;
use crate::stability::csv_field;

/// Square matrix with row/column labels; `None` marks undefined entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl LabeledMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.labels.iter().position(|l| l == a)?;
        let j = self.labels.iter().position(|l| l == b)?;
        self.values[i][j]
    }

    /// Header row of labels, one row per label; empty cells are undefined.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label");
        for l in &self.labels {
            out.push(',');
            out.push_str(&csv_field(l));
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.values) {
            out.push_str(&csv_field(l));
            for v in row {
                out.push(',');
                if let Some(v) = v {
                    out.push_str(&format!("{v:.6}"));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Matthews correlation of two flag vectors; `None` when a marginal is empty.
pub fn mcc(a: &[bool], b: &[bool]) -> Result<Option<f64>, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    let (mut tp, mut tn, mut fp, mut fneg) = (0u64, 0u64, 0u64, 0u64);
    for (&x, &y) in a.iter().zip(b) {
        match (x, y) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (false, true) => fp += 1,
            (true, false) => fneg += 1,
        }
    }
    let denom = ((tp + fp) as f64) * ((tp + fneg) as f64) * ((tn + fp) as f64) * ((tn + fneg) as f64);
    if denom == 0.0 {
        return Ok(None);
    }
    let num = (tp * tn) as f64 - (fp * fneg) as f64;
    Ok(Some((num / denom.sqrt()).clamp(-1.0, 1.0)))
}

/// Pairwise MCC between models' per-sample flags. Every model must cover
/// the same samples. The diagonal is 1.
pub fn matthews_matrix(models: &[(String, BTreeMap<String, bool>)]) -> Result<LabeledMatrix, StatsError> {
    if models.len() < 2 {
        return Err(StatsError::TooFew {
            need: 2,
            got: models.len(),
        });
    }
    let (first_name, first) = &models[0];
    for (name, flags) in &models[1..] {
        if !flags.keys().eq(first.keys()) {
            return Err(StatsError::MismatchedSamples(first_name.clone(), name.clone()));
        }
    }
    let vectors: Vec<Vec<bool>> = models.iter().map(|(_, f)| f.values().copied().collect()).collect();
    let n = models.len();
    let mut values = vec![vec![None; n]; n];
    for i in 0..n {
        values[i][i] = Some(1.0);
        for j in i + 1..n {
            let m = mcc(&vectors[i], &vectors[j])?;
            values[i][j] = m;
            values[j][i] = m;
        }
    }
    Ok(LabeledMatrix {
        labels: models.iter().map(|(n, _)| n.clone()).collect(),
        values,
    })
}

/// Pearson correlation over rows where both values are present. `None`
/// when fewer than 3 such rows remain or a column has zero variance.
pub fn pearson(x: &[Option<f64>], y: &[Option<f64>]) -> Result<Option<f64>, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let pairs: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
        .collect();
    if pairs.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    if pairs.len() < 3 {
        return Ok(None);
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in &pairs {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)))
}

/// Pairwise Pearson matrix of named columns with pairwise deletion.
pub fn pearson_matrix(columns: &[(String, Vec<Option<f64>>)]) -> Result<LabeledMatrix, StatsError> {
    let n = columns.len();
    let mut values = vec![vec![None; n]; n];
    for i in 0..n {
        for j in i..n {
            let r = pearson(&columns[i].1, &columns[j].1)?;
            if r.is_none() {
                tracing::warn!(a = %columns[i].0, b = %columns[j].0, "correlation undefined");
            }
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(LabeledMatrix {
        labels: columns.iter().map(|(n, _)| n.clone()).collect(),
        values,
    })
}
