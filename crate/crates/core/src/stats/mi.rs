use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::StatsError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binning {
    /// Equal-width bins over the observed min..max range.
    #[default]
    EqualWidth,
    /// Bins holding roughly equal numbers of values; ties share a bin.
    EqualFrequency,
}

/// A discretized column: per-value bin index and the bin edges used.
#[derive(Debug, Clone, PartialEq)]
pub struct Binned {
    pub index: Vec<usize>,
    pub edges: Vec<f64>,
}

pub fn bin_column(x: &[f64], bins: usize, binning: Binning) -> Result<Binned, StatsError> {
    if bins < 2 {
        return Err(StatsError::BadBins(bins));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    if x.is_empty() {
        return Ok(Binned {
            index: Vec::new(),
            edges: Vec::new(),
        });
    }
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Ok(Binned {
            index: vec![0; x.len()],
            edges: vec![lo, hi],
        });
    }
    match binning {
        Binning::EqualWidth => {
            let width = (hi - lo) / bins as f64;
            let index = x
                .iter()
                .map(|&v| (((v - lo) / width).floor() as usize).min(bins - 1))
                .collect();
            let edges = (0..=bins).map(|k| lo + width * k as f64).collect();
            Ok(Binned { index, edges })
        }
        Binning::EqualFrequency => {
            let n = x.len();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
            let mut index = vec![0; n];
            let mut edges = vec![lo];
            let mut rank = 0;
            while rank < n {
                let v = x[order[rank]];
                let mut end = rank;
                while end < n && x[order[end]] == v {
                    end += 1;
                }
                let bin = (rank * bins / n).min(bins - 1);
                if bin + 1 > edges.len() {
                    edges.push(v);
                }
                for &i in &order[rank..end] {
                    index[i] = bin;
                }
                rank = end;
            }
            edges.push(hi);
            Ok(Binned { index, edges })
        }
    }
}

fn counts<K: Ord + Copy>(keys: impl Iterator<Item = K>) -> (BTreeMap<K, usize>, usize) {
    let mut m = BTreeMap::new();
    let mut n = 0;
    for k in keys {
        *m.entry(k).or_insert(0) += 1;
        n += 1;
    }
    (m, n)
}

/// Entropy in bits of a discrete column.
pub fn discrete_entropy(x: &[usize]) -> f64 {
    let (c, _) = counts(x.iter().copied());
    crate::stability::entropy_bits(c.into_values())
}

/// Plug-in mutual information in bits of two discrete columns.
pub fn discrete_mutual_information(x: &[usize], y: &[usize]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let n = x.len();
    if n == 0 {
        return 0.0;
    }
    let (px, _) = counts(x.iter().copied());
    let (py, _) = counts(y.iter().copied());
    let (pxy, _) = counts(x.iter().copied().zip(y.iter().copied()));
    let nf = n as f64;
    let mi: f64 = pxy
        .iter()
        .map(|(&(a, b), &c)| {
            let c = c as f64;
            (c / nf) * (c * nf / (px[&a] as f64 * py[&b] as f64)).log2()
        })
        .sum();
    mi.max(0.0)
}

fn check(x: &[f64], y: &[f64], bins: usize) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if bins < 2 {
        return Err(StatsError::BadBins(bins));
    }
    if x.len() < bins {
        return Err(StatsError::TooFew {
            need: bins,
            got: x.len(),
        });
    }
    Ok(())
}

/// Mutual information in bits after equal-width binning of each column.
pub fn mutual_information(x: &[f64], y: &[f64], bins: usize) -> Result<f64, StatsError> {
    mutual_information_with(x, y, bins, Binning::EqualWidth)
}

pub fn mutual_information_with(x: &[f64], y: &[f64], bins: usize, binning: Binning) -> Result<f64, StatsError> {
    check(x, y, bins)?;
    let bx = bin_column(x, bins, binning)?;
    let by = bin_column(y, bins, binning)?;
    Ok(discrete_mutual_information(&bx.index, &by.index))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MIReport {
    pub i_raw: f64,
    pub i_conditional: f64,
    /// `i_conditional / i_raw`; absent when `i_raw` is zero.
    pub ratio: Option<f64>,
    pub bins: usize,
    pub binning: Binning,
    pub edges_x: Vec<f64>,
    pub edges_y: Vec<f64>,
    pub edges_c: Vec<f64>,
}

/// I(X;Y|C) = Σ_c p(c)·I(X;Y | C=c) with all three columns binned alike,
/// together with the unconditional I(X;Y).
pub fn conditional_mutual_information(
    x: &[f64],
    y: &[f64],
    c: &[f64],
    bins: usize,
    binning: Binning,
) -> Result<MIReport, StatsError> {
    check(x, y, bins)?;
    check(x, c, bins)?;
    let bx = bin_column(x, bins, binning)?;
    let by = bin_column(y, bins, binning)?;
    let bc = bin_column(c, bins, binning)?;
    let i_raw = discrete_mutual_information(&bx.index, &by.index);

    let mut slices: BTreeMap<usize, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for i in 0..x.len() {
        let s = slices.entry(bc.index[i]).or_default();
        s.0.push(bx.index[i]);
        s.1.push(by.index[i]);
    }
    let n = x.len() as f64;
    let i_conditional: f64 = slices
        .values()
        .map(|(sx, sy)| (sx.len() as f64 / n) * discrete_mutual_information(sx, sy))
        .sum();
    Ok(MIReport {
        i_raw,
        i_conditional,
        ratio: (i_raw > 0.0).then(|| i_conditional / i_raw),
        bins,
        binning,
        edges_x: bx.edges,
        edges_y: by.edges,
        edges_c: bc.edges,
    })
}
