//! Predicting a target model's per-sample correctness from proxy models'
//! stability features with L2-regularized logistic regression, and
//! precision-recall evaluation against a confidence baseline.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stability::{Kind, StabilityProfile};

#[derive(Debug, Error, PartialEq)]
pub enum PredictorError {
    #[error("proxy {proxy:?} has samples outside the labeled set, e.g. {sample:?}")]
    MismatchedSamples { proxy: String, sample: String },
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("training split contains a single class")]
    SingleClass,
    #[error("labels contain no positives")]
    NoPositives,
    #[error("feature/label length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite score")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub families: Vec<Kind>,
    /// Include per-family entropies next to the binary flags.
    pub include_entropy: bool,
    /// Include each proxy's own correctness flag.
    pub include_correctness: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            families: Kind::VISUAL.to_vec(),
            include_entropy: true,
            include_correctness: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub sample_id: String,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub names: Vec<String>,
    pub vectors: Vec<FeatureVector>,
}

impl FeatureSet {
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        self.vectors.iter().map(|v| v.features.clone()).collect()
    }
}

/// Stability features for `sample_ids` from each proxy's profiles. Columns
/// are ordered by proxy name, then family name. A (proxy, family) block
/// missing for some sample is zero-filled and gets a `missing` column.
pub fn build_features(
    sample_ids: &[String],
    proxies: &[(String, Vec<StabilityProfile>)],
    config: &FeatureConfig,
) -> Result<FeatureSet, PredictorError> {
    let wanted: BTreeSet<&str> = sample_ids.iter().map(String::as_str).collect();
    let mut proxies: Vec<(&str, BTreeMap<&str, &StabilityProfile>)> = proxies
        .iter()
        .map(|(name, profiles)| {
            let by_id: BTreeMap<&str, &StabilityProfile> =
                profiles.iter().map(|p| (p.sample_id.as_str(), p)).collect();
            (name.as_str(), by_id)
        })
        .collect();
    proxies.sort_by(|a, b| a.0.cmp(b.0));
    for (name, by_id) in &proxies {
        if let Some(extra) = by_id.keys().find(|id| !wanted.contains(*id)) {
            return Err(PredictorError::MismatchedSamples {
                proxy: name.to_string(),
                sample: extra.to_string(),
            });
        }
    }
    let mut families = config.families.clone();
    families.sort_by_key(|k| k.as_str());
    families.dedup();

    let mut names = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (proxy, by_id) in &proxies {
        for &kind in &families {
            let stats: Vec<_> = sample_ids
                .iter()
                .map(|id| by_id.get(id.as_str()).and_then(|p| p.family(kind)))
                .collect();
            names.push(format!("{proxy}/{kind}/stable"));
            columns.push(stats.iter().map(|s| s.map_or(0.0, |f| f64::from(u8::from(f.stable())))).collect());
            if config.include_entropy {
                names.push(format!("{proxy}/{kind}/entropy"));
                columns.push(stats.iter().map(|s| s.map_or(0.0, |f| f.entropy)).collect());
            }
            if stats.iter().any(Option::is_none) {
                names.push(format!("{proxy}/{kind}/missing"));
                columns.push(stats.iter().map(|s| f64::from(u8::from(s.is_none()))).collect());
            }
        }
        if config.include_correctness {
            let profiles: Vec<_> = sample_ids.iter().map(|id| by_id.get(id.as_str())).collect();
            names.push(format!("{proxy}/correct"));
            columns.push(profiles.iter().map(|p| p.map_or(0.0, |p| f64::from(u8::from(p.correct)))).collect());
            if profiles.iter().any(Option::is_none) {
                names.push(format!("{proxy}/correct/missing"));
                columns.push(profiles.iter().map(|p| f64::from(u8::from(p.is_none()))).collect());
            }
        }
    }
    let vectors = sample_ids
        .iter()
        .enumerate()
        .map(|(i, id)| FeatureVector {
            sample_id: id.clone(),
            features: columns.iter().map(|c| c[i]).collect(),
        })
        .collect();
    Ok(FeatureSet { names, vectors })
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean log-loss plus (λ/2)·‖w‖². Parameters are the weights followed by
/// the (unregularized) bias.
#[derive(Debug, Clone)]
pub struct LogisticObjective<'a> {
    pub x: &'a [Vec<f64>],
    pub y: &'a [f64],
    pub l2: f64,
}

/// Result of gradient descent on a [`LogisticObjective`].
#[derive(Debug, Clone, PartialEq)]
pub struct Descent {
    pub theta: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Loss before the first step and after every step.
    pub losses: Vec<f64>,
}

impl LogisticObjective<'_> {
    fn dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    fn margin(theta: &[f64], row: &[f64]) -> f64 {
        let d = row.len();
        row.iter().zip(&theta[..d]).map(|(a, w)| a * w).sum::<f64>() + theta[d]
    }

    pub fn loss(&self, theta: &[f64]) -> f64 {
        let n = self.x.len() as f64;
        let d = self.dim();
        let data: f64 = self
            .x
            .iter()
            .zip(self.y)
            .map(|(row, &y)| softplus(Self::margin(theta, row)) - y * Self::margin(theta, row))
            .sum::<f64>()
            / n;
        data + 0.5 * self.l2 * theta[..d].iter().map(|w| w * w).sum::<f64>()
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let n = self.x.len() as f64;
        let d = self.dim();
        let mut g = vec![0.0; d + 1];
        for (row, &y) in self.x.iter().zip(self.y) {
            let r = sigmoid(Self::margin(theta, row)) - y;
            for (gj, xj) in g.iter_mut().zip(row) {
                *gj += r * xj;
            }
            g[d] += r;
        }
        for gj in &mut g {
            *gj /= n;
        }
        for j in 0..d {
            g[j] += self.l2 * theta[j];
        }
        g
    }

    /// Full-batch gradient descent from zero until the gradient's max-norm
    /// drops below `tol` or `max_iter` steps were taken.
    pub fn descend(&self, step: f64, tol: f64, max_iter: usize) -> Descent {
        let mut theta = vec![0.0; self.dim() + 1];
        let mut losses = vec![self.loss(&theta)];
        let mut iterations = 0;
        let mut converged = false;
        while iterations < max_iter {
            let g = self.gradient(&theta);
            if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) < tol {
                converged = true;
                break;
            }
            for (t, gj) in theta.iter_mut().zip(&g) {
                *t -= step * gj;
            }
            iterations += 1;
            losses.push(self.loss(&theta));
        }
        if !converged {
            let g = self.gradient(&theta);
            converged = g.iter().fold(0.0f64, |m, v| m.max(v.abs())) < tol;
        }
        Descent {
            theta,
            iterations,
            converged,
            losses,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub split_fraction: f64,
    pub seed: u64,
    pub step: f64,
    pub l2: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub min_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            split_fraction: 0.75,
            seed: 0,
            step: 0.1,
            l2: 1e-3,
            tol: 1e-6,
            max_iter: 10_000,
            min_samples: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub split_fraction: f64,
    pub step: f64,
    pub l2: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedClassifier {
    pub feature_names: Vec<String>,
    /// Weights on standardized features.
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Training-split mean and scale used to standardize each feature.
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub metadata: TrainingMetadata,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl TrainedClassifier {
    pub fn predict_proba(&self, features: &[f64]) -> f64 {
        let z: f64 = features
            .iter()
            .zip(&self.means)
            .zip(&self.scales)
            .zip(&self.weights)
            .map(|(((x, m), s), w)| (x - m) / s * w)
            .sum::<f64>()
            + self.bias;
        sigmoid(z)
    }
}

/// Seeded partition of `0..n` into (train, test) index lists.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ((n as f64 * fraction).round() as usize).min(n);
    let mut train = idx[..cut].to_vec();
    let mut test = idx[cut..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Fit logistic regression on a seeded split of `features`.
pub fn train_logistic(
    features: &FeatureSet,
    labels: &[bool],
    config: &TrainConfig,
) -> Result<TrainedClassifier, PredictorError> {
    let n = features.vectors.len();
    if labels.len() != n {
        return Err(PredictorError::LengthMismatch(n, labels.len()));
    }
    if n < config.min_samples {
        return Err(PredictorError::TooFewSamples {
            need: config.min_samples,
            got: n,
        });
    }
    let (train, test) = split_indices(n, config.split_fraction, config.seed);
    let positives = train.iter().filter(|&&i| labels[i]).count();
    if positives == 0 || positives == train.len() {
        return Err(PredictorError::SingleClass);
    }
    let d = features.names.len();
    let m = train.len() as f64;
    let mut means = vec![0.0; d];
    let mut scales = vec![0.0; d];
    for j in 0..d {
        means[j] = train.iter().map(|&i| features.vectors[i].features[j]).sum::<f64>() / m;
        let var = train
            .iter()
            .map(|&i| (features.vectors[i].features[j] - means[j]).powi(2))
            .sum::<f64>()
            / m;
        scales[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    let x: Vec<Vec<f64>> = train
        .iter()
        .map(|&i| {
            features.vectors[i]
                .features
                .iter()
                .enumerate()
                .map(|(j, v)| (v - means[j]) / scales[j])
                .collect()
        })
        .collect();
    let y: Vec<f64> = train.iter().map(|&i| f64::from(u8::from(labels[i]))).collect();
    let objective = LogisticObjective { x: &x, y: &y, l2: config.l2 };
    let fit = objective.descend(config.step, config.tol, config.max_iter);
    let final_loss = *fit.losses.last().expect("initial loss recorded");
    let ids = |idx: &[usize]| idx.iter().map(|&i| features.vectors[i].sample_id.clone()).collect();
    Ok(TrainedClassifier {
        feature_names: features.names.clone(),
        weights: fit.theta[..d].to_vec(),
        bias: fit.theta[d],
        means,
        scales,
        metadata: TrainingMetadata {
            seed: config.seed,
            split_fraction: config.split_fraction,
            step: config.step,
            l2: config.l2,
            iterations: fit.iterations,
            converged: fit.converged,
            final_loss,
        },
        train_ids: ids(&train),
        test_ids: ids(&test),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// One point per distinct score, from the highest threshold down.
    pub points: Vec<PrPoint>,
    pub average_precision: f64,
    pub positives: usize,
    pub total: usize,
}

impl PrCurve {
    /// Highest recall among points with precision ≥ `precision`.
    pub fn recall_at_precision(&self, precision: f64) -> Option<f64> {
        self.points
            .iter()
            .filter(|p| p.precision >= precision - 1e-12)
            .map(|p| p.recall)
            .fold(None, |m: Option<f64>, r| Some(m.map_or(r, |m| m.max(r))))
    }

    pub fn to_csv(&self, source: &str) -> String {
        let mut out = String::new();
        for p in &self.points {
            out.push_str(&format!("{source},{:.6},{:.6},{:.6}\n", p.threshold, p.precision, p.recall));
        }
        out
    }
}

fn check_scores(scores: &[f64], labels: &[bool]) -> Result<(), PredictorError> {
    if scores.len() != labels.len() {
        return Err(PredictorError::LengthMismatch(scores.len(), labels.len()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(PredictorError::NonFinite);
    }
    Ok(())
}

/// Precision and recall at every distinct score threshold, with average
/// precision Σ (Rₖ − Rₖ₋₁)·Pₖ.
pub fn precision_recall(scores: &[f64], labels: &[bool]) -> Result<PrCurve, PredictorError> {
    check_scores(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(PredictorError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / positives as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push(PrPoint {
            threshold,
            precision,
            recall,
        });
    }
    Ok(PrCurve {
        points,
        average_precision: ap,
        positives,
        total: labels.len(),
    })
}

/// Area under the ROC curve as the Mann-Whitney statistic; ties count half.
/// `None` when either class is absent.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<Option<f64>, PredictorError> {
    check_scores(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        rank_sum += order[i..j].iter().filter(|&&k| labels[k]).count() as f64 * avg_rank;
        i = j;
    }
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return Ok(None);
    }
    Ok(Some((rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg)))
}

/// Precision levels reported in recall-at-precision tables.
pub const REPORT_PRECISIONS: [f64; 4] = [0.8, 0.85, 0.9, 0.92];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub source: String,
    pub samples: usize,
    pub average_precision: f64,
    pub roc_auc: Option<f64>,
    /// (precision level, best recall at or above it).
    pub recall_at: Vec<(f64, Option<f64>)>,
    pub curve: PrCurve,
}

pub fn summarize(source: &str, scores: &[f64], labels: &[bool]) -> Result<ScoreSummary, PredictorError> {
    let curve = precision_recall(scores, labels)?;
    Ok(ScoreSummary {
        source: source.to_string(),
        samples: scores.len(),
        average_precision: curve.average_precision,
        roc_auc: roc_auc(scores, labels)?,
        recall_at: REPORT_PRECISIONS
            .iter()
            .map(|&p| (p, curve.recall_at_precision(p)))
            .collect(),
        curve,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub classifier: ScoreSummary,
    pub confidence: Option<ScoreSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Classifier scores against a confidence column on the same samples.
/// Confidence is evaluated on the rows where it is present.
pub fn compare_baselines(
    classifier_scores: &[f64],
    confidence: &[Option<f64>],
    labels: &[bool],
) -> Result<BaselineReport, PredictorError> {
    let classifier = summarize("classifier", classifier_scores, labels)?;
    let mut notes = Vec::new();
    let covered: Vec<(f64, bool)> = confidence
        .iter()
        .zip(labels)
        .filter_map(|(c, &l)| c.map(|c| (c, l)))
        .collect();
    let confidence = if covered.is_empty() {
        notes.push("no confidence values; classifier-only report".to_string());
        None
    } else {
        if covered.len() < labels.len() {
            notes.push(format!(
                "confidence present for {} of {} samples",
                covered.len(),
                labels.len()
            ));
        }
        let (s, l): (Vec<f64>, Vec<bool>) = covered.into_iter().unzip();
        match summarize("confidence", &s, &l) {
            Ok(sum) => Some(sum),
            Err(e) => {
                notes.push(format!("confidence not evaluable: {e}"));
                None
            }
        }
    };
    Ok(BaselineReport {
        classifier,
        confidence,
        notes,
    })
}
