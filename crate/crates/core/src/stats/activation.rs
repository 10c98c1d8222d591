use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::StatsError;
use crate::modelio::ORIGINAL_QUESTION_ID;
use crate::stability::{classify_record, Kind, RecordRole, StabilityProfile};

/// Pooled per-layer activations of one (sample, variant) input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationTrace {
    pub sample_id: String,
    pub variant_id: String,
    pub layers: Vec<Vec<f32>>,
}

impl ActivationTrace {
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.layers.iter().map(Vec::len).collect()
    }

    fn key(&self) -> String {
        format!("{}/{}", self.sample_id, self.variant_id)
    }
}

/// Euclidean distance, accumulated in f64.
pub fn l2_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Per-layer (Δp, Δq): distance from the original to the variant that kept
/// its answer and to the one that changed it.
pub fn activation_divergence(
    original: &ActivationTrace,
    stable: &ActivationTrace,
    flipped: &ActivationTrace,
) -> Result<Vec<(f64, f64)>, StatsError> {
    let dims = original.dims();
    for t in [stable, flipped] {
        if t.dims() != dims {
            return Err(StatsError::DimensionMismatch(t.key()));
        }
    }
    Ok((0..dims.len())
        .map(|l| {
            (
                l2_distance(&original.layers[l], &stable.layers[l]),
                l2_distance(&original.layers[l], &flipped.layers[l]),
            )
        })
        .collect())
}

#[derive(Debug, Clone, Copy)]
pub struct Triplet<'a> {
    pub original: &'a ActivationTrace,
    pub stable: &'a ActivationTrace,
    pub flipped: &'a ActivationTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPoint {
    pub layer: usize,
    pub mean_stable: f64,
    pub mean_flipped: f64,
    pub mean_difference: f64,
    /// Mean Δ over all triplets and both conditions at this layer.
    pub normalizer: f64,
    /// False when the normalizer was zero and raw values were kept.
    pub normalized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceCurve {
    pub triplets: usize,
    pub layers: Vec<LayerPoint>,
}

impl DivergenceCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,mean_stable,mean_flipped,mean_difference,normalizer,normalized\n");
        for p in &self.layers {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{}\n",
                p.layer, p.mean_stable, p.mean_flipped, p.mean_difference, p.normalizer, p.normalized
            ));
        }
        out
    }
}

/// Mean normalized Δp, Δq and Δq − Δp per layer. Each layer is divided by
/// its mean Δ over every triplet and both conditions.
pub fn divergence_curves(triplets: &[Triplet<'_>]) -> Result<DivergenceCurve, StatsError> {
    let first = triplets.first().ok_or(StatsError::NoTriplets)?;
    let dims = first.original.dims();
    let mut per: Vec<Vec<(f64, f64)>> = Vec::with_capacity(triplets.len());
    for t in triplets {
        if t.original.dims() != dims {
            return Err(StatsError::DimensionMismatch(t.original.key()));
        }
        per.push(activation_divergence(t.original, t.stable, t.flipped)?);
    }
    let n = triplets.len() as f64;
    let layers = (0..dims.len())
        .map(|l| {
            let sum_p: f64 = per.iter().map(|d| d[l].0).sum();
            let sum_q: f64 = per.iter().map(|d| d[l].1).sum();
            let normalizer = (sum_p + sum_q) / (2.0 * n);
            let normalized = normalizer > 0.0;
            if !normalized {
                tracing::warn!(layer = l, "zero mean divergence; layer left unnormalized");
            }
            let scale = if normalized { normalizer } else { 1.0 };
            let diff: f64 = per.iter().map(|d| d[l].1 - d[l].0).sum();
            LayerPoint {
                layer: l,
                mean_stable: sum_p / n / scale,
                mean_flipped: sum_q / n / scale,
                mean_difference: diff / n / scale,
                normalizer,
                normalized,
            }
        })
        .collect();
    Ok(DivergenceCurve {
        triplets: triplets.len(),
        layers,
    })
}

/// Which variants form the (original, stable, flipped) triplet of a sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletSpec {
    pub sample_id: String,
    pub kind: Kind,
    pub original: String,
    pub stable: String,
    pub flipped: String,
}

fn kind_of(variant_id: &str) -> Option<Kind> {
    let role = match classify_record(variant_id, ORIGINAL_QUESTION_ID) {
        RecordRole::Unknown => classify_record("identity", variant_id),
        r => r,
    };
    match role {
        RecordRole::Perturbed(k) => Some(k),
        _ => None,
    }
}

/// For each sample and perturbation kind with both an answer-preserving and
/// an answer-changing variant, the lexicographically first of each.
pub fn select_triplets(profiles: &[StabilityProfile]) -> Vec<TripletSpec> {
    let mut out = Vec::new();
    for p in profiles {
        let mut per_kind: BTreeMap<Kind, (Option<&String>, Option<&String>)> = BTreeMap::new();
        for (variant, answer) in &p.answers {
            let Some(kind) = kind_of(variant) else { continue };
            let slot = per_kind.entry(kind).or_default();
            if *answer == p.identity_answer {
                slot.0.get_or_insert(variant);
            } else {
                slot.1.get_or_insert(variant);
            }
        }
        for (kind, pair) in per_kind {
            if let (Some(stable), Some(flipped)) = pair {
                out.push(TripletSpec {
                    sample_id: p.sample_id.clone(),
                    kind,
                    original: "identity".into(),
                    stable: stable.clone(),
                    flipped: flipped.clone(),
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(layers: Vec<Vec<f32>>) -> ActivationTrace {
        ActivationTrace {
            sample_id: "s".into(),
            variant_id: "v".into(),
            layers,
        }
    }

    #[test]
    fn three_four_five() {
        let o = trace(vec![vec![0.0, 0.0]]);
        let q = trace(vec![vec![3.0, 4.0]]);
        assert_eq!(activation_divergence(&o, &o, &q).unwrap(), vec![(0.0, 5.0)]);
    }

    #[test]
    fn mismatched_dims_rejected() {
        let o = trace(vec![vec![0.0, 0.0]]);
        let q = trace(vec![vec![3.0]]);
        assert!(activation_divergence(&o, &o, &q).is_err());
    }

    #[test]
    fn equal_variants_give_zero_difference() {
        let o = trace(vec![vec![0.0; 3], vec![1.0; 3]]);
        let v = trace(vec![vec![1.0; 3], vec![2.0; 3]]);
        let t = Triplet {
            original: &o,
            stable: &v,
            flipped: &v,
        };
        let c = divergence_curves(&[t, t]).unwrap();
        assert_eq!(c.layers.len(), 2);
        assert!(c.layers.iter().all(|p| p.mean_difference == 0.0 && p.normalized));
        assert!(matches!(divergence_curves(&[]), Err(StatsError::NoTriplets)));
    }

    #[test]
    fn zero_layer_flagged() {
        let o = trace(vec![vec![1.0]]);
        let t = Triplet {
            original: &o,
            stable: &o,
            flipped: &o,
        };
        let c = divergence_curves(&[t]).unwrap();
        assert!(!c.layers[0].normalized);
    }
}
