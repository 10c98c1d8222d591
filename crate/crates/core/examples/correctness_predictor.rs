//! Train the logistic correctness classifier on synthetic stability
//! features and compare it to a confidence baseline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vqastab::predictor::{compare_baselines, train_logistic, FeatureSet, FeatureVector, TrainConfig};

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 400;
    let mut vectors = Vec::new();
    let mut labels = Vec::new();
    let mut confidence = Vec::new();
    for i in 0..n {
        let difficulty: f64 = rng.random();
        let stable = f64::from(u8::from(rng.random::<f64>() > difficulty));
        let entropy = difficulty * rng.random::<f64>();
        labels.push(rng.random::<f64>() > difficulty * 0.9);
        confidence.push(Some((1.0 - difficulty + 0.3 * rng.random::<f64>()).min(1.0)));
        vectors.push(FeatureVector {
            sample_id: format!("s{i:04}"),
            features: vec![stable, entropy],
        });
    }
    let features = FeatureSet {
        names: vec!["proxy/visual/stable".into(), "proxy/visual/entropy".into()],
        vectors,
    };
    let cfg = TrainConfig {
        seed: 5,
        ..Default::default()
    };
    let model = train_logistic(&features, &labels, &cfg).expect("trainable");
    println!(
        "weights={:?} bias={:.3} iterations={} converged={}",
        model.weights, model.bias, model.metadata.iterations, model.metadata.converged
    );

    let idx: Vec<usize> = model
        .test_ids
        .iter()
        .map(|id| features.vectors.iter().position(|v| &v.sample_id == id).unwrap())
        .collect();
    let scores: Vec<f64> = idx.iter().map(|&i| model.predict_proba(&features.vectors[i].features)).collect();
    let y: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
    let conf: Vec<Option<f64>> = idx.iter().map(|&i| confidence[i]).collect();
    let report = compare_baselines(&scores, &conf, &y).unwrap();
    for s in std::iter::once(&report.classifier).chain(report.confidence.iter()) {
        println!("{:<10} AP={:.3} AUC={:.3?} recall@P={:?}", s.source, s.average_precision, s.roc_auc, s.recall_at);
    }
}
