use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::analyze::read_profiles;
use super::{write_if_changed, write_json, ArtifactMeta, PipelineError, RunConfig, StageSummary};
use crate::predictor::{
    build_features, compare_baselines, train_logistic, BaselineReport, TrainedClassifier, REPORT_PRECISIONS,
};
use crate::stability::StabilityProfile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSummary {
    pub meta: ArtifactMeta,
    pub target: String,
    pub proxies: Vec<String>,
    pub features: Vec<String>,
    pub train_samples: usize,
    pub test_samples: usize,
    pub test_positives: usize,
    pub baseline: BaselineReport,
}

fn validation(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Validation(e.to_string())
}

/// Train the correctness classifier on proxy stability features and score
/// it on the held-out split against the target's own confidence.
pub fn cmd_predict(cfg: &RunConfig) -> Result<StageSummary, PipelineError> {
    if cfg.proxies.is_empty() {
        return Err(PipelineError::Validation(
            "the predictor needs at least one [[proxies]] endpoint".into(),
        ));
    }
    let profiles = read_profiles(cfg)?;
    let target_name = &cfg.target.name;
    let target: Vec<StabilityProfile> = profiles
        .get(target_name)
        .cloned()
        .ok_or_else(|| validation(format!("analyze/profiles.json has no target {target_name:?}; rerun analyze")))?;
    let ids: Vec<String> = target.iter().map(|p| p.sample_id.clone()).collect();
    let wanted: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
    let mut proxies = Vec::new();
    for p in &cfg.proxies {
        let ps = profiles
            .get(&p.name)
            .ok_or_else(|| validation(format!("analyze/profiles.json has no proxy {:?}; rerun analyze", p.name)))?;
        let kept: Vec<StabilityProfile> = ps.iter().filter(|x| wanted.contains(x.sample_id.as_str())).cloned().collect();
        proxies.push((p.name.clone(), kept));
    }
    let features = build_features(&ids, &proxies, &cfg.predictor.features).map_err(validation)?;
    let labels: Vec<bool> = target.iter().map(|p| p.correct).collect();
    let mut train_cfg = cfg.predictor.train.clone();
    train_cfg.seed = cfg.seed;
    let classifier: TrainedClassifier = train_logistic(&features, &labels, &train_cfg).map_err(validation)?;

    let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let test: Vec<usize> = classifier.test_ids.iter().map(|id| index[id.as_str()]).collect();
    let scores: Vec<f64> = test
        .iter()
        .map(|&i| classifier.predict_proba(&features.vectors[i].features))
        .collect();
    let test_labels: Vec<bool> = test.iter().map(|&i| labels[i]).collect();
    let confidence: Vec<Option<f64>> = test.iter().map(|&i| target[i].confidence).collect();
    let baseline = compare_baselines(&scores, &confidence, &test_labels).map_err(validation)?;

    let meta = cfg.meta();
    let summary = PredictionSummary {
        meta: meta.clone(),
        target: target_name.clone(),
        proxies: proxies.iter().map(|p| p.0.clone()).collect(),
        features: features.names.clone(),
        train_samples: classifier.train_ids.len(),
        test_samples: test.len(),
        test_positives: test_labels.iter().filter(|&&l| l).count(),
        baseline: baseline.clone(),
    };

    let dir = cfg.stage_dir("predict");
    let mut curves = format!("{}source,threshold,precision,recall\n", meta.csv_comment());
    let mut recall = format!("{}source,precision,recall\n", meta.csv_comment());
    for s in std::iter::once(&baseline.classifier).chain(baseline.confidence.iter()) {
        curves.push_str(&s.curve.to_csv(&s.source));
        for &p in &REPORT_PRECISIONS {
            let r = s.curve.recall_at_precision(p);
            recall.push_str(&format!(
                "{},{p:.2},{}\n",
                s.source,
                r.map(|r| format!("{r:.6}")).unwrap_or_default()
            ));
        }
    }
    let mut written = 0;
    written += usize::from(write_json(&dir.join("classifier.json"), &serde_json::json!({
        "meta": meta,
        "classifier": classifier,
    }))?);
    written += usize::from(write_if_changed(&dir.join("pr_curves.csv"), curves.as_bytes())?);
    written += usize::from(write_if_changed(&dir.join("recall_at_precision.csv"), recall.as_bytes())?);
    written += usize::from(write_json(&dir.join("baseline.json"), &baseline)?);
    written += usize::from(write_json(&dir.join("summary.json"), &summary)?);
    Ok(StageSummary {
        stage: "predict".into(),
        files_written: written,
        details: serde_json::json!({
            "train_samples": summary.train_samples,
            "test_samples": summary.test_samples,
            "classifier_ap": baseline.classifier.average_precision,
            "confidence_ap": baseline.confidence.as_ref().map(|c| c.average_precision),
        }),
    })
}

pub(crate) fn read_prediction(cfg: &RunConfig) -> Result<PredictionSummary, PipelineError> {
    super::read_json(&cfg.stage_dir("predict").join("summary.json"), "predict")
}
