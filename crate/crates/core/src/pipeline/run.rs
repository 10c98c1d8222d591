use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    io_err, read_jsonl, write_if_changed, write_json, ArtifactMeta, PipelineError, RunConfig, StageSummary,
    Workspace,
};
use crate::modelio::{run_matrix, AnswerRecord, ChatClient, DiskCache};
use crate::tperturb::TextManifestEntry;
use crate::vperturb::VisualManifestEntry;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct EndpointRun {
    pub records: usize,
    pub errors: usize,
    pub refusals: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct RunMeta {
    pub meta: ArtifactMeta,
    pub endpoints: BTreeMap<String, EndpointRun>,
}

pub(crate) fn answer_log_path(cfg: &RunConfig, endpoint: &str) -> std::path::PathBuf {
    cfg.stage_dir("run").join(format!("{endpoint}.jsonl"))
}

/// Query every configured endpoint on the perturbed sets and write one
/// answer log per endpoint. Cached answers are reused, so an interrupted
/// run resumes where it stopped.
pub async fn cmd_run(cfg: &RunConfig) -> Result<StageSummary, PipelineError> {
    let ws = Workspace::load(cfg)?;
    let perturb = cfg.stage_dir("perturb");
    let visual: Vec<VisualManifestEntry> = read_jsonl(&perturb.join("visual_manifest.jsonl"), "perturb")?;
    let text: Vec<TextManifestEntry> = read_jsonl(&perturb.join("text_manifest.jsonl"), "perturb")?;
    let cache_dir = cfg.out_dir.join("cache").join("answers");
    let cache = DiskCache::new(&cache_dir).map_err(io_err(&cache_dir))?;

    let mut endpoints = BTreeMap::new();
    let mut written = 0;
    let mut failed = Vec::new();
    for endpoint in cfg.endpoints() {
        let client = ChatClient::new(endpoint.clone(), Some(cache.clone()))
            .map_err(|e| PipelineError::Validation(e.to_string()))?;
        let records = run_matrix(&ws.merged, &visual, &text, &client, &perturb)
            .await
            .map_err(|e| PipelineError::Validation(e.to_string()))?;
        let errors = records.iter().filter(|r| r.is_error()).count();
        let refusals = records
            .iter()
            .filter(|r| r.normalized == crate::modelio::REFUSAL_TOKEN)
            .count();
        let path = answer_log_path(cfg, &endpoint.name);
        written += usize::from(write_if_changed(&path, log_bytes(&records).as_bytes())?);
        if errors > 0 {
            tracing::warn!(endpoint = %endpoint.name, errors, "records with errors");
        }
        if !records.is_empty() && errors == records.len() {
            failed.push(endpoint.name.clone());
        }
        endpoints.insert(
            endpoint.name.clone(),
            EndpointRun {
                records: records.len(),
                errors,
                refusals,
            },
        );
    }
    let meta = RunMeta {
        meta: cfg.meta(),
        endpoints,
    };
    written += usize::from(write_json(&cfg.stage_dir("run").join("meta.json"), &meta)?);
    if !failed.is_empty() {
        return Err(PipelineError::Upstream(format!(
            "every request failed for endpoint(s) {}",
            failed.join(", ")
        )));
    }
    Ok(StageSummary {
        stage: "run".into(),
        files_written: written,
        details: serde_json::to_value(&meta.endpoints).expect("serializable"),
    })
}

fn log_bytes(records: &[AnswerRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}
