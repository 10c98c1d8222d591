use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;
use tokio::task::JoinSet;

use super::cache::write_atomic;
use super::{AnswerRecord, ChatClient, ModelError, Reply};
use crate::corpus::Corpus;
use crate::tperturb::TextManifestEntry;
use crate::vperturb::VisualManifestEntry;

/// `text_variant_id` of records asked with the sample's own question.
pub const ORIGINAL_QUESTION_ID: &str = "orig";

/// `image_variant_id` of the unperturbed image.
pub const IDENTITY_IMAGE_ID: &str = "identity";

#[derive(Debug, Error)]
pub enum MatrixError {
    #[error("manifest references unknown sample {0:?}")]
    UnknownSample(String),
    #[error("sample {0:?} has text variants but no identity image in the visual manifest")]
    MissingIdentity(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {reason}")]
    BadLog {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

struct Job {
    sample_id: String,
    image_variant_id: String,
    text_variant_id: String,
    image_path: String,
    question: String,
}

/// Query `client` on every visual variant with the original question and
/// every text variant with the original image. Per-record failures are
/// stored inline; identical (image bytes, question) pairs are asked once.
///
/// Output is sorted by (sample, image variant, text variant).
pub async fn run_matrix(
    corpus: &Corpus,
    visual: &[VisualManifestEntry],
    text: &[TextManifestEntry],
    client: &ChatClient,
    image_root: &Path,
) -> Result<Vec<AnswerRecord>, MatrixError> {
    let mut identity: HashMap<&str, &str> = HashMap::new();
    let mut jobs = Vec::with_capacity(visual.len() + text.len());
    for v in visual {
        let sample = corpus
            .get(&v.sample_id)
            .ok_or_else(|| MatrixError::UnknownSample(v.sample_id.clone()))?;
        if v.variant_id == IDENTITY_IMAGE_ID {
            identity.insert(&v.sample_id, &v.image_path);
        }
        jobs.push(Job {
            sample_id: v.sample_id.clone(),
            image_variant_id: v.variant_id.clone(),
            text_variant_id: ORIGINAL_QUESTION_ID.to_string(),
            image_path: v.image_path.clone(),
            question: sample.question.clone(),
        });
    }
    for t in text {
        if corpus.get(&t.sample_id).is_none() {
            return Err(MatrixError::UnknownSample(t.sample_id.clone()));
        }
        let path = identity
            .get(t.sample_id.as_str())
            .ok_or_else(|| MatrixError::MissingIdentity(t.sample_id.clone()))?;
        jobs.push(Job {
            sample_id: t.sample_id.clone(),
            image_variant_id: IDENTITY_IMAGE_ID.to_string(),
            text_variant_id: t.variant_id.clone(),
            image_path: path.to_string(),
            question: t.question.clone(),
        });
    }

    let mut content: HashMap<String, Result<String, String>> = HashMap::new();
    for job in &jobs {
        if !content.contains_key(&job.image_path) {
            let full = image_root.join(&job.image_path);
            let key = fs::read(&full)
                .map(|png| hex::encode(Sha256::digest(&png)))
                .map_err(|e| format!("{}: {e}", full.display()));
            content.insert(job.image_path.clone(), key);
        }
    }
    let job_key = |job: &Job| -> (String, String) {
        let image = match &content[&job.image_path] {
            Ok(digest) => digest.clone(),
            Err(_) => format!("path:{}", job.image_path),
        };
        (image, job.question.clone())
    };
    let mut unique: BTreeMap<(String, String), (usize, String)> = BTreeMap::new();
    for job in &jobs {
        let n = unique.len();
        unique.entry(job_key(job)).or_insert((n, job.image_path.clone()));
    }

    let mut tasks = JoinSet::new();
    for ((_, question), (idx, path)) in &unique {
        let client = client.clone();
        let full = image_root.join(path);
        let question = question.clone();
        let idx = *idx;
        tasks.spawn(async move {
            let result = match fs::read(&full) {
                Ok(png) => client.query_png(&png, &question).await,
                Err(e) => Err(ModelError::InvalidRequest(format!("{}: {e}", full.display()))),
            };
            (idx, result)
        });
    }
    let mut results: Vec<Option<Result<Reply, ModelError>>> = vec![None; unique.len()];
    while let Some(joined) = tasks.join_next().await {
        let (idx, result) = joined.expect("query task panicked");
        results[idx] = Some(result);
    }

    let endpoint = client.name().to_string();
    let mut records: Vec<AnswerRecord> = jobs
        .into_iter()
        .map(|job| {
            let idx = unique[&job_key(&job)].0;
            let result = results[idx].as_ref().expect("every unique job ran");
            to_record(job, result, &endpoint)
        })
        .collect();
    records.sort_by(|a, b| {
        (&a.sample_id, &a.image_variant_id, &a.text_variant_id).cmp(&(
            &b.sample_id,
            &b.image_variant_id,
            &b.text_variant_id,
        ))
    });
    Ok(records)
}

fn to_record(job: Job, result: &Result<Reply, ModelError>, endpoint: &str) -> AnswerRecord {
    let (raw_text, normalized, confidence, latency_ms, error) = match result {
        Ok(r) => (r.raw_text.clone(), r.normalized.clone(), r.confidence, r.latency_ms, None),
        Err(e) => (String::new(), String::new(), None, 0, Some(e.to_string())),
    };
    AnswerRecord {
        sample_id: job.sample_id,
        image_variant_id: job.image_variant_id,
        text_variant_id: job.text_variant_id,
        raw_text,
        normalized,
        confidence,
        latency_ms,
        endpoint: endpoint.to_string(),
        error,
    }
}

pub fn write_answer_log(path: &Path, records: &[AnswerRecord]) -> Result<(), MatrixError> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    let io = |source| MatrixError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io)?;
    }
    write_atomic(path, out.as_bytes()).map_err(io)
}

pub fn read_answer_log(path: &Path) -> Result<Vec<AnswerRecord>, MatrixError> {
    let text = fs::read_to_string(path).map_err(|source| MatrixError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| MatrixError::BadLog {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}
