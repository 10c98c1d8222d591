use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tokio::task::JoinSet;

use super::{
    file_stem, io_err, write_if_changed, write_json, write_jsonl, ArtifactMeta, PipelineError, RunConfig,
    StageSummary, Workspace,
};
use crate::corpus::{cap_image_size, encode_png, tag_rotation_sensitivity, Sample};
use crate::modelio::{ChatClient, DiskCache};
use crate::tperturb::{language_by_code, rephrase, translate, TextManifestEntry, TextVariantSet};
use crate::vperturb::{generate_variants, SuiteConfig, VisualManifestEntry};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct PerturbMeta {
    pub meta: ArtifactMeta,
    pub samples: usize,
    pub visual_variants: usize,
    pub text_variants: usize,
    /// Samples whose rephrasing failed, with the reason.
    pub phrasing_failures: BTreeMap<String, String>,
    /// Languages that could not be produced, per sample.
    pub missing_languages: BTreeMap<String, Vec<String>>,
}

pub(crate) fn variant_file(variant_id: &str) -> String {
    format!("{}.png", variant_id.replace(':', "_"))
}

struct Rendered {
    entries: Vec<VisualManifestEntry>,
    written: usize,
}

fn render_sample(
    sample: &Sample,
    suite: &SuiteConfig,
    max_side: u32,
    root: &Path,
) -> Result<Rendered, PipelineError> {
    let image = sample
        .image
        .decode()
        .map_err(|e| PipelineError::Validation(format!("sample {:?}: {e}", sample.id)))?;
    let image = cap_image_size(&image, max_side);
    let set = generate_variants(&sample.id, &image, suite)
        .map_err(|e| PipelineError::Validation(format!("sample {:?}: {e}", sample.id)))?;
    let dir = format!("images/{}", file_stem(&sample.id));
    let mut entries = Vec::with_capacity(set.variants.len());
    let mut written = 0;
    for v in &set.variants {
        let id = v.spec.id();
        let rel = format!("{dir}/{}", variant_file(&id));
        if write_if_changed(&root.join(&rel), &encode_png(&v.image))? {
            written += 1;
        }
        entries.push(VisualManifestEntry {
            sample_id: sample.id.clone(),
            variant_id: id,
            family: v.spec.family(),
            param: v.spec.param(),
            image_path: rel,
        });
    }
    Ok(Rendered { entries, written })
}

fn render_all(cfg: &RunConfig, samples: &[Sample], root: &Path) -> Result<Rendered, PipelineError> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(samples.len().max(1));
    let chunk = samples.len().div_ceil(threads).max(1);
    let results: Vec<Result<Vec<Rendered>, PipelineError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = samples
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|s| render_sample(s, &cfg.suite, cfg.max_side, root))
                        .collect::<Result<Vec<_>, _>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("render thread panicked"))
            .collect()
    });
    let mut out = Rendered {
        entries: Vec::new(),
        written: 0,
    };
    for r in results {
        for part in r? {
            out.entries.extend(part.entries);
            out.written += part.written;
        }
    }
    Ok(out)
}

struct TextOutcome {
    sets: Vec<TextVariantSet>,
    phrasing_failures: BTreeMap<String, String>,
    missing_languages: BTreeMap<String, Vec<String>>,
}

async fn generate_text(cfg: &RunConfig, samples: &[Sample], client: &ChatClient, cache: &DiskCache) -> TextOutcome {
    let languages: Vec<_> = cfg
        .text
        .languages
        .iter()
        .filter_map(|c| language_by_code(c))
        .collect();
    let mut tasks = JoinSet::new();
    for (i, s) in samples.iter().enumerate() {
        let client = client.clone();
        let cache = cache.clone();
        let languages = languages.clone();
        let (id, question) = (s.id.clone(), s.question.clone());
        let want_phrasing = cfg.text.rephrase;
        tasks.spawn(async move {
            let phrasing = if want_phrasing {
                Some(rephrase(&id, &question, &client, Some(&cache)).await)
            } else {
                None
            };
            let language = if languages.is_empty() {
                None
            } else {
                Some(translate(&id, &question, &languages, &client, Some(&cache)).await)
            };
            (i, id, phrasing, language)
        });
    }
    let mut results = Vec::with_capacity(samples.len());
    while let Some(joined) = tasks.join_next().await {
        results.push(joined.expect("text task panicked"));
    }
    results.sort_by_key(|r| r.0);

    let mut out = TextOutcome {
        sets: Vec::new(),
        phrasing_failures: BTreeMap::new(),
        missing_languages: BTreeMap::new(),
    };
    for (_, id, phrasing, language) in results {
        match phrasing {
            Some(Ok(set)) => out.sets.push(set),
            Some(Err(e)) => {
                tracing::warn!(sample = %id, error = %e, "rephrasing failed");
                out.phrasing_failures.insert(id.clone(), e.to_string());
            }
            None => {}
        }
        if let Some(set) = language {
            if !set.missing.is_empty() {
                out.missing_languages.insert(id.clone(), set.missing.clone());
            }
            out.sets.push(set);
        }
    }
    out
}

/// Write every variant image and the visual/text manifests. Images whose
/// bytes are already on disk are left untouched.
pub async fn cmd_perturb(cfg: &RunConfig) -> Result<StageSummary, PipelineError> {
    let ws = Workspace::load(cfg)?;
    let root = cfg.stage_dir("perturb");
    std::fs::create_dir_all(&root).map_err(io_err(&root))?;
    let samples = &ws.merged.samples;

    let rendered = render_all(cfg, samples, &root)?;
    let mut written = rendered.written;

    let mut text_entries: Vec<TextManifestEntry> = Vec::new();
    let mut outcome = TextOutcome {
        sets: Vec::new(),
        phrasing_failures: BTreeMap::new(),
        missing_languages: BTreeMap::new(),
    };
    let mut flags: Option<BTreeMap<String, bool>> = None;
    if let Some(gen_cfg) = &cfg.generator {
        let cache_dir = cfg.out_dir.join("cache").join("text");
        let cache = DiskCache::new(&cache_dir).map_err(io_err(&cache_dir))?;
        let client = ChatClient::new(gen_cfg.clone(), None)
            .map_err(|e| PipelineError::Validation(e.to_string()))?;
        if cfg.text.rephrase || !cfg.text.languages.is_empty() {
            outcome = generate_text(cfg, samples, &client, &cache).await;
            text_entries = outcome.sets.iter().flat_map(|s| s.manifest_entries()).collect();
        }
        if cfg.text.tag_rotation {
            let tagged = tag_rotation_sensitivity(&ws.merged, &client)
                .await
                .map_err(|e| PipelineError::Upstream(e.to_string()))?;
            flags = Some(
                tagged
                    .samples
                    .iter()
                    .filter_map(|s| s.rotation_sensitive.map(|f| (s.id.clone(), f)))
                    .collect(),
            );
        }
    }
    let flags = flags.unwrap_or_else(|| {
        samples
            .iter()
            .filter_map(|s| s.rotation_sensitive.map(|f| (s.id.clone(), f)))
            .collect()
    });

    written += usize::from(write_jsonl(&root.join("visual_manifest.jsonl"), &rendered.entries)?);
    written += usize::from(write_jsonl(&root.join("text_manifest.jsonl"), &text_entries)?);
    written += usize::from(write_json(&root.join("rotation_flags.json"), &flags)?);
    let meta = PerturbMeta {
        meta: cfg.meta(),
        samples: samples.len(),
        visual_variants: rendered.entries.len(),
        text_variants: text_entries.len(),
        phrasing_failures: outcome.phrasing_failures.clone(),
        missing_languages: outcome.missing_languages.clone(),
    };
    written += usize::from(write_json(&root.join("meta.json"), &meta)?);

    let wanted_phrasing = cfg.generator.is_some() && cfg.text.rephrase && !samples.is_empty();
    if wanted_phrasing && outcome.phrasing_failures.len() == samples.len() {
        return Err(PipelineError::Upstream(
            "rephrasing failed for every sample; see perturb/meta.json".into(),
        ));
    }
    Ok(StageSummary {
        stage: "perturb".into(),
        files_written: written,
        details: serde_json::json!({
            "samples": samples.len(),
            "visual_variants": rendered.entries.len(),
            "images_written": rendered.written,
            "text_variants": text_entries.len(),
            "phrasing_failures": outcome.phrasing_failures.len(),
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_files_are_distinct() {
        let ids = SuiteConfig {
            rotation_sweep: true,
            ..Default::default()
        }
        .specs()
        .unwrap()
        .iter()
        .map(|s| variant_file(&s.id()))
        .collect::<std::collections::BTreeSet<_>>();
        assert_eq!(ids.len(), 39);
        assert!(ids.contains("shift_-4.png"));
    }
}
