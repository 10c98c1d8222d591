use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::run::answer_log_path;
use super::{read_json, read_jsonl, write_if_changed, write_json, ArtifactMeta, PipelineError, RunConfig, StageSummary, Workspace};
use crate::modelio::AnswerRecord;
use crate::stability::{
    build_profiles, common_samples, conditioned_accuracy_table, csv_field, entropy_histogram, instability_table,
    overlay_bias_table, rotation_sweep_curve, ConditionedRow, Grouping, InstabilityReport, Kind, OverlayBiasRow,
    StabilityProfile, SweepPoint,
};
use crate::stats::{
    conditional_mutual_information, divergence_curves, matthews_matrix, pearson_matrix, read_dump, select_triplets,
    DivergenceCurve, LabeledMatrix, MIReport, Triplet, TripletSpec,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceSummary {
    pub triplets: usize,
    /// Triplets whose traces were absent from the dump.
    pub skipped: usize,
    pub visual: Option<DivergenceCurve>,
    pub text: Option<DivergenceCurve>,
    pub normalization: String,
    pub selection: String,
}

/// Everything the analyze stage computed; the report stage renders this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub meta: ArtifactMeta,
    pub target: String,
    pub endpoints: Vec<String>,
    pub visual_instability: InstabilityReport,
    pub text_instability: InstabilityReport,
    pub dataset_instability: InstabilityReport,
    pub category_instability: InstabilityReport,
    pub overlay_bias: Vec<OverlayBiasRow>,
    pub matthews: Option<LabeledMatrix>,
    pub conditioned: BTreeMap<String, Vec<ConditionedRow>>,
    pub pearson: Option<LabeledMatrix>,
    pub mutual_information: Option<MIReport>,
    pub histogram_width: f64,
    pub entropy_visual: BTreeMap<String, Vec<(f64, usize)>>,
    pub entropy_text: BTreeMap<String, Vec<(f64, usize)>>,
    pub rotation_sweep: Vec<SweepPoint>,
    pub divergence: Option<DivergenceSummary>,
    pub notes: Vec<String>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

fn csv(meta: &ArtifactMeta, header: &str, body: String) -> String {
    format!("{}{header}\n{body}", meta.csv_comment())
}

fn load_profiles(cfg: &RunConfig, ws: &Workspace) -> Result<BTreeMap<String, Vec<StabilityProfile>>, PipelineError> {
    let mut out = BTreeMap::new();
    for endpoint in cfg.endpoints() {
        let records: Vec<AnswerRecord> = read_jsonl(&answer_log_path(cfg, &endpoint.name), "run")?;
        let mut profiles = Vec::new();
        for corpus in &ws.corpora {
            let mine: Vec<AnswerRecord> = records
                .iter()
                .filter(|r| corpus.get(&r.sample_id).is_some())
                .cloned()
                .collect();
            profiles.extend(
                build_profiles(corpus, &mine).map_err(|e| PipelineError::Validation(e.to_string()))?,
            );
        }
        profiles.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        out.insert(endpoint.name.clone(), profiles);
    }
    Ok(out)
}

fn divergence(cfg: &RunConfig, target: &[StabilityProfile], notes: &mut Vec<String>) -> Result<Option<DivergenceSummary>, PipelineError> {
    let Some(path) = &cfg.analysis.activation_dump else {
        notes.push("no activation dump configured; layer-wise divergence skipped".into());
        return Ok(None);
    };
    let dump = read_dump(path).map_err(|e| PipelineError::Validation(e.to_string()))?;
    let specs = select_triplets(target);
    let mut visual: Vec<Triplet<'_>> = Vec::new();
    let mut text: Vec<Triplet<'_>> = Vec::new();
    let mut skipped = 0;
    for s in &specs {
        let found = (
            dump.get(&s.sample_id, &s.original),
            dump.get(&s.sample_id, &s.stable),
            dump.get(&s.sample_id, &s.flipped),
        );
        let (Some(original), Some(stable), Some(flipped)) = found else {
            skipped += 1;
            continue;
        };
        let t = Triplet { original, stable, flipped };
        if s.kind.is_visual() {
            visual.push(t);
        } else {
            text.push(t);
        }
    }
    let curve = |ts: &[Triplet<'_>]| -> Result<Option<DivergenceCurve>, PipelineError> {
        if ts.is_empty() {
            return Ok(None);
        }
        divergence_curves(ts)
            .map(Some)
            .map_err(|e| PipelineError::Validation(format!("activation dump: {e}")))
    };
    Ok(Some(DivergenceSummary {
        triplets: visual.len() + text.len(),
        skipped,
        visual: curve(&visual)?,
        text: curve(&text)?,
        normalization: "each layer divided by its mean distance over all triplets and both conditions".into(),
        selection: "per sample and perturbation kind, the first answer-preserving and first answer-changing variant by id".into(),
    }))
}

fn triplets_csv(meta: &ArtifactMeta, specs: &[TripletSpec]) -> String {
    let body: String = specs
        .iter()
        .map(|t| format!("{},{},{},{},{}\n", csv_field(&t.sample_id), t.kind, t.original, t.stable, t.flipped))
        .collect();
    csv(meta, "sample_id,kind,original,stable,flipped", body)
}

fn report_csv(meta: &ArtifactMeta, r: &InstabilityReport) -> String {
    format!("{}{}", meta.csv_comment(), r.to_csv())
}

fn hist_csv(meta: &ArtifactMeta, h: &BTreeMap<String, Vec<(f64, usize)>>) -> String {
    let mut body = String::new();
    for (endpoint, bins) in h {
        for (start, count) in bins {
            body.push_str(&format!("{},{start:.2},{count}\n", csv_field(endpoint)));
        }
    }
    csv(meta, "endpoint,bin_start,count", body)
}

/// Compute every stability and statistics report from the answer logs.
pub fn cmd_analyze(cfg: &RunConfig) -> Result<StageSummary, PipelineError> {
    let mut ws = Workspace::load(cfg)?;
    let flags: BTreeMap<String, bool> = read_json(&cfg.stage_dir("perturb").join("rotation_flags.json"), "perturb")?;
    ws.apply_rotation_flags(&flags);
    let profiles = load_profiles(cfg, &ws)?;
    let meta = cfg.meta();
    let target = cfg.target.name.clone();
    let target_profiles = profiles.get(&target).cloned().unwrap_or_default();
    let all: Vec<StabilityProfile> = profiles.values().flatten().cloned().collect();
    let mut notes = Vec::new();
    if target_profiles.is_empty() {
        return Err(PipelineError::Validation(format!("no usable records for target endpoint {target:?}")));
    }

    let all_kinds: Vec<Kind> = Kind::VISUAL.iter().chain(Kind::TEXT.iter()).copied().collect();
    let visual_instability = instability_table(&all, Grouping::Endpoint, &Kind::VISUAL);
    let text_instability = instability_table(&all, Grouping::Endpoint, &Kind::TEXT);
    let dataset_instability = instability_table(&target_profiles, Grouping::Dataset, &all_kinds);
    let category_instability = instability_table(&target_profiles, Grouping::Category, &all_kinds);
    let overlay_bias = overlay_bias_table(&target_profiles);

    let common = common_samples(&all);
    let matthews = if profiles.len() >= 2 {
        let models: Vec<(String, BTreeMap<String, bool>)> = profiles
            .iter()
            .map(|(name, ps)| {
                let flags = ps
                    .iter()
                    .filter(|p| common.contains(&p.sample_id))
                    .map(|p| (p.sample_id.clone(), p.stable_visual))
                    .collect();
                (name.clone(), flags)
            })
            .collect();
        Some(matthews_matrix(&models).map_err(|e| PipelineError::Validation(e.to_string()))?)
    } else {
        notes.push("a single endpoint; no Matthews matrix".into());
        None
    };

    let conditioned: BTreeMap<String, Vec<ConditionedRow>> = profiles
        .iter()
        .map(|(name, ps)| (name.clone(), conditioned_accuracy_table(ps)))
        .collect();

    let columns = vec![
        ("H_P".to_string(), target_profiles.iter().map(|p| Some(p.h_phrasing)).collect()),
        ("H_V".to_string(), target_profiles.iter().map(|p| Some(p.h_visual)).collect()),
        ("confidence".to_string(), target_profiles.iter().map(|p| p.confidence).collect()),
    ];
    let pearson = Some(pearson_matrix(&columns).map_err(|e| PipelineError::Validation(e.to_string()))?);

    let with_conf: Vec<&StabilityProfile> = target_profiles.iter().filter(|p| p.confidence.is_some()).collect();
    let has_language = with_conf.iter().any(|p| p.family(Kind::Language).is_some());
    if !has_language {
        notes.push("no language variants; mutual information uses phrasing entropy".into());
    }
    let mutual_information = if with_conf.len() >= cfg.analysis.bins {
        let x: Vec<f64> = with_conf.iter().map(|p| p.h_visual).collect();
        let y: Vec<f64> = with_conf
            .iter()
            .map(|p| if has_language { p.h_language } else { p.h_phrasing })
            .collect();
        let c: Vec<f64> = with_conf.iter().map(|p| p.confidence.expect("filtered")).collect();
        Some(
            conditional_mutual_information(&x, &y, &c, cfg.analysis.bins, cfg.analysis.binning)
                .map_err(|e| PipelineError::Validation(e.to_string()))?,
        )
    } else {
        notes.push(format!(
            "only {} target samples carry a confidence; mutual information needs {}",
            with_conf.len(),
            cfg.analysis.bins
        ));
        None
    };

    let width = cfg.analysis.histogram_width;
    let entropy_visual = profiles
        .iter()
        .map(|(n, ps)| (n.clone(), entropy_histogram(&ps.iter().map(|p| p.h_visual).collect::<Vec<_>>(), width)))
        .collect();
    let entropy_text = profiles
        .iter()
        .map(|(n, ps)| (n.clone(), entropy_histogram(&ps.iter().map(|p| p.h_phrasing).collect::<Vec<_>>(), width)))
        .collect();
    let rotation_sweep = rotation_sweep_curve(&target_profiles);
    if rotation_sweep.is_empty() {
        notes.push("no rotation sweep answers; enable suite.rotation_sweep".into());
    }
    let divergence = divergence(cfg, &target_profiles, &mut notes)?;
    let triplet_specs = select_triplets(&target_profiles);

    let summary = AnalysisSummary {
        meta: meta.clone(),
        target: target.clone(),
        endpoints: profiles.keys().cloned().collect(),
        visual_instability,
        text_instability,
        dataset_instability,
        category_instability,
        overlay_bias,
        matthews,
        conditioned,
        pearson,
        mutual_information,
        histogram_width: width,
        entropy_visual,
        entropy_text,
        rotation_sweep,
        divergence,
        notes,
    };

    let dir = cfg.stage_dir("analyze");
    let mut files: Vec<(String, String)> = vec![
        ("table1_visual_instability.csv".into(), report_csv(&meta, &summary.visual_instability)),
        ("table2_text_instability.csv".into(), report_csv(&meta, &summary.text_instability)),
        ("table3_dataset_instability.csv".into(), report_csv(&meta, &summary.dataset_instability)),
        ("table8_category_instability.csv".into(), report_csv(&meta, &summary.category_instability)),
    ];
    files.push((
        "table4_overlay_bias.csv".into(),
        csv(
            &meta,
            "gold,phrase,samples,original_accuracy,overlay_accuracy",
            summary
                .overlay_bias
                .iter()
                .map(|r| {
                    format!(
                        "{},{},{},{:.6},{:.6}\n",
                        csv_field(&r.gold),
                        csv_field(&r.phrase),
                        r.samples,
                        r.original_accuracy,
                        r.overlay_accuracy
                    )
                })
                .collect(),
        ),
    ));
    if let Some(m) = &summary.matthews {
        files.push(("table5_matthews.csv".into(), format!("{}{}", meta.csv_comment(), m.to_csv())));
    }
    files.push((
        "table6_conditioned_accuracy.csv".into(),
        csv(
            &meta,
            "endpoint,condition,accuracy,prevalence",
            summary
                .conditioned
                .iter()
                .flat_map(|(e, rows)| {
                    rows.iter()
                        .map(move |r| format!("{},{},{},{:.6}\n", csv_field(e), r.condition, opt(r.accuracy), r.prevalence))
                })
                .collect(),
        ),
    ));
    if let Some(p) = &summary.pearson {
        files.push(("table7_pearson.csv".into(), format!("{}{}", meta.csv_comment(), p.to_csv())));
    }
    files.push(("fig2_entropy_visual.csv".into(), hist_csv(&meta, &summary.entropy_visual)));
    files.push(("fig3_entropy_text.csv".into(), hist_csv(&meta, &summary.entropy_text)));
    if let Some(d) = &summary.divergence {
        let mut body = String::new();
        for (name, curve) in [("visual", &d.visual), ("text", &d.text)] {
            if let Some(c) = curve {
                for line in c.to_csv().lines().skip(1) {
                    body.push_str(&format!("{name},{line}\n"));
                }
            }
        }
        files.push((
            "fig5_divergence.csv".into(),
            csv(&meta, "curve,layer,mean_stable,mean_flipped,mean_difference,normalizer,normalized", body),
        ));
    }
    files.push(("triplets.csv".into(), triplets_csv(&meta, &triplet_specs)));
    files.push((
        "fig6_rotation_sweep.csv".into(),
        csv(
            &meta,
            "angle,group,samples,fraction_changed",
            summary
                .rotation_sweep
                .iter()
                .map(|p| format!("{},{},{},{:.6}\n", p.angle, p.group, p.samples, p.fraction_changed))
                .collect(),
        ),
    ));

    let mut written = 0;
    for (name, content) in &files {
        written += usize::from(write_if_changed(&dir.join(name), content.as_bytes())?);
    }
    written += usize::from(write_json(&dir.join("profiles.json"), &serde_json::json!({
        "meta": meta,
        "profiles": profiles,
    }))?);
    if let Some(mi) = &summary.mutual_information {
        written += usize::from(write_json(&dir.join("mi_report.json"), &serde_json::json!({
            "meta": meta,
            "x": "visual entropy",
            "y": if has_language { "language entropy" } else { "phrasing entropy" },
            "conditioning": "target confidence",
            "report": mi,
        }))?);
    }
    written += usize::from(write_json(&dir.join("summary.json"), &summary)?);
    Ok(StageSummary {
        stage: "analyze".into(),
        files_written: written,
        details: serde_json::json!({
            "endpoints": summary.endpoints,
            "target_samples": target_profiles.len(),
            "notes": summary.notes,
        }),
    })
}

/// Profiles written by the analyze stage, keyed by endpoint.
pub(crate) fn read_profiles(cfg: &RunConfig) -> Result<BTreeMap<String, Vec<StabilityProfile>>, PipelineError> {
    #[derive(Deserialize)]
    struct File {
        profiles: BTreeMap<String, Vec<StabilityProfile>>,
    }
    let f: File = read_json(&cfg.stage_dir("analyze").join("profiles.json"), "analyze")?;
    Ok(f.profiles)
}
