//! Answer distributions, entropies, stability flags and the benchmark-level
//! instability tables built from an answer log.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Sample};
use crate::modelio::{normalize_answer, AnswerRecord, ORIGINAL_QUESTION_ID};
use crate::vperturb::{Family, PerturbationSpec, OVERLAY_PHRASES, SWEEP_ANGLES};

#[derive(Debug, Error, PartialEq)]
pub enum StabilityError {
    #[error("no answers to aggregate")]
    Empty,
    #[error("sample {0:?} has no usable identity record")]
    MissingIdentity(String),
    #[error("answer log references unknown sample {0:?}")]
    UnknownSample(String),
}

/// Shannon entropy in bits of a count vector. Zero counts are skipped.
pub fn entropy_bits(counts: impl IntoIterator<Item = usize>) -> f64 {
    let counts: Vec<usize> = counts.into_iter().filter(|&c| c > 0).collect();
    let total: usize = counts.iter().sum();
    if total == 0 || counts.len() == 1 {
        return 0.0;
    }
    let t = total as f64;
    counts
        .iter()
        .map(|&c| {
            let p = c as f64 / t;
            -p * p.log2()
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerDistribution {
    pub answers: BTreeMap<String, usize>,
    pub total: usize,
}

impl AnswerDistribution {
    pub fn from_answers<'a>(answers: impl IntoIterator<Item = &'a str>) -> Result<Self, StabilityError> {
        let mut counts = BTreeMap::new();
        let mut total = 0;
        for a in answers {
            *counts.entry(a.to_string()).or_insert(0) += 1;
            total += 1;
        }
        if total == 0 {
            return Err(StabilityError::Empty);
        }
        Ok(AnswerDistribution { answers: counts, total })
    }

    pub fn probabilities(&self) -> BTreeMap<&str, f64> {
        self.answers
            .iter()
            .map(|(a, &c)| (a.as_str(), c as f64 / self.total as f64))
            .collect()
    }

    pub fn entropy(&self) -> f64 {
        entropy_bits(self.answers.values().copied())
    }

    pub fn distinct(&self) -> usize {
        self.answers.len()
    }
}

/// Distribution of normalized answers over the non-error records.
pub fn answer_distribution(records: &[AnswerRecord]) -> Result<AnswerDistribution, StabilityError> {
    AnswerDistribution::from_answers(
        records
            .iter()
            .filter(|r| !r.is_error())
            .map(|r| r.normalized.as_str()),
    )
}

/// Perturbation kinds reported in instability tables. Declaration order is
/// the row order of the visual table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    PadCrop,
    Rotation,
    Scale,
    ScalePad,
    TextOverlay,
    Shift,
    Phrasing,
    Language,
}

impl Kind {
    pub const VISUAL: [Kind; 6] = [
        Kind::PadCrop,
        Kind::Rotation,
        Kind::Scale,
        Kind::ScalePad,
        Kind::TextOverlay,
        Kind::Shift,
    ];
    pub const TEXT: [Kind; 2] = [Kind::Phrasing, Kind::Language];

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::PadCrop => "pad_crop",
            Kind::Rotation => "rotation",
            Kind::Scale => "scale",
            Kind::ScalePad => "scale_pad",
            Kind::TextOverlay => "text_overlay",
            Kind::Shift => "shift",
            Kind::Phrasing => "phrasing",
            Kind::Language => "language",
        }
    }

    /// Row label in reports. A cyclic shift is reported as "Translation".
    pub fn label(self) -> &'static str {
        match self {
            Kind::PadCrop => "Pad/Crop",
            Kind::Rotation => "Rotation",
            Kind::Scale => "Scale",
            Kind::ScalePad => "Scale+Pad",
            Kind::TextOverlay => "Text Overlay",
            Kind::Shift => "Translation",
            Kind::Phrasing => "Phrasing",
            Kind::Language => "Language",
        }
    }

    pub fn is_visual(self) -> bool {
        !matches!(self, Kind::Phrasing | Kind::Language)
    }

    fn from_family(f: Family) -> Option<Kind> {
        Some(match f {
            Family::Identity => return None,
            Family::Shift => Kind::Shift,
            Family::PadCrop => Kind::PadCrop,
            Family::Scale => Kind::Scale,
            Family::ScalePad => Kind::ScalePad,
            Family::TextOverlay => Kind::TextOverlay,
            Family::Rotation => Kind::Rotation,
        })
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Kind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Kind::VISUAL
            .iter()
            .chain(Kind::TEXT.iter())
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown perturbation kind {s:?}"))
    }
}

/// Role of one record in a sample's answer set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordRole {
    Identity,
    /// Same question and image as identity under another id, e.g. `phrasing:0`.
    Original,
    Perturbed(Kind),
    Sweep(i32),
    Unknown,
}

pub fn classify_record(image_variant_id: &str, text_variant_id: &str) -> RecordRole {
    let image_is_identity = image_variant_id == "identity";
    if text_variant_id == ORIGINAL_QUESTION_ID {
        if image_is_identity {
            return RecordRole::Identity;
        }
        return match image_variant_id.parse::<PerturbationSpec>() {
            Ok(PerturbationSpec::SweepRotation(a)) => RecordRole::Sweep(a),
            Ok(spec) => Kind::from_family(spec.family())
                .map(RecordRole::Perturbed)
                .unwrap_or(RecordRole::Unknown),
            Err(_) => RecordRole::Unknown,
        };
    }
    if !image_is_identity {
        return RecordRole::Unknown;
    }
    match text_variant_id.split_once(':') {
        Some((_, "0")) => RecordRole::Original,
        Some(("phrasing", _)) => RecordRole::Perturbed(Kind::Phrasing),
        Some(("language", _)) => RecordRole::Perturbed(Kind::Language),
        _ => RecordRole::Unknown,
    }
}

/// Per-kind change counts for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyStats {
    /// Perturbed instances with a usable answer.
    pub total: usize,
    /// Of those, answers differing from the identity answer.
    pub changed: usize,
    /// Entropy of the identity answer plus this kind's answers.
    pub entropy: f64,
}

impl FamilyStats {
    pub fn stable(&self) -> bool {
        self.changed == 0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coverage {
    pub records: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityProfile {
    pub sample_id: String,
    pub endpoint: String,
    pub dataset: String,
    pub categories: Vec<String>,
    pub gold: String,
    pub identity_answer: String,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    pub families: BTreeMap<Kind, FamilyStats>,
    pub h_visual: f64,
    pub h_phrasing: f64,
    pub h_language: f64,
    pub stable_visual: bool,
    pub stable_phrasing: bool,
    pub stable_language: bool,
    pub stable_text: bool,
    /// Normalized answers keyed by image variant id (with the original
    /// question) or text variant id (with the original image).
    pub answers: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation_sensitive: Option<bool>,
    pub coverage: Coverage,
}

impl StabilityProfile {
    pub fn family(&self, kind: Kind) -> Option<&FamilyStats> {
        self.families.get(&kind)
    }

    /// Stable under every perturbation kind present.
    pub fn stable_all(&self) -> bool {
        self.families.values().all(FamilyStats::stable)
    }
}

/// Aggregate one sample's records (all from the same endpoint).
pub fn stability_profile(
    sample: &Sample,
    dataset: &str,
    records: &[&AnswerRecord],
) -> Result<StabilityProfile, StabilityError> {
    let mut coverage = Coverage::default();
    let mut identity: Option<&AnswerRecord> = None;
    let mut by_kind: BTreeMap<Kind, Vec<&str>> = BTreeMap::new();
    let mut answers = BTreeMap::new();
    for r in records {
        coverage.records += 1;
        if r.is_error() {
            coverage.errors += 1;
            continue;
        }
        match classify_record(&r.image_variant_id, &r.text_variant_id) {
            RecordRole::Identity => {
                identity = Some(r);
                answers.insert(r.image_variant_id.clone(), r.normalized.clone());
            }
            RecordRole::Perturbed(kind) => {
                by_kind.entry(kind).or_default().push(&r.normalized);
                let key = if kind.is_visual() { &r.image_variant_id } else { &r.text_variant_id };
                answers.insert(key.clone(), r.normalized.clone());
            }
            RecordRole::Sweep(_) => {
                answers.insert(r.image_variant_id.clone(), r.normalized.clone());
            }
            RecordRole::Original => {
                answers.insert(r.text_variant_id.clone(), r.normalized.clone());
            }
            RecordRole::Unknown => {
                tracing::warn!(sample = %sample.id, image = %r.image_variant_id, text = %r.text_variant_id, "unrecognised record ignored");
            }
        }
    }
    let identity = identity.ok_or_else(|| StabilityError::MissingIdentity(sample.id.clone()))?;
    let id_answer = identity.normalized.as_str();

    let group_entropy = |kinds: &[Kind]| {
        let all = std::iter::once(id_answer).chain(
            kinds
                .iter()
                .filter_map(|k| by_kind.get(k))
                .flat_map(|v| v.iter().copied()),
        );
        AnswerDistribution::from_answers(all)
            .expect("identity answer present")
            .entropy()
    };
    let families: BTreeMap<Kind, FamilyStats> = by_kind
        .iter()
        .map(|(&k, list)| {
            let changed = list.iter().filter(|a| **a != id_answer).count();
            (
                k,
                FamilyStats {
                    total: list.len(),
                    changed,
                    entropy: group_entropy(&[k]),
                },
            )
        })
        .collect();
    let stable = |kinds: &[Kind]| {
        kinds
            .iter()
            .filter_map(|k| families.get(k))
            .all(FamilyStats::stable)
    };
    let stable_phrasing = stable(&[Kind::Phrasing]);
    let stable_language = stable(&[Kind::Language]);
    Ok(StabilityProfile {
        sample_id: sample.id.clone(),
        endpoint: identity.endpoint.clone(),
        dataset: dataset.to_string(),
        categories: sample.categories.iter().cloned().collect(),
        gold: normalize_answer(&sample.answer),
        identity_answer: id_answer.to_string(),
        correct: normalize_answer(&sample.answer) == id_answer,
        confidence: identity.confidence,
        h_visual: group_entropy(&Kind::VISUAL),
        h_phrasing: group_entropy(&[Kind::Phrasing]),
        h_language: group_entropy(&[Kind::Language]),
        stable_visual: stable(&Kind::VISUAL),
        stable_phrasing,
        stable_language,
        stable_text: stable_phrasing && stable_language,
        families,
        answers,
        rotation_sensitive: sample.rotation_sensitive,
        coverage,
    })
}

/// Profiles for every (endpoint, sample) in the log, sorted by endpoint then
/// sample id. Samples without a usable identity record are skipped with a
/// warning.
pub fn build_profiles(
    corpus: &Corpus,
    records: &[AnswerRecord],
) -> Result<Vec<StabilityProfile>, StabilityError> {
    let mut grouped: BTreeMap<(&str, &str), Vec<&AnswerRecord>> = BTreeMap::new();
    for r in records {
        grouped
            .entry((r.endpoint.as_str(), r.sample_id.as_str()))
            .or_default()
            .push(r);
    }
    let mut out = Vec::with_capacity(grouped.len());
    for ((endpoint, sample_id), recs) in grouped {
        let sample = corpus
            .get(sample_id)
            .ok_or_else(|| StabilityError::UnknownSample(sample_id.to_string()))?;
        match stability_profile(sample, &corpus.name, &recs) {
            Ok(p) => out.push(p),
            Err(e) => tracing::warn!(endpoint, sample_id, error = %e, "sample skipped"),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grouping {
    Family,
    Dataset,
    Category,
    Endpoint,
}

impl Grouping {
    pub fn as_str(self) -> &'static str {
        match self {
            Grouping::Family => "family",
            Grouping::Dataset => "dataset",
            Grouping::Category => "category",
            Grouping::Endpoint => "endpoint",
        }
    }
}

/// One row of an instability table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstabilityRow {
    pub group: String,
    /// Kind label, or "Any" for the union row.
    pub kind: String,
    pub samples: usize,
    pub changed_samples: usize,
    pub instances: usize,
    pub changed_instances: usize,
    /// Fraction of samples with at least one changed answer.
    pub instability: f64,
    /// Fraction of perturbed instances with a changed answer.
    pub avg_instability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstabilityReport {
    pub grouping: Grouping,
    pub rows: Vec<InstabilityRow>,
}

impl InstabilityReport {
    pub fn row(&self, group: &str, kind: &str) -> Option<&InstabilityRow> {
        self.rows.iter().find(|r| r.group == group && r.kind == kind)
    }

    pub const CSV_HEADER: &'static str =
        "group,kind,samples,changed_samples,instances,changed_instances,instability,avg_instability";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{:.6},{:.6}\n",
                csv_field(&r.group),
                csv_field(&r.kind),
                r.samples,
                r.changed_samples,
                r.instances,
                r.changed_instances,
                r.instability,
                r.avg_instability
            ));
        }
        out
    }
}

/// Quote a CSV field if it needs it.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn rows_for(group: &str, members: &[&StabilityProfile], kinds: &[Kind]) -> Vec<InstabilityRow> {
    let mut rows = Vec::new();
    let mut any_changed = 0;
    let mut any_samples = 0;
    let mut any_instances = 0;
    let mut any_changed_instances = 0;
    for &kind in kinds {
        let with: Vec<&FamilyStats> = members.iter().filter_map(|p| p.family(kind)).collect();
        if with.is_empty() {
            continue;
        }
        let changed_samples = with.iter().filter(|f| !f.stable()).count();
        let instances: usize = with.iter().map(|f| f.total).sum();
        let changed_instances: usize = with.iter().map(|f| f.changed).sum();
        any_instances += instances;
        any_changed_instances += changed_instances;
        rows.push(InstabilityRow {
            group: group.to_string(),
            kind: kind.label().to_string(),
            samples: with.len(),
            changed_samples,
            instances,
            changed_instances,
            instability: ratio(changed_samples, with.len()),
            avg_instability: ratio(changed_instances, instances),
        });
    }
    if rows.is_empty() {
        return rows;
    }
    for p in members {
        let present: Vec<&FamilyStats> = kinds.iter().filter_map(|k| p.family(*k)).collect();
        if present.is_empty() {
            continue;
        }
        any_samples += 1;
        if present.iter().any(|f| !f.stable()) {
            any_changed += 1;
        }
    }
    rows.push(InstabilityRow {
        group: group.to_string(),
        kind: "Any".to_string(),
        samples: any_samples,
        changed_samples: any_changed,
        instances: any_instances,
        changed_instances: any_changed_instances,
        instability: ratio(any_changed, any_samples),
        avg_instability: ratio(any_changed_instances, any_instances),
    });
    rows
}

/// Instability per kind within each group, plus the union "Any" row
/// computed at the sample level. A sample in several categories counts in
/// each of them.
pub fn instability_table(
    profiles: &[StabilityProfile],
    grouping: Grouping,
    kinds: &[Kind],
) -> InstabilityReport {
    let mut groups: BTreeMap<String, Vec<&StabilityProfile>> = BTreeMap::new();
    for p in profiles {
        match grouping {
            Grouping::Family => groups.entry("all".into()).or_default().push(p),
            Grouping::Dataset => groups.entry(p.dataset.clone()).or_default().push(p),
            Grouping::Endpoint => groups.entry(p.endpoint.clone()).or_default().push(p),
            Grouping::Category => {
                for c in &p.categories {
                    groups.entry(c.clone()).or_default().push(p);
                }
            }
        }
    }
    let mut rows = Vec::new();
    for (group, members) in &groups {
        let r = rows_for(group, members, kinds);
        if r.is_empty() {
            tracing::warn!(group = %group, "group has no perturbed records; row omitted");
        }
        rows.extend(r);
    }
    InstabilityReport { grouping, rows }
}

/// (P(correct | predicate), P(predicate)). Accuracy is `None` when no
/// profile satisfies the predicate.
pub fn conditioned_accuracy(
    profiles: &[StabilityProfile],
    predicate: impl Fn(&StabilityProfile) -> bool,
) -> (Option<f64>, f64) {
    if profiles.is_empty() {
        return (None, 0.0);
    }
    let selected: Vec<&StabilityProfile> = profiles.iter().filter(|p| predicate(p)).collect();
    let prevalence = selected.len() as f64 / profiles.len() as f64;
    if selected.is_empty() {
        return (None, prevalence);
    }
    let correct = selected.iter().filter(|p| p.correct).count();
    (Some(correct as f64 / selected.len() as f64), prevalence)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionedRow {
    pub condition: String,
    pub accuracy: Option<f64>,
    pub prevalence: f64,
}

/// Baseline accuracy followed by the Phrasing, Visual, Language, V+P and
/// All rows.
pub fn conditioned_accuracy_table(profiles: &[StabilityProfile]) -> Vec<ConditionedRow> {
    type Pred = fn(&StabilityProfile) -> bool;
    let preds: [(&str, Pred); 6] = [
        ("Baseline", |_| true),
        ("Phrasing", |p| p.stable_phrasing),
        ("Visual", |p| p.stable_visual),
        ("Language", |p| p.stable_language),
        ("V+P", |p| p.stable_visual && p.stable_phrasing),
        ("All", |p| p.stable_visual && p.stable_text),
    ];
    preds
        .iter()
        .map(|(name, pred)| {
            let (accuracy, prevalence) = conditioned_accuracy(profiles, pred);
            ConditionedRow {
                condition: name.to_string(),
                accuracy,
                prevalence,
            }
        })
        .collect()
}

/// The answer an overlay phrase tries to induce, normalized.
pub fn overlay_injected_answer(phrase_index: usize) -> Option<String> {
    let phrase = OVERLAY_PHRASES.get(phrase_index)?;
    let inner = match phrase.split_once('"') {
        Some((_, rest)) => rest.trim_end_matches('"'),
        None => phrase,
    };
    Some(normalize_answer(inner))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayBiasRow {
    pub gold: String,
    pub phrase: String,
    pub samples: usize,
    pub original_accuracy: f64,
    pub overlay_accuracy: f64,
}

/// Accuracy under each overlay phrase, broken down by gold answer.
pub fn overlay_bias_table(profiles: &[StabilityProfile]) -> Vec<OverlayBiasRow> {
    let mut rows = Vec::new();
    let mut by_gold: BTreeMap<&str, Vec<&StabilityProfile>> = BTreeMap::new();
    for p in profiles {
        by_gold.entry(p.gold.as_str()).or_default().push(p);
    }
    for (gold, members) in by_gold {
        for (idx, phrase) in OVERLAY_PHRASES.iter().enumerate() {
            let key = format!("text_overlay:{idx}");
            let with: Vec<(&StabilityProfile, &String)> = members
                .iter()
                .filter_map(|p| p.answers.get(&key).map(|a| (*p, a)))
                .collect();
            if with.is_empty() {
                continue;
            }
            let n = with.len() as f64;
            let orig = with.iter().filter(|(p, _)| p.correct).count() as f64;
            let over = with.iter().filter(|(p, a)| **a == p.gold).count() as f64;
            rows.push(OverlayBiasRow {
                gold: gold.to_string(),
                phrase: phrase.to_string(),
                samples: with.len(),
                original_accuracy: orig / n,
                overlay_accuracy: over / n,
            });
        }
    }
    if rows.is_empty() {
        tracing::warn!("no text-overlay answers; overlay table is empty");
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub angle: i32,
    pub group: String,
    pub samples: usize,
    pub fraction_changed: f64,
}

/// Fraction of samples whose answer at each sweep angle differs from the
/// unrotated answer, split by rotation sensitivity. If any profile lacks a
/// sensitivity flag a single "all" curve is produced.
pub fn rotation_sweep_curve(profiles: &[StabilityProfile]) -> Vec<SweepPoint> {
    let with_sweep: Vec<&StabilityProfile> = profiles
        .iter()
        .filter(|p| p.answers.keys().any(|k| k.starts_with("sweep:")))
        .collect();
    if with_sweep.is_empty() {
        return Vec::new();
    }
    let flagged = with_sweep.iter().all(|p| p.rotation_sensitive.is_some());
    if !flagged {
        tracing::warn!("rotation sensitivity flags missing; emitting a combined curve");
    }
    let mut groups: BTreeMap<&str, Vec<&StabilityProfile>> = BTreeMap::new();
    if flagged {
        groups.insert("variant", Vec::new());
        groups.insert("invariant", Vec::new());
    }
    for p in &with_sweep {
        let g = match (flagged, p.rotation_sensitive) {
            (false, _) => "all",
            (true, Some(true)) => "variant",
            _ => "invariant",
        };
        groups.entry(g).or_default().push(p);
    }
    let angles = std::iter::once(0).chain(SWEEP_ANGLES);
    let mut out = Vec::new();
    for angle in angles {
        for (group, members) in &groups {
            let mut n = 0;
            let mut changed = 0;
            for p in members {
                let answer = if angle == 0 {
                    Some(&p.identity_answer)
                } else {
                    p.answers.get(&format!("sweep:{angle}"))
                };
                if let Some(a) = answer {
                    n += 1;
                    if *a != p.identity_answer {
                        changed += 1;
                    }
                }
            }
            out.push(SweepPoint {
                angle,
                group: group.to_string(),
                samples: n,
                fraction_changed: ratio(changed, n),
            });
        }
    }
    out
}

/// Counts of `values` in bins `[k·width, (k+1)·width)`, starting at 0.
/// Returns (bin start, count) for every bin up to the last occupied one.
pub fn entropy_histogram(values: &[f64], width: f64) -> Vec<(f64, usize)> {
    if values.is_empty() || width <= 0.0 {
        return Vec::new();
    }
    let idx = |v: f64| ((v.max(0.0) / width) + 1e-9).floor() as usize;
    let last = values.iter().map(|&v| idx(v)).max().unwrap_or(0);
    let mut counts = vec![0usize; last + 1];
    for &v in values {
        counts[idx(v)] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| (k as f64 * width, c))
        .collect()
}

/// Sample ids present in every endpoint's profiles.
pub fn common_samples(profiles: &[StabilityProfile]) -> BTreeSet<String> {
    let mut per: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    for p in profiles {
        per.entry(&p.endpoint).or_default().insert(p.sample_id.clone());
    }
    let mut sets = per.into_values();
    let first = sets.next().unwrap_or_default();
    sets.fold(first, |acc, s| acc.intersection(&s).cloned().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(image: &str, text: &str, answer: &str) -> AnswerRecord {
        AnswerRecord {
            sample_id: "s".into(),
            image_variant_id: image.into(),
            text_variant_id: text.into(),
            raw_text: answer.into(),
            normalized: normalize_answer(answer),
            confidence: None,
            latency_ms: 0,
            endpoint: "m".into(),
            error: None,
        }
    }

    fn sample(gold: &str) -> Sample {
        Sample {
            id: "s".into(),
            image: crate::corpus::ImageSource::Embedded(Vec::new()),
            question: "q?".into(),
            answer: gold.into(),
            categories: BTreeSet::new(),
            rotation_sensitive: None,
        }
    }

    fn suite_records(answers: impl Fn(&str) -> &'static str) -> Vec<AnswerRecord> {
        crate::vperturb::SuiteConfig::default()
            .specs()
            .unwrap()
            .iter()
            .map(|s| {
                let id = s.id();
                rec(&id, ORIGINAL_QUESTION_ID, answers(&id))
            })
            .collect()
    }

    #[test]
    fn distribution_examples() {
        let d = AnswerDistribution::from_answers(["a", "a", "b"]).unwrap();
        let oracle = -(2.0f64 / 3.0) * (2.0f64 / 3.0).log2() - (1.0f64 / 3.0) * (1.0f64 / 3.0).log2();
        assert!((d.entropy() - oracle).abs() < 1e-12);
        let d = AnswerDistribution::from_answers(["yes"; 5].into_iter().chain(["no"; 5])).unwrap();
        assert_eq!(d.entropy(), 1.0);
        assert_eq!(AnswerDistribution::from_answers(["x"; 28]).unwrap().entropy(), 0.0);
        assert_eq!(answer_distribution(&[]), Err(StabilityError::Empty));
    }

    #[test]
    fn profile_all_yes() {
        let recs = suite_records(|_| "Yes");
        let refs: Vec<&AnswerRecord> = recs.iter().collect();
        let p = stability_profile(&sample("yes"), "d", &refs).unwrap();
        assert!(p.stable_visual && p.correct);
        assert_eq!(p.h_visual, 0.0);
        assert_eq!(p.families.len(), 6);
    }

    #[test]
    fn profile_one_rotation_flip() {
        let recs = suite_records(|id| if id == "rotation:30" { "no" } else { "yes" });
        let refs: Vec<&AnswerRecord> = recs.iter().collect();
        let p = stability_profile(&sample("Yes"), "d", &refs).unwrap();
        assert!(!p.stable_visual);
        let oracle = -(27.0f64 / 28.0) * (27.0f64 / 28.0).log2() - (1.0f64 / 28.0) * (1.0f64 / 28.0).log2();
        assert!((p.h_visual - oracle).abs() < 1e-12);
        assert!((p.h_visual - 0.222285).abs() < 1e-6);
        assert!(p.correct);
        assert!(!p.family(Kind::Rotation).unwrap().stable());
        assert!(p.family(Kind::Shift).unwrap().stable());
    }

    #[test]
    fn normalized_gold_comparison() {
        let recs = vec![rec("identity", ORIGINAL_QUESTION_ID, "yes.")];
        let refs: Vec<&AnswerRecord> = recs.iter().collect();
        assert!(stability_profile(&sample("Yes"), "d", &refs).unwrap().correct);
    }

    #[test]
    fn errors_counted_not_distributed() {
        let mut recs = suite_records(|_| "yes");
        recs[3].error = Some("HTTP 500".into());
        recs[3].normalized = String::new();
        let refs: Vec<&AnswerRecord> = recs.iter().collect();
        let p = stability_profile(&sample("yes"), "d", &refs).unwrap();
        assert_eq!(p.coverage, Coverage { records: 28, errors: 1 });
        assert!(p.stable_visual);
    }

    #[test]
    fn missing_identity_is_error() {
        let recs = vec![rec("shift:4", ORIGINAL_QUESTION_ID, "yes")];
        let refs: Vec<&AnswerRecord> = recs.iter().collect();
        assert_eq!(
            stability_profile(&sample("yes"), "d", &refs),
            Err(StabilityError::MissingIdentity("s".into()))
        );
    }

    #[test]
    fn classification() {
        assert_eq!(classify_record("identity", "orig"), RecordRole::Identity);
        assert_eq!(classify_record("shift:-4", "orig"), RecordRole::Perturbed(Kind::Shift));
        assert_eq!(classify_record("sweep:90", "orig"), RecordRole::Sweep(90));
        assert_eq!(classify_record("identity", "phrasing:0"), RecordRole::Original);
        assert_eq!(classify_record("identity", "language:fr"), RecordRole::Perturbed(Kind::Language));
        assert_eq!(classify_record("shift:-4", "phrasing:2"), RecordRole::Unknown);
    }

    #[test]
    fn overlay_injection() {
        assert_eq!(overlay_injected_answer(0).unwrap(), "yes");
        assert_eq!(overlay_injected_answer(2).unwrap(), "i dont know");
        assert_eq!(overlay_injected_answer(4).unwrap(), "no");
        assert_eq!(overlay_injected_answer(9), None);
    }

    #[test]
    fn histogram_bins() {
        let h = entropy_histogram(&[0.0, 0.1, 0.25, 1.0], 0.25);
        assert_eq!(h, vec![(0.0, 2), (0.25, 1), (0.5, 0), (0.75, 0), (1.0, 1)]);
    }
}
