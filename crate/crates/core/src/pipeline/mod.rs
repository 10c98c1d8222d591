//! The staged pipeline behind the command-line tool: perturb, run,
//! analyze, predict and report. Stages communicate only through files under
//! the output directory:
//!
//! ```text
//! out/
//!   perturb/  images/<sample>/<variant>.png, visual_manifest.jsonl,
//!             text_manifest.jsonl, rotation_flags.json, meta.json
//!   run/      <endpoint>.jsonl answer logs, meta.json
//!   analyze/  table*.csv, fig*.csv, profiles.json, summary.json
//!   predict/  classifier.json, pr_curves.csv, recall_at_precision.csv, summary.json
//!   report/   index.html, *.svg, copies of every table
//!   cache/    answers/ and text/ response caches
//! ```

mod analyze;
pub mod plot;
mod perturb;
mod predict;
mod report;
mod run;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{load_corpus, Corpus, CorpusFormat, DEFAULT_MAX_SIDE};
use crate::modelio::cache::write_atomic;
use crate::modelio::EndpointConfig;
use crate::predictor::{FeatureConfig, TrainConfig};
use crate::stats::Binning;
use crate::tperturb::language_by_code;
use crate::vperturb::SuiteConfig;

pub use analyze::{cmd_analyze, AnalysisSummary, DivergenceSummary};
pub use perturb::cmd_perturb;
pub use predict::{cmd_predict, PredictionSummary};
pub use report::cmd_report;
pub use run::cmd_run;

pub const TOOL_NAME: &str = "vqastab";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("missing input {path}; run `{TOOL_NAME} {stage}` first")]
    MissingInput { path: PathBuf, stage: &'static str },
    #[error("endpoint failure: {0}")]
    Upstream(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl PipelineError {
    /// 2 for validation problems, 3 for endpoint failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) | PipelineError::MissingInput { .. } => 2,
            PipelineError::Upstream(_) => 3,
            PipelineError::Io { .. } => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Validation(_) => "validation",
            PipelineError::MissingInput { .. } => "missing_input",
            PipelineError::Upstream(_) => "upstream",
            PipelineError::Io { .. } => "io",
        }
    }

    /// Machine-readable form written to stderr by the command-line tool.
    pub fn to_json(&self) -> serde_json::Value {
        let mut err = serde_json::json!({
            "kind": self.kind(),
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        });
        if let PipelineError::MissingInput { path, stage } = self {
            err["path"] = path.display().to_string().into();
            err["run_first"] = (*stage).into();
        }
        serde_json::json!({ "error": err })
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub path: PathBuf,
    #[serde(default = "default_format")]
    pub format: CorpusFormat,
    /// Dataset name in reports; defaults to the file stem.
    #[serde(default)]
    pub name: Option<String>,
}

fn default_format() -> CorpusFormat {
    CorpusFormat::Jsonl
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextConfig {
    pub rephrase: bool,
    /// Language codes to translate into.
    pub languages: Vec<String>,
    /// Ask the generator endpoint which questions are rotation sensitive.
    pub tag_rotation: bool,
}

impl Default for TextConfig {
    fn default() -> Self {
        TextConfig {
            rephrase: true,
            languages: crate::tperturb::default_languages()
                .into_iter()
                .map(|l| l.code)
                .collect(),
            tag_rotation: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub bins: usize,
    pub binning: Binning,
    pub histogram_width: f64,
    /// Activation dump used for the layer-wise divergence curves.
    pub activation_dump: Option<PathBuf>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            bins: 10,
            binning: Binning::EqualWidth,
            histogram_width: 0.25,
            activation_dump: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorSection {
    pub features: FeatureConfig,
    pub train: TrainConfig,
}

/// Everything a pipeline run needs, read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub corpora: Vec<CorpusSpec>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub limit: Option<usize>,
    #[serde(default = "default_max_side")]
    pub max_side: u32,
    #[serde(default)]
    pub suite: SuiteConfig,
    #[serde(default)]
    pub text: TextConfig,
    pub target: EndpointConfig,
    #[serde(default)]
    pub proxies: Vec<EndpointConfig>,
    /// Text-generation endpoint for rephrasing, translation and rotation tagging.
    #[serde(default)]
    pub generator: Option<EndpointConfig>,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub predictor: PredictorSection,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_max_side() -> u32 {
    DEFAULT_MAX_SIDE
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub limit: Option<usize>,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && !name.starts_with('.')
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Validation(e.to_string()))
    }

    /// Read, resolve relative paths against the file's directory, apply
    /// overrides and validate.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| {
            PipelineError::Validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let base = if base.as_os_str().is_empty() { Path::new(".") } else { base };
        for c in &mut cfg.corpora {
            c.path = base.join(&c.path);
        }
        cfg.out_dir = base.join(&cfg.out_dir);
        if let Some(d) = &mut cfg.analysis.activation_dump {
            *d = base.join(&*d);
        }
        if let Some(out) = &overrides.out_dir {
            cfg.out_dir = out.clone();
        }
        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
        }
        if let Some(limit) = overrides.limit {
            cfg.limit = Some(limit);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |m: String| Err(PipelineError::Validation(m));
        if self.corpora.is_empty() {
            return fail("no corpora configured".into());
        }
        for c in &self.corpora {
            if !c.path.is_file() {
                return fail(format!("corpus file {} does not exist", c.path.display()));
            }
        }
        if self.max_side == 0 {
            return fail("max_side must be >= 1".into());
        }
        let mut names = BTreeSet::new();
        for e in self.endpoints() {
            e.validate().map_err(PipelineError::Validation)?;
            if !valid_name(&e.name) {
                return fail(format!("endpoint name {:?} must use only letters, digits, '-', '_', '.'", e.name));
            }
            if !names.insert(e.name.as_str()) {
                return fail(format!("duplicate endpoint name {:?}", e.name));
            }
        }
        if let Some(g) = &self.generator {
            g.validate().map_err(PipelineError::Validation)?;
        }
        let wants_text = self.text.rephrase || !self.text.languages.is_empty() || self.text.tag_rotation;
        if wants_text && self.generator.is_none() {
            return fail("text variants or rotation tagging requested but no [generator] endpoint".into());
        }
        for code in &self.text.languages {
            if language_by_code(code).is_none() {
                return fail(format!("unknown language code {code:?}"));
            }
        }
        self.suite
            .specs()
            .map_err(|e| PipelineError::Validation(e.to_string()))?;
        if self.analysis.bins < 2 {
            return fail("analysis.bins must be >= 2".into());
        }
        if !(self.analysis.histogram_width > 0.0) {
            return fail("analysis.histogram_width must be positive".into());
        }
        let split = self.predictor.train.split_fraction;
        if !(split > 0.0 && split < 1.0) {
            return fail("predictor.train.split_fraction must be in (0, 1)".into());
        }
        Ok(())
    }

    /// Target first, then proxies in configuration order.
    pub fn endpoints(&self) -> impl Iterator<Item = &EndpointConfig> {
        std::iter::once(&self.target).chain(self.proxies.iter())
    }

    /// Hash of the resolved configuration, embedded in every artifact. The
    /// output directory is left out so relocated runs hash the same.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        value["out_dir"] = serde_json::Value::Null;
        let canonical = serde_json::to_vec(&value).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))[..16].to_string()
    }

    pub fn meta(&self) -> ArtifactMeta {
        ArtifactMeta {
            tool: TOOL_NAME.to_string(),
            version: TOOL_VERSION.to_string(),
            config_hash: self.hash(),
            seed: self.seed,
        }
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.out_dir.join(stage)
    }
}

/// Provenance stamped into every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
}

impl ArtifactMeta {
    /// One-line header for CSV files.
    pub fn csv_comment(&self) -> String {
        format!(
            "# {} {} config={} seed={}\n",
            self.tool, self.version, self.config_hash, self.seed
        )
    }

    pub fn inline(&self) -> String {
        format!(
            "{} {} config={} seed={}",
            self.tool, self.version, self.config_hash, self.seed
        )
    }
}

/// Write `bytes` unless the file already holds exactly them. Returns
/// whether anything was written.
pub fn write_if_changed(path: &Path, bytes: &[u8]) -> Result<bool, PipelineError> {
    if let Ok(existing) = fs::read(path) {
        if existing == bytes {
            return Ok(false);
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    write_atomic(path, bytes).map_err(io_err(path))?;
    Ok(true)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<bool, PipelineError> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    write_if_changed(path, text.as_bytes())
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(
    path: &Path,
    stage: &'static str,
) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(|_| PipelineError::MissingInput {
        path: path.to_path_buf(),
        stage,
    })?;
    serde_json::from_str(&text)
        .map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<bool, PipelineError> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).expect("row serializes"));
        out.push('\n');
    }
    write_if_changed(path, out.as_bytes())
}

pub(crate) fn read_jsonl<T: serde::de::DeserializeOwned>(
    path: &Path,
    stage: &'static str,
) -> Result<Vec<T>, PipelineError> {
    let text = fs::read_to_string(path).map_err(|_| PipelineError::MissingInput {
        path: path.to_path_buf(),
        stage,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                PipelineError::Validation(format!("{} line {}: {e}", path.display(), i + 1))
            })
        })
        .collect()
}

/// File-system-safe name for an id; ids that need changes get a short hash
/// suffix so distinct ids stay distinct.
pub fn file_stem(id: &str) -> String {
    let clean: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    if clean == id && !id.starts_with('.') {
        clean
    } else {
        let h = hex::encode(Sha256::digest(id.as_bytes()));
        format!("{}-{}", clean.trim_start_matches('.'), &h[..8])
    }
}

/// The samples of a run after applying the limit, with their datasets.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub corpora: Vec<Corpus>,
    /// All selected samples in one id-ordered corpus.
    pub merged: Corpus,
}

impl Workspace {
    pub fn load(cfg: &RunConfig) -> Result<Self, PipelineError> {
        let mut loaded = Vec::new();
        for spec in &cfg.corpora {
            let mut c = load_corpus(&spec.path, spec.format)
                .map_err(|e| PipelineError::Validation(format!("{}: {e}", spec.path.display())))?;
            c.name = spec.name.clone().unwrap_or_else(|| {
                spec.path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "corpus".into())
            });
            loaded.push(c);
        }
        let mut seen = BTreeSet::new();
        let mut all = Vec::new();
        for c in &loaded {
            for s in &c.samples {
                if !seen.insert(s.id.clone()) {
                    return Err(PipelineError::Validation(format!(
                        "sample id {:?} appears in more than one corpus",
                        s.id
                    )));
                }
                all.push(s.clone());
            }
        }
        let mut merged = Corpus::new("all", all);
        if let Some(limit) = cfg.limit {
            merged = merged.subset(limit, cfg.seed);
        }
        let corpora = loaded
            .into_iter()
            .map(|c| {
                let keep = c
                    .samples
                    .into_iter()
                    .filter(|s| merged.get(&s.id).is_some())
                    .collect();
                Corpus::new(c.name, keep)
            })
            .filter(|c| !c.is_empty())
            .collect();
        Ok(Workspace { corpora, merged })
    }

    /// Apply rotation-sensitivity flags recorded by the perturb stage.
    pub fn apply_rotation_flags(&mut self, flags: &BTreeMap<String, bool>) {
        for c in self.corpora.iter_mut().chain(std::iter::once(&mut self.merged)) {
            for s in &mut c.samples {
                if let Some(&f) = flags.get(&s.id) {
                    s.rotation_sensitive = Some(f);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Perturb,
    Run,
    Analyze,
    Predict,
    Report,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Perturb => "perturb",
            Stage::Run => "run",
            Stage::Analyze => "analyze",
            Stage::Predict => "predict",
            Stage::Report => "report",
        }
    }
}

/// What a stage did, printed as JSON by the command-line tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    pub files_written: usize,
    pub details: serde_json::Value,
}

pub async fn run_stage(stage: Stage, cfg: &RunConfig) -> Result<StageSummary, PipelineError> {
    match stage {
        Stage::Perturb => cmd_perturb(cfg).await,
        Stage::Run => cmd_run(cfg).await,
        Stage::Analyze => cmd_analyze(cfg),
        Stage::Predict => cmd_predict(cfg),
        Stage::Report => cmd_report(cfg),
    }
}

/// Run every stage in order.
pub async fn run_all(cfg: &RunConfig) -> Result<Vec<StageSummary>, PipelineError> {
    let mut out = Vec::new();
    for stage in [Stage::Perturb, Stage::Run, Stage::Analyze, Stage::Predict, Stage::Report] {
        out.push(run_stage(stage, cfg).await?);
    }
    Ok(out)
}
