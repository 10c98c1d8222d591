//! Benchmark ingestion: a canonical sample store loaded from JSONL or
//! VLMEvalKit-style TSV files, plus the 1024-px image cap and rotation
//! sensitivity tagging.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use image::imageops::{self, FilterType};
use image::{ImageReader, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::modelio::TextGenerator;
use crate::tperturb::parse_string_list;

/// Default longest side allowed before a model sees an image.
pub const DEFAULT_MAX_SIDE: u32 = 1024;

/// Questions per judge request when tagging rotation sensitivity.
pub const JUDGE_BATCH_SIZE: usize = 50;

const JUDGE_ATTEMPTS: usize = 3;

/// Prompt used to split questions into rotation-sensitive and invariant groups.
pub const ROTATION_JUDGE_PROMPT: &str = include_str!("../prompts/rotation_judge_v1.txt");

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: duplicate sample id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("sample {id:?}: undecodable image: {reason}")]
    Image { id: String, reason: String },
    #[error("rotation judge failed: {0}")]
    Judge(String),
}

/// Input file layout understood by [`load_corpus`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Jsonl,
    Tsv,
}

/// Where a sample's pixels live.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImageSource {
    Path(PathBuf),
    Embedded(Vec<u8>),
}

impl ImageSource {
    pub fn bytes(&self) -> std::io::Result<std::borrow::Cow<'_, [u8]>> {
        match self {
            ImageSource::Path(p) => fs::read(p).map(std::borrow::Cow::Owned),
            ImageSource::Embedded(b) => Ok(std::borrow::Cow::Borrowed(b)),
        }
    }

    pub fn decode(&self) -> Result<RgbImage, String> {
        let bytes = self.bytes().map_err(|e| e.to_string())?;
        decode_raster(&bytes)
    }

    fn dimensions(&self) -> Result<(u32, u32), String> {
        let bytes = self.bytes().map_err(|e| e.to_string())?;
        ImageReader::new(Cursor::new(bytes.as_ref()))
            .with_guessed_format()
            .map_err(|e| e.to_string())?
            .into_dimensions()
            .map_err(|e| e.to_string())
    }
}

/// Decode any supported encoded image into an 8-bit RGB raster.
pub fn decode_raster(bytes: &[u8]) -> Result<RgbImage, String> {
    let img = ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| e.to_string())?
        .decode()
        .map_err(|e| e.to_string())?;
    Ok(img.to_rgb8())
}

/// Lossless PNG encoding of a raster.
pub fn encode_png(image: &RgbImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    image
        .write_to(&mut out, image::ImageFormat::Png)
        .expect("PNG encoding into memory cannot fail");
    out.into_inner()
}

/// One benchmark item: image, question, gold answer and tags.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: ImageSource,
    pub question: String,
    pub answer: String,
    pub categories: BTreeSet<String>,
    pub rotation_sensitive: Option<bool>,
}

/// A named, id-ordered collection of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub name: String,
    pub samples: Vec<Sample>,
}

impl Corpus {
    pub fn new(name: impl Into<String>, mut samples: Vec<Sample>) -> Self {
        samples.sort_by(|a, b| a.id.cmp(&b.id));
        Corpus {
            name: name.into(),
            samples,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples
            .binary_search_by(|s| s.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.samples[i])
    }

    /// Deterministic subset of at most `limit` samples chosen by `seed`,
    /// returned in id order.
    pub fn subset(&self, limit: usize, seed: u64) -> Corpus {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        if limit >= self.samples.len() {
            return self.clone();
        }
        let mut idx: Vec<usize> = (0..self.samples.len()).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        idx.shuffle(&mut rng);
        let picked = idx[..limit]
            .iter()
            .map(|&i| self.samples[i].clone())
            .collect();
        Corpus::new(self.name.clone(), picked)
    }

    /// Serialize as canonical JSONL (one record per line, id order).
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            let rec = JsonlRecord::from_sample(s);
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonlRecord {
    id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_b64: Option<String>,
    question: Option<String>,
    answer: Option<String>,
    #[serde(default)]
    categories: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rotation_sensitive: Option<bool>,
}

impl JsonlRecord {
    fn from_sample(s: &Sample) -> Self {
        let (image, image_b64) = match &s.image {
            ImageSource::Path(p) => (Some(p.to_string_lossy().into_owned()), None),
            ImageSource::Embedded(b) => (None, Some(BASE64.encode(b))),
        };
        JsonlRecord {
            id: Some(s.id.clone()),
            image,
            image_b64,
            question: Some(s.question.clone()),
            answer: Some(s.answer.clone()),
            categories: s.categories.iter().cloned().collect(),
            rotation_sensitive: s.rotation_sensitive,
        }
    }
}

fn required(field: Option<String>, name: &str, line: usize) -> Result<String, CorpusError> {
    match field {
        Some(v) if !v.trim().is_empty() => Ok(v),
        Some(_) => Err(CorpusError::Malformed {
            line,
            reason: format!("field {name:?} is empty"),
        }),
        None => Err(CorpusError::Malformed {
            line,
            reason: format!("missing field {name:?}"),
        }),
    }
}

fn decode_b64(payload: &str, id: &str) -> Result<Vec<u8>, CorpusError> {
    let cleaned: String = payload.chars().filter(|c| !c.is_whitespace()).collect();
    BASE64.decode(cleaned).map_err(|e| CorpusError::Image {
        id: id.to_string(),
        reason: format!("bad base64: {e}"),
    })
}

fn check_image(id: &str, src: &ImageSource) -> Result<(), CorpusError> {
    let (w, h) = src.dimensions().map_err(|reason| CorpusError::Image {
        id: id.to_string(),
        reason,
    })?;
    if w == 0 || h == 0 {
        return Err(CorpusError::Image {
            id: id.to_string(),
            reason: format!("empty raster {w}x{h}"),
        });
    }
    Ok(())
}

/// Load a corpus file. Relative image paths resolve against the file's directory.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let samples = match format {
        CorpusFormat::Jsonl => parse_jsonl(&text, base)?,
        CorpusFormat::Tsv => parse_tsv(&text)?,
    };
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".to_string());
    Ok(Corpus::new(name, samples))
}

fn push_unique(
    samples: &mut Vec<Sample>,
    seen: &mut HashMap<String, usize>,
    sample: Sample,
    line: usize,
) -> Result<(), CorpusError> {
    if seen.insert(sample.id.clone(), line).is_some() {
        return Err(CorpusError::DuplicateId {
            line,
            id: sample.id,
        });
    }
    samples.push(sample);
    Ok(())
}

fn parse_jsonl(text: &str, base: &Path) -> Result<Vec<Sample>, CorpusError> {
    let mut samples = Vec::new();
    let mut seen = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: JsonlRecord = serde_json::from_str(raw).map_err(|e| CorpusError::Malformed {
            line,
            reason: e.to_string(),
        })?;
        let id = required(rec.id, "id", line)?;
        let question = required(rec.question, "question", line)?;
        let answer = required(rec.answer, "answer", line)?;
        let image = match (rec.image, rec.image_b64) {
            (_, Some(b64)) => ImageSource::Embedded(decode_b64(&b64, &id)?),
            (Some(p), None) => {
                let p = PathBuf::from(p);
                ImageSource::Path(if p.is_absolute() { p } else { base.join(p) })
            }
            (None, None) => {
                return Err(CorpusError::Malformed {
                    line,
                    reason: "missing field \"image\" or \"image_b64\"".into(),
                })
            }
        };
        check_image(&id, &image)?;
        let sample = Sample {
            id,
            image,
            question,
            answer,
            categories: rec.categories.into_iter().collect(),
            rotation_sensitive: rec.rotation_sensitive,
        };
        push_unique(&mut samples, &mut seen, sample, line)?;
    }
    Ok(samples)
}

fn parse_tsv(text: &str) -> Result<Vec<Sample>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| CorpusError::Malformed {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (Some(c_id), Some(c_img), Some(c_q), Some(c_a)) =
        (col("index"), col("image"), col("question"), col("answer"))
    else {
        return Err(CorpusError::Malformed {
            line: 1,
            reason: "TSV header must contain index, image, question and answer".into(),
        });
    };
    let c_cat = col("category");

    let mut samples = Vec::new();
    let mut seen = HashMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| CorpusError::Malformed {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let get = |c: usize| rec.get(c).map(str::to_string);
        let id = required(get(c_id), "index", line)?;
        let question = required(get(c_q), "question", line)?;
        let answer = required(get(c_a), "answer", line)?;
        let payload = required(get(c_img), "image", line)?;
        let image = ImageSource::Embedded(decode_b64(&payload, &id)?);
        check_image(&id, &image)?;
        let categories = c_cat
            .and_then(|c| rec.get(c))
            .filter(|c| !c.trim().is_empty())
            .map(|c| BTreeSet::from([c.trim().to_string()]))
            .unwrap_or_default();
        let sample = Sample {
            id,
            image,
            question,
            answer,
            categories,
            rotation_sensitive: None,
        };
        push_unique(&mut samples, &mut seen, sample, line)?;
    }
    Ok(samples)
}

/// Target size for a longest-side cap; `None` when no resize is needed.
pub fn capped_dimensions(width: u32, height: u32, max_side: u32) -> Option<(u32, u32)> {
    let longest = width.max(height);
    if longest <= max_side {
        return None;
    }
    // round half away from zero, in integers
    let scale = |d: u32| -> u32 {
        let num = 2 * d as u64 * max_side as u64 + longest as u64;
        ((num / (2 * longest as u64)) as u32).max(1)
    };
    Some((scale(width), scale(height)))
}

/// Aspect-preserving bicubic downscale so the longest side is at most `max_side`.
/// Images already within the cap come back unchanged.
pub fn cap_image_size(image: &RgbImage, max_side: u32) -> RgbImage {
    assert!(max_side >= 1, "max_side must be positive");
    match capped_dimensions(image.width(), image.height(), max_side) {
        None => image.clone(),
        Some((w, h)) => imageops::resize(image, w, h, FilterType::CatmullRom),
    }
}

fn judge_prompt(questions: &[&str]) -> String {
    let list = serde_json::to_string_pretty(questions).expect("strings serialize");
    format!("{}\n{}\n", ROTATION_JUDGE_PROMPT.trim_end(), list)
}

/// Ask `judge` which questions are rotation sensitive and set every sample's flag.
///
/// Fails without touching any flag if a batch cannot be parsed after three attempts.
pub async fn tag_rotation_sensitivity<G: TextGenerator>(
    corpus: &Corpus,
    judge: &G,
) -> Result<Corpus, CorpusError> {
    let mut unique: Vec<&str> = corpus.samples.iter().map(|s| s.question.as_str()).collect();
    unique.sort_unstable();
    unique.dedup();

    let mut sensitive: BTreeSet<String> = BTreeSet::new();
    for batch in unique.chunks(JUDGE_BATCH_SIZE) {
        let prompt = judge_prompt(batch);
        let mut last_err = String::new();
        let mut parsed = None;
        for _ in 0..JUDGE_ATTEMPTS {
            match judge.generate(&prompt).await {
                Ok(reply) => match parse_string_list(&reply) {
                    Ok(list) => {
                        parsed = Some(list);
                        break;
                    }
                    Err(e) => last_err = e.to_string(),
                },
                Err(e) => last_err = e.to_string(),
            }
        }
        let Some(list) = parsed else {
            return Err(CorpusError::Judge(last_err));
        };
        for q in list {
            if batch.contains(&q.as_str()) {
                sensitive.insert(q);
            } else {
                tracing::warn!(question = %q, "judge returned a question not in the batch; ignored");
            }
        }
    }

    let mut out = corpus.clone();
    for s in &mut out.samples {
        s.rotation_sensitive = Some(sensitive.contains(&s.question));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn write(dir: &Path, name: &str, content: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, content).unwrap();
        p
    }

    fn tiny_png() -> Vec<u8> {
        encode_png(&RgbImage::from_pixel(2, 2, Rgb([1, 2, 3])))
    }

    #[test]
    fn jsonl_three_records() {
        let dir = tempfile::tempdir().unwrap();
        let b64 = BASE64.encode(tiny_png());
        let body: String = (0..3)
            .map(|i| {
                format!(
                    "{{\"id\":\"s{i}\",\"image_b64\":\"{b64}\",\"question\":\"Q{i}?\",\"answer\":\"yes\"}}\n"
                )
            })
            .collect();
        let p = write(dir.path(), "c.jsonl", &body);
        let c = load_corpus(&p, CorpusFormat::Jsonl).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.name, "c");
    }

    #[test]
    fn missing_answer_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let b64 = BASE64.encode(tiny_png());
        let body = format!(
            "{{\"id\":\"a\",\"image_b64\":\"{b64}\",\"question\":\"q\",\"answer\":\"y\"}}\n\
             {{\"id\":\"b\",\"image_b64\":\"{b64}\",\"question\":\"q\"}}\n"
        );
        let p = write(dir.path(), "c.jsonl", &body);
        let err = load_corpus(&p, CorpusFormat::Jsonl).unwrap_err();
        match err {
            CorpusError::Malformed { line, reason } => {
                assert_eq!(line, 2);
                assert!(reason.contains("answer"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_and_blank_fields_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let b64 = BASE64.encode(tiny_png());
        let dup = format!(
            "{{\"id\":\"a\",\"image_b64\":\"{b64}\",\"question\":\"q\",\"answer\":\"y\"}}\n\
             {{\"id\":\"a\",\"image_b64\":\"{b64}\",\"question\":\"q\",\"answer\":\"y\"}}\n"
        );
        let p = write(dir.path(), "d.jsonl", &dup);
        assert!(matches!(
            load_corpus(&p, CorpusFormat::Jsonl),
            Err(CorpusError::DuplicateId { line: 2, .. })
        ));
        let blank =
            format!("{{\"id\":\"a\",\"image_b64\":\"{b64}\",\"question\":\"  \",\"answer\":\"y\"}}\n");
        let p = write(dir.path(), "e.jsonl", &blank);
        assert!(matches!(
            load_corpus(&p, CorpusFormat::Jsonl),
            Err(CorpusError::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn undecodable_payload_is_an_image_error() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "{{\"id\":\"a\",\"image_b64\":\"{}\",\"question\":\"q\",\"answer\":\"y\"}}\n",
            BASE64.encode(b"not an image")
        );
        let p = write(dir.path(), "c.jsonl", &body);
        assert!(matches!(
            load_corpus(&p, CorpusFormat::Jsonl),
            Err(CorpusError::Image { .. })
        ));
    }

    #[test]
    fn relative_image_paths_resolve_against_corpus_dir() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("img.png"), tiny_png()).unwrap();
        let p = write(
            dir.path(),
            "c.jsonl",
            "{\"id\":\"a\",\"image\":\"img.png\",\"question\":\"q\",\"answer\":\"y\",\"categories\":[\"Scene\"]}\n",
        );
        let c = load_corpus(&p, CorpusFormat::Jsonl).unwrap();
        assert_eq!(c.samples[0].image, ImageSource::Path(dir.path().join("img.png")));
        assert!(c.samples[0].categories.contains("Scene"));
    }

    #[test]
    fn tsv_base64_round_trips_pixels() {
        // 8x8 raster with a distinct value per pixel
        let raster = RgbImage::from_fn(8, 8, |x, y| Rgb([(x * 8 + y) as u8, x as u8 * 30, y as u8 * 30]));
        let b64 = BASE64.encode(encode_png(&raster));
        let body = format!(
            "index\timage\tquestion\tanswer\tcategory\n7\t{b64}\tIs it red?\tno\tInstance Attributes\n"
        );
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "bench.tsv", &body);
        let c = load_corpus(&p, CorpusFormat::Tsv).unwrap();
        assert_eq!(c.len(), 1);
        let decoded = c.samples[0].image.decode().unwrap();
        assert_eq!(decoded.as_raw(), raster.as_raw());
        assert!(c.samples[0].categories.contains("Instance Attributes"));
    }

    #[test]
    fn tsv_missing_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "bad.tsv", "index\tquestion\tanswer\n1\tq\ta\n");
        assert!(matches!(
            load_corpus(&p, CorpusFormat::Tsv),
            Err(CorpusError::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn cap_is_noop_when_small() {
        let img = RgbImage::from_fn(640, 480, |x, y| Rgb([x as u8, y as u8, 7]));
        let out = cap_image_size(&img, 1024);
        assert_eq!(out.as_raw(), img.as_raw());
        assert_eq!(out.dimensions(), (640, 480));
    }

    #[test]
    fn cap_dimensions() {
        assert_eq!(capped_dimensions(2048, 1024, 1024), Some((1024, 512)));
        // 1000 * 1024 / 1500 = 682.67 -> 683
        assert_eq!(capped_dimensions(1500, 1000, 1024), Some((1024, 683)));
        assert_eq!(capped_dimensions(1000, 1500, 1024), Some((683, 1024)));
        // exact half rounds away from zero: 3 * 2 / 4 = 1.5 -> 2
        assert_eq!(capped_dimensions(4, 3, 2), Some((2, 2)));
        assert_eq!(capped_dimensions(1024, 10, 1024), None);
        assert_eq!(capped_dimensions(5000, 1, 10), Some((10, 1)));
    }

    #[test]
    fn cap_resizes_and_is_idempotent() {
        let img = RgbImage::from_fn(1500, 1000, |x, y| Rgb([(x % 251) as u8, (y % 241) as u8, 0]));
        let once = cap_image_size(&img, 1024);
        assert_eq!(once.dimensions(), (1024, 683));
        let twice = cap_image_size(&once, 1024);
        assert_eq!(once.as_raw(), twice.as_raw());
    }

    #[test]
    fn subset_is_deterministic_and_ordered() {
        let samples = (0..20)
            .map(|i| Sample {
                id: format!("s{i:02}"),
                image: ImageSource::Embedded(vec![]),
                question: "q".into(),
                answer: "a".into(),
                categories: BTreeSet::new(),
                rotation_sensitive: None,
            })
            .collect();
        let c = Corpus::new("c", samples);
        let a = c.subset(5, 3);
        let b = c.subset(5, 3);
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        assert!(a.samples.windows(2).all(|w| w[0].id < w[1].id));
        assert_eq!(c.subset(50, 3).len(), 20);
    }
}
