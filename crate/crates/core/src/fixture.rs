//! A small synthetic corpus plus a matching run config, for examples and
//! end-to-end tests against the bundled mock server.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::corpus::{encode_png, CorpusFormat};
use crate::modelio::mock::{base_answer, difficulty, question_core};
use crate::modelio::EndpointConfig;
use crate::pipeline::{AnalysisConfig, CorpusSpec, PredictorSection, RunConfig, TextConfig};
use crate::stats::{write_dump, ActivationTrace};
use crate::tperturb::PHRASING_COUNT;
use crate::vperturb::SuiteConfig;

pub const FIXTURE_WIDTH: u32 = 224;
pub const FIXTURE_HEIGHT: u32 = 160;

const COLORS: [(&str, [u8; 3]); 4] = [
    ("red", [200, 40, 40]),
    ("green", [40, 160, 60]),
    ("blue", [40, 70, 200]),
    ("yellow", [220, 200, 40]),
];
const SHAPES: [&str; 4] = ["square", "circle", "bar", "cross"];
const PLACES: [&str; 4] = ["in the top left corner", "on the right side", "near the bottom", "in the middle"];

#[derive(Debug, Clone)]
pub struct FixtureOptions {
    pub samples: usize,
    pub seed: u64,
    pub languages: Vec<String>,
    pub layers: usize,
    pub dims: usize,
}

impl Default for FixtureOptions {
    fn default() -> Self {
        FixtureOptions {
            samples: 16,
            seed: 7,
            languages: vec!["fr".into(), "de".into(), "ja".into()],
            layers: 8,
            dims: 16,
        }
    }
}

/// Paths of a written fixture.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub dir: PathBuf,
    pub corpus: PathBuf,
    pub config: PathBuf,
    pub dump: PathBuf,
}

#[derive(Serialize)]
struct Row {
    id: String,
    image: String,
    question: String,
    answer: String,
    categories: Vec<String>,
}

fn question(i: usize) -> (String, Vec<String>) {
    let color = COLORS[i % 4].0;
    let shape = SHAPES[(i / 4) % 4];
    match i % 3 {
        0 => (
            format!("Is there a {color} {shape} {}?", PLACES[(i / 3) % 4]),
            vec!["position".into(), "color".into()],
        ),
        1 => (format!("Is any {shape} in the picture {color}?"), vec!["color".into()]),
        _ => (
            format!("Are there more than {} shapes next to the {color} {shape}?", 2 + i % 3),
            vec!["counting".into()],
        ),
    }
}

/// The gold answer agrees with the mock's default answer only on easy
/// questions, so hard (unstable) questions tend to be answered wrongly.
pub fn gold_answer(question: &str) -> &'static str {
    let core = question_core(question);
    let base = base_answer(&core);
    if difficulty(&core) < 0.7 {
        base
    } else if base == "yes" {
        "no"
    } else {
        "yes"
    }
}

/// Draw a scene of a few coloured shapes on a noisy background.
pub fn synthetic_image(rng: &mut impl Rng, width: u32, height: u32) -> RgbImage {
    let bg = [rng.random_range(180..255u8), rng.random_range(180..255u8), rng.random_range(180..255u8)];
    let mut img = RgbImage::from_fn(width, height, |_, _| {
        let n = rng.random_range(0..12u8);
        Rgb([bg[0] - n, bg[1] - n, bg[2] - n])
    });
    let shapes = rng.random_range(2..5);
    for _ in 0..shapes {
        let color = COLORS[rng.random_range(0..COLORS.len())].1;
        let w = rng.random_range(16..width / 3);
        let h = rng.random_range(16..height / 3);
        let x0 = rng.random_range(0..width - w);
        let y0 = rng.random_range(0..height - h);
        let round = rng.random_bool(0.5);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                let dx = (f64::from(x - x0) / f64::from(w)) - 0.5;
                let dy = (f64::from(y - y0) / f64::from(h)) - 0.5;
                if !round || dx * dx + dy * dy <= 0.25 {
                    img.put_pixel(x, y, Rgb(color));
                }
            }
        }
    }
    img
}

/// Write `samples` PNGs and a JSONL corpus into `dir`.
pub fn write_corpus(dir: &Path, opts: &FixtureOptions) -> io::Result<PathBuf> {
    let images = dir.join("images");
    fs::create_dir_all(&images)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut lines = String::new();
    for i in 0..opts.samples {
        let id = format!("s{i:03}");
        let img = synthetic_image(&mut rng, FIXTURE_WIDTH, FIXTURE_HEIGHT);
        fs::write(images.join(format!("{id}.png")), encode_png(&img))?;
        let (q, categories) = question(i);
        let row = Row {
            id: id.clone(),
            image: format!("images/{id}.png"),
            answer: gold_answer(&q).into(),
            question: q,
            categories,
        };
        lines.push_str(&serde_json::to_string(&row).map_err(io::Error::other)?);
        lines.push('\n');
    }
    let path = dir.join("corpus.jsonl");
    fs::write(&path, lines)?;
    Ok(path)
}

pub fn mock_endpoint(name: &str, model: &str, base_url: &str) -> EndpointConfig {
    EndpointConfig {
        name: name.into(),
        base_url: base_url.into(),
        model: model.into(),
        max_parallel: 8,
        retry_base_ms: 20,
        request_timeout_secs: 20,
        ..Default::default()
    }
}

/// A run config over the fixture corpus with a target, two proxies and a
/// generator, all served by `base_url`. Paths are relative to the fixture
/// directory.
pub fn fixture_config(base_url: &str, opts: &FixtureOptions) -> RunConfig {
    RunConfig {
        corpora: vec![CorpusSpec {
            path: "corpus.jsonl".into(),
            format: CorpusFormat::Jsonl,
            name: Some("shapes".into()),
        }],
        out_dir: "out".into(),
        seed: opts.seed,
        limit: None,
        max_side: 1024,
        suite: SuiteConfig {
            rotation_sweep: true,
            ..Default::default()
        },
        text: TextConfig {
            rephrase: true,
            languages: opts.languages.clone(),
            tag_rotation: true,
        },
        target: mock_endpoint("target", "mock-target", base_url),
        proxies: vec![
            mock_endpoint("proxy-a", "mock-proxy-a", base_url),
            mock_endpoint("proxy-b", "mock-proxy-b", base_url),
        ],
        generator: Some(EndpointConfig {
            logprobs: false,
            temperature: 0.7,
            max_tokens: 512,
            ..mock_endpoint("generator", "mock-generator", base_url)
        }),
        analysis: AnalysisConfig {
            activation_dump: Some("activations.bin".into()),
            ..Default::default()
        },
        predictor: PredictorSection {
            train: crate::predictor::TrainConfig {
                min_samples: 16,
                ..Default::default()
            },
            ..Default::default()
        },
    }
}

fn variant_seed(seed: u64, sample: &str, variant: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(sample.as_bytes());
    h.update([0]);
    h.update(variant.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Activation traces for every sample and variant id the config produces.
/// Deeper layers drift further from the identity trace.
pub fn synthetic_traces(sample_ids: &[String], cfg: &RunConfig, opts: &FixtureOptions) -> Vec<ActivationTrace> {
    let mut variants = vec!["identity".to_string()];
    variants.extend(cfg.suite.specs().unwrap_or_default().iter().map(|s| s.id()));
    if cfg.text.rephrase {
        variants.extend((1..=PHRASING_COUNT).map(|k| format!("phrasing:{k}")));
    }
    variants.extend(cfg.text.languages.iter().map(|c| format!("language:{c}")));
    let mut out = Vec::new();
    for sample in sample_ids {
        let mut base_rng = ChaCha8Rng::seed_from_u64(variant_seed(opts.seed, sample, ""));
        let base: Vec<Vec<f32>> = (0..opts.layers)
            .map(|_| (0..opts.dims).map(|_| base_rng.random_range(-1.0..1.0)).collect())
            .collect();
        for v in &variants {
            let mut rng = ChaCha8Rng::seed_from_u64(variant_seed(opts.seed, sample, v));
            let strength: f32 = if v == "identity" { 0.0 } else { rng.random_range(0.05..0.5) };
            let layers = base
                .iter()
                .enumerate()
                .map(|(l, layer)| {
                    let scale = strength * (1.0 + l as f32) / opts.layers as f32;
                    layer.iter().map(|x| x + scale * rng.random_range(-1.0..1.0f32)).collect()
                })
                .collect();
            out.push(ActivationTrace {
                sample_id: sample.clone(),
                variant_id: v.clone(),
                layers,
            });
        }
    }
    out
}

/// Write corpus, activation dump and `config.toml` into `dir`.
pub fn write_fixture(dir: &Path, base_url: &str, opts: &FixtureOptions) -> io::Result<Fixture> {
    fs::create_dir_all(dir)?;
    let corpus = write_corpus(dir, opts)?;
    let cfg = fixture_config(base_url, opts);
    let ids: Vec<String> = (0..opts.samples).map(|i| format!("s{i:03}")).collect();
    let dump = dir.join("activations.bin");
    write_dump(
        &dump,
        &synthetic_traces(&ids, &cfg, opts),
        serde_json::json!({"source": "synthetic", "layers": opts.layers}),
    )
    .map_err(io::Error::other)?;
    let config = dir.join("config.toml");
    fs::write(&config, toml::to_string(&cfg).map_err(io::Error::other)?)?;
    Ok(Fixture {
        dir: dir.to_path_buf(),
        corpus,
        config,
        dump,
    })
}
