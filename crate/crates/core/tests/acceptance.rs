//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use image::RgbImage;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vqastab::corpus::{load_corpus, Corpus, CorpusFormat, ImageSource, Sample};
use vqastab::fixture::{write_corpus, write_fixture, FixtureOptions};
use vqastab::modelio::mock::{MockConfig, MockServer};
use vqastab::modelio::{normalize_answer, AnswerRecord, DiskCache, ORIGINAL_QUESTION_ID};
use vqastab::pipeline::{cmd_perturb, run_all, Overrides, RunConfig};
use vqastab::predictor::{roc_auc, train_logistic, FeatureSet, FeatureVector, LogisticObjective, TrainConfig};
use vqastab::stability::{build_profiles, entropy_bits, instability_table, AnswerDistribution, Grouping, Kind};
use vqastab::stats::{
    activation_divergence, bin_column, conditional_mutual_information, discrete_entropy, divergence_curves, mcc,
    mutual_information, ActivationTrace, Binning, Triplet,
};
use vqastab::vperturb::{generate_suite, pad_or_crop, shift_cyclic, Family, STANDARD_OFFSETS};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap()
}

fn random_raster(rng: &mut ChaCha8Rng, w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |_, _| image::Rgb([rng.random(), rng.random(), rng.random()]))
}

fn perturbation_suite() -> Outcome {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let path = write_corpus(dir.path(), &FixtureOptions::default()).unwrap();
    let corpus = load_corpus(&path, CorpusFormat::Jsonl).unwrap();
    ensure!(corpus.samples.len() == 16, "fixture has {} samples", corpus.samples.len());
    let want = BTreeMap::from([
        (Family::Identity, 1),
        (Family::Shift, 8),
        (Family::PadCrop, 8),
        (Family::Scale, 1),
        (Family::ScalePad, 2),
        (Family::TextOverlay, 6),
        (Family::Rotation, 2),
    ]);
    for s in &corpus.samples {
        let set = generate_suite(&s.id, &s.image.decode().unwrap()).unwrap();
        ensure!(set.variants.len() == 28, "{}: {} variants", s.id, set.variants.len());
        ensure!(set.count_by_family() == want, "{}: {:?}", s.id, set.count_by_family());
    }

    let mut runner = TestRunner::new(Config {
        cases: 200,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&(17u32..72, 17u32..72, any::<u64>(), 0usize..8), |(w, h, seed, k)| {
            let img = random_raster(&mut ChaCha8Rng::seed_from_u64(seed), w, h);
            let n = STANDARD_OFFSETS[k];
            let shifted = shift_cyclic(&img, n).unwrap();
            prop_assert_eq!(shift_cyclic(&shifted, -n).unwrap(), img.clone());
            let pad = n.abs();
            let padded = pad_or_crop(&img, pad).unwrap();
            prop_assert_eq!(padded.dimensions(), (w + 2 * pad as u32, h + 2 * pad as u32));
            prop_assert_eq!(pad_or_crop(&padded, -pad).unwrap(), img);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("16×28 variants with expected family counts; 200 inverse-pair rasters; {elapsed:.1?}"))
}

fn brute_entropy(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let mut h = 0.0;
    for &c in counts {
        if c > 0 {
            let p = c as f64 / total as f64;
            h -= p * p.ln() / std::f64::consts::LN_2;
        }
    }
    h
}

fn entropy_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let k = rng.random_range(1..8);
        let counts: Vec<usize> = (0..k).map(|_| rng.random_range(1..40)).collect();
        let answers: Vec<String> = counts
            .iter()
            .enumerate()
            .flat_map(|(i, &c)| std::iter::repeat_n(format!("a{i}"), c))
            .collect();
        let dist = AnswerDistribution::from_answers(answers.iter().map(String::as_str)).unwrap();
        let err = (dist.entropy() - brute_entropy(&counts)).abs();
        worst = worst.max(err);
        ensure!(err <= 1e-12, "counts {counts:?}: error {err:e}");
        ensure!((entropy_bits(counts.iter().copied()) - brute_entropy(&counts)).abs() <= 1e-12, "entropy_bits {counts:?}");
    }
    let mut checked = 0;
    for len in 1..=5u32 {
        for code in 0..3usize.pow(len) {
            let seq: Vec<String> = (0..len).map(|i| ["a", "b", "c"][code / 3usize.pow(i) % 3].to_string()).collect();
            let dist = AnswerDistribution::from_answers(seq.iter().map(String::as_str)).unwrap();
            let single = seq.iter().collect::<BTreeSet<_>>().len() == 1;
            ensure!((dist.entropy() == 0.0) == single, "{seq:?}: H = {}", dist.entropy());
            checked += 1;
        }
    }
    Ok(format!("1000 random vectors, max error {worst:.1e}; {checked} exhaustive sequences"))
}

fn sample(id: &str) -> Sample {
    Sample {
        id: id.into(),
        image: ImageSource::Embedded(Vec::new()),
        question: format!("Question {id}?"),
        answer: "yes".into(),
        categories: BTreeSet::from(["c".to_string()]),
        rotation_sensitive: Some(false),
    }
}

fn record(sample: &str, image: &str, text: &str, answer: &str) -> AnswerRecord {
    AnswerRecord {
        sample_id: sample.into(),
        image_variant_id: image.into(),
        text_variant_id: text.into(),
        raw_text: answer.into(),
        normalized: normalize_answer(answer),
        confidence: None,
        latency_ms: 0,
        endpoint: "e".into(),
        error: None,
    }
}

fn instability_metrics() -> Outcome {
    let ids: Vec<String> = (0..10).map(|i| format!("s{i}")).collect();
    let corpus = Corpus::new("hand", ids.iter().map(|i| sample(i)).collect());
    let mut log = Vec::new();
    for (i, id) in ids.iter().enumerate() {
        log.push(record(id, "identity", ORIGINAL_QUESTION_ID, "yes"));
        log.push(record(id, "rotation:90", ORIGINAL_QUESTION_ID, if i < 2 { "no" } else { "yes" }));
        log.push(record(id, "rotation:180", ORIGINAL_QUESTION_ID, if i == 0 { "no" } else { "yes" }));
    }
    let profiles = build_profiles(&corpus, &log).unwrap();
    let table = instability_table(&profiles, Grouping::Family, &[Kind::Rotation]);
    let row = table.row("all", Kind::Rotation.label()).ok_or("no rotation row")?;
    ensure!(row.avg_instability == 0.15, "avg instability {}", row.avg_instability);
    ensure!(row.instability == 0.20, "instability {}", row.instability);

    let pool = [
        ("rotation:90", ORIGINAL_QUESTION_ID),
        ("rotation:180", ORIGINAL_QUESTION_ID),
        ("shift:4", ORIGINAL_QUESTION_ID),
        ("shift:-8", ORIGINAL_QUESTION_ID),
        ("pad_crop:8", ORIGINAL_QUESTION_ID),
        ("scale:50", ORIGINAL_QUESTION_ID),
        ("text_overlay:2", ORIGINAL_QUESTION_ID),
        ("identity", "phrasing:1"),
        ("identity", "phrasing:2"),
        ("identity", "language:fr"),
    ];
    let kinds: Vec<Kind> = Kind::VISUAL.iter().chain(Kind::TEXT.iter()).copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for trial in 0..100 {
        let n = rng.random_range(1..15);
        let ids: Vec<String> = (0..n).map(|i| format!("r{i}")).collect();
        let corpus = Corpus::new("random", ids.iter().map(|i| sample(i)).collect());
        let mut log = Vec::new();
        for id in &ids {
            let answer = |rng: &mut ChaCha8Rng| ["yes", "no", "maybe"][rng.random_range(0..3)];
            log.push(record(id, "identity", ORIGINAL_QUESTION_ID, answer(&mut rng)));
            for (img, txt) in pool {
                let a = if rng.random_bool(0.7) { log.last().map(|r: &AnswerRecord| r.raw_text.clone()).unwrap() } else { answer(&mut rng).to_string() };
                log.push(record(id, img, txt, &a));
            }
        }
        let profiles = build_profiles(&corpus, &log).unwrap();
        let table = instability_table(&profiles, Grouping::Family, &kinds);
        let any = table.row("all", "Any").ok_or("no Any row")?.instability;
        let max = table.rows.iter().filter(|r| r.kind != "Any").map(|r| r.instability).fold(0.0, f64::max);
        ensure!(any >= max, "trial {trial}: any {any} < family max {max}");
    }
    Ok("avg 0.15 and sample-level 0.20 exact; Any ≥ max family on 100 random logs".into())
}

fn mi_suite() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Vec<f64> = (0..5000).map(|_| rng.random::<f64>().powi(2)).collect();
    for binning in [Binning::EqualWidth, Binning::EqualFrequency] {
        let b = bin_column(&x, 10, binning).unwrap();
        let h = discrete_entropy(&b.index);
        let i = vqastab::stats::mutual_information_with(&x, &x, 10, binning).unwrap();
        ensure!((i - h).abs() <= 1e-9, "{binning:?}: MI(X,X) {i} vs H {h}");
    }

    let n = 10_000;
    let a: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let b: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let independent = mutual_information(&a, &b, 10).unwrap();
    ensure!(independent < 0.02, "independent MI {independent}");

    // Confidence takes ten levels; x and y are its noisy copies with independent noise.
    let n = 20_000;
    let level: Vec<f64> = (0..n).map(|_| rng.random_range(0..10) as f64 / 10.0).collect();
    let explained_x: Vec<f64> = level.iter().map(|c| c + 0.05 * rng.random::<f64>()).collect();
    let explained_y: Vec<f64> = level.iter().map(|c| c + 0.05 * rng.random::<f64>()).collect();
    // x and y depend on each other but not on confidence.
    let dep_x: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let dep_y: Vec<f64> = dep_x.iter().map(|v| v + 0.02 * rng.random::<f64>()).collect();
    let unrelated: Vec<f64> = (0..n).map(|_| rng.random()).collect();

    let mut explained = Vec::new();
    let mut independent_c = Vec::new();
    for bins in [8, 10, 12] {
        let r = conditional_mutual_information(&explained_x, &explained_y, &level, bins, Binning::EqualWidth).unwrap();
        explained.push(r.ratio.ok_or("zero raw MI")?);
        let r = conditional_mutual_information(&dep_x, &dep_y, &unrelated, bins, Binning::EqualWidth).unwrap();
        independent_c.push(r.ratio.ok_or("zero raw MI")?);
    }
    ensure!(explained[1] < 0.05, "explained ratio {}", explained[1]);
    ensure!((independent_c[1] - 1.0).abs() <= 0.05, "independent-confidence ratio {}", independent_c[1]);
    for (name, r) in [("explained", &explained), ("independent", &independent_c)] {
        let spread = r.iter().cloned().fold(f64::MIN, f64::max) - r.iter().cloned().fold(f64::MAX, f64::min);
        ensure!(spread < 0.05, "{name} ratios vary by {spread} over bins 8/10/12: {r:?}");
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!(
        "independent {independent:.4} bits; ratios explained {explained:.3?}, independent {independent_c:.3?}; {elapsed:.1?}"
    ))
}

fn mcc_oracle(a: &[bool], b: &[bool]) -> Option<f64> {
    let count = |x: bool, y: bool| a.iter().zip(b).filter(|(p, q)| **p == x && **q == y).count() as i64;
    let (tp, tn, fp, fneg) = (count(true, true), count(false, false), count(false, true), count(true, false));
    let den = (tp + fp) * (tp + fneg) * (tn + fp) * (tn + fneg);
    if den == 0 {
        return None;
    }
    Some(((tp * tn - fp * fneg) as f64 / (den as f64).sqrt()).clamp(-1.0, 1.0))
}

fn mcc_criterion() -> Outcome {
    let bits = |v: u32| -> Vec<bool> { (0..4).map(|i| v >> i & 1 == 1).collect() };
    for x in 0..16 {
        for y in 0..16 {
            let (a, b) = (bits(x), bits(y));
            let got = mcc(&a, &b).unwrap();
            ensure!(got == mcc_oracle(&a, &b), "{a:?} {b:?}: {got:?}");
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..500 {
        let p = rng.random::<f64>();
        let a: Vec<bool> = (0..100).map(|_| rng.random_bool(p)).collect();
        let b: Vec<bool> = a.iter().map(|&v| if rng.random_bool(0.3) { !v } else { v }).collect();
        let got = mcc(&a, &b).unwrap();
        ensure!(got == mcc_oracle(&a, &b), "random pair: {got:?} vs {:?}", mcc_oracle(&a, &b));
    }
    Ok("256 exhaustive pairs and 500 random pairs match exactly".into())
}

fn held_out_auc(features: &FeatureSet, labels: &[bool], cfg: &TrainConfig) -> Result<f64, String> {
    let model = train_logistic(features, labels, cfg).map_err(|e| e.to_string())?;
    let index: BTreeMap<&str, usize> =
        features.vectors.iter().enumerate().map(|(i, v)| (v.sample_id.as_str(), i)).collect();
    let test: Vec<usize> = model.test_ids.iter().map(|id| index[id.as_str()]).collect();
    let scores: Vec<f64> = test.iter().map(|&i| model.predict_proba(&features.vectors[i].features)).collect();
    let y: Vec<bool> = test.iter().map(|&i| labels[i]).collect();
    roc_auc(&scores, &y).map_err(|e| e.to_string())?.ok_or_else(|| "single-class test split".into())
}

fn feature_set(rows: Vec<Vec<f64>>) -> FeatureSet {
    let d = rows[0].len();
    FeatureSet {
        names: (0..d).map(|j| format!("f{j}")).collect(),
        vectors: rows
            .into_iter()
            .enumerate()
            .map(|(i, features)| FeatureVector {
                sample_id: format!("s{i:05}"),
                features,
            })
            .collect(),
    }
}

fn logistic_criterion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(5..60);
        let d = rng.random_range(1..6);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let y: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect();
        let theta: Vec<f64> = (0..=d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let obj = LogisticObjective { x: &x, y: &y, l2: 1e-3 };
        let g = obj.gradient(&theta);
        let h = 1e-5;
        let fd: Vec<f64> = (0..=d)
            .map(|j| {
                let mut plus = theta.clone();
                let mut minus = theta.clone();
                plus[j] += h;
                minus[j] -= h;
                (obj.loss(&plus) - obj.loss(&minus)) / (2.0 * h)
            })
            .collect();
        let diff = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = g.iter().map(|a| a * a).sum::<f64>().sqrt().max(fd.iter().map(|a| a * a).sum::<f64>().sqrt()).max(1e-12);
        let rel = diff / scale;
        worst = worst.max(rel);
        ensure!(rel <= 1e-6, "relative gradient error {rel:e}");
    }

    let rows: Vec<Vec<f64>> = (0..200)
        .map(|i| {
            let side = if i % 2 == 0 { 1.0 } else { -1.0 };
            vec![side * rng.random_range(0.5..2.0), rng.random_range(-1.0..1.0)]
        })
        .collect();
    let labels: Vec<bool> = rows.iter().map(|r| r[0] > 0.0).collect();
    let cfg = TrainConfig {
        seed: 1,
        ..Default::default()
    };
    let separable = held_out_auc(&feature_set(rows), &labels, &cfg)?;
    ensure!(separable == 1.0, "separable AUC {separable}");

    let rows: Vec<Vec<f64>> = (0..4000).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let labels: Vec<bool> = (0..4000).map(|_| rng.random_bool(0.5)).collect();
    let random = held_out_auc(&feature_set(rows), &labels, &cfg)?;
    ensure!((0.45..=0.55).contains(&random), "random-label AUC {random}");
    Ok(format!("worst gradient error {worst:.1e}; separable AUC {separable}; random-label AUC {random:.3}"))
}

fn trace(variant: &str, layers: Vec<Vec<f32>>) -> ActivationTrace {
    ActivationTrace {
        sample_id: "s".into(),
        variant_id: variant.into(),
        layers,
    }
}

fn divergence_criterion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut layers = |dims: usize| -> Vec<Vec<f32>> { (0..4).map(|_| (0..dims).map(|_| rng.random_range(-3.0..3.0)).collect()).collect() };
    for _ in 0..100 {
        let (o, s, f) = (trace("o", layers(37)), trace("s", layers(37)), trace("f", layers(37)));
        let got = activation_divergence(&o, &s, &f).map_err(|e| e.to_string())?;
        for (l, (dp, dq)) in got.iter().enumerate() {
            for (d, other) in [(dp, &s), (dq, &f)] {
                let mut sq = 0.0f64;
                for k in (0..o.layers[l].len()).rev() {
                    let diff = f64::from(o.layers[l][k]) - f64::from(other.layers[l][k]);
                    sq += diff * diff;
                }
                let oracle = sq.sqrt();
                ensure!((d - oracle).abs() <= 1e-6 * oracle.max(1e-12), "layer {l}: {d} vs {oracle}");
            }
        }
    }

    let mut owned = Vec::new();
    for _ in 0..10 {
        let base = layers(16);
        let offset = layers(16);
        let add = |k: f32| -> Vec<Vec<f32>> {
            base.iter().zip(&offset).map(|(b, o)| b.iter().zip(o).map(|(x, d)| x + k * d).collect()).collect()
        };
        owned.push((trace("o", base.clone()), trace("s", add(1.0)), trace("f", add(2.0))));
    }
    let triplets: Vec<Triplet<'_>> = owned
        .iter()
        .map(|(o, s, f)| Triplet {
            original: o,
            stable: s,
            flipped: f,
        })
        .collect();
    let curve = divergence_curves(&triplets).map_err(|e| e.to_string())?;
    for p in &curve.layers {
        ensure!(p.mean_difference > 0.0, "layer {}: mean difference {}", p.layer, p.mean_difference);
    }
    Ok("100 random 4-layer triplets within 1e-6; planted curve positive at all layers".into())
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap().flatten() {
            let p = e.path();
            if p.file_name().is_some_and(|n| n == "cache") {
                continue;
            }
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn without_latency(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("latency_ms");
            v
        })
        .collect()
}

const REPORT_ARTIFACTS: [&str; 20] = [
    "analyze/table1_visual_instability.csv",
    "analyze/table2_text_instability.csv",
    "analyze/table3_dataset_instability.csv",
    "analyze/table4_overlay_bias.csv",
    "analyze/table5_matthews.csv",
    "analyze/table6_conditioned_accuracy.csv",
    "analyze/table7_pearson.csv",
    "analyze/mi_report.json",
    "analyze/fig2_entropy_visual.csv",
    "analyze/fig3_entropy_text.csv",
    "analyze/fig5_divergence.csv",
    "analyze/fig6_rotation_sweep.csv",
    "predict/pr_curves.csv",
    "predict/recall_at_precision.csv",
    "report/index.html",
    "report/fig2_entropy_visual.svg",
    "report/fig3_entropy_text.svg",
    "report/fig5_divergence.svg",
    "report/fig6_rotation_sweep.svg",
    "report/fig7_pr_curves.svg",
];

fn end_to_end(rt: &tokio::runtime::Runtime) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, elapsed) = rt.block_on(async {
        let server = MockServer::start(MockConfig::default()).await.unwrap();
        let fx = write_fixture(&dir.path().join("fixture"), &server.base_url(), &FixtureOptions::default()).unwrap();
        let cfg = RunConfig::load(&fx.config, &Overrides::default()).unwrap();
        let started = Instant::now();
        run_all(&cfg).await.map_err(|e| e.to_string())?;
        let elapsed = started.elapsed();

        let first = tree(&cfg.out_dir);
        let rerun = run_all(&cfg).await.map_err(|e| e.to_string())?;
        for s in &rerun {
            ensure!(s.files_written == 0, "rerun rewrote {} files in {}", s.files_written, s.stage);
        }
        ensure!(tree(&cfg.out_dir) == first, "rerun changed outputs");

        let mut fresh = cfg.clone();
        fresh.out_dir = dir.path().join("fresh");
        run_all(&fresh).await.map_err(|e| e.to_string())?;
        let second = tree(&fresh.out_dir);
        for stage in ["analyze", "predict", "report"] {
            let pick = |t: &BTreeMap<PathBuf, Vec<u8>>| -> Vec<(PathBuf, Vec<u8>)> {
                t.iter().filter(|(p, _)| p.starts_with(stage)).map(|(p, b)| (p.clone(), b.clone())).collect()
            };
            ensure!(pick(&first) == pick(&second), "{stage} differs between independent runs");
        }
        Ok::<_, String>((cfg, elapsed))
    })?;
    ensure!(elapsed < Duration::from_secs(60), "pipeline took {elapsed:?}");
    for a in REPORT_ARTIFACTS {
        ensure!(cfg.out_dir.join(a).exists(), "missing artifact {a}");
    }
    let resume = kill_and_resume(rt, dir.path(), &cfg)?;
    Ok(format!("pipeline {elapsed:.1?}; {} artifacts; rerun and fresh run byte-identical; {resume}", REPORT_ARTIFACTS.len()))
}

fn kill_and_resume(rt: &tokio::runtime::Runtime, root: &Path, reference: &RunConfig) -> Outcome {
    rt.block_on(async {
        let server = MockServer::start(MockConfig {
            delay_ms: 15,
            ..Default::default()
        })
        .await
        .unwrap();
        let fx = write_fixture(&root.join("resume"), &server.base_url(), &FixtureOptions::default()).unwrap();
        let cfg = RunConfig::load(&fx.config, &Overrides::default()).unwrap();
        cmd_perturb(&cfg).await.map_err(|e| e.to_string())?;
        let manifest_rows = ["visual_manifest.jsonl", "text_manifest.jsonl"]
            .iter()
            .map(|f| std::fs::read_to_string(cfg.stage_dir("perturb").join(f)).unwrap().lines().count())
            .sum::<usize>();
        let expected = manifest_rows * cfg.endpoints().count();

        let config = fx.config.clone();
        let spawn = move || {
            Command::new(env!("CARGO_BIN_EXE_vqastab"))
                .args(["run", "--config"])
                .arg(&config)
                .stdout(Stdio::null())
                .stderr(Stdio::null())
                .spawn()
                .unwrap()
        };
        let mut child = spawn();
        let deadline = Instant::now() + Duration::from_secs(60);
        while server.stats().vqa_requests() < expected / 2 {
            ensure!(Instant::now() < deadline, "run never reached half way");
            ensure!(child.try_wait().unwrap().is_none(), "run finished before it could be killed");
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
        child.kill().unwrap();
        child.wait().unwrap();
        let cache = DiskCache::new(cfg.out_dir.join("cache").join("answers")).unwrap();
        let cached = cache.len();
        let before = server.stats().vqa_requests();

        let status = tokio::task::spawn_blocking(move || spawn().wait().unwrap()).await.unwrap();
        ensure!(status.success(), "resumed run failed: {status}");
        let issued = server.stats().vqa_requests() - before;
        let total = cache.len();
        ensure!(issued == total - cached, "resume issued {issued} requests, {} were missing", total - cached);
        ensure!(cached > 0 && issued < total, "nothing was resumed: cached {cached}, issued {issued}");
        for e in cfg.endpoints() {
            let name = format!("{}.jsonl", e.name);
            ensure!(
                without_latency(&cfg.stage_dir("run").join(&name)) == without_latency(&reference.stage_dir("run").join(&name)),
                "resumed log {name} differs from an uninterrupted run"
            );
        }
        Ok(format!("killed after {cached}/{total} cached answers, resume issued exactly {issued}"))
    })
}

fn normalization() -> Outcome {
    for (raw, want) in common::NORMALIZATION_PAIRS {
        let got = normalize_answer(raw);
        ensure!(got == want, "{raw:?} -> {got:?}, expected {want:?}");
    }
    Ok(format!("{} pairs", common::NORMALIZATION_PAIRS.len()))
}

fn main() {
    let rt = runtime();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("perturbation suite", Box::new(perturbation_suite)),
        ("entropy oracle", Box::new(entropy_oracle)),
        ("instability metrics", Box::new(instability_metrics)),
        ("mutual information", Box::new(mi_suite)),
        ("matthews correlation", Box::new(mcc_criterion)),
        ("logistic regression", Box::new(logistic_criterion)),
        ("activation divergence", Box::new(divergence_criterion)),
        ("end-to-end pipeline", Box::new(|| end_to_end(&rt))),
        ("answer normalization", Box::new(normalization)),
    ];
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, check) in &criteria {
        if filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("PASS  {name:<22} {detail} [{:.1?}]", started.elapsed()),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name:<22} {why} [{:.1?}]", started.elapsed());
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
