//! Build stability profiles from a small answer log and print the
//! instability table per perturbation family.

use std::collections::BTreeSet;

use vqastab::corpus::{Corpus, ImageSource, Sample};
use vqastab::modelio::{normalize_answer, AnswerRecord, ORIGINAL_QUESTION_ID};
use vqastab::stability::{build_profiles, conditioned_accuracy_table, instability_table, Grouping, Kind};

fn record(sample: &str, image: &str, text: &str, answer: &str) -> AnswerRecord {
    AnswerRecord {
        sample_id: sample.into(),
        image_variant_id: image.into(),
        text_variant_id: text.into(),
        raw_text: answer.into(),
        normalized: normalize_answer(answer),
        confidence: Some(0.9),
        latency_ms: 0,
        endpoint: "demo".into(),
        error: None,
    }
}

fn main() {
    let samples: Vec<Sample> = (0..4)
        .map(|i| Sample {
            id: format!("q{i}"),
            image: ImageSource::Embedded(Vec::new()),
            question: format!("Is object {i} red?"),
            answer: "yes".into(),
            categories: BTreeSet::from(["color".to_string()]),
            rotation_sensitive: Some(false),
        })
        .collect();
    let corpus = Corpus::new("demo", samples);

    let mut log = Vec::new();
    for i in 0..4 {
        let id = format!("q{i}");
        log.push(record(&id, "identity", ORIGINAL_QUESTION_ID, "Yes."));
        log.push(record(&id, "rotation:90", ORIGINAL_QUESTION_ID, if i == 0 { "No." } else { "Yes" }));
        log.push(record(&id, "rotation:180", ORIGINAL_QUESTION_ID, "yes"));
        log.push(record(&id, "shift:4", ORIGINAL_QUESTION_ID, if i < 2 { "no" } else { "yes" }));
        log.push(record(&id, "identity", "phrasing:1", "Yes"));
    }
    let profiles = build_profiles(&corpus, &log).expect("identity answers present");
    for p in &profiles {
        println!("{} H_V={:.3} stable_visual={} correct={}", p.sample_id, p.h_visual, p.stable_visual, p.correct);
    }

    let table = instability_table(&profiles, Grouping::Family, &Kind::VISUAL);
    print!("{}", table.to_csv());
    for row in conditioned_accuracy_table(&profiles) {
        println!("{:<9} accuracy={:?} prevalence={:.2}", row.condition, row.accuracy, row.prevalence);
    }
}
