#![allow(dead_code)]

use std::path::Path;

use vqastab::fixture::{fixture_config, write_corpus, FixtureOptions};
use vqastab::pipeline::RunConfig;

/// (raw reply, normalized answer)
pub const NORMALIZATION_PAIRS: [(&str, &str); 30] = [
    ("Yes.", "yes"),
    ("yes", "yes"),
    ("YES", "yes"),
    ("No.", "no"),
    ("no", "no"),
    ("  B  ", "b"),
    ("No,\n it isn't..", "no, it isn't"),
    (" yes . ", "yes"),
    ("", ""),
    ("   ", ""),
    ("...", ""),
    ("Yes...", "yes"),
    ("A.", "a"),
    ("Two", "two"),
    ("3.", "3"),
    ("3.5", "3.5"),
    ("\tYes\t", "yes"),
    ("Yes\n", "yes"),
    ("The answer is Yes.", "the answer is yes"),
    ("Red  and   blue", "red and blue"),
    ("left\r\n", "left"),
    ("Maybe.", "maybe"),
    ("I don't know.", "i don't know"),
    ("NO!", "no!"),
    ("Yes, it is.", "yes, it is"),
    ("e.g. a cat.", "e.g. a cat"),
    ("Über", "über"),
    ("Straße.", "straße"),
    ("⟨refusal⟩", "⟨refusal⟩"),
    ("Yes .\n\n", "yes"),
];

/// A fixture corpus of `samples` images under `dir` and a config pointing at
/// it with absolute paths, served by `base_url`.
pub fn small_config(dir: &Path, base_url: &str, samples: usize) -> RunConfig {
    let opts = FixtureOptions {
        samples,
        languages: vec![],
        ..Default::default()
    };
    let corpus = write_corpus(dir, &opts).expect("fixture corpus");
    let mut cfg = fixture_config(base_url, &opts);
    cfg.corpora[0].path = corpus;
    cfg.out_dir = dir.join("out");
    cfg.suite.rotation_sweep = false;
    cfg.text.tag_rotation = false;
    cfg.analysis.activation_dump = None;
    cfg
}

pub fn count_files(dir: &Path, ext: &str) -> usize {
    let Ok(entries) = std::fs::read_dir(dir) else {
        return 0;
    };
    entries
        .flatten()
        .map(|e| {
            let p = e.path();
            if p.is_dir() {
                count_files(&p, ext)
            } else {
                usize::from(p.extension().is_some_and(|x| x == ext))
            }
        })
        .sum()
}
