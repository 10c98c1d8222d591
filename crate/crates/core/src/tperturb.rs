//! Textual variants of a question: rephrasings and translations produced by
//! a text-generation endpoint, with reply parsing and a variant cache.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::modelio::{DiskCache, TextGenerator};

/// Rephrasings requested per question.
pub const PHRASING_COUNT: usize = 10;

const ATTEMPTS: usize = 3;

pub const REPHRASE_TEMPLATE: &str = include_str!("../prompts/rephrase_v1.txt");
pub const TRANSLATE_TEMPLATE: &str = include_str!("../prompts/translate_v1.txt");

const RETRY_NOTE: &str =
    "\nYour previous reply could not be used. Follow the requested output format exactly.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextKind {
    Phrasing,
    Language,
}

impl TextKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TextKind::Phrasing => "phrasing",
            TextKind::Language => "language",
        }
    }

    /// Variant id of the untouched question within a set of this kind.
    pub fn original_id(self) -> String {
        format!("{}:0", self.as_str())
    }
}

/// A target language for translation variants.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Language {
    pub code: String,
    pub name: String,
}

const DEFAULT_LANGUAGE_TABLE: [(&str, &str); 11] = [
    ("ar", "Arabic"),
    ("zh", "Chinese"),
    ("fr", "French"),
    ("de", "German"),
    ("he", "Hebrew"),
    ("hi", "Hindi"),
    ("ja", "Japanese"),
    ("ko", "Korean"),
    ("pt", "Portuguese"),
    ("ru", "Russian"),
    ("es", "Spanish"),
];

pub fn default_languages() -> Vec<Language> {
    DEFAULT_LANGUAGE_TABLE
        .iter()
        .map(|(c, n)| Language {
            code: c.to_string(),
            name: n.to_string(),
        })
        .collect()
}

/// Look up a language by its code in the built-in table.
pub fn language_by_code(code: &str) -> Option<Language> {
    DEFAULT_LANGUAGE_TABLE
        .iter()
        .find(|(c, _)| *c == code)
        .map(|(c, n)| Language {
            code: c.to_string(),
            name: n.to_string(),
        })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextVariant {
    pub variant_id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
}

/// Original question first, then its generated variants.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextVariantSet {
    pub sample_id: String,
    pub kind: TextKind,
    pub variants: Vec<TextVariant>,
    /// Languages that could not be produced.
    #[serde(default)]
    pub missing: Vec<String>,
}

impl TextVariantSet {
    pub fn manifest_entries(&self) -> Vec<TextManifestEntry> {
        self.variants
            .iter()
            .map(|v| TextManifestEntry {
                sample_id: self.sample_id.clone(),
                kind: self.kind,
                variant_id: v.variant_id.clone(),
                question: v.question.clone(),
                language: v.language.clone(),
            })
            .collect()
    }
}

/// One line of the text-variant manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextManifestEntry {
    pub sample_id: String,
    pub kind: TextKind,
    pub variant_id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ListParseError {
    #[error("no bracketed list of quoted strings found")]
    NoList,
    #[error("unbalanced quotes inside list")]
    UnbalancedQuotes,
}

#[derive(Debug, Error)]
pub enum TextPerturbError {
    #[error("reply could not be parsed after {ATTEMPTS} attempts: {0}")]
    Unparseable(String),
    #[error("only {got} distinct variants after {ATTEMPTS} attempts, need {need}")]
    TooFewVariants { got: usize, need: usize },
}

enum Attempt {
    Parsed(Vec<String>),
    Failed(ListParseError),
}

fn parse_list_at(chars: &[char], start: usize) -> Attempt {
    let mut i = start + 1;
    let mut out = Vec::new();
    let skip_ws = |i: &mut usize| {
        while *i < chars.len() && chars[*i].is_whitespace() {
            *i += 1;
        }
    };
    loop {
        skip_ws(&mut i);
        match chars.get(i) {
            Some(']') => return Attempt::Parsed(out),
            Some(&q) if q == '"' || q == '\'' => {
                i += 1;
                let mut s = String::new();
                loop {
                    match chars.get(i) {
                        None => return Attempt::Failed(ListParseError::UnbalancedQuotes),
                        Some(&c) if c == q => {
                            i += 1;
                            break;
                        }
                        Some('\\') => {
                            let Some(&next) = chars.get(i + 1) else {
                                return Attempt::Failed(ListParseError::UnbalancedQuotes);
                            };
                            i += 2;
                            match next {
                                'n' => s.push('\n'),
                                't' => s.push('\t'),
                                'r' => s.push('\r'),
                                '\\' | '\'' | '"' => s.push(next),
                                'u' => {
                                    let hex: String = chars[i..chars.len().min(i + 4)].iter().collect();
                                    match u32::from_str_radix(&hex, 16).ok().and_then(char::from_u32) {
                                        Some(c) if hex.len() == 4 => {
                                            s.push(c);
                                            i += 4;
                                        }
                                        _ => s.push_str("\\u"),
                                    }
                                }
                                other => {
                                    s.push('\\');
                                    s.push(other);
                                }
                            }
                        }
                        Some(&c) => {
                            s.push(c);
                            i += 1;
                        }
                    }
                }
                out.push(s);
                skip_ws(&mut i);
                match chars.get(i) {
                    Some(',') => i += 1,
                    Some(']') => return Attempt::Parsed(out),
                    _ => return Attempt::Failed(ListParseError::NoList),
                }
            }
            _ => return Attempt::Failed(ListParseError::NoList),
        }
    }
}

/// Extract the first bracketed list of quoted strings from a free-form
/// reply, e.g. `Sure! ["a?", 'b?']`. Handles both quote styles and
/// backslash escapes.
pub fn parse_string_list(reply: &str) -> Result<Vec<String>, ListParseError> {
    let chars: Vec<char> = reply.chars().collect();
    let mut err = ListParseError::NoList;
    for (i, &c) in chars.iter().enumerate() {
        if c != '[' {
            continue;
        }
        match parse_list_at(&chars, i) {
            Attempt::Parsed(list) => return Ok(list),
            Attempt::Failed(ListParseError::UnbalancedQuotes) => err = ListParseError::UnbalancedQuotes,
            Attempt::Failed(_) => {}
        }
    }
    Err(err)
}

/// Case- and whitespace-insensitive form used for distinctness checks.
pub fn distinct_key(question: &str) -> String {
    question
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn sha_hex(s: &str) -> String {
    hex::encode(Sha256::digest(s.as_bytes()))
}

fn cache_key(question: &str, kind: &str, template: &str, generator: &str) -> String {
    DiskCache::key(&[
        b"text-variants",
        sha_hex(question).as_bytes(),
        kind.as_bytes(),
        sha_hex(template).as_bytes(),
        generator.as_bytes(),
    ])
}

fn with_retry_note(prompt: &str, attempt: usize) -> String {
    if attempt == 0 {
        prompt.to_string()
    } else {
        format!("{prompt}{RETRY_NOTE}")
    }
}

/// Ask `generator` for ten semantically equivalent rephrasings.
pub async fn rephrase<G: TextGenerator>(
    sample_id: &str,
    question: &str,
    generator: &G,
    cache: Option<&DiskCache>,
) -> Result<TextVariantSet, TextPerturbError> {
    let key = cache_key(question, "phrasing", REPHRASE_TEMPLATE, generator.id());
    let phrasings = match cache.and_then(|c| c.get::<Vec<String>>(&key)) {
        Some(hit) => hit,
        None => {
            let list = generate_phrasings(question, generator).await?;
            if let Some(c) = cache {
                if let Err(e) = c.put(&key, &list) {
                    tracing::warn!(error = %e, "failed to cache phrasings");
                }
            }
            list
        }
    };
    let mut variants = vec![TextVariant {
        variant_id: TextKind::Phrasing.original_id(),
        question: question.to_string(),
        language: None,
    }];
    variants.extend(phrasings.into_iter().enumerate().map(|(k, q)| TextVariant {
        variant_id: format!("phrasing:{}", k + 1),
        question: q,
        language: None,
    }));
    Ok(TextVariantSet {
        sample_id: sample_id.to_string(),
        kind: TextKind::Phrasing,
        variants,
        missing: Vec::new(),
    })
}

async fn generate_phrasings<G: TextGenerator>(
    question: &str,
    generator: &G,
) -> Result<Vec<String>, TextPerturbError> {
    let prompt = REPHRASE_TEMPLATE.trim_end().replace("QUESTION", question);
    let mut best = 0;
    let mut parse_error = None;
    for attempt in 0..ATTEMPTS {
        let reply = match generator.generate(&with_retry_note(&prompt, attempt)).await {
            Ok(r) => r,
            Err(e) => {
                parse_error = Some(e.to_string());
                continue;
            }
        };
        let list = match parse_string_list(&reply) {
            Ok(l) => l,
            Err(e) => {
                parse_error = Some(e.to_string());
                continue;
            }
        };
        let mut seen: HashSet<String> = HashSet::from([distinct_key(question)]);
        let distinct: Vec<String> = list
            .into_iter()
            .map(|q| q.trim().to_string())
            .filter(|q| !q.is_empty() && seen.insert(distinct_key(q)))
            .collect();
        if distinct.len() >= PHRASING_COUNT {
            return Ok(distinct.into_iter().take(PHRASING_COUNT).collect());
        }
        best = best.max(distinct.len());
        parse_error = None;
    }
    match parse_error {
        Some(e) if best == 0 => Err(TextPerturbError::Unparseable(e)),
        _ => Err(TextPerturbError::TooFewVariants {
            got: best,
            need: PHRASING_COUNT,
        }),
    }
}

async fn translate_once<G: TextGenerator>(prompt: &str, generator: &G) -> Option<String> {
    for attempt in 0..ATTEMPTS {
        let Ok(reply) = generator.generate(&with_retry_note(prompt, attempt)).await else {
            continue;
        };
        if let Ok(list) = parse_string_list(&reply) {
            if let Some(first) = list.into_iter().map(|s| s.trim().to_string()).find(|s| !s.is_empty()) {
                return Some(first);
            }
        }
    }
    None
}

/// Translate `question` into each language, asking (in that language) for
/// an English answer. A language that fails is listed in `missing`.
pub async fn translate<G: TextGenerator>(
    sample_id: &str,
    question: &str,
    languages: &[Language],
    generator: &G,
    cache: Option<&DiskCache>,
) -> TextVariantSet {
    let mut variants = vec![TextVariant {
        variant_id: TextKind::Language.original_id(),
        question: question.to_string(),
        language: None,
    }];
    let mut missing = Vec::new();
    let mut seen: HashSet<String> = HashSet::from([distinct_key(question)]);

    for lang in languages {
        let key = cache_key(
            question,
            &format!("language:{}", lang.code),
            TRANSLATE_TEMPLATE,
            generator.id(),
        );
        let cached = cache.and_then(|c| c.get::<String>(&key));
        let translated = match cached {
            Some(hit) => Some(hit),
            None => {
                let prompt = TRANSLATE_TEMPLATE
                    .trim_end()
                    .replace("LANGUAGE", &lang.name)
                    .replace("QUESTION", question);
                let mut got = translate_once(&prompt, generator).await;
                if got.as_ref().is_some_and(|t| seen.contains(&distinct_key(t))) {
                    let retry = format!(
                        "{prompt}\nYour previous translation duplicated another variant; produce a different wording."
                    );
                    if let Some(second) = translate_once(&retry, generator).await {
                        got = Some(second);
                    }
                    if got.as_ref().is_some_and(|t| seen.contains(&distinct_key(t))) {
                        tracing::warn!(sample_id, language = %lang.code, "translation duplicates another variant; kept");
                    }
                }
                if let (Some(c), Some(t)) = (cache, &got) {
                    if let Err(e) = c.put(&key, t) {
                        tracing::warn!(error = %e, "failed to cache translation");
                    }
                }
                got
            }
        };
        match translated {
            Some(t) => {
                seen.insert(distinct_key(&t));
                variants.push(TextVariant {
                    variant_id: format!("language:{}", lang.code),
                    question: t,
                    language: Some(lang.code.clone()),
                });
            }
            None => {
                tracing::warn!(sample_id, language = %lang.code, "translation failed; language missing");
                missing.push(lang.code.clone());
            }
        }
    }
    TextVariantSet {
        sample_id: sample_id.to_string(),
        kind: TextKind::Language,
        variants,
        missing,
    }
}

impl fmt::Display for TextKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
