//! Corpus ingestion, vocabulary, tf-idf statistics and the tone lexicon.

mod lexicon;
mod poem;
mod tfidf;
mod vocab;

pub use lexicon::{load_tone_lexicon, LexiconLoad, Tone, ToneEntry, ToneLexicon};
pub use poem::{Form, Poem, Style};
pub use tfidf::{
    build_table, extract_keyword, line_weights, min_max, tfidf_line, tfidf_line_in, TfIdfTable,
    TfScope,
};
pub use vocab::{Vocabulary, BOS, EOS, PAD, RESERVED, UNK};

use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

/// On-disk corpus layouts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CorpusFormat {
    /// One poem per line: `L1|L2|L3|L4[\tstyle[\tkeyword]]`, `#` comments.
    #[default]
    Pipe,
    /// JSON lines with `lines`, optional `style` and `keyword` (generator output).
    Jsonl,
}

/// A poem as text, before vocabulary assignment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawPoem {
    pub form: Form,
    pub lines: Vec<String>,
    pub style: Option<Style>,
    pub keyword: Option<String>,
}

impl RawPoem {
    pub fn encode(&self, vocab: &Vocabulary) -> Poem {
        Poem {
            form: self.form,
            lines: self.lines.iter().map(|l| vocab.encode(l)).collect(),
            style: self.style,
            keyword: self.keyword.as_deref().map(|k| vocab.encode(k)),
        }
    }
}

/// Why a record was skipped. `poem` and `line` are 0-based; `row` is the
/// 1-based line number in the file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rejection {
    pub poem: usize,
    pub line: usize,
    pub row: usize,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub train: Vec<Poem>,
    pub validation: Vec<Poem>,
    pub vocab: Vocabulary,
    pub rejected: Vec<Rejection>,
}

/// Parses one poem from the pipe format. `index` is used in error reports.
pub fn parse_poem(record: &str, index: usize) -> Result<RawPoem> {
    let mut cols = record.split('\t');
    let body = cols.next().unwrap_or("").trim();
    let style = match cols.next().map(str::trim) {
        None | Some("") => None,
        Some(s) => Some(s.parse::<Style>().map_err(|e| Error::MalformedPoem {
            poem: index,
            line: 0,
            reason: e.to_string(),
        })?),
    };
    let keyword = cols
        .next()
        .map(str::trim)
        .filter(|k| !k.is_empty())
        .map(str::to_owned);
    raw_from_lines(body.split('|').map(str::trim).map(str::to_owned).collect(), style, keyword, index)
}

fn raw_from_lines(
    lines: Vec<String>,
    style: Option<Style>,
    keyword: Option<String>,
    index: usize,
) -> Result<RawPoem> {
    let malformed = |line: usize, reason: String| Error::MalformedPoem {
        poem: index,
        line,
        reason,
    };
    let first_len = lines.first().map_or(0, |l| l.chars().count());
    let form = Form::from_line_len(first_len)
        .ok_or_else(|| malformed(0, format!("line has {first_len} characters, expected 5 or 7")))?;
    for (i, l) in lines.iter().enumerate().take(Poem::LINES) {
        let n = l.chars().count();
        if n != form.line_len() {
            return Err(malformed(
                i,
                format!("line has {n} characters, {form} needs {}", form.line_len()),
            ));
        }
    }
    if lines.len() != Poem::LINES {
        return Err(malformed(
            lines.len().min(Poem::LINES),
            format!("expected 4 lines, found {}", lines.len()),
        ));
    }
    Ok(RawPoem {
        form,
        lines,
        style,
        keyword,
    })
}

#[derive(Deserialize)]
struct JsonPoem {
    lines: Vec<String>,
    #[serde(default)]
    style: Option<String>,
    #[serde(default)]
    keyword: Option<String>,
}

/// Parses corpus text into poems, collecting rejections instead of failing.
pub fn parse_corpus(text: &str, format: CorpusFormat) -> (Vec<RawPoem>, Vec<Rejection>) {
    let mut poems = Vec::new();
    let mut rejected = Vec::new();
    let mut index = 0;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed = match format {
            CorpusFormat::Pipe => parse_poem(line, index),
            CorpusFormat::Jsonl => serde_json::from_str::<JsonPoem>(line)
                .map_err(|e| Error::MalformedPoem {
                    poem: index,
                    line: 0,
                    reason: e.to_string(),
                })
                .and_then(|j| {
                    let style = match j.style.as_deref() {
                        None | Some("") => None,
                        Some(s) => Some(s.parse::<Style>()?),
                    };
                    raw_from_lines(j.lines, style, j.keyword.filter(|k| !k.is_empty()), index)
                }),
        };
        match parsed {
            Ok(p) => poems.push(p),
            Err(Error::MalformedPoem { poem, line, reason }) => rejected.push(Rejection {
                poem,
                line,
                row: n + 1,
                reason,
            }),
            Err(e) => rejected.push(Rejection {
                poem: index,
                line: 0,
                row: n + 1,
                reason: e.to_string(),
            }),
        }
        index += 1;
    }
    (poems, rejected)
}

/// Builds the vocabulary from `train` only.
pub fn build_vocabulary(train: &[RawPoem]) -> Vocabulary {
    let mut counts: HashMap<char, usize> = HashMap::new();
    for p in train {
        for l in &p.lines {
            for c in l.chars() {
                *counts.entry(c).or_default() += 1;
            }
        }
    }
    Vocabulary::from_counts(&counts)
}

/// Splits off the last `validation` valid poems, builds the vocabulary over
/// the rest and encodes everything.
pub fn corpus_from_text(text: &str, format: CorpusFormat, validation: usize) -> Result<Corpus> {
    let (raw, rejected) = parse_corpus(text, format);
    if raw.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let n_val = validation.min(raw.len() - 1);
    let (train_raw, val_raw) = raw.split_at(raw.len() - n_val);
    let vocab = build_vocabulary(train_raw);
    Ok(Corpus {
        train: train_raw.iter().map(|p| p.encode(&vocab)).collect(),
        validation: val_raw.iter().map(|p| p.encode(&vocab)).collect(),
        vocab,
        rejected,
    })
}

pub fn load_corpus(path: impl AsRef<Path>, format: CorpusFormat, validation: usize) -> Result<Corpus> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    corpus_from_text(&text, format, validation)
}

/// Reads poems as text without building a vocabulary (references, style corpora).
pub fn load_raw_poems(path: impl AsRef<Path>, format: CorpusFormat) -> Result<(Vec<RawPoem>, Vec<Rejection>)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_corpus(&text, format))
}
