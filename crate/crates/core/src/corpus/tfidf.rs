use std::collections::HashMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::poem::Poem;
use super::vocab::Vocabulary;
use crate::error::Error;

/// Where term frequency is counted when weighting a line.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TfScope {
    #[default]
    Line,
    Poem,
}

impl FromStr for TfScope {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "line" => Ok(TfScope::Line),
            "poem" => Ok(TfScope::Poem),
            _ => Err(Error::Config(format!("tf_scope must be line or poem, got {s:?}"))),
        }
    }
}

/// Document frequencies over the training poems (one poem = one document).
///
/// `idf(c) = ln(documents / df(c))`; ids with no document frequency
/// (reserved ids, `UNK`) use `unk_idf`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TfIdfTable {
    documents: usize,
    df: Vec<u32>,
    unk_idf: f64,
}

impl TfIdfTable {
    pub fn build(poems: &[Poem], vocab_len: usize) -> Self {
        let mut df = vec![0u32; vocab_len];
        let mut seen = vec![usize::MAX; vocab_len];
        for (d, p) in poems.iter().enumerate() {
            for c in p.chars() {
                let c = c as usize;
                if c < vocab_len && seen[c] != d {
                    seen[c] = d;
                    df[c] += 1;
                }
            }
        }
        let documents = poems.len();
        Self {
            documents,
            df,
            unk_idf: (documents.max(1) as f64).ln(),
        }
    }

    pub fn from_parts(documents: usize, df: Vec<u32>, unk_idf: f64) -> Self {
        Self {
            documents,
            df,
            unk_idf,
        }
    }

    pub fn with_unk_idf(mut self, unk_idf: f64) -> Self {
        self.unk_idf = unk_idf;
        self
    }

    pub fn documents(&self) -> usize {
        self.documents
    }

    pub fn df(&self, id: u32) -> u32 {
        self.df.get(id as usize).copied().unwrap_or(0)
    }

    pub fn df_table(&self) -> &[u32] {
        &self.df
    }

    pub fn unk_idf(&self) -> f64 {
        self.unk_idf
    }

    pub fn idf(&self, id: u32) -> f64 {
        match self.df(id) {
            0 => self.unk_idf,
            d => (self.documents as f64 / d as f64).ln(),
        }
    }

    /// Raw tf·idf of each character of `line`, with tf counted in `tf_source`.
    pub fn raw_weights(&self, line: &[u32], tf_source: &[u32]) -> Vec<f64> {
        let mut tf: HashMap<u32, usize> = HashMap::new();
        for &c in tf_source {
            *tf.entry(c).or_default() += 1;
        }
        line.iter()
            .map(|c| tf.get(c).copied().unwrap_or(0) as f64 * self.idf(*c))
            .collect()
    }
}

/// Min-max normalized tf-idf weights of a line, each in `[0, 1]`.
/// A line whose raw weights are all equal maps to all ones.
pub fn tfidf_line(line: &[u32], table: &TfIdfTable) -> Vec<f64> {
    min_max(&table.raw_weights(line, line))
}

/// Like [`tfidf_line`] but with term frequency taken from `context`
/// (e.g. all characters of the poem).
pub fn tfidf_line_in(line: &[u32], context: &[u32], table: &TfIdfTable) -> Vec<f64> {
    min_max(&table.raw_weights(line, context))
}

/// Weights for `line` under the given scope; `poem` supplies the context for [`TfScope::Poem`].
pub fn line_weights(line: &[u32], poem: &[Vec<u32>], scope: TfScope, table: &TfIdfTable) -> Vec<f64> {
    match scope {
        TfScope::Line => tfidf_line(line, table),
        TfScope::Poem => {
            let ctx: Vec<u32> = poem.iter().flatten().copied().collect();
            tfidf_line_in(line, &ctx, table)
        }
    }
}

pub fn min_max(raw: &[f64]) -> Vec<f64> {
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // also catches an empty line (hi = -inf, lo = +inf)
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        return vec![1.0; raw.len()];
    }
    raw.iter().map(|&x| (x - lo) / (hi - lo)).collect()
}

/// Keyword of a poem: the in-line bigram with the largest summed tf-idf
/// (tf counted over the whole poem). Earliest position wins ties. Falls back
/// to the single best character when no line has two characters.
pub fn extract_keyword(poem: &Poem, table: &TfIdfTable) -> Vec<u32> {
    let all: Vec<u32> = poem.chars().collect();
    let weights: Vec<Vec<f64>> = poem
        .lines
        .iter()
        .map(|l| table.raw_weights(l, &all))
        .collect();

    let mut best: Option<(f64, Vec<u32>)> = None;
    for (line, w) in poem.lines.iter().zip(&weights) {
        for j in 1..line.len() {
            let score = w[j - 1] + w[j];
            if best.as_ref().is_none_or(|(b, _)| score > *b) {
                best = Some((score, vec![line[j - 1], line[j]]));
            }
        }
    }
    if let Some((_, k)) = best {
        return k;
    }
    let mut single: Option<(f64, u32)> = None;
    for (line, w) in poem.lines.iter().zip(&weights) {
        for (&c, &s) in line.iter().zip(w) {
            if single.is_none_or(|(b, _)| s > b) {
                single = Some((s, c));
            }
        }
    }
    single.map(|(_, c)| vec![c]).unwrap_or_default()
}

/// Convenience for tests and tools: tf-idf table directly over a vocabulary.
pub fn build_table(poems: &[Poem], vocab: &Vocabulary) -> TfIdfTable {
    TfIdfTable::build(poems, vocab.len())
}
