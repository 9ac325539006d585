//! Beam-search generation of whole quatrains from a keyword.
//!
//! Lines are decoded one at a time with the clue threaded exactly as in
//! training. With constraints on, the beam is pruned in-search: line 1 may
//! follow any template of the form, after which the template matching the
//! best first line is fixed, and the rhyme group is fixed by line 2.

mod beam;
mod pattern;

pub use beam::{beam_search_line, prune_beam, Hypothesis, LineConstraint};
pub use pattern::{check_form, line_admits, tone_table, FormReport, PatternTable, Template, ToneSlot};

use serde::Serialize;

use crate::autodiff::Tape;
use crate::corpus::{line_weights, Form, Style, TfIdfTable, ToneEntry, ToneLexicon, Vocabulary, UNK};
use crate::error::{Error, Result};
use crate::model::{AttentionTrace, ClueState, Model};
use crate::scalar::Scalar;

pub const DEFAULT_BEAM: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct GenerateOptions {
    pub form: Form,
    pub beam: usize,
    pub constraints: bool,
    /// Ignored by models without a style extension (must then be `None` or non-style).
    pub style: Option<Style>,
    /// Recorded in the output; beam search itself is deterministic.
    pub seed: u64,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            form: Form::Wujue,
            beam: DEFAULT_BEAM,
            constraints: true,
            style: None,
            seed: 0,
        }
    }
}

/// Salient characters picked from line `line - 1` after generating `line` (1-based).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LineSaliency {
    pub line: usize,
    pub source: String,
    /// Saliency score of every source character.
    pub scores: Vec<f64>,
    /// Selected positions in the source line, most salient first.
    pub selected: Vec<usize>,
    pub characters: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstraintInfo {
    pub enabled: bool,
    pub mode: &'static str,
    pub template: Option<String>,
    pub rhyme_group: Option<u32>,
}

/// One generated poem, serialized as a JSON-lines record.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeneratedPoem {
    pub form: Form,
    pub keyword: String,
    /// Keyword characters outside the vocabulary (replaced by the unknown id).
    pub unknown_keyword_chars: usize,
    pub style: Option<Style>,
    pub lines: Vec<String>,
    pub saliency: Vec<LineSaliency>,
    pub log_prob: f64,
    pub line_log_probs: Vec<f64>,
    pub form_check: FormReport,
    pub constraints: ConstraintInfo,
    pub beam: usize,
    pub seed: u64,
    #[serde(skip)]
    pub ids: Vec<Vec<u32>>,
}

impl GeneratedPoem {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain data")
    }
}

/// A checkpoint's model with what generation needs around it.
pub struct Generator<'a, S: Scalar> {
    pub model: &'a Model<S>,
    pub vocab: &'a Vocabulary,
    pub tfidf: &'a TfIdfTable,
    pub lexicon: Option<&'a ToneLexicon>,
    pub patterns: PatternTable,
    tones: Vec<ToneEntry>,
}

impl<'a, S: Scalar> Generator<'a, S> {
    pub fn new(
        model: &'a Model<S>,
        vocab: &'a Vocabulary,
        tfidf: &'a TfIdfTable,
        lexicon: Option<&'a ToneLexicon>,
    ) -> Self {
        let tones = lexicon.map_or_else(|| vec![ToneEntry::default(); vocab.len()], |l| tone_table(l, vocab));
        Self {
            model,
            vocab,
            tfidf,
            lexicon,
            patterns: PatternTable::standard(),
            tones,
        }
    }

    pub fn generate(&self, keyword: &str, opts: &GenerateOptions) -> Result<GeneratedPoem> {
        generate_poem(self, keyword, opts)
    }
}

/// Generates four lines for `keyword`.
pub fn generate_poem<S: Scalar>(g: &Generator<S>, keyword: &str, opts: &GenerateOptions) -> Result<GeneratedPoem> {
    let model = g.model;
    let cfg = model.config();
    if keyword.is_empty() {
        return Err(Error::Invalid("empty keyword".into()));
    }
    if opts.beam == 0 {
        return Err(Error::Invalid("beam width must be at least 1".into()));
    }
    if opts.constraints && g.lexicon.is_none() {
        return Err(Error::Invalid("constraints need a tone lexicon".into()));
    }
    let style = if cfg.ext.has_style() {
        Some(opts.style.unwrap_or(Style::None))
    } else {
        if opts.style.is_some_and(|s| s != Style::None) {
            return Err(Error::Invalid("model has no style extension; fine-tune one first".into()));
        }
        None
    };

    let kw_ids = g.vocab.encode(keyword);
    let unknown = kw_ids.iter().filter(|&&c| c == UNK).count();
    let tape = Tape::new();
    let kw = model.encode(&tape, &kw_ids)?;
    let ext = model.extension(&tape, &kw, style)?;
    let mut clue = ClueState::new(cfg, opts.form);
    let len = opts.form.line_len();
    let templates = g.patterns.templates(opts.form);

    let mut template: Option<usize> = None;
    let mut rhyme: Option<u32> = None;
    let mut lines: Vec<Vec<u32>> = Vec::with_capacity(4);
    let mut line_log_probs = Vec::with_capacity(4);
    let mut saliency = Vec::with_capacity(3);

    for i in 0..4 {
        let src = if i == 0 { kw.clone() } else { model.encode(&tape, &lines[i - 1])? };
        let cond = model.conditioning(&tape, &clue, &ext)?;
        let constraint = opts.constraints.then(|| LineConstraint {
            patterns: match template {
                Some(t) => vec![templates[t].lines[i].as_slice()],
                None => templates.iter().map(|t| t.lines[i].as_slice()).collect(),
            },
            rhyme: if i == 3 { rhyme } else { None },
            tones: &g.tones,
        });
        let finals = beam_search_line(&tape, model, &src, cond, len, opts.beam, constraint.as_ref())?;
        let Some(best) = finals.into_iter().next() else {
            return Err(Error::BeamExhausted {
                line: i + 1,
                template: match template {
                    Some(t) => templates[t].to_string(),
                    None => format!("any of {} templates", templates.len()),
                },
            });
        };
        if opts.constraints {
            if i == 0 {
                let tones: Vec<_> = best.chars.iter().map(|&c| g.tones[c as usize].tone).collect();
                template = templates.iter().position(|t| line_admits(&t.lines[0], &tones));
            }
            if i == 1 {
                rhyme = g.tones[*best.chars.last().expect("nonempty line") as usize].rhyme;
            }
        }
        line_log_probs.push(best.log_prob);
        lines.push(best.chars.clone());

        if i > 0 {
            let trace = AttentionTrace {
                rows: best.rows.clone(),
                states: src.states.clone(),
            };
            let w = |l: &[u32]| line_weights(l, &lines, cfg.tf_scope, g.tfidf);
            let (next, selection, scores) =
                model.advance_clue(&tape, &clue, &trace, &w(&lines[i - 1]), &w(&best.chars))?;
            clue = next;
            let source = &lines[i - 1];
            saliency.push(LineSaliency {
                line: i + 1,
                source: g.vocab.decode(source),
                scores: scores.iter().map(|s| s.as_f64()).collect(),
                characters: selection
                    .indices
                    .iter()
                    .map(|&j| g.vocab.decode(&source[j..=j]))
                    .collect(),
                selected: selection.indices,
            });
        }
    }

    let text: Vec<String> = lines.iter().map(|l| g.vocab.decode(l)).collect();
    let empty = ToneLexicon::new();
    let form_check = check_form(&text, opts.form, g.lexicon.unwrap_or(&empty), &g.patterns);
    Ok(GeneratedPoem {
        form: opts.form,
        keyword: keyword.to_owned(),
        unknown_keyword_chars: unknown,
        style,
        lines: text,
        saliency,
        log_prob: line_log_probs.iter().sum(),
        line_log_probs,
        form_check,
        constraints: ConstraintInfo {
            enabled: opts.constraints,
            mode: "in-search pruning",
            template: template.map(|t| templates[t].to_string()),
            rhyme_group: rhyme,
        },
        beam: opts.beam,
        seed: opts.seed,
        ids: lines,
    })
}

#[cfg(test)]
mod tests;
