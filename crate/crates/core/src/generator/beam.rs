use crate::autodiff::{Tape, Var};
use crate::corpus::{ToneEntry, BOS, RESERVED};
use crate::error::Result;
use crate::model::{Conditioning, DecoderState, EncodedSource, Model};
use crate::scalar::Scalar;

use super::pattern::{line_admits, ToneSlot};

/// A partial line in the beam.
#[derive(Clone, Debug)]
pub struct Hypothesis {
    pub chars: Vec<u32>,
    /// Summed log probability of `chars`.
    pub log_prob: f64,
    pub state: DecoderState,
    /// Attention rows, one per character.
    pub rows: Vec<Var>,
}

/// Tone and rhyme requirements for one line.
#[derive(Clone, Debug)]
pub struct LineConstraint<'a> {
    /// Alternative tone patterns; a prefix must fit at least one.
    pub patterns: Vec<&'a [ToneSlot]>,
    /// Rhyme group required of the line's final character.
    pub rhyme: Option<u32>,
    /// Tone entries indexed by character id.
    pub tones: &'a [ToneEntry],
}

impl LineConstraint<'_> {
    fn entry(&self, id: u32) -> ToneEntry {
        self.tones.get(id as usize).copied().unwrap_or_default()
    }

    /// Whether `chars`, whose newest character sits at `position`, is still legal.
    pub fn admits(&self, chars: &[u32], position: usize) -> bool {
        let tones: Vec<_> = chars.iter().map(|&c| self.entry(c).tone).collect();
        if !self.patterns.iter().any(|p| line_admits(p, &tones)) {
            return false;
        }
        let is_final = self.patterns.first().is_some_and(|p| position + 1 == p.len());
        match (is_final, self.rhyme, chars.last()) {
            (true, Some(g), Some(&c)) => self.entry(c).rhyme.is_none_or(|r| r == g),
            _ => true,
        }
    }
}

/// Drops hypotheses whose newest character breaks `constraint` at `position`.
/// Survivors keep their order.
pub fn prune_beam(hyps: Vec<Hypothesis>, position: usize, constraint: &LineConstraint) -> Vec<Hypothesis> {
    hyps.into_iter()
        .filter(|h| constraint.admits(&h.chars, position))
        .collect()
}

/// Beam search for one line of exactly `length` characters. Reserved ids are
/// never produced. Candidates are ranked by log probability with ties broken
/// by character id, then by parent rank. Returns the final beam, best first;
/// it is empty when the constraint rules out every continuation.
#[allow(clippy::too_many_arguments)]
pub fn beam_search_line<S: Scalar>(
    tape: &Tape<S>,
    model: &Model<S>,
    src: &EncodedSource,
    cond: Conditioning,
    length: usize,
    beam: usize,
    constraint: Option<&LineConstraint>,
) -> Result<Vec<Hypothesis>> {
    let vocab = model.config().vocab_size;
    let mut hyps = vec![Hypothesis {
        chars: Vec::new(),
        log_prob: 0.0,
        state: model.initial_state(tape),
        rows: Vec::new(),
    }];
    for position in 0..length {
        let mut steps = Vec::with_capacity(hyps.len());
        let mut cands: Vec<(f64, u32, usize)> = Vec::with_capacity(hyps.len() * vocab);
        for (parent, h) in hyps.iter().enumerate() {
            let prev = h.chars.last().copied().unwrap_or(BOS);
            let step = model.decode_step(tape, src, h.state, prev, cond)?;
            let logp = log_softmax(&tape.data(step.logits));
            for c in RESERVED as u32..vocab as u32 {
                cands.push((h.log_prob + logp[c as usize], c, parent));
            }
            steps.push(step);
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut next = Vec::with_capacity(beam);
        for (score, c, parent) in cands {
            if next.len() == beam {
                break;
            }
            let mut chars = hyps[parent].chars.clone();
            chars.push(c);
            if let Some(k) = constraint {
                if !k.admits(&chars, position) {
                    continue;
                }
            }
            let mut rows = hyps[parent].rows.clone();
            rows.push(steps[parent].attention);
            next.push(Hypothesis {
                chars,
                log_prob: score,
                state: steps[parent].state,
                rows,
            });
        }
        if next.is_empty() {
            return Ok(next);
        }
        hyps = next;
    }
    Ok(hyps)
}

fn log_softmax<S: Scalar>(x: &[S]) -> Vec<f64> {
    let x: Vec<f64> = x.iter().map(|v| v.as_f64()).collect();
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z = x.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
    x.iter().map(|v| v - z).collect()
}
