//! Saliency scores from attention and thresholded selection of salient characters.

use super::config::SaliencyMode;
use super::network::AttentionTrace;
use super::Model;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Threshold decay applied after each accepted character.
pub const GOLDEN_DECAY: f64 = 0.618;
/// The initial threshold is `mean + THRESHOLD_STD_WEIGHT · std`.
pub const THRESHOLD_STD_WEIGHT: f64 = 0.5;

/// Characters picked from a source line, most salient first.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection<S> {
    pub indices: Vec<usize>,
    pub scores: Vec<S>,
}

impl<S> Selection<S> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Column mass of `A`, normalized to sum to one.
pub fn saliency_naive<S: Scalar>(a: &[Vec<S>]) -> Vec<S> {
    let cols = a.first().map_or(0, Vec::len);
    let mut r = vec![S::zero(); cols];
    for row in a {
        for (rj, &x) in r.iter_mut().zip(row) {
            *rj = *rj + x;
        }
    }
    let total: S = r.iter().copied().sum();
    r.into_iter().map(|x| x / total).collect()
}

/// `r = (w_out · A) ⊙ w_in`, unnormalized.
pub fn saliency_tfidf<S: Scalar>(a: &[Vec<S>], w_in: &[S], w_out: &[S]) -> Result<Vec<S>> {
    if w_out.len() != a.len() || a.iter().any(|row| row.len() != w_in.len()) {
        return Err(Error::Shape {
            op: "saliency_tfidf",
            shapes: format!(
                "A is {}x{}, w_in has {}, w_out has {}",
                a.len(),
                a.first().map_or(0, Vec::len),
                w_in.len(),
                w_out.len()
            ),
        });
    }
    let mut r = vec![S::zero(); w_in.len()];
    for (row, &wo) in a.iter().zip(w_out) {
        for (rj, &x) in r.iter_mut().zip(row) {
            *rj = *rj + wo * x;
        }
    }
    Ok(r.into_iter().zip(w_in).map(|(x, &wi)| x * wi).collect())
}

/// Picks at most `k` salient positions from `r`.
///
/// Positions are visited in descending score order (ties by ascending
/// index). The threshold starts at `mean + 0.5 · std` (population std) and is
/// multiplied by 0.618 after every accepted position; the scan stops at the
/// first score below the threshold or after `min(k, len)` acceptances.
pub fn select_salient<S: Scalar>(r: &[S], k: usize) -> Selection<S> {
    let t = r.len();
    if t == 0 {
        return Selection {
            indices: Vec::new(),
            scores: Vec::new(),
        };
    }
    let n = S::lit(t as f64);
    let lo = r.iter().copied().fold(S::infinity(), S::min);
    let hi = r.iter().copied().fold(S::neg_infinity(), S::max);
    // keep rounding from pushing the mean of equal scores above the scores
    let avg = (r.iter().copied().sum::<S>() / n).max(lo).min(hi);
    let std = if hi == lo {
        S::zero()
    } else {
        (r.iter().map(|&x| (x - avg) * (x - avg)).sum::<S>() / n).sqrt()
    };

    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| r[b].partial_cmp(&r[a]).unwrap_or(std::cmp::Ordering::Equal));

    let mut threshold = avg + S::lit(THRESHOLD_STD_WEIGHT) * std;
    let mut indices = Vec::new();
    for &i in order.iter().take(k.min(t)) {
        if r[i] < threshold {
            break;
        }
        indices.push(i);
        threshold = threshold * S::lit(GOLDEN_DECAY);
    }
    let scores = indices.iter().map(|&i| r[i]).collect();
    Selection { indices, scores }
}

impl<S: Scalar> Model<S> {
    /// Saliency scores on the tape, so gradients reach the attention weights.
    pub fn saliency_var(
        &self,
        tape: &Tape<S>,
        trace: &AttentionTrace,
        w_in: &[f64],
        w_out: &[f64],
    ) -> Result<Var> {
        if trace.rows.is_empty() {
            return Err(Error::Invalid("empty attention trace".into()));
        }
        let t_in = trace.states.len();
        match self.config().saliency {
            SaliencyMode::Naive => {
                let ones = tape.constant(Tensor::filled(&[trace.rows.len()], S::one()));
                let col = tape.weighted_sum(ones, &trace.rows)?;
                tape.div_scalar(col, tape.sum_all(col))
            }
            SaliencyMode::Tfidf => {
                if w_in.len() != t_in || w_out.len() != trace.rows.len() {
                    return Err(Error::Shape {
                        op: "saliency_tfidf",
                        shapes: format!(
                            "A is {}x{t_in}, w_in has {}, w_out has {}",
                            trace.rows.len(),
                            w_in.len(),
                            w_out.len()
                        ),
                    });
                }
                let wo = tape.constant(Tensor::vector(w_out.iter().map(|&x| S::lit(x)).collect()));
                let wi = tape.constant(Tensor::vector(w_in.iter().map(|&x| S::lit(x)).collect()));
                tape.mul(tape.weighted_sum(wo, &trace.rows)?, wi)
            }
        }
    }
}
