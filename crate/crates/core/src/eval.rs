//! Corpus BLEU, saliency-selection Jaccard and the innovation score.

use std::collections::{BTreeSet, HashMap};

use serde::Serialize;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Corpus-level BLEU on a 0-100 scale.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BleuReport {
    pub bleu: f64,
    /// Modified n-gram precisions for n = 1..4 (0-1 scale).
    pub precisions: [f64; MAX_ORDER],
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

/// Character tokens; whitespace separates nothing and is dropped.
fn tokens(s: &str) -> Vec<char> {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

fn ngrams(t: &[char], n: usize) -> HashMap<&[char], usize> {
    let mut m = HashMap::new();
    if t.len() >= n {
        for g in t.windows(n) {
            *m.entry(g).or_insert(0) += 1;
        }
    }
    m
}

/// BLEU with `multi-bleu.perl` semantics over character tokens. Each
/// hypothesis has one or more references: n-gram counts are clipped by the
/// maximum count in any reference, the reference length is the closest one
/// (shorter wins ties), and the brevity penalty is corpus-level. Any zero
/// precision gives BLEU 0.
pub fn corpus_bleu<H: AsRef<str>, R: AsRef<str>>(hypotheses: &[H], references: &[Vec<R>]) -> Result<BleuReport> {
    if hypotheses.is_empty() {
        return Err(Error::Invalid("no hypotheses".into()));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::Invalid(format!(
            "{} hypotheses but {} reference sets",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, refs) in hypotheses.iter().zip(references) {
        if refs.is_empty() {
            return Err(Error::Invalid("hypothesis without a reference".into()));
        }
        let h = tokens(h.as_ref());
        let refs: Vec<Vec<char>> = refs.iter().map(|r| tokens(r.as_ref())).collect();
        hyp_len += h.len();
        let mut closest = refs[0].len();
        for r in &refs[1..] {
            let (d, best) = (r.len().abs_diff(h.len()), closest.abs_diff(h.len()));
            if d < best || (d == best && r.len() < closest) {
                closest = r.len();
            }
        }
        ref_len += closest;
        for n in 1..=MAX_ORDER {
            let mut max_ref: HashMap<&[char], usize> = HashMap::new();
            for r in &refs {
                for (g, c) in ngrams(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            for (g, c) in ngrams(&h, n) {
                totals[n - 1] += c;
                matches[n - 1] += c.min(max_ref.get(g).copied().unwrap_or(0));
            }
        }
    }
    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        if totals[n] > 0 {
            precisions[n] = matches[n] as f64 / totals[n] as f64;
        }
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    let bleu = if precisions.contains(&0.0) {
        0.0
    } else {
        let mean_log = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        100.0 * brevity_penalty * mean_log.exp()
    };
    Ok(BleuReport {
        bleu,
        precisions,
        matches,
        totals,
        brevity_penalty,
        hyp_len,
        ref_len,
    })
}

/// `|A ∩ B| / |A ∪ B|`, with two empty sets counting as identical.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Mean per-line Jaccard similarity between model and gold selections.
pub fn saliency_jaccard(model: &[Vec<usize>], gold: &[Vec<usize>]) -> Result<f64> {
    if model.len() != gold.len() {
        return Err(Error::Invalid(format!(
            "{} model lines but {} gold lines",
            model.len(),
            gold.len()
        )));
    }
    if model.is_empty() {
        return Err(Error::Invalid("no lines to compare".into()));
    }
    let total: f64 = model
        .iter()
        .zip(gold)
        .map(|(a, b)| {
            let a: BTreeSet<usize> = a.iter().copied().collect();
            let b: BTreeSet<usize> = b.iter().copied().collect();
            jaccard(&a, &b)
        })
        .sum();
    Ok(total / model.len() as f64)
}

/// Mean pairwise Jaccard similarity of the character sets of whole poems.
/// Lower means more varied output.
pub fn innovation<P: AsRef<str>>(poems: &[P]) -> Result<f64> {
    if poems.len() < 2 {
        return Err(Error::Invalid("innovation needs at least two poems".into()));
    }
    let sets: Vec<BTreeSet<char>> = poems.iter().map(|p| tokens(p.as_ref()).into_iter().collect()).collect();
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            sum += jaccard(&sets[i], &sets[j]);
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}
