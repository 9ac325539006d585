use crate::autodiff::{Tape, Var};
use crate::corpus::{extract_keyword, line_weights, Poem, TfIdfTable};
use crate::error::{Error, Result};
use crate::model::{ClueState, Model, Selection};
use crate::scalar::Scalar;

/// One decoding task of a chain.
#[derive(Clone, Debug)]
pub struct ChainTask {
    pub source: Vec<u32>,
    pub target: Vec<u32>,
    /// Summed NLL of the target line.
    pub nll: Var,
    /// Width of the clue seen by this task.
    pub clue_dim: usize,
    /// SSI fill cursor when this task was decoded.
    pub cursor: Option<usize>,
}

/// Saliency selection made on a source line after decoding its successor.
#[derive(Clone, Debug)]
pub struct Transition<S> {
    /// Index (0-based) of the source line.
    pub line: usize,
    pub scores: Vec<S>,
    pub selection: Selection<S>,
}

/// The four teacher-forced decoding tasks of one poem.
#[derive(Clone, Debug)]
pub struct TrainingChain<S> {
    pub keyword: Vec<u32>,
    pub tasks: Vec<ChainTask>,
    pub transitions: Vec<Transition<S>>,
    /// Clue after the last transition.
    pub clue: ClueState,
    /// Summed NLL over all target characters.
    pub nll: Var,
    pub chars: usize,
}

impl<S: Scalar> TrainingChain<S> {
    /// Mean per-character NLL.
    pub fn loss(&self, tape: &Tape<S>) -> Var {
        tape.scale(self.nll, S::one() / S::lit(self.chars as f64))
    }
}

/// The poem's own keyword, or one extracted by tf-idf.
pub fn poem_keyword(poem: &Poem, tfidf: &TfIdfTable) -> Vec<u32> {
    match &poem.keyword {
        Some(k) if !k.is_empty() => k.clone(),
        _ => extract_keyword(poem, tfidf),
    }
}

/// Decodes line 1 from `keyword` and every later line from its predecessor,
/// threading the clue through the poem. The clue is advanced after lines 2,
/// 3 and 4 from the attention of each decode.
pub fn build_chain<S: Scalar>(
    tape: &Tape<S>,
    model: &Model<S>,
    poem: &Poem,
    keyword: &[u32],
    tfidf: &TfIdfTable,
    detach_clue: bool,
) -> Result<TrainingChain<S>> {
    if keyword.is_empty() {
        return Err(Error::Invalid("empty keyword".into()));
    }
    let cfg = model.config();
    let kw = model.encode(tape, keyword)?;
    let ext = model.extension(tape, &kw, poem.style)?;
    let mut clue = ClueState::new(cfg, poem.form);
    let weights = |l: &[u32]| line_weights(l, &poem.lines, cfg.tf_scope, tfidf);

    let mut tasks = Vec::with_capacity(poem.lines.len());
    let mut transitions = Vec::new();
    for (i, target) in poem.lines.iter().enumerate() {
        let src = if i == 0 { kw.clone() } else { model.encode(tape, &poem.lines[i - 1])? };
        let cond = model.conditioning(tape, &clue, &ext)?;
        let out = model.decode_line(tape, &src, target, cond)?;
        tasks.push(ChainTask {
            source: src.ids.clone(),
            target: target.clone(),
            nll: out.nll,
            clue_dim: clue.dim(),
            cursor: clue.cursor(),
        });
        if i > 0 {
            let w_in = weights(&poem.lines[i - 1]);
            let w_out = weights(target);
            let (next, selection, scores) = model.advance_clue(tape, &clue, &out.trace, &w_in, &w_out)?;
            clue = next;
            if detach_clue {
                clue.detach(tape);
            }
            transitions.push(Transition {
                line: i - 1,
                scores,
                selection,
            });
        }
    }
    let nlls: Vec<Var> = tasks.iter().map(|t| t.nll).collect();
    let nll = tape.sum_all(tape.concat(&nlls)?);
    let chars = poem.lines.iter().map(Vec::len).sum();
    Ok(TrainingChain {
        keyword: keyword.to_vec(),
        tasks,
        transitions,
        clue,
        nll,
        chars,
    })
}
