use super::config::{ClueMode, ExtKind, ModelConfig};
use super::network::{AttentionTrace, EncodedSource};
use super::saliency::{select_salient, Selection};
use super::Model;
use crate::autodiff::{Tape, Tensor, Var};
use crate::corpus::{Form, Style};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
enum ClueKind {
    Sdu {
        /// `None` is the all-zero initial clue.
        v: Option<Var>,
        dim: usize,
    },
    Ssi {
        slots: Vec<Var>,
        slot_dim: usize,
        cursor: usize,
        capacity: usize,
    },
}

/// The salient clue carried from line to line within one poem.
#[derive(Clone, Debug)]
pub struct ClueState {
    form: Form,
    /// Number of updates applied so far.
    line: usize,
    kind: ClueKind,
}

impl ClueState {
    pub fn new(config: &ModelConfig, form: Form) -> Self {
        let kind = match config.clue {
            ClueMode::Sdu => ClueKind::Sdu {
                v: None,
                dim: config.clue_dim,
            },
            ClueMode::Ssi => ClueKind::Ssi {
                slots: Vec::new(),
                slot_dim: config.ssi_slot_dim,
                cursor: 0,
                capacity: config.ssi_capacity(form),
            },
        };
        Self { form, line: 0, kind }
    }

    pub fn mode(&self) -> ClueMode {
        match self.kind {
            ClueKind::Sdu { .. } => ClueMode::Sdu,
            ClueKind::Ssi { .. } => ClueMode::Ssi,
        }
    }

    pub fn form(&self) -> Form {
        self.form
    }

    pub fn line(&self) -> usize {
        self.line
    }

    /// Length of [`ClueState::vector`]: the SDU width or the SSI capacity.
    pub fn dim(&self) -> usize {
        match self.kind {
            ClueKind::Sdu { dim, .. } => dim,
            ClueKind::Ssi { capacity, .. } => capacity,
        }
    }

    /// SSI fill cursor; `None` for SDU.
    pub fn cursor(&self) -> Option<usize> {
        match self.kind {
            ClueKind::Ssi { cursor, .. } => Some(cursor),
            ClueKind::Sdu { .. } => None,
        }
    }

    pub fn capacity(&self) -> Option<usize> {
        match self.kind {
            ClueKind::Ssi { capacity, .. } => Some(capacity),
            ClueKind::Sdu { .. } => None,
        }
    }

    pub fn vector<S: Scalar>(&self, tape: &Tape<S>) -> Result<Var> {
        match &self.kind {
            ClueKind::Sdu { v: Some(v), .. } => Ok(*v),
            ClueKind::Sdu { v: None, dim } => Ok(tape.constant(Tensor::zeros(&[*dim]))),
            ClueKind::Ssi {
                slots,
                cursor,
                capacity,
                ..
            } => {
                let mut parts = slots.clone();
                if cursor < capacity {
                    parts.push(tape.constant(Tensor::zeros(&[capacity - cursor])));
                }
                tape.concat(&parts)
            }
        }
    }

    /// Cuts gradient flow into earlier lines.
    pub fn detach<S: Scalar>(&mut self, tape: &Tape<S>) {
        match &mut self.kind {
            ClueKind::Sdu { v, .. } => *v = v.map(|x| tape.detach(x)),
            ClueKind::Ssi { slots, .. } => slots.iter_mut().for_each(|s| *s = tape.detach(*s)),
        }
    }
}

/// The extension vector `e` of one poem (possibly empty).
#[derive(Clone, Copy, Debug)]
pub struct Extension {
    pub kind: ExtKind,
    pub vector: Option<Var>,
}

impl Extension {
    pub fn none() -> Self {
        Self {
            kind: ExtKind::None,
            vector: None,
        }
    }
}

/// Score-weighted average of the selected encoder states,
/// `Σ r_m h_m / Σ r_m`. Falls back to the plain mean when the selected
/// scores sum to zero.
pub fn salient_average<S: Scalar>(
    tape: &Tape<S>,
    selection: &Selection<S>,
    r: Var,
    states: &[Var],
) -> Result<Var> {
    if selection.is_empty() {
        return Err(Error::Invalid("no salient characters selected".into()));
    }
    let picked = selection
        .indices
        .iter()
        .map(|&i| states.get(i).copied().ok_or(Error::IndexOutOfRange { index: i, len: states.len() }))
        .collect::<Result<Vec<_>>>()?;
    let weights = selection
        .indices
        .iter()
        .map(|&i| tape.pick(r, i))
        .collect::<Result<Vec<_>>>()?;
    let weights = tape.concat(&weights)?;
    let total = tape.sum_all(weights);
    if tape.item(total) > S::zero() {
        tape.weighted_sum(tape.div_scalar(weights, total)?, &picked)
    } else {
        tape.mean(&picked)
    }
}

impl<S: Scalar> Model<S> {
    fn check_indices(selection: &Selection<S>, states: &[Var]) -> Result<()> {
        for &i in &selection.indices {
            if i >= states.len() {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: states.len(),
                });
            }
        }
        Ok(())
    }

    /// SDU update: `s = Σ r_m h_m / Σ r_m`, `v' = tanh(W [v; s] + b)`.
    /// An empty selection leaves the clue unchanged. When the selected
    /// scores sum to zero, `s` is the plain mean of the selected states.
    pub fn update_clue_sdu(
        &self,
        tape: &Tape<S>,
        state: &ClueState,
        selection: &Selection<S>,
        r: Var,
        states: &[Var],
    ) -> Result<ClueState> {
        if state.mode() != ClueMode::Sdu {
            return Err(Error::Invalid("update_clue_sdu on an SSI clue".into()));
        }
        Self::check_indices(selection, states)?;
        let mut next = state.clone();
        if selection.is_empty() {
            return Ok(next);
        }
        let s = salient_average(tape, selection, r, states)?;
        let ids = self.ids.sdu.expect("SDU model has sdu weights");
        let w = self.params().var(tape, ids.w);
        let b = self.params().var(tape, ids.b);
        let v_prev = state.vector(tape)?;
        let v = tape.tanh(tape.add(tape.matmul(w, tape.concat(&[v_prev, s])?)?, b)?);
        next.kind = match next.kind {
            ClueKind::Sdu { dim, .. } => ClueKind::Sdu { v: Some(v), dim },
            ClueKind::Ssi { .. } => unreachable!(),
        };
        next.line += 1;
        Ok(next)
    }

    /// SSI update: appends `tanh(W h_m + b)` for each selected state.
    pub fn update_clue_ssi(
        &self,
        tape: &Tape<S>,
        state: &ClueState,
        selection: &Selection<S>,
        states: &[Var],
    ) -> Result<ClueState> {
        Self::check_indices(selection, states)?;
        let mut next = state.clone();
        let ClueKind::Ssi {
            slots,
            slot_dim,
            cursor,
            capacity,
        } = &mut next.kind
        else {
            return Err(Error::Invalid("update_clue_ssi on an SDU clue".into()));
        };
        if selection.is_empty() {
            return Ok(next);
        }
        let needed = *slot_dim * selection.len();
        if *cursor + needed > *capacity {
            return Err(Error::ClueOverflow {
                cursor: *cursor,
                needed,
                capacity: *capacity,
            });
        }
        let ids = self.ids.ssi.expect("SSI model has ssi weights");
        let w = self.params().var(tape, ids.w);
        let b = self.params().var(tape, ids.b);
        for &i in &selection.indices {
            slots.push(tape.tanh(tape.add(tape.matmul(w, states[i])?, b)?));
        }
        *cursor += needed;
        next.line += 1;
        Ok(next)
    }

    /// Scores the source of a decoded line, selects salient characters and
    /// folds them into the clue. Returns the new clue, the selection and the
    /// full score vector.
    pub fn advance_clue(
        &self,
        tape: &Tape<S>,
        clue: &ClueState,
        trace: &AttentionTrace,
        w_in: &[f64],
        w_out: &[f64],
    ) -> Result<(ClueState, Selection<S>, Vec<S>)> {
        let r = self.saliency_var(tape, trace, w_in, w_out)?;
        let scores = tape.data(r);
        let selection = select_salient(&scores, self.config().k(clue.form()));
        let next = match clue.mode() {
            ClueMode::Sdu => self.update_clue_sdu(tape, clue, &selection, r, &trace.states)?,
            ClueMode::Ssi => self.update_clue_ssi(tape, clue, &selection, &trace.states)?,
        };
        Ok((next, selection, scores))
    }

    /// `e = tanh(W · mean(h) + b)` over the encoder states of a keyword.
    pub fn intent_vector(&self, tape: &Tape<S>, keyword: &EncodedSource) -> Result<Var> {
        let ids = self
            .ids
            .intent
            .ok_or_else(|| Error::Invalid("model has no intent extension".into()))?;
        let mean = tape.mean(&keyword.states)?;
        let w = self.params().var(tape, ids.w);
        let b = self.params().var(tape, ids.b);
        Ok(tape.tanh(tape.add(tape.matmul(w, mean)?, b)?))
    }

    pub fn make_intent_vector(&self, tape: &Tape<S>, keyword: &[u32]) -> Result<Var> {
        if keyword.is_empty() {
            return Err(Error::Invalid("empty keyword".into()));
        }
        let enc = self.encode(tape, keyword)?;
        self.intent_vector(tape, &enc)
    }

    /// Row `id` of the style embedding table.
    pub fn make_style_vector(&self, tape: &Tape<S>, id: usize) -> Result<Var> {
        let table = self
            .ids
            .style
            .ok_or_else(|| Error::Invalid("model has no style extension".into()))?;
        if Style::from_id(id).is_none() {
            return Err(Error::Invalid(format!("unknown style id {id}")));
        }
        tape.gather(self.params().var(tape, table), id)
    }

    /// The extension vector configured for this model. `keyword` is the
    /// encoded keyword (needed for intent), `style` defaults to non-style.
    pub fn extension(
        &self,
        tape: &Tape<S>,
        keyword: &EncodedSource,
        style: Option<Style>,
    ) -> Result<Extension> {
        let kind = self.config().ext;
        let mut parts = Vec::new();
        if kind.has_intent() {
            parts.push(self.intent_vector(tape, keyword)?);
        }
        if kind.has_style() {
            parts.push(self.make_style_vector(tape, style.unwrap_or(Style::None).id())?);
        }
        let vector = match parts.len() {
            0 => None,
            1 => Some(parts[0]),
            _ => Some(tape.concat(&parts)?),
        };
        Ok(Extension { kind, vector })
    }
}
