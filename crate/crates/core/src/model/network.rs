use super::clue::{ClueState, Extension};
use super::{LstmIds, Model};
use crate::autodiff::{Tape, Tensor, Var};
use crate::corpus::BOS;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub h: Var,
    pub c: Var,
}

/// Encoder output for one source line.
#[derive(Clone, Debug)]
pub struct EncodedSource {
    pub ids: Vec<u32>,
    /// `h_t = [forward_t; backward_t]`.
    pub states: Vec<Var>,
    /// Attention keys `W_k h_t + b`, computed once per source.
    keys: Vec<Var>,
}

impl EncodedSource {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Attention rows of one decoded line against its source.
#[derive(Clone, Debug, Default)]
pub struct AttentionTrace {
    /// One row per generated character, each a distribution over source positions.
    pub rows: Vec<Var>,
    pub states: Vec<Var>,
}

impl AttentionTrace {
    pub fn new(states: Vec<Var>) -> Self {
        Self {
            rows: Vec::new(),
            states,
        }
    }

    /// `A` as nested vectors: `A[i][j]`, generated char `i`, source char `j`.
    pub fn matrix<S: Scalar>(&self, tape: &Tape<S>) -> Vec<Vec<S>> {
        self.rows.iter().map(|&r| tape.data(r)).collect()
    }
}

/// `[v; e]` for one line, padded to the readout width.
#[derive(Clone, Copy, Debug)]
pub struct Conditioning {
    pub vector: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct StepOutput {
    pub state: DecoderState,
    pub context: Var,
    pub attention: Var,
    pub logits: Var,
}

/// Teacher-forced decode of a whole line.
#[derive(Clone, Debug)]
pub struct LineDecode {
    pub trace: AttentionTrace,
    /// Summed negative log-likelihood of the target characters.
    pub nll: Var,
    pub steps: Vec<StepOutput>,
}

impl<S: Scalar> Model<S> {
    fn p(&self, tape: &Tape<S>, id: crate::autodiff::ParamId) -> Var {
        self.params().var(tape, id)
    }

    pub fn embed(&self, tape: &Tape<S>, id: u32) -> Result<Var> {
        let table = self.p(tape, self.ids.embedding);
        tape.gather(table, id as usize)
    }

    fn lstm_step(&self, tape: &Tape<S>, ids: LstmIds, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hidden = tape.shape(h)[0];
        let w = self.p(tape, ids.w);
        let b = self.p(tape, ids.b);
        let xh = tape.concat(&[x, h])?;
        let z = tape.add(tape.matmul(w, xh)?, b)?;
        let i = tape.sigmoid(tape.slice(z, 0, hidden)?);
        let f = tape.sigmoid(tape.slice(z, hidden, hidden)?);
        let g = tape.tanh(tape.slice(z, 2 * hidden, hidden)?);
        let o = tape.sigmoid(tape.slice(z, 3 * hidden, hidden)?);
        let c_new = tape.add(tape.mul(f, c)?, tape.mul(i, g)?)?;
        let h_new = tape.mul(o, tape.tanh(c_new))?;
        Ok((h_new, c_new))
    }

    fn zeros(&self, tape: &Tape<S>, n: usize) -> Var {
        tape.constant(Tensor::zeros(&[n]))
    }

    /// Bidirectional LSTM over `line`.
    pub fn encode(&self, tape: &Tape<S>, line: &[u32]) -> Result<EncodedSource> {
        if line.is_empty() {
            return Err(Error::Invalid("cannot encode an empty line".into()));
        }
        let he = self.config().encoder_hidden;
        let embs = line
            .iter()
            .map(|&c| self.embed(tape, c))
            .collect::<Result<Vec<_>>>()?;

        let mut fwd = Vec::with_capacity(line.len());
        let (mut h, mut c) = (self.zeros(tape, he), self.zeros(tape, he));
        for &x in &embs {
            (h, c) = self.lstm_step(tape, self.ids.enc_fwd, x, h, c)?;
            fwd.push(h);
        }
        let mut bwd = vec![h; line.len()];
        let (mut h, mut c) = (self.zeros(tape, he), self.zeros(tape, he));
        for (t, &x) in embs.iter().enumerate().rev() {
            (h, c) = self.lstm_step(tape, self.ids.enc_bwd, x, h, c)?;
            bwd[t] = h;
        }
        let states = fwd
            .into_iter()
            .zip(bwd)
            .map(|(f, b)| tape.concat(&[f, b]))
            .collect::<Result<Vec<_>>>()?;

        let wk = self.p(tape, self.ids.attn_key);
        let bk = self.p(tape, self.ids.attn_bias);
        let keys = states
            .iter()
            .map(|&s| tape.add(tape.matmul(wk, s)?, bk))
            .collect::<Result<Vec<_>>>()?;
        Ok(EncodedSource {
            ids: line.to_vec(),
            states,
            keys,
        })
    }

    pub fn initial_state(&self, tape: &Tape<S>) -> DecoderState {
        let hd = self.config().decoder_hidden;
        DecoderState {
            h: self.zeros(tape, hd),
            c: self.zeros(tape, hd),
        }
    }

    /// Builds `[v; e]` for a line, checking both against the configuration.
    pub fn conditioning(&self, tape: &Tape<S>, clue: &ClueState, ext: &Extension) -> Result<Conditioning> {
        let cfg = self.config();
        if clue.mode() != cfg.clue {
            return Err(Error::Invalid(format!(
                "clue mode {} does not match model ({})",
                clue.mode(),
                cfg.clue
            )));
        }
        if ext.kind != cfg.ext {
            return Err(Error::Invalid(format!(
                "extension {} does not match model ({})",
                ext.kind, cfg.ext
            )));
        }
        let mut parts = vec![clue.vector(tape)?];
        let pad = cfg.clue_width() - clue.dim();
        if pad > 0 {
            parts.push(self.zeros(tape, pad));
        }
        if let Some(e) = ext.vector {
            let d = tape.shape(e)[0];
            if d != cfg.ext_dim() {
                return Err(Error::Invalid(format!(
                    "extension vector has {d} entries, model expects {}",
                    cfg.ext_dim()
                )));
            }
            parts.push(e);
        } else if cfg.ext_dim() != 0 {
            return Err(Error::Invalid("missing extension vector".into()));
        }
        Ok(Conditioning {
            vector: tape.concat(&parts)?,
        })
    }

    /// Additive attention of decoder state `query` over the source.
    fn attend(&self, tape: &Tape<S>, src: &EncodedSource, query: Var) -> Result<(Var, Var)> {
        let wq = self.p(tape, self.ids.attn_query);
        let score = self.p(tape, self.ids.attn_score);
        let q = tape.matmul(wq, query)?;
        let scores = src
            .keys
            .iter()
            .map(|&k| tape.matmul(score, tape.tanh(tape.add(q, k)?)))
            .collect::<Result<Vec<_>>>()?;
        let alpha = tape.softmax(tape.concat(&scores)?);
        let context = tape.weighted_sum(alpha, &src.states)?;
        Ok((alpha, context))
    }

    /// One decoder step: attention from the previous state, LSTM update on
    /// `[emb(prev); c_t]`, then maxout readout over `[h'_t; emb(prev); c_t; v; e]`.
    pub fn decode_step(
        &self,
        tape: &Tape<S>,
        src: &EncodedSource,
        state: DecoderState,
        prev: u32,
        cond: Conditioning,
    ) -> Result<StepOutput> {
        let emb = self.embed(tape, prev)?;
        let (attention, context) = self.attend(tape, src, state.h)?;
        let x = tape.concat(&[emb, context])?;
        let (h, c) = self.lstm_step(tape, self.ids.dec, x, state.h, state.c)?;

        let features = tape.concat(&[h, emb, context, cond.vector])?;
        let rw = self.p(tape, self.ids.readout_w);
        let rb = self.p(tape, self.ids.readout_b);
        let pre = tape.add(tape.matmul(rw, features)?, rb)?;
        let maxout = tape.max_pieces(pre, self.config().maxout_pieces)?;
        let ow = self.p(tape, self.ids.output_w);
        let ob = self.p(tape, self.ids.output_b);
        let logits = tape.add(tape.matmul(ow, maxout)?, ob)?;
        Ok(StepOutput {
            state: DecoderState { h, c },
            context,
            attention,
            logits,
        })
    }

    /// Probability distribution over the vocabulary for a step.
    pub fn distribution(&self, tape: &Tape<S>, step: &StepOutput) -> Vec<S> {
        tape.data(tape.softmax(step.logits))
    }

    /// Decodes `target` with teacher forcing, starting from `BOS`.
    pub fn decode_line(
        &self,
        tape: &Tape<S>,
        src: &EncodedSource,
        target: &[u32],
        cond: Conditioning,
    ) -> Result<LineDecode> {
        let mut state = self.initial_state(tape);
        let mut prev = BOS;
        let mut trace = AttentionTrace::new(src.states.clone());
        let mut losses = Vec::with_capacity(target.len());
        let mut steps = Vec::with_capacity(target.len());
        for &y in target {
            let step = self.decode_step(tape, src, state, prev, cond)?;
            trace.rows.push(step.attention);
            let logp = tape.log_softmax(step.logits);
            losses.push(tape.pick(logp, y as usize)?);
            state = step.state;
            prev = y;
            steps.push(step);
        }
        let nll = tape.scale(tape.sum_all(tape.concat(&losses)?), -S::one());
        Ok(LineDecode { trace, nll, steps })
    }
}
