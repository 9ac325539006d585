//! Attentive encoder-decoder with the salient-clue mechanism.
//!
//! A line is decoded from the preceding line (or the keyword, for the first
//! line) with additive attention. After each line, the attention matrix is
//! turned into per-character saliency scores, the most salient source
//! characters are picked by a decaying threshold, and their encoder states
//! are folded into the clue vector that conditions every later line.

mod checkpoint;
mod clue;
mod config;
mod network;
mod saliency;

pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use clue::{salient_average, ClueState, Extension};
pub use config::{ClueMode, ExtKind, ModelConfig, SaliencyMode, STYLE_ROWS, TRANSITIONS};
pub use network::{AttentionTrace, Conditioning, DecoderState, EncodedSource, LineDecode, StepOutput};
pub use saliency::{
    saliency_naive, saliency_tfidf, select_salient, Selection, GOLDEN_DECAY, THRESHOLD_STD_WEIGHT,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default half-width of the uniform initializer.
pub const INIT_SCALE: f64 = 0.08;

#[derive(Clone, Copy, Debug)]
pub(crate) struct LstmIds {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Ids {
    pub embedding: ParamId,
    pub enc_fwd: LstmIds,
    pub enc_bwd: LstmIds,
    pub dec: LstmIds,
    pub attn_query: ParamId,
    pub attn_key: ParamId,
    pub attn_bias: ParamId,
    pub attn_score: ParamId,
    pub readout_w: ParamId,
    pub readout_b: ParamId,
    pub output_w: ParamId,
    pub output_b: ParamId,
    pub sdu: Option<LstmIds>,
    pub ssi: Option<LstmIds>,
    pub intent: Option<LstmIds>,
    pub style: Option<ParamId>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Init {
    Uniform,
    Zero,
}

fn param_specs(c: &ModelConfig) -> Vec<(&'static str, Vec<usize>, Init)> {
    use Init::*;
    let (v, e, he, hd) = (c.vocab_size, c.embedding_dim, c.encoder_hidden, c.decoder_hidden);
    let hs = c.encoder_state_dim();
    let mut s = vec![
        ("embedding", vec![v, e], Uniform),
        ("encoder.forward.w", vec![4 * he, e + he], Uniform),
        ("encoder.forward.b", vec![4 * he], Zero),
        ("encoder.backward.w", vec![4 * he, e + he], Uniform),
        ("encoder.backward.b", vec![4 * he], Zero),
        ("decoder.w", vec![4 * hd, e + hs + hd], Uniform),
        ("decoder.b", vec![4 * hd], Zero),
        ("attention.query", vec![c.attention_dim, hd], Uniform),
        ("attention.key", vec![c.attention_dim, hs], Uniform),
        ("attention.bias", vec![c.attention_dim], Zero),
        ("attention.score", vec![1, c.attention_dim], Uniform),
        ("readout.w", vec![c.maxout_pieces * c.maxout_dim, c.readout_input_dim()], Uniform),
        ("readout.b", vec![c.maxout_pieces * c.maxout_dim], Zero),
        ("output.w", vec![v, c.maxout_dim], Uniform),
        ("output.b", vec![v], Zero),
    ];
    match c.clue {
        ClueMode::Sdu => {
            s.push(("sdu.w", vec![c.clue_dim, c.clue_dim + hs], Uniform));
            s.push(("sdu.b", vec![c.clue_dim], Zero));
        }
        ClueMode::Ssi => {
            s.push(("ssi.w", vec![c.ssi_slot_dim, hs], Uniform));
            s.push(("ssi.b", vec![c.ssi_slot_dim], Zero));
        }
    }
    if c.ext.has_intent() {
        s.push(("intent.w", vec![c.intent_dim, hs], Uniform));
        s.push(("intent.b", vec![c.intent_dim], Zero));
    }
    if c.ext.has_style() {
        s.push(("style.table", vec![STYLE_ROWS, c.style_dim], Uniform));
    }
    s
}

fn init_tensor<S: Scalar>(shape: &[usize], init: Init, scale: f64, rng: &mut ChaCha8Rng) -> Tensor<S> {
    match init {
        Init::Zero => Tensor::zeros(shape),
        Init::Uniform => {
            let n = shape.iter().product();
            let data = (0..n).map(|_| S::lit(rng.gen_range(-scale..=scale))).collect();
            Tensor::new(shape.to_vec(), data).expect("spec shape")
        }
    }
}

/// Network weights plus the configuration that shaped them.
#[derive(Clone, Debug)]
pub struct Model<S: Scalar> {
    config: ModelConfig,
    params: ParamSet<S>,
    pub(crate) ids: Ids,
}

impl<S: Scalar> Model<S> {
    /// Fresh model with weights drawn uniformly from `[-init_scale, init_scale]`.
    pub fn new(config: ModelConfig, seed: u64, init_scale: f64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for (name, shape, init) in param_specs(&config) {
            params.add(name, init_tensor(&shape, init, init_scale, &mut rng));
        }
        Self::from_params(config, params)
    }

    /// Wraps existing parameters, checking names and shapes against `config`.
    pub fn from_params(config: ModelConfig, params: ParamSet<S>) -> Result<Self> {
        config.validate()?;
        let specs = param_specs(&config);
        if specs.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                specs.len(),
                params.len()
            )));
        }
        for (name, shape, _) in &specs {
            let id = params
                .find(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if params.get(id).shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, config implies {shape:?}",
                    params.get(id).shape()
                )));
            }
        }
        let f = |n: &str| params.find(n).expect("checked above");
        let pair = |w: &str, b: &str| LstmIds { w: f(w), b: f(b) };
        let opt = |w: &str, b: &str| params.find(w).map(|_| pair(w, b));
        let ids = Ids {
            embedding: f("embedding"),
            enc_fwd: pair("encoder.forward.w", "encoder.forward.b"),
            enc_bwd: pair("encoder.backward.w", "encoder.backward.b"),
            dec: pair("decoder.w", "decoder.b"),
            attn_query: f("attention.query"),
            attn_key: f("attention.key"),
            attn_bias: f("attention.bias"),
            attn_score: f("attention.score"),
            readout_w: f("readout.w"),
            readout_b: f("readout.b"),
            output_w: f("output.w"),
            output_b: f("output.b"),
            sdu: opt("sdu.w", "sdu.b"),
            ssi: opt("ssi.w", "ssi.b"),
            intent: opt("intent.w", "intent.b"),
            style: params.find("style.table"),
        };
        Ok(Self {
            config,
            params,
            ids,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<S> {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<S>> {
        self.params.find(name).map(|id| self.params.get(id))
    }

    /// Id of a named parameter; panics on unknown names.
    pub fn param_id(&self, name: &str) -> ParamId {
        self.params
            .find(name)
            .unwrap_or_else(|| panic!("no parameter named {name}"))
    }

    /// Same network with a different extension kind. Existing weights are
    /// kept; new extension weights are drawn fresh and the readout columns
    /// that read them start at zero, so the returned model initially
    /// computes the same distributions as `self`.
    pub fn with_extension(&self, ext: ExtKind, seed: u64, init_scale: f64) -> Result<Self> {
        if ext == self.config.ext {
            return Ok(self.clone());
        }
        let old = &self.config;
        let mut config = old.clone();
        config.ext = ext;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base_cols = old.readout_input_dim() - old.ext_dim();

        let mut params = ParamSet::new();
        for (name, shape, init) in param_specs(&config) {
            let value = if name == "readout.w" {
                let src = self.params.get(self.ids.readout_w);
                let mut t = Tensor::<S>::zeros(&shape);
                let (rows, new_cols, old_cols) = (shape[0], shape[1], src.cols());
                // column blocks: [base | intent | style]
                let mut map: Vec<(usize, usize, usize)> = vec![(0, 0, base_cols)];
                let (old_i, new_i) = (base_cols, base_cols);
                if old.ext.has_intent() && ext.has_intent() {
                    map.push((old_i, new_i, old.intent_dim));
                }
                let old_s = old_i + if old.ext.has_intent() { old.intent_dim } else { 0 };
                let new_s = new_i + if ext.has_intent() { config.intent_dim } else { 0 };
                if old.ext.has_style() && ext.has_style() {
                    map.push((old_s, new_s, old.style_dim));
                }
                for r in 0..rows {
                    for &(from, to, len) in &map {
                        let s = &src.data()[r * old_cols + from..r * old_cols + from + len];
                        t.data_mut()[r * new_cols + to..r * new_cols + to + len].copy_from_slice(s);
                    }
                }
                t
            } else if let Some(id) = self.params.find(name) {
                self.params.get(id).clone()
            } else {
                init_tensor(&shape, init, init_scale, &mut rng)
            };
            params.add(name, value);
        }
        Self::from_params(config, params)
    }

    /// Copies the model into another scalar type.
    pub fn cast<T: Scalar>(&self) -> Model<T> {
        let mut params = ParamSet::new();
        for (_, name, t) in self.params.iter() {
            params.add(name, t.cast());
        }
        Model::from_params(self.config.clone(), params).expect("same layout")
    }
}

#[cfg(test)]
mod tests;
