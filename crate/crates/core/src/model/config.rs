use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Form, TfScope};
use crate::error::{Error, Result};

/// How selected salient states are folded into the clue vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClueMode {
    /// Fixed-width clue merged through a tanh layer.
    #[default]
    Sdu,
    /// Projected states concatenated into zero-padded slots.
    Ssi,
}

/// Extra conditioning concatenated to the clue.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtKind {
    #[default]
    None,
    Intent,
    Style,
    IntentStyle,
}

impl ExtKind {
    pub fn has_intent(self) -> bool {
        matches!(self, ExtKind::Intent | ExtKind::IntentStyle)
    }

    pub fn has_style(self) -> bool {
        matches!(self, ExtKind::Style | ExtKind::IntentStyle)
    }

    pub fn with_style(self) -> ExtKind {
        match self {
            ExtKind::None | ExtKind::Style => ExtKind::Style,
            ExtKind::Intent | ExtKind::IntentStyle => ExtKind::IntentStyle,
        }
    }
}

/// Saliency scores from raw attention column mass or tf-idf weighted attention.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SaliencyMode {
    Naive,
    #[default]
    Tfidf,
}

macro_rules! text_enum {
    ($t:ty { $($v:path => $s:literal),+ $(,)? }) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($v => $s),+ })
            }
        }
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($v),)+
                    _ => Err(Error::Config(format!(
                        "{s:?} is not one of {}", [$($s),+].join("|")
                    ))),
                }
            }
        }
    };
}

text_enum!(ClueMode { ClueMode::Sdu => "sdu", ClueMode::Ssi => "ssi" });
text_enum!(ExtKind {
    ExtKind::None => "none",
    ExtKind::Intent => "intent",
    ExtKind::Style => "style",
    ExtKind::IntentStyle => "intent+style",
});
text_enum!(SaliencyMode { SaliencyMode::Naive => "naive", SaliencyMode::Tfidf => "tfidf" });

/// Architecture hyperparameters. Defaults are the full-size dimensions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embedding_dim: usize,
    /// Per direction; encoder states are twice this wide.
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub attention_dim: usize,
    /// SDU clue width.
    pub clue_dim: usize,
    /// Width of one projected state in an SSI clue.
    pub ssi_slot_dim: usize,
    pub intent_dim: usize,
    pub style_dim: usize,
    pub maxout_pieces: usize,
    pub maxout_dim: usize,
    pub clue: ClueMode,
    pub ext: ExtKind,
    pub saliency: SaliencyMode,
    pub tf_scope: TfScope,
    pub k_wujue: usize,
    pub k_qijue: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 0,
            embedding_dim: 256,
            encoder_hidden: 256,
            decoder_hidden: 512,
            attention_dim: 512,
            clue_dim: 512,
            ssi_slot_dim: 100,
            intent_dim: 128,
            style_dim: 64,
            maxout_pieces: 2,
            maxout_dim: 512,
            clue: ClueMode::Sdu,
            ext: ExtKind::None,
            saliency: SaliencyMode::Tfidf,
            tf_scope: TfScope::Line,
            k_wujue: 2,
            k_qijue: 3,
        }
    }
}

pub const STYLE_ROWS: usize = 4;
/// Selection events per poem: after lines 2, 3 and 4 (sources 1, 2, 3).
pub const TRANSITIONS: usize = 3;

impl ModelConfig {
    pub fn encoder_state_dim(&self) -> usize {
        2 * self.encoder_hidden
    }

    pub fn k(&self, form: Form) -> usize {
        match form {
            Form::Wujue => self.k_wujue,
            Form::Qijue => self.k_qijue,
        }
    }

    /// SSI slots available for one poem of `form`.
    pub fn ssi_capacity(&self, form: Form) -> usize {
        self.ssi_slot_dim * TRANSITIONS * self.k(form)
    }

    /// Width of the clue part of the output-layer input.
    pub fn clue_width(&self) -> usize {
        match self.clue {
            ClueMode::Sdu => self.clue_dim,
            ClueMode::Ssi => Form::ALL
                .iter()
                .map(|&f| self.ssi_capacity(f))
                .max()
                .unwrap_or(0),
        }
    }

    pub fn ext_dim(&self) -> usize {
        let mut d = 0;
        if self.ext.has_intent() {
            d += self.intent_dim;
        }
        if self.ext.has_style() {
            d += self.style_dim;
        }
        d
    }

    /// Input width of the maxout layer: `[h'; emb; c; v; e]`.
    pub fn readout_input_dim(&self) -> usize {
        self.decoder_hidden
            + self.embedding_dim
            + self.encoder_state_dim()
            + self.clue_width()
            + self.ext_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("embedding_dim", self.embedding_dim),
            ("encoder_hidden", self.encoder_hidden),
            ("decoder_hidden", self.decoder_hidden),
            ("attention_dim", self.attention_dim),
            ("clue_dim", self.clue_dim),
            ("ssi_slot_dim", self.ssi_slot_dim),
            ("intent_dim", self.intent_dim),
            ("style_dim", self.style_dim),
            ("maxout_pieces", self.maxout_pieces),
            ("maxout_dim", self.maxout_dim),
            ("k_wujue", self.k_wujue),
            ("k_qijue", self.k_qijue),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Applies one `key = value` setting; returns `false` for keys that are not model keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let num = || {
            value
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("{key}: expected a positive integer, got {value:?}")))
        };
        match key {
            "embedding_dim" => self.embedding_dim = num()?,
            "encoder_hidden" => self.encoder_hidden = num()?,
            "decoder_hidden" => self.decoder_hidden = num()?,
            "attention_dim" => self.attention_dim = num()?,
            "clue_dim" => self.clue_dim = num()?,
            "ssi_slot_dim" => self.ssi_slot_dim = num()?,
            "intent_dim" => self.intent_dim = num()?,
            "style_dim" => self.style_dim = num()?,
            "maxout_pieces" => self.maxout_pieces = num()?,
            "maxout_dim" => self.maxout_dim = num()?,
            "k_wujue" => self.k_wujue = num()?,
            "k_qijue" => self.k_qijue = num()?,
            "clue" => self.clue = value.parse()?,
            "ext" => self.ext = value.parse()?,
            "saliency" => self.saliency = value.parse()?,
            "tf_scope" => self.tf_scope = value.parse()?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Flat `key -> value` view (vocab size excluded; it comes from the corpus).
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_owned(), v);
        };
        put("embedding_dim", self.embedding_dim.to_string());
        put("encoder_hidden", self.encoder_hidden.to_string());
        put("decoder_hidden", self.decoder_hidden.to_string());
        put("attention_dim", self.attention_dim.to_string());
        put("clue_dim", self.clue_dim.to_string());
        put("ssi_slot_dim", self.ssi_slot_dim.to_string());
        put("intent_dim", self.intent_dim.to_string());
        put("style_dim", self.style_dim.to_string());
        put("maxout_pieces", self.maxout_pieces.to_string());
        put("maxout_dim", self.maxout_dim.to_string());
        put("k_wujue", self.k_wujue.to_string());
        put("k_qijue", self.k_qijue.to_string());
        put("clue", self.clue.to_string());
        put("ext", self.ext.to_string());
        put("saliency", self.saliency.to_string());
        put(
            "tf_scope",
            match self.tf_scope {
                TfScope::Line => "line".into(),
                TfScope::Poem => "poem".into(),
            },
        );
        m
    }
}
