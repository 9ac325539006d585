//! Single-file checkpoints.
//!
//! Layout:
//!
//! ```text
//! b"SALCLUE\0"                magic, 8 bytes
//! u64 little-endian           manifest length in bytes
//! manifest                    UTF-8 JSON
//! zero padding                up to the next multiple of 8
//! data                        every parameter as little-endian f64, at manifest offsets
//! ```
//!
//! Offsets in the manifest are relative to the start of the data section.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::Model;
use crate::autodiff::{ParamSet, Tensor};
use crate::corpus::{TfIdfTable, Vocabulary};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"SALCLUE\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    model: ModelConfig,
    /// Every configuration key used to produce the checkpoint.
    config: BTreeMap<String, String>,
    vocab: String,
    tfidf: TfIdfManifest,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
struct TfIdfManifest {
    documents: usize,
    df: Vec<u32>,
    /// Bit pattern of the `f64`, so the value survives JSON exactly.
    unk_idf_bits: u64,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

/// Everything needed to resume training or generate: weights, vocabulary,
/// tf-idf statistics and the configuration echo.
#[derive(Clone, Debug)]
pub struct Checkpoint<S: Scalar> {
    pub model: Model<S>,
    pub vocab: Vocabulary,
    pub tfidf: TfIdfTable,
    pub config: BTreeMap<String, String>,
}

impl<S: Scalar> Checkpoint<S> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = self.model.params();
        let mut entries = Vec::with_capacity(params.len());
        let mut offset = 0u64;
        for (_, name, t) in params.iter() {
            entries.push(ParamEntry {
                name: name.to_owned(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += 8 * t.numel() as u64;
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            model: self.model.config().clone(),
            config: self.config.clone(),
            vocab: self.vocab.chars().iter().collect(),
            tfidf: TfIdfManifest {
                documents: self.tfidf.documents(),
                df: self.tfidf.df_table().to_vec(),
                unk_idf_bits: self.tfidf.unk_idf().to_bits(),
            },
            params: entries,
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(16 + json.len() + 8 + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        while out.len() % 8 != 0 {
            out.push(0);
        }
        for (_, _, t) in params.iter() {
            for x in t.data() {
                out.extend_from_slice(&x.as_f64().to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_owned());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let json = bytes
            .get(16..16 + len)
            .ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(json)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                manifest.format_version
            )));
        }
        let data_start = (16 + len).div_ceil(8) * 8;
        let data = bytes.get(data_start..).ok_or_else(|| bad("missing data section"))?;

        let mut params = ParamSet::new();
        for e in &manifest.params {
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let raw = data
                .get(start..start + 8 * n)
                .ok_or_else(|| Error::Checkpoint(format!("data for {} out of bounds", e.name)))?;
            let values = raw
                .chunks_exact(8)
                .map(|c| S::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect();
            params.add(e.name.clone(), Tensor::new(e.shape.clone(), values)?);
        }
        let model = Model::from_params(manifest.model, params)?;
        let vocab = Vocabulary::from_chars(manifest.vocab.chars().collect())?;
        if vocab.len() != model.config().vocab_size {
            return Err(Error::Checkpoint(format!(
                "vocabulary has {} entries, model expects {}",
                vocab.len(),
                model.config().vocab_size
            )));
        }
        let tfidf = TfIdfTable::from_parts(
            manifest.tfidf.documents,
            manifest.tfidf.df,
            f64::from_bits(manifest.tfidf.unk_idf_bits),
        );
        Ok(Self {
            model,
            vocab,
            tfidf,
            config: manifest.config,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
