use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tone {
    /// Level tone.
    Ping,
    /// Oblique tone.
    Ze,
    #[default]
    Unknown,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ToneEntry {
    pub tone: Tone,
    pub rhyme: Option<u32>,
}

/// Character → (tone, rhyme group). Characters without an entry are
/// `(Unknown, None)`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ToneLexicon {
    entries: HashMap<char, ToneEntry>,
}

#[derive(Debug)]
pub struct LexiconLoad {
    pub lexicon: ToneLexicon,
    pub rows: usize,
    /// Rows that overwrote an earlier entry for the same character.
    pub duplicates: usize,
}

impl ToneLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, c: char, entry: ToneEntry) -> Option<ToneEntry> {
        self.entries.insert(c, entry)
    }

    pub fn get(&self, c: char) -> ToneEntry {
        self.entries.get(&c).copied().unwrap_or_default()
    }

    pub fn tone(&self, c: char) -> Tone {
        self.get(c).tone
    }

    pub fn rhyme(&self, c: char) -> Option<u32> {
        self.get(c).rhyme
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parses the TSV format: `char \t P|Z \t rhyme-group`. The rhyme column
    /// may be empty or absent. `#` starts a comment line. Duplicate
    /// characters keep the last row.
    pub fn parse(text: &str) -> Result<LexiconLoad> {
        let mut lexicon = ToneLexicon::new();
        let (mut rows, mut duplicates) = (0, 0);
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |why: &str| Error::Invalid(format!("lexicon line {}: {why}: {line:?}", n + 1));
            let mut cols = line.split('\t');
            let ch = cols.next().unwrap_or("");
            let mut cs = ch.chars();
            let c = match (cs.next(), cs.next()) {
                (Some(c), None) => c,
                _ => return Err(bad("first column must be one character")),
            };
            let tone = match cols.next().map(str::trim) {
                Some("P") | Some("p") => Tone::Ping,
                Some("Z") | Some("z") => Tone::Ze,
                Some("") | None => Tone::Unknown,
                Some(_) => return Err(bad("tone must be P or Z")),
            };
            let rhyme = match cols.next().map(str::trim) {
                None | Some("") => None,
                Some(r) => Some(r.parse::<u32>().map_err(|_| bad("rhyme group must be an integer"))?),
            };
            rows += 1;
            if lexicon.insert(c, ToneEntry { tone, rhyme }).is_some() {
                duplicates += 1;
            }
        }
        Ok(LexiconLoad {
            lexicon,
            rows,
            duplicates,
        })
    }

    pub fn to_tsv(&self) -> String {
        let mut rows: Vec<_> = self.entries.iter().collect();
        rows.sort_by_key(|(c, _)| **c);
        let mut out = String::new();
        for (c, e) in rows {
            let t = match e.tone {
                Tone::Ping => "P",
                Tone::Ze => "Z",
                Tone::Unknown => "",
            };
            let r = e.rhyme.map(|r| r.to_string()).unwrap_or_default();
            out.push_str(&format!("{c}\t{t}\t{r}\n"));
        }
        out
    }
}

pub fn load_tone_lexicon(path: impl AsRef<Path>) -> Result<LexiconLoad> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ToneLexicon::parse(&text)
}
