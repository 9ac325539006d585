use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const RESERVED: usize = 4;

/// Character ↔ id mapping shared by encoder and decoder.
///
/// Ids `0..4` are reserved (`PAD`, `BOS`, `EOS`, `UNK`); corpus characters
/// follow in order of descending frequency, ties by ascending codepoint.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    chars: Vec<char>,
    index: HashMap<char, u32>,
}

impl Vocabulary {
    pub fn from_counts(counts: &HashMap<char, usize>) -> Self {
        let mut entries: Vec<(char, usize)> = counts.iter().map(|(&c, &n)| (c, n)).collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        Self::from_chars(entries.into_iter().map(|(c, _)| c).collect())
            .expect("counts have unique keys")
    }

    /// Builds a vocabulary from characters already in id order.
    pub fn from_chars(chars: Vec<char>) -> Result<Self> {
        let mut index = HashMap::with_capacity(chars.len());
        for (i, &c) in chars.iter().enumerate() {
            if index.insert(c, (i + RESERVED) as u32).is_some() {
                return Err(Error::Invalid(format!("duplicate vocabulary character {c:?}")));
            }
        }
        Ok(Self { chars, index })
    }

    /// Characters in id order (reserved ids excluded).
    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    /// Total size including reserved ids.
    pub fn len(&self) -> usize {
        self.chars.len() + RESERVED
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn id(&self, c: char) -> u32 {
        self.index.get(&c).copied().unwrap_or(UNK)
    }

    pub fn get(&self, c: char) -> Option<u32> {
        self.index.get(&c).copied()
    }

    pub fn char(&self, id: u32) -> Option<char> {
        (id as usize)
            .checked_sub(RESERVED)
            .and_then(|i| self.chars.get(i).copied())
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.chars().map(|c| self.id(c)).collect()
    }

    /// Reserved and unknown ids decode to `□`.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter().map(|&i| self.char(i).unwrap_or('□')).collect()
    }

    /// Ids of ordinary characters, in order.
    pub fn content_ids(&self) -> impl Iterator<Item = u32> {
        (RESERVED as u32)..(self.len() as u32)
    }

    /// One character per line, in id order.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.chars.len() * 4);
        for c in &self.chars {
            s.push(*c);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let chars = text
            .lines()
            .filter(|l| !l.is_empty())
            .map(|l| {
                let mut it = l.chars();
                match (it.next(), it.next()) {
                    (Some(c), None) => Ok(c),
                    _ => Err(Error::Invalid(format!("bad vocabulary line {l:?}"))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_chars(chars)
    }
}
