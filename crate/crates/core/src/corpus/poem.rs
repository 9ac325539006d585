use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Quatrain form: five or seven characters per line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Form {
    Wujue,
    Qijue,
}

impl Form {
    pub const ALL: [Form; 2] = [Form::Wujue, Form::Qijue];

    pub fn line_len(self) -> usize {
        match self {
            Form::Wujue => 5,
            Form::Qijue => 7,
        }
    }

    pub fn from_line_len(len: usize) -> Option<Form> {
        match len {
            5 => Some(Form::Wujue),
            7 => Some(Form::Qijue),
            _ => None,
        }
    }
}

impl fmt::Display for Form {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Form::Wujue => "wujue",
            Form::Qijue => "qijue",
        })
    }
}

impl FromStr for Form {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "wujue" => Ok(Form::Wujue),
            "qijue" => Ok(Form::Qijue),
            _ => Err(Error::Invalid(format!("unknown form {s:?}"))),
        }
    }
}

/// Style label. `None` marks a poem annotated as having no particular style.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    Pastoral,
    Battlefield,
    Romantic,
    None,
}

impl Style {
    pub const ALL: [Style; 4] = [Style::Pastoral, Style::Battlefield, Style::Romantic, Style::None];

    /// Row of the style embedding table.
    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Style> {
        Self::ALL.get(id).copied()
    }
}

impl fmt::Display for Style {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Style::Pastoral => "pastoral",
            Style::Battlefield => "battlefield",
            Style::Romantic => "romantic",
            Style::None => "none",
        })
    }
}

impl FromStr for Style {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "pastoral" => Ok(Style::Pastoral),
            "battlefield" => Ok(Style::Battlefield),
            "romantic" => Ok(Style::Romantic),
            "none" => Ok(Style::None),
            _ => Err(Error::Invalid(format!("unknown style {s:?}"))),
        }
    }
}

/// A quatrain as character ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Poem {
    pub form: Form,
    pub lines: Vec<Vec<u32>>,
    /// `None` when the corpus carries no annotation.
    pub style: Option<Style>,
    pub keyword: Option<Vec<u32>>,
}

impl Poem {
    pub const LINES: usize = 4;

    pub fn new(form: Form, lines: Vec<Vec<u32>>) -> Result<Self, Error> {
        let p = Poem {
            form,
            lines,
            style: None,
            keyword: None,
        };
        p.validate(0)?;
        Ok(p)
    }

    pub(crate) fn validate(&self, index: usize) -> Result<(), Error> {
        if self.lines.len() != Self::LINES {
            return Err(Error::MalformedPoem {
                poem: index,
                line: self.lines.len().min(Self::LINES),
                reason: format!("expected 4 lines, found {}", self.lines.len()),
            });
        }
        for (i, l) in self.lines.iter().enumerate() {
            if l.len() != self.form.line_len() {
                return Err(Error::MalformedPoem {
                    poem: index,
                    line: i,
                    reason: format!(
                        "line has {} characters, {} needs {}",
                        l.len(),
                        self.form,
                        self.form.line_len()
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn chars(&self) -> impl Iterator<Item = u32> + '_ {
        self.lines.iter().flatten().copied()
    }
}
