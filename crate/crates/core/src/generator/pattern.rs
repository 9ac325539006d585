use std::fmt;

use serde::Serialize;

use crate::corpus::{Form, Poem, Tone, ToneEntry, ToneLexicon};

/// Required tone at one position of a line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum ToneSlot {
    Ping,
    Ze,
    Any,
}

impl ToneSlot {
    /// Unknown tones match every slot.
    pub fn admits(self, tone: Tone) -> bool {
        match (self, tone) {
            (ToneSlot::Any, _) | (_, Tone::Unknown) => true,
            (ToneSlot::Ping, t) => t == Tone::Ping,
            (ToneSlot::Ze, t) => t == Tone::Ze,
        }
    }

    fn symbol(self) -> char {
        match self {
            ToneSlot::Ping => 'P',
            ToneSlot::Ze => 'Z',
            ToneSlot::Any => '*',
        }
    }
}

/// True when every tone in `tones` fits the slot at the same position.
pub fn line_admits(slots: &[ToneSlot], tones: &[Tone]) -> bool {
    tones.len() <= slots.len() && slots.iter().zip(tones).all(|(s, &t)| s.admits(t))
}

/// Tone slots for the four lines of one legal quatrain shape.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Template {
    pub lines: Vec<Vec<ToneSlot>>,
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, l) in self.lines.iter().enumerate() {
            if i > 0 {
                f.write_str("/")?;
            }
            for s in l {
                write!(f, "{}", s.symbol())?;
            }
        }
        Ok(())
    }
}

/// Legal tone templates per form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatternTable {
    wujue: Vec<Template>,
    qijue: Vec<Template>,
}

const ZZPPZ: &str = "ZZPPZ";
const PPZZP: &str = "PPZZP";
const PPPZZ: &str = "PPPZZ";
const ZZZPP: &str = "ZZZPP";

fn slots(s: &str) -> Vec<ToneSlot> {
    s.chars()
        .map(|c| if c == 'P' { ToneSlot::Ping } else { ToneSlot::Ze })
        .collect()
}

/// Five-character line with the first position free.
fn five(s: &str) -> Vec<ToneSlot> {
    let mut l = slots(s);
    l[0] = ToneSlot::Any;
    l
}

/// Seven-character line: a two-tone prefix opposite to the five-character
/// line's opening, with positions 1 and 3 free.
fn seven(s: &str) -> Vec<ToneSlot> {
    let prefix = if s.starts_with('Z') { "PP" } else { "ZZ" };
    let mut l = slots(&format!("{prefix}{s}"));
    l[0] = ToneSlot::Any;
    l[2] = ToneSlot::Any;
    l
}

impl PatternTable {
    /// The four regular shapes: oblique or level start, with or without a
    /// rhyming first line.
    pub fn standard() -> Self {
        let shapes = [
            [ZZPPZ, PPZZP, PPPZZ, ZZZPP],
            [ZZZPP, PPZZP, PPPZZ, ZZZPP],
            [PPPZZ, ZZZPP, ZZPPZ, PPZZP],
            [PPZZP, ZZZPP, ZZPPZ, PPZZP],
        ];
        let build = |f: fn(&str) -> Vec<ToneSlot>| {
            shapes
                .iter()
                .map(|s| Template {
                    lines: s.iter().map(|l| f(l)).collect(),
                })
                .collect()
        };
        Self {
            wujue: build(five),
            qijue: build(seven),
        }
    }

    /// A table with custom templates; every template must have four lines of the form's length.
    pub fn new(wujue: Vec<Template>, qijue: Vec<Template>) -> Option<Self> {
        let ok = |ts: &[Template], n: usize| {
            !ts.is_empty() && ts.iter().all(|t| t.lines.len() == 4 && t.lines.iter().all(|l| l.len() == n))
        };
        (ok(&wujue, 5) && ok(&qijue, 7)).then_some(Self { wujue, qijue })
    }

    pub fn templates(&self, form: Form) -> &[Template] {
        match form {
            Form::Wujue => &self.wujue,
            Form::Qijue => &self.qijue,
        }
    }
}

impl Default for PatternTable {
    fn default() -> Self {
        Self::standard()
    }
}

/// Result of checking a poem against the form rules.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FormReport {
    pub length_ok: bool,
    /// One flag per template of the form.
    pub tone_ok_per_template: Vec<bool>,
    /// Some template matches all four lines.
    pub tone_ok: bool,
    /// Final characters of lines 2 and 4 share a rhyme group (unknown groups pass).
    pub rhyme_ok: bool,
    /// Whether line 1 joins the rhyme; `None` when a group is unknown.
    pub first_line_rhymes: Option<bool>,
}

impl FormReport {
    pub fn all_ok(&self) -> bool {
        self.length_ok && self.tone_ok && self.rhyme_ok
    }
}

fn same_group(a: Option<u32>, b: Option<u32>) -> Option<bool> {
    Some(a? == b?)
}

/// Checks length, tone templates and rhyme of a poem given as text lines.
pub fn check_form(lines: &[String], form: Form, lexicon: &ToneLexicon, patterns: &PatternTable) -> FormReport {
    let chars: Vec<Vec<char>> = lines.iter().map(|l| l.chars().collect()).collect();
    let length_ok = chars.len() == Poem::LINES && chars.iter().all(|l| l.len() == form.line_len());
    let tones: Vec<Vec<Tone>> = chars
        .iter()
        .map(|l| l.iter().map(|&c| lexicon.tone(c)).collect())
        .collect();
    let tone_ok_per_template: Vec<bool> = patterns
        .templates(form)
        .iter()
        .map(|t| {
            length_ok
                && t.lines
                    .iter()
                    .zip(&tones)
                    .all(|(slots, line)| line.len() == slots.len() && line_admits(slots, line))
        })
        .collect();
    let last = |i: usize| chars.get(i).and_then(|l| l.last()).and_then(|&c| lexicon.rhyme(c));
    let rhyme_ok = same_group(last(1), last(3)).unwrap_or(true);
    FormReport {
        length_ok,
        tone_ok: tone_ok_per_template.iter().any(|&b| b),
        tone_ok_per_template,
        rhyme_ok,
        first_line_rhymes: same_group(last(0), last(1)),
    }
}

/// Tone entries indexed by character id.
pub fn tone_table(lexicon: &ToneLexicon, vocab: &crate::corpus::Vocabulary) -> Vec<ToneEntry> {
    (0..vocab.len() as u32)
        .map(|id| vocab.char(id).map_or(ToneEntry::default(), |c| lexicon.get(c)))
        .collect()
}
