//! Reading the text formats accepted on the command line.

use std::fs;
use std::path::Path;

use salient_clue::corpus::{parse_poem, CorpusFormat, RawPoem};
use salient_clue::{Error, Result};
use serde_json::Value;

use crate::invalid;

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Non-empty rows that are not `#` comments, with their 1-based row numbers.
pub fn rows(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
}

pub fn corpus_format(path: &Path) -> CorpusFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") => CorpusFormat::Jsonl,
        _ => CorpusFormat::Pipe,
    }
}

fn is_jsonl(text: &str) -> bool {
    rows(text).next().is_some_and(|(_, l)| l.trim_start().starts_with('{'))
}

fn json_rows(text: &str) -> Result<Vec<(usize, Value)>> {
    rows(text)
        .map(|(n, l)| {
            serde_json::from_str(l)
                .map(|v| (n, v))
                .map_err(|e| invalid(format!("row {n}: {e}")))
        })
        .collect()
}

fn string_list(v: &Value, what: &str, row: usize) -> Result<Vec<String>> {
    v.as_array()
        .and_then(|a| a.iter().map(|s| s.as_str().map(str::to_owned)).collect::<Option<Vec<_>>>())
        .ok_or_else(|| invalid(format!("row {row}: `{what}` must be a list of strings")))
}

fn index_list(v: &Value, row: usize) -> Result<Vec<usize>> {
    v.as_array()
        .and_then(|a| a.iter().map(|x| x.as_u64().map(|i| i as usize)).collect::<Option<Vec<_>>>())
        .ok_or_else(|| invalid(format!("row {row}: expected a list of indices")))
}

/// Poems as lists of lines, without validating their shape. Rows are either
/// generator JSON lines or `L1|L2|...` text (anything after a tab is ignored).
pub fn loose_poems(text: &str) -> Result<Vec<Vec<String>>> {
    if is_jsonl(text) {
        json_rows(text)?
            .iter()
            .map(|(n, v)| string_list(&v["lines"], "lines", *n))
            .collect()
    } else {
        Ok(rows(text)
            .map(|(_, l)| {
                let poem = l.split('\t').next().unwrap_or_default();
                poem.split('|').map(|s| s.trim().to_owned()).collect()
            })
            .collect())
    }
}

/// Hypothesis segments: every line of every poem, in order.
pub fn hypothesis_segments(text: &str) -> Result<Vec<String>> {
    Ok(loose_poems(text)?.into_iter().flatten().collect())
}

/// Reference segments aligned with the hypotheses. Tabs separate alternative
/// references of the same row; `|` splits a row into several segments.
pub fn reference_segments(text: &str) -> Result<Vec<Vec<String>>> {
    let mut out = Vec::new();
    for (n, l) in rows(text) {
        let alts: Vec<Vec<&str>> = l.split('\t').map(|a| a.split('|').map(str::trim).collect()).collect();
        let width = alts[0].len();
        if alts.iter().any(|a| a.len() != width) {
            return Err(invalid(format!("row {n}: alternative references split into different numbers of lines")));
        }
        for i in 0..width {
            out.push(alts.iter().map(|a| a[i].to_owned()).collect());
        }
    }
    Ok(out)
}

/// The first poem record of a file, validated as a quatrain.
pub fn single_poem(text: &str) -> Result<RawPoem> {
    let mut it = rows(text);
    let (n, row) = it.next().ok_or_else(|| invalid("no poem in file"))?;
    if it.next().is_some() {
        return Err(invalid("expected exactly one poem"));
    }
    parse_poem(row, 0).map_err(|e| match e {
        Error::MalformedPoem { line, reason, .. } => invalid(format!("row {n}, line {}: {reason}", line + 1)),
        e => e,
    })
}

type Selections = Vec<Vec<usize>>;

/// Pairs of (model, gold) selections from an annotation file.
pub fn annotation_pairs(text: &str) -> Result<(Selections, Selections)> {
    let v: Value = serde_json::from_str(text).map_err(|e| invalid(format!("annotations: {e}")))?;
    let lines = v["lines"].as_array().ok_or_else(|| invalid("annotations: missing `lines`"))?;
    let mut model = Vec::with_capacity(lines.len());
    let mut gold = Vec::with_capacity(lines.len());
    for (i, l) in lines.iter().enumerate() {
        model.push(index_list(&l["model"], i + 1)?);
        gold.push(index_list(&l["gold"], i + 1)?);
    }
    Ok((model, gold))
}

/// A poem with human-chosen salient positions for lines 1 to 3.
pub struct GoldPoem {
    pub record: RawPoem,
    pub selected: Vec<Vec<usize>>,
}

pub fn gold_poems(text: &str) -> Result<Vec<GoldPoem>> {
    json_rows(text)?
        .into_iter()
        .enumerate()
        .map(|(i, (n, v))| {
            let lines = string_list(&v["lines"], "lines", n)?;
            let mut record = lines.join("|");
            if let Some(k) = v["keyword"].as_str() {
                record.push_str("\t\t");
                record.push_str(k);
            }
            let record = parse_poem(&record, i)?;
            let selected = v["selected"]
                .as_array()
                .ok_or_else(|| invalid(format!("row {n}: missing `selected`")))?
                .iter()
                .map(|s| index_list(s, n))
                .collect::<Result<Vec<_>>>()?;
            if selected.len() != record.lines.len() - 1 {
                return Err(invalid(format!(
                    "row {n}: expected {} selections, got {}",
                    record.lines.len() - 1,
                    selected.len()
                )));
            }
            Ok(GoldPoem { record, selected })
        })
        .collect()
}
