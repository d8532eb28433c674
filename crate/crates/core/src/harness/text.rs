//! Plain-text inputs and outputs: token files, histogram TSV and JSON
//! documents with byte-offset diagnostics.

use serde::de::DeserializeOwned;

use crate::calibration::Histogram;
use crate::error::{CatsError, Result};
use crate::model::Token;

fn is_sep(c: char) -> bool {
    c.is_whitespace() || c == ','
}

/// Tokens of one line with the byte offset of each, relative to the line.
fn line_tokens(line: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut start = None;
    let mut out = Vec::new();
    for (i, c) in line.char_indices() {
        match (is_sep(c), start) {
            (true, Some(s)) => {
                out.push((s, &line[s..i]));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, &line[s..]));
    }
    out.into_iter()
}

fn parse_token(word: &str, offset: usize) -> Result<Token> {
    word.parse::<Token>()
        .map_err(|_| CatsError::format(offset as u64, format!("invalid token id {word:?}")))
}

/// One sequence per non-empty line; ids separated by whitespace or commas.
pub fn parse_token_lines(text: &str) -> Result<Vec<Vec<Token>>> {
    let mut out = Vec::new();
    let mut base = 0;
    for line in text.split_inclusive('\n') {
        let seq = line_tokens(line)
            .map(|(off, w)| parse_token(w, base + off))
            .collect::<Result<Vec<_>>>()?;
        if !seq.is_empty() {
            out.push(seq);
        }
        base += line.len();
    }
    Ok(out)
}

/// Every id in the file, in order, as a single prompt.
pub fn parse_prompt(text: &str) -> Result<Vec<Token>> {
    Ok(parse_token_lines(text)?.into_iter().flatten().collect())
}

pub fn format_token_lines(seqs: &[Vec<Token>]) -> String {
    let mut s = String::new();
    for seq in seqs {
        let line: Vec<String> = seq.iter().map(|t| t.to_string()).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

/// `left_edge<TAB>count` per bin, then `range_max<TAB>overflow`.
pub fn histogram_tsv(h: &Histogram) -> String {
    let mut s = String::new();
    for (edge, count) in h.edges.iter().zip(&h.counts) {
        s.push_str(&format!("{edge}\t{count}\n"));
    }
    s.push_str(&format!("{}\t{}\n", h.range_max, h.overflow));
    s
}

/// Parses two-column numeric TSV.
pub fn parse_tsv_pairs(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    let mut base = 0;
    for line in text.split_inclusive('\n') {
        let body = line.trim_end_matches(['\n', '\r']);
        if !body.is_empty() {
            let cols: Vec<&str> = body.split('\t').collect();
            if cols.len() != 2 {
                return Err(CatsError::format(
                    base as u64,
                    format!("expected 2 columns, found {}", cols.len()),
                ));
            }
            let num = |s: &str, off: usize| {
                s.parse::<f64>()
                    .map_err(|_| CatsError::format(off as u64, format!("not a number: {s:?}")))
            };
            out.push((num(cols[0], base)?, num(cols[1], base + cols[0].len() + 1)?));
        }
        base += line.len();
    }
    Ok(out)
}

/// Byte offset of 1-based `line`/`column` in `text`.
fn offset_of(text: &str, line: usize, column: usize) -> usize {
    let start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (start + column.saturating_sub(1)).min(text.len())
}

pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text)
        .map_err(|e| CatsError::format(offset_of(text, e.line(), e.column()) as u64, e.to_string()))
}
