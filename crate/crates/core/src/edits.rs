//! Span edits between a source string and a corrected string.
//!
//! Strings are split into units (codepoints, or words with a codepoint
//! fallback for unsegmented scripts), aligned with unit-cost Levenshtein, and
//! every maximal run of non-matching alignment steps becomes one [`Edit`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Scoring granularity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Char,
    Word,
}

impl Level {
    pub const ALL: [Level; 2] = [Level::Char, Level::Word];

    pub fn tokenizer(self) -> Tokenizer {
        match self {
            Level::Char => Tokenizer::Codepoint,
            Level::Word => Tokenizer::WhitespaceThenCodepoint,
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Char => "char",
            Level::Word => "word",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tokenizer {
    /// One unit per unicode codepoint, whitespace included.
    Codepoint,
    /// Whitespace-separated words; a word without any ASCII letter or digit
    /// is split into codepoints.
    WhitespaceThenCodepoint,
}

/// One token. `lead` holds the whitespace that preceded it so that
/// concatenating `lead + text` over all units reproduces the input exactly.
/// Trailing whitespace becomes a final unit with empty `text`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Unit {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub lead: String,
    pub text: String,
}

impl Unit {
    pub fn new(text: impl Into<String>) -> Self {
        Unit {
            lead: String::new(),
            text: text.into(),
        }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.lead)?;
        f.write_str(&self.text)
    }
}

pub fn join_units(units: &[Unit]) -> String {
    let mut out = String::new();
    for u in units {
        out.push_str(&u.lead);
        out.push_str(&u.text);
    }
    out
}

pub fn tokenize(text: &str, tokenizer: Tokenizer) -> Vec<Unit> {
    match tokenizer {
        Tokenizer::Codepoint => text.chars().map(|c| Unit::new(c.to_string())).collect(),
        Tokenizer::WhitespaceThenCodepoint => tokenize_words(text),
    }
}

fn tokenize_words(text: &str) -> Vec<Unit> {
    let mut units = Vec::new();
    let mut lead = String::new();
    let mut word = String::new();

    let flush = |lead: &mut String, word: &mut String, units: &mut Vec<Unit>| {
        if word.is_empty() {
            return;
        }
        if word.chars().any(|c| c.is_ascii_alphanumeric()) {
            units.push(Unit {
                lead: std::mem::take(lead),
                text: std::mem::take(word),
            });
        } else {
            for c in word.chars() {
                units.push(Unit {
                    lead: std::mem::take(lead),
                    text: c.to_string(),
                });
            }
            word.clear();
        }
    };

    for c in text.chars() {
        if c.is_whitespace() {
            flush(&mut lead, &mut word, &mut units);
            lead.push(c);
        } else {
            word.push(c);
        }
    }
    flush(&mut lead, &mut word, &mut units);
    if !lead.is_empty() {
        units.push(Unit {
            lead,
            text: String::new(),
        });
    }
    units
}

/// Replace `source[start..end]` (in units) with `replacement`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edit {
    pub start: usize,
    pub end: usize,
    pub replacement: Vec<Unit>,
}

impl Edit {
    pub fn new(start: usize, end: usize, replacement: Vec<Unit>) -> Self {
        Edit {
            start,
            end,
            replacement,
        }
    }

    /// Convenience constructor that tokenizes `replacement` at `level`.
    pub fn from_text(start: usize, end: usize, replacement: &str, level: Level) -> Self {
        Edit::new(start, end, tokenize(replacement, level.tokenizer()))
    }

    pub fn replacement_text(&self) -> String {
        join_units(&self.replacement)
    }

    pub fn is_insertion(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditSet {
    pub level: Level,
    pub edits: Vec<Edit>,
}

impl EditSet {
    pub fn empty(level: Level) -> Self {
        EditSet {
            level,
            edits: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.edits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edits.is_empty()
    }

    /// Checks the structural invariants against a source of `source_len` units.
    pub fn validate(&self, source: &[Unit]) -> Result<()> {
        let n = source.len();
        let mut prev: Option<&Edit> = None;
        for e in &self.edits {
            if e.start > e.end || e.end > n {
                return Err(Error::InvalidEdits(format!(
                    "span {}..{} out of range for {n} units",
                    e.start, e.end
                )));
            }
            if e.is_insertion() && e.replacement.is_empty() {
                return Err(Error::InvalidEdits(format!(
                    "empty insertion at {}",
                    e.start
                )));
            }
            if source[e.start..e.end] == e.replacement[..] {
                return Err(Error::InvalidEdits(format!(
                    "edit {}..{} changes nothing",
                    e.start, e.end
                )));
            }
            if let Some(p) = prev {
                let ordered = (p.start, p.end) < (e.start, e.end);
                if !ordered || p.end > e.start {
                    return Err(Error::InvalidEdits(format!(
                        "edits {}..{} and {}..{} overlap",
                        p.start, p.end, e.start, e.end
                    )));
                }
            }
            prev = Some(e);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlignOp {
    Match,
    Substitute,
    Delete,
    Insert,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alignment {
    pub ops: Vec<AlignOp>,
}

impl Alignment {
    /// Unit Levenshtein cost implied by the operations.
    pub fn cost(&self) -> usize {
        self.ops.iter().filter(|op| **op != AlignOp::Match).count()
    }
}

/// Minimal-cost alignment of `source` into `target`.
///
/// The backtrace walks from the end and prefers match, then substitute, then
/// delete, then insert whenever several predecessors are optimal.
pub fn align<T: PartialEq>(source: &[T], target: &[T]) -> Alignment {
    let (n, m) = (source.len(), target.len());
    let width = m + 1;
    let mut dist = vec![0usize; (n + 1) * width];
    for j in 0..=m {
        dist[j] = j;
    }
    for i in 1..=n {
        dist[i * width] = i;
        for j in 1..=m {
            let diag = dist[(i - 1) * width + j - 1] + usize::from(source[i - 1] != target[j - 1]);
            let del = dist[(i - 1) * width + j] + 1;
            let ins = dist[i * width + j - 1] + 1;
            dist[i * width + j] = diag.min(del).min(ins);
        }
    }

    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dist[i * width + j];
        if i > 0 && j > 0 {
            let diag = dist[(i - 1) * width + j - 1];
            if source[i - 1] == target[j - 1] && diag == here {
                ops.push(AlignOp::Match);
                i -= 1;
                j -= 1;
                continue;
            }
            if diag + 1 == here {
                ops.push(AlignOp::Substitute);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dist[(i - 1) * width + j] + 1 == here {
            ops.push(AlignOp::Delete);
            i -= 1;
        } else {
            ops.push(AlignOp::Insert);
            j -= 1;
        }
    }
    ops.reverse();
    Alignment { ops }
}

/// Collapses each maximal run of non-match steps into one span edit.
pub fn edits_from_alignment(target: &[Unit], alignment: &Alignment) -> Vec<Edit> {
    let mut edits = Vec::new();
    let (mut i, mut j) = (0usize, 0usize);
    let mut open: Option<(usize, usize)> = None;
    for op in &alignment.ops {
        if *op == AlignOp::Match {
            if let Some((si, sj)) = open.take() {
                edits.push(Edit::new(si, i, target[sj..j].to_vec()));
            }
        } else if open.is_none() {
            open = Some((i, j));
        }
        match op {
            AlignOp::Match | AlignOp::Substitute => {
                i += 1;
                j += 1;
            }
            AlignOp::Delete => i += 1,
            AlignOp::Insert => j += 1,
        }
    }
    if let Some((si, sj)) = open {
        edits.push(Edit::new(si, i, target[sj..j].to_vec()));
    }
    edits
}

pub fn extract_edits(source: &str, target: &str, level: Level) -> EditSet {
    let tok = level.tokenizer();
    let src = tokenize(source, tok);
    let tgt = tokenize(target, tok);
    let alignment = align(&src, &tgt);
    EditSet {
        level,
        edits: edits_from_alignment(&tgt, &alignment),
    }
}

pub fn apply_edits(source: &str, edits: &EditSet) -> Result<String> {
    let mut units = tokenize(source, edits.level.tokenizer());
    edits.validate(&units)?;
    for e in edits.edits.iter().rev() {
        units.splice(e.start..e.end, e.replacement.iter().cloned());
    }
    Ok(join_units(&units))
}

/// One source sentence with its edits, as stored in an M2-style file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct M2Block {
    pub source: String,
    pub edits: EditSet,
}

/// Renders blocks as `S <source>` followed by `A <start> <end>|||<replacement>`
/// lines, blocks separated by a blank line.
pub fn write_m2(blocks: &[M2Block]) -> String {
    let mut out = String::new();
    for (idx, block) in blocks.iter().enumerate() {
        if idx > 0 {
            out.push('\n');
        }
        out.push_str("S ");
        out.push_str(&block.source);
        out.push('\n');
        for e in &block.edits.edits {
            out.push_str(&format!(
                "A {} {}|||{}\n",
                e.start,
                e.end,
                e.replacement_text()
            ));
        }
    }
    out
}

pub fn parse_m2(text: &str, level: Level) -> Result<Vec<M2Block>> {
    let bad = |line: usize, message: String| Error::Parse {
        path: "<m2>".into(),
        line,
        message,
    };
    let mut blocks = Vec::new();
    let mut current: Option<M2Block> = None;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.is_empty() {
            blocks.extend(current.take());
        } else if let Some(source) = line.strip_prefix("S ") {
            blocks.extend(current.take());
            current = Some(M2Block {
                source: source.to_owned(),
                edits: EditSet::empty(level),
            });
        } else if let Some(rest) = line.strip_prefix("A ") {
            let block = current
                .as_mut()
                .ok_or_else(|| bad(lineno, "edit line before any source line".into()))?;
            let (span, replacement) = rest
                .split_once("|||")
                .ok_or_else(|| bad(lineno, "missing ||| separator".into()))?;
            let mut nums = span.split_whitespace().map(str::parse::<usize>);
            let (Some(Ok(start)), Some(Ok(end)), None) = (nums.next(), nums.next(), nums.next())
            else {
                return Err(bad(lineno, format!("bad span {span:?}")));
            };
            block
                .edits
                .edits
                .push(Edit::from_text(start, end, replacement, level));
        } else {
            return Err(bad(lineno, format!("unrecognized line {line:?}")));
        }
    }
    blocks.extend(current);
    Ok(blocks)
}
