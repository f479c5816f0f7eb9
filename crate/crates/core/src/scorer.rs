//! Edit-level precision, recall and F-beta with micro aggregation.

use std::fmt::Write as _;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::edits::{extract_edits, EditSet, Level};
use crate::{Error, Result};

pub const DEFAULT_BETA: f64 = 0.5;

fn default_beta() -> f64 {
    DEFAULT_BETA
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditIndicators {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub level: Level,
}

impl EditIndicators {
    pub fn zero(level: Level) -> Self {
        EditIndicators {
            tp: 0,
            fp: 0,
            fn_: 0,
            level,
        }
    }

    pub fn new(tp: usize, fp: usize, fn_: usize, level: Level) -> Self {
        EditIndicators { tp, fp, fn_, level }
    }
}

impl AddAssign for EditIndicators {
    fn add_assign(&mut self, rhs: Self) {
        debug_assert_eq!(self.level, rhs.level);
        self.tp += rhs.tp;
        self.fp += rhs.fp;
        self.fn_ += rhs.fn_;
    }
}

impl Add for EditIndicators {
    type Output = Self;

    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrfReport {
    #[serde(rename = "p")]
    pub precision: f64,
    #[serde(rename = "r")]
    pub recall: f64,
    #[serde(rename = "f05")]
    pub f_beta: f64,
    #[serde(skip, default = "default_beta")]
    pub beta: f64,
}

/// Counts exact `(start, end, replacement)` matches between the two sets.
pub fn compare_edits(hypothesis: &EditSet, reference: &EditSet) -> Result<EditIndicators> {
    if hypothesis.level != reference.level {
        return Err(Error::LevelMismatch {
            hypothesis: hypothesis.level,
            reference: reference.level,
        });
    }
    let tp = hypothesis
        .edits
        .iter()
        .filter(|h| reference.edits.contains(h))
        .count();
    Ok(EditIndicators {
        tp,
        fp: hypothesis.len() - tp,
        fn_: reference.len() - tp,
        level: hypothesis.level,
    })
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let den = b2 * precision + recall;
    if den > 0.0 {
        (1.0 + b2) * precision * recall / den
    } else {
        0.0
    }
}

pub fn prf(ind: EditIndicators, beta: f64) -> PrfReport {
    assert!(beta > 0.0, "beta must be positive");
    let precision = ratio(ind.tp, ind.tp + ind.fp);
    let recall = ratio(ind.tp, ind.tp + ind.fn_);
    PrfReport {
        precision,
        recall,
        f_beta: f_beta(precision, recall, beta),
        beta,
    }
}

/// Indicators for one `source -> hypothesis` rewrite against the gold rewrite.
pub fn indicators(
    source: &str,
    hypothesis: &str,
    reference: &str,
    level: Level,
) -> EditIndicators {
    let hyp = extract_edits(source, hypothesis, level);
    let gold = extract_edits(source, reference, level);
    compare_edits(&hyp, &gold).expect("both sets share a level")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusScore {
    pub char: PrfReport,
    pub word: PrfReport,
    pub n_records: usize,
    #[serde(skip)]
    pub char_counts: Option<EditIndicators>,
    #[serde(skip)]
    pub word_counts: Option<EditIndicators>,
}

/// A `(source, hypothesis, reference)` triple.
pub type ScoreRecord<'a> = (&'a str, &'a str, &'a str);

/// Micro-aggregated scores: indicators are summed over every record before
/// precision and recall are computed.
pub fn score_corpus(records: &[ScoreRecord<'_>]) -> Result<CorpusScore> {
    if records.is_empty() {
        return Err(Error::Empty("score corpus"));
    }
    let mut char_sum = EditIndicators::zero(Level::Char);
    let mut word_sum = EditIndicators::zero(Level::Word);
    for (source, hyp, gold) in records {
        char_sum += indicators(source, hyp, gold, Level::Char);
        word_sum += indicators(source, hyp, gold, Level::Word);
    }
    Ok(CorpusScore {
        char: prf(char_sum, DEFAULT_BETA),
        word: prf(word_sum, DEFAULT_BETA),
        n_records: records.len(),
        char_counts: Some(char_sum),
        word_counts: Some(word_sum),
    })
}

/// Plain-text table with char/word P, R, F0.5 columns, values in percent.
/// `extra` adds a trailing column (e.g. LLM coverage) to every row.
pub fn render_table(rows: &[(String, &CorpusScore, Option<f64>)], extra: Option<&str>) -> String {
    let name_width = rows
        .iter()
        .map(|(n, _, _)| n.chars().count())
        .max()
        .unwrap_or(0)
        .max("policy".len());
    let mut out = String::new();
    let _ = write!(
        out,
        "{:<name_width$} | {:>7} {:>7} {:>7} | {:>7} {:>7} {:>7}",
        "policy", "char-P", "char-R", "char-F", "word-P", "word-R", "word-F"
    );
    if let Some(label) = extra {
        let _ = write!(out, " | {label:>7}");
    }
    out.push('\n');
    for (name, score, value) in rows {
        let _ = write!(
            out,
            "{:<name_width$} | {:>7.2} {:>7.2} {:>7.2} | {:>7.2} {:>7.2} {:>7.2}",
            name,
            score.char.precision * 100.0,
            score.char.recall * 100.0,
            score.char.f_beta * 100.0,
            score.word.precision * 100.0,
            score.word.recall * 100.0,
            score.word.f_beta * 100.0,
        );
        if extra.is_some() {
            match value {
                Some(v) => {
                    let _ = write!(out, " | {:>7.2}", v * 100.0);
                }
                None => out.push_str(" |       -"),
            }
        }
        out.push('\n');
    }
    out
}
