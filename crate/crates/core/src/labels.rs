//! Training sets for the three triggers, derived from a corpus and the
//! outputs both correctors produced on it.
//!
//! Edit indicators are counts, so "has no correct edits" reads as `tp == 0`
//! and "has incorrect/missed edits" as `fp > 0` / `fn > 0`. Labels are
//! computed at character level.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::ParallelPair;
use crate::edits::Level;
use crate::scorer::{self, EditIndicators};
use crate::trigger::{featurize, TriggerKind, TrainingExample};
use crate::{jsonl, Result};

pub const LABEL_LEVEL: Level = Level::Char;

/// A corpus pair together with what each corrector made of its source.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionRecord {
    pub pair: ParallelPair,
    pub y_small: String,
    pub y_llm: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Which {
    Small,
    Llm,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub x: String,
    pub y_context: Option<String>,
    pub label: u8,
    pub origin: TriggerKind,
}

impl LabeledExample {
    pub fn to_training(&self, dim: usize) -> TrainingExample {
        TrainingExample::new(
            featurize(&self.x, self.y_context.as_deref(), dim),
            self.label == 1,
        )
    }
}

pub fn indicators_for(record: &CorrectionRecord, which: Which, level: Level) -> EditIndicators {
    let hyp = match which {
        Which::Small => &record.y_small,
        Which::Llm => &record.y_llm,
    };
    scorer::indicators(&record.pair.source, hyp, &record.pair.target, level)
}

fn both(record: &CorrectionRecord) -> (EditIndicators, EditIndicators) {
    (
        indicators_for(record, Which::Small, LABEL_LEVEL),
        indicators_for(record, Which::Llm, LABEL_LEVEL),
    )
}

/// The small model fails in a way the LLM does not: no correct edits where
/// the LLM has some, spurious edits the LLM avoids, or missed edits the LLM
/// fully recovers.
pub fn lt_positive(record: &CorrectionRecord) -> bool {
    let (s, l) = both(record);
    (s.tp == 0 && l.tp > 0) || (s.fp > 0 && l.fp == 0) || (s.fn_ > 0 && l.fn_ == 0)
}

/// An erroneous query on which neither corrector makes a single correct edit.
pub fn ft_positive(record: &CorrectionRecord) -> bool {
    if !record.pair.is_erroneous() {
        return false;
    }
    let (s, l) = both(record);
    s.tp == 0 && l.tp == 0
}

pub fn build_ct(pairs: &[ParallelPair]) -> Vec<LabeledExample> {
    pairs
        .iter()
        .map(|p| LabeledExample {
            x: p.source.clone(),
            y_context: None,
            label: u8::from(p.is_erroneous()),
            origin: TriggerKind::Correction,
        })
        .collect()
}

/// Keeps every positive and a seeded uniform sample of
/// `min(#positives, #negatives)` negatives, returned in record id order.
fn balance(
    mut candidates: Vec<(&CorrectionRecord, bool)>,
    seed: u64,
    origin: TriggerKind,
) -> Vec<(&CorrectionRecord, bool)> {
    candidates.sort_by(|a, b| a.0.pair.id.cmp(&b.0.pair.id));
    let positives = candidates.iter().filter(|c| c.1).count();
    if positives == 0 {
        log::warn!("{origin}: no positive examples; label set is empty");
        return Vec::new();
    }
    let negatives: Vec<usize> = (0..candidates.len()).filter(|&i| !candidates[i].1).collect();
    let k = positives.min(negatives.len());
    if k < positives {
        log::warn!("{origin}: only {k} negatives available for {positives} positives");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep: Vec<bool> = candidates.iter().map(|c| c.1).collect();
    for j in rand::seq::index::sample(&mut rng, negatives.len(), k) {
        keep[negatives[j]] = true;
    }
    candidates
        .into_iter()
        .zip(keep)
        .filter_map(|(c, k)| k.then_some(c))
        .collect()
}

pub fn build_lt(records: &[CorrectionRecord], seed: u64) -> Vec<LabeledExample> {
    let candidates = records.iter().map(|r| (r, lt_positive(r))).collect();
    balance(candidates, seed, TriggerKind::Llm)
        .into_iter()
        .map(|(r, positive)| LabeledExample {
            x: r.pair.source.clone(),
            y_context: Some(r.y_small.clone()),
            label: u8::from(positive),
            origin: TriggerKind::Llm,
        })
        .collect()
}

/// Only erroneous pairs take part. The context is the rewrite the cascade
/// would hand to the fallback trigger: the LLM's when the record satisfies
/// the LLM-trigger rule, the small model's otherwise.
pub fn build_ft(records: &[CorrectionRecord], seed: u64) -> Vec<LabeledExample> {
    let candidates = records
        .iter()
        .filter(|r| r.pair.is_erroneous())
        .map(|r| (r, ft_positive(r)))
        .collect();
    balance(candidates, seed, TriggerKind::Fallback)
        .into_iter()
        .map(|(r, positive)| {
            let y_c = if lt_positive(r) { &r.y_llm } else { &r.y_small };
            LabeledExample {
                x: r.pair.source.clone(),
                y_context: Some(y_c.clone()),
                label: u8::from(positive),
                origin: TriggerKind::Fallback,
            }
        })
        .collect()
}

pub fn save_labels(path: &Path, examples: &[LabeledExample]) -> Result<()> {
    jsonl::write(path, examples)
}

pub fn load_labels(path: &Path) -> Result<Vec<LabeledExample>> {
    jsonl::read(path)
}

pub fn save_records(path: &Path, records: &[CorrectionRecord]) -> Result<()> {
    jsonl::write(path, records)
}

pub fn load_records(path: &Path) -> Result<Vec<CorrectionRecord>> {
    jsonl::read(path)
}
