//! Binary trigger scorers: hashed character n-gram features and a logistic
//! model trained with binary cross-entropy.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{jsonl, Error, Result};

pub const DEFAULT_DIM: usize = 1 << 14;
pub const DEFAULT_THRESHOLD: f64 = 0.5;
const MODEL_FORMAT: u32 = 1;

const NS_FIRST: u8 = 0;
const NS_SECOND: u8 = 1;
const NS_SEPARATOR: u8 = 2;

/// Sparse bag of hashed n-gram counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
    pub dim: usize,
}

impl FeatureVector {
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| (i as usize, v))
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }
}

pub(crate) fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for b in *part {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

fn add_ngrams(text: &str, namespace: u8, mask: u64, counts: &mut BTreeMap<u32, f64>) {
    let chars: Vec<char> = text.chars().collect();
    let mut buf = String::new();
    for n in 1..=3usize {
        for window in chars.windows(n) {
            buf.clear();
            buf.extend(window);
            let bucket = fnv1a(&[&[namespace, n as u8], buf.as_bytes()]) & mask;
            *counts.entry(bucket as u32).or_insert(0.0) += 1.0;
        }
    }
}

/// Character 1-3 gram counts of `x`, hashed into `dim` buckets. When `y` is
/// given, a separator feature is added and `y`'s n-grams are hashed in their
/// own namespace, so `(x, y)` and `(y, x)` encode differently.
///
/// Panics if `dim` is not a power of two that fits in `u32`.
pub fn featurize(x: &str, y: Option<&str>, dim: usize) -> FeatureVector {
    assert!(
        dim.is_power_of_two() && dim <= 1 << 32,
        "feature dim must be a power of two, got {dim}"
    );
    let mask = (dim - 1) as u64;
    let mut counts = BTreeMap::new();
    add_ngrams(x, NS_FIRST, mask, &mut counts);
    if let Some(y) = y {
        let sep = fnv1a(&[&[NS_SEPARATOR], b"[SEP]"]) & mask;
        *counts.entry(sep as u32).or_insert(0.0) += 1.0;
        add_ngrams(y, NS_SECOND, mask, &mut counts);
    }
    let (indices, values) = counts.into_iter().unzip();
    FeatureVector {
        indices,
        values,
        dim,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TriggerKind {
    /// Does the query need correcting at all.
    #[serde(rename = "CT")]
    Correction,
    /// Should the small model's rewrite be escalated to the LLM.
    #[serde(rename = "LT")]
    Llm,
    /// Should every rewrite be discarded in favour of the original query.
    #[serde(rename = "FT")]
    Fallback,
    /// Baseline router choosing small vs LLM from the query alone.
    #[serde(rename = "META_ROUTER")]
    MetaRouter,
    /// Baseline preference model: will the LLM beat the small model.
    #[serde(rename = "HYBRID_ROUTER")]
    HybridRouter,
}

impl fmt::Display for TriggerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TriggerKind::Correction => "CT",
            TriggerKind::Llm => "LT",
            TriggerKind::Fallback => "FT",
            TriggerKind::MetaRouter => "META_ROUTER",
            TriggerKind::HybridRouter => "HYBRID_ROUTER",
        })
    }
}

/// A thresholded probability, kept in traces.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub p: f64,
    pub fired: bool,
}

/// Anything that can decide on a query, optionally paired with a rewrite.
pub trait Trigger: Send + Sync {
    fn decide(&self, x: &str, context: Option<&str>) -> Decision;
}

/// Probability reported by [`RuleTrigger`] when its rule holds; the
/// complement is reported otherwise.
pub const RULE_CONFIDENCE: f64 = 0.999;

/// A trigger backed by a hand-written rule instead of a trained model. Used
/// for oracle experiments and for forcing cascade paths in tests.
pub struct RuleTrigger<F>(pub F);

impl<F> Trigger for RuleTrigger<F>
where
    F: Fn(&str, Option<&str>) -> bool + Send + Sync,
{
    fn decide(&self, x: &str, context: Option<&str>) -> Decision {
        let fired = (self.0)(x, context);
        Decision {
            p: if fired { RULE_CONFIDENCE } else { 1.0 - RULE_CONFIDENCE },
            fired,
        }
    }
}

/// A trigger that always (or never) fires.
pub fn fixed(fire: bool) -> RuleTrigger<impl Fn(&str, Option<&str>) -> bool + Send + Sync> {
    RuleTrigger(move |_: &str, _: Option<&str>| fire)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriggerModel {
    pub kind: TriggerKind,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub threshold: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: u32,
    kind: TriggerKind,
    dim: usize,
    bias: f64,
    threshold: f64,
    weights: Vec<f64>,
}

impl TriggerModel {
    pub fn zeros(kind: TriggerKind, dim: usize) -> Self {
        TriggerModel {
            kind,
            weights: vec![0.0; dim],
            bias: 0.0,
            threshold: DEFAULT_THRESHOLD,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    fn logit(&self, f: &FeatureVector) -> f64 {
        self.bias + f.iter().map(|(i, v)| self.weights[i] * v).sum::<f64>()
    }

    pub fn score(&self, f: &FeatureVector) -> Result<f64> {
        if f.dim != self.dim() {
            return Err(Error::DimMismatch {
                model: self.dim(),
                features: f.dim,
            });
        }
        Ok(sigmoid(self.logit(f)))
    }

    /// Fires when `p >= threshold`.
    pub fn decide_features(&self, f: &FeatureVector) -> Result<Decision> {
        let p = self.score(f)?;
        Ok(Decision {
            p,
            fired: p >= self.threshold,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        jsonl::write_json(
            path,
            &ModelFile {
                format: MODEL_FORMAT,
                kind: self.kind,
                dim: self.dim(),
                bias: self.bias,
                threshold: self.threshold,
                weights: self.weights.clone(),
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: ModelFile = jsonl::read_json(path)?;
        let invalid = |message: String| Error::Schema {
            path: path.to_owned(),
            line: 1,
            message,
        };
        if file.format != MODEL_FORMAT {
            return Err(invalid(format!("unsupported model format {}", file.format)));
        }
        if file.weights.len() != file.dim || !file.dim.is_power_of_two() {
            return Err(invalid(format!(
                "dim {} does not match {} weights",
                file.dim,
                file.weights.len()
            )));
        }
        if !(file.threshold > 0.0 && file.threshold < 1.0) {
            return Err(invalid(format!("threshold {} outside (0,1)", file.threshold)));
        }
        Ok(TriggerModel {
            kind: file.kind,
            weights: file.weights,
            bias: file.bias,
            threshold: file.threshold,
        })
    }
}

impl Trigger for TriggerModel {
    fn decide(&self, x: &str, context: Option<&str>) -> Decision {
        let f = featurize(x, context, self.dim());
        self.decide_features(&f).expect("features built at model dim")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.5,
            epochs: 30,
            batch_size: 32,
            l2: 1e-6,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.epochs == 0 || self.batch_size == 0 || !(self.l2 >= 0.0)
        {
            return Err(Error::Config(format!(
                "invalid training config: {self:?} (learning_rate > 0, epochs > 0, batch_size > 0, l2 >= 0)"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub features: FeatureVector,
    pub label: bool,
}

impl TrainingExample {
    pub fn new(features: FeatureVector, label: bool) -> Self {
        TrainingExample { features, label }
    }
}

/// Mean binary cross-entropy plus `l2 * ||w||^2` (the bias is not penalized).
pub fn objective(model: &TriggerModel, examples: &[TrainingExample], l2: f64) -> f64 {
    let bce: f64 = examples
        .iter()
        .map(|ex| {
            let z = model.logit(&ex.features);
            softplus(z) - if ex.label { z } else { 0.0 }
        })
        .sum::<f64>()
        / examples.len() as f64;
    bce + l2 * model.weights.iter().map(|w| w * w).sum::<f64>()
}

/// Analytic gradient of [`objective`] with respect to `(weights, bias)`.
pub fn gradient(model: &TriggerModel, examples: &[TrainingExample], l2: f64) -> (Vec<f64>, f64) {
    let n = examples.len() as f64;
    let mut gw: Vec<f64> = model.weights.iter().map(|w| 2.0 * l2 * w).collect();
    let mut gb = 0.0;
    for ex in examples {
        let r = (sigmoid(model.logit(&ex.features)) - f64::from(u8::from(ex.label))) / n;
        gb += r;
        for (i, v) in ex.features.iter() {
            gw[i] += r * v;
        }
    }
    (gw, gb)
}

fn check_examples(examples: &[TrainingExample]) -> Result<usize> {
    let dim = examples
        .first()
        .map(|e| e.features.dim)
        .ok_or_else(|| Error::DegenerateLabels("no training examples".into()))?;
    if let Some(bad) = examples.iter().find(|e| e.features.dim != dim) {
        return Err(Error::DimMismatch {
            model: dim,
            features: bad.features.dim,
        });
    }
    let positives = examples.iter().filter(|e| e.label).count();
    if positives == 0 || positives == examples.len() {
        return Err(Error::DegenerateLabels(format!(
            "{positives} positives out of {} examples",
            examples.len()
        )));
    }
    Ok(dim)
}

#[derive(Clone, Debug)]
pub struct Training {
    pub model: TriggerModel,
    /// Full-set objective before training, then after every epoch.
    pub loss_history: Vec<f64>,
}

pub fn train(
    kind: TriggerKind,
    examples: &[TrainingExample],
    cfg: &TrainConfig,
) -> Result<TriggerModel> {
    train_with_history(kind, examples, cfg).map(|t| t.model)
}

/// Mini-batch gradient descent on [`objective`]. The L2 term is applied as
/// an implicit (proximal) shrink, `w <- (w - lr*g) / (1 + 2*lr*l2)`, which is
/// stable for any penalty strength.
pub fn train_with_history(
    kind: TriggerKind,
    examples: &[TrainingExample],
    cfg: &TrainConfig,
) -> Result<Training> {
    cfg.validate()?;
    let dim = check_examples(examples)?;
    let mut model = TriggerModel::zeros(kind, dim);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let lr = cfg.learning_rate;
    let shrink = 1.0 / (1.0 + 2.0 * lr * cfg.l2);
    let mut grad = vec![0.0; dim];
    let mut touched: Vec<usize> = Vec::new();

    let mut loss_history = Vec::with_capacity(cfg.epochs + 1);
    loss_history.push(objective(&model, examples, cfg.l2));
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let mut gb = 0.0;
            touched.clear();
            for &idx in batch {
                let ex = &examples[idx];
                let r = (sigmoid(model.logit(&ex.features)) - f64::from(u8::from(ex.label))) * scale;
                gb += r;
                for (i, v) in ex.features.iter() {
                    if grad[i] == 0.0 {
                        touched.push(i);
                    }
                    grad[i] += r * v;
                }
            }
            for &i in &touched {
                model.weights[i] -= lr * grad[i];
                grad[i] = 0.0;
            }
            if cfg.l2 > 0.0 {
                model.weights.iter_mut().for_each(|w| *w *= shrink);
            }
            model.bias -= lr * gb;
        }
        loss_history.push(objective(&model, examples, cfg.l2));
    }
    Ok(Training {
        model,
        loss_history,
    })
}

/// Fraction of examples whose decision matches the label.
pub fn accuracy(model: &TriggerModel, examples: &[TrainingExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Empty("examples"));
    }
    let mut right = 0usize;
    for ex in examples {
        if model.decide_features(&ex.features)?.fired == ex.label {
            right += 1;
        }
    }
    Ok(right as f64 / examples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const DIM: usize = 1 << 16;

    fn one_hot(bucket: u32, dim: usize) -> FeatureVector {
        FeatureVector {
            indices: vec![bucket],
            values: vec![1.0],
            dim,
        }
    }

    #[test]
    fn featurize_examples() {
        let f = featurize("a", None, DIM);
        assert_eq!(f.nnz(), 1);
        assert_eq!(f.values, [1.0]);
        assert_eq!(featurize("query text", None, DIM), featurize("query text", None, DIM));
        assert_ne!(
            featurize("ab", Some("cd"), DIM),
            featurize("cd", Some("ab"), DIM)
        );
    }

    #[test]
    fn featurize_counts_repeated_ngrams() {
        // "aa": unigram "a" twice, bigram "aa" once.
        let f = featurize("aa", None, DIM);
        let mut values = f.values.clone();
        values.sort_by(f64::total_cmp);
        assert_eq!(values, [1.0, 2.0]);
        assert!(f.indices.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    #[should_panic(expected = "power of two")]
    fn featurize_rejects_odd_dim() {
        featurize("a", None, 1000);
    }

    #[test]
    fn score_examples() {
        let zero = TriggerModel::zeros(TriggerKind::Correction, 8);
        assert_eq!(zero.score(&one_hot(3, 8)).unwrap(), 0.5);

        let mut saturated = zero.clone();
        saturated.bias = 30.0;
        assert!(saturated.score(&one_hot(3, 8)).unwrap() > 1.0 - 1e-9);

        let mut m = zero.clone();
        m.weights[1] = 0.2;
        m.weights[5] = 0.2;
        m.bias = 0.1;
        let f = FeatureVector {
            indices: vec![1, 5],
            values: vec![1.0, 2.0],
            dim: 8,
        };
        // z = 0.1 + 0.2 + 0.2 * 2 = 0.7
        assert_abs_diff_eq!(m.score(&f).unwrap(), 0.668_187_772_168_166, epsilon = 1e-6);

        assert!(matches!(
            zero.score(&one_hot(0, 16)),
            Err(Error::DimMismatch { model: 8, features: 16 })
        ));
    }

    #[test]
    fn decide_uses_inclusive_threshold() {
        let mut m = TriggerModel::zeros(TriggerKind::Llm, 4);
        let f = one_hot(0, 4);
        let at = |m: &TriggerModel| m.decide_features(&f).unwrap().fired;
        m.bias = 0.7f64.ln() - 0.3f64.ln(); // p = 0.7
        assert!(at(&m));
        m.bias = 0.0; // p = 0.5
        assert!(at(&m));
        m.bias = 0.3f64.ln() - 0.7f64.ln(); // p = 0.3
        assert!(!at(&m));
    }

    fn separable(dim: usize, flip: bool) -> Vec<TrainingExample> {
        vec![
            TrainingExample::new(one_hot(1, dim), !flip),
            TrainingExample::new(one_hot(2, dim), flip),
        ]
    }

    #[test]
    fn train_separates_two_points() {
        let cfg = TrainConfig {
            epochs: 200,
            ..TrainConfig::default()
        };
        let data = separable(16, false);
        let model = train(TriggerKind::Correction, &data, &cfg).unwrap();
        assert_eq!(accuracy(&model, &data).unwrap(), 1.0);
        assert_eq!(model.threshold, 0.5);

        let flipped = train(TriggerKind::Correction, &separable(16, true), &cfg).unwrap();
        for ex in &data {
            assert_ne!(
                model.decide_features(&ex.features).unwrap().fired,
                flipped.decide_features(&ex.features).unwrap().fired
            );
        }
    }

    #[test]
    fn huge_l2_pins_scores_to_half() {
        let cfg = TrainConfig {
            l2: 1e6,
            epochs: 200,
            ..TrainConfig::default()
        };
        let data = separable(16, false);
        let model = train(TriggerKind::Correction, &data, &cfg).unwrap();
        for ex in &data {
            assert_abs_diff_eq!(model.score(&ex.features).unwrap(), 0.5, epsilon = 0.01);
        }
    }

    #[test]
    fn small_learning_rate_never_increases_loss() {
        let data: Vec<TrainingExample> = ["typo", "tpyo", "fine", "good", "gdoo", "cool"]
            .iter()
            .zip([true, true, false, false, true, false])
            .map(|(q, l)| TrainingExample::new(featurize(q, None, 64), l))
            .collect();
        let cfg = TrainConfig {
            learning_rate: 0.01,
            epochs: 50,
            batch_size: 2,
            l2: 1e-3,
            seed: 7,
        };
        let t = train_with_history(TriggerKind::Correction, &data, &cfg).unwrap();
        for w in t.loss_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", t.loss_history);
        }
        let zero = TriggerModel::zeros(TriggerKind::Correction, 64);
        assert!(objective(&t.model, &data, cfg.l2) <= objective(&zero, &data, cfg.l2));
    }

    #[test]
    fn train_rejects_degenerate_labels() {
        let data = vec![TrainingExample::new(one_hot(1, 8), true)];
        assert!(matches!(
            train(TriggerKind::Fallback, &data, &TrainConfig::default()),
            Err(Error::DegenerateLabels(_))
        ));
        assert!(train(TriggerKind::Fallback, &[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let data: Vec<TrainingExample> = (0..20)
            .map(|i| TrainingExample::new(featurize(&format!("q{i}"), None, 32), i % 3 == 0))
            .collect();
        let cfg = TrainConfig::default();
        assert_eq!(
            train(TriggerKind::Llm, &data, &cfg).unwrap(),
            train(TriggerKind::Llm, &data, &cfg).unwrap()
        );
    }

    #[test]
    fn model_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ct.json");
        let mut m = TriggerModel::zeros(TriggerKind::Correction, 8);
        m.weights[3] = -1.25;
        m.bias = 0.5;
        m.save(&path).unwrap();
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(v["format"], 1);
        assert_eq!(v["kind"], "CT");
        assert_eq!(v["dim"], 8);
        assert_eq!(TriggerModel::load(&path).unwrap(), m);

        std::fs::write(&path, r#"{"format":2,"kind":"CT","dim":1,"bias":0,"threshold":0.5,"weights":[0]}"#)
            .unwrap();
        assert!(TriggerModel::load(&path).is_err());
        std::fs::write(&path, r#"{"format":1,"kind":"CT","dim":2,"bias":0,"threshold":0.5,"weights":[0]}"#)
            .unwrap();
        assert!(TriggerModel::load(&path).is_err());
    }
}
