//! Baseline ways of combining a small corrector with an LLM, next to the
//! three-trigger cascade, all producing the same outcome traces.
//!
//! Routing policies pick one corrector up front and call the LLM without a
//! hint. Cascading policies always run the small model first and pass its
//! rewrite to the LLM when they escalate.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::ParallelPair;
use crate::labels::{indicators_for, CorrectionRecord, Which, LABEL_LEVEL};
use crate::pipeline::{self, call, ordered_map, Corrector, PipelineOutcome, TriggerSet};
use crate::scorer::{prf, DEFAULT_BETA};
use crate::trigger::{self, featurize, Decision, TrainConfig, Trigger, TriggerKind, TriggerModel, TrainingExample};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    RandomRouting,
    MetaRouting,
    Hybrid,
    RandomCascading,
    MarginSampling,
    Trigger3,
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyKind::RandomRouting => "random_routing",
            PolicyKind::MetaRouting => "meta_routing",
            PolicyKind::Hybrid => "hybrid",
            PolicyKind::RandomCascading => "random_cascading",
            PolicyKind::MarginSampling => "margin_sampling",
            PolicyKind::Trigger3 => "trigger3",
        })
    }
}

pub enum Policy {
    /// Send each query to the LLM with probability `p`, else to the small model.
    RandomRouting { p: f64, seed: u64 },
    /// A router trained on the query predicts whether the small model fails.
    MetaRouting { router: TriggerModel },
    /// A preference model predicts whether the LLM corrects better.
    Hybrid { router: TriggerModel },
    /// Small model first, then the LLM with probability `p`.
    RandomCascading { p: f64, seed: u64 },
    /// Small model first, then the LLM when the small model's confidence is
    /// below `tau`.
    MarginSampling { tau: f64 },
    Trigger3 { triggers: TriggerSet },
}

impl Policy {
    pub fn kind(&self) -> PolicyKind {
        match self {
            Policy::RandomRouting { .. } => PolicyKind::RandomRouting,
            Policy::MetaRouting { .. } => PolicyKind::MetaRouting,
            Policy::Hybrid { .. } => PolicyKind::Hybrid,
            Policy::RandomCascading { .. } => PolicyKind::RandomCascading,
            Policy::MarginSampling { .. } => PolicyKind::MarginSampling,
            Policy::Trigger3 { .. } => PolicyKind::Trigger3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{} {name} must be in [0,1], got {v}", self.kind())))
            }
        };
        match self {
            Policy::RandomRouting { p, .. } | Policy::RandomCascading { p, .. } => check("p", *p),
            Policy::MarginSampling { tau } => check("tau", *tau),
            _ => Ok(()),
        }
    }
}

/// Uniform draws made up front, in input order, so that parallel dispatch
/// cannot change which queries escalate.
fn draws(n: usize, p: f64, seed: u64) -> Vec<Decision> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Decision {
            p,
            fired: rng.random::<f64>() < p,
        })
        .collect()
}

fn route(x: &str, decision: Decision, small: &dyn Corrector, llm: &dyn Corrector) -> PipelineOutcome {
    let mut out = PipelineOutcome::start(x);
    out.router = Some(decision);
    if decision.fired {
        out.llm_called = true;
        match call(llm, x, None) {
            Ok(c) => {
                out.y_llm = Some(c.corrected.clone());
                out.y_final = c.corrected;
            }
            Err(e) => return out.fail(e),
        }
    } else {
        out.small_called = true;
        match call(small, x, None) {
            Ok(c) => {
                out.small_confidence = Some(c.confidence);
                out.y_small = Some(c.corrected.clone());
                out.y_final = c.corrected;
            }
            Err(e) => return out.fail(e),
        }
    }
    out
}

/// Runs the small model, then the LLM (with the small rewrite as hint) when
/// `escalate` says so given the small model's confidence.
fn cascade(
    x: &str,
    small: &dyn Corrector,
    llm: &dyn Corrector,
    escalate: impl FnOnce(f64) -> Decision,
) -> PipelineOutcome {
    let mut out = PipelineOutcome::start(x);
    out.small_called = true;
    let first = match call(small, x, None) {
        Ok(c) => c,
        Err(e) => return out.fail(e),
    };
    out.small_confidence = Some(first.confidence);
    out.y_small = Some(first.corrected.clone());
    out.y_final = first.corrected.clone();
    let decision = escalate(first.confidence);
    out.router = Some(decision);
    if decision.fired {
        out.llm_called = true;
        match call(llm, x, Some(&first.corrected)) {
            Ok(c) => {
                out.y_llm = Some(c.corrected.clone());
                out.y_final = c.corrected;
            }
            Err(e) => return out.fail(e),
        }
    }
    out
}

pub fn run_policy(
    policy: &Policy,
    pairs: &[ParallelPair],
    small: &dyn Corrector,
    llm: &dyn Corrector,
    parallelism: usize,
) -> Result<Vec<PipelineOutcome>> {
    policy.validate()?;
    let outcomes = match policy {
        Policy::Trigger3 { triggers } => {
            pipeline::run_corpus(pairs, triggers, small, llm, parallelism)
        }
        Policy::RandomRouting { p, seed } => {
            let jobs: Vec<_> = pairs.iter().zip(draws(pairs.len(), *p, *seed)).collect();
            ordered_map(&jobs, parallelism, |(pair, d)| route(&pair.source, *d, small, llm))
        }
        Policy::MetaRouting { router } | Policy::Hybrid { router } => {
            ordered_map(pairs, parallelism, |pair| {
                route(&pair.source, router.decide(&pair.source, None), small, llm)
            })
        }
        Policy::RandomCascading { p, seed } => {
            let jobs: Vec<_> = pairs.iter().zip(draws(pairs.len(), *p, *seed)).collect();
            ordered_map(&jobs, parallelism, |(pair, d)| cascade(&pair.source, small, llm, |_| *d))
        }
        Policy::MarginSampling { tau } => ordered_map(pairs, parallelism, |pair| {
            cascade(&pair.source, small, llm, |confidence| Decision {
                p: confidence,
                fired: confidence < *tau,
            })
        }),
    };
    Ok(outcomes)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouterKind {
    MetaRouting,
    Hybrid,
}

impl RouterKind {
    pub fn trigger_kind(self) -> TriggerKind {
        match self {
            RouterKind::MetaRouting => TriggerKind::MetaRouter,
            RouterKind::Hybrid => TriggerKind::HybridRouter,
        }
    }
}

/// Positive means "send this query to the LLM".
///
/// Meta routing: the small model fails on an erroneous query (no correct
/// edit, a spurious edit, or a missed edit). Hybrid: the LLM's per-query
/// F0.5 is strictly higher than the small model's.
pub fn router_label(kind: RouterKind, record: &CorrectionRecord) -> bool {
    let s = indicators_for(record, Which::Small, LABEL_LEVEL);
    match kind {
        RouterKind::MetaRouting => {
            record.pair.is_erroneous() && (s.tp == 0 || s.fp > 0 || s.fn_ > 0)
        }
        RouterKind::Hybrid => {
            let l = indicators_for(record, Which::Llm, LABEL_LEVEL);
            prf(l, DEFAULT_BETA).f_beta > prf(s, DEFAULT_BETA).f_beta
        }
    }
}

pub fn train_router(
    kind: RouterKind,
    records: &[CorrectionRecord],
    cfg: &TrainConfig,
    dim: usize,
) -> Result<TriggerModel> {
    let examples: Vec<TrainingExample> = records
        .iter()
        .map(|r| TrainingExample::new(featurize(&r.pair.source, None, dim), router_label(kind, r)))
        .collect();
    trigger::train(kind.trigger_kind(), &examples, cfg)
}
