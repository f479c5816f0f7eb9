//! The three-trigger correction cascade.
//!
//! ```text
//! CT(x) fires? ── no ──> x
//!      │ yes
//! y_small = small(x)
//! LT(x, y_small) fires? ── yes ──> y_c = llm(x, hint = y_small)
//!      │ no                            │
//! y_c = y_small <──────────────────────┘
//! FT(x, y_c) fires? ── yes ──> x
//!      │ no
//!      y_c
//! ```

use serde::{Deserialize, Serialize};

use crate::corpus::ParallelPair;
use crate::trigger::{Decision, Trigger};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostClass {
    Small,
    Llm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub corrected: String,
    pub confidence: f64,
}

/// An opaque query corrector. Implementations must be deterministic per
/// input for reproducible experiments and safe to call from many threads.
pub trait Corrector: Send + Sync {
    fn name(&self) -> &str;
    fn cost_class(&self) -> CostClass;
    fn correct(&self, x: &str, hint: Option<&str>) -> Result<Correction>;
}

/// Calls the corrector and checks the response contract.
pub(crate) fn call(corrector: &dyn Corrector, x: &str, hint: Option<&str>) -> Result<Correction> {
    let out = corrector.correct(x, hint)?;
    if out.corrected.trim().is_empty() || !(0.0..=1.0).contains(&out.confidence) {
        return Err(Error::Corrector {
            name: corrector.name().to_owned(),
            message: format!(
                "invalid response: corrected={:?} confidence={}",
                out.corrected, out.confidence
            ),
        });
    }
    Ok(out)
}

/// Final answer for one query plus everything that happened on the way.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutcome {
    pub x: String,
    pub y_final: String,
    pub ct: Option<Decision>,
    pub lt: Option<Decision>,
    pub ft: Option<Decision>,
    /// Routing decision of baseline policies (probability of choosing or
    /// escalating to the LLM).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub router: Option<Decision>,
    pub small_called: bool,
    pub llm_called: bool,
    pub y_small: Option<String>,
    pub y_llm: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub small_confidence: Option<f64>,
    /// Set when a corrector failed; `y_final` is then the original query.
    pub failure: Option<String>,
}

impl PipelineOutcome {
    pub(crate) fn start(x: &str) -> Self {
        PipelineOutcome {
            x: x.to_owned(),
            y_final: x.to_owned(),
            ct: None,
            lt: None,
            ft: None,
            router: None,
            small_called: false,
            llm_called: false,
            y_small: None,
            y_llm: None,
            small_confidence: None,
            failure: None,
        }
    }

    pub(crate) fn fail(mut self, err: Error) -> Self {
        self.y_final = self.x.clone();
        self.failure = Some(err.to_string());
        self
    }

    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

/// The correction, LLM and fallback triggers.
pub struct TriggerSet {
    pub ct: Box<dyn Trigger>,
    pub lt: Box<dyn Trigger>,
    pub ft: Box<dyn Trigger>,
}

impl TriggerSet {
    pub fn new(
        ct: impl Trigger + 'static,
        lt: impl Trigger + 'static,
        ft: impl Trigger + 'static,
    ) -> Self {
        TriggerSet {
            ct: Box::new(ct),
            lt: Box::new(lt),
            ft: Box::new(ft),
        }
    }
}

pub fn run_query(
    x: &str,
    triggers: &TriggerSet,
    small: &dyn Corrector,
    llm: &dyn Corrector,
) -> PipelineOutcome {
    let mut out = PipelineOutcome::start(x);
    let ct = triggers.ct.decide(x, None);
    out.ct = Some(ct);
    if !ct.fired {
        return out;
    }

    out.small_called = true;
    let y_small = match call(small, x, None) {
        Ok(c) => {
            out.small_confidence = Some(c.confidence);
            c.corrected
        }
        Err(e) => return out.fail(e),
    };
    out.y_small = Some(y_small.clone());

    let lt = triggers.lt.decide(x, Some(&y_small));
    out.lt = Some(lt);
    let y_c = if lt.fired {
        out.llm_called = true;
        match call(llm, x, Some(&y_small)) {
            Ok(c) => {
                out.y_llm = Some(c.corrected.clone());
                c.corrected
            }
            Err(e) => return out.fail(e),
        }
    } else {
        y_small
    };

    let ft = triggers.ft.decide(x, Some(&y_c));
    out.ft = Some(ft);
    out.y_final = if ft.fired { x.to_owned() } else { y_c };
    out
}

/// Maps `f` over `items` on up to `parallelism` threads, keeping input order.
pub(crate) fn ordered_map<T, R, F>(items: &[T], parallelism: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    if parallelism <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .expect("thread pool");
    pool.install(|| items.par_iter().map(&f).collect())
}

/// Runs the cascade over every pair's source. Failures are recorded in the
/// outcomes and never abort the batch.
pub fn run_corpus(
    pairs: &[ParallelPair],
    triggers: &TriggerSet,
    small: &dyn Corrector,
    llm: &dyn Corrector,
    parallelism: usize,
) -> Vec<PipelineOutcome> {
    ordered_map(pairs, parallelism, |p| run_query(&p.source, triggers, small, llm))
}

/// Fraction of queries that reached the LLM.
pub fn llm_coverage(outcomes: &[PipelineOutcome]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::Empty("outcomes"));
    }
    let called = outcomes.iter().filter(|o| o.llm_called).count();
    Ok(called as f64 / outcomes.len() as f64)
}

/// One line of a trace file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub id: String,
    #[serde(flatten)]
    pub outcome: PipelineOutcome,
}
