//! Concrete correctors: scripted oracles, a substring-rule mock, and an HTTP
//! client for remote correctors.

use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::ParallelPair;
use crate::pipeline::{Correction, Corrector, CostClass};
use crate::{jsonl, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Behavior {
    /// Emit the gold target.
    Perfect,
    /// Emit the source unchanged.
    Noop,
    /// Emit a scripted string that matches neither source nor target.
    Corrupt,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfidenceRule {
    pub perfect: f64,
    pub noop: f64,
    pub corrupt: f64,
}

impl Default for ConfidenceRule {
    fn default() -> Self {
        ConfidenceRule {
            perfect: 0.9,
            noop: 0.4,
            corrupt: 0.6,
        }
    }
}

impl ConfidenceRule {
    fn get(&self, b: Behavior) -> f64 {
        match b {
            Behavior::Perfect => self.perfect,
            Behavior::Noop => self.noop,
            Behavior::Corrupt => self.corrupt,
        }
    }
}

/// One line of a behaviour file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Script {
    pub id: String,
    pub behavior: Behavior,
    /// Output for `corrupt`; generated when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

pub fn load_scripts(path: &Path) -> Result<Vec<Script>> {
    jsonl::read(path)
}

pub fn save_scripts(path: &Path, scripts: &[Script]) -> Result<()> {
    jsonl::write(path, scripts)
}

fn default_corruption(pair: &ParallelPair) -> String {
    let mut out = pair.target.clone();
    while out == pair.source || out == pair.target {
        out.push('~');
    }
    out
}

/// A corrector whose answer for every corpus query is fixed in advance.
/// Queries are looked up by source text; the hint is ignored.
#[derive(Clone, Debug)]
pub struct ScriptedCorrector {
    name: String,
    cost_class: CostClass,
    answers: HashMap<String, (Behavior, String)>,
    confidence: ConfidenceRule,
}

impl ScriptedCorrector {
    /// Every pair must be covered by `scripts` or by `default`.
    pub fn new(
        name: impl Into<String>,
        cost_class: CostClass,
        pairs: &[ParallelPair],
        scripts: &[Script],
        default: Option<Behavior>,
        confidence: ConfidenceRule,
    ) -> Result<Self> {
        let name = name.into();
        let by_id: HashMap<&str, &Script> = scripts.iter().map(|s| (s.id.as_str(), s)).collect();
        let mut answers: HashMap<String, (Behavior, String)> = HashMap::with_capacity(pairs.len());
        for pair in pairs {
            let (behavior, output) = match (by_id.get(pair.id.as_str()), default) {
                (Some(s), _) => (s.behavior, s.output.clone()),
                (None, Some(b)) => (b, None),
                (None, None) => {
                    return Err(Error::Config(format!(
                        "{name}: no scripted behavior for id {:?}",
                        pair.id
                    )))
                }
            };
            let answer = match behavior {
                Behavior::Perfect => pair.target.clone(),
                Behavior::Noop => pair.source.clone(),
                Behavior::Corrupt => {
                    let out = output.unwrap_or_else(|| default_corruption(pair));
                    if out == pair.source || out == pair.target || out.trim().is_empty() {
                        return Err(Error::Config(format!(
                            "{name}: corrupt output for {:?} must differ from source and target",
                            pair.id
                        )));
                    }
                    out
                }
            };
            match answers.get(&pair.source) {
                Some(prev) if prev.1 != answer => {
                    return Err(Error::Config(format!(
                        "{name}: source {:?} is scripted with conflicting answers",
                        pair.source
                    )))
                }
                _ => {
                    answers.insert(pair.source.clone(), (behavior, answer));
                }
            }
        }
        Ok(ScriptedCorrector {
            name,
            cost_class,
            answers,
            confidence,
        })
    }

    pub fn behavior(&self, source: &str) -> Option<Behavior> {
        self.answers.get(source).map(|a| a.0)
    }

    /// The scripted answer for `source`, without counting as a call.
    pub fn answer(&self, source: &str) -> Option<&str> {
        self.answers.get(source).map(|a| a.1.as_str())
    }
}

impl Corrector for ScriptedCorrector {
    fn name(&self) -> &str {
        &self.name
    }

    fn cost_class(&self) -> CostClass {
        self.cost_class
    }

    fn correct(&self, x: &str, _hint: Option<&str>) -> Result<Correction> {
        let (behavior, answer) = self.answers.get(x).ok_or_else(|| Error::Corrector {
            name: self.name.clone(),
            message: format!("unscripted query {x:?}"),
        })?;
        Ok(Correction {
            corrected: answer.clone(),
            confidence: self.confidence.get(*behavior),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub from: String,
    pub to: String,
}

/// Applies substring rewrite rules in order. Confidence is 0.9 when any rule
/// changed the query and 0.5 otherwise.
#[derive(Clone, Debug)]
pub struct RuleCorrector {
    name: String,
    cost_class: CostClass,
    rules: Vec<Rule>,
}

impl RuleCorrector {
    pub fn new(name: impl Into<String>, cost_class: CostClass, rules: Vec<Rule>) -> Result<Self> {
        if rules.iter().any(|r| r.from.is_empty()) {
            return Err(Error::Config("rewrite rule with empty \"from\"".into()));
        }
        Ok(RuleCorrector {
            name: name.into(),
            cost_class,
            rules,
        })
    }

    pub fn load(name: impl Into<String>, cost_class: CostClass, path: &Path) -> Result<Self> {
        Self::new(name, cost_class, jsonl::read(path)?)
    }
}

impl Corrector for RuleCorrector {
    fn name(&self) -> &str {
        &self.name
    }

    fn cost_class(&self) -> CostClass {
        self.cost_class
    }

    fn correct(&self, x: &str, _hint: Option<&str>) -> Result<Correction> {
        let mut out = x.to_owned();
        for rule in &self.rules {
            out = out.replace(&rule.from, &rule.to);
        }
        let confidence = if out != x { 0.9 } else { 0.5 };
        if out.trim().is_empty() {
            out = x.to_owned();
        }
        Ok(Correction {
            corrected: out,
            confidence,
        })
    }
}

/// Body of `POST /correct`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectRequest {
    pub query: String,
    pub hint: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectResponse {
    pub corrected: String,
    pub confidence: f64,
}

/// Client for a corrector served over HTTP. One attempt per query; non-200
/// statuses, transport errors and malformed bodies are corrector failures.
#[derive(Debug)]
pub struct RemoteCorrector {
    name: String,
    cost_class: CostClass,
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl RemoteCorrector {
    pub fn new(
        name: impl Into<String>,
        cost_class: CostClass,
        base_url: &str,
        timeout: Duration,
    ) -> Result<Self> {
        let name = name.into();
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Config(format!("{name}: cannot build HTTP client: {e}")))?;
        Ok(RemoteCorrector {
            endpoint: format!("{}/correct", base_url.trim_end_matches('/')),
            name,
            cost_class,
            client,
        })
    }

    fn failure(&self, message: impl Into<String>) -> Error {
        Error::Corrector {
            name: self.name.clone(),
            message: message.into(),
        }
    }
}

impl Corrector for RemoteCorrector {
    fn name(&self) -> &str {
        &self.name
    }

    fn cost_class(&self) -> CostClass {
        self.cost_class
    }

    fn correct(&self, x: &str, hint: Option<&str>) -> Result<Correction> {
        let request = CorrectRequest {
            query: x.to_owned(),
            hint: hint.map(str::to_owned),
        };
        let response = self
            .client
            .post(&self.endpoint)
            .json(&request)
            .send()
            .map_err(|e| self.failure(format!("request failed: {e}")))?;
        let status = response.status();
        if status != reqwest::StatusCode::OK {
            let body = response.text().unwrap_or_default();
            return Err(self.failure(format!("HTTP {status}: {body}")));
        }
        let body = response
            .bytes()
            .map_err(|e| self.failure(format!("reading body: {e}")))?;
        let parsed: CorrectResponse = serde_json::from_slice(&body)
            .map_err(|e| self.failure(format!("malformed response: {e}")))?;
        Ok(Correction {
            corrected: parsed.corrected,
            confidence: parsed.confidence,
        })
    }
}
