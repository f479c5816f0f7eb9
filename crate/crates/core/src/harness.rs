//! File-driven experiments: corpus generation, label construction, trigger
//! training and policy evaluation, configured by one TOML file.
//!
//! Every command is a pure function of the configuration, its input files
//! and the seed. Relative paths in the configuration resolve against the
//! directory holding the configuration file.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{self, ConfusionTable, CorpusStats, NoiseConfig, OpWeights, ParallelPair};
use crate::correctors::{self, Behavior, ConfidenceRule, RemoteCorrector, RuleCorrector, ScriptedCorrector};
use crate::edits::{extract_edits, write_m2, Level, M2Block};
use crate::labels::{self, CorrectionRecord, LabeledExample};
use crate::pipeline::{call, llm_coverage, ordered_map, Corrector, CostClass, PipelineOutcome, TraceRecord, TriggerSet};
use crate::policies::{self, Policy, PolicyKind, RouterKind};
use crate::scorer::{render_table, score_corpus, CorpusScore, PrfReport};
use crate::trigger::{self, RuleTrigger, TrainConfig, TriggerKind, TriggerModel};
use crate::{jsonl, Error, Result};

pub const REPORT_FORMAT: u32 = 1;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessConfig {
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub corpus: CorpusPaths,
    #[serde(default)]
    pub generate: Option<GenerateConfig>,
    #[serde(default)]
    pub trigger: TriggerConfig,
    pub correctors: CorrectorsConfig,
    #[serde(default)]
    pub policies: Vec<PolicySpec>,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusPaths {
    pub train: PathBuf,
    #[serde(default)]
    pub valid: Option<PathBuf>,
    pub test: PathBuf,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    /// Plain text, one clean query per line.
    pub clean: PathBuf,
    #[serde(default)]
    pub confusions: Option<PathBuf>,
    pub error_rate: f64,
    #[serde(default)]
    pub op_weights: OpWeights,
    /// Train/valid/test fractions.
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_split() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerSource {
    #[default]
    Trained,
    /// Perfect triggers derived from gold targets and scripted correctors.
    Oracle,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TriggerConfig {
    pub source: TriggerSource,
    pub dim: usize,
    pub threshold: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub seed: Option<u64>,
    pub label_seed: Option<u64>,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        TriggerConfig {
            source: TriggerSource::Trained,
            dim: trigger::DEFAULT_DIM,
            threshold: trigger::DEFAULT_THRESHOLD,
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            l2: t.l2,
            seed: None,
            label_seed: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectorsConfig {
    pub small: CorrectorSpec,
    pub llm: CorrectorSpec,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorrectorSpec {
    /// Per-id scripted answers (see [`correctors::Script`]).
    Scripted {
        #[serde(default)]
        behaviors: Option<PathBuf>,
        #[serde(default)]
        default: Option<Behavior>,
        #[serde(default)]
        confidence: Option<ConfidenceRule>,
    },
    /// Substring rewrite rules, JSONL `{"from": .., "to": ..}`.
    Rules { rules: PathBuf },
    Remote {
        url: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

fn default_timeout_ms() -> u64 {
    5000
}

/// A single value or a list of values to sweep.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    One(f64),
    Many(Vec<f64>),
}

impl Grid {
    fn values(&self) -> Vec<f64> {
        match self {
            Grid::One(v) => vec![*v],
            Grid::Many(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    Trigger3,
    RandomRouting {
        p: Grid,
        #[serde(default)]
        seed: Option<u64>,
    },
    RandomCascading {
        p: Grid,
        #[serde(default)]
        seed: Option<u64>,
    },
    MarginSampling {
        tau: Grid,
    },
    MetaRouting {
        #[serde(default)]
        model: Option<PathBuf>,
    },
    Hybrid {
        #[serde(default)]
        model: Option<PathBuf>,
    },
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Maximum failed queries per policy before the run is rejected.
    #[serde(default)]
    pub failure_budget: Option<usize>,
}

impl HarnessConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: HarnessConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let t = &self.trigger;
        if !t.dim.is_power_of_two() || t.dim > 1 << 24 {
            return Err(Error::Config(format!("trigger.dim must be a power of two, got {}", t.dim)));
        }
        if !(t.threshold > 0.0 && t.threshold < 1.0) {
            return Err(Error::Config(format!("trigger.threshold must be in (0,1), got {}", t.threshold)));
        }
        self.train_config(TriggerKind::Correction).validate()?;
        if let Some(g) = &self.generate {
            if g.split.iter().any(|f| *f < 0.0) || (g.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::Config("generate.split must be non-negative and sum to 1".into()));
            }
        }
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        fix(&mut self.corpus.train);
        fix(&mut self.corpus.test);
        if let Some(v) = &mut self.corpus.valid {
            fix(v);
        }
        if let Some(g) = &mut self.generate {
            fix(&mut g.clean);
            if let Some(c) = &mut g.confusions {
                fix(c);
            }
        }
        for spec in [&mut self.correctors.small, &mut self.correctors.llm] {
            match spec {
                CorrectorSpec::Scripted { behaviors: Some(p), .. } => fix(p),
                CorrectorSpec::Rules { rules } => fix(rules),
                _ => {}
            }
        }
        for policy in &mut self.policies {
            if let PolicySpec::MetaRouting { model: Some(p) } | PolicySpec::Hybrid { model: Some(p) } =
                policy
            {
                fix(p);
            }
        }
    }

    /// Seed for one stochastic stage: the explicit override if given, else a
    /// value derived from the global seed and the stage name.
    pub fn stage_seed(&self, stage: &str, explicit: Option<u64>) -> u64 {
        explicit.unwrap_or_else(|| self.seed ^ trigger::fnv1a(&[stage.as_bytes()]))
    }

    fn train_config(&self, kind: TriggerKind) -> TrainConfig {
        let t = &self.trigger;
        TrainConfig {
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            l2: t.l2,
            seed: self.stage_seed(&format!("train/{kind}"), t.seed),
        }
    }

    pub fn labels_dir(&self) -> PathBuf {
        self.out_dir.join("labels")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.out_dir.join("models")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.out_dir.join("eval")
    }

    pub fn label_path(&self, kind: TriggerKind) -> PathBuf {
        self.labels_dir().join(format!("{}.jsonl", kind.to_string().to_lowercase()))
    }

    pub fn model_path(&self, kind: TriggerKind) -> PathBuf {
        self.models_dir().join(format!("{}.json", kind.to_string().to_lowercase()))
    }

    pub fn records_path(&self) -> PathBuf {
        self.labels_dir().join("records.jsonl")
    }
}

/// Per-invocation knobs from the command line.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub parallelism: usize,
    pub limit: Option<usize>,
    pub threshold_sweep: Option<ThresholdSweep>,
}

impl RunOptions {
    fn threads(&self) -> usize {
        self.parallelism.max(1)
    }
}

/// `start:stop:step`, inclusive of `stop`.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdSweep {
    pub values: Vec<f64>,
}

impl FromStr for ThresholdSweep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("threshold sweep must be start:stop:step, got {s:?}"));
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        let [start, stop, step] = parts[..] else {
            return Err(bad());
        };
        if !(step > 0.0) || start > stop {
            return Err(bad());
        }
        let mut values = Vec::new();
        let mut i = 0u32;
        loop {
            let v = start + f64::from(i) * step;
            if v > stop + 1e-9 {
                break;
            }
            let v = (v * 1e9).round() / 1e9;
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("threshold {v} outside (0,1)")));
            }
            values.push(v);
            i += 1;
        }
        Ok(ThresholdSweep { values })
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} {} does not exist", path.display())))
    }
}

fn load_split(path: &Path, what: &str, limit: Option<usize>) -> Result<Vec<ParallelPair>> {
    require_file(path, what)?;
    let mut pairs = corpus::load_corpus(path)?;
    if let Some(n) = limit {
        pairs.truncate(n);
    }
    Ok(pairs)
}

pub fn build_corrector(
    spec: &CorrectorSpec,
    cost_class: CostClass,
    pairs: &[ParallelPair],
) -> Result<Box<dyn Corrector>> {
    let name = match cost_class {
        CostClass::Small => "small",
        CostClass::Llm => "llm",
    };
    Ok(match spec {
        CorrectorSpec::Scripted {
            behaviors,
            default,
            confidence,
        } => Box::new(build_scripted(name, cost_class, pairs, behaviors.as_deref(), *default, *confidence)?),
        CorrectorSpec::Rules { rules } => {
            require_file(rules, "rules file")?;
            Box::new(RuleCorrector::load(name, cost_class, rules)?)
        }
        CorrectorSpec::Remote { url, timeout_ms } => Box::new(RemoteCorrector::new(
            name,
            cost_class,
            url,
            Duration::from_millis(*timeout_ms),
        )?),
    })
}

fn build_scripted(
    name: &str,
    cost_class: CostClass,
    pairs: &[ParallelPair],
    behaviors: Option<&Path>,
    default: Option<Behavior>,
    confidence: Option<ConfidenceRule>,
) -> Result<ScriptedCorrector> {
    let scripts = match behaviors {
        Some(p) => {
            require_file(p, "behaviors file")?;
            correctors::load_scripts(p)?
        }
        None => Vec::new(),
    };
    ScriptedCorrector::new(name, cost_class, pairs, &scripts, default, confidence.unwrap_or_default())
}

#[derive(Clone, Debug, Serialize)]
pub struct GenSummary {
    pub all: CorpusStats,
    pub splits: BTreeMap<String, CorpusStats>,
}

/// Corrupts the clean queries and writes the train/valid/test splits.
pub fn cmd_gen_corpus(cfg: &HarnessConfig) -> Result<GenSummary> {
    let gen = cfg
        .generate
        .as_ref()
        .ok_or_else(|| Error::Config("missing [generate] section".into()))?;
    require_file(&gen.clean, "clean query file")?;
    let table = match &gen.confusions {
        Some(p) => {
            require_file(p, "confusion table")?;
            ConfusionTable::load(p)?
        }
        None if gen.op_weights.confusion_substitution > 0.0 => {
            return Err(Error::Config(
                "confusion_substitution has positive weight but no confusion table is configured".into(),
            ))
        }
        None => ConfusionTable::default(),
    };
    let clean = corpus::load_clean_queries(&gen.clean)?;
    let seed = cfg.stage_seed("generate", gen.seed);
    let noise = NoiseConfig {
        seed,
        error_rate: gen.error_rate,
        op_weights: gen.op_weights,
    };
    let pairs = corpus::inject_noise(&clean, &table, &noise)?;
    let all = corpus::corpus_stats(&pairs)?;

    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(1)));
    let n = pairs.len();
    let n_train = (gen.split[0] * n as f64).round() as usize;
    let n_valid = ((gen.split[1] * n as f64).round() as usize).min(n - n_train);
    let take = |range: std::ops::Range<usize>| {
        let mut idx = order[range].to_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| pairs[i].clone()).collect::<Vec<_>>()
    };
    let train = take(0..n_train);
    let valid = take(n_train..n_train + n_valid);
    let test = take(n_train + n_valid..n);

    let mut splits = BTreeMap::new();
    let mut outputs = vec![("train", &cfg.corpus.train, train), ("test", &cfg.corpus.test, test)];
    match &cfg.corpus.valid {
        Some(path) => outputs.push(("valid", path, valid)),
        None if !valid.is_empty() => {
            return Err(Error::Config("generate.split has a valid fraction but corpus.valid is unset".into()))
        }
        None => {}
    }
    for (name, path, split) in outputs {
        corpus::save_corpus(path, &split)?;
        if let Ok(stats) = corpus::corpus_stats(&split) {
            splits.insert(name.to_owned(), stats);
        }
    }
    Ok(GenSummary { all, splits })
}

/// Runs both correctors over `pairs`, the LLM receiving the small rewrite as
/// its hint. Failed queries are dropped and counted.
pub fn collect_records(
    pairs: &[ParallelPair],
    small: &dyn Corrector,
    llm: &dyn Corrector,
    parallelism: usize,
) -> (Vec<CorrectionRecord>, usize) {
    let results = ordered_map(pairs, parallelism, |pair| -> Result<CorrectionRecord> {
        let y_small = call(small, &pair.source, None)?.corrected;
        let y_llm = call(llm, &pair.source, Some(&y_small))?.corrected;
        Ok(CorrectionRecord {
            pair: pair.clone(),
            y_small,
            y_llm,
        })
    });
    let mut failed = 0;
    let mut records = Vec::with_capacity(results.len());
    for (pair, r) in pairs.iter().zip(results) {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => {
                log::warn!("excluding {}: {e}", pair.id);
                failed += 1;
            }
        }
    }
    (records, failed)
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct LabelCounts {
    pub positive: usize,
    pub negative: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct LabelSummary {
    pub records: usize,
    pub failed: usize,
    pub ct: LabelCounts,
    pub lt: LabelCounts,
    pub ft: LabelCounts,
}

fn counts(examples: &[LabeledExample]) -> LabelCounts {
    let positive = examples.iter().filter(|e| e.label == 1).count();
    LabelCounts {
        positive,
        negative: examples.len() - positive,
    }
}

pub fn cmd_build_labels(cfg: &HarnessConfig, opts: &RunOptions) -> Result<LabelSummary> {
    let pairs = load_split(&cfg.corpus.train, "train corpus", opts.limit)?;
    let small = build_corrector(&cfg.correctors.small, CostClass::Small, &pairs)?;
    let llm = build_corrector(&cfg.correctors.llm, CostClass::Llm, &pairs)?;
    let (records, failed) = collect_records(&pairs, small.as_ref(), llm.as_ref(), opts.threads());
    if failed > 0 {
        log::warn!("{failed} training queries excluded after corrector failures");
    }

    let seed = cfg.stage_seed("labels", cfg.trigger.label_seed);
    let ct = labels::build_ct(&pairs);
    let lt = labels::build_lt(&records, seed);
    let ft = labels::build_ft(&records, seed.wrapping_add(1));

    labels::save_records(&cfg.records_path(), &records)?;
    labels::save_labels(&cfg.label_path(TriggerKind::Correction), &ct)?;
    labels::save_labels(&cfg.label_path(TriggerKind::Llm), &lt)?;
    labels::save_labels(&cfg.label_path(TriggerKind::Fallback), &ft)?;
    Ok(LabelSummary {
        records: records.len(),
        failed,
        ct: counts(&ct),
        lt: counts(&lt),
        ft: counts(&ft),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainedModelSummary {
    pub kind: TriggerKind,
    pub examples: usize,
    pub loss: f64,
    pub accuracy: f64,
}

fn fit(
    cfg: &HarnessConfig,
    kind: TriggerKind,
    examples: &[trigger::TrainingExample],
) -> Result<TrainedModelSummary> {
    let tc = cfg.train_config(kind);
    let training = trigger::train_with_history(kind, examples, &tc).map_err(|e| match e {
        Error::DegenerateLabels(m) => Error::DegenerateLabels(format!("{kind}: {m}")),
        other => other,
    })?;
    let model = training.model.with_threshold(cfg.trigger.threshold);
    model.save(&cfg.model_path(kind))?;
    Ok(TrainedModelSummary {
        kind,
        examples: examples.len(),
        loss: *training.loss_history.last().expect("at least one entry"),
        accuracy: trigger::accuracy(&model, examples)?,
    })
}

fn needs_router(cfg: &HarnessConfig, kind: RouterKind) -> bool {
    cfg.policies.iter().any(|p| {
        matches!(
            (p, kind),
            (PolicySpec::MetaRouting { model: None }, RouterKind::MetaRouting)
                | (PolicySpec::Hybrid { model: None }, RouterKind::Hybrid)
        )
    })
}

/// Trains the three triggers from the label files, plus any baseline
/// routers the configured policies need.
pub fn cmd_train(cfg: &HarnessConfig) -> Result<Vec<TrainedModelSummary>> {
    let dim = cfg.trigger.dim;
    let mut out = Vec::new();
    for kind in [TriggerKind::Correction, TriggerKind::Llm, TriggerKind::Fallback] {
        let path = cfg.label_path(kind);
        require_file(&path, &format!("{kind} label file"))?;
        let examples: Vec<_> = labels::load_labels(&path)?
            .iter()
            .map(|e| e.to_training(dim))
            .collect();
        out.push(fit(cfg, kind, &examples)?);
    }
    for router in [RouterKind::MetaRouting, RouterKind::Hybrid] {
        if !needs_router(cfg, router) {
            continue;
        }
        let path = cfg.records_path();
        require_file(&path, "correction records")?;
        let examples: Vec<_> = labels::load_records(&path)?
            .iter()
            .map(|r| {
                trigger::TrainingExample::new(
                    trigger::featurize(&r.pair.source, None, dim),
                    policies::router_label(router, r),
                )
            })
            .collect();
        out.push(fit(cfg, router.trigger_kind(), &examples)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    pub policy: String,
    pub n_records: usize,
    pub char: PrfReport,
    pub word: PrfReport,
    pub llm_coverage: f64,
    pub failed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: u32,
    pub policies: Vec<PolicyReport>,
}

impl EvalReport {
    pub fn load(path: &Path) -> Result<Self> {
        let report: EvalReport = jsonl::read_json(path)?;
        if report.format != REPORT_FORMAT {
            return Err(Error::Schema {
                path: path.to_owned(),
                line: 1,
                message: format!("unsupported report format {}", report.format),
            });
        }
        Ok(report)
    }

    pub fn render(&self) -> String {
        render_reports(self.policies.iter().map(|p| (p.policy.clone(), p)))
    }
}

fn render_reports<'a>(rows: impl Iterator<Item = (String, &'a PolicyReport)>) -> String {
    let scores: Vec<(String, CorpusScore, f64)> = rows
        .map(|(name, p)| {
            (
                name,
                CorpusScore {
                    char: p.char,
                    word: p.word,
                    n_records: p.n_records,
                    char_counts: None,
                    word_counts: None,
                },
                p.llm_coverage,
            )
        })
        .collect();
    let table: Vec<_> = scores.iter().map(|(n, s, lc)| (n.clone(), s, Some(*lc))).collect();
    render_table(&table, Some("LC"))
}

/// Oracle triggers: the label rules evaluated on the scripted answers, so
/// each trigger is a perfect classifier of its own training target.
fn oracle_triggers(
    pairs: &[ParallelPair],
    small: &ScriptedCorrector,
    llm: &ScriptedCorrector,
) -> Result<TriggerSet> {
    let mut by_source: HashMap<String, CorrectionRecord> = HashMap::with_capacity(pairs.len());
    for pair in pairs {
        let record = CorrectionRecord {
            pair: pair.clone(),
            y_small: small.answer(&pair.source).expect("scripted for every pair").to_owned(),
            y_llm: llm.answer(&pair.source).expect("scripted for every pair").to_owned(),
        };
        if let Some(prev) = by_source.get(&pair.source) {
            if prev.pair.target != pair.target {
                return Err(Error::Config(format!(
                    "oracle triggers: source {:?} has conflicting targets",
                    pair.source
                )));
            }
        }
        by_source.insert(pair.source.clone(), record);
    }
    let table = Arc::new(by_source);
    let (t1, t2, t3) = (table.clone(), table.clone(), table);
    Ok(TriggerSet::new(
        RuleTrigger(move |x: &str, _: Option<&str>| t1.get(x).is_some_and(|r| r.pair.is_erroneous())),
        RuleTrigger(move |x: &str, _: Option<&str>| t2.get(x).is_some_and(labels::lt_positive)),
        RuleTrigger(move |x: &str, _: Option<&str>| t3.get(x).is_some_and(labels::ft_positive)),
    ))
}

fn scripted_pair(
    cfg: &HarnessConfig,
    pairs: &[ParallelPair],
) -> Result<(ScriptedCorrector, ScriptedCorrector)> {
    let build = |spec: &CorrectorSpec, cost: CostClass, name: &str| match spec {
        CorrectorSpec::Scripted {
            behaviors,
            default,
            confidence,
        } => build_scripted(name, cost, pairs, behaviors.as_deref(), *default, *confidence),
        _ => Err(Error::Config(
            "trigger.source = \"oracle\" requires scripted correctors".into(),
        )),
    };
    Ok((
        build(&cfg.correctors.small, CostClass::Small, "small")?,
        build(&cfg.correctors.llm, CostClass::Llm, "llm")?,
    ))
}

fn fmt_param(v: f64) -> String {
    format!("{v:.2}")
}

/// Expands the configured policies (and parameter grids) into named,
/// runnable policies sorted by name.
fn expand_policies(
    cfg: &HarnessConfig,
    opts: &RunOptions,
    pairs: &[ParallelPair],
) -> Result<Vec<(String, Policy)>> {
    if cfg.policies.is_empty() {
        return Err(Error::Config("no policies configured".into()));
    }
    let mut out: Vec<(String, Policy)> = Vec::new();
    for spec in &cfg.policies {
        match spec {
            PolicySpec::Trigger3 => match cfg.trigger.source {
                TriggerSource::Oracle => {
                    let (small, llm) = scripted_pair(cfg, pairs)?;
                    out.push((
                        "trigger3(oracle)".into(),
                        Policy::Trigger3 {
                            triggers: oracle_triggers(pairs, &small, &llm)?,
                        },
                    ));
                }
                TriggerSource::Trained => {
                    let load = |kind: TriggerKind| -> Result<TriggerModel> {
                        let path = cfg.model_path(kind);
                        require_file(&path, &format!("{kind} model"))?;
                        TriggerModel::load(&path)
                    };
                    let (ct, lt, ft) = (
                        load(TriggerKind::Correction)?,
                        load(TriggerKind::Llm)?,
                        load(TriggerKind::Fallback)?,
                    );
                    match &opts.threshold_sweep {
                        None => out.push((
                            "trigger3".into(),
                            Policy::Trigger3 {
                                triggers: TriggerSet::new(ct, lt, ft),
                            },
                        )),
                        Some(sweep) => {
                            for &t in &sweep.values {
                                out.push((
                                    format!("trigger3(t={})", fmt_param(t)),
                                    Policy::Trigger3 {
                                        triggers: TriggerSet::new(
                                            ct.clone().with_threshold(t),
                                            lt.clone().with_threshold(t),
                                            ft.clone().with_threshold(t),
                                        ),
                                    },
                                ));
                            }
                        }
                    }
                }
            },
            PolicySpec::RandomRouting { p, seed } | PolicySpec::RandomCascading { p, seed } => {
                let routing = matches!(spec, PolicySpec::RandomRouting { .. });
                let kind = if routing {
                    PolicyKind::RandomRouting
                } else {
                    PolicyKind::RandomCascading
                };
                for v in p.values() {
                    let seed = cfg.stage_seed(&format!("eval/{kind}"), *seed);
                    let policy = if routing {
                        Policy::RandomRouting { p: v, seed }
                    } else {
                        Policy::RandomCascading { p: v, seed }
                    };
                    out.push((format!("{kind}(p={})", fmt_param(v)), policy));
                }
            }
            PolicySpec::MarginSampling { tau } => {
                for v in tau.values() {
                    out.push((
                        format!("{}(tau={})", PolicyKind::MarginSampling, fmt_param(v)),
                        Policy::MarginSampling { tau: v },
                    ));
                }
            }
            PolicySpec::MetaRouting { model } | PolicySpec::Hybrid { model } => {
                let router = if matches!(spec, PolicySpec::MetaRouting { .. }) {
                    RouterKind::MetaRouting
                } else {
                    RouterKind::Hybrid
                };
                let path = model
                    .clone()
                    .unwrap_or_else(|| cfg.model_path(router.trigger_kind()));
                require_file(&path, &format!("{} router model", router.trigger_kind()))?;
                let model = TriggerModel::load(&path)?;
                let policy = match router {
                    RouterKind::MetaRouting => Policy::MetaRouting { router: model },
                    RouterKind::Hybrid => Policy::Hybrid { router: model },
                };
                out.push((policy.kind().to_string(), policy));
            }
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    if let Some(w) = out.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Config(format!("policy {} configured twice", w[0].0)));
    }
    Ok(out)
}

fn policy_file_name(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '_' { c } else { '_' })
        .collect()
}

pub fn evaluate(
    name: &str,
    pairs: &[ParallelPair],
    outcomes: &[PipelineOutcome],
) -> Result<PolicyReport> {
    let triples: Vec<_> = pairs
        .iter()
        .zip(outcomes)
        .map(|(p, o)| (p.source.as_str(), o.y_final.as_str(), p.target.as_str()))
        .collect();
    let score = score_corpus(&triples)?;
    Ok(PolicyReport {
        policy: name.to_owned(),
        n_records: pairs.len(),
        char: score.char,
        word: score.word,
        llm_coverage: llm_coverage(outcomes)?,
        failed: outcomes.iter().filter(|o| o.failed()).count(),
    })
}

/// Runs every configured policy on the test split; writes one trace per
/// policy plus `report.json` and `report.txt` under `<out_dir>/eval`.
pub fn cmd_eval(cfg: &HarnessConfig, opts: &RunOptions) -> Result<EvalReport> {
    let pairs = load_split(&cfg.corpus.test, "test corpus", opts.limit)?;
    if pairs.is_empty() {
        return Err(Error::Empty("test corpus"));
    }
    let policies = expand_policies(cfg, opts, &pairs)?;
    let small = build_corrector(&cfg.correctors.small, CostClass::Small, &pairs)?;
    let llm = build_corrector(&cfg.correctors.llm, CostClass::Llm, &pairs)?;

    let dir = cfg.eval_dir();
    let mut reports = Vec::with_capacity(policies.len());
    for (name, policy) in &policies {
        let outcomes = policies::run_policy(policy, &pairs, small.as_ref(), llm.as_ref(), opts.threads())?;
        let trace: Vec<TraceRecord> = pairs
            .iter()
            .zip(&outcomes)
            .map(|(p, o)| TraceRecord {
                id: p.id.clone(),
                outcome: o.clone(),
            })
            .collect();
        jsonl::write(&dir.join("traces").join(format!("{}.jsonl", policy_file_name(name))), &trace)?;
        let report = evaluate(name, &pairs, &outcomes)?;
        log::info!(
            "{name}: char F0.5 {:.4}, LLM coverage {:.4}, failed {}",
            report.char.f_beta,
            report.llm_coverage,
            report.failed
        );
        reports.push(report);
    }

    let report = EvalReport {
        format: REPORT_FORMAT,
        policies: reports,
    };
    jsonl::write_json(&dir.join("report.json"), &report)?;
    std::fs::write(dir.join("report.txt"), report.render()).map_err(|e| Error::io(&dir, e))?;

    if let Some(budget) = cfg.eval.failure_budget {
        if let Some(worst) = report.policies.iter().map(|p| p.failed).max().filter(|f| *f > budget) {
            return Err(Error::FailureBudget {
                failed: worst,
                budget,
            });
        }
    }
    Ok(report)
}

/// Gold edits of a corpus in M2 form.
pub fn cmd_extract_edits(corpus_path: &Path, level: Level) -> Result<String> {
    let pairs = load_split(corpus_path, "corpus", None)?;
    let blocks: Vec<M2Block> = pairs
        .iter()
        .map(|p| M2Block {
            source: p.source.clone(),
            edits: extract_edits(&p.source, &p.target, level),
        })
        .collect();
    Ok(write_m2(&blocks))
}

/// A hypothesis line: `{"id": .., "hypothesis": ..}`. Trace files work too,
/// their `y_final` field is accepted as the hypothesis.
#[derive(Deserialize)]
struct HypothesisLine {
    id: String,
    #[serde(alias = "y_final")]
    hypothesis: String,
}

pub fn cmd_score(corpus_path: &Path, hypotheses: &Path) -> Result<CorpusScore> {
    let pairs = load_split(corpus_path, "corpus", None)?;
    require_file(hypotheses, "hypothesis file")?;
    let hyps: HashMap<String, String> = jsonl::read::<HypothesisLine>(hypotheses)?
        .into_iter()
        .map(|h| (h.id, h.hypothesis))
        .collect();
    let mut triples = Vec::with_capacity(pairs.len());
    for p in &pairs {
        let h = hyps
            .get(&p.id)
            .ok_or_else(|| Error::InvalidInput(format!("no hypothesis for id {:?}", p.id)))?;
        triples.push((p.source.as_str(), h.as_str(), p.target.as_str()));
    }
    score_corpus(&triples)
}

/// Side-by-side table of several evaluation reports. Rows are prefixed with
/// the report's file stem when more than one report is given.
pub fn cmd_compare(reports: &[PathBuf]) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::Config("compare needs at least one report".into()));
    }
    let loaded: Vec<(String, EvalReport)> = reports
        .iter()
        .map(|p| {
            let stem = p
                .parent()
                .and_then(|d| d.parent())
                .and_then(|d| d.file_name())
                .or_else(|| p.file_stem())
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            EvalReport::load(p).map(|r| (stem, r))
        })
        .collect::<Result<_>>()?;
    let prefix = loaded.len() > 1;
    let rows = loaded.iter().flat_map(|(stem, r)| {
        r.policies.iter().map(move |p| {
            let name = if prefix {
                format!("{stem}/{}", p.policy)
            } else {
                p.policy.clone()
            };
            (name, p)
        })
    });
    Ok(render_reports(rows))
}
