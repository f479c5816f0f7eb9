//! End-to-end runs of the file-driven commands, with every emitted JSON
//! artifact checked against the shipped schemas.

mod common;

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use trigger3::corpus::{load_corpus, save_corpus, ParallelPair};
use trigger3::correctors::{save_scripts, Behavior, Script};
use trigger3::edits::{parse_m2, Level};
use trigger3::harness::{self, HarnessConfig, RunOptions};
use trigger3::labels::load_labels;
use trigger3::trigger::TriggerKind;
use trigger3::Error;

const WORDS: &[&str] = &[
    "weather", "today", "cheap", "flights", "to", "london", "best", "pizza", "near", "me", "python",
    "tutorial", "how", "tall", "is", "the", "eiffel", "tower", "new", "york", "times", "recipe",
];

fn clean_queries(n: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let k = rng.random_range(1..5);
            (0..k).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

const CONFUSIONS: &str = r#"{"char":"a","confusions":["e","o"]}
{"char":"e","confusions":["a","i"]}
{"char":"o","confusions":["a","u"]}
{"char":"t","confusions":["r","y"]}
"#;

struct Setup {
    dir: tempfile::TempDir,
}

impl Setup {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("clean.txt"), clean_queries(1000, 5)).unwrap();
        std::fs::write(dir.path().join("confusions.jsonl"), CONFUSIONS).unwrap();
        Setup { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    /// Writes `body` below a common header and loads it.
    fn config(&self, name: &str, body: &str) -> HarnessConfig {
        let text = format!(
            r#"seed = 3
out_dir = "out-{name}"
[corpus]
train = "data/train.jsonl"
valid = "data/valid.jsonl"
test = "data/test.jsonl"
{body}"#
        );
        let path = self.path(&format!("{name}.toml"));
        std::fs::write(&path, text).unwrap();
        HarnessConfig::load(&path).unwrap()
    }
}

const GENERATE: &str = r#"
[generate]
clean = "clean.txt"
confusions = "confusions.jsonl"
error_rate = 0.75
"#;

const SCRIPTED: &str = r#"
[correctors.small]
kind = "scripted"
default = "perfect"
[correctors.llm]
kind = "scripted"
default = "perfect"
"#;

fn scripted(small: &str, llm: &str) -> String {
    format!(
        "[correctors.small]\nkind = \"scripted\"\ndefault = \"{small}\"\n[correctors.llm]\nkind = \"scripted\"\ndefault = \"{llm}\"\n"
    )
}

#[test]
fn gen_corpus_reports_the_error_rate_and_is_reproducible() {
    let s = Setup::new();
    let cfg = s.config("gen", &format!("{GENERATE}{SCRIPTED}"));
    let summary = harness::cmd_gen_corpus(&cfg).unwrap();
    assert_eq!(summary.all.count, 1000);
    assert_eq!(summary.all.error_rate, 0.75);
    let counts: Vec<usize> = ["train", "valid", "test"].iter().map(|k| summary.splits[*k].count).collect();
    assert_eq!(counts, [800, 100, 100]);

    let first: Vec<Vec<u8>> = ["train", "valid", "test"]
        .iter()
        .map(|k| std::fs::read(s.path(&format!("data/{k}.jsonl"))).unwrap())
        .collect();
    harness::cmd_gen_corpus(&cfg).unwrap();
    for (k, bytes) in ["train", "valid", "test"].iter().zip(&first) {
        assert_eq!(&std::fs::read(s.path(&format!("data/{k}.jsonl"))).unwrap(), bytes, "{k}");
        common::assert_valid_lines("corpus_pair.v1.json", &s.path(&format!("data/{k}.jsonl")));
    }

    let mut ids: Vec<String> = ["train", "valid", "test"]
        .iter()
        .flat_map(|k| load_corpus(&s.path(&format!("data/{k}.jsonl"))).unwrap())
        .map(|p| p.id)
        .collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 1000, "splits overlap");
}

#[test]
fn gen_corpus_needs_a_confusion_table_for_substitutions() {
    let s = Setup::new();
    let body = GENERATE.replace("confusions = \"confusions.jsonl\"\n", "");
    let cfg = s.config("noconf", &format!("{body}{SCRIPTED}"));
    assert!(matches!(harness::cmd_gen_corpus(&cfg), Err(Error::Config(_))));

    let body = format!(
        "{body}[generate.op_weights]\nadjacent_transposition = 1.0\nrandom_insertion = 1.0\n"
    );
    let cfg = s.config("noconf2", &format!("{body}{SCRIPTED}"));
    harness::cmd_gen_corpus(&cfg).unwrap();
}

#[test]
fn missing_inputs_are_config_errors() {
    let s = Setup::new();
    let cfg = s.config("missing", &format!("{SCRIPTED}[[policies]]\nkind = \"trigger3\"\n"));
    let err = harness::cmd_build_labels(&cfg, &RunOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err:?}");
    assert_eq!(err.exit_code(), 1);
}

fn write_corpus(s: &Setup, pairs: &[ParallelPair]) {
    for split in ["train", "valid", "test"] {
        save_corpus(&s.path(&format!("data/{split}.jsonl")), pairs).unwrap();
    }
}

fn small_corpus() -> Vec<ParallelPair> {
    vec![
        ParallelPair::new("a", "nwe york", "new york"),
        ParallelPair::new("b", "weather", "weather"),
        ParallelPair::new("c", "pyhton tutorial", "python tutorial"),
        ParallelPair::new("d", "cheap flihgts", "cheap flights"),
        ParallelPair::new("e", "pizza", "pizza"),
    ]
}

#[test]
fn all_correct_corpus_gives_negative_ct_and_empty_lt_ft() {
    let s = Setup::new();
    let pairs: Vec<_> = small_corpus().into_iter().filter(|p| !p.is_erroneous()).collect();
    write_corpus(&s, &pairs);
    let cfg = s.config("clean", &scripted("noop", "noop"));
    let summary = harness::cmd_build_labels(&cfg, &RunOptions::default()).unwrap();
    assert_eq!((summary.ct.positive, summary.ct.negative), (0, 2));
    assert_eq!((summary.lt.positive, summary.lt.negative), (0, 0));
    assert_eq!((summary.ft.positive, summary.ft.negative), (0, 0));

    let err = harness::cmd_train(&cfg).unwrap_err();
    match err {
        Error::DegenerateLabels(msg) => assert!(msg.starts_with("CT"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

fn positives(cfg: &HarnessConfig, kind: TriggerKind) -> Vec<String> {
    let mut xs: Vec<String> = load_labels(&cfg.label_path(kind))
        .unwrap()
        .into_iter()
        .filter(|e| e.label == 1)
        .map(|e| e.x)
        .collect();
    xs.sort();
    xs
}

fn erroneous_sources() -> Vec<String> {
    let mut xs: Vec<String> = small_corpus()
        .into_iter()
        .filter(ParallelPair::is_erroneous)
        .map(|p| p.source)
        .collect();
    xs.sort();
    xs
}

#[test]
fn llm_always_fixes_makes_every_erroneous_pair_lt_positive() {
    let s = Setup::new();
    write_corpus(&s, &small_corpus());
    let cfg = s.config("ltpos", &scripted("noop", "perfect"));
    harness::cmd_build_labels(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(positives(&cfg, TriggerKind::Llm), erroneous_sources());
    assert!(positives(&cfg, TriggerKind::Fallback).is_empty());
    assert_eq!(positives(&cfg, TriggerKind::Correction), erroneous_sources());
}

#[test]
fn nobody_fixes_makes_every_erroneous_pair_ft_positive() {
    let s = Setup::new();
    write_corpus(&s, &small_corpus());
    let cfg = s.config("ftpos", &scripted("noop", "noop"));
    harness::cmd_build_labels(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(positives(&cfg, TriggerKind::Fallback), erroneous_sources());
    assert!(positives(&cfg, TriggerKind::Llm).is_empty());
}

#[test]
fn eval_without_policies_is_an_error() {
    let s = Setup::new();
    write_corpus(&s, &small_corpus());
    let cfg = s.config("nopol", SCRIPTED);
    assert!(matches!(
        harness::cmd_eval(&cfg, &RunOptions::default()),
        Err(Error::Config(_))
    ));
}

#[test]
fn oracle_triggers_need_scripted_correctors() {
    let s = Setup::new();
    write_corpus(&s, &small_corpus());
    std::fs::write(s.path("rules.jsonl"), "{\"from\":\"nwe\",\"to\":\"new\"}\n").unwrap();
    let body = "[trigger]\nsource = \"oracle\"\n[correctors.small]\nkind = \"rules\"\nrules = \"rules.jsonl\"\n[correctors.llm]\nkind = \"scripted\"\ndefault = \"perfect\"\n[[policies]]\nkind = \"trigger3\"\n";
    let cfg = s.config("oraclerules", body);
    assert!(matches!(
        harness::cmd_eval(&cfg, &RunOptions::default()),
        Err(Error::Config(_))
    ));
}

/// Writes behaviour files from per-source rules. Behaviour depends on the
/// source only, since duplicate sources must get the same answer.
fn write_scripts(
    s: &Setup,
    pairs: &[ParallelPair],
    small: impl Fn(&str) -> Behavior,
    llm: impl Fn(&str) -> Behavior,
) -> String {
    let script = |f: &dyn Fn(&str) -> Behavior| -> Vec<Script> {
        pairs
            .iter()
            .map(|p| Script {
                id: p.id.clone(),
                behavior: f(&p.source),
                output: None,
            })
            .collect()
    };
    save_scripts(&s.path("small.jsonl"), &script(&small)).unwrap();
    save_scripts(&s.path("llm.jsonl"), &script(&llm)).unwrap();
    "[correctors.small]\nkind = \"scripted\"\nbehaviors = \"small.jsonl\"\n[correctors.llm]\nkind = \"scripted\"\nbehaviors = \"llm.jsonl\"\n".into()
}

fn perfect_if(fix: bool) -> Behavior {
    if fix {
        Behavior::Perfect
    } else {
        Behavior::Noop
    }
}

const ALL_POLICIES: &str = r#"
[trigger]
epochs = 10
[[policies]]
kind = "trigger3"
[[policies]]
kind = "random_routing"
p = 0.5
[[policies]]
kind = "random_cascading"
p = [0.2, 0.4]
[[policies]]
kind = "margin_sampling"
tau = 0.5
[[policies]]
kind = "meta_routing"
[[policies]]
kind = "hybrid"
"#;

fn read(path: &Path) -> Value {
    common::read_json(path)
}

#[test]
fn full_pipeline_artifacts_match_schemas() {
    let s = Setup::new();
    let cfg = s.config("gen", &format!("{GENERATE}{SCRIPTED}"));
    harness::cmd_gen_corpus(&cfg).unwrap();
    let mut all = load_corpus(&s.path("data/train.jsonl")).unwrap();
    all.extend(load_corpus(&s.path("data/test.jsonl")).unwrap());
    let correctors = write_scripts(
        &s,
        &all,
        |x| perfect_if(x.contains(' ')),
        |x| perfect_if(x.len() % 4 != 0),
    );
    let cfg = s.config("full", &format!("{correctors}{ALL_POLICIES}"));

    let opts = RunOptions {
        parallelism: 3,
        ..Default::default()
    };
    let labels = harness::cmd_build_labels(&cfg, &opts).unwrap();
    assert_eq!(labels.failed, 0);
    assert_eq!(labels.records, 800);
    let trained = harness::cmd_train(&cfg).unwrap();
    assert_eq!(trained.len(), 5);
    assert!(trained.iter().all(|t| t.loss.is_finite() && (0.0..=1.0).contains(&t.accuracy)));
    let report = harness::cmd_eval(&cfg, &opts).unwrap();
    let names: Vec<_> = report.policies.iter().map(|p| p.policy.clone()).collect();
    let mut sorted = names.clone();
    sorted.sort();
    assert_eq!(names, sorted);
    assert_eq!(names.len(), 7);

    common::assert_valid_lines("correction_record.v1.json", &cfg.records_path());
    for kind in [TriggerKind::Correction, TriggerKind::Llm, TriggerKind::Fallback] {
        common::assert_valid_lines("label.v1.json", &cfg.label_path(kind));
    }
    for kind in [
        TriggerKind::Correction,
        TriggerKind::Llm,
        TriggerKind::Fallback,
        TriggerKind::MetaRouter,
        TriggerKind::HybridRouter,
    ] {
        common::assert_valid("model.v1.json", &read(&cfg.model_path(kind)));
    }
    let eval = cfg.out_dir.join("eval");
    common::assert_valid("report.v1.json", &read(&eval.join("report.json")));
    let traces: Vec<_> = std::fs::read_dir(eval.join("traces")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(traces.len(), 7);
    for t in &traces {
        common::assert_valid_lines("trace.v1.json", t);
    }
    let text = std::fs::read_to_string(eval.join("report.txt")).unwrap();
    assert_eq!(text.lines().count(), 8);
    assert!(text.lines().next().unwrap().contains("LC"));

    // Scoring a trace reproduces the report's row.
    let trace = eval.join("traces/trigger3.jsonl");
    let score = harness::cmd_score(&cfg.corpus.test, &trace).unwrap();
    common::assert_valid("score.v1.json", &serde_json::to_value(&score).unwrap());
    let row = report.policies.iter().find(|p| p.policy == "trigger3").unwrap();
    assert_eq!(score.char, row.char);
    assert_eq!(score.word, row.word);

    let table = harness::cmd_compare(&[eval.join("report.json")]).unwrap();
    assert_eq!(table, text);
}

#[test]
fn threshold_sweep_adds_one_policy_per_threshold() {
    let s = Setup::new();
    let mut pairs = Vec::new();
    for (i, p) in small_corpus().iter().cycle().take(40).enumerate() {
        pairs.push(ParallelPair::new(format!("{i:03}"), p.source.clone(), p.target.clone()));
    }
    write_corpus(&s, &pairs);
    let correctors = write_scripts(&s, &pairs, |_| Behavior::Noop, |x| perfect_if(!x.starts_with('n')));
    let cfg = s.config("sweep", &format!("{correctors}[[policies]]\nkind = \"trigger3\"\n"));
    harness::cmd_build_labels(&cfg, &RunOptions::default()).unwrap();
    harness::cmd_train(&cfg).unwrap();
    let opts = RunOptions {
        threshold_sweep: Some("0.3:0.7:0.2".parse().unwrap()),
        ..Default::default()
    };
    let report = harness::cmd_eval(&cfg, &opts).unwrap();
    let names: Vec<_> = report.policies.iter().map(|p| p.policy.as_str()).collect();
    assert_eq!(names, ["trigger3(t=0.30)", "trigger3(t=0.50)", "trigger3(t=0.70)"]);
    // Higher thresholds fire less, so the LLM is reached no more often.
    let lc: Vec<f64> = report.policies.iter().map(|p| p.llm_coverage).collect();
    assert!(lc.windows(2).all(|w| w[0] >= w[1]), "{lc:?}");
}

#[test]
fn extract_edits_writes_parseable_m2() {
    let s = Setup::new();
    write_corpus(&s, &small_corpus());
    for level in Level::ALL {
        let m2 = harness::cmd_extract_edits(&s.path("data/test.jsonl"), level).unwrap();
        let blocks = parse_m2(&m2, level).unwrap();
        assert_eq!(blocks.len(), 5);
        let edits: usize = blocks.iter().map(|b| b.edits.len()).sum();
        assert_eq!(edits, 3, "{level}");
    }
}

#[test]
fn score_requires_every_hypothesis() {
    let s = Setup::new();
    write_corpus(&s, &small_corpus());
    std::fs::write(s.path("hyp.jsonl"), "{\"id\":\"a\",\"hypothesis\":\"new york\"}\n").unwrap();
    assert!(matches!(
        harness::cmd_score(&s.path("data/test.jsonl"), &s.path("hyp.jsonl")),
        Err(Error::InvalidInput(_))
    ));
}
