//! Parallel query corpora and synthetic error injection.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{jsonl, Error, Result};

/// An original query and its gold correction. The two may differ in length.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParallelPair {
    pub id: String,
    pub source: String,
    pub target: String,
}

impl ParallelPair {
    pub fn new(id: impl Into<String>, source: impl Into<String>, target: impl Into<String>) -> Self {
        ParallelPair {
            id: id.into(),
            source: source.into(),
            target: target.into(),
        }
    }

    pub fn is_erroneous(&self) -> bool {
        self.source != self.target
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.source.trim().is_empty() {
            return Err(format!("pair {:?} has an empty source", self.id));
        }
        if self.target.trim().is_empty() {
            return Err(format!("pair {:?} has an empty target", self.id));
        }
        Ok(())
    }
}

pub fn load_corpus(path: &Path) -> Result<Vec<ParallelPair>> {
    let pairs: Vec<ParallelPair> = jsonl::read(path)?;
    let mut seen = HashSet::with_capacity(pairs.len());
    for (idx, pair) in pairs.iter().enumerate() {
        pair.check().map_err(|message| Error::Schema {
            path: path.to_owned(),
            line: idx + 1,
            message,
        })?;
        if !seen.insert(pair.id.as_str()) {
            return Err(Error::DuplicateId(pair.id.clone()));
        }
    }
    Ok(pairs)
}

pub fn save_corpus(path: &Path, pairs: &[ParallelPair]) -> Result<()> {
    jsonl::write(path, pairs)
}

/// Plain text, one clean query per line; blank lines are skipped.
pub fn load_clean_queries(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}

/// Characters and the characters they are commonly confused with
/// (homophones, near-sound characters, keyboard neighbours).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfusionTable {
    entries: BTreeMap<char, Vec<char>>,
}

#[derive(Deserialize, Serialize)]
struct ConfusionLine {
    #[serde(rename = "char")]
    ch: String,
    confusions: Vec<String>,
}

fn single_char(s: &str) -> Option<char> {
    let mut it = s.chars();
    match (it.next(), it.next()) {
        (Some(c), None) => Some(c),
        _ => None,
    }
}

impl ConfusionTable {
    pub fn new(entries: impl IntoIterator<Item = (char, Vec<char>)>) -> Result<Self> {
        let mut map: BTreeMap<char, Vec<char>> = BTreeMap::new();
        for (ch, confusions) in entries {
            map.entry(ch).or_default().extend(confusions);
        }
        for (ch, list) in &map {
            if list.is_empty() || list.iter().all(|c| c == ch) {
                return Err(Error::InvalidInput(format!(
                    "confusion entry {ch:?} has no replacement other than itself"
                )));
            }
        }
        Ok(ConfusionTable { entries: map })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let lines: Vec<ConfusionLine> = jsonl::read(path)?;
        let mut entries = Vec::with_capacity(lines.len());
        for (idx, line) in lines.into_iter().enumerate() {
            let schema = |message: String| Error::Schema {
                path: path.to_owned(),
                line: idx + 1,
                message,
            };
            let ch = single_char(&line.ch)
                .ok_or_else(|| schema(format!("\"char\" must be one codepoint, got {:?}", line.ch)))?;
            let confusions = line
                .confusions
                .iter()
                .map(|c| single_char(c).ok_or_else(|| schema(format!("confusion {c:?} is not one codepoint"))))
                .collect::<Result<Vec<_>>>()?;
            entries.push((ch, confusions));
        }
        Self::new(entries)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Replacements for `ch`, excluding `ch` itself.
    pub fn confusions(&self, ch: char) -> Vec<char> {
        self.entries
            .get(&ch)
            .map(|l| l.iter().copied().filter(|c| *c != ch).collect())
            .unwrap_or_default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseOp {
    ConfusionSubstitution,
    AdjacentTransposition,
    RandomInsertion,
    RandomDeletion,
}

impl NoiseOp {
    pub const ALL: [NoiseOp; 4] = [
        NoiseOp::ConfusionSubstitution,
        NoiseOp::AdjacentTransposition,
        NoiseOp::RandomInsertion,
        NoiseOp::RandomDeletion,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpWeights {
    #[serde(default)]
    pub confusion_substitution: f64,
    #[serde(default)]
    pub adjacent_transposition: f64,
    #[serde(default)]
    pub random_insertion: f64,
    #[serde(default)]
    pub random_deletion: f64,
}

impl Default for OpWeights {
    fn default() -> Self {
        OpWeights {
            confusion_substitution: 1.0,
            adjacent_transposition: 1.0,
            random_insertion: 1.0,
            random_deletion: 1.0,
        }
    }
}

impl OpWeights {
    fn as_array(&self) -> [f64; 4] {
        [
            self.confusion_substitution,
            self.adjacent_transposition,
            self.random_insertion,
            self.random_deletion,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub seed: u64,
    /// Fraction of queries to corrupt.
    pub error_rate: f64,
    #[serde(default)]
    pub op_weights: OpWeights,
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.error_rate) {
            return Err(Error::Config(format!(
                "error_rate must be in [0,1], got {}",
                self.error_rate
            )));
        }
        let w = self.op_weights.as_array();
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config(
                "op_weights must be non-negative with a positive sum".into(),
            ));
        }
        Ok(())
    }
}

/// A fully resolved single-character corruption. Indices are codepoint offsets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Corruption {
    Substitute { index: usize, with: char },
    Transpose { index: usize },
    Insert { index: usize, ch: char },
    Delete { index: usize },
}

impl Corruption {
    pub fn apply(&self, clean: &str) -> Result<String> {
        let mut chars: Vec<char> = clean.chars().collect();
        let n = chars.len();
        let oob = |i: usize| Error::InvalidInput(format!("index {i} out of range for {clean:?}"));
        match *self {
            Corruption::Substitute { index, with } => {
                *chars.get_mut(index).ok_or_else(|| oob(index))? = with;
            }
            Corruption::Transpose { index } => {
                if index + 1 >= n {
                    return Err(oob(index));
                }
                chars.swap(index, index + 1);
            }
            Corruption::Insert { index, ch } => {
                if index > n {
                    return Err(oob(index));
                }
                chars.insert(index, ch);
            }
            Corruption::Delete { index } => {
                if index >= n {
                    return Err(oob(index));
                }
                chars.remove(index);
            }
        }
        Ok(chars.into_iter().collect())
    }
}

/// Picks a position for `op`, or `None` when the query offers no position
/// where the operation changes the text (caller falls back to insertion).
fn plan(
    chars: &[char],
    op: NoiseOp,
    table: &ConfusionTable,
    rng: &mut ChaCha8Rng,
) -> Option<Corruption> {
    let n = chars.len();
    match op {
        NoiseOp::ConfusionSubstitution => {
            let eligible: Vec<usize> = (0..n)
                .filter(|&i| !table.confusions(chars[i]).is_empty())
                .collect();
            let &index = eligible.choose(rng)?;
            let with = *table.confusions(chars[index]).choose(rng)?;
            Some(Corruption::Substitute { index, with })
        }
        NoiseOp::AdjacentTransposition => {
            let eligible: Vec<usize> = (0..n.saturating_sub(1))
                .filter(|&i| chars[i] != chars[i + 1])
                .collect();
            eligible.choose(rng).map(|&index| Corruption::Transpose { index })
        }
        NoiseOp::RandomDeletion => {
            if n < 2 {
                return None;
            }
            let eligible: Vec<usize> = (0..n)
                .filter(|&i| chars.iter().enumerate().any(|(j, c)| j != i && !c.is_whitespace()))
                .collect();
            eligible.choose(rng).map(|&index| Corruption::Delete { index })
        }
        NoiseOp::RandomInsertion => None,
    }
}

/// Corrupts `round(error_rate * N)` of the clean queries with exactly one
/// noise operation each. Targets are always the clean inputs; pair ids are
/// `q000000`, `q000001`, ... in input order.
pub fn inject_noise(
    clean_queries: &[String],
    table: &ConfusionTable,
    cfg: &NoiseConfig,
) -> Result<Vec<ParallelPair>> {
    cfg.validate()?;
    if cfg.op_weights.confusion_substitution > 0.0 && table.is_empty() {
        return Err(Error::Config(
            "confusion_substitution has positive weight but the confusion table is empty".into(),
        ));
    }
    if let Some(i) = clean_queries.iter().position(|q| q.trim().is_empty()) {
        return Err(Error::InvalidInput(format!("clean query {i} is empty")));
    }

    let n = clean_queries.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = ((cfg.error_rate * n as f64).round() as usize).min(n);
    let mut corrupt = vec![false; n];
    for i in rand::seq::index::sample(&mut rng, n, k) {
        corrupt[i] = true;
    }

    let inventory: Vec<char> = clean_queries
        .iter()
        .flat_map(|q| q.chars())
        .filter(|c| !c.is_whitespace())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let ops = WeightedIndex::new(cfg.op_weights.as_array()).expect("weights validated");

    let mut out = Vec::with_capacity(n);
    for (i, clean) in clean_queries.iter().enumerate() {
        let source = if corrupt[i] {
            let chars: Vec<char> = clean.chars().collect();
            let op = NoiseOp::ALL[ops.sample(&mut rng)];
            let corruption = plan(&chars, op, table, &mut rng).unwrap_or_else(|| {
                Corruption::Insert {
                    index: rng.random_range(0..=chars.len()),
                    ch: *inventory.choose(&mut rng).expect("queries are non-empty"),
                }
            });
            corruption.apply(clean)?
        } else {
            clean.clone()
        };
        out.push(ParallelPair::new(format!("q{i:06}"), source, clean.clone()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub count: usize,
    /// Mean source length in codepoints.
    pub avg_source_length: f64,
    pub error_rate: f64,
}

pub fn corpus_stats(pairs: &[ParallelPair]) -> Result<CorpusStats> {
    if pairs.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let count = pairs.len();
    let chars: usize = pairs.iter().map(|p| p.source.chars().count()).sum();
    let wrong = pairs.iter().filter(|p| p.is_erroneous()).count();
    Ok(CorpusStats {
        count,
        avg_source_length: chars as f64 / count as f64,
        error_rate: wrong as f64 / count as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn queries(qs: &[&str]) -> Vec<String> {
        qs.iter().map(|s| s.to_string()).collect()
    }

    fn table() -> ConfusionTable {
        ConfusionTable::new([('a', vec!['o', 'e']), ('b', vec!['p'])]).unwrap()
    }

    #[test]
    fn load_examples() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.jsonl");
        std::fs::write(&empty, "").unwrap();
        assert!(load_corpus(&empty).unwrap().is_empty());

        let one = dir.path().join("one.jsonl");
        std::fs::write(&one, r#"{"id":"q1","source":"abc","target":"abc"}"#).unwrap();
        let pairs = load_corpus(&one).unwrap();
        assert_eq!(pairs, [ParallelPair::new("q1", "abc", "abc")]);

        let dup = dir.path().join("dup.jsonl");
        let mut f = std::fs::File::create(&dup).unwrap();
        writeln!(f, r#"{{"id":"q1","source":"a","target":"a"}}"#).unwrap();
        writeln!(f, r#"{{"id":"q1","source":"b","target":"b"}}"#).unwrap();
        let err = load_corpus(&dup).unwrap_err();
        assert!(err.to_string().contains("duplicate id"), "{err}");
    }

    #[test]
    fn load_reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.jsonl");
        std::fs::write(&bad, "{\"id\":\"a\",\"source\":\"x\",\"target\":\"x\"}\n{oops\n").unwrap();
        assert!(matches!(load_corpus(&bad), Err(Error::Parse { line: 2, .. })));

        let missing = dir.path().join("missing.jsonl");
        std::fs::write(&missing, "{\"id\":\"a\",\"source\":\"x\"}\n").unwrap();
        assert!(matches!(load_corpus(&missing), Err(Error::Schema { line: 1, .. })));

        let blank = dir.path().join("blank.jsonl");
        std::fs::write(&blank, "{\"id\":\"a\",\"source\":\"  \",\"target\":\"x\"}\n").unwrap();
        assert!(matches!(load_corpus(&blank), Err(Error::Schema { line: 1, .. })));
    }

    #[test]
    fn save_then_load_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let pairs = vec![
            ParallelPair::new("a", "nwe york", "new york"),
            ParallelPair::new("b", "天气 \"预报\"", "天气预报"),
        ];
        save_corpus(&path, &pairs).unwrap();
        assert_eq!(load_corpus(&path).unwrap(), pairs);
    }

    #[test]
    fn confusion_table_rules() {
        assert!(ConfusionTable::new([('a', vec!['a'])]).is_err());
        assert!(ConfusionTable::new([('a', vec![])]).is_err());
        let t = ConfusionTable::new([('a', vec!['a', 'o'])]).unwrap();
        assert_eq!(t.confusions('a'), ['o']);
        assert!(t.confusions('z').is_empty());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        std::fs::write(&path, "{\"char\":\"在\",\"confusions\":[\"再\"]}\n").unwrap();
        assert_eq!(ConfusionTable::load(&path).unwrap().confusions('在'), ['再']);
        std::fs::write(&path, "{\"char\":\"ab\",\"confusions\":[\"c\"]}\n").unwrap();
        assert!(ConfusionTable::load(&path).is_err());
    }

    #[test]
    fn forced_corruptions() {
        assert_eq!(Corruption::Transpose { index: 1 }.apply("abcd").unwrap(), "acbd");
        let with = table().confusions('a')[0];
        assert_eq!(Corruption::Substitute { index: 0, with }.apply("ab").unwrap(), "ob");
        assert_eq!(Corruption::Insert { index: 2, ch: 'x' }.apply("ab").unwrap(), "abx");
        assert_eq!(Corruption::Delete { index: 0 }.apply("ab").unwrap(), "b");
        assert!(Corruption::Transpose { index: 1 }.apply("ab").is_err());
    }

    #[test]
    fn zero_error_rate_keeps_everything_clean() {
        let cfg = NoiseConfig {
            seed: 1,
            error_rate: 0.0,
            op_weights: OpWeights::default(),
        };
        let pairs = inject_noise(&queries(&["abc", "de", "f"]), &table(), &cfg).unwrap();
        assert!(pairs.iter().all(|p| p.source == p.target));
    }

    #[test]
    fn single_char_queries_fall_back_to_insertion() {
        let cfg = NoiseConfig {
            seed: 3,
            error_rate: 1.0,
            op_weights: OpWeights {
                confusion_substitution: 0.0,
                adjacent_transposition: 1.0,
                random_insertion: 0.0,
                random_deletion: 1.0,
            },
        };
        let pairs = inject_noise(&queries(&["a", "b", "c", "z"]), &ConfusionTable::default(), &cfg)
            .unwrap();
        for p in pairs {
            assert_eq!(p.source.chars().count(), 2, "{p:?}");
            assert!(p.source.contains(p.target.as_str()));
        }
    }

    #[test]
    fn config_errors() {
        let bad_rate = NoiseConfig {
            seed: 0,
            error_rate: 1.5,
            op_weights: OpWeights::default(),
        };
        assert!(inject_noise(&queries(&["a"]), &table(), &bad_rate).is_err());
        let no_table = NoiseConfig {
            seed: 0,
            error_rate: 0.5,
            op_weights: OpWeights::default(),
        };
        assert!(matches!(
            inject_noise(&queries(&["ab"]), &ConfusionTable::default(), &no_table),
            Err(Error::Config(_))
        ));
        assert!(inject_noise(&queries(&["ab", " "]), &table(), &no_table).is_err());
    }

    #[test]
    fn stats_examples() {
        let pairs = [
            ParallelPair::new("1", "ab", "ab"),
            ParallelPair::new("2", "abcd", "abce"),
        ];
        let s = corpus_stats(&pairs).unwrap();
        assert_eq!(s.count, 2);
        assert_eq!(s.error_rate, 0.5);
        assert_eq!(s.avg_source_length, 3.0);
        let clean = corpus_stats(&pairs[..1]).unwrap();
        assert_eq!(clean.error_rate, 0.0);
        assert!(corpus_stats(&[]).is_err());
    }
}
