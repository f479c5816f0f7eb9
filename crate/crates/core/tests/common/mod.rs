#![allow(dead_code)]

use std::path::{Path, PathBuf};

use serde_json::Value;

pub fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn fixture(rel: &str) -> PathBuf {
    crate_dir().join("tests/fixtures").join(rel)
}

pub fn read_json(path: &Path) -> Value {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn validator(schema: &str) -> jsonschema::Validator {
    let path = crate_dir().join("schemas").join(schema);
    jsonschema::validator_for(&read_json(&path)).unwrap_or_else(|e| panic!("{schema}: {e}"))
}

pub fn schema_errors(schema: &str, instance: &Value) -> Vec<String> {
    validator(schema).iter_errors(instance).map(|e| e.to_string()).collect()
}

pub fn assert_valid(schema: &str, instance: &Value) {
    let errors = schema_errors(schema, instance);
    assert!(errors.is_empty(), "{schema} rejected {instance}: {errors:?}");
}

/// Validates every line of a JSONL file.
pub fn assert_valid_lines(schema: &str, path: &Path) {
    let v = validator(schema);
    let text = std::fs::read_to_string(path).unwrap();
    assert!(!text.trim().is_empty(), "{} is empty", path.display());
    for (i, line) in text.lines().enumerate() {
        let instance: Value = serde_json::from_str(line).unwrap();
        let errors: Vec<String> = v.iter_errors(&instance).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{}:{}: {errors:?}", path.display(), i + 1);
    }
}
