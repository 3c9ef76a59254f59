//! Canned-response backend keyed by the hash of the rendered prompt.
//!
//! With a fixture file covering every call, a whole pipeline run is a pure
//! function of its inputs — the backbone of the deterministic test story.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{BackendFailure, ChatBackend, LlmRequest};

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("bad fixture line {line}: {reason}")]
    BadLine { line: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
struct FixtureLine {
    key: String,
    response: String,
}

/// Key = lowercase hex SHA-256 of the rendered prompt.
pub fn key_for(rendered_prompt: &str) -> String {
    let digest = Sha256::digest(rendered_prompt.as_bytes());
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

#[derive(Debug, Default, Clone)]
pub struct FixtureBackend {
    map: HashMap<String, String>,
}

impl FixtureBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads a line-delimited `{"key":…,"response":…}` file.
    pub fn load(path: &Path) -> Result<Self, FixtureError> {
        let reader = BufReader::new(File::open(path)?);
        let mut map = HashMap::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: FixtureLine =
                serde_json::from_str(&line).map_err(|e| FixtureError::BadLine {
                    line: idx + 1,
                    reason: e.to_string(),
                })?;
            map.insert(parsed.key, parsed.response);
        }
        Ok(Self { map })
    }

    pub fn save(&self, path: &Path) -> Result<(), FixtureError> {
        let mut out = BufWriter::new(File::create(path)?);
        // Sorted by key so the file is diffable across authoring runs.
        let mut keys: Vec<&String> = self.map.keys().collect();
        keys.sort();
        for key in keys {
            let line = FixtureLine {
                key: key.clone(),
                response: self.map[key].clone(),
            };
            writeln!(out, "{}", serde_json::to_string(&line).expect("fixture json"))?;
        }
        out.flush()?;
        Ok(())
    }

    /// Registers the response for a rendered prompt.
    pub fn insert_prompt(&mut self, rendered_prompt: &str, response: &str) {
        self.map.insert(key_for(rendered_prompt), response.to_string());
    }

    pub fn insert_key(&mut self, key: &str, response: &str) {
        self.map.insert(key.to_string(), response.to_string());
    }

    pub fn merge(&mut self, other: FixtureBackend) {
        self.map.extend(other.map);
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn contains_prompt(&self, rendered_prompt: &str) -> bool {
        self.map.contains_key(&key_for(rendered_prompt))
    }
}

#[async_trait]
impl ChatBackend for FixtureBackend {
    fn id(&self) -> &str {
        "fixture"
    }

    fn deterministic(&self) -> bool {
        true
    }

    async fn complete(&self, request: &LlmRequest) -> Result<String, BackendFailure> {
        let key = key_for(&request.rendered_prompt);
        match self.map.get(&key) {
            Some(text) => Ok(text.clone()),
            None => Err(BackendFailure::Permanent(format!(
                "no fixture response for {} call (key {key})",
                request.template_id
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_is_sha256_hex() {
        // SHA-256 of the empty string, a published constant.
        assert_eq!(
            key_for(""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(key_for("abc").len(), 64);
        assert_ne!(key_for("abc"), key_for("abd"));
    }

    #[tokio::test]
    async fn hit_and_miss() {
        let mut backend = FixtureBackend::new();
        backend.insert_prompt("ask me", "canned answer");
        let request = LlmRequest::new(super::super::TemplateId::Rewrite, "ask me");
        assert_eq!(backend.complete(&request).await.unwrap(), "canned answer");

        let miss = LlmRequest::new(super::super::TemplateId::Rewrite, "never seen");
        assert!(matches!(
            backend.complete(&miss).await,
            Err(BackendFailure::Permanent(_))
        ));
    }

    #[test]
    fn file_round_trip_is_sorted_and_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixtures.jsonl");
        let mut backend = FixtureBackend::new();
        backend.insert_prompt("zebra", "z");
        backend.insert_prompt("aardvark", "a");
        backend.save(&path).unwrap();
        let loaded = FixtureBackend::load(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert!(loaded.contains_prompt("zebra"));
        // Second save is byte-identical (sorted keys).
        let path2 = dir.path().join("fixtures2.jsonl");
        loaded.save(&path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn load_reports_bad_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"key\":\"k\",\"response\":\"ok\"}\nnot json\n").unwrap();
        assert!(matches!(
            FixtureBackend::load(&path),
            Err(FixtureError::BadLine { line: 2, .. })
        ));
    }
}
