//! Line-delimited request/response log for LLM calls.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use chrono::{SecondsFormat, Utc};
use serde::Serialize;

/// Appends one JSON object per completed (or failed) call. Writes are
/// serialized behind a mutex; each line is flushed so the file tails well.
pub struct Transcript {
    writer: Mutex<BufWriter<File>>,
    deterministic: bool,
}

#[derive(Serialize)]
struct Entry<'a> {
    ts: String,
    template: &'a str,
    backend: &'a str,
    attempt: u32,
    latency_ms: u64,
    prompt: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    response: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

impl Transcript {
    /// Creates (truncates) the transcript file. With `deterministic` set,
    /// timestamps are pinned to the epoch so replayed runs produce
    /// byte-identical transcripts.
    pub fn create(path: &Path, deterministic: bool) -> std::io::Result<Self> {
        Ok(Self {
            writer: Mutex::new(BufWriter::new(File::create(path)?)),
            deterministic,
        })
    }

    fn timestamp(&self) -> String {
        if self.deterministic {
            "1970-01-01T00:00:00Z".to_string()
        } else {
            Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
        }
    }

    pub fn append(
        &self,
        template: &str,
        backend: &str,
        attempt: u32,
        latency_ms: u64,
        prompt: &str,
        outcome: Result<&str, &str>,
    ) -> std::io::Result<()> {
        let entry = Entry {
            ts: self.timestamp(),
            template,
            backend,
            attempt,
            latency_ms,
            prompt,
            response: outcome.ok(),
            error: outcome.err(),
        };
        let line = serde_json::to_string(&entry).expect("transcript entry json");
        let mut writer = self.writer.lock().expect("transcript lock");
        writeln!(writer, "{line}")?;
        writer.flush()
    }
}
