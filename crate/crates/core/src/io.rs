//! Reading prompt corpora from disk.
//!
//! Two line-delimited layouts are supported: plain text (one prompt per
//! line) and JSONL records carrying a `text` field and an optional `id`.
//! Corrupt JSONL lines are skipped and counted rather than aborting a read,
//! so one bad row cannot sink a large corpus.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;
use thiserror::Error;

use crate::analytics::word_count;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad filter {0:?}; expected \"nonempty\", \"all\", or \"words:MIN..MAX\"")]
    BadFilter(String),
    #[error("bad corpus format {0:?}; expected \"text\" or \"jsonl\"")]
    BadFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Text,
    Jsonl,
}

impl FromStr for CorpusFormat {
    type Err = IoError;

    fn from_str(s: &str) -> Result<Self, IoError> {
        match s {
            "text" => Ok(Self::Text),
            "jsonl" => Ok(Self::Jsonl),
            other => Err(IoError::BadFormat(other.to_string())),
        }
    }
}

/// Picks a format when none was given explicitly: `.jsonl`/`.json` files
/// parse as JSONL, everything else as plain text.
pub fn resolve_format(explicit: Option<CorpusFormat>, path: &Path) -> CorpusFormat {
    explicit.unwrap_or_else(|| match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") | Some("json") => CorpusFormat::Jsonl,
        _ => CorpusFormat::Text,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptItem {
    pub id: Option<String>,
    pub text: String,
}

/// Word-count filter applied while reading. The default keeps prompts that
/// are non-empty after normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusFilter {
    pub min_words: usize,
    pub max_words: Option<usize>,
}

impl Default for CorpusFilter {
    fn default() -> Self {
        Self {
            min_words: 1,
            max_words: None,
        }
    }
}

impl CorpusFilter {
    pub fn keeps(&self, text: &str) -> bool {
        let words = word_count(text);
        words >= self.min_words && self.max_words.is_none_or(|m| words <= m)
    }
}

impl FromStr for CorpusFilter {
    type Err = IoError;

    fn from_str(s: &str) -> Result<Self, IoError> {
        match s {
            "nonempty" => Ok(Self::default()),
            "all" => Ok(Self {
                min_words: 0,
                max_words: None,
            }),
            other => other
                .strip_prefix("words:")
                .and_then(|range| {
                    let (lo, hi) = range.split_once("..")?;
                    let min_words = if lo.is_empty() { 0 } else { lo.parse().ok()? };
                    let max_words = if hi.is_empty() {
                        None
                    } else {
                        Some(hi.parse().ok()?)
                    };
                    Some(Self {
                        min_words,
                        max_words,
                    })
                })
                .ok_or_else(|| IoError::BadFilter(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReadSummary {
    pub lines: usize,
    pub kept: usize,
    pub filtered: usize,
    pub corrupt: usize,
}

#[derive(Deserialize)]
struct JsonlPrompt {
    #[serde(default)]
    id: Option<String>,
    text: String,
}

/// Reads a corpus, applying the filter and an optional cap on kept prompts.
pub fn read_prompt_items(
    path: &Path,
    format: CorpusFormat,
    filter: &CorpusFilter,
    limit: Option<usize>,
) -> Result<(Vec<PromptItem>, ReadSummary), IoError> {
    let file = File::open(path).map_err(|source| IoError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let mut items = Vec::new();
    let mut summary = ReadSummary::default();
    for line in BufReader::new(file).lines() {
        if limit.is_some_and(|l| items.len() >= l) {
            break;
        }
        let line = line.map_err(|source| IoError::Read {
            path: path.display().to_string(),
            source,
        })?;
        summary.lines += 1;
        let item = match format {
            CorpusFormat::Text => PromptItem {
                id: None,
                text: line,
            },
            CorpusFormat::Jsonl => {
                if line.trim().is_empty() {
                    summary.filtered += 1;
                    continue;
                }
                match serde_json::from_str::<JsonlPrompt>(&line) {
                    Ok(record) => PromptItem {
                        id: record.id,
                        text: record.text,
                    },
                    Err(e) => {
                        log::warn!("skipping corrupt corpus line {}: {e}", summary.lines);
                        summary.corrupt += 1;
                        continue;
                    }
                }
            }
        };
        if filter.keeps(&item.text) {
            summary.kept += 1;
            items.push(item);
        } else {
            summary.filtered += 1;
        }
    }
    Ok((items, summary))
}

/// Convenience wrapper returning only the prompt texts.
pub fn read_prompts(
    path: &Path,
    format: CorpusFormat,
    filter: &CorpusFilter,
    limit: Option<usize>,
) -> Result<(Vec<String>, ReadSummary), IoError> {
    let (items, summary) = read_prompt_items(path, format, filter, limit)?;
    Ok((items.into_iter().map(|i| i.text).collect(), summary))
}

/// Writes lines terminated by `\n` to a freshly created file.
pub fn write_lines<I, S>(path: &Path, lines: I) -> Result<(), IoError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let wrap = |source| IoError::Write {
        path: path.display().to_string(),
        source,
    };
    let mut file = std::io::BufWriter::new(File::create(path).map_err(wrap)?);
    for line in lines {
        file.write_all(line.as_ref().as_bytes()).map_err(wrap)?;
        file.write_all(b"\n").map_err(wrap)?;
    }
    file.flush().map_err(wrap)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(content: &str, ext: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(format!("corpus.{ext}"));
        std::fs::write(&path, content).unwrap();
        (dir, path)
    }

    #[test]
    fn plain_text_read_filters_blanks() {
        let (_dir, path) = write_temp("a dog\n\n   \na cat runs\n", "txt");
        let (items, summary) =
            read_prompt_items(&path, CorpusFormat::Text, &CorpusFilter::default(), None).unwrap();
        assert_eq!(
            items.iter().map(|i| i.text.as_str()).collect::<Vec<_>>(),
            vec!["a dog", "a cat runs"]
        );
        assert_eq!(summary.lines, 4);
        assert_eq!(summary.kept, 2);
        assert_eq!(summary.filtered, 2);
        assert_eq!(summary.corrupt, 0);
    }

    #[test]
    fn jsonl_read_keeps_ids_and_counts_corrupt_lines() {
        let content = concat!(
            "{\"id\":\"p1\",\"text\":\"a dog\"}\n",
            "not json at all\n",
            "{\"text\":\"a cat\"}\n",
            "{\"id\":\"p4\"}\n",
        );
        let (_dir, path) = write_temp(content, "jsonl");
        let (items, summary) =
            read_prompt_items(&path, CorpusFormat::Jsonl, &CorpusFilter::default(), None).unwrap();
        assert_eq!(items.len(), 2);
        assert_eq!(items[0].id.as_deref(), Some("p1"));
        assert_eq!(items[1].id, None);
        assert_eq!(summary.corrupt, 2);
        assert_eq!(summary.kept, 2);
    }

    #[test]
    fn limit_caps_kept_prompts() {
        let (_dir, path) = write_temp("a\nb\nc\nd\n", "txt");
        let (items, _) =
            read_prompt_items(&path, CorpusFormat::Text, &CorpusFilter::default(), Some(2))
                .unwrap();
        assert_eq!(items.len(), 2);
        let (items, summary) =
            read_prompt_items(&path, CorpusFormat::Text, &CorpusFilter::default(), Some(0))
                .unwrap();
        assert!(items.is_empty());
        assert_eq!(summary.kept, 0);
    }

    #[test]
    fn filter_specs_parse() {
        assert_eq!(
            CorpusFilter::from_str("nonempty").unwrap(),
            CorpusFilter::default()
        );
        assert_eq!(
            CorpusFilter::from_str("all").unwrap(),
            CorpusFilter {
                min_words: 0,
                max_words: None
            }
        );
        assert_eq!(
            CorpusFilter::from_str("words:3..40").unwrap(),
            CorpusFilter {
                min_words: 3,
                max_words: Some(40)
            }
        );
        assert_eq!(
            CorpusFilter::from_str("words:3..").unwrap(),
            CorpusFilter {
                min_words: 3,
                max_words: None
            }
        );
        assert!(CorpusFilter::from_str("bogus").is_err());
        assert!(CorpusFilter::from_str("words:x..y").is_err());
    }

    #[test]
    fn word_range_filter_applies() {
        let filter = CorpusFilter::from_str("words:2..3").unwrap();
        assert!(!filter.keeps("one"));
        assert!(filter.keeps("one two"));
        assert!(filter.keeps("one two three"));
        assert!(!filter.keeps("one two three four"));
    }

    #[test]
    fn format_resolution_prefers_explicit_flag() {
        let jsonl = Path::new("c.jsonl");
        let txt = Path::new("c.txt");
        assert_eq!(resolve_format(None, jsonl), CorpusFormat::Jsonl);
        assert_eq!(resolve_format(None, txt), CorpusFormat::Text);
        assert_eq!(
            resolve_format(Some(CorpusFormat::Text), jsonl),
            CorpusFormat::Text
        );
        assert_eq!("jsonl".parse::<CorpusFormat>().unwrap(), CorpusFormat::Jsonl);
        assert!("csv".parse::<CorpusFormat>().is_err());
    }

    #[test]
    fn write_lines_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        write_lines(&path, ["alpha", "beta"]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "alpha\nbeta\n");
    }
}
