//! Corpus length statistics and a distance between length distributions.
//!
//! The optimizer aims rewritten prompts at the length profile of the
//! training captions, so the toolkit ships a small analyzer: per-corpus
//! word-length histograms with summary statistics, and a first Wasserstein
//! (earth mover's) distance between histograms to compare corpora.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::normalize_text;

/// Default file name for the exported summary; the selection fallback reads
/// its `median` as the reference length.
pub const CORPUS_STATS_FILE: &str = "corpus_stats.json";

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("bad stats file: {0}")]
    BadStats(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Number of whitespace-separated words after normalization.
pub fn word_count(prompt: &str) -> usize {
    normalize_text(prompt).split_whitespace().count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthDistribution {
    pub label: String,
    pub n: u64,
    pub mean: f64,
    pub median: f64,
    pub p10: f64,
    pub p90: f64,
    /// Word length → number of prompts with that length.
    pub counts: BTreeMap<usize, u64>,
}

/// Summarizes a corpus's word lengths. Errors on an empty corpus.
pub fn length_distribution<I, S>(
    prompts: I,
    label: &str,
) -> Result<LengthDistribution, AnalyticsError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut lengths: Vec<usize> = prompts
        .into_iter()
        .map(|p| word_count(p.as_ref()))
        .collect();
    if lengths.is_empty() {
        return Err(AnalyticsError::EmptyCorpus);
    }
    lengths.sort_unstable();
    let n = lengths.len();
    let mean = lengths.iter().map(|&l| l as f64).sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        lengths[n / 2] as f64
    } else {
        (lengths[n / 2 - 1] + lengths[n / 2]) as f64 / 2.0
    };
    let p10 = nearest_rank(&lengths, 0.10);
    let p90 = nearest_rank(&lengths, 0.90);
    let mut counts = BTreeMap::new();
    for l in lengths {
        *counts.entry(l).or_insert(0u64) += 1;
    }
    Ok(LengthDistribution {
        label: label.to_string(),
        n: n as u64,
        mean,
        median,
        p10,
        p90,
        counts,
    })
}

fn nearest_rank(sorted: &[usize], q: f64) -> f64 {
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1] as f64
}

/// First Wasserstein distance between two count histograms after
/// normalizing each to unit mass: the area between their cumulative
/// distributions. Degenerate empty histograms are treated as distance 0.
pub fn histogram_distance(a: &BTreeMap<usize, u64>, b: &BTreeMap<usize, u64>) -> f64 {
    let total_a: f64 = a.values().map(|&c| c as f64).sum();
    let total_b: f64 = b.values().map(|&c| c as f64).sum();
    if total_a == 0.0 || total_b == 0.0 {
        return 0.0;
    }
    let min = *a.keys().chain(b.keys()).min().expect("nonempty");
    let max = *a.keys().chain(b.keys()).max().expect("nonempty");
    let mut cdf_a = 0.0;
    let mut cdf_b = 0.0;
    let mut distance = 0.0;
    // Each unit interval [l, l+1) contributes |CDF_a(l) − CDF_b(l)|.
    for l in min..max {
        cdf_a += *a.get(&l).unwrap_or(&0) as f64 / total_a;
        cdf_b += *b.get(&l).unwrap_or(&0) as f64 / total_b;
        distance += (cdf_a - cdf_b).abs();
    }
    distance
}

pub fn distribution_distance(a: &LengthDistribution, b: &LengthDistribution) -> f64 {
    histogram_distance(&a.counts, &b.counts)
}

/// `length,count` rows for spreadsheet import, in ascending length order.
pub fn histogram_csv(dist: &LengthDistribution) -> String {
    let mut out = String::from("length,count\n");
    for (length, count) in &dist.counts {
        out.push_str(&format!("{length},{count}\n"));
    }
    out
}

/// The slim summary exported to `corpus_stats.json`; the pipeline reads
/// `median` from here so the fallback threshold has one source of truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub label: String,
    pub n: u64,
    pub mean: f64,
    pub median: f64,
    pub p10: f64,
    pub p90: f64,
}

impl From<&LengthDistribution> for CorpusStats {
    fn from(d: &LengthDistribution) -> Self {
        Self {
            label: d.label.clone(),
            n: d.n,
            mean: d.mean,
            median: d.median,
            p10: d.p10,
            p90: d.p90,
        }
    }
}

pub fn write_corpus_stats(path: &Path, stats: &CorpusStats) -> Result<(), AnalyticsError> {
    let mut body = serde_json::to_string_pretty(stats).expect("stats serialize");
    body.push('\n');
    fs::write(path, body)?;
    Ok(())
}

pub fn read_corpus_stats(path: &Path) -> Result<CorpusStats, AnalyticsError> {
    let body = fs::read_to_string(path)?;
    serde_json::from_str(&body)
        .map_err(|e| AnalyticsError::BadStats(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_count_normalizes_first() {
        assert_eq!(word_count(""), 0);
        assert_eq!(word_count("   "), 0);
        assert_eq!(word_count("  a  b "), 2);
        assert_eq!(word_count("A b\tc"), 3);
        assert_eq!(word_count("a, b"), 2);
    }

    #[test]
    fn mean_and_median_hand_cases() {
        // Two prompts of 2 and 4 words: mean 3.0, median 3.0.
        let d = length_distribution(["a b", "a b c d"], "t").unwrap();
        assert_eq!(d.mean, 3.0);
        assert_eq!(d.median, 3.0);
        assert_eq!(d.n, 2);

        // Odd count: median is the middle value.
        let d = length_distribution(["a", "a b", "a b c"], "t").unwrap();
        assert_eq!(d.median, 2.0);
        assert_eq!(d.mean, 2.0);

        // Single prompt: p10 = p90 = its length.
        let d = length_distribution(["one two three"], "t").unwrap();
        assert_eq!(d.p10, 3.0);
        assert_eq!(d.p90, 3.0);
        assert_eq!(d.median, 3.0);
    }

    #[test]
    fn percentiles_use_nearest_rank() {
        let prompts: Vec<String> = (1..=10)
            .map(|l| vec!["w"; l].join(" "))
            .collect();
        let d = length_distribution(&prompts, "t").unwrap();
        assert_eq!(d.p10, 1.0);
        assert_eq!(d.p90, 9.0);
    }

    #[test]
    fn empty_corpus_errors() {
        let empty: [&str; 0] = [];
        assert!(matches!(
            length_distribution(empty, "t"),
            Err(AnalyticsError::EmptyCorpus)
        ));
    }

    #[test]
    fn distance_between_point_masses_is_the_gap() {
        // All prompts length 3 vs all length 5 → distance 2.0.
        let a = length_distribution(["x y z"; 4], "a").unwrap();
        let b = length_distribution(["v w x y z"; 7], "b").unwrap();
        assert_eq!(distribution_distance(&a, &b), 2.0);
        assert_eq!(distribution_distance(&b, &a), 2.0);
        assert_eq!(distribution_distance(&a, &a), 0.0);
    }

    #[test]
    fn distance_is_scale_invariant_in_counts() {
        let mut a = BTreeMap::new();
        a.insert(2usize, 1u64);
        a.insert(6, 3);
        let mut a2 = BTreeMap::new();
        a2.insert(2usize, 10u64);
        a2.insert(6, 30);
        let mut b = BTreeMap::new();
        b.insert(4usize, 5u64);
        let d1 = histogram_distance(&a, &b);
        let d2 = histogram_distance(&a2, &b);
        assert!((d1 - d2).abs() < 1e-12);
        assert!(d1 > 0.0);
    }

    #[test]
    fn stats_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(CORPUS_STATS_FILE);
        let d = length_distribution(["a b c", "a b c d e"], "train").unwrap();
        let stats = CorpusStats::from(&d);
        write_corpus_stats(&path, &stats).unwrap();
        assert_eq!(read_corpus_stats(&path).unwrap(), stats);
    }

    #[test]
    fn csv_lists_lengths_ascending() {
        let d = length_distribution(["a", "a b", "a b", "a b c d"], "t").unwrap();
        assert_eq!(histogram_csv(&d), "length,count\n1,1\n2,2\n4,1\n");
    }
}
