//! Embedding backends.
//!
//! Three implementations share one trait: a deterministic local hash
//! embedder (the offline default), an OpenAI-compatible remote backend,
//! and a persistent text-to-vector cache that wraps either.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier written into graph headers built with [`LocalHashEmbedder`].
pub const LOCAL_BACKEND_ID: &str = "local-hash-v1";
/// Output dimension of the local hash embedder.
pub const LOCAL_DIM: usize = 384;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
/// Fixed seed folded into the FNV offset basis; changing it changes every
/// embedding, so it is part of the `local-hash-v1` format.
const HASH_SEED: u64 = 0x7261_706f;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding backend unavailable: {0}")]
    Unavailable(String),
    #[error("embedding backend returned malformed data: {0}")]
    Malformed(String),
    #[error("embedding cache mismatch: {0}")]
    CacheMismatch(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// A deterministic text-to-unit-vector function.
///
/// `embed` must be deterministic for a fixed backend id and return vectors
/// of length `dim` with L2 norm 1 (within 1e-6).
#[async_trait]
pub trait Embedder: Send + Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    async fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError>;
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ HASH_SEED;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Deterministic feature-hashing embedding.
///
/// The exact recipe, which the `local-hash-v1` id pins:
/// 1. lowercase the input and split it into tokens on any non-alphanumeric
///    character, dropping empty tokens;
/// 2. hash each token with 64-bit FNV-1a whose offset basis is the standard
///    basis XORed with the fixed seed `0x7261706f`;
/// 3. bucket = hash mod 384, sign = -1 if bit 63 of the hash is set else +1;
/// 4. accumulate the sign into an f32 vector of length 384;
/// 5. L2-normalize; an all-zero accumulation maps to the basis vector e_0.
pub fn local_embed(text: &str) -> Vec<f32> {
    let mut v = vec![0.0f32; LOCAL_DIM];
    let lowered = text.to_lowercase();
    for token in lowered
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
    {
        let h = fnv1a64(token.as_bytes());
        let bucket = (h % LOCAL_DIM as u64) as usize;
        let sign = if (h >> 63) & 1 == 1 { -1.0f32 } else { 1.0f32 };
        v[bucket] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if norm == 0.0 {
        v[0] = 1.0;
        return v;
    }
    for x in v.iter_mut() {
        *x /= norm;
    }
    v
}

/// The offline deterministic backend; see [`local_embed`].
#[derive(Debug, Default, Clone, Copy)]
pub struct LocalHashEmbedder;

#[async_trait]
impl Embedder for LocalHashEmbedder {
    fn id(&self) -> &str {
        LOCAL_BACKEND_ID
    }

    fn dim(&self) -> usize {
        LOCAL_DIM
    }

    async fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        Ok(local_embed(text))
    }
}

/// L2-normalizes in place; leaves all-zero vectors untouched.
pub(crate) fn l2_normalize(v: &mut [f32]) {
    let norm = v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
    if norm == 0.0 {
        return;
    }
    for x in v.iter_mut() {
        *x = (*x as f64 / norm) as f32;
    }
}

/// Remote embedding backend speaking the OpenAI-compatible `/v1/embeddings`
/// endpoint. Configured from `RAPO_EMBED_BASE_URL`, `RAPO_EMBED_API_KEY` and
/// `RAPO_EMBED_MODEL` (default model `all-MiniLM-L6-v2`).
pub struct RemoteEmbedder {
    client: reqwest::Client,
    base_url: String,
    api_key: Option<String>,
    model: String,
    dim: usize,
}

#[derive(Serialize)]
struct EmbeddingsRequest<'a> {
    model: &'a str,
    input: [&'a str; 1],
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    data: Vec<EmbeddingEntry>,
}

#[derive(Deserialize)]
struct EmbeddingEntry {
    embedding: Vec<f32>,
}

pub const DEFAULT_EMBED_MODEL: &str = "all-MiniLM-L6-v2";

impl RemoteEmbedder {
    /// Connects and probes the endpoint once to discover the vector dimension.
    pub async fn connect(
        base_url: &str,
        api_key: Option<String>,
        model: &str,
    ) -> Result<Self, EmbedError> {
        let mut backend = Self {
            client: reqwest::Client::new(),
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            model: model.to_string(),
            dim: 0,
        };
        let probe = backend.embed_once("dimension probe").await?;
        backend.dim = probe.len();
        Ok(backend)
    }

    /// Reads the `RAPO_EMBED_*` environment variables.
    pub async fn from_env() -> Result<Self, EmbedError> {
        let base_url = std::env::var("RAPO_EMBED_BASE_URL").map_err(|_| {
            EmbedError::Unavailable("RAPO_EMBED_BASE_URL is not set".to_string())
        })?;
        let api_key = std::env::var("RAPO_EMBED_API_KEY").ok();
        let model = std::env::var("RAPO_EMBED_MODEL")
            .unwrap_or_else(|_| DEFAULT_EMBED_MODEL.to_string());
        Self::connect(&base_url, api_key, &model).await
    }

    async fn embed_once(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        let url = format!("{}/v1/embeddings", self.base_url);
        let body = EmbeddingsRequest {
            model: &self.model,
            input: [text],
        };
        let mut req = self.client.post(&url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .await
            .map_err(|e| EmbedError::Unavailable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(EmbedError::Unavailable(format!(
                "{} returned status {}",
                url,
                resp.status()
            )));
        }
        let parsed: EmbeddingsResponse = resp
            .json()
            .await
            .map_err(|e| EmbedError::Malformed(e.to_string()))?;
        let mut vector = parsed
            .data
            .into_iter()
            .next()
            .ok_or_else(|| EmbedError::Malformed("empty data array".to_string()))?
            .embedding;
        if vector.is_empty() {
            return Err(EmbedError::Malformed("empty embedding vector".to_string()));
        }
        l2_normalize(&mut vector);
        Ok(vector)
    }
}

#[async_trait]
impl Embedder for RemoteEmbedder {
    fn id(&self) -> &str {
        &self.model
    }

    fn dim(&self) -> usize {
        self.dim
    }

    async fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        // Simple retry: up to 3 attempts, 200ms doubling.
        let mut delay = std::time::Duration::from_millis(200);
        let mut last = None;
        for attempt in 0..3 {
            if attempt > 0 {
                tokio::time::sleep(delay).await;
                delay *= 2;
            }
            match self.embed_once(text).await {
                Ok(v) => {
                    if v.len() != self.dim {
                        return Err(EmbedError::Malformed(format!(
                            "dimension changed from {} to {}",
                            self.dim,
                            v.len()
                        )));
                    }
                    return Ok(v);
                }
                Err(e @ EmbedError::Malformed(_)) => return Err(e),
                Err(e) => last = Some(e),
            }
        }
        Err(last.unwrap_or_else(|| EmbedError::Unavailable("no attempt made".to_string())))
    }
}

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    backend: String,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    text: String,
    vector: Vec<f32>,
}

/// Persistent text-to-vector cache wrapping another backend.
///
/// JSONL file: a header line `{"backend":…,"dim":…}` followed by
/// `{"text":…,"vector":[…]}` entries. Entries append as new texts are
/// embedded; there is no eviction.
pub struct CachedEmbedder {
    inner: Box<dyn Embedder>,
    map: Mutex<HashMap<String, Vec<f32>>>,
    file: Mutex<File>,
    path: PathBuf,
}

impl std::fmt::Debug for CachedEmbedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CachedEmbedder")
            .field("backend", &self.inner.id())
            .field("path", &self.path)
            .field("entries", &self.len())
            .finish()
    }
}

impl CachedEmbedder {
    pub fn open(path: &Path, inner: Box<dyn Embedder>) -> Result<Self, EmbedError> {
        let mut map = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            let mut lines = reader.lines();
            if let Some(first) = lines.next() {
                let header: CacheHeader = serde_json::from_str(&first?)
                    .map_err(|e| EmbedError::CacheMismatch(format!("bad header: {e}")))?;
                if header.backend != inner.id() || header.dim != inner.dim() {
                    return Err(EmbedError::CacheMismatch(format!(
                        "cache at {} was built with backend {} (dim {}), active backend is {} (dim {})",
                        path.display(),
                        header.backend,
                        header.dim,
                        inner.id(),
                        inner.dim()
                    )));
                }
            }
            for (idx, line) in lines.enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheEntry = serde_json::from_str(&line).map_err(|e| {
                    EmbedError::CacheMismatch(format!("bad entry at line {}: {e}", idx + 2))
                })?;
                map.insert(entry.text, entry.vector);
            }
        } else {
            let mut file = File::create(path)?;
            let header = CacheHeader {
                backend: inner.id().to_string(),
                dim: inner.dim(),
            };
            writeln!(file, "{}", serde_json::to_string(&header).expect("header json"))?;
        }
        let file = OpenOptions::new().append(true).create(true).open(path)?;
        Ok(Self {
            inner,
            map: Mutex::new(map),
            file: Mutex::new(file),
            path: path.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.map.lock().expect("cache map lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[async_trait]
impl Embedder for CachedEmbedder {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    async fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        if let Some(hit) = self.map.lock().expect("cache map lock").get(text) {
            return Ok(hit.clone());
        }
        let vector = self.inner.embed(text).await?;
        let mut map = self.map.lock().expect("cache map lock");
        if !map.contains_key(text) {
            map.insert(text.to_string(), vector.clone());
            let entry = CacheEntry {
                text: text.to_string(),
                vector: vector.clone(),
            };
            let mut file = self.file.lock().expect("cache file lock");
            writeln!(file, "{}", serde_json::to_string(&entry).expect("entry json"))?;
        }
        Ok(vector)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm(v: &[f32]) -> f64 {
        v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn local_embed_is_deterministic_and_unit() {
        let a = local_embed("a red cat");
        let b = local_embed("a red cat");
        assert_eq!(a, b);
        assert!((norm(&a) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn local_embed_ignores_case_and_outer_whitespace() {
        assert_eq!(local_embed("cat"), local_embed("CAT  "));
    }

    #[test]
    fn empty_input_maps_to_basis_vector() {
        let v = local_embed("");
        assert_eq!(v[0], 1.0);
        assert!(v[1..].iter().all(|x| *x == 0.0));
        // Punctuation-only input has no tokens either.
        assert_eq!(local_embed("?!,"), v);
    }

    // Values frozen from an independent implementation of the documented
    // hashing recipe (seeded FNV-1a, mod-384 bucket, top-bit sign).
    #[test]
    fn frozen_component_values() {
        let v = local_embed("red cat");
        let nonzero: Vec<(usize, f32)> = v
            .iter()
            .enumerate()
            .filter(|(_, x)| **x != 0.0)
            .map(|(i, x)| (i, *x))
            .collect();
        assert_eq!(nonzero.len(), 2);
        assert_eq!(nonzero[0].0, 62); // "cat", negative sign
        assert_eq!(nonzero[1].0, 169); // "red", positive sign
        assert!((nonzero[0].1 as f64 + 0.7071067690849304).abs() < 1e-9);
        assert!((nonzero[1].1 as f64 - 0.7071067690849304).abs() < 1e-9);

        let w = local_embed("red red cat");
        let nz: Vec<(usize, f32)> = w
            .iter()
            .enumerate()
            .filter(|(_, x)| **x != 0.0)
            .map(|(i, x)| (i, *x))
            .collect();
        assert_eq!(nz, vec![(62, -0.447_213_6), (169, 0.894_427_2)]);
    }

    // Second, independently written walk of the same recipe, kept free of
    // the production helpers on purpose.
    #[test]
    fn matches_independent_reimplementation() {
        fn alt_embed(text: &str) -> Vec<f32> {
            let mut acc = vec![0.0f32; 384];
            let mut token = String::new();
            let mut tokens: Vec<String> = Vec::new();
            for c in text.to_lowercase().chars() {
                if c.is_alphanumeric() {
                    token.push(c);
                } else if !token.is_empty() {
                    tokens.push(std::mem::take(&mut token));
                }
            }
            if !token.is_empty() {
                tokens.push(token);
            }
            for t in tokens {
                let mut h: u64 = 0xcbf29ce484222325 ^ 0x7261706f;
                for b in t.bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x100000001b3);
                }
                let slot = (h % 384) as usize;
                if h >> 63 == 1 {
                    acc[slot] -= 1.0;
                } else {
                    acc[slot] += 1.0;
                }
            }
            let n = acc.iter().map(|x| x * x).sum::<f32>().sqrt();
            if n == 0.0 {
                acc[0] = 1.0;
                return acc;
            }
            acc.iter().map(|x| x / n).collect()
        }

        for text in [
            "red cat",
            "blue dog",
            "a red cat",
            "A city street at night, neon lights",
            "",
            "one two three four five six seven",
        ] {
            assert_eq!(local_embed(text), alt_embed(text), "input {text:?}");
        }
    }

    #[tokio::test]
    async fn cache_round_trips_and_rejects_backend_change() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let cache = CachedEmbedder::open(&path, Box::new(LocalHashEmbedder)).unwrap();
            let v = cache.embed("a red cat").await.unwrap();
            assert_eq!(v, local_embed("a red cat"));
            assert_eq!(cache.len(), 1);
        }
        // Re-open: entry served from disk.
        let cache = CachedEmbedder::open(&path, Box::new(LocalHashEmbedder)).unwrap();
        assert_eq!(cache.len(), 1);
        assert_eq!(cache.embed("a red cat").await.unwrap(), local_embed("a red cat"));

        struct OtherBackend;
        #[async_trait]
        impl Embedder for OtherBackend {
            fn id(&self) -> &str {
                "other"
            }
            fn dim(&self) -> usize {
                LOCAL_DIM
            }
            async fn embed(&self, _text: &str) -> Result<Vec<f32>, EmbedError> {
                unreachable!("open must fail first")
            }
        }
        let err = CachedEmbedder::open(&path, Box::new(OtherBackend)).unwrap_err();
        assert!(matches!(err, EmbedError::CacheMismatch(_)));
    }
}
