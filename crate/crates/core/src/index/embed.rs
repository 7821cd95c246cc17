//! Text embedders. Every vector handed out is L2-normalized.

use std::time::Duration;

use once_cell::sync::Lazy;
use regex::Regex;
use serde::Deserialize;

use super::IndexError;

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    /// Stable identifier recorded in persisted indexes.
    fn id(&self) -> String;

    fn embed(&self, text: &str) -> Result<Vec<f32>, IndexError>;
}

static WORD: Lazy<Regex> = Lazy::new(|| Regex::new(r"[A-Za-z0-9]+").unwrap());

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Deterministic signed bag-of-words embedder over hashed lowercase words.
///
/// Texts sharing no words are nearly orthogonal; the cosine similarity of two
/// texts is roughly their word overlap over the geometric mean of lengths.
#[derive(Debug, Clone, Copy)]
pub struct HashedEmbedder {
    dim: usize,
}

impl HashedEmbedder {
    pub const DEFAULT_DIM: usize = 256;

    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }
}

impl Default for HashedEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIM)
    }
}

impl Embedder for HashedEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn id(&self) -> String {
        format!("hashed-bow-fnv1a-{}", self.dim)
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, IndexError> {
        let mut v = vec![0f32; self.dim];
        for w in WORD.find_iter(text) {
            let h = fnv1a(w.as_str().to_ascii_lowercase().as_bytes());
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % self.dim as u64) as usize] += sign;
        }
        if v.iter().all(|&x| x == 0.0) {
            // No words: a fixed direction keeps the contract of unit vectors.
            v[0] = 1.0;
        }
        Ok(normalize(v))
    }
}

/// Embedding service speaking the common `{"input", "model"}` →
/// `{"data": [{"embedding": [...]}]}` shape.
pub struct HttpEmbedder {
    url: String,
    model: String,
    api_key: Option<String>,
    dim: usize,
    agent: ureq::Agent,
}

impl HttpEmbedder {
    pub fn new(url: &str, model: &str, api_key: Option<String>, dim: usize) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        Self {
            url: url.to_string(),
            model: model.to_string(),
            api_key,
            dim,
            agent,
        }
    }
}

#[derive(Deserialize)]
struct EmbeddingItem {
    embedding: Vec<f32>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum EmbeddingResponse {
    Data { data: Vec<EmbeddingItem> },
    Single { embedding: Vec<f32> },
}

impl Embedder for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn id(&self) -> String {
        format!("http:{}:{}", self.model, self.dim)
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, IndexError> {
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let body = serde_json::json!({ "input": text, "model": self.model });
        let resp: EmbeddingResponse = req
            .send_json(&body)
            .and_then(|mut r| r.body_mut().read_json())
            .map_err(|e| IndexError::Embedding(e.to_string()))?;
        let v = match resp {
            EmbeddingResponse::Data { mut data } if !data.is_empty() => data.swap_remove(0).embedding,
            EmbeddingResponse::Single { embedding } => embedding,
            _ => return Err(IndexError::Embedding("response carried no embedding".into())),
        };
        if v.len() != self.dim {
            return Err(IndexError::DimMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        Ok(normalize(v))
    }
}

pub fn normalize(mut v: Vec<f32>) -> Vec<f32> {
    let n = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x = (*x as f64 / n) as f32);
    }
    v
}

/// Euclidean distance, accumulated in f64.
pub fn distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_norm_and_deterministic() {
        let e = HashedEmbedder::default();
        let a = e.embed("The quick brown fox").unwrap();
        let n: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
        assert_eq!(a, e.embed("the QUICK brown fox!").unwrap());
        assert_eq!(e.embed("").unwrap().len(), 256);
    }

    #[test]
    fn overlap_drives_similarity() {
        let e = HashedEmbedder::default();
        let a = e.embed("alpha beta gamma delta epsilon zeta").unwrap();
        let b = e.embed("alpha beta gamma delta epsilon omega").unwrap();
        let c = e.embed("red green blue cyan magenta yellow").unwrap();
        assert!(cosine(&a, &b) > 0.75);
        assert!(cosine(&a, &c) < 0.5);
        assert!(distance(&a, &b) < distance(&a, &c));
    }
}
