//! Sentence similarity providers used to retrieve relevant facts.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Error)]
#[error("similarity provider failed: {message}")]
pub struct ProviderError {
    pub message: String,
    pub retryable: bool,
}

/// Scores one query sentence against a corpus; scores are cosines in `[0, 1]`.
pub trait SimilarityProvider: Send + Sync {
    fn similarities(&self, query: &str, corpus: &[String]) -> Result<Vec<f64>, ProviderError>;

    fn name(&self) -> &str;
}

fn corpus_fingerprint(corpus: &[String]) -> u64 {
    let mut h = DefaultHasher::new();
    corpus.hash(&mut h);
    h.finish()
}

type SparseVec = HashMap<String, f64>;

/// Lower-cased character trigrams of `" text "`, with counts.
pub fn char_trigrams(text: &str) -> HashMap<String, usize> {
    let mut out = HashMap::new();
    let text = text.trim();
    if text.is_empty() {
        return out;
    }
    let padded: Vec<char> = format!(" {} ", text.to_lowercase()).chars().collect();
    for w in padded.windows(3) {
        *out.entry(w.iter().collect()).or_insert(0) += 1;
    }
    out
}

fn norm(v: &SparseVec) -> f64 {
    v.values().map(|x| x * x).sum::<f64>().sqrt()
}

fn cosine(a: &SparseVec, na: f64, b: &SparseVec, nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let dot: f64 = small.iter().filter_map(|(k, x)| large.get(k).map(|y| x * y)).sum();
    (dot / (na * nb)).clamp(0.0, 1.0)
}

#[derive(Debug)]
struct FittedCorpus {
    idf: HashMap<String, f64>,
    default_idf: f64,
    vectors: Vec<(SparseVec, f64)>,
}

impl FittedCorpus {
    fn fit(corpus: &[String]) -> Self {
        let counts: Vec<HashMap<String, usize>> = corpus.iter().map(|s| char_trigrams(s)).collect();
        let mut df: HashMap<String, usize> = HashMap::new();
        for c in &counts {
            for k in c.keys() {
                *df.entry(k.clone()).or_insert(0) += 1;
            }
        }
        let n = corpus.len() as f64;
        let idf: HashMap<String, f64> =
            df.into_iter().map(|(k, d)| (k, ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0)).collect();
        let default_idf = (1.0 + n).ln() + 1.0;
        let mut fitted = Self { idf, default_idf, vectors: Vec::new() };
        fitted.vectors = counts.iter().map(|c| fitted.weigh(c)).collect();
        fitted
    }

    fn weigh(&self, counts: &HashMap<String, usize>) -> (SparseVec, f64) {
        let v: SparseVec = counts
            .iter()
            .map(|(k, &tf)| (k.clone(), tf as f64 * self.idf.get(k).copied().unwrap_or(self.default_idf)))
            .collect();
        let n = norm(&v);
        (v, n)
    }
}

/// Character-trigram TF-IDF cosine. IDF is fitted on the corpus and cached
/// for as long as the same corpus keeps being passed in.
#[derive(Debug, Default)]
pub struct TrigramTfIdf {
    cache: Mutex<Option<(u64, Arc<FittedCorpus>)>>,
}

impl TrigramTfIdf {
    pub fn new() -> Self {
        Self::default()
    }

    fn fitted(&self, corpus: &[String]) -> Arc<FittedCorpus> {
        let key = corpus_fingerprint(corpus);
        let mut guard = self.cache.lock().expect("cache lock poisoned");
        if let Some((k, fitted)) = guard.as_ref() {
            if *k == key {
                return Arc::clone(fitted);
            }
        }
        let fitted = Arc::new(FittedCorpus::fit(corpus));
        *guard = Some((key, Arc::clone(&fitted)));
        fitted
    }
}

impl SimilarityProvider for TrigramTfIdf {
    fn similarities(&self, query: &str, corpus: &[String]) -> Result<Vec<f64>, ProviderError> {
        let fitted = self.fitted(corpus);
        let (q, qn) = fitted.weigh(&char_trigrams(query));
        Ok(fitted.vectors.iter().map(|(v, vn)| cosine(&q, qn, v, *vn)).collect())
    }

    fn name(&self) -> &str {
        "trigram-tfidf"
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Client for an embedding service speaking
/// `{"texts": [...]}` → `{"vectors": [[...], ...]}`.
/// Corpus fingerprint and its embeddings.
type CachedCorpus = (u64, Arc<Vec<Vec<f64>>>);

pub struct RemoteEmbedding {
    endpoint: String,
    agent: ureq::Agent,
    corpus_cache: Mutex<Option<CachedCorpus>>,
}

impl RemoteEmbedding {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent =
            ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into();
        Self { endpoint: endpoint.into(), agent, corpus_cache: Mutex::new(None) }
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(EmbedRequest { texts })
            .map_err(|e| ProviderError { message: format!("{}: {e}", self.endpoint), retryable: true })?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(ProviderError {
                message: format!("{} returned HTTP {status}", self.endpoint),
                retryable: status >= 500 || status == 429,
            });
        }
        let body: EmbedResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| ProviderError { message: format!("bad embedding response: {e}"), retryable: false })?;
        if body.vectors.len() != texts.len() {
            return Err(ProviderError {
                message: format!("expected {} vectors, got {}", texts.len(), body.vectors.len()),
                retryable: false,
            });
        }
        Ok(body.vectors)
    }

    fn corpus_vectors(&self, corpus: &[String]) -> Result<Arc<Vec<Vec<f64>>>, ProviderError> {
        let key = corpus_fingerprint(corpus);
        if let Some((k, v)) = self.corpus_cache.lock().expect("cache lock poisoned").as_ref() {
            if *k == key {
                return Ok(Arc::clone(v));
            }
        }
        let vectors = Arc::new(self.embed(corpus)?);
        *self.corpus_cache.lock().expect("cache lock poisoned") = Some((key, Arc::clone(&vectors)));
        Ok(vectors)
    }
}

fn dense_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(0.0, 1.0)
    }
}

impl SimilarityProvider for RemoteEmbedding {
    fn similarities(&self, query: &str, corpus: &[String]) -> Result<Vec<f64>, ProviderError> {
        if corpus.is_empty() {
            return Ok(Vec::new());
        }
        let corpus_vecs = self.corpus_vectors(corpus)?;
        let q = self.embed(&[query.to_string()])?.pop().unwrap_or_default();
        Ok(corpus_vecs.iter().map(|v| dense_cosine(&q, v)).collect())
    }

    fn name(&self) -> &str {
        "remote-embedding"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trigrams_are_padded_and_lowercased() {
        let t = char_trigrams("Ab");
        assert_eq!(t.len(), 2);
        assert!(t.contains_key(" ab") && t.contains_key("ab "));
        assert!(char_trigrams("   ").is_empty());
    }

    #[test]
    fn identical_sentence_scores_one() {
        let corpus = vec!["Sudan Make a visit".to_string(), "Make a visit China".to_string()];
        let p = TrigramTfIdf::new();
        let s = p.similarities("Sudan Make a visit", &corpus).unwrap();
        assert!((s[0] - 1.0).abs() < 1e-12);
        assert!(s[1] < s[0]);
        assert_eq!(p.similarities("", &corpus).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn remote_unreachable_is_retryable() {
        let p = RemoteEmbedding::new("http://127.0.0.1:9/embed", Duration::from_millis(200));
        let err = p.similarities("q", &["a".to_string()]).unwrap_err();
        assert!(err.retryable);
    }
}
