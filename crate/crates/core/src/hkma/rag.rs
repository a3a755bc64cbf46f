//! Lexical tf-idf retrieval over a per-dataset documentation folder.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HkmaError;

pub const WINDOW_WORDS: usize = 512;
pub const OVERLAP_WORDS: usize = 128;
const STRIDE: usize = WINDOW_WORDS - OVERLAP_WORDS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc: String,
    /// Word offset of the first word in the source document.
    pub offset: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChunk {
    pub doc: String,
    pub offset: usize,
    pub text: String,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DocIndex {
    pub chunks: Vec<Chunk>,
    pub idf: BTreeMap<String, f64>,
    /// Unit-length tf-idf vector per chunk.
    vectors: Vec<BTreeMap<String, f64>>,
}

/// Lowercased runs of alphanumerics and `_`.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Word offsets of the windows covering a `words`-long document.
pub fn window_offsets(words: usize) -> Vec<usize> {
    let mut out = vec![0];
    let mut start = 0;
    while start + WINDOW_WORDS < words {
        start += STRIDE;
        out.push(start);
    }
    out
}

fn term_counts(text: &str) -> BTreeMap<String, f64> {
    let mut tf = BTreeMap::new();
    for t in tokenize(text) {
        *tf.entry(t).or_insert(0.0) += 1.0;
    }
    tf
}

fn unit(mut v: BTreeMap<String, f64>) -> BTreeMap<String, f64> {
    let norm = v.values().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.values_mut().for_each(|x| *x /= norm);
    }
    v
}

impl DocIndex {
    /// Builds from `(doc id, text)` pairs; input order does not matter.
    pub fn from_documents(docs: &[(String, String)]) -> Self {
        let mut docs: Vec<&(String, String)> = docs.iter().collect();
        docs.sort_by(|a, b| a.0.cmp(&b.0));
        let mut chunks = Vec::new();
        for (id, text) in docs {
            let words: Vec<&str> = text.split_whitespace().collect();
            if words.is_empty() {
                continue;
            }
            for off in window_offsets(words.len()) {
                let end = (off + WINDOW_WORDS).min(words.len());
                chunks.push(Chunk { doc: id.clone(), offset: off, text: words[off..end].join(" ") });
            }
        }
        let counts: Vec<BTreeMap<String, f64>> = chunks.iter().map(|c| term_counts(&c.text)).collect();
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for tf in &counts {
            for t in tf.keys() {
                *df.entry(t.clone()).or_default() += 1;
            }
        }
        let n = chunks.len() as f64;
        let idf: BTreeMap<String, f64> = df.into_iter().map(|(t, d)| (t, ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0)).collect();
        let vectors = counts.into_iter().map(|tf| unit(tf.into_iter().map(|(t, c)| (t.clone(), c * idf[&t])).collect())).collect();
        DocIndex { chunks, idf, vectors }
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    /// Unit-length query vector; terms absent from the corpus are dropped.
    pub fn query_vector(&self, query: &str) -> BTreeMap<String, f64> {
        unit(term_counts(query).into_iter().filter_map(|(t, c)| self.idf.get(&t).map(|w| (t, c * w))).collect())
    }

    /// Up to `k` chunks with positive cosine similarity, best first; ties
    /// by document id, then offset.
    pub fn retrieve(&self, query: &str, k: usize) -> Vec<ScoredChunk> {
        let q = self.query_vector(query);
        let scores: Vec<f64> = self.vectors.iter().map(|v| q.iter().map(|(t, w)| w * v.get(t).copied().unwrap_or(0.0)).sum()).collect();
        self.rank(&scores, k)
    }

    /// Same ranking rule over caller-supplied dense embeddings.
    pub fn retrieve_embedded(&self, query: &str, k: usize, embedder: &dyn EmbeddingProvider) -> Vec<ScoredChunk> {
        let q = embedder.embed(query);
        let scores: Vec<f64> = self.chunks.iter().map(|c| dense_cosine(&q, &embedder.embed(&c.text))).collect();
        self.rank(&scores, k)
    }

    fn rank(&self, scores: &[f64], k: usize) -> Vec<ScoredChunk> {
        let mut order: Vec<usize> = (0..self.chunks.len()).filter(|&i| scores[i] > 1e-12).collect();
        order.sort_by(|&a, &b| {
            scores[b]
                .total_cmp(&scores[a])
                .then_with(|| self.chunks[a].doc.cmp(&self.chunks[b].doc))
                .then(self.chunks[a].offset.cmp(&self.chunks[b].offset))
        });
        order
            .into_iter()
            .take(k)
            .map(|i| {
                let c = &self.chunks[i];
                ScoredChunk { doc: c.doc.clone(), offset: c.offset, text: c.text.clone(), score: scores[i] }
            })
            .collect()
    }
}

/// Optional dense-vector backend; the lexical index is the default.
pub trait EmbeddingProvider {
    fn embed(&self, text: &str) -> Vec<f64>;
}

fn dense_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na > 0.0 && nb > 0.0 {
        dot / (na * nb)
    } else {
        0.0
    }
}

/// Indexes every `*.md` / `*.txt` file directly inside `dir`. A missing or
/// empty directory yields an empty index (logged, not an error).
pub fn build_index(dir: impl AsRef<Path>) -> Result<DocIndex, HkmaError> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        log::warn!("corpus {} not found; retrieval will return nothing", dir.display());
        return Ok(DocIndex::default());
    }
    let mut docs = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or_default();
        if path.is_file() && (ext == "md" || ext == "txt") {
            let id = path.file_name().expect("file has a name").to_string_lossy().into_owned();
            docs.push((id, std::fs::read_to_string(&path)?));
        }
    }
    let index = DocIndex::from_documents(&docs);
    if index.is_empty() {
        log::warn!("corpus {} has no indexable text", dir.display());
    }
    Ok(index)
}

/// Merges several result lists, keeping each chunk's best score, and
/// returns the overall top `k` under the same ordering as `retrieve`.
pub fn merge_hits(lists: Vec<Vec<ScoredChunk>>, k: usize) -> Vec<ScoredChunk> {
    let mut best: BTreeMap<(String, usize), ScoredChunk> = BTreeMap::new();
    for hit in lists.into_iter().flatten() {
        let key = (hit.doc.clone(), hit.offset);
        match best.get(&key) {
            Some(h) if h.score >= hit.score => {}
            _ => {
                best.insert(key, hit);
            }
        }
    }
    let mut all: Vec<ScoredChunk> = best.into_values().collect();
    all.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.doc.cmp(&b.doc)).then(a.offset.cmp(&b.offset)));
    all.truncate(k);
    all
}
