//! TF-IDF node features, one vocabulary per node type.
//!
//! Tokens are maximal runs of alphanumeric characters. A term's weight in a
//! document is `count · idf` with the smoothed
//! `idf = ln((1 + N) / (1 + df)) + 1`, and every nonzero row is scaled to
//! unit Euclidean norm.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::atomic::write_atomic;
use crate::graph::HinGraph;
use crate::ndiff::Tensor;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("empty vocabulary for {context}: {reason}")]
    EmptyVocabulary { context: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("feature cache {path}: {message}")]
    Cache { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabConfig {
    pub lowercase: bool,
    pub max_features: usize,
    pub min_df: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self {
            lowercase: true,
            max_features: 5_000,
            min_df: 1,
        }
    }
}

/// Vocabulary settings applied to every node type of a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub vocab: VocabConfig,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            vocab: VocabConfig {
                min_df: 2,
                ..VocabConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    terms: Vec<String>,
    document_frequency: Vec<usize>,
    corpus_size: usize,
    idf: Vec<f64>,
    lowercase: bool,
    lookup: HashMap<String, usize>,
}

pub fn tokenize(text: &str, lowercase: bool) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(move |t| {
            if lowercase {
                t.to_lowercase()
            } else {
                t.to_string()
            }
        })
}

fn smoothed_idf(corpus_size: usize, df: usize) -> f64 {
    ((1.0 + corpus_size as f64) / (1.0 + df as f64)).ln() + 1.0
}

impl Vocabulary {
    fn from_parts(
        terms: Vec<String>,
        document_frequency: Vec<usize>,
        corpus_size: usize,
        lowercase: bool,
    ) -> Self {
        let idf = document_frequency
            .iter()
            .map(|&df| smoothed_idf(corpus_size, df))
            .collect();
        let lookup = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            terms,
            document_frequency,
            corpus_size,
            idf,
            lowercase,
            lookup,
        }
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn document_frequency(&self) -> &[usize] {
        &self.document_frequency
    }

    pub fn corpus_size(&self) -> usize {
        self.corpus_size
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.lookup.get(term).copied()
    }

    /// Short hex digest of terms, document frequencies, corpus size and casing.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!(
            "lowercase={}\ncorpus={}\n",
            self.lowercase, self.corpus_size
        ));
        for (t, df) in self.terms.iter().zip(&self.document_frequency) {
            h.update(t.as_bytes());
            h.update(format!("\t{df}\n"));
        }
        hex::encode(&h.finalize()[..8])
    }
}

pub fn build_vocabulary<S: AsRef<str>>(
    texts: &[S],
    config: &VocabConfig,
) -> Result<Vocabulary, FeatureError> {
    build_vocabulary_for(texts, config, "corpus")
}

fn build_vocabulary_for<S: AsRef<str>>(
    texts: &[S],
    config: &VocabConfig,
    context: &str,
) -> Result<Vocabulary, FeatureError> {
    let empty = |reason: &str| FeatureError::EmptyVocabulary {
        context: context.to_string(),
        reason: reason.to_string(),
    };
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for text in texts {
        let mut seen: Vec<String> = tokenize(text.as_ref(), config.lowercase).collect();
        seen.sort_unstable();
        seen.dedup();
        for t in seen {
            *df.entry(t).or_default() += 1;
        }
    }
    if df.is_empty() {
        return Err(empty("no tokens in any text"));
    }
    let mut kept: Vec<(String, usize)> = df
        .into_iter()
        .filter(|(_, n)| *n >= config.min_df)
        .collect();
    if kept.is_empty() {
        return Err(empty(&format!("no term reaches min_df={}", config.min_df)));
    }
    if kept.len() > config.max_features {
        // highest df first, ties lexicographic
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        kept.truncate(config.max_features);
        kept.sort_by(|a, b| a.0.cmp(&b.0));
    }
    let (terms, freqs) = kept.into_iter().unzip();
    Ok(Vocabulary::from_parts(
        terms,
        freqs,
        texts.len(),
        config.lowercase,
    ))
}

/// TF-IDF vector of `text`, L2-normalized. Out-of-vocabulary text gives zeros.
pub fn encode_document(text: &str, vocab: &Vocabulary) -> Vec<f64> {
    let mut out = vec![0.0; vocab.len()];
    for t in tokenize(text, vocab.lowercase) {
        if let Some(i) = vocab.index_of(&t) {
            out[i] += 1.0;
        }
    }
    for (v, idf) in out.iter_mut().zip(&vocab.idf) {
        *v *= idf;
    }
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        out.iter_mut().for_each(|v| *v /= norm);
    }
    out
}

/// Per-type feature matrices; row `i` of matrix `t` belongs to node `i` of type `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    type_names: Vec<String>,
    vocabularies: Vec<Vocabulary>,
    matrices: Vec<Arc<Tensor>>,
}

impl FeatureSet {
    /// Assembles a feature set from raw matrices.
    /// Each type gets a placeholder vocabulary `f0, f1, ...`.
    pub fn from_matrices(type_names: Vec<String>, matrices: Vec<Tensor>) -> Self {
        let vocabularies = matrices
            .iter()
            .map(|m| {
                let terms: Vec<String> = (0..m.cols()).map(|i| format!("f{i}")).collect();
                let df = vec![1; terms.len()];
                Vocabulary::from_parts(terms, df, m.rows(), false)
            })
            .collect();
        Self {
            type_names,
            vocabularies,
            matrices: matrices.into_iter().map(Arc::new).collect(),
        }
    }

    pub fn type_names(&self) -> &[String] {
        &self.type_names
    }

    pub fn num_types(&self) -> usize {
        self.matrices.len()
    }

    pub fn matrix(&self, ty: usize) -> &Tensor {
        &self.matrices[ty]
    }

    pub fn matrix_mut(&mut self, ty: usize) -> &mut Tensor {
        Arc::make_mut(&mut self.matrices[ty])
    }

    /// Shared handle to the matrix of `ty`, cheap to clone.
    pub fn shared(&self, ty: usize) -> Arc<Tensor> {
        Arc::clone(&self.matrices[ty])
    }

    pub fn vocabulary(&self, ty: usize) -> &Vocabulary {
        &self.vocabularies[ty]
    }

    /// Feature dimension `F^φ` of each type.
    pub fn dims(&self) -> Vec<usize> {
        self.matrices.iter().map(|m| m.cols()).collect()
    }

    pub fn fingerprints(&self) -> Vec<(String, String)> {
        self.type_names
            .iter()
            .zip(&self.vocabularies)
            .map(|(n, v)| (n.clone(), v.fingerprint()))
            .collect()
    }

    pub fn write_cache(&self, path: &Path) -> Result<(), FeatureError> {
        let meta = CacheMeta {
            types: self
                .type_names
                .iter()
                .zip(&self.vocabularies)
                .zip(&self.matrices)
                .map(|((name, v), m)| CacheType {
                    name: name.clone(),
                    rows: m.rows(),
                    corpus_size: v.corpus_size,
                    lowercase: v.lowercase,
                    terms: v.terms.clone(),
                    document_frequency: v.document_frequency.clone(),
                })
                .collect(),
        };
        let meta = toml::to_string(&meta).expect("cache metadata serializes");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(CACHE_MAGIC);
        bytes.push(CACHE_VERSION);
        bytes.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        bytes.extend_from_slice(meta.as_bytes());
        for m in &self.matrices {
            for &v in m.data() {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        write_atomic(path, &bytes).map_err(|source| FeatureError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Reads a cache written by [`FeatureSet::write_cache`]. Values come back
    /// at 32-bit precision.
    pub fn read_cache(path: &Path) -> Result<FeatureSet, FeatureError> {
        let bytes = fs::read(path).map_err(|source| FeatureError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let bad = |message: &str| FeatureError::Cache {
            path: path.to_path_buf(),
            message: message.to_string(),
        };
        if bytes.len() < 9 || &bytes[..4] != CACHE_MAGIC {
            return Err(bad("bad magic"));
        }
        if bytes[4] != CACHE_VERSION {
            return Err(bad(&format!("unsupported version {}", bytes[4])));
        }
        let len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let meta = bytes
            .get(9..9 + len)
            .ok_or_else(|| bad("truncated metadata"))?;
        let meta: CacheMeta = std::str::from_utf8(meta)
            .ok()
            .and_then(|s| toml::from_str(s).ok())
            .ok_or_else(|| bad("unreadable metadata"))?;
        let mut offset = 9 + len;
        let mut out = FeatureSet {
            type_names: Vec::new(),
            vocabularies: Vec::new(),
            matrices: Vec::new(),
        };
        for t in meta.types {
            let n = t.rows * t.terms.len();
            let raw = bytes
                .get(offset..offset + 4 * n)
                .ok_or_else(|| bad(&format!("truncated matrix for type `{}`", t.name)))?;
            offset += 4 * n;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            out.matrices.push(Arc::new(
                Tensor::matrix(t.rows, t.terms.len(), data).map_err(|e| bad(&e.to_string()))?,
            ));
            out.vocabularies.push(Vocabulary::from_parts(
                t.terms,
                t.document_frequency,
                t.corpus_size,
                t.lowercase,
            ));
            out.type_names.push(t.name);
        }
        Ok(out)
    }
}

const CACHE_MAGIC: &[u8; 4] = b"HGFC";
const CACHE_VERSION: u8 = 1;

#[derive(Serialize, Deserialize)]
struct CacheMeta {
    types: Vec<CacheType>,
}

#[derive(Serialize, Deserialize)]
struct CacheType {
    name: String,
    rows: usize,
    corpus_size: usize,
    lowercase: bool,
    terms: Vec<String>,
    document_frequency: Vec<usize>,
}

/// Builds one vocabulary per node type from that type's texts and encodes
/// every node in index order.
pub fn encode_graph(graph: &HinGraph, config: &FeatureConfig) -> Result<FeatureSet, FeatureError> {
    let mut out = FeatureSet {
        type_names: graph.schema().node_types().to_vec(),
        vocabularies: Vec::new(),
        matrices: Vec::new(),
    };
    for (ty, name) in graph.schema().node_types().iter().enumerate() {
        let texts: Vec<&str> = graph.nodes_of(ty).iter().map(|n| n.text.as_str()).collect();
        let vocab = build_vocabulary_for(&texts, &config.vocab, &format!("node type `{name}`"))?;
        let mut data = Vec::with_capacity(texts.len() * vocab.len());
        for t in &texts {
            data.extend(encode_document(t, &vocab));
        }
        out.matrices.push(Arc::new(
            Tensor::matrix(texts.len(), vocab.len(), data).expect("row length is vocabulary size"),
        ));
        out.vocabularies.push(vocab);
    }
    Ok(out)
}
