//! Per-post text embeddings.
//!
//! Two providers share the [`EmbeddingProvider`] contract: a store of vectors
//! exported by an external encoder, and a deterministic hashed character
//! n-gram encoder that needs no training.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::ops::RangeInclusive;
use std::path::Path;

use crate::corpus::{clean_text, Post};
use crate::error::{Error, Result};

/// A `d`-dimensional text representation.
pub type EmbeddingVector = Vec<f64>;

/// Default embedding width.
pub const DEFAULT_DIM: usize = 64;

pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    fn embed_post(&self, post: &Post) -> Result<EmbeddingVector>;
}

/// Vectors keyed by post id.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecomputedStore {
    dim: usize,
    vectors: HashMap<String, EmbeddingVector>,
}

impl PrecomputedStore {
    pub fn new(dim: usize) -> Self {
        PrecomputedStore {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: EmbeddingVector) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: vector.len(),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding".into()));
        }
        let id = id.into();
        if self.vectors.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        self.vectors.insert(id, vector);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Writes the store; rows are sorted by id.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let mut ids: Vec<&String> = self.vectors.keys().collect();
        ids.sort();
        let io = |e| Error::io(path, e);
        writeln!(out, "d={}", self.dim).map_err(io)?;
        for id in ids {
            let row: Vec<String> = self.vectors[id].iter().map(|v| v.to_string()).collect();
            writeln!(out, "{id}\t{}", row.join(" ")).map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

impl EmbeddingProvider for PrecomputedStore {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_post(&self, post: &Post) -> Result<EmbeddingVector> {
        self.vectors
            .get(&post.id)
            .cloned()
            .ok_or_else(|| Error::UnknownPostId(post.id.clone()))
    }
}

/// Loads an embedding store. When `dim` is given it must match the header.
pub fn load_embedding_store(path: impl AsRef<Path>, dim: Option<usize>) -> Result<PrecomputedStore> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_embedding_store(BufReader::new(file), dim)
}

pub fn read_embedding_store(reader: impl BufRead, dim: Option<usize>) -> Result<PrecomputedStore> {
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => line.map_err(|e| Error::parse(1, e.to_string()))?,
        None => return Err(Error::parse(1, "missing `d=<int>` header")),
    };
    let declared: usize = header
        .trim()
        .strip_prefix("d=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::parse(1, format!("bad header `{header}`, expected `d=<int>`")))?;
    if let Some(d) = dim {
        if d != declared {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: declared,
            });
        }
    }
    let mut store = PrecomputedStore::new(declared);
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, values) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(lineno, "expected `<post_id>\\t<values>`"))?;
        let values = values
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::parse(lineno, format!("bad value: {e}")))?;
        if values.len() != declared {
            return Err(Error::parse(
                lineno,
                format!("expected {declared} values, found {}", values.len()),
            ));
        }
        store.insert(id, values).map_err(|e| match e {
            Error::DuplicateId(id) => Error::DuplicateId(id),
            other => Error::parse(lineno, other.to_string()),
        })?;
    }
    Ok(store)
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Signed feature hashing of character n-grams.
///
/// Text is lower-cased, punctuation other than `#` is dropped and whitespace
/// is collapsed. Each n-gram hashes with 64-bit FNV-1a; the bucket is
/// `hash % dim` and the top bit selects the sign.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashedNgramEncoder {
    dim: usize,
    ngrams: RangeInclusive<usize>,
}

impl HashedNgramEncoder {
    pub fn new(dim: usize) -> Result<Self> {
        Self::with_ngrams(dim, 3..=5)
    }

    pub fn with_ngrams(dim: usize, ngrams: RangeInclusive<usize>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        if ngrams.is_empty() || *ngrams.start() == 0 {
            return Err(Error::invalid("n-gram sizes must be positive"));
        }
        Ok(HashedNgramEncoder { dim, ngrams })
    }

    pub fn normalize(text: &str) -> String {
        let kept: String = text
            .to_lowercase()
            .chars()
            .map(|c| if c.is_whitespace() { ' ' } else { c })
            .filter(|&c| c == ' ' || c == '#' || c.is_alphanumeric())
            .collect();
        kept.split_whitespace().collect::<Vec<_>>().join(" ")
    }

    /// Signed bucket counts before normalization.
    pub fn accumulate(&self, text: &str) -> Vec<f64> {
        let chars: Vec<char> = Self::normalize(text).chars().collect();
        let mut out = vec![0.0; self.dim];
        let mut buf = String::new();
        for n in self.ngrams.clone() {
            for window in chars.windows(n) {
                buf.clear();
                buf.extend(window);
                let h = fnv1a(buf.as_bytes());
                let bucket = (h % self.dim as u64) as usize;
                out[bucket] += if h >> 63 == 0 { 1.0 } else { -1.0 };
            }
        }
        out
    }

    /// Unit-norm encoding of `text`, or the zero vector when it has no n-grams.
    pub fn encode(&self, text: &str) -> EmbeddingVector {
        let mut v = self.accumulate(text);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl EmbeddingProvider for HashedNgramEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_post(&self, post: &Post) -> Result<EmbeddingVector> {
        Ok(self.encode(&clean_text(&post.text)))
    }
}
