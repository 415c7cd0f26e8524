//! Deterministic text embeddings and the long-term memory bank.
//!
//! The built-in provider is a signed feature-hashing embedder over character
//! 3-grams of the normalized text. For a 3-gram `g` with `h = SHA-256(g)`:
//! the bucket is `h mod d` with `h` read as a big-endian 256-bit integer, and
//! the sign is `+1` when bit 0 of `h[0]` is clear, `-1` otherwise. The summed
//! vector is L2-normalized; text with no 3-grams embeds to the zero vector.

use std::io::{Read, Write};

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::corpus::normalize_text;
use crate::graphstore::{EdgeKey, KnowledgeGraph};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("empty LTM: the graph has no edges")]
    EmptyLtm,
    #[error("centroid of an empty vector list")]
    EmptyCentroid,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embedding dimension must be at least 2, got {0}")]
    InvalidDimension(usize),
    #[error("corrupt bank file: {0}")]
    Corrupt(String),
    #[error("bank I/O failed: {0}")]
    Io(#[from] std::io::Error),
}

/// Text to fixed-dimension vector.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Signed character-3-gram feature hashing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Result<Self, EmbeddingError> {
        if dim < 2 {
            return Err(EmbeddingError::InvalidDimension(dim));
        }
        Ok(HashEmbedder { dim })
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        embed_text(text, self.dim)
    }
}

/// Big-endian 256-bit integer modulo `d`.
fn digest_mod(hash: &[u8], d: usize) -> usize {
    let d = d as u128;
    hash.iter().fold(0u128, |acc, &b| (acc * 256 + b as u128) % d) as usize
}

pub fn embed_text(text: &str, dim: usize) -> Vec<f64> {
    assert!(dim >= 2, "embedding dimension must be at least 2");
    let normalized = normalize_text(text);
    let chars: Vec<char> = normalized.chars().collect();
    let mut v = vec![0.0; dim];
    let mut buf = String::with_capacity(12);
    for window in chars.windows(3) {
        buf.clear();
        buf.extend(window.iter());
        let h = Sha256::digest(buf.as_bytes());
        let bucket = digest_mod(&h, dim);
        let sign = if h[0] & 1 == 0 { 1.0 } else { -1.0 };
        v[bucket] += sign;
    }
    let norm = l2_norm(&v);
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Coordinate-wise arithmetic mean.
pub fn centroid<V: AsRef<[f64]>>(vectors: &[V]) -> Result<Vec<f64>, EmbeddingError> {
    let first = vectors.first().ok_or(EmbeddingError::EmptyCentroid)?.as_ref();
    let mut sum = vec![0.0; first.len()];
    for v in vectors {
        let v = v.as_ref();
        if v.len() != sum.len() {
            return Err(EmbeddingError::DimensionMismatch {
                expected: sum.len(),
                found: v.len(),
            });
        }
        sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
    }
    let n = vectors.len() as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    Ok(sum)
}

/// Text rendered for one memory row: canonical subject, relation, and object
/// joined by single spaces.
pub fn row_text(key: &EdgeKey) -> String {
    format!("{} {} {}", key.subject, key.relation, key.object)
}

/// N x d matrix of memory embeddings, one row per graph edge in edge-key
/// order, with the row -> edge provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    matrix: Array2<f64>,
    provenance: Vec<EdgeKey>,
    built_from: String,
}

impl MemoryBank {
    pub fn build(graph: &KnowledgeGraph, provider: &dyn EmbeddingProvider) -> Result<Self, EmbeddingError> {
        if graph.edge_count() == 0 {
            return Err(EmbeddingError::EmptyLtm);
        }
        let d = provider.dim();
        let provenance: Vec<EdgeKey> = graph.edges().map(|e| e.key.clone()).collect();
        let mut matrix = Array2::zeros((provenance.len(), d));
        for (mut row, key) in matrix.axis_iter_mut(Axis(0)).zip(&provenance) {
            let v = provider.embed(&row_text(key));
            if v.len() != d {
                return Err(EmbeddingError::DimensionMismatch { expected: d, found: v.len() });
            }
            row.assign(&ArrayView1::from(&v));
        }
        Ok(MemoryBank {
            matrix,
            provenance,
            built_from: graph.version_tag(),
        })
    }

    pub fn from_parts(matrix: Array2<f64>, provenance: Vec<EdgeKey>, built_from: String) -> Result<Self, EmbeddingError> {
        if matrix.nrows() != provenance.len() {
            return Err(EmbeddingError::Corrupt(format!(
                "{} rows but {} provenance entries",
                matrix.nrows(),
                provenance.len()
            )));
        }
        Ok(MemoryBank { matrix, provenance, built_from })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn provenance(&self) -> &[EdgeKey] {
        &self.provenance
    }

    pub fn built_from(&self) -> &str {
        &self.built_from
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.matrix.row(i)
    }

    /// Binary export: `N` and `d` as u64 LE, then `N*d` f64 LE row-major, then
    /// a JSON trailer with provenance.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<(), EmbeddingError> {
        write_matrix_binary(&mut w, &self.matrix)?;
        let trailer = BankTrailer {
            built_from: self.built_from.clone(),
            provenance: self.provenance.clone(),
        };
        serde_json::to_writer(&mut w, &trailer).map_err(|e| EmbeddingError::Corrupt(e.to_string()))?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self, EmbeddingError> {
        let (matrix, trailer) = read_matrix_binary(&mut r)?;
        let trailer: BankTrailer =
            serde_json::from_slice(&trailer).map_err(|e| EmbeddingError::Corrupt(format!("trailer: {e}")))?;
        MemoryBank::from_parts(matrix, trailer.provenance, trailer.built_from)
    }

    pub fn to_json(&self) -> BankJson {
        BankJson {
            n: self.len(),
            d: self.dim(),
            built_from: self.built_from.clone(),
            rows: self.matrix.outer_iter().map(|r| r.to_vec()).collect(),
            provenance: self.provenance.clone(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct BankTrailer {
    built_from: String,
    provenance: Vec<EdgeKey>,
}

/// Plain-JSON bank export for debugging.
#[derive(Debug, Serialize, Deserialize)]
pub struct BankJson {
    pub n: usize,
    pub d: usize,
    pub built_from: String,
    pub rows: Vec<Vec<f64>>,
    pub provenance: Vec<EdgeKey>,
}

pub fn write_matrix_binary<W: Write>(w: &mut W, m: &Array2<f64>) -> Result<(), EmbeddingError> {
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for x in m.iter() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

/// Reads the header and matrix body, returning whatever trailing bytes follow.
pub fn read_matrix_binary<R: Read>(r: &mut R) -> Result<(Array2<f64>, Vec<u8>), EmbeddingError> {
    let mut word = [0u8; 8];
    let mut read_u64 = |r: &mut R| -> Result<u64, EmbeddingError> {
        r.read_exact(&mut word)
            .map_err(|_| EmbeddingError::Corrupt("truncated header".into()))?;
        Ok(u64::from_le_bytes(word))
    };
    let n = read_u64(r)? as usize;
    let d = read_u64(r)? as usize;
    let len = n
        .checked_mul(d)
        .and_then(|x| x.checked_mul(8))
        .ok_or_else(|| EmbeddingError::Corrupt("matrix size overflows".into()))?;
    let mut body = Vec::new();
    r.take(len as u64).read_to_end(&mut body)?;
    if body.len() != len {
        return Err(EmbeddingError::Corrupt(format!("expected {len} body bytes, found {}", body.len())));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let matrix = Array2::from_shape_vec((n, d), values).map_err(|e| EmbeddingError::Corrupt(e.to_string()))?;
    let mut trailer = Vec::new();
    r.read_to_end(&mut trailer)?;
    Ok((matrix, trailer))
}

/// Loads a d x d projection stored in the bank binary layout (any trailer is
/// ignored).
pub fn read_projection<R: Read>(mut r: R, dim: usize) -> Result<Array2<f64>, EmbeddingError> {
    let (m, _) = read_matrix_binary(&mut r)?;
    if m.nrows() != dim || m.ncols() != dim {
        return Err(EmbeddingError::DimensionMismatch {
            expected: dim,
            found: if m.nrows() != dim { m.nrows() } else { m.ncols() },
        });
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::hash_document;
    use crate::extraction::EvidenceTriple;
    use crate::graphstore::{FusionParams, SynonymTable};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn embedding_is_deterministic_and_unit() {
        let a = embed_text("glioblastoma exhibits feature necrosis", 256);
        let b = embed_text("glioblastoma exhibits feature necrosis", 256);
        assert_eq!(a, b);
        assert_abs_diff_eq!(l2_norm(&a), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn degenerate_text_embeds_to_zero() {
        assert!(embed_text("", 16).iter().all(|&x| x == 0.0));
        assert!(embed_text("ab", 16).iter().all(|&x| x == 0.0));
        assert!(embed_text("?!", 16).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_trigram_lands_in_reference_bucket() {
        // SHA-256("abc") = ba7816bf...f20015ad; 0xad = 173 -> bucket 173 mod 16 = 13
        // for d = 16 (a power of two only sees the last byte), h[0] = 0xba is even -> +1
        let v = embed_text("abc", 16);
        let mut expected = vec![0.0; 16];
        expected[13] = 1.0;
        assert_eq!(v, expected);
    }

    #[test]
    fn digest_mod_matches_big_integer_reduction() {
        // 0x0102 = 258; 258 mod 7 = 6
        assert_eq!(digest_mod(&[0x01, 0x02], 7), 6);
        assert_eq!(digest_mod(&[0xff; 32], 2), 1);
    }

    #[test]
    fn centroid_examples() {
        assert_eq!(centroid(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(centroid(&[vec![0.3, -2.0]]).unwrap(), vec![0.3, -2.0]);
        assert_eq!(centroid(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(centroid::<Vec<f64>>(&[]), Err(EmbeddingError::EmptyCentroid)));
        assert!(matches!(
            centroid(&[vec![1.0], vec![1.0, 2.0]]),
            Err(EmbeddingError::DimensionMismatch { .. })
        ));
    }

    fn graph_of(triples: &[(&str, &str, &str)]) -> KnowledgeGraph {
        let mut graph = KnowledgeGraph::new(FusionParams::default(), Default::default());
        for (s, r, o) in triples {
            let t = EvidenceTriple {
                subject: s.to_string(),
                relation: r.to_string(),
                object: o.to_string(),
                confidence: 0.8,
                embedding: embed_text(&format!("{s} {r} {o}"), 32),
                source_digest: hash_document(s),
            };
            graph.upsert_evidence(&t, &SynonymTable::default()).unwrap();
        }
        graph
    }

    #[test]
    fn bank_rows_follow_edge_order() {
        let graph = graph_of(&[
            ("b", "INDICATES", "c"),
            ("a", "SHOWS", "c"),
            ("a", "INDICATES", "z"),
        ]);
        let provider = HashEmbedder::new(32).unwrap();
        let bank = MemoryBank::build(&graph, &provider).unwrap();
        assert_eq!(bank.len(), 3);
        let subjects: Vec<_> = bank.provenance().iter().map(|k| k.subject.as_str()).collect();
        assert_eq!(subjects, vec!["a", "a", "b"]);
        assert_eq!(bank.provenance()[0].relation, "INDICATES");
        for (i, key) in bank.provenance().iter().enumerate() {
            assert!(graph.edge(key).is_some());
            assert_eq!(bank.row(i).to_vec(), provider.embed(&row_text(key)));
        }

        let rebuilt = MemoryBank::build(&graph, &provider).unwrap();
        assert_eq!(rebuilt, bank);

        let grown = graph_of(&[
            ("b", "INDICATES", "c"),
            ("a", "SHOWS", "c"),
            ("a", "INDICATES", "z"),
            ("q", "SHOWS", "r"),
        ]);
        assert_eq!(MemoryBank::build(&grown, &provider).unwrap().len(), 4);
    }

    #[test]
    fn empty_graph_has_no_bank() {
        let graph = KnowledgeGraph::new(FusionParams::default(), Default::default());
        let provider = HashEmbedder::new(8).unwrap();
        assert!(matches!(MemoryBank::build(&graph, &provider), Err(EmbeddingError::EmptyLtm)));
    }

    #[test]
    fn binary_layout_is_bit_exact() {
        let graph = graph_of(&[("a", "SHOWS", "b"), ("c", "SHOWS", "d")]);
        let bank = MemoryBank::build(&graph, &HashEmbedder::new(4).unwrap()).unwrap();
        let mut bytes = Vec::new();
        bank.write_binary(&mut bytes).unwrap();
        assert_eq!(&bytes[0..8], &2u64.to_le_bytes());
        assert_eq!(&bytes[8..16], &4u64.to_le_bytes());
        assert_eq!(&bytes[16..24], &bank.matrix()[[0, 0]].to_le_bytes());
        assert_eq!(&bytes[16 + 8 * 5..16 + 8 * 6], &bank.matrix()[[1, 1]].to_le_bytes());
        let trailer: serde_json::Value = serde_json::from_slice(&bytes[16 + 64..]).unwrap();
        assert_eq!(trailer["provenance"][1]["subject"], "c");

        let back = MemoryBank::read_binary(bytes.as_slice()).unwrap();
        assert_eq!(back, bank);

        assert!(matches!(
            MemoryBank::read_binary(&bytes[..30]),
            Err(EmbeddingError::Corrupt(_))
        ));
    }

    #[test]
    fn projection_requires_square_matrix() {
        let mut bytes = Vec::new();
        write_matrix_binary(&mut bytes, &Array2::eye(3)).unwrap();
        assert_eq!(read_projection(bytes.as_slice(), 3).unwrap(), Array2::<f64>::eye(3));
        assert!(read_projection(bytes.as_slice(), 4).is_err());
    }

    proptest! {
        #[test]
        fn embeddings_are_unit_or_zero(text in "\\PC{0,30}", dim in 2usize..64) {
            let v = embed_text(&text, dim);
            prop_assert_eq!(v.len(), dim);
            let n = l2_norm(&v);
            prop_assert!(n == 0.0 || (n - 1.0).abs() <= 1e-6);
        }
    }
}
