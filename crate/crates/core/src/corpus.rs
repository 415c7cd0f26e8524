//! Literature ingestion: text normalization, content digests, and the
//! monotonic hash memory used to keep duplicate abstracts out of the graph.
//!
//! A document's digest is SHA-256 over its normalized UTF-8 text, so two
//! abstracts that differ only in case, punctuation, or spacing collapse to the
//! same digest.

use std::collections::BTreeSet;
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::graphstore::KnowledgeGraph;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("corpus read failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid digest: {0}")]
    InvalidDigest(String),
}

/// Normalizes free text into the canonical form used for hashing, entity
/// canonicalization, and embedding.
///
/// NFKC, then lowercase, then every non-alphanumeric char becomes a space,
/// then whitespace runs collapse to a single space and the ends are trimmed.
pub fn normalize_text(raw: &str) -> String {
    let mut out = normalize_once(raw);
    // Lowercasing can emit combining marks (e.g. U+0130) that the next pass
    // would strip; loop until the output is a fixed point.
    loop {
        let next = normalize_once(&out);
        if next == out {
            return out;
        }
        out = next;
    }
}

fn normalize_once(raw: &str) -> String {
    let lowered: String = raw.nfkc().collect::<String>().to_lowercase();
    let mut out = String::with_capacity(lowered.len());
    let mut pending_space = false;
    for ch in lowered.chars() {
        if ch.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(ch);
        } else {
            pending_space = true;
        }
    }
    out
}

/// 256-bit content digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn of_bytes(bytes: &[u8]) -> Self {
        Digest(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for Digest {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).map_err(|e| CorpusError::InvalidDigest(e.to_string()))?;
        Ok(Digest(out))
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// SHA-256 over the UTF-8 bytes of already-normalized text.
pub fn hash_document(normalized: &str) -> Digest {
    Digest::of_bytes(normalized.as_bytes())
}

/// One literature abstract.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub source_id: String,
    pub raw_text: String,
    pub normalized_text: String,
    pub digest: Digest,
}

impl Document {
    pub fn new(source_id: impl Into<String>, raw_text: impl Into<String>) -> Self {
        let raw_text = raw_text.into();
        let normalized_text = normalize_text(&raw_text);
        let digest = hash_document(&normalized_text);
        Document {
            source_id: source_id.into(),
            raw_text,
            normalized_text,
            digest,
        }
    }

    /// Builds a document from an optional title and an abstract, joined by a
    /// single space.
    pub fn from_parts(source_id: impl Into<String>, title: Option<&str>, abstract_text: &str) -> Self {
        let raw = match title {
            Some(t) if !t.is_empty() => format!("{t} {abstract_text}"),
            _ => abstract_text.to_string(),
        };
        Document::new(source_id, raw)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusRecord {
    id: String,
    #[serde(default)]
    title: Option<String>,
    #[serde(rename = "abstract")]
    abstract_text: String,
}

/// Reads a JSON Lines corpus (`id`, optional `title`, `abstract`). Blank lines
/// are skipped.
pub fn read_corpus_jsonl<R: BufRead>(reader: R) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CorpusRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        docs.push(Document::from_parts(record.id, record.title.as_deref(), &record.abstract_text));
    }
    Ok(docs)
}

/// Digests of every abstract seen so far. Only ever grows.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashMemory {
    seen: BTreeSet<Digest>,
    generation: u64,
}

impl HashMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn seen(&self) -> &BTreeSet<Digest> {
        &self.seen
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn contains(&self, digest: &Digest) -> bool {
        self.seen.contains(digest)
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }

    /// Commits one batch: keeps documents whose digest has not been seen
    /// (first occurrence wins inside the batch), records every digest, and
    /// advances the generation.
    pub fn dedup_batch(&mut self, docs: Vec<Document>) -> Vec<Document> {
        let retained = docs
            .into_iter()
            .filter(|doc| self.seen.insert(doc.digest))
            .collect();
        self.generation += 1;
        retained
    }
}

/// A literature search issued by the retrieval loop.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchQuery {
    pub text: String,
    pub depth: u32,
}

/// Bounded breadth-first query expansion over newly canonicalized entities.
///
/// Each canonical name is issued at most once, no query goes deeper than
/// `max_depth`, and at most `budget` queries are issued in total.
#[derive(Debug, Clone)]
pub struct QueryPlanner {
    max_depth: u32,
    budget: usize,
    issued: BTreeSet<String>,
}

impl QueryPlanner {
    pub fn new(max_depth: u32, budget: usize) -> Self {
        QueryPlanner {
            max_depth,
            budget,
            issued: BTreeSet::new(),
        }
    }

    pub fn max_depth(&self) -> u32 {
        self.max_depth
    }

    pub fn issued(&self) -> &BTreeSet<String> {
        &self.issued
    }

    pub fn remaining_budget(&self) -> usize {
        self.budget.saturating_sub(self.issued.len())
    }

    /// The seed query at depth 0. Counts against the budget.
    pub fn seed(&mut self, text: &str) -> Option<SearchQuery> {
        let text = normalize_text(text);
        if text.is_empty() || self.remaining_budget() == 0 || !self.issued.insert(text.clone()) {
            return None;
        }
        Some(SearchQuery { text, depth: 0 })
    }

    /// Queries for frontier entities not yet issued, sorted by canonical name,
    /// at `depth + 1`. Entities unknown to `graph` are skipped.
    pub fn expand_queries<'a, I>(&mut self, graph: &KnowledgeGraph, frontier: I, depth: u32) -> Vec<SearchQuery>
    where
        I: IntoIterator<Item = &'a String>,
    {
        if depth >= self.max_depth {
            return Vec::new();
        }
        let candidates: BTreeSet<&String> = frontier
            .into_iter()
            .filter(|id| graph.entity(id).is_some())
            .collect();
        let mut out = Vec::new();
        for name in candidates {
            if self.remaining_budget() == 0 {
                break;
            }
            if self.issued.insert(name.clone()) {
                out.push(SearchQuery {
                    text: name.clone(),
                    depth: depth + 1,
                });
            }
        }
        out
    }
}
