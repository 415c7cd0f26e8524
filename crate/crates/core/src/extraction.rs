//! Candidate evidence triples from documents, and the confidence filter that
//! gates them into the graph.
//!
//! Two extractors ship here: a deterministic pattern-based mock used by tests
//! and the evaluation harness, and a remote extractor that speaks a small JSON
//! protocol over a pluggable transport. Both recompute triple embeddings with
//! the crate's [`EmbeddingProvider`] so that evidence vectors live in the same
//! space as the memory bank.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{normalize_text, Digest, Document};
use crate::embedding::EmbeddingProvider;

pub const EXHIBITS_FEATURE: &str = "EXHIBITS_FEATURE";
pub const ASSOCIATED_WITH: &str = "ASSOCIATED_WITH";
pub const INDICATES: &str = "INDICATES";
pub const GRADED_AS: &str = "GRADED_AS";
pub const LOCATED_IN: &str = "LOCATED_IN";

pub const PROMPT_VERSION: &str = "v1";
pub const PROMPT_TEMPLATE: &str = include_str!("../assets/extraction_prompt_v1.txt");

#[derive(Debug, Error, PartialEq)]
pub enum SchemaError {
    #[error("relation schema is empty")]
    Empty,
    #[error("duplicate relation {0:?} in schema")]
    Duplicate(String),
}

/// Ordered set of allowed relation names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationSchema {
    relations: Vec<String>,
}

impl RelationSchema {
    pub fn new<I, S>(relations: I) -> Result<Self, SchemaError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut out: Vec<String> = Vec::new();
        for r in relations {
            let r = r.into();
            if out.contains(&r) {
                return Err(SchemaError::Duplicate(r));
            }
            out.push(r);
        }
        if out.is_empty() {
            return Err(SchemaError::Empty);
        }
        Ok(RelationSchema { relations: out })
    }

    pub fn contains(&self, relation: &str) -> bool {
        self.relations.iter().any(|r| r == relation)
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }
}

impl Default for RelationSchema {
    fn default() -> Self {
        RelationSchema::new([EXHIBITS_FEATURE, ASSOCIATED_WITH, INDICATES, GRADED_AS, LOCATED_IN])
            .expect("default schema is valid")
    }
}

/// A single-source candidate fact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceTriple {
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub confidence: f64,
    pub embedding: Vec<f64>,
    pub source_digest: Digest,
}

impl EvidenceTriple {
    /// Builds a triple with its embedding computed over `"subject relation object"`.
    pub fn embedded(
        subject: String,
        relation: String,
        object: String,
        confidence: f64,
        source_digest: Digest,
        embedder: &dyn EmbeddingProvider,
    ) -> Self {
        let embedding = embedder.embed(&format!("{subject} {relation} {object}"));
        EvidenceTriple {
            subject,
            relation,
            object,
            confidence,
            embedding,
            source_digest,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ExtractionStatus {
    Extracted,
    Failed { reason: String },
}

/// What one extractor call produced for one document.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionOutcome {
    pub triples: Vec<EvidenceTriple>,
    /// Response items rejected for malformed fields or out-of-schema relations.
    pub dropped: usize,
    pub status: ExtractionStatus,
}

impl ExtractionOutcome {
    fn extracted(triples: Vec<EvidenceTriple>, dropped: usize) -> Self {
        ExtractionOutcome {
            triples,
            dropped,
            status: ExtractionStatus::Extracted,
        }
    }
}

pub trait Extractor: Send + Sync {
    fn extract(&self, doc: &Document) -> ExtractionOutcome;
}

/// Splits on `.`, `!` or `?` followed by whitespace or end of text.
pub fn split_sentences(raw: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = raw.char_indices().peekable();
    while let Some((i, ch)) = chars.next() {
        if matches!(ch, '.' | '!' | '?') {
            let at_boundary = chars.peek().is_none_or(|(_, next)| next.is_whitespace());
            if at_boundary {
                let end = i + ch.len_utf8();
                out.push(&raw[start..end]);
                start = end;
            }
        }
    }
    if start < raw.len() {
        out.push(&raw[start..]);
    }
    out.into_iter().filter(|s| !s.trim().is_empty()).collect()
}

const MOCK_PATTERNS: [(&str, &str, f64); 3] = [
    (" shows ", EXHIBITS_FEATURE, 0.9),
    (" is associated with ", ASSOCIATED_WITH, 0.8),
    (" indicates ", INDICATES, 0.85),
];

/// Pattern-based stand-in for an LLM extractor. Each sentence yields at most
/// one triple, from the first pattern (in fixed order) that appears in it with
/// non-empty text on both sides.
pub fn extract_mock(doc: &Document, schema: &RelationSchema, embedder: &dyn EmbeddingProvider) -> Vec<EvidenceTriple> {
    let mut out = Vec::new();
    for sentence in split_sentences(&doc.raw_text) {
        let padded = format!(" {} ", normalize_text(sentence));
        for (pattern, relation, confidence) in MOCK_PATTERNS {
            if !schema.contains(relation) {
                continue;
            }
            let Some(pos) = padded.find(pattern) else { continue };
            let subject = padded[..pos].trim();
            let object = padded[pos + pattern.len()..].trim();
            if subject.is_empty() || object.is_empty() {
                continue;
            }
            out.push(EvidenceTriple::embedded(
                subject.to_string(),
                relation.to_string(),
                object.to_string(),
                confidence,
                doc.digest,
                embedder,
            ));
            break;
        }
    }
    out
}

#[derive(Clone)]
pub struct MockExtractor {
    schema: RelationSchema,
    embedder: Arc<dyn EmbeddingProvider>,
}

impl MockExtractor {
    pub fn new(schema: RelationSchema, embedder: Arc<dyn EmbeddingProvider>) -> Self {
        MockExtractor { schema, embedder }
    }
}

impl Extractor for MockExtractor {
    fn extract(&self, doc: &Document) -> ExtractionOutcome {
        ExtractionOutcome::extracted(extract_mock(doc, &self.schema, self.embedder.as_ref()), 0)
    }
}

/// Wire request for a remote extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionRequest {
    pub text: String,
    pub relations: Vec<String>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("network failure: {0}")]
    Network(String),
    #[error("server returned HTTP {0}")]
    Status(u16),
}

/// Delivers one request and returns the raw response body. `prompt` is the
/// rendered prompt template for transports that talk to a chat model directly.
pub trait ExtractorTransport: Send + Sync {
    fn send(&self, request: &ExtractionRequest, prompt: &str) -> Result<String, TransportError>;
}

pub fn render_prompt(text: &str, schema: &RelationSchema) -> String {
    PROMPT_TEMPLATE
        .replace("{relations}", &schema.relations().join(", "))
        .replace("{text}", text)
}

#[derive(Debug, Error, PartialEq)]
pub enum ResponseError {
    #[error("response is not valid JSON: {0}")]
    NotJson(String),
    #[error("response has no `triples` array")]
    MissingTriples,
}

/// A parsed, schema-checked response item before embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseItem {
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub confidence: f64,
}

/// Parses `{"triples": [{"s","r","o","c"}, ...]}`. Items with a missing or
/// empty field, a confidence outside [0,1], or a relation outside `schema`
/// are dropped and counted.
pub fn parse_response(body: &str, schema: &RelationSchema) -> Result<(Vec<ResponseItem>, usize), ResponseError> {
    let value: serde_json::Value = serde_json::from_str(body).map_err(|e| ResponseError::NotJson(e.to_string()))?;
    let items = value
        .get("triples")
        .and_then(serde_json::Value::as_array)
        .ok_or(ResponseError::MissingTriples)?;
    let mut kept = Vec::new();
    let mut dropped = 0;
    for item in items {
        let text = |k: &str| {
            item.get(k)
                .and_then(serde_json::Value::as_str)
                .map(str::trim)
                .filter(|s| !s.is_empty())
        };
        let parsed = (|| {
            let subject = text("s")?;
            let relation = text("r")?;
            let object = text("o")?;
            let confidence = item.get("c")?.as_f64()?;
            if !(0.0..=1.0).contains(&confidence) || !schema.contains(relation) {
                return None;
            }
            if normalize_text(subject).is_empty() || normalize_text(object).is_empty() {
                return None;
            }
            Some(ResponseItem {
                subject: subject.to_string(),
                relation: relation.to_string(),
                object: object.to_string(),
                confidence,
            })
        })();
        match parsed {
            Some(p) => kept.push(p),
            None => dropped += 1,
        }
    }
    Ok((kept, dropped))
}

/// Extractor backed by a remote service. Transport failures and unparseable
/// responses are retried up to `max_attempts` times in total; after that the
/// document is reported as failed and the pipeline moves on.
pub struct RemoteExtractor<T> {
    transport: T,
    schema: RelationSchema,
    embedder: Arc<dyn EmbeddingProvider>,
    max_attempts: usize,
}

impl<T: ExtractorTransport> RemoteExtractor<T> {
    pub fn new(transport: T, schema: RelationSchema, embedder: Arc<dyn EmbeddingProvider>) -> Self {
        RemoteExtractor {
            transport,
            schema,
            embedder,
            max_attempts: 3,
        }
    }

    pub fn with_max_attempts(mut self, attempts: usize) -> Self {
        self.max_attempts = attempts.max(1);
        self
    }

    pub fn extract_remote(&self, doc: &Document) -> ExtractionOutcome {
        let request = ExtractionRequest {
            text: doc.raw_text.clone(),
            relations: self.schema.relations().to_vec(),
        };
        let prompt = render_prompt(&doc.raw_text, &self.schema);
        let mut last_error = String::new();
        for _ in 0..self.max_attempts {
            let body = match self.transport.send(&request, &prompt) {
                Ok(body) => body,
                Err(e) => {
                    last_error = e.to_string();
                    continue;
                }
            };
            match parse_response(&body, &self.schema) {
                Ok((items, dropped)) => {
                    let triples = items
                        .into_iter()
                        .map(|it| {
                            EvidenceTriple::embedded(
                                it.subject,
                                it.relation,
                                it.object,
                                it.confidence,
                                doc.digest,
                                self.embedder.as_ref(),
                            )
                        })
                        .collect();
                    return ExtractionOutcome::extracted(triples, dropped);
                }
                Err(e) => last_error = e.to_string(),
            }
        }
        ExtractionOutcome {
            triples: Vec::new(),
            dropped: 0,
            status: ExtractionStatus::Failed {
                reason: format!("gave up after {} attempts: {last_error}", self.max_attempts),
            },
        }
    }
}

impl<T: ExtractorTransport> Extractor for RemoteExtractor<T> {
    fn extract(&self, doc: &Document) -> ExtractionOutcome {
        self.extract_remote(doc)
    }
}

/// Keeps triples with `confidence >= tau`, preserving order.
pub fn filter_by_confidence(mut triples: Vec<EvidenceTriple>, tau: f64) -> Vec<EvidenceTriple> {
    debug_assert!(tau > 0.0 && tau < 1.0, "tau must lie in (0,1)");
    triples.retain(|t| t.confidence >= tau);
    triples
}
