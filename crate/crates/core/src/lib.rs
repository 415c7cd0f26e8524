//! Literature-grounded knowledge-graph memory.
//!
//! Abstracts are normalized, deduplicated by content digest, and mined for
//! `(subject, relation, object)` evidence. Evidence for the same canonical
//! triple is fused into a single weighted edge. The resulting graph is the
//! long-term memory; its edges are embedded into a memory bank from which a
//! small, relevance-scaled working-memory block is activated for each input
//! sequence and prepended to it.

pub mod activation;
pub mod config;
pub mod corpus;
pub mod embedding;
pub mod eval;
pub mod extraction;
pub mod graphstore;
pub mod literature;
pub mod pipeline;

pub use activation::{
    activate, adaptive_select, assemble_augmented, compute_query, dynamic_activate, reference_attention,
    reference_attention_backward, static_activate, Activation, ActivationConfig, ActivationError, ActivationMode,
    ActivationResult, InputSequence,
};
pub use config::{ConfigError, PipelineConfig};
pub use corpus::{hash_document, normalize_text, Digest, Document, HashMemory, QueryPlanner, SearchQuery};
pub use embedding::{centroid, embed_text, EmbeddingProvider, HashEmbedder, MemoryBank};
pub use eval::{run_eval, EvalRow, EvalSpec};
pub use extraction::{
    extract_mock, filter_by_confidence, EvidenceTriple, ExtractionOutcome, Extractor, MockExtractor, RelationSchema,
    RemoteExtractor,
};
pub use graphstore::{
    canonicalize_entity, fuse_edge_weight, Edge, EdgeKey, Entity, EntityType, FusionParams, GraphError, KnowledgeGraph,
    SynonymTable,
};
pub use pipeline::{run_activation, ActivationReport, ActivationRequest, BuildReport, Pipeline, PipelineError};
