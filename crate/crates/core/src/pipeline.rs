//! End-to-end orchestration: corpus -> dedup -> extract -> filter -> graph,
//! the optional query-expansion loop, activation reports, and graph stats.
//!
//! Extraction runs in parallel, but results are merged in ascending source
//! digest order, so identical inputs always yield byte-identical snapshots.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activation::{self, mask_indices, ActivationConfig, ActivationError, ActivationMode, InputSequence};
use crate::config::{ConfigError, PipelineConfig};
use crate::corpus::{CorpusError, Document, HashMemory, QueryPlanner};
use crate::embedding::{embed_text, EmbeddingError, EmbeddingProvider, HashEmbedder, MemoryBank};
use crate::extraction::{filter_by_confidence, Extractor, ExtractionStatus, MockExtractor, RelationSchema};
use crate::graphstore::{EdgeKey, EntityType, GraphError, KnowledgeGraph, SynonymTable};
use crate::literature::{LiteratureSource, SourceError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Activation(#[from] ActivationError),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error("empty LTM: no triples survived extraction and filtering")]
    EmptyLtm,
    #[error("invalid activation request: {0}")]
    Request(String),
}

impl PipelineError {
    /// Process exit code: 2 config, 3 data, 4 network, 5 internal invariant.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Source(SourceError::Transport(_)) => 4,
            PipelineError::Graph(GraphError::InvalidFusionParams { .. }) => 2,
            PipelineError::Activation(ActivationError::InvalidConfig(_)) => 2,
            PipelineError::Graph(GraphError::DimensionMismatch { .. }) => 5,
            _ => 3,
        }
    }

    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config_error",
            PipelineError::Corpus(CorpusError::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => "file_not_found",
            PipelineError::Corpus(_) => "corpus_error",
            PipelineError::Graph(GraphError::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => "file_not_found",
            PipelineError::Graph(GraphError::VersionMismatch { .. }) => "snapshot_version_mismatch",
            PipelineError::Graph(GraphError::Corrupt(_)) => "snapshot_corrupt",
            PipelineError::Graph(_) => "graph_error",
            PipelineError::Embedding(EmbeddingError::EmptyLtm) | PipelineError::EmptyLtm => "empty_ltm",
            PipelineError::Embedding(_) => "embedding_error",
            PipelineError::Activation(ActivationError::FullyMasked) => "memory_fully_masked",
            PipelineError::Activation(ActivationError::NoActivation) => "no_activation",
            PipelineError::Activation(_) => "activation_error",
            PipelineError::Source(SourceError::Transport(_)) => "network_error",
            PipelineError::Source(_) => "source_error",
            PipelineError::Request(_) => "bad_request",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub docs_seen: usize,
    pub deduped: usize,
    pub docs_retained: usize,
    pub triples_extracted: usize,
    pub triples_retained: usize,
    pub malformed_items: usize,
    pub extraction_failed: usize,
    pub queries_issued: usize,
    pub entities: usize,
    pub edges: usize,
    /// Retained triples per relation.
    pub retained_by_relation: BTreeMap<String, usize>,
    /// Retained triples per confidence value (formatted shortest decimal).
    pub retained_by_confidence: BTreeMap<String, usize>,
}

/// Everything needed to turn documents into graph evidence.
pub struct Pipeline {
    config: PipelineConfig,
    synonyms: SynonymTable,
    lexicon: BTreeSet<String>,
    embedder: Arc<dyn EmbeddingProvider>,
    extractor: Arc<dyn Extractor>,
}

impl Pipeline {
    pub fn new(
        config: PipelineConfig,
        synonyms: SynonymTable,
        lexicon: BTreeSet<String>,
        embedder: Arc<dyn EmbeddingProvider>,
        extractor: Arc<dyn Extractor>,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        if embedder.dim() != config.dim {
            return Err(ConfigError::Invalid {
                key: "dim",
                message: format!("embedding provider has dimension {}", embedder.dim()),
            }
            .into());
        }
        Ok(Pipeline {
            config,
            synonyms,
            lexicon,
            embedder,
            extractor,
        })
    }

    /// Mock extractor and built-in embeddings with the default schema.
    pub fn with_mock(config: PipelineConfig, synonyms: SynonymTable, lexicon: BTreeSet<String>) -> Result<Self, PipelineError> {
        let embedder: Arc<dyn EmbeddingProvider> = Arc::new(HashEmbedder::new(config.dim)?);
        let extractor = Arc::new(MockExtractor::new(RelationSchema::default(), embedder.clone()));
        Self::new(config, synonyms, lexicon, embedder, extractor)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn embedder(&self) -> &Arc<dyn EmbeddingProvider> {
        &self.embedder
    }

    pub fn new_graph(&self) -> KnowledgeGraph {
        KnowledgeGraph::new(self.config.fusion_params(), self.lexicon.clone())
    }

    /// Runs one batch through dedup, extraction, filtering, and upsert.
    /// Returns the canonical ids of entities this batch created.
    pub fn ingest(
        &self,
        graph: &mut KnowledgeGraph,
        memory: &mut HashMemory,
        docs: Vec<Document>,
        report: &mut BuildReport,
    ) -> Result<BTreeSet<String>, PipelineError> {
        report.docs_seen += docs.len();
        let incoming = docs.len();
        let retained = memory.dedup_batch(docs);
        report.deduped += incoming - retained.len();
        report.docs_retained += retained.len();

        let mut outcomes: Vec<_> = retained
            .par_iter()
            .map(|doc| (doc.digest, self.extractor.extract(doc)))
            .collect();
        outcomes.sort_by_key(|o| o.0);

        let before: BTreeSet<String> = graph.entities().map(|e| e.canonical_id.clone()).collect();
        for (_, outcome) in outcomes {
            report.malformed_items += outcome.dropped;
            if let ExtractionStatus::Failed { .. } = outcome.status {
                report.extraction_failed += 1;
            }
            report.triples_extracted += outcome.triples.len();
            let kept = filter_by_confidence(outcome.triples, self.config.tau);
            report.triples_retained += kept.len();
            for triple in &kept {
                *report.retained_by_relation.entry(triple.relation.clone()).or_default() += 1;
                *report.retained_by_confidence.entry(triple.confidence.to_string()).or_default() += 1;
                graph.upsert_evidence(triple, &self.synonyms)?;
            }
        }
        report.entities = graph.entity_count();
        report.edges = graph.edge_count();
        Ok(graph
            .entities()
            .map(|e| e.canonical_id.clone())
            .filter(|id| !before.contains(id))
            .collect())
    }

    pub fn build_from_documents(&self, docs: Vec<Document>) -> Result<(KnowledgeGraph, BuildReport), PipelineError> {
        let mut graph = self.new_graph();
        let mut memory = HashMemory::new();
        let mut report = BuildReport::default();
        self.ingest(&mut graph, &mut memory, docs, &mut report)?;
        if graph.is_empty() {
            return Err(PipelineError::EmptyLtm);
        }
        Ok((graph, report))
    }

    /// Iterative retrieval: the seed query, then breadth-first expansion over
    /// entities each round introduced, bounded by `max_depth` and
    /// `query_budget`.
    pub fn build_from_search(
        &self,
        seed: &str,
        source: &dyn LiteratureSource,
    ) -> Result<(KnowledgeGraph, BuildReport), PipelineError> {
        let mut graph = self.new_graph();
        let mut memory = HashMemory::new();
        let mut report = BuildReport::default();
        let mut planner = QueryPlanner::new(self.config.max_depth, self.config.query_budget);
        let mut queue: VecDeque<_> = planner.seed(seed).into_iter().collect();
        while let Some(query) = queue.pop_front() {
            let docs = source.search(&query)?;
            let fresh = self.ingest(&mut graph, &mut memory, docs, &mut report)?;
            queue.extend(planner.expand_queries(&graph, &fresh, query.depth));
        }
        report.queries_issued = planner.issued().len();
        if graph.is_empty() {
            return Err(PipelineError::EmptyLtm);
        }
        Ok((graph, report))
    }
}

/// Activation input: query text (embedded as one token) or a token matrix,
/// plus optional bank rows to mask out of dynamic activation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivationRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mask: Vec<usize>,
}

impl ActivationRequest {
    pub fn text(text: impl Into<String>) -> Self {
        ActivationRequest {
            text: Some(text.into()),
            ..Default::default()
        }
    }

    fn sequence(&self, dim: usize) -> Result<InputSequence, PipelineError> {
        match (&self.text, &self.tokens) {
            (Some(text), None) => Ok(InputSequence::from_rows(&[embed_text(text, dim)])?),
            (None, Some(rows)) => Ok(InputSequence::from_rows(rows)?),
            _ => Err(PipelineError::Request("exactly one of `text` or `tokens` is required".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub index: usize,
    pub origin: ActivationMode,
    pub score: f64,
    pub relative: f64,
    pub edge: EdgeKey,
    pub triple: String,
    pub fused_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationReport {
    pub mode: ActivationMode,
    pub built_from: String,
    pub bank_rows: usize,
    pub dim: usize,
    pub degenerate_query: bool,
    pub entries: Vec<ReportEntry>,
    #[serde(rename = "static")]
    pub static_selection: Selection,
    #[serde(rename = "dynamic")]
    pub dynamic_selection: Selection,
}

pub fn run_activation(
    graph: &KnowledgeGraph,
    bank: &MemoryBank,
    request: &ActivationRequest,
    base: &ActivationConfig,
) -> Result<ActivationReport, PipelineError> {
    let x = request.sequence(bank.dim())?;
    let mut config = base.clone();
    if !request.mask.is_empty() {
        config.mask = Some(mask_indices(bank.len(), request.mask.iter().copied()));
    }
    let act = activation::activate(bank, &x, &config)?;
    let fused = &act.fused;
    let entries = (0..fused.len())
        .map(|k| {
            let edge = fused.provenance[k].clone();
            let fused_weight = graph
                .edge(&edge)
                .map(|e| e.fused_weight)
                .ok_or_else(|| PipelineError::Request(format!("bank row {edge:?} is not in the graph")))?;
            Ok(ReportEntry {
                index: fused.indices[k],
                origin: fused.origins[k],
                score: fused.scores[k],
                relative: fused.relative[k],
                triple: format!("({}, {}, {})", edge.subject, edge.relation, edge.object),
                edge,
                fused_weight,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok(ActivationReport {
        mode: fused.mode,
        built_from: bank.built_from().to_string(),
        bank_rows: bank.len(),
        dim: bank.dim(),
        degenerate_query: act.static_result.degenerate,
        entries,
        static_selection: Selection {
            indices: act.static_result.indices.clone(),
            scores: act.static_result.scores.clone(),
        },
        dynamic_selection: Selection {
            indices: act.dynamic_result.indices.clone(),
            scores: act.dynamic_result.scores.clone(),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub entities: usize,
    pub edges: usize,
    pub evidence: usize,
    pub diseases: usize,
    pub features: usize,
    pub relations: BTreeMap<String, usize>,
    /// Ten equal-width bins over [0,1]; the last bin is closed.
    pub weight_histogram: Vec<HistogramBin>,
}

pub fn graph_stats(graph: &KnowledgeGraph) -> GraphStats {
    const BINS: usize = 10;
    let mut histogram: Vec<HistogramBin> = (0..BINS)
        .map(|i| HistogramBin {
            lo: i as f64 / BINS as f64,
            hi: (i + 1) as f64 / BINS as f64,
            count: 0,
        })
        .collect();
    let mut relations = BTreeMap::new();
    for edge in graph.edges() {
        let bin = ((edge.fused_weight * BINS as f64).floor() as usize).min(BINS - 1);
        histogram[bin].count += 1;
        *relations.entry(edge.key.relation.clone()).or_default() += 1;
    }
    let count_type = |t: EntityType| graph.entities().filter(|e| e.entity_type == t).count();
    GraphStats {
        entities: graph.entity_count(),
        edges: graph.edge_count(),
        evidence: graph.evidence_count(),
        diseases: count_type(EntityType::Disease),
        features: count_type(EntityType::Feature),
        relations,
        weight_histogram: histogram,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::{ExtractionOutcome, EXHIBITS_FEATURE, INDICATES};

    fn corpus() -> Vec<Document> {
        vec![
            Document::new("1", "Glioblastoma shows necrosis. Necrosis indicates high grade."),
            Document::new("2", "GBM shows necrosis."),
            Document::new("3", "Melanoma is associated with UV exposure."),
            Document::new("4", "gbm   SHOWS necrosis!"),
        ]
    }

    fn pipeline(config: PipelineConfig) -> Pipeline {
        let mut synonyms = SynonymTable::default();
        synonyms.insert("GBM", "glioblastoma");
        let lexicon: BTreeSet<String> = ["glioblastoma".to_string(), "melanoma".to_string()].into();
        Pipeline::with_mock(config, synonyms, lexicon).unwrap()
    }

    #[test]
    fn build_counts_and_fuses() {
        let p = pipeline(PipelineConfig {
            dim: 64,
            ..Default::default()
        });
        let (graph, report) = p.build_from_documents(corpus()).unwrap();
        assert_eq!(report.docs_seen, 4);
        assert_eq!(report.deduped, 1);
        assert_eq!(report.triples_extracted, 4);
        assert_eq!(report.triples_retained, 4);
        assert_eq!(graph.edge_count(), 3);
        let key = EdgeKey::new("glioblastoma", EXHIBITS_FEATURE, "necrosis");
        let edge = graph.edge(&key).unwrap();
        assert_eq!(edge.evidence.len(), 2);
        assert!(edge.fused_weight > 0.9 * 0.9);
        assert_eq!(graph.disease_nodes().len(), 2);
    }

    #[test]
    fn tau_boundary_is_inclusive() {
        let at = pipeline(PipelineConfig {
            tau: 0.85,
            dim: 64,
            ..Default::default()
        });
        let (_, report) = at.build_from_documents(corpus()).unwrap();
        assert_eq!(report.retained_by_relation.get(INDICATES), Some(&1));

        let above = pipeline(PipelineConfig {
            tau: 0.86,
            dim: 64,
            ..Default::default()
        });
        let (_, report) = above.build_from_documents(corpus()).unwrap();
        assert_eq!(report.retained_by_relation.get(INDICATES), None);
        assert_eq!(report.retained_by_confidence.get("0.8"), None);
        assert_eq!(report.retained_by_confidence.get("0.9"), Some(&2));
    }

    #[test]
    fn empty_corpus_is_an_empty_ltm() {
        let p = pipeline(PipelineConfig::default());
        assert!(matches!(p.build_from_documents(Vec::new()), Err(PipelineError::EmptyLtm)));
        let err = p
            .build_from_documents(vec![Document::new("1", "nothing relational here")])
            .unwrap_err();
        assert_eq!(err.code(), "empty_ltm");
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn builds_are_byte_identical() {
        let p = pipeline(PipelineConfig::default());
        let (a, _) = p.build_from_documents(corpus()).unwrap();
        let mut reversed = corpus();
        reversed.reverse();
        let (b, _) = p.build_from_documents(corpus()).unwrap();
        assert_eq!(a.to_snapshot_bytes(), b.to_snapshot_bytes());
        // same unique documents in another order merge identically
        let (c, _) = p.build_from_documents(reversed).unwrap();
        assert_eq!(a.edge_count(), c.edge_count());
    }

    struct Failing;

    impl Extractor for Failing {
        fn extract(&self, _doc: &Document) -> ExtractionOutcome {
            ExtractionOutcome {
                triples: Vec::new(),
                dropped: 2,
                status: ExtractionStatus::Failed { reason: "down".into() },
            }
        }
    }

    #[test]
    fn failed_extractions_are_counted() {
        let config = PipelineConfig {
            dim: 8,
            ..Default::default()
        };
        let embedder: Arc<dyn EmbeddingProvider> = Arc::new(HashEmbedder::new(8).unwrap());
        let p = Pipeline::new(config, SynonymTable::default(), BTreeSet::new(), embedder, Arc::new(Failing)).unwrap();
        let mut graph = p.new_graph();
        let mut memory = HashMemory::new();
        let mut report = BuildReport::default();
        p.ingest(&mut graph, &mut memory, corpus(), &mut report).unwrap();
        assert_eq!(report.extraction_failed, 3);
        assert_eq!(report.malformed_items, 6);
    }

    #[test]
    fn search_loop_expands_from_new_entities() {
        let source = crate::literature::LocalCorpus::new(vec![
            Document::new("1", "Glioblastoma shows necrosis."),
            Document::new("2", "Necrosis indicates poor prognosis."),
            Document::new("3", "Poor prognosis is associated with age."),
            Document::new("4", "Age is associated with frailty."),
        ]);
        let p = pipeline(PipelineConfig {
            dim: 32,
            max_depth: 2,
            ..Default::default()
        });
        let (graph, report) = p.build_from_search("glioblastoma", &source).unwrap();
        // depth 0: glioblastoma -> doc 1; depth 1: necrosis (+glioblastoma already issued) -> doc 2
        // depth 2: poor prognosis -> doc 3; "age" would be depth 3 and is never issued
        assert_eq!(graph.edge_count(), 3);
        assert!(graph.entity("frailty").is_none());
        assert_eq!(report.queries_issued, 3);
        assert_eq!(report.deduped, 2);
    }

    #[test]
    fn search_loop_honours_budget() {
        let source = crate::literature::LocalCorpus::new(vec![
            Document::new("1", "Glioblastoma shows necrosis."),
            Document::new("2", "Necrosis indicates poor prognosis."),
        ]);
        let p = pipeline(PipelineConfig {
            dim: 32,
            max_depth: 5,
            query_budget: 1,
            ..Default::default()
        });
        let (graph, report) = p.build_from_search("glioblastoma", &source).unwrap();
        assert_eq!(report.queries_issued, 1);
        assert_eq!(graph.edge_count(), 1);
    }

    #[test]
    fn activation_report_names_triples() {
        let p = pipeline(PipelineConfig::default());
        let (graph, _) = p.build_from_documents(corpus()).unwrap();
        let bank = MemoryBank::build(&graph, p.embedder().as_ref()).unwrap();
        let config = p.config().activation_config();
        let report = run_activation(&graph, &bank, &ActivationRequest::text("necrosis"), &config).unwrap();
        assert_eq!(report.mode, ActivationMode::Fused);
        assert_eq!(report.bank_rows, 3);
        assert!(report.entries.len() <= 3);
        assert!(report.entries[0].triple.contains("necrosis"));

        let masked = ActivationRequest {
            mask: vec![0, 1, 2],
            ..ActivationRequest::text("necrosis")
        };
        let err = run_activation(&graph, &bank, &masked, &config).unwrap_err();
        assert_eq!(err.code(), "memory_fully_masked");

        let neither = ActivationRequest::default();
        assert!(matches!(
            run_activation(&graph, &bank, &neither, &config),
            Err(PipelineError::Request(_))
        ));
    }

    #[test]
    fn stats_histogram_covers_every_edge() {
        let p = pipeline(PipelineConfig::default());
        let (graph, _) = p.build_from_documents(corpus()).unwrap();
        let stats = graph_stats(&graph);
        assert_eq!(stats.weight_histogram.iter().map(|b| b.count).sum::<usize>(), stats.edges);
        assert_eq!(stats.diseases, 2);
        assert_eq!(stats.evidence, 4);
        assert_eq!(serde_json::to_vec(&stats).unwrap(), serde_json::to_vec(&graph_stats(&graph)).unwrap());
    }
}
