//! The long-term memory graph: a weighted directed multigraph over canonical
//! entities, with per-edge evidence lists fused by an embedding-penalized
//! noisy-or, a surface-form canonicalization map, and a feature-inverted index.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{normalize_text, Digest};
use crate::embedding::centroid;
use crate::extraction::EvidenceTriple;

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("entity surface form {0:?} is empty after normalization")]
    EmptyEntity(String),
    #[error("edge fusion requires at least one evidence item")]
    EmptyEvidence,
    #[error("evidence embeddings disagree in dimension: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid fusion parameters: alpha must be in (0,1] and F > 0 (alpha={alpha}, F={penalty})")]
    InvalidFusionParams { alpha: f64, penalty: f64 },
    #[error("confidence {0} outside [0,1]")]
    InvalidConfidence(f64),
    #[error("snapshot format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u64, expected: u32 },
    #[error("corrupt snapshot: {0}")]
    Corrupt(String),
    #[error("snapshot I/O failed: {0}")]
    Io(#[from] std::io::Error),
}

/// Fusion coefficients: global scale `alpha` and embedding-consistency
/// penalty `penalty` (F).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub alpha: f64,
    pub penalty: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        FusionParams { alpha: 0.9, penalty: 1.0 }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<(), GraphError> {
        let ok = self.alpha > 0.0 && self.alpha <= 1.0 && self.penalty > 0.0 && self.penalty.is_finite();
        if ok {
            Ok(())
        } else {
            Err(GraphError::InvalidFusionParams {
                alpha: self.alpha,
                penalty: self.penalty,
            })
        }
    }
}

/// Combines independent evidence into one edge weight:
///
/// `w = 1 - prod_k (1 - alpha * c_k * exp(-F * |z_k - z_mean|^2))`
///
/// where `z_mean` is the plain arithmetic mean of all `z_k`. A single
/// evidence item returns `alpha * c` exactly.
pub fn fuse_edge_weight<Z: AsRef<[f64]>>(evidence: &[(f64, Z)], params: FusionParams) -> Result<f64, GraphError> {
    params.validate()?;
    let zs: Vec<&[f64]> = evidence.iter().map(|(_, z)| z.as_ref()).collect();
    let mean = centroid(&zs).map_err(|e| match e {
        crate::embedding::EmbeddingError::DimensionMismatch { expected, found } => {
            GraphError::DimensionMismatch { expected, found }
        }
        _ => GraphError::EmptyEvidence,
    })?;
    for (c, _) in evidence {
        if !(0.0..=1.0).contains(c) {
            return Err(GraphError::InvalidConfidence(*c));
        }
    }
    if let [(c, _)] = evidence {
        // z equals its own mean, so the penalty is exp(0) = 1
        return Ok(params.alpha * c);
    }
    let survival: f64 = evidence
        .iter()
        .map(|(c, z)| 1.0 - effective_contribution(*c, z.as_ref(), &mean, params))
        .product();
    Ok(1.0 - survival)
}

/// One evidence item's attenuated probability `alpha * c * exp(-F |z - z_mean|^2)`.
pub fn effective_contribution(confidence: f64, z: &[f64], mean: &[f64], params: FusionParams) -> f64 {
    let dist2: f64 = z.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
    params.alpha * confidence * (-params.penalty * dist2).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityType {
    Disease,
    Feature,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub canonical_id: String,
    pub surface_forms: BTreeSet<String>,
    pub entity_type: EntityType,
}

/// Canonical `(subject, relation, object)`; ordering is lexicographic in that
/// field order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeKey {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

impl EdgeKey {
    pub fn new(subject: impl Into<String>, relation: impl Into<String>, object: impl Into<String>) -> Self {
        EdgeKey {
            subject: subject.into(),
            relation: relation.into(),
            object: object.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub confidence: f64,
    pub embedding: Vec<f64>,
    pub source_digest: Digest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    #[serde(flatten)]
    pub key: EdgeKey,
    pub fused_weight: f64,
    pub evidence: Vec<Evidence>,
}

impl Edge {
    pub fn recompute_weight(&self, params: FusionParams) -> Result<f64, GraphError> {
        let pairs: Vec<(f64, &[f64])> = self
            .evidence
            .iter()
            .map(|e| (e.confidence, e.embedding.as_slice()))
            .collect();
        fuse_edge_weight(&pairs, params)
    }
}

/// Normalized surface form -> canonical name. Keys and values are normalized
/// on insertion.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "BTreeMap<String, String>", into = "BTreeMap<String, String>")]
pub struct SynonymTable(BTreeMap<String, String>);

impl SynonymTable {
    pub fn insert(&mut self, surface: &str, canonical: &str) {
        self.0.insert(normalize_text(surface), normalize_text(canonical));
    }

    pub fn get(&self, normalized: &str) -> Option<&str> {
        self.0.get(normalized).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<BTreeMap<String, String>> for SynonymTable {
    fn from(map: BTreeMap<String, String>) -> Self {
        let mut table = SynonymTable::default();
        for (k, v) in &map {
            table.insert(k, v);
        }
        table
    }
}

impl From<SynonymTable> for BTreeMap<String, String> {
    fn from(table: SynonymTable) -> Self {
        table.0
    }
}

/// Normalizes a surface form and maps it through the synonym table.
pub fn canonicalize_entity(surface: &str, synonyms: &SynonymTable) -> Result<String, GraphError> {
    let normalized = normalize_text(surface);
    if normalized.is_empty() {
        return Err(GraphError::EmptyEntity(surface.to_string()));
    }
    Ok(match synonyms.get(&normalized) {
        Some(canonical) if !canonical.is_empty() => canonical.to_string(),
        _ => normalized,
    })
}

/// Result of a feature-index lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexLookup<'g> {
    pub edges: Vec<&'g Edge>,
    /// `false` when the id is not an entity of the graph.
    pub known: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    entities: BTreeMap<String, Entity>,
    edges: BTreeMap<EdgeKey, Edge>,
    phi: BTreeMap<String, String>,
    psi: BTreeMap<String, BTreeSet<EdgeKey>>,
    fusion: FusionParams,
    disease_lexicon: BTreeSet<String>,
}

impl KnowledgeGraph {
    /// `disease_lexicon` holds canonical disease names; they are normalized.
    pub fn new(fusion: FusionParams, disease_lexicon: BTreeSet<String>) -> Self {
        KnowledgeGraph {
            entities: BTreeMap::new(),
            edges: BTreeMap::new(),
            phi: BTreeMap::new(),
            psi: BTreeMap::new(),
            fusion,
            disease_lexicon: disease_lexicon.iter().map(|d| normalize_text(d)).collect(),
        }
    }

    pub fn fusion_params(&self) -> FusionParams {
        self.fusion
    }

    pub fn disease_lexicon(&self) -> &BTreeSet<String> {
        &self.disease_lexicon
    }

    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.get(id)
    }

    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.entities.values()
    }

    pub fn edge(&self, key: &EdgeKey) -> Option<&Edge> {
        self.edges.get(key)
    }

    /// Edges in ascending key order.
    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.values()
    }

    pub fn phi(&self) -> &BTreeMap<String, String> {
        &self.phi
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn evidence_count(&self) -> usize {
        self.edges.values().map(|e| e.evidence.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    fn entity_type_of(&self, canonical: &str) -> EntityType {
        if self.disease_lexicon.contains(canonical) {
            EntityType::Disease
        } else {
            EntityType::Feature
        }
    }

    fn register(&mut self, surface: &str, canonical: &str) {
        let entity_type = self.entity_type_of(canonical);
        let entity = self.entities.entry(canonical.to_string()).or_insert_with(|| Entity {
            canonical_id: canonical.to_string(),
            surface_forms: BTreeSet::new(),
            entity_type,
        });
        entity.surface_forms.insert(surface.to_string());
        self.phi.insert(surface.to_string(), canonical.to_string());
    }

    /// Injects one filtered triple. Canonicalization and fusion both run before
    /// anything is written, so a failed upsert leaves the graph unchanged.
    pub fn upsert_evidence(&mut self, triple: &EvidenceTriple, synonyms: &SynonymTable) -> Result<EdgeKey, GraphError> {
        let subject = canonicalize_entity(&triple.subject, synonyms)?;
        let object = canonicalize_entity(&triple.object, synonyms)?;
        let key = EdgeKey::new(subject.clone(), triple.relation.clone(), object.clone());

        let evidence = Evidence {
            confidence: triple.confidence,
            embedding: triple.embedding.clone(),
            source_digest: triple.source_digest,
        };
        let mut edge = self.edges.get(&key).cloned().unwrap_or_else(|| Edge {
            key: key.clone(),
            fused_weight: 0.0,
            evidence: Vec::new(),
        });
        edge.evidence.push(evidence);
        edge.fused_weight = edge.recompute_weight(self.fusion)?;

        self.register(&triple.subject, &subject);
        self.register(&triple.object, &object);
        self.edges.insert(key.clone(), edge);
        self.psi.entry(subject).or_default().insert(key.clone());
        self.psi.entry(object).or_default().insert(key.clone());
        Ok(key)
    }

    /// Edges having `f` as subject or object.
    pub fn feature_index_lookup(&self, f: &str) -> IndexLookup<'_> {
        match self.psi.get(f) {
            Some(keys) => IndexLookup {
                edges: keys.iter().map(|k| &self.edges[k]).collect(),
                known: true,
            },
            None => IndexLookup {
                edges: Vec::new(),
                known: self.entities.contains_key(f),
            },
        }
    }

    pub fn disease_nodes(&self) -> BTreeSet<String> {
        self.entities
            .values()
            .filter(|e| e.entity_type == EntityType::Disease)
            .map(|e| e.canonical_id.clone())
            .collect()
    }

    fn rebuild_psi(&mut self) {
        self.psi.clear();
        for key in self.edges.keys() {
            self.psi.entry(key.subject.clone()).or_default().insert(key.clone());
            self.psi.entry(key.object.clone()).or_default().insert(key.clone());
        }
    }

    fn to_snapshot(&self) -> Snapshot {
        Snapshot {
            version: SNAPSHOT_VERSION,
            fusion_params: self.fusion,
            entities: self.entities.values().cloned().collect(),
            edges: self.edges.values().cloned().collect(),
            phi: self.phi.clone(),
            disease_lexicon: self.disease_lexicon.iter().cloned().collect(),
        }
    }

    pub fn to_snapshot_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(&self.to_snapshot()).expect("snapshot serializes");
        bytes.push(b'\n');
        bytes
    }

    /// `v<format>:<sha256 of the snapshot bytes>`; identifies the graph a bank
    /// was built from.
    pub fn version_tag(&self) -> String {
        let digest = Digest::of_bytes(&self.to_snapshot_bytes());
        format!("v{SNAPSHOT_VERSION}:{digest}")
    }

    pub fn save_snapshot<W: Write>(&self, mut w: W) -> Result<(), GraphError> {
        w.write_all(&self.to_snapshot_bytes())?;
        Ok(())
    }

    pub fn load_snapshot<R: Read>(mut r: R) -> Result<Self, GraphError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_snapshot_bytes(&bytes)
    }

    pub fn from_snapshot_bytes(bytes: &[u8]) -> Result<Self, GraphError> {
        let value: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| GraphError::Corrupt(e.to_string()))?;
        let version = value
            .get("version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| GraphError::Corrupt("missing or non-integer `version`".into()))?;
        if version != u64::from(SNAPSHOT_VERSION) {
            return Err(GraphError::VersionMismatch {
                found: version,
                expected: SNAPSHOT_VERSION,
            });
        }
        let snapshot: Snapshot = serde_json::from_value(value).map_err(|e| GraphError::Corrupt(e.to_string()))?;
        snapshot.into_graph()
    }

    /// Checks every structural invariant; used after loading.
    pub fn validate(&self) -> Result<(), GraphError> {
        self.fusion.validate()?;
        for (id, entity) in &self.entities {
            if id != &entity.canonical_id {
                return Err(GraphError::Corrupt(format!("entity key {id:?} != canonical id")));
            }
        }
        for (key, edge) in &self.edges {
            if key != &edge.key {
                return Err(GraphError::Corrupt(format!("edge key mismatch for {key:?}")));
            }
            if !self.entities.contains_key(&key.subject) || !self.entities.contains_key(&key.object) {
                return Err(GraphError::Corrupt(format!("edge {key:?} references an unknown entity")));
            }
            let recomputed = edge.recompute_weight(self.fusion)?;
            if (recomputed - edge.fused_weight).abs() > 1e-12 {
                return Err(GraphError::Corrupt(format!(
                    "edge {key:?} weight {} does not match its evidence ({recomputed})",
                    edge.fused_weight
                )));
            }
        }
        for (surface, canonical) in &self.phi {
            if !self.entities.contains_key(canonical) {
                return Err(GraphError::Corrupt(format!("phi maps {surface:?} to unknown {canonical:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Snapshot {
    version: u32,
    fusion_params: FusionParams,
    entities: Vec<Entity>,
    edges: Vec<Edge>,
    phi: BTreeMap<String, String>,
    disease_lexicon: Vec<String>,
}

impl Snapshot {
    fn into_graph(self) -> Result<KnowledgeGraph, GraphError> {
        let mut graph = KnowledgeGraph {
            entities: BTreeMap::new(),
            edges: BTreeMap::new(),
            phi: self.phi,
            psi: BTreeMap::new(),
            fusion: self.fusion_params,
            disease_lexicon: self.disease_lexicon.into_iter().collect(),
        };
        for entity in self.entities {
            if graph.entities.insert(entity.canonical_id.clone(), entity).is_some() {
                return Err(GraphError::Corrupt("duplicate entity".into()));
            }
        }
        for edge in self.edges {
            if edge.evidence.is_empty() {
                return Err(GraphError::Corrupt(format!("edge {:?} has no evidence", edge.key)));
            }
            if graph.edges.insert(edge.key.clone(), edge).is_some() {
                return Err(GraphError::Corrupt("duplicate edge".into()));
            }
        }
        graph.rebuild_psi();
        graph.validate()?;
        Ok(graph)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::hash_document;
    use proptest::prelude::*;

    fn triple(s: &str, r: &str, o: &str, c: f64, z: Vec<f64>) -> EvidenceTriple {
        EvidenceTriple {
            subject: s.into(),
            relation: r.into(),
            object: o.into(),
            confidence: c,
            embedding: z,
            source_digest: hash_document(&format!("{s}{r}{o}{c}")),
        }
    }

    fn one() -> FusionParams {
        FusionParams { alpha: 1.0, penalty: 1.0 }
    }

    #[test]
    fn canonicalization_examples() {
        let mut synonyms = SynonymTable::default();
        synonyms.insert("GBM", "glioblastoma");
        assert_eq!(canonicalize_entity("GBM", &synonyms).unwrap(), "glioblastoma");
        assert_eq!(
            canonicalize_entity("Glioblastoma", &SynonymTable::default()).unwrap(),
            "glioblastoma"
        );
        assert!(matches!(
            canonicalize_entity("!!!", &SynonymTable::default()),
            Err(GraphError::EmptyEntity(_))
        ));
    }

    #[test]
    fn single_evidence_is_alpha_times_c() {
        assert_eq!(fuse_edge_weight(&[(0.9, vec![0.3, 0.4])], one()).unwrap(), 0.9);
        let p = FusionParams { alpha: 0.9, penalty: 1.0 };
        assert_eq!(fuse_edge_weight(&[(0.7, vec![1.0, 0.0])], p).unwrap(), 0.9 * 0.7);
    }

    #[test]
    fn identical_embeddings_reduce_to_classical_noisy_or() {
        let z = vec![0.6, 0.8];
        let w = fuse_edge_weight(&[(0.8, z.clone()), (0.6, z)], one()).unwrap();
        assert!((w - 0.92).abs() < 1e-12, "{w}");
    }

    #[test]
    fn divergent_embeddings_match_scalar_evaluation() {
        // z_mean = (0.5, 0.5); |z_k - z_mean|^2 = 0.5 for both items, so
        // w = 1 - (1 - 0.72 e^-0.5)(1 - 0.54 e^-0.5), evaluated in f64 by
        // python3 -c "import math; e=math.exp(-0.5); print(repr(1-(1-0.72*e)*(1-0.54*e)))"
        let p = FusionParams { alpha: 0.9, penalty: 1.0 };
        let w = fuse_edge_weight(&[(0.8, vec![1.0, 0.0]), (0.6, vec![0.0, 1.0])], p).unwrap();
        assert!((w - 0.6211971045104614).abs() < 1e-12, "{w}");
    }

    #[test]
    fn fusion_rejects_bad_input() {
        assert!(matches!(
            fuse_edge_weight::<Vec<f64>>(&[], one()),
            Err(GraphError::EmptyEvidence)
        ));
        assert!(matches!(
            fuse_edge_weight(&[(0.5, vec![1.0]), (0.5, vec![1.0, 0.0])], one()),
            Err(GraphError::DimensionMismatch { .. })
        ));
        assert!(fuse_edge_weight(&[(1.5, vec![1.0])], one()).is_err());
        let bad = FusionParams { alpha: 0.0, penalty: 1.0 };
        assert!(fuse_edge_weight(&[(0.5, vec![1.0])], bad).is_err());
    }

    #[test]
    fn centroid_shift_can_lower_the_weight() {
        // A weak, far-off second source drags the centroid away from a strong
        // first source; monotone growth only holds when penalties stay fixed.
        let p = FusionParams::default();
        let w1 = fuse_edge_weight(&[(0.9, vec![1.0, 0.0])], p).unwrap();
        let w2 = fuse_edge_weight(&[(0.9, vec![1.0, 0.0]), (0.01, vec![-1.0, 0.0])], p).unwrap();
        assert!(w2 < w1);
    }

    #[test]
    fn upsert_examples() {
        let lexicon: BTreeSet<String> = ["Glioblastoma".to_string()].into();
        let mut graph = KnowledgeGraph::new(FusionParams::default(), lexicon);
        let z = vec![1.0, 0.0];
        let key = graph
            .upsert_evidence(&triple("Glioblastoma", "EXHIBITS_FEATURE", "Necrosis", 0.9, z.clone()), &SynonymTable::default())
            .unwrap();
        assert_eq!(graph.entity_count(), 2);
        assert_eq!(graph.edge_count(), 1);
        assert_eq!(graph.edge(&key).unwrap().fused_weight, 0.9 * 0.9);
        assert_eq!(graph.entity("glioblastoma").unwrap().entity_type, EntityType::Disease);
        assert_eq!(graph.entity("necrosis").unwrap().entity_type, EntityType::Feature);

        let mut synonyms = SynonymTable::default();
        synonyms.insert("GBM", "glioblastoma");
        let w_before = graph.edge(&key).unwrap().fused_weight;
        let key2 = graph
            .upsert_evidence(&triple("GBM", "EXHIBITS_FEATURE", "necrosis", 0.7, z), &synonyms)
            .unwrap();
        assert_eq!(key, key2);
        let edge = graph.edge(&key).unwrap();
        assert_eq!(edge.evidence.len(), 2);
        assert!(edge.fused_weight > w_before);
        assert_eq!(graph.phi()["GBM"], "glioblastoma");
        assert!(graph.entity("glioblastoma").unwrap().surface_forms.contains("GBM"));
    }

    #[test]
    fn failed_upsert_leaves_graph_untouched() {
        let mut graph = KnowledgeGraph::new(FusionParams::default(), BTreeSet::new());
        graph
            .upsert_evidence(&triple("a", "R", "b", 0.9, vec![1.0, 0.0]), &SynonymTable::default())
            .unwrap();
        let before = graph.clone();
        assert!(graph
            .upsert_evidence(&triple("a", "R", "...", 0.9, vec![1.0, 0.0]), &SynonymTable::default())
            .is_err());
        assert!(graph
            .upsert_evidence(&triple("a", "R", "b", 0.9, vec![1.0, 0.0, 0.0]), &SynonymTable::default())
            .is_err());
        assert_eq!(graph, before);
    }

    #[test]
    fn index_lookup_examples() {
        let mut graph = KnowledgeGraph::new(FusionParams::default(), BTreeSet::new());
        for (s, o) in [("a", "b"), ("c", "b")] {
            graph
                .upsert_evidence(&triple(s, "R", o, 0.9, vec![1.0, 0.0]), &SynonymTable::default())
                .unwrap();
        }
        assert_eq!(graph.feature_index_lookup("b").edges.len(), 2);
        assert_eq!(graph.feature_index_lookup("a").edges.len(), 1);
        let unknown = graph.feature_index_lookup("q");
        assert!(unknown.edges.is_empty());
        assert!(!unknown.known);
    }

    #[test]
    fn disease_nodes_examples() {
        let empty = KnowledgeGraph::new(FusionParams::default(), BTreeSet::new());
        assert!(empty.disease_nodes().is_empty());

        let lexicon: BTreeSet<String> = ["d1".to_string(), "d2".to_string()].into();
        let mut graph = KnowledgeGraph::new(FusionParams::default(), lexicon);
        let z = vec![1.0, 0.0];
        for (s, o) in [("d1", "f1"), ("f2", "d2"), ("f3", "f1")] {
            graph
                .upsert_evidence(&triple(s, "R", o, 0.9, z.clone()), &SynonymTable::default())
                .unwrap();
        }
        let expected: BTreeSet<String> = ["d1".to_string(), "d2".to_string()].into();
        assert_eq!(graph.disease_nodes(), expected);
    }

    fn sample_graph() -> KnowledgeGraph {
        let lexicon: BTreeSet<String> = ["glioma".to_string()].into();
        let mut graph = KnowledgeGraph::new(FusionParams { alpha: 0.85, penalty: 2.0 }, lexicon);
        let s = SynonymTable::default();
        graph.upsert_evidence(&triple("Glioma", "SHOWS", "necrosis", 0.71, vec![0.6, 0.8]), &s).unwrap();
        graph.upsert_evidence(&triple("glioma", "SHOWS", "Necrosis", 0.93, vec![0.8, 0.6]), &s).unwrap();
        graph.upsert_evidence(&triple("necrosis", "INDICATES", "grade iv", 0.55, vec![0.0, 1.0]), &s).unwrap();
        graph
    }

    #[test]
    fn snapshot_round_trip_is_exact() {
        let graph = sample_graph();
        let bytes = graph.to_snapshot_bytes();
        let back = KnowledgeGraph::from_snapshot_bytes(&bytes).unwrap();
        assert_eq!(back, graph);
        assert_eq!(back.to_snapshot_bytes(), bytes);
        let text = String::from_utf8(bytes).unwrap();
        assert!(!text.contains("psi"));
    }

    #[test]
    fn truncated_snapshot_is_corrupt() {
        let bytes = sample_graph().to_snapshot_bytes();
        let err = KnowledgeGraph::from_snapshot_bytes(&bytes[..bytes.len() / 2]).unwrap_err();
        assert!(matches!(err, GraphError::Corrupt(_)));
    }

    #[test]
    fn future_snapshot_version_is_rejected() {
        let bytes = sample_graph().to_snapshot_bytes();
        let mut value: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        value["version"] = serde_json::json!(SNAPSHOT_VERSION + 1);
        let err = KnowledgeGraph::from_snapshot_bytes(&serde_json::to_vec(&value).unwrap()).unwrap_err();
        assert!(matches!(err, GraphError::VersionMismatch { .. }));
    }

    #[test]
    fn tampered_weight_is_corrupt() {
        let bytes = sample_graph().to_snapshot_bytes();
        let mut value: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        value["edges"][0]["fused_weight"] = serde_json::json!(0.5);
        let err = KnowledgeGraph::from_snapshot_bytes(&serde_json::to_vec(&value).unwrap()).unwrap_err();
        assert!(matches!(err, GraphError::Corrupt(_)));
    }

    fn evidence_list() -> impl Strategy<Value = Vec<(f64, Vec<f64>)>> {
        (1usize..6).prop_flat_map(|d| prop::collection::vec((0.0..=1.0f64, prop::collection::vec(-1.0..1.0f64, d)), 1..8))
    }

    proptest! {
        #[test]
        fn fused_weight_is_permutation_invariant(ev in evidence_list(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let p = FusionParams::default();
            let w = fuse_edge_weight(&ev, p).unwrap();
            let mut shuffled = ev.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let w2 = fuse_edge_weight(&shuffled, p).unwrap();
            prop_assert!((w - w2).abs() <= 1e-12);
            prop_assert!((0.0..1.0).contains(&w));
        }

        #[test]
        fn appending_positive_evidence_grows_weight_at_fixed_penalty(
            cs in prop::collection::vec(0.0..=1.0f64, 1..8),
            extra in 1e-6..=1.0f64,
        ) {
            let z = vec![0.0, 1.0];
            let p = FusionParams::default();
            let mut ev: Vec<(f64, Vec<f64>)> = cs.iter().map(|&c| (c, z.clone())).collect();
            let before = fuse_edge_weight(&ev, p).unwrap();
            ev.push((extra, z.clone()));
            let after = fuse_edge_weight(&ev, p).unwrap();
            prop_assert!(after > before);
            prop_assert!(after < 1.0);
        }

        #[test]
        fn farther_embeddings_contribute_less(
            c in 0.0..=1.0f64,
            mean in prop::collection::vec(-1.0..1.0f64, 3),
            dir in prop::collection::vec(-1.0..1.0f64, 3),
            near in 0.0..1.0f64,
            extra in 0.0..1.0f64,
        ) {
            let p = FusionParams::default();
            let at = |t: f64| -> Vec<f64> { mean.iter().zip(&dir).map(|(m, d)| m + t * d).collect() };
            let close = effective_contribution(c, &at(near), &mean, p);
            let far = effective_contribution(c, &at(near + extra), &mean, p);
            prop_assert!(far <= close);
        }

        #[test]
        fn snapshot_round_trips(
            triples in prop::collection::vec(
                (0usize..5, 0usize..3, 0usize..5, 0.0..=1.0f64, prop::collection::vec(-1.0..1.0f64, 3)),
                1..20,
            )
        ) {
            let names = ["alpha", "beta", "gamma cells", "delta", "eps"];
            let rels = ["SHOWS", "INDICATES", "LOCATED_IN"];
            let lexicon: BTreeSet<String> = ["beta".to_string()].into();
            let mut graph = KnowledgeGraph::new(FusionParams::default(), lexicon);
            for (s, r, o, c, z) in triples {
                graph.upsert_evidence(&triple(names[s], rels[r], names[o], c, z), &SynonymTable::default()).unwrap();
            }
            let back = KnowledgeGraph::from_snapshot_bytes(&graph.to_snapshot_bytes()).unwrap();
            prop_assert_eq!(back, graph);
        }
    }
}
