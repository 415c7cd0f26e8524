//! Planted-fact retrieval harness.
//!
//! Generates a synthetic corpus with one planted disease-feature fact per
//! planted document plus unrelated distractor facts, builds the graph and bank
//! with the mock extractor, then queries each planted feature and reports how
//! often the planted edge lands in the fused working memory for every
//! `(cap_dynamic, cap_static)` pair in `1..=max_cap`.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::activation::{activate, InputSequence};
use crate::config::PipelineConfig;
use crate::corpus::Document;
use crate::embedding::{embed_text, MemoryBank};
use crate::extraction::EXHIBITS_FEATURE;
use crate::graphstore::{EdgeKey, SynonymTable};
use crate::pipeline::{Pipeline, PipelineError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub seed: u64,
    pub planted: usize,
    pub distractors: usize,
    pub max_cap: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            seed: 7,
            planted: 5,
            distractors: 45,
            max_cap: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlantedFact {
    pub disease: String,
    pub feature: String,
}

impl PlantedFact {
    pub fn edge_key(&self) -> EdgeKey {
        EdgeKey::new(self.disease.clone(), EXHIBITS_FEATURE, self.feature.clone())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub documents: Vec<Document>,
    pub planted: Vec<PlantedFact>,
}

const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr"];
const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ai"];

fn pseudo_word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    (0..syllables)
        .map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap()))
        .collect()
}

/// Two-word pseudo-terms, never repeated within one corpus.
struct Namer {
    rng: ChaCha8Rng,
    used: BTreeSet<String>,
}

impl Namer {
    fn term(&mut self, suffix: &str) -> String {
        loop {
            let a = self.rng.gen_range(2..4);
            let b = self.rng.gen_range(2..4);
            let name = format!("{} {}{suffix}", pseudo_word(&mut self.rng, a), pseudo_word(&mut self.rng, b));
            if self.used.insert(name.clone()) {
                return name;
            }
        }
    }
}

pub fn synthetic_corpus(spec: &EvalSpec) -> SyntheticCorpus {
    let mut namer = Namer {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        used: BTreeSet::new(),
    };
    let mut documents = Vec::new();
    let mut planted = Vec::new();
    for i in 0..spec.planted {
        let fact = PlantedFact {
            disease: namer.term("oma"),
            feature: namer.term("osis"),
        };
        documents.push(Document::new(
            format!("planted-{i}"),
            format!("{} shows {}.", fact.disease, fact.feature),
        ));
        planted.push(fact);
    }
    const LINKS: [&str; 3] = ["shows", "is associated with", "indicates"];
    for i in 0..spec.distractors {
        let subject = namer.term("");
        let object = namer.term("");
        let link = LINKS[i % LINKS.len()];
        documents.push(Document::new(format!("distractor-{i}"), format!("{subject} {link} {object}.")));
    }
    documents.shuffle(&mut namer.rng);
    SyntheticCorpus { documents, planted }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub cap_d: usize,
    pub cap_s: usize,
    /// Fraction of planted facts whose edge is in the fused working memory.
    pub recall: f64,
    /// Mean cosine between query and planted edge, counting misses as 0.
    pub mean_score: f64,
}

pub fn run_eval(config: &PipelineConfig, spec: &EvalSpec) -> Result<Vec<EvalRow>, PipelineError> {
    let corpus = synthetic_corpus(spec);
    let lexicon: BTreeSet<String> = corpus.planted.iter().map(|p| p.disease.clone()).collect();
    let pipeline = Pipeline::with_mock(config.clone(), SynonymTable::default(), lexicon)?;
    let (graph, _) = pipeline.build_from_documents(corpus.documents)?;
    let bank = MemoryBank::build(&graph, pipeline.embedder().as_ref())?;

    let targets: Vec<(InputSequence, usize)> = corpus
        .planted
        .iter()
        .map(|fact| {
            let key = fact.edge_key();
            let row = bank
                .provenance()
                .iter()
                .position(|k| *k == key)
                .ok_or_else(|| PipelineError::Request(format!("planted edge {key:?} missing from the bank")))?;
            Ok((InputSequence::from_rows(&[embed_text(&fact.feature, bank.dim())])?, row))
        })
        .collect::<Result<_, PipelineError>>()?;

    let mut rows = Vec::new();
    for cap_d in 1..=spec.max_cap {
        for cap_s in 1..=spec.max_cap {
            let mut act_config = config.activation_config();
            act_config.cap_dynamic = cap_d;
            act_config.cap_static = cap_s;
            let mut hits = 0usize;
            let mut score_sum = 0.0;
            for (x, row) in &targets {
                let act = activate(&bank, x, &act_config)?;
                if act.fused.indices.contains(row) {
                    hits += 1;
                    let cosine = crate::activation::cosine_scores(&bank, act.query.view())[*row];
                    score_sum += cosine;
                }
            }
            let n = targets.len().max(1) as f64;
            rows.push(EvalRow {
                cap_d,
                cap_s,
                recall: hits as f64 / n,
                mean_score: score_sum / n,
            });
        }
    }
    Ok(rows)
}

pub fn rows_to_csv(rows: &[EvalRow]) -> String {
    let mut out = String::from("cap_D,cap_S,recall,mean_score\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.cap_d, r.cap_s, r.recall, r.mean_score).expect("string write");
    }
    out
}
