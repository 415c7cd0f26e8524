//! Long-term to working-memory transition.
//!
//! The input token matrix is mean-pooled into a unit-bounded query. Static
//! activation ranks memory rows by cosine similarity to that query; dynamic
//! activation computes a masked scaled-dot-product softmax over the
//! (optionally projected) bank. Each mode keeps its own top-k, the two
//! selections are merged, and the relevance-scaled rows are prepended to the
//! input sequence.
//!
//! Ties are always broken by ascending bank index.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::MemoryBank;
use crate::graphstore::EdgeKey;

/// Additive logit for masked memory rows.
pub const MASK_SENTINEL: f64 = -1e9;

#[derive(Debug, Error, PartialEq)]
pub enum ActivationError {
    #[error("memory fully masked")]
    FullyMasked,
    #[error("no activation: both selections are empty")]
    NoActivation,
    #[error("empty memory bank")]
    EmptyBank,
    #[error("working memory is empty")]
    EmptyWorkingMemory,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid activation config: {0}")]
    InvalidConfig(String),
    #[error("input sequence must have at least one token")]
    EmptySequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationMode {
    Static,
    Dynamic,
    Fused,
}

/// `T x d` token matrix, `T >= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSequence {
    tokens: Array2<f64>,
}

impl InputSequence {
    pub fn new(tokens: Array2<f64>) -> Result<Self, ActivationError> {
        if tokens.nrows() == 0 {
            return Err(ActivationError::EmptySequence);
        }
        Ok(InputSequence { tokens })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ActivationError> {
        let d = rows.first().ok_or(ActivationError::EmptySequence)?.len();
        let mut flat = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.len() != d {
                return Err(ActivationError::DimensionMismatch { expected: d, found: r.len() });
            }
            flat.extend_from_slice(r);
        }
        let tokens = Array2::from_shape_vec((rows.len(), d), flat).expect("shape checked");
        Self::new(tokens)
    }

    pub fn tokens(&self) -> &Array2<f64> {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.tokens.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationConfig {
    pub epsilon: f64,
    pub cap_dynamic: usize,
    pub cap_static: usize,
    /// Additive per-row logit offsets; `-inf` (or anything at or below
    /// [`MASK_SENTINEL`]) masks the row.
    pub mask: Option<Vec<f64>>,
    pub projection_query: Option<Array2<f64>>,
    pub projection_memory: Option<Array2<f64>>,
    pub relevance_floor: Option<f64>,
}

impl Default for ActivationConfig {
    fn default() -> Self {
        ActivationConfig {
            epsilon: 1e-8,
            cap_dynamic: 5,
            cap_static: 5,
            mask: None,
            projection_query: None,
            projection_memory: None,
            relevance_floor: None,
        }
    }
}

impl ActivationConfig {
    pub fn validate(&self, n: usize, d: usize) -> Result<(), ActivationError> {
        let bad = |m: &str| Err(ActivationError::InvalidConfig(m.to_string()));
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be a non-negative finite number");
        }
        if self.cap_dynamic == 0 || self.cap_static == 0 {
            return bad("caps must be at least 1");
        }
        if let Some(mask) = &self.mask {
            if mask.len() != n {
                return bad(&format!("mask has {} entries for {n} memory rows", mask.len()));
            }
            if mask.iter().any(|m| m.is_nan() || *m == f64::INFINITY) {
                return bad("mask entries must be finite or -inf");
            }
        }
        for p in [&self.projection_query, &self.projection_memory].into_iter().flatten() {
            if p.nrows() != d || p.ncols() != d {
                return bad(&format!("projection must be {d}x{d}"));
            }
        }
        if let Some(f) = self.relevance_floor {
            if !(0.0..=1.0).contains(&f) {
                return bad("relevance_floor must lie in [0,1]");
            }
        }
        Ok(())
    }
}

/// Builds a mask disabling the given indices.
pub fn mask_indices(n: usize, masked: impl IntoIterator<Item = usize>) -> Vec<f64> {
    let mut mask = vec![0.0; n];
    for i in masked {
        if i < n {
            mask[i] = f64::NEG_INFINITY;
        }
    }
    mask
}

pub fn is_masked(offset: f64) -> bool {
    offset <= MASK_SENTINEL
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationResult {
    pub mode: ActivationMode,
    pub indices: Vec<usize>,
    /// Relevance in the producing mode: cosine for static, softmax mass for
    /// dynamic.
    pub scores: Vec<f64>,
    /// Producing mode per entry (differs from `mode` only for fused results).
    pub origins: Vec<ActivationMode>,
    /// Score mapped to [0,1] within its own mode: clamped cosine for static,
    /// mass relative to the peak for dynamic.
    pub relative: Vec<f64>,
    pub wm_rows: Array2<f64>,
    pub provenance: Vec<EdgeKey>,
    /// Static mode with a zero query: every score is 0 and the selection is
    /// simply the first indices.
    pub degenerate: bool,
    /// Full pre-selection softmax (dynamic only).
    pub distribution: Option<Vec<f64>>,
    bank_len: usize,
}

impl ActivationResult {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn bank_len(&self) -> usize {
        self.bank_len
    }
}

/// Column-wise mean of the tokens divided by `(|mean| + epsilon)`.
pub fn compute_query(x: &InputSequence, epsilon: f64) -> Array1<f64> {
    let mean = x.tokens.mean_axis(Axis(0)).expect("at least one token");
    let norm = mean.dot(&mean).sqrt();
    let denom = norm + epsilon;
    if denom == 0.0 {
        return mean;
    }
    mean / denom
}

/// Top `k` of `candidates` under `better` (a total order, best first).
fn select_top<F>(mut candidates: Vec<usize>, k: usize, better: F) -> Vec<usize>
where
    F: Fn(usize, usize) -> Ordering,
{
    let k = k.min(candidates.len());
    if k == 0 {
        return Vec::new();
    }
    if k < candidates.len() {
        candidates.select_nth_unstable_by(k - 1, |&a, &b| better(a, b));
        candidates.truncate(k);
    }
    candidates.sort_unstable_by(|&a, &b| better(a, b));
    candidates
}

fn check_query(bank: &MemoryBank, q: ArrayView1<f64>) -> Result<(), ActivationError> {
    if bank.is_empty() {
        return Err(ActivationError::EmptyBank);
    }
    if q.len() != bank.dim() {
        return Err(ActivationError::DimensionMismatch {
            expected: bank.dim(),
            found: q.len(),
        });
    }
    Ok(())
}

fn gather(bank: &MemoryBank, indices: &[usize], scale: &[f64]) -> Array2<f64> {
    let mut rows = Array2::zeros((indices.len(), bank.dim()));
    for (k, (&i, &w)) in indices.iter().zip(scale).enumerate() {
        rows.row_mut(k).assign(&(&bank.row(i) * w));
    }
    rows
}

/// Cosine similarity for every bank row; zero-norm rows (or a zero query)
/// score 0.
pub fn cosine_scores(bank: &MemoryBank, q: ArrayView1<f64>) -> Vec<f64> {
    let qn = q.dot(&q).sqrt();
    bank.matrix()
        .outer_iter()
        .map(|row| {
            let rn = row.dot(&row).sqrt();
            if rn == 0.0 || qn == 0.0 {
                0.0
            } else {
                row.dot(&q) / (rn * qn)
            }
        })
        .collect()
}

pub fn static_activate(bank: &MemoryBank, q: ArrayView1<f64>, cap: usize) -> Result<ActivationResult, ActivationError> {
    check_query(bank, q)?;
    if cap == 0 {
        return Err(ActivationError::InvalidConfig("caps must be at least 1".into()));
    }
    let scores = cosine_scores(bank, q);
    let degenerate = q.iter().all(|&x| x == 0.0);
    let indices = select_top((0..bank.len()).collect(), cap, |a, b| {
        scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
    });
    let picked: Vec<f64> = indices.iter().map(|&i| scores[i]).collect();
    let relative: Vec<f64> = picked.iter().map(|s| s.clamp(0.0, 1.0)).collect();
    Ok(ActivationResult {
        mode: ActivationMode::Static,
        wm_rows: gather(bank, &indices, &relative),
        provenance: indices.iter().map(|&i| bank.provenance()[i].clone()).collect(),
        origins: vec![ActivationMode::Static; indices.len()],
        indices,
        scores: picked,
        relative,
        degenerate,
        distribution: None,
        bank_len: bank.len(),
    })
}

/// `softmax((M' q') / sqrt(d) + mask)` with `q' = P_q q` and `M' = M P_m^T`.
/// Returns `(logits, distribution)`.
pub fn dynamic_distribution(
    bank: &MemoryBank,
    q: ArrayView1<f64>,
    config: &ActivationConfig,
) -> Result<(Vec<f64>, Vec<f64>), ActivationError> {
    check_query(bank, q)?;
    config.validate(bank.len(), bank.dim())?;
    let q_proj = match &config.projection_query {
        Some(p) => p.dot(&q),
        None => q.to_owned(),
    };
    let raw = match &config.projection_memory {
        Some(p) => bank.matrix().dot(&p.t()).dot(&q_proj),
        None => bank.matrix().dot(&q_proj),
    };
    let scale = (bank.dim() as f64).sqrt();
    let logits: Vec<f64> = raw
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let offset = config.mask.as_ref().map_or(0.0, |m| m[i]);
            if is_masked(offset) {
                r / scale + MASK_SENTINEL
            } else {
                r / scale + offset
            }
        })
        .collect();
    if let Some(mask) = &config.mask {
        if mask.iter().all(|&m| is_masked(m)) {
            return Err(ActivationError::FullyMasked);
        }
    }
    let dist = softmax(&logits);
    Ok((logits, dist))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn dynamic_activate(
    bank: &MemoryBank,
    q: ArrayView1<f64>,
    config: &ActivationConfig,
) -> Result<ActivationResult, ActivationError> {
    let (logits, dist) = dynamic_distribution(bank, q, config)?;
    let eligible: Vec<usize> = (0..bank.len())
        .filter(|&i| !config.mask.as_ref().is_some_and(|m| is_masked(m[i])))
        .collect();
    let indices = select_top(eligible, config.cap_dynamic, |a, b| {
        dist[b]
            .total_cmp(&dist[a])
            .then(logits[b].total_cmp(&logits[a]))
            .then(a.cmp(&b))
    });
    let peak = dist.iter().copied().fold(0.0, f64::max);
    let scores: Vec<f64> = indices.iter().map(|&i| dist[i]).collect();
    let relative = scores.iter().map(|s| (s / peak).clamp(0.0, 1.0)).collect();
    Ok(ActivationResult {
        mode: ActivationMode::Dynamic,
        wm_rows: gather(bank, &indices, &scores),
        provenance: indices.iter().map(|&i| bank.provenance()[i].clone()).collect(),
        origins: vec![ActivationMode::Dynamic; indices.len()],
        indices,
        scores,
        relative,
        degenerate: false,
        distribution: Some(dist),
        bank_len: bank.len(),
    })
}

/// Merges per-mode selections: dynamic entries first (a row picked by both
/// modes keeps its dynamic copy), then static-only entries, each in score
/// order. With a relevance floor, entries whose own-mode relative score is
/// below it are dropped.
pub fn adaptive_select(
    static_result: &ActivationResult,
    dynamic_result: &ActivationResult,
    config: &ActivationConfig,
) -> Result<ActivationResult, ActivationError> {
    if static_result.bank_len != dynamic_result.bank_len || static_result.wm_rows.ncols() != dynamic_result.wm_rows.ncols() {
        return Err(ActivationError::InvalidConfig("selections come from different banks".into()));
    }
    if static_result.is_empty() && dynamic_result.is_empty() {
        return Err(ActivationError::NoActivation);
    }
    let floor = config.relevance_floor.unwrap_or(0.0);
    let dynamic_set: BTreeSet<usize> = dynamic_result.indices.iter().copied().collect();

    let picks = (0..dynamic_result.len())
        .map(|k| (dynamic_result, k))
        .chain(
            (0..static_result.len())
                .filter(|&k| !dynamic_set.contains(&static_result.indices[k]))
                .map(|k| (static_result, k)),
        )
        .filter(|(r, k)| r.relative[*k] >= floor);

    let mut fused = ActivationResult {
        mode: ActivationMode::Fused,
        indices: Vec::new(),
        scores: Vec::new(),
        origins: Vec::new(),
        relative: Vec::new(),
        wm_rows: Array2::zeros((0, dynamic_result.wm_rows.ncols())),
        provenance: Vec::new(),
        degenerate: static_result.degenerate,
        distribution: dynamic_result.distribution.clone(),
        bank_len: dynamic_result.bank_len,
    };
    let mut rows = Vec::new();
    for (r, k) in picks {
        fused.indices.push(r.indices[k]);
        fused.scores.push(r.scores[k]);
        fused.origins.push(r.origins[k]);
        fused.relative.push(r.relative[k]);
        fused.provenance.push(r.provenance[k].clone());
        rows.push(r.wm_rows.row(k));
    }
    if fused.indices.is_empty() {
        return Err(ActivationError::NoActivation);
    }
    fused.wm_rows = ndarray::stack(Axis(0), &rows).expect("rows share a width");
    Ok(fused)
}

/// Static, dynamic, and fused selections for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct Activation {
    pub query: Array1<f64>,
    pub static_result: ActivationResult,
    pub dynamic_result: ActivationResult,
    pub fused: ActivationResult,
}

pub fn activate(bank: &MemoryBank, x: &InputSequence, config: &ActivationConfig) -> Result<Activation, ActivationError> {
    if x.dim() != bank.dim() {
        return Err(ActivationError::DimensionMismatch {
            expected: bank.dim(),
            found: x.dim(),
        });
    }
    config.validate(bank.len(), bank.dim())?;
    let query = compute_query(x, config.epsilon);
    let static_result = static_activate(bank, query.view(), config.cap_static)?;
    let dynamic_result = dynamic_activate(bank, query.view(), config)?;
    let fused = adaptive_select(&static_result, &dynamic_result, config)?;
    Ok(Activation {
        query,
        static_result,
        dynamic_result,
        fused,
    })
}

/// `X* = [wm_rows; X]`, shape `(k + T) x d`.
pub fn assemble_augmented(wm: &ActivationResult, x: &InputSequence) -> Result<Array2<f64>, ActivationError> {
    if wm.is_empty() {
        return Err(ActivationError::EmptyWorkingMemory);
    }
    if wm.wm_rows.ncols() != x.dim() {
        return Err(ActivationError::DimensionMismatch {
            expected: x.dim(),
            found: wm.wm_rows.ncols(),
        });
    }
    Ok(concatenate(Axis(0), &[wm.wm_rows.view(), x.tokens.view()]).expect("widths match"))
}

fn softmax_rows(scores: &Array2<f64>) -> Array2<f64> {
    let mut out = scores.clone();
    for mut row in out.outer_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Single-head self-attention over the augmented sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionPass {
    pub attention: Array2<f64>,
    pub output: Array2<f64>,
}

pub fn reference_attention(
    xstar: ArrayView2<f64>,
    w_q: ArrayView2<f64>,
    w_k: ArrayView2<f64>,
    w_v: ArrayView2<f64>,
) -> AttentionPass {
    let d = xstar.ncols() as f64;
    let q = xstar.dot(&w_q);
    let k = xstar.dot(&w_k);
    let v = xstar.dot(&w_v);
    let attention = softmax_rows(&(q.dot(&k.t()) / d.sqrt()));
    let output = attention.dot(&v);
    AttentionPass { attention, output }
}

/// Gradient of `sum(grad_output * output)` with respect to `xstar`.
pub fn reference_attention_backward(
    xstar: ArrayView2<f64>,
    w_q: ArrayView2<f64>,
    w_k: ArrayView2<f64>,
    w_v: ArrayView2<f64>,
    grad_output: ArrayView2<f64>,
) -> Array2<f64> {
    let scale = (xstar.ncols() as f64).sqrt();
    let q = xstar.dot(&w_q);
    let k = xstar.dot(&w_k);
    let v = xstar.dot(&w_v);
    let a = softmax_rows(&(q.dot(&k.t()) / scale));

    let grad_a = grad_output.dot(&v.t());
    let grad_v = a.t().dot(&grad_output);
    // row-wise softmax Jacobian: dS = A * (dA - rowsum(dA * A))
    let inner = (&grad_a * &a).sum_axis(Axis(1)).insert_axis(Axis(1));
    let grad_s = &a * &(&grad_a - &inner);
    let grad_q = grad_s.dot(&k) / scale;
    let grad_k = grad_s.t().dot(&q) / scale;

    grad_q.dot(&w_q.t()) + grad_k.dot(&w_k.t()) + grad_v.dot(&w_v.t())
}

/// Rows of `X*` contributed by working memory (`0..k`).
pub fn wm_block(xstar: &Array2<f64>, k: usize) -> ArrayView2<'_, f64> {
    xstar.slice(s![..k, ..])
}
