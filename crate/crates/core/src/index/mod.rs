//! Exact and inverted-file nearest-neighbour search under weighted cosine.
//!
//! `sim_w(q, x) = Σ_s w_s ⟨q_s, x_s⟩ / (‖q‖_w ‖x‖_w)` with
//! `‖x‖_w² = Σ_s w_s ‖x_s‖²`. Ties are broken by ascending item id.

mod file;
mod ivf;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

pub use file::{load_index, save_index};
pub use ivf::{IvfIndex, KMEANS_ITERATIONS};

use crate::composer::WeightedQuery;
use crate::embedding::{EmbeddingVector, SliceLayout};
use crate::error::{Error, Result};

/// Default candidate budget, inside the 200–500 band.
pub const DEFAULT_K: usize = 300;
pub const DEFAULT_N_LISTS: usize = 256;
pub const DEFAULT_N_PROBE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexKind {
    Exact,
    Ivf,
}

/// How the indexed vectors were produced; persisted so a loaded index can
/// be matched to the right query encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "encoder", content = "seed")]
pub enum EncoderTag {
    Disentangled,
    Universal(u64),
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub item_id: String,
    #[serde(skip)]
    pub ordinal: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub query_id: String,
    pub entries: Vec<Candidate>,
    pub truncated_at: usize,
}

impl CandidateSet {
    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|c| c.item_id.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Keeps the first `k` entries.
    pub fn truncate(&mut self, k: usize) {
        self.entries.truncate(k);
        self.truncated_at = self.truncated_at.min(k);
    }
}

/// Descending score, then ascending item id.
pub fn candidate_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.item_id.cmp(&b.item_id))
}

/// Brute-force index: the full matrix, scanned per query.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactIndex {
    layout: SliceLayout,
    encoder: EncoderTag,
    item_ids: Vec<String>,
    vectors: Vec<f64>,
    /// Per row, squared norm of each slice (row-major, `n × slots`).
    slot_sq: Vec<f64>,
}

impl ExactIndex {
    pub fn new(
        layout: SliceLayout,
        encoder: EncoderTag,
        item_ids: Vec<String>,
        embeddings: &[EmbeddingVector],
    ) -> Result<Self> {
        if embeddings.is_empty() {
            return Err(Error::Build("no vectors to index".into()));
        }
        if item_ids.len() != embeddings.len() {
            return Err(Error::Build(format!(
                "{} ids for {} vectors",
                item_ids.len(),
                embeddings.len()
            )));
        }
        let dim = layout.total_dim();
        let mut vectors = Vec::with_capacity(dim * embeddings.len());
        for e in embeddings {
            if e.len() != dim {
                return Err(Error::dim(dim, e.len()));
            }
            if e.values.iter().any(|x| !x.is_finite()) {
                return Err(Error::Build("non-finite vector".into()));
            }
            vectors.extend_from_slice(&e.values);
        }
        Ok(Self::from_parts(layout, encoder, item_ids, vectors))
    }

    pub(crate) fn from_parts(
        layout: SliceLayout,
        encoder: EncoderTag,
        item_ids: Vec<String>,
        vectors: Vec<f64>,
    ) -> Self {
        let dim = layout.total_dim();
        let slots = layout.entries().len();
        let mut slot_sq = Vec::with_capacity(item_ids.len() * slots);
        for row in vectors.chunks_exact(dim) {
            for e in layout.entries() {
                slot_sq.push(row[e.range()].iter().map(|x| x * x).sum());
            }
        }
        Self {
            layout,
            encoder,
            item_ids,
            vectors,
            slot_sq,
        }
    }

    pub fn layout(&self) -> &SliceLayout {
        &self.layout
    }

    pub fn encoder(&self) -> EncoderTag {
        self.encoder
    }

    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.layout.total_dim()
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn row(&self, ordinal: usize) -> &[f64] {
        let d = self.dim();
        &self.vectors[ordinal * d..(ordinal + 1) * d]
    }

    /// Row of a candidate: its cached ordinal when still valid, otherwise a
    /// scan by id (candidates that went through serde lose the ordinal).
    pub fn resolve(&self, c: &Candidate) -> Result<usize> {
        if self.item_ids.get(c.ordinal) == Some(&c.item_id) {
            return Ok(c.ordinal);
        }
        self.item_ids
            .iter()
            .position(|id| id == &c.item_id)
            .ok_or_else(|| Error::UnknownItem(c.item_id.clone()))
    }

    pub(crate) fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    pub(crate) fn scorer(&self, query: &WeightedQuery) -> Result<Scorer> {
        Scorer::new(&self.layout, query)
    }

    pub(crate) fn score_row(&self, scorer: &Scorer, ordinal: usize) -> f64 {
        let slots = self.layout.entries().len();
        scorer.score(
            self.row(ordinal),
            &self.slot_sq[ordinal * slots..(ordinal + 1) * slots],
        )
    }

    pub(crate) fn top_k_of(
        &self,
        scorer: &Scorer,
        ordinals: impl Iterator<Item = usize>,
        k: usize,
    ) -> Vec<Candidate> {
        let mut all: Vec<Candidate> = ordinals
            .map(|o| Candidate {
                item_id: self.item_ids[o].clone(),
                ordinal: o,
                score: self.score_row(scorer, o),
            })
            .collect();
        if all.len() > k {
            all.select_nth_unstable_by(k - 1, candidate_order);
            all.truncate(k);
        }
        all.sort_by(candidate_order);
        all
    }

    pub fn search(&self, query: &WeightedQuery, k: usize) -> Result<CandidateSet> {
        check_k(k, self.len())?;
        let scorer = self.scorer(query)?;
        Ok(CandidateSet {
            query_id: String::new(),
            entries: self.top_k_of(&scorer, 0..self.len(), k),
            truncated_at: k,
        })
    }

    /// Weighted-cosine score of one indexed row.
    pub fn score(&self, query: &WeightedQuery, ordinal: usize) -> Result<f64> {
        Ok(self.score_row(&self.scorer(query)?, ordinal))
    }
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::Config(format!("k = {k} outside 1..={n}")));
    }
    Ok(())
}

/// Precomputed query side of the weighted cosine.
pub(crate) struct Scorer {
    /// `w_slot(i) · q_eff[i]`.
    weighted_query: Vec<f64>,
    slot_weights: Vec<f64>,
    query_norm: f64,
}

impl Scorer {
    pub(crate) fn new(layout: &SliceLayout, query: &WeightedQuery) -> Result<Self> {
        let dim = layout.total_dim();
        if query.query.len() != dim {
            return Err(Error::dim(dim, query.query.len()));
        }
        if query.slot_weights.len() != layout.entries().len() {
            return Err(Error::dim(layout.entries().len(), query.slot_weights.len()));
        }
        let q = query.effective();
        let mut weighted_query = vec![0.0; dim];
        let mut qn = 0.0;
        for (e, &w) in layout.entries().iter().zip(&query.slot_weights) {
            for i in e.range() {
                weighted_query[i] = w * q[i];
                qn += w * q[i] * q[i];
            }
        }
        Ok(Self {
            weighted_query,
            slot_weights: query.slot_weights.clone(),
            query_norm: qn.sqrt(),
        })
    }

    pub(crate) fn score(&self, x: &[f64], x_slot_sq: &[f64]) -> f64 {
        let num: f64 = self.weighted_query.iter().zip(x).map(|(a, b)| a * b).sum();
        let xn: f64 = self
            .slot_weights
            .iter()
            .zip(x_slot_sq)
            .map(|(w, s)| w * s)
            .sum::<f64>()
            .sqrt();
        let den = self.query_norm * xn;
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Index {
    Exact(ExactIndex),
    Ivf(IvfIndex),
}

impl Index {
    pub fn base(&self) -> &ExactIndex {
        match self {
            Index::Exact(e) => e,
            Index::Ivf(i) => i.base(),
        }
    }

    pub fn kind(&self) -> IndexKind {
        match self {
            Index::Exact(_) => IndexKind::Exact,
            Index::Ivf(_) => IndexKind::Ivf,
        }
    }

    pub fn len(&self) -> usize {
        self.base().len()
    }

    pub fn is_empty(&self) -> bool {
        self.base().is_empty()
    }

    pub fn layout(&self) -> &SliceLayout {
        self.base().layout()
    }

    pub fn n_lists(&self) -> usize {
        match self {
            Index::Exact(_) => 1,
            Index::Ivf(i) => i.n_lists(),
        }
    }
}

pub fn build_index(
    layout: &SliceLayout,
    encoder: EncoderTag,
    item_ids: Vec<String>,
    embeddings: &[EmbeddingVector],
    kind: IndexKind,
    n_lists: usize,
    seed: u64,
) -> Result<Index> {
    let base = ExactIndex::new(layout.clone(), encoder, item_ids, embeddings)?;
    match kind {
        IndexKind::Exact => Ok(Index::Exact(base)),
        IndexKind::Ivf => Ok(Index::Ivf(IvfIndex::build(base, n_lists, seed)?)),
    }
}

/// Top-`k` by weighted cosine. `n_probe` is ignored by exact indexes.
pub fn search(index: &Index, query: &WeightedQuery, k: usize, n_probe: usize) -> Result<CandidateSet> {
    match index {
        Index::Exact(e) => e.search(query, k),
        Index::Ivf(i) => i.search(query, k, n_probe),
    }
}

/// Mean overlap `|ivf_topk ∩ exact_topk| / k` over the queries.
pub fn measure_recall(
    ivf: &IvfIndex,
    oracle: &ExactIndex,
    queries: &[WeightedQuery],
    k: usize,
    n_probe: usize,
) -> Result<f64> {
    if queries.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for q in queries {
        let truth: std::collections::HashSet<String> = oracle
            .search(q, k)?
            .entries
            .into_iter()
            .map(|c| c.item_id)
            .collect();
        let got = ivf.search(q, k, n_probe)?;
        let hits = got.entries.iter().filter(|c| truth.contains(&c.item_id)).count();
        total += hits as f64 / k as f64;
    }
    Ok(total / queries.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout3() -> SliceLayout {
        SliceLayout::universal(3)
    }

    fn ev(values: Vec<f64>) -> EmbeddingVector {
        EmbeddingVector { values, layout_id: 0 }
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("v{i:03}")).collect()
    }

    #[test]
    fn exact_search_basics() {
        let rows = vec![ev(vec![1.0, 0.0, 0.0]), ev(vec![0.0, 1.0, 0.0]), ev(vec![1.0, 1.0, 0.0])];
        let idx = build_index(&layout3(), EncoderTag::External, ids(3), &rows, IndexKind::Exact, 1, 0).unwrap();
        assert_eq!(idx.len(), 3);
        let q = WeightedQuery::unweighted(ev(vec![0.0, 1.0, 0.0]), &layout3());
        let res = search(&idx, &q, 1, 1).unwrap();
        assert_eq!(res.ids(), vec!["v001"]);
        assert!((res.entries[0].score - 1.0).abs() < 1e-15);
        assert!(search(&idx, &q, 4, 1).is_err());
        assert!(search(&idx, &q, 0, 1).is_err());
        let bad = WeightedQuery::unweighted(ev(vec![1.0, 0.0]), &SliceLayout::universal(2));
        assert!(matches!(search(&idx, &bad, 1, 1), Err(Error::Dimension { .. })));
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let rows = vec![ev(vec![1.0, 0.0, 0.0]); 4];
        let mut names = vec!["d".to_string(), "b".into(), "c".into(), "a".into()];
        let idx = ExactIndex::new(layout3(), EncoderTag::External, names.clone(), &rows).unwrap();
        let q = WeightedQuery::unweighted(ev(vec![1.0, 0.0, 0.0]), &layout3());
        names.sort();
        assert_eq!(idx.search(&q, 4).unwrap().ids(), names);
        assert_eq!(idx.search(&q, 2).unwrap().ids(), vec!["a", "b"]);
    }

    #[test]
    fn build_errors() {
        assert!(matches!(
            build_index(&layout3(), EncoderTag::External, vec![], &[], IndexKind::Exact, 1, 0),
            Err(Error::Build(_))
        ));
        let rows = vec![ev(vec![1.0, 0.0, 0.0]); 2];
        assert!(matches!(
            build_index(&layout3(), EncoderTag::External, ids(2), &rows, IndexKind::Ivf, 3, 0),
            Err(Error::Build(_))
        ));
    }
}
