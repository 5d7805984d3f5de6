//! Attribute-specialist re-ranking over a retrieved candidate set.

use serde::{Deserialize, Serialize};

use crate::composer::WeightedQuery;
use crate::embedding::dot;
use crate::error::{Error, Result};
use crate::index::{candidate_order, CandidateSet, ExactIndex};

/// Boosts candidates by their agreement with the query on one slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecialistRanker {
    pub slot: String,
    pub weight: f64,
}

impl SpecialistRanker {
    pub fn new(slot: impl Into<String>, weight: f64) -> Self {
        Self {
            slot: slot.into(),
            weight,
        }
    }
}

/// `score = base + Σ_r weight_r · ⟨q_eff[slot_r], x[slot_r]⟩`, re-sorted by
/// descending score with ascending-id tie-break. With no effective rankers
/// the input order is returned untouched.
pub fn ensemble_rank(
    candidates: &CandidateSet,
    query: &WeightedQuery,
    rankers: &[SpecialistRanker],
    index: &ExactIndex,
) -> Result<CandidateSet> {
    let layout = index.layout();
    if query.query.len() != layout.total_dim() {
        return Err(Error::dim(layout.total_dim(), query.query.len()));
    }
    let mut ranges = Vec::with_capacity(rankers.len());
    for r in rankers {
        if !(r.weight >= 0.0 && r.weight.is_finite()) {
            return Err(Error::Config(format!("ranker weight {} on `{}` must be non-negative", r.weight, r.slot)));
        }
        let range = layout
            .range(&r.slot)
            .ok_or_else(|| Error::schema(&r.slot, "ranker slot is not in the index layout"))?;
        ranges.push((range, r.weight));
    }
    if ranges.iter().all(|(_, w)| *w == 0.0) {
        return Ok(candidates.clone());
    }

    let q = query.effective();
    let mut out = candidates.clone();
    for c in &mut out.entries {
        let row = index.row(index.resolve(c)?);
        c.score += ranges
            .iter()
            .map(|(range, w)| w * dot(&q[range.clone()], &row[range.clone()]))
            .sum::<f64>();
    }
    out.entries.sort_by(candidate_order);
    Ok(out)
}
