//! Query composition: fuse an anchor embedding with a text-derived delta
//! into one query vector, then condition it on session memory.

mod params;
mod train;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use params::{ComposerParams, ComposerVariant};
pub use train::{
    encode_triplets, loss, loss_and_gradient, pocket_task_triplets, train_composer,
    triplet_accuracy, EncodedTriplet, Gradient, TrainConfig, Triplet,
};

use crate::embedding::{normalize_in_place, DeltaVector, EmbeddingVector, SliceLayout};
use crate::error::{Error, Result};
use crate::schema::AttributeSchema;

/// Baseline composition in a single shared space: `normalize(v + t)`.
/// A (numerically) vanishing sum falls back to `v`.
pub fn compose_baseline(v: &EmbeddingVector, t_text: &EmbeddingVector) -> Result<EmbeddingVector> {
    if v.len() != t_text.len() {
        return Err(Error::dim(v.len(), t_text.len()));
    }
    let mut values: Vec<f64> = v.values.iter().zip(&t_text.values).map(|(a, b)| a + b).collect();
    let n = crate::embedding::norm(&values);
    if n <= 1e-12 * (v.norm() + t_text.norm()).max(f64::MIN_POSITIVE) {
        return Ok(v.clone());
    }
    values.iter_mut().for_each(|x| *x /= n);
    Ok(EmbeddingVector {
        values,
        layout_id: v.layout_id,
    })
}

/// Adds the delta slice-wise and re-normalizes only the touched slices;
/// every other coordinate is copied from `v` unchanged.
pub fn compose_delta_shift(
    v: &EmbeddingVector,
    delta: &DeltaVector,
    layout: &SliceLayout,
) -> Result<EmbeddingVector> {
    if v.len() != layout.total_dim() {
        return Err(Error::dim(layout.total_dim(), v.len()));
    }
    if delta.values.len() != layout.total_dim() {
        return Err(Error::dim(layout.total_dim(), delta.values.len()));
    }
    let mut out = v.clone();
    for slot in &delta.touched_slots {
        let range = layout
            .range(slot)
            .ok_or_else(|| Error::schema(slot, "delta touches a slot outside the layout"))?;
        let slice = &mut out.values[range.clone()];
        for (q, d) in slice.iter_mut().zip(&delta.values[range]) {
            *q += d;
        }
        normalize_in_place(slice);
    }
    Ok(out)
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `q = normalize(W0 v + sigmoid(W1 t + b) ⊙ v)`.
fn gated_compose(v: &EmbeddingVector, t: &DeltaVector, params: &ComposerParams) -> Result<EmbeddingVector> {
    let d = params.dim();
    if v.len() != d {
        return Err(Error::dim(d, v.len()));
    }
    if t.values.len() != d {
        return Err(Error::dim(d, t.values.len()));
    }
    let gate = params.gate(&t.values);
    let mut values = params.w0_times(&v.values);
    for ((q, g), x) in values.iter_mut().zip(&gate).zip(&v.values) {
        *q += g * x;
    }
    normalize_in_place(&mut values);
    Ok(EmbeddingVector {
        values,
        layout_id: v.layout_id,
    })
}

pub(crate) fn gate_values(params: &ComposerParams, t: &[f64]) -> Vec<f64> {
    params
        .w1_times(t)
        .iter()
        .zip(&params.bias)
        .map(|(z, b)| logistic(z + b))
        .collect()
}

fn expect_variant(params: &ComposerParams, want: ComposerVariant) -> Result<()> {
    if params.variant != want {
        return Err(Error::Config(format!(
            "composer params are {:?}, expected {:?}",
            params.variant, want
        )));
    }
    Ok(())
}

/// Residual gating composition: `q = W0 v + M(t) ⊙ v` with `M(t)` a
/// logistic mask of the text encoding.
pub fn compose_tirg(v: &EmbeddingVector, t: &DeltaVector, params: &ComposerParams) -> Result<EmbeddingVector> {
    expect_variant(params, ComposerVariant::Tirg)?;
    gated_compose(v, t, params)
}

/// Gated-FiLM composition. Same algebra as [`compose_tirg`]; the variant tag
/// keeps the two parameterizations separable.
pub fn compose_film(v: &EmbeddingVector, t: &DeltaVector, params: &ComposerParams) -> Result<EmbeddingVector> {
    expect_variant(params, ComposerVariant::Film)?;
    gated_compose(v, t, params)
}

/// A composed query plus the per-slot metric weights it is scored under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedQuery {
    pub query: EmbeddingVector,
    /// One weight per layout slice, in layout order.
    pub slot_weights: Vec<f64>,
    /// Coordinates to repel (removed/negated values); subtracted from the
    /// query when scoring.
    pub exclusions: Vec<f64>,
    /// Memory slots that matched nothing in the layout.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ignored_slots: Vec<String>,
}

impl WeightedQuery {
    pub fn unweighted(query: EmbeddingVector, layout: &SliceLayout) -> Self {
        Self {
            exclusions: vec![0.0; query.len()],
            query,
            slot_weights: vec![1.0; layout.entries().len()],
            ignored_slots: Vec::new(),
        }
    }

    pub fn with_exclusions(mut self, exclusions: Vec<f64>) -> Result<Self> {
        if exclusions.len() != self.query.len() {
            return Err(Error::dim(self.query.len(), exclusions.len()));
        }
        self.exclusions = exclusions;
        Ok(self)
    }

    /// The vector actually compared against items.
    pub fn effective(&self) -> Vec<f64> {
        self.query
            .values
            .iter()
            .zip(&self.exclusions)
            .map(|(q, e)| q - e)
            .collect()
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.query.values.iter_mut().for_each(|x| *x *= c);
        out.exclusions.iter_mut().for_each(|x| *x *= c);
        out
    }
}

/// Attaches session slot weights to a composed query. Unknown slots and
/// negative or non-finite weights are ignored and reported.
pub fn apply_memory(
    q: &EmbeddingVector,
    memory_weights: &BTreeMap<String, f64>,
    layout: &SliceLayout,
) -> WeightedQuery {
    let mut wq = WeightedQuery::unweighted(q.clone(), layout);
    for (slot, &w) in memory_weights {
        match layout.position(slot) {
            Some(i) if w.is_finite() && w >= 0.0 => wq.slot_weights[i] = w,
            _ => wq.ignored_slots.push(slot.clone()),
        }
    }
    wq
}

/// Memory-conditioned activations: scales each value's coordinate in `q`
/// by its session multiplier (e.g. damping a repeatedly rejected style).
pub fn apply_value_multipliers(
    q: &EmbeddingVector,
    multipliers: &BTreeMap<String, BTreeMap<String, f64>>,
    schema: &AttributeSchema,
    layout: &SliceLayout,
) -> Result<EmbeddingVector> {
    layout.check_schema(schema)?;
    let mut out = q.clone();
    for (slot, values) in multipliers {
        let (Some(def), Some(entry)) = (schema.slot(slot), layout.entry(slot)) else {
            continue;
        };
        for (value, &m) in values {
            if let Some(i) = def.value_index(value) {
                out.values[entry.offset + i] *= m;
            }
        }
    }
    Ok(out)
}
