//! Full-batch trainer for the gated composers.
//!
//! Objective over triplets `(v, t, pos, neg)` with `q = W0 v + σ(W1 t + b) ⊙ v`:
//!
//! ```text
//! L = Σ max(0, margin − cos(q, pos) + cos(q, neg))
//!   + λ · Σ_{s≠s′} (‖W0[s, s′]‖² + ‖W1[s, s′]‖²)
//! ```
//!
//! The second term penalizes cross-slice blocks so an edit of one slot does
//! not leak into the others.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ComposerParams, ComposerVariant};
use crate::catalog::Item;
use crate::constraints::{ConstraintSet, DirectiveKind};
use crate::embedding::{cosine, encode_constraints, encode_item_disentangled, SliceLayout};
use crate::error::{Error, Result};
use crate::schema::{AttributeSchema, SlotKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor_item: Item,
    pub constraints: ConstraintSet,
    pub positive: Item,
    pub negative: Item,
}

impl Triplet {
    pub fn validate(&self, schema: &AttributeSchema) -> Result<()> {
        self.constraints.validate(schema)?;
        for it in [&self.anchor_item, &self.positive, &self.negative] {
            it.validate(schema)?;
        }
        if !self.constraints.satisfies_hard(&self.positive, schema) {
            return Err(Error::Train(format!(
                "positive `{}` violates a constraint",
                self.positive.id
            )));
        }
        let touched = self.constraints.touched_slots();
        for slot in schema.slots.iter().filter(|s| !touched.contains(&s.name)) {
            let same = match slot.kind {
                SlotKind::Categorical => {
                    self.positive.attr(&slot.name) == self.anchor_item.attr(&slot.name)
                }
                SlotKind::BinaryDetail => slot
                    .vocab
                    .iter()
                    .all(|v| self.positive.has_detail(v) == self.anchor_item.has_detail(v)),
            };
            if !same {
                return Err(Error::Train(format!(
                    "positive `{}` differs from the anchor on untouched slot `{}`",
                    self.positive.id, slot.name
                )));
            }
        }
        if self.constraints.satisfies_hard(&self.negative, schema) {
            return Err(Error::Train(format!(
                "negative `{}` satisfies every constraint",
                self.negative.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub ortho_weight: f64,
    pub seed: u64,
    pub variant: ComposerVariant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 0.2,
            learning_rate: 0.05,
            epochs: 300,
            ortho_weight: 0.1,
            seed: 7,
            variant: ComposerVariant::Tirg,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(Error::Config(format!("margin {} must be positive", self.margin)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(self.ortho_weight >= 0.0) {
            return Err(Error::Config("ortho weight must be non-negative".into()));
        }
        if !matches!(self.variant, ComposerVariant::Tirg | ComposerVariant::Film) {
            return Err(Error::Config(format!("{:?} has no trainable parameters", self.variant)));
        }
        Ok(())
    }

    /// Identity `w0`, zero bias and a small seeded `w1`.
    pub fn initial_params(&self, dim: usize) -> ComposerParams {
        let mut p = ComposerParams::identity(self.variant, dim);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        for w in &mut p.w1 {
            *w = rng.random_range(-0.01..0.01);
        }
        p
    }
}

/// Triplet in vector form: anchor `v`, text delta `t`, and the two targets.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedTriplet {
    pub v: Vec<f64>,
    pub t: Vec<f64>,
    pub pos: Vec<f64>,
    pub neg: Vec<f64>,
}

pub fn encode_triplets(
    triplets: &[Triplet],
    schema: &AttributeSchema,
    layout: &SliceLayout,
) -> Result<Vec<EncodedTriplet>> {
    triplets
        .iter()
        .map(|tr| {
            let v = encode_item_disentangled(&tr.anchor_item, schema, layout)?;
            let (t, _) = encode_constraints(&tr.constraints, schema, layout, &v)?;
            Ok(EncodedTriplet {
                t: t.values,
                pos: encode_item_disentangled(&tr.positive, schema, layout)?.values,
                neg: encode_item_disentangled(&tr.negative, schema, layout)?.values,
                v: v.values,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub w0: Vec<f64>,
    pub w1: Vec<f64>,
    pub bias: Vec<f64>,
}

struct Forward {
    q: Vec<f64>,
    gate: Vec<f64>,
}

fn forward(params: &ComposerParams, tr: &EncodedTriplet) -> Forward {
    let gate = params.gate(&tr.t);
    let mut q = params.w0_times(&tr.v);
    for ((q, g), x) in q.iter_mut().zip(&gate).zip(&tr.v) {
        *q += g * x;
    }
    Forward { q, gate }
}

fn ortho_penalty(params: &ComposerParams, coord_slot: &[usize]) -> f64 {
    let d = coord_slot.len();
    let mut acc = 0.0;
    for i in 0..d {
        for j in 0..d {
            if coord_slot[i] != coord_slot[j] {
                let a = params.w0[i * d + j];
                let b = params.w1[i * d + j];
                acc += a * a + b * b;
            }
        }
    }
    acc
}

fn check_dims(params: &ComposerParams, layout: &SliceLayout, triplets: &[EncodedTriplet]) -> Result<()> {
    params.validate()?;
    let d = layout.total_dim();
    if params.dim() != d {
        return Err(Error::dim(d, params.dim()));
    }
    for tr in triplets {
        for v in [&tr.v, &tr.t, &tr.pos, &tr.neg] {
            if v.len() != d {
                return Err(Error::dim(d, v.len()));
            }
        }
    }
    Ok(())
}

/// Objective value only (no gradient).
pub fn loss(
    params: &ComposerParams,
    triplets: &[EncodedTriplet],
    config: &TrainConfig,
    layout: &SliceLayout,
) -> Result<f64> {
    check_dims(params, layout, triplets)?;
    let hinge: f64 = triplets
        .iter()
        .map(|tr| {
            let q = forward(params, tr).q;
            (config.margin - cosine(&q, &tr.pos) + cosine(&q, &tr.neg)).max(0.0)
        })
        .sum();
    Ok(hinge + config.ortho_weight * ortho_penalty(params, &layout.coordinate_slots()))
}

/// d cos(q, x) / dq.
fn cosine_grad(q: &[f64], x: &[f64], out: &mut [f64], sign: f64) {
    let qn = q.iter().map(|a| a * a).sum::<f64>().sqrt();
    let xn = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    if qn == 0.0 || xn == 0.0 {
        return;
    }
    let c = q.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() / (qn * xn);
    for ((o, qi), xi) in out.iter_mut().zip(q).zip(x) {
        *o += sign * (xi / (qn * xn) - c * qi / (qn * qn));
    }
}

pub fn loss_and_gradient(
    params: &ComposerParams,
    triplets: &[EncodedTriplet],
    config: &TrainConfig,
    layout: &SliceLayout,
) -> Result<(f64, Gradient)> {
    check_dims(params, layout, triplets)?;
    let d = params.dim();
    let mut g = Gradient {
        w0: vec![0.0; d * d],
        w1: vec![0.0; d * d],
        bias: vec![0.0; d],
    };
    let mut total = 0.0;
    let mut dq = vec![0.0; d];
    let mut dz = vec![0.0; d];
    for tr in triplets {
        let f = forward(params, tr);
        let h = config.margin - cosine(&f.q, &tr.pos) + cosine(&f.q, &tr.neg);
        if h <= 0.0 {
            continue;
        }
        total += h;
        dq.fill(0.0);
        cosine_grad(&f.q, &tr.pos, &mut dq, -1.0);
        cosine_grad(&f.q, &tr.neg, &mut dq, 1.0);
        for i in 0..d {
            dz[i] = dq[i] * tr.v[i] * f.gate[i] * (1.0 - f.gate[i]);
            g.bias[i] += dz[i];
            let row0 = &mut g.w0[i * d..(i + 1) * d];
            for (gij, vj) in row0.iter_mut().zip(&tr.v) {
                *gij += dq[i] * vj;
            }
            let row1 = &mut g.w1[i * d..(i + 1) * d];
            for (gij, tj) in row1.iter_mut().zip(&tr.t) {
                *gij += dz[i] * tj;
            }
        }
    }
    let coord_slot = layout.coordinate_slots();
    let lambda = config.ortho_weight;
    for i in 0..d {
        for j in 0..d {
            if coord_slot[i] != coord_slot[j] {
                g.w0[i * d + j] += 2.0 * lambda * params.w0[i * d + j];
                g.w1[i * d + j] += 2.0 * lambda * params.w1[i * d + j];
            }
        }
    }
    total += lambda * ortho_penalty(params, &coord_slot);
    Ok((total, g))
}

fn step(params: &ComposerParams, g: &Gradient, lr: f64) -> ComposerParams {
    let mut next = params.clone();
    for (w, dw) in next.w0.iter_mut().zip(&g.w0) {
        *w -= lr * dw;
    }
    for (w, dw) in next.w1.iter_mut().zip(&g.w1) {
        *w -= lr * dw;
    }
    for (b, db) in next.bias.iter_mut().zip(&g.bias) {
        *b -= lr * db;
    }
    next
}

/// Full-batch gradient descent. A step that would increase the loss is
/// rejected and the learning rate halved; the loss curve is therefore
/// non-increasing.
pub fn train_composer(
    triplets: &[Triplet],
    config: &TrainConfig,
    layout: &SliceLayout,
    schema: &AttributeSchema,
) -> Result<ComposerParams> {
    config.validate()?;
    if triplets.is_empty() {
        return Err(Error::Train("no triplets".into()));
    }
    for tr in triplets {
        tr.validate(schema)?;
    }
    let encoded = encode_triplets(triplets, schema, layout)?;
    let mut params = config.initial_params(layout.total_dim());
    let mut current = loss(&params, &encoded, config, layout)?;
    if !current.is_finite() {
        return Err(Error::Train("initial loss is not finite".into()));
    }
    params.loss_curve.push(current);
    let mut lr = config.learning_rate;
    for epoch in 0..config.epochs {
        let (l, g) = loss_and_gradient(&params, &encoded, config, layout)?;
        if !l.is_finite() {
            return Err(Error::Train(format!("non-finite loss at epoch {epoch}")));
        }
        loop {
            let candidate = step(&params, &g, lr);
            let next = loss(&candidate, &encoded, config, layout)?;
            if next.is_finite() && next <= current {
                params.w0 = candidate.w0;
                params.w1 = candidate.w1;
                params.bias = candidate.bias;
                current = next;
                break;
            }
            lr *= 0.5;
            if lr < 1e-12 {
                break;
            }
        }
        params.loss_curve.push(current);
        log::debug!("epoch {epoch}: loss {current:.6} lr {lr:.3e}");
    }
    Ok(params)
}

/// Fraction of triplets where the composed query is closer to the positive.
pub fn triplet_accuracy(params: &ComposerParams, triplets: &[EncodedTriplet]) -> f64 {
    if triplets.is_empty() {
        return 0.0;
    }
    let hits = triplets
        .iter()
        .filter(|tr| {
            let q = forward(params, tr).q;
            cosine(&q, &tr.pos) > cosine(&q, &tr.neg)
        })
        .count();
    hits as f64 / triplets.len() as f64
}

/// Synthetic "remove the pocket" triplets: a pocketed anchor, its
/// pocket-free twin as positive, and a pocketed twin as negative.
pub fn pocket_task_triplets(schema: &AttributeSchema, n: usize, seed: u64) -> Result<Vec<Triplet>> {
    let detail_slot = schema
        .detail_slot("pocket")
        .ok_or_else(|| Error::schema("detail", "schema has no `pocket` detail"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut attrs = std::collections::BTreeMap::new();
        for slot in schema.categorical_slots() {
            let v = &slot.vocab[rng.random_range(0..slot.vocab.len())];
            attrs.insert(slot.name.clone(), v.clone());
        }
        let mut details: std::collections::BTreeSet<String> = detail_slot
            .vocab
            .iter()
            .filter(|v| *v != "pocket" && rng.random_bool(0.4))
            .cloned()
            .collect();
        let positive_details = details.clone();
        details.insert("pocket".to_string());
        let anchor = Item {
            id: format!("t{k:05}-anchor"),
            attrs: attrs.clone(),
            details: details.clone(),
            brand: "Aurel".into(),
            price_cents: 5000,
            tags: Vec::new(),
        };
        let positive = Item {
            id: format!("t{k:05}-pos"),
            details: positive_details,
            ..anchor.clone()
        };
        // Half the negatives are the anchor itself, half a pocketed twin
        // with re-drawn secondary details.
        let negative_details = if rng.random_bool(0.5) {
            details
        } else {
            let mut d: std::collections::BTreeSet<String> = detail_slot
                .vocab
                .iter()
                .filter(|v| *v != "pocket" && rng.random_bool(0.4))
                .cloned()
                .collect();
            d.insert("pocket".to_string());
            d
        };
        let negative = Item {
            id: format!("t{k:05}-neg"),
            details: negative_details,
            ..anchor.clone()
        };
        out.push(Triplet {
            anchor_item: anchor,
            constraints: ConstraintSet::new("without a pocket").with(
                DirectiveKind::Remove,
                &detail_slot.name,
                "pocket",
            ),
            positive,
            negative,
        });
    }
    Ok(out)
}
