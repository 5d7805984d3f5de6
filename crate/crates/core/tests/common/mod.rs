#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use ammr_core::catalog::{Item, BRAND_POOL};
use ammr_core::constraints::{ConstraintSet, DirectiveKind};
use ammr_core::schema::{AttributeSchema, SlotKind};
use rand::Rng;

pub fn random_item(rng: &mut impl Rng, schema: &AttributeSchema, id: &str) -> Item {
    let mut attrs = BTreeMap::new();
    let mut details = BTreeSet::new();
    for slot in &schema.slots {
        match slot.kind {
            SlotKind::Categorical => {
                let v = &slot.vocab[rng.random_range(0..slot.vocab.len())];
                attrs.insert(slot.name.clone(), v.clone());
            }
            SlotKind::BinaryDetail => {
                for v in &slot.vocab {
                    if rng.random_bool(0.5) {
                        details.insert(v.clone());
                    }
                }
            }
        }
    }
    Item {
        id: id.to_string(),
        attrs,
        details,
        brand: BRAND_POOL[rng.random_range(0..BRAND_POOL.len())].to_string(),
        price_cents: rng.random_range(1_500..25_000),
        tags: Vec::new(),
    }
}

/// One to three absolute directives over random slots.
pub fn random_constraints(rng: &mut impl Rng, schema: &AttributeSchema) -> ConstraintSet {
    let kinds = [
        DirectiveKind::Set,
        DirectiveKind::Remove,
        DirectiveKind::Negate,
        DirectiveKind::AddSoft,
    ];
    let mut cs = ConstraintSet::new("random");
    for _ in 0..rng.random_range(1..=3) {
        let slot = &schema.slots[rng.random_range(0..schema.slots.len())];
        let value = &slot.vocab[rng.random_range(0..slot.vocab.len())];
        cs.push(kinds[rng.random_range(0..kinds.len())], &slot.name, value);
    }
    cs
}

/// Brute-force `(id, score)` ranking: score descending, id ascending.
pub fn brute_force_rank(ids: &[String], rows: &[Vec<f64>], q: &[f64]) -> Vec<(String, f64)> {
    let mut scored: Vec<(String, f64)> = ids
        .iter()
        .zip(rows)
        .map(|(id, r)| (id.clone(), r.iter().zip(q).map(|(a, b)| a * b).sum()))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored
}
