//! Items, catalogs, the JSON-Lines catalog format and the skewed synthetic
//! catalog generator.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{AttributeSchema, SlotKind};

/// Fixed brand pool; brand `i` is drawn with weight `1 / (i + 1)`.
pub const BRAND_POOL: [&str; 10] = [
    "Aurel", "Brindle", "Corvo", "Dunmore", "Elwyn", "Fenwick", "Galloway", "Hartwell", "Ivers",
    "Juniper",
];

pub const PRICE_MIN_CENTS: u64 = 1_500;
pub const PRICE_MAX_CENTS: u64 = 25_000;

/// Probability that an unskewed binary detail is present.
const UNSKEWED_DETAIL_RATE: f64 = 0.5;

/// A catalog article. Field order is the canonical key order of the
/// JSON-Lines record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Item {
    pub id: String,
    pub attrs: BTreeMap<String, String>,
    pub details: BTreeSet<String>,
    pub brand: String,
    pub price_cents: u64,
    pub tags: Vec<String>,
}

impl Item {
    pub fn attr(&self, slot: &str) -> Option<&str> {
        self.attrs.get(slot).map(String::as_str)
    }

    pub fn has_detail(&self, detail: &str) -> bool {
        self.details.contains(detail)
    }

    /// Whether the item carries `value` in `slot`, for either slot kind.
    pub fn carries(&self, schema: &AttributeSchema, slot: &str, value: &str) -> bool {
        match schema.slot(slot).map(|s| s.kind) {
            Some(SlotKind::BinaryDetail) => self.has_detail(value),
            Some(SlotKind::Categorical) => self.attr(slot) == Some(value),
            None => false,
        }
    }

    /// Every `(slot, value)` pair the item carries, in schema order.
    pub fn slot_values<'a>(&'a self, schema: &'a AttributeSchema) -> Vec<(&'a str, &'a str)> {
        let mut out = Vec::new();
        for slot in &schema.slots {
            match slot.kind {
                SlotKind::Categorical => {
                    if let Some(v) = self.attr(&slot.name) {
                        out.push((slot.name.as_str(), v));
                    }
                }
                SlotKind::BinaryDetail => {
                    for v in &slot.vocab {
                        if self.has_detail(v) {
                            out.push((slot.name.as_str(), v.as_str()));
                        }
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self, schema: &AttributeSchema) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::schema("id", "item id is empty"));
        }
        for (slot, value) in &self.attrs {
            let def = schema
                .slot(slot)
                .ok_or_else(|| Error::schema(slot, "unknown slot"))?;
            if def.is_binary() {
                return Err(Error::schema(slot, "binary-detail slot listed under attrs"));
            }
            if def.value_index(value).is_none() {
                return Err(Error::schema(slot, format!("unknown value `{value}`")));
            }
        }
        for detail in &self.details {
            if schema.detail_slot(detail).is_none() {
                return Err(Error::schema("details", format!("unknown detail `{detail}`")));
            }
        }
        Ok(())
    }

    /// Canonical single-line record.
    pub fn to_record(&self) -> String {
        serde_json::to_string(self).expect("item serialization is infallible")
    }
}

/// Parses one catalog line. Errors carry a 1-based column; the line number
/// is 1 unless the caller rewrites it.
pub fn parse_item_record(line: &str, schema: &AttributeSchema) -> Result<Item> {
    let item: Item = serde_json::from_str(line).map_err(|e| Error::Format {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    item.validate(schema).map_err(|e| {
        let (needle, message) = match &e {
            Error::Schema { slot, message } => {
                let needle = if slot == "details" || slot == "id" {
                    message
                        .split('`')
                        .nth(1)
                        .map(str::to_string)
                        .unwrap_or_else(|| slot.clone())
                } else {
                    slot.clone()
                };
                (needle, format!("slot `{slot}`: {message}"))
            }
            other => (String::new(), other.to_string()),
        };
        let column = line
            .find(&format!("\"{needle}\""))
            .map(|i| i + 1)
            .unwrap_or(1);
        Error::Format {
            line: 1,
            column,
            message,
        }
    })?;
    Ok(item)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Catalog {
    pub schema_version: u32,
    items: Vec<Item>,
    by_id: HashMap<String, usize>,
}

impl Catalog {
    pub fn new(schema_version: u32, items: Vec<Item>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            if by_id.insert(item.id.clone(), i).is_some() {
                return Err(Error::schema("id", format!("duplicate item id `{}`", item.id)));
            }
        }
        Ok(Self {
            schema_version,
            items,
            by_id,
        })
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Item> {
        self.by_id.get(id).map(|&i| &self.items[i])
    }

    pub fn ordinal(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn require(&self, id: &str) -> Result<&Item> {
        self.get(id).ok_or_else(|| Error::UnknownItem(id.to_string()))
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::with_capacity(self.items.len() * 160);
        for item in &self.items {
            let _ = writeln!(out, "{}", item.to_record());
        }
        out
    }

    pub fn from_jsonl(text: &str, schema: &AttributeSchema) -> Result<Self> {
        let mut items = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let item = parse_item_record(line, schema).map_err(|e| match e {
                Error::Format {
                    column, message, ..
                } => Error::Format {
                    line: i + 1,
                    column,
                    message,
                },
                other => other,
            })?;
            items.push(item);
        }
        Catalog::new(schema.version, items)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, schema: &AttributeSchema) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text, schema)
    }

    /// Fraction of items carrying `slot.value`.
    pub fn frequency(&self, schema: &AttributeSchema, slot: &str, value: &str) -> f64 {
        if self.items.is_empty() {
            return 0.0;
        }
        let hits = self
            .items
            .iter()
            .filter(|it| it.carries(schema, slot, value))
            .count();
        hits as f64 / self.items.len() as f64
    }
}

/// Marginal value probabilities keyed by `slot.value`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Skew(pub BTreeMap<String, f64>);

impl Skew {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, p: f64) -> Self {
        self.0.insert(key.to_string(), p);
        self
    }

    /// Parses a `slot.value=p` command-line argument.
    pub fn parse_arg(arg: &str) -> Result<(String, f64)> {
        let (key, p) = arg
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("skew `{arg}` is not slot.value=p")))?;
        let p: f64 = p
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("skew `{arg}` has a non-numeric probability")))?;
        Ok((key.trim().to_string(), p))
    }

    fn validated(&self, schema: &AttributeSchema) -> Result<BTreeMap<(String, String), f64>> {
        let mut out = BTreeMap::new();
        for (key, &p) in &self.0 {
            let (slot, value) = key
                .split_once('.')
                .ok_or_else(|| Error::schema(key, "skew key must be slot.value"))?;
            schema.check_value(slot, value)?;
            if !(0.0..=1.0).contains(&p) || p.is_nan() {
                return Err(Error::schema(slot, format!("skew probability {p} outside [0,1]")));
            }
            out.insert((slot.to_string(), value.to_string()), p);
        }
        Ok(out)
    }
}

/// Draws a deterministic synthetic catalog.
pub fn generate_catalog(
    schema: &AttributeSchema,
    size: usize,
    skew: &Skew,
    seed: u64,
) -> Result<Catalog> {
    if size == 0 {
        return Err(Error::Config("catalog size must be at least 1".into()));
    }
    let skew = skew.validated(schema)?;

    // Per categorical slot, the sampling distribution over its vocabulary.
    let mut categorical = Vec::new();
    for slot in schema.categorical_slots() {
        let mut weights = vec![f64::NAN; slot.vocab.len()];
        let mut claimed = 0.0;
        for (i, v) in slot.vocab.iter().enumerate() {
            if let Some(&p) = skew.get(&(slot.name.clone(), v.clone())) {
                weights[i] = p;
                claimed += p;
            }
        }
        let free = weights.iter().filter(|w| w.is_nan()).count();
        if claimed > 1.0 + 1e-9 {
            return Err(Error::schema(
                &slot.name,
                format!("skewed probabilities sum to {claimed} > 1"),
            ));
        }
        let rest = if free > 0 {
            (1.0 - claimed).max(0.0) / free as f64
        } else {
            0.0
        };
        for w in &mut weights {
            if w.is_nan() {
                *w = rest;
            }
        }
        let dist = WeightedIndex::new(&weights)
            .map_err(|e| Error::schema(&slot.name, format!("degenerate skew: {e}")))?;
        categorical.push((slot, dist));
    }

    let detail_rates: Vec<(&str, f64)> = schema
        .binary_slots()
        .flat_map(|s| s.vocab.iter())
        .map(|v| {
            let slot = schema.detail_slot(v).expect("detail belongs to a binary slot");
            let p = skew
                .get(&(slot.name.clone(), v.clone()))
                .copied()
                .unwrap_or(UNSKEWED_DETAIL_RATE);
            (v.as_str(), p)
        })
        .collect();

    let zipf: Vec<f64> = (0..BRAND_POOL.len()).map(|i| 1.0 / (i as f64 + 1.0)).collect();
    let brand_dist = WeightedIndex::new(&zipf).expect("zipf weights are positive");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(size);
    for i in 0..size {
        let mut attrs = BTreeMap::new();
        for (slot, dist) in &categorical {
            let v = &slot.vocab[dist.sample(&mut rng)];
            attrs.insert(slot.name.clone(), v.clone());
        }
        let mut details = BTreeSet::new();
        for &(detail, p) in &detail_rates {
            if rng.random::<f64>() < p {
                details.insert(detail.to_string());
            }
        }
        let brand = BRAND_POOL[brand_dist.sample(&mut rng)].to_string();
        let price_cents = rng.random_range(PRICE_MIN_CENTS..=PRICE_MAX_CENTS);
        let tags = attrs.get("style").cloned().into_iter().collect();
        items.push(Item {
            id: format!("i{i:06}"),
            attrs,
            details,
            brand,
            price_cents,
            tags,
        });
    }
    Catalog::new(schema.version, items)
}
