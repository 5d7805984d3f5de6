//! Policy critic: price cap, banned values and a brand-share cap over the
//! top-k. "ROI" has no business data behind it here; the price cap and
//! brand share stand in for it.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, Item};
use crate::error::{Error, Result};
use crate::index::CandidateSet;
use crate::schema::AttributeSchema;

pub const ROI_NOTE: &str = "roi approximated by price cap and brand-share policy";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CriticPolicy {
    pub max_price_cents: Option<u64>,
    /// `slot.value` (e.g. `style.floral`) or `brand.<name>`.
    pub banned_values: BTreeSet<String>,
    pub max_brand_share: f64,
    pub k_min: usize,
}

impl Default for CriticPolicy {
    fn default() -> Self {
        Self {
            max_price_cents: None,
            banned_values: BTreeSet::new(),
            max_brand_share: 1.0,
            k_min: 10,
        }
    }
}

impl CriticPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.k_min == 0 {
            return Err(Error::Config("k_min must be at least 1".into()));
        }
        if !(self.max_brand_share > 0.0 && self.max_brand_share <= 1.0) {
            return Err(Error::Config(format!(
                "max_brand_share {} outside (0, 1]",
                self.max_brand_share
            )));
        }
        for b in &self.banned_values {
            if !b.contains('.') {
                return Err(Error::Config(format!("banned value `{b}` is not slot.value")));
            }
        }
        Ok(())
    }

    /// `⌈max_brand_share · k⌉`.
    pub fn brand_cap(&self, k: usize) -> usize {
        ((self.max_brand_share * k as f64) - 1e-9).ceil().max(1.0) as usize
    }

    fn banned_hit(&self, item: &Item, schema: &AttributeSchema) -> Option<String> {
        self.banned_values
            .iter()
            .find(|b| {
                let (slot, value) = b.split_once('.').expect("validated");
                if slot == "brand" {
                    item.brand == value
                } else {
                    item.carries(schema, slot, value)
                }
            })
            .cloned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticRule {
    PriceCap,
    BannedValue,
    UnknownItem,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticDrop {
    pub item_id: String,
    pub rule: CriticRule,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticReport {
    pub dropped: Vec<CriticDrop>,
    /// Items pushed below rank k by the brand cap, in original order.
    pub demoted: Vec<String>,
    pub brand_cap: usize,
    pub k: usize,
    pub notes: Vec<String>,
}

impl CriticReport {
    pub fn count(&self, rule: CriticRule) -> usize {
        self.dropped.iter().filter(|d| d.rule == rule).count()
    }
}

/// Filters by price and banned values, then enforces the brand cap in the
/// top `k` by demoting excess items below rank `k`. Never adds items.
pub fn critic_review(
    candidates: &CandidateSet,
    policy: &CriticPolicy,
    catalog: &Catalog,
    schema: &AttributeSchema,
    k: usize,
) -> Result<(CandidateSet, CriticReport)> {
    policy.validate()?;
    let k = k.max(1);
    let mut report = CriticReport {
        brand_cap: policy.brand_cap(k),
        k,
        notes: vec![ROI_NOTE.to_string()],
        ..CriticReport::default()
    };

    let mut passed = Vec::with_capacity(candidates.len());
    for c in &candidates.entries {
        let Some(item) = catalog.get(&c.item_id) else {
            report.dropped.push(CriticDrop {
                item_id: c.item_id.clone(),
                rule: CriticRule::UnknownItem,
                detail: "not in catalog".into(),
            });
            continue;
        };
        if let Some(cap) = policy.max_price_cents {
            if item.price_cents > cap {
                report.dropped.push(CriticDrop {
                    item_id: c.item_id.clone(),
                    rule: CriticRule::PriceCap,
                    detail: format!("price {} > cap {cap}", item.price_cents),
                });
                continue;
            }
        }
        if let Some(b) = policy.banned_hit(item, schema) {
            report.dropped.push(CriticDrop {
                item_id: c.item_id.clone(),
                rule: CriticRule::BannedValue,
                detail: b,
            });
            continue;
        }
        passed.push((c.clone(), item.brand.as_str()));
    }

    let mut top = Vec::with_capacity(k);
    let mut demoted = Vec::new();
    let mut rest = Vec::new();
    let mut per_brand: HashMap<&str, usize> = HashMap::new();
    for (c, brand) in passed {
        if top.len() < k {
            let n = per_brand.entry(brand).or_default();
            if *n < report.brand_cap {
                *n += 1;
                top.push(c);
            } else {
                report.demoted.push(c.item_id.clone());
                demoted.push(c);
            }
        } else {
            rest.push(c);
        }
    }

    let mut out = candidates.clone();
    out.entries = top;
    out.entries.extend(demoted);
    out.entries.extend(rest);
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::parse_item_record;
    use crate::index::Candidate;

    fn schema() -> AttributeSchema {
        AttributeSchema::default_schema()
    }

    fn item(id: &str, brand: &str, price: u64) -> Item {
        parse_item_record(
            &format!(r#"{{"id":"{id}","attrs":{{"color":"blue","material":"cotton","silhouette":"hoodie","style":"casual"}},"details":[],"brand":"{brand}","price_cents":{price},"tags":[]}}"#),
            &schema(),
        )
        .unwrap()
    }

    fn set(items: &[Item]) -> CandidateSet {
        CandidateSet {
            query_id: String::new(),
            entries: items
                .iter()
                .enumerate()
                .map(|(i, it)| Candidate {
                    item_id: it.id.clone(),
                    ordinal: i,
                    score: 1.0 - i as f64 / 100.0,
                })
                .collect(),
            truncated_at: items.len(),
        }
    }

    fn fourteen() -> Vec<Item> {
        // Brand A holds 6 of the top 10.
        let brands = ["A", "B", "A", "A", "C", "A", "D", "A", "E", "A", "F", "G", "H", "I"];
        brands
            .iter()
            .enumerate()
            .map(|(i, b)| item(&format!("i{i:02}"), b, 2000 + 100 * i as u64))
            .collect()
    }

    #[test]
    fn permissive_policy_is_identity() {
        let items = fourteen();
        let cat = Catalog::new(1, items.clone()).unwrap();
        let input = set(&items);
        let (out, report) = critic_review(&input, &CriticPolicy::default(), &cat, &schema(), 10).unwrap();
        assert_eq!(out, input);
        assert!(report.dropped.is_empty() && report.demoted.is_empty());
    }

    #[test]
    fn brand_cap_arithmetic() {
        let items = fourteen();
        let cat = Catalog::new(1, items.clone()).unwrap();
        let policy = CriticPolicy {
            max_brand_share: 0.3,
            ..CriticPolicy::default()
        };
        assert_eq!(policy.brand_cap(10), 3);
        let (out, report) = critic_review(&set(&items), &policy, &cat, &schema(), 10).unwrap();
        let top: Vec<&str> = out.entries[..10].iter().map(|c| c.item_id.as_str()).collect();
        let a_count = top.iter().filter(|id| cat.get(id).unwrap().brand == "A").count();
        assert_eq!(a_count, 3);
        assert_eq!(out.len(), 14);
        // Demoted A items follow the new top-10 in their original order.
        assert_eq!(report.demoted, vec!["i05", "i07", "i09"]);
        let tail: Vec<&str> = out.entries[10..].iter().map(|c| c.item_id.as_str()).collect();
        assert_eq!(tail, vec!["i05", "i07", "i09", "i13"]);
    }

    #[test]
    fn price_cap_below_catalog_empties_the_list() {
        let items = fourteen();
        let cat = Catalog::new(1, items.clone()).unwrap();
        let policy = CriticPolicy {
            max_price_cents: Some(100),
            ..CriticPolicy::default()
        };
        let (out, report) = critic_review(&set(&items), &policy, &cat, &schema(), 10).unwrap();
        assert!(out.is_empty());
        assert_eq!(report.count(CriticRule::PriceCap), 14);
    }

    #[test]
    fn banned_values_and_brands() {
        let items = fourteen();
        let cat = Catalog::new(1, items.clone()).unwrap();
        let policy = CriticPolicy {
            banned_values: ["brand.A".to_string(), "color.red".to_string()].into(),
            ..CriticPolicy::default()
        };
        let (out, report) = critic_review(&set(&items), &policy, &cat, &schema(), 10).unwrap();
        assert_eq!(out.len(), 8);
        assert_eq!(report.count(CriticRule::BannedValue), 6);
        let bad = CriticPolicy {
            banned_values: ["floral".to_string()].into(),
            ..CriticPolicy::default()
        };
        assert!(critic_review(&set(&items), &bad, &cat, &schema(), 10).is_err());
    }
}
