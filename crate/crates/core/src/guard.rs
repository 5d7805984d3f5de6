//! Post-retrieval attribute guard and constraint-satisfaction scoring.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, Item};
use crate::constraints::{ConstraintSet, Directive};
use crate::error::{Error, Result};
use crate::index::CandidateSet;
use crate::schema::AttributeSchema;

/// Answers "does this item satisfy this directive?" with a probability.
/// Metadata is ground truth here; a neural checker would plug in behind the
/// same contract.
pub trait AttributeVerifier: Sync {
    fn probability(&self, item: &Item, directive: &Directive, schema: &AttributeSchema) -> f64;
}

/// Exact check against catalog metadata (answers 0 or 1).
#[derive(Debug, Clone, Copy, Default)]
pub struct MetadataVerifier;

impl AttributeVerifier for MetadataVerifier {
    fn probability(&self, item: &Item, directive: &Directive, schema: &AttributeSchema) -> f64 {
        if directive.is_satisfied_by(item, schema) {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateVerdict {
    pub item_id: String,
    pub satisfied: Vec<String>,
    pub violated: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardReport {
    pub verdicts: Vec<CandidateVerdict>,
    pub kept: Vec<String>,
    pub dropped: Vec<String>,
}

impl GuardReport {
    pub fn verdict(&self, item_id: &str) -> Option<&CandidateVerdict> {
        self.verdicts.iter().find(|v| v.item_id == item_id)
    }

    /// The kept candidates, in their original order.
    pub fn filter(&self, candidates: &CandidateSet) -> CandidateSet {
        let kept: std::collections::HashSet<&str> = self.kept.iter().map(String::as_str).collect();
        let mut out = candidates.clone();
        out.entries.retain(|c| kept.contains(c.item_id.as_str()));
        out
    }
}

/// Metadata guard: every directive is checked; items violating a hard one
/// are dropped, soft directives only annotate.
pub fn verify_candidates(
    candidates: &CandidateSet,
    constraints: &ConstraintSet,
    catalog: &Catalog,
    schema: &AttributeSchema,
) -> Result<GuardReport> {
    verify_candidates_with(&MetadataVerifier, 0.5, candidates, constraints, catalog, schema)
}

/// Guard over an arbitrary verifier: a directive counts as satisfied when
/// the verifier's probability is at least `threshold`.
pub fn verify_candidates_with(
    verifier: &dyn AttributeVerifier,
    threshold: f64,
    candidates: &CandidateSet,
    constraints: &ConstraintSet,
    catalog: &Catalog,
    schema: &AttributeSchema,
) -> Result<GuardReport> {
    constraints.validate(schema)?;
    if let Some(d) = constraints.directives.iter().find(|d| d.is_relative()) {
        return Err(Error::schema(&d.slot, format!("unresolved relative value `{}`", d.value)));
    }
    let verdicts: Vec<(CandidateVerdict, bool)> = candidates
        .entries
        .par_iter()
        .map(|c| {
            let item = catalog.require(&c.item_id)?;
            let mut v = CandidateVerdict {
                item_id: c.item_id.clone(),
                satisfied: Vec::new(),
                violated: Vec::new(),
            };
            let mut hard_ok = true;
            for d in &constraints.directives {
                if verifier.probability(item, d, schema) >= threshold {
                    v.satisfied.push(d.id.clone());
                } else {
                    hard_ok &= !d.kind.is_hard();
                    v.violated.push(d.id.clone());
                }
            }
            Ok((v, hard_ok))
        })
        .collect::<Result<_>>()?;

    let mut report = GuardReport::default();
    for (v, ok) in verdicts {
        if ok {
            report.kept.push(v.item_id.clone());
        } else {
            report.dropped.push(v.item_id.clone());
        }
        report.verdicts.push(v);
    }
    Ok(report)
}

/// Fraction of the top `min(k, |candidates|)` satisfying every hard
/// constraint; 0 for an empty list. Unknown ids count as violations.
pub fn csr(
    candidates: &CandidateSet,
    constraints: &ConstraintSet,
    catalog: &Catalog,
    schema: &AttributeSchema,
    k: usize,
) -> f64 {
    let top = &candidates.entries[..k.min(candidates.len())];
    if top.is_empty() {
        return 0.0;
    }
    let ok = top
        .iter()
        .filter(|c| {
            catalog
                .get(&c.item_id)
                .is_some_and(|item| constraints.satisfies_hard(item, schema))
        })
        .count();
    ok as f64 / top.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::parse_item_record;
    use crate::constraints::DirectiveKind;
    use crate::index::Candidate;

    fn schema() -> AttributeSchema {
        AttributeSchema::default_schema()
    }

    fn item(id: &str, details: &[&str]) -> Item {
        let details = details.iter().map(|d| format!("\"{d}\"")).collect::<Vec<_>>().join(",");
        parse_item_record(
            &format!(r#"{{"id":"{id}","attrs":{{"color":"blue","material":"cotton","silhouette":"hoodie","style":"casual"}},"details":[{details}],"brand":"Corvo","price_cents":3000,"tags":[]}}"#),
            &schema(),
        )
        .unwrap()
    }

    fn fixture() -> (Catalog, CandidateSet) {
        let pocketed = [1, 4, 6, 9];
        let items: Vec<Item> = (0..10)
            .map(|i| {
                let id = format!("i{i}");
                if pocketed.contains(&i) {
                    item(&id, &["pocket"])
                } else {
                    item(&id, &["belt"])
                }
            })
            .collect();
        let cands = CandidateSet {
            query_id: "q".into(),
            entries: items
                .iter()
                .enumerate()
                .map(|(i, it)| Candidate {
                    item_id: it.id.clone(),
                    ordinal: i,
                    score: 1.0 - i as f64 * 0.01,
                })
                .collect(),
            truncated_at: 10,
        };
        (Catalog::new(1, items).unwrap(), cands)
    }

    #[test]
    fn empty_constraints_keep_everything() {
        let (cat, cands) = fixture();
        let r = verify_candidates(&cands, &ConstraintSet::new(""), &cat, &schema()).unwrap();
        assert_eq!(r.kept.len(), 10);
        assert!(r.dropped.is_empty());
    }

    #[test]
    fn remove_pocket_keeps_the_six_in_order() {
        let (cat, cands) = fixture();
        let cs = ConstraintSet::new("without a pocket").with(DirectiveKind::Remove, "detail", "pocket");
        let r = verify_candidates(&cands, &cs, &cat, &schema()).unwrap();
        assert_eq!(r.kept, vec!["i0", "i2", "i3", "i5", "i7", "i8"]);
        assert_eq!(r.dropped, vec!["i1", "i4", "i6", "i9"]);
        assert_eq!(r.verdict("i1").unwrap().violated, vec!["c1"]);
        let kept = r.filter(&cands);
        assert_eq!(kept.ids(), r.kept.iter().map(String::as_str).collect::<Vec<_>>());
        assert_eq!(csr(&kept, &cs, &cat, &schema(), 10), 1.0);
        assert!((csr(&cands, &cs, &cat, &schema(), 10) - 0.6).abs() < 1e-15);
        assert!((csr(&cands, &cs, &cat, &schema(), 5) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn soft_directives_annotate_only() {
        let (cat, cands) = fixture();
        let cs = ConstraintSet::new("x").with(DirectiveKind::AddSoft, "style", "floral");
        let r = verify_candidates(&cands, &cs, &cat, &schema()).unwrap();
        assert_eq!(r.kept.len(), 10);
        assert!(r.verdicts.iter().all(|v| v.violated == vec!["c1"]));
    }

    #[test]
    fn unknown_value_and_item_are_errors() {
        let (cat, mut cands) = fixture();
        let cs = ConstraintSet::new("x").with(DirectiveKind::Negate, "detail", "zipper");
        assert!(matches!(
            verify_candidates(&cands, &cs, &cat, &schema()),
            Err(Error::Schema { .. })
        ));
        cands.entries[0].item_id = "nope".into();
        let ok = ConstraintSet::new("x");
        assert!(matches!(
            verify_candidates(&cands, &ok, &cat, &schema()),
            Err(Error::UnknownItem(_))
        ));
    }

    #[test]
    fn csr_of_empty_list_is_zero() {
        let (cat, mut cands) = fixture();
        cands.entries.clear();
        assert_eq!(csr(&cands, &ConstraintSet::new(""), &cat, &schema(), 10), 0.0);
    }
}
