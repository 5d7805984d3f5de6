//! Structured refinement constraints parsed from a text delta.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::catalog::Item;
use crate::error::{Error, Result};
use crate::schema::AttributeSchema;

/// Placeholder values resolved against the anchor's color before encoding.
pub const DARKEN_STEP: &str = "darken-step";
pub const LIGHTEN_STEP: &str = "lighten-step";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectiveKind {
    /// Categorical: slot takes the value. Binary detail: detail is present.
    Set,
    /// Edit the anchor: drop a value it carries.
    Remove,
    /// Exclude a value regardless of the anchor.
    Negate,
    /// Style/trend preference; annotates, never filters.
    AddSoft,
}

impl DirectiveKind {
    pub fn is_hard(self) -> bool {
        !matches!(self, DirectiveKind::AddSoft)
    }

    /// Whether satisfying the directive means the value is absent.
    pub fn is_exclusion(self) -> bool {
        matches!(self, DirectiveKind::Remove | DirectiveKind::Negate)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Directive {
    pub id: String,
    pub kind: DirectiveKind,
    pub slot: String,
    pub value: String,
}

impl Directive {
    pub fn is_relative(&self) -> bool {
        self.value == DARKEN_STEP || self.value == LIGHTEN_STEP
    }

    pub fn is_satisfied_by(&self, item: &Item, schema: &AttributeSchema) -> bool {
        let carries = item.carries(schema, &self.slot, &self.value);
        if self.kind.is_exclusion() {
            !carries
        } else {
            carries
        }
    }

    /// Short human rendering, e.g. "no pocket", "color black", "with belt".
    pub fn render(&self, schema: &AttributeSchema) -> String {
        let binary = schema.slot(&self.slot).is_some_and(|s| s.is_binary());
        match (self.kind, binary) {
            (DirectiveKind::Set, true) => format!("with {}", self.value),
            (DirectiveKind::Set, false) => format!("{} {}", self.slot, self.value),
            (DirectiveKind::Remove | DirectiveKind::Negate, true) => format!("no {}", self.value),
            (DirectiveKind::Remove | DirectiveKind::Negate, false) => {
                format!("{} not {}", self.slot, self.value)
            }
            (DirectiveKind::AddSoft, _) => format!("{} {}", self.slot, self.value),
        }
    }
}

/// Template form used by lexicon files and text backends (no id yet).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectiveTemplate {
    pub kind: DirectiveKind,
    pub slot: String,
    pub value: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub directives: Vec<Directive>,
    pub raw_text: String,
    /// Phrases that could not be resolved, backend fallbacks, dropped
    /// relative edits.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ConstraintSet {
    pub fn new(raw_text: impl Into<String>) -> Self {
        Self {
            raw_text: raw_text.into(),
            ..Self::default()
        }
    }

    /// Appends a directive unless an identical one is already present.
    pub fn push(&mut self, kind: DirectiveKind, slot: &str, value: &str) -> bool {
        if self
            .directives
            .iter()
            .any(|d| d.kind == kind && d.slot == slot && d.value == value)
        {
            return false;
        }
        let id = format!("c{}", self.next_id());
        self.directives.push(Directive {
            id,
            kind,
            slot: slot.to_string(),
            value: value.to_string(),
        });
        true
    }

    pub fn with(mut self, kind: DirectiveKind, slot: &str, value: &str) -> Self {
        self.push(kind, slot, value);
        self
    }

    fn next_id(&self) -> usize {
        self.directives
            .iter()
            .filter_map(|d| d.id.strip_prefix('c')?.parse::<usize>().ok())
            .max()
            .map_or(1, |m| m + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.directives.is_empty()
    }

    pub fn hard(&self) -> impl Iterator<Item = &Directive> {
        self.directives.iter().filter(|d| d.kind.is_hard())
    }

    pub fn touched_slots(&self) -> BTreeSet<String> {
        self.directives.iter().map(|d| d.slot.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&Directive> {
        self.directives.iter().find(|d| d.id == id)
    }

    /// Every directive names a real slot and value; relative color steps
    /// are accepted on categorical slots until resolved.
    pub fn validate(&self, schema: &AttributeSchema) -> Result<()> {
        let mut ids = BTreeSet::new();
        for d in &self.directives {
            if !ids.insert(d.id.as_str()) {
                return Err(Error::schema(&d.slot, format!("duplicate directive id `{}`", d.id)));
            }
            if d.is_relative() {
                let def = schema
                    .slot(&d.slot)
                    .ok_or_else(|| Error::schema(&d.slot, "unknown slot"))?;
                if def.is_binary() || d.kind != DirectiveKind::Set {
                    return Err(Error::schema(&d.slot, "relative step only applies to set on a categorical slot"));
                }
            } else {
                schema.check_value(&d.slot, &d.value)?;
            }
        }
        Ok(())
    }

    pub fn has_relative(&self) -> bool {
        self.directives.iter().any(Directive::is_relative)
    }

    /// Replaces darken/lighten steps with a concrete value one step along
    /// `order` from `current`. Steps that cannot move are dropped with a
    /// warning.
    pub fn resolve_relative(&mut self, current: Option<&str>, order: &[String]) {
        let mut dropped = Vec::new();
        for d in &mut self.directives {
            if !d.is_relative() {
                continue;
            }
            let pos = current.and_then(|c| order.iter().position(|o| o == c));
            let target = match (pos, d.value.as_str()) {
                (Some(p), DARKEN_STEP) => order.get(p + 1),
                (Some(p), LIGHTEN_STEP) if p > 0 => order.get(p - 1),
                _ => None,
            };
            match target {
                Some(t) => d.value = t.clone(),
                None => dropped.push(d.id.clone()),
            }
        }
        for id in dropped {
            let d = self
                .directives
                .iter()
                .position(|d| d.id == id)
                .map(|i| self.directives.remove(i))
                .expect("id collected above");
            self.warnings.push(format!(
                "dropped `{}` on {}: no step available from {}",
                d.value,
                d.slot,
                current.unwrap_or("unknown")
            ));
        }
    }

    /// Ids of satisfied and violated directives (hard and soft).
    pub fn check(&self, item: &Item, schema: &AttributeSchema) -> (Vec<String>, Vec<String>) {
        let mut sat = Vec::new();
        let mut vio = Vec::new();
        for d in &self.directives {
            if d.is_satisfied_by(item, schema) {
                sat.push(d.id.clone());
            } else {
                vio.push(d.id.clone());
            }
        }
        (sat, vio)
    }

    pub fn satisfies_hard(&self, item: &Item, schema: &AttributeSchema) -> bool {
        self.hard().all(|d| d.is_satisfied_by(item, schema))
    }
}
