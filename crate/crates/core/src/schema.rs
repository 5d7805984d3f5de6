//! Attribute schema: the slot vocabularies that every item, constraint and
//! embedding slice is expressed in.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The schema shipped with the crate (color, material, silhouette, binary
/// details, style).
pub const DEFAULT_SCHEMA_JSON: &str = include_str!("../data/schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SlotKind {
    /// Exactly one value per item.
    #[serde(rename = "categorical")]
    Categorical,
    /// Any subset of the vocabulary may be active (pocket, belt, ...).
    #[serde(rename = "binary-detail")]
    BinaryDetail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotDef {
    pub name: String,
    pub kind: SlotKind,
    pub vocab: Vec<String>,
}

impl SlotDef {
    /// One coordinate per vocabulary value, for both slot kinds.
    pub fn slice_width(&self) -> usize {
        self.vocab.len()
    }

    pub fn value_index(&self, value: &str) -> Option<usize> {
        self.vocab.iter().position(|v| v == value)
    }

    pub fn is_binary(&self) -> bool {
        self.kind == SlotKind::BinaryDetail
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSchema {
    pub version: u32,
    pub slots: Vec<SlotDef>,
}

impl AttributeSchema {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let schema: AttributeSchema = serde_json::from_str(text).map_err(|e| Error::Format {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn default_schema() -> Self {
        Self::from_json_str(DEFAULT_SCHEMA_JSON).expect("shipped schema is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.slots.is_empty() {
            return Err(Error::schema("<none>", "schema declares no slots"));
        }
        let mut names = HashSet::new();
        let mut details = HashSet::new();
        for slot in &self.slots {
            if slot.name.is_empty() || slot.name.contains(|c: char| c.is_whitespace() || c == '.')
            {
                return Err(Error::schema(&slot.name, "slot name must be a non-empty identifier"));
            }
            if !names.insert(slot.name.as_str()) {
                return Err(Error::schema(&slot.name, "duplicate slot"));
            }
            if slot.vocab.len() < 2 {
                return Err(Error::schema(
                    &slot.name,
                    format!("vocabulary needs at least 2 values, has {}", slot.vocab.len()),
                ));
            }
            let mut seen = HashSet::new();
            for value in &slot.vocab {
                if value.is_empty() {
                    return Err(Error::schema(&slot.name, "empty vocabulary value"));
                }
                if !seen.insert(value.as_str()) {
                    return Err(Error::schema(&slot.name, format!("duplicate value `{value}`")));
                }
                // Item records list active details without their slot, so
                // detail names must be unambiguous across binary slots.
                if slot.is_binary() && !details.insert(value.clone()) {
                    return Err(Error::schema(
                        &slot.name,
                        format!("detail `{value}` appears in more than one binary slot"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn total_width(&self) -> usize {
        self.slots.iter().map(SlotDef::slice_width).sum()
    }

    pub fn slot(&self, name: &str) -> Option<&SlotDef> {
        self.slots.iter().find(|s| s.name == name)
    }

    pub fn slot_index(&self, name: &str) -> Option<usize> {
        self.slots.iter().position(|s| s.name == name)
    }

    /// Binary slot owning the given detail value.
    pub fn detail_slot(&self, detail: &str) -> Option<&SlotDef> {
        self.slots
            .iter()
            .find(|s| s.is_binary() && s.value_index(detail).is_some())
    }

    pub fn categorical_slots(&self) -> impl Iterator<Item = &SlotDef> {
        self.slots.iter().filter(|s| !s.is_binary())
    }

    pub fn binary_slots(&self) -> impl Iterator<Item = &SlotDef> {
        self.slots.iter().filter(|s| s.is_binary())
    }

    /// Checks that `slot.value` names a real vocabulary entry.
    pub fn check_value(&self, slot: &str, value: &str) -> Result<&SlotDef> {
        let def = self
            .slot(slot)
            .ok_or_else(|| Error::schema(slot, "unknown slot"))?;
        if def.value_index(value).is_none() {
            return Err(Error::schema(slot, format!("unknown value `{value}`")));
        }
        Ok(def)
    }
}

pub fn load_schema(path: impl AsRef<Path>) -> Result<AttributeSchema> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    AttributeSchema::from_json_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_schema_width() {
        let schema = AttributeSchema::default_schema();
        let widths: Vec<_> = schema.slots.iter().map(|s| s.slice_width()).collect();
        assert_eq!(widths, vec![8, 5, 6, 4, 6]);
        assert_eq!(schema.total_width(), 29);
    }

    #[test]
    fn minimal_schema() {
        let schema = AttributeSchema::from_json_str(
            r#"{"version":1,"slots":[{"name":"x","kind":"categorical","vocab":["a","b"]}]}"#,
        )
        .unwrap();
        assert_eq!(schema.total_width(), 2);
    }

    #[test]
    fn duplicate_slot_rejected() {
        let err = AttributeSchema::from_json_str(
            r#"{"version":1,"slots":[
                {"name":"color","kind":"categorical","vocab":["a","b"]},
                {"name":"color","kind":"categorical","vocab":["c","d"]}]}"#,
        )
        .unwrap_err();
        match err {
            Error::Schema { slot, .. } => assert_eq!(slot, "color"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_and_singleton_vocab_rejected() {
        for vocab in [r#"[]"#, r#"["only"]"#] {
            let text = format!(
                r#"{{"version":1,"slots":[{{"name":"s","kind":"categorical","vocab":{vocab}}}]}}"#
            );
            assert!(matches!(
                AttributeSchema::from_json_str(&text),
                Err(Error::Schema { .. })
            ));
        }
    }

    #[test]
    fn load_schema_reports_missing_file() {
        let err = load_schema("/definitely/not/here.json").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
