//! File-backed trend stub: token → soft style directive.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::constraints::{DirectiveKind, DirectiveTemplate};
use crate::error::{Error, Result};

pub const DEFAULT_TRENDS_JSON: &str = include_str!("../../data/trends.json");

#[derive(Debug, Deserialize)]
struct Entry {
    slot: String,
    value: String,
}

/// Where trend mappings come from. A file is re-read on every query so
/// edits are visible to the next episode.
#[derive(Debug, Clone, PartialEq)]
pub enum TrendSource {
    File(PathBuf),
    Static(BTreeMap<String, DirectiveTemplate>),
}

fn parse(text: &str) -> Result<BTreeMap<String, DirectiveTemplate>> {
    let raw: BTreeMap<String, Entry> = serde_json::from_str(text).map_err(|e| Error::Format {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    Ok(raw
        .into_iter()
        .map(|(token, e)| {
            (
                token.to_lowercase(),
                DirectiveTemplate {
                    kind: DirectiveKind::AddSoft,
                    slot: e.slot,
                    value: e.value,
                },
            )
        })
        .collect())
}

impl TrendSource {
    pub fn file(path: impl Into<PathBuf>) -> Self {
        TrendSource::File(path.into())
    }

    /// The stub shipped with the crate.
    pub fn shipped() -> Self {
        TrendSource::Static(parse(DEFAULT_TRENDS_JSON).expect("shipped trend stub parses"))
    }

    pub fn path(&self) -> Option<&Path> {
        match self {
            TrendSource::File(p) => Some(p),
            TrendSource::Static(_) => None,
        }
    }

    /// Current token map (fresh read for files).
    pub fn load(&self) -> Result<BTreeMap<String, DirectiveTemplate>> {
        match self {
            TrendSource::File(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                parse(&text)
            }
            TrendSource::Static(map) => Ok(map.clone()),
        }
    }
}

pub fn query_trend_source(token: &str, source: &TrendSource) -> Result<Option<DirectiveTemplate>> {
    Ok(source.load()?.remove(&token.to_lowercase()))
}
