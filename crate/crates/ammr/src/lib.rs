//! HTTP service and engine loading for the `ammr` binary.

pub mod service;

use std::path::Path;
use std::sync::Arc;

use ammr_core::catalog::Catalog;
use ammr_core::index::load_index;
use ammr_core::pipeline::{Engine, EngineConfig};
use ammr_core::planner::{HttpTextBackend, Lexicon, TextBackend, TrendSource};
use ammr_core::schema::{load_schema, AttributeSchema};

/// Optional inputs layered onto a served engine.
#[derive(Debug, Default, Clone)]
pub struct EngineFiles<'a> {
    pub schema: Option<&'a Path>,
    pub trend_file: Option<&'a Path>,
    pub lexicon: Option<&'a Path>,
}

pub fn schema_or_default(path: Option<&Path>) -> anyhow::Result<AttributeSchema> {
    Ok(match path {
        Some(p) => load_schema(p)?,
        None => AttributeSchema::default_schema(),
    })
}

/// Loads catalog + prebuilt index and wires the optional lexicon, trend
/// file and text backend (from `AMMR_TEXT_BACKEND_URL`).
pub fn load_engine(catalog: &Path, index: &Path, files: &EngineFiles<'_>, config: EngineConfig) -> anyhow::Result<Engine> {
    let schema = schema_or_default(files.schema)?;
    let catalog = Catalog::load(catalog, &schema)?;
    let index = load_index(index)?;
    let mut engine = Engine::new(schema, catalog, index, config)?;
    if let Some(p) = files.lexicon {
        let lexicon = Lexicon::load(p, &engine.schema)?;
        engine = engine.with_lexicon(lexicon);
    }
    if let Some(p) = files.trend_file {
        engine = engine.with_trends(Some(TrendSource::file(p)));
    }
    if let Some(backend) = HttpTextBackend::from_env()? {
        log::info!("text backend enabled");
        engine = engine.with_backend(Some(Arc::new(backend) as Arc<dyn TextBackend>));
    }
    Ok(engine)
}
