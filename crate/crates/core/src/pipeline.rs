//! Shared retrieval engine: immutable schema, catalog and index plus the
//! composition and retrieval steps every pipeline uses.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::composer::{
    apply_memory, apply_value_multipliers, compose_baseline, compose_delta_shift, compose_film,
    compose_tirg, ComposerParams, ComposerVariant, WeightedQuery,
};
use crate::constraints::ConstraintSet;
use crate::embedding::{encode_constraints, encode_item_disentangled, exclusion_vector, EmbeddingVector, SliceLayout};
use crate::error::{Error, Result};
use crate::index::{
    build_index, search, CandidateSet, EncoderTag, Index, IndexKind, DEFAULT_K, DEFAULT_N_PROBE,
};
use crate::planner::{CriticPolicy, Lexicon, TextBackend, TrendSource};
use crate::rankers::{ensemble_rank, SpecialistRanker};
use crate::schema::AttributeSchema;
use crate::session::SessionWeights;

pub const DEFAULT_RESULT_K: usize = 10;
pub const DEFAULT_RANKER_WEIGHT: f64 = 4.0;
pub const DEFAULT_MAX_STEPS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Candidate budget pulled from the index per cycle.
    pub k: usize,
    pub n_probe: usize,
    /// Results returned to the user.
    pub result_k: usize,
    pub ranker_weight: f64,
    pub max_steps: usize,
    pub composer: ComposerVariant,
    pub policy: CriticPolicy,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            n_probe: DEFAULT_N_PROBE,
            result_k: DEFAULT_RESULT_K,
            ranker_weight: DEFAULT_RANKER_WEIGHT,
            max_steps: DEFAULT_MAX_STEPS,
            composer: ComposerVariant::DeltaShift,
            policy: CriticPolicy::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n_probe == 0 || self.result_k == 0 || self.max_steps == 0 {
            return Err(Error::Config("k, n_probe, result_k and max_steps must be positive".into()));
        }
        if !(self.ranker_weight >= 0.0 && self.ranker_weight.is_finite()) {
            return Err(Error::Config(format!("ranker weight {} must be non-negative", self.ranker_weight)));
        }
        self.policy.validate()
    }
}

/// What the user points at: a catalog item or an ingested vector in the
/// disentangled layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    Item(String),
    Vector(Vec<f64>),
}

pub fn encode_catalog(catalog: &Catalog, schema: &AttributeSchema, layout: &SliceLayout) -> Result<Vec<EmbeddingVector>> {
    catalog
        .items()
        .par_iter()
        .map(|item| encode_item_disentangled(item, schema, layout))
        .collect()
}

pub struct Engine {
    pub schema: AttributeSchema,
    pub layout: SliceLayout,
    pub catalog: Catalog,
    pub index: Index,
    pub lexicon: Lexicon,
    pub trends: Option<TrendSource>,
    pub backend: Option<Arc<dyn TextBackend>>,
    /// Trained gated-composer parameters; missing variants fall back to
    /// the identity parameterization.
    pub composer_params: Option<ComposerParams>,
    pub config: EngineConfig,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("items", &self.catalog.len())
            .field("index", &self.index.kind())
            .field("n_lists", &self.index.n_lists())
            .field("backend", &self.backend.is_some())
            .field("config", &self.config)
            .finish()
    }
}

impl Engine {
    /// Wraps a prebuilt disentangled index. Every indexed id must be in the
    /// catalog.
    pub fn new(schema: AttributeSchema, catalog: Catalog, index: Index, config: EngineConfig) -> Result<Self> {
        config.validate()?;
        let layout = SliceLayout::from_schema(&schema);
        if index.layout() != &layout {
            return Err(Error::Config("index layout does not match the schema's slice layout".into()));
        }
        // Ingested vectors share the disentangled layout contract.
        if !matches!(index.base().encoder(), EncoderTag::Disentangled | EncoderTag::External) {
            return Err(Error::Config("engine needs an index over disentangled or ingested embeddings".into()));
        }
        if let Some(id) = index.base().item_ids().iter().find(|id| catalog.get(id).is_none()) {
            return Err(Error::UnknownItem(id.clone()));
        }
        let lexicon = Lexicon::default_for(&schema)?;
        Ok(Self {
            schema,
            layout,
            catalog,
            index,
            lexicon,
            trends: Some(TrendSource::shipped()),
            backend: None,
            composer_params: None,
            config,
        })
    }

    /// Encodes the catalog and builds the index.
    pub fn build(
        schema: AttributeSchema,
        catalog: Catalog,
        kind: IndexKind,
        n_lists: usize,
        seed: u64,
        config: EngineConfig,
    ) -> Result<Self> {
        let layout = SliceLayout::from_schema(&schema);
        let vectors = encode_catalog(&catalog, &schema, &layout)?;
        let ids = catalog.items().iter().map(|i| i.id.clone()).collect();
        let index = build_index(&layout, EncoderTag::Disentangled, ids, &vectors, kind, n_lists, seed)?;
        Self::new(schema, catalog, index, config)
    }

    pub fn with_lexicon(mut self, lexicon: Lexicon) -> Self {
        self.lexicon = lexicon;
        self
    }

    pub fn with_trends(mut self, trends: Option<TrendSource>) -> Self {
        self.trends = trends;
        self
    }

    pub fn with_backend(mut self, backend: Option<Arc<dyn TextBackend>>) -> Self {
        self.backend = backend;
        self
    }

    pub fn with_composer_params(mut self, params: Option<ComposerParams>) -> Self {
        self.composer_params = params;
        self
    }

    pub fn anchor_embedding(&self, anchor: &Anchor) -> Result<EmbeddingVector> {
        match anchor {
            Anchor::Item(id) => {
                let item = self.catalog.require(id)?;
                if self.index.base().encoder() == EncoderTag::External {
                    let base = self.index.base();
                    let ordinal = base.resolve(&crate::index::Candidate {
                        item_id: id.clone(),
                        ordinal: self.catalog.ordinal(id).unwrap_or(0),
                        score: 0.0,
                    })?;
                    return Ok(EmbeddingVector {
                        values: base.row(ordinal).to_vec(),
                        layout_id: self.layout.id(),
                    });
                }
                encode_item_disentangled(item, &self.schema, &self.layout)
            }
            Anchor::Vector(values) => {
                if values.len() != self.layout.total_dim() {
                    return Err(Error::dim(self.layout.total_dim(), values.len()));
                }
                if values.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Config("anchor vector has non-finite entries".into()));
                }
                Ok(EmbeddingVector {
                    values: values.clone(),
                    layout_id: self.layout.id(),
                })
            }
        }
    }

    /// Current value of a categorical slot: the item's attribute, or the
    /// strongest positive coordinate of an ingested vector.
    pub fn anchor_value(&self, anchor: &Anchor, slot: &str) -> Option<String> {
        match anchor {
            Anchor::Item(id) => self.catalog.get(id)?.attr(slot).map(str::to_string),
            Anchor::Vector(values) => {
                let def = self.schema.slot(slot)?;
                let range = self.layout.range(slot)?;
                let (i, &best) = values[range]
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))?;
                (best > 0.0).then(|| def.vocab[i].clone())
            }
        }
    }

    fn gated_params(&self, variant: ComposerVariant) -> ComposerParams {
        match &self.composer_params {
            Some(p) if p.variant == variant && p.dim() == self.layout.total_dim() => p.clone(),
            _ => ComposerParams::identity(variant, self.layout.total_dim()),
        }
    }

    /// Anchor + resolved constraints → weighted query with exclusions and
    /// (optional) session conditioning.
    pub fn compose(
        &self,
        anchor: &EmbeddingVector,
        constraints: &ConstraintSet,
        variant: ComposerVariant,
        weights: Option<&SessionWeights>,
    ) -> Result<WeightedQuery> {
        let (delta, _mask) = encode_constraints(constraints, &self.schema, &self.layout, anchor)?;
        let q = match variant {
            ComposerVariant::DeltaShift => compose_delta_shift(anchor, &delta, &self.layout)?,
            ComposerVariant::Baseline => compose_baseline(
                anchor,
                &EmbeddingVector {
                    values: delta.values.clone(),
                    layout_id: anchor.layout_id,
                },
            )?,
            ComposerVariant::Tirg => compose_tirg(anchor, &delta, &self.gated_params(variant))?,
            ComposerVariant::Film => compose_film(anchor, &delta, &self.gated_params(variant))?,
        };
        let wq = match weights {
            Some(w) => {
                let q = apply_value_multipliers(&q, &w.multipliers, &self.schema, &self.layout)?;
                apply_memory(&q, &w.slot_weights, &self.layout)
            }
            None => WeightedQuery::unweighted(q, &self.layout),
        };
        wq.with_exclusions(exclusion_vector(constraints, &self.schema, &self.layout)?)
    }

    /// Index search (k and n_probe clamped to what the index holds) followed
    /// by the specialist ensemble.
    pub fn retrieve(
        &self,
        query: &WeightedQuery,
        k: usize,
        n_probe: usize,
        rankers: &[SpecialistRanker],
    ) -> Result<CandidateSet> {
        let k = k.clamp(1, self.index.len());
        let n_probe = n_probe.clamp(1, self.index.n_lists());
        let candidates = search(&self.index, query, k, n_probe)?;
        ensemble_rank(&candidates, query, rankers, self.index.base())
    }

    /// One specialist per slot touched by a hard directive.
    pub fn rankers_for(&self, constraints: &ConstraintSet) -> Vec<SpecialistRanker> {
        let slots: std::collections::BTreeSet<&str> = constraints.hard().map(|d| d.slot.as_str()).collect();
        slots
            .into_iter()
            .map(|s| SpecialistRanker::new(s, self.config.ranker_weight))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{generate_catalog, Skew};
    use crate::constraints::DirectiveKind;

    fn engine() -> Engine {
        let schema = AttributeSchema::default_schema();
        let cat = generate_catalog(&schema, 500, &Skew::new(), 3).unwrap();
        Engine::build(schema, cat, IndexKind::Exact, 1, 0, EngineConfig::default()).unwrap()
    }

    #[test]
    fn anchor_resolution() {
        let e = engine();
        let id = e.catalog.items()[0].id.clone();
        let v = e.anchor_embedding(&Anchor::Item(id.clone())).unwrap();
        let color = e.anchor_value(&Anchor::Item(id), "color").unwrap();
        assert_eq!(e.anchor_value(&Anchor::Vector(v.values.clone()), "color").unwrap(), color);
        assert!(matches!(
            e.anchor_embedding(&Anchor::Item("nope".into())),
            Err(Error::UnknownItem(_))
        ));
        assert!(matches!(
            e.anchor_embedding(&Anchor::Vector(vec![0.0; 3])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn fresh_weights_equal_memoryless_query() {
        let e = engine();
        let v = e.anchor_embedding(&Anchor::Item(e.catalog.items()[1].id.clone())).unwrap();
        let cs = ConstraintSet::new("x").with(DirectiveKind::Negate, "detail", "belt");
        let fresh = crate::session::derive_weights(&crate::session::SessionMemory::new("s"), &e.schema);
        let a = e.compose(&v, &cs, ComposerVariant::DeltaShift, None).unwrap();
        let b = e.compose(&v, &cs, ComposerVariant::DeltaShift, Some(&fresh)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_foreign_index() {
        let schema = AttributeSchema::default_schema();
        let cat = generate_catalog(&schema, 20, &Skew::new(), 1).unwrap();
        let layout = SliceLayout::universal(schema.total_width());
        let rows = vec![EmbeddingVector::zeros(&layout); 20];
        let ids = cat.items().iter().map(|i| i.id.clone()).collect();
        let idx = build_index(&layout, EncoderTag::External, ids, &rows, IndexKind::Exact, 1, 0).unwrap();
        assert!(Engine::new(schema, cat, idx, EngineConfig::default()).is_err());
    }

    #[test]
    fn ingested_vectors_anchor_on_their_own_rows() {
        let schema = AttributeSchema::default_schema();
        let cat = generate_catalog(&schema, 20, &Skew::new(), 1).unwrap();
        let layout = SliceLayout::from_schema(&schema);
        let mut rows = encode_catalog(&cat, &schema, &layout).unwrap();
        rows[3].values[0] += 0.25;
        let ids = cat.items().iter().map(|i| i.id.clone()).collect();
        let idx = build_index(&layout, EncoderTag::External, ids, &rows, IndexKind::Exact, 1, 0).unwrap();
        let e = Engine::new(schema, cat, idx, EngineConfig::default()).unwrap();
        let id = e.catalog.items()[3].id.clone();
        assert_eq!(e.anchor_embedding(&Anchor::Item(id)).unwrap().values, rows[3].values);
    }
}
