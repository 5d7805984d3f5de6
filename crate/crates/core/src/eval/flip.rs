//! Pocket-removal flip: a pocketed blue hoodie plus "without a pocket",
//! run through the universal baseline and through Δ-shift + detail
//! specialist + guard.

use serde::{Deserialize, Serialize};

use super::{parse_constraints, UniversalBaseline};
use crate::catalog::{generate_catalog, Item, Skew};
use crate::error::{Error, Result};
use crate::guard::csr;
use crate::index::{CandidateSet, IndexKind};
use crate::pipeline::{Anchor, Engine, EngineConfig};
use crate::planner::{run_episode, CriticPolicy, EpisodeRequest};
use crate::rankers::ensemble_rank;
use crate::schema::AttributeSchema;

pub const FLIP_UTTERANCE: &str = "without a pocket";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlipConfig {
    pub seed: u64,
    pub size: usize,
    pub skew: Skew,
    /// Rotation seed of the universal encoder.
    pub encoder_seed: u64,
    pub k: usize,
    pub index: IndexKind,
    pub n_lists: usize,
    pub n_probe: usize,
}

impl Default for FlipConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            size: 10_000,
            skew: Skew::new().with("detail.pocket", 0.8).with("silhouette.hoodie", 0.4),
            encoder_seed: 7,
            k: 10,
            index: IndexKind::Exact,
            n_lists: 1,
            n_probe: 1,
        }
    }
}

/// Best (1-based) rank of the anchor's near twins — same color, material,
/// silhouette and style — split by whether they carry a pocket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinRanks {
    pub pocketed_twins: usize,
    pub pocket_free_twins: usize,
    pub best_pocketed_rank: Option<usize>,
    pub best_pocket_free_rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipReport {
    pub anchor_id: String,
    pub utterance: String,
    pub csr_baseline_at_10: f64,
    pub csr_ammr_at_10: f64,
    pub baseline_top: Vec<String>,
    pub ammr_top: Vec<String>,
    /// Ranks in the full baseline ordering.
    pub baseline_twins: TwinRanks,
    /// Ranks in the full Δ-shift + specialist ordering, before the guard.
    pub ammr_twins: TwinRanks,
}

fn is_twin(a: &Item, b: &Item) -> bool {
    a.id != b.id && a.attrs == b.attrs
}

fn twin_ranks(ordering: &CandidateSet, anchor: &Item, engine: &Engine) -> TwinRanks {
    let mut r = TwinRanks {
        pocketed_twins: 0,
        pocket_free_twins: 0,
        best_pocketed_rank: None,
        best_pocket_free_rank: None,
    };
    for (rank, c) in ordering.entries.iter().enumerate() {
        let item = engine.catalog.get(&c.item_id).expect("indexed from catalog");
        if !is_twin(anchor, item) {
            continue;
        }
        let (count, best) = if item.has_detail("pocket") {
            (&mut r.pocketed_twins, &mut r.best_pocketed_rank)
        } else {
            (&mut r.pocket_free_twins, &mut r.best_pocket_free_rank)
        };
        *count += 1;
        best.get_or_insert(rank + 1);
    }
    r
}

/// First blue hoodie whose only detail is a pocket.
pub fn flip_anchor(engine: &Engine) -> Result<&Item> {
    engine
        .catalog
        .items()
        .iter()
        .find(|i| {
            i.attr("color") == Some("blue")
                && i.attr("silhouette") == Some("hoodie")
                && i.details.len() == 1
                && i.has_detail("pocket")
        })
        .ok_or_else(|| Error::Config("catalog has no blue hoodie with only a pocket".into()))
}

pub fn run_flip_experiment(config: &FlipConfig) -> Result<FlipReport> {
    if config.k == 0 || config.size == 0 {
        return Err(Error::Config("k and size must be positive".into()));
    }
    let schema = AttributeSchema::default_schema();
    let catalog = generate_catalog(&schema, config.size, &config.skew, config.seed)?;
    let engine_config = EngineConfig {
        n_probe: config.n_probe,
        result_k: config.k,
        policy: CriticPolicy {
            k_min: config.k,
            ..CriticPolicy::default()
        },
        ..EngineConfig::default()
    };
    let engine = Engine::build(schema, catalog, config.index, config.n_lists, config.seed, engine_config)?;
    let anchor_item = flip_anchor(&engine)?.clone();
    let anchor = Anchor::Item(anchor_item.id.clone());
    let v = engine.anchor_embedding(&anchor)?;
    let constraints = parse_constraints(&engine, &anchor, FLIP_UTTERANCE)?;
    let n = engine.catalog.len();

    // (a) universal baseline
    let baseline = UniversalBaseline::build(&engine, config.encoder_seed)?;
    let base_all = baseline.search(&engine, &v, &constraints, n)?;
    let mut base_top = base_all.clone();
    base_top.truncate(config.k);

    // (b) Δ-shift + detail specialist + guard, through the planner
    let mut req = EpisodeRequest::new(anchor.clone(), FLIP_UTTERANCE);
    req.result_k = Some(config.k);
    let outcome = run_episode(&engine, req)?;
    let ammr_top = CandidateSet {
        query_id: anchor_item.id.clone(),
        entries: outcome
            .recommendation
            .results
            .iter()
            .map(|r| crate::index::Candidate {
                item_id: r.item_id.clone(),
                ordinal: 0,
                score: r.score,
            })
            .collect(),
        truncated_at: config.k,
    };
    let wq = engine.compose(&v, &constraints, engine.config.composer, None)?;
    let ammr_all = ensemble_rank(
        &engine.index.base().search(&wq, n)?,
        &wq,
        &engine.rankers_for(&constraints),
        engine.index.base(),
    )?;

    let report = FlipReport {
        anchor_id: anchor_item.id.clone(),
        utterance: FLIP_UTTERANCE.to_string(),
        csr_baseline_at_10: csr(&base_top, &constraints, &engine.catalog, &engine.schema, config.k),
        csr_ammr_at_10: csr(&ammr_top, &constraints, &engine.catalog, &engine.schema, config.k),
        baseline_top: base_top.entries.iter().map(|c| c.item_id.clone()).collect(),
        ammr_top: ammr_top.entries.iter().map(|c| c.item_id.clone()).collect(),
        baseline_twins: twin_ranks(&base_all, &anchor_item, &engine),
        ammr_twins: twin_ranks(&ammr_all, &anchor_item, &engine),
    };
    if report.csr_ammr_at_10 < report.csr_baseline_at_10 {
        return Err(Error::Domain(format!(
            "flip failed: ammr csr {} < baseline csr {}",
            report.csr_ammr_at_10, report.csr_baseline_at_10
        )));
    }
    Ok(report)
}
