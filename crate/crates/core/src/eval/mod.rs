//! Metrics and reproduction experiments.

mod flip;
mod recall;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use recall::{run_recall_experiment, RecallConfig, RecallPoint, RecallReport};
pub use flip::{flip_anchor, run_flip_experiment, FlipConfig, FlipReport, TwinRanks, FLIP_UTTERANCE};

use crate::catalog::Item;
use crate::composer::{compose_baseline, WeightedQuery};
use crate::constraints::{ConstraintSet, Directive, DirectiveKind, DirectiveTemplate};
use crate::embedding::{default_slot_scales, encode_constraints, EmbeddingVector, UniversalEncoder};
use crate::error::{Error, Result};
use crate::index::{CandidateSet, EncoderTag, ExactIndex};
use crate::pipeline::{Anchor, Engine};
use crate::planner::{rewrite_query, run_episode, CriticPolicy, EpisodeRequest};

/// Values rarer than this (catalog frequency) count as tail attributes.
pub const TAIL_FREQUENCY: f64 = 0.05;

/// `G = Σᵢ Σⱼ |xᵢ − xⱼ| / (2 n Σx)`, computed from the sorted values.
pub fn gini(counts: &[f64]) -> Result<f64> {
    if counts.is_empty() {
        return Err(Error::Domain("gini of an empty list".into()));
    }
    if counts.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
        return Err(Error::Domain("gini needs finite non-negative counts".into()));
    }
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return Err(Error::Domain("gini of an all-zero list".into()));
    }
    let mut x = counts.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    // Σᵢ Σⱼ |xᵢ − xⱼ| = 2 Σᵢ (2i − n − 1) x₍ᵢ₎ for ascending x, i = 1..n.
    let weighted: f64 = x
        .iter()
        .enumerate()
        .map(|(i, v)| (2.0 * (i as f64 + 1.0) - n - 1.0) * v)
        .sum();
    Ok((weighted / (n * total)).max(0.0))
}

/// Nearest-rank percentile of an unsorted sample.
pub fn percentile(samples: &[u64], p: f64) -> u64 {
    if samples.is_empty() {
        return 0;
    }
    let mut s = samples.to_vec();
    s.sort_unstable();
    let rank = ((p / 100.0) * s.len() as f64).ceil().max(1.0) as usize;
    s[rank.min(s.len()) - 1]
}

/// Entangled single-space baseline over the same catalog.
pub struct UniversalBaseline {
    pub encoder: UniversalEncoder,
    pub index: ExactIndex,
}

impl UniversalBaseline {
    pub fn build(engine: &Engine, seed: u64) -> Result<Self> {
        let encoder = UniversalEncoder::new(&engine.schema, seed, &default_slot_scales())?;
        let vectors = crate::pipeline::encode_catalog(&engine.catalog, &engine.schema, &engine.layout)?
            .iter()
            .map(|v| encoder.encode_disentangled(v))
            .collect::<Result<Vec<_>>>()?;
        let ids = engine.catalog.items().iter().map(|i| i.id.clone()).collect();
        let index = ExactIndex::new(
            encoder.output_layout().clone(),
            EncoderTag::Universal(seed),
            ids,
            &vectors,
        )?;
        Ok(Self { encoder, index })
    }

    /// `normalize(u(v) + render(Δ))` where the delta is rendered with the
    /// anchor's own scaling.
    pub fn query(&self, engine: &Engine, anchor: &EmbeddingVector, constraints: &ConstraintSet) -> Result<WeightedQuery> {
        let (delta, _) = encode_constraints(constraints, &engine.schema, &engine.layout, anchor)?;
        let v = self.encoder.encode_disentangled(anchor)?;
        let t = self.encoder.render_delta(&delta, anchor)?;
        let q = compose_baseline(&v, &t)?;
        Ok(WeightedQuery::unweighted(q, self.encoder.output_layout()))
    }

    pub fn search(&self, engine: &Engine, anchor: &EmbeddingVector, constraints: &ConstraintSet, k: usize) -> Result<CandidateSet> {
        let q = self.query(engine, anchor, constraints)?;
        self.index.search(&q, k.min(self.index.len()))
    }
}

/// Deterministic (backend-free) parse used by every evaluated pipeline.
pub fn parse_constraints(engine: &Engine, anchor: &Anchor, text: &str) -> Result<ConstraintSet> {
    let mut lexicon = engine.lexicon.clone();
    if let Some(src) = &engine.trends {
        lexicon = lexicon.with_trend_tokens(src.load()?);
    }
    let mut cs = rewrite_query(text, &lexicon, &engine.schema, None)?;
    if cs.has_relative() {
        let current = engine.anchor_value(anchor, "color");
        cs.resolve_relative(current.as_deref(), lexicon.darkness_order());
    }
    Ok(cs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalQuery {
    pub anchor: String,
    pub text: String,
    /// Attribute being refined; defaults to the first hard directive.
    #[serde(default)]
    pub target: Option<DirectiveTemplate>,
}

impl EvalQuery {
    pub fn new(anchor: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            anchor: anchor.into(),
            text: text.into(),
            target: None,
        }
    }

    pub fn with_target(mut self, kind: DirectiveKind, slot: &str, value: &str) -> Self {
        self.target = Some(DirectiveTemplate {
            kind,
            slot: slot.into(),
            value: value.into(),
        });
        self
    }
}

/// Reads a JSON-Lines query file.
pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<EvalQuery>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Format {
                line: i + 1,
                column: e.column(),
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineKind {
    /// Full planner episode: Δ-shift, specialists, guard, critic.
    Ammr,
    /// Δ-shift plus specialist rankers, no guard.
    DeltaRankers,
    /// Universal encoder with additive text composition.
    Baseline,
}

impl PipelineKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "ammr" => Ok(PipelineKind::Ammr),
            "delta" | "delta_rankers" | "delta-rankers" => Ok(PipelineKind::DeltaRankers),
            "baseline" | "universal" => Ok(PipelineKind::Baseline),
            other => Err(Error::Config(format!("unknown pipeline `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub pipeline: PipelineKind,
    pub k: usize,
    /// Universal encoder seed for the baseline.
    pub encoder_seed: u64,
    pub policy: CriticPolicy,
}

impl EvalConfig {
    pub fn new(pipeline: PipelineKind, k: usize) -> Self {
        Self {
            pipeline,
            k,
            encoder_seed: 7,
            policy: CriticPolicy {
                k_min: 1,
                ..CriticPolicy::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub pipeline: PipelineKind,
    pub k: usize,
    pub queries: usize,
    pub csr_at_k: f64,
    pub attr_precision_at_k: f64,
    /// `None` when no query targets a tail attribute.
    pub tail_recall_at_k: Option<f64>,
    pub tail_queries: usize,
    pub brand_gini: f64,
    pub latency_p50_us: u64,
    pub latency_p95_us: u64,
    pub encoder_seed: u64,
}

fn target_of(q: &EvalQuery, cs: &ConstraintSet) -> Result<Directive> {
    if let Some(t) = &q.target {
        return Ok(Directive {
            id: "target".into(),
            kind: t.kind,
            slot: t.slot.clone(),
            value: t.value.clone(),
        });
    }
    cs.hard()
        .next()
        .or_else(|| cs.directives.first())
        .cloned()
        .ok_or_else(|| Error::Config(format!("query `{}` has no target", q.text)))
}

/// Runs every query through one pipeline and aggregates the metrics.
pub fn evaluate_run(
    engine: &Engine,
    queries: &[EvalQuery],
    config: &EvalConfig,
    baseline: Option<&UniversalBaseline>,
) -> Result<MetricsReport> {
    if queries.is_empty() {
        return Err(Error::Config("evaluation needs at least one query".into()));
    }
    if config.k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let owned;
    let baseline = match (config.pipeline, baseline) {
        (PipelineKind::Baseline, Some(b)) => Some(b),
        (PipelineKind::Baseline, None) => {
            owned = UniversalBaseline::build(engine, config.encoder_seed)?;
            Some(&owned)
        }
        _ => None,
    };
    let schema = &engine.schema;
    let n_items = engine.catalog.len() as f64;

    let mut csr_sum = 0.0;
    let mut prec_sum = 0.0;
    let mut tail_sum = 0.0;
    let mut tail_n = 0usize;
    let mut latencies = Vec::with_capacity(queries.len());
    let mut union: BTreeSet<String> = BTreeSet::new();

    for q in queries {
        let anchor = Anchor::Item(q.anchor.clone());
        let cs = parse_constraints(engine, &anchor, &q.text)?;
        let target = target_of(q, &cs)?;

        let start = Instant::now();
        let top: Vec<String> = match config.pipeline {
            PipelineKind::Ammr => {
                let mut req = EpisodeRequest::new(anchor.clone(), q.text.clone());
                req.result_k = Some(config.k);
                req.policy = Some(config.policy.clone());
                run_episode(engine, req)?
                    .recommendation
                    .results
                    .into_iter()
                    .map(|r| r.item_id)
                    .collect()
            }
            PipelineKind::DeltaRankers => {
                let v = engine.anchor_embedding(&anchor)?;
                let wq = engine.compose(&v, &cs, engine.config.composer, None)?;
                let k = engine.config.k.max(config.k);
                let mut c = engine.retrieve(&wq, k, engine.config.n_probe, &engine.rankers_for(&cs))?;
                c.truncate(config.k);
                c.entries.into_iter().map(|c| c.item_id).collect()
            }
            PipelineKind::Baseline => {
                let v = engine.anchor_embedding(&anchor)?;
                baseline
                    .expect("built above")
                    .search(engine, &v, &cs, config.k)?
                    .entries
                    .into_iter()
                    .map(|c| c.item_id)
                    .collect()
            }
        };
        latencies.push(start.elapsed().as_micros() as u64);

        let items: Vec<&Item> = top
            .iter()
            .map(|id| engine.catalog.require(id))
            .collect::<Result<_>>()?;
        let denom = config.k.min(items.len()).max(1) as f64;
        if !items.is_empty() {
            csr_sum += items.iter().filter(|i| cs.satisfies_hard(i, schema)).count() as f64 / denom;
            prec_sum += items.iter().filter(|i| target.is_satisfied_by(i, schema)).count() as f64 / denom;
        }
        let relevant = engine
            .catalog
            .items()
            .iter()
            .filter(|i| target.is_satisfied_by(i, schema))
            .count();
        if (relevant as f64) / n_items < TAIL_FREQUENCY && relevant > 0 {
            let hits = items.iter().filter(|i| target.is_satisfied_by(i, schema)).count();
            tail_sum += hits as f64 / config.k.min(relevant) as f64;
            tail_n += 1;
        }
        union.extend(top);
    }

    let mut brands: BTreeMap<&str, f64> = engine.catalog.items().iter().map(|i| (i.brand.as_str(), 0.0)).collect();
    for id in &union {
        *brands.get_mut(engine.catalog.require(id)?.brand.as_str()).expect("catalog brand") += 1.0;
    }
    let counts: Vec<f64> = brands.into_values().collect();
    let brand_gini = if union.is_empty() { 0.0 } else { gini(&counts)? };

    let n = queries.len() as f64;
    Ok(MetricsReport {
        pipeline: config.pipeline,
        k: config.k,
        queries: queries.len(),
        csr_at_k: csr_sum / n,
        attr_precision_at_k: prec_sum / n,
        tail_recall_at_k: (tail_n > 0).then(|| tail_sum / tail_n as f64),
        tail_queries: tail_n,
        brand_gini,
        latency_p50_us: percentile(&latencies, 50.0).max(1),
        latency_p95_us: percentile(&latencies, 95.0).max(1),
        encoder_seed: config.encoder_seed,
    })
}
