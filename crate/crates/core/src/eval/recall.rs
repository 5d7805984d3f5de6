//! IVF recall sweep against the exact index on jittered universal vectors.
//!
//! The one-hot catalog has at most ~23k distinct vectors, so at
//! 100k items most neighbours are exact ties and "recall" would mostly
//! measure tie-breaking. Gaussian jitter on the universal encodings makes
//! neighbourhoods well defined while keeping the catalog's cluster shape.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::catalog::{generate_catalog, Skew};
use crate::composer::WeightedQuery;
use crate::embedding::{normalize_in_place, EmbeddingVector, UniversalEncoder};
use crate::error::{Error, Result};
use crate::index::{measure_recall, EncoderTag, ExactIndex, IvfIndex, DEFAULT_N_LISTS, DEFAULT_N_PROBE};
use crate::schema::AttributeSchema;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecallConfig {
    pub size: usize,
    pub seed: u64,
    pub encoder_seed: u64,
    /// Per-coordinate standard deviation of the jitter.
    pub noise: f64,
    pub n_lists: usize,
    pub k: usize,
    pub queries: usize,
    pub n_probes: Vec<usize>,
}

impl Default for RecallConfig {
    fn default() -> Self {
        Self {
            size: 100_000,
            seed: 7,
            encoder_seed: 7,
            noise: 0.1,
            n_lists: DEFAULT_N_LISTS,
            k: 100,
            queries: 200,
            n_probes: vec![1, 2, 4, 8, 16, 32, 64, 128, 256],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallPoint {
    pub n_probe: usize,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub config: RecallConfig,
    pub points: Vec<RecallPoint>,
    /// Recall at the shipped default probe count.
    pub default_n_probe: usize,
    pub default_recall: Option<f64>,
}

impl RecallReport {
    pub fn is_monotone(&self) -> bool {
        self.points.windows(2).all(|w| w[1].recall >= w[0].recall)
    }

    pub fn at(&self, n_probe: usize) -> Option<f64> {
        self.points.iter().find(|p| p.n_probe == n_probe).map(|p| p.recall)
    }
}

fn jitter(v: &[f64], noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out: Vec<f64> = v.iter().map(|x| x + noise.sample(rng)).collect();
    normalize_in_place(&mut out);
    out
}

pub fn run_recall_experiment(config: &RecallConfig) -> Result<RecallReport> {
    if config.k == 0 || config.queries == 0 || config.n_probes.is_empty() {
        return Err(Error::Config("k, queries and n_probes must be non-empty".into()));
    }
    if let Some(&p) = config.n_probes.iter().find(|&&p| p == 0 || p > config.n_lists) {
        return Err(Error::Config(format!("n_probe {p} outside 1..={}", config.n_lists)));
    }
    let noise = Normal::new(0.0, config.noise)
        .map_err(|e| Error::Config(format!("noise {}: {e}", config.noise)))?;
    let schema = AttributeSchema::default_schema();
    let catalog = generate_catalog(&schema, config.size, &Skew::new(), config.seed)?;
    let encoder = UniversalEncoder::with_defaults(&schema, config.encoder_seed)?;
    let layout = encoder.output_layout().clone();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let mut vectors = Vec::with_capacity(catalog.len());
    for item in catalog.items() {
        let u = encoder.encode(item, &schema)?;
        vectors.push(EmbeddingVector {
            values: jitter(&u.values, &noise, &mut rng),
            layout_id: layout.id(),
        });
    }
    let ids = catalog.items().iter().map(|i| i.id.clone()).collect();
    let exact = ExactIndex::new(layout.clone(), EncoderTag::Universal(config.encoder_seed), ids, &vectors)?;

    // Queries: fresh jitter around randomly chosen catalog vectors.
    let queries: Vec<WeightedQuery> = (0..config.queries)
        .map(|i| {
            let base = &vectors[(i * 7919 + 13) % vectors.len()];
            let q = EmbeddingVector {
                values: jitter(&base.values, &noise, &mut rng),
                layout_id: layout.id(),
            };
            WeightedQuery::unweighted(q, &layout)
        })
        .collect();

    let ivf = IvfIndex::build(exact.clone(), config.n_lists, config.seed)?;
    let mut points = Vec::with_capacity(config.n_probes.len());
    for &n_probe in &config.n_probes {
        let recall = measure_recall(&ivf, &exact, &queries, config.k, n_probe)?;
        log::info!("n_probe {n_probe}: recall@{} {recall:.4}", config.k);
        points.push(RecallPoint { n_probe, recall });
    }
    let mut report = RecallReport {
        config: config.clone(),
        points,
        default_n_probe: DEFAULT_N_PROBE,
        default_recall: None,
    };
    report.default_recall = report.at(DEFAULT_N_PROBE);
    Ok(report)
}
