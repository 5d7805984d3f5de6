use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{check_k, CandidateSet, ExactIndex, Scorer};
use crate::composer::WeightedQuery;
use crate::embedding::{dot, normalize_in_place};
use crate::error::{Error, Result};

pub const KMEANS_ITERATIONS: usize = 20;

/// Inverted-file index: spherical k-means cells over the base matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct IvfIndex {
    base: ExactIndex,
    centroids: ExactIndex,
    lists: Vec<Vec<u32>>,
}

fn unit_rows(data: &[f64], dim: usize) -> Vec<f64> {
    let mut out = data.to_vec();
    out.par_chunks_mut(dim).for_each(normalize_in_place);
    out
}

/// Index of the centroid with the largest inner product (lowest index on
/// ties).
fn nearest(x: &[f64], centroids: &[f64], dim: usize) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (c, row) in centroids.chunks_exact(dim).enumerate() {
        let s = dot(x, row);
        if s > best_score {
            best = c;
            best_score = s;
        }
    }
    best
}

impl IvfIndex {
    pub fn build(base: ExactIndex, n_lists: usize, seed: u64) -> Result<Self> {
        let n = base.len();
        if n_lists == 0 || n_lists > n {
            return Err(Error::Build(format!("n_lists = {n_lists} outside 1..={n}")));
        }
        let dim = base.dim();
        let units = unit_rows(base.vectors(), dim);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut centroids = Vec::with_capacity(n_lists * dim);
        for o in sample(&mut rng, n, n_lists).into_iter() {
            centroids.extend_from_slice(&units[o * dim..(o + 1) * dim]);
        }

        let mut assignment = vec![0usize; n];
        for _ in 0..KMEANS_ITERATIONS {
            assignment = units
                .par_chunks(dim)
                .map(|x| nearest(x, &centroids, dim))
                .collect();
            let mut sums = vec![0.0; n_lists * dim];
            let mut counts = vec![0usize; n_lists];
            for (o, &c) in assignment.iter().enumerate() {
                counts[c] += 1;
                for (s, x) in sums[c * dim..(c + 1) * dim]
                    .iter_mut()
                    .zip(&units[o * dim..(o + 1) * dim])
                {
                    *s += x;
                }
            }
            for c in 0..n_lists {
                // Empty cells keep their previous centroid.
                if counts[c] > 0 {
                    let mut mean = sums[c * dim..(c + 1) * dim].to_vec();
                    normalize_in_place(&mut mean);
                    if mean.iter().any(|&x| x != 0.0) {
                        centroids[c * dim..(c + 1) * dim].copy_from_slice(&mean);
                    }
                }
            }
        }
        // Final assignment against the final centroids.
        assignment = units
            .par_chunks(dim)
            .map(|x| nearest(x, &centroids, dim))
            .collect();
        let mut lists = vec![Vec::new(); n_lists];
        for (o, &c) in assignment.iter().enumerate() {
            lists[c].push(o as u32);
        }
        Self::from_parts(base, centroids, lists)
    }

    pub(crate) fn from_parts(base: ExactIndex, centroids: Vec<f64>, lists: Vec<Vec<u32>>) -> Result<Self> {
        let dim = base.dim();
        if lists.is_empty() || centroids.len() != lists.len() * dim {
            return Err(Error::Build("centroid table does not match list count".into()));
        }
        let mut seen = vec![false; base.len()];
        for &o in lists.iter().flatten() {
            let o = o as usize;
            if o >= seen.len() || std::mem::replace(&mut seen[o], true) {
                return Err(Error::Build(format!("ordinal {o} missing or listed twice")));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Build("some ordinals are in no inverted list".into()));
        }
        let ids = (0..lists.len()).map(|c| format!("{c:08}")).collect();
        let centroids = ExactIndex::from_parts(base.layout().clone(), base.encoder(), ids, centroids);
        Ok(Self {
            base,
            centroids,
            lists,
        })
    }

    pub fn base(&self) -> &ExactIndex {
        &self.base
    }

    pub fn n_lists(&self) -> usize {
        self.lists.len()
    }

    pub fn lists(&self) -> &[Vec<u32>] {
        &self.lists
    }

    pub fn centroid_matrix(&self) -> &[f64] {
        self.centroids.vectors()
    }

    /// Cells ordered by decreasing similarity to the query.
    fn probe_order(&self, scorer: &Scorer) -> Vec<usize> {
        let n = self.n_lists();
        self.centroids
            .top_k_of(scorer, 0..n, n)
            .into_iter()
            .map(|c| c.ordinal)
            .collect()
    }

    pub fn search(&self, query: &WeightedQuery, k: usize, n_probe: usize) -> Result<CandidateSet> {
        check_k(k, self.base.len())?;
        if n_probe == 0 || n_probe > self.n_lists() {
            return Err(Error::Config(format!(
                "n_probe = {n_probe} outside 1..={}",
                self.n_lists()
            )));
        }
        let scorer = self.base.scorer(query)?;
        let cells = self.probe_order(&scorer);
        let ordinals = cells[..n_probe]
            .iter()
            .flat_map(|&c| self.lists[c].iter().map(|&o| o as usize));
        Ok(CandidateSet {
            query_id: String::new(),
            entries: self.base.top_k_of(&scorer, ordinals, k),
            truncated_at: k,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{EmbeddingVector, SliceLayout};
    use crate::index::{build_index, search, EncoderTag, Index, IndexKind};
    use rand::Rng;

    fn random_rows(n: usize, dim: usize, seed: u64) -> Vec<EmbeddingVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| EmbeddingVector {
                values: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                layout_id: 0,
            })
            .collect()
    }

    fn build(n: usize, lists: usize, seed: u64) -> (Index, SliceLayout, Vec<EmbeddingVector>) {
        let layout = SliceLayout::universal(8);
        let rows = random_rows(n, 8, seed);
        let ids = (0..n).map(|i| format!("r{i:05}")).collect();
        let idx = build_index(&layout, EncoderTag::External, ids, &rows, IndexKind::Ivf, lists, seed).unwrap();
        (idx, layout, rows)
    }

    #[test]
    fn lists_partition_the_ordinals() {
        let (idx, _, _) = build(1000, 16, 7);
        let Index::Ivf(ivf) = &idx else { unreachable!() };
        let mut all: Vec<u32> = ivf.lists().iter().flatten().copied().collect();
        assert_eq!(all.len(), 1000);
        all.sort();
        assert_eq!(all, (0..1000).collect::<Vec<u32>>());
    }

    #[test]
    fn single_list_and_full_probe_equal_exact() {
        for lists in [1, 16] {
            let (idx, layout, rows) = build(400, lists, 3);
            let exact = idx.base().clone();
            for q in rows.iter().take(20) {
                let wq = WeightedQuery::unweighted(q.clone(), &layout);
                let a = search(&idx, &wq, 25, lists).unwrap();
                let b = exact.search(&wq, 25).unwrap();
                assert_eq!(a.entries, b.entries);
            }
        }
    }

    #[test]
    fn n_probe_bounds() {
        let (idx, layout, rows) = build(100, 4, 1);
        let wq = WeightedQuery::unweighted(rows[0].clone(), &layout);
        assert!(search(&idx, &wq, 5, 0).is_err());
        assert!(search(&idx, &wq, 5, 5).is_err());
    }

    #[test]
    fn builds_are_deterministic() {
        let (a, _, _) = build(300, 8, 5);
        let (b, _, _) = build(300, 8, 5);
        assert_eq!(a, b);
    }
}
