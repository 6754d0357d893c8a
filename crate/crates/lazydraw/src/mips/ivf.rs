//! Inverted-file index over Lloyd's k-means clusters.
//!
//! Queries rank centroids by inner product with the (scaled) parameter
//! vector and scan the top n_p inverted lists exactly. There is no gap
//! certificate: how far the true top-k can stray from the scanned union is
//! uncertified, so samplers running on top of this index take the gap
//! parameter from the caller.
//!
//! Builds are deterministic: a fixed seed yields a byte-identical index.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{Dataset, Query, TopKResult};
use crate::rng::derive_rng;

use super::{topk_over_candidates, TopKProvider};

/// k-means centroids plus CSR inverted lists (every id in exactly one list).
#[derive(Debug, Clone, PartialEq)]
pub struct IvfIndex {
    pub(crate) n: usize,
    pub(crate) d: usize,
    pub(crate) n_c: usize,
    pub(crate) iters: usize,
    pub(crate) seed: u64,
    /// n_c x d, row-major.
    pub(crate) centroids: Vec<f32>,
    /// n_c + 1 offsets into `ids`.
    pub(crate) offsets: Vec<u64>,
    /// Member ids grouped by cluster, ascending within each list.
    pub(crate) ids: Vec<u32>,
}

impl IvfIndex {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn clusters(&self) -> usize {
        self.n_c
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn iters(&self) -> usize {
        self.iters
    }

    pub fn list(&self, c: usize) -> &[u32] {
        &self.ids[self.offsets[c] as usize..self.offsets[c + 1] as usize]
    }

    fn centroid(&self, c: usize) -> &[f32] {
        &self.centroids[c * self.d..(c + 1) * self.d]
    }
}

fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let diff = x as f64 - y as f64;
        acc += diff * diff;
    }
    acc
}

/// Lloyd's k-means for `iters` iterations. Initial centroids are n_c distinct
/// rows drawn with the seed; a cluster that empties is re-seeded from the
/// point currently farthest from its assigned centroid. Assignment ties go to
/// the smaller cluster index, so the whole build is order-deterministic.
pub fn build_ivf(dataset: &Dataset, n_c: usize, iters: usize, seed: u64) -> Result<IvfIndex> {
    let n = dataset.len();
    let d = dataset.dim();
    if n_c == 0 || n_c > n {
        return Err(Error::invalid(
            "n_c",
            format!("need 1 <= n_c <= n, got n_c = {n_c}, n = {n}"),
        ));
    }

    // k-means++ seeding: first center uniform, then D^2-weighted picks with
    // a running min-distance array. Zero total weight (all points already
    // covered, e.g. duplicate rows) falls back to a uniform pick.
    let mut rng = derive_rng(seed, 0);
    let mut centroids_f32: Vec<f32> = Vec::with_capacity(n_c * d);
    let first = rng.random_range(0..n);
    centroids_f32.extend_from_slice(dataset.row(first));
    let mut min_dsq: Vec<f64> = (0..n)
        .map(|i| squared_distance(dataset.row(i), dataset.row(first)))
        .collect();
    while centroids_f32.len() < n_c * d {
        let total: f64 = min_dsq.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &w) in min_dsq.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let row = dataset.row(next);
        centroids_f32.extend_from_slice(row);
        for i in 0..n {
            let dsq = squared_distance(dataset.row(i), row);
            if dsq < min_dsq[i] {
                min_dsq[i] = dsq;
            }
        }
    }

    let mut centroids = vec![0.0f64; n_c * d];
    let mut assign = vec![0u32; n];
    let mut dist = vec![0.0f64; n];
    for _ in 0..iters {
        // Assignment: nearest centroid, ties to the smaller index.
        for i in 0..n {
            let row = dataset.row(i);
            let mut best = f64::INFINITY;
            let mut best_c = 0u32;
            for c in 0..n_c {
                let dsq = squared_distance(row, &centroids_f32[c * d..(c + 1) * d]);
                if dsq < best {
                    best = dsq;
                    best_c = c as u32;
                }
            }
            assign[i] = best_c;
            dist[i] = best;
        }

        let mut counts = vec![0u64; n_c];
        for &a in &assign {
            counts[a as usize] += 1;
        }

        // Re-seed empty clusters from the worst-fit points, ascending cluster
        // index, farthest point first (ties toward the smaller id).
        for c in 0..n_c {
            if counts[c] > 0 {
                continue;
            }
            let mut far = 0usize;
            let mut far_d = f64::NEG_INFINITY;
            for i in 0..n {
                if counts[assign[i] as usize] > 1 && dist[i] > far_d {
                    far_d = dist[i];
                    far = i;
                }
            }
            counts[assign[far] as usize] -= 1;
            counts[c] += 1;
            assign[far] = c as u32;
            dist[far] = 0.0;
        }

        // Update: mean of members, f64 accumulation in id order.
        centroids.fill(0.0);
        for i in 0..n {
            let base = assign[i] as usize * d;
            for (j, &v) in dataset.row(i).iter().enumerate() {
                centroids[base + j] += v as f64;
            }
        }
        for c in 0..n_c {
            let count = counts[c] as f64;
            for j in 0..d {
                centroids[c * d + j] /= count;
            }
        }
        for (dst, &src) in centroids_f32.iter_mut().zip(&centroids) {
            *dst = src as f32;
        }
    }

    // Final assignment builds the lists; empty lists are allowed here.
    let mut counts = vec![0u64; n_c];
    for i in 0..n {
        let row = dataset.row(i);
        let mut best = f64::INFINITY;
        let mut best_c = 0u32;
        for c in 0..n_c {
            let dsq = squared_distance(row, &centroids_f32[c * d..(c + 1) * d]);
            if dsq < best {
                best = dsq;
                best_c = c as u32;
            }
        }
        assign[i] = best_c;
        counts[best_c as usize] += 1;
    }
    let mut offsets = vec![0u64; n_c + 1];
    for c in 0..n_c {
        offsets[c + 1] = offsets[c] + counts[c];
    }
    let mut cursor: Vec<u64> = offsets[..n_c].to_vec();
    let mut ids = vec![0u32; n];
    for i in 0..n {
        let c = assign[i] as usize;
        ids[cursor[c] as usize] = i as u32;
        cursor[c] += 1;
    }

    Ok(IvfIndex {
        n,
        d,
        n_c,
        iters,
        seed,
        centroids: centroids_f32,
        offsets,
        ids,
    })
}

/// Scans the union of the n_p inverted lists whose centroids score highest
/// under the query; exact scores inside the scanned set. Returns fewer than k
/// items (flagged short) when the probed lists hold fewer than k ids.
pub fn ivf_topk(
    index: &IvfIndex,
    dataset: &Dataset,
    query: &Query,
    k: usize,
    n_p: usize,
) -> Result<TopKResult> {
    if k == 0 {
        return Err(Error::invalid("k", "must be >= 1"));
    }
    if n_p == 0 {
        return Err(Error::invalid("n_p", "must be >= 1"));
    }
    if index.n != dataset.len() || index.d != dataset.dim() {
        return Err(Error::IndexMismatch {
            index_n: index.n as u64,
            index_d: index.d as u32,
            data_n: dataset.len() as u64,
            data_d: dataset.dim() as u32,
        });
    }
    dataset.check_query(query)?;

    let probes = n_p.min(index.n_c);
    let mut ranked: Vec<(f64, u32)> = (0..index.n_c)
        .map(|c| {
            let mut acc = 0.0f64;
            for (t, &v) in query.theta().iter().zip(index.centroid(c)) {
                acc += t * v as f64;
            }
            (acc * query.scale(), c as u32)
        })
        .collect();
    ranked.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let candidates = ranked[..probes]
        .iter()
        .flat_map(|&(_, c)| index.list(c as usize).iter().copied());
    let items = topk_over_candidates(dataset, query, candidates, k);
    let short = items.len() < k.min(dataset.len());
    Ok(TopKResult {
        items,
        k,
        gap_c: None,
        short,
        exhaustive_fallback: false,
    })
}

/// An IVF index bound to its dataset and a probe count.
pub struct IvfProvider<'a> {
    index: &'a IvfIndex,
    dataset: &'a Dataset,
    n_p: usize,
}

impl<'a> IvfProvider<'a> {
    pub fn new(index: &'a IvfIndex, dataset: &'a Dataset, n_p: usize) -> Self {
        IvfProvider {
            index,
            dataset,
            n_p,
        }
    }
}

impl TopKProvider for IvfProvider<'_> {
    fn top_k(&self, query: &Query, k: usize) -> Result<TopKResult> {
        ivf_topk(self.index, self.dataset, query, k, self.n_p)
    }

    fn name(&self) -> &'static str {
        "ivf"
    }
}
