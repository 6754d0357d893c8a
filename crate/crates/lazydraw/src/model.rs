//! Log-linear model over a fixed discrete domain.
//!
//! The domain is a dataset of n feature rows phi(x_i) in R^d. A query theta
//! (with a positive scale) induces scores y_i = scale * theta . phi(x_i) and
//! the model p(i) = e^{y_i} / Z with Z = sum_i e^{y_i}. Everything downstream
//! (sampling, partition and expectation estimates, learning, walks) consumes
//! these scores; this module holds the types plus the exact O(n) reference
//! operations the fast paths are judged against.
//!
//! Scores accumulate in f64 even though rows are stored as f32.

use rand::Rng;

use crate::error::{Error, Result};

/// Feature rows phi(x_1..n), row-major f32.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    d: usize,
    features: Vec<f32>,
    unit_norm: bool,
}

impl Dataset {
    /// Builds a dataset from row-major features. Requires n >= 1, d >= 1,
    /// all values finite. The unit-norm flag is set when every row norm is
    /// within 1e-6 of 1.
    pub fn from_rows(n: usize, d: usize, features: Vec<f32>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::EmptyDataset);
        }
        if features.len() != n * d {
            return Err(Error::invalid(
                "features",
                format!("expected {} values, got {}", n * d, features.len()),
            ));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "dataset features",
            });
        }
        let mut unit_norm = true;
        for row in features.chunks_exact(d) {
            let norm: f64 = row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                unit_norm = false;
                break;
            }
        }
        Ok(Dataset {
            n,
            d,
            features,
            unit_norm,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false // construction requires n >= 1
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// True when every row norm is within 1e-6 of 1.
    pub fn is_unit_norm(&self) -> bool {
        self.unit_norm
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    /// Score of a single row: scale * theta . phi(x_i), accumulated in f64.
    pub fn score(&self, i: usize, query: &Query) -> f64 {
        let row = self.row(i);
        let mut acc = 0.0f64;
        for (t, v) in query.theta.iter().zip(row) {
            acc += t * (*v as f64);
        }
        acc * query.scale
    }

    pub(crate) fn check_query(&self, query: &Query) -> Result<()> {
        if query.theta.len() != self.d {
            return Err(Error::DimensionMismatch {
                query: query.theta.len(),
                dataset: self.d,
            });
        }
        Ok(())
    }
}

/// Query parameters theta with a positive score scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    theta: Vec<f64>,
    scale: f64,
}

impl Query {
    /// Scale 1 query. Requires finite theta.
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        Query::with_scale(theta, 1.0)
    }

    /// Requires finite theta and finite scale > 0.
    pub fn with_scale(theta: Vec<f64>, scale: f64) -> Result<Self> {
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite {
                context: "query theta",
            });
        }
        if !scale.is_finite() || scale <= 0.0 {
            return Err(Error::invalid("scale", format!("must be finite and > 0, got {scale}")));
        }
        Ok(Query { theta, scale })
    }

    /// Uses dataset row `i` as theta; the benchmark protocol draws queries this way.
    pub fn from_row(dataset: &Dataset, i: usize, scale: f64) -> Result<Self> {
        let theta = dataset.row(i).iter().map(|&v| v as f64).collect();
        Query::with_scale(theta, scale)
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Euclidean norm of scale * theta, the effective parameter vector.
    pub fn effective_norm(&self) -> f64 {
        self.theta.iter().map(|t| t * t).sum::<f64>().sqrt() * self.scale
    }
}

/// Scores for a subset of ids, stored as parallel (id, score) arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreView {
    ids: Vec<u32>,
    scores: Vec<f64>,
}

impl ScoreView {
    pub fn new(ids: Vec<u32>, scores: Vec<f64>) -> Self {
        assert_eq!(ids.len(), scores.len());
        ScoreView { ids, scores }
    }

    /// View over all ids 0..n in order.
    pub fn full(scores: Vec<f64>) -> Self {
        let ids = (0..scores.len() as u32).collect();
        ScoreView { ids, scores }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.ids.iter().copied().zip(self.scores.iter().copied())
    }
}

/// One retrieved item.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredId {
    pub id: u32,
    pub score: f64,
}

/// Result of a top-k retrieval, ordered by score descending (ties by smaller id).
#[derive(Debug, Clone, PartialEq)]
pub struct TopKResult {
    /// Retrieved items, best first.
    pub items: Vec<ScoredId>,
    /// Requested k.
    pub k: usize,
    /// Score-gap certificate: max score outside the set minus min score
    /// inside is guaranteed below this, with the provider's own failure
    /// probability. Exact providers certify 0; uncertified providers None.
    pub gap_c: Option<f64>,
    /// Set when the provider scanned fewer than k candidates and returned
    /// everything it saw.
    pub short: bool,
    /// Set when an approximate provider gave up and scanned exhaustively.
    pub exhaustive_fallback: bool,
}

impl TopKResult {
    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.items.iter().map(|s| s.id)
    }

    /// Minimum score inside the retrieved set.
    pub fn min_score(&self) -> f64 {
        self.items.last().map(|s| s.score).unwrap_or(f64::NEG_INFINITY)
    }
}

/// Descending by score, ties broken toward the smaller id.
pub(crate) fn rank_order(a: &ScoredId, b: &ScoredId) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then(a.id.cmp(&b.id))
}

/// Scores every row: y_i = scale * theta . phi(x_i).
pub fn score_all(dataset: &Dataset, query: &Query) -> Result<ScoreView> {
    dataset.check_query(query)?;
    let mut scores = Vec::with_capacity(dataset.len());
    for i in 0..dataset.len() {
        scores.push(dataset.score(i, query));
    }
    Ok(ScoreView::full(scores))
}

/// Exact top-k by full scan, O(n log k). Ties resolve toward the smaller id;
/// k >= n returns all ids sorted.
pub fn exact_topk(dataset: &Dataset, query: &Query, k: usize) -> Result<TopKResult> {
    if k == 0 {
        return Err(Error::invalid("k", "must be >= 1"));
    }
    dataset.check_query(query)?;
    let n = dataset.len();
    let kept = k.min(n);

    // Min-heap over the current best `kept`: the root is the worst item held,
    // compared by (score asc, id desc) so eviction matches rank_order.
    struct Worst(ScoredId);
    impl PartialEq for Worst {
        fn eq(&self, other: &Self) -> bool {
            rank_order(&self.0, &other.0) == std::cmp::Ordering::Equal
        }
    }
    impl Eq for Worst {}
    impl PartialOrd for Worst {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for Worst {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            // rank_order puts better items first, so later-ranked items compare
            // greater here and the max-heap root is the worst item held.
            rank_order(&self.0, &other.0)
        }
    }

    let mut heap = std::collections::BinaryHeap::with_capacity(kept + 1);
    for i in 0..n {
        let cand = ScoredId {
            id: i as u32,
            score: dataset.score(i, query),
        };
        if heap.len() < kept {
            heap.push(Worst(cand));
        } else if rank_order(&cand, &heap.peek().unwrap().0) == std::cmp::Ordering::Less {
            heap.pop();
            heap.push(Worst(cand));
        }
    }
    let mut items: Vec<ScoredId> = heap.into_iter().map(|w| w.0).collect();
    items.sort_unstable_by(rank_order);
    Ok(TopKResult {
        items,
        k,
        gap_c: Some(0.0),
        short: false,
        exhaustive_fallback: false,
    })
}

/// Log partition function log Z = log sum_i e^{y_i}, computed with a max shift.
pub fn exact_partition(dataset: &Dataset, query: &Query) -> Result<f64> {
    let view = score_all(dataset, query)?;
    Ok(log_sum_exp(view.scores()))
}

/// Shifted log-sum-exp over a non-empty slice of finite scores.
pub(crate) fn log_sum_exp(scores: &[f64]) -> f64 {
    let shift = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = scores.iter().map(|&y| (y - shift).exp()).sum();
    shift + sum.ln()
}

/// One exact draw from p(i) = e^{y_i} / Z by inverse-CDF over the
/// max-shifted weights. Consumes exactly one uniform variate.
pub fn exact_sample<R: Rng + ?Sized>(dataset: &Dataset, query: &Query, rng: &mut R) -> Result<u32> {
    let view = score_all(dataset, query)?;
    Ok(sample_from_scores(view.scores(), rng))
}

/// Inverse-CDF draw over softmax(scores). The final bucket absorbs rounding.
pub(crate) fn sample_from_scores<R: Rng + ?Sized>(scores: &[f64], rng: &mut R) -> u32 {
    debug_assert!(!scores.is_empty());
    let shift = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = scores.iter().map(|&y| (y - shift).exp()).sum();
    let target = rng.random::<f64>() * total;
    let mut cum = 0.0;
    for (i, &y) in scores.iter().enumerate() {
        cum += (y - shift).exp();
        if target < cum {
            return i as u32;
        }
    }
    (scores.len() - 1) as u32
}

/// Exact expectation F = sum_i p(i) f_i of a bounded statistic.
/// Requires f finite with |f_i| <= c_bound; the result obeys the same bound.
pub fn exact_expectation(dataset: &Dataset, query: &Query, f: &[f64], c_bound: f64) -> Result<f64> {
    let view = score_all(dataset, query)?;
    check_statistic(f, view.len(), c_bound)?;
    let shift = view.scores().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (&y, &fi) in view.scores().iter().zip(f) {
        let w = (y - shift).exp();
        num += w * fi;
        den += w;
    }
    Ok(num / den)
}

pub(crate) fn check_statistic(f: &[f64], n: usize, c_bound: f64) -> Result<()> {
    if !c_bound.is_finite() || c_bound < 0.0 {
        return Err(Error::invalid(
            "c_bound",
            format!("must be finite and >= 0, got {c_bound}"),
        ));
    }
    if f.len() != n {
        return Err(Error::invalid(
            "f",
            format!("statistic has {} values, domain has {n}", f.len()),
        ));
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "statistic f",
        });
    }
    if let Some(bad) = f.iter().find(|v| v.abs() > c_bound) {
        return Err(Error::invalid(
            "f",
            format!("|{bad}| exceeds the stated bound {c_bound}"),
        ));
    }
    Ok(())
}
