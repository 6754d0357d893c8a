//! Partition-function and expectation estimation from a top-k set plus a
//! uniform tail sample.
//!
//! Both estimators share one recipe: retrieve S, draw T as l uniform ids
//! with replacement from the complement, and combine
//! Z^ = sum_S e^y + ((n - |S|) / l) sum_T e^y. The tail term is an unbiased
//! importance estimate of the mass outside S, so Z^ is unbiased, and
//! because the big scores sit inside S the tail summands are bounded, which
//! is what gives the Chernoff-style sample-size guarantees behind
//! [`choose_kl`]. Expectations reuse the same draws for numerator and
//! denominator and report the ratio, a convex combination of the statistic's
//! values. All accumulation happens in log-shifted space around the largest
//! score seen.

use std::collections::HashSet;
use std::time::Instant;

use rand::Rng;

use crate::error::{Error, Result};
use crate::mips::{validate_result, TopKProvider};
use crate::model::{exact_partition, log_sum_exp, Dataset, Query};
use crate::rng::derive_rng;

/// A scalar estimate and the budget that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarEstimate {
    /// log Z^ for partition estimates; F^ for expectation estimates.
    pub value: f64,
    /// Z^ = mantissa * e^shift; kept factored so downstream ratios stay
    /// finite for scores far beyond exp overflow.
    pub shift: f64,
    pub mantissa: f64,
    /// Retrieval budget requested.
    pub k: usize,
    /// Tail draws requested.
    pub l: u64,
    /// Provider's score-gap certificate, when it gave one.
    pub gap_c: Option<f64>,
    /// Stamped by callers that own the seed.
    pub seed: Option<u64>,
    /// Score evaluations: |S| + l (complement rejections test membership
    /// only, they never score).
    pub touched: u64,
    /// Set when S already covered the whole dataset and no tail was drawn.
    pub exact_fallback: bool,
}

/// Retrieved set plus tail accumulators shared by both estimators.
struct TailSums {
    shift: f64,
    s_sum: f64,
    s_fsum: f64,
    tail_sum: f64,
    tail_fsum: f64,
    n_minus_s: u64,
    s_len: usize,
    gap_c: Option<f64>,
    exact_fallback: bool,
}

/// Runs retrieval and the shared tail pass. `f` weights the optional
/// statistic; pass None for plain partition mass.
fn accumulate<R: Rng + ?Sized>(
    dataset: &Dataset,
    query: &Query,
    provider: &dyn TopKProvider,
    k: usize,
    l: u64,
    f: Option<&[f64]>,
    rng: &mut R,
) -> Result<TailSums> {
    if k == 0 {
        return Err(Error::invalid("k", "must be >= 1"));
    }
    if l == 0 {
        return Err(Error::invalid("l", "must be >= 1"));
    }
    let n = dataset.len();
    let result = provider.top_k(query, k)?;
    validate_result(dataset, query, &result)?;

    // Two-pass over S and T: max first, then shifted sums. T is drawn up
    // front so the shift covers every score entering the estimate.
    let s_scores: Vec<f64> = result.items.iter().map(|i| i.score).collect();
    let s_ids: HashSet<u32> = result.ids().collect();
    let covers_all = result.items.len() == n;
    let tail: Vec<u32> = if covers_all {
        Vec::new()
    } else {
        (0..l)
            .map(|_| loop {
                let id = rng.random_range(0..n as u32);
                if !s_ids.contains(&id) {
                    break id;
                }
            })
            .collect()
    };
    let tail_scores: Vec<f64> = tail
        .iter()
        .map(|&id| dataset.score(id as usize, query))
        .collect();

    let shift = s_scores
        .iter()
        .chain(tail_scores.iter())
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);

    let mut s_sum = 0.0;
    let mut s_fsum = 0.0;
    for (item, &y) in result.items.iter().zip(&s_scores) {
        let w = (y - shift).exp();
        s_sum += w;
        if let Some(f) = f {
            s_fsum += w * f[item.id as usize];
        }
    }
    let mut tail_sum = 0.0;
    let mut tail_fsum = 0.0;
    for (&id, &y) in tail.iter().zip(&tail_scores) {
        let w = (y - shift).exp();
        tail_sum += w;
        if let Some(f) = f {
            tail_fsum += w * f[id as usize];
        }
    }
    Ok(TailSums {
        shift,
        s_sum,
        s_fsum,
        tail_sum,
        tail_fsum,
        n_minus_s: (n - result.items.len()) as u64,
        s_len: result.items.len(),
        gap_c: result.gap_c,
        exact_fallback: covers_all,
    })
}

impl TailSums {
    /// Z^ mantissa: sum_S + ((n - |S|) / l) sum_T, with the integer product
    /// taken before the division so a constant tail stays exact.
    fn mass(&self, l: u64) -> f64 {
        if self.n_minus_s == 0 {
            self.s_sum
        } else {
            self.s_sum + (self.n_minus_s as f64 * self.tail_sum) / l as f64
        }
    }

    fn weighted_statistic(&self, l: u64) -> f64 {
        if self.n_minus_s == 0 {
            self.s_fsum
        } else {
            self.s_fsum + (self.n_minus_s as f64 * self.tail_fsum) / l as f64
        }
    }
}

/// Unbiased partition estimate; `value` is log Z^.
///
/// Requires 1 <= k and l >= 1. When retrieval already covers the dataset the
/// estimate degenerates to the exact sum and says so.
pub fn estimate_partition<R: Rng + ?Sized>(
    dataset: &Dataset,
    query: &Query,
    provider: &dyn TopKProvider,
    k: usize,
    l: u64,
    rng: &mut R,
) -> Result<ScalarEstimate> {
    let sums = accumulate(dataset, query, provider, k, l, None, rng)?;
    let mantissa = sums.mass(l);
    Ok(ScalarEstimate {
        value: sums.shift + mantissa.ln(),
        shift: sums.shift,
        mantissa,
        k,
        l,
        gap_c: sums.gap_c,
        seed: None,
        touched: sums.s_len as u64 + if sums.exact_fallback { 0 } else { l },
        exact_fallback: sums.exact_fallback,
    })
}

/// Self-normalized expectation estimate F^ = J^ / Z^ over shared draws;
/// `value` is F^, clamped into [-C, C] against rounding at the rim.
///
/// `f` gives the statistic per id and must be bounded by `c_bound`.
pub fn estimate_expectation<R: Rng + ?Sized>(
    dataset: &Dataset,
    query: &Query,
    f: &[f64],
    c_bound: f64,
    provider: &dyn TopKProvider,
    k: usize,
    l: u64,
    rng: &mut R,
) -> Result<ScalarEstimate> {
    if f.len() != dataset.len() {
        return Err(Error::invalid(
            "f",
            format!("statistic has {} entries for {} rows", f.len(), dataset.len()),
        ));
    }
    if !c_bound.is_finite() || c_bound < 0.0 {
        return Err(Error::invalid("c_bound", format!("must be finite and >= 0, got {c_bound}")));
    }
    if f.iter().any(|v| !v.is_finite() || v.abs() > c_bound) {
        return Err(Error::invalid("f", format!("entries must be finite with |f| <= {c_bound}")));
    }
    let sums = accumulate(dataset, query, provider, k, l, Some(f), rng)?;
    let mantissa = sums.mass(l);
    let value = (sums.weighted_statistic(l) / mantissa).clamp(-c_bound, c_bound);
    Ok(ScalarEstimate {
        value,
        shift: sums.shift,
        mantissa,
        k,
        l,
        gap_c: sums.gap_c,
        seed: None,
        touched: sums.s_len as u64 + if sums.exact_fallback { 0 } else { l },
        exact_fallback: sums.exact_fallback,
    })
}

/// Which guarantee [`choose_kl`] sizes for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizingTarget {
    /// Relative error epsilon on Z with probability 1 - delta.
    Partition,
    /// Additive error epsilon * C on the expectation with probability
    /// 1 - delta.
    Expectation,
}

/// Smallest balanced k = l meeting the concentration requirement.
///
/// Partition: kl >= (2/3) eps^-2 n e^c ln(1/delta). Expectation adds the
/// second-moment condition l k^2 >= 8 n^2 e^{2c} eps^-2 ln(4/delta) on top
/// of kl >= (8/3) eps^-2 n e^c ln(2/delta). A retrieval gap c > 0 inflates
/// k by e^{c/2} (partition) or up to e^{2c/3} (expectation). Refuses when
/// the requirement reaches n, where the exact sum is cheaper.
pub fn choose_kl(
    n: usize,
    epsilon: f64,
    delta: f64,
    gap_c: f64,
    target: SizingTarget,
) -> Result<(usize, u64)> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if !epsilon.is_finite() || epsilon <= 0.0 {
        return Err(Error::invalid("epsilon", format!("must be finite and > 0, got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("delta", format!("must be in (0, 1), got {delta}")));
    }
    if !gap_c.is_finite() || gap_c < 0.0 {
        return Err(Error::invalid("gap_c", format!("must be finite and >= 0, got {gap_c}")));
    }
    let nf = n as f64;
    let eps2 = epsilon * epsilon;
    let need = match target {
        SizingTarget::Partition => {
            ((2.0 / 3.0) * nf * gap_c.exp() * (1.0 / delta).ln() / eps2).sqrt()
        }
        SizingTarget::Expectation => {
            let cube = (8.0 * nf * nf * (2.0 * gap_c).exp() * (4.0 / delta).ln() / eps2).cbrt();
            let square = ((8.0 / 3.0) * nf * gap_c.exp() * (2.0 / delta).ln() / eps2).sqrt();
            cube.max(square)
        }
    };
    let k = (need.ceil() as usize).max(1);
    if k >= n {
        return Err(Error::ExactCheaper { k, n, required: need });
    }
    Ok((k, k as u64))
}

/// One row of the accuracy/runtime trade-off table.
#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffRow {
    pub k: usize,
    pub l: u64,
    /// Mean |Z^ / Z - 1| across the queries.
    pub mean_rel_error: f64,
    /// Mean wall-clock seconds per query, excluding index build and the
    /// exact reference computation.
    pub mean_query_seconds: f64,
}

/// Sweeps (k, l) budgets against exact log Z over a query set.
///
/// l = 0 rows evaluate the retrieval-only estimate sum_S e^y, the baseline
/// that ignores the tail entirely. Reference values are computed once per
/// query outside the timed region.
pub fn tradeoff_sweep(
    dataset: &Dataset,
    queries: &[Query],
    provider: &dyn TopKProvider,
    grid: &[(usize, u64)],
    seed: u64,
) -> Result<Vec<TradeoffRow>> {
    if queries.is_empty() {
        return Err(Error::invalid("queries", "need at least one query"));
    }
    let exact: Vec<f64> = queries
        .iter()
        .map(|q| exact_partition(dataset, q))
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(grid.len());
    for (row_idx, &(k, l)) in grid.iter().enumerate() {
        let mut err_sum = 0.0;
        let mut time_sum = 0.0;
        for (qi, query) in queries.iter().enumerate() {
            let started = Instant::now();
            let log_z = if l == 0 {
                let result = provider.top_k(query, k)?;
                validate_result(dataset, query, &result)?;
                let scores: Vec<f64> = result.items.iter().map(|i| i.score).collect();
                log_sum_exp(&scores)
            } else {
                let mut rng = derive_rng(seed, (row_idx * queries.len() + qi) as u64);
                estimate_partition(dataset, query, provider, k, l, &mut rng)?.value
            };
            time_sum += started.elapsed().as_secs_f64();
            err_sum += ((log_z - exact[qi]).exp() - 1.0).abs();
        }
        rows.push(TradeoffRow {
            k,
            l,
            mean_rel_error: err_sum / queries.len() as f64,
            mean_query_seconds: time_sum / queries.len() as f64,
        });
    }
    Ok(rows)
}
