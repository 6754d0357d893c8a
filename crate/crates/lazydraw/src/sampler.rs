//! Sublinear softmax sampling with lazily materialized Gumbel noise.
//!
//! The trick: perturb every score with Gumbel noise and take the argmax, but
//! only realize the noise where it can matter. A top-k set S gets real
//! Gumbels; everything else is summarized by a cutoff B that no skipped
//! perturbation can beat. The number of tail exceedances m is one binomial
//! draw, their identities are m uniform picks, and their values are
//! truncated Gumbels. With an exact top-k set and a zero gap the output is
//! distributed exactly as softmax(y); approximate retrieval with a certified
//! score gap c costs a factor e^c in expected touched items, nothing in
//! correctness of the cutoff argument.
//!
//! Two cutoff rules are provided: [`lazy_sample`] adapts B to the realized
//! max over S (always exact for exact retrieval), and [`fixed_b_sample`]
//! pins B from a target exceedance budget l, trading a small, quantified
//! failure probability for a data-independent cutoff. [`tv_upper_bound`]
//! evaluates, offline, how much any fixed set S can miss by.

use std::collections::HashSet;

use rand::Rng;

use crate::error::{Error, Result};
use crate::gumbel::{exceedance_count, sample_gumbel, sample_truncated_gumbel, GumbelCutoff};
use crate::mips::{validate_result, ExactProvider, TopKProvider};
use crate::model::{log_sum_exp, Dataset, Query, ScoreView, TopKResult};
use crate::rng::derive_rng;

/// Everything observable about one draw.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTrace {
    /// The sampled id.
    pub chosen_id: u32,
    /// M: max of y_i + G_i over the retrieved set.
    pub max_perturbed: f64,
    /// Smallest score in the retrieved set.
    pub s_min: f64,
    /// Cutoff the tail had to beat.
    pub cutoff_b: f64,
    /// m: how many tail perturbations exceeded the cutoff.
    pub tail_count: u64,
    /// |S| + m: ids whose scores were actually evaluated.
    pub touched: u64,
    /// Requested top-k size.
    pub k: usize,
    /// Exceedance budget, for the fixed-cutoff rule only.
    pub l: Option<u64>,
    /// Score-gap slack applied to the cutoff.
    pub gap_c: f64,
    /// Stamped by callers that own the seed; library callers pass an RNG.
    pub seed: Option<u64>,
}

/// Picks the slack c protecting the cutoff against retrieval error.
///
/// A caller-supplied value wins but may not undercut the provider's own
/// certificate; without either the draw would be unsound, so it is refused.
fn resolve_gap(result: &TopKResult, requested: Option<f64>) -> Result<f64> {
    if let Some(c) = requested {
        if !c.is_finite() || c < 0.0 {
            return Err(Error::invalid("gap_c", format!("must be finite and >= 0, got {c}")));
        }
        if let Some(certified) = result.gap_c {
            if certified > c {
                return Err(Error::GapCertificateExceeded {
                    certified,
                    assumed: c,
                });
            }
        }
        return Ok(c);
    }
    result.gap_c.ok_or(Error::MissingGapCertificate)
}

/// Perturbs the retrieved set and tracks the running argmax.
struct TopScan {
    best_id: u32,
    best_val: f64,
    max_perturbed: f64,
    s_min: f64,
}

fn perturb_top<R: Rng + ?Sized>(result: &TopKResult, rng: &mut R) -> TopScan {
    let mut best_id = 0u32;
    let mut best_val = f64::NEG_INFINITY;
    let mut s_min = f64::INFINITY;
    for item in &result.items {
        let perturbed = item.score + sample_gumbel(rng);
        if perturbed > best_val {
            best_val = perturbed;
            best_id = item.id;
        }
        s_min = s_min.min(item.score);
    }
    TopScan {
        best_id,
        best_val,
        max_perturbed: best_val,
        s_min,
    }
}

/// Realizes the tail: a binomial exceedance count, uniform distinct ids, and
/// truncated Gumbels, folded into the argmax. Expected cost O(m).
fn perturb_tail<R: Rng + ?Sized>(
    dataset: &Dataset,
    query: &Query,
    result: &TopKResult,
    cutoff: &GumbelCutoff,
    scan: &mut TopScan,
    rng: &mut R,
) -> u64 {
    let n = dataset.len() as u64;
    let tail_n = n - result.items.len() as u64;
    let m = exceedance_count(tail_n, cutoff, rng);
    if m == 0 {
        return 0;
    }
    let mut taken: HashSet<u32> = result.ids().collect();
    for _ in 0..m {
        let id = loop {
            let candidate = rng.random_range(0..n as u32);
            if taken.insert(candidate) {
                break candidate;
            }
        };
        let perturbed = dataset.score(id as usize, query) + sample_truncated_gumbel(cutoff, rng);
        if perturbed > scan.best_val {
            scan.best_val = perturbed;
            scan.best_id = id;
        }
    }
    m
}

/// One exact-in-distribution softmax draw with an adaptive cutoff.
///
/// Retrieves top-k, perturbs it, sets B = M - S_min - c, and realizes only
/// the tail perturbations that exceed B. With exact retrieval and c = 0 the
/// skipped ids provably cannot win, so the draw is exact; expected tail work
/// is at most n e^c / k evaluations.
pub fn lazy_sample<R: Rng + ?Sized>(
    dataset: &Dataset,
    query: &Query,
    provider: &dyn TopKProvider,
    k: usize,
    gap_c: Option<f64>,
    rng: &mut R,
) -> Result<SampleTrace> {
    let n = dataset.len();
    if k == 0 || k > n {
        return Err(Error::invalid("k", format!("must be in 1..={n}, got {k}")));
    }
    let result = provider.top_k(query, k)?;
    validate_result(dataset, query, &result)?;
    let c = resolve_gap(&result, gap_c)?;

    let mut scan = perturb_top(&result, rng);
    let b = scan.max_perturbed - scan.s_min - c;
    let cutoff = GumbelCutoff::from_b(b);
    let m = perturb_tail(dataset, query, &result, &cutoff, &mut scan, rng);
    Ok(SampleTrace {
        chosen_id: scan.best_id,
        max_perturbed: scan.max_perturbed,
        s_min: scan.s_min,
        cutoff_b: b,
        tail_count: m,
        touched: result.items.len() as u64 + m,
        k,
        l: None,
        gap_c: c,
        seed: None,
    })
}

/// One softmax draw with a cutoff fixed before any noise is seen.
///
/// B is chosen so that l of n unconditioned perturbations would exceed it in
/// expectation. The draw is exact unless every Gumbel in S lands below
/// B + c, which happens with probability at most exp(-(kl/n) e^{-c}).
pub fn fixed_b_sample<R: Rng + ?Sized>(
    dataset: &Dataset,
    query: &Query,
    provider: &dyn TopKProvider,
    k: usize,
    l: u64,
    gap_c: Option<f64>,
    rng: &mut R,
) -> Result<SampleTrace> {
    let n = dataset.len();
    if k == 0 || k > n {
        return Err(Error::invalid("k", format!("must be in 1..={n}, got {k}")));
    }
    let cutoff = GumbelCutoff::for_expected_exceedances(n as u64, l)?;
    let result = provider.top_k(query, k)?;
    validate_result(dataset, query, &result)?;
    let c = resolve_gap(&result, gap_c)?;

    let mut scan = perturb_top(&result, rng);
    let m = perturb_tail(dataset, query, &result, &cutoff, &mut scan, rng);
    Ok(SampleTrace {
        chosen_id: scan.best_id,
        max_perturbed: scan.max_perturbed,
        s_min: scan.s_min,
        cutoff_b: cutoff.b(),
        tail_count: m,
        touched: result.items.len() as u64 + m,
        k,
        l: Some(l),
        gap_c: c,
        seed: None,
    })
}

/// Which cutoff rule [`coupled_oracle_check`] replays.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CutoffRule {
    /// B = M - S_min - c, recomputed per draw.
    Adaptive,
    /// B fixed from an exceedance budget l.
    FixedExceedances { l: u64 },
}

/// Empirical exactness check by coupling.
///
/// Per trial, materializes one Gumbel per id from a seeded stream, finds the
/// true perturbed argmax, then replays the lazy rule on the same
/// realizations: S keeps its ids' Gumbels, T is exactly the tail ids whose
/// Gumbel exceeds B. Returns the fraction of trials where the replay picks a
/// different id. Linear per trial, so desk scale only.
pub fn coupled_oracle_check(
    dataset: &Dataset,
    query: &Query,
    provider: &dyn TopKProvider,
    k: usize,
    rule: CutoffRule,
    gap_c: Option<f64>,
    trials: u64,
    seed: u64,
) -> Result<f64> {
    let n = dataset.len();
    if k == 0 || k > n {
        return Err(Error::invalid("k", format!("must be in 1..={n}, got {k}")));
    }
    if trials == 0 {
        return Err(Error::invalid("trials", "must be >= 1"));
    }
    let result = provider.top_k(query, k)?;
    validate_result(dataset, query, &result)?;
    let c = resolve_gap(&result, gap_c)?;
    let scores: Vec<f64> = (0..n).map(|i| dataset.score(i, query)).collect();
    let in_s: HashSet<u32> = result.ids().collect();
    let fixed_b = match rule {
        CutoffRule::Adaptive => None,
        CutoffRule::FixedExceedances { l } => {
            Some(GumbelCutoff::for_expected_exceedances(n as u64, l)?.b())
        }
    };

    let mut disagreements = 0u64;
    for trial in 0..trials {
        let mut rng = derive_rng(seed, trial);
        let gumbels: Vec<f64> = (0..n).map(|_| sample_gumbel(&mut rng)).collect();

        let mut true_id = 0usize;
        let mut true_val = f64::NEG_INFINITY;
        for i in 0..n {
            let v = scores[i] + gumbels[i];
            if v > true_val {
                true_val = v;
                true_id = i;
            }
        }

        let mut lazy_id = 0u32;
        let mut lazy_val = f64::NEG_INFINITY;
        let mut s_min = f64::INFINITY;
        for item in &result.items {
            let v = item.score + gumbels[item.id as usize];
            if v > lazy_val {
                lazy_val = v;
                lazy_id = item.id;
            }
            s_min = s_min.min(item.score);
        }
        let b = fixed_b.unwrap_or(lazy_val - s_min - c);
        for i in 0..n {
            if gumbels[i] > b && !in_s.contains(&(i as u32)) {
                let v = scores[i] + gumbels[i];
                if v > lazy_val {
                    lazy_val = v;
                    lazy_id = i as u32;
                }
            }
        }
        if lazy_id != true_id as u32 {
            disagreements += 1;
        }
    }
    Ok(disagreements as f64 / trials as f64)
}

/// Upper bound on the total variation distance of sampling restricted to S.
///
/// With Z_S the exponentiated mass inside S and W the mass outside, the
/// chance that the true perturbed argmax escapes S is at most
/// min_x 1 - (1 - exp(-e^-x Z_S)) exp(-e^-x W): the first factor asks the
/// max over S to clear x, the second asks every tail perturbation to stay
/// under it. The minimum is found by golden-section search on ln u, u = e^-x,
/// to relative tolerance 1e-6, after expanding a bracket around the
/// equal-mass optimum. Empty S gives 1; empty tail gives 0.
pub fn tv_upper_bound(full_scores: &ScoreView, s: &TopKResult) -> f64 {
    if s.items.is_empty() {
        return 1.0;
    }
    let in_s: HashSet<u32> = s.ids().collect();
    let mut tail = Vec::with_capacity(full_scores.len().saturating_sub(s.items.len()));
    for (id, score) in full_scores.iter() {
        if !in_s.contains(&id) {
            tail.push(score);
        }
    }
    if tail.is_empty() {
        return 0.0;
    }
    let log_zs = log_sum_exp(&s.items.iter().map(|i| i.score).collect::<Vec<_>>());
    let log_w = log_sum_exp(&tail);

    // Escape bound at v = ln u; exp_m1 keeps the S factor accurate when the
    // inside mass term u * Z_S is small.
    let g = |v: f64| -> f64 {
        let s_term = -(-((v + log_zs).exp())).exp_m1();
        let tail_term = (-((v + log_w).exp())).exp();
        1.0 - s_term * tail_term
    };

    // Bracket around the equal-mass optimum u = ln 2 / Z_S, expanding until
    // the middle point beats both ends (g is unimodal in v).
    let mut mid = std::f64::consts::LN_2.ln() - log_zs;
    let mut step = 1.0;
    let (mut lo, mut hi) = (mid - step, mid + step);
    while g(lo) < g(mid) {
        mid = lo;
        step *= 2.0;
        lo -= step;
    }
    step = 1.0;
    while g(hi) < g(mid) {
        mid = hi;
        step *= 2.0;
        hi += step;
    }

    // Golden-section: tolerance on v is relative tolerance on u.
    let inv_phi = 0.5 * (5.0f64.sqrt() - 1.0);
    let mut a = lo;
    let mut b = hi;
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut g1 = g(x1);
    let mut g2 = g(x2);
    while b - a > 1e-6 {
        if g1 <= g2 {
            b = x2;
            x2 = x1;
            g2 = g1;
            x1 = b - inv_phi * (b - a);
            g1 = g(x1);
        } else {
            a = x1;
            x1 = x2;
            g1 = g2;
            x2 = a + inv_phi * (b - a);
            g2 = g(x2);
        }
    }
    g(0.5 * (a + b)).clamp(0.0, 1.0)
}

/// Convenience: the adaptive rule with the exact provider and zero gap.
pub fn exact_lazy_sample<R: Rng + ?Sized>(
    dataset: &Dataset,
    query: &Query,
    k: usize,
    rng: &mut R,
) -> Result<SampleTrace> {
    let provider = ExactProvider::new(dataset);
    lazy_sample(dataset, query, &provider, k, None, rng)
}
