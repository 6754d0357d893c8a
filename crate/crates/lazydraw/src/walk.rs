//! Markov-chain random walk over a dataset. From state j, the next state is
//! drawn from the softmax kernel Pr(i | j) proportional to
//! e^{tau * phi(x_i) . phi(x_j)}, so every transition is itself a sampling
//! problem with theta = phi(x_j). The walk exercises the regime where no
//! per-query work can be cached: the query changes at every step.

use std::collections::HashSet;
use std::time::Instant;

use rand::Rng;

use crate::error::{Error, Result};
use crate::gumbel::sample_gumbel;
use crate::mips::TopKProvider;
use crate::model::{score_all, Dataset, Query};
use crate::rng::derive_rng;
use crate::sampler::{fixed_b_sample, lazy_sample};

/// Transition sampler for each step of the walk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WalkSampler {
    /// Score and perturb every row, then take the argmax. The naive
    /// baseline: exact and cache-free, cost n per step.
    Exact,
    /// Adaptive-cutoff sampling over a top-k retrieval.
    Lazy { k: usize, gap_c: Option<f64> },
    /// Fixed-cutoff sampling calibrated for l expected tail exceedances.
    FixedB { k: usize, l: u64, gap_c: Option<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkConfig {
    pub steps: u64,
    /// Score multiplier tau >= 0; zero collapses the kernel to uniform.
    pub tau: f64,
    pub sampler: WalkSampler,
    pub seed: u64,
    /// Leading transitions excluded from counts and trajectory.
    pub burn_in: u64,
    /// Record every thin-th post-burn-in state.
    pub thin: u64,
}

impl WalkConfig {
    /// Burn-in defaults to 1% of steps; trajectory is unthinned.
    pub fn new(steps: u64, tau: f64, sampler: WalkSampler, seed: u64) -> Self {
        WalkConfig { steps, tau, sampler, seed, burn_in: steps / 100, thin: 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkStats {
    /// Post-burn-in visit counts per id; sums to steps - burn_in.
    pub visit_counts: Vec<u64>,
    /// Thinned post-burn-in state sequence.
    pub trajectory: Vec<u32>,
    pub steps: u64,
    pub burn_in: u64,
    pub mean_step_seconds: f64,
    pub total_seconds: f64,
}

/// Top-set agreement between two walks over the same dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapReport {
    /// |top(a) ∩ top(b)| / compared.
    pub fraction: f64,
    /// Set size actually compared; smaller than requested when a walk
    /// visited fewer distinct states.
    pub compared: usize,
    pub truncated: bool,
}

fn exact_transition<R: Rng + ?Sized>(
    dataset: &Dataset,
    query: &Query,
    rng: &mut R,
) -> Result<u32> {
    let scores = score_all(dataset, query)?;
    let mut best_id = 0u32;
    let mut best = f64::NEG_INFINITY;
    for (id, y) in scores.iter() {
        let perturbed = y + sample_gumbel(rng);
        if perturbed > best {
            best = perturbed;
            best_id = id;
        }
    }
    Ok(best_id)
}

/// Runs the walk from a uniform initial state.
///
/// Each step rebuilds the query from the current state's feature row, so
/// nothing carries over between steps except the state itself. Same seed and
/// config give an identical trajectory.
pub fn run_walk(
    dataset: &Dataset,
    config: &WalkConfig,
    provider: &dyn TopKProvider,
) -> Result<WalkStats> {
    let n = dataset.len();
    if config.steps == 0 {
        return Err(Error::invalid("steps", "must be >= 1"));
    }
    if !config.tau.is_finite() || config.tau < 0.0 {
        return Err(Error::invalid("tau", format!("must be finite and >= 0, got {}", config.tau)));
    }
    if config.burn_in >= config.steps {
        return Err(Error::invalid(
            "burn_in",
            format!("{} leaves no counted steps out of {}", config.burn_in, config.steps),
        ));
    }
    if config.thin == 0 {
        return Err(Error::invalid("thin", "must be >= 1"));
    }

    let mut rng = derive_rng(config.seed, 0);
    let mut cur: u32 = rng.random_range(0..n as u32);
    let mut counts = vec![0u64; n];
    let mut trajectory = Vec::new();
    let mut total_seconds = 0.0;

    for t in 0..config.steps {
        let started = Instant::now();
        let next = if config.tau == 0.0 {
            // Zero multiplier: every row scores 0, the kernel is uniform.
            rng.random_range(0..n as u32)
        } else {
            let query = Query::from_row(dataset, cur as usize, config.tau)?;
            match config.sampler {
                WalkSampler::Exact => exact_transition(dataset, &query, &mut rng)?,
                WalkSampler::Lazy { k, gap_c } => {
                    lazy_sample(dataset, &query, provider, k, gap_c, &mut rng)?.chosen_id
                }
                WalkSampler::FixedB { k, l, gap_c } => {
                    fixed_b_sample(dataset, &query, provider, k, l, gap_c, &mut rng)?.chosen_id
                }
            }
        };
        total_seconds += started.elapsed().as_secs_f64();
        cur = next;
        if t >= config.burn_in {
            counts[next as usize] += 1;
            if (t - config.burn_in) % config.thin == 0 {
                trajectory.push(next);
            }
        }
    }

    Ok(WalkStats {
        visit_counts: counts,
        trajectory,
        steps: config.steps,
        burn_in: config.burn_in,
        mean_step_seconds: total_seconds / config.steps as f64,
        total_seconds,
    })
}

/// Ids with nonzero counts, by count descending then id ascending.
fn ranked_ids(counts: &[u64]) -> Vec<u32> {
    let mut ids: Vec<u32> = (0..counts.len() as u32)
        .filter(|&id| counts[id as usize] > 0)
        .collect();
    ids.sort_by(|&a, &b| {
        counts[b as usize]
            .cmp(&counts[a as usize])
            .then(a.cmp(&b))
    });
    ids
}

/// Fraction of the top-n most-visited ids shared by two walks.
///
/// Count ties rank the smaller id first. If either walk visited fewer than
/// top_n distinct states, the comparison shrinks to the smaller visited size
/// and the report is flagged as truncated.
pub fn topset_overlap(a: &WalkStats, b: &WalkStats, top_n: usize) -> Result<OverlapReport> {
    if a.visit_counts.len() != b.visit_counts.len() {
        return Err(Error::invalid(
            "stats",
            format!(
                "walks cover different datasets: {} vs {} ids",
                a.visit_counts.len(),
                b.visit_counts.len()
            ),
        ));
    }
    if top_n == 0 {
        return Err(Error::invalid("top_n", "must be >= 1"));
    }
    let ranked_a = ranked_ids(&a.visit_counts);
    let ranked_b = ranked_ids(&b.visit_counts);
    let compared = top_n.min(ranked_a.len()).min(ranked_b.len());
    if compared == 0 {
        return Err(Error::invalid("stats", "a walk has no visited states"));
    }
    let set_a: HashSet<u32> = ranked_a[..compared].iter().copied().collect();
    let hits = ranked_b[..compared]
        .iter()
        .filter(|id| set_a.contains(id))
        .count();
    Ok(OverlapReport {
        fraction: hits as f64 / compared as f64,
        compared,
        truncated: compared < top_n,
    })
}
