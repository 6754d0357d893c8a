//! Maximum-likelihood fitting of the parameter vector by gradient ascent.
//!
//! The log-likelihood of a training subset D is concave in theta, and its
//! gradient is mean_D phi(x) - E[phi] under the model. The expensive term is
//! the model expectation, so three interchangeable back-ends are provided:
//! an exact softmax mean, the shared-draw tail estimator (one retrieval and
//! one tail sample per step, reused across all d coordinates), and a
//! truncated mean over only the top-k set. Evaluation is always exact:
//! reported log-likelihoods never depend on the back-end.

use std::time::Instant;

use rand::Rng;

use crate::error::{Error, Result};
use crate::mips::{validate_result, TopKProvider};
use crate::model::{exact_partition, Dataset, Query};
use crate::rng::derive_rng;

/// How the per-step model expectation E[phi] is computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradientBackend {
    /// Full softmax mean over all n rows.
    Exact,
    /// Shared top-k set and uniform tail draws, one retrieval per step.
    Lazy { k: usize, l: u64, gap_c: Option<f64> },
    /// Softmax renormalized over the top-k set only; ignores the tail.
    TopkOnly { k: usize },
}

impl GradientBackend {
    pub fn name(&self) -> &'static str {
        match self {
            GradientBackend::Exact => "exact",
            GradientBackend::Lazy { .. } => "lazy",
            GradientBackend::TopkOnly { .. } => "topk_only",
        }
    }
}

/// Gradient-ascent schedule and bookkeeping knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnConfig {
    /// Ids of the training subset D.
    pub train_ids: Vec<u32>,
    pub iterations: usize,
    /// Initial learning rate; halved every `halving_period` iterations.
    pub lr0: f64,
    pub halving_period: usize,
    pub backend: GradientBackend,
    /// Exact mean log-likelihood is recorded every this many iterations.
    pub eval_period: usize,
    pub seed: u64,
}

/// One point on the training curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    /// 1-based iteration count at which the evaluation ran.
    pub iteration: usize,
    pub mean_log_likelihood: f64,
    /// Mean wall-clock seconds per gradient call since the previous point.
    pub grad_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnResult {
    pub theta: Vec<f64>,
    pub curve: Vec<EvalPoint>,
    /// Mean wall-clock seconds per gradient call over the whole run.
    pub mean_grad_seconds: f64,
    pub iterations: usize,
    pub backend: GradientBackend,
}

fn check_train_ids(dataset: &Dataset, train_ids: &[u32]) -> Result<()> {
    if train_ids.is_empty() {
        return Err(Error::invalid("train_ids", "need at least one training id"));
    }
    if let Some(&bad) = train_ids.iter().find(|&&id| id as usize >= dataset.len()) {
        return Err(Error::invalid(
            "train_ids",
            format!("id {bad} out of range for {} rows", dataset.len()),
        ));
    }
    Ok(())
}

/// Mean log-probability of the training subset under theta, with exact
/// normalization.
pub fn log_likelihood(dataset: &Dataset, theta: &[f64], train_ids: &[u32]) -> Result<f64> {
    check_train_ids(dataset, train_ids)?;
    let query = Query::new(theta.to_vec())?;
    let log_z = exact_partition(dataset, &query)?;
    let sum: f64 = train_ids
        .iter()
        .map(|&id| dataset.score(id as usize, &query) - log_z)
        .sum();
    Ok(sum / train_ids.len() as f64)
}

/// Softmax-weighted feature mean over the given (id, score) pairs,
/// accumulated in shifted space. Returns the d-vector.
fn weighted_feature_mean(
    dataset: &Dataset,
    scored: impl Iterator<Item = (u32, f64)> + Clone,
    tail: Option<(&[(u32, f64)], f64)>,
) -> Vec<f64> {
    let d = dataset.dim();
    let mut shift = f64::NEG_INFINITY;
    for (_, y) in scored.clone() {
        shift = shift.max(y);
    }
    if let Some((tail, _)) = tail {
        for &(_, y) in tail {
            shift = shift.max(y);
        }
    }
    let mut num = vec![0.0f64; d];
    let mut den = 0.0f64;
    let fold = |id: u32, y: f64, scale: f64, num: &mut [f64], den: &mut f64| {
        let w = scale * (y - shift).exp();
        *den += w;
        let row = dataset.row(id as usize);
        for (acc, &v) in num.iter_mut().zip(row) {
            *acc += w * v as f64;
        }
    };
    for (id, y) in scored {
        fold(id, y, 1.0, &mut num, &mut den);
    }
    if let Some((tail, ratio)) = tail {
        for &(id, y) in tail {
            fold(id, y, ratio, &mut num, &mut den);
        }
    }
    num.iter().map(|v| v / den).collect()
}

/// The ascent direction: mean_D phi(x) - E^[phi] under the chosen back-end.
pub fn gradient<R: Rng + ?Sized>(
    dataset: &Dataset,
    theta: &[f64],
    train_ids: &[u32],
    backend: GradientBackend,
    provider: &dyn TopKProvider,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_train_ids(dataset, train_ids)?;
    let n = dataset.len();
    let d = dataset.dim();
    let query = Query::new(theta.to_vec())?;
    dataset.check_query(&query)?;

    let mut data_mean = vec![0.0f64; d];
    for &id in train_ids {
        for (acc, &v) in data_mean.iter_mut().zip(dataset.row(id as usize)) {
            *acc += v as f64;
        }
    }
    for v in &mut data_mean {
        *v /= train_ids.len() as f64;
    }

    let model_mean = match backend {
        GradientBackend::Exact => {
            let scored = (0..n as u32).map(|id| (id, dataset.score(id as usize, &query)));
            weighted_feature_mean(dataset, scored, None)
        }
        GradientBackend::Lazy { k, l, gap_c: _ } => {
            if k == 0 || l == 0 {
                return Err(Error::invalid("backend", "lazy needs k >= 1 and l >= 1"));
            }
            let result = provider.top_k(&query, k)?;
            validate_result(dataset, &query, &result)?;
            if result.items.len() == n {
                // Full coverage: no tail exists, fall through to the exact
                // mean so k = n is identical to the exact back-end.
                let scored = (0..n as u32).map(|id| (id, dataset.score(id as usize, &query)));
                weighted_feature_mean(dataset, scored, None)
            } else {
                let in_s: std::collections::HashSet<u32> = result.ids().collect();
                let tail: Vec<(u32, f64)> = (0..l)
                    .map(|_| {
                        let id = loop {
                            let cand = rng.random_range(0..n as u32);
                            if !in_s.contains(&cand) {
                                break cand;
                            }
                        };
                        (id, dataset.score(id as usize, &query))
                    })
                    .collect();
                let ratio = (n - result.items.len()) as f64 / l as f64;
                let scored = result.items.iter().map(|item| (item.id, item.score));
                weighted_feature_mean(dataset, scored.clone(), Some((&tail, ratio)))
            }
        }
        GradientBackend::TopkOnly { k } => {
            if k == 0 {
                return Err(Error::invalid("backend", "topk_only needs k >= 1"));
            }
            let result = provider.top_k(&query, k)?;
            validate_result(dataset, &query, &result)?;
            let scored = result.items.iter().map(|item| (item.id, item.score));
            weighted_feature_mean(dataset, scored, None)
        }
    };

    Ok(data_mean
        .iter()
        .zip(&model_mean)
        .map(|(a, b)| a - b)
        .collect())
}

/// Plain gradient ascent from theta = 0 with a halving schedule.
///
/// alpha_t = lr0 * 2^-floor(t / halving_period). Per-iteration randomness
/// comes from stream t of the config seed, so runs are bit-reproducible.
/// Aborts with the iteration number if the gradient or theta goes
/// non-finite.
pub fn train(
    dataset: &Dataset,
    config: &LearnConfig,
    provider: &dyn TopKProvider,
) -> Result<LearnResult> {
    check_train_ids(dataset, &config.train_ids)?;
    if config.iterations == 0 {
        return Err(Error::invalid("iterations", "must be >= 1"));
    }
    if !config.lr0.is_finite() || config.lr0 <= 0.0 {
        return Err(Error::invalid("lr0", format!("must be finite and > 0, got {}", config.lr0)));
    }
    if config.halving_period == 0 {
        return Err(Error::invalid("halving_period", "must be >= 1"));
    }
    if config.eval_period == 0 {
        return Err(Error::invalid("eval_period", "must be >= 1"));
    }

    let d = dataset.dim();
    let mut theta = vec![0.0f64; d];
    let mut curve = Vec::new();
    let mut total_grad_seconds = 0.0;
    let mut window_grad_seconds = 0.0;
    let mut window_iters = 0usize;

    for t in 0..config.iterations {
        let mut rng = derive_rng(config.seed, t as u64);
        let started = Instant::now();
        let g = gradient(
            dataset,
            &theta,
            &config.train_ids,
            config.backend,
            provider,
            &mut rng,
        )?;
        let elapsed = started.elapsed().as_secs_f64();
        total_grad_seconds += elapsed;
        window_grad_seconds += elapsed;
        window_iters += 1;

        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::DivergedGradient { iteration: t });
        }
        let alpha = config.lr0 * 0.5f64.powi((t / config.halving_period) as i32);
        for (th, gv) in theta.iter_mut().zip(&g) {
            *th += alpha * gv;
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::DivergedGradient { iteration: t });
        }

        if (t + 1) % config.eval_period == 0 || t + 1 == config.iterations {
            curve.push(EvalPoint {
                iteration: t + 1,
                mean_log_likelihood: log_likelihood(dataset, &theta, &config.train_ids)?,
                grad_seconds: window_grad_seconds / window_iters as f64,
            });
            window_grad_seconds = 0.0;
            window_iters = 0;
        }
    }

    Ok(LearnResult {
        theta,
        curve,
        mean_grad_seconds: total_grad_seconds / config.iterations as f64,
        iterations: config.iterations,
        backend: config.backend,
    })
}
