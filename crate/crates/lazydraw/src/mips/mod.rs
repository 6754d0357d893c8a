//! Pluggable top-k retrieval over maximum inner product.
//!
//! The sampler and estimators only need "the k highest-scoring ids under this
//! query"; where those come from is swappable. Three providers ship here: an
//! exact scan, an inverted-file (IVF) index over k-means clusters with no
//! quality certificate, and a ladder of signed-random-projection LSH
//! instances that certifies a score-gap c at a stated failure probability.

mod ivf;
mod lsh;
mod persist;

pub use ivf::{build_ivf, ivf_topk, IvfIndex, IvfProvider};
pub use lsh::{build_lsh_ladder, lsh_topk, LshConfig, LshLadder, LshProvider};
pub use persist::{index_info, load_index, save_index, Index, IndexInfo, IndexKind};

use crate::error::{Error, Result};
use crate::model::{exact_topk, rank_order, Dataset, Query, ScoredId, TopKResult};

/// A source of top-k sets for queries against one dataset.
///
/// Contract: items come back ordered by score descending (ties toward the
/// smaller id), ids are distinct, and every reported score equals the exact
/// score of that id under the query.
pub trait TopKProvider {
    fn top_k(&self, query: &Query, k: usize) -> Result<TopKResult>;

    /// Short name for manifests and benchmark output.
    fn name(&self) -> &'static str;
}

/// Full-scan provider; certifies a zero score gap.
pub struct ExactProvider<'a> {
    dataset: &'a Dataset,
}

impl<'a> ExactProvider<'a> {
    pub fn new(dataset: &'a Dataset) -> Self {
        ExactProvider { dataset }
    }
}

impl TopKProvider for ExactProvider<'_> {
    fn top_k(&self, query: &Query, k: usize) -> Result<TopKResult> {
        exact_topk(self.dataset, query, k)
    }

    fn name(&self) -> &'static str {
        "exact"
    }
}

/// Exact top-k over an explicit candidate set. The scan flavors (IVF probe
/// unions, LSH buckets) all reduce to this.
pub(crate) fn topk_over_candidates<I>(
    dataset: &Dataset,
    query: &Query,
    candidates: I,
    k: usize,
) -> Vec<ScoredId>
where
    I: IntoIterator<Item = u32>,
{
    let mut scored: Vec<ScoredId> = candidates
        .into_iter()
        .map(|id| ScoredId {
            id,
            score: dataset.score(id as usize, query),
        })
        .collect();
    let kept = k.min(scored.len());
    if kept == 0 {
        return Vec::new();
    }
    if kept < scored.len() {
        scored.select_nth_unstable_by(kept - 1, rank_order);
        scored.truncate(kept);
    }
    scored.sort_unstable_by(rank_order);
    scored
}

/// Validates the provider contract on a result (distinct ids, correct scores).
/// The sampler runs this on every retrieved set; cost is O(k).
pub(crate) fn validate_result(dataset: &Dataset, query: &Query, result: &TopKResult) -> Result<()> {
    let mut seen = std::collections::HashSet::with_capacity(result.items.len());
    for item in &result.items {
        if !seen.insert(item.id) {
            return Err(Error::DuplicateProviderId { id: item.id });
        }
        debug_assert!(
            (item.score - dataset.score(item.id as usize, query)).abs()
                <= 1e-12 * item.score.abs().max(1.0),
            "provider score drift on id {}",
            item.id
        );
    }
    Ok(())
}
