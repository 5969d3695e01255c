//! Retrieval metrics.

use std::collections::BTreeMap;

use rayon::ThreadPool;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{build_index, query_topk_with, QueryOptions, RetrievalResult};
use crate::interaction::Scorer;
use crate::numerics::TokenMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Percentages.
    pub r_at_1: f64,
    pub r_at_5: f64,
    pub r_at_10: f64,
    /// Lower median of the ranks.
    pub mdr: usize,
    pub mnr: f64,
}

/// R@{1,5,10}, median and mean rank of the labeled documents.
pub fn evaluate(results: &[RetrievalResult]) -> Result<Metrics> {
    if results.is_empty() {
        return Err(Error::Config("no retrieval results to evaluate".into()));
    }
    let mut ranks = results
        .iter()
        .map(|r| r.rank_of_truth.ok_or(Error::MissingTruth { query: r.query_id }))
        .collect::<Result<Vec<_>>>()?;
    ranks.sort_unstable();
    let n = ranks.len() as f64;
    let recall = |k: usize| 100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    Ok(Metrics {
        r_at_1: recall(1),
        r_at_5: recall(5),
        r_at_10: recall(10),
        mdr: ranks[(ranks.len() - 1) / 2],
        mnr: ranks.iter().sum::<usize>() as f64 / n,
    })
}

/// Indexes `videos`, runs every query and scores the ranking against
/// `truth` (query id → video id).
pub fn retrieval_metrics(
    queries: &[TokenMatrix],
    videos: &[TokenMatrix],
    truth: &BTreeMap<u32, u32>,
    scorer: &Scorer,
    pool: Option<&ThreadPool>,
) -> Result<Metrics> {
    let shard = build_index(videos, scorer.video_head())?;
    let results = queries
        .iter()
        .map(|q| {
            let t = truth.get(&q.id).copied().ok_or(Error::MissingTruth { query: q.id })?;
            query_topk_with(q, &shard, 10, scorer, QueryOptions { truth: Some(t), pool })
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate(&results)
}
