//! Wall-clock scan benchmark.

use std::hint::black_box;
use std::time::Instant;

use rayon::ThreadPool;

use super::flops::{flop_count, FlopParams, FlopReport};
use super::{scan_scores, IndexShard};
use crate::error::{Error, Result};
use crate::interaction::{Mechanism, Scorer};
use crate::numerics::TokenMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub mechanism: Mechanism,
    pub docs: usize,
    pub queries: usize,
    pub repetitions: usize,
    /// Median over repetitions of the time to scan every query once.
    pub median_scan_secs: f64,
    pub docs_per_sec: f64,
    /// Per-query scan latency percentiles over all repetitions.
    pub p50_latency_secs: f64,
    pub p95_latency_secs: f64,
    pub flops: FlopReport,
}

/// Nearest-rank percentile of an ascending slice.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn flop_params(shard: &IndexShard, queries: &[TokenMatrix], scorer: &Scorer) -> FlopParams {
    let (l, s) = match scorer {
        Scorer::Mlp(p) => (p.layers().len(), 1),
        Scorer::Xti(p) => (p.blocks().len(), 1),
        Scorer::Hi { level_weights } => (1, level_weights.len()),
        _ => (1, 1),
    };
    FlopParams {
        n: shard.len() as u64,
        d: shard.dim() as u64,
        nt: queries.iter().map(TokenMatrix::len).max().unwrap_or(0) as u64,
        nv: shard.max_tokens() as u64,
        l: l as u64,
        s: s as u64,
    }
}

/// Times full scans of `shard` for every query, `repetitions` times.
pub fn bench(
    shard: &IndexShard,
    queries: &[TokenMatrix],
    scorer: &Scorer,
    repetitions: usize,
    pool: Option<&ThreadPool>,
) -> Result<BenchReport> {
    Ok(bench_interleaved(shard, queries, std::slice::from_ref(scorer), repetitions, pool)?.remove(0))
}

/// Benchmarks several scorers with their repetitions interleaved, so slow
/// drift in machine load affects all of them alike.
pub fn bench_interleaved(
    shard: &IndexShard,
    queries: &[TokenMatrix],
    scorers: &[Scorer],
    repetitions: usize,
    pool: Option<&ThreadPool>,
) -> Result<Vec<BenchReport>> {
    if shard.is_empty() {
        return Err(Error::Config("cannot benchmark an empty shard".into()));
    }
    if queries.is_empty() {
        return Err(Error::Config("benchmark needs at least one query".into()));
    }
    if repetitions < 3 {
        return Err(Error::Config(format!("benchmark needs at least 3 repetitions, got {repetitions}")));
    }
    let mut scans = vec![Vec::with_capacity(repetitions); scorers.len()];
    let mut latencies = vec![Vec::with_capacity(repetitions * queries.len()); scorers.len()];
    for _ in 0..repetitions {
        for (k, scorer) in scorers.iter().enumerate() {
            let rep = Instant::now();
            for q in queries {
                let t = Instant::now();
                black_box(scan_scores(q, shard, scorer, pool)?);
                latencies[k].push(t.elapsed().as_secs_f64());
            }
            scans[k].push(rep.elapsed().as_secs_f64());
        }
    }
    Ok(scorers
        .iter()
        .enumerate()
        .map(|(k, scorer)| {
            let lat = &mut latencies[k];
            lat.sort_by(f64::total_cmp);
            let median_scan_secs = median(&scans[k]);
            BenchReport {
                mechanism: scorer.mechanism(),
                docs: shard.len(),
                queries: queries.len(),
                repetitions,
                median_scan_secs,
                docs_per_sec: (shard.len() * queries.len()) as f64 / median_scan_secs,
                p50_latency_secs: percentile(lat, 0.50),
                p95_latency_secs: percentile(lat, 0.95),
                flops: flop_count(scorer.mechanism(), flop_params(shard, queries, scorer)),
            }
        })
        .collect())
}
