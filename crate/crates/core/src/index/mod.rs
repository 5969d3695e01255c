//! Exact top-k retrieval over an immutable shard of video documents.
//!
//! Document tokens are unit-normalized once at build time and stored at
//! 32-bit precision, so a shard written to disk and read back is identical
//! to the one in memory. When built with a video weight head the shard also
//! holds every document's fusion weights, computed from the stored tokens;
//! WTI queries then only run the text head.

pub mod bench;
pub mod flops;
pub mod store;

use std::cmp::Ordering;
use std::path::Path as FsPath;

use rayon::prelude::*;
use rayon::ThreadPool;

pub use bench::{bench, bench_interleaved, BenchReport};
pub use flops::{flop_count, FlopParams, FlopReport};
pub use store::{manifest_path, DrleFile, DrleRecord, Manifest};

use crate::error::{Error, Result};
use crate::interaction::{
    score_hi, score_mlp, score_xti, single, text_global, token::aggregate, token::form_weights, token_match,
    token_weights, HiLevels, Mechanism, MlpScorerParams, Path, Scorer, TiForm, WeightHead, XtiParams,
};
use crate::numerics::{cosine, dot, l2_normalize_rows, Matrix, Modality, TokenMatrix};

fn quantize(x: f64) -> f64 {
    x as f32 as f64
}

/// One stored document: normalized tokens and optional fusion weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardDoc {
    pub tokens: TokenMatrix,
    pub weights: Option<Vec<f64>>,
}

impl ShardDoc {
    pub fn id(&self) -> u32 {
        self.tokens.id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexShard {
    dim: usize,
    docs: Vec<ShardDoc>,
    // mean of each document's stored rows, shared by DP and MLP
    means: Vec<Vec<f64>>,
}

impl IndexShard {
    fn from_docs(dim: usize, docs: Vec<ShardDoc>) -> Result<Self> {
        let weighted = docs.first().is_some_and(|d| d.weights.is_some());
        for d in &docs {
            if d.tokens.dim() != dim {
                return Err(Error::ShapeMismatch(format!(
                    "document {} has width {}, shard has {dim}",
                    d.id(),
                    d.tokens.dim()
                )));
            }
            if d.weights.is_some() != weighted || d.weights.as_ref().is_some_and(|w| w.len() != d.tokens.len()) {
                return Err(Error::ShapeMismatch(format!("document {}: weights missing or misshapen", d.id())));
            }
        }
        let means = docs.iter().map(|d| d.tokens.valid_mean()).collect();
        Ok(Self { dim, docs, means })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn docs(&self) -> &[ShardDoc] {
        &self.docs
    }

    pub fn has_weights(&self) -> bool {
        self.docs.first().is_some_and(|d| d.weights.is_some())
    }

    /// Longest stored sequence.
    pub fn max_tokens(&self) -> usize {
        self.docs.iter().map(|d| d.tokens.len()).max().unwrap_or(0)
    }

    pub fn supports(&self, m: Mechanism) -> bool {
        m != Mechanism::Wti || self.has_weights() || self.is_empty()
    }

    pub fn mechanism_support(&self) -> Vec<Mechanism> {
        Mechanism::ALL.into_iter().filter(|&m| self.supports(m)).collect()
    }
}

/// Normalizes every document and, given a video head, precomputes its
/// fusion weights.
pub fn build_index(docs: &[TokenMatrix], vw: Option<&WeightHead>) -> Result<IndexShard> {
    let dim = match (docs.first(), vw) {
        (Some(d), _) => d.dim(),
        (None, Some(h)) => h.input_dim(),
        (None, None) => 0,
    };
    if let Some(h) = vw {
        if h.input_dim() != dim {
            return Err(Error::ShapeMismatch(format!("video head width {} vs documents {dim}", h.input_dim())));
        }
    }
    let mut out = Vec::with_capacity(docs.len());
    for d in docs {
        if d.dim() != dim {
            return Err(Error::ShapeMismatch(format!("document {} has width {}, expected {dim}", d.id, d.dim())));
        }
        let (id, mut tokens, mask, _) = l2_normalize_rows(d)?.into_parts();
        tokens.as_mut_slice().iter_mut().for_each(|x| *x = quantize(*x));
        let tokens = TokenMatrix::new(id, tokens, mask, Modality::Video)?;
        let weights = match vw {
            Some(h) => Some(token_weights(&tokens, h)?.into_iter().map(quantize).collect()),
            None => None,
        };
        out.push(ShardDoc { tokens, weights });
    }
    IndexShard::from_docs(dim, out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub id: u32,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub query_id: u32,
    /// Best first; ties by ascending id.
    pub hits: Vec<Hit>,
    /// 1-based rank of the labeled document in the full ranking.
    pub rank_of_truth: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct QueryOptions<'a> {
    pub truth: Option<u32>,
    pub pool: Option<&'a ThreadPool>,
}

/// Ranking order: higher score first, then lower id.
pub fn hit_order(a: &Hit, b: &Hit) -> Ordering {
    b.score.total_cmp(&a.score).then(a.id.cmp(&b.id))
}

enum Prepared<'a> {
    Dp(Vec<f64>),
    Hi(Vec<Vec<f64>>, &'a [f64]),
    Mlp(Vec<f64>, &'a MlpScorerParams),
    Xti(TokenMatrix, &'a XtiParams),
    Ti(TokenMatrix, Vec<f64>, TiForm, Path),
    Wti(TokenMatrix, Vec<f64>, Path),
}

impl<'a> Prepared<'a> {
    fn new(q: &TokenMatrix, scorer: &'a Scorer) -> Result<Self> {
        let qn = l2_normalize_rows(q)?;
        Ok(match scorer {
            Scorer::Dp => Prepared::Dp(text_global(&qn)?),
            Scorer::Hi { level_weights } => {
                single::validate_level_weights(level_weights)?;
                Prepared::Hi(single::segment_means(&qn, level_weights.len()), level_weights)
            }
            Scorer::Mlp(p) => Prepared::Mlp(text_global(&qn)?, p),
            Scorer::Xti(p) => Prepared::Xti(qn, p),
            Scorer::Ti { form, path } => {
                let w = form_weights(&qn, *form);
                Prepared::Ti(qn, w, *form, *path)
            }
            Scorer::Wti { text, path, .. } => {
                let w = token_weights(&qn, text)?;
                Prepared::Wti(qn, w, *path)
            }
        })
    }

    fn score(&self, shard: &IndexShard, k: usize) -> Result<f64> {
        let doc = &shard.docs[k];
        match self {
            Prepared::Dp(g) => cosine(g, &shard.means[k]).ok_or(Error::ZeroNormRow { row: 0, norm: 0.0 }),
            Prepared::Hi(tl, weights) => {
                let vl = single::segment_means(&doc.tokens, weights.len());
                score_hi(&HiLevels::new(tl.iter().cloned().zip(vl).collect(), weights.to_vec())?)
            }
            Prepared::Mlp(g, p) => score_mlp(g, &shard.means[k], p),
            Prepared::Xti(q, p) => score_xti(q, &doc.tokens, p),
            Prepared::Ti(q, tw, form, path) => {
                let m = token_match(q, &doc.tokens);
                // uniform video weights: no per-document weight vector needed
                let t2v = || dot(&m.row_max, tw);
                let v2t = || {
                    let s: f64 = m.col_max.iter().sum();
                    match form {
                        TiForm::Sum => s,
                        TiForm::Mean => s / doc.tokens.valid_count() as f64,
                    }
                };
                Ok(match path {
                    Path::T2v => t2v(),
                    Path::V2t => v2t(),
                    Path::Both => (t2v() + v2t()) / 2.0,
                })
            }
            Prepared::Wti(q, tw, path) => {
                let vw = doc.weights.as_ref().ok_or_else(|| Error::Unsupported("wti".into()))?;
                Ok(aggregate(&token_match(q, &doc.tokens), tw, vw, *path))
            }
        }
    }
}

/// Score of `q` against every document, in shard order.
pub fn scan_scores(q: &TokenMatrix, shard: &IndexShard, scorer: &Scorer, pool: Option<&ThreadPool>) -> Result<Vec<f64>> {
    if shard.is_empty() {
        return Ok(Vec::new());
    }
    if q.dim() != shard.dim {
        return Err(Error::DimMismatch { query: q.dim(), index: shard.dim });
    }
    if !shard.supports(scorer.mechanism()) {
        return Err(Error::Unsupported(format!("{} (shard has no precomputed weights)", scorer.mechanism())));
    }
    let prepared = Prepared::new(q, scorer)?;
    let n = shard.len();
    match pool {
        Some(pool) => pool.install(|| (0..n).into_par_iter().map(|k| prepared.score(shard, k)).collect()),
        None => (0..n).map(|k| prepared.score(shard, k)).collect(),
    }
}

/// Exact top-`k` documents for `q` under `scorer`.
pub fn query_topk(q: &TokenMatrix, shard: &IndexShard, k: usize, scorer: &Scorer) -> Result<RetrievalResult> {
    query_topk_with(q, shard, k, scorer, QueryOptions::default())
}

pub fn query_topk_with(
    q: &TokenMatrix,
    shard: &IndexShard,
    k: usize,
    scorer: &Scorer,
    opts: QueryOptions<'_>,
) -> Result<RetrievalResult> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let scores = scan_scores(q, shard, scorer, opts.pool)?;
    let mut hits: Vec<Hit> = shard.docs.iter().zip(&scores).map(|(d, &score)| Hit { id: d.id(), score }).collect();
    let rank_of_truth = opts.truth.and_then(|t| {
        let target = *hits.iter().find(|h| h.id == t)?;
        Some(1 + hits.iter().filter(|h| hit_order(h, &target) == Ordering::Less).count())
    });
    if k < hits.len() {
        hits.select_nth_unstable_by(k - 1, hit_order);
        hits.truncate(k);
    }
    hits.sort_by(hit_order);
    Ok(RetrievalResult { query_id: q.id, hits, rank_of_truth })
}

/// Writes the shard as DRLE plus a `<path>.manifest` sidecar holding the
/// shard summary followed by `extra`.
pub fn save_shard(shard: &IndexShard, path: &FsPath, extra: &Manifest) -> Result<()> {
    let records = shard
        .docs
        .iter()
        .map(|d| DrleRecord {
            id: d.id(),
            tokens: d.tokens.tokens().as_slice().iter().map(|&x| x as f32).collect(),
            mask: d.tokens.mask().to_vec(),
            weights: d.weights.as_ref().map(|w| w.iter().map(|&x| x as f32).collect()),
        })
        .collect();
    DrleFile { dim: shard.dim, records }.write(path)?;
    let support: Vec<&str> = shard.mechanism_support().into_iter().map(Mechanism::name).collect();
    let mut m = Manifest::new();
    m.set("kind", "shard")
        .set("format", "DRLE")
        .set("version", store::VERSION)
        .set("docs", shard.len())
        .set("dim", shard.dim)
        .set("weights", shard.has_weights())
        .set("mechanism_support", support.join(","))
        .merge(extra);
    m.write(&manifest_path(path))
}

pub fn load_shard(path: &FsPath) -> Result<IndexShard> {
    let f = DrleFile::read(path)?;
    let dim = f.dim;
    let docs = f
        .records
        .into_iter()
        .map(|r| {
            let weights = r.weights.as_ref().map(|w| w.iter().map(|&x| f64::from(x)).collect());
            Ok(ShardDoc { tokens: record_to_tokens(r, dim, Modality::Video)?, weights })
        })
        .collect::<Result<Vec<_>>>()?;
    IndexShard::from_docs(dim, docs)
}

fn record_to_tokens(r: DrleRecord, dim: usize, modality: Modality) -> Result<TokenMatrix> {
    let n = r.len();
    if n == 0 || dim == 0 {
        return Err(Error::Format(format!("record {} is empty", r.id)));
    }
    let tokens = Matrix::from_vec(n, dim, r.tokens.into_iter().map(f64::from).collect())?;
    TokenMatrix::new(r.id, tokens, r.mask, modality).map_err(|e| Error::Format(format!("record {}: {e}", r.id)))
}

/// Writes token sequences as DRLE without weights. Values are stored at
/// 32-bit precision.
pub fn save_tokens(items: &[TokenMatrix], path: &FsPath, manifest: &Manifest) -> Result<()> {
    let dim = items.first().map_or(0, TokenMatrix::dim);
    let records = items
        .iter()
        .map(|t| {
            if t.dim() != dim {
                return Err(Error::ShapeMismatch(format!("item {} has width {}, expected {dim}", t.id, t.dim())));
            }
            Ok(DrleRecord {
                id: t.id,
                tokens: t.tokens().as_slice().iter().map(|&x| x as f32).collect(),
                mask: t.mask().to_vec(),
                weights: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    DrleFile { dim, records }.write(path)?;
    manifest.write(&manifest_path(path))
}

pub fn load_tokens(path: &FsPath, modality: Modality) -> Result<Vec<TokenMatrix>> {
    let f = DrleFile::read(path)?;
    let dim = f.dim;
    f.records.into_iter().map(|r| record_to_tokens(r, dim, modality)).collect()
}
