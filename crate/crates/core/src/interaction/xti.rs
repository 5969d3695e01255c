//! Cross-transformer interaction: joint multi-head self-attention over the
//! concatenated text and video tokens, mean-pooled into a scalar.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::single::check_dims;
use crate::error::{Error, Result};
use crate::numerics::{dot, l2_normalize_rows, Matrix, TokenMatrix};

/// One attention block. Projections are `D × D`, applied as `y = W x`,
/// without bias. No residual or normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionBlock {
    pub query: Matrix,
    pub key: Matrix,
    pub value: Matrix,
    pub output: Matrix,
}

impl AttentionBlock {
    pub fn zeros(dim: usize) -> Self {
        Self {
            query: Matrix::zeros(dim, dim),
            key: Matrix::zeros(dim, dim),
            value: Matrix::zeros(dim, dim),
            output: Matrix::zeros(dim, dim),
        }
    }

    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        let mut m = || Matrix::from_fn(dim, dim, |_, _| rng.random_range(-bound..=bound));
        Self { query: m(), key: m(), value: m(), output: m() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XtiParams {
    heads: usize,
    blocks: Vec<AttentionBlock>,
    score_weight: Vec<f64>,
    score_bias: f64,
}

impl XtiParams {
    pub fn new(heads: usize, blocks: Vec<AttentionBlock>, score_weight: Vec<f64>, score_bias: f64) -> Result<Self> {
        let d = score_weight.len();
        if blocks.is_empty() {
            return Err(Error::Config("cross transformer needs at least one block".into()));
        }
        if heads == 0 || d == 0 || !d.is_multiple_of(heads) {
            return Err(Error::Config(format!("width {d} is not divisible by {heads} heads")));
        }
        for (i, b) in blocks.iter().enumerate() {
            for m in [&b.query, &b.key, &b.value, &b.output] {
                if m.rows() != d || m.cols() != d {
                    return Err(Error::ShapeMismatch(format!(
                        "block {i} has a {}x{} projection, expected {d}x{d}",
                        m.rows(),
                        m.cols()
                    )));
                }
            }
        }
        Ok(Self { heads, blocks, score_weight, score_bias })
    }

    pub fn random<R: Rng + ?Sized>(dim: usize, heads: usize, depth: usize, rng: &mut R) -> Result<Self> {
        let blocks = (0..depth).map(|_| AttentionBlock::random(dim, rng)).collect();
        let bound = 1.0 / (dim as f64).sqrt();
        let w = (0..dim).map(|_| rng.random_range(-bound..=bound)).collect();
        let b = rng.random_range(-bound..=bound);
        Self::new(heads, blocks, w, b)
    }

    pub fn dim(&self) -> usize {
        self.score_weight.len()
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn blocks(&self) -> &[AttentionBlock] {
        &self.blocks
    }

    pub fn score_weight(&self) -> &[f64] {
        &self.score_weight
    }

    pub fn score_bias(&self) -> f64 {
        self.score_bias
    }
}

/// Largest of 8, 4, 2, 1 that divides `dim`.
pub fn default_heads(dim: usize) -> usize {
    [8, 4, 2, 1].into_iter().find(|h| dim.is_multiple_of(*h)).unwrap_or(1)
}

fn project(w: &Matrix, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    xs.iter().map(|x| w.matvec(x)).collect()
}

fn attention_block(block: &AttentionBlock, heads: usize, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = block.query.rows();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = project(&block.query, xs);
    let k = project(&block.key, xs);
    let v = project(&block.value, xs);
    let n = xs.len();

    let mut out = Vec::with_capacity(n);
    let mut logits = vec![0.0; n];
    for qi in &q {
        let mut concat = vec![0.0; d];
        for h in 0..heads {
            let span = h * dh..(h + 1) * dh;
            for (j, kj) in k.iter().enumerate() {
                logits[j] = dot(&qi[span.clone()], &kj[span.clone()]) * scale;
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for l in logits.iter_mut() {
                *l = (*l - max).exp();
                z += *l;
            }
            for (j, vj) in v.iter().enumerate() {
                let a = logits[j] / z;
                for (c, x) in concat[span.clone()].iter_mut().zip(&vj[span.clone()]) {
                    *c += a * x;
                }
            }
        }
        out.push(block.output.matvec(&concat));
    }
    out
}

/// Runs every block over the already-normalized joint sequence and applies
/// the pooled scalar head.
pub(crate) fn xti_forward(p: &XtiParams, mut xs: Vec<Vec<f64>>) -> f64 {
    for block in &p.blocks {
        xs = attention_block(block, p.heads, &xs);
    }
    let n = xs.len() as f64;
    let mut pooled = vec![0.0; p.dim()];
    for x in &xs {
        for (a, b) in pooled.iter_mut().zip(x) {
            *a += b;
        }
    }
    pooled.iter_mut().for_each(|a| *a /= n);
    dot(&pooled, &p.score_weight) + p.score_bias
}

/// Cross-transformer score of one text/video pair.
///
/// Tokens are unit-normalized first. Masked tokens take part neither as
/// queries, keys nor in the pooling, which is the same as dropping them, so
/// only valid rows enter the joint sequence.
pub fn score_xti(t: &TokenMatrix, v: &TokenMatrix, p: &XtiParams) -> Result<f64> {
    check_dims(t, v)?;
    if t.dim() != p.dim() {
        return Err(Error::ShapeMismatch(format!(
            "cross transformer of width {} applied to tokens of width {}",
            p.dim(),
            t.dim()
        )));
    }
    let tn = l2_normalize_rows(t)?;
    let vn = l2_normalize_rows(v)?;
    let xs: Vec<Vec<f64>> = tn
        .valid_indices()
        .map(|i| tn.row(i).to_vec())
        .chain(vn.valid_indices().map(|j| vn.row(j).to_vec()))
        .collect();
    if xs.len() < 2 {
        return Err(Error::AllMasked);
    }
    Ok(xti_forward(p, xs))
}
