//! Token-wise interaction (TI) and its weighted variant (WTI).
//!
//! For a text/video pair the unit-normalized token similarity matrix
//! `S[i][j] = t_i · v_j` is reduced twice: every valid text token keeps its
//! best video match (t2v) and every valid video token keeps its best text
//! match (v2t). Each direction is then a weighted sum of those maxima, and
//! the dual-path score is the average of the two directions.
//!
//! Masked entries never win a max: they are skipped, which is the same as
//! filling them with `-inf`. Ties go to the lowest index.

use super::weight_head::{token_weights, WeightHead};
use super::{Assignments, ScoreMatrix};
use crate::error::{Error, Result};
use crate::numerics::{dot, l2_normalize_rows, Matrix, TokenMatrix};

/// Aggregation of token maxima in plain TI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TiForm {
    /// Sum of maxima over each sequence.
    Sum,
    /// Mean of maxima over each sequence's valid tokens.
    #[default]
    Mean,
}

/// Which aggregation directions enter the score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Path {
    T2v,
    V2t,
    #[default]
    Both,
}

impl std::str::FromStr for Path {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "t2v" => Ok(Path::T2v),
            "v2t" => Ok(Path::V2t),
            "both" => Ok(Path::Both),
            other => Err(Error::Config(format!("unknown path {other:?}"))),
        }
    }
}

impl std::str::FromStr for TiForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(TiForm::Sum),
            "mean" => Ok(TiForm::Mean),
            other => Err(Error::Config(format!("unknown TI form {other:?}"))),
        }
    }
}

/// Row and column maxima of one pair's similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatch {
    /// Best similarity per text token (0 for masked tokens).
    pub row_max: Vec<f64>,
    pub row_arg: Vec<Option<usize>>,
    /// Best similarity per video token (0 for masked tokens).
    pub col_max: Vec<f64>,
    pub col_arg: Vec<Option<usize>>,
}

/// Scans the masked similarity matrix of two normalized sequences.
pub fn token_match(t: &TokenMatrix, v: &TokenMatrix) -> TokenMatch {
    let (nt, nv) = (t.len(), v.len());
    let mut row_max = vec![f64::NEG_INFINITY; nt];
    let mut row_arg = vec![None; nt];
    let mut col_max = vec![f64::NEG_INFINITY; nv];
    let mut col_arg = vec![None; nv];
    for i in t.valid_indices() {
        let ti = t.row(i);
        for j in v.valid_indices() {
            let s = dot(ti, v.row(j));
            if s > row_max[i] {
                row_max[i] = s;
                row_arg[i] = Some(j);
            }
            if s > col_max[j] {
                col_max[j] = s;
                col_arg[j] = Some(i);
            }
        }
    }
    for (m, a) in row_max.iter_mut().zip(&row_arg).chain(col_max.iter_mut().zip(&col_arg)) {
        if a.is_none() {
            *m = 0.0;
        }
    }
    TokenMatch { row_max, row_arg, col_max, col_arg }
}

/// Combines token maxima with per-token weights along the chosen path(s).
pub fn aggregate(m: &TokenMatch, text_weights: &[f64], video_weights: &[f64], path: Path) -> f64 {
    let t2v = || dot(&m.row_max, text_weights);
    let v2t = || dot(&m.col_max, video_weights);
    match path {
        Path::T2v => t2v(),
        Path::V2t => v2t(),
        Path::Both => (t2v() + v2t()) / 2.0,
    }
}

/// Fixed weights for plain TI: 1 per valid token (sum) or `1/n` (mean).
pub fn form_weights(m: &TokenMatrix, form: TiForm) -> Vec<f64> {
    let w = match form {
        TiForm::Sum => 1.0,
        TiForm::Mean => 1.0 / m.valid_count() as f64,
    };
    m.mask().iter().map(|&valid| if valid { w } else { 0.0 }).collect()
}

/// Normalizes a batch and checks every item has width `dim`.
pub(crate) fn normalize_batch(items: &[TokenMatrix], dim: Option<usize>) -> Result<Vec<TokenMatrix>> {
    let dim = dim.or_else(|| items.first().map(TokenMatrix::dim));
    items
        .iter()
        .map(|m| {
            if Some(m.dim()) != dim {
                return Err(Error::ShapeMismatch(format!(
                    "item {} has width {}, batch width is {}",
                    m.id,
                    m.dim(),
                    dim.unwrap_or(0)
                )));
            }
            l2_normalize_rows(m)
        })
        .collect()
}

/// Normalizes both batches against a common width.
pub(crate) fn normalize_pair_batches(
    ts: &[TokenMatrix],
    vs: &[TokenMatrix],
) -> Result<(Vec<TokenMatrix>, Vec<TokenMatrix>)> {
    let dim = ts.first().or(vs.first()).map(TokenMatrix::dim);
    Ok((normalize_batch(ts, dim)?, normalize_batch(vs, dim)?))
}

fn score_with_weights(
    tn: &[TokenMatrix],
    vn: &[TokenMatrix],
    tw: &[Vec<f64>],
    vw: &[Vec<f64>],
    path: Path,
) -> ScoreMatrix {
    let (bt, bv) = (tn.len(), vn.len());
    let mut scores = Matrix::zeros(bt, bv);
    let mut t2v = Vec::with_capacity(bt * bv);
    let mut v2t = Vec::with_capacity(bt * bv);
    for (a, t) in tn.iter().enumerate() {
        for (b, v) in vn.iter().enumerate() {
            let m = token_match(t, v);
            scores[(a, b)] = aggregate(&m, &tw[a], &vw[b], path);
            t2v.push(m.row_arg);
            v2t.push(m.col_arg);
        }
    }
    ScoreMatrix { scores, t2v_argmax: Some(t2v), v2t_argmax: Some(v2t) }
}

/// Plain TI over every text/video pair, with the chosen aggregation form.
pub fn score_ti_batch(ts: &[TokenMatrix], vs: &[TokenMatrix], form: TiForm) -> Result<ScoreMatrix> {
    score_ti_path(ts, vs, form, Path::Both)
}

/// Plain TI restricted to one direction or both.
pub fn score_ti_path(ts: &[TokenMatrix], vs: &[TokenMatrix], form: TiForm, path: Path) -> Result<ScoreMatrix> {
    let (tn, vn) = normalize_pair_batches(ts, vs)?;
    let tw: Vec<_> = tn.iter().map(|t| form_weights(t, form)).collect();
    let vw: Vec<_> = vn.iter().map(|v| form_weights(v, form)).collect();
    Ok(score_with_weights(&tn, &vn, &tw, &vw, path))
}

/// Weighted token-wise interaction over every pair (dual path).
pub fn score_wti_batch(
    ts: &[TokenMatrix],
    vs: &[TokenMatrix],
    tw: &WeightHead,
    vw: &WeightHead,
) -> Result<ScoreMatrix> {
    score_path(ts, vs, tw, vw, Path::Both)
}

/// Weighted token-wise interaction restricted to one direction or both.
///
/// Fusion weights are computed from the unit-normalized tokens, the same
/// rows an index stores, so offline and online weights agree.
pub fn score_path(
    ts: &[TokenMatrix],
    vs: &[TokenMatrix],
    tw: &WeightHead,
    vw: &WeightHead,
    path: Path,
) -> Result<ScoreMatrix> {
    let (tn, vn) = normalize_pair_batches(ts, vs)?;
    let wt = tn.iter().map(|t| token_weights(t, tw)).collect::<Result<Vec<_>>>()?;
    let wv = vn.iter().map(|v| token_weights(v, vw)).collect::<Result<Vec<_>>>()?;
    Ok(score_with_weights(&tn, &vn, &wt, &wv, path))
}

/// WTI score of one normalized pair under explicit fusion weights.
pub fn weighted_pair_score(
    tn: &TokenMatrix,
    vn: &TokenMatrix,
    text_weights: &[f64],
    video_weights: &[f64],
    path: Path,
) -> f64 {
    aggregate(&token_match(tn, vn), text_weights, video_weights, path)
}

impl ScoreMatrix {
    /// Argmax assignments of the positive (diagonal) pairs.
    pub fn diagonal_assignments(&self) -> Result<Assignments> {
        let (bt, bv) = (self.scores.rows(), self.scores.cols());
        if bt != bv {
            return Err(Error::NonSquare { rows: bt, cols: bv });
        }
        let (Some(t2v), Some(v2t)) = (&self.t2v_argmax, &self.v2t_argmax) else {
            return Err(Error::AssignmentMismatch("score matrix carries no argmax assignments".into()));
        };
        Ok(Assignments {
            t2v: (0..bt).map(|b| t2v[b * bv + b].clone()).collect(),
            v2t: (0..bt).map(|b| v2t[b * bv + b].clone()).collect(),
        })
    }
}
