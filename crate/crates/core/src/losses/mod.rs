//! Training objectives: symmetric InfoNCE over a score matrix and the
//! channel decorrelation regularizer (CDCR) over paired features.

mod fdcheck;
mod grad;

pub use fdcheck::{fd_check, relative_error, GradReport, REL_ERROR_FLOOR};
pub use grad::{grad_wti_heads, HeadGrads, LossBreakdown, ModelGrads, WtiModel};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interaction::{text_global, Assignments, ScoreMatrix};
use crate::numerics::{batch_standardize_columns, norm, Matrix, TokenMatrix, MIN_ROW_NORM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CdcrMode {
    None,
    /// On the single global vectors the dot-product scorer uses.
    Single,
    /// On token features paired through the positive pairs' argmax matches.
    #[default]
    Sequential,
}

impl std::str::FromStr for CdcrMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(CdcrMode::None),
            "single" => Ok(CdcrMode::Single),
            "sequential" => Ok(CdcrMode::Sequential),
            other => Err(Error::Config(format!("unknown CDCR mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Multiplies scores before the softmax.
    pub logit_scale: f64,
    /// Weight of the off-diagonal redundancy term.
    pub alpha: f64,
    /// Weight of the regularizer in the total loss.
    pub lambda: f64,
    pub cdcr_mode: CdcrMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { logit_scale: 100.0, alpha: 0.06, lambda: 0.001, cdcr_mode: CdcrMode::Sequential }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.logit_scale > 0.0) {
            return Err(Error::Config(format!("logit scale must be positive, got {}", self.logit_scale)));
        }
        if !(self.alpha >= 0.0) || !(self.lambda >= 0.0) {
            return Err(Error::Config("alpha and lambda must be nonnegative".into()));
        }
        Ok(())
    }
}

fn check_square(s: &Matrix) -> Result<usize> {
    if s.rows() != s.cols() || s.rows() < 2 {
        return Err(Error::NonSquare { rows: s.rows(), cols: s.cols() });
    }
    Ok(s.rows())
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Symmetric InfoNCE with the diagonal as positives: the mean negative
/// log-softmax of each row's diagonal entry plus the same over columns.
pub fn info_nce(s: &ScoreMatrix, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    info_nce_scores(&s.scores, cfg.logit_scale)
}

pub(crate) fn info_nce_scores(s: &Matrix, scale: f64) -> Result<f64> {
    let b = check_square(s)?;
    let mut rows = 0.0;
    let mut cols = 0.0;
    for i in 0..b {
        let diag = scale * s[(i, i)];
        rows += log_sum_exp((0..b).map(|j| scale * s[(i, j)])) - diag;
        cols += log_sum_exp((0..b).map(|j| scale * s[(j, i)])) - diag;
    }
    Ok((rows + cols) / b as f64)
}

/// InfoNCE and its gradient with respect to the raw scores.
pub(crate) fn info_nce_with_grad(s: &Matrix, scale: f64) -> Result<(f64, Matrix)> {
    let b = check_square(s)?;
    let loss = info_nce_scores(s, scale)?;
    let mut g = Matrix::zeros(b, b);
    let inv_b = 1.0 / b as f64;
    for i in 0..b {
        let lse = log_sum_exp((0..b).map(|j| scale * s[(i, j)]));
        for j in 0..b {
            g[(i, j)] += ((scale * s[(i, j)] - lse).exp() - f64::from(u8::from(i == j))) * inv_b;
        }
        let lse = log_sum_exp((0..b).map(|j| scale * s[(j, i)]));
        for j in 0..b {
            g[(j, i)] += ((scale * s[(j, i)] - lse).exp() - f64::from(u8::from(i == j))) * inv_b;
        }
    }
    g.as_mut_slice().iter_mut().for_each(|x| *x *= scale);
    Ok((loss, g))
}

/// `D × D` cross-correlation of two standardized feature batches.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub c: Matrix,
}

impl CorrelationMatrix {
    /// Standardizes each batch column-wise and forms `etᵀ·ev / B`.
    pub fn from_features(et: &Matrix, ev: &Matrix) -> Result<Self> {
        if et.rows() != ev.rows() || et.cols() != ev.cols() {
            return Err(Error::ShapeMismatch(format!(
                "feature batches are {}x{} and {}x{}",
                et.rows(),
                et.cols(),
                ev.rows(),
                ev.cols()
            )));
        }
        let zt = batch_standardize_columns(et)?;
        let zv = batch_standardize_columns(ev)?;
        let mut c = zt.t_matmul(&zv)?;
        let b = et.rows() as f64;
        c.as_mut_slice().iter_mut().for_each(|x| *x /= b);
        Ok(Self { c })
    }

    /// `Σ (1 − Cᵢᵢ)² + α Σ_{i≠j} Cᵢⱼ²`.
    pub fn penalty(&self, alpha: f64) -> f64 {
        let d = self.c.rows();
        let mut on = 0.0;
        let mut off = 0.0;
        for i in 0..d {
            for j in 0..d {
                let x = self.c[(i, j)];
                if i == j {
                    on += (1.0 - x) * (1.0 - x);
                } else {
                    off += x * x;
                }
            }
        }
        on + alpha * off
    }

    fn average(a: CorrelationMatrix, b: CorrelationMatrix) -> Self {
        let mut c = a.c;
        for (x, y) in c.as_mut_slice().iter_mut().zip(b.c.as_slice()) {
            *x = (*x + y) / 2.0;
        }
        Self { c }
    }
}

/// Decorrelation regularizer on single-vector features of paired items.
pub fn cdcr_single(et: &Matrix, ev: &Matrix, cfg: &LossConfig) -> Result<f64> {
    Ok(CorrelationMatrix::from_features(et, ev)?.penalty(cfg.alpha))
}

/// Gathered feature matrices for the sequential regularizer.
#[derive(Debug, Clone)]
pub(crate) struct SequentialFeatures {
    /// Valid text tokens of every positive pair, stacked.
    pub text: Matrix,
    /// For each row of `text`, its matched video token.
    pub text_matches: Matrix,
    /// Valid video tokens, stacked.
    pub video: Matrix,
    /// For each row of `video`, its matched text token.
    pub video_matches: Matrix,
    // (item, token) origin of each row in the matrix of the same name
    pub text_rows: Vec<(usize, usize)>,
    pub text_match_rows: Vec<(usize, usize)>,
    pub video_rows: Vec<(usize, usize)>,
    pub video_match_rows: Vec<(usize, usize)>,
}

pub(crate) fn gather_sequential(
    tn: &[TokenMatrix],
    vn: &[TokenMatrix],
    assign: &Assignments,
) -> Result<SequentialFeatures> {
    let b = tn.len();
    if vn.len() != b || assign.t2v.len() != b || assign.v2t.len() != b {
        return Err(Error::AssignmentMismatch(format!(
            "{} texts, {} videos, {}/{} assignment lists",
            tn.len(),
            vn.len(),
            assign.t2v.len(),
            assign.v2t.len()
        )));
    }
    let d = tn.first().map_or(0, TokenMatrix::dim);
    let mut text_rows = Vec::new();
    let mut text_match_rows = Vec::new();
    let mut video_rows = Vec::new();
    let mut video_match_rows = Vec::new();
    for k in 0..b {
        let (t, v) = (&tn[k], &vn[k]);
        if assign.t2v[k].len() != t.len() || assign.v2t[k].len() != v.len() {
            return Err(Error::AssignmentMismatch(format!("pair {k}: assignment lengths do not match tokens")));
        }
        for i in t.valid_indices() {
            match assign.t2v[k][i] {
                Some(j) if j < v.len() && v.mask()[j] => {
                    text_rows.push((k, i));
                    text_match_rows.push((k, j));
                }
                other => {
                    return Err(Error::AssignmentMismatch(format!(
                        "pair {k}: text token {i} assigned to {other:?}, not a valid video token"
                    )))
                }
            }
        }
        for j in v.valid_indices() {
            match assign.v2t[k][j] {
                Some(i) if i < t.len() && t.mask()[i] => {
                    video_rows.push((k, j));
                    video_match_rows.push((k, i));
                }
                other => {
                    return Err(Error::AssignmentMismatch(format!(
                        "pair {k}: video token {j} assigned to {other:?}, not a valid text token"
                    )))
                }
            }
        }
    }
    let stack = |rows: &[(usize, usize)], src: &[TokenMatrix]| {
        let mut m = Matrix::zeros(rows.len(), d);
        for (r, &(k, i)) in rows.iter().enumerate() {
            m.row_mut(r).copy_from_slice(src[k].row(i));
        }
        m
    };
    Ok(SequentialFeatures {
        text: stack(&text_rows, tn),
        text_matches: stack(&text_match_rows, vn),
        video: stack(&video_rows, vn),
        video_matches: stack(&video_match_rows, tn),
        text_rows,
        text_match_rows,
        video_rows,
        video_match_rows,
    })
}

/// Decorrelation regularizer on token features of the positive pairs.
///
/// Every valid text token is paired with the video token it matched, and
/// every valid video token with the text token it matched. The two
/// cross-correlations (text channels × video channels, each normalized by
/// its own row count) are averaged before the penalty. Features are the
/// unit-normalized tokens the scorer compared.
pub fn cdcr_sequential(
    ts: &[TokenMatrix],
    vs: &[TokenMatrix],
    assign: &Assignments,
    cfg: &LossConfig,
) -> Result<f64> {
    let (tn, vn) = crate::interaction::token::normalize_pair_batches(ts, vs)?;
    let f = gather_sequential(&tn, &vn, assign)?;
    let c1 = CorrelationMatrix::from_features(&f.text, &f.text_matches)?;
    let c2 = CorrelationMatrix::from_features(&f.video_matches, &f.video)?;
    Ok(CorrelationMatrix::average(c1, c2).penalty(cfg.alpha))
}

/// Single-vector features: text global rows and normalized mean video rows.
pub fn global_features(ts: &[TokenMatrix], vs: &[TokenMatrix]) -> Result<(Matrix, Matrix)> {
    let (tn, vn) = crate::interaction::token::normalize_pair_batches(ts, vs)?;
    let et = tn.iter().map(text_global).collect::<Result<Vec<_>>>()?;
    let ev = vn
        .iter()
        .map(|v| {
            let m = v.valid_mean();
            let n = norm(&m);
            if n <= MIN_ROW_NORM {
                return Err(Error::ZeroNormRow { row: 0, norm: n });
            }
            Ok(m.into_iter().map(|x| x / n).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((Matrix::from_rows(&et)?, Matrix::from_rows(&ev)?))
}

/// Regularizer value under the configured mode (0 for [`CdcrMode::None`]).
pub fn cdcr(ts: &[TokenMatrix], vs: &[TokenMatrix], assign: &Assignments, cfg: &LossConfig) -> Result<f64> {
    match cfg.cdcr_mode {
        CdcrMode::None => Ok(0.0),
        CdcrMode::Single => {
            let (et, ev) = global_features(ts, vs)?;
            cdcr_single(&et, &ev, cfg)
        }
        CdcrMode::Sequential => cdcr_sequential(ts, vs, assign, cfg),
    }
}

/// `info_nce + λ·cdcr`; exactly `info_nce` when the mode is `None`.
pub fn total_loss(
    s: &ScoreMatrix,
    ts: &[TokenMatrix],
    vs: &[TokenMatrix],
    assign: &Assignments,
    cfg: &LossConfig,
) -> Result<f64> {
    let nce = info_nce(s, cfg)?;
    if cfg.cdcr_mode == CdcrMode::None {
        return Ok(nce);
    }
    Ok(nce + cfg.lambda * cdcr(ts, vs, assign, cfg)?)
}
