//! Analytic gradients of the total loss for the trainable parts of a WTI
//! model: the two weight heads and, optionally, a linear token adapter per
//! modality (`x ↦ A x`, applied before normalization).
//!
//! Max assignments are treated as locally constant; at ties the lowest
//! index wins, the same convention the scorer uses.

use serde::{Deserialize, Serialize};

use super::{
    gather_sequential, info_nce_with_grad, CdcrMode, LossConfig, SequentialFeatures,
};
use crate::error::{Error, Result};
use crate::interaction::dense::{self, Dense};
use crate::interaction::token::{aggregate, token_match, TokenMatch};
use crate::interaction::{score_path, token_weights, Assignments, Path, ScoreMatrix, WeightHead};
use crate::numerics::{column_moments, dot, norm, Matrix, TokenMatrix, MIN_COLUMN_STD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WtiModel {
    pub text_head: WeightHead,
    pub video_head: WeightHead,
    pub text_adapter: Option<Matrix>,
    pub video_adapter: Option<Matrix>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub info_nce: f64,
    pub cdcr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub text: Vec<Dense>,
    pub video: Vec<Dense>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub heads: HeadGrads,
    pub text_adapter: Option<Matrix>,
    pub video_adapter: Option<Matrix>,
}

impl ModelGrads {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = dense::flatten(&self.heads.text);
        out.extend(dense::flatten(&self.heads.video));
        for a in [&self.text_adapter, &self.video_adapter].into_iter().flatten() {
            out.extend_from_slice(a.as_slice());
        }
        out
    }
}

fn adapt(adapter: Option<&Matrix>, m: &TokenMatrix) -> Result<TokenMatrix> {
    let Some(a) = adapter else { return Ok(m.clone()) };
    if a.cols() != m.dim() || a.rows() != m.dim() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} adapter applied to tokens of width {}",
            a.rows(),
            a.cols(),
            m.dim()
        )));
    }
    let mut out = Matrix::zeros(m.len(), m.dim());
    for i in m.valid_indices() {
        out.row_mut(i).copy_from_slice(&a.matvec(m.row(i)));
    }
    TokenMatrix::new(m.id, out, m.mask().to_vec(), m.modality)
}

impl WtiModel {
    pub fn new(text_head: WeightHead, video_head: WeightHead) -> Self {
        Self { text_head, video_head, text_adapter: None, video_adapter: None }
    }

    /// Adds identity-initialized adapters on both sides.
    pub fn with_identity_adapters(mut self) -> Self {
        let d = self.text_head.input_dim();
        self.text_adapter = Some(Matrix::identity(d));
        self.video_adapter = Some(Matrix::identity(d));
        self
    }

    pub fn has_adapters(&self) -> bool {
        self.text_adapter.is_some() || self.video_adapter.is_some()
    }

    pub fn adapt_text(&self, t: &TokenMatrix) -> Result<TokenMatrix> {
        adapt(self.text_adapter.as_ref(), t)
    }

    pub fn adapt_video(&self, v: &TokenMatrix) -> Result<TokenMatrix> {
        adapt(self.video_adapter.as_ref(), v)
    }

    /// Dual-path WTI scores of the adapted tokens.
    pub fn scores(&self, ts: &[TokenMatrix], vs: &[TokenMatrix]) -> Result<ScoreMatrix> {
        let at = ts.iter().map(|t| self.adapt_text(t)).collect::<Result<Vec<_>>>()?;
        let av = vs.iter().map(|v| self.adapt_video(v)).collect::<Result<Vec<_>>>()?;
        score_path(&at, &av, &self.text_head, &self.video_head, Path::Both)
    }

    /// Loss components on a batch whose diagonal holds the positive pairs.
    pub fn loss(&self, ts: &[TokenMatrix], vs: &[TokenMatrix], cfg: &LossConfig) -> Result<LossBreakdown> {
        let at = ts.iter().map(|t| self.adapt_text(t)).collect::<Result<Vec<_>>>()?;
        let av = vs.iter().map(|v| self.adapt_video(v)).collect::<Result<Vec<_>>>()?;
        let s = score_path(&at, &av, &self.text_head, &self.video_head, Path::Both)?;
        let info_nce = super::info_nce(&s, cfg)?;
        let cdcr = match cfg.cdcr_mode {
            CdcrMode::None => 0.0,
            _ => super::cdcr(&at, &av, &s.diagonal_assignments()?, cfg)?,
        };
        let total = if cfg.cdcr_mode == CdcrMode::None { info_nce } else { info_nce + cfg.lambda * cdcr };
        Ok(LossBreakdown { total, info_nce, cdcr })
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.text_head.flatten();
        out.extend(self.video_head.flatten());
        for a in [&self.text_adapter, &self.video_adapter].into_iter().flatten() {
            out.extend_from_slice(a.as_slice());
        }
        out
    }

    pub fn assign_flat(&mut self, values: &[f64]) {
        let mut at = self.text_head.assign_flat(values);
        at += self.video_head.assign_flat(&values[at..]);
        for a in [&mut self.text_adapter, &mut self.video_adapter].into_iter().flatten() {
            let n = a.as_slice().len();
            a.as_mut_slice().copy_from_slice(&values[at..at + n]);
            at += n;
        }
        debug_assert_eq!(at, values.len());
    }

    /// Plain gradient-descent update.
    pub fn descend(&mut self, grads: &ModelGrads, step_size: f64) {
        let mut p = self.flatten();
        for (x, g) in p.iter_mut().zip(grads.flatten()) {
            *x -= step_size * g;
        }
        self.assign_flat(&p);
    }

    /// Loss components and the gradient of the total loss.
    pub fn loss_and_grad(
        &self,
        ts: &[TokenMatrix],
        vs: &[TokenMatrix],
        cfg: &LossConfig,
    ) -> Result<(LossBreakdown, ModelGrads)> {
        cfg.validate()?;
        let b = ts.len();
        if vs.len() != b || b < 2 {
            return Err(Error::NonSquare { rows: ts.len(), cols: vs.len() });
        }
        let at = ts.iter().map(|t| self.adapt_text(t)).collect::<Result<Vec<_>>>()?;
        let av = vs.iter().map(|v| self.adapt_video(v)).collect::<Result<Vec<_>>>()?;
        let (ut, uv) = crate::interaction::token::normalize_pair_batches(&at, &av)?;
        let wt = ut.iter().map(|t| token_weights(t, &self.text_head)).collect::<Result<Vec<_>>>()?;
        let wv = uv.iter().map(|v| token_weights(v, &self.video_head)).collect::<Result<Vec<_>>>()?;

        let mut matches: Vec<TokenMatch> = Vec::with_capacity(b * b);
        let mut scores = Matrix::zeros(b, b);
        for (x, t) in ut.iter().enumerate() {
            for (y, v) in uv.iter().enumerate() {
                let m = token_match(t, v);
                scores[(x, y)] = aggregate(&m, &wt[x], &wv[y], Path::Both);
                matches.push(m);
            }
        }
        let (info_nce, g) = info_nce_with_grad(&scores, cfg.logit_scale)?;

        let need_tokens = self.has_adapters();
        let mut dwt: Vec<Vec<f64>> = ut.iter().map(|t| vec![0.0; t.len()]).collect();
        let mut dwv: Vec<Vec<f64>> = uv.iter().map(|v| vec![0.0; v.len()]).collect();
        let mut dut: Vec<Matrix> = ut.iter().map(|t| Matrix::zeros(t.len(), t.dim())).collect();
        let mut duv: Vec<Matrix> = uv.iter().map(|v| Matrix::zeros(v.len(), v.dim())).collect();

        for x in 0..b {
            for y in 0..b {
                let gs = 0.5 * g[(x, y)];
                if gs == 0.0 {
                    continue;
                }
                let m = &matches[x * b + y];
                for i in ut[x].valid_indices() {
                    dwt[x][i] += gs * m.row_max[i];
                    if need_tokens {
                        let j = m.row_arg[i].expect("valid token has a match");
                        let c = gs * wt[x][i];
                        axpy(dut[x].row_mut(i), c, uv[y].row(j));
                        axpy(duv[y].row_mut(j), c, ut[x].row(i));
                    }
                }
                for j in uv[y].valid_indices() {
                    dwv[y][j] += gs * m.col_max[j];
                    if need_tokens {
                        let i = m.col_arg[j].expect("valid token has a match");
                        let c = gs * wv[y][j];
                        axpy(dut[x].row_mut(i), c, uv[y].row(j));
                        axpy(duv[y].row_mut(j), c, ut[x].row(i));
                    }
                }
            }
        }

        let mut heads = HeadGrads { text: self.text_head.zero_grad(), video: self.video_head.zero_grad() };
        for (x, t) in ut.iter().enumerate() {
            head_backward(&self.text_head, t, &wt[x], &dwt[x], &mut heads.text, need_tokens.then_some(&mut dut[x]));
        }
        for (y, v) in uv.iter().enumerate() {
            head_backward(&self.video_head, v, &wv[y], &dwv[y], &mut heads.video, need_tokens.then_some(&mut duv[y]));
        }

        let cdcr = match cfg.cdcr_mode {
            CdcrMode::None => 0.0,
            CdcrMode::Single => {
                let (value, grads) = single_cdcr_with_grad(&ut, &uv, cfg.alpha)?;
                if need_tokens && cfg.lambda > 0.0 {
                    let (det, dev) = grads;
                    for (k, t) in ut.iter().enumerate() {
                        axpy(dut[k].row_mut(t.first_valid()), cfg.lambda, det.row(k));
                    }
                    for (k, v) in uv.iter().enumerate() {
                        mean_normalize_backward(v, dev.row(k), cfg.lambda, &mut duv[k]);
                    }
                }
                value
            }
            CdcrMode::Sequential => {
                let assign = Assignments {
                    t2v: (0..b).map(|k| matches[k * b + k].row_arg.clone()).collect(),
                    v2t: (0..b).map(|k| matches[k * b + k].col_arg.clone()).collect(),
                };
                let f = gather_sequential(&ut, &uv, &assign)?;
                let (value, grads) =
                    averaged_penalty_with_grad(&[(&f.text, &f.text_matches), (&f.video_matches, &f.video)], cfg.alpha)?;
                if need_tokens && cfg.lambda > 0.0 {
                    scatter_sequential(&f, &grads, cfg.lambda, &mut dut, &mut duv);
                }
                value
            }
        };

        let mut grads = ModelGrads { heads, text_adapter: None, video_adapter: None };
        if let Some(a) = &self.text_adapter {
            grads.text_adapter = Some(adapter_backward(a, ts, &at, &ut, &dut));
        }
        if let Some(a) = &self.video_adapter {
            grads.video_adapter = Some(adapter_backward(a, vs, &av, &uv, &duv));
        }

        let total = if cfg.cdcr_mode == CdcrMode::None { info_nce } else { info_nce + cfg.lambda * cdcr };
        Ok((LossBreakdown { total, info_nce, cdcr }, grads))
    }
}

/// Gradient of the total loss with respect to both weight heads, with the
/// token features held fixed.
pub fn grad_wti_heads(
    ts: &[TokenMatrix],
    vs: &[TokenMatrix],
    tw: &WeightHead,
    vw: &WeightHead,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, HeadGrads)> {
    let model = WtiModel::new(tw.clone(), vw.clone());
    let (loss, grads) = model.loss_and_grad(ts, vs, cfg)?;
    Ok((loss, grads.heads))
}

fn axpy(dst: &mut [f64], a: f64, x: &[f64]) {
    for (d, v) in dst.iter_mut().zip(x) {
        *d += a * v;
    }
}

/// Softmax then MLP backward for one sequence's fusion weights.
fn head_backward(
    head: &WeightHead,
    u: &TokenMatrix,
    w: &[f64],
    dw: &[f64],
    grads: &mut [Dense],
    mut du: Option<&mut Matrix>,
) {
    let inner = dot(w, dw);
    for i in u.valid_indices() {
        let dz = w[i] * (dw[i] - inner);
        let dx = dense::stack_backward(&head.layers, u.row(i), &[dz], grads);
        if let Some(du) = du.as_deref_mut() {
            axpy(du.row_mut(i), 1.0, &dx);
        }
    }
}

/// Chains token gradients through row normalization and the adapter.
fn adapter_backward(
    adapter: &Matrix,
    raw: &[TokenMatrix],
    adapted: &[TokenMatrix],
    unit: &[TokenMatrix],
    du: &[Matrix],
) -> Matrix {
    let d = adapter.rows();
    let mut g = Matrix::zeros(d, adapter.cols());
    for k in 0..raw.len() {
        for i in raw[k].valid_indices() {
            let u = unit[k].row(i);
            let n = norm(adapted[k].row(i));
            let d_u = du[k].row(i);
            let proj = dot(u, d_u);
            let x = raw[k].row(i);
            for r in 0..d {
                let dy = (d_u[r] - u[r] * proj) / n;
                if dy != 0.0 {
                    axpy(g.row_mut(r), dy, x);
                }
            }
        }
    }
    g
}

struct Standardized {
    z: Matrix,
    std: Vec<f64>,
}

fn standardize(a: &Matrix) -> Result<Standardized> {
    if a.rows() < 2 {
        return Err(Error::DegenerateColumn { column: 0 });
    }
    let (mean, std) = column_moments(a);
    if let Some(column) = std.iter().position(|&s| s <= MIN_COLUMN_STD) {
        return Err(Error::DegenerateColumn { column });
    }
    let z = Matrix::from_fn(a.rows(), a.cols(), |r, c| (a[(r, c)] - mean[c]) / std[c]);
    Ok(Standardized { z, std })
}

fn standardize_backward(s: &Standardized, dz: &Matrix) -> Matrix {
    let (rows, cols) = (dz.rows(), dz.cols());
    let x = rows as f64;
    let mut out = Matrix::zeros(rows, cols);
    for c in 0..cols {
        let mut mean_dz = 0.0;
        let mut mean_dzz = 0.0;
        for r in 0..rows {
            mean_dz += dz[(r, c)];
            mean_dzz += dz[(r, c)] * s.z[(r, c)];
        }
        mean_dz /= x;
        mean_dzz /= x;
        for r in 0..rows {
            out[(r, c)] = (dz[(r, c)] - mean_dz - s.z[(r, c)] * mean_dzz) / s.std[c];
        }
    }
    out
}

/// Penalty of the mean of several cross-correlations and its gradient
/// with respect to each input batch.
fn averaged_penalty_with_grad(pairs: &[(&Matrix, &Matrix)], alpha: f64) -> Result<(f64, Vec<(Matrix, Matrix)>)> {
    let k = pairs.len() as f64;
    let mut parts = Vec::with_capacity(pairs.len());
    let mut c: Option<Matrix> = None;
    for (a, b) in pairs {
        let sa = standardize(a)?;
        let sb = standardize(b)?;
        let mut ck = sa.z.t_matmul(&sb.z)?;
        let x = a.rows() as f64;
        ck.as_mut_slice().iter_mut().for_each(|v| *v /= x * k);
        match &mut c {
            Some(c) => c.as_mut_slice().iter_mut().zip(ck.as_slice()).for_each(|(p, q)| *p += q),
            None => c = Some(ck),
        }
        parts.push((sa, sb));
    }
    let c = c.ok_or_else(|| Error::ShapeMismatch("no feature pairs".into()))?;
    let d = c.rows();
    let mut value = 0.0;
    let mut dc = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let v = c[(i, j)];
            if i == j {
                value += (1.0 - v) * (1.0 - v);
                dc[(i, j)] = -2.0 * (1.0 - v);
            } else {
                value += alpha * v * v;
                dc[(i, j)] = 2.0 * alpha * v;
            }
        }
    }

    let mut grads = Vec::with_capacity(parts.len());
    for (sa, sb) in &parts {
        let x = sa.z.rows() as f64;
        let scale = 1.0 / (x * k);
        // C_k = Zaᵀ Zb · scale
        let dza = Matrix::from_fn(sa.z.rows(), d, |r, i| scale * dot(dc.row(i), sb.z.row(r)));
        let mut dzb = Matrix::zeros(sb.z.rows(), d);
        for r in 0..sb.z.rows() {
            let za = sa.z.row(r);
            for (i, &zai) in za.iter().enumerate() {
                axpy(dzb.row_mut(r), scale * zai, dc.row(i));
            }
        }
        grads.push((standardize_backward(sa, &dza), standardize_backward(sb, &dzb)));
    }
    Ok((value, grads))
}

fn scatter_sequential(
    f: &SequentialFeatures,
    grads: &[(Matrix, Matrix)],
    lambda: f64,
    dut: &mut [Matrix],
    duv: &mut [Matrix],
) {
    let (d_text, d_text_matches) = &grads[0];
    let (d_video_matches, d_video) = &grads[1];
    for (r, &(k, i)) in f.text_rows.iter().enumerate() {
        axpy(dut[k].row_mut(i), lambda, d_text.row(r));
    }
    for (r, &(k, j)) in f.text_match_rows.iter().enumerate() {
        axpy(duv[k].row_mut(j), lambda, d_text_matches.row(r));
    }
    for (r, &(k, j)) in f.video_rows.iter().enumerate() {
        axpy(duv[k].row_mut(j), lambda, d_video.row(r));
    }
    for (r, &(k, i)) in f.video_match_rows.iter().enumerate() {
        axpy(dut[k].row_mut(i), lambda, d_video_matches.row(r));
    }
}

type SingleGrads = (Matrix, Matrix);

fn single_cdcr_with_grad(ut: &[TokenMatrix], uv: &[TokenMatrix], alpha: f64) -> Result<(f64, SingleGrads)> {
    let d = ut[0].dim();
    let mut et = Matrix::zeros(ut.len(), d);
    for (k, t) in ut.iter().enumerate() {
        et.row_mut(k).copy_from_slice(t.row(t.first_valid()));
    }
    let mut ev = Matrix::zeros(uv.len(), d);
    for (k, v) in uv.iter().enumerate() {
        let m = v.valid_mean();
        let n = norm(&m);
        if n <= crate::numerics::MIN_ROW_NORM {
            return Err(Error::ZeroNormRow { row: 0, norm: n });
        }
        ev.row_mut(k).iter_mut().zip(&m).for_each(|(e, x)| *e = x / n);
    }
    let (value, mut grads) = averaged_penalty_with_grad(&[(&et, &ev)], alpha)?;
    Ok((value, grads.remove(0)))
}

/// Backward of `e = mean/|mean|` over the valid rows of `v`, scaled by `lambda`.
fn mean_normalize_backward(v: &TokenMatrix, de: &[f64], lambda: f64, dv: &mut Matrix) {
    let m = v.valid_mean();
    let n = norm(&m);
    let e: Vec<f64> = m.iter().map(|x| x / n).collect();
    let proj = dot(&e, de);
    let count = v.valid_count() as f64;
    let dm: Vec<f64> = de.iter().zip(&e).map(|(g, ei)| (g - ei * proj) / n / count).collect();
    for j in v.valid_indices() {
        axpy(dv.row_mut(j), lambda, &dm);
    }
}
