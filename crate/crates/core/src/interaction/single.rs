//! Single-vector mechanisms: dot product, hierarchical fusion and the
//! MLP similarity head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dense::{self, Dense};
use crate::error::{Error, Result};
use crate::numerics::{cosine, l2_normalize_rows, norm, TokenMatrix, MIN_ROW_NORM};

/// Unit-normalized first valid text row. Stands in for the `[CLS]` vector.
pub fn text_global(t: &TokenMatrix) -> Result<Vec<f64>> {
    let row = t.row(t.first_valid());
    let n = norm(row);
    if n <= MIN_ROW_NORM {
        return Err(Error::ZeroNormRow { row: t.first_valid(), norm: n });
    }
    Ok(row.iter().map(|x| x / n).collect())
}

/// Mean of the unit-normalized valid video rows (not renormalized).
pub fn video_mean(v: &TokenMatrix) -> Result<Vec<f64>> {
    Ok(l2_normalize_rows(v)?.valid_mean())
}

/// Cosine between the text global vector and the mean video token.
pub fn score_dp(t: &TokenMatrix, v: &TokenMatrix) -> Result<f64> {
    check_dims(t, v)?;
    let g = text_global(t)?;
    let m = video_mean(v)?;
    cosine(&g, &m).ok_or(Error::ZeroNormRow { row: 0, norm: norm(&m) })
}

pub(crate) fn check_dims(t: &TokenMatrix, v: &TokenMatrix) -> Result<()> {
    if t.dim() != v.dim() {
        return Err(Error::ShapeMismatch(format!(
            "text width {} differs from video width {}",
            t.dim(),
            v.dim()
        )));
    }
    Ok(())
}

/// Per-level text/video vector pairs and their fusion weights.
#[derive(Debug, Clone, PartialEq)]
pub struct HiLevels {
    levels: Vec<(Vec<f64>, Vec<f64>)>,
    level_weights: Vec<f64>,
}

impl HiLevels {
    pub fn new(levels: Vec<(Vec<f64>, Vec<f64>)>, level_weights: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Config("hierarchical interaction needs at least one level".into()));
        }
        if levels.len() != level_weights.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} levels but {} level weights",
                levels.len(),
                level_weights.len()
            )));
        }
        validate_level_weights(&level_weights)?;
        for (s, (t, v)) in levels.iter().enumerate() {
            if t.len() != v.len() {
                return Err(Error::ShapeMismatch(format!("level {s}: widths {} and {}", t.len(), v.len())));
            }
        }
        Ok(Self { levels, level_weights })
    }

    /// Builds `S` levels by splitting each sequence's valid tokens into `S`
    /// contiguous segments and mean-pooling each segment. When a sequence
    /// has fewer valid tokens than levels, segments reuse the nearest token.
    pub fn from_tokens(t: &TokenMatrix, v: &TokenMatrix, level_weights: &[f64]) -> Result<Self> {
        check_dims(t, v)?;
        let s = level_weights.len();
        let tl = segment_means(&l2_normalize_rows(t)?, s);
        let vl = segment_means(&l2_normalize_rows(v)?, s);
        Self::new(tl.into_iter().zip(vl).collect(), level_weights.to_vec())
    }

    pub fn levels(&self) -> &[(Vec<f64>, Vec<f64>)] {
        &self.levels
    }

    pub fn level_weights(&self) -> &[f64] {
        &self.level_weights
    }
}

pub(crate) fn validate_level_weights(w: &[f64]) -> Result<()> {
    if w.is_empty() || w.iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::Config("level weights must be nonnegative and nonempty".into()));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("level weights sum to {total}, expected 1")));
    }
    Ok(())
}

/// Half-open token range of segment `s` out of `levels` over `n` tokens.
pub fn segment_bounds(n: usize, levels: usize, s: usize) -> (usize, usize) {
    let start = (s * n / levels).min(n - 1);
    let end = ((s + 1) * n / levels).max(start + 1);
    (start, end)
}

/// Segment means over the valid rows of an already normalized sequence.
pub fn segment_means(m: &TokenMatrix, levels: usize) -> Vec<Vec<f64>> {
    let valid: Vec<usize> = m.valid_indices().collect();
    (0..levels)
        .map(|s| {
            let (a, b) = segment_bounds(valid.len(), levels, s);
            let mut acc = vec![0.0; m.dim()];
            for &i in &valid[a..b] {
                for (x, y) in acc.iter_mut().zip(m.row(i)) {
                    *x += y;
                }
            }
            let k = (b - a) as f64;
            acc.iter_mut().for_each(|x| *x /= k);
            acc
        })
        .collect()
}

/// Weighted sum of per-level cosine similarities.
pub fn score_hi(levels: &HiLevels) -> Result<f64> {
    let mut total = 0.0;
    for (s, ((t, v), w)) in levels.levels.iter().zip(&levels.level_weights).enumerate() {
        total += w * cosine(t, v).ok_or(Error::DegenerateLevel { level: s })?;
    }
    Ok(total)
}

/// Uniform level weights `1/S`.
pub fn uniform_level_weights(levels: usize) -> Vec<f64> {
    vec![1.0 / levels as f64; levels]
}

/// `L` affine layers `2D → D → … → D → 1` with rectifiers in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpScorerParams {
    layers: Vec<Dense>,
}

impl MlpScorerParams {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::Config(format!("MLP scorer needs at least 2 layers, got {}", layers.len())));
        }
        let (input, out) = dense::check_chain(&layers)?;
        if input % 2 != 0 || out != 1 {
            return Err(Error::ShapeMismatch(format!(
                "MLP scorer maps {input} → {out}, expected 2D → 1"
            )));
        }
        let d = input / 2;
        if layers[..layers.len() - 1].iter().any(|l| l.outputs() != d) {
            return Err(Error::ShapeMismatch(format!("hidden width must equal D = {d}")));
        }
        Ok(Self { layers })
    }

    pub fn random<R: Rng + ?Sized>(dim: usize, depth: usize, rng: &mut R) -> Result<Self> {
        if depth < 2 {
            return Err(Error::Config(format!("MLP scorer needs at least 2 layers, got {depth}")));
        }
        let mut layers = vec![Dense::uniform(2 * dim, dim, rng)];
        for _ in 0..depth - 2 {
            layers.push(Dense::uniform(dim, dim, rng));
        }
        layers.push(Dense::uniform(dim, 1, rng));
        Self::new(layers)
    }

    pub fn dim(&self) -> usize {
        self.layers[0].inputs() / 2
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }
}

/// `f([t_global, v_mean])` for the MLP similarity head.
pub fn score_mlp(t_global: &[f64], v_mean: &[f64], p: &MlpScorerParams) -> Result<f64> {
    let d = p.dim();
    if t_global.len() != d || v_mean.len() != d {
        return Err(Error::ShapeMismatch(format!(
            "MLP scorer of width {d} got vectors of width {} and {}",
            t_global.len(),
            v_mean.len()
        )));
    }
    let mut x = Vec::with_capacity(2 * d);
    x.extend_from_slice(t_global);
    x.extend_from_slice(v_mean);
    Ok(dense::stack_forward(&p.layers, &x)[0])
}

/// MLP score of a token pair, using the same global vectors as [`score_dp`].
pub fn score_mlp_pair(t: &TokenMatrix, v: &TokenMatrix, p: &MlpScorerParams) -> Result<f64> {
    check_dims(t, v)?;
    score_mlp(&text_global(t)?, &video_mean(v)?, p)
}
