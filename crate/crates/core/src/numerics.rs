//! Dense matrices, token sequences and the small numeric kernels every
//! scorer and loss builds on.
//!
//! Everything here is a pure function of its inputs. Loss-side arithmetic is
//! done in `f64`; the index stores `f32` rows but accumulates in `f64`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows with a norm at or below this are rejected by [`l2_normalize_rows`].
pub const MIN_ROW_NORM: f64 = 1e-12;

/// Columns with a population std at or below this are rejected by
/// [`batch_standardize_columns`].
pub const MIN_COLUMN_STD: f64 = 1e-12;

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::ShapeMismatch(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.data[r * self.cols + c]).collect()
    }

    /// `self · v` for a matrix of shape `rows × cols` and a `cols`-vector.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), v)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    /// `selfᵀ · other`, contracting over rows.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::ShapeMismatch(format!(
                "cannot contract {}x{} with {}x{} over rows",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let a = self.row(r);
            let b = other.row(r);
            for (i, &ai) in a.iter().enumerate() {
                if ai == 0.0 {
                    continue;
                }
                let dst = out.row_mut(i);
                for (d, &bj) in dst.iter_mut().zip(b) {
                    *d += ai * bj;
                }
            }
        }
        Ok(out)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; `None` when either side is (numerically) zero.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = norm(a);
    let nb = norm(b);
    if na <= MIN_ROW_NORM || nb <= MIN_ROW_NORM {
        return None;
    }
    Some(dot(a, b) / (na * nb))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    Text,
    Video,
}

/// One item's token sequence: `N × D` feature rows plus a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    pub id: u32,
    tokens: Matrix,
    mask: Vec<bool>,
    pub modality: Modality,
}

impl TokenMatrix {
    pub fn new(id: u32, tokens: Matrix, mask: Vec<bool>, modality: Modality) -> Result<Self> {
        if tokens.rows() == 0 || tokens.cols() == 0 {
            return Err(Error::InvalidTokens(format!(
                "token matrix must be at least 1x1, got {}x{}",
                tokens.rows(),
                tokens.cols()
            )));
        }
        if mask.len() != tokens.rows() {
            return Err(Error::InvalidTokens(format!(
                "mask has {} entries for {} rows",
                mask.len(),
                tokens.rows()
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::AllMasked);
        }
        Ok(Self { id, tokens, mask, modality })
    }

    /// All rows valid.
    pub fn dense(id: u32, tokens: Matrix, modality: Modality) -> Result<Self> {
        let mask = vec![true; tokens.rows()];
        Self::new(id, tokens, mask, modality)
    }

    pub fn len(&self) -> usize {
        self.tokens.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.tokens.cols()
    }

    pub fn tokens(&self) -> &Matrix {
        &self.tokens
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.tokens.row(i)
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn valid_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i)
    }

    /// First valid row; stands in for the `[CLS]` vector on the text side.
    pub fn first_valid(&self) -> usize {
        self.valid_indices().next().expect("constructor guarantees a valid row")
    }

    /// Unweighted mean of the valid rows.
    pub fn valid_mean(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim()];
        for i in self.valid_indices() {
            for (a, x) in acc.iter_mut().zip(self.row(i)) {
                *a += x;
            }
        }
        let n = self.valid_count() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    /// Keeps only the valid rows, dropping the padding.
    pub fn truncated(&self) -> TokenMatrix {
        let rows: Vec<&[f64]> = self.valid_indices().map(|i| self.row(i)).collect();
        let tokens = Matrix::from_rows(&rows).expect("rows share a width");
        TokenMatrix { id: self.id, mask: vec![true; tokens.rows()], tokens, modality: self.modality }
    }

    pub fn into_parts(self) -> (u32, Matrix, Vec<bool>, Modality) {
        (self.id, self.tokens, self.mask, self.modality)
    }
}

/// Seed for every randomized operation in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Independent stream for a named sub-task.
    pub fn derive(self, stream: u64) -> RngSeed {
        // splitmix64 finalizer
        let mut z = self.0 ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RngSeed(z ^ (z >> 31))
    }
}

/// Scales every valid row to unit length and zeroes the masked rows.
pub fn l2_normalize_rows(m: &TokenMatrix) -> Result<TokenMatrix> {
    let mut tokens = m.tokens.clone();
    for r in 0..tokens.rows() {
        let row = tokens.row_mut(r);
        if !m.mask[r] {
            row.fill(0.0);
            continue;
        }
        let n = norm(row);
        if n <= MIN_ROW_NORM {
            return Err(Error::ZeroNormRow { row: r, norm: n });
        }
        row.iter_mut().for_each(|x| *x /= n);
    }
    Ok(TokenMatrix { id: m.id, tokens, mask: m.mask.clone(), modality: m.modality })
}

/// Softmax over the valid entries; masked entries come out as exactly 0.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if logits.len() != mask.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} logits with {} mask entries",
            logits.len(),
            mask.len()
        )));
    }
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&x, _)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::AllMasked);
    }
    let mut out: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&x, &m)| if m { (x - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= total);
    Ok(out)
}

/// Per-column mean and population standard deviation.
pub fn column_moments(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let b = m.rows() as f64;
    let mut mean = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (acc, x) in mean.iter_mut().zip(m.row(r)) {
            *acc += x;
        }
    }
    mean.iter_mut().for_each(|x| *x /= b);
    let mut var = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for ((acc, x), mu) in var.iter_mut().zip(m.row(r)).zip(&mean) {
            *acc += (x - mu) * (x - mu);
        }
    }
    let std = var.into_iter().map(|v| (v / b).sqrt()).collect();
    (mean, std)
}

/// Standardizes each column to mean 0 and population std 1.
pub fn batch_standardize_columns(m: &Matrix) -> Result<Matrix> {
    if m.rows() < 2 {
        return Err(Error::DegenerateColumn { column: 0 });
    }
    let (mean, std) = column_moments(m);
    if let Some(column) = std.iter().position(|&s| s <= MIN_COLUMN_STD) {
        return Err(Error::DegenerateColumn { column });
    }
    let mut out = m.clone();
    for r in 0..out.rows() {
        for ((x, mu), s) in out.row_mut(r).iter_mut().zip(&mean).zip(&std) {
            *x = (*x - mu) / s;
        }
    }
    Ok(out)
}
