use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dense::{self, Dense};
use crate::error::{Error, Result};
use crate::numerics::{masked_softmax, Modality, TokenMatrix};

/// How a fresh [`WeightHead`] is parameterized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadInit {
    /// Every parameter zero: uniform token weights.
    Zero,
    /// Every layer uniform in `±1/√fan_in`.
    Uniform,
    /// Hidden layers uniform, output layer zero. Starts at uniform weights
    /// but, unlike [`HeadInit::Zero`], has a nonzero gradient.
    ZeroOutput,
}

/// Per-token fusion-weight network for one modality: a small MLP mapping
/// each token to a logit, followed by a masked softmax over the sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightHead {
    pub side: Modality,
    pub layers: Vec<Dense>,
}

impl WeightHead {
    pub fn new(side: Modality, layers: Vec<Dense>) -> Result<Self> {
        let (_, out) = dense::check_chain(&layers)?;
        if out != 1 {
            return Err(Error::ShapeMismatch(format!("weight head must emit 1 logit, emits {out}")));
        }
        Ok(Self { side, layers })
    }

    /// `depth` affine layers: `dim → hidden → … → 1` (depth 1 is `dim → 1`).
    pub fn init<R: Rng + ?Sized>(
        side: Modality,
        dim: usize,
        hidden: usize,
        depth: usize,
        init: HeadInit,
        rng: &mut R,
    ) -> Self {
        assert!(depth >= 1, "weight head needs at least one layer");
        let mut widths = vec![dim];
        widths.extend(std::iter::repeat_n(hidden, depth - 1));
        widths.push(1);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| match init {
                HeadInit::Zero => Dense::zeros(w[0], w[1]),
                HeadInit::Uniform => Dense::uniform(w[0], w[1], rng),
                HeadInit::ZeroOutput if i + 2 == widths.len() => Dense::zeros(w[0], w[1]),
                HeadInit::ZeroOutput => Dense::uniform(w[0], w[1], rng),
            })
            .collect();
        Self { side, layers }
    }

    /// Two-layer all-zero head.
    pub fn zeros(side: Modality, dim: usize, hidden: usize) -> Self {
        Self {
            side,
            layers: vec![Dense::zeros(dim, hidden), Dense::zeros(hidden, 1)],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn logit(&self, token: &[f64]) -> f64 {
        dense::stack_forward(&self.layers, token)[0]
    }

    /// Raw logits for every row; masked rows get 0 and are ignored downstream.
    pub fn logits(&self, m: &TokenMatrix) -> Vec<f64> {
        (0..m.len())
            .map(|i| if m.mask()[i] { self.logit(m.row(i)) } else { 0.0 })
            .collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        dense::flatten(&self.layers)
    }

    pub fn assign_flat(&mut self, values: &[f64]) -> usize {
        dense::assign_flat(&mut self.layers, values)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn zero_grad(&self) -> Vec<Dense> {
        dense::zeros_like(&self.layers)
    }

    pub(crate) fn check_input(&self, m: &TokenMatrix) -> Result<()> {
        if self.side != m.modality {
            return Err(Error::ShapeMismatch(format!(
                "{:?} weight head applied to {:?} tokens",
                self.side, m.modality
            )));
        }
        if self.input_dim() != m.dim() {
            return Err(Error::ShapeMismatch(format!(
                "weight head expects width {}, tokens have {}",
                self.input_dim(),
                m.dim()
            )));
        }
        Ok(())
    }
}

/// Fusion weights for each token: head logits through a masked softmax.
pub fn token_weights(m: &TokenMatrix, head: &WeightHead) -> Result<Vec<f64>> {
    head.check_input(m)?;
    masked_softmax(&head.logits(m), m.mask())
}
