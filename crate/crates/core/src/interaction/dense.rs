//! Fully connected layers stacked with rectifiers in between, plus the
//! backward pass the weight heads need for training.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix};

/// Affine map `y = W x + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::ShapeMismatch(format!(
                "bias of length {} for a layer with {} outputs",
                bias.len(),
                weight.rows()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { weight: Matrix::zeros(outputs, inputs), bias: vec![0.0; outputs] }
    }

    /// Uniform in `±1/√fan_in` for both weights and bias.
    pub fn uniform<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let weight = Matrix::from_fn(outputs, inputs, |_, _| rng.random_range(-bound..=bound));
        let bias = (0..outputs).map(|_| rng.random_range(-bound..=bound)).collect();
        Self { weight, bias }
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.outputs()).map(|o| dot(self.weight.row(o), x) + self.bias[o]).collect()
    }

    pub fn param_count(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }
}

/// Checks that consecutive layers chain and returns (input width, output width).
pub fn check_chain(layers: &[Dense]) -> Result<(usize, usize)> {
    let first = layers
        .first()
        .ok_or_else(|| Error::ShapeMismatch("network has no layers".into()))?;
    for (i, pair) in layers.windows(2).enumerate() {
        if pair[0].outputs() != pair[1].inputs() {
            return Err(Error::ShapeMismatch(format!(
                "layer {i} emits {} values but layer {} expects {}",
                pair[0].outputs(),
                i + 1,
                pair[1].inputs()
            )));
        }
    }
    Ok((first.inputs(), layers[layers.len() - 1].outputs()))
}

fn relu(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

/// Forward pass with a rectifier after every layer except the last.
pub fn stack_forward(layers: &[Dense], x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for (i, layer) in layers.iter().enumerate() {
        h = layer.forward(&h);
        if i + 1 < layers.len() {
            relu(&mut h);
        }
    }
    h
}

/// Backpropagates `dout` through the stack, accumulating parameter
/// gradients into `grads` (same shapes as `layers`). Returns `∂/∂x`.
///
/// The rectifier's subgradient at exactly zero is taken as zero.
pub fn stack_backward(layers: &[Dense], x: &[f64], dout: &[f64], grads: &mut [Dense]) -> Vec<f64> {
    // activations[i] is the input to layer i
    let mut activations = Vec::with_capacity(layers.len());
    let mut h = x.to_vec();
    for (i, layer) in layers.iter().enumerate() {
        let mut next = layer.forward(&h);
        activations.push(h);
        if i + 1 < layers.len() {
            relu(&mut next);
        }
        h = next;
    }

    let mut delta = dout.to_vec();
    for i in (0..layers.len()).rev() {
        let input = &activations[i];
        let g = &mut grads[i];
        for (o, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            g.bias[o] += d;
            for (w, &a) in g.weight.row_mut(o).iter_mut().zip(input) {
                *w += d * a;
            }
        }
        let layer = &layers[i];
        let mut back = vec![0.0; layer.inputs()];
        for (o, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (b, &w) in back.iter_mut().zip(layer.weight.row(o)) {
                *b += d * w;
            }
        }
        if i > 0 {
            // input to layer i is relu(pre) of layer i-1, so gate on it
            for (b, &a) in back.iter_mut().zip(input) {
                if a <= 0.0 {
                    *b = 0.0;
                }
            }
        }
        delta = back;
    }
    delta
}

pub fn zeros_like(layers: &[Dense]) -> Vec<Dense> {
    layers.iter().map(|l| Dense::zeros(l.inputs(), l.outputs())).collect()
}

pub fn flatten(layers: &[Dense]) -> Vec<f64> {
    let mut out = Vec::with_capacity(layers.iter().map(Dense::param_count).sum());
    for l in layers {
        out.extend_from_slice(l.weight.as_slice());
        out.extend_from_slice(&l.bias);
    }
    out
}

/// Overwrites the parameters from a vector laid out like [`flatten`].
/// Returns the number of values consumed.
pub fn assign_flat(layers: &mut [Dense], values: &[f64]) -> usize {
    let mut at = 0;
    for l in layers {
        let n = l.weight.as_slice().len();
        l.weight.as_mut_slice().copy_from_slice(&values[at..at + n]);
        at += n;
        let n = l.bias.len();
        l.bias.copy_from_slice(&values[at..at + n]);
        at += n;
    }
    at
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngSeed;

    fn fd_input_grad(layers: &[Dense], x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut p = x.to_vec();
                let mut m = x.to_vec();
                p[i] += h;
                m[i] -= h;
                (stack_forward(layers, &p)[0] - stack_forward(layers, &m)[0]) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn backward_matches_differences() {
        let mut rng = RngSeed(21).rng();
        let layers = vec![Dense::uniform(5, 4, &mut rng), Dense::uniform(4, 3, &mut rng), Dense::uniform(3, 1, &mut rng)];
        let x = [0.3, -0.7, 0.2, 0.9, -0.1];
        let mut grads = zeros_like(&layers);
        let dx = stack_backward(&layers, &x, &[1.0], &mut grads);
        for (a, f) in dx.iter().zip(fd_input_grad(&layers, &x, 1e-6)) {
            assert!((a - f).abs() < 1e-7, "{a} vs {f}");
        }

        let flat = flatten(&layers);
        let g = flatten(&grads);
        for i in 0..flat.len() {
            let mut p = layers.clone();
            let mut v = flat.clone();
            v[i] += 1e-6;
            assign_flat(&mut p, &v);
            let up = stack_forward(&p, &x)[0];
            v[i] -= 2e-6;
            assign_flat(&mut p, &v);
            let down = stack_forward(&p, &x)[0];
            assert!(((up - down) / 2e-6 - g[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn chain_check_reports_break() {
        let layers = vec![Dense::zeros(4, 3), Dense::zeros(2, 1)];
        assert!(matches!(check_chain(&layers), Err(Error::ShapeMismatch(_))));
        assert_eq!(check_chain(&[Dense::zeros(4, 3), Dense::zeros(3, 1)]).unwrap(), (4, 1));
    }
}
