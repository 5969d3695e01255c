//! Closed-form compute and memory cost of scanning `N` documents.

use serde::{Deserialize, Serialize};

use crate::interaction::Mechanism;

/// Cost-model sizes. Defaults are the reference setting: `D = 512`,
/// `N_t = 32`, `N_v = 12`, `L = 4`, `S = 3`, one document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopParams {
    pub n: u64,
    pub d: u64,
    pub nt: u64,
    pub nv: u64,
    pub l: u64,
    pub s: u64,
}

impl Default for FlopParams {
    fn default() -> Self {
        Self { n: 1, d: 512, nt: 32, nv: 12, l: 4, s: 3 }
    }
}

impl FlopParams {
    pub fn ntv(&self) -> u64 {
        self.nt + self.nv
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopReport {
    pub mechanism: Mechanism,
    pub flops: u128,
    /// Same as `flops` except for XTI, where the layer factor is dropped.
    pub per_layer_flops: u128,
    pub memory_units: u128,
    pub params: FlopParams,
}

impl FlopReport {
    pub fn ratio_to(&self, other: &FlopReport) -> f64 {
        self.flops as f64 / other.flops as f64
    }

    /// Ratio of the per-layer costs.
    pub fn per_layer_ratio_to(&self, other: &FlopReport) -> f64 {
        self.per_layer_flops as f64 / other.per_layer_flops as f64
    }
}

/// Evaluates the cost model exactly.
///
/// | mechanism | flops | memory |
/// |-----------|-------|--------|
/// | DP  | `N·D` | `N·D` |
/// | HI  | `N·S·D` | `N·S·D` |
/// | MLP | `N·(L·D² + D)` | `N·D` |
/// | XTI | `N·(D²·N_tv + N_tv²·D)·L` | `N·N_v·D` |
/// | TI  | `N·N_t·N_v·D` | `N·N_v·D` |
/// | WTI | `N·(N_t·N_v·D + N_tv)` | `N·N_v·(D+1)` |
pub fn flop_count(mechanism: Mechanism, params: FlopParams) -> FlopReport {
    let FlopParams { n, d, nt, nv, l, s } = params;
    let (n, d, nt, nv, l, s) = (n as u128, d as u128, nt as u128, nv as u128, l as u128, s as u128);
    let ntv = nt + nv;
    let xti_layer = n * (d * d * ntv + ntv * ntv * d);
    let (flops, per_layer_flops, memory_units) = match mechanism {
        Mechanism::Dp => (n * d, n * d, n * d),
        Mechanism::Hi => (n * s * d, n * s * d, n * s * d),
        Mechanism::Mlp => {
            let f = n * (l * d * d + d);
            (f, f, n * d)
        }
        Mechanism::Xti => (xti_layer * l, xti_layer, n * nv * d),
        Mechanism::Ti => (n * nt * nv * d, n * nt * nv * d, n * nv * d),
        Mechanism::Wti => {
            let f = n * (nt * nv * d + ntv);
            (f, f, n * nv * (d + 1))
        }
    };
    FlopReport { mechanism, flops, per_layer_flops, memory_units, params }
}
