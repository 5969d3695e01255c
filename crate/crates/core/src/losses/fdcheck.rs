/// Denominator floor for [`relative_error`], so coordinates whose true
/// gradient is ~0 are compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Outcome of a central finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    /// Max over all coordinates of [`relative_error`].
    pub max_rel_error: f64,
    /// Coordinate attaining the max (None when there are no parameters).
    pub worst_index: Option<usize>,
    pub step: f64,
    pub numeric: Vec<f64>,
}

/// `|a − n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares `analytic` against central differences of `loss` at `params`.
pub fn fd_check(mut loss: impl FnMut(&[f64]) -> f64, params: &[f64], analytic: &[f64], step: f64) -> GradReport {
    assert!(step > 0.0, "finite-difference step must be positive");
    assert_eq!(params.len(), analytic.len(), "one analytic value per parameter");
    let mut x = params.to_vec();
    let mut numeric = Vec::with_capacity(params.len());
    let mut max_rel_error = 0.0;
    let mut worst_index = None;
    for i in 0..params.len() {
        x[i] = params[i] + step;
        let up = loss(&x);
        x[i] = params[i] - step;
        let down = loss(&x);
        x[i] = params[i];
        let g = (up - down) / (2.0 * step);
        let e = relative_error(analytic[i], g);
        if worst_index.is_none() || e > max_rel_error {
            max_rel_error = e;
            worst_index = Some(i);
        }
        numeric.push(g);
    }
    GradReport { max_rel_error, worst_index, step, numeric }
}
