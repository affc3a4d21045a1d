use crate::dataset::SparseDataset;
use crate::error::{Error, Result};
use crate::losses::LossModel;

/// Below this value of `‖a_i‖² l_i'(u)²` the test is skipped.
pub const SKIP_THRESHOLD: f64 = 1e-8;

const L_CEILING: f64 = 1e300;

/// Outcome of one backtracking search.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineSearch {
    /// Accepted Lipschitz estimate.
    pub l: f64,
    /// Failed tests, each of which forces another trial evaluation.
    pub evals: u64,
}

/// Doubles `l` until the sufficient-decrease test holds for the loss of one
/// example at margin `u`:
///
/// `l(u - ‖a‖² s / L) ≤ l(u) - ‖a‖² s² / (2L)`, with `s = l'(u)`.
///
/// The test covers only the data-fitting term; callers add `λ` to the
/// returned estimate for the regularized example gradient.
pub fn line_search_scalar(l_est: f64, model: &LossModel, u: f64, b: f64, norm_sq: f64) -> Result<LineSearch> {
    if !(l_est > 0.0 && l_est.is_finite()) {
        return Err(Error::InvalidArgument(format!("Lipschitz estimate must be positive, got {l_est}")));
    }
    let (f0, s) = model.point_loss_deriv(u, b);
    if !f0.is_finite() || !s.is_finite() {
        return Err(Error::NonFinite(format!("loss at margin {u}")));
    }
    let g2 = norm_sq * s * s;
    if g2 <= SKIP_THRESHOLD {
        return Ok(LineSearch { l: l_est, evals: 0 });
    }
    let mut l = l_est;
    let mut evals = 0;
    loop {
        let trial = model.point_loss(u - norm_sq * s / l, b);
        if !trial.is_finite() {
            return Err(Error::NonFinite(format!("loss at trial point with L = {l}")));
        }
        if trial <= f0 - g2 / (2.0 * l) {
            return Ok(LineSearch { l, evals });
        }
        evals += 1;
        l *= 2.0;
        if l > L_CEILING {
            return Err(Error::NonFinite("Lipschitz estimate diverged".into()));
        }
    }
}

/// Line search for example `i` at iterate `x`.
pub fn line_search_update(l_est: f64, model: &LossModel, ds: &SparseDataset, i: usize, x: &[f64]) -> Result<LineSearch> {
    if i >= ds.n() {
        return Err(Error::IndexOutOfRange { index: i, len: ds.n() });
    }
    let row = ds.row(i);
    line_search_scalar(l_est, model, row.dot(x), ds.label(i), row.norm_sq())
}
