//! Objectives of the form `g(x) = (λ/2)‖x‖² + (1/n) Σ l(a_iᵀx, b_i)` and
//! their Lipschitz constants.

use crate::dataset::SparseDataset;
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossFamily {
    /// `log(1 + exp(-b u))`
    Logistic,
    /// `(u - b)² / 2`
    Squared,
}

impl LossFamily {
    /// Uniform bound on `l''`.
    pub fn curvature_bound(self) -> f64 {
        match self {
            LossFamily::Logistic => 0.25,
            LossFamily::Squared => 1.0,
        }
    }
}

impl std::str::FromStr for LossFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(LossFamily::Logistic),
            "squared" | "least_squares" => Ok(LossFamily::Squared),
            other => invalid(format!("unknown loss family {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossModel {
    pub family: LossFamily,
    pub lambda: f64,
}

/// Per-example and aggregate Lipschitz constants of the `f_i'`.
#[derive(Clone, Debug, PartialEq)]
pub struct LipschitzInfo {
    pub per_example: Vec<f64>,
    pub l_max: f64,
    pub l_mean: f64,
    /// Certified strong-convexity lower bound (the regularization strength).
    pub mu_lower: f64,
}

fn check_dim(ds: &SparseDataset, x: &[f64]) -> Result<()> {
    if x.len() != ds.p() {
        return Err(Error::Dimension { expected: ds.p(), got: x.len() });
    }
    Ok(())
}

fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

impl LossModel {
    pub fn new(family: LossFamily, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return invalid(format!("lambda must be finite and >= 0, got {lambda}"));
        }
        Ok(Self { family, lambda })
    }

    pub fn logistic(lambda: f64) -> Self {
        Self::new(LossFamily::Logistic, lambda).expect("valid lambda")
    }

    pub fn squared(lambda: f64) -> Self {
        Self::new(LossFamily::Squared, lambda).expect("valid lambda")
    }

    /// `(l(u, b), l'(u, b))`.
    pub fn point_loss_deriv(&self, u: f64, b: f64) -> (f64, f64) {
        match self.family {
            LossFamily::Logistic => {
                let t = b * u;
                // log(1 + e^{-t}) and e^{-t}/(1+e^{-t}) without overflow.
                if t > 0.0 {
                    let e = (-t).exp();
                    (e.ln_1p(), -b * e / (1.0 + e))
                } else {
                    let e = t.exp();
                    (-t + e.ln_1p(), -b / (1.0 + e))
                }
            }
            LossFamily::Squared => {
                let r = u - b;
                (0.5 * r * r, r)
            }
        }
    }

    pub fn point_loss(&self, u: f64, b: f64) -> f64 {
        self.point_loss_deriv(u, b).0
    }

    pub fn point_deriv(&self, u: f64, b: f64) -> f64 {
        self.point_loss_deriv(u, b).1
    }

    /// `l''(u, b)`.
    pub fn point_second_deriv(&self, u: f64, b: f64) -> f64 {
        match self.family {
            LossFamily::Logistic => {
                let t = (b * u).abs();
                let e = (-t).exp();
                e / ((1.0 + e) * (1.0 + e))
            }
            LossFamily::Squared => 1.0,
        }
    }

    /// `f_i(x) = (λ/2)‖x‖² + l(a_iᵀx, b_i)`.
    pub fn example_value(&self, ds: &SparseDataset, i: usize, x: &[f64]) -> f64 {
        let u = ds.row(i).dot(x);
        0.5 * self.lambda * norm_sq(x) + self.point_loss(u, ds.label(i))
    }

    /// Dense `f_i'(x)`.
    pub fn example_gradient(&self, ds: &SparseDataset, i: usize, x: &[f64]) -> Vec<f64> {
        let row = ds.row(i);
        let s = self.point_deriv(row.dot(x), ds.label(i));
        let mut g: Vec<f64> = x.iter().map(|v| self.lambda * v).collect();
        row.axpy(s, &mut g);
        g
    }

    pub fn full_objective(&self, ds: &SparseDataset, x: &[f64]) -> Result<f64> {
        check_dim(ds, x)?;
        let n = ds.n() as f64;
        let data: f64 = if ds.n() == 0 {
            0.0
        } else {
            (0..ds.n()).map(|i| self.point_loss(ds.row(i).dot(x), ds.label(i))).sum::<f64>() / n
        };
        Ok(0.5 * self.lambda * norm_sq(x) + data)
    }

    pub fn full_gradient(&self, ds: &SparseDataset, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(ds, x)?;
        let mut g: Vec<f64> = x.iter().map(|v| self.lambda * v).collect();
        if ds.n() > 0 {
            let inv_n = 1.0 / ds.n() as f64;
            for i in 0..ds.n() {
                let row = ds.row(i);
                let s = self.point_deriv(row.dot(x), ds.label(i));
                row.axpy(s * inv_n, &mut g);
            }
        }
        Ok(g)
    }

    /// Objective and gradient in one pass over the data.
    pub fn objective_and_gradient(&self, ds: &SparseDataset, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_dim(ds, x)?;
        let mut g: Vec<f64> = x.iter().map(|v| self.lambda * v).collect();
        let mut f = 0.0;
        if ds.n() > 0 {
            let inv_n = 1.0 / ds.n() as f64;
            for i in 0..ds.n() {
                let row = ds.row(i);
                let (l, s) = self.point_loss_deriv(row.dot(x), ds.label(i));
                f += l;
                row.axpy(s * inv_n, &mut g);
            }
            f *= inv_n;
        }
        Ok((f + 0.5 * self.lambda * norm_sq(x), g))
    }

    pub fn lipschitz_constants(&self, ds: &SparseDataset) -> LipschitzInfo {
        let c = self.family.curvature_bound();
        let per_example: Vec<f64> =
            ds.rows().map(|r| c * r.norm_sq() + self.lambda).collect();
        let l_max = per_example.iter().cloned().fold(self.lambda, f64::max);
        let l_mean = if per_example.is_empty() {
            self.lambda
        } else {
            per_example.iter().sum::<f64>() / per_example.len() as f64
        };
        LipschitzInfo { per_example, l_max, l_mean, mu_lower: self.lambda }
    }

    /// Top eigenvalue of `λI + (c/|B|) Σ_{i∈B} a_i a_iᵀ` by power iteration,
    /// with `c` the family's curvature bound.
    pub fn batch_hessian_lipschitz(&self, ds: &SparseDataset, batch: &[usize]) -> Result<f64> {
        if batch.is_empty() {
            return invalid("batch must be nonempty");
        }
        if let Some(&i) = batch.iter().find(|&&i| i >= ds.n()) {
            return Err(Error::IndexOutOfRange { index: i, len: ds.n() });
        }
        let c = self.family.curvature_bound() / batch.len() as f64;
        let p = ds.p();
        let apply = |v: &[f64], out: &mut Vec<f64>| {
            out.iter_mut().for_each(|o| *o = 0.0);
            for &i in batch {
                let r = ds.row(i);
                r.axpy(c * r.dot(v), out);
            }
        };
        // Deterministic start with components in every direction.
        let mut v: Vec<f64> = (0..p).map(|j| 1.0 + ((j as f64 + 1.0) * 0.618_033_988_75).fract()).collect();
        let nv = norm_sq(&v).sqrt();
        v.iter_mut().for_each(|x| *x /= nv);
        let mut w = vec![0.0; p];
        let mut est = 0.0;
        for _ in 0..100_000 {
            apply(&v, &mut w);
            let rayleigh: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
            let nw = norm_sq(&w).sqrt();
            if nw == 0.0 {
                est = 0.0;
                break;
            }
            for (vi, wi) in v.iter_mut().zip(&w) {
                *vi = wi / nw;
            }
            let converged = (rayleigh - est).abs() <= 1e-12 * rayleigh.abs().max(f64::MIN_POSITIVE);
            est = rayleigh;
            if converged {
                break;
            }
        }
        Ok(self.lambda + est)
    }

    /// `(1/n) Σ ‖f_i'(x)‖²`, the gradient variance when `x` is a minimizer.
    pub fn gradient_variance_at(&self, ds: &SparseDataset, x: &[f64]) -> Result<f64> {
        check_dim(ds, x)?;
        if ds.n() == 0 {
            return Ok(0.0);
        }
        let lx2 = self.lambda * self.lambda * norm_sq(x);
        let mut total = 0.0;
        for i in 0..ds.n() {
            let row = ds.row(i);
            let s = self.point_deriv(row.dot(x), ds.label(i));
            // ‖λx + s a‖² = λ²‖x‖² + 2λs aᵀx + s²‖a‖²
            total += lx2 + 2.0 * self.lambda * s * row.dot(x) + s * s * row.norm_sq();
        }
        Ok(total / ds.n() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_symmetric_point() {
        let m = LossModel::logistic(0.0);
        let (v, d) = m.point_loss_deriv(0.0, 1.0);
        assert!((v - 2f64.ln()).abs() < 1e-15);
        assert_eq!(d, -0.5);
    }

    #[test]
    fn squared_arithmetic() {
        let m = LossModel::squared(0.0);
        assert_eq!(m.point_loss_deriv(3.0, 1.0), (2.0, 2.0));
    }

    #[test]
    fn logistic_extreme_margins() {
        let m = LossModel::logistic(0.0);
        // exp(-1000) underflows to zero; the point is no overflow or NaN.
        let (v, d) = m.point_loss_deriv(1000.0, 1.0);
        assert!(v.is_finite() && d.is_finite());
        assert!((0.0..=1e-300).contains(&v));
        assert!((-1e-300..=0.0).contains(&d));
        // Moderately large margin against the series log1p(e) ≈ e.
        let (v, d) = m.point_loss_deriv(40.0, 1.0);
        let e = (-40f64).exp();
        assert!((v - e).abs() <= 1e-15 * e);
        assert!((d + e).abs() <= 1e-15 * e);
        let (v, d) = m.point_loss_deriv(-1000.0, 1.0);
        assert_eq!(v, 1000.0);
        assert_eq!(d, -1.0);
    }

    #[test]
    fn objective_examples() {
        let ds = SparseDataset::parse_libsvm_str("1 1:2 2:-1\n-1 2:3", None).unwrap();
        let m = LossModel::logistic(0.0);
        assert!((m.full_objective(&ds, &[0.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);

        let ds = SparseDataset::from_dense(&[vec![1.0]], vec![1.0]).unwrap();
        let m = LossModel::squared(2.0);
        assert_eq!(m.full_objective(&ds, &[1.0]).unwrap(), 1.0);
        assert!(m.full_objective(&ds, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn gradient_example() {
        let ds = SparseDataset::from_dense(&[vec![2.0, 0.0]], vec![0.0]).unwrap();
        let m = LossModel::squared(0.0);
        assert_eq!(m.full_gradient(&ds, &[1.0, 0.0]).unwrap(), vec![4.0, 0.0]);
        assert!(m.full_gradient(&ds, &[1.0]).is_err());
    }

    #[test]
    fn lipschitz_examples() {
        let ds = SparseDataset::from_dense(&[vec![2.0, 0.0]], vec![1.0]).unwrap();
        assert_eq!(LossModel::logistic(0.0).lipschitz_constants(&ds).per_example, vec![1.0]);
        let ds = SparseDataset::from_dense(&[vec![1.0, 1.0]], vec![1.0]).unwrap();
        assert_eq!(LossModel::squared(0.5).lipschitz_constants(&ds).per_example, vec![2.5]);

        let ds = SparseDataset::from_dense(&[vec![1.0], vec![3.0]], vec![1.0, 1.0]).unwrap();
        let info = LossModel::squared(0.0).lipschitz_constants(&ds);
        assert_eq!(info.l_max, 9.0);
        assert!(info.l_mean > 1.0 && info.l_mean < 9.0);
    }

    #[test]
    fn hessian_lipschitz_small_batches() {
        let ds = SparseDataset::from_dense(&[vec![1.0, 0.0], vec![1.0, 0.0]], vec![0.0, 0.0]).unwrap();
        let m = LossModel::squared(0.0);
        assert!((m.batch_hessian_lipschitz(&ds, &[0]).unwrap() - 1.0).abs() < 1e-8);
        assert!((m.batch_hessian_lipschitz(&ds, &[0, 1]).unwrap() - 1.0).abs() < 1e-8);
        assert!(m.batch_hessian_lipschitz(&ds, &[]).is_err());
    }

    #[test]
    fn hessian_lipschitz_against_closed_form_2x2() {
        // (1/2)(a aᵀ + b bᵀ) for a=(1,0), b=(1,1) is [[1, .5],[.5, .5]].
        let ds = SparseDataset::from_dense(&[vec![1.0, 0.0], vec![1.0, 1.0]], vec![0.0, 0.0]).unwrap();
        let m = LossModel::squared(0.1);
        let (tr, det) = (1.5, 0.25);
        let top = 0.5 * (tr + f64::sqrt(tr * tr - 4.0 * det));
        let got = m.batch_hessian_lipschitz(&ds, &[0, 1]).unwrap();
        assert!((got - (top + 0.1)).abs() <= 1e-8 * top);
    }

    #[test]
    fn variance_examples() {
        // a = ±1, b = ±1 squared loss: minimizer x* = 1, both residuals zero.
        let ds = SparseDataset::from_dense(&[vec![1.0], vec![-1.0]], vec![1.0, -1.0]).unwrap();
        let m = LossModel::squared(0.0);
        assert!(m.gradient_variance_at(&ds, &[1.0]).unwrap().abs() < 1e-15);
        // Away from the minimizer: both per-example gradients equal (x-1).
        let v = m.gradient_variance_at(&ds, &[3.0]).unwrap();
        assert!((v - 4.0).abs() < 1e-12);

        let ds = SparseDataset::from_dense(&[vec![2.0]], vec![1.0]).unwrap();
        let m = LossModel::logistic(0.3);
        let x = [0.7];
        let g = m.full_gradient(&ds, &x).unwrap();
        let v = m.gradient_variance_at(&ds, &x).unwrap();
        assert!((v - g[0] * g[0]).abs() < 1e-14);
    }

    #[test]
    fn rejects_negative_lambda() {
        assert!(LossModel::new(LossFamily::Logistic, -1.0).is_err());
        assert!(LossModel::new(LossFamily::Squared, f64::NAN).is_err());
    }
}
