//! Full-gradient, stochastic-gradient and coordinate methods used as
//! points of comparison.
//!
//! The incremental aggregated gradient method lives in [`crate::sag`]: it is
//! [`SagSolver`](crate::sag::SagSolver) with [`SamplingPolicy::Cyclic`](crate::sag::SamplingPolicy).

use crate::dataset::{Columns, SparseDataset};
use crate::error::{invalid, Error, Result};
use crate::losses::{LossFamily, LossModel};
use crate::samplers::{DiscreteSampler, Rng};

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// `x ← x − α g'(x)`.
pub fn fg_step(x: &mut [f64], model: &LossModel, ds: &SparseDataset, alpha: f64) -> Result<()> {
    let g = model.full_gradient(ds, x)?;
    axpy(-alpha, &g, x);
    Ok(())
}

/// Nesterov's accelerated full-gradient method with a backtracking estimate of `L`.
#[derive(Clone, Debug)]
pub struct Afg {
    pub x: Vec<f64>,
    /// Extrapolated point where the next gradient is taken.
    pub z: Vec<f64>,
    pub t: f64,
    pub l: f64,
    /// Single-example gradient evaluations, `n` per full objective or gradient.
    pub evals: u64,
}

impl Afg {
    pub fn new(x0: Vec<f64>, l0: f64) -> Result<Self> {
        if !(l0 > 0.0 && l0.is_finite()) {
            return invalid(format!("initial Lipschitz estimate must be positive, got {l0}"));
        }
        Ok(Self { z: x0.clone(), x: x0, t: 1.0, l: l0, evals: 0 })
    }

    pub fn afg_step(&mut self, model: &LossModel, ds: &SparseDataset) -> Result<()> {
        let n = ds.n() as u64;
        let (fz, gz) = model.objective_and_gradient(ds, &self.z)?;
        self.evals += n;
        let g2 = norm_sq(&gz);
        let x_new = loop {
            let mut cand = self.z.clone();
            axpy(-1.0 / self.l, &gz, &mut cand);
            let f = model.full_objective(ds, &cand)?;
            self.evals += n;
            if !f.is_finite() {
                return Err(Error::NonFinite("objective at accelerated trial point".into()));
            }
            if g2 <= 0.0 || f <= fz - g2 / (2.0 * self.l) {
                break cand;
            }
            self.l *= 2.0;
            if self.l > 1e300 {
                return Err(Error::NonFinite("Lipschitz estimate diverged".into()));
            }
        };
        let t_next = (1.0 + (1.0 + 4.0 * self.t * self.t).sqrt()) / 2.0;
        let beta = (self.t - 1.0) / t_next;
        self.z = x_new.iter().zip(&self.x).map(|(a, b)| a + beta * (a - b)).collect();
        self.x = x_new;
        self.t = t_next;
        Ok(())
    }
}

/// Plain stochastic gradient with an optional running average of iterates.
#[derive(Clone, Debug)]
pub struct Sg {
    pub x: Vec<f64>,
    /// Mean of the iterates after each step.
    pub avg: Vec<f64>,
    pub k: u64,
}

impl Sg {
    pub fn new(x0: Vec<f64>) -> Self {
        Self { avg: x0.clone(), x: x0, k: 0 }
    }

    pub fn sg_step(&mut self, model: &LossModel, ds: &SparseDataset, i: usize, alpha: f64) -> Result<()> {
        if i >= ds.n() {
            return Err(Error::IndexOutOfRange { index: i, len: ds.n() });
        }
        let row = ds.row(i);
        let s = model.point_deriv(row.dot(&self.x), ds.label(i));
        if model.lambda != 0.0 {
            let shrink = 1.0 - alpha * model.lambda;
            self.x.iter_mut().for_each(|v| *v *= shrink);
        }
        row.axpy(-alpha * s, &mut self.x);
        self.k += 1;
        let w = 1.0 / self.k as f64;
        self.avg.iter_mut().zip(&self.x).for_each(|(a, x)| *a += w * (x - *a));
        Ok(())
    }
}

/// Randomized primal coordinate descent with step `1/L_j`.
///
/// Keeps `u = Ax` up to date so a coordinate step costs one column.
#[derive(Clone, Debug)]
pub struct Pcd {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub iters: u64,
    cols: Columns,
    lj: Vec<f64>,
    weighted: Option<DiscreteSampler>,
}

impl Pcd {
    /// With `weighted`, coordinates are drawn with probability proportional to `L_j`.
    pub fn new(model: &LossModel, ds: &SparseDataset, x0: Vec<f64>, weighted: bool) -> Result<Self> {
        if x0.len() != ds.p() {
            return Err(Error::Dimension { expected: ds.p(), got: x0.len() });
        }
        if ds.n() == 0 {
            return invalid("dataset has no examples");
        }
        let cols = ds.columns();
        let c = model.family.curvature_bound() / ds.n() as f64;
        let lj: Vec<f64> = (0..ds.p()).map(|j| model.lambda + c * cols.column(j).norm_sq()).collect();
        let weighted = if weighted { Some(DiscreteSampler::new(&lj)?) } else { None };
        let u = ds.mul_vec(&x0);
        Ok(Self { x: x0, u, iters: 0, cols, lj, weighted })
    }

    pub fn coordinate_lipschitz(&self) -> &[f64] {
        &self.lj
    }

    pub fn coordinate_gradient(&self, model: &LossModel, ds: &SparseDataset, j: usize) -> f64 {
        let col = self.cols.column(j);
        let s: f64 = col
            .indices
            .iter()
            .zip(col.values)
            .map(|(&i, &a)| a * model.point_deriv(self.u[i], ds.label(i)))
            .sum();
        model.lambda * self.x[j] + s / ds.n() as f64
    }

    pub fn pcd_step(&mut self, model: &LossModel, ds: &SparseDataset, j: usize) -> Result<()> {
        if j >= self.x.len() {
            return Err(Error::IndexOutOfRange { index: j, len: self.x.len() });
        }
        self.iters += 1;
        if self.lj[j] <= 0.0 {
            // an empty column with no regularization leaves g flat in x_j
            return Ok(());
        }
        let delta = -self.coordinate_gradient(model, ds, j) / self.lj[j];
        self.x[j] += delta;
        let col = self.cols.column(j);
        for (&i, &a) in col.indices.iter().zip(col.values) {
            self.u[i] += a * delta;
        }
        Ok(())
    }

    pub fn sample_coordinate(&self, rng: &mut Rng) -> usize {
        match &self.weighted {
            Some(s) => s.sample(rng),
            None => rng.below(self.x.len()),
        }
    }

    /// Effective passes as `iterations · n / p`.
    ///
    /// A cost model that charges one column (`O(n)`) per coordinate step
    /// would instead give `iterations / p`.
    pub fn effective_passes(&self, n: usize) -> f64 {
        pcd_effective_passes(self.iters, n, self.x.len())
    }
}

pub fn pcd_effective_passes(iters: u64, n: usize, p: usize) -> f64 {
    iters as f64 * n as f64 / p as f64
}

/// Tolerance on the derivative of the one-dimensional logistic dual subproblem.
pub const DCA_INNER_TOL: f64 = 1e-12;

/// Randomized dual coordinate ascent with exact coordinate maximization.
///
/// Dual variables `α_i` define the primal point `x = (1/(λn)) Σ α_i a_i`
/// with `a_i` the feature rows. For logistic loss the dual variable is
/// `α_i = β_i b_i` with `β_i ∈ [0, 1]`; for squared loss it is unconstrained.
#[derive(Clone, Debug)]
pub struct Dca {
    pub x: Vec<f64>,
    pub alpha: Vec<f64>,
    pub iters: u64,
    norms: Vec<f64>,
    scale: f64,
}

impl Dca {
    pub fn new(model: &LossModel, ds: &SparseDataset) -> Result<Self> {
        if model.lambda <= 0.0 {
            return Err(Error::Unsupported("dual coordinate ascent needs lambda > 0".into()));
        }
        if ds.n() == 0 {
            return invalid("dataset has no examples");
        }
        if model.family == LossFamily::Logistic && !ds.is_binary() {
            return invalid("logistic dual needs labels in {-1, +1}");
        }
        Ok(Self {
            x: vec![0.0; ds.p()],
            alpha: vec![0.0; ds.n()],
            iters: 0,
            norms: ds.row_norms_sq(),
            scale: 1.0 / (model.lambda * ds.n() as f64),
        })
    }

    pub fn dca_step(&mut self, model: &LossModel, ds: &SparseDataset, i: usize) -> Result<()> {
        if i >= ds.n() {
            return Err(Error::IndexOutOfRange { index: i, len: ds.n() });
        }
        let row = ds.row(i);
        let u = row.dot(&self.x);
        let b = ds.label(i);
        let q = self.norms[i] * self.scale;
        let delta = match model.family {
            LossFamily::Squared => (b - u - self.alpha[i]) / (1.0 + q),
            LossFamily::Logistic => {
                let beta_old = self.alpha[i] * b;
                let beta = sigmoid(solve_logistic_dual(b * u, q, beta_old)?);
                (beta - beta_old) * b
            }
        };
        self.alpha[i] += delta;
        row.axpy(delta * self.scale, &mut self.x);
        self.iters += 1;
        Ok(())
    }

    pub fn dual_objective(&self, model: &LossModel, ds: &SparseDataset) -> f64 {
        let n = ds.n() as f64;
        let conj: f64 = self
            .alpha
            .iter()
            .zip(ds.labels())
            .map(|(&a, &b)| match model.family {
                LossFamily::Squared => a * b - 0.5 * a * a,
                LossFamily::Logistic => neg_entropy(a * b),
            })
            .sum();
        conj / n - 0.5 * model.lambda * norm_sq(&self.x)
    }

    pub fn duality_gap(&self, model: &LossModel, ds: &SparseDataset) -> Result<f64> {
        Ok(model.full_objective(ds, &self.x)? - self.dual_objective(model, ds))
    }

    pub fn effective_passes(&self, n: usize) -> f64 {
        self.iters as f64 / n as f64
    }
}

/// `-β log β - (1-β) log(1-β)`, extended by continuity to the endpoints.
fn neg_entropy(beta: f64) -> f64 {
    let term = |t: f64| if t <= 0.0 { 0.0 } else { t * t.ln() };
    -(term(beta) + term(1.0 - beta))
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Solves the one-dimensional logistic dual subproblem
/// `log(β/(1-β)) + v + q(β - β_old) = 0` in the logit `t = log(β/(1-β))`,
/// returning `t`. The residual `t + v + q(σ(t) - β_old)` is increasing with
/// slope at least 1, and the root lies in `[-v - q, -v + q]`; Newton steps
/// that leave the current bracket are replaced by bisection.
pub fn solve_logistic_dual(v: f64, q: f64, beta_old: f64) -> Result<f64> {
    if !(v.is_finite() && q.is_finite() && q >= 0.0) {
        return Err(Error::NonFinite("logistic dual subproblem".into()));
    }
    let h = |t: f64| t + v + q * (sigmoid(t) - beta_old);
    let (mut lo, mut hi) = (-v - q, -v + q);
    let mut t = (-v).clamp(lo, hi);
    for _ in 0..200 {
        let r = h(t);
        if r.abs() <= DCA_INNER_TOL {
            return Ok(t);
        }
        if r > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let s = sigmoid(t);
        let newton = t - r / (1.0 + q * s * (1.0 - s));
        let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if next == t {
            return Ok(t);
        }
        t = next;
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_generate, SynthSpec};

    #[test]
    fn fg_exact_on_unit_quadratic() {
        let ds = SparseDataset::from_dense(&[vec![1.0]], vec![0.0]).unwrap();
        let m = LossModel::squared(0.0);
        let mut x = vec![1.0];
        fg_step(&mut x, &m, &ds, 0.0).unwrap();
        assert_eq!(x, vec![1.0]);
        fg_step(&mut x, &m, &ds, 1.0).unwrap();
        assert_eq!(x, vec![0.0]);
    }

    #[test]
    fn fg_contraction_on_diagonal_quadratic() {
        // g = ½(μ x₀² + L x₁²) via rows √(2μ)e₀, √(2L)e₁ and n = 2
        let (mu, l) = (0.5f64, 4.0f64);
        let ds = SparseDataset::from_dense(&[vec![(2.0 * mu).sqrt(), 0.0], vec![0.0, (2.0 * l).sqrt()]], vec![0.0, 0.0])
            .unwrap();
        let m = LossModel::squared(0.0);
        let mut x = vec![1.0, 1.0];
        fg_step(&mut x, &m, &ds, 2.0 / (mu + l)).unwrap();
        let rho = 1.0 - 2.0 * mu / (l + mu);
        assert!((x[0].abs() - rho).abs() < 1e-14 && (x[1].abs() - rho).abs() < 1e-14);
    }

    #[test]
    fn afg_t_sequence_and_first_step() {
        let ds = SparseDataset::from_dense(&[vec![1.0, 0.0], vec![0.0, 2.0]], vec![1.0, 0.0]).unwrap();
        let m = LossModel::squared(0.0);
        let mut afg = Afg::new(vec![0.0; 2], 2.0).unwrap();
        let mut x = vec![0.0; 2];
        afg.afg_step(&m, &ds).unwrap();
        fg_step(&mut x, &m, &ds, 1.0 / afg.l).unwrap();
        assert_eq!(afg.x, x);
        assert_eq!(afg.z, x);
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((afg.t - golden).abs() < 1e-15);
        afg.afg_step(&m, &ds).unwrap();
        let third = (1.0 + (1.0 + 4.0 * golden * golden).sqrt()) / 2.0;
        assert!((afg.t - third).abs() < 1e-15);
        assert!((third - 2.193_527_085_331_054).abs() < 1e-12);
    }

    #[test]
    fn sg_matches_fg_when_n_is_one() {
        let ds = SparseDataset::from_dense(&[vec![1.0, -2.0]], vec![1.0]).unwrap();
        let m = LossModel::logistic(0.1);
        let mut sg = Sg::new(vec![0.3, 0.1]);
        let mut x = vec![0.3, 0.1];
        for _ in 0..5 {
            sg.sg_step(&m, &ds, 0, 0.2).unwrap();
            fg_step(&mut x, &m, &ds, 0.2).unwrap();
        }
        for (a, b) in sg.x.iter().zip(&x) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn asg_mean_matches_stored_iterates() {
        let ds = synth_generate(&SynthSpec::new(30, 4, 2)).unwrap();
        let m = LossModel::logistic(0.01);
        let mut sg = Sg::new(vec![0.0; 4]);
        let mut rng = Rng::new(1);
        let mut sum = vec![0.0; 4];
        for _ in 0..500 {
            sg.sg_step(&m, &ds, rng.below(30), 0.3).unwrap();
            axpy(1.0, &sg.x.clone(), &mut sum);
        }
        for (a, s) in sg.avg.iter().zip(&sum) {
            assert!((a - s / 500.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pcd_separable_quadratic_one_sweep() {
        // n = 2 rows with disjoint support: g is separable
        let ds = SparseDataset::from_dense(&[vec![2.0, 0.0], vec![0.0, 3.0]], vec![1.0, -2.0]).unwrap();
        let m = LossModel::squared(0.0);
        let mut pcd = Pcd::new(&m, &ds, vec![0.0; 2], false).unwrap();
        pcd.pcd_step(&m, &ds, 0).unwrap();
        pcd.pcd_step(&m, &ds, 1).unwrap();
        assert!((pcd.x[0] - 0.5).abs() < 1e-15 && (pcd.x[1] + 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn pcd_coordinate_gradient_matches_full() {
        let ds = synth_generate(&SynthSpec::new(40, 6, 5)).unwrap();
        let m = LossModel::logistic(0.05);
        let x0: Vec<f64> = (0..6).map(|j| 0.1 * j as f64 - 0.2).collect();
        let pcd = Pcd::new(&m, &ds, x0.clone(), false).unwrap();
        let g = m.full_gradient(&ds, &x0).unwrap();
        for (j, gj) in g.iter().enumerate() {
            assert!((pcd.coordinate_gradient(&m, &ds, j) - gj).abs() < 1e-10);
        }
    }

    #[test]
    fn dca_squared_single_example_is_exact() {
        let ds = SparseDataset::from_dense(&[vec![2.0]], vec![3.0]).unwrap();
        let m = LossModel::squared(0.5);
        let mut dca = Dca::new(&m, &ds).unwrap();
        dca.dca_step(&m, &ds, 0).unwrap();
        // minimizer of ½(2x-3)² + ¼x²: 4x - 6 + 0.5x = 0
        assert!((dca.x[0] - 6.0 / 4.5).abs() < 1e-14);
        assert!(dca.duality_gap(&m, &ds).unwrap().abs() < 1e-12);
    }

    #[test]
    fn dca_requires_regularization() {
        let ds = SparseDataset::from_dense(&[vec![2.0]], vec![1.0]).unwrap();
        assert!(matches!(Dca::new(&LossModel::logistic(0.0), &ds), Err(Error::Unsupported(_))));
    }

    #[test]
    fn logistic_dual_root_residual() {
        for &(v, q, b0) in &[(0.3, 2.0, 0.0), (-5.0, 0.1, 0.5), (12.0, 50.0, 0.99), (-30.0, 1e-3, 0.2)] {
            let t = solve_logistic_dual(v, q, b0).unwrap();
            let r = t + v + q * (1.0 / (1.0 + (-t).exp()) - b0);
            assert!(r.abs() <= 1e-12, "v={v} q={q}: residual {r}");
        }
    }
}
