use crate::baselines::Afg;
use crate::dataset::SparseDataset;
use crate::error::{invalid, Error, Result};
use crate::losses::LossModel;
use crate::sag::{SagConfig, SagSolver};

/// Relative gradient-norm tolerance used when none is requested.
pub const DEFAULT_REFERENCE_TOL: f64 = 1e-12;

/// Converged methods must agree on the optimal value to this relative accuracy.
pub const AGREEMENT_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceOptimum {
    pub x_star: Vec<f64>,
    pub f_star: f64,
    pub grad_norm: f64,
    /// `(1/n) Σ ‖f_i'(x*)‖²`.
    pub sigma_sq: f64,
    /// Absolute gradient-norm target that was requested.
    pub tol: f64,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceOptions {
    /// Relative tolerance, scaled by `max(1, ‖g'(0)‖)`.
    pub rel_tol: f64,
    /// Effective-pass budget for each of the two methods.
    pub max_passes: f64,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        Self { rel_tol: DEFAULT_REFERENCE_TOL, max_passes: 20_000.0 }
    }
}

struct Candidate {
    x: Vec<f64>,
    f: f64,
    grad_norm: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Minimizes with line-search SAG and with restarted AFG, each until the
/// gradient norm reaches the target or the budget runs out.
///
/// Returns the best point found even when neither method converged
/// (`converged == false`); see [`compute_reference`] for the strict form.
pub fn compute_reference_partial(model: &LossModel, ds: &SparseDataset, opts: ReferenceOptions) -> Result<ReferenceOptimum> {
    if !(opts.rel_tol > 0.0) {
        return invalid(format!("reference tolerance must be positive, got {}", opts.rel_tol));
    }
    if ds.n() == 0 {
        return invalid("dataset has no examples");
    }
    let x0 = vec![0.0; ds.p()];
    let g0 = norm(&model.full_gradient(ds, &x0)?);
    let tol = opts.rel_tol * g0.max(1.0);

    let sag = run_sag_ls(model, ds, &x0, tol, opts.max_passes)?;
    let afg = run_restarted_afg(model, ds, &x0, tol, opts.max_passes)?;

    let converged: Vec<&Candidate> = [&sag, &afg].into_iter().filter(|c| c.grad_norm <= tol).collect();
    if let [a, b] = converged[..] {
        let scale = a.f.abs().max(b.f.abs());
        if (a.f - b.f).abs() > AGREEMENT_TOL * scale + 1e-20 {
            return Err(Error::InvalidArgument(format!(
                "reference methods disagree: {:.16e} vs {:.16e}",
                a.f, b.f
            )));
        }
    }
    let pool = if converged.is_empty() { vec![&sag, &afg] } else { converged };
    let best = pool.into_iter().min_by(|a, b| a.f.total_cmp(&b.f)).unwrap();
    Ok(ReferenceOptimum {
        sigma_sq: model.gradient_variance_at(ds, &best.x)?,
        x_star: best.x.clone(),
        f_star: best.f,
        grad_norm: best.grad_norm,
        tol,
        converged: best.grad_norm <= tol,
    })
}

/// Like [`compute_reference_partial`] but fails with
/// [`Error::BudgetExhausted`] when the tolerance is not reached.
pub fn compute_reference(model: &LossModel, ds: &SparseDataset, opts: ReferenceOptions) -> Result<ReferenceOptimum> {
    let r = compute_reference_partial(model, ds, opts)?;
    if !r.converged {
        return Err(Error::BudgetExhausted(format!(
            "reference gradient norm {:.3e} above {:.3e} after {} passes",
            r.grad_norm, r.tol, opts.max_passes
        )));
    }
    Ok(r)
}

fn run_sag_ls(model: &LossModel, ds: &SparseDataset, x0: &[f64], tol: f64, max_passes: f64) -> Result<Candidate> {
    let config = SagConfig { jit: !ds.is_dense(), ..SagConfig::default() };
    let mut solver = SagSolver::new(ds, *model, x0.to_vec(), config)?;
    let mut best = candidate(model, ds, x0.to_vec())?;
    let mut passes = 0.0;
    while best.grad_norm > tol && passes < max_passes {
        passes += 1.0;
        if solver.run_passes(passes).is_err() {
            break;
        }
        let c = candidate(model, ds, solver.x())?;
        if !c.f.is_finite() {
            break;
        }
        if c.grad_norm < best.grad_norm {
            best = c;
        }
    }
    Ok(best)
}

/// AFG that resets its momentum whenever the objective increases.
fn run_restarted_afg(model: &LossModel, ds: &SparseDataset, x0: &[f64], tol: f64, max_passes: f64) -> Result<Candidate> {
    let mut afg = Afg::new(x0.to_vec(), 1.0)?;
    let mut current = candidate(model, ds, x0.to_vec())?;
    let mut best_grad = current.grad_norm;
    let n = ds.n() as f64;
    let mut best = None;
    while current.grad_norm > tol && (afg.evals as f64 / n) < max_passes {
        if afg.afg_step(model, ds).is_err() {
            break;
        }
        let next = candidate(model, ds, afg.x.clone())?;
        if next.f > current.f {
            afg.t = 1.0;
            afg.z = afg.x.clone();
        }
        current = next;
        if current.grad_norm < best_grad {
            best_grad = current.grad_norm;
            best = Some(Candidate { x: current.x.clone(), f: current.f, grad_norm: current.grad_norm });
        }
    }
    Ok(match best {
        Some(b) if b.grad_norm < current.grad_norm => b,
        _ => current,
    })
}

fn candidate(model: &LossModel, ds: &SparseDataset, x: Vec<f64>) -> Result<Candidate> {
    let (f, g) = model.objective_and_gradient(ds, &x)?;
    Ok(Candidate { grad_norm: norm(&g), f, x })
}
