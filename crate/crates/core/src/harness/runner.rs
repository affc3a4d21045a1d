use std::time::Instant;

use super::config::{ExperimentConfig, Method};
use super::reference::{compute_reference_partial, ReferenceOptimum, ReferenceOptions, DEFAULT_REFERENCE_TOL};
use super::trace::{Trace, TraceRow};
use crate::baselines::{fg_step, pcd_effective_passes, Afg, Dca, Pcd, Sg};
use crate::dataset::SparseDataset;
use crate::error::{invalid, Error, Result};
use crate::losses::LossModel;
use crate::sag::{batch_step_size, partition_batches, MiniBatchSag, SagConfig, SagSolver, SamplingPolicy, StepSizePolicy};
use crate::samplers::Rng;

/// Objective values above this count as divergence.
const DIVERGENCE_LIMIT: f64 = 1e300;

/// One optimizer behind a uniform stepping interface.
trait Driver {
    fn step(&mut self) -> Result<()>;
    fn passes(&self) -> f64;
    /// The point whose objective is reported.
    fn x(&self) -> Vec<f64>;
}

struct SagDriver<'a>(SagSolver<'a>);

impl Driver for SagDriver<'_> {
    fn step(&mut self) -> Result<()> {
        self.0.step()
    }
    fn passes(&self) -> f64 {
        self.0.effective_passes()
    }
    fn x(&self) -> Vec<f64> {
        self.0.x()
    }
}

struct MiniBatchDriver<'a> {
    ds: &'a SparseDataset,
    model: LossModel,
    state: MiniBatchSag,
    alpha: f64,
    rng: Rng,
    evals: u64,
}

impl Driver for MiniBatchDriver<'_> {
    fn step(&mut self) -> Result<()> {
        let b = self.rng.below(self.state.num_slots());
        self.evals += self.state.batches()[b].len() as u64;
        self.state.sag_minibatch_step(&self.model, self.ds, b, self.alpha)
    }
    fn passes(&self) -> f64 {
        self.evals as f64 / self.ds.n() as f64
    }
    fn x(&self) -> Vec<f64> {
        self.state.x.clone()
    }
}

struct FgDriver<'a> {
    ds: &'a SparseDataset,
    model: LossModel,
    x: Vec<f64>,
    alpha: f64,
    iters: u64,
}

impl Driver for FgDriver<'_> {
    fn step(&mut self) -> Result<()> {
        fg_step(&mut self.x, &self.model, self.ds, self.alpha)?;
        self.iters += 1;
        Ok(())
    }
    fn passes(&self) -> f64 {
        self.iters as f64
    }
    fn x(&self) -> Vec<f64> {
        self.x.clone()
    }
}

struct AfgDriver<'a> {
    ds: &'a SparseDataset,
    model: LossModel,
    afg: Afg,
}

impl Driver for AfgDriver<'_> {
    fn step(&mut self) -> Result<()> {
        self.afg.afg_step(&self.model, self.ds)
    }
    fn passes(&self) -> f64 {
        self.afg.evals as f64 / self.ds.n() as f64
    }
    fn x(&self) -> Vec<f64> {
        self.afg.x.clone()
    }
}

struct SgDriver<'a> {
    ds: &'a SparseDataset,
    model: LossModel,
    sg: Sg,
    alpha: f64,
    rng: Rng,
    averaged: bool,
}

impl Driver for SgDriver<'_> {
    fn step(&mut self) -> Result<()> {
        let i = self.rng.below(self.ds.n());
        self.sg.sg_step(&self.model, self.ds, i, self.alpha)
    }
    fn passes(&self) -> f64 {
        self.sg.k as f64 / self.ds.n() as f64
    }
    fn x(&self) -> Vec<f64> {
        if self.averaged { self.sg.avg.clone() } else { self.sg.x.clone() }
    }
}

struct PcdDriver<'a> {
    ds: &'a SparseDataset,
    model: LossModel,
    pcd: Pcd,
    rng: Rng,
}

impl Driver for PcdDriver<'_> {
    fn step(&mut self) -> Result<()> {
        let j = self.pcd.sample_coordinate(&mut self.rng);
        self.pcd.pcd_step(&self.model, self.ds, j)
    }
    fn passes(&self) -> f64 {
        pcd_effective_passes(self.pcd.iters, self.ds.n(), self.ds.p())
    }
    fn x(&self) -> Vec<f64> {
        self.pcd.x.clone()
    }
}

struct DcaDriver<'a> {
    ds: &'a SparseDataset,
    model: LossModel,
    dca: Dca,
    rng: Rng,
}

impl Driver for DcaDriver<'_> {
    fn step(&mut self) -> Result<()> {
        let i = self.rng.below(self.ds.n());
        self.dca.dca_step(&self.model, self.ds, i)
    }
    fn passes(&self) -> f64 {
        self.dca.effective_passes(self.ds.n())
    }
    fn x(&self) -> Vec<f64> {
        self.dca.x.clone()
    }
}

/// Step used when the configuration does not give one: `1/L` with `L` the
/// largest per-example Lipschitz constant.
pub fn default_alpha(model: &LossModel, ds: &SparseDataset) -> f64 {
    1.0 / model.lipschitz_constants(ds).l_max
}

fn build_driver<'a>(config: &ExperimentConfig, ds: &'a SparseDataset) -> Result<Box<dyn Driver + 'a>> {
    let model = config.model;
    let p = ds.p();
    let x0 = vec![0.0; p];
    let rng = Rng::new(config.seed).fork(1);
    let alpha = config.alpha.unwrap_or_else(|| default_alpha(&model, ds));
    let jit = config.jit.unwrap_or(!ds.is_dense());
    let sag = |step: StepSizePolicy, sampling: SamplingPolicy| -> Result<Box<dyn Driver + 'a>> {
        let cfg = SagConfig { step, sampling, jit, seed: config.seed, ..SagConfig::default() };
        Ok(Box::new(SagDriver(SagSolver::new(ds, model, x0.clone(), cfg)?)))
    };
    let given = config.alpha.map(StepSizePolicy::Constant);
    Ok(match config.method {
        Method::Sag => sag(StepSizePolicy::Constant(alpha), SamplingPolicy::Uniform)?,
        Method::SagLs => sag(given.unwrap_or(StepSizePolicy::LineSearch(1.0)), SamplingPolicy::Uniform)?,
        Method::SagLipschitz => {
            sag(given.unwrap_or(StepSizePolicy::OneOverL), SamplingPolicy::LipschitzFixed(None))?
        }
        Method::SagLsLipschitz => {
            sag(given.unwrap_or(StepSizePolicy::LineSearch(1.0)), SamplingPolicy::LipschitzAdaptive)?
        }
        Method::Iag => sag(StepSizePolicy::Constant(alpha), SamplingPolicy::Cyclic)?,
        Method::SagMinibatch => {
            let mut rng = rng;
            let batches = partition_batches(ds.n(), config.batch_size, &mut rng)?;
            let alpha = match config.alpha {
                Some(a) => a,
                None => batch_step_size(&model, ds, &batches, config.batch_rule)?,
            };
            let state = MiniBatchSag::new(ds.n(), x0, batches, true, true)?;
            Box::new(MiniBatchDriver { ds, model, state, alpha, rng, evals: 0 })
        }
        Method::Fg => Box::new(FgDriver { ds, model, x: x0, alpha, iters: 0 }),
        Method::Afg => Box::new(AfgDriver { ds, model, afg: Afg::new(x0, 1.0)? }),
        Method::Sg | Method::Asg => Box::new(SgDriver {
            ds,
            model,
            sg: Sg::new(x0),
            alpha,
            rng,
            averaged: config.method == Method::Asg,
        }),
        Method::Pcd | Method::PcdL => {
            let pcd = Pcd::new(&model, ds, x0, config.method == Method::PcdL)?;
            Box::new(PcdDriver { ds, model, pcd, rng })
        }
        Method::Dca => Box::new(DcaDriver { ds, model, dca: Dca::new(&model, ds)?, rng }),
    })
}

/// Reference optimum for the configured problem, with the configured tolerance.
pub fn reference_for(config: &ExperimentConfig, ds: &SparseDataset) -> Result<ReferenceOptimum> {
    let opts = ReferenceOptions {
        rel_tol: config.reference_tol.unwrap_or(DEFAULT_REFERENCE_TOL),
        ..ReferenceOptions::default()
    };
    compute_reference_partial(&config.model, ds, opts)
}

/// Loads the data, computes the reference optimum and runs the configured method.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Trace> {
    config.validate()?;
    let ds = config.data.load()?;
    let reference = reference_for(config, &ds)?;
    run_on(config, &ds, Some(&reference))
}

/// Runs the configured method on `ds`. Suboptimality is `NaN` without a reference.
///
/// A row is recorded at the start, each time the effective-pass count
/// crosses a multiple of the stride, and at the end. A non-finite or
/// exploding objective stops the run with an infinite final row.
pub fn run_on(config: &ExperimentConfig, ds: &SparseDataset, reference: Option<&ReferenceOptimum>) -> Result<Trace> {
    config.validate()?;
    let mut driver = build_driver(config, ds)?;
    let f_star = reference.map(|r| r.f_star);
    let start = Instant::now();
    let mut trace = Trace::new(config.method.id());
    let record = |trace: &mut Trace, passes: f64, x: &[f64]| -> Result<bool> {
        let (f, g) = config.model.objective_and_gradient(ds, x)?;
        let ms = if config.timing { start.elapsed().as_millis() as u64 } else { 0 };
        let finite = f.is_finite() && f < DIVERGENCE_LIMIT;
        let row = if finite {
            TraceRow {
                passes,
                objective: f,
                subopt: f_star.map_or(f64::NAN, |fs| f - fs),
                grad_norm: g.iter().map(|v| v * v).sum::<f64>().sqrt(),
                ms,
            }
        } else {
            TraceRow { passes, objective: f64::INFINITY, subopt: f64::INFINITY, grad_norm: f64::INFINITY, ms }
        };
        trace.rows.push(row);
        trace.diverged |= !finite;
        Ok(finite)
    };
    record(&mut trace, 0.0, &driver.x())?;
    let mut next = config.stride;
    loop {
        let passes = driver.passes();
        if passes >= config.passes {
            break;
        }
        match driver.step() {
            Ok(()) => {}
            Err(Error::NonFinite(_)) => {
                let passes = driver.passes().max(passes + f64::EPSILON);
                trace.rows.push(TraceRow {
                    passes,
                    objective: f64::INFINITY,
                    subopt: f64::INFINITY,
                    grad_norm: f64::INFINITY,
                    ms: if config.timing { start.elapsed().as_millis() as u64 } else { 0 },
                });
                trace.diverged = true;
                return Ok(trace);
            }
            Err(e) => return Err(e),
        }
        let passes = driver.passes();
        if passes >= next || passes >= config.passes {
            if !record(&mut trace, passes, &driver.x())? {
                return Ok(trace);
            }
            while next <= passes {
                next += config.stride;
            }
        }
    }
    Ok(trace)
}

/// Powers of ten from 10⁻³/L to 10³/L.
pub fn default_alpha_grid(l_max: f64) -> Vec<f64> {
    (-3..=3).map(|k| 10f64.powi(k) / l_max).collect()
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    /// Best step by final suboptimality; `None` when every run diverged.
    pub best_alpha: Option<f64>,
    pub traces: Vec<(f64, Trace)>,
    /// The best step sits at an end of the grid, so the grid may be too narrow.
    pub endpoint_warning: bool,
}

fn rejected_step(label: &str) -> Trace {
    let mut t = Trace::new(label);
    t.rows.push(TraceRow {
        passes: 0.0,
        objective: f64::INFINITY,
        subopt: f64::INFINITY,
        grad_norm: f64::INFINITY,
        ms: 0,
    });
    t.diverged = true;
    t
}

/// Runs one experiment per step size and keeps the one with the smallest
/// final suboptimality. Diverged runs are never selected; ties go to the
/// smaller step.
pub fn grid_sweep(
    config: &ExperimentConfig,
    ds: &SparseDataset,
    reference: Option<&ReferenceOptimum>,
    grid: &[f64],
) -> Result<SweepResult> {
    if !config.method.uses_alpha() {
        return invalid(format!("method {} has no step size to sweep", config.method));
    }
    if grid.is_empty() {
        return invalid("empty step-size grid");
    }
    if let Some(a) = grid.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
        return invalid(format!("step sizes must be positive, got {a}"));
    }
    config.validate()?;
    let mut alphas = grid.to_vec();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    let mut traces = Vec::with_capacity(alphas.len());
    for &a in &alphas {
        let cfg = ExperimentConfig { alpha: Some(a), ..config.clone() };
        let label = format!("{}(alpha={a:e})", config.method);
        let mut trace = match run_on(&cfg, ds, reference) {
            Ok(t) => t,
            // a step the method refuses (e.g. αλ ≥ 1 with exact regularization) counts as divergent
            Err(Error::InvalidArgument(_)) => rejected_step(&label),
            Err(e) => return Err(e),
        };
        trace.label = label;
        traces.push((a, trace));
    }
    let mut best: Option<(usize, f64)> = None;
    for (idx, (_, t)) in traces.iter().enumerate() {
        let score = t.final_score();
        if !score.is_finite() {
            continue;
        }
        if best.is_none_or(|(_, s)| score < s) {
            best = Some((idx, score));
        }
    }
    let endpoint_warning = alphas.len() > 1 && best.is_some_and(|(idx, _)| idx == 0 || idx == alphas.len() - 1);
    Ok(SweepResult { best_alpha: best.map(|(idx, _)| alphas[idx]), traces, endpoint_warning })
}
