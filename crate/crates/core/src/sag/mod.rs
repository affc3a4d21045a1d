//! Stochastic average gradient and its variants.

mod dense;
mod jit;
mod linesearch;
mod minibatch;
mod warmstart;

pub use dense::{sag_step, MemoryMode, SagOptions, SagState};
pub use jit::{finalize_jit, sag_step_jit, JitState};
pub use linesearch::{line_search_scalar, line_search_update, LineSearch, SKIP_THRESHOLD};
pub use minibatch::{batch_step_size, partition_batches, BatchStepRule, MiniBatchSag};
pub use warmstart::{export_state, import_state};

use crate::dataset::SparseDataset;
use crate::error::{invalid, Error, Result};
use crate::losses::{LipschitzInfo, LossModel};
use crate::samplers::{DiscreteSampler, FenwickTree, Rng};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepSizePolicy {
    Constant(f64),
    OneOver16L,
    OneOverL,
    /// `2 / (L + nμ)` with `μ = λ`.
    TwoOverLPlusNMu,
    /// Backtracking estimate of `L` started at the given value.
    LineSearch(f64),
}

impl StepSizePolicy {
    /// Step for the non-adaptive policies; `None` for line search.
    pub fn fixed_step(&self, lips: &LipschitzInfo, n: usize) -> Option<f64> {
        match *self {
            Self::Constant(a) => Some(a),
            Self::OneOver16L => Some(1.0 / (16.0 * lips.l_max)),
            Self::OneOverL => Some(1.0 / lips.l_max),
            Self::TwoOverLPlusNMu => Some(2.0 / (lips.l_max + n as f64 * lips.mu_lower)),
            Self::LineSearch(_) => None,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Self::Constant(a) if !(a > 0.0 && a.is_finite()) => invalid(format!("step size must be positive, got {a}")),
            Self::LineSearch(l0) if !(l0 > 0.0 && l0.is_finite()) => {
                invalid(format!("initial Lipschitz estimate must be positive, got {l0}"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SamplingPolicy {
    Uniform,
    /// Fixed pass order over a seeded permutation (the incremental aggregated gradient method).
    Cyclic,
    /// `P(i) ∝ L_i + c`, with `c = L_mean` when not given.
    LipschitzFixed(Option<f64>),
    /// Unseen-first sampling with per-example Lipschitz estimates.
    LipschitzAdaptive,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SagConfig {
    pub options: SagOptions,
    pub step: StepSizePolicy,
    pub sampling: SamplingPolicy,
    /// Use the lazy sparse engine (scalar memory, exact regularization only).
    pub jit: bool,
    /// Maintain the running average of iterates (dense engine only).
    pub average: bool,
    pub seed: u64,
}

impl Default for SagConfig {
    fn default() -> Self {
        Self {
            options: SagOptions::default(),
            step: StepSizePolicy::LineSearch(1.0),
            sampling: SamplingPolicy::Uniform,
            jit: false,
            average: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
enum Engine {
    Dense(SagState),
    Jit(JitState),
}

impl Engine {
    fn predict(&mut self, ds: &SparseDataset, i: usize) -> f64 {
        match self {
            Engine::Dense(s) => s.predict(ds, i),
            Engine::Jit(s) => s.predict(ds, i),
        }
    }

    fn update(&mut self, model: &LossModel, ds: &SparseDataset, i: usize, u: f64, alpha: f64) -> Result<()> {
        match self {
            Engine::Dense(s) => {
                s.update(model, ds, i, u, alpha);
                Ok(())
            }
            Engine::Jit(s) => s.update(model, ds, i, u, alpha),
        }
    }

    fn visited(&self) -> &[bool] {
        match self {
            Engine::Dense(s) => &s.visited,
            Engine::Jit(s) => &s.visited,
        }
    }
}

/// Per-example Lipschitz estimates for the adaptive scheme.
#[derive(Clone, Debug)]
struct AdaptiveEstimates {
    /// Loss-part estimates; start at the initial line-search value.
    li: Vec<f64>,
    /// Weight `L_i + λ` for seen examples, zero otherwise.
    tree: FenwickTree,
    seen: Vec<usize>,
    unseen: Vec<usize>,
    unseen_pos: Vec<usize>,
}

impl AdaptiveEstimates {
    fn new(n: usize, l0: f64, lambda: f64, visited: &[bool]) -> Self {
        let mut est = Self {
            li: vec![l0; n],
            tree: FenwickTree::zeros(n),
            seen: Vec::new(),
            unseen: (0..n).collect(),
            unseen_pos: (0..n).collect(),
        };
        for (i, _) in visited.iter().enumerate().filter(|(_, &v)| v) {
            est.mark_seen(i);
            est.tree.set(i, l0 + lambda);
        }
        est
    }

    fn mark_seen(&mut self, i: usize) {
        let pos = self.unseen_pos[i];
        if pos == usize::MAX {
            return;
        }
        let last = *self.unseen.last().unwrap();
        self.unseen.swap_remove(pos);
        if last != i {
            self.unseen_pos[last] = pos;
        }
        self.unseen_pos[i] = usize::MAX;
        self.seen.push(i);
    }

    fn draw(&self, rng: &mut Rng) -> usize {
        let n = self.li.len();
        let m = self.seen.len();
        if m == 0 || (m < n && rng.below(n) >= m) {
            return self.unseen[rng.below(self.unseen.len())];
        }
        // P(i) ∝ (L_i + λ) + mean over seen of (L_j + λ): an even mixture
        // of uniform-over-seen and proportional-to-weight.
        if rng.uniform() < 0.5 {
            self.seen[rng.below(m)]
        } else {
            self.tree.sample(rng)
        }
    }
}

#[derive(Clone, Debug)]
enum IndexRule {
    Uniform,
    Cyclic { order: Vec<usize>, pos: usize },
    Fixed(DiscreteSampler),
    Adaptive(AdaptiveEstimates),
}

/// A configured SAG run over one dataset.
#[derive(Clone, Debug)]
pub struct SagSolver<'a> {
    ds: &'a SparseDataset,
    model: LossModel,
    config: SagConfig,
    engine: Engine,
    rule: IndexRule,
    rng: Rng,
    lips: LipschitzInfo,
    fixed_alpha: Option<f64>,
    l_est: f64,
    evals: u64,
    iters: u64,
    avg: Option<Vec<f64>>,
    last_alpha: f64,
}

impl<'a> SagSolver<'a> {
    pub fn new(ds: &'a SparseDataset, model: LossModel, x0: Vec<f64>, config: SagConfig) -> Result<Self> {
        let engine = if config.jit {
            if config.options.memory != MemoryMode::Scalar || !config.options.exact_reg {
                return Err(Error::Unsupported(
                    "the sparse engine needs scalar memory with exact regularization".into(),
                ));
            }
            Engine::Jit(JitState::new(ds.n(), x0, config.options.reweight))
        } else {
            Engine::Dense(SagState::new(ds.n(), x0, config.options))
        };
        Self::with_engine(ds, model, config, engine, Rng::new(config.seed).fork(1))
    }

    /// Resumes from a warm-start blob. Uses the stored rng stream when present.
    pub fn from_blob(ds: &'a SparseDataset, model: LossModel, blob: &[u8], center: bool, config: SagConfig) -> Result<Self> {
        let (state, rng) = import_state(blob, ds, center)?;
        let mut config = config;
        config.options = state.options;
        let engine = if config.jit { Engine::Jit(JitState::from_sag_state(state)?) } else { Engine::Dense(state) };
        let rng = rng.unwrap_or_else(|| Rng::new(config.seed).fork(1));
        Self::with_engine(ds, model, config, engine, rng)
    }

    fn with_engine(ds: &'a SparseDataset, model: LossModel, config: SagConfig, engine: Engine, rng: Rng) -> Result<Self> {
        config.step.validate()?;
        if ds.n() == 0 {
            return invalid("dataset has no examples");
        }
        let dim = match &engine {
            Engine::Dense(s) => {
                s.check_compat(&model, ds)?;
                s.p()
            }
            Engine::Jit(s) => s.p(),
        };
        if dim != ds.p() {
            return Err(Error::Dimension { expected: ds.p(), got: dim });
        }
        if config.average && config.jit {
            return Err(Error::Unsupported("iterate averaging needs the dense engine".into()));
        }
        let n = ds.n();
        let lips = model.lipschitz_constants(ds);
        let l0 = match config.step {
            StepSizePolicy::LineSearch(l0) => l0,
            _ => 1.0,
        };
        let (rule, fixed_alpha) = match config.sampling {
            SamplingPolicy::Uniform => (IndexRule::Uniform, config.step.fixed_step(&lips, n)),
            SamplingPolicy::Cyclic => {
                let order = rng.fork(2).permutation(n);
                (IndexRule::Cyclic { order, pos: 0 }, config.step.fixed_step(&lips, n))
            }
            SamplingPolicy::LipschitzFixed(c) => {
                let c = c.unwrap_or(lips.l_mean);
                if !(c >= 0.0) {
                    return invalid(format!("sampling offset must be nonnegative, got {c}"));
                }
                let w: Vec<f64> = lips.per_example.iter().map(|l| l + c).collect();
                let alpha = match config.step {
                    StepSizePolicy::Constant(a) => a,
                    _ => (lips.l_max + c) / (lips.l_max * (lips.l_mean + c)),
                };
                (IndexRule::Fixed(DiscreteSampler::new(&w)?), Some(alpha))
            }
            SamplingPolicy::LipschitzAdaptive => {
                let est = AdaptiveEstimates::new(n, l0, model.lambda, engine.visited());
                let alpha = match config.step {
                    StepSizePolicy::Constant(a) => Some(a),
                    _ => None,
                };
                (IndexRule::Adaptive(est), alpha)
            }
        };
        let avg = config.average.then(|| vec![0.0; ds.p()]);
        let solver = Self {
            ds,
            model,
            config,
            engine,
            rule,
            rng,
            lips,
            fixed_alpha,
            l_est: l0,
            evals: 0,
            iters: 0,
            avg,
            last_alpha: 0.0,
        };
        if let Some(a) = solver.fixed_alpha {
            solver.check_alpha(a)?;
        }
        Ok(solver)
    }

    fn check_alpha(&self, alpha: f64) -> Result<()> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return invalid(format!("step size must be positive, got {alpha}"));
        }
        if self.config.options.exact_reg && alpha * self.model.lambda >= 1.0 {
            return invalid(format!("step {alpha} times lambda {} must be below 1", self.model.lambda));
        }
        Ok(())
    }

    pub fn lipschitz(&self) -> &LipschitzInfo {
        &self.lips
    }

    /// Single-example gradient evaluations so far, line-search trials included.
    pub fn evals(&self) -> u64 {
        self.evals
    }

    pub fn iterations(&self) -> u64 {
        self.iters
    }

    pub fn effective_passes(&self) -> f64 {
        self.evals as f64 / self.ds.n() as f64
    }

    /// Current Lipschitz estimate of the line search (initial value otherwise).
    pub fn lipschitz_estimate(&self) -> f64 {
        self.l_est
    }

    pub fn last_step_size(&self) -> f64 {
        self.last_alpha
    }

    pub fn seen(&self) -> usize {
        match &self.engine {
            Engine::Dense(s) => s.m,
            Engine::Jit(s) => s.m,
        }
    }

    pub fn x(&self) -> Vec<f64> {
        match &self.engine {
            Engine::Dense(s) => s.x.clone(),
            Engine::Jit(s) => s.finalize(),
        }
    }

    /// Average of the iterates `x^0, …, x^{k-1}`, when averaging is enabled.
    pub fn averaged_x(&self) -> Option<Vec<f64>> {
        let k = self.iters.max(1) as f64;
        self.avg.as_ref().map(|a| a.iter().map(|v| v / k).collect())
    }

    pub fn dense_state(&self) -> SagState {
        match &self.engine {
            Engine::Dense(s) => s.clone(),
            Engine::Jit(s) => s.to_sag_state(),
        }
    }

    pub fn rng(&self) -> &Rng {
        &self.rng
    }

    /// Serializes the memory together with the sampling stream.
    pub fn export(&self) -> Vec<u8> {
        export_state(&self.dense_state(), Some(&self.rng))
    }

    fn next_index(&mut self) -> usize {
        let n = self.ds.n();
        match &mut self.rule {
            IndexRule::Uniform => self.rng.below(n),
            IndexRule::Cyclic { order, pos } => {
                let i = order[*pos];
                *pos = (*pos + 1) % n;
                i
            }
            IndexRule::Fixed(s) => s.sample(&mut self.rng),
            IndexRule::Adaptive(est) => est.draw(&mut self.rng),
        }
    }

    pub fn step(&mut self) -> Result<()> {
        let i = self.next_index();
        if let (Some(avg), Engine::Dense(s)) = (&mut self.avg, &self.engine) {
            avg.iter_mut().zip(&s.x).for_each(|(a, x)| *a += x);
        }
        let u = self.engine.predict(self.ds, i);
        let n = self.ds.n();
        let lambda = self.model.lambda;
        let row = self.ds.row(i);
        let (b, norm_sq) = (self.ds.label(i), row.norm_sq());
        let decay = 0.5f64.powf(1.0 / n as f64);
        let alpha = match (&mut self.rule, self.fixed_alpha) {
            (IndexRule::Adaptive(est), fixed) => {
                self.l_est *= decay;
                let g = line_search_scalar(self.l_est, &self.model, u, b, norm_sq)?;
                self.l_est = g.l;
                let loc = line_search_scalar(est.li[i] / 2.0, &self.model, u, b, norm_sq)?;
                self.evals += g.evals + loc.evals;
                est.li[i] = loc.l;
                est.mark_seen(i);
                est.tree.set(i, loc.l + lambda);
                let m = est.seen.len() as f64;
                let l_max = self.l_est + lambda;
                let l_mean = est.tree.total() / m;
                fixed.unwrap_or(((n as f64 - m) / n as f64) / l_max + (m / n as f64) * (0.5 / l_max + 0.5 / l_mean))
            }
            (_, Some(a)) => a,
            (_, None) => {
                self.l_est *= decay;
                let g = line_search_scalar(self.l_est, &self.model, u, b, norm_sq)?;
                self.l_est = g.l;
                self.evals += g.evals;
                1.0 / (g.l + lambda)
            }
        };
        self.check_alpha(alpha)?;
        self.engine.update(&self.model, self.ds, i, u, alpha)?;
        self.evals += 1;
        self.iters += 1;
        self.last_alpha = alpha;
        Ok(())
    }

    /// Steps until the effective-pass count reaches `passes`.
    pub fn run_passes(&mut self, passes: f64) -> Result<()> {
        while self.effective_passes() < passes {
            self.step()?;
        }
        Ok(())
    }
}
