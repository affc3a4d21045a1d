use crate::dataset::SparseDataset;
use crate::error::{invalid, Error, Result};
use crate::losses::LossModel;

/// What each memory slot stores.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MemoryMode {
    /// One scalar `l_i'(a_iᵀx)` per example; `O(n)` storage.
    Scalar,
    /// A full `p`-vector per example; `O(np)` storage.
    Vector,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SagOptions {
    /// Divide the memory sum by the number of examples seen so far instead of `n`.
    pub reweight: bool,
    /// Apply the regularizer's gradient exactly; memory holds loss gradients only.
    pub exact_reg: bool,
    pub memory: MemoryMode,
}

impl Default for SagOptions {
    fn default() -> Self {
        Self { reweight: true, exact_reg: true, memory: MemoryMode::Scalar }
    }
}

impl SagOptions {
    /// Plain recursion: divisor `n`, regularizer inside each `f_i'`, vector memory.
    pub fn basic() -> Self {
        Self { reweight: false, exact_reg: false, memory: MemoryMode::Vector }
    }

    pub(crate) fn flags(&self) -> u32 {
        (self.reweight as u32) | ((self.exact_reg as u32) << 1) | (((self.memory == MemoryMode::Vector) as u32) << 2)
    }

    pub(crate) fn from_flags(flags: u32) -> Result<Self> {
        if flags & !0b111 != 0 {
            return Err(Error::Blob(format!("unknown mode flags {flags:#x}")));
        }
        Ok(Self {
            reweight: flags & 1 != 0,
            exact_reg: flags & 2 != 0,
            memory: if flags & 4 != 0 { MemoryMode::Vector } else { MemoryMode::Scalar },
        })
    }
}

/// Optimizer memory for the dense reference implementation.
///
/// `d` always equals the sum of the stored contributions over visited
/// examples: `Σ a_i y_i` in scalar mode, `Σ y_i` in vector mode.
#[derive(Clone, Debug, PartialEq)]
pub struct SagState {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub d: Vec<f64>,
    pub m: usize,
    pub visited: Vec<bool>,
    pub k: u64,
    pub options: SagOptions,
    n: usize,
    p: usize,
}

impl SagState {
    pub fn new(n: usize, x0: Vec<f64>, options: SagOptions) -> Self {
        let p = x0.len();
        let slots = match options.memory {
            MemoryMode::Scalar => n,
            MemoryMode::Vector => n * p,
        };
        Self {
            x: x0,
            y: vec![0.0; slots],
            d: vec![0.0; p],
            m: 0,
            visited: vec![false; n],
            k: 0,
            options,
            n,
            p,
        }
    }

    /// Memory initialized to the centered gradients `f_i'(x0) - g'(x0)`, every
    /// example marked visited. Needs vector memory without exact regularization.
    pub fn centered(model: &LossModel, ds: &SparseDataset, x0: Vec<f64>, options: SagOptions) -> Result<Self> {
        if options.memory != MemoryMode::Vector || options.exact_reg {
            return Err(Error::Unsupported(
                "centered initialization needs vector memory holding full f_i' gradients".into(),
            ));
        }
        let g = model.full_gradient(ds, &x0)?;
        let mut st = Self::new(ds.n(), x0, options);
        for i in 0..ds.n() {
            let gi = model.example_gradient(ds, i, &st.x);
            let slot = &mut st.y[i * st.p..(i + 1) * st.p];
            for ((s, a), b) in slot.iter_mut().zip(&gi).zip(&g) {
                *s = a - b;
            }
        }
        st.visited.iter_mut().for_each(|v| *v = true);
        st.m = ds.n();
        st.d = st.recompute_d(ds);
        Ok(st)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub(crate) fn check_compat(&self, model: &LossModel, ds: &SparseDataset) -> Result<()> {
        if ds.n() != self.n {
            return Err(Error::Dimension { expected: self.n, got: ds.n() });
        }
        if ds.p() != self.p {
            return Err(Error::Dimension { expected: self.p, got: ds.p() });
        }
        if self.options.memory == MemoryMode::Scalar && !self.options.exact_reg && model.lambda != 0.0 {
            return Err(Error::Unsupported(
                "scalar memory cannot hold the regularizer gradient; enable exact regularization".into(),
            ));
        }
        Ok(())
    }

    /// `a_iᵀx` at the current iterate.
    pub fn predict(&self, ds: &SparseDataset, i: usize) -> f64 {
        ds.row(i).dot(&self.x)
    }

    /// One iteration refreshing slot `i` and moving `x`.
    pub fn step(&mut self, model: &LossModel, ds: &SparseDataset, i: usize, alpha: f64) -> Result<()> {
        self.check_compat(model, ds)?;
        if i >= self.n {
            return Err(Error::IndexOutOfRange { index: i, len: self.n });
        }
        let u = self.predict(ds, i);
        self.update(model, ds, i, u, alpha);
        Ok(())
    }

    /// Memory and iterate update given a precomputed `u = a_iᵀx`.
    pub(crate) fn update(&mut self, model: &LossModel, ds: &SparseDataset, i: usize, u: f64, alpha: f64) {
        let row = ds.row(i);
        let s = model.point_deriv(u, ds.label(i));
        if !self.visited[i] {
            self.visited[i] = true;
            self.m += 1;
        }
        match self.options.memory {
            MemoryMode::Scalar => {
                row.axpy(s - self.y[i], &mut self.d);
                self.y[i] = s;
            }
            MemoryMode::Vector => {
                let p = self.p;
                let slot = &mut self.y[i * p..(i + 1) * p];
                for (dj, yj) in self.d.iter_mut().zip(slot.iter_mut()) {
                    *dj -= *yj;
                    *yj = 0.0;
                }
                if !self.options.exact_reg && model.lambda != 0.0 {
                    for (yj, xj) in slot.iter_mut().zip(&self.x) {
                        *yj = model.lambda * xj;
                    }
                }
                row.axpy(s, slot);
                for (dj, yj) in self.d.iter_mut().zip(slot.iter()) {
                    *dj += *yj;
                }
            }
        }
        let div = if self.options.reweight { self.m } else { self.n } as f64;
        let shrink = if self.options.exact_reg { 1.0 - alpha * model.lambda } else { 1.0 };
        let scale = alpha / div;
        for (xj, dj) in self.x.iter_mut().zip(&self.d) {
            *xj = shrink * *xj - scale * dj;
        }
        self.k += 1;
    }

    /// Sum of stored contributions, recomputed from the memory slots.
    pub fn recompute_d(&self, ds: &SparseDataset) -> Vec<f64> {
        let mut d = vec![0.0; self.p];
        for i in (0..self.n).filter(|&i| self.visited[i]) {
            match self.options.memory {
                MemoryMode::Scalar => ds.row(i).axpy(self.y[i], &mut d),
                MemoryMode::Vector => {
                    for (dj, yj) in d.iter_mut().zip(&self.y[i * self.p..(i + 1) * self.p]) {
                        *dj += yj;
                    }
                }
            }
        }
        d
    }

    /// Memory slot `i` as a `p`-vector contribution.
    pub fn slot(&self, ds: &SparseDataset, i: usize) -> Vec<f64> {
        match self.options.memory {
            MemoryMode::Scalar => {
                let mut v = vec![0.0; self.p];
                ds.row(i).axpy(self.y[i], &mut v);
                v
            }
            MemoryMode::Vector => self.y[i * self.p..(i + 1) * self.p].to_vec(),
        }
    }

    /// Subtracts `d/m` from every visited slot so the memory sums to zero.
    pub fn center(&mut self, ds: &SparseDataset) -> Result<()> {
        if self.options.memory != MemoryMode::Vector {
            return Err(Error::Unsupported("centering needs vector memory".into()));
        }
        if self.m == 0 {
            return Ok(());
        }
        let mean: Vec<f64> = self.d.iter().map(|v| v / self.m as f64).collect();
        for i in (0..self.n).filter(|&i| self.visited[i]) {
            for (yj, mj) in self.y[i * self.p..(i + 1) * self.p].iter_mut().zip(&mean) {
                *yj -= mj;
            }
        }
        self.d = self.recompute_d(ds);
        Ok(())
    }

    pub(crate) fn from_parts(
        n: usize,
        p: usize,
        x: Vec<f64>,
        y: Vec<f64>,
        d: Vec<f64>,
        visited: Vec<bool>,
        k: u64,
        options: SagOptions,
    ) -> Result<Self> {
        let slots = match options.memory {
            MemoryMode::Scalar => n,
            MemoryMode::Vector => n * p,
        };
        if x.len() != p || d.len() != p || y.len() != slots || visited.len() != n {
            return invalid("inconsistent state component lengths");
        }
        let m = visited.iter().filter(|&&v| v).count();
        Ok(Self { x, y, d, m, visited, k, options, n, p })
    }
}

/// Free-function form of [`SagState::step`].
pub fn sag_step(state: &mut SagState, model: &LossModel, ds: &SparseDataset, i: usize, alpha: f64) -> Result<()> {
    state.step(model, ds, i, alpha)
}
