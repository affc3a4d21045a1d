use crate::dataset::SparseDataset;
use crate::error::{invalid, Error, Result};
use crate::losses::LossModel;

const KAPPA_LO: f64 = 1.0 / (1u64 << 50) as f64;
const KAPPA_HI: f64 = (1u64 << 50) as f64;

/// Sparse SAG with scalar memory and exact ℓ2 regularization.
///
/// The iterate is kept as `x = κ z`. Coordinates outside the current
/// support are not touched; their pending updates are folded in from the
/// cumulative step sums `s` when they are next read.
#[derive(Clone, Debug)]
pub struct JitState {
    pub z: Vec<f64>,
    pub kappa: f64,
    pub y: Vec<f64>,
    pub d: Vec<f64>,
    pub visited: Vec<bool>,
    pub m: usize,
    pub k: u64,
    pub reweight: bool,
    /// `s[t]` is the total scaled step taken before local iteration `t`.
    s: Vec<f64>,
    /// Local iteration at which each coordinate was last brought current.
    last: Vec<usize>,
    cap: usize,
    renormalizations: u64,
}

impl JitState {
    pub fn new(n: usize, x0: Vec<f64>, reweight: bool) -> Self {
        let p = x0.len();
        Self {
            z: x0,
            kappa: 1.0,
            y: vec![0.0; n],
            d: vec![0.0; p],
            visited: vec![false; n],
            m: 0,
            k: 0,
            reweight,
            s: vec![0.0],
            last: vec![0; p],
            cap: (4 * p).max(1 << 16),
            renormalizations: 0,
        }
    }

    /// Rebuilds an engine from a dense iterate and scalar memory.
    pub fn from_dense(x: Vec<f64>, y: Vec<f64>, d: Vec<f64>, visited: Vec<bool>, k: u64, reweight: bool) -> Result<Self> {
        if d.len() != x.len() || y.len() != visited.len() {
            return invalid("inconsistent state component lengths");
        }
        let mut st = Self::new(y.len(), x, reweight);
        st.m = visited.iter().filter(|&&v| v).count();
        st.y = y;
        st.d = d;
        st.visited = visited;
        st.k = k;
        Ok(st)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.z.len()
    }

    pub fn renormalizations(&self) -> u64 {
        self.renormalizations
    }

    fn local(&self) -> usize {
        self.s.len() - 1
    }

    #[inline]
    fn catch_up(&mut self, j: usize) {
        let t = self.local();
        let lj = self.last[j];
        if lj != t {
            self.z[j] -= (self.s[t] - self.s[lj]) * self.d[j];
            self.last[j] = t;
        }
    }

    /// Brings the support of row `i` current and returns `a_iᵀx`.
    pub fn predict(&mut self, ds: &SparseDataset, i: usize) -> f64 {
        let row = ds.row(i);
        let mut dot = 0.0;
        for (&j, &a) in row.indices.iter().zip(row.values) {
            self.catch_up(j);
            dot += a * self.z[j];
        }
        self.kappa * dot
    }

    /// Memory update and lazy iterate move; `predict(ds, i)` must have been
    /// called at the current iterate to produce `u`.
    pub fn update(&mut self, model: &LossModel, ds: &SparseDataset, i: usize, u: f64, alpha: f64) -> Result<()> {
        let shrink = 1.0 - alpha * model.lambda;
        if shrink <= 0.0 {
            return invalid(format!("step {alpha} times lambda {} must be below 1", model.lambda));
        }
        if !self.visited[i] {
            self.visited[i] = true;
            self.m += 1;
        }
        let s_new = model.point_deriv(u, ds.label(i));
        ds.row(i).axpy(s_new - self.y[i], &mut self.d);
        self.y[i] = s_new;
        self.kappa *= shrink;
        let div = if self.reweight { self.m } else { self.n() } as f64;
        let last = self.s[self.local()];
        self.s.push(last + alpha / (self.kappa * div));
        self.k += 1;
        if !(KAPPA_LO..=KAPPA_HI).contains(&self.kappa.abs()) || self.s.len() > self.cap {
            self.renormalize();
        }
        Ok(())
    }

    pub fn step(&mut self, model: &LossModel, ds: &SparseDataset, i: usize, alpha: f64) -> Result<()> {
        if ds.p() != self.p() {
            return Err(Error::Dimension { expected: self.p(), got: ds.p() });
        }
        if ds.n() != self.n() {
            return Err(Error::Dimension { expected: self.n(), got: ds.n() });
        }
        if i >= self.n() {
            return Err(Error::IndexOutOfRange { index: i, len: self.n() });
        }
        let u = self.predict(ds, i);
        self.update(model, ds, i, u, alpha)
    }

    /// Applies every pending update, folds `κ` into `z`, and resets the step sums.
    pub fn renormalize(&mut self) {
        for j in 0..self.p() {
            self.catch_up(j);
        }
        let kappa = self.kappa;
        self.z.iter_mut().for_each(|v| *v *= kappa);
        self.kappa = 1.0;
        self.s.clear();
        self.s.push(0.0);
        self.last.iter_mut().for_each(|v| *v = 0);
        self.renormalizations += 1;
    }

    /// The current dense iterate, without mutating the engine.
    pub fn finalize(&self) -> Vec<f64> {
        let t = self.local();
        self.z
            .iter()
            .zip(&self.d)
            .zip(&self.last)
            .map(|((&z, &d), &lj)| self.kappa * (z - (self.s[t] - self.s[lj]) * d))
            .collect()
    }
}

/// Free-function form of [`JitState::step`].
pub fn sag_step_jit(state: &mut JitState, model: &LossModel, ds: &SparseDataset, i: usize, alpha: f64) -> Result<()> {
    state.step(model, ds, i, alpha)
}

/// Free-function form of [`JitState::finalize`].
pub fn finalize_jit(state: &JitState) -> Vec<f64> {
    state.finalize()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_matches_closed_form() {
        let ds = SparseDataset::from_dense(&[vec![0.0, 2.0, 0.0]], vec![1.0]).unwrap();
        let m = LossModel::squared(0.5);
        let mut st = JitState::new(1, vec![1.0, 1.0, 1.0], true);
        st.step(&m, &ds, 0, 0.2).unwrap();
        // u = 2, l' = 1, d = (0, 2, 0); x = 0.9 x - 0.2 d
        let x = st.finalize();
        let want = [0.9, 0.9 - 0.4, 0.9];
        for (a, b) in x.iter().zip(want) {
            assert!((a - b).abs() < 1e-15, "{x:?}");
        }
    }

    #[test]
    fn zero_row_only_shrinks() {
        let ds = SparseDataset::new(2, vec![0, 0], vec![], vec![], vec![1.0]).unwrap();
        let m = LossModel::logistic(0.1);
        let mut st = JitState::new(1, vec![1.0, -2.0], true);
        st.step(&m, &ds, 0, 0.5).unwrap();
        let x = st.finalize();
        assert!((x[0] - 0.95).abs() < 1e-15 && (x[1] + 1.9).abs() < 1e-15);
        assert_eq!(st.d, vec![0.0, 0.0]);
    }

    #[test]
    fn rejects_unstable_shrink() {
        let ds = SparseDataset::from_dense(&[vec![1.0]], vec![1.0]).unwrap();
        let mut st = JitState::new(1, vec![0.0], true);
        assert!(st.step(&LossModel::squared(2.0), &ds, 0, 0.5).is_err());
    }

    #[test]
    fn renormalize_preserves_iterate() {
        let ds = SparseDataset::from_dense(
            &[vec![1.0, 0.0, 0.5], vec![0.0, 2.0, 0.0], vec![0.3, 0.0, 0.0]],
            vec![1.0, -1.0, 1.0],
        )
        .unwrap();
        let m = LossModel::logistic(0.3);
        let mut st = JitState::new(3, vec![0.0; 3], true);
        for i in [0, 1, 2, 1, 0, 0, 2] {
            st.step(&m, &ds, i, 0.7).unwrap();
        }
        let before = st.finalize();
        st.renormalize();
        assert_eq!(st.kappa, 1.0);
        for (a, b) in before.iter().zip(st.finalize()) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn renormalization_triggers_on_small_kappa() {
        let ds = SparseDataset::from_dense(&[vec![1.0]], vec![1.0]).unwrap();
        let m = LossModel::squared(1.0);
        let mut st = JitState::new(1, vec![1.0], true);
        for _ in 0..60 {
            st.step(&m, &ds, 0, 0.5).unwrap();
        }
        assert!(st.renormalizations() >= 1);
        assert!(st.kappa.abs() >= KAPPA_LO);
    }
}
