use crate::dataset::SparseDataset;
use crate::error::{invalid, Error, Result};
use crate::losses::LossModel;
use crate::samplers::Rng;

/// Which batch Lipschitz constant sets the step `1/L`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchStepRule {
    /// Largest per-example constant in any batch.
    LMax,
    /// Largest within-batch mean of per-example constants.
    LMean,
    /// Largest top eigenvalue of a batch's averaged Hessian bound.
    LHessian,
}

impl std::str::FromStr for BatchStepRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lmax" | "l_max" => Ok(Self::LMax),
            "lmean" | "l_mean" => Ok(Self::LMean),
            "lhessian" | "l_hessian" => Ok(Self::LHessian),
            _ => invalid(format!("unknown batch step rule '{s}'")),
        }
    }
}

/// Shuffles `0..n` with `rng` and cuts it into contiguous blocks of `b`.
pub fn partition_batches(n: usize, b: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    if b == 0 {
        return invalid("batch size must be positive");
    }
    let perm = rng.permutation(n);
    Ok(perm.chunks(b).map(|c| c.to_vec()).collect())
}

/// `1/L` for the chosen rule over a fixed partition.
pub fn batch_step_size(model: &LossModel, ds: &SparseDataset, batches: &[Vec<usize>], rule: BatchStepRule) -> Result<f64> {
    if batches.iter().any(|b| b.is_empty()) {
        return invalid("empty batch");
    }
    let per = model.lipschitz_constants(ds).per_example;
    let mut worst: f64 = 0.0;
    for b in batches {
        let l = match rule {
            BatchStepRule::LMax => b.iter().map(|&i| per[i]).fold(0.0, f64::max),
            BatchStepRule::LMean => b.iter().map(|&i| per[i]).sum::<f64>() / b.len() as f64,
            BatchStepRule::LHessian => model.batch_hessian_lipschitz(ds, b)?,
        };
        worst = worst.max(l);
    }
    if worst <= 0.0 {
        return invalid("all batch Lipschitz constants are zero");
    }
    Ok(1.0 / worst)
}

/// SAG over a fixed partition, one `p`-vector memory per batch.
///
/// Slot `B` stores the batch-mean gradient; `d` sums `|B|` times each
/// visited slot so that `d / n` is the usual average.
#[derive(Clone, Debug)]
pub struct MiniBatchSag {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub d: Vec<f64>,
    pub visited: Vec<bool>,
    /// Examples covered by visited batches.
    pub seen: usize,
    pub k: u64,
    pub reweight: bool,
    pub exact_reg: bool,
    batches: Vec<Vec<usize>>,
    n: usize,
}

impl MiniBatchSag {
    pub fn new(n: usize, x0: Vec<f64>, batches: Vec<Vec<usize>>, reweight: bool, exact_reg: bool) -> Result<Self> {
        if batches.iter().any(|b| b.is_empty()) {
            return invalid("empty batch");
        }
        let mut covered = vec![false; n];
        for &i in batches.iter().flatten() {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, len: n });
            }
            if std::mem::replace(&mut covered[i], true) {
                return invalid(format!("example {i} appears in more than one batch"));
            }
        }
        if covered.iter().any(|c| !c) {
            return invalid("batches do not cover every example");
        }
        let p = x0.len();
        Ok(Self {
            y: vec![0.0; batches.len() * p],
            d: vec![0.0; p],
            visited: vec![false; batches.len()],
            seen: 0,
            k: 0,
            reweight,
            exact_reg,
            x: x0,
            batches,
            n,
        })
    }

    pub fn batches(&self) -> &[Vec<usize>] {
        &self.batches
    }

    pub fn num_slots(&self) -> usize {
        self.batches.len()
    }

    pub fn sag_minibatch_step(&mut self, model: &LossModel, ds: &SparseDataset, batch: usize, alpha: f64) -> Result<()> {
        if batch >= self.batches.len() {
            return Err(Error::IndexOutOfRange { index: batch, len: self.batches.len() });
        }
        if ds.p() != self.x.len() || ds.n() != self.n {
            return Err(Error::Dimension { expected: self.x.len(), got: ds.p() });
        }
        let p = self.x.len();
        let members = &self.batches[batch];
        let size = members.len() as f64;
        let mut g = vec![0.0; p];
        for &i in members {
            let row = ds.row(i);
            row.axpy(model.point_deriv(row.dot(&self.x), ds.label(i)), &mut g);
        }
        if !self.exact_reg && model.lambda != 0.0 {
            for (gj, xj) in g.iter_mut().zip(&self.x) {
                *gj += size * model.lambda * xj;
            }
        }
        let slot = &mut self.y[batch * p..(batch + 1) * p];
        for ((dj, yj), gj) in self.d.iter_mut().zip(slot.iter_mut()).zip(&g) {
            *dj += gj - size * *yj;
            *yj = gj / size;
        }
        if !self.visited[batch] {
            self.visited[batch] = true;
            self.seen += members.len();
        }
        let div = if self.reweight { self.seen } else { self.n } as f64;
        let shrink = if self.exact_reg { 1.0 - alpha * model.lambda } else { 1.0 };
        for (xj, dj) in self.x.iter_mut().zip(&self.d) {
            *xj = shrink * *xj - alpha / div * dj;
        }
        self.k += 1;
        Ok(())
    }
}
