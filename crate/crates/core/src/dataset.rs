//! Row-compressed finite-sum data: parsing, serialization, preprocessing and
//! synthetic generation.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::samplers::Rng;

/// Feature matrix in CSR layout plus one label per row.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseDataset {
    n: usize,
    p: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    labels: Vec<f64>,
}

/// Borrowed view of one example's nonzeros.
#[derive(Clone, Copy, Debug)]
pub struct Row<'a> {
    pub indices: &'a [usize],
    pub values: &'a [f64],
}

impl Row<'_> {
    pub fn dot(&self, x: &[f64]) -> f64 {
        self.indices.iter().zip(self.values).map(|(&j, &v)| v * x[j]).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// `out += scale * a`
    pub fn axpy(&self, scale: f64, out: &mut [f64]) {
        for (&j, &v) in self.indices.iter().zip(self.values) {
            out[j] += scale * v;
        }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }
}

impl SparseDataset {
    /// Builds a dataset, checking every CSR invariant.
    pub fn new(
        p: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
        labels: Vec<f64>,
    ) -> Result<Self> {
        if row_ptr.is_empty() || row_ptr[0] != 0 {
            return invalid("row_ptr must start with 0");
        }
        let n = row_ptr.len() - 1;
        if labels.len() != n {
            return Err(Error::Dimension { expected: n, got: labels.len() });
        }
        if col_idx.len() != values.len() || *row_ptr.last().unwrap() != col_idx.len() {
            return invalid("row_ptr, col_idx and values disagree on nonzero count");
        }
        for i in 0..n {
            let (lo, hi) = (row_ptr[i], row_ptr[i + 1]);
            if hi < lo {
                return invalid(format!("row_ptr decreases at row {i}"));
            }
            let cols = &col_idx[lo..hi];
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return invalid(format!("column indices of row {i} not strictly increasing"));
            }
            if cols.last().is_some_and(|&c| c >= p) {
                return invalid(format!("column index out of range in row {i}"));
            }
        }
        Ok(Self { n, p, row_ptr, col_idx, values, labels })
    }

    pub fn empty(p: usize) -> Self {
        Self { n: 0, p, row_ptr: vec![0], col_idx: vec![], values: vec![], labels: vec![] }
    }

    /// Dense constructor, mostly for tests and small examples. Zeros are kept
    /// as explicit entries so the result counts as dense for [`standardize`].
    ///
    /// [`standardize`]: SparseDataset::standardize
    pub fn from_dense(rows: &[Vec<f64>], labels: Vec<f64>) -> Result<Self> {
        let p = rows.first().map_or(0, |r| r.len());
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for r in rows {
            if r.len() != p {
                return Err(Error::Dimension { expected: p, got: r.len() });
            }
            col_idx.extend(0..p);
            values.extend_from_slice(r);
            row_ptr.push(col_idx.len());
        }
        Self::new(p, row_ptr, col_idx, values, labels)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn row(&self, i: usize) -> Row<'_> {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        Row { indices: &self.col_idx[lo..hi], values: &self.values[lo..hi] }
    }

    pub fn rows(&self) -> impl Iterator<Item = Row<'_>> + '_ {
        (0..self.n).map(move |i| self.row(i))
    }

    pub fn row_norms_sq(&self) -> Vec<f64> {
        self.rows().map(|r| r.norm_sq()).collect()
    }

    /// `A x` as an `n`-vector.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.rows().map(|r| r.dot(x)).collect()
    }

    pub fn is_binary(&self) -> bool {
        self.labels.iter().all(|&b| b == 1.0 || b == -1.0)
    }

    /// Every row stores all `p` columns.
    pub fn is_dense(&self) -> bool {
        self.nnz() == self.n * self.p
    }

    /// Row-to-column transpose: for each feature, the examples that use it.
    pub fn columns(&self) -> Columns {
        let mut counts = vec![0usize; self.p + 1];
        for &j in &self.col_idx {
            counts[j + 1] += 1;
        }
        for j in 0..self.p {
            counts[j + 1] += counts[j];
        }
        let col_ptr = counts.clone();
        let mut next = counts;
        let mut row_idx = vec![0; self.nnz()];
        let mut vals = vec![0.0; self.nnz()];
        for i in 0..self.n {
            let r = self.row(i);
            for (&j, &v) in r.indices.iter().zip(r.values) {
                row_idx[next[j]] = i;
                vals[next[j]] = v;
                next[j] += 1;
            }
        }
        Columns { col_ptr, row_idx, values: vals }
    }

    /// Subset of rows in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut labels = Vec::with_capacity(rows.len());
        for &i in rows {
            let r = self.row(i);
            col_idx.extend_from_slice(r.indices);
            values.extend_from_slice(r.values);
            row_ptr.push(col_idx.len());
            labels.push(self.labels[i]);
        }
        Self { n: rows.len(), p: self.p, row_ptr, col_idx, values, labels }
    }

    /// Appends a constant-one feature to every row.
    pub fn add_bias(&self) -> Self {
        let mut row_ptr = Vec::with_capacity(self.n + 1);
        let mut col_idx = Vec::with_capacity(self.nnz() + self.n);
        let mut values = Vec::with_capacity(self.nnz() + self.n);
        row_ptr.push(0);
        for r in self.rows() {
            col_idx.extend_from_slice(r.indices);
            values.extend_from_slice(r.values);
            col_idx.push(self.p);
            values.push(1.0);
            row_ptr.push(col_idx.len());
        }
        Self { n: self.n, p: self.p + 1, row_ptr, col_idx, values, labels: self.labels.clone() }
    }

    /// Centers each column and scales it to unit population variance.
    /// Constant columns become all zeros. Refuses sparse input.
    pub fn standardize(&self) -> Result<Self> {
        if !self.is_dense() {
            return Err(Error::Unsupported(
                "standardization requires every row to store all features".into(),
            ));
        }
        if self.n == 0 {
            return Ok(self.clone());
        }
        let n = self.n as f64;
        let mut mean = vec![0.0; self.p];
        for r in self.rows() {
            r.axpy(1.0 / n, &mut mean);
        }
        let mut var = vec![0.0; self.p];
        for r in self.rows() {
            for (&j, &v) in r.indices.iter().zip(r.values) {
                var[j] += (v - mean[j]).powi(2) / n;
            }
        }
        let mut out = self.clone();
        for i in 0..self.n {
            let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
            for k in lo..hi {
                let j = self.col_idx[k];
                let centered = self.values[k] - mean[j];
                out.values[k] = if var[j] > 0.0 { centered / var[j].sqrt() } else { 0.0 };
            }
        }
        Ok(out)
    }

    /// Parses LIBSVM text: `<label> <idx>:<val> ...` with 1-based indices.
    /// Blank lines are skipped. `p_override`, when given, fixes the feature
    /// count and must cover every index seen.
    pub fn parse_libsvm<R: BufRead>(reader: R, p_override: Option<usize>) -> Result<Self> {
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut labels = Vec::new();
        let mut max_col: Option<usize> = None;
        let mut entries: Vec<(usize, f64)> = Vec::new();

        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = lineno + 1;
            let mut tokens = line.split_whitespace();
            let Some(label_tok) = tokens.next() else {
                continue;
            };
            let err = |msg: String| Error::Parse { line: lineno, msg };
            let label: f64 = label_tok
                .parse()
                .map_err(|_| err(format!("bad label {label_tok:?}")))?;
            if !label.is_finite() {
                return Err(err(format!("non-finite label {label_tok:?}")));
            }
            entries.clear();
            for tok in tokens {
                let (idx, val) = tok
                    .split_once(':')
                    .ok_or_else(|| err(format!("malformed token {tok:?}")))?;
                let idx: usize = idx
                    .parse()
                    .map_err(|_| err(format!("bad feature index in {tok:?}")))?;
                if idx < 1 {
                    return Err(err(format!("feature index must be >= 1 in {tok:?}")));
                }
                let val: f64 = val
                    .parse()
                    .map_err(|_| err(format!("non-numeric value in {tok:?}")))?;
                if !val.is_finite() {
                    return Err(err(format!("non-finite value in {tok:?}")));
                }
                entries.push((idx - 1, val));
            }
            entries.sort_by_key(|e| e.0);
            if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(err(format!("duplicate feature index {}", w[0].0 + 1)));
            }
            if let Some(&(last, _)) = entries.last() {
                max_col = Some(max_col.map_or(last, |m| m.max(last)));
            }
            for &(j, v) in &entries {
                col_idx.push(j);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
            labels.push(label);
        }

        let inferred = max_col.map_or(0, |m| m + 1);
        let p = match p_override {
            Some(p) if p < inferred => {
                return invalid(format!("feature count override {p} smaller than max index {inferred}"))
            }
            Some(p) => p,
            None => inferred,
        };
        Self::new(p, row_ptr, col_idx, values, labels)
    }

    pub fn parse_libsvm_str(text: &str, p_override: Option<usize>) -> Result<Self> {
        Self::parse_libsvm(text.as_bytes(), p_override)
    }

    /// Writes LIBSVM text. Values use shortest round-trip formatting, so
    /// parsing the output reproduces the dataset exactly (given the same `p`).
    pub fn write_libsvm<W: Write>(&self, mut w: W) -> Result<()> {
        let mut line = String::new();
        for i in 0..self.n {
            line.clear();
            write!(line, "{}", self.labels[i]).unwrap();
            let r = self.row(i);
            for (&j, &v) in r.indices.iter().zip(r.values) {
                write!(line, " {}:{}", j + 1, v).unwrap();
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn to_libsvm_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_libsvm(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("libsvm output is ASCII")
    }
}

/// Column-major copy of a dataset's features.
#[derive(Clone, Debug)]
pub struct Columns {
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl Columns {
    pub fn column(&self, j: usize) -> Row<'_> {
        let (lo, hi) = (self.col_ptr[j], self.col_ptr[j + 1]);
        Row { indices: &self.row_idx[lo..hi], values: &self.values[lo..hi] }
    }

    pub fn p(&self) -> usize {
        self.col_ptr.len() - 1
    }
}

/// How synthetic labels are produced from the planted model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Targets {
    /// `sign(a_i^T x_true)`, flipped with probability `label_noise`.
    Sign,
    /// `a_i^T x_true` plus Gaussian noise with standard deviation `label_noise`.
    Linear,
}

/// Recipe for a synthetic dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n: usize,
    pub p: usize,
    /// Nonzeros per row; values `>= p` give dense rows.
    pub nnz_per_row: usize,
    pub label_noise: f64,
    /// Ratio of the largest to the smallest row norm.
    pub heterogeneity: f64,
    pub targets: Targets,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(n: usize, p: usize, seed: u64) -> Self {
        Self {
            n,
            p,
            nnz_per_row: p,
            label_noise: 0.0,
            heterogeneity: 1.0,
            targets: Targets::Sign,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 || self.p < 1 {
            return invalid("synthetic spec needs n >= 1 and p >= 1");
        }
        if !(self.heterogeneity >= 1.0) || !self.heterogeneity.is_finite() {
            return invalid("heterogeneity factor must be a finite value >= 1");
        }
        if self.nnz_per_row == 0 {
            return invalid("nnz_per_row must be positive");
        }
        match self.targets {
            Targets::Sign if !(0.0..=1.0).contains(&self.label_noise) => {
                invalid("label flip rate must lie in [0, 1]")
            }
            Targets::Linear if !(self.label_noise >= 0.0) => invalid("noise level must be >= 0"),
            _ => Ok(()),
        }
    }
}

/// Generates a dataset and returns it with the planted weight vector.
///
/// Each row draws `nnz_per_row` distinct columns with Gaussian values, is
/// normalized to unit norm and then scaled by `heterogeneity^(r/(n-1))`, where
/// `r` is the row's rank in a random permutation. Row norms therefore span
/// exactly the requested ratio.
pub fn synth_generate_with_truth(spec: &SynthSpec) -> Result<(SparseDataset, Vec<f64>)> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let x_true: Vec<f64> = (0..spec.p).map(|_| StandardNormal.sample(&mut rng)).collect();
    let ranks = rng.permutation(spec.n);
    let k = spec.nnz_per_row.min(spec.p);

    let mut row_ptr = Vec::with_capacity(spec.n + 1);
    row_ptr.push(0);
    let mut col_idx = Vec::with_capacity(spec.n * k);
    let mut values = Vec::with_capacity(spec.n * k);
    let mut labels = Vec::with_capacity(spec.n);
    let mut cols: Vec<usize> = Vec::with_capacity(k);
    let mut vals: Vec<f64> = Vec::with_capacity(k);

    for &rank in ranks.iter() {
        cols.clear();
        if k == spec.p {
            cols.extend(0..spec.p);
        } else {
            // Floyd's algorithm: k distinct columns without a length-p buffer.
            for j in spec.p - k..spec.p {
                let t = rng.below(j + 1);
                if cols.contains(&t) {
                    cols.push(j);
                } else {
                    cols.push(t);
                }
            }
            cols.sort_unstable();
        }
        vals.clear();
        loop {
            vals.extend(cols.iter().map(|_| -> f64 { StandardNormal.sample(&mut rng) }));
            if vals.iter().any(|&v: &f64| v != 0.0) {
                break;
            }
            vals.clear();
        }
        let norm = vals.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = if spec.n > 1 {
            spec.heterogeneity.powf(rank as f64 / (spec.n - 1) as f64)
        } else {
            1.0
        };
        for v in vals.iter_mut() {
            *v *= scale / norm;
        }
        let u: f64 = cols.iter().zip(&vals).map(|(&j, &v)| v * x_true[j]).sum();
        let label = match spec.targets {
            Targets::Sign => {
                let s = if u >= 0.0 { 1.0 } else { -1.0 };
                if spec.label_noise > 0.0 && rng.uniform() < spec.label_noise {
                    -s
                } else {
                    s
                }
            }
            Targets::Linear => {
                let eps: f64 = StandardNormal.sample(&mut rng);
                u + spec.label_noise * eps
            }
        };
        col_idx.extend_from_slice(&cols);
        values.extend_from_slice(&vals);
        row_ptr.push(col_idx.len());
        labels.push(label);
    }
    let ds = SparseDataset::new(spec.p, row_ptr, col_idx, values, labels)?;
    Ok((ds, x_true))
}

pub fn synth_generate(spec: &SynthSpec) -> Result<SparseDataset> {
    synth_generate_with_truth(spec).map(|(ds, _)| ds)
}
