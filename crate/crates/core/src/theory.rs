//! Convergence-rate arithmetic and numeric checks of the Lyapunov
//! constraint system behind the constant-step convergence theorem.

use std::fmt::Write as _;

use crate::error::{invalid, Result};

fn check_rate_inputs(n: f64, mu: f64, l: f64) -> Result<()> {
    if !(n >= 1.0) {
        return invalid(format!("n must be at least 1, got {n}"));
    }
    if !(l > 0.0 && l.is_finite()) {
        return invalid(format!("L must be positive, got {l}"));
    }
    if !(mu >= 0.0 && mu <= l) {
        return invalid(format!("mu must lie in [0, L], got {mu}"));
    }
    Ok(())
}

/// Per-iteration contraction factor `1 − min(μ/16L, 1/8n)` of SAG with step `1/16L`.
pub fn sag_rate(n: f64, mu: f64, l: f64) -> Result<f64> {
    check_rate_inputs(n, mu, l)?;
    Ok(1.0 - (mu / (16.0 * l)).min(1.0 / (8.0 * n)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateRow {
    pub method: &'static str,
    /// Contraction of the error per `n` single-example gradient evaluations.
    pub rate: f64,
}

/// Per-pass rates of first-order methods for `n` functions with Lipschitz
/// gradients `L` and strong convexity `μ`.
pub fn rate_table(n: f64, l: f64, mu: f64) -> Result<Vec<RateRow>> {
    check_rate_inputs(n, mu, l)?;
    let (sl, sm) = (l.sqrt(), mu.sqrt());
    Ok(vec![
        RateRow { method: "FG (1/L)", rate: (1.0 - mu / l).powi(2) },
        RateRow { method: "FG (2/(L+mu))", rate: (1.0 - 2.0 * mu / (l + mu)).powi(2) },
        RateRow { method: "AFG", rate: 1.0 - (mu / l).sqrt() },
        RateRow { method: "Lower bound", rate: (1.0 - 2.0 * sm / (sl + sm)).powi(2) },
        RateRow { method: "MISO", rate: (1.0 - mu / (n * (l + mu))).powf(n) },
        RateRow { method: "SAG", rate: sag_rate(n, mu, l)?.powf(n) },
    ])
}

/// Spectral and norm summaries of a design matrix `A` (rows `a_i`) for
/// ℓ2-regularized least squares.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralInputs {
    /// Largest eigenvalue of `AᵀA`.
    pub big_m_sigma: f64,
    /// Largest squared row norm.
    pub big_m_i: f64,
    /// Largest squared column norm.
    pub big_m_j: f64,
    /// Smallest eigenvalue of `AᵀA`.
    pub m_sigma: f64,
    /// Smallest eigenvalue of `AAᵀ`.
    pub m_sigma_dual: f64,
    pub n: f64,
    pub p: f64,
    pub lambda: f64,
}

impl SpectralInputs {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.big_m_sigma, self.big_m_i, self.big_m_j, self.m_sigma, self.m_sigma_dual, self.lambda];
        if vals.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return invalid("spectral inputs and lambda must be finite and nonnegative");
        }
        if !(self.n >= 1.0 && self.p >= 1.0) {
            return invalid("n and p must be at least 1");
        }
        if self.lambda == 0.0 && (self.m_sigma_dual == 0.0 || self.m_sigma == 0.0) {
            return invalid("lambda = 0 leaves a strong-convexity constant undefined");
        }
        Ok(())
    }

    pub fn l_g(&self) -> f64 {
        self.lambda + self.big_m_sigma / self.n
    }

    pub fn l_g_i(&self) -> f64 {
        self.lambda + self.big_m_i
    }

    pub fn l_g_j(&self) -> f64 {
        self.lambda + self.big_m_j / self.n
    }

    pub fn l_d(&self) -> f64 {
        self.n + self.big_m_sigma / self.lambda
    }

    pub fn l_d_i(&self) -> f64 {
        self.n + self.big_m_i / self.lambda
    }

    pub fn mu_g(&self) -> f64 {
        self.lambda + self.m_sigma / self.n
    }

    pub fn mu_d(&self) -> f64 {
        self.n + self.m_sigma_dual / self.lambda
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundedRate {
    pub method: &'static str,
    /// Contraction per `O(np)` of work.
    pub rate: f64,
    /// Exponential upper bound on `rate`.
    pub bound: f64,
}

/// Per-pass rates of primal and dual methods for ℓ2-regularized least squares.
pub fn appendix_a_rates(s: &SpectralInputs) -> Result<Vec<BoundedRate>> {
    s.validate()?;
    let (n, p, lam) = (s.n, s.p, s.lambda);
    let nl = n * lam;
    let (mg, md, lg, ld) = (s.mu_g(), s.mu_d(), s.l_g(), s.l_d());
    let row = |method, rate, bound| BoundedRate { method, rate, bound };
    Ok(vec![
        row(
            "primal FG (1/L)",
            (1.0 - mg / lg).powi(2),
            (-2.0 * (nl + s.m_sigma) / (nl + s.big_m_sigma)).exp(),
        ),
        row(
            "primal FG (2/(L+mu))",
            (1.0 - 2.0 * mg / (lg + mg)).powi(2),
            (-2.0 * (nl + s.m_sigma) / (nl + (s.big_m_sigma + s.m_sigma) / 2.0)).exp(),
        ),
        row(
            "dual FG (1/L)",
            (1.0 - md / ld).powi(2),
            (-2.0 * (nl + s.m_sigma_dual) / (nl + s.big_m_sigma)).exp(),
        ),
        row(
            "dual FG (2/(L+mu))",
            (1.0 - 2.0 * md / (ld + md)).powi(2),
            (-2.0 * (nl + s.m_sigma_dual) / (nl + (s.big_m_sigma + s.m_sigma_dual) / 2.0)).exp(),
        ),
        row(
            "primal AFG",
            1.0 - (mg / lg).sqrt(),
            (-((nl + s.m_sigma) / (nl + s.big_m_sigma)).sqrt()).exp(),
        ),
        row(
            "dual AFG",
            1.0 - (md / ld).sqrt(),
            (-((nl + s.m_sigma_dual) / (nl + s.big_m_sigma)).sqrt()).exp(),
        ),
        row(
            "primal CD",
            (1.0 - mg / (p * s.l_g_j())).powf(p),
            (-(nl + s.m_sigma) / (nl + s.big_m_j)).exp(),
        ),
        row(
            "dual CD",
            (1.0 - md / (n * s.l_d_i())).powf(n),
            (-(nl + s.m_sigma_dual) / (nl + s.big_m_i)).exp(),
        ),
        row("SDCA duality gap", (1.0 - lam / (nl + s.big_m_i)).powf(n), (-nl / (nl + s.big_m_i)).exp()),
        row(
            "SAG",
            (1.0 - (mg / (16.0 * s.l_g_i())).min(1.0 / (8.0 * n))).powf(n),
            (-((nl + s.m_sigma) / (lam + s.big_m_i)).min(2.0) / 16.0).exp(),
        ),
        row(
            "MISO",
            (1.0 - mg / (n * (s.l_g_i() + mg))).powf(n),
            (-(nl + s.m_sigma) / (2.0 * nl + n * s.big_m_i + n * s.m_sigma)).exp(),
        ),
    ])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMode {
    /// All memories start at zero.
    Zero,
    /// Memories start at `f_i'(x⁰) − g'(x⁰)`.
    Centered,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TheoremBound {
    pub c0: f64,
    /// `32n·C₀/k`, valid for the averaged iterate whether or not `μ > 0`.
    pub convex: f64,
    /// `(1 − min(μ/16L, 1/8n))^k·C₀`; equals `C₀` when `μ = 0`.
    pub strongly_convex: f64,
}

impl TheoremBound {
    /// The bound that applies: linear when `μ > 0`, sublinear otherwise.
    pub fn applicable(&self, mu: f64) -> f64 {
        if mu > 0.0 {
            self.strongly_convex
        } else {
            self.convex
        }
    }
}

/// Expected-suboptimality bounds for SAG with step `1/16L` after `k` iterations.
#[allow(clippy::too_many_arguments)]
pub fn theorem_bound(
    k: u64,
    init: InitMode,
    g0_gap: f64,
    dist0_sq: f64,
    sigma_sq: f64,
    n: f64,
    l: f64,
    mu: f64,
) -> Result<TheoremBound> {
    check_rate_inputs(n, mu, l)?;
    if k == 0 {
        return invalid("k must be at least 1");
    }
    if [g0_gap, dist0_sq, sigma_sq].iter().any(|v| !(*v >= 0.0)) {
        return invalid("gap, distance and variance must be nonnegative");
    }
    let c0 = match init {
        InitMode::Zero => g0_gap + 4.0 * l / n * dist0_sq + sigma_sq / (16.0 * l),
        InitMode::Centered => 1.5 * g0_gap + 4.0 * l / n * dist0_sq,
    };
    let rate = sag_rate(n, mu, l)?;
    Ok(TheoremBound {
        c0,
        convex: 32.0 * n * c0 / k as f64,
        strongly_convex: rate.powf(k as f64) * c0,
    })
}

/// Constants of the quadratic Lyapunov function certifying the theorem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LyapunovConstants {
    pub a1: f64,
    pub a2: f64,
    pub b: f64,
    pub c: f64,
    pub h: f64,
    pub d: f64,
    pub alpha: f64,
    pub delta: f64,
    pub gamma: f64,
    pub c3: f64,
}

pub fn lyapunov_constants(n: usize, mu: f64, l: f64) -> Result<LyapunovConstants> {
    if n < 2 {
        return invalid(format!("the constraint system needs n >= 2, got {n}"));
    }
    check_rate_inputs(n as f64, mu, l)?;
    let nf = n as f64;
    let alpha = 1.0 / (16.0 * l);
    Ok(LyapunovConstants {
        a1: (1.0 - 1.0 / (2.0 * nf)) / (32.0 * nf * l),
        a2: (1.0 - 1.0 / (2.0 * nf)) / (16.0 * nf * l),
        b: -(1.0 - 1.0 / nf) / (4.0 * nf),
        c: 4.0 * l / nf,
        h: 0.5 - 1.0 / nf,
        d: alpha / nf,
        alpha,
        delta: (1.0 / (8.0 * nf)).min(mu / (16.0 * l)),
        gamma: 1.0,
        c3: 1.0 / (32.0 * nf),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Residual {
    pub name: &'static str,
    /// Nonnegative when satisfied; `None` when a divisor is not positive.
    pub value: Option<f64>,
}

impl Residual {
    pub fn satisfied(&self, tol: f64) -> bool {
        self.value.is_some_and(|v| v >= -tol)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintSet {
    pub b: [f64; 10],
    /// `C₀, C₁, C₂`; `None` when `B₃` or `B₄` is not positive.
    pub c: Option<[f64; 3]>,
    pub c3: f64,
    pub residuals: Vec<Residual>,
}

pub const CONSTRAINT_NAMES: [&str; 9] = [
    "B3>=0",
    "B4>=0",
    "C2<=0",
    "C1+C3<=0",
    "C0+mu(C1+C3)+mu^2C2<=0",
    "domination",
    "na1+a2+nmud^2>=0",
    "2h-gamma<=0",
    "h>=0",
];

/// Coefficients `B₀…B₉`, `C₀…C₂` and the nine constraint residuals.
///
/// The `(1−δ)μhd²` term of `B₄` is dropped, which only makes `B₄` smaller.
pub fn constraint_residuals(k: &LyapunovConstants, n: usize, mu: f64, l: f64) -> ConstraintSet {
    let nf = n as f64;
    let LyapunovConstants { a1, a2, b, c, h, d, alpha, delta, gamma, c3 } = *k;
    let an = alpha / nf;
    let t = a1 - 2.0 * an * b + an * an * c;
    let dd = (d - an).powi(2);
    let b0 = 2.0 * delta * h;
    let b1 = 2.0 * (b - an * c);
    let b2 = 2.0 * (an - d) * h;
    let mix = a1 + a2 - 2.0 * an * b + an * an * c;
    let b3 = -((1.0 - 2.0 / nf) * a2 + mix / nf - (1.0 - delta) * a2 + l * h * dd / nf);
    let b4 = -nf * ((1.0 - 2.0 / nf) * t - (1.0 - delta) * a1 + l * (1.0 - 2.0 / nf) * h * dd) + b3;
    let b5 = 2.0 * ((delta - 1.0 / nf) * b - an * (1.0 - 1.0 / nf) * c);
    let b6 = -(2.0 / nf) * (h * l * dd + t);
    let b7 = 2.0 * (h * l * dd + t) + 2.0 * (h * (d - an) * (1.0 - 1.0 / nf) - h * (1.0 - delta) * d);
    let b8 = mix / nf + l / nf * h * dd;
    let b9 = c * delta;

    let cs = (b3 > 0.0 && b4 > 0.0).then(|| {
        let c0 = -b0 * mu / 2.0 + b9 + nf / 4.0 * b5 * b5 / b4;
        let c1 = b0 + b1 + nf * l / 4.0 * b6 * b6 / b3 + nf / 2.0 * b5 * (b6 + b7) / b4 + nf * l * b8;
        let c2 = -b2 - nf / 4.0 * b6 * b6 / b3 + nf / 4.0 * (b6 + b7).powi(2) / b4;
        [c0, c1, c2]
    });
    let denom = nf * a1 + a2 + nf * mu * d * d;
    let domination = (denom >= 0.0).then(|| l / 2.0 * (2.0 * h - gamma) + c - nf * (d * l + b).powi(2) / denom);
    let values = [
        Some(b3),
        Some(b4),
        cs.map(|[_, _, c2]| -c2),
        cs.map(|[_, c1, _]| -(c1 + c3)),
        cs.map(|[c0, c1, c2]| -(c0 + mu * (c1 + c3) + mu * mu * c2)),
        domination,
        Some(denom),
        Some(-(2.0 * h - gamma)),
        Some(h),
    ];
    ConstraintSet {
        b: [b0, b1, b2, b3, b4, b5, b6, b7, b8, b9],
        c: cs,
        c3,
        residuals: CONSTRAINT_NAMES.iter().zip(values).map(|(&name, value)| Residual { name, value }).collect(),
    }
}

/// Default residual tolerance for grid verification.
pub const RESIDUAL_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct GridRow {
    pub n: usize,
    pub mu_ratio: f64,
    pub name: &'static str,
    pub residual: Option<f64>,
    pub satisfied: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridReport {
    pub rows: Vec<GridRow>,
    pub tol: f64,
}

impl GridReport {
    pub fn violations(&self) -> impl Iterator<Item = &GridRow> {
        self.rows.iter().filter(|r| !r.satisfied)
    }

    pub fn passed(&self) -> bool {
        self.violations().next().is_none()
    }

    /// `n,mu_ratio,constraint_name,residual,satisfied` with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,mu_ratio,constraint_name,residual,satisfied\n");
        for r in &self.rows {
            let res = r.residual.map_or_else(|| "undefined".to_string(), |v| format!("{v:e}"));
            let _ = writeln!(out, "{},{:e},{},{},{}", r.n, r.mu_ratio, r.name, res, r.satisfied);
        }
        out
    }
}

/// Evaluates every constraint at each `(n, μ/L)` pair with `L = 1`.
pub fn verify_grid(n_values: &[usize], mu_ratios: &[f64], tol: f64) -> Result<GridReport> {
    let mut rows = Vec::with_capacity(n_values.len() * mu_ratios.len() * CONSTRAINT_NAMES.len());
    for &n in n_values {
        for &ratio in mu_ratios {
            if !(0.0..=1.0).contains(&ratio) {
                return invalid(format!("mu/L must lie in [0, 1], got {ratio}"));
            }
            let k = lyapunov_constants(n, ratio, 1.0)?;
            let set = constraint_residuals(&k, n, ratio, 1.0);
            for r in set.residuals {
                let satisfied = r.satisfied(tol);
                rows.push(GridRow { n, mu_ratio: ratio, name: r.name, residual: r.value, satisfied });
            }
        }
    }
    Ok(GridReport { rows, tol })
}

/// `2, 3, 4, 5, 8, 16, …, 4096`.
pub fn default_n_grid() -> Vec<usize> {
    let mut v = vec![2, 3, 4, 5];
    v.extend((3..=12).map(|e| 1usize << e));
    v
}

pub fn default_mu_grid() -> Vec<f64> {
    vec![0.0, 1e-6, 1e-4, 1e-2, 0.1, 0.5, 1.0]
}
