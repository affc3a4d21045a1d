use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sagopt::harness::{
    default_alpha_grid, emit_csv, emit_svg, grid_sweep, parse_synth_spec, reference_for, run_on, ExperimentConfig, Method,
    ReferenceOptimum, Trace,
};
use sagopt::theory::{appendix_a_rates, default_mu_grid, default_n_grid, rate_table, verify_grid, SpectralInputs, RESIDUAL_TOL};
use sagopt::{synth_generate, Error};

#[derive(Parser, Debug)]
#[command(name = "sagopt", version, about = "Stochastic average gradient experiments and rate theory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one optimizer and write its convergence trace.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        passes: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        stride: Option<f64>,
        /// Record wall-clock milliseconds in the trace.
        #[arg(long)]
        timing: bool,
        /// Output directory; the trace goes to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one experiment per step size and report the best.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Step sizes; defaults to 10^-3/L … 10^3/L.
        #[arg(long, value_delimiter = ',')]
        alpha_grid: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print per-pass convergence rates of first-order methods.
    Rates {
        #[arg(long)]
        n: f64,
        #[arg(long = "L")]
        l: f64,
        #[arg(long)]
        mu: f64,
        /// Least-squares spectral inputs, e.g. `M_sigma=4,M_i=1,M_j=2,m_sigma=0.1,m_sigma_dual=0.2,p=10`.
        #[arg(long, value_delimiter = ',')]
        appendix_a: Option<Vec<String>>,
    },
    /// Check the Lyapunov constraint system on a grid of (n, μ/L).
    VerifyLyapunov {
        #[arg(long, value_delimiter = ',')]
        n_grid: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        mu_grid: Option<Vec<f64>>,
        #[arg(long, default_value_t = RESIDUAL_TOL)]
        tol: f64,
        /// Report CSV path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset in LIBSVM format.
    Datagen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plot trace CSV files as an SVG.
    Plot {
        #[arg(long, value_delimiter = ',', required = true)]
        traces: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
    Verification(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::Parse { .. } | Error::Unsupported(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Verification(m)) => {
            eprintln!("verification failed: {m}");
            ExitCode::from(3)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run { config, method, alpha, passes, seed, stride, timing, out } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let Some(m) = method {
                cfg.method = m;
            }
            cfg.alpha = alpha.or(cfg.alpha);
            cfg.passes = passes.unwrap_or(cfg.passes);
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.stride = stride.unwrap_or(cfg.stride);
            cfg.timing |= timing;
            cfg.out = out.or(cfg.out);
            cfg.validate()?;
            run(&cfg)
        }
        Command::Sweep { config, alpha_grid, out } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            cfg.out = out.or(cfg.out);
            sweep(&cfg, alpha_grid)
        }
        Command::Rates { n, l, mu, appendix_a } => rates(n, l, mu, appendix_a.as_deref()),
        Command::VerifyLyapunov { n_grid, mu_grid, tol, out } => {
            let report = verify_grid(
                &n_grid.unwrap_or_else(default_n_grid),
                &mu_grid.unwrap_or_else(default_mu_grid),
                tol,
            )?;
            match out {
                Some(path) => fs::write(path, report.to_csv())?,
                None => print!("{}", report.to_csv()),
            }
            let bad = report.violations().count();
            eprintln!("{} residuals checked, {bad} violations (tolerance -{tol:e})", report.rows.len());
            if bad > 0 {
                return Err(Failure::Verification(format!("{bad} constraint violations")));
            }
            Ok(())
        }
        Command::Datagen { spec, out } => {
            let spec = parse_synth_spec(&fs::read_to_string(&spec)?)?;
            let ds = synth_generate(&spec)?;
            ds.write_libsvm(std::io::BufWriter::new(fs::File::create(&out)?))?;
            eprintln!("wrote {} examples with {} features to {}", ds.n(), ds.p(), out.display());
            Ok(())
        }
        Command::Plot { traces, out } => {
            let mut loaded = Vec::with_capacity(traces.len());
            for path in &traces {
                let label = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
                loaded.push(Trace::parse_csv(label, &fs::read_to_string(path)?)?);
            }
            emit_svg(&loaded, &out)?;
            Ok(())
        }
    }
}

/// Reference optimum, or `None` with a warning when the budget ran out.
fn reference(cfg: &ExperimentConfig, ds: &sagopt::SparseDataset) -> Result<Option<ReferenceOptimum>, Failure> {
    let r = reference_for(cfg, ds)?;
    if r.converged {
        eprintln!("reference: f* = {:.16e}, gradient norm {:.3e}", r.f_star, r.grad_norm);
        Ok(Some(r))
    } else {
        eprintln!(
            "warning: reference gradient norm {:.3e} above {:.3e}; suboptimality not reported",
            r.grad_norm, r.tol
        );
        Ok(None)
    }
}

fn write_reference(dir: &Path, r: &ReferenceOptimum) -> std::io::Result<()> {
    fs::write(
        dir.join("reference.txt"),
        format!("f_star = {:.16e}\ngrad_norm = {:.16e}\ntol = {:.16e}\nsigma_sq = {:.16e}\n", r.f_star, r.grad_norm, r.tol, r.sigma_sq),
    )
}

fn run(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let ds = cfg.data.load()?;
    let r = reference(cfg, &ds)?;
    let trace = run_on(cfg, &ds, r.as_ref())?;
    if trace.diverged {
        eprintln!("warning: {} diverged", cfg.method);
    }
    match &cfg.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            emit_csv(&trace, &dir.join(format!("{}.csv", cfg.method)))?;
            if let Some(r) = &r {
                write_reference(dir, r)?;
            }
        }
        None => print!("{}", trace.to_csv()),
    }
    Ok(())
}

fn sweep(cfg: &ExperimentConfig, grid: Option<Vec<f64>>) -> Result<(), Failure> {
    if !cfg.method.uses_alpha() {
        return Err(Failure::Usage(format!("method {} has no step size to sweep", cfg.method)));
    }
    let ds = cfg.data.load()?;
    let grid = grid.unwrap_or_else(|| default_alpha_grid(cfg.model.lipschitz_constants(&ds).l_max));
    let r = reference(cfg, &ds)?;
    let result = grid_sweep(cfg, &ds, r.as_ref(), &grid)?;
    println!("alpha,final,diverged");
    for (a, t) in &result.traces {
        println!("{a:e},{:e},{}", t.final_score(), t.diverged);
    }
    match result.best_alpha {
        Some(a) => eprintln!("best alpha: {a:e}"),
        None => eprintln!("warning: every step size diverged"),
    }
    if result.endpoint_warning {
        eprintln!("warning: best alpha is at the end of the grid; consider widening it");
    }
    if let Some(dir) = &cfg.out {
        fs::create_dir_all(dir)?;
        for (a, t) in &result.traces {
            emit_csv(t, &dir.join(format!("{}_alpha_{a:e}.csv", cfg.method)))?;
        }
        if let Some(r) = &r {
            write_reference(dir, r)?;
        }
    }
    Ok(())
}

fn rates(n: f64, l: f64, mu: f64, appendix: Option<&[String]>) -> Result<(), Failure> {
    println!("method,rate");
    for row in rate_table(n, l, mu)? {
        println!("{},{:.4}", row.method, row.rate);
    }
    if let Some(pairs) = appendix {
        let s = spectral_inputs(n, mu, pairs)?;
        println!();
        println!("method,rate,bound");
        for row in appendix_a_rates(&s)? {
            println!("{},{:.6e},{:.6e}", row.method, row.rate, row.bound);
        }
    }
    Ok(())
}

fn spectral_inputs(n: f64, mu: f64, pairs: &[String]) -> Result<SpectralInputs, Failure> {
    let mut s = SpectralInputs {
        big_m_sigma: f64::NAN,
        big_m_i: f64::NAN,
        big_m_j: f64::NAN,
        m_sigma: f64::NAN,
        m_sigma_dual: f64::NAN,
        n,
        p: f64::NAN,
        lambda: mu,
    };
    for pair in pairs {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("expected key=value in --appendix-a, got '{pair}'")))?;
        let v: f64 = v.trim().parse().map_err(|_| Failure::Usage(format!("bad number in '{pair}'")))?;
        let slot = match k.trim() {
            "M_sigma" => &mut s.big_m_sigma,
            "M_i" => &mut s.big_m_i,
            "M_j" => &mut s.big_m_j,
            "m_sigma" => &mut s.m_sigma,
            "m_sigma_dual" => &mut s.m_sigma_dual,
            "n" => &mut s.n,
            "p" => &mut s.p,
            "lambda" => &mut s.lambda,
            other => return Err(Failure::Usage(format!("unknown spectral input '{other}'"))),
        };
        *slot = v;
    }
    let missing: Vec<&str> = [
        ("M_sigma", s.big_m_sigma),
        ("M_i", s.big_m_i),
        ("M_j", s.big_m_j),
        ("m_sigma", s.m_sigma),
        ("m_sigma_dual", s.m_sigma_dual),
        ("p", s.p),
    ]
    .into_iter()
    .filter(|(_, v)| v.is_nan())
    .map(|(k, _)| k)
    .collect();
    if !missing.is_empty() {
        return Err(Failure::Usage(format!("--appendix-a is missing {}", missing.join(", "))));
    }
    Ok(s)
}
