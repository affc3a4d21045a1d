use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dataset::{SparseDataset, SynthSpec, Targets};
use crate::error::{invalid, Error, Result};
use crate::losses::{LossFamily, LossModel};
use crate::sag::BatchStepRule;

/// Optimizer identifiers accepted by the harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Constant step (default `1/L`).
    Sag,
    /// Line-search step.
    SagLs,
    /// Fixed sampling proportional to `L_i + L_mean`.
    SagLipschitz,
    /// Adaptive Lipschitz estimates with unseen-first sampling.
    SagLsLipschitz,
    SagMinibatch,
    Iag,
    Fg,
    Afg,
    Sg,
    Asg,
    Pcd,
    PcdL,
    Dca,
}

impl Method {
    pub const ALL: [Method; 13] = [
        Method::Sag,
        Method::SagLs,
        Method::SagLipschitz,
        Method::SagLsLipschitz,
        Method::SagMinibatch,
        Method::Iag,
        Method::Fg,
        Method::Afg,
        Method::Sg,
        Method::Asg,
        Method::Pcd,
        Method::PcdL,
        Method::Dca,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Method::Sag => "sag",
            Method::SagLs => "sag_ls",
            Method::SagLipschitz => "sag_lipschitz",
            Method::SagLsLipschitz => "sag_ls_lipschitz",
            Method::SagMinibatch => "sag_minibatch",
            Method::Iag => "iag",
            Method::Fg => "fg",
            Method::Afg => "afg",
            Method::Sg => "sg",
            Method::Asg => "asg",
            Method::Pcd => "pcd",
            Method::PcdL => "pcd_l",
            Method::Dca => "dca",
        }
    }

    /// Whether the method takes a constant step that a sweep can tune.
    pub fn uses_alpha(self) -> bool {
        matches!(self, Method::Sag | Method::SagMinibatch | Method::Iag | Method::Fg | Method::Sg | Method::Asg)
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method '{s}'")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    File { path: PathBuf, p: Option<usize> },
    Synth(SynthSpec),
}

impl DataSource {
    pub fn load(&self) -> Result<SparseDataset> {
        match self {
            DataSource::File { path, p } => {
                let f = std::fs::File::open(path)?;
                SparseDataset::parse_libsvm(std::io::BufReader::new(f), *p)
            }
            DataSource::Synth(spec) => crate::dataset::synth_generate(spec),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub model: LossModel,
    pub method: Method,
    /// Constant step; `None` means the method's default.
    pub alpha: Option<f64>,
    pub passes: f64,
    pub seed: u64,
    pub stride: f64,
    /// Lazy sparse SAG updates; `None` picks them for sparse data.
    pub jit: Option<bool>,
    pub batch_size: usize,
    pub batch_rule: BatchStepRule,
    /// Gradient-norm tolerance for the reference optimum; `None` uses the default.
    pub reference_tol: Option<f64>,
    /// Record wall-clock milliseconds; off keeps traces byte-for-byte reproducible.
    pub timing: bool,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(data: DataSource, model: LossModel, method: Method) -> Self {
        Self {
            data,
            model,
            method,
            alpha: None,
            passes: 50.0,
            seed: 0,
            stride: 0.1,
            jit: None,
            batch_size: 100,
            batch_rule: BatchStepRule::LMax,
            reference_tol: None,
            timing: false,
            out: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.passes >= 1.0) {
            return invalid(format!("passes budget must be at least 1, got {}", self.passes));
        }
        if !(self.stride > 0.0) {
            return invalid(format!("trace stride must be positive, got {}", self.stride));
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return invalid(format!("alpha must be positive, got {a}"));
            }
        }
        if self.method == Method::Dca && self.model.lambda <= 0.0 {
            return Err(Error::Unsupported("dca needs lambda > 0".into()));
        }
        if self.method == Method::SagMinibatch && self.batch_size == 0 {
            return invalid("batch_size must be positive");
        }
        if let DataSource::Synth(s) = &self.data {
            s.validate()?;
        }
        Ok(())
    }

    /// Reads `key = value` lines; `#` starts a comment. Relative data paths
    /// resolve against the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg = Self::from_str_with_base(&text, path.parent())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg = Self::from_str_with_base(text, None)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn from_str_with_base(text: &str, base: Option<&Path>) -> Result<Self> {
        let kv = parse_key_values(text)?;
        let mut cfg = Self::new(
            DataSource::Synth(SynthSpec::new(1000, 20, 0)),
            LossModel::logistic(1e-2),
            Method::SagLs,
        );
        let mut synth = SynthSpec::new(1000, 20, 0);
        let mut family = LossFamily::Logistic;
        let mut lambda = 1e-2;
        let mut file: Option<(PathBuf, Option<usize>)> = None;
        for (key, (line, value)) in &kv {
            let line = *line;
            match key.as_str() {
                "data" => {
                    let p = PathBuf::from(value);
                    let p = match base {
                        Some(b) if p.is_relative() => b.join(p),
                        _ => p,
                    };
                    file = Some((p, file.as_ref().and_then(|f| f.1)));
                }
                "data_p" | "p_override" => {
                    let p = parse_value(line, value)?;
                    match &mut file {
                        Some(f) => f.1 = Some(p),
                        None => file = Some((PathBuf::new(), Some(p))),
                    }
                }
                "loss" => family = value.parse().map_err(|e: Error| Error::Parse { line, msg: e.to_string() })?,
                "lambda" => lambda = parse_value(line, value)?,
                "method" => cfg.method = value.parse().map_err(|e: Error| Error::Parse { line, msg: e.to_string() })?,
                "alpha" => cfg.alpha = Some(parse_value(line, value)?),
                "passes" => cfg.passes = parse_value(line, value)?,
                "seed" => cfg.seed = parse_value(line, value)?,
                "stride" => cfg.stride = parse_value(line, value)?,
                "jit" => cfg.jit = Some(parse_bool(line, value)?),
                "batch_size" => cfg.batch_size = parse_value(line, value)?,
                "batch_rule" => {
                    cfg.batch_rule = value.parse().map_err(|e: Error| Error::Parse { line, msg: e.to_string() })?
                }
                "reference_tol" => cfg.reference_tol = Some(parse_value(line, value)?),
                "timing" => cfg.timing = parse_bool(line, value)?,
                "out" => cfg.out = Some(PathBuf::from(value)),
                k if k.starts_with("synth.") => apply_synth_key(&mut synth, &k[6..], value, line)?,
                _ => return Err(Error::Parse { line, msg: format!("unknown key '{key}'") }),
            }
        }
        cfg.model = LossModel::new(family, lambda)?;
        cfg.data = match file {
            Some((path, _)) if path.as_os_str().is_empty() => {
                return invalid("data_p given without a data file");
            }
            Some((path, p)) => DataSource::File { path, p },
            None => DataSource::Synth(synth),
        };
        Ok(cfg)
    }
}

/// Line-oriented `key = value` pairs with `#` comments; later keys win.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, (usize, String)>> {
    let mut out = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap().trim();
        if content.is_empty() {
            continue;
        }
        let (k, v) = content
            .split_once('=')
            .ok_or_else(|| Error::Parse { line, msg: format!("expected 'key = value', got '{content}'") })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Parse { line, msg: "empty key".into() });
        }
        out.insert(k.to_string(), (line, v.to_string()));
    }
    Ok(out)
}

fn parse_value<T: FromStr>(line: usize, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Parse { line, msg: format!("cannot parse '{value}'") })
}

fn parse_bool(line: usize, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Parse { line, msg: format!("expected a boolean, got '{value}'") }),
    }
}

fn apply_synth_key(spec: &mut SynthSpec, key: &str, value: &str, line: usize) -> Result<()> {
    match key {
        "n" => spec.n = parse_value(line, value)?,
        "p" => spec.p = parse_value(line, value)?,
        "nnz_per_row" | "nnz" => spec.nnz_per_row = parse_value(line, value)?,
        "label_noise" | "noise" => spec.label_noise = parse_value(line, value)?,
        "heterogeneity" => spec.heterogeneity = parse_value(line, value)?,
        "seed" => spec.seed = parse_value(line, value)?,
        "targets" => {
            spec.targets = match value {
                "sign" => Targets::Sign,
                "linear" => Targets::Linear,
                _ => return Err(Error::Parse { line, msg: format!("unknown targets '{value}'") }),
            }
        }
        _ => return Err(Error::Parse { line, msg: format!("unknown key 'synth.{key}'") }),
    }
    Ok(())
}

/// Reads a synthetic-data recipe; keys may omit the `synth.` prefix.
pub fn parse_synth_spec(text: &str) -> Result<SynthSpec> {
    let mut spec = SynthSpec::new(1000, 20, 0);
    // n and p are applied first so that a dense default for nnz follows p
    let kv = parse_key_values(text)?;
    let mut nnz_given = false;
    for (key, (line, value)) in &kv {
        let k = key.strip_prefix("synth.").unwrap_or(key);
        nnz_given |= k == "nnz_per_row" || k == "nnz";
        apply_synth_key(&mut spec, k, value, *line)?;
    }
    if !nnz_given {
        spec.nnz_per_row = spec.p;
    }
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config() {
        let cfg = ExperimentConfig::parse(
            "# comment\nmethod = sag\nalpha = 0.5  # trailing\nloss = squared\nlambda = 0\n\
             synth.n = 50\nsynth.p = 3\nsynth.targets = linear\npasses = 2\nseed = 7\n",
        )
        .unwrap();
        assert_eq!(cfg.method, Method::Sag);
        assert_eq!(cfg.alpha, Some(0.5));
        assert_eq!(cfg.model, LossModel::squared(0.0));
        assert_eq!(cfg.passes, 2.0);
        match cfg.data {
            DataSource::Synth(s) => assert_eq!((s.n, s.p, s.targets), (50, 3, Targets::Linear)),
            _ => panic!("expected synthetic data"),
        }
    }

    #[test]
    fn errors_carry_line_numbers() {
        match ExperimentConfig::parse("method = sag\n\nalpha = abc\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(ExperimentConfig::parse("bogus = 1"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(ExperimentConfig::parse("no equals sign"), Err(Error::Parse { .. })));
    }

    #[test]
    fn validation() {
        assert!(ExperimentConfig::parse("passes = 0.5").is_err());
        assert!(ExperimentConfig::parse("method = dca\nlambda = 0").is_err());
        assert!(ExperimentConfig::parse("method = dca\nlambda = 0.1").is_ok());
    }

    #[test]
    fn method_ids_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.id().parse::<Method>().unwrap(), m);
        }
    }

    #[test]
    fn synth_spec_file() {
        let s = parse_synth_spec("n = 10\np = 4\nheterogeneity = 3\n").unwrap();
        assert_eq!((s.n, s.p, s.nnz_per_row, s.heterogeneity), (10, 4, 4, 3.0));
        let s = parse_synth_spec("synth.n = 10\nsynth.p = 40\nnnz = 5\n").unwrap();
        assert_eq!(s.nnz_per_row, 5);
    }
}
