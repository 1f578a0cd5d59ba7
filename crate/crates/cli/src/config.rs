//! Run configuration from command-line flags and `key=value` files.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Parser;
use purecma::objectives::{by_name, BoxBounds};
use purecma::params::default_lambda;
use purecma::termination::{Criterion, TerminationConfig};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid {field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

/// How the initial mean of each restart leg is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum MeanSpec {
    Explicit(Vec<f64>),
    /// Uniform in `[lower, upper]ⁿ`, redrawn for every leg.
    Uniform {
        lower: f64,
        upper: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogFormat {
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LogTarget {
    Stdout,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub objective: String,
    pub dim: usize,
    pub seed: u64,
    pub sigma0: f64,
    pub mean: MeanSpec,
    pub lambda: Option<usize>,
    pub max_evals: u64,
    pub stop_fitness: f64,
    /// Additional legs after the first, each with a larger population.
    pub restarts: u32,
    pub restart_mult: f64,
    pub termination: TerminationConfig,
    pub bounds: Option<(f64, f64)>,
    pub penalty_alpha: f64,
    pub log: Option<LogTarget>,
    pub log_format: LogFormat,
    pub log_every: u64,
    pub checkpoint: Option<PathBuf>,
    pub checkpoint_every: u64,
    pub threads: usize,
}

impl RunConfig {
    /// Defaults for `objective` in dimension `dim`: initial mean uniform in
    /// `[0, 1]ⁿ`, `σ₀ = 0.3`, a budget of `1000·n²` evaluations and target
    /// fitness `1e-10`.
    pub fn new(objective: &str, dim: usize) -> Self {
        Self {
            objective: objective.to_string(),
            dim,
            seed: 1,
            sigma0: 0.3,
            mean: MeanSpec::Uniform {
                lower: 0.0,
                upper: 1.0,
            },
            lambda: None,
            max_evals: 1000 * (dim as u64).pow(2),
            stop_fitness: 1e-10,
            restarts: 0,
            restart_mult: 2.0,
            termination: TerminationConfig::default(),
            bounds: None,
            penalty_alpha: 1.0,
            log: None,
            log_format: LogFormat::Csv,
            log_every: 1,
            checkpoint: None,
            checkpoint_every: 10,
            threads: 1,
        }
    }

    /// Population size of the first leg.
    pub fn base_lambda(&self) -> usize {
        self.lambda.unwrap_or_else(|| default_lambda(self.dim))
    }

    /// Population size of leg `k`: `λ·mult^k`, rounded.
    pub fn lambda_for_leg(&self, k: u32) -> usize {
        (self.base_lambda() as f64 * self.restart_mult.powi(k as i32)).round() as usize
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.dim == 0 {
            return Err(ConfigError::new("dim", "must be at least 1"));
        }
        by_name(&self.objective, self.dim)
            .map_err(|e| ConfigError::new("objective", e.to_string()))?;
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return Err(ConfigError::new("sigma0", "must be positive and finite"));
        }
        match &self.mean {
            MeanSpec::Explicit(m) if m.len() != self.dim => {
                return Err(ConfigError::new(
                    "mean",
                    format!("has {} entries, expected {}", m.len(), self.dim),
                ));
            }
            MeanSpec::Explicit(m) if m.iter().any(|v| !v.is_finite()) => {
                return Err(ConfigError::new("mean", "entries must be finite"));
            }
            MeanSpec::Uniform { lower, upper }
                if lower.partial_cmp(upper) != Some(std::cmp::Ordering::Less) =>
            {
                return Err(ConfigError::new(
                    "mean",
                    "uniform range needs lower < upper",
                ));
            }
            _ => {}
        }
        if let Some(l) = self.lambda {
            if l < 2 {
                return Err(ConfigError::new("lambda", "must be at least 2"));
            }
        }
        if self.max_evals < self.base_lambda() as u64 {
            return Err(ConfigError::new(
                "max-evals",
                format!("must be at least lambda = {}", self.base_lambda()),
            ));
        }
        if !(self.restart_mult > 1.0 && self.restart_mult.is_finite()) {
            return Err(ConfigError::new("restart-mult", "must be greater than 1"));
        }
        if self.stop_fitness.is_nan() {
            return Err(ConfigError::new("stop-fitness", "must be a number"));
        }
        self.termination
            .validate()
            .map_err(|e| ConfigError::new(e.name.replace('_', "-"), e.to_string()))?;
        if let Some((lo, hi)) = self.bounds {
            BoxBounds::uniform(self.dim, lo, hi)
                .map_err(|e| ConfigError::new("bounds", e.to_string()))?;
            if !(self.penalty_alpha > 0.0 && self.penalty_alpha.is_finite()) {
                return Err(ConfigError::new(
                    "penalty-alpha",
                    "must be positive and finite",
                ));
            }
        }
        if self.log_every == 0 {
            return Err(ConfigError::new("log-every", "must be at least 1"));
        }
        if self.checkpoint_every == 0 {
            return Err(ConfigError::new("checkpoint-every", "must be at least 1"));
        }
        if self.threads == 0 {
            return Err(ConfigError::new("threads", "must be at least 1"));
        }
        Ok(())
    }
}

/// Command-line interface. Every option may also be given in the `--config`
/// file as `name = value` (dashes or underscores); flags take precedence.
#[derive(Debug, Default, Parser)]
#[command(name = "purecma", version, about = "CMA-ES benchmark runner")]
pub struct Cli {
    /// Benchmark: sphere, elli, cigar, tablet or rosenbrock.
    #[arg(long)]
    pub objective: Option<String>,
    #[arg(long)]
    pub dim: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// Initial step size (default 0.3·(b−a) for a uniform mean, else 0.5).
    #[arg(long)]
    pub sigma0: Option<String>,
    /// Comma-separated vector, or `uniform:a,b`.
    #[arg(long, allow_hyphen_values = true)]
    pub mean: Option<String>,
    #[arg(long)]
    pub lambda: Option<String>,
    /// Evaluation budget over all legs (default 1000·n²).
    #[arg(long)]
    pub max_evals: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub stop_fitness: Option<String>,
    /// Number of restarts with increased population size.
    #[arg(long)]
    pub restarts: Option<String>,
    #[arg(long)]
    pub restart_mult: Option<String>,
    #[arg(long)]
    pub tol_fun: Option<String>,
    #[arg(long)]
    pub tol_x: Option<String>,
    #[arg(long)]
    pub max_cond: Option<String>,
    #[arg(long)]
    pub tol_x_up: Option<String>,
    /// Comma-separated termination criteria to switch off.
    #[arg(long)]
    pub disable: Option<String>,
    /// Box constraint `a,b` applied to every coordinate via repair penalty.
    #[arg(long, allow_hyphen_values = true)]
    pub bounds: Option<String>,
    #[arg(long)]
    pub penalty_alpha: Option<String>,
    /// Log destination: a path, or `-` for stdout.
    #[arg(long)]
    pub log: Option<String>,
    /// `csv` or `jsonl`.
    #[arg(long)]
    pub log_format: Option<String>,
    #[arg(long)]
    pub log_every: Option<String>,
    #[arg(long)]
    pub checkpoint: Option<String>,
    #[arg(long)]
    pub checkpoint_every: Option<String>,
    /// Worker threads for fitness evaluation.
    #[arg(long)]
    pub threads: Option<String>,
    /// Continue a run from a checkpoint file.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// File of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl Cli {
    fn flag_values(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("objective", &self.objective),
            ("dim", &self.dim),
            ("seed", &self.seed),
            ("sigma0", &self.sigma0),
            ("mean", &self.mean),
            ("lambda", &self.lambda),
            ("max-evals", &self.max_evals),
            ("stop-fitness", &self.stop_fitness),
            ("restarts", &self.restarts),
            ("restart-mult", &self.restart_mult),
            ("tol-fun", &self.tol_fun),
            ("tol-x", &self.tol_x),
            ("max-cond", &self.max_cond),
            ("tol-x-up", &self.tol_x_up),
            ("disable", &self.disable),
            ("bounds", &self.bounds),
            ("penalty-alpha", &self.penalty_alpha),
            ("log", &self.log),
            ("log-format", &self.log_format),
            ("log-every", &self.log_every),
            ("checkpoint", &self.checkpoint),
            ("checkpoint-every", &self.checkpoint_every),
            ("threads", &self.threads),
        ]
    }

    /// Merges the config file (if any) with the flags into a validated
    /// configuration.
    pub fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let mut map = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| ConfigError::new("config", format!("{}: {e}", path.display())))?;
                parse_config_file(&text)?
            }
            None => BTreeMap::new(),
        };
        for (key, value) in self.flag_values() {
            if let Some(v) = value {
                map.insert(key.to_string(), v.clone());
            }
        }
        config_from_map(&map)
    }
}

pub const KNOWN_KEYS: [&str; 23] = [
    "objective",
    "dim",
    "seed",
    "sigma0",
    "mean",
    "lambda",
    "max-evals",
    "stop-fitness",
    "restarts",
    "restart-mult",
    "tol-fun",
    "tol-x",
    "max-cond",
    "tol-x-up",
    "disable",
    "bounds",
    "penalty-alpha",
    "log",
    "log-format",
    "log-every",
    "checkpoint",
    "checkpoint-every",
    "threads",
];

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            ConfigError::new(
                "config",
                format!("line {}: expected key = value", lineno + 1),
            )
        })?;
        let key = key.trim().replace('_', "-");
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(ConfigError::new(
                "config",
                format!("line {}: unknown key '{key}'", lineno + 1),
            ));
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

fn parse<T: std::str::FromStr>(field: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| ConfigError::new(field, format!("'{value}': {e}")))
}

fn parse_list(field: &str, value: &str) -> Result<Vec<f64>, ConfigError> {
    value.split(',').map(|v| parse(field, v)).collect()
}

fn parse_pair(field: &str, value: &str) -> Result<(f64, f64), ConfigError> {
    match parse_list(field, value)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(ConfigError::new(
            field,
            format!("'{value}': expected two numbers a,b"),
        )),
    }
}

pub fn parse_mean(value: &str) -> Result<MeanSpec, ConfigError> {
    match value.trim().strip_prefix("uniform:") {
        Some(range) => {
            let (lower, upper) = parse_pair("mean", range)?;
            Ok(MeanSpec::Uniform { lower, upper })
        }
        None => Ok(MeanSpec::Explicit(parse_list("mean", value)?)),
    }
}

/// Builds a configuration from normalized keys; `objective` and `dim` are
/// required.
pub fn config_from_map(map: &BTreeMap<String, String>) -> Result<RunConfig, ConfigError> {
    let get = |k: &str| map.get(k).map(String::as_str);
    let objective = get("objective").ok_or_else(|| ConfigError::new("objective", "is required"))?;
    let dim: usize = parse(
        "dim",
        get("dim").ok_or_else(|| ConfigError::new("dim", "is required"))?,
    )?;
    let mut cfg = RunConfig::new(objective, dim);

    if let Some(v) = get("seed") {
        cfg.seed = parse("seed", v)?;
    }
    if let Some(v) = get("mean") {
        cfg.mean = parse_mean(v)?;
    }
    cfg.sigma0 = match (get("sigma0"), &cfg.mean) {
        (Some(v), _) => parse("sigma0", v)?,
        (None, MeanSpec::Uniform { lower, upper }) => 0.3 * (upper - lower),
        (None, MeanSpec::Explicit(_)) => 0.5,
    };
    if let Some(v) = get("lambda") {
        cfg.lambda = Some(parse("lambda", v)?);
    }
    if let Some(v) = get("max-evals") {
        cfg.max_evals = parse::<f64>("max-evals", v).and_then(|f| {
            if f >= 0.0 && f.fract() == 0.0 && f < u64::MAX as f64 {
                Ok(f as u64)
            } else {
                Err(ConfigError::new(
                    "max-evals",
                    format!("'{v}': not a whole number"),
                ))
            }
        })?;
    }
    if let Some(v) = get("stop-fitness") {
        cfg.stop_fitness = parse("stop-fitness", v)?;
    }
    if let Some(v) = get("restarts") {
        cfg.restarts = parse("restarts", v)?;
    }
    if let Some(v) = get("restart-mult") {
        cfg.restart_mult = parse("restart-mult", v)?;
    }
    if let Some(v) = get("tol-fun") {
        cfg.termination.tol_fun = parse("tol-fun", v)?;
    }
    if let Some(v) = get("tol-x") {
        cfg.termination.tol_x_rel = parse("tol-x", v)?;
    }
    if let Some(v) = get("max-cond") {
        cfg.termination.max_cond = parse("max-cond", v)?;
    }
    if let Some(v) = get("tol-x-up") {
        cfg.termination.tol_x_up = parse("tol-x-up", v)?;
    }
    if let Some(v) = get("disable") {
        for name in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let c: Criterion = parse("disable", name)?;
            cfg.termination.enabled.remove(&c);
        }
    }
    if let Some(v) = get("bounds") {
        cfg.bounds = Some(parse_pair("bounds", v)?);
    }
    if let Some(v) = get("penalty-alpha") {
        cfg.penalty_alpha = parse("penalty-alpha", v)?;
    }
    if let Some(v) = get("log") {
        cfg.log = Some(match v {
            "-" => LogTarget::Stdout,
            path => LogTarget::File(PathBuf::from(path)),
        });
    }
    if let Some(v) = get("log-format") {
        cfg.log_format = match v.to_ascii_lowercase().as_str() {
            "csv" => LogFormat::Csv,
            "jsonl" => LogFormat::Jsonl,
            other => {
                return Err(ConfigError::new(
                    "log-format",
                    format!("'{other}': expected csv or jsonl"),
                ))
            }
        };
    }
    if let Some(v) = get("log-every") {
        cfg.log_every = parse("log-every", v)?;
    }
    if let Some(v) = get("checkpoint") {
        cfg.checkpoint = Some(PathBuf::from(v));
    }
    if let Some(v) = get("checkpoint-every") {
        cfg.checkpoint_every = parse("checkpoint-every", v)?;
    }
    if let Some(v) = get("threads") {
        cfg.threads = parse("threads", v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}
