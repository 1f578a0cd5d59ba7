//! Benchmark functions and penalty wrappers for constrained problems.

use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use thiserror::Error;

use crate::engine::{median_of_sorted, Candidate, Engine};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObjectiveError {
    #[error("{name} needs dimension at least {min}, got {got}")]
    DimensionTooSmall {
        name: &'static str,
        min: usize,
        got: usize,
    },
    #[error("unknown objective '{0}' (known: sphere, elli, cigar, tablet, rosenbrock)")]
    UnknownObjective(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid bounds in coordinate {index}: need lower < upper")]
    InvalidBounds { index: usize },
    #[error("penalty factor must be positive and finite, got {0}")]
    InvalidAlpha(f64),
    #[error("no feasible point in the generation to derive the penalty offset from")]
    NoFeasiblePoints,
}

/// A function to be minimized.
pub trait Objective: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> f64;
    /// Location and value of the global minimum, when known.
    fn known_optimum(&self) -> Option<(Vec<f64>, f64)> {
        None
    }
}

pub fn sphere(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Axis-parallel ellipsoid with condition number `1e6`.
pub fn elli(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return sphere(x);
    }
    let denom = (n - 1) as f64;
    x.iter()
        .enumerate()
        .map(|(i, v)| 1e6f64.powf(i as f64 / denom) * v * v)
        .sum()
}

pub fn cigar(x: &[f64]) -> f64 {
    match x.split_first() {
        Some((first, rest)) => first * first + 1e6 * sphere(rest),
        None => 0.0,
    }
}

pub fn tablet(x: &[f64]) -> f64 {
    match x.split_first() {
        Some((first, rest)) => 1e6 * first * first + sphere(rest),
        None => 0.0,
    }
}

pub fn rosenbrock(x: &[f64]) -> f64 {
    x.windows(2)
        .map(|w| 100.0 * (w[0] * w[0] - w[1]).powi(2) + (1.0 - w[0]).powi(2))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BenchmarkKind {
    Sphere,
    Elli,
    Cigar,
    Tablet,
    Rosenbrock,
}

impl BenchmarkKind {
    pub const ALL: [BenchmarkKind; 5] = [
        BenchmarkKind::Sphere,
        BenchmarkKind::Elli,
        BenchmarkKind::Cigar,
        BenchmarkKind::Tablet,
        BenchmarkKind::Rosenbrock,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchmarkKind::Sphere => "sphere",
            BenchmarkKind::Elli => "elli",
            BenchmarkKind::Cigar => "cigar",
            BenchmarkKind::Tablet => "tablet",
            BenchmarkKind::Rosenbrock => "rosenbrock",
        }
    }

    fn min_dim(self) -> usize {
        match self {
            BenchmarkKind::Elli | BenchmarkKind::Rosenbrock => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for BenchmarkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchmarkKind {
    type Err = ObjectiveError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase();
        let key = match key.as_str() {
            "felli" | "ellipsoid" => "elli",
            "fsphere" => "sphere",
            other => other,
        };
        BenchmarkKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| ObjectiveError::UnknownObjective(s.to_string()))
    }
}

/// A benchmark function bound to a dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Benchmark {
    kind: BenchmarkKind,
    n: usize,
}

impl Benchmark {
    pub fn new(kind: BenchmarkKind, n: usize) -> Result<Self, ObjectiveError> {
        if n < kind.min_dim() {
            return Err(ObjectiveError::DimensionTooSmall {
                name: kind.name(),
                min: kind.min_dim(),
                got: n,
            });
        }
        Ok(Self { kind, n })
    }

    pub fn kind(&self) -> BenchmarkKind {
        self.kind
    }
}

impl Objective for Benchmark {
    fn name(&self) -> &str {
        self.kind.name()
    }

    fn dim(&self) -> usize {
        self.n
    }

    fn eval(&self, x: &[f64]) -> f64 {
        match self.kind {
            BenchmarkKind::Sphere => sphere(x),
            BenchmarkKind::Elli => elli(x),
            BenchmarkKind::Cigar => cigar(x),
            BenchmarkKind::Tablet => tablet(x),
            BenchmarkKind::Rosenbrock => rosenbrock(x),
        }
    }

    fn known_optimum(&self) -> Option<(Vec<f64>, f64)> {
        let at = if self.kind == BenchmarkKind::Rosenbrock {
            1.0
        } else {
            0.0
        };
        Some((vec![at; self.n], 0.0))
    }
}

/// Looks up a benchmark by its registry key.
pub fn by_name(name: &str, n: usize) -> Result<Benchmark, ObjectiveError> {
    Benchmark::new(name.parse()?, n)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(u, v)| (u - v).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Gives infeasible points the fitness `f_max + ‖x − x_feasible‖`, where
/// `f_max` exceeds every feasible fitness evaluated so far.
///
/// The tracker of the worst feasible value makes this wrapper stateful; give
/// each run its own instance.
pub struct ResamplePenalty<O, F> {
    inner: O,
    is_feasible: F,
    x_feasible: Vec<f64>,
    worst_feasible: Mutex<f64>,
}

impl<O: Objective, F: Fn(&[f64]) -> bool + Send + Sync> ResamplePenalty<O, F> {
    /// `x_feasible` must satisfy `is_feasible`; its fitness seeds the tracker.
    pub fn new(inner: O, is_feasible: F, x_feasible: Vec<f64>) -> Result<Self, ObjectiveError> {
        if x_feasible.len() != inner.dim() {
            return Err(ObjectiveError::DimensionMismatch {
                expected: inner.dim(),
                got: x_feasible.len(),
            });
        }
        let seed = inner.eval(&x_feasible);
        Ok(Self {
            inner,
            is_feasible,
            x_feasible,
            worst_feasible: Mutex::new(seed),
        })
    }

    /// Current `f_max`: the worst feasible fitness plus a relative margin.
    pub fn f_max(&self) -> f64 {
        let worst = *self.worst_feasible.lock().unwrap();
        worst + worst.abs().max(1.0) * f64::EPSILON
    }

    pub fn is_feasible(&self, x: &[f64]) -> bool {
        (self.is_feasible)(x)
    }
}

impl<O: Objective, F: Fn(&[f64]) -> bool + Send + Sync> Objective for ResamplePenalty<O, F> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval(&self, x: &[f64]) -> f64 {
        if (self.is_feasible)(x) {
            let f = self.inner.eval(x);
            let mut worst = self.worst_feasible.lock().unwrap();
            if f > *worst {
                *worst = f;
            }
            f
        } else {
            self.f_max() + distance(x, &self.x_feasible)
        }
    }
}

/// Redraws `cand` until it is feasible or `max_tries` redraws are spent.
/// Returns whether the final candidate is feasible.
pub fn resample_infeasible(
    engine: &mut Engine,
    cand: &mut Candidate,
    is_feasible: impl Fn(&[f64]) -> bool,
    max_tries: usize,
) -> bool {
    for _ in 0..max_tries {
        if is_feasible(&cand.x) {
            return true;
        }
        engine.resample(cand);
    }
    is_feasible(&cand.x)
}

/// Axis-aligned box `lower ≤ x ≤ upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, ObjectiveError> {
        if lower.len() != upper.len() {
            return Err(ObjectiveError::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if let Some(index) = (0..lower.len())
            .find(|&i| lower[i].partial_cmp(&upper[i]) != Some(std::cmp::Ordering::Less))
        {
            return Err(ObjectiveError::InvalidBounds { index });
        }
        Ok(Self { lower, upper })
    }

    pub fn uniform(n: usize, lower: f64, upper: f64) -> Result<Self, ObjectiveError> {
        Self::new(vec![lower; n], vec![upper; n])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (lo, hi))| lo <= v && v <= hi)
    }

    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
            .collect()
    }
}

/// Evaluates the objective at the box-clamped point and adds
/// `alpha·‖x − clamp(x)‖²`. The repaired point is not fed back to the
/// optimizer.
///
/// `alpha` should put the penalty on the same scale as typical fitness
/// differences; it is not tuned automatically.
pub struct BoxRepairPenalty<O> {
    inner: O,
    bounds: BoxBounds,
    alpha: f64,
}

impl<O: Objective> BoxRepairPenalty<O> {
    pub fn new(inner: O, bounds: BoxBounds, alpha: f64) -> Result<Self, ObjectiveError> {
        if bounds.dim() != inner.dim() {
            return Err(ObjectiveError::DimensionMismatch {
                expected: inner.dim(),
                got: bounds.dim(),
            });
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(ObjectiveError::InvalidAlpha(alpha));
        }
        Ok(Self {
            inner,
            bounds,
            alpha,
        })
    }

    pub fn bounds(&self) -> &BoxBounds {
        &self.bounds
    }

    /// Returns the repaired point and the penalty term.
    pub fn repair(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let repaired = self.bounds.clamp(x);
        let sq: f64 = x.iter().zip(&repaired).map(|(a, b)| (a - b).powi(2)).sum();
        (repaired, self.alpha * sq)
    }
}

impl<O: Objective> Objective for BoxRepairPenalty<O> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let (repaired, penalty) = self.repair(x);
        if penalty == 0.0 {
            self.inner.eval(x)
        } else {
            self.inner.eval(&repaired) + penalty
        }
    }

    fn known_optimum(&self) -> Option<(Vec<f64>, f64)> {
        self.inner
            .known_optimum()
            .filter(|(x, _)| self.bounds.contains(x))
    }
}

/// How the offset for infeasible points is derived from a generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OffsetPolicy {
    Median,
    Quantile25,
    Best,
    Fixed(f64),
}

impl OffsetPolicy {
    /// Offset from the feasible fitness values of one generation.
    pub fn offset(&self, feasible: &[f64]) -> Result<f64, ObjectiveError> {
        if let OffsetPolicy::Fixed(v) = self {
            return Ok(*v);
        }
        if feasible.is_empty() {
            return Err(ObjectiveError::NoFeasiblePoints);
        }
        let mut sorted = feasible.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(match self {
            OffsetPolicy::Median => median_of_sorted(&sorted),
            OffsetPolicy::Best => sorted[0],
            OffsetPolicy::Quantile25 => {
                let pos = 0.25 * (sorted.len() - 1) as f64;
                let lo = pos.floor() as usize;
                let hi = pos.ceil() as usize;
                sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
            }
            OffsetPolicy::Fixed(_) => unreachable!(),
        })
    }
}

type Constraint = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Inequality constraints `c_i(x) ≤ 0` handled by a quadratic penalty on top
/// of a per-generation offset: infeasible points get
/// `f_offset + alpha·Σ_{c_i > 0} c_i(x)²`.
pub struct ConstraintPenalty<O> {
    inner: O,
    constraints: Vec<Constraint>,
    alpha: f64,
    policy: OffsetPolicy,
}

impl<O: Objective> ConstraintPenalty<O> {
    pub fn new(
        inner: O,
        constraints: Vec<Constraint>,
        alpha: f64,
        policy: OffsetPolicy,
    ) -> Result<Self, ObjectiveError> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(ObjectiveError::InvalidAlpha(alpha));
        }
        Ok(Self {
            inner,
            constraints,
            alpha,
            policy,
        })
    }

    /// `alpha·Σ_{c_i > 0} c_i(x)²`; zero exactly when `x` is feasible.
    pub fn violation(&self, x: &[f64]) -> f64 {
        self.alpha
            * self
                .constraints
                .iter()
                .map(|c| c(x))
                .filter(|&v| v > 0.0)
                .map(|v| v * v)
                .sum::<f64>()
    }

    /// Penalized fitness of a single point for a known offset.
    pub fn fitness_with_offset(&self, x: &[f64], f_offset: f64) -> f64 {
        let v = self.violation(x);
        if v == 0.0 {
            self.inner.eval(x)
        } else {
            f_offset + v
        }
    }

    /// Penalized fitness for a whole generation; the offset comes from the
    /// generation's feasible points according to the policy.
    pub fn evaluate_generation(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>, ObjectiveError> {
        let violations: Vec<f64> = xs.iter().map(|x| self.violation(x)).collect();
        let raw: Vec<Option<f64>> = xs
            .iter()
            .zip(&violations)
            .map(|(x, &v)| (v == 0.0).then(|| self.inner.eval(x)))
            .collect();
        if violations.iter().all(|&v| v == 0.0) {
            return Ok(raw.into_iter().flatten().collect());
        }
        let feasible: Vec<f64> = raw.iter().flatten().copied().collect();
        let offset = self.policy.offset(&feasible)?;
        Ok(raw
            .into_iter()
            .zip(violations)
            .map(|(f, v)| f.unwrap_or(offset + v))
            .collect())
    }
}
