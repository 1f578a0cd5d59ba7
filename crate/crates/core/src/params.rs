//! Default strategy parameters.
//!
//! The circular dependency between the weights, `c_mu` and `mu_eff` is broken
//! by ordering: `mu_eff` and `mu_eff_minus` depend only on the relative sizes
//! of the raw weights, so they come first, then `c_1`/`c_mu`, then the three
//! bounds on the negative weight mass, then the final weights.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamsError {
    #[error("population size must be at least 2, got {0}")]
    InvalidLambda(usize),
    #[error("dimension must be at least 1")]
    InvalidDimension,
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("invalid override {name} = {value}")]
    InvalidOverride { name: &'static str, value: f64 },
    #[error("parameter invariants violated: {}", join_violations(.0))]
    Violations(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// A broken invariant of [`StrategyParams`] together with the offending value.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub invariant: &'static str,
    pub value: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (got {})", self.invariant, self.value)
    }
}

/// The complete, immutable parameter set of one run.
///
/// Field names match the keys written to run-log headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyParams {
    pub n: usize,
    pub lambda: usize,
    /// Number of strictly positive weights.
    pub mu: usize,
    /// Length `lambda`, nonincreasing; positives sum to one.
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub mu_eff_minus: f64,
    pub c_m: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    /// Approximation of `E‖N(0, I)‖`.
    pub chi_n: f64,
    pub alpha_cov: f64,
}

/// `4 + ⌊3 ln n⌋`.
pub fn default_lambda(n: usize) -> usize {
    assert!(n >= 1, "dimension must be positive");
    4 + (3.0 * (n as f64).ln()).floor() as usize
}

/// `ln((λ+1)/2) − ln i` for `i = 1..=λ`.
pub fn raw_weights(lambda: usize) -> Vec<f64> {
    let head = ((lambda as f64 + 1.0) / 2.0).ln();
    (1..=lambda).map(|i| head - (i as f64).ln()).collect()
}

/// `√n·(1 − 1/(4n) + 1/(21n²))`.
pub fn expected_norm(n: usize) -> f64 {
    let n = n as f64;
    n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n))
}

/// `(Σw)² / Σw²`; zero for an empty slice.
fn selection_mass(w: &[f64]) -> f64 {
    let sum: f64 = w.iter().sum();
    let sq: f64 = w.iter().map(|x| x * x).sum();
    if sq == 0.0 {
        0.0
    } else {
        sum * sum / sq
    }
}

/// The three upper bounds on the total negative weight mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegativeMassBounds {
    /// `1 + c_1/c_mu`: cancels the decay of `C`.
    pub alpha_mu: f64,
    /// `1 + 2·mu_eff_minus/(mu_eff + 2)`.
    pub alpha_mu_eff: f64,
    /// `(1 − c_1 − c_mu)/(n·c_mu)`: keeps `C` positive definite.
    pub alpha_pos_def: f64,
}

impl NegativeMassBounds {
    pub fn compute(n: usize, mu_eff: f64, mu_eff_minus: f64, c_1: f64, c_mu: f64) -> Self {
        // With c_mu = 0 the negative weights are inert; only alpha_mu_eff is finite.
        let (alpha_mu, alpha_pos_def) = if c_mu > 0.0 {
            (1.0 + c_1 / c_mu, (1.0 - c_1 - c_mu) / (n as f64 * c_mu))
        } else {
            (f64::INFINITY, f64::INFINITY)
        };
        Self {
            alpha_mu,
            alpha_mu_eff: 1.0 + 2.0 * mu_eff_minus / (mu_eff + 2.0),
            alpha_pos_def,
        }
    }

    pub fn min(&self) -> f64 {
        self.alpha_mu.min(self.alpha_mu_eff).min(self.alpha_pos_def)
    }
}

impl StrategyParams {
    /// Defaults for dimension `n` and the default population size.
    pub fn new(n: usize) -> Result<Self, ParamsError> {
        Self::builder(n).build()
    }

    pub fn with_lambda(n: usize, lambda: usize) -> Result<Self, ParamsError> {
        Self::builder(n).lambda(lambda).build()
    }

    pub fn builder(n: usize) -> ParamsBuilder {
        ParamsBuilder {
            n,
            lambda: None,
            alpha_cov: 2.0,
            c_m: 1.0,
            raw: None,
        }
    }

    /// Derives all constants from raw weights.
    ///
    /// `raw` must be nonincreasing with at least one strictly positive entry.
    /// Nonnegative entries are normalized to sum to one; negative entries are
    /// scaled so their absolute sum equals the smallest of the three bounds.
    pub fn finalize(
        n: usize,
        lambda: usize,
        raw: &[f64],
        alpha_cov: f64,
    ) -> Result<Self, ParamsError> {
        if n == 0 {
            return Err(ParamsError::InvalidDimension);
        }
        if lambda < 2 {
            return Err(ParamsError::InvalidLambda(lambda));
        }
        if raw.len() != lambda {
            return Err(ParamsError::InvalidWeights(format!(
                "expected {lambda} weights, got {}",
                raw.len()
            )));
        }
        if raw.iter().any(|w| !w.is_finite()) {
            return Err(ParamsError::InvalidWeights("non-finite weight".into()));
        }
        if raw.windows(2).any(|w| w[1] > w[0]) {
            return Err(ParamsError::InvalidWeights(
                "weights must be nonincreasing".into(),
            ));
        }
        if !(alpha_cov >= 0.0 && alpha_cov.is_finite()) {
            return Err(ParamsError::InvalidOverride {
                name: "alpha_cov",
                value: alpha_cov,
            });
        }

        let positive: Vec<f64> = raw.iter().copied().filter(|&w| w > 0.0).collect();
        let negative: Vec<f64> = raw.iter().copied().filter(|&w| w < 0.0).collect();
        let mu = positive.len();
        if mu == 0 {
            return Err(ParamsError::InvalidWeights("no positive weight".into()));
        }

        let mu_eff = selection_mass(&positive);
        let mu_eff_minus = selection_mass(&negative);

        let nf = n as f64;
        let c_1 = alpha_cov / ((nf + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1).min(
            alpha_cov * (mu_eff - 2.0 + 1.0 / mu_eff)
                / ((nf + 2.0).powi(2) + alpha_cov * mu_eff / 2.0),
        );

        let bound = NegativeMassBounds::compute(n, mu_eff, mu_eff_minus, c_1, c_mu).min();
        let pos_sum: f64 = positive.iter().sum();
        let neg_mass: f64 = -negative.iter().sum::<f64>();
        let weights = raw
            .iter()
            .map(|&w| {
                if w >= 0.0 {
                    w / pos_sum
                } else {
                    bound * w / neg_mass
                }
            })
            .collect();

        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);

        Ok(Self {
            n,
            lambda,
            mu,
            weights,
            mu_eff,
            mu_eff_minus,
            c_m: 1.0,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n: expected_norm(n),
            alpha_cov,
        })
    }

    /// The positive weights `w_1..w_mu`.
    pub fn positive_weights(&self) -> &[f64] {
        &self.weights[..self.mu]
    }

    pub fn negative_mass(&self) -> f64 {
        -self.weights.iter().filter(|&&w| w < 0.0).sum::<f64>()
    }

    pub fn bounds(&self) -> NegativeMassBounds {
        NegativeMassBounds::compute(self.n, self.mu_eff, self.mu_eff_minus, self.c_1, self.c_mu)
    }

    /// Every broken invariant; empty iff the set is consistent.
    pub fn violations(&self) -> Vec<Violation> {
        validate_overrides(self)
    }
}

/// Checks every invariant of a candidate parameter set.
pub fn validate_overrides(p: &StrategyParams) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut check = |ok: bool, invariant: &'static str, value: f64| {
        if !ok {
            out.push(Violation { invariant, value });
        }
    };

    check(p.n >= 1, "n >= 1", p.n as f64);
    check(p.lambda >= 2, "lambda >= 2", p.lambda as f64);
    check(
        p.weights.len() == p.lambda,
        "weights.len() == lambda",
        p.weights.len() as f64,
    );

    let positives = p.weights.iter().filter(|&&w| w > 0.0).count();
    check(
        positives == p.mu,
        "mu == number of positive weights",
        p.mu as f64,
    );
    check(p.mu >= 1, "mu >= 1", p.mu as f64);
    if let Some(w) = p.weights.windows(2).find(|w| w[1] > w[0]) {
        check(false, "weights nonincreasing", w[1]);
    }

    let pos_sum: f64 = p.weights.iter().filter(|&&w| w > 0.0).sum();
    check(
        (pos_sum - 1.0).abs() <= SUM_TOL,
        "positive weights sum to 1",
        pos_sum,
    );

    let mu = p.mu as f64;
    check(
        p.mu_eff >= 1.0 - SUM_TOL && p.mu_eff <= mu * (1.0 + SUM_TOL),
        "1 <= mu_eff <= mu",
        p.mu_eff,
    );

    for (name, v) in [
        ("c_m > 0", p.c_m),
        ("c_sigma > 0", p.c_sigma),
        ("c_c > 0", p.c_c),
    ] {
        check(v > 0.0 && v.is_finite(), name, v);
    }
    for (name, v) in [("c_1 >= 0", p.c_1), ("c_mu >= 0", p.c_mu)] {
        check(v >= 0.0 && v.is_finite(), name, v);
    }
    check(
        p.c_1 + p.c_mu <= 1.0 + f64::EPSILON,
        "c_1 + c_mu <= 1",
        p.c_1 + p.c_mu,
    );
    check(p.c_sigma < 1.0, "c_sigma < 1", p.c_sigma);
    check(p.c_c <= 1.0, "c_c <= 1", p.c_c);
    check(p.c_m <= 1.0, "c_m <= 1", p.c_m);
    check(
        p.d_sigma >= 1.0 && p.d_sigma.is_finite(),
        "d_sigma >= 1",
        p.d_sigma,
    );
    check(p.chi_n > 0.0 && p.chi_n.is_finite(), "chi_n > 0", p.chi_n);

    if p.weights.iter().any(|&w| w < 0.0) && p.n >= 1 {
        let bound = p.bounds().min();
        let mass = p.negative_mass();
        check(
            (mass - bound).abs() <= SUM_TOL * bound.max(1.0),
            "negative weight mass equals min(alpha_mu, alpha_mu_eff, alpha_pos_def)",
            mass,
        );
    }
    out
}

/// Overrides permitted on top of the defaults: population size, `alpha_cov`,
/// `c_m`, and the raw weight vector. Everything else is derived.
#[derive(Debug, Clone)]
pub struct ParamsBuilder {
    n: usize,
    lambda: Option<usize>,
    alpha_cov: f64,
    c_m: f64,
    raw: Option<Vec<f64>>,
}

impl ParamsBuilder {
    pub fn lambda(mut self, lambda: usize) -> Self {
        self.lambda = Some(lambda);
        self
    }

    /// `0` switches covariance adaptation off entirely (`c_1 = c_mu = 0`).
    pub fn alpha_cov(mut self, alpha_cov: f64) -> Self {
        self.alpha_cov = alpha_cov;
        self
    }

    pub fn c_m(mut self, c_m: f64) -> Self {
        self.c_m = c_m;
        self
    }

    /// Raw (unnormalized) weights, one per offspring.
    pub fn raw_weights(mut self, raw: Vec<f64>) -> Self {
        self.raw = Some(raw);
        self
    }

    /// Drops the negative weights, leaving zeros after rank `⌊λ/2⌋`.
    pub fn positive_only(mut self) -> Self {
        let lambda = self.resolved_lambda();
        let raw = self.raw.take().unwrap_or_else(|| raw_weights(lambda));
        self.raw = Some(raw.into_iter().map(|w| w.max(0.0)).collect());
        self
    }

    fn resolved_lambda(&self) -> usize {
        self.lambda
            .or_else(|| self.raw.as_ref().map(Vec::len))
            .unwrap_or_else(|| default_lambda(self.n.max(1)))
    }

    pub fn build(self) -> Result<StrategyParams, ParamsError> {
        if self.n == 0 {
            return Err(ParamsError::InvalidDimension);
        }
        let lambda = self.resolved_lambda();
        let raw = self.raw.unwrap_or_else(|| raw_weights(lambda));
        if !(self.c_m > 0.0 && self.c_m <= 1.0) {
            return Err(ParamsError::InvalidOverride {
                name: "c_m",
                value: self.c_m,
            });
        }
        let mut p = StrategyParams::finalize(self.n, lambda, &raw, self.alpha_cov)?;
        p.c_m = self.c_m;
        let violations = p.violations();
        if violations.is_empty() {
            Ok(p)
        } else {
            Err(ParamsError::Violations(violations))
        }
    }
}
