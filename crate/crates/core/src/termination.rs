//! Stopping criteria evaluated after every generation.
//!
//! [`check`] is a pure function of the engine state, a rolling [`History`] of
//! per-generation fitness statistics and a [`TerminationConfig`]. All enabled
//! criteria are evaluated so the caller sees the complete triggered set.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{median_of_sorted, Engine, GenerationReport};

/// Upper bound on the number of generations kept for stagnation detection.
pub const MAX_HISTORY: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Criterion {
    NoEffectAxis,
    NoEffectCoord,
    ConditionCov,
    EqualFunValues,
    Stagnation,
    TolXUp,
    TolFun,
    TolX,
}

impl Criterion {
    pub const ALL: [Criterion; 8] = [
        Criterion::NoEffectAxis,
        Criterion::NoEffectCoord,
        Criterion::ConditionCov,
        Criterion::EqualFunValues,
        Criterion::Stagnation,
        Criterion::TolXUp,
        Criterion::TolFun,
        Criterion::TolX,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::NoEffectAxis => "NoEffectAxis",
            Criterion::NoEffectCoord => "NoEffectCoord",
            Criterion::ConditionCov => "ConditionCov",
            Criterion::EqualFunValues => "EqualFunValues",
            Criterion::Stagnation => "Stagnation",
            Criterion::TolXUp => "TolXUp",
            Criterion::TolFun => "TolFun",
            Criterion::TolX => "TolX",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown termination criterion '{0}'")]
pub struct UnknownCriterion(pub String);

impl FromStr for Criterion {
    type Err = UnknownCriterion;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Criterion::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownCriterion(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("termination tolerance {name} must be positive and finite, got {value}")]
pub struct InvalidTolerance {
    pub name: &'static str,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminationConfig {
    pub tol_fun: f64,
    /// Multiplied by the initial step size.
    pub tol_x_rel: f64,
    pub max_cond: f64,
    pub tol_x_up: f64,
    pub enabled: BTreeSet<Criterion>,
}

impl Default for TerminationConfig {
    fn default() -> Self {
        Self {
            tol_fun: 1e-12,
            tol_x_rel: 1e-12,
            max_cond: 1e14,
            tol_x_up: 1e4,
            enabled: Criterion::ALL.into_iter().collect(),
        }
    }
}

impl TerminationConfig {
    pub fn validate(&self) -> Result<(), InvalidTolerance> {
        for (name, value) in [
            ("tol_fun", self.tol_fun),
            ("tol_x_rel", self.tol_x_rel),
            ("max_cond", self.max_cond),
            ("tol_x_up", self.tol_x_up),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(InvalidTolerance { name, value });
            }
        }
        Ok(())
    }
}

/// Rolling record of best and median fitness per generation, plus the
/// reference scales of the run's first generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    n: usize,
    lambda: usize,
    best: VecDeque<f64>,
    median: VecDeque<f64>,
    current_min: f64,
    current_max: f64,
    initial_sigma: f64,
    initial_max_axis: f64,
    gen_count: u64,
}

impl History {
    /// Takes `σ₀` and the initial largest axis length from `engine`.
    pub fn new(engine: &Engine) -> Self {
        let sigma = engine.sigma();
        Self::with_baseline(
            engine.dim(),
            engine.lambda(),
            sigma,
            sigma * engine.eigensystem().max_scale(),
        )
    }

    pub fn with_baseline(
        n: usize,
        lambda: usize,
        initial_sigma: f64,
        initial_max_axis: f64,
    ) -> Self {
        Self {
            n,
            lambda,
            best: VecDeque::new(),
            median: VecDeque::new(),
            current_min: f64::NAN,
            current_max: f64::NAN,
            initial_sigma,
            initial_max_axis,
            gen_count: 0,
        }
    }

    pub fn record(&mut self, report: &GenerationReport) {
        self.record_values(
            report.best_fitness,
            report.median_fitness,
            &report.fitnesses,
        );
    }

    /// Appends one generation given its best and median fitness and the full
    /// set of fitness values.
    pub fn record_values(&mut self, best: f64, median: f64, generation: &[f64]) {
        self.best.push_back(best);
        self.median.push_back(median);
        self.current_min = generation.iter().copied().fold(f64::INFINITY, f64::min);
        self.current_max = generation.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.gen_count += 1;
        let cap = self.capacity();
        while self.best.len() > cap {
            self.best.pop_front();
            self.median.pop_front();
        }
    }

    pub fn gen_count(&self) -> u64 {
        self.gen_count
    }

    pub fn initial_sigma(&self) -> f64 {
        self.initial_sigma
    }

    pub fn len(&self) -> usize {
        self.best.len()
    }

    pub fn is_empty(&self) -> bool {
        self.best.is_empty()
    }

    /// Generations needed before stagnation is assessed.
    pub fn min_capacity(&self) -> usize {
        (120.0 + 30.0 * self.n as f64 / self.lambda as f64).ceil() as usize
    }

    /// Retained generations: a fifth of the run, clamped to
    /// `[120 + 30n/λ, 20000]`.
    pub fn capacity(&self) -> usize {
        let fifth = (0.2 * self.gen_count as f64).ceil() as usize;
        fifth.max(self.min_capacity()).min(MAX_HISTORY)
    }

    /// Window shared by the TolFun and EqualFunValues criteria.
    pub fn window(&self) -> usize {
        10 + (30.0 * self.n as f64 / self.lambda as f64).ceil() as usize
    }

    fn recent_best(&self) -> Option<impl Iterator<Item = f64> + '_> {
        let w = self.window();
        (self.best.len() >= w).then(|| self.best.iter().skip(self.best.len() - w).copied())
    }
}

fn range(values: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    hi - lo
}

fn median(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    median_of_sorted(&v)
}

/// Every enabled criterion that fires for the current state.
pub fn check(engine: &Engine, hist: &History, cfg: &TerminationConfig) -> BTreeSet<Criterion> {
    Criterion::ALL
        .into_iter()
        .filter(|c| cfg.enabled.contains(c) && fires(*c, engine, hist, cfg))
        .collect()
}

fn fires(c: Criterion, engine: &Engine, hist: &History, cfg: &TerminationConfig) -> bool {
    let n = engine.dim();
    let m = engine.mean();
    let sigma = engine.sigma();
    let eig = engine.eigensystem();
    let cov = engine.covariance();
    match c {
        Criterion::NoEffectAxis => {
            let i = (engine.generation() % n as u64) as usize;
            let step = 0.1 * sigma * eig.scales()[i];
            let axis = eig.axis(i);
            m.iter().zip(&axis).all(|(mi, bi)| mi + step * bi == *mi)
        }
        Criterion::NoEffectCoord => {
            (0..n).any(|i| m[i] + 0.2 * sigma * cov.get(i, i).sqrt() == m[i])
        }
        Criterion::ConditionCov => eig.condition_number() > cfg.max_cond,
        Criterion::EqualFunValues => hist.recent_best().is_some_and(|r| range(r) == 0.0),
        Criterion::Stagnation => {
            let len = hist.len();
            if len < hist.min_capacity() {
                return false;
            }
            let k = (0.3 * len as f64).floor() as usize;
            let stalled = |h: &VecDeque<f64>| {
                let early = median(h.iter().take(k).copied());
                let late = median(h.iter().skip(len - k).copied());
                late >= early
            };
            stalled(&hist.best) && stalled(&hist.median)
        }
        Criterion::TolXUp => sigma * eig.max_scale() > cfg.tol_x_up * hist.initial_max_axis,
        Criterion::TolFun => hist.recent_best().is_some_and(|r| {
            let gen = [hist.current_min, hist.current_max];
            range(r.chain(gen)) < cfg.tol_fun
        }),
        Criterion::TolX => {
            let tol = cfg.tol_x_rel * hist.initial_sigma;
            (0..n).all(|i| sigma * cov.get(i, i).sqrt() < tol)
                && engine.p_c().iter().all(|p| sigma * p.abs() < tol)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SymMatrix;
    use crate::params::StrategyParams;

    fn engine_with(mean: Vec<f64>, sigma: f64, cov: SymMatrix) -> Engine {
        let n = mean.len();
        Engine::with_covariance(StrategyParams::new(n).unwrap(), mean, sigma, cov, 1).unwrap()
    }

    fn only(set: BTreeSet<Criterion>, c: Criterion) {
        assert_eq!(set, BTreeSet::from([c]));
    }

    #[test]
    fn fresh_state_fires_nothing() {
        let e = engine_with(vec![0.3; 4], 0.5, SymMatrix::identity(4));
        assert!(check(&e, &History::new(&e), &TerminationConfig::default()).is_empty());
    }

    #[test]
    fn condition_threshold() {
        let e = engine_with(vec![0.0; 2], 1.0, SymMatrix::from_diagonal(&[1.0, 1e15]));
        only(
            check(&e, &History::new(&e), &TerminationConfig::default()),
            Criterion::ConditionCov,
        );
        let e = engine_with(vec![0.0; 2], 1.0, SymMatrix::from_diagonal(&[1.0, 1e13]));
        assert!(check(&e, &History::new(&e), &TerminationConfig::default()).is_empty());
    }

    #[test]
    fn absorbed_coordinate_step() {
        let e = engine_with(vec![0.0, 1.0], 1e-20, SymMatrix::identity(2));
        only(
            check(&e, &History::new(&e), &TerminationConfig::default()),
            Criterion::NoEffectCoord,
        );
    }

    #[test]
    fn disabled_criteria_are_skipped() {
        let e = engine_with(vec![0.0; 2], 1.0, SymMatrix::from_diagonal(&[1.0, 1e15]));
        let mut cfg = TerminationConfig::default();
        cfg.enabled.remove(&Criterion::ConditionCov);
        assert!(check(&e, &History::new(&e), &cfg).is_empty());
    }

    #[test]
    fn check_is_pure() {
        let e = engine_with(
            vec![0.0, 1.0],
            1e-20,
            SymMatrix::from_diagonal(&[1.0, 1e15]),
        );
        let h = History::new(&e);
        let cfg = TerminationConfig::default();
        assert_eq!(check(&e, &h, &cfg), check(&e, &h, &cfg));
    }

    #[test]
    fn history_capacity_bounds() {
        let mut h = History::with_baseline(10, 10, 1.0, 1.0);
        assert_eq!(h.min_capacity(), 150);
        assert_eq!(h.window(), 40);
        for g in 0..2000 {
            h.record_values(g as f64, g as f64, &[g as f64]);
        }
        assert_eq!(h.len(), 400);
        for g in 0..200_000 {
            h.record_values(g as f64, g as f64, &[0.0]);
        }
        assert_eq!(h.len(), MAX_HISTORY);
    }

    #[test]
    fn axis_index_cycles() {
        // With n = 3 the tested axis is generation mod 3; only axis 0 has a
        // negligible scale here, so the criterion fires once every 3 generations.
        let cov = SymMatrix::from_diagonal(&[1e-40, 1.0, 1.0]);
        let params = StrategyParams::new(3).unwrap();
        let mut e = Engine::with_covariance(params, vec![1.0; 3], 1.0, cov, 3).unwrap();
        let cfg = TerminationConfig::default();
        let h = History::new(&e);
        let mut fired = Vec::new();
        for g in 0..6 {
            assert_eq!(e.generation(), g);
            fired.push(check(&e, &h, &cfg).contains(&Criterion::NoEffectAxis));
            let mut c = e.ask();
            for cand in &mut c {
                cand.fitness = Some(cand.x[1].powi(2) + cand.x[2].powi(2));
            }
            e.tell(&c).unwrap();
        }
        assert_eq!(fired, vec![true, false, false, true, false, false]);
    }

    #[test]
    fn parse_names() {
        for c in Criterion::ALL {
            assert_eq!(c.name().parse::<Criterion>().unwrap(), c);
        }
        assert!("Bogus".parse::<Criterion>().is_err());
    }

    #[test]
    fn config_rejects_nonpositive_tolerance() {
        let cfg = TerminationConfig {
            tol_fun: 0.0,
            ..TerminationConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(TerminationConfig::default().validate().is_ok());
    }
}
