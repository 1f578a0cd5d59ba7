//! The (μ/μ_W, λ)-CMA-ES as an ask/tell state machine.
//!
//! [`Engine::ask`] samples `λ` candidates `x = m + σ·B·D·z`; the caller
//! evaluates them and hands them back to [`Engine::tell`], which ranks them
//! and applies the mean, evolution-path, step-size and covariance updates.
//! Fitness values are used only through their ranking.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, eigendecompose, EigenSystem, LinalgError, SymMatrix};
use crate::params::StrategyParams;
use crate::rng::NormalSource;

/// Step sizes outside this range are treated as divergence.
pub const SIGMA_MIN: f64 = 1e-300;
pub const SIGMA_MAX: f64 = 1e300;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("step size must be positive and finite, got {0}")]
    InvalidSigma(f64),
    #[error("expected {expected} candidates, got {got}")]
    PopulationSize { expected: usize, got: usize },
    #[error("candidates belong to batch {got}, but the open batch is {expected:?}")]
    StaleBatch { expected: Option<u64>, got: u64 },
    #[error("candidate {index} has no fitness")]
    MissingFitness { index: usize },
    #[error("step size left [1e-300, 1e300]: {sigma:e}")]
    StepSizeOverflow { sigma: f64 },
    #[error("covariance matrix degenerated: {0}")]
    Condition(#[from] LinalgError),
}

/// One sampled search point.
///
/// `y = B·D·z` and `x = m + σ·y` are stored as computed at sampling time and
/// never recomputed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    pub fitness: Option<f64>,
    batch: u64,
}

impl Candidate {
    /// Identifier of the `ask` call that produced this candidate.
    pub fn batch(&self) -> u64 {
        self.batch
    }
}

/// Summary of one completed generation.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationReport {
    /// Number of completed generations, this one included.
    pub generation: u64,
    pub evals: u64,
    pub best_fitness: f64,
    pub best_x: Vec<f64>,
    pub median_fitness: f64,
    /// All fitness values of the generation in rank order.
    pub fitnesses: Vec<f64>,
    /// Step size after the update.
    pub sigma: f64,
    pub condition: f64,
    /// Smallest and largest principal-axis standard deviation, `σ·d_i`.
    pub min_axis: f64,
    pub max_axis: f64,
    pub h_sigma: bool,
    /// Flat fitness was detected and the step size increased.
    pub flat_fitness: bool,
    pub eigen_refreshed: bool,
}

/// Ranks candidates by ascending fitness.
///
/// Non-finite values (NaN, ±∞) rank strictly worst. Ties keep sample order.
pub fn rank(cands: &[Candidate]) -> Result<Vec<usize>, EngineError> {
    let fitness: Vec<f64> = cands
        .iter()
        .enumerate()
        .map(|(index, c)| c.fitness.ok_or(EngineError::MissingFitness { index }))
        .collect::<Result<_, _>>()?;
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (fitness[a], fitness[b]);
        match (fa.is_finite(), fb.is_finite()) {
            (true, true) => fa.partial_cmp(&fb).expect("finite values compare"),
            (true, false) => std::cmp::Ordering::Less,
            (false, true) => std::cmp::Ordering::Greater,
            (false, false) => std::cmp::Ordering::Equal,
        }
    });
    Ok(order)
}

/// Complete optimizer state. Serializes to a flat record for checkpointing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Engine {
    params: StrategyParams,
    mean: Vec<f64>,
    sigma: f64,
    cov: SymMatrix,
    eig: EigenSystem,
    p_sigma: Vec<f64>,
    p_c: Vec<f64>,
    generation: u64,
    eval_count: u64,
    evals_at_last_eigen: u64,
    rng: NormalSource,
    batches_issued: u64,
    open_batch: Option<u64>,
    always_refresh: bool,
}

impl Engine {
    /// Starts from `C = I` with zero evolution paths.
    pub fn new(
        params: StrategyParams,
        mean: Vec<f64>,
        sigma: f64,
        seed: u64,
    ) -> Result<Self, EngineError> {
        let n = params.n;
        Self::with_covariance(params, mean, sigma, SymMatrix::identity(n), seed)
    }

    /// Starts from a caller-chosen covariance, e.g. `diag(Δs_i²)` when the
    /// coordinates have different natural ranges.
    pub fn with_covariance(
        params: StrategyParams,
        mean: Vec<f64>,
        sigma: f64,
        cov: SymMatrix,
        seed: u64,
    ) -> Result<Self, EngineError> {
        let n = params.n;
        if mean.len() != n {
            return Err(EngineError::DimensionMismatch {
                expected: n,
                got: mean.len(),
            });
        }
        if cov.dim() != n {
            return Err(EngineError::DimensionMismatch {
                expected: n,
                got: cov.dim(),
            });
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(EngineError::InvalidSigma(sigma));
        }
        let eig = eigendecompose(&cov)?;
        Ok(Self {
            params,
            mean,
            sigma,
            cov,
            eig,
            p_sigma: vec![0.0; n],
            p_c: vec![0.0; n],
            generation: 0,
            eval_count: 0,
            evals_at_last_eigen: 0,
            rng: NormalSource::new(seed),
            batches_issued: 0,
            open_batch: None,
            always_refresh: false,
        })
    }

    /// Checks the structural consistency of a deserialized state.
    pub fn check_consistency(&self) -> Result<(), EngineError> {
        let n = self.params.n;
        for len in [
            self.mean.len(),
            self.p_sigma.len(),
            self.p_c.len(),
            self.cov.dim(),
            self.eig.dim(),
        ] {
            if len != n {
                return Err(EngineError::DimensionMismatch {
                    expected: n,
                    got: len,
                });
            }
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(EngineError::InvalidSigma(self.sigma));
        }
        Ok(())
    }

    pub fn params(&self) -> &StrategyParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.params.n
    }

    pub fn lambda(&self) -> usize {
        self.params.lambda
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn covariance(&self) -> &SymMatrix {
        &self.cov
    }

    /// The cached eigensystem, possibly older than [`Engine::covariance`].
    pub fn eigensystem(&self) -> &EigenSystem {
        &self.eig
    }

    pub fn p_sigma(&self) -> &[f64] {
        &self.p_sigma
    }

    pub fn p_c(&self) -> &[f64] {
        &self.p_c
    }

    /// Completed `tell` calls.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn eval_count(&self) -> u64 {
        self.eval_count
    }

    pub fn condition_number(&self) -> f64 {
        self.eig.condition_number()
    }

    pub fn rng(&self) -> &NormalSource {
        &self.rng
    }

    /// Recompute the eigensystem after every generation instead of lazily.
    pub fn set_always_refresh(&mut self, on: bool) {
        self.always_refresh = on;
    }

    /// Samples `λ` candidates, drawing exactly `λ·n` variates.
    pub fn ask(&mut self) -> Vec<Candidate> {
        let n = self.dim();
        let zs = (0..self.lambda())
            .map(|_| self.rng.normal_vector(n))
            .collect();
        self.sample_from(zs)
    }

    /// Samples from externally supplied standard-normal vectors instead of the
    /// internal stream.
    pub fn ask_from_normals(&mut self, zs: Vec<Vec<f64>>) -> Result<Vec<Candidate>, EngineError> {
        if zs.len() != self.lambda() {
            return Err(EngineError::PopulationSize {
                expected: self.lambda(),
                got: zs.len(),
            });
        }
        if let Some(z) = zs.iter().find(|z| z.len() != self.dim()) {
            return Err(EngineError::DimensionMismatch {
                expected: self.dim(),
                got: z.len(),
            });
        }
        Ok(self.sample_from(zs))
    }

    /// Redraws one candidate of the open batch, e.g. to reject an
    /// infeasible point.
    pub fn resample(&mut self, cand: &mut Candidate) {
        let z = self.rng.normal_vector(self.dim());
        *cand = self.candidate_from(z, cand.batch);
    }

    fn sample_from(&mut self, zs: Vec<Vec<f64>>) -> Vec<Candidate> {
        self.batches_issued += 1;
        let batch = self.batches_issued;
        self.open_batch = Some(batch);
        zs.into_iter()
            .map(|z| self.candidate_from(z, batch))
            .collect()
    }

    fn candidate_from(&self, z: Vec<f64>, batch: u64) -> Candidate {
        let y = self.eig.transform(&z);
        let x = self
            .mean
            .iter()
            .zip(&y)
            .map(|(m, y)| m + self.sigma * y)
            .collect();
        Candidate {
            z,
            y,
            x,
            fitness: None,
            batch,
        }
    }

    /// Consumes an evaluated batch from the latest [`Engine::ask`] and
    /// performs one full update.
    ///
    /// After an error the state is no longer meaningful and should be
    /// discarded.
    pub fn tell(&mut self, cands: &[Candidate]) -> Result<GenerationReport, EngineError> {
        let lambda = self.lambda();
        if cands.len() != lambda {
            return Err(EngineError::PopulationSize {
                expected: lambda,
                got: cands.len(),
            });
        }
        if let Some(c) = cands.iter().find(|c| Some(c.batch) != self.open_batch) {
            return Err(EngineError::StaleBatch {
                expected: self.open_batch,
                got: c.batch,
            });
        }
        let order = rank(cands)?;
        let ranked: Vec<&Candidate> = order.iter().map(|&i| &cands[i]).collect();
        self.open_batch = None;

        let n = self.dim();
        let mut y_w = vec![0.0; n];
        let mut z_w = vec![0.0; n];
        for (c, &w) in ranked.iter().zip(self.params.positive_weights()) {
            for i in 0..n {
                y_w[i] += w * c.y[i];
                z_w[i] += w * c.z[i];
            }
        }

        let step = self.params.c_m * self.sigma;
        for (m, y) in self.mean.iter_mut().zip(&y_w) {
            *m += step * y;
        }

        self.update_step_size_path(&y_w, Some(&z_w))?;
        self.update_step_size()?;
        let h_sigma = self.compute_h_sigma();
        self.update_cov_path(&y_w, h_sigma);
        let adjusted = self.active_weight_rescale(&ranked);
        self.update_covariance(&ranked, &adjusted, h_sigma);

        self.generation += 1;
        self.eval_count += lambda as u64;

        let fitnesses: Vec<f64> = ranked.iter().map(|c| c.fitness.unwrap()).collect();
        let flat_fitness = self.flat_fitness_escape(&fitnesses);
        check_sigma(self.sigma)?;
        let eigen_refreshed = self.maybe_refresh_eigensystem()?;

        Ok(GenerationReport {
            generation: self.generation,
            evals: self.eval_count,
            best_fitness: fitnesses[0],
            best_x: ranked[0].x.clone(),
            median_fitness: median_of_sorted(&fitnesses),
            fitnesses,
            sigma: self.sigma,
            condition: self.eig.condition_number(),
            min_axis: self.sigma * self.eig.min_scale(),
            max_axis: self.sigma * self.eig.max_scale(),
            h_sigma,
            flat_fitness,
            eigen_refreshed,
        })
    }

    /// `p_σ ← (1−c_σ)·p_σ + √(c_σ(2−c_σ)μ_eff)·C^{-1/2}·y_w`.
    ///
    /// With the weighted mean `z_w` of the selected `z` vectors available,
    /// `C^{-1/2}·y_w` is computed as `B·z_w`, which stays exact when the
    /// cached eigensystem is stale.
    pub fn update_step_size_path(
        &mut self,
        y_w: &[f64],
        z_w: Option<&[f64]>,
    ) -> Result<(), EngineError> {
        let whitened = match z_w {
            Some(z) => self.eig.rotate(z),
            None => self.eig.inv_sqrt_apply(y_w)?,
        };
        let cs = self.params.c_sigma;
        let gain = (cs * (2.0 - cs) * self.params.mu_eff).sqrt();
        for (p, w) in self.p_sigma.iter_mut().zip(&whitened) {
            *p = (1.0 - cs) * *p + gain * w;
        }
        Ok(())
    }

    /// `σ ← σ·exp((c_σ/d_σ)(‖p_σ‖/E‖N(0,I)‖ − 1))`.
    pub fn update_step_size(&mut self) -> Result<f64, EngineError> {
        let p = &self.params;
        let ratio = linalg::norm(&self.p_sigma) / p.chi_n;
        let sigma = self.sigma * ((p.c_sigma / p.d_sigma) * (ratio - 1.0)).exp();
        check_sigma(sigma)?;
        self.sigma = sigma;
        Ok(sigma)
    }

    /// Heaviside gate stalling the `p_c` update while `‖p_σ‖` is large.
    ///
    /// The exponent counts the generation being told, i.e. completed
    /// generations plus one.
    pub fn compute_h_sigma(&self) -> bool {
        let p = &self.params;
        let g = (self.generation + 1) as f64;
        let norm = linalg::norm(&self.p_sigma);
        let correction = (1.0 - (1.0 - p.c_sigma).powf(2.0 * g)).sqrt();
        norm / correction / p.chi_n < 1.4 + 2.0 / (p.n as f64 + 1.0)
    }

    /// `p_c ← (1−c_c)·p_c + h_σ·√(c_c(2−c_c)μ_eff)·y_w`.
    pub fn update_cov_path(&mut self, y_w: &[f64], h_sigma: bool) {
        let cc = self.params.c_c;
        if h_sigma {
            let gain = (cc * (2.0 - cc) * self.params.mu_eff).sqrt();
            for (p, y) in self.p_c.iter_mut().zip(y_w) {
                *p = (1.0 - cc) * *p + gain * y;
            }
        } else {
            for p in self.p_c.iter_mut() {
                *p *= 1.0 - cc;
            }
        }
    }

    /// Weights for the covariance update: negative weights are multiplied by
    /// `n/‖C^{-1/2}·y_{i:λ}‖²`, evaluated as `n/‖z_{i:λ}‖²`.
    pub fn active_weight_rescale(&self, ranked: &[&Candidate]) -> Vec<f64> {
        let n = self.dim() as f64;
        self.params
            .weights
            .iter()
            .zip(ranked)
            .map(|(&w, c)| {
                if w >= 0.0 {
                    return w;
                }
                let sq = linalg::dot(&c.z, &c.z);
                if sq > 0.0 {
                    w * n / sq
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// `C ← (1 + c_1δ(h_σ) − c_1 − c_μΣw°)·C + c_1·p_c·p_cᵀ + c_μ·Σ w°_i·y_{i:λ}·y_{i:λ}ᵀ`
    /// with `δ(h_σ) = (1 − h_σ)·c_c(2 − c_c)`.
    pub fn update_covariance(&mut self, ranked: &[&Candidate], weights: &[f64], h_sigma: bool) {
        let p = &self.params;
        let delta = if h_sigma { 0.0 } else { p.c_c * (2.0 - p.c_c) };
        let weight_sum: f64 = weights.iter().sum();
        let decay = 1.0 + p.c_1 * delta - p.c_1 - p.c_mu * weight_sum;
        let (c_1, c_mu) = (p.c_1, p.c_mu);

        let active: Vec<(f64, &[f64])> = weights
            .iter()
            .zip(ranked)
            .filter(|(w, _)| **w != 0.0)
            .map(|(&w, c)| (w, c.y.as_slice()))
            .collect();
        let old = self.cov.clone();
        let pc = &self.p_c;
        self.cov.fill_upper(|i, j| {
            let rank_mu: f64 = active.iter().map(|(w, y)| w * y[i] * y[j]).sum();
            decay * old.get(i, j) + c_1 * pc[i] * pc[j] + c_mu * rank_mu
        });
    }

    /// Recomputes `B` and `D` once more than `λ/((c_1+c_μ)·n·10)` evaluations
    /// have passed since the last decomposition. Returns whether it did.
    pub fn maybe_refresh_eigensystem(&mut self) -> Result<bool, EngineError> {
        let p = &self.params;
        let rate = p.c_1 + p.c_mu;
        let due = if self.always_refresh {
            true
        } else if rate > 0.0 {
            let threshold = p.lambda as f64 / (rate * p.n as f64 * 10.0);
            (self.eval_count - self.evals_at_last_eigen) as f64 > threshold
        } else {
            false
        };
        if !due {
            return Ok(false);
        }
        self.eig = eigendecompose(&self.cov)?;
        self.evals_at_last_eigen = self.eval_count;
        Ok(true)
    }

    /// If the best fitness equals the one at rank `⌈0.7λ⌉`, multiplies `σ`
    /// by `exp(0.2 + c_σ/d_σ)`. Expects fitnesses in rank order.
    pub fn flat_fitness_escape(&mut self, ranked_fitness: &[f64]) -> bool {
        let lambda = ranked_fitness.len();
        if lambda == 0 {
            return false;
        }
        let k = (7 * lambda).div_ceil(10).max(1);
        if ranked_fitness[0] == ranked_fitness[k - 1] {
            let p = &self.params;
            self.sigma *= (0.2 + p.c_sigma / p.d_sigma).exp();
            true
        } else {
            false
        }
    }
}

fn check_sigma(sigma: f64) -> Result<(), EngineError> {
    if (SIGMA_MIN..=SIGMA_MAX).contains(&sigma) {
        Ok(())
    } else {
        Err(EngineError::StepSizeOverflow { sigma })
    }
}

pub(crate) fn median_of_sorted(sorted: &[f64]) -> f64 {
    let len = sorted.len();
    if len == 0 {
        return f64::NAN;
    }
    if len % 2 == 1 {
        sorted[len / 2]
    } else {
        0.5 * (sorted[len / 2 - 1] + sorted[len / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::StrategyParams;

    fn engine(n: usize, seed: u64) -> Engine {
        Engine::new(StrategyParams::new(n).unwrap(), vec![0.0; n], 1.0, seed).unwrap()
    }

    fn evaluate(cands: &mut [Candidate], f: impl Fn(&[f64]) -> f64) {
        for c in cands.iter_mut() {
            c.fitness = Some(f(&c.x));
        }
    }

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    fn with_fitness(values: &[f64]) -> Vec<Candidate> {
        values
            .iter()
            .map(|&f| Candidate {
                z: vec![],
                y: vec![],
                x: vec![],
                fitness: Some(f),
                batch: 0,
            })
            .collect()
    }

    #[test]
    fn init_state() {
        let e = engine(10, 1);
        assert_eq!(e.condition_number(), 1.0);
        assert_eq!(e.covariance(), &SymMatrix::identity(10));
        assert!(e.p_sigma().iter().chain(e.p_c()).all(|&v| v == 0.0));
        assert_eq!(e.generation(), 0);
    }

    #[test]
    fn init_rejects_bad_input() {
        let p = StrategyParams::new(3).unwrap();
        assert_eq!(
            Engine::new(p.clone(), vec![0.0; 2], 1.0, 0).unwrap_err(),
            EngineError::DimensionMismatch {
                expected: 3,
                got: 2
            }
        );
        assert!(matches!(
            Engine::new(p.clone(), vec![0.0; 3], 0.0, 0),
            Err(EngineError::InvalidSigma(_))
        ));
        assert!(matches!(
            Engine::new(p, vec![0.0; 3], f64::NAN, 0),
            Err(EngineError::InvalidSigma(_))
        ));
    }

    #[test]
    fn identity_transport() {
        let mut e = engine(4, 3);
        for c in e.ask() {
            assert_eq!(c.x, c.z);
            assert_eq!(c.y, c.z);
        }
    }

    #[test]
    fn ask_consumes_lambda_times_n_variates() {
        let mut e = engine(5, 8);
        let cands = e.ask();
        let mut reference = NormalSource::new(8);
        let flat: Vec<f64> = cands.iter().flat_map(|c| c.z.clone()).collect();
        assert_eq!(flat, reference.normal_vector(8 * 5));
        assert_eq!(e.rng(), &reference);
    }

    #[test]
    fn diagonal_covariance_scales_first_coordinate() {
        let p = StrategyParams::new(2).unwrap();
        let mut e = Engine::with_covariance(
            p,
            vec![0.0; 2],
            1.0,
            SymMatrix::from_diagonal(&[4.0, 1.0]),
            1,
        )
        .unwrap();
        for c in e.ask() {
            // d is ascending, so B permutes the scaled coordinates back.
            assert_eq!(c.y, vec![2.0 * c.z[1], c.z[0]]);
        }
    }

    #[test]
    fn sample_covariance_matches_target() {
        let c = SymMatrix::new(2, vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        let p = StrategyParams::new(2).unwrap();
        let mut e = Engine::with_covariance(p, vec![0.0; 2], 1.0, c.clone(), 17).unwrap();
        let mut acc = [0.0; 3];
        let mut count = 0.0;
        while count < 1e5 {
            for cand in e.ask() {
                acc[0] += cand.y[0] * cand.y[0];
                acc[1] += cand.y[0] * cand.y[1];
                acc[2] += cand.y[1] * cand.y[1];
                count += 1.0;
            }
        }
        assert!((acc[0] / count - 2.0).abs() < 0.05);
        assert!((acc[1] / count - 1.0).abs() < 0.05);
        assert!((acc[2] / count - 2.0).abs() < 0.05);
    }

    #[test]
    fn ranking() {
        assert_eq!(
            rank(&with_fitness(&[3.0, 1.0, 2.0])).unwrap(),
            vec![1, 2, 0]
        );
        assert_eq!(
            rank(&with_fitness(&[5.0; 6])).unwrap(),
            vec![0, 1, 2, 3, 4, 5]
        );
        assert_eq!(
            rank(&with_fitness(&[
                f64::NAN,
                2.0,
                f64::INFINITY,
                1.0,
                f64::NAN
            ]))
            .unwrap(),
            vec![3, 1, 0, 2, 4]
        );
        let mut cands = with_fitness(&[1.0, 2.0]);
        cands[1].fitness = None;
        assert_eq!(rank(&cands), Err(EngineError::MissingFitness { index: 1 }));
    }

    #[test]
    fn tell_validates_batch() {
        let mut e = engine(3, 2);
        let mut old = e.ask();
        let mut fresh = e.ask();
        evaluate(&mut old, sphere);
        evaluate(&mut fresh, sphere);
        assert!(matches!(e.tell(&old), Err(EngineError::StaleBatch { .. })));
        assert!(matches!(
            e.tell(&fresh[1..]),
            Err(EngineError::PopulationSize { .. })
        ));
        e.tell(&fresh).unwrap();
        assert!(matches!(
            e.tell(&fresh),
            Err(EngineError::StaleBatch { .. })
        ));
    }

    #[test]
    fn tell_requires_fitness() {
        let mut e = engine(3, 2);
        let cands = e.ask();
        assert_eq!(
            e.tell(&cands),
            Err(EngineError::MissingFitness { index: 0 })
        );
    }

    #[test]
    fn step_size_path_special_cases() {
        let mut e = engine(3, 0);
        e.params.c_sigma = 1.0;
        e.params.mu_eff = 1.0;
        let y = [0.3, -1.2, 2.5];
        e.update_step_size_path(&y, None).unwrap();
        assert_eq!(e.p_sigma, y.to_vec());

        let mut e = engine(3, 0);
        e.update_step_size_path(&[0.0; 3], None).unwrap();
        assert_eq!(e.p_sigma, vec![0.0; 3]);

        for cs in [0.1f64, 0.5, 0.9] {
            let s = (1.0 - cs).powi(2) + (cs * (2.0 - cs)).sqrt().powi(2);
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn step_size_update_values() {
        let mut e = engine(10, 0);
        let chi = e.params.chi_n;
        e.p_sigma = vec![0.0; 10];
        e.p_sigma[0] = chi;
        assert_eq!(e.update_step_size().unwrap(), 1.0);

        let mut e = engine(10, 0);
        e.params.c_sigma = 0.3;
        e.params.d_sigma = 1.0;
        e.p_sigma[0] = 2.0 * e.params.chi_n;
        let s = e.update_step_size().unwrap();
        assert!((s - 0.3f64.exp()).abs() < 1e-15);

        let mut e = engine(10, 0);
        let expect = (-e.params.c_sigma / e.params.d_sigma).exp();
        assert_eq!(e.update_step_size().unwrap(), expect);
    }

    #[test]
    fn step_size_overflow_is_reported() {
        let mut e = engine(2, 0);
        e.p_sigma = vec![1e6, 0.0];
        assert!(matches!(
            e.update_step_size(),
            Err(EngineError::StepSizeOverflow { .. })
        ));
        assert_eq!(e.sigma(), 1.0);
    }

    #[test]
    fn h_sigma_gate() {
        let mut e = engine(10, 0);
        e.generation = 1000;
        e.p_sigma[0] = e.params.chi_n;
        assert!(e.compute_h_sigma());
        e.p_sigma[0] = 3.0 * e.params.chi_n;
        assert!(!e.compute_h_sigma());

        // In the first generation the normalizer √(1 − (1−c_σ)²) inflates ‖p_σ‖.
        let mut e = engine(10, 0);
        e.params.c_sigma = 0.3;
        let denom = (1.0f64 - 0.49).sqrt();
        assert!((denom - 0.714_142_842_854_285).abs() < 1e-12);
        let threshold = 1.4 + 2.0 / 11.0;
        e.p_sigma[0] = 0.9 * threshold * e.params.chi_n;
        assert!(!e.compute_h_sigma());
        e.generation = 1000;
        assert!(e.compute_h_sigma());
    }

    #[test]
    fn cov_path_updates() {
        let mut e = engine(3, 0);
        e.p_c = vec![1.0, 2.0, 3.0];
        let cc = e.params.c_c;
        e.update_cov_path(&[5.0, 5.0, 5.0], false);
        assert_eq!(e.p_c, vec![1.0 - cc, 2.0 * (1.0 - cc), 3.0 * (1.0 - cc)]);

        let mut e = engine(3, 0);
        e.params.c_c = 1.0;
        e.params.mu_eff = 1.0;
        e.p_c = vec![9.0, 9.0, 9.0];
        e.update_cov_path(&[0.5, -0.5, 2.0], true);
        assert_eq!(e.p_c, vec![0.5, -0.5, 2.0]);
    }

    #[test]
    fn cov_path_converges_to_fixed_point() {
        let mut e = engine(3, 0);
        let y = [1.0, -2.0, 0.5];
        for _ in 0..2000 {
            e.update_cov_path(&y, true);
        }
        let p = &e.params;
        let factor = (p.mu_eff * (2.0 - p.c_c) / p.c_c).sqrt();
        for (pc, yi) in e.p_c.iter().zip(y) {
            assert!((pc - factor * yi).abs() < 1e-12);
        }
    }

    #[test]
    fn active_rescale() {
        let e = engine(4, 0);
        let make = |z: Vec<f64>| Candidate {
            z,
            y: vec![],
            x: vec![],
            fitness: Some(0.0),
            batch: 0,
        };
        // |z|² = n for every candidate leaves the weights unchanged.
        let unit: Vec<Candidate> = (0..e.lambda()).map(|_| make(vec![1.0; 4])).collect();
        let refs: Vec<&Candidate> = unit.iter().collect();
        assert_eq!(e.active_weight_rescale(&refs), e.params.weights);

        // |z|² = 2n halves negative weights, positive weights are untouched.
        let long: Vec<Candidate> = (0..e.lambda())
            .map(|_| make(vec![2f64.sqrt(), 2f64.sqrt(), 2f64.sqrt(), 2f64.sqrt()]))
            .collect();
        let refs: Vec<&Candidate> = long.iter().collect();
        let out = e.active_weight_rescale(&refs);
        for (o, w) in out.iter().zip(&e.params.weights) {
            if *w >= 0.0 {
                assert_eq!(o, w);
            } else {
                assert!((o - 0.5 * w).abs() < 1e-15);
            }
        }

        let zero: Vec<Candidate> = (0..e.lambda()).map(|_| make(vec![0.0; 4])).collect();
        let refs: Vec<&Candidate> = zero.iter().collect();
        let out = e.active_weight_rescale(&refs);
        assert!(out.iter().zip(&e.params.weights).all(|(o, w)| if *w < 0.0 {
            *o == 0.0
        } else {
            o == w
        }));
    }

    #[test]
    fn direct_rescale_example() {
        // w = −0.1, |z|² = 2n → −0.05
        let mut e = engine(2, 0);
        e.params.weights = vec![1.0, -0.1];
        e.params.lambda = 2;
        let c = Candidate {
            z: vec![2f64.sqrt(), 2f64.sqrt()],
            y: vec![],
            x: vec![],
            fitness: Some(0.0),
            batch: 0,
        };
        let out = e.active_weight_rescale(&[&c, &c]);
        assert!((out[1] + 0.05).abs() < 1e-16);
    }

    #[test]
    fn covariance_frozen_without_learning_rates() {
        let p = StrategyParams::builder(4).alpha_cov(0.0).build().unwrap();
        let start = SymMatrix::new(
            4,
            (0..16)
                .map(|k| if k % 5 == 0 { 2.0 } else { 0.1 })
                .collect(),
        )
        .unwrap();
        let mut e = Engine::with_covariance(p, vec![1.0; 4], 0.5, start.clone(), 4).unwrap();
        for _ in 0..50 {
            let mut c = e.ask();
            evaluate(&mut c, sphere);
            e.tell(&c).unwrap();
            assert_eq!(e.covariance(), &start);
        }
    }

    #[test]
    fn pure_rank_one_update() {
        let mut e = engine(3, 0);
        e.params.c_mu = 0.0;
        e.params.mu = 1;
        e.params.c_1 = 0.2;
        e.p_c = vec![1.0, 2.0, -1.0];
        let c = Candidate {
            z: vec![1.0; 3],
            y: vec![1.0; 3],
            x: vec![],
            fitness: Some(0.0),
            batch: 0,
        };
        let ranked = vec![&c; e.lambda()];
        let w = e.active_weight_rescale(&ranked);
        e.update_covariance(&ranked, &w, true);
        for i in 0..3 {
            for j in 0..3 {
                let id = if i == j { 1.0 } else { 0.0 };
                let expect = 0.8 * id + 0.2 * e.p_c[i] * e.p_c[j];
                assert!((e.cov.get(i, j) - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn variance_balance_with_unit_mahalanobis_lengths() {
        let e = engine(10, 0);
        let p = &e.params;
        let unit: Vec<Candidate> = (0..p.lambda)
            .map(|_| Candidate {
                z: vec![1.0; 10],
                y: vec![0.0; 10],
                x: vec![],
                fitness: Some(0.0),
                batch: 0,
            })
            .collect();
        let refs: Vec<&Candidate> = unit.iter().collect();
        let w = e.active_weight_rescale(&refs);
        let sum: f64 = w.iter().sum();
        assert!((p.c_1 + p.c_mu * sum).abs() < 1e-12);
        for h in [true, false] {
            let delta = if h { 0.0 } else { p.c_c * (2.0 - p.c_c) };
            let decay = 1.0 + p.c_1 * delta - p.c_1 - p.c_mu * sum;
            assert!((decay + p.c_1 + p.c_mu * sum - (1.0 + p.c_1 * delta)).abs() < 1e-15);
        }
    }

    #[test]
    fn refresh_cadence() {
        let mut e = engine(10, 0);
        assert!(!e.maybe_refresh_eigensystem().unwrap());

        // c_1 + c_mu = 0.02, n = λ = 10: threshold 5 evaluations, so every
        // generation of 10 evaluations exceeds it.
        e.params.c_1 = 0.01;
        e.params.c_mu = 0.01;
        e.eval_count = 5;
        assert!(!e.maybe_refresh_eigensystem().unwrap());
        e.eval_count = 10;
        assert!(e.maybe_refresh_eigensystem().unwrap());
        assert_eq!(e.evals_at_last_eigen, 10);

        // c_1 + c_mu = 0.002: threshold 50 evaluations, a refresh every 6th generation.
        e.params.c_1 = 0.001;
        e.params.c_mu = 0.001;
        let mut refreshed_at = Vec::new();
        for g in 2..=14 {
            e.eval_count = 10 * g;
            if e.maybe_refresh_eigensystem().unwrap() {
                refreshed_at.push(g);
            }
        }
        assert_eq!(refreshed_at, vec![7, 13]);
    }

    #[test]
    fn flat_fitness_detection() {
        let mut e = engine(10, 0);
        let distinct: Vec<f64> = (0..10).map(f64::from).collect();
        assert!(!e.flat_fitness_escape(&distinct));
        assert_eq!(e.sigma(), 1.0);

        assert!(e.flat_fitness_escape(&[2.0; 10]));
        assert!(e.sigma() > 1.0);

        // ⌈0.7·10⌉ = 7: the 7th value is the one compared.
        let mut e = engine(10, 0);
        let mut top7 = vec![1.0; 7];
        top7.extend([2.0, 3.0, 4.0]);
        assert!(e.flat_fitness_escape(&top7));
        let mut top6 = vec![1.0; 6];
        top6.extend([1.5, 2.0, 3.0, 4.0]);
        assert!(!e.flat_fitness_escape(&top6));
    }

    #[test]
    fn tell_on_sphere_makes_progress() {
        let mut e = Engine::new(StrategyParams::new(5).unwrap(), vec![3.0; 5], 1.0, 9).unwrap();
        let mut best = f64::INFINITY;
        for _ in 0..200 {
            let mut c = e.ask();
            evaluate(&mut c, sphere);
            let r = e.tell(&c).unwrap();
            best = best.min(r.best_fitness);
            assert_eq!(r.fitnesses.len(), e.lambda());
        }
        assert!(best < 1e-8, "best {best}");
    }

    #[test]
    fn candidate_chain_is_exact() {
        let mut e = engine(4, 21);
        for _ in 0..20 {
            let mut c = e.ask();
            for cand in &c {
                assert_eq!(cand.y, e.eigensystem().transform(&cand.z));
                for i in 0..4 {
                    assert_eq!(cand.x[i], e.mean()[i] + e.sigma() * cand.y[i]);
                }
            }
            evaluate(&mut c, |x| {
                x.iter()
                    .enumerate()
                    .map(|(i, v)| (i + 1) as f64 * v * v)
                    .sum()
            });
            e.tell(&c).unwrap();
        }
    }

    #[test]
    fn resample_keeps_batch_and_redraws() {
        let mut e = engine(3, 5);
        let mut c = e.ask();
        let before = c[0].clone();
        e.resample(&mut c[0]);
        assert_eq!(c[0].batch(), before.batch());
        assert_ne!(c[0].z, before.z);
        evaluate(&mut c, sphere);
        e.tell(&c).unwrap();
    }

    #[test]
    fn snapshot_round_trip() {
        let mut e = engine(4, 13);
        for _ in 0..5 {
            let mut c = e.ask();
            evaluate(&mut c, sphere);
            e.tell(&c).unwrap();
        }
        let json = serde_json::to_string(&e).unwrap();
        let mut back: Engine = serde_json::from_str(&json).unwrap();
        assert_eq!(back, e);
        back.check_consistency().unwrap();
        let mut a = e.ask();
        let mut b = back.ask();
        assert_eq!(a, b);
        evaluate(&mut a, sphere);
        evaluate(&mut b, sphere);
        assert_eq!(e.tell(&a).unwrap(), back.tell(&b).unwrap());
    }

    #[test]
    fn median_helper() {
        assert_eq!(median_of_sorted(&[1.0, 2.0, 3.0]), 2.0);
        assert_eq!(median_of_sorted(&[1.0, 2.0, 3.0, 10.0]), 2.5);
    }
}
