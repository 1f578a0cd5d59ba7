//! The optimization driver: ask, evaluate, tell, check termination, and
//! restart with a larger population when a leg stops early.

use std::fs::File;
use std::io::{self, BufWriter};

use purecma::objectives::{by_name, BoxBounds, BoxRepairPenalty, Objective};
use purecma::rng::derive_seed;
use purecma::termination::{check, History};
use purecma::{rank, Candidate, Engine, NormalSource, StrategyParams};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::config::{ConfigError, LogTarget, MeanSpec, RunConfig};
use crate::log::{float, LogRecord, LogWriter};

/// Salt separating the initial-mean stream from the sampling stream.
const MEAN_STREAM: u64 = 0x6D65_616E_5F73_6565;

pub const STOP_FITNESS: &str = "StopFitness";
pub const MAX_EVALS: &str = "MaxEvals";
pub const NUMERICAL_FAILURE: &str = "NumericalFailure";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("log output failed: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegSummary {
    pub leg: u32,
    pub lambda: usize,
    pub seed: u64,
    pub generations: u64,
    pub evals: u64,
    #[serde(with = "float")]
    pub best_f: f64,
    pub stop: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum Outcome {
    TargetReached,
    BudgetExhausted,
    /// Every leg ended on a termination criterion before the target.
    Terminated,
    NumericalFailure(String),
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        match self {
            Outcome::TargetReached => 0,
            Outcome::BudgetExhausted | Outcome::Terminated => 1,
            Outcome::NumericalFailure(_) => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub best_x: Vec<f64>,
    #[serde(with = "float")]
    pub best_f: f64,
    pub evals: u64,
    pub legs: Vec<LegSummary>,
    pub outcome: Outcome,
    #[serde(skip)]
    pub records: Vec<LogRecord>,
}

/// Resumable state of a run between two generations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub leg: u32,
    pub leg_seed: u64,
    pub leg_finished: bool,
    pub engine: Engine,
    pub history: History,
    pub total_evals: u64,
    pub leg_start_evals: u64,
    #[serde(with = "float")]
    pub best_f: f64,
    pub best_x: Vec<f64>,
    #[serde(with = "float")]
    pub leg_best_f: f64,
    pub legs: Vec<LegSummary>,
}

fn leg_seed(seed: u64, leg: u32) -> u64 {
    if leg == 0 {
        seed
    } else {
        derive_seed(seed, u64::from(leg))
    }
}

fn initial_mean(cfg: &RunConfig, leg: u32) -> Vec<f64> {
    match &cfg.mean {
        MeanSpec::Explicit(m) => m.clone(),
        MeanSpec::Uniform { lower, upper } => {
            let mut rng = NormalSource::new(derive_seed(cfg.seed ^ MEAN_STREAM, u64::from(leg)));
            (0..cfg.dim)
                .map(|_| lower + (upper - lower) * rng.next_uniform())
                .collect()
        }
    }
}

/// Fresh engine for restart leg `leg`; depends only on the configuration and
/// the leg index.
pub fn start_leg(cfg: &RunConfig, leg: u32) -> Result<Engine, ConfigError> {
    let lambda = cfg.lambda_for_leg(leg);
    let params = StrategyParams::with_lambda(cfg.dim, lambda)
        .map_err(|e| ConfigError::new("lambda", e.to_string()))?;
    Engine::new(
        params,
        initial_mean(cfg, leg),
        cfg.sigma0,
        leg_seed(cfg.seed, leg),
    )
    .map_err(|e| ConfigError::new("mean", e.to_string()))
}

impl RunState {
    fn new(cfg: &RunConfig) -> Result<Self, ConfigError> {
        let engine = start_leg(cfg, 0)?;
        Ok(Self {
            leg: 0,
            leg_seed: leg_seed(cfg.seed, 0),
            leg_finished: false,
            history: History::new(&engine),
            engine,
            total_evals: 0,
            leg_start_evals: 0,
            best_f: f64::INFINITY,
            best_x: Vec::new(),
            leg_best_f: f64::INFINITY,
            legs: Vec::new(),
        })
    }

    fn next_leg(&mut self, cfg: &RunConfig) -> Result<(), ConfigError> {
        self.leg += 1;
        self.engine = start_leg(cfg, self.leg)?;
        self.history = History::new(&self.engine);
        self.leg_seed = leg_seed(cfg.seed, self.leg);
        self.leg_finished = false;
        self.leg_start_evals = self.total_evals;
        self.leg_best_f = f64::INFINITY;
        Ok(())
    }

    fn summary(&self, stop: Vec<String>) -> LegSummary {
        LegSummary {
            leg: self.leg,
            lambda: self.engine.lambda(),
            seed: self.leg_seed,
            generations: self.engine.generation(),
            evals: self.total_evals - self.leg_start_evals,
            best_f: self.leg_best_f,
            stop,
        }
    }
}

/// Builds the configured objective, wrapped in a box-repair penalty when
/// bounds are set.
pub fn build_objective(cfg: &RunConfig) -> Result<Box<dyn Objective>, ConfigError> {
    let bench = by_name(&cfg.objective, cfg.dim)
        .map_err(|e| ConfigError::new("objective", e.to_string()))?;
    Ok(match cfg.bounds {
        None => Box::new(bench),
        Some((lo, hi)) => {
            let bounds = BoxBounds::uniform(cfg.dim, lo, hi)
                .map_err(|e| ConfigError::new("bounds", e.to_string()))?;
            Box::new(
                BoxRepairPenalty::new(bench, bounds, cfg.penalty_alpha)
                    .map_err(|e| ConfigError::new("penalty-alpha", e.to_string()))?,
            )
        }
    })
}

/// Sets the fitness of every candidate, splitting the work over `threads`
/// scoped workers.
pub fn evaluate(obj: &dyn Objective, cands: &mut [Candidate], threads: usize) {
    if threads <= 1 || cands.len() < 2 {
        for c in cands.iter_mut() {
            c.fitness = Some(obj.eval(&c.x));
        }
        return;
    }
    let chunk = cands.len().div_ceil(threads);
    std::thread::scope(|s| {
        for part in cands.chunks_mut(chunk) {
            s.spawn(move || {
                for c in part {
                    c.fitness = Some(obj.eval(&c.x));
                }
            });
        }
    });
}

fn fitness_stats(cands: &[Candidate]) -> (f64, f64, usize) {
    let order = rank(cands).expect("all candidates evaluated");
    let sorted: Vec<f64> = order.iter().map(|&i| cands[i].fitness.unwrap()).collect();
    let k = sorted.len();
    let median = if k % 2 == 1 {
        sorted[k / 2]
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
    };
    (sorted[0], median, order[0])
}

fn open_log(cfg: &RunConfig) -> Result<Option<LogWriter>, RunError> {
    Ok(match &cfg.log {
        None => None,
        Some(LogTarget::Stdout) => Some(LogWriter::new(cfg.log_format, Box::new(io::stdout()))),
        Some(LogTarget::File(path)) => {
            let file = File::create(path)?;
            Some(LogWriter::new(
                cfg.log_format,
                Box::new(BufWriter::new(file)),
            ))
        }
    })
}

/// Runs from scratch.
pub fn run(cfg: &RunConfig) -> Result<RunResult, RunError> {
    cfg.validate()?;
    drive(cfg, RunState::new(cfg)?)
}

/// Continues from a checkpoint taken with the same objective, dimension and
/// seed.
pub fn resume(cfg: &RunConfig, ckpt: Checkpoint) -> Result<RunResult, RunError> {
    cfg.validate()?;
    if ckpt.objective != cfg.objective || ckpt.dim != cfg.dim || ckpt.seed != cfg.seed {
        return Err(ConfigError::new(
            "resume",
            format!(
                "checkpoint is for objective={} dim={} seed={}",
                ckpt.objective, ckpt.dim, ckpt.seed
            ),
        )
        .into());
    }
    drive(cfg, ckpt.state)
}

fn drive(cfg: &RunConfig, mut st: RunState) -> Result<RunResult, RunError> {
    let objective = build_objective(cfg)?;
    let bounds = match cfg.bounds {
        Some((lo, hi)) => Some(
            BoxBounds::uniform(cfg.dim, lo, hi)
                .map_err(|e| ConfigError::new("bounds", e.to_string()))?,
        ),
        None => None,
    };
    let mut log = open_log(cfg)?;
    let mut records = Vec::new();
    let mut last_flags: Vec<String> = Vec::new();
    let mut header_due = true;

    let outcome = loop {
        if st.leg_finished {
            if st.leg < cfg.restarts && st.total_evals < cfg.max_evals {
                st.next_leg(cfg)?;
                header_due = true;
            } else {
                break Outcome::Terminated;
            }
        }
        if st.total_evals >= cfg.max_evals {
            break Outcome::BudgetExhausted;
        }
        if header_due {
            if let Some(w) = log.as_mut() {
                w.header(st.leg, st.leg_seed, st.engine.params())?;
            }
            header_due = false;
        }

        let engine = &mut st.engine;
        let generation = engine.generation();
        let sigma = engine.sigma();
        let eig = engine.eigensystem();
        let (cond, min_axis, max_axis) = (
            eig.condition_number(),
            sigma * eig.min_scale(),
            sigma * eig.max_scale(),
        );

        let mut cands = engine.ask();
        evaluate(objective.as_ref(), &mut cands, cfg.threads);
        st.total_evals += cands.len() as u64;
        let (best_f, median_f, best_idx) = fitness_stats(&cands);
        if best_f < st.leg_best_f {
            st.leg_best_f = best_f;
        }
        if best_f < st.best_f {
            st.best_f = best_f;
            st.best_x = match &bounds {
                Some(b) => b.clamp(&cands[best_idx].x),
                None => cands[best_idx].x.clone(),
            };
        }

        let told = st.engine.tell(&cands);
        let mut flags: Vec<String> = Vec::new();
        let mut failure = None;
        match &told {
            Ok(report) => {
                st.history.record(report);
                flags.extend(
                    check(&st.engine, &st.history, &cfg.termination)
                        .into_iter()
                        .map(|c| c.name().to_string()),
                );
            }
            Err(e) => {
                flags.push(NUMERICAL_FAILURE.to_string());
                failure = Some(e.to_string());
            }
        }
        let reached = st.best_f <= cfg.stop_fitness;
        let leg_stopped = !flags.is_empty();
        if reached {
            flags.push(STOP_FITNESS.to_string());
        }
        let budget_spent = st.total_evals >= cfg.max_evals;
        if budget_spent && !reached {
            flags.push(MAX_EVALS.to_string());
        }

        let record = LogRecord {
            generation,
            evals: st.total_evals,
            best_f,
            median_f,
            sigma,
            cond,
            min_axis,
            max_axis,
            stop_flags: flags.join(","),
        };
        if let Some(w) = log.as_mut() {
            if generation.is_multiple_of(cfg.log_every) || !flags.is_empty() {
                w.record(&record)?;
            }
        }
        records.push(record);

        if leg_stopped && !reached {
            st.leg_finished = true;
            let summary = st.summary(flags.clone());
            st.legs.push(summary);
        }
        last_flags = flags;

        let finishing = reached || budget_spent || (st.leg_finished && st.leg >= cfg.restarts);
        if let Some(path) = &cfg.checkpoint {
            if (generation + 1).is_multiple_of(cfg.checkpoint_every) || finishing {
                Checkpoint::new(&cfg.objective, cfg.dim, cfg.seed, st.clone()).save(path)?;
            }
        }

        if reached {
            break Outcome::TargetReached;
        }
        if let Some(msg) = failure {
            if st.leg >= cfg.restarts || budget_spent {
                break Outcome::NumericalFailure(msg);
            }
        }
    };

    if let Some(w) = log.as_mut() {
        w.flush()?;
    }
    let mut legs = st.legs.clone();
    if !st.leg_finished {
        legs.push(st.summary(last_flags));
    }
    Ok(RunResult {
        best_x: st.best_x,
        best_f: st.best_f,
        evals: st.total_evals,
        legs,
        outcome,
        records,
    })
}
