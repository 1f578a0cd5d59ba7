//! CMA-ES with active covariance adaptation, cumulative step-size control
//! and an ask/tell interface.
//!
//! ```
//! use purecma::{Engine, StrategyParams};
//!
//! let params = StrategyParams::new(4).unwrap();
//! let mut engine = Engine::new(params, vec![1.0; 4], 0.5, 7).unwrap();
//! for _ in 0..300 {
//!     let mut cands = engine.ask();
//!     for c in &mut cands {
//!         c.fitness = Some(c.x.iter().map(|v| v * v).sum());
//!     }
//!     engine.tell(&cands).unwrap();
//! }
//! assert!(engine.mean().iter().all(|m| m.abs() < 1e-6));
//! ```

pub mod engine;
pub mod linalg;
pub mod objectives;
pub mod params;
pub mod rng;
pub mod termination;

pub use engine::{rank, Candidate, Engine, EngineError, GenerationReport};
pub use linalg::{eigendecompose, EigenSystem, LinalgError, SymMatrix};
pub use objectives::{BoxBounds, Objective, ObjectiveError};
pub use params::{ParamsBuilder, ParamsError, StrategyParams};
pub use rng::NormalSource;
pub use termination::{Criterion, History, TerminationConfig};
