//! Runtime for a hierarchical deep-research agent.

pub mod agent;
pub mod analysis;
pub mod backend;
pub mod browser;
pub mod config;
pub mod memory;
pub mod pool;
pub mod runtime;
pub mod sandbox;
pub mod supervisor;
pub mod tools;
pub mod trace;
pub mod trajectory;

pub use agent::{Agent, FinalReport, RunOutcome, RunState, RunStats, RunStatus};
pub use config::{load_config, Config};
