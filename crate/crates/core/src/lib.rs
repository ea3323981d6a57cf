//! Detection of failed lines and recovery of hidden bus voltages inside an
//! attacked zone of an AC power grid whose measurements are blacked out.

pub mod analysis;
pub mod attack;
pub mod bfs;
pub mod detector;
pub mod error;
pub mod grid;
pub mod harness;
pub mod linalg;
pub mod powerflow;
pub mod synthetic;

pub use analysis::{analyze, ZoneDiagnostics};
pub use attack::{simulate_attack, AttackScenario, Observation, OperatingPoint, SimulatedAttack};
pub use bfs::{bfs_detect, BfsOptions, BfsResult};
pub use detector::{expose, Confidence, DetectionResult};
pub use error::{Error, Result};
pub use grid::{make_zone, parse_case, read_case, Bus, BusKind, Grid, Line, Zone};
pub use harness::{run_experiment, ExperimentConfig, ExperimentOutput};
pub use powerflow::{compute_injections, solve_ac, InjectionSpec, PowerFlowOutcome, VoltageState};
