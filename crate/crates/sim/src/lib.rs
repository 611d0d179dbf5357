//! Deterministic harness for the CBDC services: scenario files, an
//! in-process system on a logical clock, global invariants, replay from
//! journals, a randomized workload generator and an HTTP smoke run.

pub mod export;
pub mod invariants;
pub mod runner;
pub mod scenario;
pub mod smoke;
pub mod system;
pub mod workload;

pub use export::StateExport;
pub use runner::{run_scenario, Report, Run, RunError, RunOptions};
pub use scenario::{Action, Scenario, Step, Topology};
pub use system::{System, SystemConfig};
