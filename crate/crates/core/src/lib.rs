//! Fair active-power curtailment for low-voltage feeders.
//!
//! Operating envelopes are computed by maximizing a social welfare function
//! over the set of prosumer generation limits that keep an AC power flow
//! within voltage and current limits.

pub mod envelope;
pub mod error;
pub mod grid;
pub mod oracle;
pub mod powerflow;
pub mod simulator;
pub mod solvers;
pub mod welfare;

pub use envelope::{check_envelope, FeasibilityReport};
pub use error::{Error, Result};
pub use grid::{builtin_testbed, load_network, Network, Snapshot};
pub use oracle::{FeasibilityOracle, GridOracle};
pub use powerflow::{solve_pf, PowerFlowSolution};
pub use solvers::{solve, SolveOptions, SolveResult};
pub use welfare::{SchemeConfig, UtilityMetric, UtilityProfile};
pub use simulator::{compare_schemes, generate_duck_curve, run_timeseries, Scenario, SimulationTrace};
