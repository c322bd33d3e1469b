//! Simulator and analysis toolkit for two-sensor INformation/OUTformation
//! communication architectures over a piecewise-constant random-walk
//! environment.
//!
//! Three architectures share one discrete-event engine:
//!
//! * `IN0` — sensors transmit every observed component at every verification
//!   instant (no thresholding, no downlink).
//! * `IN(eps)` — sensors transmit a component only when its observation drifts
//!   at least `epsilon` from the last transmitted reference.
//! * `OUT(eps)` — `IN(eps)` plus a downlink: the central processor broadcasts
//!   received shared components back out, and the peer sensor cancels a
//!   pending transmission whose observation lies within `epsilon` of the
//!   broadcast value.
//!
//! The [`theory`] module evaluates the closed-form power/MSE expressions for
//! these architectures, and [`experiments`] verifies them against paired
//! Monte Carlo runs driven by common random numbers.

pub mod engine;
pub mod environment;
pub mod experiments;
pub mod fusion;
pub mod io;
pub mod model;
pub mod rng;
pub mod sensing;
pub mod theory;

pub use engine::{run_simulation, RunInput, SimulationTrace};
pub use environment::{ConditionedScenario, EnvironmentPath};
pub use fusion::MetricsReport;
pub use model::{ArchitectureKind, BackoffSpec, ComponentMap, Scenario, ScenarioConfig};
