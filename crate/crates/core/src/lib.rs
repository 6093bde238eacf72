// SPDX-License-Identifier: Apache-2.0
//! Transient simulation of a synchronous buck converter under a PWM-locking
//! hardware trojan, with an optional parity-capacitor countermeasure.
//!
//! - [`scenario`]: scenario model, text format, validation
//! - [`sim`]: switched piecewise-linear power stage and gate drive
//! - [`trojan`]: the inserted OR/NOR lock gate
//! - [`parity`]: parity-capacitor gate node and sizing
//! - [`metrics`]: windowed measurements, analytic oracles, outcome classes
//! - [`cli`]: the `run`, `sweep` and `check` commands

pub mod cli;
pub mod metrics;
pub mod parity;
pub mod scenario;
pub mod sim;
pub mod trojan;

pub use metrics::{classify, measure, OutcomeClass, SteadyStateMetrics};
pub use scenario::{parse_scenario, validate_scenario, Scenario};
pub use sim::{simulate, SimError, TraceSet};
