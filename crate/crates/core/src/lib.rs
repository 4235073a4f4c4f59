//! Phasor-domain power-system dynamic simulation with pluggable one-step
//! integrators.
//!
//! Every dynamic component is algebraized per time step either by the
//! trapezoidal rule or by a trained neural one-step surrogate, and the
//! resulting nonlinear system (component states plus complex bus voltages)
//! is solved with Newton-Raphson. The crate also carries the pipeline that
//! produces surrogates: dataset generation over a bounded input domain,
//! data- and physics-residual losses, Adam training and a versioned model
//! file.
//!
//! Module map:
//!
//! - [`netcore`]: case files, admittance matrix, disturbances
//! - [`powerflow`]: Newton-Raphson AC power flow for initial conditions
//! - [`machine`]: two-axis synchronous machine and its stator circuit
//! - [`integrators`]: trapezoidal and surrogate step residuals, fine-step oracle
//! - [`daesolver`]: per-step Newton solve and the time loop
//! - [`pinn`]: the surrogate network, datasets, losses, training, model files
//! - [`metrics`]: reference trajectories and accuracy-improvement reports
//! - [`cli`]: batch entry points used by the `gridpinn` binary

pub mod cli;
pub mod daesolver;
pub mod integrators;
pub mod machine;
pub mod metrics;
pub mod netcore;
pub mod pinn;
pub mod powerflow;

pub(crate) mod linalg;

pub use daesolver::{simulate, JacobianMode, SimulationConfig, Trajectory};
pub use machine::{DqCurrents, MachineModel, MachineParams, MachineState};
pub use netcore::{parse_case, AdmittanceMatrix, Disturbance, NetworkCase};
pub use pinn::MlpModel;
pub use powerflow::{solve_power_flow, PowerFlowSolution};

/// Shipped IEEE test cases, embedded so tests and the browser demo do not
/// depend on the working directory.
pub mod cases {
    pub const IEEE9: &str = include_str!("../data/cases/ieee9.case");
    pub const IEEE14: &str = include_str!("../data/cases/ieee14.case");
    pub const IEEE30: &str = include_str!("../data/cases/ieee30.case");

    /// Looks up a shipped case by short name (`ieee9`, `ieee14`, `ieee30`).
    pub fn by_name(name: &str) -> Option<&'static str> {
        match name {
            "ieee9" | "9" => Some(IEEE9),
            "ieee14" | "14" => Some(IEEE14),
            "ieee30" | "30" => Some(IEEE30),
            _ => None,
        }
    }
}

/// Shipped disturbance scenarios: the three 30-bus disturbances and a
/// load doubling at the last bus of each system.
pub mod scenarios {
    pub const IEEE30_L20: &str = include_str!("../data/scenarios/ieee30_l20.scn");
    pub const IEEE30_G1: &str = include_str!("../data/scenarios/ieee30_g1.scn");
    pub const IEEE30_L12: &str = include_str!("../data/scenarios/ieee30_l12.scn");
    pub const IEEE9_DOUBLE: &str = include_str!("../data/scenarios/ieee9_double.scn");
    pub const IEEE14_DOUBLE: &str = include_str!("../data/scenarios/ieee14_double.scn");
    pub const IEEE30_DOUBLE: &str = include_str!("../data/scenarios/ieee30_double.scn");

    pub fn by_name(name: &str) -> Option<&'static str> {
        match name {
            "ieee30_l20" => Some(IEEE30_L20),
            "ieee30_g1" => Some(IEEE30_G1),
            "ieee30_l12" => Some(IEEE30_L12),
            "ieee9_double" => Some(IEEE9_DOUBLE),
            "ieee14_double" => Some(IEEE14_DOUBLE),
            "ieee30_double" => Some(IEEE30_DOUBLE),
            _ => None,
        }
    }
}
