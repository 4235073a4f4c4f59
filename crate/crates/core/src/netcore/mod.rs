//! Network data: case files, the bus admittance matrix and disturbances.

mod admittance;
mod case;
mod disturbance;

pub use admittance::{build_admittance, AdmittanceMatrix, LoadModel};
pub use case::{
    parse_case, BranchRecord, BusRecord, CaseError, LoadRecord, MachineKind, MachineSpec,
    NetworkCase,
};
pub use disturbance::{
    apply_disturbance, parse_scenario, DisturbanceKind, Disturbance, DisturbedSystem, Scenario,
};
