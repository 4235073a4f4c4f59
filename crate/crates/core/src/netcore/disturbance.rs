use std::fmt;

use num_complex::Complex64;

use super::admittance::AdmittanceMatrix;
use super::case::{CaseError, NetworkCase};
use crate::machine::MachineParams;
use crate::powerflow::PowerFlowSolution;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DisturbanceKind {
    /// Active-load change at a bus, unity power factor.
    LoadStep,
    /// Mechanical torque change of one machine.
    TorqueStep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Disturbance {
    pub kind: DisturbanceKind,
    /// Bus id for load steps; machine id (or the bus id hosting the machine)
    /// for torque steps.
    pub target: String,
    pub delta: f64,
    /// Seconds; snapped to the simulation grid.
    pub t_apply: f64,
}

impl fmt::Display for Disturbance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            DisturbanceKind::LoadStep => "load_step",
            DisturbanceKind::TorqueStep => "torque_step",
        };
        write!(f, "{kind} {} {} {}", self.target, self.delta, self.t_apply)
    }
}

/// An ordered list of disturbances.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub disturbances: Vec<Disturbance>,
}

impl Scenario {
    pub fn to_scenario_string(&self) -> String {
        let mut s = format!("# {}\n# kind target delta t_apply\n", self.name);
        for d in &self.disturbances {
            s.push_str(&format!("{d}\n"));
        }
        s
    }
}

/// Parses a scenario file: one `kind target delta t_apply` record per line.
pub fn parse_scenario(text: &str) -> Result<Scenario, CaseError> {
    let mut disturbances = Vec::new();
    let mut name = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if let Some(comment) = trimmed.strip_prefix('#') {
            if name.is_empty() && disturbances.is_empty() && line == 1 {
                name = comment.trim().to_string();
            }
            continue;
        }
        let content = trimmed.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let toks: Vec<&str> = content.split_whitespace().collect();
        if toks.len() != 4 {
            return Err(CaseError::Parse {
                line,
                msg: format!("disturbance needs 4 fields, found {}", toks.len()),
            });
        }
        let kind = match toks[0] {
            "load_step" => DisturbanceKind::LoadStep,
            "torque_step" => DisturbanceKind::TorqueStep,
            k => return Err(CaseError::Parse { line, msg: format!("unknown disturbance {k}") }),
        };
        let number = |t: &str, what: &str| -> Result<f64, CaseError> {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CaseError::Parse { line, msg: format!("bad {what} '{t}'") })
        };
        let d = Disturbance {
            kind,
            target: toks[1].to_string(),
            delta: number(toks[2], "delta")?,
            t_apply: number(toks[3], "t_apply")?,
        };
        if d.t_apply < 0.0 {
            return Err(CaseError::Parse { line, msg: "t_apply must be >= 0".into() });
        }
        disturbances.push(d);
    }
    Ok(Scenario { name, disturbances })
}

/// The parts of a system a disturbance may change.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbedSystem {
    pub ybus: AdmittanceMatrix,
    pub machines: Vec<MachineParams>,
}

impl DisturbedSystem {
    /// Resolves a torque-step target to a machine index: machine id first,
    /// then the bus id hosting a machine.
    pub fn machine_target(case: &NetworkCase, target: &str) -> Option<usize> {
        case.machine_index(target).or_else(|| {
            let bus: usize = target.parse().ok()?;
            case.machines.iter().position(|m| m.bus == bus)
        })
    }
}

/// Returns a modified copy of `base`. Load steps change the folded load
/// admittance by `delta / |V_pf|^2` (unity power factor at the pre-fault
/// voltage); torque steps shift `T_m` of the target machine.
pub fn apply_disturbance(
    base: &DisturbedSystem,
    case: &NetworkCase,
    d: &Disturbance,
    pf: &PowerFlowSolution,
) -> Result<DisturbedSystem, CaseError> {
    let mut out = base.clone();
    match d.kind {
        DisturbanceKind::LoadStep => {
            let bus: usize = d
                .target
                .parse()
                .map_err(|_| CaseError::Invalid(format!("load-step target '{}' is not a bus id", d.target)))?;
            let i = case
                .bus_index(bus)
                .ok_or(CaseError::MissingBus { what: "load step".into(), bus })?;
            let v = pf.vm[i];
            out.ybus.add_shunt(i, Complex64::new(d.delta / (v * v), 0.0));
        }
        DisturbanceKind::TorqueStep => {
            let k = DisturbedSystem::machine_target(case, &d.target).ok_or_else(|| {
                CaseError::Invalid(format!("torque-step target '{}' matches no machine", d.target))
            })?;
            out.machines[k].tm += d.delta;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases;
    use crate::netcore::{build_admittance, parse_case, LoadModel};
    use crate::powerflow::solve_power_flow;

    fn system(text: &str) -> (NetworkCase, PowerFlowSolution, DisturbedSystem) {
        let c = parse_case(text).unwrap();
        let pf = solve_power_flow(&c, 1e-10, 50).unwrap();
        let ybus = build_admittance(&c, LoadModel::ConstantImpedance, Some(&pf)).unwrap();
        let machines = c.machines.iter().map(|m| m.params.clone()).collect();
        (c, pf, DisturbedSystem { ybus, machines })
    }

    fn load(target: &str, delta: f64) -> Disturbance {
        Disturbance { kind: DisturbanceKind::LoadStep, target: target.into(), delta, t_apply: 0.2 }
    }

    #[test]
    fn load_step_on_thirty_bus() {
        let (c, pf, base) = system(cases::IEEE30);
        let out = apply_disturbance(&base, &c, &load("20", 0.08), &pf).unwrap();
        let i = c.bus_index(20).unwrap();
        let gained = out.ybus[(i, i)] - base.ybus[(i, i)];
        let v = pf.vm[i];
        assert!((gained.re - 0.08 / (v * v)).abs() < 1e-14);
        assert_eq!(gained.im, 0.0);
        // Only one entry changed, original untouched.
        let mut other = out.ybus.clone();
        other[(i, i)] = base.ybus[(i, i)];
        assert_eq!(other, base.ybus);
    }

    #[test]
    fn torque_step_by_bus_or_id() {
        let (c, pf, base) = system(cases::IEEE30);
        let d = Disturbance {
            kind: DisturbanceKind::TorqueStep,
            target: "1".into(),
            delta: -0.3,
            t_apply: 0.2,
        };
        let out = apply_disturbance(&base, &c, &d, &pf).unwrap();
        assert!((out.machines[0].tm - (base.machines[0].tm - 0.3)).abs() < 1e-15);
        let by_id = Disturbance { target: c.machines[0].id.clone(), ..d };
        assert_eq!(apply_disturbance(&base, &c, &by_id, &pf).unwrap(), out);
    }

    #[test]
    fn zero_delta_is_identity() {
        let (c, pf, base) = system(cases::IEEE9);
        assert_eq!(apply_disturbance(&base, &c, &load("5", 0.0), &pf).unwrap(), base);
    }

    #[test]
    fn unknown_targets() {
        let (c, pf, base) = system(cases::IEEE9);
        assert!(apply_disturbance(&base, &c, &load("42", 0.1), &pf).is_err());
        let d = Disturbance {
            kind: DisturbanceKind::TorqueStep,
            target: "G9".into(),
            delta: 0.1,
            t_apply: 0.0,
        };
        assert!(apply_disturbance(&base, &c, &d, &pf).is_err());
    }

    #[test]
    fn load_step_is_reversible() {
        let (c, pf, base) = system(cases::IEEE14);
        for (bus, delta) in [("14", 0.149), ("9", -0.2), ("3", 0.05)] {
            let up = apply_disturbance(&base, &c, &load(bus, delta), &pf).unwrap();
            let back = apply_disturbance(&up, &c, &load(bus, -delta), &pf).unwrap();
            assert!(back.ybus.max_abs_diff(&base.ybus) <= 1e-12);
        }
    }

    #[test]
    fn scenario_parsing() {
        let s = parse_scenario("# L20 +0.08\nload_step 20 0.08 0.2\n\ntorque_step G1 -0.3 0.2 # gen\n").unwrap();
        assert_eq!(s.name, "L20 +0.08");
        assert_eq!(s.disturbances.len(), 2);
        assert_eq!(s.disturbances[1].kind, DisturbanceKind::TorqueStep);
        assert_eq!(parse_scenario(&s.to_scenario_string()).unwrap(), s);
        assert!(parse_scenario("load_step 20 0.08 -1\n").is_err());
        assert!(parse_scenario("trip 20 0.08 1\n").is_err());
    }
}
