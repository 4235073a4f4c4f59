//! Per-step Newton solve of machine states and bus voltages, and the time
//! loop with disturbances.

mod problem;
mod steady;
mod trajectory;

pub use problem::{n_unknown_states, stator_currents_rect, StepProblem, StepRule, Unpacked};
pub use steady::{steady_state_check, SteadyStateReport};
pub use trajectory::{StepDiagnostics, Trajectory, TrajectoryIoError};

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::integrators::{DomainPolicy, IntegratorAssignment, IntegratorError, Method, StepSize};
use crate::linalg::{inf_norm, solve_dense};
use crate::machine::{init_from_powerflow, network_injection, DqCurrents, MachineError, MachineModel, MachineParams, MachineState};
use crate::netcore::{
    apply_disturbance, build_admittance, CaseError, DisturbedSystem, LoadModel, NetworkCase, Scenario,
};
use crate::pinn::MlpModel;
use crate::powerflow::{solve_power_flow, PowerFlowError, PowerFlowSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JacobianMode {
    #[default]
    FiniteDifference,
    /// Finite differences, with surrogate rows from the network's input
    /// Jacobian.
    AnalyticWhereAvailable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub dt: f64,
    pub t_end: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub jacobian_mode: JacobianMode,
    /// Applied to converged states; Newton iterates are always clamped.
    pub domain_policy: DomainPolicy,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            dt: 0.02,
            t_end: 5.0,
            newton_tol: 1e-8,
            newton_max_iter: 20,
            jacobian_mode: JacobianMode::FiniteDifference,
            domain_policy: DomainPolicy::Error,
        }
    }
}

impl SimulationConfig {
    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
    #[error(transparent)]
    Machine(#[from] MachineError),
    #[error(transparent)]
    Integrator(#[from] IntegratorError),
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("no model loaded under id '{0}'")]
    MissingModel(String),
    #[error("Newton did not converge in {} iterations (residual {:e})", .0.iterations, .0.residual_history.last().copied().unwrap_or(f64::NAN))]
    NotConverged(StepDiagnostics),
    #[error("singular Newton Jacobian")]
    SingularJacobian,
    #[error("step at t = {t} s failed: {source}")]
    StepFailed {
        t: f64,
        #[source]
        source: Box<SimError>,
        partial: Box<Trajectory>,
    },
}

/// Case data, the power-flow operating point and the initialized machines.
#[derive(Debug, Clone)]
pub struct PreparedSystem {
    pub case: NetworkCase,
    pub pf: PowerFlowSolution,
    /// Network matrix with loads folded in, and machines with `tm`/`efd`
    /// set for equilibrium.
    pub base: DisturbedSystem,
    pub bus_of: Vec<usize>,
    pub x0: Vec<MachineState>,
    pub i0: Vec<DqCurrents>,
    pub v0: Vec<Complex64>,
}

/// Power flow tolerance used for simulation initial conditions.
pub const INIT_PF_TOL: f64 = 1e-12;

impl PreparedSystem {
    pub fn new(case: &NetworkCase) -> Result<Self, SimError> {
        let pf = solve_power_flow(case, INIT_PF_TOL, 50)?;
        let ybus = build_admittance(case, LoadModel::ConstantImpedance, Some(&pf))?;
        let mut machines = Vec::new();
        let (mut x0, mut i0, mut bus_of) = (Vec::new(), Vec::new(), Vec::new());
        for (k, m) in case.machines.iter().enumerate() {
            let b = case.bus_index(m.bus).expect("validated case");
            let (x, p) = init_from_powerflow(&m.params, pf.vm[b], pf.va[b], pf.p_machine[k], pf.q_machine[k])?;
            let i = problem::stator_currents_rect(&x, pf.voltage(b), &p)?;
            machines.push(p);
            x0.push(x);
            i0.push(i);
            bus_of.push(b);
        }
        let v0 = (0..case.n_bus()).map(|b| pf.voltage(b)).collect();
        Ok(Self { case: case.clone(), pf, base: DisturbedSystem { ybus, machines }, bus_of, x0, i0, v0 })
    }

    pub fn empty_trajectory(&self) -> Trajectory {
        Trajectory {
            machine_ids: self.case.machines.iter().map(|m| m.id.clone()).collect(),
            bus_ids: self.case.buses.iter().map(|b| b.id).collect(),
            ..Default::default()
        }
    }
}

/// Generic Newton-Raphson with a caller-supplied Jacobian.
pub(crate) fn newton(
    mut z: Vec<f64>,
    tol: f64,
    max_iter: usize,
    residual: &dyn Fn(&[f64]) -> Result<Vec<f64>, SimError>,
    jacobian: &dyn Fn(&[f64], &[f64]) -> Result<DMatrix<f64>, SimError>,
) -> Result<(Vec<f64>, StepDiagnostics), SimError> {
    let mut diag = StepDiagnostics::default();
    loop {
        let r = residual(&z)?;
        let norm = inf_norm(&r);
        diag.iterations += 1;
        diag.residual_history.push(norm);
        if norm <= tol {
            return Ok((z, diag));
        }
        if diag.iterations > max_iter || !norm.is_finite() {
            return Err(SimError::NotConverged(diag));
        }
        let jac = jacobian(&z, &r)?;
        let dz = solve_dense(jac, &DVector::from_vec(r)).ok_or(SimError::SingularJacobian)?;
        for (zi, d) in z.iter_mut().zip(dz.iter()) {
            *zi -= d;
        }
    }
}

/// Central-difference Jacobian with relative perturbation `1e-7 max(1, |z|)`.
pub(crate) fn fd_jacobian(
    z: &[f64],
    residual: &dyn Fn(&[f64]) -> Result<Vec<f64>, SimError>,
) -> Result<DMatrix<f64>, SimError> {
    let n = z.len();
    let mut jac = DMatrix::zeros(n, n);
    let mut zp = z.to_vec();
    for j in 0..n {
        let h = 1e-7 * z[j].abs().max(1.0);
        zp[j] = z[j] + h;
        let rp = residual(&zp)?;
        zp[j] = z[j] - h;
        let rm = residual(&zp)?;
        zp[j] = z[j];
        for i in 0..n {
            jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Solves one step from the previous solution as initial guess.
pub fn solve_time_step(
    p: &StepProblem<'_>,
    z0: Vec<f64>,
    cfg: &SimulationConfig,
) -> Result<(Vec<f64>, StepDiagnostics), SimError> {
    let res = |z: &[f64]| p.residual(z, DomainPolicy::Clamp).map(|r| r.0);
    let jac = |z: &[f64], _: &[f64]| {
        let mut j = fd_jacobian(z, &res)?;
        if cfg.jacobian_mode == JacobianMode::AnalyticWhereAvailable {
            for (k, rule) in p.rules.iter().enumerate() {
                if matches!(rule, StepRule::Pinn(_)) {
                    let rows = p.pinn_rows(k, z)?;
                    let o = p.machine_offset(k);
                    for (r, row) in rows.iter().enumerate() {
                        for (c, v) in row.iter().enumerate() {
                            j[(o + r, c)] = *v;
                        }
                    }
                }
            }
        }
        Ok(j)
    };
    let (z, mut diag) = newton(z0, cfg.newton_tol, cfg.newton_max_iter, &res, &jac)?;
    let (_, clamped) = p.residual(&z, DomainPolicy::Clamp)?;
    if clamped && cfg.domain_policy == DomainPolicy::Error {
        // re-run under the strict policy to report which input left the box
        p.residual(&z, DomainPolicy::Error)?;
    }
    diag.clamped = clamped;
    Ok((z, diag))
}

/// Network voltages consistent with frozen machine states (used right
/// after a disturbance changes the algebraic equations).
pub fn solve_algebraic(
    machines: &[MachineParams],
    bus_of: &[usize],
    ybus: &crate::netcore::AdmittanceMatrix,
    states: &[MachineState],
    v0: &[Complex64],
    cfg: &SimulationConfig,
) -> Result<(Vec<Complex64>, Vec<DqCurrents>), SimError> {
    let res = |z: &[f64]| -> Result<Vec<f64>, SimError> {
        let v: Vec<Complex64> = z.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
        let mut inj = ybus.mul_vec(&v);
        for (k, &b) in bus_of.iter().enumerate() {
            let i = problem::stator_currents_rect(&states[k], v[b], &machines[k])?;
            inj[b] -= network_injection(&states[k], &i);
        }
        Ok(inj.iter().flat_map(|c| [c.re, c.im]).collect())
    };
    let z0: Vec<f64> = v0.iter().flat_map(|c| [c.re, c.im]).collect();
    let jac = |z: &[f64], _: &[f64]| fd_jacobian(z, &res);
    let (z, _) = newton(z0, cfg.newton_tol, cfg.newton_max_iter, &res, &jac)?;
    let v: Vec<Complex64> = z.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
    let i = bus_of
        .iter()
        .enumerate()
        .map(|(k, &b)| problem::stator_currents_rect(&states[k], v[b], &machines[k]))
        .collect::<Result<_, _>>()?;
    Ok((v, i))
}

fn push_row(tr: &mut Trajectory, t: f64, x: &[MachineState], i: &[DqCurrents], v: &[Complex64]) {
    tr.t.push(t);
    tr.states.push(x.to_vec());
    tr.currents.push(i.to_vec());
    tr.vm.push(v.iter().map(|c| c.norm()).collect());
    tr.va.push(v.iter().map(|c| c.arg()).collect());
}

/// Grid index at which a disturbance is applied.
pub fn disturbance_step(t_apply: f64, dt: f64) -> usize {
    (t_apply / dt).round() as usize
}

/// Runs the time loop from the power-flow equilibrium.
pub fn simulate(
    case: &NetworkCase,
    cfg: &SimulationConfig,
    scenario: &Scenario,
    assignment: &IntegratorAssignment,
    models: &BTreeMap<String, MlpModel>,
) -> Result<Trajectory, SimError> {
    let sys = PreparedSystem::new(case)?;
    simulate_prepared(&sys, cfg, scenario, assignment, models)
}

/// As [`simulate`], reusing an already initialized system.
pub fn simulate_prepared(
    sys: &PreparedSystem,
    cfg: &SimulationConfig,
    scenario: &Scenario,
    assignment: &IntegratorAssignment,
    models: &BTreeMap<String, MlpModel>,
) -> Result<Trajectory, SimError> {
    if !(cfg.t_end >= cfg.dt) || cfg.newton_tol <= 0.0 {
        return Err(SimError::Config("need dt > 0, t_end >= dt and a positive tolerance".into()));
    }
    let case = &sys.case;
    if assignment.methods.len() != case.machines.len() {
        return Err(SimError::Config("assignment does not cover every machine".into()));
    }
    let mut rules = Vec::with_capacity(case.machines.len());
    let mut dt_max = f64::INFINITY;
    for (k, method) in assignment.methods.iter().enumerate() {
        rules.push(match method {
            Method::Trapezoidal => StepRule::Trapezoidal,
            Method::Pinn(id) => {
                let m = models.get(id).ok_or_else(|| SimError::MissingModel(id.clone()))?;
                let p = &sys.base.machines[k];
                if p.model != MachineModel::Simplified {
                    return Err(SimError::Config(format!(
                        "surrogate for {} needs the simplified machine model",
                        case.machines[k].id
                    )));
                }
                let mm = &m.meta.machine;
                if (mm.h - p.h).abs() > 1e-9 || (mm.d - p.d).abs() > 1e-9 || (mm.tm - p.tm).abs() > 1e-6 {
                    log::warn!(
                        "machine {} (H={}, D={}, Tm={:.6}) differs from the surrogate's training point",
                        case.machines[k].id,
                        p.h,
                        p.d,
                        p.tm
                    );
                }
                dt_max = dt_max.min(m.dt_max());
                StepRule::Pinn(m)
            }
        });
    }
    let dt = StepSize::new(cfg.dt, dt_max)?.get();
    let n_steps = cfg.n_steps();
    let mut pending: BTreeMap<usize, Vec<&crate::netcore::Disturbance>> = BTreeMap::new();
    for d in &scenario.disturbances {
        let n = disturbance_step(d.t_apply, dt);
        if n >= n_steps {
            log::warn!("disturbance '{d}' lies beyond the simulated horizon");
        }
        pending.entry(n).or_default().push(d);
    }

    let mut current = sys.base.clone();
    let mut x = sys.x0.clone();
    let mut i = sys.i0.clone();
    let mut v = sys.v0.clone();
    let mut tr = sys.empty_trajectory();
    push_row(&mut tr, 0.0, &x, &i, &v);

    for n in 0..n_steps {
        let t = n as f64 * dt;
        let fail = |e: SimError, tr: &Trajectory| SimError::StepFailed { t, source: Box::new(e), partial: Box::new(tr.clone()) };
        if let Some(ds) = pending.get(&n) {
            for d in ds {
                current = apply_disturbance(&current, case, d, &sys.pf)?;
            }
            match solve_algebraic(&current.machines, &sys.bus_of, &current.ybus, &x, &v, cfg) {
                Ok((vv, ii)) => {
                    v = vv;
                    i = ii;
                }
                Err(e) => return Err(fail(e, &tr)),
            }
            // the row at the disturbance time holds post-disturbance algebraics
            tr.t.pop();
            tr.states.pop();
            tr.currents.pop();
            tr.vm.pop();
            tr.va.pop();
            push_row(&mut tr, t, &x, &i, &v);
        }
        let p = StepProblem::new(
            &current.machines,
            &sys.bus_of,
            &current.ybus,
            &rules,
            x.clone(),
            i.clone(),
            dt,
            case.base_freq,
        );
        let z0 = p.pack(&x, &v);
        let (z, diag) = match solve_time_step(&p, z0, cfg) {
            Ok(r) => r,
            Err(e) => return Err(fail(e, &tr)),
        };
        let u = p.unpack(&z);
        i = p.currents(&u)?;
        x = u.states;
        v = u.voltages;
        push_row(&mut tr, (n + 1) as f64 * dt, &x, &i, &v);
        tr.diagnostics.push(diag);
    }
    Ok(tr)
}
