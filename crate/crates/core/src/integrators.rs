//! One-step algebraization rules for machine dynamics, and the fine-step
//! explicit oracle used for references and training labels.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::solve_dense;
use crate::machine::{state_derivative, DqCurrents, MachineParams, MachineState};
use crate::pinn::{predict_step, MlpModel, StepInputs};

#[derive(Debug, Error, PartialEq)]
pub enum IntegratorError {
    #[error("surrogate input {input} = {value} is outside the trained domain")]
    OutOfDomain { input: &'static str, value: f64 },
    #[error("step size {dt} s is invalid (must be in (0, {max}])")]
    BadStep { dt: f64, max: f64 },
    #[error("unknown machine '{0}' in assignment")]
    UnknownMachine(String),
    #[error("unknown integrator '{0}'")]
    UnknownMethod(String),
    #[error("machine '{0}' is assigned twice")]
    Duplicate(String),
}

/// How one machine's dynamics are discretized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Method {
    Trapezoidal,
    /// Surrogate identified by model id.
    Pinn(String),
}

/// Integrator per machine, in case order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntegratorAssignment {
    pub methods: Vec<Method>,
}

impl IntegratorAssignment {
    pub fn all_trapezoidal(n_machines: usize) -> Self {
        Self { methods: vec![Method::Trapezoidal; n_machines] }
    }

    /// Parses `G1=trap,G3=pinn` (or `pinn:<model-id>`); machines not listed
    /// default to trapezoidal. A bare `pinn` refers to model id `default`.
    pub fn parse(spec: &str, machine_ids: &[String]) -> Result<Self, IntegratorError> {
        let mut methods = vec![Method::Trapezoidal; machine_ids.len()];
        let mut seen = BTreeMap::new();
        for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (mach, meth) = item
                .split_once('=')
                .ok_or_else(|| IntegratorError::UnknownMethod(item.to_string()))?;
            let k = machine_ids
                .iter()
                .position(|m| m == mach.trim())
                .ok_or_else(|| IntegratorError::UnknownMachine(mach.trim().to_string()))?;
            if seen.insert(k, ()).is_some() {
                return Err(IntegratorError::Duplicate(mach.trim().to_string()));
            }
            methods[k] = match meth.trim() {
                "trap" | "trapezoidal" => Method::Trapezoidal,
                "pinn" => Method::Pinn("default".into()),
                other => match other.strip_prefix("pinn:") {
                    Some(id) if !id.is_empty() => Method::Pinn(id.to_string()),
                    _ => return Err(IntegratorError::UnknownMethod(other.to_string())),
                },
            };
        }
        Ok(Self { methods })
    }
}

/// A validated step size.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct StepSize(f64);

impl StepSize {
    /// `dt` must be positive and not above `dt_max` (the smallest limit of
    /// any assigned surrogate, or infinity).
    pub fn new(dt: f64, dt_max: f64) -> Result<Self, IntegratorError> {
        if dt > 0.0 && dt.is_finite() && dt <= dt_max * (1.0 + 1e-12) {
            Ok(Self(dt))
        } else {
            Err(IntegratorError::BadStep { dt, max: dt_max })
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// What to do when surrogate inputs leave the trained box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DomainPolicy {
    Error,
    #[default]
    Clamp,
}

/// `x_next - x_n - dt/2 (f_n + f_next)`.
pub fn trapezoidal_residual(
    x_n: &MachineState,
    x_next: &MachineState,
    f_n: &MachineState,
    f_next: &MachineState,
    dt: f64,
) -> [f64; 4] {
    let (a, b, fa, fb) = (x_n.to_array(), x_next.to_array(), f_n.to_array(), f_next.to_array());
    std::array::from_fn(|k| b[k] - a[k] - 0.5 * dt * (fa[k] + fb[k]))
}

/// Surrogate residual on `(delta, domega)`. The boolean reports whether the
/// inputs were clamped into the domain.
pub fn pinn_residual(
    x_n: &MachineState,
    x_next: &MachineState,
    i_n: &DqCurrents,
    i_next: &DqCurrents,
    dt: f64,
    m: &MlpModel,
    policy: DomainPolicy,
) -> Result<([f64; 2], bool), IntegratorError> {
    let raw = StepInputs { dt, state: *x_n, i0: *i_n, i1: *i_next };
    let (inp, clamped) = match m.meta.domain.violation(&raw) {
        None => (raw, false),
        Some((input, value)) => match policy {
            DomainPolicy::Error => return Err(IntegratorError::OutOfDomain { input, value }),
            DomainPolicy::Clamp => {
                let mut c = m.meta.domain.clamp(&raw);
                // keep the unwrapped angle for the hard-constrained update
                c.state.delta = x_n.delta;
                (c, true)
            }
        },
    };
    let (d, w) = predict_step(m, inp.dt, &inp.state, &inp.i0, &inp.i1);
    let d = d - inp.state.delta + x_n.delta;
    let w = w - inp.state.domega + x_n.domega;
    Ok(([x_next.delta - d, x_next.domega - w], clamped))
}

/// Classical RK4 over `substeps` equal substeps with the current profile
/// evaluated at the stage times.
pub fn fine_step_oracle(
    s0: &MachineState,
    p: &MachineParams,
    profile: impl Fn(f64) -> DqCurrents,
    dt: f64,
    substeps: usize,
    f_base: f64,
) -> MachineState {
    let n = substeps.max(1);
    let h = dt / n as f64;
    let f = |t: f64, x: &MachineState| state_derivative(x, &profile(t), p, f_base);
    let mut x = *s0;
    for k in 0..n {
        let t = k as f64 * h;
        let k1 = f(t, &x);
        let k2 = f(t + 0.5 * h, &x.axpy(0.5 * h, k1));
        let k3 = f(t + 0.5 * h, &x.axpy(0.5 * h, k2));
        let k4 = f(t + h, &x.axpy(h, k3));
        let incr = k1.axpy(2.0, k2).axpy(2.0, k3).axpy(1.0, k4);
        x = x.axpy(h / 6.0, incr);
    }
    x
}

/// Default oracle substep (0.05 ms).
pub const ORACLE_SUBSTEP: f64 = 5e-5;

/// Substep count for the oracle at `dt`.
pub fn oracle_substeps(dt: f64) -> usize {
    ((dt / ORACLE_SUBSTEP).ceil() as usize).max(1)
}

/// Oracle under the linear current profile between `i0` and `i1`.
pub fn oracle_linear_profile(
    s0: &MachineState,
    p: &MachineParams,
    i0: &DqCurrents,
    i1: &DqCurrents,
    dt: f64,
    f_base: f64,
) -> MachineState {
    let (i0, i1) = (*i0, *i1);
    fine_step_oracle(s0, p, |t| i0.lerp(i1, t / dt), dt, oracle_substeps(dt), f_base)
}

/// One trapezoidal step with both end currents prescribed.
pub fn trapezoidal_step_frozen(
    x_n: &MachineState,
    p: &MachineParams,
    i_n: &DqCurrents,
    i_next: &DqCurrents,
    dt: f64,
    f_base: f64,
) -> MachineState {
    let f_n = state_derivative(x_n, i_n, p, f_base);
    let resid = |x: &MachineState| {
        trapezoidal_residual(x_n, x, &f_n, &state_derivative(x, i_next, p, f_base), dt)
    };
    // The residual is affine in x_next for fixed currents: one Newton step
    // with an exact (finite-difference of an affine map) Jacobian, then a
    // polish step for rounding.
    let mut x = *x_n;
    for _ in 0..2 {
        let r0 = resid(&x);
        let mut jac = DMatrix::zeros(4, 4);
        for c in 0..4 {
            let mut a = x.to_array();
            a[c] += 1.0;
            let r1 = resid(&MachineState::from_array(a));
            for r in 0..4 {
                jac[(r, c)] = r1[r] - r0[r];
            }
        }
        let dx = solve_dense(jac, &DVector::from_row_slice(&r0)).expect("trapezoid matrix is regular");
        let a = x.to_array();
        x = MachineState::from_array(std::array::from_fn(|k| a[k] - dx[k]));
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::{test_sg_star, MachineModel};

    #[test]
    fn trapezoid_residual_cases() {
        let c = MachineState { eq_p: 0.1, ed_p: -0.2, delta: 0.3, domega: 0.01 };
        let x = MachineState { eq_p: 1.0, ed_p: 0.5, delta: -0.4, domega: 0.0 };
        let dt = 0.02;
        let next = x.axpy(dt, c);
        let r = trapezoidal_residual(&x, &next, &c, &c, dt);
        assert!(r.iter().all(|v| v.abs() < 1e-15));
        let z = MachineState::default();
        assert_eq!(trapezoidal_residual(&x, &x, &z, &z, dt), [0.0; 4]);
    }

    #[test]
    fn trapezoid_root_for_linear_decay() {
        // xdot = lambda x in the delta slot
        let (lam, dt, x0) = (-1.0, 0.02, 0.7);
        let root = x0 * (1.0 + lam * dt / 2.0) / (1.0 - lam * dt / 2.0);
        let xn = MachineState { delta: x0, ..Default::default() };
        let xr = MachineState { delta: root, ..Default::default() };
        let fn_ = MachineState { delta: lam * x0, ..Default::default() };
        let fr = MachineState { delta: lam * root, ..Default::default() };
        assert!(trapezoidal_residual(&xn, &xr, &fn_, &fr, dt)[2].abs() < 1e-16);
    }

    #[test]
    fn oracle_equilibrium_and_drift() {
        let mut p = test_sg_star();
        p.tm = 0.0;
        let s = MachineState { eq_p: 1.0, ed_p: 0.5, delta: 0.2, domega: 0.0 };
        let zero = DqCurrents::default();
        let out = fine_step_oracle(&s, &p, |_| zero, 0.02, 400, 60.0);
        assert_eq!(out, s);

        // rotor drift with no torque and no damping: domega stays, delta moves linearly
        p.d = 0.0;
        let s = MachineState { domega: 0.004, ..s };
        let out = fine_step_oracle(&s, &p, |_| zero, 0.03, 600, 60.0);
        let expect = 0.2 + 2.0 * std::f64::consts::PI * 60.0 * 0.004 * 0.03;
        assert!((out.delta - expect).abs() < 1e-14);
        assert_eq!(out.domega, 0.004);
    }

    #[test]
    fn oracle_self_convergence() {
        let p = test_sg_star();
        let s = MachineState { eq_p: 0.8, ed_p: 0.7, delta: 0.4, domega: 0.01 };
        let (i0, i1) = (DqCurrents { id: 0.5, iq: 0.7 }, DqCurrents { id: 0.75, iq: 0.45 });
        let dt = 0.04;
        let prof = |t: f64| i0.lerp(i1, t / dt);
        let a = fine_step_oracle(&s, &p, prof, dt, oracle_substeps(dt), 60.0);
        let b = fine_step_oracle(&s, &p, prof, dt, 2 * oracle_substeps(dt), 60.0);
        for (x, y) in a.to_array().iter().zip(b.to_array()) {
            assert!((x - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn oracle_two_axis_self_convergence() {
        let p = MachineParams { model: MachineModel::TwoAxis, xq_p: 0.25, ..test_sg_star() };
        let s = MachineState { eq_p: 0.8, ed_p: 0.7, delta: 0.4, domega: 0.01 };
        let (i0, i1) = (DqCurrents { id: 0.5, iq: 0.7 }, DqCurrents { id: 0.75, iq: 0.45 });
        let a = oracle_linear_profile(&s, &p, &i0, &i1, 0.02, 60.0);
        let b = fine_step_oracle(&s, &p, |t| i0.lerp(i1, t / 0.02), 0.02, 2 * oracle_substeps(0.02), 60.0);
        for (x, y) in a.to_array().iter().zip(b.to_array()) {
            assert!((x - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn frozen_trapezoid_local_order() {
        // Local error of the trapezoid against the oracle scales like dt^3.
        let p = test_sg_star();
        let s = MachineState { eq_p: 0.8, ed_p: 0.7, delta: 0.4, domega: 0.01 };
        let i = DqCurrents { id: 0.55, iq: 0.66 };
        let mut errs = Vec::new();
        for dt in [0.04, 0.02, 0.01, 0.005] {
            let t = trapezoidal_step_frozen(&s, &p, &i, &i, dt, 60.0);
            let o = oracle_linear_profile(&s, &p, &i, &i, dt, 60.0);
            errs.push((t.delta - o.delta).hypot(t.domega - o.domega));
        }
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((6.0..=10.0).contains(&ratio), "ratio {ratio} from {errs:?}");
        }
    }

    #[test]
    fn assignment_parsing() {
        let ids: Vec<String> = ["G1", "G2", "G3"].iter().map(|s| s.to_string()).collect();
        let a = IntegratorAssignment::parse("G3=pinn, G1=trap", &ids).unwrap();
        assert_eq!(a.methods, vec![Method::Trapezoidal, Method::Trapezoidal, Method::Pinn("default".into())]);
        let a = IntegratorAssignment::parse("G2=pinn:sg", &ids).unwrap();
        assert_eq!(a.methods[1], Method::Pinn("sg".into()));
        assert_eq!(
            IntegratorAssignment::parse("G7=pinn", &ids),
            Err(IntegratorError::UnknownMachine("G7".into()))
        );
        assert!(IntegratorAssignment::parse("G1=euler", &ids).is_err());
        assert!(IntegratorAssignment::parse("G1=trap,G1=pinn", &ids).is_err());
        assert_eq!(IntegratorAssignment::parse("", &ids).unwrap(), IntegratorAssignment::all_trapezoidal(3));
    }

    #[test]
    fn step_size_limits() {
        assert!(StepSize::new(0.02, 0.04).is_ok());
        assert!(StepSize::new(0.04, 0.04).is_ok());
        assert!(StepSize::new(0.05, 0.04).is_err());
        assert!(StepSize::new(0.0, f64::INFINITY).is_err());
        assert!(StepSize::new(-0.01, f64::INFINITY).is_err());
    }
}
