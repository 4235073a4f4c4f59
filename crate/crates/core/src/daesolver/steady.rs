//! Consistency of a settled dynamic solution with the power-flow equations
//! of the post-disturbance network.

use num_complex::Complex64;

use super::{PreparedSystem, SimError, Trajectory};
use crate::machine::polar;
use crate::netcore::{apply_disturbance, Scenario};
use crate::powerflow::{BusType, PowerFlowProblem};

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateReport {
    /// Largest change of any speed deviation over the last second.
    pub domega_drift: f64,
    /// Final common speed deviation (largest magnitude over machines).
    pub domega_final: f64,
    /// Largest `|V_pf - V_sim|` over buses, complex phasors with the slack
    /// angle aligned.
    pub max_voltage_error: f64,
    /// Slack active power from the power flow minus the machine's settled
    /// electrical output.
    pub slack_p_error: f64,
}

impl SteadyStateReport {
    pub fn settled(&self, tol: f64) -> bool {
        self.domega_drift < tol
    }
}

/// Builds a power flow whose PV injections are the settled electrical
/// outputs `Tm - D domega` (less stator losses) and whose PV magnitudes are
/// the settled terminal voltages, with constant-impedance loads (including
/// the scenario's steps) in the network matrix, and compares its solution
/// to the last trajectory row.
pub fn steady_state_check(
    sys: &PreparedSystem,
    scenario: &Scenario,
    tr: &Trajectory,
) -> Result<SteadyStateReport, SimError> {
    let last = tr.len().checked_sub(1).ok_or_else(|| SimError::Config("empty trajectory".into()))?;
    let t_end = tr.t[last];
    let window: Vec<usize> = (0..tr.len()).filter(|&n| tr.t[n] >= t_end - 1.0 - 1e-9).collect();
    let mut drift: f64 = 0.0;
    for k in 0..tr.machine_ids.len() {
        let (lo, hi) = window.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &n| {
            let w = tr.states[n][k].domega;
            (lo.min(w), hi.max(w))
        });
        drift = drift.max(hi - lo);
    }

    let mut post = sys.base.clone();
    for d in &scenario.disturbances {
        post = apply_disturbance(&post, &sys.case, d, &sys.pf)?;
    }
    let n = sys.case.n_bus();
    let mut bus_type = vec![BusType::Pq; n];
    let mut p_spec = vec![0.0; n];
    let mut v_set = vec![1.0; n];
    let mut domega_final: f64 = 0.0;
    let mut slack_machine_p = 0.0;
    for (k, p) in post.machines.iter().enumerate() {
        let b = sys.bus_of[k];
        let s = &tr.states[last][k];
        let i = &tr.currents[last][k];
        let pe = p.tm - p.d * s.domega - p.rs * (i.id * i.id + i.iq * i.iq);
        p_spec[b] += pe;
        bus_type[b] = BusType::Pv;
        v_set[b] = tr.vm[last][b];
        domega_final = if s.domega.abs() > domega_final.abs() { s.domega } else { domega_final };
        if b == sys.pf.slack {
            slack_machine_p += pe;
        }
    }
    bus_type[sys.pf.slack] = BusType::Slack;
    let prob = PowerFlowProblem {
        ybus: post.ybus,
        bus_type,
        p_spec,
        q_spec: vec![0.0; n],
        v_set,
        slack: sys.pf.slack,
    };
    let (vm, va, _, _) = prob.solve(1e-12, 50)?;
    let shift = tr.va[last][sys.pf.slack] - va[sys.pf.slack];
    let mut err: f64 = 0.0;
    for b in 0..n {
        let a = polar(vm[b], va[b] + shift);
        let s = polar(tr.vm[last][b], tr.va[last][b]);
        err = err.max((a - s).norm());
    }
    let v: Vec<Complex64> = (0..n).map(|b| polar(vm[b], va[b])).collect();
    let yv = prob.ybus.mul_vec(&v);
    let p_slack = (v[sys.pf.slack] * yv[sys.pf.slack].conj()).re;
    Ok(SteadyStateReport {
        domega_drift: drift,
        domega_final,
        max_voltage_error: err,
        slack_p_error: p_slack - slack_machine_p,
    })
}
