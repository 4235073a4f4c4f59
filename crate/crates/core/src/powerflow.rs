//! Newton-Raphson AC power flow in polar coordinates.
//!
//! The slack is the lowest-numbered generator bus; every other machine bus
//! is PV at its `v_set`, everything else PQ. No reactive limits.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::linalg::{inf_norm, solve_dense};
use crate::machine::polar;
use crate::netcore::{build_admittance, AdmittanceMatrix, CaseError, LoadModel, MachineKind, NetworkCase};

#[derive(Debug, Error)]
pub enum PowerFlowError {
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error("no generator bus to act as slack")]
    NoSlack,
    #[error("power flow did not converge in {iterations} iterations (mismatch {mismatch:e})")]
    NotConverged { iterations: usize, mismatch: f64 },
    #[error("power-flow Jacobian is singular at iteration {0}")]
    SingularJacobian(usize),
    #[error("dimension mismatch: expected {expected} buses, got {got}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusType {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    pub vm: Vec<f64>,
    pub va: Vec<f64>,
    /// Per machine, in case order.
    pub p_machine: Vec<f64>,
    pub q_machine: Vec<f64>,
    /// Internal index of the slack bus.
    pub slack: usize,
    pub iterations: usize,
    pub mismatch: f64,
}

impl PowerFlowSolution {
    pub fn voltage(&self, i: usize) -> Complex64 {
        polar(self.vm[i], self.va[i])
    }
}

/// Prepared data for repeated mismatch and Jacobian evaluations.
#[derive(Debug, Clone)]
pub struct PowerFlowProblem {
    pub ybus: AdmittanceMatrix,
    pub bus_type: Vec<BusType>,
    pub p_spec: Vec<f64>,
    pub q_spec: Vec<f64>,
    pub v_set: Vec<f64>,
    pub slack: usize,
}

impl PowerFlowProblem {
    pub fn new(case: &NetworkCase) -> Result<Self, PowerFlowError> {
        let ybus = build_admittance(case, LoadModel::None, None)?;
        let n = case.n_bus();
        let mut bus_type = vec![BusType::Pq; n];
        let mut p_spec = vec![0.0; n];
        let mut q_spec = vec![0.0; n];
        let mut v_set = vec![1.0; n];
        for (i, (p, q)) in (0..n).map(|i| (i, case.load_at(i))) {
            p_spec[i] -= p;
            q_spec[i] -= q;
        }
        let mut slack = None;
        for m in &case.machines {
            let i = case.bus_index(m.bus).expect("validated case");
            bus_type[i] = BusType::Pv;
            v_set[i] = case.buses[i].v_set;
            p_spec[i] += m.p_gen;
            if m.kind == MachineKind::Generator && slack.is_none_or(|s| i < s) {
                slack = Some(i);
            }
        }
        let slack = slack.ok_or(PowerFlowError::NoSlack)?;
        bus_type[slack] = BusType::Slack;
        Ok(Self { ybus, bus_type, p_spec, q_spec, v_set, slack })
    }

    fn injections(&self, vm: &[f64], va: &[f64]) -> Vec<Complex64> {
        let v: Vec<Complex64> = vm.iter().zip(va).map(|(&m, &a)| polar(m, a)).collect();
        let i = self.ybus.mul_vec(&v);
        v.iter().zip(&i).map(|(v, i)| v * i.conj()).collect()
    }

    /// Per-bus `(P_inj - P_spec, Q_inj - Q_spec)`.
    pub fn mismatch(&self, vm: &[f64], va: &[f64]) -> Result<Vec<(f64, f64)>, PowerFlowError> {
        let n = self.ybus.dim();
        for len in [vm.len(), va.len()] {
            if len != n {
                return Err(PowerFlowError::Dimension { expected: n, got: len });
            }
        }
        Ok(self
            .injections(vm, va)
            .iter()
            .enumerate()
            .map(|(i, s)| (s.re - self.p_spec[i], s.im - self.q_spec[i]))
            .collect())
    }

    /// Unknown layout: angles of non-slack buses, then magnitudes of PQ buses.
    /// Equations: P at non-slack buses, then Q at PQ buses.
    fn layout(&self) -> (Vec<usize>, Vec<usize>) {
        let n = self.ybus.dim();
        let ang = (0..n).filter(|&i| self.bus_type[i] != BusType::Slack).collect();
        let mag = (0..n).filter(|&i| self.bus_type[i] == BusType::Pq).collect();
        (ang, mag)
    }

    fn reduced_mismatch(&self, vm: &[f64], va: &[f64], ang: &[usize], mag: &[usize]) -> Vec<f64> {
        let mis = self.mismatch(vm, va).expect("sized");
        ang.iter().map(|&i| mis[i].0).chain(mag.iter().map(|&i| mis[i].1)).collect()
    }

    /// Analytic Jacobian of the reduced mismatch w.r.t. (angles, magnitudes).
    pub fn jacobian(&self, vm: &[f64], va: &[f64]) -> DMatrix<f64> {
        let (ang, mag) = self.layout();
        let n = self.ybus.dim();
        let v: Vec<Complex64> = vm.iter().zip(va).map(|(&m, &a)| polar(m, a)).collect();
        let ibus = self.ybus.mul_vec(&v);
        // dS/dVa = j diag(V) conj(diag(Ibus) - Y diag(V))
        // dS/dVm = diag(V) conj(Y diag(V/|V|)) + conj(diag(Ibus)) diag(V/|V|)
        let mut ds_da = vec![Complex64::new(0.0, 0.0); n * n];
        let mut ds_dm = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for k in 0..n {
                let y = self.ybus[(i, k)];
                let mut a = -(y * v[k]);
                if i == k {
                    a += ibus[i];
                }
                ds_da[i * n + k] = Complex64::new(0.0, 1.0) * v[i] * a.conj();
                let vn = v[k] / vm[k];
                let mut m = v[i] * (y * vn).conj();
                if i == k {
                    m += ibus[i].conj() * vn;
                }
                ds_dm[i * n + k] = m;
            }
        }
        let rows: Vec<(usize, bool)> = ang.iter().map(|&i| (i, true)).chain(mag.iter().map(|&i| (i, false))).collect();
        let cols: Vec<(usize, bool)> = ang.iter().map(|&i| (i, true)).chain(mag.iter().map(|&i| (i, false))).collect();
        DMatrix::from_fn(rows.len(), cols.len(), |r, c| {
            let (i, is_p) = rows[r];
            let (k, is_ang) = cols[c];
            let ds = if is_ang { ds_da[i * n + k] } else { ds_dm[i * n + k] };
            if is_p { ds.re } else { ds.im }
        })
    }

    pub fn solve(&self, tol: f64, max_iter: usize) -> Result<(Vec<f64>, Vec<f64>, usize, f64), PowerFlowError> {
        let n = self.ybus.dim();
        let (ang, mag) = self.layout();
        let mut vm: Vec<f64> = (0..n)
            .map(|i| if self.bus_type[i] == BusType::Pq { 1.0 } else { self.v_set[i] })
            .collect();
        let mut va = vec![0.0; n];
        let mut iterations = 0;
        loop {
            let f = self.reduced_mismatch(&vm, &va, &ang, &mag);
            let norm = inf_norm(&f);
            if norm <= tol {
                return Ok((vm, va, iterations, norm));
            }
            if iterations >= max_iter || !norm.is_finite() {
                return Err(PowerFlowError::NotConverged { iterations, mismatch: norm });
            }
            let jac = self.jacobian(&vm, &va);
            let dx = solve_dense(jac, &DVector::from_vec(f))
                .ok_or(PowerFlowError::SingularJacobian(iterations))?;
            for (k, &i) in ang.iter().enumerate() {
                va[i] -= dx[k];
            }
            for (k, &i) in mag.iter().enumerate() {
                vm[i] -= dx[ang.len() + k];
            }
            iterations += 1;
        }
    }
}

/// Per-bus `(dP, dQ)` of the case at the given voltages.
pub fn power_mismatch(case: &NetworkCase, vm: &[f64], va: &[f64]) -> Result<Vec<(f64, f64)>, PowerFlowError> {
    PowerFlowProblem::new(case)?.mismatch(vm, va)
}

pub fn solve_power_flow(case: &NetworkCase, tol: f64, max_iter: usize) -> Result<PowerFlowSolution, PowerFlowError> {
    let prob = PowerFlowProblem::new(case)?;
    let (vm, va, iterations, mismatch) = prob.solve(tol, max_iter)?;
    let s = prob.injections(&vm, &va);
    let mut p_machine = Vec::with_capacity(case.machines.len());
    let mut q_machine = Vec::with_capacity(case.machines.len());
    for m in &case.machines {
        let i = case.bus_index(m.bus).expect("validated case");
        let (pl, ql) = case.load_at(i);
        p_machine.push(s[i].re + pl);
        q_machine.push(s[i].im + ql);
    }
    Ok(PowerFlowSolution { vm, va, p_machine, q_machine, slack: prob.slack, iterations, mismatch })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases;
    use crate::netcore::parse_case;
    use proptest::prelude::*;

    fn two_bus_case(load: f64) -> NetworkCase {
        parse_case(&format!(
            "[bus]\n1 1.0 0 0\n2 1.0 0 0\n[branch]\n1 2 0 0.1 0 1\n[load]\n2 {load} 0\n\
             [machine]\nG1 1 generator 0 simplified 0 5 1 1 0.2 1 0.2 0 5 0.5\n"
        ))
        .unwrap()
    }

    /// Bisection on the scalar angle equation with |V2| eliminated by the
    /// reactive balance: Q2 = 0 gives V2 = cos(theta2) for x = 0.1, V1 = 1.
    fn bisection_angle(load: f64) -> f64 {
        let g = |th: f64| th.cos() * (-th).sin() / 0.1 - load;
        let (mut lo, mut hi) = (-std::f64::consts::FRAC_PI_4, 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn two_bus_against_bisection() {
        let c = two_bus_case(0.5);
        let sol = solve_power_flow(&c, 1e-12, 50).unwrap();
        let th = bisection_angle(0.5);
        assert!((sol.va[1] - th).abs() < 1e-10, "{} vs {th}", sol.va[1]);
        // P balance from the problem statement
        assert!((0.5 - sol.vm[1] / 0.1 * (-sol.va[1]).sin()).abs() < 1e-10);
        assert!((sol.p_machine[0] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn flat_start_is_exact_without_load() {
        let c = two_bus_case(0.0);
        let sol = solve_power_flow(&c, 1e-8, 50).unwrap();
        assert_eq!(sol.iterations, 0);
        assert_eq!(sol.va, vec![0.0, 0.0]);
        assert_eq!(sol.vm, vec![1.0, 1.0]);
    }

    #[test]
    fn shipped_cases_converge_quickly() {
        for text in [cases::IEEE9, cases::IEEE14, cases::IEEE30] {
            let c = parse_case(text).unwrap();
            let sol = solve_power_flow(&c, 1e-8, 50).unwrap();
            assert!(sol.iterations <= 10, "{} took {}", c.name, sol.iterations);
            let mis = power_mismatch(&c, &sol.vm, &sol.va).unwrap();
            let prob = PowerFlowProblem::new(&c).unwrap();
            for (i, (dp, dq)) in mis.iter().enumerate() {
                if prob.bus_type[i] != BusType::Slack {
                    assert!(dp.abs() <= 1e-8);
                }
                if prob.bus_type[i] == BusType::Pq {
                    assert!(dq.abs() <= 1e-8);
                }
            }
            assert!(sol.vm.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn mismatch_dimension_error() {
        let c = parse_case(cases::IEEE9).unwrap();
        assert!(matches!(power_mismatch(&c, &[1.0; 3], &[0.0; 9]), Err(PowerFlowError::Dimension { .. })));
    }

    #[test]
    fn non_convergence_reports_mismatch() {
        let c = two_bus_case(8.0);
        match solve_power_flow(&c, 1e-8, 20) {
            Err(PowerFlowError::NotConverged { mismatch, .. }) => assert!(mismatch > 1e-8),
            Err(PowerFlowError::SingularJacobian(_)) => {}
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn slack_balance_matches_branch_losses() {
        for text in [cases::IEEE9, cases::IEEE14, cases::IEEE30] {
            let c = parse_case(text).unwrap();
            let sol = solve_power_flow(&c, 1e-10, 50).unwrap();
            let gen: f64 = sol.p_machine.iter().sum();
            let load: f64 = c.loads.iter().map(|l| l.p).sum();
            let mut losses = 0.0;
            for br in &c.branches {
                let f = c.bus_index(br.from_bus).unwrap();
                let t = c.bus_index(br.to_bus).unwrap();
                let vf = sol.voltage(f) / br.tap_ratio;
                let vt = sol.voltage(t);
                let ys = Complex64::new(br.series_r, br.series_x).inv();
                let series = (vf - vt) * ys;
                losses += series.norm_sqr() * br.series_r;
            }
            for (i, b) in c.buses.iter().enumerate() {
                losses += b.g_shunt * sol.vm[i] * sol.vm[i];
            }
            assert!((gen - load - losses).abs() < 1e-8, "{}: {}", c.name, gen - load - losses);
        }
    }

    #[test]
    fn angle_perturbation_matches_jacobian_row() {
        let c = parse_case(cases::IEEE9).unwrap();
        let sol = solve_power_flow(&c, 1e-10, 50).unwrap();
        let prob = PowerFlowProblem::new(&c).unwrap();
        let jac = prob.jacobian(&sol.vm, &sol.va);
        // bus index 4 (bus 5) is the 4th angle unknown (slack excluded)
        let (ang, _) = prob.layout();
        let col = ang.iter().position(|&i| i == 4).unwrap();
        let mut va = sol.va.clone();
        va[4] += 1e-6;
        let before = prob.mismatch(&sol.vm, &sol.va).unwrap();
        let after = prob.mismatch(&sol.vm, &va).unwrap();
        for (r, &i) in ang.iter().enumerate() {
            let fd = (after[i].0 - before[i].0) / 1e-6;
            let an = jac[(r, col)];
            assert!((fd - an).abs() <= 1e-4 * an.abs().max(1e-3), "row {i}: {fd} vs {an}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn jacobian_matches_central_differences(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let c = parse_case(cases::IEEE14).unwrap();
            let prob = PowerFlowProblem::new(&c).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = c.n_bus();
            let vm: Vec<f64> = (0..n).map(|_| rng.random_range(0.9..1.1)).collect();
            let va: Vec<f64> = (0..n).map(|_| rng.random_range(-0.4..0.4)).collect();
            let (ang, mag) = prob.layout();
            let jac = prob.jacobian(&vm, &va);
            let h = 1e-6;
            for c_idx in 0..ang.len() + mag.len() {
                let (mut vp, mut ap, mut vn, mut an) = (vm.clone(), va.clone(), vm.clone(), va.clone());
                if c_idx < ang.len() {
                    ap[ang[c_idx]] += h;
                    an[ang[c_idx]] -= h;
                } else {
                    vp[mag[c_idx - ang.len()]] += h;
                    vn[mag[c_idx - ang.len()]] -= h;
                }
                let fp = prob.reduced_mismatch(&vp, &ap, &ang, &mag);
                let fm = prob.reduced_mismatch(&vn, &an, &ang, &mag);
                for r in 0..fp.len() {
                    let fd = (fp[r] - fm[r]) / (2.0 * h);
                    let a = jac[(r, c_idx)];
                    prop_assert!((fd - a).abs() <= 1e-6 * a.abs().max(1.0), "({r},{c_idx}) {fd} vs {a}");
                }
            }
        }
    }
}
