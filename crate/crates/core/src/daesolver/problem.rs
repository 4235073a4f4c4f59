//! The nonlinear system of one time step.

use num_complex::Complex64;

use crate::integrators::{pinn_residual, trapezoidal_residual, DomainPolicy};
use crate::machine::{
    network_injection, sin_cos, state_derivative, DqCurrents, MachineError, MachineModel, MachineParams,
    MachineState,
};
use crate::netcore::AdmittanceMatrix;
use crate::pinn::{MlpModel, StepInputs, N_INPUTS};

use super::SimError;

/// Discretization of one machine within a step.
#[derive(Debug, Clone, Copy)]
pub enum StepRule<'a> {
    Trapezoidal,
    Pinn(&'a MlpModel),
}

/// Stator currents with the terminal voltage in rectangular form. Same
/// circuit as [`crate::machine::stator_currents`].
pub fn stator_currents_rect(
    s: &MachineState,
    v: Complex64,
    p: &MachineParams,
) -> Result<DqCurrents, MachineError> {
    let det = p.rs * p.rs + p.xd_p * p.xq_p;
    if det.abs() < 1e-300 {
        return Err(MachineError::SingularStator(det));
    }
    let (sin, cos) = sin_cos(s.delta);
    let b1 = s.ed_p - (sin * v.re - cos * v.im);
    let b2 = s.eq_p - (cos * v.re + sin * v.im);
    Ok(DqCurrents { id: (p.rs * b1 + p.xq_p * b2) / det, iq: (p.rs * b2 - p.xd_p * b1) / det })
}

/// Derivatives of `(Id, Iq)` w.r.t. `(delta, V_re, V_im)`.
fn stator_partials(s: &MachineState, v: Complex64, p: &MachineParams) -> [[f64; 3]; 2] {
    let det = p.rs * p.rs + p.xd_p * p.xq_p;
    let (sin, cos) = sin_cos(s.delta);
    // db1, db2 along (delta, Vr, Vi)
    let db1 = [-(cos * v.re + sin * v.im), -sin, cos];
    let db2 = [sin * v.re - cos * v.im, -cos, -sin];
    let mut out = [[0.0; 3]; 2];
    for k in 0..3 {
        out[0][k] = (p.rs * db1[k] + p.xq_p * db2[k]) / det;
        out[1][k] = (p.rs * db2[k] - p.xd_p * db1[k]) / det;
    }
    out
}

/// Number of unknown states per machine: the simplified model keeps its
/// internal voltages pinned and solves only `(delta, domega)`.
pub fn n_unknown_states(p: &MachineParams) -> usize {
    match p.model {
        MachineModel::Simplified => 2,
        MachineModel::TwoAxis => 4,
    }
}

/// One time step: unknowns are the end-of-step machine states followed by
/// `(V_re, V_im)` per bus.
pub struct StepProblem<'a> {
    pub machines: &'a [MachineParams],
    /// Bus index of each machine.
    pub bus_of: &'a [usize],
    pub ybus: &'a AdmittanceMatrix,
    pub rules: &'a [StepRule<'a>],
    pub x_n: Vec<MachineState>,
    pub i_n: Vec<DqCurrents>,
    pub f_n: Vec<MachineState>,
    pub dt: f64,
    pub f_base: f64,
    offsets: Vec<usize>,
    n_states: usize,
}

/// Decoded unknown vector.
pub struct Unpacked {
    pub states: Vec<MachineState>,
    pub voltages: Vec<Complex64>,
}

impl<'a> StepProblem<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        machines: &'a [MachineParams],
        bus_of: &'a [usize],
        ybus: &'a AdmittanceMatrix,
        rules: &'a [StepRule<'a>],
        x_n: Vec<MachineState>,
        i_n: Vec<DqCurrents>,
        dt: f64,
        f_base: f64,
    ) -> Self {
        let mut offsets = Vec::with_capacity(machines.len());
        let mut k = 0;
        for p in machines {
            offsets.push(k);
            k += n_unknown_states(p);
        }
        let f_n = x_n
            .iter()
            .zip(&i_n)
            .zip(machines)
            .map(|((x, i), p)| state_derivative(x, i, p, f_base))
            .collect();
        Self { machines, bus_of, ybus, rules, x_n, i_n, f_n, dt, f_base, offsets, n_states: k }
    }

    pub fn n_unknowns(&self) -> usize {
        self.n_states + 2 * self.ybus.dim()
    }

    /// Index of the first network unknown.
    pub fn network_offset(&self) -> usize {
        self.n_states
    }

    pub fn machine_offset(&self, k: usize) -> usize {
        self.offsets[k]
    }

    pub fn pack(&self, states: &[MachineState], voltages: &[Complex64]) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.n_unknowns());
        for (s, p) in states.iter().zip(self.machines) {
            match p.model {
                MachineModel::Simplified => z.extend_from_slice(&[s.delta, s.domega]),
                MachineModel::TwoAxis => z.extend_from_slice(&s.to_array()),
            }
        }
        for v in voltages {
            z.extend_from_slice(&[v.re, v.im]);
        }
        z
    }

    pub fn unpack(&self, z: &[f64]) -> Unpacked {
        let states = self
            .machines
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let o = self.offsets[k];
                match p.model {
                    MachineModel::Simplified => {
                        MachineState { delta: z[o], domega: z[o + 1], ..self.x_n[k] }
                    }
                    MachineModel::TwoAxis => MachineState::from_array([z[o], z[o + 1], z[o + 2], z[o + 3]]),
                }
            })
            .collect();
        let voltages = z[self.n_states..].chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
        Unpacked { states, voltages }
    }

    /// End-of-step dq currents implied by `z`.
    pub fn currents(&self, u: &Unpacked) -> Result<Vec<DqCurrents>, MachineError> {
        u.states
            .iter()
            .zip(self.machines)
            .zip(self.bus_of)
            .map(|((s, p), &b)| stator_currents_rect(s, u.voltages[b], p))
            .collect()
    }

    /// Residual at `z`. The boolean reports whether any surrogate input
    /// had to be clamped into its domain.
    pub fn residual(&self, z: &[f64], policy: DomainPolicy) -> Result<(Vec<f64>, bool), SimError> {
        let u = self.unpack(z);
        let currents = self.currents(&u)?;
        let mut r = vec![0.0; self.n_unknowns()];
        let mut clamped = false;
        for (k, p) in self.machines.iter().enumerate() {
            let o = self.offsets[k];
            let (x, i) = (&u.states[k], &currents[k]);
            match self.rules[k] {
                StepRule::Trapezoidal => {
                    let f = state_derivative(x, i, p, self.f_base);
                    let t = trapezoidal_residual(&self.x_n[k], x, &self.f_n[k], &f, self.dt);
                    match p.model {
                        MachineModel::Simplified => r[o..o + 2].copy_from_slice(&t[2..]),
                        MachineModel::TwoAxis => r[o..o + 4].copy_from_slice(&t),
                    }
                }
                StepRule::Pinn(m) => {
                    let (res, c) =
                        pinn_residual(&self.x_n[k], x, &self.i_n[k], i, self.dt, m, policy)?;
                    clamped |= c;
                    r[o..o + 2].copy_from_slice(&res);
                }
            }
        }
        let yv = self.ybus.mul_vec(&u.voltages);
        let mut inj = yv;
        for (k, &b) in self.bus_of.iter().enumerate() {
            inj[b] -= network_injection(&u.states[k], &currents[k]);
        }
        for (b, c) in inj.iter().enumerate() {
            r[self.n_states + 2 * b] = c.re;
            r[self.n_states + 2 * b + 1] = c.im;
        }
        Ok((r, clamped))
    }

    /// Analytic rows of a surrogate machine: `d r / d z` for its two
    /// residual rows. Inputs clamped to the domain contribute no derivative.
    pub fn pinn_rows(&self, k: usize, z: &[f64]) -> Result<[Vec<f64>; 2], SimError> {
        let StepRule::Pinn(m) = self.rules[k] else {
            panic!("machine {k} is not a surrogate");
        };
        let p = &self.machines[k];
        let u = self.unpack(z);
        let b = self.bus_of[k];
        let x = &u.states[k];
        let v = u.voltages[b];
        let i1 = stator_currents_rect(x, v, p)?;
        let inputs = StepInputs { dt: self.dt, state: self.x_n[k], i0: self.i_n[k], i1 };
        let clamped = m.meta.domain.clamp(&inputs).to_array();
        let raw = inputs.to_array();
        let mut jin = m.jacobian_wrt_inputs(&clamped);
        for row in jin.iter_mut() {
            for c in 0..N_INPUTS {
                if clamped[c] != raw[c] {
                    row[c] = 0.0;
                }
            }
        }
        let ds = stator_partials(x, v, p);
        let n = self.n_unknowns();
        let o = self.offsets[k];
        let vo = self.n_states + 2 * b;
        let mut rows = [vec![0.0; n], vec![0.0; n]];
        for (out, row) in rows.iter_mut().enumerate() {
            row[o + out] = 1.0;
            // r = x_next - x_n - dt NN(.., Id1, Iq1); inputs 7, 8 are the end currents
            for (col, kk) in [(o, 0), (vo, 1), (vo + 1, 2)] {
                let d_nn = jin[out][7] * ds[0][kk] + jin[out][8] * ds[1][kk];
                row[col] -= self.dt * d_nn;
            }
        }
        Ok(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::{stator_currents, test_sg_star};

    #[test]
    fn rectangular_stator_matches_polar() {
        let p = MachineParams { rs: 0.003, xq_p: 0.25, model: MachineModel::TwoAxis, ..test_sg_star() };
        let s = MachineState { eq_p: 1.05, ed_p: 0.3, delta: 0.9, domega: 0.0 };
        let v = Complex64::from_polar(0.98, 0.2);
        let a = stator_currents_rect(&s, v, &p).unwrap();
        let b = stator_currents(&s, v.norm(), v.arg(), &p).unwrap();
        assert!((a.id - b.id).abs() < 1e-13 && (a.iq - b.iq).abs() < 1e-13);
    }

    #[test]
    fn stator_partials_match_fd() {
        let p = MachineParams { rs: 0.003, ..test_sg_star() };
        let s = MachineState { eq_p: 1.05, ed_p: 0.3, delta: 0.9, domega: 0.0 };
        let v = Complex64::new(0.95, 0.2);
        let d = stator_partials(&s, v, &p);
        let h = 1e-6;
        let f = |dd: f64, dr: f64, di: f64| {
            let s = MachineState { delta: s.delta + dd, ..s };
            let i = stator_currents_rect(&s, v + Complex64::new(dr, di), &p).unwrap();
            [i.id, i.iq]
        };
        for (k, (a, b, c)) in [(h, 0.0, 0.0), (0.0, h, 0.0), (0.0, 0.0, h)].into_iter().enumerate() {
            let (fp, fm) = (f(a, b, c), f(-a, -b, -c));
            for o in 0..2 {
                let fd = (fp[o] - fm[o]) / (2.0 * h);
                assert!((fd - d[o][k]).abs() < 1e-7, "{o} {k}: {fd} {}", d[o][k]);
            }
        }
    }
}
