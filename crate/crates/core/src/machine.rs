//! Two-axis synchronous machine: state derivatives, stator circuit, frame
//! rotation into the network reference, and initialization from a power
//! flow.
//!
//! The dq quantities are rotated into the network frame with
//! `I = (I_d + j I_q) e^{j(delta - pi/2)}`.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MachineError {
    #[error("stator matrix is singular (Rs^2 + Xd'Xq' = {0})")]
    SingularStator(f64),
    #[error("terminal voltage is zero")]
    ZeroVoltage,
    #[error("invalid machine parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MachineModel {
    TwoAxis,
    /// `Xq' = Xd'` and constant internal voltages.
    Simplified,
}

/// Machine constants on the system base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineParams {
    pub h: f64,
    pub d: f64,
    pub xd: f64,
    pub xd_p: f64,
    pub xq: f64,
    pub xq_p: f64,
    pub rs: f64,
    pub td0_p: f64,
    pub tq0_p: f64,
    /// Mechanical torque input, held constant.
    pub tm: f64,
    /// Field voltage, held constant.
    pub efd: f64,
    pub model: MachineModel,
}

impl MachineParams {
    /// Enforces `Xq' = Xd'` for the simplified model.
    pub fn normalized(mut self) -> Self {
        if self.model == MachineModel::Simplified {
            self.xq_p = self.xd_p;
        }
        self
    }

    pub fn check(&self) -> Result<(), MachineError> {
        let bad = |m: &str| Err(MachineError::InvalidParams(m.to_string()));
        let all = [
            self.h, self.d, self.xd, self.xd_p, self.xq, self.xq_p, self.rs, self.td0_p,
            self.tq0_p, self.tm, self.efd,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("non-finite value");
        }
        if self.h <= 0.0 {
            return bad("H must be positive");
        }
        if self.xd_p <= 0.0 {
            return bad("Xd' must be positive");
        }
        if self.rs < 0.0 || self.d < 0.0 {
            return bad("Rs and D must be non-negative");
        }
        match self.model {
            MachineModel::TwoAxis => {
                if self.td0_p <= 0.0 || self.tq0_p <= 0.0 {
                    return bad("two-axis model needs positive T'do and T'qo");
                }
            }
            MachineModel::Simplified => {
                if self.xq_p != self.xd_p {
                    return bad("simplified model requires Xq' = Xd'");
                }
            }
        }
        Ok(())
    }
}

/// Differential states; also used for their time derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MachineState {
    pub eq_p: f64,
    pub ed_p: f64,
    pub delta: f64,
    pub domega: f64,
}

impl MachineState {
    pub fn to_array(self) -> [f64; 4] {
        [self.eq_p, self.ed_p, self.delta, self.domega]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self { eq_p: a[0], ed_p: a[1], delta: a[2], domega: a[3] }
    }

    pub fn axpy(self, a: f64, other: Self) -> Self {
        Self {
            eq_p: self.eq_p + a * other.eq_p,
            ed_p: self.ed_p + a * other.ed_p,
            delta: self.delta + a * other.delta,
            domega: self.domega + a * other.domega,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DqCurrents {
    pub id: f64,
    pub iq: f64,
}

impl DqCurrents {
    /// Point on the straight line from `self` (s = 0) to `end` (s = 1).
    pub fn lerp(self, end: Self, s: f64) -> Self {
        Self { id: self.id + s * (end.id - self.id), iq: self.iq + s * (end.iq - self.iq) }
    }
}

/// Solves the stator circuit
/// `[[Rs, -Xq'], [Xd', Rs]] [Id, Iq]^T = [Ed' - V sin(delta - theta), Eq' - V cos(delta - theta)]^T`.
pub fn stator_currents(
    s: &MachineState,
    v: f64,
    theta: f64,
    p: &MachineParams,
) -> Result<DqCurrents, MachineError> {
    let det = p.rs * p.rs + p.xd_p * p.xq_p;
    if det.abs() < 1e-300 {
        return Err(MachineError::SingularStator(det));
    }
    let (sin, cos) = sin_cos(s.delta - theta);
    let b1 = s.ed_p - v * sin;
    let b2 = s.eq_p - v * cos;
    Ok(DqCurrents {
        id: (p.rs * b1 + p.xq_p * b2) / det,
        iq: (p.rs * b2 - p.xd_p * b1) / det,
    })
}

/// Right-hand side of the machine equations divided by their left-hand
/// time constants.
pub fn state_derivative(
    s: &MachineState,
    i: &DqCurrents,
    p: &MachineParams,
    f_base: f64,
) -> MachineState {
    let torque = s.ed_p * i.id + s.eq_p * i.iq + (p.xq_p - p.xd_p) * i.id * i.iq;
    let domega = (p.tm - torque - p.d * s.domega) / (2.0 * p.h);
    let delta = 2.0 * PI * f_base * s.domega;
    match p.model {
        MachineModel::Simplified => MachineState { eq_p: 0.0, ed_p: 0.0, delta, domega },
        MachineModel::TwoAxis => MachineState {
            eq_p: (-s.eq_p - (p.xd - p.xd_p) * i.id + p.efd) / p.td0_p,
            ed_p: (-s.ed_p + (p.xq - p.xq_p) * i.iq) / p.tq0_p,
            delta,
            domega,
        },
    }
}

/// `(sin x, cos x)` from `libm`. Optimized builds would otherwise fuse
/// separate `sin`/`cos` calls into the platform `sincos`, whose rounding
/// differs, so trajectories would depend on the build profile.
pub fn sin_cos(x: f64) -> (f64, f64) {
    (libm::sin(x), libm::cos(x))
}

/// `r e^{j theta}` built with [`sin_cos`].
pub fn polar(r: f64, theta: f64) -> Complex64 {
    let (s, c) = sin_cos(theta);
    Complex64::new(r * c, r * s)
}

/// Current injected into the network, in the network reference frame.
pub fn network_injection(s: &MachineState, i: &DqCurrents) -> Complex64 {
    Complex64::new(i.id, i.iq) * polar(1.0, s.delta - FRAC_PI_2)
}

/// Rotates a network-frame phasor into the machine dq frame.
pub fn to_dq(delta: f64, phasor: Complex64) -> (f64, f64) {
    let r = phasor * polar(1.0, FRAC_PI_2 - delta);
    (r.re, r.im)
}

/// Steady-state initialization at a power-flow operating point.
///
/// Returns the state and a copy of `p` whose `tm` and `efd` are chosen so
/// that every derivative vanishes.
pub fn init_from_powerflow(
    p: &MachineParams,
    v: f64,
    theta: f64,
    p_inj: f64,
    q_inj: f64,
) -> Result<(MachineState, MachineParams), MachineError> {
    if v <= 0.0 || !v.is_finite() {
        return Err(MachineError::ZeroVoltage);
    }
    let vt = polar(v, theta);
    let it = (Complex64::new(p_inj, q_inj) / vt).conj();
    let delta = (vt + Complex64::new(p.rs, p.xq) * it).arg();
    let (id, iq) = to_dq(delta, it);
    let (vd, vq) = to_dq(delta, vt);
    let ed_p = vd + p.rs * id - p.xq_p * iq;
    let eq_p = vq + p.rs * iq + p.xd_p * id;
    let mut out = p.clone();
    out.tm = ed_p * id + eq_p * iq + (p.xq_p - p.xd_p) * id * iq;
    out.efd = eq_p + (p.xd - p.xd_p) * id;
    Ok((MachineState { eq_p, ed_p, delta, domega: 0.0 }, out))
}

#[cfg(test)]
pub(crate) use tests::sg_star as test_sg_star;

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn sg_star() -> MachineParams {
        MachineParams {
            h: 3.01,
            d: 0.903,
            xd: 1.3125,
            xd_p: 0.1813,
            xq: 1.2578,
            xq_p: 0.1813,
            rs: 0.0,
            td0_p: 5.89,
            tq0_p: 0.6,
            tm: 0.85,
            efd: 1.04,
            model: MachineModel::Simplified,
        }
    }

    fn two_axis() -> MachineParams {
        MachineParams {
            h: 6.4,
            d: 1.2,
            xd: 0.8958,
            xd_p: 0.1198,
            xq: 0.8645,
            xq_p: 0.1969,
            rs: 0.0015,
            td0_p: 6.0,
            tq0_p: 0.535,
            tm: 1.63,
            efd: 1.8,
            model: MachineModel::TwoAxis,
        }
    }

    #[test]
    fn stator_closed_form_with_zero_resistance() {
        let p = sg_star();
        let s = MachineState { eq_p: 1.0, ed_p: 0.0, delta: 0.3, domega: 0.0 };
        let i = stator_currents(&s, 1.0, 0.3, &p).unwrap();
        assert!(i.id.abs() < 1e-15 && i.iq.abs() < 1e-15);

        let i = stator_currents(&s, 1.0, 0.2, &p).unwrap();
        assert!((i.id - (1.0 - 0.1f64.cos()) / 0.1813).abs() < 1e-14);
        assert!((i.iq - 0.1f64.sin() / 0.1813).abs() < 1e-14);

        let s = MachineState { eq_p: 0.9, ed_p: 0.6, delta: 1.0, domega: 0.0 };
        let i = stator_currents(&s, 0.0, 0.4, &p).unwrap();
        assert!((i.id - 0.9 / 0.1813).abs() < 1e-14);
        assert!((i.iq + 0.6 / 0.1813).abs() < 1e-14);
    }

    #[test]
    fn singular_stator_is_reported() {
        let mut p = sg_star();
        p.xd_p = 0.0;
        p.xq_p = 0.0;
        let s = MachineState::default();
        assert!(matches!(stator_currents(&s, 1.0, 0.0, &p), Err(MachineError::SingularStator(_))));
    }

    #[test]
    fn derivative_spot_values() {
        let p = sg_star();
        let zero = DqCurrents::default();
        let s = MachineState { eq_p: 0.8, ed_p: 0.7, delta: 0.1, domega: 0.0 };
        let f = state_derivative(&s, &zero, &p, 60.0);
        assert_eq!(f.domega, 0.85 / (2.0 * 3.01));
        assert_eq!((f.eq_p, f.ed_p, f.delta), (0.0, 0.0, 0.0));

        let mut p0 = p.clone();
        p0.tm = 0.0;
        let s = MachineState { domega: 0.01, ..s };
        let f = state_derivative(&s, &zero, &p0, 60.0);
        assert!((f.delta - 2.0 * PI * 60.0 * 0.01).abs() < 1e-15);
        assert!((f.domega + 0.903 * 0.01 / (2.0 * 3.01)).abs() < 1e-18);
    }

    #[test]
    fn equilibrium_has_zero_derivative() {
        let p = sg_star();
        let i = DqCurrents { id: 0.5, iq: 0.6 };
        // Ed' Id + Eq' Iq = Tm
        let eq_p = (0.85 - 0.7 * 0.5) / 0.6;
        let s = MachineState { eq_p, ed_p: 0.7, delta: 0.4, domega: 0.0 };
        let f = state_derivative(&s, &i, &p, 60.0);
        assert!(f.to_array().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn injection_rotation_examples() {
        let s = MachineState { delta: FRAC_PI_2, ..Default::default() };
        let i = network_injection(&s, &DqCurrents { id: 1.0, iq: 0.0 });
        assert!((i - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        let i = network_injection(&s, &DqCurrents { id: 0.0, iq: 1.0 });
        assert!((i - Complex64::new(0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn unloaded_machine_init() {
        let p = sg_star();
        let (s, q) = init_from_powerflow(&p, 1.02, 0.3, 0.0, 0.0).unwrap();
        assert!((s.delta - 0.3).abs() < 1e-15);
        assert!((s.eq_p - 1.02).abs() < 1e-15);
        assert!(s.ed_p.abs() < 1e-15);
        assert!(q.tm.abs() < 1e-15);
        assert!(init_from_powerflow(&p, 0.0, 0.0, 0.5, 0.1).is_err());
    }

    proptest! {
        #[test]
        fn init_is_an_equilibrium(
            v in 0.9..1.1f64, theta in -1.0..1.0f64, pe in -0.2..1.5f64, qe in -0.5..0.6f64,
            two in any::<bool>(),
        ) {
            let p = if two { two_axis() } else { sg_star() };
            let (s, q) = init_from_powerflow(&p, v, theta, pe, qe).unwrap();
            let i = stator_currents(&s, v, theta, &q).unwrap();
            let f = state_derivative(&s, &i, &q, 60.0);
            for c in f.to_array() {
                prop_assert!(c.abs() <= 1e-10, "{f:?}");
            }
            // The injection reproduces the power-flow current.
            let inj = network_injection(&s, &i);
            let expect = (Complex64::new(pe, qe) / Complex64::from_polar(v, theta)).conj();
            prop_assert!((inj - expect).norm() < 1e-12);
        }

        #[test]
        fn stator_residual_and_rotation_isometry(
            eq in 0.4..1.2f64, ed in 0.0..1.2f64, delta in -3.0..3.0f64, v in 0.0..1.2f64,
            theta in -3.0..3.0f64, two in any::<bool>(),
        ) {
            let p = if two { two_axis() } else { sg_star() };
            let s = MachineState { eq_p: eq, ed_p: ed, delta, domega: 0.0 };
            let i = stator_currents(&s, v, theta, &p).unwrap();
            let r1 = p.rs * i.id - p.xq_p * i.iq - (ed - v * (delta - theta).sin());
            let r2 = p.xd_p * i.id + p.rs * i.iq - (eq - v * (delta - theta).cos());
            prop_assert!(r1.abs() <= 1e-12 && r2.abs() <= 1e-12);
            let inj = network_injection(&s, &i);
            prop_assert!((inj.norm() - i.id.hypot(i.iq)).abs() <= 1e-14 * (1.0 + inj.norm()));
            let (d, q) = to_dq(delta, inj);
            prop_assert!((d - i.id).abs() < 1e-12 && (q - i.iq).abs() < 1e-12);
        }
    }
}

