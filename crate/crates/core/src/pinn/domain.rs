use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::StepInputs;
use crate::machine::{DqCurrents, MachineState};

pub const N_INPUTS: usize = 9;
pub const N_OUTPUTS: usize = 2;

/// Input order of the network.
pub const INPUT_NAMES: [&str; N_INPUTS] =
    ["dt", "Eq", "Ed", "delta", "domega", "Id0", "Iq0", "Id1", "Iq1"];

/// Axis-aligned box of admissible surrogate inputs. Currents share one
/// range for both ends of the step. Time step in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub dt: [f64; 2],
    pub eq_p: [f64; 2],
    pub ed_p: [f64; 2],
    pub delta: [f64; 2],
    pub domega: [f64; 2],
    pub id: [f64; 2],
    pub iq: [f64; 2],
}

impl Default for DomainBox {
    /// The shipped training domain.
    fn default() -> Self {
        Self {
            dt: [0.001, 0.040],
            eq_p: [0.4, 1.2],
            ed_p: [0.4, 1.2],
            delta: [-PI, PI],
            domega: [-0.02, 0.02],
            id: [0.4, 0.8],
            iq: [0.4, 0.8],
        }
    }
}

impl DomainBox {
    pub fn lo_hi(&self) -> ([f64; N_INPUTS], [f64; N_INPUTS]) {
        let r = [
            self.dt, self.eq_p, self.ed_p, self.delta, self.domega, self.id, self.iq, self.id,
            self.iq,
        ];
        (r.map(|x| x[0]), r.map(|x| x[1]))
    }

    pub fn check(&self) -> Result<(), String> {
        let (lo, hi) = self.lo_hi();
        for k in 0..N_INPUTS {
            if !(hi[k] > lo[k]) || !lo[k].is_finite() || !hi[k].is_finite() {
                return Err(format!("range of {} must satisfy hi > lo", INPUT_NAMES[k]));
            }
        }
        if self.dt[0] < 0.0 {
            return Err("time step range must be non-negative".into());
        }
        Ok(())
    }

    /// Maps a point of the unit cube onto the box. The delta axis is
    /// half-open, so 1.0 is never produced by the samplers.
    pub fn from_unit(&self, u: &[f64; N_INPUTS]) -> StepInputs {
        let (lo, hi) = self.lo_hi();
        let x: Vec<f64> = (0..N_INPUTS).map(|k| lo[k] + u[k] * (hi[k] - lo[k])).collect();
        StepInputs {
            dt: x[0],
            state: MachineState { eq_p: x[1], ed_p: x[2], delta: x[3], domega: x[4] },
            i0: DqCurrents { id: x[5], iq: x[6] },
            i1: DqCurrents { id: x[7], iq: x[8] },
        }
    }

    /// True when every input lies in the box (delta is checked after wrapping).
    pub fn contains(&self, s: &StepInputs) -> bool {
        self.violation(s).is_none()
    }

    /// First input outside the box, with its value.
    pub fn violation(&self, s: &StepInputs) -> Option<(&'static str, f64)> {
        let (lo, hi) = self.lo_hi();
        let x = s.to_array();
        (0..N_INPUTS)
            .find(|&k| x[k] < lo[k] || x[k] > hi[k])
            .map(|k| (INPUT_NAMES[k], x[k]))
    }

    pub fn clamp(&self, s: &StepInputs) -> StepInputs {
        let (lo, hi) = self.lo_hi();
        let x = s.to_array();
        let c: [f64; N_INPUTS] = std::array::from_fn(|k| x[k].clamp(lo[k], hi[k]));
        StepInputs::from_array(&c)
    }
}

/// I.i.d. uniform samples of the box.
pub fn uniform_samples(domain: &DomainBox, n: usize, seed: u64) -> Vec<StepInputs> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let u: [f64; N_INPUTS] = std::array::from_fn(|_| rng.random::<f64>());
            domain.from_unit(&u)
        })
        .collect()
}
