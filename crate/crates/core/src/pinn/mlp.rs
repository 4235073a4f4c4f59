use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::domain::{DomainBox, N_INPUTS, N_OUTPUTS};
use super::train::TrainConfig;
use crate::machine::{DqCurrents, MachineParams, MachineState};

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        -PI
    } else {
        w
    }
}

/// Raw (unnormalized) inputs of one surrogate step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepInputs {
    pub dt: f64,
    pub state: MachineState,
    pub i0: DqCurrents,
    pub i1: DqCurrents,
}

impl StepInputs {
    /// Network input vector; the rotor angle is wrapped into `[-pi, pi)`
    /// since the machine dynamics are 2-pi periodic in it.
    pub fn to_array(&self) -> [f64; N_INPUTS] {
        let s = &self.state;
        [
            self.dt,
            s.eq_p,
            s.ed_p,
            wrap_angle(s.delta),
            s.domega,
            self.i0.id,
            self.i0.iq,
            self.i1.id,
            self.i1.iq,
        ]
    }

    pub fn from_array(x: &[f64; N_INPUTS]) -> Self {
        Self {
            dt: x[0],
            state: MachineState { eq_p: x[1], ed_p: x[2], delta: x[3], domega: x[4] },
            i0: DqCurrents { id: x[5], iq: x[6] },
            i1: DqCurrents { id: x[7], iq: x[8] },
        }
    }

    /// Current slope of the linear profile, per second.
    pub fn current_slope(&self) -> DqCurrents {
        DqCurrents { id: (self.i1.id - self.i0.id) / self.dt, iq: (self.i1.iq - self.i0.iq) / self.dt }
    }

    /// The same profile truncated at elapsed time `t`.
    pub fn at_elapsed(&self, t: f64) -> Self {
        let s = if self.dt > 0.0 { t / self.dt } else { 0.0 };
        Self { dt: t, i1: self.i0.lerp(self.i1, s), ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    /// Affine output layer.
    Linear,
    /// tanh on the output layer as well.
    Activated,
}

/// Dense layer, weights row-major `n_out x n_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// What the model was trained for.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMeta {
    pub machine: MachineParams,
    pub f_base: f64,
    pub domain: DomainBox,
    pub train: Option<TrainConfig>,
    pub seed: u64,
}

/// Fully connected tanh network with input normalization, output scales
/// and the hard-constrained step rule.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    /// Hidden layers followed by the output layer.
    pub layers: Vec<Layer>,
    pub output_mode: OutputMode,
    pub output_scale: [f64; N_OUTPUTS],
    pub input_lo: [f64; N_INPUTS],
    pub input_hi: [f64; N_INPUTS],
    pub meta: ModelMeta,
}

/// Default output scales: rad/s for the angle rate, pu/s for the speed rate.
pub const DEFAULT_OUTPUT_SCALE: [f64; N_OUTPUTS] = [10.0, 0.05];

impl MlpModel {
    /// Model with the given hidden widths and all parameters zero.
    pub fn zeros(hidden: &[usize], output_mode: OutputMode, meta: ModelMeta) -> Self {
        let mut sizes = vec![N_INPUTS];
        sizes.extend_from_slice(hidden);
        sizes.push(N_OUTPUTS);
        let layers = sizes
            .windows(2)
            .map(|w| Layer { n_in: w[0], n_out: w[1], weights: vec![0.0; w[0] * w[1]], bias: vec![0.0; w[1]] })
            .collect();
        let (input_lo, input_hi) = meta.domain.lo_hi();
        Self { layers, output_mode, output_scale: DEFAULT_OUTPUT_SCALE, input_lo, input_hi, meta }
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].n_in];
        s.extend(self.layers.iter().map(|l| l.n_out));
        s
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            v.extend_from_slice(&l.weights);
            v.extend_from_slice(&l.bias);
        }
        v
    }

    pub fn set_params_flat(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params());
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&p[k..k + nw]);
            k += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&p[k..k + nb]);
            k += nb;
        }
    }

    pub fn check(&self) -> Result<(), String> {
        if self.layers.is_empty() {
            return Err("model has no layers".into());
        }
        if self.layers[0].n_in != N_INPUTS || self.layers.last().unwrap().n_out != N_OUTPUTS {
            return Err(format!("model must map {N_INPUTS} inputs to {N_OUTPUTS} outputs"));
        }
        for w in self.layers.windows(2) {
            if w[0].n_out != w[1].n_in {
                return Err("adjacent layer dimensions disagree".into());
            }
        }
        for l in &self.layers {
            if l.weights.len() != l.n_in * l.n_out || l.bias.len() != l.n_out {
                return Err("layer storage does not match its shape".into());
            }
        }
        if (0..N_INPUTS).any(|k| !(self.input_hi[k] > self.input_lo[k])) {
            return Err("normalization ranges need hi > lo".into());
        }
        Ok(())
    }

    pub fn dt_max(&self) -> f64 {
        self.input_hi[0]
    }

    fn normalize(&self, x: &[f64; N_INPUTS]) -> [f64; N_INPUTS] {
        std::array::from_fn(|k| {
            2.0 * (x[k] - self.input_lo[k]) / (self.input_hi[k] - self.input_lo[k]) - 1.0
        })
    }

    /// Derivative of the normalized input w.r.t. the raw input.
    pub(crate) fn input_gain(&self) -> [f64; N_INPUTS] {
        std::array::from_fn(|k| 2.0 / (self.input_hi[k] - self.input_lo[k]))
    }

    /// Network output (scaled rates) for raw inputs.
    pub fn forward(&self, x: &[f64; N_INPUTS]) -> [f64; N_OUTPUTS] {
        self.forward_tangent(x, &[0.0; N_INPUTS]).0
    }

    /// Output and its directional derivative along the raw-input direction `v`.
    pub fn forward_tangent(
        &self,
        x: &[f64; N_INPUTS],
        v: &[f64; N_INPUTS],
    ) -> ([f64; N_OUTPUTS], [f64; N_OUTPUTS]) {
        let gain = self.input_gain();
        let mut z: Vec<f64> = self.normalize(x).to_vec();
        let mut dz: Vec<f64> = (0..N_INPUTS).map(|k| v[k] * gain[k]).collect();
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate() {
            let mut a = l.bias.clone();
            let mut da = vec![0.0; l.n_out];
            for o in 0..l.n_out {
                let row = &l.weights[o * l.n_in..(o + 1) * l.n_in];
                let mut acc = 0.0;
                let mut dacc = 0.0;
                for i in 0..l.n_in {
                    acc += row[i] * z[i];
                    dacc += row[i] * dz[i];
                }
                a[o] += acc;
                da[o] = dacc;
            }
            if li < last || self.output_mode == OutputMode::Activated {
                for o in 0..l.n_out {
                    let t = a[o].tanh();
                    a[o] = t;
                    da[o] *= 1.0 - t * t;
                }
            }
            z = a;
            dz = da;
        }
        (
            std::array::from_fn(|o| z[o] * self.output_scale[o]),
            std::array::from_fn(|o| dz[o] * self.output_scale[o]),
        )
    }

    /// `d output / d raw input`, one row per output.
    pub fn jacobian_wrt_inputs(&self, x: &[f64; N_INPUTS]) -> [[f64; N_INPUTS]; N_OUTPUTS] {
        let mut jac = [[0.0; N_INPUTS]; N_OUTPUTS];
        for k in 0..N_INPUTS {
            let mut e = [0.0; N_INPUTS];
            e[k] = 1.0;
            let (_, d) = self.forward_tangent(x, &e);
            for o in 0..N_OUTPUTS {
                jac[o][k] = d[o];
            }
        }
        jac
    }
}

/// Predicted `(delta, domega)` at the end of the step.
pub fn predict_step(
    m: &MlpModel,
    dt: f64,
    x_n: &MachineState,
    i_n: &DqCurrents,
    i_next: &DqCurrents,
) -> (f64, f64) {
    let inp = StepInputs { dt, state: *x_n, i0: *i_n, i1: *i_next };
    let y = m.forward(&inp.to_array());
    (x_n.delta + dt * y[0], x_n.domega + dt * y[1])
}

/// Time derivative of the predicted trajectory at elapsed time `t` of a
/// step whose currents follow the linear profile of `full`:
/// `d/dt [x_n + t NN(t, x_n, I_0, I(t))] = NN + t dNN/dt`, where the total
/// derivative runs along `(1, 0, .., 0, dI/dt)` in input space.
pub fn time_derivative(m: &MlpModel, full: &StepInputs, t: f64) -> [f64; N_OUTPUTS] {
    let at = full.at_elapsed(t);
    let slope = full.current_slope();
    let mut dir = [0.0; N_INPUTS];
    dir[0] = 1.0;
    dir[7] = slope.id;
    dir[8] = slope.iq;
    let (y, dy) = m.forward_tangent(&at.to_array(), &dir);
    std::array::from_fn(|o| y[o] + t * dy[o])
}
