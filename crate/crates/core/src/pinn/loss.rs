//! Data and physics-residual losses. Both are measured on rates divided by
//! the per-output scales, so the two outputs carry comparable weight.

use ndarray::{Array2, Axis};
use std::f64::consts::PI;
use thiserror::Error;

use super::dataset::{CollocSample, DataSample};
use super::domain::N_INPUTS;
use super::engine::{self, Gradients};
use super::mlp::{predict_step, time_derivative, MlpModel};
use crate::machine::{state_derivative, MachineModel, MachineParams, MachineState};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("{0} set is empty")]
    Empty(&'static str),
    #[error("physics loss requires the simplified machine model")]
    UnsupportedModel,
}

/// Mean over samples of the squared, scale-normalized difference between the
/// predicted and the target end-of-step rates (equivalently, between the
/// predicted and the target next states divided by `dt`).
pub fn loss_data(m: &MlpModel, du: &[DataSample]) -> Result<f64, LossError> {
    Ok(DataBatch::new(du)?.loss_and_grad(m, false).0)
}

/// Mean over collocation points of the squared, scale-normalized residual
/// `d x_hat/dt - f(x_hat, I(t))` on `(delta, domega)`.
pub fn loss_physics(m: &MlpModel, dc: &[CollocSample], p: &MachineParams) -> Result<f64, LossError> {
    Ok(PhysicsBatch::new(dc, p, m.meta.f_base)?.loss_and_grad(m, false).0)
}

/// Physics residual of one collocation point, unnormalized, computed through
/// the single-sample network path.
pub fn physics_residual(m: &MlpModel, c: &CollocSample, p: &MachineParams, f_base: f64) -> [f64; 2] {
    let inp = &c.inputs;
    let d = time_derivative(m, inp, c.t);
    let at = inp.at_elapsed(c.t);
    let (delta, domega) = predict_step(m, c.t, &inp.state, &inp.i0, &at.i1);
    let x = MachineState { delta, domega, ..inp.state };
    let f = state_derivative(&x, &at.i1, p, f_base);
    [d[0] - f.delta, d[1] - f.domega]
}

pub(crate) fn rows(n: usize) -> Array2<f64> {
    Array2::zeros((n, N_INPUTS))
}

/// Data samples laid out for the batched engine.
pub(crate) struct DataBatch {
    x: Array2<f64>,
    /// Target rates.
    y: Array2<f64>,
}

impl DataBatch {
    pub(crate) fn new(du: &[DataSample]) -> Result<Self, LossError> {
        if du.is_empty() {
            return Err(LossError::Empty("data"));
        }
        let mut x = rows(du.len());
        let mut y = Array2::zeros((du.len(), 2));
        for (r, s) in du.iter().enumerate() {
            let a = s.inputs.to_array();
            x.row_mut(r).assign(&ndarray::ArrayView1::from(&a));
            let dt = s.inputs.dt;
            y[(r, 0)] = (s.target[0] - s.inputs.state.delta) / dt;
            y[(r, 1)] = (s.target[1] - s.inputs.state.domega) / dt;
        }
        Ok(Self { x, y })
    }

    pub(crate) fn len(&self) -> usize {
        self.x.nrows()
    }

    pub(crate) fn select(&self, idx: &[usize]) -> Self {
        Self { x: self.x.select(Axis(0), idx), y: self.y.select(Axis(0), idx) }
    }

    pub(crate) fn loss_and_grad(&self, m: &MlpModel, with_grad: bool) -> (f64, Option<Gradients>) {
        let n = self.len() as f64;
        let tape = engine::forward(m, &self.x, None);
        let out = tape.output(m);
        let mut r = &out - &self.y;
        for (mut col, s) in r.axis_iter_mut(Axis(1)).zip(m.output_scale) {
            col /= s;
        }
        let loss = r.iter().map(|v| v * v).sum::<f64>() / n;
        if !with_grad {
            return (loss, None);
        }
        let mut g = r * (2.0 / n);
        for (mut col, s) in g.axis_iter_mut(Axis(1)).zip(m.output_scale) {
            col /= s;
        }
        (loss, Some(engine::backward(m, &tape, &g, None)))
    }
}

/// Collocation points laid out for the batched engine.
pub(crate) struct PhysicsBatch {
    /// Inputs at the collocation time.
    u: Array2<f64>,
    /// Input direction of `d/dt`.
    dir: Array2<f64>,
    /// Per-row `[t, domega_n, Tm - Ed' Id(t) - Eq' Iq(t)]`.
    aux: Array2<f64>,
    two_pi_f: f64,
    d_over_2h: f64,
    inv_2h: f64,
}

impl PhysicsBatch {
    pub(crate) fn new(dc: &[CollocSample], p: &MachineParams, f_base: f64) -> Result<Self, LossError> {
        if dc.is_empty() {
            return Err(LossError::Empty("collocation"));
        }
        if p.model != MachineModel::Simplified {
            return Err(LossError::UnsupportedModel);
        }
        let n = dc.len();
        let (mut u, mut dir, mut aux) = (rows(n), rows(n), Array2::zeros((n, 3)));
        for (r, c) in dc.iter().enumerate() {
            let at = c.inputs.at_elapsed(c.t);
            u.row_mut(r).assign(&ndarray::ArrayView1::from(&at.to_array()));
            let slope = c.inputs.current_slope();
            dir[(r, 0)] = 1.0;
            dir[(r, 7)] = slope.id;
            dir[(r, 8)] = slope.iq;
            let s = &c.inputs.state;
            aux[(r, 0)] = c.t;
            aux[(r, 1)] = s.domega;
            aux[(r, 2)] = p.tm - s.ed_p * at.i1.id - s.eq_p * at.i1.iq;
        }
        Ok(Self {
            u,
            dir,
            aux,
            two_pi_f: 2.0 * PI * f_base,
            d_over_2h: p.d / (2.0 * p.h),
            inv_2h: 1.0 / (2.0 * p.h),
        })
    }

    pub(crate) fn len(&self) -> usize {
        self.u.nrows()
    }

    pub(crate) fn select(&self, idx: &[usize]) -> Self {
        Self {
            u: self.u.select(Axis(0), idx),
            dir: self.dir.select(Axis(0), idx),
            aux: self.aux.select(Axis(0), idx),
            ..*self
        }
    }

    pub(crate) fn loss_and_grad(&self, m: &MlpModel, with_grad: bool) -> (f64, Option<Gradients>) {
        let n = self.len();
        let tape = engine::forward(m, &self.u, Some(&self.dir));
        let (y, dy) = (tape.output(m), tape.output_tangent(m));
        let [s0, s1] = m.output_scale;
        let mut loss = 0.0;
        let mut g_y = Array2::zeros((n, 2));
        let mut g_dy = Array2::zeros((n, 2));
        let c = 2.0 / n as f64;
        for r in 0..n {
            let (t, w_n, pe) = (self.aux[(r, 0)], self.aux[(r, 1)], self.aux[(r, 2)]);
            let w_hat = w_n + t * y[(r, 1)];
            let f0 = self.two_pi_f * w_hat;
            let f1 = pe * self.inv_2h - self.d_over_2h * w_hat;
            let r0 = (y[(r, 0)] + t * dy[(r, 0)] - f0) / s0;
            let r1 = (y[(r, 1)] + t * dy[(r, 1)] - f1) / s1;
            loss += r0 * r0 + r1 * r1;
            g_y[(r, 0)] = c * r0 / s0;
            g_dy[(r, 0)] = c * r0 * t / s0;
            g_y[(r, 1)] = c * (r1 * (1.0 + self.d_over_2h * t) / s1 - r0 * self.two_pi_f * t / s0);
            g_dy[(r, 1)] = c * r1 * t / s1;
        }
        let loss = loss / n as f64;
        if !with_grad {
            return (loss, None);
        }
        (loss, Some(engine::backward(m, &tape, &g_y, Some(&g_dy))))
    }
}
