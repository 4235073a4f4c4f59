//! Batched forward, forward-tangent and reverse passes over the network
//! parameters. The tangent pass carries a directional input derivative
//! through the layers so that losses may depend on both the output and its
//! derivative along an input direction; the reverse pass differentiates
//! both w.r.t. every weight and bias.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::domain::N_INPUTS;
use super::mlp::{MlpModel, OutputMode};

/// Gradient of a scalar loss w.r.t. the flat parameter vector (same layout
/// as [`MlpModel::params_flat`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
}

impl Gradients {
    pub fn zeros(n: usize) -> Self {
        Self { params: vec![0.0; n] }
    }

    pub fn axpy(&mut self, a: f64, other: &Gradients) {
        for (g, o) in self.params.iter_mut().zip(&other.params) {
            *g += a * o;
        }
    }
}

/// Activations recorded by the forward pass.
pub(crate) struct Tape {
    /// Layer inputs: `zs[0]` is the normalized network input, `zs[k]` the
    /// output of layer `k - 1`. The final entry is the unscaled output.
    zs: Vec<Array2<f64>>,
    dzs: Option<Vec<Array2<f64>>>,
}

impl Tape {
    /// Scaled outputs, `B x n_out`.
    pub(crate) fn output(&self, m: &MlpModel) -> Array2<f64> {
        scale_cols(self.zs.last().unwrap(), &m.output_scale)
    }

    /// Scaled directional derivatives of the outputs.
    pub(crate) fn output_tangent(&self, m: &MlpModel) -> Array2<f64> {
        let dz = self.dzs.as_ref().expect("forward pass ran without a direction");
        scale_cols(dz.last().unwrap(), &m.output_scale)
    }
}

fn scale_cols(a: &Array2<f64>, s: &[f64]) -> Array2<f64> {
    let mut out = a.clone();
    for (mut col, &k) in out.axis_iter_mut(Axis(1)).zip(s) {
        col *= k;
    }
    out
}

fn weights(l: &super::mlp::Layer) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((l.n_out, l.n_in), &l.weights).expect("layer shape")
}

fn is_activated(m: &MlpModel, li: usize) -> bool {
    li + 1 < m.layers.len() || m.output_mode == OutputMode::Activated
}

/// Runs the network on raw inputs `x` (`B x 9`), optionally with raw input
/// directions `dir` (`B x 9`).
pub(crate) fn forward(m: &MlpModel, x: &Array2<f64>, dir: Option<&Array2<f64>>) -> Tape {
    debug_assert_eq!(x.ncols(), N_INPUTS);
    let gain = m.input_gain();
    let mut z0 = x.clone();
    for (k, mut col) in z0.axis_iter_mut(Axis(1)).enumerate() {
        let lo = m.input_lo[k];
        col.mapv_inplace(|v| (v - lo) * gain[k] - 1.0);
    }
    let mut zs = vec![z0];
    let mut dzs = dir.map(|d| vec![scale_cols(d, &gain)]);
    for (li, l) in m.layers.iter().enumerate() {
        let w = weights(l);
        let b = Array1::from_vec(l.bias.clone());
        let mut a = zs.last().unwrap().dot(&w.t()) + &b;
        let mut da = dzs.as_ref().map(|d| d.last().unwrap().dot(&w.t()));
        if is_activated(m, li) {
            a.mapv_inplace(f64::tanh);
            if let Some(da) = da.as_mut() {
                ndarray::Zip::from(da).and(&a).for_each(|d, &t| *d *= 1.0 - t * t);
            }
        }
        zs.push(a);
        if let (Some(d), Some(da)) = (dzs.as_mut(), da) {
            d.push(da);
        }
    }
    Tape { zs, dzs }
}

/// Reverse pass: given `dL/d output` and, when the tape carries tangents,
/// `dL/d output_tangent` (both w.r.t. the scaled outputs), accumulates the
/// parameter gradient.
pub(crate) fn backward(
    m: &MlpModel,
    tape: &Tape,
    g_out: &Array2<f64>,
    g_dout: Option<&Array2<f64>>,
) -> Gradients {
    let mut grad = vec![0.0; m.n_params()];
    let offsets = param_offsets(m);
    let mut g_z = scale_cols(g_out, &m.output_scale);
    let mut g_dz = g_dout.map(|g| scale_cols(g, &m.output_scale));
    for li in (0..m.layers.len()).rev() {
        let l = &m.layers[li];
        let z_out = &tape.zs[li + 1];
        let (mut g_a, mut g_da) = (g_z, g_dz);
        if is_activated(m, li) {
            let sech2 = z_out.mapv(|t| 1.0 - t * t);
            if let Some(g_da) = g_da.as_mut() {
                // d(sech^2(a) da)/da = -2 t sech^2(a) da, with sech^2(a) da = dz_out
                let dz_out = &tape.dzs.as_ref().unwrap()[li + 1];
                g_a = &g_a * &sech2 - &(g_da.clone() * dz_out * z_out * 2.0);
                *g_da *= &sech2;
            } else {
                g_a *= &sech2;
            }
        }
        let z_in = &tape.zs[li];
        let mut g_w = g_a.t().dot(z_in);
        if let (Some(g_da), Some(dzs)) = (g_da.as_ref(), tape.dzs.as_ref()) {
            g_w = g_w + g_da.t().dot(&dzs[li]);
        }
        let g_b = g_a.sum_axis(Axis(0));
        let (ow, ob) = offsets[li];
        grad[ow..ow + l.weights.len()].copy_from_slice(g_w.as_slice().expect("standard layout"));
        grad[ob..ob + l.bias.len()].copy_from_slice(g_b.as_slice().unwrap());
        if li > 0 {
            let w = weights(l);
            g_z = g_a.dot(&w);
            g_dz = g_da.map(|g| g.dot(&w));
        } else {
            break;
        }
    }
    Gradients { params: grad }
}

/// Offsets of each layer's weights and biases in the flat parameter vector.
fn param_offsets(m: &MlpModel) -> Vec<(usize, usize)> {
    let mut k = 0;
    m.layers
        .iter()
        .map(|l| {
            let ow = k;
            let ob = k + l.weights.len();
            k = ob + l.bias.len();
            (ow, ob)
        })
        .collect()
}
