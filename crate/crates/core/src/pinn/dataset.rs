use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::domain::{DomainBox, N_INPUTS};
use super::mlp::StepInputs;
use crate::integrators::oracle_linear_profile;
use crate::machine::MachineParams;

/// Labeled sample: inputs and the oracle's `(delta, domega)` at `t + dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataSample {
    pub inputs: StepInputs,
    pub target: [f64; 2],
}

/// Unlabeled collocation point at elapsed time `t` in `[0, inputs.dt]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollocSample {
    pub inputs: StepInputs,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub machine: MachineParams,
    pub f_base: f64,
    pub domain: DomainBox,
    pub seed: u64,
    pub data: Vec<DataSample>,
    pub colloc: Vec<CollocSample>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid domain: {0}")]
    Domain(String),
    #[error("at most {max} low-discrepancy samples per set are supported, got {got}")]
    TooMany { got: usize, max: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("malformed dataset file: {0}")]
    Format(#[from] serde_json::Error),
}

const MAX_SOBOL: usize = 1 << 16;

/// Labels one input point with the fine-step oracle.
pub fn label_sample(p: &MachineParams, f_base: f64, inputs: StepInputs) -> DataSample {
    let x = oracle_linear_profile(&inputs.state, p, &inputs.i0, &inputs.i1, inputs.dt, f_base);
    DataSample { inputs, target: [x.delta, x.domega] }
}

fn sobol_point<const D: usize>(index: usize, seed: u32) -> [f64; D] {
    std::array::from_fn(|k| f64::from(sobol_burley::sample(index as u32, k as u32, seed)))
}

/// Scrambled Sobol points over the box: `n_u` labeled samples and `n_p`
/// collocation points (with an extra dimension for the collocation time).
/// The two sets use independent scrambles derived from `seed`.
pub fn generate_dataset(
    p: &MachineParams,
    f_base: f64,
    domain: &DomainBox,
    n_u: usize,
    n_p: usize,
    seed: u64,
) -> Result<Dataset, DatasetError> {
    domain.check().map_err(DatasetError::Domain)?;
    for n in [n_u, n_p] {
        if n > MAX_SOBOL {
            return Err(DatasetError::TooMany { got: n, max: MAX_SOBOL });
        }
    }
    let s = (seed ^ (seed >> 32)) as u32;
    let data = (0..n_u)
        .map(|i| label_sample(p, f_base, domain.from_unit(&sobol_point::<N_INPUTS>(i, s))))
        .collect();
    let colloc = (0..n_p)
        .map(|i| {
            let u = sobol_point::<{ N_INPUTS + 1 }>(i, s.wrapping_add(0x9e37_79b9));
            let head: [f64; N_INPUTS] = std::array::from_fn(|k| u[k]);
            let inputs = domain.from_unit(&head);
            CollocSample { inputs, t: u[N_INPUTS] * inputs.dt }
        })
        .collect();
    Ok(Dataset { machine: p.clone(), f_base, domain: domain.clone(), seed, data, colloc })
}

/// Labeled samples drawn uniformly (pseudo-random, independent of the
/// Sobol training points) over the box with the time step fixed at `dt`.
pub fn held_out_samples(
    p: &MachineParams,
    f_base: f64,
    domain: &DomainBox,
    dt: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<DataSample>, DatasetError> {
    domain.check().map_err(DatasetError::Domain)?;
    if !(domain.dt[0]..=domain.dt[1]).contains(&dt) {
        return Err(DatasetError::Domain(format!("time step {dt} outside [{}, {}]", domain.dt[0], domain.dt[1])));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let mut u: [f64; N_INPUTS] = std::array::from_fn(|_| rng.random::<f64>());
            u[0] = 0.0;
            let mut inputs = domain.from_unit(&u);
            inputs.dt = dt;
            label_sample(p, f_base, inputs)
        })
        .collect())
}

impl Dataset {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("dataset serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, DatasetError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        Ok(std::fs::write(path, self.to_json())?)
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::test_sg_star;

    #[test]
    fn held_out_samples_fix_the_step() {
        let d = DomainBox::default();
        let a = held_out_samples(&test_sg_star(), 60.0, &d, 0.02, 50, 3).unwrap();
        assert_eq!(a, held_out_samples(&test_sg_star(), 60.0, &d, 0.02, 50, 3).unwrap());
        assert!(a.iter().all(|s| s.inputs.dt == 0.02 && d.contains(&s.inputs)));
        assert!(held_out_samples(&test_sg_star(), 60.0, &d, 0.05, 1, 3).is_err());
    }

    #[test]
    fn samples_inside_box_and_deterministic() {
        let d = DomainBox::default();
        let a = generate_dataset(&test_sg_star(), 60.0, &d, 64, 64, 7).unwrap();
        let b = generate_dataset(&test_sg_star(), 60.0, &d, 64, 64, 7).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert!(a.data.iter().all(|s| d.contains(&s.inputs)));
        assert!(a.colloc.iter().all(|c| d.contains(&c.inputs) && (0.0..=c.inputs.dt).contains(&c.t)));
        assert!(a.data.iter().all(|s| s.target.iter().all(|v| v.is_finite())));
        let c = generate_dataset(&test_sg_star(), 60.0, &d, 64, 64, 8).unwrap();
        assert_ne!(a.data[0], c.data[0]);
    }

    #[test]
    fn smallest_step_is_one_micro_step_of_drift() {
        let p = test_sg_star();
        let mut u = [0.5; N_INPUTS];
        u[0] = 0.0;
        let inputs = DomainBox::default().from_unit(&u);
        assert_eq!(inputs.dt, 0.001);
        let s = label_sample(&p, 60.0, inputs);
        let drift = 2.0 * std::f64::consts::PI * 60.0 * inputs.state.domega * 0.001;
        assert!((s.target[0] - inputs.state.delta - drift).abs() < 1e-5);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let a = generate_dataset(&test_sg_star(), 60.0, &DomainBox::default(), 16, 16, 1).unwrap();
        assert_eq!(Dataset::from_json(&a.to_json()).unwrap(), a);
    }

    #[test]
    fn oversized_request_is_rejected() {
        let r = generate_dataset(&test_sg_star(), 60.0, &DomainBox::default(), MAX_SOBOL + 1, 1, 1);
        assert!(matches!(r, Err(DatasetError::TooMany { .. })));
    }
}
