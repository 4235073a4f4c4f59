//! Adam training of the surrogate on `L_data + alpha * L_physics`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::dataset::{CollocSample, DataSample};
use super::engine::Gradients;
use super::loss::{DataBatch, LossError, PhysicsBatch};
use super::mlp::{MlpModel, OutputMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Labeled samples used (the first `n_u` of the dataset).
    pub n_u: usize,
    /// Collocation points used.
    pub n_p: usize,
    /// Physics-loss weight.
    pub alpha: f64,
    pub epochs: usize,
    /// Labeled samples per update; 0 means full batch. Collocation points
    /// are split into the same number of batches.
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs at constant learning rate; defaults to a quarter of `epochs`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delay: Option<usize>,
    /// Learning-rate factor per 1000 epochs after the delay.
    pub decay_rate: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub output_mode: OutputMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_u: 20_000,
            n_p: 20_000,
            alpha: 1.0,
            epochs: 20_000,
            batch_size: 0,
            lr: 1e-3,
            delay: None,
            decay_rate: 0.98,
            seed: 0,
            hidden: vec![64, 64, 64],
            output_mode: OutputMode::Linear,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(s: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn delay_epochs(&self) -> usize {
        self.delay.unwrap_or(self.epochs / 4)
    }

    /// Delayed exponential decay.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let delay = self.delay_epochs();
        if epoch < delay {
            self.lr
        } else {
            self.lr * self.decay_rate.powf((epoch - delay) as f64 / 1000.0)
        }
    }

    pub fn check(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.n_u == 0 || self.n_p == 0 || self.epochs == 0 {
            return bad("sample counts and epochs must be positive");
        }
        if !(self.alpha >= 0.0) || !(self.lr >= 0.0) || !(self.decay_rate > 0.0) {
            return bad("alpha and lr must be non-negative, decay_rate positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        Ok(())
    }
}

/// Losses after one epoch (means over that epoch's batches).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub data: f64,
    pub physics: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    /// Mean loss over the last tenth of training below that of the first
    /// tenth. Reported, not enforced.
    pub decreasing: bool,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("dataset has {have} {what} samples, config asks for {want}")]
    TooFewSamples { what: &'static str, have: usize, want: usize },
    #[error("loss became non-finite at epoch {epoch}")]
    Diverged { epoch: usize, history: Vec<EpochRecord> },
}

/// Total loss and its parameter gradient over the full sets.
pub fn total_loss_and_gradient(
    m: &MlpModel,
    du: &[DataSample],
    dc: &[CollocSample],
    alpha: f64,
) -> Result<(f64, Gradients), LossError> {
    let (ld, gd) = DataBatch::new(du)?.loss_and_grad(m, true);
    let (lp, gp) = PhysicsBatch::new(dc, &m.meta.machine, m.meta.f_base)?.loss_and_grad(m, true);
    let mut g = gd.unwrap();
    g.axpy(alpha, &gp.unwrap());
    Ok((ld + alpha * lp, g))
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(m: &mut MlpModel, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for l in &mut m.layers {
        let a = (6.0 / (l.n_in + l.n_out) as f64).sqrt();
        l.weights.iter_mut().for_each(|w| *w = rng.random_range(-a..a));
        l.bias.iter_mut().for_each(|b| *b = 0.0);
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, p: &mut [f64], g: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for k in 0..p.len() {
            self.m[k] = Self::B1 * self.m[k] + (1.0 - Self::B1) * g[k];
            self.v[k] = Self::B2 * self.v[k] + (1.0 - Self::B2) * g[k] * g[k];
            p[k] -= lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Trains `m` in place from its current parameters.
pub fn train(
    m: &mut MlpModel,
    du: &[DataSample],
    dc: &[CollocSample],
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    train_with_observer(m, du, dc, cfg, &mut |_, _| {})
}

/// As [`train`], calling `observer` after every epoch.
pub fn train_with_observer(
    m: &mut MlpModel,
    du: &[DataSample],
    dc: &[CollocSample],
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord, &MlpModel),
) -> Result<TrainReport, TrainError> {
    cfg.check()?;
    if du.len() < cfg.n_u {
        return Err(TrainError::TooFewSamples { what: "labeled", have: du.len(), want: cfg.n_u });
    }
    if dc.len() < cfg.n_p {
        return Err(TrainError::TooFewSamples { what: "collocation", have: dc.len(), want: cfg.n_p });
    }
    let data = DataBatch::new(&du[..cfg.n_u])?;
    let phys = PhysicsBatch::new(&dc[..cfg.n_p], &m.meta.machine, m.meta.f_base)?;
    let n_batches = if cfg.batch_size == 0 { 1 } else { cfg.n_u.div_ceil(cfg.batch_size) };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut idx_u: Vec<usize> = (0..cfg.n_u).collect();
    let mut idx_p: Vec<usize> = (0..cfg.n_p).collect();
    let mut params = m.params_flat();
    let mut adam = Adam::new(params.len());
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate(epoch);
        let (mut sum_d, mut sum_p) = (0.0, 0.0);
        if n_batches > 1 {
            idx_u.shuffle(&mut rng);
            idx_p.shuffle(&mut rng);
        }
        for b in 0..n_batches {
            let (ld, gd, lp, gp) = if n_batches == 1 {
                let (ld, gd) = data.loss_and_grad(m, true);
                let (lp, gp) = phys.loss_and_grad(m, cfg.alpha > 0.0);
                (ld, gd, lp, gp)
            } else {
                let su = chunk(&idx_u, b, n_batches);
                let sp = chunk(&idx_p, b, n_batches);
                let (ld, gd) = data.select(su).loss_and_grad(m, true);
                let (lp, gp) = phys.select(sp).loss_and_grad(m, cfg.alpha > 0.0);
                (ld, gd, lp, gp)
            };
            sum_d += ld;
            sum_p += lp;
            let mut g = gd.unwrap();
            if let Some(gp) = gp {
                g.axpy(cfg.alpha, &gp);
            }
            adam.step(&mut params, &g.params, lr);
            m.set_params_flat(&params);
        }
        let data_l = sum_d / n_batches as f64;
        let phys_l = sum_p / n_batches as f64;
        let rec = EpochRecord { epoch, lr, data: data_l, physics: phys_l, total: data_l + cfg.alpha * phys_l };
        history.push(rec);
        if !rec.total.is_finite() || params.iter().any(|p| !p.is_finite()) {
            return Err(TrainError::Diverged { epoch, history });
        }
        observer(&rec, m);
    }
    let k = (history.len() / 10).max(1);
    let mean = |s: &[EpochRecord]| s.iter().map(|r| r.total).sum::<f64>() / s.len() as f64;
    let decreasing = mean(&history[history.len() - k..]) < mean(&history[..k]);
    Ok(TrainReport { history, decreasing })
}

fn chunk(idx: &[usize], b: usize, n: usize) -> &[usize] {
    let size = idx.len().div_ceil(n);
    let lo = (b * size).min(idx.len());
    let hi = ((b + 1) * size).min(idx.len());
    &idx[lo..hi]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::test_sg_star;
    use crate::pinn::dataset::generate_dataset;
    use crate::pinn::domain::DomainBox;
    use crate::pinn::mlp::tests::{meta, random_model};

    fn small_cfg(epochs: usize) -> TrainConfig {
        TrainConfig { n_u: 64, n_p: 64, epochs, hidden: vec![8, 8], ..Default::default() }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let ds = generate_dataset(&test_sg_star(), 60.0, &DomainBox::default(), 64, 64, 1).unwrap();
        let mut m = random_model(&[8, 8], 1, OutputMode::Linear);
        let before = m.clone();
        let cfg = TrainConfig { lr: 0.0, ..small_cfg(1) };
        train(&mut m, &ds.data, &ds.colloc, &cfg).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn schedule_is_delayed_exponential() {
        let cfg = TrainConfig { epochs: 8000, lr: 1e-3, decay_rate: 0.5, ..Default::default() };
        assert_eq!(cfg.learning_rate(0), 1e-3);
        assert_eq!(cfg.learning_rate(1999), 1e-3);
        assert!((cfg.learning_rate(3000) - 5e-4).abs() < 1e-18);
        assert!((cfg.learning_rate(4000) - 2.5e-4).abs() < 1e-18);
    }

    #[test]
    fn total_gradient_matches_finite_differences() {
        let ds = generate_dataset(&test_sg_star(), 60.0, &DomainBox::default(), 16, 16, 3).unwrap();
        let m = random_model(&[6, 6], 4, OutputMode::Linear);
        let (_, g) = total_loss_and_gradient(&m, &ds.data, &ds.colloc, 0.7).unwrap();
        let p0 = m.params_flat();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let k = rng.random_range(0..p0.len());
            let f = |delta: f64| {
                let mut p = p0.clone();
                p[k] += delta;
                let mut mm = m.clone();
                mm.set_params_flat(&p);
                total_loss_and_gradient(&mm, &ds.data, &ds.colloc, 0.7).unwrap().0
            };
            let h = 1e-5;
            let fd = (f(h) - f(-h)) / (2.0 * h);
            assert!((fd - g.params[k]).abs() <= 1e-5 * fd.abs().max(1e-3), "{fd} vs {}", g.params[k]);
        }
    }

    #[test]
    fn short_run_reduces_loss() {
        let ds = generate_dataset(&test_sg_star(), 60.0, &DomainBox::default(), 64, 64, 2).unwrap();
        let mut m = MlpModel::zeros(&[8, 8], OutputMode::Linear, meta());
        init_params(&mut m, 0);
        let cfg = TrainConfig { batch_size: 16, lr: 3e-3, ..small_cfg(60) };
        let rep = train(&mut m, &ds.data, &ds.colloc, &cfg).unwrap();
        assert_eq!(rep.history.len(), 60);
        assert!(rep.decreasing);
    }

    #[test]
    fn divergence_is_reported_with_history() {
        let ds = generate_dataset(&test_sg_star(), 60.0, &DomainBox::default(), 64, 64, 2).unwrap();
        let mut m = MlpModel::zeros(&[8], OutputMode::Linear, meta());
        init_params(&mut m, 0);
        let cfg = TrainConfig { lr: f64::INFINITY, ..small_cfg(5) };
        match train(&mut m, &ds.data, &ds.colloc, &cfg) {
            Err(TrainError::Diverged { history, .. }) => assert!(!history.is_empty()),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn config_toml_round_trip_and_defaults() {
        let cfg = TrainConfig { delay: Some(10), ..Default::default() };
        assert_eq!(TrainConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let partial = TrainConfig::from_toml("epochs = 400\n").unwrap();
        assert_eq!(partial.epochs, 400);
        assert_eq!(partial.delay_epochs(), 100);
        assert_eq!(partial.alpha, 1.0);
        assert!(TrainConfig::from_toml("epoch = 1\n").is_err());
    }
}
