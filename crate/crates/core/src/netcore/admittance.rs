use std::ops::{Add, Index, IndexMut};

use num_complex::Complex64;

use super::case::{CaseError, NetworkCase};
use crate::powerflow::PowerFlowSolution;

/// How static loads enter the network matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadModel {
    /// Loads become shunt admittances `(P - jQ)/|V|^2` at the power-flow voltage.
    ConstantImpedance,
    /// Loads are left out (power-flow form, loads enter as injections).
    None,
}

/// Dense complex bus admittance matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    n: usize,
    entries: Vec<Complex64>,
}

impl AdmittanceMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, entries: vec![Complex64::new(0.0, 0.0); n * n] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// `Y * v`.
    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(v.len(), self.n);
        self.entries
            .chunks_exact(self.n)
            .map(|row| row.iter().zip(v).map(|(y, x)| y * x).sum())
            .collect()
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    /// Adds a shunt admittance at internal bus `i`.
    pub fn add_shunt(&mut self, i: usize, y: Complex64) {
        self[(i, i)] += y;
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.n, other.n);
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for AdmittanceMatrix {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.entries[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for AdmittanceMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.entries[i * self.n + j]
    }
}

impl Add for &AdmittanceMatrix {
    type Output = AdmittanceMatrix;
    fn add(self, rhs: &AdmittanceMatrix) -> AdmittanceMatrix {
        assert_eq!(self.n, rhs.n);
        AdmittanceMatrix {
            n: self.n,
            entries: self.entries.iter().zip(&rhs.entries).map(|(a, b)| a + b).collect(),
        }
    }
}

/// Assembles the bus admittance matrix by branch stamping. Bus shunts are
/// always included; loads only with [`LoadModel::ConstantImpedance`], which
/// needs the power-flow voltages.
pub fn build_admittance(
    case: &NetworkCase,
    load_model: LoadModel,
    pf: Option<&PowerFlowSolution>,
) -> Result<AdmittanceMatrix, CaseError> {
    let n = case.n_bus();
    if n == 0 {
        return Err(CaseError::Invalid("empty network".into()));
    }
    let mut y = AdmittanceMatrix::zeros(n);
    let mut adjacency = vec![Vec::new(); n];
    for br in &case.branches {
        let f = case.bus_index(br.from_bus).ok_or(CaseError::MissingBus {
            what: "branch".into(),
            bus: br.from_bus,
        })?;
        let t = case.bus_index(br.to_bus).ok_or(CaseError::MissingBus {
            what: "branch".into(),
            bus: br.to_bus,
        })?;
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.series_r, br.series_x);
        let ysh = Complex64::new(0.0, br.shunt_b / 2.0);
        let tap = br.tap_ratio;
        y[(f, f)] += (ys + ysh) / (tap * tap);
        y[(t, t)] += ys + ysh;
        y[(f, t)] -= ys / tap;
        y[(t, f)] -= ys / tap;
        adjacency[f].push(t);
        adjacency[t].push(f);
    }
    for (i, b) in case.buses.iter().enumerate() {
        y[(i, i)] += Complex64::new(b.g_shunt, b.b_shunt);
    }
    if load_model == LoadModel::ConstantImpedance {
        let pf = pf.ok_or_else(|| {
            CaseError::Invalid("constant-impedance loads need a power-flow solution".into())
        })?;
        if pf.vm.len() != n {
            return Err(CaseError::Invalid("power-flow solution does not match the case".into()));
        }
        for l in &case.loads {
            let i = case.bus_index(l.bus).ok_or(CaseError::MissingBus {
                what: "load".into(),
                bus: l.bus,
            })?;
            let v2 = pf.vm[i] * pf.vm[i];
            y[(i, i)] += Complex64::new(l.p, -l.q) / v2;
        }
    }

    // Every bus must reach bus 0 through branches.
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for &j in &adjacency[i] {
            if !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(CaseError::Invalid(format!("bus {} is isolated", case.buses[i].id)));
    }
    Ok(y)
}
