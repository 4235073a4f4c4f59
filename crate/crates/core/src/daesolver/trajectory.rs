use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::machine::{DqCurrents, MachineState};

/// Newton statistics of one time step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepDiagnostics {
    /// Newton iterations, counting the final converged residual check.
    pub iterations: usize,
    /// Infinity norm of the residual at each iterate.
    pub residual_history: Vec<f64>,
    /// A surrogate input was clamped at the converged point.
    pub clamped: bool,
}

/// Time-indexed record of all machine states, dq currents and bus voltage
/// phasors on one grid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub machine_ids: Vec<String>,
    pub bus_ids: Vec<usize>,
    pub t: Vec<f64>,
    /// `states[n][k]`: machine `k` at time `t[n]`.
    pub states: Vec<Vec<MachineState>>,
    pub currents: Vec<Vec<DqCurrents>>,
    pub vm: Vec<Vec<f64>>,
    pub va: Vec<Vec<f64>>,
    /// One entry per completed step (not exported to CSV).
    pub diagnostics: Vec<StepDiagnostics>,
}

#[derive(Debug, Error)]
pub enum TrajectoryIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
}

const MACHINE_FIELDS: [&str; 6] = ["Eq", "Ed", "delta", "domega", "Id", "Iq"];

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        for m in &self.machine_ids {
            h.extend(MACHINE_FIELDS.iter().map(|f| format!("{m}.{f}")));
        }
        for b in &self.bus_ids {
            h.push(format!("bus{b}.Vm"));
            h.push(format!("bus{b}.Va"));
        }
        h
    }

    pub fn row(&self, n: usize) -> Vec<f64> {
        let mut r = vec![self.t[n]];
        for (s, i) in self.states[n].iter().zip(&self.currents[n]) {
            r.extend_from_slice(&[s.eq_p, s.ed_p, s.delta, s.domega, i.id, i.iq]);
        }
        for (m, a) in self.vm[n].iter().zip(&self.va[n]) {
            r.extend_from_slice(&[*m, *a]);
        }
        r
    }

    /// CSV with shortest round-trip decimal floats.
    pub fn to_csv(&self) -> String {
        let mut s = self.header().join(",");
        s.push('\n');
        for n in 0..self.len() {
            let row = self.row(n);
            for (k, v) in row.iter().enumerate() {
                if k > 0 {
                    s.push(',');
                }
                write!(s, "{v}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, TrajectoryIoError> {
        let err = |line: usize, msg: String| TrajectoryIoError::Format { line, msg };
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().ok_or_else(|| err(1, "missing header".into()))?.split(',').collect();
        if header.first() != Some(&"t") {
            return Err(err(1, "first column must be t".into()));
        }
        let mut tr = Trajectory::default();
        let mut k = 1;
        while k < header.len() && !header[k].starts_with("bus") {
            let id = header[k]
                .strip_suffix(".Eq")
                .ok_or_else(|| err(1, format!("unexpected column {}", header[k])))?;
            for (j, f) in MACHINE_FIELDS.iter().enumerate() {
                if header.get(k + j) != Some(&format!("{id}.{f}").as_str()) {
                    return Err(err(1, format!("machine {id} is missing column {f}")));
                }
            }
            tr.machine_ids.push(id.to_string());
            k += MACHINE_FIELDS.len();
        }
        while k < header.len() {
            let id = header[k]
                .strip_prefix("bus")
                .and_then(|s| s.strip_suffix(".Vm"))
                .and_then(|s| s.parse::<usize>().ok())
                .ok_or_else(|| err(1, format!("unexpected column {}", header[k])))?;
            if header.get(k + 1) != Some(&format!("bus{id}.Va").as_str()) {
                return Err(err(1, format!("bus {id} is missing its angle column")));
            }
            tr.bus_ids.push(id);
            k += 2;
        }
        for (i, line) in lines.enumerate() {
            let ln = i + 2;
            if line.trim().is_empty() {
                continue;
            }
            let v = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| err(ln, e.to_string()))?;
            if v.len() != header.len() {
                return Err(err(ln, format!("expected {} fields, got {}", header.len(), v.len())));
            }
            tr.t.push(v[0]);
            let nm = tr.machine_ids.len();
            let (mut st, mut cu) = (Vec::with_capacity(nm), Vec::with_capacity(nm));
            for m in 0..nm {
                let c = &v[1 + 6 * m..7 + 6 * m];
                st.push(MachineState { eq_p: c[0], ed_p: c[1], delta: c[2], domega: c[3] });
                cu.push(DqCurrents { id: c[4], iq: c[5] });
            }
            tr.states.push(st);
            tr.currents.push(cu);
            let b0 = 1 + 6 * nm;
            tr.vm.push(v[b0..].iter().step_by(2).copied().collect());
            tr.va.push(v[b0 + 1..].iter().step_by(2).copied().collect());
        }
        Ok(tr)
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), TrajectoryIoError> {
        Ok(std::fs::write(path, self.to_csv())?)
    }

    pub fn load_csv(path: &Path) -> Result<Self, TrajectoryIoError> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }

    /// Equal time grid, states, currents and voltages (diagnostics ignored).
    pub fn same_data(&self, other: &Self) -> bool {
        self.machine_ids == other.machine_ids
            && self.bus_ids == other.bus_ids
            && self.t == other.t
            && self.states == other.states
            && self.currents == other.currents
            && self.vm == other.vm
            && self.va == other.va
    }

    /// Rows at every `stride`-th grid point, e.g. a 1 ms reference sampled
    /// on a 20 ms grid.
    pub fn subsample(&self, stride: usize) -> Self {
        let keep: Vec<usize> = (0..self.len()).step_by(stride.max(1)).collect();
        let pick = |v: &Vec<Vec<f64>>| keep.iter().map(|&n| v[n].clone()).collect();
        Self {
            machine_ids: self.machine_ids.clone(),
            bus_ids: self.bus_ids.clone(),
            t: keep.iter().map(|&n| self.t[n]).collect(),
            states: keep.iter().map(|&n| self.states[n].clone()).collect(),
            currents: keep.iter().map(|&n| self.currents[n].clone()).collect(),
            vm: pick(&self.vm),
            va: pick(&self.va),
            diagnostics: Vec::new(),
        }
    }

    /// Largest absolute difference over all states and times, against a
    /// trajectory on the same grid.
    pub fn max_state_error(&self, reference: &Self) -> f64 {
        let mut e: f64 = 0.0;
        for (a, b) in self.states.iter().zip(&reference.states) {
            for (x, y) in a.iter().zip(b) {
                for (p, q) in x.to_array().iter().zip(y.to_array()) {
                    e = e.max((p - q).abs());
                }
            }
        }
        e
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trajectory {
        let s = MachineState { eq_p: 1.0 / 3.0, ed_p: 0.1, delta: -2.5e-17, domega: 1e-300 };
        let i = DqCurrents { id: 0.5, iq: std::f64::consts::PI };
        Trajectory {
            machine_ids: vec!["G1".into(), "G2".into()],
            bus_ids: vec![1, 2, 30],
            t: vec![0.0, 0.02],
            states: vec![vec![s, s], vec![s, s]],
            currents: vec![vec![i, i], vec![i, i]],
            vm: vec![vec![1.0, 0.99, 1.0 / 7.0]; 2],
            va: vec![vec![0.0, -0.1, 0.3]; 2],
            diagnostics: vec![],
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let tr = sample();
        let back = Trajectory::from_csv(&tr.to_csv()).unwrap();
        assert_eq!(back, tr);
        assert_eq!(back.to_csv(), tr.to_csv());
    }

    #[test]
    fn header_layout() {
        let h = sample().header();
        assert_eq!(&h[..3], &["t", "G1.Eq", "G1.Ed"]);
        assert_eq!(h[6], "G1.Iq");
        assert_eq!(h.last().unwrap(), "bus30.Va");
        assert_eq!(h.len(), 1 + 12 + 6);
    }

    #[test]
    fn malformed_rows_are_rejected() {
        let csv = sample().to_csv();
        let bad = csv.replacen("0.02,", "0.02,x", 1);
        assert!(matches!(Trajectory::from_csv(&bad), Err(TrajectoryIoError::Format { line: 3, .. })));
        assert!(Trajectory::from_csv("time,a\n").is_err());
    }
}
