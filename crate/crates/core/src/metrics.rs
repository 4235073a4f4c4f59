//! Reference trajectories and accuracy-improvement bookkeeping between a
//! traditional (all-trapezoidal) and a hybrid (surrogate) run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::daesolver::{simulate, SimError, SimulationConfig, Trajectory, TrajectoryIoError};
use crate::integrators::IntegratorAssignment;
use crate::integrators::trapezoidal_step_frozen;
use crate::netcore::{NetworkCase, Scenario};
use crate::pinn::{predict_step, DataSample, MlpModel};

/// Step of the reference trajectories.
pub const REFERENCE_DT: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] TrajectoryIoError),
    #[error("trajectories do not share a grid: {0}")]
    GridMismatch(String),
    #[error("unknown machine '{0}'")]
    UnknownMachine(String),
}

/// Content hash identifying a reference run.
pub fn reference_key(case: &NetworkCase, scenario: &Scenario, dt: f64, t_end: f64) -> String {
    let mut h = Sha256::new();
    h.update(case.to_case_string().as_bytes());
    h.update(b"\0");
    h.update(scenario.to_scenario_string().as_bytes());
    h.update(dt.to_le_bytes());
    h.update(t_end.to_le_bytes());
    h.finalize().iter().fold(String::new(), |mut s, b| {
        write!(s, "{b:02x}").unwrap();
        s
    })
}

/// All-trapezoidal run at `REFERENCE_DT` (or `dt` if given), cached as CSV
/// under `cache_dir` by content hash when a directory is given.
pub fn reference_trajectory(
    case: &NetworkCase,
    scenario: &Scenario,
    t_end: f64,
    cache_dir: Option<&Path>,
) -> Result<Trajectory, MetricsError> {
    reference_trajectory_at(case, scenario, REFERENCE_DT, t_end, cache_dir)
}

pub fn reference_trajectory_at(
    case: &NetworkCase,
    scenario: &Scenario,
    dt: f64,
    t_end: f64,
    cache_dir: Option<&Path>,
) -> Result<Trajectory, MetricsError> {
    let path: Option<PathBuf> =
        cache_dir.map(|d| d.join(format!("ref-{}.csv", &reference_key(case, scenario, dt, t_end)[..24])));
    if let Some(p) = path.as_ref().filter(|p| p.exists()) {
        return Ok(Trajectory::load_csv(p)?);
    }
    let cfg = SimulationConfig { dt, t_end, ..Default::default() };
    let assign = IntegratorAssignment::all_trapezoidal(case.machines.len());
    let tr = simulate(case, &cfg, scenario, &assign, &BTreeMap::new())?;
    if let Some(p) = path {
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(TrajectoryIoError::from)?;
        }
        tr.save_csv(&p)?;
    }
    Ok(tr)
}

/// Samples `fine` on the grid of `coarse`; the coarse step must be an
/// integer multiple of the fine one.
pub fn align(fine: &Trajectory, coarse: &Trajectory) -> Result<Trajectory, MetricsError> {
    if fine.len() < 2 || coarse.len() < 2 {
        return Err(MetricsError::GridMismatch("need at least two rows".into()));
    }
    let ratio = (coarse.t[1] - coarse.t[0]) / (fine.t[1] - fine.t[0]);
    let stride = ratio.round() as usize;
    if stride == 0 || (ratio - stride as f64).abs() > 1e-6 {
        return Err(MetricsError::GridMismatch(format!("step ratio {ratio} is not an integer")));
    }
    let sub = fine.subsample(stride);
    if sub.len() < coarse.len() || coarse.t.iter().zip(&sub.t).any(|(a, b)| (a - b).abs() > 1e-9) {
        return Err(MetricsError::GridMismatch("time grids disagree".into()));
    }
    if sub.machine_ids != coarse.machine_ids || sub.bus_ids != coarse.bus_ids {
        return Err(MetricsError::GridMismatch("different machines or buses".into()));
    }
    Ok(sub)
}

/// Mean absolute errors of one run against the reference, per machine and
/// per bus, over rows with `t >= t_start`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunErrors {
    pub delta: Vec<f64>,
    pub omega: Vec<f64>,
    /// MAE of `|dI_d + j dI_q|`.
    pub idq: Vec<f64>,
    pub vm: Vec<f64>,
}

fn run_errors(run: &Trajectory, reference: &Trajectory, t_start: f64) -> RunErrors {
    let rows: Vec<usize> = (0..run.len()).filter(|&n| run.t[n] >= t_start - 1e-9).collect();
    let nr = rows.len().max(1) as f64;
    let per = |f: &dyn Fn(usize, usize) -> f64, count: usize| -> Vec<f64> {
        (0..count).map(|k| rows.iter().map(|&n| f(n, k)).sum::<f64>() / nr).collect()
    };
    let nm = run.machine_ids.len();
    RunErrors {
        delta: per(&|n, k| (run.states[n][k].delta - reference.states[n][k].delta).abs(), nm),
        omega: per(&|n, k| (run.states[n][k].domega - reference.states[n][k].domega).abs(), nm),
        idq: per(
            &|n, k| {
                let (a, b) = (run.currents[n][k], reference.currents[n][k]);
                (a.id - b.id).hypot(a.iq - b.iq)
            },
            nm,
        ),
        vm: per(&|n, b| (run.vm[n][b] - reference.vm[n][b]).abs(), run.bus_ids.len()),
    }
}

/// `100 (mae_trad - mae_hyb) / mae_trad`; zero when the traditional error is zero.
pub fn improvement(mae_trad: f64, mae_hyb: f64) -> f64 {
    if mae_trad > 0.0 {
        100.0 * (1.0 - mae_hyb / mae_trad)
    } else {
        0.0
    }
}

/// Improvement percentages in the table layout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Improvements {
    pub delta_avg: f64,
    pub delta_star: f64,
    pub omega_avg: f64,
    pub omega_star: f64,
    pub idq_avg: f64,
    pub idq_star: f64,
    pub vm_avg: f64,
}

impl Improvements {
    pub const HEADER: &'static str = "delta_avg,delta_star,omega_avg,omega_star,idq_avg,idq_star,vm_avg";

    pub fn to_array(&self) -> [f64; 7] {
        [
            self.delta_avg,
            self.delta_star,
            self.omega_avg,
            self.omega_star,
            self.idq_avg,
            self.idq_star,
            self.vm_avg,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub star: String,
    pub t_start: f64,
    pub traditional: RunErrors,
    pub hybrid: RunErrors,
    pub improvements: Improvements,
    /// Grid times with the starred machine's speed-deviation error of the
    /// traditional and hybrid runs.
    pub star_omega_series: Vec<(f64, f64, f64)>,
}

fn mean_except(v: &[f64], skip: usize) -> f64 {
    let others: Vec<f64> = v.iter().enumerate().filter(|(k, _)| *k != skip).map(|(_, x)| *x).collect();
    if others.is_empty() {
        0.0
    } else {
        others.iter().sum::<f64>() / others.len() as f64
    }
}

/// Compares both runs against the reference (any finer grid whose step
/// divides the runs' step) over `t >= t_start`.
pub fn compare(
    traditional: &Trajectory,
    hybrid: &Trajectory,
    reference: &Trajectory,
    star: &str,
    t_start: f64,
) -> Result<ErrorReport, MetricsError> {
    if traditional.t != hybrid.t {
        return Err(MetricsError::GridMismatch("traditional and hybrid grids differ".into()));
    }
    let r = align(reference, traditional)?;
    let k = traditional
        .machine_ids
        .iter()
        .position(|m| m == star)
        .ok_or_else(|| MetricsError::UnknownMachine(star.to_string()))?;
    let et = run_errors(traditional, &r, t_start);
    let eh = run_errors(hybrid, &r, t_start);
    let vm_t = et.vm.iter().sum::<f64>() / et.vm.len().max(1) as f64;
    let vm_h = eh.vm.iter().sum::<f64>() / eh.vm.len().max(1) as f64;
    let improvements = Improvements {
        delta_avg: improvement(mean_except(&et.delta, k), mean_except(&eh.delta, k)),
        delta_star: improvement(et.delta[k], eh.delta[k]),
        omega_avg: improvement(mean_except(&et.omega, k), mean_except(&eh.omega, k)),
        omega_star: improvement(et.omega[k], eh.omega[k]),
        idq_avg: improvement(mean_except(&et.idq, k), mean_except(&eh.idq, k)),
        idq_star: improvement(et.idq[k], eh.idq[k]),
        vm_avg: improvement(vm_t, vm_h),
    };
    let star_omega_series = (0..traditional.len())
        .map(|n| {
            let w = r.states[n][k].domega;
            (
                traditional.t[n],
                (traditional.states[n][k].domega - w).abs(),
                (hybrid.states[n][k].domega - w).abs(),
            )
        })
        .collect();
    Ok(ErrorReport { star: star.to_string(), t_start, traditional: et, hybrid: eh, improvements, star_omega_series })
}

impl ErrorReport {
    /// One table row: `scenario,<improvements>`.
    pub fn table_csv(rows: &[(String, Improvements)]) -> String {
        let mut s = format!("scenario,{}\n", Improvements::HEADER);
        for (name, imp) in rows {
            s.push_str(name);
            for v in imp.to_array() {
                write!(s, ",{v:.2}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    /// Per-variable MAE of both runs.
    pub fn mae_csv(&self, machine_ids: &[String], bus_ids: &[usize]) -> String {
        let mut s = String::from("variable,mae_traditional,mae_hybrid,improvement\n");
        let mut row = |name: String, t: f64, h: f64| {
            writeln!(s, "{name},{t:e},{h:e},{:.2}", improvement(t, h)).unwrap();
        };
        for (k, m) in machine_ids.iter().enumerate() {
            row(format!("{m}.delta"), self.traditional.delta[k], self.hybrid.delta[k]);
            row(format!("{m}.domega"), self.traditional.omega[k], self.hybrid.omega[k]);
            row(format!("{m}.Idq"), self.traditional.idq[k], self.hybrid.idq[k]);
        }
        for (b, id) in bus_ids.iter().enumerate() {
            row(format!("bus{id}.Vm"), self.traditional.vm[b], self.hybrid.vm[b]);
        }
        s
    }

    pub fn series_csv(&self) -> String {
        let mut s = format!("t,{0}.domega_err_traditional,{0}.domega_err_hybrid\n", self.star);
        for (t, a, b) in &self.star_omega_series {
            writeln!(s, "{t},{a},{b}").unwrap();
        }
        s
    }
}

/// Paired one-step errors of a surrogate and of the trapezoidal step with
/// both end currents prescribed, against labeled samples. Errors are the
/// Euclidean norm over `(delta, domega)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OneStepStats {
    pub surrogate: Vec<f64>,
    pub trapezoidal: Vec<f64>,
}

impl OneStepStats {
    pub fn len(&self) -> usize {
        self.surrogate.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surrogate.is_empty()
    }

    /// Fraction of samples where the surrogate is strictly more accurate.
    pub fn win_fraction(&self) -> f64 {
        let wins = self.surrogate.iter().zip(&self.trapezoidal).filter(|(s, t)| s < t).count();
        wins as f64 / self.len().max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("statistic,surrogate,trapezoidal\n");
        writeln!(s, "samples,{},{}", self.len(), self.len()).unwrap();
        let rows: [(&str, fn(&[f64]) -> f64); 4] =
            [("mean", mean), ("median", |v| quantile(v, 0.5)), ("p95", |v| quantile(v, 0.95)), ("max", |v| quantile(v, 1.0))];
        for (name, f) in rows {
            writeln!(s, "{name},{:e},{:e}", f(&self.surrogate), f(&self.trapezoidal)).unwrap();
        }
        writeln!(s, "win_fraction,{},{}", self.win_fraction(), 1.0 - self.win_fraction()).unwrap();
        s
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Empirical quantile by nearest rank on the sorted values.
pub fn quantile(v: &[f64], q: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let k = ((q * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1;
    s[k]
}

pub fn one_step_benchmark(m: &MlpModel, samples: &[DataSample]) -> OneStepStats {
    let p = &m.meta.machine;
    let f = m.meta.f_base;
    let (mut surrogate, mut trapezoidal) = (Vec::new(), Vec::new());
    for s in samples {
        let x = &s.inputs;
        let (d, w) = predict_step(m, x.dt, &x.state, &x.i0, &x.i1);
        surrogate.push((d - s.target[0]).hypot(w - s.target[1]));
        let t = trapezoidal_step_frozen(&x.state, p, &x.i0, &x.i1, x.dt, f);
        trapezoidal.push((t.delta - s.target[0]).hypot(t.domega - s.target[1]));
    }
    OneStepStats { surrogate, trapezoidal }
}

/// Line plot of named series sharing one x axis, as a standalone SVG.
pub fn svg_line_plot(title: &str, x_label: &str, y_label: &str, x: &[f64], series: &[(&str, &[f64])]) -> String {
    const W: f64 = 720.0;
    const H: f64 = 420.0;
    const ML: f64 = 80.0;
    const MR: f64 = 20.0;
    const MT: f64 = 40.0;
    const MB: f64 = 50.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
    let finite = |v: &&f64| v.is_finite();
    let (x0, x1) = x.iter().filter(finite).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (mut y0, mut y1) = series
        .iter()
        .flat_map(|(_, s)| s.iter().filter(finite))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(y1 > y0) {
        y0 -= 1.0;
        y1 += 1.0;
    }
    let x1 = if x1 > x0 { x1 } else { x0 + 1.0 };
    let px = |v: f64| ML + (v - x0) / (x1 - x0) * (W - ML - MR);
    let py = |v: f64| H - MB - (v - y0) / (y1 - y0) * (H - MT - MB);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        W / 2.0,
        xml_escape(title)
    );
    writeln!(
        s,
        "<rect x=\"{ML}\" y=\"{MT}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#888\"/>",
        W - ML - MR,
        H - MT - MB
    )
    .unwrap();
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        writeln!(s, "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{}</text>", px(fx), H - MB + 18.0, tick(fx)).unwrap();
        writeln!(s, "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>", ML - 6.0, py(fy) + 4.0, tick(fy)).unwrap();
    }
    writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", W / 2.0, H - 10.0, xml_escape(x_label)).unwrap();
    writeln!(
        s,
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>",
        H / 2.0,
        H / 2.0,
        xml_escape(y_label)
    )
    .unwrap();
    for (j, (name, ys)) in series.iter().enumerate() {
        let c = COLORS[j % COLORS.len()];
        let pts: Vec<String> = x
            .iter()
            .zip(ys.iter())
            .filter(|(a, b)| a.is_finite() && b.is_finite())
            .map(|(a, b)| format!("{:.2},{:.2}", px(*a), py(*b)))
            .collect();
        writeln!(s, "<polyline fill=\"none\" stroke=\"{c}\" stroke-width=\"1.5\" points=\"{}\"/>", pts.join(" ")).unwrap();
        let ly = MT + 16.0 + 16.0 * j as f64;
        writeln!(s, "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{c}\" stroke-width=\"2\"/>", W - MR - 150.0, W - MR - 130.0).unwrap();
        writeln!(s, "<text x=\"{}\" y=\"{}\">{}</text>", W - MR - 125.0, ly + 4.0, xml_escape(name)).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v == 0.0 || (1e-2..1e4).contains(&v.abs()) {
        format!("{v:.3}")
    } else {
        format!("{v:.2e}")
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::{DqCurrents, MachineState};

    fn traj(offset: f64, dt: f64, n: usize) -> Trajectory {
        let s = |t: f64| MachineState { eq_p: 1.0, ed_p: 0.5, delta: t + offset, domega: 0.01 * t + offset };
        let i = |t: f64| DqCurrents { id: 0.5 + offset, iq: 0.6 + t };
        let ts: Vec<f64> = (0..n).map(|k| k as f64 * dt).collect();
        Trajectory {
            machine_ids: vec!["G1".into(), "G2".into()],
            bus_ids: vec![1, 2],
            states: ts.iter().map(|&t| vec![s(t), s(t)]).collect(),
            currents: ts.iter().map(|&t| vec![i(t), i(t)]).collect(),
            vm: ts.iter().map(|&t| vec![1.0 + offset, 1.0 + t]).collect(),
            va: ts.iter().map(|_| vec![0.0, 0.1]).collect(),
            t: ts,
            diagnostics: vec![],
        }
    }

    #[test]
    fn identical_runs_give_zero_improvement() {
        let r = traj(0.0, 0.001, 201);
        let a = traj(0.01, 0.02, 11);
        let rep = compare(&a, &a, &r, "G2", 0.0).unwrap();
        assert_eq!(rep.improvements.to_array(), [0.0; 7]);
    }

    #[test]
    fn exact_hybrid_gives_full_improvement() {
        let r = traj(0.0, 0.001, 201);
        let a = traj(0.01, 0.02, 11);
        let h = traj(0.0, 0.02, 11);
        let rep = compare(&a, &h, &r, "G2", 0.0).unwrap();
        for v in rep.improvements.to_array() {
            assert!((v - 100.0).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn antisymmetry_and_scale_equivariance() {
        let (t, h) = (0.3, 0.2);
        assert!((improvement(t, h) * t + improvement(h, t) * h).abs() < 1e-12);
        for s in [0.1, 7.0, 1e6] {
            assert!((improvement(s * t, s * h) - improvement(t, h)).abs() < 1e-12);
        }
        assert_eq!(improvement(0.0, 0.0), 0.0);
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let r = traj(0.0, 0.003, 100);
        let a = traj(0.0, 0.02, 11);
        assert!(matches!(compare(&a, &a, &r, "G1", 0.0), Err(MetricsError::GridMismatch(_))));
        assert!(matches!(compare(&a, &a, &traj(0.0, 0.001, 201), "G9", 0.0), Err(MetricsError::UnknownMachine(_))));
    }

    #[test]
    fn window_excludes_pre_fault_rows() {
        let r = traj(0.0, 0.001, 201);
        let mut a = traj(0.0, 0.02, 11);
        a.states[1][0].domega += 1.0; // t = 0.02, before the window
        let rep = compare(&a, &a, &r, "G2", 0.1).unwrap();
        assert_eq!(rep.traditional.omega[0], 0.0);
    }

    #[test]
    fn svg_is_well_formed() {
        let x = [0.0, 1.0, 2.0];
        let s = svg_line_plot("err <a>", "t [s]", "y", &x, &[("a", &[1.0, 2.0, 3.0]), ("b", &[0.0, 0.0, f64::NAN])]);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("err &lt;a&gt;"));
        assert_eq!(s.matches("<polyline").count(), 2);
    }
}
