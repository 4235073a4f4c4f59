//! Batch entry points of the `gridpinn` binary.
//!
//! Exit codes: 0 success, 1 numerical failure, 2 usage error. Relative
//! output paths are resolved against `$GRIDPINN_OUT_DIR` when it is set.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::daesolver::{simulate, JacobianMode, SimError, SimulationConfig, Trajectory};
use crate::integrators::{IntegratorAssignment, IntegratorError};
use crate::machine::MachineParams;
use crate::metrics::{self, one_step_benchmark, ErrorReport};
use crate::netcore::{parse_case, parse_scenario, NetworkCase, Scenario};
use crate::pinn::{self, generate_dataset, held_out_samples, init_params, load_model, save_model, Dataset, DomainBox, MlpModel, ModelMeta, TrainConfig};
use crate::powerflow::solve_power_flow;

pub const OUT_DIR_ENV: &str = "GRIDPINN_OUT_DIR";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numerical(_) | CliError::Io(_) => 1,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Integrator(IntegratorError::UnknownMachine(_) | IntegratorError::UnknownMethod(_))
            | SimError::Config(_)
            | SimError::MissingModel(_) => CliError::Usage(e.to_string()),
            SimError::Case(_) => CliError::Usage(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "gridpinn", version, about = "Power-system dynamic simulation with neural one-step surrogates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the power flow and print bus voltages and machine injections.
    Powerflow {
        /// Case file or shipped case name (ieee9, ieee14, ieee30).
        case: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a time-domain simulation and write the trajectory CSV.
    Simulate {
        case: String,
        /// Scenario file or shipped scenario name; none means undisturbed.
        #[arg(long)]
        scenario: Option<String>,
        /// Step size in milliseconds.
        #[arg(long, default_value_t = 20.0)]
        dt: f64,
        /// End time in seconds.
        #[arg(long, default_value_t = 5.0)]
        t_end: f64,
        /// Integrator per machine, e.g. `G3=pinn,G1=trap`.
        #[arg(long, default_value = "")]
        assign: String,
        /// Surrogate model file, optionally `ID=FILE` (default id `default`).
        #[arg(long)]
        model: Vec<String>,
        /// Use the network's input Jacobian for surrogate rows.
        #[arg(long)]
        analytic_jacobian: bool,
        /// Clamp out-of-domain surrogate inputs instead of failing.
        #[arg(long)]
        clamp: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a labeled dataset and collocation points.
    GenDataset {
        /// TOML with `f_base` and a `[machine]` table.
        #[arg(long)]
        params: PathBuf,
        /// TOML domain box (time step in seconds).
        #[arg(long)]
        domain: PathBuf,
        #[arg(long)]
        nu: usize,
        #[arg(long)]
        np: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a surrogate; writes the model and a loss-history CSV next to it.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from an existing model instead of a fresh initialization.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Save the current model every N epochs.
        #[arg(long, default_value_t = 0)]
        checkpoint_every: usize,
    },
    /// One-step error statistics of a model against the trapezoidal rule.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        /// Labeled samples to evaluate on; without it, held-out samples are
        /// drawn from the model's domain at `--dt`.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Fixed time step of held-out samples, in milliseconds.
        #[arg(long, default_value_t = 20.0)]
        dt: f64,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reference, traditional and hybrid runs with an error report.
    Compare {
        #[arg(long)]
        case: String,
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 20.0)]
        dt: f64,
        #[arg(long, default_value_t = 5.0)]
        t_end: f64,
        /// Machine simulated by the surrogate in the hybrid run; defaults to
        /// the case's starred machine.
        #[arg(long)]
        star: Option<String>,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write an SVG plot of the starred machine's speed error.
        #[arg(long)]
        svg: bool,
    },
}

/// Machine parameter file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub f_base: f64,
    pub machine: MachineParams,
}

pub fn out_path(p: &Path) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) if p.is_relative() => Path::new(&dir).join(p),
        _ => p.to_path_buf(),
    }
}

fn write_out(p: &Path, contents: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
    let p = out_path(p);
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(&p, contents).map_err(|e| io_err(&p, e))?;
    Ok(p)
}

fn read(p: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(p).map_err(|e| io_err(p, e))
}

pub fn load_case(arg: &str) -> Result<NetworkCase, CliError> {
    let text = match crate::cases::by_name(arg) {
        Some(t) => t.to_string(),
        None => read(Path::new(arg))?,
    };
    parse_case(&text).map_err(|e| CliError::Usage(format!("{arg}: {e}")))
}

pub fn load_scenario(arg: &str) -> Result<Scenario, CliError> {
    let text = match crate::scenarios::by_name(arg) {
        Some(t) => t.to_string(),
        None => read(Path::new(arg))?,
    };
    parse_scenario(&text).map_err(|e| CliError::Usage(format!("{arg}: {e}")))
}

fn load_model_arg(arg: &str) -> Result<(String, MlpModel), CliError> {
    let (id, file) = match arg.split_once('=') {
        Some((id, f)) => (id.to_string(), f),
        None => ("default".to_string(), arg),
    };
    let m = load_model(Path::new(file)).map_err(|e| io_err(Path::new(file), e))?;
    Ok((id, m))
}

pub fn powerflow_csv(case: &NetworkCase) -> Result<String, CliError> {
    let pf = solve_power_flow(case, 1e-8, 50).map_err(|e| CliError::Numerical(e.to_string()))?;
    let mut s = String::from("bus,vm,va\n");
    for (i, b) in case.buses.iter().enumerate() {
        writeln!(s, "{},{},{}", b.id, pf.vm[i], pf.va[i]).unwrap();
    }
    s.push_str("\nmachine,bus,p,q\n");
    for (k, m) in case.machines.iter().enumerate() {
        writeln!(s, "{},{},{},{}", m.id, m.bus, pf.p_machine[k], pf.q_machine[k]).unwrap();
    }
    Ok(s)
}

/// Executes one command.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Powerflow { case, out } => {
            let csv = powerflow_csv(&load_case(&case)?)?;
            match out {
                Some(p) => {
                    write_out(&p, csv)?;
                }
                None => print!("{csv}"),
            }
        }
        Command::Simulate { case, scenario, dt, t_end, assign, model, analytic_jacobian, clamp, out } => {
            let case = load_case(&case)?;
            let scenario = match scenario {
                Some(s) => load_scenario(&s)?,
                None => Scenario::default(),
            };
            let ids: Vec<String> = case.machines.iter().map(|m| m.id.clone()).collect();
            let assignment = IntegratorAssignment::parse(&assign, &ids).map_err(|e| CliError::Usage(e.to_string()))?;
            let models = model.iter().map(|m| load_model_arg(m)).collect::<Result<BTreeMap<_, _>, _>>()?;
            let cfg = SimulationConfig {
                dt: dt * 1e-3,
                t_end,
                jacobian_mode: if analytic_jacobian {
                    JacobianMode::AnalyticWhereAvailable
                } else {
                    JacobianMode::FiniteDifference
                },
                domain_policy: if clamp {
                    crate::integrators::DomainPolicy::Clamp
                } else {
                    crate::integrators::DomainPolicy::Error
                },
                ..Default::default()
            };
            match simulate(&case, &cfg, &scenario, &assignment, &models) {
                Ok(tr) => {
                    write_out(&out, tr.to_csv())?;
                }
                Err(SimError::StepFailed { t, source, partial }) => {
                    let p = write_out(&out, partial.to_csv())?;
                    return Err(CliError::Numerical(format!(
                        "step at t = {t} s failed: {source}; partial trajectory in {}",
                        p.display()
                    )));
                }
                Err(e) => return Err(e.into()),
            }
        }
        Command::GenDataset { params, domain, nu, np, seed, out } => {
            let pf: ParamsFile = toml::from_str(&read(&params)?).map_err(|e| io_err(&params, e))?;
            let dom: DomainBox = toml::from_str(&read(&domain)?).map_err(|e| io_err(&domain, e))?;
            pf.machine.check().map_err(|e| CliError::Usage(e.to_string()))?;
            let ds = generate_dataset(&pf.machine, pf.f_base, &dom, nu, np, seed)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            write_out(&out, ds.to_json())?;
        }
        Command::Train { dataset, config, out, init, checkpoint_every } => {
            let ds = Dataset::load(&dataset).map_err(|e| io_err(&dataset, e))?;
            let cfg = TrainConfig::from_toml(&read(&config)?).map_err(|e| io_err(&config, e))?;
            let mut m = match init {
                Some(p) => load_model(&p).map_err(|e| io_err(&p, e))?,
                None => {
                    let meta = ModelMeta {
                        machine: ds.machine.clone(),
                        f_base: ds.f_base,
                        domain: ds.domain.clone(),
                        train: Some(cfg.clone()),
                        seed: cfg.seed,
                    };
                    let mut m = MlpModel::zeros(&cfg.hidden, cfg.output_mode, meta);
                    init_params(&mut m, cfg.seed);
                    m
                }
            };
            m.meta.train = Some(cfg.clone());
            let out = out_path(&out);
            let mut observer = |r: &pinn::EpochRecord, m: &MlpModel| {
                if r.epoch.is_multiple_of(100) {
                    log::info!(
                        "epoch {:>6} lr {:.3e} data {:.4e} physics {:.4e} total {:.4e}",
                        r.epoch,
                        r.lr,
                        r.data,
                        r.physics,
                        r.total
                    );
                }
                if checkpoint_every > 0 && (r.epoch + 1).is_multiple_of(checkpoint_every) {
                    if let Err(e) = save_model(m, &out) {
                        log::warn!("checkpoint failed: {e}");
                    }
                }
            };
            let rep = pinn::train_with_observer(&mut m, &ds.data, &ds.colloc, &cfg, &mut observer)
                .map_err(|e| CliError::Numerical(e.to_string()))?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
            }
            save_model(&m, &out).map_err(|e| io_err(&out, e))?;
            let mut hist = String::from("epoch,lr,data,physics,total\n");
            for r in &rep.history {
                writeln!(hist, "{},{:e},{:e},{:e},{:e}", r.epoch, r.lr, r.data, r.physics, r.total).unwrap();
            }
            std::fs::write(out.with_extension("history.csv"), hist).map_err(|e| io_err(&out, e))?;
            if !rep.decreasing {
                log::warn!("training loss shows no decreasing trend");
            }
        }
        Command::Evaluate { model, dataset, dt, samples, seed, out } => {
            let m = load_model(&model).map_err(|e| io_err(&model, e))?;
            let data = match dataset {
                Some(d) => Dataset::load(&d).map_err(|e| io_err(&d, e))?.data,
                None => held_out_samples(&m.meta.machine, m.meta.f_base, &m.meta.domain, dt * 1e-3, samples, seed)
                    .map_err(|e| CliError::Usage(e.to_string()))?,
            };
            let stats = one_step_benchmark(&m, &data);
            let csv = stats.to_csv();
            match out {
                Some(p) => {
                    write_out(&p, csv)?;
                }
                None => print!("{csv}"),
            }
        }
        Command::Compare { case, scenario, dt, t_end, star, model, out, svg } => {
            let case = load_case(&case)?;
            let sc = load_scenario(&scenario)?;
            let star = match star {
                Some(s) => s,
                None => case
                    .star_machine()
                    .map(|k| case.machines[k].id.clone())
                    .ok_or_else(|| CliError::Usage("case has no starred machine; pass --star".into()))?,
            };
            let (_, m) = load_model_arg(&model.to_string_lossy())?;
            let report = compare_runs(&case, &sc, dt * 1e-3, t_end, &star, m, None)?;
            let dir = out_path(&out);
            let name = if sc.name.is_empty() { scenario.clone() } else { sc.name.clone() };
            write_out(&dir.join("improvements.csv"), ErrorReport::table_csv(&[(name, report.report.improvements)]))?;
            write_out(&dir.join("mae.csv"), report.report.mae_csv(&report.traditional.machine_ids, &report.traditional.bus_ids))?;
            write_out(&dir.join("star_omega_error.csv"), report.report.series_csv())?;
            write_out(&dir.join("reference.csv"), report.reference.to_csv())?;
            write_out(&dir.join("traditional.csv"), report.traditional.to_csv())?;
            write_out(&dir.join("hybrid.csv"), report.hybrid.to_csv())?;
            if svg {
                let t: Vec<f64> = report.report.star_omega_series.iter().map(|r| r.0).collect();
                let a: Vec<f64> = report.report.star_omega_series.iter().map(|r| r.1).collect();
                let b: Vec<f64> = report.report.star_omega_series.iter().map(|r| r.2).collect();
                let plot = metrics::svg_line_plot(
                    &format!("{star} speed-deviation error"),
                    "t [s]",
                    "|domega - reference| [pu]",
                    &t,
                    &[("trapezoidal", &a), ("surrogate", &b)],
                );
                write_out(&dir.join("star_omega_error.svg"), plot)?;
            }
        }
    }
    Ok(())
}

/// Output of [`compare_runs`].
pub struct Comparison {
    pub reference: Trajectory,
    pub traditional: Trajectory,
    pub hybrid: Trajectory,
    pub report: ErrorReport,
}

/// Reference (1 ms), traditional and hybrid runs of one scenario, compared
/// over the window starting at the first disturbance.
pub fn compare_runs(
    case: &NetworkCase,
    scenario: &Scenario,
    dt: f64,
    t_end: f64,
    star: &str,
    model: MlpModel,
    cache_dir: Option<&Path>,
) -> Result<Comparison, CliError> {
    let ids: Vec<String> = case.machines.iter().map(|m| m.id.clone()).collect();
    if !ids.iter().any(|i| i == star) {
        return Err(CliError::Usage(format!("unknown machine '{star}'")));
    }
    let cfg = SimulationConfig { dt, t_end, ..Default::default() };
    let trad_assign = IntegratorAssignment::all_trapezoidal(ids.len());
    let hyb_assign = IntegratorAssignment::parse(&format!("{star}=pinn"), &ids).map_err(|e| CliError::Usage(e.to_string()))?;
    let models = BTreeMap::from([("default".to_string(), model)]);
    let none = BTreeMap::new();
    let reference = metrics::reference_trajectory(case, scenario, t_end, cache_dir).map_err(|e| CliError::Numerical(e.to_string()))?;
    let traditional = simulate(case, &cfg, scenario, &trad_assign, &none)?;
    let hybrid = simulate(case, &cfg, scenario, &hyb_assign, &models)?;
    let t_start = scenario
        .disturbances
        .iter()
        .map(|d| crate::daesolver::disturbance_step(d.t_apply, dt) as f64 * dt)
        .fold(f64::INFINITY, f64::min);
    let t_start = if t_start.is_finite() { t_start } else { 0.0 };
    let report = metrics::compare(&traditional, &hybrid, &reference, star, t_start)
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    Ok(Comparison { reference, traditional, hybrid, report })
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_machine_in_assignment_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("x.csv");
        let code = main_with_args(["gridpinn", "simulate", "ieee9", "--assign", "G9=pinn", "--out", out.to_str().unwrap()]);
        assert_eq!(code, 2);
        assert_eq!(main_with_args(["gridpinn", "nonsense"]), 2);
    }

    #[test]
    fn powerflow_lists_all_buses() {
        let csv = powerflow_csv(&load_case("ieee9").unwrap()).unwrap();
        assert_eq!(csv.lines().filter(|l| l.split(',').count() == 3).count(), 10);
        let g3 = csv.lines().find(|l| l.starts_with("G3,3,")).unwrap();
        let p: f64 = g3.split(',').nth(2).unwrap().parse().unwrap();
        assert!((p - 0.85).abs() < 1e-9);
    }

    #[test]
    fn undisturbed_simulation_writes_constant_csv() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("t.csv");
        let code = main_with_args(["gridpinn", "simulate", "ieee9", "--t-end", "0.2", "--out", out.to_str().unwrap()]);
        assert_eq!(code, 0);
        let tr = Trajectory::load_csv(&out).unwrap();
        assert_eq!(tr.len(), 11);
        assert!(tr.max_state_error(&tr.subsample(1)) == 0.0);
        for row in &tr.states {
            assert!((row[0].delta - tr.states[0][0].delta).abs() < 1e-8);
        }
    }
}
