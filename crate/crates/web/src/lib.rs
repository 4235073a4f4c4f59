//! Browser bindings: power flow, time-domain simulation with either
//! integrator for the starred machine, and a one-step error comparison.

use std::collections::BTreeMap;

use gridpinn::integrators::IntegratorAssignment;
use gridpinn::metrics::{one_step_benchmark, quantile};
use gridpinn::netcore::{parse_scenario, Scenario};
use gridpinn::pinn::{held_out_samples, read_model};
use gridpinn::{cases, parse_case, scenarios, simulate, solve_power_flow, MlpModel, NetworkCase, SimulationConfig};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const MODEL: &[u8] = include_bytes!("../../core/data/models/sg_star.model");

fn model() -> Result<MlpModel, JsError> {
    Ok(read_model(MODEL)?)
}

fn case(name: &str) -> Result<NetworkCase, JsError> {
    let text = cases::by_name(name).ok_or_else(|| JsError::new(&format!("unknown case '{name}'")))?;
    Ok(parse_case(text)?)
}

fn scenario(name: &str) -> Result<Scenario, JsError> {
    if name.is_empty() || name == "none" {
        return Ok(Scenario::default());
    }
    let text = scenarios::by_name(name).ok_or_else(|| JsError::new(&format!("unknown scenario '{name}'")))?;
    Ok(parse_scenario(text)?)
}

#[derive(Serialize)]
struct BusRow {
    id: usize,
    vm: f64,
    va_deg: f64,
}

#[derive(Serialize)]
struct MachineRow {
    id: String,
    bus: usize,
    p: f64,
    q: f64,
}

#[derive(Serialize)]
struct PowerFlowView {
    iterations: usize,
    buses: Vec<BusRow>,
    machines: Vec<MachineRow>,
}

/// Power-flow solution of a shipped case as JSON.
#[wasm_bindgen]
pub fn power_flow(case_name: &str) -> Result<String, JsError> {
    let c = case(case_name)?;
    let pf = solve_power_flow(&c, 1e-10, 50)?;
    let view = PowerFlowView {
        iterations: pf.iterations,
        buses: c
            .buses
            .iter()
            .enumerate()
            .map(|(i, b)| BusRow { id: b.id, vm: pf.vm[i], va_deg: pf.va[i].to_degrees() })
            .collect(),
        machines: c
            .machines
            .iter()
            .enumerate()
            .map(|(k, m)| MachineRow { id: m.id.clone(), bus: m.bus, p: pf.p_machine[k], q: pf.q_machine[k] })
            .collect(),
    };
    Ok(serde_json::to_string(&view)?)
}

#[derive(Serialize)]
struct SimulationView {
    star: String,
    t: Vec<f64>,
    machines: Vec<String>,
    /// Speed deviation per machine over time.
    domega: Vec<Vec<f64>>,
    /// Terminal voltage magnitude of the starred machine's bus.
    star_vm: Vec<f64>,
    newton_iterations: Vec<usize>,
}

/// Runs a scenario; with `surrogate` the starred machine uses the shipped
/// network instead of the trapezoidal rule.
#[wasm_bindgen]
pub fn run_simulation(case_name: &str, scenario_name: &str, dt_ms: f64, t_end: f64, surrogate: bool) -> Result<String, JsError> {
    let c = case(case_name)?;
    let sc = scenario(scenario_name)?;
    let ids: Vec<String> = c.machines.iter().map(|m| m.id.clone()).collect();
    let k = c.star_machine().ok_or_else(|| JsError::new("case has no starred machine"))?;
    let star = ids[k].clone();
    let (assign, models) = if surrogate {
        (IntegratorAssignment::parse(&format!("{star}=pinn"), &ids)?, BTreeMap::from([("default".to_string(), model()?)]))
    } else {
        (IntegratorAssignment::all_trapezoidal(ids.len()), BTreeMap::new())
    };
    let cfg = SimulationConfig { dt: dt_ms * 1e-3, t_end, ..Default::default() };
    let tr = simulate(&c, &cfg, &sc, &assign, &models)?;
    let star_bus = tr.bus_ids.iter().position(|&b| b == c.machines[k].bus).unwrap_or(0);
    let view = SimulationView {
        star,
        machines: tr.machine_ids.clone(),
        domega: (0..ids.len()).map(|m| tr.states.iter().map(|r| r[m].domega).collect()).collect(),
        star_vm: tr.vm.iter().map(|r| r[star_bus]).collect(),
        newton_iterations: tr.diagnostics.iter().map(|d| d.iterations).collect(),
        t: tr.t,
    };
    Ok(serde_json::to_string(&view)?)
}

#[derive(Serialize)]
struct OneStepView {
    dt_ms: f64,
    samples: usize,
    win_fraction: f64,
    surrogate_median: f64,
    trapezoidal_median: f64,
    surrogate_p95: f64,
    trapezoidal_p95: f64,
}

/// One-step errors of the surrogate and the trapezoidal rule on random
/// inputs from the model's domain at a fixed step.
#[wasm_bindgen]
pub fn one_step_comparison(dt_ms: f64, samples: usize, seed: u32) -> Result<String, JsError> {
    let m = model()?;
    let data = held_out_samples(&m.meta.machine, m.meta.f_base, &m.meta.domain, dt_ms * 1e-3, samples, seed as u64)?;
    let s = one_step_benchmark(&m, &data);
    let view = OneStepView {
        dt_ms,
        samples,
        win_fraction: s.win_fraction(),
        surrogate_median: quantile(&s.surrogate, 0.5),
        trapezoidal_median: quantile(&s.trapezoidal, 0.5),
        surrogate_p95: quantile(&s.surrogate, 0.95),
        trapezoidal_p95: quantile(&s.trapezoidal, 0.95),
    };
    Ok(serde_json::to_string(&view)?)
}
