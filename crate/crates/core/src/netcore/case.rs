use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::machine::{MachineModel, MachineParams};

#[derive(Debug, Error, PartialEq)]
pub enum CaseError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{what} references missing bus {bus}")]
    MissingBus { what: String, bus: usize },
    #[error("invalid case: {0}")]
    Invalid(String),
}

fn perr(line: usize, msg: impl Into<String>) -> CaseError {
    CaseError::Parse { line, msg: msg.into() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BusRecord {
    pub id: usize,
    /// Voltage magnitude setpoint, used at machine buses.
    pub v_set: f64,
    pub g_shunt: f64,
    pub b_shunt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchRecord {
    pub from_bus: usize,
    pub to_bus: usize,
    pub series_r: f64,
    pub series_x: f64,
    /// Total line-charging susceptance.
    pub shunt_b: f64,
    /// Off-nominal tap on the from side; 1.0 for lines.
    pub tap_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadRecord {
    pub bus: usize,
    pub p: f64,
    pub q: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MachineKind {
    Generator,
    Condenser,
}

impl MachineKind {
    fn as_str(self) -> &'static str {
        match self {
            MachineKind::Generator => "generator",
            MachineKind::Condenser => "condenser",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MachineSpec {
    pub id: String,
    pub bus: usize,
    pub kind: MachineKind,
    /// Active-power dispatch used by the power flow (zero for condensers).
    pub p_gen: f64,
    /// Marks the machine that the hybrid solver hands to a surrogate.
    pub star: bool,
    pub params: MachineParams,
}

/// One test system. All values are per unit on `base_mva`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkCase {
    pub name: String,
    pub base_mva: f64,
    pub base_freq: f64,
    /// Sorted by bus id; the position is the internal bus index.
    pub buses: Vec<BusRecord>,
    pub branches: Vec<BranchRecord>,
    pub loads: Vec<LoadRecord>,
    pub machines: Vec<MachineSpec>,
}

impl NetworkCase {
    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    /// Internal index of an external bus id.
    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.buses.binary_search_by_key(&id, |b| b.id).ok()
    }

    pub fn machine_index(&self, id: &str) -> Option<usize> {
        self.machines.iter().position(|m| m.id == id)
    }

    /// The starred machine, if the case marks one.
    pub fn star_machine(&self) -> Option<usize> {
        self.machines.iter().position(|m| m.star)
    }

    /// Total load (P, Q) at an internal bus index.
    pub fn load_at(&self, bus_idx: usize) -> (f64, f64) {
        let id = self.buses[bus_idx].id;
        self.loads
            .iter()
            .filter(|l| l.bus == id)
            .fold((0.0, 0.0), |(p, q), l| (p + l.p, q + l.q))
    }

    /// Writes the case back in the text format accepted by [`parse_case`].
    pub fn to_case_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[system]");
        let _ = writeln!(s, "name {}", self.name);
        let _ = writeln!(s, "base_mva {}", self.base_mva);
        let _ = writeln!(s, "base_freq {}", self.base_freq);
        let _ = writeln!(s, "\n[bus]\n# id v_set g_shunt b_shunt");
        for b in &self.buses {
            let _ = writeln!(s, "{} {} {} {}", b.id, b.v_set, b.g_shunt, b.b_shunt);
        }
        let _ = writeln!(s, "\n[branch]\n# from to r x b tap");
        for br in &self.branches {
            let _ = writeln!(
                s,
                "{} {} {} {} {} {}",
                br.from_bus, br.to_bus, br.series_r, br.series_x, br.shunt_b, br.tap_ratio
            );
        }
        let _ = writeln!(s, "\n[load]\n# bus p q");
        for l in &self.loads {
            let _ = writeln!(s, "{} {} {}", l.bus, l.p, l.q);
        }
        let _ = writeln!(
            s,
            "\n[machine]\n# id bus kind star model p_gen H D Xd Xd' Xq Xq' Rs T'do T'qo"
        );
        for m in &self.machines {
            let p = &m.params;
            let model = match p.model {
                MachineModel::TwoAxis => "two_axis",
                MachineModel::Simplified => "simplified",
            };
            let _ = writeln!(
                s,
                "{} {} {} {} {} {} {} {} {} {} {} {} {} {} {}",
                m.id,
                m.bus,
                m.kind.as_str(),
                u8::from(m.star),
                model,
                m.p_gen,
                p.h,
                p.d,
                p.xd,
                p.xd_p,
                p.xq,
                p.xq_p,
                p.rs,
                p.td0_p,
                p.tq0_p
            );
        }
        s
    }

    fn validate(&self) -> Result<(), CaseError> {
        if self.buses.is_empty() {
            return Err(CaseError::Invalid("no buses".into()));
        }
        if !(self.base_freq > 0.0) {
            return Err(CaseError::Invalid("base_freq must be positive".into()));
        }
        if !(self.base_mva > 0.0) {
            return Err(CaseError::Invalid("base_mva must be positive".into()));
        }
        let known = |bus: usize| self.bus_index(bus).is_some();
        for br in &self.branches {
            for b in [br.from_bus, br.to_bus] {
                if !known(b) {
                    return Err(CaseError::MissingBus {
                        what: format!("branch {}-{}", br.from_bus, br.to_bus),
                        bus: b,
                    });
                }
            }
            if br.series_r.hypot(br.series_x) <= 0.0 {
                return Err(CaseError::Invalid(format!(
                    "branch {}-{} has zero series impedance",
                    br.from_bus, br.to_bus
                )));
            }
            if !(br.tap_ratio > 0.0) {
                return Err(CaseError::Invalid(format!(
                    "branch {}-{} has non-positive tap",
                    br.from_bus, br.to_bus
                )));
            }
        }
        for l in &self.loads {
            if !known(l.bus) {
                return Err(CaseError::MissingBus { what: "load".into(), bus: l.bus });
            }
        }
        let mut ids = HashSet::new();
        let mut machine_buses = HashSet::new();
        for m in &self.machines {
            if !known(m.bus) {
                return Err(CaseError::MissingBus { what: format!("machine {}", m.id), bus: m.bus });
            }
            if !ids.insert(m.id.as_str()) {
                return Err(CaseError::Invalid(format!("duplicate machine id {}", m.id)));
            }
            if !machine_buses.insert(m.bus) {
                return Err(CaseError::Invalid(format!("more than one machine at bus {}", m.bus)));
            }
            m.params
                .check()
                .map_err(|e| CaseError::Invalid(format!("machine {}: {e}", m.id)))?;
        }
        if self.machines.iter().filter(|m| m.star).count() > 1 {
            return Err(CaseError::Invalid("more than one starred machine".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    System,
    Bus,
    Branch,
    Load,
    Machine,
}

fn num(tok: &str, line: usize, field: &str) -> Result<f64, CaseError> {
    let v: f64 = tok
        .parse()
        .map_err(|_| perr(line, format!("{field}: cannot parse '{tok}' as a number")))?;
    if !v.is_finite() {
        return Err(perr(line, format!("{field}: non-finite value")));
    }
    Ok(v)
}

fn int(tok: &str, line: usize, field: &str) -> Result<usize, CaseError> {
    tok.parse()
        .map_err(|_| perr(line, format!("{field}: cannot parse '{tok}' as a bus id")))
}

fn expect_cols(toks: &[&str], n: usize, line: usize, section: &str) -> Result<(), CaseError> {
    if toks.len() != n {
        return Err(perr(
            line,
            format!("[{section}] record needs {n} fields, found {}", toks.len()),
        ));
    }
    Ok(())
}

/// Parses the sectioned case format (`[system]`, `[bus]`, `[branch]`,
/// `[load]`, `[machine]`). `#` starts a comment.
pub fn parse_case(text: &str) -> Result<NetworkCase, CaseError> {
    let mut section = Section::None;
    let mut name = String::from("case");
    let mut base_mva = 100.0;
    let mut base_freq = 60.0;
    let mut buses: BTreeMap<usize, BusRecord> = BTreeMap::new();
    let mut branches = Vec::new();
    let mut loads = Vec::new();
    let mut machines = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if content.starts_with('[') {
            section = match content {
                "[system]" => Section::System,
                "[bus]" => Section::Bus,
                "[branch]" => Section::Branch,
                "[load]" => Section::Load,
                "[machine]" => Section::Machine,
                other => return Err(perr(line, format!("unknown section {other}"))),
            };
            continue;
        }
        let toks: Vec<&str> = content.split_whitespace().collect();
        match section {
            Section::None => return Err(perr(line, "record outside of any section")),
            Section::System => {
                expect_cols(&toks, 2, line, "system")?;
                match toks[0] {
                    "name" => name = toks[1].to_string(),
                    "base_mva" => base_mva = num(toks[1], line, "base_mva")?,
                    "base_freq" => base_freq = num(toks[1], line, "base_freq")?,
                    k => return Err(perr(line, format!("unknown system key {k}"))),
                }
            }
            Section::Bus => {
                expect_cols(&toks, 4, line, "bus")?;
                let id = int(toks[0], line, "id")?;
                let rec = BusRecord {
                    id,
                    v_set: num(toks[1], line, "v_set")?,
                    g_shunt: num(toks[2], line, "g_shunt")?,
                    b_shunt: num(toks[3], line, "b_shunt")?,
                };
                if rec.v_set <= 0.0 {
                    return Err(perr(line, "v_set must be positive"));
                }
                if buses.insert(id, rec).is_some() {
                    return Err(perr(line, format!("duplicate bus id {id}")));
                }
            }
            Section::Branch => {
                expect_cols(&toks, 6, line, "branch")?;
                branches.push(BranchRecord {
                    from_bus: int(toks[0], line, "from")?,
                    to_bus: int(toks[1], line, "to")?,
                    series_r: num(toks[2], line, "r")?,
                    series_x: num(toks[3], line, "x")?,
                    shunt_b: num(toks[4], line, "b")?,
                    tap_ratio: num(toks[5], line, "tap")?,
                });
            }
            Section::Load => {
                expect_cols(&toks, 3, line, "load")?;
                loads.push(LoadRecord {
                    bus: int(toks[0], line, "bus")?,
                    p: num(toks[1], line, "p")?,
                    q: num(toks[2], line, "q")?,
                });
            }
            Section::Machine => {
                expect_cols(&toks, 15, line, "machine")?;
                let kind = match toks[2] {
                    "generator" => MachineKind::Generator,
                    "condenser" => MachineKind::Condenser,
                    k => return Err(perr(line, format!("unknown machine kind {k}"))),
                };
                let star = match toks[3] {
                    "0" => false,
                    "1" => true,
                    s => return Err(perr(line, format!("star flag must be 0 or 1, got {s}"))),
                };
                let model = match toks[4] {
                    "two_axis" => MachineModel::TwoAxis,
                    "simplified" => MachineModel::Simplified,
                    m => return Err(perr(line, format!("unknown machine model {m}"))),
                };
                let p_gen = num(toks[5], line, "p_gen")?;
                let f = |k: usize, n: &str| num(toks[k], line, n);
                let params = MachineParams {
                    h: f(6, "H")?,
                    d: f(7, "D")?,
                    xd: f(8, "Xd")?,
                    xd_p: f(9, "Xd'")?,
                    xq: f(10, "Xq")?,
                    xq_p: f(11, "Xq'")?,
                    rs: f(12, "Rs")?,
                    td0_p: f(13, "T'do")?,
                    tq0_p: f(14, "T'qo")?,
                    tm: p_gen,
                    efd: 0.0,
                    model,
                }
                .normalized();
                params
                    .check()
                    .map_err(|e| perr(line, format!("machine {}: {e}", toks[0])))?;
                machines.push(MachineSpec {
                    id: toks[0].to_string(),
                    bus: int(toks[1], line, "bus")?,
                    kind,
                    p_gen: if kind == MachineKind::Condenser { 0.0 } else { p_gen },
                    star,
                    params,
                });
            }
        }
    }

    let case = NetworkCase {
        name,
        base_mva,
        base_freq,
        buses: buses.into_values().collect(),
        branches,
        loads,
        machines,
    };
    case.validate()?;
    Ok(case)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases;

    #[test]
    fn shipped_nine_bus_layout() {
        let c = parse_case(cases::IEEE9).unwrap();
        assert_eq!(c.n_bus(), 9);
        assert_eq!(c.machines.len(), 3);
        assert_eq!(c.loads.len(), 3);
        assert_eq!(c.branches.len(), 9);
        let buses: Vec<usize> = c.machines.iter().map(|m| m.bus).collect();
        assert_eq!(buses, vec![1, 2, 3]);
        assert_eq!(c.machines[c.star_machine().unwrap()].bus, 3);
        assert_eq!(c.base_freq, 60.0);
    }

    #[test]
    fn shipped_fourteen_bus_layout() {
        let c = parse_case(cases::IEEE14).unwrap();
        assert_eq!(c.n_bus(), 14);
        let buses: Vec<usize> = c.machines.iter().map(|m| m.bus).collect();
        assert_eq!(buses, vec![1, 2, 3, 6, 8]);
        assert_eq!(c.loads.len(), 11);
        assert_eq!(c.branches.len(), 20);
        assert_eq!(c.machines[c.star_machine().unwrap()].bus, 2);
        let sync = c.machines.iter().filter(|m| m.kind == MachineKind::Condenser).count();
        assert_eq!(sync, 3);
    }

    #[test]
    fn shipped_thirty_bus_layout() {
        let c = parse_case(cases::IEEE30).unwrap();
        assert_eq!(c.n_bus(), 30);
        let buses: Vec<usize> = c.machines.iter().map(|m| m.bus).collect();
        assert_eq!(buses, vec![1, 2, 5, 8, 11, 13]);
        assert_eq!(c.branches.len(), 41);
        // Bus-data load records; the two bus shunts (10, 24) live on the bus rows.
        assert_eq!(c.loads.len(), 21);
        assert_eq!(c.machines[c.star_machine().unwrap()].bus, 2);
    }

    #[test]
    fn branch_to_missing_bus_is_rejected() {
        let text = "[bus]\n1 1.0 0 0\n2 1.0 0 0\n[branch]\n1 7 0 0.1 0 1\n";
        assert_eq!(
            parse_case(text),
            Err(CaseError::MissingBus { what: "branch 1-7".into(), bus: 7 })
        );
    }

    #[test]
    fn parse_error_carries_line_number() {
        let text = "[bus]\n1 1.0 0 0\n2 abc 0 0\n";
        match parse_case(text) {
            Err(CaseError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = "[bus]\n1 1.0 0\n";
        assert!(matches!(parse_case(text), Err(CaseError::Parse { line: 2, .. })));
        assert!(matches!(parse_case("[gen]\n"), Err(CaseError::Parse { line: 1, .. })));
    }

    #[test]
    fn round_trip_of_shipped_cases() {
        for text in [cases::IEEE9, cases::IEEE14, cases::IEEE30] {
            let c = parse_case(text).unwrap();
            let again = parse_case(&c.to_case_string()).unwrap();
            assert_eq!(c, again);
        }
    }

    #[test]
    fn simplified_machine_forces_equal_transient_reactances() {
        let c = parse_case(cases::IEEE9).unwrap();
        for m in &c.machines {
            if m.params.model == MachineModel::Simplified {
                assert_eq!(m.params.xq_p, m.params.xd_p);
            }
        }
    }
}
