//! Microgrid data model, per-unit conversion, case-file ingestion and the
//! builtin modified 33-bus feeder.
//!
//! Everything inside a [`Network`] is per-unit on `s_base` (power) and
//! `v_base_kv` (voltage). Case files carry MW / MVAr / MWh / ohm / ampere
//! values and are converted on load; [`Network::to_case_file`] converts back.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stochastic::{DeviceModel, PvCurve, RandomDevice, WtCurve};

/// Identifier accepted by [`load_case`] for the shipped 33-bus microgrid.
pub const IEEE33_MODIFIED: &str = "ieee33-modified";

const IEEE33_MODIFIED_JSON: &str = include_str!("../data/ieee33_modified.json");

const NORM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BusKind {
    /// Point of common coupling. Modeled as a PQ bus whose load absorbs the export.
    Pcc,
    Pq,
    Pv,
    Slack,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    pub base_load_p: f64,
    pub base_load_q: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Voltage setpoint, used on SLACK and PV buses only.
    pub v_set: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from_bus: usize,
    pub to_bus: usize,
    pub r: f64,
    pub x: f64,
    /// `None` means no thermal limit.
    pub i_max: Option<f64>,
}

impl Branch {
    pub fn admittance(&self) -> Complex64 {
        Complex64::new(1.0, 0.0) / Complex64::new(self.r, self.x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub id: String,
    pub bus: usize,
    /// Base-case active output. Ignored for generators on SLACK buses.
    pub p_set: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub power_factor: f64,
    pub dispatchable: bool,
}

impl Generator {
    /// Q/P ratio implied by the power factor.
    pub fn q_ratio(&self) -> f64 {
        q_ratio(self.power_factor)
    }
}

pub(crate) fn q_ratio(power_factor: f64) -> f64 {
    power_factor.acos().tan()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BessUnit {
    pub id: String,
    pub bus: usize,
    /// Charging limit, `p_min <= 0`.
    pub p_min: f64,
    /// Discharging limit, `p_max >= 0`.
    pub p_max: f64,
    /// Energy capacity in per-unit hours.
    pub capacity: f64,
    /// State of charge in per-unit hours.
    pub soc: f64,
}

/// Per-bus increments `(ΔP_G, ΔP_L, ΔQ_L)` that define the transfer direction.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DirectionEntry {
    pub dp_gen: f64,
    pub dp_load: f64,
    pub dq_load: f64,
}

/// Direction of power transfer variation, indexed by bus position.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferDirection {
    entries: Vec<DirectionEntry>,
}

impl TransferDirection {
    pub fn entries(&self) -> &[DirectionEntry] {
        &self.entries
    }

    pub fn entry(&self, pos: usize) -> DirectionEntry {
        self.entries[pos]
    }

    /// Same direction with every component multiplied by `k`.
    pub fn scaled(&self, k: f64) -> TransferDirection {
        TransferDirection {
            entries: self
                .entries
                .iter()
                .map(|e| DirectionEntry {
                    dp_gen: e.dp_gen * k,
                    dp_load: e.dp_load * k,
                    dq_load: e.dq_load * k,
                })
                .collect(),
        }
    }

    /// 2-norm of the active/reactive block at bus position `pos`.
    pub fn block_norm(&self, pos: usize) -> f64 {
        let e = self.entries[pos];
        (e.dp_gen - e.dp_load).hypot(e.dq_load)
    }
}

/// Nodal admittance matrix stored as a diagonal plus per-row off-diagonal lists.
#[derive(Debug, Clone)]
pub struct Admittance {
    pub diag: Vec<Complex64>,
    pub off: Vec<Vec<(usize, Complex64)>>,
}

impl Admittance {
    fn build(n: usize, branches: &[Branch], pos: &HashMap<usize, usize>) -> Admittance {
        let mut diag = vec![Complex64::new(0.0, 0.0); n];
        let mut off: Vec<BTreeMap<usize, Complex64>> = vec![BTreeMap::new(); n];
        for br in branches {
            let (i, j) = (pos[&br.from_bus], pos[&br.to_bus]);
            let y = br.admittance();
            diag[i] += y;
            diag[j] += y;
            *off[i].entry(j).or_default() -= y;
            *off[j].entry(i).or_default() -= y;
        }
        Admittance {
            diag,
            off: off.into_iter().map(|m| m.into_iter().collect()).collect(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        if i == j {
            return self.diag[i];
        }
        self.off[i]
            .iter()
            .find(|(k, _)| *k == j)
            .map(|(_, y)| *y)
            .unwrap_or_default()
    }
}

/// Validated, immutable microgrid description.
#[derive(Debug, Clone)]
pub struct Network {
    pub name: String,
    pub description: String,
    pub s_base: f64,
    pub v_base_kv: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub bess_units: Vec<BessUnit>,
    pub random_devices: Vec<RandomDevice>,
    direction: TransferDirection,
    pos: HashMap<usize, usize>,
    ybus: Admittance,
    slack: usize,
    pcc: usize,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.description == other.description
            && self.s_base == other.s_base
            && self.v_base_kv == other.v_base_kv
            && self.buses == other.buses
            && self.branches == other.branches
            && self.generators == other.generators
            && self.bess_units == other.bess_units
            && self.random_devices == other.random_devices
            && self.direction == other.direction
    }
}

/// Raw parts of a network in per-unit, validated by [`Network::new`].
#[derive(Debug, Clone, Default)]
pub struct NetworkParts {
    pub name: String,
    pub description: String,
    pub s_base: f64,
    pub v_base_kv: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub bess_units: Vec<BessUnit>,
    pub random_devices: Vec<RandomDevice>,
    /// Buses whose dispatchable generators follow the transfer direction.
    /// `None` dispatches every dispatchable generator bus.
    pub dispatch_buses: Option<Vec<usize>>,
}

impl Network {
    pub fn new(parts: NetworkParts) -> Result<Network> {
        let NetworkParts {
            name,
            description,
            s_base,
            v_base_kv,
            buses,
            branches,
            generators,
            bess_units,
            random_devices,
            dispatch_buses,
        } = parts;

        if !(s_base > 0.0 && s_base.is_finite()) {
            return Err(Error::Validation(format!("s_base must be positive, got {s_base}")));
        }
        if !(v_base_kv > 0.0 && v_base_kv.is_finite()) {
            return Err(Error::Validation(format!(
                "v_base_kv must be positive, got {v_base_kv}"
            )));
        }
        if buses.is_empty() {
            return Err(Error::Validation("network has no buses".into()));
        }

        let mut pos = HashMap::with_capacity(buses.len());
        for (k, bus) in buses.iter().enumerate() {
            if pos.insert(bus.id, k).is_some() {
                return Err(Error::Validation(format!("duplicate bus id {}", bus.id)));
            }
            validate_bus(bus)?;
        }

        let slacks: Vec<_> = buses.iter().filter(|b| b.kind == BusKind::Slack).collect();
        if slacks.len() != 1 {
            return Err(Error::Validation(format!(
                "expected exactly one SLACK bus, found {}",
                slacks.len()
            )));
        }
        let pccs: Vec<_> = buses.iter().filter(|b| b.kind == BusKind::Pcc).collect();
        if pccs.len() != 1 {
            return Err(Error::Validation(format!(
                "expected exactly one PCC bus, found {}",
                pccs.len()
            )));
        }
        if pccs[0].id != 1 {
            return Err(Error::Validation(format!(
                "the PCC must be bus 1, found bus {}",
                pccs[0].id
            )));
        }
        let slack = pos[&slacks[0].id];
        let pcc = pos[&1];

        let lookup = |what: &str, id: usize| -> Result<usize> {
            pos.get(&id)
                .copied()
                .ok_or_else(|| Error::Validation(format!("{what} references unknown bus {id}")))
        };

        for (k, br) in branches.iter().enumerate() {
            let name = format!("branch {k} ({}-{})", br.from_bus, br.to_bus);
            lookup(&name, br.from_bus)?;
            lookup(&name, br.to_bus)?;
            if br.from_bus == br.to_bus {
                return Err(Error::Validation(format!("{name} is a self loop")));
            }
            if !(br.r >= 0.0) || !br.x.is_finite() {
                return Err(Error::Validation(format!("{name} has invalid impedance")));
            }
            if br.r == 0.0 && br.x == 0.0 {
                return Err(Error::Validation(format!("{name} has zero impedance")));
            }
            if let Some(i_max) = br.i_max {
                if !(i_max > 0.0) {
                    return Err(Error::Validation(format!("{name} has non-positive i_max")));
                }
            }
        }

        let mut gens_at_bus: HashMap<usize, usize> = HashMap::new();
        for g in &generators {
            let name = format!("generator {}", g.id);
            let p = lookup(&name, g.bus)?;
            if !(g.p_min <= g.p_max) {
                return Err(Error::Validation(format!("{name}: p_min > p_max")));
            }
            if !(g.q_min <= g.q_max) {
                return Err(Error::Validation(format!("{name}: q_min > q_max")));
            }
            if !(g.power_factor > 0.0 && g.power_factor <= 1.0) {
                return Err(Error::Validation(format!(
                    "{name}: power factor {} outside (0, 1]",
                    g.power_factor
                )));
            }
            *gens_at_bus.entry(p).or_default() += 1;
        }
        for (&p, &count) in &gens_at_bus {
            if matches!(buses[p].kind, BusKind::Slack | BusKind::Pv) && count > 1 {
                return Err(Error::Validation(format!(
                    "bus {} is voltage-controlled and hosts {count} generators (at most one allowed)",
                    buses[p].id
                )));
            }
        }
        for b in &buses {
            if b.kind == BusKind::Pv && !gens_at_bus.contains_key(&pos[&b.id]) {
                return Err(Error::Validation(format!("PV bus {} hosts no generator", b.id)));
            }
        }

        for u in &bess_units {
            let name = format!("BESS {}", u.id);
            lookup(&name, u.bus)?;
            if !(u.p_min <= 0.0 && 0.0 <= u.p_max) {
                return Err(Error::Validation(format!("{name}: need p_min <= 0 <= p_max")));
            }
            if !(u.capacity >= 0.0 && u.soc >= 0.0 && u.soc <= u.capacity) {
                return Err(Error::Validation(format!("{name}: need 0 <= soc <= capacity")));
            }
        }

        let mut device_ids = HashMap::new();
        for d in &random_devices {
            lookup(&format!("device {}", d.id), d.bus)?;
            d.validate()?;
            if device_ids.insert(d.id.clone(), ()).is_some() {
                return Err(Error::Validation(format!("duplicate device id {}", d.id)));
            }
        }

        check_connected(buses.len(), &branches, &pos)?;
        let ybus = Admittance::build(buses.len(), &branches, &pos);

        let mut net = Network {
            name,
            description,
            s_base,
            v_base_kv,
            direction: TransferDirection {
                entries: vec![DirectionEntry::default(); buses.len()],
            },
            buses,
            branches,
            generators,
            bess_units,
            random_devices,
            pos,
            ybus,
            slack,
            pcc,
        };

        let dispatch = match dispatch_buses {
            Some(ids) => ids,
            None => net.dispatchable_buses(),
        };
        net.direction = if dispatch.is_empty() {
            pcc_only_direction(&net)
        } else {
            build_direction(&net, &dispatch)?
        };
        Ok(net)
    }

    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    /// Position of bus `id` in `buses`.
    pub fn bus_pos(&self, id: usize) -> Option<usize> {
        self.pos.get(&id).copied()
    }

    pub(crate) fn pos_of(&self, id: usize) -> usize {
        self.pos[&id]
    }

    pub fn slack_pos(&self) -> usize {
        self.slack
    }

    pub fn pcc_pos(&self) -> usize {
        self.pcc
    }

    pub fn ybus(&self) -> &Admittance {
        &self.ybus
    }

    pub fn direction(&self) -> &TransferDirection {
        &self.direction
    }

    /// Copy of this network with another transfer direction.
    ///
    /// Only dispatchable-generator buses may carry `ΔP_G`; the PCC block must be
    /// nonzero. Directions from [`build_direction`] also have a unit PCC block.
    pub fn with_direction(&self, direction: TransferDirection) -> Result<Network> {
        if direction.entries.len() != self.n_bus() {
            return Err(Error::Dimension {
                expected: self.n_bus(),
                got: direction.entries.len(),
            });
        }
        for (k, e) in direction.entries.iter().enumerate() {
            if e.dp_gen != 0.0 && !self.has_dispatchable_gen(k) {
                return Err(Error::Validation(format!(
                    "bus {} carries ΔP_G but hosts no dispatchable generator",
                    self.buses[k].id
                )));
            }
        }
        if direction.block_norm(self.pcc) == 0.0 {
            return Err(Error::Validation("PCC direction block is zero".into()));
        }
        let mut net = self.clone();
        net.direction = direction;
        Ok(net)
    }

    /// Copy of this network with a different set of BESS units.
    pub fn with_bess(&self, bess_units: Vec<BessUnit>) -> Result<Network> {
        for u in &bess_units {
            if self.bus_pos(u.bus).is_none() {
                return Err(Error::Validation(format!(
                    "BESS {} references unknown bus {}",
                    u.id, u.bus
                )));
            }
        }
        let mut net = self.clone();
        net.bess_units = bess_units;
        Ok(net)
    }

    fn has_dispatchable_gen(&self, pos: usize) -> bool {
        self.generators
            .iter()
            .any(|g| g.dispatchable && self.pos[&g.bus] == pos)
    }

    fn dispatchable_buses(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self
            .generators
            .iter()
            .filter(|g| g.dispatchable)
            .map(|g| g.bus)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Bus positions adjacent to each bus.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_bus()];
        for br in &self.branches {
            let (i, j) = (self.pos[&br.from_bus], self.pos[&br.to_bus]);
            adj[i].push(j);
            adj[j].push(i);
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        adj
    }

    pub fn is_radial(&self) -> bool {
        self.branches.len() + 1 == self.n_bus()
    }

    pub fn to_case_file(&self) -> CaseFile {
        let s = self.s_base;
        let zb = self.z_base();
        let ib = self.i_base_amps();
        let dispatch: Vec<usize> = self
            .direction
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.dp_gen != 0.0)
            .map(|(k, _)| self.buses[k].id)
            .collect();
        CaseFile {
            name: self.name.clone(),
            description: self.description.clone(),
            s_base_mva: s,
            v_base_kv: self.v_base_kv,
            buses: self
                .buses
                .iter()
                .map(|b| CaseBus {
                    id: b.id,
                    kind: b.kind,
                    base_load_p: b.base_load_p * s,
                    base_load_q: b.base_load_q * s,
                    v_min: b.v_min,
                    v_max: b.v_max,
                    v_set: Some(b.v_set),
                })
                .collect(),
            branches: self
                .branches
                .iter()
                .map(|br| CaseBranch {
                    from_bus: br.from_bus,
                    to_bus: br.to_bus,
                    r: br.r * zb,
                    x: br.x * zb,
                    i_max: br.i_max.map(|i| i * ib),
                })
                .collect(),
            generators: self
                .generators
                .iter()
                .map(|g| CaseGenerator {
                    id: Some(g.id.clone()),
                    bus: g.bus,
                    p_set: g.p_set * s,
                    p_min: g.p_min * s,
                    p_max: g.p_max * s,
                    q_min: g.q_min * s,
                    q_max: g.q_max * s,
                    power_factor: g.power_factor,
                    dispatchable: g.dispatchable,
                })
                .collect(),
            bess: self
                .bess_units
                .iter()
                .map(|u| CaseBess {
                    id: Some(u.id.clone()),
                    bus: u.bus,
                    p_min: u.p_min * s,
                    p_max: u.p_max * s,
                    capacity: u.capacity * s,
                    soc: u.soc * s,
                })
                .collect(),
            random_devices: self
                .random_devices
                .iter()
                .map(|d| CaseDevice::from_device(d, s))
                .collect(),
            dispatch_buses: Some(dispatch),
        }
    }

    pub fn z_base(&self) -> f64 {
        self.v_base_kv * self.v_base_kv / self.s_base
    }

    /// Base current in amperes.
    pub fn i_base_amps(&self) -> f64 {
        self.s_base * 1e3 / (3f64.sqrt() * self.v_base_kv)
    }
}

fn validate_bus(bus: &Bus) -> Result<()> {
    let name = format!("bus {}", bus.id);
    if !(bus.v_min > 0.0) {
        return Err(Error::Validation(format!("{name}: v_min must be positive")));
    }
    if !(bus.v_min < bus.v_max) {
        return Err(Error::Validation(format!(
            "{name}: v_min {} >= v_max {}",
            bus.v_min, bus.v_max
        )));
    }
    if !(bus.v_set > 0.0) {
        return Err(Error::Validation(format!("{name}: v_set must be positive")));
    }
    if !bus.base_load_p.is_finite() || !bus.base_load_q.is_finite() {
        return Err(Error::Validation(format!("{name}: non-finite load")));
    }
    Ok(())
}

fn check_connected(n: usize, branches: &[Branch], pos: &HashMap<usize, usize>) -> Result<()> {
    let mut adj = vec![Vec::new(); n];
    for br in branches {
        let (i, j) = (pos[&br.from_bus], pos[&br.to_bus]);
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(i) = queue.pop_front() {
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    match seen.iter().position(|s| !s) {
        Some(k) => Err(Error::Validation(format!(
            "network is disconnected: bus at position {k} is unreachable"
        ))),
        None => Ok(()),
    }
}

fn pcc_only_direction(net: &Network) -> TransferDirection {
    let mut entries = vec![DirectionEntry::default(); net.n_bus()];
    entries[net.pcc].dp_load = 1.0;
    TransferDirection { entries }
}

/// Transfer direction that exports through the PCC and ramps the generators
/// on `dispatch_buses` by equal shares.
///
/// The PCC block is `(−ΔP_L, −ΔQ_L) = (−1, 0)` and every dispatch bus gets
/// `ΔP_G = 1 / |dispatch_buses|`, so the generation increase matches the export.
pub fn build_direction(net: &Network, dispatch_buses: &[usize]) -> Result<TransferDirection> {
    if dispatch_buses.is_empty() {
        return Err(Error::InvalidArgument("dispatch bus set is empty".into()));
    }
    let mut ids = dispatch_buses.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let share = 1.0 / ids.len() as f64;
    let mut entries = vec![DirectionEntry::default(); net.n_bus()];
    for id in ids {
        let p = net
            .bus_pos(id)
            .ok_or_else(|| Error::InvalidArgument(format!("dispatch bus {id} does not exist")))?;
        if !net.has_dispatchable_gen(p) {
            return Err(Error::InvalidArgument(format!(
                "dispatch bus {id} hosts no dispatchable generator"
            )));
        }
        entries[p].dp_gen = share;
    }
    entries[net.pcc].dp_load = 1.0;
    entries[net.pcc].dq_load = 0.0;
    let dir = TransferDirection { entries };
    debug_assert!((dir.block_norm(net.pcc) - 1.0).abs() <= NORM_TOL);
    Ok(dir)
}

// ---------------------------------------------------------------------------
// Case file schema
// ---------------------------------------------------------------------------

/// On-disk case description in physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseFile {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub s_base_mva: f64,
    pub v_base_kv: f64,
    pub buses: Vec<CaseBus>,
    #[serde(default)]
    pub branches: Vec<CaseBranch>,
    #[serde(default)]
    pub generators: Vec<CaseGenerator>,
    #[serde(default)]
    pub bess: Vec<CaseBess>,
    #[serde(default)]
    pub random_devices: Vec<CaseDevice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dispatch_buses: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseBus {
    pub id: usize,
    pub kind: BusKind,
    /// MW
    #[serde(default)]
    pub base_load_p: f64,
    /// MVAr
    #[serde(default)]
    pub base_load_q: f64,
    pub v_min: f64,
    pub v_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_set: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseBranch {
    pub from_bus: usize,
    pub to_bus: usize,
    /// ohm
    pub r: f64,
    /// ohm
    pub x: f64,
    /// A; absent or null for no limit.
    #[serde(default)]
    pub i_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseGenerator {
    #[serde(default)]
    pub id: Option<String>,
    pub bus: usize,
    #[serde(default)]
    pub p_set: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    #[serde(default = "unit_pf")]
    pub power_factor: f64,
    #[serde(default)]
    pub dispatchable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseBess {
    #[serde(default)]
    pub id: Option<String>,
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    /// MWh
    pub capacity: f64,
    /// MWh
    pub soc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseDeviceKind {
    PV,
    WT,
    EV,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseDevice {
    pub id: String,
    #[serde(rename = "type")]
    pub kind: CaseDeviceKind,
    pub bus: usize,
    /// MW
    pub rating: f64,
    #[serde(default = "unit_pf")]
    pub power_factor: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_set: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_in: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_rated: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_out: Option<f64>,
}

fn unit_pf() -> f64 {
    1.0
}

impl CaseDevice {
    fn from_device(d: &RandomDevice, s_base: f64) -> CaseDevice {
        let mut out = CaseDevice {
            id: d.id.clone(),
            kind: CaseDeviceKind::EV,
            bus: d.bus,
            rating: d.rating * s_base,
            power_factor: d.power_factor,
            g_set: None,
            g_std: None,
            v_in: None,
            v_rated: None,
            v_out: None,
        };
        match d.model {
            DeviceModel::Pv(c) => {
                out.kind = CaseDeviceKind::PV;
                out.g_set = Some(c.g_set);
                out.g_std = Some(c.g_std);
            }
            DeviceModel::Wt(c) => {
                out.kind = CaseDeviceKind::WT;
                out.v_in = Some(c.v_in);
                out.v_rated = Some(c.v_rated);
                out.v_out = Some(c.v_out);
            }
            DeviceModel::Ev => {}
        }
        out
    }

    fn to_device(&self, s_base: f64) -> RandomDevice {
        let model = match self.kind {
            CaseDeviceKind::PV => {
                let d = PvCurve::default();
                DeviceModel::Pv(PvCurve {
                    g_set: self.g_set.unwrap_or(d.g_set),
                    g_std: self.g_std.unwrap_or(d.g_std),
                })
            }
            CaseDeviceKind::WT => {
                let d = WtCurve::default();
                DeviceModel::Wt(WtCurve {
                    v_in: self.v_in.unwrap_or(d.v_in),
                    v_rated: self.v_rated.unwrap_or(d.v_rated),
                    v_out: self.v_out.unwrap_or(d.v_out),
                })
            }
            CaseDeviceKind::EV => DeviceModel::Ev,
        };
        RandomDevice {
            id: self.id.clone(),
            bus: self.bus,
            rating: self.rating / s_base,
            power_factor: self.power_factor,
            model,
        }
    }
}

impl CaseFile {
    pub fn parse(text: &str) -> Result<CaseFile> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("case file serializes")
    }

    /// Converts to per-unit and validates.
    pub fn into_network(self) -> Result<Network> {
        let s = self.s_base_mva;
        if !(s > 0.0) || !(self.v_base_kv > 0.0) {
            return Err(Error::Validation(
                "s_base_mva and v_base_kv must be positive".into(),
            ));
        }
        let zb = self.v_base_kv * self.v_base_kv / s;
        let ib = s * 1e3 / (3f64.sqrt() * self.v_base_kv);
        let parts = NetworkParts {
            name: self.name,
            description: self.description,
            s_base: s,
            v_base_kv: self.v_base_kv,
            buses: self
                .buses
                .iter()
                .map(|b| Bus {
                    id: b.id,
                    kind: b.kind,
                    base_load_p: b.base_load_p / s,
                    base_load_q: b.base_load_q / s,
                    v_min: b.v_min,
                    v_max: b.v_max,
                    v_set: b.v_set.unwrap_or(1.0),
                })
                .collect(),
            branches: self
                .branches
                .iter()
                .map(|br| Branch {
                    from_bus: br.from_bus,
                    to_bus: br.to_bus,
                    r: br.r / zb,
                    x: br.x / zb,
                    i_max: br.i_max.map(|i| i / ib),
                })
                .collect(),
            generators: self
                .generators
                .iter()
                .enumerate()
                .map(|(k, g)| Generator {
                    id: g.id.clone().unwrap_or_else(|| format!("G{}", k + 1)),
                    bus: g.bus,
                    p_set: g.p_set / s,
                    p_min: g.p_min / s,
                    p_max: g.p_max / s,
                    q_min: g.q_min / s,
                    q_max: g.q_max / s,
                    power_factor: g.power_factor,
                    dispatchable: g.dispatchable,
                })
                .collect(),
            bess_units: self
                .bess
                .iter()
                .enumerate()
                .map(|(k, u)| BessUnit {
                    id: u.id.clone().unwrap_or_else(|| format!("B{}", k + 1)),
                    bus: u.bus,
                    p_min: u.p_min / s,
                    p_max: u.p_max / s,
                    capacity: u.capacity / s,
                    soc: u.soc / s,
                })
                .collect(),
            random_devices: self.random_devices.iter().map(|d| d.to_device(s)).collect(),
            dispatch_buses: self.dispatch_buses,
        };
        Network::new(parts)
    }
}

/// Loads a case from a JSON file, or the builtin case when `path` is
/// [`IEEE33_MODIFIED`].
pub fn load_case(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    if path.as_os_str() == IEEE33_MODIFIED {
        return builtin_case(IEEE33_MODIFIED);
    }
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    CaseFile::parse(&text)?.into_network()
}

pub fn builtin_case(name: &str) -> Result<Network> {
    match name {
        IEEE33_MODIFIED => CaseFile::parse(IEEE33_MODIFIED_JSON)?.into_network(),
        other => Err(Error::InvalidArgument(format!("unknown builtin case {other}"))),
    }
}

// ---------------------------------------------------------------------------
// Radial topology helpers
// ---------------------------------------------------------------------------

/// Rooted view of a radial network, rooted at the PCC.
#[derive(Debug, Clone)]
pub struct RadialTree {
    /// Parent position of each bus, `None` for the root.
    pub parent: Vec<Option<usize>>,
    pub depth: Vec<usize>,
    /// Feeder index of each bus. The root shares feeder 0 with its first child.
    pub feeder: Vec<usize>,
    pub n_feeders: usize,
}

impl RadialTree {
    /// Feeders are built by walking down from the root: the child with the
    /// lowest bus id continues the parent's feeder, every other child starts a
    /// new one. On the 33-bus feeder this yields 1–18, 19–22, 23–25, 26–33.
    pub fn new(net: &Network) -> Result<RadialTree> {
        if !net.is_radial() {
            return Err(Error::Validation("network is not radial".into()));
        }
        let n = net.n_bus();
        let adj = net.adjacency();
        let root = net.pcc_pos();
        let mut parent = vec![None; n];
        let mut depth = vec![0; n];
        let mut feeder = vec![usize::MAX; n];
        let mut n_feeders = 1;
        feeder[root] = 0;
        let mut stack = vec![root];
        let mut seen = vec![false; n];
        seen[root] = true;
        while let Some(i) = stack.pop() {
            let mut children: Vec<usize> = adj[i].iter().copied().filter(|&j| !seen[j]).collect();
            children.sort_by_key(|&j| net.buses[j].id);
            for (k, &c) in children.iter().enumerate() {
                seen[c] = true;
                parent[c] = Some(i);
                depth[c] = depth[i] + 1;
                feeder[c] = if k == 0 {
                    feeder[i]
                } else {
                    n_feeders += 1;
                    n_feeders - 1
                };
            }
            // Push in reverse so the first child is explored first; feeder
            // numbering then follows depth-first order.
            for &c in children.iter().rev() {
                stack.push(c);
            }
        }
        Ok(RadialTree {
            parent,
            depth,
            feeder,
            n_feeders,
        })
    }

    /// Number of branches on the path between two buses.
    pub fn hops(&self, mut a: usize, mut b: usize) -> usize {
        let mut count = 0;
        while self.depth[a] > self.depth[b] {
            a = self.parent[a].expect("non-root has parent");
            count += 1;
        }
        while self.depth[b] > self.depth[a] {
            b = self.parent[b].expect("non-root has parent");
            count += 1;
        }
        while a != b {
            a = self.parent[a].expect("non-root has parent");
            b = self.parent[b].expect("non-root has parent");
            count += 2;
        }
        count
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_bus_json() -> &'static str {
        r#"{
            "s_base_mva": 100.0,
            "v_base_kv": 12.66,
            "buses": [
                {"id": 1, "kind": "PCC", "base_load_p": 1.0, "base_load_q": 0.5, "v_min": 0.9, "v_max": 1.1},
                {"id": 2, "kind": "SLACK", "v_min": 0.9, "v_max": 1.1}
            ],
            "branches": [{"from_bus": 1, "to_bus": 2, "r": 0.5, "x": 0.4}]
        }"#
    }

    #[test]
    fn minimal_two_bus_case() {
        let net = CaseFile::parse(two_bus_json()).unwrap().into_network().unwrap();
        assert_eq!(net.n_bus(), 2);
        assert_eq!(net.branches.len(), 1);
        assert!((net.buses[0].base_load_p - 0.01).abs() < 1e-15);
        assert_eq!(net.slack_pos(), 1);
        // no dispatchable generators: PCC-only direction
        assert_eq!(net.direction().entry(0).dp_load, 1.0);
    }

    #[test]
    fn inverted_voltage_limits_name_the_bus() {
        let text = two_bus_json().replace(
            r#""id": 2, "kind": "SLACK", "v_min": 0.9, "v_max": 1.1"#,
            r#""id": 2, "kind": "SLACK", "v_min": 1.1, "v_max": 1.1"#,
        );
        let err = CaseFile::parse(&text).unwrap().into_network().unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("bus 2")), "{err}");
    }

    #[test]
    fn malformed_json_is_a_parse_error() {
        assert!(matches!(CaseFile::parse("{\"buses\": ["), Err(Error::Parse(_))));
    }

    #[test]
    fn disconnected_and_duplicate_buses_rejected() {
        let text = two_bus_json().replace(
            r#""branches": [{"from_bus": 1, "to_bus": 2, "r": 0.5, "x": 0.4}]"#,
            r#""branches": []"#,
        );
        let err = CaseFile::parse(&text).unwrap().into_network().unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("disconnected")));

        let text = two_bus_json().replace(r#""id": 2, "kind": "SLACK""#, r#""id": 1, "kind": "SLACK""#);
        let err = CaseFile::parse(&text).unwrap().into_network().unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("duplicate bus id 1")));
    }

    #[test]
    fn builtin_case_inventory() {
        let net = load_case(IEEE33_MODIFIED).unwrap();
        assert_eq!(net.n_bus(), 33);
        assert_eq!(net.branches.len(), 32);
        assert!(net.is_radial());
        let count = |k: fn(&DeviceModel) -> bool| {
            net.random_devices.iter().filter(|d| k(&d.model)).count()
        };
        assert_eq!(count(|m| matches!(m, DeviceModel::Pv(_))), 4);
        assert_eq!(count(|m| matches!(m, DeviceModel::Wt(_))), 4);
        assert_eq!(count(|m| matches!(m, DeviceModel::Ev)), 4);
        assert_eq!(net.generators.iter().filter(|g| g.dispatchable).count(), 4);
        assert_eq!(net.bess_units.len(), 4);
        // four DGs dispatched with equal shares
        let shares: Vec<f64> = net
            .direction()
            .entries()
            .iter()
            .filter(|e| e.dp_gen != 0.0)
            .map(|e| e.dp_gen)
            .collect();
        assert_eq!(shares, vec![0.25; 4]);
        assert!((net.direction().block_norm(net.pcc_pos()) - 1.0).abs() < 1e-12);
        // 2 MW PV rating on a 100 MVA base
        let pv = &net.random_devices[0];
        assert!((pv.rating - 0.02).abs() < 1e-15);
    }

    #[test]
    fn feeders_of_the_33_bus_case() {
        let net = builtin_case(IEEE33_MODIFIED).unwrap();
        let tree = RadialTree::new(&net).unwrap();
        assert_eq!(tree.n_feeders, 4);
        let f = |id: usize| tree.feeder[net.pos_of(id)];
        assert_eq!(f(1), f(18));
        assert_eq!(f(19), f(22));
        assert_eq!(f(23), f(25));
        assert_eq!(f(26), f(33));
        assert_ne!(f(18), f(22));
        assert_ne!(f(22), f(25));
        assert_ne!(f(25), f(33));
        assert_eq!(tree.hops(net.pos_of(20), net.pos_of(21)), 1);
        assert_eq!(tree.hops(net.pos_of(18), net.pos_of(22)), 16 + 4);
    }

    #[test]
    fn direction_single_and_invalid_dispatch() {
        let net = builtin_case(IEEE33_MODIFIED).unwrap();
        let dg = net.generators.iter().find(|g| g.dispatchable).unwrap().bus;
        let dir = build_direction(&net, &[dg]).unwrap();
        let nonzero = dir.entries().iter().filter(|e| e.dp_gen != 0.0).count();
        assert_eq!(nonzero, 1);
        assert!((dir.block_norm(net.pcc_pos()) - 1.0).abs() < 1e-12);

        let load_bus = (2..=33)
            .find(|id| !net.generators.iter().any(|g| g.bus == *id))
            .unwrap();
        assert!(build_direction(&net, &[dg, load_bus]).is_err());
        assert!(build_direction(&net, &[]).is_err());
    }

    #[test]
    fn case_file_round_trip() {
        let net = builtin_case(IEEE33_MODIFIED).unwrap();
        let text = net.to_case_file().to_json();
        let back = CaseFile::parse(&text).unwrap().into_network().unwrap();
        assert_eq!(back.n_bus(), net.n_bus());
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(1.0);
        for (a, b) in net.branches.iter().zip(&back.branches) {
            assert_eq!((a.from_bus, a.to_bus), (b.from_bus, b.to_bus));
            assert!(close(a.r, b.r) && close(a.x, b.x));
            match (a.i_max, b.i_max) {
                (Some(x), Some(y)) => assert!(close(x, y)),
                (None, None) => {}
                _ => panic!("i_max mismatch"),
            }
        }
        for (a, b) in net.buses.iter().zip(&back.buses) {
            assert_eq!((a.id, a.kind), (b.id, b.kind));
            assert!(close(a.base_load_p, b.base_load_p) && close(a.base_load_q, b.base_load_q));
            assert_eq!((a.v_min, a.v_max, a.v_set), (b.v_min, b.v_max, b.v_set));
        }
        for (a, b) in net.generators.iter().zip(&back.generators) {
            assert_eq!(a.id, b.id);
            assert!(close(a.p_max, b.p_max) && close(a.p_set, b.p_set) && close(a.q_min, b.q_min));
        }
        for (a, b) in net.random_devices.iter().zip(&back.random_devices) {
            assert_eq!((&a.id, a.bus, a.model), (&b.id, b.bus, b.model));
            assert!(close(a.rating, b.rating));
        }
        for (a, b) in net.bess_units.iter().zip(&back.bess_units) {
            assert!(close(a.capacity, b.capacity) && close(a.soc, b.soc));
        }
        assert_eq!(net.direction(), back.direction());
    }
}
