//! Small networks with a known binding limit, plus a 33-bus realization.

use rsc_core::cpf::Binding;
use rsc_core::network::{Branch, Bus, BusKind, Generator, Network, NetworkParts};
use rsc_core::stochastic::DeviceKind;

pub fn bus(id: usize, kind: BusKind, v_min: f64, load: (f64, f64)) -> Bus {
    Bus {
        id,
        kind,
        base_load_p: load.0,
        base_load_q: load.1,
        v_min,
        v_max: 1.1,
        v_set: 1.0,
    }
}

pub fn line(from_bus: usize, to_bus: usize, r: f64, x: f64, i_max: Option<f64>) -> Branch {
    Branch {
        from_bus,
        to_bus,
        r,
        x,
        i_max,
    }
}

pub fn gen(id: &str, bus: usize, p_set: f64, p_max: f64, power_factor: f64, dispatchable: bool) -> Generator {
    Generator {
        id: id.into(),
        bus,
        p_set,
        p_min: 0.0,
        p_max,
        q_min: -10.0,
        q_max: 10.0,
        power_factor,
        dispatchable,
    }
}

pub fn network(buses: Vec<Bus>, branches: Vec<Branch>, generators: Vec<Generator>) -> Network {
    Network::new(NetworkParts {
        s_base: 10.0,
        v_base_kv: 12.66,
        buses,
        branches,
        generators,
        ..Default::default()
    })
    .unwrap()
}

pub struct CpfFixture {
    pub name: &'static str,
    pub net: Network,
    pub binding: fn(Binding) -> bool,
    /// Transfer limit known in closed form, per-unit.
    pub exact: Option<f64>,
}

/// Two-bus line from a stiff source with a PCC load: receiving voltage obeys
/// `V⁴ + (2(PR + QX) − 1)V² + (P² + Q²)|Z|² = 0`, solved for `P` at `v_min`.
fn two_bus_voltage() -> CpfFixture {
    let (r, x, p_load, q_load, v_min) = (0.03, 0.06, 0.1, 0.05, 0.95);
    let net = network(
        vec![
            bus(1, BusKind::Pcc, v_min, (p_load, q_load)),
            bus(2, BusKind::Slack, 0.5, (0.0, 0.0)),
        ],
        vec![line(1, 2, r, x, None)],
        vec![],
    );
    let z2 = r * r + x * x;
    let v2 = v_min * v_min;
    let c = v2 * v2 + (2.0 * q_load * x - 1.0) * v2 + q_load * q_load * z2;
    let b = 2.0 * r * v2;
    let p_total = (-b + (b * b - 4.0 * z2 * c).sqrt()) / (2.0 * z2);
    CpfFixture {
        name: "2-bus voltage",
        net,
        binding: |b| b == Binding::Voltage(0),
        exact: Some(p_total - p_load),
    }
}

fn three_bus_thermal() -> CpfFixture {
    CpfFixture {
        name: "3-bus thermal",
        net: network(
            vec![
                bus(1, BusKind::Pcc, 0.5, (0.05, 0.02)),
                bus(2, BusKind::Slack, 0.5, (0.0, 0.0)),
                bus(3, BusKind::Pq, 0.5, (0.2, 0.1)),
            ],
            vec![line(1, 2, 0.01, 0.02, Some(0.6)), line(2, 3, 0.01, 0.02, None)],
            vec![],
        ),
        binding: |b| b == Binding::Thermal(0),
        exact: None,
    }
}

/// Two dispatchable units share the ramp; the one with less headroom binds at
/// λ = 2 (p_max − p_set).
fn four_bus_generator() -> CpfFixture {
    CpfFixture {
        name: "4-bus generator",
        net: network(
            vec![
                bus(1, BusKind::Pcc, 0.5, (0.0, 0.0)),
                bus(2, BusKind::Slack, 0.5, (0.3, 0.1)),
                bus(3, BusKind::Pq, 0.5, (0.1, 0.05)),
                bus(4, BusKind::Pq, 0.5, (0.1, 0.05)),
            ],
            vec![
                line(1, 2, 0.002, 0.004, None),
                line(2, 3, 0.002, 0.004, None),
                line(3, 4, 0.002, 0.004, None),
            ],
            vec![
                gen("S", 2, 0.0, 10.0, 1.0, false),
                gen("D1", 3, 0.1, 0.25, 0.95, true),
                gen("D2", 4, 0.1, 0.4, 0.95, true),
            ],
        ),
        binding: |b| b == Binding::GenP(1),
        exact: Some(0.3),
    }
}

fn five_bus_meshed() -> CpfFixture {
    CpfFixture {
        name: "5-bus meshed",
        net: network(
            vec![
                bus(1, BusKind::Pcc, 0.9, (0.1, 0.05)),
                bus(2, BusKind::Slack, 0.5, (0.0, 0.0)),
                bus(3, BusKind::Pq, 0.9, (0.2, 0.1)),
                bus(4, BusKind::Pq, 0.9, (0.15, 0.05)),
                bus(5, BusKind::Pq, 0.9, (0.0, 0.0)),
            ],
            vec![
                line(2, 3, 0.02, 0.05, None),
                line(3, 4, 0.03, 0.06, None),
                line(4, 1, 0.02, 0.04, None),
                line(2, 5, 0.04, 0.08, None),
                line(5, 1, 0.03, 0.05, None),
            ],
            vec![gen("S", 2, 0.0, 10.0, 1.0, false), gen("D", 5, 0.1, 10.0, 0.9, true)],
        ),
        binding: |b| matches!(b, Binding::Voltage(_)),
        exact: None,
    }
}

fn six_bus_chain() -> CpfFixture {
    CpfFixture {
        name: "6-bus chain",
        net: network(
            vec![
                bus(1, BusKind::Pcc, 0.9, (0.05, 0.02)),
                bus(2, BusKind::Pq, 0.9, (0.05, 0.03)),
                bus(3, BusKind::Slack, 0.5, (0.0, 0.0)),
                bus(4, BusKind::Pq, 0.9, (0.08, 0.04)),
                bus(5, BusKind::Pq, 0.9, (0.06, 0.02)),
                bus(6, BusKind::Pq, 0.9, (0.04, 0.01)),
            ],
            vec![
                line(1, 2, 0.03, 0.04, None),
                line(2, 3, 0.03, 0.04, Some(2.0)),
                line(3, 4, 0.02, 0.03, None),
                line(4, 5, 0.02, 0.03, None),
                line(5, 6, 0.02, 0.03, None),
            ],
            vec![gen("S", 3, 0.0, 10.0, 1.0, false), gen("D", 6, 0.05, 1.0, 1.0, true)],
        ),
        binding: |b| b != Binding::LambdaCap && b != Binding::Nose,
        exact: None,
    }
}

/// A two-bus line without an effective voltage floor: the search ends at the
/// nose, `1 / (2(R + |Z|))` for a unity-power-factor transfer.
fn two_bus_nose() -> CpfFixture {
    let (r, x) = (0.05, 0.1);
    CpfFixture {
        name: "2-bus nose",
        net: network(
            vec![
                bus(1, BusKind::Pcc, 0.01, (0.0, 0.0)),
                bus(2, BusKind::Slack, 0.01, (0.0, 0.0)),
            ],
            vec![line(1, 2, r, x, None)],
            vec![],
        ),
        binding: |b| b == Binding::Nose,
        exact: Some(1.0 / (2.0 * (r + (r * r + x * x).sqrt()))),
    }
}

/// Every small network with a checked limit.
pub fn cpf_fixtures() -> Vec<CpfFixture> {
    vec![
        two_bus_voltage(),
        two_bus_nose(),
        three_bus_thermal(),
        four_bus_generator(),
        five_bus_meshed(),
        six_bus_chain(),
    ]
}

/// One mid-range realization of every random device of `net`: irradiance in
/// W/m², wind speed in m/s and EV charging in MW.
pub fn realization(net: &Network, irradiance: f64, wind: f64, ev_mw: f64) -> Vec<f64> {
    net.random_devices
        .iter()
        .map(|d| match d.kind() {
            DeviceKind::Pv => irradiance,
            DeviceKind::Wt => wind,
            DeviceKind::Ev => ev_mw,
        })
        .collect()
}
