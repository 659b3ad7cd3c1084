//! BESS smoothing of the dominant random inputs.
//!
//! Dominant devices are grouped by feeder, one battery per group cancels the
//! group's deviation from its expected net injection, and the commands are
//! limited by the battery's power rating and by the state-of-charge envelope
//! carried from slot to slot.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{BessUnit, Network, RadialTree};
use crate::stochastic::{device_powers, SampleSet};

/// Slack allowed on SOC bounds for accumulated rounding.
const SOC_EPS: f64 = 1e-12;

/// Devices smoothed by one battery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// Position in [`BessPlan::units`].
    pub unit: usize,
    /// Device positions in `Network::random_devices`, ascending.
    pub devices: Vec<usize>,
    pub feeder: usize,
    /// The battery did not exist in the case and was placed for this group.
    pub placed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BessPlan {
    /// Existing units followed by any newly placed ones.
    pub units: Vec<BessUnit>,
    pub assignments: Vec<Assignment>,
}

impl BessPlan {
    /// Copy of `net` carrying this plan's batteries.
    pub fn apply(&self, net: &Network) -> Result<Network> {
        net.with_bess(self.units.clone())
    }
}

fn template_unit(net: &Network) -> BessUnit {
    net.bess_units.first().cloned().unwrap_or(BessUnit {
        id: String::new(),
        bus: 0,
        p_min: -0.06,
        p_max: 0.06,
        capacity: 0.12,
        soc: 0.06,
    })
}

/// Groups dominant devices (positions in `Network::random_devices`) by
/// feeder and assigns one battery per group: the existing unit on that feeder
/// closest to the group's shallowest bus, or else a new unit at that bus
/// rated like the case's first battery.
pub fn aggregate_by_branch(net: &Network, dominant: &[usize]) -> Result<BessPlan> {
    let mut units = net.bess_units.clone();
    if dominant.is_empty() {
        return Ok(BessPlan {
            units,
            assignments: Vec::new(),
        });
    }
    let tree = RadialTree::new(net)?;
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &d in dominant {
        let dev = net.random_devices.get(d).ok_or_else(|| {
            Error::InvalidArgument(format!("dominant variable {d} is not a device"))
        })?;
        groups.entry(tree.feeder[net.pos_of(dev.bus)]).or_default().push(d);
    }
    let mut assignments = Vec::new();
    for (feeder, mut devices) in groups {
        devices.sort_unstable();
        devices.dedup();
        let anchor = devices
            .iter()
            .map(|&d| net.pos_of(net.random_devices[d].bus))
            .min_by_key(|&p| (tree.depth[p], net.buses[p].id))
            .expect("group is nonempty");
        let existing = net
            .bess_units
            .iter()
            .enumerate()
            .filter(|(_, u)| tree.feeder[net.pos_of(u.bus)] == feeder)
            .min_by_key(|(k, u)| (tree.hops(anchor, net.pos_of(u.bus)), *k))
            .map(|(k, _)| k);
        let (unit, placed) = match existing {
            Some(k) => (k, false),
            None => {
                let bus = net.buses[anchor].id;
                units.push(BessUnit {
                    id: format!("BESS@{bus}"),
                    bus,
                    ..template_unit(net)
                });
                (units.len() - 1, true)
            }
        };
        assignments.push(Assignment {
            unit,
            devices,
            feeder,
            placed,
        });
    }
    Ok(BessPlan { units, assignments })
}

/// Sample-mean active power of every device (per-unit) over a slot.
pub fn device_means(net: &Network, samples: &SampleSet) -> Result<Vec<f64>> {
    let mut sum = vec![0.0; net.random_devices.len()];
    for row in samples.rows() {
        for (s, p) in sum.iter_mut().zip(device_powers(net, row)?) {
            *s += p;
        }
    }
    let n = samples.n_rows() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

/// Unconstrained command that restores the group's expected net injection:
/// generation shortfall plus load excess, discharge positive.
pub fn smooth_target(net: &Network, devices: &[usize], powers: &[f64], means: &[f64]) -> f64 {
    devices
        .iter()
        .map(|&d| {
            let dev = &net.random_devices[d];
            if dev.is_generation() {
                means[d] - powers[d]
            } else {
                powers[d] - means[d]
            }
        })
        .sum()
}

/// Range of states of charge a battery may be in at the start of a slot
/// across all realizations of the earlier slots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SocWindow {
    pub lo: f64,
    pub hi: f64,
}

impl SocWindow {
    pub fn at(soc: f64) -> SocWindow {
        SocWindow { lo: soc, hi: soc }
    }

    /// Share of the headroom one slot may spend when `slots_left` slots,
    /// this one included, draw on it: the discharge room above 0 and the
    /// charge room below capacity are each split evenly, so a worst-case
    /// draw in every slot still fits.
    pub fn allowance(self, unit: &BessUnit, slots_left: usize) -> SocWindow {
        let k = slots_left.max(1) as f64;
        SocWindow {
            lo: self.lo / k,
            hi: unit.capacity - (unit.capacity - self.hi) / k,
        }
    }
}

/// Clips `target` to the unit's power limits and then so that the SOC stays
/// in `[0, capacity]` from anywhere in `window` after `dt` hours.
pub fn smooth_command(unit: &BessUnit, window: SocWindow, dt: f64, target: f64) -> f64 {
    let discharge = unit.p_max.min(window.lo / dt).max(0.0);
    let charge = unit.p_min.max(-(unit.capacity - window.hi) / dt).min(0.0);
    target.clamp(charge, discharge)
}

/// `SOC − P·dt` for an already limited command.
pub fn soc_update(unit: &BessUnit, soc: f64, command: f64, dt: f64) -> Result<f64> {
    let next = soc - command * dt;
    if next < -SOC_EPS || next > unit.capacity + SOC_EPS {
        return Err(Error::SocBounds {
            soc: next,
            capacity: unit.capacity,
        });
    }
    Ok(next.clamp(0.0, unit.capacity))
}

/// Command statistics of one battery over one slot's realizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitSlotSummary {
    pub bess_id: String,
    pub mean_command: f64,
    pub min_command: f64,
    pub max_command: f64,
    /// SOC after the slot under the mean command.
    pub soc_after: f64,
    pub window_after: SocWindow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotCommands {
    pub slot: String,
    /// `commands[row][unit]`, per-unit, discharge positive.
    pub commands: Vec<Vec<f64>>,
    pub summary: Vec<UnitSlotSummary>,
    pub windows_after: Vec<SocWindow>,
    pub nominal_after: Vec<f64>,
}

/// Per-realization commands of every battery in `plan` for one slot.
///
/// `windows` and `nominal` hold each unit's SOC envelope and mean-path SOC at
/// the slot start, and `slots_left` counts the slots (this one included) that
/// share the remaining headroom. Units without an assignment stay idle.
#[allow(clippy::too_many_arguments)]
pub fn slot_commands(
    net: &Network,
    plan: &BessPlan,
    samples: &SampleSet,
    means: &[f64],
    windows: &[SocWindow],
    nominal: &[f64],
    dt: f64,
    slots_left: usize,
) -> Result<SlotCommands> {
    let n_units = plan.units.len();
    if windows.len() != n_units || nominal.len() != n_units {
        return Err(Error::Dimension {
            expected: n_units,
            got: windows.len().min(nominal.len()),
        });
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("slot length must be positive, got {dt}")));
    }
    let allowed: Vec<SocWindow> = plan
        .units
        .iter()
        .zip(windows)
        .map(|(u, w)| w.allowance(u, slots_left))
        .collect();
    let commands = samples
        .rows()
        .map(|row| {
            let powers = device_powers(net, row)?;
            let mut cmd = vec![0.0; n_units];
            for a in &plan.assignments {
                let target = smooth_target(net, &a.devices, &powers, means);
                cmd[a.unit] = smooth_command(&plan.units[a.unit], allowed[a.unit], dt, target);
            }
            Ok(cmd)
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;

    let n = commands.len() as f64;
    let mut summary = Vec::with_capacity(n_units);
    let mut windows_after = Vec::with_capacity(n_units);
    let mut nominal_after = Vec::with_capacity(n_units);
    for (k, unit) in plan.units.iter().enumerate() {
        let col = commands.iter().map(|c| c[k]);
        let mean = col.clone().sum::<f64>() / n;
        let min = col.clone().fold(f64::INFINITY, f64::min);
        let max = col.fold(f64::NEG_INFINITY, f64::max);
        let window = SocWindow {
            lo: soc_update(unit, windows[k].lo, max, dt)?,
            hi: soc_update(unit, windows[k].hi, min, dt)?,
        };
        let soc_after = soc_update(unit, nominal[k], mean, dt)?;
        summary.push(UnitSlotSummary {
            bess_id: unit.id.clone(),
            mean_command: mean,
            min_command: min,
            max_command: max,
            soc_after,
            window_after: window,
        });
        windows_after.push(window);
        nominal_after.push(soc_after);
    }
    Ok(SlotCommands {
        slot: samples.time_slot.clone(),
        commands,
        summary,
        windows_after,
        nominal_after,
    })
}

/// Schedule CSV in MW / MWh: one row per slot and battery.
pub fn schedule_csv(slots: &[SlotCommands], s_base: f64) -> String {
    let mut out = String::from(
        "slot,bess_id,mean_command_mw,min_command_mw,max_command_mw,soc_after_mwh,soc_min_mwh,soc_max_mwh\n",
    );
    for s in slots {
        for u in &s.summary {
            writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                s.slot,
                u.bess_id,
                u.mean_command * s_base,
                u.min_command * s_base,
                u.max_command * s_base,
                u.soc_after * s_base,
                u.window_after.lo * s_base,
                u.window_after.hi * s_base
            )
            .unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{builtin_case, IEEE33_MODIFIED};

    fn unit(p_min: f64, p_max: f64, capacity: f64, soc: f64) -> BessUnit {
        BessUnit {
            id: "B".into(),
            bus: 2,
            p_min,
            p_max,
            capacity,
            soc,
        }
    }

    fn dev_pos(net: &Network, id: &str) -> usize {
        net.random_devices.iter().position(|d| d.id == id).unwrap()
    }

    #[test]
    fn adjacent_devices_share_one_battery() {
        let net = builtin_case(IEEE33_MODIFIED).unwrap();
        let wt2 = dev_pos(&net, "WT2");
        let ev2 = dev_pos(&net, "EV2");
        assert_eq!(net.random_devices[wt2].bus, 20);
        assert_eq!(net.random_devices[ev2].bus, 21);
        let plan = aggregate_by_branch(&net, &[ev2, wt2]).unwrap();
        assert_eq!(plan.assignments.len(), 1);
        let a = &plan.assignments[0];
        let mut devices = vec![wt2, ev2];
        devices.sort();
        assert_eq!(a.devices, devices);
        assert!(!a.placed);
        assert_eq!(plan.units[a.unit].bus, 21);
        assert_eq!(plan.units.len(), net.bess_units.len());
    }

    #[test]
    fn separate_feeders_get_separate_batteries() {
        let net = builtin_case(IEEE33_MODIFIED).unwrap();
        let plan = aggregate_by_branch(&net, &[dev_pos(&net, "PV1"), dev_pos(&net, "WT2")]).unwrap();
        assert_eq!(plan.assignments.len(), 2);
        assert_ne!(plan.assignments[0].unit, plan.assignments[1].unit);
        assert_ne!(plan.assignments[0].feeder, plan.assignments[1].feeder);
    }

    #[test]
    fn empty_dominant_set() {
        let net = builtin_case(IEEE33_MODIFIED).unwrap();
        let plan = aggregate_by_branch(&net, &[]).unwrap();
        assert!(plan.assignments.is_empty());
        assert_eq!(plan.units, net.bess_units);
    }

    #[test]
    fn battery_is_placed_when_feeder_has_none() {
        let net = builtin_case(IEEE33_MODIFIED).unwrap();
        let on_feeder_2: Vec<BessUnit> = net
            .bess_units
            .iter()
            .filter(|u| u.bus != 21)
            .cloned()
            .collect();
        let net = net.with_bess(on_feeder_2).unwrap();
        let plan = aggregate_by_branch(&net, &[dev_pos(&net, "EV2"), dev_pos(&net, "PV2")]).unwrap();
        let a = &plan.assignments[0];
        assert!(a.placed);
        // shallowest of buses 21 and 22
        assert_eq!(plan.units[a.unit].bus, 21);
        assert_eq!(plan.units[a.unit].capacity, net.bess_units[0].capacity);
    }

    #[test]
    fn target_signs() {
        let net = builtin_case(IEEE33_MODIFIED).unwrap();
        let pv = dev_pos(&net, "PV1");
        let ev = dev_pos(&net, "EV1");
        let mut powers = vec![0.0; 12];
        let mut means = vec![0.0; 12];
        powers[pv] = 1.5;
        means[pv] = 2.0;
        assert_eq!(smooth_target(&net, &[pv], &powers, &means), 0.5);
        powers[ev] = 1.0;
        means[ev] = 0.25;
        assert_eq!(smooth_target(&net, &[pv, ev], &powers, &means), 1.25);
    }

    #[test]
    fn command_limits() {
        let wide = unit(-10.0, 10.0, 100.0, 50.0);
        assert_eq!(smooth_command(&wide, SocWindow::at(50.0), 1.0, 0.5), 0.5);
        let tight = unit(-10.0, 0.3, 100.0, 50.0);
        assert_eq!(smooth_command(&tight, SocWindow::at(50.0), 1.0, 0.5), 0.3);
        let empty = unit(-10.0, 10.0, 12.0, 0.0);
        assert_eq!(smooth_command(&empty, SocWindow::at(0.0), 1.0, 0.5), 0.0);
        let full = unit(-6.0, 6.0, 12.0, 12.0);
        assert_eq!(smooth_command(&full, SocWindow::at(12.0), 1.0, -1.0), 0.0);
        // SOC floor binds before the power limit over a two-hour slot
        let b = unit(-6.0, 6.0, 12.0, 6.0);
        assert_eq!(smooth_command(&b, SocWindow::at(6.0), 2.0, 5.0), 3.0);
        // the envelope, not a single SOC, bounds the command
        let w = SocWindow { lo: 1.0, hi: 11.5 };
        assert_eq!(smooth_command(&b, w, 1.0, 4.0), 1.0);
        assert_eq!(smooth_command(&b, w, 1.0, -4.0), -0.5);
    }

    #[test]
    fn soc_arithmetic() {
        let b = unit(-6.0, 6.0, 12.0, 6.0);
        assert_eq!(soc_update(&b, 6.0, 2.0, 1.0).unwrap(), 4.0);
        assert_eq!(soc_update(&b, 12.0, 0.0, 1.0).unwrap(), 12.0);
        assert_eq!(soc_update(&b, 5.0, 0.0, 1.0).unwrap(), 5.0);
        assert!(matches!(soc_update(&b, 1.0, 2.0, 1.0), Err(Error::SocBounds { .. })));
        assert!(soc_update(&b, 11.0, -2.0, 1.0).is_err());
    }

    #[test]
    fn slot_commands_respect_limits_and_track_soc() {
        let net = builtin_case(IEEE33_MODIFIED).unwrap();
        let pv = dev_pos(&net, "PV2");
        let plan = aggregate_by_branch(&net, &[pv]).unwrap();
        let cols = SampleSet::device_columns(&net);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|r| {
                cols.iter()
                    .enumerate()
                    .map(|(c, _)| if c == pv { 25.0 * r as f64 } else { 1.0 })
                    .collect()
            })
            .collect();
        let x = SampleSet::new(cols, rows, "h12").unwrap();
        let means = device_means(&net, &x).unwrap();
        let soc: Vec<f64> = plan.units.iter().map(|u| u.soc).collect();
        let windows: Vec<SocWindow> = soc.iter().map(|&s| SocWindow::at(s)).collect();
        let out = slot_commands(&net, &plan, &x, &means, &windows, &soc, 1.0, 1).unwrap();
        let k = plan.assignments[0].unit;
        for (row, cmd) in x.rows().zip(&out.commands) {
            let powers = device_powers(&net, row).unwrap();
            assert!((cmd[k] - (means[pv] - powers[pv])).abs() < 1e-15);
            for (j, u) in plan.units.iter().enumerate() {
                assert!(cmd[j] >= u.p_min && cmd[j] <= u.p_max);
                if j != k {
                    assert_eq!(cmd[j], 0.0);
                }
            }
        }
        // commands are zero-mean, so the nominal path stays put
        assert!((out.nominal_after[k] - soc[k]).abs() < 1e-12);
        assert!(out.windows_after[k].lo < soc[k] && out.windows_after[k].hi > soc[k]);
        let csv = schedule_csv(&[out], net.s_base);
        assert_eq!(csv.lines().count(), 1 + plan.units.len());
        assert!(csv.lines().nth(1).unwrap().starts_with("h12,BESS1,"));
    }

    #[test]
    fn allowance_spreads_headroom_over_the_horizon() {
        let b = unit(-6.0, 6.0, 12.0, 6.0);
        let w = SocWindow { lo: 4.0, hi: 9.0 };
        assert_eq!(w.allowance(&b, 1), w);
        assert_eq!(w.allowance(&b, 0), w);
        let a = w.allowance(&b, 4);
        assert_eq!((a.lo, a.hi), (1.0, 11.25));
        assert_eq!(smooth_command(&b, a, 1.0, 5.0), 1.0);
        assert_eq!(smooth_command(&b, a, 1.0, -5.0), -0.75);

        // a worst-case draw in every remaining slot never leaves [0, capacity]
        let (mut lo, mut hi) = (w.lo, w.hi);
        for left in (1..=4).rev() {
            let a = SocWindow { lo, hi }.allowance(&b, left);
            lo = soc_update(&b, lo, smooth_command(&b, a, 1.0, 100.0), 1.0).unwrap();
            hi = soc_update(&b, hi, smooth_command(&b, a, 1.0, -100.0), 1.0).unwrap();
        }
        assert!(lo.abs() < 1e-12 && (hi - 12.0).abs() < 1e-12);
    }
}
