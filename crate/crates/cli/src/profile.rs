//! Per-slot input distributions and slot sample generation.

use std::collections::BTreeMap;
use std::path::Path;

use rsc_core::network::Network;
use rsc_core::stochastic::{
    synth_samples_stream, DeviceKind, InputDistribution, MixtureComponent, SampleSet, SynthSpec,
};
use rsc_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Marginals of every device for one time slot, keyed by device id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlotProfile {
    pub name: String,
    pub distributions: BTreeMap<String, InputDistribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DayProfile {
    pub slots: Vec<SlotProfile>,
}

/// Hourly shape of the built-in synthetic day, 07:00 to 19:00: mean
/// irradiance as a fraction of 1000 W/m², Weibull wind scale in m/s, and EV
/// charging mean in MW per 2 MW station.
const DAY: [(&str, f64, f64, f64); 12] = [
    ("h07", 0.10, 6.5, 0.40),
    ("h08", 0.25, 6.2, 0.55),
    ("h09", 0.40, 6.0, 0.70),
    ("h10", 0.55, 6.0, 0.85),
    ("h11", 0.65, 6.0, 0.95),
    ("h12", 0.75, 6.2, 1.05),
    ("h13", 0.75, 6.5, 1.05),
    ("h14", 0.65, 6.8, 0.95),
    ("h15", 0.55, 7.0, 0.85),
    ("h16", 0.40, 7.2, 0.70),
    ("h17", 0.25, 7.5, 0.55),
    ("h18", 0.10, 7.5, 0.40),
];

/// Beta concentration `a + b` of the irradiance marginals.
const PV_CONCENTRATION: f64 = 10.0;
const WIND_SHAPE: f64 = 2.0;
/// EV spread relative to station rating.
const EV_REL_STD: f64 = 0.125;

impl DayProfile {
    /// Built-in synthetic day for any case: PV irradiance is Beta on
    /// [0, 1000] W/m², wind speed Weibull, EV charging a normal truncated to
    /// the station rating.
    pub fn builtin(net: &Network) -> DayProfile {
        let slots = DAY
            .iter()
            .map(|&(name, pv, wind, ev)| {
                let distributions = net
                    .random_devices
                    .iter()
                    .map(|d| {
                        let rating_mw = d.rating * net.s_base;
                        let dist = match d.kind() {
                            DeviceKind::Pv => InputDistribution::Beta {
                                a: PV_CONCENTRATION * pv,
                                b: PV_CONCENTRATION * (1.0 - pv),
                                scale: 1000.0,
                            },
                            DeviceKind::Wt => InputDistribution::Weibull {
                                shape: WIND_SHAPE,
                                scale: wind,
                            },
                            DeviceKind::Ev => InputDistribution::TruncatedMixture {
                                components: vec![MixtureComponent {
                                    weight: 1.0,
                                    mean: ev / 2.0 * rating_mw,
                                    std: EV_REL_STD * rating_mw,
                                }],
                                lo: 0.0,
                                hi: rating_mw,
                            },
                        };
                        (d.id.clone(), dist)
                    })
                    .collect();
                SlotProfile {
                    name: name.to_string(),
                    distributions,
                }
            })
            .collect();
        DayProfile { slots }
    }

    pub fn from_json_file(path: &Path) -> Result<DayProfile> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let p: DayProfile =
            serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        if p.slots.is_empty() {
            return Err(Error::Validation(format!("{}: profile has no slots", path.display())));
        }
        Ok(p)
    }

    /// `ns` draws for slot `index`, on its own random stream of `seed`.
    pub fn sample(&self, net: &Network, index: usize, ns: usize, seed: u64) -> Result<SampleSet> {
        let slot = &self.slots[index];
        let spec = SynthSpec::for_network(net, &slot.distributions).map_err(|e| e.in_slot(&slot.name))?;
        synth_samples_stream(&spec, ns, seed, index as u64, &slot.name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rsc_core::network::{builtin_case, IEEE33_MODIFIED};

    #[test]
    fn builtin_profile_covers_every_device() {
        let net = builtin_case(IEEE33_MODIFIED).unwrap();
        let p = DayProfile::builtin(&net);
        assert_eq!(p.slots.len(), 12);
        for s in &p.slots {
            assert_eq!(s.distributions.len(), net.random_devices.len());
        }
        let x = p.sample(&net, 3, 50, 1).unwrap();
        assert_eq!(x.time_slot, "h10");
        assert_eq!(x.n_rows(), 50);
        x.check_binding(&net).unwrap();
    }

    #[test]
    fn slots_draw_from_distinct_streams() {
        let net = builtin_case(IEEE33_MODIFIED).unwrap();
        let mut p = DayProfile::builtin(&net);
        p.slots[1].distributions = p.slots[0].distributions.clone();
        let a = p.sample(&net, 0, 10, 5).unwrap();
        let b = p.sample(&net, 1, 10, 5).unwrap();
        assert_ne!(a.row(0), b.row(0));
        assert_eq!(a, p.sample(&net, 0, 10, 5).unwrap());
    }

    #[test]
    fn profile_json_round_trip() {
        let net = builtin_case(IEEE33_MODIFIED).unwrap();
        let p = DayProfile::builtin(&net);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("day.json");
        std::fs::write(&path, serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(DayProfile::from_json_file(&path).unwrap(), p);
        std::fs::write(&path, "{\"slots\": []}").unwrap();
        assert!(DayProfile::from_json_file(&path).unwrap_err().is_validation());
    }
}
