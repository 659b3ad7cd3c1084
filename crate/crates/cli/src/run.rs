//! Mode runners and report writers.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rsc_core::assess::{assess_slot, enhance_slot, mcs_slot, SlotAssessment, SlotEnhancement, SocState};
use rsc_core::distribution::{histogram, ks_statistic, RscDistribution};
use rsc_core::enhancement::schedule_csv;
use rsc_core::network::{load_case, Network};
use rsc_core::sensitivity::{rank_dominant, sobol_report, Dominant, SobolReport};
use rsc_core::stochastic::SampleSet;
use rsc_core::{Error, Result};
use serde_json::{json, Value};

use crate::config::{Mode, RunConfig};
use crate::profile::DayProfile;

const HISTOGRAM_BINS: usize = 50;

/// Loads the case and the slot samples, runs the selected mode and writes
/// every report under `cfg.out`. Returns the processed slot names.
pub fn run(cfg: &RunConfig) -> Result<Vec<String>> {
    cfg.validate()?;
    let net = load_case(&cfg.case)?;
    let slots = load_slots(cfg, &net)?;
    create_dir(&cfg.out)?;
    let names: Vec<String> = slots.iter().map(|s| s.time_slot.clone()).collect();
    if cfg.dump_samples {
        for x in &slots {
            write(&slot_dir(cfg, &x.time_slot)?.join("samples.csv"), &x.to_csv())?;
        }
    }
    match cfg.mode {
        Mode::Assess => run_assess(cfg, &net, &slots, false),
        Mode::Sobol => run_assess(cfg, &net, &slots, true),
        Mode::Enhance => run_enhance(cfg, &net, &slots),
        Mode::Mcs => run_mcs(cfg, &net, &slots),
        Mode::Compare => run_compare(cfg, &net, &slots),
    }?;
    Ok(names)
}

/// Slot sample sets: ingested from `--samples-dir` (file stem = slot name,
/// first `ns` rows) or drawn from the synthetic day profile.
pub fn load_slots(cfg: &RunConfig, net: &Network) -> Result<Vec<SampleSet>> {
    let slots = match &cfg.samples_dir {
        Some(dir) => {
            let entries = fs::read_dir(dir).map_err(|source| Error::Io {
                path: dir.display().to_string(),
                source,
            })?;
            let mut files: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .collect();
            files.sort();
            let mut out = Vec::new();
            for f in files {
                let name = f.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                if !cfg.slots.is_empty() && !cfg.slots.contains(&name) {
                    continue;
                }
                let x = SampleSet::read_csv(&f, net)?;
                let x = if x.n_rows() > cfg.ns {
                    x.head(cfg.ns)?
                } else {
                    if x.n_rows() < cfg.ns {
                        log::warn!("slot {name}: {} rows available, fewer than ns = {}", x.n_rows(), cfg.ns);
                    }
                    x
                };
                out.push(x);
            }
            if out.is_empty() {
                return Err(Error::Validation(format!(
                    "no matching slot CSV files in {}",
                    dir.display()
                )));
            }
            out
        }
        None => {
            let profile = match &cfg.profile {
                Some(p) => DayProfile::from_json_file(p)?,
                None => DayProfile::builtin(net),
            };
            for s in &cfg.slots {
                if !profile.slots.iter().any(|p| &p.name == s) {
                    return Err(Error::Validation(format!("unknown slot {s}")));
                }
            }
            let picked: Vec<usize> = (0..profile.slots.len())
                .filter(|&i| cfg.slots.is_empty() || cfg.slots.contains(&profile.slots[i].name))
                .collect();
            picked
                .par_iter()
                .map(|&i| profile.sample(net, i, cfg.ns, cfg.seed))
                .collect::<Result<Vec<_>>>()?
        }
    };
    Ok(slots)
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|source| Error::Io {
        path: p.display().to_string(),
        source,
    })
}

fn slot_dir(cfg: &RunConfig, slot: &str) -> Result<PathBuf> {
    let d = cfg.out.join(slot);
    create_dir(&d)?;
    Ok(d)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(v).expect("json serializes") + "\n"))
}

/// Collects per-slot results, reporting the first failing slot in input
/// order so the error does not depend on scheduling.
fn per_slot<T: Send>(
    slots: &[SampleSet],
    f: impl Fn(&SampleSet) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    slots
        .par_iter()
        .map(|x| {
            log::info!("slot {}: started", x.time_slot);
            let r = f(x).map_err(|e| e.in_slot(&x.time_slot));
            log::info!("slot {}: done", x.time_slot);
            r
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

fn dist_summary(d: &RscDistribution, rsc: f64, s_base: f64) -> Value {
    json!({
        "provenance": d.provenance,
        "n": d.n(),
        "rsc_mw": rsc * s_base,
        "mean_mw": d.mean() * s_base,
        "std_mw": d.variance().sqrt() * s_base,
        "min_mw": d.min() * s_base,
        "max_mw": d.max() * s_base,
    })
}

fn write_distribution(dir: &Path, suffix: &str, d: &RscDistribution, s_base: f64) -> Result<()> {
    let mw = d.scaled(s_base);
    write(&dir.join(format!("distribution{suffix}.csv")), &mw.cdf_csv())?;
    write(
        &dir.join(format!("histogram{suffix}.csv")),
        &histogram(&mw, HISTOGRAM_BINS)?.to_csv(),
    )
}

fn run_header(cfg: &RunConfig, slot: &str) -> Value {
    json!({
        "slot": slot,
        "mode": cfg.mode.name(),
        "unit": "MW",
        "seed": cfg.seed,
        "n0": cfg.n0,
        "ns": cfg.ns,
        "degree": cfg.q,
        "gamma": cfg.gamma,
    })
}

fn merge(mut base: Value, extra: Value) -> Value {
    if let (Value::Object(b), Value::Object(e)) = (&mut base, extra) {
        b.extend(e);
    }
    base
}

fn sobol_of(a: &SlotAssessment, cfg: &RunConfig) -> Result<Option<(SobolReport, Dominant)>> {
    let eo = cfg.enhance_options();
    match sobol_report(&a.model) {
        Ok(r) => {
            let d = rank_dominant(&r, eo.threshold, eo.kind)?;
            Ok(Some((r, d)))
        }
        Err(Error::ZeroVariance) => Ok(None),
        Err(e) => Err(e),
    }
}

fn dominant_json(d: &Dominant, names: &[String]) -> Value {
    json!({
        "variables": d.variables.iter().map(|&i| names[i].clone()).collect::<Vec<_>>(),
        "sum": d.sum,
        "kind": d.kind,
        "threshold": d.threshold,
        "shortfall": d.shortfall,
    })
}

fn write_sobol(dir: &Path, r: &SobolReport) -> Result<()> {
    write(&dir.join("sobol.json"), &(r.to_json() + "\n"))?;
    write(&dir.join("sobol.csv"), &r.to_csv())
}

fn run_assess(cfg: &RunConfig, net: &Network, slots: &[SampleSet], with_sobol: bool) -> Result<()> {
    let opts = cfg.assess_options();
    let results = per_slot(slots, |x| assess_slot(net, x, None, &opts))?;
    let mut table = String::from("slot,rsc_mw,mean_mw,std_mw\n");
    let mut sobol_table = String::from("slot,dominant,sum,shortfall\n");
    for a in &results {
        let dir = slot_dir(cfg, &a.slot)?;
        write_distribution(&dir, "", &a.distribution, net.s_base)?;
        write(&dir.join("model.json"), &(a.model.to_json() + "\n"))?;
        let mut summary = merge(
            run_header(cfg, &a.slot),
            json!({
                "surrogate": dist_summary(&a.distribution, a.rsc, net.s_base),
                "diagnostics": a.model.diagnostics,
            }),
        );
        if with_sobol {
            let names: Vec<String> = a.model.columns.iter().map(|c| c.name.clone()).collect();
            let sobol = sobol_of(a, cfg)?;
            match &sobol {
                Some((r, d)) => {
                    write_sobol(&dir, r)?;
                    let dj = dominant_json(d, &names);
                    writeln!(
                        sobol_table,
                        "{},{},{:.6},{}",
                        a.slot,
                        d.variables.iter().map(|&i| names[i].as_str()).collect::<Vec<_>>().join(" "),
                        d.sum,
                        d.shortfall
                    )
                    .unwrap();
                    summary = merge(summary, json!({ "dominant": dj }));
                }
                None => {
                    writeln!(sobol_table, "{},,0,false", a.slot).unwrap();
                    summary = merge(summary, json!({ "dominant": Value::Null }));
                }
            }
        }
        write_json(&dir.join("summary.json"), &summary)?;
        writeln!(
            table,
            "{},{:.6},{:.6},{:.6}",
            a.slot,
            a.rsc * net.s_base,
            a.distribution.mean() * net.s_base,
            a.distribution.variance().sqrt() * net.s_base
        )
        .unwrap();
    }
    write(&cfg.out.join("rsc.csv"), &table)?;
    if with_sobol {
        write(&cfg.out.join("dominant.csv"), &sobol_table)?;
    }
    Ok(())
}

/// Pre-smoothing assessments run in parallel; smoothing then walks the slots
/// in order since battery state of charge carries over, with the batteries'
/// headroom spread over the whole day.
pub fn enhance_all(cfg: &RunConfig, net: &Network, slots: &[SampleSet]) -> Result<Vec<SlotEnhancement>> {
    let opts = cfg.assess_options();
    let eopts = cfg.enhance_options();
    let pre = per_slot(slots, |x| assess_slot(net, x, None, &opts))?;
    let mut soc = SocState::with_horizon(slots.len());
    slots
        .iter()
        .zip(pre)
        .map(|(x, p)| {
            log::info!("slot {}: smoothing", x.time_slot);
            enhance_slot(net, x, p, &mut soc, &opts, &eopts).map_err(|e| e.in_slot(&x.time_slot))
        })
        .collect()
}

fn run_enhance(cfg: &RunConfig, net: &Network, slots: &[SampleSet]) -> Result<()> {
    let results = enhance_all(cfg, net, slots)?;
    let s_base = net.s_base;
    let mut table = String::from("slot,pre_mw,post_mw,increment_mw\n");
    for e in &results {
        let slot = &e.pre.slot;
        let dir = slot_dir(cfg, slot)?;
        write_distribution(&dir, "_pre", &e.pre.distribution, s_base)?;
        write_distribution(&dir, "_post", &e.post.distribution, s_base)?;
        if let Some(r) = &e.sobol {
            write_sobol(&dir, r)?;
        }
        write(&dir.join("schedule.csv"), &schedule_csv(std::slice::from_ref(&e.commands), s_base))?;
        let names: Vec<String> = e.pre.model.columns.iter().map(|c| c.name.clone()).collect();
        let assignments: Vec<Value> = e
            .plan
            .assignments
            .iter()
            .map(|a| {
                let u = &e.plan.units[a.unit];
                json!({
                    "bess_id": u.id,
                    "bus": u.bus,
                    "placed": a.placed,
                    "devices": a.devices.iter().map(|&d| names[d].clone()).collect::<Vec<_>>(),
                })
            })
            .collect();
        let summary = merge(
            run_header(cfg, slot),
            json!({
                "pre": dist_summary(&e.pre.distribution, e.pre.rsc, s_base),
                "post": dist_summary(&e.post.distribution, e.post.rsc, s_base),
                "increment_mw": (e.post.rsc - e.pre.rsc) * s_base,
                "dominant": e.dominant.as_ref().map(|d| dominant_json(d, &names)),
                "assignments": assignments,
                "diagnostics_pre": e.pre.model.diagnostics,
                "diagnostics_post": e.post.model.diagnostics,
            }),
        );
        write_json(&dir.join("summary.json"), &summary)?;
        writeln!(
            table,
            "{},{:.6},{:.6},{:.6}",
            slot,
            e.pre.rsc * s_base,
            e.post.rsc * s_base,
            (e.post.rsc - e.pre.rsc) * s_base
        )
        .unwrap();
    }
    let all: Vec<_> = results.iter().map(|e| e.commands.clone()).collect();
    write(&cfg.out.join("schedule.csv"), &schedule_csv(&all, s_base))?;
    write(&cfg.out.join("table_rsc.csv"), &table)
}

fn run_mcs(cfg: &RunConfig, net: &Network, slots: &[SampleSet]) -> Result<()> {
    let opts = cfg.assess_options();
    let results = per_slot(slots, |x| mcs_slot(net, x, None, &opts))?;
    let mut table = String::from("slot,rsc_mw,mean_mw,std_mw\n");
    for (x, (d, rsc)) in slots.iter().zip(&results) {
        let dir = slot_dir(cfg, &x.time_slot)?;
        write_distribution(&dir, "_mcs", d, net.s_base)?;
        let summary = merge(
            run_header(cfg, &x.time_slot),
            json!({ "mcs": dist_summary(d, *rsc, net.s_base) }),
        );
        write_json(&dir.join("summary.json"), &summary)?;
        writeln!(
            table,
            "{},{:.6},{:.6},{:.6}",
            x.time_slot,
            rsc * net.s_base,
            d.mean() * net.s_base,
            d.variance().sqrt() * net.s_base
        )
        .unwrap();
    }
    write(&cfg.out.join("rsc_mcs.csv"), &table)
}

fn run_compare(cfg: &RunConfig, net: &Network, slots: &[SampleSet]) -> Result<()> {
    let opts = cfg.assess_options();
    let results = per_slot(slots, |x| {
        let a = assess_slot(net, x, None, &opts)?;
        let m = mcs_slot(net, x, None, &opts)?;
        Ok((a, m))
    })?;
    let mut table = String::from("slot,rsc_pce_mw,rsc_mcs_mw,rel_diff,ks\n");
    for (a, (m, m_rsc)) in &results {
        let dir = slot_dir(cfg, &a.slot)?;
        write_distribution(&dir, "", &a.distribution, net.s_base)?;
        write_distribution(&dir, "_mcs", m, net.s_base)?;
        let ks = ks_statistic(&a.distribution, m);
        let rel = (a.rsc - m_rsc) / m_rsc.abs().max(f64::MIN_POSITIVE);
        let summary = merge(
            run_header(cfg, &a.slot),
            json!({
                "surrogate": dist_summary(&a.distribution, a.rsc, net.s_base),
                "mcs": dist_summary(m, *m_rsc, net.s_base),
                "ks": ks,
                "rsc_rel_diff": rel,
                "diagnostics": a.model.diagnostics,
            }),
        );
        write_json(&dir.join("summary.json"), &summary)?;
        writeln!(
            table,
            "{},{:.6},{:.6},{:.6},{:.6}",
            a.slot,
            a.rsc * net.s_base,
            m_rsc * net.s_base,
            rel,
            ks
        )
        .unwrap();
    }
    write(&cfg.out.join("compare.csv"), &table)
}
