//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use clap::Parser;
use rsc_cli::config::RunConfig;
use rsc_cli::run::{enhance_all, load_slots};
use rsc_core::assess::{evaluate_lambdas, SlotEnhancement};
use rsc_core::cpf::{max_lambda, CpfOptions};
use rsc_core::distribution::{confidence_rsc, ks_statistic, Provenance, RscDistribution};
use rsc_core::enhancement::{device_means, smooth_target};
use rsc_core::network::{builtin_case, BusKind, Network, IEEE33_MODIFIED};
use rsc_core::pce::{fit, predict, univariate_basis, FitOptions, InputModel, PceModel, UnivariateBasis};
use rsc_core::powerflow::{active_losses, bus_powers, solve};
use rsc_core::sensitivity::{sobol_index, sobol_report};
use rsc_core::stochastic::{
    assemble_injections, device_powers, synth_samples, Column, InputDistribution, MomentTable, SampleSet, SynthSpec,
};
use rsc_testkit::fixtures::{cpf_fixtures, realization};
use rsc_testkit::grid::{base_injections, GridOracle};
use rsc_testkit::ishigami::{indices, ishigami};
use rsc_testkit::sweep::{jacobian_gap, sweep};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Everything the fidelity, enhancement and speedup criteria need from one
/// run of the synthetic day.
struct Day {
    net: Network,
    slots: Vec<SampleSet>,
    results: Vec<SlotEnhancement>,
    mcs_pre: Vec<RscDistribution>,
    mcs_post: Vec<RscDistribution>,
    mcs_time: Vec<Duration>,
    gamma: f64,
}

fn default_config(out: &Path) -> RunConfig {
    RunConfig::try_parse_from(["mgrsc", "--out", out.to_str().unwrap()]).unwrap()
}

fn run_day() -> Day {
    let scratch = tempfile::tempdir().unwrap();
    let cfg = default_config(scratch.path());
    let net = builtin_case(IEEE33_MODIFIED).unwrap();
    let slots = load_slots(&cfg, &net).unwrap();
    let results = enhance_all(&cfg, &net, &slots).unwrap();
    let cpf = cfg.assess_options().cpf;
    let (mut mcs_pre, mut mcs_post, mut mcs_time) = (Vec::new(), Vec::new(), Vec::new());
    for (x, e) in slots.iter().zip(&results) {
        let t = Instant::now();
        let pre = evaluate_lambdas(&net, x, None, &cpf).unwrap();
        mcs_time.push(t.elapsed());
        let post = if e.plan.assignments.is_empty() {
            pre.clone()
        } else {
            evaluate_lambdas(&e.post_network(&net).unwrap(), x, Some(&e.commands.commands), &cpf).unwrap()
        };
        mcs_pre.push(RscDistribution::new(pre, Provenance::McsOracle).unwrap());
        mcs_post.push(RscDistribution::new(post, Provenance::McsOracle).unwrap());
    }
    Day {
        net,
        slots,
        results,
        mcs_pre,
        mcs_post,
        mcs_time,
        gamma: cfg.gamma,
    }
}

fn fidelity(day: &Day) -> Outcome {
    let mut worst = (0.0, String::new());
    let mut lines = Vec::new();
    for (k, e) in day.results.iter().enumerate() {
        let pre = ks_statistic(&e.pre.distribution, &day.mcs_pre[k]);
        let post = ks_statistic(&e.post.distribution, &day.mcs_post[k]);
        lines.push(format!("{} {pre:.4}/{post:.4}", e.pre.slot));
        for (ks, tag) in [(pre, "pre"), (post, "post")] {
            if ks > worst.0 {
                worst = (ks, format!("{} {tag}", e.pre.slot));
            }
        }
    }
    let n = day.slots.len();
    outcome(
        n >= 4 && worst.0 < 0.05,
        format!(
            "{n} slots pre/post, N = {} each, max KS {:.4} ({}) < 0.05; per slot {}",
            day.slots[0].n_rows(),
            worst.0,
            worst.1,
            lines.join(", ")
        ),
    )
}

fn sobol_correctness(day: &Day) -> Outcome {
    let (a, b) = (7.0, 0.1);
    let exact = indices(a, b);
    let cols: Vec<Column> = (1..=3)
        .map(|i| Column {
            name: format!("x{i}"),
            unit: "-".into(),
        })
        .collect();
    let spec = SynthSpec::new(cols, vec![InputDistribution::Uniform { lo: -PI, hi: PI }; 3]).unwrap();
    let x = synth_samples(&spec, 6000, 11, "ishigami").unwrap();
    let y: Vec<f64> = x.rows().map(|r| ishigami(r, a, b)).collect();
    let model = fit(&x, &y, 10, &FitOptions::default()).unwrap();
    let report = sobol_report(&model).unwrap();
    let s13 = sobol_index(&model, &[0, 2]).unwrap();
    let got = [report.first_order[0], report.first_order[1], report.first_order[2], s13];
    let want = [exact.s1, exact.s2, exact.s3, exact.s13];
    let index_gap = got.iter().zip(want).map(|(g, w)| (g - w).abs()).fold(0.0, f64::max);

    let mut models: Vec<&PceModel> = vec![&model];
    for e in &day.results {
        models.push(&e.pre.model);
        models.push(&e.post.model);
    }
    let sum_gap = models
        .iter()
        .filter_map(|m| sobol_report(m).ok())
        .map(|r| (r.group_sum() - 1.0).abs())
        .fold(0.0, f64::max);
    outcome(
        index_gap <= 0.01 && sum_gap <= 1e-10,
        format!(
            "S1 {:.4} S2 {:.4} S3 {:.4} S13 {:.4}, max gap {index_gap:.4} <= 0.01; |Σ S_u − 1| <= {sum_gap:.1e} over {} models",
            got[0],
            got[1],
            got[2],
            got[3],
            models.len()
        ),
    )
}

fn basis_correctness() -> Outcome {
    let normal = MomentTable::analytic(vec![vec![1.0, 0.0, 1.0, 0.0, 3.0]]);
    let p2 = univariate_basis(&normal, 0, 2).unwrap();
    let s = 2f64.sqrt();
    let coeff_gap = p2
        .iter()
        .zip([-1.0 / s, 0.0, 1.0 / s])
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let q = 4;
    let cols = vec![Column {
        name: "z".into(),
        unit: "-".into(),
    }];
    let spec = SynthSpec::new(cols, vec![InputDistribution::Normal { mean: 0.0, std: 1.0 }]).unwrap();
    let x = synth_samples(&spec, 100_000, 21, "normal").unwrap();
    let input = InputModel::from_samples(&x, q).unwrap();
    let basis = UnivariateBasis::build(&input.moments, q).unwrap();
    let z = input.standardization.apply(&x).column(0);
    let n = z.len() as f64;
    let mut gram_gap: f64 = 0.0;
    for i in 0..=q {
        for j in 0..=q {
            let g = z.iter().map(|&t| basis.eval(0, i, t) * basis.eval(0, j, t)).sum::<f64>() / n;
            gram_gap = gram_gap.max((g - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    outcome(
        coeff_gap <= 1e-6 && gram_gap <= 0.02,
        format!("degree-2 coefficient gap {coeff_gap:.1e} <= 1e-6; Gram gap {gram_gap:.1e} <= 0.02 (degree {q}, N = 100000)"),
    )
}

fn power_flow_correctness() -> Outcome {
    let net = builtin_case(IEEE33_MODIFIED).unwrap();
    let (mut v_gap, mut balance, mut jac): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for row in [realization(&net, 0.0, 0.0, 0.0), realization(&net, 650.0, 11.0, 0.9)] {
        let inj = assemble_injections(&net, &row, None).unwrap();
        let st = solve(&net, &inj).unwrap();
        let oracle = sweep(&net, &inj);
        for (k, o) in oracle.iter().enumerate() {
            v_gap = v_gap.max((st.voltage(k) - o).norm());
        }
        let (p, _) = bus_powers(&net, &st.theta, &st.v);
        balance = balance.max((p.iter().sum::<f64>() - active_losses(&net, &st).unwrap()).abs());
        jac = jac.max(jacobian_gap(&net, &inj, &st.theta, &st.v, 1e-6));
        let mut theta = st.theta.clone();
        let mut v = st.v.clone();
        for k in 0..net.n_bus() {
            if net.buses[k].kind != BusKind::Slack {
                theta[k] += 0.01 * ((k * 7 % 5) as f64 - 2.0);
                v[k] *= 1.0 + 0.005 * ((k * 3 % 7) as f64 - 3.0);
            }
        }
        jac = jac.max(jacobian_gap(&net, &inj, &theta, &v, 1e-6));
    }
    outcome(
        v_gap <= 1e-6 && balance < 1e-8 && jac <= 1e-6,
        format!("voltage gap {v_gap:.1e} pu, balance residual {balance:.1e} pu, Jacobian gap {jac:.1e}"),
    )
}

fn cpf_correctness() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut ok = true;
    let fixtures = cpf_fixtures();
    for fx in &fixtures {
        let base = base_injections(&fx.net);
        let r = max_lambda(&fx.net, &base, &CpfOptions::default()).unwrap();
        let scanned = GridOracle::new(&fx.net, base).scan(10.0);
        worst = worst.max((r.lambda - scanned).abs());
        ok &= (fx.binding)(r.binding);
    }

    let net = builtin_case(IEEE33_MODIFIED).unwrap();
    let inj = assemble_injections(&net, &realization(&net, 500.0, 7.0, 0.8), None).unwrap();
    let opts = CpfOptions {
        lambda_tol: 1e-6,
        ..CpfOptions::default()
    };
    let base = max_lambda(&net, &inj, &opts).unwrap().lambda;
    let mut case = net.to_case_file();
    for b in &mut case.buses {
        b.v_min = (b.v_min + 0.005).min(0.99);
    }
    let tightened = max_lambda(&case.into_network().unwrap(), &inj, &opts).unwrap().lambda;
    let monotone = tightened <= base + opts.lambda_tol;
    let mut scaling: f64 = 0.0;
    for k in [0.5, 2.0] {
        let scaled = net.with_direction(net.direction().scaled(k)).unwrap();
        let lambda = max_lambda(&scaled, &inj, &opts).unwrap().lambda;
        scaling = scaling.max((lambda * k - base).abs() / k.max(1.0));
    }
    outcome(
        ok && worst <= 2e-4 && monotone && scaling <= 4e-6,
        format!(
            "{} fixtures, max grid gap {worst:.1e} <= 2e-4, bindings as designed: {ok}; tightening {base:.5} -> {tightened:.5}; scaling gap {scaling:.1e}",
            fixtures.len()
        ),
    )
}

/// True when no command in the slot was clipped by a power or SOC limit.
fn limits_slack(net: &Network, x: &SampleSet, e: &SlotEnhancement) -> bool {
    let means = device_means(net, x).unwrap();
    x.rows().zip(&e.commands.commands).all(|(row, cmd)| {
        let powers = device_powers(net, row).unwrap();
        e.plan
            .assignments
            .iter()
            .all(|a| smooth_target(net, &a.devices, &powers, &means) == cmd[a.unit])
    })
}

fn variance(d: &RscDistribution) -> f64 {
    d.variance()
}

fn enhancement(day: &Day) -> Outcome {
    let s_base = day.net.s_base;
    let mut pass = true;
    let mut lines = Vec::new();
    let mut checked = 0;
    for (k, e) in day.results.iter().enumerate() {
        if e.dominant.as_ref().is_none_or(|d| d.variables.is_empty()) {
            continue;
        }
        checked += 1;
        let strict = limits_slack(&day.net, &day.slots[k], e);
        let (pre, post) = (&day.mcs_pre[k], &day.mcs_post[k]);
        let rsc_pre = confidence_rsc(pre, day.gamma).unwrap();
        let rsc_post = confidence_rsc(post, day.gamma).unwrap();
        let rsc_ok = |a: f64, b: f64| if strict { b > a } else { b >= a };
        let ok = variance(post) < variance(pre)
            && rsc_ok(rsc_pre, rsc_post)
            && e.post.distribution.variance() < e.pre.distribution.variance()
            && rsc_ok(e.pre.rsc, e.post.rsc);
        pass &= ok;
        lines.push(format!(
            "{} {:.3}->{:.3} MW{}{}",
            e.pre.slot,
            rsc_pre * s_base,
            rsc_post * s_base,
            if strict { "" } else { " (limits bind)" },
            if ok { "" } else { " FAILED" }
        ));
    }
    outcome(
        pass && checked > 0,
        format!("{checked} slots with dominant inputs, MCS RSC95 pre->post: {}", lines.join(", ")),
    )
}

fn speedup(day: &Day) -> Outcome {
    let k = 0;
    let model = &day.results[k].pre.model;
    let x = &day.slots[k];
    let mut best = Duration::MAX;
    for _ in 0..5 {
        let t = Instant::now();
        let y = predict(model, x).unwrap();
        best = best.min(t.elapsed());
        assert_eq!(y.len(), x.n_rows());
    }
    let direct = day.mcs_time[k];
    let ratio = direct.as_secs_f64() / best.as_secs_f64();
    outcome(
        ratio >= 100.0,
        format!(
            "{} points: surrogate {:.3} ms, direct {:.2} s, speedup {ratio:.0}x >= 100x",
            x.n_rows(),
            best.as_secs_f64() * 1e3,
            direct.as_secs_f64()
        ),
    )
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let mut failures = Vec::new();
    let mut files = 0;
    for mode in ["assess", "sobol", "enhance", "mcs", "compare"] {
        let run = |tag: &str| {
            let out = root.path().join(format!("{mode}-{tag}"));
            let status = Command::new(env!("CARGO_BIN_EXE_mgrsc"))
                .args(["--mode", mode, "--slots", "h09,h12,h15", "--ns", "400", "--n0", "120"])
                .args(["--seed", "7", "--dump-samples", "--out"])
                .arg(&out)
                .status()
                .unwrap();
            assert!(status.success(), "{mode} run failed");
            tree(&out)
        };
        let (a, b) = (run("a"), run("b"));
        files += a.len();
        if a.is_empty() || a != b {
            failures.push(mode);
        }
    }
    outcome(
        failures.is_empty(),
        format!("5 modes run twice, {files} files compared byte for byte; differing modes: {failures:?}"),
    )
}

fn main() {
    let started = Instant::now();
    let day = run_day();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("surrogate fidelity", Box::new(|| fidelity(&day))),
        ("Sobol' correctness", Box::new(|| sobol_correctness(&day))),
        ("basis correctness", Box::new(basis_correctness)),
        ("power flow correctness", Box::new(power_flow_correctness)),
        ("CPF correctness", Box::new(cpf_correctness)),
        ("enhancement effectiveness", Box::new(|| enhancement(&day))),
        ("speedup", Box::new(|| speedup(&day))),
        ("determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {} {name}: {} | {}",
            k + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!(
        "acceptance: {} of {} criteria passed in {:.0} s",
        criteria.len() - failed,
        criteria.len(),
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
