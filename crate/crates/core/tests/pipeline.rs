//! End-to-end slot assessment and smoothing on the 33-bus case.

use std::collections::BTreeMap;

use rsc_core::assess::{
    assess_post_smoothing, assess_slot, enhance_slot, evaluate_lambdas, AssessOptions, EnhanceOptions, SocState,
};
use rsc_core::enhancement::{aggregate_by_branch, device_means, slot_commands, SocWindow};
use rsc_core::network::{builtin_case, Network, IEEE33_MODIFIED};
use rsc_core::stochastic::{synth_samples, DeviceKind, InputDistribution, MixtureComponent, SampleSet, SynthSpec};

fn spread(net: &Network) -> BTreeMap<String, InputDistribution> {
    net.random_devices
        .iter()
        .map(|d| {
            let rating = d.rating * net.s_base;
            let dist = match d.kind() {
                DeviceKind::Pv => InputDistribution::Beta {
                    a: 6.5,
                    b: 3.5,
                    scale: 1000.0,
                },
                DeviceKind::Wt => InputDistribution::Weibull { shape: 2.0, scale: 6.0 },
                DeviceKind::Ev => InputDistribution::TruncatedMixture {
                    components: vec![MixtureComponent {
                        weight: 1.0,
                        mean: 0.475 * rating,
                        std: 0.125 * rating,
                    }],
                    lo: 0.0,
                    hi: rating,
                },
            };
            (d.id.clone(), dist)
        })
        .collect()
}

fn constant(net: &Network) -> BTreeMap<String, InputDistribution> {
    net.random_devices
        .iter()
        .map(|d| {
            let value = match d.kind() {
                DeviceKind::Pv => 600.0,
                DeviceKind::Wt => 6.0,
                DeviceKind::Ev => 0.9,
            };
            (d.id.clone(), InputDistribution::Constant { value })
        })
        .collect()
}

fn draw(net: &Network, by_device: &BTreeMap<String, InputDistribution>, n: usize, seed: u64, slot: &str) -> SampleSet {
    synth_samples(&SynthSpec::for_network(net, by_device).unwrap(), n, seed, slot).unwrap()
}

fn small_opts() -> AssessOptions {
    AssessOptions {
        n0: 120,
        ..AssessOptions::default()
    }
}

fn variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n
}

#[test]
fn constant_inputs_give_a_point_distribution_and_no_increment() {
    let net = builtin_case(IEEE33_MODIFIED).unwrap();
    let x = draw(&net, &constant(&net), 150, 1, "flat");
    let opts = AssessOptions {
        n0: 20,
        ..AssessOptions::default()
    };
    let e = assess_post_smoothing(&net, &x, &opts, &EnhanceOptions::default()).unwrap();
    let values = e.pre.distribution.values();
    assert!(values.iter().all(|&v| (v - values[0]).abs() < 1e-12));
    assert!((e.pre.rsc - e.pre.training[0]).abs() < 1e-12);
    assert!(e.sobol.is_none() && e.dominant.is_none());
    assert!(e.plan.assignments.is_empty());
    assert_eq!(e.post.rsc, e.pre.rsc);
}

#[test]
fn surrogate_tracks_direct_evaluation() {
    let net = builtin_case(IEEE33_MODIFIED).unwrap();
    let x = draw(&net, &spread(&net), 400, 2, "mid");
    let opts = AssessOptions {
        n0: 200,
        ..AssessOptions::default()
    };
    let a = assess_slot(&net, &x, None, &opts).unwrap();
    let direct = evaluate_lambdas(&net, &x, None, &opts.cpf).unwrap();
    let (mut worst, mut sq) = (0.0f64, 0.0);
    for (p, d) in a.distribution.values().iter().zip({
        let mut s = direct.clone();
        s.sort_by(f64::total_cmp);
        s
    }) {
        worst = worst.max((p - d).abs());
        sq += (p - d).powi(2);
    }
    // quantile functions close in the mean-square sense
    assert!((sq / direct.len() as f64).sqrt() < 0.2 * variance(&direct).sqrt(), "worst {worst}");
    assert_eq!(&a.training[..], &direct[..opts.n0]);
}

#[test]
fn generous_batteries_on_every_device_shrink_the_spread() {
    let net = builtin_case(IEEE33_MODIFIED).unwrap();
    let x = draw(&net, &spread(&net), 120, 3, "mid");
    let mut big = net.clone();
    for u in &mut big.bess_units {
        u.p_min = -1.0;
        u.p_max = 1.0;
        u.capacity = 4.0;
        u.soc = 2.0;
    }
    let big = big.with_bess(big.bess_units.clone()).unwrap();
    let all: Vec<usize> = (0..big.random_devices.len()).collect();
    let plan = aggregate_by_branch(&big, &all).unwrap();
    let means = device_means(&big, &x).unwrap();
    let windows: Vec<SocWindow> = plan.units.iter().map(|u| SocWindow::at(u.soc)).collect();
    let nominal: Vec<f64> = plan.units.iter().map(|u| u.soc).collect();
    let cmds = slot_commands(&big, &plan, &x, &means, &windows, &nominal, 1.0, 1).unwrap();
    let post_net = plan.apply(&big).unwrap();
    let cpf = AssessOptions::default().cpf;
    let pre = evaluate_lambdas(&big, &x, None, &cpf).unwrap();
    let post = evaluate_lambdas(&post_net, &x, Some(&cmds.commands), &cpf).unwrap();
    assert!(variance(&post) < 0.25 * variance(&pre), "{} vs {}", variance(&post), variance(&pre));
}

#[test]
fn state_of_charge_carries_between_slots() {
    let net = builtin_case(IEEE33_MODIFIED).unwrap();
    let opts = small_opts();
    let eopts = EnhanceOptions::default();
    let mut soc = SocState::default();
    let first = draw(&net, &spread(&net), 150, 4, "a");
    let pre = assess_slot(&net, &first, None, &opts).unwrap();
    let e1 = enhance_slot(&net, &first, pre, &mut soc, &opts, &eopts).unwrap();
    assert!(!e1.plan.assignments.is_empty());
    for (k, u) in e1.plan.units.iter().enumerate() {
        let (w, nominal) = soc.get(&u.id).unwrap();
        assert_eq!(w, e1.commands.windows_after[k]);
        assert_eq!(nominal, e1.commands.nominal_after[k]);
        assert!(w.lo <= nominal && nominal <= w.hi);
        assert!(w.lo >= 0.0 && w.hi <= u.capacity);
    }

    let second = draw(&net, &spread(&net), 150, 5, "b");
    let pre = assess_slot(&net, &second, None, &opts).unwrap();
    let before = soc.clone();
    let e2 = enhance_slot(&net, &second, pre, &mut soc, &opts, &eopts).unwrap();
    for (k, u) in e2.plan.units.iter().enumerate() {
        let start = before.get(&u.id).map_or(SocWindow::at(u.soc), |s| s.0);
        for row in &e2.commands.commands {
            assert!(start.lo - row[k] >= -1e-12);
            assert!(start.hi - row[k] <= u.capacity + 1e-12);
        }
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let net = builtin_case(IEEE33_MODIFIED).unwrap();
    let x = draw(&net, &spread(&net), 60, 6, "mid");
    let cpf = AssessOptions::default().cpf;
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| evaluate_lambdas(&net, &x, None, &cpf).unwrap())
    };
    assert_eq!(run(1), run(4));
}
