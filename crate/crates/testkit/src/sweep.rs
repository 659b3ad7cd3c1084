//! Backward/forward sweep load flow and finite-difference Jacobian checks.

use std::collections::VecDeque;

use num_complex::Complex64;
use rsc_core::network::{BusKind, Network};
use rsc_core::powerflow::{jacobian_matrix, mismatch_vector, Injections};

/// Bus voltages of a radial network with constant-power injections and no
/// shunts, by backward/forward sweep rooted at the slack bus.
pub fn sweep(net: &Network, inj: &Injections) -> Vec<Complex64> {
    let n = net.n_bus();
    let root = net.slack_pos();
    let mut adj: Vec<Vec<(usize, Complex64)>> = vec![Vec::new(); n];
    for br in &net.branches {
        let (i, j) = (net.bus_pos(br.from_bus).unwrap(), net.bus_pos(br.to_bus).unwrap());
        let z = Complex64::new(br.r, br.x);
        adj[i].push((j, z));
        adj[j].push((i, z));
    }
    // breadth-first order with parent links
    let mut order = Vec::with_capacity(n);
    let mut parent = vec![(usize::MAX, Complex64::new(0.0, 0.0)); n];
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([root]);
    seen[root] = true;
    while let Some(i) = queue.pop_front() {
        order.push(i);
        for &(j, z) in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                parent[j] = (i, z);
                queue.push_back(j);
            }
        }
    }
    assert_eq!(order.len(), n, "network is not connected");

    let mut v = vec![Complex64::new(net.buses[root].v_set, 0.0); n];
    for _ in 0..10_000 {
        // current drawn by each subtree
        let mut drawn: Vec<Complex64> = (0..n)
            .map(|k| -(Complex64::new(inj.p[k], inj.q[k]) / v[k]).conj())
            .collect();
        for &k in order.iter().rev() {
            if k != root {
                let c = drawn[k];
                drawn[parent[k].0] += c;
            }
        }
        let mut change: f64 = 0.0;
        for &k in &order {
            if k != root {
                let (p, z) = parent[k];
                let next = v[p] - z * drawn[k];
                change = change.max((next - v[k]).norm());
                v[k] = next;
            }
        }
        if change < 1e-14 {
            return v;
        }
    }
    panic!("sweep did not converge");
}

/// Largest entrywise gap between the analytic Jacobian at `(theta, v)` and
/// central differences of the mismatch with step `h`, relative to
/// `max(|J|, 1)`.
pub fn jacobian_gap(net: &Network, inj: &Injections, theta: &[f64], v: &[f64], h: f64) -> f64 {
    let jac = jacobian_matrix(net, theta, v);
    let angles = (0..net.n_bus()).filter(|&k| net.buses[k].kind != BusKind::Slack).map(|k| (true, k));
    let mags = (0..net.n_bus())
        .filter(|&k| matches!(net.buses[k].kind, BusKind::Pq | BusKind::Pcc))
        .map(|k| (false, k));
    let cols: Vec<(bool, usize)> = angles.chain(mags).collect();
    assert_eq!(jac.ncols(), cols.len());
    let mut worst: f64 = 0.0;
    for (c, &(is_angle, k)) in cols.iter().enumerate() {
        let eval = |delta: f64| {
            let (mut th, mut vm) = (theta.to_vec(), v.to_vec());
            if is_angle {
                th[k] += delta;
            } else {
                vm[k] += delta;
            }
            mismatch_vector(net, inj, &th, &vm)
        };
        let (fp, fm) = (eval(h), eval(-h));
        for r in 0..jac.nrows() {
            let fd = (fp[r] - fm[r]) / (2.0 * h);
            let an = jac[(r, c)];
            worst = worst.max((fd - an).abs() / an.abs().max(1.0));
        }
    }
    worst
}
