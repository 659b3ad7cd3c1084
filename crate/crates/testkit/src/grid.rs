//! Dense λ scan with a test-side power flow: the last grid point before the
//! first infeasible or unsolvable one.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rsc_core::network::{BusKind, Generator, Network};
use rsc_core::powerflow::Injections;

pub const SCAN_STEP: f64 = 1e-5;

/// Base injections: loads plus generator set points at their power factor.
pub fn base_injections(net: &Network) -> Injections {
    let n = net.n_bus();
    let mut inj = Injections::zeros(n);
    for (k, b) in net.buses.iter().enumerate() {
        inj.p[k] -= b.base_load_p;
        inj.q[k] -= b.base_load_q;
    }
    for g in &net.generators {
        let k = net.bus_pos(g.bus).unwrap();
        if net.buses[k].kind != BusKind::Slack {
            inj.p[k] += g.p_set;
            inj.q[k] += g.p_set * (g.power_factor.acos().tan());
        }
    }
    inj
}

/// Test-side model: its own admittance matrix, a Newton solver with a
/// finite-difference Jacobian, and its own limit checks. Non-slack buses are
/// all constant-power.
pub struct GridOracle<'a> {
    net: &'a Network,
    y: DMatrix<Complex64>,
    base: Injections,
    /// Dispatchable generators that ramp with λ: bus position, share of the
    /// ramp and reactive ratio.
    ramps: Vec<(usize, f64, f64)>,
}

impl<'a> GridOracle<'a> {
    pub fn new(net: &'a Network, base: Injections) -> Self {
        let n = net.n_bus();
        let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
        for br in &net.branches {
            let (i, j) = (net.bus_pos(br.from_bus).unwrap(), net.bus_pos(br.to_bus).unwrap());
            let yb = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
            y[(i, i)] += yb;
            y[(j, j)] += yb;
            y[(i, j)] -= yb;
            y[(j, i)] -= yb;
        }
        let dispatch: Vec<&Generator> = net.generators.iter().filter(|g| g.dispatchable).collect();
        let mut dispatch_buses: Vec<usize> = dispatch.iter().map(|g| g.bus).collect();
        dispatch_buses.sort_unstable();
        dispatch_buses.dedup();
        let ramps = dispatch
            .iter()
            .map(|g| {
                let per_bus = dispatch.iter().filter(|h| h.bus == g.bus).count();
                let share = 1.0 / (dispatch_buses.len() * per_bus) as f64;
                (net.bus_pos(g.bus).unwrap(), share, g.power_factor.acos().tan())
            })
            .collect();
        GridOracle { net, y, base, ramps }
    }

    fn injections(&self, lambda: f64) -> (Vec<f64>, Vec<f64>) {
        let (mut p, mut q) = (self.base.p.clone(), self.base.q.clone());
        p[self.net.pcc_pos()] -= lambda;
        for &(k, share, ratio) in &self.ramps {
            p[k] += lambda * share;
            q[k] += lambda * share * ratio;
        }
        (p, q)
    }

    fn powers(&self, v: &[Complex64]) -> Vec<Complex64> {
        let n = v.len();
        (0..n)
            .map(|i| {
                let current: Complex64 = (0..n).map(|j| self.y[(i, j)] * v[j]).sum();
                v[i] * current.conj()
            })
            .collect()
    }

    fn to_voltages(&self, x: &DVector<f64>) -> Vec<Complex64> {
        let slack = self.net.slack_pos();
        let mut v = vec![Complex64::new(self.net.buses[slack].v_set, 0.0); self.net.n_bus()];
        let mut c = 0;
        for (k, vk) in v.iter_mut().enumerate() {
            if k != slack {
                *vk = Complex64::from_polar(x[c + 1], x[c]);
                c += 2;
            }
        }
        v
    }

    fn residual(&self, x: &DVector<f64>, p: &[f64], q: &[f64]) -> DVector<f64> {
        let s = self.powers(&self.to_voltages(x));
        let slack = self.net.slack_pos();
        let mut r = Vec::with_capacity(x.len());
        for k in 0..self.net.n_bus() {
            if k != slack {
                r.push(s[k].re - p[k]);
                r.push(s[k].im - q[k]);
            }
        }
        DVector::from_vec(r)
    }

    /// Newton iterations from `x`; `None` if they do not settle.
    pub fn solve(&self, lambda: f64, mut x: DVector<f64>) -> Option<DVector<f64>> {
        let (p, q) = self.injections(lambda);
        for _ in 0..50 {
            let f = self.residual(&x, &p, &q);
            if f.amax() < 1e-11 {
                return Some(x);
            }
            let m = x.len();
            let mut jac = DMatrix::zeros(m, m);
            for c in 0..m {
                let mut xp = x.clone();
                xp[c] += 1e-7;
                let fp = self.residual(&xp, &p, &q);
                jac.set_column(c, &((fp - &f) / 1e-7));
            }
            x -= jac.lu().solve(&f)?;
        }
        None
    }

    pub fn flat(&self) -> DVector<f64> {
        let m = 2 * (self.net.n_bus() - 1);
        DVector::from_fn(m, |i, _| if i % 2 == 0 { 0.0 } else { 1.0 })
    }

    pub fn feasible(&self, lambda: f64, x: &DVector<f64>) -> bool {
        let v = self.to_voltages(x);
        for (k, b) in self.net.buses.iter().enumerate() {
            let m = v[k].norm();
            if m < b.v_min || m > b.v_max {
                return false;
            }
        }
        for br in &self.net.branches {
            let (i, j) = (self.net.bus_pos(br.from_bus).unwrap(), self.net.bus_pos(br.to_bus).unwrap());
            let current = ((v[i] - v[j]) / Complex64::new(br.r, br.x)).norm();
            if br.i_max.is_some_and(|lim| current > lim) {
                return false;
            }
        }
        let s = self.powers(&v);
        for g in &self.net.generators {
            let k = self.net.bus_pos(g.bus).unwrap();
            let p = if self.net.buses[k].kind == BusKind::Slack {
                s[k].re - self.base.p[k]
            } else {
                let ramp: f64 = self
                    .ramps
                    .iter()
                    .filter(|r| r.0 == k)
                    .map(|r| r.1)
                    .next()
                    .filter(|_| g.dispatchable)
                    .unwrap_or(0.0);
                g.p_set + lambda * ramp
            };
            if p < g.p_min || p > g.p_max {
                return false;
            }
        }
        true
    }

    /// Last feasible grid point before the first infeasible or unsolvable one.
    pub fn scan(&self, cap: f64) -> f64 {
        let mut x = self.solve(0.0, self.flat()).expect("base case solves");
        assert!(self.feasible(0.0, &x), "base case must be feasible");
        let mut last = 0.0;
        let mut i = 1u64;
        loop {
            let lambda = i as f64 * SCAN_STEP;
            if lambda > cap {
                return last;
            }
            match self.solve(lambda, x.clone()) {
                Some(next) if self.feasible(lambda, &next) => {
                    x = next;
                    last = lambda;
                }
                _ => return last,
            }
            i += 1;
        }
    }
}
