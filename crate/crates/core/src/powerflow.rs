//! Polar Newton–Raphson AC power flow.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::network::{BusKind, Network};

/// Net specified injections per bus position (generation minus load), per-unit.
///
/// Entries at SLACK buses (and the reactive entry at PV buses) hold the known
/// non-generator part only; the power flow solves for the rest.
#[derive(Debug, Clone, PartialEq)]
pub struct Injections {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl Injections {
    pub fn zeros(n: usize) -> Injections {
        Injections {
            p: vec![0.0; n],
            q: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowState {
    pub theta: Vec<f64>,
    pub v: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub max_mismatch: f64,
}

impl PowerFlowState {
    pub fn flat(net: &Network) -> PowerFlowState {
        let v = net
            .buses
            .iter()
            .map(|b| match b.kind {
                BusKind::Slack | BusKind::Pv => b.v_set,
                _ => 1.0,
            })
            .collect();
        PowerFlowState {
            theta: vec![0.0; net.n_bus()],
            v,
            converged: false,
            iterations: 0,
            max_mismatch: f64::INFINITY,
        }
    }

    pub fn voltage(&self, pos: usize) -> Complex64 {
        Complex64::from_polar(self.v[pos], self.theta[pos])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PfOptions {
    /// Convergence threshold on the mismatch ∞-norm, per-unit.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PfOptions {
    fn default() -> Self {
        PfOptions {
            tol: 1e-8,
            max_iter: 30,
        }
    }
}

/// Solves from a flat start with default options.
pub fn solve(net: &Network, inj: &Injections) -> Result<PowerFlowState> {
    solve_with(net, inj, &PfOptions::default(), None)
}

/// Unknown layout: angles of all non-slack buses, then magnitudes of PQ buses.
struct Layout {
    pvpq: Vec<usize>,
    pq: Vec<usize>,
    /// Column of each bus's angle, `usize::MAX` for the slack.
    theta_col: Vec<usize>,
    /// Column of each bus's magnitude, `usize::MAX` unless PQ.
    v_col: Vec<usize>,
}

impl Layout {
    fn new(net: &Network) -> Layout {
        let n = net.n_bus();
        let mut pvpq = Vec::new();
        let mut pq = Vec::new();
        for (k, b) in net.buses.iter().enumerate() {
            match b.kind {
                BusKind::Slack => {}
                BusKind::Pv => pvpq.push(k),
                BusKind::Pq | BusKind::Pcc => {
                    pvpq.push(k);
                    pq.push(k);
                }
            }
        }
        let mut theta_col = vec![usize::MAX; n];
        let mut v_col = vec![usize::MAX; n];
        for (c, &k) in pvpq.iter().enumerate() {
            theta_col[k] = c;
        }
        for (c, &k) in pq.iter().enumerate() {
            v_col[k] = pvpq.len() + c;
        }
        Layout {
            pvpq,
            pq,
            theta_col,
            v_col,
        }
    }

    fn dim(&self) -> usize {
        self.pvpq.len() + self.pq.len()
    }
}

/// Computed bus injections `S_i = V_i · conj(Σ_j Y_ij V_j)`, split into P and Q.
pub fn bus_powers(net: &Network, theta: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let y = net.ybus();
    let n = net.n_bus();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        let (g, b) = (y.diag[i].re, y.diag[i].im);
        let mut pi = v[i] * v[i] * g;
        let mut qi = -v[i] * v[i] * b;
        for &(j, yij) in &y.off[i] {
            let t = theta[i] - theta[j];
            let (s, c) = t.sin_cos();
            let vv = v[i] * v[j];
            pi += vv * (yij.re * c + yij.im * s);
            qi += vv * (yij.re * s - yij.im * c);
        }
        p[i] = pi;
        q[i] = qi;
    }
    (p, q)
}

fn mismatch(net: &Network, layout: &Layout, inj: &Injections, theta: &[f64], v: &[f64]) -> (DVector<f64>, Vec<f64>, Vec<f64>) {
    let (p, q) = bus_powers(net, theta, v);
    let mut f = DVector::zeros(layout.dim());
    for (c, &k) in layout.pvpq.iter().enumerate() {
        f[c] = p[k] - inj.p[k];
    }
    let off = layout.pvpq.len();
    for (c, &k) in layout.pq.iter().enumerate() {
        f[off + c] = q[k] - inj.q[k];
    }
    (f, p, q)
}

fn jacobian(net: &Network, layout: &Layout, theta: &[f64], v: &[f64], p: &[f64], q: &[f64]) -> DMatrix<f64> {
    let y = net.ybus();
    let m = layout.dim();
    let off = layout.pvpq.len();
    let mut jac = DMatrix::zeros(m, m);
    for (ri, &i) in layout.pvpq.iter().enumerate() {
        let qi_row = layout.v_col[i];
        let qrow = (qi_row != usize::MAX).then(|| qi_row);
        let (gii, bii) = (y.diag[i].re, y.diag[i].im);

        // diagonal blocks
        jac[(ri, ri)] = -q[i] - bii * v[i] * v[i];
        if let Some(vc) = qrow {
            jac[(ri, vc)] = p[i] / v[i] + gii * v[i];
            jac[(vc, ri)] = p[i] - gii * v[i] * v[i];
            jac[(vc, vc)] = q[i] / v[i] - bii * v[i];
        }

        for &(j, yij) in &y.off[i] {
            let t = theta[i] - theta[j];
            let (s, c) = t.sin_cos();
            let (g, b) = (yij.re, yij.im);
            let gs_bc = g * s - b * c;
            let gc_bs = g * c + b * s;
            let tj = layout.theta_col[j];
            let vj = layout.v_col[j];
            if tj != usize::MAX {
                jac[(ri, tj)] = v[i] * v[j] * gs_bc;
                if let Some(vc) = qrow {
                    jac[(vc, tj)] = -v[i] * v[j] * gc_bs;
                }
            }
            if vj != usize::MAX {
                jac[(ri, vj)] = v[i] * gc_bs;
                if let Some(vc) = qrow {
                    jac[(vc, vj)] = v[i] * gs_bc;
                }
            }
        }
    }
    debug_assert_eq!(off, layout.pvpq.len());
    jac
}

/// Mismatch vector `[ΔP (non-slack); ΔQ (PQ)]` at a given state. Exposed for
/// derivative checks.
pub fn mismatch_vector(net: &Network, inj: &Injections, theta: &[f64], v: &[f64]) -> Vec<f64> {
    let layout = Layout::new(net);
    mismatch(net, &layout, inj, theta, v).0.iter().copied().collect()
}

/// Analytic Jacobian of [`mismatch_vector`] with respect to
/// `[θ (non-slack); V (PQ)]`, row-major.
pub fn jacobian_matrix(net: &Network, theta: &[f64], v: &[f64]) -> DMatrix<f64> {
    let layout = Layout::new(net);
    let (p, q) = bus_powers(net, theta, v);
    jacobian(net, &layout, theta, v, &p, &q)
}

/// Newton–Raphson from `warm` (or a flat start).
///
/// A run that hits `max_iter`, produces non-finite values or drives a voltage
/// magnitude to zero comes back with `converged = false`.
pub fn solve_with(
    net: &Network,
    inj: &Injections,
    opts: &PfOptions,
    warm: Option<&PowerFlowState>,
) -> Result<PowerFlowState> {
    let n = net.n_bus();
    if inj.p.len() != n || inj.q.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: inj.p.len().min(inj.q.len()),
        });
    }
    let layout = Layout::new(net);
    let mut state = PowerFlowState::flat(net);
    if let Some(w) = warm {
        state.theta.copy_from_slice(&w.theta);
        for &k in &layout.pq {
            state.v[k] = w.v[k];
        }
    }

    let mut iterations = 0;
    loop {
        let (f, p, q) = mismatch(net, &layout, inj, &state.theta, &state.v);
        let norm = f.amax();
        state.max_mismatch = norm;
        if !norm.is_finite() {
            break;
        }
        if norm <= opts.tol {
            state.converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        let jac = jacobian(net, &layout, &state.theta, &state.v, &p, &q);
        let dx = jac
            .lu()
            .solve(&(-f))
            .ok_or(Error::SingularJacobian { iteration: iterations })?;
        for (c, &k) in layout.pvpq.iter().enumerate() {
            state.theta[k] += dx[c];
        }
        let off = layout.pvpq.len();
        for (c, &k) in layout.pq.iter().enumerate() {
            state.v[k] += dx[off + c];
        }
        iterations += 1;
        if state.v.iter().any(|&x| !(x > 0.0)) {
            break;
        }
    }
    state.iterations = iterations;
    Ok(state)
}

/// Current magnitude of every branch, per-unit.
pub fn branch_currents(net: &Network, state: &PowerFlowState) -> Result<Vec<f64>> {
    if !state.converged {
        return Err(Error::Unconverged);
    }
    Ok(net
        .branches
        .iter()
        .map(|br| {
            let i = net.pos_of(br.from_bus);
            let j = net.pos_of(br.to_bus);
            ((state.voltage(i) - state.voltage(j)) * br.admittance()).norm()
        })
        .collect())
}

/// Total series losses, per-unit active power.
pub fn active_losses(net: &Network, state: &PowerFlowState) -> Result<f64> {
    let currents = branch_currents(net, state)?;
    Ok(net
        .branches
        .iter()
        .zip(currents)
        .map(|(br, i)| br.r * i * i)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Branch, Bus, Network, NetworkParts};

    fn bus(id: usize, kind: BusKind, p: f64, q: f64) -> Bus {
        Bus {
            id,
            kind,
            base_load_p: p,
            base_load_q: q,
            v_min: 0.9,
            v_max: 1.1,
            v_set: 1.0,
        }
    }

    fn two_bus(p: f64, q: f64) -> Network {
        Network::new(NetworkParts {
            s_base: 100.0,
            v_base_kv: 12.66,
            buses: vec![bus(1, BusKind::Pcc, p, q), bus(2, BusKind::Slack, 0.0, 0.0)],
            branches: vec![Branch {
                from_bus: 1,
                to_bus: 2,
                r: 0.01,
                x: 0.01,
                i_max: None,
            }],
            ..Default::default()
        })
        .unwrap()
    }

    fn loads(net: &Network) -> Injections {
        Injections {
            p: net.buses.iter().map(|b| -b.base_load_p).collect(),
            q: net.buses.iter().map(|b| -b.base_load_q).collect(),
        }
    }

    #[test]
    fn flat_no_load_solution() {
        let net = two_bus(0.0, 0.0);
        let st = solve(&net, &Injections::zeros(2)).unwrap();
        assert!(st.converged);
        assert_eq!(st.iterations, 0);
        assert_eq!(st.v, vec![1.0, 1.0]);
        assert_eq!(st.theta, vec![0.0, 0.0]);
        assert_eq!(branch_currents(&net, &st).unwrap(), vec![0.0]);
    }

    /// Fixed-point oracle for the 2-bus feeder: V = Vs − z·conj(S/V).
    fn two_bus_sweep(z: Complex64, s_load: Complex64) -> Complex64 {
        let vs = Complex64::new(1.0, 0.0);
        let mut v = vs;
        for _ in 0..200 {
            v = vs - z * (s_load / v).conj();
        }
        v
    }

    #[test]
    fn two_bus_loaded_matches_sweep() {
        let net = two_bus(0.1, 0.05);
        let st = solve(&net, &loads(&net)).unwrap();
        assert!(st.converged);
        let s = Complex64::new(0.1, 0.05);
        let v = two_bus_sweep(Complex64::new(0.01, 0.01), s);
        assert!((st.voltage(0) - v).norm() < 1e-8);
        let i = branch_currents(&net, &st).unwrap()[0];
        assert!((i - (s / st.voltage(0)).norm()).abs() < 1e-8);
    }

    #[test]
    fn warm_start_agrees_with_flat_start() {
        let net = two_bus(0.3, 0.1);
        let inj = loads(&net);
        let a = solve(&net, &inj).unwrap();
        let b = solve_with(&net, &inj, &PfOptions::default(), Some(&a)).unwrap();
        assert!(b.converged);
        for k in 0..2 {
            assert!((a.v[k] - b.v[k]).abs() < 1e-8 && (a.theta[k] - b.theta[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn non_convergence_is_reported_not_faked() {
        // Far beyond the nose of a 2-bus line.
        let net = two_bus(40.0, 20.0);
        let st = solve(&net, &loads(&net)).unwrap();
        assert!(!st.converged);
        assert!(branch_currents(&net, &st).is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let net = two_bus(0.0, 0.0);
        assert!(solve(&net, &Injections::zeros(3)).is_err());
    }
}
