//! Deterministic ramping support capability: the largest transfer λ along the
//! network's direction that keeps every security limit satisfied.
//!
//! The search steps λ with doubling increments, each step a converged power
//! flow warm-started from the last feasible state, then bisects between the
//! last feasible and the first infeasible λ. A power flow that fails to
//! converge marks the nose of the PV curve. Inside the final bracket the
//! binding limit's margin is interpolated, so the result is not tied to the
//! bisection grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{BusKind, Network};
use crate::powerflow::{self, bus_powers, Injections, PfOptions, PowerFlowState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpfOptions {
    /// Width of the final bracket on λ, per-unit.
    pub lambda_tol: f64,
    /// Search cap on λ, per-unit.
    pub max_lambda: f64,
    /// First increment of the doubling phase, per-unit.
    pub initial_step: f64,
    pub pf: PfOptions,
}

impl Default for CpfOptions {
    fn default() -> Self {
        CpfOptions {
            lambda_tol: 1e-4,
            max_lambda: 10.0,
            initial_step: 1e-2,
            pf: PfOptions::default(),
        }
    }
}

/// Limit that stops the transfer increase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Binding {
    /// Bus voltage limit, by bus position.
    Voltage(usize),
    /// Branch thermal limit, by branch index.
    Thermal(usize),
    /// Generator active limit, by generator index.
    GenP(usize),
    /// Generator reactive limit, by generator index.
    GenQ(usize),
    /// Power flow lost its solution.
    Nose,
    /// The search reached `max_lambda` without hitting a limit.
    LambdaCap,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub constraint: Binding,
    pub value: f64,
    pub limit: f64,
}

impl Violation {
    /// Excess over the limit relative to the limit's magnitude.
    pub fn severity(&self) -> f64 {
        (self.value - self.limit).abs() / self.limit.abs().max(1e-9)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RscResult {
    pub lambda: f64,
    pub binding: Binding,
    pub state_at_limit: PowerFlowState,
}

/// Injections at transfer level `lambda`: the direction's generator increments
/// (with their power-factor reactive share) and the PCC export on top of `fixed`.
pub fn injections_at(net: &Network, fixed: &Injections, lambda: f64) -> Injections {
    let mut inj = fixed.clone();
    let slack = net.slack_pos();
    for (k, e) in net.direction().entries().iter().enumerate() {
        if k == slack {
            continue;
        }
        if e.dp_gen != 0.0 {
            let dp = lambda * e.dp_gen;
            inj.p[k] += dp;
            if net.buses[k].kind != BusKind::Pv {
                // share of the increment taken by each dispatchable unit on the bus
                let units: Vec<_> = net
                    .generators
                    .iter()
                    .filter(|g| g.dispatchable && net.pos_of(g.bus) == k)
                    .collect();
                let share = dp / units.len() as f64;
                inj.q[k] += units.iter().map(|g| share * g.q_ratio()).sum::<f64>();
            }
        }
        inj.p[k] -= lambda * e.dp_load;
        inj.q[k] -= lambda * e.dq_load;
    }
    inj
}

/// Active and reactive output of every generator at a solved state.
pub fn generator_outputs(
    net: &Network,
    fixed: &Injections,
    state: &PowerFlowState,
    lambda: f64,
) -> Vec<(f64, f64)> {
    let (p_calc, q_calc) = bus_powers(net, &state.theta, &state.v);
    net.generators
        .iter()
        .map(|g| {
            let k = net.pos_of(g.bus);
            let kind = net.buses[k].kind;
            let ramp = if g.dispatchable {
                let units = net
                    .generators
                    .iter()
                    .filter(|h| h.dispatchable && h.bus == g.bus)
                    .count();
                lambda * net.direction().entry(k).dp_gen / units as f64
            } else {
                0.0
            };
            match kind {
                BusKind::Slack => (p_calc[k] - fixed.p[k], q_calc[k] - fixed.q[k]),
                BusKind::Pv => (g.p_set + ramp, q_calc[k] - fixed.q[k]),
                _ => {
                    let p = g.p_set + ramp;
                    (p, p * g.q_ratio())
                }
            }
        })
        .collect()
}

/// Every voltage, thermal and generator limit violated at `state`.
pub fn check_limits(
    net: &Network,
    fixed: &Injections,
    state: &PowerFlowState,
    lambda: f64,
) -> Result<Vec<Violation>> {
    let currents = powerflow::branch_currents(net, state)?;
    let mut out = Vec::new();
    for (k, b) in net.buses.iter().enumerate() {
        let v = state.v[k];
        if v < b.v_min {
            out.push(Violation {
                constraint: Binding::Voltage(k),
                value: v,
                limit: b.v_min,
            });
        } else if v > b.v_max {
            out.push(Violation {
                constraint: Binding::Voltage(k),
                value: v,
                limit: b.v_max,
            });
        }
    }
    for (k, (br, i)) in net.branches.iter().zip(currents).enumerate() {
        if let Some(i_max) = br.i_max {
            if i > i_max {
                out.push(Violation {
                    constraint: Binding::Thermal(k),
                    value: i,
                    limit: i_max,
                });
            }
        }
    }
    for (k, (g, (p, q))) in net
        .generators
        .iter()
        .zip(generator_outputs(net, fixed, state, lambda))
        .enumerate()
    {
        if p < g.p_min || p > g.p_max {
            out.push(Violation {
                constraint: Binding::GenP(k),
                value: p,
                limit: if p < g.p_min { g.p_min } else { g.p_max },
            });
        }
        if q < g.q_min || q > g.q_max {
            out.push(Violation {
                constraint: Binding::GenQ(k),
                value: q,
                limit: if q < g.q_min { g.q_min } else { g.q_max },
            });
        }
    }
    Ok(out)
}

/// Value of the quantity limited by `c` at a solved state.
fn constraint_value(net: &Network, fixed: &Injections, state: &PowerFlowState, lambda: f64, c: Binding) -> Result<f64> {
    Ok(match c {
        Binding::Voltage(k) => state.v[k],
        Binding::Thermal(k) => powerflow::branch_currents(net, state)?[k],
        Binding::GenP(k) => generator_outputs(net, fixed, state, lambda)[k].0,
        Binding::GenQ(k) => generator_outputs(net, fixed, state, lambda)[k].1,
        Binding::Nose | Binding::LambdaCap => f64::NAN,
    })
}

/// Distance of `value` from the limit `v` was found beyond, positive on the
/// feasible side.
fn margin(v: &Violation, value: f64) -> f64 {
    if v.value > v.limit {
        v.limit - value
    } else {
        value - v.limit
    }
}

/// Fraction of the final bracket kept between the interpolated crossing and
/// the returned point, so that curvature of the margin does not land it on
/// the infeasible side.
const CROSSING_GUARD: f64 = 1e-3;
const REFINE_PROBES: usize = 3;

enum Probe {
    Feasible(PowerFlowState),
    Infeasible(Binding, Option<Violation>),
}

fn probe(
    net: &Network,
    fixed: &Injections,
    lambda: f64,
    warm: Option<&PowerFlowState>,
    opts: &CpfOptions,
) -> Result<Probe> {
    let inj = injections_at(net, fixed, lambda);
    let state = match powerflow::solve_with(net, &inj, &opts.pf, warm) {
        Ok(s) => s,
        Err(Error::SingularJacobian { .. }) => return Ok(Probe::Infeasible(Binding::Nose, None)),
        Err(e) => return Err(e),
    };
    if !state.converged {
        return Ok(Probe::Infeasible(Binding::Nose, None));
    }
    let violations = check_limits(net, fixed, &state, lambda)?;
    match violations
        .iter()
        .max_by(|a, b| a.severity().total_cmp(&b.severity()))
    {
        Some(v) => Ok(Probe::Infeasible(v.constraint, Some(*v))),
        None => Ok(Probe::Feasible(state)),
    }
}

/// Largest feasible transfer for the realization whose non-λ injections are
/// `fixed` (see [`crate::stochastic::assemble_injections`]).
pub fn max_lambda(net: &Network, fixed: &Injections, opts: &CpfOptions) -> Result<RscResult> {
    if !(opts.lambda_tol > 0.0 && opts.initial_step > 0.0 && opts.max_lambda > 0.0) {
        return Err(Error::InvalidArgument(
            "lambda_tol, initial_step and max_lambda must be positive".into(),
        ));
    }
    let base = match probe(net, fixed, 0.0, None, opts)? {
        Probe::Feasible(s) => s,
        Probe::Infeasible(_, Some(v)) => {
            return Err(Error::InfeasibleBase(format!(
                "limit {:?} violated at λ = 0 (value {:.6}, limit {:.6})",
                v.constraint, v.value, v.limit
            )))
        }
        Probe::Infeasible(_, None) => {
            return Err(Error::InfeasibleBase("power flow does not converge at λ = 0".into()))
        }
    };

    let mut lo = 0.0;
    let mut lo_state = base;
    let mut step = opts.initial_step;
    let (mut hi, mut hi_binding, mut hi_violation);
    loop {
        let trial = (lo + step).min(opts.max_lambda);
        match probe(net, fixed, trial, Some(&lo_state), opts)? {
            Probe::Feasible(s) => {
                lo = trial;
                lo_state = s;
                if trial >= opts.max_lambda {
                    return Ok(RscResult {
                        lambda: lo,
                        binding: Binding::LambdaCap,
                        state_at_limit: lo_state,
                    });
                }
                step *= 2.0;
            }
            Probe::Infeasible(b, v) => {
                hi = trial;
                hi_binding = b;
                hi_violation = v;
                break;
            }
        }
    }

    while hi - lo > opts.lambda_tol {
        let mid = 0.5 * (lo + hi);
        match probe(net, fixed, mid, Some(&lo_state), opts)? {
            Probe::Feasible(s) => {
                lo = mid;
                lo_state = s;
            }
            Probe::Infeasible(b, v) => {
                hi = mid;
                hi_binding = b;
                hi_violation = v;
            }
        }
    }

    // regula falsi on the binding margin, keeping `lo` feasible
    for _ in 0..REFINE_PROBES {
        let Some(v) = hi_violation else { break };
        let m_lo = margin(&v, constraint_value(net, fixed, &lo_state, lo, v.constraint)?);
        let m_hi = margin(&v, v.value);
        if !(m_lo >= 0.0 && m_hi < 0.0) {
            break;
        }
        let crossing = lo + (hi - lo) * m_lo / (m_lo - m_hi);
        let candidate = crossing - CROSSING_GUARD * (hi - lo);
        if !(candidate > lo && candidate < hi) {
            break;
        }
        match probe(net, fixed, candidate, Some(&lo_state), opts)? {
            Probe::Feasible(s) => {
                lo = candidate;
                lo_state = s;
                break;
            }
            Probe::Infeasible(b, v) => {
                hi = candidate;
                hi_binding = b;
                hi_violation = v;
            }
        }
    }
    Ok(RscResult {
        lambda: lo,
        binding: hi_binding,
        state_at_limit: lo_state,
    })
}
