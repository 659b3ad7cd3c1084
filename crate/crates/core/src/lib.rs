//! Probabilistic ramping support capability (RSC) assessment for microgrids.
//!
//! A deterministic transfer-limit search ([`cpf`]) on an AC power flow
//! ([`powerflow`]) gives the RSC of one realization of the uncertain PV, wind
//! and EV inputs ([`stochastic`]). A data-driven polynomial chaos surrogate
//! ([`pce`]) trained on a few hundred such evaluations replaces the solver for
//! large sample sets, its coefficients give Sobol' indices ([`sensitivity`]),
//! and BESS smoothing of the dominant inputs ([`enhancement`]) raises the
//! confidence-level RSC read off the resulting [`distribution`].

pub mod assess;
pub mod cpf;
pub mod distribution;
pub mod enhancement;
pub mod error;
pub mod network;
pub mod pce;
pub mod powerflow;
pub mod sensitivity;
pub mod stochastic;

pub use error::{Error, Result};
