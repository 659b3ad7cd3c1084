//! Data-driven sparse polynomial chaos expansion.
//!
//! Inputs are standardized column-wise, univariate orthonormal polynomials are
//! built from raw moments alone (no assumed marginal), multivariate terms are
//! products over a total-degree truncation set, and coefficients come from a
//! least-squares fit followed by one pruning-and-refit pass.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stochastic::{raw_moments, Column, MomentTable, SampleSet, Standardization};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// Condition number above which moment systems and design matrices are
/// treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Per-variable polynomial degrees.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn zero(d: usize) -> MultiIndex {
        MultiIndex(vec![0; d])
    }

    pub fn total_degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&a| a == 0)
    }

    /// Variables with a nonzero degree, ascending.
    pub fn support(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &a)| a > 0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// All multi-indices with `‖α‖₁ ≤ q` in graded lexicographic order: by total
/// degree, then with larger leading components first.
pub fn build_truncation(d: usize, q: usize) -> Vec<MultiIndex> {
    fn fill(prefix: &mut Vec<u32>, remaining: usize, left: u32, out: &mut Vec<MultiIndex>) {
        if remaining == 1 {
            prefix.push(left);
            out.push(MultiIndex(prefix.clone()));
            prefix.pop();
            return;
        }
        for a in (0..=left).rev() {
            prefix.push(a);
            fill(prefix, remaining - 1, left - a, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if d == 0 {
        out.push(MultiIndex(Vec::new()));
        return out;
    }
    for t in 0..=q as u32 {
        fill(&mut Vec::with_capacity(d), d, t, &mut out);
    }
    out
}

/// Number of terms in the total-degree truncation, `C(d + q, q)`.
pub fn truncation_size(d: usize, q: usize) -> usize {
    let mut c: u128 = 1;
    for k in 1..=q as u128 {
        c = c * (d as u128 + k) / k;
    }
    c as usize
}

/// Coefficients (ascending powers) of the degree-`degree` orthonormal
/// polynomial of variable `var`.
///
/// The monic polynomial solves the moment system whose first `degree` rows
/// are `Σ_j μ_{k+j} p_j = 0` and whose last row fixes `p_degree = 1`; it is
/// then scaled to unit norm `Σ_{j,k} p_j p_k μ_{j+k} = 1`.
pub fn univariate_basis(moments: &MomentTable, var: usize, degree: usize) -> Result<Vec<f64>> {
    let mu = &moments.moments[var];
    if mu.len() < 2 * degree + 1 {
        return Err(Error::TooFewSamples {
            needed: 2 * degree + 1,
            got: mu.len(),
        });
    }
    if degree == 0 {
        return Ok(vec![1.0 / mu[0].sqrt()]);
    }
    let m = degree + 1;
    let mut a = DMatrix::zeros(m, m);
    for k in 0..degree {
        for j in 0..m {
            a[(k, j)] = mu[k + j];
        }
    }
    a[(degree, degree)] = 1.0;
    let singular = |condition: f64| Error::SingularHankel {
        var,
        degree,
        condition,
    };
    let sv = a.singular_values();
    let condition = sv.max() / sv.min();
    if !(condition <= MAX_CONDITION) {
        return Err(singular(condition));
    }
    let mut rhs = DVector::zeros(m);
    rhs[degree] = 1.0;
    let p = a.lu().solve(&rhs).ok_or_else(|| singular(f64::INFINITY))?;
    let mut norm2 = 0.0;
    for j in 0..m {
        for k in 0..m {
            norm2 += p[j] * p[k] * mu[j + k];
        }
    }
    if !(norm2 > 0.0) {
        return Err(singular(condition));
    }
    let s = norm2.sqrt();
    Ok(p.iter().map(|c| c / s).collect())
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Standardization plus moments of the input distribution the basis is
/// orthonormal under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputModel {
    pub standardization: Standardization,
    pub moments: MomentTable,
}

impl InputModel {
    /// Standardizes `samples` and takes their empirical moments up to `2q`.
    pub fn from_samples(samples: &SampleSet, q: usize) -> Result<InputModel> {
        let standardization = Standardization::fit(samples);
        let z = standardization.apply(samples);
        let mut moments = raw_moments(&z, 2 * q)?;
        moments.degenerate = standardization.degenerate.clone();
        Ok(InputModel {
            standardization,
            moments,
        })
    }
}

/// Orthonormal univariate polynomials, `coeffs[var][degree]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnivariateBasis {
    pub coeffs: Vec<Vec<Vec<f64>>>,
}

impl UnivariateBasis {
    pub fn build(moments: &MomentTable, q: usize) -> Result<UnivariateBasis> {
        let coeffs = (0..moments.n_vars())
            .map(|var| {
                if moments.degenerate[var] {
                    Ok(vec![vec![1.0]])
                } else {
                    (0..=q).map(|d| univariate_basis(moments, var, d)).collect()
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(UnivariateBasis { coeffs })
    }

    pub fn eval(&self, var: usize, degree: usize, x: f64) -> f64 {
        horner(&self.coeffs[var][degree], x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Terms with `c² < sparsity · Σ c²` are dropped before the refit.
    pub sparsity: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { sparsity: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n_train: usize,
    pub n_candidates: usize,
    pub n_retained: usize,
    /// Leave-one-out error relative to the response variance.
    pub loo_error: f64,
    /// Condition number of the final design matrix.
    pub condition_number: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PceModel {
    pub schema_version: u32,
    pub degree: usize,
    pub columns: Vec<Column>,
    pub input: InputModel,
    pub basis: UnivariateBasis,
    pub indices: Vec<MultiIndex>,
    pub coefficients: Vec<f64>,
    pub diagnostics: Diagnostics,
}

impl PceModel {
    pub fn n_vars(&self) -> usize {
        self.columns.len()
    }

    /// Expectation of the surrogate, `c₀`.
    pub fn mean(&self) -> f64 {
        self.indices
            .iter()
            .zip(&self.coefficients)
            .find(|(a, _)| a.is_zero())
            .map_or(0.0, |(_, c)| *c)
    }

    /// Surrogate variance, `Σ_{α≠0} c_α²`.
    pub fn variance(&self) -> f64 {
        self.indices
            .iter()
            .zip(&self.coefficients)
            .filter(|(a, _)| !a.is_zero())
            .map(|(_, c)| c * c)
            .sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<PceModel> {
        let m: PceModel = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if m.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::Parse(format!(
                "unsupported model schema version {}",
                m.schema_version
            )));
        }
        Ok(m)
    }
}

/// `Ψ_α(z)` for a standardized row `z`.
pub fn eval_basis(basis: &UnivariateBasis, alpha: &MultiIndex, z: &[f64]) -> f64 {
    alpha
        .0
        .iter()
        .enumerate()
        .filter(|(_, &a)| a > 0)
        .map(|(i, &a)| basis.eval(i, a as usize, z[i]))
        .product()
}

struct Lsq {
    coefficients: Vec<f64>,
    condition: f64,
    loo: f64,
}

fn least_squares(psi: &DMatrix<f64>, y: &DVector<f64>) -> Result<Lsq> {
    let svd = psi.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = smax / smin;
    if !(condition <= MAX_CONDITION) {
        return Err(Error::RankDeficient { condition });
    }
    let u = svd.u.as_ref().expect("u computed");
    let v_t = svd.v_t.as_ref().expect("v_t computed");
    let uty = u.transpose() * y;
    let scaled = DVector::from_iterator(
        uty.len(),
        uty.iter().zip(svd.singular_values.iter()).map(|(a, s)| a / s),
    );
    let c = v_t.transpose() * scaled;

    let fitted = psi * &c;
    let n = y.len();
    let mean = y.mean();
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let mut press = 0.0;
    for i in 0..n {
        let h: f64 = u.row(i).iter().map(|x| x * x).sum();
        let r = (y[i] - fitted[i]) / (1.0 - h).max(1e-12);
        press += r * r;
    }
    let loo = if var > 0.0 { press / n as f64 / var } else { 0.0 };
    Ok(Lsq {
        coefficients: c.iter().copied().collect(),
        condition,
        loo,
    })
}

fn design_matrix(basis: &UnivariateBasis, indices: &[MultiIndex], z: &SampleSet) -> DMatrix<f64> {
    DMatrix::from_fn(z.n_rows(), indices.len(), |r, c| eval_basis(basis, &indices[c], z.row(r)))
}

/// Fits with the input model taken from the training samples themselves.
pub fn fit(samples: &SampleSet, responses: &[f64], q: usize, opts: &FitOptions) -> Result<PceModel> {
    let input = InputModel::from_samples(samples, q)?;
    fit_with_input(samples, responses, q, input, opts)
}

/// Fits on `samples` / `responses` with the basis orthonormal under `input`.
///
/// `input` can come from a larger unlabeled sample of the same inputs or from
/// analytic moments. Zero-variance inputs are left out of the basis.
pub fn fit_with_input(
    samples: &SampleSet,
    responses: &[f64],
    q: usize,
    input: InputModel,
    opts: &FitOptions,
) -> Result<PceModel> {
    let n = samples.n_rows();
    let d = samples.n_cols();
    if responses.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: responses.len(),
        });
    }
    if responses.iter().any(|r| !r.is_finite()) {
        return Err(Error::InvalidArgument("non-finite response".into()));
    }
    if input.moments.n_vars() != d || input.standardization.mean.len() != d {
        return Err(Error::Dimension {
            expected: d,
            got: input.moments.n_vars(),
        });
    }
    if input.moments.max_order() < 2 * q {
        return Err(Error::InvalidArgument(format!(
            "moments up to order {} needed, table has {}",
            2 * q,
            input.moments.max_order()
        )));
    }

    let active: Vec<usize> = (0..d)
        .filter(|&i| !input.moments.degenerate[i] && !input.standardization.degenerate[i])
        .collect();
    let mut moments = input.moments.clone();
    for i in 0..d {
        if !active.contains(&i) {
            moments.degenerate[i] = true;
        }
    }
    let basis = UnivariateBasis::build(&moments, q)?;

    let indices: Vec<MultiIndex> = build_truncation(active.len(), q)
        .into_iter()
        .map(|a| {
            let mut full = vec![0; d];
            for (k, &i) in active.iter().enumerate() {
                full[i] = a.0[k];
            }
            MultiIndex(full)
        })
        .collect();
    let n_candidates = indices.len();
    if n <= n_candidates {
        return Err(Error::Underdetermined {
            samples: n,
            terms: n_candidates,
        });
    }
    if n < 2 * n_candidates {
        log::warn!(
            "only {n} training samples for {n_candidates} basis terms; the fit may be noisy"
        );
    }

    let z = input.standardization.apply(samples);
    let y = DVector::from_column_slice(responses);
    let psi = design_matrix(&basis, &indices, &z);
    let full = least_squares(&psi, &y)?;

    let energy: f64 = full.coefficients.iter().map(|c| c * c).sum();
    let keep: Vec<usize> = (0..n_candidates)
        .filter(|&k| indices[k].is_zero() || full.coefficients[k].powi(2) >= opts.sparsity * energy)
        .collect();
    let (indices, lsq) = if keep.len() == n_candidates {
        (indices, full)
    } else {
        let psi_kept = psi.select_columns(&keep);
        let refit = least_squares(&psi_kept, &y)?;
        (keep.iter().map(|&k| indices[k].clone()).collect(), refit)
    };

    Ok(PceModel {
        schema_version: MODEL_SCHEMA_VERSION,
        degree: q,
        columns: samples.columns().to_vec(),
        input,
        basis,
        diagnostics: Diagnostics {
            n_train: n,
            n_candidates,
            n_retained: indices.len(),
            loo_error: lsq.loo,
            condition_number: lsq.condition,
        },
        indices,
        coefficients: lsq.coefficients,
    })
}

/// Evaluates the surrogate on every row of `samples` (physical units).
pub fn predict(model: &PceModel, samples: &SampleSet) -> Result<Vec<f64>> {
    if samples.n_cols() != model.n_vars() {
        return Err(Error::Dimension {
            expected: model.n_vars(),
            got: samples.n_cols(),
        });
    }
    for (a, b) in samples.columns().iter().zip(&model.columns) {
        if a.name != b.name {
            return Err(Error::Validation(format!(
                "sample column {} does not match model variable {}",
                a.name, b.name
            )));
        }
    }
    let supports: Vec<Vec<(usize, usize)>> = model
        .indices
        .iter()
        .map(|a| a.support().into_iter().map(|i| (i, a.0[i] as usize)).collect())
        .collect();
    let d = model.n_vars();
    let q = model.degree;
    let out = (0..samples.n_rows())
        .into_par_iter()
        .map(|r| {
            let mut z = vec![0.0; d];
            model.input.standardization.apply_row(samples.row(r), &mut z);
            // table[i][deg]: univariate polynomial values at z[i]
            let table: Vec<Vec<f64>> = (0..d)
                .map(|i| {
                    let degs = model.basis.coeffs[i].len().min(q + 1);
                    (0..degs).map(|deg| model.basis.eval(i, deg, z[i])).collect()
                })
                .collect();
            supports
                .iter()
                .zip(&model.coefficients)
                .map(|(s, c)| c * s.iter().map(|&(i, deg)| table[i][deg]).product::<f64>())
                .sum()
        })
        .collect();
    Ok(out)
}
