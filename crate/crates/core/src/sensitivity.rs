//! Sobol' indices read directly off PCE coefficients.
//!
//! For an orthonormal expansion the partial variance of a variable subset `u`
//! is the sum of squared coefficients whose multi-index support is exactly
//! `u`, so no sampling is needed.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pce::PceModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupIndex {
    /// 0-based variable positions, ascending.
    pub variables: Vec<usize>,
    pub names: Vec<String>,
    pub index: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SobolReport {
    pub variables: Vec<String>,
    pub first_order: Vec<f64>,
    pub total_order: Vec<f64>,
    /// One entry per distinct support among the retained terms.
    pub group: Vec<GroupIndex>,
    pub model_variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexKind {
    FirstOrder,
    TotalOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dominant {
    /// 0-based positions in ranking order.
    pub variables: Vec<usize>,
    pub sum: f64,
    pub kind: IndexKind,
    pub threshold: f64,
    /// The indices of all variables together do not reach the threshold.
    pub shortfall: bool,
}

fn partial_variances(model: &PceModel) -> Result<(BTreeMap<Vec<usize>, f64>, f64)> {
    let mut by_support: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    let mut total = 0.0;
    for (alpha, c) in model.indices.iter().zip(&model.coefficients) {
        if alpha.is_zero() {
            continue;
        }
        *by_support.entry(alpha.support()).or_default() += c * c;
        total += c * c;
    }
    if !(total > 0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok((by_support, total))
}

/// `S_u` for the nonempty variable subset `u` (0-based positions).
pub fn sobol_index(model: &PceModel, u: &[usize]) -> Result<f64> {
    let mut u = u.to_vec();
    u.sort_unstable();
    u.dedup();
    if u.is_empty() {
        return Err(Error::InvalidArgument("variable subset must be nonempty".into()));
    }
    if let Some(&bad) = u.iter().find(|&&i| i >= model.n_vars()) {
        return Err(Error::InvalidArgument(format!(
            "variable {bad} out of range for a {}-variable model",
            model.n_vars()
        )));
    }
    let (by_support, total) = partial_variances(model)?;
    Ok(by_support.get(&u).copied().unwrap_or(0.0) / total)
}

/// First-order, total-order and all group indices of `model`.
pub fn sobol_report(model: &PceModel) -> Result<SobolReport> {
    let d = model.n_vars();
    let (by_support, total) = partial_variances(model)?;
    let mut first_order = vec![0.0; d];
    let mut total_order = vec![0.0; d];
    for (support, v) in &by_support {
        let s = v / total;
        if let [i] = support[..] {
            first_order[i] = s;
        }
        for &i in support {
            total_order[i] += s;
        }
    }
    let names: Vec<String> = model.columns.iter().map(|c| c.name.clone()).collect();
    let mut group: Vec<GroupIndex> = by_support
        .into_iter()
        .map(|(variables, v)| GroupIndex {
            names: variables.iter().map(|&i| names[i].clone()).collect(),
            variables,
            index: v / total,
        })
        .collect();
    group.sort_by(|a, b| {
        a.variables
            .len()
            .cmp(&b.variables.len())
            .then_with(|| a.variables.cmp(&b.variables))
    });
    Ok(SobolReport {
        variables: names,
        first_order,
        total_order,
        group,
        model_variance: total,
    })
}

/// Shortest prefix of the descending ranking whose indices sum to at least
/// `threshold`. Ties go to the lower variable position.
pub fn rank_dominant(report: &SobolReport, threshold: f64, kind: IndexKind) -> Result<Dominant> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "dominance threshold must lie in (0, 1], got {threshold}"
        )));
    }
    let s = match kind {
        IndexKind::FirstOrder => &report.first_order,
        IndexKind::TotalOrder => &report.total_order,
    };
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let mut sum = 0.0;
    for (k, &i) in order.iter().enumerate() {
        sum += s[i];
        if sum >= threshold {
            order.truncate(k + 1);
            return Ok(Dominant {
                variables: order,
                sum,
                kind,
                threshold,
                shortfall: false,
            });
        }
    }
    Ok(Dominant {
        variables: order,
        sum,
        kind,
        threshold,
        shortfall: true,
    })
}

impl SobolReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `variable,S_first,S_total` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variable,S_first,S_total\n");
        for ((name, f), t) in self.variables.iter().zip(&self.first_order).zip(&self.total_order) {
            writeln!(out, "{name},{f:.12},{t:.12}").unwrap();
        }
        out
    }

    /// Sum of all group indices; 1 up to rounding.
    pub fn group_sum(&self) -> f64 {
        self.group.iter().map(|g| g.index).sum()
    }
}
