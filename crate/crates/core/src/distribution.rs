//! Empirical RSC distributions: confidence-level RSC, histograms and the
//! two-sample Kolmogorov-Smirnov distance.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest sample on which a confidence-level RSC is reported.
pub const MIN_CONFIDENCE_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Provenance {
    PceSurrogate,
    McsOracle,
}

/// Sorted, finite λ values in per-unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RscDistribution {
    values: Vec<f64>,
    pub provenance: Provenance,
}

impl RscDistribution {
    pub fn new(mut values: Vec<f64>, provenance: Provenance) -> Result<RscDistribution> {
        if values.is_empty() {
            return Err(Error::TooFewSamples { needed: 1, got: 0 });
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite RSC value at position {bad}"
            )));
        }
        values.sort_by(f64::total_cmp);
        Ok(RscDistribution { values, provenance })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.n() as f64
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.n() as f64
    }

    /// Same distribution with every value multiplied by `k > 0` (e.g. to MW).
    pub fn scaled(&self, k: f64) -> RscDistribution {
        assert!(k > 0.0, "scale must be positive to keep the order");
        RscDistribution {
            values: self.values.iter().map(|v| v * k).collect(),
            provenance: self.provenance,
        }
    }

    /// `value,cdf` rows of the empirical CDF.
    pub fn cdf_csv(&self) -> String {
        let n = self.n() as f64;
        let mut out = String::from("value,cdf\n");
        for (i, v) in self.values.iter().enumerate() {
            writeln!(out, "{v:.10},{:.10}", (i + 1) as f64 / n).unwrap();
        }
        out
    }
}

/// The RSC committed with confidence `gamma`: the lower order statistic at
/// rank `⌈(1 − γ)·n⌉`.
pub fn confidence_rsc(dist: &RscDistribution, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence level must lie in (0, 1), got {gamma}"
        )));
    }
    let n = dist.n();
    if n < MIN_CONFIDENCE_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: MIN_CONFIDENCE_SAMPLES,
            got: n,
        });
    }
    // (1 − γ)·n carries rounding error (0.05·100 = 5.000000000000004); a
    // relative guard keeps exact products from jumping to the next rank.
    let x = (1.0 - gamma) * n as f64;
    let rank = (x - 1e-9 * x.max(1.0)).ceil().max(1.0) as usize;
    Ok(dist.values[rank.min(n) - 1])
}

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_a − F_b|`.
pub fn ks_statistic(a: &RscDistribution, b: &RscDistribution) -> f64 {
    let (xa, xb) = (a.values(), b.values());
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` ascending edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// `bin_lo,bin_hi,count` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for (k, c) in self.counts.iter().enumerate() {
            writeln!(out, "{:.10},{:.10},{c}", self.edges[k], self.edges[k + 1]).unwrap();
        }
        out
    }
}

/// Equal-width bins over `[min, max]`; the last bin is closed on the right.
pub fn histogram(dist: &RscDistribution, bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    let (lo, hi) = (dist.min(), dist.max());
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins)
        .map(|k| if k == bins { hi } else { lo + k as f64 * width })
        .collect();
    let mut counts = vec![0; bins];
    for &v in dist.values() {
        let k = if width > 0.0 {
            (((v - lo) / width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[k] += 1;
    }
    Ok(Histogram { edges, counts })
}
