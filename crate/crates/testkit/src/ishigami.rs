//! The Ishigami function on `[-π, π]³` and its closed-form variance split.

use std::f64::consts::PI;

pub fn ishigami(x: &[f64], a: f64, b: f64) -> f64 {
    x[0].sin() + a * x[1].sin().powi(2) + b * x[2].powi(4) * x[0].sin()
}

#[derive(Debug, Clone, Copy)]
pub struct IshigamiIndices {
    pub variance: f64,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
    pub s13: f64,
}

pub fn indices(a: f64, b: f64) -> IshigamiIndices {
    let variance = a * a / 8.0 + b * PI.powi(4) / 5.0 + b * b * PI.powi(8) / 18.0 + 0.5;
    let v1 = 0.5 * (1.0 + b * PI.powi(4) / 5.0).powi(2);
    let v2 = a * a / 8.0;
    let v13 = b * b * PI.powi(8) * (1.0 / 18.0 - 1.0 / 50.0);
    IshigamiIndices {
        variance,
        s1: v1 / variance,
        s2: v2 / variance,
        s3: 0.0,
        s13: v13 / variance,
    }
}
