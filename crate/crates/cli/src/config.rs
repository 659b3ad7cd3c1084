use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use rsc_core::assess::{AssessOptions, EnhanceOptions};
use rsc_core::cpf::CpfOptions;
use rsc_core::pce::FitOptions;
use rsc_core::powerflow::PfOptions;
use rsc_core::sensitivity::IndexKind;
use rsc_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Surrogate distribution and confidence-level RSC per slot.
    Assess,
    /// Assessment plus Sobol' indices and dominant inputs.
    Sobol,
    /// Pre/post BESS smoothing table.
    Enhance,
    /// Direct evaluation of every sample (reference distribution).
    Mcs,
    /// Surrogate against direct evaluation on the same samples.
    Compare,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Assess => "assess",
            Mode::Sobol => "sobol",
            Mode::Enhance => "enhance",
            Mode::Mcs => "mcs",
            Mode::Compare => "compare",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IndexArg {
    First,
    Total,
}

/// Probabilistic ramping support capability of a microgrid.
#[derive(Debug, Clone, Parser)]
#[command(name = "mgrsc", version)]
pub struct RunConfig {
    /// Case file (JSON) or the built-in id `ieee33-modified`.
    #[arg(long, default_value = rsc_core::network::IEEE33_MODIFIED)]
    pub case: String,
    /// Directory of per-slot sample CSVs (header of device ids). Without it a
    /// synthetic day is drawn.
    #[arg(long)]
    pub samples_dir: Option<PathBuf>,
    /// JSON day profile for synthetic sampling instead of the built-in one.
    #[arg(long, conflicts_with = "samples_dir")]
    pub profile: Option<PathBuf>,
    /// Comma-separated slot names to process (default: all).
    #[arg(long, value_delimiter = ',')]
    pub slots: Vec<String>,
    /// Training rows evaluated with the full model.
    #[arg(long, default_value_t = 250)]
    pub n0: usize,
    /// Rows per slot evaluated with the surrogate (and by mcs).
    #[arg(long, default_value_t = 10_000)]
    pub ns: usize,
    /// Total polynomial degree.
    #[arg(long, default_value_t = 2)]
    pub q: usize,
    /// Confidence level of the reported RSC.
    #[arg(long, default_value_t = 0.95)]
    pub gamma: f64,
    /// Share of variance the dominant inputs must explain.
    #[arg(long, default_value_t = 0.8)]
    pub threshold: f64,
    /// Sobol' index used for ranking.
    #[arg(long, value_enum, default_value_t = IndexArg::First)]
    pub index: IndexArg,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output directory; per-slot results go to `<out>/<slot>/`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Assess)]
    pub mode: Mode,
    /// Bisection tolerance on the transfer level (per-unit).
    #[arg(long, default_value_t = 1e-4)]
    pub lambda_tol: f64,
    /// Upper end of the transfer search (per-unit).
    #[arg(long, default_value_t = 10.0)]
    pub max_lambda: f64,
    /// Power flow mismatch tolerance (per-unit).
    #[arg(long, default_value_t = 1e-8)]
    pub pf_tol: f64,
    /// Slot length in hours for BESS energy accounting.
    #[arg(long, default_value_t = 1.0)]
    pub slot_hours: f64,
    /// Also write the slot samples to `<out>/<slot>/samples.csv`.
    #[arg(long)]
    pub dump_samples: bool,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.n0 < 1 {
            return bad("n0 must be at least 1".into());
        }
        if self.ns < self.n0 {
            return bad(format!("ns ({}) must be at least n0 ({})", self.ns, self.n0));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return bad(format!("threshold must lie in (0, 1], got {}", self.threshold));
        }
        if self.q < 1 {
            return bad("q must be at least 1".into());
        }
        for (name, v) in [
            ("lambda-tol", self.lambda_tol),
            ("max-lambda", self.max_lambda),
            ("pf-tol", self.pf_tol),
            ("slot-hours", self.slot_hours),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }

    pub fn assess_options(&self) -> AssessOptions {
        AssessOptions {
            n0: self.n0,
            degree: self.q,
            gamma: self.gamma,
            cpf: CpfOptions {
                lambda_tol: self.lambda_tol,
                max_lambda: self.max_lambda,
                pf: PfOptions {
                    tol: self.pf_tol,
                    ..PfOptions::default()
                },
                ..CpfOptions::default()
            },
            fit: FitOptions::default(),
        }
    }

    pub fn enhance_options(&self) -> EnhanceOptions {
        EnhanceOptions {
            threshold: self.threshold,
            kind: match self.index {
                IndexArg::First => IndexKind::FirstOrder,
                IndexArg::Total => IndexKind::TotalOrder,
            },
            slot_hours: self.slot_hours,
        }
    }
}
