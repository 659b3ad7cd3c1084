//! Per-slot assessment pipeline: direct RSC evaluations on a training subset,
//! a surrogate fitted to them, the surrogate distribution over the full slot
//! sample, and the BESS-smoothed re-assessment.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::cpf::{max_lambda, CpfOptions};
use crate::distribution::{confidence_rsc, Provenance, RscDistribution};
use crate::enhancement::{aggregate_by_branch, device_means, slot_commands, BessPlan, SlotCommands, SocWindow};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::pce::{fit_with_input, predict, FitOptions, InputModel, PceModel};
use crate::sensitivity::{rank_dominant, sobol_report, Dominant, IndexKind, SobolReport};
use crate::stochastic::{assemble_injections, SampleSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssessOptions {
    /// Rows of the slot sample used to train the surrogate.
    pub n0: usize,
    /// Total degree of the expansion.
    pub degree: usize,
    /// Confidence level of the reported RSC.
    pub gamma: f64,
    pub cpf: CpfOptions,
    pub fit: FitOptions,
}

impl Default for AssessOptions {
    fn default() -> Self {
        AssessOptions {
            n0: 250,
            degree: 2,
            gamma: 0.95,
            cpf: CpfOptions::default(),
            fit: FitOptions::default(),
        }
    }
}

/// Direct RSC of every row of `samples`, evaluated in parallel.
///
/// `commands[row]` holds the BESS outputs of that realization, one per unit of
/// `net`. On failure the error of the lowest failing row is returned.
pub fn evaluate_lambdas(
    net: &Network,
    samples: &SampleSet,
    commands: Option<&[Vec<f64>]>,
    cpf: &CpfOptions,
) -> Result<Vec<f64>> {
    samples.check_binding(net)?;
    if let Some(c) = commands {
        if c.len() != samples.n_rows() {
            return Err(Error::Dimension {
                expected: samples.n_rows(),
                got: c.len(),
            });
        }
    }
    let results: Vec<Result<f64>> = (0..samples.n_rows())
        .into_par_iter()
        .map(|r| {
            let inj = assemble_injections(net, samples.row(r), commands.map(|c| c[r].as_slice()))?;
            max_lambda(net, &inj, cpf).map(|res| res.lambda).map_err(|e| match e {
                Error::InfeasibleBase(msg) => Error::InfeasibleBase(format!("sample row {r}: {msg}")),
                other => other,
            })
        })
        .collect();
    results.into_iter().collect()
}

#[derive(Debug, Clone)]
pub struct SlotAssessment {
    pub slot: String,
    /// Direct RSC of the training rows, per-unit.
    pub training: Vec<f64>,
    pub model: PceModel,
    pub distribution: RscDistribution,
    /// Confidence-level RSC, per-unit.
    pub rsc: f64,
}

fn check_sizes(samples: &SampleSet, opts: &AssessOptions) -> Result<()> {
    if opts.n0 == 0 {
        return Err(Error::InvalidArgument("n0 must be at least 1".into()));
    }
    if samples.n_rows() < opts.n0 {
        return Err(Error::TooFewSamples {
            needed: opts.n0,
            got: samples.n_rows(),
        });
    }
    Ok(())
}

/// Trains on the first `n0` rows of `samples` and evaluates the surrogate on
/// all of them. The basis moments come from the whole slot sample.
pub fn assess_slot(
    net: &Network,
    samples: &SampleSet,
    commands: Option<&[Vec<f64>]>,
    opts: &AssessOptions,
) -> Result<SlotAssessment> {
    check_sizes(samples, opts)?;
    let training_x = samples.head(opts.n0)?;
    let training = evaluate_lambdas(net, &training_x, commands.map(|c| &c[..opts.n0.min(c.len())]), &opts.cpf)?;
    let input = InputModel::from_samples(samples, opts.degree)?;
    let model = fit_with_input(&training_x, &training, opts.degree, input, &opts.fit)?;
    let distribution = RscDistribution::new(predict(&model, samples)?, Provenance::PceSurrogate)?;
    let rsc = confidence_rsc(&distribution, opts.gamma)?;
    Ok(SlotAssessment {
        slot: samples.time_slot.clone(),
        training,
        model,
        distribution,
        rsc,
    })
}

/// Direct evaluation of every row: the Monte Carlo reference.
pub fn mcs_slot(
    net: &Network,
    samples: &SampleSet,
    commands: Option<&[Vec<f64>]>,
    opts: &AssessOptions,
) -> Result<(RscDistribution, f64)> {
    let lambdas = evaluate_lambdas(net, samples, commands, &opts.cpf)?;
    let dist = RscDistribution::new(lambdas, Provenance::McsOracle)?;
    let rsc = confidence_rsc(&dist, opts.gamma)?;
    Ok((dist, rsc))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnhanceOptions {
    /// Fraction of variance the dominant set must explain.
    pub threshold: f64,
    pub kind: IndexKind,
    /// Slot length in hours.
    pub slot_hours: f64,
}

impl Default for EnhanceOptions {
    fn default() -> Self {
        EnhanceOptions {
            threshold: 0.8,
            kind: IndexKind::FirstOrder,
            slot_hours: 1.0,
        }
    }
}

/// SOC envelope and mean-path SOC of every battery, keyed by id, carried
/// from one slot to the next, plus the number of slots still to come.
///
/// The default state has a one-slot horizon, so each slot may use all of the
/// remaining headroom.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SocState {
    units: BTreeMap<String, (SocWindow, f64)>,
    remaining: usize,
}

impl SocState {
    /// Fresh batteries for a schedule of `slots` slots; headroom is shared
    /// evenly among the slots not yet processed.
    pub fn with_horizon(slots: usize) -> SocState {
        SocState {
            units: BTreeMap::new(),
            remaining: slots,
        }
    }

    /// Slots, the next one included, that share the remaining headroom.
    pub fn slots_left(&self) -> usize {
        self.remaining.max(1)
    }

    fn start(&self, plan: &BessPlan) -> (Vec<SocWindow>, Vec<f64>) {
        plan.units
            .iter()
            .map(|u| {
                self.units
                    .get(&u.id)
                    .copied()
                    .unwrap_or((SocWindow::at(u.soc), u.soc))
            })
            .unzip()
    }

    fn advance(&mut self, plan: &BessPlan, cmds: &SlotCommands) {
        for (k, u) in plan.units.iter().enumerate() {
            self.units
                .insert(u.id.clone(), (cmds.windows_after[k], cmds.nominal_after[k]));
        }
        self.remaining = self.remaining.saturating_sub(1);
    }

    pub fn get(&self, id: &str) -> Option<(SocWindow, f64)> {
        self.units.get(id).copied()
    }
}

#[derive(Debug, Clone)]
pub struct SlotEnhancement {
    pub pre: SlotAssessment,
    /// `None` when the surrogate has no variance to attribute.
    pub sobol: Option<SobolReport>,
    pub dominant: Option<Dominant>,
    pub plan: BessPlan,
    pub commands: SlotCommands,
    pub post: SlotAssessment,
}

impl SlotEnhancement {
    /// Network with the plan's batteries, as used for the post assessment.
    pub fn post_network(&self, net: &Network) -> Result<Network> {
        self.plan.apply(net)
    }
}

/// Sobol' analysis of `pre`, BESS smoothing of the dominant inputs and the
/// post-smoothing assessment. `soc` is advanced past this slot.
pub fn enhance_slot(
    net: &Network,
    samples: &SampleSet,
    pre: SlotAssessment,
    soc: &mut SocState,
    opts: &AssessOptions,
    eopts: &EnhanceOptions,
) -> Result<SlotEnhancement> {
    let sobol = match sobol_report(&pre.model) {
        Ok(r) => Some(r),
        Err(Error::ZeroVariance) => None,
        Err(e) => return Err(e),
    };
    let dominant = sobol
        .as_ref()
        .map(|r| rank_dominant(r, eopts.threshold, eopts.kind))
        .transpose()?;
    let dominant_vars = dominant.as_ref().map_or(&[][..], |d| &d.variables[..]);
    let plan = aggregate_by_branch(net, dominant_vars)?;
    let means = device_means(net, samples)?;
    let (windows, nominal) = soc.start(&plan);
    let commands = slot_commands(
        net,
        &plan,
        samples,
        &means,
        &windows,
        &nominal,
        eopts.slot_hours,
        soc.slots_left(),
    )?;
    soc.advance(&plan, &commands);

    let post = if plan.assignments.is_empty() {
        pre.clone()
    } else {
        let post_net = plan.apply(net)?;
        assess_slot(&post_net, samples, Some(&commands.commands), opts)?
    };
    Ok(SlotEnhancement {
        pre,
        sobol,
        dominant,
        plan,
        commands,
        post,
    })
}

/// Pre- and post-smoothing assessment of one slot from fresh batteries.
pub fn assess_post_smoothing(
    net: &Network,
    samples: &SampleSet,
    opts: &AssessOptions,
    eopts: &EnhanceOptions,
) -> Result<SlotEnhancement> {
    let pre = assess_slot(net, samples, None, opts)?;
    enhance_slot(net, samples, pre, &mut SocState::default(), opts, eopts)
}
