//! Random inputs: device conversion curves, sample sets, raw moments and
//! synthetic sample generation.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Normal, Uniform, Weibull};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{q_ratio, Network};
use crate::powerflow::Injections;

/// Standard-deviation threshold below which a column counts as constant.
const DEGENERATE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeviceKind {
    Pv,
    Wt,
    Ev,
}

/// PV conversion: quadratic below `g_set`, linear up to `g_std`, flat above.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PvCurve {
    /// W/m²
    pub g_set: f64,
    /// W/m²
    pub g_std: f64,
}

impl Default for PvCurve {
    fn default() -> Self {
        PvCurve {
            g_set: 150.0,
            g_std: 2000.0,
        }
    }
}

/// WT conversion: cubic between cut-in and rated, flat to cut-off, zero beyond.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WtCurve {
    /// m/s
    pub v_in: f64,
    pub v_rated: f64,
    pub v_out: f64,
}

impl Default for WtCurve {
    fn default() -> Self {
        WtCurve {
            v_in: 4.0,
            v_rated: 25.0,
            v_out: 40.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DeviceModel {
    Pv(PvCurve),
    Wt(WtCurve),
    /// Charging load. Samples are already in MW.
    Ev,
}

/// A PV farm, wind turbine or EV charging station driven by one random input.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomDevice {
    pub id: String,
    pub bus: usize,
    /// Rated active power, per-unit.
    pub rating: f64,
    pub power_factor: f64,
    pub model: DeviceModel,
}

impl RandomDevice {
    pub fn kind(&self) -> DeviceKind {
        match self.model {
            DeviceModel::Pv(_) => DeviceKind::Pv,
            DeviceModel::Wt(_) => DeviceKind::Wt,
            DeviceModel::Ev => DeviceKind::Ev,
        }
    }

    /// True for devices that inject (PV, WT); EV stations consume.
    pub fn is_generation(&self) -> bool {
        !matches!(self.model, DeviceModel::Ev)
    }

    pub fn unit(&self) -> &'static str {
        match self.model {
            DeviceModel::Pv(_) => "W/m2",
            DeviceModel::Wt(_) => "m/s",
            DeviceModel::Ev => "MW",
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let name = format!("device {}", self.id);
        if !(self.rating > 0.0) {
            return Err(Error::Validation(format!("{name}: rating must be positive")));
        }
        if !(self.power_factor > 0.0 && self.power_factor <= 1.0) {
            return Err(Error::Validation(format!("{name}: power factor outside (0, 1]")));
        }
        match self.model {
            DeviceModel::Pv(c) if !(0.0 < c.g_set && c.g_set < c.g_std) => Err(Error::Validation(
                format!("{name}: need 0 < g_set < g_std"),
            )),
            DeviceModel::Wt(c) if !(0.0 <= c.v_in && c.v_in < c.v_rated && c.v_rated < c.v_out) => {
                Err(Error::Validation(format!("{name}: need v_in < v_rated < v_out")))
            }
            _ => Ok(()),
        }
    }

    /// Active power (per-unit) for one realization of this device's input.
    ///
    /// EV inputs are in MW and are converted with `s_base`.
    pub fn active_power(&self, input: f64, s_base: f64) -> Result<f64> {
        match self.model {
            DeviceModel::Pv(_) => pv_power(input, self),
            DeviceModel::Wt(_) => wt_power(input, self),
            DeviceModel::Ev => {
                if !(input >= 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "EV power must be nonnegative, got {input}"
                    )));
                }
                Ok(input / s_base)
            }
        }
    }
}

pub fn pv_power(radiation: f64, dev: &RandomDevice) -> Result<f64> {
    let DeviceModel::Pv(c) = dev.model else {
        return Err(Error::InvalidArgument(format!("{} is not a PV device", dev.id)));
    };
    if !(radiation >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "radiation must be nonnegative, got {radiation}"
        )));
    }
    let p = if radiation < c.g_set {
        dev.rating * radiation * radiation / (c.g_std * c.g_set)
    } else if radiation < c.g_std {
        dev.rating * radiation / c.g_std
    } else {
        dev.rating
    };
    Ok(p)
}

pub fn wt_power(speed: f64, dev: &RandomDevice) -> Result<f64> {
    let DeviceModel::Wt(c) = dev.model else {
        return Err(Error::InvalidArgument(format!("{} is not a WT device", dev.id)));
    };
    if !(speed >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "wind speed must be nonnegative, got {speed}"
        )));
    }
    let p = if speed < c.v_in || speed > c.v_out {
        0.0
    } else if speed < c.v_rated {
        let cube = |v: f64| v * v * v;
        dev.rating * (cube(speed) - cube(c.v_in)) / (cube(c.v_rated) - cube(c.v_in))
    } else {
        dev.rating
    };
    Ok(p)
}

/// Net bus injections for one realization: base loads, generator base
/// outputs, random devices and optional BESS commands (discharge positive).
///
/// Generators on SLACK and PV buses are left out since the power flow
/// determines their output. `row` is in physical units, one entry per device.
pub fn assemble_injections(net: &Network, row: &[f64], bess: Option<&[f64]>) -> Result<Injections> {
    if row.len() != net.random_devices.len() {
        return Err(Error::Dimension {
            expected: net.random_devices.len(),
            got: row.len(),
        });
    }
    if let Some(cmd) = bess {
        if cmd.len() != net.bess_units.len() {
            return Err(Error::Dimension {
                expected: net.bess_units.len(),
                got: cmd.len(),
            });
        }
    }
    let n = net.n_bus();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for (k, bus) in net.buses.iter().enumerate() {
        p[k] -= bus.base_load_p;
        q[k] -= bus.base_load_q;
    }
    for g in &net.generators {
        let k = net.pos_of(g.bus);
        if net.buses[k].kind == crate::network::BusKind::Slack {
            continue;
        }
        p[k] += g.p_set;
        if net.buses[k].kind != crate::network::BusKind::Pv {
            q[k] += g.p_set * g.q_ratio();
        }
    }
    for (dev, &x) in net.random_devices.iter().zip(row) {
        let k = net.pos_of(dev.bus);
        let pw = dev.active_power(x, net.s_base)?;
        let qw = pw * q_ratio(dev.power_factor);
        if dev.is_generation() {
            p[k] += pw;
            q[k] += qw;
        } else {
            p[k] -= pw;
            q[k] -= qw;
        }
    }
    if let Some(cmd) = bess {
        for (u, &pb) in net.bess_units.iter().zip(cmd) {
            p[net.pos_of(u.bus)] += pb;
        }
    }
    Ok(Injections { p, q })
}

/// Per-device active power outputs (per-unit) for one sample row.
pub fn device_powers(net: &Network, row: &[f64]) -> Result<Vec<f64>> {
    if row.len() != net.random_devices.len() {
        return Err(Error::Dimension {
            expected: net.random_devices.len(),
            got: row.len(),
        });
    }
    net.random_devices
        .iter()
        .zip(row)
        .map(|(d, &x)| d.active_power(x, net.s_base))
        .collect()
}

// ---------------------------------------------------------------------------
// Sample sets
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub unit: String,
}

/// N×D matrix of input realizations, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    data: Vec<f64>,
    n: usize,
    columns: Vec<Column>,
    pub time_slot: String,
}

impl SampleSet {
    pub fn new(columns: Vec<Column>, rows: Vec<Vec<f64>>, time_slot: impl Into<String>) -> Result<SampleSet> {
        let d = columns.len();
        let n = rows.len();
        if n == 0 {
            return Err(Error::TooFewSamples { needed: 1, got: 0 });
        }
        let mut data = Vec::with_capacity(n * d);
        for (r, row) in rows.into_iter().enumerate() {
            if row.len() != d {
                return Err(Error::Dimension {
                    expected: d,
                    got: row.len(),
                });
            }
            if let Some(c) = row.iter().position(|x| !x.is_finite()) {
                return Err(Error::Validation(format!(
                    "non-finite sample at row {r}, column {}",
                    columns[c].name
                )));
            }
            data.extend(row);
        }
        Ok(SampleSet {
            data,
            n,
            columns,
            time_slot: time_slot.into(),
        })
    }

    /// Columns named after the network's random devices.
    pub fn device_columns(net: &Network) -> Vec<Column> {
        net.random_devices
            .iter()
            .map(|d| Column {
                name: d.id.clone(),
                unit: d.unit().to_string(),
            })
            .collect()
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let d = self.n_cols();
        &self.data[r * d..(r + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n).map(move |r| self.row(r))
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.rows().map(|r| r[c]).collect()
    }

    /// First `n` rows.
    pub fn head(&self, n: usize) -> Result<SampleSet> {
        if n == 0 || n > self.n {
            return Err(Error::TooFewSamples {
                needed: n.max(1),
                got: self.n,
            });
        }
        Ok(SampleSet {
            data: self.data[..n * self.n_cols()].to_vec(),
            n,
            columns: self.columns.clone(),
            time_slot: self.time_slot.clone(),
        })
    }

    /// Checks that the columns are bound to `net`'s devices, in order.
    pub fn check_binding(&self, net: &Network) -> Result<()> {
        if self.n_cols() != net.random_devices.len() {
            return Err(Error::Dimension {
                expected: net.random_devices.len(),
                got: self.n_cols(),
            });
        }
        for (c, d) in self.columns.iter().zip(&net.random_devices) {
            if c.name != d.id {
                return Err(Error::Validation(format!(
                    "sample column {} does not match device {}",
                    c.name, d.id
                )));
            }
        }
        Ok(())
    }

    /// Reads a per-slot CSV: a header of device ids, then one realization per
    /// row in physical units. The slot label is the file stem.
    pub fn read_csv(path: &Path, net: &Network) -> Result<SampleSet> {
        let io_err = |source| Error::Io {
            path: path.display().to_string(),
            source,
        };
        let file = std::fs::File::open(path).map_err(io_err)?;
        let slot = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let parse_err = |e: csv::Error| Error::Parse(format!("{}: {e}", path.display()));
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(file);
        let names: Vec<String> = reader.headers().map_err(parse_err)?.iter().map(String::from).collect();
        // Columns may come in any order; reorder to device order.
        let mut order = Vec::with_capacity(net.random_devices.len());
        for d in &net.random_devices {
            let c = names.iter().position(|n| *n == d.id).ok_or_else(|| {
                Error::Validation(format!("{}: no column for device {}", path.display(), d.id))
            })?;
            order.push(c);
        }
        if names.len() != order.len() {
            return Err(Error::Dimension {
                expected: order.len(),
                got: names.len(),
            });
        }
        let mut rows = Vec::new();
        for (ln, record) in reader.records().enumerate() {
            let record = record.map_err(parse_err)?;
            let row = order
                .iter()
                .map(|&c| {
                    record[c].parse::<f64>().map_err(|e| {
                        Error::Parse(format!("{}: row {}: {e}", path.display(), ln + 2))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        SampleSet::new(SampleSet::device_columns(net), rows, slot)
    }

    pub fn to_csv(&self) -> String {
        let mut out = self
            .columns
            .iter()
            .map(|c| c.name.as_str())
            .collect::<Vec<_>>()
            .join(",");
        out.push('\n');
        for row in self.rows() {
            let line: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Standardization and moments
// ---------------------------------------------------------------------------

/// Affine map `z = (x − mean) / scale` per column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Zero-variance columns. Their scale is 1 and they standardize to 0.
    pub degenerate: Vec<bool>,
}

impl Standardization {
    pub fn fit(samples: &SampleSet) -> Standardization {
        let n = samples.n_rows() as f64;
        let d = samples.n_cols();
        let mut mean = vec![0.0; d];
        for row in samples.rows() {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in samples.rows() {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let mut scale = Vec::with_capacity(d);
        let mut degenerate = Vec::with_capacity(d);
        for (c, v) in var.iter().enumerate() {
            let sd = (v / n).sqrt();
            let dead = sd <= DEGENERATE_TOL * mean[c].abs().max(1.0);
            degenerate.push(dead);
            scale.push(if dead { 1.0 } else { sd });
        }
        Standardization {
            mean,
            scale,
            degenerate,
        }
    }

    pub fn apply_row(&self, row: &[f64], out: &mut [f64]) {
        for c in 0..row.len() {
            out[c] = if self.degenerate[c] {
                0.0
            } else {
                (row[c] - self.mean[c]) / self.scale[c]
            };
        }
    }

    pub fn apply(&self, samples: &SampleSet) -> SampleSet {
        let mut out = samples.clone();
        let d = samples.n_cols();
        for r in 0..samples.n_rows() {
            let src = samples.row(r).to_vec();
            self.apply_row(&src, &mut out.data[r * d..(r + 1) * d]);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MomentSource {
    Empirical,
    Analytic,
}

/// Raw moments `μ_{k,i}`, `k = 0..=max_order`, per variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTable {
    pub moments: Vec<Vec<f64>>,
    pub degenerate: Vec<bool>,
    pub source: MomentSource,
}

impl MomentTable {
    pub fn analytic(moments: Vec<Vec<f64>>) -> MomentTable {
        let degenerate = vec![false; moments.len()];
        MomentTable {
            moments,
            degenerate,
            source: MomentSource::Analytic,
        }
    }

    pub fn n_vars(&self) -> usize {
        self.moments.len()
    }

    pub fn max_order(&self) -> usize {
        self.moments.first().map_or(0, |m| m.len() - 1)
    }

    /// Hankel matrix `[μ_{j+k}]` for `j, k = 0..=order`.
    pub fn hankel(&self, var: usize, order: usize) -> nalgebra::DMatrix<f64> {
        let m = &self.moments[var];
        nalgebra::DMatrix::from_fn(order + 1, order + 1, |j, k| m[j + k])
    }
}

/// Empirical raw moments of each column as given.
///
/// Zero-variance columns are flagged degenerate and receive the placeholder
/// moments `{1, 0, 0, …}`. Callers that want standardized moments apply a
/// [`Standardization`] first.
pub fn raw_moments(samples: &SampleSet, max_order: usize) -> Result<MomentTable> {
    let n = samples.n_rows();
    if n < max_order + 1 {
        return Err(Error::TooFewSamples {
            needed: max_order + 1,
            got: n,
        });
    }
    let std = Standardization::fit(samples);
    let d = samples.n_cols();
    let mut moments = vec![vec![0.0; max_order + 1]; d];
    for row in samples.rows() {
        for (c, &x) in row.iter().enumerate() {
            let mut pw = 1.0;
            for m in moments[c].iter_mut() {
                *m += pw;
                pw *= x;
            }
        }
    }
    for (c, m) in moments.iter_mut().enumerate() {
        if std.degenerate[c] {
            m.iter_mut().for_each(|v| *v = 0.0);
            m[0] = 1.0;
        } else {
            m.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    Ok(MomentTable {
        moments,
        degenerate: std.degenerate,
        source: MomentSource::Empirical,
    })
}

// ---------------------------------------------------------------------------
// Synthetic samples
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

/// Marginal distribution of one random input, in physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputDistribution {
    Constant { value: f64 },
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, std: f64 },
    /// Beta(a, b) scaled to `[0, scale]`.
    Beta { a: f64, b: f64, scale: f64 },
    Weibull { shape: f64, scale: f64 },
    /// Gaussian mixture truncated to `[lo, hi]`.
    TruncatedMixture {
        components: Vec<MixtureComponent>,
        lo: f64,
        hi: f64,
    },
}

enum Sampler {
    Constant(f64),
    Uniform(Uniform<f64>),
    Normal(Normal<f64>),
    Beta(Beta<f64>, f64),
    Weibull(Weibull<f64>),
    Mixture {
        cumulative: Vec<f64>,
        normals: Vec<Normal<f64>>,
        lo: f64,
        hi: f64,
    },
}

const MAX_REJECTIONS: usize = 10_000;

impl InputDistribution {
    fn sampler(&self) -> Result<Sampler> {
        let bad = |what: &str| Error::InvalidArgument(format!("invalid {what} parameters: {self:?}"));
        Ok(match *self {
            InputDistribution::Constant { value } => {
                if !value.is_finite() {
                    return Err(bad("constant"));
                }
                Sampler::Constant(value)
            }
            InputDistribution::Uniform { lo, hi } => {
                if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                    return Err(bad("uniform"));
                }
                Sampler::Uniform(Uniform::new(lo, hi))
            }
            InputDistribution::Normal { mean, std } => {
                Sampler::Normal(Normal::new(mean, std).map_err(|_| bad("normal"))?)
            }
            InputDistribution::Beta { a, b, scale } => {
                if !(scale > 0.0) {
                    return Err(bad("beta"));
                }
                Sampler::Beta(Beta::new(a, b).map_err(|_| bad("beta"))?, scale)
            }
            InputDistribution::Weibull { shape, scale } => {
                Sampler::Weibull(Weibull::new(scale, shape).map_err(|_| bad("weibull"))?)
            }
            InputDistribution::TruncatedMixture {
                ref components,
                lo,
                hi,
            } => {
                if components.is_empty() || !(lo < hi) {
                    return Err(bad("mixture"));
                }
                let total: f64 = components.iter().map(|c| c.weight).sum();
                if !(total > 0.0) || components.iter().any(|c| !(c.weight >= 0.0)) {
                    return Err(bad("mixture"));
                }
                let mut acc = 0.0;
                let cumulative = components
                    .iter()
                    .map(|c| {
                        acc += c.weight / total;
                        acc
                    })
                    .collect();
                let normals = components
                    .iter()
                    .map(|c| Normal::new(c.mean, c.std).map_err(|_| bad("mixture")))
                    .collect::<Result<Vec<_>>>()?;
                Sampler::Mixture {
                    cumulative,
                    normals,
                    lo,
                    hi,
                }
            }
        })
    }
}

impl Sampler {
    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            Sampler::Constant(v) => *v,
            Sampler::Uniform(u) => u.sample(rng),
            Sampler::Normal(n) => n.sample(rng),
            Sampler::Beta(b, s) => b.sample(rng) * s,
            Sampler::Weibull(w) => w.sample(rng),
            Sampler::Mixture {
                cumulative,
                normals,
                lo,
                hi,
            } => {
                for _ in 0..MAX_REJECTIONS {
                    let u: f64 = rng.gen();
                    let k = cumulative
                        .iter()
                        .position(|&c| u < c)
                        .unwrap_or(cumulative.len() - 1);
                    let x = normals[k].sample(rng);
                    if x >= *lo && x <= *hi {
                        return x;
                    }
                }
                // Essentially unreachable for sensible parameters.
                0.5 * (lo + hi)
            }
        }
    }
}

/// Per-variable marginals for synthetic sample generation, keyed by column name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub columns: Vec<Column>,
    pub distributions: Vec<InputDistribution>,
}

impl SynthSpec {
    pub fn new(columns: Vec<Column>, distributions: Vec<InputDistribution>) -> Result<SynthSpec> {
        if columns.len() != distributions.len() {
            return Err(Error::Dimension {
                expected: columns.len(),
                got: distributions.len(),
            });
        }
        Ok(SynthSpec {
            columns,
            distributions,
        })
    }

    /// Binds a name → distribution map to the network's device order.
    pub fn for_network(net: &Network, by_device: &BTreeMap<String, InputDistribution>) -> Result<SynthSpec> {
        let distributions = net
            .random_devices
            .iter()
            .map(|d| {
                by_device.get(&d.id).cloned().ok_or_else(|| {
                    Error::Validation(format!("no distribution given for device {}", d.id))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        SynthSpec::new(SampleSet::device_columns(net), distributions)
    }
}

/// Independent draws from each marginal, fully determined by `seed`.
pub fn synth_samples(spec: &SynthSpec, n: usize, seed: u64, time_slot: &str) -> Result<SampleSet> {
    synth_with_rng(spec, n, ChaCha8Rng::seed_from_u64(seed), time_slot)
}

/// Like [`synth_samples`] but on a dedicated ChaCha stream, so that slots
/// sharing one seed draw from independent sequences.
pub fn synth_samples_stream(
    spec: &SynthSpec,
    n: usize,
    seed: u64,
    stream: u64,
    time_slot: &str,
) -> Result<SampleSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    synth_with_rng(spec, n, rng, time_slot)
}

fn synth_with_rng(spec: &SynthSpec, n: usize, mut rng: ChaCha8Rng, time_slot: &str) -> Result<SampleSet> {
    if n == 0 {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let samplers = spec
        .distributions
        .iter()
        .map(InputDistribution::sampler)
        .collect::<Result<Vec<_>>>()?;
    let rows = (0..n)
        .map(|_| samplers.iter().map(|s| s.draw(&mut rng)).collect())
        .collect();
    SampleSet::new(spec.columns.clone(), rows, time_slot)
}
