//! Seeded Monte Carlo batches, parameter sweeps and result export.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{self, TheoryPrediction};
use crate::error::{Error, Result};
use crate::meeting::{event_stream, MeetingRate};
use crate::mobility::{estimate_lambda_from_count, theoretical_lambda, LambdaEstimate, MobilityConfig, SpatialContacts};
use crate::protocol::{self, duplication_trial, DecodeRule, ExchangeMode, Protocol, ProtocolConfig, TrialRecord};
use crate::stats::{chi_square_test, linear_fit, Summary, TestOutcome};

pub const DEFAULT_EPSILON: f64 = 0.05;
pub const DEFAULT_TRIALS: usize = 100;
/// Default horizon, in multiples of the predicted spreading time.
pub const HORIZON_FACTOR: f64 = 50.0;
/// Node whose decode delay is reported as the tagged-node delay.
pub const TAGGED_NODE: usize = 1;

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_trials() -> usize {
    DEFAULT_TRIALS
}

/// Parameters of one batch of trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    /// Explicit pairwise meeting rate; excludes `mobility`.
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Spatial mobility driving the meetings; excludes `lambda`.
    #[serde(default)]
    pub mobility: Option<MobilityConfig>,
    pub l: u64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub protocol: Protocol,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Maximum model time per trial; `None` uses 50× the predicted spreading time.
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub exchange_mode: ExchangeMode,
    /// Keep trials running until the source has met every node.
    #[serde(default)]
    pub wait_for_relay_init: bool,
    /// Check protocol invariants on every meeting.
    #[serde(default)]
    pub audit: bool,
}

impl SimConfig {
    pub fn with_lambda(n: usize, lambda: f64, l: u64, protocol: Protocol) -> Self {
        SimConfig {
            n,
            lambda: Some(lambda),
            mobility: None,
            l,
            epsilon: DEFAULT_EPSILON,
            protocol,
            trials: DEFAULT_TRIALS,
            seed: 0,
            horizon: None,
            exchange_mode: ExchangeMode::Bidirectional,
            wait_for_relay_init: false,
            audit: false,
        }
    }

    pub fn with_mobility(n: usize, mobility: MobilityConfig, l: u64, protocol: Protocol) -> Self {
        SimConfig {
            lambda: None,
            mobility: Some(mobility),
            ..SimConfig::with_lambda(n, 1.0, l, protocol)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::config(format!("need at least 2 nodes, got {}", self.n)));
        }
        match (self.lambda, &self.mobility) {
            (Some(l), None) => {
                MeetingRate::new(l)?;
            }
            (None, Some(m)) => m.validate()?,
            (Some(_), Some(_)) => return Err(Error::config("lambda and mobility are mutually exclusive")),
            (None, None) => return Err(Error::config("either lambda or mobility must be given")),
        }
        if self.trials == 0 {
            return Err(Error::config("need at least one trial"));
        }
        if matches!(self.horizon, Some(h) if !(h > 0.0)) {
            return Err(Error::config("horizon must be positive"));
        }
        DecodeRule::new(self.l, self.epsilon)?;
        Ok(())
    }

    /// λ used before any spatial estimate exists.
    fn nominal_lambda(&self) -> Result<MeetingRate> {
        match (self.lambda, &self.mobility) {
            (Some(l), _) => MeetingRate::new(l),
            (None, Some(m)) => theoretical_lambda(m),
            (None, None) => Err(Error::config("either lambda or mobility must be given")),
        }
    }

    pub fn theory(&self, lambda: MeetingRate) -> Result<TheoryPrediction<f64>> {
        analytics::predict(self.n, lambda, self.l, self.epsilon)
    }

    fn effective_horizon(&self) -> Result<f64> {
        match self.horizon {
            Some(h) => Ok(h),
            None => Ok(HORIZON_FACTOR * self.theory(self.nominal_lambda()?)?.spreading_time_scale()),
        }
    }

    fn protocol_config(&self, horizon: f64) -> Result<ProtocolConfig> {
        let mut pc = ProtocolConfig::new(self.n, DecodeRule::new(self.l, self.epsilon)?, self.protocol);
        pc.exchange = self.exchange_mode;
        pc.horizon = Some(horizon);
        pc.wait_for_relay_init = self.wait_for_relay_init;
        pc.audit = self.audit;
        Ok(pc)
    }
}

/// Counter-based seed derivation (SplitMix64 finalizer over `base + index`).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Result of one trial of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub index: usize,
    pub seed: u64,
    pub record: TrialRecord,
    pub complete: bool,
    /// Spatial runs only: onsets detected and model time sampled.
    pub trace_events: usize,
    pub trace_duration: f64,
}

fn run_one(config: &SimConfig, pc: &ProtocolConfig, index: usize) -> Result<TrialResult> {
    let seed = derive_seed(config.seed, index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let event_seed = derive_seed(seed, 0);
    let mut trace_events = 0;
    let mut trace_duration = 0.0;
    let outcome = match (config.lambda, config.mobility) {
        (Some(l), _) => protocol::run_trial(pc, event_stream(config.n, MeetingRate::new(l)?, event_seed)?, &mut rng),
        (None, Some(m)) => {
            let mut stream = SpatialContacts::random(config.n, m, event_seed)?;
            let out = protocol::run_trial(pc, &mut stream, &mut rng);
            trace_events = stream.generated();
            trace_duration = stream.elapsed();
            out
        }
        (None, None) => return Err(Error::config("either lambda or mobility must be given")),
    };
    let (record, complete) = match outcome {
        Ok(r) => (r, true),
        Err(Error::Incomplete { partial, .. }) => (*partial, false),
        Err(e) => return Err(e),
    };
    Ok(TrialResult {
        index,
        seed,
        record,
        complete,
        trace_events,
        trace_duration,
    })
}

/// Run every trial of a batch (in parallel) and return the raw records.
pub fn run_trials(config: &SimConfig) -> Result<Vec<TrialResult>> {
    config.validate()?;
    let pc = config.protocol_config(config.effective_horizon()?)?;
    (0..config.trials)
        .into_par_iter()
        .map(|i| run_one(config, &pc, i))
        .collect()
}

/// Mean with standard error and normal 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub ci95: (f64, f64),
    pub count: usize,
}

impl Estimate {
    pub fn of(values: &[f64]) -> Option<Estimate> {
        Summary::of(values).map(|s| Estimate {
            mean: s.mean,
            std_error: s.std_error,
            ci95: s.ci95(),
            count: s.count,
        })
    }

    pub fn half_width(&self) -> f64 {
        (self.ci95.1 - self.ci95.0) / 2.0
    }
}

fn relative_error(sim: f64, theory: f64) -> f64 {
    (sim - theory).abs() / theory.abs()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub config: SimConfig,
    /// λ behind the theory columns: explicit, or estimated from the traces.
    pub lambda: f64,
    pub lambda_estimate: Option<LambdaEstimate>,
    pub completed_trials: usize,
    pub incomplete_trials: usize,
    /// Per-trial mean decode time over all destinations.
    pub delay: Option<Estimate>,
    /// Decode time of the tagged node.
    pub tagged_delay: Option<Estimate>,
    pub spreading_time: Option<Estimate>,
    pub relay_init_time: Option<Estimate>,
    pub duplication_mean: Option<f64>,
    pub duplication_histogram: BTreeMap<u32, u64>,
    pub kappa_hat: Option<f64>,
    pub theory_kappa: Option<f64>,
    pub theory: TheoryPrediction<f64>,
    pub rel_err_delay: Option<f64>,
    pub rel_err_spread: Option<f64>,
}

impl AggregateStats {
    pub fn mean_delay(&self) -> Option<f64> {
        self.delay.map(|e| e.mean)
    }

    pub fn mean_spreading_time(&self) -> Option<f64> {
        self.spreading_time.map(|e| e.mean)
    }
}

/// Fold trial results into batch statistics.
pub fn aggregate(config: &SimConfig, trials: &[TrialResult]) -> Result<AggregateStats> {
    let lambda_estimate = match config.mobility {
        Some(_) => {
            let events = trials.iter().map(|t| t.trace_events).sum();
            let duration: f64 = trials.iter().map(|t| t.trace_duration).sum();
            Some(estimate_lambda_from_count(events, config.n, duration)?)
        }
        None => None,
    };
    let lambda = match (&lambda_estimate, config.lambda) {
        (Some(est), _) if !est.empty => est.meeting_rate()?,
        (_, Some(l)) => MeetingRate::new(l)?,
        _ => config.nominal_lambda()?,
    };
    let theory = config.theory(lambda)?;

    let complete: Vec<&TrialRecord> = trials.iter().filter(|t| t.complete).map(|t| &t.record).collect();
    let collect = |f: &dyn Fn(&TrialRecord) -> Option<f64>| -> Vec<f64> { complete.iter().filter_map(|r| f(r)).collect() };
    let delay = Estimate::of(&collect(&|r| r.mean_decode_time()));
    let tagged_delay = Estimate::of(&collect(&|r| r.decode_time(TAGGED_NODE)));
    let spreading_time = Estimate::of(&collect(&|r| r.spreading_time));
    let relay_init_time = Estimate::of(&collect(&|r| r.counters.relay_init_time));

    let mut duplication_histogram = BTreeMap::new();
    let (mut relay_rx, mut fresh_rx) = (0u64, 0u64);
    for r in &complete {
        for (&k, &c) in &r.duplication_histogram {
            *duplication_histogram.entry(k).or_insert(0) += c;
        }
        relay_rx += r.counters.relay_receptions;
        fresh_rx += r.counters.fresh_relay_receptions;
    }

    Ok(AggregateStats {
        config: *config,
        lambda: lambda.get(),
        lambda_estimate,
        completed_trials: complete.len(),
        incomplete_trials: trials.len() - complete.len(),
        rel_err_delay: delay.map(|d| relative_error(d.mean, theory.expected_delay)),
        rel_err_spread: spreading_time
            .zip(theory.spreading_time_point)
            .map(|(s, t)| relative_error(s.mean, t)),
        delay,
        tagged_delay,
        spreading_time,
        relay_init_time,
        duplication_mean: protocol::duplication_mean(&duplication_histogram),
        duplication_histogram,
        kappa_hat: (relay_rx > 0).then(|| fresh_rx as f64 / relay_rx as f64),
        theory_kappa: (config.protocol == Protocol::Naive).then_some(theory.naive_kappa),
        theory,
    })
}

/// Run a batch of seeded trials and compare it with the closed forms.
pub fn run_batch(config: &SimConfig) -> Result<AggregateStats> {
    let trials = run_trials(config)?;
    aggregate(config, &trials)
}

/// Parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Nodes,
    Lambda,
    Packets,
    Epsilon,
    Trials,
    Seed,
}

impl SweepAxis {
    pub fn value(self, c: &SimConfig) -> f64 {
        match self {
            SweepAxis::Nodes => c.n as f64,
            SweepAxis::Lambda => c.lambda.unwrap_or(f64::NAN),
            SweepAxis::Packets => c.l as f64,
            SweepAxis::Epsilon => c.epsilon,
            SweepAxis::Trials => c.trials as f64,
            SweepAxis::Seed => c.seed as f64,
        }
    }

    fn copy(self, from: &SimConfig, to: &mut SimConfig) {
        match self {
            SweepAxis::Nodes => to.n = from.n,
            SweepAxis::Lambda => to.lambda = from.lambda,
            SweepAxis::Packets => to.l = from.l,
            SweepAxis::Epsilon => to.epsilon = from.epsilon,
            SweepAxis::Trials => to.trials = from.trials,
            SweepAxis::Seed => to.seed = from.seed,
        }
    }

    fn set(self, c: &mut SimConfig, v: f64) -> Result<()> {
        let whole = || {
            (v >= 0.0 && v.fract() == 0.0)
                .then_some(v as u64)
                .ok_or_else(|| Error::config(format!("sweep value {v} must be a non-negative integer")))
        };
        match self {
            SweepAxis::Nodes => c.n = whole()? as usize,
            SweepAxis::Lambda => c.lambda = Some(v),
            SweepAxis::Packets => c.l = whole()?,
            SweepAxis::Epsilon => c.epsilon = v,
            SweepAxis::Trials => c.trials = whole()? as usize,
            SweepAxis::Seed => c.seed = whole()?,
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub rows: Vec<AggregateStats>,
    /// Least-squares slope of mean delay against the axis value.
    pub delay_slope: Option<f64>,
    /// Packets axis: mean delay never decreases as `l` grows.
    pub delay_non_decreasing: Option<bool>,
    /// Nodes axis: mean spreading time decreases as `n` grows.
    pub spreading_decreasing: Option<bool>,
}

/// Run one batch per config; all configs must differ only along `axis`.
pub fn sweep(configs: &[SimConfig], axis: SweepAxis) -> Result<SweepTable> {
    if let Some(first) = configs.first() {
        for c in configs {
            let mut normalized = *c;
            axis.copy(first, &mut normalized);
            if normalized != *first {
                return Err(Error::config(format!("sweep configs vary along more than the {axis:?} axis")));
            }
        }
        if axis == SweepAxis::Lambda && first.lambda.is_none() {
            return Err(Error::config("a lambda sweep needs explicit lambda values"));
        }
    }
    let rows = configs.iter().map(run_batch).collect::<Result<Vec<_>>>()?;
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.mean_delay().map(|d| (axis.value(&r.config), d)))
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
    let ordered = |ys: &[f64], cmp: fn(f64, f64) -> bool| ys.windows(2).all(|w| cmp(w[0], w[1]));
    let spreads: Vec<f64> = rows.iter().filter_map(|r| r.mean_spreading_time()).collect();
    Ok(SweepTable {
        axis,
        delay_slope: linear_fit(&xs, &ys).map(|(slope, _)| slope),
        delay_non_decreasing: (axis == SweepAxis::Packets).then(|| ordered(&ys, |a, b| b >= a)),
        spreading_decreasing: (axis == SweepAxis::Nodes).then(|| ordered(&spreads, |a, b| b < a)),
        rows,
    })
}

/// Sweep description read from a JSON file: a base config and the values
/// substituted along one axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub base: SimConfig,
    pub values: Vec<f64>,
}

impl SweepSpec {
    pub fn configs(&self) -> Result<Vec<SimConfig>> {
        self.values
            .iter()
            .map(|&v| {
                let mut c = self.base;
                self.axis.set(&mut c, v)?;
                Ok(c)
            })
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|source| Error::Io { path: path.into(), source })?;
        serde_json::from_reader(std::io::BufReader::new(file)).map_err(|source| Error::Json { path: path.into(), source })
    }
}

/// Empirical duplication law of the three-node subsystem against `2^{-k}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicationStudy {
    pub lambda: f64,
    pub samples: usize,
    pub seed: u64,
    /// Samples per reception count `k`.
    pub histogram: BTreeMap<u32, u64>,
    /// `(k, empirical P(k | k ≥ 1), 2^{-k})`.
    pub pmf: Vec<(u32, f64, f64)>,
    pub mean_redundant: f64,
    pub theory_mean_redundant: f64,
    /// Bins `1..K` plus a `≥ K` tail bin, with `K` keeping expected counts ≥ 5.
    pub chi_square: TestOutcome,
    pub chi_square_bins: usize,
}

impl DuplicationStudy {
    pub fn probability(&self, k: u32) -> f64 {
        self.histogram.get(&k).copied().unwrap_or(0) as f64 / self.samples as f64
    }
}

pub fn duplication_study(lambda: f64, samples: usize, seed: u64) -> Result<DuplicationStudy> {
    if samples == 0 {
        return Err(Error::config("need at least one sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut histogram = BTreeMap::new();
    let mut redundant = 0u64;
    for _ in 0..samples {
        let k = duplication_trial(lambda, &mut rng)?;
        *histogram.entry(k).or_insert(0u64) += 1;
        redundant += (k - 1) as u64;
    }
    let max_k = *histogram.keys().next_back().unwrap_or(&1);
    let pmf = (1..=max_k)
        .map(|k| {
            let count = histogram.get(&k).copied().unwrap_or(0);
            (k, count as f64 / samples as f64, analytics::duplication_pmf::<f64>(k).unwrap())
        })
        .collect();

    // Largest K with samples·2^{-K} ≥ 5; the last bin collects k ≥ K.
    let tail_bin = ((samples as f64 / 5.0).log2().floor() as u32).clamp(2, 30);
    let mut observed = vec![0u64; tail_bin as usize];
    for (&k, &c) in &histogram {
        observed[(k.min(tail_bin) - 1) as usize] += c;
    }
    let mut expected: Vec<f64> = (1..tail_bin).map(|k| analytics::duplication_pmf::<f64>(k).unwrap()).collect();
    expected.push(analytics::duplication_tail::<f64>(tail_bin - 1));
    let chi_square = chi_square_test(&observed, &expected);

    Ok(DuplicationStudy {
        lambda,
        samples,
        seed,
        histogram,
        pmf,
        mean_redundant: redundant as f64 / samples as f64,
        theory_mean_redundant: analytics::expected_redundant_copies(),
        chi_square,
        chi_square_bins: tail_bin as usize,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Json,
}

/// Column order of the CSV export.
pub const CSV_HEADER: [&str; 19] = [
    "config_id",
    "n",
    "lambda",
    "l",
    "epsilon",
    "protocol",
    "trials",
    "mean_delay",
    "se_delay",
    "theory_delay",
    "rel_err_delay",
    "mean_spread",
    "se_spread",
    "theory_spread",
    "rel_err_spread",
    "dup_mean",
    "kappa_hat",
    "theory_kappa",
    "incomplete_trials",
];

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_row(id: usize, s: &AggregateStats) -> Vec<String> {
    let protocol = match s.config.protocol {
        Protocol::Naive => "naive",
        Protocol::Rmpr => "rmpr",
    };
    vec![
        id.to_string(),
        s.config.n.to_string(),
        s.lambda.to_string(),
        s.config.l.to_string(),
        s.config.epsilon.to_string(),
        protocol.to_string(),
        s.config.trials.to_string(),
        cell(s.delay.map(|e| e.mean)),
        cell(s.delay.map(|e| e.std_error)),
        s.theory.expected_delay.to_string(),
        cell(s.rel_err_delay),
        cell(s.spreading_time.map(|e| e.mean)),
        cell(s.spreading_time.map(|e| e.std_error)),
        cell(s.theory.spreading_time_point),
        cell(s.rel_err_spread),
        cell(s.duplication_mean),
        cell(s.kappa_hat),
        cell(s.theory_kappa),
        s.incomplete_trials.to_string(),
    ]
}

pub fn write_csv<W: Write>(writer: W, rows: &[AggregateStats]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(CSV_HEADER)?;
    for (i, row) in rows.iter().enumerate() {
        out.write_record(csv_row(i, row))?;
    }
    out.flush()?;
    Ok(())
}

/// Write `rows` to `path`. JSON carries the full nested structure.
pub fn export(rows: &[AggregateStats], path: &Path, format: ExportFormat) -> Result<()> {
    let file = File::create(path).map_err(|source| Error::Io { path: path.into(), source })?;
    let mut writer = BufWriter::new(file);
    match format {
        ExportFormat::Csv => write_csv(&mut writer, rows).map_err(|source| Error::Csv { path: path.into(), source })?,
        ExportFormat::Json => {
            serde_json::to_writer_pretty(&mut writer, rows).map_err(|source| Error::Json { path: path.into(), source })?
        }
    }
    writer.flush().map_err(|source| Error::Io { path: path.into(), source })
}
