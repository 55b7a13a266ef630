//! Command-line front end.
//!
//! Exit status: 0 on success, 1 on usage or configuration errors, 2 on
//! runtime and IO errors.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analytics::{self, TheoryPrediction};
use crate::error::{Error, Result};
use crate::experiment::{
    duplication_study, run_batch, sweep, write_csv, AggregateStats, DuplicationStudy, SimConfig, SweepSpec,
    DEFAULT_EPSILON, DEFAULT_TRIALS,
};
use crate::meeting::{write_trace, MeetingEvent, MeetingRate};
use crate::mobility::{
    detect_contact_onsets, estimate_lambda, pair_gaps, theoretical_lambda, MobileNodes, MobilityConfig, MobilityModel,
};
use crate::protocol::{ExchangeMode, Protocol};
use crate::stats::{ks_test, TestOutcome};

/// Environment variable capping batch parallelism (0 or unset = all cores).
pub const THREADS_ENV: &str = "RMPR_THREADS";

#[derive(Debug, Parser)]
#[command(name = "rmpr", version, about = "Rateless multi-packet spreading: simulation and closed-form predictions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the closed-form predictions as JSON.
    Theory {
        #[command(flatten)]
        model: ModelArgs,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo batch over Poisson meetings (or spatial contacts with --mobility).
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Generate mobility contacts, estimate λ and test the inter-contact law.
    Spatial(SpatialArgs),
    /// Empirical duplication law of the three-node subsystem.
    Duplication {
        /// Pairwise meeting rate.
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Number of sampled source-to-relay intervals.
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Run the batches described by a JSON sweep file.
    Sweep {
        /// Sweep file: {"axis": ..., "base": {...}, "values": [...]}.
        file: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Number of nodes, source included.
    #[arg(long)]
    nodes: usize,
    /// Pairwise meeting rate [default: 1, or derived from --mobility].
    #[arg(long, conflicts_with = "mobility")]
    lambda: Option<f64>,
    /// Derive meetings from a mobility model on the unit square.
    #[arg(long, value_enum)]
    mobility: Option<MobilityArg>,
    /// Node speed (mobility only).
    #[arg(long, default_value_t = 1.0, requires = "mobility")]
    speed: f64,
    /// Communication range (mobility only).
    #[arg(long, default_value_t = 0.05, requires = "mobility")]
    range: f64,
    /// Native packets in the file.
    #[arg(long, default_value_t = 10)]
    packets: u64,
    /// Decoding overhead: a node decodes after ceil((1+ε)l) distinct packets.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long, value_enum, default_value_t = ProtocolArg::Rmpr)]
    protocol: ProtocolArg,
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-trial time limit [default: 50× the predicted spreading time].
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long, value_enum, default_value_t = ExchangeArg::Bi)]
    exchange: ExchangeArg,
    /// Keep each trial running until the source has met every node.
    #[arg(long)]
    wait_for_relay_init: bool,
    /// Check protocol invariants on every meeting.
    #[arg(long)]
    audit: bool,
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Write to a file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
}

#[derive(Debug, Args)]
struct SpatialArgs {
    #[arg(long)]
    nodes: usize,
    #[arg(long, value_enum, default_value_t = MobilityArg::RandomDirection)]
    mobility: MobilityArg,
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    #[arg(long, default_value_t = 0.05)]
    range: f64,
    /// Model time to observe.
    #[arg(long, default_value_t = 10_000.0)]
    duration: f64,
    /// Sampling step [default: range / (4 speed)].
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the detected contacts (time,a,b) to this CSV file.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Pair whose inter-contact gaps are tested, as A,B.
    #[arg(long, value_parser = parse_pair, default_value = "0,1")]
    pair: (usize, usize),
    /// Run a protocol batch over spatial contacts with this many packets.
    #[arg(long)]
    packets: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, value_enum, default_value_t = ProtocolArg::Rmpr)]
    protocol: ProtocolArg,
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    trials: usize,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long, value_enum, default_value_t = ExchangeArg::Bi)]
    exchange: ExchangeArg,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MobilityArg {
    RandomDirection,
    RandomWaypoint,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Naive,
    Rmpr,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ExchangeArg {
    Bi,
    Uni,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<MobilityArg> for MobilityModel {
    fn from(m: MobilityArg) -> Self {
        match m {
            MobilityArg::RandomDirection => MobilityModel::RandomDirection,
            MobilityArg::RandomWaypoint => MobilityModel::RandomWaypoint,
        }
    }
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::Naive => Protocol::Naive,
            ProtocolArg::Rmpr => Protocol::Rmpr,
        }
    }
}

impl From<ExchangeArg> for ExchangeMode {
    fn from(e: ExchangeArg) -> Self {
        match e {
            ExchangeArg::Bi => ExchangeMode::Bidirectional,
            ExchangeArg::Uni => ExchangeMode::Unidirectional,
        }
    }
}

impl ModelArgs {
    fn mobility(&self) -> Option<MobilityConfig> {
        self.mobility.map(|m| MobilityConfig::new(m.into(), self.speed, self.range))
    }

    fn sim_config(&self, run: &RunArgs) -> SimConfig {
        let mut c = match self.mobility() {
            Some(m) => SimConfig::with_mobility(self.nodes, m, self.packets, run.protocol.into()),
            None => SimConfig::with_lambda(self.nodes, self.lambda.unwrap_or(1.0), self.packets, run.protocol.into()),
        };
        c.epsilon = self.epsilon;
        c.trials = run.trials;
        c.seed = run.seed;
        c.horizon = run.horizon;
        c.exchange_mode = run.exchange.into();
        c.wait_for_relay_init = run.wait_for_relay_init;
        c.audit = run.audit;
        c
    }
}

/// Result of the `spatial` subcommand without a protocol run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpatialReport {
    pub n: usize,
    pub mobility: MobilityConfig,
    pub duration: f64,
    pub dt: f64,
    pub seed: u64,
    pub events: usize,
    pub lambda_hat: f64,
    pub lambda_theory: f64,
    pub rel_err: f64,
    /// Pair whose inter-contact gaps were tested against Exp(λ̂).
    pub ks_pair: (usize, usize),
    pub ks_gaps: usize,
    pub ks: Option<TestOutcome>,
}

/// Parse `argv` (program name first), run the command and return the exit status.
pub fn parse_and_dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return 1;
    }
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                1
            } else {
                2
            }
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("{THREADS_ENV} must be a non-negative integer, got {raw:?}")))?;
    // A second call in the same process finds the pool already built; keep it.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Theory { model, out } => {
            let prediction = theory(&model)?;
            emit_json(&prediction, out.as_deref())
        }
        Command::Simulate { model, run, output } => {
            let stats = run_batch(&model.sim_config(&run))?;
            emit_rows(&[stats], &output)
        }
        Command::Spatial(args) => spatial(&args),
        Command::Duplication {
            lambda,
            samples,
            seed,
            output,
        } => {
            let study = duplication_study(lambda, samples, seed)?;
            match output.format {
                FormatArg::Json => emit_json(&study, output.out.as_deref()),
                FormatArg::Csv => with_writer(output.out.as_deref(), |w| duplication_csv(w, &study)),
            }
        }
        Command::Sweep { file, output } => {
            let spec = SweepSpec::load(&file).map_err(|e| match e {
                Error::Json { path, source } => Error::config(format!("invalid sweep file {}: {source}", path.display())),
                other => other,
            })?;
            let table = sweep(&spec.configs()?, spec.axis)?;
            match output.format {
                FormatArg::Json => emit_json(&table, output.out.as_deref()),
                FormatArg::Csv => emit_rows(&table.rows, &output),
            }
        }
    }
}

fn theory(model: &ModelArgs) -> Result<TheoryPrediction<f64>> {
    let lambda = match model.mobility() {
        Some(m) => {
            m.validate()?;
            theoretical_lambda(&m)?
        }
        None => MeetingRate::new(model.lambda.unwrap_or(1.0))?,
    };
    analytics::predict(model.nodes, lambda, model.packets, model.epsilon)
}

fn spatial(args: &SpatialArgs) -> Result<()> {
    let mobility = MobilityConfig::new(args.mobility.into(), args.speed, args.range);
    mobility.validate()?;
    if let Some(w) = mobility.warning() {
        eprintln!("warning: {w}");
    }
    if let Some(l) = args.packets {
        let config = SimConfig {
            epsilon: args.epsilon,
            trials: args.trials,
            seed: args.seed,
            horizon: args.horizon,
            exchange_mode: args.exchange.into(),
            ..SimConfig::with_mobility(args.nodes, mobility, l, args.protocol.into())
        };
        return emit_rows(&[run_batch(&config)?], &args.output);
    }

    let dt = args.dt.unwrap_or_else(|| mobility.default_step());
    let mut nodes = MobileNodes::new(args.nodes, mobility, args.seed)?;
    let events = detect_contact_onsets(&mut nodes, mobility.range, args.duration, dt)?;
    if let Some(path) = &args.trace {
        with_writer(Some(path), |w| write_trace(w, &events).map_err(|source| csv_error(Some(path), source)))?;
    }
    let report = spatial_report(args, mobility, dt, &events)?;
    match args.output.format {
        FormatArg::Json => emit_json(&report, args.output.out.as_deref()),
        FormatArg::Csv => with_writer(args.output.out.as_deref(), |w| spatial_csv(w, &report)),
    }
}

fn spatial_report(args: &SpatialArgs, mobility: MobilityConfig, dt: f64, events: &[MeetingEvent]) -> Result<SpatialReport> {
    let estimate = estimate_lambda(events, args.nodes, args.duration)?;
    let lambda_theory = theoretical_lambda(&mobility)?.get();
    let ks_pair = args.pair;
    if ks_pair.0 == ks_pair.1 || ks_pair.0.max(ks_pair.1) >= args.nodes {
        return Err(Error::config(format!("--pair needs two distinct nodes below {}", args.nodes)));
    }
    let gaps = pair_gaps(events, ks_pair.0, ks_pair.1);
    let rate = estimate.rate;
    let ks = (!gaps.is_empty() && rate > 0.0).then(|| ks_test(&gaps, |x| 1.0 - (-rate * x).exp()));
    Ok(SpatialReport {
        n: args.nodes,
        mobility,
        duration: args.duration,
        dt,
        seed: args.seed,
        events: estimate.events,
        lambda_hat: estimate.rate,
        lambda_theory,
        rel_err: (estimate.rate - lambda_theory).abs() / lambda_theory,
        ks_pair,
        ks_gaps: gaps.len(),
        ks,
    })
}

fn parse_pair(raw: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = raw.split_once(',').ok_or("expected A,B")?;
    let parse = |x: &str| x.trim().parse::<usize>().map_err(|e| e.to_string());
    Ok((parse(a)?, parse(b)?))
}

fn csv_error(path: Option<&Path>, source: csv::Error) -> Error {
    Error::Csv {
        path: path.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("<stdout>")),
        source,
    }
}

fn io_error(path: Option<&Path>, source: io::Error) -> Error {
    Error::Io {
        path: path.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("<stdout>")),
        source,
    }
}

/// Run `f` against the output file, or stdout when no path is given.
fn with_writer(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let file = File::create(p).map_err(|e| io_error(path, e))?;
            let mut w = BufWriter::new(file);
            f(&mut w)?;
            w.flush().map_err(|e| io_error(path, e))
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            f(&mut w)?;
            w.flush().map_err(|e| io_error(path, e))
        }
    }
}

fn emit_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    with_writer(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(|source| Error::Json {
            path: path.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("<stdout>")),
            source,
        })?;
        writeln!(w).map_err(|e| io_error(path, e))
    })
}

fn emit_rows(rows: &[AggregateStats], output: &OutputArgs) -> Result<()> {
    let path = output.out.as_deref();
    match output.format {
        FormatArg::Json => emit_json(&rows, path),
        FormatArg::Csv => with_writer(path, |w| write_csv(w, rows).map_err(|e| csv_error(path, e))),
    }
}

fn duplication_csv(w: &mut dyn Write, study: &DuplicationStudy) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e| csv_error(None, e);
    out.write_record(["lambda", "samples", "seed", "k", "empirical", "theory"]).map_err(err)?;
    for &(k, p, q) in &study.pmf {
        out.write_record([
            study.lambda.to_string(),
            study.samples.to_string(),
            study.seed.to_string(),
            k.to_string(),
            p.to_string(),
            q.to_string(),
        ])
        .map_err(err)?;
    }
    out.flush().map_err(|e| io_error(None, e))
}

fn spatial_csv(w: &mut dyn Write, r: &SpatialReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e| csv_error(None, e);
    let model = match r.mobility.model {
        MobilityModel::RandomDirection => "random-direction",
        MobilityModel::RandomWaypoint => "random-waypoint",
    };
    out.write_record([
        "n", "mobility", "speed", "range", "duration", "dt", "seed", "events", "lambda_hat", "lambda_theory", "rel_err",
        "ks_a", "ks_b", "ks_gaps", "ks_statistic", "ks_p_value",
    ])
    .map_err(err)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    out.write_record([
        r.n.to_string(),
        model.to_string(),
        r.mobility.speed.to_string(),
        r.mobility.range.to_string(),
        r.duration.to_string(),
        r.dt.to_string(),
        r.seed.to_string(),
        r.events.to_string(),
        r.lambda_hat.to_string(),
        r.lambda_theory.to_string(),
        r.rel_err.to_string(),
        r.ks_pair.0.to_string(),
        r.ks_pair.1.to_string(),
        r.ks_gaps.to_string(),
        opt(r.ks.map(|k| k.statistic)),
        opt(r.ks.map(|k| k.p_value)),
    ])
    .map_err(err)?;
    out.flush().map_err(|e| io_error(None, e))
}
