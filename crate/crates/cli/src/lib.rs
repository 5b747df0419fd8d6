//! Command-line front end: `solve`, `montecarlo` and `validate`.
//!
//! Exit codes: 0 on success, 1 on argument or input errors, 2 when the
//! validation suite fails.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rsma_core::model::generate_channel;
use rsma_core::montecarlo::{run_montecarlo, write_csv, RunOptions};
use rsma_core::oracle::validation_suite;
use rsma_core::{solve, solve_sdma, ChannelFile, RateUnit, SystemConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "rsma", version, about = "Weighted sum-rate beamforming for 1-layer RSMA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one instance and print the solution as JSON.
    Solve(SolveArgs),
    /// Run repeated solves on random channels.
    Montecarlo(MonteCarloArgs),
    /// Cross-check the solver against the reference oracles.
    Validate,
}

#[derive(Debug, Args)]
struct SystemArgs {
    /// Number of users K.
    #[arg(long, default_value_t = 4)]
    users: usize,
    /// Number of transmit antennas L.
    #[arg(long, default_value_t = 4)]
    antennas: usize,
    /// Transmit power budget in watts.
    #[arg(long, default_value_t = 100.0, conflicts_with = "power_db")]
    power: f64,
    /// Transmit power budget in dBW (overrides --power).
    #[arg(long)]
    power_db: Option<f64>,
    /// Damping constant of the dual update.
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    /// Stopping tolerance of both loops.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Comma-separated user weights (default: all ones).
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    /// Noise power at every user.
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 500)]
    max_outer: usize,
    #[arg(long, default_value_t = 2000)]
    max_inner: usize,
    /// Report rates in bits instead of nats.
    #[arg(long)]
    bits: bool,
}

impl SystemArgs {
    fn config(&self, antennas: usize, users: usize, sigma2: Option<Vec<f64>>) -> SystemConfig {
        let power = self.power_db.map_or(self.power, |db| 10f64.powf(db / 10.0));
        let mut cfg = SystemConfig::new(antennas, users, power)
            .with_sigma2(sigma2.unwrap_or_else(|| vec![self.noise; users]))
            .with_weights(self.weights.clone().unwrap_or_else(|| vec![1.0; users]))
            .with_tolerance(self.tol);
        cfg.rho = self.rho;
        cfg.max_outer = self.max_outer;
        cfg.max_inner = self.max_inner;
        if self.bits {
            cfg.rate_unit = RateUnit::Bits;
        }
        cfg
    }
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    system: SystemArgs,
    /// Channel description (JSON); overrides --users, --antennas and --noise.
    #[arg(long, conflicts_with = "seed")]
    channel_file: Option<PathBuf>,
    /// Seed of a random CN(0, I) channel.
    #[arg(long)]
    seed: Option<u64>,
    /// Solve without the common stream instead.
    #[arg(long)]
    sdma: bool,
}

#[derive(Debug, Args)]
struct MonteCarloArgs {
    #[command(flatten)]
    system: SystemArgs,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Master seed; trial seeds are derived from it.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON-lines convergence trace path.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    parallel: usize,
    /// Also solve each channel without the common stream.
    #[arg(long)]
    compare_sdma: bool,
    /// Write 0 in the time_s column so repeated runs are byte-identical.
    #[arg(long)]
    no_timing: bool,
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn cli_main(argv: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Solve(args) => run_solve(args, out),
        Command::Montecarlo(args) => run_mc(args, out),
        Command::Validate => return run_validate(out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(msg) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
    }
}

fn run_solve(args: SolveArgs, out: &mut dyn Write) -> Result<(), String> {
    let (cfg, h) = if let Some(path) = &args.channel_file {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let file = ChannelFile::parse(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let cfg = args.system.config(file.antennas, file.users, Some(file.sigma2.clone()));
        (cfg, file.channel().map_err(|e| e.to_string())?)
    } else {
        let cfg = args.system.config(args.system.antennas, args.system.users, None);
        cfg.validate().map_err(|e| e.to_string())?;
        let h = generate_channel(&cfg, args.seed.unwrap_or(0));
        (cfg, h)
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let sol = if args.sdma {
        solve_sdma(&h, &cfg)
    } else {
        solve(&h, &cfg)
    }
    .map_err(|e| e.to_string())?;
    let text = serde_json::to_string_pretty(&sol.to_json(&cfg)).map_err(|e| e.to_string())?;
    writeln!(out, "{text}").map_err(|e| e.to_string())
}

fn create(path: &PathBuf) -> Result<BufWriter<File>, String> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| format!("{}: {e}", path.display()))
}

fn run_mc(args: MonteCarloArgs, out: &mut dyn Write) -> Result<(), String> {
    let s = &args.system;
    let cfg = s.config(s.antennas, s.users, None);
    cfg.validate().map_err(|e| e.to_string())?;
    let opts = RunOptions {
        parallelism: args.parallel,
        compare_sdma: args.compare_sdma,
        collect_traces: args.trace.is_some(),
    };
    let run = run_montecarlo(&cfg, args.trials, args.seed, opts).map_err(|e| e.to_string())?;
    if let Some(path) = &args.out {
        let mut w = create(path)?;
        write_csv(&mut w, &run.records, !args.no_timing)
            .and_then(|_| w.flush())
            .map_err(|e| format!("{}: {e}", path.display()))?;
    }
    if let Some(path) = &args.trace {
        let mut w = create(path)?;
        run.traces
            .iter()
            .try_for_each(|line| writeln!(w, "{line}"))
            .and_then(|_| w.flush())
            .map_err(|e| format!("{}: {e}", path.display()))?;
    }
    let mut summary = serde_json::to_value(&run.summary).map_err(|e| e.to_string())?;
    if cfg.rate_unit == RateUnit::Bits {
        summary["wsr_mean_bits"] = RateUnit::Bits.convert(run.summary.wsr_mean).into();
    }
    if args.no_timing {
        summary["time_mean"] = 0.0.into();
        summary["time_std"] = 0.0.into();
    }
    writeln!(
        out,
        "{}",
        serde_json::to_string_pretty(&summary).map_err(|e| e.to_string())?
    )
    .map_err(|e| e.to_string())
}

fn run_validate(out: &mut dyn Write) -> i32 {
    let checks = validation_suite();
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    for c in &checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "{status}  {:width$}  {}", c.name, c.detail);
    }
    if checks.iter().all(|c| c.passed) {
        EXIT_OK
    } else {
        EXIT_VALIDATION
    }
}
