//! Monte-Carlo harness: random channels, repeated solves, CSV and trace
//! output.
//!
//! Trial `t` draws its channel from a seed derived from `(master_seed, t)`
//! alone, so records do not depend on how trials are scheduled.

use std::io::{self, Write};

use serde::Serialize;
use serde_json::json;

use crate::config::{RateUnit, SystemConfig};
use crate::error::{Result, RsmaError};
use crate::model::generate_channel;
use crate::solver::{solve_sdma, solve_with, OuterTrace, SolveOptions};

pub const CSV_HEADER: &str =
    "trial,seed,wsr_nats,wsr_bits,outer_iters,inner_iters,time_s,power_used,y_nats,converged,kkt_resid,sdma_wsr_nats";

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of stream `index` under `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix(mix(master).wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

/// Summary of one trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub wsr_nats: f64,
    pub wsr_bits: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub wall_time: f64,
    pub power_used: f64,
    pub y_nats: f64,
    pub c: Vec<f64>,
    pub converged: bool,
    /// Largest KKT residual of the final inner solve.
    pub kkt_resid: f64,
    pub sdma_wsr_nats: Option<f64>,
    /// Set when the solver returned an error for this trial.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub trials: usize,
    pub converged: usize,
    pub wsr_mean: f64,
    pub wsr_std: f64,
    pub time_mean: f64,
    pub time_std: f64,
    pub sdma_wsr_mean: Option<f64>,
    /// Trials where the RSMA WSR is at least the SDMA WSR (minus 1e-6).
    pub rsma_not_worse: Option<usize>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl Summary {
    pub fn from_records(records: &[TrialRecord]) -> Self {
        let wsr: Vec<f64> = records.iter().map(|r| r.wsr_nats).collect();
        let time: Vec<f64> = records.iter().map(|r| r.wall_time).collect();
        let (wsr_mean, wsr_std) = mean_std(&wsr);
        let (time_mean, time_std) = mean_std(&time);
        let sdma: Vec<f64> = records.iter().filter_map(|r| r.sdma_wsr_nats).collect();
        let has_sdma = !sdma.is_empty();
        Self {
            trials: records.len(),
            converged: records.iter().filter(|r| r.converged).count(),
            wsr_mean,
            wsr_std,
            time_mean,
            time_std,
            sdma_wsr_mean: has_sdma.then(|| mean_std(&sdma).0),
            rsma_not_worse: has_sdma.then(|| {
                records
                    .iter()
                    .filter(|r| r.sdma_wsr_nats.is_some_and(|s| r.wsr_nats >= s - 1e-6))
                    .count()
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub parallelism: usize,
    pub compare_sdma: bool,
    pub collect_traces: bool,
}

#[derive(Debug, Clone)]
pub struct MonteCarloRun {
    pub records: Vec<TrialRecord>,
    pub summary: Summary,
    /// One JSON line per outer iteration per trial, in trial order.
    pub traces: Vec<String>,
}

fn run_trial(cfg: &SystemConfig, trial: usize, master_seed: u64, opts: RunOptions) -> (TrialRecord, Vec<String>) {
    let seed = derive_seed(master_seed, trial as u64);
    let h = generate_channel(cfg, seed);
    let mut lines = Vec::new();
    let mut on_outer = |t: &OuterTrace| {
        if opts.collect_traces {
            lines.push(
                json!({
                    "trial": trial,
                    "n": t.iteration,
                    "wsr": t.wsr,
                    "lambda": t.lambda,
                    "mu": t.mu,
                    "residuals": {
                        "compl": t.compl_residual,
                        "power": t.power_residual,
                    },
                    "inner_iterations": t.inner_iterations,
                    "inner_converged": t.inner_converged,
                    "accepted": t.accepted,
                })
                .to_string(),
            );
        }
    };
    let result = solve_with(
        &h,
        cfg,
        SolveOptions {
            on_outer: Some(&mut on_outer),
            ..Default::default()
        },
    );
    let sdma = opts
        .compare_sdma
        .then(|| solve_sdma(&h, cfg).map(|s| s.report.wsr).ok())
        .flatten();
    let record = match result {
        Ok(sol) => TrialRecord {
            trial,
            seed,
            wsr_nats: sol.report.wsr,
            wsr_bits: RateUnit::Bits.convert(sol.report.wsr),
            outer_iterations: sol.outer_iterations,
            inner_iterations: sol.inner_iterations,
            wall_time: sol.wall_time,
            power_used: sol.w.power(),
            y_nats: sol.report.y,
            c: sol.report.c.clone(),
            converged: sol.converged,
            kkt_resid: sol.kkt.as_ref().map_or(0.0, |k| k.max()),
            sdma_wsr_nats: sdma,
            error: None,
        },
        Err(e) => TrialRecord {
            trial,
            seed,
            wsr_nats: 0.0,
            wsr_bits: 0.0,
            outer_iterations: 0,
            inner_iterations: 0,
            wall_time: 0.0,
            power_used: 0.0,
            y_nats: 0.0,
            c: vec![0.0; cfg.users],
            converged: false,
            kkt_resid: f64::NAN,
            sdma_wsr_nats: sdma,
            error: Some(e.to_string()),
        },
    };
    (record, lines)
}

/// Runs `trials` independent solves on `parallelism` threads (0 = rayon's
/// default). Results come back in trial order.
pub fn run_montecarlo(cfg: &SystemConfig, trials: usize, master_seed: u64, opts: RunOptions) -> Result<MonteCarloRun> {
    cfg.validate()?;
    if trials == 0 {
        return Err(RsmaError::InvalidConfig("at least one trial is required".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.parallelism)
        .build()
        .map_err(|e| RsmaError::InvalidConfig(format!("thread pool: {e}")))?;
    let results: Vec<(TrialRecord, Vec<String>)> = pool.install(|| {
        use rayon::prelude::*;
        (0..trials)
            .into_par_iter()
            .map(|t| run_trial(cfg, t, master_seed, opts))
            .collect()
    });
    let mut records = Vec::with_capacity(trials);
    let mut traces = Vec::new();
    for (r, lines) in results {
        records.push(r);
        traces.extend(lines);
    }
    let summary = Summary::from_records(&records);
    Ok(MonteCarloRun {
        records,
        summary,
        traces,
    })
}

/// Plain decimal with 12 significant digits.
pub fn format_sig12(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x == 0.0 {
            "0".into()
        } else {
            format!("{x}")
        };
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (11 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Writes the CSV table. With `timing = false` the `time_s` column is
/// written as `0` so that repeated runs are byte-identical.
pub fn write_csv<W: Write>(mut out: W, records: &[TrialRecord], timing: bool) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        let time = if timing { format_sig12(r.wall_time) } else { "0".into() };
        let sdma = r.sdma_wsr_nats.map(format_sig12).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.trial,
            r.seed,
            format_sig12(r.wsr_nats),
            format_sig12(r.wsr_bits),
            r.outer_iterations,
            r.inner_iterations,
            time,
            format_sig12(r.power_used),
            format_sig12(r.y_nats),
            r.converged,
            format_sig12(r.kkt_resid),
            sdma
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_distinct_and_stable() {
        let a: Vec<u64> = (0..100).map(|t| derive_seed(1, t)).collect();
        let mut sorted = a.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 100);
        assert_eq!(derive_seed(1, 5), a[5]);
        assert_ne!(derive_seed(2, 5), a[5]);
    }

    #[test]
    fn sig12_formatting() {
        assert_eq!(format_sig12(0.0), "0");
        assert_eq!(format_sig12(1.0), "1");
        assert_eq!(format_sig12(std::f64::consts::PI), "3.14159265359");
        assert_eq!(format_sig12(123456.789012345), "123456.789012");
        assert_eq!(format_sig12(-0.00012345678901234), "-0.000123456789012");
        assert_eq!(format_sig12(100.0), "100");
    }

    #[test]
    fn summary_is_the_arithmetic_mean() {
        let cfg = SystemConfig::new(2, 2, 10.0);
        let run = run_montecarlo(
            &cfg,
            7,
            3,
            RunOptions {
                parallelism: 2,
                ..Default::default()
            },
        )
        .unwrap();
        let mean = run.records.iter().map(|r| r.wsr_nats).sum::<f64>() / 7.0;
        assert!((run.summary.wsr_mean - mean).abs() < 1e-12);
        assert_eq!(run.summary.trials, 7);
        assert!(run.records.iter().all(|r| r.wall_time > 0.0 && r.wsr_nats >= 0.0));
    }

    #[test]
    fn records_do_not_depend_on_thread_count() {
        let cfg = SystemConfig::new(3, 3, 20.0);
        let opts = |p| RunOptions {
            parallelism: p,
            compare_sdma: true,
            collect_traces: true,
        };
        let a = run_montecarlo(&cfg, 6, 42, opts(1)).unwrap();
        let b = run_montecarlo(&cfg, 6, 42, opts(4)).unwrap();
        let strip = |r: &TrialRecord| TrialRecord {
            wall_time: 0.0,
            ..r.clone()
        };
        assert_eq!(
            a.records.iter().map(strip).collect::<Vec<_>>(),
            b.records.iter().map(strip).collect::<Vec<_>>()
        );
        assert_eq!(a.traces, b.traces);
        let mut ca = Vec::new();
        let mut cb = Vec::new();
        write_csv(&mut ca, &a.records, false).unwrap();
        write_csv(&mut cb, &b.records, false).unwrap();
        assert_eq!(ca, cb);
        let text = String::from_utf8(ca).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
        assert_eq!(text.lines().count(), 7);
    }

    #[test]
    fn zero_trials_is_an_error() {
        assert!(run_montecarlo(&SystemConfig::new(1, 1, 1.0), 0, 0, RunOptions::default()).is_err());
    }
}
