//! Alternating-optimization driver.
//!
//! Each outer iteration refreshes the auxiliaries at the current beamformer
//! (which makes the surrogate tight) and then maximizes the surrogate over
//! `(W, y)` with HFPI. The surrogate lower-bounds the true WSR, so accepting
//! only non-decreasing surrogate values keeps the WSR sequence monotone.

use std::time::Instant;

use nalgebra::{DMatrix, SVD};
use num_complex::Complex64;
use serde::Serialize;
use serde_json::{json, Value};

use crate::beamstruct::{kkt_residuals, run_inner, DualState, InnerProblem, InnerTrace, KktResiduals};
use crate::config::SystemConfig;
use crate::error::{Result, RsmaError};
use crate::fp::{objective_from, surrogate_rates, AuxiliaryState};
use crate::model::{evaluate, BeamformingMatrix, ChannelMatrix, RateReport};

/// Gives the whole common rate to the highest-weight user (lowest index on
/// ties) and nothing to anyone else.
///
/// For fixed rates the allocation is a linear program over a scaled simplex
/// whose budget is the worst common-stream rate, so the optimum sits on the
/// vertex of the largest weight.
pub fn allocate_common_rate(weights: &[f64], r0: &[f64]) -> Result<Vec<f64>> {
    if weights.is_empty() || r0.is_empty() {
        return Err(RsmaError::Empty("weights and common rates"));
    }
    if weights.len() != r0.len() {
        return Err(RsmaError::Dimension(format!(
            "{} weights for {} common rates",
            weights.len(),
            r0.len()
        )));
    }
    let budget = r0.iter().copied().fold(f64::INFINITY, f64::min).max(0.0);
    let mut best = 0;
    for (i, d) in weights.iter().enumerate() {
        if *d > weights[best] {
            best = i;
        }
    }
    let mut c = vec![0.0; weights.len()];
    c[best] = budget;
    Ok(c)
}

/// MRT private beams and a common beam along the dominant left singular
/// vector of `H`, each with power `Pt / (K + 1)`.
///
/// A user with an all-zero channel gets no private beam; its share is
/// spread over the remaining beams.
pub fn initialize_beamformers(h: &ChannelMatrix, cfg: &SystemConfig) -> Result<BeamformingMatrix> {
    h.check(cfg)?;
    let hm = h.matrix();
    let (l, k) = hm.shape();
    let svd = SVD::new(hm.clone(), true, false);
    let u = svd
        .u
        .ok_or_else(|| RsmaError::Numerical("singular value decomposition failed".into()))?;
    let top = svd
        .singular_values
        .iter()
        .enumerate()
        .fold(0, |best, (i, s)| if *s > svd.singular_values[best] { i } else { best });

    let mut w = DMatrix::zeros(l, k + 1);
    w.column_mut(0).copy_from(&u.column(top));
    let mut active = 1;
    for j in 0..k {
        let norm = hm.column(j).norm();
        if norm > 0.0 {
            w.column_mut(j + 1).copy_from(&(hm.column(j) / Complex64::from(norm)));
            active += 1;
        }
    }
    w *= Complex64::from((cfg.power / active as f64).sqrt());
    BeamformingMatrix::new(w)
}

/// MRT private beams with `Pt / K` each and no common beam.
pub fn initialize_private_beamformers(h: &ChannelMatrix, cfg: &SystemConfig) -> Result<BeamformingMatrix> {
    h.check(cfg)?;
    let hm = h.matrix();
    let (l, k) = hm.shape();
    let mut w = DMatrix::zeros(l, k + 1);
    let mut active = 0;
    for j in 0..k {
        let norm = hm.column(j).norm();
        if norm > 0.0 {
            w.column_mut(j + 1).copy_from(&(hm.column(j) / Complex64::from(norm)));
            active += 1;
        }
    }
    if active > 0 {
        w *= Complex64::from((cfg.power / active as f64).sqrt());
    }
    BeamformingMatrix::new(w)
}

/// Outcome of a full solve.
#[derive(Debug, Clone)]
pub struct Solution {
    pub w: BeamformingMatrix,
    pub report: RateReport,
    pub duals: DualState,
    pub outer_iterations: usize,
    /// HFPI iterations summed over all outer iterations.
    pub inner_iterations: usize,
    pub converged: bool,
    /// WSR of the initial point followed by one entry per accepted outer
    /// iteration.
    pub wsr_trace: Vec<f64>,
    pub wall_time: f64,
    /// KKT residuals of the last accepted inner solve (RSMA only).
    pub kkt: Option<KktResiduals>,
    /// Number of clamped HFPI denominators.
    pub clamp_events: usize,
}

impl Solution {
    pub fn to_json(&self, cfg: &SystemConfig) -> Value {
        let unit = cfg.rate_unit;
        let m = self.w.matrix();
        let rows = |f: fn(&Complex64) -> f64| -> Vec<Vec<f64>> {
            (0..m.nrows())
                .map(|l| (0..m.ncols()).map(|j| f(&m[(l, j)])).collect())
                .collect()
        };
        let conv = |v: &[f64]| v.iter().map(|x| unit.convert(*x)).collect::<Vec<_>>();
        json!({
            "unit": unit,
            "wsr": unit.convert(self.report.wsr),
            "converged": self.converged,
            "outer_iterations": self.outer_iterations,
            "inner_iterations": self.inner_iterations,
            "wall_time": self.wall_time,
            "power_used": self.w.power(),
            "W_re": rows(|z| z.re),
            "W_im": rows(|z| z.im),
            "report": {
                "r0": conv(&self.report.r0),
                "rp": conv(&self.report.rp),
                "c": conv(&self.report.c),
                "y": unit.convert(self.report.y),
                "wsr": unit.convert(self.report.wsr),
                "r_tot": conv(&self.report.r_tot),
            },
            "duals": self.duals,
            "kkt": self.kkt,
            "wsr_trace": conv(&self.wsr_trace),
        })
    }
}

/// Per-outer-iteration snapshot.
#[derive(Debug, Clone, Serialize)]
pub struct OuterTrace<'a> {
    pub iteration: usize,
    pub wsr: f64,
    pub lambda: &'a [f64],
    pub mu: f64,
    pub inner_iterations: usize,
    pub inner_converged: bool,
    pub compl_residual: f64,
    pub power_residual: f64,
    pub power: f64,
    /// False when the inner solve did not improve the surrogate and the
    /// previous beamformer was kept.
    pub accepted: bool,
}

/// Optional knobs for [`solve_with`].
#[derive(Default)]
pub struct SolveOptions<'a> {
    /// Starting beamformer; defaults to [`initialize_beamformers`].
    pub init: Option<BeamformingMatrix>,
    pub on_outer: Option<&'a mut dyn FnMut(&OuterTrace)>,
    pub on_inner: Option<&'a mut dyn FnMut(&InnerTrace)>,
}

/// Runs FP-HFPI from the default initialization.
pub fn solve(h: &ChannelMatrix, cfg: &SystemConfig) -> Result<Solution> {
    solve_with(h, cfg, SolveOptions::default())
}

/// Runs FP-HFPI from a caller-supplied feasible beamformer.
pub fn solve_from(h: &ChannelMatrix, cfg: &SystemConfig, init: BeamformingMatrix) -> Result<Solution> {
    solve_with(
        h,
        cfg,
        SolveOptions {
            init: Some(init),
            ..Default::default()
        },
    )
}

pub fn solve_with(h: &ChannelMatrix, cfg: &SystemConfig, opts: SolveOptions) -> Result<Solution> {
    run_outer(h, cfg, opts, InnerProblem::Rsma)
}

/// Same pipeline restricted to private beams (no common stream).
pub fn solve_sdma(h: &ChannelMatrix, cfg: &SystemConfig) -> Result<Solution> {
    run_outer(h, cfg, SolveOptions::default(), InnerProblem::Sdma)
}

fn run_outer(h: &ChannelMatrix, cfg: &SystemConfig, mut opts: SolveOptions, problem: InnerProblem) -> Result<Solution> {
    let start = Instant::now();
    cfg.validate()?;
    h.check(cfg)?;
    let mut w = match (opts.init.take(), problem) {
        (Some(mut w), InnerProblem::Sdma) => {
            w.matrix_mut().column_mut(0).fill(Complex64::default());
            w
        }
        (Some(w), InnerProblem::Rsma) => w,
        (None, InnerProblem::Rsma) => initialize_beamformers(h, cfg)?,
        (None, InnerProblem::Sdma) => initialize_private_beamformers(h, cfg)?,
    };
    let mut report = evaluate(&w, h, cfg)?;
    let mut wsr_trace = vec![report.wsr];

    let fresh = || {
        let mut d = DualState::initial(cfg);
        if problem == InnerProblem::Sdma {
            d.lambda.fill(0.0);
        }
        d
    };
    let mut duals = fresh();
    let mut kkt = None;
    let mut converged = false;
    let mut outer_iterations = 0;
    let mut inner_iterations = 0;
    let mut clamp_events = 0;

    for n in 1..=cfg.max_outer {
        outer_iterations = n;
        let aux = AuxiliaryState::optimal(&w, h, &cfg.sigma2)?;
        let current = surrogate_rates(&w, h, &cfg.sigma2, &aux)?;
        let current_obj = objective_from(&current, current.worst_common(), &cfg.weights);

        let (lambda0, mu0) = if cfg.cold_start_duals {
            let d = fresh();
            (d.lambda, d.mu)
        } else {
            (duals.lambda.clone(), duals.mu)
        };
        let inner = run_inner(h, &aux, cfg, &lambda0, mu0, problem, opts.on_inner.as_deref_mut())?;
        inner_iterations += inner.iterations;
        clamp_events += inner.clamp_events;

        let accepted = inner.objective >= current_obj;
        let wsr_prev = report.wsr;
        if accepted {
            w = inner.w.clone();
            report = evaluate(&w, h, cfg)?;
            wsr_trace.push(report.wsr);
            duals = inner.duals.clone();
            if problem == InnerProblem::Rsma {
                kkt = Some(kkt_residuals(&w, inner.y, &duals.lambda, duals.mu, &aux, h, cfg)?);
            }
        }
        if let Some(obs) = opts.on_outer.as_deref_mut() {
            obs(&OuterTrace {
                iteration: n,
                wsr: report.wsr,
                lambda: &inner.duals.lambda,
                mu: inner.duals.mu,
                inner_iterations: inner.iterations,
                inner_converged: inner.converged,
                compl_residual: inner.duals.max_compl_residual(),
                power_residual: inner.duals.power_residual,
                power: inner.w.power(),
                accepted,
            });
        }
        if !accepted || (report.wsr - wsr_prev).abs() < cfg.tol_outer {
            converged = inner.converged;
            break;
        }
    }

    Ok(Solution {
        w,
        report,
        duals,
        outer_iterations,
        inner_iterations,
        converged,
        wsr_trace,
        wall_time: start.elapsed().as_secs_f64(),
        kkt,
        clamp_events,
    })
}
