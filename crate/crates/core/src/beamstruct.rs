//! Closed-form beamforming structure and the hyperplane fixed-point
//! iteration (HFPI) over its dual variables.
//!
//! For fixed auxiliaries the inner problem is
//!
//! ```text
//! max_{W, y}  max(delta) * y + sum_k delta_k g_{k,k}(W)
//! s.t.        y <= g_{0,k}(W)   (multiplier lambda_k)
//!             tr(W W^H) <= Pt   (multiplier mu)
//! ```
//!
//! Stationarity gives every beam as the solution of a Hermitian positive
//! definite system parameterized by `(lambda, mu)`:
//!
//! ```text
//! w_0 = (H Theta_c H^H + mu I)^{-1} H d_c
//! w_k = d_{k,k} (H Theta_p H^H + mu I)^{-1} h_k
//! ```
//!
//! and HFPI searches for the multipliers that also satisfy
//! `sum(lambda) = max(delta)` and complementary slackness.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Result, RsmaError};
use crate::fp::{objective_from, surrogate_rates, AuxiliaryState, SurrogateRates};
use crate::model::{BeamformingMatrix, ChannelMatrix};

/// Lower bound on the power multiplier; keeps both systems positive
/// definite when `L > K`.
pub const MU_FLOOR: f64 = 1e-12;

/// Floor on `g_{0,k} + rho` in the multiplicative update.
pub const DENOM_FLOOR: f64 = 1e-6;

/// Relative power overshoot tolerated before a returned beamformer is
/// rescaled onto the budget.
pub const POWER_SLACK: f64 = 1e-6;

/// Coefficients of the beamforming structure.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureCoefficients {
    /// `lambda_j |beta_{0,j}|^2`
    pub theta_c: Vec<f64>,
    /// `delta_j |beta_{j,j}|^2 + lambda_j |beta_{0,j}|^2`
    pub theta_p: Vec<f64>,
    /// `sqrt(1 + alpha_{0,j}) beta_{0,j} lambda_j`
    pub d_c: Vec<Complex64>,
    /// `sqrt(1 + alpha_{k,k}) beta_{k,k} delta_k`
    pub d_p: Vec<Complex64>,
}

pub fn build_coefficients(aux: &AuxiliaryState, lambda: &[f64], weights: &[f64]) -> Result<StructureCoefficients> {
    let k = aux.users();
    if lambda.len() != k || weights.len() != k {
        return Err(RsmaError::Dimension(format!(
            "{} users but {} multipliers and {} weights",
            k,
            lambda.len(),
            weights.len()
        )));
    }
    let mut out = StructureCoefficients {
        theta_c: Vec::with_capacity(k),
        theta_p: Vec::with_capacity(k),
        d_c: Vec::with_capacity(k),
        d_p: Vec::with_capacity(k),
    };
    for j in 0..k {
        let common = lambda[j] * aux.beta0[j].norm_sqr();
        out.theta_c.push(common);
        out.theta_p.push(weights[j] * aux.betap[j].norm_sqr() + common);
        out.d_c.push(aux.beta0[j] * ((1.0 + aux.alpha0[j]).sqrt() * lambda[j]));
        out.d_p.push(aux.betap[j] * ((1.0 + aux.alphap[j]).sqrt() * weights[j]));
    }
    Ok(out)
}

/// `H diag(theta) H^H + mu I`.
fn system_matrix(h: &DMatrix<Complex64>, theta: &[f64], mu: f64) -> DMatrix<Complex64> {
    let mut scaled = h.clone();
    for (j, t) in theta.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*t);
    }
    let mut a = scaled * h.adjoint();
    for i in 0..a.nrows() {
        a[(i, i)] += Complex64::from(mu);
    }
    a
}

fn factor(a: DMatrix<Complex64>) -> Result<Cholesky<Complex64, Dyn>> {
    if a.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(RsmaError::Numerical("non-finite entries in beamforming system".into()));
    }
    Cholesky::new(a).ok_or_else(|| RsmaError::Numerical("beamforming system is not positive definite".into()))
}

/// Evaluates the beamforming structure at multiplier `mu`.
///
/// One Cholesky factorization serves the common beam, another serves all
/// `K` private beams.
pub fn beamformers_from_duals(h: &ChannelMatrix, coeffs: &StructureCoefficients, mu: f64) -> Result<BeamformingMatrix> {
    let hm = h.matrix();
    let (l, k) = hm.shape();
    if coeffs.theta_c.len() != k {
        return Err(RsmaError::Dimension("coefficients do not match the channel".into()));
    }
    if !(mu.is_finite() && mu > 0.0) {
        return Err(RsmaError::Numerical(format!(
            "power multiplier must be positive, got {mu}"
        )));
    }
    let common = factor(system_matrix(hm, &coeffs.theta_c, mu))?;
    let private = factor(system_matrix(hm, &coeffs.theta_p, mu))?;

    let w0 = common.solve(&(hm * DVector::from_column_slice(&coeffs.d_c)));
    let mut rhs = hm.clone();
    for (j, d) in coeffs.d_p.iter().enumerate() {
        rhs.column_mut(j).iter_mut().for_each(|z| *z *= d);
    }
    let wp = private.solve(&rhs);

    let mut w = DMatrix::zeros(l, k + 1);
    w.column_mut(0).copy_from(&w0);
    w.columns_mut(1, k).copy_from(&wp);
    BeamformingMatrix::new(w)
}

/// Dual variables of the inner problem and their residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub lambda: Vec<f64>,
    pub mu: f64,
    /// User with the lowest common-stream surrogate.
    pub worst_user: usize,
    /// `tr(W W^H) - Pt`.
    pub power_residual: f64,
    /// `lambda_k (y - g_{0,k})` per user.
    pub compl_residuals: Vec<f64>,
}

impl DualState {
    /// Uniform `lambda` summing to the largest weight and `mu = 1`.
    pub fn initial(cfg: &SystemConfig) -> Self {
        let k = cfg.users;
        Self {
            lambda: vec![cfg.max_weight() / k as f64; k],
            mu: 1.0,
            worst_user: 0,
            power_residual: 0.0,
            compl_residuals: vec![0.0; k],
        }
    }

    pub fn max_compl_residual(&self) -> f64 {
        self.compl_residuals.iter().fold(0.0, |m, r| m.max(r.abs()))
    }
}

/// One multiplicative dual update.
#[derive(Debug, Clone, PartialEq)]
pub struct DualUpdate {
    pub lambda: Vec<f64>,
    pub mu: f64,
    pub worst_user: usize,
    /// Number of `g + rho` terms that hit [`DENOM_FLOOR`].
    pub clamped: usize,
}

/// Index of the smallest value, lowest index on ties.
pub fn worst_index(values: &[f64]) -> usize {
    let mut m = 0;
    for (k, v) in values.iter().enumerate() {
        if *v < values[m] {
            m = k;
        }
    }
    m
}

/// Applies the HFPI update to `(lambda, mu)` given the common-stream
/// surrogates `g0` and the power `trace` of the current beamformer.
///
/// Every non-worst multiplier shrinks by `(g_m + rho) / (g_k + rho)`; the
/// mass removed is handed to the worst user `m`, so `sum(lambda)` is
/// unchanged. `mu` scales by `(trace + rho) / (Pt + rho)`.
pub fn hfpi_step(lambda: &[f64], mu: f64, g0: &[f64], trace: f64, budget: f64, rho: f64) -> DualUpdate {
    let m = worst_index(g0);
    let mut clamped = 0;
    let mut shifted = |g: f64| {
        let v = g + rho;
        if v < DENOM_FLOOR {
            clamped += 1;
            DENOM_FLOOR
        } else {
            v
        }
    };
    let top = shifted(g0[m]);
    let total: f64 = lambda.iter().sum();
    let mut next = lambda.to_vec();
    let mut rest = 0.0;
    for (k, lam) in next.iter_mut().enumerate() {
        if k == m {
            continue;
        }
        let ratio = (top / shifted(g0[k])).min(1.0);
        *lam *= ratio;
        rest += *lam;
    }
    // lambda_m + sum_k (1 - ratio_k) lambda_k, written against the conserved
    // total so that rounding does not accumulate across iterations.
    next[m] = (total - rest).max(0.0);
    let mu = (mu * (trace + rho) / (budget + rho)).max(MU_FLOOR);
    DualUpdate {
        lambda: next,
        mu,
        worst_user: m,
        clamped,
    }
}

/// Per-iteration snapshot handed to an HFPI observer.
#[derive(Debug, Clone, Serialize)]
pub struct InnerTrace<'a> {
    pub iteration: usize,
    pub lambda: &'a [f64],
    pub mu: f64,
    pub worst_user: usize,
    pub compl_residual: f64,
    pub power_metric: f64,
}

/// Result of one HFPI solve.
#[derive(Debug, Clone)]
pub struct InnerOutcome {
    pub w: BeamformingMatrix,
    pub duals: DualState,
    /// `min_k g_{0,k}(W)`.
    pub y: f64,
    /// Inner objective at `(W, y)`.
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub clamp_events: usize,
}

/// Power part of the inner stopping rule.
///
/// An over-budget beamformer is measured by its relative excess. An
/// under-budget one only counts while `mu` still prices the unused power,
/// since the budget need not bind at the optimum.
fn power_metric(trace: f64, budget: f64, mu: f64) -> f64 {
    let gap = (trace - budget) / budget;
    if gap >= 0.0 {
        gap
    } else {
        (-gap).min(mu * (budget - trace))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum InnerProblem {
    /// Common and private beams, common-rate constraints active.
    Rsma,
    /// Private beams only (`w_0 = 0`, `lambda = 0`).
    Sdma,
}

struct Iterate {
    w: BeamformingMatrix,
    rates: SurrogateRates,
    trace: f64,
    compl: Vec<f64>,
    metric: f64,
}

fn evaluate_iterate(
    h: &ChannelMatrix,
    aux: &AuxiliaryState,
    cfg: &SystemConfig,
    lambda: &[f64],
    mu: f64,
) -> Result<Iterate> {
    let coeffs = build_coefficients(aux, lambda, &cfg.weights)?;
    let w = beamformers_from_duals(h, &coeffs, mu)?;
    let rates = surrogate_rates(&w, h, &cfg.sigma2, aux)?;
    let y = rates.worst_common();
    let compl: Vec<f64> = lambda.iter().zip(&rates.common).map(|(l, g)| l * (y - g)).collect();
    let trace = w.power();
    let compl_max = compl.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let metric = compl_max.max(power_metric(trace, cfg.power, mu));
    Ok(Iterate {
        w,
        rates,
        trace,
        compl,
        metric,
    })
}

/// Solves the inner problem for fixed auxiliaries by HFPI.
pub fn hfpi_solve(
    h: &ChannelMatrix,
    aux: &AuxiliaryState,
    cfg: &SystemConfig,
    lambda_init: &[f64],
    mu_init: f64,
) -> Result<InnerOutcome> {
    hfpi_solve_traced(h, aux, cfg, lambda_init, mu_init, None)
}

/// [`hfpi_solve`] with an optional per-iteration observer.
pub fn hfpi_solve_traced(
    h: &ChannelMatrix,
    aux: &AuxiliaryState,
    cfg: &SystemConfig,
    lambda_init: &[f64],
    mu_init: f64,
    observer: Option<&mut dyn FnMut(&InnerTrace)>,
) -> Result<InnerOutcome> {
    let target = cfg.max_weight();
    let sum: f64 = lambda_init.iter().sum();
    if lambda_init.iter().any(|l| *l < 0.0) || (sum - target).abs() > 1e-9 * target.max(1.0) {
        return Err(RsmaError::InvalidConfig(format!(
            "initial multipliers must be non-negative and sum to {target}, got sum {sum}"
        )));
    }
    run_inner(h, aux, cfg, lambda_init, mu_init, InnerProblem::Rsma, observer)
}

pub(crate) fn run_inner<'o>(
    h: &ChannelMatrix,
    aux: &AuxiliaryState,
    cfg: &SystemConfig,
    lambda_init: &[f64],
    mu_init: f64,
    problem: InnerProblem,
    mut observer: Option<&mut (dyn FnMut(&InnerTrace) + 'o)>,
) -> Result<InnerOutcome> {
    h.check(cfg)?;
    if aux.users() != cfg.users || lambda_init.len() != cfg.users {
        return Err(RsmaError::Dimension(
            "auxiliary state or multipliers do not match K".into(),
        ));
    }
    let mut lambda = match problem {
        InnerProblem::Rsma => lambda_init.to_vec(),
        InnerProblem::Sdma => vec![0.0; cfg.users],
    };
    let mut mu = if mu_init.is_finite() {
        mu_init.max(MU_FLOOR)
    } else {
        1.0
    };
    let mut clamp_events = 0;
    let mut best: Option<(Iterate, Vec<f64>, f64, usize)> = None;
    let mut converged = false;
    let mut iterations = 0;

    for t in 0..cfg.max_inner {
        iterations = t + 1;
        let it = evaluate_iterate(h, aux, cfg, &lambda, mu)?;
        let worst = worst_index(&it.rates.common);
        if let Some(obs) = observer.as_deref_mut() {
            obs(&InnerTrace {
                iteration: t,
                lambda: &lambda,
                mu,
                worst_user: worst,
                compl_residual: it.compl.iter().fold(0.0, |m: f64, r| m.max(r.abs())),
                power_metric: power_metric(it.trace, cfg.power, mu),
            });
        }
        // A converged exit must already be feasible, so it never needs the
        // repair in `finish`.
        let done = it.metric < cfg.tol_inner && it.trace <= cfg.power * (1.0 + POWER_SLACK);
        let next = match problem {
            InnerProblem::Rsma => hfpi_step(&lambda, mu, &it.rates.common, it.trace, cfg.power, cfg.rho),
            InnerProblem::Sdma => DualUpdate {
                lambda: lambda.clone(),
                mu: (mu * (it.trace + cfg.rho) / (cfg.power + cfg.rho)).max(MU_FLOOR),
                worst_user: 0,
                clamped: 0,
            },
        };
        let improves = best.as_ref().is_none_or(|b| it.metric < b.0.metric);
        if done || improves {
            best = Some((it, lambda.clone(), mu, worst));
        }
        if done {
            converged = true;
            break;
        }
        clamp_events += next.clamped;
        lambda = next.lambda;
        mu = next.mu;
    }

    let (it, lambda, mu, worst) = best.expect("max_inner is positive");
    finish(h, aux, cfg, it, lambda, mu, worst, converged, iterations, clamp_events)
}

/// Raises `mu` with `lambda` held fixed until the closed-form beams fit the
/// budget, so the returned pair still satisfies stationarity. `None` when the
/// bracket cannot be found.
fn restore_power(
    h: &ChannelMatrix,
    coeffs: &StructureCoefficients,
    mu: f64,
    budget: f64,
) -> Result<Option<(BeamformingMatrix, f64)>> {
    let mut lo = mu.max(MU_FLOOR);
    let mut hi = lo;
    let mut w_hi = beamformers_from_duals(h, coeffs, hi)?;
    let mut doublings = 0;
    while w_hi.power() > budget {
        if doublings == 200 {
            return Ok(None);
        }
        lo = hi;
        hi *= 2.0;
        w_hi = beamformers_from_duals(h, coeffs, hi)?;
        doublings += 1;
    }
    for _ in 0..100 {
        if hi / lo - 1.0 < 1e-14 {
            break;
        }
        let mid = (lo * hi).sqrt();
        let w = beamformers_from_duals(h, coeffs, mid)?;
        if w.power() > budget {
            lo = mid;
        } else {
            hi = mid;
            w_hi = w;
        }
    }
    Ok(Some((w_hi, hi)))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    h: &ChannelMatrix,
    aux: &AuxiliaryState,
    cfg: &SystemConfig,
    it: Iterate,
    lambda: Vec<f64>,
    mu: f64,
    worst: usize,
    converged: bool,
    iterations: usize,
    clamp_events: usize,
) -> Result<InnerOutcome> {
    let Iterate {
        mut w,
        mut rates,
        mut trace,
        mut compl,
        ..
    } = it;
    let mut mu = mu;
    if trace > cfg.power * (1.0 + POWER_SLACK) {
        let coeffs = build_coefficients(aux, &lambda, &cfg.weights)?;
        match restore_power(h, &coeffs, mu, cfg.power)? {
            Some((restored, m)) => {
                w = restored;
                mu = m;
            }
            None => w.scale_to_power(cfg.power),
        }
        rates = surrogate_rates(&w, h, &cfg.sigma2, aux)?;
        trace = w.power();
        let y = rates.worst_common();
        compl = lambda.iter().zip(&rates.common).map(|(l, g)| l * (y - g)).collect();
    }
    let y = rates.worst_common();
    let objective = objective_from(&rates, y, &cfg.weights);
    Ok(InnerOutcome {
        w,
        duals: DualState {
            lambda,
            mu,
            worst_user: worst,
            power_residual: trace - cfg.power,
            compl_residuals: compl,
        },
        y,
        objective,
        converged,
        iterations,
        clamp_events,
    })
}

/// Residuals of the inner problem's KKT system.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    /// `||(H Theta_c H^H + mu I) w_0 - H d_c||`
    pub stationarity_common: f64,
    /// `max_k ||(H Theta_p H^H + mu I) w_k - d_{k,k} h_k||`
    pub stationarity_private: f64,
    /// `|sum(lambda) - max(delta)|`
    pub multiplier_sum: f64,
    /// `max_k |lambda_k (y - g_{0,k})|`
    pub compl_common: f64,
    /// `|mu (tr(W W^H) - Pt)|`
    pub compl_power: f64,
    /// `max(0, tr(W W^H) - Pt)`
    pub power_violation: f64,
    /// `max_k max(0, y - g_{0,k})`
    pub rate_violation: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        [
            self.stationarity_common,
            self.stationarity_private,
            self.multiplier_sum,
            self.compl_common,
            self.compl_power,
            self.power_violation,
            self.rate_violation,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn kkt_residuals(
    w: &BeamformingMatrix,
    y: f64,
    lambda: &[f64],
    mu: f64,
    aux: &AuxiliaryState,
    h: &ChannelMatrix,
    cfg: &SystemConfig,
) -> Result<KktResiduals> {
    let coeffs = build_coefficients(aux, lambda, &cfg.weights)?;
    let hm = h.matrix();
    let wm = w.matrix();
    let a_c = system_matrix(hm, &coeffs.theta_c, mu);
    let a_p = system_matrix(hm, &coeffs.theta_p, mu);
    let stationarity_common = (&a_c * wm.column(0) - hm * DVector::from_column_slice(&coeffs.d_c)).norm();
    let stationarity_private = (0..cfg.users)
        .map(|k| (&a_p * wm.column(k + 1) - hm.column(k) * coeffs.d_p[k]).norm())
        .fold(0.0, f64::max);
    let rates = surrogate_rates(w, h, &cfg.sigma2, aux)?;
    let trace = w.power();
    Ok(KktResiduals {
        stationarity_common,
        stationarity_private,
        multiplier_sum: (lambda.iter().sum::<f64>() - cfg.max_weight()).abs(),
        compl_common: lambda
            .iter()
            .zip(&rates.common)
            .map(|(l, g)| (l * (y - g)).abs())
            .fold(0.0, f64::max),
        compl_power: (mu * (trace - cfg.power)).abs(),
        power_violation: (trace - cfg.power).max(0.0),
        rate_violation: rates.common.iter().map(|g| (y - g).max(0.0)).fold(0.0, f64::max),
    })
}
