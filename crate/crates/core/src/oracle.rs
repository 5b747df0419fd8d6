//! Slow, independent reference implementations used to validate the fast
//! path. Nothing in the solver depends on this module.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;

use crate::config::SystemConfig;
use crate::error::{Result, RsmaError};
use crate::fp::{fp_objective, surrogate_rates, AuxiliaryState};
use crate::model::{evaluate, BeamformingMatrix, ChannelMatrix};
use crate::solver::{solve, solve_from};

/// Maximizes `sum_k delta_k c_k` over `c >= 0`, `sum c <= min r0` by
/// enumerating the vertices of the feasible simplex (origin first, then
/// each axis in index order; only a strictly better vertex replaces the
/// incumbent).
pub fn lp_allocate(weights: &[f64], r0: &[f64]) -> (Vec<f64>, f64) {
    let k = weights.len();
    let budget = r0.iter().copied().fold(f64::INFINITY, f64::min).max(0.0);
    let value = |c: &[f64]| c.iter().zip(weights).map(|(c, d)| c * d).sum::<f64>();
    let mut best = vec![0.0; k];
    let mut best_value = value(&best);
    for i in 0..k {
        let mut vertex = vec![0.0; k];
        vertex[i] = budget;
        let v = value(&vertex);
        if v > best_value {
            best = vertex;
            best_value = v;
        }
    }
    (best, best_value)
}

/// A real quadratic `c + a.x - x^T Q x` with `Q` positive semidefinite.
#[derive(Debug, Clone)]
struct Quadratic {
    c: f64,
    a: DVector<f64>,
    q: DMatrix<f64>,
}

impl Quadratic {
    fn zeros(n: usize) -> Self {
        Self {
            c: 0.0,
            a: DVector::zeros(n),
            q: DMatrix::zeros(n, n),
        }
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        self.c + self.a.dot(x) - x.dot(&(&self.q * x))
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a - (&self.q * x) * 2.0
    }
}

/// Real coordinates of the inner problem: `[Re w_0; Im w_0; ...; Re w_K; Im w_K; y]`.
struct RealLayout {
    antennas: usize,
    columns: usize,
}

impl RealLayout {
    fn dim(&self) -> usize {
        2 * self.antennas * self.columns + 1
    }

    fn y(&self) -> usize {
        self.dim() - 1
    }

    fn block(&self, column: usize) -> usize {
        2 * self.antennas * column
    }

    fn to_beams(&self, x: &DVector<f64>) -> BeamformingMatrix {
        let l = self.antennas;
        let w = DMatrix::from_fn(l, self.columns, |r, j| {
            let b = self.block(j);
            Complex64::new(x[b + r], x[b + l + r])
        });
        BeamformingMatrix::new(w).expect("layout has at least two columns")
    }

    /// Surrogate `g_{i,k}` as a real quadratic in `x`.
    ///
    /// With `p = [Re h; Im h]` and `q = [-Im h; Re h]`, `h^H w` equals
    /// `p.x_j + i q.x_j` on the block of column `j`.
    #[allow(clippy::too_many_arguments)]
    fn surrogate(
        &self,
        h: &DMatrix<Complex64>,
        sigma2: f64,
        alpha: f64,
        beta: Complex64,
        user: usize,
        column: usize,
        first_interferer: usize,
    ) -> Quadratic {
        let l = self.antennas;
        let hk = h.column(user);
        let mut p = DVector::zeros(2 * l);
        let mut q = DVector::zeros(2 * l);
        for r in 0..l {
            p[r] = hk[r].re;
            p[l + r] = hk[r].im;
            q[r] = -hk[r].im;
            q[l + r] = hk[r].re;
        }
        let mut out = Quadratic::zeros(self.dim());
        let b2 = beta.norm_sqr();
        out.c = alpha.ln_1p() - alpha - b2 * sigma2;
        let lin = (&p * beta.re + &q * beta.im) * (2.0 * (1.0 + alpha).sqrt());
        out.a.rows_mut(self.block(column), 2 * l).copy_from(&lin);
        let outer = (&p * p.transpose() + &q * q.transpose()) * b2;
        for j in first_interferer..self.columns {
            let b = self.block(j);
            let mut blk = out.q.view_mut((b, b), (2 * l, 2 * l));
            blk += &outer;
        }
        out
    }
}

/// Result of [`reference_inner_solve`].
#[derive(Debug, Clone)]
pub struct ReferenceInner {
    pub w: BeamformingMatrix,
    /// `min_k g_{0,k}(W)`.
    pub y: f64,
    pub objective: f64,
    pub converged: bool,
    pub newton_steps: usize,
}

const NEWTON_CAP: usize = 100_000;
const CENTERING_CAP: usize = 200;
const DECREMENT_TOL: f64 = 1e-9;
const GAP_TARGET: f64 = 1e-9;

/// Solves the inner problem for fixed auxiliaries with a log-barrier
/// interior-point method on the real epigraph form
///
/// ```text
/// max  max(delta) y + sum_k delta_k g_{k,k}(x)
/// s.t. g_{0,k}(x) - y > 0,  Pt - |x_W|^2 > 0
/// ```
///
/// Each centering step is a damped Newton method; the barrier weight grows
/// tenfold until the duality gap bound `(K + 1) / t` drops below `1e-9`.
/// Iterates stay strictly inside the power ball.
pub fn reference_inner_solve(h: &ChannelMatrix, aux: &AuxiliaryState, cfg: &SystemConfig) -> Result<ReferenceInner> {
    h.check(cfg)?;
    let k = cfg.users;
    let hm = h.matrix();
    let layout = RealLayout {
        antennas: cfg.antennas,
        columns: k + 1,
    };
    let n = layout.dim();
    let yi = layout.y();
    let dmax = cfg.max_weight();

    let common: Vec<Quadratic> = (0..k)
        .map(|u| layout.surrogate(hm, cfg.sigma2[u], aux.alpha0[u], aux.beta0[u], u, 0, 0))
        .collect();
    let mut objective = Quadratic::zeros(n);
    objective.a[yi] = dmax;
    for u in 0..k {
        let g = layout.surrogate(hm, cfg.sigma2[u], aux.alphap[u], aux.betap[u], u, u + 1, 1);
        objective.c += cfg.weights[u] * g.c;
        objective.a += &g.a * cfg.weights[u];
        objective.q += &g.q * cfg.weights[u];
    }
    // Pt - |x_W|^2
    let mut power = Quadratic::zeros(n);
    power.c = cfg.power;
    for i in 0..yi {
        power.q[(i, i)] = 1.0;
    }

    let slacks = |x: &DVector<f64>| -> Vec<f64> {
        let mut s: Vec<f64> = common.iter().map(|g| g.value(x) - x[yi]).collect();
        s.push(power.value(x));
        s
    };
    let barrier = |x: &DVector<f64>, t: f64| -> Option<f64> {
        let s = slacks(x);
        if s.iter().any(|v| *v <= 0.0) {
            return None;
        }
        Some(-t * objective.value(x) - s.iter().map(|v| v.ln()).sum::<f64>())
    };

    let mut x = DVector::zeros(n);
    x[yi] = common.iter().map(|g| g.value(&x)).fold(f64::INFINITY, f64::min) - 1.0;

    let mut t = 1.0;
    let constraints = (k + 1) as f64;
    let mut steps = 0;
    let mut converged = false;
    'outer: loop {
        let centering_start = steps;
        loop {
            if steps >= NEWTON_CAP {
                break 'outer;
            }
            if steps - centering_start >= CENTERING_CAP {
                break;
            }
            steps += 1;
            let s = slacks(&x);
            let mut grad = -objective.gradient(&x) * t;
            let mut hess = &objective.q * (2.0 * t);
            for (i, quad) in common.iter().chain(std::iter::once(&power)).enumerate() {
                let mut gi = quad.gradient(&x);
                if i < k {
                    gi[yi] -= 1.0;
                }
                grad -= &gi / s[i];
                hess += &gi * gi.transpose() / (s[i] * s[i]);
                hess += &quad.q * (2.0 / s[i]);
            }
            let chol = hess
                .cholesky()
                .ok_or_else(|| RsmaError::Numerical("barrier Hessian is not positive definite".into()))?;
            let dx = chol.solve(&(-&grad));
            let decrement = -grad.dot(&dx);
            if decrement / 2.0 < DECREMENT_TOL {
                break;
            }
            let f0 = barrier(&x, t).expect("iterate is strictly feasible");
            let mut step = 1.0;
            loop {
                let cand = &x + &dx * step;
                if let Some(f) = barrier(&cand, t) {
                    if f <= f0 - 0.25 * step * decrement {
                        x = cand;
                        break;
                    }
                }
                step *= 0.5;
                if step < 1e-16 {
                    // no progress possible at this precision
                    break;
                }
            }
            if step < 1e-16 {
                break;
            }
        }
        if constraints / t < GAP_TARGET {
            converged = true;
            break;
        }
        t *= 10.0;
    }

    let w = layout.to_beams(&x);
    let rates = surrogate_rates(&w, h, &cfg.sigma2, aux)?;
    let y = rates.worst_common();
    let objective = fp_objective(&w, y, aux, cfg, h)?;
    Ok(ReferenceInner {
        w,
        y,
        objective,
        converged,
        newton_steps: steps,
    })
}

/// Result of [`global_search`].
#[derive(Debug, Clone)]
pub struct GlobalSearch {
    pub w: BeamformingMatrix,
    pub wsr: f64,
    /// Restart that produced the best point before refinement; 0 is the
    /// default initialization.
    pub best_restart: usize,
}

/// Feasible beamformer drawn uniformly from the power ball.
pub fn random_feasible_beams(cfg: &SystemConfig, seed: u64) -> BeamformingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = DMatrix::from_fn(cfg.antennas, cfg.users + 1, |_, _| {
        let a: f64 = StandardNormal.sample(&mut rng);
        let b: f64 = StandardNormal.sample(&mut rng);
        Complex64::new(a, b)
    });
    let dim = (2 * cfg.antennas * (cfg.users + 1)) as f64;
    let u: f64 = Uniform::new(0.0, 1.0).expect("valid range").sample(&mut rng);
    let radius = (cfg.power).sqrt() * u.powf(1.0 / dim);
    let norm = w.norm();
    w *= Complex64::from(radius / norm);
    BeamformingMatrix::new(w).expect("at least one user")
}

fn restart_seed(seed: u64, restart: usize) -> u64 {
    crate::montecarlo::derive_seed(seed, restart as u64)
}

/// Near-global search for small instances.
///
/// Runs the solver from the default initialization (restart 0) and from
/// `restarts - 1` random feasible beamformers, keeps the best by WSR (lowest
/// restart index on ties), then polishes it by coordinate-wise pattern
/// search on the true WSR for at most `refine_steps` sweeps.
pub fn global_search(
    h: &ChannelMatrix,
    cfg: &SystemConfig,
    restarts: usize,
    refine_steps: usize,
    seed: u64,
) -> Result<GlobalSearch> {
    let restarts = restarts.max(1);
    let results: Vec<Result<(f64, BeamformingMatrix)>> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let sol = if r == 0 {
                solve(h, cfg)?
            } else {
                solve_from(h, cfg, random_feasible_beams(cfg, restart_seed(seed, r)))?
            };
            Ok((sol.report.wsr, sol.w))
        })
        .collect();
    let mut best: Option<(usize, f64, BeamformingMatrix)> = None;
    for (r, res) in results.into_iter().enumerate() {
        let (wsr, w) = res?;
        if best.as_ref().is_none_or(|b| wsr > b.1) {
            best = Some((r, wsr, w));
        }
    }
    let (best_restart, wsr, w) = best.expect("at least one restart");
    let (w, wsr) = refine(h, cfg, w, wsr, refine_steps)?;
    Ok(GlobalSearch { w, wsr, best_restart })
}

fn refine(
    h: &ChannelMatrix,
    cfg: &SystemConfig,
    mut w: BeamformingMatrix,
    mut wsr: f64,
    sweeps: usize,
) -> Result<(BeamformingMatrix, f64)> {
    let scale = cfg.power.sqrt();
    let mut step = 0.05 * scale;
    let (l, cols) = w.matrix().shape();
    for _ in 0..sweeps {
        let mut improved = false;
        for j in 0..cols {
            for r in 0..l {
                for part in [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)] {
                    for sign in [1.0, -1.0] {
                        let mut cand = w.clone();
                        cand.matrix_mut()[(r, j)] += part * (sign * step);
                        if cand.power() > cfg.power {
                            cand.scale_to_power(cfg.power);
                        }
                        let v = evaluate(&cand, h, cfg)?.wsr;
                        if v > wsr {
                            w = cand;
                            wsr = v;
                            improved = true;
                            break;
                        }
                    }
                }
            }
        }
        if !improved {
            step *= 0.5;
            if step < 1e-9 * scale {
                break;
            }
        }
    }
    Ok((w, wsr))
}

/// One line of the desk-scale validation table.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Cross-checks the fast path against the oracles at desk scale.
pub fn validation_suite() -> Vec<Check> {
    let mut out = Vec::new();
    let mut push = |name, res: Result<(bool, String)>| {
        let (passed, detail) = res.unwrap_or_else(|e| (false, format!("error: {e}")));
        out.push(Check { name, passed, detail });
    };

    push(
        "surrogate tightness",
        (|| {
            let cfg = SystemConfig::new(3, 3, 10.0);
            let mut worst = 0.0f64;
            for s in 0..100 {
                let h = crate::model::generate_channel(&cfg, s);
                let w = random_feasible_beams(&cfg, 7_000 + s);
                let aux = AuxiliaryState::optimal(&w, &h, &cfg.sigma2)?;
                let g = surrogate_rates(&w, &h, &cfg.sigma2, &aux)?;
                let rep = evaluate(&w, &h, &cfg)?;
                for u in 0..3 {
                    worst = worst.max((g.common[u] - rep.r0[u]).abs());
                    worst = worst.max((g.private[u] - rep.rp[u]).abs());
                }
            }
            Ok((worst < 1e-9, format!("max |g - r| = {worst:.2e}")))
        })(),
    );

    push(
        "common-rate allocation vs LP",
        (|| {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let unit = Uniform::new(0.0, 1.0).expect("valid range");
            for _ in 0..1000 {
                let weights: Vec<f64> = (0..4).map(|_| unit.sample(&mut rng)).collect();
                let r0: Vec<f64> = (0..4).map(|_| 3.0 * unit.sample(&mut rng)).collect();
                let c = crate::solver::allocate_common_rate(&weights, &r0)?;
                let (lp, _) = lp_allocate(&weights, &r0);
                if c != lp {
                    return Ok((false, format!("mismatch at weights {weights:?}")));
                }
            }
            Ok((true, "1000 instances agree".into()))
        })(),
    );

    push(
        "inner solve vs barrier reference",
        (|| {
            let cfg = SystemConfig::new(2, 2, 10.0);
            let mut worst = 0.0f64;
            for s in 0..5 {
                let h = crate::model::generate_channel(&cfg, 100 + s);
                let w = crate::solver::initialize_beamformers(&h, &cfg)?;
                let aux = AuxiliaryState::optimal(&w, &h, &cfg.sigma2)?;
                let d = crate::beamstruct::DualState::initial(&cfg);
                let fast = crate::beamstruct::hfpi_solve(&h, &aux, &cfg, &d.lambda, d.mu)?;
                let slow = reference_inner_solve(&h, &aux, &cfg)?;
                worst = worst.max((fast.objective - slow.objective).abs() / slow.objective.abs().max(1e-12));
            }
            Ok((worst < 1e-4, format!("max relative gap = {worst:.2e}")))
        })(),
    );

    push(
        "single-user capacity",
        (|| {
            let cfg = SystemConfig::new(1, 1, 100.0);
            let h = ChannelMatrix::new(DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0)))?;
            let wsr = solve(&h, &cfg)?.report.wsr;
            let err = (wsr - 101f64.ln()).abs();
            Ok((err < 1e-3, format!("|wsr - ln 101| = {err:.2e}")))
        })(),
    );

    push(
        "monotone ascent",
        (|| {
            let cfg = SystemConfig::new(3, 3, 30.0);
            let mut worst_dip = 0.0f64;
            for s in 0..10 {
                let sol = solve(&crate::model::generate_channel(&cfg, 200 + s), &cfg)?;
                for p in sol.wsr_trace.windows(2) {
                    worst_dip = worst_dip.max(p[0] - p[1]);
                }
            }
            Ok((worst_dip <= 1e-7, format!("largest dip = {worst_dip:.2e}")))
        })(),
    );

    push(
        "near-global quality",
        (|| {
            let cfg = SystemConfig::new(2, 2, 10.0);
            let mut worst = f64::INFINITY;
            for s in 0..3 {
                let h = crate::model::generate_channel(&cfg, 300 + s);
                let fast = solve(&h, &cfg)?.report.wsr;
                let best = global_search(&h, &cfg, 100, 20, s)?.wsr;
                worst = worst.min(fast / best);
            }
            Ok((worst >= 0.99, format!("min solve/search ratio = {worst:.4}")))
        })(),
    );

    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::generate_channel;

    #[test]
    fn lp_examples() {
        assert_eq!(lp_allocate(&[1.0, 2.0], &[3.0, 1.0]), (vec![0.0, 1.0], 2.0));
        assert_eq!(lp_allocate(&[1.0, 2.0], &[0.0, 1.0]), (vec![0.0, 0.0], 0.0));
    }

    #[test]
    fn lp_beats_random_feasible_points() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let weights: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..2.0)).collect();
            let r0: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..3.0)).collect();
            let (_, best) = lp_allocate(&weights, &r0);
            let budget = r0.iter().copied().fold(f64::INFINITY, f64::min);
            for _ in 0..1000 {
                let raw: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
                let s: f64 = raw.iter().sum::<f64>() / rng.random_range(0.0..1.0f64).max(1e-9);
                let v: f64 = raw.iter().zip(&weights).map(|(c, d)| c / s * budget * d).sum();
                assert!(v <= best + 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_auxiliaries_give_zero_objective() {
        let cfg = SystemConfig::new(2, 2, 5.0);
        let h = generate_channel(&cfg, 1);
        let r = reference_inner_solve(&h, &AuxiliaryState::zeros(2), &cfg).unwrap();
        assert!(r.converged);
        assert!(r.objective.abs() < 1e-12);
        assert!(r.w.power() < 1e-12);
    }

    #[test]
    fn reference_stays_inside_power_ball() {
        let cfg = SystemConfig::new(2, 2, 10.0);
        for s in 0..5 {
            let h = generate_channel(&cfg, s);
            let w = crate::solver::initialize_beamformers(&h, &cfg).unwrap();
            let aux = AuxiliaryState::optimal(&w, &h, &cfg.sigma2).unwrap();
            let r = reference_inner_solve(&h, &aux, &cfg).unwrap();
            assert!(r.converged);
            assert!(r.w.power() <= cfg.power);
        }
    }

    #[test]
    fn reference_matches_real_quadratic_forms() {
        // The real-coordinate surrogate must agree with the complex one.
        let cfg = SystemConfig::new(3, 2, 4.0);
        let h = generate_channel(&cfg, 9);
        let w = random_feasible_beams(&cfg, 10);
        let aux = AuxiliaryState::optimal(&random_feasible_beams(&cfg, 11), &h, &cfg.sigma2).unwrap();
        let layout = RealLayout {
            antennas: 3,
            columns: 3,
        };
        let mut x = DVector::zeros(layout.dim());
        for j in 0..3 {
            for r in 0..3 {
                x[layout.block(j) + r] = w.matrix()[(r, j)].re;
                x[layout.block(j) + 3 + r] = w.matrix()[(r, j)].im;
            }
        }
        assert_eq!(layout.to_beams(&x), w);
        let g = surrogate_rates(&w, &h, &cfg.sigma2, &aux).unwrap();
        for u in 0..2 {
            let q0 = layout.surrogate(h.matrix(), 1.0, aux.alpha0[u], aux.beta0[u], u, 0, 0);
            let qp = layout.surrogate(h.matrix(), 1.0, aux.alphap[u], aux.betap[u], u, u + 1, 1);
            assert!((q0.value(&x) - g.common[u]).abs() < 1e-12);
            assert!((qp.value(&x) - g.private[u]).abs() < 1e-12);
        }
    }

    #[test]
    fn random_beams_are_feasible() {
        let cfg = SystemConfig::new(2, 3, 7.0);
        for s in 0..100 {
            assert!(random_feasible_beams(&cfg, s).power() <= 7.0 + 1e-12);
        }
    }

    #[test]
    fn global_search_single_user_capacity() {
        let cfg = SystemConfig::new(2, 1, 10.0);
        let h = generate_channel(&cfg, 4);
        let g = global_search(&h, &cfg, 8, 10, 0).unwrap();
        let cap = (1.0 + cfg.power * h.matrix().column(0).norm_squared()).ln();
        assert!((g.wsr - cap).abs() < 1e-3, "{} vs {cap}", g.wsr);
    }

    #[test]
    fn more_restarts_never_hurt() {
        let cfg = SystemConfig::new(2, 2, 10.0);
        let h = generate_channel(&cfg, 12);
        let few = global_search(&h, &cfg, 4, 0, 5).unwrap().wsr;
        let many = global_search(&h, &cfg, 16, 0, 5).unwrap().wsr;
        assert!(many >= few);
        assert!(few >= solve(&h, &cfg).unwrap().report.wsr - 1e-9);
    }
}
