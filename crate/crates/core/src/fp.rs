//! Lagrangian-dual and quadratic transforms of the RSMA rates.
//!
//! Each rate `ln(1 + sinr)` is replaced by a surrogate in two auxiliary
//! variables per (stream, user) pair: a real `alpha` and a complex `beta`.
//! For fixed auxiliaries the surrogate is a concave quadratic in `W`, and it
//! equals the true rate when both auxiliaries sit at their closed-form
//! optima.

use num_complex::Complex64;

use crate::config::SystemConfig;
use crate::error::{Result, RsmaError};
use crate::model::{BeamformingMatrix, ChannelMatrix, LinkGains, Stream};

/// Auxiliary variables for the common stream (`*0`) and the private
/// streams (`*p`), one entry per user.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryState {
    pub alpha0: Vec<f64>,
    pub alphap: Vec<f64>,
    pub beta0: Vec<Complex64>,
    pub betap: Vec<Complex64>,
}

impl AuxiliaryState {
    pub fn zeros(users: usize) -> Self {
        Self {
            alpha0: vec![0.0; users],
            alphap: vec![0.0; users],
            beta0: vec![Complex64::default(); users],
            betap: vec![Complex64::default(); users],
        }
    }

    /// Optimal auxiliaries for `w`: alpha first, then beta at that alpha.
    pub fn optimal(w: &BeamformingMatrix, h: &ChannelMatrix, sigma2: &[f64]) -> Result<Self> {
        let (alpha0, alphap) = update_alpha(w, h, sigma2)?;
        let (beta0, betap) = update_beta(w, h, sigma2, &alpha0, &alphap)?;
        Ok(Self {
            alpha0,
            alphap,
            beta0,
            betap,
        })
    }

    pub fn users(&self) -> usize {
        self.alpha0.len()
    }

    pub fn alpha(&self, user: usize, stream: Stream) -> f64 {
        match stream {
            Stream::Common => self.alpha0[user],
            Stream::Private => self.alphap[user],
        }
    }

    pub fn beta(&self, user: usize, stream: Stream) -> Complex64 {
        match stream {
            Stream::Common => self.beta0[user],
            Stream::Private => self.betap[user],
        }
    }
}

fn check_noise(h: &ChannelMatrix, sigma2: &[f64]) -> Result<()> {
    if sigma2.len() != h.users() {
        return Err(RsmaError::Dimension(format!(
            "{} noise powers for {} users",
            sigma2.len(),
            h.users()
        )));
    }
    Ok(())
}

/// `alpha_{i,k} = sinr_{i,k}` for the common and private streams.
pub fn update_alpha(w: &BeamformingMatrix, h: &ChannelMatrix, sigma2: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_noise(h, sigma2)?;
    let g = LinkGains::new(w, h)?;
    let k = h.users();
    let common = (0..k).map(|u| g.sinr(u, Stream::Common, sigma2[u])).collect();
    let private = (0..k).map(|u| g.sinr(u, Stream::Private, sigma2[u])).collect();
    Ok((common, private))
}

/// `beta_{i,k} = sqrt(1 + alpha_{i,k}) h_k^H w_i / (total received + noise)`.
///
/// The common-stream denominator includes `w_0`; the private one does not,
/// since the common stream has already been cancelled.
pub fn update_beta(
    w: &BeamformingMatrix,
    h: &ChannelMatrix,
    sigma2: &[f64],
    alpha0: &[f64],
    alphap: &[f64],
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    check_noise(h, sigma2)?;
    let k = h.users();
    if alpha0.len() != k || alphap.len() != k {
        return Err(RsmaError::Dimension("alpha length differs from user count".into()));
    }
    let g = LinkGains::new(w, h)?;
    let beta = |u: usize, stream: Stream, alpha: f64| {
        let num = g.amplitude(u, stream.column(u)) * (1.0 + alpha).sqrt();
        num / g.total_received(u, stream, sigma2[u])
    };
    let common = (0..k).map(|u| beta(u, Stream::Common, alpha0[u])).collect();
    let private = (0..k).map(|u| beta(u, Stream::Private, alphap[u])).collect();
    Ok((common, private))
}

/// Quadratic-transform surrogate of the rate of `stream` at `user`.
fn g_from_gains(gains: &LinkGains, sigma2: f64, alpha: f64, beta: Complex64, user: usize, stream: Stream) -> f64 {
    let a = gains.amplitude(user, stream.column(user));
    let root = (1.0 + alpha).sqrt();
    alpha.ln_1p() - alpha + 2.0 * root * (beta.conj() * a).re
        - beta.norm_sqr() * gains.total_received(user, stream, sigma2)
}

/// Surrogate rate `g_{i,k}(W, alpha, beta)`.
pub fn g_value(
    w: &BeamformingMatrix,
    h: &ChannelMatrix,
    sigma2: &[f64],
    alpha: f64,
    beta: Complex64,
    user: usize,
    stream: Stream,
) -> Result<f64> {
    check_noise(h, sigma2)?;
    let gains = LinkGains::new(w, h)?;
    Ok(g_from_gains(&gains, sigma2[user], alpha, beta, user, stream))
}

/// Lagrangian-dual transform `f_{i,k}(W, alpha)` (ratio form). Only used to
/// cross-check [`g_value`].
pub fn f_value(
    w: &BeamformingMatrix,
    h: &ChannelMatrix,
    sigma2: &[f64],
    alpha: f64,
    user: usize,
    stream: Stream,
) -> Result<f64> {
    check_noise(h, sigma2)?;
    let gamma = LinkGains::new(w, h)?.sinr(user, stream, sigma2[user]);
    Ok(alpha.ln_1p() - alpha + (1.0 + alpha) * gamma / (1.0 + gamma))
}

/// Surrogates of every stream at fixed auxiliaries.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateRates {
    pub common: Vec<f64>,
    pub private: Vec<f64>,
}

impl SurrogateRates {
    pub fn worst_common(&self) -> f64 {
        self.common.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn surrogate_rates(
    w: &BeamformingMatrix,
    h: &ChannelMatrix,
    sigma2: &[f64],
    aux: &AuxiliaryState,
) -> Result<SurrogateRates> {
    check_noise(h, sigma2)?;
    let gains = LinkGains::new(w, h)?;
    let rates = |stream: Stream| -> Vec<f64> {
        (0..h.users())
            .map(|u| g_from_gains(&gains, sigma2[u], aux.alpha(u, stream), aux.beta(u, stream), u, stream))
            .collect()
    };
    Ok(SurrogateRates {
        common: rates(Stream::Common),
        private: rates(Stream::Private),
    })
}

/// `max_k delta_k * y + sum_k delta_k g_{k,k}`.
pub fn fp_objective(
    w: &BeamformingMatrix,
    y: f64,
    aux: &AuxiliaryState,
    cfg: &SystemConfig,
    h: &ChannelMatrix,
) -> Result<f64> {
    let s = surrogate_rates(w, h, &cfg.sigma2, aux)?;
    Ok(objective_from(&s, y, &cfg.weights))
}

pub(crate) fn objective_from(s: &SurrogateRates, y: f64, weights: &[f64]) -> f64 {
    let dmax = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    dmax * y + weights.iter().zip(&s.private).map(|(d, g)| d * g).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_channel, rate};
    use nalgebra::DMatrix;
    use std::f64::consts::{FRAC_1_SQRT_2, LN_2};

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn orthogonal(w0: f64) -> (BeamformingMatrix, ChannelMatrix) {
        let h = ChannelMatrix::new(DMatrix::identity(2, 2)).unwrap();
        let w = DMatrix::from_row_slice(2, 3, &[c(w0), c(1.0), c(0.0), c(0.0), c(0.0), c(1.0)]);
        (BeamformingMatrix::new(w).unwrap(), h)
    }

    fn random_w(cfg: &SystemConfig, seed: u64) -> BeamformingMatrix {
        let wide = SystemConfig::new(cfg.antennas, cfg.users + 1, 1.0);
        let mut w = BeamformingMatrix::new(generate_channel(&wide, seed).matrix().clone()).unwrap();
        w.scale_to_power(cfg.power);
        w
    }

    #[test]
    fn alpha_equals_sinr() {
        let (w, h) = orthogonal(1.0);
        let (a0, ap) = update_alpha(&w, &h, &[1.0, 1.0]).unwrap();
        assert_eq!(a0[0], 0.5);
        assert_eq!(ap[0], 1.0);

        let w = BeamformingMatrix::zeros(2, 2);
        let (a0, ap) = update_alpha(&w, &h, &[1.0, 1.0]).unwrap();
        assert!(a0.iter().chain(&ap).all(|&a| a == 0.0));
    }

    #[test]
    fn beta_closed_form() {
        let (w, h) = orthogonal(0.0);
        let (_, bp) = update_beta(&w, &h, &[1.0, 1.0], &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((bp[0] - c(FRAC_1_SQRT_2)).norm() < 1e-15);

        let z = BeamformingMatrix::zeros(2, 2);
        let (b0, bp) = update_beta(&z, &h, &[1.0, 1.0], &[0.0; 2], &[0.0; 2]).unwrap();
        assert!(b0.iter().chain(&bp).all(|b| b.norm() == 0.0));
    }

    #[test]
    fn g_is_tight_at_optimal_auxiliaries() {
        let (w, h) = orthogonal(0.0);
        let g = g_value(&w, &h, &[1.0, 1.0], 1.0, c(FRAC_1_SQRT_2), 0, Stream::Private).unwrap();
        assert!((g - LN_2).abs() < 1e-15);
        let g0 = g_value(&w, &h, &[1.0, 1.0], 0.0, c(0.0), 1, Stream::Common).unwrap();
        assert_eq!(g0, 0.0);
    }

    #[test]
    fn f_identities() {
        let (w, h) = orthogonal(1.0);
        let s = [1.0, 1.0];
        let gamma = 0.5;
        let f = f_value(&w, &h, &s, gamma, 0, Stream::Common).unwrap();
        assert!((f - 1.5f64.ln()).abs() < 1e-15);
        let f0 = f_value(&w, &h, &s, 0.0, 0, Stream::Common).unwrap();
        assert!((f0 - gamma / (1.0 + gamma)).abs() < 1e-15);
    }

    /// Second, independent evaluation of `beta` straight from the columns.
    fn beta_oracle(w: &BeamformingMatrix, h: &ChannelMatrix, s: f64, alpha: f64, u: usize, common: bool) -> Complex64 {
        let hk = h.matrix().column(u);
        let ip = |j: usize| hk.dotc(&w.matrix().column(j));
        let first = if common { 0 } else { 1 };
        let denom: f64 = (first..=h.users()).map(|j| ip(j).norm_sqr()).sum::<f64>() + s;
        let col = if common { 0 } else { u + 1 };
        ip(col) * (1.0 + alpha).sqrt() / denom
    }

    #[test]
    fn random_auxiliaries_match_independent_evaluation() {
        let cfg = SystemConfig::new(3, 3, 5.0).with_sigma2(vec![0.5, 1.0, 2.0]);
        for seed in 0..20 {
            let h = generate_channel(&cfg, seed);
            let w = random_w(&cfg, 1000 + seed);
            let aux = AuxiliaryState::optimal(&w, &h, &cfg.sigma2).unwrap();
            for u in 0..3 {
                for (stream, common) in [(Stream::Common, true), (Stream::Private, false)] {
                    let s = crate::model::sinr(&w, &h, &cfg.sigma2, u, stream).unwrap();
                    assert!((aux.alpha(u, stream) - s).abs() <= 1e-14 * s.max(1.0));
                    let b = beta_oracle(&w, &h, cfg.sigma2[u], aux.alpha(u, stream), u, common);
                    assert!((aux.beta(u, stream) - b).norm() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn quadratic_transform_is_bounded_by_ratio_form() {
        use rand::{Rng, SeedableRng};
        let cfg = SystemConfig::new(2, 2, 4.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for t in 0..1000 {
            let h = generate_channel(&cfg, t);
            let w = random_w(&cfg, 50_000 + t);
            let alpha: f64 = rng.random_range(0.0..5.0);
            let beta = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let u = (t % 2) as usize;
            for stream in [Stream::Common, Stream::Private] {
                let g = g_value(&w, &h, &cfg.sigma2, alpha, beta, u, stream).unwrap();
                let f = f_value(&w, &h, &cfg.sigma2, alpha, u, stream).unwrap();
                let r = rate(&w, &h, &cfg.sigma2, u, stream).unwrap();
                assert!(g <= f + 1e-12, "g {g} > f {f}");
                assert!(f <= r + 1e-12, "f {f} > r {r}");
            }
        }
    }

    #[test]
    fn g_is_concave_in_each_beam() {
        let cfg = SystemConfig::new(3, 2, 3.0);
        for t in 0..200 {
            let h = generate_channel(&cfg, t);
            let w1 = random_w(&cfg, 10 * t + 1);
            let w2 = random_w(&cfg, 10 * t + 2);
            let aux = AuxiliaryState::optimal(&random_w(&cfg, 10 * t + 3), &h, &cfg.sigma2).unwrap();
            let mid = BeamformingMatrix::new((w1.matrix() + w2.matrix()) * c(0.5)).unwrap();
            let s1 = surrogate_rates(&w1, &h, &cfg.sigma2, &aux).unwrap();
            let s2 = surrogate_rates(&w2, &h, &cfg.sigma2, &aux).unwrap();
            let sm = surrogate_rates(&mid, &h, &cfg.sigma2, &aux).unwrap();
            for u in 0..2 {
                assert!(sm.common[u] >= 0.5 * (s1.common[u] + s2.common[u]) - 1e-12);
                assert!(sm.private[u] >= 0.5 * (s1.private[u] + s2.private[u]) - 1e-12);
            }
        }
    }

    #[test]
    fn objective_composition() {
        let cfg = SystemConfig::new(2, 2, 10.0);
        let (_, h) = orthogonal(0.0);
        let z = BeamformingMatrix::zeros(2, 2);
        assert_eq!(fp_objective(&z, 0.0, &AuxiliaryState::zeros(2), &cfg, &h).unwrap(), 0.0);

        let (w, h) = orthogonal(0.0);
        let aux = AuxiliaryState::optimal(&w, &h, &cfg.sigma2).unwrap();
        let s = surrogate_rates(&w, &h, &cfg.sigma2, &aux).unwrap();
        let obj = fp_objective(&w, s.worst_common(), &aux, &cfg, &h).unwrap();
        let wsr = crate::model::evaluate(&w, &h, &cfg).unwrap().wsr;
        assert!((obj - wsr).abs() < 1e-15);
    }

    #[test]
    fn no_nans_on_zero_beams() {
        let cfg = SystemConfig::new(2, 3, 1.0);
        let h = generate_channel(&cfg, 1);
        let aux = AuxiliaryState::optimal(&BeamformingMatrix::zeros(2, 3), &h, &cfg.sigma2).unwrap();
        assert!(aux.alpha0.iter().chain(&aux.alphap).all(|a| a.is_finite()));
        assert!(aux
            .beta0
            .iter()
            .chain(&aux.betap)
            .all(|b| b.re.is_finite() && b.im.is_finite()));
    }
}
