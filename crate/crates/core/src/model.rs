//! Physical model of the 1-layer RSMA broadcast channel.
//!
//! A base station with `L` antennas serves `K` single-antenna users. The
//! beamforming matrix `W` has `K + 1` columns: column 0 carries the common
//! stream, column `k + 1` the private stream of user `k` (users are 0-based).
//! Every user first decodes the common stream treating all private streams
//! as noise, removes it, then decodes its own private stream.
//!
//! Rates are in nats throughout.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Result, RsmaError};
use crate::solver::allocate_common_rate;

/// Relative slack on the power budget accepted by [`evaluate`].
pub const FEASIBILITY_SLACK: f64 = 1e-6;

/// Downlink channels, `L x K`; column `k` is `h_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix(DMatrix<Complex64>);

impl ChannelMatrix {
    pub fn new(h: DMatrix<Complex64>) -> Result<Self> {
        if h.nrows() == 0 || h.ncols() == 0 {
            return Err(RsmaError::Dimension("channel matrix must be non-empty".into()));
        }
        if h.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(RsmaError::Numerical("channel contains non-finite entries".into()));
        }
        Ok(Self(h))
    }

    pub fn antennas(&self) -> usize {
        self.0.nrows()
    }

    pub fn users(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.0
    }

    pub fn check(&self, cfg: &SystemConfig) -> Result<()> {
        if self.antennas() != cfg.antennas || self.users() != cfg.users {
            return Err(RsmaError::Dimension(format!(
                "channel is {}x{}, config expects {}x{}",
                self.antennas(),
                self.users(),
                cfg.antennas,
                cfg.users
            )));
        }
        Ok(())
    }
}

/// Beamformers `[w_0 | w_1 ... w_K]`, `L x (K + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingMatrix(DMatrix<Complex64>);

impl BeamformingMatrix {
    pub fn new(w: DMatrix<Complex64>) -> Result<Self> {
        if w.ncols() < 2 {
            return Err(RsmaError::Dimension(
                "beamforming matrix needs a common column and at least one private column".into(),
            ));
        }
        Ok(Self(w))
    }

    pub fn zeros(antennas: usize, users: usize) -> Self {
        Self(DMatrix::zeros(antennas, users + 1))
    }

    pub fn antennas(&self) -> usize {
        self.0.nrows()
    }

    pub fn users(&self) -> usize {
        self.0.ncols() - 1
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.0
    }

    pub fn matrix_mut(&mut self) -> &mut DMatrix<Complex64> {
        &mut self.0
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.0
    }

    /// `trace(W W^H)`.
    pub fn power(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Scales every column so that the total power equals `budget`.
    pub fn scale_to_power(&mut self, budget: f64) {
        let p = self.power();
        if p > 0.0 {
            self.0 *= Complex64::from((budget / p).sqrt());
        }
    }

    fn check(&self, h: &ChannelMatrix) -> Result<()> {
        if self.antennas() != h.antennas() || self.users() != h.users() {
            return Err(RsmaError::Dimension(format!(
                "beamformer is {}x{}, channel is {}x{} (expected {}x{})",
                self.antennas(),
                self.0.ncols(),
                h.antennas(),
                h.users(),
                h.antennas(),
                h.users() + 1
            )));
        }
        Ok(())
    }
}

/// Which stream a user decodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Common,
    Private,
}

impl Stream {
    /// Column of `W` carrying this stream for `user`.
    pub fn column(self, user: usize) -> usize {
        match self {
            Stream::Common => 0,
            Stream::Private => user + 1,
        }
    }
}

/// Effective scalar channels `h_k^H w_j`, a `K x (K + 1)` matrix.
#[derive(Debug, Clone)]
pub struct LinkGains {
    inner: DMatrix<Complex64>,
}

impl LinkGains {
    pub fn new(w: &BeamformingMatrix, h: &ChannelMatrix) -> Result<Self> {
        w.check(h)?;
        Ok(Self {
            inner: h.matrix().adjoint() * w.matrix(),
        })
    }

    /// `h_k^H w_j`.
    pub fn amplitude(&self, user: usize, column: usize) -> Complex64 {
        self.inner[(user, column)]
    }

    /// `|h_k^H w_j|^2`.
    pub fn gain(&self, user: usize, column: usize) -> f64 {
        self.inner[(user, column)].norm_sqr()
    }

    /// Power from all private streams at `user`.
    pub fn private_power(&self, user: usize) -> f64 {
        (1..self.inner.ncols()).map(|j| self.gain(user, j)).sum()
    }

    /// Interference-plus-noise seen while decoding `stream`.
    pub fn interference(&self, user: usize, stream: Stream, sigma2: f64) -> f64 {
        let private: f64 = match stream {
            Stream::Common => self.private_power(user),
            Stream::Private => (1..self.inner.ncols())
                .filter(|&j| j != user + 1)
                .map(|j| self.gain(user, j))
                .sum(),
        };
        private + sigma2
    }

    /// Interference-plus-noise plus the desired signal: the denominator of
    /// the quadratic-transform auxiliary variable.
    pub fn total_received(&self, user: usize, stream: Stream, sigma2: f64) -> f64 {
        let private = self.private_power(user);
        match stream {
            Stream::Common => self.gain(user, 0) + private + sigma2,
            Stream::Private => private + sigma2,
        }
    }

    pub fn sinr(&self, user: usize, stream: Stream, sigma2: f64) -> f64 {
        self.gain(user, stream.column(user)) / self.interference(user, stream, sigma2)
    }
}

fn check_user(h: &ChannelMatrix, sigma2: &[f64], user: usize) -> Result<()> {
    if sigma2.len() != h.users() {
        return Err(RsmaError::Dimension(format!(
            "{} noise powers for {} users",
            sigma2.len(),
            h.users()
        )));
    }
    if user >= h.users() {
        return Err(RsmaError::Dimension(format!(
            "user index {user} out of range for {} users",
            h.users()
        )));
    }
    Ok(())
}

/// Draws an i.i.d. `CN(0, 1)` channel keyed by `seed`.
///
/// Entries are `(a + ib) / sqrt(2)` with `a`, `b` standard normal, filled
/// column by column from a ChaCha8 stream.
pub fn generate_channel(cfg: &SystemConfig, seed: u64) -> ChannelMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = DMatrix::zeros(cfg.antennas, cfg.users);
    for k in 0..cfg.users {
        for l in 0..cfg.antennas {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            h[(l, k)] = Complex64::new(a, b) * std::f64::consts::FRAC_1_SQRT_2;
        }
    }
    ChannelMatrix(h)
}

/// SINR of `stream` at `user`.
pub fn sinr(w: &BeamformingMatrix, h: &ChannelMatrix, sigma2: &[f64], user: usize, stream: Stream) -> Result<f64> {
    check_user(h, sigma2, user)?;
    Ok(LinkGains::new(w, h)?.sinr(user, stream, sigma2[user]))
}

/// Achievable rate `ln(1 + sinr)` in nats.
pub fn rate(w: &BeamformingMatrix, h: &ChannelMatrix, sigma2: &[f64], user: usize, stream: Stream) -> Result<f64> {
    Ok(sinr(w, h, sigma2, user, stream)?.ln_1p())
}

/// Rates, common-rate allocation and weighted sum-rate of a beamformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    /// Common-stream rate at each user.
    pub r0: Vec<f64>,
    /// Private rate of each user.
    pub rp: Vec<f64>,
    /// Share of the common rate credited to each user.
    pub c: Vec<f64>,
    /// Worst-case common rate.
    pub y: f64,
    pub wsr: f64,
    pub r_tot: Vec<f64>,
}

/// Evaluates all rates of `w` and applies the optimal common-rate allocation.
pub fn evaluate(w: &BeamformingMatrix, h: &ChannelMatrix, cfg: &SystemConfig) -> Result<RateReport> {
    h.check(cfg)?;
    let trace = w.power();
    if trace > cfg.power * (1.0 + FEASIBILITY_SLACK) {
        return Err(RsmaError::Infeasible {
            trace,
            budget: cfg.power,
        });
    }
    let gains = LinkGains::new(w, h)?;
    let k = h.users();
    let r0: Vec<f64> = (0..k)
        .map(|u| gains.sinr(u, Stream::Common, cfg.sigma2[u]).ln_1p())
        .collect();
    let rp: Vec<f64> = (0..k)
        .map(|u| gains.sinr(u, Stream::Private, cfg.sigma2[u]).ln_1p())
        .collect();
    let c = allocate_common_rate(&cfg.weights, &r0)?;
    let y = r0.iter().copied().fold(f64::INFINITY, f64::min);
    let r_tot: Vec<f64> = c.iter().zip(&rp).map(|(c, r)| c + r).collect();
    let wsr = cfg.weights.iter().zip(&r_tot).map(|(d, r)| d * r).sum();
    Ok(RateReport {
        r0,
        rp,
        c,
        y,
        wsr,
        r_tot,
    })
}

/// On-disk channel description.
///
/// `H_re` and `H_im` are row-major: `L` rows of `K` entries each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelFile {
    #[serde(rename = "L")]
    pub antennas: usize,
    #[serde(rename = "K")]
    pub users: usize,
    pub sigma2: Vec<f64>,
    #[serde(rename = "H_re")]
    pub h_re: Vec<Vec<f64>>,
    #[serde(rename = "H_im")]
    pub h_im: Vec<Vec<f64>>,
}

impl ChannelFile {
    pub fn from_channel(h: &ChannelMatrix, sigma2: &[f64]) -> Self {
        let m = h.matrix();
        let rows = |f: fn(&Complex64) -> f64| -> Vec<Vec<f64>> {
            (0..m.nrows())
                .map(|l| (0..m.ncols()).map(|k| f(&m[(l, k)])).collect())
                .collect()
        };
        Self {
            antennas: h.antennas(),
            users: h.users(),
            sigma2: sigma2.to_vec(),
            h_re: rows(|z| z.re),
            h_im: rows(|z| z.im),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: ChannelFile = serde_json::from_str(text)
            .map_err(|e| RsmaError::ChannelFile(format!("line {} column {}: {e}", e.line(), e.column())))?;
        file.validate()?;
        Ok(file)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(RsmaError::ChannelFile(m));
        if self.antennas == 0 || self.users == 0 {
            return err("fields `L` and `K` must be positive".into());
        }
        if self.sigma2.len() != self.users {
            return err(format!(
                "field `sigma2` has {} entries, expected K = {}",
                self.sigma2.len(),
                self.users
            ));
        }
        for (name, rows) in [("H_re", &self.h_re), ("H_im", &self.h_im)] {
            if rows.len() != self.antennas {
                return err(format!(
                    "field `{name}` has {} rows, expected L = {}",
                    rows.len(),
                    self.antennas
                ));
            }
            if let Some((r, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != self.users) {
                return err(format!(
                    "field `{name}` row {r} has {} entries, expected K = {}",
                    row.len(),
                    self.users
                ));
            }
        }
        Ok(())
    }

    pub fn channel(&self) -> Result<ChannelMatrix> {
        self.validate()?;
        let h = DMatrix::from_fn(self.antennas, self.users, |l, k| {
            Complex64::new(self.h_re[l][k], self.h_im[l][k])
        });
        ChannelMatrix::new(h)
    }
}
