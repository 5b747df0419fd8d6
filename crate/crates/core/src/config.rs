use serde::{Deserialize, Serialize};

use crate::error::{Result, RsmaError};

/// Unit used when rates are reported. All internal arithmetic is in nats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RateUnit {
    #[default]
    Nats,
    Bits,
}

impl RateUnit {
    pub fn convert(self, nats: f64) -> f64 {
        match self {
            RateUnit::Nats => nats,
            RateUnit::Bits => nats / std::f64::consts::LN_2,
        }
    }
}

/// System dimensions, power budget, noise, weights and algorithm knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Transmit antennas.
    pub antennas: usize,
    /// Single-antenna users.
    pub users: usize,
    /// Transmit power budget in watts.
    pub power: f64,
    /// Per-user noise power.
    pub sigma2: Vec<f64>,
    /// Per-user weights.
    pub weights: Vec<f64>,
    /// Damping constant of the dual fixed-point update.
    pub rho: f64,
    pub tol_outer: f64,
    pub tol_inner: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub rate_unit: RateUnit,
    /// Restart the dual variables from their defaults at every outer iteration.
    #[serde(default)]
    pub cold_start_duals: bool,
}

impl SystemConfig {
    /// Unit noise, unit weights, `rho = 0.5`, tolerances `1e-4`.
    pub fn new(antennas: usize, users: usize, power: f64) -> Self {
        Self {
            antennas,
            users,
            power,
            sigma2: vec![1.0; users],
            weights: vec![1.0; users],
            rho: 0.5,
            tol_outer: 1e-4,
            tol_inner: 1e-4,
            max_outer: 500,
            max_inner: 2000,
            rate_unit: RateUnit::Nats,
            cold_start_duals: false,
        }
    }

    /// The Monte-Carlo reference setup: 4 antennas, 4 users, 100 W.
    pub fn reference() -> Self {
        Self::new(4, 4, 100.0)
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Self {
        self.weights = weights;
        self
    }

    pub fn with_sigma2(mut self, sigma2: Vec<f64>) -> Self {
        self.sigma2 = sigma2;
        self
    }

    /// Sets both stopping tolerances.
    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tol_outer = tol;
        self.tol_inner = tol;
        self
    }

    pub fn max_weight(&self) -> f64 {
        self.weights.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(RsmaError::InvalidConfig(msg));
        if self.antennas == 0 || self.users == 0 {
            return bad(format!(
                "antennas and users must be positive (got L={}, K={})",
                self.antennas, self.users
            ));
        }
        if !(self.power.is_finite() && self.power > 0.0) {
            return bad(format!("power budget must be positive, got {}", self.power));
        }
        if self.sigma2.len() != self.users {
            return bad(format!(
                "sigma2 has {} entries for {} users",
                self.sigma2.len(),
                self.users
            ));
        }
        if self.sigma2.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad("noise powers must be positive and finite".into());
        }
        if self.weights.len() != self.users {
            return bad(format!(
                "weights has {} entries for {} users",
                self.weights.len(),
                self.users
            ));
        }
        if self.weights.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return bad("weights must be non-negative and finite".into());
        }
        if self.max_weight() <= 0.0 {
            return bad("at least one weight must be positive".into());
        }
        if !(self.rho.is_finite() && self.rho >= 0.0) {
            return bad(format!("rho must be non-negative, got {}", self.rho));
        }
        if !(self.tol_outer > 0.0 && self.tol_inner > 0.0) {
            return bad("tolerances must be positive".into());
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return bad("iteration caps must be positive".into());
        }
        Ok(())
    }
}
