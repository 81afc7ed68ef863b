use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 2e-2;
const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    #[default]
    LinearBeta,
    Cosine,
}

/// Cumulative signal levels for `t = 1..=t_max`, with `ᾱ_0 = 1` implied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    alphas_bar: Vec<f64>,
    /// Stochasticity of the reverse step; 0 is deterministic DDIM.
    pub eta: f64,
}

impl NoiseSchedule {
    /// Builds a schedule from per-step betas.
    pub fn from_betas(betas: &[f64], eta: f64) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidInput("schedule needs at least one step".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(0.0..1.0).contains(*b)) {
            return Err(Error::InvalidInput(format!("beta {b} outside [0, 1)")));
        }
        let mut acc = 1.0;
        let alphas_bar = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Self::from_alphas_bar(alphas_bar, eta)
    }

    pub fn from_alphas_bar(alphas_bar: Vec<f64>, eta: f64) -> Result<Self> {
        if alphas_bar.is_empty() {
            return Err(Error::InvalidInput("schedule needs at least one step".into()));
        }
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::InvalidInput(format!("eta {eta} outside [0, 1]")));
        }
        let mut prev = 1.0;
        for (i, &a) in alphas_bar.iter().enumerate() {
            if !(a > 0.0 && a <= prev) {
                return Err(Error::InvalidInput(format!(
                    "alpha_bar at t={} is {a}; values must lie in (0, 1] and not increase",
                    i + 1
                )));
            }
            prev = a;
        }
        Ok(NoiseSchedule { alphas_bar, eta })
    }

    pub fn t_max(&self) -> usize {
        self.alphas_bar.len()
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alphas_bar[t - 1]
        }
    }

    pub fn alphas_bar(&self) -> &[f64] {
        &self.alphas_bar
    }

    pub fn t_norm(&self, t: usize) -> f64 {
        t as f64 / self.t_max() as f64
    }
}

pub fn make_schedule(t_max: usize, kind: ScheduleKind, eta: f64) -> Result<NoiseSchedule> {
    if t_max < 1 {
        return Err(Error::InvalidInput("t_max must be at least 1".into()));
    }
    let betas: Vec<f64> = match kind {
        ScheduleKind::LinearBeta if t_max == 1 => vec![BETA_START],
        ScheduleKind::LinearBeta => (0..t_max)
            .map(|i| BETA_START + (BETA_END - BETA_START) * i as f64 / (t_max - 1) as f64)
            .collect(),
        ScheduleKind::Cosine => {
            let f = |t: usize| {
                let s = (t as f64 / t_max as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
                (s * std::f64::consts::FRAC_PI_2).cos().powi(2)
            };
            (1..=t_max).map(|t| (1.0 - f(t) / f(t - 1)).min(MAX_BETA)).collect()
        }
    };
    NoiseSchedule::from_betas(&betas, eta)
}
