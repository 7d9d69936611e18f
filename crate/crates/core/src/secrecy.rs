//! Secrecy rate, secure energy efficiency and the scalar reward.

use thiserror::Error;

use crate::channel::{shannon_capacity, sinr, ChannelRealization, ScenarioConfig};

/// Transmit powers at or below this many watts count as "off" for the
/// energy-efficiency ratio.
pub const ZERO_POWER_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AllocationError {
    #[error("expected {expected} AP powers, got {got}")]
    Length { expected: usize, got: usize },
    #[error("power {power} W for AP {ap} is outside [0, {p_max}]")]
    OutOfRange { ap: usize, power: f64, p_max: f64 },
}

/// One transmit power per AP, in watts, each within `[0, p_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation(Vec<f64>);

impl PowerAllocation {
    pub fn new(powers: Vec<f64>, cfg: &ScenarioConfig) -> Result<Self, AllocationError> {
        if powers.len() != cfg.n_aps() {
            return Err(AllocationError::Length { expected: cfg.n_aps(), got: powers.len() });
        }
        for (ap, &power) in powers.iter().enumerate() {
            if !(0.0..=cfg.p_max).contains(&power) {
                return Err(AllocationError::OutOfRange { ap, power, p_max: cfg.p_max });
            }
        }
        Ok(Self(powers))
    }

    /// Maps a normalized action in `[0, 1]^n` to watts. Components are
    /// clamped into the unit box first.
    pub fn from_normalized(action: &[f64], cfg: &ScenarioConfig) -> Self {
        Self(action.iter().map(|a| a.clamp(0.0, 1.0) * cfg.p_max).collect())
    }

    pub fn uniform(power: f64, n_aps: usize) -> Self {
        Self(vec![power; n_aps])
    }

    pub fn powers(&self) -> &[f64] {
        &self.0
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Per-link breakdown behind one reward evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct SecrecyMetrics {
    pub user_capacity: Vec<f64>,
    /// `eve_capacity[e][u]`: eavesdropper `e` decoding user `u`'s stream.
    pub eve_capacity: Vec<Vec<f64>>,
    pub secrecy_rate: Vec<f64>,
    pub secure_ee: Vec<f64>,
    pub reward: f64,
}

impl SecrecyMetrics {
    pub fn sr_sum(&self) -> f64 {
        self.secrecy_rate.iter().sum()
    }

    pub fn see_sum(&self) -> f64 {
        self.secure_ee.iter().sum()
    }
}

/// `max(0, user capacity - best eavesdropper capacity)`.
pub fn secrecy_from_capacities(user_capacity: f64, eve_capacities: &[f64]) -> f64 {
    let worst = eve_capacities.iter().copied().fold(0.0, f64::max);
    (user_capacity - worst).max(0.0)
}

fn capacity(receiver: usize, ap: usize, p: &PowerAllocation, ch: &ChannelRealization, cfg: &ScenarioConfig) -> f64 {
    // SINR is non-negative for any valid allocation.
    shannon_capacity(sinr(receiver, ap, p.powers(), ch, cfg.noise_power)).unwrap_or(0.0)
}

fn eve_capacities(user: usize, p: &PowerAllocation, ch: &ChannelRealization, cfg: &ScenarioConfig) -> Vec<f64> {
    let ap = cfg.user_to_ap[user];
    (0..cfg.n_eves())
        .map(|e| capacity(cfg.n_users() + e, ap, p, ch, cfg))
        .collect()
}

/// Secrecy rate of `user` against the strongest eavesdropper.
pub fn secrecy_rate(user: usize, p: &PowerAllocation, ch: &ChannelRealization, cfg: &ScenarioConfig) -> f64 {
    let c_user = capacity(user, cfg.user_to_ap[user], p, ch, cfg);
    secrecy_from_capacities(c_user, &eve_capacities(user, p, ch, cfg))
}

/// Secrecy rate delivered by `ap` per watt it transmits; zero when the AP
/// is off.
pub fn secure_ee(ap: usize, p: &PowerAllocation, ch: &ChannelRealization, cfg: &ScenarioConfig) -> f64 {
    let sr: f64 = cfg.users_of(ap).map(|u| secrecy_rate(u, p, ch, cfg)).sum();
    ee_ratio(sr, p.powers()[ap])
}

fn ee_ratio(secrecy_rate: f64, power: f64) -> f64 {
    if power <= ZERO_POWER_EPS {
        0.0
    } else {
        secrecy_rate / power
    }
}

/// `sum(secrecy rate) + weight * sum(secure EE)` with the full breakdown.
pub fn reward(p: &PowerAllocation, ch: &ChannelRealization, cfg: &ScenarioConfig, weight: f64) -> SecrecyMetrics {
    let n_users = cfg.n_users();
    let user_capacity: Vec<f64> = (0..n_users)
        .map(|u| capacity(u, cfg.user_to_ap[u], p, ch, cfg))
        .collect();
    let per_user_eve: Vec<Vec<f64>> = (0..n_users).map(|u| eve_capacities(u, p, ch, cfg)).collect();
    let secrecy_rate: Vec<f64> = user_capacity
        .iter()
        .zip(&per_user_eve)
        .map(|(&c, eves)| secrecy_from_capacities(c, eves))
        .collect();
    let secure_ee: Vec<f64> = (0..cfg.n_aps())
        .map(|a| {
            let sr = cfg.users_of(a).map(|u| secrecy_rate[u]).sum();
            ee_ratio(sr, p.powers()[a])
        })
        .collect();
    let eve_capacity = (0..cfg.n_eves())
        .map(|e| per_user_eve.iter().map(|caps| caps[e]).collect())
        .collect();
    let reward = secrecy_rate.iter().sum::<f64>() + weight * secure_ee.iter().sum::<f64>();
    SecrecyMetrics { user_capacity, eve_capacity, secrecy_rate, secure_ee, reward }
}
