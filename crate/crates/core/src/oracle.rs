//! Exhaustive grid search over static power allocations, and the ratio of a
//! trained policy's reward to the grid optimum.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::channel::{ChannelRealization, ScenarioConfig};
use crate::diffusion::DiffusionError;
use crate::policy::Policy;
use crate::secrecy::{reward, PowerAllocation};

pub const DEFAULT_RESOLUTION: usize = 21;
pub const DEFAULT_BUDGET: u64 = 10_000_000;
/// Steps in a [`policy_gap`] rollout.
pub const GAP_ROLLOUT_STEPS: usize = 100;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("grid resolution must be at least 2, got {0}")]
    Resolution(usize),
    #[error("grid of {evaluations} points exceeds the evaluation budget {budget}")]
    Budget { evaluations: u128, budget: u64 },
    #[error("channel has {channel} APs, scenario has {scenario}")]
    Mismatch { channel: usize, scenario: usize },
    #[error(transparent)]
    Policy(#[from] DiffusionError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub best_allocation: PowerAllocation,
    pub best_reward: f64,
    pub resolution: usize,
    pub evaluations: u64,
}

/// Evaluates the reward on every point of `{0, p_max/(R-1), ..., p_max}^n`.
///
/// Ties go to the lowest total power, then to the lexicographically smallest
/// index vector.
pub fn grid_search(
    ch: &ChannelRealization,
    cfg: &ScenarioConfig,
    reward_weight: f64,
    resolution: usize,
    budget: u64,
) -> Result<OracleResult, OracleError> {
    if resolution < 2 {
        return Err(OracleError::Resolution(resolution));
    }
    let n = cfg.n_aps();
    if ch.n_aps() != n {
        return Err(OracleError::Mismatch { channel: ch.n_aps(), scenario: n });
    }
    let evaluations = (resolution as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if evaluations > budget as u128 {
        return Err(OracleError::Budget { evaluations, budget });
    }
    let level = |i: usize| cfg.p_max * i as f64 / (resolution - 1) as f64;
    let mut idx = vec![0usize; n];
    let mut best: Option<(f64, usize, Vec<usize>)> = None;
    loop {
        let p = PowerAllocation::new(idx.iter().map(|&i| level(i)).collect(), cfg).expect("grid stays in the box");
        let r = reward(&p, ch, cfg, reward_weight).reward;
        let total: usize = idx.iter().sum();
        // Enumeration is lexicographic, so on equal reward and equal total the
        // incumbent is already the lexicographically smaller one.
        let better = match &best {
            None => true,
            Some((br, bt, _)) => r > *br || (r == *br && total < *bt),
        };
        if better {
            best = Some((r, total, idx.clone()));
        }
        let mut d = n;
        loop {
            if d == 0 {
                let (best_reward, _, bi) = best.expect("at least one point");
                let best_allocation = PowerAllocation::new(bi.iter().map(|&i| level(i)).collect(), cfg).expect("grid stays in the box");
                return Ok(OracleResult { best_allocation, best_reward, resolution, evaluations: evaluations as u64 });
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < resolution {
                break;
            }
            idx[d] = 0;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyGap {
    Ratio { ratio: f64, policy_reward: f64, best_reward: f64 },
    /// The grid optimum is zero, so the ratio is undefined.
    Degenerate,
}

/// Mean reward of `policy` over [`GAP_ROLLOUT_STEPS`] actions on the frozen
/// channel `ch`.
///
/// The policy sees the frozen-channel state with its own previous action, as
/// in a frozen-channel episode, without exploration noise. Action sampling
/// uses a stream seeded with `seed`.
pub fn policy_mean_reward(
    policy: &Policy,
    ch: &ChannelRealization,
    cfg: &ScenarioConfig,
    env_cfg: &crate::env::EnvConfig,
    seed: u64,
) -> Result<f64, OracleError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = crate::env::normalize_gains(ch, env_cfg.gain_log_mean, env_cfg.gain_log_scale);
    let n_gain = features.len();
    features.extend(std::iter::repeat_n(0.0, cfg.n_aps()));
    let mut total = 0.0;
    for _ in 0..GAP_ROLLOUT_STEPS {
        let (action, _) = policy.act(&features, &mut rng)?;
        let p = PowerAllocation::from_normalized(&action, cfg);
        total += reward(&p, ch, cfg, env_cfg.reward_weight).reward;
        features[n_gain..].copy_from_slice(p.powers().iter().map(|w| w / cfg.p_max).collect::<Vec<_>>().as_slice());
    }
    Ok(total / GAP_ROLLOUT_STEPS as f64)
}

pub fn policy_gap(
    policy: &Policy,
    ch: &ChannelRealization,
    cfg: &ScenarioConfig,
    env_cfg: &crate::env::EnvConfig,
    resolution: usize,
    seed: u64,
) -> Result<PolicyGap, OracleError> {
    let best = grid_search(ch, cfg, env_cfg.reward_weight, resolution, DEFAULT_BUDGET)?;
    if best.best_reward == 0.0 {
        return Ok(PolicyGap::Degenerate);
    }
    let policy_reward = policy_mean_reward(policy, ch, cfg, env_cfg, seed)?;
    Ok(PolicyGap::Ratio { ratio: policy_reward / best.best_reward, policy_reward, best_reward: best.best_reward })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{mean_channel, Point};
    use ndarray::array;

    fn single_link() -> ScenarioConfig {
        ScenarioConfig {
            ap_positions: vec![Point::new(0.0, 0.0)],
            user_positions: vec![Point::new(10.0, 0.0)],
            eve_positions: vec![],
            user_to_ap: vec![0],
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn capacity_only_picks_full_power() {
        let cfg = single_link();
        let ch = mean_channel(&cfg).unwrap();
        let r = grid_search(&ch, &cfg, 0.0, 11, DEFAULT_BUDGET).unwrap();
        assert_eq!(r.best_allocation.powers(), &[cfg.p_max]);
        assert_eq!(r.evaluations, 11);
    }

    #[test]
    fn dominant_eavesdroppers_give_zero_at_zero_power() {
        // Each AP's eavesdropper sits on a stronger link than its user, with
        // no cross-coupling.
        let cfg = ScenarioConfig { eve_positions: vec![Point::new(0.0, 5.0)], ..single_link() };
        let cfg = ScenarioConfig {
            ap_positions: vec![Point::new(0.0, 0.0), Point::new(100.0, 0.0)],
            user_positions: vec![Point::new(10.0, 0.0), Point::new(110.0, 0.0)],
            eve_positions: vec![Point::new(0.0, 5.0), Point::new(100.0, 5.0)],
            user_to_ap: vec![0, 1],
            ..cfg
        };
        let ch = ChannelRealization::from_gains(array![[1e-6, 0.0, 8e-6, 0.0], [0.0, 1e-6, 0.0, 8e-6]]);
        let r = grid_search(&ch, &cfg, 1.0, 5, DEFAULT_BUDGET).unwrap();
        assert_eq!(r.best_reward, 0.0);
        assert_eq!(r.best_allocation.powers(), &[0.0, 0.0]);
    }

    #[test]
    fn default_scenario_enumerates_the_full_grid() {
        let cfg = ScenarioConfig::default();
        let ch = mean_channel(&cfg).unwrap();
        let r = grid_search(&ch, &cfg, 1.0, 21, DEFAULT_BUDGET).unwrap();
        assert_eq!(r.evaluations, 9261);
        assert!(r.best_reward > 0.0);
    }

    #[test]
    fn budget_and_resolution_are_enforced() {
        let cfg = ScenarioConfig::default();
        let ch = mean_channel(&cfg).unwrap();
        assert!(matches!(grid_search(&ch, &cfg, 1.0, 1, DEFAULT_BUDGET), Err(OracleError::Resolution(1))));
        assert!(matches!(grid_search(&ch, &cfg, 1.0, 21, 9260), Err(OracleError::Budget { .. })));
    }
}
