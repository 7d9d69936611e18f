//! The friendly-jamming environment.
//!
//! State layout: `n_aps * n_receivers` normalized log-gains (AP-major,
//! receivers users-then-eavesdroppers) followed by the previous normalized
//! action. Learners only ever see actions in `[0, 1]^n_aps`; watts exist
//! only inside [`Env::step`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{mean_channel, realize_channel, ChannelError, ChannelRealization, Fading, ScenarioConfig};
use crate::secrecy::{reward, PowerAllocation, SecrecyMetrics};

/// Gains below this are mapped to it before taking the logarithm.
pub const GAIN_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub episode_length: usize,
    /// Hold the channel at its large-scale mean for every step.
    pub freeze_channel: bool,
    /// Center of the log10-gain feature map.
    pub gain_log_mean: f64,
    /// Scale of the log10-gain feature map.
    pub gain_log_scale: f64,
    pub reward_weight: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        // Default-geometry path loss spans log10 gains from -6 (10 m) to
        // about -8.9 (92 m).
        Self {
            episode_length: 100,
            freeze_channel: false,
            gain_log_mean: -7.5,
            gain_log_scale: 1.5,
            reward_weight: 1.0,
        }
    }
}

/// Observation handed to the learners.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    features: Vec<f64>,
    n_gain_features: usize,
    pub step_index: usize,
}

impl EnvState {
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn normalized_gains(&self) -> &[f64] {
        &self.features[..self.n_gain_features]
    }

    pub fn prev_action(&self) -> &[f64] {
        &self.features[self.n_gain_features..]
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }
}

/// Result of one [`Env::step`].
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub next_state: EnvState,
    pub reward: f64,
    pub metrics: SecrecyMetrics,
    pub done: bool,
}

/// One stored experience.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

pub fn state_dim(scenario: &ScenarioConfig) -> usize {
    scenario.n_aps() * scenario.n_receivers() + scenario.n_aps()
}

/// `(log10(max(g, floor)) - mean) / scale` for every gain, AP-major.
pub fn normalize_gains(ch: &ChannelRealization, mean: f64, scale: f64) -> Vec<f64> {
    ch.gains().iter().map(|&g| (g.max(GAIN_FLOOR).log10() - mean) / scale).collect()
}

#[derive(Debug, Clone)]
pub struct Env {
    scenario: ScenarioConfig,
    cfg: EnvConfig,
    channel: ChannelRealization,
    state: EnvState,
    clamp_count: u64,
}

impl Env {
    pub fn new(scenario: ScenarioConfig, cfg: EnvConfig) -> Result<Self, ChannelError> {
        scenario.validate()?;
        let channel = mean_channel(&scenario)?;
        let n = scenario.n_aps();
        let mut env = Self {
            state: EnvState { features: Vec::new(), n_gain_features: 0, step_index: 0 },
            scenario,
            cfg,
            channel,
            clamp_count: 0,
        };
        env.state = env.observe(&vec![0.0; n], 0);
        Ok(env)
    }

    pub fn scenario(&self) -> &ScenarioConfig {
        &self.scenario
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn channel(&self) -> &ChannelRealization {
        &self.channel
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn n_aps(&self) -> usize {
        self.scenario.n_aps()
    }

    pub fn state_dim(&self) -> usize {
        state_dim(&self.scenario)
    }

    /// Number of action components clamped into `[0, 1]` so far.
    pub fn clamp_count(&self) -> u64 {
        self.clamp_count
    }

    /// Replaces the current channel. Used to evaluate a policy on a fixed
    /// realization.
    pub fn set_channel(&mut self, channel: ChannelRealization) {
        assert_eq!(channel.gains().dim(), self.channel.gains().dim());
        self.channel = channel;
        let prev = self.state.prev_action().to_vec();
        self.state = self.observe(&prev, self.state.step_index);
    }

    fn draw_channel<R: Rng + ?Sized>(&self, rng: &mut R) -> ChannelRealization {
        if self.cfg.freeze_channel {
            return self.channel.clone();
        }
        // Geometry was validated in `new`.
        realize_channel(&self.scenario, Fading::Rayleigh, rng).expect("validated scenario")
    }

    fn observe(&self, prev_action: &[f64], step_index: usize) -> EnvState {
        let mut features = normalize_gains(&self.channel, self.cfg.gain_log_mean, self.cfg.gain_log_scale);
        let n_gain_features = features.len();
        features.extend_from_slice(prev_action);
        EnvState { features, n_gain_features, step_index }
    }

    /// Starts an episode on a fresh channel with a zero previous action.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> EnvState {
        self.channel = self.draw_channel(rng);
        self.state = self.observe(&vec![0.0; self.n_aps()], 0);
        self.state.clone()
    }

    /// Evaluates `action` on the current channel, then redraws the fading
    /// for the next state.
    pub fn step<R: Rng + ?Sized>(&mut self, action: &[f64], rng: &mut R) -> StepOutcome {
        assert_eq!(action.len(), self.n_aps(), "action length must equal the AP count");
        let mut clamped = Vec::with_capacity(action.len());
        for &a in action {
            let c = if a.is_nan() { 0.0 } else { a.clamp(0.0, 1.0) };
            if c != a {
                self.clamp_count += 1;
            }
            clamped.push(c);
        }
        let powers = PowerAllocation::from_normalized(&clamped, &self.scenario);
        let metrics = reward(&powers, &self.channel, &self.scenario, self.cfg.reward_weight);
        let step_index = self.state.step_index;
        let done = step_index + 1 >= self.cfg.episode_length;
        self.channel = self.draw_channel(rng);
        self.state = self.observe(&clamped, step_index + 1);
        StepOutcome { next_state: self.state.clone(), reward: metrics.reward, metrics, done }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn env(cfg: EnvConfig) -> Env {
        Env::new(ScenarioConfig::default(), cfg).unwrap()
    }

    #[test]
    fn default_state_is_eighteen_wide() {
        let mut e = env(EnvConfig::default());
        let s = e.reset(&mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(s.dim(), 18);
        assert_eq!(e.state_dim(), 18);
        assert_eq!(s.prev_action(), &[0.0; 3]);
        assert_eq!(s.step_index, 0);
    }

    #[test]
    fn reset_is_deterministic() {
        let mut e = env(EnvConfig::default());
        let a = e.reset(&mut ChaCha8Rng::seed_from_u64(4));
        let b = e.reset(&mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
    }

    #[test]
    fn frozen_channel_features_are_normalized_path_loss() {
        let cfg = EnvConfig { freeze_channel: true, ..EnvConfig::default() };
        let mut e = env(cfg.clone());
        let s = e.reset(&mut ChaCha8Rng::seed_from_u64(1));
        let pl = mean_channel(e.scenario()).unwrap();
        assert_eq!(s.normalized_gains(), normalize_gains(&pl, cfg.gain_log_mean, cfg.gain_log_scale).as_slice());
    }

    #[test]
    fn normalization_rules() {
        use ndarray::array;
        let ch = ChannelRealization::from_gains(array![[1e-7, 1e-6, 0.0]]);
        let f = normalize_gains(&ch, -7.0, 1.0);
        assert_eq!(f[0], 0.0);
        assert!((f[1] - f[0] - 1.0).abs() < 1e-12);
        assert_eq!(f[2], -15.0 + 7.0);
        let f = normalize_gains(&ch, -7.0, 2.0);
        assert!((f[1] - f[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_action_zero_reward() {
        let mut e = env(EnvConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        e.reset(&mut rng);
        assert_eq!(e.step(&[0.0; 3], &mut rng).reward, 0.0);
    }

    #[test]
    fn reward_uses_the_observed_channel() {
        let mut e = env(EnvConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        e.reset(&mut rng);
        let observed = e.channel().clone();
        let out = e.step(&[1.0, 1.0, 1.0], &mut rng);
        let p = PowerAllocation::uniform(e.scenario().p_max, 3);
        assert_eq!(out.reward, reward(&p, &observed, e.scenario(), 1.0).reward);
        assert_ne!(e.channel(), &observed);
        assert_eq!(out.next_state.prev_action(), &[1.0; 3]);
    }

    #[test]
    fn episode_horizon() {
        let cfg = EnvConfig { episode_length: 5, ..EnvConfig::default() };
        let mut e = env(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        e.reset(&mut rng);
        let dones: Vec<bool> = (0..5).map(|_| e.step(&[0.5; 3], &mut rng).done).collect();
        assert_eq!(dones, vec![false, false, false, false, true]);
    }

    #[test]
    fn out_of_range_actions_are_clamped_and_counted() {
        let mut e = env(EnvConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        e.reset(&mut rng);
        let out = e.step(&[1.5, -0.2, 0.5], &mut rng);
        assert_eq!(e.clamp_count(), 2);
        assert_eq!(out.next_state.prev_action(), &[1.0, 0.0, 0.5]);
        e.step(&[0.0, 1.0, 0.3], &mut rng);
        assert_eq!(e.clamp_count(), 2);
    }

    #[test]
    fn step_is_deterministic() {
        let run = || {
            let mut e = env(EnvConfig::default());
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            e.reset(&mut rng);
            (0..10).map(|i| e.step(&[0.1 * i as f64, 0.3, 0.9], &mut rng).reward).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
