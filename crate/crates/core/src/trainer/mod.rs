//! Off-policy actor-critic training for the three algorithms.
//!
//! Each run draws every random quantity from its own ChaCha stream derived
//! from the run seed, so a run is reproducible bit for bit and two
//! algorithms that share a component (for instance a one-expert mixture and
//! the plain diffusion policy) consume identical randomness for it.

pub mod ddpg;
pub mod replay;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{ChannelError, ScenarioConfig};
use crate::critic::{critic_update, td_target, Critic};
use crate::diffusion::{actor_loss, ChainNoise, DiffusionError, DiffusionPolicy, DiffusionSchedule};
use crate::env::{Env, EnvConfig};
use crate::moe::{moe_actor_update, MoEActor, Routing};
use crate::nn::{Activation, Adam, Mlp, NnError};
use crate::policy::{Algorithm, Checkpoint, Policy};
use crate::report::{RunRecord, EXPERT_COLUMNS};

use ddpg::{ddpg_actor_update, DdpgActor};
use replay::{Batch, ReplayBuffer};

/// Stream ids passed to `set_stream`; one per consumer.
mod stream {
    pub const CRITIC_INIT: u64 = 1;
    pub const ACTOR_INIT: u64 = 2;
    pub const GATE_INIT: u64 = 3;
    pub const ENV: u64 = 4;
    pub const EXPLORE: u64 = 5;
    pub const ACT: u64 = 6;
    pub const REPLAY: u64 = 7;
    pub const CHAIN: u64 = 8;
    pub const TARGET: u64 = 9;
    pub const GATE: u64 = 10;
}

pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid `{key}`: {reason}")]
pub struct ConfigError {
    pub key: &'static str,
    pub reason: String,
}

fn check(ok: bool, key: &'static str, reason: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError { key, reason: reason.into() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub lr_gate: f64,
    pub buffer_capacity: usize,
    /// Steps of uniform random actions before the first update.
    pub warmup_steps: usize,
    /// Gaussian exploration std on normalized actions, decayed linearly
    /// from `explore_start` to `explore_end` over the run.
    pub explore_start: f64,
    pub explore_end: f64,
    pub updates_per_step: usize,
    /// Multiplies rewards inside the critic targets only; logged rewards are
    /// unscaled.
    pub reward_scale: f64,
    pub critic_hidden: Vec<usize>,
    pub actor_hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 2000,
            gamma: 0.95,
            tau: 0.005,
            batch_size: 64,
            lr_actor: 1e-4,
            lr_critic: 1e-3,
            lr_gate: 1e-4,
            buffer_capacity: 100_000,
            warmup_steps: 1000,
            explore_start: 0.2,
            explore_end: 0.02,
            updates_per_step: 1,
            reward_scale: 0.01,
            critic_hidden: vec![64, 64],
            actor_hidden: vec![64, 64],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, episode_length: usize) -> Result<(), ConfigError> {
        check(self.gamma > 0.0 && self.gamma < 1.0, "gamma", "must lie in (0, 1)")?;
        check(self.tau > 0.0 && self.tau <= 1.0, "tau", "must lie in (0, 1]")?;
        check(self.batch_size > 0, "batch_size", "must be positive")?;
        check(self.buffer_capacity > 0, "buffer_capacity", "must be positive")?;
        for (key, lr) in [("lr_actor", self.lr_actor), ("lr_critic", self.lr_critic), ("lr_gate", self.lr_gate)] {
            check(lr.is_finite() && lr > 0.0, key, "must be positive")?;
        }
        check(
            self.warmup_steps <= self.episodes * episode_length,
            "warmup_steps",
            "must not exceed episodes * episode_length",
        )?;
        check(self.explore_start.is_finite() && self.explore_start >= 0.0, "explore_start", "must be >= 0")?;
        check(self.explore_end.is_finite() && self.explore_end >= 0.0, "explore_end", "must be >= 0")?;
        check(self.reward_scale.is_finite() && self.reward_scale > 0.0, "reward_scale", "must be positive")?;
        check(self.critic_hidden.iter().all(|&w| w > 0), "critic_hidden", "widths must be positive")?;
        check(self.actor_hidden.iter().all(|&w| w > 0), "actor_hidden", "widths must be positive")
    }

    /// Exploration std for global step `t` of `total`.
    pub fn explore_std(&self, t: usize, total: usize) -> f64 {
        if total <= 1 {
            return self.explore_start;
        }
        let frac = t as f64 / (total - 1) as f64;
        self.explore_start + (self.explore_end - self.explore_start) * frac.min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self { steps: 5, beta_min: 1e-2, beta_max: 0.7, embed_dim: 8, hidden: vec![64, 64] }
    }
}

impl DiffusionConfig {
    pub fn schedule(&self) -> Result<DiffusionSchedule, DiffusionError> {
        DiffusionSchedule::linear(self.steps, self.beta_min, self.beta_max)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        check(self.steps > 0, "steps", "must be positive")?;
        check(self.embed_dim % 2 == 0, "embed_dim", "must be even")?;
        check(self.hidden.iter().all(|&w| w > 0), "hidden", "widths must be positive")?;
        self.schedule().map(|_| ()).map_err(|e| ConfigError { key: "beta_max", reason: e.to_string() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MoeConfig {
    pub experts: usize,
    pub load_balance: f64,
    pub gate_hidden: Vec<usize>,
    /// Pins every state to this expert instead of the gate's choice.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_expert: Option<usize>,
}

impl Default for MoeConfig {
    fn default() -> Self {
        Self { experts: 3, load_balance: 0.01, gate_hidden: vec![32], fixed_expert: None }
    }
}

impl MoeConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check(
            (1..=EXPERT_COLUMNS).contains(&self.experts),
            "experts",
            &format!("must lie in 1..={EXPERT_COLUMNS} (one CSV column per expert)"),
        )?;
        check(self.load_balance.is_finite() && self.load_balance >= 0.0, "load_balance", "must be >= 0")?;
        check(self.gate_hidden.iter().all(|&w| w > 0), "gate_hidden", "widths must be positive")?;
        check(
            self.fixed_expert.is_none_or(|k| k < self.experts),
            "fixed_expert",
            "must be below the expert count",
        )
    }

    pub fn routing(&self) -> Routing {
        self.fixed_expert.map_or(Routing::Gate, Routing::Fixed)
    }
}

/// Everything that defines one training run apart from algorithm and seed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Setup {
    pub scenario: ScenarioConfig,
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub diffusion: DiffusionConfig,
    pub moe: MoeConfig,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("run diverged (seed {seed}, step {step}): non-finite {what}")]
    Diverged { seed: u64, step: usize, what: &'static str },
}

impl Setup {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.scenario.validate()?;
        check(self.env.episode_length > 0, "episode_length", "must be positive")?;
        check(self.env.gain_log_scale > 0.0, "gain_log_scale", "must be positive")?;
        check(self.env.reward_weight.is_finite() && self.env.reward_weight >= 0.0, "reward_weight", "must be >= 0")?;
        self.train.validate(self.env.episode_length)?;
        self.diffusion.validate()?;
        self.moe.validate()?;
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.train.episodes * self.env.episode_length
    }

    /// Freshly initialized policy and critic for `algorithm`.
    pub fn init(&self, algorithm: Algorithm, seed: u64) -> Result<Checkpoint, TrainError> {
        let sd = crate::env::state_dim(&self.scenario);
        let ad = self.scenario.n_aps();
        let critic = Critic::new(sd, ad, &self.train.critic_hidden, &mut rng_stream(seed, stream::CRITIC_INIT));
        let mut actor_rng = rng_stream(seed, stream::ACTOR_INIT);
        let diffusion = |rng: &mut ChaCha8Rng| -> Result<DiffusionPolicy, TrainError> {
            let d = &self.diffusion;
            Ok(DiffusionPolicy::new(sd, ad, d.embed_dim, &d.hidden, d.schedule()?, rng))
        };
        let policy = match algorithm {
            Algorithm::Ddpg => Policy::Ddpg(DdpgActor::new(sd, ad, &self.train.actor_hidden, &mut actor_rng)),
            Algorithm::Gdm => Policy::Gdm(diffusion(&mut actor_rng)?),
            Algorithm::MoeGdm => {
                let experts = (0..self.moe.experts).map(|_| diffusion(&mut actor_rng)).collect::<Result<Vec<_>, _>>()?;
                let mut widths = vec![sd];
                widths.extend_from_slice(&self.moe.gate_hidden);
                widths.push(self.moe.experts);
                let gate = Mlp::new(&widths, Activation::Relu, Activation::Identity, &mut rng_stream(seed, stream::GATE_INIT));
                Policy::Moe(MoEActor::new(gate, experts, self.moe.routing())?)
            }
        };
        Ok(Checkpoint { policy, critic })
    }
}

/// Online and target networks with their optimizers.
#[derive(Debug, Clone)]
pub struct Agent {
    pub policy: Policy,
    pub critic: Critic,
    target_policy: Policy,
    target_critic: Critic,
    critic_opt: Adam,
    /// One per policy network, in [`Policy::nets`] order.
    actor_opts: Vec<Adam>,
    gamma: f64,
    tau: f64,
    reward_scale: f64,
    load_balance: f64,
}

/// Diagnostics from one [`Agent::update`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub gate_loss: f64,
}

/// Random streams consumed by updates.
pub struct UpdateRngs {
    pub target: ChaCha8Rng,
    pub chain: ChaCha8Rng,
    pub gate: ChaCha8Rng,
}

impl UpdateRngs {
    pub fn new(seed: u64) -> Self {
        Self {
            target: rng_stream(seed, stream::TARGET),
            chain: rng_stream(seed, stream::CHAIN),
            gate: rng_stream(seed, stream::GATE),
        }
    }
}

impl Agent {
    pub fn new(init: Checkpoint, train: &TrainConfig, load_balance: f64) -> Self {
        let critic_opt = Adam::new(&init.critic.net, train.lr_critic);
        let actor_opts = init
            .policy
            .nets()
            .into_iter()
            .map(|(name, net)| Adam::new(net, if name == "gate" { train.lr_gate } else { train.lr_actor }))
            .collect();
        Self {
            target_policy: init.policy.clone(),
            target_critic: init.critic.clone(),
            policy: init.policy,
            critic: init.critic,
            critic_opt,
            actor_opts,
            gamma: train.gamma,
            tau: train.tau,
            reward_scale: train.reward_scale,
            load_balance,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint { policy: self.policy.clone(), critic: self.critic.clone() }
    }

    pub fn all_finite(&self) -> bool {
        self.policy.all_finite() && self.critic.net.all_finite()
    }

    /// Critic step, actor (and gate) step, then soft target updates.
    pub fn update(&mut self, batch: &Batch, rngs: &mut UpdateRngs) -> Result<UpdateStats, TrainError> {
        let next_actions = self.target_policy.act_batch(batch.next_states.view(), &mut rngs.target)?;
        let q_next = self.target_critic.q_values(batch.next_states.view(), next_actions.view())?;
        let targets: Array1<f64> = (0..batch.rewards.len())
            .map(|i| td_target(batch.rewards[i] * self.reward_scale, q_next[i], batch.dones[i], self.gamma))
            .collect();
        let (critic_loss, g) = critic_update(&self.critic, batch.states.view(), batch.actions.view(), &targets)?;
        self.critic_opt.step(&mut self.critic.net, &g)?;

        let states = batch.states.view();
        let (actor_loss_value, gate_loss_value) = match &mut self.policy {
            Policy::Ddpg(actor) => {
                let (loss, g) = ddpg_actor_update(actor, states, &self.critic)?;
                self.actor_opts[0].step(&mut actor.net, &g)?;
                (loss, 0.0)
            }
            Policy::Gdm(p) => {
                let noise = ChainNoise::sample(states.nrows(), p.action_dim(), p.schedule().steps(), &mut rngs.chain);
                let (loss, g) = actor_loss(p, states, &self.critic, &noise)?;
                self.actor_opts[0].step(&mut p.denoiser, &g)?;
                (loss, 0.0)
            }
            Policy::Moe(m) => {
                let (ad, steps) = (m.action_dim(), m.experts[0].schedule().steps());
                let expert_noise = ChainNoise::sample(states.nrows(), ad, steps, &mut rngs.chain);
                let gate_noise = ChainNoise::sample(states.nrows(), ad, steps, &mut rngs.gate);
                let out = moe_actor_update(m, states, &self.critic, &expert_noise, &gate_noise, self.load_balance)?;
                self.actor_opts[0].step(&mut m.gate, &out.gate)?;
                for (k, g) in out.experts.iter().enumerate() {
                    if let Some(g) = g {
                        self.actor_opts[k + 1].step(&mut m.experts[k].denoiser, g)?;
                    }
                }
                (out.actor_loss, out.gate_loss)
            }
        };

        crate::nn::soft_update(&mut self.target_critic.net, &self.critic.net, self.tau)?;
        self.target_policy.soft_update_from(&self.policy, self.tau)?;
        Ok(UpdateStats { critic_loss, actor_loss: actor_loss_value, gate_loss: gate_loss_value })
    }
}

/// Counters gathered over a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrainStats {
    pub env_steps: u64,
    /// Actions chosen by the policy (after warmup).
    pub policy_actions: u64,
    /// Denoiser row evaluations spent choosing those actions; gate passes
    /// are not included.
    pub act_denoiser_evaluations: u64,
    pub updates: u64,
    pub clamp_count: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<RunRecord>,
    pub checkpoint: Checkpoint,
    pub stats: TrainStats,
}

/// Trains `algorithm` with `seed`, calling `on_record` after each episode.
pub fn train(
    algorithm: Algorithm,
    seed: u64,
    setup: &Setup,
    mut on_record: impl FnMut(&RunRecord),
) -> Result<TrainOutcome, TrainError> {
    setup.validate()?;
    let cfg = &setup.train;
    let mut agent = Agent::new(setup.init(algorithm, seed)?, cfg, setup.moe.load_balance);
    let mut env = Env::new(setup.scenario.clone(), setup.env.clone())?;
    let ad = env.n_aps();
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity, env.state_dim(), ad);

    let mut env_rng = rng_stream(seed, stream::ENV);
    let mut explore_rng = rng_stream(seed, stream::EXPLORE);
    let mut act_rng = rng_stream(seed, stream::ACT);
    let mut replay_rng = rng_stream(seed, stream::REPLAY);
    let mut update_rngs = UpdateRngs::new(seed);

    let total = setup.total_steps();
    let mut stats = TrainStats::default();
    let mut records = Vec::with_capacity(cfg.episodes);
    let mut t = 0usize;
    let diverged = |step, what| TrainError::Diverged { seed, step, what };

    for episode in 0..cfg.episodes {
        let mut state = env.reset(&mut env_rng);
        let (mut reward_sum, mut sr_sum, mut see_sum, mut n) = (0.0, 0.0, 0.0, 0usize);
        let mut histogram = [0u64; EXPERT_COLUMNS];
        loop {
            let action: Vec<f64> = if t < cfg.warmup_steps {
                (0..ad).map(|_| explore_rng.gen::<f64>()).collect()
            } else {
                let before = agent.policy.denoiser_evaluations();
                let (a, expert) = agent.policy.act(state.features(), &mut act_rng)?;
                stats.act_denoiser_evaluations += agent.policy.denoiser_evaluations() - before;
                stats.policy_actions += 1;
                if let Some(k) = expert {
                    histogram[k] += 1;
                }
                let std = cfg.explore_std(t, total);
                a.into_iter()
                    .map(|x| (x + std * explore_rng.sample::<f64, _>(StandardNormal)).clamp(0.0, 1.0))
                    .collect()
            };
            if action.iter().any(|a| !a.is_finite()) {
                return Err(diverged(t, "action"));
            }
            let out = env.step(&action, &mut env_rng);
            if !out.reward.is_finite() {
                return Err(diverged(t, "reward"));
            }
            buffer.push(state.features(), &action, out.reward, out.next_state.features(), out.done);
            reward_sum += out.reward;
            sr_sum += out.metrics.sr_sum();
            see_sum += out.metrics.see_sum();
            n += 1;
            stats.env_steps += 1;

            if t >= cfg.warmup_steps {
                for _ in 0..cfg.updates_per_step {
                    let batch = buffer.sample(cfg.batch_size, &mut replay_rng);
                    let u = agent.update(&batch, &mut update_rngs)?;
                    stats.updates += 1;
                    if !(u.critic_loss.is_finite() && u.actor_loss.is_finite() && u.gate_loss.is_finite()) {
                        return Err(diverged(t, "loss"));
                    }
                }
                if !agent.all_finite() {
                    return Err(diverged(t, "parameter"));
                }
            }
            t += 1;
            state = out.next_state;
            if out.done {
                break;
            }
        }
        let record = RunRecord {
            algorithm: algorithm.name().to_string(),
            seed,
            episode,
            mean_reward: reward_sum / n as f64,
            mean_sr_sum: sr_sum / n as f64,
            mean_see_sum: see_sum / n as f64,
            expert_histogram: histogram,
        };
        on_record(&record);
        records.push(record);
    }
    stats.clamp_count = env.clamp_count();
    Ok(TrainOutcome { records, checkpoint: agent.checkpoint(), stats })
}
