//! Central finite-difference checks of every hand-written backward pass.
//!
//! Each check perturbs every parameter of one network by `±h` and compares
//! the numeric slope of a scalar loss with the analytic gradient. A
//! perturbation that flips the sign of any ReLU pre-activation straddles a
//! kink, where the loss is not differentiable; such parameters are skipped
//! and counted.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::critic::{concat_columns, critic_update, Critic};
use crate::diffusion::{actor_loss, ChainNoise, DiffusionPolicy, DiffusionSchedule};
use crate::moe::gate_loss;
use crate::nn::{Activation, ForwardCache, Gradients, Mlp};
use crate::trainer::ddpg::{ddpg_actor_update, DdpgActor};
use crate::trainer::rng_stream;

pub const STEP: f64 = 1e-5;
/// Denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-6;
pub const NETWORK_TOLERANCE: f64 = 1e-4;
pub const CHAIN_TOLERANCE: f64 = 1e-3;

const STATE_DIM: usize = 18;
const ACTION_DIM: usize = 3;
const BATCH: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: &'static str,
    pub draws: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    /// Parameter perturbations compared.
    pub checked: usize,
    /// Perturbations skipped because they crossed a ReLU kink.
    pub skipped_kinks: usize,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance && self.checked > 0
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Signs of every hidden pre-activation in `caches`.
fn relu_pattern(caches: &[&ForwardCache]) -> Vec<bool> {
    caches
        .iter()
        .flat_map(|c| {
            let pre = c.pre_activations();
            pre[..pre.len() - 1].iter().flat_map(|m| m.iter().map(|&z| z > 0.0))
        })
        .collect()
}

/// Compares `grads` against central differences of `loss` over every
/// parameter of `net`. `loss` returns the scalar and the ReLU pattern.
fn compare<F>(net: &mut Mlp, grads: &Gradients, mut loss: F) -> (f64, usize, usize)
where
    F: FnMut(&Mlp) -> (f64, Vec<bool>),
{
    let (_, base) = loss(net);
    let analytic: Vec<f64> = grads.values().copied().collect();
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0, 0);
    for (i, &a) in analytic.iter().enumerate() {
        let orig = *net.param_mut(i).expect("gradient and parameter counts match");
        *net.param_mut(i).unwrap() = orig + STEP;
        let (up, up_pattern) = loss(net);
        *net.param_mut(i).unwrap() = orig - STEP;
        let (down, down_pattern) = loss(net);
        *net.param_mut(i).unwrap() = orig;
        if up_pattern != base || down_pattern != base {
            skipped += 1;
            continue;
        }
        worst = worst.max(relative_error(a, (up - down) / (2.0 * STEP)));
        checked += 1;
    }
    (worst, checked, skipped)
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(lo..hi))
}

fn schedule() -> DiffusionSchedule {
    DiffusionSchedule::linear(5, 1e-2, 0.7).expect("valid schedule")
}

fn critic_check(rng: &mut ChaCha8Rng) -> (f64, usize, usize) {
    let mut critic = Critic::new(STATE_DIM, ACTION_DIM, &[64, 64], rng);
    let s = uniform(rng, BATCH, STATE_DIM, -1.0, 1.0);
    let a = uniform(rng, BATCH, ACTION_DIM, 0.0, 1.0);
    let targets: Array1<f64> = (0..BATCH).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let (_, grads) = critic_update(&critic, s.view(), a.view(), &targets).expect("shapes match");
    let input = concat_columns(s.view(), a.view());
    compare(&mut critic.net, &grads, |net| {
        let (out, cache) = net.forward(input.view()).expect("shapes match");
        let loss = out.column(0).iter().zip(&targets).map(|(q, t)| (q - t).powi(2)).sum::<f64>() / BATCH as f64;
        (loss, relu_pattern(&[&cache]))
    })
}

/// Plain network check: `sum(c * net(x))` for a random `c`.
fn denoiser_check(rng: &mut ChaCha8Rng) -> (f64, usize, usize) {
    let width = ACTION_DIM + 8 + STATE_DIM;
    let mut net = Mlp::new(&[width, 64, 64, ACTION_DIM], Activation::Relu, Activation::Identity, rng);
    let x = uniform(rng, BATCH, width, -1.0, 1.0);
    let c = uniform(rng, BATCH, ACTION_DIM, -1.0, 1.0);
    let (_, cache) = net.forward(x.view()).expect("shapes match");
    let (grads, _) = net.backward(&cache, c.view()).expect("shapes match");
    compare(&mut net, &grads, |net| {
        let (out, cache) = net.forward(x.view()).expect("shapes match");
        ((&out * &c).sum(), relu_pattern(&[&cache]))
    })
}

fn gate_check(rng: &mut ChaCha8Rng) -> (f64, usize, usize) {
    let mut gate = Mlp::new(&[STATE_DIM, 32, 3], Activation::Relu, Activation::Identity, rng);
    let s = uniform(rng, BATCH, STATE_DIM, -1.0, 1.0);
    let q = uniform(rng, BATCH, 3, -2.0, 2.0);
    let lambda = 0.5;
    let (_, grads) = gate_loss(&gate, s.view(), &q, lambda).expect("shapes match");
    compare(&mut gate, &grads, |net| {
        let (loss, _) = gate_loss(net, s.view(), &q, lambda).expect("shapes match");
        let (_, cache) = net.forward(s.view()).expect("shapes match");
        (loss, relu_pattern(&[&cache]))
    })
}

fn ddpg_check(rng: &mut ChaCha8Rng) -> (f64, usize, usize) {
    let mut actor = DdpgActor::new(STATE_DIM, ACTION_DIM, &[64, 64], rng);
    let critic = Critic::new(STATE_DIM, ACTION_DIM, &[64, 64], rng);
    let s = uniform(rng, BATCH, STATE_DIM, -1.0, 1.0);
    let (_, grads) = ddpg_actor_update(&actor, s.view(), &critic).expect("shapes match");
    compare(&mut actor.net, &grads, |net| {
        let (y, a_cache) = net.forward(s.view()).expect("shapes match");
        let a = y.mapv(|y| 0.5 * (y + 1.0));
        let (q, c_cache) = critic.net.forward(concat_columns(s.view(), a.view()).view()).expect("shapes match");
        (-q.sum() / BATCH as f64, relu_pattern(&[&a_cache, &c_cache]))
    })
}

/// The diffusion actor loss through all reverse steps, noise held fixed.
fn chain_check(rng: &mut ChaCha8Rng) -> (f64, usize, usize) {
    let mut policy = DiffusionPolicy::new(STATE_DIM, ACTION_DIM, 8, &[64, 64], schedule(), rng);
    let critic = Critic::new(STATE_DIM, ACTION_DIM, &[64, 64], rng);
    let s = uniform(rng, BATCH, STATE_DIM, -1.0, 1.0);
    let noise = ChainNoise::sample(BATCH, ACTION_DIM, 5, rng);
    let (_, grads) = actor_loss(&policy, s.view(), &critic, &noise).expect("shapes match");
    let sched = policy.schedule().clone();
    compare(&mut policy.denoiser, &grads, |net| {
        let p = DiffusionPolicy::from_denoiser(net.clone(), STATE_DIM, ACTION_DIM, sched.clone()).expect("same widths");
        let trace = p.chain_forward(s.view(), &noise).expect("shapes match");
        let (q, c_cache) = critic.net.forward(concat_columns(s.view(), trace.action.view()).view()).expect("shapes match");
        let mut caches: Vec<&ForwardCache> = trace.caches().iter().collect();
        caches.push(&c_cache);
        (-q.sum() / BATCH as f64, relu_pattern(&caches))
    })
}

type Check = fn(&mut ChaCha8Rng) -> (f64, usize, usize);

pub const CHECKS: [(&str, f64, Check); 5] = [
    ("critic", NETWORK_TOLERANCE, critic_check),
    ("denoiser", NETWORK_TOLERANCE, denoiser_check),
    ("gate", NETWORK_TOLERANCE, gate_check),
    ("ddpg_actor", NETWORK_TOLERANCE, ddpg_check),
    ("diffusion_chain", CHAIN_TOLERANCE, chain_check),
];

/// Runs every check over `draws` independent parameter draws.
pub fn run_suite(draws: usize, seed: u64) -> Vec<CheckReport> {
    CHECKS
        .iter()
        .enumerate()
        .map(|(i, &(name, tolerance, check))| {
            let mut rng = rng_stream(seed, 100 + i as u64);
            let mut report = CheckReport { name, draws, max_rel_error: 0.0, tolerance, checked: 0, skipped_kinks: 0 };
            for _ in 0..draws {
                let (worst, checked, skipped) = check(&mut rng);
                report.max_rel_error = report.max_rel_error.max(worst);
                report.checked += checked;
                report.skipped_kinks += skipped;
            }
            report
        })
        .collect()
}
