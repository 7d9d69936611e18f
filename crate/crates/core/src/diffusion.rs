//! Conditional denoising-diffusion policy.
//!
//! An action is generated by starting from standard normal noise and
//! running the reverse chain `T, T-1, ..., 1` with a state-conditioned noise
//! predictor. The unconstrained result `x0` is squashed into the unit box by
//! `(tanh(x0) + 1) / 2`. Training differentiates the whole reparameterized
//! chain: with the noise draws held fixed the action is a deterministic
//! function of the denoiser parameters.

use std::cell::Cell;

use ndarray::{s, Array2, ArrayView2, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::critic::QFunction;
use crate::nn::{Activation, ForwardCache, Gradients, Mlp, NnError};

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("diffusion step {t} outside 1..={steps}")]
    StepOutOfRange { t: usize, steps: usize },
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Noise levels `beta_1..beta_T` and their cumulative products.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    /// Betas spaced linearly from `beta_min` (t = 1) to `beta_max` (t = T).
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self, DiffusionError> {
        if steps == 0 {
            return Err(DiffusionError::Schedule("at least one step is required".into()));
        }
        if steps > 1 && !(beta_min < beta_max) {
            return Err(DiffusionError::Schedule("beta_min must be below beta_max".into()));
        }
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_min
                } else {
                    beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    /// Schedule from explicit betas, each in `(0, 1)` and non-decreasing.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self, DiffusionError> {
        if betas.is_empty() {
            return Err(DiffusionError::Schedule("at least one step is required".into()));
        }
        if let Some(b) = betas.iter().find(|&&b| !(0.0 < b && b < 1.0)) {
            return Err(DiffusionError::Schedule(format!("betas must lie in (0, 1), got {b}")));
        }
        if betas.windows(2).any(|w| w[1] < w[0]) {
            return Err(DiffusionError::Schedule("betas must be non-decreasing".into()));
        }
        let alpha_bars = betas
            .iter()
            .scan(1.0, |acc, b| {
                *acc *= 1.0 - b;
                Some(*acc)
            })
            .collect();
        Ok(Self { betas, alpha_bars })
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check(&self, t: usize) -> Result<(), DiffusionError> {
        if t == 0 || t > self.steps() {
            return Err(DiffusionError::StepOutOfRange { t, steps: self.steps() });
        }
        Ok(())
    }

    /// `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    /// Cumulative product; `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// Coefficients of `x_{t-1} = c_x * (x_t - c_eps * eps_hat) + sigma * z`.
    fn reverse_coefficients(&self, t: usize) -> (f64, f64, f64) {
        let c_x = 1.0 / self.alpha(t).sqrt();
        let c_eps = self.beta(t) / (1.0 - self.alpha_bar(t)).sqrt();
        let sigma = if t > 1 { self.beta(t).sqrt() } else { 0.0 };
        (c_x, c_eps, sigma)
    }
}

/// `x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps`.
pub fn forward_diffuse(x0: &[f64], t: usize, eps: &[f64], sched: &DiffusionSchedule) -> Result<Vec<f64>, DiffusionError> {
    sched.check(t)?;
    let ab = sched.alpha_bar(t);
    Ok(x0.iter().zip(eps).map(|(x, e)| ab.sqrt() * x + (1.0 - ab).sqrt() * e).collect())
}

/// One reverse update given the predicted noise and the fresh Gaussian
/// draw `z` (ignored at `t = 1`).
pub fn reverse_update(x_t: &[f64], eps_hat: &[f64], z: &[f64], t: usize, sched: &DiffusionSchedule) -> Result<Vec<f64>, DiffusionError> {
    sched.check(t)?;
    let (c_x, c_eps, sigma) = sched.reverse_coefficients(t);
    Ok(x_t
        .iter()
        .zip(eps_hat)
        .zip(z)
        .map(|((x, e), z)| c_x * (x - c_eps * e) + sigma * z)
        .collect())
}

/// Sinusoidal features of `t / T`: `sin(pi 2^i tau)`, `cos(pi 2^i tau)`
/// pairs.
pub fn time_embedding(t: usize, steps: usize, dim: usize) -> Vec<f64> {
    let tau = t as f64 / steps as f64;
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim.div_ceil(2) {
        let w = std::f64::consts::PI * f64::powi(2.0, i as i32);
        out.push((w * tau).sin());
        if out.len() < dim {
            out.push((w * tau).cos());
        }
    }
    out
}

/// `(tanh(x) + 1) / 2`, elementwise.
pub fn squash(x: f64) -> f64 {
    0.5 * (x.tanh() + 1.0)
}

/// Every Gaussian draw one batch of reverse chains consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainNoise {
    /// Starting point `x_T`, `(batch, action_dim)`.
    pub x_start: Array2<f64>,
    /// `z[t - 2]` is added at step `t`, for `t` in `2..=T`.
    pub z: Vec<Array2<f64>>,
}

impl ChainNoise {
    pub fn sample<R: Rng + ?Sized>(batch: usize, action_dim: usize, steps: usize, rng: &mut R) -> Self {
        let mut draw = || Array2::from_shape_simple_fn((batch, action_dim), || rng.sample::<f64, _>(StandardNormal));
        let x_start = draw();
        let z = (2..=steps).map(|_| draw()).collect();
        Self { x_start, z }
    }

    pub fn batch(&self) -> usize {
        self.x_start.nrows()
    }

    /// Rows `rows` of every draw, in the given order.
    pub fn select(&self, rows: &[usize]) -> Self {
        let pick = |m: &Array2<f64>| m.select(ndarray::Axis(0), rows);
        Self { x_start: pick(&self.x_start), z: self.z.iter().map(pick).collect() }
    }
}

/// Caches from one differentiable pass through the reverse chain.
#[derive(Debug, Clone)]
pub struct ChainTrace {
    /// Denoiser caches, in execution order (t = T first).
    caches: Vec<ForwardCache>,
    /// Pre-squash final sample.
    pub x0: Array2<f64>,
    /// Squashed action in `[0, 1]`.
    pub action: Array2<f64>,
}

impl ChainTrace {
    pub fn caches(&self) -> &[ForwardCache] {
        &self.caches
    }
}

/// A state-conditioned noise predictor plus its schedule.
#[derive(Debug, Clone)]
pub struct DiffusionPolicy {
    pub denoiser: Mlp,
    schedule: DiffusionSchedule,
    state_dim: usize,
    action_dim: usize,
    embeddings: Vec<Vec<f64>>,
    /// Denoiser row evaluations since construction.
    evaluations: Cell<u64>,
}

impl DiffusionPolicy {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        embed_dim: usize,
        hidden: &[usize],
        schedule: DiffusionSchedule,
        rng: &mut R,
    ) -> Self {
        let mut widths = vec![action_dim + embed_dim + state_dim];
        widths.extend_from_slice(hidden);
        widths.push(action_dim);
        let denoiser = Mlp::new(&widths, Activation::Relu, Activation::Identity, rng);
        Self::from_denoiser(denoiser, state_dim, action_dim, schedule).expect("widths built to match")
    }

    /// Wraps an existing denoiser; the time-embedding width is whatever
    /// remains of its input after the action and state.
    pub fn from_denoiser(denoiser: Mlp, state_dim: usize, action_dim: usize, schedule: DiffusionSchedule) -> Result<Self, NnError> {
        if denoiser.output_dim() != action_dim || denoiser.input_dim() < action_dim + state_dim {
            return Err(NnError::Shape(format!(
                "denoiser {:?} does not fit action {action_dim} / state {state_dim}",
                denoiser.widths()
            )));
        }
        let embed_dim = denoiser.input_dim() - action_dim - state_dim;
        let steps = schedule.steps();
        let embeddings = (1..=steps).map(|t| time_embedding(t, steps, embed_dim)).collect();
        Ok(Self { denoiser, schedule, state_dim, action_dim, embeddings, evaluations: Cell::new(0) })
    }

    pub fn schedule(&self) -> &DiffusionSchedule {
        &self.schedule
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.denoiser.input_dim() - self.action_dim - self.state_dim
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations.get()
    }

    fn denoiser_input(&self, x_t: &Array2<f64>, t: usize, states: ArrayView2<f64>) -> Array2<f64> {
        let (a, e) = (self.action_dim, self.embed_dim());
        let mut input = Array2::zeros((x_t.nrows(), self.denoiser.input_dim()));
        input.slice_mut(s![.., ..a]).assign(x_t);
        let emb = ndarray::ArrayView1::from(&self.embeddings[t - 1]);
        input.slice_mut(s![.., a..a + e]).assign(&emb);
        input.slice_mut(s![.., a + e..]).assign(&states);
        input
    }

    fn check_states(&self, states: &ArrayView2<f64>, batch: usize) -> Result<(), NnError> {
        if states.ncols() != self.state_dim || states.nrows() != batch {
            return Err(NnError::Shape(format!(
                "states {:?} do not match batch {batch} x state {}",
                states.dim(),
                self.state_dim
            )));
        }
        Ok(())
    }

    /// Predicted noise `eps_hat(x_t, t, s)`.
    pub fn predict_noise(&self, x_t: &Array2<f64>, t: usize, states: ArrayView2<f64>) -> Result<Array2<f64>, DiffusionError> {
        self.schedule.check(t)?;
        self.check_states(&states, x_t.nrows())?;
        self.evaluations.set(self.evaluations.get() + x_t.nrows() as u64);
        Ok(self.denoiser.predict(self.denoiser_input(x_t, t, states).view())?)
    }

    /// One stochastic reverse step `x_t -> x_{t-1}` for a batch.
    pub fn reverse_step<R: Rng + ?Sized>(
        &self,
        x_t: &Array2<f64>,
        t: usize,
        states: ArrayView2<f64>,
        rng: &mut R,
    ) -> Result<Array2<f64>, DiffusionError> {
        let z = if t > 1 {
            Array2::from_shape_simple_fn(x_t.raw_dim(), || rng.sample::<f64, _>(StandardNormal))
        } else {
            Array2::zeros(x_t.raw_dim())
        };
        self.reverse_step_with(x_t, t, states, &z)
    }

    fn reverse_step_with(&self, x_t: &Array2<f64>, t: usize, states: ArrayView2<f64>, z: &Array2<f64>) -> Result<Array2<f64>, DiffusionError> {
        let eps_hat = self.predict_noise(x_t, t, states)?;
        let (c_x, c_eps, sigma) = self.schedule.reverse_coefficients(t);
        let mut out = Array2::zeros(x_t.raw_dim());
        Zip::from(&mut out).and(x_t).and(&eps_hat).and(z).for_each(|o, &x, &e, &z| {
            *o = c_x * (x - c_eps * e) + sigma * z;
        });
        Ok(out)
    }

    /// Runs the chain with fixed noise and returns the pre-squash `x0`.
    pub fn denoise_with(&self, states: ArrayView2<f64>, noise: &ChainNoise) -> Result<Array2<f64>, DiffusionError> {
        let steps = self.schedule.steps();
        let mut x = noise.x_start.clone();
        let zeros = Array2::zeros(x.raw_dim());
        for t in (1..=steps).rev() {
            let z = if t > 1 { &noise.z[t - 2] } else { &zeros };
            x = self.reverse_step_with(&x, t, states, z)?;
        }
        Ok(x)
    }

    /// Squashed actions for a batch of states under fixed noise.
    pub fn sample_with(&self, states: ArrayView2<f64>, noise: &ChainNoise) -> Result<Array2<f64>, DiffusionError> {
        Ok(self.denoise_with(states, noise)?.mapv(squash))
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, states: ArrayView2<f64>, rng: &mut R) -> Result<Array2<f64>, DiffusionError> {
        let noise = ChainNoise::sample(states.nrows(), self.action_dim, self.schedule.steps(), rng);
        self.sample_with(states, &noise)
    }

    /// One action in `[0, 1]^action_dim` for a single state.
    pub fn sample_action<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<Vec<f64>, DiffusionError> {
        let states = ArrayView2::from_shape((1, state.len()), state).map_err(|e| NnError::Shape(e.to_string()))?;
        Ok(self.sample_batch(states, rng)?.into_raw_vec_and_offset().0)
    }

    /// Differentiable pass through the chain under fixed noise.
    pub fn chain_forward(&self, states: ArrayView2<f64>, noise: &ChainNoise) -> Result<ChainTrace, DiffusionError> {
        let steps = self.schedule.steps();
        self.check_states(&states, noise.batch())?;
        let mut caches = Vec::with_capacity(steps);
        let mut x = noise.x_start.clone();
        for t in (1..=steps).rev() {
            let (eps_hat, cache) = self.denoiser.forward(self.denoiser_input(&x, t, states).view())?;
            self.evaluations.set(self.evaluations.get() + x.nrows() as u64);
            let (c_x, c_eps, sigma) = self.schedule.reverse_coefficients(t);
            let mut next = &x - &(eps_hat * c_eps);
            next *= c_x;
            if t > 1 {
                next.scaled_add(sigma, &noise.z[t - 2]);
            }
            caches.push(cache);
            x = next;
        }
        let action = x.mapv(squash);
        Ok(ChainTrace { caches, x0: x, action })
    }

    /// Parameter gradients of `sum(action * grad_action)` through the chain.
    pub fn chain_backward(&self, trace: &ChainTrace, grad_action: ArrayView2<f64>) -> Result<Gradients, DiffusionError> {
        let steps = self.schedule.steps();
        if trace.caches.len() != steps || grad_action.dim() != trace.action.dim() {
            return Err(NnError::Shape("trace does not match this policy".into()).into());
        }
        // d squash / d x0 = (1 - tanh^2) / 2 = 2 a (1 - a).
        let mut dx = Array2::zeros(trace.action.raw_dim());
        Zip::from(&mut dx).and(&grad_action).and(&trace.action).for_each(|d, &g, &a| {
            *d = g * 2.0 * a * (1.0 - a);
        });
        let mut grads = Gradients::zeros_like(&self.denoiser);
        // Caches run t = T..1; walk them backwards, t = 1 first.
        for (cache, t) in trace.caches.iter().rev().zip(1..=steps) {
            let (c_x, c_eps, _) = self.schedule.reverse_coefficients(t);
            let d_eps = &dx * (-c_x * c_eps);
            let (g, d_in) = self.denoiser.backward(cache, d_eps.view())?;
            grads.add_assign(&g);
            dx *= c_x;
            dx += &d_in.slice(s![.., ..self.action_dim]);
        }
        Ok(grads)
    }
}

/// `-mean Q(s, a(s))` with `a` drawn through the reparameterized chain, and
/// its gradient with respect to the denoiser parameters.
pub fn actor_loss<Q: QFunction + ?Sized>(
    policy: &DiffusionPolicy,
    states: ArrayView2<f64>,
    critic: &Q,
    noise: &ChainNoise,
) -> Result<(f64, Gradients), DiffusionError> {
    let n = states.nrows() as f64;
    let trace = policy.chain_forward(states, noise)?;
    let (q, dq_da) = critic.value_and_action_grad(states, trace.action.view())?;
    let loss = -q.sum() / n;
    let grad_action = dq_da * (-1.0 / n);
    let grads = policy.chain_backward(&trace, grad_action.view())?;
    Ok((loss, grads))
}
