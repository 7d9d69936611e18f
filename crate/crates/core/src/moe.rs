//! Mixture-of-experts diffusion actor with top-1 routing.
//!
//! A gate network maps the state to `K` logits; the state is handed to the
//! single expert with the largest logit (ties go to the lowest index). Each
//! expert is an independent [`DiffusionPolicy`]; all of them share one
//! schedule.
//!
//! Training splits into two parts. Each expert receives the diffusion actor
//! loss only on the states routed to it. The gate minimizes
//! `-mean_s sum_k softmax(logits(s))_k * Q(s, a_k)` where every expert
//! proposes `a_k` under common per-state noise and the proposals are held
//! constant, plus a load-balance penalty `lambda * sum_k (f_k - 1/K)^2` on
//! the batch-mean gate probabilities `f_k`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::critic::QFunction;
use crate::diffusion::{actor_loss, ChainNoise, DiffusionError, DiffusionPolicy};
use crate::nn::{Gradients, Mlp, NnError};

/// How states are assigned to experts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Routing {
    /// Argmax of the gate logits.
    Gate,
    /// Every state goes to this expert; the gate is ignored.
    Fixed(usize),
}

#[derive(Debug, Clone)]
pub struct MoEActor {
    pub gate: Mlp,
    pub experts: Vec<DiffusionPolicy>,
    pub routing: Routing,
}

/// Numerically stable softmax of one row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Gradients and diagnostics from one [`moe_actor_update`].
#[derive(Debug, Clone)]
pub struct MoeGradients {
    pub gate: Gradients,
    /// `None` for experts that no state was routed to.
    pub experts: Vec<Option<Gradients>>,
    /// Routed expert per batch row.
    pub routes: Vec<usize>,
    pub gate_loss: f64,
    /// Sum over routed experts of their actor losses, weighted by share of
    /// the batch.
    pub actor_loss: f64,
}

impl MoEActor {
    pub fn new(gate: Mlp, experts: Vec<DiffusionPolicy>, routing: Routing) -> Result<Self, NnError> {
        let first = experts.first().ok_or_else(|| NnError::Shape("a mixture needs at least one expert".into()))?;
        if gate.output_dim() != experts.len() || gate.input_dim() != first.state_dim() {
            return Err(NnError::Shape(format!(
                "gate {:?} does not fit {} experts over {} state features",
                gate.widths(),
                experts.len(),
                first.state_dim()
            )));
        }
        for e in &experts[1..] {
            if e.schedule() != first.schedule() || e.action_dim() != first.action_dim() || e.state_dim() != first.state_dim() {
                return Err(NnError::Shape("experts must share schedule and dimensions".into()));
            }
        }
        if let Routing::Fixed(k) = routing {
            if k >= experts.len() {
                return Err(NnError::Shape(format!("fixed expert {k} out of {} experts", experts.len())));
            }
        }
        Ok(Self { gate, experts, routing })
    }

    pub fn n_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn action_dim(&self) -> usize {
        self.experts[0].action_dim()
    }

    /// Selected expert and gate probabilities for one state.
    pub fn route(&self, state: &[f64]) -> Result<(usize, Vec<f64>), NnError> {
        let logits = self.gate.predict_one(state)?;
        let probs = softmax(&logits);
        let idx = match self.routing {
            Routing::Gate => argmax(&logits),
            Routing::Fixed(k) => k,
        };
        Ok((idx, probs))
    }

    /// Selected expert per row and the `(batch, K)` gate probabilities.
    pub fn route_batch(&self, states: ArrayView2<f64>) -> Result<(Vec<usize>, Array2<f64>), NnError> {
        let logits = self.gate.predict(states)?;
        let mut probs = Array2::zeros(logits.raw_dim());
        let mut routes = Vec::with_capacity(logits.nrows());
        for (i, row) in logits.rows().into_iter().enumerate() {
            let row = row.to_vec();
            probs.row_mut(i).assign(&Array1::from(softmax(&row)));
            routes.push(match self.routing {
                Routing::Gate => argmax(&row),
                Routing::Fixed(k) => k,
            });
        }
        Ok((routes, probs))
    }

    /// Action from the routed expert and that expert's index.
    pub fn sample_action<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<(Vec<f64>, usize), DiffusionError> {
        let (k, _) = self.route(state)?;
        Ok((self.experts[k].sample_action(state, rng)?, k))
    }

    /// Batch sampling under fixed noise; each row uses its routed expert.
    pub fn sample_with(&self, states: ArrayView2<f64>, noise: &ChainNoise) -> Result<(Array2<f64>, Vec<usize>), DiffusionError> {
        let (routes, _) = self.route_batch(states)?;
        let mut actions = Array2::zeros((states.nrows(), self.action_dim()));
        for (k, rows) in group_rows(&routes, self.n_experts()).iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            let sub = self.experts[k].sample_with(states.select(Axis(0), rows).view(), &noise.select(rows))?;
            for (i, &r) in rows.iter().enumerate() {
                actions.row_mut(r).assign(&sub.row(i));
            }
        }
        Ok((actions, routes))
    }

    /// Denoiser evaluations summed over experts.
    pub fn evaluations(&self) -> u64 {
        self.experts.iter().map(DiffusionPolicy::evaluations).sum()
    }
}

/// Row indices per expert, each list in ascending order.
pub fn group_rows(routes: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); k];
    for (i, &r) in routes.iter().enumerate() {
        groups[r].push(i);
    }
    groups
}

/// Gate loss and its gradient given each expert's Q-value per state.
///
/// `q` is `(batch, K)`: `q[[s, k]] = Q(s, a_k(s))`, treated as constant.
pub fn gate_loss(gate: &Mlp, states: ArrayView2<f64>, q: &Array2<f64>, load_balance: f64) -> Result<(f64, Gradients), NnError> {
    let (logits, cache) = gate.forward(states)?;
    if logits.dim() != q.dim() {
        return Err(NnError::Shape(format!("gate logits {:?} vs Q table {:?}", logits.dim(), q.dim())));
    }
    let (n, k) = logits.dim();
    let nf = n as f64;
    let mut probs = Array2::zeros((n, k));
    for (i, row) in logits.rows().into_iter().enumerate() {
        probs.row_mut(i).assign(&Array1::from(softmax(&row.to_vec())));
    }
    let mean_prob = probs.mean_axis(Axis(0)).expect("non-empty batch");
    let uniform = 1.0 / k as f64;
    let mut loss = -(&probs * q).sum() / nf;
    loss += load_balance * mean_prob.iter().map(|f| (f - uniform).powi(2)).sum::<f64>();

    // dL/dp[s, k], then through the softmax Jacobian.
    let mut grad_logits = Array2::zeros((n, k));
    for s in 0..n {
        let dp: Vec<f64> = (0..k)
            .map(|j| (-q[[s, j]] + 2.0 * load_balance * (mean_prob[j] - uniform)) / nf)
            .collect();
        let inner: f64 = (0..k).map(|j| probs[[s, j]] * dp[j]).sum();
        for j in 0..k {
            grad_logits[[s, j]] = probs[[s, j]] * (dp[j] - inner);
        }
    }
    let (grads, _) = gate.backward(&cache, grad_logits.view())?;
    Ok((loss, grads))
}

/// Expert and gate gradients for one batch.
///
/// `expert_noise` drives the routed experts' differentiable chains;
/// `gate_noise` drives the frozen proposals scored for the gate.
pub fn moe_actor_update<Q: QFunction + ?Sized>(
    actor: &MoEActor,
    states: ArrayView2<f64>,
    critic: &Q,
    expert_noise: &ChainNoise,
    gate_noise: &ChainNoise,
    load_balance: f64,
) -> Result<MoeGradients, DiffusionError> {
    let n = states.nrows();
    let k = actor.n_experts();
    let (routes, _) = actor.route_batch(states)?;

    let mut experts = Vec::with_capacity(k);
    let mut total_actor_loss = 0.0;
    for (e, rows) in group_rows(&routes, k).iter().enumerate() {
        if rows.is_empty() {
            experts.push(None);
            continue;
        }
        let sub_states = states.select(Axis(0), rows);
        let (loss, grads) = actor_loss(&actor.experts[e], sub_states.view(), critic, &expert_noise.select(rows))?;
        total_actor_loss += loss * rows.len() as f64 / n as f64;
        experts.push(Some(grads));
    }

    let (gate_loss_value, gate_grads) = if k == 1 || matches!(actor.routing, Routing::Fixed(_)) {
        // A single expert or a pinned route leaves the gate with nothing to learn.
        (0.0, Gradients::zeros_like(&actor.gate))
    } else {
        let mut q = Array2::zeros((n, k));
        for (e, expert) in actor.experts.iter().enumerate() {
            let proposals = expert.sample_with(states, gate_noise)?;
            let (values, _) = critic.value_and_action_grad(states, proposals.view())?;
            q.column_mut(e).assign(&values);
        }
        gate_loss(&actor.gate, states, &q, load_balance)?
    };

    Ok(MoeGradients { gate: gate_grads, experts, routes, gate_loss: gate_loss_value, actor_loss: total_actor_loss })
}
