//! Deterministic actor for the DDPG baseline.

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::critic::QFunction;
use crate::nn::{Activation, Gradients, Mlp, NnError};

/// `a(s) = (tanh(net(s)) + 1) / 2`; the network carries the tanh head.
#[derive(Debug, Clone, PartialEq)]
pub struct DdpgActor {
    pub net: Mlp,
}

impl DdpgActor {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut widths = vec![state_dim];
        widths.extend_from_slice(hidden);
        widths.push(action_dim);
        Self { net: Mlp::new(&widths, Activation::Relu, Activation::Tanh, rng) }
    }

    pub fn from_net(net: Mlp) -> Result<Self, NnError> {
        if net.output_activation() != Activation::Tanh {
            return Err(NnError::Shape("DDPG actor needs a tanh output head".into()));
        }
        Ok(Self { net })
    }

    pub fn actions(&self, states: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        Ok(self.net.predict(states)?.mapv(|y| 0.5 * (y + 1.0)))
    }

    pub fn act(&self, state: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.net.predict_one(state)?.into_iter().map(|y| 0.5 * (y + 1.0)).collect())
    }
}

/// `-mean Q(s, a(s))` and its gradient with respect to the actor weights.
pub fn ddpg_actor_update<Q: QFunction + ?Sized>(actor: &DdpgActor, states: ArrayView2<f64>, critic: &Q) -> Result<(f64, Gradients), NnError> {
    let n = states.nrows() as f64;
    let (y, cache) = actor.net.forward(states)?;
    let actions = y.mapv(|y| 0.5 * (y + 1.0));
    let (q, dq_da) = critic.value_and_action_grad(states, actions.view())?;
    // d a / d y = 1/2.
    let grad_y = dq_da * (-0.5 / n);
    let (grads, _) = actor.net.backward(&cache, grad_y.view())?;
    Ok((-q.sum() / n, grads))
}
