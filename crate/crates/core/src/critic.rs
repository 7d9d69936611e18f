//! State-action value networks and the TD regression step.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::nn::{Activation, Gradients, Mlp, NnError};

/// Anything an actor can climb: Q-values and their gradient with respect
/// to the action.
pub trait QFunction {
    /// Returns `Q(s, a)` per row and `dQ/da` per row.
    fn value_and_action_grad(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>), NnError>;
}

/// `Q(s, a)` as an MLP over the concatenation `[s, a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub net: Mlp,
    state_dim: usize,
    action_dim: usize,
}

pub fn concat_columns(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    debug_assert_eq!(a.nrows(), b.nrows());
    let mut out = Array2::zeros((a.nrows(), a.ncols() + b.ncols()));
    out.slice_mut(s![.., ..a.ncols()]).assign(&a);
    out.slice_mut(s![.., a.ncols()..]).assign(&b);
    out
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut widths = vec![state_dim + action_dim];
        widths.extend_from_slice(hidden);
        widths.push(1);
        Self { net: Mlp::new(&widths, Activation::Relu, Activation::Identity, rng), state_dim, action_dim }
    }

    pub fn from_net(net: Mlp, state_dim: usize) -> Result<Self, NnError> {
        if net.output_dim() != 1 || net.input_dim() <= state_dim {
            return Err(NnError::Shape(format!(
                "critic must map {state_dim}+action features to one value, got {:?}",
                net.widths()
            )));
        }
        let action_dim = net.input_dim() - state_dim;
        Ok(Self { net, state_dim, action_dim })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn q_values(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array1<f64>, NnError> {
        let out = self.net.predict(concat_columns(states, actions).view())?;
        Ok(out.index_axis_move(Axis(1), 0))
    }
}

impl QFunction for Critic {
    fn value_and_action_grad(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>), NnError> {
        let (out, cache) = self.net.forward(concat_columns(states, actions).view())?;
        let ones = Array2::ones(out.raw_dim());
        let (_, dx) = self.net.backward(&cache, ones.view())?;
        Ok((out.index_axis_move(Axis(1), 0), dx.slice_move(s![.., self.state_dim..])))
    }
}

/// `r` at episode end, otherwise `r + gamma * q_next`.
pub fn td_target(reward: f64, q_next: f64, done: bool, gamma: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * q_next
    }
}

/// Mean squared TD error over the batch and its parameter gradients.
pub fn critic_update(
    critic: &Critic,
    states: ArrayView2<f64>,
    actions: ArrayView2<f64>,
    targets: &Array1<f64>,
) -> Result<(f64, Gradients), NnError> {
    let n = states.nrows();
    if n == 0 || targets.len() != n {
        return Err(NnError::Shape(format!("critic batch of {n} rows with {} targets", targets.len())));
    }
    let (out, cache) = critic.net.forward(concat_columns(states, actions).view())?;
    let err = &out.column(0) - targets;
    let loss = err.mapv(|e| e * e).sum() / n as f64;
    let grad_out = (err * (2.0 / n as f64)).insert_axis(Axis(1));
    let (grads, _) = critic.net.backward(&cache, grad_out.view())?;
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Dense;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn td_target_examples() {
        assert_eq!(td_target(1.0, 123.0, true, 0.9), 1.0);
        assert!((td_target(1.0, 2.0, false, 0.9) - 2.8).abs() < 1e-15);
        assert_eq!(td_target(1.0, 55.0, false, 0.0), 1.0);
    }

    #[test]
    fn scalar_loss_example() {
        // Q(s, a) = 0 for everything.
        let net = Mlp::from_layers(vec![Dense::zeros(2, 1)], Activation::Relu, Activation::Identity).unwrap();
        let critic = Critic::from_net(net, 1).unwrap();
        let (loss, _) = critic_update(&critic, array![[1.0]].view(), array![[0.5]].view(), &array![2.0]).unwrap();
        assert_eq!(loss, 4.0);
    }

    #[test]
    fn exact_fit_has_zero_loss_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let critic = Critic::new(3, 2, &[8, 8], &mut rng);
        let s = Array2::from_shape_simple_fn((5, 3), || rng.gen_range(-1.0..1.0));
        let a = Array2::from_shape_simple_fn((5, 2), || rng.gen_range(0.0..1.0));
        let targets = critic.q_values(s.view(), a.view()).unwrap();
        let (loss, grads) = critic_update(&critic, s.view(), a.view(), &targets).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.is_zero());
    }

    #[test]
    fn empty_batch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let critic = Critic::new(3, 2, &[4], &mut rng);
        let s = Array2::<f64>::zeros((0, 3));
        let a = Array2::<f64>::zeros((0, 2));
        assert!(critic_update(&critic, s.view(), a.view(), &Array1::zeros(0)).is_err());
    }
}
