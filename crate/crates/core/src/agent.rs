//! Actor and critic networks for deterministic policy gradient training:
//! forward passes, TD targets, the critic's squared TD loss, the actor's
//! policy-gradient ascent, soft target updates and the replay buffer.

use crate::error::{Error, Result};
use crate::nn::{Activation, Dense, Gradients, Mlp};
use crate::persist::{ByteReader, ByteWriter};
use crate::scalar::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::VecDeque;

const MAGIC: &[u8; 8] = b"DRLIRCKP";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkShape {
    /// Length of the encoded state, `n * m`.
    pub state_dim: usize,
    /// Proto-action width `m`.
    pub action_dim: usize,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
}

impl NetworkShape {
    /// Hidden layers of 256 then 128 units for both networks.
    pub fn new(state_dim: usize, action_dim: usize) -> Self {
        NetworkShape {
            state_dim,
            action_dim,
            actor_hidden: vec![256, 128],
            critic_hidden: vec![256, 128],
        }
    }
}

/// ReLU hidden layers and a tanh output of width `action_dim`. The output
/// layer starts a thousand times smaller so early proto-actions sit near 0.
pub fn random_actor<F: Scalar, R: Rng>(shape: &NetworkShape, rng: &mut R) -> Result<Mlp<F>> {
    let mut sizes = vec![shape.state_dim];
    sizes.extend(&shape.actor_hidden);
    sizes.push(shape.action_dim);
    let mut acts = vec![Activation::Relu; shape.actor_hidden.len()];
    acts.push(Activation::Tanh);
    Mlp::random(&sizes, &acts, 1e-3, rng)
}

/// Takes `[state, action]` concatenated; ReLU hidden layers, scalar output.
pub fn random_critic<F: Scalar, R: Rng>(shape: &NetworkShape, rng: &mut R) -> Result<Mlp<F>> {
    let mut sizes = vec![shape.state_dim + shape.action_dim];
    sizes.extend(&shape.critic_hidden);
    sizes.push(1);
    let mut acts = vec![Activation::Relu; shape.critic_hidden.len()];
    acts.push(Activation::Identity);
    Mlp::random(&sizes, &acts, 1.0, rng)
}

pub fn actor_forward<F: Scalar>(actor: &Mlp<F>, state: &[F]) -> Result<Vec<F>> {
    actor.forward(state)
}

fn critic_input<F: Scalar>(critic: &Mlp<F>, state: &[F], action: &[F]) -> Result<Vec<F>> {
    if state.len() + action.len() != critic.input_dim() {
        return Err(Error::Dimension {
            what: "critic state + action",
            expected: critic.input_dim(),
            actual: state.len() + action.len(),
        });
    }
    let mut x = Vec::with_capacity(critic.input_dim());
    x.extend_from_slice(state);
    x.extend_from_slice(action);
    Ok(x)
}

pub fn critic_forward<F: Scalar>(critic: &Mlp<F>, state: &[F], action: &[F]) -> Result<F> {
    if critic.output_dim() != 1 {
        return Err(Error::Dimension {
            what: "critic output",
            expected: 1,
            actual: critic.output_dim(),
        });
    }
    Ok(critic.forward(&critic_input(critic, state, action)?)?[0])
}

/// `dQ/da` at `(state, action)`.
pub fn critic_grad_wrt_action<F: Scalar>(critic: &Mlp<F>, state: &[F], action: &[F]) -> Result<Vec<F>> {
    let cache = critic.forward_cached(&critic_input(critic, state, action)?)?;
    let mut scratch = critic.zero_gradients();
    let d_in = critic.backward(&cache, &[F::one()], &mut scratch);
    Ok(d_in[state.len()..].to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition<F> {
    pub state: Vec<F>,
    pub action: Vec<F>,
    pub reward: F,
    pub next_state: Vec<F>,
}

/// `y_i = r_i + gamma * Q'(s'_i, mu'(s'_i))`, target networks only.
pub fn td_targets<F: Scalar>(
    batch: &[Transition<F>],
    target_actor: &Mlp<F>,
    target_critic: &Mlp<F>,
    gamma: F,
) -> Result<Vec<F>> {
    batch
        .iter()
        .map(|t| {
            let next_action = target_actor.forward(&t.next_state)?;
            Ok(t.reward + gamma * critic_forward(target_critic, &t.next_state, &next_action)?)
        })
        .collect()
}

/// Mean squared TD error `(1/N) sum (y_i - Q(s_i, a_i))^2` and its gradient
/// with respect to the critic's parameters.
pub fn critic_loss_gradient<F: Scalar>(
    batch: &[Transition<F>],
    critic: &Mlp<F>,
    targets: &[F],
) -> Result<(F, Gradients<F>)> {
    if batch.is_empty() || batch.len() != targets.len() {
        return Err(Error::Dimension {
            what: "td targets",
            expected: batch.len(),
            actual: targets.len(),
        });
    }
    let inv_n = F::one() / F::lit(batch.len() as f64);
    let two = F::lit(2.0);
    let mut grads = critic.zero_gradients();
    let mut loss = F::zero();
    for (t, &y) in batch.iter().zip(targets) {
        let cache = critic.forward_cached(&critic_input(critic, &t.state, &t.action)?)?;
        let err = y - cache.output()[0];
        loss += err * err;
        critic.backward(&cache, &[-two * err * inv_n], &mut grads);
    }
    Ok((loss * inv_n, grads))
}

/// Gradient of `J = (1/N) sum Q(s_i, mu(s_i))` with respect to the actor's
/// parameters: `dQ/da` at `a = mu(s_i)` chained through the actor.
pub fn actor_objective_gradient<F: Scalar>(
    batch: &[Transition<F>],
    actor: &Mlp<F>,
    critic: &Mlp<F>,
) -> Result<Gradients<F>> {
    if batch.is_empty() {
        return Err(Error::Config("actor update needs a non-empty batch".into()));
    }
    let mut grads = actor.zero_gradients();
    let mut critic_scratch = critic.zero_gradients();
    let inv_n = F::one() / F::lit(batch.len() as f64);
    for t in batch {
        let cache = actor.forward_cached(&t.state)?;
        let action = cache.output();
        let c_cache = critic.forward_cached(&critic_input(critic, &t.state, action)?)?;
        let d_in = critic.backward(&c_cache, &[inv_n], &mut critic_scratch);
        actor.backward(&cache, &d_in[t.state.len()..], &mut grads);
    }
    Ok(grads)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Momentum { beta: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First-order optimizer with per-network state.
#[derive(Debug, Clone)]
pub struct Optimizer<F> {
    pub kind: OptimizerKind,
    pub lr: f64,
    first: Vec<F>,
    second: Vec<F>,
    steps: u64,
}

impl<F: Scalar> Optimizer<F> {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer {
            kind,
            lr,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr)
    }

    /// Moves `net` along `+grads` when `ascend`, else along `-grads`.
    pub fn step(&mut self, net: &mut Mlp<F>, grads: &Gradients<F>, ascend: bool) {
        let sign = if ascend { F::one() } else { -F::one() };
        let lr = F::lit(self.lr);
        match self.kind {
            OptimizerKind::Sgd => net.add_scaled(grads, sign * lr),
            OptimizerKind::Momentum { beta } => {
                let g = grads.flat();
                if self.first.len() != g.len() {
                    self.first = vec![F::zero(); g.len()];
                }
                let beta = F::lit(beta);
                for (v, &gi) in self.first.iter_mut().zip(&g) {
                    *v = beta * *v + gi;
                }
                self.apply_flat(net, sign * lr, |i, s| s.first[i]);
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let g = grads.flat();
                if self.first.len() != g.len() {
                    self.first = vec![F::zero(); g.len()];
                    self.second = vec![F::zero(); g.len()];
                }
                self.steps += 1;
                let (b1, b2) = (F::lit(beta1), F::lit(beta2));
                for ((m, v), &gi) in self.first.iter_mut().zip(self.second.iter_mut()).zip(&g) {
                    *m = b1 * *m + (F::one() - b1) * gi;
                    *v = b2 * *v + (F::one() - b2) * gi * gi;
                }
                let t = self.steps as i32;
                let c1 = F::one() - b1.powi(t);
                let c2 = F::one() - b2.powi(t);
                let eps = F::lit(eps);
                self.apply_flat(net, sign * lr, |i, s| (s.first[i] / c1) / ((s.second[i] / c2).sqrt() + eps));
            }
        }
    }

    fn apply_flat(&self, net: &mut Mlp<F>, step: F, dir: impl Fn(usize, &Self) -> F) {
        let mut i = 0;
        for layer in net.layers_mut() {
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w += step * dir(i, self);
                i += 1;
            }
        }
    }
}

/// One gradient step on the mean squared TD error. Returns the loss before
/// the step; nothing changes if the loss or gradient is not finite.
pub fn critic_update<F: Scalar>(
    batch: &[Transition<F>],
    critic: &mut Mlp<F>,
    targets: &[F],
    optimizer: &mut Optimizer<F>,
) -> Result<F> {
    let (loss, grads) = critic_loss_gradient(batch, critic, targets)?;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::NonFinite("critic loss".into()));
    }
    optimizer.step(critic, &grads, false);
    Ok(loss)
}

/// One ascent step on the sampled policy gradient. Returns the gradient's
/// norm; nothing changes if it is not finite.
pub fn actor_update<F: Scalar>(
    batch: &[Transition<F>],
    actor: &mut Mlp<F>,
    critic: &Mlp<F>,
    optimizer: &mut Optimizer<F>,
) -> Result<F> {
    let grads = actor_objective_gradient(batch, actor, critic)?;
    if !grads.is_finite() {
        return Err(Error::NonFinite("actor gradient".into()));
    }
    optimizer.step(actor, &grads, true);
    Ok(grads.norm())
}

/// `target <- tau * online + (1 - tau) * target`, elementwise.
pub fn soft_update<F: Scalar>(online: &Mlp<F>, target: &mut Mlp<F>, tau: F) -> Result<()> {
    if !online.same_shape(target) {
        return Err(Error::Config("soft update between networks of different shapes".into()));
    }
    if !(tau > F::zero() && tau <= F::one()) {
        return Err(Error::Config(format!("tau {tau} outside (0, 1]")));
    }
    let keep = F::one() - tau;
    for (t, o) in target.layers_mut().iter_mut().zip(online.layers()) {
        for (tw, &ow) in t.weights.iter_mut().zip(&o.weights) {
            *tw = tau * ow + keep * *tw;
        }
        for (tb, &ob) in t.bias.iter_mut().zip(&o.bias) {
            *tb = tau * ob + keep * *tb;
        }
    }
    Ok(())
}

/// Fixed-capacity FIFO of experiences with seeded uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: VecDeque<T>,
    rng: ChaCha8Rng,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize, seed: u64) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        ReplayBuffer {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends, evicting the oldest entry when full.
    pub fn push(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
    }

    pub fn get(&self, i: usize) -> Option<&T> {
        self.items.get(i)
    }

    /// Positions of a uniform sample without replacement, or `None` while the
    /// buffer holds fewer than `batch_size` entries.
    pub fn sample_indices(&mut self, batch_size: usize) -> Option<Vec<usize>> {
        if batch_size == 0 || self.items.len() < batch_size {
            return None;
        }
        Some(rand::seq::index::sample(&mut self.rng, self.items.len(), batch_size).into_vec())
    }

    pub fn sample(&mut self, batch_size: usize) -> Option<Vec<&T>> {
        let idx = self.sample_indices(batch_size)?;
        Some(idx.into_iter().map(|i| &self.items[i]).collect())
    }
}

/// Online and target networks for both roles.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentNets<F> {
    pub actor: Mlp<F>,
    pub critic: Mlp<F>,
    pub target_actor: Mlp<F>,
    pub target_critic: Mlp<F>,
    /// Environment steps taken so far.
    pub steps: u64,
    /// Whether states were encoded with positional encodings.
    pub use_pe: bool,
    pub state_len: usize,
}

impl<F: Scalar> AgentNets<F> {
    /// Fresh online networks with targets copied from them.
    pub fn init<R: Rng>(shape: &NetworkShape, state_len: usize, use_pe: bool, rng: &mut R) -> Result<Self> {
        let actor = random_actor(shape, rng)?;
        let critic = random_critic(shape, rng)?;
        Ok(AgentNets {
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            steps: 0,
            use_pe,
            state_len,
        })
    }

    fn nets(&self) -> [&Mlp<F>; 4] {
        [&self.actor, &self.critic, &self.target_actor, &self.target_critic]
    }

    /// Header (magic, version, step count, flags, layer shapes of all four
    /// networks) followed by every parameter as little-endian `f64`.
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::default();
        w.bytes(MAGIC);
        w.u32(FORMAT_VERSION);
        w.u64(self.steps);
        w.u8(self.use_pe as u8);
        w.u32(self.state_len as u32);
        for net in self.nets() {
            w.u32(net.layers().len() as u32);
            for l in net.layers() {
                w.u32(l.inputs as u32);
                w.u32(l.outputs as u32);
                w.u8(l.activation.code());
            }
        }
        for net in self.nets() {
            for p in net.params() {
                w.f64(p.as_f64());
            }
        }
        w.buf
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new("checkpoint", bytes);
        r.expect_magic(MAGIC)?;
        r.expect_version(FORMAT_VERSION)?;
        let steps = r.u64()?;
        let use_pe = match r.u8()? {
            0 => false,
            1 => true,
            _ => return Err(r.error("bad flag byte")),
        };
        let state_len = r.u32()? as usize;
        let mut shells = Vec::with_capacity(4);
        for _ in 0..4 {
            let count = r.u32()? as usize;
            if count == 0 || count > 64 {
                return Err(r.error("implausible layer count"));
            }
            let mut layers = Vec::with_capacity(count);
            for _ in 0..count {
                let inputs = r.u32()? as usize;
                let outputs = r.u32()? as usize;
                let act = Activation::from_code(r.u8()?).ok_or_else(|| r.error("unknown activation"))?;
                layers.push(Dense::zeros(inputs, outputs, act));
            }
            shells.push(Mlp::new(layers)?);
        }
        for net in shells.iter_mut() {
            let params = (0..net.num_params())
                .map(|_| Ok(F::lit(r.f64()?)))
                .collect::<Result<Vec<F>>>()?;
            net.set_params(&params)?;
        }
        r.finish()?;
        let mut it = shells.into_iter();
        let mut next = || it.next().expect("four networks");
        Ok(AgentNets {
            actor: next(),
            critic: next(),
            target_actor: next(),
            target_critic: next(),
            steps,
            use_pe,
            state_len,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_critic(state_w: &[f64], action_w: &[f64], bias: f64) -> Mlp<f64> {
        let mut weights = state_w.to_vec();
        weights.extend_from_slice(action_w);
        Mlp::new(vec![Dense {
            inputs: weights.len(),
            outputs: 1,
            weights,
            bias: vec![bias],
            activation: Activation::Identity,
        }])
        .unwrap()
    }

    fn small_shape() -> NetworkShape {
        NetworkShape {
            state_dim: 6,
            action_dim: 3,
            actor_hidden: vec![5, 4],
            critic_hidden: vec![5, 4],
        }
    }

    fn transition(s: Vec<f64>, a: Vec<f64>, r: f64, s2: Vec<f64>) -> Transition<f64> {
        Transition {
            state: s,
            action: a,
            reward: r,
            next_state: s2,
        }
    }

    #[test]
    fn zero_actor_outputs_zero() {
        let actor = Mlp::<f64>::new(vec![
            Dense::zeros(6, 5, Activation::Relu),
            Dense::zeros(5, 3, Activation::Tanh),
        ])
        .unwrap();
        assert_eq!(actor_forward(&actor, &[1.0; 6]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn actor_output_is_bounded_for_huge_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut actor: Mlp<f64> = random_actor(&small_shape(), &mut rng).unwrap();
        let big: Vec<f64> = actor.params().iter().map(|p| p * 1e3).collect();
        actor.set_params(&big).unwrap();
        let a = actor_forward(&actor, &[1e6, -1e6, 3e5, 0.0, 7e7, -2e4]).unwrap();
        assert!(a.iter().all(|x| x.abs() <= 1.0));
    }

    #[test]
    fn zero_critic_gives_zero_q() {
        let critic = linear_critic(&[0.0; 2], &[0.0; 2], 0.0);
        assert_eq!(critic_forward(&critic, &[1.0, 2.0], &[3.0, 4.0]).unwrap(), 0.0);
    }

    #[test]
    fn linear_critic_is_affine() {
        let critic = linear_critic(&[0.5, -1.0], &[2.0, 3.0], 0.25);
        let q = critic_forward(&critic, &[1.0, 2.0], &[-1.0, 0.5]).unwrap();
        assert!((q - (0.5 - 2.0 - 2.0 + 1.5 + 0.25)).abs() < 1e-12);
        assert_eq!(critic_grad_wrt_action(&critic, &[1.0, 2.0], &[-1.0, 0.5]).unwrap(), vec![2.0, 3.0]);
        let flat = linear_critic(&[0.5, -1.0], &[0.0, 0.0], 0.25);
        assert_eq!(critic_grad_wrt_action(&flat, &[1.0, 2.0], &[-1.0, 0.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn critic_rejects_wrong_widths() {
        let critic = linear_critic(&[0.5, -1.0], &[2.0, 3.0], 0.25);
        assert!(critic_forward(&critic, &[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn td_targets_examples() {
        // target critic Q'(s, a) = 2 regardless of input
        let tc = linear_critic(&[0.0, 0.0], &[0.0], 2.0);
        let ta = Mlp::new(vec![Dense::zeros(2, 1, Activation::Tanh)]).unwrap();
        let batch = vec![transition(vec![1.0, 1.0], vec![0.0], 1.0, vec![0.5, 0.5])];
        assert!((td_targets(&batch, &ta, &tc, 0.9).unwrap()[0] - 2.8).abs() < 1e-12);
        assert_eq!(td_targets(&batch, &ta, &tc, 0.0).unwrap()[0], 1.0);
    }

    #[test]
    fn perfect_targets_leave_critic_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut critic: Mlp<f64> = random_critic(&small_shape(), &mut rng).unwrap();
        let batch: Vec<_> = (0..4)
            .map(|i| transition(vec![0.1 * i as f64; 6], vec![0.2; 3], 0.0, vec![0.0; 6]))
            .collect();
        let y: Vec<f64> = batch
            .iter()
            .map(|t| critic_forward(&critic, &t.state, &t.action).unwrap())
            .collect();
        let before = critic.clone();
        let loss = critic_update(&batch, &mut critic, &y, &mut Optimizer::sgd(0.1)).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(critic, before);
    }

    #[test]
    fn single_sample_loss_is_squared_error() {
        let critic = linear_critic(&[1.0], &[1.0], 0.0);
        let batch = vec![transition(vec![1.0], vec![0.5], 0.0, vec![0.0])];
        let (loss, _) = critic_loss_gradient(&batch, &critic, &[3.0]).unwrap();
        assert!((loss - 2.25).abs() < 1e-12);
    }

    #[test]
    fn flat_critic_gives_no_actor_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut actor: Mlp<f64> = random_actor(&small_shape(), &mut rng).unwrap();
        let critic = linear_critic(&[0.3; 6], &[0.0; 3], 1.0);
        let batch = vec![transition(vec![0.4; 6], vec![0.0; 3], 0.0, vec![0.0; 6])];
        let before = actor.clone();
        let norm = actor_update(&batch, &mut actor, &critic, &mut Optimizer::sgd(0.5)).unwrap();
        assert_eq!(norm, 0.0);
        assert_eq!(actor, before);
    }

    #[test]
    fn soft_update_examples() {
        let online = linear_critic(&[1.0], &[1.0], 1.0);
        let mut target = linear_critic(&[0.0], &[0.0], 0.0);
        soft_update(&online, &mut target, 0.001).unwrap();
        assert!(target.params().iter().all(|&p| (p - 0.001).abs() < 1e-15));
        soft_update(&online, &mut target, 1.0).unwrap();
        assert_eq!(target, online);
        let mut same = online.clone();
        soft_update(&online, &mut same, 0.3).unwrap();
        assert_eq!(same, online);
        let mut wrong = linear_critic(&[0.0, 0.0], &[0.0], 0.0);
        assert!(soft_update(&online, &mut wrong, 0.5).is_err());
        assert!(soft_update(&online, &mut target, 0.0).is_err());
    }

    #[test]
    fn buffer_evicts_oldest() {
        let mut b = ReplayBuffer::new(2, 0);
        for i in 0..3 {
            b.push(i);
        }
        assert_eq!((b.len(), b.get(0), b.get(1)), (2, Some(&1), Some(&2)));
    }

    #[test]
    fn full_sample_is_a_permutation() {
        let mut b = ReplayBuffer::new(10, 3);
        (0..7).for_each(|i| b.push(i));
        let mut got: Vec<i32> = b.sample(7).unwrap().into_iter().copied().collect();
        got.sort_unstable();
        assert_eq!(got, (0..7).collect::<Vec<_>>());
        assert!(b.sample(8).is_none());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut nets: AgentNets<f64> = AgentNets::init(&small_shape(), 2, true, &mut rng).unwrap();
        nets.steps = 42;
        soft_update(&random_actor(&small_shape(), &mut rng).unwrap(), &mut nets.target_actor, 0.5).unwrap();
        let bytes = nets.to_checkpoint_bytes();
        let back = AgentNets::<f64>::from_checkpoint_bytes(&bytes).unwrap();
        assert_eq!(back, nets);
        assert_eq!(back.to_checkpoint_bytes(), bytes);
        let mut bad = bytes.clone();
        bad[8] = 5;
        assert!(matches!(AgentNets::<f64>::from_checkpoint_bytes(&bad), Err(Error::Version { .. })));
    }

    #[test]
    fn adam_and_momentum_move_downhill() {
        for kind in [OptimizerKind::adam(), OptimizerKind::Momentum { beta: 0.9 }] {
            let mut critic = linear_critic(&[0.2], &[0.1], 0.0);
            let batch = vec![transition(vec![1.0], vec![1.0], 0.0, vec![0.0])];
            let mut opt = Optimizer::new(kind, 0.01);
            let first = critic_update(&batch, &mut critic, &[2.0], &mut opt).unwrap();
            let mut last = first;
            for _ in 0..50 {
                last = critic_update(&batch, &mut critic, &[2.0], &mut opt).unwrap();
            }
            assert!(last < first, "{kind:?}: {last} !< {first}");
        }
    }
}
