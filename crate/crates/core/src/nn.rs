//! Dense feed-forward networks with hand-written backpropagation.

use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply<F: Scalar>(self, x: F) -> F {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(F::zero()),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    fn derivative_from_output<F: Scalar>(self, y: F) -> F {
        match self {
            Activation::Identity => F::one(),
            Activation::Relu => {
                if y > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::Tanh => F::one() - y * y,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F> {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs x inputs`, row-major.
    pub weights: Vec<F>,
    pub bias: Vec<F>,
    pub activation: Activation,
}

impl<F: Scalar> Dense<F> {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![F::zero(); inputs * outputs],
            bias: vec![F::zero(); outputs],
            activation,
        }
    }

    /// Weights and biases uniform in `+-scale / sqrt(inputs)`.
    pub fn random<R: Rng>(inputs: usize, outputs: usize, activation: Activation, scale: f64, rng: &mut R) -> Self {
        let bound = scale / (inputs as f64).sqrt();
        let mut draw = |n: usize| -> Vec<F> {
            (0..n).map(|_| F::lit(rng.random_range(-bound..=bound))).collect()
        };
        let weights = draw(inputs * outputs);
        let bias = draw(outputs);
        Dense {
            inputs,
            outputs,
            weights,
            bias,
            activation,
        }
    }

    fn row(&self, o: usize) -> &[F] {
        &self.weights[o * self.inputs..(o + 1) * self.inputs]
    }

    fn forward_into(&self, x: &[F], out: &mut Vec<F>) {
        out.clear();
        out.extend((0..self.outputs).map(|o| self.activation.apply(dot(self.row(o), x) + self.bias[o])));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<F> {
    layers: Vec<Dense<F>>,
}

/// Per-layer activations from a forward pass, needed for backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    input: Vec<F>,
    outputs: Vec<Vec<F>>,
}

impl<F: Scalar> ForwardCache<F> {
    pub fn output(&self) -> &[F] {
        self.outputs.last().expect("network has layers")
    }
}

/// Parameter gradients with the same layout as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    pub weights: Vec<Vec<F>>,
    pub biases: Vec<Vec<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn scale(&mut self, s: F) {
        for g in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            g.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn norm(&self) -> F {
        self.weights
            .iter()
            .chain(&self.biases)
            .map(|g| dot(g, g))
            .sum::<F>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .all(|g| g.iter().all(|x| x.is_finite()))
    }

    /// Flattened in [`Mlp::params`] order.
    pub fn flat(&self) -> Vec<F> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

impl<F: Scalar> Mlp<F> {
    pub fn new(layers: Vec<Dense<F>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("a network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::Dimension {
                    what: "layer input",
                    expected: pair[0].outputs,
                    actual: pair[1].inputs,
                });
            }
        }
        for l in &layers {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::Config("layer parameter sizes do not match its shape".into()));
            }
        }
        Ok(Mlp { layers })
    }

    /// Random network with layer widths `sizes` (input first). The last layer's
    /// initial range is multiplied by `last_scale`.
    pub fn random<R: Rng>(sizes: &[usize], activations: &[Activation], last_scale: f64, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || activations.len() != sizes.len() - 1 {
            return Err(Error::Config("need one activation per layer".into()));
        }
        let last = activations.len() - 1;
        let layers = sizes
            .windows(2)
            .zip(activations)
            .enumerate()
            .map(|(i, (w, &act))| {
                let scale = if i == last { last_scale } else { 1.0 };
                Dense::random(w[0], w[1], act, scale, rng)
            })
            .collect();
        Mlp::new(layers)
    }

    pub fn layers(&self) -> &[Dense<F>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<F>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn same_shape(&self, other: &Mlp<F>) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.inputs == b.inputs && a.outputs == b.outputs && a.activation == b.activation)
    }

    fn check_input(&self, x: &[F]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                what: "network input",
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[F]) -> Result<Vec<F>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.forward_into(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn forward_cached(&self, x: &[F]) -> Result<ForwardCache<F>> {
        self.check_input(x)?;
        let mut outputs: Vec<Vec<F>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.forward_into(if i == 0 { x } else { &outputs[i - 1] }, &mut out);
            outputs.push(out);
        }
        Ok(ForwardCache {
            input: x.to_vec(),
            outputs,
        })
    }

    pub fn zero_gradients(&self) -> Gradients<F> {
        Gradients {
            weights: self.layers.iter().map(|l| vec![F::zero(); l.weights.len()]).collect(),
            biases: self.layers.iter().map(|l| vec![F::zero(); l.bias.len()]).collect(),
        }
    }

    /// Backpropagates `d_output` (gradient of some scalar with respect to the
    /// network output) through the pass recorded in `cache`, adding parameter
    /// gradients into `grads`. Returns the gradient with respect to the input.
    pub fn backward(&self, cache: &ForwardCache<F>, d_output: &[F], grads: &mut Gradients<F>) -> Vec<F> {
        assert_eq!(d_output.len(), self.output_dim(), "output gradient length");
        let mut delta: Vec<F> = d_output.to_vec();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let out = &cache.outputs[li];
            let input: &[F] = if li == 0 { &cache.input } else { &cache.outputs[li - 1] };
            for (d, &y) in delta.iter_mut().zip(out) {
                *d *= layer.activation.derivative_from_output(y);
            }
            let gw = &mut grads.weights[li];
            let gb = &mut grads.biases[li];
            let mut d_in = vec![F::zero(); layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == F::zero() {
                    continue;
                }
                gb[o] += d;
                let g_row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                for (g, &x) in g_row.iter_mut().zip(input) {
                    *g += d * x;
                }
                for (di, &w) in d_in.iter_mut().zip(layer.row(o)) {
                    *di += d * w;
                }
            }
            delta = d_in;
        }
        delta
    }

    /// `theta += step * grads`.
    pub fn add_scaled(&mut self, grads: &Gradients<F>, step: F) {
        for (li, layer) in self.layers.iter_mut().enumerate() {
            for (w, &g) in layer.weights.iter_mut().zip(&grads.weights[li]) {
                *w += step * g;
            }
            for (b, &g) in layer.bias.iter_mut().zip(&grads.biases[li]) {
                *b += step * g;
            }
        }
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn params(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[F]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Dimension {
                what: "parameter vector",
                expected: self.num_params(),
                actual: params.len(),
            });
        }
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|x| x.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_activation_of_zero() {
        let net = Mlp::<f64>::new(vec![
            Dense::zeros(3, 4, Activation::Relu),
            Dense::zeros(4, 2, Activation::Tanh),
        ])
        .unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn hand_computed_two_two_two_network() {
        let net = Mlp::new(vec![
            Dense {
                inputs: 2,
                outputs: 2,
                weights: vec![0.5, -0.25, 0.1, 0.2],
                bias: vec![0.05, -0.3],
                activation: Activation::Relu,
            },
            Dense {
                inputs: 2,
                outputs: 2,
                weights: vec![0.3, -0.7, 1.1, 0.4],
                bias: vec![0.0, 0.1],
                activation: Activation::Tanh,
            },
        ])
        .unwrap();
        let x = [0.8, -0.4];
        // h = relu([0.5*0.8 + 0.25*0.4 + 0.05, 0.1*0.8 - 0.2*0.4 - 0.3]) = [0.55, 0]
        let h: [f64; 2] = [0.55, 0.0];
        let expect = [(0.3 * h[0] - 0.7 * h[1]).tanh(), (1.1 * h[0] + 0.4 * h[1] + 0.1).tanh()];
        let got = net.forward(&x).unwrap();
        assert!((got[0] - expect[0]).abs() < 1e-12 && (got[1] - expect[1]).abs() < 1e-12);
    }

    #[test]
    fn mismatched_layers_are_rejected() {
        let r = Mlp::<f64>::new(vec![Dense::zeros(3, 4, Activation::Relu), Dense::zeros(5, 1, Activation::Identity)]);
        assert!(matches!(r, Err(Error::Dimension { .. })));
        let net = Mlp::<f64>::new(vec![Dense::zeros(3, 1, Activation::Identity)]).unwrap();
        assert!(net.forward(&[1.0]).is_err());
    }

    #[test]
    fn params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::<f64>::random(&[4, 3, 2], &[Activation::Relu, Activation::Tanh], 1.0, &mut rng).unwrap();
        let mut other = Mlp::<f64>::random(&[4, 3, 2], &[Activation::Relu, Activation::Tanh], 1.0, &mut rng).unwrap();
        other.set_params(&net.params()).unwrap();
        assert_eq!(other, net);
        assert_eq!(net.zero_gradients().flat().len(), net.num_params());
    }

    #[test]
    fn last_layer_scale_shrinks_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::<f64>::random(&[10, 8, 3], &[Activation::Relu, Activation::Tanh], 1e-3, &mut rng).unwrap();
        let bound = 1e-3 / (8f64).sqrt();
        assert!(net.layers()[1].weights.iter().all(|w| w.abs() <= bound));
    }
}
