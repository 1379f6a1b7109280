//! Dense network for the goal-conditioned terminal value: tanh hidden
//! layers, linear scalar output, a fixed affine input normalizer, manual
//! forward/backward passes, and an adaptive-moment optimizer.

use super::ValueFnError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Fixed per-feature affine normalization: (x - center) / scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            center: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Builds centers and half-widths from per-feature (min, max) ranges.
    pub fn from_ranges(ranges: &[(f64, f64)]) -> Self {
        let center = ranges.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
        let scale = ranges
            .iter()
            .map(|(lo, hi)| (0.5 * (hi - lo)).max(1e-9))
            .collect();
        Self { center, scale }
    }

    /// Normalized features are clamped to [-1.5, 1.5]: states outside the
    /// configured ranges (deep-fall pitches in bootstrapped rollouts) map to
    /// the range boundary instead of extrapolating into untrained regions.
    pub fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for ((x, c), s) in input.iter().zip(&self.center).zip(&self.scale) {
            out.push(((x - c) / s).clamp(-1.5, 1.5));
        }
    }
}

/// Parameter-shaped gradient buffers.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueNet {
    /// [input_dim, hidden..., 1]
    pub(crate) layer_sizes: Vec<usize>,
    /// Per layer, row-major (out x in).
    pub(crate) weights: Vec<Vec<f64>>,
    pub(crate) biases: Vec<Vec<f64>>,
    pub(crate) normalizer: Normalizer,
    /// Fixed multiplier on the linear output. Value targets are O(c_max /
    /// (1 - gamma)), far beyond what tanh-bounded activations reach with
    /// O(1) weights; baking the scale in keeps the learnable part O(1).
    pub(crate) output_scale: f64,
    pub(crate) obs_dim: usize,
    pub(crate) goal_dim: usize,
}

impl ValueNet {
    pub fn new(
        obs_dim: usize,
        goal_dim: usize,
        hidden: &[usize],
        normalizer: Normalizer,
        seed: u64,
    ) -> Self {
        let in_dim = obs_dim + goal_dim;
        assert_eq!(normalizer.center.len(), in_dim);
        let mut layer_sizes = vec![in_dim];
        layer_sizes.extend_from_slice(hidden);
        layer_sizes.push(1);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-limit..limit))
                    .collect(),
            );
            biases.push(vec![0.0; fan_out]);
        }
        Self {
            layer_sizes,
            weights,
            biases,
            normalizer,
            output_scale: 1.0,
            obs_dim,
            goal_dim,
        }
    }

    pub fn with_output_scale(mut self, scale: f64) -> Self {
        assert!(scale > 0.0, "output scale must be positive");
        self.output_scale = scale;
        self
    }

    pub fn output_scale(&self) -> f64 {
        self.output_scale
    }

    /// Zeroes the output layer so an untrained net predicts exactly zero:
    /// early closed-loop behaviour matches value-free MPC instead of
    /// following scaled-up initialization noise.
    pub fn zero_final_layer(&mut self) {
        self.weights.last_mut().unwrap().iter_mut().for_each(|w| *w = 0.0);
        self.biases.last_mut().unwrap().iter_mut().for_each(|b| *b = 0.0);
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn goal_dim(&self) -> usize {
        self.goal_dim
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    /// Mutable access to one layer's weights (external finite-difference
    /// verification).
    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.weights[layer]
    }

    fn affine(&self, layer: usize, input: &[f64], out: &mut Vec<f64>) {
        let (n_in, n_out) = (self.layer_sizes[layer], self.layer_sizes[layer + 1]);
        let w = &self.weights[layer];
        let b = &self.biases[layer];
        out.clear();
        for o in 0..n_out {
            let row = &w[o * n_in..(o + 1) * n_in];
            let mut z = b[o];
            for (wi, xi) in row.iter().zip(input) {
                z += wi * xi;
            }
            out.push(z);
        }
    }

    /// Forward pass; `input` is the raw (unnormalized) [o; g] concatenation.
    /// Dimensions are the caller's responsibility here; use `forward` for the
    /// checked variant.
    pub fn forward_unchecked(&self, input: &[f64]) -> f64 {
        debug_assert_eq!(input.len(), self.input_dim());
        let mut a = Vec::with_capacity(self.layer_sizes.iter().copied().max().unwrap());
        let mut z = Vec::with_capacity(a.capacity());
        self.normalizer.apply(input, &mut a);
        let last = self.num_layers() - 1;
        for layer in 0..self.num_layers() {
            self.affine(layer, &a, &mut z);
            if layer < last {
                a.clear();
                a.extend(z.iter().map(|v| v.tanh()));
            } else {
                a.clone_from(&z);
            }
        }
        self.output_scale * a[0]
    }

    pub fn forward(&self, input: &[f64]) -> Result<f64, ValueFnError> {
        if input.len() != self.input_dim() {
            return Err(ValueFnError::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        Ok(self.forward_unchecked(input))
    }

    /// Forward pass keeping per-layer activations for backprop. Returns the
    /// prediction; `acts[0]` is the normalized input, `acts[l+1]` the output
    /// of layer l after its activation.
    fn forward_trace(&self, input: &[f64], acts: &mut Vec<Vec<f64>>) -> f64 {
        acts.clear();
        let mut normalized = Vec::new();
        self.normalizer.apply(input, &mut normalized);
        acts.push(normalized);
        let last = self.num_layers() - 1;
        for layer in 0..self.num_layers() {
            let mut z = Vec::new();
            let prev = acts.last().unwrap().clone();
            self.affine(layer, &prev, &mut z);
            if layer < last {
                for v in &mut z {
                    *v = v.tanh();
                }
            }
            acts.push(z);
        }
        acts.last().unwrap()[0]
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            weights: self.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// Exact analytic gradient of the mean squared error over the batch via
    /// reverse-mode accumulation. Returns (loss, gradients).
    pub fn grad_mse(&self, inputs: &[Vec<f64>], targets: &[f64]) -> (f64, Gradients) {
        assert!(!inputs.is_empty(), "batch must be non-empty");
        assert_eq!(inputs.len(), targets.len());
        let n = inputs.len() as f64;
        let mut grads = self.zero_gradients();
        let mut loss = 0.0;
        let mut acts: Vec<Vec<f64>> = Vec::new();

        for (input, &y) in inputs.iter().zip(targets) {
            let pred = self.output_scale * self.forward_trace(input, &mut acts);
            let residual = pred - y;
            loss += residual * residual / n;

            // delta for the linear output layer; the fixed output scale is
            // part of the chain.
            let mut delta = vec![2.0 * residual * self.output_scale / n];
            for layer in (0..self.num_layers()).rev() {
                let (n_in, n_out) = (self.layer_sizes[layer], self.layer_sizes[layer + 1]);
                let a_prev = &acts[layer];
                {
                    let gw = &mut grads.weights[layer];
                    let gb = &mut grads.biases[layer];
                    for o in 0..n_out {
                        gb[o] += delta[o];
                        let row = &mut gw[o * n_in..(o + 1) * n_in];
                        for (g, ai) in row.iter_mut().zip(a_prev) {
                            *g += delta[o] * ai;
                        }
                    }
                }
                if layer == 0 {
                    break;
                }
                // Propagate through the weights, then the tanh of layer-1.
                let w = &self.weights[layer];
                let mut next = vec![0.0; n_in];
                for o in 0..n_out {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    for (ni, wi) in next.iter_mut().zip(row) {
                        *ni += delta[o] * wi;
                    }
                }
                for (ni, ai) in next.iter_mut().zip(a_prev) {
                    *ni *= 1.0 - ai * ai;
                }
                delta = next;
            }
        }
        (loss, grads)
    }

    pub fn apply_step(&mut self, direction: &Gradients, scale: f64) {
        for (w, d) in self.weights.iter_mut().zip(&direction.weights) {
            for (wi, di) in w.iter_mut().zip(d) {
                *wi += scale * di;
            }
        }
        for (b, d) in self.biases.iter_mut().zip(&direction.biases) {
            for (bi, di) in b.iter_mut().zip(d) {
                *bi += scale * di;
            }
        }
    }
}

/// Adaptive moment estimation with the usual bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Option<Gradients>,
    v: Option<Gradients>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: None,
            v: None,
        }
    }

    pub fn step(&mut self, net: &mut ValueNet, grads: &Gradients) {
        let m = self.m.get_or_insert_with(|| net.zero_gradients());
        let v = self.v.get_or_insert_with(|| net.zero_gradients());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);

        let update = |params: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..params.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        };
        for l in 0..net.weights.len() {
            update(&mut net.weights[l], &grads.weights[l], &mut m.weights[l], &mut v.weights[l]);
            update(&mut net.biases[l], &grads.biases[l], &mut m.biases[l], &mut v.biases[l]);
        }
    }
}
