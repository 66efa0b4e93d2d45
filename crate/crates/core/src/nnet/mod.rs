//! Fixed-architecture multilayer perceptron with an optional identity skip,
//! hand-written reverse-mode gradients and an Adam optimizer.
//!
//! The network maps `R^n -> R^n` through `M` hidden layers of uniform width
//! `d`: weight matrices `W_0 .. W_M` where `W_0` is `n -> d`, the middle
//! layers are `d -> d`, and the linear output layer `W_M` is `d -> n`. With
//! the residual flag on, the input is added to the output, so the net learns
//! the one-step increment of a flow map rather than the map itself.

pub mod batch;
pub mod checkpoint;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{affine_into, dot4, matvec_t_accum, outer_accum};

/// Hidden-layer nonlinearity. The derivative is evaluated from the stored
/// activation output, not the pre-activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
        }
    }

    /// sigma'(x) expressed through a = sigma(x).
    #[inline]
    pub fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::InvalidArchitecture(format!("unknown activation `{other}`"))),
        }
    }
}

/// Network shape. Input and output dimensions are equal by construction:
/// flow maps are endomorphisms of the state space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    /// Number of hidden layers, M.
    pub hidden_layers: usize,
    /// Nodes per hidden layer, d.
    pub hidden_width: usize,
    pub activation: Activation,
    /// Add the identity of the input to the (linear) output.
    pub residual: bool,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidArchitecture("input_dim must be >= 1".into()));
        }
        if self.hidden_layers == 0 {
            return Err(Error::InvalidArchitecture("at least one hidden layer required".into()));
        }
        if self.hidden_width == 0 {
            return Err(Error::InvalidArchitecture("hidden_width must be >= 1".into()));
        }
        Ok(())
    }

    /// (in, out) shape of every weight matrix `W_0 .. W_M`.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let (n, d, m) = (self.input_dim, self.hidden_width, self.hidden_layers);
        let mut dims = Vec::with_capacity(m + 1);
        dims.push((n, d));
        for _ in 1..m {
            dims.push((d, d));
        }
        dims.push((d, n));
        dims
    }

    /// Total trainable scalar count.
    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// One affine layer: row-major `out x in` weights plus a bias column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Layer {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }
}

/// Trainable layer split: layers `0 .. split_index - 1` are frozen, layers
/// `split_index ..= M` are trainable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeSpec {
    pub split_index: usize,
}

impl FreezeSpec {
    /// Everything trainable.
    pub fn none() -> Self {
        FreezeSpec { split_index: 0 }
    }

    /// Only the output layer trainable (`split_index = M`).
    pub fn last_layer(arch: &Architecture) -> Self {
        FreezeSpec { split_index: arch.hidden_layers }
    }

    pub fn validate(&self, arch: &Architecture) -> Result<()> {
        if self.split_index > arch.hidden_layers {
            return Err(Error::InvalidConfig(format!(
                "freeze split index {} exceeds layer count M = {}",
                self.split_index, arch.hidden_layers
            )));
        }
        Ok(())
    }
}

/// All weights and biases of a network, `W_0 ..= W_M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    pub arch: Architecture,
    pub layers: Vec<Layer>,
}

/// Per-layer record of a forward pass: the input and every hidden
/// activation, enough to run `backward`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Vec<f64>,
    /// Post-activation values of hidden layers 1..=M.
    pub hidden: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl ForwardCache {
    pub fn for_arch(arch: &Architecture) -> Self {
        ForwardCache {
            input: vec![0.0; arch.input_dim],
            hidden: vec![vec![0.0; arch.hidden_width]; arch.hidden_layers],
            output: vec![0.0; arch.input_dim],
        }
    }

    fn matches(&self, arch: &Architecture) -> bool {
        self.input.len() == arch.input_dim
            && self.output.len() == arch.input_dim
            && self.hidden.len() == arch.hidden_layers
            && self.hidden.iter().all(|h| h.len() == arch.hidden_width)
    }
}

/// Gradient of one layer, same shapes as [`Layer`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients aligned with the full `W_0 ..= W_M` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<LayerGrad>,
}

impl ParamGrads {
    pub fn zeros_like(params: &NetParams) -> Self {
        ParamGrads {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn zero(&mut self) {
        for l in &mut self.layers {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
        }
    }

    /// Scale every entry, e.g. to turn a sum over samples into a mean.
    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            for w in &mut l.weights {
                *w *= factor;
            }
            for b in &mut l.bias {
                *b *= factor;
            }
        }
    }

    /// The trainable tail `layers[split_index..]`.
    pub fn trainable(&self, freeze: &FreezeSpec) -> &[LayerGrad] {
        &self.layers[freeze.split_index..]
    }
}

/// Scratch buffers for a backward pass, reusable across samples.
#[derive(Debug, Clone)]
pub struct BackwardScratch {
    g: Vec<f64>,
    gp: Vec<f64>,
    pub input_grad: Vec<f64>,
}

impl BackwardScratch {
    pub fn for_arch(arch: &Architecture) -> Self {
        let w = arch.hidden_width.max(arch.input_dim);
        BackwardScratch {
            g: vec![0.0; w],
            gp: vec![0.0; w],
            input_grad: vec![0.0; arch.input_dim],
        }
    }
}

impl NetParams {
    /// Glorot-uniform weights, zero biases. Layer `i` draws from stream `i`
    /// of the seeded generator, so `init` is reproducible and each layer is
    /// independent of the others.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        use rand::{Rng, SeedableRng};
        let mut layers = Vec::new();
        for (idx, (in_dim, out_dim)) in arch.layer_dims().into_iter().enumerate() {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(idx as u64);
            let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
            let mut layer = Layer::zeros(in_dim, out_dim);
            for w in &mut layer.weights {
                *w = (2.0 * rng.gen::<f64>() - 1.0) * bound;
            }
            layers.push(layer);
        }
        Ok(NetParams { arch, layers })
    }

    /// All-zero parameters (useful as a fixed point of residual nets).
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let layers = arch
            .layer_dims()
            .into_iter()
            .map(|(i, o)| Layer::zeros(i, o))
            .collect();
        Ok(NetParams { arch, layers })
    }

    fn check_shapes(&self) -> Result<()> {
        let dims = self.arch.layer_dims();
        if dims.len() != self.layers.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} layers, found {}",
                dims.len(),
                self.layers.len()
            )));
        }
        for (i, ((in_dim, out_dim), layer)) in dims.iter().zip(&self.layers).enumerate() {
            if layer.in_dim != *in_dim
                || layer.out_dim != *out_dim
                || layer.weights.len() != in_dim * out_dim
                || layer.bias.len() != *out_dim
            {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i} has shape {}x{}, architecture wants {}x{}",
                    layer.out_dim, layer.in_dim, out_dim, in_dim
                )));
            }
        }
        Ok(())
    }

    /// Evaluate the network, returning the output and the per-layer record
    /// needed by [`NetParams::backward`].
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let mut cache = ForwardCache::for_arch(&self.arch);
        self.forward_into(x, &mut cache)?;
        Ok((cache.output.clone(), cache))
    }

    /// Forward pass writing into a reusable cache.
    pub fn forward_into(&self, x: &[f64], cache: &mut ForwardCache) -> Result<()> {
        if x.len() != self.arch.input_dim {
            return Err(Error::DimensionMismatch {
                context: "forward",
                expected: self.arch.input_dim,
                got: x.len(),
            });
        }
        self.check_shapes()?;
        if !cache.matches(&self.arch) {
            *cache = ForwardCache::for_arch(&self.arch);
        }
        cache.input.copy_from_slice(x);
        let act = self.arch.activation;
        let m = self.arch.hidden_layers;

        {
            let layer = &self.layers[0];
            let h = &mut cache.hidden[0];
            affine_into(&layer.weights, &layer.bias, x, h);
            for v in h.iter_mut() {
                *v = act.apply(*v);
            }
        }
        for i in 1..m {
            let (done, rest) = cache.hidden.split_at_mut(i);
            let prev = &done[i - 1];
            let h = &mut rest[0];
            let layer = &self.layers[i];
            affine_into(&layer.weights, &layer.bias, prev, h);
            for v in h.iter_mut() {
                *v = act.apply(*v);
            }
        }
        {
            let layer = &self.layers[m];
            let last = &cache.hidden[m - 1];
            affine_into(&layer.weights, &layer.bias, last, &mut cache.output);
        }
        if self.arch.residual {
            for (y, xi) in cache.output.iter_mut().zip(x) {
                *y += *xi;
            }
        }
        Ok(())
    }

    /// Convenience forward pass that discards the cache.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (y, _) = self.forward(x)?;
        Ok(y)
    }

    /// Output of the last hidden layer, `a(x)`, using the frozen feature
    /// path only. Identical to `forward`'s final hidden record.
    pub fn last_hidden(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (_, cache) = self.forward(x)?;
        Ok(cache.hidden[self.arch.hidden_layers - 1].clone())
    }

    /// Reverse-mode gradients of `out_grad . y` with respect to every layer,
    /// plus the gradient with respect to the input (identity path included
    /// when the net is residual).
    pub fn backward(&self, cache: &ForwardCache, out_grad: &[f64]) -> Result<(ParamGrads, Vec<f64>)> {
        let mut grads = ParamGrads::zeros_like(self);
        let mut scratch = BackwardScratch::for_arch(&self.arch);
        self.backward_accum(cache, out_grad, &mut grads, &mut scratch)?;
        Ok((grads, scratch.input_grad))
    }

    /// Backward pass that adds into `grads` (callers zero it when needed)
    /// and leaves the input gradient in `scratch.input_grad`.
    pub fn backward_accum(
        &self,
        cache: &ForwardCache,
        out_grad: &[f64],
        grads: &mut ParamGrads,
        scratch: &mut BackwardScratch,
    ) -> Result<()> {
        let n = self.arch.input_dim;
        let d = self.arch.hidden_width;
        let m = self.arch.hidden_layers;
        if out_grad.len() != n {
            return Err(Error::DimensionMismatch {
                context: "backward out_grad",
                expected: n,
                got: out_grad.len(),
            });
        }
        if !cache.matches(&self.arch) {
            return Err(Error::ShapeMismatch(
                "forward cache does not match this architecture".into(),
            ));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::ShapeMismatch("gradient buffer layer count".into()));
        }
        let act = self.arch.activation;

        // Output layer: dW_M += g_y a_M^T, then g = W_M^T g_y.
        {
            let lg = &mut grads.layers[m];
            outer_accum(out_grad, &cache.hidden[m - 1], &mut lg.weights, &mut lg.bias);
            scratch.g[..d].fill(0.0);
            matvec_t_accum(&self.layers[m].weights, out_grad, &mut scratch.g[..d]);
        }

        // Hidden layers M-1 .. 1.
        for i in (1..m).rev() {
            let h = &cache.hidden[i];
            for j in 0..d {
                scratch.gp[j] = scratch.g[j] * act.derivative_from_output(h[j]);
            }
            let lg = &mut grads.layers[i];
            outer_accum(&scratch.gp[..d], &cache.hidden[i - 1], &mut lg.weights, &mut lg.bias);
            scratch.g[..d].fill(0.0);
            matvec_t_accum(&self.layers[i].weights, &scratch.gp[..d], &mut scratch.g[..d]);
        }

        // First layer, back to the input.
        {
            let h = &cache.hidden[0];
            for j in 0..d {
                scratch.gp[j] = scratch.g[j] * act.derivative_from_output(h[j]);
            }
            let lg = &mut grads.layers[0];
            outer_accum(&scratch.gp[..d], &cache.input, &mut lg.weights, &mut lg.bias);
            scratch.input_grad.fill(0.0);
            matvec_t_accum(&self.layers[0].weights, &scratch.gp[..d], &mut scratch.input_grad);
        }
        if self.arch.residual {
            for (gi, go) in scratch.input_grad.iter_mut().zip(out_grad) {
                *gi += *go;
            }
        }
        Ok(())
    }

    /// SHA-256 of the architecture and every parameter byte; stable id for
    /// provenance tracking.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.arch.input_dim.to_le_bytes());
        hasher.update(self.arch.hidden_layers.to_le_bytes());
        hasher.update(self.arch.hidden_width.to_le_bytes());
        hasher.update([self.arch.residual as u8]);
        hasher.update(self.arch.activation.name().as_bytes());
        for layer in &self.layers {
            for w in &layer.weights {
                hasher.update(w.to_le_bytes());
            }
            for b in &layer.bias {
                hasher.update(b.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        let mut out = String::with_capacity(64);
        for byte in digest {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }

    /// Mean over `pairs` of the squared prediction error
    /// `|target - N(input)|^2`.
    pub fn mse(&self, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
        let mut cache = ForwardCache::for_arch(&self.arch);
        let mut total = 0.0;
        for (x, t) in pairs {
            self.forward_into(x, &mut cache)?;
            total += cache
                .output
                .iter()
                .zip(t)
                .map(|(y, t)| (y - t) * (y - t))
                .sum::<f64>();
        }
        Ok(total / pairs.len().max(1) as f64)
    }
}

/// Adam optimizer state over the trainable tail of a network.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_count: u64,
    freeze: FreezeSpec,
    first_moment: Vec<LayerGrad>,
    second_moment: Vec<LayerGrad>,
}

impl AdamState {
    /// Moments are zero-initialized for layers `freeze.split_index ..= M`.
    pub fn new(params: &NetParams, freeze: FreezeSpec, lr: f64) -> Result<Self> {
        freeze.validate(&params.arch)?;
        let zeros: Vec<LayerGrad> = params.layers[freeze.split_index..]
            .iter()
            .map(|l| LayerGrad {
                weights: vec![0.0; l.weights.len()],
                bias: vec![0.0; l.bias.len()],
            })
            .collect();
        Ok(AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            freeze,
            first_moment: zeros.clone(),
            second_moment: zeros,
        })
    }

    pub fn freeze(&self) -> FreezeSpec {
        self.freeze
    }

    /// One bias-corrected Adam update applied to the trainable layers only.
    /// `trainable_grads` must hold exactly the layers `split_index ..= M`.
    pub fn step(&mut self, params: &mut NetParams, trainable_grads: &[LayerGrad]) -> Result<()> {
        if trainable_grads.len() != self.first_moment.len() {
            return Err(Error::ShapeMismatch(format!(
                "adam step expected {} trainable layers, got {}",
                self.first_moment.len(),
                trainable_grads.len()
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (idx, grad) in trainable_grads.iter().enumerate() {
            let layer = &mut params.layers[self.freeze.split_index + idx];
            let m = &mut self.first_moment[idx];
            let v = &mut self.second_moment[idx];
            if grad.weights.len() != layer.weights.len() || grad.bias.len() != layer.bias.len() {
                return Err(Error::ShapeMismatch(format!(
                    "gradient shape mismatch at trainable layer {idx}"
                )));
            }
            update_adam(
                &mut layer.weights,
                &mut m.weights,
                &mut v.weights,
                &grad.weights,
                self.lr,
                self.beta1,
                self.beta2,
                self.epsilon,
                bc1,
                bc2,
            );
            update_adam(
                &mut layer.bias,
                &mut m.bias,
                &mut v.bias,
                &grad.bias,
                self.lr,
                self.beta1,
                self.beta2,
                self.epsilon,
                bc1,
                bc2,
            );
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn update_adam(
    theta: &mut [f64],
    m: &mut [f64],
    v: &mut [f64],
    g: &[f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..theta.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        theta[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
    }
}

/// Squared Euclidean distance between two equal-length slices.
#[inline]
pub fn l2_sq(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += (x - y) * (x - y);
    }
    s
}

/// The same dot-product used by the layer kernels, exposed for tests.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    dot4(a, b)
}
