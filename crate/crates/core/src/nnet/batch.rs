//! Batched forward/backward pass for mini-batch training.
//!
//! Activations for a whole batch are propagated as row-major `batch x width`
//! matrices so the inner loops are matrix-matrix products. Results are
//! deterministic: every kernel has a fixed evaluation order.

use crate::error::Result;
use crate::linalg::{colsum_accum, gemm_nn, gemm_tn_accum, transpose_into};
use crate::nnet::{NetParams, ParamGrads};

/// Scratch space for batched passes over one network. The transposed weight
/// copies must be refreshed (`sync_weights`) after every parameter update.
pub struct BatchEngine {
    capacity: usize,
    /// Transposed weights, `in x out` row-major, one per layer.
    wt: Vec<Vec<f64>>,
    /// Hidden activations per layer, `batch x d`.
    act: Vec<Vec<f64>>,
    /// Network outputs, `batch x n`.
    out: Vec<f64>,
    /// Backpropagated signal, `batch x width`.
    delta: Vec<f64>,
    delta_next: Vec<f64>,
}

impl BatchEngine {
    pub fn new(params: &NetParams, max_batch: usize) -> Self {
        let d = params.arch.hidden_width;
        let n = params.arch.input_dim;
        let m = params.arch.hidden_layers;
        let w = d.max(n);
        let mut engine = BatchEngine {
            capacity: max_batch,
            wt: params
                .layers
                .iter()
                .map(|l| vec![0.0; l.weights.len()])
                .collect(),
            act: (0..m).map(|_| vec![0.0; max_batch * d]).collect(),
            out: vec![0.0; max_batch * n],
            delta: vec![0.0; max_batch * w],
            delta_next: vec![0.0; max_batch * w],
        };
        engine.sync_weights(params);
        engine
    }

    /// Refresh the transposed weight copies from `params`.
    pub fn sync_weights(&mut self, params: &NetParams) {
        for (layer, wt) in params.layers.iter().zip(&mut self.wt) {
            transpose_into(&layer.weights, layer.out_dim, layer.in_dim, wt);
        }
    }

    /// Forward pass over `b` samples (`xb` is row-major `b x n`), leaving
    /// outputs in `self.out` and activations in `self.act`.
    fn forward(&mut self, params: &NetParams, xb: &[f64], b: usize) {
        let n = params.arch.input_dim;
        let d = params.arch.hidden_width;
        let m = params.arch.hidden_layers;
        let act_fn = params.arch.activation;
        debug_assert!(b <= self.capacity);
        debug_assert_eq!(xb.len(), b * n);

        gemm_nn(xb, b, n, &self.wt[0], d, &mut self.act[0][..b * d]);
        add_bias_activate(&mut self.act[0][..b * d], &params.layers[0].bias, b, d, act_fn);
        for i in 1..m {
            let (prev, rest) = self.act.split_at_mut(i);
            gemm_nn(&prev[i - 1][..b * d], b, d, &self.wt[i], d, &mut rest[0][..b * d]);
            add_bias_activate(&mut rest[0][..b * d], &params.layers[i].bias, b, d, act_fn);
        }
        gemm_nn(&self.act[m - 1][..b * d], b, d, &self.wt[m], n, &mut self.out[..b * n]);
        for (row, bias_add) in self.out[..b * n].chunks_exact_mut(n).enumerate() {
            let bias = &params.layers[m].bias;
            for j in 0..n {
                bias_add[j] += bias[j];
            }
            if params.arch.residual {
                let x_row = &xb[row * n..(row + 1) * n];
                for j in 0..n {
                    bias_add[j] += x_row[j];
                }
            }
        }
    }

    /// Mean squared loss of the batch without touching gradients.
    pub fn mse(&mut self, params: &NetParams, xb: &[f64], tb: &[f64], b: usize) -> Result<f64> {
        if b == 0 {
            return Ok(0.0);
        }
        let n = params.arch.input_dim;
        self.forward(params, xb, b);
        let mut total = 0.0;
        for (y, t) in self.out[..b * n].iter().zip(&tb[..b * n]) {
            total += (y - t) * (y - t);
        }
        Ok(total / b as f64)
    }

    /// Batch loss `L = (1/b) sum_i |y_i - t_i|^2` and its gradient with
    /// respect to every parameter, written into `grads` (overwritten).
    pub fn loss_and_grads(
        &mut self,
        params: &NetParams,
        xb: &[f64],
        tb: &[f64],
        b: usize,
        grads: &mut ParamGrads,
    ) -> Result<f64> {
        let n = params.arch.input_dim;
        let d = params.arch.hidden_width;
        let m = params.arch.hidden_layers;
        let act_fn = params.arch.activation;
        self.forward(params, xb, b);
        grads.zero();

        // delta <- dL/dy = (2/b) (y - t), reusing the output buffer region.
        let scale = 2.0 / b as f64;
        let mut loss = 0.0;
        for i in 0..b * n {
            let diff = self.out[i] - tb[i];
            loss += diff * diff;
            self.delta[i] = scale * diff;
        }
        loss /= b as f64;

        // Output layer.
        {
            let lg = &mut grads.layers[m];
            gemm_tn_accum(&self.delta[..b * n], b, n, &self.act[m - 1][..b * d], d, &mut lg.weights);
            colsum_accum(&self.delta[..b * n], b, n, &mut lg.bias);
            gemm_nn(
                &self.delta[..b * n],
                b,
                n,
                &params.layers[m].weights,
                d,
                &mut self.delta_next[..b * d],
            );
            std::mem::swap(&mut self.delta, &mut self.delta_next);
        }

        // Hidden layers m-1 .. 1.
        for i in (1..m).rev() {
            mul_activation_derivative(&mut self.delta[..b * d], &self.act[i][..b * d], act_fn);
            let lg = &mut grads.layers[i];
            gemm_tn_accum(&self.delta[..b * d], b, d, &self.act[i - 1][..b * d], d, &mut lg.weights);
            colsum_accum(&self.delta[..b * d], b, d, &mut lg.bias);
            gemm_nn(
                &self.delta[..b * d],
                b,
                d,
                &params.layers[i].weights,
                d,
                &mut self.delta_next[..b * d],
            );
            std::mem::swap(&mut self.delta, &mut self.delta_next);
        }

        // First layer.
        {
            mul_activation_derivative(&mut self.delta[..b * d], &self.act[0][..b * d], act_fn);
            let lg = &mut grads.layers[0];
            gemm_tn_accum(&self.delta[..b * d], b, d, xb, n, &mut lg.weights);
            colsum_accum(&self.delta[..b * d], b, d, &mut lg.bias);
        }
        Ok(loss)
    }
}

#[inline]
fn add_bias_activate(buf: &mut [f64], bias: &[f64], b: usize, width: usize, act: crate::nnet::Activation) {
    debug_assert_eq!(buf.len(), b * width);
    for row in buf.chunks_exact_mut(width) {
        for j in 0..width {
            row[j] = act.apply(row[j] + bias[j]);
        }
    }
}

#[inline]
fn mul_activation_derivative(delta: &mut [f64], act_values: &[f64], act: crate::nnet::Activation) {
    for (dv, av) in delta.iter_mut().zip(act_values) {
        *dv *= act.derivative_from_output(*av);
    }
}
