//! Posterior-model construction from scarce high-fidelity data.
//!
//! Four routes share one contract: keep the frozen prefix of the prior
//! network bit-identical and re-fit only the trailing layers.
//!
//! * [`transfer_learn`] — Adam on the one-step loss over the trainable tail.
//! * [`last_layer_lsq`] — the `l = M` special case solved exactly: with a
//!   linear output layer the objective is least squares `A W_M = B` over the
//!   frozen features.
//! * [`transfer_learn_recurrent`] — for pairs separated by `k` fine steps,
//!   the network is composed `k` times inside the loss and gradients flow
//!   through the whole unrolled chain.
//! * [`gresnet_correct`] — baseline that trains an additive corrector on top
//!   of the prior model's flow map.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynsys::{State, SystemSpec};
use crate::error::{Error, Result};
use crate::fml::{self, Dataset, TrainConfig, HOLDOUT_FRACTION};
use crate::nnet::checkpoint::{self, CorrectionBlock, RankWarning, TrainProvenance};
use crate::nnet::{
    AdamState, Architecture, BackwardScratch, ForwardCache, FreezeSpec, NetParams, ParamGrads,
};

/// Correction route recorded in posterior provenance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TlMethod {
    TlAdam,
    TlLsq,
    TlRecurrent,
    Gresnet,
}

impl TlMethod {
    pub fn name(self) -> &'static str {
        match self {
            TlMethod::TlAdam => "tl-adam",
            TlMethod::TlLsq => "tl-lsq",
            TlMethod::TlRecurrent => "tl-recurrent",
            TlMethod::Gresnet => "gresnet",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "tl-adam" => Ok(TlMethod::TlAdam),
            "tl-lsq" => Ok(TlMethod::TlLsq),
            "tl-recurrent" => Ok(TlMethod::TlRecurrent),
            "gresnet" => Ok(TlMethod::Gresnet),
            other => Err(Error::InvalidConfig(format!("unknown correction method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorProvenance {
    pub method: TlMethod,
    pub hf_count: usize,
    pub prior_checkpoint_hash: String,
    pub rank_deficiency: Option<RankWarning>,
}

/// A corrected network: prior layers `0 .. l-1` frozen, tail re-trained.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorModel {
    pub params: NetParams,
    pub freeze: FreezeSpec,
    pub provenance: PosteriorProvenance,
    /// Per-epoch training loss (empty for the closed-form solve).
    pub loss_history: Vec<f64>,
}

impl PosteriorModel {
    pub fn correction_block(&self) -> CorrectionBlock {
        CorrectionBlock {
            method: self.provenance.method.name().to_string(),
            freeze_index: self.freeze.split_index,
            hf_count: self.provenance.hf_count,
            prior_checkpoint_hash: self.provenance.prior_checkpoint_hash.clone(),
            rank_deficiency: self.provenance.rank_deficiency.clone(),
        }
    }

    pub fn save(&self, path: &Path, seed: u64) -> Result<()> {
        let provenance = TrainProvenance {
            loss_history_tail: tail(&self.loss_history, 10),
            epochs_run: self.loss_history.len(),
        };
        checkpoint::save(path, &self.params, seed, &provenance, Some(&self.correction_block()))
    }
}

fn tail(history: &[f64], n: usize) -> Vec<f64> {
    history[history.len().saturating_sub(n)..].to_vec()
}

/// Knobs that are not part of the shared [`TrainConfig`] schedule.
#[derive(Debug, Clone, Copy, Default)]
pub struct TlOptions {
    /// Re-initialize the trainable tail instead of warm-starting from the
    /// prior's values.
    pub cold_start: bool,
}

// ---------------------------------------------------------------------------
// Loss and gradients: plain one-step route and unrolled k-step route. These
// are deliberately separate code paths; with k = 1 everywhere they must
// agree bit-for-bit, which the test suite checks.
// ---------------------------------------------------------------------------

struct PlainWork {
    cache: ForwardCache,
    scratch: BackwardScratch,
    out_grad: Vec<f64>,
}

impl PlainWork {
    fn new(arch: &Architecture) -> Self {
        PlainWork {
            cache: ForwardCache::for_arch(arch),
            scratch: BackwardScratch::for_arch(arch),
            out_grad: vec![0.0; arch.input_dim],
        }
    }
}

/// One-step batch loss `(1/B) sum |x2 - N(x1)|^2` and its gradient summed
/// into `grads` (caller zeroes). Samples are visited in `order`.
fn plain_batch_accum(
    params: &NetParams,
    data: &Dataset,
    order: &[usize],
    grads: &mut ParamGrads,
    work: &mut PlainWork,
) -> Result<f64> {
    let n = params.arch.input_dim;
    let scale = 2.0 / order.len() as f64;
    let mut loss_sum = 0.0;
    for &idx in order {
        let pair = &data.pairs[idx];
        params.forward_into(&pair.x1, &mut work.cache)?;
        for j in 0..n {
            let diff = work.cache.output[j] - pair.x2[j];
            loss_sum += diff * diff;
            work.out_grad[j] = scale * diff;
        }
        params.backward_accum(&work.cache, &work.out_grad, grads, &mut work.scratch)?;
    }
    Ok(loss_sum / order.len() as f64)
}

struct RecurrentWork {
    caches: Vec<ForwardCache>,
    scratch: BackwardScratch,
    out_grad: Vec<f64>,
}

impl RecurrentWork {
    fn new(arch: &Architecture) -> Self {
        RecurrentWork {
            caches: Vec::new(),
            scratch: BackwardScratch::for_arch(arch),
            out_grad: vec![0.0; arch.input_dim],
        }
    }
}

/// Composed batch loss `(1/B) sum |x2 - N^[k](x1)|^2`; backpropagation runs
/// through every composition step (the same weights are reused `k` times, so
/// their gradients accumulate across the chain).
fn recurrent_batch_accum(
    params: &NetParams,
    data: &Dataset,
    order: &[usize],
    grads: &mut ParamGrads,
    work: &mut RecurrentWork,
) -> Result<f64> {
    let n = params.arch.input_dim;
    let scale = 2.0 / order.len() as f64;
    let mut loss_sum = 0.0;
    for &idx in order {
        let pair = &data.pairs[idx];
        let k = pair.k as usize;
        while work.caches.len() < k {
            work.caches.push(ForwardCache::for_arch(&params.arch));
        }

        params.forward_into(&pair.x1, &mut work.caches[0])?;
        if !work.caches[0].output.iter().all(|v| v.is_finite()) {
            return Err(Error::UnrollBlowup { sample: idx, depth: 0 });
        }
        for step in 1..k {
            let (done, rest) = work.caches.split_at_mut(step);
            params.forward_into(&done[step - 1].output, &mut rest[0])?;
            if !rest[0].output.iter().all(|v| v.is_finite()) {
                return Err(Error::UnrollBlowup { sample: idx, depth: step });
            }
        }

        {
            let y = &work.caches[k - 1].output;
            for j in 0..n {
                let diff = y[j] - pair.x2[j];
                loss_sum += diff * diff;
                work.out_grad[j] = scale * diff;
            }
        }
        for step in (0..k).rev() {
            params.backward_accum(&work.caches[step], &work.out_grad, grads, &mut work.scratch)?;
            if step > 0 {
                work.out_grad.copy_from_slice(&work.scratch.input_grad);
            }
        }
    }
    Ok(loss_sum / order.len() as f64)
}

/// One-step objective and full-layout gradients over a whole dataset
/// (all pairs must have k = 1).
pub fn tl_loss_and_grads(params: &NetParams, data: &Dataset) -> Result<(f64, ParamGrads)> {
    let max_k = data.max_k();
    if max_k > 1 {
        return Err(Error::CoarsePairsPresent { max_k });
    }
    let mut grads = ParamGrads::zeros_like(params);
    let mut work = PlainWork::new(&params.arch);
    let order: Vec<usize> = (0..data.len()).collect();
    let loss = plain_batch_accum(params, data, &order, &mut grads, &mut work)?;
    Ok((loss, grads))
}

/// Composed objective and full-layout gradients over a whole dataset.
pub fn recurrent_loss_and_grads(params: &NetParams, data: &Dataset) -> Result<(f64, ParamGrads)> {
    let mut grads = ParamGrads::zeros_like(params);
    let mut work = RecurrentWork::new(&params.arch);
    let order: Vec<usize> = (0..data.len()).collect();
    let loss = recurrent_batch_accum(params, data, &order, &mut grads, &mut work)?;
    Ok((loss, grads))
}

/// One-step MSE of a model over a dataset.
pub fn one_step_mse(params: &NetParams, data: &Dataset) -> Result<f64> {
    params.mse(&data.io_pairs())
}

/// Composed MSE, `k` compositions per pair.
pub fn composed_mse(params: &NetParams, data: &Dataset) -> Result<f64> {
    let mut cache = ForwardCache::for_arch(&params.arch);
    let mut total = 0.0;
    for (idx, pair) in data.pairs.iter().enumerate() {
        let mut x = pair.x1.0.clone();
        for depth in 0..pair.k as usize {
            params.forward_into(&x, &mut cache)?;
            if !cache.output.iter().all(|v| v.is_finite()) {
                return Err(Error::UnrollBlowup { sample: idx, depth });
            }
            x.copy_from_slice(&cache.output);
        }
        total += crate::nnet::l2_sq(&x, &pair.x2);
    }
    Ok(total / data.len().max(1) as f64)
}

/// Compose the network `k` times from `x`.
pub fn compose(params: &NetParams, x: &State, k: u32) -> Result<State> {
    let mut cur = x.0.clone();
    let mut cache = ForwardCache::for_arch(&params.arch);
    for _ in 0..k {
        params.forward_into(&cur, &mut cache)?;
        cur.copy_from_slice(&cache.output);
    }
    Ok(State(cur))
}

// ---------------------------------------------------------------------------
// Transfer-learning drivers.
// ---------------------------------------------------------------------------

enum Route {
    Plain,
    Recurrent,
}

#[allow(clippy::too_many_arguments)]
fn tl_train(
    prior: &NetParams,
    hf: &Dataset,
    freeze: FreezeSpec,
    cfg: &TrainConfig,
    opts: TlOptions,
    route: Route,
) -> Result<(NetParams, Vec<f64>)> {
    freeze.validate(&prior.arch)?;
    cfg.validate(hf.len())?;
    if hf.state_dim() != prior.arch.input_dim {
        return Err(Error::DimensionMismatch {
            context: "transfer_learn",
            expected: prior.arch.input_dim,
            got: hf.state_dim(),
        });
    }

    let mut params = prior.clone();
    if opts.cold_start {
        let fresh = NetParams::init(prior.arch, cfg.seed)?;
        for i in freeze.split_index..params.layers.len() {
            params.layers[i] = fresh.layers[i].clone();
        }
    }

    let (train, holdout) = match cfg.patience {
        Some(_) => {
            let (t, h) = fml::split_holdout(hf, HOLDOUT_FRACTION, cfg.seed)?;
            (t, Some(h))
        }
        None => (hf.clone(), None),
    };
    let train_n = train.len();
    // The recurrent objective is optimized full-batch with gradient
    // accumulation over the differing k; the plain route honors batch_size.
    let batch = match route {
        Route::Plain => cfg.batch_size.min(train_n),
        Route::Recurrent => train_n,
    };

    let mut adam = AdamState::new(&params, freeze, cfg.lr)?;
    let mut grads = ParamGrads::zeros_like(&params);
    let mut plain_work = PlainWork::new(&params.arch);
    let mut rec_work = RecurrentWork::new(&params.arch);
    let mut order: Vec<usize> = (0..train_n).collect();

    let eval_holdout = |p: &NetParams, h: &Dataset| -> Result<f64> {
        match route {
            Route::Plain => one_step_mse(p, h),
            Route::Recurrent => composed_mse(p, h),
        }
    };

    // Warm starts count as a candidate: the posterior can only improve on
    // the prior as measured on the holdout.
    let mut best: Option<(f64, NetParams)> = match &holdout {
        Some(h) => Some((eval_holdout(&params, h)?, params.clone())),
        None => None,
    };
    let mut stale = 0usize;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream((1 << 40) + epoch as u64);
            order.copy_from_slice(&(0..train_n).collect::<Vec<_>>());
            fml_shuffle(&mut order, &mut rng);
        }
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(batch) {
            grads.zero();
            let loss = match route {
                Route::Plain => plain_batch_accum(&params, &train, chunk, &mut grads, &mut plain_work)?,
                Route::Recurrent => {
                    recurrent_batch_accum(&params, &train, chunk, &mut grads, &mut rec_work)?
                }
            };
            if !loss.is_finite() {
                return Err(Error::DivergentLoss { epoch });
            }
            adam.step(&mut params, grads.trainable(&freeze))?;
            epoch_loss += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        history.push(epoch_loss / seen as f64);

        if let (Some(patience), Some(h)) = (cfg.patience, &holdout) {
            let hold_loss = eval_holdout(&params, h)?;
            if !hold_loss.is_finite() {
                return Err(Error::DivergentLoss { epoch });
            }
            let improved = best.as_ref().map(|(b, _)| hold_loss < *b).unwrap_or(true);
            if improved {
                best = Some((hold_loss, params.clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    break;
                }
            }
        }
    }

    let final_params = match best {
        Some((_, p)) => p,
        None => params,
    };
    Ok((final_params, history))
}

// Same Fisher-Yates as the dataset shuffles.
fn fml_shuffle<T>(items: &mut [T], rng: &mut rand_chacha::ChaCha8Rng) {
    use rand::Rng;
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// Re-train layers `l ..= M` of the prior on one-step high-fidelity pairs
/// (all `k` must equal 1; coarse pairs belong to
/// [`transfer_learn_recurrent`]).
pub fn transfer_learn(
    prior: &NetParams,
    hf: &Dataset,
    freeze: FreezeSpec,
    cfg: &TrainConfig,
) -> Result<PosteriorModel> {
    transfer_learn_with_options(prior, hf, freeze, cfg, TlOptions::default())
}

pub fn transfer_learn_with_options(
    prior: &NetParams,
    hf: &Dataset,
    freeze: FreezeSpec,
    cfg: &TrainConfig,
    opts: TlOptions,
) -> Result<PosteriorModel> {
    let max_k = hf.max_k();
    if max_k > 1 {
        return Err(Error::CoarsePairsPresent { max_k });
    }
    let prior_hash = prior.content_hash();
    let (params, history) = tl_train(prior, hf, freeze, cfg, opts, Route::Plain)?;
    Ok(PosteriorModel {
        params,
        freeze,
        provenance: PosteriorProvenance {
            method: TlMethod::TlAdam,
            hf_count: hf.len(),
            prior_checkpoint_hash: prior_hash,
            rank_deficiency: None,
        },
        loss_history: history,
    })
}

/// Re-train layers `l ..= M` against coarse pairs by composing the network
/// `k^(j)` times per sample inside the loss (backpropagation through the
/// unrolled chain). Optimized full-batch.
pub fn transfer_learn_recurrent(
    prior: &NetParams,
    hf: &Dataset,
    freeze: FreezeSpec,
    cfg: &TrainConfig,
) -> Result<PosteriorModel> {
    transfer_learn_recurrent_with_options(prior, hf, freeze, cfg, TlOptions::default())
}

pub fn transfer_learn_recurrent_with_options(
    prior: &NetParams,
    hf: &Dataset,
    freeze: FreezeSpec,
    cfg: &TrainConfig,
    opts: TlOptions,
) -> Result<PosteriorModel> {
    let prior_hash = prior.content_hash();
    let (params, history) = tl_train(prior, hf, freeze, cfg, opts, Route::Recurrent)?;
    Ok(PosteriorModel {
        params,
        freeze,
        provenance: PosteriorProvenance {
            method: TlMethod::TlRecurrent,
            hf_count: hf.len(),
            prior_checkpoint_hash: prior_hash,
            rank_deficiency: None,
        },
        loss_history: history,
    })
}

// ---------------------------------------------------------------------------
// Exact least-squares route for l = M.
// ---------------------------------------------------------------------------

/// Frozen-feature matrix: row `j` is `[1, a(x_j)]` with `a` the output of
/// the last hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    /// d + 1; the leading column is the bias feature.
    pub cols: usize,
    pub data: Vec<f64>,
}

/// Regression targets: row `j` is `x2`, minus `x1` when the network carries
/// the identity skip (the skip is not part of the trainable output layer).
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

pub fn build_feature_matrix(prior: &NetParams, inputs: &[State]) -> Result<FeatureMatrix> {
    let d = prior.arch.hidden_width;
    let cols = d + 1;
    let mut data = vec![0.0; inputs.len() * cols];
    let mut cache = ForwardCache::for_arch(&prior.arch);
    for (row, x) in inputs.iter().enumerate() {
        prior.forward_into(x, &mut cache)?;
        let features = &cache.hidden[prior.arch.hidden_layers - 1];
        data[row * cols] = 1.0;
        data[row * cols + 1..(row + 1) * cols].copy_from_slice(features);
    }
    Ok(FeatureMatrix { rows: inputs.len(), cols, data })
}

pub fn build_target_matrix(prior: &NetParams, hf: &Dataset) -> TargetMatrix {
    let n = prior.arch.input_dim;
    let residual = prior.arch.residual;
    let mut data = vec![0.0; hf.len() * n];
    for (row, pair) in hf.pairs.iter().enumerate() {
        for j in 0..n {
            data[row * n + j] = if residual { pair.x2[j] - pair.x1[j] } else { pair.x2[j] };
        }
    }
    TargetMatrix { rows: hf.len(), cols: n, data }
}

/// Closed-form last-layer correction: solve
/// `min |A W - B|_F^2 (+ ridge |W|_F^2)` for the `(d+1) x n` output matrix.
/// With `ridge = 0` a rank-deficient system yields the minimum-norm solution
/// plus a rank warning in the provenance.
pub fn last_layer_lsq(prior: &NetParams, hf: &Dataset, ridge: f64) -> Result<PosteriorModel> {
    let max_k = hf.max_k();
    if max_k > 1 {
        return Err(Error::CoarsePairsPresent { max_k });
    }
    if hf.is_empty() {
        return Err(Error::InvalidConfig("least-squares correction needs data".into()));
    }
    if !(ridge >= 0.0) {
        return Err(Error::InvalidConfig(format!("ridge must be >= 0, got {ridge}")));
    }
    if hf.state_dim() != prior.arch.input_dim {
        return Err(Error::DimensionMismatch {
            context: "last_layer_lsq",
            expected: prior.arch.input_dim,
            got: hf.state_dim(),
        });
    }

    let inputs: Vec<State> = hf.pairs.iter().map(|p| p.x1.clone()).collect();
    let features = build_feature_matrix(prior, &inputs)?;
    let targets = build_target_matrix(prior, hf);

    let a = DMatrix::from_row_slice(features.rows, features.cols, &features.data);
    let b = DMatrix::from_row_slice(targets.rows, targets.cols, &targets.data);
    let svd = a.svd(true, true);
    let u = svd.u.as_ref().expect("svd computed with u");
    let v_t = svd.v_t.as_ref().expect("svd computed with v_t");
    let sigma = &svd.singular_values;

    let sigma_max = sigma.iter().cloned().fold(0.0f64, f64::max);
    let tol = sigma_max * f64::EPSILON * features.rows.max(features.cols) as f64;
    let numerical_rank = sigma.iter().filter(|s| **s > tol).count();

    // W = V diag(f(sigma)) U^T B with f the (regularized) reciprocal.
    let mut utb = u.transpose() * &b;
    for (i, s) in sigma.iter().enumerate() {
        let factor = if ridge > 0.0 {
            s / (s * s + ridge)
        } else if *s > tol {
            1.0 / s
        } else {
            0.0
        };
        for j in 0..utb.ncols() {
            utb[(i, j)] *= factor;
        }
    }
    let solution = v_t.transpose() * utb; // (d+1) x n

    let rank_deficiency = if ridge == 0.0 && numerical_rank < features.cols {
        log::warn!(
            "feature matrix is rank deficient: numerical rank {numerical_rank} of {} columns; \
             returning the minimum-norm solution",
            features.cols
        );
        Some(RankWarning { numerical_rank, columns: features.cols })
    } else {
        None
    };

    let mut params = prior.clone();
    let m = prior.arch.hidden_layers;
    let d = prior.arch.hidden_width;
    let n = prior.arch.input_dim;
    let out_layer = &mut params.layers[m];
    for o in 0..n {
        out_layer.bias[o] = solution[(0, o)];
        for j in 0..d {
            out_layer.weights[o * d + j] = solution[(j + 1, o)];
        }
    }
    if out_layer.weights.iter().chain(out_layer.bias.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "least-squares solution".into() });
    }

    Ok(PosteriorModel {
        params,
        freeze: FreezeSpec { split_index: m },
        provenance: PosteriorProvenance {
            method: TlMethod::TlLsq,
            hf_count: hf.len(),
            prior_checkpoint_hash: prior.content_hash(),
            rank_deficiency,
        },
        loss_history: Vec::new(),
    })
}

// ---------------------------------------------------------------------------
// Additive-correction baseline.
// ---------------------------------------------------------------------------

/// Baseline corrector: prediction is the prior model's flow map plus a
/// trained network term.
#[derive(Debug, Clone, PartialEq)]
pub struct GResNetModel {
    pub prior_system: SystemSpec,
    pub lag: f64,
    pub substeps: u32,
    pub corrector: NetParams,
}

impl GResNetModel {
    /// One step: `Phi_lag(x) + N(x)`.
    pub fn predict(&self, x: &State) -> Result<State> {
        let phi = self.prior_system.flow_map(x, self.lag, self.substeps)?;
        let nn = self.corrector.predict(x)?;
        Ok(State(phi.iter().zip(&nn).map(|(a, b)| a + b).collect()))
    }

    /// The additive term alone.
    pub fn correction(&self, x: &State) -> Result<State> {
        Ok(State(self.corrector.predict(x)?))
    }
}

/// Train the additive corrector on residual targets
/// `x2 - Phi_lag(x1)`. The corrector must not carry the identity skip; the
/// prior flow map already plays that role.
pub fn gresnet_correct(
    prior_system: &SystemSpec,
    lag: f64,
    substeps: u32,
    hf: &Dataset,
    arch: Architecture,
    cfg: &TrainConfig,
) -> Result<GResNetModel> {
    let max_k = hf.max_k();
    if max_k > 1 {
        return Err(Error::CoarsePairsPresent { max_k });
    }
    arch.validate()?;
    if arch.residual {
        return Err(Error::InvalidConfig(
            "the additive corrector must be built with residual = false".into(),
        ));
    }
    if hf.state_dim() != arch.input_dim || prior_system.dim != arch.input_dim {
        return Err(Error::DimensionMismatch {
            context: "gresnet_correct",
            expected: arch.input_dim,
            got: hf.state_dim(),
        });
    }
    cfg.validate(hf.len())?;

    let mut residuals = hf.clone();
    for (idx, pair) in residuals.pairs.iter_mut().enumerate() {
        let phi = prior_system
            .flow_map(&pair.x1, lag, substeps)
            .map_err(|e| Error::SampleBlowup { sample: idx, source: Box::new(e) })?;
        pair.x2 = State(pair.x2.iter().zip(phi.iter()).map(|(t, p)| t - p).collect());
    }

    let init = NetParams::init(arch, cfg.seed)?;
    let (train, holdout) = match cfg.patience {
        Some(_) => {
            let (t, h) = fml::split_holdout(&residuals, HOLDOUT_FRACTION, cfg.seed)?;
            (t, Some(h))
        }
        None => (residuals, None),
    };
    let (corrector, _history) =
        fml::fit_minibatch(init, &train, holdout.as_ref(), FreezeSpec::none(), cfg)?;

    Ok(GResNetModel { prior_system: prior_system.clone(), lag, substeps, corrector })
}

// ---------------------------------------------------------------------------
// gResNet serialization: corrector checkpoint plus system identity and lag.
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct GresnetDoc {
    format_version: u32,
    prior_system: SystemSpec,
    lag: f64,
    substeps: u32,
    corrector: serde_json::Value,
}

pub fn save_gresnet(path: &Path, model: &GResNetModel, seed: u64) -> Result<()> {
    let corrector_bytes =
        checkpoint::to_bytes(&model.corrector, seed, &TrainProvenance::default(), None)?;
    let corrector: serde_json::Value = serde_json::from_slice(&corrector_bytes)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let doc = GresnetDoc {
        format_version: checkpoint::FORMAT_VERSION,
        prior_system: model.prior_system.clone(),
        lag: model.lag,
        substeps: model.substeps,
        corrector,
    };
    let mut bytes =
        serde_json::to_vec_pretty(&doc).map_err(|e| Error::Checkpoint(e.to_string()))?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_gresnet(path: &Path) -> Result<GResNetModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let doc: GresnetDoc =
        serde_json::from_slice(&bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let corrector_bytes =
        serde_json::to_vec(&doc.corrector).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let corrector = checkpoint::from_bytes(&corrector_bytes)?;
    Ok(GResNetModel {
        prior_system: doc.prior_system,
        lag: doc.lag,
        substeps: doc.substeps,
        corrector: corrector.params,
    })
}
