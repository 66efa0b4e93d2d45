//! Flow-map learning: paired-state datasets and prior-model training.
//!
//! Low-fidelity sets are mass-generated by integrating the imperfect model;
//! high-fidelity sets come from the true system and may be separated by
//! multiples `k` of the fine step. Training minimizes the mean squared
//! one-step loss with mini-batch Adam, optionally with early stopping on a
//! held-out split.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynsys::{Domain, State, SystemSpec};
use crate::error::{Error, Result};
use crate::nnet::batch::BatchEngine;
use crate::nnet::{AdamState, Architecture, FreezeSpec, NetParams, ParamGrads};
use crate::numfmt::{fmt17, parse_f64};
use crate::parallel;

// Stream namespaces for the seeded generator, so the independent draws of a
// run never reuse a stream.
const STREAM_SHUFFLE: u64 = 1 << 40;
const STREAM_SPLIT: u64 = 2 << 40;

/// One observation pair: states separated by `k` fine steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationPair {
    pub x1: State,
    pub x2: State,
    pub k: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fidelity {
    Low,
    High,
}

/// How first entries of the pairs are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum SamplingMode {
    /// x1 uniform in the domain, x2 integrated from it.
    DirectPairs,
    /// Integrate a trajectory of length `horizon` from a uniform initial
    /// condition, then take a uniformly placed window of one lag. The
    /// in-domain guarantee applies to the initial condition only.
    TrajectoryWindow { horizon: f64 },
}

/// Distribution of the pair separation `k` (in fine steps).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LagSpec {
    Constant(u32),
    UniformSet(Vec<u32>),
}

impl LagSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            LagSpec::Constant(k) if *k >= 1 => Ok(()),
            LagSpec::Constant(k) => {
                Err(Error::InvalidConfig(format!("lag k must be >= 1, got {k}")))
            }
            LagSpec::UniformSet(set) => {
                if set.is_empty() {
                    return Err(Error::InvalidConfig("lag set must be non-empty".into()));
                }
                if set.iter().any(|k| *k < 1) {
                    return Err(Error::InvalidConfig("lag set entries must be >= 1".into()));
                }
                Ok(())
            }
        }
    }

    pub fn max_k(&self) -> u32 {
        match self {
            LagSpec::Constant(k) => *k,
            LagSpec::UniformSet(set) => set.iter().copied().max().unwrap_or(1),
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> u32 {
        match self {
            LagSpec::Constant(k) => *k,
            LagSpec::UniformSet(set) => set[rng.gen_range(0..set.len())],
        }
    }
}

/// A collection of observation pairs plus everything needed to replay it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub pairs: Vec<ObservationPair>,
    /// Fine time step delta between consecutive modeled states.
    pub fine_step: f64,
    /// Sampling box over the differential components.
    pub domain: Domain,
    pub fidelity: Fidelity,
    pub source_system: String,
    pub seed: u64,
    pub sampling: SamplingMode,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.pairs.first().map(|p| p.x1.dim()).unwrap_or(0)
    }

    pub fn max_k(&self) -> u32 {
        self.pairs.iter().map(|p| p.k).max().unwrap_or(1)
    }

    /// (x1, x2) clones, convenient for loss evaluation.
    pub fn io_pairs(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.pairs.iter().map(|p| (p.x1.0.clone(), p.x2.0.clone())).collect()
    }
}

/// Optimizer schedule for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Early stopping patience, in epochs, on a 10% held-out split.
    /// `None` trains on the full dataset for the whole epoch budget.
    pub patience: Option<usize>,
    pub seed: u64,
    pub shuffle: bool,
}

impl TrainConfig {
    pub fn validate(&self, dataset_size: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if dataset_size == 0 {
            return Err(Error::InvalidConfig("cannot train on an empty dataset".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be > 0".into()));
        }
        if self.patience == Some(0) {
            return Err(Error::InvalidConfig("patience must be >= 1 when set".into()));
        }
        Ok(())
    }
}

/// Fraction held out for early stopping.
pub const HOLDOUT_FRACTION: f64 = 0.1;

/// Draw `count` observation pairs of `system` over `domain`. Sample `j`
/// derives all of its randomness from stream `j` of the seeded generator,
/// so generation is order-independent and exactly replayable.
#[allow(clippy::too_many_arguments)]
pub fn generate_dataset(
    system: &SystemSpec,
    domain: &Domain,
    count: usize,
    fine_step: f64,
    lag_steps: &LagSpec,
    sampling: SamplingMode,
    substeps: u32,
    fidelity: Fidelity,
    seed: u64,
) -> Result<Dataset> {
    lag_steps.validate()?;
    if domain.dim() != system.differential_dim() {
        return Err(Error::DimensionMismatch {
            context: "generate_dataset domain",
            expected: system.differential_dim(),
            got: domain.dim(),
        });
    }
    if !(fine_step > 0.0) {
        return Err(Error::InvalidConfig("fine_step must be > 0".into()));
    }
    if let SamplingMode::TrajectoryWindow { horizon } = sampling {
        let window_steps = (horizon / fine_step).round() as i64;
        if window_steps < lag_steps.max_k() as i64 {
            return Err(Error::InvalidConfig(format!(
                "trajectory horizon {horizon} holds only {window_steps} fine steps, \
                 smaller than the largest lag k = {}",
                lag_steps.max_k()
            )));
        }
    }

    let pairs = parallel::map_indexed(count, |j| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(j as u64);
        draw_pair(system, domain, fine_step, lag_steps, sampling, substeps, &mut rng)
            .map_err(|e| Error::SampleBlowup { sample: j, source: Box::new(e) })
    })?;

    Ok(Dataset {
        pairs,
        fine_step,
        domain: domain.clone(),
        fidelity,
        source_system: system.name.clone(),
        seed,
        sampling,
    })
}

fn draw_pair(
    system: &SystemSpec,
    domain: &Domain,
    fine_step: f64,
    lag_steps: &LagSpec,
    sampling: SamplingMode,
    substeps: u32,
    rng: &mut ChaCha8Rng,
) -> Result<ObservationPair> {
    let mut x0 = vec![0.0; system.dim];
    for i in 0..domain.dim() {
        let u: f64 = rng.gen();
        x0[i] = domain.lower[i] + u * (domain.upper[i] - domain.lower[i]);
    }
    system.reconstruct_algebraic(&mut x0);
    let k = lag_steps.draw(rng);

    match sampling {
        SamplingMode::DirectPairs => {
            let x1 = State(x0);
            let mut x2 = x1.clone();
            for _ in 0..k {
                x2 = system.flow_map(&x2, fine_step, substeps)?;
            }
            Ok(ObservationPair { x1, x2, k })
        }
        SamplingMode::TrajectoryWindow { horizon } => {
            let total = (horizon / fine_step).round() as usize;
            let start = rng.gen_range(0..=(total - k as usize));
            let mut x = State(x0);
            for _ in 0..start {
                x = system.flow_map(&x, fine_step, substeps)?;
            }
            let x1 = x.clone();
            let mut x2 = x;
            for _ in 0..k {
                x2 = system.flow_map(&x2, fine_step, substeps)?;
            }
            Ok(ObservationPair { x1, x2, k })
        }
    }
}

/// Seed-deterministic disjoint partition; the union of the two sides is the
/// input multiset and both sides preserve the original pair order.
pub fn split_holdout(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "holdout fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let total = data.len();
    let holdout_count = (total as f64 * fraction).round() as usize;
    if holdout_count == 0 || holdout_count == total {
        return Err(Error::DegenerateSplit { fraction, total });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_SPLIT);
    let mut indices: Vec<usize> = (0..total).collect();
    shuffle(&mut indices, &mut rng);
    let mut holdout_idx = indices[..holdout_count].to_vec();
    let mut train_idx = indices[holdout_count..].to_vec();
    holdout_idx.sort_unstable();
    train_idx.sort_unstable();

    let subset = |idx: &[usize]| Dataset {
        pairs: idx.iter().map(|i| data.pairs[*i].clone()).collect(),
        fine_step: data.fine_step,
        domain: data.domain.clone(),
        fidelity: data.fidelity,
        source_system: data.source_system.clone(),
        seed: data.seed,
        sampling: data.sampling,
    };
    Ok((subset(&train_idx), subset(&holdout_idx)))
}

// Fisher-Yates with our seeded generator; avoids depending on SliceRandom's
// exact draw pattern staying stable across `rand` versions.
fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// Train the flow-map surrogate of the low-fidelity model: full parameter
/// set, mini-batch Adam on the mean squared one-step loss. With `patience`
/// set, 10% of the data is held out, training stops after `patience` epochs
/// without holdout improvement, and the best-seen parameters are restored.
///
/// Returns the parameters and the per-epoch training loss history.
pub fn train_prior(
    lf_data: &Dataset,
    arch: Architecture,
    cfg: &TrainConfig,
) -> Result<(NetParams, Vec<f64>)> {
    if lf_data.fidelity != Fidelity::Low {
        return Err(Error::InvalidConfig(
            "train_prior expects a low-fidelity dataset".into(),
        ));
    }
    if lf_data.max_k() > 1 {
        return Err(Error::CoarsePairsPresent { max_k: lf_data.max_k() });
    }
    arch.validate()?;
    if lf_data.state_dim() != arch.input_dim {
        return Err(Error::DimensionMismatch {
            context: "train_prior",
            expected: arch.input_dim,
            got: lf_data.state_dim(),
        });
    }
    cfg.validate(lf_data.len())?;

    let params = NetParams::init(arch, cfg.seed)?;
    let (train, holdout) = match cfg.patience {
        Some(_) => {
            let (t, h) = split_holdout(lf_data, HOLDOUT_FRACTION, cfg.seed)?;
            (t, Some(h))
        }
        None => (lf_data.clone(), None),
    };
    fit_minibatch(params, &train, holdout.as_ref(), FreezeSpec::none(), cfg)
}

/// Mini-batch Adam loop shared by prior training and the additive-corrector
/// baseline. `holdout` enables best-params early stopping.
pub(crate) fn fit_minibatch(
    mut params: NetParams,
    train: &Dataset,
    holdout: Option<&Dataset>,
    freeze: FreezeSpec,
    cfg: &TrainConfig,
) -> Result<(NetParams, Vec<f64>)> {
    let n = params.arch.input_dim;
    let train_n = train.len();
    if train_n == 0 {
        return Err(Error::InvalidConfig("cannot train on an empty dataset".into()));
    }
    let batch = cfg.batch_size.min(train_n);

    // Flat row-major copies of the training pairs.
    let mut xs = vec![0.0; train_n * n];
    let mut ts = vec![0.0; train_n * n];
    for (i, pair) in train.pairs.iter().enumerate() {
        xs[i * n..(i + 1) * n].copy_from_slice(&pair.x1);
        ts[i * n..(i + 1) * n].copy_from_slice(&pair.x2);
    }
    let (hold_xs, hold_ts, hold_n) = match holdout {
        Some(h) => {
            let hn = h.len();
            let mut hx = vec![0.0; hn * n];
            let mut ht = vec![0.0; hn * n];
            for (i, pair) in h.pairs.iter().enumerate() {
                hx[i * n..(i + 1) * n].copy_from_slice(&pair.x1);
                ht[i * n..(i + 1) * n].copy_from_slice(&pair.x2);
            }
            (hx, ht, hn)
        }
        None => (Vec::new(), Vec::new(), 0),
    };

    let mut engine = BatchEngine::new(&params, batch.max(hold_n.min(512)).max(1));
    let mut adam = AdamState::new(&params, freeze, cfg.lr)?;
    let mut grads = ParamGrads::zeros_like(&params);
    let mut order: Vec<usize> = (0..train_n).collect();
    let mut xbatch = vec![0.0; batch * n];
    let mut tbatch = vec![0.0; batch * n];

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, NetParams)> = None;
    let mut stale_epochs = 0usize;

    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(STREAM_SHUFFLE + epoch as u64);
            order.copy_from_slice(&(0..train_n).collect::<Vec<_>>());
            shuffle(&mut order, &mut rng);
        }

        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(batch) {
            let b = chunk.len();
            for (row, &idx) in chunk.iter().enumerate() {
                xbatch[row * n..(row + 1) * n].copy_from_slice(&xs[idx * n..(idx + 1) * n]);
                tbatch[row * n..(row + 1) * n].copy_from_slice(&ts[idx * n..(idx + 1) * n]);
            }
            let loss =
                engine.loss_and_grads(&params, &xbatch[..b * n], &tbatch[..b * n], b, &mut grads)?;
            if !loss.is_finite() {
                return Err(Error::DivergentLoss { epoch });
            }
            adam.step(&mut params, grads.trainable(&freeze))?;
            engine.sync_weights(&params);
            epoch_loss += loss * b as f64;
            seen += b;
        }
        history.push(epoch_loss / seen as f64);

        if let Some(patience) = cfg.patience {
            let hold_loss = chunked_mse(&mut engine, &params, &hold_xs, &hold_ts, hold_n, n)?;
            if !hold_loss.is_finite() {
                return Err(Error::DivergentLoss { epoch });
            }
            let improved = best.as_ref().map(|(b, _)| hold_loss < *b).unwrap_or(true);
            if improved {
                best = Some((hold_loss, params.clone()));
                stale_epochs = 0;
            } else {
                stale_epochs += 1;
                if stale_epochs >= patience {
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

fn chunked_mse(
    engine: &mut BatchEngine,
    params: &NetParams,
    xs: &[f64],
    ts: &[f64],
    count: usize,
    n: usize,
) -> Result<f64> {
    if count == 0 {
        return Ok(0.0);
    }
    let cap = 512.min(count);
    let mut total = 0.0;
    let mut offset = 0;
    while offset < count {
        let b = cap.min(count - offset);
        let loss = engine.mse(
            params,
            &xs[offset * n..(offset + b) * n],
            &ts[offset * n..(offset + b) * n],
            b,
        )?;
        total += loss * b as f64;
        offset += b;
    }
    Ok(total / count as f64)
}

// ---------------------------------------------------------------------------
// Dataset files: CSV pairs plus a JSON metadata sidecar.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetMeta {
    system: String,
    fine_step: f64,
    domain_lower: Vec<f64>,
    domain_upper: Vec<f64>,
    seed: u64,
    count: usize,
    state_dim: usize,
    fidelity: Fidelity,
    sampling: SamplingMode,
}

/// Write `<path>.csv`-style pair rows (`j,k,x1_*,x2_*`, LF line endings,
/// 17-significant-digit decimals) and the JSON sidecar.
pub fn write_dataset(ds: &Dataset, csv_path: &Path, meta_path: &Path) -> Result<()> {
    let n = ds.state_dim();
    let mut out = String::new();
    out.push_str("j,k");
    for i in 0..n {
        out.push_str(&format!(",x1_{i}"));
    }
    for i in 0..n {
        out.push_str(&format!(",x2_{i}"));
    }
    out.push('\n');
    for (j, pair) in ds.pairs.iter().enumerate() {
        out.push_str(&format!("{j},{}", pair.k));
        for v in pair.x1.iter() {
            out.push(',');
            out.push_str(&fmt17(*v));
        }
        for v in pair.x2.iter() {
            out.push(',');
            out.push_str(&fmt17(*v));
        }
        out.push('\n');
    }
    fs::write(csv_path, out).map_err(|e| Error::io(csv_path.display().to_string(), e))?;

    let meta = DatasetMeta {
        system: ds.source_system.clone(),
        fine_step: ds.fine_step,
        domain_lower: ds.domain.lower.clone(),
        domain_upper: ds.domain.upper.clone(),
        seed: ds.seed,
        count: ds.len(),
        state_dim: n,
        fidelity: ds.fidelity,
        sampling: ds.sampling,
    };
    let mut bytes = serde_json::to_vec_pretty(&meta)
        .map_err(|e| Error::Parse { path: meta_path.display().to_string(), reason: e.to_string() })?;
    bytes.push(b'\n');
    fs::write(meta_path, bytes).map_err(|e| Error::io(meta_path.display().to_string(), e))
}

pub fn read_dataset(csv_path: &Path, meta_path: &Path) -> Result<Dataset> {
    let meta_text =
        fs::read_to_string(meta_path).map_err(|e| Error::io(meta_path.display().to_string(), e))?;
    let meta: DatasetMeta = serde_json::from_str(&meta_text).map_err(|e| Error::Parse {
        path: meta_path.display().to_string(),
        reason: e.to_string(),
    })?;
    let text =
        fs::read_to_string(csv_path).map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    let path_str = csv_path.display().to_string();
    let n = meta.state_dim;
    let mut pairs = Vec::with_capacity(meta.count);
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse {
        path: path_str.clone(),
        reason: "missing header".into(),
    })?;
    let expected_header = {
        let mut h = String::from("j,k");
        for i in 0..n {
            h.push_str(&format!(",x1_{i}"));
        }
        for i in 0..n {
            h.push_str(&format!(",x2_{i}"));
        }
        h
    };
    if header != expected_header {
        return Err(Error::Parse {
            path: path_str,
            reason: format!("unexpected header `{header}`"),
        });
    }
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 + 2 * n {
            return Err(Error::Parse {
                path: path_str,
                reason: format!("row {lineno}: expected {} fields, got {}", 2 + 2 * n, fields.len()),
            });
        }
        let k: u32 = fields[1].parse().map_err(|e| Error::Parse {
            path: path_str.clone(),
            reason: format!("row {lineno}: bad k: {e}"),
        })?;
        let mut x1 = Vec::with_capacity(n);
        let mut x2 = Vec::with_capacity(n);
        for f in &fields[2..2 + n] {
            x1.push(parse_f64(f, &path_str)?);
        }
        for f in &fields[2 + n..] {
            x2.push(parse_f64(f, &path_str)?);
        }
        pairs.push(ObservationPair { x1: State(x1), x2: State(x2), k });
    }
    if pairs.len() != meta.count {
        return Err(Error::Parse {
            path: path_str,
            reason: format!("metadata declares {} pairs, file holds {}", meta.count, pairs.len()),
        });
    }
    Ok(Dataset {
        pairs,
        fine_step: meta.fine_step,
        domain: Domain::new(meta.domain_lower, meta.domain_upper)?,
        fidelity: meta.fidelity,
        source_system: meta.system,
        seed: meta.seed,
        sampling: meta.sampling,
    })
}
