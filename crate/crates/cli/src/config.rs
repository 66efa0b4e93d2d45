//! Experiment configuration: TOML schema, preset merging, validation and
//! scaling.
//!
//! A config file names an experiment and overrides any subset of the
//! preset's fields. Unknown keys fail closed. The resolved configuration is
//! fully concrete and echoed verbatim into the run manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use flowcorr::correction::TlMethod;
use flowcorr::dynsys::{Domain, SystemSpec};
use flowcorr::fml::{LagSpec, SamplingMode, TrainConfig};
use flowcorr::nnet::{Activation, Architecture};

use crate::presets;

/// Configuration or command-line problem; exits with status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ValidationError(pub String);

fn invalid(msg: impl fmt::Display) -> ValidationError {
    ValidationError(msg.to_string())
}

// ---------------------------------------------------------------------------
// Raw TOML schema. Every field is optional; presets fill the gaps.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub experiment: Option<String>,
    pub seed: Option<u64>,
    pub scale: Option<f64>,
    pub true_system: Option<RawSystem>,
    pub prior_system: Option<RawSystem>,
    pub domain: Option<RawDomain>,
    /// Box for evaluation initial conditions; defaults to `domain`.
    pub eval_domain: Option<RawDomain>,
    pub data: Option<RawData>,
    pub architecture: Option<RawArchitecture>,
    pub prior_training: Option<RawTraining>,
    pub correction: Option<RawCorrection>,
    pub eval: Option<RawEval>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSystem {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawData {
    pub fine_step: Option<f64>,
    pub lag_steps: Option<RawLag>,
    pub j_lf: Option<usize>,
    pub j_hf: Option<usize>,
    pub lf_sampling: Option<RawSampling>,
    pub hf_sampling: Option<RawSampling>,
    pub substeps: Option<u32>,
}

/// Exactly one of `constant`, `set`, `times`. `times` holds real lags that
/// must be integer multiples of the fine step.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawLag {
    pub constant: Option<u32>,
    pub set: Option<Vec<u32>>,
    pub times: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSampling {
    /// `direct` or `trajectory`.
    pub mode: String,
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawArchitecture {
    pub hidden_layers: Option<usize>,
    pub hidden_width: Option<usize>,
    pub activation: Option<String>,
    pub residual: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawTraining {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    /// Early-stopping patience in epochs; `0` disables early stopping.
    pub patience: Option<usize>,
    pub shuffle: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawCorrection {
    pub method: Option<String>,
    pub freeze_index: Option<usize>,
    pub ridge: Option<f64>,
    pub training: Option<RawTraining>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawEval {
    pub n_traj: Option<usize>,
    pub horizon: Option<f64>,
    pub substeps: Option<u32>,
    pub guard_factor: Option<f64>,
}

// ---------------------------------------------------------------------------
// Resolved configuration.
// ---------------------------------------------------------------------------

/// Training schedule before master-seed assignment and scaling.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub patience: Option<usize>,
    pub shuffle: bool,
}

impl TrainingSpec {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            patience: self.patience,
            seed,
            shuffle: self.shuffle,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataConfig {
    pub fine_step: f64,
    pub lag_steps: LagSpec,
    pub j_lf: usize,
    pub j_hf: usize,
    pub lf_sampling: SamplingMode,
    pub hf_sampling: SamplingMode,
    pub substeps: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrectionConfig {
    pub method: TlMethod,
    pub freeze_index: usize,
    pub ridge: f64,
    pub training: TrainingSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalConfig {
    pub n_traj: usize,
    pub horizon: f64,
    pub substeps: u32,
    pub guard_factor: f64,
}

/// A fully resolved experiment: every value used downstream lives here.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub seed: u64,
    pub scale: f64,
    pub true_system: SystemSpec,
    pub prior_system: SystemSpec,
    pub domain: Domain,
    pub eval_domain: Domain,
    pub data: DataConfig,
    pub architecture: Architecture,
    pub prior_training: TrainingSpec,
    pub correction: CorrectionConfig,
    pub eval: EvalConfig,
    /// Fraction held out for early stopping (fixed).
    pub holdout_fraction: f64,
}

/// Seeds derived from the master seed, one per randomized phase.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivedSeeds {
    pub lf_data: u64,
    pub hf_data: u64,
    pub prior_training: u64,
    pub correction_training: u64,
    pub evaluation: u64,
}

impl ExperimentConfig {
    pub fn derived_seeds(&self) -> DerivedSeeds {
        DerivedSeeds {
            lf_data: self.seed,
            hf_data: self.seed.wrapping_add(1),
            prior_training: self.seed.wrapping_add(2),
            correction_training: self.seed.wrapping_add(3),
            evaluation: self.seed.wrapping_add(4),
        }
    }

    /// Scaled copy: J_LF, J_HF, epochs and patience shrink proportionally,
    /// with floors of 20 high-fidelity pairs, 200 epochs and 50 patience
    /// epochs. Scale 1.0 is the identity.
    pub fn scaled(&self) -> ExperimentConfig {
        let s = self.scale;
        let mut out = self.clone();
        if s >= 1.0 {
            return out;
        }
        let scale_usize = |v: usize, floor: usize| (((v as f64) * s).round() as usize).max(floor);
        out.data.j_lf = scale_usize(self.data.j_lf, 1);
        out.data.j_hf = scale_usize(self.data.j_hf, 20);
        out.prior_training.epochs = scale_usize(self.prior_training.epochs, 200);
        out.prior_training.patience = self.prior_training.patience.map(|p| scale_usize(p, 50));
        out.correction.training.epochs = scale_usize(self.correction.training.epochs, 200);
        out.correction.training.patience =
            self.correction.training.patience.map(|p| scale_usize(p, 50));
        out
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return Err(invalid(format!("scale must lie in (0, 1], got {}", self.scale)));
        }
        if self.true_system.dim != self.prior_system.dim {
            return Err(invalid(format!(
                "true system dimension {} != prior system dimension {}",
                self.true_system.dim, self.prior_system.dim
            )));
        }
        if self.domain.dim() != self.true_system.differential_dim() {
            return Err(invalid(format!(
                "domain dimension {} does not match the system's {} differential components",
                self.domain.dim(),
                self.true_system.differential_dim()
            )));
        }
        if self.eval_domain.dim() != self.domain.dim() {
            return Err(invalid("eval_domain dimension does not match domain"));
        }
        if self.architecture.input_dim != self.true_system.dim {
            return Err(invalid(format!(
                "architecture input dimension {} does not match system dimension {}",
                self.architecture.input_dim, self.true_system.dim
            )));
        }
        self.architecture
            .validate()
            .map_err(|e| invalid(format!("architecture: {e}")))?;
        if self.correction.freeze_index > self.architecture.hidden_layers {
            return Err(invalid(format!(
                "correction.freeze_index {} exceeds hidden layer count {}",
                self.correction.freeze_index, self.architecture.hidden_layers
            )));
        }
        self.data
            .lag_steps
            .validate()
            .map_err(|e| invalid(format!("data.lag_steps: {e}")))?;
        let max_k = self.data.lag_steps.max_k();
        if max_k > 1 && !matches!(self.correction.method, TlMethod::TlRecurrent) {
            return Err(invalid(format!(
                "data.lag_steps contains coarse lags (k up to {max_k}) but correction.method \
                 is `{}`; coarse pairs require `tl-recurrent`",
                self.correction.method.name()
            )));
        }
        if matches!(self.correction.method, TlMethod::TlLsq)
            && self.correction.freeze_index != self.architecture.hidden_layers
        {
            return Err(invalid(
                "correction.method `tl-lsq` retrains exactly the output layer; set \
                 correction.freeze_index to the hidden layer count",
            ));
        }
        if !(self.data.fine_step > 0.0) {
            return Err(invalid("data.fine_step must be > 0"));
        }
        if self.data.substeps == 0 || self.eval.substeps == 0 {
            return Err(invalid("substeps must be >= 1"));
        }
        if self.data.j_lf == 0 || self.data.j_hf == 0 {
            return Err(invalid("j_lf and j_hf must be >= 1"));
        }
        if self.eval.n_traj == 0 {
            return Err(invalid("eval.n_traj must be >= 1"));
        }
        if !(self.eval.horizon > 0.0) {
            return Err(invalid("eval.horizon must be > 0"));
        }
        let steps = (self.eval.horizon / self.data.fine_step).round();
        if ((steps * self.data.fine_step - self.eval.horizon) / self.eval.horizon).abs() > 1e-9 {
            return Err(invalid(format!(
                "eval.horizon {} is not a multiple of data.fine_step {}",
                self.eval.horizon, self.data.fine_step
            )));
        }
        if !(self.correction.ridge >= 0.0) {
            return Err(invalid("correction.ridge must be >= 0"));
        }
        for t in [&self.prior_training, &self.correction.training] {
            if t.epochs == 0 || t.batch_size == 0 {
                return Err(invalid("training epochs and batch_size must be >= 1"));
            }
            if !(t.lr > 0.0) {
                return Err(invalid("training lr must be > 0"));
            }
            if t.patience == Some(0) {
                return Err(invalid("training patience must be >= 1 when set (omit to disable)"));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Parsing and merging.
// ---------------------------------------------------------------------------

pub fn parse_config_str(text: &str, origin: &str) -> Result<ExperimentConfig, ValidationError> {
    let raw: RawConfig = toml::from_str(text)
        .map_err(|e| invalid(format!("{origin}: {e}")))?;
    resolve(raw)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ValidationError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| invalid(format!("cannot read `{}`: {e}", path.display())))?;
    parse_config_str(&text, &path.display().to_string())
}

/// Merge a raw config onto its preset (when the experiment names one) and
/// validate the result.
pub fn resolve(raw: RawConfig) -> Result<ExperimentConfig, ValidationError> {
    let name = raw
        .experiment
        .clone()
        .ok_or_else(|| invalid("missing required field `experiment`"))?;
    let base = presets::preset(&name);
    let mut cfg = match base {
        Some(preset) => preset,
        None => skeleton_config(&name, &raw)?,
    };

    if let Some(seed) = raw.seed {
        cfg.seed = seed;
    }
    if let Some(scale) = raw.scale {
        cfg.scale = scale;
    }
    if let Some(sys) = &raw.true_system {
        cfg.true_system = SystemSpec::from_config(&sys.name, &sys.params)
            .map_err(|e| invalid(format!("true_system: {e}")))?;
    }
    if let Some(sys) = &raw.prior_system {
        cfg.prior_system = SystemSpec::from_config(&sys.name, &sys.params)
            .map_err(|e| invalid(format!("prior_system: {e}")))?;
    }
    if let Some(d) = &raw.domain {
        cfg.domain = Domain::new(d.lower.clone(), d.upper.clone())
            .map_err(|e| invalid(format!("domain: {e}")))?;
        // Unless the file also overrides eval_domain, evaluation follows the
        // sampling box.
        if raw.eval_domain.is_none() {
            cfg.eval_domain = cfg.domain.clone();
        }
    }
    if let Some(d) = &raw.eval_domain {
        cfg.eval_domain = Domain::new(d.lower.clone(), d.upper.clone())
            .map_err(|e| invalid(format!("eval_domain: {e}")))?;
    }

    if let Some(data) = &raw.data {
        if let Some(v) = data.fine_step {
            cfg.data.fine_step = v;
        }
        if let Some(lag) = &data.lag_steps {
            cfg.data.lag_steps = resolve_lag(lag, cfg.data.fine_step)?;
        }
        if let Some(v) = data.j_lf {
            cfg.data.j_lf = v;
        }
        if let Some(v) = data.j_hf {
            cfg.data.j_hf = v;
        }
        if let Some(s) = &data.lf_sampling {
            cfg.data.lf_sampling = resolve_sampling(s, "data.lf_sampling")?;
        }
        if let Some(s) = &data.hf_sampling {
            cfg.data.hf_sampling = resolve_sampling(s, "data.hf_sampling")?;
        }
        if let Some(v) = data.substeps {
            cfg.data.substeps = v;
        }
    }

    if let Some(a) = &raw.architecture {
        if let Some(v) = a.hidden_layers {
            cfg.architecture.hidden_layers = v;
        }
        if let Some(v) = a.hidden_width {
            cfg.architecture.hidden_width = v;
        }
        if let Some(act) = &a.activation {
            cfg.architecture.activation =
                Activation::from_name(act).map_err(|e| invalid(format!("architecture: {e}")))?;
        }
        if let Some(v) = a.residual {
            cfg.architecture.residual = v;
        }
    }
    cfg.architecture.input_dim = cfg.true_system.dim;

    if let Some(t) = &raw.prior_training {
        merge_training(&mut cfg.prior_training, t);
    }
    if let Some(c) = &raw.correction {
        if let Some(m) = &c.method {
            cfg.correction.method =
                TlMethod::from_name(m).map_err(|e| invalid(format!("correction: {e}")))?;
        }
        if let Some(v) = c.freeze_index {
            cfg.correction.freeze_index = v;
        }
        if let Some(v) = c.ridge {
            cfg.correction.ridge = v;
        }
        if let Some(t) = &c.training {
            merge_training(&mut cfg.correction.training, t);
        }
    }
    if let Some(e) = &raw.eval {
        if let Some(v) = e.n_traj {
            cfg.eval.n_traj = v;
        }
        if let Some(v) = e.horizon {
            cfg.eval.horizon = v;
        }
        if let Some(v) = e.substeps {
            cfg.eval.substeps = v;
        }
        if let Some(v) = e.guard_factor {
            cfg.eval.guard_factor = v;
        }
    }

    cfg.validate()?;
    Ok(cfg)
}

fn merge_training(dst: &mut TrainingSpec, src: &RawTraining) {
    if let Some(v) = src.epochs {
        dst.epochs = v;
    }
    if let Some(v) = src.batch_size {
        dst.batch_size = v;
    }
    if let Some(v) = src.lr {
        dst.lr = v;
    }
    if let Some(v) = src.patience {
        dst.patience = if v == 0 { None } else { Some(v) };
    }
    if let Some(v) = src.shuffle {
        dst.shuffle = v;
    }
}

fn resolve_sampling(raw: &RawSampling, field: &str) -> Result<SamplingMode, ValidationError> {
    match raw.mode.as_str() {
        "direct" => {
            if raw.horizon.is_some() {
                return Err(invalid(format!("{field}: `direct` mode takes no horizon")));
            }
            Ok(SamplingMode::DirectPairs)
        }
        "trajectory" => {
            let horizon = raw
                .horizon
                .ok_or_else(|| invalid(format!("{field}: `trajectory` mode requires a horizon")))?;
            if !(horizon > 0.0) {
                return Err(invalid(format!("{field}: horizon must be > 0")));
            }
            Ok(SamplingMode::TrajectoryWindow { horizon })
        }
        other => Err(invalid(format!("{field}: unknown sampling mode `{other}`"))),
    }
}

fn resolve_lag(raw: &RawLag, fine_step: f64) -> Result<LagSpec, ValidationError> {
    let given = raw.constant.is_some() as u8 + raw.set.is_some() as u8 + raw.times.is_some() as u8;
    if given != 1 {
        return Err(invalid(
            "data.lag_steps needs exactly one of `constant`, `set`, `times`",
        ));
    }
    if let Some(k) = raw.constant {
        return Ok(LagSpec::Constant(k));
    }
    if let Some(set) = &raw.set {
        return Ok(LagSpec::UniformSet(set.clone()));
    }
    let times = raw.times.as_ref().expect("one variant present");
    let mut ks = Vec::with_capacity(times.len());
    for lag in times {
        let k = (lag / fine_step).round();
        if k < 1.0 || (k * fine_step - lag).abs() > 1e-9 * lag.abs().max(1.0) {
            return Err(invalid(format!(
                "data.lag_steps.times: lag {lag} is not a positive integer multiple of \
                 fine_step {fine_step}"
            )));
        }
        ks.push(k as u32);
    }
    Ok(LagSpec::UniformSet(ks))
}

/// Requirements for a non-preset experiment: every section present.
fn skeleton_config(name: &str, raw: &RawConfig) -> Result<ExperimentConfig, ValidationError> {
    let missing = |field: &str| {
        invalid(format!(
            "experiment `{name}` is not a preset ({}), so `{field}` is required",
            presets::PRESET_NAMES.join(", ")
        ))
    };
    let true_sys = raw.true_system.as_ref().ok_or_else(|| missing("true_system"))?;
    let prior_sys = raw.prior_system.as_ref().ok_or_else(|| missing("prior_system"))?;
    let domain = raw.domain.as_ref().ok_or_else(|| missing("domain"))?;
    let data = raw.data.as_ref().ok_or_else(|| missing("data"))?;
    let arch = raw.architecture.as_ref().ok_or_else(|| missing("architecture"))?;

    let true_system = SystemSpec::from_config(&true_sys.name, &true_sys.params)
        .map_err(|e| invalid(format!("true_system: {e}")))?;
    let prior_system = SystemSpec::from_config(&prior_sys.name, &prior_sys.params)
        .map_err(|e| invalid(format!("prior_system: {e}")))?;
    let domain = Domain::new(domain.lower.clone(), domain.upper.clone())
        .map_err(|e| invalid(format!("domain: {e}")))?;
    let fine_step = data.fine_step.ok_or_else(|| missing("data.fine_step"))?;

    let hidden_layers = arch.hidden_layers.ok_or_else(|| missing("architecture.hidden_layers"))?;
    let hidden_width = arch.hidden_width.ok_or_else(|| missing("architecture.hidden_width"))?;

    Ok(ExperimentConfig {
        experiment: name.to_string(),
        seed: 42,
        scale: 1.0,
        eval_domain: domain.clone(),
        architecture: Architecture {
            input_dim: true_system.dim,
            hidden_layers,
            hidden_width,
            activation: Activation::Tanh,
            residual: true,
        },
        data: DataConfig {
            fine_step,
            lag_steps: LagSpec::Constant(1),
            j_lf: data.j_lf.ok_or_else(|| missing("data.j_lf"))?,
            j_hf: data.j_hf.ok_or_else(|| missing("data.j_hf"))?,
            lf_sampling: SamplingMode::DirectPairs,
            hf_sampling: SamplingMode::DirectPairs,
            substeps: 10,
        },
        prior_training: TrainingSpec {
            epochs: 10_000,
            batch_size: 100,
            lr: 1e-3,
            patience: None,
            shuffle: true,
        },
        correction: CorrectionConfig {
            method: TlMethod::TlLsq,
            freeze_index: hidden_layers,
            ridge: 0.0,
            training: TrainingSpec {
                epochs: 5000,
                batch_size: 100,
                lr: 1e-3,
                patience: Some(1000),
                shuffle: true,
            },
        },
        eval: EvalConfig { n_traj: 100, horizon: 20.0, substeps: 10, guard_factor: 10.0 },
        holdout_fraction: flowcorr::fml::HOLDOUT_FRACTION,
        true_system,
        prior_system,
        domain,
    })
}
