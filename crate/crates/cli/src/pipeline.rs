//! The four-stage experiment pipeline and its run manifest.
//!
//! Stages communicate only through files in the output directory, so any
//! stage can be re-run or resumed. A manifest records the resolved
//! configuration, derived seeds, artifact hashes and wall times; a stage is
//! skipped when the manifest shows it already ran under the same
//! configuration and its artifacts still hash to the recorded values.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use flowcorr::correction::{
    self, gresnet_correct, last_layer_lsq, transfer_learn, transfer_learn_recurrent, TlMethod,
};
use flowcorr::error::Error as CoreError;
use flowcorr::eval::{error_curve, rollout, write_error_csv, write_trajectory_csv, Predictor};
use flowcorr::fml::{self, generate_dataset, train_prior, Fidelity};
use flowcorr::nnet::checkpoint::{self, TrainProvenance};
use flowcorr::nnet::FreezeSpec;

use crate::config::ExperimentConfig;

/// Runtime failure; exits with status 1.
#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{0}")]
    Core(#[from] CoreError),
    #[error("stage `{stage}` needs `{path}` from stage `{produced_by}`; run that stage first")]
    MissingDependency {
        stage: &'static str,
        path: String,
        produced_by: &'static str,
    },
    #[error("output directory is locked by `{0}` (another run in progress? remove the file if stale)")]
    Locked(String),
    #[error("I/O error on `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Manifest(String),
}

fn io_err(path: &Path, source: std::io::Error) -> PipelineError {
    PipelineError::Io { path: path.display().to_string(), source }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Generate,
    TrainPrior,
    Correct,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Generate, Stage::TrainPrior, Stage::Correct, Stage::Evaluate];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::TrainPrior => "train-prior",
            Stage::Correct => "correct",
            Stage::Evaluate => "evaluate",
        }
    }

    pub fn from_name(name: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.name() == name)
    }
}

// ---------------------------------------------------------------------------
// Manifest.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub artifacts: BTreeMap<String, ArtifactRecord>,
    pub wall_time_s: f64,
    /// True when the latest run reused existing artifacts.
    pub skipped: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub experiment: String,
    /// Full echo of the resolved, scale-applied configuration.
    pub config: serde_json::Value,
    pub config_hash: String,
    pub seeds: serde_json::Value,
    pub stages: BTreeMap<String, StageRecord>,
}

pub const MANIFEST_NAME: &str = "run_manifest.json";

impl Manifest {
    fn load(dir: &Path) -> Result<Option<Manifest>> {
        let path = dir.join(MANIFEST_NAME);
        if !path.exists() {
            return Ok(None);
        }
        let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
        let manifest = serde_json::from_slice(&bytes)
            .map_err(|e| PipelineError::Manifest(format!("{}: {e}", path.display())))?;
        Ok(Some(manifest))
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_NAME);
        let mut bytes = serde_json::to_vec_pretty(self)
            .map_err(|e| PipelineError::Manifest(e.to_string()))?;
        bytes.push(b'\n');
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))
    }

    /// Recompute every recorded artifact hash and compare.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for (stage, record) in &self.stages {
            for (name, artifact) in &record.artifacts {
                let path = dir.join(&artifact.path);
                let actual = hash_file(&path)?;
                if actual != artifact.sha256 {
                    return Err(PipelineError::Manifest(format!(
                        "artifact `{name}` of stage `{stage}` does not match its recorded hash"
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(hash_bytes(&bytes))
}

fn config_hash(cfg: &ExperimentConfig) -> Result<(serde_json::Value, String)> {
    let value =
        serde_json::to_value(cfg).map_err(|e| PipelineError::Manifest(e.to_string()))?;
    let canonical =
        serde_json::to_vec(&value).map_err(|e| PipelineError::Manifest(e.to_string()))?;
    Ok((value, hash_bytes(&canonical)))
}

// ---------------------------------------------------------------------------
// Locking.
// ---------------------------------------------------------------------------

struct DirLock {
    path: PathBuf,
}

impl DirLock {
    fn acquire(dir: &Path) -> Result<DirLock> {
        let path = dir.join(".flowcorr.lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(PipelineError::Locked(path.display().to_string()))
            }
            Err(e) => Err(io_err(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

// ---------------------------------------------------------------------------
// Artifact naming.
// ---------------------------------------------------------------------------

pub struct ArtifactPaths {
    pub lf_csv: PathBuf,
    pub lf_meta: PathBuf,
    pub hf_csv: PathBuf,
    pub hf_meta: PathBuf,
    pub prior: PathBuf,
    pub posterior: PathBuf,
    pub prior_error: PathBuf,
    pub posterior_error: PathBuf,
    pub truth_trajectory: PathBuf,
    pub prior_trajectory: PathBuf,
    pub posterior_trajectory: PathBuf,
}

impl ArtifactPaths {
    pub fn new(dir: &Path, experiment: &str) -> ArtifactPaths {
        ArtifactPaths {
            lf_csv: dir.join("lf.csv"),
            lf_meta: dir.join("lf.meta.json"),
            hf_csv: dir.join("hf.csv"),
            hf_meta: dir.join("hf.meta.json"),
            prior: dir.join("prior.json"),
            posterior: dir.join("posterior.json"),
            prior_error: dir.join(format!("{experiment}_prior_error.csv")),
            posterior_error: dir.join(format!("{experiment}_posterior_error.csv")),
            truth_trajectory: dir.join(format!("{experiment}_truth_trajectory.csv")),
            prior_trajectory: dir.join(format!("{experiment}_prior_trajectory.csv")),
            posterior_trajectory: dir.join(format!("{experiment}_posterior_trajectory.csv")),
        }
    }
}

// ---------------------------------------------------------------------------
// The pipeline.
// ---------------------------------------------------------------------------

/// Run the requested stages (all four when `only` is `None`) of the
/// scale-applied configuration in `out_dir`. Returns the updated manifest.
pub fn run_pipeline(
    cfg: &ExperimentConfig,
    only: Option<Stage>,
    out_dir: &Path,
) -> Result<Manifest> {
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let _lock = DirLock::acquire(out_dir)?;

    let effective = cfg.scaled();
    let (config_value, cfg_hash) = config_hash(&effective)?;
    let seeds = serde_json::to_value(effective.derived_seeds())
        .map_err(|e| PipelineError::Manifest(e.to_string()))?;

    let mut manifest = match Manifest::load(out_dir)? {
        Some(m) if m.config_hash == cfg_hash => m,
        // A different configuration owns the directory now; start a fresh
        // manifest so stale stage records cannot satisfy skip checks.
        _ => Manifest {
            format_version: 1,
            experiment: effective.experiment.clone(),
            config: config_value.clone(),
            config_hash: cfg_hash.clone(),
            seeds: seeds.clone(),
            stages: BTreeMap::new(),
        },
    };
    manifest.config = config_value;
    manifest.config_hash = cfg_hash;
    manifest.seeds = seeds;

    let stages: Vec<Stage> = match only {
        Some(s) => vec![s],
        None => Stage::ALL.to_vec(),
    };
    for stage in stages {
        run_stage(&effective, stage, out_dir, &mut manifest)?;
        manifest.save(out_dir)?;
    }
    Ok(manifest)
}

fn run_stage(
    cfg: &ExperimentConfig,
    stage: Stage,
    dir: &Path,
    manifest: &mut Manifest,
) -> Result<()> {
    let paths = ArtifactPaths::new(dir, &cfg.experiment);
    if stage_is_current(stage, dir, manifest)? {
        log::info!("stage {} is up to date; skipping", stage.name());
        if let Some(record) = manifest.stages.get_mut(stage.name()) {
            record.skipped = true;
        }
        return Ok(());
    }

    let started = Instant::now();
    let artifact_files: Vec<(&'static str, PathBuf)> = match stage {
        Stage::Generate => {
            stage_generate(cfg, &paths)?;
            vec![
                ("lf_csv", paths.lf_csv.clone()),
                ("lf_meta", paths.lf_meta.clone()),
                ("hf_csv", paths.hf_csv.clone()),
                ("hf_meta", paths.hf_meta.clone()),
            ]
        }
        Stage::TrainPrior => {
            require(&paths.lf_csv, stage, Stage::Generate)?;
            require(&paths.lf_meta, stage, Stage::Generate)?;
            stage_train_prior(cfg, &paths)?;
            vec![("prior_checkpoint", paths.prior.clone())]
        }
        Stage::Correct => {
            require(&paths.hf_csv, stage, Stage::Generate)?;
            require(&paths.hf_meta, stage, Stage::Generate)?;
            if cfg.correction.method != TlMethod::Gresnet {
                require(&paths.prior, stage, Stage::TrainPrior)?;
            }
            stage_correct(cfg, &paths)?;
            vec![("posterior_checkpoint", paths.posterior.clone())]
        }
        Stage::Evaluate => {
            require(&paths.prior, stage, Stage::TrainPrior)?;
            require(&paths.posterior, stage, Stage::Correct)?;
            stage_evaluate(cfg, &paths)?;
            vec![
                ("prior_error", paths.prior_error.clone()),
                ("posterior_error", paths.posterior_error.clone()),
                ("truth_trajectory", paths.truth_trajectory.clone()),
                ("prior_trajectory", paths.prior_trajectory.clone()),
                ("posterior_trajectory", paths.posterior_trajectory.clone()),
            ]
        }
    };

    let mut artifacts = BTreeMap::new();
    for (name, path) in artifact_files {
        let rel = path
            .strip_prefix(dir)
            .unwrap_or(&path)
            .to_string_lossy()
            .into_owned();
        artifacts.insert(name.to_string(), ArtifactRecord { path: rel, sha256: hash_file(&path)? });
    }
    manifest.stages.insert(
        stage.name().to_string(),
        StageRecord { artifacts, wall_time_s: started.elapsed().as_secs_f64(), skipped: false },
    );
    Ok(())
}

/// A stage may be skipped when its record exists for this exact config and
/// every artifact still matches its recorded hash.
fn stage_is_current(stage: Stage, dir: &Path, manifest: &Manifest) -> Result<bool> {
    let Some(record) = manifest.stages.get(stage.name()) else {
        return Ok(false);
    };
    for artifact in record.artifacts.values() {
        let path = dir.join(&artifact.path);
        if !path.exists() || hash_file(&path)? != artifact.sha256 {
            return Ok(false);
        }
    }
    Ok(true)
}

fn require(path: &Path, stage: Stage, produced_by: Stage) -> Result<()> {
    if !path.exists() {
        return Err(PipelineError::MissingDependency {
            stage: stage.name(),
            path: path.display().to_string(),
            produced_by: produced_by.name(),
        });
    }
    Ok(())
}

fn stage_generate(cfg: &ExperimentConfig, paths: &ArtifactPaths) -> Result<()> {
    let seeds = cfg.derived_seeds();
    let lf = generate_dataset(
        &cfg.prior_system,
        &cfg.domain,
        cfg.data.j_lf,
        cfg.data.fine_step,
        &fml::LagSpec::Constant(1),
        cfg.data.lf_sampling,
        cfg.data.substeps,
        Fidelity::Low,
        seeds.lf_data,
    )?;
    fml::write_dataset(&lf, &paths.lf_csv, &paths.lf_meta)?;

    let hf = generate_dataset(
        &cfg.true_system,
        &cfg.domain,
        cfg.data.j_hf,
        cfg.data.fine_step,
        &cfg.data.lag_steps,
        cfg.data.hf_sampling,
        cfg.data.substeps,
        Fidelity::High,
        seeds.hf_data,
    )?;
    fml::write_dataset(&hf, &paths.hf_csv, &paths.hf_meta)?;
    Ok(())
}

fn stage_train_prior(cfg: &ExperimentConfig, paths: &ArtifactPaths) -> Result<()> {
    let seeds = cfg.derived_seeds();
    let lf = fml::read_dataset(&paths.lf_csv, &paths.lf_meta)?;
    let train_cfg = cfg.prior_training.to_train_config(seeds.prior_training);
    let (params, history) = train_prior(&lf, cfg.architecture, &train_cfg)?;
    let provenance = TrainProvenance {
        loss_history_tail: history[history.len().saturating_sub(10)..].to_vec(),
        epochs_run: history.len(),
    };
    checkpoint::save(&paths.prior, &params, seeds.prior_training, &provenance, None)?;
    Ok(())
}

fn stage_correct(cfg: &ExperimentConfig, paths: &ArtifactPaths) -> Result<()> {
    let seeds = cfg.derived_seeds();
    let hf = fml::read_dataset(&paths.hf_csv, &paths.hf_meta)?;
    let train_cfg = cfg.correction.training.to_train_config(seeds.correction_training);
    let freeze = FreezeSpec { split_index: cfg.correction.freeze_index };

    if cfg.correction.method == TlMethod::Gresnet {
        let mut corrector_arch = cfg.architecture;
        // The prior flow map already supplies the skip connection.
        corrector_arch.residual = false;
        let model = gresnet_correct(
            &cfg.prior_system,
            cfg.data.fine_step,
            cfg.data.substeps,
            &hf,
            corrector_arch,
            &train_cfg,
        )?;
        correction::save_gresnet(&paths.posterior, &model, seeds.correction_training)?;
        return Ok(());
    }

    let prior = checkpoint::load(&paths.prior)?;
    let posterior = match cfg.correction.method {
        TlMethod::TlAdam => transfer_learn(&prior.params, &hf, freeze, &train_cfg)?,
        TlMethod::TlLsq => last_layer_lsq(&prior.params, &hf, cfg.correction.ridge)?,
        TlMethod::TlRecurrent => transfer_learn_recurrent(&prior.params, &hf, freeze, &train_cfg)?,
        TlMethod::Gresnet => unreachable!("handled above"),
    };
    posterior.save(&paths.posterior, seeds.correction_training)?;
    Ok(())
}

fn stage_evaluate(cfg: &ExperimentConfig, paths: &ArtifactPaths) -> Result<()> {
    let seeds = cfg.derived_seeds();
    let prior = checkpoint::load(&paths.prior)?;
    let posterior: Predictor = if cfg.correction.method == TlMethod::Gresnet {
        Predictor::GResNet(correction::load_gresnet(&paths.posterior)?)
    } else {
        let ckpt = checkpoint::load(&paths.posterior)?;
        Predictor::Net { params: ckpt.params, step: cfg.data.fine_step }
    };
    let prior_predictor = Predictor::Net { params: prior.params, step: cfg.data.fine_step };

    let prior_curve = error_curve(
        &prior_predictor,
        &cfg.true_system,
        &cfg.eval_domain,
        cfg.eval.n_traj,
        cfg.eval.horizon,
        cfg.data.fine_step,
        seeds.evaluation,
        cfg.eval.substeps,
    )?;
    write_error_csv(&paths.prior_error, &prior_curve)?;
    let posterior_curve = error_curve(
        &posterior,
        &cfg.true_system,
        &cfg.eval_domain,
        cfg.eval.n_traj,
        cfg.eval.horizon,
        cfg.data.fine_step,
        seeds.evaluation,
        cfg.eval.substeps,
    )?;
    write_error_csv(&paths.posterior_error, &posterior_curve)?;

    // One example trajectory from the first evaluation initial condition.
    let x0 = flowcorr::eval::draw_initials(&cfg.true_system, &cfg.eval_domain, 1, seeds.evaluation)?
        .remove(0);
    let n_steps = (cfg.eval.horizon / cfg.data.fine_step).round() as usize;
    let guard = cfg.domain.scaled(cfg.eval.guard_factor);
    let truth_pred = Predictor::Reference {
        system: cfg.true_system.clone(),
        substeps: cfg.eval.substeps,
        step: cfg.data.fine_step,
    };
    for (predictor, path) in [
        (&truth_pred, &paths.truth_trajectory),
        (&prior_predictor, &paths.prior_trajectory),
        (&posterior, &paths.posterior_trajectory),
    ] {
        let roll = rollout(predictor, &x0, n_steps, Some(&guard))?;
        write_trajectory_csv(path, &roll.states, cfg.data.fine_step)?;
    }
    Ok(())
}
