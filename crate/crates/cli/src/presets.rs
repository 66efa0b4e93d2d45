//! Named experiment presets with every field pre-filled.
//!
//! The first four pair a one-step high-fidelity set with a last-layer
//! correction; the `-coarse` variants observe the true system over larger,
//! randomly drawn lags and correct the final two layers through the
//! composed loss.

use flowcorr::correction::TlMethod;
use flowcorr::dynsys::{Domain, MetabolicParams, SeirVariant, SystemSpec};
use flowcorr::fml::{LagSpec, SamplingMode};
use flowcorr::nnet::{Activation, Architecture};

use crate::config::{
    CorrectionConfig, DataConfig, EvalConfig, ExperimentConfig, TrainingSpec,
};

pub const PRESET_NAMES: [&str; 8] = [
    "damped-pendulum",
    "duffing",
    "seir",
    "metabolic",
    "damped-pendulum-coarse",
    "van-der-pol-coarse",
    "dae-coarse",
    "metabolic-coarse",
];

const PI: f64 = std::f64::consts::PI;

fn arch(n: usize, layers: usize, width: usize) -> Architecture {
    Architecture {
        input_dim: n,
        hidden_layers: layers,
        hidden_width: width,
        activation: Activation::Tanh,
        residual: true,
    }
}

fn training(epochs: usize, patience: Option<usize>) -> TrainingSpec {
    TrainingSpec { epochs, batch_size: 100, lr: 1e-3, patience, shuffle: true }
}

fn tl_training() -> TrainingSpec {
    TrainingSpec { epochs: 5000, batch_size: 100, lr: 1e-3, patience: Some(1000), shuffle: true }
}

fn lsq_correction(hidden_layers: usize) -> CorrectionConfig {
    CorrectionConfig {
        method: TlMethod::TlLsq,
        freeze_index: hidden_layers,
        ridge: 0.0,
        training: tl_training(),
    }
}

fn recurrent_correction(hidden_layers: usize) -> CorrectionConfig {
    CorrectionConfig {
        method: TlMethod::TlRecurrent,
        freeze_index: hidden_layers - 1,
        ridge: 0.0,
        training: tl_training(),
    }
}

/// Coarse lags 1.0, 1.2, ..., 10.0 over a 0.2 fine step.
fn coarse_lag_set() -> LagSpec {
    LagSpec::UniformSet((5..=50).collect())
}

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    let cfg = match name {
        "damped-pendulum" => {
            let domain = Domain::new(vec![-PI, -2.0 * PI], vec![PI, 2.0 * PI]).unwrap();
            ExperimentConfig {
                experiment: name.into(),
                seed: 42,
                scale: 1.0,
                true_system: SystemSpec::damped_pendulum(0.1, 9.0),
                prior_system: SystemSpec::harmonic_oscillator(9.0),
                // Evaluation draws from the librating sub-box: trajectories
                // started there stay inside the sampling domain, so the
                // comparison probes the corrected dynamics rather than
                // out-of-domain extrapolation (initial speeds above the
                // separatrix make the pendulum revolve and the angle leave
                // the training box).
                eval_domain: Domain::new(vec![-1.6, -3.0], vec![1.6, 3.0]).unwrap(),
                domain,
                data: DataConfig {
                    fine_step: 0.1,
                    lag_steps: LagSpec::Constant(1),
                    j_lf: 30_000,
                    j_hf: 250,
                    lf_sampling: SamplingMode::DirectPairs,
                    hf_sampling: SamplingMode::DirectPairs,
                    substeps: 10,
                },
                architecture: arch(2, 3, 50),
                prior_training: training(10_000, None),
                correction: lsq_correction(3),
                eval: EvalConfig { n_traj: 100, horizon: 100.0, substeps: 10, guard_factor: 10.0 },
                holdout_fraction: flowcorr::fml::HOLDOUT_FRACTION,
            }
        }
        "duffing" => {
            let domain = Domain::new(vec![0.0, 0.0], vec![3.0, 3.0]).unwrap();
            ExperimentConfig {
                experiment: name.into(),
                seed: 42,
                scale: 1.0,
                true_system: SystemSpec::duffing(0.05),
                prior_system: SystemSpec::harmonic_oscillator(1.0),
                eval_domain: domain.clone(),
                domain,
                data: DataConfig {
                    fine_step: 0.1,
                    lag_steps: LagSpec::Constant(1),
                    j_lf: 30_000,
                    j_hf: 500,
                    lf_sampling: SamplingMode::TrajectoryWindow { horizon: 12.0 },
                    hf_sampling: SamplingMode::TrajectoryWindow { horizon: 12.0 },
                    substeps: 10,
                },
                architecture: arch(2, 3, 50),
                prior_training: training(10_000, None),
                correction: lsq_correction(3),
                eval: EvalConfig { n_traj: 100, horizon: 100.0, substeps: 10, guard_factor: 10.0 },
                holdout_fraction: flowcorr::fml::HOLDOUT_FRACTION,
            }
        }
        "seir" => {
            let domain = Domain::new(vec![0.0; 4], vec![1.0; 4]).unwrap();
            ExperimentConfig {
                experiment: name.into(),
                seed: 42,
                scale: 1.0,
                true_system: SystemSpec::seir(0.1792, 0.8669, 0.3562, 0.2235, SeirVariant::Standard),
                prior_system: SystemSpec::seir(0.3, 0.9, 0.5, 0.2, SeirVariant::Standard),
                eval_domain: domain.clone(),
                domain,
                data: DataConfig {
                    fine_step: 0.2,
                    lag_steps: LagSpec::Constant(1),
                    j_lf: 30_000,
                    j_hf: 250,
                    lf_sampling: SamplingMode::TrajectoryWindow { horizon: 5.0 },
                    hf_sampling: SamplingMode::DirectPairs,
                    substeps: 10,
                },
                architecture: arch(4, 3, 50),
                prior_training: training(10_000, None),
                correction: lsq_correction(3),
                eval: EvalConfig { n_traj: 100, horizon: 20.0, substeps: 10, guard_factor: 10.0 },
                holdout_fraction: flowcorr::fml::HOLDOUT_FRACTION,
            }
        }
        "metabolic" => {
            let domain = Domain::new(vec![0.0; 8], vec![1.0; 8]).unwrap();
            ExperimentConfig {
                experiment: name.into(),
                seed: 42,
                scale: 1.0,
                true_system: SystemSpec::metabolic(MetabolicParams::nominal()),
                prior_system: SystemSpec::metabolic(MetabolicParams::nominal().misspecified()),
                eval_domain: domain.clone(),
                domain,
                data: DataConfig {
                    fine_step: 0.05,
                    lag_steps: LagSpec::Constant(1),
                    j_lf: 75_000,
                    j_hf: 750,
                    lf_sampling: SamplingMode::TrajectoryWindow { horizon: 12.5 },
                    hf_sampling: SamplingMode::DirectPairs,
                    substeps: 10,
                },
                architecture: arch(8, 3, 80),
                prior_training: training(20_000, None),
                correction: lsq_correction(3),
                eval: EvalConfig { n_traj: 100, horizon: 25.0, substeps: 10, guard_factor: 10.0 },
                holdout_fraction: flowcorr::fml::HOLDOUT_FRACTION,
            }
        }
        "damped-pendulum-coarse" => {
            // Angle in [-pi, pi], velocity in [-2pi, 2pi]: the published
            // example initial condition (-0.242, -4.241) only fits this
            // orientation of the box.
            let domain = Domain::new(vec![-PI, -2.0 * PI], vec![PI, 2.0 * PI]).unwrap();
            ExperimentConfig {
                experiment: name.into(),
                seed: 42,
                scale: 1.0,
                true_system: SystemSpec::damped_pendulum(0.1, 9.0),
                prior_system: SystemSpec::harmonic_oscillator(9.0),
                // Librating initial conditions, as for `damped-pendulum`.
                eval_domain: Domain::new(vec![-1.6, -3.0], vec![1.6, 3.0]).unwrap(),
                domain,
                data: DataConfig {
                    fine_step: 0.2,
                    lag_steps: coarse_lag_set(),
                    j_lf: 50_000,
                    j_hf: 500,
                    lf_sampling: SamplingMode::DirectPairs,
                    hf_sampling: SamplingMode::DirectPairs,
                    substeps: 10,
                },
                architecture: arch(2, 5, 50),
                prior_training: training(10_000, Some(1000)),
                correction: recurrent_correction(5),
                eval: EvalConfig { n_traj: 100, horizon: 100.0, substeps: 10, guard_factor: 10.0 },
                holdout_fraction: flowcorr::fml::HOLDOUT_FRACTION,
            }
        }
        "van-der-pol-coarse" => {
            let domain = Domain::new(vec![-2.0, -1.5], vec![2.0, 1.5]).unwrap();
            ExperimentConfig {
                experiment: name.into(),
                seed: 42,
                scale: 1.0,
                true_system: SystemSpec::van_der_pol(1.0),
                prior_system: SystemSpec::van_der_pol(0.5),
                eval_domain: domain.clone(),
                domain,
                data: DataConfig {
                    fine_step: 0.2,
                    lag_steps: coarse_lag_set(),
                    j_lf: 50_000,
                    j_hf: 500,
                    lf_sampling: SamplingMode::TrajectoryWindow { horizon: 20.0 },
                    hf_sampling: SamplingMode::DirectPairs,
                    substeps: 10,
                },
                architecture: arch(2, 5, 50),
                prior_training: training(10_000, Some(1000)),
                correction: recurrent_correction(5),
                eval: EvalConfig { n_traj: 100, horizon: 100.0, substeps: 10, guard_factor: 10.0 },
                holdout_fraction: flowcorr::fml::HOLDOUT_FRACTION,
            }
        }
        "dae-coarse" => {
            let domain = Domain::new(vec![-2.0, -0.2], vec![2.0, 0.2]).unwrap();
            ExperimentConfig {
                experiment: name.into(),
                seed: 42,
                scale: 1.0,
                true_system: SystemSpec::dae_circuit(1e-9, 1e-6, 1.0, -0.1, 0.25, false),
                prior_system: SystemSpec::dae_circuit(1e-9, 1e-6, 1.0, -0.1, 0.25, true),
                eval_domain: domain.clone(),
                domain,
                data: DataConfig {
                    fine_step: 5e-9,
                    // Coarse lags 2.5e-8 .. 1.5e-7 in steps of 5e-9.
                    lag_steps: LagSpec::UniformSet((5..=30).collect()),
                    j_lf: 60_000,
                    j_hf: 500,
                    lf_sampling: SamplingMode::TrajectoryWindow { horizon: 5e-7 },
                    hf_sampling: SamplingMode::DirectPairs,
                    substeps: 10,
                },
                architecture: arch(4, 5, 50),
                prior_training: training(10_000, Some(1000)),
                correction: recurrent_correction(5),
                eval: EvalConfig { n_traj: 100, horizon: 2.5e-6, substeps: 10, guard_factor: 10.0 },
                holdout_fraction: flowcorr::fml::HOLDOUT_FRACTION,
            }
        }
        "metabolic-coarse" => {
            let domain = Domain::new(vec![0.0; 8], vec![1.0; 8]).unwrap();
            ExperimentConfig {
                experiment: name.into(),
                seed: 42,
                scale: 1.0,
                true_system: SystemSpec::metabolic(MetabolicParams::nominal()),
                prior_system: SystemSpec::metabolic(MetabolicParams::nominal().misspecified()),
                eval_domain: domain.clone(),
                domain,
                data: DataConfig {
                    fine_step: 0.2,
                    lag_steps: coarse_lag_set(),
                    j_lf: 60_000,
                    j_hf: 500,
                    lf_sampling: SamplingMode::TrajectoryWindow { horizon: 20.0 },
                    hf_sampling: SamplingMode::DirectPairs,
                    substeps: 10,
                },
                architecture: arch(8, 5, 50),
                prior_training: training(10_000, Some(1000)),
                correction: recurrent_correction(5),
                eval: EvalConfig { n_traj: 100, horizon: 25.0, substeps: 10, guard_factor: 10.0 },
                holdout_fraction: flowcorr::fml::HOLDOUT_FRACTION,
            }
        }
        _ => return None,
    };
    Some(cfg)
}
