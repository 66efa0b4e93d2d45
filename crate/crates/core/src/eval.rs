//! Rollout prediction and trajectory-ensemble error curves.
//!
//! A [`Predictor`] advances the state by one fine step, whether it is a
//! trained network, the additive-correction baseline, or the reference
//! integrator itself. Error curves average the Euclidean error over an
//! ensemble of seeded initial conditions against fine-RK4 truth.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::correction::GResNetModel;
use crate::dynsys::{Domain, State, SystemSpec};
use crate::error::{Error, Result};
use crate::nnet::NetParams;
use crate::numfmt::{fmt17, parse_f64};
use crate::parallel;

/// Anything that maps a state one fine step forward.
#[derive(Debug, Clone)]
pub enum Predictor {
    /// A trained flow-map network.
    Net { params: NetParams, step: f64 },
    /// Prior flow map plus additive corrector.
    GResNet(GResNetModel),
    /// The RK4 reference propagator.
    Reference { system: SystemSpec, substeps: u32, step: f64 },
}

impl Predictor {
    pub fn step_size(&self) -> f64 {
        match self {
            Predictor::Net { step, .. } => *step,
            Predictor::GResNet(m) => m.lag,
            Predictor::Reference { step, .. } => *step,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Predictor::Net { params, .. } => params.arch.input_dim,
            Predictor::GResNet(m) => m.corrector.arch.input_dim,
            Predictor::Reference { system, .. } => system.dim,
        }
    }

    /// One step of the fine lag.
    pub fn apply(&self, x: &State) -> Result<State> {
        match self {
            Predictor::Net { params, .. } => Ok(State(params.predict(x)?)),
            Predictor::GResNet(m) => m.predict(x),
            Predictor::Reference { system, substeps, step } => {
                system.flow_map(x, *step, *substeps)
            }
        }
    }
}

/// A predicted trajectory; `truncated` marks an early stop at a non-finite
/// state or a guard-box exit.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub states: Vec<State>,
    pub truncated: bool,
}

/// Iterate `p` from `x0` for `n_steps` steps. Divergence is expected
/// behavior for uncorrected priors, so a blow-up truncates the trajectory
/// instead of failing: a non-finite next state stops before recording it,
/// and a state leaving `guard` is recorded and then stops the rollout.
pub fn rollout(p: &Predictor, x0: &State, n_steps: usize, guard: Option<&Domain>) -> Result<Rollout> {
    if x0.dim() != p.dim() {
        return Err(Error::DimensionMismatch {
            context: "rollout",
            expected: p.dim(),
            got: x0.dim(),
        });
    }
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(x0.clone());
    for _ in 0..n_steps {
        let next = match p.apply(states.last().expect("non-empty")) {
            Ok(s) => s,
            // Reference integrators signal blow-up as an error; treat it the
            // same as a non-finite network output.
            Err(Error::IntegratorBlowup { .. }) => return Ok(Rollout { states, truncated: true }),
            Err(e) => return Err(e),
        };
        if !next.is_finite() {
            return Ok(Rollout { states, truncated: true });
        }
        let escaped = guard.map(|g| !g.contains(&next)).unwrap_or(false);
        states.push(next);
        if escaped {
            return Ok(Rollout { states, truncated: true });
        }
    }
    Ok(Rollout { states, truncated: false })
}

/// Mean prediction error over an ensemble, per time index.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCurve {
    pub times: Vec<f64>,
    /// Mean Euclidean error over the ensemble.
    pub mean_l2: Vec<f64>,
    /// Mean absolute error per state component.
    pub per_component: Option<Vec<Vec<f64>>>,
    /// Trajectories that hit the divergence guard; they contribute their
    /// last valid value from there on.
    pub truncated_trajectories: usize,
}

impl ErrorCurve {
    /// Time average of the mean error (the first index, which is zero by
    /// construction, is included).
    pub fn time_averaged(&self) -> f64 {
        if self.mean_l2.is_empty() {
            return 0.0;
        }
        self.mean_l2.iter().sum::<f64>() / self.mean_l2.len() as f64
    }
}

/// How far the divergence guard sits from the sampling box.
pub const GUARD_FACTOR: f64 = 10.0;

/// Average prediction error of `model` against fine-RK4 truth over
/// `n_traj` initial conditions drawn uniformly in `domain`. Initial
/// condition `i` derives from stream `i` of `seed`.
#[allow(clippy::too_many_arguments)]
pub fn error_curve(
    model: &Predictor,
    truth: &SystemSpec,
    domain: &Domain,
    n_traj: usize,
    horizon: f64,
    fine_step: f64,
    seed: u64,
    substeps: u32,
) -> Result<ErrorCurve> {
    if n_traj == 0 {
        return Err(Error::InvalidConfig("error_curve needs n_traj >= 1".into()));
    }
    let n_steps = steps_for(horizon, fine_step)?;
    let initials = draw_initials(truth, domain, n_traj, seed)?;
    error_curve_for_initials(model, truth, domain, &initials, n_steps, fine_step, substeps)
}

/// Ensemble initial conditions: trajectory `i` derives from stream `i` of
/// the seeded generator, uniform over the domain box, algebraic components
/// reconstructed.
pub fn draw_initials(
    system: &SystemSpec,
    domain: &Domain,
    count: usize,
    seed: u64,
) -> Result<Vec<State>> {
    parallel::map_indexed(count, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let mut x = vec![0.0; system.dim];
        for c in 0..domain.dim() {
            let u: f64 = rng.gen();
            x[c] = domain.lower[c] + u * (domain.upper[c] - domain.lower[c]);
        }
        system.reconstruct_algebraic(&mut x);
        Ok(State(x))
    })
}

/// Error curve over explicit initial conditions. Exposed so ensembles can be
/// combined and compared.
pub fn error_curve_for_initials(
    model: &Predictor,
    truth: &SystemSpec,
    domain: &Domain,
    initials: &[State],
    n_steps: usize,
    fine_step: f64,
    substeps: u32,
) -> Result<ErrorCurve> {
    let dim = truth.dim;
    let guard = domain.scaled(GUARD_FACTOR);

    struct TrajErrors {
        l2: Vec<f64>,
        per_comp: Vec<f64>,
        truncated: bool,
    }

    let per_traj = parallel::map_indexed(initials.len(), |i| {
        let x0 = &initials[i];
        let mut truth_state = x0.clone();
        let pred = rollout(model, x0, n_steps, Some(&guard))?;
        let mut l2 = Vec::with_capacity(n_steps + 1);
        let mut per_comp = vec![0.0; (n_steps + 1) * dim];
        for step in 0..=n_steps {
            if step > 0 {
                truth_state = truth
                    .flow_map(&truth_state, fine_step, substeps)
                    .map_err(|e| Error::SampleBlowup { sample: i, source: Box::new(e) })?;
            }
            // A truncated prediction contributes its last valid state.
            let predicted = &pred.states[step.min(pred.states.len() - 1)];
            let mut sq = 0.0;
            for c in 0..dim {
                let diff = predicted[c] - truth_state[c];
                sq += diff * diff;
                per_comp[step * dim + c] = diff.abs();
            }
            l2.push(sq.sqrt());
        }
        Ok(TrajErrors { l2, per_comp, truncated: pred.truncated })
    })?;

    let n_traj = initials.len() as f64;
    let mut mean_l2 = vec![0.0; n_steps + 1];
    let mut per_component = vec![vec![0.0; dim]; n_steps + 1];
    let mut truncated = 0usize;
    for traj in &per_traj {
        for step in 0..=n_steps {
            mean_l2[step] += traj.l2[step];
            for c in 0..dim {
                per_component[step][c] += traj.per_comp[step * dim + c];
            }
        }
        truncated += traj.truncated as usize;
    }
    for step in 0..=n_steps {
        mean_l2[step] /= n_traj;
        for c in 0..dim {
            per_component[step][c] /= n_traj;
        }
    }

    Ok(ErrorCurve {
        times: (0..=n_steps).map(|i| i as f64 * fine_step).collect(),
        mean_l2,
        per_component: Some(per_component),
        truncated_trajectories: truncated,
    })
}

fn steps_for(horizon: f64, fine_step: f64) -> Result<usize> {
    if !(horizon > 0.0) || !(fine_step > 0.0) {
        return Err(Error::InvalidConfig("horizon and fine_step must be > 0".into()));
    }
    let steps = (horizon / fine_step).round();
    if ((steps * fine_step - horizon) / horizon).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "horizon {horizon} is not a multiple of the fine step {fine_step}"
        )));
    }
    Ok(steps as usize)
}

// ---------------------------------------------------------------------------
// CSV export.
// ---------------------------------------------------------------------------

/// Trajectory rows `t,x_0..x_{n-1}`, 17-significant-digit decimals, LF line
/// endings.
pub fn write_trajectory_csv(path: &Path, states: &[State], fine_step: f64) -> Result<()> {
    let dim = states.first().map(|s| s.dim()).unwrap_or(0);
    let mut out = String::from("t");
    for c in 0..dim {
        out.push_str(&format!(",x_{c}"));
    }
    out.push('\n');
    for (i, s) in states.iter().enumerate() {
        out.push_str(&fmt17(i as f64 * fine_step));
        for v in s.iter() {
            out.push(',');
            out.push_str(&fmt17(*v));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Error-curve rows `t,mean_l2[,comp_0..comp_{n-1}]`.
pub fn write_error_csv(path: &Path, curve: &ErrorCurve) -> Result<()> {
    let dim = curve
        .per_component
        .as_ref()
        .and_then(|pc| pc.first().map(|row| row.len()))
        .unwrap_or(0);
    let mut out = String::from("t,mean_l2");
    for c in 0..dim {
        out.push_str(&format!(",comp_{c}"));
    }
    out.push('\n');
    for (i, t) in curve.times.iter().enumerate() {
        out.push_str(&fmt17(*t));
        out.push(',');
        out.push_str(&fmt17(curve.mean_l2[i]));
        if let Some(pc) = &curve.per_component {
            for v in &pc[i] {
                out.push(',');
                out.push_str(&fmt17(*v));
            }
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read back an error CSV (bit-exact for files written by
/// [`write_error_csv`]).
pub fn read_error_csv(path: &Path) -> Result<ErrorCurve> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let path_str = path.display().to_string();
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse {
        path: path_str.clone(),
        reason: "missing header".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 || cols[0] != "t" || cols[1] != "mean_l2" {
        return Err(Error::Parse { path: path_str, reason: format!("unexpected header `{header}`") });
    }
    let dim = cols.len() - 2;
    let mut times = Vec::new();
    let mut mean_l2 = Vec::new();
    let mut per_component = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 + dim {
            return Err(Error::Parse {
                path: path_str,
                reason: format!("expected {} fields, got {}", 2 + dim, fields.len()),
            });
        }
        times.push(parse_f64(fields[0], &path_str)?);
        mean_l2.push(parse_f64(fields[1], &path_str)?);
        let mut row = Vec::with_capacity(dim);
        for f in &fields[2..] {
            row.push(parse_f64(f, &path_str)?);
        }
        per_component.push(row);
    }
    Ok(ErrorCurve {
        times,
        mean_l2,
        per_component: if dim > 0 { Some(per_component) } else { None },
        truncated_trajectories: 0,
    })
}
