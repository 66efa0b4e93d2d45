//! Acceptance suite: one test per release criterion, each printing a
//! PASS line (visible with `--nocapture`) once its assertions hold.
//!
//! Criteria 6-9 run the full pipeline at reduced scale and take minutes;
//! criterion 10's full-scale pendulum run is `#[ignore]`d for nightly use:
//!
//! ```text
//! cargo test -p flowcorr-cli --test acceptance -- --nocapture
//! cargo test -p flowcorr-cli --test acceptance -- --ignored   # nightly
//! ```

use std::path::{Path, PathBuf};

use flowcorr::correction::{
    build_feature_matrix, build_target_matrix, last_layer_lsq, one_step_mse,
    recurrent_loss_and_grads, tl_loss_and_grads, transfer_learn, transfer_learn_recurrent,
};
use flowcorr::dynsys::{Domain, State, SystemSpec};
use flowcorr::eval::read_error_csv;
use flowcorr::fml::{generate_dataset, Dataset, Fidelity, LagSpec, SamplingMode, TrainConfig};
use flowcorr::nnet::{Activation, Architecture, FreezeSpec, NetParams};

use flowcorr_cli::config::ExperimentConfig;
use flowcorr_cli::pipeline::{run_pipeline, ArtifactPaths};
use flowcorr_cli::presets::preset;

fn pass(n: u32, slug: &str) {
    println!("[acceptance] criterion {n} ({slug}): PASS");
}

fn tmp(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn arch_3x20() -> Architecture {
    Architecture {
        input_dim: 2,
        hidden_layers: 3,
        hidden_width: 20,
        activation: Activation::Tanh,
        residual: true,
    }
}

/// Loss used by the finite-difference oracles.
fn fd_loss(params: &NetParams, data: &Dataset, composed: bool) -> f64 {
    if composed {
        flowcorr::correction::composed_mse(params, data).unwrap()
    } else {
        one_step_mse(params, data).unwrap()
    }
}

/// Max relative error between analytic gradients and central differences
/// over every parameter.
fn max_fd_gap(params: &NetParams, data: &Dataset, composed: bool) -> f64 {
    let grads = if composed {
        recurrent_loss_and_grads(params, data).unwrap().1
    } else {
        tl_loss_and_grads(params, data).unwrap().1
    };
    let h = 1e-6;
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for li in 0..params.layers.len() {
        let n_w = params.layers[li].weights.len();
        let n_total = n_w + params.layers[li].bias.len();
        for wi in 0..n_total {
            let read = |p: &NetParams| {
                if wi < n_w { p.layers[li].weights[wi] } else { p.layers[li].bias[wi - n_w] }
            };
            let write = |p: &mut NetParams, v: f64| {
                if wi < n_w {
                    p.layers[li].weights[wi] = v;
                } else {
                    p.layers[li].bias[wi - n_w] = v;
                }
            };
            let orig = read(params);
            write(&mut probe, orig + h);
            let lp = fd_loss(&probe, data, composed);
            write(&mut probe, orig - h);
            let lm = fd_loss(&probe, data, composed);
            write(&mut probe, orig);
            let fd = (lp - lm) / (2.0 * h);
            let an = if wi < n_w {
                grads.layers[li].weights[wi]
            } else {
                grads.layers[li].bias[wi - n_w]
            };
            // Central differences carry ~1e-10 absolute noise (loss roundoff
            // over 2h), so entries below 1e-3 are compared absolutely at the
            // 1e-9 level instead of purely relatively.
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    worst
}

fn pendulum_pairs(count: usize, lag: &LagSpec, seed: u64) -> Dataset {
    let domain = Domain::new(vec![-1.5, -2.0], vec![1.5, 2.0]).unwrap();
    generate_dataset(
        &SystemSpec::damped_pendulum(0.1, 9.0),
        &domain,
        count,
        0.1,
        lag,
        SamplingMode::DirectPairs,
        10,
        Fidelity::High,
        seed,
    )
    .unwrap()
}

// ---------------------------------------------------------------------------
// 1. Gradient exactness.
// ---------------------------------------------------------------------------
#[test]
fn criterion_1_gradient_exactness() {
    for seed in [11u64, 12, 13] {
        let params = NetParams::init(arch_3x20(), seed).unwrap();
        let plain = pendulum_pairs(4, &LagSpec::Constant(1), 100 + seed);
        let gap = max_fd_gap(&params, &plain, false);
        assert!(gap < 1e-6, "plain gradient rel err {gap:e} (seed {seed})");
    }
    for k in [1u32, 3, 5] {
        let params = NetParams::init(arch_3x20(), 21 + k as u64).unwrap();
        let coarse = pendulum_pairs(3, &LagSpec::Constant(k), 200 + k as u64);
        let gap = max_fd_gap(&params, &coarse, true);
        assert!(gap < 1e-5, "unrolled gradient rel err {gap:e} (k = {k})");
    }
    pass(1, "gradient-exactness");
}

// ---------------------------------------------------------------------------
// 2. Least-squares oracle and convex-case Adam convergence.
// ---------------------------------------------------------------------------
#[test]
fn criterion_2_lsq_oracle() {
    use rand::{Rng, SeedableRng};
    // Random tanh features grow collinear with width, parking parts of the
    // least-squares solution far out along tiny singular values where
    // first-order methods cannot follow; the convexity check calls for a
    // well-conditioned instance, which width 8 provides (conditioning is
    // asserted below).
    let prior = NetParams::init(
        Architecture {
            input_dim: 2,
            hidden_layers: 2,
            hidden_width: 8,
            activation: Activation::Tanh,
            residual: true,
        },
        31,
    )
    .unwrap();
    let d = prior.arch.hidden_width;
    let out_layer = prior.arch.hidden_layers;

    // Planted solution: B = A W for a random W, J >= d + 1 and full rank.
    // The wide input box keeps the tanh features spread out.
    let domain = Domain::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap();
    let mut hf = generate_dataset(
        &SystemSpec::damped_pendulum(0.1, 9.0),
        &domain,
        200,
        0.1,
        &LagSpec::Constant(1),
        SamplingMode::DirectPairs,
        10,
        Fidelity::High,
        301,
    )
    .unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
    let planted: Vec<f64> = (0..(d + 1) * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let inputs: Vec<State> = hf.pairs.iter().map(|p| p.x1.clone()).collect();
    let features = build_feature_matrix(&prior, &inputs).unwrap();
    for (row, pair) in hf.pairs.iter_mut().enumerate() {
        let a_row = &features.data[row * features.cols..(row + 1) * features.cols];
        let mut target = [0.0f64; 2];
        for o in 0..2 {
            for j in 0..features.cols {
                target[o] += a_row[j] * planted[j * 2 + o];
            }
            target[o] += pair.x1[o]; // undo the residual skip
        }
        pair.x2 = State(target.to_vec());
    }
    let recovered = last_layer_lsq(&prior, &hf, 0.0).unwrap();
    let out = &recovered.params.layers[out_layer];
    for o in 0..2 {
        let expect_bias = planted[o];
        assert!(
            (out.bias[o] - expect_bias).abs() <= 1e-8 * expect_bias.abs().max(1.0),
            "planted bias {o} off by {:e}",
            (out.bias[o] - expect_bias).abs()
        );
        for j in 0..d {
            let expect = planted[(j + 1) * 2 + o];
            let got = out.weights[o * d + j];
            assert!(
                (got - expect).abs() <= 1e-8 * expect.abs().max(1.0),
                "planted weight ({o},{j}) off by {:e}",
                (got - expect).abs()
            );
        }
    }

    // Normal-equation optimality on noisy (inconsistent) targets.
    let mut noisy = hf.clone();
    for pair in &mut noisy.pairs {
        pair.x2 = State(vec![
            pair.x2[0] + 1e-3 * rng.gen_range(-1.0..1.0),
            pair.x2[1] + 1e-3 * rng.gen_range(-1.0..1.0),
        ]);
    }
    let solved = last_layer_lsq(&prior, &noisy, 0.0).unwrap();
    let fm = build_feature_matrix(&prior, &inputs).unwrap();
    let tm = build_target_matrix(&prior, &noisy);
    let a = nalgebra_matrix(fm.rows, fm.cols, &fm.data);
    let b = nalgebra_matrix(tm.rows, tm.cols, &tm.data);

    // Confirm the instance really is well-conditioned.
    {
        let sv = a.clone().svd(false, false).singular_values;
        let sig_max = sv.iter().cloned().fold(0.0f64, f64::max);
        let sig_min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(
            sig_max / sig_min < 1e3,
            "feature matrix condition number {:.1e} too large for the convexity check",
            sig_max / sig_min
        );
    }
    let mut w = nalgebra::DMatrix::zeros(fm.cols, 2);
    let out = &solved.params.layers[out_layer];
    for o in 0..2 {
        w[(0, o)] = out.bias[o];
        for j in 0..d {
            w[(j + 1, o)] = out.weights[o * d + j];
        }
    }
    let gram_residual = a.transpose() * (&a * &w - &b);
    let atb = a.transpose() * &b;
    let max_res = gram_residual.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let max_atb = atb.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(
        max_res < 1e-8 * max_atb,
        "normal-equation residual {max_res:e} vs scale {max_atb:e}"
    );

    // tl-adam with l = M lands on the least-squares objective. A decaying
    // learning-rate cascade warm-starts each leg from the previous one.
    let lsq_mse = one_step_mse(&solved.params, &noisy).unwrap();
    let freeze = FreezeSpec::last_layer(&prior.arch);
    let mut current = prior.clone();
    for (lr, epochs) in
        [(1e-2, 4000), (1e-3, 8000), (1e-4, 12000), (1e-5, 12000), (3e-6, 12000)]
    {
        let cfg = TrainConfig {
            epochs,
            batch_size: noisy.len(),
            lr,
            patience: None,
            seed: 5,
            shuffle: false,
        };
        current = transfer_learn(&current, &noisy, freeze, &cfg).unwrap().params;
    }
    let adam_mse = one_step_mse(&current, &noisy).unwrap();
    assert!(adam_mse + 1e-12 >= lsq_mse, "Adam below the convex optimum");
    assert!(
        (adam_mse - lsq_mse).abs() < 1e-6,
        "tl-adam vs LSQ objective gap {:e}",
        (adam_mse - lsq_mse).abs()
    );
    pass(2, "lsq-oracle");
}

fn nalgebra_matrix(rows: usize, cols: usize, data: &[f64]) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_row_slice(rows, cols, data)
}

// ---------------------------------------------------------------------------
// 3. Recurrent degeneration at k = 1.
// ---------------------------------------------------------------------------
#[test]
fn criterion_3_recurrent_degeneration() {
    let prior = NetParams::init(arch_3x20(), 41).unwrap();
    let hf = pendulum_pairs(40, &LagSpec::Constant(1), 401);

    let (loss_plain, grads_plain) = tl_loss_and_grads(&prior, &hf).unwrap();
    let (loss_rec, grads_rec) = recurrent_loss_and_grads(&prior, &hf).unwrap();
    assert_eq!(loss_plain.to_bits(), loss_rec.to_bits(), "loss bits differ");
    for (lp, lr) in grads_plain.layers.iter().zip(&grads_rec.layers) {
        for (a, b) in lp.weights.iter().zip(&lr.weights).chain(lp.bias.iter().zip(&lr.bias)) {
            assert_eq!(a.to_bits(), b.to_bits(), "gradient bits differ");
        }
    }

    // Entire optimizations coincide bit-for-bit as well.
    let freeze = FreezeSpec { split_index: 2 };
    let cfg = TrainConfig {
        epochs: 25,
        batch_size: 64,
        lr: 1e-3,
        patience: None,
        seed: 6,
        shuffle: true,
    };
    let a = transfer_learn(&prior, &hf, freeze, &cfg).unwrap();
    let b = transfer_learn_recurrent(&prior, &hf, freeze, &cfg).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.loss_history, b.loss_history);
    pass(3, "recurrent-degeneration");
}

// ---------------------------------------------------------------------------
// 4. Freeze integrity across every correction method.
// ---------------------------------------------------------------------------
#[test]
fn criterion_4_freeze_integrity() {
    let prior = NetParams::init(arch_3x20(), 51).unwrap();
    let one_step = pendulum_pairs(40, &LagSpec::Constant(1), 501);
    let coarse = pendulum_pairs(25, &LagSpec::UniformSet(vec![2, 3, 5]), 502);
    let cfg = TrainConfig {
        epochs: 40,
        batch_size: 40,
        lr: 1e-3,
        patience: None,
        seed: 8,
        shuffle: true,
    };

    let freeze2 = FreezeSpec { split_index: 2 };
    let tl = transfer_learn(&prior, &one_step, freeze2, &cfg).unwrap();
    let lsq = last_layer_lsq(&prior, &one_step, 0.0).unwrap();
    let rec = transfer_learn_recurrent(&prior, &coarse, freeze2, &cfg).unwrap();

    let frozen_bytes = |params: &NetParams, upto: usize| -> Vec<u8> {
        let mut bytes = Vec::new();
        for layer in &params.layers[..upto] {
            for w in &layer.weights {
                bytes.extend_from_slice(&w.to_le_bytes());
            }
            for b in &layer.bias {
                bytes.extend_from_slice(&b.to_le_bytes());
            }
        }
        bytes
    };
    for (posterior, l) in [(&tl, 2usize), (&lsq, 3), (&rec, 2)] {
        assert_eq!(
            frozen_bytes(&posterior.params, l),
            frozen_bytes(&prior, l),
            "frozen prefix changed under {:?}",
            posterior.provenance.method
        );
    }
    // The additive baseline never touches the prior network at all: its
    // correction applies on top of the prior system's flow map, which is
    // parameter-free; nothing to check beyond construction succeeding.
    pass(4, "freeze-integrity");
}

// ---------------------------------------------------------------------------
// 5. RK4 order under step halving.
// ---------------------------------------------------------------------------
#[test]
fn criterion_5_rk4_order() {
    use rand::{Rng, SeedableRng};
    for (sys, lo, hi) in [
        (SystemSpec::damped_pendulum(0.1, 9.0), [-1.5, -2.0], [1.5, 2.0]),
        (SystemSpec::van_der_pol(1.0), [-2.0, -1.5], [2.0, 1.5]),
    ] {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(905);
        let mut ratios = Vec::with_capacity(100);
        let mut coarse_sum = 0.0;
        let mut fine_sum = 0.0;
        for _ in 0..100 {
            let x0 = State(vec![rng.gen_range(lo[0]..hi[0]), rng.gen_range(lo[1]..hi[1])]);
            let reference = sys.flow_map(&x0, 0.1, 64).unwrap();
            let coarse = sys.flow_map(&x0, 0.1, 1).unwrap();
            let fine = sys.flow_map(&x0, 0.1, 2).unwrap();
            let err = |y: &State| -> f64 {
                y.iter()
                    .zip(reference.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            };
            coarse_sum += err(&coarse);
            fine_sum += err(&fine);
            ratios.push(err(&coarse) / err(&fine));
        }
        ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // The per-state ratio degenerates where the leading error
        // coefficient passes through zero, so the order check uses the
        // ensemble error ratio and the median of the per-state ratios.
        let ensemble = coarse_sum / fine_sum;
        let median = ratios[50];
        assert!(
            (14.0..=18.0).contains(&ensemble),
            "{}: ensemble halving ratio {ensemble}",
            sys.name
        );
        assert!(
            (14.0..=18.0).contains(&median),
            "{}: median halving ratio {median}",
            sys.name
        );
    }
    pass(5, "rk4-order");
}

// ---------------------------------------------------------------------------
// 6-9. Scaled experiment reproductions.
// ---------------------------------------------------------------------------

struct CurvePair {
    prior: Vec<f64>,
    posterior: Vec<f64>,
}

fn run_and_read(cfg: &ExperimentConfig, dir: &Path) -> CurvePair {
    let manifest = run_pipeline(cfg, None, dir).unwrap();
    manifest.verify(dir).unwrap();
    let paths = ArtifactPaths::new(dir, &cfg.experiment);
    let prior = read_error_csv(&paths.prior_error).unwrap();
    let posterior = read_error_csv(&paths.posterior_error).unwrap();
    CurvePair { prior: prior.mean_l2, posterior: posterior.mean_l2 }
}

fn fraction_below(pair: &CurvePair) -> f64 {
    let total = pair.prior.len() - 1;
    let below = pair.prior[1..]
        .iter()
        .zip(&pair.posterior[1..])
        .filter(|(p, q)| q < p)
        .count();
    below as f64 / total as f64
}

fn avg_ratio(pair: &CurvePair) -> f64 {
    let p: f64 = pair.prior.iter().sum();
    let q: f64 = pair.posterior.iter().sum();
    q / p
}

#[test]
fn criterion_6_scaled_pendulum() {
    let mut cfg = preset("damped-pendulum").unwrap();
    cfg.scale = 0.2;
    cfg.eval.horizon = 50.0;
    let scaled = cfg.scaled();
    assert_eq!(scaled.data.j_lf, 6000);
    assert_eq!(scaled.data.j_hf, 50);
    assert_eq!(scaled.prior_training.epochs, 2000);

    let pair = run_and_read(&cfg, &tmp("c6-pendulum"));
    let below = fraction_below(&pair);
    let ratio = avg_ratio(&pair);
    assert!(below >= 0.90, "posterior below prior at only {:.1}% of indices", below * 100.0);
    assert!(ratio <= 0.2, "posterior/prior time-averaged error ratio {ratio:.3}");
    pass(6, "scaled-pendulum");
}

#[test]
fn criterion_7_scaled_duffing() {
    let mut cfg = preset("duffing").unwrap();
    cfg.scale = 0.2;
    cfg.eval.horizon = 50.0;

    let pair = run_and_read(&cfg, &tmp("c7-duffing"));
    let below = fraction_below(&pair);
    let ratio = avg_ratio(&pair);
    assert!(below >= 0.90, "posterior below prior at only {:.1}% of indices", below * 100.0);
    assert!(ratio <= 0.3, "posterior/prior time-averaged error ratio {ratio:.3}");
    pass(7, "scaled-duffing");
}

#[test]
fn criterion_8_coarse_pendulum_recurrent() {
    let mut cfg = preset("damped-pendulum-coarse").unwrap();
    cfg.scale = 0.4;
    cfg.eval.horizon = 50.0;
    let scaled = cfg.scaled();
    assert_eq!(scaled.data.j_hf, 200);
    assert_eq!(scaled.data.lag_steps, LagSpec::UniformSet((5..=50).collect()));

    let pair = run_and_read(&cfg, &tmp("c8-coarse-pendulum"));
    let ratio = avg_ratio(&pair);
    assert!(
        ratio <= 0.5,
        "recurrent posterior time-averaged error is only {:.2}x better",
        1.0 / ratio
    );
    pass(8, "coarse-pendulum-recurrent");
}

#[test]
fn criterion_9_pipeline_determinism() {
    let mut cfg = preset("damped-pendulum").unwrap();
    cfg.scale = 0.2;
    cfg.eval.horizon = 50.0;

    let dir_a = tmp("c9-run-a");
    let dir_b = tmp("c9-run-b");
    run_pipeline(&cfg, None, &dir_a).unwrap();
    run_pipeline(&cfg, None, &dir_b).unwrap();

    let mut names: Vec<String> = std::fs::read_dir(&dir_a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv") || n.ends_with(".json"))
        .filter(|n| n != flowcorr_cli::pipeline::MANIFEST_NAME)
        .collect();
    names.sort();
    assert!(names.len() >= 9, "unexpected artifact set: {names:?}");
    for name in names {
        let a = std::fs::read(dir_a.join(&name)).unwrap();
        let b = std::fs::read(dir_b.join(&name)).unwrap();
        assert_eq!(a, b, "artifact `{name}` differs between identical runs");
    }
    pass(9, "pipeline-determinism");
}

// ---------------------------------------------------------------------------
// 10. Preset coverage: small-scale smoke runs plus the full-scale nightly.
// ---------------------------------------------------------------------------

fn smoke(preset_name: &str, scale: f64) {
    let mut cfg = preset(preset_name).unwrap();
    cfg.scale = scale;
    let dir = tmp(&format!("smoke-{preset_name}"));
    let manifest = run_pipeline(&cfg, None, &dir).unwrap();
    manifest.verify(&dir).unwrap();
    for stage in ["generate", "train-prior", "correct", "evaluate"] {
        assert!(manifest.stages.contains_key(stage), "{preset_name}: stage {stage} missing");
    }
}

#[test]
fn criterion_10_preset_smoke_runs() {
    smoke("duffing", 0.05);
    smoke("seir", 0.05);
    smoke("metabolic", 0.02);
    smoke("damped-pendulum-coarse", 0.05);
    smoke("van-der-pol-coarse", 0.05);
    smoke("dae-coarse", 0.02);
    smoke("metabolic-coarse", 0.02);
    pass(10, "preset-smoke-runs");
}

/// Full-scale damped-pendulum preset: roughly an hour of training on one
/// core, so it runs in the nightly lane.
#[test]
#[ignore = "full-scale run (~1h); execute with --ignored in the nightly lane"]
fn criterion_10_full_scale_pendulum_nightly() {
    let cfg = preset("damped-pendulum").unwrap();
    let dir = tmp("nightly-pendulum");
    let manifest = run_pipeline(&cfg, None, &dir).unwrap();
    manifest.verify(&dir).unwrap();
    let pair = {
        let paths = ArtifactPaths::new(&dir, &cfg.experiment);
        CurvePair {
            prior: read_error_csv(&paths.prior_error).unwrap().mean_l2,
            posterior: read_error_csv(&paths.posterior_error).unwrap().mean_l2,
        }
    };
    // At full scale the correction should be decisive.
    assert!(avg_ratio(&pair) <= 0.2);
    pass(10, "full-scale-pendulum-nightly");
}
