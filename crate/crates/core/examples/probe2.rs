use flowcorr::correction::{composed_mse, transfer_learn_recurrent};
use flowcorr::dynsys::{Domain, SystemSpec};
use flowcorr::eval::{error_curve, Predictor};
use flowcorr::fml::{generate_dataset, train_prior, Dataset, Fidelity, LagSpec, SamplingMode, TrainConfig};
use flowcorr::nnet::{Activation, Architecture, FreezeSpec};
use std::time::Instant;

fn well_subset(ds: &Dataset) -> Dataset {
    let mut out = ds.clone();
    out.pairs.retain(|p| 0.5 * p.x1[1] * p.x1[1] - 9.0 * p.x1[0].cos() < 8.0);
    out
}

fn main() {
    let pi = std::f64::consts::PI;
    let domain = Domain::new(vec![-pi, -2.0 * pi], vec![pi, 2.0 * pi]).unwrap();
    let eval_well = Domain::new(vec![-1.6, -3.0], vec![1.6, 3.0]).unwrap();
    let oscillator = SystemSpec::harmonic_oscillator(9.0);
    let truth = SystemSpec::damped_pendulum(0.1, 9.0);
    let arch = Architecture { input_dim: 2, hidden_layers: 5, hidden_width: 50, activation: Activation::Tanh, residual: true };

    let t0 = Instant::now();
    let lf = generate_dataset(&oscillator, &domain, 20000, 0.2, &LagSpec::Constant(1), SamplingMode::DirectPairs, 10, Fidelity::Low, 42).unwrap();
    let cfg = TrainConfig { epochs: 4000, batch_size: 100, lr: 1e-3, patience: Some(400), seed: 42, shuffle: true };
    let (prior, _) = train_prior(&lf, arch, &cfg).unwrap();
    eprintln!("prior: {:.0}s", t0.elapsed().as_secs_f64());

    let ks: Vec<u32> = (5..=50).collect();
    // HF pairs along true trajectories: observations settle toward the well.
    let hf = generate_dataset(&truth, &domain, 200, 0.2, &LagSpec::UniformSet(ks), SamplingMode::TrajectoryWindow { horizon: 20.0 }, 10, Fidelity::High, 43).unwrap();
    let hf_well = well_subset(&hf);
    eprintln!("hf window: {} pairs, {} librating-x1", hf.len(), hf_well.len());

    let prior_pred = Predictor::Net { params: prior.clone(), step: 0.2 };
    let pc = error_curve(&prior_pred, &truth, &eval_well, 100, 50.0, 0.2, 909, 10).unwrap();
    let pa = pc.mean_l2.iter().sum::<f64>() / pc.mean_l2.len() as f64;
    println!("prior: well avg {pa:.3}, hf composed mse {:.3e} (well subset {:.3e})",
        composed_mse(&prior, &hf).unwrap(), composed_mse(&prior, &hf_well).unwrap());

    for (name, epochs, patience) in [
        ("p400/2000", 2000usize, Some(400usize)),
        ("none/2000", 2000, None),
    ] {
        let tl_cfg = TrainConfig { epochs, batch_size: 200, lr: 1e-3, patience, seed: 44, shuffle: true };
        let t = Instant::now();
        let post = transfer_learn_recurrent(&prior, &hf, FreezeSpec { split_index: 4 }, &tl_cfg).unwrap();
        let qc = error_curve(&Predictor::Net { params: post.params.clone(), step: 0.2 }, &truth, &eval_well, 100, 50.0, 0.2, 909, 10).unwrap();
        let qa = qc.mean_l2.iter().sum::<f64>() / qc.mean_l2.len() as f64;
        println!("{name}: {:.0}s/{} ep, hf mse {:.3e} (well {:.3e}), well avg {qa:.3}, ratio {:.3}",
            t.elapsed().as_secs_f64(), post.loss_history.len(),
            composed_mse(&post.params, &hf).unwrap(), composed_mse(&post.params, &hf_well).unwrap(), qa / pa);
    }
}
