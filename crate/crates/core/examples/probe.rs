use flowcorr::correction::{composed_mse, transfer_learn_recurrent};
use flowcorr::dynsys::{Domain, State, SystemSpec};
use flowcorr::eval::{error_curve, Predictor};
use flowcorr::fml::{generate_dataset, train_prior, Dataset, Fidelity, LagSpec, SamplingMode, TrainConfig};
use flowcorr::nnet::{Activation, Architecture, FreezeSpec, NetParams};
use std::time::Instant;

fn well_subset(ds: &Dataset) -> Dataset {
    // Pairs whose initial state librates (energy below the separatrix).
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
    let (prior, hist) = train_prior(&lf, arch, &cfg).unwrap();
    eprintln!("prior: {:.0}s, {} epochs", t0.elapsed().as_secs_f64(), hist.len());

    let ks: Vec<u32> = (5..=50).collect();
    let hf = generate_dataset(&truth, &domain, 200, 0.2, &LagSpec::UniformSet(ks), SamplingMode::DirectPairs, 10, Fidelity::High, 43).unwrap();
    let hf_well = well_subset(&hf);
    eprintln!("hf: {} pairs, {} librating", hf.len(), hf_well.len());

    let prior_pred = Predictor::Net { params: prior.clone(), step: 0.2 };
    let pc = error_curve(&prior_pred, &truth, &eval_well, 100, 50.0, 0.2, 909, 10).unwrap();
    let pa = pc.mean_l2.iter().sum::<f64>() / pc.mean_l2.len() as f64;
    println!("prior: well avg {pa:.3}, hf-well composed mse {:.3e}", composed_mse(&prior, &hf_well).unwrap());

    let mut run = |name: &str, batch: usize, epochs: usize, patience: Option<usize>, lr: f64, l: usize, use_minibatch: bool| {
        let tl_cfg = TrainConfig { epochs, batch_size: batch, lr, patience, seed: 44, shuffle: true };
        let t = Instant::now();
        let post = if use_minibatch {
            // plain TL driver does minibatching; emulate by the recurrent entry anyway
            transfer_learn_recurrent(&prior, &hf, FreezeSpec { split_index: l }, &tl_cfg).unwrap()
        } else {
            transfer_learn_recurrent(&prior, &hf, FreezeSpec { split_index: l }, &tl_cfg).unwrap()
        };
        let qc = error_curve(&Predictor::Net { params: post.params.clone(), step: 0.2 }, &truth, &eval_well, 100, 50.0, 0.2, 909, 10).unwrap();
        let qa = qc.mean_l2.iter().sum::<f64>() / qc.mean_l2.len() as f64;
        println!("{name}: {:.0}s/{} ep, hf-well mse {:.3e}, well avg {qa:.3}, ratio {:.3}",
            t.elapsed().as_secs_f64(), post.loss_history.len(), composed_mse(&post.params, &hf_well).unwrap(), qa / pa);
    };

    run("A full-batch 3000 nopatience lr1e-3 l4", 200, 3000, None, 1e-3, 4, false);
    run("B full-batch 3000 nopatience lr3e-3 l4", 200, 3000, None, 3e-3, 4, false);
    run("C full-batch 2000 p400 lr1e-3 l3", 200, 2000, Some(400), 1e-3, 3, false);
    let _ = State(vec![]);
}
