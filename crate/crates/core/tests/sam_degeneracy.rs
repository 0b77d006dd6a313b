use rand::Rng as _;
use samosa_core::model::{ModelParams, PatchInput};
use samosa_core::optim::{
    sam_step, sgd_step, train, BatchLoss, FlatParams, LrSchedule, Objective, OptState, Optimizer, SamHyper, SgdHyper,
    TrainConfig,
};
use samosa_core::rng_from;

fn random_task(seed: u64, n: usize) -> (ModelParams, Vec<PatchInput>, Vec<usize>) {
    let mut rng = rng_from(seed, 0);
    let params = ModelParams::init(6, 10, 3, 0.3, &mut rng).unwrap();
    let xs = (0..n)
        .map(|_| PatchInput::from_flat(3, 10, (0..30).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
        .collect();
    let ys = (0..n).map(|_| rng.random_range(0..3)).collect();
    (params, xs, ys)
}

#[test]
fn rho_zero_steps_are_bit_identical_for_fifty_steps() {
    let (init, xs, ys) = random_task(5, 80);
    let hyper = SgdHyper { lr: 0.05, momentum: 0.9, weight_decay: 5e-4 };
    let (mut a, mut b) = (init.clone(), init);
    let (mut sa, mut sb) = (OptState::for_params(&a), OptState::for_params(&b));
    let mut rng = rng_from(6, 0);
    for step in 0..50 {
        let idx: Vec<usize> = (0..8).map(|_| rng.random_range(0..xs.len())).collect();
        let batch: Vec<(&PatchInput, usize)> = idx.iter().map(|&i| (&xs[i], ys[i])).collect();
        let obj = BatchLoss { batch: &batch };
        let (_, g) = obj.loss_and_grad(&a).unwrap();
        sgd_step(&mut a, &g, &mut sa, &hyper).unwrap();
        sam_step(&mut b, &mut sb, &hyper, &SamHyper { rho: 0.0 }, &obj).unwrap();
        let same = a.as_flat().iter().zip(b.as_flat()).all(|(x, y)| x.to_bits() == y.to_bits());
        assert!(same, "trajectories diverged at step {step}");
    }
}

#[test]
fn rho_zero_training_runs_are_bit_identical() {
    let (init, xs, ys) = random_task(9, 100);
    let data: Vec<(&PatchInput, usize)> = xs.iter().zip(ys.iter().copied()).collect();
    let cfg = |optimizer| TrainConfig {
        epochs: 5, // 100 samples / batch 10 → 50 steps
        batch_size: 10,
        momentum: 0.9,
        weight_decay: 5e-4,
        schedule: LrSchedule { initial_lr: 0.05, step_size: 2, gamma: 0.5 },
        optimizer,
        stop_at_loss: None,
    };
    let sgd = train(init.clone(), &data, &cfg(Optimizer::Sgd), &mut rng_from(3, 1)).unwrap();
    let sam = train(init.clone(), &data, &cfg(Optimizer::Sam(SamHyper { rho: 0.0 })), &mut rng_from(3, 1)).unwrap();
    assert!(sgd.params.as_flat().iter().zip(sam.params.as_flat()).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(sgd.final_loss.to_bits(), sam.final_loss.to_bits());
    assert_ne!(sgd.params, init);

    let sam_on = train(init, &data, &cfg(Optimizer::Sam(SamHyper { rho: 0.05 })), &mut rng_from(3, 1)).unwrap();
    assert_ne!(sam_on.params, sgd.params);
}

#[test]
fn ascent_direction_raises_batch_loss() {
    let mut raised = 0;
    for probe in 0..100 {
        let (params, xs, ys) = random_task(1000 + probe, 8);
        let batch: Vec<(&PatchInput, usize)> = xs.iter().zip(ys.iter().copied()).collect();
        let (loss, g) = params.loss_and_grad(&batch).unwrap();
        let norm = g.as_flat().iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut moved = params.clone();
        for (w, gi) in moved.as_flat_mut().iter_mut().zip(g.as_flat()) {
            *w += 1e-4 * gi / norm;
        }
        if moved.loss(&batch).unwrap() >= loss {
            raised += 1;
        }
    }
    assert!(raised >= 95, "{raised}/100");
}
