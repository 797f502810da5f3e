mod common;

use common::*;
use soilwave_core::lstm::*;
use soilwave_core::preprocess::WindowedDataset;
use soilwave_core::rng::SeededRng;

#[test]
fn cell_matches_scalar_oracle() {
    let mut rng = SeededRng::new(100);
    for case in 0..100 {
        let u = 1 + rng.index(6);
        let d = 1 + rng.index(5);
        let p = random_layer(&mut rng, u, d, 1.5);
        let x: Vec<f64> = (0..d).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
        let prev = LstmState {
            h: (0..u).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
            c: (0..u).map(|_| rng.uniform_range(-3.0, 3.0)).collect(),
        };
        let (next, _) = lstm_cell_forward(&p, &x, &prev).unwrap();
        let (h, c) = cell_oracle(&p, &x, &prev.h, &prev.c);
        for k in 0..u {
            assert!((next.h[k] - h[k]).abs() <= 1e-12, "case {case} h[{k}]");
            assert!((next.c[k] - c[k]).abs() <= 1e-12, "case {case} c[{k}]");
        }
    }
}

#[test]
fn gradients_match_central_differences() {
    let (worst, _, checked) = gradient_check(1, 1e-5);
    assert!(checked > 250, "only {checked} parameters above threshold");
    assert!(worst < 1e-5, "max relative error {worst:e}");
}

// At h = 1e-5 the difference quotient carries about 1e-12 of rounding noise,
// which dominates the relative error for gradients near the 1e-8 floor on
// some seeds; allow that much absolute slack across a wider seed range.
#[test]
fn gradients_match_across_seeds() {
    for seed in 1..=30 {
        let (_, excess, _) = gradient_check(seed, 1e-5);
        assert!(excess < 1e-11, "seed {seed}: error exceeds bound by {excess:e}");
    }
}

#[test]
fn rmsprop_two_steps_scalar() {
    let (lr, rho, eps) = (0.01, 0.9, 1e-8);
    let mut theta = [1.0];
    let mut s = [0.0];
    rmsprop_update(&mut theta, &[0.5], &mut s, lr, rho, eps).unwrap();
    rmsprop_update(&mut theta, &[-0.2], &mut s, lr, rho, eps).unwrap();
    let s1: f64 = 0.1 * 0.25;
    let t1 = 1.0 - lr * 0.5 / (s1.sqrt() + eps);
    let s2 = 0.9 * s1 + 0.1 * 0.04;
    let t2 = t1 + lr * 0.2 / (s2.sqrt() + eps);
    assert!((s[0] - s2).abs() <= 1e-15);
    assert!((theta[0] - t2).abs() <= 1e-12);
}

fn toy_windows(n: usize, steps: usize, width: usize, seed: u64, target: impl Fn(&[f64]) -> f64) -> WindowedDataset {
    let mut rng = SeededRng::new(seed);
    let windows: Vec<f64> = (0..n * steps * width).map(|_| rng.uniform()).collect();
    let targets = windows.chunks(steps * width).map(&target).collect();
    WindowedDataset { steps, width, windows, targets }
}

#[test]
fn one_full_batch_step_matches_hand_update() {
    let data = toy_windows(12, 4, 2, 3, |w| w.iter().sum::<f64>() / w.len() as f64);
    let spec = LstmSpec { input_width: 2, units1: 3, units2: 3, dropout_p: 0.0 };
    let cfg = TrainConfig { lr: 0.01, epochs: 1, batch_size: 12, clip_norm: None, ..TrainConfig::default() };
    let init = LstmModel::init(&spec, cfg.seed).unwrap();

    let mut grad = vec![0.0; init.num_params()];
    for k in 0..data.len() {
        let (p, cache) = lstm_forward(&init, data.window(k), 4, Mode::Eval, None).unwrap();
        let g = lstm_backward(&init, &cache, (p - data.targets[k]) / 12.0).unwrap().flat();
        grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    let expected: Vec<f64> =
        init.flat().iter().zip(&grad).map(|(t, g)| t - cfg.lr * g / ((0.1 * g * g).sqrt() + cfg.rms_eps)).collect();

    let (trained, history) = train_lstm_from(init, &data, None, &cfg).unwrap();
    assert_eq!(history.len(), 1);
    for (a, b) in trained.flat().iter().zip(&expected) {
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }
}

#[test]
fn learns_a_constant_target() {
    let data = toy_windows(64, 5, 2, 11, |_| 0.4);
    let spec = LstmSpec { input_width: 2, units1: 4, units2: 4, dropout_p: 0.0 };
    let cfg = TrainConfig { lr: 0.01, epochs: 60, batch_size: 16, ..TrainConfig::default() };
    let (model, history) = train_lstm(&data, None, &spec, &cfg).unwrap();
    let pred = lstm_predict_all(&model, &data).unwrap();
    let mse = pred.iter().map(|p| (p - 0.4) * (p - 0.4)).sum::<f64>() / (2.0 * pred.len() as f64);
    assert!(mse < 1e-4, "mse {mse}");
    assert!(history.last().unwrap().train_loss < history[0].train_loss);
}

#[test]
fn training_is_reproducible() {
    let data = toy_windows(40, 4, 3, 5, |w| w[0]);
    let spec = LstmSpec { input_width: 3, units1: 5, units2: 4, dropout_p: 0.2 };
    let cfg = TrainConfig { epochs: 3, batch_size: 8, ..TrainConfig::default() };
    let a = train_lstm(&data, None, &spec, &cfg).unwrap();
    let b = train_lstm(&data, None, &spec, &cfg).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
}

#[test]
fn dropout_rate_and_expectation() {
    let mut rng = SeededRng::new(21);
    let (steps, u1, u2) = (10, 32, 32);
    let mut zeros = 0usize;
    let mut total = 0usize;
    let mut sum = 0.0;
    for _ in 0..200 {
        let m = DropoutMasks::sample(&mut rng, steps, u1, u2, 0.2);
        for v in m.layer1.iter().chain(&m.layer2) {
            if *v == 0.0 {
                zeros += 1;
            } else {
                assert!((v - 1.25).abs() <= 1e-15);
            }
            sum += v;
            total += 1;
        }
    }
    let rate = zeros as f64 / total as f64;
    assert!((rate - 0.2).abs() <= 0.02, "drop rate {rate}");
    let mean = sum / total as f64;
    assert!((mean - 1.0).abs() <= 0.02, "mean multiplier {mean}");
}

#[test]
fn eval_mode_is_deterministic_and_json_stable() {
    let spec = LstmSpec::new(4);
    let model = LstmModel::init(&spec, 8).unwrap();
    let window: Vec<f64> = (0..18 * 4).map(|i| (i as f64 * 0.37).sin()).collect();
    let a = lstm_predict(&model, &window, 18).unwrap();
    let (back, steps) = LstmModel::from_json(&model.to_json(None, Some(18))).unwrap();
    assert_eq!(steps, Some(18));
    assert_eq!(a, lstm_predict(&back, &window, 18).unwrap());
    assert_eq!(a, lstm_predict(&model, &window, 18).unwrap());
}
