#![allow(dead_code)]
//! Independent oracles shared by the unit suites and the acceptance run.

use soilwave_core::lstm::*;
use soilwave_core::rng::SeededRng;
use soilwave_core::svr::SvrHyper;

pub fn kernel(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

pub fn gram(x: &[Vec<f64>], gamma: f64) -> Vec<Vec<f64>> {
    x.iter().map(|a| x.iter().map(|b| kernel(a, b, gamma)).collect()).collect()
}

// D(β) = yᵀβ − ε‖β‖₁ − ½βᵀKβ, the dual of the ε-SVR primal.
pub fn dual(k: &[Vec<f64>], y: &[f64], eps: f64, beta: &[f64]) -> f64 {
    let mut quad = 0.0;
    for i in 0..beta.len() {
        for j in 0..beta.len() {
            quad += beta[i] * beta[j] * k[i][j];
        }
    }
    let lin: f64 = y.iter().zip(beta).map(|(a, b)| a * b).sum();
    lin - eps * beta.iter().map(|b| b.abs()).sum::<f64>() - 0.5 * quad
}

pub fn primal(x: &[Vec<f64>], y: &[f64], beta: &[f64], b: f64, h: &SvrHyper) -> f64 {
    let k = gram(x, h.gamma);
    let mut w2 = 0.0;
    let mut slack = 0.0;
    for i in 0..y.len() {
        let mut f = b;
        for j in 0..y.len() {
            w2 += beta[i] * beta[j] * k[i][j];
            f += beta[j] * k[i][j];
        }
        slack += (y[i] - f - h.epsilon).max(0.0) + (f - y[i] - h.epsilon).max(0.0);
    }
    h.c * slack + 0.5 * w2
}

/// Exhaustive grid over the free coordinates β₁..β_{n−1} (β_n = −Σ of the
/// rest) at the given pitch, restricted to `|β_i| ≤ c`.
pub fn grid_max(k: &[Vec<f64>], y: &[f64], eps: f64, c: f64, center: &[f64], half: f64, pitch: f64) -> (f64, Vec<f64>) {
    let n = y.len();
    let steps = (2.0 * half / pitch).round() as i64;
    let mut best = (f64::NEG_INFINITY, vec![0.0; n]);
    let mut idx = vec![0i64; n - 1];
    loop {
        let mut beta = vec![0.0; n];
        let mut ok = true;
        for d in 0..n - 1 {
            let v = center[d] - half + idx[d] as f64 * pitch;
            if v.abs() > c + 1e-15 {
                ok = false;
            }
            beta[d] = v.clamp(-c, c);
        }
        beta[n - 1] = -beta[..n - 1].iter().sum::<f64>();
        if ok && beta[n - 1].abs() <= c + 1e-12 {
            let v = dual(k, y, eps, &beta);
            if v > best.0 {
                best = (v, beta);
            }
        }
        let mut d = 0;
        loop {
            if d == n - 1 {
                return best;
            }
            idx[d] += 1;
            if idx[d] <= steps {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// Coarse-to-fine refinement of [`grid_max`]; the dual is concave so the
/// shrinking box keeps the maximizer.
pub fn dual_oracle(x: &[Vec<f64>], y: &[f64], h: &SvrHyper) -> f64 {
    let k = gram(x, h.gamma);
    let n = y.len();
    let mut pitch = h.c / 20.0;
    let (mut best, mut beta) = grid_max(&k, y, h.epsilon, h.c, &vec![0.0; n - 1], h.c, pitch);
    while pitch > 1e-7 {
        let center = beta[..n - 1].to_vec();
        let next = grid_max(&k, y, h.epsilon, h.c, &center, 2.0 * pitch, pitch / 5.0);
        pitch /= 5.0;
        if next.0 >= best {
            best = next.0;
            beta = next.1;
        }
    }
    best
}

/// Independent KKT check on `(β, b)`.
pub fn kkt_violation(x: &[Vec<f64>], y: &[f64], beta: &[f64], b: f64, h: &SvrHyper) -> f64 {
    let k = gram(x, h.gamma);
    let mut worst: f64 = 0.0;
    for i in 0..y.len() {
        let f: f64 = b + (0..y.len()).map(|j| beta[j] * k[i][j]).sum::<f64>();
        let r = y[i] - f;
        let tol = 1e-12;
        let v = if beta[i].abs() <= tol {
            (r.abs() - h.epsilon).max(0.0)
        } else if beta[i] >= h.c - tol {
            (h.epsilon - r).max(0.0)
        } else if beta[i] <= -h.c + tol {
            (r + h.epsilon).max(0.0)
        } else {
            (r.abs() - h.epsilon).abs()
        };
        worst = worst.max(v);
    }
    worst
}

pub fn small_sets() -> Vec<(Vec<Vec<f64>>, Vec<f64>, SvrHyper)> {
    let mut sets = vec![(
        vec![vec![0.0], vec![0.5], vec![1.0]],
        vec![0.0, 0.8, 0.3],
        SvrHyper { c: 0.1, epsilon: 0.1, gamma: 1.0 },
    )];
    let mut rng = SeededRng::new(31);
    for case in 0..24 {
        let n = 2 + case % 3;
        let d = 1 + rng.index(3);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.uniform()).collect()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let hyper = SvrHyper {
            c: [0.1, 0.5, 1.0][rng.index(3)],
            epsilon: [0.0, 0.05, 0.1][rng.index(3)],
            gamma: [0.5, 1.0, 4.0][rng.index(3)],
        };
        sets.push((x, y, hyper));
    }
    sets
}

pub fn random_layer(rng: &mut SeededRng, units: usize, input: usize, scale: f64) -> LstmLayerParams {
    let mut draw = |n: usize| (0..n).map(|_| scale * rng.uniform_range(-1.0, 1.0)).collect::<Vec<_>>();
    LstmLayerParams { units, input, wx: draw(4 * units * input), wh: draw(4 * units * units), b: draw(4 * units) }
}

pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

// Per-unit scalar evaluation of the gate, cell and hidden updates.
pub fn cell_oracle(p: &LstmLayerParams, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (u, d) = (p.units, p.input);
    let pre = |gate: usize, k: usize| {
        let row = gate * u + k;
        let mut z = p.b[row];
        for j in 0..d {
            z += p.wx[row * d + j] * x[j];
        }
        for m in 0..u {
            z += p.wh[row * u + m] * h[m];
        }
        z
    };
    let mut h_new = vec![0.0; u];
    let mut c_new = vec![0.0; u];
    for k in 0..u {
        let i = logistic(pre(0, k));
        let f = logistic(pre(1, k));
        let o = logistic(pre(2, k));
        let g = pre(3, k).tanh();
        c_new[k] = f * c[k] + i * g;
        h_new[k] = o * c_new[k].tanh();
    }
    (h_new, c_new)
}

/// Central differences with step `h` against backprop. Returns the largest
/// relative error over parameters with `|analytic| > 1e-8`, the largest
/// absolute error in excess of `1e-5·|analytic|`, and the number of
/// parameters above the floor.
pub fn gradient_check(seed: u64, h: f64) -> (f64, f64, usize) {
    let (u, d, steps) = (4, 3, 5);
    let spec = LstmSpec { input_width: d, units1: u, units2: u, dropout_p: 0.2 };
    let mut model = LstmModel::init(&spec, seed).unwrap();
    model.head_b = 0.1;
    let mut rng = SeededRng::new(seed ^ 0xABCD);
    let window: Vec<f64> = (0..steps * d).map(|_| rng.uniform()).collect();
    let masks = DropoutMasks::sample(&mut rng, steps, u, u, 0.2);
    let target = 0.3;

    let (pred, cache) = lstm_forward_with_masks(&model, &window, steps, masks.clone()).unwrap();
    let analytic = lstm_backward(&model, &cache, pred - target).unwrap().flat();

    let theta = model.flat();
    let mut loss_at = |k: usize, dx: f64| {
        let mut t = theta.clone();
        t[k] += dx;
        model.set_flat(&t).unwrap();
        let (p, _) = lstm_forward_with_masks(&model, &window, steps, masks.clone()).unwrap();
        0.5 * (p - target) * (p - target)
    };
    let mut worst: f64 = 0.0;
    let mut excess: f64 = 0.0;
    let mut checked = 0;
    for (k, &a) in analytic.iter().enumerate() {
        let numeric = (loss_at(k, h) - loss_at(k, -h)) / (2.0 * h);
        excess = excess.max((a - numeric).abs() - 1e-5 * a.abs());
        if a.abs() > 1e-8 {
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()));
            checked += 1;
        } else {
            assert!(numeric.abs() < 1e-7, "seed {seed} param {k}: analytic {a} numeric {numeric}");
        }
    }
    (worst, excess, checked)
}
