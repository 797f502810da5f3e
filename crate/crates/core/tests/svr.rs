mod common;

use common::*;
use soilwave_core::rng::SeededRng;
use soilwave_core::svr::*;

#[test]
fn primal_matches_dual_oracle_on_small_sets() {
    let opts = SvrTrainOptions { tol: 1e-6, ..SvrTrainOptions::default() };
    for (case, (x, y, h)) in small_sets().iter().enumerate() {
        let fit = svr_train(x, y, h, &opts).unwrap();
        let psi = primal(x, y, &fit.duals, fit.model.bias, h);
        let lib = svr_objective(x, y, &fit.duals, fit.model.bias, h).unwrap();
        assert!((psi - lib).abs() <= 1e-12, "case {case}: objective {psi} vs {lib}");
        let oracle = dual_oracle(x, y, h);
        assert!((psi - oracle).abs() <= 1e-3, "case {case}: psi {psi} oracle {oracle}");
        assert!(psi >= oracle - 1e-9, "case {case}: primal below dual optimum");
        let kkt = kkt_violation(x, y, &fit.duals, fit.model.bias, h);
        assert!(kkt < 1e-3, "case {case}: kkt {kkt}");
    }
}

#[test]
fn three_point_oracle_at_fixed_pitch() {
    let cases = [
        (vec![vec![0.0], vec![1.0], vec![2.0]], vec![0.0, 1.0, 2.0], SvrHyper { c: 1.0, epsilon: 0.1, gamma: 1.0 }),
        (vec![vec![0.0], vec![0.5], vec![1.0]], vec![0.0, 0.8, 0.3], SvrHyper::default()),
    ];
    for (x, y, h) in &cases {
        let k = gram(x, h.gamma);
        let (oracle, _) = grid_max(&k, y, h.epsilon, h.c, &[0.0, 0.0], h.c, 1e-3);
        let fit = svr_train(x, y, h, &SvrTrainOptions::default()).unwrap();
        let psi = primal(x, y, &fit.duals, fit.model.bias, h);
        assert!((psi - oracle).abs() <= 1e-3, "psi {psi} oracle {oracle}");
        assert!(kkt_violation(x, y, &fit.duals, fit.model.bias, h) < 1e-3);
    }
}

#[test]
fn duals_feasible_and_predictions_expand() {
    let mut rng = SeededRng::new(8);
    let x: Vec<Vec<f64>> = (0..150).map(|_| vec![rng.uniform(), rng.uniform()]).collect();
    let y: Vec<f64> = x.iter().map(|r| (3.0 * r[0]).sin() - r[1] + 0.05 * rng.normal()).collect();
    let h = SvrHyper { c: 1.0, epsilon: 0.05, gamma: 2.0 };
    let fit = svr_train(&x, &y, &h, &SvrTrainOptions::default()).unwrap();
    assert_eq!(fit.termination, Termination::Converged);
    assert!(fit.duals.iter().sum::<f64>().abs() <= 1e-9);
    assert!(fit.duals.iter().all(|b| b.abs() <= h.c + 1e-12));
    assert!(kkt_violation(&x, &y, &fit.duals, fit.model.bias, &h) < 1e-3);
    for q in x.iter().take(10) {
        let manual: f64 = fit.model.bias
            + fit
                .model
                .support_vectors
                .iter()
                .zip(&fit.model.coeffs)
                .map(|(s, c)| c * kernel(s, q, h.gamma))
                .sum::<f64>();
        assert!((svr_predict(&fit.model, q).unwrap() - manual).abs() <= 1e-12);
    }
    let again = svr_train(&x, &y, &h, &SvrTrainOptions::default()).unwrap();
    assert_eq!(fit, again);
}

#[test]
fn model_json_predicts_identically() {
    let x = vec![vec![0.0], vec![0.3], vec![0.6], vec![1.0]];
    let y = vec![0.1, 0.5, 0.4, 0.9];
    let fit = svr_train(&x, &y, &SvrHyper::default(), &SvrTrainOptions::default()).unwrap();
    let back = SvrModel::from_json(&fit.model.to_json()).unwrap();
    for q in [0.0, 0.17, 0.5, 2.0] {
        assert_eq!(svr_predict(&fit.model, &[q]).unwrap(), svr_predict(&back, &[q]).unwrap());
    }
}

#[test]
fn grid_search_singleton_equals_direct_fit_score() {
    let mut rng = SeededRng::new(12);
    let x: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.uniform()]).collect();
    let y: Vec<f64> = x.iter().map(|r| r[0] * r[0]).collect();
    let res = grid_search_svr(&x, &y, &[1.0], &[0.1], &[0.1], 4, &SvrTrainOptions::default()).unwrap();
    assert_eq!(res.table.len(), 1);
    assert_eq!(res.best, SvrHyper::default());
    let ranges = fold_ranges(40, 4);
    let mut total = 0.0;
    for r in &ranges {
        let tx: Vec<Vec<f64>> = (0..40).filter(|i| !r.contains(i)).map(|i| x[i].clone()).collect();
        let ty: Vec<f64> = (0..40).filter(|i| !r.contains(i)).map(|i| y[i]).collect();
        let fit = svr_train(&tx, &ty, &SvrHyper::default(), &SvrTrainOptions::default()).unwrap();
        let sq: f64 = r.clone().map(|i| (svr_predict(&fit.model, &x[i]).unwrap() - y[i]).powi(2)).sum();
        total += sq / (2.0 * r.len() as f64);
    }
    assert!((res.best_mse - total / 4.0).abs() <= 1e-12);
}
