use lfednet_core::net::*;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn setup(seed: u64) -> (NetworkParams, DMatrix<f64>, DMatrix<f64>) {
    let cfg = NetConfig {
        input_dim: 7,
        hidden_width: 6,
        hidden_layers: 3,
    };
    let mut params = NetworkParams::init(cfg, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    // nontrivial batch-norm state so eval mode differs from train mode
    for k in 0..3 {
        let m: Vec<f64> = (0..6).map(|_| rng.random_range(-0.5..0.5)).collect();
        let v: Vec<f64> = (0..6).map(|_| rng.random_range(0.5..2.0)).collect();
        params.set_tensor(&format!("hidden.{k}.running_mean"), &m).unwrap();
        params.set_tensor(&format!("hidden.{k}.running_var"), &v).unwrap();
        let shift: Vec<f64> = (0..6).map(|_| rng.random_range(-0.3..0.3)).collect();
        params.set_tensor(&format!("hidden.{k}.bn_shift"), &shift).unwrap();
    }
    let x = DMatrix::from_fn(5, 7, |_, _| rng.random_range(-2.0..2.0));
    let y = DMatrix::from_fn(5, 24, |_, _| rng.random_range(-1.0..1.0));
    (params, x, y)
}

fn loss_at(params: &NetworkParams, x: &DMatrix<f64>, y: &DMatrix<f64>, mode: Mode) -> f64 {
    let (y_hat, _) = forward(params, x, mode).unwrap();
    prediction_loss(&y_hat, y).unwrap()
}

/// Central differences over every parameter; ReLU kinks inside the stencil
/// are skipped by requiring agreement between two step sizes.
fn check_mode(mode: Mode) {
    let (params, x, y) = setup(3);
    let (y_hat, cache) = forward(&params, &x, mode).unwrap();
    let up = prediction_loss_grad(&y_hat, &y).unwrap();
    let grad = backward(&params, &cache, &up).unwrap();
    let mut checked = 0;
    for i in 0..params.n_params() {
        let fd = |h: f64| {
            let mut p = params.clone();
            p.theta_mut()[i] += h;
            let lp = loss_at(&p, &x, &y, mode);
            p.theta_mut()[i] -= 2.0 * h;
            let lm = loss_at(&p, &x, &y, mode);
            (lp - lm) / (2.0 * h)
        };
        let (a, b) = (fd(1e-5), fd(2e-5));
        if (a - b).abs() > 1e-7 * (1.0 + a.abs()) {
            continue;
        }
        // relative 1e-5, with an absolute floor at difference-quotient noise
        let tol = 1e-5 * a.abs().max(grad[i].abs()) + 1e-9;
        assert!((grad[i] - a).abs() < tol, "param {i}: {} vs {a}", grad[i]);
        checked += 1;
    }
    assert!(checked > params.n_params() * 9 / 10, "{checked}");
}

#[test]
fn train_mode_gradient_matches_finite_differences() {
    check_mode(Mode::Train);
}

#[test]
fn eval_mode_gradient_matches_finite_differences() {
    check_mode(Mode::Eval);
}
