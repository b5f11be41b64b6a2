mod common;

use common::*;
use wdrank_core::linalg::singular_values;
use wdrank_core::training::{batch_gradient, batch_loss, GSpec, Regularizer};
use wdrank_core::{Mat, NetGradient};

const H: f64 = 1e-3;
const REL: f64 = 1e-5;

fn flat_grad(g: &NetGradient) -> Vec<f64> {
    let mut out = g.du.as_slice().to_vec();
    out.extend_from_slice(g.dv.as_slice());
    out.extend_from_slice(g.db.as_slice());
    out
}

fn assert_close(analytic: &[f64], fd: &[f64], what: &str) {
    for (k, (&a, &f)) in analytic.iter().zip(fd).enumerate() {
        let err = (a - f).abs();
        assert!(
            err <= REL * a.abs().max(f.abs()) || err < 1e-10,
            "{what}: component {k}: analytic {a} vs finite difference {f}"
        );
    }
}

#[test]
fn grad_params_matches_finite_differences() {
    let (m, n) = (6, 4);
    let mut accepted = 0;
    let mut seed = 0;
    while accepted < 120 {
        seed += 1;
        let mut r = rng(seed);
        let net = random_net(&mut r, m, n);
        let x = gaussian_vec(&mut r, n, 1.0);
        let xmax = x.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        if oracle_margin(&net, &x) <= 10.0 * H * xmax {
            continue;
        }
        accepted += 1;
        let theta = flatten(&net);
        let fd = central_diff(&theta, H, |t| oracle_forward(&unflatten(m, n, t), &x));
        let analytic = flat_grad(&net.grad_params(&x, 1.0).unwrap());
        assert_close(&analytic, &fd, &format!("seed {seed}"));
    }
}

#[test]
fn batch_gradient_matches_finite_differences_of_batch_loss() {
    let (m, n, samples) = (5, 3, 12);
    let specs = [
        GSpec::Constant { mu_v: 0.3 },
        GSpec::AffineInY2 { a: 0.5, c: 0.25 },
    ];
    let mut accepted = 0;
    let mut seed = 1000;
    while accepted < 100 {
        seed += 1;
        let mut r = rng(seed);
        let net = random_net(&mut r, m, n);
        let data = random_dataset(&mut r, samples, n);
        let batch: Vec<usize> = (0..4).map(|k| (seed as usize * 7 + 3 * k) % samples).collect();
        let mut batch = batch;
        batch.sort_unstable();
        batch.dedup();
        let ok = batch.iter().all(|&i| {
            let x = data.input(i);
            let xmax = x.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            oracle_margin(&net, x) > 10.0 * H * xmax
        });
        if !ok {
            continue;
        }
        accepted += 1;
        let reg = Regularizer {
            mu_u: 0.01,
            mu_b: 0.02,
            g: specs[accepted % 2],
        };
        let theta = flatten(&net);
        let fd = central_diff(&theta, H, |t| batch_loss(&unflatten(m, n, t), &data, &batch, &reg).unwrap());
        let analytic = flat_grad(&batch_gradient(&net, &data, &batch, &reg).unwrap());
        assert_close(&analytic, &fd, &format!("seed {seed}"));
    }
}

#[test]
fn single_sample_v_gradient_is_rank_one() {
    let mut checked = 0;
    for seed in 0..200u64 {
        let mut r = rng(seed);
        let (m, n) = (3 + seed as usize % 10, 2 + seed as usize % 7);
        let net = random_net(&mut r, m, n);
        let x = gaussian_vec(&mut r, n, 1.0);
        let dv = net.grad_params(&x, 0.7).unwrap().dv;
        assert_eq!(dv.as_slice(), oracle_t(&net, &x, 0.7).as_slice());
        let s = singular_values(&dv);
        if s[0] == 0.0 {
            continue;
        }
        checked += 1;
        assert!(s.len() < 2 || s[1] / s[0] < 1e-14, "seed {seed}: {s:?}");
    }
    assert!(checked >= 100);
}

#[test]
fn gradient_is_linear_in_the_residual() {
    let mut r = rng(77);
    let net = random_net(&mut r, 7, 5);
    let x = gaussian_vec(&mut r, 5, 1.0);
    let base = flat_grad(&net.grad_params(&x, 1.3).unwrap());
    for t in [1.0, 0.1, 0.01] {
        let scaled = flat_grad(&net.grad_params(&x, 1.3 * t).unwrap());
        for (s, b) in scaled.iter().zip(&base) {
            assert!((s - t * b).abs() <= 4.0 * f64::EPSILON * b.abs());
        }
    }
}

#[test]
fn small_perturbations_keep_the_pattern() {
    let mut nets = 0;
    let mut seed = 5000;
    while nets < 100 {
        seed += 1;
        let mut r = rng(seed);
        let (m, n) = (8, 5);
        let net = random_net(&mut r, m, n);
        let x = gaussian_vec(&mut r, n, 1.0);
        let margin = net.activation_margin(&x).unwrap();
        assert_eq!(margin, oracle_margin(&net, &x));
        if !(margin > 0.0) {
            continue;
        }
        nets += 1;
        let pattern = net.activation_pattern(&x).unwrap();
        let radius = 0.9 * margin / norm(&x);
        for _ in 0..100 {
            let dir = Mat::new(m, n, gaussian_vec(&mut r, m * n, 1.0)).unwrap();
            let s0 = singular_values(&dir)[0];
            let frac: f64 = rand::Rng::random_range(&mut r, 0.0..0.999);
            let dv = dir.scale(frac * radius / s0);
            let moved = net.with_v(net.v().add(&dv).unwrap()).unwrap();
            assert_eq!(moved.activation_pattern(&x).unwrap(), pattern, "seed {seed}");
        }
    }
}
