//! Independent reference computations shared by the integration tests.
//! Nothing here calls into the forward/gradient code under test.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use wdrank_core::data::Dataset;
use wdrank_core::{ColVec, Mat, TwoLayerNet};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, len: usize, std: f64) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            std * z
        })
        .collect()
}

pub fn random_net(rng: &mut ChaCha8Rng, m: usize, n: usize) -> TwoLayerNet {
    let u = Mat::new(1, m, gaussian_vec(rng, m, 1.0)).unwrap();
    let v = Mat::new(m, n, gaussian_vec(rng, m * n, 1.0 / (n as f64).sqrt())).unwrap();
    let b = ColVec::new(gaussian_vec(rng, m, 0.5)).unwrap();
    TwoLayerNet::new(u, v, b).unwrap()
}

pub fn random_dataset(rng: &mut ChaCha8Rng, samples: usize, n: usize) -> Dataset {
    let x = Mat::new(samples, n, gaussian_vec(rng, samples * n, 1.0)).unwrap();
    let y = (0..samples).map(|_| rng.random_range(-2.0..2.0)).collect();
    Dataset::from_samples(x, y).unwrap()
}

/// Parameters flattened as `[U (m), V row-major (m·n), b (m)]`.
pub fn flatten(net: &TwoLayerNet) -> Vec<f64> {
    let mut out = net.u().as_slice().to_vec();
    out.extend_from_slice(net.v().as_slice());
    out.extend_from_slice(net.b().as_slice());
    out
}

pub fn unflatten(m: usize, n: usize, theta: &[f64]) -> TwoLayerNet {
    let u = Mat::new(1, m, theta[..m].to_vec()).unwrap();
    let v = Mat::new(m, n, theta[m..m + m * n].to_vec()).unwrap();
    let b = ColVec::new(theta[m + m * n..].to_vec()).unwrap();
    TwoLayerNet::new(u, v, b).unwrap()
}

pub fn central_diff(theta: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut work = theta.to_vec();
    (0..theta.len())
        .map(|k| {
            work[k] = theta[k] + h;
            let hi = f(&work);
            work[k] = theta[k] - h;
            let lo = f(&work);
            work[k] = theta[k];
            (hi - lo) / (2.0 * h)
        })
        .collect()
}

fn pre(net: &TwoLayerNet, x: &[f64]) -> Vec<f64> {
    let (m, n) = (net.width(), net.input_dim());
    let v = net.v().as_slice();
    let b = net.b().as_slice();
    (0..m)
        .map(|j| (0..n).map(|k| v[j * n + k] * x[k]).sum::<f64>() + b[j])
        .collect()
}

pub fn oracle_forward(net: &TwoLayerNet, x: &[f64]) -> f64 {
    let u = net.u().as_slice();
    pre(net, x)
        .iter()
        .zip(u)
        .map(|(&z, &uj)| uj * if z > 0.0 { z } else { 0.0 })
        .sum()
}

pub fn oracle_margin(net: &TwoLayerNet, x: &[f64]) -> f64 {
    pre(net, x).iter().map(|z| z.abs()).fold(f64::INFINITY, f64::min)
}

/// `r · ∂φ(x)/∂V` as a row-major m×n vector.
pub fn oracle_t(net: &TwoLayerNet, x: &[f64], r: f64) -> Vec<f64> {
    let (m, n) = (net.width(), net.input_dim());
    let u = net.u().as_slice();
    let z = pre(net, x);
    let mut out = vec![0.0; m * n];
    for j in 0..m {
        if z[j] > 0.0 {
            for k in 0..n {
                out[j * n + k] = r * u[j] * x[k];
            }
        }
    }
    out
}

/// `T_i = r_i · ∂φ(x_i)/∂V` with `r_i = φ(x_i) − y_i`.
pub fn oracle_sample_term(net: &TwoLayerNet, data: &Dataset, i: usize) -> Vec<f64> {
    let x = data.input(i);
    oracle_t(net, x, oracle_forward(net, x) - data.target(i))
}

/// V-block of the regularized batch gradient: `(1/B) Σ T_i + decay · V`.
pub fn oracle_batch_v_grad(net: &TwoLayerNet, data: &Dataset, batch: &[usize], decay: f64) -> Vec<f64> {
    let bsz = batch.len() as f64;
    let mut acc: Vec<f64> = net.v().as_slice().iter().map(|v| decay * v).collect();
    for &i in batch {
        for (a, t) in acc.iter_mut().zip(oracle_sample_term(net, data, i)) {
            *a += t / bsz;
        }
    }
    acc
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn oracle_mse(net: &TwoLayerNet, data: &Dataset) -> f64 {
    let n = data.len() as f64;
    (0..data.len())
        .map(|i| (oracle_forward(net, data.input(i)) - data.target(i)).powi(2))
        .sum::<f64>()
        / n
}
