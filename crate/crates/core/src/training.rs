//! Mini-batch SGD on the weight-decayed square loss.
//!
//! The `V` penalty is driven by a per-sample decay function `g(x, y)`: a batch
//! applies the decay `μ̄_V = (1/B) Σ g(xᵢ, yᵢ)`, while `U` and `b` use fixed
//! coefficients `μ_U`, `μ_b`.

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{dot, frobenius_norm, stable_rank};
use crate::network::{NetGradient, TwoLayerNet};
use crate::rng::{self, Rng};

/// Per-sample weight-decay function `g(x, y)` for `V`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum GSpec {
    /// `g ≡ mu_v`.
    Constant { mu_v: f64 },
    /// `g(x, y) = a + c·y²`.
    AffineInY2 { a: f64, c: f64 },
}

impl GSpec {
    pub fn eval(&self, _x: &[f64], y: f64) -> f64 {
        match *self {
            GSpec::Constant { mu_v } => mu_v,
            GSpec::AffineInY2 { a, c } => a + c * y * y,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, GSpec::Constant { .. })
    }

    /// Checks that `g` is strictly positive on every sample.
    pub fn validate(&self, data: &Dataset) -> Result<()> {
        if let GSpec::AffineInY2 { a, c } = *self {
            if !(a > 0.0 && c >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "affine_in_y2 needs a > 0 and c >= 0, got a = {a}, c = {c}"
                )));
            }
        }
        for i in 0..data.len() {
            let g = self.eval(data.input(i), data.target(i));
            if !(g > 0.0) || !g.is_finite() {
                return Err(Error::InvalidDecay { index: i, value: g });
            }
        }
        Ok(())
    }
}

/// Penalty coefficients of the regularized loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regularizer {
    pub mu_u: f64,
    pub mu_b: f64,
    pub g: GSpec,
}

impl Regularizer {
    fn checked_g(&self, data: &Dataset, i: usize) -> Result<f64> {
        let g = self.g.eval(data.input(i), data.target(i));
        if !(g >= 0.0) || !g.is_finite() {
            return Err(Error::InvalidDecay { index: i, value: g });
        }
        Ok(g)
    }

    /// `(1/B) Σ g(xᵢ, yᵢ)` over the batch; exactly `mu_v` for a constant `g`.
    pub fn batch_decay(&self, data: &Dataset, batch: &[usize]) -> Result<f64> {
        let mut sum = 0.0;
        for &i in batch {
            sum += self.checked_g(data, i)?;
        }
        Ok(match self.g {
            GSpec::Constant { mu_v } => mu_v,
            _ => sum / batch.len() as f64,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr0: f64,
    pub decay_factor: f64,
    /// Epochs between learning-rate decays.
    pub decay_period: usize,
    pub mu_u: f64,
    pub mu_b: f64,
    pub gspec: GSpec,
    pub seed: u64,
    pub drop_last: bool,
}

impl Default for TrainConfig {
    /// Housing-profile hyperparameters with `μ_V = 1`.
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs: 5000,
            lr0: 1e-4,
            decay_factor: 0.95,
            decay_period: 200,
            mu_u: 1e-4,
            mu_b: 1e-4,
            gspec: GSpec::Constant { mu_v: 1.0 },
            seed: 0,
            drop_last: true,
        }
    }
}

impl TrainConfig {
    pub fn regularizer(&self) -> Regularizer {
        Regularizer {
            mu_u: self.mu_u,
            mu_b: self.mu_b,
            g: self.gspec,
        }
    }

    /// Checks the config against a training set of `n_samples` samples.
    pub fn validate(&self, n_samples: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidArgument(msg));
        if self.batch_size < 2 || self.batch_size >= n_samples {
            return fail(format!(
                "batch size must satisfy 2 <= B < N, got B = {} with N = {n_samples}",
                self.batch_size
            ));
        }
        if !(self.lr0 > 0.0) || !self.lr0.is_finite() {
            return fail(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return fail(format!("decay_factor must lie in (0, 1], got {}", self.decay_factor));
        }
        if self.decay_period == 0 {
            return fail("decay_period must be at least 1".into());
        }
        if !(self.mu_u >= 0.0 && self.mu_b >= 0.0) {
            return fail(format!("mu_u and mu_b must be >= 0, got {} and {}", self.mu_u, self.mu_b));
        }
        Ok(())
    }
}

/// Step size of epoch `epoch`: `lr0 · decay_factor^⌊epoch / decay_period⌋`.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    let steps = epoch / config.decay_period.max(1);
    config.lr0 * config.decay_factor.powi(steps as i32)
}

fn check_batch(net: &TwoLayerNet, data: &Dataset, batch: &[usize]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if data.input_dim() != net.input_dim() {
        return Err(Error::dims("batch", net.input_dim(), data.input_dim()));
    }
    if let Some(&i) = batch.iter().find(|&&i| i >= data.len()) {
        return Err(Error::InvalidArgument(format!(
            "sample index {i} out of range for {} samples",
            data.len()
        )));
    }
    Ok(())
}

/// Gradient of the batch loss over the samples `batch` of `data`:
/// `dV = (1/B) Σ [rᵢ ∂φ(xᵢ)/∂V + g(xᵢ, yᵢ) V]`, `dU = (1/B) Σ rᵢ ∂φ(xᵢ)/∂U + μ_U U`,
/// `db = (1/B) Σ rᵢ ∂φ(xᵢ)/∂b + μ_b b`, with residuals `rᵢ = φ(xᵢ) − yᵢ`.
/// Samples are accumulated in batch order.
pub fn batch_gradient(net: &TwoLayerNet, data: &Dataset, batch: &[usize], reg: &Regularizer) -> Result<NetGradient> {
    check_batch(net, data, batch)?;
    let (m, n) = (net.width(), net.input_dim());
    let mut grad = NetGradient::zeros(m, n);
    let u = net.u().as_slice();
    {
        let du = grad.du.as_mut_slice();
        let db = grad.db.as_mut_slice();
        let dv = grad.dv.as_mut_slice();
        for &i in batch {
            let x = data.input(i);
            let z = net.pre_activation_unchecked(x);
            let phi: f64 = u.iter().zip(&z).map(|(&uj, &zj)| uj * zj.max(0.0)).sum();
            let r = phi - data.target(i);
            for j in 0..m {
                if z[j] > 0.0 {
                    let c = r * u[j];
                    du[j] += r * z[j];
                    db[j] += c;
                    for (d, &xk) in dv[j * n..(j + 1) * n].iter_mut().zip(x) {
                        *d += c * xk;
                    }
                }
            }
        }
    }
    let decay = reg.batch_decay(data, batch)?;
    let inv_b = 1.0 / batch.len() as f64;
    grad.dv.scale_in_place(inv_b);
    grad.dv.axpy(decay, net.v())?;
    grad.du.scale_in_place(inv_b);
    grad.du.axpy(reg.mu_u, net.u())?;
    for (d, &bj) in grad.db.as_mut_slice().iter_mut().zip(net.b().as_slice()) {
        *d = *d * inv_b + reg.mu_b * bj;
    }
    Ok(grad)
}

/// `(1/2B) Σ rᵢ² + (μ_U/2)‖U‖² + (μ̄_V/2)‖V‖² + (μ_b/2)‖b‖²`, with `μ̄_V` the
/// batch mean of `g`.
pub fn batch_loss(net: &TwoLayerNet, data: &Dataset, batch: &[usize], reg: &Regularizer) -> Result<f64> {
    check_batch(net, data, batch)?;
    let sq: f64 = batch
        .iter()
        .map(|&i| (net.forward_unchecked(data.input(i)) - data.target(i)).powi(2))
        .sum();
    let decay = reg.batch_decay(data, batch)?;
    let u = net.u().as_slice();
    let v = net.v().as_slice();
    let b = net.b().as_slice();
    Ok(sq / (2.0 * batch.len() as f64)
        + 0.5 * reg.mu_u * dot(u, u)
        + 0.5 * decay * dot(v, v)
        + 0.5 * reg.mu_b * dot(b, b))
}

/// Plain mean squared error `(1/N) Σ (φ(xᵢ) − yᵢ)²`, without the ½ or any penalty.
pub fn mse(net: &TwoLayerNet, data: &Dataset) -> Result<f64> {
    if data.input_dim() != net.input_dim() {
        return Err(Error::dims("mse", net.input_dim(), data.input_dim()));
    }
    if data.is_empty() {
        return Err(Error::InsufficientData {
            available: 0,
            requested: 1,
        });
    }
    let sum: f64 = (0..data.len())
        .map(|i| (net.forward_unchecked(data.input(i)) - data.target(i)).powi(2))
        .sum();
    Ok(sum / data.len() as f64)
}

/// Shuffles `0..n` and cuts it into consecutive batches of `batch_size`. With
/// `drop_last` the incomplete tail is left out.
pub fn epoch_batches(n: usize, batch_size: usize, drop_last: bool, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    if drop_last {
        idx.chunks_exact(batch_size).map(<[usize]>::to_vec).collect()
    } else {
        idx.chunks(batch_size).map(<[usize]>::to_vec).collect()
    }
}

/// The batches of epoch `epoch` of a run with the given config and sample count.
pub fn epoch_partition(n: usize, config: &TrainConfig, epoch: usize) -> Vec<Vec<usize>> {
    let mut rng = rng::epoch_rng(config.seed, epoch);
    epoch_batches(n, config.batch_size, config.drop_last, &mut rng)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub lr: f64,
    /// `‖dV‖_F` of every batch gradient, in step order.
    pub grad_norms: Vec<f64>,
}

impl EpochStats {
    pub fn grad_max(&self) -> f64 {
        self.grad_norms.iter().copied().fold(0.0, f64::max)
    }

    pub fn grad_mean(&self) -> f64 {
        if self.grad_norms.is_empty() {
            return 0.0;
        }
        self.grad_norms.iter().sum::<f64>() / self.grad_norms.len() as f64
    }
}

/// One pass of SGD over a fresh shuffle of `data`.
pub fn run_epoch(
    net: &mut TwoLayerNet,
    data: &Dataset,
    config: &TrainConfig,
    epoch: usize,
    rng: &mut Rng,
) -> Result<EpochStats> {
    if data.len() < config.batch_size || config.batch_size == 0 {
        return Err(Error::InsufficientData {
            available: data.len(),
            requested: config.batch_size,
        });
    }
    let lr = lr_at(epoch, config);
    let reg = config.regularizer();
    let batches = epoch_batches(data.len(), config.batch_size, config.drop_last, rng);
    let mut grad_norms = Vec::with_capacity(batches.len());
    for batch in &batches {
        let grad = batch_gradient(net, data, batch, &reg)?;
        grad_norms.push(frobenius_norm(&grad.dv));
        net.apply_gradient(lr, &grad)?;
    }
    Ok(EpochStats { lr, grad_norms })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_mse: f64,
    pub test_mse: f64,
    /// NaN when `V` is exactly zero.
    pub stable_rank: f64,
    pub v_fro: f64,
    pub grad_max: f64,
    pub grad_mean: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

pub const TRAIN_LOG_HEADER: &str = "epoch,lr,train_mse,test_mse,stable_rank,v_fro,grad_max,grad_mean";

impl TrainLog {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{TRAIN_LOG_HEADER}")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.epoch, r.lr, r.train_mse, r.test_mse, r.stable_rank, r.v_fro, r.grad_max, r.grad_mean
            )?;
        }
        Ok(())
    }
}

/// Trains `init` for `config.epochs` epochs, logging one record per epoch.
pub fn train(init: TwoLayerNet, train_set: &Dataset, test_set: &Dataset, config: &TrainConfig) -> Result<(TwoLayerNet, TrainLog)> {
    train_with(init, train_set, test_set, config, |_| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with(
    init: TwoLayerNet,
    train_set: &Dataset,
    test_set: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(TwoLayerNet, TrainLog)> {
    config.validate(train_set.len())?;
    if train_set.input_dim() != init.input_dim() || test_set.input_dim() != init.input_dim() {
        return Err(Error::dims("train", init.input_dim(), train_set.input_dim()));
    }
    config.gspec.validate(train_set)?;

    let mut net = init;
    let mut log = TrainLog::default();
    for epoch in 0..config.epochs {
        let mut rng = rng::epoch_rng(config.seed, epoch);
        let stats = run_epoch(&mut net, train_set, config, epoch, &mut rng)?;
        let record = EpochRecord {
            epoch,
            lr: stats.lr,
            train_mse: mse(&net, train_set)?,
            test_mse: mse(&net, test_set)?,
            stable_rank: stable_rank(net.v()).unwrap_or(f64::NAN),
            v_fro: frobenius_norm(net.v()),
            grad_max: stats.grad_max(),
            grad_mean: stats.grad_mean(),
        };
        on_epoch(&record);
        log.records.push(record);
    }
    Ok((net, log))
}
