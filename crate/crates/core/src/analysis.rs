//! Diagnostics of a trained network: batch-gradient census, constructive
//! low-rank certificates, generalization gap, generalization-bound formulas
//! and rounded-label accuracy.

use std::collections::HashSet;
use std::io::Write;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm, Mat};
use crate::network::TwoLayerNet;
use crate::rng;
use crate::training::{batch_gradient, epoch_batches, mse, GSpec, Regularizer};

/// Smallest `|g(x₁,y₁) − g(x₂,y₂)|` accepted for a variable-decay certificate.
pub const MIN_DECAY_GAP: f64 = 1e-12;

pub const DEFAULT_BINS: usize = 30;

/// A family of size-`B` batches over which batch gradients are measured.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BatchFamily {
    /// The complete batches of training epoch `epoch` of a run seeded with `seed`.
    EpochPartition { seed: u64, epoch: usize },
    /// `P₀ ∪ {i₁}`, `P₁ ∪ {i₁}`, and for every other sample `i` the batch
    /// `P ∪ {i}` with `P = P₁` if `i ∈ P₀` and `P = P₀` otherwise.
    SwapFamily { p0: Vec<usize>, p1: Vec<usize>, i1: usize },
    /// `count` independent uniformly drawn batches.
    RandomBatches { count: usize, seed: u64 },
}

fn check_base(name: &str, base: &[usize], b: usize, n: usize) -> Result<()> {
    if base.len() + 1 != b {
        return Err(Error::InfeasibleFamily(format!(
            "base {name} must hold B - 1 = {} samples, got {}",
            b.saturating_sub(1),
            base.len()
        )));
    }
    if let Some(&i) = base.iter().find(|&&i| i >= n) {
        return Err(Error::InfeasibleFamily(format!("index {i} in {name} is out of range")));
    }
    if base.iter().collect::<HashSet<_>>().len() != base.len() {
        return Err(Error::InfeasibleFamily(format!("base {name} repeats an index")));
    }
    Ok(())
}

fn swap_batches(p0: &[usize], p1: &[usize], i1: usize, b: usize, n: usize) -> Result<Vec<Vec<usize>>> {
    if b < 2 || n < 2 * b {
        return Err(Error::InfeasibleFamily(format!(
            "swap family needs B >= 2 and N >= 2B, got B = {b}, N = {n}"
        )));
    }
    check_base("P0", p0, b, n)?;
    check_base("P1", p1, b, n)?;
    if i1 >= n {
        return Err(Error::InfeasibleFamily(format!("i1 = {i1} is out of range")));
    }
    let in_p0: HashSet<usize> = p0.iter().copied().collect();
    let in_p1: HashSet<usize> = p1.iter().copied().collect();
    if !in_p0.is_disjoint(&in_p1) {
        return Err(Error::InfeasibleFamily("P0 and P1 overlap".into()));
    }
    if in_p0.contains(&i1) || in_p1.contains(&i1) {
        return Err(Error::InfeasibleFamily(format!("i1 = {i1} lies in a base")));
    }
    let with = |base: &[usize], i: usize| {
        let mut batch = base.to_vec();
        batch.push(i);
        batch
    };
    let mut out = vec![with(p0, i1), with(p1, i1)];
    for i in (0..n).filter(|&i| i != i1) {
        out.push(if in_p0.contains(&i) { with(p1, i) } else { with(p0, i) });
    }
    Ok(out)
}

impl BatchFamily {
    /// Expands the family into explicit index sets for `n` samples.
    pub fn batches(&self, n: usize, b: usize) -> Result<Vec<Vec<usize>>> {
        if b == 0 || b > n {
            return Err(Error::InfeasibleFamily(format!("batch size {b} with {n} samples")));
        }
        match self {
            BatchFamily::EpochPartition { seed, epoch } => {
                let mut rng = rng::epoch_rng(*seed, *epoch);
                Ok(epoch_batches(n, b, true, &mut rng))
            }
            BatchFamily::SwapFamily { p0, p1, i1 } => swap_batches(p0, p1, *i1, b, n),
            BatchFamily::RandomBatches { count, seed } => {
                let mut rng = rng::seeded(*seed, rng::INIT_STREAM);
                Ok((0..*count).map(|_| index::sample(&mut rng, n, b).into_vec()).collect())
            }
        }
    }
}

/// Equal-width histogram over `[edges[0], edges[last]]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// `bins` equal-width bins on `[0, max(values)]`; the maximum lands in the
    /// last bin. When every value is zero all counts go to the first bin.
    pub fn from_values(values: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let max = values.iter().copied().fold(0.0, f64::max);
        let width = max / bins as f64;
        let edges = (0..=bins).map(|k| if k == bins { max } else { k as f64 * width }).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let k = if width > 0.0 {
                ((v / width) as usize).min(bins - 1)
            } else {
                0
            };
            counts[k] += 1;
        }
        Histogram { edges, counts }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "bin_lo,bin_hi,count")?;
        for (k, c) in self.counts.iter().enumerate() {
            writeln!(w, "{},{},{}", self.edges[k], self.edges[k + 1], c)?;
        }
        Ok(())
    }
}

/// Frobenius norms of the `V` component of every batch gradient in a family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientCensus {
    pub family: BatchFamily,
    pub batches: Vec<Vec<usize>>,
    pub norms: Vec<f64>,
    /// Largest norm: the empirical `ε` of the family.
    pub epsilon: f64,
    pub histogram: Histogram,
}

impl GradientCensus {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "batch_id,norm")?;
        for (k, n) in self.norms.iter().enumerate() {
            writeln!(w, "{k},{n}")?;
        }
        Ok(())
    }
}

fn v_gradient_norms(net: &TwoLayerNet, data: &Dataset, batches: &[Vec<usize>], gspec: GSpec) -> Result<Vec<f64>> {
    // U and b penalties do not touch the V component
    let reg = Regularizer {
        mu_u: 0.0,
        mu_b: 0.0,
        g: gspec,
    };
    batches
        .iter()
        .map(|batch| Ok(frobenius_norm(&batch_gradient(net, data, batch, &reg)?.dv)))
        .collect()
}

pub fn gradient_census(
    net: &TwoLayerNet,
    data: &Dataset,
    batch_size: usize,
    gspec: GSpec,
    family: BatchFamily,
    bins: usize,
) -> Result<GradientCensus> {
    let batches = family.batches(data.len(), batch_size)?;
    let norms = v_gradient_norms(net, data, &batches, gspec)?;
    let epsilon = norms.iter().copied().fold(0.0, f64::max);
    let histogram = Histogram::from_values(&norms, bins);
    Ok(GradientCensus {
        family,
        batches,
        norms,
        epsilon,
        histogram,
    })
}

/// Which construction a certificate follows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CertificateMode {
    /// Rank-one certificate for a constant decay `g ≡ μ_V`. Without an index
    /// the sample minimizing the resulting distance is used.
    ConstantG { i1: Option<usize> },
    /// Rank-two certificate from two samples with different decay values.
    /// Without indices the samples with the largest and smallest `g` are used.
    VariableG { pair: Option<(usize, usize)> },
}

/// A low-rank matrix `Ṽ` near `V` with the batch-gradient bound that certifies
/// the distance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankCertificate {
    pub mode: String,
    pub batch_size: usize,
    /// The matrix being certified.
    pub v: Mat,
    pub v_tilde: Mat,
    pub rank_bound: usize,
    pub epsilon: f64,
    /// `(2B+1)/μ_V` for constant decay, `2B/|g₁−g₂|` for variable decay.
    pub constant_proof: f64,
    /// `2B/μ_V` for constant decay; equal to `constant_proof` for variable decay.
    pub constant_paper: f64,
    pub distance: f64,
    pub holds_proof: bool,
    pub holds_paper: bool,
    pub indices: Vec<usize>,
    pub p0: Vec<usize>,
    pub p1: Vec<usize>,
}

/// Result of re-checking a certificate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateCheck {
    pub distance: f64,
    pub holds_proof: bool,
    pub holds_paper: bool,
}

/// `r_i · ∂φ(x_i)/∂V` with `r_i = φ(x_i) − y_i`.
fn residual_term(net: &TwoLayerNet, data: &Dataset, i: usize) -> Result<Mat> {
    let x = data.input(i);
    let r = net.forward(x)? - data.target(i);
    Ok(net.grad_params(x, r)?.dv)
}

fn first_excluding(n: usize, count: usize, skip: &HashSet<usize>) -> Vec<usize> {
    (0..n).filter(|i| !skip.contains(i)).take(count).collect()
}

/// Builds the certificate for `net.v()` on `data` with batch size `batch_size`.
///
/// `bases` fixes `(P₀, P₁)`; by default they are the first `B − 1` and the
/// next `B − 1` samples not used as certificate indices (`P₁` is unused and
/// empty in variable mode).
pub fn build_certificate(
    net: &TwoLayerNet,
    data: &Dataset,
    batch_size: usize,
    gspec: GSpec,
    mode: &CertificateMode,
    bases: Option<(Vec<usize>, Vec<usize>)>,
) -> Result<RankCertificate> {
    let n = data.len();
    let b = batch_size;
    if data.input_dim() != net.input_dim() {
        return Err(Error::dims("build_certificate", net.input_dim(), data.input_dim()));
    }
    let v = net.v().clone();

    match *mode {
        CertificateMode::ConstantG { i1 } => {
            let GSpec::Constant { mu_v } = gspec else {
                return Err(Error::InvalidArgument(
                    "constant-decay certificate needs a constant g".into(),
                ));
            };
            if !(mu_v > 0.0) {
                return Err(Error::InvalidArgument(format!("mu_v must be positive, got {mu_v}")));
            }
            if b < 2 || n < 2 * b {
                return Err(Error::InfeasibleFamily(format!(
                    "constant-decay certificate needs B >= 2 and N >= 2B, got B = {b}, N = {n}"
                )));
            }
            let candidate = |i: usize| -> Result<(Mat, f64)> {
                let v_tilde = residual_term(net, data, i)?.scale(-1.0 / mu_v);
                let d = frobenius_norm(&v.sub(&v_tilde)?);
                Ok((v_tilde, d))
            };
            let i1 = match i1 {
                Some(i) if i >= n => {
                    return Err(Error::InfeasibleFamily(format!("i1 = {i} is out of range")))
                }
                Some(i) => i,
                None => {
                    let mut best = (0, f64::INFINITY);
                    for i in 0..n {
                        let (_, d) = candidate(i)?;
                        if d < best.1 {
                            best = (i, d);
                        }
                    }
                    best.0
                }
            };
            let (p0, p1) = match bases {
                Some(bases) => bases,
                None => {
                    let picked = first_excluding(n, 2 * (b - 1), &HashSet::from([i1]));
                    (picked[..b - 1].to_vec(), picked[b - 1..].to_vec())
                }
            };
            let family = BatchFamily::SwapFamily {
                p0: p0.clone(),
                p1: p1.clone(),
                i1,
            };
            let batches = family.batches(n, b)?;
            let epsilon = v_gradient_norms(net, data, &batches, gspec)?
                .into_iter()
                .fold(0.0, f64::max);
            let (v_tilde, distance) = candidate(i1)?;
            let constant_proof = (2 * b + 1) as f64 / mu_v;
            let constant_paper = (2 * b) as f64 / mu_v;
            Ok(RankCertificate {
                mode: "constant_g".into(),
                batch_size: b,
                v,
                v_tilde,
                rank_bound: 1,
                epsilon,
                constant_proof,
                constant_paper,
                distance,
                holds_proof: distance <= constant_proof * epsilon,
                holds_paper: distance <= constant_paper * epsilon,
                indices: vec![i1],
                p0,
                p1,
            })
        }
        CertificateMode::VariableG { pair } => {
            if b < 2 || n < b + 1 {
                return Err(Error::InfeasibleFamily(format!(
                    "variable-decay certificate needs B >= 2 and N > B, got B = {b}, N = {n}"
                )));
            }
            let g: Vec<f64> = (0..n)
                .map(|i| gspec.eval(data.input(i), data.target(i)))
                .collect();
            let (i1, i2) = match pair {
                Some((i1, i2)) => {
                    if i1 >= n || i2 >= n || i1 == i2 {
                        return Err(Error::InfeasibleFamily(format!(
                            "invalid certificate pair ({i1}, {i2})"
                        )));
                    }
                    (i1, i2)
                }
                None => {
                    let argmax = (0..n).fold(0, |best, i| if g[i] > g[best] { i } else { best });
                    let argmin = (0..n).fold(0, |best, i| if g[i] < g[best] { i } else { best });
                    (argmax, argmin)
                }
            };
            let gap = g[i1] - g[i2];
            if !(gap.abs() >= MIN_DECAY_GAP) {
                return Err(Error::DegenerateDecayGap { i1, i2, gap });
            }
            let p0 = match bases {
                Some((p0, _)) => p0,
                None => first_excluding(n, b - 1, &HashSet::from([i1, i2])),
            };
            check_base("P0", &p0, b, n)?;
            if p0.contains(&i1) || p0.contains(&i2) {
                return Err(Error::InfeasibleFamily("certificate pair lies in P0".into()));
            }
            let mut s1 = p0.clone();
            s1.push(i1);
            let mut s2 = p0.clone();
            s2.push(i2);
            let epsilon = v_gradient_norms(net, data, &[s1, s2], gspec)?
                .into_iter()
                .fold(0.0, f64::max);

            let t1 = residual_term(net, data, i1)?;
            let t2 = residual_term(net, data, i2)?;
            let v_tilde = t1.sub(&t2)?.scale(-1.0 / gap);
            let distance = frobenius_norm(&v.sub(&v_tilde)?);
            let constant_proof = (2 * b) as f64 / gap.abs();
            Ok(RankCertificate {
                mode: "variable_g".into(),
                batch_size: b,
                v,
                v_tilde,
                rank_bound: 2,
                epsilon,
                constant_proof,
                constant_paper: constant_proof,
                distance,
                holds_proof: distance <= constant_proof * epsilon,
                holds_paper: distance <= constant_proof * epsilon,
                indices: vec![i1, i2],
                p0,
                p1: Vec::new(),
            })
        }
    }
}

/// Recomputes `‖V − Ṽ‖_F` and compares it with both constants times `ε`.
pub fn verify_certificate(cert: &RankCertificate) -> Result<CertificateCheck> {
    let distance = frobenius_norm(&cert.v.sub(&cert.v_tilde)?);
    Ok(CertificateCheck {
        distance,
        holds_proof: distance <= cert.constant_proof * cert.epsilon,
        holds_paper: distance <= cert.constant_paper * cert.epsilon,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub train_mse: f64,
    pub test_mse: f64,
    /// `test_mse − train_mse`.
    pub gap: f64,
    pub abs_gap: f64,
}

pub fn generalization_gap(net: &TwoLayerNet, train: &Dataset, test: &Dataset) -> Result<GapReport> {
    let train_mse = mse(net, train)?;
    let test_mse = mse(net, test)?;
    let gap = test_mse - train_mse;
    Ok(GapReport {
        train_mse,
        test_mse,
        gap,
        abs_gap: gap.abs(),
    })
}

/// Evaluated generalization-bound formulas. All terms carry the caller's `C L²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// `C L² √(ln(1/δ)/N)`.
    pub delta_term: f64,
    /// `C L² √(mn ln m ln N / N)`.
    pub full_complexity: f64,
    /// `C L² √((m+n) ln m ln N / N)`.
    pub lowrank_complexity: f64,
    pub full_bound: f64,
    pub lowrank_bound: f64,
    /// `full_bound / lowrank_bound`.
    pub ratio: f64,
    /// Pseudo-dimension estimate `C mn ln m` of the full class.
    pub pdim_full: f64,
    /// Pseudo-dimension estimate `C (m+n) k ln m` of the rank-`k` class.
    pub pdim_lowrank: f64,
}

/// Evaluates the full-rank and low-rank generalization bounds for width `m`,
/// input dimension `n`, rank `k` and `samples` training points.
pub fn bound_value(m: usize, n: usize, k: usize, samples: f64, delta: f64, l: f64, c: f64) -> Result<BoundReport> {
    if m < 2 || n < 2 || k == 0 || !(samples >= 2.0) || !samples.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "bound needs m, n >= 2, k >= 1, N >= 2; got m = {m}, n = {n}, k = {k}, N = {samples}"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(l > 0.0 && c > 0.0) || !l.is_finite() || !c.is_finite() {
        return Err(Error::InvalidArgument(format!("C and L must be positive, got C = {c}, L = {l}")));
    }
    let (mf, nf) = (m as f64, n as f64);
    let scale = c * l * l;
    let logs = mf.ln() * samples.ln();
    let delta_term = scale * ((1.0 / delta).ln() / samples).sqrt();
    let full_complexity = scale * (mf * nf * logs / samples).sqrt();
    let lowrank_complexity = scale * ((mf + nf) * logs / samples).sqrt();
    let full_bound = delta_term + full_complexity;
    let lowrank_bound = delta_term + lowrank_complexity;
    Ok(BoundReport {
        delta_term,
        full_complexity,
        lowrank_complexity,
        full_bound,
        lowrank_bound,
        ratio: full_bound / lowrank_bound,
        pdim_full: c * mf * nf * mf.ln(),
        pdim_lowrank: c * (mf + nf) * k as f64 * mf.ln(),
    })
}

/// Fraction of samples whose label equals `clamp(round(φ(x)), 0, 9)`.
pub fn accuracy_round(net: &TwoLayerNet, data: &Dataset) -> Result<f64> {
    if data.input_dim() != net.input_dim() {
        return Err(Error::dims("accuracy_round", net.input_dim(), data.input_dim()));
    }
    let mut hits = 0usize;
    for i in 0..data.len() {
        let y = data.target(i);
        if y.fract() != 0.0 || !(0.0..=9.0).contains(&y) {
            return Err(Error::NonIntegerTarget { index: i, value: y });
        }
        let pred = net.forward_unchecked(data.input(i)).round().clamp(0.0, 9.0);
        if pred == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}
