//! Dense row-major matrices and the spectral diagnostics used on network weights.

use std::ops::{Index, IndexMut};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Off-diagonal threshold of the Jacobi sweeps, relative to the column norms.
const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 80;

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A dense real matrix stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMat")]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMat> for Mat {
    type Error = Error;

    fn try_from(raw: RawMat) -> Result<Self> {
        Mat::new(raw.rows, raw.cols, raw.data)
    }
}

impl Mat {
    /// Builds a matrix from row-major entries, rejecting empty shapes,
    /// length mismatches and non-finite values.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyShape { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(Error::dims("Mat::new", rows * cols, data.len()));
        }
        check_finite(&data)?;
        Ok(Mat { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::dims("Mat::from_rows", cols, bad.len()));
        }
        Mat::new(rows.len(), cols, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "empty matrix shape {rows}x{cols}");
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(k: usize) -> Self {
        Mat::diag(&vec![1.0; k])
    }

    pub fn diag(values: &[f64]) -> Self {
        let k = values.len();
        let mut out = Mat::zeros(k, k);
        for (i, &v) in values.iter().enumerate() {
            out[(i, i)] = v;
        }
        out
    }

    /// The outer product `u vᵀ`.
    pub fn outer(u: &[f64], v: &[f64]) -> Self {
        let mut out = Mat::zeros(u.len(), v.len());
        for (row, &ui) in out.data.chunks_exact_mut(v.len()).zip(u) {
            for (o, &vj) in row.iter_mut().zip(v) {
                *o = ui * vj;
            }
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks_exact(self.cols).map(<[f64]>::to_vec).collect()
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn matmul(&self, rhs: &Mat) -> Result<Mat> {
        if self.cols != rhs.rows {
            return Err(Error::dims(
                "matmul",
                format!("{} rows on the right", self.cols),
                rhs.rows,
            ));
        }
        let mut out = Mat::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `A x` for a vector of length `cols`.
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::dims("mul_vec", self.cols, x.len()));
        }
        Ok(self.data.chunks_exact(self.cols).map(|r| dot(r, x)).collect())
    }

    /// `Aᵀ y` for a vector of length `rows`.
    pub fn tr_mul_vec(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows {
            return Err(Error::dims("tr_mul_vec", self.rows, y.len()));
        }
        let mut out = vec![0.0; self.cols];
        for (row, &yi) in self.data.chunks_exact(self.cols).zip(y) {
            for (o, &a) in out.iter_mut().zip(row) {
                *o += a * yi;
            }
        }
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> Mat {
        let mut out = self.clone();
        out.scale_in_place(s);
        out
    }

    pub fn scale_in_place(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn add(&self, rhs: &Mat) -> Result<Mat> {
        let mut out = self.clone();
        out.axpy(1.0, rhs)?;
        Ok(out)
    }

    pub fn sub(&self, rhs: &Mat) -> Result<Mat> {
        let mut out = self.clone();
        out.axpy(-1.0, rhs)?;
        Ok(out)
    }

    /// `self += alpha * rhs`.
    pub fn axpy(&mut self, alpha: f64, rhs: &Mat) -> Result<()> {
        if self.shape() != rhs.shape() {
            return Err(Error::dims(
                "axpy",
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", rhs.rows, rhs.cols),
            ));
        }
        for (a, &b) in self.data.iter_mut().zip(&rhs.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// A dense real column vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ColVec(Vec<f64>);

impl TryFrom<Vec<f64>> for ColVec {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        ColVec::new(v)
    }
}

impl From<ColVec> for Vec<f64> {
    fn from(v: ColVec) -> Self {
        v.0
    }
}

impl ColVec {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyShape { rows: 0, cols: 1 });
        }
        check_finite(&entries)?;
        Ok(ColVec(entries))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "empty vector");
        ColVec(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }
}

pub fn frobenius_norm(a: &Mat) -> f64 {
    dot(&a.data, &a.data).sqrt()
}

/// Outcome of a power iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerIteration {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Largest singular value by power iteration on `AᵀA`, started from the
/// normalized all-ones vector. Stops once the estimate changes by less than
/// `tol` relative, or after `max_iters` products; in the latter case the last
/// estimate is returned with `converged == false`.
pub fn spectral_norm(a: &Mat, tol: f64, max_iters: usize) -> Result<PowerIteration> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "power iteration tolerance must be positive, got {tol}"
        )));
    }
    let fro2 = dot(&a.data, &a.data);
    if fro2 == 0.0 {
        return Ok(PowerIteration {
            value: 0.0,
            iterations: 0,
            converged: true,
        });
    }

    let n = a.cols;
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let av = a.mul_vec(&v)?;
    if dot(&av, &av) <= 1e-24 * fro2 {
        // The start vector lies (numerically) in the null space.
        v[0] += 1e-8;
        let norm = dot(&v, &v).sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
    }

    let mut prev = f64::NAN;
    for iter in 1..=max_iters {
        let av = a.mul_vec(&v)?;
        let sigma = dot(&av, &av).sqrt();
        let w = a.tr_mul_vec(&av)?;
        let wn = dot(&w, &w).sqrt();
        if (sigma - prev).abs() <= tol * sigma || wn == 0.0 {
            return Ok(PowerIteration {
                value: sigma,
                iterations: iter,
                converged: true,
            });
        }
        prev = sigma;
        v = w.into_iter().map(|x| x / wn).collect();
    }
    Ok(PowerIteration {
        value: prev,
        iterations: max_iters,
        converged: false,
    })
}

/// All `min(rows, cols)` singular values in descending order, by one-sided
/// (Hestenes) Jacobi rotations on the columns of `A` or `Aᵀ`, whichever has
/// fewer columns.
pub fn singular_values(a: &Mat) -> Vec<f64> {
    // Column-major copy of the orientation with k = min(rows, cols) columns.
    let (k, len, mut cols) = if a.rows >= a.cols {
        (a.cols, a.rows, a.transpose().data)
    } else {
        (a.rows, a.cols, a.data.clone())
    };
    let scale2 = dot(&cols, &cols);
    // Rotations between columns at the rounding-noise floor change nothing.
    let floor = (f64::EPSILON * f64::EPSILON) * scale2;

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..k {
            for q in (p + 1)..k {
                let (head, tail) = cols.split_at_mut(q * len);
                let cp = &mut head[p * len..(p + 1) * len];
                let cq = &mut tail[..len];
                let alpha = dot(cp, cp);
                let beta = dot(cq, cq);
                let gamma = dot(cp, cq);
                if gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() || gamma.abs() <= floor {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
                    let (xp, xq) = (*x, *y);
                    *x = c * xp - s * xq;
                    *y = s * xp + c * xq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sv: Vec<f64> = cols.chunks_exact(len).map(|c| dot(c, c).sqrt()).collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

/// Number of singular values above `rel_threshold · σ_max`.
pub fn numerical_rank(a: &Mat, rel_threshold: f64) -> usize {
    let sv = singular_values(a);
    let cutoff = rel_threshold * sv[0];
    if sv[0] == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > cutoff).count()
}

/// `‖A‖_F² / ‖A‖_2²`.
pub fn stable_rank(a: &Mat) -> Result<f64> {
    if a.is_zero() {
        return Err(Error::ZeroMatrix);
    }
    let fro2 = dot(&a.data, &a.data);
    let top = singular_values(a)[0];
    Ok(fro2 / (top * top))
}

/// A matrix of i.i.d. `N(mean, variance)` entries drawn from a seeded generator.
pub fn gaussian_matrix(rows: usize, cols: usize, mean: f64, variance: f64, seed: u64) -> Result<Mat> {
    if !(variance >= 0.0) || !variance.is_finite() || !mean.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "gaussian needs finite mean and variance >= 0, got mean {mean}, variance {variance}"
        )));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::EmptyShape { rows, cols });
    }
    let normal = Normal::new(mean, variance.sqrt())
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = rng::seeded(seed, rng::INIT_STREAM);
    let data = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
    Mat::new(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frobenius_cases() {
        assert_eq!(frobenius_norm(&Mat::zeros(2, 2)), 0.0);
        assert_eq!(frobenius_norm(&Mat::identity(3)), 3f64.sqrt());
        assert_eq!(frobenius_norm(&Mat::from_rows(&[vec![3.0, 4.0]]).unwrap()), 5.0);
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(matches!(Mat::new(0, 3, vec![]), Err(Error::EmptyShape { .. })));
        assert!(matches!(
            Mat::new(2, 2, vec![1.0; 3]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            Mat::new(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite { index: 1, .. })
        ));
        assert!(ColVec::new(vec![f64::INFINITY]).is_err());
        assert!(serde_json::from_str::<Mat>(r#"{"rows":1,"cols":2,"data":[1.0]}"#).is_err());
    }

    #[test]
    fn matmul_and_transpose() {
        let a = Mat::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let b = a.transpose();
        assert_eq!(b.shape(), (3, 2));
        let g = a.matmul(&b).unwrap();
        assert_eq!(g.to_rows(), vec![vec![14.0, 32.0], vec![32.0, 77.0]]);
        assert!(a.matmul(&a).is_err());
        assert_eq!(a.mul_vec(&[1.0, 0.0, -1.0]).unwrap(), vec![-2.0, -2.0]);
        assert_eq!(a.tr_mul_vec(&[1.0, 1.0]).unwrap(), vec![5.0, 7.0, 9.0]);
    }

    #[test]
    fn spectral_norm_cases() {
        let id = spectral_norm(&Mat::identity(3), 1e-12, 100).unwrap();
        assert!(id.converged);
        assert!((id.value - 1.0).abs() < 1e-12);
        let d = spectral_norm(&Mat::diag(&[3.0, 1.0]), 1e-14, 1000).unwrap();
        assert!((d.value - 3.0).abs() < 1e-12);
        assert!(spectral_norm(&Mat::identity(2), 0.0, 10).is_err());
    }

    #[test]
    fn spectral_norm_start_in_null_space() {
        // A·1 = 0, so the all-ones start must be perturbed.
        let a = Mat::from_rows(&[vec![1.0, -1.0]]).unwrap();
        let p = spectral_norm(&a, 1e-12, 1000).unwrap();
        assert!((p.value - 2f64.sqrt()).abs() < 1e-9, "{p:?}");
    }

    #[test]
    fn spectral_norm_reports_non_convergence() {
        let a = gaussian_matrix(20, 20, 0.0, 1.0, 3).unwrap();
        let p = spectral_norm(&a, 1e-15, 2).unwrap();
        assert!(!p.converged);
        assert_eq!(p.iterations, 2);
        assert!(p.value > 0.0);
    }

    #[test]
    fn singular_value_cases() {
        assert_eq!(singular_values(&Mat::diag(&[2.0, 1.0])), vec![2.0, 1.0]);
        assert_eq!(singular_values(&Mat::diag(&[1.0, 2.0])), vec![2.0, 1.0]);
        let u = [0.6, 0.8, 0.0];
        let v = [0.0, 1.0];
        let sv = singular_values(&Mat::outer(&u, &v));
        assert!((sv[0] - 1.0).abs() < 1e-15);
        assert!(sv[1].abs() < 1e-15);
        // wide input takes the transposed path
        let w = Mat::outer(&v, &u);
        assert_eq!(singular_values(&w).len(), 2);
    }

    #[test]
    fn stable_rank_cases() {
        assert!((stable_rank(&Mat::identity(2)).unwrap() - 2.0).abs() < 1e-12);
        assert!((stable_rank(&Mat::diag(&[2.0, 1.0])).unwrap() - 1.25).abs() < 1e-12);
        let r1 = Mat::outer(&[1.0, -2.0, 0.5], &[3.0, 1.0]);
        assert!((stable_rank(&r1).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(stable_rank(&Mat::zeros(3, 2)), Err(Error::ZeroMatrix)));
    }

    #[test]
    fn gaussian_degenerate_and_deterministic() {
        let g = gaussian_matrix(4, 3, 1.5, 0.0, 9).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 1.5));
        let a = gaussian_matrix(5, 5, 0.0, 1.0, 42).unwrap();
        let b = gaussian_matrix(5, 5, 0.0, 1.0, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, gaussian_matrix(5, 5, 0.0, 1.0, 43).unwrap());
        assert!(gaussian_matrix(2, 2, 0.0, -1.0, 0).is_err());
    }

    #[test]
    fn numerical_rank_of_products() {
        let left = gaussian_matrix(10, 3, 0.0, 1.0, 1).unwrap();
        let right = gaussian_matrix(3, 7, 0.0, 1.0, 2).unwrap();
        let a = left.matmul(&right).unwrap();
        assert_eq!(numerical_rank(&a, 1e-9), 3);
        assert_eq!(numerical_rank(&Mat::zeros(2, 2), 1e-9), 0);
    }
}
