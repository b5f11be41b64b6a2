//! The two-layer ReLU network `x ↦ U σ(Vx + b)` with closed-form gradients.

use std::io::{BufRead, Write};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, ColVec, Mat};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoLayerNet {
    u: Mat,
    v: Mat,
    b: ColVec,
}

/// Which hidden units fire for a given input. Unit `i` is active iff
/// `vᵢᵀx + bᵢ > 0`; a pre-activation of exactly zero counts as inactive.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ActivationPattern(pub Vec<bool>);

impl ActivationPattern {
    pub fn active_count(&self) -> usize {
        self.0.iter().filter(|&&a| a).count()
    }
}

/// Gradient with respect to `(U, V, b)`; `dv` has the shape of `V` (m×n).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetGradient {
    pub du: Mat,
    pub dv: Mat,
    pub db: ColVec,
}

impl NetGradient {
    pub fn zeros(m: usize, n: usize) -> Self {
        NetGradient {
            du: Mat::zeros(1, m),
            dv: Mat::zeros(m, n),
            db: ColVec::zeros(m),
        }
    }
}

impl TwoLayerNet {
    pub fn new(u: Mat, v: Mat, b: ColVec) -> Result<Self> {
        let m = v.rows();
        if u.shape() != (1, m) {
            return Err(Error::dims(
                "TwoLayerNet::new (U)",
                format!("1x{m}"),
                format!("{}x{}", u.rows(), u.cols()),
            ));
        }
        if b.dim() != m {
            return Err(Error::dims("TwoLayerNet::new (b)", m, b.dim()));
        }
        Ok(TwoLayerNet { u, v, b })
    }

    pub fn zeros(m: usize, n: usize) -> Self {
        TwoLayerNet {
            u: Mat::zeros(1, m),
            v: Mat::zeros(m, n),
            b: ColVec::zeros(m),
        }
    }

    /// Kaiming-normal initialization: `V ~ N(0, 2/n)`, `U ~ N(0, 2/m)`, `b = 0`.
    pub fn kaiming_init(m: usize, n: usize, seed: u64) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::EmptyShape { rows: m, cols: n });
        }
        let mut rng = rng::seeded(seed, rng::INIT_STREAM);
        let v_dist = Normal::new(0.0, (2.0 / n as f64).sqrt()).expect("positive std");
        let u_dist = Normal::new(0.0, (2.0 / m as f64).sqrt()).expect("positive std");
        let v: Vec<f64> = (0..m * n).map(|_| v_dist.sample(&mut rng)).collect();
        let u: Vec<f64> = (0..m).map(|_| u_dist.sample(&mut rng)).collect();
        TwoLayerNet::new(Mat::new(1, m, u)?, Mat::new(m, n, v)?, ColVec::zeros(m))
    }

    /// Hidden width `m`.
    pub fn width(&self) -> usize {
        self.v.rows()
    }

    /// Input dimension `n`.
    pub fn input_dim(&self) -> usize {
        self.v.cols()
    }

    pub fn u(&self) -> &Mat {
        &self.u
    }

    pub fn v(&self) -> &Mat {
        &self.v
    }

    pub fn b(&self) -> &ColVec {
        &self.b
    }

    /// Returns a copy with `V` replaced.
    pub fn with_v(&self, v: Mat) -> Result<Self> {
        if v.shape() != self.v.shape() {
            return Err(Error::dims(
                "with_v",
                format!("{}x{}", self.v.rows(), self.v.cols()),
                format!("{}x{}", v.rows(), v.cols()),
            ));
        }
        Ok(TwoLayerNet { v, ..self.clone() })
    }

    fn check_input(&self, op: &'static str, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::dims(op, self.input_dim(), x.len()));
        }
        Ok(())
    }

    /// `Vx + b`.
    pub fn pre_activation(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input("pre_activation", x)?;
        Ok(self.pre_activation_unchecked(x))
    }

    pub(crate) fn pre_activation_unchecked(&self, x: &[f64]) -> Vec<f64> {
        self.v
            .as_slice()
            .chunks_exact(x.len())
            .zip(self.b.as_slice())
            .map(|(row, &bi)| dot(row, x) + bi)
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input("forward", x)?;
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> f64 {
        let z = self.pre_activation_unchecked(x);
        self.u
            .as_slice()
            .iter()
            .zip(&z)
            .map(|(&ui, &zi)| ui * zi.max(0.0))
            .sum()
    }

    /// Evaluates `U D(x) (Vx + b)` with the 0/1 diagonal made explicit. Agrees
    /// with [`forward`](Self::forward) exactly.
    pub fn forward_masked(&self, x: &[f64]) -> Result<f64> {
        let z = self.pre_activation(x)?;
        let pattern = self.activation_pattern(x)?;
        Ok(self
            .u
            .as_slice()
            .iter()
            .zip(&pattern.0)
            .zip(&z)
            .map(|((&ui, &on), &zi)| if on { ui * zi } else { 0.0 })
            .sum())
    }

    pub fn activation_pattern(&self, x: &[f64]) -> Result<ActivationPattern> {
        let z = self.pre_activation(x)?;
        Ok(ActivationPattern(z.into_iter().map(|zi| zi > 0.0).collect()))
    }

    /// Distance of the nearest pre-activation from the ReLU kink, `minᵢ |vᵢᵀx + bᵢ|`.
    pub fn activation_margin(&self, x: &[f64]) -> Result<f64> {
        let z = self.pre_activation(x)?;
        Ok(z.into_iter().map(f64::abs).fold(f64::INFINITY, f64::min))
    }

    /// Gradient of `residual · φ(x)`:
    /// `dV = residual · (D Uᵀ) xᵀ`, `dU = residual · σ(Vx + b)ᵀ`, `db = residual · D Uᵀ`.
    pub fn grad_params(&self, x: &[f64], residual: f64) -> Result<NetGradient> {
        self.check_input("grad_params", x)?;
        let z = self.pre_activation_unchecked(x);
        let gated: Vec<f64> = self
            .u
            .as_slice()
            .iter()
            .zip(&z)
            .map(|(&ui, &zi)| if zi > 0.0 { residual * ui } else { 0.0 })
            .collect();
        let du: Vec<f64> = z.iter().map(|&zi| residual * zi.max(0.0)).collect();
        Ok(NetGradient {
            du: Mat::new(1, z.len(), du)?,
            dv: Mat::outer(&gated, x),
            db: ColVec::new(gated)?,
        })
    }

    /// `θ ← θ − step · grad`.
    pub fn apply_gradient(&mut self, step: f64, grad: &NetGradient) -> Result<()> {
        self.u.axpy(-step, &grad.du)?;
        self.v.axpy(-step, &grad.dv)?;
        if grad.db.dim() != self.b.dim() {
            return Err(Error::dims("apply_gradient", self.b.dim(), grad.db.dim()));
        }
        for (bi, &gi) in self.b.as_mut_slice().iter_mut().zip(grad.db.as_slice()) {
            *bi -= step * gi;
        }
        Ok(())
    }

    /// Writes the text checkpoint: a `m n` header line, then `U` on one line,
    /// the `m` rows of `V`, and `b` on one line. Values use the shortest
    /// representation that parses back to the same `f64`.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        fn line<W: Write>(w: &mut W, values: &[f64]) -> std::io::Result<()> {
            let mut first = true;
            for v in values {
                if !first {
                    write!(w, " ")?;
                }
                write!(w, "{v}")?;
                first = false;
            }
            writeln!(w)
        }
        writeln!(w, "{} {}", self.width(), self.input_dim())?;
        line(&mut w, self.u.as_slice())?;
        for i in 0..self.width() {
            line(&mut w, self.v.row(i))?;
        }
        line(&mut w, self.b.as_slice())?;
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let mut next_line = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((i, l)) => Ok((i + 1, l?)),
                None => Err(Error::Checkpoint {
                    line: 0,
                    message: format!("unexpected end of file while reading {what}"),
                }),
            }
        };
        let parse_row = |line: usize, text: &str, expected: usize| -> Result<Vec<f64>> {
            let values = text
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>().map_err(|e| Error::Checkpoint {
                        line,
                        message: format!("`{t}`: {e}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if values.len() != expected {
                return Err(Error::Checkpoint {
                    line,
                    message: format!("expected {expected} values, found {}", values.len()),
                });
            }
            Ok(values)
        };

        let (ln, header) = next_line("header")?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Checkpoint {
                line: ln,
                message: format!("bad header: {e}"),
            })?;
        let [m, n] = dims[..] else {
            return Err(Error::Checkpoint {
                line: ln,
                message: "header must be `m n`".into(),
            });
        };
        let (ln, text) = next_line("U")?;
        let u = parse_row(ln, &text, m)?;
        let mut v = Vec::with_capacity(m * n);
        for _ in 0..m {
            let (ln, text) = next_line("V")?;
            v.extend(parse_row(ln, &text, n)?);
        }
        let (ln, text) = next_line("b")?;
        let b = parse_row(ln, &text, m)?;
        TwoLayerNet::new(Mat::new(1, m, u)?, Mat::new(m, n, v)?, ColVec::new(b)?)
    }
}
