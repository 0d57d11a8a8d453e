//! Smoothed inverse-CDF sampler for binary features.
//!
//! A binary feature whose value is 0 with probability `beta` can be sampled by
//! drawing `v ~ U(0,1)` and applying the step function `v <= beta -> 0, else 1`.
//! The step is replaced by the differentiable surrogate
//!
//! ```text
//! t(v, alpha, beta) = (tanh(alpha * (v - beta)) + 1) / 2
//! ```
//!
//! so the adversary can tune `(alpha, beta)` by gradient methods. Generator
//! parameters are always handled as the stacked vector
//! `(alpha_1..alpha_q, beta_1..beta_q)`.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};

/// Smallest value the smoothed step returns.
pub const T_MIN: f64 = f64::MIN_POSITIVE;
/// Largest value the smoothed step returns (the f64 just below 1).
pub const T_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

/// Slope/threshold parameters of the generator, one pair per feature.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl GeneratorParams {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::InvalidArgument("generator needs q >= 1".into()));
        }
        if alpha.len() != beta.len() {
            return Err(Error::dim("GeneratorParams beta", alpha.len(), beta.len()));
        }
        if alpha.iter().chain(&beta).any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(
                "generator parameters must be finite".into(),
            ));
        }
        Ok(Self { alpha, beta })
    }

    /// Uniform slope `alpha0` on every feature with the given thresholds.
    pub fn with_uniform_alpha(alpha0: f64, beta: Vec<f64>) -> Result<Self> {
        Self::new(vec![alpha0; beta.len()], beta)
    }

    pub fn q(&self) -> usize {
        self.alpha.len()
    }

    /// `(alpha_1..alpha_q, beta_1..beta_q)`.
    pub fn to_stacked(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.q());
        out.extend_from_slice(&self.alpha);
        out.extend_from_slice(&self.beta);
        out
    }

    pub fn from_stacked(theta: &[f64]) -> Result<Self> {
        if !theta.len().is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "stacked generator parameters must have even length, got {}",
                theta.len()
            )));
        }
        let q = theta.len() / 2;
        Self::new(theta[..q].to_vec(), theta[q..].to_vec())
    }

    /// The mirrored parameters `(-alpha, 2 z - beta)` that produce the same
    /// sample as `self` for the single noise row `z`.
    pub fn mirrored(&self, z_row: &[f64]) -> Result<Self> {
        if z_row.len() != self.q() {
            return Err(Error::dim("mirrored z_row", self.q(), z_row.len()));
        }
        Ok(Self {
            alpha: self.alpha.iter().map(|a| -a).collect(),
            beta: self
                .beta
                .iter()
                .zip(z_row)
                .map(|(b, z)| 2.0 * z - b)
                .collect(),
        })
    }
}

/// Uniform noise `z` in `(0,1)^{m x q}`, fixed before the solve.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseMatrix {
    z: DMatrix<f64>,
}

impl NoiseMatrix {
    pub fn new(z: DMatrix<f64>) -> Result<Self> {
        if z.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
            return Err(Error::InvalidArgument(
                "noise entries must lie strictly inside (0,1)".into(),
            ));
        }
        Ok(Self { z })
    }

    pub fn from_row_slice(m: usize, q: usize, data: &[f64]) -> Result<Self> {
        if data.len() != m * q {
            return Err(Error::dim("NoiseMatrix data", m * q, data.len()));
        }
        Self::new(DMatrix::from_row_slice(m, q, data))
    }

    /// Draws `m x q` entries from `U(0,1)`, rejecting an exact zero.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, m: usize, q: usize) -> Self {
        let z = DMatrix::from_fn(m, q, |_, _| loop {
            let v: f64 = rng.gen();
            if v > 0.0 {
                break v;
            }
        });
        Self { z }
    }

    pub fn rows(&self) -> usize {
        self.z.nrows()
    }

    pub fn cols(&self) -> usize {
        self.z.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn row(&self, k: usize) -> Vec<f64> {
        self.z.row(k).iter().copied().collect()
    }
}

/// Exact inverse CDF of a binary feature that is 0 with probability `beta`.
pub fn step_inverse_cdf(v: f64, beta: f64) -> f64 {
    if v <= beta {
        0.0
    } else {
        1.0
    }
}

// logistic(2u) == (tanh(u) + 1) / 2, evaluated without cancellation for u << 0.
fn half_tanh_plus_half(u: f64) -> f64 {
    let t = if u >= 0.0 {
        1.0 / (1.0 + (-2.0 * u).exp())
    } else {
        let e = (2.0 * u).exp();
        e / (1.0 + e)
    };
    t.clamp(T_MIN, T_MAX)
}

// sech^2(u) / 2, exact to rounding and exactly 0 once e^{-2|u|} underflows.
fn half_sech2(u: f64) -> f64 {
    let e = (-2.0 * u.abs()).exp();
    2.0 * e / ((1.0 + e) * (1.0 + e))
}

/// Smoothed step `(tanh(alpha (v - beta)) + 1) / 2`, saturating to
/// `[T_MIN, T_MAX]`.
pub fn smooth_step(v: f64, alpha: f64, beta: f64) -> f64 {
    half_tanh_plus_half(alpha * (v - beta))
}

/// Value and partial derivatives of [`smooth_step`] with respect to its
/// parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothStepDerivs {
    pub value: f64,
    pub dt_dalpha: f64,
    pub dt_dbeta: f64,
    pub d2t_dalpha2: f64,
    pub d2t_dbeta2: f64,
    pub d2t_dalphadbeta: f64,
}

pub fn smooth_step_derivs(v: f64, alpha: f64, beta: f64) -> SmoothStepDerivs {
    let gap = v - beta;
    let u = alpha * gap;
    let s = half_sech2(u);
    // d^2 t / du^2 = -2 s tanh(u)
    let curv = -2.0 * s * u.tanh();
    SmoothStepDerivs {
        value: half_tanh_plus_half(u),
        dt_dalpha: gap * s,
        dt_dbeta: -alpha * s,
        d2t_dalpha2: gap * gap * curv,
        d2t_dbeta2: alpha * alpha * curv,
        d2t_dalphadbeta: -s - u * curv,
    }
}

/// One synthetic sample: component `j` is `t(z_j, alpha_j, beta_j)`.
pub fn generate_row(z_row: &[f64], params: &GeneratorParams) -> Result<Vec<f64>> {
    if z_row.len() != params.q() {
        return Err(Error::dim("generate_row z_row", params.q(), z_row.len()));
    }
    Ok(z_row
        .iter()
        .zip(params.alpha.iter().zip(&params.beta))
        .map(|(&v, (&a, &b))| smooth_step(v, a, b))
        .collect())
}

/// Stacked generated data, row `k` equal to `generate_row(z_k, params)`.
pub fn generate_matrix(z: &NoiseMatrix, params: &GeneratorParams) -> Result<DMatrix<f64>> {
    check_cols(z, params)?;
    Ok(DMatrix::from_fn(z.rows(), z.cols(), |k, j| {
        smooth_step(z.z[(k, j)], params.alpha[j], params.beta[j])
    }))
}

/// Generated data together with every per-entry parameter partial.
#[derive(Debug, Clone)]
pub struct GeneratorJet {
    pub value: DMatrix<f64>,
    pub d_alpha: DMatrix<f64>,
    pub d_beta: DMatrix<f64>,
    pub d2_alpha2: DMatrix<f64>,
    pub d2_beta2: DMatrix<f64>,
    pub d2_alpha_beta: DMatrix<f64>,
}

pub fn generate_jet(z: &NoiseMatrix, params: &GeneratorParams) -> Result<GeneratorJet> {
    check_cols(z, params)?;
    let (m, q) = (z.rows(), z.cols());
    let mut jet = GeneratorJet {
        value: DMatrix::zeros(m, q),
        d_alpha: DMatrix::zeros(m, q),
        d_beta: DMatrix::zeros(m, q),
        d2_alpha2: DMatrix::zeros(m, q),
        d2_beta2: DMatrix::zeros(m, q),
        d2_alpha_beta: DMatrix::zeros(m, q),
    };
    for j in 0..q {
        for k in 0..m {
            let d = smooth_step_derivs(z.z[(k, j)], params.alpha[j], params.beta[j]);
            jet.value[(k, j)] = d.value;
            jet.d_alpha[(k, j)] = d.dt_dalpha;
            jet.d_beta[(k, j)] = d.dt_dbeta;
            jet.d2_alpha2[(k, j)] = d.d2t_dalpha2;
            jet.d2_beta2[(k, j)] = d.d2t_dbeta2;
            jet.d2_alpha_beta[(k, j)] = d.d2t_dalphadbeta;
        }
    }
    Ok(jet)
}

fn check_cols(z: &NoiseMatrix, params: &GeneratorParams) -> Result<()> {
    if z.cols() != params.q() {
        return Err(Error::dim("noise columns", params.q(), z.cols()));
    }
    Ok(())
}
