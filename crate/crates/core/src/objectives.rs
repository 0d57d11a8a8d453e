//! Logistic losses of the learner (upper level) and the adversary (lower
//! level), with every first and second derivative block the stationarity
//! system needs.
//!
//! Both objectives are plain sums of per-sample losses, each of which carries
//! its own `mu * ||w||^2` term:
//!
//! ```text
//! F(w, theta) = sum_i L(w, X_i, y_i) + sum_k L(w, G(z_k, theta), gamma_k)
//! f(w, theta) = sum_k L(w, G(z_k, theta), 1 - gamma_k)
//! ```
//!
//! Derivatives with respect to `theta` use the stacked layout
//! `(alpha_1..alpha_q, beta_1..beta_q)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::generator::{generate_jet, generate_matrix, GeneratorJet, GeneratorParams, NoiseMatrix};

/// Binary bag-of-words data: `x` is `n x q` with 0/1 entries.
#[derive(Debug, Clone, PartialEq)]
pub struct BowDataset {
    pub x: DMatrix<f64>,
    pub y: Vec<u8>,
    pub timestamps: Option<Vec<i64>>,
}

impl BowDataset {
    pub fn new(x: DMatrix<f64>, y: Vec<u8>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::dim("BowDataset labels", x.nrows(), y.len()));
        }
        if x.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidArgument("feature entries must be 0 or 1".into()));
        }
        if y.iter().any(|&l| l > 1) {
            return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
        }
        Ok(Self {
            x,
            y,
            timestamps: None,
        })
    }

    pub fn from_rows(rows: &[Vec<u8>], y: Vec<u8>) -> Result<Self> {
        let q = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != q) {
            return Err(Error::dim("BowDataset row", q, bad.len()));
        }
        let x = DMatrix::from_fn(rows.len(), q, |i, j| f64::from(rows[i][j]));
        Self::new(x, y)
    }

    pub fn empty(q: usize) -> Self {
        Self {
            x: DMatrix::zeros(0, q),
            y: Vec::new(),
            timestamps: None,
        }
    }

    pub fn with_timestamps(mut self, ts: Vec<i64>) -> Result<Self> {
        if ts.len() != self.n() {
            return Err(Error::dim("BowDataset timestamps", self.n(), ts.len()));
        }
        self.timestamps = Some(ts);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn q(&self) -> usize {
        self.x.ncols()
    }

    /// Rows whose label equals `class`, in original order.
    pub fn rows_with_label(&self, class: u8) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.y[i] == class).collect()
    }

    pub fn labels_f64(&self) -> Vec<f64> {
        self.y.iter().map(|&l| f64::from(l)).collect()
    }
}

/// Learner weights `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights(pub DVector<f64>);

impl ModelWeights {
    pub fn zeros(q: usize) -> Self {
        Self(DVector::zeros(q))
    }

    pub fn from_vec(w: Vec<f64>) -> Result<Self> {
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("weights must be finite".into()));
        }
        Ok(Self(DVector::from_vec(w)))
    }

    pub fn q(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }
}

/// True class `gamma_k` of each generated row.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryLabels(Vec<u8>);

impl AdversaryLabels {
    pub fn new(gamma: Vec<u8>) -> Result<Self> {
        if gamma.iter().any(|&g| g > 1) {
            return Err(Error::InvalidArgument("adversary labels must be 0 or 1".into()));
        }
        Ok(Self(gamma))
    }

    /// `m` rows all carrying `class`.
    pub fn uniform(m: usize, class: u8) -> Result<Self> {
        Self::new(vec![class; m])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    fn as_targets(&self) -> Vec<f64> {
        self.0.iter().map(|&g| f64::from(g)).collect()
    }

    fn flipped_targets(&self) -> Vec<f64> {
        self.0.iter().map(|&g| 1.0 - f64::from(g)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizationConfig {
    pub mu: f64,
}

impl RegularizationConfig {
    pub fn new(mu: f64) -> Result<Self> {
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(Error::InvalidArgument(format!("mu must be >= 0, got {mu}")));
        }
        Ok(Self { mu })
    }
}

/// Overflow-safe logistic function.
pub fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^a)` without overflow.
fn softplus(a: f64) -> f64 {
    a.max(0.0) + (-a.abs()).exp().ln_1p()
}

// -y ln s(a) - (1-y) ln(1 - s(a)) == softplus(a) - y a
fn cross_entropy(a: f64, label: f64) -> f64 {
    softplus(a) - label * a
}

/// Probability that `x` belongs to class 1 under weights `w`.
pub fn predict(w: &ModelWeights, x: &[f64]) -> Result<f64> {
    if x.len() != w.q() {
        return Err(Error::dim("predict x", w.q(), x.len()));
    }
    let a: f64 = w.0.iter().zip(x).map(|(wi, xi)| wi * xi).sum();
    Ok(sigmoid(a))
}

/// Regularized logistic loss of a single sample.
pub fn logistic_loss(w: &ModelWeights, x: &[f64], label: u8, mu: f64) -> Result<f64> {
    if x.len() != w.q() {
        return Err(Error::dim("logistic_loss x", w.q(), x.len()));
    }
    if label > 1 {
        return Err(Error::InvalidArgument("label must be 0 or 1".into()));
    }
    let a: f64 = w.0.iter().zip(x).map(|(wi, xi)| wi * xi).sum();
    Ok(cross_entropy(a, f64::from(label)) + mu * w.0.norm_squared())
}

/// Gradient blocks of an objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub g_w: DVector<f64>,
    pub g_theta: DVector<f64>,
}

/// Second-derivative blocks of an objective. `h_wtheta` is `q x 2q` with
/// entry `(l, p) = d^2 / (dw_l dtheta_p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hessians {
    pub h_ww: DMatrix<f64>,
    pub h_wtheta: DMatrix<f64>,
    pub h_thetatheta: DMatrix<f64>,
}

/// Upper- and lower-level derivatives from a single pass over the data.
#[derive(Debug, Clone)]
pub struct BilevelDerivatives {
    pub upper: Gradients,
    pub lower: Gradients,
    pub upper_hess: Option<Hessians>,
    pub lower_hess: Option<Hessians>,
}

/// Static data, fixed noise and adversary labels of one bilevel instance.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub data: &'a BowDataset,
    pub noise: &'a NoiseMatrix,
    pub gamma: &'a AdversaryLabels,
    pub mu: f64,
}

impl<'a> Problem<'a> {
    pub fn new(
        data: &'a BowDataset,
        noise: &'a NoiseMatrix,
        gamma: &'a AdversaryLabels,
        mu: f64,
    ) -> Result<Self> {
        RegularizationConfig::new(mu)?;
        if noise.cols() != data.q() {
            return Err(Error::dim("noise columns", data.q(), noise.cols()));
        }
        if gamma.len() != noise.rows() {
            return Err(Error::dim("adversary labels", noise.rows(), gamma.len()));
        }
        Ok(Self {
            data,
            noise,
            gamma,
            mu,
        })
    }

    pub fn q(&self) -> usize {
        self.data.q()
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }

    pub fn m(&self) -> usize {
        self.noise.rows()
    }

    fn check(&self, w: &ModelWeights, theta: &GeneratorParams) -> Result<()> {
        if w.q() != self.q() {
            return Err(Error::dim("weights", self.q(), w.q()));
        }
        if theta.q() != self.q() {
            return Err(Error::dim("generator parameters", self.q(), theta.q()));
        }
        Ok(())
    }

    fn reg(&self, w: &ModelWeights, samples: usize) -> f64 {
        samples as f64 * self.mu * w.0.norm_squared()
    }

    /// Learner objective `F(w, theta)`.
    pub fn upper_objective(&self, w: &ModelWeights, theta: &GeneratorParams) -> Result<f64> {
        self.check(w, theta)?;
        let g = generate_matrix(self.noise, theta)?;
        let static_loss = batch_loss(&self.data.x, &self.data.labels_f64(), &w.0);
        let gen_loss = batch_loss(&g, &self.gamma.as_targets(), &w.0);
        Ok(static_loss + gen_loss + self.reg(w, self.n() + self.m()))
    }

    /// Adversary objective `f(w, theta)`: generated-data loss with flipped
    /// labels.
    pub fn lower_objective(&self, w: &ModelWeights, theta: &GeneratorParams) -> Result<f64> {
        self.check(w, theta)?;
        let g = generate_matrix(self.noise, theta)?;
        Ok(batch_loss(&g, &self.gamma.flipped_targets(), &w.0) + self.reg(w, self.m()))
    }

    pub fn upper_gradients(&self, w: &ModelWeights, theta: &GeneratorParams) -> Result<Gradients> {
        Ok(self.derivatives(w, theta, false)?.upper)
    }

    pub fn lower_gradients(&self, w: &ModelWeights, theta: &GeneratorParams) -> Result<Gradients> {
        Ok(self.derivatives(w, theta, false)?.lower)
    }

    pub fn upper_hessians(&self, w: &ModelWeights, theta: &GeneratorParams) -> Result<Hessians> {
        Ok(self.derivatives(w, theta, true)?.upper_hess.expect("requested"))
    }

    pub fn lower_hessians(&self, w: &ModelWeights, theta: &GeneratorParams) -> Result<Hessians> {
        Ok(self.derivatives(w, theta, true)?.lower_hess.expect("requested"))
    }

    /// Gradients (and optionally Hessians) of both objectives, sharing the
    /// generator evaluation and the static-data pass.
    pub fn derivatives(
        &self,
        w: &ModelWeights,
        theta: &GeneratorParams,
        with_hessians: bool,
    ) -> Result<BilevelDerivatives> {
        self.check(w, theta)?;
        let q = self.q();
        let (n, m) = (self.n(), self.m());
        let w = &w.0;

        let stat = BatchTerms::new(&self.data.x, &self.data.labels_f64(), w);
        let jet = generate_jet(self.noise, theta)?;
        let margins = &jet.value * w;
        let upper_gen = GeneratedTerms::new(&jet, &margins, &self.gamma.as_targets(), w);
        let lower_gen = GeneratedTerms::new(&jet, &margins, &self.gamma.flipped_targets(), w);

        let upper = Gradients {
            g_w: self.data.x.tr_mul(&stat.residual)
                + jet.value.tr_mul(&upper_gen.residual)
                + w * (2.0 * self.mu * (n + m) as f64),
            g_theta: upper_gen.g_theta(),
        };
        let lower = Gradients {
            g_w: jet.value.tr_mul(&lower_gen.residual) + w * (2.0 * self.mu * m as f64),
            g_theta: lower_gen.g_theta(),
        };

        let (upper_hess, lower_hess) = if with_hessians {
            // sigma(1 - sigma) weights are label independent.
            let gen_ww = weighted_gram(&jet.value, &upper_gen.curvature);
            let mut upper_ww = weighted_gram(&self.data.x, &stat.curvature) + &gen_ww;
            let mut lower_ww = gen_ww;
            for i in 0..q {
                upper_ww[(i, i)] += 2.0 * self.mu * (n + m) as f64;
                lower_ww[(i, i)] += 2.0 * self.mu * m as f64;
            }
            let cross = weighted_cross(&jet.value, &upper_gen.curvature, &upper_gen.v);
            let tt = weighted_gram(&upper_gen.v, &upper_gen.curvature);
            (
                Some(Hessians {
                    h_ww: upper_ww,
                    h_wtheta: upper_gen.h_wtheta(&cross, &jet),
                    h_thetatheta: upper_gen.h_thetatheta(&tt, &jet, w),
                }),
                Some(Hessians {
                    h_ww: lower_ww,
                    h_wtheta: lower_gen.h_wtheta(&cross, &jet),
                    h_thetatheta: lower_gen.h_thetatheta(&tt, &jet, w),
                }),
            )
        } else {
            (None, None)
        };

        Ok(BilevelDerivatives {
            upper,
            lower,
            upper_hess,
            lower_hess,
        })
    }
}

fn batch_loss(x: &DMatrix<f64>, labels: &[f64], w: &DVector<f64>) -> f64 {
    let a = x * w;
    a.iter().zip(labels).map(|(&a, &y)| cross_entropy(a, y)).sum()
}

/// Per-row `sigma - y` and `sigma (1 - sigma)`.
struct BatchTerms {
    residual: DVector<f64>,
    curvature: DVector<f64>,
}

impl BatchTerms {
    fn new(x: &DMatrix<f64>, labels: &[f64], w: &DVector<f64>) -> Self {
        Self::from_margins(&(x * w), labels)
    }

    fn from_margins(a: &DVector<f64>, labels: &[f64]) -> Self {
        let sig = a.map(sigmoid);
        Self {
            residual: DVector::from_iterator(
                a.len(),
                sig.iter().zip(labels).map(|(s, y)| s - y),
            ),
            curvature: sig.map(|s| s * (1.0 - s)),
        }
    }
}

struct GeneratedTerms {
    residual: DVector<f64>,
    curvature: DVector<f64>,
    /// `m x 2q`: `v[k, p] = w_i dt/dtheta_p` for the feature `i` of `p`.
    v: DMatrix<f64>,
}

impl GeneratedTerms {
    fn new(jet: &GeneratorJet, margins: &DVector<f64>, targets: &[f64], w: &DVector<f64>) -> Self {
        let BatchTerms {
            residual,
            curvature,
        } = BatchTerms::from_margins(margins, targets);
        let (m, q) = jet.value.shape();
        let v = DMatrix::from_fn(m, 2 * q, |k, p| {
            if p < q {
                w[p] * jet.d_alpha[(k, p)]
            } else {
                w[p - q] * jet.d_beta[(k, p - q)]
            }
        });
        Self {
            residual,
            curvature,
            v,
        }
    }

    fn g_theta(&self) -> DVector<f64> {
        self.v.tr_mul(&self.residual)
    }

    fn h_wtheta(&self, cross: &DMatrix<f64>, jet: &GeneratorJet) -> DMatrix<f64> {
        let q = jet.value.ncols();
        let mut h = cross.clone();
        let ra = jet.d_alpha.tr_mul(&self.residual);
        let rb = jet.d_beta.tr_mul(&self.residual);
        for i in 0..q {
            h[(i, i)] += ra[i];
            h[(i, q + i)] += rb[i];
        }
        h
    }

    fn h_thetatheta(&self, tt: &DMatrix<f64>, jet: &GeneratorJet, w: &DVector<f64>) -> DMatrix<f64> {
        let q = jet.value.ncols();
        let mut h = tt.clone();
        let raa = jet.d2_alpha2.tr_mul(&self.residual);
        let rbb = jet.d2_beta2.tr_mul(&self.residual);
        let rab = jet.d2_alpha_beta.tr_mul(&self.residual);
        for i in 0..q {
            h[(i, i)] += w[i] * raa[i];
            h[(q + i, q + i)] += w[i] * rbb[i];
            h[(i, q + i)] += w[i] * rab[i];
            h[(q + i, i)] += w[i] * rab[i];
        }
        h
    }
}

/// `A^T diag(c) A`, symmetrised exactly.
fn weighted_gram(a: &DMatrix<f64>, c: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = a.clone();
    for (k, mut row) in scaled.row_iter_mut().enumerate() {
        row *= c[k];
    }
    let g = a.tr_mul(&scaled);
    (&g + g.transpose()) * 0.5
}

/// `A^T diag(c) B`.
fn weighted_cross(a: &DMatrix<f64>, c: &DVector<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut scaled = b.clone();
    for (k, mut row) in scaled.row_iter_mut().enumerate() {
        row *= c[k];
    }
    a.tr_mul(&scaled)
}
