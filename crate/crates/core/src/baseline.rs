//! Plain regularised logistic regression on the static data, the
//! no-adversary control.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linesearch::backtrack;
use crate::objectives::{sigmoid, BowDataset, ModelWeights};

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub mu: f64,
    pub max_iter: usize,
    /// Stop once the Euclidean gradient norm falls to this value.
    pub grad_tol: f64,
    /// Sufficient-decrease constant of the Armijo test.
    pub armijo_c: f64,
    pub omega_min: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            mu: 0.01,
            max_iter: 20_000,
            grad_tol: 1e-6,
            armijo_c: 1e-4,
            omega_min: 1e-20,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::Config(format!("baseline mu must be >= 0, got {}", self.mu)));
        }
        if !(self.grad_tol > 0.0) || !(self.armijo_c > 0.0 && self.armijo_c < 1.0) || !(self.omega_min > 0.0) {
            return Err(Error::Config(
                "grad_tol and omega_min must be positive, armijo_c in (0,1)".into(),
            ));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("baseline max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BaselineFit {
    pub weights: ModelWeights,
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    /// False when `max_iter` ran out or the line search failed; `weights` is
    /// then the best iterate seen.
    pub converged: bool,
}

struct Logistic<'a> {
    x: &'a DMatrix<f64>,
    y: Vec<f64>,
    reg: f64,
}

impl Logistic<'_> {
    fn value(&self, w: &DVector<f64>) -> f64 {
        let a = self.x * w;
        let loss: f64 = a
            .iter()
            .zip(&self.y)
            .map(|(&a, &y)| a.max(0.0) + (-a.abs()).exp().ln_1p() - y * a)
            .sum();
        loss + self.reg * w.norm_squared()
    }

    fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        let a = self.x * w;
        let r = DVector::from_iterator(a.len(), a.iter().zip(&self.y).map(|(&a, &y)| sigmoid(a) - y));
        self.x.tr_mul(&r) + w * (2.0 * self.reg)
    }
}

/// Fit `w` minimising `sum_i L(w, x_i, y_i)` with `mu ||w||^2` inside every
/// sample's loss.
///
/// Gradient descent with a Barzilai-Borwein trial step, safeguarded by
/// Armijo backtracking so the objective never increases.
pub fn train_baseline(data: &BowDataset, cfg: &BaselineConfig) -> Result<BaselineFit> {
    cfg.validate()?;
    if data.n() == 0 {
        return Err(Error::EmptyTrainingSet);
    }
    let f = Logistic {
        x: &data.x,
        y: data.labels_f64(),
        reg: cfg.mu * data.n() as f64,
    };
    let q = data.q();
    let mut w = DVector::zeros(q);
    let mut fw = f.value(&w);
    let mut g = f.gradient(&w);
    // Lipschitz bound of the loss part gives a safe first step.
    let lipschitz = 0.25 * data.x.norm_squared() + 2.0 * f.reg;
    let mut step = if lipschitz > 0.0 { 1.0 / lipschitz } else { 1.0 };

    let mut iter = 0;
    let mut converged = false;
    while iter < cfg.max_iter {
        if g.norm() <= cfg.grad_tol {
            converged = true;
            break;
        }
        let slope = -cfg.armijo_c * g.norm_squared();
        let ls = backtrack(fw, slope, step, cfg.omega_min * step, |omega| Ok(f.value(&(&w - &g * omega))))?;
        if !ls.accepted {
            break;
        }
        let w_next = &w - &g * ls.omega;
        let g_next = f.gradient(&w_next);
        let s = &w_next - &w;
        let yk = &g_next - &g;
        let sy = s.dot(&yk);
        step = if sy > 0.0 { s.norm_squared() / sy } else { ls.omega * 2.0 };
        w = w_next;
        g = g_next;
        fw = ls.value.expect("accepted search carries a value");
        iter += 1;
    }
    if !converged && g.norm() <= cfg.grad_tol {
        converged = true;
    }
    Ok(BaselineFit {
        grad_norm: g.norm(),
        weights: ModelWeights(w),
        objective: fw,
        iterations: iter,
        converged,
    })
}

/// Class predictions: 1 iff `sigma(w^T x) >= threshold`.
pub fn classify(w: &ModelWeights, x: &DMatrix<f64>, threshold: f64) -> Result<Vec<u8>> {
    if x.ncols() != w.q() {
        return Err(Error::dim("classify features", w.q(), x.ncols()));
    }
    let a = x * &w.0;
    Ok(a.iter().map(|&a| u8::from(sigmoid(a) >= threshold)).collect())
}

/// One weight per line, round-trip exact.
pub fn weights_to_text(w: &ModelWeights) -> String {
    let mut out = String::new();
    for v in w.as_slice() {
        writeln!(out, "{v:e}").expect("writing to a String");
    }
    out
}

pub fn weights_from_text(text: &str) -> Result<ModelWeights> {
    let vals = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<f64>().map_err(|e| Error::Parse {
                location: format!("weights line {}", i + 1),
                message: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ModelWeights::from_vec(vals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn single() -> BowDataset {
        BowDataset::from_rows(&[vec![1]], vec![1]).unwrap()
    }

    fn bisect(mut lo: f64, mut hi: f64, g: impl Fn(f64) -> f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn single_sample_first_order_condition() {
        let cfg = BaselineConfig {
            mu: 0.1,
            grad_tol: 1e-10,
            ..Default::default()
        };
        let fit = train_baseline(&single(), &cfg).unwrap();
        assert!(fit.converged);
        let w = fit.weights.as_slice()[0];
        let foc = |w: f64| sigmoid(w) - 1.0 + 0.2 * w;
        assert!(foc(w).abs() <= 1e-6);
        let oracle = bisect(0.0, 10.0, foc);
        assert_relative_eq!(w, oracle, max_relative = 1e-8);
        assert!((w - 1.1775).abs() < 1e-4, "w = {w}");
    }

    #[test]
    fn heavy_regularisation_shrinks_to_zero() {
        let data = BowDataset::from_rows(&[vec![1, 0, 1], vec![0, 1, 1], vec![1, 1, 0]], vec![1, 0, 1]).unwrap();
        let cfg = BaselineConfig {
            mu: 1e6,
            ..Default::default()
        };
        let fit = train_baseline(&data, &cfg).unwrap();
        assert!(fit.converged);
        assert!(fit.weights.0.norm() <= 1e-3);
    }

    #[test]
    fn contradictory_duplicates_give_zero_weights() {
        let data = BowDataset::from_rows(&[vec![1, 0, 1], vec![1, 0, 1]], vec![1, 0]).unwrap();
        let fit = train_baseline(&data, &BaselineConfig::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.weights.0.amax() <= 1e-9);
    }

    #[test]
    fn objective_never_increases_and_gradient_is_small() {
        let rows: Vec<Vec<u8>> = (0..40u32).map(|i| (0..6).map(|j| ((i * 7 + j * 3) % 5 < 2) as u8).collect()).collect();
        let y: Vec<u8> = (0..40u32).map(|i| (i % 3 == 0) as u8).collect();
        let data = BowDataset::from_rows(&rows, y).unwrap();
        let cfg = BaselineConfig::default();
        let fit = train_baseline(&data, &cfg).unwrap();
        assert!(fit.converged);
        assert!(fit.grad_norm <= cfg.grad_tol);
        let f = Logistic {
            x: &data.x,
            y: data.labels_f64(),
            reg: cfg.mu * 40.0,
        };
        assert!(fit.objective <= f.value(&DVector::zeros(6)));
        assert_relative_eq!(fit.objective, f.value(&fit.weights.0), max_relative = 1e-12);
    }

    #[test]
    fn classify_threshold_convention() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(classify(&ModelWeights::zeros(2), &x, 0.5).unwrap(), vec![1, 1]);
        let w = ModelWeights::from_vec(vec![50.0, -50.0]).unwrap();
        assert_eq!(classify(&w, &x, 0.5).unwrap(), vec![1, 0]);
        assert_eq!(classify(&w, &x, 1.1).unwrap(), vec![0, 0]);
        assert!(classify(&ModelWeights::zeros(3), &x, 0.5).is_err());
    }

    #[test]
    fn weights_round_trip() {
        let w = ModelWeights::from_vec(vec![0.1, -2.5e-17, 3.0]).unwrap();
        let text = weights_to_text(&w);
        assert_eq!(text.lines().count(), 3);
        assert_eq!(weights_from_text(&text).unwrap(), w);
        assert!(weights_from_text("1.0\nabc\n").is_err());
    }

    #[test]
    fn empty_data_rejected() {
        assert!(matches!(
            train_baseline(&BowDataset::empty(3), &BaselineConfig::default()),
            Err(Error::EmptyTrainingSet)
        ));
    }
}
