//! Necessary-optimality system of the pessimistic bilevel program.
//!
//! Unknowns are packed as `x = (w (q) | alpha (q) | beta (q) | zeta (1))` and
//! the residual as
//!
//! ```text
//! Phi = [ grad_w F                       (q)
//!       | grad_theta F - zeta^2 grad_theta f (2q)
//!       | grad_theta f                   (2q) ]
//! ```
//!
//! The multiplier of the value-function constraint is `lambda = zeta^2`, which
//! keeps it nonnegative without a bound constraint.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::generator::GeneratorParams;
use crate::objectives::{ModelWeights, Problem};

/// A point `(w, theta, zeta)` of the stationarity system.
#[derive(Debug, Clone, PartialEq)]
pub struct BilevelPoint {
    pub w: ModelWeights,
    pub theta: GeneratorParams,
    pub zeta: f64,
}

impl BilevelPoint {
    pub fn q(&self) -> usize {
        self.w.q()
    }

    pub fn pack(&self) -> DVector<f64> {
        let q = self.q();
        let mut x = DVector::zeros(3 * q + 1);
        x.rows_mut(0, q).copy_from(&self.w.0);
        x.rows_mut(q, q).copy_from_slice(&self.theta.alpha);
        x.rows_mut(2 * q, q).copy_from_slice(&self.theta.beta);
        x[3 * q] = self.zeta;
        x
    }

    pub fn unpack(x: &DVector<f64>) -> Result<Self> {
        if x.len() < 4 || !(x.len() - 1).is_multiple_of(3) {
            return Err(Error::InvalidArgument(format!(
                "packed point must have length 3q+1, got {}",
                x.len()
            )));
        }
        let q = (x.len() - 1) / 3;
        Ok(Self {
            w: ModelWeights(x.rows(0, q).into_owned()),
            theta: GeneratorParams::new(
                x.rows(q, q).iter().copied().collect(),
                x.rows(2 * q, q).iter().copied().collect(),
            )?,
            zeta: x[3 * q],
        })
    }
}

/// Residual, Jacobian and the implied multiplier at one point.
#[derive(Debug, Clone)]
pub struct StationaritySystem {
    pub residual: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub lambda_equiv: f64,
}

/// Anything that can evaluate a residual and its Jacobian on packed points.
/// The solver is written against this so that toy systems can drive it.
pub trait ResidualSystem {
    fn num_vars(&self) -> usize;
    fn num_residuals(&self) -> usize;
    fn residual(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>>;

    /// Residual and Jacobian together; override when they share work.
    fn residual_and_jacobian(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        Ok((self.residual(x)?, self.jacobian(x)?))
    }
}

/// The bilevel stationarity map over a fixed problem instance.
#[derive(Debug, Clone, Copy)]
pub struct Stationarity<'a> {
    pub problem: Problem<'a>,
}

impl<'a> Stationarity<'a> {
    pub fn new(problem: Problem<'a>) -> Self {
        Self { problem }
    }

    fn check(&self, point: &BilevelPoint) -> Result<()> {
        if point.q() != self.problem.q() {
            return Err(Error::dim("stationarity point", self.problem.q(), point.q()));
        }
        Ok(())
    }

    pub fn assemble_residual(&self, point: &BilevelPoint) -> Result<DVector<f64>> {
        self.check(point)?;
        let d = self.problem.derivatives(&point.w, &point.theta, false)?;
        let q = self.problem.q();
        let z2 = point.zeta * point.zeta;
        let mut r = DVector::zeros(5 * q);
        r.rows_mut(0, q).copy_from(&d.upper.g_w);
        r.rows_mut(q, 2 * q)
            .copy_from(&(&d.upper.g_theta - &d.lower.g_theta * z2));
        r.rows_mut(3 * q, 2 * q).copy_from(&d.lower.g_theta);
        Ok(r)
    }

    pub fn assemble_jacobian(&self, point: &BilevelPoint) -> Result<DMatrix<f64>> {
        Ok(self.assemble(point)?.jacobian)
    }

    /// Residual and Jacobian from one derivative pass.
    pub fn assemble(&self, point: &BilevelPoint) -> Result<StationaritySystem> {
        self.check(point)?;
        let d = self.problem.derivatives(&point.w, &point.theta, true)?;
        let q = self.problem.q();
        let zeta = point.zeta;
        let z2 = zeta * zeta;
        let uh = d.upper_hess.expect("requested");
        let lh = d.lower_hess.expect("requested");

        let mut r = DVector::zeros(5 * q);
        r.rows_mut(0, q).copy_from(&d.upper.g_w);
        r.rows_mut(q, 2 * q)
            .copy_from(&(&d.upper.g_theta - &d.lower.g_theta * z2));
        r.rows_mut(3 * q, 2 * q).copy_from(&d.lower.g_theta);

        // rows: residual blocks, columns: (w | theta | zeta)
        let mut j = DMatrix::zeros(5 * q, 3 * q + 1);
        j.view_mut((0, 0), (q, q)).copy_from(&uh.h_ww);
        j.view_mut((0, q), (q, 2 * q)).copy_from(&uh.h_wtheta);
        j.view_mut((q, 0), (2 * q, q))
            .copy_from(&(uh.h_wtheta.transpose() - lh.h_wtheta.transpose() * z2));
        j.view_mut((q, q), (2 * q, 2 * q))
            .copy_from(&(&uh.h_thetatheta - &lh.h_thetatheta * z2));
        j.view_mut((q, 3 * q), (2 * q, 1))
            .copy_from(&(&d.lower.g_theta * (-2.0 * zeta)));
        j.view_mut((3 * q, 0), (2 * q, q))
            .copy_from(&lh.h_wtheta.transpose());
        j.view_mut((3 * q, q), (2 * q, 2 * q))
            .copy_from(&lh.h_thetatheta);

        Ok(StationaritySystem {
            residual: r,
            jacobian: j,
            lambda_equiv: z2,
        })
    }

    /// Central-difference Jacobian of [`Self::assemble_residual`].
    pub fn finite_difference_jacobian(&self, point: &BilevelPoint, step: f64) -> Result<DMatrix<f64>> {
        if !(step > 0.0) {
            return Err(Error::InvalidArgument("finite-difference step must be > 0".into()));
        }
        self.check(point)?;
        finite_difference_jacobian(self, &point.pack(), step)
    }
}

impl ResidualSystem for Stationarity<'_> {
    fn num_vars(&self) -> usize {
        3 * self.problem.q() + 1
    }

    fn num_residuals(&self) -> usize {
        5 * self.problem.q()
    }

    fn residual(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.assemble_residual(&BilevelPoint::unpack(x)?)
    }

    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.assemble_jacobian(&BilevelPoint::unpack(x)?)
    }

    fn residual_and_jacobian(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let s = self.assemble(&BilevelPoint::unpack(x)?)?;
        Ok((s.residual, s.jacobian))
    }
}

/// Central differences of any residual system, one column per variable.
pub fn finite_difference_jacobian<S: ResidualSystem + ?Sized>(
    system: &S,
    x: &DVector<f64>,
    step: f64,
) -> Result<DMatrix<f64>> {
    let mut j = DMatrix::zeros(system.num_residuals(), x.len());
    let mut xp = x.clone();
    for c in 0..x.len() {
        xp[c] = x[c] + step;
        let rp = system.residual(&xp)?;
        xp[c] = x[c] - step;
        let rm = system.residual(&xp)?;
        xp[c] = x[c];
        j.set_column(c, &((rp - rm) / (2.0 * step)));
    }
    Ok(j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::NoiseMatrix;
    use crate::objectives::{AdversaryLabels, BowDataset};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Owned {
        data: BowDataset,
        noise: NoiseMatrix,
        gamma: AdversaryLabels,
        mu: f64,
    }

    fn instance(rng: &mut ChaCha8Rng, q: usize, n: usize, m: usize) -> Owned {
        let rows: Vec<Vec<u8>> = (0..n).map(|_| (0..q).map(|_| rng.gen_range(0..2)).collect()).collect();
        let y = (0..n).map(|_| rng.gen_range(0..2)).collect();
        Owned {
            data: BowDataset::from_rows(&rows, y).unwrap(),
            noise: NoiseMatrix::sample(rng, m, q),
            gamma: AdversaryLabels::uniform(m, 1).unwrap(),
            mu: rng.gen_range(0.001..0.2),
        }
    }

    fn point(rng: &mut ChaCha8Rng, q: usize) -> BilevelPoint {
        BilevelPoint {
            w: ModelWeights::from_vec((0..q).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap(),
            theta: GeneratorParams::new(
                (0..q).map(|_| rng.gen_range(-8.0..8.0)).collect(),
                (0..q).map(|_| rng.gen_range(0.0..1.0)).collect(),
            )
            .unwrap(),
            zeta: rng.gen_range(-2.0..2.0),
        }
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn pack_unpack() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = point(&mut rng, 3);
        let x = p.pack();
        assert_eq!(x.len(), 10);
        assert_eq!(BilevelPoint::unpack(&x).unwrap(), p);
        assert!(BilevelPoint::unpack(&DVector::zeros(5)).is_err());
    }

    #[test]
    fn residual_is_concatenated_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let o = instance(&mut rng, 3, 8, 4);
        let prob = Problem::new(&o.data, &o.noise, &o.gamma, o.mu).unwrap();
        let sys = Stationarity::new(prob);
        let pt = point(&mut rng, 3);
        let r = sys.assemble_residual(&pt).unwrap();
        let up = prob.upper_gradients(&pt.w, &pt.theta).unwrap();
        let lo = prob.lower_gradients(&pt.w, &pt.theta).unwrap();
        let z2 = pt.zeta * pt.zeta;
        let mut oracle: Vec<f64> = up.g_w.iter().copied().collect();
        oracle.extend(up.g_theta.iter().zip(lo.g_theta.iter()).map(|(a, b)| a - z2 * b));
        oracle.extend(lo.g_theta.iter().copied());
        assert_eq!(r.as_slice(), oracle.as_slice());

        let full = sys.assemble(&pt).unwrap();
        assert_eq!(full.residual, r);
        assert_eq!(full.lambda_equiv, z2);
    }

    #[test]
    fn zeta_zero_and_zero_weight_reductions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let o = instance(&mut rng, 2, 6, 3);
        let prob = Problem::new(&o.data, &o.noise, &o.gamma, o.mu).unwrap();
        let sys = Stationarity::new(prob);
        let mut pt = point(&mut rng, 2);
        pt.zeta = 0.0;
        let r = sys.assemble_residual(&pt).unwrap();
        let up = prob.upper_gradients(&pt.w, &pt.theta).unwrap();
        assert_eq!(r.rows(2, 4).into_owned(), up.g_theta);
        let j = sys.assemble_jacobian(&pt).unwrap();
        assert!(j.column(6).iter().all(|&v| v == 0.0));

        let prob0 = Problem::new(&o.data, &o.noise, &o.gamma, 0.0).unwrap();
        let mut pt0 = point(&mut rng, 2);
        pt0.w = ModelWeights::zeros(2);
        let r0 = Stationarity::new(prob0).assemble_residual(&pt0).unwrap();
        assert!(r0.rows(2, 8).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let q = rng.gen_range(1..=5);
            let (n, m) = (rng.gen_range(1..=20), rng.gen_range(1..=5));
            let o = instance(&mut rng, q, n, m);
            let prob = Problem::new(&o.data, &o.noise, &o.gamma, o.mu).unwrap();
            let sys = Stationarity::new(prob);
            let pt = point(&mut rng, q);
            let j = sys.assemble_jacobian(&pt).unwrap();
            let fd = sys.finite_difference_jacobian(&pt, 1e-6).unwrap();
            assert_eq!(j.shape(), (5 * q, 3 * q + 1));
            for (a, b) in j.iter().zip(fd.iter()) {
                assert!(rel(*a, *b) <= 1e-5, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn single_feature_jacobian_from_blocks() {
        let data = BowDataset::from_rows(&[vec![1]], vec![0]).unwrap();
        let noise = NoiseMatrix::from_row_slice(1, 1, &[0.35]).unwrap();
        let gamma = AdversaryLabels::uniform(1, 1).unwrap();
        let prob = Problem::new(&data, &noise, &gamma, 0.05).unwrap();
        let pt = BilevelPoint {
            w: ModelWeights::from_vec(vec![1.3]).unwrap(),
            theta: GeneratorParams::new(vec![4.0], vec![0.4]).unwrap(),
            zeta: 0.7,
        };
        let j = Stationarity::new(prob).assemble_jacobian(&pt).unwrap();
        let uh = prob.upper_hessians(&pt.w, &pt.theta).unwrap();
        let lh = prob.lower_hessians(&pt.w, &pt.theta).unwrap();
        let lg = prob.lower_gradients(&pt.w, &pt.theta).unwrap();
        let z2 = 0.49;
        #[rustfmt::skip]
        let expect = DMatrix::from_row_slice(5, 4, &[
            uh.h_ww[(0, 0)], uh.h_wtheta[(0, 0)], uh.h_wtheta[(0, 1)], 0.0,
            uh.h_wtheta[(0, 0)] - z2 * lh.h_wtheta[(0, 0)],
                uh.h_thetatheta[(0, 0)] - z2 * lh.h_thetatheta[(0, 0)],
                uh.h_thetatheta[(0, 1)] - z2 * lh.h_thetatheta[(0, 1)],
                -1.4 * lg.g_theta[0],
            uh.h_wtheta[(0, 1)] - z2 * lh.h_wtheta[(0, 1)],
                uh.h_thetatheta[(1, 0)] - z2 * lh.h_thetatheta[(1, 0)],
                uh.h_thetatheta[(1, 1)] - z2 * lh.h_thetatheta[(1, 1)],
                -1.4 * lg.g_theta[1],
            lh.h_wtheta[(0, 0)], lh.h_thetatheta[(0, 0)], lh.h_thetatheta[(0, 1)], 0.0,
            lh.h_wtheta[(0, 1)], lh.h_thetatheta[(1, 0)], lh.h_thetatheta[(1, 1)], 0.0,
        ]);
        for (a, b) in j.iter().zip(expect.iter()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn zeta_enters_only_through_its_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let o = instance(&mut rng, 3, 10, 4);
        let prob = Problem::new(&o.data, &o.noise, &o.gamma, o.mu).unwrap();
        let sys = Stationarity::new(prob);
        let pt = point(&mut rng, 3);
        let mut neg = pt.clone();
        neg.zeta = -pt.zeta;
        let a = sys.assemble(&pt).unwrap();
        let b = sys.assemble(&neg).unwrap();
        assert_eq!(a.residual, b.residual);
        assert_eq!(a.jacobian.column(9).into_owned(), -b.jacobian.column(9).into_owned());

        // middle block shifts by exactly -zeta^2 grad_theta f
        let mut zero = pt.clone();
        zero.zeta = 0.0;
        let r0 = sys.assemble_residual(&zero).unwrap();
        let lg = prob.lower_gradients(&pt.w, &pt.theta).unwrap();
        let diff = a.residual.rows(3, 6) - r0.rows(3, 6);
        for (d, g) in diff.iter().zip(lg.g_theta.iter()) {
            assert!((d + pt.zeta * pt.zeta * g).abs() <= 1e-12 * g.abs().max(1.0));
        }
    }

    #[test]
    fn central_differences_converge_quadratically() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let o = instance(&mut rng, 2, 6, 2);
        let prob = Problem::new(&o.data, &o.noise, &o.gamma, o.mu).unwrap();
        let sys = Stationarity::new(prob);
        let mut pt = point(&mut rng, 2);
        // keep the slopes mild so truncation error dominates rounding
        pt.theta.alpha = vec![1.5, -2.0];
        let j = sys.assemble_jacobian(&pt).unwrap();
        let err = |h: f64| (sys.finite_difference_jacobian(&pt, h).unwrap() - &j).amax();
        let (e1, e2) = (err(1e-2), err(5e-3));
        let ratio = e1 / e2;
        assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn rejects_bad_step_and_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let o = instance(&mut rng, 2, 4, 2);
        let prob = Problem::new(&o.data, &o.noise, &o.gamma, o.mu).unwrap();
        let sys = Stationarity::new(prob);
        let pt = point(&mut rng, 2);
        assert!(sys.finite_difference_jacobian(&pt, 0.0).is_err());
        assert!(sys.assemble_residual(&point(&mut rng, 3)).is_err());
    }
}
