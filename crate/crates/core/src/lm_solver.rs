//! Damped Levenberg-Marquardt for overdetermined residual systems.
//!
//! Each iteration solves `(J^T J + eta I) d = -J^T Phi` by Cholesky, then
//! halves the step length `omega` (starting from 1) until
//! `||Phi(x + omega d)||^2 < ||Phi(x)||^2 + omega (J^T Phi)^T d`.
//! `eta` is divided by `eta_decay` whenever the squared residual has not
//! dropped below `tau` times its value `kappa` accepted iterations earlier.
//! A failed line search resets `eta` to `eta0`; two failures in a row stop
//! the solve.

use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linesearch::backtrack;
use crate::stationarity::ResidualSystem;

/// Maximum number of tenfold `eta` bumps when the normal matrix does not
/// factorise.
const MAX_JITTER_RETRIES: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct LmConfig {
    /// Stop once `||Phi||^2 <= epsilon`.
    pub epsilon: f64,
    pub max_iter: usize,
    pub eta0: f64,
    pub kappa: usize,
    pub tau: f64,
    pub omega_min: f64,
    pub eta_decay: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-8,
            max_iter: 1000,
            eta0: 1e-3,
            kappa: 5,
            tau: 0.9,
            omega_min: 1e-100,
            eta_decay: 10.0,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.epsilon, self.eta0, self.omega_min, self.eta_decay];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config(
                "epsilon, eta0, omega_min and eta_decay must be positive".into(),
            ));
        }
        if self.max_iter == 0 || self.kappa == 0 {
            return Err(Error::Config("max_iter and kappa must be >= 1".into()));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("tau must lie in (0,1], got {}", self.tau)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverStatus {
    Converged,
    MaxIter,
    Stalled,
}

impl fmt::Display for SolverStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverStatus::Converged => "converged",
            SolverStatus::MaxIter => "max_iter",
            SolverStatus::Stalled => "stalled",
        })
    }
}

/// One solver iteration, as written to convergence traces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    /// `||Phi||^2` after the iteration (unchanged on a rejected step).
    pub residual_sq: f64,
    /// Damping used for this iteration's step.
    pub eta: f64,
    pub omega: f64,
    pub accepted: bool,
    /// `eta` was reset to `eta0` and the lookback window restarted.
    pub eta_reset: bool,
}

#[derive(Debug, Clone)]
pub struct SolverState {
    pub point: DVector<f64>,
    pub eta: f64,
    pub iter: usize,
    /// Initial value followed by one entry per accepted step.
    pub residual_sq_history: Vec<f64>,
    pub status: SolverStatus,
    pub trace: Vec<TraceRecord>,
}

impl SolverState {
    pub fn residual_sq(&self) -> f64 {
        *self.residual_sq_history.last().expect("history starts non-empty")
    }
}

/// Solve `(J^T J + eta I) d = -J^T Phi`.
///
/// Returns the direction and the damping actually used, which exceeds `eta`
/// when the factorisation needed jitter.
pub fn lm_step(jacobian: &DMatrix<f64>, residual: &DVector<f64>, eta: f64) -> Result<(DVector<f64>, f64)> {
    if jacobian.nrows() != residual.len() {
        return Err(Error::dim("lm_step residual", jacobian.nrows(), residual.len()));
    }
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument(format!("eta must be > 0, got {eta}")));
    }
    if jacobian.iter().chain(residual.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Singular { eta });
    }
    let normal = jacobian.tr_mul(jacobian);
    let rhs = -jacobian.tr_mul(residual);
    let mut damping = eta;
    for _ in 0..=MAX_JITTER_RETRIES {
        let mut a = normal.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += damping;
        }
        if let Some(chol) = a.cholesky() {
            let d = chol.solve(&rhs);
            if d.iter().all(|v| v.is_finite()) {
                return Ok((d, damping));
            }
        }
        damping *= 10.0;
    }
    Err(Error::Singular { eta: damping })
}

/// Result of [`line_search`].
#[derive(Debug, Clone)]
pub struct LineSearch {
    pub omega: f64,
    pub accepted: bool,
    /// Accepted point and its squared residual.
    pub next: Option<(DVector<f64>, f64)>,
}

/// Backtracking on `||Phi||^2` along `d` from `x`.
pub fn line_search<S: ResidualSystem + ?Sized>(
    system: &S,
    x: &DVector<f64>,
    residual_sq: f64,
    gradient: &DVector<f64>,
    d: &DVector<f64>,
    config: &LmConfig,
) -> Result<LineSearch> {
    if d.iter().all(|&v| v == 0.0) {
        return Ok(LineSearch {
            omega: 1.0,
            accepted: true,
            next: Some((x.clone(), residual_sq)),
        });
    }
    let slope = gradient.dot(d);
    let mut last: Option<DVector<f64>> = None;
    let out = backtrack(residual_sq, slope, 1.0, config.omega_min, |omega| {
        let trial = x + d * omega;
        let r = system.residual(&trial)?.norm_squared();
        last = Some(trial);
        Ok(r)
    })?;
    Ok(LineSearch {
        omega: out.omega,
        accepted: out.accepted,
        next: match (out.accepted, out.value, last) {
            (true, Some(v), Some(p)) => Some((p, v)),
            _ => None,
        },
    })
}

/// Run the damped LM iteration from `x0`.
///
/// `trace_sink`, when given, receives one CSV line per iteration.
pub fn solve<S: ResidualSystem + ?Sized>(system: &S, x0: DVector<f64>, config: &LmConfig) -> Result<SolverState> {
    solve_traced(system, x0, config, None)
}

pub fn solve_traced<S: ResidualSystem + ?Sized>(
    system: &S,
    x0: DVector<f64>,
    config: &LmConfig,
    mut trace_sink: Option<&mut dyn Write>,
) -> Result<SolverState> {
    config.validate()?;
    if x0.len() != system.num_vars() {
        return Err(Error::dim("initial point", system.num_vars(), x0.len()));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("initial point must be finite".into()));
    }

    let r0 = system.residual(&x0)?.norm_squared();
    let mut state = SolverState {
        point: x0,
        eta: config.eta0,
        iter: 0,
        residual_sq_history: vec![r0],
        status: SolverStatus::MaxIter,
        trace: Vec::new(),
    };
    // index into residual_sq_history where the current lookback window opens
    let mut window_start = 0;
    let mut failures = 0;

    loop {
        let r_sq = state.residual_sq();
        if !r_sq.is_finite() {
            state.status = SolverStatus::Stalled;
            break;
        }
        if r_sq <= config.epsilon {
            state.status = SolverStatus::Converged;
            break;
        }
        if state.iter >= config.max_iter {
            state.status = SolverStatus::MaxIter;
            break;
        }

        let (phi, jac) = system.residual_and_jacobian(&state.point)?;
        if jac.iter().any(|v| !v.is_finite()) {
            state.status = SolverStatus::Stalled;
            break;
        }
        let gradient = jac.tr_mul(&phi);
        let (d, eta_used) = lm_step(&jac, &phi, state.eta)?;
        let ls = line_search(system, &state.point, r_sq, &gradient, &d, config)?;
        state.iter += 1;

        let mut record = TraceRecord {
            iter: state.iter,
            residual_sq: r_sq,
            eta: eta_used,
            omega: ls.omega,
            accepted: ls.accepted,
            eta_reset: false,
        };

        match ls.next {
            Some((next, next_sq)) if ls.accepted => {
                failures = 0;
                let stuck = next_sq >= r_sq;
                state.point = next;
                if !stuck {
                    state.residual_sq_history.push(next_sq);
                }
                record.residual_sq = next_sq;
                let k = state.residual_sq_history.len() - 1;
                if k >= window_start + config.kappa {
                    let past = state.residual_sq_history[k - config.kappa];
                    if past > 0.0 && next_sq / past > config.tau {
                        state.eta /= config.eta_decay;
                    }
                }
                emit(&mut trace_sink, &record)?;
                state.trace.push(record);
                if stuck {
                    // zero direction away from a root: nothing left to do
                    state.status = SolverStatus::Stalled;
                    break;
                }
            }
            _ => {
                failures += 1;
                state.eta = config.eta0;
                window_start = state.residual_sq_history.len() - 1;
                record.eta_reset = true;
                emit(&mut trace_sink, &record)?;
                state.trace.push(record);
                if failures >= 2 {
                    state.status = SolverStatus::Stalled;
                    break;
                }
            }
        }
    }
    Ok(state)
}

fn emit(sink: &mut Option<&mut dyn Write>, r: &TraceRecord) -> Result<()> {
    if let Some(w) = sink.as_mut() {
        writeln!(w, "{}", trace_line(r)).map_err(|e| Error::io("<trace>", e))?;
    }
    Ok(())
}

pub const TRACE_HEADER: &str = "iter,residual_sq,eta,omega,accepted,eta_reset";

pub fn trace_line(r: &TraceRecord) -> String {
    format!(
        "{},{:e},{:e},{:e},{},{}",
        r.iter, r.residual_sq, r.eta, r.omega, r.accepted as u8, r.eta_reset as u8
    )
}
