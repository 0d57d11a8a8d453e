//! Step-halving backtracking shared by the LM solver and the baseline trainer.

use crate::error::Result;

/// Outcome of a backtracking search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backtrack {
    pub omega: f64,
    /// Objective at the accepted step, `None` when the search failed.
    pub value: Option<f64>,
    pub accepted: bool,
}

/// Halve `omega` from `omega0` until `eval(omega) < f0 + omega * slope`.
///
/// `slope` is the (already scaled) directional term of the sufficient
/// decrease test. Non-finite trial values count as rejections. The search
/// fails once `omega` drops below `omega_min`.
pub fn backtrack<F>(f0: f64, slope: f64, omega0: f64, omega_min: f64, mut eval: F) -> Result<Backtrack>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut omega = omega0;
    loop {
        let trial = eval(omega)?;
        if trial.is_finite() && trial < f0 + omega * slope {
            return Ok(Backtrack {
                omega,
                value: Some(trial),
                accepted: true,
            });
        }
        omega *= 0.5;
        if omega < omega_min {
            return Ok(Backtrack {
                omega,
                value: None,
                accepted: false,
            });
        }
    }
}
