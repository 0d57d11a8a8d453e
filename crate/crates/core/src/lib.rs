//! Binary classifiers trained against a strategic data generator.
//!
//! The learner (leader) fits logistic-regression weights on static data plus
//! data produced by an adversarial generator (follower), assuming the
//! adversary picks the response worst for the learner among its optimal
//! ones. Training solves the resulting stationarity system with a damped
//! Levenberg-Marquardt method.

pub mod baseline;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod generator;
pub mod linesearch;
pub mod lm_solver;
pub mod objectives;
pub mod stationarity;

pub use error::{Error, Result};
