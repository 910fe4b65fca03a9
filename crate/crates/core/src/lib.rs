//! Sample-and-check planning for chasing a moving target among moving
//! ellipsoidal obstacles.
//!
//! The pipeline forecasts the target with a batch of closed-form polynomial
//! fits ([`predictor`]), generates chasing primitives from one shared KKT
//! factorization ([`chaser`]), certifies each primitive for collision safety
//! and line-of-sight visibility by Sturm root counting ([`polyalg`]), and
//! runs the whole loop in a receding-horizon simulator ([`simulator`]).
//! Scenario files are JSON ([`scenario`]); [`cli`] runs them and writes
//! CSV/JSON reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // NaN-rejecting checks

pub mod chaser;
pub mod cli;
pub mod polyalg;
pub mod predictor;
pub mod scenario;
pub mod simulator;
pub mod worldmodel;

mod par;
