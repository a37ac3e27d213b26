//! Numerical toolkit for reducing non-signalling quantum learning protocols
//! to measure-then-apply (1-way LOCC) protocols.
//!
//! * [`tensor`]: dense operators on labelled tensor-product spaces.
//! * [`channels`]: Choi-matrix calculus, non-signalling checks, symmetrization.
//! * [`definetti`]: symmetric extensions and operator-valued de Finetti measures.
//! * [`locc`]: trace-preserving repair and the measure-then-apply pipeline.
//! * [`risk`]: learning tasks and expected-risk evaluation.
//! * [`classical`]: the classical classifier-mixture reduction.
//! * [`cli`]: experiment runner behind the `nsl` binary.

pub mod channels;
pub mod classical;
pub mod cli;
pub mod definetti;
pub mod error;
pub mod locc;
pub mod risk;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
