//! Control design and parameter estimation for a driven, dissipative spin-1/2.
//!
//! The crate is organised bottom-up:
//!
//! - [`qmodel`]: states, operators, pulses and the Hamiltonian;
//! - [`dynamics`]: exact Lindblad propagation over piecewise-constant pulses;
//! - [`infometrics`]: Bures distance, quantum and classical Fisher information;
//! - [`pulseopt`]: cost functions and a seeded annealing optimizer;
//! - [`mlestim`]: simulated σ_z measurements, maximum likelihood and bootstrap.

pub mod dynamics;
pub mod error;
pub mod infometrics;
pub mod linalg;
pub mod mlestim;
pub mod pulseopt;
pub mod qmodel;
pub mod rng;

pub use error::{QestError, Result};
pub use qmodel::{
    BlochVector, ComplexOperator, ModelParams, ParamName, PiecewisePulse, Povm, PulseSegment, PureState, QubitState,
};
