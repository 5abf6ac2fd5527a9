//! Communication-aware nonlinear model predictive control for a generically
//! tilted multirotor that carries a body-fixed optical transmitter and tracks a
//! ground vehicle fitted with a steerable optical receiver.
//!
//! The crate is organised bottom-up:
//!
//! - [`dynamics`]: Newton–Euler rigid-body model with rotor-speed actuator
//!   states, allocation matrices and an RK4 integrator with sensitivities.
//! - [`optics`]: transceiver geometry, alignment/range metrics, binary link
//!   indicators and windowed link quality.
//! - [`ocp`]: output map, stage cost, path constraints and stage-wise
//!   linearisations of the finite-horizon problem.
//! - [`solver`]: dense primal active-set QP, multiple-shooting condensing and
//!   Gauss–Newton SQP / real-time iteration.
//! - [`scenario`]: scenario configuration, ground-vehicle path, obstacle motion
//!   and receiver pointing.
//! - [`sim`]: deterministic multirate closed loop, metrics and CSV logs.
//! - [`cli`]: the `run`, `validate`, `metrics` and `sweep` commands behind the
//!   `fso-nmpc` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod dynamics;
pub mod ocp;
pub mod optics;
pub mod scenario;
pub mod sim;
pub mod solver;

mod error;

pub use error::{Error, Result};
