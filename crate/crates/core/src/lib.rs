//! Simulation and analysis toolkit for quantum state engineering on a single
//! trapped ion driven on a narrow optical (S <-> D) transition.
//!
//! The crate models one motional mode of the ion together with a two-level
//! electronic system. It covers
//!
//! * joint electronic/motional density matrices ([`hilbert`]),
//! * carrier and sideband drives with dephasing and motional heating
//!   ([`dynamics`]),
//! * resolved-sideband cooling as a rate-equation ladder ([`cooling`]),
//! * a small pulse-sequence language with compiler and shot executor
//!   ([`sequence`]),
//! * electron-shelving detection with Poisson photon statistics
//!   ([`measurement`]),
//! * thermometry, Fock-population extraction and curve fits ([`analysis`]),
//! * end-to-end experiment pipelines used by the command-line front end
//!   ([`experiments`]).

pub mod analysis;
pub mod config;
pub mod cooling;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod hilbert;
pub mod measurement;
pub mod physics;
pub mod seeding;
pub mod sequence;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
