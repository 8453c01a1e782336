//! Doubly-sparse estimation of doubly-selective channels for hybrid mmWave
//! MIMO links with a single RF chain per side.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only the numerics:
//!
//! * [`model`]: geometric channel generation, steering vectors, angular
//!   dictionaries and the beamspace view of a tap.
//! * [`probing`]: phase-shifter quantization, random and steering probes,
//!   zero-padded training frames and received-sample simulation.
//! * [`detect`]: energy detection of the effective delay taps.
//! * [`recover`]: OMP, block OMP and the adaptive grouped variant with grid
//!   refinement that recovers per-tap angle supports.
//! * [`track`]: beam polling, per-poll gain recovery and joint
//!   gain/Doppler estimation.
//! * [`eval`]: reconstruction, NMSE, a ridge LS baseline and the single
//!   trial pipeline used by the experiment harness.
//!
//! IO, CLI and the parallel Monte Carlo harness live in the `dsdsim` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod detect;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod model;
pub mod probing;
pub mod recover;
pub mod track;

pub use error::{Error, Result};

/// Items every module needs, including float math in `no_std` builds.
pub(crate) mod prelude {
    pub use crate::{CMatrix, Error, Result, C64};
    pub use num_traits::Float;
}

/// Complex baseband sample.
pub type C64 = num_complex::Complex<f64>;

/// Dense complex matrix.
pub type CMatrix = nalgebra::DMatrix<C64>;
