//! Koopman operator identification with output equations.
//!
//! The crate learns state-inclusive Koopman models `psi(x+) = K psi(x)`,
//! `y = W_h psi(x)` from trajectory data, splits them into the subsystem that
//! drives a chosen output and the remainder, and ranks the original state
//! variables by how strongly they influence that output. Delay-embedded models
//! built from outputs alone test whether the measurements carry enough
//! information to reconstruct the state.
//!
//! Everything here is pure computation on owned buffers; file formats, plots
//! and the command line live in the `kobs` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analytical;
pub mod decomposition;
pub mod delayembed;
mod error;
pub mod numerics;
pub mod observables;
pub mod ocdmd;
pub mod simulator;

pub use error::{Error, Result};
pub use numerics::Matrix;
