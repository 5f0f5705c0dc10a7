//! Iterative cooling of a thermalized nanomechanical oscillator by
//! conditioned spin measurements.
//!
//! The crate is organized in layers:
//!
//! - [`fockspace`]: truncated bosonic operators, thermal/coherent states,
//!   phase-space observables.
//! - [`dynamics`]: exact closed-system evolution of the spin-oscillator
//!   system in product and collective spin bases, plus coherent-branch
//!   closed forms and a brute-force integrator used as an oracle.
//! - [`postselect`]: target spin states and the conditional collapse.
//! - [`protocol`]: the iterative cooling loop with a mechanical-only
//!   step kernel as its fast path.
//! - [`optimizer`]: derivative-free search over real unit-norm target
//!   coefficients.
//! - [`lindblad`]: open-system evolution and the open variant of the
//!   protocol.
//! - [`cli`]: the `spincool` command-line surface.
//!
//! Units: hbar = 1, all times and rates are scaled by the mechanical
//! frequency, so one oscillator cycle is t = 2 pi.

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod fockspace;
pub mod lindblad;
pub mod optimizer;
pub mod postselect;
pub mod protocol;
pub mod util;

pub use error::Error;

pub type C64 = num_complex::Complex64;
pub type Result<T> = std::result::Result<T, Error>;

/// Probabilities below this are treated as numerically meaningless
/// rather than physically tiny.
pub const PROBABILITY_FLOOR: f64 = 1e-12;
