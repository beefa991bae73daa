//! Numerical library for time delay of discrete-time unitary dynamics on
//! truncated lattices.
//!
//! The crate provides the lattice Hilbert space ([`hilbert`]), free and full
//! propagators with velocity and critical-set analysis ([`models`]),
//! localisation bumps and their renormalised averages ([`localisation`]), the
//! time operator, conjugate operator and commutator machinery ([`timeops`]),
//! wave operators with scattering-matrix extraction ([`scattering`]) and
//! sojourn-time delay convergence studies ([`delay`]).
//!
//! Everything is generic over the real scalar type through [`Scalar`];
//! concrete `f64` aliases are exported at the crate root.

pub mod delay;
pub mod error;
pub mod extrapolate;
mod fft;
pub mod hilbert;
pub mod localisation;
pub mod models;
pub mod quad;
mod scalar;
pub mod scattering;
pub mod timeops;

pub use error::{Error, Result};
pub use scalar::{Cplx, Scalar};

/// Default `f64` instantiations of the core types.
pub type Grid64 = hilbert::Grid<f64>;
pub type State64 = hilbert::State<f64>;
pub type WavepacketSpec64 = hilbert::WavepacketSpec<f64>;
pub type LocalisationFunction64 = localisation::LocalisationFunction<f64>;
pub type FiberedPropagator64 = models::FiberedPropagator<f64>;
pub type Propagator64 = models::Propagator<f64>;
pub type CriticalSet64 = models::CriticalSet<f64>;
pub type TimeOperator64 = timeops::TimeOperator<f64>;
pub type ConjugateOperator64 = timeops::ConjugateOperator<f64>;
pub type ScatteringSystem64 = scattering::ScatteringSystem<f64>;
pub type SMatrixTable64 = scattering::SMatrixTable<f64>;
pub type TimeDelayReport64 = delay::TimeDelayReport<f64>;
pub type C64 = num_complex::Complex<f64>;
