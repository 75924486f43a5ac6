//! Globally monotonic step-response tracking for MIMO LTI systems.
//!
//! The pipeline goes: load a plant ([`LtiSystem`]), audit the standing
//! assumptions and compute its invariant zeros ([`sysmodel`]), build the
//! output-nulling reachability subspaces and the stabilisability
//! output-nulling subspace from kernels of the Rosenbrock pencil
//! ([`subspaces`]), evaluate the subset-dimension solvability conditions
//! ([`solvability`]), compute the gain and feedforward ([`synthesis`]) and
//! verify the closed loop by simulation ([`simverify`]).
//!
//! All numerical code is generic over a real scalar `T: Scalar`
//! (`f32` or `f64`); the aliases at the crate root fix `f64`, which is
//! what the CLI and the file formats use. Exact rational arithmetic is
//! available for the final gain computation in [`numkernel::exact`].

pub mod ensemble;
pub mod error;
pub mod export;
pub mod numkernel;
pub mod simverify;
pub mod solvability;
pub mod subspaces;
pub mod synthesis;
pub mod sysmodel;

use nalgebra::RealField;

pub use error::{Error, Result};
pub use numkernel::{Basis, Mixer, TolerancePolicy};
pub use sysmodel::{InvariantZero, LtiSystem, Plant, TimeDomain};

/// Real scalar the numerical core is generic over.
///
/// `RealField` already pulls in `num_traits::FromPrimitive` and the
/// `Zero`/`One`/`Num` family; `ToPrimitive` is added so that results can be
/// reported through the `f64` file formats.
pub trait Scalar: RealField + Copy + num_traits::ToPrimitive {}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Scalar>(x: f64) -> T {
    nalgebra::convert(x)
}

/// Lossy conversion back to `f64` for reporting.
#[inline]
pub fn to_f64<T: Scalar>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Modulus of a complex number without requiring `num_traits::Float`.
#[inline]
pub fn cabs<T: Scalar>(z: nalgebra::Complex<T>) -> T {
    z.re.hypot(z.im)
}

/// Exact arithmetic used to cross-check reference rational gains.
pub type Rational = num_rational::BigRational;

pub type System = LtiSystem<f64>;
pub type System32 = LtiSystem<f32>;
pub type PlantF64 = Plant<f64>;
pub type Tolerances = TolerancePolicy<f64>;
pub type Zero = InvariantZero<f64>;
pub type PairedBasisF64 = subspaces::PairedBasis<f64>;
pub type SynthesisSpecF64 = synthesis::SynthesisSpec<f64>;
pub type FeedbackResultF64 = synthesis::FeedbackResult<f64>;
pub type TraceF64 = simverify::SimulationTrace<f64>;
