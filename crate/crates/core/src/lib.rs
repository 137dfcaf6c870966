//! Simulation toolkit for phase fluctuations of a weakly interacting Bose gas
//! on analogue curved spacetimes.
//!
//! The crate builds background superfluid configurations (Gross-Pitaevskii
//! ground states, Thomas-Fermi profiles, vortex and vortex-superposition
//! phases), derives the acoustic metric they induce, and integrates the
//! resulting sine-Gordon field equation on that geometry.  A numeric
//! functional-derivative oracle ties the discrete equations of motion to the
//! discretized action functionals so that every solver convention is
//! certified rather than hand-derived.
//!
//! Internally lengths are measured in healing lengths, densities in a
//! reference density, and `hbar`, `m` default to 1 but stay explicit so tests
//! can exercise them.  All numerics are generic over the scalar type through
//! [`Real`]; the crate root exports `f64` aliases for everyday use.

pub mod action;
pub mod background;
pub mod error;
pub mod grid;
pub mod io;
pub mod metric;
pub mod scenarios;
pub mod sgsolver;
pub mod states;

pub use error::CoreError;

/// Floating-point scalar the toolkit is generic over: `f32` or `f64`.
pub trait Real:
    num_traits::Float
    + num_traits::FloatConst
    + num_traits::FromPrimitive
    + num_traits::NumAssignOps
    + std::fmt::Debug
    + std::fmt::Display
    + std::fmt::LowerExp
    + Send
    + Sync
    + 'static
{
    /// Shorthand for lossy conversion of literals living in generic code.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Complex number over the crate scalar.
pub type Cplx<R> = num_complex::Complex<R>;

// Concrete `f64` aliases; the generic types live in the modules.
pub type Grid = grid::SpacetimeGrid<f64>;
pub type ScalarField = grid::ScalarField<f64>;
pub type VectorField = grid::VectorField<f64>;
pub type ComplexField = grid::ComplexField<f64>;
