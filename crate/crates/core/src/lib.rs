//! Boundary Riemann problems for viscous systems of conservation laws.
//!
//! This crate builds self-similar solutions of the quarter-plane problem
//!
//! ```text
//!     U_t + F(U)_x = 0,          t > 0, x > 0,
//!     U(0, x) = U_0,             U(t, 0) = U_D,
//! ```
//!
//! for small-amplitude data, together with the viscous boundary layer that a
//! (possibly non-identity) viscosity matrix `B(U)` attaches at `x = 0`, and
//! numerical experiments comparing the classical viscous approximation with
//! its self-similar counterpart.
//!
//! The crate is organised bottom-up:
//!
//! * [`system`] — hyperbolic systems, spectral decompositions, structural
//!   hypothesis checks, boundary classification;
//! * [`envelope`] — exact convex/concave/monotone envelopes of sampled
//!   one-dimensional functions (the combinatorial core of wave fan curves);
//! * [`waves`] — Hugoniot loci, admissibility of shocks, rarefaction and
//!   wave fan curves, including the characteristic variant that splits off
//!   zero-speed waves;
//! * [`layers`] — boundary layer profiles: shooting on stable manifolds,
//!   the layer parameterisation map, and the center/stable/quadratic
//!   decomposition of a profile;
//! * [`riemann`] — the composed solvers for Riemann and boundary Riemann
//!   problems, solution validation and serialisation;
//! * [`viscous`] — finite-difference solvers for the parabolic and
//!   self-similar approximations and the comparison experiments;
//! * [`suite`] — the end-to-end verification battery used by the
//!   `acceptance` test target and the `brk suite` subcommand.

pub mod envelope;
pub mod layers;
pub mod linalg;
pub mod params;
pub mod riemann;
pub mod suite;
pub mod system;
pub mod viscous;
pub mod waves;

pub use params::Numerics;
