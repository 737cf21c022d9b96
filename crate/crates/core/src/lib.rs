//! Scattering coefficients for Bose gases with three-body interactions in the
//! Gross–Pitaevskii regime.
//!
//! Starting from a non-negative, compactly supported three-body potential V on
//! ℝ⁶ this crate computes the modified scattering length b_M(V), the
//! second-order corrections μ(V), γ(V), σ(V), certifies the sign of
//! γ − μ − σ at weak coupling, and cross-checks the renormalised coefficient
//! against an exactly truncated three-body problem on the torus.
//!
//! See the guide in `book/` for a walk-through.

pub mod cg;
pub mod coeffs;
pub mod error;
pub mod greens;
pub mod par;
pub mod potential;
pub mod quad;
pub mod scatter6;
pub mod sigma9;
pub mod signscan;
pub mod torus;

pub use error::{Error, Result};

// The guide's snippets run as doctests, one module per chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/potential.md")]
    mod potential {}
    #[doc = include_str!("../../../book/src/scattering.md")]
    mod scattering {}
    #[doc = include_str!("../../../book/src/coefficients.md")]
    mod coefficients {}
    #[doc = include_str!("../../../book/src/sigma.md")]
    mod sigma {}
    #[doc = include_str!("../../../book/src/signscan.md")]
    mod signscan {}
    #[doc = include_str!("../../../book/src/torus.md")]
    mod torus {}
    #[doc = include_str!("../../../book/src/reproducibility.md")]
    mod reproducibility {}
}
