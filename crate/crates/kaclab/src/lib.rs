//! Numerical laboratory for the Kac model in `d >= 2` dimensions.
//!
//! The crate is organised around one object: the uniform probability measure
//! on the Boltzmann sphere (the set of `N` velocities in `R^d` with fixed
//! total energy and momentum), and the normalization function `Z_N` that
//! couples a product density `f^{(x)N}` to that sphere.  Everything else is
//! built on top of it:
//!
//! * [`densities`] - the bi-Maxwellian generating family `f_delta`, its
//!   moments, the schedule `delta_N = N^{-(1-eta)}` and the admissible
//!   `eta` window, and the Gaussian limit density `gamma_N`.
//! * [`sphere`] - sphere geometry, orthogonal momentum reduction, exact
//!   uniform sampling, and the marginal (Fubini) weights for integrating
//!   out `j` particles.
//! * [`charfn`] - characteristic functions of `(V, |V|^2)` under Maxwellian
//!   mixtures, and the radial Fourier inversion that evaluates the `N`-fold
//!   convolution density, hence `log Z_N`.
//! * [`bounds`] - the Gaussian tail estimates, the pointwise envelope for
//!   products of characteristic functions, and the three-domain error
//!   budget behind the Gaussian approximation of `Z_N`.
//! * [`entropy`] - relative entropy `H_N` of the conditioned product family,
//!   the collision entropy production `D_N`, and the scaling tables for the
//!   entropy-production ratio witness.
//! * [`walk`] - the N-particle random collision process itself, with
//!   energy/momentum conservation and thinned variants for
//!   energy-dependent collision rates.
//!
//! Support modules: [`special`] (Bessel `J_0`, log sphere areas), [`quad`]
//! (Gauss-Legendre panels, adaptive Simpson, alternating-tail acceleration).
//!
//! Conventions used throughout:
//!
//! * Fourier transforms use the unitary convention
//!   `g^(xi) = integral g(x) e^{-2 pi i xi . x} dx`.
//! * Surface measures on spheres are *probability* measures unless an area
//!   is explicitly requested; `Z_N` is an average of `f^{(x)N}` over the
//!   Boltzmann sphere, not an unnormalized integral.
//! * All densities and normalizations are assembled in log space; a density
//!   that vanishes reports `-inf` rather than erroring.

pub mod bounds;
pub mod charfn;
pub mod densities;
pub mod entropy;
pub mod quad;
pub mod special;
pub mod sphere;
pub mod walk;

/// Error type for constructor validation and domain failures.
#[derive(Debug, thiserror::Error)]
pub enum KacError {
    /// A parameter violates a structural requirement (dimension, range).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    /// Inputs are structurally fine but lie outside the admissible domain.
    #[error("outside admissible domain: {0}")]
    Domain(String),
    /// A numerical routine could not reach its contract (non-convergence,
    /// non-positive value where a log is required).
    #[error("numerical failure: {0}")]
    Numerics(String),
}

pub type Result<T> = std::result::Result<T, KacError>;
