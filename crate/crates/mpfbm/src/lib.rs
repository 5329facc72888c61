//! Numerical laboratory for the multiparameter fractional Brownian motion
//! (mpfBm): the centred Gaussian field on `[0,1]^nu` whose covariance is built
//! from Lebesgue measures of rectangles and their symmetric differences.
//!
//! The crate is organized around the objects the process induces:
//!
//! * [`geometry`] — rectangle volumes, the symmetric-difference measure, the
//!   covariance kernel and the distances `d_h` it induces;
//! * [`entropy`] — covering numbers under `d_lambda` and the Euclidean metric,
//!   entropy slopes, and the axes counterexample to metric equivalence;
//! * [`field`] — exact Gaussian simulation on finite grids by dense covariance
//!   factorization, with PSD diagnostics;
//! * [`smallball`] — Monte-Carlo small-ball probabilities and scaling fits;
//! * [`spectral`] — a finite-dimensional stable-measure sandbox: sub-Gaussian
//!   stable sampling, radial Lévy quadrature, truncation inequalities, the
//!   decay function `F` and the modulus tables built from it;
//! * [`rkhs`] — Gram matrices, kernel-combination norms, the reproducing
//!   property, Hölder bounds and rescaled processes;
//! * [`lil`] — Chung-type and functional law-of-the-iterated-logarithm sweeps
//!   and Hölder-exponent estimation.
//!
//! All randomness flows from a single master seed through the splitmix-based
//! stream derivation in [`rng`], so every result is bit-reproducible across
//! runs and worker counts.

pub mod entropy;
pub mod field;
pub mod geometry;
pub mod lil;
pub mod rkhs;
pub mod rng;
pub mod smallball;
pub mod spectral;
pub mod stats;

pub use geometry::{HurstParam, Point};
