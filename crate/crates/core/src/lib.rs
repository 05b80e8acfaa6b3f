//! Monte Carlo and grid-based homogenization toolkit for jump-diffusions
//!
//! ```text
//! dX_t = b(X_t) dt + σ(X_{t-}) dL_t
//! ```
//!
//! with lattice-periodic coefficients and symmetric α-stable noise `L`,
//! `1 < α < 2`. The rescaled process `n^{-1/α}(X_{nt} - nt Π(b) - x_0)`
//! converges to an α-stable Lévy process whose jump measure is the
//! π-average of the pushforwards of `ν` under `y ↦ σ(x) y`.
//!
//! | module | contents |
//! |---|---|
//! | [`stable`] | spectral measures, Lévy symbol, stable samplers, pushforward |
//! | [`periodic`] | lattices, periodic coefficient families |
//! | [`sim`] | increment-Euler and jump-adapted schemes, ensembles, file formats |
//! | [`ergodic`] | invariant measure, mean `Π(f)`, mixing rate, variance decay |
//! | [`corrector`] | generator discretization, Poisson solvers, corrector QV |
//! | [`homogenize`] | averaged spectral measure and limit symbol |
//! | [`verify`] | empirical CFs, limit CDFs, stability index, convergence sweep |

pub mod corrector;
pub mod ergodic;
pub mod error;
pub mod grid;
pub mod homogenize;
pub mod linalg;
pub mod periodic;
pub mod quad;
pub mod rng;
pub mod sim;
pub mod stable;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
pub use stable::{SpectralMeasure, StabilityIndex};
