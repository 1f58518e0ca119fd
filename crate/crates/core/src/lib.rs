//! Numerical laboratory for diffusions in a random environment.
//!
//! The crate is organised bottom-up:
//!
//! * [`scales`]: the multiscale hierarchy `L_n`, `ℓ_n`, `κ_n`, `D_n` and the
//!   decay envelopes built from it.
//! * [`environment`]: seeded finite-range coefficient fields `(A, b)` and local
//!   observables evaluated on them.
//! * [`diffusion`]: Euler–Maruyama paths in a frozen environment and the Monte
//!   Carlo estimators built on them (effective diffusivity, tails, symmetry).
//! * [`grid`] and [`kernels`]: grid fields, the monotone finite-difference
//!   solver for the quenched equation, Gaussian kernels, rescaled Hölder norms.
//! * [`renorm`]: `π_n(f)` estimation, Cauchy gaps, contraction statistics and
//!   the coarse kernel comparison.
//! * [`homogenize`]: ε-sweeps, right-hand-side and elliptic variants, time
//!   averages along a path.

pub mod diffusion;
pub mod environment;
pub mod error;
pub mod grid;
pub mod homogenize;
pub mod kernels;
pub mod renorm;
pub mod rng;
pub mod scales;
pub mod stats;

pub use diffusion::{Estimate, PathConfig, PathResult, TailReport};
pub use environment::{
    Cube, EnvironmentRealization, EnvironmentSpec, LocalObservable, SignedPermutation,
};
pub use error::{Error, Result};
pub use grid::{Grid, GridField};
pub use kernels::SolverParams;
pub use scales::{Envelope, ScaleHierarchy, ScaleLevel, ScaleParams};
