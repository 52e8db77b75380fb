//! Training dynamics of point-mass GANs with an RBF kernel discriminator.
//!
//! Both the target and the generated distribution are finite sets of weighted
//! point masses. The discriminator lives in the RKHS of a Gaussian kernel and
//! is trained by gradient ascent on a regularized MMD-style objective while
//! the generated points follow gradient descent; the resulting coupled
//! recursion is simulated exactly by the engines in [`dynamics`].
//!
//! Around the equilibrium where generated points sit on a target point, the
//! linearized update has a closed-form spectrum in terms of the
//! regularization `a = λ`, the mass-gap mode `b = μ·p̃·Δ/(λσ²)` and the
//! coupling `c = μ·p̃·p/σ²`. The [`spectrum`] module evaluates those
//! eigenvalues, the induced spectral radius, stability bounds and phase
//! classifications (convergent / oscillatory / divergent).
//!
//! The crate is `no_std` (with `alloc`); everything here is pure computation
//! over caller-owned buffers. File formats, the CLI and the brute-force
//! Jacobian verifier live in the companion crate `kgda-lab`.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod dynamics;
pub mod kernel;
pub mod scenario;
pub mod spectrum;

mod vecmath;

pub use kernel::{KernelError, KernelFamily, KernelSpec, SquareMat};
pub use scenario::{
    Hyperparams, NeighborhoodPartition, PointMasses, PointSet, Scenario, ScenarioError,
};
