//! Numerical laboratory for training instabilities.
//!
//! The crate is organised by topic:
//!
//! * [`spectral`]: matrix-free Lanczos with MPK selective reorthogonalisation,
//!   tridiagonal eigensolves and finite-difference curvature probes.
//! * [`subspace`]: principal angles and the cosine-Grassmannian misalignment score.
//! * [`dln`]: closed-form Hessians and rotation ratios of diagonal linear networks.
//! * [`walk`]: the state-dependent random walk, exact enumeration, Monte Carlo
//!   ensembles and numerical checks of its contraction results.
//! * [`optim`]: GD, noise-scaled SGD, RMSprop, Adam and Clipped-Ada.
//! * [`toytrain`]: a small MLP trainer with sharpness and rotation diagnostics.
//! * [`rmt`]: spiked Wigner overlaps and bulk-edge proxies.

pub mod dln;
pub mod error;
pub mod optim;
pub mod rmt;
pub mod seed;
pub mod spectral;
pub mod subspace;
pub mod toytrain;
pub mod walk;

pub use error::{Error, Result};
pub use nalgebra::{DMatrix, DVector};
pub use seed::{derive_seed, rng_from_seed};
pub use spectral::{
    DenseOracle, FnOracle, HvpOracle, KrylovBasis, LanczosOptions, SpectrumEstimate,
    TridiagonalResult,
};
pub use subspace::{OrthonormalBasis, PrincipalAngles};
