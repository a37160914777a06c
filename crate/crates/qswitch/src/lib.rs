//! Switched-linear analysis toolkit for constant-step-size tabular
//! Q-learning.
//!
//! The error `e_k = Q_k - Q*` of asynchronous Q-learning evolves as an exact
//! switched linear recursion `e_{k+1} = M_{mu_k} e_k + alpha w_k`, where the
//! drift matrix is selected from the direct family
//! `M_pi = I - alpha D + alpha gamma D P Pi^pi` and the noise is a martingale
//! difference. This crate builds that representation and everything needed to
//! certify and validate its convergence rate:
//!
//! - [`mdp`]: finite discounted MDPs, the Bellman operator, an optimal-Q
//!   solver, and the fixed state-action ordering.
//! - [`policies`]: deterministic/stochastic policies, selection matrices,
//!   the exact stochastic-policy linearization of the Bellman max, and
//!   convex-hull weights.
//! - [`switching`]: the direct mode family, affine and sample-path modes,
//!   the coordinate-sampling bias, and trajectory residual checks.
//! - [`sim`]: seeded Q-learning simulation under i.i.d. and single-trajectory
//!   Markovian observation models with exact noise extraction.
//! - [`jsr`]: certified upper/lower brackets of the joint spectral radius of
//!   the direct family and the row-sum comparison rate.
//! - [`lyapunov`]: product-defined Lyapunov approximants with computed
//!   norm-equivalence constants, and common quadratic certificates.
//! - [`bounds`]: closed-form finite-time bound curves and sample-complexity
//!   plans for both certificates and both observation models.
//! - [`harness`]: config-driven experiment orchestration behind the `qswitch`
//!   command-line binary, including CSV/JSON emission and Monte-Carlo
//!   validation of every bound.
//!
//! The `examples/` directory carries one runnable program per capability;
//! start with `cargo run --release --example rate_gap`.

pub mod bounds;
pub mod error;
pub mod harness;
pub mod jsr;
pub mod lyapunov;
pub mod mdp;
pub mod policies;
pub mod sim;
pub mod switching;

pub use error::{Error, Result};
pub use mdp::{Mdp, QVector};
pub use policies::{DeterministicPolicy, StochasticPolicy};
pub use switching::SwitchingFamily;
