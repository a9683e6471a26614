//! Inertial primal-dual flows with vanishing Tikhonov regularization for
//! linearly constrained convex problems, plus the numerical tooling to run
//! and check them.

pub mod dynamics;
pub mod experiments;
pub mod integrator;
pub mod linalg;
pub mod metrics;
pub mod parallel;
pub mod problem;
pub mod saddle;
pub mod verify;
