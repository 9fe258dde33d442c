//! Simulation and asymptotic analysis of finite-time blow-up for
//! `y' = H(y)Ay + G(t, y)` with positively homogeneous `H`.

pub mod asymptotics;
pub mod config;
pub mod envelope;
pub mod fit;
pub mod homogeneous;
pub mod integrator;
pub mod problem;
pub mod quad;
pub mod spectral;
