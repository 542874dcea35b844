//! Wavelet-spectral solver for the spatially homogeneous Boltzmann equation
//! on the whole velocity space.
//!
//! Velocities are compactified into `(-1,1)^3`, the distribution (times
//! `<v>^2`) is expanded in a filtered level-N Haar basis there, and the
//! collision operator becomes a quadratic ODE for the coefficients whose
//! tensors are precomputed by Monte Carlo.

pub mod collision_tensor;
pub mod diagnostics;
pub mod haar_basis;
pub mod kernel;
pub mod quadrature;
pub mod scenario_io;
pub mod spectral_solver;
pub mod velocity_map;
