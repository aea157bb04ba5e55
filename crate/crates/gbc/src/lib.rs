//! Geometry of Gaussian random sections of vector bundles: the correlator
//! metric and connection, curvature and Euler forms, Kac-Rice densities,
//! zero-locus currents, and a Monte Carlo experiment harness comparing the
//! two sides of the expected-current identity.

pub mod algebra;
pub mod ensemble;
pub mod geometry;
pub mod harness;
pub mod kacrice;
pub mod manifold;
pub mod zeroloc;
