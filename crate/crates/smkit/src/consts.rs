//! Physical constants (CODATA).

/// Vacuum permeability, T·m/A.
pub const MU0: f64 = 4.0e-7 * std::f64::consts::PI;

/// Boltzmann constant, J/K.
pub const KB: f64 = 1.380649e-23;
