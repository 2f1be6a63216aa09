//! Physical constants and trap-level conversions.

use std::f64::consts::{PI, TAU};

pub const HBAR: f64 = 1.054_571_817e-34;
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;

/// Mass of a 40Ca+ ion, kg (electron mass neglected).
pub const CA40_MASS: f64 = 40.0 * ATOMIC_MASS_UNIT;

/// Wavelength of the S1/2 <-> D5/2 quadrupole transition, m.
pub const QUADRUPOLE_WAVELENGTH: f64 = 729e-9;

/// Natural linewidth of the S1/2 <-> P1/2 cooling transition, rad/s.
pub const DOPPLER_LINEWIDTH: f64 = TAU * 20e6;

/// Natural lifetime of the metastable D5/2 level, s.
pub const D_LIFETIME: f64 = 1.0;

/// Lamb-Dicke parameter `k cos(theta) sqrt(hbar / 2 m omega)` for a mode of
/// angular frequency `omega_trap`.
pub fn lamb_dicke(wavelength: f64, mass: f64, omega_trap: f64, projection: f64) -> f64 {
    let k = 2.0 * PI / wavelength;
    k * projection * (HBAR / (2.0 * mass * omega_trap)).sqrt()
}

/// Lamb-Dicke parameter of a 40Ca+ mode on the 729 nm transition.
pub fn ca40_lamb_dicke(omega_trap: f64, projection: f64) -> f64 {
    lamb_dicke(QUADRUPOLE_WAVELENGTH, CA40_MASS, omega_trap, projection)
}
