//! Thermometry, Fock-population extraction from flopping traces, and the
//! exponential and linear fits used on experiment output.

mod fit;
mod populations;
mod thermometry;

pub use fit::{fit_exponential_decay, fit_linear, fit_rabi_frequency, FitResult};
pub use populations::{
    extract_populations, extract_populations_with, PopulationFit, PopulationMethod, DEFAULT_ALPHA, MAX_FIT_FOCK,
    MIN_PERIODS,
};
pub use thermometry::{
    carrier_leak, detection_floor, ground_state_probability, thermometry_from_sidebands, thermometry_uncertainty,
};
