//! Drive Hamiltonians, dissipators, time evolution, and generation of
//! flopping traces and sideband spectra.

mod drive;
mod master;
mod noise;
mod propagate;
mod trace;

pub use drive::{
    build_drive_hamiltonian, generalized_laguerre, rabi_frequency, CouplingRegime, DriveParams, Sideband,
    SparseOperator,
};
pub use master::{default_dt, evolve, DEFAULT_STEP_PRODUCT, STABILITY_LIMIT};
pub use noise::{gauss_hermite_normal, NoiseModel, ShotNoise};
pub use trace::{
    analytic_flopping, flopping_trace, shot_excited_population, sideband_spectrum, FloppingTrace, Spectrum,
    TraceProvenance,
};

use crate::error::Result;
use crate::hilbert::JointState;
use propagate::{propagate, PairSet};

/// Integration scheme for [`evolve_with`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Method {
    /// Fixed-step RK4 on the full master equation; `None` selects
    /// [`default_dt`].
    Rk4 { dt: Option<f64> },
    /// Exact propagation of drive and dephasing per block, heating by Strang
    /// splitting.
    Blockwise,
}

pub fn evolve_with(
    state: &JointState,
    drive: Option<&DriveParams>,
    noise: &NoiseModel,
    duration: f64,
    method: Method,
) -> Result<JointState> {
    match method {
        Method::Rk4 { dt } => {
            let dt = dt.unwrap_or_else(|| default_dt(state.space(), drive, noise).min(duration.max(f64::MIN_POSITIVE)));
            evolve(state, drive, noise, duration, dt)
        }
        Method::Blockwise => {
            master::validate_inputs(drive, noise, duration)?;
            let rho = propagate(state.rho(), state.space(), drive, noise, duration, PairSet::All);
            let out = JointState::from_parts(*state.space(), rho);
            master::warn_on_truncation(&out);
            Ok(out)
        }
    }
}

/// `P_D` after evolving `state` for `duration`; cheaper than a full
/// [`evolve_with`] because only intra-block elements are propagated.
pub fn excited_population_after(
    state: &JointState,
    drive: Option<&DriveParams>,
    noise: &NoiseModel,
    duration: f64,
) -> Result<f64> {
    master::validate_inputs(drive, noise, duration)?;
    let space = state.space();
    let rho = propagate(state.rho(), space, drive, noise, duration, PairSet::Diagonal);
    let p: f64 = (space.levels()..space.dim()).map(|i| rho[(i, i)].re).sum();
    Ok(p.clamp(0.0, 1.0))
}
