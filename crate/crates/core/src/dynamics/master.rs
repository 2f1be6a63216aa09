//! Lindblad master equation on the joint space and its fixed-step RK4
//! integration.
//!
//! `d rho/dt = -i[H, rho] + D[L_phi] rho + D[sqrt(k) a] rho + D[sqrt(k) a^dag] rho`
//! with `L_phi = sqrt(gamma_phi / 2) (|D><D| - |S><S|)`. Equal up and down
//! heating rates give `d<n>/dt = k` exactly.

use nalgebra::DMatrix;

use crate::dynamics::drive::{build_drive_hamiltonian, DriveParams, SparseOperator};
use crate::dynamics::noise::NoiseModel;
use crate::error::{Error, Result};
use crate::hilbert::{FockSpace, JointState, TRUNCATION_TAIL_LIMIT};
use crate::C64;

/// Bound on `dt * (|H| + rates)` accepted by the integrator.
pub const STABILITY_LIMIT: f64 = 0.1;

/// Default `dt * (|H| + rates)` used when no step is given.
pub const DEFAULT_STEP_PRODUCT: f64 = 0.01;

const I: C64 = C64::new(0.0, 1.0);

/// Right-hand side of the master equation for one drive and noise setting.
pub(crate) struct Liouvillian {
    space: FockSpace,
    h: SparseOperator,
    gamma_phi: f64,
    heating: HeatingTerm,
}

impl Liouvillian {
    pub(crate) fn new(space: &FockSpace, drive: Option<&DriveParams>, noise: &NoiseModel) -> Self {
        let h = match drive {
            Some(d) => build_drive_hamiltonian(space, d),
            None => SparseOperator::zeros(space.dim()),
        };
        Liouvillian {
            space: *space,
            h,
            gamma_phi: noise.dephasing_rate,
            heating: HeatingTerm::new(space, noise.heating_rate),
        }
    }

    /// `|H|_inf + gamma_phi + k (2 n_max + 1)`.
    pub(crate) fn rate_bound(&self) -> f64 {
        self.h.inf_norm() + self.gamma_phi + self.heating.max_rate()
    }

    pub(crate) fn apply(&self, rho: &DMatrix<C64>, out: &mut DMatrix<C64>) {
        let dim = self.space.dim();
        let levels = self.space.levels();
        out.fill(C64::new(0.0, 0.0));
        for &(r, c, h) in self.h.entries() {
            // -i H rho
            let mih = -I * h;
            for j in 0..dim {
                out[(r, j)] += mih * rho[(c, j)];
            }
            // +i rho H
            let ih = I * h;
            for i in 0..dim {
                out[(i, c)] += rho[(i, r)] * ih;
            }
        }
        if self.gamma_phi > 0.0 {
            // S-D coherences decay at gamma_phi
            for j in 0..dim {
                for i in 0..dim {
                    if (i < levels) != (j < levels) {
                        out[(i, j)] -= rho[(i, j)] * self.gamma_phi;
                    }
                }
            }
        }
        self.heating.accumulate_all(rho, out);
    }
}

/// Heating dissipators `D[sqrt(k) a] + D[sqrt(k) a^dag]` with truncated
/// ladder operators.
pub(crate) struct HeatingTerm {
    kappa: f64,
    levels: usize,
    sqrt_n: Vec<f64>,
}

impl HeatingTerm {
    pub(crate) fn new(space: &FockSpace, kappa: f64) -> Self {
        let levels = space.levels();
        HeatingTerm { kappa, levels, sqrt_n: (0..=levels).map(|n| (n as f64).sqrt()).collect() }
    }

    pub(crate) fn kappa(&self) -> f64 {
        self.kappa
    }

    pub(crate) fn max_rate(&self) -> f64 {
        self.kappa * (2.0 * (self.levels - 1) as f64 + 1.0)
    }

    #[inline]
    fn element(&self, rho: &DMatrix<C64>, i: usize, j: usize) -> C64 {
        let n_max = self.levels - 1;
        let n = i % self.levels;
        let m = j % self.levels;
        let mut acc = C64::new(0.0, 0.0);
        if n < n_max && m < n_max {
            acc += rho[(i + 1, j + 1)] * (self.sqrt_n[n + 1] * self.sqrt_n[m + 1]);
        }
        if n > 0 && m > 0 {
            acc += rho[(i - 1, j - 1)] * (self.sqrt_n[n] * self.sqrt_n[m]);
        }
        // a^dag a = n, a a^dag = n + 1 below the cutoff and 0 at it
        let up = |k: usize| if k < n_max { (k + 1) as f64 } else { 0.0 };
        let anti = 0.5 * ((n + m) as f64 + up(n) + up(m));
        acc -= rho[(i, j)] * anti;
        acc * self.kappa
    }

    pub(crate) fn accumulate_all(&self, rho: &DMatrix<C64>, out: &mut DMatrix<C64>) {
        if self.kappa == 0.0 {
            return;
        }
        let dim = rho.nrows();
        for j in 0..dim {
            for i in 0..dim {
                out[(i, j)] += self.element(rho, i, j);
            }
        }
    }

    pub(crate) fn accumulate_entries(&self, rho: &DMatrix<C64>, out: &mut DMatrix<C64>, entries: &[(usize, usize)]) {
        for &(i, j) in entries {
            out[(i, j)] = self.element(rho, i, j);
        }
    }
}

/// `out = base + h * k`.
fn combine(out: &mut DMatrix<C64>, base: &DMatrix<C64>, h: f64, k: &DMatrix<C64>) {
    for ((o, b), k) in out.iter_mut().zip(base.iter()).zip(k.iter()) {
        *o = b + k * h;
    }
}

/// Classic RK4 with preallocated stage buffers.
pub(crate) struct Rk4Workspace {
    k1: DMatrix<C64>,
    k2: DMatrix<C64>,
    k3: DMatrix<C64>,
    k4: DMatrix<C64>,
    tmp: DMatrix<C64>,
}

impl Rk4Workspace {
    pub(crate) fn new(dim: usize) -> Self {
        let z = || DMatrix::zeros(dim, dim);
        Rk4Workspace { k1: z(), k2: z(), k3: z(), k4: z(), tmp: z() }
    }

    pub(crate) fn step<F>(&mut self, rho: &mut DMatrix<C64>, h: f64, mut rhs: F)
    where
        F: FnMut(&DMatrix<C64>, &mut DMatrix<C64>),
    {
        rhs(rho, &mut self.k1);
        combine(&mut self.tmp, rho, h / 2.0, &self.k1);
        rhs(&self.tmp, &mut self.k2);
        combine(&mut self.tmp, rho, h / 2.0, &self.k2);
        rhs(&self.tmp, &mut self.k3);
        combine(&mut self.tmp, rho, h, &self.k3);
        rhs(&self.tmp, &mut self.k4);
        for ((((r, a), b), c), d) in rho.iter_mut().zip(self.k1.iter()).zip(self.k2.iter()).zip(self.k3.iter()).zip(self.k4.iter()) {
            *r += (a + b * 2.0 + c * 2.0 + d) * (h / 6.0);
        }
    }

    /// RK4 step restricted to `entries`; entries outside are left untouched.
    pub(crate) fn step_entries<F>(&mut self, rho: &mut DMatrix<C64>, h: f64, entries: &[(usize, usize)], mut rhs: F)
    where
        F: FnMut(&DMatrix<C64>, &mut DMatrix<C64>),
    {
        let h = C64::new(h, 0.0);
        rhs(rho, &mut self.k1);
        self.tmp.copy_from(rho);
        for &(i, j) in entries {
            self.tmp[(i, j)] = rho[(i, j)] + self.k1[(i, j)] * h * 0.5;
        }
        rhs(&self.tmp, &mut self.k2);
        for &(i, j) in entries {
            self.tmp[(i, j)] = rho[(i, j)] + self.k2[(i, j)] * h * 0.5;
        }
        rhs(&self.tmp, &mut self.k3);
        for &(i, j) in entries {
            self.tmp[(i, j)] = rho[(i, j)] + self.k3[(i, j)] * h;
        }
        rhs(&self.tmp, &mut self.k4);
        for &(i, j) in entries {
            rho[(i, j)] += (self.k1[(i, j)] + self.k2[(i, j)] * 2.0 + self.k3[(i, j)] * 2.0 + self.k4[(i, j)]) * h / 6.0;
        }
    }
}

/// Step that keeps `dt * (|H| + rates)` at [`DEFAULT_STEP_PRODUCT`].
pub fn default_dt(space: &FockSpace, drive: Option<&DriveParams>, noise: &NoiseModel) -> f64 {
    let bound = Liouvillian::new(space, drive, noise).rate_bound();
    if bound > 0.0 {
        DEFAULT_STEP_PRODUCT / bound
    } else {
        f64::INFINITY
    }
}

pub(crate) fn hermitize(rho: &mut DMatrix<C64>) {
    let dim = rho.nrows();
    for j in 0..dim {
        for i in 0..j {
            let avg = (rho[(i, j)] + rho[(j, i)].conj()) * 0.5;
            rho[(i, j)] = avg;
            rho[(j, i)] = avg.conj();
        }
        rho[(j, j)] = C64::new(rho[(j, j)].re, 0.0);
    }
}

pub(crate) fn warn_on_truncation(state: &JointState) {
    let top = state.top_level_population();
    if top > TRUNCATION_TAIL_LIMIT {
        log::warn!(
            "population {top:.2e} in the top Fock level n_max = {}; increase the cutoff",
            state.space().n_max()
        );
    }
}

pub(crate) fn validate_inputs(drive: Option<&DriveParams>, noise: &NoiseModel, duration: f64) -> Result<()> {
    if let Some(d) = drive {
        d.validate()?;
    }
    noise.validate()?;
    if !(duration >= 0.0) || !duration.is_finite() {
        return Err(Error::Domain(format!("duration must be >= 0, got {duration}")));
    }
    Ok(())
}

/// Integrate the master equation for `duration` seconds with fixed-step RK4.
///
/// Only the master-equation part of `noise` (dephasing and heating) is used;
/// shot-to-shot noise is sampled by the trace generators and the sequence
/// executor.
pub fn evolve(
    state: &JointState,
    drive: Option<&DriveParams>,
    noise: &NoiseModel,
    duration: f64,
    dt: f64,
) -> Result<JointState> {
    validate_inputs(drive, noise, duration)?;
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("dt must be positive, got {dt}")));
    }
    let space = *state.space();
    let lv = Liouvillian::new(&space, drive, noise);
    let product = dt * lv.rate_bound();
    if product >= STABILITY_LIMIT {
        return Err(Error::Stability { dt, product });
    }
    if duration == 0.0 {
        return Ok(state.clone());
    }
    let steps = (duration / dt).ceil().max(1.0) as usize;
    let h = duration / steps as f64;
    let mut rho = state.rho().clone();
    let mut ws = Rk4Workspace::new(space.dim());
    for _ in 0..steps {
        ws.step(&mut rho, h, |r, out| lv.apply(r, out));
    }
    hermitize(&mut rho);
    let out = JointState::from_parts(space, rho);
    warn_on_truncation(&out);
    Ok(out)
}
