use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{ElectronicLevel, FockSpace};
use crate::C64;

/// Which motional ladder of the optical transition is addressed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sideband {
    Red,
    Carrier,
    Blue,
}

impl Sideband {
    /// Change in phonon number when the ion is excited S -> D.
    pub fn order(self) -> i64 {
        match self {
            Sideband::Red => -1,
            Sideband::Carrier => 0,
            Sideband::Blue => 1,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Sideband::Red => "rsb",
            Sideband::Carrier => "carrier",
            Sideband::Blue => "bsb",
        }
    }
}

impl fmt::Display for Sideband {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Sideband {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rsb" | "red" => Ok(Sideband::Red),
            "carrier" => Ok(Sideband::Carrier),
            "bsb" | "blue" => Ok(Sideband::Blue),
            other => Err(Error::Domain(format!("unknown sideband `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingRegime {
    /// `Omega0`, `Omega0 eta sqrt(n+1)`, `Omega0 eta sqrt(n)`.
    #[default]
    LambDickeFirstOrder,
    /// Full Debye-Waller and associated-Laguerre matrix elements.
    ExactLaguerre,
}

/// One square laser pulse on the quadrupole transition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveParams {
    /// Carrier Rabi frequency, rad/s.
    pub omega0: f64,
    pub eta: f64,
    pub sideband: Sideband,
    /// Detuning from the selected sideband resonance, rad/s.
    pub detuning: f64,
    pub phase: f64,
    pub regime: CouplingRegime,
}

impl DriveParams {
    pub fn new(omega0: f64, eta: f64, sideband: Sideband) -> Result<Self> {
        let drive = DriveParams {
            omega0,
            eta,
            sideband,
            detuning: 0.0,
            phase: 0.0,
            regime: CouplingRegime::LambDickeFirstOrder,
        };
        drive.validate()?;
        Ok(drive)
    }

    /// Drive whose first blue-sideband Rabi frequency `Omega0 eta` equals
    /// `sideband_rabi`.
    pub fn from_sideband_rabi(sideband_rabi: f64, eta: f64, sideband: Sideband) -> Result<Self> {
        DriveParams::new(sideband_rabi / eta, eta, sideband)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega0 >= 0.0) || !self.omega0.is_finite() {
            return Err(Error::Domain(format!("omega0 must be >= 0, got {}", self.omega0)));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::Domain(format!("Lamb-Dicke parameter must lie in (0, 1), got {}", self.eta)));
        }
        if !self.detuning.is_finite() || !self.phase.is_finite() {
            return Err(Error::Domain("detuning and phase must be finite".into()));
        }
        Ok(())
    }

    pub fn with_detuning(mut self, detuning: f64) -> Self {
        self.detuning = detuning;
        self
    }

    pub fn with_phase(mut self, phase: f64) -> Self {
        self.phase = phase;
        self
    }

    pub fn with_regime(mut self, regime: CouplingRegime) -> Self {
        self.regime = regime;
        self
    }

    pub fn with_sideband(mut self, sideband: Sideband) -> Self {
        self.sideband = sideband;
        self
    }

    /// Copy with the carrier Rabi frequency multiplied by `scale`.
    pub fn scaled(mut self, scale: f64) -> Self {
        self.omega0 *= scale;
        self
    }
}

/// Generalised Laguerre polynomial `L_n^alpha(x)` by the three-term recurrence.
pub fn generalized_laguerre(n: usize, alpha: f64, x: f64) -> f64 {
    let mut prev = 1.0;
    if n == 0 {
        return prev;
    }
    let mut cur = 1.0 + alpha - x;
    for k in 1..n {
        let k = k as f64;
        let next = ((2.0 * k + 1.0 + alpha - x) * cur - (k + alpha) * prev) / (k + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// Signed matrix element `<D, n+m| H |S, n>` scaled to a Rabi frequency.
/// Zero when the target level would be negative.
pub(crate) fn coupling(n: usize, drive: &DriveParams) -> f64 {
    let m = drive.sideband.order();
    let target = n as i64 + m;
    if target < 0 {
        return 0.0;
    }
    let target = target as usize;
    match drive.regime {
        CouplingRegime::LambDickeFirstOrder => match drive.sideband {
            Sideband::Carrier => drive.omega0,
            Sideband::Blue => drive.omega0 * drive.eta * ((n + 1) as f64).sqrt(),
            Sideband::Red => drive.omega0 * drive.eta * (n as f64).sqrt(),
        },
        CouplingRegime::ExactLaguerre => {
            let (lo, hi) = if target < n { (target, n) } else { (n, target) };
            let dm = (hi - lo) as i32;
            let eta2 = drive.eta * drive.eta;
            // sqrt(lo! / hi!) for hi - lo <= 1
            let factorial_ratio: f64 = ((lo + 1)..=hi).map(|k| 1.0 / (k as f64).sqrt()).product();
            drive.omega0
                * (-eta2 / 2.0).exp()
                * drive.eta.powi(dm)
                * factorial_ratio
                * generalized_laguerre(lo, dm as f64, eta2)
        }
    }
}

/// Rabi frequency of the `|S, n> <-> |D, n+m>` transition, rad/s.
pub fn rabi_frequency(n: usize, drive: &DriveParams) -> f64 {
    coupling(n, drive).abs()
}

/// Sparse complex operator stored as (row, column, value) triplets.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseOperator {
    dim: usize,
    entries: Vec<(usize, usize, C64)>,
}

impl SparseOperator {
    pub fn zeros(dim: usize) -> Self {
        SparseOperator { dim, entries: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, usize, C64)] {
        &self.entries
    }

    pub(crate) fn push(&mut self, row: usize, col: usize, value: C64) {
        if value != C64::new(0.0, 0.0) {
            self.entries.push((row, col, value));
        }
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.entries
            .iter()
            .filter(|(r, c, _)| *r == row && *c == col)
            .map(|(_, _, v)| *v)
            .sum()
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<C64> {
        let mut m = nalgebra::DMatrix::zeros(self.dim, self.dim);
        for &(r, c, v) in &self.entries {
            m[(r, c)] += v;
        }
        m
    }

    /// Maximum absolute row sum.
    pub fn inf_norm(&self) -> f64 {
        let mut rows = vec![0.0; self.dim];
        for &(r, _, v) in &self.entries {
            rows[r] += v.norm();
        }
        rows.into_iter().fold(0.0, f64::max)
    }

    pub fn hermiticity_error(&self) -> f64 {
        let m = self.to_dense();
        (&m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Rotating-frame Hamiltonian keeping only the selected ladder:
/// `H = (delta/2)(|D><D| - |S><S|) + sum_n (Omega_{n,n+m}/2)(e^{i phi}|D,n+m><S,n| + h.c.)`.
pub fn build_drive_hamiltonian(space: &FockSpace, drive: &DriveParams) -> SparseOperator {
    let mut h = SparseOperator::zeros(space.dim());
    let half_delta = drive.detuning / 2.0;
    if half_delta != 0.0 {
        for n in 0..space.levels() {
            h.push(space.index(ElectronicLevel::D, n), space.index(ElectronicLevel::D, n), C64::new(half_delta, 0.0));
            h.push(space.index(ElectronicLevel::S, n), space.index(ElectronicLevel::S, n), C64::new(-half_delta, 0.0));
        }
    }
    let phase = C64::from_polar(1.0, drive.phase);
    for n in 0..space.levels() {
        let target = n as i64 + drive.sideband.order();
        if target < 0 || target as usize > space.n_max() {
            continue;
        }
        let half_rabi = coupling(n, drive) / 2.0;
        if half_rabi == 0.0 {
            continue;
        }
        let d = space.index(ElectronicLevel::D, target as usize);
        let s = space.index(ElectronicLevel::S, n);
        h.push(d, s, phase * half_rabi);
        h.push(s, d, phase.conj() * half_rabi);
    }
    h
}
