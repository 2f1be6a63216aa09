//! Truncated joint Hilbert space of the electronic two-level system
//! (S = S1/2(m=+1/2), D = D5/2(m=+5/2)) and one motional mode.
//!
//! Basis ordering is level-major: index `level * (n_max + 1) + n`, with S the
//! first block and D the second.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::C64;

pub const TRACE_TOL: f64 = 1e-9;
pub const HERMITICITY_TOL: f64 = 1e-12;
pub const POSITIVITY_TOL: f64 = 1e-8;

/// Truncation tail above which a thermal state triggers a warning.
pub const TRUNCATION_TAIL_LIMIT: f64 = 1e-3;

/// Default cutoff for experiments that start from a Fock state.
pub const FOCK_DEFAULT_N_MAX: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeLabel {
    Axial,
    RadialY,
    RadialX,
}

impl ModeLabel {
    pub const ALL: [ModeLabel; 3] = [ModeLabel::Axial, ModeLabel::RadialY, ModeLabel::RadialX];

    pub fn as_str(self) -> &'static str {
        match self {
            ModeLabel::Axial => "axial",
            ModeLabel::RadialY => "radial_y",
            ModeLabel::RadialX => "radial_x",
        }
    }
}

impl fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModeLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModeLabel::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Domain(format!("unknown mode `{s}` (expected axial, radial_y or radial_x)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElectronicLevel {
    S,
    /// Shelved (excited) level.
    D,
}

impl ElectronicLevel {
    fn offset(self) -> usize {
        match self {
            ElectronicLevel::S => 0,
            ElectronicLevel::D => 1,
        }
    }
}

/// One motional mode truncated at `n_max` phonons.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FockSpace {
    n_max: usize,
    mode: ModeLabel,
    trap_frequency: f64,
}

impl FockSpace {
    pub fn new(n_max: usize, mode: ModeLabel, trap_frequency: f64) -> Result<Self> {
        if n_max < 1 {
            return Err(Error::Dimension(format!("n_max must be >= 1, got {n_max}")));
        }
        if !(trap_frequency > 0.0) || !trap_frequency.is_finite() {
            return Err(Error::Domain(format!("trap frequency must be positive, got {trap_frequency}")));
        }
        Ok(FockSpace { n_max, mode, trap_frequency })
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn mode(&self) -> ModeLabel {
        self.mode
    }

    /// Angular trap frequency, rad/s.
    pub fn trap_frequency(&self) -> f64 {
        self.trap_frequency
    }

    /// Number of retained Fock levels.
    pub fn levels(&self) -> usize {
        self.n_max + 1
    }

    /// Joint dimension `2 (n_max + 1)`.
    pub fn dim(&self) -> usize {
        2 * self.levels()
    }

    pub fn index(&self, level: ElectronicLevel, n: usize) -> usize {
        level.offset() * self.levels() + n
    }

    /// Inverse of [`FockSpace::index`].
    pub fn split(&self, index: usize) -> (ElectronicLevel, usize) {
        let levels = self.levels();
        if index < levels {
            (ElectronicLevel::S, index)
        } else {
            (ElectronicLevel::D, index - levels)
        }
    }

    pub fn with_n_max(&self, n_max: usize) -> Result<Self> {
        FockSpace::new(n_max, self.mode, self.trap_frequency)
    }
}

/// Default cutoff for a thermal state: `4 nbar + 20`, raised if needed so the
/// renormalised tail stays below [`TRUNCATION_TAIL_LIMIT`].
pub fn default_thermal_n_max(nbar: f64) -> usize {
    let base = (4.0 * nbar + 20.0).ceil() as usize;
    if nbar <= 0.0 {
        return base;
    }
    let r = nbar / (1.0 + nbar);
    // r^(N+1) < limit
    let needed = (TRUNCATION_TAIL_LIMIT.ln() / r.ln()).ceil() as usize;
    base.max(needed)
}

/// Probability mass of a thermal distribution above `n_max`.
pub fn thermal_tail(nbar: f64, n_max: usize) -> f64 {
    if nbar <= 0.0 {
        return 0.0;
    }
    (nbar / (1.0 + nbar)).powi(n_max as i32 + 1)
}

/// Density matrix on [`FockSpace`] with unit trace, Hermitian and positive
/// semidefinite up to the module tolerances.
#[derive(Clone, Debug, PartialEq)]
pub struct JointState {
    rho: DMatrix<C64>,
    space: FockSpace,
}

impl JointState {
    /// Validating constructor.
    pub fn from_density_matrix(space: FockSpace, rho: DMatrix<C64>) -> Result<Self> {
        if rho.nrows() != space.dim() || rho.ncols() != space.dim() {
            return Err(Error::Dimension(format!(
                "density matrix is {}x{}, space requires {}x{}",
                rho.nrows(),
                rho.ncols(),
                space.dim(),
                space.dim()
            )));
        }
        let state = JointState { rho, space };
        state.check_invariants()?;
        Ok(state)
    }

    pub(crate) fn from_parts(space: FockSpace, rho: DMatrix<C64>) -> Self {
        debug_assert_eq!(rho.nrows(), space.dim());
        JointState { rho, space }
    }

    pub fn space(&self) -> &FockSpace {
        &self.space
    }

    pub fn rho(&self) -> &DMatrix<C64> {
        &self.rho
    }

    pub fn into_rho(self) -> DMatrix<C64> {
        self.rho
    }

    pub fn element(&self, a: (ElectronicLevel, usize), b: (ElectronicLevel, usize)) -> C64 {
        self.rho[(self.space.index(a.0, a.1), self.space.index(b.0, b.1))]
    }

    pub fn trace(&self) -> C64 {
        self.rho.trace()
    }

    /// Largest elementwise deviation from Hermiticity.
    pub fn hermiticity_error(&self) -> f64 {
        let d = self.space.dim();
        let mut worst = 0.0_f64;
        for j in 0..d {
            for i in 0..=j {
                let e = (self.rho[(i, j)] - self.rho[(j, i)].conj()).norm();
                worst = worst.max(e);
            }
        }
        worst
    }

    pub fn min_eigenvalue(&self) -> f64 {
        // Symmetrise so the Hermitian solver sees an exactly Hermitian input.
        let h = (&self.rho + self.rho.adjoint()) * C64::new(0.5, 0.0);
        h.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn check_invariants(&self) -> Result<()> {
        let tr = self.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::Invariant(format!("trace = {tr} deviates from 1")));
        }
        let herm = self.hermiticity_error();
        if herm > HERMITICITY_TOL {
            return Err(Error::Invariant(format!("hermiticity error {herm:e}")));
        }
        let min_eig = self.min_eigenvalue();
        if min_eig < -POSITIVITY_TOL {
            return Err(Error::Invariant(format!("negative eigenvalue {min_eig:e}")));
        }
        Ok(())
    }

    /// Motional distribution `p_n`, summed over both electronic levels.
    pub fn phonon_distribution(&self) -> Vec<f64> {
        (0..self.space.levels())
            .map(|n| {
                let s = self.space.index(ElectronicLevel::S, n);
                let d = self.space.index(ElectronicLevel::D, n);
                self.rho[(s, s)].re + self.rho[(d, d)].re
            })
            .collect()
    }

    pub fn mean_phonon(&self) -> f64 {
        self.phonon_distribution()
            .iter()
            .enumerate()
            .map(|(n, p)| n as f64 * p)
            .sum()
    }

    /// Shelved-level population `P_D`.
    pub fn excited_population(&self) -> f64 {
        (0..self.space.levels())
            .map(|n| {
                let d = self.space.index(ElectronicLevel::D, n);
                self.rho[(d, d)].re
            })
            .sum()
    }

    /// Population of the highest retained Fock level.
    pub fn top_level_population(&self) -> f64 {
        *self.phonon_distribution().last().unwrap_or(&0.0)
    }

    /// Whether all off-diagonal elements vanish (within `tol`).
    pub fn is_diagonal(&self, tol: f64) -> bool {
        let d = self.space.dim();
        (0..d).all(|j| (0..d).all(|i| i == j || self.rho[(i, j)].norm() <= tol))
    }

    /// Convex combination `weight * self + (1 - weight) * other`.
    pub fn mix(&self, other: &JointState, weight: f64) -> Result<JointState> {
        if self.space != other.space {
            return Err(Error::Dimension("cannot mix states on different spaces".into()));
        }
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::Domain(format!("mixing weight {weight} outside [0, 1]")));
        }
        let rho = &self.rho * C64::new(weight, 0.0) + &other.rho * C64::new(1.0 - weight, 0.0);
        Ok(JointState::from_parts(self.space, rho))
    }

    /// Re-embed the state in a space with a different cutoff. Population above
    /// a smaller cutoff is discarded and the result renormalised.
    pub fn truncated(&self, n_max: usize) -> Result<JointState> {
        let space = self.space.with_n_max(n_max)?;
        let keep = n_max.min(self.space.n_max());
        let mut rho = DMatrix::zeros(space.dim(), space.dim());
        for (la, lb) in level_pairs() {
            for a in 0..=keep {
                for b in 0..=keep {
                    rho[(space.index(la, a), space.index(lb, b))] =
                        self.rho[(self.space.index(la, a), self.space.index(lb, b))];
                }
            }
        }
        let tr = rho.trace().re;
        if tr <= 0.0 {
            return Err(Error::Dimension("truncation removed all population".into()));
        }
        rho /= C64::new(tr, 0.0);
        Ok(JointState::from_parts(space, rho))
    }

    pub fn to_document(&self) -> StateDocument {
        let d = self.space.dim();
        StateDocument {
            n_max: self.space.n_max(),
            mode: self.space.mode(),
            omega_rad_s: self.space.trap_frequency(),
            rho_real: (0..d).map(|i| (0..d).map(|j| self.rho[(i, j)].re).collect()).collect(),
            rho_imag: (0..d).map(|i| (0..d).map(|j| self.rho[(i, j)].im).collect()).collect(),
        }
    }

    pub fn from_document(doc: &StateDocument) -> Result<Self> {
        let space = FockSpace::new(doc.n_max, doc.mode, doc.omega_rad_s)?;
        let d = space.dim();
        let rows_ok = |m: &Vec<Vec<f64>>| m.len() == d && m.iter().all(|r| r.len() == d);
        if !rows_ok(&doc.rho_real) || !rows_ok(&doc.rho_imag) {
            return Err(Error::Dimension(format!("state document matrices must be {d}x{d}")));
        }
        let rho = DMatrix::from_fn(d, d, |i, j| C64::new(doc.rho_real[i][j], doc.rho_imag[i][j]));
        JointState::from_density_matrix(space, rho)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: StateDocument = serde_json::from_str(text)?;
        JointState::from_document(&doc)
    }
}

fn level_pairs() -> [(ElectronicLevel, ElectronicLevel); 4] {
    use ElectronicLevel::{D, S};
    [(S, S), (S, D), (D, S), (D, D)]
}

/// JSON fixture layout of a [`JointState`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateDocument {
    pub n_max: usize,
    pub mode: ModeLabel,
    pub omega_rad_s: f64,
    pub rho_real: Vec<Vec<f64>>,
    pub rho_imag: Vec<Vec<f64>>,
}

/// Pure product state `|level><level| (x) |n><n|`.
pub fn fock_state(space: FockSpace, level: ElectronicLevel, n: usize) -> Result<JointState> {
    if n > space.n_max() {
        return Err(Error::Dimension(format!("Fock level {n} exceeds n_max = {}", space.n_max())));
    }
    let mut rho = DMatrix::zeros(space.dim(), space.dim());
    let i = space.index(level, n);
    rho[(i, i)] = C64::new(1.0, 0.0);
    Ok(JointState::from_parts(space, rho))
}

/// State with the given electronic level and an arbitrary diagonal phonon
/// distribution (renormalised).
pub fn diagonal_state(space: FockSpace, level: ElectronicLevel, populations: &[f64]) -> Result<JointState> {
    if populations.len() > space.levels() {
        return Err(Error::Dimension(format!(
            "{} populations do not fit n_max = {}",
            populations.len(),
            space.n_max()
        )));
    }
    if populations.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::Domain("populations must be nonnegative".into()));
    }
    let total: f64 = populations.iter().sum();
    if total <= 0.0 {
        return Err(Error::Domain("populations sum to zero".into()));
    }
    let mut rho = DMatrix::zeros(space.dim(), space.dim());
    for (n, p) in populations.iter().enumerate() {
        let i = space.index(level, n);
        rho[(i, i)] = C64::new(p / total, 0.0);
    }
    Ok(JointState::from_parts(space, rho))
}

/// Thermal (geometric) phonon distribution `p_n = nbar^n / (1 + nbar)^(n+1)`,
/// renormalised over the truncated space.
pub fn thermal_state(space: FockSpace, level: ElectronicLevel, nbar: f64) -> Result<JointState> {
    if !(nbar >= 0.0) || !nbar.is_finite() {
        return Err(Error::Domain(format!("mean phonon number must be >= 0, got {nbar}")));
    }
    let tail = thermal_tail(nbar, space.n_max());
    if tail >= TRUNCATION_TAIL_LIMIT {
        log::warn!(
            "thermal state with nbar = {nbar} truncated at n_max = {}: tail {tail:.2e} renormalised away",
            space.n_max()
        );
    }
    let populations: Vec<f64> = if nbar == 0.0 {
        let mut p = vec![0.0; space.levels()];
        p[0] = 1.0;
        p
    } else {
        let r = nbar / (1.0 + nbar);
        let p0 = 1.0 / (1.0 + nbar);
        (0..space.levels()).map(|n| p0 * r.powi(n as i32)).collect()
    };
    diagonal_state(space, level, &populations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn space(n_max: usize) -> FockSpace {
        FockSpace::new(n_max, ModeLabel::Axial, 2.0 * std::f64::consts::PI * 4.51e6).unwrap()
    }

    #[test]
    fn space_invariants() {
        assert!(FockSpace::new(0, ModeLabel::Axial, 1.0).is_err());
        assert!(FockSpace::new(3, ModeLabel::Axial, 0.0).is_err());
        let s = space(10);
        assert_eq!(s.dim(), 22);
        for i in 0..s.dim() {
            let (l, n) = s.split(i);
            assert_eq!(s.index(l, n), i);
        }
    }

    #[test]
    fn fock_constructions() {
        let g = fock_state(space(10), ElectronicLevel::S, 0).unwrap();
        assert_eq!(g.mean_phonon(), 0.0);
        assert_eq!(g.excited_population(), 0.0);
        let one = fock_state(space(10), ElectronicLevel::S, 1).unwrap();
        assert_eq!(one.mean_phonon(), 1.0);
        let d3 = fock_state(space(10), ElectronicLevel::D, 3).unwrap();
        assert_eq!(d3.excited_population(), 1.0);
        assert_eq!(d3.phonon_distribution()[3], 1.0);
        assert_eq!(fock_state(space(10), ElectronicLevel::S, 2).unwrap().mean_phonon(), 2.0);
        assert!(matches!(fock_state(space(10), ElectronicLevel::S, 11), Err(Error::Dimension(_))));
        let d1 = fock_state(space(10), ElectronicLevel::D, 1).unwrap();
        let p = d1.phonon_distribution();
        assert_eq!(p[1], 1.0);
        assert_eq!(p.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn thermal_zero_is_ground_state() {
        let t = thermal_state(space(10), ElectronicLevel::S, 0.0).unwrap();
        let g = fock_state(space(10), ElectronicLevel::S, 0).unwrap();
        assert_eq!(t, g);
    }

    #[test]
    fn thermal_mean_matches_direct_summation() {
        // oracle: renormalised geometric series on the same cutoff
        let nbar: f64 = 10.0;
        let r = nbar / (1.0 + nbar);
        let (mut num, mut den) = (0.0, 0.0);
        for n in 0..=120 {
            let p = r.powi(n) / (1.0 + nbar);
            num += n as f64 * p;
            den += p;
        }
        let oracle = num / den;
        let t = thermal_state(space(120), ElectronicLevel::S, nbar).unwrap();
        let wide = thermal_state(space(300), ElectronicLevel::S, nbar).unwrap();
        assert!((t.mean_phonon() - oracle).abs() < 1e-12);
        assert!((wide.mean_phonon() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn thermal_formula_values() {
        let t = thermal_state(space(60), ElectronicLevel::S, 1.0).unwrap();
        let p = t.phonon_distribution();
        assert!((p[0] - 0.5).abs() < 1e-15);
        assert!((p[1] - 0.25).abs() < 1e-15);
        let t = thermal_state(space(60), ElectronicLevel::D, 0.95).unwrap();
        assert!((t.mean_phonon() - 0.95).abs() < 1e-9);
        let t10 = thermal_state(space(72), ElectronicLevel::S, 10.0).unwrap();
        let p = t10.phonon_distribution();
        for n in 0..20 {
            assert!((p[n + 1] / p[n] - 10.0 / 11.0).abs() < 1e-12);
        }
        assert!(matches!(thermal_state(space(10), ElectronicLevel::S, -0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn default_cutoffs_bound_the_tail() {
        for nbar in [0.0, 0.1, 1.0, 1.72, 9.5, 10.0, 20.0] {
            let n_max = default_thermal_n_max(nbar);
            assert!(n_max as f64 >= 4.0 * nbar + 20.0);
            assert!(thermal_tail(nbar, n_max) < TRUNCATION_TAIL_LIMIT);
        }
    }

    #[test]
    fn equal_mixture_mean() {
        let a = fock_state(space(5), ElectronicLevel::S, 0).unwrap();
        let b = fock_state(space(5), ElectronicLevel::S, 1).unwrap();
        assert_eq!(a.mix(&b, 0.5).unwrap().mean_phonon(), 0.5);
    }

    #[test]
    fn thermal_converges_to_ground_state() {
        let g = fock_state(space(20), ElectronicLevel::S, 0).unwrap();
        let mut last = f64::INFINITY;
        for nbar in [1e-1, 1e-2, 1e-3, 1e-4] {
            let t = thermal_state(space(20), ElectronicLevel::S, nbar).unwrap();
            // diagonal states: trace distance = half the l1 distance
            let dist: f64 = 0.5
                * t.phonon_distribution()
                    .iter()
                    .zip(g.phonon_distribution())
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>();
            assert!(dist < last);
            last = dist;
        }
        assert!(last < 2e-4);
    }

    #[test]
    fn validating_constructor_rejects_bad_matrices() {
        let s = space(2);
        let mut rho = DMatrix::zeros(6, 6);
        rho[(0, 0)] = C64::new(0.5, 0.0);
        assert!(JointState::from_density_matrix(s, rho.clone()).is_err());
        rho[(1, 1)] = C64::new(0.5, 0.0);
        assert!(JointState::from_density_matrix(s, rho.clone()).is_ok());
        rho[(0, 1)] = C64::new(0.0, 0.1);
        assert!(JointState::from_density_matrix(s, rho.clone()).is_err());
        rho[(1, 0)] = C64::new(0.0, -0.1);
        assert!(JointState::from_density_matrix(s, rho.clone()).is_ok());
        rho[(0, 1)] = C64::new(0.6, 0.0);
        rho[(1, 0)] = C64::new(0.6, 0.0);
        assert!(JointState::from_density_matrix(s, rho).is_err());
        assert!(JointState::from_density_matrix(s, DMatrix::zeros(4, 4)).is_err());
    }

    #[test]
    fn json_round_trip() {
        let t = thermal_state(space(6), ElectronicLevel::D, 0.7).unwrap();
        let back = JointState::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(t, back);
        let doc: serde_json::Value = serde_json::from_str(&t.to_json().unwrap()).unwrap();
        for key in ["n_max", "mode", "omega_rad_s", "rho_real", "rho_imag"] {
            assert!(doc.get(key).is_some(), "missing {key}");
        }
        assert_eq!(doc["mode"], "axial");
    }

    #[test]
    fn truncation_renormalises() {
        let t = thermal_state(space(30), ElectronicLevel::S, 0.5).unwrap();
        let small = t.truncated(4).unwrap();
        small.check_invariants().unwrap();
        let grown = small.truncated(8).unwrap();
        assert_eq!(grown.phonon_distribution()[7], 0.0);
    }

    proptest! {
        #[test]
        fn readouts_are_linear_in_mixtures(
            pa in proptest::collection::vec(0.0f64..1.0, 6),
            pb in proptest::collection::vec(0.0f64..1.0, 6),
            w in 0.0f64..1.0,
        ) {
            prop_assume!(pa.iter().sum::<f64>() > 1e-3 && pb.iter().sum::<f64>() > 1e-3);
            let s = space(5);
            let a = diagonal_state(s, ElectronicLevel::S, &pa).unwrap();
            let b = diagonal_state(s, ElectronicLevel::D, &pb).unwrap();
            let m = a.mix(&b, w).unwrap();
            m.check_invariants().unwrap();
            let lhs = m.excited_population();
            let rhs = w * a.excited_population() + (1.0 - w) * b.excited_population();
            prop_assert!((lhs - rhs).abs() < 1e-12);
            let pm = m.phonon_distribution();
            let (qa, qb) = (a.phonon_distribution(), b.phonon_distribution());
            for n in 0..6 {
                prop_assert!((pm[n] - (w * qa[n] + (1.0 - w) * qb[n])).abs() < 1e-12);
            }
            prop_assert!((pm.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn thermal_states_satisfy_invariants(nbar in 0.0f64..15.0) {
            let s = space(default_thermal_n_max(nbar));
            let t = thermal_state(s, ElectronicLevel::S, nbar).unwrap();
            prop_assert!(t.check_invariants().is_ok());
            prop_assert!(t.mean_phonon() >= 0.0);
        }
    }
}
