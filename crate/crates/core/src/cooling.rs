//! Doppler limit and resolved-sideband cooling as a phonon-number rate ladder.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{diagonal_state, ElectronicLevel, JointState};

/// Largest `|lambda| h` accepted for one RK4 sub-step of the ladder.
const LADDER_STEP_PRODUCT: f64 = 0.5;

/// Mean phonon number at the Doppler limit `E = hbar Gamma / 2`:
/// `nbar = Gamma / (2 omega) - 1/2`, clamped at zero.
pub fn doppler_limit(gamma: f64, omega_trap: f64) -> Result<f64> {
    if !(gamma > 0.0) || !(omega_trap > 0.0) {
        return Err(Error::Domain(format!(
            "linewidth and trap frequency must be positive, got {gamma} and {omega_trap}"
        )));
    }
    Ok((gamma / (2.0 * omega_trap) - 0.5).max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoolingParams {
    /// Linewidth of the quench-broadened D level, rad/s.
    pub gamma_eff: f64,
    pub eta: f64,
    /// rad/s
    pub omega_trap: f64,
    /// Carrier Rabi frequency of the cooling drive, rad/s.
    pub omega0: f64,
    /// Lamb-Dicke parameter of the spontaneous-emission recoil.
    pub recoil_eta: f64,
    /// Replaces the computed per-phonon heating rate, 1/s.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_plus: Option<f64>,
    /// Replaces the computed per-phonon cooling rate, 1/s.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_minus: Option<f64>,
}

impl CoolingParams {
    pub fn new(gamma_eff: f64, eta: f64, omega_trap: f64, omega0: f64, recoil_eta: f64) -> Result<Self> {
        let p = CoolingParams { gamma_eff, eta, omega_trap, omega0, recoil_eta, a_plus: None, a_minus: None };
        p.validate()?;
        Ok(p)
    }

    /// Parameters whose drive strength is chosen so that the mean phonon
    /// number decays at `rate` (1/s), i.e. `A- - A+ = rate`.
    pub fn calibrated(gamma_eff: f64, eta: f64, omega_trap: f64, recoil_eta: f64, rate: f64) -> Result<Self> {
        if !(rate > 0.0) {
            return Err(Error::Domain(format!("cooling rate must be positive, got {rate}")));
        }
        let unit = CoolingParams::new(gamma_eff, eta, omega_trap, 1.0, recoil_eta)?;
        let (a_minus, a_plus) = unit.rates();
        if a_minus <= a_plus {
            return Err(Error::NoCooling { a_plus, a_minus });
        }
        CoolingParams::new(gamma_eff, eta, omega_trap, (rate / (a_minus - a_plus)).sqrt(), recoil_eta)
    }

    pub fn with_rates(mut self, a_minus: Option<f64>, a_plus: Option<f64>) -> Result<Self> {
        self.a_minus = a_minus;
        self.a_plus = a_plus;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_eff > 0.0) {
            return Err(Error::Domain(format!("gamma_eff must be positive, got {}", self.gamma_eff)));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::Domain(format!("eta must lie in (0, 1), got {}", self.eta)));
        }
        if !(self.omega_trap > 0.0) {
            return Err(Error::Domain(format!("trap frequency must be positive, got {}", self.omega_trap)));
        }
        if !(self.omega0 >= 0.0) || !self.omega0.is_finite() {
            return Err(Error::Domain(format!("omega0 must be >= 0, got {}", self.omega0)));
        }
        if !(self.recoil_eta >= 0.0) {
            return Err(Error::Domain(format!("recoil_eta must be >= 0, got {}", self.recoil_eta)));
        }
        for (name, v) in [("a_plus", self.a_plus), ("a_minus", self.a_minus)] {
            if v.is_some_and(|v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be >= 0")));
            }
        }
        if self.gamma_eff >= self.omega_trap {
            log::warn!(
                "gamma_eff {:.3e} rad/s is not below the trap frequency {:.3e} rad/s; sidebands are unresolved",
                self.gamma_eff,
                self.omega_trap
            );
        }
        Ok(())
    }

    /// Per-phonon rates `(A-, A+)` in 1/s.
    ///
    /// `A-` is resonant red-sideband scattering through the broadened level,
    /// `A+` collects off-resonant blue-sideband excitation (detuned by
    /// `2 omega`) and carrier excitation (detuned by `omega`) followed by
    /// recoil, all in the weak-drive limit.
    pub fn rates(&self) -> (f64, f64) {
        let g = self.gamma_eff;
        let w = self.omega_trap;
        let o2 = self.omega0 * self.omega0;
        let a_minus = self.eta * self.eta * o2 / g;
        let a_plus = self.eta * self.eta * o2 * g / (g * g + 16.0 * w * w)
            + self.recoil_eta * self.recoil_eta * o2 * g / (g * g + 4.0 * w * w);
        (self.a_minus.unwrap_or(a_minus), self.a_plus.unwrap_or(a_plus))
    }

    /// Net decay rate `A- - A+` of the mean phonon number.
    pub fn net_rate(&self) -> f64 {
        let (m, p) = self.rates();
        m - p
    }
}

/// Detailed-balance fixed point `nbar = A+ / (A- - A+)` of the ladder.
pub fn cooling_limit(params: &CoolingParams) -> Result<f64> {
    params.validate()?;
    let (a_minus, a_plus) = params.rates();
    if a_plus >= a_minus {
        return Err(Error::NoCooling { a_plus, a_minus });
    }
    Ok(a_plus / (a_minus - a_plus))
}

/// `(t, mean_n)` samples of a cooling run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoolingTrajectory {
    pub points: Vec<(f64, f64)>,
}

impl CoolingTrajectory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_ms,mean_n\n");
        for (t, n) in &self.points {
            out.push_str(&format!("{},{n}\n", t * 1e3));
        }
        out
    }

    pub fn to_json(&self, params: &CoolingParams) -> Result<serde_json::Value> {
        let (a_minus, a_plus) = params.rates();
        Ok(serde_json::json!({
            "params": params,
            "a_minus": a_minus,
            "a_plus": a_plus,
            "data": self.points,
        }))
    }
}

/// `dp/dt` of the ladder; no upward flow out of the top level.
fn ladder_rhs(p: &[f64], a_minus: f64, a_plus: f64, out: &mut [f64]) {
    let top = p.len() - 1;
    for n in 0..=top {
        let nf = n as f64;
        let mut d = -a_minus * nf * p[n];
        if n < top {
            d += a_minus * (nf + 1.0) * p[n + 1] - a_plus * (nf + 1.0) * p[n];
        }
        if n > 0 {
            d += a_plus * nf * p[n - 1];
        }
        out[n] = d;
    }
}

/// Integrates the ladder in place for `duration`.
fn ladder_advance(p: &mut [f64], a_minus: f64, a_plus: f64, duration: f64) {
    if duration <= 0.0 {
        return;
    }
    let bound = (a_minus + a_plus) * (2 * p.len()) as f64;
    let steps = ((duration * bound / LADDER_STEP_PRODUCT).ceil() as usize).max(1);
    let h = duration / steps as f64;
    let len = p.len();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len]);
    for _ in 0..steps {
        ladder_rhs(p, a_minus, a_plus, &mut k1);
        for i in 0..len {
            tmp[i] = p[i] + 0.5 * h * k1[i];
        }
        ladder_rhs(&tmp, a_minus, a_plus, &mut k2);
        for i in 0..len {
            tmp[i] = p[i] + 0.5 * h * k2[i];
        }
        ladder_rhs(&tmp, a_minus, a_plus, &mut k3);
        for i in 0..len {
            tmp[i] = p[i] + h * k3[i];
        }
        ladder_rhs(&tmp, a_minus, a_plus, &mut k4);
        for i in 0..len {
            p[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    for v in p.iter_mut() {
        if *v < 0.0 && *v > -1e-12 {
            *v = 0.0;
        }
    }
}

fn mean(p: &[f64]) -> f64 {
    p.iter().enumerate().map(|(n, v)| n as f64 * v).sum()
}

/// Resolved-sideband cooling of a Fock-diagonal state. The electronic
/// population ends in S; the trajectory holds `mean_n` at every multiple of
/// `dt` and at `duration`.
pub fn sideband_cool(
    initial: &JointState,
    params: &CoolingParams,
    duration: f64,
    dt: f64,
) -> Result<(JointState, CoolingTrajectory)> {
    params.validate()?;
    if !(duration >= 0.0) {
        return Err(Error::Domain(format!("cooling duration must be >= 0, got {duration}")));
    }
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("cooling step must be positive, got {dt}")));
    }
    if !initial.is_diagonal(1e-12) {
        return Err(Error::Model(
            "sideband cooling is a rate model on phonon populations; the initial state must be diagonal in the Fock \
             basis (use the master-equation evolution for coherent states)"
                .into(),
        ));
    }
    let (a_minus, a_plus) = params.rates();
    let mut p = initial.phonon_distribution();
    let mut points = vec![(0.0, mean(&p))];
    let steps = (duration / dt).floor() as usize;
    let mut t = 0.0;
    for k in 1..=steps {
        let next = k as f64 * dt;
        ladder_advance(&mut p, a_minus, a_plus, next - t);
        t = next;
        points.push((t, mean(&p)));
    }
    if duration - t > 1e-12 * duration.max(1.0) {
        ladder_advance(&mut p, a_minus, a_plus, duration - t);
        points.push((duration, mean(&p)));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 || p.iter().any(|v| *v < -1e-12) {
        return Err(Error::Invariant(format!("cooling ladder lost normalisation (sum {total})")));
    }
    let p: Vec<f64> = p.iter().map(|v| v.max(0.0)).collect();
    let state = diagonal_state(*initial.space(), ElectronicLevel::S, &p)?;
    Ok((state, CoolingTrajectory { points }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{fock_state, thermal_state, FockSpace, ModeLabel};
    use crate::physics::{ca40_lamb_dicke, DOPPLER_LINEWIDTH};
    use proptest::prelude::*;
    use std::f64::consts::TAU;

    fn axial(n_max: usize) -> FockSpace {
        FockSpace::new(n_max, ModeLabel::Axial, TAU * 4.51e6).unwrap()
    }

    fn paper_params() -> CoolingParams {
        let w = TAU * 4.51e6;
        let eta = ca40_lamb_dicke(w, 1.0);
        CoolingParams::calibrated(TAU * 100e3, eta, w, eta, 5000.0).unwrap()
    }

    #[test]
    fn doppler_limits() {
        assert!((doppler_limit(DOPPLER_LINEWIDTH, TAU * 1e6).unwrap() - 9.5).abs() < 1e-12);
        let n = doppler_limit(DOPPLER_LINEWIDTH, TAU * 4.51e6).unwrap();
        assert!((n - (20.0 / 9.02 - 0.5)).abs() < 1e-12);
        assert_eq!(doppler_limit(1.0, 1.0).unwrap(), 0.0);
        assert!(doppler_limit(0.0, 1.0).is_err());
        assert!(doppler_limit(1.0, -1.0).is_err());
    }

    #[test]
    fn calibration_hits_requested_rate() {
        let p = paper_params();
        assert!((p.net_rate() - 5000.0).abs() < 1e-6);
        let (m, pl) = p.rates();
        assert!(pl / m < 1e-3);
    }

    #[test]
    fn limit_closed_forms() {
        let base = paper_params();
        let p = base.with_rates(Some(1000.0), Some(1.0)).unwrap();
        assert!((cooling_limit(&p).unwrap() - 1.0 / 999.0).abs() < 1e-15);
        let p = base.with_rates(Some(1000.0), Some(0.0)).unwrap();
        assert_eq!(cooling_limit(&p).unwrap(), 0.0);
        let p = base.with_rates(Some(1000.0), Some(500.0)).unwrap();
        assert!((cooling_limit(&p).unwrap() - 1.0).abs() < 1e-15);
        let p = base.with_rates(Some(1000.0), Some(1000.0)).unwrap();
        assert!(matches!(cooling_limit(&p), Err(Error::NoCooling { .. })));
    }

    #[test]
    fn pure_cooling_reaches_ground_state() {
        let p = paper_params().with_rates(Some(5000.0), Some(0.0)).unwrap();
        let init = thermal_state(axial(30), ElectronicLevel::S, 1.72).unwrap();
        let (fin, _) = sideband_cool(&init, &p, 10e-3, 1e-4).unwrap();
        assert!((fin.phonon_distribution()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mean_follows_closed_form() {
        // d<n>/dt = -(A- - A+) <n> + A+ holds exactly away from the truncation edge
        let p = paper_params().with_rates(Some(5200.0), Some(200.0)).unwrap();
        let init = thermal_state(axial(40), ElectronicLevel::S, 1.72).unwrap();
        let n0 = init.mean_phonon();
        let (_, traj) = sideband_cool(&init, &p, 1e-3, 1e-4).unwrap();
        let ss = 200.0 / 5000.0;
        for (t, n) in traj.points {
            let expect = ss + (n0 - ss) * (-5000.0 * t).exp();
            assert!((n - expect).abs() < 1e-6, "t {t}: {n} vs {expect}");
        }
    }

    #[test]
    fn trajectory_sampling_and_csv() {
        let init = fock_state(axial(5), ElectronicLevel::S, 3).unwrap();
        let (_, traj) = sideband_cool(&init, &paper_params(), 1.05e-3, 0.5e-3).unwrap();
        let ts: Vec<f64> = traj.points.iter().map(|p| p.0).collect();
        assert_eq!(ts.len(), 4);
        assert!((ts[3] - 1.05e-3).abs() < 1e-15);
        assert!(traj.to_csv().starts_with("t_ms,mean_n\n0,3\n"));
        assert!(traj.to_json(&paper_params()).unwrap()["a_minus"].as_f64().unwrap() > 0.0);
    }

    #[test]
    fn converges_to_thermal_fixed_point() {
        let p = paper_params().with_rates(Some(5000.0), Some(1000.0)).unwrap();
        let nbar = cooling_limit(&p).unwrap();
        let init = thermal_state(axial(40), ElectronicLevel::S, 3.0).unwrap();
        let (fin, _) = sideband_cool(&init, &p, 8e-3, 1e-3).unwrap();
        let got = fin.phonon_distribution();
        let r = nbar / (1.0 + nbar);
        let tv: f64 = got.iter().enumerate().map(|(n, v)| (v - (1.0 - r) * r.powi(n as i32)).abs()).sum::<f64>() / 2.0;
        assert!(tv < 1e-4, "total variation {tv}");
    }

    #[test]
    fn rejects_coherent_input() {
        let space = axial(3);
        let a = fock_state(space, ElectronicLevel::S, 0).unwrap();
        let b = fock_state(space, ElectronicLevel::S, 1).unwrap();
        let mut rho = a.mix(&b, 0.5).unwrap().into_rho();
        rho[(0, 1)] = crate::C64::new(0.5, 0.0);
        rho[(1, 0)] = crate::C64::new(0.5, 0.0);
        let sup = JointState::from_density_matrix(space, rho).unwrap();
        assert!(matches!(sideband_cool(&sup, &paper_params(), 1e-3, 1e-4), Err(Error::Model(_))));
    }

    proptest! {
        #[test]
        fn ladder_preserves_probability_and_monotone_mean(
            nbar in 0.1f64..5.0,
            a_minus in 100.0f64..10_000.0,
            frac in 0.0f64..0.9,
            duration in 0.0f64..2e-3,
        ) {
            let p = paper_params().with_rates(Some(a_minus), Some(a_minus * frac)).unwrap();
            let init = thermal_state(axial(40), ElectronicLevel::S, nbar).unwrap();
            let (fin, traj) = sideband_cool(&init, &p, duration, duration / 7.0 + 1e-6).unwrap();
            let dist = fin.phonon_distribution();
            prop_assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(dist.iter().all(|v| *v >= -1e-12));
            let ss = cooling_limit(&p).unwrap();
            for w in traj.points.windows(2) {
                if nbar >= ss {
                    prop_assert!(w[1].1 <= w[0].1 + 1e-9);
                }
            }
        }
    }
}
