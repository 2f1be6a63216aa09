use rand::Rng;
use serde::{Deserialize, Serialize};

use super::drive::{rabi_frequency, DriveParams};
use super::noise::{NoiseModel, ShotNoise};
use crate::error::{Error, Result};
use crate::hilbert::JointState;
use crate::measurement::wilson_interval;
use crate::seeding::shot_rng;

/// `P_D` versus pulse duration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FloppingTrace {
    pub times: Vec<f64>,
    pub p_d: Vec<f64>,
    /// 0 marks exact probabilities.
    pub shots_per_point: u32,
}

/// `P_D` versus detuning from the addressed sideband.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub detunings: Vec<f64>,
    pub p_d: Vec<f64>,
    pub shots_per_point: u32,
}

/// Inputs that produced a trace or spectrum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceProvenance {
    pub drive: DriveParams,
    pub noise: NoiseModel,
    pub seed: u64,
}

fn check_increasing(xs: &[f64], what: &str) -> Result<()> {
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain(format!("{what} must be finite")));
    }
    if xs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain(format!("{what} must be strictly increasing")));
    }
    Ok(())
}

fn check_probabilities(p: &[f64], len: usize) -> Result<()> {
    if p.len() != len {
        return Err(Error::Dimension(format!("{} probabilities for {len} abscissae", p.len())));
    }
    if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Domain("excitation probabilities must lie in [0, 1]".into()));
    }
    Ok(())
}

fn csv_rows(xs: &[f64], p: &[f64], shots: u32) -> String {
    let mut out = String::from("x_value,p_d,shots,ci_low,ci_high\n");
    for (x, p) in xs.iter().zip(p) {
        let (lo, hi) = if shots == 0 {
            (*p, *p)
        } else {
            wilson_interval((p * shots as f64).round() as u64, shots as u64, 1.0)
        };
        out.push_str(&format!("{x:e},{p},{shots},{lo},{hi}\n"));
    }
    out
}

impl FloppingTrace {
    pub fn new(times: Vec<f64>, p_d: Vec<f64>, shots_per_point: u32) -> Result<Self> {
        check_increasing(&times, "flopping times")?;
        check_probabilities(&p_d, times.len())?;
        Ok(FloppingTrace { times, p_d, shots_per_point })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn to_csv(&self) -> String {
        csv_rows(&self.times, &self.p_d, self.shots_per_point)
    }

    pub fn to_json(&self, provenance: &TraceProvenance) -> Result<serde_json::Value> {
        Ok(serde_json::json!({ "provenance": provenance, "data": self }))
    }

    /// Number of strict local maxima.
    pub fn count_maxima(&self) -> usize {
        self.p_d.windows(3).filter(|w| w[1] > w[0] && w[1] >= w[2]).count()
    }
}

impl Spectrum {
    pub fn new(detunings: Vec<f64>, p_d: Vec<f64>, shots_per_point: u32) -> Result<Self> {
        check_increasing(&detunings, "detunings")?;
        check_probabilities(&p_d, detunings.len())?;
        Ok(Spectrum { detunings, p_d, shots_per_point })
    }

    pub fn peak(&self) -> (f64, f64) {
        self.detunings
            .iter()
            .zip(&self.p_d)
            .fold((f64::NAN, f64::NEG_INFINITY), |acc, (&x, &p)| if p > acc.1 { (x, p) } else { acc })
    }

    pub fn to_csv(&self) -> String {
        csv_rows(&self.detunings, &self.p_d, self.shots_per_point)
    }

    pub fn to_json(&self, provenance: &TraceProvenance) -> Result<serde_json::Value> {
        Ok(serde_json::json!({ "provenance": provenance, "data": self }))
    }
}

/// `P_D` for one shot realisation of a pulse starting at `t_start` within the
/// shot.
pub fn shot_excited_population(
    initial: &JointState,
    drive: &DriveParams,
    noise: &NoiseModel,
    shot: &ShotNoise,
    t_start: f64,
    duration: f64,
) -> Result<f64> {
    let realised = drive
        .scaled(shot.rabi_scale.max(0.0))
        .with_detuning(drive.detuning + noise.line_offset(shot, t_start));
    super::excited_population_after(initial, Some(&realised), noise, duration)
}

/// Exact or sampled `P_D` of one scan point.
fn point_value(
    initial: &JointState,
    drive: &DriveParams,
    noise: &NoiseModel,
    duration: f64,
    shots: u32,
    seed: u64,
    point: u64,
) -> Result<f64> {
    if shots == 0 {
        let mut p = 0.0;
        for (w, shot) in noise.ensemble_nodes() {
            p += w * shot_excited_population(initial, drive, noise, &shot, 0.0, duration)?;
        }
        return Ok(p.clamp(0.0, 1.0));
    }
    let fixed = if noise.has_shot_noise() {
        None
    } else {
        let shot = ShotNoise { rabi_scale: 1.0, line_phase: noise.line_phase };
        Some(shot_excited_population(initial, drive, noise, &shot, 0.0, duration)?)
    };
    let mut hits = 0u32;
    for j in 0..shots {
        let mut rng = shot_rng(seed, point, j as u64);
        let p = match fixed {
            Some(p) => p,
            None => {
                let shot = noise.sample_shot(&mut rng);
                shot_excited_population(initial, drive, noise, &shot, 0.0, duration)?
            }
        };
        if rng.random::<f64>() < p {
            hits += 1;
        }
    }
    Ok(hits as f64 / shots as f64)
}

/// Rabi flopping: each duration in `times` evolves a fresh copy of `initial`.
/// With `shots_per_point = 0` the exact ensemble average over shot noise is
/// recorded, otherwise the excited fraction of that many sampled shots.
pub fn flopping_trace(
    initial: &JointState,
    drive: &DriveParams,
    noise: &NoiseModel,
    times: &[f64],
    shots_per_point: u32,
    rng_seed: u64,
) -> Result<FloppingTrace> {
    check_increasing(times, "flopping times")?;
    if times.first().is_some_and(|t| *t < 0.0) {
        return Err(Error::Domain("pulse durations must be >= 0".into()));
    }
    let p_d = times
        .iter()
        .enumerate()
        .map(|(i, &t)| point_value(initial, drive, noise, t, shots_per_point, rng_seed, i as u64))
        .collect::<Result<Vec<_>>>()?;
    FloppingTrace::new(times.to_vec(), p_d, shots_per_point)
}

/// Sideband scan: one pulse of fixed length per detuning of `drive_template`.
pub fn sideband_spectrum(
    initial: &JointState,
    drive_template: &DriveParams,
    detunings: &[f64],
    pulse_duration: f64,
    noise: &NoiseModel,
    shots_per_point: u32,
    rng_seed: u64,
) -> Result<Spectrum> {
    check_increasing(detunings, "detunings")?;
    let p_d = detunings
        .iter()
        .enumerate()
        .map(|(i, &delta)| {
            let drive = drive_template.with_detuning(delta);
            point_value(initial, &drive, noise, pulse_duration, shots_per_point, rng_seed, i as u64)
        })
        .collect::<Result<Vec<_>>>()?;
    Spectrum::new(detunings.to_vec(), p_d, shots_per_point)
}

/// Closed-form flopping of a diagonal phonon distribution:
/// `P_D(t) = sum_n p_n [1 - cos(Omega_n t) exp(-gamma_n t)] / 2` with
/// `gamma_n = gamma0 (n+1)^alpha` and `Omega_n` from [`rabi_frequency`].
pub fn analytic_flopping(
    populations: &[f64],
    drive: &DriveParams,
    gamma0: f64,
    alpha: f64,
    times: &[f64],
) -> Result<FloppingTrace> {
    if populations.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::Domain("populations must be nonnegative".into()));
    }
    let total: f64 = populations.iter().sum();
    if total > 1.0 + 1e-9 {
        return Err(Error::Domain(format!("populations sum to {total} > 1")));
    }
    if !(gamma0 >= 0.0) {
        return Err(Error::Domain(format!("gamma0 must be >= 0, got {gamma0}")));
    }
    check_increasing(times, "flopping times")?;
    let terms: Vec<(f64, f64, f64)> = populations
        .iter()
        .enumerate()
        .map(|(n, &p)| (p, rabi_frequency(n, drive), gamma0 * ((n + 1) as f64).powf(alpha)))
        .collect();
    let p_d = times
        .iter()
        .map(|&t| {
            terms
                .iter()
                .map(|&(p, w, g)| p * (1.0 - (w * t).cos() * (-g * t).exp()) / 2.0)
                .sum::<f64>()
                .clamp(0.0, 1.0)
        })
        .collect();
    FloppingTrace::new(times.to_vec(), p_d, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{evolve, evolve_with, Method, Sideband};
    use crate::hilbert::{fock_state, thermal_state, ElectronicLevel, FockSpace, ModeLabel};
    use std::f64::consts::{PI, TAU};

    fn space(n_max: usize) -> FockSpace {
        FockSpace::new(n_max, ModeLabel::Axial, TAU * 4.51e6).unwrap()
    }

    fn blue() -> DriveParams {
        DriveParams::from_sideband_rabi(TAU * 21e3, 0.05, Sideband::Blue).unwrap()
    }

    fn grid(points: usize, span: f64) -> Vec<f64> {
        (0..points).map(|i| span * i as f64 / (points - 1) as f64).collect()
    }

    #[test]
    fn analytic_single_term_is_sin_squared() {
        let d = blue();
        let w = rabi_frequency(0, &d);
        let ts = grid(50, 200e-6);
        let tr = analytic_flopping(&[1.0], &d, 0.0, 0.7, &ts).unwrap();
        for (t, p) in ts.iter().zip(&tr.p_d) {
            assert!((p - (w * t / 2.0).sin().powi(2)).abs() < 1e-14);
        }
    }

    #[test]
    fn analytic_envelope_halves_after_twenty_periods() {
        let d = blue();
        let w = rabi_frequency(0, &d);
        let tau = 20.0 * TAU / w;
        let gamma0 = 2f64.ln() / tau;
        // at a whole number of periods the cosine is 1, so P_D = (1 - envelope)/2 per term
        let tr = analytic_flopping(&[1.0], &d, gamma0, 0.7, &[0.0, tau]).unwrap();
        assert!((1.0 - 2.0 * tr.p_d[1] - 0.5).abs() < 1e-6);
        let tr = analytic_flopping(&[0.89, 0.09, 0.02], &d, gamma0, 0.7, &[tau]).unwrap();
        assert!(tr.p_d[0] > 0.0 && tr.p_d[0] < 1.0);
        assert!(analytic_flopping(&[0.9, 0.2], &d, 0.0, 0.7, &[0.0]).is_err());
        assert!(analytic_flopping(&[-0.1], &d, 0.0, 0.7, &[0.0]).is_err());
    }

    #[test]
    fn dominant_component_of_fock_one_mixture() {
        let d = blue();
        let ts = grid(400, 1.4e-3);
        let tr = analytic_flopping(&[0.03, 0.87, 0.08, 0.02], &d, 0.0, 0.7, &ts).unwrap();
        // direct DFT magnitude at each candidate frequency
        let mean = tr.p_d.iter().sum::<f64>() / tr.len() as f64;
        let power = |w: f64| {
            let (c, s) = ts.iter().zip(&tr.p_d).fold((0.0, 0.0), |(c, s), (t, p)| {
                (c + (p - mean) * (w * t).cos(), s + (p - mean) * (w * t).sin())
            });
            c * c + s * s
        };
        let powers: Vec<f64> = (0..4).map(|n| power(rabi_frequency(n, &d))).collect();
        let best = (0..4).max_by(|a, b| powers[*a].total_cmp(&powers[*b])).unwrap();
        assert_eq!(best, 1);
    }

    #[test]
    fn ground_state_trace_counts_oscillations() {
        let g = fock_state(space(6), ElectronicLevel::S, 0).unwrap();
        let tr = flopping_trace(&g, &blue(), &NoiseModel::noiseless(), &grid(2801, 1.4e-3), 0, 0).unwrap();
        assert!(tr.count_maxima() >= 29);
        assert_eq!(tr.p_d[0], 0.0);
    }

    #[test]
    fn noise_free_evolution_matches_analytic() {
        let d = blue();
        let ts = grid(60, 300e-6);
        for n in 0..4 {
            let f = fock_state(space(10), ElectronicLevel::S, n).unwrap();
            let mut p = vec![0.0; n + 1];
            p[n] = 1.0;
            let oracle = analytic_flopping(&p, &d, 0.0, 0.7, &ts).unwrap();
            let tr = flopping_trace(&f, &d, &NoiseModel::noiseless(), &ts, 0, 0).unwrap();
            for (a, b) in tr.p_d.iter().zip(&oracle.p_d) {
                assert!((a - b).abs() < 1e-6);
            }
            let t = ts[37];
            let rk = evolve_with(&f, Some(&d), &NoiseModel::noiseless(), t, Method::Rk4 { dt: None }).unwrap();
            assert!((rk.excited_population() - oracle.p_d[37]).abs() < 1e-6);
        }
    }

    #[test]
    fn dephasing_matches_bloch_solution() {
        // resonant two-level Bloch equations with coherence decay g:
        // P_D = [1 - e^{-g t/2} (cos mu t + g/(2 mu) sin mu t)] / 2, mu^2 = W^2 - g^2/4
        let d = blue();
        let g = 1456.0;
        let noise = NoiseModel { dephasing_rate: g, ..NoiseModel::noiseless() };
        let ts = grid(40, 1.0e-3);
        for n in [0usize, 2] {
            let f = fock_state(space(8), ElectronicLevel::S, n).unwrap();
            let w = rabi_frequency(n, &d);
            let mu = (w * w - g * g / 4.0).sqrt();
            let tr = flopping_trace(&f, &d, &noise, &ts, 0, 0).unwrap();
            let mut p = vec![0.0; n + 1];
            p[n] = 1.0;
            let envelope = analytic_flopping(&p, &d, g / 2.0, 0.0, &ts).unwrap();
            for ((t, got), env) in ts.iter().zip(&tr.p_d).zip(&envelope.p_d) {
                let bloch = 0.5 * (1.0 - (-g * t / 2.0).exp() * ((mu * t).cos() + g / (2.0 * mu) * (mu * t).sin()));
                assert!((got - bloch).abs() < 1e-6, "t={t}: {got} vs {bloch}");
                // the exponential model differs only by the small quadrature term
                assert!((got - env).abs() < g / w);
            }
        }
    }

    #[test]
    fn rk4_step_halving_converges() {
        let d = blue();
        let noise = NoiseModel { dephasing_rate: 500.0, heating_rate: 50.0, ..NoiseModel::noiseless() };
        let s = thermal_state(space(12), ElectronicLevel::S, 0.3).unwrap();
        let t = 60e-6;
        let dt = crate::dynamics::default_dt(s.space(), Some(&d), &noise);
        let p = |h: f64| evolve(&s, Some(&d), &noise, t, h).unwrap().excited_population();
        let (a, b, c) = (p(dt), p(dt / 2.0), p(dt / 4.0));
        // fourth order: halving the step shrinks the error sixteenfold
        assert!((b - c).abs() <= (a - b).abs() / 8.0 + 1e-13, "{a} {b} {c}");
    }

    #[test]
    fn sampled_trace_is_reproducible_and_binomial() {
        let g = fock_state(space(6), ElectronicLevel::S, 0).unwrap();
        let d = blue();
        let ts = grid(12, 100e-6);
        let noise = NoiseModel { intensity_jitter_rel: 0.03, ..NoiseModel::noiseless() };
        let a = flopping_trace(&g, &d, &noise, &ts, 200, 7).unwrap();
        let b = flopping_trace(&g, &d, &noise, &ts, 200, 7).unwrap();
        let c = flopping_trace(&g, &d, &noise, &ts, 200, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let exact = flopping_trace(&g, &d, &noise, &ts, 0, 0).unwrap();
        for (s, e) in a.p_d.iter().zip(&exact.p_d) {
            assert!((s * 200.0).fract() == 0.0);
            let sigma = (e * (1.0 - e) / 200.0).sqrt();
            assert!((s - e).abs() <= 5.0 * sigma + 1e-12, "{s} vs {e}");
        }
    }

    #[test]
    fn red_sideband_scans() {
        let red = blue().with_sideband(Sideband::Red);
        let tau = PI / rabi_frequency(0, &blue());
        let dets = grid(21, 2.0 * TAU * 21e3).iter().map(|x| x - TAU * 21e3).collect::<Vec<_>>();
        let g = fock_state(space(6), ElectronicLevel::S, 0).unwrap();
        let s = sideband_spectrum(&g, &red, &dets, tau, &NoiseModel::noiseless(), 0, 0).unwrap();
        assert!(s.p_d.iter().all(|p| *p <= 1e-3));
        let hot = thermal_state(space(150), ElectronicLevel::S, 10.0).unwrap();
        let s = sideband_spectrum(&hot, &red, &dets, tau, &NoiseModel::noiseless(), 0, 0).unwrap();
        assert!(s.peak().1 > 0.0);
    }

    #[test]
    fn thermal_peak_ratio() {
        // oracle: per-n two-level sin^2 summed over the geometric distribution
        let d = blue();
        let tau = PI / rabi_frequency(0, &d);
        for nbar in [0.3, 2.0, 7.0] {
            let n_max = crate::hilbert::default_thermal_n_max(nbar);
            let st = thermal_state(space(n_max), ElectronicLevel::S, nbar).unwrap();
            let p = st.phonon_distribution();
            let two_level = |n: usize| (rabi_frequency(n, &d) * tau / 2.0).sin().powi(2);
            let blue_oracle: f64 = (0..n_max).map(|n| p[n] * two_level(n)).sum();
            let red_oracle: f64 = (1..=n_max).map(|n| p[n] * two_level(n - 1)).sum();
            let peak = |sb| {
                sideband_spectrum(&st, &d.with_sideband(sb), &[0.0], tau, &NoiseModel::noiseless(), 0, 0).unwrap().p_d[0]
            };
            let (r, b) = (peak(Sideband::Red), peak(Sideband::Blue));
            assert!((r - red_oracle).abs() < 1e-9 && (b - blue_oracle).abs() < 1e-9);
            assert!((r / b / (nbar / (1.0 + nbar)) - 1.0).abs() < 0.03);
        }
    }

    #[test]
    fn csv_and_validation() {
        let tr = FloppingTrace::new(vec![0.0, 1e-6], vec![0.0, 0.5], 100).unwrap();
        let csv = tr.to_csv();
        assert!(csv.starts_with("x_value,p_d,shots,ci_low,ci_high\n"));
        assert_eq!(csv.lines().count(), 3);
        assert!(FloppingTrace::new(vec![1.0, 0.5], vec![0.0, 0.0], 0).is_err());
        assert!(FloppingTrace::new(vec![0.0], vec![1.5], 0).is_err());
    }
}
