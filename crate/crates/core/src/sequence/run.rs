use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::compile::{Operation, TimedOperation, Timeline};
use crate::config::ExperimentConfig;
use crate::cooling::sideband_cool;
use crate::dynamics::{evolve_with, NoiseModel, ShotNoise};
use crate::error::{Error, Result};
use crate::hilbert::{fock_state, thermal_state, ElectronicLevel, FockSpace, JointState};
use crate::measurement::{sample_detection_with, wilson_interval, DetectionParams, Z_68};
use crate::seeding::shot_rng;
use crate::C64;

/// Outcome of one shot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub classified_shelved: bool,
    /// Photon count, absent when the sequence has no detect step (the
    /// electronic state is then read out projectively).
    pub count: Option<u64>,
    /// Exact `P_D` of this shot just before detection.
    pub p_d: f64,
    pub mean_phonon: f64,
}

/// Shelved fraction over repeated shots with its Wilson 68 % interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcitationEstimate {
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub shelved: u64,
    pub repetitions: u64,
    /// Mean of the exact pre-detection `P_D` over the shots.
    pub mean_p_d: f64,
}

/// Kraus operators emptying D into S: with probability `fidelity`, where a
/// transferred ion gains a phonon with probability `recoil`.
fn quench_kraus(space: &FockSpace, fidelity: f64, recoil: f64) -> Vec<DMatrix<C64>> {
    let dim = space.dim();
    let top = space.n_max();
    let s = |n| space.index(ElectronicLevel::S, n);
    let d = |n| space.index(ElectronicLevel::D, n);
    let mut keep = DMatrix::zeros(dim, dim);
    let mut same = DMatrix::zeros(dim, dim);
    let mut kick = DMatrix::zeros(dim, dim);
    let mut edge = DMatrix::zeros(dim, dim);
    let c = |x: f64| C64::new(x.sqrt(), 0.0);
    for n in 0..=top {
        keep[(s(n), s(n))] = C64::new(1.0, 0.0);
        keep[(d(n), d(n))] = c(1.0 - fidelity);
        same[(s(n), d(n))] = c(fidelity * (1.0 - recoil));
        if n < top {
            kick[(s(n + 1), d(n))] = c(fidelity * recoil);
        }
    }
    // the top level cannot be kicked further
    edge[(s(top), d(top))] = c(fidelity * recoil);
    vec![keep, same, kick, edge]
}

fn apply_kraus(state: &JointState, kraus: &[DMatrix<C64>]) -> JointState {
    let rho = state.rho();
    let mut out = DMatrix::zeros(rho.nrows(), rho.ncols());
    for k in kraus {
        if k.iter().all(|v| *v == C64::new(0.0, 0.0)) {
            continue;
        }
        out += k * rho * k.adjoint();
    }
    JointState::from_parts(*state.space(), out)
}

struct Executor<'a> {
    config: &'a ExperimentConfig,
    noise: &'a NoiseModel,
    space: FockSpace,
    doppler_nbar: f64,
}

impl<'a> Executor<'a> {
    fn new(timeline: &Timeline, config: &'a ExperimentConfig, noise: &'a NoiseModel) -> Result<Self> {
        noise.validate()?;
        let doppler_nbar = config.doppler_nbar()?;
        let cools = timeline.operations.iter().any(|o| o.op == Operation::DopplerCool);
        let quenches = timeline.operations.iter().filter(|o| o.op == Operation::Quench).count();
        let budget = if cools { doppler_nbar } else { 0.0 }
            + noise.heating_rate * timeline.exposed_duration()
            + quenches as f64;
        let space = config.space_for(budget)?;
        Ok(Executor { config, noise, space, doppler_nbar })
    }

    fn initial(&self) -> Result<JointState> {
        fock_state(self.space, ElectronicLevel::S, 0)
    }

    fn nominal_shot(&self) -> ShotNoise {
        ShotNoise { rabi_scale: 1.0, line_phase: self.noise.line_phase }
    }

    /// Whether the operation's effect varies from shot to shot.
    fn noise_dependent(&self, op: &TimedOperation) -> bool {
        matches!(op.op, Operation::Pulse { .. }) && self.noise.has_shot_noise()
    }

    fn apply(&self, state: JointState, op: &TimedOperation, shot: &ShotNoise) -> Result<JointState> {
        let method = self.config.method();
        match op.op {
            Operation::DopplerCool => thermal_state(self.space, ElectronicLevel::S, self.doppler_nbar),
            Operation::Pump => Ok(apply_kraus(&state, &quench_kraus(&self.space, 1.0, 0.0))),
            Operation::SidebandCool => {
                let params = self.config.cooling_params(self.space.mode())?;
                let (cooled, _) = sideband_cool(&state, &params, op.duration, op.duration.max(f64::MIN_POSITIVE))?;
                Ok(cooled)
            }
            Operation::Pulse { drive } => {
                let realised = drive
                    .scaled(shot.rabi_scale.max(0.0))
                    .with_detuning(drive.detuning + self.noise.line_offset(shot, op.start));
                evolve_with(&state, Some(&realised), self.noise, op.duration, method)
            }
            Operation::Quench => {
                let recoil = self.config.recoil_branch(self.space.mode());
                Ok(apply_kraus(&state, &quench_kraus(&self.space, self.config.quench_fidelity, recoil)))
            }
            Operation::Wait => evolve_with(&state, None, self.noise, op.duration, method),
            Operation::Detect => Ok(state),
        }
    }

    fn apply_all(&self, mut state: JointState, ops: &[TimedOperation], shot: &ShotNoise) -> Result<JointState> {
        for op in ops {
            state = self.apply(state, op, shot)?;
        }
        Ok(state)
    }

    /// State after the longest prefix that does not depend on shot noise,
    /// and the index where the rest starts.
    fn prefix(&self, timeline: &Timeline) -> Result<(JointState, usize)> {
        let split = timeline
            .operations
            .iter()
            .position(|o| self.noise_dependent(o))
            .unwrap_or(timeline.operations.len());
        let state = self.apply_all(self.initial()?, &timeline.operations[..split], &self.nominal_shot())?;
        Ok((state, split))
    }

    fn detection(&self, timeline: &Timeline) -> Result<Option<DetectionParams>> {
        timeline
            .operations
            .iter()
            .find(|o| o.op == Operation::Detect)
            .map(|o| self.config.detection_params(Some(o.duration)))
            .transpose()
    }
}

/// Readouts of a checked pre-detection state: `(P_D, mean phonon number)`.
fn readouts(state: &JointState) -> Result<(f64, f64)> {
    state.check_invariants()?;
    Ok((state.excited_population().clamp(0.0, 1.0), state.mean_phonon()))
}

fn record<R: Rng + ?Sized>(
    (p_d, mean_phonon): (f64, f64),
    detection: Option<&DetectionParams>,
    rng: &mut R,
) -> Result<ExperimentRecord> {
    let (classified_shelved, count) = match detection {
        Some(params) => {
            let o = sample_detection_with(p_d, params, rng)?;
            (o.classified_shelved, Some(o.count))
        }
        None => (rng.random::<f64>() < p_d, None),
    };
    Ok(ExperimentRecord { classified_shelved, count, p_d, mean_phonon })
}

/// Repeats the timeline `repetitions` times. Shot `j` draws its noise and its
/// detection outcome from the generator of sub-seed `(rng_seed, 0, j)`.
pub fn estimate_excitation(
    timeline: &Timeline,
    config: &ExperimentConfig,
    noise: &NoiseModel,
    repetitions: u32,
    rng_seed: u64,
) -> Result<ExcitationEstimate> {
    if repetitions == 0 {
        return Err(Error::Domain("repetitions must be >= 1".into()));
    }
    let records = run_shots(timeline, config, noise, 0..repetitions as u64, rng_seed)?;
    let shelved = records.iter().filter(|r| r.classified_shelved).count() as u64;
    let n = records.len() as u64;
    let (ci_low, ci_high) = wilson_interval(shelved, n, Z_68);
    Ok(ExcitationEstimate {
        p_hat: shelved as f64 / n as f64,
        ci_low,
        ci_high,
        shelved,
        repetitions: n,
        mean_p_d: records.iter().map(|r| r.p_d).sum::<f64>() / n as f64,
    })
}

/// Records of the given shot indices.
pub fn run_shots(
    timeline: &Timeline,
    config: &ExperimentConfig,
    noise: &NoiseModel,
    shots: impl IntoIterator<Item = u64>,
    rng_seed: u64,
) -> Result<Vec<ExperimentRecord>> {
    let exec = Executor::new(timeline, config, noise)?;
    let detection = exec.detection(timeline)?;
    let (prefix, split) = exec.prefix(timeline)?;
    let rest = &timeline.operations[split..];
    let fixed = if noise.has_shot_noise() {
        None
    } else {
        Some(readouts(&exec.apply_all(prefix.clone(), rest, &exec.nominal_shot())?)?)
    };
    shots
        .into_iter()
        .map(|j| {
            let mut rng = shot_rng(rng_seed, 0, j);
            match &fixed {
                Some(values) => record(*values, detection.as_ref(), &mut rng),
                None => {
                    let shot = noise.sample_shot(&mut rng);
                    let state = exec.apply_all(prefix.clone(), rest, &shot)?;
                    record(readouts(&state)?, detection.as_ref(), &mut rng)
                }
            }
        })
        .collect()
}

/// One shot (index 0) of the timeline.
pub fn run(timeline: &Timeline, config: &ExperimentConfig, noise: &NoiseModel, rng_seed: u64) -> Result<ExperimentRecord> {
    Ok(run_shots(timeline, config, noise, [0], rng_seed)?.remove(0))
}

/// Pre-detection state averaged over the shot-noise ensemble.
pub fn final_state(timeline: &Timeline, config: &ExperimentConfig, noise: &NoiseModel) -> Result<JointState> {
    let exec = Executor::new(timeline, config, noise)?;
    let (prefix, split) = exec.prefix(timeline)?;
    let rest = &timeline.operations[split..];
    if rest.is_empty() {
        return Ok(prefix);
    }
    let mut rho = DMatrix::zeros(exec.space.dim(), exec.space.dim());
    for (w, shot) in noise.ensemble_nodes() {
        let state = exec.apply_all(prefix.clone(), rest, &shot)?;
        rho += state.rho() * C64::new(w, 0.0);
    }
    let state = JointState::from_parts(exec.space, rho);
    state.check_invariants()?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::discrimination_error;
    use crate::sequence::{compile, parse_sequence};

    fn timeline(text: &str, cfg: &ExperimentConfig) -> Timeline {
        compile(&parse_sequence(text).unwrap(), cfg).unwrap()
    }

    fn perfect_cooling() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.a_plus = Some(0.0);
        cfg
    }

    #[test]
    fn kraus_maps_are_trace_preserving() {
        let space = FockSpace::new(4, crate::hilbert::ModeLabel::Axial, 1.0).unwrap();
        for (f, r) in [(1.0, 0.0), (0.9, 0.1), (0.3, 1.0)] {
            let ks = quench_kraus(&space, f, r);
            let sum = ks.iter().fold(DMatrix::<C64>::zeros(space.dim(), space.dim()), |acc, k| acc + k.adjoint() * k);
            assert!((sum - DMatrix::identity(space.dim(), space.dim())).norm() < 1e-14);
        }
    }

    #[test]
    fn pi_pulse_then_detect_is_shelved() {
        let cfg = perfect_cooling();
        let tl = timeline("doppler_cool\npump\nsideband_cool 6.4ms\npulse bsb pi\ndetect 2ms", &cfg);
        let rec = run(&tl, &cfg, &NoiseModel::noiseless(), 3).unwrap();
        assert!(rec.p_d > 0.999, "p_d {}", rec.p_d);
        let est = estimate_excitation(&tl, &cfg, &NoiseModel::noiseless(), 2000, 5).unwrap();
        assert!(est.p_hat >= 0.995);
    }

    #[test]
    fn quench_prepares_first_fock_state() {
        let cfg = perfect_cooling();
        let tl = timeline("doppler_cool\npump\nsideband_cool 6.4ms\npulse bsb pi\nquench", &cfg);
        let st = final_state(&tl, &cfg, &NoiseModel::noiseless()).unwrap();
        let p = st.phonon_distribution();
        let recoil = cfg.recoil_branch(cfg.mode);
        assert!((p[1] - (1.0 - recoil)).abs() < 1e-6, "p1 {}", p[1]);
        assert!((p[2] - recoil).abs() < 1e-6);
        assert!(st.excited_population() < 1e-12);
    }

    #[test]
    fn heating_during_wait() {
        let cfg = perfect_cooling();
        let noise = NoiseModel { heating_rate: 5.3, ..Default::default() };
        let tl = timeline("doppler_cool\npump\nsideband_cool 6.4ms\nwait 190ms", &cfg);
        let rec = run(&tl, &cfg, &noise, 0).unwrap();
        assert!((rec.mean_phonon - 1.007).abs() < 0.01, "mean {}", rec.mean_phonon);
    }

    #[test]
    fn estimates_respect_statistics() {
        let cfg = perfect_cooling();
        let dark = timeline("doppler_cool\npump\nsideband_cool 6.4ms\ndetect 2ms", &cfg);
        let est = estimate_excitation(&dark, &cfg, &NoiseModel::noiseless(), 400, 1).unwrap();
        assert_eq!(est.p_hat, 0.0);
        assert!(est.ci_high < 0.01);

        let half = timeline("doppler_cool\npump\nsideband_cool 6.4ms\npulse bsb pi2\ndetect 2ms", &cfg);
        let mut within = 0;
        for seed in 0..100 {
            let est = estimate_excitation(&half, &cfg, &NoiseModel::noiseless(), 400, seed).unwrap();
            if (est.p_hat - 0.5).abs() < 0.08 {
                within += 1;
            }
        }
        assert!(within >= 99);

        let bright = timeline("pulse carrier pi\ndetect 2ms", &cfg);
        let eps = discrimination_error(&cfg.detection_params(None).unwrap()).1;
        let est = estimate_excitation(&bright, &cfg, &NoiseModel::noiseless(), 100, 9).unwrap();
        assert!(est.p_hat >= 1.0 - 3.0 * eps);
    }

    #[test]
    fn shots_are_reproducible_and_independent() {
        let cfg = ExperimentConfig::default();
        let noise = NoiseModel { intensity_jitter_rel: 0.05, dephasing_rate: 500.0, ..Default::default() };
        let tl = timeline("doppler_cool\npump\nsideband_cool 1ms\npulse bsb pi2\ndetect 2ms", &cfg);
        let a = run_shots(&tl, &cfg, &noise, 0..6, 17).unwrap();
        let b = run_shots(&tl, &cfg, &noise, 0..6, 17).unwrap();
        assert_eq!(a, b);
        let single = run_shots(&tl, &cfg, &noise, [4], 17).unwrap();
        assert_eq!(single[0], a[4]);
        assert_ne!(a[0].p_d, a[1].p_d);
    }
}
