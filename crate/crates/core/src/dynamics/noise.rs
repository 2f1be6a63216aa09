use std::f64::consts::TAU;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decoherence and technical-noise sources acting on the ion.
///
/// `dephasing_rate` and `heating_rate` enter the master equation. The
/// intensity jitter and the line-shift modulation are shot-to-shot noise:
/// they are drawn once per experimental shot and held fixed during it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Electronic coherence decay rate, 1/s.
    pub dephasing_rate: f64,
    /// Exponent of the Fock-dependent envelope `gamma0 (n+1)^alpha` used by
    /// the analytic flopping model.
    pub dephasing_fock_exponent: f64,
    /// Motional heating, quanta/s.
    pub heating_rate: f64,
    /// Relative rms fluctuation of the Rabi frequency between shots.
    pub intensity_jitter_rel: f64,
    /// Peak detuning excursion of the line-synchronous field, rad/s.
    pub line_shift_amplitude: f64,
    /// Frequency of the line-synchronous modulation, Hz.
    pub line_shift_frequency: f64,
    /// Shots triggered on the ac line see a fixed modulation phase.
    pub line_sync: bool,
    /// Modulation phase used when `line_sync` is set, rad.
    pub line_phase: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            dephasing_rate: 0.0,
            dephasing_fock_exponent: 0.7,
            heating_rate: 0.0,
            intensity_jitter_rel: 0.0,
            line_shift_amplitude: 0.0,
            line_shift_frequency: 50.0,
            line_sync: false,
            line_phase: 0.0,
        }
    }
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        NoiseModel::default()
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("dephasing_rate", self.dephasing_rate),
            ("heating_rate", self.heating_rate),
            ("intensity_jitter_rel", self.intensity_jitter_rel),
            ("line_shift_amplitude", self.line_shift_amplitude),
            ("line_shift_frequency", self.line_shift_frequency),
        ];
        for (name, value) in rates {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(Error::Domain(format!("{name} must be a finite value >= 0, got {value}")));
            }
        }
        if self.intensity_jitter_rel >= 0.2 {
            return Err(Error::Domain(format!(
                "intensity_jitter_rel must be < 0.2, got {}",
                self.intensity_jitter_rel
            )));
        }
        Ok(())
    }

    /// Whether any parameter varies from shot to shot.
    pub fn has_shot_noise(&self) -> bool {
        self.intensity_jitter_rel > 0.0 || (self.line_shift_amplitude > 0.0 && !self.line_sync)
    }

    /// Noise applied during coherent pulses only through the master equation.
    pub fn without_shot_noise(&self) -> Self {
        NoiseModel { intensity_jitter_rel: 0.0, line_shift_amplitude: 0.0, ..*self }
    }

    /// Draw the per-shot realisation.
    pub fn sample_shot<R: Rng + ?Sized>(&self, rng: &mut R) -> ShotNoise {
        let rabi_scale = if self.intensity_jitter_rel > 0.0 {
            let normal = Normal::new(0.0, self.intensity_jitter_rel).expect("validated jitter");
            1.0 + normal.sample(rng)
        } else {
            1.0
        };
        let line_phase = if self.line_sync { self.line_phase } else { rng.random::<f64>() * TAU };
        ShotNoise { rabi_scale, line_phase }
    }

    /// Quadrature nodes `(weight, realisation)` for the ensemble average over
    /// shot noise. Gauss-Hermite in the jitter, trapezoidal in the phase.
    pub fn ensemble_nodes(&self) -> Vec<(f64, ShotNoise)> {
        let scales: Vec<(f64, f64)> = if self.intensity_jitter_rel > 0.0 {
            gauss_hermite_normal(24)
                .into_iter()
                .map(|(w, x)| (w, 1.0 + self.intensity_jitter_rel * x))
                .collect()
        } else {
            vec![(1.0, 1.0)]
        };
        let phases: Vec<(f64, f64)> = if self.line_shift_amplitude > 0.0 && !self.line_sync {
            let k = 32;
            (0..k).map(|i| (1.0 / k as f64, TAU * i as f64 / k as f64)).collect()
        } else {
            vec![(1.0, self.line_phase)]
        };
        let mut nodes = Vec::with_capacity(scales.len() * phases.len());
        for &(ws, scale) in &scales {
            for &(wp, phase) in &phases {
                nodes.push((ws * wp, ShotNoise { rabi_scale: scale, line_phase: phase }));
            }
        }
        nodes
    }

    /// Detuning offset seen by a pulse that starts at `t_start` (seconds from
    /// the start of the shot). The line field is quasi-static over a pulse.
    pub fn line_offset(&self, shot: &ShotNoise, t_start: f64) -> f64 {
        if self.line_shift_amplitude == 0.0 {
            return 0.0;
        }
        self.line_shift_amplitude * (TAU * self.line_shift_frequency * t_start + shot.line_phase).sin()
    }
}

/// One shot's realisation of the technical noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotNoise {
    pub rabi_scale: f64,
    pub line_phase: f64,
}

impl ShotNoise {
    pub fn nominal() -> Self {
        ShotNoise { rabi_scale: 1.0, line_phase: 0.0 }
    }
}

/// Gauss-Hermite rule for expectations over a standard normal variable:
/// `E[f(X)] ~ sum_i w_i f(x_i)`, via the Golub-Welsch eigenproblem.
pub fn gauss_hermite_normal(order: usize) -> Vec<(f64, f64)> {
    // Jacobi matrix of the probabilists' Hermite polynomials.
    let jacobi = DMatrix::from_fn(order, order, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = jacobi.symmetric_eigen();
    let mut nodes: Vec<(f64, f64)> = (0..order)
        .map(|k| (eig.eigenvectors[(0, k)].powi(2), eig.eigenvalues[k]))
        .collect();
    nodes.sort_by(|a, b| a.1.total_cmp(&b.1));
    nodes
}
