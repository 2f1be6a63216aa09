//! Experiment configuration: a flat `key = value unit` file.
//!
//! Frequencies written in `Hz`, `kHz` or `MHz` are cyclic and converted to
//! rad/s; `rad/s` is taken as is. Rates take `/s` or `/ms`, durations `us`,
//! `ms` or `s`, phases `rad`. Unknown keys are rejected.

use std::collections::BTreeSet;
use std::f64::consts::TAU;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cooling::{doppler_limit, CoolingParams};
use crate::dynamics::{CouplingRegime, DriveParams, Method, NoiseModel, Sideband};
use crate::error::{Error, Result};
use crate::hilbert::{default_thermal_n_max, FockSpace, ModeLabel};
use crate::measurement::{choose_threshold, DetectionParams};
use crate::physics::{ca40_lamb_dicke, DOPPLER_LINEWIDTH};

/// Threshold setting of the detection stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    Auto,
    Fixed(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeConfig {
    /// rad/s
    pub trap_frequency: f64,
    pub eta: f64,
}

/// How the cooling drive strength is set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoolingDrive {
    /// Drive chosen so that `A- - A+` equals this rate, 1/s.
    Rate(f64),
    /// Explicit carrier Rabi frequency, rad/s.
    Omega0(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Mode addressed by pulses, cooling and thermometry.
    pub mode: ModeLabel,
    pub axial: ModeConfig,
    pub radial_y: ModeConfig,
    pub radial_x: ModeConfig,
    /// Carrier Rabi frequency of the 729 nm drive, rad/s.
    pub omega0: f64,
    pub coupling: CouplingRegime,
    pub noise: NoiseModel,
    pub bright_mean: f64,
    pub dark_mean: f64,
    /// s
    pub detect_window: f64,
    pub threshold: Threshold,
    pub detect_decay: bool,
    /// Linewidth of the Doppler cooling transition, rad/s.
    pub doppler_linewidth: f64,
    /// rad/s
    pub gamma_eff: f64,
    pub cooling_drive: CoolingDrive,
    /// Defaults to the Lamb-Dicke parameter of the cooled mode.
    pub recoil_eta: Option<f64>,
    pub a_plus: Option<f64>,
    pub a_minus: Option<f64>,
    /// s
    pub doppler_duration: f64,
    /// s
    pub pump_duration: f64,
    /// s
    pub quench_duration: f64,
    /// Probability that the quench empties D.
    pub quench_fidelity: f64,
    /// Photons scattered per quench; each kicks with probability `eta^2`.
    pub recoil_photons: f64,
    pub seed: u64,
    pub repetitions: u32,
    pub n_max: Option<usize>,
    /// Fixed RK4 step; unset selects the blockwise propagator.
    pub dt: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mode = |hz: f64| ModeConfig { trap_frequency: TAU * hz, eta: ca40_lamb_dicke(TAU * hz, 1.0) };
        let axial = mode(4.51e6);
        ExperimentConfig {
            mode: ModeLabel::Axial,
            axial,
            radial_y: mode(2.07e6),
            radial_x: mode(2.16e6),
            omega0: TAU * 21e3 / axial.eta,
            coupling: CouplingRegime::LambDickeFirstOrder,
            noise: NoiseModel::default(),
            bright_mean: 42.0,
            dark_mean: 2.0,
            detect_window: 2e-3,
            threshold: Threshold::Auto,
            detect_decay: false,
            doppler_linewidth: DOPPLER_LINEWIDTH,
            gamma_eff: TAU * 100e3,
            cooling_drive: CoolingDrive::Rate(5000.0),
            recoil_eta: None,
            a_plus: None,
            a_minus: None,
            doppler_duration: 2e-3,
            pump_duration: 20e-6,
            quench_duration: 20e-6,
            quench_fidelity: 1.0,
            recoil_photons: 2.0,
            seed: 1,
            repetitions: 100,
            n_max: None,
            dt: None,
        }
    }
}

/// Splits `"4.51 MHz"` or `"4.51MHz"` into the number and the trimmed unit.
fn split_quantity(text: &str) -> Option<(f64, &str)> {
    let text = text.trim();
    (1..=text.len()).rev().filter(|&i| text.is_char_boundary(i)).find_map(|i| {
        let (num, unit) = text.split_at(i);
        let v: f64 = num.trim().parse().ok()?;
        let unit = unit.trim();
        (v.is_finite() && !unit.starts_with(|c: char| c.is_ascii_digit() || c == '.')).then_some((v, unit))
    })
}

struct Entry<'a> {
    key: &'a str,
    value: &'a str,
    line: usize,
}

impl Entry<'_> {
    fn err(&self, message: impl std::fmt::Display) -> Error {
        Error::config(self.key, format!("line {}: {message} (got `{}`)", self.line, self.value))
    }

    fn quantity(&self) -> Result<(f64, &str)> {
        split_quantity(self.value).ok_or_else(|| self.err("expected a number"))
    }

    fn unit_required(&self, unit: &str, allowed: &str) -> Result<()> {
        if unit.is_empty() {
            Err(self.err(format!("missing unit ({allowed})")))
        } else {
            Err(self.err(format!("unknown unit `{unit}` ({allowed})")))
        }
    }

    /// Angular frequency in rad/s.
    fn angular(&self) -> Result<f64> {
        let (v, unit) = self.quantity()?;
        let scale = match unit {
            "Hz" => TAU,
            "kHz" => TAU * 1e3,
            "MHz" => TAU * 1e6,
            "rad/s" => 1.0,
            _ => return self.unit_required(unit, "Hz, kHz, MHz or rad/s").map(|_| 0.0),
        };
        Ok(v * scale)
    }

    /// Cyclic frequency in Hz.
    fn cyclic(&self) -> Result<f64> {
        Ok(self.angular()? / TAU)
    }

    fn rate(&self) -> Result<f64> {
        let (v, unit) = self.quantity()?;
        let scale = match unit {
            "/s" | "1/s" => 1.0,
            "/ms" | "1/ms" => 1e3,
            _ => return self.unit_required(unit, "/s or /ms").map(|_| 0.0),
        };
        Ok(v * scale)
    }

    fn duration(&self) -> Result<f64> {
        let (v, unit) = self.quantity()?;
        let scale = match unit {
            "us" => 1e-6,
            "ms" => 1e-3,
            "s" => 1.0,
            _ => return self.unit_required(unit, "us, ms or s").map(|_| 0.0),
        };
        Ok(v * scale)
    }

    fn angle(&self) -> Result<f64> {
        let (v, unit) = self.quantity()?;
        match unit {
            "rad" => Ok(v),
            _ => self.unit_required(unit, "rad").map(|_| 0.0),
        }
    }

    fn number(&self) -> Result<f64> {
        let (v, unit) = self.quantity()?;
        if !unit.is_empty() {
            return Err(self.err("expected a plain number"));
        }
        Ok(v)
    }

    fn parsed<T: FromStr>(&self, what: &str) -> Result<T> {
        self.value.parse().map_err(|_| self.err(format!("expected {what}")))
    }

    fn boolean(&self) -> Result<bool> {
        match self.value {
            "true" | "yes" | "on" => Ok(true),
            "false" | "no" | "off" => Ok(false),
            _ => Err(self.err("expected true or false")),
        }
    }
}

fn check(ok: bool, key: &str, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(key, message))
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        ExperimentConfig::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = BTreeSet::new();
        let mut eta_set = [false; 3];
        let mut omega0 = None;
        let mut sideband_rabi = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(line, format!("line {}: expected `key = value`", i + 1)))?;
            let e = Entry { key: key.trim(), value: value.trim(), line: i + 1 };
            if !seen.insert(e.key.to_string()) {
                return Err(e.err("key given twice"));
            }
            match e.key {
                "mode" => cfg.mode = e.parsed("axial, radial_y or radial_x")?,
                "trap_axial" => cfg.axial.trap_frequency = e.angular()?,
                "trap_radial_y" => cfg.radial_y.trap_frequency = e.angular()?,
                "trap_radial_x" => cfg.radial_x.trap_frequency = e.angular()?,
                "eta_axial" => (cfg.axial.eta, eta_set[0]) = (e.number()?, true),
                "eta_radial_y" => (cfg.radial_y.eta, eta_set[1]) = (e.number()?, true),
                "eta_radial_x" => (cfg.radial_x.eta, eta_set[2]) = (e.number()?, true),
                "omega0" => omega0 = Some(e.angular()?),
                "sideband_rabi" => sideband_rabi = Some(e.angular()?),
                "coupling" => {
                    cfg.coupling = match e.value {
                        "lamb_dicke" => CouplingRegime::LambDickeFirstOrder,
                        "laguerre" => CouplingRegime::ExactLaguerre,
                        _ => return Err(e.err("expected lamb_dicke or laguerre")),
                    }
                }
                "dephasing_rate" => cfg.noise.dephasing_rate = e.rate()?,
                "dephasing_alpha" => cfg.noise.dephasing_fock_exponent = e.number()?,
                "heating_rate" => cfg.noise.heating_rate = e.rate()?,
                "intensity_jitter" => cfg.noise.intensity_jitter_rel = e.number()?,
                "line_shift_amplitude" => cfg.noise.line_shift_amplitude = e.angular()?,
                "line_frequency" => cfg.noise.line_shift_frequency = e.cyclic()?,
                "line_sync" => cfg.noise.line_sync = e.boolean()?,
                "line_phase" => cfg.noise.line_phase = e.angle()?,
                "bright_mean" => cfg.bright_mean = e.number()?,
                "dark_mean" => cfg.dark_mean = e.number()?,
                "detect_window" => cfg.detect_window = e.duration()?,
                "threshold" => {
                    cfg.threshold = match e.value {
                        "auto" => Threshold::Auto,
                        v => Threshold::Fixed(v.parse().map_err(|_| e.err("expected auto or an integer"))?),
                    }
                }
                "detect_decay" => cfg.detect_decay = e.boolean()?,
                "doppler_linewidth" => cfg.doppler_linewidth = e.angular()?,
                "gamma_eff" => cfg.gamma_eff = e.angular()?,
                "cooling_rate" => {
                    if seen.contains("cooling_omega0") {
                        return Err(e.err("cooling_rate and cooling_omega0 are exclusive"));
                    }
                    cfg.cooling_drive = CoolingDrive::Rate(e.rate()?)
                }
                "cooling_omega0" => {
                    if seen.contains("cooling_rate") {
                        return Err(e.err("cooling_rate and cooling_omega0 are exclusive"));
                    }
                    cfg.cooling_drive = CoolingDrive::Omega0(e.angular()?)
                }
                "recoil_eta" => cfg.recoil_eta = Some(e.number()?),
                "a_plus" => cfg.a_plus = Some(e.rate()?),
                "a_minus" => cfg.a_minus = Some(e.rate()?),
                "doppler_duration" => cfg.doppler_duration = e.duration()?,
                "pump_duration" => cfg.pump_duration = e.duration()?,
                "quench_duration" => cfg.quench_duration = e.duration()?,
                "quench_fidelity" => cfg.quench_fidelity = e.number()?,
                "recoil_photons" => cfg.recoil_photons = e.number()?,
                "seed" => cfg.seed = e.parsed("an unsigned integer")?,
                "repetitions" => cfg.repetitions = e.parsed("a positive integer")?,
                "n_max" => cfg.n_max = Some(e.parsed("a positive integer")?),
                "dt" => cfg.dt = Some(e.duration()?),
                _ => return Err(Error::config(e.key, format!("line {}: unknown key", e.line))),
            }
        }
        for (set, m) in eta_set.iter().zip([&mut cfg.axial, &mut cfg.radial_y, &mut cfg.radial_x]) {
            if !set && m.trap_frequency > 0.0 {
                m.eta = ca40_lamb_dicke(m.trap_frequency, 1.0);
            }
        }
        cfg.omega0 = match (omega0, sideband_rabi) {
            (Some(_), Some(_)) => return Err(Error::config("sideband_rabi", "omega0 and sideband_rabi are exclusive")),
            (Some(w), None) => w,
            (None, Some(s)) => s / cfg.mode_config(cfg.mode).eta,
            (None, None) => TAU * 21e3 / cfg.mode_config(cfg.mode).eta,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every parameter and the module-level invariants they feed.
    pub fn validate(&self) -> Result<()> {
        for (name, m) in [("axial", self.axial), ("radial_y", self.radial_y), ("radial_x", self.radial_x)] {
            check(m.trap_frequency > 0.0 && m.trap_frequency.is_finite(), &format!("trap_{name}"), "must be positive")?;
            check(m.eta > 0.0 && m.eta < 1.0, &format!("eta_{name}"), "must lie in (0, 1)")?;
        }
        check(self.omega0 >= 0.0 && self.omega0.is_finite(), "omega0", "must be >= 0")?;
        let n = &self.noise;
        check(n.dephasing_rate >= 0.0, "dephasing_rate", "must be >= 0")?;
        check(n.heating_rate >= 0.0, "heating_rate", "must be >= 0")?;
        check(
            (0.0..0.2).contains(&n.intensity_jitter_rel),
            "intensity_jitter",
            "must lie in [0, 0.2)",
        )?;
        check(n.line_shift_amplitude >= 0.0, "line_shift_amplitude", "must be >= 0")?;
        check(n.line_shift_frequency >= 0.0, "line_frequency", "must be >= 0")?;
        check(self.dark_mean >= 0.0, "dark_mean", "must be >= 0")?;
        check(self.bright_mean > self.dark_mean, "bright_mean", "must exceed dark_mean")?;
        check(self.detect_window > 0.0, "detect_window", "must be positive")?;
        check(self.threshold != Threshold::Fixed(0), "threshold", "must be >= 1")?;
        check(self.doppler_linewidth > 0.0, "doppler_linewidth", "must be positive")?;
        check(self.gamma_eff > 0.0, "gamma_eff", "must be positive")?;
        match self.cooling_drive {
            CoolingDrive::Rate(r) => check(r > 0.0, "cooling_rate", "must be positive")?,
            CoolingDrive::Omega0(w) => check(w >= 0.0, "cooling_omega0", "must be >= 0")?,
        }
        check(self.recoil_eta.is_none_or(|r| r >= 0.0), "recoil_eta", "must be >= 0")?;
        check(self.a_plus.is_none_or(|r| r >= 0.0), "a_plus", "must be >= 0")?;
        check(self.a_minus.is_none_or(|r| r >= 0.0), "a_minus", "must be >= 0")?;
        check(self.doppler_duration >= 0.0, "doppler_duration", "must be >= 0")?;
        check(self.pump_duration >= 0.0, "pump_duration", "must be >= 0")?;
        check(self.quench_duration >= 0.0, "quench_duration", "must be >= 0")?;
        check((0.0..=1.0).contains(&self.quench_fidelity), "quench_fidelity", "must lie in [0, 1]")?;
        check(self.recoil_photons >= 0.0, "recoil_photons", "must be >= 0")?;
        check(self.repetitions >= 1, "repetitions", "must be >= 1")?;
        check(self.n_max.is_none_or(|n| n >= 1), "n_max", "must be >= 1")?;
        check(self.dt.is_none_or(|d| d > 0.0), "dt", "must be positive")?;
        for mode in ModeLabel::ALL {
            check(self.recoil_branch(mode) <= 1.0, "recoil_photons", "recoil probability exceeds 1")?;
        }
        self.noise.validate()?;
        self.cooling_params(self.mode)?;
        self.detection_params(None)?;
        Ok(())
    }

    pub fn mode_config(&self, mode: ModeLabel) -> ModeConfig {
        match mode {
            ModeLabel::Axial => self.axial,
            ModeLabel::RadialY => self.radial_y,
            ModeLabel::RadialX => self.radial_x,
        }
    }

    pub fn eta(&self) -> f64 {
        self.mode_config(self.mode).eta
    }

    pub fn trap_frequency(&self) -> f64 {
        self.mode_config(self.mode).trap_frequency
    }

    /// Resonant drive on `sideband` of the configured mode.
    pub fn drive(&self, sideband: Sideband) -> Result<DriveParams> {
        Ok(DriveParams::new(self.omega0, self.eta(), sideband)?.with_regime(self.coupling))
    }

    /// Mean phonon number after Doppler cooling of the configured mode.
    pub fn doppler_nbar(&self) -> Result<f64> {
        doppler_limit(self.doppler_linewidth, self.trap_frequency())
    }

    pub fn cooling_params(&self, mode: ModeLabel) -> Result<CoolingParams> {
        let m = self.mode_config(mode);
        let recoil = self.recoil_eta.unwrap_or(m.eta);
        let base = match self.cooling_drive {
            CoolingDrive::Rate(rate) => CoolingParams::calibrated(self.gamma_eff, m.eta, m.trap_frequency, recoil, rate),
            CoolingDrive::Omega0(w) => CoolingParams::new(self.gamma_eff, m.eta, m.trap_frequency, w, recoil),
        }
        .map_err(|e| Error::config("cooling", e.to_string()))?;
        base.with_rates(self.a_minus, self.a_plus)
    }

    /// Probability that one quench adds a phonon.
    pub fn recoil_branch(&self, mode: ModeLabel) -> f64 {
        let eta = self.mode_config(mode).eta;
        eta * eta * self.recoil_photons
    }

    /// Detection parameters for a window (default: the configured one). The
    /// count means scale with the window length.
    pub fn detection_params(&self, window: Option<f64>) -> Result<DetectionParams> {
        let window = window.unwrap_or(self.detect_window);
        let scale = window / self.detect_window;
        let base = DetectionParams::new(self.bright_mean * scale, self.dark_mean * scale, window, 1)
            .map_err(|e| Error::config("detection", e.to_string()))?
            .with_decay(self.detect_decay);
        match self.threshold {
            Threshold::Fixed(t) => base.with_threshold(t),
            Threshold::Auto => base.with_threshold(choose_threshold(&base)?.threshold),
        }
    }

    /// Hilbert space large enough for a thermal state of `nbar`.
    pub fn space_for(&self, nbar: f64) -> Result<FockSpace> {
        let n_max = self.n_max.unwrap_or_else(|| default_thermal_n_max(nbar));
        FockSpace::new(n_max, self.mode, self.trap_frequency())
    }

    pub fn method(&self) -> Method {
        match self.dt {
            Some(dt) => Method::Rk4 { dt: Some(dt) },
            None => Method::Blockwise,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = ExperimentConfig::parse("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        let d = cfg.drive(Sideband::Blue).unwrap();
        assert!((crate::dynamics::rabi_frequency(0, &d) - TAU * 21e3).abs() < 1e-6);
        assert!((10..=14).contains(&cfg.detection_params(None).unwrap().threshold));
    }

    #[test]
    fn units_convert() {
        let cfg = ExperimentConfig::parse(
            "trap_axial = 2.0 MHz\nheating_rate = 0.0053 /ms  # axial\ndetect_window = 2000us\n\
             line_shift_amplitude = 500 Hz\nline_frequency = 50Hz\nline_phase = 0.5 rad\nsideband_rabi = 1e5 rad/s\n\
             mode = axial\nthreshold = 11\nline_sync = true\n",
        )
        .unwrap();
        assert!((cfg.trap_frequency() - TAU * 2e6).abs() < 1e-6);
        assert!((cfg.eta() - ca40_lamb_dicke(TAU * 2e6, 1.0)).abs() < 1e-15);
        assert!((cfg.noise.heating_rate - 5.3).abs() < 1e-12);
        assert!((cfg.detect_window - 2e-3).abs() < 1e-15);
        assert!((cfg.noise.line_shift_amplitude - TAU * 500.0).abs() < 1e-9);
        assert_eq!(cfg.noise.line_shift_frequency, 50.0);
        assert!((cfg.omega0 * cfg.eta() - 1e5).abs() < 1e-6);
        assert_eq!(cfg.threshold, Threshold::Fixed(11));
        assert!(cfg.noise.line_sync);
    }

    fn key_of(text: &str) -> String {
        match ExperimentConfig::parse(text).unwrap_err() {
            Error::Config { key, .. } => key,
            e => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn errors_name_the_key() {
        assert_eq!(key_of("trap_axial = 4.51"), "trap_axial");
        assert_eq!(key_of("warp_factor = 9"), "warp_factor");
        assert_eq!(key_of("heating_rate = 5 Hz"), "heating_rate");
        assert_eq!(key_of("eta_axial = 1.5"), "eta_axial");
        assert_eq!(key_of("bright_mean = 1\ndark_mean = 2"), "bright_mean");
        assert_eq!(key_of("seed = 1\nseed = 2"), "seed");
        assert_eq!(key_of("intensity_jitter = 0.3"), "intensity_jitter");
        assert_eq!(key_of("omega0 = 1 MHz\nsideband_rabi = 21 kHz"), "sideband_rabi");
        assert_eq!(key_of("quench_fidelity = 1.2"), "quench_fidelity");
    }

    #[test]
    fn auto_threshold_scales_with_window() {
        let cfg = ExperimentConfig::default();
        let long = cfg.detection_params(Some(4e-3)).unwrap();
        assert_eq!(long.bright_mean, 84.0);
        assert!(long.threshold > 12);
    }
}
