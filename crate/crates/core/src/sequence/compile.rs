use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::parse::{PulseArea, PulseSequence, SequenceStep};
use crate::config::ExperimentConfig;
use crate::dynamics::{rabi_frequency, DriveParams};
use crate::error::{Error, Result};

/// Primitive operation of a compiled schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Operation {
    DopplerCool,
    Pump,
    SidebandCool,
    Pulse { drive: DriveParams },
    Quench,
    Wait,
    Detect,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimedOperation {
    /// s from the start of the shot
    pub start: f64,
    /// s
    pub duration: f64,
    #[serde(flatten)]
    pub op: Operation,
}

impl TimedOperation {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

/// Gapless absolute-time schedule of one shot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub operations: Vec<TimedOperation>,
    pub total_duration: f64,
}

impl Timeline {
    /// Time spent in operations that let the trap heat the ion.
    pub fn exposed_duration(&self) -> f64 {
        self.operations
            .iter()
            .filter(|o| matches!(o.op, Operation::Pulse { .. } | Operation::Wait))
            .map(|o| o.duration)
            .sum()
    }
}

fn pulse_duration(drive: &DriveParams, area: PulseArea, ref_n: u32) -> Result<f64> {
    let angle = match area {
        PulseArea::Duration(d) => return Ok(d.seconds()),
        PulseArea::Pi => PI,
        PulseArea::HalfPi => PI / 2.0,
    };
    let rabi = rabi_frequency(ref_n as usize, drive);
    if !(rabi > 0.0) {
        return Err(Error::Compile(format!(
            "{} pulse area from |n={ref_n}> addresses a transition with zero coupling",
            drive.sideband.token()
        )));
    }
    Ok(angle / rabi)
}

/// Resolves pulse areas into durations and assigns start times.
pub fn compile(seq: &PulseSequence, config: &ExperimentConfig) -> Result<Timeline> {
    if seq.steps.is_empty() {
        return Err(Error::Compile("empty sequence".into()));
    }
    let mut operations = Vec::with_capacity(seq.steps.len());
    let mut t = 0.0;
    for step in &seq.steps {
        let (op, duration) = match *step {
            SequenceStep::DopplerCool => (Operation::DopplerCool, config.doppler_duration),
            SequenceStep::Pump => (Operation::Pump, config.pump_duration),
            SequenceStep::SidebandCool { duration } => (Operation::SidebandCool, duration.seconds()),
            SequenceStep::Pulse(spec) => {
                let drive = config
                    .drive(spec.sideband)?
                    .with_detuning(spec.detuning.map_or(0.0, |d| d.rad_per_s()))
                    .with_phase(spec.phase.unwrap_or(0.0));
                let duration = pulse_duration(&drive, spec.area, spec.ref_n.unwrap_or(0))?;
                (Operation::Pulse { drive }, duration)
            }
            SequenceStep::Quench => (Operation::Quench, config.quench_duration),
            SequenceStep::Wait { duration } => (Operation::Wait, duration.seconds()),
            SequenceStep::Detect { window } => (Operation::Detect, window.seconds()),
        };
        operations.push(TimedOperation { start: t, duration, op });
        t += duration;
    }
    Ok(Timeline { operations, total_duration: t })
}
