//! Pulse-sequence language: parsing, compilation to an absolute-time
//! schedule, and shot execution.
//!
//! One step per line:
//!
//! ```text
//! doppler_cool
//! pump
//! sideband_cool 6.4ms
//! pulse bsb pi detuning=0kHz phase=0rad ref_n=0
//! quench
//! wait 10ms
//! detect 2ms
//! ```
//!
//! `#` starts a comment. Durations take `us`, `ms` or `s`, detunings `Hz`,
//! `kHz` or `MHz`, phases `rad`.

mod compile;
mod parse;
mod run;

pub use compile::{compile, Operation, TimedOperation, Timeline};
pub use parse::{
    parse_sequence, print_sequence, Duration, FreqUnit, Frequency, ParseError, ParseErrorKind, PulseArea, PulseSequence,
    PulseSpec, SequenceStep, TimeUnit,
};
pub use run::{estimate_excitation, final_state, run, run_shots, ExcitationEstimate, ExperimentRecord};
