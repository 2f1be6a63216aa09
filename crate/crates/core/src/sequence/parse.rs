use std::f64::consts::TAU;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::Sideband;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeUnit {
    Us,
    Ms,
    S,
}

impl TimeUnit {
    fn token(self) -> &'static str {
        match self {
            TimeUnit::Us => "us",
            TimeUnit::Ms => "ms",
            TimeUnit::S => "s",
        }
    }

    fn scale(self) -> f64 {
        match self {
            TimeUnit::Us => 1e-6,
            TimeUnit::Ms => 1e-3,
            TimeUnit::S => 1.0,
        }
    }

    fn from_token(s: &str) -> Option<Self> {
        match s {
            "us" => Some(TimeUnit::Us),
            "ms" => Some(TimeUnit::Ms),
            "s" => Some(TimeUnit::S),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FreqUnit {
    Hz,
    KHz,
    MHz,
}

impl FreqUnit {
    fn token(self) -> &'static str {
        match self {
            FreqUnit::Hz => "Hz",
            FreqUnit::KHz => "kHz",
            FreqUnit::MHz => "MHz",
        }
    }

    fn scale(self) -> f64 {
        match self {
            FreqUnit::Hz => 1.0,
            FreqUnit::KHz => 1e3,
            FreqUnit::MHz => 1e6,
        }
    }

    fn from_token(s: &str) -> Option<Self> {
        match s {
            "Hz" => Some(FreqUnit::Hz),
            "kHz" => Some(FreqUnit::KHz),
            "MHz" => Some(FreqUnit::MHz),
            _ => None,
        }
    }
}

/// A duration literal as written, e.g. `6.4ms`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Duration {
    pub value: f64,
    pub unit: TimeUnit,
}

impl Duration {
    pub fn seconds(&self) -> f64 {
        self.value * self.unit.scale()
    }
}

impl fmt::Display for Duration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.value, self.unit.token())
    }
}

/// A cyclic frequency literal, e.g. `-3kHz`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frequency {
    pub value: f64,
    pub unit: FreqUnit,
}

impl Frequency {
    /// Angular frequency, rad/s.
    pub fn rad_per_s(&self) -> f64 {
        TAU * self.value * self.unit.scale()
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.value, self.unit.token())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PulseArea {
    Pi,
    HalfPi,
    Duration(Duration),
}

impl fmt::Display for PulseArea {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PulseArea::Pi => f.write_str("pi"),
            PulseArea::HalfPi => f.write_str("pi2"),
            PulseArea::Duration(d) => d.fmt(f),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    pub sideband: Sideband,
    pub area: PulseArea,
    pub detuning: Option<Frequency>,
    /// rad
    pub phase: Option<f64>,
    /// Fock level whose Rabi frequency converts an area into a duration.
    pub ref_n: Option<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum SequenceStep {
    DopplerCool,
    Pump,
    SidebandCool { duration: Duration },
    Pulse(PulseSpec),
    Quench,
    Wait { duration: Duration },
    Detect { window: Duration },
}

impl fmt::Display for SequenceStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SequenceStep::DopplerCool => f.write_str("doppler_cool"),
            SequenceStep::Pump => f.write_str("pump"),
            SequenceStep::SidebandCool { duration } => write!(f, "sideband_cool {duration}"),
            SequenceStep::Pulse(p) => {
                write!(f, "pulse {} {}", p.sideband.token(), p.area)?;
                if let Some(d) = p.detuning {
                    write!(f, " detuning={d}")?;
                }
                if let Some(ph) = p.phase {
                    write!(f, " phase={ph}rad")?;
                }
                if let Some(n) = p.ref_n {
                    write!(f, " ref_n={n}")?;
                }
                Ok(())
            }
            SequenceStep::Quench => f.write_str("quench"),
            SequenceStep::Wait { duration } => write!(f, "wait {duration}"),
            SequenceStep::Detect { window } => write!(f, "detect {window}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    pub name: Option<String>,
    pub steps: Vec<SequenceStep>,
    #[serde(skip)]
    pub source: String,
}

impl PulseSequence {
    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn detect_window(&self) -> Option<Duration> {
        match self.steps.last() {
            Some(SequenceStep::Detect { window }) => Some(*window),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParseErrorKind {
    Empty,
    UnknownKeyword,
    UnknownSideband,
    InvalidArea,
    InvalidNumber,
    MissingUnit,
    UnknownUnit,
    NonPositiveDuration,
    MissingArgument(&'static str),
    UnexpectedArgument,
    UnknownOption,
    DuplicateOption,
    InvalidInteger,
    DuplicateDetect,
    DetectNotLast,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::Empty => f.write_str("sequence contains no steps"),
            ParseErrorKind::UnknownKeyword => f.write_str("unknown keyword"),
            ParseErrorKind::UnknownSideband => f.write_str("unknown sideband (expected carrier, rsb or bsb)"),
            ParseErrorKind::InvalidArea => f.write_str("expected pi, pi2 or a duration"),
            ParseErrorKind::InvalidNumber => f.write_str("invalid number"),
            ParseErrorKind::MissingUnit => f.write_str("number without unit"),
            ParseErrorKind::UnknownUnit => f.write_str("unit not valid here"),
            ParseErrorKind::NonPositiveDuration => f.write_str("duration must be positive"),
            ParseErrorKind::MissingArgument(what) => write!(f, "missing {what}"),
            ParseErrorKind::UnexpectedArgument => f.write_str("unexpected argument"),
            ParseErrorKind::UnknownOption => f.write_str("unknown option (expected detuning, phase or ref_n)"),
            ParseErrorKind::DuplicateOption => f.write_str("option given twice"),
            ParseErrorKind::InvalidInteger => f.write_str("expected a nonnegative integer"),
            ParseErrorKind::DuplicateDetect => f.write_str("second detect step"),
            ParseErrorKind::DetectNotLast => f.write_str("detect must be the last step"),
        }
    }
}

/// Syntax error at a 1-based line and column.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {kind} at `{token}`")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub token: String,
    pub kind: ParseErrorKind,
}

#[derive(Clone, Copy)]
struct Token<'a> {
    text: &'a str,
    line: usize,
    column: usize,
}

impl Token<'_> {
    fn error(&self, kind: ParseErrorKind) -> ParseError {
        ParseError { line: self.line, column: self.column, token: self.text.to_string(), kind }
    }
}

fn tokenize(line: &str, line_no: usize) -> Vec<Token<'_>> {
    let code = line.split('#').next().unwrap_or("");
    let mut tokens = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in code.char_indices().chain(std::iter::once((code.len(), ' '))) {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                let column = code[..s].chars().count() + 1;
                tokens.push(Token { text: &code[s..i], line: line_no, column });
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    tokens
}

/// Splits `6.4ms` into `(6.4, "ms")`; the number is the longest prefix that
/// parses as a finite float.
fn split_number(text: &str) -> Option<(f64, &str)> {
    (1..=text.len()).rev().filter(|&i| text.is_char_boundary(i)).find_map(|i| {
        let (num, unit) = text.split_at(i);
        let v: f64 = num.parse().ok()?;
        (v.is_finite() && unit.chars().all(|c| c.is_ascii_alphabetic())).then_some((v, unit))
    })
}

fn number_and_unit<'a>(tok: &Token<'a>, text: &'a str) -> Result<(f64, &'a str), ParseError> {
    split_number(text).ok_or_else(|| tok.error(ParseErrorKind::InvalidNumber))
}

fn parse_duration(tok: &Token<'_>) -> Result<Duration, ParseError> {
    let (value, unit) = number_and_unit(tok, tok.text)?;
    if unit.is_empty() {
        return Err(tok.error(ParseErrorKind::MissingUnit));
    }
    let unit = TimeUnit::from_token(unit).ok_or_else(|| tok.error(ParseErrorKind::UnknownUnit))?;
    if !(value > 0.0) {
        return Err(tok.error(ParseErrorKind::NonPositiveDuration));
    }
    Ok(Duration { value, unit })
}

fn parse_frequency(tok: &Token<'_>, text: &str) -> Result<Frequency, ParseError> {
    let (value, unit) = number_and_unit(tok, text)?;
    if unit.is_empty() {
        // a bare zero needs no unit
        if value == 0.0 {
            return Ok(Frequency { value, unit: FreqUnit::Hz });
        }
        return Err(tok.error(ParseErrorKind::MissingUnit));
    }
    let unit = FreqUnit::from_token(unit).ok_or_else(|| tok.error(ParseErrorKind::UnknownUnit))?;
    Ok(Frequency { value, unit })
}

fn parse_phase(tok: &Token<'_>, text: &str) -> Result<f64, ParseError> {
    let (value, unit) = number_and_unit(tok, text)?;
    match unit {
        "rad" => Ok(value),
        "" if value == 0.0 => Ok(value),
        "" => Err(tok.error(ParseErrorKind::MissingUnit)),
        _ => Err(tok.error(ParseErrorKind::UnknownUnit)),
    }
}

fn no_more(rest: &[Token<'_>]) -> Result<(), ParseError> {
    match rest.first() {
        Some(t) => Err(t.error(ParseErrorKind::UnexpectedArgument)),
        None => Ok(()),
    }
}

fn one_duration(keyword: &Token<'_>, rest: &[Token<'_>], what: &'static str) -> Result<Duration, ParseError> {
    let tok = rest.first().ok_or_else(|| keyword.error(ParseErrorKind::MissingArgument(what)))?;
    let d = parse_duration(tok)?;
    no_more(&rest[1..])?;
    Ok(d)
}

fn parse_pulse(keyword: &Token<'_>, rest: &[Token<'_>]) -> Result<PulseSpec, ParseError> {
    let sb_tok = rest.first().ok_or_else(|| keyword.error(ParseErrorKind::MissingArgument("sideband")))?;
    let sideband = match sb_tok.text {
        "carrier" => Sideband::Carrier,
        "rsb" => Sideband::Red,
        "bsb" => Sideband::Blue,
        _ => return Err(sb_tok.error(ParseErrorKind::UnknownSideband)),
    };
    let area_tok = rest.get(1).ok_or_else(|| sb_tok.error(ParseErrorKind::MissingArgument("pulse area")))?;
    let area = match area_tok.text {
        "pi" => PulseArea::Pi,
        "pi2" => PulseArea::HalfPi,
        t if t.starts_with(|c: char| c.is_ascii_digit() || c == '.' || c == '-' || c == '+') => {
            PulseArea::Duration(parse_duration(area_tok)?)
        }
        _ => return Err(area_tok.error(ParseErrorKind::InvalidArea)),
    };
    let mut spec = PulseSpec { sideband, area, detuning: None, phase: None, ref_n: None };
    for tok in &rest[2..] {
        let (key, value) = tok.text.split_once('=').ok_or_else(|| tok.error(ParseErrorKind::UnexpectedArgument))?;
        let duplicate = match key {
            "detuning" => spec.detuning.replace(parse_frequency(tok, value)?).is_some(),
            "phase" => spec.phase.replace(parse_phase(tok, value)?).is_some(),
            "ref_n" => {
                let n = value.parse::<u32>().map_err(|_| tok.error(ParseErrorKind::InvalidInteger))?;
                spec.ref_n.replace(n).is_some()
            }
            _ => return Err(tok.error(ParseErrorKind::UnknownOption)),
        };
        if duplicate {
            return Err(tok.error(ParseErrorKind::DuplicateOption));
        }
    }
    Ok(spec)
}

fn parse_step(tokens: &[Token<'_>]) -> Result<SequenceStep, ParseError> {
    let keyword = &tokens[0];
    let rest = &tokens[1..];
    let step = match keyword.text {
        "doppler_cool" => {
            no_more(rest)?;
            SequenceStep::DopplerCool
        }
        "pump" => {
            no_more(rest)?;
            SequenceStep::Pump
        }
        "quench" => {
            no_more(rest)?;
            SequenceStep::Quench
        }
        "sideband_cool" => SequenceStep::SidebandCool { duration: one_duration(keyword, rest, "duration")? },
        "wait" => SequenceStep::Wait { duration: one_duration(keyword, rest, "duration")? },
        "detect" => SequenceStep::Detect { window: one_duration(keyword, rest, "detection window")? },
        "pulse" => SequenceStep::Pulse(parse_pulse(keyword, rest)?),
        _ => return Err(keyword.error(ParseErrorKind::UnknownKeyword)),
    };
    Ok(step)
}

/// Parses the line-oriented sequence language.
pub fn parse_sequence(text: &str) -> Result<PulseSequence, ParseError> {
    let mut steps = Vec::new();
    let mut seen_detect = false;
    for (i, line) in text.lines().enumerate() {
        let tokens = tokenize(line, i + 1);
        if tokens.is_empty() {
            continue;
        }
        if seen_detect {
            let kind = if tokens[0].text == "detect" {
                ParseErrorKind::DuplicateDetect
            } else {
                ParseErrorKind::DetectNotLast
            };
            return Err(tokens[0].error(kind));
        }
        let step = parse_step(&tokens)?;
        seen_detect = matches!(step, SequenceStep::Detect { .. });
        steps.push(step);
    }
    if steps.is_empty() {
        let line = text.lines().count().max(1);
        return Err(ParseError { line, column: 1, token: String::new(), kind: ParseErrorKind::Empty });
    }
    Ok(PulseSequence { name: None, steps, source: text.to_string() })
}

/// Canonical text of a sequence, one step per line.
pub fn print_sequence(seq: &PulseSequence) -> String {
    let mut out = String::new();
    if let Some(name) = &seq.name {
        out.push_str(&format!("# {name}\n"));
    }
    for step in &seq.steps {
        out.push_str(&step.to_string());
        out.push('\n');
    }
    out
}
