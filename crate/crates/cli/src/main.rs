use std::f64::consts::TAU;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use iontrap::analysis::{FitResult, PopulationMethod};
use iontrap::config::ExperimentConfig;
use iontrap::dynamics::{rabi_frequency, Sideband};
use iontrap::experiments::{
    cool, flop, heat, spectrum, FlopRequest, HeatRequest, InitialFock, Preparation, SpectrumRequest, COOL_DURATION,
};
use iontrap::sequence::{compile, estimate_excitation, final_state, parse_sequence, print_sequence};

mod output;

use output::{fit_csv, Sink};

#[derive(Parser, Debug)]
#[command(name = "iontrap", version, about = "Trapped-ion sideband cooling and Fock state experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment configuration (key = value lines)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Pulse sequence file, used by `run`
    #[arg(long, global = true)]
    seq: Option<PathBuf>,
    /// Overrides the configured seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Shots per point; overrides the configured repetitions
    #[arg(long, global = true)]
    reps: Option<u32>,
    /// Directory for output files; stdout when absent
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: Format,
    /// Exact probabilities instead of sampled shots
    #[arg(long, global = true)]
    exact: bool,
    /// Leave the timestamp out of the provenance record
    #[arg(long, global = true)]
    no_timestamp: bool,
    /// Also emit a gnuplot script for the data
    #[arg(long, global = true)]
    gnuplot: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Prep {
    Doppler,
    Cooled,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Lsq,
    Fourier,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Red and blue sideband scans with thermometry
    Spectrum {
        #[arg(long, value_enum, default_value = "cooled")]
        prep: Prep,
        #[arg(long, default_value_t = 61)]
        points: usize,
        /// Scan half-width in kHz; default five ground-state sideband Rabi frequencies
        #[arg(long)]
        span_khz: Option<f64>,
        /// Sideband cooling time in ms
        #[arg(long, default_value_t = COOL_DURATION * 1e3)]
        cool_ms: f64,
    },
    /// Fock state preparation and blue sideband flopping
    Flop {
        #[arg(long, default_value = "n0", value_parser = ["n0", "n1"])]
        initial: String,
        /// Longest pulse in ms
        #[arg(long, default_value_t = 1.4)]
        duration_ms: f64,
        #[arg(long, default_value_t = 281)]
        points: usize,
        #[arg(long, default_value_t = 4)]
        n_max_fit: usize,
        #[arg(long, value_enum, default_value = "lsq")]
        method: MethodArg,
        #[arg(long, default_value_t = COOL_DURATION * 1e3)]
        cool_ms: f64,
    },
    /// Heating rate from thermometry after dark delays
    Heat {
        /// Delays in ms
        #[arg(long, value_delimiter = ',', default_value = "0,40,80,120,160")]
        delays_ms: Vec<f64>,
        #[arg(long, default_value_t = 9)]
        scan_points: usize,
        #[arg(long, default_value_t = COOL_DURATION * 1e3)]
        cool_ms: f64,
    },
    /// Mean phonon number versus sideband cooling time
    Cool {
        /// Cooling durations in ms
        #[arg(long, value_delimiter = ',', default_value = "0,0.4,0.8,1.2,1.6,2,2.4,2.8,3.2,4,4.8,5.6,6.4")]
        durations_ms: Vec<f64>,
    },
    /// Executes the sequence given by --seq
    Run,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Spectrum { .. } => "spectrum",
            Command::Flop { .. } => "flop",
            Command::Heat { .. } => "heat",
            Command::Cool { .. } => "cool",
            Command::Run => "run",
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(reps) = common.reps {
        if reps == 0 {
            bail!("--reps must be >= 1 (use --exact for exact probabilities)");
        }
        cfg.repetitions = reps;
    }
    Ok(cfg)
}

fn shots(common: &Common, cfg: &ExperimentConfig) -> u32 {
    if common.exact {
        0
    } else {
        cfg.repetitions
    }
}

fn provenance(common: &Common, cfg: &ExperimentConfig, command: &str) -> Value {
    let mut p = json!({
        "tool": "iontrap",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": cfg.seed,
        "shots_per_point": shots(common, cfg),
        "config_file": common.config.as_ref().map(|p| p.display().to_string()),
    });
    if !common.no_timestamp {
        let secs = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        p["timestamp_unix"] = json!(secs);
    }
    p
}

fn execute(cli: &Cli) -> Result<()> {
    let common = &cli.common;
    let cfg = load_config(common)?;
    let name = cli.command.name();
    let mut sink = Sink::new(common.out.as_deref(), common.format == Format::Json)?;
    let prov = provenance(common, &cfg, name);
    let cfg_json = serde_json::to_value(&cfg)?;
    let document = |data: Value| json!({ "provenance": prov, "config": cfg_json, "data": data });
    let shots = shots(common, &cfg);

    match &cli.command {
        Command::Spectrum { prep, points, span_khz, cool_ms } => {
            let omega = rabi_frequency(0, &cfg.drive(Sideband::Blue)?);
            let req = SpectrumRequest {
                prep: match prep {
                    Prep::Doppler => Preparation::Doppler,
                    Prep::Cooled => Preparation::Cooled { duration: cool_ms * 1e-3 },
                },
                points: *points,
                span: span_khz.map_or(5.0 * omega, |k| TAU * k * 1e3),
                shots,
                seed: cfg.seed,
            };
            let r = spectrum(&cfg, &req)?;
            log::info!("nbar = {:.4} +- {:.4}, p0 = {:.5}", r.nbar, r.nbar_sigma, r.p0);
            if sink.json() {
                sink.emit("spectrum.json", &document(serde_json::to_value(&r)?))?;
            } else {
                sink.text("spectrum_red.csv", &r.red.to_csv())?;
                sink.text("spectrum_blue.csv", &r.blue.to_csv())?;
                sink.text(
                    "spectrum_summary.csv",
                    &format!(
                        "nbar,nbar_sigma,p0,prepared_nbar,pulse_duration_us\n{},{},{},{},{}\n",
                        r.nbar,
                        r.nbar_sigma,
                        r.p0,
                        r.prepared_nbar,
                        r.pulse_duration * 1e6
                    ),
                )?;
            }
            if common.gnuplot {
                sink.text("spectrum.gp", output::SPECTRUM_GNUPLOT)?;
            }
        }
        Command::Flop { initial, duration_ms, points, n_max_fit, method, cool_ms } => {
            let req = FlopRequest {
                initial: initial.parse::<InitialFock>()?,
                cool_duration: cool_ms * 1e-3,
                duration: duration_ms * 1e-3,
                points: *points,
                shots,
                seed: cfg.seed,
                n_max_fit: *n_max_fit,
                method: match method {
                    MethodArg::Lsq => PopulationMethod::ConstrainedLsq,
                    MethodArg::Fourier => PopulationMethod::Fourier,
                },
            };
            let r = flop(&cfg, &req)?;
            log::info!(
                "{} maxima, Omega = 2pi x {:.1} Hz, p = {:?}",
                r.maxima,
                r.rabi.get("omega") / TAU,
                r.populations.p
            );
            if sink.json() {
                sink.emit("flop.json", &document(serde_json::to_value(&r)?))?;
            } else {
                sink.text("flop_trace.csv", &r.trace.to_csv())?;
                sink.text("flop_populations.csv", &r.populations.to_csv())?;
                sink.text("flop_fit.csv", &fit_csv(&r.rabi))?;
            }
            if common.gnuplot {
                sink.text("flop.gp", output::FLOP_GNUPLOT)?;
            }
        }
        Command::Heat { delays_ms, scan_points, cool_ms } => {
            let mut req = HeatRequest::new(delays_ms.iter().map(|d| d * 1e-3).collect());
            req.scan_points = *scan_points;
            req.cool_duration = cool_ms * 1e-3;
            req.shots = shots;
            req.seed = cfg.seed;
            let r = heat(&cfg, &req)?;
            log::info!(
                "d<n>/dt = {:.5} +- {:.5} /ms",
                r.slope_per_ms(),
                r.fit.error("slope").unwrap_or(f64::NAN) * 1e-3
            );
            if sink.json() {
                sink.emit("heat.json", &document(serde_json::to_value(&r)?))?;
            } else {
                let mut csv = String::from("delay_ms,nbar,sigma,p_red,p_blue,true_nbar\n");
                for p in &r.points {
                    csv.push_str(&format!(
                        "{},{},{},{},{},{}\n",
                        p.delay * 1e3,
                        p.nbar,
                        p.sigma,
                        p.p_red,
                        p.p_blue,
                        p.true_nbar
                    ));
                }
                sink.text("heat.csv", &csv)?;
                sink.text("heat_fit.csv", &fit_csv(&per_ms(&r.fit, &["slope"])))?;
            }
            if common.gnuplot {
                sink.text("heat.gp", output::HEAT_GNUPLOT)?;
            }
        }
        Command::Cool { durations_ms } => {
            let durations: Vec<f64> = durations_ms.iter().map(|d| d * 1e-3).collect();
            let r = cool(&cfg, &durations)?;
            log::info!("cooling rate {:.1} /s (converged: {})", r.fit.get("rate"), r.fit.converged);
            if sink.json() {
                sink.emit("cool.json", &document(serde_json::to_value(&r)?))?;
            } else {
                let mut csv = String::from("t_ms,mean_n\n");
                for (t, n) in &r.points {
                    csv.push_str(&format!("{},{n}\n", t * 1e3));
                }
                sink.text("cool.csv", &csv)?;
                sink.text("cool_fit.csv", &fit_csv(&per_ms(&r.fit, &["rate"])))?;
            }
            if common.gnuplot {
                sink.text("cool.gp", output::COOL_GNUPLOT)?;
            }
        }
        Command::Run => {
            let path = common.seq.as_ref().context("run needs --seq <file>")?;
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let seq = parse_sequence(&text)
                .map_err(iontrap::Error::from)
                .with_context(|| format!("parsing {}", path.display()))?;
            let timeline = compile(&seq, &cfg)?;
            let reps = if common.exact { 1 } else { cfg.repetitions };
            let est = estimate_excitation(&timeline, &cfg, &cfg.noise, reps, cfg.seed)?;
            let p_hat = if common.exact { est.mean_p_d } else { est.p_hat };
            let state = final_state(&timeline, &cfg, &cfg.noise)?;
            let mut phonons = state.phonon_distribution();
            phonons.truncate(10);
            log::info!("p = {:.4} [{:.4}, {:.4}] over {} shots", p_hat, est.ci_low, est.ci_high, est.repetitions);
            if sink.json() {
                let data = json!({
                    "sequence": print_sequence(&seq),
                    "timeline": timeline,
                    "estimate": est,
                    "exact_p_d": common.exact.then_some(est.mean_p_d),
                    "final_mean_phonon": state.mean_phonon(),
                    "final_phonon_distribution": phonons,
                });
                sink.emit("run.json", &document(data))?;
            } else {
                let (lo, hi) = if common.exact { (p_hat, p_hat) } else { (est.ci_low, est.ci_high) };
                sink.text(
                    "run.csv",
                    &format!(
                        "p_hat,ci_low,ci_high,shelved,repetitions,mean_p_d\n{p_hat},{lo},{hi},{},{},{}\n",
                        est.shelved, est.repetitions, est.mean_p_d
                    ),
                )?;
                let mut tl = String::from("start_us,duration_us,op\n");
                for op in &timeline.operations {
                    let kind = serde_json::to_value(op.op)?["op"].as_str().unwrap_or("").to_string();
                    tl.push_str(&format!("{},{},{kind}\n", op.start * 1e6, op.duration * 1e6));
                }
                sink.text("run_timeline.csv", &tl)?;
                let mut dist = String::from("n,p_n\n");
                for (n, p) in phonons.iter().enumerate() {
                    dist.push_str(&format!("{n},{p}\n"));
                }
                dist.push_str(&format!("mean,{}\n", state.mean_phonon()));
                sink.text("run_state.csv", &dist)?;
            }
        }
    }
    sink.finish()
}

/// Copy of a fit with the named rates converted from 1/s to 1/ms.
fn per_ms(fit: &FitResult, names: &[&str]) -> FitResult {
    let mut out = fit.clone();
    for name in names {
        if let Some(v) = out.parameters.get_mut(*name) {
            *v *= 1e-3;
        }
        if let Some(v) = out.standard_errors.as_mut().and_then(|e| e.get_mut(*name)) {
            *v *= 1e-3;
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_usage(&e) { 2 } else { 1 })
        }
    }
}

fn is_usage(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        matches!(
            c.downcast_ref::<iontrap::Error>(),
            Some(iontrap::Error::Config { .. } | iontrap::Error::Parse(_))
        )
    })
}
