use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::Value;

use iontrap::analysis::FitResult;

/// Destination of command output: files in a directory, or stdout with a
/// `# name` line ahead of each block.
pub struct Sink {
    dir: Option<PathBuf>,
    json: bool,
    blocks: Vec<(String, String)>,
}

impl Sink {
    pub fn new(dir: Option<&Path>, json: bool) -> Result<Self> {
        if let Some(d) = dir {
            std::fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
        }
        Ok(Sink { dir: dir.map(Path::to_path_buf), json, blocks: Vec::new() })
    }

    pub fn json(&self) -> bool {
        self.json
    }

    pub fn text(&mut self, name: &str, body: &str) -> Result<()> {
        self.blocks.push((name.to_string(), body.to_string()));
        Ok(())
    }

    pub fn emit(&mut self, name: &str, value: &Value) -> Result<()> {
        let mut body = serde_json::to_string_pretty(value)?;
        body.push('\n');
        self.text(name, &body)
    }

    pub fn finish(self) -> Result<()> {
        match &self.dir {
            Some(dir) => {
                for (name, body) in &self.blocks {
                    let path = dir.join(name);
                    std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
                    log::info!("wrote {}", path.display());
                }
            }
            None => {
                let stdout = std::io::stdout();
                let mut out = stdout.lock();
                let several = self.blocks.len() > 1;
                for (i, (name, body)) in self.blocks.iter().enumerate() {
                    if several {
                        if i > 0 {
                            writeln!(out)?;
                        }
                        writeln!(out, "# {name}")?;
                    }
                    out.write_all(body.as_bytes())?;
                }
            }
        }
        Ok(())
    }
}

pub fn fit_csv(fit: &FitResult) -> String {
    let mut out = String::from("parameter,value,standard_error\n");
    for (name, value) in &fit.parameters {
        let err = fit.error(name).map_or(String::new(), |e| e.to_string());
        out.push_str(&format!("{name},{value},{err}\n"));
    }
    out.push_str(&format!("residual_rms,{},\nconverged,{},\n", fit.residual_rms, fit.converged));
    out
}

pub const SPECTRUM_GNUPLOT: &str = r#"set datafile separator ","
set xlabel "detuning from sideband (kHz)"
set ylabel "D state excitation"
set key top right
plot "spectrum_red.csv" every ::1 using ($1/6283.185307):2 with linespoints title "red", \
     "spectrum_blue.csv" every ::1 using ($1/6283.185307):2 with linespoints title "blue"
"#;

pub const FLOP_GNUPLOT: &str = r#"set datafile separator ","
set xlabel "pulse length (us)"
set ylabel "D state excitation"
plot "flop_trace.csv" every ::1 using ($1*1e6):2 with lines notitle
"#;

pub const HEAT_GNUPLOT: &str = r#"set datafile separator ","
set xlabel "delay (ms)"
set ylabel "mean phonon number"
f(x) = a*x + b
fit f(x) "heat.csv" every ::1 using 1:2:3 yerrors via a, b
plot "heat.csv" every ::1 using 1:2:3 with yerrorbars title "thermometry", f(x) title "linear fit"
"#;

pub const COOL_GNUPLOT: &str = r#"set datafile separator ","
set xlabel "cooling time (ms)"
set ylabel "mean phonon number"
set logscale y
plot "cool.csv" every ::1 using 1:2 with linespoints notitle
"#;
