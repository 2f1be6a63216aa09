use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use super::fit::FitResult;
use crate::dynamics::FloppingTrace;
use crate::error::{Error, Result};

pub const MAX_FIT_FOCK: usize = 6;
pub const DEFAULT_ALPHA: f64 = 0.7;
/// Minimum number of periods of the slowest component a trace must cover.
pub const MIN_PERIODS: f64 = 5.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopulationMethod {
    Fourier,
    #[default]
    ConstrainedLsq,
}

impl std::str::FromStr for PopulationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fourier" => Ok(PopulationMethod::Fourier),
            "constrained_lsq" | "lsq" => Ok(PopulationMethod::ConstrainedLsq),
            _ => Err(Error::Domain(format!("unknown population method `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationFit {
    pub p: Vec<f64>,
    /// One-sigma uncertainties of `p`; empty when unavailable.
    pub sigma: Vec<f64>,
    /// Decay rate of the `n = 0` component, 1/s.
    pub gamma0: f64,
    pub alpha: f64,
    pub method: PopulationMethod,
    pub fit: FitResult,
}

impl PopulationFit {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,p_n,sigma\n");
        for (n, p) in self.p.iter().enumerate() {
            let s = self.sigma.get(n).copied().unwrap_or(f64::NAN);
            out.push_str(&format!("{n},{p},{s}\n"));
        }
        out
    }

    /// Index of the largest population.
    pub fn dominant(&self) -> usize {
        self.p
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
            .0
    }
}

fn frequencies(omega0_eta: f64, n_max_fit: usize) -> Vec<f64> {
    (0..=n_max_fit).map(|n| omega0_eta * ((n + 1) as f64).sqrt()).collect()
}

fn decay_rates(gamma0: f64, alpha: f64, k: usize) -> Vec<f64> {
    (0..k).map(|n| gamma0 * ((n + 1) as f64).powf(alpha)).collect()
}

fn check_inputs(trace: &FloppingTrace, omega0_eta: f64, n_max_fit: usize) -> Result<f64> {
    if n_max_fit > MAX_FIT_FOCK {
        return Err(Error::Domain(format!("n_max_fit {n_max_fit} exceeds {MAX_FIT_FOCK}")));
    }
    if !(omega0_eta > 0.0) || !omega0_eta.is_finite() {
        return Err(Error::Domain(format!("omega0_eta must be positive, got {omega0_eta}")));
    }
    if trace.len() < n_max_fit + 3 {
        return Err(Error::Domain(format!("{} points cannot determine {} populations", trace.len(), n_max_fit + 1)));
    }
    let span = trace.times[trace.len() - 1] - trace.times[0];
    let periods = span * omega0_eta / TAU;
    if periods < MIN_PERIODS {
        return Err(Error::Domain(format!(
            "trace covers {periods:.2} periods of the slowest component, need {MIN_PERIODS}"
        )));
    }
    let omegas = frequencies(omega0_eta, n_max_fit);
    let resolution = TAU / span;
    if let Some(w) = omegas.windows(2).find(|w| w[1] - w[0] < resolution) {
        return Err(Error::Resolution(format!(
            "components at {:.4e} and {:.4e} rad/s are closer than the resolution {resolution:.4e} rad/s",
            w[0], w[1]
        )));
    }
    Ok(span)
}

/// Fock populations of the initial motional state from a sideband flopping
/// trace, using `gamma_n = gamma0 (n+1)^0.7`.
pub fn extract_populations(
    trace: &FloppingTrace,
    omega0_eta: f64,
    n_max_fit: usize,
    method: PopulationMethod,
) -> Result<PopulationFit> {
    extract_populations_with(trace, omega0_eta, n_max_fit, method, DEFAULT_ALPHA)
}

pub fn extract_populations_with(
    trace: &FloppingTrace,
    omega0_eta: f64,
    n_max_fit: usize,
    method: PopulationMethod,
    alpha: f64,
) -> Result<PopulationFit> {
    if !alpha.is_finite() {
        return Err(Error::Domain("alpha must be finite".into()));
    }
    let span = check_inputs(trace, omega0_eta, n_max_fit)?;
    match method {
        PopulationMethod::ConstrainedLsq => constrained_lsq(trace, omega0_eta, n_max_fit, alpha, span),
        PopulationMethod::Fourier => fourier(trace, omega0_eta, n_max_fit, alpha, span),
    }
}

/// Design matrix column n: `[1 - cos(Omega_n t) exp(-gamma_n t)] / 2`.
fn design(times: &[f64], omegas: &[f64], gammas: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(times.len(), omegas.len(), |i, n| {
        (1.0 - (omegas[n] * times[i]).cos() * (-gammas[n] * times[i]).exp()) / 2.0
    })
}

fn point_weights(trace: &FloppingTrace) -> Vec<f64> {
    if trace.shots_per_point == 0 {
        return vec![1.0; trace.len()];
    }
    let shots = trace.shots_per_point as f64;
    // binomial variance, regularised so that 0 and 1 keep finite weight
    trace
        .p_d
        .iter()
        .map(|&p| {
            let q = (p * shots + 0.5) / (shots + 1.0);
            shots / (q * (1.0 - q))
        })
        .collect()
}

struct QpSolution {
    p: Vec<f64>,
    objective: f64,
}

/// min p^T G p - 2 b^T p + c  subject to  p >= 0, sum p <= 1, by enumerating
/// the active sets.
fn box_simplex_qp(g: &DMatrix<f64>, b: &DVector<f64>, c: f64) -> QpSolution {
    let k = b.len();
    let objective = |p: &[f64]| {
        let v = DVector::from_column_slice(p);
        (v.transpose() * g * &v)[(0, 0)] - 2.0 * b.dot(&v) + c
    };
    let mut best = QpSolution { p: vec![0.0; k], objective: c };
    for mask in 1u32..(1 << k) {
        let free: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let m = free.len();
        for on_simplex in [false, true] {
            let dim = m + on_simplex as usize;
            let mut a = DMatrix::zeros(dim, dim);
            let mut rhs = DVector::zeros(dim);
            for (r, &i) in free.iter().enumerate() {
                rhs[r] = b[i];
                for (s, &j) in free.iter().enumerate() {
                    a[(r, s)] = g[(i, j)];
                }
                if on_simplex {
                    a[(r, m)] = 1.0;
                    a[(m, r)] = 1.0;
                }
            }
            if on_simplex {
                rhs[m] = 1.0;
            }
            let Some(x) = a.lu().solve(&rhs) else { continue };
            if x.iter().take(m).any(|v| !v.is_finite() || *v < -1e-12) {
                continue;
            }
            let mut p = vec![0.0; k];
            for (r, &i) in free.iter().enumerate() {
                p[i] = x[r].max(0.0);
            }
            if p.iter().sum::<f64>() > 1.0 + 1e-12 {
                continue;
            }
            let f = objective(&p);
            if f < best.objective - 1e-15 * best.objective.abs() {
                best = QpSolution { p, objective: f };
            }
        }
    }
    best
}

fn constrained_lsq(trace: &FloppingTrace, omega0_eta: f64, n_max_fit: usize, alpha: f64, span: f64) -> Result<PopulationFit> {
    let k = n_max_fit + 1;
    let omegas = frequencies(omega0_eta, n_max_fit);
    let w = point_weights(trace);
    let y = DVector::from_column_slice(&trace.p_d);
    let wy = DVector::from_iterator(y.len(), y.iter().zip(&w).map(|(a, b)| a * b));
    let c = y.dot(&wy);
    let solve = |gamma0: f64| {
        let a = design(&trace.times, &omegas, &decay_rates(gamma0, alpha, k));
        let mut wa = a.clone();
        for (i, wi) in w.iter().enumerate() {
            wa.row_mut(i).scale_mut(*wi);
        }
        let g = a.transpose() * &wa;
        let b = a.transpose() * &wy;
        (box_simplex_qp(&g, &b, c), g)
    };
    let profile = |gamma0: f64| solve(gamma0).0.objective;

    let upper = 40.0 / span;
    let mut grid = vec![0.0];
    let count = 60;
    for i in 0..count {
        grid.push(upper * (1e-4f64).powf(1.0 - i as f64 / (count - 1) as f64));
    }
    let values: Vec<f64> = grid.iter().map(|&g| profile(g)).collect();
    let (best_i, _) = values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |b, (i, &v)| if v < b.1 { (i, v) } else { b });
    let (mut lo, mut hi) = (grid[best_i.saturating_sub(1)], grid[(best_i + 1).min(grid.len() - 1)]);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut x1, mut x2) = (hi - phi * (hi - lo), lo + phi * (hi - lo));
    let (mut f1, mut f2) = (profile(x1), profile(x2));
    for _ in 0..80 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = profile(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = profile(x2);
        }
    }
    let refined = if f1 < f2 { (x1, f1) } else { (x2, f2) };
    let gamma0 = if refined.1 < values[best_i] { refined.0 } else { grid[best_i] };
    let (qp, g) = solve(gamma0);

    let n = trace.len();
    let model = design(&trace.times, &omegas, &decay_rates(gamma0, alpha, k)) * DVector::from_column_slice(&qp.p);
    let rss: f64 = model.iter().zip(trace.p_d.iter()).map(|(m, y)| (y - m).powi(2)).sum();
    let dof = n.saturating_sub(k + 1).max(1) as f64;
    // weighted data carry their own variance scale
    let scale = if trace.shots_per_point == 0 { qp.objective.max(0.0) / dof } else { 1.0 };
    let cov = g.clone().try_inverse().map(|inv| inv * scale);
    let sigma: Vec<f64> = cov.as_ref().map_or_else(Vec::new, |m| (0..k).map(|i| m[(i, i)].max(0.0).sqrt()).collect());

    // curvature of the profile in gamma0
    let h = (gamma0 * 1e-3).max(1e-3 / span);
    let (fm, f0, fp) = (profile((gamma0 - h).max(0.0)), qp.objective, profile(gamma0 + h));
    let step_down = gamma0 - (gamma0 - h).max(0.0);
    let curvature = if step_down > 0.0 { (fp - 2.0 * f0 + fm) / (h * h) } else { 2.0 * (fp - f0) / (h * h) };
    let gamma_err = if curvature > 0.0 { (2.0 * scale / curvature).sqrt() } else { f64::NAN };

    let converged = gamma0 < 0.999 * upper && qp.p.iter().any(|v| *v > 0.0);
    let mut names: Vec<String> = (0..k).map(|i| format!("p{i}")).collect();
    names.push("gamma0".into());
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut values_out = qp.p.clone();
    values_out.push(gamma0);
    let mut errors = if sigma.len() == k { sigma.clone() } else { vec![f64::NAN; k] };
    errors.push(gamma_err);
    let fit = FitResult::new(&name_refs, &values_out, Some(&errors), (rss / n as f64).sqrt(), converged);
    Ok(PopulationFit { p: qp.p, sigma, gamma0, alpha, method: PopulationMethod::ConstrainedLsq, fit })
}

fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n).map(|i| 0.5 * (1.0 - (TAU * i as f64 / (n - 1) as f64).cos())).collect()
}

/// Magnitude at fractional bin `kf`, from the highest local sample within two
/// bins refined by a parabola through its neighbours.
fn interpolated_peak(mag: &[f64], kf: f64) -> f64 {
    let centre = kf.round() as isize;
    let last = mag.len() as isize - 2;
    let clampi = |i: isize| i.clamp(1, last) as usize;
    let k0 = (centre - 2..=centre + 2).map(clampi).fold(clampi(centre), |b, i| if mag[i] > mag[b] { i } else { b });
    let (m_l, m_0, m_r) = (mag[k0 - 1], mag[k0], mag[k0 + 1]);
    let denom = m_l - 2.0 * m_0 + m_r;
    if denom >= 0.0 {
        return m_0;
    }
    let delta = (0.5 * (m_l - m_r) / denom).clamp(-1.0, 1.0);
    m_0 - 0.25 * (m_l - m_r) * delta
}

fn fourier(trace: &FloppingTrace, omega0_eta: f64, n_max_fit: usize, alpha: f64, span: f64) -> Result<PopulationFit> {
    let n = trace.len();
    let dt = span / (n - 1) as f64;
    if trace.times.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-6 * dt) {
        return Err(Error::Domain("the Fourier method needs uniformly spaced times".into()));
    }
    let k = n_max_fit + 1;
    let omegas = frequencies(omega0_eta, n_max_fit);
    let nyquist = PI / dt;
    if omegas[k - 1] >= nyquist {
        return Err(Error::Resolution(format!(
            "component at {:.4e} rad/s is above the Nyquist frequency {nyquist:.4e} rad/s",
            omegas[k - 1]
        )));
    }
    let window = hann(n);
    let wsum: f64 = window.iter().sum();
    let weighted_mean = window.iter().zip(&trace.p_d).map(|(w, y)| w * y).sum::<f64>() / wsum;
    let padded = 4 * n;
    let mut buf: Vec<Complex<f64>> = (0..padded)
        .map(|i| if i < n { Complex::new((trace.p_d[i] - weighted_mean) * window[i], 0.0) } else { Complex::new(0.0, 0.0) })
        .collect();
    FftPlanner::new().plan_fft_forward(padded).process(&mut buf);
    let mag: Vec<f64> = buf[..padded / 2 + 1].iter().map(|c| c.norm()).collect();
    let bin = |omega: f64| omega * padded as f64 * dt / TAU;
    let peaks: Vec<f64> = omegas.iter().map(|&w| interpolated_peak(&mag, bin(w))).collect();

    let envelope = |gamma: f64| window.iter().zip(&trace.times).map(|(w, t)| w * (-gamma * t).exp()).sum::<f64>();
    let raw = |gamma0: f64| -> Vec<f64> {
        decay_rates(gamma0, alpha, k).iter().zip(&peaks).map(|(&g, &m)| 4.0 * m / envelope(g)).collect()
    };
    // the DC level of the trace fixes the total mass and with it gamma0
    let mismatch = |gamma0: f64| {
        let p = raw(gamma0);
        let gammas = decay_rates(gamma0, alpha, k);
        let predicted: f64 = p
            .iter()
            .zip(omegas.iter().zip(&gammas))
            .map(|(pn, (w, g))| {
                let c = window.iter().zip(&trace.times).map(|(wi, t)| wi * (w * t).cos() * (-g * t).exp()).sum::<f64>() / wsum;
                pn * (1.0 - c) / 2.0
            })
            .sum();
        predicted - weighted_mean
    };
    let upper = 40.0 / span;
    let (gamma0, converged) = if mismatch(0.0) >= 0.0 {
        (0.0, true)
    } else if mismatch(upper) < 0.0 {
        (upper, false)
    } else {
        let (mut lo, mut hi) = (0.0, upper);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mismatch(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (0.5 * (lo + hi), true)
    };
    let unnormalised = raw(gamma0);
    let total: f64 = unnormalised.iter().sum();
    let p: Vec<f64> = if total > 0.0 { unnormalised.iter().map(|v| v / total).collect() } else { vec![0.0; k] };

    let gammas = decay_rates(gamma0, alpha, k);
    let model = design(&trace.times, &omegas, &gammas) * DVector::from_column_slice(&p);
    let rss: f64 = model.iter().zip(trace.p_d.iter()).map(|(m, y)| (y - m).powi(2)).sum();
    let sigma_y = if trace.shots_per_point == 0 {
        (rss / n as f64).sqrt()
    } else {
        let s = trace.shots_per_point as f64;
        (trace.p_d.iter().map(|q| q * (1.0 - q) / s).sum::<f64>() / n as f64).sqrt()
    };
    let noise_amp = sigma_y * (window.iter().map(|w| w * w).sum::<f64>() / 2.0).sqrt();
    let sigma: Vec<f64> = gammas.iter().map(|&g| 4.0 * noise_amp / envelope(g) / total.max(1e-300)).collect();

    let mut names: Vec<String> = (0..k).map(|i| format!("p{i}")).collect();
    names.push("gamma0".into());
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut values = p.clone();
    values.push(gamma0);
    let mut errors = sigma.clone();
    errors.push(f64::NAN);
    let fit = FitResult::new(&name_refs, &values, Some(&errors), (rss / n as f64).sqrt(), converged && total > 0.0);
    Ok(PopulationFit { p, sigma, gamma0, alpha, method: PopulationMethod::Fourier, fit })
}
