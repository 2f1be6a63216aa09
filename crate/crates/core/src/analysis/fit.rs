use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub parameters: IndexMap<String, f64>,
    /// Present only for converged fits.
    pub standard_errors: Option<IndexMap<String, f64>>,
    pub residual_rms: f64,
    pub converged: bool,
}

impl FitResult {
    pub fn new(names: &[&str], values: &[f64], errors: Option<&[f64]>, residual_rms: f64, converged: bool) -> Self {
        let map = |v: &[f64]| names.iter().map(|n| n.to_string()).zip(v.iter().copied()).collect::<IndexMap<_, _>>();
        FitResult {
            parameters: map(values),
            standard_errors: if converged { errors.map(map) } else { None },
            residual_rms: residual_rms.max(0.0),
            converged,
        }
    }

    /// Value of a fitted parameter; panics on an unknown name.
    pub fn get(&self, name: &str) -> f64 {
        self.parameters[name]
    }

    pub fn error(&self, name: &str) -> Option<f64> {
        self.standard_errors.as_ref().and_then(|e| e.get(name).copied())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub(crate) struct LmOutcome {
    pub params: Vec<f64>,
    /// `s^2 (J^T W J)^-1` at the solution.
    pub covariance: Option<DMatrix<f64>>,
    pub rss: f64,
    pub converged: bool,
}

/// Weighted sum of squared residuals and the normal-equation pieces.
fn linearise<F>(model: &F, x: &[f64], y: &[f64], w: &[f64], p: &[f64]) -> (f64, DMatrix<f64>, DVector<f64>)
where
    F: Fn(&[f64], f64, &mut [f64]) -> f64,
{
    let k = p.len();
    let mut jtj = DMatrix::zeros(k, k);
    let mut jtr = DVector::zeros(k);
    let mut grad = vec![0.0; k];
    let mut rss = 0.0;
    for ((&xi, &yi), &wi) in x.iter().zip(y).zip(w) {
        let f = model(p, xi, &mut grad);
        let r = yi - f;
        rss += wi * r * r;
        for a in 0..k {
            jtr[a] += wi * grad[a] * r;
            for b in 0..=a {
                jtj[(a, b)] += wi * grad[a] * grad[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            jtj[(b, a)] = jtj[(a, b)];
        }
    }
    (rss, jtj, jtr)
}

fn weighted_rss<F>(model: &F, x: &[f64], y: &[f64], w: &[f64], p: &[f64]) -> f64
where
    F: Fn(&[f64], f64, &mut [f64]) -> f64,
{
    let mut grad = vec![0.0; p.len()];
    x.iter().zip(y).zip(w).map(|((&xi, &yi), &wi)| wi * (yi - model(p, xi, &mut grad)).powi(2)).sum()
}

/// Levenberg-Marquardt for `y ~ model(p, x)`. The model returns its value and
/// writes the gradient with respect to `p`.
pub(crate) fn levenberg_marquardt<F>(model: F, x: &[f64], y: &[f64], w: &[f64], p0: &[f64], max_iter: usize) -> LmOutcome
where
    F: Fn(&[f64], f64, &mut [f64]) -> f64,
{
    let k = p0.len();
    let mut p = p0.to_vec();
    let mut lambda = 1e-3;
    let (mut rss, mut jtj, mut jtr) = linearise(&model, x, y, w, &p);
    let mut converged = false;
    for _ in 0..max_iter {
        let mut damped = jtj.clone();
        for a in 0..k {
            damped[(a, a)] += lambda * jtj[(a, a)].max(1e-300);
        }
        let Some(step) = damped.lu().solve(&jtr) else {
            lambda *= 10.0;
            if lambda > 1e20 {
                break;
            }
            continue;
        };
        let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        let trial_rss = weighted_rss(&model, x, y, w, &trial);
        if trial_rss.is_finite() && trial_rss <= rss {
            let small_step = p.iter().zip(step.iter()).all(|(a, b)| b.abs() <= 1e-12 * (a.abs() + 1e-12));
            let small_gain = rss - trial_rss <= 1e-14 * rss;
            p = trial;
            (rss, jtj, jtr) = linearise(&model, x, y, w, &p);
            lambda = (lambda / 10.0).max(1e-15);
            if small_step || small_gain || rss == 0.0 {
                converged = true;
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e20 {
                // no downhill step left: accept as a minimum if the gradient is negligible
                converged = jtr.norm() <= 1e-8 * (jtj.norm() * p.iter().map(|v| v.abs()).sum::<f64>() + 1e-300);
                break;
            }
        }
    }
    let dof = x.len().saturating_sub(k);
    let s2 = if dof > 0 { rss / dof as f64 } else { 0.0 };
    let covariance = jtj.try_inverse().map(|inv| inv * s2);
    LmOutcome { params: p, covariance, rss, converged }
}

fn check_points(points: &[(f64, f64)], min: usize) -> Result<()> {
    if points.len() < min {
        return Err(Error::Domain(format!("need at least {min} points, got {}", points.len())));
    }
    if points.iter().any(|(t, y)| !t.is_finite() || !y.is_finite()) {
        return Err(Error::Domain("points must be finite".into()));
    }
    Ok(())
}

/// Ordinary least squares `y = slope t + intercept`.
pub fn fit_linear(points: &[(f64, f64)]) -> Result<FitResult> {
    check_points(points, 2)?;
    let n = points.len() as f64;
    let mt = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mt).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Degenerate("all abscissae are equal".into()));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mt;
    let rss: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let s2 = if points.len() > 2 { rss / (n - 2.0) } else { 0.0 };
    let se_slope = (s2 / sxx).sqrt();
    let se_intercept = (s2 * (1.0 / n + mt * mt / sxx)).sqrt();
    Ok(FitResult::new(
        &["slope", "intercept"],
        &[slope, intercept],
        Some(&[se_slope, se_intercept]),
        (rss / n).sqrt(),
        true,
    ))
}

/// Best `(c0, c1)` and residual for `y ~ c0 + c1 b` by linear least squares.
fn two_basis_lsq(b: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let n = y.len() as f64;
    let mb = b.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sbb: f64 = b.iter().map(|v| (v - mb).powi(2)).sum();
    if !(sbb > 1e-300) {
        return None;
    }
    let sby: f64 = b.iter().zip(y).map(|(u, v)| (u - mb) * (v - my)).sum();
    let c1 = sby / sbb;
    let c0 = my - c1 * mb;
    let rss = b.iter().zip(y).map(|(u, v)| (v - c0 - c1 * u).powi(2)).sum();
    Some((c0, c1, rss))
}

/// `y = asymptote + amplitude exp(-rate t)` by a scan over the rate with the
/// linear parameters eliminated, refined by Levenberg-Marquardt.
pub fn fit_exponential_decay(points: &[(f64, f64)]) -> Result<FitResult> {
    check_points(points, 4)?;
    if points.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::Domain("times must be strictly increasing".into()));
    }
    let names = ["rate", "asymptote", "amplitude"];
    let t: Vec<f64> = points.iter().map(|p| p.0).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    let n = y.len() as f64;
    let mean_y = y.iter().sum::<f64>() / n;
    let spread = y.iter().map(|v| (v - mean_y).abs()).fold(0.0, f64::max);
    if spread <= 1e-12 * (1.0 + mean_y.abs()) {
        return Ok(FitResult::new(&names, &[0.0, mean_y, 0.0], None, 0.0, false));
    }
    let t0 = t[0];
    let span = t[t.len() - 1] - t0;
    let min_gap = t.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let (lo, hi) = ((0.01 / span).ln(), (50.0 / min_gap).ln());
    let grid = 400;
    let eval = |log_k: f64| {
        let k = log_k.exp();
        let b: Vec<f64> = t.iter().map(|ti| (-k * (ti - t0)).exp()).collect();
        two_basis_lsq(&b, &y).map_or(f64::INFINITY, |r| r.2)
    };
    let mut best = (0, f64::INFINITY);
    for i in 0..=grid {
        let r = eval(lo + (hi - lo) * i as f64 / grid as f64);
        if r < best.1 {
            best = (i, r);
        }
    }
    let at_edge = best.0 == 0 || best.0 == grid;
    // golden-section refinement inside the neighbouring grid cells
    let step = (hi - lo) / grid as f64;
    let (mut a, mut b) = (lo + step * (best.0 as f64 - 1.0), lo + step * (best.0 as f64 + 1.0));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if eval(c) < eval(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let k = ((a + b) / 2.0).exp();
    let basis: Vec<f64> = t.iter().map(|ti| (-k * (ti - t0)).exp()).collect();
    let (c0, c1, _) = two_basis_lsq(&basis, &y).expect("nonconstant basis");
    let model = |p: &[f64], ti: f64, grad: &mut [f64]| {
        let e = (-p[0] * (ti - t0)).exp();
        grad[0] = -p[2] * (ti - t0) * e;
        grad[1] = 1.0;
        grad[2] = e;
        p[1] + p[2] * e
    };
    let w = vec![1.0; t.len()];
    let lm = levenberg_marquardt(model, &t, &y, &w, &[k, c0, c1], 200);
    let rate = lm.params[0];
    let amplitude = lm.params[2] * (rate * t0).exp();
    let converged = lm.converged && !at_edge && rate > 0.0 && rate.is_finite();
    let errors = lm.covariance.as_ref().map(|c| {
        let se_amp = c[(2, 2)].max(0.0).sqrt() * (rate * t0).exp();
        [c[(0, 0)].max(0.0).sqrt(), c[(1, 1)].max(0.0).sqrt(), se_amp]
    });
    Ok(FitResult::new(
        &names,
        &[rate, lm.params[1], amplitude],
        errors.as_ref().map(|e| &e[..]),
        (lm.rss / n).sqrt(),
        converged,
    ))
}

/// Dominant oscillation of a flopping trace, `y = offset - amplitude
/// cos(omega t) exp(-gamma t)`. The start value of `omega` is the peak of a
/// periodogram scan.
pub fn fit_rabi_frequency(times: &[f64], values: &[f64]) -> Result<FitResult> {
    if times.len() != values.len() {
        return Err(Error::Dimension("times and values differ in length".into()));
    }
    let points: Vec<(f64, f64)> = times.iter().copied().zip(values.iter().copied()).collect();
    check_points(&points, 8)?;
    let span = times[times.len() - 1] - times[0];
    let min_gap = times.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    if !(span > 0.0) || !(min_gap > 0.0) {
        return Err(Error::Domain("times must be strictly increasing".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let power = |omega: f64| {
        let (mut c, mut s) = (0.0, 0.0);
        for (t, y) in times.iter().zip(values) {
            c += (y - mean) * (omega * t).cos();
            s += (y - mean) * (omega * t).sin();
        }
        c * c + s * s
    };
    // up to the Nyquist frequency of the mean spacing, a quarter of the resolution per step
    let nyquist = std::f64::consts::PI * (times.len() - 1) as f64 / span;
    let d_omega = std::f64::consts::PI / (2.0 * span);
    let mut best = (d_omega, 0.0);
    let mut omega = 2.0 * d_omega;
    while omega < nyquist {
        let p = power(omega);
        if p > best.1 {
            best = (omega, p);
        }
        omega += d_omega;
    }
    let amp0 = values.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    let model = |p: &[f64], t: f64, grad: &mut [f64]| {
        let e = (-p[3] * t).exp();
        let (s, c) = (p[1] * t).sin_cos();
        grad[0] = 1.0;
        grad[1] = p[2] * t * s * e;
        grad[2] = -c * e;
        grad[3] = p[2] * t * c * e;
        p[0] - p[2] * c * e
    };
    let w = vec![1.0; times.len()];
    let lm = levenberg_marquardt(model, times, values, &w, &[mean, best.0, amp0, 1.0 / span], 500);
    let errors = lm.covariance.as_ref().map(|c| [c[(1, 1)], c[(0, 0)], c[(2, 2)], c[(3, 3)]].map(|v| v.max(0.0).sqrt()));
    let [offset, omega, amplitude, gamma] = [lm.params[0], lm.params[1], lm.params[2], lm.params[3]];
    Ok(FitResult::new(
        &["omega", "offset", "amplitude", "gamma"],
        &[omega, offset, amplitude, gamma],
        errors.as_ref().map(|e| &e[..]),
        (lm.rss / n).sqrt(),
        lm.converged && omega > 0.0,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn linear_exact_line() {
        let pts: Vec<(f64, f64)> = (0..5).map(|i| (40.0 * i as f64, 0.0053 * 40.0 * i as f64)).collect();
        let f = fit_linear(&pts).unwrap();
        assert!((f.get("slope") - 0.0053).abs() < 1e-15);
        assert!(f.get("intercept").abs() < 1e-14);
        assert!(f.error("slope").unwrap() < 1e-12);
        assert!(matches!(fit_linear(&[(1.0, 2.0), (1.0, 3.0)]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn linear_standard_errors_match_textbook() {
        // oracle: closed-form OLS on a tiny data set worked by hand
        let pts = [(0.0, 1.0), (1.0, 3.0), (2.0, 2.0), (3.0, 5.0)];
        let f = fit_linear(&pts).unwrap();
        // slope = sxy/sxx = 5.5/5 = 1.1, intercept = 2.75 - 1.1*1.5 = 1.1
        assert!((f.get("slope") - 1.1).abs() < 1e-12);
        assert!((f.get("intercept") - 1.1).abs() < 1e-12);
        // residuals -0.1, 0.8, -1.3, 0.6 -> rss 2.7, s2 1.35
        assert!((f.error("slope").unwrap() - (1.35f64 / 5.0).sqrt()).abs() < 1e-12);
        assert!((f.error("intercept").unwrap() - (1.35f64 * (0.25 + 2.25 / 5.0)).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn exponential_noiseless() {
        let pts: Vec<(f64, f64)> = (0..8)
            .map(|i| {
                let t = i as f64 * 0.2e-3;
                (t, 0.001 + 1.7 * (-5000.0 * t).exp())
            })
            .collect();
        let f = fit_exponential_decay(&pts).unwrap();
        assert!(f.converged);
        assert!((f.get("rate") / 5000.0 - 1.0).abs() < 1e-6, "rate {}", f.get("rate"));
        assert!((f.get("asymptote") - 0.001).abs() < 1e-8);
        assert!((f.get("amplitude") - 1.7).abs() < 1e-7);
    }

    #[test]
    fn exponential_with_offset_time_origin() {
        let pts: Vec<(f64, f64)> = (0..10).map(|i| (1.0 + i as f64, 3.0 - 2.0 * (-0.4 * (1.0 + i as f64)).exp())).collect();
        let f = fit_exponential_decay(&pts).unwrap();
        assert!((f.get("rate") - 0.4).abs() < 1e-7);
        assert!((f.get("amplitude") + 2.0).abs() < 1e-6);
    }

    #[test]
    fn constant_series_does_not_converge() {
        let pts: Vec<(f64, f64)> = (0..6).map(|i| (i as f64, 0.7)).collect();
        let f = fit_exponential_decay(&pts).unwrap();
        assert!(!f.converged);
        assert!(f.standard_errors.is_none());
        assert!(fit_exponential_decay(&pts[..3]).is_err());
    }

    #[test]
    fn rabi_frequency_of_damped_cosine() {
        let omega = std::f64::consts::TAU * 21e3;
        let t: Vec<f64> = (0..200).map(|i| i as f64 * 7e-6).collect();
        let y: Vec<f64> = t.iter().map(|t| 0.5 - 0.5 * (omega * t).cos() * (-700.0 * t).exp()).collect();
        let f = fit_rabi_frequency(&t, &y).unwrap();
        assert!(f.converged);
        assert!((f.get("omega") / omega - 1.0).abs() < 1e-9);
        assert!((f.get("gamma") - 700.0).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn exponential_recovers_parameters(rate in 0.5f64..20.0, asym in -1.0f64..1.0, amp in 0.2f64..3.0) {
            let pts: Vec<(f64, f64)> = (0..12).map(|i| {
                let t = i as f64 * 0.05;
                (t, asym + amp * (-rate * t).exp())
            }).collect();
            let f = fit_exponential_decay(&pts).unwrap();
            prop_assert!(f.converged);
            prop_assert!((f.get("rate") / rate - 1.0).abs() < 1e-3);
            prop_assert!((f.get("amplitude") / amp - 1.0).abs() < 1e-3);
        }

        #[test]
        fn linear_recovers_parameters(slope in -10.0f64..10.0, icpt in -5.0f64..5.0) {
            let pts: Vec<(f64, f64)> = (0..5).map(|i| (i as f64 * 0.04, icpt + slope * i as f64 * 0.04)).collect();
            let f = fit_linear(&pts).unwrap();
            prop_assert!((f.get("slope") - slope).abs() <= 1e-3 * slope.abs().max(1e-9) + 1e-9);
            prop_assert!((f.get("intercept") - icpt).abs() <= 1e-9 + 1e-3 * icpt.abs());
        }
    }
}
