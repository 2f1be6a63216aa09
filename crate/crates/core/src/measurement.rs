//! Electron-shelving detection: Poisson photon counts, thresholding, and
//! exact discrimination errors.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::D_LIFETIME;
use crate::seeding::shot_rng;

/// Means at or above this are sampled with `rand_distr` instead of CDF
/// inversion.
const INVERSION_LIMIT: f64 = 60.0;

/// Discrimination error above which a threshold choice is reported as poor.
pub const POOR_DISCRIMINATION: f64 = 1e-2;

/// Normal quantile for a central 68.27 % interval.
pub const Z_68: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionParams {
    /// Expected counts from a bright (S) ion, signal plus background.
    pub bright_mean: f64,
    /// Expected background counts from a shelved (D) ion.
    pub dark_mean: f64,
    /// Counting window, s.
    pub window: f64,
    /// Counts at or above this are classified bright.
    pub threshold: u64,
    /// Let the shelved ion decay during the window.
    pub include_decay: bool,
    pub d_lifetime: f64,
}

impl DetectionParams {
    pub fn new(bright_mean: f64, dark_mean: f64, window: f64, threshold: u64) -> Result<Self> {
        let p = DetectionParams {
            bright_mean,
            dark_mean,
            window,
            threshold,
            include_decay: false,
            d_lifetime: D_LIFETIME,
        };
        p.validate()?;
        Ok(p)
    }

    /// Typical setting: 40 signal photons on 2 background photons in 2 ms.
    pub fn typical() -> Self {
        DetectionParams::new(42.0, 2.0, 2e-3, 12).expect("valid defaults")
    }

    pub fn with_decay(mut self, include: bool) -> Self {
        self.include_decay = include;
        self
    }

    pub fn with_threshold(mut self, threshold: u64) -> Result<Self> {
        self.threshold = threshold;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dark_mean >= 0.0) || !self.bright_mean.is_finite() {
            return Err(Error::Domain(format!("dark mean must be >= 0, got {}", self.dark_mean)));
        }
        if !(self.bright_mean > self.dark_mean) {
            return Err(Error::Domain(format!(
                "bright mean {} must exceed dark mean {}",
                self.bright_mean, self.dark_mean
            )));
        }
        if !(self.window > 0.0) {
            return Err(Error::Domain(format!("detection window must be positive, got {}", self.window)));
        }
        if self.threshold < 1 {
            return Err(Error::Domain("threshold must be >= 1".into()));
        }
        if !(self.d_lifetime > 0.0) {
            return Err(Error::Domain("D lifetime must be positive".into()));
        }
        Ok(())
    }

    /// Mean counts of a shelved ion that decays to S at `t` into the window.
    fn mean_after_decay(&self, t: f64) -> f64 {
        self.dark_mean + (self.bright_mean - self.dark_mean) * (self.window - t) / self.window
    }
}

/// Poisson probabilities `P[X = j]` for `j = 0..len`, by recurrence.
fn poisson_pmf(mean: f64, len: u64) -> impl Iterator<Item = f64> {
    let mut p = (-mean).exp();
    (0..len).map(move |j| {
        if j > 0 {
            p *= mean / j as f64;
        }
        p
    })
}

/// `P[X < k]` for `X ~ Poisson(mean)`.
pub fn poisson_cdf_below(mean: f64, k: u64) -> f64 {
    if k == 0 {
        return 0.0;
    }
    if mean == 0.0 {
        return 1.0;
    }
    if (k as f64) <= mean {
        poisson_pmf(mean, k).sum::<f64>().min(1.0)
    } else {
        (1.0 - poisson_tail_from(mean, k)).max(0.0)
    }
}

/// `P[X >= k]` for `X ~ Poisson(mean)`, summed directly over the upper tail
/// when that is the small side.
pub fn poisson_tail_from(mean: f64, k: u64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if mean == 0.0 {
        return 0.0;
    }
    if (k as f64) <= mean {
        return (1.0 - poisson_cdf_below(mean, k)).max(0.0);
    }
    let mut term = poisson_pmf(mean, k + 1).last().unwrap_or(0.0);
    let mut sum = 0.0;
    let mut j = k;
    while term > 0.0 && term > sum * 1e-18 {
        sum += term;
        j += 1;
        term *= mean / j as f64;
    }
    sum.min(1.0)
}

/// Poisson draw by inversion of the exact CDF (means below 60) or by
/// `rand_distr` otherwise.
pub fn sample_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    if mean >= INVERSION_LIMIT {
        return Poisson::new(mean).expect("positive mean").sample(rng) as u64;
    }
    let u: f64 = rng.random();
    let mut p = (-mean).exp();
    let mut cdf = p;
    let mut k = 0u64;
    while u >= cdf {
        k += 1;
        p *= mean / k as f64;
        if p == 0.0 {
            break;
        }
        cdf += p;
    }
    k
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    /// Whether the ion was actually shelved.
    pub shelved: bool,
    pub count: u64,
    pub classified_shelved: bool,
}

pub fn sample_detection_with<R: Rng + ?Sized>(
    shelved_probability: f64,
    params: &DetectionParams,
    rng: &mut R,
) -> Result<DetectionOutcome> {
    if !(0.0..=1.0).contains(&shelved_probability) {
        return Err(Error::Domain(format!("shelved probability {shelved_probability} outside [0, 1]")));
    }
    params.validate()?;
    let shelved = rng.random::<f64>() < shelved_probability;
    let mean = if !shelved {
        params.bright_mean
    } else if params.include_decay {
        let t = -params.d_lifetime * (1.0 - rng.random::<f64>()).ln();
        if t < params.window {
            params.mean_after_decay(t)
        } else {
            params.dark_mean
        }
    } else {
        params.dark_mean
    };
    let count = sample_poisson(mean, rng);
    Ok(DetectionOutcome { shelved, count, classified_shelved: count < params.threshold })
}

/// One detection with its own generator seeded from `rng_seed`.
pub fn sample_detection(shelved_probability: f64, params: &DetectionParams, rng_seed: u64) -> Result<DetectionOutcome> {
    sample_detection_with(shelved_probability, params, &mut shot_rng(rng_seed, 0, 0))
}

/// Exact misclassification probabilities `(eps_bright, eps_dark)`: a bright
/// ion counted below threshold, a shelved ion counted at or above it.
pub fn discrimination_error(params: &DetectionParams) -> (f64, f64) {
    let eps_bright = poisson_cdf_below(params.bright_mean, params.threshold);
    let eps_dark = if params.include_decay {
        // Composite Simpson over the decay time inside the window.
        let intervals = 400;
        let h = params.window / intervals as f64;
        let rate = 1.0 / params.d_lifetime;
        let f = |t: f64| rate * (-rate * t).exp() * poisson_tail_from(params.mean_after_decay(t), params.threshold);
        let mut integral = f(0.0) + f(params.window);
        for i in 1..intervals {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            integral += w * f(i as f64 * h);
        }
        integral *= h / 3.0;
        let survive = (-params.window * rate).exp();
        survive * poisson_tail_from(params.dark_mean, params.threshold) + integral
    } else {
        poisson_tail_from(params.dark_mean, params.threshold)
    };
    (eps_bright, eps_dark)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub threshold: u64,
    pub eps_bright: f64,
    pub eps_dark: f64,
}

impl ThresholdChoice {
    pub fn max_error(&self) -> f64 {
        self.eps_bright.max(self.eps_dark)
    }

    pub fn is_poor(&self) -> bool {
        self.max_error() > POOR_DISCRIMINATION
    }
}

/// Threshold minimising `max(eps_bright, eps_dark)`; ties go to the smaller
/// threshold. The threshold stored in `params` is ignored.
pub fn choose_threshold(params: &DetectionParams) -> Result<ThresholdChoice> {
    params.with_threshold(1)?;
    let upper = (params.bright_mean + 10.0 * params.bright_mean.sqrt() + 10.0).ceil() as u64;
    let mut best: Option<ThresholdChoice> = None;
    for threshold in 1..=upper {
        let (eps_bright, eps_dark) = discrimination_error(&DetectionParams { threshold, ..*params });
        let cand = ThresholdChoice { threshold, eps_bright, eps_dark };
        if best.is_none_or(|b| cand.max_error() < b.max_error()) {
            best = Some(cand);
        }
    }
    let best = best.expect("at least one threshold scanned");
    if best.is_poor() {
        log::warn!(
            "best threshold {} still misclassifies with probability {:.3e}",
            best.threshold,
            best.max_error()
        );
    }
    Ok(best)
}

/// Wilson score interval for `successes` out of `trials` at normal quantile `z`.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Count histogram as `(count, relative frequency)` rows in count order.
pub fn detection_histogram(counts: &[u64]) -> Vec<(u64, f64)> {
    let mut bins: BTreeMap<u64, u64> = BTreeMap::new();
    for &c in counts {
        *bins.entry(c).or_default() += 1;
    }
    let total = counts.len().max(1) as f64;
    bins.into_iter().map(|(c, k)| (c, k as f64 / total)).collect()
}

pub fn histogram_csv(histogram: &[(u64, f64)]) -> String {
    let mut out = String::from("count,frequency\n");
    for (c, f) in histogram {
        out.push_str(&format!("{c},{f}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_cdf_below(mean: f64, k: u64) -> f64 {
        // independent oracle: log-space pmf via lgamma-free factorial sum
        (0..k)
            .map(|j| {
                let log_fact: f64 = (1..=j).map(|i| (i as f64).ln()).sum();
                (-mean + j as f64 * mean.ln() - log_fact).exp()
            })
            .sum()
    }

    #[test]
    fn cdf_matches_log_space_oracle() {
        for mean in [0.5, 2.0, 10.0, 42.0] {
            for k in [1, 3, 12, 30, 60] {
                let a = poisson_cdf_below(mean, k);
                let b = brute_cdf_below(mean, k);
                assert!((a - b).abs() < 1e-13, "mean {mean} k {k}: {a} vs {b}");
                assert!((poisson_tail_from(mean, k) - (1.0 - b)).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn paper_detection_errors() {
        let p = DetectionParams::typical();
        let (eb, ed) = discrimination_error(&p);
        // P[Poisson(2) >= 12] and P[Poisson(42) < 12] by the oracle
        let ed_oracle = 1.0 - brute_cdf_below(2.0, 12);
        let eb_oracle = brute_cdf_below(42.0, 12);
        assert!((ed - ed_oracle).abs() < 1e-15 + 1e-9 * ed_oracle);
        assert!((eb - eb_oracle).abs() < 1e-15 + 1e-9 * eb_oracle);
        assert!(ed < 2e-6 && eb < 1e-6, "eps_dark {ed:e}, eps_bright {eb:e}");
        assert!(ed < 1e-4 && eb < 1e-4);
    }

    #[test]
    fn limiting_cases() {
        let p = DetectionParams::new(10.0, 0.0, 2e-3, 1).unwrap();
        assert_eq!(discrimination_error(&p).1, 0.0);
        let far = DetectionParams::new(42.0, 2.0, 2e-3, 400).unwrap();
        let (eb, ed) = discrimination_error(&far);
        assert!((eb - 1.0).abs() < 1e-12);
        assert!(ed < 1e-300);
        assert!(DetectionParams::new(2.0, 2.0, 2e-3, 5).is_err());
        assert!(DetectionParams::new(4.0, 2.0, 2e-3, 0).is_err());
        assert!(DetectionParams::new(4.0, 2.0, 0.0, 1).is_err());
    }

    #[test]
    fn threshold_choice_is_the_exhaustive_minimum() {
        let base = DetectionParams::typical();
        let choice = choose_threshold(&base).unwrap();
        assert!((10..=14).contains(&choice.threshold), "threshold {}", choice.threshold);
        let scan_best = (1..=200)
            .map(|t| {
                let (a, b) = discrimination_error(&DetectionParams { threshold: t, ..base });
                a.max(b)
            })
            .fold(f64::INFINITY, f64::min);
        assert_eq!(choice.max_error(), scan_best);

        let easy = DetectionParams::new(10.0, 0.0, 2e-3, 1).unwrap();
        assert_eq!(choose_threshold(&easy).unwrap().threshold, 1);

        let hard = DetectionParams::new(4.0, 2.0, 2e-3, 1).unwrap();
        let c = choose_threshold(&hard).unwrap();
        assert!(c.is_poor());
        let scan_best = (1..=200)
            .map(|t| {
                let (a, b) = discrimination_error(&DetectionParams { threshold: t, ..hard });
                a.max(b)
            })
            .fold(f64::INFINITY, f64::min);
        assert_eq!(c.max_error(), scan_best);
    }

    #[test]
    fn sampled_detection_matches_exact_errors() {
        let p = DetectionParams::new(8.0, 2.0, 2e-3, 5).unwrap();
        let (eb, ed) = discrimination_error(&p);
        let n = 200_000u64;
        let (mut wrong_dark, mut wrong_bright) = (0u64, 0u64);
        for i in 0..n {
            let mut rng = shot_rng(99, i, 0);
            if !sample_detection_with(1.0, &p, &mut rng).unwrap().classified_shelved {
                wrong_dark += 1;
            }
            let mut rng = shot_rng(99, i, 1);
            if sample_detection_with(0.0, &p, &mut rng).unwrap().classified_shelved {
                wrong_bright += 1;
            }
        }
        for (k, eps) in [(wrong_dark, ed), (wrong_bright, eb)] {
            let sigma = (eps * (1.0 - eps) / n as f64).sqrt();
            assert!((k as f64 / n as f64 - eps).abs() < 4.0 * sigma);
        }
    }

    #[test]
    fn decay_raises_dark_error() {
        let p = DetectionParams::typical();
        let with = p.with_decay(true);
        assert!(discrimination_error(&with).1 > discrimination_error(&p).1);
        // ~0.2 % of shelved ions decay within 2 ms; a fraction of those cross threshold
        assert!(discrimination_error(&with).1 < 2e-3);
    }

    #[test]
    fn wilson_interval_edges() {
        let (lo, hi) = wilson_interval(0, 400, Z_68);
        assert_eq!(lo, 0.0);
        assert!(hi < 0.01);
        let (lo, hi) = wilson_interval(200, 400, Z_68);
        assert!(lo < 0.5 && hi > 0.5);
        assert!((hi - lo - 0.05).abs() < 1e-3);
    }

    #[test]
    fn histogram_frequencies_sum_to_one() {
        let h = detection_histogram(&[1, 2, 2, 40, 41, 41]);
        assert_eq!(h.first().unwrap().0, 1);
        assert!((h.iter().map(|(_, f)| f).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(histogram_csv(&h).starts_with("count,frequency\n"));
    }

    proptest! {
        #[test]
        fn errors_are_monotone_in_threshold(bright in 3.0f64..80.0, frac in 0.0f64..0.9, t in 1u64..120) {
            let dark = bright * frac;
            let p = DetectionParams::new(bright, dark, 2e-3, t).unwrap();
            let q = DetectionParams { threshold: t + 1, ..p };
            let (b0, d0) = discrimination_error(&p);
            let (b1, d1) = discrimination_error(&q);
            prop_assert!(b1 >= b0 - 1e-15);
            prop_assert!(d1 <= d0 + 1e-15);
        }

        #[test]
        fn sampling_is_deterministic(seed in any::<u64>(), prob in 0.0f64..1.0) {
            let p = DetectionParams::typical();
            prop_assert_eq!(sample_detection(prob, &p, seed).unwrap(), sample_detection(prob, &p, seed).unwrap());
        }
    }
}
