use crate::error::{Error, Result};

/// Mean phonon number of a thermal state from its red and blue sideband
/// excitation: `nbar = R / (1 - R)` with `R = p_red / p_blue`.
pub fn thermometry_from_sidebands(p_red: f64, p_blue: f64) -> Result<f64> {
    if !p_red.is_finite() || !p_blue.is_finite() || p_red < 0.0 || p_blue > 1.0 {
        return Err(Error::Domain(format!("sideband excitations ({p_red}, {p_blue}) outside [0, 1]")));
    }
    if p_blue <= 0.0 {
        return Err(Error::Domain("blue sideband excitation is zero, ratio undefined".into()));
    }
    if p_red >= p_blue {
        return Err(Error::Model(format!(
            "red sideband excitation {p_red} is not below blue {p_blue}; state is not thermal"
        )));
    }
    let r = p_red / p_blue;
    Ok(r / (1.0 - r))
}

/// One-sigma error of the thermometry estimate from independent errors on
/// the two excitations.
pub fn thermometry_uncertainty(p_red: f64, sigma_red: f64, p_blue: f64, sigma_blue: f64) -> Result<f64> {
    thermometry_from_sidebands(p_red, p_blue)?;
    // nbar = r / (b - r)
    let d = (p_blue - p_red).powi(2);
    let d_red = p_blue / d;
    let d_blue = -p_red / d;
    Ok(((d_red * sigma_red).powi(2) + (d_blue * sigma_blue).powi(2)).sqrt())
}

pub fn ground_state_probability(nbar: f64) -> f64 {
    1.0 / (1.0 + nbar)
}

/// Off-resonant carrier excitation probability (time-averaged) when driving a
/// sideband `detuning` away from the carrier with Rabi frequency `omega0`.
pub fn carrier_leak(omega0: f64, detuning: f64) -> f64 {
    let w2 = omega0 * omega0;
    w2 / (2.0 * (w2 + detuning * detuning))
}

/// Smallest `nbar` distinguishable from zero when the red sideband signal
/// sits on a background of misclassified bright shots and carrier leak.
pub fn detection_floor(eps_bright: f64, carrier_leak: f64, p_blue: f64) -> Result<f64> {
    let background = eps_bright.max(0.0) + carrier_leak.max(0.0);
    thermometry_from_sidebands(background, p_blue)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{thermal_state, ElectronicLevel, FockSpace, ModeLabel};
    use proptest::prelude::*;

    #[test]
    fn inversion() {
        assert!((thermometry_from_sidebands(0.25, 0.5).unwrap() - 1.0).abs() < 1e-15);
        assert!((thermometry_from_sidebands(0.0, 0.4).unwrap()).abs() < 1e-15);
        assert!(matches!(thermometry_from_sidebands(0.5, 0.5), Err(Error::Model(_))));
        assert!(matches!(thermometry_from_sidebands(0.0, 0.0), Err(Error::Domain(_))));
        assert!(thermometry_from_sidebands(-0.1, 0.5).is_err());
    }

    #[test]
    fn ratio_from_thermal_state() {
        // oracle: weights of the thermal distribution give R = sum p_{n+1} / sum p_n
        let space = FockSpace::new(400, ModeLabel::Axial, 1.0).unwrap();
        let p = thermal_state(space, ElectronicLevel::S, 10.0).unwrap().phonon_distribution();
        let red: f64 = p[1..].iter().sum();
        let blue: f64 = p.iter().sum();
        let nbar = thermometry_from_sidebands(red * 0.3, blue * 0.3).unwrap();
        assert!((nbar - 10.0).abs() < 1e-6, "{nbar}");
    }

    #[test]
    fn near_ground_state() {
        let nbar = thermometry_from_sidebands(0.0005, 0.5).unwrap();
        assert!((ground_state_probability(nbar) - 0.999).abs() < 1e-6);
    }

    #[test]
    fn uncertainty_matches_finite_difference() {
        let (r, b) = (0.1, 0.4);
        let h = 1e-7;
        let dr = (thermometry_from_sidebands(r + h, b).unwrap() - thermometry_from_sidebands(r - h, b).unwrap()) / (2.0 * h);
        let db = (thermometry_from_sidebands(r, b + h).unwrap() - thermometry_from_sidebands(r, b - h).unwrap()) / (2.0 * h);
        let expected = ((dr * 0.01).powi(2) + (db * 0.02).powi(2)).sqrt();
        assert!((thermometry_uncertainty(r, 0.01, b, 0.02).unwrap() - expected).abs() < 1e-6);
    }

    #[test]
    fn floor() {
        let leak = carrier_leak(1.0, 0.0);
        assert_eq!(leak, 0.5);
        let leak = carrier_leak(2.0, 20.0);
        assert!((leak - 4.0 / (2.0 * 404.0)).abs() < 1e-15);
        let f = detection_floor(0.001, 0.0, 0.5).unwrap();
        assert!((f - 0.002 / 0.998).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn round_trip(nbar in 0.0f64..50.0, scale in 0.01f64..1.0) {
            let r = nbar / (1.0 + nbar);
            let got = thermometry_from_sidebands(r * scale, scale).unwrap();
            prop_assert!((got - nbar).abs() <= 1e-9 * (1.0 + nbar));
        }
    }
}
