//! Heating rate and electric-field noise conversions, scaling-law fits and
//! the technical noise budget.
//!
//! All spectral densities are one-sided. `S_E = 4 m ħ ω ṅ / q²`.

use serde::{Deserialize, Serialize};

use crate::constants::{HBAR, K_B, TWO_PI};
use crate::pseudopotential::IonSpecies;
use crate::stats::{weighted_line_fit, Estimate};
use crate::{Error, Result};

/// 2π · 1 MHz, the normalization frequency.
pub const OMEGA_1MHZ: f64 = TWO_PI * 1e6;

/// Room-temperature field noise used for comparison, V²/m²/Hz.
pub const ROOM_TEMPERATURE_S_E: f64 = 30e-8;

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!("{name} must be > 0, got {v}")))
    }
}

fn conversion_factor(omega: f64, species: &IonSpecies) -> Result<f64> {
    positive("omega", omega)?;
    species.validate()?;
    Ok(4.0 * species.mass * HBAR * omega / (species.charge * species.charge))
}

/// Field noise density from a heating rate, V²/m²/Hz.
pub fn noise_from_heating(ndot: f64, omega: f64, species: &IonSpecies) -> Result<f64> {
    Ok(conversion_factor(omega, species)? * ndot)
}

/// Heating rate from a field noise density, quanta/s.
pub fn heating_from_noise(s_e: f64, omega: f64, species: &IonSpecies) -> Result<f64> {
    Ok(s_e / conversion_factor(omega, species)?)
}

/// Value the `ω^α` model predicts at `omega_ref` given `s_e` measured at `omega`.
pub fn normalize_frequency(s_e: f64, omega: f64, omega_ref: f64, alpha: f64) -> Result<f64> {
    positive("omega", omega)?;
    positive("omega_ref", omega_ref)?;
    Ok(s_e * (omega / omega_ref).powf(-alpha))
}

/// Johnson noise `4 k_B T R`, V²/Hz.
pub fn johnson_voltage_noise(temperature: f64, resistance: f64) -> Result<f64> {
    if !(temperature >= 0.0) || !(resistance >= 0.0) {
        return Err(Error::InvalidParams(
            "temperature and resistance must be >= 0".into(),
        ));
    }
    Ok(4.0 * K_B * temperature * resistance)
}

/// Geometric voltage-to-field factor `200 · (100 µm / d)`, 1/m.
pub fn nominal_transfer_factor(d: f64) -> Result<f64> {
    positive("d", d)?;
    Ok(200.0 * (100e-6 / d))
}

/// Field noise from electrode voltage noise: `S_V · k²` with `k` either the
/// supplied transfer factor or [`nominal_transfer_factor`].
pub fn technical_field_noise(s_v: f64, d: f64, transfer_factor: Option<f64>) -> Result<f64> {
    let k = match transfer_factor {
        Some(k) => {
            if !(k >= 0.0) {
                return Err(Error::InvalidParams("transfer factor must be >= 0".into()));
            }
            k
        }
        None => nominal_transfer_factor(d)?,
    };
    positive("d", d)?;
    Ok(s_v * k * k)
}

/// Power-law noise model `S_E(d, ω) = S_ref (ω/ω_ref)^α (d/d_ref)^β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    /// V²/m²/Hz at `omega_ref` and `d_ref`.
    pub s_e_ref: f64,
    #[serde(default = "default_omega_ref")]
    pub omega_ref: f64,
    #[serde(default = "default_alpha")]
    pub freq_exponent: f64,
    #[serde(default = "default_beta")]
    pub distance_exponent: f64,
    pub d_ref: f64,
}

fn default_omega_ref() -> f64 {
    OMEGA_1MHZ
}

fn default_alpha() -> f64 {
    -1.0
}

fn default_beta() -> f64 {
    -4.0
}

impl NoiseModel {
    /// Anchor the model on one measured heating rate.
    pub fn anchored(
        d: f64,
        omega: f64,
        ndot: f64,
        species: &IonSpecies,
        freq_exponent: f64,
        distance_exponent: f64,
    ) -> Result<Self> {
        positive("d", d)?;
        let s_e = noise_from_heating(ndot, omega, species)?;
        let model = Self {
            s_e_ref: normalize_frequency(s_e, omega, OMEGA_1MHZ, freq_exponent)?,
            omega_ref: OMEGA_1MHZ,
            freq_exponent,
            distance_exponent,
            d_ref: d,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        positive("s_e_ref", self.s_e_ref)?;
        positive("omega_ref", self.omega_ref)?;
        positive("d_ref", self.d_ref)?;
        if !self.freq_exponent.is_finite() || !self.distance_exponent.is_finite() {
            return Err(Error::InvalidParams("non-finite exponent".into()));
        }
        Ok(())
    }

    pub fn field_noise(&self, d: f64, omega: f64) -> Result<f64> {
        positive("d", d)?;
        positive("omega", omega)?;
        Ok(self.s_e_ref
            * (omega / self.omega_ref).powf(self.freq_exponent)
            * (d / self.d_ref).powf(self.distance_exponent))
    }

    pub fn heating_rate(&self, d: f64, omega: f64, species: &IonSpecies) -> Result<f64> {
        heating_from_noise(self.field_noise(d, omega)?, omega, species)
    }
}

/// One heating-rate measurement with its derived noise densities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseMeasurement {
    pub trap_size_d: f64,
    /// rad/s
    pub secular_frequency: f64,
    /// quanta/s
    pub heating_rate: Estimate,
    pub temperature_k: f64,
    pub s_e: Estimate,
    pub s_e_normalized: Estimate,
    /// Frequency `s_e_normalized` refers to, rad/s.
    pub omega_ref: f64,
    pub label: String,
}

impl NoiseMeasurement {
    /// Derive `S_E` and its normalized value (ω⁻¹ model) from a heating rate.
    pub fn from_heating(
        trap_size_d: f64,
        secular_frequency: f64,
        heating_rate: Estimate,
        temperature_k: f64,
        label: impl Into<String>,
        species: &IonSpecies,
        omega_ref: f64,
    ) -> Result<Self> {
        positive("trap size", trap_size_d)?;
        if !(heating_rate.value >= 0.0) || !(heating_rate.sigma >= 0.0) {
            return Err(Error::InvalidParams(
                "heating rate and its sigma must be >= 0".into(),
            ));
        }
        let k = conversion_factor(secular_frequency, species)?;
        let s_e = heating_rate.scale(k);
        let norm = normalize_frequency(1.0, secular_frequency, omega_ref, -1.0)?;
        Ok(Self {
            trap_size_d,
            secular_frequency,
            heating_rate,
            temperature_k,
            s_e,
            s_e_normalized: s_e.scale(norm),
            omega_ref,
            label: label.into(),
        })
    }
}

/// `y = A x^k` fitted on log-log axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub exponent: Estimate,
    pub amplitude: Estimate,
    pub chi2: f64,
    pub dof: usize,
    /// ln y − fitted ln y, per input point.
    pub log_residuals: Vec<f64>,
    /// True when no σ_y was given and the spread of the residuals set the
    /// uncertainties.
    pub unweighted: bool,
}

impl PowerLawFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.amplitude.value * x.powf(self.exponent.value)
    }
}

/// Weighted least squares on `(ln x, ln y)` with `σ_ln y = σ_y / y`.
///
/// If any σ_y is zero the fit is unweighted and the covariance is scaled by
/// the residual variance.
pub fn fit_power_law(points: &[(f64, f64, f64)]) -> Result<PowerLawFit> {
    if points.len() < 2 {
        return Err(Error::Domain("power-law fit needs at least 2 points".into()));
    }
    if points.iter().any(|(x, y, s)| !(*x > 0.0) || !(*y > 0.0) || !(*s >= 0.0)) {
        return Err(Error::Domain(
            "power-law fit needs x > 0, y > 0 and sigma >= 0".into(),
        ));
    }
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let unweighted = points.iter().any(|p| p.2 == 0.0);
    let w: Vec<f64> = if unweighted {
        vec![1.0; points.len()]
    } else {
        points.iter().map(|(_, y, s)| (y / s).powi(2)).collect()
    };
    let fit = weighted_line_fit(&lx, &ly, &w)
        .ok_or_else(|| Error::Domain("power-law fit needs at least 2 distinct x".into()))?;
    let scale = if unweighted {
        if fit.dof > 0 {
            fit.chi2 / fit.dof as f64
        } else {
            0.0
        }
    } else {
        1.0
    };
    let amp = fit.intercept.exp();
    let log_residuals = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| y - fit.intercept - fit.slope * x)
        .collect();
    Ok(PowerLawFit {
        exponent: Estimate::new(fit.slope, (fit.var_slope * scale).sqrt()),
        amplitude: Estimate::new(amp, amp * (fit.var_intercept * scale).sqrt()),
        chi2: fit.chi2,
        dof: fit.dof,
        log_residuals,
        unweighted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_conversion() {
        let sr = IonSpecies::sr88();
        let s = noise_from_heating(2.1, OMEGA_1MHZ, &sr).unwrap();
        assert!((s / 3.2e-14 - 1.0).abs() < 0.02, "{s}");
        assert_eq!(noise_from_heating(0.0, OMEGA_1MHZ, &sr).unwrap(), 0.0);
        assert!(noise_from_heating(1.0, 0.0, &sr).is_err());
    }

    #[test]
    fn halving_charge_quadruples() {
        let sr = IonSpecies::sr88();
        let half = IonSpecies {
            charge: sr.charge / 2.0,
            ..sr.clone()
        };
        let a = noise_from_heating(1.0, OMEGA_1MHZ, &sr).unwrap();
        let b = noise_from_heating(1.0, OMEGA_1MHZ, &half).unwrap();
        assert!((b / a - 4.0).abs() < 1e-12);
    }

    #[test]
    fn doubling_omega_halves_rate() {
        let sr = IonSpecies::sr88();
        let a = heating_from_noise(1e-13, OMEGA_1MHZ, &sr).unwrap();
        let b = heating_from_noise(1e-13, 2.0 * OMEGA_1MHZ, &sr).unwrap();
        assert!((a / b - 2.0).abs() < 1e-12);
    }

    #[test]
    fn normalization() {
        let s = normalize_frequency(1.0, TWO_PI * 0.85e6, OMEGA_1MHZ, -1.0).unwrap();
        assert!((s - 0.85).abs() < 1e-12);
        assert_eq!(normalize_frequency(3.0, 5.0, 5.0, -1.0).unwrap(), 3.0);
    }

    #[test]
    fn johnson_values() {
        assert!((johnson_voltage_noise(300.0, 10.0).unwrap() / 1.6568e-19 - 1.0).abs() < 1e-3);
        assert_eq!(johnson_voltage_noise(0.0, 10.0).unwrap(), 0.0);
        assert!(johnson_voltage_noise(-1.0, 10.0).is_err());
    }

    #[test]
    fn technical_noise_scaling() {
        let a = technical_field_noise(2e-21, 100e-6, None).unwrap();
        assert!((a - 8e-17).abs() < 1e-30);
        let b = technical_field_noise(2e-21, 200e-6, None).unwrap();
        assert!((a / b - 4.0).abs() < 1e-12);
        assert_eq!(technical_field_noise(0.0, 100e-6, None).unwrap(), 0.0);
        let c = technical_field_noise(1e-20, 1.0, Some(300.0)).unwrap();
        assert!((c - 9e-16).abs() < 1e-28);
    }

    #[test]
    fn two_exact_points() {
        let f = fit_power_law(&[(1.0, 3.0, 0.0), (2.0, 0.75, 0.0)]).unwrap();
        assert!((f.exponent.value + 2.0).abs() < 1e-12);
        assert!((f.amplitude.value - 3.0).abs() < 1e-12);
        assert!(f.chi2 < 1e-24);
    }

    #[test]
    fn power_law_rejects_bad_input() {
        assert!(fit_power_law(&[(1.0, 1.0, 0.1)]).is_err());
        assert!(fit_power_law(&[(1.0, 1.0, 0.1), (2.0, -1.0, 0.1)]).is_err());
        assert!(fit_power_law(&[(1.0, 1.0, 0.1), (1.0, 2.0, 0.1)]).is_err());
    }

    #[test]
    fn measurement_fields_consistent() {
        let sr = IonSpecies::sr88();
        let m = NoiseMeasurement::from_heating(
            150e-6,
            TWO_PI * 0.85e6,
            Estimate::new(2.0, 0.2),
            6.0,
            "x",
            &sr,
            OMEGA_1MHZ,
        )
        .unwrap();
        let s = noise_from_heating(2.0, TWO_PI * 0.85e6, &sr).unwrap();
        assert!((m.s_e.value / s - 1.0).abs() < 1e-14);
        assert!((m.s_e_normalized.value / (0.85 * s) - 1.0).abs() < 1e-12);
        assert!((m.s_e.sigma / m.s_e.value - 0.1).abs() < 1e-12);
    }
}
