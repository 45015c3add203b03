//! Browser bindings. Every export returns a JSON string; errors become JS
//! exceptions carrying the message.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use iontrap::constants::{E_CHARGE, TWO_PI};
use iontrap::cooling::PulseRecord;
use iontrap::electrostatics::{build_basis, GapTreatment, Point, VoltageSet};
use iontrap::geometry::Profile;
use iontrap::pipeline::{simulate_cooling, CoolingConfig};
use iontrap::pseudopotential::{solve_trap, total_energy, IonSpecies};
use iontrap::thermometry::{measure_heating_rate, ScanSettings};

#[derive(Serialize)]
struct MapOut {
    x: Vec<f64>,
    z: Vec<f64>,
    /// Row-major over z then x, eV above the trap minimum.
    energy_ev: Vec<f64>,
    null: [f64; 3],
    minimum: [f64; 3],
    frequencies_mhz: [f64; 3],
    tilt_deg: f64,
    depth_ev: f64,
    mathieu_q: [f64; 3],
}

/// Total potential energy on the y = y_min plane around the trap, plus the
/// solved trap summary.
pub fn trap_map_json(profile: &str, v1: f64, v_rf: f64, rf_mhz: f64, n: usize) -> Result<String, String> {
    let profile: Profile = profile.parse().map_err(err)?;
    let n = n.clamp(8, 160);
    let layout = profile.layout().map_err(err)?;
    let basis = build_basis(&layout, GapTreatment::Midline);
    let volts = VoltageSet::scheme(v1, v_rf, TWO_PI * rf_mhz * 1e6);
    let species = IonSpecies::sr88();
    let s = solve_trap(&basis, &volts, &species).map_err(err)?;
    let d = layout.characteristic_size;
    let e_min = total_energy(&basis, &volts, &species, &Point::from(s.r_min)).map_err(err)?;
    let x: Vec<f64> = (0..n).map(|i| s.r_min[0] + d * (-1.5 + 3.0 * i as f64 / (n - 1) as f64)).collect();
    let z: Vec<f64> = (0..n).map(|i| d * (0.3 + 2.2 * i as f64 / (n - 1) as f64)).collect();
    let mut energy_ev = Vec::with_capacity(n * n);
    for zi in &z {
        for xi in &x {
            let e = total_energy(&basis, &volts, &species, &Point::new(*xi, s.r_min[1], *zi)).map_err(err)?;
            energy_ev.push((e - e_min) / E_CHARGE);
        }
    }
    let f = s.frequencies_hz();
    to_json(&MapOut {
        x,
        z,
        energy_ev,
        null: s.r_null,
        minimum: s.r_min,
        frequencies_mhz: f.map(|v| v / 1e6),
        tilt_deg: s.tilt_deg,
        depth_ev: s.depth_ev,
        mathieu_q: s.mathieu_q,
    })
}

#[derive(Serialize)]
struct CoolOut {
    eta: f64,
    trace: Vec<PulseRecord>,
    final_populations: Vec<f64>,
}

/// Sideband cooling trace for a mode at `secular_mhz`.
pub fn cooling_json(secular_mhz: f64, pulses: usize, t_start_us: f64, t_end_us: f64, pi_time_us: f64) -> Result<String, String> {
    let cc = CoolingConfig {
        pulses,
        t_start_s: t_start_us * 1e-6,
        t_end_s: t_end_us * 1e-6,
        pi_time_s: pi_time_us * 1e-6,
        secular_frequency_hz: Some(secular_mhz * 1e6),
        ..CoolingConfig::default()
    };
    let (run, eta, _) = simulate_cooling(&cc, &IonSpecies::sr88(), TWO_PI * secular_mhz * 1e6, None).map_err(err)?;
    let p = run.final_state.probabilities();
    to_json(&CoolOut {
        eta,
        trace: run.trace,
        final_populations: p[..p.len().min(20)].to_vec(),
    })
}

#[derive(Serialize)]
struct HeatOut {
    delays: Vec<f64>,
    nbar: Vec<f64>,
    sigma: Vec<f64>,
    true_nbar: Vec<f64>,
    ndot: f64,
    ndot_sigma: f64,
    intercept: f64,
    intercept_sigma: f64,
    /// Detuning (rad/s) and excitation of the last delay's scans.
    red: [Vec<f64>; 2],
    blue: [Vec<f64>; 2],
}

/// Simulated heating-rate measurement at 1 MHz after the standard cooling.
pub fn heating_json(ndot: f64, shots: u32, seed: u64) -> Result<String, String> {
    let omega = TWO_PI * 1e6;
    let cc = CoolingConfig {
        secular_frequency_hz: Some(1e6),
        ..CoolingConfig::default()
    };
    let (run, eta, omega0) = simulate_cooling(&cc, &IonSpecies::sr88(), omega, None).map_err(err)?;
    let mut settings = ScanSettings::standard(eta, omega0, omega, TWO_PI * 5e3);
    settings.shots = shots.max(1);
    let m = measure_heating_rate(&run.final_state, ndot, &[0.0, 0.01, 0.02, 0.04], &settings, seed).map_err(err)?;
    let last = m.points.last().expect("four delays");
    to_json(&HeatOut {
        delays: m.points.iter().map(|p| p.delay).collect(),
        nbar: m.points.iter().map(|p| p.nbar.value).collect(),
        sigma: m.points.iter().map(|p| p.nbar.sigma).collect(),
        true_nbar: m.points.iter().map(|p| p.true_nbar).collect(),
        ndot: m.fit.ndot.value,
        ndot_sigma: m.fit.ndot.sigma,
        intercept: m.fit.intercept.value,
        intercept_sigma: m.fit.intercept.sigma,
        red: [last.red.detunings.clone(), last.red.excitation.clone()],
        blue: [last.blue.detunings.clone(), last.blue.excitation.clone()],
    })
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(err)
}

#[wasm_bindgen]
pub fn trap_map(profile: &str, v1: f64, v_rf: f64, rf_mhz: f64, n: usize) -> Result<String, JsError> {
    trap_map_json(profile, v1, v_rf, rf_mhz, n).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn cooling(secular_mhz: f64, pulses: usize, t_start_us: f64, t_end_us: f64, pi_time_us: f64) -> Result<String, JsError> {
    cooling_json(secular_mhz, pulses, t_start_us, t_end_us, pi_time_us).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn heating(ndot: f64, shots: u32, seed: u64) -> Result<String, JsError> {
    heating_json(ndot, shots, seed).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_has_a_minimum_near_zero() {
        let s = trap_map_json("L150", 25.0, 250.0, 26.0, 16).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        let e: Vec<f64> = serde_json::from_value(v["energy_ev"].clone()).unwrap();
        let x: Vec<f64> = serde_json::from_value(v["x"].clone()).unwrap();
        let z: Vec<f64> = serde_json::from_value(v["z"].clone()).unwrap();
        let m: Vec<f64> = serde_json::from_value(v["minimum"].clone()).unwrap();
        assert_eq!(e.len(), 256);
        // finite depth: only the neighbourhood of the minimum is bounded below
        for (k, ek) in e.iter().enumerate() {
            let (xi, zi) = (x[k % 16], z[k / 16]);
            if (xi - m[0]).hypot(zi - m[2]) < 75e-6 {
                assert!(*ek > -1e-9, "{ek} at ({xi}, {zi})");
            }
        }
        let f: Vec<f64> = serde_json::from_value(v["frequencies_mhz"].clone()).unwrap();
        assert!(f[0] > 0.5 && f[0] < 1.5);
    }

    #[test]
    fn cooling_reaches_ground_state() {
        let s = cooling_json(1.0, 150, 10.0, 25.0, 40.0).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["trace"].as_array().unwrap().len(), 151);
        assert!(v["trace"][150]["p0"].as_f64().unwrap() > 0.95);
    }

    #[test]
    fn heating_is_seeded() {
        let a = heating_json(2.1, 100, 9).unwrap();
        assert_eq!(a, heating_json(2.1, 100, 9).unwrap());
        assert_ne!(a, heating_json(2.1, 100, 10).unwrap());
    }

    #[test]
    fn bad_profile_is_an_error() {
        assert!(trap_map_json("L1", 25.0, 250.0, 26.0, 16).is_err());
    }
}
