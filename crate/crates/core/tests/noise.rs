use proptest::prelude::*;

use iontrap::io::{noise_header, write_noise_csv, Table};
use iontrap::noise::{
    fit_power_law, heating_from_noise, noise_from_heating, normalize_frequency, NoiseMeasurement, NoiseModel,
    OMEGA_1MHZ,
};
use iontrap::pseudopotential::IonSpecies;
use iontrap::stats::Estimate;

const TAU: f64 = std::f64::consts::TAU;

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

fn power_law_points() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    // y = A x^k with log-normal scatter, x spread over at least 10%
    (-5.0..1.0f64, -40.0..-20.0f64, prop::collection::vec((1e-5..1e-3f64, -0.5..0.5f64, 0.01..0.3f64), 2..12))
        .prop_filter("x spread", |(_, _, v)| {
            let lo = v.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
            let hi = v.iter().map(|p| p.0).fold(0.0, f64::max);
            hi > 1.1 * lo
        })
        .prop_map(|(k, ln_a, v)| {
            v.into_iter()
                .map(|(x, e, r)| {
                    let y = (ln_a + k * x.ln() + e).exp();
                    (x, y, r * y)
                })
                .collect()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn conversion_round_trips(ndot in 1e-3..1e6f64, f in 1e4..1e8f64, s_e in 1e-18..1e-8f64) {
        let sr = IonSpecies::sr88();
        let w = TAU * f;
        let back = heating_from_noise(noise_from_heating(ndot, w, &sr).unwrap(), w, &sr).unwrap();
        prop_assert!(rel(back, ndot) < 1e-12);
        let back = noise_from_heating(heating_from_noise(s_e, w, &sr).unwrap(), w, &sr).unwrap();
        prop_assert!(rel(back, s_e) < 1e-12);
    }

    #[test]
    fn conversion_is_linear_in_mass_frequency_and_rate(ndot in 1e-3..1e3f64, f in 1e5..1e7f64, k in 0.1..10.0f64) {
        let sr = IonSpecies::sr88();
        let w = TAU * f;
        let base = noise_from_heating(ndot, w, &sr).unwrap();
        prop_assert!(rel(noise_from_heating(k * ndot, w, &sr).unwrap(), k * base) < 1e-12);
        prop_assert!(rel(noise_from_heating(ndot, k * w, &sr).unwrap(), k * base) < 1e-12);
        let heavy = IonSpecies { mass: k * sr.mass, ..sr.clone() };
        prop_assert!(rel(noise_from_heating(ndot, w, &heavy).unwrap(), k * base) < 1e-12);
        let half = IonSpecies { charge: 0.5 * sr.charge, ..sr.clone() };
        prop_assert!(rel(noise_from_heating(ndot, w, &half).unwrap(), 4.0 * base) < 1e-12);
    }

    #[test]
    fn normalization_round_trips(s_e in 1e-18..1e-8f64, f in 1e5..1e7f64, alpha in -3.0..0.0f64) {
        let w = TAU * f;
        let n = normalize_frequency(s_e, w, OMEGA_1MHZ, alpha).unwrap();
        prop_assert!(rel(normalize_frequency(n, OMEGA_1MHZ, w, alpha).unwrap(), s_e) < 1e-12);
    }

    #[test]
    fn power_law_fit_is_equivariant(pts in power_law_points(), c in 1e-3..1e3f64) {
        let base = fit_power_law(&pts).unwrap();
        let ys: Vec<_> = pts.iter().map(|(x, y, s)| (*x, c * y, c * s)).collect();
        let fy = fit_power_law(&ys).unwrap();
        prop_assert!((fy.exponent.value - base.exponent.value).abs() < 1e-9);
        prop_assert!((fy.exponent.sigma - base.exponent.sigma).abs() < 1e-9);
        let ln_a = base.amplitude.value.ln();
        prop_assert!((fy.amplitude.value.ln() - (ln_a + c.ln())).abs() < 1e-9 * (1.0 + ln_a.abs()));
        let xs: Vec<_> = pts.iter().map(|(x, y, s)| (c * x, *y, *s)).collect();
        let fx = fit_power_law(&xs).unwrap();
        prop_assert!((fx.exponent.value - base.exponent.value).abs() < 1e-9);
        prop_assert!((fx.exponent.sigma - base.exponent.sigma).abs() < 1e-9);
    }
}

#[test]
fn zero_rate_is_zero_noise() {
    assert_eq!(noise_from_heating(0.0, OMEGA_1MHZ, &IonSpecies::sr88()).unwrap(), 0.0);
}

#[test]
fn doubling_frequency_halves_rate() {
    let sr = IonSpecies::sr88();
    let a = heating_from_noise(3.2e-14, OMEGA_1MHZ, &sr).unwrap();
    let b = heating_from_noise(3.2e-14, 2.0 * OMEGA_1MHZ, &sr).unwrap();
    assert!(rel(b, 0.5 * a) < 1e-14);
    assert!((a - 2.1).abs() < 0.05);
}

#[test]
fn normalization_at_085_mhz() {
    let s = normalize_frequency(1e-13, TAU * 0.85e6, OMEGA_1MHZ, -1.0).unwrap();
    assert!(rel(s, 0.85e-13) < 1e-14);
    assert_eq!(normalize_frequency(1e-13, OMEGA_1MHZ, OMEGA_1MHZ, -1.0).unwrap(), 1e-13);
}

#[test]
fn extrapolation_to_ten_microns() {
    let sr = IonSpecies::sr88();
    let model = NoiseModel::anchored(150e-6, OMEGA_1MHZ, 2.1, &sr, -1.0, -4.0).unwrap();
    let ndot = model.heating_rate(10e-6, TAU * 10e6, &sr).unwrap();
    assert!(rel(ndot, 1.1e3) < 0.2, "{ndot}");
    assert!(rel(model.heating_rate(150e-6, OMEGA_1MHZ, &sr).unwrap(), 2.1) < 1e-12);
}

#[test]
fn two_exact_points_interpolate() {
    let f = fit_power_law(&[(1.0, 3.0, 0.0), (2.0, 0.75, 0.0)]).unwrap();
    assert!((f.exponent.value + 2.0).abs() < 1e-12);
    assert!(rel(f.amplitude.value, 3.0) < 1e-12);
    assert!(f.log_residuals.iter().all(|r| r.abs() < 1e-12));
}

#[test]
fn bad_power_law_inputs_are_rejected() {
    assert!(fit_power_law(&[(1.0, 1.0, 0.1)]).is_err());
    assert!(fit_power_law(&[(1.0, 1.0, 0.1), (0.0, 1.0, 0.1)]).is_err());
    assert!(fit_power_law(&[(1.0, 1.0, 0.1), (2.0, -1.0, 0.1)]).is_err());
    assert!(fit_power_law(&[(1.0, 1.0, 0.1), (1.0, 2.0, 0.1)]).is_err());
}

#[test]
fn noise_csv_is_self_consistent() {
    let sr = IonSpecies::sr88();
    let rows: Vec<_> = [(75e-6, 1.25e6, 40.0, 5.0), (100e-6, 0.85e6, 12.0, 2.0), (150e-6, 0.95e6, 2.1, 0.2)]
        .iter()
        .map(|&(d, f, n, s)| NoiseMeasurement::from_heating(d, TAU * f, Estimate::new(n, s), 6.0, "as-built", &sr, OMEGA_1MHZ).unwrap())
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("noise.csv");
    write_noise_csv(&path, &rows, 1e6).unwrap();
    let t = Table::read(&path).unwrap();
    assert_eq!(t.headers, noise_header(1e6));
    let (w, ndot, s_e, norm) = (
        t.column("omega_rad_s").unwrap(),
        t.column("ndot").unwrap(),
        t.column("S_E").unwrap(),
        t.column("S_E_1MHz").unwrap(),
    );
    for i in 0..rows.len() {
        assert_eq!(s_e[i], rows[i].s_e.value);
        assert!(rel(s_e[i], noise_from_heating(ndot[i], w[i], &sr).unwrap()) < 1e-12);
        assert!(rel(norm[i], s_e[i] * w[i] / OMEGA_1MHZ) < 1e-12);
    }
}
