//! One motional mode in Fock space: thermal states, pulsed red-sideband
//! cooling with ideal repump, and heating as a birth-death process.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::constants::{HBAR, K_B, TWO_PI};
use crate::pseudopotential::IonSpecies;
use crate::stats::mix_seed;
use crate::{Error, Result};

/// Default truncation.
pub const DEFAULT_N_MAX: usize = 200;
/// Probability lost above `N_max` beyond which results are flagged or the
/// truncation is doubled.
pub const LEAKAGE_TOL: f64 = 1e-6;
const MAX_N_MAX: usize = 1 << 16;

/// Occupation probabilities `p_n`, `n = 0..=N_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FockDistribution {
    p: Vec<f64>,
    /// Probability that left the truncated space.
    leakage: f64,
}

impl FockDistribution {
    /// Validate and wrap a probability vector.
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidParams("empty Fock distribution".into()));
        }
        if p.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidParams("probabilities must be finite and >= 0".into()));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParams(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self { p, leakage: 0.0 })
    }

    pub fn ground(n_max: usize) -> Self {
        Self::fock(0, n_max)
    }

    pub fn fock(n: usize, n_max: usize) -> Self {
        let mut p = vec![0.0; n_max.max(n) + 1];
        p[n] = 1.0;
        Self { p, leakage: 0.0 }
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    pub fn n_max(&self) -> usize {
        self.p.len() - 1
    }

    pub fn p0(&self) -> f64 {
        self.p[0]
    }

    pub fn mean(&self) -> f64 {
        self.p.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }

    pub fn total(&self) -> f64 {
        self.p.iter().sum()
    }

    pub fn leakage(&self) -> f64 {
        self.leakage
    }

    /// True when truncation lost more than [`LEAKAGE_TOL`].
    pub fn leakage_flag(&self) -> bool {
        self.leakage > LEAKAGE_TOL
    }

    pub fn renormalize(&mut self) {
        let t = self.total();
        if t > 0.0 {
            self.p.iter_mut().for_each(|p| *p /= t);
        }
    }

    /// Copy padded with zeros up to `n_max`.
    pub fn extended(&self, n_max: usize) -> Self {
        let mut p = self.p.clone();
        if n_max + 1 > p.len() {
            p.resize(n_max + 1, 0.0);
        }
        Self {
            p,
            leakage: self.leakage,
        }
    }
}

/// `η = k cos θ sqrt(ħ / 2mω)`.
pub fn lamb_dicke(species: &IonSpecies, wavelength: f64, omega: f64, projection_angle: f64) -> Result<f64> {
    if !(omega > 0.0) || !(wavelength > 0.0) {
        return Err(Error::InvalidParams("omega and wavelength must be > 0".into()));
    }
    species.validate()?;
    Ok(TWO_PI / wavelength * projection_angle.cos() * (HBAR / (2.0 * species.mass * omega)).sqrt())
}

/// Bose-Einstein mean occupation of a mode at temperature `t`.
pub fn bose_occupation(omega: f64, temperature: f64) -> Result<f64> {
    if !(omega > 0.0) || !(temperature >= 0.0) {
        return Err(Error::InvalidParams("need omega > 0 and T >= 0".into()));
    }
    if temperature == 0.0 {
        return Ok(0.0);
    }
    Ok(1.0 / (HBAR * omega / (K_B * temperature)).exp_m1())
}

/// Truncated thermal state; `leakage` records the discarded tail.
pub fn thermal_distribution(nbar: f64, n_max: usize) -> Result<FockDistribution> {
    if !(nbar >= 0.0) || !nbar.is_finite() {
        return Err(Error::InvalidParams(format!("nbar must be >= 0, got {nbar}")));
    }
    let ratio = nbar / (1.0 + nbar);
    let mut p = Vec::with_capacity(n_max + 1);
    let mut term = 1.0 / (1.0 + nbar);
    for _ in 0..=n_max {
        p.push(term);
        term *= ratio;
    }
    let leakage = ratio.powi(n_max as i32 + 1);
    let mut d = FockDistribution { p, leakage };
    d.renormalize();
    Ok(d)
}

/// Thermal state with `N_max` doubled from `n_max` until the tail is below
/// [`LEAKAGE_TOL`].
pub fn thermal_distribution_auto(nbar: f64, n_max: usize) -> Result<FockDistribution> {
    let mut n = n_max.max(1);
    loop {
        let d = thermal_distribution(nbar, n)?;
        if !d.leakage_flag() || n >= MAX_N_MAX {
            return Ok(d);
        }
        n *= 2;
    }
}

/// One red-sideband pulse followed by ideal repump: `n → n−1` with
/// probability `sin²(η √n Ω₀ t / 2)`.
pub fn apply_red_sideband_pulse(p: &FockDistribution, eta: f64, omega0: f64, t: f64) -> FockDistribution {
    let src = &p.p;
    let mut out = vec![0.0; src.len()];
    let transfer = |n: usize| -> f64 { (0.5 * eta * (n as f64).sqrt() * omega0 * t).sin().powi(2) };
    for n in 0..src.len() {
        let s = if n == 0 { 0.0 } else { transfer(n) };
        out[n] += src[n] * (1.0 - s);
        if n > 0 {
            out[n - 1] += src[n] * s;
        }
    }
    FockDistribution {
        p: out,
        leakage: p.leakage,
    }
}

/// Shape of the pulse-duration ramp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RampProfile {
    #[default]
    Linear,
    /// Constant ratio between consecutive durations.
    Geometric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoolingSequence {
    /// Pulse durations, s.
    pub pulses: Vec<f64>,
    /// Carrier Rabi frequency, rad/s.
    pub omega0: f64,
    pub eta: f64,
    /// Repump after every pulse is ideal; the only supported mode.
    pub perfect_repump: bool,
}

/// Carrier Rabi frequency making `t_pi` a π pulse on the n = 1 red sideband.
pub fn omega0_for_pi_time(eta: f64, t_pi: f64) -> f64 {
    std::f64::consts::PI / (eta * t_pi)
}

/// Default n = 1 π time that sets Ω₀.
pub const DEFAULT_PI_TIME: f64 = 40e-6;

impl CoolingSequence {
    pub fn ramp(
        count: usize,
        t_start: f64,
        t_end: f64,
        profile: RampProfile,
        eta: f64,
        omega0: f64,
    ) -> Result<Self> {
        if !(t_start > 0.0) || !(t_end > 0.0) {
            return Err(Error::InvalidParams("pulse durations must be > 0".into()));
        }
        let pulses = (0..count)
            .map(|i| {
                let f = if count > 1 { i as f64 / (count - 1) as f64 } else { 1.0 };
                match profile {
                    RampProfile::Linear => t_start + (t_end - t_start) * f,
                    RampProfile::Geometric => t_start * (t_end / t_start).powf(f),
                }
            })
            .collect();
        let seq = Self {
            pulses,
            omega0,
            eta,
            perfect_repump: true,
        };
        seq.validate()?;
        Ok(seq)
    }

    /// 150 pulses ramped linearly from 10 to 25 µs with Ω₀ set by
    /// [`DEFAULT_PI_TIME`].
    pub fn standard(eta: f64) -> Result<Self> {
        Self::ramp(150, 10e-6, 25e-6, RampProfile::Linear, eta, omega0_for_pi_time(eta, DEFAULT_PI_TIME))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::InvalidParams(format!("eta must be in (0, 1), got {}", self.eta)));
        }
        if !(self.omega0 > 0.0) || !self.omega0.is_finite() {
            return Err(Error::InvalidParams("omega0 must be > 0".into()));
        }
        if self.pulses.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::InvalidParams("pulse durations must be > 0".into()));
        }
        if !self.perfect_repump {
            return Err(Error::InvalidParams("only perfect repump is modeled".into()));
        }
        Ok(())
    }

    pub fn total_duration(&self) -> f64 {
        self.pulses.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseRecord {
    /// 0 is the initial state, k the state after pulse k.
    pub pulse_index: usize,
    pub p0: f64,
    pub nbar: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoolingRun {
    pub final_state: FockDistribution,
    pub trace: Vec<PulseRecord>,
}

impl CoolingRun {
    pub fn fidelity(&self) -> f64 {
        self.final_state.p0()
    }
}

/// Apply the sequence pulse by pulse. With `heating_rate` set, each pulse is
/// followed by heating over its duration.
pub fn run_cooling(
    p0: &FockDistribution,
    seq: &CoolingSequence,
    heating_rate: Option<f64>,
) -> Result<CoolingRun> {
    seq.validate()?;
    let mut p = p0.clone();
    let record = |i: usize, p: &FockDistribution| PulseRecord {
        pulse_index: i,
        p0: p.p0(),
        nbar: p.mean(),
    };
    let mut trace = Vec::with_capacity(seq.pulses.len() + 1);
    trace.push(record(0, &p));
    for (i, t) in seq.pulses.iter().enumerate() {
        p = apply_red_sideband_pulse(&p, seq.eta, seq.omega0, *t);
        if let Some(ndot) = heating_rate {
            if ndot > 0.0 {
                p = heat_master_equation(&p, ndot * t)?;
            }
        }
        trace.push(record(i + 1, &p));
    }
    Ok(CoolingRun {
        final_state: p,
        trace,
    })
}

/// How [`evolve_heating`] propagates the distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum HeatingMethod {
    MasterEquation,
    MonteCarlo { seed: u64, trajectories: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatingResult {
    pub distribution: FockDistribution,
    pub mean: f64,
    /// Standard error of `mean`; zero for the master equation.
    pub std_error: f64,
}

/// Evolve under `Γ(n→n+1) = ṅ(n+1)`, `Γ(n→n−1) = ṅn` for time `t`.
pub fn evolve_heating(p: &FockDistribution, ndot: f64, t: f64, method: HeatingMethod) -> Result<HeatingResult> {
    if !(ndot >= 0.0) || !(t >= 0.0) {
        return Err(Error::InvalidParams("need ndot >= 0 and t >= 0".into()));
    }
    match method {
        HeatingMethod::MasterEquation => {
            let d = heat_master_equation(p, ndot * t)?;
            Ok(HeatingResult {
                mean: d.mean(),
                distribution: d,
                std_error: 0.0,
            })
        }
        HeatingMethod::MonteCarlo { seed, trajectories } => {
            if trajectories == 0 {
                return Err(Error::InvalidParams("need at least one trajectory".into()));
            }
            heat_monte_carlo(p, ndot * t, seed, trajectories)
        }
    }
}

/// Rate equations in scaled time `τ = ṅ t`:
/// `dp_n/dτ = n p_{n−1} + (n+1) p_{n+1} − (2n+1) p_n`, with upward flux out of
/// `N_max` lost. Truncation doubles until the loss is below tolerance.
fn heat_master_equation(p: &FockDistribution, tau: f64) -> Result<FockDistribution> {
    if tau == 0.0 {
        return Ok(p.clone());
    }
    let mut n_max = p.n_max().max(8);
    loop {
        let start = p.extended(n_max);
        let mut y = start.p.clone();
        integrate_dopri(&mut y, tau)?;
        let total: f64 = y.iter().sum();
        let lost = (1.0 - total).max(0.0);
        y.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut d = FockDistribution {
            p: y,
            leakage: p.leakage + lost,
        };
        if lost <= LEAKAGE_TOL || n_max >= MAX_N_MAX {
            d.renormalize();
            return Ok(d);
        }
        n_max *= 2;
    }
}

fn rates(y: &[f64], dy: &mut [f64]) {
    let n = y.len();
    for k in 0..n {
        let kf = k as f64;
        let mut v = -(2.0 * kf + 1.0) * y[k];
        if k > 0 {
            v += kf * y[k - 1];
        }
        if k + 1 < n {
            v += (kf + 1.0) * y[k + 1];
        }
        dy[k] = v;
    }
}

/// Dormand-Prince 5(4) with standard step control. The equations are
/// autonomous, so the stage times are not needed.
fn integrate_dopri(y: &mut [f64], t_end: f64) -> Result<()> {
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    let n = y.len();
    let rtol = 1e-10;
    let atol = 1e-14;
    let mut k = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    let mut t = 0.0;
    // explicit stability needs h·(2N+1) ≲ 3
    let mut h = (1.0 / (2.0 * n as f64 + 1.0)).min(t_end);
    let mut steps = 0usize;
    rates(y, &mut k[0]);
    while t < t_end {
        steps += 1;
        if steps > 10_000_000 {
            return Err(Error::NoConvergence {
                iterations: steps,
                residual: t_end - t,
            });
        }
        if t + h > t_end {
            h = t_end - t;
        }
        for s in 1..7 {
            for i in 0..n {
                let mut acc = y[i];
                for j in 0..s {
                    acc += h * A[s][j] * k[j][i];
                }
                tmp[i] = acc;
            }
            rates(&tmp, &mut k[s]);
        }
        // tmp now holds the 5th-order solution (FSAL row)
        let mut err = 0.0f64;
        for i in 0..n {
            let mut e = 0.0;
            for s in 0..7 {
                e += (B5[s] - B4[s]) * k[s][i];
            }
            let sc = atol + rtol * y[i].abs().max(tmp[i].abs());
            err = err.max((h * e / sc).abs());
        }
        if err <= 1.0 {
            t += h;
            y.copy_from_slice(&tmp);
            k.swap(0, 6);
        }
        let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= fac;
    }
    Ok(())
}

fn sample_initial(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (n, pn) in p.iter().enumerate() {
        acc += pn;
        if u < acc {
            return n;
        }
    }
    p.len() - 1
}

fn trajectory(p: &[f64], tau: f64, seed: u64, index: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, index));
    let mut n = sample_initial(p, rng.random::<f64>());
    let mut t = 0.0;
    loop {
        let total = 2.0 * n as f64 + 1.0;
        let wait = Exp::new(total).expect("positive rate").sample(&mut rng);
        t += wait;
        if t > tau {
            return n;
        }
        if rng.random::<f64>() * total < n as f64 + 1.0 {
            n += 1;
        } else {
            n -= 1;
        }
    }
}

fn histogram(p: &[f64], tau: f64, seed: u64, range: std::ops::Range<usize>) -> Vec<u64> {
    let mut h: Vec<u64> = Vec::new();
    for i in range {
        let n = trajectory(p, tau, seed, i as u64);
        if n >= h.len() {
            h.resize(n + 1, 0);
        }
        h[n] += 1;
    }
    h
}

fn merge(mut a: Vec<u64>, b: Vec<u64>) -> Vec<u64> {
    if b.len() > a.len() {
        a.resize(b.len(), 0);
    }
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
    a
}

/// Gillespie jump trajectories. Each trajectory owns a ChaCha stream derived
/// from the master seed and its index; results are reduced through an
/// integer histogram so the output does not depend on scheduling.
fn heat_monte_carlo(p: &FockDistribution, tau: f64, seed: u64, trajectories: usize) -> Result<HeatingResult> {
    const CHUNK: usize = 4096;
    let probs = &p.p;
    let chunks: Vec<std::ops::Range<usize>> = (0..trajectories)
        .step_by(CHUNK)
        .map(|s| s..(s + CHUNK).min(trajectories))
        .collect();
    #[cfg(feature = "parallel")]
    let hist = {
        use rayon::prelude::*;
        chunks
            .into_par_iter()
            .map(|r| histogram(probs, tau, seed, r))
            .reduce(Vec::new, merge)
    };
    #[cfg(not(feature = "parallel"))]
    let hist = chunks
        .into_iter()
        .map(|r| histogram(probs, tau, seed, r))
        .fold(Vec::new(), merge);

    let count = trajectories as f64;
    let mean = hist.iter().enumerate().map(|(n, c)| n as f64 * *c as f64).sum::<f64>() / count;
    let var = hist
        .iter()
        .enumerate()
        .map(|(n, c)| (n as f64 - mean).powi(2) * *c as f64)
        .sum::<f64>()
        / (count - 1.0).max(1.0);
    let len = hist.len().max(p.p.len());
    let mut probs = vec![0.0; len];
    for (n, c) in hist.iter().enumerate() {
        probs[n] = *c as f64 / count;
    }
    Ok(HeatingResult {
        distribution: FockDistribution {
            p: probs,
            leakage: p.leakage,
        },
        mean,
        std_error: (var / count).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn lamb_dicke_reference() {
        let sr = IonSpecies::sr88();
        let eta = lamb_dicke(&sr, 674e-9, TWO_PI * 1e6, 0.0).unwrap();
        assert!((eta - 0.0707).abs() < 5e-4, "{eta}");
        let eta4 = lamb_dicke(&sr, 674e-9, 4.0 * TWO_PI * 1e6, 0.0).unwrap();
        assert!((eta / eta4 - 2.0).abs() < 1e-12);
        assert!(lamb_dicke(&sr, 674e-9, TWO_PI * 1e6, PI / 2.0).unwrap().abs() < 1e-17);
    }

    #[test]
    fn bose_at_half_millikelvin() {
        let n = bose_occupation(TWO_PI * 1e6, 0.5e-3).unwrap();
        assert!((n - 9.93).abs() < 0.01, "{n}");
        assert_eq!(bose_occupation(1.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn thermal_mean_and_ground() {
        let d = thermal_distribution(0.0, 10).unwrap();
        assert_eq!(d.p0(), 1.0);
        let d = thermal_distribution(9.9, 200).unwrap();
        assert!((d.mean() - 9.9).abs() < 1e-6);
        assert!(!d.leakage_flag());
        let d = thermal_distribution(50.0, 50).unwrap();
        assert!(d.leakage_flag());
        let d = thermal_distribution_auto(50.0, 50).unwrap();
        assert!(!d.leakage_flag());
        assert!((d.mean() - 50.0).abs() < 1e-3);
        assert!(thermal_distribution(-1.0, 10).is_err());
    }

    #[test]
    fn pulse_edge_cases() {
        let eta = 0.07;
        let om = 1e6;
        let g = FockDistribution::ground(5);
        assert_eq!(apply_red_sideband_pulse(&g, eta, om, 1e-5), g);
        let t = PI / (eta * om);
        let one = FockDistribution::fock(1, 5);
        assert!((apply_red_sideband_pulse(&one, eta, om, t).p0() - 1.0).abs() < 1e-10);
        let two = FockDistribution::fock(2, 5);
        let out = apply_red_sideband_pulse(&two, eta, om, t);
        let expect = ((PI / 2.0) * 2f64.sqrt()).sin().powi(2);
        assert!((out.probabilities()[1] - expect).abs() < 1e-12);
        assert!((expect - 0.63).abs() < 0.01);
    }

    #[test]
    fn zero_pulses_is_identity() {
        let p = thermal_distribution(3.0, 100).unwrap();
        let seq = CoolingSequence {
            pulses: vec![],
            omega0: 1e6,
            eta: 0.07,
            perfect_repump: true,
        };
        let run = run_cooling(&p, &seq, None).unwrap();
        assert_eq!(run.final_state, p);
        assert_eq!(run.trace.len(), 1);
    }

    #[test]
    fn sequence_validation() {
        assert!(CoolingSequence::ramp(10, 0.0, 1e-5, RampProfile::Linear, 0.07, 1e6).is_err());
        assert!(CoolingSequence::ramp(10, 1e-5, 2e-5, RampProfile::Linear, 1.5, 1e6).is_err());
        let s = CoolingSequence::ramp(3, 1e-5, 4e-5, RampProfile::Geometric, 0.07, 1e6).unwrap();
        assert!((s.pulses[1] - 2e-5).abs() < 1e-18);
        let s = CoolingSequence::standard(0.07).unwrap();
        assert_eq!(s.pulses.len(), 150);
        assert!((s.pulses[149] - 25e-6).abs() < 1e-18);
    }

    #[test]
    fn ground_state_heating() {
        let g = FockDistribution::ground(200);
        let r = evolve_heating(&g, 2.1, 0.04, HeatingMethod::MasterEquation).unwrap();
        assert!((r.mean - 0.084).abs() < 1e-8);
        assert!((r.distribution.total() - 1.0).abs() < 1e-9);
        let r0 = evolve_heating(&g, 0.0, 0.04, HeatingMethod::MasterEquation).unwrap();
        assert_eq!(r0.distribution, g);
    }

    #[test]
    fn truncation_grows_when_needed() {
        let g = FockDistribution::ground(10);
        let r = evolve_heating(&g, 1.0, 30.0, HeatingMethod::MasterEquation).unwrap();
        assert!(r.distribution.n_max() > 10);
        assert!((r.mean - 30.0).abs() < 0.03);
    }

    #[test]
    fn monte_carlo_is_reproducible() {
        let g = thermal_distribution(0.05, 50).unwrap();
        let m = HeatingMethod::MonteCarlo {
            seed: 9,
            trajectories: 10_000,
        };
        let a = evolve_heating(&g, 2.0, 0.1, m).unwrap();
        let b = evolve_heating(&g, 2.0, 0.1, m).unwrap();
        assert_eq!(a, b);
        assert!((a.mean - 0.25).abs() < 4.0 * a.std_error);
    }
}
