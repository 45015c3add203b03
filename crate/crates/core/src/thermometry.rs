//! Sideband thermometry: scan synthesis, Gaussian fits, ratio estimate of n̄
//! and the heating-rate regression.

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::cooling::{evolve_heating, FockDistribution, HeatingMethod};
use crate::stats::{mix_seed, weighted_line_fit, Estimate};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Red,
    Blue,
}

impl Side {
    pub fn as_str(&self) -> &'static str {
        match self {
            Side::Red => "red",
            Side::Blue => "blue",
        }
    }

    /// Sign of the sideband detuning from the carrier.
    pub fn sign(&self) -> f64 {
        match self {
            Side::Red => -1.0,
            Side::Blue => 1.0,
        }
    }
}

impl std::str::FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "red" => Ok(Side::Red),
            "blue" => Ok(Side::Blue),
            other => Err(Error::InvalidParams(format!("unknown sideband `{other}`"))),
        }
    }
}

/// Peak excitation probability of a resonant sideband pulse.
pub fn sideband_excitation(p: &FockDistribution, eta: f64, omega0: f64, t: f64, side: Side) -> f64 {
    p.probabilities()
        .iter()
        .enumerate()
        .map(|(n, pn)| {
            let k = match side {
                Side::Red => n as f64,
                Side::Blue => n as f64 + 1.0,
            };
            pn * (0.5 * eta * k.sqrt() * omega0 * t).sin().powi(2)
        })
        .sum()
}

/// Measured excitation versus detuning from the carrier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidebandScan {
    /// rad/s relative to the carrier
    pub detunings: Vec<f64>,
    pub excitation: Vec<f64>,
    pub shots: Vec<u32>,
    pub side: Side,
}

impl SidebandScan {
    pub fn validate(&self) -> Result<()> {
        let n = self.detunings.len();
        if self.excitation.len() != n || self.shots.len() != n {
            return Err(Error::InvalidParams("scan columns differ in length".into()));
        }
        if self.excitation.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return Err(Error::InvalidParams("excitation must lie in [0, 1]".into()));
        }
        if self.shots.contains(&0) {
            return Err(Error::InvalidParams("shots per point must be >= 1".into()));
        }
        Ok(())
    }
}

/// Probe and scan parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSettings {
    pub eta: f64,
    /// Carrier Rabi frequency, rad/s.
    pub omega0: f64,
    /// Probe pulse length, s.
    pub probe_time: f64,
    /// Motional frequency setting the sideband positions, rad/s.
    pub omega_secular: f64,
    /// Gaussian width of the broadened line, rad/s.
    pub linewidth_sigma: f64,
    /// Scan half-width around each sideband, rad/s.
    pub half_span: f64,
    pub points: usize,
    pub shots: u32,
}

impl ScanSettings {
    /// 41 points, 100 shots, probe time equal to the blue-sideband π time at
    /// n = 0, scan ±3 linewidths.
    pub fn standard(eta: f64, omega0: f64, omega_secular: f64, linewidth_sigma: f64) -> Self {
        Self {
            eta,
            omega0,
            probe_time: std::f64::consts::PI / (eta * omega0),
            omega_secular,
            linewidth_sigma,
            half_span: 3.0 * linewidth_sigma,
            points: 41,
            shots: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            self.eta,
            self.omega0,
            self.probe_time,
            self.omega_secular,
            self.linewidth_sigma,
            self.half_span,
        ];
        if pos.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParams("scan settings must be positive".into()));
        }
        if self.points < 4 || self.shots == 0 {
            return Err(Error::InvalidParams("need >= 4 points and >= 1 shot".into()));
        }
        Ok(())
    }

    pub fn grid(&self, side: Side) -> Vec<f64> {
        let c = side.sign() * self.omega_secular;
        (0..self.points)
            .map(|i| c - self.half_span + 2.0 * self.half_span * i as f64 / (self.points - 1) as f64)
            .collect()
    }
}

/// Noisy scan: Gaussian lineshape with the sideband peak excitation as its
/// height, binomially sampled per point from a seeded stream.
pub fn synthesize_scan(p: &FockDistribution, side: Side, settings: &ScanSettings, seed: u64) -> Result<SidebandScan> {
    settings.validate()?;
    let grid = settings.grid(side);
    synthesize_scan_on_grid(p, side, settings, &grid, seed)
}

pub fn synthesize_scan_on_grid(
    p: &FockDistribution,
    side: Side,
    settings: &ScanSettings,
    grid: &[f64],
    seed: u64,
) -> Result<SidebandScan> {
    settings.validate()?;
    let peak = sideband_excitation(p, settings.eta, settings.omega0, settings.probe_time, side);
    let center = side.sign() * settings.omega_secular;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut excitation = Vec::with_capacity(grid.len());
    for d in grid {
        let x = (d - center) / settings.linewidth_sigma;
        let prob = (peak * (-0.5 * x * x).exp()).clamp(0.0, 1.0);
        let k = Binomial::new(settings.shots as u64, prob)
            .map_err(|e| Error::InvalidParams(e.to_string()))?
            .sample(&mut rng);
        excitation.push(k as f64 / settings.shots as f64);
    }
    Ok(SidebandScan {
        detunings: grid.to_vec(),
        excitation,
        shots: vec![settings.shots; grid.len()],
        side,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub amplitude: Estimate,
    pub center: Estimate,
    pub width: Estimate,
    /// Root of the residual sum of squares.
    pub residual_norm: f64,
    pub iterations: usize,
    /// Amplitude below three standard errors (or no signal at all).
    pub low_signal: bool,
}

fn gauss(a: f64, c: f64, w: f64, x: f64) -> f64 {
    let u = (x - c) / w;
    a * (-0.5 * u * u).exp()
}

/// Levenberg-Marquardt fit of `A exp(−(δ−δ₀)²/2w²)`.
///
/// Starts from A = max, δ₀ = argmax and w from the second moment. Shot noise
/// is binomial, so the residual spread is far from uniform across the scan;
/// the covariance is the sandwich `(JᵀJ)⁻¹ JᵀVJ (JᵀJ)⁻¹` with `V` the
/// binomial variance of the fitted model at each point.
pub fn fit_gaussian(scan: &SidebandScan) -> Result<GaussianFit> {
    let x = &scan.detunings;
    let y = &scan.excitation;
    let n = x.len();
    if n < 4 || y.len() != n || scan.shots.len() != n {
        return Err(Error::Fit("Gaussian fit needs at least 4 points".into()));
    }
    let (imax, &ymax) = y
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let span = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - x.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(span > 0.0) {
        return Err(Error::Fit("detunings are all equal".into()));
    }
    if !(ymax > 0.0) {
        // nothing to fit: zero amplitude at a nominal shape
        let c = x[n / 2];
        let w = span / 6.0;
        let amp = fit_amplitude(scan, c, w)?;
        return Ok(GaussianFit {
            amplitude: amp,
            center: Estimate::new(c, f64::INFINITY),
            width: Estimate::new(w, f64::INFINITY),
            residual_norm: 0.0,
            iterations: 0,
            low_signal: true,
        });
    }
    let sy: f64 = y.iter().map(|v| v.max(0.0)).sum();
    let mean = x.iter().zip(y).map(|(x, y)| x * y.max(0.0)).sum::<f64>() / sy;
    let var = x.iter().zip(y).map(|(x, y)| (x - mean).powi(2) * y.max(0.0)).sum::<f64>() / sy;
    let w0 = var.sqrt().clamp(span / (4.0 * n as f64), span);

    let mut theta = Vector3::new(ymax, x[imax], w0);
    let residual = |t: &Vector3<f64>| -> f64 {
        x.iter().zip(y).map(|(x, y)| (y - gauss(t[0], t[1], t[2], *x)).powi(2)).sum()
    };
    let normal = |t: &Vector3<f64>| -> (Matrix3<f64>, Vector3<f64>) {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for (xi, yi) in x.iter().zip(y) {
            let u = (xi - t[1]) / t[2];
            let e = (-0.5 * u * u).exp();
            let j = Vector3::new(e, t[0] * e * u / t[2], t[0] * e * u * u / t[2]);
            jtj += j * j.transpose();
            jtr += j * (yi - t[0] * e);
        }
        (jtj, jtr)
    };
    let mut sse = residual(&theta);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < 500 {
        iterations += 1;
        let (jtj, jtr) = normal(&theta);
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj;
            for k in 0..3 {
                a[(k, k)] *= 1.0 + lambda;
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let trial = theta + step;
            if !(trial[2] > 0.0) {
                lambda *= 10.0;
                continue;
            }
            let s = residual(&trial);
            if s <= sse {
                let rel = step.component_div(&theta.map(|v| v.abs().max(1e-300))).amax();
                theta = trial;
                let drop = sse - s;
                sse = s;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                if rel < 1e-12 || drop <= 1e-15 * sse.max(1e-300) {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if converged || !improved {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            iterations,
            residual: sse.sqrt(),
        });
    }
    theta[2] = theta[2].abs();
    let (jtj, _) = normal(&theta);
    let inv = jtj
        .try_inverse()
        .ok_or_else(|| Error::Fit(format!("singular normal matrix (residual {:.3e})", sse.sqrt())))?;
    let mut meat = Matrix3::zeros();
    for (k, xi) in x.iter().enumerate() {
        let u = (xi - theta[1]) / theta[2];
        let e = (-0.5 * u * u).exp();
        let j = Vector3::new(e, theta[0] * e * u / theta[2], theta[0] * e * u * u / theta[2]);
        meat += j * j.transpose() * binomial_variance(theta[0] * e, scan.shots[k]);
    }
    let cov = inv * meat * inv;
    let sig = |k: usize| cov[(k, k)].max(0.0).sqrt();
    let amplitude = Estimate::new(theta[0], sig(0));
    Ok(GaussianFit {
        amplitude,
        center: Estimate::new(theta[1], sig(1)),
        width: Estimate::new(theta[2], sig(2)),
        residual_norm: sse.sqrt(),
        iterations,
        low_signal: amplitude.value < 3.0 * amplitude.sigma,
    })
}

/// Variance of an excitation estimate from `shots` trials at probability `m`.
/// `m` is kept half a count away from 0 and 1 so empty points still carry
/// some uncertainty.
fn binomial_variance(m: f64, shots: u32) -> f64 {
    let n = shots.max(1) as f64;
    let m = m.clamp(0.5 / n, 1.0 - 0.5 / n);
    m * (1.0 - m) / n
}

/// Linear fit of the amplitude alone with center and width held fixed.
pub fn fit_amplitude(scan: &SidebandScan, center: f64, width: f64) -> Result<Estimate> {
    if !(width > 0.0) {
        return Err(Error::Fit("width must be > 0".into()));
    }
    let n = scan.detunings.len();
    if n < 2 || scan.excitation.len() != n || scan.shots.len() != n {
        return Err(Error::Fit("amplitude fit needs at least 2 points".into()));
    }
    let g: Vec<f64> = scan.detunings.iter().map(|x| gauss(1.0, center, width, *x)).collect();
    let sgg: f64 = g.iter().map(|v| v * v).sum();
    if !(sgg > 0.0) {
        return Err(Error::Fit("model vanishes on the scan grid".into()));
    }
    let a = g.iter().zip(&scan.excitation).map(|(g, y)| g * y).sum::<f64>() / sgg;
    let var: f64 = g
        .iter()
        .zip(&scan.shots)
        .map(|(g, shots)| g * g * binomial_variance(a * g, *shots))
        .sum::<f64>()
        / (sgg * sgg);
    Ok(Estimate::new(a, var.sqrt()))
}

/// Red and blue amplitudes of one thermometry point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SidebandPair {
    pub red: Estimate,
    pub blue: GaussianFit,
}

impl SidebandPair {
    pub fn ratio(&self) -> Estimate {
        let (r, b) = (self.red, self.blue.amplitude);
        let value = r.value / b.value;
        let sigma = ((r.sigma / b.value).powi(2) + (r.value * b.sigma / (b.value * b.value)).powi(2)).sqrt();
        Estimate::new(value, sigma)
    }
}

/// Fit the blue scan freely, then the red amplitude at the mirrored center
/// and the blue width. The red peak is often too small to fix its own shape.
pub fn fit_sideband_pair(red: &SidebandScan, blue: &SidebandScan) -> Result<SidebandPair> {
    let b = fit_gaussian(blue)?;
    if b.low_signal || !(b.amplitude.value > 0.0) {
        return Err(Error::Fit("blue sideband has no usable signal".into()));
    }
    let r = fit_amplitude(red, -b.center.value, b.width.value)?;
    Ok(SidebandPair { red: r, blue: b })
}

/// `n̄ = r / (1 − r)` with delta-method σ; thermal states only.
pub fn nbar_from_ratio(r: f64, sigma_r: f64) -> Result<Estimate> {
    if !(r < 1.0) || !r.is_finite() {
        return Err(Error::Domain(format!(
            "sideband ratio {r} >= 1 is inconsistent with a thermal state"
        )));
    }
    let d = 1.0 - r;
    Ok(Estimate::new(r / d, sigma_r.abs() / (d * d)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatingSample {
    /// s
    pub delay: f64,
    pub nbar: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HeatingSeries {
    pub samples: Vec<HeatingSample>,
}

impl HeatingSeries {
    pub fn validate(&self) -> Result<()> {
        for s in &self.samples {
            if !(s.delay >= 0.0) || !(s.sigma > 0.0) || !s.nbar.is_finite() {
                return Err(Error::InvalidParams(format!(
                    "bad heating sample at delay {}: need delay >= 0, sigma > 0",
                    s.delay
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatingFit {
    /// quanta/s
    pub ndot: Estimate,
    pub intercept: Estimate,
    pub chi2: f64,
    pub dof: usize,
}

/// Weighted straight line through `(delay, n̄)` with weights `1/σ²`.
pub fn fit_heating_rate(series: &HeatingSeries) -> Result<HeatingFit> {
    series.validate()?;
    let x: Vec<f64> = series.samples.iter().map(|s| s.delay).collect();
    let y: Vec<f64> = series.samples.iter().map(|s| s.nbar).collect();
    let w: Vec<f64> = series.samples.iter().map(|s| 1.0 / (s.sigma * s.sigma)).collect();
    let f = weighted_line_fit(&x, &y, &w)
        .ok_or_else(|| Error::Fit("heating fit needs at least 2 distinct delays".into()))?;
    Ok(HeatingFit {
        ndot: Estimate::new(f.slope, f.var_slope.sqrt()),
        intercept: Estimate::new(f.intercept, f.var_intercept.sqrt()),
        chi2: f.chi2,
        dof: f.dof,
    })
}

/// Scans and estimate for one delay.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayPoint {
    pub delay: f64,
    pub true_nbar: f64,
    pub red: SidebandScan,
    pub blue: SidebandScan,
    pub fit: SidebandPair,
    pub nbar: Estimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatingMeasurement {
    pub points: Vec<DelayPoint>,
    pub series: HeatingSeries,
    pub fit: HeatingFit,
}

/// Simulated heating-rate experiment: heat the cooled state for each delay
/// (master equation), synthesize red and blue scans, estimate n̄ from the
/// fitted amplitude ratio and regress against delay.
///
/// Each delay `k` draws its red and blue scans from streams derived from
/// `seed`, so points are independent of evaluation order.
pub fn measure_heating_rate(
    cooled: &FockDistribution,
    ndot: f64,
    delays: &[f64],
    settings: &ScanSettings,
    seed: u64,
) -> Result<HeatingMeasurement> {
    settings.validate()?;
    let mut points = Vec::with_capacity(delays.len());
    for (k, &delay) in delays.iter().enumerate() {
        let heated = evolve_heating(cooled, ndot, delay, HeatingMethod::MasterEquation)?.distribution;
        let red = synthesize_scan(&heated, Side::Red, settings, mix_seed(seed, 2 * k as u64))?;
        let blue = synthesize_scan(&heated, Side::Blue, settings, mix_seed(seed, 2 * k as u64 + 1))?;
        let fit = fit_sideband_pair(&red, &blue)?;
        let r = fit.ratio();
        let nbar = nbar_from_ratio(r.value, r.sigma)?;
        points.push(DelayPoint {
            delay,
            true_nbar: heated.mean(),
            red,
            blue,
            fit,
            nbar,
        });
    }
    let series = HeatingSeries {
        samples: points
            .iter()
            .map(|p| HeatingSample {
                delay: p.delay,
                nbar: p.nbar.value,
                sigma: p.nbar.sigma,
            })
            .collect(),
    };
    let fit = fit_heating_rate(&series)?;
    Ok(HeatingMeasurement { points, series, fit })
}
