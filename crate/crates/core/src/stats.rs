//! Small numerical helpers shared by the fitting code.

use serde::{Deserialize, Serialize};

/// A value with a one-standard-deviation uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub sigma: f64,
}

impl Estimate {
    pub fn new(value: f64, sigma: f64) -> Self {
        Self { value, sigma }
    }

    pub fn exact(value: f64) -> Self {
        Self { value, sigma: 0.0 }
    }

    /// Scale value and uncertainty by a constant factor.
    pub fn scale(self, factor: f64) -> Self {
        Self::new(self.value * factor, self.sigma * factor.abs())
    }

    /// True if `truth` lies within `k` standard deviations.
    pub fn covers(&self, truth: f64, k: f64) -> bool {
        (self.value - truth).abs() <= k * self.sigma
    }
}

impl std::fmt::Display for Estimate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.6e} ± {:.3e}", self.value, self.sigma)
    }
}

/// Weighted straight-line fit `y = a + b x`.
#[derive(Debug, Clone, Copy)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub var_intercept: f64,
    pub var_slope: f64,
    pub cov: f64,
    pub chi2: f64,
    pub dof: usize,
}

/// Weighted linear least squares with weights `w_i = 1/σ_i²`.
///
/// The covariance is the inverse of the normal matrix, i.e. it treats the
/// weights as absolute. Returns `None` when the abscissae are degenerate.
pub fn weighted_line_fit(x: &[f64], y: &[f64], w: &[f64]) -> Option<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n || w.len() != n {
        return None;
    }
    let s: f64 = w.iter().sum();
    let sx: f64 = x.iter().zip(w).map(|(x, w)| w * x).sum();
    let sy: f64 = y.iter().zip(w).map(|(y, w)| w * y).sum();
    let xm = sx / s;
    let ym = sy / s;
    // centred sums for stability
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for i in 0..n {
        let dx = x[i] - xm;
        sxx += w[i] * dx * dx;
        sxy += w[i] * dx * (y[i] - ym);
    }
    if !(sxx > 0.0) || sxx <= 1e-300 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let var_slope = 1.0 / sxx;
    let var_intercept = 1.0 / s + xm * xm / sxx;
    let cov = -xm / sxx;
    let chi2 = (0..n)
        .map(|i| {
            let r = y[i] - intercept - slope * x[i];
            w[i] * r * r
        })
        .sum();
    Some(LineFit {
        intercept,
        slope,
        var_intercept,
        var_slope,
        cov,
        chi2,
        dof: n - 2,
    })
}

/// SplitMix64 finalizer, used to derive independent sub-seeds from a master seed.
pub fn mix_seed(master: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
