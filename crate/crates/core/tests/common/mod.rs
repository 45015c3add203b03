//! Shared oracles for the integration tests.

#![allow(dead_code)]

use iontrap::geometry::Vertex;

#[allow(clippy::too_many_arguments)]
fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson quadrature with Richardson correction.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(&f, a, b, fa, fm, fb, whole, tol, 48)
}

/// y-range of a convex polygon on the vertical line at `x`.
fn y_span(poly: &[Vertex], x: f64) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        let (x0, x1) = (a[0].min(b[0]), a[0].max(b[0]));
        if x < x0 || x > x1 {
            continue;
        }
        if a[0] == b[0] {
            lo = lo.min(a[1].min(b[1]));
            hi = hi.max(a[1].max(b[1]));
        } else {
            let y = a[1] + (b[1] - a[1]) * (x - a[0]) / (b[0] - a[0]);
            lo = lo.min(y);
            hi = hi.max(y);
        }
    }
    (lo <= hi).then_some((lo, hi))
}

/// Potential of a unit-voltage convex patch in an otherwise grounded plane,
/// by direct 2-D quadrature of `z/(2π) ∫ dA / |r − r'|³`.
pub fn patch_potential_quadrature(poly: &[Vertex], r: [f64; 3], tol: f64) -> f64 {
    let xmin = poly.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min);
    let xmax = poly.iter().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max);
    let z = r[2];
    let inner = |x: f64| {
        let Some((lo, hi)) = y_span(poly, x) else { return 0.0 };
        let dx2 = (x - r[0]).powi(2) + z * z;
        integrate(|y| (dx2 + (y - r[1]).powi(2)).powf(-1.5), lo, hi, tol * 1e-2)
    };
    z / std::f64::consts::TAU * integrate(inner, xmin, xmax, tol)
}

pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<Vertex> {
    vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
}
