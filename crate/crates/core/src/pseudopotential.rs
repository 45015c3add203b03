//! Total effective potential of the trap and its harmonic characterization.
//!
//! `U(r) = Ψ(r) + q (Σ V_i φ_i(r) − E_s·r)` with the pseudopotential
//! `Ψ = q² V_rf² |∇φ_rf|² / (4 m Ω²)`.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::constants::{AMU, E_CHARGE, SR88_MASS_U, SR_674_NM};
use crate::electrostatics::{static_potential, ElectrodeBasis, PatchEval, Point, VoltageSet};
use crate::geometry::Role;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IonSpecies {
    /// kg
    pub mass: f64,
    /// C
    pub charge: f64,
    /// m
    pub cooling_wavelength: f64,
    pub label: String,
}

impl IonSpecies {
    pub fn sr88() -> Self {
        Self {
            mass: SR88_MASS_U * AMU,
            charge: E_CHARGE,
            cooling_wavelength: SR_674_NM,
            label: "Sr88".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) || !(self.charge != 0.0) || !self.charge.is_finite() {
            return Err(Error::InvalidParams(format!(
                "species `{}` needs mass > 0 and nonzero charge",
                self.label
            )));
        }
        if !(self.cooling_wavelength > 0.0) {
            return Err(Error::InvalidParams("cooling wavelength must be > 0".into()));
        }
        Ok(())
    }
}

impl std::str::FromStr for IonSpecies {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sr88" | "88sr" | "sr88+" | "88sr+" => Ok(Self::sr88()),
            other => Err(Error::InvalidParams(format!("unknown ion species `{other}`"))),
        }
    }
}

fn pseudo_coefficient(volts: &VoltageSet, species: &IonSpecies) -> f64 {
    let q = species.charge;
    q * q * volts.v_rf_amplitude * volts.v_rf_amplitude
        / (4.0 * species.mass * volts.omega_rf * volts.omega_rf)
}

/// RF pseudopotential energy in joules.
pub fn pseudo_potential<B: ElectrodeBasis + ?Sized>(
    basis: &B,
    volts: &VoltageSet,
    species: &IonSpecies,
    point: &Point,
) -> Result<f64> {
    volts.validate()?;
    let rf = basis.eval_role(Role::Rf, point)?;
    Ok(pseudo_coefficient(volts, species) * rf.field.norm_squared())
}

/// Total potential energy in joules.
pub fn total_energy<B: ElectrodeBasis + ?Sized>(
    basis: &B,
    volts: &VoltageSet,
    species: &IonSpecies,
    point: &Point,
) -> Result<f64> {
    let rf = basis.eval_role(Role::Rf, point)?;
    let dc = static_potential(basis, volts, point)?;
    Ok(pseudo_coefficient(volts, species) * rf.field.norm_squared() + species.charge * dc.phi)
}

/// Energy, gradient and Hessian of the total potential.
#[derive(Debug, Clone, Copy)]
pub struct EnergyEval {
    pub energy: f64,
    pub gradient: Vector3<f64>,
    pub hessian: Matrix3<f64>,
}

/// Finite-difference step for third derivatives of the RF potential.
pub fn fd_step(length_scale: f64) -> f64 {
    (1e-6 * length_scale).max(1e-9)
}

/// Energy with analytic gradient. The Hessian of Ψ needs third derivatives
/// of φ_rf; those enter only through `∇φ_rf · ∇(∇∇φ_rf)`, a directional
/// derivative of the analytic Hessian, taken by a 4th-order central difference.
pub fn energy_eval<B: ElectrodeBasis + ?Sized>(
    basis: &B,
    volts: &VoltageSet,
    species: &IonSpecies,
    point: &Point,
) -> Result<EnergyEval> {
    let c = pseudo_coefficient(volts, species);
    let q = species.charge;
    let rf = basis.eval_role(Role::Rf, point)?;
    let dc = static_potential(basis, volts, point)?;
    let g = -rf.field;
    let h = rf.hessian;
    let mut hess = (h * h) * (2.0 * c) + dc.hessian * q;
    let gn = g.norm();
    if gn > 0.0 && c != 0.0 {
        let u = g / gn;
        let step = fd_step(basis.length_scale());
        let at = |t: f64| -> Result<Matrix3<f64>> {
            Ok(basis.eval_role(Role::Rf, &(point + u * t))?.hessian)
        };
        let d = (at(-2.0 * step)? - at(2.0 * step)? + (at(step)? - at(-step)?) * 8.0) / (12.0 * step);
        let d = (d + d.transpose()) * 0.5;
        hess += d * (2.0 * c * gn);
    }
    Ok(EnergyEval {
        energy: c * g.norm_squared() + q * dc.phi,
        gradient: h * g * (2.0 * c) - dc.field * q,
        hessian: hess,
    })
}

/// A point where the RF field vanishes.
#[derive(Debug, Clone, Copy)]
pub struct RfNull {
    pub position: Point,
    /// |∇φ_rf| at the returned point, 1/m per volt.
    pub residual: f64,
    pub iterations: usize,
}

fn search_grid<B: ElectrodeBasis + ?Sized>(basis: &B) -> Vec<Point> {
    let d = basis.length_scale();
    let [cx, cy] = basis.search_center();
    let mut pts = Vec::new();
    for i in 0..9 {
        let x = cx - 2.0 * d + 0.5 * d * i as f64;
        for j in 0..5 {
            let y = cy - 2.0 * d + d * j as f64;
            for k in 0..16 {
                let z = 0.1 * d + (3.9 * d) * k as f64 / 15.0;
                pts.push(Point::new(x, y, z));
            }
        }
    }
    pts
}

/// Locate the RF null: coarse grid over a box of side 4d above the search
/// center, then damped Newton on `∇φ_rf = 0` from the best seeds.
pub fn find_rf_null<B: ElectrodeBasis + ?Sized>(basis: &B) -> Result<RfNull> {
    let d = basis.length_scale();
    if !(d > 0.0) {
        return Err(Error::InvalidParams("basis length scale must be > 0".into()));
    }
    let mut seeds = Vec::new();
    for p in search_grid(basis) {
        let e = basis.eval_role(Role::Rf, &p)?;
        let off = (p.x - basis.search_center()[0]).hypot(p.y - basis.search_center()[1]);
        seeds.push((e.field.norm() * p.z, off, p));
    }
    // ties (a null line along the axis) resolve toward the search center
    seeds.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut best: Option<RfNull> = None;
    for (_, _, seed) in seeds.iter().take(60) {
        if let Ok(n) = newton_null(basis, *seed) {
            if n.residual * d < 1e-9 && n.position.z <= 6.0 * d {
                return Ok(n);
            }
            if best.is_none_or(|b| n.residual < b.residual) {
                best = Some(n);
            }
        }
    }
    let residual = best.map_or(f64::INFINITY, |b| b.residual * d);
    Err(Error::NoConvergence {
        iterations: 60,
        residual,
    })
}

fn newton_null<B: ElectrodeBasis + ?Sized>(basis: &B, seed: Point) -> Result<RfNull> {
    let d = basis.length_scale();
    let max_step = 0.5 * d;
    let mut r = seed;
    let mut e = basis.eval_role(Role::Rf, &r)?;
    let mut lambda = 0.0;
    for it in 0..200 {
        let g = -e.field;
        let h = e.hessian;
        // Levenberg-Marquardt on the residual g with Jacobian h
        let mut accepted = false;
        for _ in 0..40 {
            let a = h * h + Matrix3::identity() * lambda;
            let Some(inv) = a.try_inverse() else {
                lambda = (lambda * 10.0).max(1e-6 * h.norm_squared());
                continue;
            };
            let mut step = -(inv * (h * g));
            let sn = step.norm();
            if sn > max_step {
                step *= max_step / sn;
            }
            let trial = r + step;
            if trial.z <= 0.01 * d {
                lambda = (lambda * 10.0).max(1e-6 * h.norm_squared());
                continue;
            }
            let et = basis.eval_role(Role::Rf, &trial)?;
            if et.field.norm() < g.norm() {
                r = trial;
                e = et;
                lambda *= 0.1;
                accepted = true;
                if step.norm() < 1e-14 * d {
                    return Ok(RfNull {
                        position: r,
                        residual: e.field.norm(),
                        iterations: it + 1,
                    });
                }
                break;
            }
            lambda = (lambda * 10.0).max(1e-6 * h.norm_squared());
        }
        if !accepted || e.field.norm() * d < 1e-13 {
            return Ok(RfNull {
                position: r,
                residual: e.field.norm(),
                iterations: it + 1,
            });
        }
    }
    Ok(RfNull {
        position: r,
        residual: e.field.norm(),
        iterations: 200,
    })
}

/// Result of minimizing the total potential.
#[derive(Debug, Clone, Copy)]
pub struct Minimum {
    pub position: Point,
    pub eval: EnergyEval,
    pub iterations: usize,
    pub method: MinimizerMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MinimizerMethod {
    Newton,
    NelderMead,
}

/// Gradient tolerance relative to `q V / d`.
pub const GRADIENT_TOL: f64 = 1e-9;

fn gradient_scale<B: ElectrodeBasis + ?Sized>(basis: &B, volts: &VoltageSet, species: &IonSpecies) -> f64 {
    species.charge.abs() * volts.scale() / basis.length_scale()
}

/// Minimize the total potential from `seed`: damped Newton with backtracking,
/// falling back to a simplex search if Newton stalls.
pub fn minimize_total<B: ElectrodeBasis + ?Sized>(
    basis: &B,
    volts: &VoltageSet,
    species: &IonSpecies,
    seed: Point,
) -> Result<Minimum> {
    match newton_min(basis, volts, species, seed) {
        Ok(m) => Ok(m),
        Err(_) => {
            let nm = nelder_mead(basis, volts, species, seed)?;
            // polish; if Newton still fails keep the simplex answer
            match newton_min(basis, volts, species, nm.position) {
                Ok(m) => Ok(Minimum {
                    method: MinimizerMethod::NelderMead,
                    iterations: m.iterations + nm.iterations,
                    ..m
                }),
                Err(_) => Ok(nm),
            }
        }
    }
}

fn newton_min<B: ElectrodeBasis + ?Sized>(
    basis: &B,
    volts: &VoltageSet,
    species: &IonSpecies,
    seed: Point,
) -> Result<Minimum> {
    let d = basis.length_scale();
    let gtol = GRADIENT_TOL * gradient_scale(basis, volts, species);
    let max_step = 0.25 * d;
    let mut r = seed;
    let mut ev = energy_eval(basis, volts, species, &r)?;
    for it in 0..200 {
        let sym = SymmetricEigen::new(ev.hessian);
        let lmax = sym.eigenvalues.iter().fold(0.0f64, |m, l| m.max(l.abs()));
        // shift to positive definite if needed
        let lmin = sym.eigenvalues.min();
        let shift = if lmin <= 1e-8 * lmax { -lmin + 1e-3 * lmax } else { 0.0 };
        let a = ev.hessian + Matrix3::identity() * shift;
        let Some(inv) = a.try_inverse() else {
            break;
        };
        let mut step = -(inv * ev.gradient);
        let sn = step.norm();
        if sn > max_step {
            step *= max_step / sn;
        }
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..30 {
            let trial = r + step * t;
            if trial.z > 0.01 * d {
                let u = total_energy(basis, volts, species, &trial)?;
                let slope = ev.gradient.dot(&step) * t;
                if u <= ev.energy + 1e-4 * slope || (step * t).norm() < 1e-13 * d {
                    r = trial;
                    ev = energy_eval(basis, volts, species, &r)?;
                    moved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        let taken = (step * t).norm();
        if !moved {
            // energy differences have hit rounding; accept if the gradient is small
            if ev.gradient.norm() < gtol {
                return finish(r, ev, it + 1);
            }
            break;
        }
        if ev.gradient.norm() < gtol && taken < 1e-12 * d {
            return finish(r, ev, it + 1);
        }
    }
    Err(Error::NoConvergence {
        iterations: 200,
        residual: ev.gradient.norm() / gradient_scale(basis, volts, species),
    })
}

fn finish(position: Point, eval: EnergyEval, iterations: usize) -> Result<Minimum> {
    Ok(Minimum {
        position,
        eval,
        iterations,
        method: MinimizerMethod::Newton,
    })
}

fn nelder_mead<B: ElectrodeBasis + ?Sized>(
    basis: &B,
    volts: &VoltageSet,
    species: &IonSpecies,
    seed: Point,
) -> Result<Minimum> {
    let d = basis.length_scale();
    let f = |p: &Point| -> f64 {
        if p.z <= 0.01 * d {
            return f64::INFINITY;
        }
        total_energy(basis, volts, species, p).unwrap_or(f64::INFINITY)
    };
    let mut simplex: Vec<(Point, f64)> = (0..4)
        .map(|i| {
            let mut p = seed;
            if i > 0 {
                p[i - 1] += 0.05 * d;
            }
            (p, f(&p))
        })
        .collect();
    let mut iterations = 0;
    while iterations < 5000 {
        iterations += 1;
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let size = simplex[1..]
            .iter()
            .map(|(p, _)| (p - simplex[0].0).norm())
            .fold(0.0, f64::max);
        if size < 1e-12 * d {
            break;
        }
        let centroid = (simplex[0].0 + simplex[1].0 + simplex[2].0) / 3.0;
        let worst = simplex[3];
        let refl = centroid + (centroid - worst.0);
        let fr = f(&refl);
        if fr < simplex[0].1 {
            let exp = centroid + (centroid - worst.0) * 2.0;
            let fe = f(&exp);
            simplex[3] = if fe < fr { (exp, fe) } else { (refl, fr) };
        } else if fr < simplex[2].1 {
            simplex[3] = (refl, fr);
        } else {
            let con = centroid + (worst.0 - centroid) * 0.5;
            let fc = f(&con);
            if fc < worst.1 {
                simplex[3] = (con, fc);
            } else {
                let best = simplex[0].0;
                for s in simplex.iter_mut().skip(1) {
                    s.0 = best + (s.0 - best) * 0.5;
                    s.1 = f(&s.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let position = simplex[0].0;
    if !simplex[0].1.is_finite() {
        return Err(Error::NoConvergence {
            iterations,
            residual: f64::INFINITY,
        });
    }
    Ok(Minimum {
        position,
        eval: energy_eval(basis, volts, species, &position)?,
        iterations,
        method: MinimizerMethod::NelderMead,
    })
}

/// Solver bookkeeping written beside the solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverMeta {
    pub null_iterations: usize,
    pub null_residual_per_m: f64,
    pub min_iterations: usize,
    pub method: MinimizerMethod,
    pub gradient_norm_relative: f64,
    pub gradient_tolerance_relative: f64,
    pub hessian_fd_step_m: f64,
    pub depth_probe_rays: usize,
}

/// Harmonic characterization of a trap at one voltage setting. SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapSolution {
    pub r_null: [f64; 3],
    pub r_min: [f64; 3],
    /// Secular angular frequencies, rad/s, ascending.
    pub secular_frequencies: [f64; 3],
    /// Unit principal axes, one per frequency.
    pub principal_axes: [[f64; 3]; 3],
    /// Rotation of the radial axes in the x-z plane, folded into [-45°, 45°].
    pub tilt_deg: f64,
    pub depth_ev: f64,
    /// Per principal axis.
    pub mathieu_q: [f64; 3],
    /// False when any q exceeds 0.3 and the lowest-order pseudopotential
    /// approximation becomes questionable.
    pub pseudopotential_valid: bool,
    pub species: String,
    pub meta: SolverMeta,
}

impl TrapSolution {
    pub fn frequencies_hz(&self) -> [f64; 3] {
        self.secular_frequencies.map(|w| w / std::f64::consts::TAU)
    }

    /// Index of the mode with the largest projection on the trap axis (y).
    pub fn axial_index(&self) -> usize {
        (0..3)
            .max_by(|&a, &b| {
                self.principal_axes[a][1]
                    .abs()
                    .total_cmp(&self.principal_axes[b][1].abs())
            })
            .unwrap_or(0)
    }

    pub fn axes_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.principal_axes[j][i])
    }
}

/// Find the null, minimize the total potential from it, and characterize the well.
pub fn solve_trap<B: ElectrodeBasis + ?Sized>(
    basis: &B,
    volts: &VoltageSet,
    species: &IonSpecies,
) -> Result<TrapSolution> {
    volts.validate()?;
    species.validate()?;
    let null = find_rf_null(basis)?;
    solve_trap_with_null(basis, volts, species, &null, null.position)
}

/// As [`solve_trap`] with a known null and an explicit minimizer seed.
pub fn solve_trap_with_null<B: ElectrodeBasis + ?Sized>(
    basis: &B,
    volts: &VoltageSet,
    species: &IonSpecies,
    null: &RfNull,
    seed: Point,
) -> Result<TrapSolution> {
    volts.validate()?;
    species.validate()?;
    let min = minimize_total(basis, volts, species, seed)?;
    let sym = SymmetricEigen::new(min.eval.hessian);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| sym.eigenvalues[a].total_cmp(&sym.eigenvalues[b]));
    let eig = order.map(|i| sym.eigenvalues[i]);
    if eig.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::Unstable { eigenvalues: eig });
    }
    let axes: [Vector3<f64>; 3] = order.map(|i| {
        let v: Vector3<f64> = sym.eigenvectors.column(i).into();
        // deterministic sign: largest component positive
        let k = v.iamax();
        if v[k] < 0.0 {
            -v
        } else {
            v
        }
    });
    let freqs = eig.map(|l| (l / species.mass).sqrt());

    let rf = basis.eval_role(Role::Rf, &min.position)?;
    let mq = axes.map(|a| {
        let curv = (a.transpose() * rf.hessian * a)[(0, 0)];
        2.0 * species.charge.abs() * volts.v_rf_amplitude.abs() * curv.abs()
            / (species.mass * volts.omega_rf * volts.omega_rf)
    });
    if let Some(q) = mq.iter().find(|q| **q >= 0.9) {
        return Err(Error::Domain(format!(
            "Mathieu q = {q:.3} is outside the stable pseudopotential regime"
        )));
    }

    let tilt = tilt_deg(&axes);
    let (depth, rays) = escape_depth(basis, volts, species, &min, &axes)?;

    Ok(TrapSolution {
        r_null: null.position.into(),
        r_min: min.position.into(),
        secular_frequencies: freqs,
        principal_axes: axes.map(|a| a.into()),
        tilt_deg: tilt,
        depth_ev: depth / E_CHARGE,
        mathieu_q: mq,
        pseudopotential_valid: mq.iter().all(|q| *q <= 0.3),
        species: species.label.clone(),
        meta: SolverMeta {
            null_iterations: null.iterations,
            null_residual_per_m: null.residual,
            min_iterations: min.iterations,
            method: min.method,
            gradient_norm_relative: min.eval.gradient.norm() / gradient_scale(basis, volts, species),
            gradient_tolerance_relative: GRADIENT_TOL,
            hessian_fd_step_m: fd_step(basis.length_scale()),
            depth_probe_rays: rays,
        },
    })
}

/// Angle of the radial principal axes in the x-z plane, folded to [-45°, 45°].
fn tilt_deg(axes: &[Vector3<f64>; 3]) -> f64 {
    // the two axes with least y content span the radial plane
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| axes[a].y.abs().total_cmp(&axes[b].y.abs()));
    let v = axes[idx[0]];
    let mut a = v.z.atan2(v.x).to_degrees();
    while a > 45.0 {
        a -= 90.0;
    }
    while a <= -45.0 {
        a += 90.0;
    }
    a
}

/// Lowest barrier along rays from the minimum in ±principal directions and ±z.
fn escape_depth<B: ElectrodeBasis + ?Sized>(
    basis: &B,
    volts: &VoltageSet,
    species: &IonSpecies,
    min: &Minimum,
    axes: &[Vector3<f64>; 3],
) -> Result<(f64, usize)> {
    let d = basis.length_scale();
    let mut dirs = Vec::with_capacity(8);
    for a in axes {
        dirs.push(*a);
        dirs.push(-a);
    }
    dirs.push(Vector3::z());
    dirs.push(-Vector3::z());
    let u0 = min.eval.energy;
    let n = 250;
    let reach = 5.0 * d;
    let mut depth = f64::INFINITY;
    for dir in &dirs {
        let mut barrier = u0;
        for k in 1..=n {
            let p = min.position + dir * (reach * k as f64 / n as f64);
            if p.z < 0.02 * d {
                break;
            }
            let u = total_energy(basis, volts, species, &p)?;
            barrier = barrier.max(u);
            if u < barrier - 1e-3 * (barrier - u0) && u < u0 + 0.5 * (barrier - u0) {
                // well past the top of the barrier
                break;
            }
        }
        depth = depth.min(barrier - u0);
    }
    Ok((depth.max(0.0), dirs.len()))
}

/// Distance between the total-potential minimum and the RF null.
pub fn micromotion_displacement(solution: &TrapSolution) -> f64 {
    (Vector3::from(solution.r_min) - Vector3::from(solution.r_null)).norm()
}

/// Quadratic stand-in basis with exactly known curvatures.
///
/// `φ_role(r) = c_role + g_role·(r − r0) + ½ (r − r0)ᵀ H_role (r − r0)`.
#[derive(Debug, Clone)]
pub struct QuadraticBasis {
    pub center: Point,
    pub length_scale: f64,
    pub terms: Vec<(Role, f64, Vector3<f64>, Matrix3<f64>)>,
}

impl ElectrodeBasis for QuadraticBasis {
    fn eval_role(&self, role: Role, point: &Point) -> Result<PatchEval> {
        if !(point.z > 0.0) {
            return Err(Error::Domain("evaluation point must have z > 0".into()));
        }
        let dr = point - self.center;
        let mut out = PatchEval::zero();
        for (_, c, g, h) in self.terms.iter().filter(|t| t.0 == role) {
            out.phi += c + g.dot(&dr) + 0.5 * dr.dot(&(h * dr));
            out.field -= g + h * dr;
            out.hessian += h;
        }
        Ok(out)
    }

    fn length_scale(&self) -> f64 {
        self.length_scale
    }

    fn search_center(&self) -> [f64; 2] {
        [self.center.x, self.center.y]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn synthetic(kx: f64, kz: f64, ky_dc: f64) -> QuadraticBasis {
        let d = 100e-6;
        QuadraticBasis {
            center: Point::new(0.0, 0.0, d),
            length_scale: d,
            terms: vec![
                (Role::Rf, 0.0, Vector3::zeros(), Matrix3::from_diagonal(&Vector3::new(kx, 0.0, kz))),
                (
                    Role::Dc1,
                    0.0,
                    Vector3::zeros(),
                    Matrix3::from_diagonal(&Vector3::new(-0.5 * ky_dc, ky_dc, -0.5 * ky_dc)),
                ),
            ],
        }
    }

    fn volts(v1: f64) -> VoltageSet {
        VoltageSet {
            v1,
            v2: 0.0,
            v3: 0.0,
            v4: 0.0,
            ..VoltageSet::scheme(0.0, 200.0, TAU * 30e6)
        }
    }

    #[test]
    fn quadratic_frequencies_exact() {
        let (kx, kz, ky) = (3e7, -3e7, 2e7);
        let b = synthetic(kx, kz, ky);
        let v = volts(5.0);
        let ion = IonSpecies::sr88();
        let s = solve_trap(&b, &v, &ion).unwrap();
        let c = pseudo_coefficient(&v, &ion);
        let q = ion.charge;
        let mut expect = [
            2.0 * c * kx * kx - 0.5 * q * 5.0 * ky,
            q * 5.0 * ky,
            2.0 * c * kz * kz - 0.5 * q * 5.0 * ky,
        ]
        .map(|l| (l / ion.mass).sqrt());
        expect.sort_by(f64::total_cmp);
        for (a, e) in s.secular_frequencies.iter().zip(expect) {
            assert!((a / e - 1.0).abs() < 1e-10, "{a} vs {e}");
        }
        assert!(micromotion_displacement(&s) < 1e-15);
        let m = s.axes_matrix();
        assert!((m.transpose() * m - Matrix3::identity()).norm() < 1e-10);
    }

    #[test]
    fn stray_field_displacement_matches_harmonic_response() {
        let b = synthetic(3e7, -3e7, 2e7);
        let mut v = volts(5.0);
        let ion = IonSpecies::sr88();
        let s0 = solve_trap(&b, &v, &ion).unwrap();
        let ix = (0..3).max_by(|&a, &c| s0.principal_axes[a][0].abs().total_cmp(&s0.principal_axes[c][0].abs())).unwrap();
        let wx = s0.secular_frequencies[ix];
        v.stray_field = [20.0, 0.0, 0.0];
        let s = solve_trap(&b, &v, &ion).unwrap();
        let expect = ion.charge * 20.0 / (ion.mass * wx * wx);
        assert!((micromotion_displacement(&s) / expect - 1.0).abs() < 1e-8);
    }

    #[test]
    fn unstable_reports_eigenvalues() {
        let b = synthetic(3e7, -3e7, -2e7);
        let err = solve_trap(&b, &volts(5.0), &IonSpecies::sr88()).unwrap_err();
        match err {
            Error::Unstable { eigenvalues } => assert!(eigenvalues[0] < 0.0),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn pseudo_potential_quadratic_in_amplitude() {
        let b = synthetic(3e7, -3e7, 2e7);
        let ion = IonSpecies::sr88();
        let p = Point::new(3e-6, 1e-6, 105e-6);
        let v = volts(0.0);
        let a = pseudo_potential(&b, &v, &ion, &p).unwrap();
        let v2 = VoltageSet {
            v_rf_amplitude: 2.0 * v.v_rf_amplitude,
            ..v
        };
        let b2 = pseudo_potential(&b, &v2, &ion, &p).unwrap();
        assert!((b2 / a - 4.0).abs() < 1e-12);
        assert_eq!(pseudo_potential(&b, &v, &ion, &b.center).unwrap(), 0.0);
    }

    #[test]
    fn tilt_folding() {
        let c = 10f64.to_radians().cos();
        let s = 10f64.to_radians().sin();
        let axes = [Vector3::y(), Vector3::new(c, 0.0, s), Vector3::new(-s, 0.0, c)];
        assert!((tilt_deg(&axes) - 10.0).abs() < 1e-9);
        let axes = [Vector3::y(), Vector3::new(-s, 0.0, c), Vector3::new(c, 0.0, s)];
        assert!((tilt_deg(&axes) - 10.0).abs() < 1e-9);
    }

    #[test]
    fn species_parse() {
        let s: IonSpecies = "Sr88".parse().unwrap();
        assert_eq!(s.label, "Sr88");
        assert!("Xe".parse::<IonSpecies>().is_err());
    }
}
