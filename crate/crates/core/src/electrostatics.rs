//! Unit-voltage potentials of polygonal electrodes embedded in a grounded plane.
//!
//! A patch held at 1 V in an otherwise grounded plane z = 0 produces
//! `φ(r) = Ω(r) / 2π` for z > 0, where Ω is the solid angle the patch
//! subtends at `r`. The potential is a signed fan of Van Oosterom-Strackee
//! triangle solid angles; the field is the closed line integral of the
//! boundary (one closed-form term per edge) and the Hessian is its analytic
//! derivative.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{normalized_polygon, offset_polygon, signed_area, Role, TrapLayout, Vertex};
use crate::{Error, Result};

pub type Point = Vector3<f64>;

/// Potential, field and Hessian of one basis function at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchEval {
    /// Volts per volt applied.
    pub phi: f64,
    /// Unit-voltage field `-∇φ`, 1/m.
    pub field: Vector3<f64>,
    /// `∇∇φ`, 1/m².
    pub hessian: Matrix3<f64>,
}

impl PatchEval {
    pub fn zero() -> Self {
        Self {
            phi: 0.0,
            field: Vector3::zeros(),
            hessian: Matrix3::zeros(),
        }
    }

    fn add_scaled(&mut self, other: &PatchEval, s: f64) {
        self.phi += s * other.phi;
        self.field += other.field * s;
        self.hessian += other.hessian * s;
    }
}

fn check_domain(point: &Point) -> Result<()> {
    if !(point.z > 0.0) || !point.iter().all(|c| c.is_finite()) {
        return Err(Error::Domain(format!(
            "evaluation point must have z > 0, got ({:.3e}, {:.3e}, {:.3e})",
            point.x, point.y, point.z
        )));
    }
    Ok(())
}

fn lift(v: &Vertex) -> Vector3<f64> {
    Vector3::new(v[0], v[1], 0.0)
}

fn orientation(polygon: &[Vertex]) -> f64 {
    if signed_area(polygon) >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Unit-voltage potential of a polygonal patch, i.e. its solid angle over 2π.
pub fn patch_potential(polygon: &[Vertex], point: &Point) -> Result<f64> {
    check_domain(point)?;
    Ok(fan_potential(polygon, point))
}

fn fan_potential(polygon: &[Vertex], r: &Point) -> f64 {
    let n = polygon.len();
    if n < 3 {
        return 0.0;
    }
    let a = lift(&polygon[0]) - r;
    let na = a.norm();
    let mut omega = 0.0;
    for k in 1..n - 1 {
        let b = lift(&polygon[k]) - r;
        let c = lift(&polygon[k + 1]) - r;
        let (nb, nc) = (b.norm(), c.norm());
        let num = a.dot(&b.cross(&c));
        let den = na * nb * nc + a.dot(&b) * nc + a.dot(&c) * nb + b.dot(&c) * na;
        omega += 2.0 * num.atan2(den);
    }
    // A counter-clockwise patch seen from above gives negative triple products.
    -orientation(polygon) * omega / std::f64::consts::TAU
}

/// Per-edge terms: `A = a - r`, `B = b - r`.
struct EdgeTerms {
    k: Vector3<f64>,
    na: f64,
    nb: f64,
    p: f64,
    q: f64,
    s: f64,
}

impl EdgeTerms {
    fn new(a: Vector3<f64>, b: Vector3<f64>) -> Self {
        let na = a.norm();
        let nb = b.norm();
        let k = a.cross(&b);
        let p = na * nb;
        let ab = a.dot(&b);
        // |A||B| + A·B cancels when r sits close above the edge.
        let q = if ab < 0.0 { k.norm_squared() / (p - ab) } else { p + ab };
        Self {
            k,
            na,
            nb,
            p,
            q,
            s: na + nb,
        }
    }

    fn g(&self) -> f64 {
        self.s / (self.p * self.q)
    }
}

/// Unit-voltage field `-∇φ` of the patch.
pub fn patch_field(polygon: &[Vertex], point: &Point) -> Result<Vector3<f64>> {
    check_domain(point)?;
    Ok(edge_field(polygon, point))
}

fn edge_field(polygon: &[Vertex], r: &Point) -> Vector3<f64> {
    let n = polygon.len();
    let mut e = Vector3::zeros();
    for i in 0..n {
        let a = lift(&polygon[i]) - r;
        let b = lift(&polygon[(i + 1) % n]) - r;
        let t = EdgeTerms::new(a, b);
        e += t.k * t.g();
    }
    e * (orientation(polygon) / std::f64::consts::TAU)
}

/// Potential, field and Hessian of a patch at `point`.
pub fn patch_eval(polygon: &[Vertex], point: &Point) -> Result<PatchEval> {
    check_domain(point)?;
    Ok(eval_unchecked(polygon, point))
}

fn eval_unchecked(polygon: &[Vertex], r: &Point) -> PatchEval {
    let n = polygon.len();
    let sign = orientation(polygon);
    let mut field = Vector3::zeros();
    // Jacobian of the field, ∂E_i/∂r_j
    let mut jac = Matrix3::zeros();
    for i in 0..n {
        let a = lift(&polygon[i]) - r;
        let b = lift(&polygon[(i + 1) % n]) - r;
        let t = EdgeTerms::new(a, b);
        let g = t.g();
        field += t.k * g;
        let amb = a - b;
        for j in 0..3 {
            let mut ej = Vector3::zeros();
            ej[j] = 1.0;
            let dk = ej.cross(&amb);
            let ds = -(a[j] / t.na + b[j] / t.nb);
            let dp = -(a[j] * t.nb / t.na + b[j] * t.na / t.nb);
            let dq = dp - (a[j] + b[j]);
            let pq = t.p * t.q;
            let dg = ds / pq - t.s * (dp * t.q + t.p * dq) / (pq * pq);
            let col = dk * g + t.k * dg;
            for i2 in 0..3 {
                jac[(i2, j)] += col[i2];
            }
        }
    }
    let scale = sign / std::f64::consts::TAU;
    let field = field * scale;
    let jac = jac * scale;
    // E = -∇φ, so ∇∇φ = -∂E/∂r; symmetrize away rounding.
    let h = -(jac + jac.transpose()) * 0.5;
    PatchEval {
        phi: fan_potential(polygon, r),
        field,
        hessian: h,
    }
}

/// How inter-electrode gaps enter the field model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GapTreatment {
    /// Grow every electrode to the gap midline (gapless plane).
    #[default]
    Midline,
    /// Keep gaps as grounded plane.
    Exclude,
}

impl std::str::FromStr for GapTreatment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "midline" => Ok(GapTreatment::Midline),
            "exclude" => Ok(GapTreatment::Exclude),
            other => Err(Error::InvalidParams(format!("unknown gap treatment `{other}`"))),
        }
    }
}

/// Anything that can supply unit-voltage potentials per role.
///
/// The trap solver is written against this trait so that synthetic
/// potentials can stand in for a layout.
pub trait ElectrodeBasis: Sync {
    fn eval_role(&self, role: Role, point: &Point) -> Result<PatchEval>;

    /// Characteristic length used for search boxes and finite-difference steps.
    fn length_scale(&self) -> f64;

    /// (x, y) above which the null search box is centered.
    fn search_center(&self) -> [f64; 2] {
        [0.0, 0.0]
    }
}

#[derive(Debug, Clone)]
struct Patch {
    id: String,
    role: Role,
    polygon: Vec<Vertex>,
}

/// Evaluators for every electrode of a layout.
#[derive(Debug, Clone)]
pub struct BasisPotentials {
    patches: Vec<Patch>,
    length_scale: f64,
    gap_treatment: GapTreatment,
}

/// Build per-electrode evaluators for a layout.
pub fn build_basis(layout: &TrapLayout, gap_treatment: GapTreatment) -> BasisPotentials {
    let delta = match gap_treatment {
        GapTreatment::Midline => layout.gap_width / 2.0,
        GapTreatment::Exclude => 0.0,
    };
    let patches = layout
        .electrodes
        .iter()
        .map(|e| Patch {
            id: e.id.clone(),
            role: e.role,
            polygon: if delta > 0.0 {
                offset_polygon(&e.polygon, delta)
            } else {
                normalized_polygon(&e.polygon)
            },
        })
        .collect();
    BasisPotentials {
        patches,
        length_scale: layout.characteristic_size,
        gap_treatment,
    }
}

impl BasisPotentials {
    pub fn gap_treatment(&self) -> GapTreatment {
        self.gap_treatment
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn electrode_id(&self, i: usize) -> &str {
        &self.patches[i].id
    }

    pub fn electrode_role(&self, i: usize) -> Role {
        self.patches[i].role
    }

    /// Polygon actually used for evaluation (after gap treatment).
    pub fn evaluated_polygon(&self, i: usize) -> &[Vertex] {
        &self.patches[i].polygon
    }

    pub fn eval_electrode(&self, i: usize, point: &Point) -> Result<PatchEval> {
        patch_eval(&self.patches[i].polygon, point)
    }

    pub fn potential_of_role(&self, role: Role, point: &Point) -> Result<f64> {
        check_domain(point)?;
        Ok(self
            .patches
            .iter()
            .filter(|p| p.role == role)
            .map(|p| fan_potential(&p.polygon, point))
            .sum())
    }

    pub fn field_of_role(&self, role: Role, point: &Point) -> Result<Vector3<f64>> {
        check_domain(point)?;
        Ok(self
            .patches
            .iter()
            .filter(|p| p.role == role)
            .map(|p| edge_field(&p.polygon, point))
            .sum())
    }
}

impl ElectrodeBasis for BasisPotentials {
    fn eval_role(&self, role: Role, point: &Point) -> Result<PatchEval> {
        check_domain(point)?;
        let mut acc = PatchEval::zero();
        for p in self.patches.iter().filter(|p| p.role == role) {
            acc.add_scaled(&eval_unchecked(&p.polygon, point), 1.0);
        }
        Ok(acc)
    }

    fn length_scale(&self) -> f64 {
        self.length_scale
    }
}

/// Electrode voltages and RF drive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoltageSet {
    /// RF amplitude, V.
    pub v_rf_amplitude: f64,
    /// RF angular drive frequency, rad/s.
    pub omega_rf: f64,
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    pub v4: f64,
    #[serde(default)]
    pub v_center: f64,
    /// Uniform stray field at the ion, V/m.
    #[serde(default)]
    pub stray_field: [f64; 3],
}

impl VoltageSet {
    /// The operating scheme `V1 = V2 = -V3 = -5/4 V4`.
    pub fn scheme(v1: f64, v_rf_amplitude: f64, omega_rf: f64) -> Self {
        Self {
            v_rf_amplitude,
            omega_rf,
            v1,
            v2: v1,
            v3: -v1,
            v4: -0.8 * v1,
            v_center: 0.0,
            stray_field: [0.0; 3],
        }
    }

    /// V1 = 25 V scheme at 250 V, 26 MHz drive.
    pub fn operating_point() -> Self {
        Self::scheme(25.0, 250.0, std::f64::consts::TAU * 26e6)
    }

    /// Settings shown in the computed pseudopotential map: V1 = V2 = 16 V,
    /// V3 = -16 V, V4 = -13 V, 240 V RF amplitude.
    pub fn map_setting() -> Self {
        Self {
            v4: -13.0,
            ..Self::scheme(16.0, 240.0, std::f64::consts::TAU * 26e6)
        }
    }

    pub fn dc_voltage(&self, role: Role) -> f64 {
        match role {
            Role::Dc1 => self.v1,
            Role::Dc2 => self.v2,
            Role::Dc3 => self.v3,
            Role::Dc4 => self.v4,
            Role::Center => self.v_center,
            Role::Rf | Role::Ground => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_rf > 0.0) {
            return Err(Error::InvalidParams("omega_rf must be > 0".into()));
        }
        let all = [
            self.v_rf_amplitude,
            self.v1,
            self.v2,
            self.v3,
            self.v4,
            self.v_center,
        ];
        if all.iter().chain(self.stray_field.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite voltage".into()));
        }
        Ok(())
    }

    /// Same DC pattern with every DC voltage multiplied by `s`.
    pub fn with_dc_scaled(&self, s: f64) -> Self {
        Self {
            v1: self.v1 * s,
            v2: self.v2 * s,
            v3: self.v3 * s,
            v4: self.v4 * s,
            v_center: self.v_center * s,
            stray_field: self.stray_field.map(|e| e * s),
            ..*self
        }
    }

    /// Largest voltage magnitude, used for tolerance scales.
    pub fn scale(&self) -> f64 {
        [
            self.v_rf_amplitude,
            self.v1,
            self.v2,
            self.v3,
            self.v4,
            self.v_center,
        ]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-30)
    }
}

const STATIC_ROLES: [Role; 5] = [Role::Dc1, Role::Dc2, Role::Dc3, Role::Dc4, Role::Center];

/// Static potential (V), field (V/m) and Hessian (V/m²) of the DC electrodes
/// plus the stray field.
pub fn static_potential<B: ElectrodeBasis + ?Sized>(
    basis: &B,
    volts: &VoltageSet,
    point: &Point,
) -> Result<PatchEval> {
    let mut acc = PatchEval::zero();
    for role in STATIC_ROLES {
        let v = volts.dc_voltage(role);
        if v != 0.0 {
            acc.add_scaled(&basis.eval_role(role, point)?, v);
        }
    }
    let es = Vector3::from(volts.stray_field);
    acc.phi -= es.dot(point);
    acc.field += es;
    Ok(acc)
}

/// How per-electrode transfer factors combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransferCombine {
    /// Fully correlated noise: magnitude of the summed unit fields.
    Coherent,
    /// Uncorrelated noise: root-sum-square of the unit-field magnitudes.
    Rss,
}

/// Field at `point` per volt of noise on the selected electrodes, 1/m.
///
/// Squaring the result and multiplying by a voltage noise density gives the
/// field noise density at the ion.
pub fn field_noise_transfer<B: ElectrodeBasis + ?Sized>(
    basis: &B,
    point: &Point,
    roles: &[Role],
    combine: TransferCombine,
) -> Result<f64> {
    check_domain(point)?;
    if roles.is_empty() {
        return Ok(0.0);
    }
    let fields = roles
        .iter()
        .map(|r| basis.eval_role(*r, point).map(|e| e.field))
        .collect::<Result<Vec<_>>>()?;
    Ok(match combine {
        TransferCombine::Coherent => fields.iter().sum::<Vector3<f64>>().norm(),
        TransferCombine::Rss => fields.iter().map(|f| f.norm_squared()).sum::<f64>().sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_five_rod, Electrode, FiveRodParams};

    fn square(a: f64) -> Vec<Vertex> {
        vec![[-a, -a], [a, -a], [a, a], [-a, a]]
    }

    #[test]
    fn square_above_center_is_cube_face() {
        // solid angle of a square of half-side a at height a is 4π/6
        let phi = patch_potential(&square(1.0), &Point::new(0.0, 0.0, 1.0)).unwrap();
        assert!((phi - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn infinite_patch_limit() {
        let phi = patch_potential(&square(1e3), &Point::new(0.1, -0.2, 1.0)).unwrap();
        assert!((phi - 1.0).abs() < 1e-3);
        let phi = patch_potential(&square(1e6), &Point::new(0.1, -0.2, 1.0)).unwrap();
        assert!((phi - 1.0).abs() < 1e-6);
    }

    #[test]
    fn orientation_does_not_matter() {
        let mut cw = square(1.0);
        cw.reverse();
        let r = Point::new(0.3, 0.7, 0.4);
        let a = patch_eval(&square(1.0), &r).unwrap();
        let b = patch_eval(&cw, &r).unwrap();
        assert!((a.phi - b.phi).abs() < 1e-15);
        assert!((a.field - b.field).norm() < 1e-14);
        assert!((a.hessian - b.hessian).norm() < 1e-13);
    }

    #[test]
    fn additivity_of_split_rectangle() {
        let whole = vec![[0.0, 0.0], [3.0, 0.0], [3.0, 1.0], [0.0, 1.0]];
        let left = vec![[0.0, 0.0], [1.2, 0.0], [1.2, 1.0], [0.0, 1.0]];
        let right = vec![[1.2, 0.0], [3.0, 0.0], [3.0, 1.0], [1.2, 1.0]];
        for r in [Point::new(0.5, 0.5, 0.3), Point::new(-2.0, 4.0, 1.5), Point::new(1.2, 0.5, 0.01)] {
            let w = patch_eval(&whole, &r).unwrap();
            let l = patch_eval(&left, &r).unwrap();
            let rr = patch_eval(&right, &r).unwrap();
            assert!((w.phi - l.phi - rr.phi).abs() < 1e-12);
            assert!((w.field - l.field - rr.field).norm() < 1e-10 * w.field.norm().max(1.0));
        }
    }

    #[test]
    fn domain_error_at_or_below_plane() {
        assert!(matches!(
            patch_potential(&square(1.0), &Point::new(0.0, 0.0, 0.0)),
            Err(Error::Domain(_))
        ));
        assert!(patch_eval(&square(1.0), &Point::new(0.0, 0.0, -1.0)).is_err());
    }

    #[test]
    fn field_points_away_from_positive_patch() {
        let e = patch_field(&square(1.0), &Point::new(0.0, 0.0, 1.0)).unwrap();
        assert!(e.z > 0.0);
        assert!(e.x.abs() < 1e-15 && e.y.abs() < 1e-15);
    }

    #[test]
    fn nonconvex_polygon_matches_decomposition() {
        let l_shape = vec![[0.0, 0.0], [3.0, 0.0], [3.0, 1.0], [1.0, 1.0], [1.0, 2.0], [0.0, 2.0]];
        let a = vec![[0.0, 0.0], [3.0, 0.0], [3.0, 1.0], [0.0, 1.0]];
        let b = vec![[0.0, 1.0], [1.0, 1.0], [1.0, 2.0], [0.0, 2.0]];
        let r = Point::new(2.5, 1.7, 0.3);
        let l = patch_eval(&l_shape, &r).unwrap();
        let pa = patch_eval(&a, &r).unwrap();
        let pb = patch_eval(&b, &r).unwrap();
        assert!((l.phi - pa.phi - pb.phi).abs() < 1e-13);
        assert!((l.hessian - pa.hessian - pb.hessian).norm() < 1e-11);
    }

    #[test]
    fn equipotential_cover_has_no_field() {
        // two halves of a very large square at the same voltage
        let big = 1e3;
        let layout = TrapLayout {
            electrodes: vec![
                Electrode::new("a", Role::Rf, vec![[-big, -big], [0.0, -big], [0.0, big], [-big, big]]),
                Electrode::new("b", Role::Dc1, vec![[0.0, -big], [big, -big], [big, big], [0.0, big]]),
            ],
            characteristic_size: 1e-4,
            gap_width: 0.0,
            five_rod: None,
        };
        let basis = build_basis(&layout, GapTreatment::Midline);
        let r = Point::new(1e-5, 2e-5, 1e-4);
        let a = basis.eval_role(Role::Rf, &r).unwrap();
        let b = basis.eval_role(Role::Dc1, &r).unwrap();
        let v = 3.0;
        let phi = v * (a.phi + b.phi);
        let field = (a.field + b.field) * v;
        assert!((phi - v).abs() < 1e-3 * v);
        // compare with the single-electrode field scale 1/h
        assert!(field.norm() < 1e-6 * v / r.z);
        let t = field_noise_transfer(&basis, &r, &[Role::Rf, Role::Dc1], TransferCombine::Coherent)
            .unwrap();
        assert!(t < 1e-6 / r.z);
    }

    #[test]
    fn empty_subset_has_zero_transfer() {
        let layout = build_five_rod(&FiveRodParams::with_defaults(136e-6, 21e-6, 170e-6)).unwrap();
        let basis = build_basis(&layout, GapTreatment::Midline);
        let t = field_noise_transfer(&basis, &Point::new(0.0, 0.0, 1.5e-4), &[], TransferCombine::Rss)
            .unwrap();
        assert_eq!(t, 0.0);
    }

    #[test]
    fn transfer_scales_inversely_with_size() {
        let layout = build_five_rod(&FiveRodParams::with_defaults(136e-6, 21e-6, 170e-6)).unwrap();
        let b1 = build_basis(&layout, GapTreatment::Midline);
        let b2 = build_basis(&layout.scaled(2.0), GapTreatment::Midline);
        let r = Point::new(-3e-6, 1e-6, 1.5e-4);
        for combine in [TransferCombine::Coherent, TransferCombine::Rss] {
            let t1 = field_noise_transfer(&b1, &r, &Role::DC, combine).unwrap();
            let t2 = field_noise_transfer(&b2, &(r * 2.0), &Role::DC, combine).unwrap();
            assert!((t2 / t1 - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn stray_field_enters_static_potential() {
        let layout = build_five_rod(&FiveRodParams::with_defaults(136e-6, 21e-6, 170e-6)).unwrap();
        let basis = build_basis(&layout, GapTreatment::Midline);
        let mut v = VoltageSet::operating_point();
        let r = Point::new(1e-6, 2e-6, 1.4e-4);
        let base = static_potential(&basis, &v, &r).unwrap();
        v.stray_field = [100.0, 0.0, 0.0];
        let with = static_potential(&basis, &v, &r).unwrap();
        assert!((with.field.x - base.field.x - 100.0).abs() < 1e-9);
        assert!((with.phi - base.phi + 100.0 * r.x).abs() < 1e-12);
    }

    #[test]
    fn scheme_ratios() {
        let v = VoltageSet::scheme(25.0, 250.0, 1.0);
        assert_eq!(v.v2, 25.0);
        assert_eq!(v.v3, -25.0);
        assert!((v.v4 + 20.0).abs() < 1e-12);
        assert!(VoltageSet { omega_rf: 0.0, ..v }.validate().is_err());
    }
}
