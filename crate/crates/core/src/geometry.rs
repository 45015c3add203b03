//! Planar electrode layouts at z = 0 and the five-rod surface trap generator.
//!
//! Coordinates: x is transverse to the trap axis, y runs along the axis and
//! z is the height above the electrode plane. Everything is in meters.

use serde::{Deserialize, Serialize};

use crate::electrostatics::{build_basis, GapTreatment};
use crate::pseudopotential::find_rf_null;
use crate::{Error, Result};

/// Voltage role of an electrode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "RF")]
    Rf,
    #[serde(rename = "DC1")]
    Dc1,
    #[serde(rename = "DC2")]
    Dc2,
    #[serde(rename = "DC3")]
    Dc3,
    #[serde(rename = "DC4")]
    Dc4,
    #[serde(rename = "CENTER")]
    Center,
    #[serde(rename = "GROUND")]
    Ground,
}

impl Role {
    pub const DC: [Role; 4] = [Role::Dc1, Role::Dc2, Role::Dc3, Role::Dc4];

    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Rf => "RF",
            Role::Dc1 => "DC1",
            Role::Dc2 => "DC2",
            Role::Dc3 => "DC3",
            Role::Dc4 => "DC4",
            Role::Center => "CENTER",
            Role::Ground => "GROUND",
        }
    }
}

impl std::str::FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_uppercase().as_str() {
            "RF" => Role::Rf,
            "DC1" => Role::Dc1,
            "DC2" => Role::Dc2,
            "DC3" => Role::Dc3,
            "DC4" => Role::Dc4,
            "CENTER" => Role::Center,
            "GROUND" => Role::Ground,
            other => return Err(Error::InvalidParams(format!("unknown role `{other}`"))),
        })
    }
}

pub type Vertex = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Electrode {
    pub id: String,
    pub role: Role,
    pub polygon: Vec<Vertex>,
}

impl Electrode {
    pub fn new(id: impl Into<String>, role: Role, polygon: Vec<Vertex>) -> Self {
        Self {
            id: id.into(),
            role,
            polygon,
        }
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.polygon).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapLayout {
    pub electrodes: Vec<Electrode>,
    /// Nominal ion-surface distance label (75/100/150 µm class).
    #[serde(rename = "characteristic_size_d")]
    pub characteristic_size: f64,
    pub gap_width: f64,
    /// Parameters the layout was generated from, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub five_rod: Option<FiveRodParams>,
}

impl TrapLayout {
    /// Check the layout invariants: simple polygons with positive area,
    /// pairwise disjoint interiors, at least one RF part, positive size.
    pub fn validate(&self) -> Result<()> {
        if !(self.characteristic_size > 0.0) {
            return Err(Error::InvalidLayout(
                "characteristic size must be positive".into(),
            ));
        }
        if !(self.gap_width >= 0.0) {
            return Err(Error::InvalidLayout("gap width must be non-negative".into()));
        }
        if !self.electrodes.iter().any(|e| e.role == Role::Rf) {
            return Err(Error::InvalidLayout("no electrode with role RF".into()));
        }
        for e in &self.electrodes {
            validate_polygon(&e.polygon).map_err(|msg| {
                Error::InvalidLayout(format!("electrode `{}`: {msg}", e.id))
            })?;
        }
        for (i, a) in self.electrodes.iter().enumerate() {
            for b in &self.electrodes[i + 1..] {
                if interiors_overlap(&a.polygon, &b.polygon) {
                    return Err(Error::InvalidLayout(format!(
                        "electrodes `{}` and `{}` overlap",
                        a.id, b.id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn electrodes_with_role(&self, role: Role) -> impl Iterator<Item = &Electrode> {
        self.electrodes.iter().filter(move |e| e.role == role)
    }

    /// Copy of the layout with every length multiplied by `s`.
    pub fn scaled(&self, s: f64) -> TrapLayout {
        TrapLayout {
            electrodes: self
                .electrodes
                .iter()
                .map(|e| Electrode {
                    id: e.id.clone(),
                    role: e.role,
                    polygon: e.polygon.iter().map(|v| [v[0] * s, v[1] * s]).collect(),
                })
                .collect(),
            characteristic_size: self.characteristic_size * s,
            gap_width: self.gap_width * s,
            five_rod: self.five_rod.map(|p| p.scaled(s)),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<TrapLayout> {
        let layout: TrapLayout = serde_json::from_str(s)?;
        layout.validate()?;
        Ok(layout)
    }
}

/// Dimensions of the five-rod layout: a notched center strip, two RF rails
/// and segmented outer DC rails.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiveRodParams {
    /// Width of the center strip at the notch.
    pub center_width: f64,
    pub gap: f64,
    pub rf_rail_width: f64,
    pub outer_dc_width: f64,
    pub electrode_length: f64,
    /// Axial extent of the notch.
    pub notch_width: f64,
    /// Transverse depth of the notch; the strip is `center_width + notch_depth`
    /// wide away from it.
    pub notch_depth: f64,
    /// Axial length of the middle DC segment on each side.
    pub dc_segment_length: f64,
}

impl FiveRodParams {
    /// Fill the unstated dimensions from the center width.
    pub fn with_defaults(center_width: f64, gap: f64, rf_rail_width: f64) -> Self {
        Self {
            center_width,
            gap,
            rf_rail_width,
            outer_dc_width: 2.0 * center_width,
            electrode_length: 10.0 * center_width,
            notch_width: center_width / 2.0,
            notch_depth: center_width / 4.0,
            dc_segment_length: 3.0 * center_width,
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            center_width: self.center_width * s,
            gap: self.gap * s,
            rf_rail_width: self.rf_rail_width * s,
            outer_dc_width: self.outer_dc_width * s,
            electrode_length: self.electrode_length * s,
            notch_width: self.notch_width * s,
            notch_depth: self.notch_depth * s,
            dc_segment_length: self.dc_segment_length * s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("center_width", self.center_width),
            ("gap", self.gap),
            ("rf_rail_width", self.rf_rail_width),
            ("outer_dc_width", self.outer_dc_width),
            ("electrode_length", self.electrode_length),
            ("dc_segment_length", self.dc_segment_length),
        ];
        for (name, v) in named {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParams(format!("{name} must be > 0, got {v}")));
            }
        }
        // A vanishing notch is the un-notched layout.
        if !(self.notch_depth >= 0.0) || !(self.notch_width >= 0.0) {
            return Err(Error::InvalidParams("notch dimensions must be >= 0".into()));
        }
        if self.notch_depth >= self.center_width {
            return Err(Error::InvalidParams(
                "notch_depth must be smaller than center_width".into(),
            ));
        }
        Ok(())
    }

    fn has_notch(&self) -> bool {
        self.notch_depth > 0.0 && self.notch_width > 0.0
    }
}

/// Named parameter profiles for the three trap sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Profile {
    L75,
    L100,
    L150,
}

impl Profile {
    pub fn height(&self) -> f64 {
        match self {
            Profile::L75 => 75e-6,
            Profile::L100 => 100e-6,
            Profile::L150 => 150e-6,
        }
    }

    /// Uncalibrated parameters. The 150 µm trap has a 136 µm wide center
    /// electrode at the notch and 21 µm gaps; the smaller traps are scaled
    /// copies. The rail width is a placeholder for [`calibrate_rail_width`].
    pub fn params(&self) -> FiveRodParams {
        let s = self.height() / 150e-6;
        FiveRodParams::with_defaults(136e-6 * s, 21e-6 * s, 170e-6 * s)
    }

    /// Calibrated layout with the RF null at the nominal height.
    pub fn layout(&self) -> Result<TrapLayout> {
        let params = calibrate_rail_width(self.height(), &self.params())?;
        let mut layout = build_five_rod(&params)?;
        layout.characteristic_size = self.height();
        Ok(layout)
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "L75" => Ok(Profile::L75),
            "L100" => Ok(Profile::L100),
            "L150" => Ok(Profile::L150),
            other => Err(Error::InvalidParams(format!("unknown profile `{other}`"))),
        }
    }
}

/// Build the five-rod layout.
///
/// The center strip spans `x ∈ [-W/2, W/2]` with `W = center_width +
/// notch_depth`; the notch is cut into its +x edge around y = 0 and the +x RF
/// rail carries a matching tab. DC rails are split into a middle segment of
/// length `dc_segment_length` and two end segments:
///
/// | role | position          |
/// |------|-------------------|
/// | DC1  | +x end segments   |
/// | DC2  | -x end segments   |
/// | DC3  | +x middle segment |
/// | DC4  | -x middle segment |
pub fn build_five_rod(p: &FiveRodParams) -> Result<TrapLayout> {
    p.validate()?;
    let g = p.gap;
    let half_len = p.electrode_length / 2.0;
    let w_full = p.center_width + p.notch_depth;
    let xc = w_full / 2.0;
    let notch = p.has_notch();
    let nw2 = p.notch_width / 2.0;
    let nd = p.notch_depth;

    if notch && nw2 >= half_len {
        return Err(Error::InvalidParams(
            "notch_width must be shorter than the electrodes".into(),
        ));
    }
    let seg2 = p.dc_segment_length / 2.0;
    if seg2 - g / 2.0 <= 0.0 {
        return Err(Error::InvalidParams(
            "gap closes the middle DC segment".into(),
        ));
    }
    if seg2 + g / 2.0 >= half_len {
        return Err(Error::InvalidParams(
            "DC end segments vanish: dc_segment_length + gap exceeds electrode_length".into(),
        ));
    }

    let mut electrodes = Vec::with_capacity(9);

    let center = if notch {
        vec![
            [-xc, -half_len],
            [xc, -half_len],
            [xc, -nw2],
            [xc - nd, -nw2],
            [xc - nd, nw2],
            [xc, nw2],
            [xc, half_len],
            [-xc, half_len],
        ]
    } else {
        rect(-xc, xc, -half_len, half_len)
    };
    electrodes.push(Electrode::new("CENTER", Role::Center, center));

    let rf_in = xc + g;
    let rf_out = rf_in + p.rf_rail_width;
    let tab = nw2 - g;
    let rf_a = if notch && tab > 0.0 {
        vec![
            [rf_in, -half_len],
            [rf_out, -half_len],
            [rf_out, half_len],
            [rf_in, half_len],
            [rf_in, tab],
            [rf_in - nd, tab],
            [rf_in - nd, -tab],
            [rf_in, -tab],
        ]
    } else {
        rect(rf_in, rf_out, -half_len, half_len)
    };
    electrodes.push(Electrode::new("RF_A", Role::Rf, rf_a));
    electrodes.push(Electrode::new(
        "RF_B",
        Role::Rf,
        rect(-rf_out, -rf_in, -half_len, half_len),
    ));

    let dc_in = rf_out + g;
    let dc_out = dc_in + p.outer_dc_width;
    let s_in = seg2 - g / 2.0;
    let s_out = seg2 + g / 2.0;
    for (side, sign) in [("A", 1.0), ("B", -1.0)] {
        let (x0, x1) = if sign > 0.0 {
            (dc_in, dc_out)
        } else {
            (-dc_out, -dc_in)
        };
        let (end_role, mid_role) = if sign > 0.0 {
            (Role::Dc1, Role::Dc3)
        } else {
            (Role::Dc2, Role::Dc4)
        };
        electrodes.push(Electrode::new(
            format!("{}_{side}N", end_role.as_str()),
            end_role,
            rect(x0, x1, s_out, half_len),
        ));
        electrodes.push(Electrode::new(
            format!("{}_{side}S", end_role.as_str()),
            end_role,
            rect(x0, x1, -half_len, -s_out),
        ));
        electrodes.push(Electrode::new(
            format!("{}_{side}", mid_role.as_str()),
            mid_role,
            rect(x0, x1, -s_in, s_in),
        ));
    }

    let layout = TrapLayout {
        electrodes,
        characteristic_size: p.center_width.max(1e-12),
        gap_width: g,
        five_rod: Some(*p),
    };
    layout.validate()?;
    Ok(layout)
}

/// Solve for the RF rail width that puts the RF null at `target_height`.
///
/// Bisection-secant (Illinois) root find on `h_null(w) - target` over
/// `[gap, 10·target]`.
pub fn calibrate_rail_width(target_height: f64, params: &FiveRodParams) -> Result<FiveRodParams> {
    if !(target_height > 0.0) {
        return Err(Error::InvalidParams("target height must be > 0".into()));
    }
    params.validate()?;
    let residual = |w: f64| -> Result<f64> {
        let mut p = *params;
        p.rf_rail_width = w;
        let mut layout = build_five_rod(&p)?;
        // search box follows the trial geometry, not the target
        let a = p.center_width + p.gap;
        layout.characteristic_size = 0.5 * (a * (a + 2.0 * w)).sqrt();
        let basis = build_basis(&layout, GapTreatment::Midline);
        let null = find_rf_null(&basis)?;
        Ok(null.position.z - target_height)
    };

    let mut lo = params.gap;
    let mut hi = 10.0 * target_height;
    let mut f_lo = residual(lo)?;
    let mut f_hi = residual(hi)?;
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::NoRoot { lo, hi, f_lo, f_hi });
    }
    let tol = 1e-7 * target_height;
    let mut side = 0i8;
    for _ in 0..200 {
        let w = (lo * f_hi - hi * f_lo) / (f_hi - f_lo);
        let f = residual(w)?;
        if f.abs() < tol || (hi - lo) < 1e-9 * target_height {
            let mut out = *params;
            out.rf_rail_width = w;
            return Ok(out);
        }
        if f.signum() == f_hi.signum() {
            hi = w;
            f_hi = f;
            if side == 1 {
                f_lo /= 2.0;
            }
            side = 1;
        } else {
            lo = w;
            f_lo = f;
            if side == -1 {
                f_hi /= 2.0;
            }
            side = -1;
        }
    }
    Err(Error::NoConvergence {
        iterations: 200,
        residual: f_lo.abs().min(f_hi.abs()),
    })
}

fn rect(x0: f64, x1: f64, y0: f64, y1: f64) -> Vec<Vertex> {
    vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
}

/// Shoelace area, positive for counter-clockwise order seen from +z.
pub fn signed_area(poly: &[Vertex]) -> f64 {
    let n = poly.len();
    let mut a = 0.0;
    for i in 0..n {
        let p = poly[i];
        let q = poly[(i + 1) % n];
        a += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * a
}

fn validate_polygon(poly: &[Vertex]) -> std::result::Result<(), String> {
    if poly.len() < 3 {
        return Err(format!("polygon has {} vertices, need >= 3", poly.len()));
    }
    if poly.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
        return Err("non-finite vertex".into());
    }
    if !(signed_area(poly).abs() > 0.0) {
        return Err("polygon has zero area".into());
    }
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        for j in i + 1..n {
            // skip edges sharing a vertex
            if j == i || (j + 1) % n == i || (i + 1) % n == j {
                continue;
            }
            let (c, d) = (poly[j], poly[(j + 1) % n]);
            if segments_intersect(a, b, c, d) {
                return Err(format!("edges {i} and {j} intersect"));
            }
        }
    }
    Ok(())
}

fn orient(a: Vertex, b: Vertex, c: Vertex) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: Vertex, b: Vertex, p: Vertex) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

/// Closed-segment intersection test (touching counts).
fn segments_intersect(a: Vertex, b: Vertex, c: Vertex, d: Vertex) -> bool {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return true;
    }
    (o1 == 0.0 && on_segment(a, b, c))
        || (o2 == 0.0 && on_segment(a, b, d))
        || (o3 == 0.0 && on_segment(c, d, a))
        || (o4 == 0.0 && on_segment(c, d, b))
}

/// Proper crossing only: the segments cross at a point interior to both.
fn segments_cross(a: Vertex, b: Vertex, c: Vertex, d: Vertex) -> bool {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    o1 * o2 < 0.0 && o3 * o4 < 0.0
}

/// Winding test; points on the boundary count as outside.
pub fn point_strictly_inside(poly: &[Vertex], p: Vertex) -> bool {
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if orient(a, b, p) == 0.0 && on_segment(a, b, p) {
            return false;
        }
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (pi, pj) = (poly[i], poly[j]);
        if (pi[1] > p[1]) != (pj[1] > p[1])
            && p[0] < (pj[0] - pi[0]) * (p[1] - pi[1]) / (pj[1] - pi[1]) + pi[0]
        {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn interiors_overlap(a: &[Vertex], b: &[Vertex]) -> bool {
    let (na, nb) = (a.len(), b.len());
    for i in 0..na {
        for j in 0..nb {
            if segments_cross(a[i], a[(i + 1) % na], b[j], b[(j + 1) % nb]) {
                return true;
            }
        }
    }
    let probes = |p: &[Vertex], q: &[Vertex]| {
        let n = p.len();
        (0..n).any(|i| {
            let v = p[i];
            let w = p[(i + 1) % n];
            point_strictly_inside(q, v)
                || point_strictly_inside(q, [(v[0] + w[0]) / 2.0, (v[1] + w[1]) / 2.0])
        }) || interior_point(p).is_some_and(|c| point_strictly_inside(q, c))
    };
    probes(a, b) || probes(b, a)
}

/// Some point strictly inside a simple polygon.
fn interior_point(poly: &[Vertex]) -> Option<Vertex> {
    // Try points just inside each edge midpoint.
    let n = poly.len();
    let ccw = signed_area(poly) > 0.0;
    let scale = poly
        .iter()
        .flat_map(|v| v.iter())
        .fold(0.0f64, |m, x| m.max(x.abs()))
        .max(1e-300);
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len = dx.hypot(dy);
        if len == 0.0 {
            continue;
        }
        // inward normal
        let (nx, ny) = if ccw { (-dy / len, dx / len) } else { (dy / len, -dx / len) };
        let eps = 1e-7 * scale;
        let p = [(a[0] + b[0]) / 2.0 + eps * nx, (a[1] + b[1]) / 2.0 + eps * ny];
        if point_strictly_inside(poly, p) {
            return Some(p);
        }
    }
    None
}

/// Counter-clockwise copy of the polygon with collinear and repeated
/// vertices removed.
pub fn normalized_polygon(poly: &[Vertex]) -> Vec<Vertex> {
    let mut v: Vec<Vertex> = poly.to_vec();
    if signed_area(&v) < 0.0 {
        v.reverse();
    }
    let mut changed = true;
    while changed && v.len() > 3 {
        changed = false;
        let n = v.len();
        for i in 0..n {
            let a = v[(i + n - 1) % n];
            let b = v[i];
            let c = v[(i + 1) % n];
            let span = (c[0] - a[0]).abs() + (c[1] - a[1]).abs();
            if b == a || orient(a, b, c).abs() <= 1e-12 * span * span {
                v.remove(i);
                changed = true;
                break;
            }
        }
    }
    v
}

/// Miter offset of a simple polygon outward by `delta`.
///
/// Used for the gap-midline convention; exact for the rectilinear polygons
/// produced by [`build_five_rod`].
pub fn offset_polygon(poly: &[Vertex], delta: f64) -> Vec<Vertex> {
    let v = normalized_polygon(poly);
    if delta == 0.0 {
        return v;
    }
    let n = v.len();
    // outward normal of edge i (v[i] -> v[i+1]) for a CCW polygon
    let normal = |i: usize| {
        let a = v[i];
        let b = v[(i + 1) % n];
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let l = dx.hypot(dy);
        [dy / l, -dx / l]
    };
    (0..n)
        .map(|i| {
            let n0 = normal((i + n - 1) % n);
            let n1 = normal(i);
            // Offset vertex m satisfies m·n0 = p·n0 + δ and m·n1 = p·n1 + δ.
            let det = n0[0] * n1[1] - n0[1] * n1[0];
            let p = v[i];
            if det.abs() < 1e-12 {
                [p[0] + delta * n1[0], p[1] + delta * n1[1]]
            } else {
                let r0 = delta;
                let r1 = delta;
                let dx = (r0 * n1[1] - r1 * n0[1]) / det;
                let dy = (n0[0] * r1 - n1[0] * r0) / det;
                [p[0] + dx, p[1] + dy]
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const UM: f64 = 1e-6;

    fn measured_params() -> FiveRodParams {
        FiveRodParams::with_defaults(136.0 * UM, 21.0 * UM, 170.0 * UM)
    }

    fn width_at_y(poly: &[Vertex], y: f64) -> f64 {
        // horizontal extent of a rectilinear polygon cut at height y
        let n = poly.len();
        let mut xs = Vec::new();
        for i in 0..n {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            if (a[1] - y) * (b[1] - y) < 0.0 {
                xs.push(a[0] + (b[0] - a[0]) * (y - a[1]) / (b[1] - a[1]));
            }
        }
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        xs.chunks(2).map(|c| c[1] - c[0]).sum()
    }

    #[test]
    fn center_width_at_notch_matches() {
        let layout = build_five_rod(&measured_params()).unwrap();
        let center = layout.electrodes_with_role(Role::Center).next().unwrap();
        assert!((width_at_y(&center.polygon, 0.0) - 136.0 * UM).abs() < 1e-12);
        // away from the notch the strip is wider by the notch depth
        assert!((width_at_y(&center.polygon, 200.0 * UM) - 170.0 * UM).abs() < 1e-12);
    }

    #[test]
    fn five_rod_has_expected_roles() {
        let layout = build_five_rod(&measured_params()).unwrap();
        let count = |r| layout.electrodes_with_role(r).count();
        assert_eq!(count(Role::Rf), 2);
        assert_eq!(count(Role::Center), 1);
        assert_eq!(count(Role::Dc1), 2);
        assert_eq!(count(Role::Dc2), 2);
        assert_eq!(count(Role::Dc3), 1);
        assert_eq!(count(Role::Dc4), 1);
    }

    #[test]
    fn gaps_respected_between_neighbours() {
        let p = measured_params();
        let layout = build_five_rod(&p).unwrap();
        let xmax = |id: &str| {
            let e = layout.electrodes.iter().find(|e| e.id == id).unwrap();
            e.polygon.iter().map(|v| v[0]).fold(f64::MIN, f64::max)
        };
        let xmin = |id: &str| {
            let e = layout.electrodes.iter().find(|e| e.id == id).unwrap();
            e.polygon.iter().map(|v| v[0]).fold(f64::MAX, f64::min)
        };
        assert!((xmin("RF_A") - (xmax("CENTER") - p.notch_depth) - p.gap).abs() < 1e-15);
        assert!((xmin("DC3_A") - xmax("RF_A") - p.gap).abs() < 1e-15);
        assert!((xmax("RF_B") + xmax("CENTER") + p.gap).abs() < 1e-15);
    }

    #[test]
    fn degenerate_notch_equals_plain_layout() {
        let mut p = measured_params();
        p.notch_depth = 0.0;
        let a = build_five_rod(&p).unwrap();
        p.notch_width = 0.0;
        let b = build_five_rod(&p).unwrap();
        for (ea, eb) in a.electrodes.iter().zip(&b.electrodes) {
            assert_eq!(normalized_polygon(&ea.polygon), normalized_polygon(&eb.polygon));
        }
        assert_eq!(a.electrodes_with_role(Role::Center).next().unwrap().polygon.len(), 4);
    }

    #[test]
    fn unnotched_layout_is_mirror_symmetric() {
        let mut p = measured_params();
        p.notch_depth = 0.0;
        let layout = build_five_rod(&p).unwrap();
        let mut area_by_sign = [0.0, 0.0];
        for e in &layout.electrodes {
            let mirrored: Vec<Vertex> = e.polygon.iter().map(|v| [-v[0], v[1]]).collect();
            let found = layout.electrodes.iter().any(|o| {
                let mut a = normalized_polygon(&o.polygon);
                let mut b = normalized_polygon(&mirrored);
                a.sort_by(|x, y| x.partial_cmp(y).unwrap());
                b.sort_by(|x, y| x.partial_cmp(y).unwrap());
                a.iter().zip(&b).all(|(u, w)| (u[0] - w[0]).abs() < 1e-15 && (u[1] - w[1]).abs() < 1e-15)
            });
            assert!(found, "no mirror image for {}", e.id);
            let cx: f64 = e.polygon.iter().map(|v| v[0]).sum::<f64>();
            area_by_sign[(cx < 0.0) as usize] += e.area();
        }
        assert!(area_by_sign[0] > 0.0 && area_by_sign[1] > 0.0);
    }

    #[test]
    fn rejects_bad_params() {
        let mut p = measured_params();
        p.notch_depth = p.center_width;
        assert!(build_five_rod(&p).is_err());
        let mut p = measured_params();
        p.dc_segment_length = p.gap / 2.0;
        assert!(matches!(build_five_rod(&p), Err(Error::InvalidParams(_))));
        let mut p = measured_params();
        p.dc_segment_length = p.electrode_length;
        assert!(build_five_rod(&p).is_err());
        let mut p = measured_params();
        p.gap = -1.0;
        assert!(build_five_rod(&p).is_err());
    }

    #[test]
    fn overlap_detected() {
        let layout = TrapLayout {
            electrodes: vec![
                Electrode::new("a", Role::Rf, rect(0.0, 2.0, 0.0, 1.0)),
                Electrode::new("b", Role::Dc1, rect(1.0, 3.0, 0.0, 1.0)),
            ],
            characteristic_size: 1.0,
            gap_width: 0.0,
            five_rod: None,
        };
        assert!(layout.validate().is_err());
        // identical polygons
        let layout = TrapLayout {
            electrodes: vec![
                Electrode::new("a", Role::Rf, rect(0.0, 1.0, 0.0, 1.0)),
                Electrode::new("b", Role::Dc1, rect(0.0, 1.0, 0.0, 1.0)),
            ],
            ..layout
        };
        assert!(layout.validate().is_err());
    }

    #[test]
    fn touching_is_not_overlap() {
        let layout = TrapLayout {
            electrodes: vec![
                Electrode::new("a", Role::Rf, rect(0.0, 1.0, 0.0, 1.0)),
                Electrode::new("b", Role::Dc1, rect(1.0, 2.0, 0.0, 1.0)),
            ],
            characteristic_size: 1.0,
            gap_width: 0.0,
            five_rod: None,
        };
        layout.validate().unwrap();
    }

    #[test]
    fn self_intersecting_rejected() {
        let bow = vec![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
        assert!(validate_polygon(&bow).is_err());
        assert!(validate_polygon(&[[0.0, 0.0], [1.0, 0.0]]).is_err());
        assert!(validate_polygon(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]).is_err());
    }

    #[test]
    fn missing_rf_rejected() {
        let layout = TrapLayout {
            electrodes: vec![Electrode::new("a", Role::Dc1, rect(0.0, 1.0, 0.0, 1.0))],
            characteristic_size: 1.0,
            gap_width: 0.0,
            five_rod: None,
        };
        assert!(layout.validate().is_err());
    }

    #[test]
    fn offset_meets_at_midline() {
        let p = measured_params();
        let layout = build_five_rod(&p).unwrap();
        let grown: Vec<Vec<Vertex>> = layout
            .electrodes
            .iter()
            .map(|e| offset_polygon(&e.polygon, p.gap / 2.0))
            .collect();
        // areas grow and the expanded notch tab still fits the notch
        for (e, g) in layout.electrodes.iter().zip(&grown) {
            assert!(signed_area(g) > e.area());
        }
        let c = &grown[0];
        let rf = &grown[1];
        let cx_notch = c
            .iter()
            .filter(|v| v[1].abs() < 40.0 * UM && v[0] > 0.0)
            .map(|v| v[0])
            .fold(f64::MAX, f64::min);
        let rf_tab = rf.iter().map(|v| v[0]).fold(f64::MAX, f64::min);
        assert!((cx_notch - rf_tab).abs() < 1e-15);
    }

    #[test]
    fn json_round_trip() {
        let layout = build_five_rod(&measured_params()).unwrap();
        let s = layout.to_json().unwrap();
        assert!(s.contains("\"role\": \"RF\""));
        let back = TrapLayout::from_json(&s).unwrap();
        assert_eq!(back, layout);
    }
}
