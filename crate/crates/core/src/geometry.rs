//! Constant-curvature spaces: Euclidean space, the Poincaré ball and the unit
//! sphere.
//!
//! Points are plain coordinate vectors tagged with their manifold. Spherical
//! points live in ambient coordinates (`dim + 1` entries) and are renormalized
//! after every transport. Relation transports are isometries of the form
//! `rotation ∘ shift`, where the shift is a translation, a Möbius
//! gyrotranslation or a great-circle rotation depending on the space.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when clamping `arccos`/`arcosh` arguments into their domain.
pub const DOMAIN_CLAMP_TOL: f64 = 1e-12;
/// Relative shrink applied when a hyperbolic point is pulled back inside `R_H`.
pub const BALL_MARGIN: f64 = 1e-7;
/// Minimum separation between hyperbolic points for the explicit gradient.
pub const COINCIDENCE_GUARD: f64 = 1e-7;
/// Unit-norm tolerance for spherical points.
pub const SPHERE_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Geometry {
    Euclidean,
    Hyperbolic,
    Spherical,
}

impl Geometry {
    pub const ALL: [Geometry; 3] = [Geometry::Euclidean, Geometry::Hyperbolic, Geometry::Spherical];

    pub fn short_name(self) -> &'static str {
        match self {
            Geometry::Euclidean => "E",
            Geometry::Hyperbolic => "H",
            Geometry::Spherical => "S",
        }
    }
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Geometry::Euclidean => "euclidean",
            Geometry::Hyperbolic => "hyperbolic",
            Geometry::Spherical => "spherical",
        })
    }
}

/// A manifold together with its intrinsic dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ManifoldKind {
    pub geometry: Geometry,
    pub dim: usize,
}

impl ManifoldKind {
    pub fn new(geometry: Geometry, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("manifold dimension must be >= 1".into()));
        }
        Ok(Self { geometry, dim })
    }

    pub fn euclidean(dim: usize) -> Self {
        Self { geometry: Geometry::Euclidean, dim }
    }

    pub fn hyperbolic(dim: usize) -> Self {
        Self { geometry: Geometry::Hyperbolic, dim }
    }

    pub fn spherical(dim: usize) -> Self {
        Self { geometry: Geometry::Spherical, dim }
    }

    /// Length of the coordinate vector: `dim`, or `dim + 1` for the sphere.
    pub fn ambient_dim(&self) -> usize {
        match self.geometry {
            Geometry::Spherical => self.dim + 1,
            _ => self.dim,
        }
    }

    /// Upper bound on any geodesic distance inside the admissible domain.
    pub fn diameter(&self, bounds: &DomainBounds) -> f64 {
        match self.geometry {
            Geometry::Euclidean => 2.0 * bounds.r_e,
            Geometry::Hyperbolic => hyperbolic_diameter(bounds.r_h).unwrap_or(f64::INFINITY),
            Geometry::Spherical => std::f64::consts::PI,
        }
    }
}

impl fmt::Display for ManifoldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}^{}", self.geometry.short_name(), self.dim)
    }
}

/// Radii and margins defining the compact parameter domain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainBounds {
    pub r_e: f64,
    pub r_h: f64,
    pub delta_s: f64,
    pub b_phi: f64,
    pub s_max: f64,
}

impl Default for DomainBounds {
    fn default() -> Self {
        Self {
            r_e: 5.0,
            r_h: 0.95,
            delta_s: 0.1,
            b_phi: 10.0,
            s_max: 5.0,
        }
    }
}

impl DomainBounds {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.r_e, self.r_h, self.delta_s, self.b_phi, self.s_max];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidArgument(format!("domain bounds must be positive: {self:?}")));
        }
        if self.r_h >= 1.0 {
            return Err(Error::InvalidArgument(format!("R_H must be < 1, got {}", self.r_h)));
        }
        if self.delta_s >= 1.0 {
            return Err(Error::InvalidArgument(format!("delta_S must be < 1, got {}", self.delta_s)));
        }
        Ok(())
    }

    /// Largest admissible norm for a hyperbolic point after retraction.
    pub fn hyperbolic_cap(&self) -> f64 {
        self.r_h * (1.0 - BALL_MARGIN)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    pub kind: ManifoldKind,
    pub coords: DVector<f64>,
}

impl Point {
    /// Builds a point, checking the coordinate length and the manifold's own
    /// constraint (open unit ball, unit sphere). Domain radii are checked
    /// separately by [`Point::check_bounds`].
    pub fn new(kind: ManifoldKind, coords: DVector<f64>) -> Result<Self> {
        if coords.len() != kind.ambient_dim() {
            return Err(Error::DimensionMismatch { expected: kind.ambient_dim(), got: coords.len() });
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::OutsideDomain("non-finite coordinate".into()));
        }
        match kind.geometry {
            Geometry::Hyperbolic if coords.norm() >= 1.0 => {
                return Err(Error::OutsideDomain(format!(
                    "hyperbolic point with norm {} is not inside the unit ball",
                    coords.norm()
                )))
            }
            Geometry::Spherical if (coords.norm() - 1.0).abs() > SPHERE_TOL => {
                return Err(Error::OutsideDomain(format!(
                    "spherical point with norm {} is not on the unit sphere",
                    coords.norm()
                )))
            }
            _ => {}
        }
        Ok(Self { kind, coords })
    }

    pub fn from_slice(kind: ManifoldKind, coords: &[f64]) -> Result<Self> {
        Self::new(kind, DVector::from_column_slice(coords))
    }

    /// Base point: origin for flat and hyperbolic space, the first basis
    /// vector for the sphere.
    pub fn origin(kind: ManifoldKind) -> Self {
        let mut coords = DVector::zeros(kind.ambient_dim());
        if kind.geometry == Geometry::Spherical {
            coords[0] = 1.0;
        }
        Self { kind, coords }
    }

    pub fn check_bounds(&self, bounds: &DomainBounds) -> Result<()> {
        let n = self.coords.norm();
        match self.kind.geometry {
            Geometry::Euclidean if n > bounds.r_e => {
                Err(Error::OutsideDomain(format!("euclidean norm {n} exceeds R_E = {}", bounds.r_e)))
            }
            Geometry::Hyperbolic if n > bounds.r_h => {
                Err(Error::OutsideDomain(format!("hyperbolic norm {n} exceeds R_H = {}", bounds.r_h)))
            }
            Geometry::Spherical if (n - 1.0).abs() > SPHERE_TOL => {
                Err(Error::OutsideDomain(format!("spherical norm {n} is not 1")))
            }
            _ => Ok(()),
        }
    }
}

fn same_kind(x: &Point, y: &Point) -> Result<()> {
    if x.kind != y.kind {
        return Err(Error::KindMismatch { left: x.kind.to_string(), right: y.kind.to_string() });
    }
    if x.coords.len() != y.coords.len() {
        return Err(Error::DimensionMismatch { expected: x.coords.len(), got: y.coords.len() });
    }
    Ok(())
}

fn ensure_in_ball(p: &Point) -> Result<()> {
    if p.kind.geometry == Geometry::Hyperbolic && p.coords.norm_squared() >= 1.0 {
        return Err(Error::OutsideDomain("hyperbolic point on or outside the unit sphere".into()));
    }
    Ok(())
}

/// `arcosh(1 + t)` evaluated without cancellation for small `t`.
fn arcosh1p(t: f64) -> f64 {
    let t = t.max(0.0);
    (t + (t * (t + 2.0)).sqrt()).ln_1p()
}

/// `‖x − y‖²` without a temporary.
fn sq_diff(x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Poincaré-ball distance on raw coordinates.
pub fn poincare_distance(x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let a = 1.0 - x.norm_squared();
    let b = 1.0 - y.norm_squared();
    let u = sq_diff(x, y);
    arcosh1p(2.0 * u / (a * b))
}

/// Great-circle distance on raw unit vectors, with the inner product clamped.
pub fn sphere_distance(x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    x.dot(y).clamp(-1.0, 1.0).acos()
}

/// Geodesic distance on raw coordinates without any domain checks.
pub fn raw_distance(geometry: Geometry, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    match geometry {
        Geometry::Euclidean => sq_diff(x, y).sqrt(),
        Geometry::Hyperbolic => poincare_distance(x, y),
        Geometry::Spherical => sphere_distance(x, y),
    }
}

pub fn geodesic_distance(x: &Point, y: &Point) -> Result<f64> {
    same_kind(x, y)?;
    ensure_in_ball(x)?;
    ensure_in_ball(y)?;
    Ok(raw_distance(x.kind.geometry, &x.coords, &y.coords))
}

/// Gradient of `d²(x, y)` with respect to `x` on raw coordinates.
///
/// The removable singularities at `x = y` are resolved by their limits, and
/// the spherical antipodal blow-up is capped by evaluating the `d/sin d`
/// factor no closer to `π` than `π - delta_s`. Use [`grad_sq_distance`] when
/// the guard bands must be enforced instead.
pub fn raw_sq_distance_grad(
    geometry: Geometry,
    x: &DVector<f64>,
    y: &DVector<f64>,
    delta_s: f64,
) -> DVector<f64> {
    match geometry {
        Geometry::Euclidean => 2.0 * (x - y),
        Geometry::Hyperbolic => {
            let a = 1.0 - x.norm_squared();
            let b = 1.0 - y.norm_squared();
            let diff = x - y;
            let u = diff.norm_squared();
            let ab = a * b;
            let t = 2.0 * u / ab;
            // d / sqrt(z^2 - 1) with z = 1 + t; tends to 1 at coincidence.
            let ratio = if t < 1e-8 { 1.0 - t / 3.0 } else { arcosh1p(t) / (t * (t + 2.0)).sqrt() };
            let dz = (4.0 * ab * &diff + 4.0 * u * b * x) / (ab * ab);
            2.0 * ratio * dz
        }
        Geometry::Spherical => {
            let c = x.dot(y).clamp(-1.0, 1.0);
            let c_floor = (std::f64::consts::PI - delta_s).cos();
            let cc = c.max(c_floor);
            let d = cc.acos();
            let s = (1.0 - cc * cc).sqrt();
            let ratio = if s < 1e-8 { 1.0 } else { d / s };
            let tangent = y - c * x;
            -2.0 * ratio * tangent
        }
    }
}

/// Gradient of `d²(x, y)` with respect to `x`.
///
/// Spherical gradients are tangent to the sphere at `x`. Inputs inside the
/// singularity guard bands (antipodal spherical pairs within `delta_s` of
/// `π`, hyperbolic pairs closer than `1e-7`) are refused.
pub fn grad_sq_distance(x: &Point, y: &Point, bounds: &DomainBounds) -> Result<DVector<f64>> {
    same_kind(x, y)?;
    ensure_in_ball(x)?;
    ensure_in_ball(y)?;
    match x.kind.geometry {
        Geometry::Hyperbolic => {
            if (&x.coords - &y.coords).norm() < COINCIDENCE_GUARD {
                return Err(Error::Singularity("coincident hyperbolic points".into()));
            }
        }
        Geometry::Spherical => {
            let d = sphere_distance(&x.coords, &y.coords);
            if d >= std::f64::consts::PI - bounds.delta_s {
                return Err(Error::Singularity(format!(
                    "spherical points within delta_S of antipodal (d = {d})"
                )));
            }
            if d < COINCIDENCE_GUARD {
                return Err(Error::Singularity("coincident spherical points".into()));
            }
        }
        Geometry::Euclidean => {}
    }
    Ok(raw_sq_distance_grad(x.kind.geometry, &x.coords, &y.coords, bounds.delta_s))
}

/// Diameter of the hyperbolic ball of Euclidean radius `r_h`.
pub fn hyperbolic_diameter(r_h: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&r_h) {
        return Err(Error::InvalidArgument(format!("R_H must lie in [0, 1), got {r_h}")));
    }
    let q = 1.0 - r_h * r_h;
    Ok(arcosh1p(8.0 * r_h * r_h / (q * q)))
}

/// Möbius addition `a ⊕ x` in the unit ball.
pub fn mobius_add(a: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
    let ax = a.dot(x);
    let aa = a.norm_squared();
    let xx = x.norm_squared();
    let num_a = 1.0 + 2.0 * ax + xx;
    let num_x = 1.0 - aa;
    let den = 1.0 + 2.0 * ax + aa * xx;
    (num_a * a + num_x * x) / den
}

/// `J_xᵀ g` for the map `x ↦ a ⊕ x`.
fn mobius_pullback_x(a: &DVector<f64>, x: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
    let ax = a.dot(x);
    let aa = a.norm_squared();
    let xx = x.norm_squared();
    let big_a = 1.0 + 2.0 * ax + xx;
    let big_b = 1.0 - aa;
    let big_c = 1.0 + 2.0 * ax + aa * xx;
    let num = big_a * a + big_b * x;
    let ag = a.dot(g);
    let ng = num.dot(g);
    (2.0 * (a + x) * ag + big_b * g) / big_c - (2.0 * a + 2.0 * aa * x) * ng / (big_c * big_c)
}

/// `J_aᵀ g` for the map `a ↦ a ⊕ x`.
fn mobius_pullback_a(a: &DVector<f64>, x: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
    let ax = a.dot(x);
    let aa = a.norm_squared();
    let xx = x.norm_squared();
    let big_a = 1.0 + 2.0 * ax + xx;
    let big_b = 1.0 - aa;
    let big_c = 1.0 + 2.0 * ax + aa * xx;
    let num = big_a * a + big_b * x;
    let ng = num.dot(g);
    (big_a * g + 2.0 * x * a.dot(g) - 2.0 * a * x.dot(g)) / big_c
        - (2.0 * x + 2.0 * xx * a) * ng / (big_c * big_c)
}

/// The non-rotational part of a transport.
#[derive(Clone, Debug, PartialEq)]
pub enum Shift {
    /// `x ↦ x + v`
    Translation(DVector<f64>),
    /// `x ↦ a ⊕ x`
    Gyration(DVector<f64>),
    /// Rotation by `angle` in the plane spanned by the orthonormal pair,
    /// turning `from` toward `to`.
    GreatCircle { from: DVector<f64>, to: DVector<f64>, angle: f64 },
}

/// Relation transport `φ = rotation ∘ shift`.
#[derive(Clone, Debug, PartialEq)]
pub struct Transport {
    pub kind: ManifoldKind,
    pub rotation: DMatrix<f64>,
    pub shift: Shift,
}

/// Output of [`apply_transport`].
#[derive(Clone, Debug, PartialEq)]
pub struct Transported {
    pub point: Point,
    /// Set when a hyperbolic image left the `R_H` ball and was pulled back.
    pub clamped: bool,
}

fn great_circle_matrix(from: &DVector<f64>, to: &DVector<f64>, angle: f64) -> DMatrix<f64> {
    let n = from.len();
    let (s, c) = angle.sin_cos();
    DMatrix::identity(n, n) + s * (to * from.transpose() - from * to.transpose())
        + (c - 1.0) * (from * from.transpose() + to * to.transpose())
}

fn great_circle_matrix_dangle(from: &DVector<f64>, to: &DVector<f64>, angle: f64) -> DMatrix<f64> {
    let (s, c) = angle.sin_cos();
    c * (to * from.transpose() - from * to.transpose()) - s * (from * from.transpose() + to * to.transpose())
}

impl Transport {
    pub fn identity(kind: ManifoldKind) -> Self {
        let n = kind.ambient_dim();
        let shift = match kind.geometry {
            Geometry::Euclidean => Shift::Translation(DVector::zeros(n)),
            Geometry::Hyperbolic => Shift::Gyration(DVector::zeros(n)),
            Geometry::Spherical => {
                let mut from = DVector::zeros(n);
                let mut to = DVector::zeros(n);
                from[0] = 1.0;
                to[1 % n] = 1.0;
                Shift::GreatCircle { from, to, angle: 0.0 }
            }
        };
        Self { kind, rotation: DMatrix::identity(n, n), shift }
    }

    /// Full linear map of a spherical transport, `rotation · great_circle`.
    pub fn spherical_matrix(&self) -> Option<DMatrix<f64>> {
        match &self.shift {
            Shift::GreatCircle { from, to, angle } => {
                Some(&self.rotation * great_circle_matrix(from, to, *angle))
            }
            _ => None,
        }
    }

    /// Evaluates the transport on raw coordinates, with no clamping.
    pub fn map(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.shift {
            Shift::Translation(v) => &self.rotation * (x + v),
            Shift::Gyration(a) => &self.rotation * mobius_add(a, x),
            Shift::GreatCircle { from, to, angle } => {
                let y = &self.rotation * (great_circle_matrix(from, to, *angle) * x);
                let n = y.norm();
                y / n
            }
        }
    }

    /// `Jᵀ g` where `J` is the Jacobian of [`Transport::map`] at `x`.
    pub fn pullback(&self, x: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
        let rg = self.rotation.transpose() * g;
        match &self.shift {
            Shift::Translation(_) => rg,
            Shift::Gyration(a) => mobius_pullback_x(a, x, &rg),
            Shift::GreatCircle { .. } => {
                let m = self.spherical_matrix().expect("spherical");
                let y = &m * x;
                let n = y.norm();
                let z = &y / n;
                let proj = (g - &z * z.dot(g)) / n;
                m.transpose() * proj
            }
        }
    }

    /// Gradient with respect to the shift parameters (`v`, `a`, or the
    /// great-circle angle as a length-1 vector), given `g = ∂L/∂φ(x)`.
    pub fn pullback_shift(&self, x: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
        let rg = self.rotation.transpose() * g;
        match &self.shift {
            Shift::Translation(_) => rg,
            Shift::Gyration(a) => mobius_pullback_a(a, x, &rg),
            Shift::GreatCircle { from, to, angle } => {
                let m = self.spherical_matrix().expect("spherical");
                let y = &m * x;
                let n = y.norm();
                let z = &y / n;
                let proj = (g - &z * z.dot(g)) / n;
                let dy = &self.rotation * (great_circle_matrix_dangle(from, to, *angle) * x);
                DVector::from_element(1, proj.dot(&dy))
            }
        }
    }

    /// Checks orthogonality of the rotation and the bounds on the shift.
    pub fn validate(&self, bounds: &DomainBounds) -> Result<()> {
        let n = self.kind.ambient_dim();
        if self.rotation.nrows() != n || self.rotation.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, got: self.rotation.nrows() });
        }
        let err = (self.rotation.transpose() * &self.rotation - DMatrix::identity(n, n)).abs().max();
        if err > 1e-10 {
            return Err(Error::InvalidArgument(format!("rotation is not orthogonal (error {err:.2e})")));
        }
        match &self.shift {
            Shift::Translation(v) => {
                if self.kind.geometry != Geometry::Euclidean || v.len() != n {
                    return Err(Error::InvalidArgument("translation shift on non-euclidean kind".into()));
                }
                if v.norm() > bounds.b_phi {
                    return Err(Error::OutsideDomain(format!("translation norm {} exceeds B_phi", v.norm())));
                }
            }
            Shift::Gyration(a) => {
                if self.kind.geometry != Geometry::Hyperbolic || a.len() != n {
                    return Err(Error::InvalidArgument("gyration shift on non-hyperbolic kind".into()));
                }
                if a.norm() > bounds.r_h {
                    return Err(Error::OutsideDomain(format!("gyrotranslation norm {} exceeds R_H", a.norm())));
                }
            }
            Shift::GreatCircle { from, to, .. } => {
                if self.kind.geometry != Geometry::Spherical || from.len() != n || to.len() != n {
                    return Err(Error::InvalidArgument("great-circle shift on non-spherical kind".into()));
                }
                if (from.norm() - 1.0).abs() > 1e-10 || (to.norm() - 1.0).abs() > 1e-10 || from.dot(to).abs() > 1e-10 {
                    return Err(Error::InvalidArgument("great-circle plane is not orthonormal".into()));
                }
                let det = self.rotation.determinant();
                if (det - 1.0).abs() > 1e-8 {
                    return Err(Error::InvalidArgument(format!("spherical rotation has determinant {det}")));
                }
            }
        }
        Ok(())
    }

    /// Inverse map on raw coordinates.
    pub fn inverse_map(&self, y: &DVector<f64>) -> DVector<f64> {
        let ry = self.rotation.transpose() * y;
        match &self.shift {
            Shift::Translation(v) => ry - v,
            Shift::Gyration(a) => mobius_add(&(-a), &ry),
            Shift::GreatCircle { .. } => {
                let m = self.spherical_matrix().expect("spherical");
                let x = m.transpose() * y;
                let n = x.norm();
                x / n
            }
        }
    }

    /// Recovers the `rotation ∘ shift` form of an isometry given as a closure.
    fn from_isometry(kind: ManifoldKind, f: impl Fn(&DVector<f64>) -> DVector<f64>) -> Self {
        let n = kind.ambient_dim();
        match kind.geometry {
            Geometry::Euclidean => {
                let p = f(&DVector::zeros(n));
                let mut cols = DMatrix::zeros(n, n);
                for i in 0..n {
                    let col = f(&DVector::from_fn(n, |j, _| if i == j { 1.0 } else { 0.0 })) - &p;
                    cols.set_column(i, &col);
                }
                let o = nearest_orthogonal(&cols);
                let v = o.transpose() * p;
                Self { kind, rotation: o, shift: Shift::Translation(v) }
            }
            Geometry::Hyperbolic => {
                let p = f(&DVector::zeros(n));
                let neg_p = -&p;
                let step = 0.5;
                let mut cols = DMatrix::zeros(n, n);
                for i in 0..n {
                    let e = DVector::from_fn(n, |j, _| if i == j { step } else { 0.0 });
                    let col = mobius_add(&neg_p, &f(&e)) / step;
                    cols.set_column(i, &col);
                }
                let o = nearest_orthogonal(&cols);
                let a = o.transpose() * p;
                Self { kind, rotation: o, shift: Shift::Gyration(a) }
            }
            Geometry::Spherical => {
                let mut cols = DMatrix::zeros(n, n);
                for i in 0..n {
                    let e = DVector::from_fn(n, |j, _| if i == j { 1.0 } else { 0.0 });
                    cols.set_column(i, &f(&e));
                }
                let o = nearest_orthogonal(&cols);
                let mut t = Transport::identity(kind);
                t.rotation = o;
                t
            }
        }
    }

    /// `g ∘ self ∘ g⁻¹`: the transport seen through a change of gauge `g`.
    pub fn conjugate(&self, gauge: &Transport) -> Transport {
        Transport::from_isometry(self.kind, |y| gauge.map(&self.map(&gauge.inverse_map(y))))
    }
}

/// Orthogonal polar factor `U Vᵀ` of a square matrix.
fn nearest_orthogonal(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    u * v_t
}

/// Applies a transport to a point. Hyperbolic images that leave the `R_H`
/// ball are pulled back radially to `R_H·(1 − 1e-7)` and flagged; spherical
/// images are renormalized.
pub fn apply_transport(t: &Transport, x: &Point, bounds: &DomainBounds) -> Result<Transported> {
    if t.kind != x.kind {
        return Err(Error::KindMismatch { left: t.kind.to_string(), right: x.kind.to_string() });
    }
    ensure_in_ball(x)?;
    let mut y = t.map(&x.coords);
    let mut clamped = false;
    if x.kind.geometry == Geometry::Hyperbolic {
        let n = y.norm();
        if n > bounds.r_h {
            y *= bounds.hyperbolic_cap() / n;
            clamped = true;
        }
    }
    Ok(Transported { point: Point { kind: x.kind, coords: y }, clamped })
}

/// Retraction onto the admissible domain: clamp to the `R_E` ball, to the
/// `R_H·(1 − 1e-7)` ball, or renormalize onto the sphere. Returns whether the
/// point moved.
pub fn project_in_place(geometry: Geometry, x: &mut DVector<f64>, bounds: &DomainBounds) -> bool {
    let n = x.norm();
    match geometry {
        Geometry::Euclidean => {
            if n > bounds.r_e {
                // A few ulps inside, so the rescaled norm never rounds past the bound.
                *x *= bounds.r_e * (1.0 - 4.0 * f64::EPSILON) / n;
                return true;
            }
            false
        }
        Geometry::Hyperbolic => {
            let cap = bounds.hyperbolic_cap();
            if n > cap {
                *x *= cap / n;
                return true;
            }
            false
        }
        Geometry::Spherical => {
            if n == 0.0 {
                x.fill(0.0);
                x[0] = 1.0;
                return true;
            }
            if (n - 1.0).abs() > 0.0 {
                *x /= n;
                return true;
            }
            false
        }
    }
}

fn gaussian_vector(n: usize, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Uniform point in the ball of the given Euclidean radius.
pub fn sample_in_ball(n: usize, radius: f64, rng: &mut impl Rng) -> DVector<f64> {
    let g = gaussian_vector(n, rng);
    let norm = g.norm().max(f64::MIN_POSITIVE);
    let r = radius * rng.random::<f64>().powf(1.0 / n as f64);
    g * (r / norm)
}

/// Uniform point on the unit sphere in `R^n`.
pub fn sample_on_sphere(n: usize, rng: &mut impl Rng) -> DVector<f64> {
    loop {
        let g = gaussian_vector(n, rng);
        let norm = g.norm();
        if norm > 1e-12 {
            return g / norm;
        }
    }
}

/// Random admissible point: uniform in the ball of radius `radius` (flat and
/// hyperbolic; must be `< 1` for the latter) or uniform on the sphere.
pub fn random_point(kind: ManifoldKind, radius: f64, rng: &mut impl Rng) -> Point {
    let n = kind.ambient_dim();
    let coords = match kind.geometry {
        Geometry::Spherical => sample_on_sphere(n, rng),
        _ => sample_in_ball(n, radius, rng),
    };
    Point { kind, coords }
}

/// Haar-distributed orthogonal matrix; `special` forces determinant +1.
pub fn haar_orthogonal(n: usize, special: bool, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            let col = -q.column(j);
            q.set_column(j, &col);
        }
    }
    if special && q.determinant() < 0.0 {
        let col = -q.column(0);
        q.set_column(0, &col);
    }
    q
}

/// Random admissible isometry drawn with a Haar rotation and a shift sampled
/// uniformly inside the domain bounds (`‖v‖ ≤ min(R_E, B_φ)`, `‖a‖ ≤ R_H`,
/// uniform great-circle angle).
pub fn random_isometry_with(kind: ManifoldKind, bounds: &DomainBounds, rng: &mut impl Rng) -> Transport {
    let n = kind.ambient_dim();
    match kind.geometry {
        Geometry::Euclidean => {
            let rotation = haar_orthogonal(n, false, rng);
            let v = sample_in_ball(n, bounds.r_e.min(bounds.b_phi), rng);
            Transport { kind, rotation, shift: Shift::Translation(v) }
        }
        Geometry::Hyperbolic => {
            let rotation = haar_orthogonal(n, false, rng);
            let a = sample_in_ball(n, bounds.r_h, rng);
            Transport { kind, rotation, shift: Shift::Gyration(a) }
        }
        Geometry::Spherical => {
            let rotation = haar_orthogonal(n, true, rng);
            let from = sample_on_sphere(n, rng);
            let mut to = sample_on_sphere(n, rng);
            to -= &from * from.dot(&to);
            let norm = to.norm();
            let to = if norm < 1e-9 {
                let mut e = DVector::zeros(n);
                e[if from[0].abs() < 0.9 { 0 } else { 1 }] = 1.0;
                let e = &e - &from * from.dot(&e);
                let k = e.norm();
                e / k
            } else {
                to / norm
            };
            let angle = rng.random::<f64>() * std::f64::consts::TAU;
            Transport { kind, rotation, shift: Shift::GreatCircle { from, to, angle } }
        }
    }
}

pub fn random_isometry(kind: ManifoldKind, bounds: &DomainBounds, seed: u64) -> Transport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_isometry_with(kind, bounds, &mut rng)
}
