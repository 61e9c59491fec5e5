//! Closed-form Riemannian geometry for the four supported manifolds.
//!
//! Points and tangent vectors are stored in ambient coordinates:
//!
//! * `Euclidean(d)`: plain vectors in R^d.
//! * `Sphere(n)`: unit vectors in R^(n+1).
//! * `Hyperbolic(n)`: the upper sheet of the hyperboloid
//!   `-x0^2 + x1^2 + ... + xn^2 = -1` in Minkowski space R^(1,n).
//! * `SpdLogEuclidean(n)`: n x n SPD matrices with the Log-Euclidean metric,
//!   carried in log coordinates, i.e. the vectorized matrix logarithm (see
//!   [`spd`]). The metric is flat in these coordinates, so exp/log are
//!   vector addition/subtraction.
//!
//! The `*_raw` functions operate on coordinate slices without validation and
//! are what the training loop uses; the methods on [`ManifoldKind`] validate
//! their inputs.

pub mod spd;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Absolute tolerance for manifold membership checks.
pub const MEMBERSHIP_TOL: f64 = 1e-9;
/// Sphere log map rejects `<p, q> <= -1 + ANTIPODAL_TOL`.
pub const ANTIPODAL_TOL: f64 = 1e-12;
/// Cosine clamp used when differentiating the spherical distance.
pub const COS_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "dim", rename_all = "snake_case")]
pub enum ManifoldKind {
    Euclidean(usize),
    Sphere(usize),
    Hyperbolic(usize),
    SpdLogEuclidean(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldPoint {
    pub coords: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TangentVector {
    pub base: ManifoldPoint,
    pub components: Vec<f64>,
}

impl ManifoldPoint {
    /// Wraps coordinates without checking membership.
    pub fn new_unchecked(coords: Vec<f64>) -> Self {
        Self { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

impl TangentVector {
    pub fn new(base: ManifoldPoint, components: Vec<f64>) -> Self {
        Self { base, components }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Minkowski inner product `-a0 b0 + sum_i ai bi`.
pub fn minkowski(a: &[f64], b: &[f64]) -> f64 {
    -a[0] * b[0] + dot(&a[1..], &b[1..])
}

/// `sin(r) / r`, accurate near zero.
fn sinc(r: f64) -> f64 {
    if r < 1e-4 {
        1.0 - r * r / 6.0
    } else {
        r.sin() / r
    }
}

/// `sinh(r) / r`, accurate near zero.
fn sinhc(r: f64) -> f64 {
    if r < 1e-4 {
        1.0 + r * r / 6.0
    } else {
        r.sinh() / r
    }
}

/// `(r cos r - sin r) / r^3`
fn sphere_radial_coeff(r: f64) -> f64 {
    if r < 1e-2 {
        let r2 = r * r;
        -1.0 / 3.0 + r2 / 30.0 - r2 * r2 / 840.0
    } else {
        (r * r.cos() - r.sin()) / (r * r * r)
    }
}

/// `(r cosh r - sinh r) / r^3`
fn hyperbolic_radial_coeff(r: f64) -> f64 {
    if r < 1e-2 {
        let r2 = r * r;
        1.0 / 3.0 + r2 / 30.0 + r2 * r2 / 840.0
    } else {
        (r * r.cosh() - r.sinh()) / (r * r * r)
    }
}

impl ManifoldKind {
    pub fn ambient_dim(&self) -> usize {
        match *self {
            ManifoldKind::Euclidean(d) => d,
            ManifoldKind::Sphere(n) | ManifoldKind::Hyperbolic(n) => n + 1,
            ManifoldKind::SpdLogEuclidean(n) => n * (n + 1) / 2,
        }
    }

    pub fn intrinsic_dim(&self) -> usize {
        match *self {
            ManifoldKind::Euclidean(d) => d,
            ManifoldKind::Sphere(n) | ManifoldKind::Hyperbolic(n) => n,
            ManifoldKind::SpdLogEuclidean(n) => n * (n + 1) / 2,
        }
    }

    pub fn injectivity_radius(&self) -> f64 {
        match self {
            ManifoldKind::Sphere(_) => std::f64::consts::PI,
            _ => f64::INFINITY,
        }
    }

    /// Whether the manifold is flat (exp/log are translations).
    pub fn is_flat(&self) -> bool {
        matches!(
            self,
            ManifoldKind::Euclidean(_) | ManifoldKind::SpdLogEuclidean(_)
        )
    }

    pub fn name(&self) -> String {
        match *self {
            ManifoldKind::Euclidean(d) => format!("euclidean({d})"),
            ManifoldKind::Sphere(n) => format!("sphere({n})"),
            ManifoldKind::Hyperbolic(n) => format!("hyperbolic({n})"),
            ManifoldKind::SpdLogEuclidean(n) => format!("spd({n})"),
        }
    }

    /// A canonical point: the origin, the north pole `e_{n+1}`, the
    /// hyperboloid vertex `e_0`, or the identity matrix.
    pub fn origin(&self) -> ManifoldPoint {
        let mut c = vec![0.0; self.ambient_dim()];
        match self {
            ManifoldKind::Sphere(n) => c[*n] = 1.0,
            ManifoldKind::Hyperbolic(_) => c[0] = 1.0,
            _ => {}
        }
        ManifoldPoint::new_unchecked(c)
    }

    /// Checks the membership invariants of a coordinate vector.
    pub fn check_coords(&self, coords: &[f64]) -> Result<()> {
        check_len("manifold point", self.ambient_dim(), coords.len())?;
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite coordinate".into()));
        }
        match self {
            ManifoldKind::Sphere(_) => {
                let n = norm(coords);
                if (n - 1.0).abs() > MEMBERSHIP_TOL {
                    return Err(Error::Validation(format!(
                        "sphere point has norm {n}, expected 1"
                    )));
                }
            }
            ManifoldKind::Hyperbolic(_) => {
                let q = minkowski(coords, coords);
                let scale = coords[0] * coords[0];
                if coords[0] <= 0.0 || (q + 1.0).abs() > MEMBERSHIP_TOL * scale.max(1.0) {
                    return Err(Error::Validation(format!(
                        "not on the upper hyperboloid sheet (<x,x>_M = {q}, x0 = {})",
                        coords[0]
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn point(&self, coords: Vec<f64>) -> Result<ManifoldPoint> {
        self.check_coords(&coords)?;
        Ok(ManifoldPoint { coords })
    }

    pub fn check_tangent(&self, base: &ManifoldPoint, components: &[f64]) -> Result<()> {
        check_len("tangent vector", self.ambient_dim(), components.len())?;
        let scale = norm(components).max(1.0);
        let along = match self {
            ManifoldKind::Sphere(_) => dot(&base.coords, components),
            ManifoldKind::Hyperbolic(_) => {
                minkowski(&base.coords, components) / base.coords[0].max(1.0)
            }
            _ => 0.0,
        };
        if along.abs() > MEMBERSHIP_TOL * scale {
            return Err(Error::Validation(format!(
                "vector is not tangent at the base point (normal component {along:e})"
            )));
        }
        Ok(())
    }

    pub fn tangent(&self, base: &ManifoldPoint, components: Vec<f64>) -> Result<TangentVector> {
        self.check_tangent(base, &components)?;
        Ok(TangentVector::new(base.clone(), components))
    }

    /// Riemannian inner product of two tangent vectors at the same base.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        match self {
            ManifoldKind::Hyperbolic(_) => minkowski(u, v),
            _ => dot(u, v),
        }
    }

    pub fn tangent_norm(&self, v: &[f64]) -> f64 {
        self.inner(v, v).max(0.0).sqrt()
    }

    /// Orthogonal projection of an ambient vector onto the tangent space at `base`.
    pub fn to_tangent_raw(&self, base: &[f64], u: &[f64], out: &mut [f64]) {
        out.copy_from_slice(u);
        match self {
            ManifoldKind::Sphere(_) => {
                let a = dot(base, u);
                for (o, b) in out.iter_mut().zip(base) {
                    *o -= a * b;
                }
            }
            ManifoldKind::Hyperbolic(_) => {
                let a = minkowski(base, u);
                for (o, b) in out.iter_mut().zip(base) {
                    *o += a * b;
                }
            }
            _ => {}
        }
    }

    pub fn exp_raw(&self, base: &[f64], v: &[f64], out: &mut [f64]) {
        match self {
            ManifoldKind::Euclidean(_) | ManifoldKind::SpdLogEuclidean(_) => {
                for ((o, b), t) in out.iter_mut().zip(base).zip(v) {
                    *o = b + t;
                }
            }
            ManifoldKind::Sphere(_) => {
                let r = norm(v);
                let (c, s) = (r.cos(), sinc(r));
                for ((o, b), t) in out.iter_mut().zip(base).zip(v) {
                    *o = c * b + s * t;
                }
            }
            ManifoldKind::Hyperbolic(_) => {
                let r = minkowski(v, v).max(0.0).sqrt();
                let (c, s) = (r.cosh(), sinhc(r));
                for ((o, b), t) in out.iter_mut().zip(base).zip(v) {
                    *o = c * b + s * t;
                }
            }
        }
    }

    pub fn log_raw(&self, base: &[f64], q: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            ManifoldKind::Euclidean(_) | ManifoldKind::SpdLogEuclidean(_) => {
                for ((o, b), x) in out.iter_mut().zip(base).zip(q) {
                    *o = x - b;
                }
            }
            ManifoldKind::Sphere(_) => {
                let c = dot(base, q);
                if c <= -1.0 + ANTIPODAL_TOL {
                    return Err(Error::Domain(
                        "sphere log map at the cut locus (antipodal points)".into(),
                    ));
                }
                for ((o, b), x) in out.iter_mut().zip(base).zip(q) {
                    *o = x - c * b;
                }
                let s = norm(out);
                let theta = s.atan2(c);
                let scale = if s < 1e-300 { 1.0 } else { theta / s };
                out.iter_mut().for_each(|o| *o *= scale);
            }
            ManifoldKind::Hyperbolic(_) => {
                let c = -minkowski(base, q);
                for ((o, b), x) in out.iter_mut().zip(base).zip(q) {
                    *o = x - c * b;
                }
                let s = minkowski(out, out).max(0.0).sqrt();
                let d = s.asinh();
                let scale = if s < 1e-300 { 1.0 } else { d / s };
                out.iter_mut().for_each(|o| *o *= scale);
            }
        }
        Ok(())
    }

    pub fn distance_raw(&self, p: &[f64], q: &[f64]) -> f64 {
        match self {
            ManifoldKind::Euclidean(_) | ManifoldKind::SpdLogEuclidean(_) => {
                p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
            }
            ManifoldKind::Sphere(_) => {
                // Chord-based forms are exactly symmetric and well conditioned
                // away from the antipode (difference) or near it (sum).
                let chord = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                if chord < 1.4 {
                    2.0 * (0.5 * chord).min(1.0).asin()
                } else {
                    let anti = p.iter().zip(q).map(|(a, b)| (a + b) * (a + b)).sum::<f64>().sqrt();
                    std::f64::consts::PI - 2.0 * (0.5 * anti).min(1.0).asin()
                }
            }
            ManifoldKind::Hyperbolic(_) => {
                let mut s2 = -(p[0] - q[0]) * (p[0] - q[0]);
                for (a, b) in p[1..].iter().zip(&q[1..]) {
                    s2 += (a - b) * (a - b);
                }
                2.0 * (0.5 * s2.max(0.0).sqrt()).asinh()
            }
        }
    }

    pub fn exp_map(&self, base: &ManifoldPoint, v: &TangentVector) -> Result<ManifoldPoint> {
        self.check_coords(&base.coords)?;
        self.check_tangent(base, &v.components)?;
        if v.base.coords != base.coords {
            return Err(Error::Validation(
                "tangent vector is attached to a different base point".into(),
            ));
        }
        let mut out = vec![0.0; self.ambient_dim()];
        self.exp_raw(&base.coords, &v.components, &mut out);
        Ok(ManifoldPoint::new_unchecked(out))
    }

    pub fn log_map(&self, base: &ManifoldPoint, q: &ManifoldPoint) -> Result<TangentVector> {
        self.check_coords(&base.coords)?;
        self.check_coords(&q.coords)?;
        let mut out = vec![0.0; self.ambient_dim()];
        self.log_raw(&base.coords, &q.coords, &mut out)?;
        Ok(TangentVector::new(base.clone(), out))
    }

    pub fn distance(&self, p: &ManifoldPoint, q: &ManifoldPoint) -> Result<f64> {
        self.check_coords(&p.coords)?;
        self.check_coords(&q.coords)?;
        Ok(self.distance_raw(&p.coords, &q.coords))
    }

    /// Maps an ambient vector onto the manifold.
    ///
    /// For SPD the ambient representation is the matrix itself, either as a
    /// full row-major `n x n` array (symmetrized first) or in the vectorized
    /// form of [`spd::vectorize`]; eigenvalues are clamped at
    /// [`spd::EPS_SPD`] and the result is returned in log coordinates.
    pub fn project_to_manifold(&self, ambient: &[f64]) -> Result<ManifoldPoint> {
        match *self {
            ManifoldKind::Euclidean(d) => {
                check_len("projection input", d, ambient.len())?;
                Ok(ManifoldPoint::new_unchecked(ambient.to_vec()))
            }
            ManifoldKind::Sphere(n) => {
                check_len("projection input", n + 1, ambient.len())?;
                let r = norm(ambient);
                if !(r > 0.0) || !r.is_finite() {
                    return Err(Error::Domain("cannot project the zero vector onto the sphere".into()));
                }
                Ok(ManifoldPoint::new_unchecked(ambient.iter().map(|v| v / r).collect()))
            }
            ManifoldKind::Hyperbolic(n) => {
                check_len("projection input", n + 1, ambient.len())?;
                let mut x = ambient.to_vec();
                x[0] = x[0].abs();
                let q = minkowski(&x, &x);
                if !(q < 0.0) {
                    return Err(Error::Domain(format!(
                        "vector with <x,x>_M = {q} >= 0 has no hyperboloid projection"
                    )));
                }
                let s = (-q).sqrt();
                x.iter_mut().for_each(|v| *v /= s);
                Ok(ManifoldPoint::new_unchecked(x))
            }
            ManifoldKind::SpdLogEuclidean(n) => {
                let m = if ambient.len() == n * n {
                    let full = nalgebra::DMatrix::from_row_slice(n, n, ambient);
                    (&full + full.transpose()) * 0.5
                } else {
                    check_len("projection input", n * (n + 1) / 2, ambient.len())?;
                    spd::devectorize(ambient, n)?
                };
                let repaired = spd::clamp_eigenvalues(&m, spd::EPS_SPD);
                Ok(ManifoldPoint::new_unchecked(spd::vectorize(&spd::logm(&repaired))?))
            }
        }
    }

    /// Ambient representation of a point: the matrix (vectorized) for SPD,
    /// the coordinates themselves otherwise.
    pub fn ambient_coords(&self, p: &ManifoldPoint) -> Vec<f64> {
        match *self {
            ManifoldKind::SpdLogEuclidean(n) => {
                let log = spd::devectorize_unchecked(&p.coords, n);
                spd::vectorize_unchecked(&spd::expm(&log))
            }
            _ => p.coords.clone(),
        }
    }

    /// An orthonormal basis of the tangent space at `base`, in the metric.
    pub fn tangent_basis(&self, base: &[f64]) -> Vec<Vec<f64>> {
        let dim = self.ambient_dim();
        match self {
            ManifoldKind::Euclidean(_) | ManifoldKind::SpdLogEuclidean(_) => (0..dim)
                .map(|i| {
                    let mut e = vec![0.0; dim];
                    e[i] = 1.0;
                    e
                })
                .collect(),
            ManifoldKind::Sphere(_) | ManifoldKind::Hyperbolic(_) => {
                let want = self.intrinsic_dim();
                let mut basis: Vec<Vec<f64>> = Vec::with_capacity(want);
                let start = if matches!(self, ManifoldKind::Hyperbolic(_)) { 1 } else { 0 };
                for i in start..dim {
                    let mut e = vec![0.0; dim];
                    e[i] = 1.0;
                    let mut v = vec![0.0; dim];
                    self.to_tangent_raw(base, &e, &mut v);
                    for b in &basis {
                        let a = self.inner(&v, b);
                        v.iter_mut().zip(b).for_each(|(x, y)| *x -= a * y);
                    }
                    let n = self.tangent_norm(&v);
                    if n > 1e-6 {
                        v.iter_mut().for_each(|x| *x /= n);
                        basis.push(v);
                    }
                    if basis.len() == want {
                        break;
                    }
                }
                basis
            }
        }
    }

    /// Exponential map of the tangent projection of an ambient vector:
    /// `y = Exp(base, P_base u)`. This is the decoder head of the rVAE.
    pub fn lift_exp_raw(&self, base: &[f64], u: &[f64], v: &mut [f64], out: &mut [f64]) {
        self.to_tangent_raw(base, u, v);
        self.exp_raw(base, v, out);
    }

    /// Vector-Jacobian product of [`Self::lift_exp_raw`]: given the upstream
    /// gradient `g` with respect to `y`, writes the gradient with respect to
    /// `u`. `v` is the projected tangent vector computed in the forward pass.
    pub fn lift_exp_vjp(&self, base: &[f64], v: &[f64], g: &[f64], g_u: &mut [f64]) {
        match self {
            ManifoldKind::Euclidean(_) | ManifoldKind::SpdLogEuclidean(_) => g_u.copy_from_slice(g),
            ManifoldKind::Sphere(_) => {
                let r = norm(v);
                let (s, q) = (sinc(r), sphere_radial_coeff(r));
                let gb = dot(g, base);
                let gv = dot(g, v);
                for i in 0..g.len() {
                    g_u[i] = -s * gb * v[i] + s * g[i] + gv * q * v[i];
                }
                let a = dot(g_u, base);
                g_u.iter_mut().zip(base).for_each(|(x, b)| *x -= a * b);
            }
            ManifoldKind::Hyperbolic(_) => {
                let r = minkowski(v, v).max(0.0).sqrt();
                let (s, p) = (sinhc(r), hyperbolic_radial_coeff(r));
                let gb = dot(g, base);
                let gv = dot(g, v);
                for i in 0..g.len() {
                    let jv = if i == 0 { -v[i] } else { v[i] };
                    g_u[i] = s * gb * jv + s * g[i] + gv * p * jv;
                }
                let a = dot(g_u, base);
                for i in 0..g.len() {
                    let jb = if i == 0 { -base[i] } else { base[i] };
                    g_u[i] += a * jb;
                }
            }
        }
    }

    /// Squared distance `d(x, y)^2` and its ambient gradient with respect to
    /// `y`, as used by the reconstruction term. On the sphere the cosine is
    /// clamped to `[-1 + COS_CLAMP, 1 - COS_CLAMP]` for the gradient factor so
    /// that the cut locus stays finite.
    pub fn sq_distance_grad(&self, x: &[f64], y: &[f64], g_y: &mut [f64]) -> f64 {
        match self {
            ManifoldKind::Euclidean(_) | ManifoldKind::SpdLogEuclidean(_) => {
                let mut d2 = 0.0;
                for ((g, a), b) in g_y.iter_mut().zip(x).zip(y) {
                    let diff = b - a;
                    d2 += diff * diff;
                    *g = 2.0 * diff;
                }
                d2
            }
            ManifoldKind::Sphere(_) => {
                let d = self.distance_raw(x, y);
                let c = dot(x, y);
                let factor = if c > 1.0 - COS_CLAMP || c < -1.0 + COS_CLAMP {
                    let cc = c.clamp(-1.0 + COS_CLAMP, 1.0 - COS_CLAMP);
                    cc.acos() / (1.0 - cc * cc).sqrt()
                } else {
                    d / d.sin()
                };
                for (g, a) in g_y.iter_mut().zip(x) {
                    *g = -2.0 * factor * a;
                }
                d * d
            }
            ManifoldKind::Hyperbolic(_) => {
                let mut s2 = -(x[0] - y[0]) * (x[0] - y[0]);
                for (a, b) in x[1..].iter().zip(&y[1..]) {
                    s2 += (a - b) * (a - b);
                }
                let s = s2.max(0.0).sqrt();
                let d = 2.0 * (0.5 * s).asinh();
                let factor = if s < 1e-12 {
                    2.0
                } else {
                    2.0 * d / (s * (1.0 + 0.25 * s * s).sqrt())
                };
                for i in 0..x.len() {
                    let diff = y[i] - x[i];
                    g_y[i] = factor * if i == 0 { -diff } else { diff };
                }
                d * d
            }
        }
    }
}

/// A random point: the exponential of a Gaussian tangent vector of scale
/// `spread` at the canonical origin.
pub fn random_point(m: &ManifoldKind, rng: &mut crate::rng::Stream, spread: f64) -> ManifoldPoint {
    let origin = m.origin();
    let v = random_tangent_raw(m, &origin.coords, rng, spread);
    let mut out = vec![0.0; m.ambient_dim()];
    m.exp_raw(&origin.coords, &v, &mut out);
    if let ManifoldKind::Sphere(_) = m {
        let r = norm(&out);
        out.iter_mut().for_each(|x| *x /= r);
    }
    ManifoldPoint::new_unchecked(out)
}

/// A Gaussian tangent vector (components of scale `scale` in an orthonormal
/// basis) at `base`.
pub fn random_tangent_raw(
    m: &ManifoldKind,
    base: &[f64],
    rng: &mut crate::rng::Stream,
    scale: f64,
) -> Vec<f64> {
    let mut v = vec![0.0; m.ambient_dim()];
    for b in m.tangent_basis(base) {
        let c = scale * crate::rng::normal(rng);
        v.iter_mut().zip(&b).for_each(|(x, e)| *x += c * e);
    }
    v
}

/// Poincare ball coordinates `y_i = x_{i+1} / (1 + x_0)` of a hyperboloid point.
pub fn hyperboloid_to_poincare(p: &ManifoldPoint) -> Vec<f64> {
    let denom = 1.0 + p.coords[0];
    p.coords[1..].iter().map(|v| v / denom).collect()
}

#[cfg(test)]
mod tests;
