//! Isotropic Riemannian Gaussian `p(x) ∝ exp(-d(mu, x)^2 / (2 sigma^2))`.
//!
//! On the flat manifolds (Euclidean, Log-Euclidean SPD) sampling is exact:
//! a tangent Gaussian at the mean pushed through the exponential map. On
//! `Sphere(2)` and `Hyperbolic(2)` the geodesic radius is drawn by rejection
//! from its marginal law `exp(-r^2 / 2 sigma^2) J(r)`, with `J = sin` or
//! `sinh`, and the direction uniformly, so samples follow the density itself
//! rather than a wrapped tangent Gaussian.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ManifoldKind, ManifoldPoint};
use crate::rng::{self, Stream};

/// Proposal budget of the rejection samplers.
pub const MAX_PROPOSALS: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiemannianGaussian {
    manifold: ManifoldKind,
    mean: ManifoldPoint,
    sigma: f64,
}

/// Leading term `(2 pi sigma^2)^(-D/2)` of the normalization constant, exact
/// on flat manifolds and accurate when sigma is small compared with the
/// injectivity radius.
pub fn normalization_constant_approx(sigma: f64, dim: usize) -> f64 {
    (2.0 * PI * sigma * sigma).powf(-(dim as f64) / 2.0)
}

/// Unnormalized density of the geodesic radius `r = d(mu, X)`.
pub fn radial_density(manifold: &ManifoldKind, sigma: f64, r: f64) -> f64 {
    let g = (-r * r / (2.0 * sigma * sigma)).exp();
    match manifold {
        ManifoldKind::Sphere(n) => {
            if r > PI {
                0.0
            } else {
                g * r.sin().powi(*n as i32 - 1)
            }
        }
        ManifoldKind::Hyperbolic(n) => g * r.sinh().powi(*n as i32 - 1),
        m => g * r.powi(m.intrinsic_dim() as i32 - 1),
    }
}

impl RiemannianGaussian {
    pub fn new(manifold: ManifoldKind, mean: ManifoldPoint, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Validation(format!("sigma must be positive, got {sigma}")));
        }
        manifold.check_coords(&mean.coords)?;
        Ok(Self {
            manifold,
            mean,
            sigma,
        })
    }

    pub fn manifold(&self) -> ManifoldKind {
        self.manifold
    }

    pub fn mean(&self) -> &ManifoldPoint {
        &self.mean
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn log_density_unnormalized(&self, x: &ManifoldPoint) -> f64 {
        let d = self.manifold.distance_raw(&self.mean.coords, &x.coords);
        -d * d / (2.0 * self.sigma * self.sigma)
    }

    pub fn sample(&self, rng: &mut Stream) -> Result<ManifoldPoint> {
        Ok(self.sample_counted(rng)?.0)
    }

    /// Draws one point and reports how many radius proposals were used
    /// (always 1 on flat manifolds).
    pub fn sample_counted(&self, rng: &mut Stream) -> Result<(ManifoldPoint, usize)> {
        let mut out = vec![0.0; self.manifold.ambient_dim()];
        let proposals = sample_into(&self.manifold, &self.mean.coords, self.sigma, rng, &mut out)?;
        Ok((ManifoldPoint::new_unchecked(out), proposals))
    }
}

/// Draws the geodesic radius on `Sphere(2)` or `Hyperbolic(2)`. Returns the
/// radius and the number of proposals used.
pub fn sample_radius(manifold: &ManifoldKind, sigma: f64, rng: &mut Stream) -> Result<(f64, usize)> {
    let rayleigh = |rng: &mut Stream, scale: f64| {
        let u: f64 = rng.random();
        scale * (-2.0 * (1.0 - u).ln()).sqrt()
    };
    for k in 1..=MAX_PROPOSALS {
        let (r, accept) = match manifold {
            // sin r <= r: Rayleigh envelope.
            ManifoldKind::Sphere(2) => {
                let r = rayleigh(rng, sigma);
                (r, if r >= PI { 0.0 } else { r.sin() / r })
            }
            // sinh r <= r exp(r^2 / 6): Rayleigh envelope with the narrower
            // scale 1 / tau^2 = 1 / sigma^2 - 1 / 3.
            ManifoldKind::Hyperbolic(2) if sigma <= 1.0 => {
                let tau = (1.0 / (1.0 / (sigma * sigma) - 1.0 / 3.0)).sqrt();
                let r = rayleigh(rng, tau);
                let ratio = if r < 1e-8 { 1.0 } else { r.sinh() / (r * (r * r / 6.0).exp()) };
                (r, ratio)
            }
            // sinh r <= e^r / 2: shifted Gaussian envelope N(sigma^2, sigma^2).
            ManifoldKind::Hyperbolic(2) => {
                let r = sigma * sigma + sigma * rng::normal(rng);
                (r, if r <= 0.0 { 0.0 } else { -(-2.0 * r).exp_m1() })
            }
            m => {
                return Err(Error::Domain(format!(
                    "no radial sampler for {}",
                    m.name()
                )))
            }
        };
        if accept > 0.0 && rng.random::<f64>() < accept {
            return Ok((r, k));
        }
    }
    Err(Error::RejectionExhausted {
        proposals: MAX_PROPOSALS,
        sigma,
    })
}

/// Samples `N^M(mean, sigma^2)` into `out`; `sigma == 0` returns the mean.
pub(crate) fn sample_into(
    manifold: &ManifoldKind,
    mean: &[f64],
    sigma: f64,
    rng: &mut Stream,
    out: &mut [f64],
) -> Result<usize> {
    if sigma == 0.0 {
        out.copy_from_slice(mean);
        return Ok(1);
    }
    if manifold.is_flat() {
        for (o, m) in out.iter_mut().zip(mean) {
            *o = m + sigma * rng::normal(rng);
        }
        return Ok(1);
    }
    let (r, proposals) = sample_radius(manifold, sigma, rng)?;
    let theta = 2.0 * PI * rng.random::<f64>();
    let basis = manifold.tangent_basis(mean);
    let (c, s) = (r * theta.cos(), r * theta.sin());
    let v: Vec<f64> = basis[0].iter().zip(&basis[1]).map(|(a, b)| c * a + s * b).collect();
    manifold.exp_raw(mean, &v, out);
    Ok(proposals)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_at_mean_and_antipode() {
        let m = ManifoldKind::Sphere(2);
        let g = RiemannianGaussian::new(m, m.origin(), 1.0).unwrap();
        assert_eq!(g.log_density_unnormalized(&m.origin()), 0.0);
        let south = ManifoldPoint::new_unchecked(vec![0.0, 0.0, -1.0]);
        assert!((g.log_density_unnormalized(&south) + PI * PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn density_decreases_with_distance() {
        let m = ManifoldKind::Hyperbolic(2);
        let g = RiemannianGaussian::new(m, m.origin(), 0.7).unwrap();
        let mut rng = rng::stream(1);
        for _ in 0..200 {
            let a = crate::geometry::random_point(&m, &mut rng, 1.0);
            let b = crate::geometry::random_point(&m, &mut rng, 1.0);
            let (da, db) = (
                m.distance_raw(&g.mean().coords, &a.coords),
                m.distance_raw(&g.mean().coords, &b.coords),
            );
            let (la, lb) = (g.log_density_unnormalized(&a), g.log_density_unnormalized(&b));
            assert_eq!(da < db, la > lb);
        }
    }

    #[test]
    fn normalization_constant_values() {
        assert!((normalization_constant_approx(1.0, 1) - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert!((normalization_constant_approx(0.5, 2) - 1.0 / (2.0 * PI * 0.25)).abs() < 1e-15);
        assert!((normalization_constant_approx(0.5, 2) - 0.63662).abs() < 1e-5);
    }

    #[test]
    fn flat_normalization_integrates_to_one() {
        // Composite Simpson rule on [-12 sigma, 12 sigma].
        let sigma = 0.8;
        let n = 20_000;
        let (a, b) = (-12.0 * sigma, 12.0 * sigma);
        let h = (b - a) / n as f64;
        let f = |x: f64| (-x * x / (2.0 * sigma * sigma)).exp();
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let integral = s * h / 3.0;
        assert!((integral * normalization_constant_approx(sigma, 1) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn invalid_sigma_is_rejected() {
        let m = ManifoldKind::Euclidean(1);
        assert!(RiemannianGaussian::new(m, m.origin(), 0.0).is_err());
        assert!(RiemannianGaussian::new(m, m.origin(), -1.0).is_err());
    }

    #[test]
    fn euclidean_moments() {
        let m = ManifoldKind::Euclidean(1);
        let g = RiemannianGaussian::new(m, m.origin(), 1.0).unwrap();
        let mut rng = rng::stream(42);
        let xs: Vec<f64> = (0..10_000).map(|_| g.sample(&mut rng).unwrap().coords[0]).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.05, "{mean}");
        assert!((var - 1.0).abs() < 0.1, "{var}");
    }

    #[test]
    fn curved_samples_stay_on_manifold() {
        let mut rng = rng::stream(3);
        for m in [ManifoldKind::Sphere(2), ManifoldKind::Hyperbolic(2)] {
            for sigma in [0.1, 0.5, 1.0, 1.5] {
                let mean = crate::geometry::random_point(&m, &mut rng, 0.5);
                let g = RiemannianGaussian::new(m, mean, sigma).unwrap();
                for _ in 0..100 {
                    let x = g.sample(&mut rng).unwrap();
                    m.check_coords(&x.coords).unwrap();
                }
            }
        }
    }

    #[test]
    fn acceptance_rate_guard() {
        let mut rng = rng::stream(5);
        for m in [ManifoldKind::Sphere(2), ManifoldKind::Hyperbolic(2)] {
            for sigma in [0.05, 0.1, 0.3, 0.5] {
                let total: usize = (0..2000).map(|_| sample_radius(&m, sigma, &mut rng).unwrap().1).sum();
                let rate = 2000.0 / total as f64;
                assert!(rate >= 0.2, "{m:?} sigma {sigma}: {rate}");
            }
        }
    }

    #[test]
    fn unsupported_curved_dimension() {
        let m = ManifoldKind::Sphere(3);
        let g = RiemannianGaussian::new(m, m.origin(), 0.3).unwrap();
        assert!(matches!(g.sample(&mut rng::stream(0)), Err(Error::Domain(_))));
    }
}
