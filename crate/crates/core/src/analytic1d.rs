//! One-dimensional PPCA `X = w Z + eps` (`Z, eps ~ N(0, 1)`) fitted by a VAE
//! with posterior family `q(z|x) = N(phi x, 1)`. Everything depends on the
//! data only through `sigma2hat = mean(x_i^2)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Average log-likelihood per point.
pub fn loglik(w: f64, sigma2hat: f64) -> f64 {
    let a = 1.0 + w * w;
    -0.5 * (2.0 * PI).ln() - 0.5 * a.ln() - sigma2hat / (2.0 * a)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MleResult {
    /// `+sqrt(sigma2hat - 1)` and `-sqrt(sigma2hat - 1)`; the model cannot
    /// tell them apart. Empty when the maximum sits at the `w = 0` boundary.
    pub roots: Vec<f64>,
    pub boundary: bool,
}

pub fn mle_w(sigma2hat: f64) -> MleResult {
    if sigma2hat < 1.0 {
        return MleResult {
            roots: Vec::new(),
            boundary: true,
        };
    }
    let r = (sigma2hat - 1.0).sqrt();
    MleResult {
        roots: vec![r, -r],
        boundary: false,
    }
}

/// `KL(N(phi x, 1) || p(z | x))` with exact posterior
/// `N(w x / (1 + w^2), 1 / (1 + w^2))`.
pub fn kl_posterior(w: f64, phi: f64, x: f64) -> f64 {
    let a = 1.0 + w * w;
    let r = w - phi - phi * w * w;
    -0.5 * a.ln() + 0.5 * a + 0.5 * r * r / a * x * x - 0.5
}

pub fn phi_opt(w: f64) -> f64 {
    w / (1.0 + w * w)
}

pub fn w_opt(phi: f64, sigma2hat: f64) -> f64 {
    phi * sigma2hat / (phi * phi * sigma2hat + 1.0)
}

/// The closed-form ELBO expression of the landscape figures. It is singular
/// at `w = 0` and its optimum in `phi` is `1 / w`, which disagrees with
/// [`kl_posterior`]; [`elbo_composed`] is the consistent objective.
pub fn elbo_analytic(w: f64, phi: f64, sigma2hat: f64) -> Result<f64> {
    if w == 0.0 {
        return Err(Error::Domain("closed-form ELBO is singular at w = 0".into()));
    }
    let w2 = w * w;
    let t = 1.0 - phi * w;
    Ok(0.5 * (1.0 - (2.0 * PI).ln()) - 0.5 * ((1.0 + w2) / w2).ln() - 0.5 * w2
        - 0.5 * sigma2hat * (1.0 / (1.0 + w2) + t * t))
}

/// `-E_x[KL]` over data with second moment `sigma2hat` (the KL is affine in `x^2`).
pub fn neg_kl_expectation(w: f64, phi: f64, sigma2hat: f64) -> f64 {
    -kl_posterior(w, phi, sigma2hat.sqrt())
}

/// `loglik - E_x[KL]`, the per-point ELBO the trained VAE maximizes.
pub fn elbo_composed(w: f64, phi: f64, sigma2hat: f64) -> f64 {
    loglik(w, sigma2hat) + neg_kl_expectation(w, phi, sigma2hat)
}

/// Nonnegative maximizer of the composed ELBO: profiling out `phi` leaves
/// `-sigma2hat / 2(1 + w^2) - w^2 / 2 + const`, stationary at
/// `(1 + w^2)^2 = sigma2hat`.
pub fn elbo_maximizer(sigma2hat: f64) -> f64 {
    if sigma2hat <= 1.0 {
        0.0
    } else {
        (sigma2hat.sqrt() - 1.0).sqrt()
    }
}

/// The constant `sqrt(sigma2hat / 2 - 1)` quoted for the limit of the trained
/// VAE, kept for reports next to [`elbo_maximizer`].
pub fn reference_vae_limit(sigma2hat: f64) -> f64 {
    (sigma2hat / 2.0 - 1.0).max(0.0).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElboMode {
    Analytic,
    Composed,
}

impl ElboMode {
    pub fn eval(self, w: f64, phi: f64, sigma2hat: f64) -> f64 {
        match self {
            ElboMode::Analytic => elbo_analytic(w, phi, sigma2hat).unwrap_or(f64::NEG_INFINITY),
            ElboMode::Composed => elbo_composed(w, phi, sigma2hat),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridOptimum {
    /// Nonnegative representative; `(-w, -phi)` attains the same value.
    pub w: f64,
    pub phi: f64,
    pub value: f64,
    /// Spacing of the initial grid.
    pub w_step: f64,
    pub phi_step: f64,
}

impl GridOptimum {
    pub fn symmetric_pair(&self) -> [(f64, f64); 2] {
        [(self.w, self.phi), (-self.w, -self.phi)]
    }
}

pub const DEFAULT_GRID: usize = 400;

/// [`grid_maximize_elbo_with`] on the default `400 x 400` grid.
pub fn grid_maximize_elbo(sigma2hat: f64, mode: ElboMode) -> Result<GridOptimum> {
    grid_maximize_elbo_with(sigma2hat, mode, DEFAULT_GRID)
}

/// Maximizes the chosen objective over `w in [0, 2 sqrt(sigma2hat) + 1]`
/// (from `w_step` in analytic mode) and `phi in [-1, 3]` on an `n x n` grid,
/// then refines by repeated 5x zooms around the incumbent.
pub fn grid_maximize_elbo_with(sigma2hat: f64, mode: ElboMode, n: usize) -> Result<GridOptimum> {
    if !(sigma2hat > 0.0) || !sigma2hat.is_finite() {
        return Err(Error::Validation(format!("sigma2hat must be positive, got {sigma2hat}")));
    }
    if n < 2 {
        return Err(Error::Validation("grid needs at least two nodes per axis".into()));
    }
    let w_hi = 2.0 * sigma2hat.sqrt() + 1.0;
    let w_step = w_hi / (n - 1) as f64;
    let w_lo = if mode == ElboMode::Analytic { w_step } else { 0.0 };
    let (phi_lo, phi_hi) = (-1.0, 3.0);
    let phi_step = (phi_hi - phi_lo) / (n - 1) as f64;
    let f = |w: f64, p: f64| mode.eval(w, p, sigma2hat);

    let mut best = (w_lo, phi_lo, f64::NEG_INFINITY);
    for i in 0..n {
        let w = w_lo + i as f64 * w_step;
        for j in 0..n {
            let p = phi_lo + j as f64 * phi_step;
            let v = f(w, p);
            if v > best.2 {
                best = (w, p, v);
            }
        }
    }
    let (mut hw, mut hp) = (w_step, phi_step);
    for _ in 0..40 {
        let (cw, cp) = (best.0, best.1);
        for i in -10i32..=10 {
            let w = (cw + i as f64 * hw / 5.0).max(w_lo);
            for j in -10i32..=10 {
                let p = cp + j as f64 * hp / 5.0;
                let v = f(w, p);
                if v > best.2 {
                    best = (w, p, v);
                }
            }
        }
        hw /= 5.0;
        hp /= 5.0;
        if hw < 1e-14 && hp < 1e-14 {
            break;
        }
    }
    Ok(GridOptimum {
        w: best.0,
        phi: best.1,
        value: best.2,
        w_step,
        phi_step,
    })
}

/// W2 between the pushforwards `N(0, w1^2)` and `N(0, w2^2)` of the latent
/// prior; the sign of `w` does not change the pushforward.
pub fn w2_line_submanifolds(w1: f64, w2: f64) -> f64 {
    (w1.abs() - w2.abs()).abs()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeRow {
    pub w: f64,
    pub phi: f64,
    pub loglik: f64,
    pub neg_kl_expectation: f64,
    /// NaN where the closed form is undefined (`w = 0`).
    pub elbo_analytic: f64,
    pub elbo_composed: f64,
}

/// Objective values on the Cartesian product of the two grids (`w` major).
pub fn landscape(sigma2hat: f64, ws: &[f64], phis: &[f64]) -> Vec<LandscapeRow> {
    let mut rows = Vec::with_capacity(ws.len() * phis.len());
    for &w in ws {
        for &phi in phis {
            rows.push(LandscapeRow {
                w,
                phi,
                loglik: loglik(w, sigma2hat),
                neg_kl_expectation: neg_kl_expectation(w, phi, sigma2hat),
                elbo_analytic: elbo_analytic(w, phi, sigma2hat).unwrap_or(f64::NAN),
                elbo_composed: elbo_composed(w, phi, sigma2hat),
            });
        }
    }
    rows
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn loglik_values() {
        assert!((loglik(0.0, 1.0) - (-0.5 * (2.0 * PI).ln() - 0.5)).abs() < 1e-15);
        assert!((loglik(0.0, 1.0) + 1.4189).abs() < 1e-4);
        assert!((loglik(2.0, 5.0) + 2.2237).abs() < 1e-4);
    }

    #[test]
    fn loglik_grid_argmax_matches_mle() {
        let ws = linspace(0.0, 4.0, 4001);
        let best = ws.iter().copied().max_by(|a, b| loglik(*a, 5.0).total_cmp(&loglik(*b, 5.0))).unwrap();
        assert!((best - 2.0).abs() <= 1e-3);
    }

    #[test]
    fn mle_values() {
        assert_eq!(mle_w(5.0).roots, vec![2.0, -2.0]);
        assert_eq!(mle_w(2.0).roots, vec![1.0, -1.0]);
        let b = mle_w(1.0);
        assert!(!b.boundary && b.roots[0] == 0.0 && b.roots[1] == 0.0);
        let e = mle_w(0.5);
        assert!(e.boundary && e.roots.is_empty());
    }

    #[test]
    fn kl_values_and_sign() {
        for x in [-3.0, 0.0, 2.5] {
            assert_eq!(kl_posterior(0.0, 0.0, x), 0.0);
        }
        assert!((kl_posterior(1.0, 0.5, 0.0) - (1.0 - 0.5 * 2f64.ln() - 0.5)).abs() < 1e-15);
        assert!((kl_posterior(1.0, 0.5, 0.0) - 0.1534).abs() < 1e-4);
        let mut rng = crate::rng::stream(1);
        for _ in 0..10_000 {
            let (w, p, x) = (
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
            );
            assert!(kl_posterior(w, p, x) >= -1e-12);
        }
    }

    #[test]
    fn kl_stationary_at_phi_opt() {
        for w in [-1.5, 0.3, 2.0, 4.0] {
            let p = phi_opt(w);
            let h = 1e-6;
            let d = (kl_posterior(w, p + h, 1.7) - kl_posterior(w, p - h, 1.7)) / (2.0 * h);
            assert!(d.abs() < 1e-6, "{w}: {d}");
        }
    }

    #[test]
    fn closed_form_values() {
        assert_eq!(phi_opt(2.0), 0.4);
        assert_eq!(phi_opt(0.0), 0.0);
        assert!((w_opt(0.4, 5.0) - 2.0 / 1.8).abs() < 1e-15);
        assert!(elbo_analytic(2.0, 0.4, 5.0).unwrap().is_finite());
        assert!(matches!(elbo_analytic(0.0, 0.4, 5.0), Err(Error::Domain(_))));
        let a = elbo_analytic(3.0, 0.3, 5.0).unwrap();
        let b = elbo_analytic(6.0, 0.3, 5.0).unwrap();
        assert!(b < a);
        assert_eq!(w2_line_submanifolds(2.0, 2.0), 0.0);
        assert!((w2_line_submanifolds(2.0, 1.5f64.sqrt()) - 0.77526).abs() < 1e-5);
    }

    #[test]
    fn composed_maximizer_is_profile_optimal() {
        let g = grid_maximize_elbo(5.0, ElboMode::Composed).unwrap();
        assert!((g.phi - phi_opt(g.w)).abs() < g.phi_step);
        assert!((g.w - elbo_maximizer(5.0)).abs() < 1e-6, "{g:?}");
    }

    #[test]
    fn analytic_maximizer_follows_inverse_w() {
        let g = grid_maximize_elbo(5.0, ElboMode::Analytic).unwrap();
        assert!((g.phi - 1.0 / g.w).abs() < 1e-6, "{g:?}");
        let [(w1, p1), (w2, p2)] = g.symmetric_pair();
        assert_eq!(elbo_analytic(w1, p1, 5.0).unwrap(), elbo_analytic(w2, p2, 5.0).unwrap());
    }

    #[test]
    fn refinement_is_stable_under_grid_halving() {
        for mode in [ElboMode::Composed, ElboMode::Analytic] {
            let a = grid_maximize_elbo_with(5.0, mode, 400).unwrap();
            let b = grid_maximize_elbo_with(5.0, mode, 799).unwrap();
            assert!((a.w - b.w).abs() < b.w_step, "{a:?} {b:?}");
        }
    }

    #[test]
    fn landscape_shape() {
        let rows = landscape(5.0, &linspace(0.0, 3.0, 4), &linspace(0.0, 1.0, 3));
        assert_eq!(rows.len(), 12);
        assert!(rows[0].elbo_analytic.is_nan());
        assert!(rows.iter().all(|r| (r.elbo_composed - r.loglik - r.neg_kl_expectation).abs() < 1e-15));
    }
}
