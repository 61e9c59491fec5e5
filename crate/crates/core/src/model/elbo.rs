use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};
use crate::geometry::ManifoldPoint;
use crate::rng::{self, Stream};

use super::RvaeModel;

/// Batch means of the ELBO and its two terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ElboStats {
    pub elbo: f64,
    pub rec: f64,
    pub reg: f64,
}

/// Monte Carlo estimate of the reconstruction term (average over `k`
/// reparametrized draws of `-d(x, decode(z))^2 / 2 sigma^2`, normalization
/// constant dropped) and the closed-form regularizer
/// `1/2 sum_l (1 + log s_l^2 - m_l^2 - s_l^2)` for a single point.
pub fn elbo_terms(model: &RvaeModel, x: &ManifoldPoint, rng: &mut Stream, k: usize) -> Result<(f64, f64)> {
    let k = k.max(1);
    let mut eps = vec![0.0; k * model.latent_dim];
    rng::fill_normal(rng, &mut eps);
    let (stats, _) = elbo_gradient(model, &x.coords, 1, &eps, k, false, false)?;
    Ok((stats.rec, stats.reg))
}

/// ELBO batch means and the gradient of the loss `-mean ELBO` with respect
/// to the flat model parameters (see [`RvaeModel::params_flat`]).
///
/// `xs` holds `batch` points (row-major) and `eps` the standard normal draws
/// in `(point, sample, latent)` order, `batch * k * L` values. With
/// `freeze_std` the posterior standard deviation is fixed to 1 and the
/// log-variance network receives no gradient. With `with_grad == false`
/// only the statistics are computed and the gradient vector is empty.
pub fn elbo_gradient(
    model: &RvaeModel,
    xs: &[f64],
    batch: usize,
    eps: &[f64],
    k: usize,
    freeze_std: bool,
    with_grad: bool,
) -> Result<(ElboStats, Vec<f64>)> {
    let m = &model.manifold;
    let d = m.ambient_dim();
    let l = model.latent_dim;
    check_len("ELBO batch", batch * d, xs.len())?;
    check_len("reparametrization noise", batch * k * l, eps.len())?;
    let base = &model.base_point.coords;
    let inv2s2 = 1.0 / (2.0 * model.noise_sigma * model.noise_sigma);

    let tape_mean = model.encoder_mean.forward_batch(xs, batch)?;
    let h = tape_mean.output();
    let tape_logvar = if freeze_std {
        None
    } else {
        Some(model.encoder_logvar.forward_batch(xs, batch)?)
    };
    let zero = vec![0.0; batch * l];
    let s = tape_logvar.as_ref().map_or(&zero[..], |t| t.output());

    let mut z = vec![0.0; batch * k * l];
    for b in 0..batch {
        for j in 0..k {
            for i in 0..l {
                let idx = (b * k + j) * l + i;
                z[idx] = h[b * l + i] + (0.5 * s[b * l + i]).exp() * eps[idx];
            }
        }
    }
    let tape_dec = model.decoder.forward_batch(&z, batch * k)?;
    let u = tape_dec.output();

    let mut rec_sum = 0.0;
    let mut adj_u = vec![0.0; if with_grad { batch * k * d } else { 0 }];
    let mut v = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut g_y = vec![0.0; d];
    let scale = inv2s2 / (batch * k) as f64;
    for b in 0..batch {
        let x = &xs[b * d..(b + 1) * d];
        for j in 0..k {
            let row = b * k + j;
            m.lift_exp_raw(base, &u[row * d..(row + 1) * d], &mut v, &mut y);
            let d2 = m.sq_distance_grad(x, &y, &mut g_y);
            rec_sum -= d2 * inv2s2;
            if with_grad {
                g_y.iter_mut().for_each(|g| *g *= scale);
                m.lift_exp_vjp(base, &v, &g_y, &mut adj_u[row * d..(row + 1) * d]);
            }
        }
    }
    let mut reg_sum = 0.0;
    for b in 0..batch {
        for i in 0..l {
            let (mu, lv) = (h[b * l + i], s[b * l + i]);
            reg_sum += 0.5 * (1.0 + lv - mu * mu - lv.exp());
        }
    }
    let rec = rec_sum / (batch * k) as f64;
    let reg = reg_sum / batch as f64;
    let stats = ElboStats {
        elbo: rec + reg,
        rec,
        reg,
    };
    if !with_grad {
        return Ok((stats, Vec::new()));
    }

    let n_dec = model.decoder.param_count();
    let n_mean = model.encoder_mean.param_count();
    let mut grads = vec![0.0; model.param_count()];
    let (g_dec, rest) = grads.split_at_mut(n_dec);
    let (g_mean, g_logvar) = rest.split_at_mut(n_mean);
    let g_z = model.decoder.backward_into(&tape_dec, &adj_u, g_dec)?;

    let inv_b = 1.0 / batch as f64;
    let mut g_h = vec![0.0; batch * l];
    let mut g_s = vec![0.0; batch * l];
    for b in 0..batch {
        for i in 0..l {
            let bi = b * l + i;
            let std = (0.5 * s[bi]).exp();
            let mut gh = inv_b * h[bi];
            let mut gs = inv_b * 0.5 * (s[bi].exp() - 1.0);
            for j in 0..k {
                let idx = (b * k + j) * l + i;
                gh += g_z[idx];
                gs += g_z[idx] * eps[idx] * 0.5 * std;
            }
            g_h[bi] = gh;
            g_s[bi] = gs;
        }
    }
    model.encoder_mean.backward_into(&tape_mean, &g_h, g_mean)?;
    if let Some(t) = &tape_logvar {
        model.encoder_logvar.backward_into(t, &g_s, g_logvar)?;
    }
    Ok((stats, grads))
}

/// Largest relative discrepancy between [`elbo_gradient`] and central
/// differences of the loss with step `h`, noise held fixed. Relative errors
/// use `max(|analytic|, |numeric|, 1e-6)` as denominator.
pub fn elbo_gradient_check(
    model: &RvaeModel,
    xs: &[f64],
    batch: usize,
    eps: &[f64],
    k: usize,
    freeze_std: bool,
    h: f64,
) -> Result<f64> {
    let (_, grads) = elbo_gradient(model, xs, batch, eps, k, freeze_std, true)?;
    let mut probe = model.clone();
    let mut params = model.params_flat();
    let loss = |m: &RvaeModel| -> Result<f64> { Ok(-elbo_gradient(m, xs, batch, eps, k, freeze_std, false)?.0.elbo) };
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let p0 = params[i];
        params[i] = p0 + h;
        probe.set_params_flat(&params)?;
        let up = loss(&probe)?;
        params[i] = p0 - h;
        probe.set_params_flat(&params)?;
        let down = loss(&probe)?;
        params[i] = p0;
        let numeric = (up - down) / (2.0 * h);
        let a = grads[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}
