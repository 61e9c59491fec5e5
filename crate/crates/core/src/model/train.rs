use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::geometry::{ManifoldKind, ManifoldPoint};
use crate::neuralnet::MlpNetwork;
use crate::rgauss::sample_into;
use crate::rng;

use super::{decode_batch_with, elbo_gradient, flatten, Adam, ElboStats, RvaeModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub mc_samples: usize,
    pub seed: u64,
    /// Fix the posterior standard deviation to 1 and leave the log-variance
    /// network untouched.
    pub freeze_encoder_std: bool,
    /// Learning rate at the last epoch as a fraction of `learning_rate`,
    /// reached by linear decay. 1 keeps the rate constant.
    pub final_lr_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            mc_samples: 1,
            seed: 0,
            freeze_encoder_std: false,
            final_lr_fraction: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Validation(format!("train config: {what}")));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.mc_samples == 0 {
            return bad("mc_samples must be at least 1");
        }
        if !(self.learning_rate > 0.0) || !(self.adam_eps > 0.0) {
            return bad("learning_rate and adam_eps must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return bad("final_lr_fraction must lie in (0, 1]");
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.learning_rate;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        self.learning_rate * (1.0 - t * (1.0 - self.final_lr_fraction))
    }
}

pub type EpochStats = ElboStats;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub elbo: Vec<f64>,
    pub rec: Vec<f64>,
    pub reg: Vec<f64>,
}

impl TrainTrace {
    pub fn len(&self) -> usize {
        self.elbo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elbo.is_empty()
    }

    pub fn last(&self) -> Option<EpochStats> {
        let i = self.elbo.len().checked_sub(1)?;
        Some(EpochStats {
            elbo: self.elbo[i],
            rec: self.rec[i],
            reg: self.reg[i],
        })
    }
}

/// Adam ascent on the reparametrized ELBO. Each epoch shuffles the data with
/// the training stream, then every batch draws its `batch * K * L` noise
/// values from the same stream in `(point, sample, latent)` order.
pub fn train(mut model: RvaeModel, data: &[ManifoldPoint], cfg: &TrainConfig) -> Result<(RvaeModel, TrainTrace)> {
    cfg.validate()?;
    let d = model.manifold.ambient_dim();
    let l = model.latent_dim;
    let k = cfg.mc_samples;
    for p in data {
        model.manifold.check_coords(&p.coords)?;
    }
    let flat = flatten(data, d)?;
    let mut rng = rng::stream(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut params = model.params_flat();
    let mut adam = Adam::new(params.len(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut trace = TrainTrace::default();
    let mut xs = Vec::with_capacity(cfg.batch_size * d);
    let mut eps = Vec::new();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let lr = cfg.lr_at(epoch);
        let mut sums = [0.0; 3];
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            xs.clear();
            for &i in chunk {
                xs.extend_from_slice(&flat[i * d..(i + 1) * d]);
            }
            eps.resize(chunk.len() * k * l, 0.0);
            rng::fill_normal(&mut rng, &mut eps);
            let (stats, grads) = elbo_gradient(&model, &xs, chunk.len(), &eps, k, cfg.freeze_encoder_std, true)?;
            if !stats.elbo.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    epoch,
                    batch: bi,
                    param_norm: params.iter().map(|p| p * p).sum::<f64>().sqrt(),
                });
            }
            let w = chunk.len() as f64;
            sums[0] += w * stats.elbo;
            sums[1] += w * stats.rec;
            sums[2] += w * stats.reg;
            adam.step(&mut params, &grads, lr);
            model.set_params_flat(&params)?;
        }
        let n = data.len().max(1) as f64;
        trace.elbo.push(sums[0] / n);
        trace.rec.push(sums[1] / n);
        trace.reg.push(sums[2] / n);
    }
    Ok((model, trace))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedData {
    pub points: Vec<ManifoldPoint>,
    /// Latent codes, row-major `n x L`.
    pub latents: Vec<f64>,
    pub latent_dim: usize,
}

/// `z_i ~ N(0, I_L)`, `x_i ~ N^M(Exp(mu, f(z_i)), sigma^2)`. Latents come from
/// `split(seed, 0)` and observation noise from `split(seed, 1)`.
pub fn generate_dataset(
    manifold: &ManifoldKind,
    decoder: &MlpNetwork,
    base_point: &ManifoldPoint,
    sigma: f64,
    n: usize,
    seed: u64,
) -> Result<GeneratedData> {
    manifold.check_coords(&base_point.coords)?;
    check_len("decoder output", manifold.ambient_dim(), decoder.output_dim())?;
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Validation(format!("noise sigma must be non-negative, got {sigma}")));
    }
    let d = manifold.ambient_dim();
    let l = decoder.input_dim();
    let mut zrng = rng::stream(rng::split(seed, 0));
    let mut latents = vec![0.0; n * l];
    rng::fill_normal(&mut zrng, &mut latents);
    let centers = decode_batch_with(manifold, &base_point.coords, decoder, &latents, n)?;
    let mut nrng = rng::stream(rng::split(seed, 1));
    let mut points = Vec::with_capacity(n);
    for c in centers.chunks_exact(d) {
        let mut out = vec![0.0; d];
        sample_into(manifold, c, sigma, &mut nrng, &mut out)?;
        points.push(ManifoldPoint::new_unchecked(out));
    }
    Ok(GeneratedData {
        points,
        latents,
        latent_dim: l,
    })
}
