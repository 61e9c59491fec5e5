//! Riemannian VAE: `X | Z ~ N^M(Exp(mu, f_theta(Z)), sigma^2)`, `Z ~ N(0, I_L)`,
//! with Gaussian variational posterior `q(z|x) = N(h(x), diag(exp(s(x))))`.
//!
//! On `Euclidean(d)` the model is exactly the Euclidean VAE; with a single
//! linear decoder layer it is probabilistic PGA (see [`make_ppga_model`]).

mod elbo;
mod optim;
mod train;

pub use elbo::{elbo_gradient, elbo_gradient_check, elbo_terms, ElboStats};
pub use optim::Adam;
pub use train::{generate_dataset, train, EpochStats, GeneratedData, TrainConfig, TrainTrace};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::geometry::{ManifoldKind, ManifoldPoint};
use crate::neuralnet::{Activation, MlpNetwork};
use crate::rng;

/// Hidden-layer layout shared by the encoder and decoder networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub latent_dim: usize,
    pub decoder_hidden: Vec<usize>,
    pub encoder_hidden: Vec<usize>,
    pub activation: Activation,
}

impl Architecture {
    pub fn decoder_dims(&self, out: usize) -> Vec<usize> {
        let mut d = vec![self.latent_dim];
        d.extend(&self.decoder_hidden);
        d.push(out);
        d
    }

    pub fn encoder_dims(&self, input: usize) -> Vec<usize> {
        let mut d = vec![input];
        d.extend(&self.encoder_hidden);
        d.push(self.latent_dim);
        d
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RvaeModel {
    pub manifold: ManifoldKind,
    pub base_point: ManifoldPoint,
    pub decoder: MlpNetwork,
    pub encoder_mean: MlpNetwork,
    pub encoder_logvar: MlpNetwork,
    pub latent_dim: usize,
    pub noise_sigma: f64,
}

impl RvaeModel {
    pub fn new(
        manifold: ManifoldKind,
        base_point: ManifoldPoint,
        decoder: MlpNetwork,
        encoder_mean: MlpNetwork,
        encoder_logvar: MlpNetwork,
        noise_sigma: f64,
    ) -> Result<Self> {
        manifold.check_coords(&base_point.coords)?;
        let d = manifold.ambient_dim();
        let l = decoder.input_dim();
        check_len("decoder output", d, decoder.output_dim())?;
        check_len("encoder mean input", d, encoder_mean.input_dim())?;
        check_len("encoder log-variance input", d, encoder_logvar.input_dim())?;
        check_len("encoder mean output", l, encoder_mean.output_dim())?;
        check_len("encoder log-variance output", l, encoder_logvar.output_dim())?;
        if !(noise_sigma > 0.0) {
            return Err(Error::Validation(format!("noise sigma must be positive, got {noise_sigma}")));
        }
        Ok(Self {
            manifold,
            base_point,
            decoder,
            encoder_mean,
            encoder_logvar,
            latent_dim: l,
            noise_sigma,
        })
    }

    /// Freshly initialized networks; the three nets get split seeds.
    pub fn init(
        manifold: ManifoldKind,
        base_point: ManifoldPoint,
        arch: &Architecture,
        noise_sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        let d = manifold.ambient_dim();
        let decoder = MlpNetwork::init_params(&arch.decoder_dims(d), arch.activation, rng::split(seed, 0))?;
        let enc = arch.encoder_dims(d);
        let encoder_mean = MlpNetwork::init_params(&enc, arch.activation, rng::split(seed, 1))?;
        let encoder_logvar = MlpNetwork::init_params(&enc, arch.activation, rng::split(seed, 2))?;
        Self::new(manifold, base_point, decoder, encoder_mean, encoder_logvar, noise_sigma)
    }

    pub fn param_count(&self) -> usize {
        self.decoder.param_count() + self.encoder_mean.param_count() + self.encoder_logvar.param_count()
    }

    /// Flat parameters: decoder, then encoder mean, then encoder log-variance.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        p.extend_from_slice(self.decoder.params());
        p.extend_from_slice(self.encoder_mean.params());
        p.extend_from_slice(self.encoder_logvar.params());
        p
    }

    pub fn set_params_flat(&mut self, p: &[f64]) -> Result<()> {
        check_len("model parameters", self.param_count(), p.len())?;
        let (a, rest) = p.split_at(self.decoder.param_count());
        let (b, c) = rest.split_at(self.encoder_mean.param_count());
        self.decoder.params_mut().copy_from_slice(a);
        self.encoder_mean.params_mut().copy_from_slice(b);
        self.encoder_logvar.params_mut().copy_from_slice(c);
        Ok(())
    }

    /// Decodes a batch of latent codes (row-major `count x L`) into ambient
    /// coordinates (row-major `count x D`).
    pub fn decode_batch(&self, zs: &[f64], count: usize) -> Result<Vec<f64>> {
        decode_batch_with(&self.manifold, &self.base_point.coords, &self.decoder, zs, count)
    }

    pub fn decode(&self, z: &[f64]) -> Result<ManifoldPoint> {
        check_len("latent code", self.latent_dim, z.len())?;
        Ok(ManifoldPoint::new_unchecked(self.decode_batch(z, 1)?))
    }

    /// Posterior mean and standard deviation for one point.
    pub fn encode(&self, x: &ManifoldPoint) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len("encoder input", self.manifold.ambient_dim(), x.coords.len())?;
        let mean = self.encoder_mean.forward(&x.coords)?;
        let std = self
            .encoder_logvar
            .forward(&x.coords)?
            .iter()
            .map(|s| (0.5 * s).exp())
            .collect();
        Ok((mean, std))
    }

    /// Posterior means for a batch of points (row-major `n x L`).
    pub fn encode_means(&self, data: &[ManifoldPoint]) -> Result<Vec<f64>> {
        let flat = flatten(data, self.manifold.ambient_dim())?;
        Ok(self.encoder_mean.forward_batch(&flat, data.len())?.output().to_vec())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: RvaeModel = serde_json::from_str(s)?;
        let decoder = MlpNetwork::from_json(&m.decoder.to_json()?)?;
        Self::new(
            m.manifold,
            m.base_point,
            decoder,
            m.encoder_mean,
            m.encoder_logvar,
            m.noise_sigma,
        )
    }
}

/// `Exp(base, P_base f(z))` for a batch of latent codes.
pub fn decode_batch_with(
    manifold: &ManifoldKind,
    base: &[f64],
    decoder: &MlpNetwork,
    zs: &[f64],
    count: usize,
) -> Result<Vec<f64>> {
    let d = manifold.ambient_dim();
    check_len("decoder output", d, decoder.output_dim())?;
    let tape = decoder.forward_batch(zs, count)?;
    let mut out = vec![0.0; count * d];
    let mut v = vec![0.0; d];
    for (u, y) in tape.output().chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        manifold.lift_exp_raw(base, u, &mut v, y);
    }
    Ok(out)
}

pub(crate) fn flatten(data: &[ManifoldPoint], dim: usize) -> Result<Vec<f64>> {
    let mut flat = Vec::with_capacity(data.len() * dim);
    for p in data {
        check_len("data point", dim, p.coords.len())?;
        flat.extend_from_slice(&p.coords);
    }
    Ok(flat)
}

/// Probabilistic PGA as an rVAE: the decoder is the single linear layer
/// `z -> W z` (`weights` row-major `D x L`, zero bias). The encoders are
/// linear maps initialized from `seed`.
pub fn make_ppga_model(
    manifold: ManifoldKind,
    base_point: ManifoldPoint,
    weights: &[f64],
    latent_dim: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<RvaeModel> {
    let d = manifold.ambient_dim();
    check_len("PPGA loading matrix", d * latent_dim, weights.len())?;
    let decoder = MlpNetwork::linear(weights, &vec![0.0; d])?;
    let encoder_mean = MlpNetwork::init_params(&[d, latent_dim], Activation::Identity, rng::split(seed, 1))?;
    let mut encoder_logvar =
        MlpNetwork::init_params(&[d, latent_dim], Activation::Identity, rng::split(seed, 2))?;
    encoder_logvar.params_mut().iter_mut().for_each(|p| *p = 0.0);
    RvaeModel::new(manifold, base_point, decoder, encoder_mean, encoder_logvar, noise_sigma)
}
