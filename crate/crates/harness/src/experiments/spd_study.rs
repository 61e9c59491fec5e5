use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rvae::baselines::{
    frechet_mean, latent_explained_variance, pca_fit, tangent_pga_fit, to_ambient, FRECHET_MAX_ITER, FRECHET_TOL,
};
use rvae::model::{generate_dataset, train, Architecture, RvaeModel};
use rvae::neuralnet::Activation;
use rvae::{ManifoldKind, ManifoldPoint};

use super::{best_of, cell_seed, final_elbo, fit_rvae, sigma_of, with_pool, CellSeeds, RunOutput};
use crate::config::{ExperimentConfig, SpdSpec, TruthSpec};
use crate::connectome::{ingest_connectomes, Rejection, Repair};
use crate::error::{HarnessError, Result};
use crate::io::MetricsTable;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceCurve {
    /// `rvae` or `vae` (latent curves), `pca` or `pga` (ambient curves).
    pub method: String,
    /// Latent dimension for the VAEs, number of coordinates for PCA/PGA.
    pub latent_dim: usize,
    pub cumulative_ratios: Vec<f64>,
    pub degenerate: bool,
}

impl VarianceCurve {
    /// Cumulative ratio of the first `k` components (0 for `k = 0`).
    pub fn ratio_at(&self, k: usize) -> f64 {
        match k {
            0 => 0.0,
            k => self.cumulative_ratios[(k - 1).min(self.cumulative_ratios.len() - 1)],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpdSummary {
    /// `synthetic` or the path of the ingested file.
    pub source: String,
    pub n_points: usize,
    pub curves: Vec<VarianceCurve>,
    pub repairs: Vec<Repair>,
    pub rejections: Vec<Rejection>,
    /// Training failures per `(method, latent_dim)`.
    pub errors: Vec<String>,
}

impl SpdSummary {
    pub fn curve(&self, method: &str, latent_dim: usize) -> Option<&VarianceCurve> {
        self.curves.iter().find(|c| c.method == method && c.latent_dim == latent_dim)
    }
}

/// Decoder generating the synthetic data: layers `[L0, L0^2, D]` with ReLU,
/// Glorot-initialized from `truth_seed`, output layer scaled by `truth_scale`.
pub fn synthetic_truth(spec: &SpdSpec) -> TruthSpec {
    TruthSpec {
        latent_dim: spec.true_latent_dim,
        hidden: vec![spec.true_latent_dim * spec.true_latent_dim],
        activation: Activation::Relu,
        init_seed: spec.truth_seed,
        gain: 1.0,
        scale: spec.truth_scale,
        params: None,
    }
}

/// `spec.n` points on `SPD(spec.matrix_size)` from [`synthetic_truth`] at the
/// identity, with noise `sigma = exp(log_sigma2 / 2)`.
pub fn synthetic_spd_dataset(spec: &SpdSpec, seed: u64) -> Result<Vec<ManifoldPoint>> {
    let manifold = ManifoldKind::SpdLogEuclidean(spec.matrix_size);
    let truth = synthetic_truth(spec).submanifold(&manifold)?;
    let data = generate_dataset(&manifold, &truth.decoder, &truth.base_point, sigma_of(spec.log_sigma2), spec.n, seed)?;
    Ok(data.points)
}

/// Layers `L, L^2, D` for the decoder and `D, L^2, L` for the encoders.
fn arch_for(latent_dim: usize, activation: Activation) -> Architecture {
    Architecture {
        latent_dim,
        decoder_hidden: vec![latent_dim * latent_dim],
        encoder_hidden: vec![latent_dim * latent_dim],
        activation,
    }
}

fn fit_curve(
    cfg: &ExperimentConfig,
    manifold: &ManifoldKind,
    data: &[ManifoldPoint],
    li: usize,
    riemannian: bool,
) -> Result<VarianceCurve> {
    let l = cfg.latent_grid[li];
    let seeds = CellSeeds::new(cell_seed(cfg.seed, &[1, li as u64, riemannian as u64]));
    let arch = arch_for(l, cfg.architecture.activation);
    let sigma = sigma_of(cfg.spd.log_sigma2);
    let tc = cfg.train_for(data.len(), seeds.train);
    let (model, pts) = if riemannian {
        (fit_rvae(manifold, data, &arch, sigma, &tc, seeds.init, cfg.restarts)?.0, data.to_vec())
    } else {
        // Matrices as Euclidean vectors under the scaled vectorization, so
        // the reconstruction term is the Frobenius distance.
        let (euclid, pts) = to_ambient(manifold, data);
        let base = frechet_mean(&euclid, &pts, FRECHET_TOL, FRECHET_MAX_ITER)?;
        let (model, _) = best_of(cfg.restarts, seeds.init, &tc, |(_, t)| final_elbo(t), |seed, tc| {
            let model = RvaeModel::init(euclid, base.clone(), &arch, sigma, seed)?;
            Ok(train(model, &pts, tc)?)
        })?;
        (model, pts)
    };
    let lv = latent_explained_variance(&model, &pts)?;
    Ok(VarianceCurve {
        method: if riemannian { "rvae" } else { "vae" }.into(),
        latent_dim: l,
        cumulative_ratios: lv.cumulative_ratios,
        degenerate: lv.degenerate,
    })
}

/// Latent dimension sweep on SPD data: for each `L`, an rVAE under the
/// Log-Euclidean metric and a VAE on the vectorized matrices, each reported
/// through the explained-variance curve of its encoder means. PCA of the
/// vectorized matrices and tangent PGA give the ambient curves.
pub fn run_spd_study(cfg: &ExperimentConfig, jobs: usize) -> Result<(RunOutput, SpdSummary)> {
    let spec = &cfg.spd;
    let (source, manifold, data, repairs, rejections) = match &spec.data {
        Some(path) => {
            let ds = ingest_connectomes(path, Some(spec.matrix_size))?;
            (path.display().to_string(), ds.manifold(), ds.points()?, ds.repairs, ds.rejections)
        }
        None => (
            "synthetic".to_string(),
            ManifoldKind::SpdLogEuclidean(spec.matrix_size),
            synthetic_spd_dataset(spec, cell_seed(cfg.seed, &[0]))?,
            Vec::new(),
            Vec::new(),
        ),
    };
    if data.len() < 2 {
        return Err(HarnessError::Input(format!("SPD study needs at least 2 points, got {}", data.len())));
    }
    let d = manifold.ambient_dim();

    let mut jobs_idx = Vec::new();
    for li in 0..cfg.latent_grid.len() {
        jobs_idx.push((li, true));
        jobs_idx.push((li, false));
    }
    let fits: Vec<(usize, bool, Result<VarianceCurve>)> = with_pool(jobs, || {
        jobs_idx
            .par_iter()
            .map(|&(li, r)| (li, r, fit_curve(cfg, &manifold, &data, li, r)))
            .collect()
    })?;
    let mut curves = Vec::new();
    let mut errors = Vec::new();
    for (li, r, f) in fits {
        match f {
            Ok(c) => curves.push(c),
            Err(e) => errors.push(format!(
                "{} L={}: {e}",
                if r { "rvae" } else { "vae" },
                cfg.latent_grid[li]
            )),
        }
    }

    let (_, ambient) = to_ambient(&manifold, &data);
    let flat: Vec<f64> = ambient.iter().flat_map(|p| p.coords.iter().copied()).collect();
    let pca = pca_fit(&flat, d, 0)?;
    curves.push(VarianceCurve {
        method: "pca".into(),
        latent_dim: d,
        cumulative_ratios: pca.cumulative_ratios,
        degenerate: pca.degenerate,
    });
    let pga = tangent_pga_fit(&manifold, &data, 0)?;
    curves.push(VarianceCurve {
        method: "pga".into(),
        latent_dim: d,
        cumulative_ratios: pga.cumulative_ratios,
        degenerate: pga.degenerate,
    });

    let mut table = MetricsTable::new(&["method", "latent_dim", "k", "cumulative_ratio"]);
    for c in &curves {
        for (k, r) in c.cumulative_ratios.iter().enumerate() {
            table.push(vec![c.method.clone().into(), c.latent_dim.into(), (k + 1).into(), (*r).into()]);
        }
    }
    let summary = SpdSummary {
        source,
        n_points: data.len(),
        curves,
        repairs,
        rejections,
        errors,
    };
    let out = RunOutput {
        table,
        results: serde_json::to_value(&summary)?,
        files: Vec::new(),
    };
    Ok((out, summary))
}
