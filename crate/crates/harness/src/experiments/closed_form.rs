use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rvae::analytic1d::{
    elbo_maximizer, grid_maximize_elbo_with, landscape, linspace, mle_w, reference_vae_limit, w2_line_submanifolds,
    ElboMode, GridOptimum,
};
use rvae::model::{generate_dataset, train, RvaeModel};
use rvae::transport::{w2_between_submanifolds, Submanifold};

use super::{cell_seed, sigma_of, with_pool, CellSeeds, RunOutput};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::io::{landscape_csv, MetricsTable};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormRow {
    pub n: usize,
    pub sigma2hat: f64,
    /// Decoder weight, decoder bias and encoder slope of the trained VAE.
    pub learned_w: f64,
    pub learned_bias: f64,
    pub learned_phi: f64,
    pub final_elbo: f64,
    /// Nonnegative MLE root (0 on the boundary).
    pub mle_w: f64,
    pub composed: GridOptimum,
    pub analytic: GridOptimum,
    pub elbo_maximizer: f64,
    pub reference_vae_limit: f64,
    pub w2_closed_form: f64,
    pub w2_monte_carlo: f64,
    pub w2_monte_carlo_sd: f64,
    pub w2_mle: f64,
}

fn run_cell(cfg: &ExperimentConfig, ni: usize) -> Result<ClosedFormRow> {
    let manifold = cfg.manifolds[0];
    let n = cfg.n_grid[ni];
    let sigma = sigma_of(cfg.log_sigma2_grid[0]);
    let seeds = CellSeeds::new(cell_seed(cfg.seed, &[ni as u64]));
    let truth = cfg.truth.submanifold(&manifold)?;
    let data = generate_dataset(&manifold, &truth.decoder, &truth.base_point, sigma, n, seeds.data)?;
    let s2 = data.points.iter().map(|p| p.coords[0] * p.coords[0]).sum::<f64>() / n as f64;

    // The base point stays at the origin: the closed forms describe the
    // centred model x = w z + noise.
    let model = RvaeModel::init(manifold, manifold.origin(), &cfg.architecture, sigma, seeds.init)?;
    let (model, trace) = train(model, &data.points, &cfg.train_for(n, seeds.train))?;
    let dec = model.decoder.params();
    let (w, b) = (dec[0], dec[dec.len() - 1]);
    let phi = model.encoder_mean.params()[0];

    let mc = w2_between_submanifolds(
        &Submanifold::of_model(&model),
        &truth,
        cfg.w2.m,
        cfg.w2.repeats,
        cfg.w2.metric,
        seeds.w2,
    )?;
    let w_star = cfg.closed_form.w_star;
    let mle = mle_w(s2).roots.first().copied().unwrap_or(0.0);
    let res = cfg.closed_form.grid_resolution;
    Ok(ClosedFormRow {
        n,
        sigma2hat: s2,
        learned_w: w,
        learned_bias: b,
        learned_phi: phi,
        final_elbo: trace.last().map_or(f64::NAN, |s| s.elbo),
        mle_w: mle,
        composed: grid_maximize_elbo_with(s2, ElboMode::Composed, res)?,
        analytic: grid_maximize_elbo_with(s2, ElboMode::Analytic, res)?,
        elbo_maximizer: elbo_maximizer(s2),
        reference_vae_limit: reference_vae_limit(s2),
        w2_closed_form: w2_line_submanifolds(w.abs(), w_star.abs()),
        w2_monte_carlo: mc.mean,
        w2_monte_carlo_sd: mc.sd,
        w2_mle: w2_line_submanifolds(mle, w_star.abs()),
    })
}

/// The one-dimensional PPCA workload: for each sample size, fit a linear VAE
/// with unit posterior variance and report it against the closed forms. A
/// landscape of every objective at the population second moment
/// `1 + w*^2` is written to `landscape.csv`.
pub fn run_closed_form_1d(cfg: &ExperimentConfig, jobs: usize) -> Result<(RunOutput, Vec<ClosedFormRow>)> {
    let rows: Vec<ClosedFormRow> = with_pool(jobs, || {
        (0..cfg.n_grid.len())
            .into_par_iter()
            .map(|ni| run_cell(cfg, ni))
            .collect::<Result<Vec<_>>>()
    })??;
    let mut table = MetricsTable::new(&[
        "n",
        "sigma2hat",
        "learned_w_abs",
        "learned_bias",
        "learned_phi",
        "mle_w",
        "composed_grid_w",
        "composed_grid_phi",
        "analytic_grid_w",
        "analytic_grid_phi",
        "elbo_maximizer",
        "reference_vae_limit",
        "w2_closed_form",
        "w2_monte_carlo",
        "w2_monte_carlo_sd",
        "w2_mle",
        "final_elbo",
    ]);
    for r in &rows {
        table.push(vec![
            r.n.into(),
            r.sigma2hat.into(),
            r.learned_w.abs().into(),
            r.learned_bias.into(),
            r.learned_phi.into(),
            r.mle_w.into(),
            r.composed.w.into(),
            r.composed.phi.into(),
            r.analytic.w.into(),
            r.analytic.phi.into(),
            r.elbo_maximizer.into(),
            r.reference_vae_limit.into(),
            r.w2_closed_form.into(),
            r.w2_monte_carlo.into(),
            r.w2_monte_carlo_sd.into(),
            r.w2_mle.into(),
            r.final_elbo.into(),
        ]);
    }
    let cf = &cfg.closed_form;
    let s2 = 1.0 + cf.w_star * cf.w_star;
    let land = landscape(
        s2,
        &linspace(cf.landscape_w.0, cf.landscape_w.1, cf.landscape_w.2),
        &linspace(cf.landscape_phi.0, cf.landscape_phi.1, cf.landscape_phi.2),
    );
    let out = RunOutput {
        table,
        results: serde_json::to_value(&rows)?,
        files: vec![("landscape.csv".into(), landscape_csv(&land)?)],
    };
    Ok((out, rows))
}
