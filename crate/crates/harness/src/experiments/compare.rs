use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rvae::baselines::{tangent_pga_fit, train_projected_vae, ProjectedVae};
use rvae::model::generate_dataset;
use rvae::transport::{w2_between_submanifolds, Submanifold};

use super::{best_of, cell_seed, final_elbo, fit_rvae, sigma_of, with_pool, CellSeeds, RunOutput};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::io::{Cell, MetricsTable};

pub const METHODS: [&str; 4] = ["pga", "vae", "projected_vae", "rvae"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareCell {
    pub n: usize,
    pub log_sigma2: f64,
    pub replicate: usize,
    /// W2 mean per method in [`METHODS`] order (NaN on failure).
    pub w2: Vec<f64>,
    pub w2_sd: Vec<f64>,
    pub errors: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareAggregate {
    pub method: String,
    pub n: usize,
    pub log_sigma2: f64,
    /// Mean and sd over replicates of the per-replicate W2 estimates.
    pub w2_mean: f64,
    pub w2_sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub cells: Vec<CompareCell>,
    pub aggregates: Vec<CompareAggregate>,
}

impl CompareSummary {
    pub fn mean(&self, method: &str, n: usize, log_sigma2: f64) -> Option<&CompareAggregate> {
        self.aggregates
            .iter()
            .find(|a| a.method == method && a.n == n && a.log_sigma2 == log_sigma2)
    }
}

fn run_cell(cfg: &ExperimentConfig, ni: usize, si: usize, r: usize) -> CompareCell {
    let manifold = cfg.manifolds[0];
    let n = cfg.n_grid[ni];
    let log_sigma2 = cfg.log_sigma2_grid[si];
    let sigma = sigma_of(log_sigma2);
    let seeds = CellSeeds::new(cell_seed(cfg.seed, &[ni as u64, si as u64, r as u64]));
    let mut w2 = vec![f64::NAN; METHODS.len()];
    let mut w2_sd = vec![f64::NAN; METHODS.len()];
    let mut errors = Vec::new();
    let setup = || -> Result<_> {
        let truth = cfg.truth.submanifold(&manifold)?;
        let data = generate_dataset(&manifold, &truth.decoder, &truth.base_point, sigma, n, seeds.data)?;
        Ok((truth, data.points))
    };
    let (truth, data) = match setup() {
        Ok(v) => v,
        Err(e) => {
            errors.push(format!("data: {e}"));
            return CompareCell {
                n,
                log_sigma2,
                replicate: r,
                w2,
                w2_sd,
                errors,
            };
        }
    };
    let tc = cfg.train_for(n, seeds.train);
    let fits: [Result<Vec<Submanifold>>; 3] = [
        tangent_pga_fit(&manifold, &data, 1)
            .and_then(|p| p.generative_submanifold(&manifold))
            .map(|s| vec![s])
            .map_err(Into::into),
        best_of(
            cfg.restarts,
            seeds.init,
            &tc,
            |p: &ProjectedVae| final_elbo(&p.trace),
            |seed, tc| Ok(train_projected_vae(&manifold, &data, &cfg.architecture, sigma, tc, seed)?),
        )
        .map(|p| vec![Submanifold::of_model(&p.model), p.submanifold]),
        fit_rvae(&manifold, &data, &cfg.architecture, sigma, &tc, seeds.init, cfg.restarts).map(|(m, _)| vec![Submanifold::of_model(&m)]),
    ];
    let mut k = 0;
    for (fi, fit) in fits.into_iter().enumerate() {
        let width = if fi == 1 { 2 } else { 1 };
        match fit {
            Ok(subs) => {
                for s in subs {
                    match w2_between_submanifolds(&s, &truth, cfg.w2.m, cfg.w2.repeats, cfg.w2.metric, seeds.w2) {
                        Ok(e) => {
                            w2[k] = e.mean;
                            w2_sd[k] = e.sd;
                        }
                        Err(e) => errors.push(format!("{}: {e}", METHODS[k])),
                    }
                    k += 1;
                }
            }
            Err(e) => {
                for _ in 0..width {
                    errors.push(format!("{}: {e}", METHODS[k]));
                    k += 1;
                }
            }
        }
    }
    CompareCell {
        n,
        log_sigma2,
        replicate: r,
        w2,
        w2_sd,
        errors,
    }
}

/// Sphere workload: the true decoder generates data, then tangent PGA, a
/// Euclidean VAE (raw and projected onto the manifold) and the rVAE are
/// fitted and scored by W2 against the true weighted submanifold.
pub fn run_compare_methods(cfg: &ExperimentConfig, jobs: usize) -> Result<(RunOutput, CompareSummary)> {
    let mut idx = Vec::new();
    for ni in 0..cfg.n_grid.len() {
        for si in 0..cfg.log_sigma2_grid.len() {
            for r in 0..cfg.replicates {
                idx.push((ni, si, r));
            }
        }
    }
    let cells: Vec<CompareCell> = with_pool(jobs, || idx.par_iter().map(|&(ni, si, r)| run_cell(cfg, ni, si, r)).collect())?;
    let mut aggregates = Vec::new();
    let mut table = MetricsTable::new(&["method", "n", "log_sigma2", "w2_mean", "w2_sd", "replicates_ok"]);
    let mut rep_table = MetricsTable::new(&["method", "n", "log_sigma2", "replicate", "w2_mean", "w2_sd"]);
    for &n in &cfg.n_grid {
        for &ls in &cfg.log_sigma2_grid {
            for (k, method) in METHODS.iter().enumerate() {
                let vals: Vec<f64> = cells
                    .iter()
                    .filter(|c| c.n == n && c.log_sigma2 == ls && c.w2[k].is_finite())
                    .map(|c| c.w2[k])
                    .collect();
                let count = vals.len() as f64;
                let mean = vals.iter().sum::<f64>() / count;
                let sd = if vals.len() > 1 {
                    (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (count - 1.0)).sqrt()
                } else {
                    0.0
                };
                table.push(vec![(*method).into(), n.into(), ls.into(), mean.into(), sd.into(), vals.len().into()]);
                aggregates.push(CompareAggregate {
                    method: method.to_string(),
                    n,
                    log_sigma2: ls,
                    w2_mean: mean,
                    w2_sd: sd,
                });
            }
        }
    }
    for c in &cells {
        for (k, method) in METHODS.iter().enumerate() {
            rep_table.push(vec![
                Cell::from(*method),
                c.n.into(),
                c.log_sigma2.into(),
                c.replicate.into(),
                c.w2[k].into(),
                c.w2_sd[k].into(),
            ]);
        }
    }
    let summary = CompareSummary { cells, aggregates };
    let out = RunOutput {
        table,
        results: serde_json::to_value(&summary)?,
        files: vec![("replicates.csv".into(), rep_table.to_csv(cfg)?)],
    };
    Ok((out, summary))
}
