use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rvae::model::generate_dataset;
use rvae::transport::{w2_between_submanifolds, Submanifold, W2Estimate};
use rvae::ManifoldKind;

use super::{cell_seed, fit_rvae, sigma_of, with_pool, CellSeeds, RunOutput};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::io::MetricsTable;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyCell {
    pub manifold: ManifoldKind,
    pub n: usize,
    pub log_sigma2: f64,
    pub replicate: usize,
    pub w2: Option<W2Estimate>,
    pub final_elbo: Option<f64>,
    /// Training or evaluation failure, recorded instead of aborting the sweep.
    pub error: Option<String>,
}

/// Replicates of one (manifold, n, noise) cell pooled together.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyAggregate {
    pub manifold: ManifoldKind,
    pub n: usize,
    pub log_sigma2: f64,
    /// Mean over successful replicates of their W2 estimates.
    pub w2_mean: f64,
    /// Standard deviation across replicates, or the Monte Carlo sd of the
    /// single estimate when there is one replicate.
    pub w2_sd: f64,
    pub replicates_ok: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldTrend {
    pub manifold: ManifoldKind,
    /// Spearman correlation of W2 with log sigma^2 over the pooled cells of
    /// the manifold (every n).
    pub spearman: f64,
    /// Mean W2 (over n) at the smallest grid noise divided by the mean at the largest.
    pub ratio_smallest_to_largest: f64,
    /// The same ratio for each sample size, in `n_grid` order.
    pub ratio_per_n: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencySummary {
    pub cells: Vec<ConsistencyCell>,
    pub aggregates: Vec<ConsistencyAggregate>,
    pub trends: Vec<ManifoldTrend>,
}

/// Average ranks (ties share the mean rank), 1-based.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

fn run_cell(cfg: &ExperimentConfig, mi: usize, ni: usize, si: usize, r: usize) -> ConsistencyCell {
    let manifold = cfg.manifolds[mi];
    let n = cfg.n_grid[ni];
    let log_sigma2 = cfg.log_sigma2_grid[si];
    let seeds = CellSeeds::new(cell_seed(cfg.seed, &[mi as u64, ni as u64, si as u64, r as u64]));
    let attempt = || -> Result<(W2Estimate, f64)> {
        let sigma = sigma_of(log_sigma2);
        let truth = cfg.truth.submanifold(&manifold)?;
        let data = generate_dataset(&manifold, &truth.decoder, &truth.base_point, sigma, n, seeds.data)?;
        let (model, trace) = fit_rvae(
            &manifold,
            &data.points,
            &cfg.architecture,
            sigma,
            &cfg.train_for(n, seeds.train),
            seeds.init,
            cfg.restarts,
        )?;
        let w2 = w2_between_submanifolds(
            &Submanifold::of_model(&model),
            &truth,
            cfg.w2.m,
            cfg.w2.repeats,
            cfg.w2.metric,
            seeds.w2,
        )?;
        Ok((w2, trace.last().map_or(f64::NAN, |s| s.elbo)))
    };
    match attempt() {
        Ok((w2, elbo)) => ConsistencyCell {
            manifold,
            n,
            log_sigma2,
            replicate: r,
            w2: Some(w2),
            final_elbo: Some(elbo),
            error: None,
        },
        Err(e) => ConsistencyCell {
            manifold,
            n,
            log_sigma2,
            replicate: r,
            w2: None,
            final_elbo: None,
            error: Some(e.to_string()),
        },
    }
}

fn aggregate(cfg: &ExperimentConfig, cells: &[ConsistencyCell]) -> Vec<ConsistencyAggregate> {
    let mut out = Vec::new();
    for m in &cfg.manifolds {
        for &n in &cfg.n_grid {
            for &ls in &cfg.log_sigma2_grid {
                let ok: Vec<&W2Estimate> = cells
                    .iter()
                    .filter(|c| c.manifold == *m && c.n == n && c.log_sigma2 == ls)
                    .filter_map(|c| c.w2.as_ref())
                    .collect();
                let k = ok.len() as f64;
                let mean = ok.iter().map(|w| w.mean).sum::<f64>() / k;
                let sd = match ok.len() {
                    0 => f64::NAN,
                    1 => ok[0].sd,
                    _ => (ok.iter().map(|w| (w.mean - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt(),
                };
                out.push(ConsistencyAggregate {
                    manifold: *m,
                    n,
                    log_sigma2: ls,
                    w2_mean: mean,
                    w2_sd: sd,
                    replicates_ok: ok.len(),
                });
            }
        }
    }
    out
}

fn trends(cfg: &ExperimentConfig, aggs: &[ConsistencyAggregate]) -> Vec<ManifoldTrend> {
    let lo = cfg.log_sigma2_grid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = cfg.log_sigma2_grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    cfg.manifolds
        .iter()
        .map(|m| {
            let ok: Vec<&ConsistencyAggregate> =
                aggs.iter().filter(|a| a.manifold == *m && a.w2_mean.is_finite()).collect();
            let xs: Vec<f64> = ok.iter().map(|a| a.log_sigma2).collect();
            let ys: Vec<f64> = ok.iter().map(|a| a.w2_mean).collect();
            let at = |ls: f64, n: Option<usize>| {
                let v: Vec<f64> = ok
                    .iter()
                    .filter(|a| a.log_sigma2 == ls && n.is_none_or(|n| a.n == n))
                    .map(|a| a.w2_mean)
                    .collect();
                v.iter().sum::<f64>() / v.len() as f64
            };
            ManifoldTrend {
                manifold: *m,
                spearman: if ok.len() > 1 { spearman(&xs, &ys) } else { f64::NAN },
                ratio_smallest_to_largest: at(lo, None) / at(hi, None),
                ratio_per_n: cfg.n_grid.iter().map(|&n| at(lo, Some(n)) / at(hi, Some(n))).collect(),
            }
        })
        .collect()
}

/// For every (manifold, n, noise) cell and replicate: sample from the true
/// decoder, fit an rVAE with the configured architecture and measure W2
/// between the learned and true weighted submanifolds.
pub fn run_consistency_study(cfg: &ExperimentConfig, jobs: usize) -> Result<(RunOutput, ConsistencySummary)> {
    let mut idx = Vec::new();
    for mi in 0..cfg.manifolds.len() {
        for ni in 0..cfg.n_grid.len() {
            for si in 0..cfg.log_sigma2_grid.len() {
                for r in 0..cfg.replicates {
                    idx.push((mi, ni, si, r));
                }
            }
        }
    }
    let cells: Vec<ConsistencyCell> =
        with_pool(jobs, || idx.par_iter().map(|&(mi, ni, si, r)| run_cell(cfg, mi, ni, si, r)).collect())?;
    let aggregates = aggregate(cfg, &cells);
    let mut table = MetricsTable::new(&["manifold", "n", "log_sigma2", "w2_mean", "w2_sd", "replicates_ok"]);
    for a in &aggregates {
        table.push(vec![
            a.manifold.name().into(),
            a.n.into(),
            a.log_sigma2.into(),
            a.w2_mean.into(),
            a.w2_sd.into(),
            a.replicates_ok.into(),
        ]);
    }
    let mut rep = MetricsTable::new(&[
        "manifold",
        "n",
        "log_sigma2",
        "replicate",
        "w2_mean",
        "w2_sd",
        "final_elbo",
        "status",
    ]);
    for c in &cells {
        rep.push(vec![
            c.manifold.name().into(),
            c.n.into(),
            c.log_sigma2.into(),
            c.replicate.into(),
            c.w2.as_ref().map_or(f64::NAN, |w| w.mean).into(),
            c.w2.as_ref().map_or(f64::NAN, |w| w.sd).into(),
            c.final_elbo.unwrap_or(f64::NAN).into(),
            c.error.clone().unwrap_or_else(|| "ok".into()).into(),
        ]);
    }
    let summary = ConsistencySummary {
        trends: trends(cfg, &aggregates),
        aggregates,
        cells,
    };
    let out = RunOutput {
        table,
        results: serde_json::to_value(&summary)?,
        files: vec![("replicates.csv".into(), rep.to_csv(cfg)?)],
    };
    Ok((out, summary))
}
