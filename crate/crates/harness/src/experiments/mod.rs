//! Experiment drivers. Each driver is a pure function of the configuration:
//! sweep cells get seeds derived from `(config seed, cell indices)` and run
//! on a worker pool, and their rows are sorted before anything is written.

mod closed_form;
mod compare;
mod consistency;
mod single;
mod spd_study;

pub use closed_form::{run_closed_form_1d, ClosedFormRow};
pub use compare::{run_compare_methods, CompareAggregate, CompareCell, CompareSummary, METHODS};
pub use consistency::{run_consistency_study, spearman, ConsistencyAggregate, ConsistencyCell, ConsistencySummary};
pub use single::{run_evaluate, run_generate, run_train};
pub use spd_study::{run_spd_study, synthetic_spd_dataset, SpdSummary, VarianceCurve};

use std::path::Path;

use rvae::baselines::{frechet_mean, FRECHET_MAX_ITER, FRECHET_TOL};
use rvae::model::{train, Architecture, RvaeModel, TrainConfig, TrainTrace};
use rvae::rng::split;
use rvae::{ManifoldKind, ManifoldPoint};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{HarnessError, Result};
use crate::io::{write_outputs, write_text, MetricsTable};

/// Everything an experiment produces; [`RunOutput::write`] persists it.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub table: MetricsTable,
    pub results: serde_json::Value,
    /// Additional files (relative name, contents).
    pub files: Vec<(String, String)>,
}

impl RunOutput {
    pub fn write(&self, dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
        write_outputs(dir, cfg, &self.table, &self.results)?;
        for (name, text) in &self.files {
            write_text(&dir.join(name), text)?;
        }
        Ok(())
    }
}

pub fn run(cfg: &ExperimentConfig, jobs: usize) -> Result<RunOutput> {
    cfg.validate()?;
    match cfg.experiment {
        ExperimentKind::Generate => run_generate(cfg),
        ExperimentKind::Train => run_train(cfg),
        ExperimentKind::Evaluate => run_evaluate(cfg),
        ExperimentKind::ConsistencyStudy => run_consistency_study(cfg, jobs).map(|(o, _)| o),
        ExperimentKind::CompareMethods => run_compare_methods(cfg, jobs).map(|(o, _)| o),
        ExperimentKind::SpdStudy => run_spd_study(cfg, jobs).map(|(o, _)| o),
        ExperimentKind::ClosedForm1d => run_closed_form_1d(cfg, jobs).map(|(o, _)| o),
    }
}

/// Runs `f` on a pool of `jobs` workers (0 picks the number of cores).
pub fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Seed of a sweep cell.
pub fn cell_seed(seed: u64, indices: &[u64]) -> u64 {
    indices.iter().fold(seed, |s, &i| split(s, i))
}

/// Seeds for the pieces of one cell: data, network init, training, W2.
#[derive(Clone, Copy, Debug)]
pub struct CellSeeds {
    pub data: u64,
    pub init: u64,
    pub train: u64,
    pub w2: u64,
}

impl CellSeeds {
    pub fn new(cell: u64) -> Self {
        Self {
            data: split(cell, 0),
            init: split(cell, 1),
            train: split(cell, 2),
            w2: split(cell, 3),
        }
    }
}

pub fn sigma_of(log_sigma2: f64) -> f64 {
    (0.5 * log_sigma2).exp()
}

/// Runs `fit` from `restarts` initializations and keeps the result with the
/// highest final-epoch ELBO. The first attempt uses `init_seed` and `tc`
/// unchanged; failed attempts are skipped unless all of them fail.
pub fn best_of<T>(
    restarts: usize,
    init_seed: u64,
    tc: &TrainConfig,
    elbo: impl Fn(&T) -> f64,
    fit: impl Fn(u64, &TrainConfig) -> Result<T>,
) -> Result<T> {
    let mut best: Option<(f64, T)> = None;
    let mut last_err = None;
    for r in 0..restarts.max(1) as u64 {
        let (seed, tc) = if r == 0 {
            (init_seed, tc.clone())
        } else {
            let tc = TrainConfig {
                seed: split(tc.seed, r),
                ..tc.clone()
            };
            (split(init_seed, r), tc)
        };
        match fit(seed, &tc) {
            Ok(t) => {
                let e = elbo(&t);
                if best.as_ref().is_none_or(|(b, _)| e > *b) {
                    best = Some((e, t));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match (best, last_err) {
        (Some((_, t)), _) => Ok(t),
        (None, Some(e)) => Err(e),
        (None, None) => unreachable!("at least one attempt runs"),
    }
}

pub(crate) fn final_elbo(trace: &TrainTrace) -> f64 {
    trace.last().map_or(f64::NEG_INFINITY, |s| if s.elbo.is_nan() { f64::NEG_INFINITY } else { s.elbo })
}

/// rVAE with base point at the Fréchet mean of the data, trained with `tc`
/// from `restarts` initializations (see [`best_of`]).
pub fn fit_rvae(
    manifold: &ManifoldKind,
    data: &[ManifoldPoint],
    arch: &Architecture,
    noise_sigma: f64,
    tc: &TrainConfig,
    init_seed: u64,
    restarts: usize,
) -> Result<(RvaeModel, TrainTrace)> {
    let base = frechet_mean(manifold, data, FRECHET_TOL, FRECHET_MAX_ITER)?;
    best_of(restarts, init_seed, tc, |(_, t)| final_elbo(t), |seed, tc| {
        let model = RvaeModel::init(*manifold, base.clone(), arch, noise_sigma, seed)?;
        Ok(train(model, data, tc)?)
    })
}
