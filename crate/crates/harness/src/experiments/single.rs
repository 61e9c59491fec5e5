use serde_json::json;

use rvae::model::{elbo_terms, generate_dataset, RvaeModel};
use rvae::rng;
use rvae::transport::{w2_between_submanifolds, Submanifold};

use super::{cell_seed, fit_rvae, sigma_of, CellSeeds, RunOutput};
use crate::config::ExperimentConfig;
use crate::error::{io_err, HarnessError, Result};
use crate::io::{points_to_csv, read_points, MetricsTable};

fn first<T: Copy>(v: &[T]) -> T {
    v[0]
}

/// Samples `n_grid[0]` points from the configured true decoder on the first
/// manifold. Writes `data.csv`, `latents.csv` and the truth as `truth.json`.
pub fn run_generate(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let manifold = cfg.manifolds[0];
    let n = first(&cfg.n_grid);
    let log_sigma2 = first(&cfg.log_sigma2_grid);
    let truth = cfg.truth.submanifold(&manifold)?;
    let seeds = CellSeeds::new(cell_seed(cfg.seed, &[0]));
    let data = generate_dataset(&manifold, &truth.decoder, &truth.base_point, sigma_of(log_sigma2), n, seeds.data)?;
    let latents: Vec<rvae::ManifoldPoint> = data
        .latents
        .chunks_exact(data.latent_dim)
        .map(|z| rvae::ManifoldPoint::new_unchecked(z.to_vec()))
        .collect();
    let mut table = MetricsTable::new(&["manifold", "n", "log_sigma2"]);
    table.push(vec![manifold.name().into(), n.into(), log_sigma2.into()]);
    Ok(RunOutput {
        table,
        results: json!({ "manifold": manifold, "n": n, "log_sigma2": log_sigma2 }),
        files: vec![
            ("data.csv".into(), points_to_csv(&data.points)?),
            ("latents.csv".into(), points_to_csv(&latents)?),
            ("truth.json".into(), serde_json::to_string_pretty(&truth)? + "\n"),
        ],
    })
}

/// Trains an rVAE on `data` (base point at the Fréchet mean) and writes the
/// checkpoint as `model.json`; the metrics table is the per-epoch trace.
pub fn run_train(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let manifold = cfg.manifolds[0];
    let path = cfg
        .data
        .as_ref()
        .ok_or_else(|| HarnessError::Config("train needs a dataset (data = \"...\" or --data)".into()))?;
    let data = read_points(path, &manifold)?;
    let seeds = CellSeeds::new(cell_seed(cfg.seed, &[0]));
    let sigma = sigma_of(first(&cfg.log_sigma2_grid));
    let (model, trace) = fit_rvae(
        &manifold,
        &data,
        &cfg.architecture,
        sigma,
        &cfg.train_for(data.len(), seeds.train),
        seeds.init,
        cfg.restarts,
    )?;
    let mut table = MetricsTable::new(&["epoch", "elbo", "rec", "reg"]);
    for i in 0..trace.len() {
        table.push(vec![(i + 1).into(), trace.elbo[i].into(), trace.rec[i].into(), trace.reg[i].into()]);
    }
    Ok(RunOutput {
        table,
        results: json!({
            "n": data.len(),
            "epochs": trace.len(),
            "final": trace.last(),
        }),
        files: vec![("model.json".into(), model.to_json()? + "\n")],
    })
}

/// Loads a checkpoint and reports the W2 distance to a reference
/// submanifold (`reference`, as written by `generate`) and the Monte Carlo
/// ELBO on `data`; at least one of the two must be given.
pub fn run_evaluate(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let ckpt = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| HarnessError::Config("evaluate needs a checkpoint (--checkpoint)".into()))?;
    let text = std::fs::read_to_string(ckpt).map_err(io_err(ckpt))?;
    let model = RvaeModel::from_json(&text)?;
    if cfg.reference.is_none() && cfg.data.is_none() {
        return Err(HarnessError::Config("evaluate needs --reference and/or --data".into()));
    }
    let seeds = CellSeeds::new(cell_seed(cfg.seed, &[0]));
    let mut table = MetricsTable::new(&["metric", "value", "sd"]);
    let mut results = serde_json::Map::new();
    if let Some(rp) = &cfg.reference {
        let rt = std::fs::read_to_string(rp).map_err(io_err(rp))?;
        let reference: Submanifold = serde_json::from_str(&rt)?;
        let w2 = w2_between_submanifolds(
            &Submanifold::of_model(&model),
            &reference,
            cfg.w2.m,
            cfg.w2.repeats,
            cfg.w2.metric,
            seeds.w2,
        )?;
        table.push(vec!["w2".into(), w2.mean.into(), w2.sd.into()]);
        results.insert("w2".into(), serde_json::to_value(&w2)?);
    }
    if let Some(dp) = &cfg.data {
        let data = read_points(dp, &model.manifold)?;
        let mut stream = rng::stream(seeds.train);
        let (mut rec, mut reg) = (0.0, 0.0);
        for x in &data {
            let (a, b) = elbo_terms(&model, x, &mut stream, cfg.train.mc_samples)?;
            rec += a;
            reg += b;
        }
        let n = data.len() as f64;
        let (rec, reg) = (rec / n, reg / n);
        for (k, v) in [("elbo", rec + reg), ("rec", rec), ("reg", reg)] {
            table.push(vec![k.into(), v.into(), f64::NAN.into()]);
        }
        results.insert("elbo".into(), json!({ "elbo": rec + reg, "rec": rec, "reg": reg, "n": data.len() }));
    }
    Ok(RunOutput {
        table,
        results: serde_json::Value::Object(results),
        files: Vec::new(),
    })
}
