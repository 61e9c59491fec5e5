use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use rvae_harness::config::{parse_manifold, ExperimentConfig, ExperimentKind, OUTPUT_DIR_ENV};
use rvae_harness::experiments::run;

#[derive(Parser, Debug)]
#[command(name = "rvae", version = env!("RVAE_BUILD_ID"), about = "Riemannian VAEs: training, evaluation and studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a dataset from the configured true decoder.
    Generate(Common),
    /// Train an rVAE on a dataset CSV and write a checkpoint.
    Train(Common),
    /// Score a checkpoint against a reference submanifold and/or a dataset.
    Evaluate(Common),
    /// W2 of the learned submanifold against the truth over (manifold, n, noise).
    ConsistencyStudy(Common),
    /// tPGA, VAE, projected VAE and rVAE on the sphere workload.
    CompareMethods(Common),
    /// Latent-dimension sweep on SPD matrices.
    SpdStudy(Common),
    /// One-dimensional PPCA against the closed forms.
    #[command(name = "closed-form-1d")]
    ClosedForm1d(Common),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML config merged over the built-in defaults of the subcommand.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Output directory [default: config value, then $RVAE_OUTPUT_DIR, then ./rvae-output].
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Manifolds such as sphere:2, hyperbolic:2, euclidean:2, spd:15 (comma separated).
    #[arg(long, value_delimiter = ',')]
    manifold: Vec<String>,
    /// Sample sizes (comma separated).
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    /// Noise levels as log sigma^2 (comma separated).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    log_sigma2: Vec<f64>,
    /// Latent dimensions for the SPD study (comma separated).
    #[arg(long, value_delimiter = ',')]
    latent_dims: Vec<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Training runs per fit; the highest final ELBO wins.
    #[arg(long)]
    restarts: Option<usize>,
    /// Approximate optimizer steps per training run.
    #[arg(long)]
    steps: Option<usize>,
    /// Fixed epoch count (disables the step budget).
    #[arg(long, conflicts_with = "steps")]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Sample size of each exact W2 computation.
    #[arg(long)]
    m: Option<usize>,
    /// Independent W2 repeats.
    #[arg(long)]
    repeats: Option<usize>,
    /// Dataset CSV (train, evaluate) or connectome CSV (spd-study).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Reference submanifold JSON, as written by `generate`.
    #[arg(long)]
    reference: Option<PathBuf>,
}

impl Common {
    fn apply(&self, cfg: &mut ExperimentConfig) -> anyhow::Result<()> {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = &self.output_dir {
            cfg.output_dir = Some(d.clone());
        }
        if !self.manifold.is_empty() {
            cfg.manifolds = self.manifold.iter().map(|m| parse_manifold(m)).collect::<Result<_, _>>()?;
        }
        if !self.n.is_empty() {
            cfg.n_grid = self.n.clone();
        }
        if !self.log_sigma2.is_empty() {
            cfg.log_sigma2_grid = self.log_sigma2.clone();
        }
        if !self.latent_dims.is_empty() {
            cfg.latent_grid = self.latent_dims.clone();
        }
        if let Some(r) = self.replicates {
            cfg.replicates = r;
        }
        if let Some(r) = self.restarts {
            cfg.restarts = r;
        }
        if let Some(s) = self.steps {
            cfg.train_steps = Some(s);
        }
        if let Some(e) = self.epochs {
            cfg.train_steps = None;
            cfg.train.epochs = e;
        }
        if let Some(lr) = self.lr {
            cfg.train.learning_rate = lr;
        }
        if let Some(b) = self.batch_size {
            cfg.train.batch_size = b;
        }
        if let Some(m) = self.m {
            cfg.w2.m = m;
        }
        if let Some(r) = self.repeats {
            cfg.w2.repeats = r;
        }
        if let Some(d) = &self.data {
            if cfg.experiment == ExperimentKind::SpdStudy {
                cfg.spd.data = Some(d.clone());
            } else {
                cfg.data = Some(d.clone());
            }
        }
        if let Some(c) = &self.checkpoint {
            cfg.checkpoint = Some(c.clone());
        }
        if let Some(r) = &self.reference {
            cfg.reference = Some(r.clone());
        }
        Ok(())
    }
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let (kind, common) = match cli.command {
        Command::Generate(c) => (ExperimentKind::Generate, c),
        Command::Train(c) => (ExperimentKind::Train, c),
        Command::Evaluate(c) => (ExperimentKind::Evaluate, c),
        Command::ConsistencyStudy(c) => (ExperimentKind::ConsistencyStudy, c),
        Command::CompareMethods(c) => (ExperimentKind::CompareMethods, c),
        Command::SpdStudy(c) => (ExperimentKind::SpdStudy, c),
        Command::ClosedForm1d(c) => (ExperimentKind::ClosedForm1d, c),
    };
    let mut cfg = ExperimentConfig::load(kind, common.config.as_deref())
        .with_context(|| format!("loading configuration for {}", kind.name()))?;
    common.apply(&mut cfg)?;
    cfg.validate()?;
    let dir = cfg.resolved_output_dir();
    let out = run(&cfg, common.jobs).with_context(|| format!("running {}", kind.name()))?;
    out.write(&dir, &cfg)
        .with_context(|| format!("writing results to {} (see also ${OUTPUT_DIR_ENV})", dir.display()))?;
    eprintln!("{}: wrote {} rows to {}", kind.name(), out.table.rows.len(), dir.display());
    Ok(())
}
