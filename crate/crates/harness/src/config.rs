//! Experiment configuration: built-in defaults per experiment kind, deep-merged
//! with an optional TOML file, then with command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rvae::model::{Architecture, TrainConfig};
use rvae::neuralnet::{Activation, MlpNetwork};
use rvae::transport::{Submanifold, W2Metric};
use rvae::ManifoldKind;

use crate::error::{io_err, HarnessError, Result};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "RVAE_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "rvae-output";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExperimentKind {
    #[serde(rename = "generate")]
    Generate,
    #[serde(rename = "train")]
    Train,
    #[serde(rename = "evaluate")]
    Evaluate,
    #[serde(rename = "consistency-study")]
    ConsistencyStudy,
    #[serde(rename = "compare-methods")]
    CompareMethods,
    #[serde(rename = "spd-study")]
    SpdStudy,
    #[serde(rename = "closed-form-1d")]
    ClosedForm1d,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Generate => "generate",
            ExperimentKind::Train => "train",
            ExperimentKind::Evaluate => "evaluate",
            ExperimentKind::ConsistencyStudy => "consistency-study",
            ExperimentKind::CompareMethods => "compare-methods",
            ExperimentKind::SpdStudy => "spd-study",
            ExperimentKind::ClosedForm1d => "closed-form-1d",
        }
    }
}

/// The data-generating decoder `z -> Exp(origin, f(z))`. With `params` the
/// weights are given explicitly (flat, layer-major); otherwise they are
/// Glorot-initialized from `init_seed`, the hidden layers are multiplied by
/// `gain` (sharper bends) and the output layer by `scale` (longer curve).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthSpec {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub init_seed: u64,
    pub gain: f64,
    pub scale: f64,
    pub params: Option<Vec<f64>>,
}

impl Default for TruthSpec {
    fn default() -> Self {
        Self {
            latent_dim: 1,
            hidden: vec![3, 3],
            activation: Activation::Softplus,
            init_seed: 1,
            gain: 1.0,
            scale: 1.0,
            params: None,
        }
    }
}

impl TruthSpec {
    pub fn layer_dims(&self, manifold: &ManifoldKind) -> Vec<usize> {
        let mut d = vec![self.latent_dim];
        d.extend(&self.hidden);
        d.push(manifold.ambient_dim());
        d
    }

    pub fn decoder(&self, manifold: &ManifoldKind) -> Result<MlpNetwork> {
        let dims = self.layer_dims(manifold);
        if let Some(p) = &self.params {
            return Ok(MlpNetwork::from_params(&dims, self.activation, self.init_seed, p.clone())?);
        }
        let mut net = MlpNetwork::init_params(&dims, self.activation, self.init_seed)?;
        let last = dims.len() - 2;
        let n = dims[last] * dims[last + 1] + dims[last + 1];
        let len = net.param_count();
        let (hidden, out) = net.params_mut().split_at_mut(len - n);
        hidden.iter_mut().for_each(|p| *p *= self.gain);
        out.iter_mut().for_each(|p| *p *= self.scale);
        Ok(net)
    }

    pub fn submanifold(&self, manifold: &ManifoldKind) -> Result<Submanifold> {
        Ok(Submanifold::new(*manifold, manifold.origin(), self.decoder(manifold)?)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct W2Spec {
    pub m: usize,
    pub repeats: usize,
    pub metric: W2Metric,
}

impl Default for W2Spec {
    fn default() -> Self {
        Self {
            m: 512,
            repeats: 4,
            metric: W2Metric::Intrinsic,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClosedFormSpec {
    pub w_star: f64,
    pub grid_resolution: usize,
    /// `[lo, hi, count]` of the exported landscape axes.
    pub landscape_w: (f64, f64, usize),
    pub landscape_phi: (f64, f64, usize),
}

impl Default for ClosedFormSpec {
    fn default() -> Self {
        Self {
            w_star: 2.0,
            grid_resolution: rvae::analytic1d::DEFAULT_GRID,
            landscape_w: (0.1, 3.0, 59),
            landscape_phi: (0.0, 1.0, 51),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpdSpec {
    /// Matrix side `N`; the manifold is `SPD(N)` with `N(N+1)/2` coordinates.
    pub matrix_size: usize,
    /// Connectome CSV; a synthetic dataset is generated when absent.
    pub data: Option<PathBuf>,
    pub n: usize,
    pub true_latent_dim: usize,
    pub log_sigma2: f64,
    pub truth_seed: u64,
    pub truth_scale: f64,
}

impl Default for SpdSpec {
    fn default() -> Self {
        Self {
            matrix_size: 15,
            data: None,
            n: 10_000,
            true_latent_dim: 5,
            log_sigma2: -10.0,
            truth_seed: 5,
            truth_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    /// Not part of the config hash.
    pub output_dir: Option<PathBuf>,
    pub manifolds: Vec<ManifoldKind>,
    pub architecture: Architecture,
    pub truth: TruthSpec,
    pub n_grid: Vec<usize>,
    pub log_sigma2_grid: Vec<f64>,
    pub latent_grid: Vec<usize>,
    pub replicates: usize,
    pub train: TrainConfig,
    /// When set, epochs are chosen per cell so that training takes about
    /// this many optimizer steps.
    pub train_steps: Option<usize>,
    /// Training runs per fit from different initializations; the one with
    /// the highest final ELBO is kept.
    pub restarts: usize,
    pub w2: W2Spec,
    pub closed_form: ClosedFormSpec,
    pub spd: SpdSpec,
    /// Dataset CSV for `train` and `evaluate`.
    pub data: Option<PathBuf>,
    /// Model checkpoint for `evaluate`.
    pub checkpoint: Option<PathBuf>,
    /// Reference submanifold JSON for `evaluate`.
    pub reference: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::defaults_for(ExperimentKind::ConsistencyStudy)
    }
}

fn arch(latent_dim: usize, dec: &[usize], enc: &[usize], activation: Activation) -> Architecture {
    Architecture {
        latent_dim,
        decoder_hidden: dec.to_vec(),
        encoder_hidden: enc.to_vec(),
        activation,
    }
}

/// Output-layer parameters of the default method-comparison decoder
/// `[1, 2, 3]`: hidden units `softplus(2z)` and `softplus(-2z)` feeding two
/// tangent directions at the north pole, so the decoded curve is a pair of
/// geodesic arcs meeting at an angle.
fn v_curve_params() -> Vec<f64> {
    let a = [0.5, 0.6, 0.0];
    let b = [-0.5, 0.6, 0.0];
    let ln2 = std::f64::consts::LN_2;
    let mut p = vec![2.0, -2.0, 0.0, 0.0];
    for i in 0..3 {
        p.push(a[i] / 2.0);
        p.push(b[i] / 2.0);
    }
    for i in 0..3 {
        p.push(-ln2 * (a[i] + b[i]) / 2.0);
    }
    p
}

impl ExperimentConfig {
    pub fn defaults_for(kind: ExperimentKind) -> Self {
        let base = Self {
            experiment: kind,
            seed: 0,
            output_dir: None,
            manifolds: vec![ManifoldKind::Sphere(2)],
            architecture: arch(1, &[3, 3], &[16, 16], Activation::Softplus),
            truth: TruthSpec::default(),
            n_grid: vec![2000],
            log_sigma2_grid: vec![-4.0],
            latent_grid: vec![10, 20],
            replicates: 1,
            train: TrainConfig {
                epochs: 100,
                learning_rate: 3e-3,
                final_lr_fraction: 0.05,
                ..TrainConfig::default()
            },
            train_steps: Some(6000),
            restarts: 1,
            w2: W2Spec::default(),
            closed_form: ClosedFormSpec::default(),
            spd: SpdSpec::default(),
            data: None,
            checkpoint: None,
            reference: None,
        };
        match kind {
            ExperimentKind::ConsistencyStudy => Self {
                manifolds: vec![
                    ManifoldKind::Euclidean(2),
                    ManifoldKind::Sphere(2),
                    ManifoldKind::Hyperbolic(2),
                ],
                truth: TruthSpec {
                    scale: 0.3,
                    ..TruthSpec::default()
                },
                n_grid: vec![500, 2000],
                log_sigma2_grid: vec![-6.0, -5.0, -4.0, -3.0, -2.0],
                restarts: 3,
                replicates: 3,
                ..base
            },
            ExperimentKind::CompareMethods => Self {
                architecture: arch(1, &[2], &[16, 16], Activation::Softplus),
                truth: TruthSpec {
                    hidden: vec![2],
                    params: Some(v_curve_params()),
                    ..TruthSpec::default()
                },
                n_grid: vec![2000],
                log_sigma2_grid: vec![-10.0, -2.0, -1.0, 0.0],
                replicates: 3,
                restarts: 5,
                train_steps: Some(20_000),
                w2: W2Spec {
                    metric: W2Metric::Extrinsic,
                    ..W2Spec::default()
                },
                ..base
            },
            ExperimentKind::SpdStudy => Self {
                manifolds: vec![ManifoldKind::SpdLogEuclidean(15)],
                architecture: arch(20, &[400], &[400], Activation::Relu),
                latent_grid: vec![10, 20],
                train: TrainConfig {
                    learning_rate: 1e-3,
                    ..base.train.clone()
                },
                train_steps: Some(3000),
                restarts: 5,
                ..base
            },
            ExperimentKind::ClosedForm1d => Self {
                manifolds: vec![ManifoldKind::Euclidean(1)],
                architecture: arch(1, &[], &[], Activation::Identity),
                truth: TruthSpec {
                    hidden: vec![],
                    activation: Activation::Identity,
                    params: Some(vec![2.0, 0.0]),
                    ..TruthSpec::default()
                },
                n_grid: vec![1000, 10_000, 100_000],
                log_sigma2_grid: vec![0.0],
                train: TrainConfig {
                    learning_rate: 1e-2,
                    final_lr_fraction: 0.01,
                    freeze_encoder_std: true,
                    ..base.train.clone()
                },
                train_steps: Some(20_000),
                w2: W2Spec {
                    m: 2048,
                    repeats: 1,
                    metric: W2Metric::Intrinsic,
                },
                ..base
            },
            ExperimentKind::Generate | ExperimentKind::Train | ExperimentKind::Evaluate => base,
        }
    }

    /// Defaults for `kind`, deep-merged with the TOML document `text`.
    pub fn from_toml_str(kind: ExperimentKind, text: &str) -> Result<Self> {
        let file: toml::Table = text.parse().map_err(|e| HarnessError::Config(format!("{e}")))?;
        if let Some(k) = file.get("experiment") {
            if k.as_str() != Some(kind.name()) {
                return Err(HarnessError::Config(format!(
                    "config is for experiment {k}, but {} was requested",
                    kind.name()
                )));
            }
        }
        let defaults = toml::Table::try_from(Self::defaults_for(kind)).map_err(|e| HarnessError::Config(e.to_string()))?;
        let merged = merge(toml::Value::Table(defaults), toml::Value::Table(file));
        let cfg: Self = merged.try_into().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(kind: ExperimentKind, path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(io_err(p))?;
                Self::from_toml_str(kind, &text)
            }
            None => Ok(Self::defaults_for(kind)),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.manifolds.is_empty() {
            return bad("manifolds must be nonempty".into());
        }
        if self.n_grid.is_empty() || self.n_grid.contains(&0) {
            return bad("n_grid must be nonempty with positive sizes".into());
        }
        if self.log_sigma2_grid.is_empty() || self.log_sigma2_grid.iter().any(|s| !s.is_finite()) {
            return bad("log_sigma2_grid must be nonempty and finite".into());
        }
        if self.experiment == ExperimentKind::SpdStudy && (self.latent_grid.is_empty() || self.latent_grid.contains(&0)) {
            return bad("latent_grid must be nonempty with positive dimensions".into());
        }
        if self.restarts == 0 {
            return bad("restarts must be at least 1".into());
        }
        if self.replicates == 0 || self.w2.m == 0 || self.w2.repeats == 0 {
            return bad("replicates, w2.m and w2.repeats must be positive".into());
        }
        if self.w2.m > rvae::transport::MAX_ASSIGNMENT {
            return bad(format!(
                "w2.m = {} exceeds the exact solver cap {}",
                self.w2.m,
                rvae::transport::MAX_ASSIGNMENT
            ));
        }
        if self.architecture.latent_dim == 0 || self.truth.latent_dim == 0 {
            return bad("latent dimensions must be positive".into());
        }
        for m in &self.manifolds {
            if let Some(p) = &self.truth.params {
                let dims = self.truth.layer_dims(m);
                let need: usize = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
                if p.len() != need {
                    return bad(format!(
                        "truth.params has {} values, layers {dims:?} need {need}",
                        p.len()
                    ));
                }
            }
        }
        self.train.validate().map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Epoch count for a training set of size `n`.
    pub fn epochs_for(&self, n: usize) -> usize {
        match self.train_steps {
            Some(steps) => {
                let per_epoch = n.div_ceil(self.train.batch_size).max(1);
                steps.div_ceil(per_epoch).max(1)
            }
            None => self.train.epochs,
        }
    }

    pub fn train_for(&self, n: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs_for(n),
            seed,
            ..self.train.clone()
        }
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form, with
    /// the output directory left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn resolved_output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }
}

fn merge(base: toml::Value, over: toml::Value) -> toml::Value {
    match (base, over) {
        (toml::Value::Table(mut b), toml::Value::Table(o)) => {
            for (k, v) in o {
                let merged = match b.remove(&k) {
                    Some(old) => merge(old, v),
                    None => v,
                };
                b.insert(k, merged);
            }
            toml::Value::Table(b)
        }
        (_, o) => o,
    }
}

/// Parses `euclidean:2`, `sphere:2`, `hyperbolic:2` or `spd:15`.
pub fn parse_manifold(s: &str) -> Result<ManifoldKind> {
    let (kind, dim) = s
        .split_once(':')
        .ok_or_else(|| HarnessError::Config(format!("manifold `{s}` should look like sphere:2")))?;
    let dim: usize = dim
        .trim()
        .parse()
        .map_err(|_| HarnessError::Config(format!("bad manifold dimension in `{s}`")))?;
    if dim == 0 {
        return Err(HarnessError::Config(format!("manifold dimension must be positive in `{s}`")));
    }
    match kind.trim() {
        "euclidean" => Ok(ManifoldKind::Euclidean(dim)),
        "sphere" => Ok(ManifoldKind::Sphere(dim)),
        "hyperbolic" => Ok(ManifoldKind::Hyperbolic(dim)),
        "spd" | "spd_log_euclidean" => Ok(ManifoldKind::SpdLogEuclidean(dim)),
        other => Err(HarnessError::Config(format!("unknown manifold kind `{other}`"))),
    }
}
