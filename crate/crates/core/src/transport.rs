//! Weighted submanifolds as decoder pushforwards of `N(0, I_L)` and the exact
//! 2-Wasserstein distance between equal-size uniform samples.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::geometry::{ManifoldKind, ManifoldPoint};
use crate::model::{decode_batch_with, RvaeModel};
use crate::neuralnet::MlpNetwork;
use crate::rng;

/// Largest sample size accepted by the assignment solver.
pub const MAX_ASSIGNMENT: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum W2Metric {
    /// Geodesic distance of the manifold.
    Intrinsic,
    /// Euclidean distance between ambient coordinates.
    Extrinsic,
}

/// The map `z -> Exp(mu, P_mu f(z))`, optionally followed by a projection
/// onto another manifold (used for VAEs trained in ambient coordinates).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Submanifold {
    pub manifold: ManifoldKind,
    pub base_point: ManifoldPoint,
    pub decoder: MlpNetwork,
    pub project_to: Option<ManifoldKind>,
}

impl Submanifold {
    pub fn new(manifold: ManifoldKind, base_point: ManifoldPoint, decoder: MlpNetwork) -> Result<Self> {
        manifold.check_coords(&base_point.coords)?;
        check_len("decoder output", manifold.ambient_dim(), decoder.output_dim())?;
        Ok(Self {
            manifold,
            base_point,
            decoder,
            project_to: None,
        })
    }

    pub fn of_model(model: &RvaeModel) -> Self {
        Self {
            manifold: model.manifold,
            base_point: model.base_point.clone(),
            decoder: model.decoder.clone(),
            project_to: None,
        }
    }

    /// Decodes in the model's own (Euclidean) space, then projects onto `target`.
    pub fn projected(model: &RvaeModel, target: ManifoldKind) -> Result<Self> {
        check_len("projection target", model.manifold.ambient_dim(), target.ambient_dim())?;
        Ok(Self {
            project_to: Some(target),
            ..Self::of_model(model)
        })
    }

    /// The manifold the sampled points live on.
    pub fn target(&self) -> ManifoldKind {
        self.project_to.unwrap_or(self.manifold)
    }

    pub fn latent_dim(&self) -> usize {
        self.decoder.input_dim()
    }

    /// Pushes latent codes (row-major `count x L`) through the map.
    pub fn push_forward(&self, zs: &[f64], count: usize) -> Result<Vec<ManifoldPoint>> {
        let d = self.manifold.ambient_dim();
        let flat = decode_batch_with(&self.manifold, &self.base_point.coords, &self.decoder, zs, count)?;
        flat.chunks_exact(d)
            .map(|c| match self.project_to {
                Some(t) => t.project_to_manifold(c),
                None => Ok(ManifoldPoint::new_unchecked(c.to_vec())),
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedSubmanifoldSample {
    pub manifold: ManifoldKind,
    pub points: Vec<ManifoldPoint>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    /// `assignment[i]` is the index in `b` matched with `a[i]`.
    pub assignment: Vec<usize>,
    /// Mean squared distance of the matched pairs.
    pub cost: f64,
}

/// `m` i.i.d. draws `z ~ N(0, I_L)` from `stream(seed)` pushed through the
/// map, without observation noise.
pub fn sample_submanifold(sub: &Submanifold, m: usize, seed: u64) -> Result<WeightedSubmanifoldSample> {
    if m == 0 {
        return Err(Error::Validation("sample size must be positive".into()));
    }
    let mut zs = vec![0.0; m * sub.latent_dim()];
    rng::fill_normal(&mut rng::stream(seed), &mut zs);
    Ok(WeightedSubmanifoldSample {
        manifold: sub.target(),
        points: sub.push_forward(&zs, m)?,
        seed,
    })
}

/// Minimum-cost perfect matching on a dense row-major `m x m` cost matrix
/// (shortest augmenting paths with dual potentials, `O(m^3)`). The reported
/// cost is `sum_i c[i][pi(i)] / m`, accumulated in row order.
pub fn solve_assignment(cost: &[f64], m: usize) -> Result<TransportPlan> {
    check_len("cost matrix", m * m, cost.len())?;
    if m > MAX_ASSIGNMENT {
        return Err(Error::OverCap {
            got: m,
            cap: MAX_ASSIGNMENT,
        });
    }
    if let Some(c) = cost.iter().find(|c| !c.is_finite()) {
        return Err(Error::Domain(format!("non-finite transport cost {c}")));
    }
    // Columns and rows are 1-based below; index 0 is the virtual root.
    let n = m;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        minv.iter_mut().for_each(|x| *x = f64::INFINITY);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let row = &cost[(i0 - 1) * n..i0 * n];
            let ui0 = u[i0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = row[j - 1] - ui0 - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    Ok(TransportPlan {
        cost: assignment_cost(cost, n, &assignment),
        assignment,
    })
}

/// `sum_i c[i][perm[i]] / m` in row order.
pub fn assignment_cost(cost: &[f64], m: usize, perm: &[usize]) -> f64 {
    let mut s = 0.0;
    for (i, &j) in perm.iter().enumerate() {
        s += cost[i * m + j];
    }
    s / m as f64
}

/// Squared-distance cost matrix between two samples on `manifold`.
pub fn cost_matrix(
    manifold: &ManifoldKind,
    a: &[ManifoldPoint],
    b: &[ManifoldPoint],
    metric: W2Metric,
) -> Result<Vec<f64>> {
    cost_matrix_between(manifold, a, manifold, b, metric)
}

/// Cost matrix between samples on two manifolds. Intrinsic costs need the
/// same manifold; extrinsic costs need ambient representations of equal
/// length (e.g. `Sphere(2)` against `Euclidean(3)`).
pub fn cost_matrix_between(
    ma: &ManifoldKind,
    a: &[ManifoldPoint],
    mb: &ManifoldKind,
    b: &[ManifoldPoint],
    metric: W2Metric,
) -> Result<Vec<f64>> {
    for p in a {
        check_len("sample point", ma.ambient_dim(), p.coords.len())?;
    }
    for p in b {
        check_len("sample point", mb.ambient_dim(), p.coords.len())?;
    }
    let mut c = Vec::with_capacity(a.len() * b.len());
    match metric {
        W2Metric::Intrinsic => {
            if ma != mb {
                return Err(Error::Validation(format!(
                    "intrinsic distance between different manifolds: {} vs {}",
                    ma.name(),
                    mb.name()
                )));
            }
            for p in a {
                for q in b {
                    let dist = ma.distance_raw(&p.coords, &q.coords);
                    c.push(dist * dist);
                }
            }
        }
        W2Metric::Extrinsic => {
            let aa: Vec<Vec<f64>> = a.iter().map(|p| ma.ambient_coords(p)).collect();
            let bb: Vec<Vec<f64>> = b.iter().map(|p| mb.ambient_coords(p)).collect();
            if let (Some(x), Some(y)) = (aa.first(), bb.first()) {
                check_len("ambient representation", x.len(), y.len())?;
            }
            for p in &aa {
                for q in &bb {
                    c.push(p.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum());
                }
            }
        }
    }
    Ok(c)
}

pub fn exact_w2_plan(
    manifold: &ManifoldKind,
    a: &[ManifoldPoint],
    b: &[ManifoldPoint],
    metric: W2Metric,
) -> Result<TransportPlan> {
    exact_w2_plan_between(manifold, a, manifold, b, metric)
}

pub fn exact_w2_plan_between(
    ma: &ManifoldKind,
    a: &[ManifoldPoint],
    mb: &ManifoldKind,
    b: &[ManifoldPoint],
    metric: W2Metric,
) -> Result<TransportPlan> {
    check_len("second sample", a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::Validation("samples must be nonempty".into()));
    }
    if a.len() > MAX_ASSIGNMENT {
        return Err(Error::OverCap {
            got: a.len(),
            cap: MAX_ASSIGNMENT,
        });
    }
    let c = cost_matrix_between(ma, a, mb, b, metric)?;
    solve_assignment(&c, a.len())
}

/// Exact W2 between the uniform measures on two equal-size samples. Larger
/// samples must be subsampled to at most [`MAX_ASSIGNMENT`] points.
pub fn exact_w2(a: &WeightedSubmanifoldSample, b: &WeightedSubmanifoldSample, metric: W2Metric) -> Result<f64> {
    let plan = exact_w2_plan_between(&a.manifold, &a.points, &b.manifold, &b.points, metric)?;
    Ok(plan.cost.max(0.0).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct W2Estimate {
    pub mean: f64,
    pub sd: f64,
    pub values: Vec<f64>,
}

impl W2Estimate {
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, sd, values }
    }
}

/// Monte Carlo W2 between two weighted submanifolds. Repeat `r` draws `m`
/// latent codes from `stream(split(seed, r))` as an antithetic set
/// (`z` and `-z` both present) and pushes the same codes through both maps;
/// maps with different latent dimensions get separate streams
/// (`split(seed, 2r)` and `split(seed, 2r + 1)`). Intrinsic distances need
/// both maps to land on the same manifold.
pub fn w2_between_submanifolds(
    a: &Submanifold,
    b: &Submanifold,
    m: usize,
    repeats: usize,
    metric: W2Metric,
    seed: u64,
) -> Result<W2Estimate> {
    if repeats == 0 || m == 0 {
        return Err(Error::Validation("m and repeats must be positive".into()));
    }
    let (ta, tb) = (a.target(), b.target());
    let mut values = Vec::with_capacity(repeats);
    for r in 0..repeats as u64 {
        let (za, zb) = if a.latent_dim() == b.latent_dim() {
            let z = rng::antithetic_normals(&mut rng::stream(rng::split(seed, r)), m, a.latent_dim());
            (z.clone(), z)
        } else {
            (
                rng::antithetic_normals(&mut rng::stream(rng::split(seed, 2 * r)), m, a.latent_dim()),
                rng::antithetic_normals(&mut rng::stream(rng::split(seed, 2 * r + 1)), m, b.latent_dim()),
            )
        };
        let pa = a.push_forward(&za, m)?;
        let pb = b.push_forward(&zb, m)?;
        values.push(exact_w2_plan_between(&ta, &pa, &tb, &pb, metric)?.cost.max(0.0).sqrt());
    }
    Ok(W2Estimate::from_values(values))
}
