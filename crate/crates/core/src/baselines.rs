//! Fréchet mean, PCA, tangent PGA, the projected VAE and latent
//! explained-variance curves.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::geometry::{ManifoldKind, ManifoldPoint};
use crate::model::{train, Architecture, RvaeModel, TrainConfig, TrainTrace};
use crate::neuralnet::MlpNetwork;
use crate::transport::Submanifold;

pub const FRECHET_TOL: f64 = 1e-10;
pub const FRECHET_MAX_ITER: usize = 200;

/// Karcher iteration `x <- Exp(x, mean_i Log(x, x_i))` with unit step,
/// stopping once the update norm drops below `tol`. Sphere data should lie in
/// an open hemisphere for the mean to be unique. Curved manifolds start from
/// the projected ambient average, flat ones from the first point.
pub fn frechet_mean(manifold: &ManifoldKind, data: &[ManifoldPoint], tol: f64, max_iter: usize) -> Result<ManifoldPoint> {
    let first = data
        .first()
        .ok_or_else(|| Error::Validation("Fréchet mean of an empty set".into()))?;
    let d = manifold.ambient_dim();
    for p in data {
        check_len("data point", d, p.coords.len())?;
    }
    let mut x = first.coords.clone();
    if !manifold.is_flat() {
        let mut avg = vec![0.0; d];
        for p in data {
            avg.iter_mut().zip(&p.coords).for_each(|(a, c)| *a += c);
        }
        if let Ok(p) = manifold.project_to_manifold(&avg) {
            x = p.coords;
        }
    }
    let mut g = vec![0.0; d];
    let mut l = vec![0.0; d];
    let mut next = vec![0.0; d];
    let mut last_step = f64::INFINITY;
    for _ in 0..max_iter {
        g.iter_mut().for_each(|v| *v = 0.0);
        for p in data {
            manifold.log_raw(&x, &p.coords, &mut l)?;
            g.iter_mut().zip(&l).for_each(|(a, b)| *a += b);
        }
        let inv = 1.0 / data.len() as f64;
        g.iter_mut().for_each(|v| *v *= inv);
        last_step = manifold.tangent_norm(&g);
        manifold.exp_raw(&x, &g, &mut next);
        std::mem::swap(&mut x, &mut next);
        if last_step < tol {
            return Ok(ManifoldPoint::new_unchecked(x));
        }
    }
    Err(Error::NonConvergence {
        what: "Fréchet mean",
        iterations: max_iter,
        last_step,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaResult {
    pub mean: Vec<f64>,
    /// Top components, orthonormal, sorted by decreasing eigenvalue.
    pub components: Vec<Vec<f64>>,
    /// Full spectrum of the sample covariance, decreasing, clamped at 0.
    pub eigenvalues: Vec<f64>,
    /// Cumulative explained-variance ratios over the full spectrum.
    pub cumulative_ratios: Vec<f64>,
    /// Set when the total variance is zero (ratios are then all zero).
    pub degenerate: bool,
}

impl PcaResult {
    /// Coordinates of `x` along the retained components.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(x).zip(&self.mean).map(|((c, x), m)| c * (x - m)).sum())
            .collect()
    }

    pub fn reconstruct(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, a) in self.components.iter().zip(self.project(x)) {
            out.iter_mut().zip(c).for_each(|(o, c)| *o += a * c);
        }
        out
    }
}

fn cumulative(eigenvalues: &[f64]) -> (Vec<f64>, bool) {
    let total: f64 = eigenvalues.iter().sum();
    if !(total > 0.0) {
        return (vec![0.0; eigenvalues.len()], true);
    }
    let mut acc = 0.0;
    let mut out: Vec<f64> = eigenvalues
        .iter()
        .map(|e| {
            acc += e;
            (acc / total).min(1.0)
        })
        .collect();
    if let Some(last) = out.last_mut() {
        *last = 1.0;
    }
    (out, false)
}

/// PCA of `n` row-major vectors of length `dim` (covariance normalized by
/// `n - 1`), keeping the top `l` components.
pub fn pca_fit(data: &[f64], dim: usize, l: usize) -> Result<PcaResult> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::Validation(format!("{} values do not form rows of length {dim}", data.len())));
    }
    let n = data.len() / dim;
    if n < 2 {
        return Err(Error::Validation("PCA needs at least two points".into()));
    }
    if l > dim {
        return Err(Error::Validation(format!("cannot keep {l} components of a {dim}-dimensional space")));
    }
    let mut mean = vec![0.0; dim];
    for row in data.chunks_exact(dim) {
        mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, dim, |i, j| data[i * dim + j] - mean[j]);
    let cov = (centered.transpose() * &centered) / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let components = order[..l]
        .iter()
        .map(|&i| {
            let mut c: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            // Sign convention: largest-magnitude entry positive.
            let k = (0..dim).max_by(|&a, &b| c[a].abs().total_cmp(&c[b].abs())).unwrap_or(0);
            if c[k] < 0.0 {
                c.iter_mut().for_each(|v| *v = -*v);
            }
            c
        })
        .collect();
    let (cumulative_ratios, degenerate) = cumulative(&eigenvalues);
    Ok(PcaResult {
        mean,
        components,
        eigenvalues,
        cumulative_ratios,
        degenerate,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PgaResult {
    pub frechet_mean: ManifoldPoint,
    /// Top principal directions as ambient tangent vectors at the mean,
    /// orthonormal in the metric there.
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub cumulative_ratios: Vec<f64>,
    pub degenerate: bool,
}

impl PgaResult {
    /// `Exp(mean, sum_k <Log(mean, x), v_k> v_k)`.
    pub fn reconstruct(&self, manifold: &ManifoldKind, x: &ManifoldPoint) -> Result<ManifoldPoint> {
        let base = &self.frechet_mean.coords;
        let d = manifold.ambient_dim();
        let mut l = vec![0.0; d];
        manifold.log_raw(base, &x.coords, &mut l)?;
        let mut v = vec![0.0; d];
        for c in &self.components {
            let a = manifold.inner(c, &l);
            v.iter_mut().zip(c).for_each(|(v, c)| *v += a * c);
        }
        let mut out = vec![0.0; d];
        manifold.exp_raw(base, &v, &mut out);
        Ok(ManifoldPoint::new_unchecked(out))
    }

    /// The generative geodesic model `z -> Exp(mean, sum_k sqrt(lambda_k) z_k v_k)`
    /// over the retained components.
    pub fn generative_submanifold(&self, manifold: &ManifoldKind) -> Result<Submanifold> {
        let d = manifold.ambient_dim();
        let l = self.components.len();
        let mut w = vec![0.0; d * l];
        for (k, c) in self.components.iter().enumerate() {
            let s = self.eigenvalues[k].sqrt();
            for i in 0..d {
                w[i * l + k] = s * c[i];
            }
        }
        Submanifold::new(*manifold, self.frechet_mean.clone(), MlpNetwork::linear(&w, &vec![0.0; d])?)
    }
}

/// Tangent PCA: PCA of the log-mapped data at the Fréchet mean, expressed in
/// an orthonormal basis of the tangent space there.
pub fn tangent_pga_fit(manifold: &ManifoldKind, data: &[ManifoldPoint], l: usize) -> Result<PgaResult> {
    let mean = frechet_mean(manifold, data, FRECHET_TOL, FRECHET_MAX_ITER)?;
    let basis = manifold.tangent_basis(&mean.coords);
    let k = basis.len();
    let d = manifold.ambient_dim();
    let mut coords = Vec::with_capacity(data.len() * k);
    let mut lg = vec![0.0; d];
    for p in data {
        manifold.log_raw(&mean.coords, &p.coords, &mut lg)?;
        coords.extend(basis.iter().map(|b| manifold.inner(b, &lg)));
    }
    let pca = pca_fit(&coords, k, l)?;
    let components = pca
        .components
        .iter()
        .map(|c| {
            let mut v = vec![0.0; d];
            for (a, b) in c.iter().zip(&basis) {
                v.iter_mut().zip(b).for_each(|(v, b)| *v += a * b);
            }
            v
        })
        .collect();
    Ok(PgaResult {
        frechet_mean: mean,
        components,
        eigenvalues: pca.eigenvalues,
        cumulative_ratios: pca.cumulative_ratios,
        degenerate: pca.degenerate,
    })
}

/// Ambient (extrinsic) representation of manifold data as Euclidean points.
pub fn to_ambient(manifold: &ManifoldKind, data: &[ManifoldPoint]) -> (ManifoldKind, Vec<ManifoldPoint>) {
    let pts: Vec<ManifoldPoint> = data
        .iter()
        .map(|p| ManifoldPoint::new_unchecked(manifold.ambient_coords(p)))
        .collect();
    let dim = pts.first().map_or(manifold.ambient_dim(), |p| p.coords.len());
    (ManifoldKind::Euclidean(dim), pts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectedVae {
    /// Euclidean VAE on the ambient representation.
    pub model: RvaeModel,
    /// Its decoder followed by projection onto the data manifold.
    pub submanifold: Submanifold,
    pub trace: TrainTrace,
}

/// Trains a Euclidean VAE on the ambient coordinates of the data (base point
/// at their arithmetic mean); projection onto the manifold happens only when
/// decoding through `submanifold`.
pub fn train_projected_vae(
    manifold: &ManifoldKind,
    data: &[ManifoldPoint],
    arch: &Architecture,
    noise_sigma: f64,
    cfg: &TrainConfig,
    init_seed: u64,
) -> Result<ProjectedVae> {
    let (euclid, pts) = to_ambient(manifold, data);
    let base = frechet_mean(&euclid, &pts, FRECHET_TOL, FRECHET_MAX_ITER)?;
    let model = RvaeModel::init(euclid, base, arch, noise_sigma, init_seed)?;
    let (model, trace) = train(model, &pts, cfg)?;
    let submanifold = Submanifold::projected(&model, *manifold)?;
    Ok(ProjectedVae {
        model,
        submanifold,
        trace,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentVariance {
    pub cumulative_ratios: Vec<f64>,
    pub degenerate: bool,
}

/// Cumulative variance ratios of the encoder means over the data.
pub fn latent_explained_variance(model: &RvaeModel, data: &[ManifoldPoint]) -> Result<LatentVariance> {
    let means = model.encode_means(data)?;
    let pca = pca_fit(&means, model.latent_dim, 0)?;
    Ok(LatentVariance {
        cumulative_ratios: pca.cumulative_ratios,
        degenerate: pca.degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::random_point;
    use crate::neuralnet::Activation;
    use crate::rng::{self, fill_normal};

    #[test]
    fn frechet_mean_examples() {
        let e = ManifoldKind::Euclidean(3);
        let mut rng = rng::stream(1);
        let data: Vec<_> = (0..50).map(|_| random_point(&e, &mut rng, 2.0)).collect();
        let fm = frechet_mean(&e, &data, FRECHET_TOL, FRECHET_MAX_ITER).unwrap();
        for j in 0..3 {
            let am = data.iter().map(|p| p.coords[j]).sum::<f64>() / 50.0;
            assert!((fm.coords[j] - am).abs() <= 1e-12);
        }
        let s = ManifoldKind::Sphere(2);
        let p = random_point(&s, &mut rng, 0.5);
        assert_eq!(frechet_mean(&s, &[p.clone()], FRECHET_TOL, FRECHET_MAX_ITER).unwrap().coords.len(), 3);
        let one = frechet_mean(&s, &[p.clone()], FRECHET_TOL, FRECHET_MAX_ITER).unwrap();
        assert!(s.distance_raw(&one.coords, &p.coords) < 1e-12);
        let q = random_point(&s, &mut rng, 0.5);
        let mid = frechet_mean(&s, &[p.clone(), q.clone()], FRECHET_TOL, FRECHET_MAX_ITER).unwrap();
        let (a, b) = (s.distance_raw(&mid.coords, &p.coords), s.distance_raw(&mid.coords, &q.coords));
        assert!((a - b).abs() < 1e-8);
        assert!((a + b - s.distance_raw(&p.coords, &q.coords)).abs() < 1e-8);
    }

    #[test]
    fn frechet_mean_reports_nonconvergence() {
        let s = ManifoldKind::Sphere(2);
        let mut rng = rng::stream(2);
        let data: Vec<_> = (0..20).map(|_| random_point(&s, &mut rng, 1.0)).collect();
        let r = frechet_mean(&s, &data, 1e-30, 2);
        assert!(matches!(r, Err(Error::NonConvergence { iterations: 2, .. })));
    }

    #[test]
    fn pca_examples() {
        let line: Vec<f64> = (0..20).flat_map(|i| [i as f64, 0.0]).collect();
        let r = pca_fit(&line, 2, 2).unwrap();
        assert!((r.cumulative_ratios[0] - 1.0).abs() < 1e-12);

        let mut rng = rng::stream(3);
        let mut iso = vec![0.0; 20_000];
        fill_normal(&mut rng, &mut iso);
        let r = pca_fit(&iso, 2, 2).unwrap();
        assert!((r.cumulative_ratios[0] - 0.5).abs() < 0.03);
        assert_eq!(r.cumulative_ratios[1], 1.0);
        for row in iso.chunks(2).take(20) {
            let back = r.reconstruct(row);
            assert!((back[0] - row[0]).abs() < 1e-12 && (back[1] - row[1]).abs() < 1e-12);
        }
        let c = &r.components;
        assert!((c[0][0] * c[1][0] + c[0][1] * c[1][1]).abs() < 1e-9);

        let constant = vec![1.0; 10];
        let r = pca_fit(&constant, 2, 1).unwrap();
        assert!(r.degenerate);
        assert!(r.cumulative_ratios.iter().all(|&v| v == 0.0));
        assert!(pca_fit(&[1.0, 2.0], 2, 1).is_err());
    }

    #[test]
    fn ratios_monotone_in_unit_interval() {
        let mut rng = rng::stream(4);
        let mut x = vec![0.0; 500];
        fill_normal(&mut rng, &mut x);
        for (i, v) in x.iter_mut().enumerate() {
            *v *= 1.0 + (i % 5) as f64;
        }
        let r = pca_fit(&x, 5, 3).unwrap();
        assert!(r.cumulative_ratios.windows(2).all(|w| w[0] <= w[1]));
        assert!(r.cumulative_ratios.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!((r.cumulative_ratios[4] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn tangent_pga_on_euclidean_is_pca() {
        let e = ManifoldKind::Euclidean(3);
        let mut rng = rng::stream(5);
        let data: Vec<_> = (0..100).map(|_| random_point(&e, &mut rng, 1.5)).collect();
        let flat: Vec<f64> = data.iter().flat_map(|p| p.coords.clone()).collect();
        let pga = tangent_pga_fit(&e, &data, 2).unwrap();
        let pca = pca_fit(&flat, 3, 2).unwrap();
        for (a, b) in pga.eigenvalues.iter().zip(&pca.eigenvalues) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        for (a, b) in pga.components.iter().zip(&pca.components) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-12, "{x} {y}");
            }
        }
    }

    #[test]
    fn tangent_pga_on_great_circle_arc() {
        let s = ManifoldKind::Sphere(2);
        let data: Vec<_> = (0..40)
            .map(|i| {
                let t = -0.8 + 1.6 * i as f64 / 39.0;
                ManifoldPoint::new_unchecked(vec![t.sin(), 0.0, t.cos()])
            })
            .collect();
        let pga = tangent_pga_fit(&s, &data, 1).unwrap();
        assert!((pga.cumulative_ratios[0] - 1.0).abs() < 1e-6);
        let c = &pga.components[0];
        assert!(c[0].abs() > 1.0 - 1e-9);
        let x = pga.reconstruct(&s, &data[3]).unwrap();
        assert!(s.distance_raw(&x.coords, &data[3].coords) < 1e-9);
    }

    #[test]
    fn tangent_pga_on_spd_is_pca_of_log_coordinates() {
        let m = ManifoldKind::SpdLogEuclidean(3);
        let mut rng = rng::stream(6);
        let data: Vec<_> = (0..60).map(|_| random_point(&m, &mut rng, 0.7)).collect();
        let flat: Vec<f64> = data.iter().flat_map(|p| p.coords.clone()).collect();
        let pga = tangent_pga_fit(&m, &data, 6).unwrap();
        let pca = pca_fit(&flat, 6, 6).unwrap();
        for (a, b) in pga.cumulative_ratios.iter().zip(&pca.cumulative_ratios) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn projected_vae_decodes_onto_sphere() {
        let s = ManifoldKind::Sphere(2);
        let mut rng = rng::stream(7);
        let data: Vec<_> = (0..64).map(|_| random_point(&s, &mut rng, 0.4)).collect();
        let arch = Architecture {
            latent_dim: 1,
            decoder_hidden: vec![2],
            encoder_hidden: vec![2],
            activation: Activation::Softplus,
        };
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let p = train_projected_vae(&s, &data, &arch, 0.1, &cfg, 1).unwrap();
        let sample = crate::transport::sample_submanifold(&p.submanifold, 50, 2).unwrap();
        for x in &sample.points {
            let n: f64 = x.coords.iter().map(|c| c * c).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn projected_vae_on_euclidean_is_plain_vae() {
        let e = ManifoldKind::Euclidean(2);
        let mut rng = rng::stream(8);
        let data: Vec<_> = (0..32).map(|_| random_point(&e, &mut rng, 1.0)).collect();
        let arch = Architecture {
            latent_dim: 1,
            decoder_hidden: vec![3],
            encoder_hidden: vec![3],
            activation: Activation::Softplus,
        };
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let p = train_projected_vae(&e, &data, &arch, 0.5, &cfg, 3).unwrap();
        let base = frechet_mean(&e, &data, FRECHET_TOL, FRECHET_MAX_ITER).unwrap();
        let plain = train(RvaeModel::init(e, base, &arch, 0.5, 3).unwrap(), &data, &cfg).unwrap().0;
        assert_eq!(p.model, plain);
        let z = [0.4];
        assert_eq!(
            p.submanifold.push_forward(&z, 1).unwrap()[0],
            plain.decode(&z).unwrap()
        );
    }

    #[test]
    fn latent_variance_examples() {
        let e = ManifoldKind::Euclidean(2);
        let mut rng = rng::stream(9);
        let data: Vec<_> = (0..30).map(|_| random_point(&e, &mut rng, 1.0)).collect();
        let arch = |l| Architecture {
            latent_dim: l,
            decoder_hidden: vec![],
            encoder_hidden: vec![],
            activation: Activation::Identity,
        };
        let m1 = RvaeModel::init(e, e.origin(), &arch(1), 1.0, 1).unwrap();
        assert_eq!(latent_explained_variance(&m1, &data).unwrap().cumulative_ratios, vec![1.0]);
        let mut m3 = RvaeModel::init(e, e.origin(), &arch(3), 1.0, 1).unwrap();
        m3.encoder_mean.params_mut().iter_mut().for_each(|p| *p = 0.0);
        let lv = latent_explained_variance(&m3, &data).unwrap();
        assert!(lv.degenerate);
        assert_eq!(lv.cumulative_ratios, vec![0.0; 3]);
    }
}
