use std::f64::consts::{FRAC_PI_2, PI};

use super::*;
use crate::rng::stream;

const ALL: [ManifoldKind; 4] = [
    ManifoldKind::Euclidean(3),
    ManifoldKind::Sphere(2),
    ManifoldKind::Hyperbolic(2),
    ManifoldKind::SpdLogEuclidean(3),
];

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn sphere_quarter_circle() {
    let m = ManifoldKind::Sphere(2);
    let base = m.point(vec![0.0, 0.0, 1.0]).unwrap();
    let v = m.tangent(&base, vec![FRAC_PI_2, 0.0, 0.0]).unwrap();
    let q = m.exp_map(&base, &v).unwrap();
    assert!(close(&q.coords, &[1.0, 0.0, 0.0], 1e-15));
    let back = m.log_map(&base, &q).unwrap();
    assert!(close(&back.components, &[FRAC_PI_2, 0.0, 0.0], 1e-15));
}

#[test]
fn zero_vector_is_identity() {
    let mut rng = stream(3);
    for m in ALL {
        let base = random_point(&m, &mut rng, 0.7);
        let v = TangentVector::new(base.clone(), vec![0.0; m.ambient_dim()]);
        let q = m.exp_map(&base, &v).unwrap();
        assert!(close(&q.coords, &base.coords, 1e-15), "{m:?}");
        let l = m.log_map(&base, &base).unwrap();
        assert!(l.components.iter().all(|x| x.abs() < 1e-15), "{m:?}");
    }
}

#[test]
fn hyperbolic_unit_speed_geodesic() {
    let m = ManifoldKind::Hyperbolic(2);
    let base = m.origin();
    let v = m.tangent(&base, vec![0.0, 1.0, 0.0]).unwrap();
    let q = m.exp_map(&base, &v).unwrap();
    assert!(close(&q.coords, &[1f64.cosh(), 1f64.sinh(), 0.0], 1e-15));
}

#[test]
fn antipodal_log_is_rejected_and_distance_is_pi() {
    let m = ManifoldKind::Sphere(2);
    let p = m.point(vec![0.0, 0.0, 1.0]).unwrap();
    let q = m.point(vec![0.0, 0.0, -1.0]).unwrap();
    assert!(matches!(m.log_map(&p, &q), Err(Error::Domain(_))));
    assert!((m.distance(&p, &q).unwrap() - PI).abs() < 1e-15);
}

#[test]
fn spd_identity_vs_scaled_identity() {
    let m = ManifoldKind::SpdLogEuclidean(2);
    let e2 = 2f64.exp();
    let p = spd::point_from_matrix(&nalgebra::DMatrix::identity(2, 2)).unwrap();
    let q = spd::point_from_matrix(&(nalgebra::DMatrix::identity(2, 2) * e2)).unwrap();
    let d = m.distance(&p, &q).unwrap();
    assert!((d - 2.0 * 2f64.sqrt()).abs() < 1e-12);
}

#[test]
fn projections() {
    let s = ManifoldKind::Sphere(2);
    assert_eq!(s.project_to_manifold(&[0.0, 0.0, 2.0]).unwrap().coords, vec![0.0, 0.0, 1.0]);
    assert!(matches!(s.project_to_manifold(&[0.0; 3]), Err(Error::Domain(_))));

    let h = ManifoldKind::Hyperbolic(2);
    assert!(matches!(h.project_to_manifold(&[1.0, 2.0, 0.0]), Err(Error::Domain(_))));
    let p = h.project_to_manifold(&[-2.0, 0.5, 0.3]).unwrap();
    h.check_coords(&p.coords).unwrap();

    let mut rng = stream(9);
    for m in ALL {
        let x = random_point(&m, &mut rng, 0.5);
        let amb = m.ambient_coords(&x);
        let y = m.project_to_manifold(&amb).unwrap();
        assert!(close(&y.coords, &x.coords, 1e-10), "{m:?}");
        let z = m.project_to_manifold(&m.ambient_coords(&y)).unwrap();
        assert!(close(&z.coords, &y.coords, 1e-10), "{m:?}");
    }
}

#[test]
fn spd_projection_clamps_negative_eigenvalue() {
    let (c, s) = (0.6f64, 0.8f64);
    let q = nalgebra::DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
    let d = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -0.5]));
    let mat = &q * d * q.transpose();
    let m = ManifoldKind::SpdLogEuclidean(2);
    let p = m.project_to_manifold(mat.as_slice()).unwrap();
    let ev = spd::eigenvalues(&spd::matrix_from_point(&p, 2));
    assert!((ev[0] - 1e-6).abs() < 1e-12);
    assert!((ev[1] - 1.0).abs() < 1e-12);
}

#[test]
fn poincare_coordinates() {
    let h = ManifoldKind::Hyperbolic(2);
    assert_eq!(hyperboloid_to_poincare(&h.origin()), vec![0.0, 0.0]);
    let p = ManifoldPoint::new_unchecked(vec![1f64.cosh(), 1f64.sinh(), 0.0]);
    let y = hyperboloid_to_poincare(&p);
    assert!((y[0] - 1f64.sinh() / (1.0 + 1f64.cosh())).abs() < 1e-15);
    assert!((y[0] - 0.4621).abs() < 1e-4);
    let mut rng = stream(4);
    for _ in 0..500 {
        let p = random_point(&h, &mut rng, 3.0);
        assert!(norm(&hyperboloid_to_poincare(&p)) < 1.0);
    }
}

#[test]
fn wrong_dimension_is_structural_error() {
    let m = ManifoldKind::Sphere(2);
    assert!(matches!(m.point(vec![1.0, 0.0]), Err(Error::Dimension { .. })));
    assert!(matches!(m.point(vec![1.0, 1.0, 0.0]), Err(Error::Validation(_))));
}

#[test]
fn tangent_basis_is_orthonormal() {
    let mut rng = stream(5);
    for m in ALL {
        let b = random_point(&m, &mut rng, 0.8);
        let basis = m.tangent_basis(&b.coords);
        assert_eq!(basis.len(), m.intrinsic_dim());
        for (i, u) in basis.iter().enumerate() {
            m.check_tangent(&b, u).unwrap();
            for (j, v) in basis.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((m.inner(u, v) - want).abs() < 1e-10);
            }
        }
    }
}

/// Central-difference check of the decoder head and distance gradients.
#[test]
fn lift_exp_and_distance_gradients_match_finite_differences() {
    let mut rng = stream(11);
    for m in ALL {
        let d = m.ambient_dim();
        for _ in 0..20 {
            let base = random_point(&m, &mut rng, 0.5);
            let x = random_point(&m, &mut rng, 0.5);
            let u: Vec<f64> = (0..d).map(|_| 0.6 * crate::rng::normal(&mut rng)).collect();
            let loss = |u: &[f64]| {
                let mut v = vec![0.0; d];
                let mut y = vec![0.0; d];
                m.lift_exp_raw(&base.coords, u, &mut v, &mut y);
                let mut g = vec![0.0; d];
                m.sq_distance_grad(&x.coords, &y, &mut g)
            };
            let mut v = vec![0.0; d];
            let mut y = vec![0.0; d];
            m.lift_exp_raw(&base.coords, &u, &mut v, &mut y);
            let mut g_y = vec![0.0; d];
            m.sq_distance_grad(&x.coords, &y, &mut g_y);
            let mut g_u = vec![0.0; d];
            m.lift_exp_vjp(&base.coords, &v, &g_y, &mut g_u);
            let h = 1e-6;
            for i in 0..d {
                let mut up = u.clone();
                up[i] += h;
                let mut dn = u.clone();
                dn[i] -= h;
                let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
                let denom = fd.abs().max(g_u[i].abs()).max(1e-8);
                assert!((fd - g_u[i]).abs() / denom < 1e-6, "{m:?} {i}: fd {fd} vs {}", g_u[i]);
            }
        }
    }
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    fn manifold() -> impl Strategy<Value = ManifoldKind> {
        prop_oneof![
            (1usize..5).prop_map(ManifoldKind::Euclidean),
            (1usize..4).prop_map(ManifoldKind::Sphere),
            (1usize..4).prop_map(ManifoldKind::Hyperbolic),
            (1usize..5).prop_map(ManifoldKind::SpdLogEuclidean),
        ]
    }

    proptest! {
        #[test]
        fn exp_log_roundtrip(m in manifold(), seed in any::<u64>(), frac in 0.0f64..0.99) {
            let mut rng = stream(seed);
            let base = random_point(&m, &mut rng, 1.0);
            let mut v = random_tangent_raw(&m, &base.coords, &mut rng, 1.0);
            let target = if m.injectivity_radius().is_finite() { frac * PI } else { 4.0 * frac };
            let n = m.tangent_norm(&v);
            prop_assume!(n > 1e-12);
            v.iter_mut().for_each(|x| *x *= target / n);
            let mut q = vec![0.0; v.len()];
            m.exp_raw(&base.coords, &v, &mut q);
            let mut back = vec![0.0; v.len()];
            m.log_raw(&base.coords, &q, &mut back).unwrap();
            let err = m.tangent_norm(&back.iter().zip(&v).map(|(a, b)| a - b).collect::<Vec<_>>());
            prop_assert!(err <= 1e-8 * (1.0 + target), "err {err}");
            let dist = m.distance_raw(&base.coords, &q);
            prop_assert!((m.tangent_norm(&back) - dist).abs() <= 1e-9 * dist.max(1.0));
        }

        #[test]
        fn distance_axioms(m in manifold(), seed in any::<u64>()) {
            let mut rng = stream(seed);
            let a = random_point(&m, &mut rng, 1.0);
            let b = random_point(&m, &mut rng, 1.0);
            let c = random_point(&m, &mut rng, 1.0);
            let ab = m.distance_raw(&a.coords, &b.coords);
            prop_assert_eq!(ab, m.distance_raw(&b.coords, &a.coords));
            prop_assert!(m.distance_raw(&a.coords, &a.coords) <= 1e-9);
            let ac = m.distance_raw(&a.coords, &c.coords);
            let bc = m.distance_raw(&b.coords, &c.coords);
            prop_assert!(ac <= ab + bc + 1e-9);
        }

        #[test]
        fn spd_vectorization_is_isometric(seed in any::<u64>(), n in 1usize..6) {
            let mut rng = stream(seed);
            let sym = |rng: &mut crate::rng::Stream| {
                let a = nalgebra::DMatrix::from_fn(n, n, |_, _| crate::rng::normal(rng));
                (&a + a.transpose()) * 0.5
            };
            let p = sym(&mut rng);
            let q = sym(&mut rng);
            let vp = spd::vectorize(&p).unwrap();
            let vq = spd::vectorize(&q).unwrap();
            prop_assert!((spd::devectorize(&vp, n).unwrap() - &p).norm() < 1e-14);
            let dv: f64 = vp.iter().zip(&vq).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            prop_assert!((dv - (&p - &q).norm()).abs() < 1e-12);
        }

        #[test]
        fn spd_distance_is_log_frobenius(seed in any::<u64>()) {
            let m = ManifoldKind::SpdLogEuclidean(3);
            let mut rng = stream(seed);
            let p = random_point(&m, &mut rng, 1.0);
            let q = random_point(&m, &mut rng, 1.0);
            let pm = spd::matrix_from_point(&p, 3);
            let qm = spd::matrix_from_point(&q, 3);
            let want = (spd::logm(&pm) - spd::logm(&qm)).norm();
            prop_assert!((m.distance_raw(&p.coords, &q.coords) - want).abs() < 1e-9);
        }
    }
}
