//! Property-based invariants over the numerical kernels.

use mmimo_core::channel::{complex_gaussian, steering_vector, synth_covariance, UserGeometry};
use mmimo_core::matrix_core::{
    hermitian_eig, orthonormalize_against, pseudo_inverse, psd_sqrt, quad_form_expectation_f, CMat,
    CVec, C64, HermitianMatrix, RANK_TOL,
};
use mmimo_core::scenario::place_type_s_users;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_cmat(r: usize, c: usize, seed: u64) -> CMat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CMat::from_fn(r, c, |_, _| {
        C64::new(
            rand::Rng::random_range(&mut rng, -1.0..1.0),
            rand::Rng::random_range(&mut rng, -1.0..1.0),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn eig_reconstructs_hermitian(dim in 1usize..12, seed in 0u64..1000) {
        let raw = random_cmat(dim, dim, seed);
        let h = HermitianMatrix::new((&raw + raw.adjoint()).scale(0.5)).unwrap();
        let eig = h.eig();
        let err = (eig.reconstruct() - h.as_matrix()).norm();
        prop_assert!(err < 1e-9 * h.as_matrix().norm().max(1.0));
        // eigenvalues sorted descending
        prop_assert!(eig.values.windows(2).all(|w| w[0] >= w[1]));
        // orthonormal basis
        let unit = (eig.vectors.adjoint() * &eig.vectors - CMat::identity(dim, dim)).norm();
        prop_assert!(unit < 1e-9);
    }

    #[test]
    fn psd_sqrt_squares_back(dim in 1usize..10, cols in 1usize..10, seed in 0u64..1000) {
        let f = random_cmat(dim, cols, seed);
        let a = HermitianMatrix::from_factor(&f);
        let s = psd_sqrt(&a).unwrap();
        let err = (s.as_matrix() * s.as_matrix() - a.as_matrix()).norm();
        prop_assert!(err < 1e-8 * a.as_matrix().norm().max(1.0));
    }

    #[test]
    fn pinv_is_left_inverse(rows in 3usize..14, seed in 0u64..1000) {
        let cols = 1 + (seed as usize % rows.min(4));
        let g = random_cmat(rows, cols, seed);
        if let Ok(p) = pseudo_inverse(&g) {
            let res = (g.adjoint() * p - CMat::identity(cols, cols)).norm();
            prop_assert!(res < 1e-8);
        }
    }

    #[test]
    fn steering_norm_invariant(theta in 0.0..std::f64::consts::PI, m in 1usize..64, l in 1usize..30) {
        let v = steering_vector(theta, m, 0.5, l);
        let expect = m as f64 / l as f64;
        prop_assert!((v.norm_squared() - expect).abs() < 1e-10 * expect.max(1.0));
    }

    #[test]
    fn covariance_trace_equals_antennas(m in 2usize..40, l in 1usize..12, seed in 0u64..1000, mean in 0.1f64..3.0) {
        let geom = UserGeometry {
            mean_aoa: mean,
            angle_spread: 0.2,
            num_paths: l,
            antenna_spacing_ratio: 0.5,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi = synth_covariance(&geom, m, &mut rng).unwrap();
        prop_assert!((phi.trace() - m as f64).abs() < 1e-8 * m as f64);
        // PSD: no eigenvalue meaningfully below zero
        let eig = phi.eig();
        prop_assert!(eig.values.last().unwrap() > &(-1e-8 * eig.lambda_max().max(1.0)));
    }

    #[test]
    fn quad_form_is_symmetric_and_real_for_hermitian(dim in 1usize..8, seed in 0u64..1000) {
        let ra = random_cmat(dim, dim, seed);
        let rb = random_cmat(dim, dim, seed.wrapping_add(7));
        let a = (&ra + ra.adjoint()).scale(0.5);
        let b = (&rb + rb.adjoint()).scale(0.5);
        let ab = quad_form_expectation_f(&a, &b).unwrap();
        let ba = quad_form_expectation_f(&b, &a).unwrap();
        prop_assert!((ab - ba).norm() < 1e-10 * ab.norm().max(1.0));
        prop_assert!(ab.im.abs() < 1e-10 * ab.norm().max(1.0));
    }

    #[test]
    fn orthonormalize_yields_orthonormal_columns(rows in 2usize..12, cols in 1usize..12, seed in 0u64..1000) {
        let extra = random_cmat(rows, cols, seed);
        let q = orthonormalize_against(&CMat::zeros(rows, 0), &extra, RANK_TOL);
        prop_assert!(q.ncols() <= rows.min(cols));
        let unit = (q.adjoint() * &q - CMat::identity(q.ncols(), q.ncols())).norm();
        prop_assert!(unit < 1e-10);
        // the span is preserved: every original column projects onto q fully
        for j in 0..cols {
            let v = CVec::from(extra.column(j));
            let resid = &v - &q * (q.adjoint() * &v);
            prop_assert!(resid.norm() < 1e-8 * v.norm().max(1.0));
        }
    }

    #[test]
    fn schedule_separation_uniform(n in 1usize..8, varsigma in 0.0f64..6.28) {
        let users = place_type_s_users(n, varsigma, 0.17, 20, 0.5);
        prop_assert_eq!(users.len(), n);
        let sep = 2.0 * std::f64::consts::PI / n as f64;
        for w in users.windows(2) {
            let d = (w[1].mean_aoa - w[0].mean_aoa).rem_euclid(2.0 * std::f64::consts::PI);
            prop_assert!((d - sep).abs() < 1e-9);
        }
    }

    #[test]
    fn eig_rejects_clearly_asymmetric(dim in 2usize..8, seed in 0u64..1000) {
        let mut m = random_cmat(dim, dim, seed);
        m[(0, dim - 1)] += C64::new(1.0, 1.0);
        m[(dim - 1, 0)] -= C64::new(1.0, 1.0);
        prop_assert!(hermitian_eig(&m).is_err());
    }

    #[test]
    fn gaussian_vector_dimension_and_scale(dim in 1usize..64, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = complex_gaussian(dim, &mut rng);
        prop_assert_eq!(v.len(), dim);
        // loose sanity bound: squared norm concentrates around dim
        prop_assert!(v.norm_squared() < 20.0 * dim as f64 + 60.0);
    }
}
