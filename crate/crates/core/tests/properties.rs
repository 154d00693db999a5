//! Property tests for the numerical kernel.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use tpu_core::covariate::{ConditionalDist, KernelCondDist};
use tpu_core::data::{Design, Outcome, Subject, TwoPhaseDataset};
use tpu_core::numerics::{sample_cov, solve_root, RootConfig};

fn diag_dominant_matrix(dim: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, dim * dim).prop_map(move |vals| {
        let mut m = DMatrix::from_vec(dim, dim, vals);
        for i in 0..dim {
            m[(i, i)] += dim as f64 + 1.0;
        }
        m
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn root_of_affine_system_equals_direct_solve(
        a in diag_dominant_matrix(3),
        b in prop::collection::vec(-5.0f64..5.0, 3),
    ) {
        let b = DVector::from_vec(b);
        let direct = a.clone().lu().solve(&b).unwrap();
        let f = |x: &DVector<f64>| &a * x - &b;
        let root = solve_root(f, &DVector::zeros(3), &RootConfig::default()).unwrap();
        prop_assert!((root - direct).amax() < 1e-7);
    }

    #[test]
    fn sample_cov_is_psd_and_symmetric(
        vals in prop::collection::vec(-10.0f64..10.0, 5 * 24),
    ) {
        let rows = DMatrix::from_vec(24, 5, vals);
        let cov = sample_cov(&rows).unwrap();
        prop_assert!((cov.clone() - cov.transpose()).amax() < 1e-10);
        let eig = cov.clone().symmetric_eigen();
        let floor = -1e-10 * cov.trace().abs().max(1.0);
        prop_assert!(eig.eigenvalues.iter().all(|&l| l >= floor));
    }

    #[test]
    fn kernel_weights_are_a_probability_vector(
        zs in prop::collection::vec(-3.0f64..3.0, 8),
        query in -100.0f64..100.0,
        bandwidth in 0.05f64..5.0,
    ) {
        let subjects: Vec<Subject> = zs
            .iter()
            .enumerate()
            .map(|(i, &z)| Subject {
                outcome: Outcome::Continuous(0.0),
                z: DVector::from_vec(vec![z]),
                x: Some(DVector::from_vec(vec![i as f64])),
                r: true,
                pi: 1.0,
            })
            .collect();
        let data = TwoPhaseDataset::new(subjects, 1, 1, Design::Supplied).unwrap();
        let kde = KernelCondDist::from_subsample(
            &data.subsample(),
            vec![0],
            Some(vec![bandwidth]),
        )
        .unwrap();
        let eval = kde.evaluate(&DVector::from_vec(vec![query]));
        let total: f64 = eval.ws.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(eval.ws.iter().all(|&w| w >= 0.0));
    }
}
