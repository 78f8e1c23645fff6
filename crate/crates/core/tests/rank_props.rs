mod common;

use ortho_bottleneck::diagnostics::effective_rank;
use ortho_bottleneck::linalg::householder_qr;
use ortho_bottleneck::rng::{standard_normal_matrix, SeededRng};
use ortho_bottleneck::Matrix;
use proptest::prelude::*;

fn batch(seed: u64) -> Matrix {
    common::random_feature_batch(&mut SeededRng::new(seed))
}

#[test]
fn matches_gram_oracle_on_random_batches() {
    for seed in 0..100u64 {
        let x = batch(seed);
        for delta in [0.01, 0.05, 0.2] {
            let rep = effective_rank(&x, delta).unwrap();
            assert_eq!(rep.k_eff, common::gram_oracle_rank(&x, delta), "seed {seed} delta {delta}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn report_is_well_formed(seed in any::<u64>()) {
        let x = batch(seed);
        let rep = effective_rank(&x, 0.01).unwrap();
        prop_assert!(rep.k_eff >= 1 && rep.k_eff <= x.rows().min(x.cols()));
        prop_assert_eq!(rep.k_norm, rep.k_eff as f64 / x.cols() as f64);
        if !rep.degenerate {
            prop_assert!((rep.singular_masses.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn invariant_to_positive_rescaling(seed in any::<u64>(), log_scale in -6.0f64..6.0) {
        let x = batch(seed);
        let a = effective_rank(&x, 0.01).unwrap();
        let b = effective_rank(&x.scale(10f64.powf(log_scale)), 0.01).unwrap();
        prop_assert_eq!(a.k_eff, b.k_eff);
        for (p, q) in a.singular_masses.iter().zip(&b.singular_masses) {
            prop_assert!((p - q).abs() <= 1e-9);
        }
    }

    #[test]
    fn invariant_to_orthogonal_rotation(seed in any::<u64>()) {
        let x = batch(seed);
        let q = householder_qr(&standard_normal_matrix(x.cols(), x.cols(), &mut SeededRng::new(!seed))).unwrap().0;
        let a = effective_rank(&x, 0.01).unwrap();
        let b = effective_rank(&x.matmul(&q).unwrap(), 0.01).unwrap();
        for (p, q) in a.singular_masses.iter().zip(&b.singular_masses) {
            prop_assert!((p - q).abs() <= 1e-9);
        }
        // Exact integer agreement, except when the cumulative mass sits on
        // the threshold to within rounding.
        let mut acc = 0.0;
        let near_tie = a.singular_masses.iter().any(|p| { acc += p; (acc - 0.99).abs() < 1e-9 });
        if !near_tie {
            prop_assert_eq!(a.k_eff, b.k_eff);
        }
    }

    #[test]
    fn duplicate_row_adds_at_most_one(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let x = batch(seed);
        let i = pick.index(x.rows());
        let mut rows: Vec<Vec<f64>> = (0..x.rows()).map(|r| x.row(r).to_vec()).collect();
        rows.push(x.row(i).to_vec());
        let before = effective_rank(&x, 0.01).unwrap().k_eff;
        let after = effective_rank(&Matrix::from_rows(&rows).unwrap(), 0.01).unwrap().k_eff;
        prop_assert!(after <= before + 1);
    }
}

#[test]
fn exact_rank_recovered_at_tiny_delta() {
    let mut rng = SeededRng::new(21);
    for r in 1..=8 {
        let x = standard_normal_matrix(64, r, &mut rng)
            .matmul(&standard_normal_matrix(r, 16, &mut rng))
            .unwrap();
        assert_eq!(effective_rank(&x, 1e-12).unwrap().k_eff, r);
    }
}
