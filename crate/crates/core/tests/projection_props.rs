use ortho_bottleneck::linalg::norm2;
use ortho_bottleneck::rng::SeededRng;
use ortho_bottleneck::{make_basis, ProjectionMethod};
use proptest::prelude::*;

fn orthonormal_method() -> impl Strategy<Value = ProjectionMethod> {
    prop::sample::select(ProjectionMethod::ORTHONORMAL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn orthonormal_bases_do_not_expand(
        d in 1usize..=48,
        k_frac in 0.0f64..1.0,
        method in orthonormal_method(),
        seed in any::<u64>(),
    ) {
        let k = 1 + ((d - 1) as f64 * k_frac) as usize;
        let basis = make_basis(d, k, method, seed).unwrap();
        prop_assert!(basis.orthonormality_error() <= 1e-8);
        let mut rng = SeededRng::new(seed ^ 0x55);
        for _ in 0..8 {
            let mut z = vec![0.0; d];
            rng.fill_standard_normal(&mut z);
            let h = basis.project(&z).unwrap();
            prop_assert_eq!(h.len(), k);
            prop_assert!(norm2(&h) <= norm2(&z) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn basis_is_a_pure_function_of_its_inputs(
        d in 1usize..=32,
        k in 1usize..=32,
        method_idx in 0usize..4,
        seed in any::<u64>(),
    ) {
        let k = k.min(d);
        let method = [
            ProjectionMethod::Qr,
            ProjectionMethod::Svd,
            ProjectionMethod::Polar,
            ProjectionMethod::GaussianControl,
        ][method_idx];
        let a = make_basis(d, k, method, seed).unwrap();
        let b = make_basis(d, k, method, seed).unwrap();
        prop_assert_eq!(a.matrix().as_slice(), b.matrix().as_slice());
    }
}

#[test]
fn gaussian_control_gram_is_near_d_times_identity() {
    let d = 1024;
    let basis = make_basis(d, 4, ProjectionMethod::GaussianControl, 3).unwrap();
    let g = basis.matrix().gram();
    for i in 0..4 {
        assert!((g.get(i, i) / d as f64 - 1.0).abs() < 0.15);
    }
    assert!(!basis.is_orthonormal());
}

#[test]
fn different_seeds_give_different_subspaces() {
    let a = make_basis(16, 2, ProjectionMethod::Qr, 1).unwrap();
    let b = make_basis(16, 2, ProjectionMethod::Qr, 2).unwrap();
    assert_ne!(a.matrix().as_slice(), b.matrix().as_slice());
}
