mod common;

use common::*;
use nalgebra::{DMatrix, SymmetricEigen};
use npga::guidance::{l_gp_and_grad, GpGuidanceSpec};
use npga::kernels::{gram, gram_symmetric, KernelKind, KernelSpec};
use proptest::prelude::*;

fn kind_strategy() -> impl Strategy<Value = KernelKind> {
    prop::sample::select(KernelKind::ALL.to_vec())
}

fn spec_strategy() -> impl Strategy<Value = KernelSpec> {
    (
        kind_strategy(),
        0.2..3.0f64,
        0.2..3.0f64,
        0.5..6.0f64,
        0.1..3.0f64,
        0.1..3.0f64,
    )
        .prop_map(|(kind, s, l, p, w, b)| {
            let mut k = KernelSpec::new(kind);
            k.signal_variance = s;
            k.lengthscale = l;
            k.period = p;
            k.input_weight = w;
            k.bias_weight = b;
            k
        })
}

fn points(max_n: usize, max_d: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (1..=max_n, 1..=max_d).prop_flat_map(|(n, d)| {
        prop::collection::vec(-4.0..4.0f64, n * d).prop_map(move |v| DMatrix::from_row_slice(n, d, &v))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn gram_matches_written_out_formula(spec in spec_strategy(), p in points(8, 3)) {
        let k = gram_symmetric(&p, &spec).unwrap();
        prop_assert!((k - kernel_matrix(&p, &spec)).amax() < 1e-12);
    }

    #[test]
    fn gram_is_symmetric_psd(spec in spec_strategy(), p in points(10, 4)) {
        let k = gram_symmetric(&p, &spec).unwrap();
        prop_assert_eq!(&k, &k.transpose());
        let scale = k.amax().max(1.0);
        prop_assert!(SymmetricEigen::new(k).eigenvalues.min() >= -1e-9 * scale);
    }

    #[test]
    fn cross_gram_agrees_with_symmetric(spec in spec_strategy(), p in points(6, 3)) {
        let k = gram(&p, &p, &spec).unwrap();
        prop_assert!((k - gram_symmetric(&p, &spec).unwrap()).amax() < 1e-12);
    }

    #[test]
    fn periodic_kernel_repeats(spec in spec_strategy(), p in points(2, 3), shift in -4i32..=4, h in 0usize..3) {
        let spec = KernelSpec { kind: KernelKind::Periodic, ..spec };
        let x: Vec<f64> = p.row(0).iter().copied().collect();
        let y: Vec<f64> = p.row(p.nrows() - 1).iter().copied().collect();
        let mut xs = x.clone();
        let h = h % x.len();
        xs[h] += shift as f64 * spec.period;
        prop_assert!((spec.eval(&xs, &y) - spec.eval(&x, &y)).abs() < 1e-12);
    }

    #[test]
    fn arcsine_kernel_bounded_by_signal_variance(spec in spec_strategy(), p in points(8, 3)) {
        let spec = KernelSpec { kind: KernelKind::Arcsine, ..spec };
        let k = gram_symmetric(&p, &spec).unwrap();
        prop_assert!(k.amax() <= spec.signal_variance);
    }

    #[test]
    fn gp_cost_matches_direct_density(
        spec in spec_strategy(),
        p in points(8, 3),
        noise in 0.05..1.0f64,
        seed in 0u64..1000,
    ) {
        let n = p.nrows();
        let mut r = rng(seed);
        let targets = normal(&mut r, n, 1 + (seed % 3) as usize);
        let h = p.ncols();
        let gp = GpGuidanceSpec {
            partition: 0..h,
            projection: DMatrix::identity(h, h),
            kernel: spec,
            noise_variance: noise,
            target_label_set: "z".into(),
        };
        let lib = l_gp_and_grad(&p, &gp, &targets).unwrap().cost;
        let direct = direct_gp_cost(&kernel_matrix(&p, &spec), noise, &targets);
        prop_assert!((lib - direct).abs() <= 1e-9 * direct.abs().max(1.0), "{} vs {}", lib, direct);
    }

    #[test]
    fn gp_cost_invariant_to_example_order(spec in spec_strategy(), p in points(7, 2), seed in 0u64..1000) {
        let n = p.nrows();
        let mut r = rng(seed);
        let targets = normal(&mut r, n, 2);
        let h = p.ncols();
        let gp = GpGuidanceSpec {
            partition: 0..h,
            projection: DMatrix::identity(h, h),
            kernel: spec,
            noise_variance: 0.3,
            target_label_set: "z".into(),
        };
        let perm: Vec<usize> = (0..n).rev().collect();
        let pp = DMatrix::from_fn(n, h, |i, j| p[(perm[i], j)]);
        let tp = DMatrix::from_fn(n, 2, |i, j| targets[(perm[i], j)]);
        let a = l_gp_and_grad(&p, &gp, &targets).unwrap().cost;
        let b = l_gp_and_grad(&pp, &gp, &tp).unwrap().cost;
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }
}

#[test]
fn rbf_cost_invariant_to_latent_rotation() {
    let mut r = rng(4);
    let p = normal(&mut r, 6, 2);
    let targets = normal(&mut r, 6, 1);
    let theta: f64 = 0.7;
    let rot = DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()]);
    let make = |proj: DMatrix<f64>| GpGuidanceSpec {
        partition: 0..2,
        projection: proj,
        kernel: KernelSpec::rbf(1.2),
        noise_variance: 0.2,
        target_label_set: "z".into(),
    };
    let a = l_gp_and_grad(&p, &make(DMatrix::identity(2, 2)), &targets)
        .unwrap()
        .cost;
    let b = l_gp_and_grad(&p, &make(rot), &targets).unwrap().cost;
    assert!((a - b).abs() < 1e-12);
}
