mod common;

use common::{camera, random_field};
use nalgebra::Vector3;
use normsplat::math;
use normsplat::studies::{instability_score, ParamSamples};
use normsplat::triplane::{fetch, mixup, FeatureGrid, Triplane};
use normsplat::{render, ParamMode, RenderMode};
use proptest::prelude::*;

fn direction() -> impl Strategy<Value = Vector3<f64>> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_filter("non-degenerate", |(x, y, z)| x * x + y * y + z * z > 1e-6)
        .prop_map(|(x, y, z)| Vector3::new(x, y, z).normalize())
}

fn point_in_cube() -> impl Strategy<Value = Vector3<f64>> {
    (-1.0..=1.0f64, -1.0..=1.0f64, -1.0..=1.0f64).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn triplane(seed: u64, res: usize, c: usize) -> Triplane {
    Triplane::new([0, 1, 2].map(|k| FeatureGrid::random(res, c, seed * 3 + k))).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn normal_rotation_is_proper_and_maps_z_to_the_normal(n in direction()) {
        let r = math::normal_to_rotation(&n);
        prop_assert!((r.transpose() * r - nalgebra::Matrix3::identity()).amax() < 1e-9);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
        prop_assert!((r * Vector3::z() - n).amax() < 1e-9);
    }

    #[test]
    fn quaternion_round_trips_through_matrices(q in prop::array::uniform4(-1.0..1.0f64)) {
        prop_assume!(q.iter().map(|v| v * v).sum::<f64>() > 1e-3);
        let r = math::quat_to_matrix(&q);
        let back = math::quat_to_matrix(&math::matrix_to_quat(&r));
        prop_assert!((r - back).amax() < 1e-9);
        let canonical = math::quat_canonical(&math::matrix_to_quat(&r));
        let expected = math::quat_canonical(&math::quat_normalize(&q));
        for k in 0..4 {
            prop_assert!((canonical[k] - expected[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn fetch_is_linear_in_the_planes(seed in 0u64..1000, p in point_in_cube(), a in -2.0..2.0f64, b in -2.0..2.0f64) {
        let t0 = triplane(seed, 5, 3);
        let t1 = triplane(seed + 7919, 5, 3);
        let combined = Triplane::new([0, 1, 2].map(|k| {
            let data = t0.planes[k].data.iter().zip(&t1.planes[k].data).map(|(x, y)| a * x + b * y).collect();
            FeatureGrid::from_data(5, 3, data).unwrap()
        }))
        .unwrap();
        let f0 = fetch(&t0, &p).unwrap();
        let f1 = fetch(&t1, &p).unwrap();
        let fc = fetch(&combined, &p).unwrap();
        for k in 0..fc.len() {
            prop_assert!((fc[k] - (a * f0[k] + b * f1[k])).abs() < 1e-9);
        }
    }

    #[test]
    fn fetch_is_bounded_by_the_plane_values(seed in 0u64..1000, p in point_in_cube()) {
        let t = triplane(seed, 4, 2);
        let f = fetch(&t, &p).unwrap();
        let (lo, hi) = t.planes.iter().flat_map(|g| g.data.iter()).fold((f64::MAX, f64::MIN), |(l, h), v| (l.min(*v), h.max(*v)));
        prop_assert!(f.iter().all(|v| *v >= lo - 1e-12 && *v <= hi + 1e-12));
    }

    #[test]
    fn mixup_stays_between_its_inputs(
        pairs in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 1..20),
        alpha in 0.0..=1.0f64,
    ) {
        let (f0, f1): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let m = mixup(&f0, &f1, alpha).unwrap();
        for k in 0..m.len() {
            prop_assert!(m[k] >= f0[k].min(f1[k]) - 1e-12 && m[k] <= f0[k].max(f1[k]) + 1e-12);
        }
        prop_assert!(mixup(&f0, &f1, 1.0 + alpha.max(1e-3)).is_err());
    }

    #[test]
    fn instability_score_ignores_affine_rescaling(
        seed in 0u64..1000,
        scale in 0.1..10.0f64,
        shift in -5.0..5.0f64,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (m, n, c) = (3, 6, 2);
        let values: Vec<f64> = (0..m * n * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        let base = instability_score(&ParamSamples { m, n, c, values: values.clone() }).unwrap();
        let moved = values.iter().map(|v| scale * v + shift).collect();
        let other = instability_score(&ParamSamples { m, n, c, values: moved }).unwrap();
        prop_assert!((base - other).abs() < 1e-9 * base.max(1.0));
        prop_assert!(base >= 0.0);
    }

    #[test]
    fn alpha_and_transmittance_partition_each_pixel(seed in 0u64..500, count in 1usize..80, mode in 0usize..3) {
        let field = random_field(seed, count, ParamMode::ALL[mode]);
        let out = render(&field, &camera(16), RenderMode::Rgb, Vector3::new(1.0, 1.0, 1.0));
        for (a, t) in out.alpha.iter().zip(&out.transmittance) {
            prop_assert!(*a >= 0.0 && *t > 0.0);
            prop_assert!((a + t - 1.0).abs() < 1e-9);
        }
    }
}
