use affine_lift::distance::{point_to_subspace, point_to_subspace_dual, subspace_distance, subspace_to_subspace_dual};
use affine_lift::format::VectorSet;
use affine_lift::lifting::{LiftConfig, Lifter, Strategy as LiftStrategy};
use affine_lift::linalg::norm;
use affine_lift::{AffineSubspace, RowMatrix};
use proptest::prelude::*;

fn vector(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, n)
}

fn unit_vector(n: usize) -> impl Strategy<Value = Vec<f64>> {
    vector(n).prop_filter_map("nonzero", |v| {
        let l = norm(&v);
        (l > 1e-3).then(|| v.iter().map(|x| x / l).collect())
    })
}

/// A unit descriptor paired with a random lift of it.
fn lifted(n: usize, m: usize) -> impl Strategy<Value = (Vec<f64>, AffineSubspace)> {
    (unit_vector(n), any::<u64>()).prop_map(move |(d, seed)| {
        let lifter = Lifter::new(LiftConfig::new(m, LiftStrategy::Random, seed), None).unwrap();
        let sub = lifter.lift(&d, None, 0, 0).unwrap().subspace;
        (d, sub)
    })
}

fn sub_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lift_contains_its_descriptor((d, sub) in lifted(12, 3)) {
        prop_assert!(point_to_subspace(&sub, &d).unwrap() < 1e-9);
        prop_assert!(sub.basis().gram_deviation() < 1e-8);
    }

    #[test]
    fn subspace_distance_is_symmetric_and_bounded((d, a) in lifted(10, 2), (e, b) in lifted(10, 3)) {
        let ab = subspace_distance(&a, &b).unwrap();
        let ba = subspace_distance(&b, &a).unwrap();
        prop_assert!((ab.distance - ba.distance).abs() < 1e-9);
        prop_assert!(ab.distance <= sub_dist(&d, &e) + 1e-9);
        prop_assert!((sub_dist(&ab.x_star, &ab.y_star) - ab.distance).abs() < 1e-9);
        prop_assert!(point_to_subspace(&a, &ab.x_star).unwrap() < 1e-8);
        prop_assert!(point_to_subspace(&b, &ab.y_star).unwrap() < 1e-8);
    }

    #[test]
    fn primal_and_dual_forms_agree((_, a) in lifted(9, 2), (_, b) in lifted(9, 4), e in vector(9)) {
        let (da, db) = (a.to_dual(), b.to_dual());
        let primal = subspace_distance(&a, &b).unwrap().distance;
        let dual = subspace_to_subspace_dual(&da, &db).unwrap().distance;
        prop_assert!((primal - dual).abs() < 1e-8, "{} vs {}", primal, dual);
        let p = point_to_subspace(&a, &e).unwrap();
        let q = point_to_subspace_dual(&da, &e).unwrap();
        prop_assert!((p - q).abs() < 1e-9);
    }

    #[test]
    fn distance_is_translation_invariant((_, a) in lifted(8, 2), (_, b) in lifted(8, 2), t in vector(8)) {
        let shift = |s: &AffineSubspace| {
            let o: Vec<f64> = s.origin().iter().zip(&t).map(|(x, y)| x + y).collect();
            s.with_origin(o).unwrap()
        };
        let before = subspace_distance(&a, &b).unwrap().distance;
        let after = subspace_distance(&shift(&a), &shift(&b)).unwrap().distance;
        prop_assert!((before - after).abs() < 1e-9);
    }

    #[test]
    fn descriptor_files_round_trip(rows in prop::collection::vec(vector(6), 0..20)) {
        let m = if rows.is_empty() { RowMatrix::with_cols(6) } else { RowMatrix::from_rows(&rows).unwrap() };
        let set = VectorSet::from_descriptors(&m).unwrap();
        let bytes = set.to_bytes();
        let back = VectorSet::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back.len(), rows.len());
    }

    #[test]
    fn truncated_files_are_rejected((_, sub) in lifted(5, 2), cut in 1usize..40) {
        let bytes = VectorSet::from_primal(&[sub]).unwrap().to_bytes();
        let cut = cut.min(bytes.len());
        prop_assert!(VectorSet::from_bytes(&bytes[..bytes.len() - cut]).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        prop_assert!(VectorSet::from_bytes(&longer).is_err());
    }
}
