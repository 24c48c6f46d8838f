use knnmt::retrieval::{interpolate, knn_distribution, RetrievalDistribution};
use knnmt::vectorstore::{Neighbor, NeighborSet, TokenId};
use proptest::prelude::*;

fn set(items: &[(f32, TokenId)]) -> NeighborSet {
    NeighborSet::from_unsorted(
        items
            .iter()
            .enumerate()
            .map(|(index, &(distance, value))| Neighbor { index, distance, value })
            .collect(),
    )
}

fn neighbors() -> impl Strategy<Value = Vec<(f32, TokenId)>> {
    prop::collection::vec((0.0f32..500.0, 0u32..12), 1..40)
}

fn dense(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.001f64..1.0, n).prop_map(|w| {
        let total: f64 = w.iter().sum();
        w.into_iter().map(|x| x / total).collect()
    })
}

#[test]
fn closed_form_aggregation() {
    let d = knn_distribution(&set(&[(0.0, 4), (10.0, 9), (10.0, 4)]), 10.0).unwrap();
    let e = (-1.0f64).exp();
    assert!((d.prob(4) - (1.0 + e) / (1.0 + 2.0 * e)).abs() < 1e-12);
    assert!((d.prob(9) - e / (1.0 + 2.0 * e)).abs() < 1e-12);
    assert_eq!(d.prob(5), 0.0);
    assert_eq!(d.argmax(), Some(4));
}

#[test]
fn interpolation_hand_example() {
    let knn = knn_distribution(&set(&[(3.0, 0)]), 10.0).unwrap();
    let out = interpolate(&[0.5, 0.5], &knn, 0.7).unwrap();
    assert!((out[0] - 0.85).abs() < 1e-12 && (out[1] - 0.15).abs() < 1e-12);
    assert!(interpolate(&[0.5, 0.4], &knn, 0.5).is_err());
    assert!(interpolate(&[1.0], &knn_distribution(&set(&[(0.0, 3)]), 1.0).unwrap(), 0.5).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn distribution_is_normalized(items in neighbors(), t in 0.01f64..1000.0) {
        let d = knn_distribution(&set(&items), t).unwrap();
        prop_assert!((d.total() - 1.0).abs() < 1e-6);
        let values: Vec<TokenId> = items.iter().map(|&(_, v)| v).collect();
        for (token, p) in d.iter() {
            prop_assert!(p > 0.0 && p <= 1.0);
            prop_assert!(values.contains(&token));
        }
    }

    #[test]
    fn shift_invariance(items in neighbors(), t in 0.5f64..100.0, c in 0.0f32..1000.0) {
        let shifted: Vec<(f32, TokenId)> = items.iter().map(|&(d, v)| (d + c, v)).collect();
        let a = knn_distribution(&set(&items), t).unwrap();
        let b = knn_distribution(&set(&shifted), t).unwrap();
        // f32 rounding of d + c is the only source of difference.
        let slack = 1e-6 + 2.0 * f64::from(f32::EPSILON) * f64::from(c + 500.0) / t;
        for (token, p) in a.iter() {
            prop_assert!((p - b.prob(token)).abs() <= slack, "{} vs {}", p, b.prob(token));
        }
    }

    #[test]
    fn interpolation_is_normalized_and_moves_toward_knn(
        p_nmt in dense(12),
        items in neighbors(),
        l1 in 0.0f64..=1.0,
        l2 in 0.0f64..=1.0,
    ) {
        let knn = knn_distribution(&set(&items), 10.0).unwrap();
        let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
        let a = interpolate(&p_nmt, &knn, lo).unwrap();
        let b = interpolate(&p_nmt, &knn, hi).unwrap();
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        for (token, q) in knn.iter() {
            let t = token as usize;
            prop_assert!((b[t] - q).abs() <= (a[t] - q).abs() + 1e-12);
        }
        prop_assert_eq!(interpolate(&p_nmt, &RetrievalDistribution::empty(), hi).unwrap(), p_nmt);
    }

    #[test]
    fn temperature_keeps_singleton_order(d1 in 0.0f32..100.0, gap in 0.01f32..50.0, t1 in 0.1f64..100.0, t2 in 0.1f64..100.0) {
        let items = [(d1, 1), (d1 + gap, 2)];
        let a = knn_distribution(&set(&items), t1).unwrap();
        let b = knn_distribution(&set(&items), t2).unwrap();
        prop_assert!(a.prob(1) >= a.prob(2));
        prop_assert!(b.prob(1) >= b.prob(2));
        prop_assert_eq!(a.argmax(), Some(1));
        prop_assert_eq!(b.argmax(), Some(1));
    }
}
