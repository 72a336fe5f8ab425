use std::collections::HashSet;

use proptest::prelude::*;

use fairaudit_core::dataset::{split_corpus, split_sizes, DecisionVector, Profile, DEFAULT_RATIOS};
use fairaudit_core::embed::{hash_embed_field, load_matrix, write_matrix_binary, EmbeddingMatrix};
use fairaudit_core::fairness::{classification_metrics, consistency, Averaging};
use fairaudit_core::simindex::{knn_batched, knn_exact, pairwise_similarity, Metric, NeighborList};
use fairaudit_core::Error;

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("r{i:04}")).collect()
}

fn matrix(rows: usize, dim: usize, data: Vec<f32>) -> EmbeddingMatrix {
    EmbeddingMatrix::from_rows(
        &data.chunks(dim).map(<[f32]>::to_vec).collect::<Vec<_>>()[..rows],
        ids(rows),
    )
    .unwrap()
}

/// (n, dim, data) with n in 2..40 and dim in 1..12. Values are coarse so ties occur.
fn small_matrix() -> impl Strategy<Value = (usize, usize, Vec<f32>)> {
    (2usize..40, 1usize..12).prop_flat_map(|(n, d)| {
        (
            Just(n),
            Just(d),
            prop::collection::vec((-4i8..=4).prop_map(|v| v as f32 * 0.5), n * d),
        )
    })
}

fn neighbor_case() -> impl Strategy<Value = (NeighborList, Vec<u8>)> {
    (small_matrix(), any::<u64>()).prop_flat_map(|((n, d, data), _)| {
        let m = matrix(n, d, data);
        (1usize..n).prop_flat_map(move |k| {
            let nl = knn_exact(&m, k, Metric::Cosine, true).unwrap();
            (Just(nl), prop::collection::vec(0u8..=1, n))
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn split_is_a_partition(n in 3usize..2000, seed in any::<u64>(), thirds in any::<bool>()) {
        let ratios = if thirds { [0.4, 0.3, 0.3] } else { DEFAULT_RATIOS };
        let profiles: Vec<Profile> = ids(n).into_iter().map(|id| Profile::new(id, "a", "b", "c", "d")).collect();
        let tr = (ratios[0] * n as f64 + 1e-9).floor() as usize;
        let va = (ratios[1] * n as f64 + 1e-9).floor() as usize;
        let result = split_corpus(&profiles, ratios, seed, None);
        if tr == 0 || va == 0 || tr + va == n {
            prop_assert!(matches!(result, Err(Error::Size(_))), "n = {} should be too small", n);
            return Ok(());
        }
        let s = result.unwrap();
        prop_assert_eq!(s.sizes(), [tr, va, n - tr - va]);
        let all: HashSet<&String> = s.train.iter().chain(&s.validation).chain(&s.test).collect();
        prop_assert_eq!(all.len(), n);
        prop_assert_eq!(split_corpus(&profiles, ratios, seed, None).unwrap(), s);
    }

    #[test]
    fn split_sizes_never_exceed_n(n in 0usize..5000, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (a, b) = (a * 0.5, b * 0.5);
        if let Ok(sizes) = split_sizes(n, [a, b, 1.0 - a - b]) {
            prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        }
    }

    #[test]
    fn consistency_bounded_and_flip_symmetric((nl, y) in neighbor_case()) {
        let ids = nl.index_order.clone();
        let d = DecisionVector::new("y", y.clone(), ids.clone()).unwrap();
        let flipped = DecisionVector::new("1-y", y.iter().map(|v| 1 - v).collect(), ids.clone()).unwrap();
        let c = consistency(&d, &nl).unwrap().score;
        prop_assert!((0.0..=1.0).contains(&c));
        let cf = consistency(&flipped, &nl).unwrap().score;
        prop_assert!((c - cf).abs() <= 1e-12);
        let constant = DecisionVector::new("c", vec![y[0]; y.len()], ids).unwrap();
        prop_assert_eq!(consistency(&constant, &nl).unwrap().score, 1.0);
    }

    #[test]
    fn batched_matches_exact((n, d, data) in small_matrix(), batch in 1usize..50, euclid in any::<bool>()) {
        let m = matrix(n, d, data);
        let metric = if euclid { Metric::Euclidean } else { Metric::Cosine };
        let k = (n - 1).min(5);
        let exact = knn_exact(&m, k, metric, true).unwrap();
        prop_assert_eq!(knn_batched(&m, k, metric, true, batch).unwrap(), exact);
        let with_self = knn_exact(&m, n.min(5), metric, false).unwrap();
        prop_assert_eq!(knn_batched(&m, n.min(5), metric, false, batch).unwrap(), with_self);
    }

    #[test]
    fn similarity_symmetric(a in prop::collection::vec(-10f32..10.0, 1..64), seed in any::<u64>()) {
        let b: Vec<f32> = a.iter().enumerate().map(|(i, v)| v * ((seed >> (i % 64)) & 1) as f32 - 0.5).collect();
        for metric in [Metric::Cosine, Metric::Euclidean] {
            prop_assert_eq!(
                pairwise_similarity(&a, &b, metric).unwrap(),
                pairwise_similarity(&b, &a, metric).unwrap()
            );
        }
        let c = pairwise_similarity(&a, &b, Metric::Cosine).unwrap();
        prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&c));
    }

    #[test]
    fn cosine_scale_invariant(a in prop::collection::vec(-10f32..10.0, 1..64), s in 0.01f32..100.0) {
        let b: Vec<f32> = a.iter().map(|v| v * s).collect();
        let c = pairwise_similarity(&a, &b, Metric::Cosine).unwrap();
        if a.iter().any(|v| *v != 0.0) {
            prop_assert!((c - 1.0).abs() < 1e-5);
        } else {
            prop_assert_eq!(c, 0.0);
        }
    }

    #[test]
    fn hash_embedding_unit_or_zero(text in "[a-z ]{0,80}", d in 1usize..64, seed in any::<u64>()) {
        let v = hash_embed_field(&text, d, seed);
        prop_assert_eq!(v.len(), d);
        let norm: f64 = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        prop_assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-5);
        prop_assert_eq!(hash_embed_field(&text, d, seed), v);
    }

    #[test]
    fn metrics_stay_in_unit_interval(pairs in prop::collection::vec((0u8..=1, 0u8..=1), 1..100)) {
        let ids = ids(pairs.len());
        let p = DecisionVector::new("p", pairs.iter().map(|x| x.0).collect(), ids.clone()).unwrap();
        let t = DecisionVector::new("t", pairs.iter().map(|x| x.1).collect(), ids).unwrap();
        for avg in [Averaging::Binary, Averaging::Macro, Averaging::Weighted] {
            let m = classification_metrics(&p, &t, avg).unwrap();
            for v in [m.precision, m.recall, m.f1, m.accuracy] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert_eq!(m.confusion.total(), pairs.len());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn neighbor_list_json_round_trip((nl, _) in neighbor_case()) {
        prop_assert_eq!(NeighborList::from_json(&nl.to_json().unwrap()).unwrap(), nl);
    }

    #[test]
    fn binary_matrix_round_trip(n in 1usize..20, d in 1usize..8, seed in any::<u32>()) {
        let data: Vec<f32> = (0..n * d * 5).map(|i| ((i as u32).wrapping_mul(2654435761) ^ seed) as f32 / 1e9).collect();
        let m = EmbeddingMatrix::canonical(data, d, ids(n)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.faem");
        write_matrix_binary(&path, &m).unwrap();
        prop_assert_eq!(load_matrix(&path).unwrap(), m);
    }
}
