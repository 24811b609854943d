mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::{rng, sentence};
use manidecomp::embedding::DEFAULT_EIGENVALUE_FLOOR;
use manidecomp::grouping::{self, CategoryDistanceMatrix};
use manidecomp::labeling::{ClassifierModel, ModelKind, TrainingMeta};
use manidecomp::scaling::{self, RileCodes};
use manidecomp::similarity::{self, Aggregation};
use manidecomp::{cosine_distance, Corpus, DomainScheme, EmbeddingStore, PartyDistanceMatrix, WhiteningTransform};
use proptest::prelude::*;

fn vector(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, dim).prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

/// Symmetric matrix with zero diagonal, entries in `(0.01, 1)`.
fn distances(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(0.01..1.0f64, n * (n - 1) / 2).prop_map(move |upper| {
        let mut d = vec![vec![0.0; n]; n];
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                d[i][j] = upper[k];
                d[j][i] = upper[k];
                k += 1;
            }
        }
        d
    })
}

fn party_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("P{i}")).collect()
}

fn party_matrix(d: &[Vec<f64>], tag: &str) -> PartyDistanceMatrix {
    PartyDistanceMatrix::from_fn(party_names(d.len()), tag, BTreeMap::new(), |i, j| Some(d[i][j]))
}

/// Codes drawn from a small pool, some sentences uncoded.
fn coded_sentences(max: usize) -> impl Strategy<Value = Vec<(usize, Option<usize>)>> {
    prop::collection::vec((0..3usize, prop::option::weighted(0.8, 0..6usize)), 1..max)
}

fn build_corpus(rows: &[(usize, Option<usize>)]) -> Corpus {
    let codes = ["101", "104", "201", "305", "503", "0"];
    Corpus::from_sentences(rows.iter().enumerate().map(|(k, (p, c))| {
        sentence(&format!("s{k}"), &format!("P{p}"), k as u64, c.map(|c| codes[c]))
    }))
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cosine_is_symmetric_and_scale_free(a in vector(6), b in vector(6), s in 0.01..100.0f64) {
        let ab = cosine_distance(&a, &b).unwrap();
        prop_assert_eq!(ab, cosine_distance(&b, &a).unwrap());
        let scaled: Vec<f64> = a.iter().map(|x| x * s).collect();
        prop_assert!((cosine_distance(&scaled, &b).unwrap() - ab).abs() <= 1e-12);
        prop_assert!((0.0..=2.0).contains(&ab));
    }

    #[test]
    fn whitening_a_whitened_sample_is_near_identity(seed in 0u64..1000) {
        let mut r = rng(seed);
        let dim = 5;
        let mut store = EmbeddingStore::new(dim).unwrap();
        for k in 0..60 {
            let z = common::normal_vec(&mut r, dim);
            let x: Vec<f64> = (0..dim).map(|i| z[i] * (i + 1) as f64 + z[0] * 0.5 + 2.0).collect();
            store.insert(format!("v{k}"), &x).unwrap();
        }
        let ids: Vec<&str> = store.ids().iter().map(String::as_str).collect();
        let w = WhiteningTransform::fit(&store, ids.iter().copied(), DEFAULT_EIGENVALUE_FLOOR).unwrap();
        let mut white = EmbeddingStore::new(dim).unwrap();
        for id in &ids {
            white.insert(*id, &w.apply(store.get(id).unwrap()).unwrap()).unwrap();
        }
        let again = WhiteningTransform::fit(&white, ids.iter().copied(), DEFAULT_EIGENVALUE_FLOOR).unwrap();
        let eye = WhiteningTransform::identity(dim);
        for (x, y) in again.transform.iter().zip(&eye.transform) {
            prop_assert!((x - y).abs() <= 1e-5);
        }
        for m in &again.mean {
            prop_assert!(m.abs() <= 1e-5);
        }
    }

    #[test]
    fn corpus_jsonl_round_trips(rows in coded_sentences(30)) {
        let corpus = build_corpus(&rows);
        let mut buf = Vec::new();
        corpus.write_jsonl(&mut buf).unwrap();
        let back = Corpus::read_jsonl(buf.as_slice()).unwrap();
        prop_assert_eq!(back.sentences(), corpus.sentences());
    }

    #[test]
    fn category_counts_sum_to_coded_sentences(rows in coded_sentences(40)) {
        let corpus = build_corpus(&rows);
        let coded = corpus.sentences().iter().filter(|s| s.code.is_some()).count();
        prop_assert_eq!(corpus.category_counts().values().sum::<usize>(), coded);
    }

    #[test]
    fn domain_slices_are_disjoint(rows in coded_sentences(40)) {
        let corpus = build_corpus(&rows);
        let scheme = DomainScheme::new(
            BTreeMap::from([
                ("a".to_string(), BTreeSet::from(["101".to_string(), "104".to_string()])),
                ("b".to_string(), BTreeSet::from(["201".to_string(), "305".to_string()])),
            ]),
            BTreeSet::from(["503".to_string()]),
        )
        .unwrap();
        for party in corpus.parties() {
            let slices = corpus.slice_by_domain(&scheme, party).unwrap();
            let own: BTreeSet<String> = corpus.party_sentences(party).unwrap().map(|s| s.id.clone()).collect();
            let mut seen = BTreeSet::new();
            for ids in slices.values() {
                for id in ids {
                    prop_assert!(own.contains(id));
                    prop_assert!(seen.insert(id.clone()), "{} in two domains", id);
                }
            }
        }
    }

    #[test]
    fn finer_cuts_refine_coarser_ones(d in distances(9)) {
        let codes: Vec<String> = (0..9).map(|i| format!("{}", 101 + i)).collect();
        let m = CategoryDistanceMatrix::new(codes.clone(), d.iter().flatten().copied().collect()).unwrap();
        let dg = grouping::average_linkage_cluster(&m);
        for k in 1..9 {
            let coarse = grouping::cut_dendrogram(&dg, k).unwrap();
            let fine = grouping::cut_dendrogram(&dg, k + 1).unwrap();
            prop_assert_eq!(coarse.len(), k);
            prop_assert_eq!(fine.len(), k + 1);
            for cluster in &fine.clusters {
                let parent = coarse.cluster_of(&cluster[0]);
                prop_assert!(cluster.iter().all(|c| coarse.cluster_of(c) == parent));
            }
        }
    }

    #[test]
    fn category_distance_lies_between_pair_extremes(seed in 0u64..1000) {
        let mut r = rng(seed);
        let (corpus, store) = common::random_corpus(&mut r, &["A", "B"], 15, &["101", "202"], 4);
        let w = WhiteningTransform::identity(4);
        let Some(p) = corpus.code_ids("101") else { return Ok(()) };
        let Some(q) = corpus.code_ids("202") else { return Ok(()) };
        let got = grouping::category_distance(&corpus, &store, &w, "101", "202").unwrap();
        let all: Vec<f64> = p
            .iter()
            .flat_map(|a| q.iter().map(|b| cosine_distance(store.get(a).unwrap(), store.get(b).unwrap()).unwrap()))
            .collect();
        let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(got >= lo - 1e-12 && got <= hi + 1e-12);
    }

    #[test]
    fn softmax_sums_to_one_and_ignores_row_shifts(
        w in prop::collection::vec(-5.0..5.0f64, 3 * 5),
        shift in prop::collection::vec(-5.0..5.0f64, 5),
        x in prop::collection::vec(-3.0..3.0f64, 4),
    ) {
        let model = |weights: Vec<f64>| ClassifierModel {
            classes: vec!["a".into(), "b".into(), "c".into()],
            dim: 4,
            weights,
            meta: TrainingMeta {
                kind: ModelKind::LogisticRegression,
                epochs: 0,
                learning_rate: 0.1,
                final_learning_rate: 0.1,
                l2: 0.0,
                seed: None,
                n_instances: 0,
                final_loss: None,
            },
        };
        let base = model(w.clone());
        let p = base.probabilities(&x).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let shifted: Vec<f64> = w.iter().enumerate().map(|(k, v)| v + shift[k % 5]).collect();
        let moved = model(shifted);
        let q = moved.probabilities(&x).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
        // a shift can only reorder near-ties
        let s = base.scores(&x).unwrap();
        let mut sorted = s.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if sorted[0] - sorted[1] > 1e-9 {
            prop_assert_eq!(base.predict_one(&x).unwrap(), moved.predict_one(&x).unwrap());
        }
    }

    #[test]
    fn aggregate_lies_between_domain_extremes(ds in prop::collection::vec(distances(5), 1..5)) {
        let ms: Vec<PartyDistanceMatrix> =
            ds.iter().enumerate().map(|(k, d)| party_matrix(d, &format!("d{k}"))).collect();
        let agg = similarity::aggregate_matrix(&ms, Aggregation::Unweighted).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let vals: Vec<f64> = ds.iter().map(|d| d[i][j]).collect();
                let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let v = agg.get(i, j).unwrap();
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn mds_and_mantel_ignore_party_order(d in distances(6), e in distances(6), perm in Just((0..6).collect::<Vec<usize>>()).prop_shuffle()) {
        let a = party_matrix(&d, "a");
        let b = party_matrix(&e, "b");
        let names = party_names(6);
        let order: Vec<String> = perm.iter().map(|&i| names[i].clone()).collect();
        let a2 = a.reordered(&order).unwrap();
        let s1 = scaling::classical_mds_axis1(&a).unwrap();
        let s2 = scaling::classical_mds_axis1(&a2).unwrap();
        for p in &names {
            prop_assert!((s1.coordinate[p] - s2.coordinate[p]).abs() <= 1e-9);
        }
        let m1 = scaling::mantel(&a, &b, 99, 1).unwrap();
        let m2 = scaling::mantel(&a2, &b, 99, 1).unwrap();
        prop_assert!((m1.r - m2.r).abs() <= 1e-12);
        prop_assert_eq!(m1.p_value, m2.p_value);
    }

    #[test]
    fn mds_is_homogeneous(d in distances(5), c in 0.1..10.0f64) {
        let s1 = scaling::classical_mds_axis1(&party_matrix(&d, "a")).unwrap();
        let scaled: Vec<Vec<f64>> = d.iter().map(|r| r.iter().map(|v| v * c).collect()).collect();
        let s2 = scaling::classical_mds_axis1(&party_matrix(&scaled, "a")).unwrap();
        for (x, y) in s1.coordinates().iter().zip(s2.coordinates()) {
            prop_assert!((x * c - y).abs() <= 1e-9 * c.max(1.0));
        }
    }

    #[test]
    fn rile_ignores_duplication(rows in coded_sentences(40)) {
        let corpus = build_corpus(&rows);
        let n = rows.len();
        let doubled = build_corpus(&[rows.clone(), rows].concat());
        let codes = RileCodes::default();
        for party in corpus.parties() {
            let Ok(a) = scaling::rile(&corpus, party, &codes) else { continue };
            prop_assert_eq!(a, scaling::rile(&doubled, party, &codes).unwrap());
        }
        prop_assert_eq!(doubled.len(), 2 * n);
    }

    #[test]
    fn mantel_is_affine_invariant(d in distances(5), e in distances(5), alpha in 0.1..10.0f64, beta in 0.0..5.0f64) {
        let a = party_matrix(&d, "a");
        let b = party_matrix(&e, "b");
        let moved: Vec<Vec<f64>> = d
            .iter()
            .enumerate()
            .map(|(i, r)| r.iter().enumerate().map(|(j, v)| if i == j { 0.0 } else { alpha * v + beta }).collect())
            .collect();
        let m1 = scaling::mantel(&a, &b, 0, 0).unwrap();
        let m2 = scaling::mantel(&party_matrix(&moved, "a"), &b, 0, 0).unwrap();
        prop_assert!((m1.r - m2.r).abs() <= 1e-12);
        prop_assert!((m1.p_value - m2.p_value).abs() <= 1.0 / 120.0 + 1e-12);
    }

    #[test]
    fn pearson_is_affine_invariant(
        xy in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 3..20),
        alpha in 0.1..10.0f64,
        beta in -5.0..5.0f64,
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
        let Ok(base) = scaling::pearson(&x, &y) else { return Ok(()) };
        let moved: Vec<f64> = x.iter().map(|v| alpha * v + beta).collect();
        let r = scaling::pearson(&moved, &y).unwrap();
        prop_assert!((base.r - r.r).abs() <= 1e-9);
        let flipped: Vec<f64> = x.iter().map(|v| -alpha * v + beta).collect();
        prop_assert!((base.r + scaling::pearson(&flipped, &y).unwrap().r).abs() <= 1e-9);
    }
}
