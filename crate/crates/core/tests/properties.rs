use humbert::corpus::{build_entailment_pairs, SentenceSet};
use humbert::read::{locate, subcontext, SimilarityArray};
use humbert::reply::{rerank, HistoryCache, Speaker};
use humbert::seek::{select_case, LogitVector};
use humbert::textnum::{
    attention, build_tfidf, cosine_similarity, softmax_rows, truncated_svd, DenseMatrix, DenseVector, SvdOptions,
};
use humbert_testkit::oracle;
use proptest::prelude::*;

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1..=max_rows, 1..=max_cols)
        .prop_flat_map(|(r, c)| prop::collection::vec(prop::collection::vec(-5.0..5.0f64, c), r))
}

fn vector_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1..=8usize).prop_flat_map(|n| {
        (
            prop::collection::vec(-10.0..10.0f64, n),
            prop::collection::vec(-10.0..10.0f64, n),
        )
    })
}

proptest! {
    #[test]
    fn cosine_matches_oracle((a, b) in vector_pair()) {
        let got = cosine_similarity(&a, &b).unwrap();
        prop_assert!(oracle::close(got, oracle::cosine(&a, &b), 1e-6, 1e-12));
        prop_assert!((-1.0..=1.0).contains(&got));
    }

    #[test]
    fn softmax_matches_oracle(m in matrix(8, 8)) {
        let got = softmax_rows(&DenseMatrix::from_rows(&m).unwrap()).unwrap();
        for (r, row) in m.iter().enumerate() {
            let want = oracle::softmax(row);
            let sum: f64 = got.row(r).iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9);
            for (g, w) in got.row(r).iter().zip(&want) {
                prop_assert!(oracle::close(*g, *w, 1e-6, 1e-15));
            }
        }
    }

    #[test]
    fn attention_matches_oracle(
        (q, k, v) in (1..=6usize, 1..=6usize, 1..=6usize, 1..=6usize).prop_flat_map(|(n, m, d, dv)| (
            prop::collection::vec(prop::collection::vec(-2.0..2.0f64, d), n),
            prop::collection::vec(prop::collection::vec(-2.0..2.0f64, d), m),
            prop::collection::vec(prop::collection::vec(-2.0..2.0f64, dv), m),
        ))
    ) {
        let got = attention(
            &DenseMatrix::from_rows(&q).unwrap(),
            &DenseMatrix::from_rows(&k).unwrap(),
            &DenseMatrix::from_rows(&v).unwrap(),
        ).unwrap();
        let want = oracle::attention(&q, &k, &v);
        for (r, row) in want.iter().enumerate() {
            for (c, w) in row.iter().enumerate() {
                prop_assert!(oracle::close(got.get(r, c), *w, 1e-6, 1e-12));
            }
        }
    }

    #[test]
    fn tfidf_matches_oracle(
        docs in prop::collection::vec(prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e", "f"]), 1..8), 1..6)
    ) {
        let docs: Vec<Vec<String>> = docs.into_iter().map(|d| d.into_iter().map(String::from).collect()).collect();
        let model = build_tfidf(&docs).unwrap();
        let want = oracle::tfidf(&docs);
        for ((j, t), w) in &want {
            let got = model.entry(*j, t).unwrap();
            prop_assert!(oracle::close(got, *w, 1e-6, 1e-15));
        }
        let nonzero = model.doc_matrix().values().iter().filter(|v| **v != 0.0).count();
        prop_assert_eq!(nonzero, want.values().filter(|v| **v != 0.0).count());
    }

    #[test]
    fn svd_matches_spectrum_and_eckart_young(m in matrix(8, 8), k_frac in 0.0..1.0f64) {
        let full = m.len().min(m[0].len());
        let k = 1 + ((full - 1) as f64 * k_frac) as usize;
        let a = DenseMatrix::from_rows(&m).unwrap();
        let f = truncated_svd(&a, k, SvdOptions::default()).unwrap();
        let sv = oracle::singular_values(&m);
        for (g, w) in f.singular.iter().zip(&sv) {
            prop_assert!(oracle::close(*g, *w, 1e-6, 1e-9));
        }
        let err = a.frobenius_distance_sq(&f.reconstruct()).unwrap();
        let discarded = oracle::discarded_spectrum(&m, k);
        prop_assert!(oracle::close(err, discarded, 1e-6, 1e-9 * oracle::frobenius_sq(&m).max(1.0)));
    }

    #[test]
    fn entailment_pairs_count_m(n in 2..60usize) {
        let s = SentenceSet {
            case_id: "c".into(),
            sentences: (0..n).map(|i| format!("sentence number {i}")).collect(),
        };
        let pairs = build_entailment_pairs(&s).unwrap();
        prop_assert_eq!(pairs.len(), n - 1);
        for (j, p) in pairs.iter().enumerate() {
            prop_assert_eq!((p.premise_index, p.hypothesis_index), (j, j + 1));
        }
    }

    #[test]
    fn select_case_invariant_under_monotone_maps(
        logits in prop::collection::vec(-20.0..20.0f64, 1..20),
        scale in 0.01..10.0f64,
        shift in -50.0..50.0f64,
    ) {
        let ids: Vec<String> = (0..logits.len()).map(|i| format!("c{i}")).collect();
        let (base, _) = select_case(&LogitVector(logits.clone()), &ids).unwrap();
        prop_assert_eq!(base, oracle::argmax_scan(&logits));
        let maps: [&dyn Fn(f64) -> f64; 3] = [
            &|x| scale * x + shift,
            &|x| x.exp(),
            &|x| x.powi(3) + x,
        ];
        for f in maps {
            let t: Vec<f64> = logits.iter().map(|x| f(*x)).collect();
            prop_assert_eq!(select_case(&LogitVector(t), &ids).unwrap().0, base);
        }
    }

    #[test]
    fn locate_and_subcontext(cs in prop::collection::vec(-1.0..1.0f64, 1..40), w in 0..6usize) {
        let j = locate(&SimilarityArray(cs.clone())).unwrap();
        prop_assert_eq!(j, oracle::argmax_scan(&cs));
        let s = SentenceSet {
            case_id: "c".into(),
            sentences: (0..cs.len()).map(|i| format!("s{i}")).collect(),
        };
        for center in 0..cs.len() {
            let sub = subcontext(&s, center, w).unwrap();
            prop_assert!(sub.start <= center && center <= sub.end);
            prop_assert_eq!(sub.start, center.saturating_sub(w));
            prop_assert_eq!(sub.end, (center + w).min(cs.len() - 1));
            let joined: Vec<String> = sub.indices().map(|i| format!("s{i}")).collect();
            prop_assert_eq!(sub.text, joined.join(" "));
        }
    }

    #[test]
    fn rerank_matches_brute_force(
        (hist, cands) in (1..=6usize).prop_flat_map(|d| (
            prop::collection::vec(prop::collection::vec(-1.0..1.0f64, d), 1..8),
            prop::collection::vec(prop::collection::vec(-1.0..1.0f64, d), 1..8),
        ))
    ) {
        let mut h = HistoryCache::new(hist.len());
        for (i, e) in hist.iter().enumerate() {
            h.push(format!("h{i}"), Speaker::Human, DenseVector(e.clone()));
        }
        let emb: Vec<DenseVector> = cands.iter().cloned().map(DenseVector).collect();
        let ranking = rerank(&emb, &h).unwrap();
        let rho: Vec<f64> = cands
            .iter()
            .map(|c| hist.iter().map(|e| oracle::cosine(e, c)).sum::<f64>() / hist.len() as f64)
            .collect();
        for (g, w) in ranking.rho.iter().zip(&rho) {
            prop_assert!(oracle::close(*g, *w, 1e-9, 1e-12));
        }
        prop_assert_eq!(ranking.selected, oracle::argmax_scan(&ranking.rho));
        prop_assert!(oracle::close(ranking.rho[ranking.selected], rho.iter().cloned().fold(f64::MIN, f64::max), 1e-9, 1e-12));
    }

    #[test]
    fn history_is_fifo(r in 1..=8usize, n in 0..30usize) {
        let mut h = HistoryCache::new(r);
        let mut model: std::collections::VecDeque<String> = Default::default();
        for i in 0..n {
            let t = format!("u{i}");
            h.push(t.clone(), if i % 2 == 0 { Speaker::Human } else { Speaker::Agent }, DenseVector(vec![i as f64]));
            model.push_back(t);
            if model.len() > r {
                model.pop_front();
            }
            prop_assert_eq!(h.texts(), model.iter().map(String::as_str).collect::<Vec<_>>());
        }
    }
}
