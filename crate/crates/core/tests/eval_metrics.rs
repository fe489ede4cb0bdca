mod support;

use cmaf::eval::metrics::{average_precision, precision_at_k, RankedItem, Ranking};
use cmaf::eval::{exact_stimulus_rate, retrieve, CorpusTrack, Distance, RetrievalQuery};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::oracles::{ap_brute, permutations, precision_brute};

/// Every ordering of every relevance multiset up to eight items.
#[test]
fn metrics_match_enumeration() {
    let mut checked = 0usize;
    for n in 1..=8usize {
        for relevant in 0..=n {
            let base: Vec<bool> = (0..n).map(|i| i < relevant).collect();
            for perm in permutations(&base) {
                assert_eq!(average_precision(&perm), ap_brute(&perm), "{perm:?}");
                for k in 1..=n + 2 {
                    assert_eq!(precision_at_k(&perm, k).unwrap(), precision_brute(&perm, k), "{perm:?} k={k}");
                }
                checked += 1;
            }
        }
    }
    assert!(checked > 40_000);
}

fn ranking_from(scores: &[f64], relevant: &[bool]) -> Ranking {
    Ranking::new(
        scores
            .iter()
            .zip(relevant)
            .enumerate()
            .map(|(i, (&score, &relevant))| RankedItem {
                track_id: i as u16 + 1,
                score,
                relevant,
            })
            .collect(),
    )
}

proptest! {
    #[test]
    fn ranking_ignores_input_order(
        items in prop::collection::vec((0u8..6, any::<bool>()), 1..12),
        rot in 0usize..12,
    ) {
        let scores: Vec<f64> = items.iter().map(|x| x.0 as f64 * 0.5).collect();
        let rel: Vec<bool> = items.iter().map(|x| x.1).collect();
        let a = ranking_from(&scores, &rel);
        let mut shuffled = a.items.clone();
        let r = rot % shuffled.len();
        shuffled.rotate_left(r);
        shuffled.reverse();
        prop_assert_eq!(Ranking::new(shuffled), a);
    }

    #[test]
    fn ap_in_unit_interval(rel in prop::collection::vec(any::<bool>(), 1..40)) {
        match average_precision(&rel) {
            Some(ap) => prop_assert!((0.0..=1.0).contains(&ap)),
            None => prop_assert!(rel.iter().all(|r| !r)),
        }
    }

    #[test]
    fn hits_in_top_k_grow_with_k(rel in prop::collection::vec(any::<bool>(), 1..30)) {
        let mut last = 0.0;
        for k in 1..=rel.len() {
            let hits = precision_at_k(&rel, k).unwrap() * k as f64;
            prop_assert!(hits + 1e-9 >= last);
            last = hits;
        }
    }

    #[test]
    fn all_relevant_first_gives_perfect_ap(r in 1usize..10, extra in 0usize..10) {
        let rel: Vec<bool> = (0..r + extra).map(|i| i < r).collect();
        prop_assert_eq!(average_precision(&rel), Some(1.0));
    }
}

fn random_corpus(rng: &mut ChaCha8Rng, n: usize, segs: usize, d: usize) -> Vec<CorpusTrack> {
    (0..n)
        .map(|i| CorpusTrack {
            track_id: i as u16 + 1,
            tag: (i % 2) as u8,
            segments: (0..segs).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
        })
        .collect()
}

#[test]
fn exact_stimulus_null_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 20;
    let corpus = random_corpus(&mut rng, n, 3, 4);
    let queries: Vec<RetrievalQuery> = (0..2000)
        .map(|q| RetrievalQuery {
            segments: (0..3).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
            label: 0,
            track_id: (q % n) as u16 + 1,
        })
        .collect();
    let rate = exact_stimulus_rate(&queries, &corpus, 1, Distance::Euclidean).unwrap();
    let p = 1.0 / n as f64;
    let sd = (p * (1.0 - p) / queries.len() as f64).sqrt();
    assert!((rate - p).abs() < 4.0 * sd, "rate {rate} vs {p}");
    let mut last = 0.0;
    for k in [1, 2, 5, 10, 20] {
        let r = exact_stimulus_rate(&queries, &corpus, k, Distance::Euclidean).unwrap();
        assert!(r >= last);
        last = r;
    }
    assert_eq!(last, 1.0);
}

#[test]
fn own_track_ranks_first_when_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let corpus = random_corpus(&mut rng, 12, 5, 6);
    for t in &corpus {
        let q = RetrievalQuery {
            segments: t.segments.clone(),
            label: t.tag,
            track_id: t.track_id,
        };
        for dist in [Distance::Euclidean, Distance::Cosine] {
            let r = retrieve(&q, &corpus, dist).unwrap();
            assert_eq!(r.rank_of(t.track_id), Some(1));
        }
    }
}
