use proptest::prelude::*;
use webaug::evalkit::{ndcg, parse_ndcg_query, RankedList};

/// Direct evaluation with an explicit logarithm base.
fn reference_ndcg(grades: &[u8], depth: usize, log: fn(f64) -> f64) -> f64 {
    let dcg = |g: &[u8]| -> f64 {
        let mut total = 0.0;
        for (j, &r) in g.iter().enumerate().take(depth) {
            total += (2f64.powi(r as i32) - 1.0) / log(j as f64 + 2.0);
        }
        total
    };
    let mut ideal = grades.to_vec();
    ideal.sort_by(|a, b| b.cmp(a));
    let best = dcg(&ideal);
    if best == 0.0 {
        0.0
    } else {
        dcg(grades) / best
    }
}

#[test]
fn worked_example() {
    let list = RankedList::new(vec![2, 3, 0]).unwrap();
    let got = ndcg(&list, 3).unwrap();
    // (3 + 7/ln 3) / (7 + 3/ln 3), written out by hand
    let by_hand = (3.0 / 2f64.ln() + 7.0 / 3f64.ln()) / (7.0 / 2f64.ln() + 3.0 / 3f64.ln());
    assert!((got - by_hand).abs() < 1e-12);
    assert!((got - reference_ndcg(&[2, 3, 0], 3, f64::ln)).abs() < 1e-12);
    assert!((got - reference_ndcg(&[2, 3, 0], 3, f64::log2)).abs() < 1e-12);
    assert!((got - 0.834).abs() < 1e-3);
}

#[test]
fn ideal_lists_score_one() {
    for grades in [
        vec![3],
        vec![3, 2, 0],
        vec![3, 3, 3, 2, 2, 0, 0],
        vec![2, 0, 0, 0],
    ] {
        let list = RankedList::new(grades).unwrap();
        for d in 1..10 {
            assert!((ndcg(&list, d).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn query_lines_parse() {
    let (list, d) = parse_ndcg_query("3,0,2 2").unwrap();
    assert_eq!((list.grades(), d), (&[3, 0, 2][..], 2));
}

fn grades() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(prop::sample::select(vec![0u8, 2, 3]), 1..30)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn bounded_and_base_independent(g in grades(), depth in 1usize..40) {
        let got = ndcg(&RankedList::new(g.clone()).unwrap(), depth).unwrap();
        prop_assert!((0.0..=1.0).contains(&got));
        prop_assert!((got - reference_ndcg(&g, depth, f64::ln)).abs() < 1e-12);
        prop_assert!((got - reference_ndcg(&g, depth, f64::log2)).abs() < 1e-12);
    }
}
