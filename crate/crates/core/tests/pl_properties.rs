mod common;

use std::collections::BTreeSet;

use common::{naive_pmf, permutations, pmf};
use dynrank::pl::{self, StrengthVector};
use dynrank::Ranking;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn strengths(max_n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, 2..=max_n)
}

fn set_probability_by_enumeration(f: &[f64], set: &BTreeSet<usize>) -> f64 {
    let k = set.len();
    permutations(f.len())
        .iter()
        .filter(|o| o[..k].iter().all(|t| set.contains(t)))
        .map(|o| naive_pmf(f, o))
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pmf_sums_to_one(f in strengths(6)) {
        let total: f64 = permutations(f.len()).iter().map(|o| pmf(&f, o)).sum();
        prop_assert!((total - 1.0).abs() < 1e-10, "total {total}");
    }

    #[test]
    fn pmf_matches_product_form(f in strengths(6), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = pl::sample_ranking(&StrengthVector::from_dense(&f), &mut rng).unwrap();
        let direct = naive_pmf(&f, r.ordering());
        prop_assert!((pmf(&f, r.ordering()) - direct).abs() < 1e-12 * direct.max(1e-300).max(1.0));
    }

    #[test]
    fn shift_invariance(f in strengths(6), c in -50.0..50.0f64) {
        let n = f.len();
        let sv = StrengthVector::from_dense(&f);
        let r = Ranking::new((0..n).rev().collect()).unwrap();
        let a = pl::log_pmf(&r, &sv).unwrap();
        let b = pl::log_pmf(&r, &sv.shifted(c)).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn score_sums_to_zero_and_matches_finite_differences(f in strengths(6), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sv = StrengthVector::from_dense(&f);
        let r = pl::sample_ranking(&sv, &mut rng).unwrap();
        let s = pl::score(&r, &sv).unwrap();
        let total: f64 = s.iter().map(|(_, v)| v).sum();
        prop_assert!(total.abs() < 1e-10);
        for i in 0..f.len() {
            let h = 1e-5;
            let mut up = f.clone();
            up[i] += h;
            let mut down = f.clone();
            down[i] -= h;
            let fd = (pl::log_pmf(&r, &StrengthVector::from_dense(&up)).unwrap()
                - pl::log_pmf(&r, &StrengthVector::from_dense(&down)).unwrap()) / (2.0 * h);
            let g = s.get(i).unwrap();
            prop_assert!((g - fd).abs() <= 1e-6 * g.abs().max(1e-2), "team {i}: {g} vs {fd}");
        }
    }

    #[test]
    fn winner_score_is_positive_and_loser_score_negative(f in strengths(6)) {
        let n = f.len();
        let r = Ranking::new((0..n).collect()).unwrap();
        let s = pl::score(&r, &StrengthVector::from_dense(&f)).unwrap();
        prop_assert!(s.get(0).unwrap() > 0.0);
        prop_assert!(s.get(n - 1).unwrap() < 0.0);
    }

    #[test]
    fn exact_set_probabilities_match_enumeration(f in strengths(6), mask in 1u32..64) {
        let n = f.len();
        let set: BTreeSet<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        prop_assume!(!set.is_empty());
        let sv = StrengthVector::from_dense(&f);
        let exact = pl::top_k_set_probability_exact(&sv, &set, pl::DEFAULT_EXACT_CAP).unwrap();
        prop_assert!((exact - set_probability_by_enumeration(&f, &set)).abs() < 1e-10);
    }

    #[test]
    fn champion_probability_is_softmax(f in strengths(6)) {
        let sv = StrengthVector::from_dense(&f);
        let z: f64 = f.iter().map(|v| v.exp()).sum();
        for (i, v) in f.iter().enumerate() {
            let p = pl::champion_probability(&sv, i).unwrap();
            prop_assert!((p - v.exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn modal_ranking_is_the_argmax(f in strengths(6)) {
        let mut distinct = f.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
        prop_assume!(distinct.len() == f.len());
        let modal = pl::modal_ranking(&StrengthVector::from_dense(&f)).unwrap();
        let best = permutations(f.len())
            .into_iter()
            .max_by(|a, b| naive_pmf(&f, a).total_cmp(&naive_pmf(&f, b)))
            .unwrap();
        prop_assert_eq!(modal.ordering(), best.as_slice());
    }

    #[test]
    fn ranking_and_ordering_are_inverse(n in 2usize..10, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = pl::sample_ranking(&StrengthVector::from_dense(&vec![0.0; n]), &mut rng).unwrap();
        for (pos, &t) in r.ordering().iter().enumerate() {
            prop_assert_eq!(r.rank_of(t), Some(pos + 1));
            prop_assert_eq!(r.team_at(pos + 1), Some(t));
        }
    }
}

#[test]
fn monte_carlo_agrees_with_exact() {
    let f = [0.8, 0.3, 0.0, -0.2, -0.9, 0.4];
    let sv = StrengthVector::from_dense(&f);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for set in [BTreeSet::from([0]), BTreeSet::from([0, 1, 5]), BTreeSet::from([0, 1, 2, 5])] {
        let exact = pl::top_k_set_probability_exact(&sv, &set, pl::DEFAULT_EXACT_CAP).unwrap();
        let mc = pl::top_k_set_probability_mc(&sv, &set, 100_000, &mut rng).unwrap();
        assert!(
            (mc.value - exact).abs() < 3.0 * mc.std_error,
            "{set:?}: {} vs {exact} (se {})",
            mc.value,
            mc.std_error
        );
    }
}

#[test]
fn exact_enumeration_refuses_large_sets() {
    let sv = StrengthVector::from_dense(&[0.0; 12]);
    let set: BTreeSet<usize> = (0..9).collect();
    let err = pl::top_k_set_probability_exact(&sv, &set, pl::DEFAULT_EXACT_CAP).unwrap_err();
    assert!(matches!(err, dynrank::Error::Capacity(_)));
}

#[test]
fn extreme_strengths_stay_finite() {
    let f = [700.0, -700.0, 0.0];
    let r = Ranking::new(vec![1, 2, 0]).unwrap();
    let lp = pl::log_pmf(&r, &StrengthVector::from_dense(&f)).unwrap();
    assert!(lp.is_finite() && lp < -1000.0);
}
