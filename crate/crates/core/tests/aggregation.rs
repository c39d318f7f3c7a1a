use ctseg::inference::{aggregate_scan, longest_run, DEFAULT_K};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Longest all-true window, by trying every window.
fn oracle_longest(f: &[bool]) -> usize {
    let mut best = 0;
    for i in 0..f.len() {
        for j in i + 1..=f.len() {
            if f[i..j].iter().all(|&b| b) {
                best = best.max(j - i);
            }
        }
    }
    best
}

fn oracle_verdict(f: &[bool], k: usize) -> bool {
    f.len() >= k && (0..=f.len() - k).any(|i| f[i..i + k].iter().all(|&b| b))
}

fn indexed(f: &[bool]) -> Vec<(u32, bool)> {
    f.iter().enumerate().map(|(i, &b)| (i as u32, b)).collect()
}

#[test]
fn exhaustive_up_to_length_20() {
    let mut checked = 0u64;
    for len in 0..=20usize {
        for bits in 0u32..(1u32 << len) {
            let f: Vec<bool> = (0..len).map(|i| bits >> i & 1 == 1).collect();
            let p = aggregate_scan("s", &indexed(&f), DEFAULT_K).unwrap();
            assert_eq!(p.positive, oracle_verdict(&f, DEFAULT_K), "{f:?}");
            // The quadratic window oracle is only needed where runs can be long.
            if len <= 12 || bits % 7 == 0 {
                assert_eq!(p.longest_run, oracle_longest(&f), "{f:?}");
            }
            assert_eq!(p.positive, p.longest_run >= DEFAULT_K);
            checked += 1;
        }
    }
    assert_eq!(checked, (1 << 21) - 1);
}

#[test]
fn random_length_300() {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    for _ in 0..1000 {
        let density = rng.random_range(0.5..0.99);
        let f: Vec<bool> = (0..300).map(|_| rng.random_bool(density)).collect();
        let p = aggregate_scan("s", &indexed(&f), DEFAULT_K).unwrap();
        assert_eq!(p.longest_run, oracle_longest(&f));
        assert_eq!(p.positive, oracle_verdict(&f, DEFAULT_K));
    }
}

#[test]
fn fifteen_and_fourteen_boundaries() {
    for start in [0usize, 7, 85] {
        let mut f = vec![false; 100];
        f[start..start + 15].iter_mut().for_each(|b| *b = true);
        assert!(aggregate_scan("s", &indexed(&f), 15).unwrap().positive);
        f[start + 14] = false;
        let p = aggregate_scan("s", &indexed(&f), 15).unwrap();
        assert!(!p.positive);
        assert_eq!(p.longest_run, 14);
    }
}

#[test]
fn gaps_in_indices_are_allowed_but_order_is_not() {
    assert!(
        aggregate_scan("s", &[(0, true), (5, true), (9, false)], 2)
            .unwrap()
            .positive
    );
    assert!(aggregate_scan("s", &[(0, true), (5, true), (5, false)], 2).is_err());
}

proptest! {
    #[test]
    fn flipping_to_positive_never_loses_a_positive_verdict(
        f in proptest::collection::vec(any::<bool>(), 0..60), i in 0usize..60, k in 1usize..20
    ) {
        let before = aggregate_scan("s", &indexed(&f), k).unwrap().positive;
        let mut g = f.clone();
        if let Some(b) = g.get_mut(i) { *b = true; }
        let after = aggregate_scan("s", &indexed(&g), k).unwrap().positive;
        prop_assert!(!before || after);
    }

    #[test]
    fn negative_padding_is_neutral(
        f in proptest::collection::vec(any::<bool>(), 0..60), pre in 0usize..10, post in 0usize..10, k in 1usize..20
    ) {
        let mut g = vec![false; pre];
        g.extend(&f);
        g.extend(vec![false; post]);
        let a = aggregate_scan("s", &indexed(&f), k).unwrap();
        let b = aggregate_scan("s", &indexed(&g), k).unwrap();
        prop_assert_eq!(a.positive, b.positive);
        prop_assert_eq!(longest_run(&f), longest_run(&g));
    }
}
