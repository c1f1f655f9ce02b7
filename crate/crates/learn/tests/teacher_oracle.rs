use negotiation::generate::{generate, mutate, GenParams};
use negotiation::{Act, Negotiation};
use negotiation_learn::{EquivAnswer, Sign, Teacher};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Executions of `n` of length exactly `k`, with acceptance.
fn executions_of_len(n: &Negotiation, k: usize) -> Vec<(Vec<Act>, bool)> {
    let mut layer = vec![(n.initial_config(), Vec::new())];
    for _ in 0..k {
        layer = layer
            .into_iter()
            .flat_map(|(c, w)| {
                n.alphabet()
                    .acts()
                    .filter_map(|a| n.try_step(&c, a).map(|d| (d, [w.as_slice(), &[a]].concat())))
                    .collect::<Vec<_>>()
            })
            .collect();
    }
    layer.into_iter().map(|(c, w)| (w, n.is_final(&c))).collect()
}

/// The length-lexicographically least word accepted by exactly one side, by enumeration.
fn least_disagreement(a: &Negotiation, b: &Negotiation, max_len: usize) -> Option<Vec<Act>> {
    (0..=max_len).find_map(|k| {
        let mut words: Vec<Vec<Act>> = executions_of_len(a, k)
            .into_iter()
            .chain(executions_of_len(b, k))
            .filter(|(w, _)| a.member_exec(w) != b.member_exec(w))
            .map(|(w, _)| w)
            .collect();
        words.sort();
        words.into_iter().next()
    })
}

fn pair(seed: u64) -> (Negotiation, Negotiation) {
    let target = generate(&GenParams::new(1 + (seed % 3) as usize, 4 + (seed % 5) as usize, 0.3, 0.5, seed)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = mutate(&target, &mut rng);
    (target, h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn counterexamples_are_signed_shortest_and_least(seed in 0u64..10_000) {
        let (target, h) = pair(seed);
        let t = Teacher::new(target.clone()).unwrap();
        match t.equiv_uncounted(&h).unwrap() {
            EquivAnswer::Equivalent => {
                prop_assert_eq!(least_disagreement(&target, &h, 8), None);
            }
            EquivAnswer::Counterexample { sign, word } => {
                let expected = match sign {
                    Sign::Positive => (true, false),
                    Sign::Negative => (false, true),
                };
                prop_assert_eq!((target.member_exec(&word), h.member_exec(&word)), expected);
                if word.len() <= 8 {
                    prop_assert_eq!(least_disagreement(&target, &h, word.len()), Some(word));
                }
            }
        }
    }

    #[test]
    fn answers_are_deterministic(seed in 0u64..10_000) {
        let (target, h) = pair(seed);
        let first = Teacher::new(target.clone()).unwrap().equiv_uncounted(&h).unwrap();
        let second = Teacher::new(target).unwrap().equiv_uncounted(&h).unwrap();
        prop_assert_eq!(first, second);
    }

    #[test]
    fn caching_never_changes_answers(seed in 0u64..10_000, picks in proptest::collection::vec(0usize..64, 1..20)) {
        let (target, _) = pair(seed);
        let words: Vec<Vec<Act>> = (0..=6).flat_map(|k| executions_of_len(&target, k)).map(|(w, _)| w).collect();
        let mut t = Teacher::new(target.clone()).unwrap();
        for &i in &picks {
            let w = &words[i % words.len()];
            prop_assert_eq!(t.member_exec(w), target.member_exec(w));
        }
        prop_assert!(t.stats().membership_distinct <= t.stats().membership_total);
        prop_assert_eq!(t.stats().membership_total, picks.len());
    }
}
