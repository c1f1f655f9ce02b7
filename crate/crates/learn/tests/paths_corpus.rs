use negotiation::automata::{minimize_negotiation, neg_equiv};
use negotiation::generate::{generate, GenParams};
use negotiation_learn::paths::{learn_with, Options};
use negotiation_learn::Teacher;

#[test]
fn converges_on_generated_targets() {
    for seed in 0..60u64 {
        let target = generate(&GenParams::new(1 + (seed % 4) as usize, 4 + (seed % 12) as usize, 0.3, 0.5, seed)).unwrap();
        let min = minimize_negotiation(&target).unwrap();
        let mut t = Teacher::new(target.clone()).unwrap();
        let out = learn_with(&mut t, &Options::checked()).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        assert!(neg_equiv(&out.hypothesis, &target).unwrap(), "seed {seed}");
        assert_eq!(out.hypothesis.num_nodes(), min.num_nodes(), "seed {seed}");
        assert!(t.stats().equivalence_total <= min.size(), "seed {seed}");
    }
}
