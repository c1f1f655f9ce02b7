use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use negotiation::automata::minimize_negotiation;
use negotiation::fixtures;
use negotiation::generate::shuffle_nodes;
use negotiation::json::{parse, serialize};
use negotiation::Negotiation;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn neg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neg")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write(dir: &TempDir, name: &str, n: &Negotiation) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, serialize(n)).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn broken_fork() -> Negotiation {
    let mut n = fixtures::fork();
    let al = n.alphabet().clone();
    n.remove_transition(n.node_id("n3").unwrap(), al.act_id("d").unwrap(), al.proc_id("q").unwrap());
    n
}

#[test]
fn validate_and_sound() {
    let dir = TempDir::new().unwrap();
    let fork = write(&dir, "fork.json", &fixtures::fork());
    assert_eq!(code(&neg(&["validate", s(&fork)])), 0);
    let out = neg(&["sound", s(&fork)]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out).trim(), r#"{"sound":true}"#);

    let broken = write(&dir, "broken.json", &broken_fork());
    assert_eq!(code(&neg(&["validate", s(&broken)])), 1);
    let out = neg(&["sound", s(&broken), "--patterns"]);
    assert_eq!(code(&out), 1);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["sound"], false);
    assert!(v["configuration"].is_string());
    assert!(v["pattern"].is_object(), "{v}");
}

#[test]
fn equivalence_and_membership() {
    let dir = TempDir::new().unwrap();
    let fork = write(&dir, "fork.json", &fixtures::fork());
    let renamed = write(&dir, "fork_renamed.json", &shuffle_nodes(&fixtures::fork(), &mut ChaCha8Rng::seed_from_u64(1)));
    assert_eq!(code(&neg(&["equiv", s(&fork), s(&renamed)])), 0);

    let mut bigger = fixtures::fork();
    let al = bigger.alphabet().clone();
    for p in al.procs() {
        bigger.set_transition(bigger.init(), al.act_id("d").unwrap(), p, bigger.fin());
    }
    let bigger = write(&dir, "bigger.json", &bigger);
    let out = neg(&["equiv", s(&fork), s(&bigger)]);
    assert_eq!(code(&out), 1);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["word"], "d");
    assert_eq!(v["accepted_by"], "right");

    assert_eq!(code(&neg(&["member", s(&fork), "--exec", "c y x d"])), 0);
    assert_eq!(code(&neg(&["member", s(&fork), "--exec", "c x"])), 1);
    assert_eq!(code(&neg(&["member", s(&fork), "--path", "c@p x@p d@p"])), 0);
    assert_eq!(code(&neg(&["member", s(&fork), "--path", "c@q x@q"])), 2);
    assert_eq!(code(&neg(&["member", s(&fork), "--exec", "zz"])), 2);
}

#[test]
fn learn_both_modes_with_stats() {
    let dir = TempDir::new().unwrap();
    let fork = write(&dir, "fork.json", &fixtures::fork());
    let min = minimize_negotiation(&fixtures::fork()).unwrap();
    for mode in ["exec", "paths"] {
        let stats = dir.path().join(format!("{mode}.stats.json"));
        let trace = dir.path().join(format!("{mode}.trace.jsonl"));
        let learned = dir.path().join(format!("{mode}.json"));
        let out = neg(&["learn", s(&fork), "--mode", mode, "--stats", s(&stats), "--trace", s(&trace), "-o", s(&learned)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let text = std::fs::read_to_string(&stats).unwrap();
        let at: Vec<usize> = ["membership_total", "membership_distinct", "equivalence_total", "max_counterexample_len"]
            .iter()
            .map(|k| text.find(&format!("\"{k}\"")).expect("key present"))
            .collect();
        assert!(at.windows(2).all(|w| w[0] < w[1]), "{text}");
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(v["equivalence_total"].as_u64().unwrap() as usize <= min.num_nodes() + min.num_transitions());
        let lines = std::fs::read_to_string(&trace).unwrap();
        assert!(lines.lines().all(|l| serde_json::from_str::<serde_json::Value>(l).is_ok()));
        assert!(lines.contains(r#""query":"equiv""#));
        assert_eq!(code(&neg(&["equiv", s(&fork), s(&learned)])), 0);
    }
}

#[test]
fn learn_then_equiv_on_generated_targets() {
    let dir = TempDir::new().unwrap();
    for seed in 0..6u64 {
        let target = dir.path().join(format!("g{seed}.json"));
        let procs = (1 + seed % 3).to_string();
        let seed_arg = seed.to_string();
        assert_eq!(code(&neg(&["gen", "--procs", &procs, "--nodes", "8", "--seed", &seed_arg, "-o", s(&target)])), 0);
        for mode in ["exec", "paths"] {
            let learned = dir.path().join(format!("g{seed}.{mode}.json"));
            assert_eq!(code(&neg(&["learn", s(&target), "--mode", mode, "-o", s(&learned)])), 0);
            assert_eq!(code(&neg(&["equiv", s(&target), s(&learned)])), 0, "seed {seed} {mode}");
        }
    }
}

#[test]
fn generation_is_deterministic() {
    let a = neg(&["gen", "--procs", "4", "--nodes", "12", "--seed", "7"]);
    let b = neg(&["gen", "--procs", "4", "--nodes", "12", "--seed", "7"]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    assert!(parse(&stdout(&a)).unwrap().validate().is_empty());
    assert_eq!(code(&neg(&["gen", "--procs", "0", "--nodes", "5"])), 2);
}

#[test]
fn minimize_and_dot() {
    let dir = TempDir::new().unwrap();
    let fork = write(&dir, "fork.json", &fixtures::fork());
    let min = dir.path().join("min.json");
    assert_eq!(code(&neg(&["minimize", s(&fork), "-o", s(&min)])), 0);
    assert_eq!(parse(&std::fs::read_to_string(&min).unwrap()).unwrap().num_nodes(), 5);
    let broken = write(&dir, "broken.json", &broken_fork());
    assert_eq!(code(&neg(&["minimize", s(&broken)])), 1);
    let out = neg(&["dot", s(&fork)]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out).matches("label=\"{").count(), 5);
}

#[test]
fn bad_inputs_exit_two() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("missing.json");
    assert_eq!(code(&neg(&["validate", s(&missing)])), 2);
    let junk = dir.path().join("junk.json");
    std::fs::write(&junk, r#"{"processes":["p"],"extra":1}"#).unwrap();
    let out = neg(&["sound", s(&junk)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("junk.json"));
    assert_eq!(code(&neg(&["learn", s(&junk)])), 2);
    assert_eq!(code(&neg(&["frobnicate"])), 2);
}
