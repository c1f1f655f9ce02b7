//! Small hand-built negotiations used in tests, examples and the CLI docs.

use crate::alphabet::{DistributedAlphabet, ProcSet};
use crate::model::{Negotiation, Node};

/// Builds a negotiation from names. Transitions are `(node, action, process, target)`.
pub fn build(
    processes: &[&str],
    actions: &[(&str, &[&str])],
    nodes: &[(&str, &[&str])],
    init: &str,
    fin: &str,
    transitions: &[(&str, &str, &str, &str)],
) -> Negotiation {
    let al = DistributedAlphabet::new(
        processes.iter().copied(),
        actions.iter().map(|(a, d)| (a.to_string(), d.iter().copied())),
    )
    .expect("fixture alphabet");
    let node_list: Vec<(String, ProcSet)> = nodes
        .iter()
        .map(|(n, d)| (n.to_string(), d.iter().map(|p| al.proc_id(p).expect("fixture process")).collect()))
        .collect();
    let pos = |x: &str| Node(nodes.iter().position(|(n, _)| *n == x).expect("fixture node") as u32);
    let mut neg = Negotiation::new(al.clone(), node_list, pos(init), pos(fin)).expect("fixture nodes");
    for (n, a, p, m) in transitions {
        neg.set_transition(pos(n), al.act_id(a).expect("fixture action"), al.proc_id(p).expect("fixture process"), pos(m));
    }
    neg
}

/// Two processes, `n0 -a-> n1 -b-> nf`.
pub fn ping() -> Negotiation {
    build(
        &["p", "q"],
        &[("a", &["p", "q"]), ("b", &["p", "q"])],
        &[("n0", &["p", "q"]), ("n1", &["p", "q"]), ("nf", &["p", "q"])],
        "n0",
        "nf",
        &[
            ("n0", "a", "p", "n1"),
            ("n0", "a", "q", "n1"),
            ("n1", "b", "p", "nf"),
            ("n1", "b", "q", "nf"),
        ],
    )
}

/// `c` splits `p` and `q`, which do `x` and `y` independently and meet again for `d`.
pub fn fork() -> Negotiation {
    build(
        &["p", "q"],
        &[("c", &["p", "q"]), ("x", &["p"]), ("y", &["q"]), ("d", &["p", "q"])],
        &[
            ("n0", &["p", "q"]),
            ("n1", &["p"]),
            ("n2", &["q"]),
            ("n3", &["p", "q"]),
            ("nf", &["p", "q"]),
        ],
        "n0",
        "nf",
        &[
            ("n0", "c", "p", "n1"),
            ("n0", "c", "q", "n2"),
            ("n1", "x", "p", "n3"),
            ("n2", "y", "q", "n3"),
            ("n3", "d", "p", "nf"),
            ("n3", "d", "q", "nf"),
        ],
    )
}

/// Two processes share `b` and accept with `e` exactly when the number of `b`s is a
/// multiple of 15.
pub fn mod15() -> Negotiation {
    let names: Vec<String> = (0..15).map(|i| format!("c{i}")).collect();
    let mut nodes: Vec<(&str, &[&str])> = names.iter().map(|n| (n.as_str(), &["p", "q"][..])).collect();
    nodes.push(("nf", &["p", "q"]));
    let mut trans: Vec<(String, String, String, String)> = Vec::new();
    for i in 0..15 {
        for p in ["p", "q"] {
            trans.push((names[i].clone(), "b".into(), p.into(), names[(i + 1) % 15].clone()));
        }
    }
    for p in ["p", "q"] {
        trans.push(("c0".into(), "e".into(), p.into(), "nf".into()));
    }
    let trans_ref: Vec<(&str, &str, &str, &str)> =
        trans.iter().map(|(a, b, c, d)| (a.as_str(), b.as_str(), c.as_str(), d.as_str())).collect();
    build(&["p", "q"], &[("b", &["p", "q"]), ("e", &["p", "q"])], &nodes, "c0", "nf", &trans_ref)
}
