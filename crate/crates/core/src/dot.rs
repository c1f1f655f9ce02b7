//! Graphviz export. Nodes are records showing their domain; edges are labelled `a@p`.

use std::fmt::Write;

use crate::model::Negotiation;

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        if matches!(c, '"' | '\\' | '{' | '}' | '|' | '<' | '>') {
            out.push('\\');
        }
        out.push(c);
    }
    out
}

pub fn export_dot(n: &Negotiation) -> String {
    let al = n.alphabet();
    let mut s = String::from("digraph negotiation {\n  rankdir=LR;\n  node [shape=record];\n");
    for m in n.nodes() {
        let procs: Vec<&str> = n.dnode(m).iter().map(|p| al.proc_name(p)).collect();
        let extra = if m == n.init() {
            ", style=bold"
        } else if m == n.fin() {
            ", peripheries=2"
        } else {
            ""
        };
        let _ = writeln!(
            s,
            "  \"{}\" [label=\"{{{}|{}}}\"{}];",
            escape(n.node_name(m)),
            escape(n.node_name(m)),
            escape(&procs.join(" ")),
            extra
        );
    }
    for (x, a, p, y) in n.transitions() {
        let _ = writeln!(
            s,
            "  \"{}\" -> \"{}\" [label=\"{}@{}\"];",
            escape(n.node_name(x)),
            escape(n.node_name(y)),
            escape(al.act_name(a)),
            escape(al.proc_name(p))
        );
    }
    s.push_str("}\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn fork_records() {
        let d = export_dot(&fixtures::fork());
        assert_eq!(d.matches("[label=\"{").count(), 5);
        assert_eq!(d.matches(" -> ").count(), 6);
        assert!(d.contains("\"n1\" -> \"n3\" [label=\"x@p\"];"));
        assert!(d.contains("\"n0\" [label=\"{n0|p q}\", style=bold];"));
    }
}
