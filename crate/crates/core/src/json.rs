//! The negotiation JSON format.
//!
//! ```text
//! {"processes":["p","q"],"actions":{"a":["p","q"]},"nodes":{"n0":["p","q"],"nf":["p","q"]},
//!  "init":"n0","fin":"nf","transitions":[["n0","a","p","nf"],["n0","a","q","nf"]]}
//! ```
//!
//! Output is compact with keys in the order above; transitions are sorted by node, then
//! action, then process. Unknown keys are rejected.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alphabet::{AlphabetError, DistributedAlphabet, ProcSet};
use crate::model::{ModelError, Negotiation, Node};

#[derive(Debug, Error)]
pub enum JsonError {
    #[error("malformed negotiation JSON: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error(transparent)]
    Alphabet(#[from] AlphabetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node `{node}` names unknown process `{process}`")]
    UnknownNodeProcess { node: String, process: String },
    #[error("transition {index}: {reason}")]
    BadTransition { index: usize, reason: String },
    #[error("transition {index} redefines δ({node},{action},{process})")]
    DuplicateTransition { index: usize, node: String, action: String, process: String },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Raw {
    processes: Vec<String>,
    actions: IndexMap<String, Vec<String>>,
    nodes: IndexMap<String, Vec<String>>,
    init: String,
    fin: String,
    transitions: Vec<(String, String, String, String)>,
}

pub fn parse(text: &str) -> Result<Negotiation, JsonError> {
    let raw: Raw = serde_json::from_str(text)?;
    let al = DistributedAlphabet::new(raw.processes.iter().map(String::as_str), raw.actions.iter().map(|(a, d)| (a.clone(), d.iter().map(String::as_str))))?;
    let mut nodes = Vec::with_capacity(raw.nodes.len());
    for (name, dom) in &raw.nodes {
        let mut set = ProcSet::default();
        for p in dom {
            set.insert(al.proc_id(p).ok_or_else(|| JsonError::UnknownNodeProcess { node: name.clone(), process: p.clone() })?);
        }
        nodes.push((name.clone(), set));
    }
    let node = |name: &str| raw.nodes.get_index_of(name).map(|i| Node(i as u32)).ok_or_else(|| JsonError::UnknownNode(name.to_string()));
    let (init, fin) = (node(&raw.init)?, node(&raw.fin)?);
    let mut n = Negotiation::new(al.clone(), nodes, init, fin)?;
    for (index, (from, a, p, to)) in raw.transitions.iter().enumerate() {
        let bad = |reason: String| JsonError::BadTransition { index, reason };
        let (from_id, to_id) = (node(from)?, node(to)?);
        let act = al.act_id(a).ok_or_else(|| bad(format!("unknown action `{a}`")))?;
        let proc = al.proc_id(p).ok_or_else(|| bad(format!("unknown process `{p}`")))?;
        if n.delta(from_id, act, proc).is_some() {
            return Err(JsonError::DuplicateTransition {
                index,
                node: from.clone(),
                action: a.clone(),
                process: p.clone(),
            });
        }
        n.set_transition(from_id, act, proc, to_id);
    }
    Ok(n)
}

pub fn serialize(n: &Negotiation) -> String {
    let al = n.alphabet();
    let names = |s: ProcSet| s.iter().map(|p| al.proc_name(p).to_string()).collect::<Vec<_>>();
    let raw = Raw {
        processes: al.proc_names().to_vec(),
        actions: al.acts().map(|a| (al.act_name(a).to_string(), names(al.dom(a)))).collect(),
        nodes: n.nodes().map(|m| (n.node_name(m).to_string(), names(n.dnode(m)))).collect(),
        init: n.node_name(n.init()).to_string(),
        fin: n.node_name(n.fin()).to_string(),
        transitions: n
            .transitions()
            .map(|(x, a, p, y)| {
                (n.node_name(x).to_string(), al.act_name(a).to_string(), al.proc_name(p).to_string(), n.node_name(y).to_string())
            })
            .collect(),
    };
    serde_json::to_string(&raw).expect("plain data serializes")
}
