//! Deterministic negotiations and their operational semantics.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use thiserror::Error;

use crate::alphabet::{Act, DistributedAlphabet, Local, Proc, ProcSet};

/// Index of a node in its negotiation.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct Node(pub u32);

impl Node {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Default cap on the number of configurations explored.
pub const DEFAULT_STATE_CAP: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("duplicate node `{0}`")]
    DuplicateNode(String),
    #[error("node index {0} out of range")]
    NoSuchNode(usize),
    #[error("unknown action index {0}")]
    UnknownAction(usize),
    #[error("action `{action}` is not enabled: process `{process}` blocks it")]
    NotEnabled { action: String, process: String },
    #[error("no transition for letter {0} of the local path")]
    NoTransition(usize),
    #[error("no reachable configuration enables exactly node `{0}`")]
    NotFound(String),
    #[error("two reachable configurations enable exactly node `{0}`")]
    Ambiguous(String),
    #[error("configuration graph exceeds {0} vertices")]
    StateBudgetExceeded(usize),
}

/// A structural defect found by [`Negotiation::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyNodeDomain { node: String },
    InitDomain { node: String },
    FinDomain { node: String },
    ProcessNotInAction { node: String, action: String, process: String },
    DomainMismatch { node: String, action: String },
    ProcessNotInTarget { node: String, action: String, process: String, target: String },
    MissingSibling { node: String, action: String, present: String, missing: String },
    FinHasOutgoing { node: String, action: String, process: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyNodeDomain { node } => write!(f, "node {node} has an empty domain"),
            Violation::InitDomain { node } => {
                write!(f, "initial node {node} must have all processes in its domain")
            }
            Violation::FinDomain { node } => {
                write!(f, "final node {node} must have all processes in its domain")
            }
            Violation::ProcessNotInAction { node, action, process } => write!(
                f,
                "δ({node},{action},{process}) defined but {process} is not in dom({action})"
            ),
            Violation::DomainMismatch { node, action } => {
                write!(f, "δ({node},{action},·) defined but dnode({node}) differs from dom({action})")
            }
            Violation::ProcessNotInTarget { node, action, process, target } => write!(
                f,
                "δ({node},{action},{process}) = {target} but {process} is not in dnode({target})"
            ),
            Violation::MissingSibling { node, action, present, missing } => write!(
                f,
                "δ({node},{action},{present}) defined but δ({node},{action},{missing}) missing"
            ),
            Violation::FinHasOutgoing { node, action, process } => {
                write!(f, "final node {node} has outgoing transition δ({node},{action},{process})")
            }
        }
    }
}

/// Assignment of a node to every process.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct Configuration(pub Vec<Node>);

impl Configuration {
    pub fn at(&self, p: Proc) -> Node {
        self.0[p.index()]
    }

    pub fn set(&mut self, p: Proc, n: Node) {
        self.0[p.index()] = n;
    }
}

/// Result of firing a word letter by letter.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum ExecutionOutcome {
    Completed,
    /// The first `usize` letters fired, the next one was not enabled.
    Stuck(usize, Configuration),
    /// Every letter fired but the final configuration was not reached.
    Partial(Configuration),
}

/// A deterministic negotiation over a distributed alphabet.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Negotiation {
    alphabet: DistributedAlphabet,
    names: Vec<String>,
    dnode: Vec<ProcSet>,
    delta: Vec<BTreeMap<(Act, Proc), Node>>,
    init: Node,
    fin: Node,
}

impl Negotiation {
    /// Creates a negotiation without transitions.
    pub fn new(
        alphabet: DistributedAlphabet,
        nodes: Vec<(String, ProcSet)>,
        init: Node,
        fin: Node,
    ) -> Result<Self, ModelError> {
        let mut seen = BTreeSet::new();
        for (name, _) in &nodes {
            if !seen.insert(name.clone()) {
                return Err(ModelError::DuplicateNode(name.clone()));
            }
        }
        for n in [init, fin] {
            if n.index() >= nodes.len() {
                return Err(ModelError::NoSuchNode(n.index()));
            }
        }
        let (names, dnode): (Vec<_>, Vec<_>) = nodes.into_iter().unzip();
        let delta = vec![BTreeMap::new(); names.len()];
        Ok(Negotiation { alphabet, names, dnode, delta, init, fin })
    }

    /// The negotiation with nodes `init` and `fin` and no transitions.
    pub fn empty(alphabet: DistributedAlphabet) -> Self {
        let all = alphabet.all_procs();
        Negotiation::new(
            alphabet,
            vec![("init".to_string(), all), ("fin".to_string(), all)],
            Node(0),
            Node(1),
        )
        .expect("two distinct nodes")
    }

    pub fn set_transition(&mut self, n: Node, a: Act, p: Proc, target: Node) {
        self.delta[n.index()].insert((a, p), target);
    }

    pub fn remove_transition(&mut self, n: Node, a: Act, p: Proc) -> Option<Node> {
        self.delta[n.index()].remove(&(a, p))
    }

    pub fn add_node(&mut self, name: String, dom: ProcSet) -> Result<Node, ModelError> {
        if self.names.contains(&name) {
            return Err(ModelError::DuplicateNode(name));
        }
        self.names.push(name);
        self.dnode.push(dom);
        self.delta.push(BTreeMap::new());
        Ok(Node(self.names.len() as u32 - 1))
    }

    pub fn set_dnode(&mut self, n: Node, dom: ProcSet) {
        self.dnode[n.index()] = dom;
    }

    pub fn rename_node(&mut self, n: Node, name: String) -> Result<(), ModelError> {
        if self.names.iter().enumerate().any(|(i, x)| *x == name && i != n.index()) {
            return Err(ModelError::DuplicateNode(name));
        }
        self.names[n.index()] = name;
        Ok(())
    }

    pub fn alphabet(&self) -> &DistributedAlphabet {
        &self.alphabet
    }

    pub fn num_nodes(&self) -> usize {
        self.names.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = Node> {
        (0..self.names.len()).map(|i| Node(i as u32))
    }

    pub fn node_name(&self, n: Node) -> &str {
        &self.names[n.index()]
    }

    pub fn node_id(&self, name: &str) -> Option<Node> {
        self.names.iter().position(|x| x == name).map(|i| Node(i as u32))
    }

    pub fn dnode(&self, n: Node) -> ProcSet {
        self.dnode[n.index()]
    }

    pub fn init(&self) -> Node {
        self.init
    }

    pub fn fin(&self) -> Node {
        self.fin
    }

    pub fn delta(&self, n: Node, a: Act, p: Proc) -> Option<Node> {
        self.delta[n.index()].get(&(a, p)).copied()
    }

    pub fn step_local(&self, n: Node, l: Local) -> Option<Node> {
        self.delta(n, l.act, l.proc)
    }

    /// Outgoing transitions of `n`, ordered by action then process.
    pub fn outgoing(&self, n: Node) -> impl Iterator<Item = (Local, Node)> + '_ {
        self.delta[n.index()].iter().map(|(&(a, p), &m)| (Local::new(a, p), m))
    }

    /// Distinct actions leaving `n`.
    pub fn actions_at(&self, n: Node) -> BTreeSet<Act> {
        self.delta[n.index()].keys().map(|&(a, _)| a).collect()
    }

    /// All transitions `(n, a, p, m)` in node order.
    pub fn transitions(&self) -> impl Iterator<Item = (Node, Act, Proc, Node)> + '_ {
        self.nodes().flat_map(move |n| self.delta[n.index()].iter().map(move |(&(a, p), &m)| (n, a, p, m)))
    }

    pub fn num_transitions(&self) -> usize {
        self.delta.iter().map(BTreeMap::len).sum()
    }

    /// Size `|N| + |δ|`.
    pub fn size(&self) -> usize {
        self.num_nodes() + self.num_transitions()
    }

    /// All structural violations; empty for a valid negotiation.
    pub fn validate(&self) -> Vec<Violation> {
        let al = &self.alphabet;
        let all = al.all_procs();
        let name = |n: Node| self.node_name(n).to_string();
        let mut out = Vec::new();
        for n in self.nodes() {
            if self.dnode(n).is_empty() {
                out.push(Violation::EmptyNodeDomain { node: name(n) });
            }
        }
        if self.dnode(self.init) != all {
            out.push(Violation::InitDomain { node: name(self.init) });
        }
        if self.dnode(self.fin) != all {
            out.push(Violation::FinDomain { node: name(self.fin) });
        }
        for n in self.nodes() {
            for a in self.actions_at(n) {
                if self.dnode(n) != al.dom(a) {
                    out.push(Violation::DomainMismatch { node: name(n), action: al.act_name(a).into() });
                }
                for p in al.dom(a).iter() {
                    if self.delta(n, a, p).is_none() {
                        if let Some(present) = al.dom(a).iter().find(|&q| self.delta(n, a, q).is_some()) {
                            out.push(Violation::MissingSibling {
                                node: name(n),
                                action: al.act_name(a).into(),
                                present: al.proc_name(present).into(),
                                missing: al.proc_name(p).into(),
                            });
                        }
                    }
                }
            }
            for (l, m) in self.outgoing(n) {
                let (action, process) = (al.act_name(l.act).to_string(), al.proc_name(l.proc).to_string());
                if !al.dom(l.act).contains(l.proc) {
                    out.push(Violation::ProcessNotInAction { node: name(n), action: action.clone(), process: process.clone() });
                }
                if !self.dnode(m).contains(l.proc) {
                    out.push(Violation::ProcessNotInTarget {
                        node: name(n),
                        action: action.clone(),
                        process: process.clone(),
                        target: name(m),
                    });
                }
                if n == self.fin {
                    out.push(Violation::FinHasOutgoing { node: name(n), action, process });
                }
            }
        }
        out
    }

    /// Nodes that lie on no local path from the initial to the final node.
    pub fn non_coaccessible(&self) -> Vec<Node> {
        let fwd = self.graph_reach(self.init, false);
        let bwd = self.graph_reach(self.fin, true);
        self.nodes().filter(|n| !(fwd[n.index()] && bwd[n.index()])).collect()
    }

    fn graph_reach(&self, from: Node, backward: bool) -> Vec<bool> {
        let mut preds: Vec<Vec<Node>> = vec![Vec::new(); self.num_nodes()];
        if backward {
            for (n, _, _, m) in self.transitions() {
                preds[m.index()].push(n);
            }
        }
        let mut seen = vec![false; self.num_nodes()];
        let mut stack = vec![from];
        seen[from.index()] = true;
        while let Some(n) = stack.pop() {
            let next: Vec<Node> =
                if backward { preds[n.index()].clone() } else { self.outgoing(n).map(|(_, m)| m).collect() };
            for m in next {
                if !seen[m.index()] {
                    seen[m.index()] = true;
                    stack.push(m);
                }
            }
        }
        seen
    }

    pub fn initial_config(&self) -> Configuration {
        Configuration(vec![self.init; self.alphabet.num_procs()])
    }

    pub fn final_config(&self) -> Configuration {
        Configuration(vec![self.fin; self.alphabet.num_procs()])
    }

    pub fn is_final(&self, c: &Configuration) -> bool {
        c.0.iter().all(|&n| n == self.fin)
    }

    /// A node is enabled when every process of its domain sits at it.
    pub fn node_enabled(&self, c: &Configuration, m: Node) -> bool {
        self.dnode(m).iter().all(|p| c.at(p) == m)
    }

    /// Nodes enabled in `c`, in node order.
    pub fn enabled_nodes(&self, c: &Configuration) -> Vec<Node> {
        let occupied: BTreeSet<Node> = c.0.iter().copied().collect();
        occupied.into_iter().filter(|&m| self.node_enabled(c, m)).collect()
    }

    /// Pairs `(m, a)` such that `m` is enabled and `a` leaves `m` for all of its domain.
    pub fn enabled(&self, c: &Configuration) -> BTreeSet<(Node, Act)> {
        let mut out = BTreeSet::new();
        for m in self.enabled_nodes(c) {
            for a in self.actions_at(m) {
                if self.dnode(m).iter().all(|p| self.delta(m, a, p).is_some()) {
                    out.insert((m, a));
                }
            }
        }
        out
    }

    /// The node at which `a` would fire in `c`, if it is enabled.
    fn firing_node(&self, c: &Configuration, a: Act) -> Result<Node, Proc> {
        let dom = self.alphabet.dom(a);
        let p0 = dom.first().expect("nonempty domain");
        let m = c.at(p0);
        if self.dnode(m) != dom {
            return Err(p0);
        }
        for p in dom.iter() {
            if c.at(p) != m || self.delta(m, a, p).is_none() {
                return Err(p);
            }
        }
        Ok(m)
    }

    pub fn is_enabled(&self, c: &Configuration, a: Act) -> bool {
        self.firing_node(c, a).is_ok()
    }

    /// Fires `a` in `c`.
    pub fn step(&self, c: &Configuration, a: Act) -> Result<Configuration, ModelError> {
        if !self.alphabet.contains_act(a) {
            return Err(ModelError::UnknownAction(a.index()));
        }
        match self.firing_node(c, a) {
            Ok(m) => {
                let mut next = c.clone();
                for p in self.alphabet.dom(a).iter() {
                    next.set(p, self.delta(m, a, p).expect("checked"));
                }
                Ok(next)
            }
            Err(p) => Err(ModelError::NotEnabled {
                action: self.alphabet.act_name(a).to_string(),
                process: self.alphabet.proc_name(p).to_string(),
            }),
        }
    }

    /// Fires `a` if enabled, without building an error.
    pub fn try_step(&self, c: &Configuration, a: Act) -> Option<Configuration> {
        let m = self.firing_node(c, a).ok()?;
        let mut next = c.clone();
        for p in self.alphabet.dom(a).iter() {
            next.set(p, self.delta(m, a, p)?);
        }
        Some(next)
    }

    /// Fires the letters of `w` from left to right starting at the initial configuration.
    pub fn run_execution(&self, w: &[Act]) -> Result<ExecutionOutcome, ModelError> {
        if let Some(a) = w.iter().find(|a| !self.alphabet.contains_act(**a)) {
            return Err(ModelError::UnknownAction(a.index()));
        }
        let mut c = self.initial_config();
        for (i, &a) in w.iter().enumerate() {
            match self.try_step(&c, a) {
                Some(next) => c = next,
                None => return Ok(ExecutionOutcome::Stuck(i, c)),
            }
        }
        if self.is_final(&c) {
            Ok(ExecutionOutcome::Completed)
        } else {
            Ok(ExecutionOutcome::Partial(c))
        }
    }

    /// Whether `w` is a successful execution.
    pub fn member_exec(&self, w: &[Act]) -> bool {
        matches!(self.run_execution(w), Ok(ExecutionOutcome::Completed))
    }

    /// Follows a local path from the initial node.
    pub fn run_local_path(&self, path: &[Local]) -> Result<Node, ModelError> {
        self.run_local_path_from(self.init, path)
    }

    pub fn run_local_path_from(&self, start: Node, path: &[Local]) -> Result<Node, ModelError> {
        let mut n = start;
        for (i, &l) in path.iter().enumerate() {
            n = self.step_local(n, l).ok_or(ModelError::NoTransition(i))?;
        }
        Ok(n)
    }

    /// Whether `path` leads from the initial to the final node.
    pub fn member_path(&self, path: &[Local]) -> bool {
        matches!(self.run_local_path(path), Ok(n) if n == self.fin)
    }

    /// All reachable configurations with their labelled edges.
    pub fn configuration_graph(&self) -> Result<ConfigGraph, ModelError> {
        self.configuration_graph_capped(DEFAULT_STATE_CAP)
    }

    pub fn configuration_graph_capped(&self, cap: usize) -> Result<ConfigGraph, ModelError> {
        let mut g = ConfigGraph { configs: Vec::new(), index: HashMap::new(), edges: Vec::new() };
        g.intern(self.initial_config());
        let mut i = 0;
        while i < g.configs.len() {
            let c = g.configs[i].clone();
            let mut out = Vec::new();
            for (_, a) in self.enabled(&c) {
                let next = self.step(&c, a).expect("enabled");
                let j = match g.index.get(&next) {
                    Some(&j) => j,
                    None => {
                        if g.configs.len() >= cap {
                            return Err(ModelError::StateBudgetExceeded(cap));
                        }
                        g.intern(next)
                    }
                };
                out.push((a, j));
            }
            out.sort();
            g.edges[i] = out;
            i += 1;
        }
        Ok(g)
    }

    /// The unique reachable configuration in which `m` is the only enabled node.
    pub fn compute_i(&self, m: Node) -> Result<Configuration, ModelError> {
        let g = self.configuration_graph()?;
        let mut found: Option<&Configuration> = None;
        for c in &g.configs {
            if self.enabled_nodes(c) == [m] {
                if found.is_some() {
                    return Err(ModelError::Ambiguous(self.node_name(m).to_string()));
                }
                found = Some(c);
            }
        }
        found.cloned().ok_or_else(|| ModelError::NotFound(self.node_name(m).to_string()))
    }

    pub fn format_config(&self, c: &Configuration) -> String {
        let parts: Vec<String> = self
            .alphabet
            .procs()
            .map(|p| format!("{}↦{}", self.alphabet.proc_name(p), self.node_name(c.at(p))))
            .collect();
        format!("{{{}}}", parts.join(","))
    }
}

/// Explicit graph of reachable configurations. Vertex 0 is the initial configuration.
#[derive(Clone, Debug)]
pub struct ConfigGraph {
    pub configs: Vec<Configuration>,
    pub index: HashMap<Configuration, usize>,
    /// Outgoing edges per vertex, sorted by action.
    pub edges: Vec<Vec<(Act, usize)>>,
}

impl ConfigGraph {
    fn intern(&mut self, c: Configuration) -> usize {
        let i = self.configs.len();
        self.index.insert(c.clone(), i);
        self.configs.push(c);
        self.edges.push(Vec::new());
        i
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    /// Vertices from which some vertex satisfying `target` is reachable.
    pub fn can_reach(&self, target: impl Fn(usize) -> bool) -> Vec<bool> {
        let mut preds = vec![Vec::new(); self.len()];
        for (i, out) in self.edges.iter().enumerate() {
            for &(_, j) in out {
                preds[j].push(i);
            }
        }
        let mut ok = vec![false; self.len()];
        let mut queue: VecDeque<usize> = (0..self.len()).filter(|&i| target(i)).collect();
        for &i in &queue {
            ok[i] = true;
        }
        while let Some(j) = queue.pop_front() {
            for &i in &preds[j] {
                if !ok[i] {
                    ok[i] = true;
                    queue.push_back(i);
                }
            }
        }
        ok
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn ping_semantics() {
        let n = fixtures::ping();
        assert!(n.validate().is_empty());
        let al = n.alphabet();
        let c0 = n.initial_config();
        let en: Vec<_> = n.enabled(&c0).into_iter().collect();
        assert_eq!(en, vec![(n.node_id("n0").unwrap(), al.act_id("a").unwrap())]);
        assert!(n.enabled(&n.final_config()).is_empty());
        let c1 = n.step(&c0, al.act_id("a").unwrap()).unwrap();
        assert_eq!(n.format_config(&c1), "{p↦n1,q↦n1}");
        assert!(matches!(n.step(&c0, al.act_id("b").unwrap()), Err(ModelError::NotEnabled { .. })));
        assert!(n.member_exec(&al.parse_word("a b").unwrap()));
        assert!(!n.member_path(&[]));
        assert_eq!(n.configuration_graph().unwrap().len(), 3);
    }

    #[test]
    fn ping_violations() {
        let mut n = fixtures::ping();
        let al = n.alphabet().clone();
        n.remove_transition(n.node_id("n0").unwrap(), al.act_id("a").unwrap(), al.proc_id("q").unwrap());
        let v = n.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].to_string(), "δ(n0,a,p) defined but δ(n0,a,q) missing");

        let mut n = fixtures::ping();
        let nf = n.node_id("nf").unwrap();
        n.set_dnode(nf, ProcSet::singleton(al.proc_id("p").unwrap()));
        let v = n.validate();
        assert!(v.iter().any(|x| matches!(x, Violation::FinDomain { .. })), "{v:?}");
    }

    #[test]
    fn fork_runs() {
        let n = fixtures::fork();
        let al = n.alphabet();
        let w = |s: &str| al.parse_word(s).unwrap();
        assert_eq!(n.run_execution(&w("c x y d")).unwrap(), ExecutionOutcome::Completed);
        assert_eq!(n.run_execution(&w("c y x d")).unwrap(), ExecutionOutcome::Completed);
        match n.run_execution(&w("c x d")).unwrap() {
            ExecutionOutcome::Stuck(2, c) => assert_eq!(n.format_config(&c), "{p↦n3,q↦n2}"),
            o => panic!("unexpected {o:?}"),
        }
        assert!(!n.member_exec(&w("c x")));
        assert!(matches!(n.run_execution(&[Act(99)]), Err(ModelError::UnknownAction(99))));

        let l = |s: &str| al.parse_local_word(s).unwrap();
        assert_eq!(n.run_local_path(&l("c@p x@p d@p")).unwrap(), n.fin());
        assert_eq!(n.run_local_path(&l("c@q y@q d@q")).unwrap(), n.fin());
        assert_eq!(n.run_local_path(&l("c@p y@q")), Err(ModelError::NoTransition(1)));
        assert!(n.member_path(&l("c@p x@p d@p")));
        assert!(!n.member_path(&l("c@p x@p")));

        let c = Configuration(vec![n.node_id("n1").unwrap(), n.node_id("n2").unwrap()]);
        let en: Vec<_> = n.enabled(&c).into_iter().map(|(m, a)| (n.node_name(m).to_string(), a)).collect();
        assert_eq!(en, vec![("n1".into(), al.act_id("x").unwrap()), ("n2".into(), al.act_id("y").unwrap())]);
    }

    #[test]
    fn fork_graph_and_i() {
        let n = fixtures::fork();
        // init, (n1,n2), (n3,n2), (n1,n3), (n3,n3), fin
        assert_eq!(n.configuration_graph().unwrap().len(), 6);
        let n3 = n.node_id("n3").unwrap();
        assert_eq!(n.format_config(&n.compute_i(n3).unwrap()), "{p↦n3,q↦n3}");
        let ping = fixtures::ping();
        let c = ping.compute_i(ping.node_id("n1").unwrap()).unwrap();
        assert_eq!(ping.format_config(&c), "{p↦n1,q↦n1}");
    }

    #[test]
    fn compute_i_on_unsound() {
        let mut n = fixtures::fork();
        let al = n.alphabet().clone();
        let n3 = n.node_id("n3").unwrap();
        let d = al.act_id("d").unwrap();
        for p in al.procs() {
            n.remove_transition(n3, d, p);
        }
        assert_eq!(n.format_config(&n.compute_i(n3).unwrap()), "{p↦n3,q↦n3}");
        assert!(matches!(n.compute_i(n.fin()), Err(ModelError::NotFound(_))));
    }

    #[test]
    fn empty_negotiation() {
        let n = Negotiation::empty(fixtures::fork().alphabet().clone());
        assert_eq!(n.configuration_graph().unwrap().len(), 1);
        assert!(n.validate().is_empty());
    }

    #[test]
    fn state_cap() {
        let n = fixtures::fork();
        assert_eq!(n.configuration_graph_capped(3).unwrap_err(), ModelError::StateBudgetExceeded(3));
    }
}
