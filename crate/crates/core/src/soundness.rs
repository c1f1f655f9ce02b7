//! Soundness: every reachable configuration can still reach the final one.
//!
//! The configuration graph decides soundness. The structural patterns below locate
//! a defect in the graph of the negotiation, which is what the execution learner needs
//! to repair its hypothesis:
//!
//! * F: from some node, an action splits two processes onto node-disjoint local paths
//!   ending in two different nodes that both wait for both processes;
//! * C: a reachable cycle with no node whose domain covers every process on it;
//! * B: a node reachable by a `p`-path from which no `p`-path reaches the final node.

use std::collections::{BTreeSet, VecDeque};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use thiserror::Error;

use crate::alphabet::{Act, Local, Proc, ProcSet};
use crate::model::{Configuration, ModelError, Negotiation, Node};

pub const DEFAULT_CYCLE_CAP: usize = 100_000;
pub const DEFAULT_PATH_CAP: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SoundnessError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("more than {0} cycles enumerated")]
    CycleBudgetExceeded(usize),
    #[error("more than {0} local paths explored while looking for a fork")]
    PathBudgetExceeded(usize),
    #[error("search cancelled")]
    Cancelled,
}

/// Search limits and an optional cancellation flag.
#[derive(Clone, Debug)]
pub struct SearchLimits {
    pub cycle_cap: usize,
    pub path_cap: usize,
    pub cancel: Option<Arc<AtomicBool>>,
}

impl Default for SearchLimits {
    fn default() -> Self {
        SearchLimits { cycle_cap: DEFAULT_CYCLE_CAP, path_cap: DEFAULT_PATH_CAP, cancel: None }
    }
}

impl SearchLimits {
    fn check(&self) -> Result<(), SoundnessError> {
        match &self.cancel {
            Some(flag) if flag.load(Ordering::Relaxed) => Err(SoundnessError::Cancelled),
            _ => Ok(()),
        }
    }
}

/// A structural reason for unsoundness.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PatternWitness {
    F {
        /// Local path from the initial node to the fork node.
        access: Vec<Local>,
        fork: Node,
        action: Act,
        p1: Proc,
        p2: Proc,
        /// `p1`-path starting with `action@p1` at the fork node.
        path1: Vec<Local>,
        /// `p2`-path starting with `action@p2` at the fork node.
        path2: Vec<Local>,
    },
    C {
        /// Local path from the initial node to the first node of the cycle.
        entry: Vec<Local>,
        cycle: Vec<Local>,
    },
    B {
        process: Proc,
        /// `process`-path from the initial node to `node`.
        access: Vec<Local>,
        node: Node,
    },
}

impl PatternWitness {
    pub fn kind(&self) -> char {
        match self {
            PatternWitness::F { .. } => 'F',
            PatternWitness::C { .. } => 'C',
            PatternWitness::B { .. } => 'B',
        }
    }

    pub fn to_json(&self, n: &Negotiation) -> serde_json::Value {
        let al = n.alphabet();
        let path = |w: &[Local]| al.format_local_word(w);
        match self {
            PatternWitness::F { access, fork, action, p1, p2, path1, path2 } => serde_json::json!({
                "pattern": "F",
                "access": path(access),
                "fork": n.node_name(*fork),
                "action": al.act_name(*action),
                "p1": al.proc_name(*p1),
                "p2": al.proc_name(*p2),
                "path1": path(path1),
                "path2": path(path2),
            }),
            PatternWitness::C { entry, cycle } => serde_json::json!({
                "pattern": "C",
                "entry": path(entry),
                "cycle": path(cycle),
            }),
            PatternWitness::B { process, access, node } => serde_json::json!({
                "pattern": "B",
                "process": al.proc_name(*process),
                "access": path(access),
                "node": n.node_name(*node),
            }),
        }
    }
}

/// A reachable configuration from which the final configuration is unreachable.
/// Deadlocks are preferred over configurations that merely cannot finish.
pub fn semantic_counterexample(n: &Negotiation) -> Result<Option<Configuration>, ModelError> {
    let g = n.configuration_graph()?;
    let fin = n.final_config();
    let ok = g.can_reach(|i| g.configs[i] == fin);
    let bad: Vec<usize> = (0..g.len()).filter(|&i| !ok[i]).collect();
    let pick = bad.iter().find(|&&i| g.edges[i].is_empty()).or(bad.first());
    Ok(pick.map(|&i| g.configs[i].clone()))
}

pub fn is_sound_semantic(n: &Negotiation) -> Result<bool, ModelError> {
    Ok(semantic_counterexample(n)?.is_none())
}

/// Shortest local paths from the initial node over edges accepted by `keep`.
fn bfs_paths(n: &Negotiation, keep: impl Fn(Local) -> bool) -> Vec<Option<Vec<Local>>> {
    let mut paths: Vec<Option<Vec<Local>>> = vec![None; n.num_nodes()];
    paths[n.init().index()] = Some(Vec::new());
    let mut queue = VecDeque::from([n.init()]);
    while let Some(x) = queue.pop_front() {
        for (l, y) in n.outgoing(x) {
            if keep(l) && paths[y.index()].is_none() {
                let mut p = paths[x.index()].clone().expect("visited");
                p.push(l);
                paths[y.index()] = Some(p);
                queue.push_back(y);
            }
        }
    }
    paths
}

/// Nodes with a `p`-path to the final node.
fn p_coreachable(n: &Negotiation, p: Proc) -> Vec<bool> {
    let mut preds = vec![Vec::new(); n.num_nodes()];
    for (x, _, q, y) in n.transitions() {
        if q == p {
            preds[y.index()].push(x);
        }
    }
    let mut seen = vec![false; n.num_nodes()];
    seen[n.fin().index()] = true;
    let mut stack = vec![n.fin()];
    while let Some(y) = stack.pop() {
        for &x in &preds[y.index()] {
            if !seen[x.index()] {
                seen[x.index()] = true;
                stack.push(x);
            }
        }
    }
    seen
}

/// Whether `node` has a `p`-path to the final node.
pub fn has_p_path_to_fin(n: &Negotiation, p: Proc, node: Node) -> bool {
    p_coreachable(n, p)[node.index()]
}

pub fn find_pattern_b(n: &Negotiation) -> Option<PatternWitness> {
    for p in n.alphabet().procs() {
        let fwd = bfs_paths(n, |l| l.proc == p);
        let bwd = p_coreachable(n, p);
        // Visit candidates in breadth-first order so the witness path is short.
        let mut cands: Vec<(usize, Node)> = n
            .nodes()
            .filter(|m| fwd[m.index()].is_some() && !bwd[m.index()])
            .map(|m| (fwd[m.index()].as_ref().map_or(0, Vec::len), m))
            .collect();
        cands.sort();
        if let Some(&(_, node)) = cands.first() {
            let access = fwd[node.index()].clone().expect("reachable");
            return Some(PatternWitness::B { process: p, access, node });
        }
    }
    None
}

/// Johnson-style enumeration of elementary cycles over labelled edges.
struct CycleSearch<'a> {
    n: &'a Negotiation,
    allowed: Vec<bool>,
    start: Node,
    blocked: Vec<bool>,
    blocked_by: Vec<BTreeSet<usize>>,
    edges: Vec<Local>,
    count: usize,
    limits: &'a SearchLimits,
    found: Option<Vec<Local>>,
    error: Option<SoundnessError>,
}

impl CycleSearch<'_> {
    fn unblock(&mut self, v: usize) {
        self.blocked[v] = false;
        let waiting = std::mem::take(&mut self.blocked_by[v]);
        for w in waiting {
            if self.blocked[w] {
                self.unblock(w);
            }
        }
    }

    fn stopped(&self) -> bool {
        self.found.is_some() || self.error.is_some()
    }

    fn report(&mut self, cycle: Vec<Local>) {
        self.count += 1;
        if self.count > self.limits.cycle_cap {
            self.error = Some(SoundnessError::CycleBudgetExceeded(self.limits.cycle_cap));
            return;
        }
        if let Err(e) = self.limits.check() {
            self.error = Some(e);
            return;
        }
        if !cycle_dominated(self.n, self.start, &cycle) {
            self.found = Some(cycle);
        }
    }

    fn circuit(&mut self, v: Node) -> bool {
        let mut closed = false;
        self.blocked[v.index()] = true;
        let succ: Vec<(Local, Node)> = self.n.outgoing(v).filter(|(_, w)| self.allowed[w.index()]).collect();
        for &(l, w) in &succ {
            if self.stopped() {
                return true;
            }
            if w == self.start {
                let mut cycle = self.edges.clone();
                cycle.push(l);
                self.report(cycle);
                closed = true;
            } else if !self.blocked[w.index()] {
                self.edges.push(l);
                if self.circuit(w) {
                    closed = true;
                }
                self.edges.pop();
            }
        }
        if closed {
            self.unblock(v.index());
        } else {
            for &(_, w) in &succ {
                self.blocked_by[w.index()].insert(v.index());
            }
        }
        closed
    }
}

/// Whether some node on the cycle starting at `start` has every process of the cycle in
/// its domain.
pub fn cycle_dominated(n: &Negotiation, start: Node, cycle: &[Local]) -> bool {
    let procs: ProcSet = cycle.iter().map(|l| l.proc).collect();
    let mut x = start;
    let mut nodes = vec![start];
    for &l in cycle {
        match n.step_local(x, l) {
            Some(y) => x = y,
            None => return false,
        }
        nodes.push(x);
    }
    nodes.iter().any(|&m| procs.is_subset(n.dnode(m)))
}

/// Nodes of the strongly connected component of `s` inside the nodes marked `within`.
fn scc_of(n: &Negotiation, s: Node, within: &[bool]) -> Vec<bool> {
    let reach = |backward: bool| {
        let mut preds = vec![Vec::new(); n.num_nodes()];
        for (x, _, _, y) in n.transitions() {
            if within[x.index()] && within[y.index()] {
                if backward {
                    preds[y.index()].push(x);
                } else {
                    preds[x.index()].push(y);
                }
            }
        }
        let mut seen = vec![false; n.num_nodes()];
        seen[s.index()] = true;
        let mut stack = vec![s];
        while let Some(x) = stack.pop() {
            for &y in &preds[x.index()] {
                if !seen[y.index()] {
                    seen[y.index()] = true;
                    stack.push(y);
                }
            }
        }
        seen
    };
    let (f, b) = (reach(false), reach(true));
    f.iter().zip(&b).map(|(x, y)| *x && *y).collect()
}

pub fn find_pattern_c(n: &Negotiation, limits: &SearchLimits) -> Result<Option<PatternWitness>, SoundnessError> {
    let access = bfs_paths(n, |_| true);
    let mut count = 0;
    for s in n.nodes() {
        if access[s.index()].is_none() {
            continue;
        }
        let within: Vec<bool> = n.nodes().map(|m| m >= s && access[m.index()].is_some()).collect();
        let allowed = scc_of(n, s, &within);
        let mut search = CycleSearch {
            n,
            allowed,
            start: s,
            blocked: vec![false; n.num_nodes()],
            blocked_by: vec![BTreeSet::new(); n.num_nodes()],
            edges: Vec::new(),
            count,
            limits,
            found: None,
            error: None,
        };
        search.circuit(s);
        if let Some(e) = search.error {
            return Err(e);
        }
        if let Some(cycle) = search.found {
            let entry = access[s.index()].clone().expect("reachable");
            return Ok(Some(PatternWitness::C { entry, cycle }));
        }
        count = search.count;
    }
    Ok(None)
}

/// `p`-path from `from` to a node accepted by `goal`, avoiding `avoid`.
fn p_path_avoiding(
    n: &Negotiation,
    p: Proc,
    from: Node,
    avoid: &[bool],
    goal: impl Fn(Node) -> bool,
) -> Option<Vec<Local>> {
    if avoid[from.index()] {
        return None;
    }
    let mut prev: Vec<Option<(Node, Local)>> = vec![None; n.num_nodes()];
    let mut seen = vec![false; n.num_nodes()];
    seen[from.index()] = true;
    let mut queue = VecDeque::from([from]);
    while let Some(x) = queue.pop_front() {
        if goal(x) {
            let mut path = Vec::new();
            let mut y = x;
            while let Some((z, l)) = prev[y.index()] {
                path.push(l);
                y = z;
            }
            path.reverse();
            return Some(path);
        }
        for (l, y) in n.outgoing(x) {
            if l.proc == p && !seen[y.index()] && !avoid[y.index()] {
                seen[y.index()] = true;
                prev[y.index()] = Some((x, l));
                queue.push_back(y);
            }
        }
    }
    None
}

/// A `p1`-path and a `p2`-path that share no node.
type DisjointPaths = (Vec<Local>, Vec<Local>);

struct ForkSearch<'a> {
    n: &'a Negotiation,
    p1: Proc,
    p2: Proc,
    y: Node,
    both: ProcSet,
    on_path: Vec<bool>,
    edges: Vec<Local>,
    explored: usize,
    limits: &'a SearchLimits,
}

impl ForkSearch<'_> {
    /// Depth-first over simple `p1`-paths ending at `x`; for each, look for a disjoint
    /// `p2`-path from `y`.
    fn dfs(&mut self, x: Node) -> Result<Option<DisjointPaths>, SoundnessError> {
        self.explored += 1;
        if self.explored > self.limits.path_cap {
            return Err(SoundnessError::PathBudgetExceeded(self.limits.path_cap));
        }
        self.limits.check()?;
        if self.both.is_subset(self.n.dnode(x)) {
            let both = self.both;
            let n = self.n;
            if let Some(path2) = p_path_avoiding(n, self.p2, self.y, &self.on_path, |m| both.is_subset(n.dnode(m))) {
                return Ok(Some((self.edges.clone(), path2)));
            }
        }
        let succ: Vec<(Local, Node)> = self.n.outgoing(x).filter(|(l, _)| l.proc == self.p1).collect();
        for (l, z) in succ {
            if self.on_path[z.index()] {
                continue;
            }
            self.on_path[z.index()] = true;
            self.edges.push(l);
            let r = self.dfs(z)?;
            self.edges.pop();
            self.on_path[z.index()] = false;
            if r.is_some() {
                return Ok(r);
            }
        }
        Ok(None)
    }
}

pub fn find_pattern_f(n: &Negotiation, limits: &SearchLimits) -> Result<Option<PatternWitness>, SoundnessError> {
    let access = bfs_paths(n, |_| true);
    let mut order: Vec<Node> = n.nodes().filter(|m| access[m.index()].is_some()).collect();
    order.sort_by_key(|m| access[m.index()].as_ref().map_or(0, Vec::len));
    let mut explored = 0;
    for m in order {
        for a in n.actions_at(m) {
            let dom = n.alphabet().dom(a);
            for p1 in dom.iter() {
                for p2 in dom.iter().filter(|&q| q > p1) {
                    let (Some(x), Some(y)) = (n.delta(m, a, p1), n.delta(m, a, p2)) else { continue };
                    if x == y {
                        continue;
                    }
                    let mut on_path = vec![false; n.num_nodes()];
                    on_path[x.index()] = true;
                    let both: ProcSet = [p1, p2].into_iter().collect();
                    let mut search = ForkSearch {
                        n,
                        p1,
                        p2,
                        y,
                        both,
                        on_path,
                        edges: Vec::new(),
                        explored,
                        limits,
                    };
                    let found = search.dfs(x)?;
                    explored = search.explored;
                    if let Some((rest1, rest2)) = found {
                        let mut path1 = vec![Local::new(a, p1)];
                        path1.extend(rest1);
                        let mut path2 = vec![Local::new(a, p2)];
                        path2.extend(rest2);
                        return Ok(Some(PatternWitness::F {
                            access: access[m.index()].clone().expect("reachable"),
                            fork: m,
                            action: a,
                            p1,
                            p2,
                            path1,
                            path2,
                        }));
                    }
                }
            }
        }
    }
    Ok(None)
}

/// Looks for pattern B, then C, then F.
pub fn find_any_pattern(n: &Negotiation, limits: &SearchLimits) -> Result<Option<PatternWitness>, SoundnessError> {
    if let Some(w) = find_pattern_b(n) {
        return Ok(Some(w));
    }
    if let Some(w) = find_pattern_c(n, limits)? {
        return Ok(Some(w));
    }
    find_pattern_f(n, limits)
}

/// Checks that a witness describes what it claims in `n`.
pub fn witness_replays(n: &Negotiation, w: &PatternWitness) -> bool {
    match w {
        PatternWitness::B { process, access, node } => {
            access.iter().all(|l| l.proc == *process)
                && n.run_local_path(access) == Ok(*node)
                && !has_p_path_to_fin(n, *process, *node)
        }
        PatternWitness::C { entry, cycle } => {
            let Ok(start) = n.run_local_path(entry) else { return false };
            !cycle.is_empty()
                && n.run_local_path_from(start, cycle) == Ok(start)
                && !cycle_dominated(n, start, cycle)
        }
        PatternWitness::F { access, fork, action, p1, p2, path1, path2 } => {
            if n.run_local_path(access) != Ok(*fork) || p1 == p2 {
                return false;
            }
            let both: ProcSet = [*p1, *p2].into_iter().collect();
            if !both.is_subset(n.dnode(*fork)) {
                return false;
            }
            let walk = |p: Proc, path: &[Local]| -> Option<Vec<Node>> {
                if path.first() != Some(&Local::new(*action, p)) || path.iter().any(|l| l.proc != p) {
                    return None;
                }
                let mut x = *fork;
                let mut nodes = Vec::new();
                for &l in path {
                    x = n.step_local(x, l)?;
                    nodes.push(x);
                }
                Some(nodes)
            };
            let (Some(v1), Some(v2)) = (walk(*p1, path1), walk(*p2, path2)) else { return false };
            let s1: BTreeSet<Node> = v1.iter().copied().collect();
            let disjoint = v2.iter().all(|x| !s1.contains(x));
            let simple = s1.len() == v1.len() && v2.iter().collect::<BTreeSet<_>>().len() == v2.len();
            let (n1, n2) = (*v1.last().expect("nonempty"), *v2.last().expect("nonempty"));
            disjoint && simple && n1 != n2 && both.is_subset(n.dnode(n1)) && both.is_subset(n.dnode(n2))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn fork_is_sound() {
        let n = fixtures::fork();
        assert!(is_sound_semantic(&n).unwrap());
        assert_eq!(find_any_pattern(&n, &SearchLimits::default()).unwrap(), None);
    }

    #[test]
    fn missing_join_is_unsound() {
        let mut n = fixtures::fork();
        let al = n.alphabet().clone();
        let n3 = n.node_id("n3").unwrap();
        for p in al.procs() {
            n.remove_transition(n3, al.act_id("d").unwrap(), p);
        }
        let c = semantic_counterexample(&n).unwrap().unwrap();
        assert_eq!(n.format_config(&c), "{p↦n3,q↦n3}");
        let w = find_any_pattern(&n, &SearchLimits::default()).unwrap().unwrap();
        assert_eq!(w.kind(), 'B');
        assert!(witness_replays(&n, &w));
    }

    #[test]
    fn split_join_gives_fork_pattern() {
        let n = fixtures::build(
            &["p", "q"],
            &[("c", &["p", "q"]), ("x", &["p"]), ("y", &["q"]), ("d", &["p", "q"])],
            &[
                ("n0", &["p", "q"]),
                ("n1", &["p"]),
                ("n2", &["q"]),
                ("n3a", &["p", "q"]),
                ("n3b", &["p", "q"]),
                ("nf", &["p", "q"]),
            ],
            "n0",
            "nf",
            &[
                ("n0", "c", "p", "n1"),
                ("n0", "c", "q", "n2"),
                ("n1", "x", "p", "n3a"),
                ("n2", "y", "q", "n3b"),
                ("n3a", "d", "p", "nf"),
                ("n3a", "d", "q", "nf"),
                ("n3b", "d", "p", "nf"),
                ("n3b", "d", "q", "nf"),
            ],
        );
        assert!(!is_sound_semantic(&n).unwrap());
        assert_eq!(find_pattern_b(&n), None);
        assert_eq!(find_pattern_c(&n, &SearchLimits::default()).unwrap(), None);
        let w = find_pattern_f(&n, &SearchLimits::default()).unwrap().unwrap();
        assert!(witness_replays(&n, &w));
    }

    #[test]
    fn dominated_loop_is_fine() {
        let n = fixtures::mod15();
        assert!(is_sound_semantic(&n).unwrap());
        assert_eq!(find_pattern_c(&n, &SearchLimits::default()).unwrap(), None);
    }

    #[test]
    fn undominated_loops() {
        // After the fork each process loops on its own before the join.
        let n = fixtures::build(
            &["p", "q"],
            &[("c", &["p", "q"]), ("x", &["p"]), ("y", &["q"]), ("u", &["p"]), ("v", &["q"]), ("d", &["p", "q"])],
            &[("n0", &["p", "q"]), ("n1", &["p"]), ("n2", &["q"]), ("n3", &["p", "q"]), ("nf", &["p", "q"])],
            "n0",
            "nf",
            &[
                ("n0", "c", "p", "n1"),
                ("n0", "c", "q", "n2"),
                ("n1", "x", "p", "n3"),
                ("n1", "u", "p", "n1"),
                ("n2", "y", "q", "n3"),
                ("n2", "v", "q", "n2"),
                ("n3", "d", "p", "nf"),
                ("n3", "d", "q", "nf"),
            ],
        );
        // One-process loops are dominated by their own node.
        assert_eq!(find_pattern_c(&n, &SearchLimits::default()).unwrap(), None);
    }

    #[test]
    fn triangle_cycle_is_undominated() {
        let n = fixtures::build(
            &["p", "q", "r"],
            &[("s", &["p", "q", "r"]), ("a", &["p", "q"]), ("b", &["p", "r"]), ("c", &["q", "r"])],
            &[("n0", &["p", "q", "r"]), ("n1", &["p", "q"]), ("n2", &["p", "r"]), ("n3", &["q", "r"]), ("nf", &["p", "q", "r"])],
            "n0",
            "nf",
            &[
                ("n0", "s", "p", "n1"),
                ("n0", "s", "q", "n1"),
                ("n0", "s", "r", "n2"),
                ("n1", "a", "p", "n2"),
                ("n1", "a", "q", "n3"),
                ("n2", "b", "p", "n1"),
                ("n2", "b", "r", "n3"),
                ("n3", "c", "q", "n1"),
                ("n3", "c", "r", "n2"),
            ],
        );
        let w = find_pattern_c(&n, &SearchLimits::default()).unwrap().unwrap();
        assert!(witness_replays(&n, &w));
    }

    #[test]
    fn cycle_cap_is_reported() {
        let n = fixtures::mod15();
        let limits = SearchLimits { cycle_cap: 0, ..SearchLimits::default() };
        assert_eq!(find_pattern_c(&n, &limits), Err(SoundnessError::CycleBudgetExceeded(0)));
    }
}
