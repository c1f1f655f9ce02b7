//! Random sound negotiations built from combinators that preserve soundness: sequence,
//! choice at a node, fork/join over a partition of the processes, and loops whose head
//! carries every process of the loop.

use std::collections::{BTreeMap, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::alphabet::{Act, DistributedAlphabet, Proc, ProcSet};
use crate::model::{Negotiation, Node};
use crate::soundness::is_sound_semantic;

const MAX_RETRIES: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct GenParams {
    pub procs: usize,
    /// Upper bound on the node count, including the initial and final node.
    pub nodes: usize,
    pub loop_prob: f64,
    pub fork_prob: f64,
    pub seed: u64,
}

impl GenParams {
    pub fn new(procs: usize, nodes: usize, loop_prob: f64, fork_prob: f64, seed: u64) -> Self {
        GenParams { procs, nodes, loop_prob, fork_prob, seed }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenError {
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),
    #[error("no sound negotiation after {0} attempts")]
    RetryExhausted(usize),
}

struct Builder<'a> {
    params: &'a GenParams,
    rng: ChaCha8Rng,
    doms: Vec<ProcSet>,
    trans: Vec<(usize, usize, Proc, usize)>,
    acts: Vec<ProcSet>,
    pools: BTreeMap<ProcSet, Vec<usize>>,
}

impl Builder<'_> {
    fn node(&mut self, dom: ProcSet) -> usize {
        self.doms.push(dom);
        self.doms.len() - 1
    }

    /// The `i`-th action of the pool for `dom`, created on demand.
    fn action(&mut self, dom: ProcSet, i: usize) -> usize {
        let pool = self.pools.entry(dom).or_default();
        while pool.len() <= i {
            self.acts.push(dom);
            pool.push(self.acts.len() - 1);
        }
        pool[i]
    }

    fn connect(&mut self, from: usize, act: usize, target: impl Fn(Proc) -> usize) {
        for p in self.acts[act].iter() {
            self.trans.push((from, act, p, target(p)));
        }
    }

    /// Splits `total` into `parts` positive amounts.
    fn split(&mut self, total: usize, parts: usize) -> Vec<usize> {
        let mut out = vec![1; parts];
        for _ in parts..total {
            let i = self.rng.gen_range(0..parts);
            out[i] += 1;
        }
        out
    }

    /// Builds a fragment for the processes `procs` that ends by moving them to `exit`,
    /// using at most `budget` new nodes. Returns the entry node, whose domain is `procs`.
    fn build(&mut self, procs: ProcSet, exit: usize, budget: usize) -> usize {
        let (loop_prob, fork_prob) = (self.params.loop_prob, self.params.fork_prob);
        if budget >= 4 && procs.len() >= 2 && self.rng.gen_bool(fork_prob) {
            let max_blocks = procs.len().min(budget - 2).min(3);
            let blocks = self.rng.gen_range(2..=max_blocks);
            let mut members: Vec<Proc> = procs.iter().collect();
            members.shuffle(&mut self.rng);
            let mut parts = vec![ProcSet::default(); blocks];
            for (i, &p) in members.iter().enumerate() {
                let b = if i < blocks { i } else { self.rng.gen_range(0..blocks) };
                parts[b].insert(p);
            }
            let shares = self.split(budget - 1, blocks + 1);
            let join = self.build(procs, exit, shares[0]);
            let entries: Vec<usize> = parts.iter().zip(&shares[1..]).map(|(&b, &s)| self.build(b, join, s)).collect();
            let fork = self.node(procs);
            let act = self.action(procs, 0);
            self.connect(fork, act, |p| entries[parts.iter().position(|b| b.contains(p)).expect("partition")]);
            return fork;
        }
        if budget >= 2 && self.rng.gen_bool(loop_prob) {
            let head = self.node(procs);
            let body_budget = self.rng.gen_range(1..budget);
            let rest = budget - 1 - body_budget;
            let after = if rest > 0 { self.build(procs, exit, rest) } else { exit };
            let body = self.build(procs, head, body_budget);
            let (leave, again) = (self.action(procs, 0), self.action(procs, 1));
            self.connect(head, leave, |_| after);
            self.connect(head, again, |_| body);
            return head;
        }
        if budget >= 3 && self.rng.gen_bool(0.4) {
            let branches = self.rng.gen_range(2..=(budget - 1).min(3));
            let shares = self.split(budget - 1, branches);
            let entry = self.node(procs);
            for (i, s) in shares.into_iter().enumerate() {
                let child = self.build(procs, exit, s);
                let act = self.action(procs, i);
                self.connect(entry, act, |_| child);
            }
            return entry;
        }
        if budget >= 2 {
            let first = self.rng.gen_range(1..budget);
            let mid = self.build(procs, exit, budget - first);
            return self.build(procs, mid, first);
        }
        let entry = self.node(procs);
        let act = self.action(procs, 0);
        self.connect(entry, act, |_| exit);
        entry
    }

    /// Numbers nodes breadth-first from the entry, with the final node last.
    fn finish(self, init: usize, fin: usize) -> Negotiation {
        let procs: Vec<String> = (1..=self.params.procs).map(|i| format!("p{i}")).collect();
        let actions: Vec<(String, Vec<String>)> = self
            .acts
            .iter()
            .enumerate()
            .map(|(i, d)| (format!("a{i}"), d.iter().map(|p| procs[p.index()].clone()).collect()))
            .collect();
        let al = DistributedAlphabet::new(procs.iter().cloned(), actions).expect("generated alphabet");
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); self.doms.len()];
        for &(x, _, _, y) in &self.trans {
            succ[x].push(y);
        }
        let mut order = vec![usize::MAX; self.doms.len()];
        let mut seq = Vec::new();
        let mut queue = VecDeque::from([init]);
        order[init] = 0;
        seq.push(init);
        while let Some(x) = queue.pop_front() {
            for &y in &succ[x] {
                if order[y] == usize::MAX && y != fin {
                    order[y] = seq.len();
                    seq.push(y);
                    queue.push_back(y);
                }
            }
        }
        order[fin] = seq.len();
        seq.push(fin);
        let nodes = seq
            .iter()
            .enumerate()
            .map(|(i, &x)| (if x == fin { "nf".to_string() } else { format!("n{i}") }, self.doms[x]))
            .collect();
        let node = |x: usize| Node(order[x] as u32);
        let mut n = Negotiation::new(al, nodes, node(init), node(fin)).expect("distinct generated names");
        for &(x, a, p, y) in &self.trans {
            n.set_transition(node(x), Act(a as u16), p, node(y));
        }
        n
    }
}

fn attempt(params: &GenParams, seed: u64) -> Negotiation {
    let mut b = Builder {
        params,
        rng: ChaCha8Rng::seed_from_u64(seed),
        doms: Vec::new(),
        trans: Vec::new(),
        acts: Vec::new(),
        pools: BTreeMap::new(),
    };
    let all = ProcSet::full(params.procs);
    let fin = b.node(all);
    let init = b.build(all, fin, params.nodes - 1);
    b.finish(init, fin)
}

pub fn generate(params: &GenParams) -> Result<Negotiation, GenError> {
    if params.procs == 0 || params.procs > 64 {
        return Err(GenError::InvalidParams(format!("process count {} not in 1..=64", params.procs)));
    }
    if params.nodes < 2 {
        return Err(GenError::InvalidParams("at least two nodes are needed".into()));
    }
    for (name, p) in [("loop", params.loop_prob), ("fork", params.fork_prob)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(GenError::InvalidParams(format!("{name} probability {p} not in [0,1]")));
        }
    }
    for i in 0..MAX_RETRIES {
        let n = attempt(params, params.seed.wrapping_add(i as u64 * 0x9e37_79b9_7f4a_7c15));
        if n.validate().is_empty() && is_sound_semantic(&n).unwrap_or(false) {
            return Ok(n);
        }
    }
    Err(GenError::RetryExhausted(MAX_RETRIES))
}

/// A random structural edit that keeps the negotiation valid: retarget one local
/// transition, drop an action at a node, or add an action at a node.
pub fn mutate(n: &Negotiation, rng: &mut impl Rng) -> Negotiation {
    let al = n.alphabet().clone();
    let trans: Vec<(Node, Act, Proc, Node)> = n.transitions().collect();
    for _ in 0..64 {
        let mut m = n.clone();
        match rng.gen_range(0..3) {
            0 if !trans.is_empty() => {
                let &(x, a, p, y) = trans.choose(rng).expect("nonempty");
                let cands: Vec<Node> = n.nodes().filter(|&z| z != y && n.dnode(z).contains(p)).collect();
                if let Some(&z) = cands.choose(rng) {
                    m.set_transition(x, a, p, z);
                    return m;
                }
            }
            1 if !trans.is_empty() => {
                let &(x, a, _, _) = trans.choose(rng).expect("nonempty");
                for p in al.dom(a).iter() {
                    m.remove_transition(x, a, p);
                }
                return m;
            }
            2 => {
                let x = Node(rng.gen_range(0..n.num_nodes()) as u32);
                if x == n.fin() {
                    continue;
                }
                let present = n.actions_at(x);
                let cands: Vec<Act> = al.acts().filter(|&a| al.dom(a) == n.dnode(x) && !present.contains(&a)).collect();
                let Some(&a) = cands.choose(rng) else { continue };
                for p in al.dom(a).iter() {
                    let targets: Vec<Node> = n.nodes().filter(|&z| n.dnode(z).contains(p)).collect();
                    m.set_transition(x, a, p, *targets.choose(rng).expect("fin contains every process"));
                }
                return m;
            }
            _ => {}
        }
    }
    n.clone()
}

/// The same negotiation with its nodes listed in a random order under fresh names.
pub fn shuffle_nodes(n: &Negotiation, rng: &mut impl Rng) -> Negotiation {
    let mut perm: Vec<usize> = (0..n.num_nodes()).collect();
    perm.shuffle(rng);
    // perm[old] = new position
    let mut nodes = vec![(String::new(), ProcSet::default()); n.num_nodes()];
    for m in n.nodes() {
        nodes[perm[m.index()]] = (format!("m{}", perm[m.index()]), n.dnode(m));
    }
    let map = |m: Node| Node(perm[m.index()] as u32);
    let mut out = Negotiation::new(n.alphabet().clone(), nodes, map(n.init()), map(n.fin())).expect("fresh names");
    for (x, a, p, y) in n.transitions() {
        out.set_transition(map(x), a, p, map(y));
    }
    out
}
