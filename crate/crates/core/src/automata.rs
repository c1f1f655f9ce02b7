//! Partial DFAs over local letters: the path language of a negotiation, minimization,
//! dom-completeness and the way back from automata to negotiations.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::alphabet::{DistributedAlphabet, Local, ProcSet};
use crate::model::{Negotiation, Node};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DfaError {
    #[error("automaton is not dom-complete: {}", .0.join("; "))]
    NotDomComplete(Vec<String>),
    #[error("automaton has {0} final states, expected one")]
    MultipleFinals(usize),
    #[error("final state has outgoing transitions")]
    FinalHasOutgoing,
    #[error("negotiations are over different alphabets")]
    AlphabetMismatch,
}

/// A deterministic automaton whose transition map may be partial.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartialDfa {
    alphabet: DistributedAlphabet,
    delta: Vec<BTreeMap<Local, usize>>,
    init: usize,
    finals: BTreeSet<usize>,
}

impl PartialDfa {
    pub fn new(
        alphabet: DistributedAlphabet,
        delta: Vec<BTreeMap<Local, usize>>,
        init: usize,
        finals: BTreeSet<usize>,
    ) -> Self {
        PartialDfa { alphabet, delta, init, finals }
    }

    pub fn alphabet(&self) -> &DistributedAlphabet {
        &self.alphabet
    }

    pub fn num_states(&self) -> usize {
        self.delta.len()
    }

    pub fn init(&self) -> usize {
        self.init
    }

    pub fn finals(&self) -> &BTreeSet<usize> {
        &self.finals
    }

    pub fn is_final(&self, s: usize) -> bool {
        self.finals.contains(&s)
    }

    /// Letters with a transition from `s`, in letter order.
    pub fn out(&self, s: usize) -> impl Iterator<Item = Local> + '_ {
        self.delta[s].keys().copied()
    }

    pub fn next(&self, s: usize, l: Local) -> Option<usize> {
        self.delta[s].get(&l).copied()
    }

    pub fn transitions(&self, s: usize) -> impl Iterator<Item = (Local, usize)> + '_ {
        self.delta[s].iter().map(|(&l, &t)| (l, t))
    }

    pub fn num_transitions(&self) -> usize {
        self.delta.iter().map(BTreeMap::len).sum()
    }

    pub fn run(&self, w: &[Local]) -> Option<usize> {
        w.iter().try_fold(self.init, |s, &l| self.next(s, l))
    }

    pub fn accepts(&self, w: &[Local]) -> bool {
        self.run(w).is_some_and(|s| self.is_final(s))
    }

    fn reachable(&self) -> Vec<bool> {
        let mut seen = vec![false; self.num_states()];
        let mut stack = vec![self.init];
        seen[self.init] = true;
        while let Some(s) = stack.pop() {
            for (_, t) in self.transitions(s) {
                if !seen[t] {
                    seen[t] = true;
                    stack.push(t);
                }
            }
        }
        seen
    }

    fn coreachable(&self) -> Vec<bool> {
        let mut preds = vec![Vec::new(); self.num_states()];
        for s in 0..self.num_states() {
            for (_, t) in self.transitions(s) {
                preds[t].push(s);
            }
        }
        let mut seen = vec![false; self.num_states()];
        let mut stack: Vec<usize> = self.finals.iter().copied().collect();
        for &f in &stack {
            seen[f] = true;
        }
        while let Some(t) = stack.pop() {
            for &s in &preds[t] {
                if !seen[s] {
                    seen[s] = true;
                    stack.push(s);
                }
            }
        }
        seen
    }

    /// Restricts to reachable and co-reachable states. The initial state is always kept.
    pub fn trim(&self) -> PartialDfa {
        let reach = self.reachable();
        let coreach = self.coreachable();
        let keep: Vec<bool> = (0..self.num_states()).map(|s| s == self.init || (reach[s] && coreach[s])).collect();
        let mut delta = self.delta.clone();
        for (s, row) in delta.iter_mut().enumerate() {
            if !keep[s] {
                row.clear();
            } else {
                row.retain(|_, t| keep[*t]);
            }
        }
        let finals = self.finals.iter().copied().filter(|&f| keep[f] && reach[f]).collect();
        PartialDfa { alphabet: self.alphabet.clone(), delta, init: self.init, finals }.canonical()
    }

    /// Renumbers reachable states in breadth-first order from the initial state,
    /// visiting letters in order, and drops unreachable states.
    pub fn canonical(&self) -> PartialDfa {
        let mut order = vec![usize::MAX; self.num_states()];
        let mut queue = VecDeque::from([self.init]);
        order[self.init] = 0;
        let mut seq = vec![self.init];
        while let Some(s) = queue.pop_front() {
            for (_, t) in self.transitions(s) {
                if order[t] == usize::MAX {
                    order[t] = seq.len();
                    seq.push(t);
                    queue.push_back(t);
                }
            }
        }
        let delta = seq
            .iter()
            .map(|&s| self.transitions(s).map(|(l, t)| (l, order[t])).collect())
            .collect();
        let finals = self.finals.iter().filter(|&&f| order[f] != usize::MAX).map(|&f| order[f]).collect();
        PartialDfa { alphabet: self.alphabet.clone(), delta, init: 0, finals }
    }

    /// The minimal partial DFA for the same language, canonically numbered.
    ///
    /// The automaton is completed with a sink, refined by Moore's algorithm, and the
    /// sink class is removed again before trimming.
    pub fn minimize(&self) -> PartialDfa {
        let letters = self.alphabet.locals();
        let n = self.num_states();
        let sink = n;
        let next = |s: usize, l: Local| if s == sink { sink } else { self.next(s, l).unwrap_or(sink) };
        let mut class: Vec<usize> = (0..=n).map(|s| usize::from(s < n && self.is_final(s))).collect();
        let mut count = class.iter().collect::<BTreeSet<_>>().len();
        loop {
            let mut ids: HashMap<(usize, Vec<usize>), usize> = HashMap::new();
            let refined: Vec<usize> = (0..=n)
                .map(|s| {
                    let sig = (class[s], letters.iter().map(|&l| class[next(s, l)]).collect());
                    let k = ids.len();
                    *ids.entry(sig).or_insert(k)
                })
                .collect();
            let new_count = ids.len();
            class = refined;
            if new_count == count {
                break;
            }
            count = new_count;
        }
        let sink_class = class[sink];
        let mut delta = vec![BTreeMap::new(); count];
        let mut finals = BTreeSet::new();
        for s in 0..n {
            let c = class[s];
            if self.is_final(s) {
                finals.insert(c);
            }
            for (l, t) in self.transitions(s) {
                if class[t] != sink_class {
                    delta[c].insert(l, class[t]);
                }
            }
        }
        PartialDfa { alphabet: self.alphabet.clone(), delta, init: class[self.init], finals }.trim()
    }

    /// Violations of dom-completeness; empty when the automaton is dom-complete.
    pub fn dom_violations(&self) -> Vec<String> {
        let al = &self.alphabet;
        let mut out = Vec::new();
        for s in 0..self.num_states() {
            let letters: Vec<Local> = self.out(s).collect();
            for l in &letters {
                for q in al.dom(l.act).iter() {
                    if self.next(s, Local::new(l.act, q)).is_none() {
                        out.push(format!(
                            "state {s}: {} present but {} missing",
                            al.format_local(*l),
                            al.format_local(Local::new(l.act, q))
                        ));
                    }
                }
            }
            let doms: BTreeSet<ProcSet> = letters.iter().map(|l| al.dom(l.act)).collect();
            if doms.len() > 1 {
                out.push(format!("state {s}: outgoing actions have different domains"));
            }
        }
        if !self.out(self.init).any(|l| al.dom(l.act) == al.all_procs()) {
            out.push("initial state has no action involving all processes".to_string());
        }
        out
    }

    pub fn is_dom_complete(&self) -> bool {
        self.dom_violations().is_empty()
    }

    /// The negotiation whose nodes are the states of this automaton.
    pub fn negotiation_from_dfa(&self) -> Result<Negotiation, DfaError> {
        let violations = self.dom_violations();
        if !violations.is_empty() {
            return Err(DfaError::NotDomComplete(violations));
        }
        if self.finals.len() != 1 {
            return Err(DfaError::MultipleFinals(self.finals.len()));
        }
        let fin = *self.finals.iter().next().expect("one final");
        if self.out(fin).next().is_some() {
            return Err(DfaError::FinalHasOutgoing);
        }
        let al = &self.alphabet;
        let mut nodes = Vec::with_capacity(self.num_states());
        for s in 0..self.num_states() {
            let dom = match self.out(s).next() {
                Some(l) => al.dom(l.act),
                None if s == fin => al.all_procs(),
                // A state without outgoing letters that is not final cannot occur after
                // trimming; give it the full domain so the result stays well formed.
                None => al.all_procs(),
            };
            nodes.push((format!("n{s}"), dom));
        }
        let mut neg =
            Negotiation::new(al.clone(), nodes, Node(self.init as u32), Node(fin as u32)).expect("distinct names");
        for s in 0..self.num_states() {
            for (l, t) in self.transitions(s) {
                neg.set_transition(Node(s as u32), l.act, l.proc, Node(t as u32));
            }
        }
        Ok(neg)
    }

    /// JSON export mirroring the negotiation format, with `a@p` transition labels.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Out {
            states: Vec<String>,
            init: String,
            finals: Vec<String>,
            transitions: Vec<[String; 3]>,
        }
        let name = |s: usize| format!("s{s}");
        let out = Out {
            states: (0..self.num_states()).map(name).collect(),
            init: name(self.init),
            finals: self.finals.iter().map(|&f| name(f)).collect(),
            transitions: (0..self.num_states())
                .flat_map(|s| self.transitions(s).map(move |(l, t)| (s, l, t)))
                .map(|(s, l, t)| [name(s), self.alphabet.format_local(l), name(t)])
                .collect(),
        };
        serde_json::to_string(&out).expect("serializable")
    }
}

/// The graph of `n` read as an automaton accepting `Paths(n)`.
pub fn paths_dfa(n: &Negotiation) -> PartialDfa {
    let delta = n.nodes().map(|m| n.outgoing(m).map(|(l, t)| (l, t.index())).collect()).collect();
    PartialDfa::new(n.alphabet().clone(), delta, n.init().index(), BTreeSet::from([n.fin().index()]))
}

/// The minimal negotiation with the same path language as `n`.
pub fn minimize_negotiation(n: &Negotiation) -> Result<Negotiation, DfaError> {
    paths_dfa(n).minimize().negotiation_from_dfa()
}

/// Maps every node of `n` to the state of `m` reached by its access path, provided the
/// map preserves every transition.
pub fn homomorphism(n: &Negotiation, m: &Negotiation) -> Option<Vec<Node>> {
    if n.alphabet() != m.alphabet() {
        return None;
    }
    let mut image: Vec<Option<Node>> = vec![None; n.num_nodes()];
    image[n.init().index()] = Some(m.init());
    let mut queue = VecDeque::from([n.init()]);
    while let Some(x) = queue.pop_front() {
        let hx = image[x.index()]?;
        for (l, y) in n.outgoing(x) {
            let hy = m.step_local(hx, l)?;
            match image[y.index()] {
                Some(prev) if prev != hy => return None,
                Some(_) => {}
                None => {
                    image[y.index()] = Some(hy);
                    queue.push_back(y);
                }
            }
        }
    }
    let map: Vec<Node> = image.into_iter().collect::<Option<_>>()?;
    (map[n.fin().index()] == m.fin()).then_some(map)
}

/// Language equivalence of two sound deterministic negotiations, decided by comparing
/// their minimal path automata.
///
/// The alphabets may declare different actions; letters are matched by name. Differing
/// process lists, or a shared action with different domains, are an error.
pub fn neg_equiv(n1: &Negotiation, n2: &Negotiation) -> Result<bool, DfaError> {
    let (a1, a2) = (n1.alphabet(), n2.alphabet());
    if a1.proc_names() != a2.proc_names() {
        return Err(DfaError::AlphabetMismatch);
    }
    for a in a1.acts() {
        if let Some(b) = a2.act_id(a1.act_name(a)) {
            if a1.dom(a) != a2.dom(b) {
                return Err(DfaError::AlphabetMismatch);
            }
        }
    }
    if a1 == a2 {
        return Ok(paths_dfa(n1).minimize() == paths_dfa(n2).minimize());
    }
    Ok(named_form(&paths_dfa(n1).minimize()) == named_form(&paths_dfa(n2).minimize()))
}

/// Canonical numbering of a minimal automaton with letters identified by name.
/// Transitions keyed by action and process names, plus the final states.
type NamedForm = (Vec<BTreeMap<(String, String), usize>>, BTreeSet<usize>);

fn named_form(a: &PartialDfa) -> NamedForm {
    let al = a.alphabet();
    let key = |l: Local| (al.act_name(l.act).to_string(), al.proc_name(l.proc).to_string());
    let mut order = vec![usize::MAX; a.num_states()];
    let mut seq = vec![a.init()];
    order[a.init()] = 0;
    let mut i = 0;
    while i < seq.len() {
        let s = seq[i];
        let mut succ: Vec<((String, String), usize)> = a.transitions(s).map(|(l, t)| (key(l), t)).collect();
        succ.sort();
        for (_, t) in succ {
            if order[t] == usize::MAX {
                order[t] = seq.len();
                seq.push(t);
            }
        }
        i += 1;
    }
    let rows = seq.iter().map(|&s| a.transitions(s).map(|(l, t)| (key(l), order[t])).collect()).collect();
    let finals = a.finals().iter().filter(|&&f| order[f] != usize::MAX).map(|&f| order[f]).collect();
    (rows, finals)
}
