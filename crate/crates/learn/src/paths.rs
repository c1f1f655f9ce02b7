//! Learning with membership queries about local paths.
//!
//! The learner keeps state words `Q`, tests `T` and, for every state, the local letters
//! `out(u)` known to leave it. States are distinguished by their rows: membership of
//! `u·t` in the path language for each `t ∈ T`. The hypothesis has one node per state
//! and may be unsound; the teacher's product search copes with that.

use std::collections::{BTreeSet, HashMap};

use negotiation::traces::{max_executable_prefix, minimal_events, trace_quotient, upward_closure_split};
use negotiation::{Act, DistributedAlphabet, Local, Negotiation, Node, Proc, ProcSet};
use serde_json::json;
use thiserror::Error;

use crate::teacher::{EquivAnswer, Sign, Teacher, TeacherError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PathLearnError {
    #[error(transparent)]
    Teacher(#[from] TeacherError),
    #[error("invariant {invariant} violated: {detail}")]
    InvariantViolation { invariant: &'static str, detail: String },
    #[error("binary search found no split on a counterexample")]
    NoSplit,
    #[error("counterexample could not be classified")]
    Unclassifiable,
    #[error("no convergence after {0} rounds")]
    RoundLimit(usize),
}

/// What a counterexample tells the learner.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Repair {
    /// Letters `b@p` are missing at state `u`; `r` is a trace starting with `b`.
    AbsentTrans { b: Act, u: usize, r: Vec<Act> },
    /// The run of `v|_p` followed by `pi` passes through two states that `T` merges.
    Neq { p: Proc, v: Vec<Act>, pi: Vec<Local> },
}

#[derive(Clone, Debug, Default)]
pub struct Options {
    /// Re-verify the invariants after every round.
    pub check_invariants: bool,
    pub max_rounds: usize,
}

impl Options {
    pub fn checked() -> Self {
        Options { check_invariants: true, max_rounds: 0 }
    }
}

pub struct PathLearner {
    al: DistributedAlphabet,
    q: Vec<Vec<Local>>,
    q_index: HashMap<Vec<Local>, usize>,
    tests: Vec<Vec<Local>>,
    test_index: HashMap<Vec<Local>, usize>,
    out: Vec<BTreeSet<Local>>,
    rows: Vec<Vec<bool>>,
}

fn cat(a: &[Local], b: &[Local]) -> Vec<Local> {
    let mut v = a.to_vec();
    v.extend_from_slice(b);
    v
}

impl PathLearner {
    fn new(al: DistributedAlphabet) -> Self {
        PathLearner {
            al,
            q: Vec::new(),
            q_index: HashMap::new(),
            tests: Vec::new(),
            test_index: HashMap::new(),
            out: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn states(&self) -> &[Vec<Local>] {
        &self.q
    }

    pub fn tests(&self) -> &[Vec<Local>] {
        &self.tests
    }

    pub fn out(&self, u: usize) -> &BTreeSet<Local> {
        &self.out[u]
    }

    fn add_test(&mut self, t: Vec<Local>) -> bool {
        if self.test_index.contains_key(&t) {
            return false;
        }
        self.test_index.insert(t.clone(), self.tests.len());
        self.tests.push(t);
        true
    }

    fn add_state(&mut self, u: Vec<Local>) -> usize {
        if let Some(&i) = self.q_index.get(&u) {
            return i;
        }
        self.q_index.insert(u.clone(), self.q.len());
        self.q.push(u);
        self.out.push(BTreeSet::new());
        self.rows.push(Vec::new());
        self.q.len() - 1
    }

    /// Row of an arbitrary word against every test.
    fn row_of(&self, teacher: &mut Teacher, u: &[Local]) -> Vec<bool> {
        self.tests.iter().map(|t| teacher.member_path(&cat(u, t))).collect()
    }

    /// Brings every stored row up to date with `T`.
    fn refresh_rows(&mut self, teacher: &mut Teacher) {
        for i in 0..self.q.len() {
            while self.rows[i].len() < self.tests.len() {
                let t = &self.tests[self.rows[i].len()];
                let b = teacher.member_path(&cat(&self.q[i], t));
                self.rows[i].push(b);
            }
        }
    }

    fn class_of(&self, row: &[bool]) -> Option<usize> {
        (0..self.q.len()).find(|&i| self.rows[i] == row)
    }

    /// Adds `u·a` for every `a ∈ out(u)` whose row matches no state.
    fn restore_closure(&mut self, teacher: &mut Teacher) {
        self.refresh_rows(teacher);
        let mut i = 0;
        while i < self.q.len() {
            let letters: Vec<Local> = self.out[i].iter().copied().collect();
            for a in letters {
                let ua = cat(&self.q[i], &[a]);
                let row = self.row_of(teacher, &ua);
                if self.class_of(&row).is_none() {
                    let j = self.add_state(ua);
                    self.rows[j] = row;
                }
            }
            i += 1;
        }
    }

    fn eps_index(&self) -> usize {
        self.test_index[&Vec::new()]
    }

    fn final_state(&self) -> Option<usize> {
        let e = self.eps_index();
        (0..self.q.len()).find(|&i| self.rows[i][e])
    }

    fn dnode(&self, u: usize) -> ProcSet {
        if let Some(a) = self.out[u].first() {
            return self.al.dom(a.act);
        }
        let e = self.eps_index();
        if self.rows[u][e] {
            return self.al.all_procs();
        }
        self.tests
            .iter()
            .zip(&self.rows[u])
            .find(|(t, &b)| b && !t.is_empty())
            .map_or(self.al.all_procs(), |(t, _)| self.al.dom(t[0].act))
    }

    /// Target state of `u` under `a ∈ out(u)`.
    fn successor(&self, teacher: &mut Teacher, u: usize, a: Local) -> Option<usize> {
        let row = self.row_of(teacher, &cat(&self.q[u], &[a]));
        self.class_of(&row)
    }

    /// The hypothesis. When no state is accepting yet, an isolated final node is added.
    pub fn hypothesis(&self, teacher: &mut Teacher) -> Negotiation {
        let all = self.al.all_procs();
        let mut nodes: Vec<(String, ProcSet)> = (0..self.q.len()).map(|i| (format!("q{i}"), self.dnode(i))).collect();
        let fin = match self.final_state() {
            Some(f) => f,
            None => {
                nodes.push(("qf".to_string(), all));
                nodes.len() - 1
            }
        };
        let mut h = Negotiation::new(self.al.clone(), nodes, Node(0), Node(fin as u32)).expect("distinct names");
        for u in 0..self.q.len() {
            for &a in &self.out[u] {
                if let Some(v) = self.successor(teacher, u, a) {
                    h.set_transition(Node(u as u32), a.act, a.proc, Node(v as u32));
                }
            }
        }
        h
    }

    /// Adds `b@p` to `out(u)` and `(b⁻¹r)|_p` to `T` for every `p ∈ dom(b)`.
    fn apply_absent_trans(&mut self, b: Act, u: usize, r: &[Act]) {
        let rest = trace_quotient(&self.al, &[b], r).expect("b is minimal in r");
        for p in self.al.dom(b).iter() {
            self.out[u].insert(Local::new(b, p));
            self.add_test(self.al.project(rest.word(), p));
        }
    }

    /// Hypothesis states along `path` from the initial state.
    fn run(&self, h: &Negotiation, path: &[Local]) -> Option<Vec<usize>> {
        let mut x = h.init();
        let mut states = vec![x.index()];
        for &l in path {
            x = h.step_local(x, l)?;
            states.push(x.index());
        }
        Some(states)
    }

    /// Binary search on `v|_p·pi`: adds the distinguishing suffix to `T` and the split
    /// word to `Q`.
    fn apply_neq(&mut self, teacher: &mut Teacher, h: &Negotiation, p: Proc, v: &[Act], pi: &[Local]) -> Result<(), PathLearnError> {
        let word = self.al.project(v, p);
        let states = self.run(h, &word).ok_or(PathLearnError::NoSplit)?;
        let k = word.len();
        let f = |i: usize, me: &Self, teacher: &mut Teacher| {
            let q = &me.q[states[i]];
            teacher.member_path(&cat(&cat(q, &word[i..]), pi))
        };
        let (f0, fk) = (f(0, self, teacher), f(k, self, teacher));
        if f0 == fk {
            return Err(PathLearnError::NoSplit);
        }
        let (mut lo, mut hi) = (0, k);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if f(mid, self, teacher) == f0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let split = cat(&self.q[states[lo]], &[word[lo]]);
        self.add_test(cat(&word[hi..], pi));
        self.add_state(split);
        self.refresh_rows(teacher);
        Ok(())
    }

    fn classify(&self, teacher: &mut Teacher, h: &Negotiation, sign: Sign, w: &[Act]) -> Result<Repair, PathLearnError> {
        let al = &self.al;
        if sign == Sign::Negative {
            for p in al.procs() {
                if !teacher.member_path(&al.project(w, p)) {
                    return Ok(Repair::Neq { p, v: w.to_vec(), pi: Vec::new() });
                }
            }
            return Err(PathLearnError::Unclassifiable);
        }
        let ex = max_executable_prefix(h, w);
        let v = ex.prefix.word().to_vec();
        if ex.remainder.is_empty() {
            let p = al.procs().find(|&p| ex.end.at(p) != h.fin()).ok_or(PathLearnError::Unclassifiable)?;
            return Ok(Repair::Neq { p, v, pi: Vec::new() });
        }
        let rem = ex.remainder.word();
        let e = *minimal_events(al, rem).iter().min_by_key(|&&i| (rem[i], i)).expect("nonempty remainder");
        let b = rem[e];
        // Only the upward closure of the b-event matters for the processes of b.
        let (_, closure) = upward_closure_split(al, rem, e).expect("index in range");
        let r = closure.word().to_vec();
        let nodes: Vec<(Proc, usize)> = al.dom(b).iter().map(|p| (p, ex.end.at(p).index())).collect();
        let u = nodes[0].1;
        if nodes.iter().all(|&(_, x)| x == u) && u < self.q.len() {
            for &(p, _) in &nodes {
                let rp = al.project(&r, p);
                if !teacher.member_path(&cat(&self.q[u], &rp)) {
                    return Ok(Repair::Neq { p, v, pi: rp });
                }
            }
            return Ok(Repair::AbsentTrans { b, u, r });
        }
        // The processes of b wait at different states; some test separates two of them.
        // In the target they share a node after v, so one of the two runs is wrong.
        for &(p, up) in &nodes {
            for &(q, uq) in &nodes {
                if up == uq || up >= self.q.len() || uq >= self.q.len() {
                    continue;
                }
                let Some(ti) = (0..self.tests.len()).find(|&i| self.rows[up][i] != self.rows[uq][i]) else { continue };
                let t = self.tests[ti].clone();
                for (x, ux) in [(p, up), (q, uq)] {
                    let real = teacher.member_path(&cat(&al.project(&v, x), &t));
                    if real != self.rows[ux][ti] {
                        return Ok(Repair::Neq { p: x, v, pi: t });
                    }
                }
            }
        }
        Err(PathLearnError::Unclassifiable)
    }

    fn apply(&mut self, teacher: &mut Teacher, h: &Negotiation, repair: Repair) -> Result<(), PathLearnError> {
        match repair {
            Repair::AbsentTrans { b, u, r } => {
                self.apply_absent_trans(b, u, &r);
                Ok(())
            }
            Repair::Neq { p, v, pi } => self.apply_neq(teacher, h, p, &v, &pi),
        }
    }

    /// Violated invariants, checked with uncounted queries.
    pub fn invariant_violations(&self, teacher: &Teacher) -> Vec<(&'static str, String)> {
        let al = &self.al;
        let mut bad = Vec::new();
        let row = |u: &[Local]| -> Vec<bool> { self.tests.iter().map(|t| teacher.peek_path(&cat(u, t))).collect() };
        let rows: Vec<Vec<bool>> = self.q.iter().map(|u| row(u)).collect();
        for i in 0..self.q.len() {
            if rows[i] != self.rows[i] {
                bad.push(("cache", format!("stale row for {}", al.format_local_word(&self.q[i]))));
            }
            for j in 0..i {
                if rows[i] == rows[j] {
                    bad.push(("Uniqueness", format!("{} and {}", al.format_local_word(&self.q[j]), al.format_local_word(&self.q[i]))));
                }
            }
            if !rows[i].iter().any(|&b| b) {
                bad.push(("Pref", al.format_local_word(&self.q[i])));
            }
            for &a in &self.out[i] {
                let r = row(&cat(&self.q[i], &[a]));
                if !rows.contains(&r) {
                    bad.push(("Closure", format!("{} · {}", al.format_local_word(&self.q[i]), al.format_local(a))));
                }
                for q in al.dom(a.act).iter() {
                    if !self.out[i].contains(&Local::new(a.act, q)) {
                        bad.push(("Domain", format!("{} has {} but not {}@{}", al.format_local_word(&self.q[i]), al.format_local(a), al.act_name(a.act), al.proc_name(q))));
                    }
                }
                if self.out[i].iter().any(|x| al.dom(x.act) != al.dom(a.act)) {
                    bad.push(("Domain", format!("{} mixes domains", al.format_local_word(&self.q[i]))));
                }
            }
        }
        bad
    }

    fn check(&self, teacher: &Teacher, opts: &Options) -> Result<(), PathLearnError> {
        if !opts.check_invariants {
            return Ok(());
        }
        match self.invariant_violations(teacher).into_iter().next() {
            Some((invariant, detail)) => Err(PathLearnError::InvariantViolation { invariant, detail }),
            None => Ok(()),
        }
    }
}

#[derive(Debug)]
pub struct PathOutcome {
    pub hypothesis: Negotiation,
    pub rounds: usize,
    pub states: usize,
    pub out_letters: usize,
}

pub fn learn(teacher: &mut Teacher) -> Result<PathOutcome, PathLearnError> {
    learn_with(teacher, &Options { check_invariants: cfg!(debug_assertions), max_rounds: 0 })
}

pub fn learn_with(teacher: &mut Teacher, opts: &Options) -> Result<PathOutcome, PathLearnError> {
    let al = teacher.target().alphabet().clone();
    let empty = Negotiation::empty(al.clone());
    let w = match teacher.equiv(&empty)? {
        EquivAnswer::Equivalent => {
            return Ok(PathOutcome { hypothesis: empty, rounds: 0, states: 0, out_letters: 0 });
        }
        EquivAnswer::Counterexample { word, .. } => word,
    };
    let mut st = PathLearner::new(al.clone());
    st.add_state(Vec::new());
    st.add_test(Vec::new());
    for p in al.procs() {
        st.add_test(al.project(&w, p));
    }
    if let Some(&b) = w.first() {
        st.apply_absent_trans(b, 0, &w);
    }
    st.restore_closure(teacher);
    st.check(teacher, opts)?;
    let mut rounds = 0;
    loop {
        rounds += 1;
        if opts.max_rounds > 0 && rounds > opts.max_rounds {
            return Err(PathLearnError::RoundLimit(opts.max_rounds));
        }
        let h = st.hypothesis(teacher);
        let (sign, w) = match teacher.equiv(&h)? {
            EquivAnswer::Equivalent => {
                let out_letters = st.out.iter().map(BTreeSet::len).sum();
                return Ok(PathOutcome { hypothesis: h, rounds, states: st.q.len(), out_letters });
            }
            EquivAnswer::Counterexample { sign, word } => (sign, word),
        };
        let repair = st.classify(teacher, &h, sign, &w)?;
        teacher.note(|| {
            json!({"round": rounds, "states": st.q.len(), "tests": st.tests.len(), "repair": match &repair {
                Repair::AbsentTrans { b, u, .. } => format!("absent-trans {} at q{}", al.act_name(*b), u),
                Repair::Neq { p, .. } => format!("neq on {}", al.proc_name(*p)),
            }})
        });
        let before = (st.q.len(), st.out.iter().map(BTreeSet::len).sum::<usize>());
        st.apply(teacher, &h, repair)?;
        st.restore_closure(teacher);
        st.check(teacher, opts)?;
        let after = (st.q.len(), st.out.iter().map(BTreeSet::len).sum::<usize>());
        if after == before {
            return Err(PathLearnError::InvariantViolation { invariant: "progress", detail: format!("round {rounds} added nothing") });
        }
        teacher.note(|| json!({"round": rounds, "invariants": if opts.check_invariants { "ok" } else { "unchecked" }}));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use negotiation::automata::{minimize_negotiation, neg_equiv};
    use negotiation::fixtures;

    fn run(n: Negotiation) -> (PathOutcome, Teacher) {
        let mut t = Teacher::new(n).unwrap();
        let out = learn_with(&mut t, &Options::checked()).unwrap();
        (out, t)
    }

    #[test]
    fn learns_fork() {
        let (out, _) = run(fixtures::fork());
        assert_eq!(out.hypothesis.num_nodes(), 5);
        assert!(neg_equiv(&out.hypothesis, &fixtures::fork()).unwrap());
    }

    #[test]
    fn learns_ping() {
        let (out, _) = run(fixtures::ping());
        assert_eq!(out.hypothesis.num_nodes(), 3);
    }

    #[test]
    fn learns_mod15() {
        let target = fixtures::mod15();
        let (out, t) = run(target.clone());
        assert_eq!(out.hypothesis.num_nodes(), minimize_negotiation(&target).unwrap().num_nodes());
        assert!(neg_equiv(&out.hypothesis, &target).unwrap());
        assert!(t.stats().equivalence_total <= target.size());
    }

    #[test]
    fn fork_initialization() {
        let fork = fixtures::fork();
        let al = fork.alphabet().clone();
        let mut t = Teacher::new(fork).unwrap();
        let w = al.parse_word("c x y d").unwrap();
        let mut st = PathLearner::new(al.clone());
        st.add_state(Vec::new());
        st.add_test(Vec::new());
        for p in al.procs() {
            st.add_test(al.project(&w, p));
        }
        st.apply_absent_trans(al.act_id("c").unwrap(), 0, &w);
        let out: Vec<String> = st.out(0).iter().map(|&l| al.format_local(l)).collect();
        assert_eq!(out, ["c@p", "c@q"]);
        let tests: Vec<String> = st.tests().iter().map(|t| al.format_local_word(t)).collect();
        assert!(tests.contains(&"x@p d@p".to_string()) && tests.contains(&"y@q d@q".to_string()));
        st.restore_closure(&mut t);
        assert_eq!(st.states().len(), 3);
        assert!(st.invariant_violations(&t).is_empty());
    }
}
