//! Learning with membership queries about executions only.
//!
//! States `Q` and tests `T` are traces. A transition `u -(b,p)-> v` is witnessed by a
//! support `S(u,b,p)`, a `(b,p)`-step with `u·S(u,b,p)` equivalent to `v` under `T`.
//! Every hypothesis is made sound before it is submitted, which is what the analysis
//! of positive counterexamples relies on.

use std::collections::{BTreeMap, HashMap, VecDeque};

use negotiation::soundness::{find_any_pattern, is_sound_semantic, PatternWitness, SearchLimits, SoundnessError};
use negotiation::traces::{dmin, is_coprime, is_step, max_executable_prefix, minimal_events, step_decomposition, upward_closure, upward_closure_split, Move};
use negotiation::{Act, DistributedAlphabet, Local, Negotiation, Node, Proc, ProcSet, Trace};
use serde_json::json;
use thiserror::Error;

use crate::teacher::{EquivAnswer, Sign, Teacher, TeacherError};

/// Largest cycle power tried when repairing an undominated cycle.
const MAX_CYCLE_POWER: usize = 4096;
/// Repairs allowed while making one hypothesis sound.
const MAX_SOUNDNESS_REPAIRS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExecLearnError {
    #[error(transparent)]
    Teacher(#[from] TeacherError),
    #[error(transparent)]
    Soundness(#[from] SoundnessError),
    #[error("invariant {invariant} violated: {detail}")]
    InvariantViolation { invariant: &'static str, detail: String },
    #[error("binary search found no split")]
    NoSplit,
    #[error("no projection of the negative counterexample is rejected")]
    NoDefectiveProjection,
    #[error("descent on a positive counterexample ran out of events")]
    DescentExhausted,
    #[error("no repair found: {0}")]
    NoRepairFound(String),
    #[error("no convergence after {0} rounds")]
    RoundLimit(usize),
}

type Key = (usize, Act, Proc);

/// One transition of a hypothesis path, by state index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Step {
    pub from: usize,
    pub act: Act,
    pub proc: Proc,
    pub to: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Repair {
    /// `u·r ∈ L`, `r` co-prime and `min(r)` leaves `u` nowhere yet.
    AbsentTrans { u: usize, r: Trace },
    /// `from·S(from,act,proc)·r ∈ L` differs from `to·r ∈ L`.
    Target { from: usize, act: Act, proc: Proc, to: usize, r: Trace },
}

#[derive(Clone, Debug, Default)]
pub struct Options {
    pub check_invariants: bool,
    pub max_rounds: usize,
}

impl Options {
    pub fn checked() -> Self {
        Options { check_invariants: true, max_rounds: 0 }
    }
}

/// Where repairs came from.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RepairCounts {
    pub absent_trans: usize,
    pub target: usize,
    pub from_counterexamples: usize,
    pub from_soundness: usize,
    /// Repairs found by the path sweep after a handler failed.
    pub fallback: usize,
}

#[derive(Debug)]
pub struct ExecOutcome {
    pub hypothesis: Negotiation,
    pub rounds: usize,
    pub states: usize,
    pub supports: usize,
    pub tests: usize,
    /// Soundness of the hypothesis at each equivalence query after the bootstrap.
    pub sound_at_query: Vec<bool>,
    pub repairs: RepairCounts,
}

pub struct ExecLearner {
    al: DistributedAlphabet,
    q: Vec<Trace>,
    q_index: HashMap<Trace, usize>,
    tests: Vec<Trace>,
    test_index: HashMap<Trace, usize>,
    supports: BTreeMap<Key, Trace>,
    rows: Vec<Vec<bool>>,
    support_rows: BTreeMap<Key, Vec<bool>>,
    limits: SearchLimits,
}

fn word_of(parts: &[&Trace]) -> Vec<Act> {
    parts.iter().flat_map(|t| t.word().iter().copied()).collect()
}

impl ExecLearner {
    pub fn new(al: DistributedAlphabet) -> Self {
        let mut st = ExecLearner {
            al,
            q: Vec::new(),
            q_index: HashMap::new(),
            tests: Vec::new(),
            test_index: HashMap::new(),
            supports: BTreeMap::new(),
            rows: Vec::new(),
            support_rows: BTreeMap::new(),
            limits: SearchLimits::default(),
        };
        st.add_state(Trace::empty());
        st.add_test(Trace::empty());
        st
    }

    pub fn states(&self) -> &[Trace] {
        &self.q
    }

    pub fn tests(&self) -> &[Trace] {
        &self.tests
    }

    pub fn support(&self, u: usize, b: Act, p: Proc) -> Option<&Trace> {
        self.supports.get(&(u, b, p))
    }

    pub fn num_supports(&self) -> usize {
        self.supports.len()
    }

    fn add_test(&mut self, t: Trace) -> bool {
        if self.test_index.contains_key(&t) {
            return false;
        }
        self.test_index.insert(t.clone(), self.tests.len());
        self.tests.push(t);
        true
    }

    fn add_state(&mut self, u: Trace) -> usize {
        if let Some(&i) = self.q_index.get(&u) {
            return i;
        }
        self.q_index.insert(u.clone(), self.q.len());
        self.q.push(u);
        self.rows.push(Vec::new());
        self.q.len() - 1
    }

    fn member(&self, teacher: &mut Teacher, parts: &[&Trace]) -> bool {
        teacher.member_exec(&word_of(parts))
    }

    fn cat(&self, a: &Trace, b: &Trace) -> Trace {
        a.concat(&self.al, b)
    }

    /// Extends stored rows to the current tests and computes rows of new supports.
    fn refresh(&mut self, teacher: &mut Teacher) {
        for i in 0..self.q.len() {
            while self.rows[i].len() < self.tests.len() {
                let b = teacher.member_exec(&word_of(&[&self.q[i], &self.tests[self.rows[i].len()]]));
                self.rows[i].push(b);
            }
        }
        let keys: Vec<Key> = self.supports.keys().copied().collect();
        for key in keys {
            let x = self.cat(&self.q[key.0], &self.supports[&key]);
            let row = self.support_rows.entry(key).or_default();
            while row.len() < self.tests.len() {
                row.push(teacher.member_exec(&word_of(&[&x, &self.tests[row.len()]])));
            }
        }
    }

    fn class_of(&self, row: &[bool]) -> Option<usize> {
        (0..self.q.len()).find(|&i| self.rows[i] == row)
    }

    fn final_state(&self) -> Option<usize> {
        (0..self.q.len()).find(|&i| self.rows[i][0])
    }

    fn dnode(&self, u: usize) -> ProcSet {
        if self.rows[u][0] {
            return self.al.all_procs();
        }
        for (t, &b) in self.tests.iter().zip(&self.rows[u]) {
            if b {
                if let Ok(d) = dmin(&self.al, t.word()) {
                    return d;
                }
            }
        }
        match self.supports.range((u, Act(0), Proc(0))..).next() {
            Some((&(v, b, _), _)) if v == u => self.al.dom(b),
            _ => self.al.all_procs(),
        }
    }

    /// The hypothesis. Until a final state is known an isolated final node stands in.
    pub fn hypothesis(&self) -> Negotiation {
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
        for (&(u, b, p), row) in &self.support_rows {
            if let Some(v) = self.class_of(row) {
                h.set_transition(Node(u as u32), b, p, Node(v as u32));
            }
        }
        h
    }

    /// Sets `S(u,a,p)` from the decomposition of `r` for every `p ∈ dom(a)`, `a = min(r)`,
    /// and adds the tails to `T`.
    fn out_extend(&mut self, u: usize, r: &Trace) -> Result<(), ExecLearnError> {
        let a = *r.word().first().ok_or_else(|| invalid("empty absent-trans trace"))?;
        for p in self.al.dom(a).iter() {
            let dec = step_decomposition(&self.al, r.word(), p).map_err(|e| invalid(&e.to_string()))?;
            self.supports.insert((u, a, p), dec.step(&self.al));
            if !dec.tail.is_empty() {
                self.add_test(dec.tail);
            }
        }
        Ok(())
    }

    fn target_extend(&mut self, r: Trace) -> Result<(), ExecLearnError> {
        if !self.add_test(r) {
            return Err(invalid("target trace already in T"));
        }
        Ok(())
    }

    /// Adds `u·S(u,b,p)` to `Q` for every support whose row matches no state.
    fn restore_closure(&mut self, teacher: &mut Teacher) {
        self.refresh(teacher);
        let keys: Vec<Key> = self.supports.keys().copied().collect();
        for key in keys {
            let row = self.support_rows[&key].clone();
            if self.class_of(&row).is_none() {
                let x = self.cat(&self.q[key.0], &self.supports[&key]);
                let j = self.add_state(x);
                self.rows[j] = row;
            }
        }
    }

    fn walk(&self, h: &Negotiation, start: usize, locals: &[Local]) -> Option<Vec<Step>> {
        let mut x = Node(start as u32);
        let mut steps = Vec::with_capacity(locals.len());
        for &l in locals {
            let y = h.step_local(x, l)?;
            steps.push(Step { from: x.index(), act: l.act, proc: l.proc, to: y.index() });
            x = y;
        }
        Some(steps)
    }

    fn support_of(&self, s: &Step) -> &Trace {
        &self.supports[&(s.from, s.act, s.proc)]
    }

    pub fn support_concat(&self, steps: &[Step]) -> Trace {
        Trace::concat_all(&self.al, steps.iter().map(|s| self.support_of(s)))
    }

    fn end_of(steps: &[Step]) -> usize {
        steps.last().map_or(0, |s| s.to)
    }

    /// Finds `i` with `u_{i-1}·s_i…s_k·r ∈ L ⇎ u_i·s_{i+1}…s_k·r ∈ L` on a path from the
    /// initial state, given that the two ends of this chain disagree.
    pub fn path_binary_search(&self, teacher: &mut Teacher, steps: &[Step], r: &Trace) -> Result<Repair, ExecLearnError> {
        let k = steps.len();
        if k == 0 {
            return Err(ExecLearnError::NoSplit);
        }
        let mut suffix = vec![r.clone(); k + 1];
        for i in (0..k).rev() {
            suffix[i] = self.cat(self.support_of(&steps[i]), &suffix[i + 1]);
        }
        let node = |i: usize| if i == 0 { 0 } else { steps[i - 1].to };
        let g = |i: usize, teacher: &mut Teacher| self.member(teacher, &[&self.q[node(i)], &suffix[i]]);
        let g0 = g(0, teacher);
        if g0 == g(k, teacher) {
            return Err(ExecLearnError::NoSplit);
        }
        let (mut lo, mut hi) = (0, k);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if g(mid, teacher) == g0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let s = steps[hi - 1];
        Ok(Repair::Target { from: s.from, act: s.act, proc: s.proc, to: s.to, r: suffix[hi].clone() })
    }

    /// A test telling `x` apart from state `u`, preferring tests that are empty or start
    /// with `p`.
    fn distinguishing(&self, teacher: &mut Teacher, x: &Trace, u: usize, p: Option<Proc>) -> Option<Trace> {
        let mut other = None;
        for (i, t) in self.tests.iter().enumerate() {
            if self.member(teacher, &[x, t]) != self.rows[u][i] {
                let fits = t.is_empty() || p.is_none_or(|p| dmin(&self.al, t.word()).is_ok_and(|d| d.contains(p)));
                if fits {
                    return Some(t.clone());
                }
                other.get_or_insert_with(|| t.clone());
            }
        }
        other
    }

    /// Binary search along `steps` if their supports disagree with the end state.
    fn check_path(&self, teacher: &mut Teacher, steps: &[Step]) -> Result<Option<Repair>, ExecLearnError> {
        if steps.is_empty() {
            return Ok(None);
        }
        let sigma = self.support_concat(steps);
        let last = steps.last().map(|s| s.proc);
        match self.distinguishing(teacher, &sigma, Self::end_of(steps), last) {
            Some(t) => self.path_binary_search(teacher, steps, &t).map(Some),
            None => Ok(None),
        }
    }

    /// Checks the conditions a repair promises before it is applied.
    fn verify(&self, teacher: &mut Teacher, repair: &Repair) -> Result<(), String> {
        let al = &self.al;
        match repair {
            Repair::AbsentTrans { u, r } => {
                if r.is_empty() || !is_coprime(al, r.word()) {
                    return Err(format!("absent-trans trace {} is not co-prime", r.format(al)));
                }
                let a = r.word()[0];
                if al.dom(a).iter().any(|p| self.supports.contains_key(&(*u, a, p))) {
                    return Err(format!("{} already leaves q{u}", al.act_name(a)));
                }
                if !self.member(teacher, &[&self.q[*u], r]) {
                    return Err("absent-trans trace is not accepted".into());
                }
            }
            Repair::Target { from, act, proc, to, r } => {
                let Some(s) = self.supports.get(&(*from, *act, *proc)) else {
                    return Err("target transition has no support".into());
                };
                if self.test_index.contains_key(r) {
                    return Err(format!("target trace {} already in T", r.format(al)));
                }
                if !is_coprime(al, r.word()) || !dmin(al, r.word()).is_ok_and(|d| d.contains(*proc)) {
                    return Err(format!("target trace {} is not co-prime with {} minimal", r.format(al), al.proc_name(*proc)));
                }
                if self.member(teacher, &[&self.q[*from], s, r]) == self.member(teacher, &[&self.q[*to], r]) {
                    return Err("target biconditional holds".into());
                }
            }
        }
        Ok(())
    }

    fn apply(&mut self, repair: Repair) -> Result<(), ExecLearnError> {
        match repair {
            Repair::AbsentTrans { u, r } => self.out_extend(u, &r),
            Repair::Target { r, .. } => self.target_extend(r),
        }
    }

    pub fn handle_negative(&self, teacher: &mut Teacher, h: &Negotiation, w: &[Act]) -> Result<Repair, ExecLearnError> {
        for p in self.al.procs() {
            let steps = self.walk(h, 0, &self.al.project(w, p)).ok_or(ExecLearnError::NoDefectiveProjection)?;
            let sigma = self.support_concat(&steps);
            if !self.member(teacher, &[&sigma]) {
                return self.path_binary_search(teacher, &steps, &Trace::empty());
            }
        }
        Err(ExecLearnError::NoDefectiveProjection)
    }

    pub fn handle_positive(&self, teacher: &mut Teacher, h: &Negotiation, w: &[Act]) -> Result<Repair, ExecLearnError> {
        let al = &self.al;
        let ex = max_executable_prefix(h, w);
        let hist = &ex.history;
        if ex.remainder.is_empty() {
            // Everything fired but some process is stranded away from the final node.
            let p = al.procs().find(|&p| ex.end.at(p) != h.fin()).ok_or(ExecLearnError::DescentExhausted)?;
            let steps = self.replayed(hist, p);
            return self.check_path(teacher, &steps)?.ok_or(ExecLearnError::DescentExhausted);
        }
        let rem = ex.remainder.word();
        let e = *minimal_events(al, rem).iter().min_by_key(|&&i| (rem[i], i)).expect("nonempty remainder");
        let b = rem[e];
        let (v2, tb) = upward_closure_split(al, rem, e).expect("index in range");
        let v = self.cat(&ex.prefix, &v2);
        let nodes: Vec<(Proc, usize)> = al.dom(b).iter().map(|p| (p, ex.end.at(p).index())).collect();
        for &(p, up) in &nodes {
            if !self.member(teacher, &[&self.q[up], &tb]) {
                return self.descend(teacher, hist, p, v, tb, None);
            }
            if !al.dom(b).iter().any(|x| self.supports.contains_key(&(up, b, x))) {
                return Ok(Repair::AbsentTrans { u: up, r: tb });
            }
        }
        // Every process of b sits at a state offering b, so two of them sit apart.
        for &(p, up) in &nodes {
            for &(q, uq) in &nodes {
                if up == uq {
                    continue;
                }
                let Some(i) = (0..self.tests.len()).find(|&i| self.rows[up][i] && !self.rows[uq][i]) else { continue };
                let t = self.tests[i].clone();
                return if self.member(teacher, &[&v, &t]) {
                    self.descend(teacher, hist, q, v, t, None)
                } else {
                    self.descend(teacher, hist, p, v, t, Some(tb))
                };
            }
        }
        Err(ExecLearnError::DescentExhausted)
    }

    fn replayed(&self, hist: &[Vec<Move>], p: Proc) -> Vec<Step> {
        hist[p.index()].iter().map(|m| Step { from: m.from.index(), act: m.act, proc: p, to: m.to.index() }).collect()
    }

    /// Walks back along the anchor process `q`. Without a companion the state
    /// `u_k` rejects `t` while `v·t ∈ L`; with a companion `c`, `u_k` accepts `t`, `v`
    /// rejects it, and `v·c ∈ L`.
    fn descend(
        &self,
        teacher: &mut Teacher,
        hist: &[Vec<Move>],
        q: Proc,
        mut v: Trace,
        mut t: Trace,
        mut companion: Option<Trace>,
    ) -> Result<Repair, ExecLearnError> {
        let al = &self.al;
        let moves = &hist[q.index()];
        let mut j = moves.len();
        while j > 0 {
            let mv = moves[j - 1];
            let (from, to) = (mv.from.index(), mv.to.index());
            let s = self.supports.get(&(from, mv.act, q)).ok_or(ExecLearnError::DescentExhausted)?;
            let target = Repair::Target { from, act: mv.act, proc: q, to, r: t.clone() };
            let a = self.member(teacher, &[&self.q[from], s, &t]);
            // The anchor's last event and everything above it.
            let e = v.word().iter().rposition(|&x| al.dom(x).contains(q)).ok_or(ExecLearnError::DescentExhausted)?;
            let (shorter, sk) = upward_closure_split(al, v.word(), e).expect("index in range");
            match companion.take() {
                None => {
                    if a {
                        return Ok(target);
                    }
                    if self.member(teacher, &[&shorter, s, &t]) {
                        t = self.cat(s, &t);
                    } else {
                        let row = &self.support_rows[&(from, mv.act, q)];
                        let i = (0..self.tests.len())
                            .find(|&i| row[i] && (self.tests[i].is_empty() || dmin(al, self.tests[i].word()).is_ok_and(|d| d.contains(q))))
                            .ok_or(ExecLearnError::DescentExhausted)?;
                        companion = Some(self.cat(&sk, &t));
                        t = self.cat(s, &self.tests[i]);
                    }
                }
                Some(c) => {
                    if !a {
                        return Ok(target);
                    }
                    if self.member(teacher, &[&shorter, s, &t]) {
                        return Err(ExecLearnError::DescentExhausted);
                    }
                    t = self.cat(s, &t);
                    companion = Some(self.cat(&sk, &c));
                }
            }
            v = shorter;
            j -= 1;
        }
        Err(ExecLearnError::DescentExhausted)
    }

    /// A repair for an unsound hypothesis, located through a structural pattern.
    pub fn make_sound(&self, teacher: &mut Teacher, h: &Negotiation) -> Result<Option<Repair>, ExecLearnError> {
        if is_sound_semantic(h).map_err(SoundnessError::from)? {
            return Ok(None);
        }
        let witness = find_any_pattern(h, &self.limits)?.ok_or_else(|| ExecLearnError::NoRepairFound("unsound but no pattern".into()))?;
        let found = match &witness {
            PatternWitness::F { access, path1, path2, .. } => self.repair_fork(teacher, h, access, path1, path2)?,
            PatternWitness::C { entry, cycle } => self.repair_cycle(teacher, h, entry, cycle)?,
            PatternWitness::B { process, access, node } => self.repair_blocked(teacher, h, *process, access, node.index())?,
        };
        found.map(Some).ok_or_else(|| ExecLearnError::NoRepairFound(format!("pattern {} yielded nothing", witness.kind())))
    }

    fn repair_fork(
        &self,
        teacher: &mut Teacher,
        h: &Negotiation,
        access: &[Local],
        path1: &[Local],
        path2: &[Local],
    ) -> Result<Option<Repair>, ExecLearnError> {
        for path in [path1, path2] {
            let mut full = access.to_vec();
            full.extend_from_slice(path);
            let steps = self.walk(h, 0, &full).ok_or_else(|| invalid("fork witness does not walk"))?;
            for len in 1..=steps.len() {
                if let Some(r) = self.check_path(teacher, &steps[..len])? {
                    return Ok(Some(r));
                }
            }
        }
        Ok(None)
    }

    fn repair_cycle(&self, teacher: &mut Teacher, h: &Negotiation, entry: &[Local], cycle: &[Local]) -> Result<Option<Repair>, ExecLearnError> {
        let mut k = 1;
        while k <= MAX_CYCLE_POWER {
            let mut full = entry.to_vec();
            for _ in 0..k {
                full.extend_from_slice(cycle);
            }
            let steps = self.walk(h, 0, &full).ok_or_else(|| invalid("cycle witness does not walk"))?;
            if let Some(r) = self.check_path(teacher, &steps)? {
                return Ok(Some(r));
            }
            k *= 2;
        }
        Ok(None)
    }

    fn repair_blocked(&self, teacher: &mut Teacher, h: &Negotiation, p: Proc, access: &[Local], u: usize) -> Result<Option<Repair>, ExecLearnError> {
        let al = &self.al;
        let steps = self.walk(h, 0, access).ok_or_else(|| invalid("blocking witness does not walk"))?;
        let sigma = self.support_concat(&steps);
        let Some(i) = (0..self.tests.len()).find(|&i| {
            self.rows[u][i] && !self.tests[i].is_empty() && dmin(al, self.tests[i].word()).is_ok_and(|d| d.contains(p))
        }) else {
            return Ok(None);
        };
        let t = self.tests[i].clone();
        if !self.member(teacher, &[&sigma, &t]) {
            return self.path_binary_search(teacher, &steps, &t).map(Some);
        }
        // Split t along the events of p: rest[i] is the closure of the (i+1)-th p-event.
        let pe: Vec<usize> = (0..t.len()).filter(|&x| al.dom(t.word()[x]).contains(p)).collect();
        let k = pe.len();
        let mut rest: Vec<Trace> = pe
            .iter()
            .map(|&x| {
                let mask = upward_closure(al, t.word(), x);
                let w: Vec<Act> = t.word().iter().zip(&mask).filter(|(_, m)| **m).map(|(a, _)| *a).collect();
                Trace::new(al, &w)
            })
            .collect();
        rest.push(Trace::empty());
        let acts: Vec<Act> = pe.iter().map(|&x| t.word()[x]).collect();
        // Follow p's actions of t from u as far as the hypothesis allows.
        let mut path = steps.clone();
        let mut x = u;
        let mut j = 0;
        while j < k {
            match h.delta(Node(x as u32), acts[j], p) {
                Some(y) if self.supports.contains_key(&(x, acts[j], p)) => {
                    path.push(Step { from: x, act: acts[j], proc: p, to: y.index() });
                    x = y.index();
                    j += 1;
                }
                _ => break,
            }
        }
        let node_at = |i: usize| if i == 0 { u } else { path[steps.len() + i - 1].to };
        if j < k && self.member(teacher, &[&self.q[x], &rest[j]]) {
            return Ok(Some(Repair::AbsentTrans { u: x, r: rest[j].clone() }));
        }
        // y(i): the supports of the first i steps followed by the rest of t.
        let y = |i: usize, teacher: &mut Teacher| {
            let s = self.support_concat(&path[..steps.len() + i]);
            self.member(teacher, &[&s, &rest[i]])
        };
        if y(j, teacher) {
            return self.path_binary_search(teacher, &path[..steps.len() + j], &rest[j]).map(Some);
        }
        let (mut lo, mut hi) = (0, j);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if y(mid, teacher) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if hi == lo {
            return Ok(None);
        }
        let i = lo;
        if !self.member(teacher, &[&self.q[node_at(i)], &rest[i]]) {
            return self.path_binary_search(teacher, &path[..steps.len() + i], &rest[i]).map(Some);
        }
        if self.member(teacher, &[&self.q[node_at(i + 1)], &rest[i + 1]]) {
            return self.path_binary_search(teacher, &path[..steps.len() + i + 1], &rest[i + 1]).map(Some);
        }
        let st = path[steps.len() + i];
        Ok(Some(Repair::Target { from: st.from, act: st.act, proc: p, to: st.to, r: rest[i + 1].clone() }))
    }

    /// Last resort: compare every state with the supports along its shortest access
    /// path and along each outgoing transition.
    fn sweep(&self, teacher: &mut Teacher, h: &Negotiation) -> Result<Option<Repair>, ExecLearnError> {
        let mut access: Vec<Option<Vec<Local>>> = vec![None; h.num_nodes()];
        access[0] = Some(Vec::new());
        let mut queue = VecDeque::from([Node(0)]);
        let mut order = Vec::new();
        while let Some(x) = queue.pop_front() {
            order.push(x);
            for (l, y) in h.outgoing(x) {
                if access[y.index()].is_none() {
                    let mut path = access[x.index()].clone().expect("visited");
                    path.push(l);
                    access[y.index()] = Some(path);
                    queue.push_back(y);
                }
            }
        }
        for &x in &order {
            let base = access[x.index()].clone().expect("visited");
            let mut paths = vec![base.clone()];
            for (l, _) in h.outgoing(x) {
                let mut path = base.clone();
                path.push(l);
                paths.push(path);
            }
            for path in paths {
                let steps = self.walk(h, 0, &path).expect("hypothesis path");
                if let Some(r) = self.check_path(teacher, &steps)? {
                    if self.verify(teacher, &r).is_ok() {
                        return Ok(Some(r));
                    }
                }
            }
        }
        Ok(None)
    }

    /// Violated invariants, checked with uncounted queries. `closure` selects whether the
    /// closure invariant is expected to hold.
    pub fn invariant_violations(&self, teacher: &Teacher, closure: bool) -> Vec<(&'static str, String)> {
        let al = &self.al;
        let mut bad = Vec::new();
        let member = |parts: &[&Trace]| teacher.peek_exec(&word_of(parts));
        let row = |x: &Trace| -> Vec<bool> { self.tests.iter().map(|t| member(&[x, t])).collect() };
        let rows: Vec<Vec<bool>> = self.q.iter().map(&row).collect();
        let name = |u: usize| format!("q{u} = {}", self.q[u].format(al));
        for (i, t) in self.tests.iter().enumerate() {
            if i > 0 && !is_coprime(al, t.word()) {
                bad.push(("T co-prime", t.format(al)));
            }
        }
        if self.tests.len() > self.q.len() + self.supports.len() {
            bad.push(("|T| ≤ |Q| + |S|", format!("{} > {} + {}", self.tests.len(), self.q.len(), self.supports.len())));
        }
        for u in 0..self.q.len() {
            if rows[u].len() != self.rows[u].len() || rows[u] != self.rows[u] {
                bad.push(("cache", name(u)));
            }
            for v in 0..u {
                if rows[u] == rows[v] {
                    bad.push(("Uniqueness", format!("{} and {}", name(v), name(u))));
                }
            }
            if !rows[u].iter().any(|&b| b) {
                bad.push(("Pref", name(u)));
            }
        }
        if rows.iter().filter(|r| r[0]).count() > 1 {
            bad.push(("unique final", "several states are accepted".into()));
        }
        for (&(u, b, p), s) in &self.supports {
            let what = format!("S(q{u},{},{})", al.act_name(b), al.proc_name(p));
            if !is_step(al, s.word(), b, p) {
                bad.push(("step", format!("{what} = {}", s.format(al))));
            }
            for q in al.dom(b).iter() {
                if !self.supports.contains_key(&(u, b, q)) {
                    bad.push(("Domain", format!("{what} without process {}", al.proc_name(q))));
                }
            }
            let x = self.cat(&self.q[u], s);
            let pref = self.tests.iter().any(|t| {
                (t.is_empty() || dmin(al, t.word()).is_ok_and(|d| d.contains(p))) && member(&[&x, t])
            });
            if !pref {
                bad.push(("Pref'", what.clone()));
            }
            let r = row(&x);
            if self.support_rows.get(&(u, b, p)).is_some_and(|c| *c != r) {
                bad.push(("cache", what.clone()));
            }
            if closure && !rows.contains(&r) {
                bad.push(("Closure", what));
            }
        }
        bad
    }

    fn check(&self, teacher: &Teacher, opts: &Options, closure: bool) -> Result<(), ExecLearnError> {
        if !opts.check_invariants {
            return Ok(());
        }
        match self.invariant_violations(teacher, closure).into_iter().next() {
            Some((invariant, detail)) => Err(ExecLearnError::InvariantViolation { invariant, detail }),
            None => Ok(()),
        }
    }

    fn size(&self) -> (usize, usize) {
        (self.q.len(), self.supports.len())
    }

    fn describe(&self, r: &Repair) -> String {
        let al = &self.al;
        match r {
            Repair::AbsentTrans { u, r } => format!("absent-trans at q{u} with {}", r.format(al)),
            Repair::Target { from, act, proc, to, r } => {
                format!("target q{from} -({},{})-> q{to} with {}", al.act_name(*act), al.proc_name(*proc), r.format(al))
            }
        }
    }

    /// Verifies, applies and closes. A repair that fails verification is replaced by one
    /// from the sweep.
    fn repair(
        &mut self,
        teacher: &mut Teacher,
        h: &Negotiation,
        found: Result<Repair, ExecLearnError>,
        counts: &mut RepairCounts,
        opts: &Options,
    ) -> Result<(), ExecLearnError> {
        let checked = found.and_then(|r| match self.verify(teacher, &r) {
            Ok(()) => Ok(r),
            Err(why) => Err(ExecLearnError::NoRepairFound(why)),
        });
        let r = match checked {
            Ok(r) => r,
            Err(e) => {
                let note = e.to_string();
                teacher.note(|| json!({"fallback": note}));
                counts.fallback += 1;
                self.sweep(teacher, h)?.ok_or(e)?
            }
        };
        match r {
            Repair::AbsentTrans { .. } => counts.absent_trans += 1,
            Repair::Target { .. } => counts.target += 1,
        }
        let text = self.describe(&r);
        teacher.note(|| json!({"repair": text}));
        let before = self.size();
        self.apply(r)?;
        self.refresh(teacher);
        self.check(teacher, opts, false)?;
        self.restore_closure(teacher);
        self.check(teacher, opts, true)?;
        if self.size() == before {
            return Err(ExecLearnError::InvariantViolation { invariant: "progress", detail: "repair added no state or support".into() });
        }
        Ok(())
    }
}

fn invalid(why: &str) -> ExecLearnError {
    ExecLearnError::NoRepairFound(why.to_string())
}

pub fn learn(teacher: &mut Teacher) -> Result<ExecOutcome, ExecLearnError> {
    learn_with(teacher, &Options { check_invariants: cfg!(debug_assertions), max_rounds: 0 })
}

pub fn learn_with(teacher: &mut Teacher, opts: &Options) -> Result<ExecOutcome, ExecLearnError> {
    let al = teacher.target().alphabet().clone();
    let empty = Negotiation::empty(al.clone());
    let mut counts = RepairCounts::default();
    let w = match teacher.equiv(&empty)? {
        EquivAnswer::Equivalent => {
            return Ok(ExecOutcome {
                hypothesis: empty,
                rounds: 0,
                states: 0,
                supports: 0,
                tests: 0,
                sound_at_query: Vec::new(),
                repairs: counts,
            })
        }
        EquivAnswer::Counterexample { word, .. } => Trace::new(&al, &word),
    };
    let mut st = ExecLearner::new(al.clone());
    st.add_test(w.clone());
    if !w.is_empty() {
        st.out_extend(0, &w)?;
    }
    st.restore_closure(teacher);
    st.check(teacher, opts, true)?;
    let mut sound_at_query = Vec::new();
    let mut rounds = 0;
    loop {
        rounds += 1;
        if opts.max_rounds > 0 && rounds > opts.max_rounds {
            return Err(ExecLearnError::RoundLimit(opts.max_rounds));
        }
        let mut h = st.hypothesis();
        let mut fixes = 0;
        loop {
            let found = match st.make_sound(teacher, &h) {
                Ok(None) => break,
                Ok(Some(r)) => Ok(r),
                Err(e @ ExecLearnError::Soundness(_)) => return Err(e),
                Err(e) => Err(e),
            };
            fixes += 1;
            if fixes > MAX_SOUNDNESS_REPAIRS {
                return Err(ExecLearnError::NoRepairFound("soundness repairs do not terminate".into()));
            }
            counts.from_soundness += 1;
            st.repair(teacher, &h, found, &mut counts, opts)?;
            h = st.hypothesis();
        }
        let sound = is_sound_semantic(&h).map_err(SoundnessError::from)?;
        sound_at_query.push(sound);
        teacher.note(|| json!({"round": rounds, "states": st.q.len(), "supports": st.supports.len(), "tests": st.tests.len(), "sound": sound}));
        let (sign, w) = match teacher.equiv(&h)? {
            EquivAnswer::Equivalent => {
                return Ok(ExecOutcome {
                    hypothesis: h,
                    rounds,
                    states: st.q.len(),
                    supports: st.supports.len(),
                    tests: st.tests.len(),
                    sound_at_query,
                    repairs: counts,
                });
            }
            EquivAnswer::Counterexample { sign, word } => (sign, word),
        };
        let found = match sign {
            Sign::Negative => st.handle_negative(teacher, &h, &w),
            Sign::Positive => st.handle_positive(teacher, &h, &w),
        };
        counts.from_counterexamples += 1;
        st.repair(teacher, &h, found, &mut counts, opts)?;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use negotiation::automata::{minimize_negotiation, neg_equiv};
    use negotiation::fixtures;

    fn run(n: Negotiation) -> (ExecOutcome, Teacher) {
        let mut t = Teacher::new(n).unwrap();
        let out = learn_with(&mut t, &Options::checked()).unwrap();
        (out, t)
    }

    #[test]
    fn learns_fork() {
        let (out, t) = run(fixtures::fork());
        assert!(neg_equiv(&out.hypothesis, &fixtures::fork()).unwrap());
        assert_eq!(out.hypothesis.num_nodes(), 5);
        assert!(out.sound_at_query.iter().all(|&s| s));
        assert!(t.stats().equivalence_total <= fixtures::fork().size());
    }

    #[test]
    fn learns_ping() {
        let (out, _) = run(fixtures::ping());
        assert_eq!(out.hypothesis.num_nodes(), 3);
    }

    #[test]
    fn learns_mod15() {
        let target = fixtures::mod15();
        let (out, _) = run(target.clone());
        assert_eq!(out.hypothesis.num_nodes(), minimize_negotiation(&target).unwrap().num_nodes());
        assert!(neg_equiv(&out.hypothesis, &target).unwrap());
    }

    fn t(al: &DistributedAlphabet, s: &str) -> Trace {
        Trace::new(al, &al.parse_word(s).unwrap())
    }

    /// MOD15 with states `ε, b, b b, e` and tests that cannot tell `b b b` from `ε`.
    fn mod3_learner(teacher: &mut Teacher) -> ExecLearner {
        let al = teacher.target().alphabet().clone();
        let mut st = ExecLearner::new(al.clone());
        for u in ["b", "b b", "e"] {
            st.add_state(t(&al, u));
        }
        for r in ["b b b b b b b b b b b b b b e", "b b b b b b b b b b b b b e"] {
            st.add_test(t(&al, r));
        }
        let (b, e) = (al.act_id("b").unwrap(), al.act_id("e").unwrap());
        for p in al.procs() {
            for u in 0..3 {
                st.supports.insert((u, b, p), t(&al, "b"));
            }
            st.supports.insert((0, e, p), t(&al, "e"));
        }
        st.refresh(teacher);
        st
    }

    #[test]
    fn binary_search_stays_logarithmic() {
        let mut teacher = Teacher::new(fixtures::mod15()).unwrap();
        let st = mod3_learner(&mut teacher);
        let al = teacher.target().alphabet().clone();
        let (b, p) = (al.act_id("b").unwrap(), al.proc_id("p").unwrap());
        let k = 21;
        let steps: Vec<Step> = (0..k).map(|i| Step { from: i % 3, act: b, proc: p, to: (i + 1) % 3 }).collect();
        let before = teacher.stats().membership_total;
        let r = st.path_binary_search(&mut teacher, &steps, &t(&al, "e")).unwrap();
        let used = teacher.stats().membership_total - before;
        assert!(used <= 2 * (k as f64).log2().ceil() as usize + 2, "{used} queries");
        assert!(st.verify(&mut teacher, &r).is_ok(), "{r:?}");
    }

    #[test]
    fn binary_search_needs_disagreeing_ends() {
        let mut teacher = Teacher::new(fixtures::mod15()).unwrap();
        let st = mod3_learner(&mut teacher);
        let al = teacher.target().alphabet().clone();
        let (b, p) = (al.act_id("b").unwrap(), al.proc_id("p").unwrap());
        let steps: Vec<Step> = (0..3).map(|i| Step { from: i, act: b, proc: p, to: (i + 1) % 3 }).collect();
        assert_eq!(st.path_binary_search(&mut teacher, &steps, &t(&al, "b b")), Err(ExecLearnError::NoSplit));
        assert_eq!(st.path_binary_search(&mut teacher, &[], &Trace::empty()), Err(ExecLearnError::NoSplit));
    }

    #[test]
    fn negative_counterexample_on_folded_counter() {
        let mut teacher = Teacher::new(fixtures::mod15()).unwrap();
        let st = mod3_learner(&mut teacher);
        let al = teacher.target().alphabet().clone();
        let h = st.hypothesis();
        assert_eq!(h.num_nodes(), 4);
        let EquivAnswer::Counterexample { sign: Sign::Negative, word } = teacher.equiv_uncounted(&h).unwrap() else {
            panic!("expected a negative counterexample");
        };
        assert_eq!(al.format_word(&word), "b b b e");
        let before = teacher.stats().membership_total;
        let r = st.handle_negative(&mut teacher, &h, &word).unwrap();
        let used = teacher.stats().membership_total - before;
        assert!(used <= al.num_procs() + 2 * (word.len() as f64).log2().ceil() as usize + 2, "{used} queries");
        let b = al.act_id("b").unwrap();
        assert!(matches!(&r, Repair::Target { from: 2, act, to: 0, r, .. } if *act == b && r.format(&al) == "e"), "{r:?}");
        assert!(st.verify(&mut teacher, &r).is_ok());
    }

    fn fork_after_init(teacher: &mut Teacher) -> ExecLearner {
        let al = teacher.target().alphabet().clone();
        let w = t(&al, "c x y d");
        let mut st = ExecLearner::new(al);
        st.add_test(w.clone());
        st.out_extend(0, &w).unwrap();
        st.restore_closure(teacher);
        st
    }

    #[test]
    fn missing_transition_gives_absent_trans() {
        let mut teacher = Teacher::new(fixtures::fork()).unwrap();
        let st = fork_after_init(&mut teacher);
        let al = teacher.target().alphabet().clone();
        let h = st.hypothesis();
        let r = st.handle_positive(&mut teacher, &h, &al.parse_word("c x y d").unwrap()).unwrap();
        let at = st.q_index[&t(&al, "c y")];
        assert_eq!(r, Repair::AbsentTrans { u: at, r: t(&al, "x d") });
        assert!(st.verify(&mut teacher, &r).is_ok());
    }

    #[test]
    fn soundness_repairs_terminate() {
        let mut teacher = Teacher::new(fixtures::fork()).unwrap();
        let mut st = fork_after_init(&mut teacher);
        let mut repairs = 0;
        loop {
            let h = st.hypothesis();
            let Some(r) = st.make_sound(&mut teacher, &h).unwrap() else { break };
            st.verify(&mut teacher, &r).unwrap();
            st.apply(r).unwrap();
            st.restore_closure(&mut teacher);
            assert!(st.invariant_violations(&teacher, true).is_empty());
            repairs += 1;
            assert!(repairs <= fixtures::fork().size(), "too many repairs");
        }
        assert!(is_sound_semantic(&st.hypothesis()).unwrap());
    }

    #[test]
    fn target_trace_already_in_tests_is_rejected() {
        let mut teacher = Teacher::new(fixtures::mod15()).unwrap();
        let st = mod3_learner(&mut teacher);
        let al = teacher.target().alphabet().clone();
        let (b, p) = (al.act_id("b").unwrap(), al.proc_id("p").unwrap());
        let r = Repair::Target { from: 2, act: b, proc: p, to: 0, r: t(&al, "b b b b b b b b b b b b b e") };
        assert!(st.verify(&mut teacher, &r).unwrap_err().contains("already in T"));
    }

    #[test]
    fn fork_initialization() {
        let fork = fixtures::fork();
        let al = fork.alphabet().clone();
        let mut t = Teacher::new(fork).unwrap();
        let w = Trace::new(&al, &al.parse_word("c x y d").unwrap());
        let mut st = ExecLearner::new(al.clone());
        st.add_test(w.clone());
        st.out_extend(0, &w).unwrap();
        let (c, p, q) = (al.act_id("c").unwrap(), al.proc_id("p").unwrap(), al.proc_id("q").unwrap());
        assert_eq!(st.support(0, c, p).unwrap().format(&al), "c y");
        assert_eq!(st.support(0, c, q).unwrap().format(&al), "c x");
        let tests: Vec<String> = st.tests().iter().map(|t| t.format(&al)).collect();
        assert_eq!(tests, ["", "c x y d", "x d", "y d"]);
        st.restore_closure(&mut t);
        assert!(st.invariant_violations(&t, true).is_empty());
        let h = st.hypothesis();
        assert_eq!(h.actions_at(h.init()).into_iter().collect::<Vec<_>>(), vec![c]);
    }
}
