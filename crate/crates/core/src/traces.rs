//! Mazurkiewicz traces over a distributed alphabet.
//!
//! Two letters commute when their domains are disjoint. Traces are stored in their
//! lexicographic normal form under the declared action order, so equality of traces
//! is equality of stored words.

use std::collections::{BTreeSet, VecDeque};

use thiserror::Error;

use crate::alphabet::{Act, DistributedAlphabet, Proc, ProcSet};
use crate::model::{Configuration, Negotiation, Node};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TraceError {
    #[error("trace is not co-prime")]
    NotCoprime,
    #[error("process is not in the domain of the minimal action")]
    ProcessNotInDmin,
    #[error("event index {0} out of range")]
    IndexOutOfRange(usize),
}

/// A trace, represented by its lexicographic normal form.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Default)]
pub struct Trace(Vec<Act>);

impl Trace {
    pub fn new(al: &DistributedAlphabet, w: &[Act]) -> Self {
        Trace(normal_form(al, w))
    }

    pub fn empty() -> Self {
        Trace(Vec::new())
    }

    pub fn word(&self) -> &[Act] {
        &self.0
    }

    pub fn into_word(self) -> Vec<Act> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The trace of `self` followed by `other`.
    pub fn concat(&self, al: &DistributedAlphabet, other: &Trace) -> Trace {
        if other.is_empty() {
            return self.clone();
        }
        if self.is_empty() {
            return other.clone();
        }
        let mut w = self.0.clone();
        w.extend_from_slice(&other.0);
        Trace::new(al, &w)
    }

    pub fn concat_all<'a>(al: &DistributedAlphabet, parts: impl IntoIterator<Item = &'a Trace>) -> Trace {
        let w: Vec<Act> = parts.into_iter().flat_map(|t| t.0.iter().copied()).collect();
        Trace::new(al, &w)
    }

    pub fn format(&self, al: &DistributedAlphabet) -> String {
        al.format_word(&self.0)
    }
}

/// Per-process queues of event positions; the front of a queue is that process's
/// next unconsumed event.
struct Frontier<'a> {
    al: &'a DistributedAlphabet,
    w: &'a [Act],
    queues: Vec<VecDeque<usize>>,
    done: Vec<bool>,
}

impl<'a> Frontier<'a> {
    fn new(al: &'a DistributedAlphabet, w: &'a [Act]) -> Self {
        let mut queues = vec![VecDeque::new(); al.num_procs()];
        for (i, &a) in w.iter().enumerate() {
            for p in al.dom(a).iter() {
                queues[p.index()].push_back(i);
            }
        }
        Frontier { al, w, queues, done: vec![false; w.len()] }
    }

    fn is_minimal(&self, i: usize) -> bool {
        !self.done[i] && self.al.dom(self.w[i]).iter().all(|p| self.queues[p.index()].front() == Some(&i))
    }

    /// Minimal events of what is left, in position order.
    fn minimal(&self) -> Vec<usize> {
        let mut out: Vec<usize> =
            self.queues.iter().filter_map(|q| q.front().copied()).filter(|&i| self.is_minimal(i)).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    fn consume(&mut self, i: usize) {
        for p in self.al.dom(self.w[i]).iter() {
            let front = self.queues[p.index()].pop_front();
            debug_assert_eq!(front, Some(i));
        }
        self.done[i] = true;
    }

    /// The minimal event carrying action `a`, if any.
    fn minimal_with(&self, a: Act) -> Option<usize> {
        let p = self.al.dom(a).first()?;
        let &i = self.queues[p.index()].front()?;
        (self.w[i] == a && self.is_minimal(i)).then_some(i)
    }

    fn rest(&self) -> Vec<Act> {
        self.w.iter().zip(&self.done).filter(|(_, d)| !**d).map(|(a, _)| *a).collect()
    }
}

/// Lexicographically least linearization of the trace of `w`.
pub fn normal_form(al: &DistributedAlphabet, w: &[Act]) -> Vec<Act> {
    let mut f = Frontier::new(al, w);
    let mut out = Vec::with_capacity(w.len());
    while let Some(i) = f.minimal().into_iter().min_by_key(|&i| w[i]) {
        f.consume(i);
        out.push(w[i]);
    }
    out
}

pub fn trace_equal(al: &DistributedAlphabet, u: &[Act], v: &[Act]) -> bool {
    u.len() == v.len() && normal_form(al, u) == normal_form(al, v)
}

/// Positions of the minimal events of `w`.
pub fn minimal_events(al: &DistributedAlphabet, w: &[Act]) -> Vec<usize> {
    Frontier::new(al, w).minimal()
}

/// The actions `a` such that `w ≈ a·w'` for some `w'`.
pub fn minimal_actions(al: &DistributedAlphabet, w: &[Act]) -> BTreeSet<Act> {
    minimal_events(al, w).into_iter().map(|i| w[i]).collect()
}

/// The trace `v` with `u·v ≈ w`, when `u` is a trace-prefix of `w`.
pub fn trace_quotient(al: &DistributedAlphabet, u: &[Act], w: &[Act]) -> Option<Trace> {
    if u.len() > w.len() {
        return None;
    }
    let mut f = Frontier::new(al, w);
    for &a in u {
        let i = f.minimal_with(a)?;
        f.consume(i);
    }
    Some(Trace::new(al, &f.rest()))
}

pub fn is_coprime(al: &DistributedAlphabet, w: &[Act]) -> bool {
    !w.is_empty() && minimal_events(al, w).len() == 1
}

/// Domain of the unique minimal action of a co-prime trace.
pub fn dmin(al: &DistributedAlphabet, w: &[Act]) -> Result<ProcSet, TraceError> {
    let m = minimal_events(al, w);
    if m.len() != 1 {
        return Err(TraceError::NotCoprime);
    }
    Ok(al.dom(w[m[0]]))
}

/// Whether `s` is a `(b,p)`-step: co-prime with minimum `b`, `p ∈ dom(b)`, and `b` the
/// only event of `p`.
pub fn is_step(al: &DistributedAlphabet, s: &[Act], b: Act, p: Proc) -> bool {
    if !al.dom(b).contains(p) {
        return false;
    }
    let m = minimal_events(al, s);
    m.len() == 1 && s[m[0]] == b && s.iter().filter(|&&a| al.dom(a).contains(p)).count() == 1
}

/// Marks the events above or equal to `e` in the dependence order.
pub fn upward_closure(al: &DistributedAlphabet, w: &[Act], e: usize) -> Vec<bool> {
    let mut mask = vec![false; w.len()];
    mask[e] = true;
    let mut reach = al.dom(w[e]);
    for j in e + 1..w.len() {
        if al.dom(w[j]).intersects(reach) {
            mask[j] = true;
            reach = reach.union(al.dom(w[j]));
        }
    }
    mask
}

fn split_mask(al: &DistributedAlphabet, w: &[Act], mask: &[bool]) -> (Trace, Trace) {
    let (mut rest, mut up) = (Vec::new(), Vec::new());
    for (&a, &m) in w.iter().zip(mask) {
        if m {
            up.push(a);
        } else {
            rest.push(a);
        }
    }
    (Trace::new(al, &rest), Trace::new(al, &up))
}

/// Splits `w` into the events not above `e` and the upward closure of `e`.
pub fn upward_closure_split(al: &DistributedAlphabet, w: &[Act], e: usize) -> Result<(Trace, Trace), TraceError> {
    if e >= w.len() {
        return Err(TraceError::IndexOutOfRange(e));
    }
    Ok(split_mask(al, w, &upward_closure(al, w, e)))
}

/// `r ≈ head · body · tail` with `p ∉ dom(body)` and `tail` empty or co-prime with
/// `p ∈ dmin(tail)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepDecomposition {
    pub head: Act,
    pub body: Trace,
    pub tail: Trace,
}

impl StepDecomposition {
    /// `head · body`, a `(head, p)`-step.
    pub fn step(&self, al: &DistributedAlphabet) -> Trace {
        let mut w = vec![self.head];
        w.extend_from_slice(self.body.word());
        Trace::new(al, &w)
    }
}

pub fn step_decomposition(al: &DistributedAlphabet, r: &[Act], p: Proc) -> Result<StepDecomposition, TraceError> {
    let m = minimal_events(al, r);
    if m.len() != 1 {
        return Err(TraceError::NotCoprime);
    }
    let h = m[0];
    if !al.dom(r[h]).contains(p) {
        return Err(TraceError::ProcessNotInDmin);
    }
    let second = r.iter().enumerate().filter(|(_, a)| al.dom(**a).contains(p)).map(|(i, _)| i).nth(1);
    let mut mask = match second {
        Some(e) => upward_closure(al, r, e),
        None => vec![false; r.len()],
    };
    let (body, tail) = {
        mask[h] = true;
        let body: Vec<Act> = r.iter().zip(&mask).filter(|(_, m)| !**m).map(|(a, _)| *a).collect();
        mask[h] = false;
        let tail: Vec<Act> = r.iter().zip(&mask).filter(|(_, m)| **m).map(|(a, _)| *a).collect();
        (Trace::new(al, &body), Trace::new(al, &tail))
    };
    Ok(StepDecomposition { head: r[h], body, tail })
}

/// One transition taken by a process while replaying a word.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Move {
    pub from: Node,
    pub act: Act,
    pub to: Node,
}

/// Outcome of [`max_executable_prefix`].
#[derive(Clone, Debug)]
pub struct ExecutablePrefix {
    pub prefix: Trace,
    pub remainder: Trace,
    pub end: Configuration,
    /// Transitions taken by each process, in order.
    pub history: Vec<Vec<Move>>,
}

/// Greedily fires enabled minimal events of `w` until none is enabled.
///
/// Among enabled minimal events the least action fires first; the result does not
/// depend on this choice because enabled minimal events have disjoint domains.
pub fn max_executable_prefix(n: &Negotiation, w: &[Act]) -> ExecutablePrefix {
    let al = n.alphabet();
    let mut f = Frontier::new(al, w);
    let mut c = n.initial_config();
    let mut fired = Vec::new();
    let mut history = vec![Vec::new(); al.num_procs()];
    loop {
        let mut cands = f.minimal();
        cands.sort_by_key(|&i| w[i]);
        let Some((i, next)) = cands.into_iter().find_map(|i| n.try_step(&c, w[i]).map(|c2| (i, c2))) else {
            break;
        };
        for p in al.dom(w[i]).iter() {
            history[p.index()].push(Move { from: c.at(p), act: w[i], to: next.at(p) });
        }
        c = next;
        f.consume(i);
        fired.push(w[i]);
    }
    ExecutablePrefix { prefix: Trace::new(al, &fired), remainder: Trace::new(al, &f.rest()), end: c, history }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn fork_al() -> DistributedAlphabet {
        fixtures::fork().alphabet().clone()
    }

    fn w(al: &DistributedAlphabet, s: &str) -> Vec<Act> {
        al.parse_word(s).unwrap()
    }

    #[test]
    fn normal_forms() {
        let al = fork_al();
        assert_eq!(al.format_word(&normal_form(&al, &w(&al, "c y x d"))), "c x y d");
        assert_eq!(al.format_word(&normal_form(&al, &w(&al, "c x y d"))), "c x y d");
        assert!(trace_equal(&al, &w(&al, "c x y d"), &w(&al, "c y x d")));
        assert!(!trace_equal(&al, &w(&al, "c x"), &w(&al, "x c")));
    }

    #[test]
    fn minimal_and_coprime() {
        let al = fork_al();
        let names = |s: BTreeSet<Act>| s.into_iter().map(|a| al.act_name(a).to_string()).collect::<Vec<_>>();
        assert_eq!(names(minimal_actions(&al, &w(&al, "x y"))), ["x", "y"]);
        assert_eq!(names(minimal_actions(&al, &w(&al, "c x y d"))), ["c"]);
        assert!(minimal_actions(&al, &[]).is_empty());
        assert!(is_coprime(&al, &w(&al, "c x y d")));
        assert_eq!(dmin(&al, &w(&al, "c x y d")).unwrap(), al.all_procs());
        assert!(!is_coprime(&al, &w(&al, "x y")));
        assert!(!is_coprime(&al, &[]));
        assert_eq!(dmin(&al, &w(&al, "x y")), Err(TraceError::NotCoprime));
    }

    #[test]
    fn quotients() {
        let al = fork_al();
        let q = trace_quotient(&al, &w(&al, "c x"), &w(&al, "c y x d")).unwrap();
        assert_eq!(q.format(&al), "y d");
        assert!(trace_quotient(&al, &w(&al, "x"), &w(&al, "c x")).is_none());
    }

    #[test]
    fn steps() {
        let al = fork_al();
        let (p, q) = (al.proc_id("p").unwrap(), al.proc_id("q").unwrap());
        let c = al.act_id("c").unwrap();
        assert!(is_step(&al, &w(&al, "c x"), c, q));
        assert!(!is_step(&al, &w(&al, "c x d"), c, q));
        assert!(is_step(&al, &w(&al, "c"), c, p));
    }

    #[test]
    fn projections() {
        let al = fork_al();
        let p = al.proc_id("p").unwrap();
        assert_eq!(al.format_local_word(&al.project(&w(&al, "c x y d"), p)), "c@p x@p d@p");
        assert!(al.project(&[], p).is_empty());
    }

    #[test]
    fn closure_splits() {
        let al = fork_al();
        let word = w(&al, "c x y d");
        let (rest, up) = upward_closure_split(&al, &word, 0).unwrap();
        assert!(rest.is_empty());
        assert_eq!(up.format(&al), "c x y d");
        let (rest, up) = upward_closure_split(&al, &word, 3).unwrap();
        assert_eq!((rest.format(&al), up.format(&al)), ("c x y".into(), "d".into()));
        assert_eq!(upward_closure_split(&al, &word, 4), Err(TraceError::IndexOutOfRange(4)));
    }

    #[test]
    fn decompositions() {
        let al = fork_al();
        let (p, q) = (al.proc_id("p").unwrap(), al.proc_id("q").unwrap());
        let d = step_decomposition(&al, &w(&al, "c x"), q).unwrap();
        assert_eq!((al.act_name(d.head), d.body.format(&al), d.tail.format(&al)), ("c", "x".into(), "".into()));
        let d = step_decomposition(&al, &w(&al, "c x d"), q).unwrap();
        assert_eq!((d.body.format(&al), d.tail.format(&al)), ("x".into(), "d".into()));
        // On the full fork run the second p-event is x, whose closure also holds d.
        let d = step_decomposition(&al, &w(&al, "c x y d"), p).unwrap();
        assert_eq!((d.step(&al).format(&al), d.tail.format(&al)), ("c y".into(), "x d".into()));
        let d = step_decomposition(&al, &w(&al, "c x y d"), q).unwrap();
        assert_eq!((d.step(&al).format(&al), d.tail.format(&al)), ("c x".into(), "y d".into()));
        assert_eq!(step_decomposition(&al, &w(&al, "x y"), p), Err(TraceError::NotCoprime));
        assert_eq!(step_decomposition(&al, &w(&al, "x"), q), Err(TraceError::ProcessNotInDmin));
    }

    #[test]
    fn executable_prefixes() {
        let n = fixtures::fork();
        let al = n.alphabet().clone();
        let r = max_executable_prefix(&n, &w(&al, "c y x d"));
        assert_eq!(r.prefix.format(&al), "c x y d");
        assert!(r.remainder.is_empty());
        assert!(n.is_final(&r.end));

        let mut broken = n.clone();
        broken.remove_transition(n.node_id("n2").unwrap(), al.act_id("y").unwrap(), al.proc_id("q").unwrap());
        let r = max_executable_prefix(&broken, &w(&al, "c x y d"));
        assert_eq!((r.prefix.format(&al), r.remainder.format(&al)), ("c x".into(), "y d".into()));
        let p = al.proc_id("p").unwrap();
        let steps: Vec<&str> = r.history[p.index()].iter().map(|m| al.act_name(m.act)).collect();
        assert_eq!(steps, ["c", "x"]);
    }
}
