//! Distributed alphabets: processes, actions and the domain map.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

/// Index of a process in its alphabet.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct Proc(pub u16);

/// Index of an action in its alphabet.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct Act(pub u16);

impl Proc {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl Act {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A local letter `a@p`: action `a` seen from process `p`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct Local {
    pub act: Act,
    pub proc: Proc,
}

impl Local {
    pub fn new(act: Act, proc: Proc) -> Self {
        Local { act, proc }
    }
}

/// Set of processes as a bitmask. Alphabets hold at most 64 processes.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Default)]
pub struct ProcSet(pub u64);

impl ProcSet {
    pub const EMPTY: ProcSet = ProcSet(0);

    pub fn full(n: usize) -> Self {
        if n >= 64 {
            ProcSet(u64::MAX)
        } else {
            ProcSet((1u64 << n) - 1)
        }
    }

    pub fn singleton(p: Proc) -> Self {
        ProcSet(1u64 << p.0)
    }

    pub fn contains(self, p: Proc) -> bool {
        self.0 & (1u64 << p.0) != 0
    }

    pub fn insert(&mut self, p: Proc) {
        self.0 |= 1u64 << p.0;
    }

    pub fn union(self, other: ProcSet) -> ProcSet {
        ProcSet(self.0 | other.0)
    }

    pub fn intersection(self, other: ProcSet) -> ProcSet {
        ProcSet(self.0 & other.0)
    }

    pub fn intersects(self, other: ProcSet) -> bool {
        self.0 & other.0 != 0
    }

    pub fn is_subset(self, other: ProcSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    /// Lowest process in the set.
    pub fn first(self) -> Option<Proc> {
        if self.0 == 0 {
            None
        } else {
            Some(Proc(self.0.trailing_zeros() as u16))
        }
    }

    pub fn iter(self) -> impl Iterator<Item = Proc> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                return None;
            }
            let p = bits.trailing_zeros();
            bits &= bits - 1;
            Some(Proc(p as u16))
        })
    }
}

impl FromIterator<Proc> for ProcSet {
    fn from_iter<I: IntoIterator<Item = Proc>>(iter: I) -> Self {
        let mut s = ProcSet::EMPTY;
        for p in iter {
            s.insert(p);
        }
        s
    }
}

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum AlphabetError {
    #[error("duplicate process `{0}`")]
    DuplicateProcess(String),
    #[error("duplicate action `{0}`")]
    DuplicateAction(String),
    #[error("`{0}` is used both as a process and as an action")]
    NameClash(String),
    #[error("action `{0}` has an empty domain")]
    EmptyDomain(String),
    #[error("action `{action}` mentions unknown process `{process}`")]
    UnknownProcess { action: String, process: String },
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("malformed local letter `{0}` (expected `action@process`)")]
    MalformedLocal(String),
    #[error("process `{process}` is not in the domain of `{action}`")]
    NotInDomain { action: String, process: String },
    #[error("at most 64 processes are supported, got {0}")]
    TooManyProcesses(usize),
    #[error("an alphabet needs at least one process")]
    NoProcesses,
}

/// Processes and actions in declaration order, with the domain of every action.
#[derive(Clone, Debug)]
pub struct DistributedAlphabet {
    processes: Vec<String>,
    actions: Vec<String>,
    dom: Vec<ProcSet>,
    proc_ids: HashMap<String, Proc>,
    act_ids: HashMap<String, Act>,
}

impl PartialEq for DistributedAlphabet {
    fn eq(&self, other: &Self) -> bool {
        self.processes == other.processes && self.actions == other.actions && self.dom == other.dom
    }
}

impl Eq for DistributedAlphabet {}

impl DistributedAlphabet {
    pub fn new<P, A, D>(processes: P, actions: A) -> Result<Self, AlphabetError>
    where
        P: IntoIterator,
        P::Item: Into<String>,
        A: IntoIterator<Item = (String, D)>,
        D: IntoIterator,
        D::Item: AsRef<str>,
    {
        let processes: Vec<String> = processes.into_iter().map(Into::into).collect();
        if processes.is_empty() {
            return Err(AlphabetError::NoProcesses);
        }
        if processes.len() > 64 {
            return Err(AlphabetError::TooManyProcesses(processes.len()));
        }
        let mut proc_ids = HashMap::new();
        for (i, p) in processes.iter().enumerate() {
            if proc_ids.insert(p.clone(), Proc(i as u16)).is_some() {
                return Err(AlphabetError::DuplicateProcess(p.clone()));
            }
        }
        let mut act_names = Vec::new();
        let mut dom = Vec::new();
        let mut act_ids = HashMap::new();
        for (name, d) in actions {
            if proc_ids.contains_key(&name) {
                return Err(AlphabetError::NameClash(name));
            }
            let mut set = ProcSet::EMPTY;
            for p in d {
                let p = p.as_ref();
                let id = proc_ids.get(p).ok_or_else(|| AlphabetError::UnknownProcess {
                    action: name.clone(),
                    process: p.to_string(),
                })?;
                set.insert(*id);
            }
            if set.is_empty() {
                return Err(AlphabetError::EmptyDomain(name));
            }
            if act_ids.insert(name.clone(), Act(act_names.len() as u16)).is_some() {
                return Err(AlphabetError::DuplicateAction(name));
            }
            act_names.push(name);
            dom.push(set);
        }
        Ok(DistributedAlphabet { processes, actions: act_names, dom, proc_ids, act_ids })
    }

    pub fn num_procs(&self) -> usize {
        self.processes.len()
    }

    pub fn num_acts(&self) -> usize {
        self.actions.len()
    }

    pub fn procs(&self) -> impl Iterator<Item = Proc> {
        (0..self.processes.len()).map(|i| Proc(i as u16))
    }

    pub fn acts(&self) -> impl Iterator<Item = Act> {
        (0..self.actions.len()).map(|i| Act(i as u16))
    }

    pub fn all_procs(&self) -> ProcSet {
        ProcSet::full(self.processes.len())
    }

    pub fn dom(&self, a: Act) -> ProcSet {
        self.dom[a.index()]
    }

    /// Domain of a word: union of the domains of its letters.
    pub fn dom_of(&self, w: &[Act]) -> ProcSet {
        w.iter().fold(ProcSet::EMPTY, |s, &a| s.union(self.dom(a)))
    }

    pub fn independent(&self, a: Act, b: Act) -> bool {
        !self.dom(a).intersects(self.dom(b))
    }

    pub fn proc_name(&self, p: Proc) -> &str {
        &self.processes[p.index()]
    }

    pub fn act_name(&self, a: Act) -> &str {
        &self.actions[a.index()]
    }

    pub fn proc_names(&self) -> &[String] {
        &self.processes
    }

    pub fn act_names(&self) -> &[String] {
        &self.actions
    }

    pub fn proc_id(&self, name: &str) -> Option<Proc> {
        self.proc_ids.get(name).copied()
    }

    pub fn act_id(&self, name: &str) -> Option<Act> {
        self.act_ids.get(name).copied()
    }

    pub fn contains_act(&self, a: Act) -> bool {
        a.index() < self.actions.len()
    }

    /// All local letters `a@p` with `p ∈ dom(a)`, ordered by action then process.
    pub fn locals(&self) -> Vec<Local> {
        self.acts()
            .flat_map(|a| self.dom(a).iter().map(move |p| Local::new(a, p)))
            .collect()
    }

    /// Parses a space separated list of action names.
    pub fn parse_word(&self, s: &str) -> Result<Vec<Act>, AlphabetError> {
        s.split_whitespace()
            .map(|t| self.act_id(t).ok_or_else(|| AlphabetError::UnknownAction(t.to_string())))
            .collect()
    }

    pub fn format_word(&self, w: &[Act]) -> String {
        w.iter().map(|&a| self.act_name(a)).collect::<Vec<_>>().join(" ")
    }

    pub fn parse_local(&self, s: &str) -> Result<Local, AlphabetError> {
        let (a, p) = s.split_once('@').ok_or_else(|| AlphabetError::MalformedLocal(s.to_string()))?;
        let act = self.act_id(a).ok_or_else(|| AlphabetError::UnknownAction(a.to_string()))?;
        let proc = self.proc_id(p).ok_or_else(|| AlphabetError::UnknownProcess {
            action: a.to_string(),
            process: p.to_string(),
        })?;
        if !self.dom(act).contains(proc) {
            return Err(AlphabetError::NotInDomain { action: a.to_string(), process: p.to_string() });
        }
        Ok(Local::new(act, proc))
    }

    pub fn parse_local_word(&self, s: &str) -> Result<Vec<Local>, AlphabetError> {
        s.split_whitespace().map(|t| self.parse_local(t)).collect()
    }

    pub fn format_local(&self, l: Local) -> String {
        format!("{}@{}", self.act_name(l.act), self.proc_name(l.proc))
    }

    pub fn format_local_word(&self, w: &[Local]) -> String {
        w.iter().map(|&l| self.format_local(l)).collect::<Vec<_>>().join(" ")
    }

    pub fn format_procs(&self, s: ProcSet) -> String {
        s.iter().map(|p| self.proc_name(p)).collect::<Vec<_>>().join(",")
    }

    /// Projection `w|_p`: the letters of `w` whose domain contains `p`, as local letters.
    pub fn project(&self, w: &[Act], p: Proc) -> Vec<Local> {
        w.iter().filter(|&&a| self.dom(a).contains(p)).map(|&a| Local::new(a, p)).collect()
    }
}

impl fmt::Display for ProcSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let items: Vec<String> = self.iter().map(|p| p.0.to_string()).collect();
        write!(f, "{{{}}}", items.join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ab() -> DistributedAlphabet {
        DistributedAlphabet::new(
            ["p", "q"],
            vec![("a".to_string(), vec!["p", "q"]), ("x".to_string(), vec!["p"])],
        )
        .unwrap()
    }

    #[test]
    fn procset_ops() {
        let s: ProcSet = [Proc(0), Proc(3)].into_iter().collect();
        assert_eq!(s.len(), 2);
        assert!(s.contains(Proc(3)));
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![Proc(0), Proc(3)]);
        assert!(ProcSet::singleton(Proc(3)).is_subset(s));
        assert_eq!(ProcSet::full(3).0, 0b111);
    }

    #[test]
    fn rejects_bad_alphabets() {
        let e = DistributedAlphabet::new(["p"], vec![("a".to_string(), Vec::<&str>::new())]);
        assert_eq!(e.unwrap_err(), AlphabetError::EmptyDomain("a".into()));
        let e = DistributedAlphabet::new(["p"], vec![("p".to_string(), vec!["p"])]);
        assert_eq!(e.unwrap_err(), AlphabetError::NameClash("p".into()));
        let e = DistributedAlphabet::new(["p"], vec![("a".to_string(), vec!["r"])]);
        assert!(matches!(e.unwrap_err(), AlphabetError::UnknownProcess { .. }));
    }

    #[test]
    fn word_round_trip() {
        let al = ab();
        let w = al.parse_word("a x a").unwrap();
        assert_eq!(al.format_word(&w), "a x a");
        let l = al.parse_local_word("a@q x@p").unwrap();
        assert_eq!(al.format_local_word(&l), "a@q x@p");
        assert!(al.parse_local("x@q").is_err());
        assert!(al.parse_word("a z").is_err());
        let p = al.proc_id("p").unwrap();
        assert_eq!(al.format_local_word(&al.project(&w, p)), "a@p x@p a@p");
    }
}
