//! The oracle side: membership on local paths and on executions, and equivalence
//! queries answered with shortest executions.

use std::collections::{HashMap, VecDeque};

use negotiation::automata::neg_equiv;
use negotiation::soundness::is_sound_semantic;
use negotiation::traces::normal_form;
use negotiation::{Act, Configuration, Local, ModelError, Negotiation, DEFAULT_STATE_CAP};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TeacherError {
    #[error("target is not a valid negotiation: {0}")]
    InvalidTarget(String),
    #[error("hypothesis alphabet differs from the target alphabet")]
    AlphabetMismatch,
    #[error("more than {0} product states explored")]
    StateBudgetExceeded(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryStats {
    pub membership_total: usize,
    pub membership_distinct: usize,
    pub equivalence_total: usize,
    pub max_counterexample_len: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Positive,
    Negative,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EquivAnswer {
    Equivalent,
    Counterexample { sign: Sign, word: Vec<Act> },
}

pub struct Teacher {
    target: Negotiation,
    target_sound: bool,
    path_cache: HashMap<Vec<Local>, bool>,
    exec_cache: HashMap<Vec<Act>, bool>,
    stats: QueryStats,
    state_cap: usize,
    log: Option<Vec<Value>>,
}

impl Teacher {
    pub fn new(target: Negotiation) -> Result<Self, TeacherError> {
        let violations = target.validate();
        if let Some(v) = violations.first() {
            return Err(TeacherError::InvalidTarget(v.to_string()));
        }
        let target_sound = is_sound_semantic(&target)?;
        Ok(Teacher {
            target,
            target_sound,
            path_cache: HashMap::new(),
            exec_cache: HashMap::new(),
            stats: QueryStats::default(),
            state_cap: DEFAULT_STATE_CAP,
            log: None,
        })
    }

    pub fn target(&self) -> &Negotiation {
        &self.target
    }

    pub fn target_is_sound(&self) -> bool {
        self.target_sound
    }

    pub fn stats(&self) -> &QueryStats {
        &self.stats
    }

    /// Starts recording every query and learner note as a JSON value.
    pub fn enable_log(&mut self) {
        self.log.get_or_insert_with(Vec::new);
    }

    pub fn take_log(&mut self) -> Vec<Value> {
        self.log.take().unwrap_or_default()
    }

    /// Appends a learner event to the log, if logging is on.
    pub fn note(&mut self, event: impl FnOnce() -> Value) {
        if let Some(log) = &mut self.log {
            log.push(event());
        }
    }

    pub fn member_path(&mut self, path: &[Local]) -> bool {
        self.stats.membership_total += 1;
        let cached = self.path_cache.get(path).copied();
        let answer = match cached {
            Some(b) => b,
            None => {
                self.stats.membership_distinct += 1;
                let b = self.target.member_path(path);
                self.path_cache.insert(path.to_vec(), b);
                b
            }
        };
        if let Some(log) = &mut self.log {
            let q = self.target.alphabet().format_local_word(path);
            log.push(json!({"query": "path", "word": q, "answer": answer, "cached": cached.is_some()}));
        }
        answer
    }

    pub fn member_exec(&mut self, w: &[Act]) -> bool {
        self.stats.membership_total += 1;
        let key = normal_form(self.target.alphabet(), w);
        let cached = self.exec_cache.get(&key).copied();
        let answer = match cached {
            Some(b) => b,
            None => {
                self.stats.membership_distinct += 1;
                let b = self.target.member_exec(&key);
                self.exec_cache.insert(key.clone(), b);
                b
            }
        };
        if let Some(log) = &mut self.log {
            let q = self.target.alphabet().format_word(&key);
            log.push(json!({"query": "exec", "word": q, "answer": answer, "cached": cached.is_some()}));
        }
        answer
    }

    /// Uncounted path membership, for invariant checks.
    pub fn peek_path(&self, path: &[Local]) -> bool {
        self.path_cache.get(path).copied().unwrap_or_else(|| self.target.member_path(path))
    }

    /// Uncounted execution membership, for invariant checks.
    pub fn peek_exec(&self, w: &[Act]) -> bool {
        let key = normal_form(self.target.alphabet(), w);
        self.exec_cache.get(&key).copied().unwrap_or_else(|| self.target.member_exec(&key))
    }

    pub fn equiv(&mut self, h: &Negotiation) -> Result<EquivAnswer, TeacherError> {
        self.stats.equivalence_total += 1;
        let answer = self.equiv_uncounted(h)?;
        if let EquivAnswer::Counterexample { word, .. } = &answer {
            self.stats.max_counterexample_len = self.stats.max_counterexample_len.max(word.len());
        }
        if let Some(log) = &mut self.log {
            let al = self.target.alphabet();
            log.push(match &answer {
                EquivAnswer::Equivalent => json!({"query": "equiv", "nodes": h.num_nodes(), "answer": "equivalent"}),
                EquivAnswer::Counterexample { sign, word } => {
                    json!({"query": "equiv", "nodes": h.num_nodes(), "answer": sign, "word": al.format_word(word)})
                }
            });
        }
        Ok(answer)
    }

    /// Equivalence without touching the counters.
    pub fn equiv_uncounted(&self, h: &Negotiation) -> Result<EquivAnswer, TeacherError> {
        if h.alphabet() != self.target.alphabet() {
            return Err(TeacherError::AlphabetMismatch);
        }
        if self.target_sound && is_sound_semantic(h)? && neg_equiv(&self.target, h) == Ok(true) {
            return Ok(EquivAnswer::Equivalent);
        }
        product_counterexample(&self.target, h, self.state_cap)
    }
}

type Side = Option<Configuration>;

/// Breadth-first search of the synchronized product. A side that cannot fire a letter
/// becomes dead. States are discovered in length-lexicographic order of their shortest
/// word, so the first disagreement found is the least shortest counterexample.
pub fn product_counterexample(target: &Negotiation, h: &Negotiation, cap: usize) -> Result<EquivAnswer, TeacherError> {
    let accepts = |n: &Negotiation, c: &Side| c.as_ref().is_some_and(|c| n.is_final(c));
    let verdict = |t: &Side, x: &Side| match (accepts(target, t), accepts(h, x)) {
        (true, false) => Some(Sign::Positive),
        (false, true) => Some(Sign::Negative),
        _ => None,
    };
    let start: (Side, Side) = (Some(target.initial_config()), Some(h.initial_config()));
    if let Some(sign) = verdict(&start.0, &start.1) {
        return Ok(EquivAnswer::Counterexample { sign, word: Vec::new() });
    }
    let mut states = vec![start.clone()];
    let mut parent: Vec<Option<(usize, Act)>> = vec![None];
    let mut index = HashMap::from([(start, 0usize)]);
    let mut queue = VecDeque::from([0usize]);
    let acts: Vec<Act> = target.alphabet().acts().collect();
    while let Some(i) = queue.pop_front() {
        for &a in &acts {
            let (t, x) = &states[i];
            let nt = t.as_ref().and_then(|c| target.try_step(c, a));
            let nx = x.as_ref().and_then(|c| h.try_step(c, a));
            if nt.is_none() && nx.is_none() {
                continue;
            }
            let next = (nt, nx);
            if index.contains_key(&next) {
                continue;
            }
            if let Some(sign) = verdict(&next.0, &next.1) {
                let mut word = vec![a];
                let mut j = i;
                while let Some((k, b)) = parent[j] {
                    word.push(b);
                    j = k;
                }
                word.reverse();
                return Ok(EquivAnswer::Counterexample { sign, word });
            }
            if states.len() >= cap {
                return Err(TeacherError::StateBudgetExceeded(cap));
            }
            index.insert(next.clone(), states.len());
            states.push(next);
            parent.push(Some((i, a)));
            queue.push_back(states.len() - 1);
        }
    }
    Ok(EquivAnswer::Equivalent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use negotiation::fixtures;

    #[test]
    fn path_queries_are_cached() {
        let mut t = Teacher::new(fixtures::fork()).unwrap();
        let al = t.target().alphabet().clone();
        assert!(t.member_path(&al.parse_local_word("c@p x@p d@p").unwrap()));
        assert!(!t.member_path(&al.parse_local_word("c@p x@p").unwrap()));
        assert!(t.member_path(&al.parse_local_word("c@p x@p d@p").unwrap()));
        assert_eq!(t.stats().membership_total, 3);
        assert_eq!(t.stats().membership_distinct, 2);
    }

    #[test]
    fn exec_queries_dedupe_equivalent_words() {
        let mut t = Teacher::new(fixtures::fork()).unwrap();
        let al = t.target().alphabet().clone();
        assert!(t.member_exec(&al.parse_word("c x y d").unwrap()));
        assert!(t.member_exec(&al.parse_word("c y x d").unwrap()));
        assert!(!t.member_exec(&al.parse_word("c x").unwrap()));
        assert_eq!(t.stats().membership_distinct, 2);
        assert_eq!(t.stats().membership_total, 3);
    }

    #[test]
    fn equivalence_answers() {
        let fork = fixtures::fork();
        let mut t = Teacher::new(fork.clone()).unwrap();
        assert_eq!(t.equiv(&fork).unwrap(), EquivAnswer::Equivalent);
        let empty = Negotiation::empty(fork.alphabet().clone());
        let al = fork.alphabet();
        assert_eq!(
            t.equiv(&empty).unwrap(),
            EquivAnswer::Counterexample { sign: Sign::Positive, word: al.parse_word("c x y d").unwrap() }
        );
        assert_eq!(t.stats().equivalence_total, 2);
        assert_eq!(t.stats().max_counterexample_len, 4);
    }

    #[test]
    fn negative_counterexample_replays() {
        // FORK plus a second way out of n3 that also finishes.
        let mut bigger = fixtures::fork();
        let al = bigger.alphabet().clone();
        let (n0, nf) = (bigger.node_id("n0").unwrap(), bigger.node_id("nf").unwrap());
        let d = al.act_id("d").unwrap();
        for p in al.procs() {
            bigger.set_transition(n0, d, p, nf);
        }
        let t = Teacher::new(fixtures::fork()).unwrap();
        match t.equiv_uncounted(&bigger).unwrap() {
            EquivAnswer::Counterexample { sign: Sign::Negative, word } => {
                assert_eq!(al.format_word(&word), "d");
                assert!(bigger.member_exec(&word) && !fixtures::fork().member_exec(&word));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stats_json_schema() {
        let s = QueryStats { membership_total: 3, membership_distinct: 2, equivalence_total: 1, max_counterexample_len: 4 };
        assert_eq!(
            serde_json::to_string(&s).unwrap(),
            r#"{"membership_total":3,"membership_distinct":2,"equivalence_total":1,"max_counterexample_len":4}"#
        );
    }
}
