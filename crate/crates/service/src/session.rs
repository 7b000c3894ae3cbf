//! Configuration sessions: a problem plus the user's choices, with the
//! propagated state recomputed after every change.

use std::collections::BTreeMap;

use foprop_core::io::{parse_problem, structure_to_json, ParseError, Problem};
use foprop_core::oracle::{complete_propagate, OracleError};
use foprop_core::propagate::{propagate, PropagateConfig, PropagateError};
use foprop_core::structure::{FourValuedStructure, Tuple, TruthValue};
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

/// Steps of the trace reported with an inconsistency.
const EXPLANATION_STEPS: usize = 5;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("line {}, column {}: {}", .0.line, .0.col, .0.msg)]
    Parse(ParseError),
    #[error("unknown atom {0}")]
    UnknownAtom(String),
    #[error("no assignment {0}")]
    UnknownAssignment(String),
    #[error(transparent)]
    Propagate(#[from] PropagateError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomRef {
    pub pred: String,
    pub tuple: Vec<String>,
}

impl std::fmt::Display for AtomRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}({})", self.pred, self.tuple.join(","))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Choice {
    #[serde(rename = "t")]
    True,
    #[serde(rename = "f")]
    False,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserAssignment {
    pub atom: AtomRef,
    pub value: Choice,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Forced,
    Forbidden,
    Free,
    User,
    Conflict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomState {
    pub pred: String,
    pub tuple: Vec<String>,
    pub status: Status,
    pub value: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Change {
    pub pred: String,
    pub tuple: Vec<String>,
    pub from: Status,
    pub to: Status,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationStep {
    pub propagator: usize,
    pub description: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    /// The atoms left open by the problem, in canonical order.
    pub atoms: Vec<AtomState>,
    pub inconsistent: bool,
    pub delta: Vec<Change>,
    pub assignments: Vec<UserAssignment>,
    /// Last propagation steps before an inconsistency.
    pub explanation: Vec<ExplanationStep>,
    pub structure: Json,
}

pub struct Session {
    pub base: Problem,
    pub oracle: bool,
    pub assignments: Vec<UserAssignment>,
    pub state: State,
}

impl Session {
    pub fn from_text(text: &str, oracle: bool) -> Result<Session, SessionError> {
        let base = parse_problem(text).map_err(SessionError::Parse)?;
        Session::new(base, oracle)
    }

    pub fn new(base: Problem, oracle: bool) -> Result<Session, SessionError> {
        let mut s = Session { base, oracle, assignments: Vec::new(), state: empty_state() };
        s.state = s.compute(None)?;
        Ok(s)
    }

    fn tuple(&self, a: &AtomRef) -> Result<Tuple, SessionError> {
        let unknown = || SessionError::UnknownAtom(a.to_string());
        let arity = self.base.structure.arity(&a.pred).ok_or_else(unknown)?;
        if arity != a.tuple.len() {
            return Err(unknown());
        }
        self.base.domain().tuple(&a.tuple).map_err(|_| unknown())
    }

    pub fn assign(&mut self, a: UserAssignment) -> Result<&State, SessionError> {
        self.tuple(&a.atom)?;
        self.assignments.push(a);
        self.refresh()
    }

    pub fn retract(&mut self, index: usize) -> Result<&State, SessionError> {
        if index >= self.assignments.len() {
            return Err(SessionError::UnknownAssignment(index.to_string()));
        }
        self.assignments.remove(index);
        self.refresh()
    }

    /// Removes the latest assignment to `atom`.
    pub fn retract_atom(&mut self, atom: &AtomRef) -> Result<&State, SessionError> {
        let k = self.assignments.iter().rposition(|a| &a.atom == atom).ok_or_else(|| SessionError::UnknownAssignment(atom.to_string()))?;
        self.retract(k)
    }

    fn refresh(&mut self) -> Result<&State, SessionError> {
        let prev = std::mem::replace(&mut self.state, empty_state());
        match self.compute(Some(&prev)) {
            Ok(s) => {
                self.state = s;
                Ok(&self.state)
            }
            Err(e) => {
                self.state = prev;
                Err(e)
            }
        }
    }

    /// The base structure with every user choice applied in order.
    pub fn selection(&self) -> Result<FourValuedStructure, SessionError> {
        let mut s = self.base.structure.clone();
        for a in &self.assignments {
            let v = match a.value {
                Choice::True => TruthValue::T,
                Choice::False => TruthValue::F,
            };
            s.raise(&a.atom.pred, &self.tuple(&a.atom)?, v).map_err(PropagateError::from)?;
        }
        Ok(s)
    }

    fn compute(&self, prev: Option<&State>) -> Result<State, SessionError> {
        let selection = self.selection()?;
        let (result, explanation) = if self.oracle {
            (complete_propagate(&self.base.theory, &selection)?, Vec::new())
        } else {
            let cfg = PropagateConfig { trace: true, ..PropagateConfig::default() };
            let r = propagate(&self.base.theory, &selection, &cfg)?;
            let explanation = if r.inconsistent {
                let from = r.trace.steps.len().saturating_sub(EXPLANATION_STEPS);
                r.trace.steps[from..]
                    .iter()
                    .map(|s| ExplanationStep { propagator: s.propagator, description: r.propagators[s.propagator].to_string() })
                    .collect()
            } else {
                Vec::new()
            };
            (r.structure, explanation)
        };
        let inconsistent = !result.is_three_valued();
        let dom = self.base.domain();
        let user: BTreeMap<(String, Tuple), ()> = self
            .assignments
            .iter()
            .filter_map(|a| Some(((a.atom.pred.clone(), self.tuple(&a.atom).ok()?), ())))
            .collect();
        let mut atoms = Vec::new();
        for (pred, t) in self.base.structure.unknown_atoms() {
            let v = result.value(&pred, &t).map_err(PropagateError::from)?;
            let status = match v {
                TruthValue::I => Status::Conflict,
                _ if user.contains_key(&(pred.clone(), t.clone())) => Status::User,
                TruthValue::T => Status::Forced,
                TruthValue::F => Status::Forbidden,
                TruthValue::U => Status::Free,
            };
            atoms.push(AtomState { pred, tuple: dom.tuple_names(&t), status, value: v.symbol().to_string() });
        }
        atoms.sort_by(|a, b| (&a.pred, &a.tuple).cmp(&(&b.pred, &b.tuple)));
        let delta = match prev {
            None => Vec::new(),
            Some(p) => atoms
                .iter()
                .zip(&p.atoms)
                .filter(|(now, before)| now.status != before.status)
                .map(|(now, before)| Change { pred: now.pred.clone(), tuple: now.tuple.clone(), from: before.status, to: now.status })
                .collect(),
        };
        Ok(State {
            atoms,
            inconsistent,
            delta,
            assignments: self.assignments.clone(),
            explanation,
            structure: structure_to_json(&result),
        })
    }
}

fn empty_state() -> State {
    State {
        atoms: Vec::new(),
        inconsistent: false,
        delta: Vec::new(),
        assignments: Vec::new(),
        explanation: Vec::new(),
        structure: Json::Null,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const STUDENT: &str = include_str!("../../../problems/student.fop");

    fn status(s: &State, pred: &str, e: &str) -> Status {
        s.atoms.iter().find(|a| a.pred == pred && a.tuple == [e]).unwrap().status
    }

    fn selected(e: &str, value: Choice) -> UserAssignment {
        UserAssignment { atom: AtomRef { pred: "Selected".into(), tuple: vec![e.into()] }, value }
    }

    #[test]
    fn initial_state() {
        let s = Session::from_text(STUDENT, false).unwrap();
        for e in ["m1", "c3"] {
            assert_eq!(status(&s.state, "Selected", e), Status::Forced);
        }
        for e in ["m2", "c2"] {
            assert_eq!(status(&s.state, "Selected", e), Status::Forbidden);
        }
        assert_eq!(status(&s.state, "Selected", "c4"), Status::Free);
        assert!(!s.state.inconsistent);
    }

    #[test]
    fn assign_and_retract() {
        let mut s = Session::from_text(STUDENT, false).unwrap();
        let before = s.state.clone();
        let st = s.assign(selected("c4", Choice::True)).unwrap().clone();
        assert_eq!(status(&st, "Selected", "c4"), Status::User);
        assert_eq!(st.delta.len(), 1);
        assert!(!st.inconsistent);
        let st = s.assign(selected("c2", Choice::True)).unwrap().clone();
        assert!(st.inconsistent);
        assert!(!st.explanation.is_empty());
        s.retract(1).unwrap();
        let st = s.retract_atom(&selected("c4", Choice::True).atom).unwrap().clone();
        assert_eq!(st.atoms, before.atoms);
        assert!(matches!(s.retract(0), Err(SessionError::UnknownAssignment(_))));
        let bad = UserAssignment { atom: AtomRef { pred: "Selected".into(), tuple: vec!["zz".into()] }, value: Choice::True };
        assert!(matches!(s.assign(bad), Err(SessionError::UnknownAtom(_))));
    }

    #[test]
    fn oracle_sessions_agree_here() {
        let fast = Session::from_text(STUDENT, false).unwrap();
        let full = Session::from_text(STUDENT, true).unwrap();
        assert_eq!(fast.state.atoms, full.state.atoms);
    }
}
