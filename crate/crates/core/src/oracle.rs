//! Brute-force model enumeration and the propagators defined from it. Only
//! meant for small instances, as a reference for the fast algorithms.

use thiserror::Error;

use crate::normalize::eliminate_functions;
use crate::propagate::{wfm, working_vocabulary, PropagateError};
use crate::structure::{evaluate, Assignment, EvalError, FourValuedStructure, StructureError, Tuple, TruthValue};
use crate::syntax::{Definition, Formula, Theory, TheoryElement, Vocabulary};

/// Largest number of unknown atoms the enumeration accepts.
pub const MAX_UNKNOWN_ATOMS: usize = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("{0} unknown atoms, more than the limit of {MAX_UNKNOWN_ATOMS}")]
    TooManyAtoms(usize),
    #[error("more than {0} models")]
    TooManyModels(usize),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Structure(#[from] StructureError),
    #[error(transparent)]
    Propagate(#[from] PropagateError),
}

pub type ModelSet = Vec<FourValuedStructure>;

/// A theory prepared for checking: functions replaced by graph predicates.
struct Prepared {
    sentences: Vec<Formula>,
    definitions: Vec<Definition>,
    start: FourValuedStructure,
    original: Vocabulary,
}

fn prepare(t: &Theory, i: &FourValuedStructure) -> Prepared {
    let v = working_vocabulary(t, i);
    let elim = eliminate_functions(t, &v);
    let mut start = i.clone();
    start.extend(&elim.vocabulary);
    Prepared {
        sentences: elim.theory.sentences().cloned().collect(),
        definitions: elim.theory.definitions().cloned().collect(),
        start,
        original: i.vocabulary(),
    }
}

impl Prepared {
    /// False once some sentence is certainly false in the partial structure.
    fn viable(&self, s: &FourValuedStructure) -> Result<bool, OracleError> {
        for f in &self.sentences {
            if evaluate(s, f, &Assignment::default())? == TruthValue::F {
                return Ok(false);
            }
        }
        Ok(true)
    }

    fn is_model(&self, m: &FourValuedStructure) -> Result<bool, OracleError> {
        for f in &self.sentences {
            if evaluate(m, f, &Assignment::default())? != TruthValue::T {
                return Ok(false);
            }
        }
        for d in &self.definitions {
            let w = wfm(d, m)?;
            for p in d.defined() {
                if w.relation(&p) != m.relation(&p) {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    /// Calls `f` on every model above the start structure, in lexicographic
    /// order of the unknown atoms, until it returns false.
    fn for_each(&self, f: &mut dyn FnMut(FourValuedStructure) -> Result<bool, OracleError>) -> Result<(), OracleError> {
        if !self.start.is_three_valued() {
            return Ok(());
        }
        let atoms = self.start.unknown_atoms();
        if atoms.len() > MAX_UNKNOWN_ATOMS {
            return Err(OracleError::TooManyAtoms(atoms.len()));
        }
        let mut cur = self.start.clone();
        self.search(&atoms, 0, &mut cur, f)?;
        Ok(())
    }

    fn search(
        &self,
        atoms: &[(String, Tuple)],
        k: usize,
        cur: &mut FourValuedStructure,
        f: &mut dyn FnMut(FourValuedStructure) -> Result<bool, OracleError>,
    ) -> Result<bool, OracleError> {
        if !self.viable(cur)? {
            return Ok(true);
        }
        if k == atoms.len() {
            return if self.is_model(cur)? { f(cur.restrict(&self.original)) } else { Ok(true) };
        }
        let (p, t) = &atoms[k];
        for v in [TruthValue::F, TruthValue::T] {
            cur.set(p, t.clone(), v)?;
            if !self.search(atoms, k + 1, cur, f)? {
                return Ok(false);
            }
        }
        cur.set(p, t.clone(), TruthValue::U)?;
        Ok(true)
    }
}

/// All two-valued structures above `i` satisfying every sentence and
/// definition of `t`, restricted to the vocabulary of `i`.
pub fn enumerate_models(t: &Theory, i: &FourValuedStructure, cap: usize) -> Result<ModelSet, OracleError> {
    let prep = prepare(t, i);
    let mut out = Vec::new();
    prep.for_each(&mut |m| {
        if out.len() == cap {
            return Err(OracleError::TooManyModels(cap));
        }
        out.push(m);
        Ok(true)
    })?;
    Ok(out)
}

/// The most precise propagation: the greatest lower bound of all models
/// above `i`, or the inconsistent structure if there are none.
pub fn complete_propagate(t: &Theory, i: &FourValuedStructure) -> Result<FourValuedStructure, OracleError> {
    let prep = prepare(t, i);
    let mut acc: Option<FourValuedStructure> = None;
    prep.for_each(&mut |m| {
        acc = Some(match acc.take() {
            None => m,
            Some(a) => a.glb_p(&m)?,
        });
        // stop early once nothing is left to learn
        Ok(acc.as_ref().is_some_and(|a| a != i))
    })?;
    Ok(match acc {
        Some(a) => a,
        None => {
            let mut top = i.clone();
            top.make_top();
            top
        }
    })
}

/// Limit of the complete propagators of the individual sentences and
/// definitions of `t`.
pub fn sentence_limit(t: &Theory, i: &FourValuedStructure) -> Result<FourValuedStructure, OracleError> {
    let parts: Vec<Theory> = t.elements.iter().map(|e| Theory { elements: vec![e.clone()] }).collect();
    let mut cur = i.clone();
    // predicates only some sentences mention must exist for all of them
    let preds = Vocabulary { predicates: working_vocabulary(t, i).predicates, functions: Vec::new() };
    cur.extend(&preds);
    loop {
        let mut changed = false;
        for part in &parts {
            let next = complete_propagate(part, &cur)?;
            if next != cur {
                cur = next;
                changed = true;
            }
        }
        if !changed || cur.is_top() {
            return Ok(cur.restrict(&i.vocabulary()));
        }
    }
}

/// True if `t` is a single definition or sentence.
pub fn is_singleton(t: &Theory) -> bool {
    matches!(t.elements.as_slice(), [TheoryElement::Sentence(_) | TheoryElement::Definition(_)])
}
