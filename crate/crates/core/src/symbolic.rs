//! Symbolic structures: predicates interpreted by queries over another
//! vocabulary. Propagating INF sentences on them yields queries that can be
//! evaluated later, or used to rewrite queries for approximate answering.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use thiserror::Error;

use crate::io::InputMode;
use crate::normalize::{simplify_formula, InfHead, InfSentence};
use crate::structure::{ct_cf, evaluate, Assignment, EvalError, FourValuedStructure, Relation, TfError, TruthValue};
use crate::syntax::{
    all_variables, fresh_var, split_tf_name, substitute, tf_name, CmpOp, Formula, Polarity, QueryDef, Term,
    Vocabulary,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SymbolicError {
    #[error("aggregates have no symbolic counterpart")]
    Aggregate,
    #[error("no query for `{0}`")]
    MissingQuery(String),
    #[error("the structure does not interpret `{0}` two-valuedly")]
    NotTwoValued(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl From<TfError> for SymbolicError {
    fn from(_: TfError) -> Self {
        SymbolicError::Aggregate
    }
}

/// A query for each tf-predicate of `target`, over `source`.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolicStructure {
    pub target: Vocabulary,
    pub source: Vocabulary,
    pub queries: BTreeMap<String, QueryDef>,
    /// A sentence over `source`; where it holds, the structure described is
    /// the inconsistent one whatever the queries say.
    pub inconsistent: Formula,
}

/// Conventional head variables for a query of the given arity.
pub fn query_vars(arity: usize) -> Vec<String> {
    match arity {
        0..=3 => ["x", "y", "z"][..arity].iter().map(|s| s.to_string()).collect(),
        _ => (1..=arity).map(|k| format!("x{k}")).collect(),
    }
}

fn vars_as_terms(vs: &[String]) -> Vec<Term> {
    vs.iter().map(Term::var).collect()
}

impl SymbolicStructure {
    /// Every query empty: the symbolic counterpart of the least precise
    /// structure.
    pub fn bottom(target: &Vocabulary, source: &Vocabulary) -> Self {
        let mut queries = BTreeMap::new();
        for p in &target.predicates {
            for pol in [Polarity::Ct, Polarity::Cf] {
                queries.insert(tf_name(&p.name, pol), QueryDef::new(query_vars(p.arity), Formula::False));
            }
        }
        SymbolicStructure { target: target.clone(), source: source.clone(), queries, inconsistent: Formula::False }
    }

    /// Interprets each predicate two-valuedly by a single query: its
    /// certainly-false query is the negation.
    pub fn two_valued(target: &Vocabulary, source: &Vocabulary, queries: BTreeMap<String, QueryDef>) -> Self {
        let mut out = Self::bottom(target, source);
        for (p, q) in queries {
            let neg = QueryDef::new(q.vars.clone(), Formula::not(q.body.clone()));
            out.queries.insert(tf_name(&p, Polarity::Cf), neg);
            out.queries.insert(tf_name(&p, Polarity::Ct), q);
        }
        out
    }

    pub fn query(&self, pred: &str, pol: Polarity) -> Option<&QueryDef> {
        self.queries.get(&tf_name(pred, pol))
    }

    /// Total node count of all queries.
    pub fn size(&self) -> usize {
        self.queries.values().map(|q| q.body.size()).sum::<usize>() + self.inconsistent.size()
    }

    /// Replaces every atom over the tf-vocabulary by the instantiated query.
    pub fn apply_tf(&self, f: &Formula) -> Result<Formula, SymbolicError> {
        Ok(match f {
            Formula::True | Formula::False | Formula::Cmp(..) => f.clone(),
            Formula::Atom(a) => {
                let q = self.queries.get(&a.pred).ok_or_else(|| SymbolicError::MissingQuery(a.pred.clone()))?;
                q.instantiate(&a.args)
            }
            Formula::Not(x) => Formula::not(self.apply_tf(x)?),
            Formula::And(xs) => Formula::And(xs.iter().map(|x| self.apply_tf(x)).collect::<Result<_, _>>()?),
            Formula::Or(xs) => Formula::Or(xs.iter().map(|x| self.apply_tf(x)).collect::<Result<_, _>>()?),
            Formula::Implies(a, b) => Formula::implies(self.apply_tf(a)?, self.apply_tf(b)?),
            Formula::Equiv(a, b) => Formula::equiv(self.apply_tf(a)?, self.apply_tf(b)?),
            Formula::Forall(vs, b) => Formula::Forall(vs.clone(), Box::new(self.apply_tf(b)?)),
            Formula::Exists(vs, b) => Formula::Exists(vs.clone(), Box::new(self.apply_tf(b)?)),
            Formula::Agg(_) => return Err(SymbolicError::Aggregate),
        })
    }

    /// The certainly-true and certainly-false versions of `f`, over the
    /// source vocabulary.
    pub fn apply_to_formula(&self, f: &Formula) -> Result<(Formula, Formula), SymbolicError> {
        let (ct, cf) = ct_cf(f)?;
        Ok((self.apply_tf(&ct)?, self.apply_tf(&cf)?))
    }

    /// Evaluates every query in a two-valued structure over the source
    /// vocabulary.
    pub fn apply_to_structure(&self, e: &FourValuedStructure) -> Result<FourValuedStructure, SymbolicError> {
        let top = evaluate(e, &self.inconsistent, &Assignment::default())? == TruthValue::T;
        let mut rels = BTreeMap::new();
        for p in &self.target.predicates {
            let mut r = Relation::new(p.arity);
            for (pol, set) in [(Polarity::Ct, &mut r.ct), (Polarity::Cf, &mut r.cf)] {
                let q = self.query(&p.name, pol).ok_or_else(|| SymbolicError::MissingQuery(tf_name(&p.name, pol)))?;
                for t in e.domain().all_tuples(p.arity) {
                    let v = evaluate(e, &q.body, &Assignment::from_elems(&q.vars, &t))?;
                    match v {
                        TruthValue::T => {
                            set.insert(t);
                        }
                        TruthValue::F => {}
                        _ => return Err(SymbolicError::NotTwoValued(q.body.to_string())),
                    }
                }
            }
            rels.insert(p.name.clone(), r);
        }
        let mut out = FourValuedStructure::from_relations(e.domain_arc().clone(), rels);
        if top {
            out.make_top();
        }
        Ok(out)
    }
}

impl fmt::Display for SymbolicStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, q) in &self.queries {
            let (base, pol) = split_tf_name(name).unwrap_or((name, Polarity::Ct));
            let tag = match pol {
                Polarity::Ct => "ct",
                Polarity::Cf => "cf",
            };
            writeln!(f, "{base}<{tag}> = {{ {} : {} }}", q.vars.join(" "), q.body)?;
        }
        if self.inconsistent != Formula::False {
            writeln!(f, "// inconsistent when {}", self.inconsistent)?;
        }
        Ok(())
    }
}

/// The symbolic structure matching how each predicate is given: read from
/// the source as is, as a certainly-true relation `P_ct`, or not at all.
pub fn initial_symbolic(v: &Vocabulary, modes: &BTreeMap<String, InputMode>) -> SymbolicStructure {
    let mut source = Vocabulary::new();
    for p in &v.predicates {
        match modes.get(&p.name).copied().unwrap_or(InputMode::NoInfo) {
            InputMode::TwoValued => source.add_predicate(p.name.clone(), p.arity),
            InputMode::CtOnly => source.add_predicate(tf_name(&p.name, Polarity::Ct), p.arity),
            InputMode::NoInfo => {}
        }
    }
    let mut out = SymbolicStructure::bottom(v, &source);
    for p in &v.predicates {
        let xs = query_vars(p.arity);
        let atom = |name: String| Formula::Atom(crate::syntax::Atom::new(name, vars_as_terms(&xs)));
        match modes.get(&p.name).copied().unwrap_or(InputMode::NoInfo) {
            InputMode::TwoValued => {
                out.queries.insert(tf_name(&p.name, Polarity::Ct), QueryDef::new(xs.clone(), atom(p.name.clone())));
                out.queries.insert(tf_name(&p.name, Polarity::Cf), QueryDef::new(xs.clone(), Formula::not(atom(p.name.clone()))));
            }
            InputMode::CtOnly => {
                let q = QueryDef::new(xs.clone(), atom(tf_name(&p.name, Polarity::Ct)));
                out.queries.insert(tf_name(&p.name, Polarity::Ct), q);
            }
            InputMode::NoInfo => {}
        }
    }
    out
}

/// The source structure for `i` under the given input modes.
pub fn source_structure(i: &FourValuedStructure, modes: &BTreeMap<String, InputMode>) -> FourValuedStructure {
    let mut rels = BTreeMap::new();
    for (p, r) in i.relations() {
        match modes.get(p).copied().unwrap_or(InputMode::NoInfo) {
            InputMode::TwoValued => {
                let mut two = Relation::new(r.arity);
                for t in i.domain().all_tuples(r.arity) {
                    if r.ct.contains(&t) {
                        two.ct.insert(t);
                    } else {
                        two.cf.insert(t);
                    }
                }
                rels.insert(p.clone(), two);
            }
            InputMode::CtOnly => {
                let mut ct = Relation::new(r.arity);
                for t in i.domain().all_tuples(r.arity) {
                    if r.ct.contains(&t) {
                        ct.ct.insert(t);
                    } else {
                        ct.cf.insert(t);
                    }
                }
                rels.insert(tf_name(p, Polarity::Ct), ct);
            }
            InputMode::NoInfo => {}
        }
    }
    FourValuedStructure::from_relations(i.domain_arc().clone(), rels)
}

/// The shorter equivalent query: constants absorbed, nested connectives
/// flattened, repeated conjuncts and disjuncts dropped.
pub fn simplify_query(q: &QueryDef) -> QueryDef {
    QueryDef::new(q.vars.clone(), simplify_formula(&q.body))
}

/// `{ zs | old(zs) | added(zs) }`, flattening a disjunctive old body.
fn union(old: &QueryDef, added: Formula) -> QueryDef {
    let mut parts = match &old.body {
        Formula::Or(xs) => xs.clone(),
        b => vec![b.clone()],
    };
    parts.push(added);
    QueryDef::new(old.vars.clone(), Formula::Or(parts))
}

/// The symbolic counterpart of one INF sentence: the query of its head
/// grows by the mapped certainly-true guard.
pub fn symbolic_inf_step(phi: &SymbolicStructure, s: &InfSentence) -> Result<SymbolicStructure, SymbolicError> {
    let (ct_guard, _) = ct_cf(&s.guard)?;
    let guard = phi.apply_tf(&ct_guard)?;
    let mut out = phi.clone();
    match &s.head {
        InfHead::Verum => {}
        InfHead::Falsum => {
            let closed = Formula::exists(s.vars.clone(), guard);
            out.inconsistent = match out.inconsistent {
                Formula::Or(mut xs) => {
                    xs.push(closed);
                    Formula::Or(xs)
                }
                old => Formula::Or(vec![old, closed]),
            };
        }
        InfHead::Literal { atom, positive } => {
            let pol = if *positive { Polarity::Ct } else { Polarity::Cf };
            let key = tf_name(&atom.pred, pol);
            let old = out.queries.get(&key).ok_or_else(|| SymbolicError::MissingQuery(key.clone()))?.clone();
            let zs = old.vars.clone();
            let head_vars: Option<Vec<&str>> = atom.args.iter().map(Term::as_var).collect();
            let distinct = head_vars
                .as_ref()
                .is_some_and(|hv| hv.iter().collect::<BTreeSet<_>>().len() == hv.len());
            let added = match head_vars {
                Some(hv) if distinct => {
                    let hv: Vec<String> = hv.into_iter().map(str::to_string).collect();
                    let others: Vec<String> = s.vars.iter().filter(|v| !hv.contains(v)).cloned().collect();
                    substitute(&Formula::exists(others, guard), &hv, &vars_as_terms(&zs)).expect("equal lengths")
                }
                _ => {
                    // rename the sentence apart from the query variables first
                    let mut taken: HashSet<String> = zs.iter().cloned().collect();
                    taken.extend(all_variables(&guard));
                    let mut renamed = Vec::new();
                    for v in &s.vars {
                        let w = fresh_var(v, &taken);
                        taken.insert(w.clone());
                        renamed.push(w);
                    }
                    let terms = vars_as_terms(&renamed);
                    let body = substitute(&guard, &s.vars, &terms).expect("equal lengths");
                    let mut conj: Vec<Formula> = Vec::new();
                    for (z, a) in zs.iter().zip(&atom.args) {
                        let a = a.substitute_vars(&s.vars, &terms);
                        conj.push(Formula::Cmp(CmpOp::Eq, Term::var(z), a));
                    }
                    conj.push(body);
                    Formula::exists(renamed, Formula::And(conj))
                }
            };
            out.queries.insert(key, union(&old, added));
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SymbolicBudget {
    pub max_rounds: usize,
    /// Node count above which a predicate's query stops growing.
    pub max_query_size: usize,
}

impl SymbolicBudget {
    /// One round per sentence.
    pub fn for_sentences(n: usize) -> Self {
        SymbolicBudget { max_rounds: n.max(1), max_query_size: 10_000 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SymbolicPropagation {
    pub structure: SymbolicStructure,
    /// Queries that hit the size cap and were left at their last value.
    pub frozen: BTreeSet<String>,
    pub steps: usize,
}

/// Rounds of symbolic steps over `v` in order, simplifying after each step.
pub fn symbolic_propagate(
    v: &[InfSentence],
    phi0: &SymbolicStructure,
    b: SymbolicBudget,
) -> Result<SymbolicPropagation, SymbolicError> {
    let mut phi = phi0.clone();
    let mut frozen = BTreeSet::new();
    let mut steps = 0;
    for _ in 0..b.max_rounds {
        let mut changed = false;
        for s in v {
            let next = symbolic_inf_step(&phi, s)?;
            let cond = simplify_formula(&next.inconsistent);
            if cond != phi.inconsistent && cond.size() <= b.max_query_size {
                phi.inconsistent = cond;
                changed = true;
            }
            for (name, q) in next.queries {
                if frozen.contains(&name) {
                    continue;
                }
                let q = simplify_query(&q);
                if q.body.size() > b.max_query_size {
                    frozen.insert(name);
                    continue;
                }
                if phi.queries.get(&name) != Some(&q) {
                    phi.queries.insert(name, q);
                    changed = true;
                }
            }
            steps += 1;
        }
        if !changed {
            break;
        }
    }
    Ok(SymbolicPropagation { structure: phi, frozen, steps })
}

/// A query whose answers in the source are certain answers of `q`.
pub fn rewrite_certain(phi: &SymbolicStructure, q: &QueryDef) -> Result<QueryDef, SymbolicError> {
    let (ct, _) = phi.apply_to_formula(&q.body)?;
    Ok(simplify_query(&QueryDef::new(q.vars.clone(), ct)))
}

/// A query whose answers in the source include every possible answer of `q`.
pub fn rewrite_possible(phi: &SymbolicStructure, q: &QueryDef) -> Result<QueryDef, SymbolicError> {
    let (_, cf) = phi.apply_to_formula(&q.body)?;
    Ok(simplify_query(&QueryDef::new(q.vars.clone(), Formula::not(cf))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{parse_formula, parse_problem, parse_query};
    use crate::normalize::theory_to_inf;
    use crate::structure::Domain;
    use crate::syntax::Atom;
    use std::sync::Arc;

    fn inf(vars: &[&str], guard: &str, pred: &str, args: &[&str], positive: bool) -> InfSentence {
        let atom = Atom::new(pred, args.iter().map(|a| Term::var(*a)).collect());
        InfSentence::new(
            vars.iter().map(|v| v.to_string()).collect(),
            parse_formula(guard).unwrap(),
            InfHead::Literal { atom, positive },
        )
    }

    fn hamiltonian() -> (SymbolicStructure, Vec<InfSentence>) {
        let v = Vocabulary::with_predicates([("Edge", 2), ("Start", 1), ("InHam", 2), ("Aux", 3)]);
        let modes = [("Edge", InputMode::TwoValued), ("Start", InputMode::TwoValued)]
            .into_iter()
            .map(|(p, m)| (p.to_string(), m))
            .collect();
        let sentences = vec![
            inf(&["x", "y"], "~Edge(x,y)", "InHam", &["x", "y"], false),
            inf(&["x", "y"], "Start(y)", "InHam", &["x", "y"], false),
            inf(&["x", "y", "z"], "~InHam(x,y) & ~InHam(x,z)", "Aux", &["x", "y", "z"], true),
        ];
        (initial_symbolic(&v, &modes), sentences)
    }

    #[test]
    fn initial_structures() {
        let (phi, _) = hamiltonian();
        assert_eq!(phi.query("Edge", Polarity::Cf).unwrap().body.to_string(), "~Edge(x,y)");
        assert_eq!(phi.query("Aux", Polarity::Ct).unwrap().body, Formula::False);
        assert_eq!(phi.source, Vocabulary::with_predicates([("Edge", 2), ("Start", 1)]));
    }

    #[test]
    fn hamiltonian_walkthrough() {
        let (phi0, v) = hamiltonian();
        let phi1 = symbolic_inf_step(&phi0, &v[0]).unwrap();
        assert_eq!(phi1.query("InHam", Polarity::Cf).unwrap().body, parse_formula("false | ~Edge(x,y)").unwrap());
        let phi2 = symbolic_inf_step(&phi1, &v[1]).unwrap();
        let cf = &phi2.query("InHam", Polarity::Cf).unwrap().body;
        assert_eq!(*cf, parse_formula("false | ~Edge(x,y) | Start(y)").unwrap());
        let phi3 = symbolic_inf_step(&phi2, &v[2]).unwrap();
        let aux = phi3.query("Aux", Polarity::Ct).unwrap();
        let expected = "false | ((false | ~Edge(x,y) | Start(y)) & (false | ~Edge(x,z) | Start(z)))";
        assert_eq!(aux.body, parse_formula(expected).unwrap());
        let short = simplify_query(aux);
        assert_eq!(short.body, parse_formula("(~Edge(x,y) | Start(y)) & (~Edge(x,z) | Start(z))").unwrap());

        let r = symbolic_propagate(&v, &phi0, SymbolicBudget { max_rounds: 1, max_query_size: 100 }).unwrap();
        assert_eq!(r.structure.query("Aux", Polarity::Ct).unwrap(), &short);
        assert!(symbolic_propagate(&[], &phi0, SymbolicBudget::for_sentences(0)).unwrap().structure == phi0);
    }

    fn rhombus() -> (SymbolicStructure, FourValuedStructure) {
        let target = Vocabulary::with_predicates([("Rhombus", 1)]);
        let source = Vocabulary::with_predicates([("Quadrilateral", 1), ("EqualSides", 1)]);
        let q = parse_query("{ x : Quadrilateral(x) & EqualSides(x) }").unwrap();
        let phi = SymbolicStructure::two_valued(&target, &source, [("Rhombus".to_string(), q)].into());
        let d = Arc::new(Domain::new(["a", "b", "c"]).unwrap());
        let mut e = FourValuedStructure::new(d, &source);
        for (p, xs) in [("Quadrilateral", ["a", "b"]), ("EqualSides", ["b", "c"])] {
            for x in ["a", "b", "c"] {
                e.set_named(p, &[x], TruthValue::from_bool(xs.contains(&x)));
            }
        }
        (phi, e)
    }

    #[test]
    fn rhombus_example() {
        let (phi, e) = rhombus();
        let out = phi.apply_to_structure(&e).unwrap();
        let yes: Vec<_> = ["a", "b", "c"].into_iter().filter(|x| out.value_of("Rhombus", &[x]) == TruthValue::T).collect();
        assert_eq!(yes, ["b"]);
        let (ct, _) = phi.apply_to_formula(&parse_formula("? y : Rhombus(y)").unwrap()).unwrap();
        assert_eq!(ct, parse_formula("? y : Quadrilateral(y) & EqualSides(y)").unwrap());
    }

    #[test]
    fn empty_queries_give_bottom() {
        let (_, e) = rhombus();
        let v = Vocabulary::with_predicates([("Rhombus", 1)]);
        let out = SymbolicStructure::bottom(&v, &e.vocabulary()).apply_to_structure(&e).unwrap();
        assert_eq!(out, FourValuedStructure::new(e.domain_arc().clone(), &v));
    }

    #[test]
    fn student_rewriting() {
        let p = parse_problem(include_str!("../../../problems/student.fop")).unwrap();
        let (infs, norm) = theory_to_inf(&p.theory, &p.vocabulary);
        let phi0 = initial_symbolic(&norm.vocabulary, &p.input_modes());
        let e = source_structure(&p.structure, &p.input_modes());
        assert_eq!(phi0.apply_to_structure(&e).unwrap().restrict(&p.vocabulary), p.structure);

        let r = symbolic_propagate(&infs, &phi0, SymbolicBudget { max_rounds: 3, max_query_size: 2_000 }).unwrap();
        let q = parse_query("{ c : Selected(c) }").unwrap();
        let certain = rewrite_certain(&r.structure, &q).unwrap();
        let possible = rewrite_possible(&r.structure, &q).unwrap();
        let answers = |q: &QueryDef| -> Vec<String> {
            e.domain()
                .elements()
                .filter(|&x| evaluate(&e, &q.body, &Assignment::from_elems(&q.vars, &[x])).unwrap() == TruthValue::T)
                .map(|x| e.domain().name(x).to_string())
                .collect()
        };
        let sure = answers(&certain);
        assert!(sure.contains(&"c1".to_string()));
        let maybe = answers(&possible);
        assert!(sure.iter().all(|x| maybe.contains(x)));
        assert!(!maybe.contains(&"c2".to_string()) || !sure.contains(&"c2".to_string()));
    }
}
