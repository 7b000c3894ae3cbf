//! Propagators for theories: INF sentences, the inconsistency propagator,
//! definitions (well-founded model and completion) and the scheduler that
//! chains them to a limit.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use thiserror::Error;

use crate::engine::{Engine, EngineError, External, Outcome, RelId, RuleHead, RuleSpec, RunConfig, Schedule, Store};
use crate::normalize::{normalize, simplify_inf, InfHead, InfSentence, NormalizationResult, NormalizeOptions};
use crate::structure::{
    evaluate, Assignment, DomainLiteral, EvalError, FourValuedStructure, Relation, StructureError, Tuple, TruthValue,
};
use crate::syntax::{
    all_variables, fresh_var, substitute, tf_name, CmpOp, Definition, Formula, Polarity, Term, Theory,
    TheoryElement, Vocabulary,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PropagateError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Structure(#[from] StructureError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("the well-founded model is only defined on three-valued structures")]
    FourValued,
}

impl From<crate::syntax::SubstError> for PropagateError {
    fn from(e: crate::syntax::SubstError) -> Self {
        PropagateError::Eval(EvalError::Unassigned(e.to_string()))
    }
}

/// A propagator taking part in a refinement sequence.
#[derive(Clone, Debug, PartialEq)]
pub enum PropagatorSpec {
    Inf(InfSentence),
    Definition(Definition),
    Inconsistency,
}

impl fmt::Display for PropagatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PropagatorSpec::Inf(s) => write!(f, "{s}"),
            PropagatorSpec::Definition(d) => {
                let heads = d.defined().join(", ");
                write!(f, "definition of {heads}")
            }
            PropagatorSpec::Inconsistency => f.write_str("inconsistency"),
        }
    }
}

/// How definitions take part in propagation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DefinitionMode {
    WellFounded,
    Completion,
    #[default]
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PropagateConfig {
    /// Maximal number of changing steps; `None` runs to a fixpoint.
    pub budget: Option<usize>,
    pub definitions: DefinitionMode,
    /// Keep auxiliary and graph predicates in the result.
    pub keep_aux: bool,
    pub schedule: Schedule,
    /// Stop with the inconsistent structure as soon as an atom becomes `i`.
    pub eager_inconsistency: bool,
    /// Emit universally quantified disjunctions as clauses.
    pub clauses: bool,
    pub simplify: bool,
    pub trace: bool,
}

impl Default for PropagateConfig {
    fn default() -> Self {
        PropagateConfig {
            budget: None,
            definitions: DefinitionMode::Both,
            keep_aux: false,
            schedule: Schedule::Fifo,
            eager_inconsistency: true,
            clauses: true,
            simplify: true,
            trace: false,
        }
    }
}

/// One changing step: which propagator fired and the atoms it changed,
/// with their new values.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceStep {
    pub propagator: usize,
    pub changes: Vec<(DomainLiteral, TruthValue)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RefinementTrace {
    pub steps: Vec<TraceStep>,
}

impl RefinementTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct Propagation {
    pub structure: FourValuedStructure,
    pub trace: RefinementTrace,
    /// Propagators by trace id.
    pub propagators: Vec<PropagatorSpec>,
    pub normalization: NormalizationResult,
    pub inconsistent: bool,
    /// False when the budget stopped the run early.
    pub stable: bool,
    /// Number of changing steps.
    pub steps: usize,
}

// ---------------------------------------------------------------- reference propagators

fn head_tuple(head_args: &[Term], vars: &[String], elems: &[u32], i: &FourValuedStructure) -> Result<Tuple, PropagateError> {
    let asg = Assignment::from_elems(vars, elems);
    let mut t = Tuple::new();
    for a in head_args {
        match crate::structure::eval_term(i.domain(), a, &asg)? {
            crate::structure::Value::Elem(e) => t.push(e),
            crate::structure::Value::Num(x) => return Err(EvalError::ForeignNumber(x).into()),
        }
    }
    Ok(t)
}

/// The operator of one INF sentence: every instance whose guard is at least
/// `t` raises its head literal. Computed by direct evaluation.
pub fn apply_inf(s: &InfSentence, i: &FourValuedStructure) -> Result<FourValuedStructure, PropagateError> {
    if s.guard.contains_aggregate() && !i.is_three_valued() {
        let mut top = i.clone();
        top.make_top();
        return Ok(top);
    }
    let mut out = i.clone();
    let d = i.domain_arc().clone();
    for t in d.all_tuples(s.vars.len()) {
        let v = evaluate(i, &s.guard, &Assignment::from_elems(&s.vars, &t))?;
        if !v.ct() {
            continue;
        }
        match &s.head {
            InfHead::Verum => {}
            InfHead::Falsum => {
                out.make_top();
                return Ok(out);
            }
            InfHead::Literal { atom, positive } => {
                let tuple = head_tuple(&atom.args, &s.vars, &t, i)?;
                let v = if *positive { TruthValue::T } else { TruthValue::F };
                out.raise(&atom.pred, &tuple, v)?;
            }
        }
    }
    Ok(out)
}

/// Identity on three-valued structures, the inconsistent structure otherwise.
pub fn apply_inconsistency(i: &FourValuedStructure) -> FourValuedStructure {
    let mut out = i.clone();
    if !i.is_three_valued() {
        out.make_top();
    }
    out
}

/// Disjunction of rule bodies per defined atom (absent means `f`).
fn body_values(d: &Definition, j: &FourValuedStructure) -> Result<HashMap<(String, Tuple), TruthValue>, PropagateError> {
    let mut vals: HashMap<(String, Tuple), TruthValue> = HashMap::new();
    let dom = j.domain_arc().clone();
    for r in &d.rules {
        for t in dom.all_tuples(r.vars.len()) {
            let v = evaluate(j, &r.body, &Assignment::from_elems(&r.vars, &t))?;
            if v == TruthValue::F {
                continue;
            }
            let head = head_tuple(&r.head.args, &r.vars, &t, j)?;
            let e = vals.entry((r.head.pred.clone(), head)).or_insert(TruthValue::F);
            *e = e.or(v);
        }
    }
    Ok(vals)
}

/// Well-founded model of `d` over the open predicates of `i`: alternate
/// true steps and falsification of the greatest unfounded set.
pub fn wfm(d: &Definition, i: &FourValuedStructure) -> Result<FourValuedStructure, PropagateError> {
    if !i.is_three_valued() {
        return Err(PropagateError::FourValued);
    }
    let defined = d.defined();
    let mut j = i.clone();
    for p in &defined {
        let arity = d.rules.iter().find(|r| &r.head.pred == p).map(|r| r.head.args.len()).unwrap_or(0);
        match j.relation_mut(p) {
            Some(r) => *r = Relation::new(r.arity),
            None => {
                let mut v = Vocabulary::new();
                v.add_predicate(p.clone(), arity);
                j.extend(&v);
            }
        }
    }
    let dom = j.domain_arc().clone();
    let defined_atoms: Vec<(String, Tuple)> = defined
        .iter()
        .flat_map(|p| {
            let a = j.arity(p).unwrap_or(0);
            dom.all_tuples(a).map(move |t| (p.clone(), t))
        })
        .collect();
    loop {
        let mut changed = false;
        loop {
            let vals = body_values(d, &j)?;
            let mut step = false;
            for (p, t) in &defined_atoms {
                if j.value(p, t)? == TruthValue::U && vals.get(&(p.clone(), t.clone())) == Some(&TruthValue::T) {
                    j.set(p, t.clone(), TruthValue::T)?;
                    step = true;
                }
            }
            if !step {
                break;
            }
            changed = true;
        }
        let mut unfounded: HashSet<(String, Tuple)> = HashSet::new();
        for (p, t) in &defined_atoms {
            if j.value(p, t)? == TruthValue::U {
                unfounded.insert((p.clone(), t.clone()));
            }
        }
        loop {
            let mut assumed = j.clone();
            for (p, t) in &unfounded {
                assumed.set(p, t.clone(), TruthValue::F)?;
            }
            let vals = body_values(d, &assumed)?;
            let before = unfounded.len();
            unfounded.retain(|a| vals.get(a).map_or(true, |v| *v == TruthValue::F));
            if unfounded.len() == before {
                break;
            }
        }
        for (p, t) in &unfounded {
            j.set(p, t.clone(), TruthValue::F)?;
            changed = true;
        }
        if !changed {
            return Ok(j);
        }
    }
}

/// The propagator of a definition: defined atoms take the values of the
/// well-founded model as lower bounds.
pub fn apply_definition(d: &Definition, i: &FourValuedStructure) -> Result<FourValuedStructure, PropagateError> {
    let i3 = apply_inconsistency(i);
    if !i.is_three_valued() {
        return Ok(i3);
    }
    let w = wfm(d, i)?;
    let mut out = i.clone();
    for p in d.defined() {
        let a = w.arity(&p).unwrap_or(0);
        if !out.has_predicate(&p) {
            let mut v = Vocabulary::new();
            v.add_predicate(p.clone(), a);
            out.extend(&v);
        }
        for t in i.domain().all_tuples(a) {
            let v = w.value(&p, &t)?;
            if v != TruthValue::U {
                out.raise(&p, &t, v)?;
            }
        }
    }
    Ok(out)
}

/// One equivalence per defined predicate between its atom and the
/// disjunction of its rule bodies.
pub fn completion(d: &Definition) -> Vec<Formula> {
    let mut avoid: HashSet<String> = HashSet::new();
    for r in &d.rules {
        avoid.extend(r.vars.iter().cloned());
        avoid.extend(all_variables(&r.body));
    }
    d.defined()
        .into_iter()
        .map(|p| {
            let rules: Vec<_> = d.rules.iter().filter(|r| r.head.pred == p).collect();
            let arity = rules[0].head.args.len();
            let base: Vec<String> = if arity == 1 { vec!["x".into()] } else { (1..=arity).map(|k| format!("x{k}")).collect() };
            let mut taken = avoid.clone();
            let xs: Vec<String> = base
                .iter()
                .map(|b| {
                    let v = if taken.contains(b) { fresh_var(b, &taken) } else { b.clone() };
                    taken.insert(v.clone());
                    v
                })
                .collect();
            let head = Formula::Atom(crate::syntax::Atom::new(p.clone(), xs.iter().map(Term::var).collect()));
            let bodies = rules
                .iter()
                .map(|r| {
                    let head_vars: Option<Vec<String>> =
                        r.head.args.iter().map(|a| a.as_var().map(str::to_string)).collect();
                    let distinct = head_vars.as_ref().is_some_and(|hv| hv.iter().collect::<HashSet<_>>().len() == hv.len());
                    match head_vars {
                        Some(hv) if distinct => {
                            let others: Vec<String> = r.vars.iter().filter(|v| !hv.contains(v)).cloned().collect();
                            let terms: Vec<Term> = xs.iter().map(Term::var).collect();
                            let body = substitute(&Formula::exists(others, r.body.clone()), &hv, &terms)
                                .expect("equal lengths");
                            body
                        }
                        _ => {
                            let mut parts: Vec<Formula> = xs
                                .iter()
                                .zip(&r.head.args)
                                .map(|(x, t)| Formula::Cmp(CmpOp::Eq, Term::var(x), t.clone()))
                                .collect();
                            parts.push(r.body.clone());
                            Formula::exists(r.vars.clone(), Formula::And(parts))
                        }
                    }
                })
                .collect();
            Formula::forall(xs, Formula::equiv(head, Formula::or(bodies)))
        })
        .collect()
}

fn apply_spec(p: &PropagatorSpec, i: &FourValuedStructure) -> Result<FourValuedStructure, PropagateError> {
    match p {
        PropagatorSpec::Inf(s) => apply_inf(s, i),
        PropagatorSpec::Definition(d) => apply_definition(d, i),
        PropagatorSpec::Inconsistency => Ok(apply_inconsistency(i)),
    }
}

/// Round-robin application of the propagators until nothing changes.
pub fn limit(props: &[PropagatorSpec], i: &FourValuedStructure) -> Result<FourValuedStructure, PropagateError> {
    let mut cur = i.clone();
    loop {
        let mut changed = false;
        for p in props {
            let next = apply_spec(p, &cur)?;
            if next != cur {
                cur = next;
                changed = true;
            }
        }
        if !changed {
            return Ok(cur);
        }
    }
}

// ---------------------------------------------------------------- engine-backed propagation

/// The certainly-true (or, with `positive` false, certainly-false) version
/// of a formula over the tf-vocabulary. Aggregate atoms stay as they are,
/// negated for the certainly-false side.
pub fn certain(f: &Formula, positive: bool) -> Formula {
    let both = |xs: &[Formula], pos: bool| xs.iter().map(|x| certain(x, pos)).collect::<Vec<_>>();
    match f {
        Formula::True => if positive { Formula::True } else { Formula::False },
        Formula::False => if positive { Formula::False } else { Formula::True },
        Formula::Atom(a) => {
            let pol = if positive { Polarity::Ct } else { Polarity::Cf };
            Formula::Atom(crate::syntax::Atom::new(tf_name(&a.pred, pol), a.args.clone()))
        }
        Formula::Cmp(op, l, r) => Formula::Cmp(if positive { *op } else { op.complement() }, l.clone(), r.clone()),
        Formula::Not(x) => certain(x, !positive),
        Formula::And(xs) => if positive { Formula::And(both(xs, true)) } else { Formula::Or(both(xs, false)) },
        Formula::Or(xs) => if positive { Formula::Or(both(xs, true)) } else { Formula::And(both(xs, false)) },
        Formula::Implies(a, b) => {
            let g = Formula::Or(vec![Formula::not((**a).clone()), (**b).clone()]);
            certain(&g, positive)
        }
        Formula::Equiv(a, b) => {
            let (a, b) = ((**a).clone(), (**b).clone());
            let g = Formula::And(vec![
                Formula::Or(vec![Formula::not(a.clone()), b.clone()]),
                Formula::Or(vec![Formula::not(b), a]),
            ]);
            certain(&g, positive)
        }
        Formula::Forall(vs, b) => {
            let body = Box::new(certain(b, positive));
            if positive { Formula::Forall(vs.clone(), body) } else { Formula::Exists(vs.clone(), body) }
        }
        Formula::Exists(vs, b) => {
            let body = Box::new(certain(b, positive));
            if positive { Formula::Exists(vs.clone(), body) } else { Formula::Forall(vs.clone(), body) }
        }
        Formula::Agg(_) => if positive { f.clone() } else { Formula::not(f.clone()) },
    }
}

/// The rule `ct(head) <= ct(guard)` of an INF sentence.
pub fn inf_rule(s: &InfSentence) -> Option<RuleSpec> {
    let head = match &s.head {
        InfHead::Verum => return None,
        InfHead::Falsum => RuleHead::Falsum,
        InfHead::Literal { atom, positive } => {
            let pol = if *positive { Polarity::Ct } else { Polarity::Cf };
            RuleHead::Atom { rel: tf_name(&atom.pred, pol), args: atom.args.clone() }
        }
    };
    Some(RuleSpec { vars: s.vars.clone(), head, body: certain(&s.guard, true) })
}

/// Loads `i` into an engine declaring the tf-vocabulary of `v`.
pub fn seed_engine(v: &Vocabulary, i: &FourValuedStructure) -> Result<Engine, PropagateError> {
    let mut e = Engine::new(i.domain_arc().clone());
    e.add_tf_vocabulary(v)?;
    for (p, r) in i.relations() {
        if v.predicate(p).is_none() {
            continue;
        }
        let ct = e.store.id(&tf_name(p, Polarity::Ct)).expect("declared");
        let cf = e.store.id(&tf_name(p, Polarity::Cf)).expect("declared");
        for t in i.domain().sorted(&r.ct) {
            e.store.insert(ct, &t);
        }
        for t in i.domain().sorted(&r.cf) {
            e.store.insert(cf, &t);
        }
    }
    Ok(e)
}

/// Reads the predicates of `v` back from the ct/cf relations.
pub fn read_structure(store: &Store, v: &Vocabulary) -> FourValuedStructure {
    let mut rels = BTreeMap::new();
    for p in &v.predicates {
        let mut r = Relation::new(p.arity);
        if let Some(ct) = store.id(&tf_name(&p.name, Polarity::Ct)) {
            r.ct = store.rel(ct).rows().map(Tuple::from_slice).collect();
        }
        if let Some(cf) = store.id(&tf_name(&p.name, Polarity::Cf)) {
            r.cf = store.rel(cf).rows().map(Tuple::from_slice).collect();
        }
        rels.insert(p.name.clone(), r);
    }
    FourValuedStructure::from_relations(store.domain_arc().clone(), rels)
}

/// True if no tuple is in both `P_ct` and `P_cf` for a predicate of `v`.
fn store_is_three_valued(store: &Store, v: &Vocabulary) -> bool {
    v.predicates.iter().all(|p| {
        let ids = (store.id(&tf_name(&p.name, Polarity::Ct)), store.id(&tf_name(&p.name, Polarity::Cf)));
        match ids {
            (Some(ct), Some(cf)) => {
                let (small, other) = if store.rel(ct).len() <= store.rel(cf).len() { (ct, cf) } else { (cf, ct) };
                store.rel(small).rows().all(|t| !store.contains(other, t))
            }
            _ => true,
        }
    })
}

fn restrict_vocabulary(v: &Vocabulary, keep: &Vocabulary) -> Vocabulary {
    Vocabulary {
        predicates: v.predicates.iter().filter(|p| keep.predicate(&p.name).is_some()).cloned().collect(),
        functions: Vec::new(),
    }
}

struct DefinitionPropagator {
    def: Definition,
    vocab: Vocabulary,
    reads: Vec<RelId>,
}

impl DefinitionPropagator {
    fn new(def: Definition, full: &Vocabulary, store: &Store) -> Self {
        let mut vocab = Vocabulary::new();
        let mut reads = Vec::new();
        for p in def.defined().into_iter().chain(def.open()) {
            if let Some(s) = full.predicate(&p) {
                vocab.add_predicate(p.clone(), s.arity);
                for pol in [Polarity::Ct, Polarity::Cf] {
                    if let Some(id) = store.id(&tf_name(&p, pol)) {
                        reads.push(id);
                    }
                }
            }
        }
        DefinitionPropagator { def, vocab, reads }
    }
}

impl External for DefinitionPropagator {
    fn reads(&self) -> Vec<RelId> {
        self.reads.clone()
    }

    fn fire(&mut self, store: &Store) -> Result<Vec<(RelId, Tuple)>, EngineError> {
        let snap = read_structure(store, &self.vocab);
        if !snap.is_three_valued() {
            return Ok(vec![(usize::MAX, Tuple::new())]);
        }
        let next = apply_definition(&self.def, &snap).map_err(|e| match e {
            PropagateError::Eval(e) => EngineError::Eval(e),
            PropagateError::Engine(e) => e,
            PropagateError::Structure(e) => EngineError::Eval(e.into()),
            PropagateError::FourValued => EngineError::NotPositive("four-valued definition input".into()),
        })?;
        let mut out = Vec::new();
        for p in self.def.defined() {
            let (Some(r), Some(old)) = (next.relation(&p), snap.relation(&p)) else { continue };
            for (pol, new_set, old_set) in [(Polarity::Ct, &r.ct, &old.ct), (Polarity::Cf, &r.cf, &old.cf)] {
                let id = store.id(&tf_name(&p, pol)).expect("declared");
                for t in store.domain().sorted(new_set.difference(old_set)) {
                    out.push((id, t));
                }
            }
        }
        Ok(out)
    }
}

/// Function symbols applied somewhere in `t`, with their arities.
fn theory_functions(t: &Theory) -> Vec<(String, usize)> {
    let mut out: Vec<(String, usize)> = Vec::new();
    let mut visit = |f: &Formula| {
        f.visit_terms(&mut |term| {
            fn walk(term: &Term, out: &mut Vec<(String, usize)>) {
                if let Term::App(name, args) = term {
                    if !out.iter().any(|(n, _)| n == name) {
                        out.push((name.clone(), args.len()));
                    }
                    args.iter().for_each(|a| walk(a, out));
                }
            }
            walk(term, &mut out);
        })
    };
    for e in &t.elements {
        match e {
            TheoryElement::Sentence(f) => visit(f),
            TheoryElement::Definition(d) => d.rules.iter().for_each(|r| {
                visit(&r.body);
                visit(&Formula::Atom(r.head.clone()));
            }),
        }
    }
    out
}

/// Predicates used in `t` with their arities.
fn theory_predicates(t: &Theory) -> Vec<(String, usize)> {
    let mut out: Vec<(String, usize)> = Vec::new();
    let mut add = |n: &str, a: usize| {
        if !Vocabulary::is_builtin(n) && !out.iter().any(|(m, _)| m == n) {
            out.push((n.to_string(), a));
        }
    };
    for e in &t.elements {
        let mut fs: Vec<&Formula> = Vec::new();
        match e {
            TheoryElement::Sentence(f) => fs.push(f),
            TheoryElement::Definition(d) => {
                for r in &d.rules {
                    add(&r.head.pred, r.head.args.len());
                    fs.push(&r.body);
                }
            }
        }
        for f in fs {
            f.visit(&mut |g| {
                if let Formula::Atom(a) = g {
                    add(&a.pred, a.args.len());
                }
            });
        }
    }
    out
}

/// The vocabulary of `i` extended with the symbols used by `t`.
pub fn working_vocabulary(t: &Theory, i: &FourValuedStructure) -> Vocabulary {
    let mut v = i.vocabulary();
    for (n, a) in theory_predicates(t) {
        if v.predicate(&n).is_none() {
            v.add_predicate(n, a);
        }
    }
    for (n, a) in theory_functions(t) {
        v.add_function(n, a);
    }
    v
}

/// Propagators for `t` in trace-id order: its INF sentences, then its
/// definitions, then the inconsistency propagator.
pub fn propagators_for(t: &Theory, v: &Vocabulary, cfg: &PropagateConfig) -> (Vec<PropagatorSpec>, NormalizationResult) {
    let mut theory = Theory::new();
    for e in &t.elements {
        theory.elements.push(e.clone());
    }
    if cfg.definitions != DefinitionMode::WellFounded {
        for d in t.definitions() {
            for s in completion(d) {
                theory.push(s);
            }
        }
    }
    let norm = normalize(&theory, v, NormalizeOptions { clauses: cfg.clauses });
    let infs = if cfg.simplify { simplify_inf(&norm.infs()) } else { norm.infs() };
    let mut props: Vec<PropagatorSpec> = infs.into_iter().map(PropagatorSpec::Inf).collect();
    if cfg.definitions != DefinitionMode::Completion {
        props.extend(norm.definitions.iter().cloned().map(PropagatorSpec::Definition));
    }
    props.push(PropagatorSpec::Inconsistency);
    (props, norm)
}

/// Propagation for a theory: normalize to INF sentences, run them with the
/// definition propagators to a limit (or the budget), then apply the
/// inconsistency propagator.
pub fn propagate(t: &Theory, i: &FourValuedStructure, cfg: &PropagateConfig) -> Result<Propagation, PropagateError> {
    let v = working_vocabulary(t, i);
    let (props, norm) = propagators_for(t, &v, cfg);
    let full = norm.vocabulary.clone();
    let mut start = i.clone();
    start.extend(&full);
    let original = i.vocabulary();
    let finish = |s: FourValuedStructure| if cfg.keep_aux { s } else { s.restrict(&original) };

    let inconsistency_id = props.len() - 1;
    if !start.is_three_valued() && cfg.eager_inconsistency {
        let mut top = start;
        top.make_top();
        let trace = RefinementTrace {
            steps: if cfg.trace { vec![TraceStep { propagator: inconsistency_id, changes: vec![] }] } else { vec![] },
        };
        return Ok(Propagation {
            structure: finish(top),
            trace,
            propagators: props,
            normalization: norm,
            inconsistent: true,
            stable: true,
            steps: 1,
        });
    }

    let mut engine = seed_engine(&full, &start)?;
    let mut rule_owner = Vec::new();
    for (k, p) in props.iter().enumerate() {
        if let PropagatorSpec::Inf(s) = p {
            if let Some(rule) = inf_rule(s) {
                engine.add_rule(&rule)?;
                rule_owner.push(k);
            }
        }
    }
    let mut externals: Vec<Box<dyn External>> = Vec::new();
    for (k, p) in props.iter().enumerate() {
        if let PropagatorSpec::Definition(d) = p {
            externals.push(Box::new(DefinitionPropagator::new(d.clone(), &full, &engine.store)));
            rule_owner.push(k);
        }
    }
    let run_cfg = RunConfig {
        budget: cfg.budget,
        schedule: cfg.schedule,
        stop_on_conflict: cfg.eager_inconsistency,
        record: cfg.trace,
    };
    let run = engine.run(run_cfg, &mut externals)?;

    let mut trace = RefinementTrace::default();
    let last = run.trace.len().saturating_sub(1);
    for (n, step) in run.trace.iter().enumerate() {
        let changes = step
            .added
            .iter()
            .filter_map(|(rel, t)| {
                let name = &engine.store.rel(*rel).name;
                let (pred, pol) = crate::syntax::split_tf_name(name)?;
                let partner = engine.store.id(&tf_name(pred, pol.flip()))?;
                let both = n == last && engine.store.contains(partner, t);
                let v = match (pol, both) {
                    (_, true) => TruthValue::I,
                    (Polarity::Ct, false) => TruthValue::T,
                    (Polarity::Cf, false) => TruthValue::F,
                };
                Some((DomainLiteral { pred: pred.to_string(), tuple: t.clone(), positive: true }, v))
            })
            .collect();
        trace.steps.push(TraceStep { propagator: rule_owner[step.source], changes });
    }

    let shown = if cfg.keep_aux { full.clone() } else { restrict_vocabulary(&full, &original) };
    let mut result = read_structure(&engine.store, &shown);
    let mut inconsistent = false;
    if matches!(run.outcome, Outcome::Falsum | Outcome::Conflict) || !store_is_three_valued(&engine.store, &full) {
        result.make_top();
        inconsistent = true;
        if cfg.trace {
            trace.steps.push(TraceStep { propagator: inconsistency_id, changes: vec![] });
        }
    }
    Ok(Propagation {
        structure: finish(result),
        trace,
        propagators: props,
        normalization: norm,
        inconsistent,
        stable: run.outcome != Outcome::Budget,
        steps: run.steps + inconsistent as usize,
    })
}
