//! From arbitrary theories to implicational normal form.
//!
//! The pipeline is function elimination, negation normal form, the
//! equivalence normal form (one equivalence per subformula, with fresh
//! auxiliary predicates) and finally the expansion of every equivalence
//! into implications with a literal conclusion.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use crate::syntax::{
    all_variables, free_vars_ordered, fresh_var, subst_map, AggAtom, AggCmp, AggFn, Atom, CmpOp, Definition,
    Formula, Rule, SetExpr, Term, Theory, TheoryElement, Vocabulary,
};

// ---------------------------------------------------------------- literals

/// A literal as it appears in normal forms. `True` and `False` stand for the
/// empty conjunction and disjunction.
#[derive(Clone, Debug, PartialEq)]
pub enum Lit {
    True,
    False,
    Atom { atom: Atom, positive: bool },
    Cmp(CmpOp, Term, Term),
}

impl Lit {
    pub fn pos(atom: Atom) -> Lit {
        Lit::Atom { atom, positive: true }
    }

    pub fn negate(&self) -> Lit {
        match self {
            Lit::True => Lit::False,
            Lit::False => Lit::True,
            Lit::Atom { atom, positive } => Lit::Atom { atom: atom.clone(), positive: !positive },
            Lit::Cmp(op, l, r) => Lit::Cmp(op.complement(), l.clone(), r.clone()),
        }
    }

    pub fn from_formula(f: &Formula) -> Option<Lit> {
        Some(match f {
            Formula::True => Lit::True,
            Formula::False => Lit::False,
            Formula::Atom(a) => Lit::pos(a.clone()),
            Formula::Not(inner) => match &**inner {
                Formula::Atom(a) => Lit::Atom { atom: a.clone(), positive: false },
                Formula::Cmp(op, l, r) => Lit::Cmp(op.complement(), l.clone(), r.clone()),
                Formula::True => Lit::False,
                Formula::False => Lit::True,
                _ => return None,
            },
            Formula::Cmp(op, l, r) => Lit::Cmp(*op, l.clone(), r.clone()),
            _ => return None,
        })
    }

    pub fn to_formula(&self) -> Formula {
        match self {
            Lit::True => Formula::True,
            Lit::False => Formula::False,
            Lit::Atom { atom, positive: true } => Formula::Atom(atom.clone()),
            Lit::Atom { atom, positive: false } => Formula::not(Formula::Atom(atom.clone())),
            Lit::Cmp(op, l, r) => Formula::Cmp(*op, l.clone(), r.clone()),
        }
    }

    fn subst(&self, map: &HashMap<String, Term>) -> Lit {
        Lit::from_formula(&subst_map(&self.to_formula(), map)).expect("substitution keeps literals")
    }

    pub fn predicate(&self) -> Option<&str> {
        match self {
            Lit::Atom { atom, .. } => Some(&atom.pred),
            _ => None,
        }
    }
}

impl fmt::Display for Lit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.to_formula().fmt(f)
    }
}

// ---------------------------------------------------------------- ENF / INF

#[derive(Clone, Debug, PartialEq)]
pub enum EnfBody {
    And(Vec<Lit>),
    Or(Vec<Lit>),
    Forall(Vec<String>, Lit),
    Exists(Vec<String>, Lit),
    /// `term cmp func{ vars : cond }` with `cmp` either `>=` or `=<`.
    Agg { term: Term, cmp: AggCmp, func: AggFn, vars: Vec<String>, cond: Lit },
}

impl EnfBody {
    pub fn to_formula(&self) -> Formula {
        let lits = |ls: &[Lit]| ls.iter().map(Lit::to_formula).collect::<Vec<_>>();
        match self {
            EnfBody::And(ls) => Formula::and(lits(ls)),
            EnfBody::Or(ls) => Formula::or(lits(ls)),
            EnfBody::Forall(vs, l) => Formula::forall(vs.clone(), l.to_formula()),
            EnfBody::Exists(vs, l) => Formula::exists(vs.clone(), l.to_formula()),
            EnfBody::Agg { term, cmp, func, vars, cond } => agg_formula(term, *cmp, *func, vars, cond.to_formula()),
        }
    }
}

fn agg_formula(term: &Term, cmp: AggCmp, func: AggFn, vars: &[String], cond: Formula) -> Formula {
    Formula::Agg(Box::new(AggAtom {
        term: term.clone(),
        cmp,
        func,
        set: SetExpr { vars: vars.to_vec(), cond: Box::new(cond) },
    }))
}

/// `! vars : head <=> body`. A `True` head with variables is the clause
/// `! vars : body`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnfSentence {
    pub vars: Vec<String>,
    pub head: Lit,
    pub body: EnfBody,
}

impl EnfSentence {
    pub fn to_formula(&self) -> Formula {
        Formula::forall(self.vars.clone(), Formula::equiv(self.head.to_formula(), self.body.to_formula()))
    }

    /// Predicate occurrences, with repetition.
    pub fn predicate_occurrences(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.to_formula().visit(&mut |g| {
            if let Formula::Atom(a) = g {
                out.push(a.pred.clone());
            }
        });
        out
    }
}

impl fmt::Display for EnfSentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.", self.to_formula())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum InfHead {
    Verum,
    /// Deriving falsum makes the structure inconsistent everywhere.
    Falsum,
    Literal { atom: Atom, positive: bool },
}

impl InfHead {
    pub fn to_formula(&self) -> Formula {
        match self {
            InfHead::Verum => Formula::True,
            InfHead::Falsum => Formula::False,
            InfHead::Literal { atom, positive: true } => Formula::Atom(atom.clone()),
            InfHead::Literal { atom, positive: false } => Formula::not(Formula::Atom(atom.clone())),
        }
    }
}

/// `! vars : guard => head`, the free variables of `guard` among `vars`.
#[derive(Clone, Debug, PartialEq)]
pub struct InfSentence {
    pub vars: Vec<String>,
    pub guard: Formula,
    pub head: InfHead,
}

impl InfSentence {
    pub fn new(vars: Vec<String>, guard: Formula, head: InfHead) -> Self {
        InfSentence { vars, guard, head }
    }

    pub fn to_formula(&self) -> Formula {
        Formula::forall(self.vars.clone(), Formula::implies(self.guard.clone(), self.head.to_formula()))
    }

    /// Predicates read by the guard.
    pub fn guard_predicates(&self) -> Vec<String> {
        self.guard.predicates()
    }

    pub fn head_predicate(&self) -> Option<&str> {
        match &self.head {
            InfHead::Literal { atom, .. } => Some(&atom.pred),
            _ => None,
        }
    }
}

impl fmt::Display for InfSentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.", self.to_formula())
    }
}

// ---------------------------------------------------------------- functions

#[derive(Clone, Debug, PartialEq)]
pub struct FunctionElimination {
    pub theory: Theory,
    pub vocabulary: Vocabulary,
    /// Function name to the name of its graph predicate.
    pub graphs: BTreeMap<String, String>,
}

fn fresh_symbol(base: &str, taken: &HashSet<String>) -> String {
    if !taken.contains(base) {
        return base.to_string();
    }
    (2..).map(|k| format!("{base}{k}")).find(|n| !taken.contains(n)).unwrap()
}

fn var_list(base: &str, n: usize) -> Vec<String> {
    if n == 1 {
        vec![base.to_string()]
    } else {
        (1..=n).map(|i| format!("{base}{i}")).collect()
    }
}

/// Replaces every n-ary function `F` by an (n+1)-ary graph predicate with
/// totality and functionality axioms.
pub fn eliminate_functions(t: &Theory, v: &Vocabulary) -> FunctionElimination {
    if v.functions.is_empty() {
        return FunctionElimination { theory: t.clone(), vocabulary: v.clone(), graphs: BTreeMap::new() };
    }
    let mut taken: HashSet<String> = v.predicates.iter().chain(&v.functions).map(|s| s.name.clone()).collect();
    let mut vocab = Vocabulary { predicates: v.predicates.clone(), functions: Vec::new() };
    let mut graphs = BTreeMap::new();
    let mut theory = Theory::new();
    for f in &v.functions {
        let name = fresh_symbol(&format!("P_{}", f.name), &taken);
        taken.insert(name.clone());
        vocab.add_predicate(name.clone(), f.arity + 1);
        graphs.insert(f.name.clone(), name.clone());
        let xs = if f.arity == 0 { Vec::new() } else { var_list("x", f.arity) };
        let graph = |y: &str| {
            let mut args: Vec<Term> = xs.iter().map(Term::var).collect();
            args.push(Term::var(y));
            Formula::Atom(Atom::new(name.clone(), args))
        };
        theory.push(Formula::forall(xs.clone(), Formula::exists(vec!["y".into()], graph("y"))));
        let mut vs = xs.clone();
        vs.extend(["y1".to_string(), "y2".to_string()]);
        theory.push(Formula::forall(
            vs,
            Formula::implies(
                Formula::And(vec![graph("y1"), graph("y2")]),
                Formula::Cmp(CmpOp::Eq, Term::var("y1"), Term::var("y2")),
            ),
        ));
    }
    for e in &t.elements {
        match e {
            TheoryElement::Sentence(f) => theory.push(flatten_functions(f, &graphs)),
            TheoryElement::Definition(d) => theory.elements.push(TheoryElement::Definition(Definition {
                rules: d
                    .rules
                    .iter()
                    .map(|r| Rule { vars: r.vars.clone(), head: r.head.clone(), body: flatten_functions(&r.body, &graphs) })
                    .collect(),
            })),
        }
    }
    FunctionElimination { theory, vocabulary: vocab, graphs }
}

struct Flattener<'a> {
    graphs: &'a BTreeMap<String, String>,
    avoid: HashSet<String>,
    guards: Vec<Formula>,
    fresh: Vec<String>,
}

impl Flattener<'_> {
    fn term(&mut self, t: &Term) -> Term {
        match t {
            Term::App(f, args) => {
                let mut flat: Vec<Term> = args.iter().map(|a| self.term(a)).collect();
                let y = fresh_var("x", &self.avoid);
                let y = if self.avoid.contains("x") { y } else { "x".to_string() };
                self.avoid.insert(y.clone());
                flat.push(Term::var(&y));
                self.guards.push(Formula::Atom(Atom::new(self.graphs[f].clone(), flat)));
                self.fresh.push(y.clone());
                Term::Var(y)
            }
            _ => t.clone(),
        }
    }

    /// Wraps an atomic formula as `! ys : graphs => atom`.
    fn wrap(&mut self, build: impl FnOnce(&mut Self) -> Formula) -> Formula {
        let (g, fr) = (std::mem::take(&mut self.guards), std::mem::take(&mut self.fresh));
        let atom = build(self);
        let guards = std::mem::replace(&mut self.guards, g);
        let fresh = std::mem::replace(&mut self.fresh, fr);
        if guards.is_empty() {
            atom
        } else {
            Formula::Forall(fresh, Box::new(Formula::implies(Formula::and(guards), atom)))
        }
    }

    fn formula(&mut self, f: &Formula) -> Formula {
        match f {
            Formula::True | Formula::False => f.clone(),
            Formula::Atom(a) if a.args.iter().any(Term::has_function) => self.wrap(|s| {
                Formula::Atom(Atom::new(a.pred.clone(), a.args.iter().map(|t| s.term(t)).collect()))
            }),
            Formula::Atom(_) => f.clone(),
            Formula::Cmp(op, l, r) if l.has_function() || r.has_function() => {
                self.wrap(|s| Formula::Cmp(*op, s.term(l), s.term(r)))
            }
            Formula::Cmp(..) => f.clone(),
            Formula::Agg(a) => {
                let cond = self.formula(&a.set.cond);
                let set = SetExpr { vars: a.set.vars.clone(), cond: Box::new(cond) };
                if a.term.has_function() {
                    self.wrap(|s| {
                        Formula::Agg(Box::new(AggAtom { term: s.term(&a.term), cmp: a.cmp, func: a.func, set }))
                    })
                } else {
                    Formula::Agg(Box::new(AggAtom { term: a.term.clone(), cmp: a.cmp, func: a.func, set }))
                }
            }
            Formula::Not(x) => Formula::not(self.formula(x)),
            Formula::And(xs) => Formula::And(xs.iter().map(|x| self.formula(x)).collect()),
            Formula::Or(xs) => Formula::Or(xs.iter().map(|x| self.formula(x)).collect()),
            Formula::Implies(a, b) => Formula::implies(self.formula(a), self.formula(b)),
            Formula::Equiv(a, b) => Formula::equiv(self.formula(a), self.formula(b)),
            Formula::Forall(vs, b) => Formula::Forall(vs.clone(), Box::new(self.formula(b))),
            Formula::Exists(vs, b) => Formula::Exists(vs.clone(), Box::new(self.formula(b))),
        }
    }
}

fn flatten_functions(f: &Formula, graphs: &BTreeMap<String, String>) -> Formula {
    if !f.contains_function() {
        return f.clone();
    }
    let mut fl = Flattener { graphs, avoid: all_variables(f), guards: Vec::new(), fresh: Vec::new() };
    fl.formula(f)
}

// ---------------------------------------------------------------- NNF

/// Negation normal form: negations only in front of atoms and aggregates,
/// no implications or equivalences, flattened connectives, aggregates in the
/// two primitive comparison forms.
pub fn push_negations(f: &Formula) -> Formula {
    simplify_formula(&nnf(f, true))
}

fn nnf(f: &Formula, pos: bool) -> Formula {
    match f {
        Formula::True => if pos { Formula::True } else { Formula::False },
        Formula::False => if pos { Formula::False } else { Formula::True },
        Formula::Atom(_) => if pos { f.clone() } else { Formula::not(f.clone()) },
        Formula::Cmp(op, l, r) => Formula::Cmp(if pos { *op } else { op.complement() }, l.clone(), r.clone()),
        Formula::Not(x) => nnf(x, !pos),
        Formula::And(xs) | Formula::Or(xs) => {
            let parts = xs.iter().map(|x| nnf(x, pos)).collect();
            if matches!(f, Formula::And(_)) == pos {
                Formula::And(parts)
            } else {
                Formula::Or(parts)
            }
        }
        Formula::Implies(a, b) => nnf(&Formula::Or(vec![Formula::not((**a).clone()), (**b).clone()]), pos),
        Formula::Equiv(a, b) => {
            let (a, b) = ((**a).clone(), (**b).clone());
            let g = if pos {
                Formula::And(vec![
                    Formula::Or(vec![Formula::not(a.clone()), b.clone()]),
                    Formula::Or(vec![Formula::not(b), a]),
                ])
            } else {
                Formula::And(vec![Formula::Or(vec![a.clone(), b.clone()]), Formula::Or(vec![Formula::not(a), Formula::not(b)])])
            };
            nnf(&g, true)
        }
        Formula::Forall(vs, b) | Formula::Exists(vs, b) => {
            let body = Box::new(nnf(b, pos));
            if matches!(f, Formula::Forall(..)) == pos {
                Formula::Forall(vs.clone(), body)
            } else {
                Formula::Exists(vs.clone(), body)
            }
        }
        Formula::Agg(a) => {
            let set = SetExpr { vars: a.set.vars.clone(), cond: Box::new(nnf(&a.set.cond, true)) };
            let prim = |cmp| Formula::Agg(Box::new(AggAtom { term: a.term.clone(), cmp, func: a.func, set: set.clone() }));
            let numeric = || match &a.term {
                Term::Var(_) => vec![Formula::Cmp(CmpOp::Le, a.term.clone(), a.term.clone())],
                _ => Vec::new(),
            };
            let g = match a.cmp {
                AggCmp::Ge | AggCmp::Le => prim(a.cmp),
                AggCmp::Lt => {
                    let mut parts = numeric();
                    parts.push(Formula::not(prim(AggCmp::Ge)));
                    Formula::and(parts)
                }
                AggCmp::Gt => {
                    let mut parts = numeric();
                    parts.push(Formula::not(prim(AggCmp::Le)));
                    Formula::and(parts)
                }
                AggCmp::Eq => Formula::And(vec![prim(AggCmp::Le), prim(AggCmp::Ge)]),
            };
            match (&g, pos) {
                (Formula::Agg(_), true) => g,
                (Formula::Agg(_), false) => Formula::not(g),
                _ => nnf(&g, pos),
            }
        }
    }
}

/// Constant folding, flattening and duplicate removal; logically equivalent
/// over non-empty domains.
pub fn simplify_formula(f: &Formula) -> Formula {
    match f {
        Formula::Not(x) => match simplify_formula(x) {
            Formula::True => Formula::False,
            Formula::False => Formula::True,
            Formula::Not(y) => *y,
            g => Formula::not(g),
        },
        Formula::And(xs) | Formula::Or(xs) => {
            let conj = matches!(f, Formula::And(_));
            let (unit, zero) = if conj { (Formula::True, Formula::False) } else { (Formula::False, Formula::True) };
            let mut out: Vec<Formula> = Vec::new();
            let push = |g: Formula, out: &mut Vec<Formula>| {
                if !out.contains(&g) {
                    out.push(g);
                }
            };
            for x in xs {
                let g = simplify_formula(x);
                if g == zero {
                    return zero;
                }
                if g == unit {
                    continue;
                }
                match g {
                    Formula::And(ys) if conj => ys.into_iter().for_each(|y| push(y, &mut out)),
                    Formula::Or(ys) if !conj => ys.into_iter().for_each(|y| push(y, &mut out)),
                    g => push(g, &mut out),
                }
            }
            match out.len() {
                0 => unit,
                1 => out.pop().unwrap(),
                _ if conj => Formula::And(out),
                _ => Formula::Or(out),
            }
        }
        Formula::Implies(a, b) => match (simplify_formula(a), simplify_formula(b)) {
            (Formula::False, _) | (_, Formula::True) => Formula::True,
            (Formula::True, b) => b,
            (a, Formula::False) => simplify_formula(&Formula::not(a)),
            (a, b) => Formula::implies(a, b),
        },
        Formula::Equiv(a, b) => match (simplify_formula(a), simplify_formula(b)) {
            (Formula::True, x) | (x, Formula::True) => x,
            (Formula::False, x) | (x, Formula::False) => simplify_formula(&Formula::not(x)),
            (a, b) => Formula::equiv(a, b),
        },
        Formula::Forall(vs, b) | Formula::Exists(vs, b) => {
            let universal = matches!(f, Formula::Forall(..));
            let body = simplify_formula(b);
            let (mut vars, body) = match body {
                Formula::Forall(ws, inner) if universal => (vs.iter().chain(&ws).cloned().collect::<Vec<_>>(), *inner),
                Formula::Exists(ws, inner) if !universal => (vs.iter().chain(&ws).cloned().collect::<Vec<_>>(), *inner),
                other => (vs.clone(), other),
            };
            let free = free_vars_ordered(&body);
            let mut seen = HashSet::new();
            vars.retain(|v| free.contains(v) && seen.insert(v.clone()));
            if universal {
                Formula::forall(vars, body)
            } else {
                Formula::exists(vars, body)
            }
        }
        Formula::Cmp(CmpOp::Eq, l, r) if l == r => Formula::True,
        Formula::Cmp(CmpOp::Ne, l, r) if l == r => Formula::False,
        Formula::Agg(a) => Formula::Agg(Box::new(AggAtom {
            term: a.term.clone(),
            cmp: a.cmp,
            func: a.func,
            set: SetExpr { vars: a.set.vars.clone(), cond: Box::new(simplify_formula(&a.set.cond)) },
        })),
        _ => f.clone(),
    }
}

// ---------------------------------------------------------------- ENF

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NormalizeOptions {
    /// Emit top-level universally quantified disjunctions as clauses
    /// instead of introducing an auxiliary predicate for the disjunction.
    pub clauses: bool,
}

impl Default for NormalizeOptions {
    fn default() -> Self {
        NormalizeOptions { clauses: false }
    }
}

/// An introduced predicate and the subformula it names.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxPredicate {
    pub name: String,
    pub vars: Vec<String>,
    pub source: Formula,
    /// Index of the input sentence it was introduced for.
    pub sentence: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormalizationResult {
    /// The input vocabulary without functions, plus graph and auxiliary predicates.
    pub vocabulary: Vocabulary,
    pub graphs: BTreeMap<String, String>,
    pub enf: Vec<EnfSentence>,
    pub aux: Vec<AuxPredicate>,
    /// Definitions, passed through (after function elimination).
    pub definitions: Vec<Definition>,
}

impl NormalizationResult {
    pub fn aux_names(&self) -> Vec<&str> {
        self.aux.iter().map(|a| a.name.as_str()).collect()
    }

    pub fn infs(&self) -> Vec<InfSentence> {
        self.enf.iter().flat_map(enf_to_inf).collect()
    }
}

struct EnfBuilder {
    taken: HashSet<String>,
    counter: usize,
    vocab: Vocabulary,
    aux: Vec<AuxPredicate>,
    out: Vec<EnfSentence>,
    sentence: usize,
}

struct Pending {
    vars: Vec<String>,
    head: Lit,
    body: Formula,
}

impl EnfBuilder {
    fn aux_for(&mut self, chi: &Formula) -> (Atom, Pending) {
        let name = loop {
            self.counter += 1;
            let n = format!("Aux{}", self.counter);
            if !self.taken.contains(&n) {
                break n;
            }
        };
        self.taken.insert(name.clone());
        let vars = free_vars_ordered(chi);
        self.vocab.add_predicate(name.clone(), vars.len());
        self.aux.push(AuxPredicate { name: name.clone(), vars: vars.clone(), source: chi.clone(), sentence: self.sentence });
        let atom = Atom::new(name, vars.iter().map(Term::var).collect());
        (atom.clone(), Pending { vars, head: Lit::pos(atom), body: chi.clone() })
    }

    /// A literal standing for `chi`, introducing an auxiliary when needed.
    fn literal(&mut self, chi: &Formula, todo: &mut Vec<Pending>) -> Lit {
        if let Some(l) = Lit::from_formula(chi) {
            return l;
        }
        if let Formula::Not(inner) = chi {
            if let Formula::Agg(_) = &**inner {
                let (a, p) = self.aux_for(inner);
                todo.push(p);
                return Lit::Atom { atom: a, positive: false };
            }
        }
        let (a, p) = self.aux_for(chi);
        todo.push(p);
        Lit::pos(a)
    }

    fn run(&mut self, first: Pending) {
        let mut stack = vec![first];
        while let Some(p) = stack.pop() {
            let mut todo = Vec::new();
            let body = match &p.body {
                Formula::And(xs) => EnfBody::And(xs.iter().map(|x| self.literal(x, &mut todo)).collect()),
                Formula::Or(xs) => EnfBody::Or(xs.iter().map(|x| self.literal(x, &mut todo)).collect()),
                Formula::Forall(vs, b) => EnfBody::Forall(vs.clone(), self.literal(b, &mut todo)),
                Formula::Exists(vs, b) => EnfBody::Exists(vs.clone(), self.literal(b, &mut todo)),
                Formula::Agg(a) => EnfBody::Agg {
                    term: a.term.clone(),
                    cmp: a.cmp,
                    func: a.func,
                    vars: a.set.vars.clone(),
                    cond: self.literal(&a.set.cond, &mut todo),
                },
                other => EnfBody::And(vec![self.literal(other, &mut todo)]),
            };
            self.out.push(EnfSentence { vars: p.vars, head: p.head, body });
            stack.extend(todo.into_iter().rev());
        }
    }
}

/// Recognizes `! xs : L <=> psi` with `L` a non-builtin literal over
/// exactly the distinct variables `xs`.
fn equivalence_shape(f: &Formula) -> Option<(Vec<String>, Lit, Formula)> {
    let (vars, body) = match f {
        Formula::Forall(vs, b) => (vs.clone(), &**b),
        other => (Vec::new(), other),
    };
    let Formula::Equiv(l, psi) = body else { return None };
    let lit = Lit::from_formula(l)?;
    let Lit::Atom { atom, .. } = &lit else { return None };
    let args: Vec<&str> = atom.args.iter().map(Term::as_var).collect::<Option<_>>()?;
    let distinct: HashSet<&str> = args.iter().copied().collect();
    let quantified: HashSet<&str> = vars.iter().map(String::as_str).collect();
    if distinct.len() != args.len() || distinct != quantified {
        return None;
    }
    if !free_vars_ordered(psi).iter().all(|v| quantified.contains(v.as_str())) {
        return None;
    }
    Some((args.iter().map(|s| s.to_string()).collect(), lit, (**psi).clone()))
}

/// Splits a negation-normal sentence into clause bodies `! xs : disjunction`.
fn clauses_of(vars: Vec<String>, f: Formula, out: &mut Vec<(Vec<String>, Formula)>) {
    match f {
        Formula::Forall(vs, b) => {
            let mut all = vars;
            all.extend(vs);
            clauses_of(all, *b, out);
        }
        Formula::And(xs) => {
            for x in xs {
                clauses_of(vars.clone(), x, out);
            }
        }
        other => {
            let free = free_vars_ordered(&other);
            let vars: Vec<String> = vars.into_iter().filter(|v| free.contains(v)).collect();
            let body = match other {
                Formula::Or(_) => other,
                g => Formula::Or(vec![g]),
            };
            out.push((vars, body));
        }
    }
}

/// Equivalence normal form of a function-free theory. Definitions are
/// passed through untouched.
pub fn to_enf(t: &Theory, opts: NormalizeOptions) -> NormalizationResult {
    let mut vocab = Vocabulary::new();
    for e in &t.elements {
        let fs: Vec<&Formula> = match e {
            TheoryElement::Sentence(f) => vec![f],
            TheoryElement::Definition(d) => d.rules.iter().map(|r| &r.body).collect(),
        };
        for f in fs {
            f.visit(&mut |g| {
                if let Formula::Atom(a) = g {
                    vocab.add_predicate(a.pred.clone(), a.args.len());
                }
            });
        }
        if let TheoryElement::Definition(d) = e {
            for r in &d.rules {
                vocab.add_predicate(r.head.pred.clone(), r.head.args.len());
            }
        }
    }
    to_enf_with(t, vocab, opts)
}

fn to_enf_with(t: &Theory, vocab: Vocabulary, opts: NormalizeOptions) -> NormalizationResult {
    let taken = vocab.predicates.iter().map(|s| s.name.clone()).collect();
    let mut b = EnfBuilder { taken, counter: 0, vocab, aux: Vec::new(), out: Vec::new(), sentence: 0 };
    let mut definitions = Vec::new();
    for (i, e) in t.elements.iter().enumerate() {
        b.sentence = i;
        match e {
            TheoryElement::Definition(d) => definitions.push(d.clone()),
            TheoryElement::Sentence(f) => {
                if let Some((vars, head, psi)) = equivalence_shape(f) {
                    b.run(Pending { vars, head, body: push_negations(&psi) });
                    continue;
                }
                let g = push_negations(f);
                if opts.clauses {
                    let mut cls = Vec::new();
                    clauses_of(Vec::new(), g, &mut cls);
                    for (vars, body) in cls {
                        b.run(Pending { vars, head: Lit::True, body });
                    }
                } else {
                    b.run(Pending { vars: Vec::new(), head: Lit::True, body: g });
                }
            }
        }
    }
    NormalizationResult { vocabulary: b.vocab, graphs: BTreeMap::new(), enf: b.out, aux: b.aux, definitions }
}

/// Full pipeline up to ENF: function elimination, then `to_enf`.
pub fn normalize(t: &Theory, v: &Vocabulary, opts: NormalizeOptions) -> NormalizationResult {
    let fe = eliminate_functions(t, v);
    let mut r = to_enf_with(&fe.theory, fe.vocabulary, opts);
    r.graphs = fe.graphs;
    r
}

/// INF sentences of all sentences of `t`; definitions are left out.
pub fn theory_to_inf(t: &Theory, v: &Vocabulary) -> (Vec<InfSentence>, NormalizationResult) {
    let r = normalize(t, v, NormalizeOptions::default());
    (r.infs(), r)
}

// ---------------------------------------------------------------- INF

/// Builds `! vars : parts => head`, keeping as head variables only those of
/// the head and closing the others existentially inside the guard.
fn row(vars: &[String], parts: Vec<Formula>, head: &Lit) -> InfSentence {
    let mut parts: Vec<Formula> = parts.into_iter().filter(|p| *p != Formula::True).collect();
    let head = match head {
        Lit::True => InfHead::Verum,
        Lit::False => InfHead::Falsum,
        Lit::Atom { atom, positive } => InfHead::Literal { atom: atom.clone(), positive: *positive },
        Lit::Cmp(op, l, r) => {
            parts.push(Formula::Cmp(op.complement(), l.clone(), r.clone()));
            InfHead::Falsum
        }
    };
    let head_f = head.to_formula();
    let head_vars = free_vars_ordered(&head_f);
    let keep: Vec<String> = vars.iter().filter(|v| head_vars.contains(v)).cloned().collect();
    let closed: Vec<String> = vars
        .iter()
        .filter(|v| !head_vars.contains(v) && parts.iter().any(|p| free_vars_ordered(p).contains(v)))
        .cloned()
        .collect();
    let guard = if parts.contains(&Formula::False) {
        Formula::False
    } else if closed.is_empty() {
        Formula::and(parts)
    } else {
        let (inner, outer): (Vec<Formula>, Vec<Formula>) =
            parts.into_iter().partition(|p| free_vars_ordered(p).iter().any(|v| closed.contains(v)));
        let mut out = outer;
        out.push(Formula::exists(closed, Formula::and(inner)));
        Formula::and(out)
    };
    InfSentence { vars: keep, guard, head }
}

fn fresh_vars(ys: &[String], avoid: &mut HashSet<String>) -> Vec<String> {
    ys.iter()
        .map(|y| {
            let z = fresh_var(y, avoid);
            avoid.insert(z.clone());
            z
        })
        .collect()
}

fn vars_differ(ys: &[String], zs: &[String]) -> Formula {
    Formula::or(ys.iter().zip(zs).map(|(y, z)| Formula::Cmp(CmpOp::Ne, Term::var(y), Term::var(z))).collect())
}

fn vars_equal(ys: &[String], zs: &[String]) -> Formula {
    Formula::and(ys.iter().zip(zs).map(|(y, z)| Formula::Cmp(CmpOp::Eq, Term::var(y), Term::var(z))).collect())
}

fn renaming(ys: &[String], zs: &[String]) -> HashMap<String, Term> {
    ys.iter().cloned().zip(zs.iter().map(Term::var)).collect()
}

/// The INF sentences equivalent to an ENF sentence.
pub fn enf_to_inf(e: &EnfSentence) -> Vec<InfSentence> {
    let x = &e.vars;
    let l = &e.head;
    let nl = l.negate();
    let mut avoid = all_variables(&e.to_formula());
    let f = Lit::to_formula;
    let mut out = Vec::new();
    match &e.body {
        EnfBody::And(ls) => {
            out.push(row(x, ls.iter().map(f).collect(), l));
            out.extend(ls.iter().map(|li| row(x, vec![li.negate().to_formula()], &nl)));
            out.extend(ls.iter().map(|li| row(x, vec![l.to_formula()], li)));
            for (i, li) in ls.iter().enumerate() {
                let mut parts = vec![nl.to_formula()];
                parts.extend(ls.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, lj)| lj.to_formula()));
                out.push(row(x, parts, &li.negate()));
            }
        }
        EnfBody::Or(ls) => {
            out.push(row(x, ls.iter().map(|li| li.negate().to_formula()).collect(), &nl));
            out.extend(ls.iter().map(|li| row(x, vec![li.to_formula()], l)));
            out.extend(ls.iter().map(|li| row(x, vec![nl.to_formula()], &li.negate())));
            for (i, li) in ls.iter().enumerate() {
                let mut parts = vec![l.to_formula()];
                parts.extend(ls.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, lj)| lj.negate().to_formula()));
                out.push(row(x, parts, li));
            }
        }
        EnfBody::Forall(ys, lp) | EnfBody::Exists(ys, lp) => {
            let universal = matches!(e.body, EnfBody::Forall(..));
            let xy: Vec<String> = x.iter().chain(ys).cloned().collect();
            let zs = fresh_vars(ys, &mut avoid);
            let others = lp.subst(&renaming(ys, &zs));
            if universal {
                out.push(row(x, vec![Formula::forall(ys.clone(), lp.to_formula())], l));
                out.push(row(x, vec![Formula::exists(ys.clone(), lp.negate().to_formula())], &nl));
                out.push(row(&xy, vec![l.to_formula()], lp));
                let rest = Formula::forall(zs.clone(), Formula::implies(vars_differ(ys, &zs), others.to_formula()));
                out.push(row(&xy, vec![nl.to_formula(), rest], &lp.negate()));
            } else {
                out.push(row(x, vec![Formula::forall(ys.clone(), lp.negate().to_formula())], &nl));
                out.push(row(x, vec![Formula::exists(ys.clone(), lp.to_formula())], l));
                out.push(row(&xy, vec![nl.to_formula()], &lp.negate()));
                let rest =
                    Formula::forall(zs.clone(), Formula::implies(vars_differ(ys, &zs), others.negate().to_formula()));
                out.push(row(&xy, vec![l.to_formula(), rest], lp));
            }
        }
        EnfBody::Agg { term, cmp, func, vars: ys, cond } => {
            let agg = |c: Formula| agg_formula(term, *cmp, *func, ys, c);
            let whole = agg(cond.to_formula());
            let yp = fresh_vars(ys, &mut avoid);
            let at = cond.subst(&renaming(ys, &yp));
            let without = agg(Formula::and(vec![vars_differ(ys, &yp), cond.to_formula()]));
            let with = agg(Formula::or(vec![vars_equal(ys, &yp), cond.to_formula()]));
            let xp: Vec<String> = x.iter().chain(&yp).cloned().collect();
            out.push(row(x, vec![whole.clone()], l));
            out.push(row(x, vec![Formula::not(whole)], &nl));
            out.push(row(&xp, vec![l.to_formula(), Formula::not(without.clone())], &at));
            out.push(row(&xp, vec![l.to_formula(), Formula::not(with.clone())], &at.negate()));
            out.push(row(&xp, vec![nl.to_formula(), without], &at));
            out.push(row(&xp, vec![nl.to_formula(), with], &at.negate()));
        }
    }
    out
}

/// Drops tautologies (true heads, false guards), exact duplicates and
/// sentences whose positive or negative head is already concluded
/// unconditionally for all arguments.
pub fn simplify_inf(v: &[InfSentence]) -> Vec<InfSentence> {
    let unconditional: HashSet<(String, bool)> = v
        .iter()
        .filter_map(|s| match &s.head {
            InfHead::Literal { atom, positive } if s.guard == Formula::True && distinct_vars(&atom.args) => {
                Some((atom.pred.clone(), *positive))
            }
            _ => None,
        })
        .collect();
    let mut out: Vec<InfSentence> = Vec::new();
    for s in v {
        let guard = simplify_formula(&s.guard);
        if guard == Formula::False || s.head == InfHead::Verum {
            continue;
        }
        if let InfHead::Literal { atom, positive } = &s.head {
            if guard != Formula::True && unconditional.contains(&(atom.pred.clone(), *positive)) {
                continue;
            }
        }
        let s = InfSentence { vars: s.vars.clone(), guard, head: s.head.clone() };
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

fn distinct_vars(args: &[Term]) -> bool {
    let mut seen = HashSet::new();
    args.iter().all(|t| t.as_var().is_some_and(|v| seen.insert(v)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{parse_formula, parse_theory};

    fn f(s: &str) -> Formula {
        parse_formula(s).unwrap()
    }

    const T1: &str = "
        ! x y : MutExcl(x,y) => ~(Selected(x) & Selected(y)).
        ? m : Module(m) & Selected(m).
        ! c : Course(c) & (? m : Module(m) & Selected(m) & In(c,m)) => Selected(c).";

    #[test]
    fn negation_pushing() {
        assert_eq!(push_negations(&f("~(P & ~Q)")), f("~P | Q"));
        assert_eq!(push_negations(&f("(P & Q) & R")), f("P & Q & R"));
        assert_eq!(push_negations(&f("~(! x : P(x))")), f("? x : ~P(x)"));
        assert_eq!(push_negations(&f("~(x = y)")), f("x ~= y"));
    }

    #[test]
    fn student_enf_matches_the_worked_example() {
        let t = parse_theory(T1).unwrap();
        let r = to_enf(&t, NormalizeOptions::default());
        let text: Vec<String> = r.enf.iter().map(|e| e.to_string()).collect();
        let expected = [
            "true <=> (! x y : Aux1(x,y)).",
            "! x y : Aux1(x,y) <=> ~MutExcl(x,y) | ~Selected(x) | ~Selected(y).",
            "true <=> (? m : Aux2(m)).",
            "! m : Aux2(m) <=> Module(m) & Selected(m).",
            "true <=> (! c : Aux3(c)).",
            "! c : Aux3(c) <=> ~Course(c) | Aux4(c) | Selected(c).",
            "! c : Aux4(c) <=> (! m : Aux5(m,c)).",
            "! m c : Aux5(m,c) <=> ~Module(m) | ~Selected(m) | ~In(c,m).",
        ];
        assert_eq!(text, expected);
        assert_eq!(r.aux_names(), ["Aux1", "Aux2", "Aux3", "Aux4", "Aux5"]);
    }

    #[test]
    fn already_enf_is_kept() {
        let t = Theory::from_sentences([f("! x : P(x) <=> Q(x) & R(x)")]);
        let r = to_enf(&t, NormalizeOptions::default());
        assert_eq!(r.enf.len(), 1);
        assert!(r.aux.is_empty());
        assert_eq!(r.enf[0].body, EnfBody::And(vec![Lit::pos(Atom::over("Q", &["x"])), Lit::pos(Atom::over("R", &["x"]))]));
    }

    #[test]
    fn table_row_counts() {
        let e = to_enf(&Theory::from_sentences([f("! x : L(x) <=> A(x) & B(x)")]), NormalizeOptions::default());
        assert_eq!(enf_to_inf(&e.enf[0]).len(), 7);
        let e = to_enf(&Theory::from_sentences([f("! x : L(x) <=> A(x)")]), NormalizeOptions::default());
        let rows: Vec<String> = enf_to_inf(&e.enf[0]).iter().map(|s| s.to_string()).collect();
        assert_eq!(rows, ["! x : A(x) => L(x).", "! x : ~A(x) => ~L(x).", "! x : L(x) => A(x).", "! x : ~L(x) => ~A(x)."]);
        let e = to_enf(&Theory::from_sentences([f("! z : H(z) <=> z >= card{ x : P(x) }")]), NormalizeOptions::default());
        assert_eq!(enf_to_inf(&e.enf[0]).len(), 6);
    }

    #[test]
    fn constants_become_graph_predicates() {
        let mut v = Vocabulary::with_predicates([("Selected", 1)]);
        v.add_function("C", 0);
        let t = Theory::from_sentences([Formula::Atom(Atom::new("Selected", vec![Term::App("C".into(), vec![])]))]);
        let fe = eliminate_functions(&t, &v);
        let text: Vec<String> = fe.theory.sentences().map(|s| s.to_string()).collect();
        assert_eq!(text, ["? y : P_C(y)", "! y1 y2 : P_C(y1) & P_C(y2) => y1 = y2", "! x : P_C(x) => Selected(x)"]);
        assert!(fe.vocabulary.functions.is_empty());
        assert_eq!(fe.graphs["C"], "P_C");
    }

    #[test]
    fn inf_simplification() {
        let t = parse_theory(T1).unwrap();
        let (infs, _) = theory_to_inf(&t, &Vocabulary::new());
        let simple = simplify_inf(&infs);
        assert!(simple.len() < infs.len());
        assert!(simple.iter().all(|s| s.head != InfHead::Verum && s.guard != Formula::False));
        let aux1: Vec<&InfSentence> = simple.iter().filter(|s| matches!(&s.head, InfHead::Literal { atom, positive: true } if atom.pred == "Aux1")).collect();
        assert_eq!(aux1.len(), 1);
        assert_eq!(aux1[0].guard, Formula::True);
    }

    #[test]
    fn clause_mode_skips_the_outer_auxiliary() {
        let t = parse_theory("! x y : ~M(x,y) | ~S(x) | ~S(y).").unwrap();
        let r = to_enf(&t, NormalizeOptions { clauses: true });
        assert!(r.aux.is_empty());
        let rows = simplify_inf(&r.infs());
        let text: Vec<String> = rows.iter().map(|s| s.to_string()).collect();
        assert!(text.contains(&"! x y : S(x) & S(y) => ~M(x,y).".to_string()), "{text:?}");
        assert_eq!(rows.len(), 4);
    }
}
