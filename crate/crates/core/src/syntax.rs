//! Abstract syntax: vocabularies, terms, formulas, definitions, theories and
//! queries, together with variable bookkeeping and capture-avoiding
//! substitution.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use thiserror::Error;

/// A predicate or function symbol with its arity.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Symbol {
    pub name: String,
    pub arity: usize,
}

impl Symbol {
    pub fn new(name: impl Into<String>, arity: usize) -> Self {
        Symbol { name: name.into(), arity }
    }
}

/// Interpreted comparison builtins. `Nlt` and `Nle` are the complements of
/// `Lt` and `Le`; they only arise from the ct/cf transform.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Nlt,
    Nle,
}

impl CmpOp {
    pub fn complement(self) -> CmpOp {
        match self {
            CmpOp::Eq => CmpOp::Ne,
            CmpOp::Ne => CmpOp::Eq,
            CmpOp::Lt => CmpOp::Nlt,
            CmpOp::Nlt => CmpOp::Lt,
            CmpOp::Le => CmpOp::Nle,
            CmpOp::Nle => CmpOp::Le,
        }
    }
}

/// The builtin predicates every vocabulary carries. They are interpreted,
/// never stored in a structure and never declared by the user.
pub const BUILTINS: [(&str, usize); 3] = [("=", 2), ("<", 2), ("=<", 2)];

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    pub predicates: Vec<Symbol>,
    pub functions: Vec<Symbol>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_predicates<'a>(preds: impl IntoIterator<Item = (&'a str, usize)>) -> Self {
        let mut v = Vocabulary::new();
        for (n, a) in preds {
            v.add_predicate(n, a);
        }
        v
    }

    pub fn predicate(&self, name: &str) -> Option<&Symbol> {
        self.predicates.iter().find(|s| s.name == name)
    }

    pub fn function(&self, name: &str) -> Option<&Symbol> {
        self.functions.iter().find(|s| s.name == name)
    }

    /// Adds a predicate unless one with the same name exists.
    pub fn add_predicate(&mut self, name: impl Into<String>, arity: usize) {
        let name = name.into();
        if self.predicate(&name).is_none() {
            self.predicates.push(Symbol { name, arity });
        }
    }

    pub fn add_function(&mut self, name: impl Into<String>, arity: usize) {
        let name = name.into();
        if self.function(&name).is_none() {
            self.functions.push(Symbol { name, arity });
        }
    }

    pub fn is_builtin(name: &str) -> bool {
        BUILTINS.iter().any(|(n, _)| *n == name)
    }

    pub fn max_arity(&self) -> usize {
        self.predicates.iter().map(|s| s.arity).max().unwrap_or(0)
    }

    /// The tf-vocabulary: `P_ct` and `P_cf` for every predicate `P`.
    pub fn tf_vocabulary(&self) -> Vocabulary {
        let mut v = Vocabulary::new();
        for p in &self.predicates {
            v.add_predicate(tf_name(&p.name, Polarity::Ct), p.arity);
            v.add_predicate(tf_name(&p.name, Polarity::Cf), p.arity);
        }
        v
    }
}

/// Which half of the tf-encoding a tf-predicate stands for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Ct,
    Cf,
}

impl Polarity {
    pub fn flip(self) -> Polarity {
        match self {
            Polarity::Ct => Polarity::Cf,
            Polarity::Cf => Polarity::Ct,
        }
    }
}

pub fn tf_name(pred: &str, pol: Polarity) -> String {
    match pol {
        Polarity::Ct => format!("{pred}_ct"),
        Polarity::Cf => format!("{pred}_cf"),
    }
}

/// Splits `P_ct` / `P_cf` into the base name and polarity.
pub fn split_tf_name(name: &str) -> Option<(&str, Polarity)> {
    if let Some(b) = name.strip_suffix("_ct") {
        Some((b, Polarity::Ct))
    } else {
        name.strip_suffix("_cf").map(|b| (b, Polarity::Cf))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Term {
    Var(String),
    App(String, Vec<Term>),
    Num(f64),
}

impl Term {
    pub fn var(name: impl Into<String>) -> Term {
        Term::Var(name.into())
    }

    pub fn as_var(&self) -> Option<&str> {
        match self {
            Term::Var(v) => Some(v),
            _ => None,
        }
    }

    pub fn has_function(&self) -> bool {
        matches!(self, Term::App(..))
    }

    fn collect_vars(&self, out: &mut Vec<String>) {
        match self {
            Term::Var(v) => {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
            Term::App(_, args) => args.iter().for_each(|a| a.collect_vars(out)),
            Term::Num(_) => {}
        }
    }

    pub fn vars(&self) -> Vec<String> {
        let mut v = Vec::new();
        self.collect_vars(&mut v);
        v
    }

    /// Replaces the variables `from` by `to` position-wise.
    pub fn substitute_vars(&self, from: &[String], to: &[Term]) -> Term {
        let map: HashMap<String, Term> = from.iter().cloned().zip(to.iter().cloned()).collect();
        self.subst(&map)
    }

    fn subst(&self, map: &HashMap<String, Term>) -> Term {
        match self {
            Term::Var(v) => map.get(v).cloned().unwrap_or_else(|| self.clone()),
            Term::App(f, args) => Term::App(f.clone(), args.iter().map(|a| a.subst(map)).collect()),
            Term::Num(_) => self.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub pred: String,
    pub args: Vec<Term>,
}

impl Atom {
    pub fn new(pred: impl Into<String>, args: Vec<Term>) -> Atom {
        Atom { pred: pred.into(), args }
    }

    /// Atom over plain variables.
    pub fn over(pred: impl Into<String>, vars: &[&str]) -> Atom {
        Atom::new(pred, vars.iter().map(|v| Term::var(*v)).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AggFn {
    Card,
    Sum,
    Prod,
    Min,
    Max,
}

impl AggFn {
    pub const ALL: [AggFn; 5] = [AggFn::Card, AggFn::Sum, AggFn::Prod, AggFn::Min, AggFn::Max];

    pub fn name(self) -> &'static str {
        match self {
            AggFn::Card => "card",
            AggFn::Sum => "sum",
            AggFn::Prod => "prod",
            AggFn::Min => "min",
            AggFn::Max => "max",
        }
    }

    pub fn from_name(s: &str) -> Option<AggFn> {
        AggFn::ALL.into_iter().find(|f| f.name() == s)
    }
}

/// Comparison between a term and an aggregate: `term cmp agg(set)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AggCmp {
    Ge,
    Le,
    Gt,
    Lt,
    Eq,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SetExpr {
    pub vars: Vec<String>,
    pub cond: Box<Formula>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggAtom {
    pub term: Term,
    pub cmp: AggCmp,
    pub func: AggFn,
    pub set: SetExpr,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Formula {
    True,
    False,
    Atom(Atom),
    Cmp(CmpOp, Term, Term),
    Agg(Box<AggAtom>),
    Not(Box<Formula>),
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    Equiv(Box<Formula>, Box<Formula>),
    Forall(Vec<String>, Box<Formula>),
    Exists(Vec<String>, Box<Formula>),
}

impl Formula {
    pub fn atom(pred: impl Into<String>, vars: &[&str]) -> Formula {
        Formula::Atom(Atom::over(pred, vars))
    }

    pub fn not(f: Formula) -> Formula {
        Formula::Not(Box::new(f))
    }

    pub fn implies(a: Formula, b: Formula) -> Formula {
        Formula::Implies(Box::new(a), Box::new(b))
    }

    pub fn equiv(a: Formula, b: Formula) -> Formula {
        Formula::Equiv(Box::new(a), Box::new(b))
    }

    pub fn forall(vars: Vec<String>, body: Formula) -> Formula {
        if vars.is_empty() {
            body
        } else {
            Formula::Forall(vars, Box::new(body))
        }
    }

    pub fn exists(vars: Vec<String>, body: Formula) -> Formula {
        if vars.is_empty() {
            body
        } else {
            Formula::Exists(vars, Box::new(body))
        }
    }

    /// Conjunction that collapses the trivial cases.
    pub fn and(mut parts: Vec<Formula>) -> Formula {
        match parts.len() {
            0 => Formula::True,
            1 => parts.pop().unwrap(),
            _ => Formula::And(parts),
        }
    }

    pub fn or(mut parts: Vec<Formula>) -> Formula {
        match parts.len() {
            0 => Formula::False,
            1 => parts.pop().unwrap(),
            _ => Formula::Or(parts),
        }
    }

    pub fn is_literal(&self) -> bool {
        match self {
            Formula::True | Formula::False | Formula::Atom(_) | Formula::Cmp(..) => true,
            Formula::Not(inner) => matches!(**inner, Formula::Atom(_) | Formula::Cmp(..) | Formula::True | Formula::False),
            _ => false,
        }
    }

    pub fn contains_aggregate(&self) -> bool {
        let mut found = false;
        self.visit(&mut |f| {
            if matches!(f, Formula::Agg(_)) {
                found = true;
            }
        });
        found
    }

    pub fn contains_function(&self) -> bool {
        let mut found = false;
        self.visit_terms(&mut |t| {
            if t.has_function() {
                found = true;
            }
        });
        found
    }

    /// Pre-order traversal over subformulas, including set-expression bodies.
    pub fn visit(&self, f: &mut dyn FnMut(&Formula)) {
        f(self);
        match self {
            Formula::Not(a) | Formula::Forall(_, a) | Formula::Exists(_, a) => a.visit(f),
            Formula::And(xs) | Formula::Or(xs) => xs.iter().for_each(|x| x.visit(f)),
            Formula::Implies(a, b) | Formula::Equiv(a, b) => {
                a.visit(f);
                b.visit(f)
            }
            Formula::Agg(a) => a.set.cond.visit(f),
            _ => {}
        }
    }

    pub fn visit_terms(&self, f: &mut dyn FnMut(&Term)) {
        fn walk(t: &Term, f: &mut dyn FnMut(&Term)) {
            f(t);
            if let Term::App(_, args) = t {
                args.iter().for_each(|a| walk(a, f));
            }
        }
        self.visit(&mut |g| match g {
            Formula::Atom(a) => a.args.iter().for_each(|t| walk(t, f)),
            Formula::Cmp(_, l, r) => {
                walk(l, f);
                walk(r, f)
            }
            Formula::Agg(a) => walk(&a.term, f),
            _ => {}
        });
    }

    /// Predicate names occurring in atoms, in first-occurrence order.
    pub fn predicates(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        self.visit(&mut |g| {
            if let Formula::Atom(a) = g {
                if !out.contains(&a.pred) {
                    out.push(a.pred.clone());
                }
            }
        });
        out
    }

    /// Number of nodes, counting terms as one.
    pub fn size(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_| n += 1);
        n
    }
}

/// Free variables in first-occurrence order.
pub fn free_vars_ordered(f: &Formula) -> Vec<String> {
    fn go(f: &Formula, bound: &mut Vec<String>, out: &mut Vec<String>) {
        let push_term = |t: &Term, bound: &Vec<String>, out: &mut Vec<String>| {
            for v in t.vars() {
                if !bound.contains(&v) && !out.contains(&v) {
                    out.push(v);
                }
            }
        };
        match f {
            Formula::True | Formula::False => {}
            Formula::Atom(a) => a.args.iter().for_each(|t| push_term(t, bound, out)),
            Formula::Cmp(_, l, r) => {
                push_term(l, bound, out);
                push_term(r, bound, out);
            }
            Formula::Agg(a) => {
                push_term(&a.term, bound, out);
                let n = bound.len();
                bound.extend(a.set.vars.iter().cloned());
                go(&a.set.cond, bound, out);
                bound.truncate(n);
            }
            Formula::Not(a) => go(a, bound, out),
            Formula::And(xs) | Formula::Or(xs) => xs.iter().for_each(|x| go(x, bound, out)),
            Formula::Implies(a, b) | Formula::Equiv(a, b) => {
                go(a, bound, out);
                go(b, bound, out);
            }
            Formula::Forall(vs, body) | Formula::Exists(vs, body) => {
                let n = bound.len();
                bound.extend(vs.iter().cloned());
                go(body, bound, out);
                bound.truncate(n);
            }
        }
    }
    let mut out = Vec::new();
    go(f, &mut Vec::new(), &mut out);
    out
}

pub fn free_variables(f: &Formula) -> BTreeSet<String> {
    free_vars_ordered(f).into_iter().collect()
}

/// Every variable name occurring anywhere, bound or free.
pub fn all_variables(f: &Formula) -> HashSet<String> {
    let mut out = HashSet::new();
    f.visit(&mut |g| match g {
        Formula::Forall(vs, _) | Formula::Exists(vs, _) => out.extend(vs.iter().cloned()),
        Formula::Agg(a) => out.extend(a.set.vars.iter().cloned()),
        _ => {}
    });
    f.visit_terms(&mut |t| {
        if let Term::Var(v) = t {
            out.insert(v.clone());
        }
    });
    out
}

/// A variant of `base` (by appending primes) that is not in `avoid`.
pub fn fresh_var(base: &str, avoid: &HashSet<String>) -> String {
    let mut name = format!("{base}'");
    while avoid.contains(&name) {
        name.push('\'');
    }
    name
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SubstError {
    #[error("substitution has {vars} variables but {terms} terms")]
    LengthMismatch { vars: usize, terms: usize },
}

/// Simultaneous capture-avoiding substitution of `terms` for the free
/// occurrences of `vars`.
pub fn substitute(f: &Formula, vars: &[String], terms: &[Term]) -> Result<Formula, SubstError> {
    if vars.len() != terms.len() {
        return Err(SubstError::LengthMismatch { vars: vars.len(), terms: terms.len() });
    }
    let map: HashMap<String, Term> = vars.iter().cloned().zip(terms.iter().cloned()).collect();
    Ok(subst_map(f, &map))
}

/// Renames free variables (`vars[i]` becomes `to[i]`).
pub fn rename(f: &Formula, vars: &[String], to: &[String]) -> Formula {
    let terms: Vec<Term> = to.iter().map(|v| Term::Var(v.clone())).collect();
    substitute(f, vars, &terms).expect("rename with equal lengths")
}

pub fn subst_map(f: &Formula, map: &HashMap<String, Term>) -> Formula {
    if map.is_empty() {
        return f.clone();
    }
    match f {
        Formula::True | Formula::False => f.clone(),
        Formula::Atom(a) => Formula::Atom(Atom {
            pred: a.pred.clone(),
            args: a.args.iter().map(|t| t.subst(map)).collect(),
        }),
        Formula::Cmp(op, l, r) => Formula::Cmp(*op, l.subst(map), r.subst(map)),
        Formula::Not(a) => Formula::not(subst_map(a, map)),
        Formula::And(xs) => Formula::And(xs.iter().map(|x| subst_map(x, map)).collect()),
        Formula::Or(xs) => Formula::Or(xs.iter().map(|x| subst_map(x, map)).collect()),
        Formula::Implies(a, b) => Formula::implies(subst_map(a, map), subst_map(b, map)),
        Formula::Equiv(a, b) => Formula::equiv(subst_map(a, map), subst_map(b, map)),
        Formula::Forall(vs, body) => {
            let (vs, body) = subst_binder(vs, body, map);
            Formula::Forall(vs, Box::new(body))
        }
        Formula::Exists(vs, body) => {
            let (vs, body) = subst_binder(vs, body, map);
            Formula::Exists(vs, Box::new(body))
        }
        Formula::Agg(a) => {
            let term = a.term.subst(map);
            let (vars, cond) = subst_binder(&a.set.vars, &a.set.cond, map);
            Formula::Agg(Box::new(AggAtom {
                term,
                cmp: a.cmp,
                func: a.func,
                set: SetExpr { vars, cond: Box::new(cond) },
            }))
        }
    }
}

fn subst_binder(vs: &[String], body: &Formula, map: &HashMap<String, Term>) -> (Vec<String>, Formula) {
    let body_free = free_variables(body);
    let mut inner: HashMap<String, Term> = map
        .iter()
        .filter(|(k, _)| !vs.contains(k) && body_free.contains(*k))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    if inner.is_empty() {
        return (vs.to_vec(), body.clone());
    }
    let incoming: HashSet<String> = inner.values().flat_map(|t| t.vars()).collect();
    let mut avoid: HashSet<String> = all_variables(body);
    avoid.extend(incoming.iter().cloned());
    avoid.extend(inner.keys().cloned());
    let mut new_vs = Vec::with_capacity(vs.len());
    for v in vs {
        if incoming.contains(v) {
            let nv = fresh_var(v, &avoid);
            avoid.insert(nv.clone());
            inner.insert(v.clone(), Term::Var(nv.clone()));
            new_vs.push(nv);
        } else {
            new_vs.push(v.clone());
        }
    }
    (new_vs, subst_map(body, &inner))
}

/// Alpha-equivalence: equal up to consistent renaming of bound variables.
pub fn alpha_eq(a: &Formula, b: &Formula) -> bool {
    fn term_eq(a: &Term, b: &Term, env: &[(String, String)]) -> bool {
        match (a, b) {
            (Term::Var(x), Term::Var(y)) => {
                let lx = env.iter().rev().find(|(l, _)| l == x);
                let ly = env.iter().rev().find(|(_, r)| r == y);
                match (lx, ly) {
                    (Some((_, r)), Some((l, _))) => r == y && l == x,
                    (None, None) => x == y,
                    _ => false,
                }
            }
            (Term::App(f, xs), Term::App(g, ys)) => {
                f == g && xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| term_eq(x, y, env))
            }
            (Term::Num(x), Term::Num(y)) => x == y,
            _ => false,
        }
    }
    fn go(a: &Formula, b: &Formula, env: &mut Vec<(String, String)>) -> bool {
        match (a, b) {
            (Formula::True, Formula::True) | (Formula::False, Formula::False) => true,
            (Formula::Atom(x), Formula::Atom(y)) => {
                x.pred == y.pred
                    && x.args.len() == y.args.len()
                    && x.args.iter().zip(&y.args).all(|(s, t)| term_eq(s, t, env))
            }
            (Formula::Cmp(o1, l1, r1), Formula::Cmp(o2, l2, r2)) => {
                o1 == o2 && term_eq(l1, l2, env) && term_eq(r1, r2, env)
            }
            (Formula::Not(x), Formula::Not(y)) => go(x, y, env),
            (Formula::And(xs), Formula::And(ys)) | (Formula::Or(xs), Formula::Or(ys)) => {
                xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| go(x, y, env))
            }
            (Formula::Implies(a1, b1), Formula::Implies(a2, b2))
            | (Formula::Equiv(a1, b1), Formula::Equiv(a2, b2)) => go(a1, a2, env) && go(b1, b2, env),
            (Formula::Forall(v1, x), Formula::Forall(v2, y)) | (Formula::Exists(v1, x), Formula::Exists(v2, y)) => {
                if v1.len() != v2.len() {
                    return false;
                }
                let n = env.len();
                env.extend(v1.iter().cloned().zip(v2.iter().cloned()));
                let r = go(x, y, env);
                env.truncate(n);
                r
            }
            (Formula::Agg(x), Formula::Agg(y)) => {
                if x.cmp != y.cmp || x.func != y.func || !term_eq(&x.term, &y.term, env) {
                    return false;
                }
                if x.set.vars.len() != y.set.vars.len() {
                    return false;
                }
                let n = env.len();
                env.extend(x.set.vars.iter().cloned().zip(y.set.vars.iter().cloned()));
                let r = go(&x.set.cond, &y.set.cond, env);
                env.truncate(n);
                r
            }
            _ => false,
        }
    }
    go(a, b, &mut Vec::new())
}

/// A rule `∀ vars (head ← body)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Rule {
    pub vars: Vec<String>,
    pub head: Atom,
    pub body: Formula,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Definition {
    pub rules: Vec<Rule>,
}

impl Definition {
    /// Defined predicates in first-occurrence order.
    pub fn defined(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rules {
            if !out.contains(&r.head.pred) {
                out.push(r.head.pred.clone());
            }
        }
        out
    }

    /// Predicates occurring in bodies that are not defined here.
    pub fn open(&self) -> Vec<String> {
        let def = self.defined();
        let mut out: Vec<String> = Vec::new();
        for r in &self.rules {
            for p in r.body.predicates() {
                if !def.contains(&p) && !out.contains(&p) {
                    out.push(p);
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TheoryElement {
    Sentence(Formula),
    Definition(Definition),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Theory {
    pub elements: Vec<TheoryElement>,
}

impl Theory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_sentences(fs: impl IntoIterator<Item = Formula>) -> Theory {
        Theory { elements: fs.into_iter().map(TheoryElement::Sentence).collect() }
    }

    pub fn sentences(&self) -> impl Iterator<Item = &Formula> {
        self.elements.iter().filter_map(|e| match e {
            TheoryElement::Sentence(f) => Some(f),
            _ => None,
        })
    }

    pub fn definitions(&self) -> impl Iterator<Item = &Definition> {
        self.elements.iter().filter_map(|e| match e {
            TheoryElement::Definition(d) => Some(d),
            _ => None,
        })
    }

    pub fn push(&mut self, f: Formula) {
        self.elements.push(TheoryElement::Sentence(f));
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }
}

/// A query `{ vars | body }`.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryDef {
    pub vars: Vec<String>,
    pub body: Formula,
}

impl QueryDef {
    pub fn new(vars: Vec<String>, body: Formula) -> Self {
        QueryDef { vars, body }
    }

    /// The body with its head variables renamed to `to`.
    pub fn instantiate(&self, to: &[Term]) -> Formula {
        substitute(&self.body, &self.vars, to).expect("query arity")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Issue {
    UnknownSymbol { name: String },
    ArityMismatch { name: String, expected: usize, found: usize },
    UnboundVariable { name: String },
    FunctionAsPredicate { name: String },
    PredicateAsFunction { name: String },
    DuplicateSetVariable { name: String },
    RuleHeadNotVariable { pred: String },
    RuleHeadBuiltin { pred: String },
    RuleFreeBodyVariable { pred: String, var: String },
    QueryFreeVariable { var: String },
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Issue::UnknownSymbol { name } => write!(f, "unknown symbol `{name}`"),
            Issue::ArityMismatch { name, expected, found } => {
                write!(f, "`{name}` has arity {expected} but is used with {found} arguments")
            }
            Issue::UnboundVariable { name } => write!(f, "variable `{name}` is not bound"),
            Issue::FunctionAsPredicate { name } => write!(f, "function `{name}` used as a predicate"),
            Issue::PredicateAsFunction { name } => write!(f, "predicate `{name}` used as a function"),
            Issue::DuplicateSetVariable { name } => write!(f, "set expression binds `{name}` twice"),
            Issue::RuleHeadNotVariable { pred } => {
                write!(f, "rule for `{pred}` must have distinct variables in its head")
            }
            Issue::RuleHeadBuiltin { pred } => write!(f, "builtin `{pred}` cannot be defined"),
            Issue::RuleFreeBodyVariable { pred, var } => {
                write!(f, "rule for `{pred}` has body variable `{var}` that is not in its head")
            }
            Issue::QueryFreeVariable { var } => write!(f, "query body variable `{var}` is not a head variable"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }

    fn add(&mut self, i: Issue) {
        if !self.issues.contains(&i) {
            self.issues.push(i);
        }
    }
}

fn check_term(t: &Term, v: &Vocabulary, report: &mut ValidationReport) {
    match t {
        Term::Var(_) | Term::Num(_) => {}
        Term::App(name, args) => {
            match v.function(name) {
                Some(s) if s.arity != args.len() => report.add(Issue::ArityMismatch {
                    name: name.clone(),
                    expected: s.arity,
                    found: args.len(),
                }),
                Some(_) => {}
                None if v.predicate(name).is_some() => {
                    report.add(Issue::PredicateAsFunction { name: name.clone() })
                }
                None => report.add(Issue::UnknownSymbol { name: name.clone() }),
            }
            args.iter().for_each(|a| check_term(a, v, report));
        }
    }
}

fn check_formula(f: &Formula, v: &Vocabulary, report: &mut ValidationReport) {
    f.visit(&mut |g| match g {
        Formula::Atom(a) => match v.predicate(&a.pred) {
            Some(s) if s.arity != a.args.len() => report.add(Issue::ArityMismatch {
                name: a.pred.clone(),
                expected: s.arity,
                found: a.args.len(),
            }),
            Some(_) => {}
            None if v.function(&a.pred).is_some() => {
                report.add(Issue::FunctionAsPredicate { name: a.pred.clone() })
            }
            None => report.add(Issue::UnknownSymbol { name: a.pred.clone() }),
        },
        Formula::Agg(a) => {
            let mut seen = HashSet::new();
            for x in &a.set.vars {
                if !seen.insert(x) {
                    report.add(Issue::DuplicateSetVariable { name: x.clone() });
                }
            }
        }
        _ => {}
    });
    f.visit_terms(&mut |t| {
        if let Term::App(..) = t {
            check_term(t, v, report)
        }
    });
}

/// Checks a theory against a vocabulary.
pub fn validate(t: &Theory, v: &Vocabulary) -> ValidationReport {
    let mut report = ValidationReport::default();
    for el in &t.elements {
        match el {
            TheoryElement::Sentence(f) => {
                check_formula(f, v, &mut report);
                for x in free_vars_ordered(f) {
                    report.add(Issue::UnboundVariable { name: x });
                }
            }
            TheoryElement::Definition(d) => {
                for r in &d.rules {
                    validate_rule(r, v, &mut report);
                }
            }
        }
    }
    report
}

fn validate_rule(r: &Rule, v: &Vocabulary, report: &mut ValidationReport) {
    let pred = r.head.pred.clone();
    if Vocabulary::is_builtin(&pred) {
        report.add(Issue::RuleHeadBuiltin { pred: pred.clone() });
    }
    check_formula(&Formula::Atom(r.head.clone()), v, report);
    check_formula(&r.body, v, report);
    let mut head_vars: Vec<String> = Vec::new();
    for a in &r.head.args {
        match a {
            Term::Var(x) if !head_vars.contains(x) && r.vars.contains(x) => head_vars.push(x.clone()),
            _ => report.add(Issue::RuleHeadNotVariable { pred: pred.clone() }),
        }
    }
    for x in free_vars_ordered(&r.body) {
        if !head_vars.contains(&x) {
            if r.vars.contains(&x) {
                report.add(Issue::RuleFreeBodyVariable { pred: pred.clone(), var: x });
            } else {
                report.add(Issue::UnboundVariable { name: x });
            }
        }
    }
}

/// Checks a query against a vocabulary.
pub fn validate_query(q: &QueryDef, v: &Vocabulary) -> ValidationReport {
    let mut report = ValidationReport::default();
    check_formula(&q.body, v, &mut report);
    for x in free_vars_ordered(&q.body) {
        if !q.vars.contains(&x) {
            report.add(Issue::QueryFreeVariable { var: x });
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &str) -> Term {
        Term::var(x)
    }

    #[test]
    fn free_variables_of_mixed_formula() {
        let f = Formula::And(vec![
            Formula::atom("P", &["x"]),
            Formula::exists(vec!["y".into()], Formula::atom("Q", &["x", "y"])),
        ]);
        assert_eq!(free_vars_ordered(&f), vec!["x".to_string()]);
        let closed = Formula::forall(vec!["x".into()], Formula::atom("P", &["x"]));
        assert!(free_variables(&closed).is_empty());
        let agg = Formula::Agg(Box::new(AggAtom {
            term: v("z"),
            cmp: AggCmp::Ge,
            func: AggFn::Card,
            set: SetExpr { vars: vec!["x".into()], cond: Box::new(Formula::atom("R", &["x", "w"])) },
        }));
        assert_eq!(free_vars_ordered(&agg), vec!["z".to_string(), "w".to_string()]);
    }

    #[test]
    fn substitution_leaves_bound_occurrences() {
        let f = Formula::Or(vec![
            Formula::atom("P", &["x"]),
            Formula::exists(vec!["x".into()], Formula::atom("Q", &["x"])),
        ]);
        let c = Term::App("c".into(), vec![]);
        let g = substitute(&f, &["x".into()], &[c.clone()]).unwrap();
        let expected = Formula::Or(vec![
            Formula::Atom(Atom::new("P", vec![c])),
            Formula::exists(vec!["x".into()], Formula::atom("Q", &["x"])),
        ]);
        assert_eq!(g, expected);
    }

    #[test]
    fn substitution_pairs_and_capture() {
        let f = Formula::Cmp(CmpOp::Eq, v("x"), v("y"));
        let a = Term::App("a".into(), vec![]);
        let g = substitute(&f, &["x".into(), "y".into()], &[a.clone(), a.clone()]).unwrap();
        assert_eq!(g, Formula::Cmp(CmpOp::Eq, a.clone(), a));

        let f = Formula::exists(vec!["y".into()], Formula::atom("R", &["x", "y"]));
        let g = substitute(&f, &["x".into()], &[v("y")]).unwrap();
        let expected = Formula::exists(vec!["y'".into()], Formula::atom("R", &["y", "y'"]));
        assert_eq!(g, expected);
        assert_eq!(
            substitute(&f, &["x".into()], &[]),
            Err(SubstError::LengthMismatch { vars: 1, terms: 0 })
        );
    }

    #[test]
    fn alpha_equivalence() {
        let a = Formula::forall(vec!["x".into()], Formula::atom("P", &["x", "z"]));
        let b = Formula::forall(vec!["y".into()], Formula::atom("P", &["y", "z"]));
        let c = Formula::forall(vec!["z".into()], Formula::atom("P", &["z", "z"]));
        assert!(alpha_eq(&a, &b));
        assert!(!alpha_eq(&a, &c));
    }

    #[test]
    fn validation_reports() {
        let voc = Vocabulary::with_predicates([("P", 2), ("Q", 1)]);
        let bad = Theory::from_sentences([Formula::forall(vec!["x".into()], Formula::atom("P", &["x"]))]);
        assert!(matches!(validate(&bad, &voc).issues[0], Issue::ArityMismatch { .. }));
        let good = Theory::from_sentences([Formula::forall(vec!["x".into()], Formula::atom("Q", &["x"]))]);
        assert!(validate(&good, &voc).is_ok());
        let rule = Rule {
            vars: vec!["x".into(), "y".into()],
            head: Atom::over("Q", &["x"]),
            body: Formula::atom("P", &["x", "y"]),
        };
        let t = Theory { elements: vec![TheoryElement::Definition(Definition { rules: vec![rule] })] };
        assert!(matches!(validate(&t, &voc).issues[0], Issue::RuleFreeBodyVariable { .. }));
    }
}
