//! Finite domains, four-valued structures, evaluation (including aggregate
//! bounds), the tf-encoding and the ct/cf formula transform.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use rustc_hash::FxHashSet;
use smallvec::SmallVec;
use thiserror::Error;

use crate::syntax::{
    split_tf_name, tf_name, AggAtom, AggCmp, AggFn, CmpOp, Formula, Polarity, SetExpr, Term, Vocabulary,
};

/// Index of a domain element.
pub type Elem = u32;
/// A tuple of domain elements.
pub type Tuple = SmallVec<[Elem; 4]>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StructureError {
    #[error("duplicate domain element `{0}`")]
    DuplicateElement(String),
    #[error("empty domain")]
    EmptyDomain,
    #[error("unknown domain element `{0}`")]
    UnknownElement(String),
    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),
    #[error("predicate `{pred}` has arity {expected}, got a tuple of length {found}")]
    Arity { pred: String, expected: usize, found: usize },
    #[error("structures have different domains or vocabularies")]
    Mismatch,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("variable `{0}` has no value")]
    Unassigned(String),
    #[error("function term `{0}` cannot be evaluated; eliminate functions first")]
    FunctionTerm(String),
    #[error("numeral {0} is not a domain element")]
    ForeignNumber(f64),
    #[error("non-numeric element `{0}` in a numeric position")]
    NonNumeric(String),
    #[error("product aggregate over a negative value {0}")]
    NegativeProduct(f64),
    #[error("aggregate {0} over a set without a first coordinate")]
    NoCoordinate(&'static str),
    #[error(transparent)]
    Structure(#[from] StructureError),
}

/// The finite domain: element names, with the numeric value of numerals.
#[derive(Clone, Debug)]
pub struct Domain {
    names: Vec<String>,
    nums: Vec<Option<f64>>,
    index: HashMap<String, Elem>,
}

impl PartialEq for Domain {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names
    }
}

impl Domain {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Domain, StructureError> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(StructureError::EmptyDomain);
        }
        let mut index = HashMap::new();
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i as Elem).is_some() {
                return Err(StructureError::DuplicateElement(n.clone()));
            }
        }
        let nums = names.iter().map(|n| n.parse::<f64>().ok().filter(|x| x.is_finite())).collect();
        Ok(Domain { names, nums, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, e: Elem) -> &str {
        &self.names[e as usize]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn number(&self, e: Elem) -> Option<f64> {
        self.nums[e as usize]
    }

    pub fn lookup(&self, name: &str) -> Option<Elem> {
        self.index.get(name).copied()
    }

    /// The first element whose numeric value equals `x`.
    pub fn numeral(&self, x: f64) -> Option<Elem> {
        self.nums.iter().position(|n| *n == Some(x)).map(|i| i as Elem)
    }

    pub fn elements(&self) -> impl Iterator<Item = Elem> {
        0..self.names.len() as Elem
    }

    /// Resolves names to a tuple.
    pub fn tuple<S: AsRef<str>>(&self, names: &[S]) -> Result<Tuple, StructureError> {
        names
            .iter()
            .map(|n| self.lookup(n.as_ref()).ok_or_else(|| StructureError::UnknownElement(n.as_ref().into())))
            .collect()
    }

    pub fn tuple_names(&self, t: &[Elem]) -> Vec<String> {
        t.iter().map(|e| self.name(*e).to_string()).collect()
    }

    /// Compares tuples lexicographically by element name.
    pub fn cmp_tuples(&self, a: &[Elem], b: &[Elem]) -> std::cmp::Ordering {
        a.iter().map(|e| self.name(*e)).cmp(b.iter().map(|e| self.name(*e)))
    }

    pub fn sorted<'a>(&self, tuples: impl IntoIterator<Item = &'a Tuple>) -> Vec<Tuple> {
        let mut v: Vec<Tuple> = tuples.into_iter().cloned().collect();
        v.sort_by(|a, b| self.cmp_tuples(a, b));
        v
    }

    /// Every tuple of the given arity, in element-index order.
    pub fn all_tuples(&self, arity: usize) -> AllTuples {
        AllTuples::new(self.len() as Elem, arity)
    }
}

/// Odometer over `size^arity` tuples.
pub struct AllTuples {
    size: Elem,
    cur: Option<Tuple>,
}

impl AllTuples {
    pub fn new(size: Elem, arity: usize) -> Self {
        let cur = if size == 0 && arity > 0 { None } else { Some(SmallVec::from_elem(0, arity)) };
        AllTuples { size, cur }
    }
}

impl Iterator for AllTuples {
    type Item = Tuple;
    fn next(&mut self) -> Option<Tuple> {
        let out = self.cur.clone()?;
        let mut next = out.clone();
        let mut i = next.len();
        loop {
            if i == 0 {
                self.cur = None;
                break;
            }
            i -= 1;
            next[i] += 1;
            if next[i] < self.size {
                self.cur = Some(next);
                break;
            }
            next[i] = 0;
        }
        Some(out)
    }
}

/// Belnap's four truth values, stored as the pair (certainly true,
/// certainly false).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TruthValue {
    T,
    F,
    U,
    I,
}

impl TruthValue {
    pub const ALL: [TruthValue; 4] = [TruthValue::T, TruthValue::F, TruthValue::U, TruthValue::I];

    pub fn from_bits(ct: bool, cf: bool) -> TruthValue {
        match (ct, cf) {
            (true, false) => TruthValue::T,
            (false, true) => TruthValue::F,
            (false, false) => TruthValue::U,
            (true, true) => TruthValue::I,
        }
    }

    pub fn from_bool(b: bool) -> TruthValue {
        if b {
            TruthValue::T
        } else {
            TruthValue::F
        }
    }

    pub fn ct(self) -> bool {
        matches!(self, TruthValue::T | TruthValue::I)
    }

    pub fn cf(self) -> bool {
        matches!(self, TruthValue::F | TruthValue::I)
    }

    pub fn inverse(self) -> TruthValue {
        TruthValue::from_bits(self.cf(), self.ct())
    }

    /// Greatest lower bound in the truth order (conjunction).
    pub fn and(self, o: TruthValue) -> TruthValue {
        TruthValue::from_bits(self.ct() && o.ct(), self.cf() || o.cf())
    }

    /// Least upper bound in the truth order (disjunction).
    pub fn or(self, o: TruthValue) -> TruthValue {
        TruthValue::from_bits(self.ct() || o.ct(), self.cf() && o.cf())
    }

    pub fn lub_p(self, o: TruthValue) -> TruthValue {
        TruthValue::from_bits(self.ct() || o.ct(), self.cf() || o.cf())
    }

    pub fn glb_p(self, o: TruthValue) -> TruthValue {
        TruthValue::from_bits(self.ct() && o.ct(), self.cf() && o.cf())
    }

    pub fn leq_p(self, o: TruthValue) -> bool {
        (!self.ct() || o.ct()) && (!self.cf() || o.cf())
    }

    pub fn leq_t(self, o: TruthValue) -> bool {
        (!self.ct() || o.ct()) && (!o.cf() || self.cf())
    }

    pub fn symbol(self) -> &'static str {
        match self {
            TruthValue::T => "t",
            TruthValue::F => "f",
            TruthValue::U => "u",
            TruthValue::I => "i",
        }
    }

    pub fn from_symbol(s: &str) -> Option<TruthValue> {
        TruthValue::ALL.into_iter().find(|v| v.symbol() == s)
    }
}

impl fmt::Display for TruthValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// Interpretation of one predicate as the pair of sets (ct, cf).
#[derive(Clone, Debug, Default)]
pub struct Relation {
    pub arity: usize,
    pub ct: FxHashSet<Tuple>,
    pub cf: FxHashSet<Tuple>,
}

impl PartialEq for Relation {
    fn eq(&self, o: &Self) -> bool {
        self.arity == o.arity && self.ct == o.ct && self.cf == o.cf
    }
}

impl Relation {
    pub fn new(arity: usize) -> Self {
        Relation { arity, ct: FxHashSet::default(), cf: FxHashSet::default() }
    }

    /// Every tuple over a domain of `n` elements has exactly one of `t`, `f`.
    pub fn is_two_valued(&self, n: usize) -> bool {
        self.ct.is_disjoint(&self.cf) && self.ct.len() + self.cf.len() == n.pow(self.arity as u32)
    }

    pub fn value(&self, t: &[Elem]) -> TruthValue {
        TruthValue::from_bits(self.ct.contains(t), self.cf.contains(t))
    }

    pub fn set(&mut self, t: Tuple, v: TruthValue) {
        if v.ct() {
            self.ct.insert(t.clone());
        } else {
            self.ct.remove(&t);
        }
        if v.cf() {
            self.cf.insert(t);
        } else {
            self.cf.remove(&t);
        }
    }
}

/// Where evaluation reads atom values from.
pub trait Interpretation {
    fn domain(&self) -> &Domain;
    fn atom_value(&self, pred: &str, args: &[Elem]) -> Result<TruthValue, EvalError>;
}

/// A four-valued structure over a finite domain. Unlisted atoms are `u`.
#[derive(Clone, Debug, PartialEq)]
pub struct FourValuedStructure {
    domain: Arc<Domain>,
    rels: BTreeMap<String, Relation>,
}

/// A domain literal `P(d̄)` or `¬P(d̄)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DomainLiteral {
    pub pred: String,
    pub tuple: Tuple,
    pub positive: bool,
}

impl FourValuedStructure {
    /// The least precise structure over the given predicates.
    pub fn new(domain: Arc<Domain>, vocab: &Vocabulary) -> Self {
        let rels = vocab.predicates.iter().map(|p| (p.name.clone(), Relation::new(p.arity))).collect();
        FourValuedStructure { domain, rels }
    }

    pub fn from_relations(domain: Arc<Domain>, rels: BTreeMap<String, Relation>) -> Self {
        FourValuedStructure { domain, rels }
    }

    /// Every atom `i`.
    pub fn top(domain: Arc<Domain>, vocab: &Vocabulary) -> Self {
        let mut s = Self::new(domain, vocab);
        s.make_top();
        s
    }

    pub fn make_top(&mut self) {
        let dom = self.domain.clone();
        for r in self.rels.values_mut() {
            let all: FxHashSet<Tuple> = dom.all_tuples(r.arity).collect();
            r.ct = all.clone();
            r.cf = all;
        }
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn domain_arc(&self) -> &Arc<Domain> {
        &self.domain
    }

    pub fn vocabulary(&self) -> Vocabulary {
        let mut v = Vocabulary::new();
        for (n, r) in &self.rels {
            v.add_predicate(n.clone(), r.arity);
        }
        v
    }

    pub fn relations(&self) -> &BTreeMap<String, Relation> {
        &self.rels
    }

    pub fn relation(&self, pred: &str) -> Option<&Relation> {
        self.rels.get(pred)
    }

    pub fn relation_mut(&mut self, pred: &str) -> Option<&mut Relation> {
        self.rels.get_mut(pred)
    }

    pub fn has_predicate(&self, pred: &str) -> bool {
        self.rels.contains_key(pred)
    }

    pub fn arity(&self, pred: &str) -> Option<usize> {
        self.rels.get(pred).map(|r| r.arity)
    }

    /// Adds predicates (all `u`) that are not yet interpreted.
    pub fn extend(&mut self, vocab: &Vocabulary) {
        for p in &vocab.predicates {
            self.rels.entry(p.name.clone()).or_insert_with(|| Relation::new(p.arity));
        }
    }

    /// Keeps only the listed predicates.
    pub fn restrict(&self, vocab: &Vocabulary) -> FourValuedStructure {
        let rels = self
            .rels
            .iter()
            .filter(|(n, _)| vocab.predicate(n).is_some())
            .map(|(n, r)| (n.clone(), r.clone()))
            .collect();
        FourValuedStructure { domain: self.domain.clone(), rels }
    }

    fn check(&self, pred: &str, t: &[Elem]) -> Result<&Relation, StructureError> {
        let r = self.rels.get(pred).ok_or_else(|| StructureError::UnknownPredicate(pred.into()))?;
        if r.arity != t.len() {
            return Err(StructureError::Arity { pred: pred.into(), expected: r.arity, found: t.len() });
        }
        Ok(r)
    }

    pub fn value(&self, pred: &str, t: &[Elem]) -> Result<TruthValue, StructureError> {
        Ok(self.check(pred, t)?.value(t))
    }

    /// Value by element names; panics on bad input. Convenient in tests.
    pub fn value_of(&self, pred: &str, names: &[&str]) -> TruthValue {
        let t = self.domain.tuple(names).expect("known elements");
        self.value(pred, &t).expect("known predicate")
    }

    pub fn set(&mut self, pred: &str, t: Tuple, v: TruthValue) -> Result<(), StructureError> {
        self.check(pred, &t)?;
        self.rels.get_mut(pred).unwrap().set(t, v);
        Ok(())
    }

    /// Sets by element names; panics on bad input.
    pub fn set_named(&mut self, pred: &str, names: &[&str], v: TruthValue) {
        let t = self.domain.tuple(names).expect("known elements");
        self.set(pred, t, v).expect("known predicate");
    }

    /// Raises an atom to `lub_p(current, v)`; returns whether it changed.
    pub fn raise(&mut self, pred: &str, t: &[Elem], v: TruthValue) -> Result<bool, StructureError> {
        self.check(pred, t)?;
        let r = self.rels.get_mut(pred).unwrap();
        let mut changed = false;
        if v.ct() && !r.ct.contains(t) {
            r.ct.insert(SmallVec::from_slice(t));
            changed = true;
        }
        if v.cf() && !r.cf.contains(t) {
            r.cf.insert(SmallVec::from_slice(t));
            changed = true;
        }
        Ok(changed)
    }

    /// `Ĩ[L/v]`: a copy with the literal's atom set (negative literals use the inverse).
    pub fn set_literal(&self, lit: &DomainLiteral, v: TruthValue) -> Result<FourValuedStructure, StructureError> {
        let mut s = self.clone();
        let v = if lit.positive { v } else { v.inverse() };
        s.set(&lit.pred, lit.tuple.clone(), v)?;
        Ok(s)
    }

    pub fn is_three_valued(&self) -> bool {
        self.rels.values().all(|r| r.ct.is_disjoint(&r.cf))
    }

    pub fn is_two_valued(&self) -> bool {
        let n = self.domain.len();
        self.rels.values().all(|r| r.is_two_valued(n))
    }

    pub fn is_top(&self) -> bool {
        let n = self.domain.len();
        self.rels.values().all(|r| {
            let full = n.pow(r.arity as u32);
            r.ct.len() == full && r.cf.len() == full
        })
    }

    /// Every domain atom with its value, predicates by name and tuples in
    /// element-index order.
    pub fn atoms(&self) -> impl Iterator<Item = (&str, Tuple, TruthValue)> + '_ {
        self.rels.iter().flat_map(move |(n, r)| {
            self.domain.all_tuples(r.arity).map(move |t| {
                let v = r.value(&t);
                (n.as_str(), t, v)
            })
        })
    }

    /// Atoms whose value is `u`.
    pub fn unknown_atoms(&self) -> Vec<(String, Tuple)> {
        self.atoms().filter(|(_, _, v)| *v == TruthValue::U).map(|(p, t, _)| (p.to_string(), t)).collect()
    }

    fn same_shape(&self, o: &Self) -> Result<(), StructureError> {
        if self.domain != o.domain
            || self.rels.len() != o.rels.len()
            || self.rels.iter().zip(&o.rels).any(|((a, r), (b, s))| a != b || r.arity != s.arity)
        {
            return Err(StructureError::Mismatch);
        }
        Ok(())
    }

    pub fn leq_p(&self, o: &Self) -> Result<bool, StructureError> {
        self.same_shape(o)?;
        Ok(self.rels.iter().zip(o.rels.values()).all(|((_, a), b)| a.ct.is_subset(&b.ct) && a.cf.is_subset(&b.cf)))
    }

    pub fn leq_t(&self, o: &Self) -> Result<bool, StructureError> {
        self.same_shape(o)?;
        Ok(self.rels.iter().zip(o.rels.values()).all(|((_, a), b)| a.ct.is_subset(&b.ct) && b.cf.is_subset(&a.cf)))
    }

    pub fn lub_p(&self, o: &Self) -> Result<FourValuedStructure, StructureError> {
        self.same_shape(o)?;
        let mut s = self.clone();
        for (r, b) in s.rels.values_mut().zip(o.rels.values()) {
            r.ct.extend(b.ct.iter().cloned());
            r.cf.extend(b.cf.iter().cloned());
        }
        Ok(s)
    }

    pub fn glb_p(&self, o: &Self) -> Result<FourValuedStructure, StructureError> {
        self.same_shape(o)?;
        let mut s = self.clone();
        for (r, b) in s.rels.values_mut().zip(o.rels.values()) {
            r.ct.retain(|t| b.ct.contains(t));
            r.cf.retain(|t| b.cf.contains(t));
        }
        Ok(s)
    }

    /// Number of atoms whose value differs from `u`; the precision measure.
    pub fn information(&self) -> usize {
        self.rels.values().map(|r| r.ct.len() + r.cf.len()).sum()
    }
}

impl Interpretation for FourValuedStructure {
    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn atom_value(&self, pred: &str, args: &[Elem]) -> Result<TruthValue, EvalError> {
        Ok(self.value(pred, args)?)
    }
}

/// A two-valued structure given by the set of true tuples per predicate.
/// Used for tf-structures and for the input structures of symbolic mode.
#[derive(Clone, Debug, PartialEq)]
pub struct RelStructure {
    domain: Arc<Domain>,
    rels: BTreeMap<String, (usize, FxHashSet<Tuple>)>,
}

/// Two-valued structure over the tf-vocabulary.
pub type TfStructure = RelStructure;

impl RelStructure {
    pub fn new(domain: Arc<Domain>, vocab: &Vocabulary) -> Self {
        let rels = vocab.predicates.iter().map(|p| (p.name.clone(), (p.arity, FxHashSet::default()))).collect();
        RelStructure { domain, rels }
    }

    pub fn domain_arc(&self) -> &Arc<Domain> {
        &self.domain
    }

    pub fn vocabulary(&self) -> Vocabulary {
        let mut v = Vocabulary::new();
        for (n, (a, _)) in &self.rels {
            v.add_predicate(n.clone(), *a);
        }
        v
    }

    pub fn relations(&self) -> impl Iterator<Item = (&str, usize, &FxHashSet<Tuple>)> {
        self.rels.iter().map(|(n, (a, s))| (n.as_str(), *a, s))
    }

    pub fn tuples(&self, pred: &str) -> Option<&FxHashSet<Tuple>> {
        self.rels.get(pred).map(|(_, s)| s)
    }

    pub fn contains(&self, pred: &str, t: &[Elem]) -> bool {
        self.rels.get(pred).is_some_and(|(_, s)| s.contains(t))
    }

    pub fn insert(&mut self, pred: &str, t: Tuple) -> Result<bool, StructureError> {
        let (a, s) = self.rels.get_mut(pred).ok_or_else(|| StructureError::UnknownPredicate(pred.into()))?;
        if *a != t.len() {
            return Err(StructureError::Arity { pred: pred.into(), expected: *a, found: t.len() });
        }
        Ok(s.insert(t))
    }

    pub fn insert_named(&mut self, pred: &str, names: &[&str]) {
        let t = self.domain.tuple(names).expect("known elements");
        self.insert(pred, t).expect("known predicate");
    }

    pub fn add_predicate(&mut self, pred: &str, arity: usize) {
        self.rels.entry(pred.to_string()).or_insert_with(|| (arity, FxHashSet::default()));
    }

    /// `self ≤t o`: every true tuple of `self` is true in `o`.
    pub fn leq_t(&self, o: &Self) -> bool {
        self.rels.iter().all(|(n, (_, s))| o.rels.get(n).is_some_and(|(_, t)| s.is_subset(t)))
    }

    pub fn size(&self) -> usize {
        self.rels.values().map(|(_, s)| s.len()).sum()
    }

    /// The same relations viewed as a two-valued four-valued structure.
    pub fn to_four_valued(&self) -> FourValuedStructure {
        let rels = self
            .rels
            .iter()
            .map(|(n, (a, s))| {
                let mut r = Relation::new(*a);
                for t in self.domain.all_tuples(*a) {
                    if s.contains(&t) {
                        r.ct.insert(t);
                    } else {
                        r.cf.insert(t);
                    }
                }
                (n.clone(), r)
            })
            .collect();
        FourValuedStructure { domain: self.domain.clone(), rels }
    }
}

impl Interpretation for RelStructure {
    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn atom_value(&self, pred: &str, args: &[Elem]) -> Result<TruthValue, EvalError> {
        let (a, s) = self.rels.get(pred).ok_or_else(|| StructureError::UnknownPredicate(pred.into()))?;
        if *a != args.len() {
            return Err(StructureError::Arity { pred: pred.into(), expected: *a, found: args.len() }.into());
        }
        Ok(TruthValue::from_bool(s.contains(args)))
    }
}

/// The tf-encoding: `P_ct` holds the atoms at least `t`, `P_cf` those at least `f`.
pub fn tf_encode(s: &FourValuedStructure) -> TfStructure {
    let rels = s
        .rels
        .iter()
        .flat_map(|(n, r)| {
            [(tf_name(n, Polarity::Ct), (r.arity, r.ct.clone())), (tf_name(n, Polarity::Cf), (r.arity, r.cf.clone()))]
        })
        .collect();
    RelStructure { domain: s.domain.clone(), rels }
}

/// Inverse of [`tf_encode`]. Predicates without a `_ct`/`_cf` suffix are ignored.
pub fn tf_decode(m: &TfStructure) -> FourValuedStructure {
    let mut rels: BTreeMap<String, Relation> = BTreeMap::new();
    for (n, (a, s)) in &m.rels {
        if let Some((base, pol)) = split_tf_name(n) {
            let r = rels.entry(base.to_string()).or_insert_with(|| Relation::new(*a));
            match pol {
                Polarity::Ct => r.ct = s.clone(),
                Polarity::Cf => r.cf = s.clone(),
            }
        }
    }
    FourValuedStructure { domain: m.domain.clone(), rels }
}

/// A value a term can denote: a domain element, or a numeral outside the domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Value {
    Elem(Elem),
    Num(f64),
}

impl Value {
    pub fn number(self, d: &Domain) -> Option<f64> {
        match self {
            Value::Elem(e) => d.number(e),
            Value::Num(x) => Some(x),
        }
    }
}

/// Variable assignment; later bindings shadow earlier ones.
#[derive(Clone, Debug, Default)]
pub struct Assignment {
    binds: Vec<(String, Value)>,
}

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_elems(vars: &[String], elems: &[Elem]) -> Self {
        Assignment { binds: vars.iter().cloned().zip(elems.iter().map(|e| Value::Elem(*e))).collect() }
    }

    pub fn push(&mut self, var: &str, v: Value) {
        self.binds.push((var.to_string(), v));
    }

    pub fn pop(&mut self) {
        self.binds.pop();
    }

    pub fn get(&self, var: &str) -> Option<Value> {
        self.binds.iter().rev().find(|(n, _)| n == var).map(|(_, v)| *v)
    }
}

pub fn eval_term(d: &Domain, t: &Term, asg: &Assignment) -> Result<Value, EvalError> {
    match t {
        Term::Var(v) => asg.get(v).ok_or_else(|| EvalError::Unassigned(v.clone())),
        Term::Num(x) => Ok(d.numeral(*x).map(Value::Elem).unwrap_or(Value::Num(*x))),
        Term::App(f, _) => Err(EvalError::FunctionTerm(f.clone())),
    }
}

fn elem_of(v: Value) -> Result<Elem, EvalError> {
    match v {
        Value::Elem(e) => Ok(e),
        Value::Num(x) => Err(EvalError::ForeignNumber(x)),
    }
}

/// Two-valued builtin comparison.
pub fn compare(d: &Domain, op: CmpOp, l: Value, r: Value) -> bool {
    let eq = || match (l, r) {
        (Value::Elem(a), Value::Elem(b)) => a == b,
        _ => l.number(d).is_some() && l.number(d) == r.number(d),
    };
    let num = || l.number(d).zip(r.number(d));
    match op {
        CmpOp::Eq => eq(),
        CmpOp::Ne => !eq(),
        CmpOp::Lt => num().is_some_and(|(a, b)| a < b),
        CmpOp::Le => num().is_some_and(|(a, b)| a <= b),
        CmpOp::Nlt => !num().is_some_and(|(a, b)| a < b),
        CmpOp::Nle => !num().is_some_and(|(a, b)| a <= b),
    }
}

/// Four-valued evaluation under Belnap's connectives.
pub fn evaluate<S: Interpretation + ?Sized>(s: &S, f: &Formula, asg: &Assignment) -> Result<TruthValue, EvalError> {
    let mut asg = asg.clone();
    eval_in(s, f, &mut asg)
}

pub(crate) fn eval_in<S: Interpretation + ?Sized>(
    s: &S,
    f: &Formula,
    asg: &mut Assignment,
) -> Result<TruthValue, EvalError> {
    use TruthValue as V;
    let d = s.domain();
    Ok(match f {
        Formula::True => V::T,
        Formula::False => V::F,
        Formula::Atom(a) => {
            let mut t = Tuple::new();
            for arg in &a.args {
                t.push(elem_of(eval_term(d, arg, asg)?)?);
            }
            s.atom_value(&a.pred, &t)?
        }
        Formula::Cmp(op, l, r) => {
            let l = eval_term(d, l, asg)?;
            let r = eval_term(d, r, asg)?;
            V::from_bool(compare(d, *op, l, r))
        }
        Formula::Not(a) => eval_in(s, a, asg)?.inverse(),
        Formula::And(xs) => {
            let mut acc = V::T;
            for x in xs {
                acc = acc.and(eval_in(s, x, asg)?);
                if acc == V::F {
                    break;
                }
            }
            acc
        }
        Formula::Or(xs) => {
            let mut acc = V::F;
            for x in xs {
                acc = acc.or(eval_in(s, x, asg)?);
                if acc == V::T {
                    break;
                }
            }
            acc
        }
        Formula::Implies(a, b) => eval_in(s, a, asg)?.inverse().or(eval_in(s, b, asg)?),
        Formula::Equiv(a, b) => {
            let a = eval_in(s, a, asg)?;
            let b = eval_in(s, b, asg)?;
            a.inverse().or(b).and(b.inverse().or(a))
        }
        Formula::Forall(vs, body) => quantify(s, vs, body, asg, true)?,
        Formula::Exists(vs, body) => quantify(s, vs, body, asg, false)?,
        Formula::Agg(a) => eval_agg(s, a, asg)?,
    })
}

fn quantify<S: Interpretation + ?Sized>(
    s: &S,
    vs: &[String],
    body: &Formula,
    asg: &mut Assignment,
    universal: bool,
) -> Result<TruthValue, EvalError> {
    let (unit, absorbing) = if universal { (TruthValue::T, TruthValue::F) } else { (TruthValue::F, TruthValue::T) };
    let mut acc = unit;
    for t in s.domain().all_tuples(vs.len()) {
        for (v, e) in vs.iter().zip(&t) {
            asg.push(v, Value::Elem(*e));
        }
        let r = eval_in(s, body, asg);
        for _ in vs {
            asg.pop();
        }
        let r = r?;
        acc = if universal { acc.and(r) } else { acc.or(r) };
        if acc == absorbing {
            break;
        }
    }
    Ok(acc)
}

/// A set expression's extension, each candidate tuple annotated.
#[derive(Clone, Debug, PartialEq)]
pub struct ThreeValuedSet {
    pub items: Vec<(Tuple, TruthValue)>,
}

/// Evaluates a set expression; every domain tuple of the bound variables is
/// a candidate.
pub fn eval_set<S: Interpretation + ?Sized>(
    s: &S,
    se: &SetExpr,
    asg: &Assignment,
) -> Result<ThreeValuedSet, EvalError> {
    let mut asg = asg.clone();
    let mut items = Vec::new();
    for t in s.domain().all_tuples(se.vars.len()) {
        for (v, e) in se.vars.iter().zip(&t) {
            asg.push(v, Value::Elem(*e));
        }
        let r = eval_in(s, &se.cond, &mut asg);
        for _ in &se.vars {
            asg.pop();
        }
        items.push((t, r?));
    }
    Ok(ThreeValuedSet { items })
}

/// Exact minimum and maximum of an aggregate over all two-valued sets
/// between the certain (`t`) elements and the certain-or-unknown ones.
/// Elements are the numeric first coordinates paired with annotations.
pub fn bounds(items: &[(f64, TruthValue)], func: AggFn) -> Result<(f64, f64), EvalError> {
    let certain = items.iter().filter(|(_, v)| *v == TruthValue::T).map(|(x, _)| *x);
    let unknown = items.iter().filter(|(_, v)| *v == TruthValue::U).map(|(x, _)| *x);
    Ok(match func {
        AggFn::Card => {
            let t = certain.count() as f64;
            (t, t + unknown.count() as f64)
        }
        AggFn::Sum => {
            let t: f64 = certain.sum();
            let (neg, pos) = unknown.fold((0.0, 0.0), |(n, p), x| if x < 0.0 { (n + x, p) } else { (n, p + x) });
            (t + neg, t + pos)
        }
        AggFn::Prod => {
            if let Some(x) = items.iter().filter(|(_, v)| v.ct() || *v == TruthValue::U).map(|(x, _)| *x).find(|x| *x < 0.0)
            {
                return Err(EvalError::NegativeProduct(x));
            }
            let t: f64 = certain.product();
            if t == 0.0 {
                (0.0, 0.0)
            } else {
                let low = if unknown.clone().any(|x| x == 0.0) {
                    0.0
                } else {
                    unknown.clone().filter(|x| *x < 1.0).product::<f64>()
                };
                let high: f64 = unknown.filter(|x| *x > 1.0).product();
                (t * low, t * high)
            }
        }
        AggFn::Min => {
            let all = certain.clone().chain(unknown).fold(f64::INFINITY, f64::min);
            (all, certain.fold(f64::INFINITY, f64::min))
        }
        AggFn::Max => {
            let all = certain.clone().chain(unknown).fold(f64::NEG_INFINITY, f64::max);
            (certain.fold(f64::NEG_INFINITY, f64::max), all)
        }
    })
}

fn numeric_items(d: &Domain, set: &ThreeValuedSet, func: AggFn) -> Result<Vec<(f64, TruthValue)>, EvalError> {
    set.items
        .iter()
        .filter(|(_, v)| *v != TruthValue::F)
        .map(|(t, v)| {
            if func == AggFn::Card {
                return Ok((0.0, *v));
            }
            let e = *t.first().ok_or(EvalError::NoCoordinate(func.name()))?;
            let x = d.number(e).ok_or_else(|| EvalError::NonNumeric(d.name(e).to_string()))?;
            Ok((x, *v))
        })
        .collect()
}

/// Bounds of `func` over the extension of `se`.
pub fn agg_bounds<S: Interpretation + ?Sized>(
    s: &S,
    se: &SetExpr,
    func: AggFn,
    asg: &Assignment,
) -> Result<(f64, f64), EvalError> {
    let set = eval_set(s, se, asg)?;
    bounds(&numeric_items(s.domain(), &set, func)?, func)
}

/// Three-valued comparison of a number against aggregate bounds.
pub fn compare_bounds(x: f64, cmp: AggCmp, (lo, hi): (f64, f64)) -> TruthValue {
    use TruthValue as V;
    match cmp {
        AggCmp::Ge if x >= hi => V::T,
        AggCmp::Ge if x >= lo => V::U,
        AggCmp::Le if x <= lo => V::T,
        AggCmp::Le if x <= hi => V::U,
        AggCmp::Gt if x > hi => V::T,
        AggCmp::Gt if x > lo => V::U,
        AggCmp::Lt if x < lo => V::T,
        AggCmp::Lt if x < hi => V::U,
        AggCmp::Eq if x == lo && x == hi => V::T,
        AggCmp::Eq if lo <= x && x <= hi => V::U,
        _ => V::F,
    }
}

fn eval_agg<S: Interpretation + ?Sized>(s: &S, a: &AggAtom, asg: &mut Assignment) -> Result<TruthValue, EvalError> {
    let d = s.domain();
    let set = eval_set(s, &a.set, asg)?;
    let x = eval_term(d, &a.term, asg)?;
    if set.items.iter().any(|(_, v)| *v == TruthValue::I) {
        return Ok(TruthValue::I);
    }
    let items = numeric_items(d, &set, a.func)?;
    let b = bounds(&items, a.func)?;
    Ok(match x.number(d) {
        Some(x) => compare_bounds(x, a.cmp, b),
        None => TruthValue::F,
    })
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TfError {
    #[error("aggregate atoms have no ct/cf form")]
    Aggregate,
}

/// The pair `(ct(f), cf(f))` of negation-free formulas over the tf-vocabulary.
pub fn ct_cf(f: &Formula) -> Result<(Formula, Formula), TfError> {
    Ok(match f {
        Formula::True => (Formula::True, Formula::False),
        Formula::False => (Formula::False, Formula::True),
        Formula::Atom(a) => {
            let mk = |p| Formula::Atom(crate::syntax::Atom::new(tf_name(&a.pred, p), a.args.clone()));
            (mk(Polarity::Ct), mk(Polarity::Cf))
        }
        Formula::Cmp(op, l, r) => (Formula::Cmp(*op, l.clone(), r.clone()), Formula::Cmp(op.complement(), l.clone(), r.clone())),
        Formula::Not(a) => {
            let (t, f) = ct_cf(a)?;
            (f, t)
        }
        Formula::And(xs) => {
            let (ts, fs) = ct_cf_all(xs)?;
            (Formula::And(ts), Formula::Or(fs))
        }
        Formula::Or(xs) => {
            let (ts, fs) = ct_cf_all(xs)?;
            (Formula::Or(ts), Formula::And(fs))
        }
        Formula::Implies(a, b) => {
            let (at, af) = ct_cf(a)?;
            let (bt, bf) = ct_cf(b)?;
            (Formula::Or(vec![af, bt]), Formula::And(vec![at, bf]))
        }
        Formula::Equiv(a, b) => {
            let (at, af) = ct_cf(a)?;
            let (bt, bf) = ct_cf(b)?;
            (
                Formula::And(vec![Formula::Or(vec![af.clone(), bt.clone()]), Formula::Or(vec![bf.clone(), at.clone()])]),
                Formula::Or(vec![Formula::And(vec![at, bf]), Formula::And(vec![bt, af])]),
            )
        }
        Formula::Forall(vs, body) => {
            let (t, f) = ct_cf(body)?;
            (Formula::Forall(vs.clone(), Box::new(t)), Formula::Exists(vs.clone(), Box::new(f)))
        }
        Formula::Exists(vs, body) => {
            let (t, f) = ct_cf(body)?;
            (Formula::Exists(vs.clone(), Box::new(t)), Formula::Forall(vs.clone(), Box::new(f)))
        }
        Formula::Agg(_) => return Err(TfError::Aggregate),
    })
}

/// `ct(f)` alone.
pub fn ct(f: &Formula) -> Result<Formula, TfError> {
    Ok(ct_cf(f)?.0)
}

fn ct_cf_all(xs: &[Formula]) -> Result<(Vec<Formula>, Vec<Formula>), TfError> {
    let mut ts = Vec::with_capacity(xs.len());
    let mut fs = Vec::with_capacity(xs.len());
    for x in xs {
        let (t, f) = ct_cf(x)?;
        ts.push(t);
        fs.push(f);
    }
    Ok((ts, fs))
}

/// Whether a formula contains no negation and no implication or equivalence.
pub fn is_negation_free(f: &Formula) -> bool {
    let mut ok = true;
    f.visit(&mut |g| {
        if matches!(g, Formula::Not(_) | Formula::Implies(..) | Formula::Equiv(..)) {
            ok = false;
        }
    });
    ok
}

#[cfg(test)]
mod tests {
    use super::*;
    use TruthValue::*;

    fn dom(names: &[&str]) -> Arc<Domain> {
        Arc::new(Domain::new(names.iter().copied()).unwrap())
    }

    #[test]
    fn truth_tables() {
        assert_eq!(T.inverse(), F);
        assert_eq!(U.inverse(), U);
        assert_eq!(I.inverse(), I);
        assert_eq!(U.and(I), F);
        assert_eq!(U.or(I), T);
        assert!(U.leq_p(T) && T.leq_p(I) && !T.leq_p(F));
        assert!(F.leq_t(U) && U.leq_t(T) && !U.leq_t(I));
    }

    #[test]
    fn tuples_enumerate_lexicographically() {
        let all: Vec<Tuple> = AllTuples::new(2, 2).collect();
        assert_eq!(all.len(), 4);
        assert_eq!(all[1].as_slice(), &[0, 1]);
        assert_eq!(AllTuples::new(3, 0).count(), 1);
    }

    #[test]
    fn literal_updates() {
        let v = Vocabulary::with_predicates([("P", 1)]);
        let bot = FourValuedStructure::new(dom(&["a", "b"]), &v);
        let a: Tuple = SmallVec::from_slice(&[0]);
        let s = bot.set_literal(&DomainLiteral { pred: "P".into(), tuple: a.clone(), positive: true }, T).unwrap();
        assert_eq!(s.value("P", &a).unwrap(), T);
        assert_eq!(s.value_of("P", &["b"]), U);
        let s = bot.set_literal(&DomainLiteral { pred: "P".into(), tuple: a.clone(), positive: false }, T).unwrap();
        assert_eq!(s.value("P", &a).unwrap(), F);
        assert!(bot.leq_p(&s).unwrap());
        assert!(bot.set_literal(&DomainLiteral { pred: "Q".into(), tuple: a, positive: true }, T).is_err());
    }

    #[test]
    fn cardinality_bound_example() {
        let v = Vocabulary::with_predicates([("P", 1)]);
        let mut s = FourValuedStructure::new(dom(&["a", "b", "1"]), &v);
        s.set_named("P", &["a"], T);
        s.set_named("P", &["b"], U);
        s.set_named("P", &["1"], F);
        let f = Formula::Agg(Box::new(AggAtom {
            term: Term::var("x"),
            cmp: AggCmp::Ge,
            func: AggFn::Card,
            set: SetExpr { vars: vec!["y".into()], cond: Box::new(Formula::atom("P", &["y"])) },
        }));
        let mut asg = Assignment::new();
        asg.push("x", Value::Num(1.0));
        assert_eq!(evaluate(&s, &f, &asg).unwrap(), U);
    }

    #[test]
    fn bounds_examples() {
        assert_eq!(bounds(&[(0.0, T), (0.0, F), (0.0, U)], AggFn::Card).unwrap(), (1.0, 2.0));
        assert_eq!(bounds(&[(2.0, T), (3.0, U), (-1.0, U)], AggFn::Sum).unwrap(), (1.0, 5.0));
        assert_eq!(bounds(&[(2.0, F)], AggFn::Min).unwrap(), (f64::INFINITY, f64::INFINITY));
        assert!(bounds(&[(-2.0, U)], AggFn::Prod).is_err());
        assert_eq!(bounds(&[(2.0, T), (0.5, U), (3.0, U)], AggFn::Prod).unwrap(), (1.0, 6.0));
    }

    #[test]
    fn tf_roundtrip_and_encoding() {
        let v = Vocabulary::with_predicates([("P", 1)]);
        let mut s = FourValuedStructure::new(dom(&["a", "b", "c"]), &v);
        s.set_named("P", &["a"], T);
        s.set_named("P", &["b"], I);
        let m = tf_encode(&s);
        assert!(m.contains("P_ct", &[1]) && m.contains("P_cf", &[1]));
        assert!(!m.contains("P_cf", &[0]));
        assert_eq!(tf_decode(&m), s);
    }

    #[test]
    fn ct_cf_of_clause() {
        let body = Formula::Or(vec![
            Formula::not(Formula::atom("Selected", &["m"])),
            Formula::not(Formula::atom("In", &["m", "c"])),
            Formula::atom("Selected", &["c"]),
        ]);
        let f = Formula::forall(vec!["c".into(), "m".into()], body);
        let (t, c) = ct_cf(&f).unwrap();
        let et = Formula::forall(
            vec!["c".into(), "m".into()],
            Formula::Or(vec![
                Formula::atom("Selected_cf", &["m"]),
                Formula::atom("In_cf", &["m", "c"]),
                Formula::atom("Selected_ct", &["c"]),
            ]),
        );
        let ec = Formula::exists(
            vec!["c".into(), "m".into()],
            Formula::And(vec![
                Formula::atom("Selected_ct", &["m"]),
                Formula::atom("In_ct", &["m", "c"]),
                Formula::atom("Selected_cf", &["c"]),
            ]),
        );
        assert_eq!(t, et);
        assert_eq!(c, ec);
        assert!(is_negation_free(&t) && is_negation_free(&c));
    }
}
