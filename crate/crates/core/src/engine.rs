//! Semi-naive fixpoint evaluation of positive rules over relations.
//!
//! Relations are append-only tuple logs with dense or hashed membership and
//! lazily built indexes per set of bound positions. Rule bodies are
//! negation-free formulas compiled to variable slots; aggregate atoms are
//! evaluated four-valuedly over the ct/cf relations. Each rule keeps a
//! cursor per relation it reads and re-runs its body only for bindings
//! taken from tuples added since its last firing.

use std::cell::{Cell, RefCell};
use std::collections::VecDeque;
use std::rc::Rc;
use std::sync::Arc;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rustc_hash::{FxHashMap, FxHashSet};
use smallvec::SmallVec;
use thiserror::Error;

use crate::structure::{
    compare, evaluate, Assignment, Domain, Elem, EvalError, Interpretation, RelStructure, StructureError, Tuple,
    TruthValue, Value,
};
use crate::syntax::{free_vars_ordered, tf_name, CmpOp, Formula, Polarity, Term, Vocabulary};

pub type RelId = usize;
type Slot = usize;
const UNBOUND: Elem = Elem::MAX;
const DENSE_LIMIT: u64 = 1 << 27;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("relation `{0}` declared twice with different arities")]
    ArityConflict(String),
    #[error("`{0}` has arity {1} but is used with {2} arguments")]
    Arity(String, usize, usize),
    #[error("variable `{0}` is not bound in the rule")]
    Unbound(String),
    #[error("rule bodies must be negation-free, found `{0}`")]
    NotPositive(String),
    #[error("head argument `{0}` is not a variable or domain element")]
    BadHead(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

// ---------------------------------------------------------------- storage

enum Members {
    Dense(Vec<u64>),
    Sparse(FxHashSet<Tuple>),
}

enum KeyMap {
    Packed(FxHashMap<u64, Vec<u32>>),
    Wide(FxHashMap<Tuple, Vec<u32>>),
}

struct Index {
    positions: Vec<usize>,
    map: KeyMap,
    upto: usize,
}

/// One relation: an append-only log plus membership and indexes.
pub struct Rel {
    pub name: String,
    pub arity: usize,
    len: usize,
    log: Vec<Elem>,
    members: Members,
    indexes: RefCell<FxHashMap<u32, Rc<Index>>>,
}

impl Rel {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn row(&self, i: usize) -> &[Elem] {
        &self.log[i * self.arity..(i + 1) * self.arity]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[Elem]> {
        (0..self.len).map(|i| self.row(i))
    }
}

/// The relations of an engine over one finite domain.
pub struct Store {
    domain: Arc<Domain>,
    bits: u32,
    rels: Vec<Rel>,
    names: FxHashMap<String, RelId>,
}

impl Store {
    pub fn new(domain: Arc<Domain>) -> Self {
        let n = domain.len().max(2) as u64;
        let bits = 64 - (n - 1).leading_zeros();
        Store { domain, bits, rels: Vec::new(), names: FxHashMap::default() }
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn domain_arc(&self) -> &Arc<Domain> {
        &self.domain
    }

    pub fn add_relation(&mut self, name: &str, arity: usize) -> Result<RelId, EngineError> {
        if let Some(&id) = self.names.get(name) {
            return if self.rels[id].arity == arity { Ok(id) } else { Err(EngineError::ArityConflict(name.into())) };
        }
        let size = (self.domain.len() as u64).checked_pow(arity as u32);
        let members = match size {
            Some(s) if s <= DENSE_LIMIT => Members::Dense(vec![0; (s as usize).div_ceil(64)]),
            _ => Members::Sparse(FxHashSet::default()),
        };
        let id = self.rels.len();
        self.rels.push(Rel {
            name: name.to_string(),
            arity,
            len: 0,
            log: Vec::new(),
            members,
            indexes: RefCell::new(FxHashMap::default()),
        });
        self.names.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<RelId> {
        self.names.get(name).copied()
    }

    pub fn rel(&self, id: RelId) -> &Rel {
        &self.rels[id]
    }

    pub fn relations(&self) -> impl Iterator<Item = (RelId, &Rel)> {
        self.rels.iter().enumerate()
    }

    fn dense_pos(&self, t: &[Elem]) -> usize {
        let d = self.domain.len();
        t.iter().rev().fold(0usize, |acc, &e| acc * d + e as usize)
    }

    pub fn contains(&self, id: RelId, t: &[Elem]) -> bool {
        match &self.rels[id].members {
            Members::Dense(bits) => {
                let p = self.dense_pos(t);
                bits[p / 64] >> (p % 64) & 1 == 1
            }
            Members::Sparse(s) => s.contains(t),
        }
    }

    /// Adds a tuple; returns whether it was new.
    pub fn insert(&mut self, id: RelId, t: &[Elem]) -> bool {
        let p = self.dense_pos(t);
        let rel = &mut self.rels[id];
        debug_assert_eq!(rel.arity, t.len());
        let fresh = match &mut rel.members {
            Members::Dense(bits) => {
                let was = bits[p / 64] >> (p % 64) & 1 == 1;
                bits[p / 64] |= 1 << (p % 64);
                !was
            }
            Members::Sparse(s) => s.insert(Tuple::from_slice(t)),
        };
        if fresh {
            rel.log.extend_from_slice(t);
            rel.len += 1;
        }
        fresh
    }

    pub fn insert_named(&mut self, name: &str, t: &[Elem]) -> Result<bool, EngineError> {
        let id = self.id(name).ok_or_else(|| EngineError::UnknownRelation(name.into()))?;
        let a = self.rels[id].arity;
        if a != t.len() {
            return Err(EngineError::Arity(name.into(), a, t.len()));
        }
        Ok(self.insert(id, t))
    }

    /// Every tuple in every relation.
    pub fn fill_all(&mut self) {
        for id in 0..self.rels.len() {
            let tuples: Vec<Tuple> = self.domain.all_tuples(self.rels[id].arity).collect();
            for t in tuples {
                self.insert(id, &t);
            }
        }
    }

    fn pack(&self, vals: impl Iterator<Item = Elem>) -> u64 {
        vals.fold(0u64, |acc, e| (acc << self.bits) | e as u64)
    }

    fn index(&self, id: RelId, mask: u32) -> Rc<Index> {
        let rel = &self.rels[id];
        if let Some(ix) = rel.indexes.borrow().get(&mask) {
            if ix.upto == rel.len {
                return ix.clone();
            }
        }
        let mut map = rel.indexes.borrow_mut();
        let entry = map.entry(mask).or_insert_with(|| {
            let positions: Vec<usize> = (0..rel.arity).filter(|p| mask >> p & 1 == 1).collect();
            let packed = self.bits as usize * positions.len() <= 64;
            let map = if packed { KeyMap::Packed(FxHashMap::default()) } else { KeyMap::Wide(FxHashMap::default()) };
            Rc::new(Index { positions, map, upto: 0 })
        });
        if Rc::get_mut(entry).is_none() {
            let fresh = Index { positions: entry.positions.clone(), map: empty_like(&entry.map), upto: 0 };
            *entry = Rc::new(fresh);
        }
        let ix = Rc::get_mut(entry).expect("unique index");
        for r in ix.upto..rel.len {
            let row = rel.row(r);
            match &mut ix.map {
                KeyMap::Packed(m) => {
                    let k = self.pack(ix.positions.iter().map(|&p| row[p]));
                    m.entry(k).or_default().push(r as u32);
                }
                KeyMap::Wide(m) => {
                    let k: Tuple = ix.positions.iter().map(|&p| row[p]).collect();
                    m.entry(k).or_default().push(r as u32);
                }
            }
        }
        ix.upto = rel.len;
        entry.clone()
    }

    /// Rows whose values at the masked positions equal `key` (in position order).
    fn lookup<'a>(&self, ix: &'a Index, key: &[Elem]) -> &'a [u32] {
        let rows = match &ix.map {
            KeyMap::Packed(m) => m.get(&self.pack(key.iter().copied())),
            KeyMap::Wide(m) => m.get(key),
        };
        rows.map(Vec::as_slice).unwrap_or(&[])
    }

    /// Number of tuples agreeing with `key` on the masked positions.
    fn count(&self, id: RelId, mask: u32, key: &[Elem]) -> usize {
        if mask == 0 {
            return self.rels[id].len;
        }
        let ix = self.index(id, mask);
        self.lookup(&ix, key).len()
    }

    /// The relations as a two-valued structure.
    pub fn to_rel_structure(&self) -> RelStructure {
        let mut v = Vocabulary::new();
        for r in &self.rels {
            v.add_predicate(r.name.clone(), r.arity);
        }
        let mut s = RelStructure::new(self.domain.clone(), &v);
        for r in &self.rels {
            for row in r.rows() {
                s.insert(&r.name, Tuple::from_slice(row)).expect("declared relation");
            }
        }
        s
    }

    /// Four-valued reading: `P` is read from `P_ct`/`P_cf`, or two-valued
    /// from a relation named `P` itself.
    pub fn view(&self) -> StoreView<'_> {
        StoreView { store: self, cache: RefCell::new(FxHashMap::default()) }
    }
}

fn empty_like(m: &KeyMap) -> KeyMap {
    match m {
        KeyMap::Packed(_) => KeyMap::Packed(FxHashMap::default()),
        KeyMap::Wide(_) => KeyMap::Wide(FxHashMap::default()),
    }
}

pub struct StoreView<'a> {
    store: &'a Store,
    cache: RefCell<FxHashMap<String, (Option<RelId>, Option<RelId>, Option<RelId>)>>,
}

impl Interpretation for StoreView<'_> {
    fn domain(&self) -> &Domain {
        &self.store.domain
    }

    fn atom_value(&self, pred: &str, args: &[Elem]) -> Result<TruthValue, EvalError> {
        let ids = *self.cache.borrow_mut().entry(pred.to_string()).or_insert_with(|| {
            (
                self.store.id(pred),
                self.store.id(&tf_name(pred, Polarity::Ct)),
                self.store.id(&tf_name(pred, Polarity::Cf)),
            )
        });
        let arity_ok = |id: RelId| {
            let a = self.store.rels[id].arity;
            if a == args.len() {
                Ok(())
            } else {
                Err(EvalError::Structure(StructureError::Arity { pred: pred.into(), expected: a, found: args.len() }))
            }
        };
        match ids {
            (_, Some(ct), Some(cf)) => {
                arity_ok(ct)?;
                Ok(TruthValue::from_bits(self.store.contains(ct, args), self.store.contains(cf, args)))
            }
            (Some(id), _, _) => {
                arity_ok(id)?;
                Ok(TruthValue::from_bool(self.store.contains(id, args)))
            }
            _ => Err(StructureError::UnknownPredicate(pred.into()).into()),
        }
    }
}

// ---------------------------------------------------------------- compiled bodies

#[derive(Clone, Copy, Debug)]
enum Arg {
    Var(Slot),
    Elem(Elem),
    Num(f64),
}

/// `! zs : A(..)` or `! zs : (zs = ys) | A(..)`, decided by counting.
struct CountCheck {
    rel: RelId,
    mask: u32,
    key: Vec<Arg>,
    full: u64,
    /// For the second shape: the atom with each `z` replaced by its `y`.
    except: Option<Vec<Arg>>,
}

enum Kind {
    True,
    False,
    Atom { rel: RelId, args: SmallVec<[Arg; 4]> },
    Cmp { op: CmpOp, l: Arg, r: Arg },
    And(Vec<Node>),
    Or(Vec<Node>),
    Exists { vars: Vec<Slot>, body: Box<Node> },
    Forall { vars: Vec<Slot>, body: Box<Node>, count: Option<CountCheck> },
    Opaque { formula: Formula, vars: Vec<(String, Slot)>, want_ct: bool },
}

struct Node {
    kind: Kind,
    free: Vec<Slot>,
}

struct Compiler<'a> {
    store: &'a Store,
    slots: usize,
    scope: Vec<(String, Slot)>,
    reads: Vec<RelId>,
    opaque_reads: Vec<RelId>,
    occurrences: Vec<(RelId, SmallVec<[Arg; 4]>)>,
}

impl Compiler<'_> {
    fn lookup(&self, v: &str) -> Result<Slot, EngineError> {
        self.scope.iter().rev().find(|(n, _)| n == v).map(|(_, s)| *s).ok_or_else(|| EngineError::Unbound(v.into()))
    }

    fn term(&self, t: &Term) -> Result<Arg, EngineError> {
        Ok(match t {
            Term::Var(v) => Arg::Var(self.lookup(v)?),
            Term::Num(x) => match self.store.domain.numeral(*x) {
                Some(e) => Arg::Elem(e),
                None => Arg::Num(*x),
            },
            Term::App(f, _) => return Err(EvalError::FunctionTerm(f.clone()).into()),
        })
    }

    fn bind(&mut self, vars: &[String]) -> Vec<Slot> {
        vars.iter()
            .map(|v| {
                let s = self.slots;
                self.slots += 1;
                self.scope.push((v.clone(), s));
                s
            })
            .collect()
    }

    fn compile(&mut self, f: &Formula) -> Result<Node, EngineError> {
        let kind = match f {
            Formula::True => Kind::True,
            Formula::False => Kind::False,
            Formula::Atom(a) => {
                let rel = self.store.id(&a.pred).ok_or_else(|| EngineError::UnknownRelation(a.pred.clone()))?;
                let arity = self.store.rels[rel].arity;
                if arity != a.args.len() {
                    return Err(EngineError::Arity(a.pred.clone(), arity, a.args.len()));
                }
                let args: SmallVec<[Arg; 4]> = a.args.iter().map(|t| self.term(t)).collect::<Result<_, _>>()?;
                if args.iter().any(|a| matches!(a, Arg::Num(_))) {
                    Kind::False
                } else {
                    if !self.reads.contains(&rel) {
                        self.reads.push(rel);
                    }
                    self.occurrences.push((rel, args.clone()));
                    Kind::Atom { rel, args }
                }
            }
            Formula::Cmp(op, l, r) => Kind::Cmp { op: *op, l: self.term(l)?, r: self.term(r)? },
            Formula::And(xs) => Kind::And(xs.iter().map(|x| self.compile(x)).collect::<Result<_, _>>()?),
            Formula::Or(xs) => Kind::Or(xs.iter().map(|x| self.compile(x)).collect::<Result<_, _>>()?),
            Formula::Exists(vs, b) => {
                let mark = self.scope.len();
                let vars = self.bind(vs);
                let body = self.compile(b)?;
                self.scope.truncate(mark);
                Kind::Exists { vars, body: Box::new(body) }
            }
            Formula::Forall(vs, b) => {
                let mark = self.scope.len();
                let vars = self.bind(vs);
                let body = self.compile(b)?;
                self.scope.truncate(mark);
                let count = self.count_check(&vars, &body);
                Kind::Forall { vars, body: Box::new(body), count }
            }
            Formula::Agg(_) => self.opaque(f, true)?,
            Formula::Not(inner) if matches!(**inner, Formula::Agg(_)) => self.opaque(inner, false)?,
            other => return Err(EngineError::NotPositive(other.to_string())),
        };
        let free = self.free_of(&kind);
        Ok(Node { kind, free })
    }

    fn opaque(&mut self, f: &Formula, want_ct: bool) -> Result<Kind, EngineError> {
        let vars = free_vars_ordered(f).into_iter().map(|v| self.lookup(&v).map(|s| (v, s))).collect::<Result<_, _>>()?;
        for p in f.predicates() {
            let ids: Vec<RelId> = match (self.store.id(&tf_name(&p, Polarity::Ct)), self.store.id(&tf_name(&p, Polarity::Cf)))
            {
                (Some(a), Some(b)) => vec![a, b],
                _ => vec![self.store.id(&p).ok_or_else(|| EngineError::UnknownRelation(p.clone()))?],
            };
            for id in ids {
                if !self.reads.contains(&id) {
                    self.reads.push(id);
                }
                if !self.opaque_reads.contains(&id) {
                    self.opaque_reads.push(id);
                }
            }
        }
        Ok(Kind::Opaque { formula: f.clone(), vars, want_ct })
    }

    fn free_of(&self, k: &Kind) -> Vec<Slot> {
        let mut out = Vec::new();
        let mut add = |s: Slot| {
            if !out.contains(&s) {
                out.push(s);
            }
        };
        match k {
            Kind::True | Kind::False => {}
            Kind::Atom { args, .. } => args.iter().for_each(|a| {
                if let Arg::Var(s) = a {
                    add(*s)
                }
            }),
            Kind::Cmp { l, r, .. } => [l, r].into_iter().for_each(|a| {
                if let Arg::Var(s) = a {
                    add(*s)
                }
            }),
            Kind::And(xs) | Kind::Or(xs) => xs.iter().flat_map(|x| &x.free).for_each(|s| add(*s)),
            Kind::Exists { vars, body } | Kind::Forall { vars, body, .. } => body.free.iter().filter(|s| !vars.contains(s)).for_each(|s| add(*s)),
            Kind::Opaque { vars, .. } => vars.iter().for_each(|(_, s)| add(*s)),
        }
        out.sort_unstable();
        out
    }

    fn count_check(&self, zs: &[Slot], body: &Node) -> Option<CountCheck> {
        let full = (self.store.domain.len() as u64).checked_pow(zs.len() as u32)?;
        let atom_key = |rel: RelId, args: &[Arg]| -> Option<CountCheck> {
            let mut mask = 0u32;
            let mut key = Vec::new();
            let mut seen = Vec::new();
            for (p, a) in args.iter().enumerate() {
                match a {
                    Arg::Var(s) if zs.contains(s) => {
                        if seen.contains(s) {
                            return None;
                        }
                        seen.push(*s);
                    }
                    other => {
                        mask |= 1 << p;
                        key.push(*other);
                    }
                }
            }
            (seen.len() == zs.len() && args.len() <= 32).then_some(CountCheck { rel, mask, key, full, except: None })
        };
        match &body.kind {
            Kind::Atom { rel, args } => atom_key(*rel, args),
            Kind::Or(xs) if xs.len() == 2 => {
                let (eqs, atom) = match (&xs[0].kind, &xs[1].kind) {
                    (_, Kind::Atom { .. }) => (&xs[0], &xs[1]),
                    (Kind::Atom { .. }, _) => (&xs[1], &xs[0]),
                    _ => return None,
                };
                let Kind::Atom { rel, args } = &atom.kind else { return None };
                let pairs: Vec<&Node> = match &eqs.kind {
                    Kind::And(cs) => cs.iter().collect(),
                    Kind::Cmp { .. } => vec![eqs],
                    _ => return None,
                };
                let mut to_y: Vec<(Slot, Arg)> = Vec::new();
                for c in pairs {
                    let Kind::Cmp { op: CmpOp::Eq, l, r } = &c.kind else { return None };
                    let (z, y) = match (l, r) {
                        (Arg::Var(a), b) if zs.contains(a) => (*a, *b),
                        (b, Arg::Var(a)) if zs.contains(a) => (*a, *b),
                        _ => return None,
                    };
                    if matches!(y, Arg::Var(s) if zs.contains(&s)) || to_y.iter().any(|(s, _)| *s == z) {
                        return None;
                    }
                    to_y.push((z, y));
                }
                if to_y.len() != zs.len() {
                    return None;
                }
                let mut check = atom_key(*rel, args)?;
                let except = args
                    .iter()
                    .map(|a| match a {
                        Arg::Var(s) => to_y.iter().find(|(z, _)| z == s).map(|(_, y)| *y).unwrap_or(*a),
                        other => *other,
                    })
                    .collect();
                check.except = Some(except);
                Some(check)
            }
            _ => None,
        }
    }
}

// ---------------------------------------------------------------- evaluation

struct Eval<'a> {
    store: &'a Store,
    dsize: Elem,
    error: Cell<Option<EvalError>>,
    view: StoreView<'a>,
}

type Env = Vec<Elem>;
type Cont<'k> = &'k mut dyn FnMut(&mut Env) -> bool;

impl<'a> Eval<'a> {
    fn new(store: &'a Store) -> Self {
        Eval { store, dsize: store.domain.len() as Elem, error: Cell::new(None), view: store.view() }
    }

    fn value(&self, a: Arg, env: &Env) -> Value {
        match a {
            Arg::Var(s) => Value::Elem(env[s]),
            Arg::Elem(e) => Value::Elem(e),
            Arg::Num(x) => Value::Num(x),
        }
    }

    fn elem(&self, a: Arg, env: &Env) -> Elem {
        match a {
            Arg::Var(s) => env[s],
            Arg::Elem(e) => e,
            Arg::Num(_) => UNBOUND,
        }
    }

    fn bound(a: &Arg, env: &Env) -> bool {
        !matches!(a, Arg::Var(s) if env[*s] == UNBOUND)
    }

    fn all_bound(n: &Node, env: &Env) -> bool {
        n.free.iter().all(|s| env[*s] != UNBOUND)
    }

    fn unbound_count(n: &Node, env: &Env) -> i32 {
        n.free.iter().filter(|s| env[**s] == UNBOUND).count() as i32
    }

    fn fail(&self, e: EvalError) {
        let prev = self.error.take();
        self.error.set(Some(prev.unwrap_or(e)));
    }

    fn holds(&self, n: &Node, env: &mut Env) -> bool {
        match &n.kind {
            Kind::True => true,
            Kind::False => false,
            Kind::Atom { rel, args } => {
                let t: SmallVec<[Elem; 4]> = args.iter().map(|a| self.elem(*a, env)).collect();
                self.store.contains(*rel, &t)
            }
            Kind::Cmp { op, l, r } => compare(&self.store.domain, *op, self.value(*l, env), self.value(*r, env)),
            Kind::And(xs) => xs.iter().all(|x| self.holds(x, env)),
            Kind::Or(xs) => xs.iter().any(|x| self.holds(x, env)),
            Kind::Exists { body, .. } => {
                let mut found = false;
                self.solve(body, env, &mut |_| {
                    found = true;
                    false
                });
                found
            }
            Kind::Forall { vars, body, count } => match count {
                Some(c) => self.count_holds(c, env),
                None => {
                    let mut ok = true;
                    self.expand(vars, 0, env, &mut |env| {
                        ok = self.holds(body, env);
                        ok
                    });
                    ok
                }
            },
            Kind::Opaque { formula, vars, want_ct } => {
                let elems: Vec<Elem> = vars.iter().map(|(_, s)| env[*s]).collect();
                let names: Vec<String> = vars.iter().map(|(v, _)| v.clone()).collect();
                match evaluate(&self.view, formula, &Assignment::from_elems(&names, &elems)) {
                    Ok(v) => if *want_ct { v.ct() } else { v.cf() },
                    Err(e) => {
                        self.fail(e);
                        false
                    }
                }
            }
        }
    }

    fn count_holds(&self, c: &CountCheck, env: &Env) -> bool {
        let key: SmallVec<[Elem; 4]> = c.key.iter().map(|a| self.elem(*a, env)).collect();
        let n = self.store.count(c.rel, c.mask, &key) as u64;
        match &c.except {
            None => n == c.full,
            Some(args) => {
                let t: SmallVec<[Elem; 4]> = args.iter().map(|a| self.elem(*a, env)).collect();
                let present = self.store.contains(c.rel, &t) as u64;
                n - present + 1 == c.full
            }
        }
    }

    /// Binds `slots[i..]` to every combination of domain elements.
    fn expand(&self, slots: &[Slot], i: usize, env: &mut Env, k: Cont) -> bool {
        if i == slots.len() {
            return k(env);
        }
        let s = slots[i];
        if env[s] != UNBOUND {
            return self.expand(slots, i + 1, env, k);
        }
        for e in 0..self.dsize {
            env[s] = e;
            if !self.expand(slots, i + 1, env, k) {
                env[s] = UNBOUND;
                return false;
            }
        }
        env[s] = UNBOUND;
        true
    }

    /// Calls `k` for every extension of `env` to the free slots of `n`
    /// that satisfies `n`. Returns false if `k` asked to stop.
    fn solve(&self, n: &Node, env: &mut Env, k: Cont) -> bool {
        if Self::all_bound(n, env) {
            return if self.holds(n, env) { k(env) } else { true };
        }
        match &n.kind {
            Kind::True | Kind::False => unreachable!("constants have no free slots"),
            Kind::Atom { rel, args } => self.solve_atom(*rel, args, env, k),
            Kind::Cmp { op, l, r } => {
                if *op == CmpOp::Eq {
                    let (var, other) = match (l, r) {
                        (Arg::Var(s), o) if env[*s] == UNBOUND && Self::bound(o, env) => (*s, *o),
                        (o, Arg::Var(s)) if env[*s] == UNBOUND && Self::bound(o, env) => (*s, *o),
                        _ => (usize::MAX, *l),
                    };
                    if var != usize::MAX {
                        let e = self.elem(other, env);
                        if e == UNBOUND {
                            return true;
                        }
                        env[var] = e;
                        let go = k(env);
                        env[var] = UNBOUND;
                        return go;
                    }
                }
                let free = n.free.clone();
                self.expand(&free, 0, env, &mut |env| if self.holds(n, env) { k(env) } else { true })
            }
            Kind::And(xs) => {
                let all = if xs.len() >= 64 { u64::MAX } else { (1u64 << xs.len()) - 1 };
                self.solve_and(xs, all, env, k)
            }
            Kind::Or(xs) => {
                let missing: Vec<Slot> = n.free.iter().copied().filter(|s| env[*s] == UNBOUND).collect();
                for x in xs {
                    if !self.solve(x, env, &mut |env| self.expand(&missing, 0, env, k)) {
                        return false;
                    }
                }
                true
            }
            Kind::Exists { body, .. } => {
                let open: Vec<Slot> = n.free.iter().copied().filter(|s| env[*s] == UNBOUND).collect();
                let mut seen: FxHashSet<SmallVec<[Elem; 4]>> = FxHashSet::default();
                self.solve(body, env, &mut |env| {
                    let key: SmallVec<[Elem; 4]> = open.iter().map(|s| env[*s]).collect();
                    if seen.insert(key) {
                        k(env)
                    } else {
                        true
                    }
                })
            }
            Kind::Forall { .. } | Kind::Opaque { .. } => {
                let free = n.free.clone();
                self.expand(&free, 0, env, &mut |env| if self.holds(n, env) { k(env) } else { true })
            }
        }
    }

    fn solve_atom(&self, rel: RelId, args: &[Arg], env: &mut Env, k: Cont) -> bool {
        let mut mask = 0u32;
        let mut key: SmallVec<[Elem; 4]> = SmallVec::new();
        for (p, a) in args.iter().enumerate() {
            if Self::bound(a, env) {
                mask |= 1 << p;
                key.push(self.elem(*a, env));
            }
        }
        let r = self.store.rel(rel);
        let ix;
        let rows: Box<dyn Iterator<Item = usize>> = if mask == 0 {
            Box::new(0..r.len())
        } else {
            ix = self.store.index(rel, mask);
            Box::new(self.store.lookup(&ix, &key).iter().map(|&i| i as usize))
        };
        let mut set: SmallVec<[Slot; 4]> = SmallVec::new();
        for i in rows {
            let row = r.row(i);
            let mut ok = true;
            for (p, a) in args.iter().enumerate() {
                if mask >> p & 1 == 1 {
                    continue;
                }
                if let Arg::Var(s) = a {
                    if env[*s] == UNBOUND {
                        env[*s] = row[p];
                        set.push(*s);
                    } else if env[*s] != row[p] {
                        ok = false;
                        break;
                    }
                }
            }
            let go = !ok || k(env);
            for s in set.drain(..) {
                env[s] = UNBOUND;
            }
            if !go {
                return false;
            }
        }
        true
    }

    fn estimate(&self, n: &Node, env: &Env) -> f64 {
        if Self::all_bound(n, env) {
            return 0.0;
        }
        let d = self.dsize as f64;
        let open = Self::unbound_count(n, env);
        match &n.kind {
            Kind::Atom { rel, args } => {
                let b = args.iter().filter(|a| Self::bound(a, env)).count() as i32;
                (self.store.rel(*rel).len() as f64 / d.powi(b)).max(0.5)
            }
            Kind::Cmp { op: CmpOp::Eq, l, r } if Self::bound(l, env) || Self::bound(r, env) => 1.0,
            Kind::Cmp { .. } => d.powi(open) * 2.0,
            Kind::And(xs) => xs.iter().map(|x| self.estimate(x, env)).fold(f64::INFINITY, f64::min) * 2.0,
            Kind::Or(xs) => xs.iter().map(|x| self.estimate(x, env) + 1.0).sum::<f64>() * 2.0,
            Kind::Exists { body, .. } => self.estimate(body, env) + 1.0,
            Kind::Forall { .. } => d.powi(open) * 4.0,
            Kind::Opaque { .. } => d.powi(open) * 64.0,
            Kind::True | Kind::False => 0.0,
        }
    }

    fn solve_and(&self, xs: &[Node], left: u64, env: &mut Env, k: Cont) -> bool {
        if left == 0 {
            return k(env);
        }
        let mut best = usize::MAX;
        let mut best_cost = f64::INFINITY;
        for (i, x) in xs.iter().enumerate() {
            if left >> i & 1 == 0 {
                continue;
            }
            let c = self.estimate(x, env);
            if c < best_cost || best == usize::MAX {
                best = i;
                best_cost = c;
                if c == 0.0 {
                    break;
                }
            }
        }
        let rest = left & !(1 << best);
        self.solve(&xs[best], env, &mut |env| self.solve_and(xs, rest, env, k))
    }
}

// ---------------------------------------------------------------- rules

/// Conclusion of a rule.
#[derive(Clone, Debug, PartialEq)]
pub enum RuleHead {
    Atom { rel: String, args: Vec<Term> },
    /// Deriving it ends the run: no model exists above the input.
    Falsum,
}

/// `! vars : head <= body`, with `body` negation-free over the relations
/// except for aggregate atoms (read four-valuedly, `~agg` meaning "certainly
/// false").
#[derive(Clone, Debug, PartialEq)]
pub struct RuleSpec {
    pub vars: Vec<String>,
    pub head: RuleHead,
    pub body: Formula,
}

struct Occurrence {
    rel: RelId,
    args: SmallVec<[Arg; 4]>,
    binds_any: bool,
}

struct CRule {
    nslots: usize,
    nvars: usize,
    head: Option<(RelId, Vec<Arg>)>,
    body: Node,
    reads: Vec<RelId>,
    cursors: Vec<usize>,
    opaque_reads: Vec<RelId>,
    occurrences: Vec<Occurrence>,
    started: bool,
}

/// A propagator run alongside the rules, for instance a definition.
pub trait External {
    fn reads(&self) -> Vec<RelId>;
    /// Tuples to add given the current relations.
    fn fire(&mut self, store: &Store) -> Result<Vec<(RelId, Tuple)>, EngineError>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Schedule {
    #[default]
    Fifo,
    Random(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunConfig {
    /// Maximal number of steps that change something.
    pub budget: Option<usize>,
    pub schedule: Schedule,
    /// Stop as soon as a tuple and its partner are both present.
    pub stop_on_conflict: bool,
    pub record: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { budget: None, schedule: Schedule::Fifo, stop_on_conflict: false, record: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Stable,
    Budget,
    Conflict,
    Falsum,
}

/// What one changing step added. Rules are numbered first, externals after.
#[derive(Clone, Debug, PartialEq)]
pub struct EngineStep {
    pub source: usize,
    pub added: Vec<(RelId, Tuple)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub outcome: Outcome,
    pub steps: usize,
    pub trace: Vec<EngineStep>,
}

pub struct Engine {
    pub store: Store,
    rules: Vec<CRule>,
    readers: Vec<Vec<usize>>,
    partner: Vec<Option<RelId>>,
}

impl Engine {
    pub fn new(domain: Arc<Domain>) -> Self {
        Engine { store: Store::new(domain), rules: Vec::new(), readers: Vec::new(), partner: Vec::new() }
    }

    pub fn add_relation(&mut self, name: &str, arity: usize) -> Result<RelId, EngineError> {
        let id = self.store.add_relation(name, arity)?;
        if self.partner.len() <= id {
            self.partner.resize(id + 1, None);
        }
        Ok(id)
    }

    /// Declares `P_ct` and `P_cf` for every predicate, as conflict partners.
    pub fn add_tf_vocabulary(&mut self, v: &Vocabulary) -> Result<(), EngineError> {
        for p in &v.predicates {
            let ct = self.add_relation(&tf_name(&p.name, Polarity::Ct), p.arity)?;
            let cf = self.add_relation(&tf_name(&p.name, Polarity::Cf), p.arity)?;
            self.partner[ct] = Some(cf);
            self.partner[cf] = Some(ct);
        }
        Ok(())
    }

    pub fn add_rule(&mut self, spec: &RuleSpec) -> Result<usize, EngineError> {
        let mut c = Compiler {
            store: &self.store,
            slots: 0,
            scope: Vec::new(),
            reads: Vec::new(),
            opaque_reads: Vec::new(),
            occurrences: Vec::new(),
        };
        c.bind(&spec.vars);
        let body = c.compile(&spec.body)?;
        let head = match &spec.head {
            RuleHead::Falsum => None,
            RuleHead::Atom { rel, args } => {
                let id = self.store.id(rel).ok_or_else(|| EngineError::UnknownRelation(rel.clone()))?;
                let arity = self.store.rels[id].arity;
                if arity != args.len() {
                    return Err(EngineError::Arity(rel.clone(), arity, args.len()));
                }
                let args = args
                    .iter()
                    .map(|t| match c.term(t)? {
                        Arg::Num(_) => Err(EngineError::BadHead(t.to_string())),
                        a => Ok(a),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Some((id, args))
            }
        };
        let nvars = spec.vars.len();
        let occurrences = c
            .occurrences
            .iter()
            .map(|(rel, args)| Occurrence {
                rel: *rel,
                args: args.clone(),
                binds_any: args.iter().any(|a| matches!(a, Arg::Var(s) if *s < nvars)),
            })
            .collect();
        let id = self.rules.len();
        let reads = c.reads.clone();
        for &r in &reads {
            if self.readers.len() <= r {
                self.readers.resize(r + 1, Vec::new());
            }
            self.readers[r].push(id);
        }
        self.rules.push(CRule {
            nslots: c.slots,
            nvars,
            head,
            body,
            cursors: vec![0; reads.len()],
            reads,
            opaque_reads: c.opaque_reads,
            occurrences,
            started: false,
        });
        Ok(id)
    }

    pub fn rule_count(&self) -> usize {
        self.rules.len()
    }

    /// Runs rules (and externals) to a fixpoint, or until the budget,
    /// a conflict or falsum.
    pub fn run(&mut self, cfg: RunConfig, externals: &mut [Box<dyn External + '_>]) -> Result<RunResult, EngineError> {
        let nrules = self.rules.len();
        let total = nrules + externals.len();
        let mut ext_readers: Vec<Vec<usize>> = vec![Vec::new(); self.store.rels.len()];
        for (j, e) in externals.iter().enumerate() {
            for r in e.reads() {
                ext_readers[r].push(nrules + j);
            }
        }
        let mut queued = vec![true; total];
        let mut fifo: VecDeque<usize> = (0..total).collect();
        let mut pool: Vec<usize> = (0..total).collect();
        let mut rng = match cfg.schedule {
            Schedule::Random(seed) => Some(StdRng::seed_from_u64(seed)),
            Schedule::Fifo => None,
        };
        let mut steps = 0;
        let mut trace = Vec::new();
        loop {
            let item = match &mut rng {
                Some(rng) => {
                    if pool.is_empty() {
                        break;
                    }
                    let i = rng.gen_range(0..pool.len());
                    pool.swap_remove(i)
                }
                None => match fifo.pop_front() {
                    Some(i) => i,
                    None => break,
                },
            };
            queued[item] = false;
            let derived = if item < nrules {
                self.fire(item)?
            } else {
                externals[item - nrules].fire(&self.store)?
            };
            if derived.is_empty() {
                continue;
            }
            let falsum = derived.iter().any(|(r, _)| *r == usize::MAX);
            let mut added = Vec::new();
            let mut touched: Vec<RelId> = Vec::new();
            let mut conflict = false;
            for (rel, t) in derived {
                if rel == usize::MAX {
                    continue;
                }
                if self.store.insert(rel, &t) {
                    if cfg.stop_on_conflict && self.partner[rel].is_some_and(|p| self.store.contains(p, &t)) {
                        conflict = true;
                    }
                    if touched.last() != Some(&rel) {
                        touched.push(rel);
                    }
                    if cfg.record {
                        added.push((rel, t));
                    }
                }
            }
            if falsum {
                steps += 1;
                if cfg.record {
                    trace.push(EngineStep { source: item, added });
                }
                return Ok(RunResult { outcome: Outcome::Falsum, steps, trace });
            }
            if touched.is_empty() {
                continue;
            }
            steps += 1;
            touched.sort_unstable();
            touched.dedup();
            if cfg.record {
                trace.push(EngineStep { source: item, added });
            }
            if conflict {
                return Ok(RunResult { outcome: Outcome::Conflict, steps, trace });
            }
            for r in touched {
                let rs = self.readers.get(r).into_iter().flatten().chain(&ext_readers[r]);
                for &w in rs {
                    if !queued[w] {
                        queued[w] = true;
                        if rng.is_some() {
                            pool.push(w);
                        } else {
                            fifo.push_back(w);
                        }
                    }
                }
            }
            if cfg.budget.is_some_and(|b| steps >= b) {
                let pending = if rng.is_some() { !pool.is_empty() } else { !fifo.is_empty() };
                let outcome = if pending { Outcome::Budget } else { Outcome::Stable };
                return Ok(RunResult { outcome, steps, trace });
            }
        }
        Ok(RunResult { outcome: Outcome::Stable, steps, trace })
    }

    /// Evaluates one rule on the bindings from tuples new since its last
    /// firing. Falsum is reported as relation `usize::MAX`.
    fn fire(&mut self, id: usize) -> Result<Vec<(RelId, Tuple)>, EngineError> {
        let rule = &mut self.rules[id];
        let store = &self.store;
        let mut full = !rule.started;
        rule.started = true;
        let mut bindings: Vec<SmallVec<[Elem; 4]>> = Vec::new();
        for (ri, &rel) in rule.reads.iter().enumerate() {
            let (from, to) = (rule.cursors[ri], store.rel(rel).len());
            rule.cursors[ri] = to;
            if from == to || full {
                continue;
            }
            if rule.opaque_reads.contains(&rel) {
                full = true;
                continue;
            }
            let r = store.rel(rel);
            for occ in rule.occurrences.iter().filter(|o| o.rel == rel) {
                if !occ.binds_any {
                    full = true;
                    break;
                }
                'rows: for i in from..to {
                    let row = r.row(i);
                    let mut b: SmallVec<[Elem; 4]> = SmallVec::from_elem(UNBOUND, rule.nvars);
                    for (p, a) in occ.args.iter().enumerate() {
                        match a {
                            Arg::Elem(e) if *e != row[p] => continue 'rows,
                            Arg::Var(s) if *s < rule.nvars => {
                                if b[*s] != UNBOUND && b[*s] != row[p] {
                                    continue 'rows;
                                }
                                b[*s] = row[p];
                            }
                            _ => {}
                        }
                    }
                    bindings.push(b);
                }
            }
            if full {
                continue;
            }
        }
        if full {
            bindings.clear();
            bindings.push(SmallVec::from_elem(UNBOUND, rule.nvars));
        } else {
            dedup_bindings(&mut bindings, rule.nvars, store.bits + 1);
        }
        let ev = Eval::new(store);
        let mut out: Vec<(RelId, Tuple)> = Vec::new();
        let head_slots: Vec<Slot> = (0..rule.nvars).collect();
        for b in bindings {
            let mut env: Env = vec![UNBOUND; rule.nslots];
            env[..rule.nvars].copy_from_slice(&b);
            match &rule.head {
                None => {
                    let mut hit = false;
                    ev.solve(&rule.body, &mut env, &mut |_| {
                        hit = true;
                        false
                    });
                    if hit {
                        out.push((usize::MAX, Tuple::new()));
                        break;
                    }
                }
                Some((hrel, hargs)) => {
                    ev.solve(&rule.body, &mut env, &mut |env| {
                        ev.expand(&head_slots, 0, env, &mut |env| {
                            let t: Tuple = hargs.iter().map(|a| ev.elem(*a, env)).collect();
                            // duplicates are dropped when the step is applied
                            if !store.contains(*hrel, &t) {
                                out.push((*hrel, t));
                            }
                            true
                        })
                    });
                }
            }
            if let Some(e) = ev.error.take() {
                return Err(e.into());
            }
        }
        Ok(out)
    }
}

/// Sorts and deduplicates bindings, through packed integer keys when a
/// binding fits in 64 bits.
fn dedup_bindings(bindings: &mut Vec<SmallVec<[Elem; 4]>>, nvars: usize, width: u32) {
    if nvars == 0 || width as usize * nvars > 64 {
        bindings.sort_unstable();
        bindings.dedup();
        return;
    }
    let unbound = (1u64 << width) - 1;
    let mut keys: Vec<u64> = bindings
        .iter()
        .map(|b| b.iter().fold(0u64, |acc, &e| (acc << width) | if e == UNBOUND { unbound } else { e as u64 }))
        .collect();
    keys.sort_unstable();
    keys.dedup();
    bindings.clear();
    bindings.extend(keys.into_iter().map(|k| {
        (0..nvars)
            .rev()
            .map(|i| match (k >> (i as u32 * width)) & unbound {
                x if x == unbound => UNBOUND,
                x => x as Elem,
            })
            .collect()
    }));
}
