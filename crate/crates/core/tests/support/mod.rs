//! Random instances shared by the integration tests.

#![allow(dead_code)]

use std::sync::Arc;

use foprop_core::io::parse_theory;
use foprop_core::normalize::{enf_to_inf, EnfBody, EnfSentence, InfSentence, Lit};
use foprop_core::structure::{Domain, FourValuedStructure, TruthValue};
use foprop_core::syntax::{AggCmp, AggFn, Atom, Term, Theory, Vocabulary};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type Rng8 = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng8 {
    rand::SeedableRng::seed_from_u64(seed)
}

/// Domain `0..n`, so every element is also a number.
pub fn numeric_domain(n: usize) -> Arc<Domain> {
    Arc::new(Domain::new((0..n).map(|k| k.to_string())).unwrap())
}

pub fn random_value(r: &mut Rng8, unknown: f64) -> TruthValue {
    if r.gen_bool(unknown) {
        TruthValue::U
    } else if r.gen_bool(0.5) {
        TruthValue::T
    } else {
        TruthValue::F
    }
}

/// A random three-valued structure, each atom unknown with probability `unknown`.
pub fn random_structure(r: &mut Rng8, dom: &Arc<Domain>, v: &Vocabulary, unknown: f64) -> FourValuedStructure {
    let mut s = FourValuedStructure::new(dom.clone(), v);
    for p in &v.predicates {
        for t in dom.all_tuples(p.arity) {
            s.set(&p.name, t, random_value(r, unknown)).unwrap();
        }
    }
    s
}

/// Keeps at most `max` unknown atoms by fixing the surplus at random.
pub fn cap_unknowns(r: &mut Rng8, s: &mut FourValuedStructure, max: usize) {
    let mut atoms = s.unknown_atoms();
    atoms.shuffle(r);
    for (p, t) in atoms.into_iter().skip(max) {
        s.set(&p, t, TruthValue::from_bool(r.gen_bool(0.5))).unwrap();
    }
}

// ---------------------------------------------------------------- ENF sentences

fn vars(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn pick_args(r: &mut Rng8, pool: &[String], arity: usize, must: Option<&str>) -> Vec<Term> {
    let mut args: Vec<Term> = (0..arity).map(|_| Term::var(pool.choose(r).unwrap().clone())).collect();
    if let Some(m) = must {
        let k = r.gen_range(0..arity);
        args[k] = Term::var(m);
    }
    args
}

fn lit(r: &mut Rng8, name: String, args: Vec<Term>) -> Lit {
    Lit::Atom { atom: Atom::new(name, args), positive: r.gen_bool(0.6) }
}

/// A random ENF sentence whose predicates are all distinct. Predicate names
/// come from `names` in order, so the first one is the head.
pub fn distinct_enf(r: &mut Rng8, aggregates: bool) -> (EnfSentence, Vocabulary) {
    let names = ["H", "A", "B", "C"];
    let outer = vars(&["x", "y"][..r.gen_range(0..=2)]);
    let mut v = Vocabulary::new();
    let head_atom = Atom::new(names[0], outer.iter().map(Term::var).collect());
    v.add_predicate(names[0], outer.len());
    let head = Lit::Atom { atom: head_atom, positive: r.gen_bool(0.8) };
    let kind = r.gen_range(0..if aggregates { 5 } else { 4 });
    let body = match kind {
        0 | 1 => {
            let n = r.gen_range(1..=3);
            let ls: Vec<Lit> = (0..n)
                .map(|k| {
                    let arity = if outer.is_empty() { 0 } else { r.gen_range(0..=2) };
                    v.add_predicate(names[k + 1], arity);
                    let args = pick_args(r, &outer, arity, None);
                    lit(r, names[k + 1].to_string(), args)
                })
                .collect();
            if kind == 0 {
                EnfBody::And(ls)
            } else {
                EnfBody::Or(ls)
            }
        }
        2 | 3 => {
            let mut pool = outer.clone();
            pool.push("z".into());
            let arity = r.gen_range(1..=2);
            v.add_predicate(names[1], arity);
            let args = pick_args(r, &pool, arity, Some("z"));
            let l = lit(r, names[1].to_string(), args);
            if kind == 2 {
                EnfBody::Forall(vars(&["z"]), l)
            } else {
                EnfBody::Exists(vars(&["z"]), l)
            }
        }
        _ => {
            let mut pool = outer.clone();
            pool.push("z".into());
            let arity = r.gen_range(1..=2);
            v.add_predicate(names[1], arity);
            // the aggregated element has to come first
            let mut args = pick_args(r, &pool, arity, None);
            args[0] = Term::var("z");
            let cond = lit(r, names[1].to_string(), args);
            let func = *[AggFn::Card, AggFn::Sum, AggFn::Min, AggFn::Max].choose(r).unwrap();
            let cmp = if r.gen_bool(0.5) { AggCmp::Ge } else { AggCmp::Le };
            EnfBody::Agg { term: Term::Num(r.gen_range(0..=4) as f64), cmp, func, vars: vars(&["z"]), cond }
        }
    };
    (EnfSentence { vars: outer, head, body }, v)
}

/// Random first-order ENF sentences over a shared vocabulary `P/0 Q/1 R/1 S/2`,
/// with repetitions and occasional falsum heads.
pub fn shared_enf(r: &mut Rng8) -> EnfSentence {
    let preds: [(&str, usize); 4] = [("P", 0), ("Q", 1), ("R", 1), ("S", 2)];
    let outer = vars(&["x", "y"][..r.gen_range(0..=2)]);
    let usable: Vec<(&str, usize)> = preds.iter().copied().filter(|(_, a)| *a == 0 || !outer.is_empty()).collect();
    let head = if r.gen_bool(0.1) {
        Lit::True
    } else {
        let fits: Vec<_> = preds.iter().filter(|(_, a)| *a == outer.len()).collect();
        match fits.choose(r) {
            Some((p, _)) => Lit::Atom { atom: Atom::new(*p, outer.iter().map(Term::var).collect()), positive: r.gen_bool(0.7) },
            None => Lit::True,
        }
    };
    let kind = r.gen_range(0..4);
    let body = if kind < 2 {
        let n = r.gen_range(1..=3);
        let ls: Vec<Lit> = (0..n)
            .map(|_| {
                let (p, a) = *usable.choose(r).unwrap();
                let args = pick_args(r, &outer, a, None);
                lit(r, p.to_string(), args)
            })
            .collect();
        if kind % 2 == 0 {
            EnfBody::And(ls)
        } else {
            EnfBody::Or(ls)
        }
    } else {
        let mut pool = outer.clone();
        pool.push("z".into());
        let (p, a) = *[("Q", 1), ("R", 1), ("S", 2)].choose(r).unwrap();
        let args = pick_args(r, &pool, a, Some("z"));
        let l = lit(r, p.to_string(), args);
        if kind == 2 {
            EnfBody::Forall(vars(&["z"]), l)
        } else {
            EnfBody::Exists(vars(&["z"]), l)
        }
    };
    EnfSentence { vars: outer, head, body }
}

pub fn shared_vocabulary() -> Vocabulary {
    Vocabulary::with_predicates([("P", 0), ("Q", 1), ("R", 1), ("S", 2)])
}

/// INF sentences of a few random shared ENF sentences.
pub fn random_infs(r: &mut Rng8) -> Vec<InfSentence> {
    let n = r.gen_range(1..=3);
    let mut out: Vec<InfSentence> = (0..n).flat_map(|_| enf_to_inf(&shared_enf(r))).collect();
    out.shuffle(r);
    out
}

// ---------------------------------------------------------------- full theories

/// Text generator for small theories over `A/0 B/1 C/1 E/2`, with an
/// optional definition of `D/1` and aggregates over numeric elements.
pub struct TheoryGen<'a> {
    r: &'a mut Rng8,
    fresh: usize,
    aggregates: bool,
}

const OPEN: [(&str, usize); 4] = [("A", 0), ("B", 1), ("C", 1), ("E", 2)];

impl<'a> TheoryGen<'a> {
    pub fn new(r: &'a mut Rng8, aggregates: bool) -> Self {
        TheoryGen { r, fresh: 0, aggregates }
    }

    fn atom(&mut self, scope: &[String], extra: &[(&str, usize)]) -> String {
        let mut cands: Vec<(&str, usize)> = OPEN.iter().chain(extra).copied().filter(|(_, a)| *a == 0 || !scope.is_empty()).collect();
        cands.sort();
        let (p, a) = *cands.choose(self.r).unwrap();
        if a == 0 {
            return p.to_string();
        }
        let args: Vec<String> = (0..a).map(|_| scope.choose(self.r).unwrap().clone()).collect();
        format!("{p}({})", args.join(","))
    }

    fn aggregate(&mut self, scope: &[String]) -> String {
        let y = self.var();
        let mut inner = scope.to_vec();
        inner.push(y.clone());
        let cond = match self.r.gen_range(0..3) {
            0 => format!("B({y})"),
            1 => format!("~C({y})"),
            _ => format!("E({}, {y})", inner.choose(self.r).unwrap()),
        };
        let func = ["card", "sum", "min", "max", "prod"].choose(self.r).unwrap();
        let cmp = ["=<", ">=", "<", ">", "="].choose(self.r).unwrap();
        format!("{} {cmp} {func}{{ {y} : {cond} }}", self.r.gen_range(0..=3))
    }

    fn var(&mut self) -> String {
        self.fresh += 1;
        format!("v{}", self.fresh)
    }

    pub fn formula(&mut self, scope: &[String], depth: usize, extra: &[(&str, usize)]) -> String {
        let leaf = depth == 0 || self.r.gen_bool(0.3);
        if leaf {
            if self.aggregates && self.r.gen_bool(0.25) {
                return self.aggregate(scope);
            }
            let a = self.atom(scope, extra);
            return if self.r.gen_bool(0.3) { format!("~{a}") } else { a };
        }
        match self.r.gen_range(0..7) {
            0 | 1 => format!("({} & {})", self.formula(scope, depth - 1, extra), self.formula(scope, depth - 1, extra)),
            2 | 3 => format!("({} | {})", self.formula(scope, depth - 1, extra), self.formula(scope, depth - 1, extra)),
            4 => format!("({} => {})", self.formula(scope, depth - 1, extra), self.formula(scope, depth - 1, extra)),
            5 => format!("~({})", self.formula(scope, depth - 1, extra)),
            _ => {
                let v = self.var();
                let mut inner = scope.to_vec();
                inner.push(v.clone());
                let q = if self.r.gen_bool(0.5) { "!" } else { "?" };
                format!("({q} {v} : {})", self.formula(&inner, depth - 1, extra))
            }
        }
    }

    /// Definition of `D/1`, rules possibly recursive through negation.
    pub fn definition(&mut self) -> String {
        let n = self.r.gen_range(1..=2);
        let rules: Vec<String> = (0..n)
            .map(|_| {
                let body = self.formula(&["x".to_string()], 2, &[("D", 1)]);
                format!("  ! x : D(x) <- {body}.")
            })
            .collect();
        format!("define {{\n{}\n}}", rules.join("\n"))
    }

    pub fn theory(&mut self, definition: bool) -> String {
        let n = self.r.gen_range(1..=2);
        let mut parts: Vec<String> = (0..n)
            .map(|_| {
                let extra: &[(&str, usize)] = if definition { &[("D", 1)] } else { &[] };
                format!("{}.", self.formula(&[], 3, extra))
            })
            .collect();
        if definition {
            parts.push(self.definition());
        }
        parts.join("\n")
    }
}

pub fn theory_vocabulary(definition: bool) -> Vocabulary {
    let mut v = Vocabulary::with_predicates(OPEN);
    if definition {
        v.add_predicate("D", 1);
    }
    v
}

/// A random theory (optionally with a definition) and a three-valued
/// structure with at most `max_unknown` unknown atoms.
pub fn random_instance(r: &mut Rng8, aggregates: bool, max_unknown: usize) -> (String, Theory, FourValuedStructure) {
    let with_def = r.gen_bool(0.5);
    let text = TheoryGen::new(r, aggregates).theory(with_def);
    let theory = parse_theory(&text).unwrap_or_else(|e| panic!("{text}\n{e:?}"));
    let dom = numeric_domain(r.gen_range(1..=3));
    let v = theory_vocabulary(with_def);
    let mut s = random_structure(r, &dom, &v, 0.7);
    cap_unknowns(r, &mut s, max_unknown);
    (text, theory, s)
}
