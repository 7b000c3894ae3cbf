//! Positive rule sets over the tf-vocabulary and their least models.

use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::engine::{Engine, EngineError, Outcome, RuleHead, RuleSpec, RunConfig};
use crate::normalize::InfSentence;
use crate::propagate::inf_rule;
use crate::structure::{evaluate, Assignment, EvalError, TfStructure};
use crate::syntax::{CmpOp, Formula, Term};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RulesError {
    #[error("aggregate in the guard of `{0}`")]
    Aggregate(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Rules `! x : H(x) <= body` with negation-free bodies over the
/// tf-vocabulary.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PositiveRuleSet {
    pub rules: Vec<RuleSpec>,
}

impl PositiveRuleSet {
    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// One line per rule, Datalog style.
    pub fn to_datalog(&self) -> String {
        self.rules.iter().map(|r| format!("{}\n", DatalogRule(r))).collect()
    }
}

/// One rule per INF sentence with a non-trivial head: certainly-true head
/// literal from the certainly-true guard.
pub fn emit_rule_set(v: &[InfSentence]) -> Result<PositiveRuleSet, RulesError> {
    let mut rules = Vec::new();
    for s in v {
        if s.guard.contains_aggregate() {
            return Err(RulesError::Aggregate(s.to_string()));
        }
        rules.extend(inf_rule(s));
    }
    Ok(PositiveRuleSet { rules })
}

fn is_negation_free(f: &Formula) -> bool {
    let mut ok = true;
    f.visit(&mut |g| {
        if matches!(g, Formula::Not(_) | Formula::Implies(..) | Formula::Equiv(..) | Formula::Agg(_)) {
            ok = false;
        }
    });
    ok
}

fn check(r: &PositiveRuleSet) -> Result<(), RulesError> {
    match r.rules.iter().find(|x| !is_negation_free(&x.body)) {
        Some(x) => Err(EngineError::NotPositive(x.body.to_string()).into()),
        None => Ok(()),
    }
}

fn fill(m: &mut TfStructure) {
    let d = m.domain_arc().clone();
    let preds: Vec<(String, usize)> = m.relations().map(|(n, a, _)| (n.to_string(), a)).collect();
    for (p, a) in preds {
        for t in d.all_tuples(a) {
            m.insert(&p, t).expect("declared");
        }
    }
}

/// One application of all rules at once, added to `m`.
pub fn immediate_consequence(r: &PositiveRuleSet, m: &TfStructure) -> Result<TfStructure, RulesError> {
    check(r)?;
    let mut out = m.clone();
    let d = m.domain_arc().clone();
    for rule in &r.rules {
        for t in d.all_tuples(rule.vars.len()) {
            let asg = Assignment::from_elems(&rule.vars, &t);
            if !evaluate(m, &rule.body, &asg)?.ct() {
                continue;
            }
            match &rule.head {
                RuleHead::Falsum => {
                    fill(&mut out);
                    return Ok(out);
                }
                RuleHead::Atom { rel, args } => {
                    let mut tuple = crate::structure::Tuple::new();
                    for a in args {
                        match crate::structure::eval_term(&d, a, &asg)? {
                            crate::structure::Value::Elem(e) => tuple.push(e),
                            crate::structure::Value::Num(x) => return Err(EvalError::ForeignNumber(x).into()),
                        }
                    }
                    if out.tuples(rel).is_none() {
                        out.add_predicate(rel, args.len());
                    }
                    out.insert(rel, tuple).map_err(|e| RulesError::Eval(e.into()))?;
                }
            }
        }
    }
    Ok(out)
}

/// Least fixpoint of [`immediate_consequence`] above `seed`, by plain
/// iteration.
pub fn least_model_naive(r: &PositiveRuleSet, seed: &TfStructure) -> Result<TfStructure, RulesError> {
    let mut cur = seed.clone();
    loop {
        let next = immediate_consequence(r, &cur)?;
        if next.size() == cur.size() {
            return Ok(next);
        }
        cur = next;
    }
}

/// Least model above `seed`, evaluated semi-naively. Deriving falsum gives
/// the structure where every tuple holds.
pub fn least_model(r: &PositiveRuleSet, seed: &TfStructure) -> Result<TfStructure, RulesError> {
    check(r)?;
    let mut engine = Engine::new(seed.domain_arc().clone());
    for (name, arity, tuples) in seed.relations() {
        let id = engine.add_relation(name, arity)?;
        for t in seed.domain_arc().sorted(tuples) {
            engine.store.insert(id, &t);
        }
    }
    for rule in &r.rules {
        engine.add_rule(rule)?;
    }
    let run = engine.run(RunConfig::default(), &mut [])?;
    if run.outcome == Outcome::Falsum {
        engine.store.fill_all();
    }
    let mut out = engine.store.to_rel_structure();
    // the engine may declare relations read by rules that the seed lacks
    for (name, arity, _) in seed.relations() {
        if out.tuples(name).is_none() {
            out.add_predicate(name, arity);
        }
    }
    Ok(out)
}

struct DatalogRule<'a>(&'a RuleSpec);

impl fmt::Display for DatalogRule<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = self.0;
        match &r.head {
            RuleHead::Falsum => f.write_str("false")?,
            RuleHead::Atom { rel, args } => write!(f, "{}", atom_text(rel, args))?,
        }
        let mut parts = Vec::new();
        flatten(&r.body, &mut parts);
        if parts.is_empty() {
            return f.write_str(".");
        }
        let body: Vec<String> = parts.iter().map(|p| body_text(p)).collect();
        write!(f, " :- {}.", body.join(", "))
    }
}

/// Conjuncts of a body with outer existentials dropped, since Datalog
/// variables outside the head are existential already.
fn flatten<'a>(f: &'a Formula, out: &mut Vec<&'a Formula>) {
    match f {
        Formula::True => {}
        Formula::And(xs) => xs.iter().for_each(|x| flatten(x, out)),
        Formula::Exists(_, b) => flatten(b, out),
        _ => out.push(f),
    }
}

fn var_text(v: &str) -> String {
    let mut cs = v.chars();
    let first = cs.next().map(|c| c.to_ascii_uppercase()).unwrap_or('V');
    let rest: String = cs.map(|c| if c == '\'' { '_' } else { c }).collect();
    format!("{first}{rest}")
}

fn term_text(t: &Term) -> String {
    match t {
        Term::Var(v) => var_text(v),
        Term::Num(x) => crate::io::format_num(*x),
        Term::App(fun, args) => {
            let a: Vec<String> = args.iter().map(term_text).collect();
            format!("{fun}({})", a.join(","))
        }
    }
}

fn atom_text(rel: &str, args: &[Term]) -> String {
    if args.is_empty() {
        return rel.to_string();
    }
    let a: Vec<String> = args.iter().map(term_text).collect();
    format!("{rel}({})", a.join(","))
}

fn body_text(f: &Formula) -> String {
    let mut s = String::new();
    match f {
        Formula::True => s.push_str("true"),
        Formula::False => s.push_str("false"),
        Formula::Atom(a) => s.push_str(&atom_text(&a.pred, &a.args)),
        Formula::Cmp(op, l, r) => {
            let (l, r) = (term_text(l), term_text(r));
            let _ = match op {
                CmpOp::Eq => write!(s, "{l} = {r}"),
                CmpOp::Ne => write!(s, "{l} != {r}"),
                CmpOp::Lt => write!(s, "{l} < {r}"),
                CmpOp::Le => write!(s, "{l} <= {r}"),
                CmpOp::Nlt => write!(s, "{l} >= {r}"),
                CmpOp::Nle => write!(s, "{l} > {r}"),
            };
        }
        Formula::And(xs) => {
            let p: Vec<String> = xs.iter().map(body_text).collect();
            let _ = write!(s, "({})", p.join(", "));
        }
        Formula::Or(xs) => {
            let p: Vec<String> = xs.iter().map(body_text).collect();
            let _ = write!(s, "({})", p.join("; "));
        }
        Formula::Exists(vs, b) => {
            let v: Vec<String> = vs.iter().map(|v| var_text(v)).collect();
            let _ = write!(s, "exists({}: {})", v.join(","), body_text(b));
        }
        Formula::Forall(vs, b) => {
            let v: Vec<String> = vs.iter().map(|v| var_text(v)).collect();
            let _ = write!(s, "forall({}: {})", v.join(","), body_text(b));
        }
        other => s.push_str(&other.to_string()),
    }
    s
}
