//! Acceptance suite: one PASS or FAIL line per criterion. Exits non-zero if
//! any criterion fails.

mod support;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use foprop_core::engine::Schedule;
use foprop_core::io::{parse_formula, parse_problem, parse_theory, InputMode};
use foprop_core::normalize::{enf_to_inf, InfHead, InfSentence};
use foprop_core::oracle::{complete_propagate, enumerate_models, sentence_limit, OracleError};
use foprop_core::propagate::{apply_inf, completion, limit, propagate, wfm, PropagateConfig, PropagatorSpec};
use foprop_core::rules::{emit_rule_set, least_model};
use foprop_core::structure::{bounds, evaluate, tf_encode, Assignment, Domain, FourValuedStructure, TruthValue};
use foprop_core::symbolic::{initial_symbolic, simplify_query, source_structure, symbolic_inf_step};
use foprop_core::syntax::{free_variables, AggFn, Atom, Polarity, Term, Theory, Vocabulary};
use rand::seq::SliceRandom;
use rand::Rng;
use support::*;

type Outcome = Result<String, String>;

const STUDENT: &str = include_str!("../../../problems/student.fop");

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Debug) -> String {
    format!("{e:?}")
}

fn names(s: &FourValuedStructure, pred: &str, v: TruthValue) -> BTreeSet<String> {
    let d = s.domain();
    d.all_tuples(1).filter(|t| s.value(pred, t).unwrap() == v).map(|t| d.name(t[0]).to_string()).collect()
}

fn set(xs: &[&str]) -> BTreeSet<String> {
    xs.iter().map(|x| x.to_string()).collect()
}

fn student_reproduction() -> Outcome {
    let p = parse_problem(STUDENT).map_err(err)?;
    let start = Instant::now();
    let r = propagate(&p.theory, &p.structure, &PropagateConfig::default()).map_err(err)?;
    let took = start.elapsed();
    let s = &r.structure;
    ensure(names(s, "Selected", TruthValue::T) == set(&["m1", "c1", "c3"]), || format!("ct = {:?}", names(s, "Selected", TruthValue::T)))?;
    ensure(names(s, "Selected", TruthValue::F) == set(&["m2", "c2"]), || format!("cf = {:?}", names(s, "Selected", TruthValue::F)))?;
    ensure(names(s, "Selected", TruthValue::U) == set(&["c4"]), || "c4 not unknown".into())?;
    ensure(took < Duration::from_secs(1), || format!("took {took:?}"))?;
    Ok(format!("{took:?}"))
}

fn student_oracle() -> Outcome {
    let p = parse_problem(STUDENT).map_err(err)?;
    let fast = propagate(&p.theory, &p.structure, &PropagateConfig::default()).map_err(err)?.structure;
    let full = complete_propagate(&p.theory, &p.structure).map_err(err)?;
    ensure(fast == full, || "propagation and complete propagation differ".into())?;
    Ok(String::new())
}

fn precision_gaps() -> Outcome {
    let dom = Arc::new(Domain::new(["a"]).unwrap());
    let bottom = FourValuedStructure::new(dom, &Vocabulary::with_predicates([("P", 0), ("Q", 0), ("R", 0), ("Aux", 0)]));
    let pq = FourValuedStructure::restrict(&bottom, &Vocabulary::with_predicates([("P", 0), ("Q", 0)]));
    let t = parse_theory("P <=> Q. P <=> ~Q.").map_err(err)?;
    ensure(complete_propagate(&t, &pq).map_err(err)?.is_top(), || "complete propagation is not top".into())?;
    ensure(sentence_limit(&t, &pq).map_err(err)? == pq, || "sentence limit is not bottom".into())?;

    let pqr = bottom.restrict(&Vocabulary::with_predicates([("P", 0), ("Q", 0), ("R", 0)]));
    let t = parse_theory("P | Q. P | Q => R.").map_err(err)?;
    let r = sentence_limit(&t, &pqr).map_err(err)?.value_of("R", &[]);
    ensure(r == TruthValue::U, || format!("R = {} without Aux", r.symbol()))?;
    let t2 = parse_theory("Aux <=> P | Q. Aux. Aux => R.").map_err(err)?;
    let r = sentence_limit(&t2, &bottom).map_err(err)?.value_of("R", &[]);
    ensure(r == TruthValue::T, || format!("R = {} with Aux", r.symbol()))?;
    Ok(String::new())
}

fn single_sentence_precision() -> Outcome {
    let mut r = rng(11);
    let (mut checked, mut seen_agg, mut skipped) = (0, 0, 0);
    while checked < 600 {
        let (e, v) = distinct_enf(&mut r, true);
        // Instances of the head sharing one body instance are outside the
        // guarantee: `! x : H(x) <=> ? z : ~A(z)` with H(0) true forces
        // H(1), which no single INF propagator derives.
        let body_vars = free_variables(&e.body.to_formula());
        if !e.vars.iter().all(|x| body_vars.contains(x)) {
            skipped += 1;
            continue;
        }
        let dom = numeric_domain(r.gen_range(1..=3));
        let mut i = random_structure(&mut r, &dom, &v, 0.5);
        cap_unknowns(&mut r, &mut i, 16);
        let mut props: Vec<PropagatorSpec> = enf_to_inf(&e).into_iter().map(PropagatorSpec::Inf).collect();
        props.push(PropagatorSpec::Inconsistency);
        let got = limit(&props, &i).map_err(err)?;
        let want = complete_propagate(&Theory::from_sentences([e.to_formula()]), &i).map_err(err)?;
        ensure(got == want, || format!("sentence {} on\n{}", e.to_formula(), foprop_core::io::print_structure(&i, None)))?;
        checked += 1;
        seen_agg += usize::from(e.to_formula().contains_aggregate());
    }
    Ok(format!("{checked} sentences, {seen_agg} with aggregates, {skipped} with unused head variables skipped"))
}

fn backend_equivalence() -> Outcome {
    let mut r = rng(12);
    for case in 0..600 {
        let infs = random_infs(&mut r);
        let dom = numeric_domain(r.gen_range(1..=3));
        let i = random_structure(&mut r, &dom, &shared_vocabulary(), 0.6);
        let props: Vec<PropagatorSpec> = infs.iter().cloned().map(PropagatorSpec::Inf).collect();
        let direct = tf_encode(&limit(&props, &i).map_err(err)?);
        let rules = emit_rule_set(&infs).map_err(err)?;
        let via_rules = least_model(&rules, &tf_encode(&i)).map_err(err)?;
        ensure(direct == via_rules, || format!("case {case}: {}", rules.to_datalog()))?;
    }
    Ok("600 instances".into())
}

fn symbolic_correctness() -> Outcome {
    let mut r = rng(13);
    let v = shared_vocabulary();
    for case in 0..600 {
        let pool = random_infs(&mut r);
        let len = r.gen_range(1..=6);
        let seq: Vec<InfSentence> = (0..len).map(|_| pool.choose(&mut r).unwrap().clone()).collect();
        let modes: BTreeMap<String, InputMode> = v
            .predicates
            .iter()
            .map(|p| (p.name.clone(), *[InputMode::TwoValued, InputMode::CtOnly, InputMode::NoInfo].choose(&mut r).unwrap()))
            .collect();
        let dom = numeric_domain(r.gen_range(1..=3));
        let i = random_structure(&mut r, &dom, &v, 0.0);
        let e = source_structure(&i, &modes);
        let mut phi = initial_symbolic(&v, &modes);
        let mut concrete = phi.apply_to_structure(&e).map_err(err)?;
        for s in &seq {
            phi = symbolic_inf_step(&phi, s).map_err(err)?;
            concrete = apply_inf(s, &concrete).map_err(err)?;
        }
        let symbolic = phi.apply_to_structure(&e).map_err(err)?;
        ensure(symbolic == concrete, || {
            let steps: Vec<String> = seq.iter().map(|s| s.to_string()).collect();
            format!("case {case}: {}", steps.join(" ; "))
        })?;
    }
    hamiltonian_walkthrough()?;
    Ok("600 sequences plus the walk-through".into())
}

fn inf(vars: &[&str], guard: &str, pred: &str, positive: bool) -> InfSentence {
    let atom = Atom::new(pred, vars.iter().map(|v| Term::var(*v)).collect());
    InfSentence::new(vars.iter().map(|v| v.to_string()).collect(), parse_formula(guard).unwrap(), InfHead::Literal { atom, positive })
}

fn hamiltonian_walkthrough() -> Result<(), String> {
    let v = Vocabulary::with_predicates([("Edge", 2), ("Start", 1), ("InHam", 2), ("Aux", 3)]);
    let modes = [("Edge", InputMode::TwoValued), ("Start", InputMode::TwoValued)].into_iter().map(|(p, m)| (p.to_string(), m)).collect();
    let steps = [
        inf(&["x", "y"], "~Edge(x,y)", "InHam", false),
        inf(&["x", "y"], "Start(y)", "InHam", false),
        inf(&["x", "y", "z"], "~InHam(x,y) & ~InHam(x,z)", "Aux", true),
    ];
    let expected = [
        ("InHam", Polarity::Cf, "~Edge(x,y)"),
        ("InHam", Polarity::Cf, "~Edge(x,y) | Start(y)"),
        ("Aux", Polarity::Ct, "(~Edge(x,y) | Start(y)) & (~Edge(x,z) | Start(z))"),
    ];
    let mut phi = initial_symbolic(&v, &modes);
    for (s, (pred, pol, want)) in steps.iter().zip(expected) {
        phi = symbolic_inf_step(&phi, s).map_err(err)?;
        let got = simplify_query(phi.query(pred, pol).ok_or("missing query")?);
        ensure(got.body == parse_formula(want).unwrap(), || format!("{pred}: got {}, want {want}", got.body))?;
    }
    Ok(())
}

fn soundness() -> Outcome {
    let mut r = rng(14);
    let (mut models, mut top) = (0, 0);
    for case in 0..1000 {
        let (text, t, i) = random_instance(&mut r, true, 20);
        let res = propagate(&t, &i, &PropagateConfig::default()).map_err(|e| format!("case {case}: {e}\n{text}"))?.structure;
        let ms = match enumerate_models(&t, &i, 1 << 20) {
            Ok(ms) => ms,
            Err(OracleError::Eval(_)) => continue,
            Err(e) => return Err(format!("case {case}: {e}")),
        };
        top += usize::from(res.is_top());
        for m in &ms {
            ensure(res.leq_p(m).unwrap(), || format!("case {case}: model below the propagation\n{text}"))?;
        }
        models += ms.len();
    }
    Ok(format!("1000 instances, {models} models, {top} inconsistent"))
}

fn closure(n: usize, edges: &BTreeSet<(usize, usize)>) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for s in 0..n {
        let mut stack = vec![s];
        let mut seen = BTreeSet::new();
        while let Some(a) = stack.pop() {
            for &(x, y) in edges {
                if x == a && seen.insert(y) {
                    stack.push(y);
                }
            }
        }
        out.extend(seen.into_iter().map(|y| (s, y)));
    }
    out
}

fn definitions() -> Outcome {
    let t = parse_theory("define { P <- P. }").map_err(err)?;
    let d = t.definitions().next().unwrap();
    let bottom = FourValuedStructure::new(numeric_domain(1), &Vocabulary::with_predicates([("P", 0)]));
    ensure(wfm(d, &bottom).map_err(err)?.value_of("P", &[]) == TruthValue::F, || "P <- P is not false".into())?;

    let reach = parse_theory("define { ! x y : Reach(x,y) <- Edge(x,y). ! x y : Reach(x,y) <- ? z : Reach(x,z) & Edge(z,y). }").map_err(err)?;
    let reach = reach.definitions().next().unwrap();
    let mut r = rng(15);
    for case in 0..120 {
        let n = r.gen_range(1..=8);
        let dom = numeric_domain(n);
        let mut i = FourValuedStructure::new(dom.clone(), &Vocabulary::with_predicates([("Edge", 2), ("Reach", 2)]));
        let mut edges = BTreeSet::new();
        for t in dom.all_tuples(2) {
            let on = r.gen_bool(0.25);
            if on {
                edges.insert((t[0] as usize, t[1] as usize));
            }
            i.set("Edge", t, TruthValue::from_bool(on)).unwrap();
        }
        let w = wfm(reach, &i).map_err(err)?;
        let want = closure(n, &edges);
        for t in dom.all_tuples(2) {
            let expect = TruthValue::from_bool(want.contains(&(t[0] as usize, t[1] as usize)));
            ensure(w.value("Reach", &t).unwrap() == expect, || format!("graph {case}: Reach{t:?}"))?;
        }
    }

    let mut total = 0;
    for case in 0..200 {
        let text = TheoryGen::new(&mut r, false).definition();
        let t = parse_theory(&text).map_err(err)?;
        let d = t.definitions().next().unwrap();
        let comp = completion(d);
        let dom = numeric_domain(r.gen_range(1..=2));
        let i = FourValuedStructure::new(dom, &theory_vocabulary(true));
        for m in enumerate_models(&t, &i, 1 << 16).map_err(err)? {
            for c in &comp {
                let v = evaluate(&m, c, &Assignment::default()).map_err(err)?;
                ensure(v == TruthValue::T, || format!("definition {case} violates {c}\n{text}"))?;
            }
            total += 1;
        }
    }
    Ok(format!("120 graphs, {total} models of 200 definitions"))
}

fn subset_oracle(items: &[(f64, TruthValue)], func: AggFn) -> (f64, f64) {
    let certain: Vec<f64> = items.iter().filter(|(_, v)| *v == TruthValue::T).map(|(x, _)| *x).collect();
    let unknown: Vec<f64> = items.iter().filter(|(_, v)| *v == TruthValue::U).map(|(x, _)| *x).collect();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for mask in 0u32..(1 << unknown.len()) {
        let chosen = certain.iter().copied().chain(unknown.iter().enumerate().filter(|(k, _)| mask & (1 << k) != 0).map(|(_, x)| *x));
        let v = match func {
            AggFn::Card => chosen.count() as f64,
            AggFn::Sum => chosen.sum(),
            AggFn::Prod => chosen.product(),
            AggFn::Min => chosen.fold(f64::INFINITY, f64::min),
            AggFn::Max => chosen.fold(f64::NEG_INFINITY, f64::max),
        };
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

fn aggregates() -> Outcome {
    let mut r = rng(16);
    for case in 0..1200 {
        let func = *AggFn::ALL.choose(&mut r).unwrap();
        let low = if func == AggFn::Prod { 0 } else { -3 };
        let n = r.gen_range(0..=14);
        let mut items: Vec<(f64, TruthValue)> = (0..n).map(|_| (r.gen_range(low..=4) as f64, random_value(&mut r, 0.5))).collect();
        let mut unknown = 0;
        for it in &mut items {
            if it.1 == TruthValue::U {
                unknown += 1;
                if unknown > 10 {
                    it.1 = TruthValue::T;
                }
            }
        }
        let got = bounds(&items, func).map_err(err)?;
        let want = subset_oracle(&items, func);
        ensure(got == want, || format!("case {case}: {} over {items:?}: {got:?} vs {want:?}", func.name()))?;
    }
    let mut sound = 0;
    for case in 0..400 {
        let (text, t, i) = random_instance(&mut r, true, 20);
        if !t.sentences().chain(t.definitions().flat_map(|d| d.rules.iter().map(|x| &x.body))).any(|f| f.contains_aggregate()) {
            continue;
        }
        let res = propagate(&t, &i, &PropagateConfig::default()).map_err(|e| format!("case {case}: {e}"))?.structure;
        let ms = match enumerate_models(&t, &i, 1 << 20) {
            Ok(ms) => ms,
            Err(OracleError::Eval(_)) => continue,
            Err(e) => return Err(format!("case {case}: {e}")),
        };
        for m in &ms {
            ensure(res.leq_p(m).unwrap(), || format!("case {case}: model below the propagation\n{text}"))?;
        }
        sound += 1;
    }
    Ok(format!("1200 bound checks, {sound} aggregate theories"))
}

fn chain(n: usize) -> String {
    let acts: Vec<String> = (0..=n).map(|k| format!("d{k}")).collect();
    let times: Vec<String> = (1..=n + 1).map(|k| k.to_string()).collect();
    let prec: Vec<String> = (0..n).map(|k| format!("(d{},d{})", k, k + 1)).collect();
    format!(
        "vocabulary {{ Action/1 Time/1 Prec/2 Do/2 }}\ndomain {{ {}, {} }}\ntheory {{\n  ! a ap t : Action(a) & Action(ap) & Time(t) & Prec(ap,a) & Do(a,t) => ? tp : Time(tp) & tp < t & Do(ap,tp).\n}}\nstructure {{\n  Action = {{ {} }}\n  Time = {{ {} }}\n  Prec = {{ {} }}\n  Do<ct> = {{ }}\n  Do<cf> = {{ }}\n}}\n",
        acts.join(", "),
        times.join(", "),
        acts.join(", "),
        times.join(", "),
        prec.join(", ")
    )
}

/// Least-squares slope of `ys` against `xs`.
fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

fn chain_scaling() -> Outcome {
    let sizes = [10usize, 20, 40, 80];
    let mut secs = Vec::new();
    for n in sizes {
        let p = parse_problem(&chain(n)).map_err(err)?;
        let start = Instant::now();
        let res = propagate(&p.theory, &p.structure, &PropagateConfig::default()).map_err(err)?;
        let took = start.elapsed();
        let last = format!("d{n}");
        for t in 1..=n {
            let v = res.structure.value_of("Do", &[last.as_str(), &t.to_string()]);
            ensure(v == TruthValue::F, || format!("n={n}: Do({last},{t}) = {}", v.symbol()))?;
        }
        ensure(took < Duration::from_secs(10), || format!("n={n} took {took:?}"))?;
        secs.push(took.as_secs_f64());
    }
    let xs: Vec<f64> = sizes.iter().map(|n| (*n as f64).ln()).collect();
    let ys: Vec<f64> = secs.iter().map(|s| s.ln()).collect();
    let degree = slope(&xs, &ys);
    let times: Vec<String> = secs.iter().map(|s| format!("{s:.2}s")).collect();
    ensure(degree <= 3.0, || format!("fitted degree {degree:.2} ({})", times.join(", ")))?;
    Ok(format!("fitted degree {degree:.2} ({})", times.join(", ")))
}

fn confluence() -> Outcome {
    let mut r = rng(17);
    for case in 0..100 {
        let (text, t, i) = random_instance(&mut r, true, 20);
        let base = propagate(&t, &i, &PropagateConfig::default()).map_err(err)?.structure;
        for seed in 0..20u64 {
            let cfg = PropagateConfig { schedule: Schedule::Random(seed * 7919 + case), ..PropagateConfig::default() };
            let other = propagate(&t, &i, &cfg).map_err(err)?.structure;
            ensure(other == base, || format!("case {case}, schedule {seed}\n{text}"))?;
        }
    }
    Ok("100 instances x 20 schedules".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("student example", student_reproduction),
        ("oracle agreement on student", student_oracle),
        ("precision gaps", precision_gaps),
        ("single-sentence precision", single_sentence_precision),
        ("backend equivalence", backend_equivalence),
        ("symbolic correctness", symbolic_correctness),
        ("soundness", soundness),
        ("inductive definitions", definitions),
        ("aggregates", aggregates),
        ("chain scaling", chain_scaling),
        ("confluence", confluence),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) if detail.is_empty() => println!("PASS {name}"),
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
