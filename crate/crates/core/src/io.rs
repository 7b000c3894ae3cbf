//! The `.fop` problem format and the JSON structure interchange format.
//!
//! ```text
//! vocabulary { Module/1 Selected/1 In/2 function C/0 }
//! domain { m1, m2, c1 }
//! theory {
//!   ? m : Module(m) & Selected(m).
//!   define { ! x y : Reach(x,y) <- Edge(x,y). }
//! }
//! structure {
//!   Module = { m1, m2 }
//!   Selected<ct> = { c1 }
//!   Selected<cf> = { }
//! }
//! input { Module : two_valued  Selected : ct_only }
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt::{self, Write as _};
use std::sync::Arc;

use serde_json::{json, Map, Value as Json};
use thiserror::Error;

use crate::structure::{Domain, FourValuedStructure, Tuple, TruthValue};
use crate::syntax::{
    AggAtom, AggCmp, AggFn, Atom, CmpOp, Definition, Formula, QueryDef, Rule, SetExpr, Term, Theory,
    TheoryElement, Vocabulary,
};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{line}:{col}: {msg}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

/// How symbolic propagation treats a predicate of the input structure.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputMode {
    TwoValued,
    CtOnly,
    NoInfo,
}

impl InputMode {
    fn keyword(self) -> &'static str {
        match self {
            InputMode::TwoValued => "two_valued",
            InputMode::CtOnly => "ct_only",
            InputMode::NoInfo => "no_info",
        }
    }
}

/// A theory together with a partial structure to propagate.
#[derive(Clone, Debug, PartialEq)]
pub struct Problem {
    pub vocabulary: Vocabulary,
    pub theory: Theory,
    pub structure: FourValuedStructure,
    pub inputs: BTreeMap<String, InputMode>,
}

impl Problem {
    pub fn domain(&self) -> &Arc<Domain> {
        self.structure.domain_arc()
    }

    /// Declared input modes, completed from the structure for undeclared
    /// predicates: two-valued relations are two-valued inputs, relations
    /// without certainly-false tuples are ct-only inputs.
    pub fn input_modes(&self) -> BTreeMap<String, InputMode> {
        self.vocabulary
            .predicates
            .iter()
            .map(|p| {
                let n = self.structure.domain().len();
                let inferred = || match self.structure.relation(&p.name) {
                    Some(r) if r.ct.is_empty() && r.cf.is_empty() => InputMode::NoInfo,
                    Some(r) if r.is_two_valued(n) => InputMode::TwoValued,
                    Some(r) if r.cf.is_empty() => InputMode::CtOnly,
                    _ => InputMode::NoInfo,
                };
                (p.name.clone(), self.inputs.get(&p.name).copied().unwrap_or_else(inferred))
            })
            .collect()
    }
}

// ---------------------------------------------------------------- lexing

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Sym(&'static str),
    Eof,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

const SYMBOLS: [&str; 22] = [
    "<=>", "<-", "=>", "=<", ">=", "~=", "<", ">", "=", "~", "!", "?", "&", "|", "(", ")", "{", "}", ",", ".", ":", "/",
];

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    let err = |line, col, msg: String| ParseError { line, col, msg };
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let start = (line, col);
        if c.is_ascii_alphabetic() || c == '_' {
            let s = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || chars[i] == '\'') {
                i += 1;
            }
            let word: String = chars[s..i].iter().collect();
            col += i - s;
            out.push(Token { tok: Tok::Ident(word), line: start.0, col: start.1 });
            continue;
        }
        let digit_at = |k: usize| chars.get(k).is_some_and(|c| c.is_ascii_digit());
        if c.is_ascii_digit() || (c == '-' && digit_at(i + 1)) {
            let s = i;
            i += 1;
            while digit_at(i) {
                i += 1;
            }
            if chars.get(i) == Some(&'.') && digit_at(i + 1) {
                i += 1;
                while digit_at(i) {
                    i += 1;
                }
            }
            let raw: String = chars[s..i].iter().collect();
            col += i - s;
            let x = raw.parse::<f64>().map_err(|_| err(start.0, start.1, format!("bad numeral `{raw}`")))?;
            out.push(Token { tok: Tok::Num(x), line: start.0, col: start.1 });
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 3)].iter().collect();
        match SYMBOLS.iter().find(|s| rest.starts_with(**s)) {
            Some(s) => {
                i += s.len();
                col += s.len();
                out.push(Token { tok: Tok::Sym(s), line: start.0, col: start.1 });
            }
            None => return Err(err(line, col, format!("unexpected character `{c}`"))),
        }
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}

// ---------------------------------------------------------------- parsing

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

type PResult<T> = Result<T, ParseError>;

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Num(x) => format!("`{x}`"),
        Tok::Sym(s) => format!("`{s}`"),
        Tok::Eof => "end of input".into(),
    }
}

impl Parser {
    fn new(text: &str) -> PResult<Parser> {
        Ok(Parser { toks: lex(text)?, pos: 0 })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, msg: impl Into<String>) -> PResult<T> {
        let t = &self.toks[self.pos];
        Err(ParseError { line: t.line, col: t.col, msg: msg.into() })
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn is_word(&self, w: &str) -> bool {
        matches!(self.peek(), Tok::Ident(x) if x == w)
    }

    fn eat(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, s: &str) -> PResult<()> {
        if self.eat(s) {
            Ok(())
        } else {
            let found = describe(self.peek());
            self.error(format!("expected `{s}`, found {found}"))
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            t => self.error(format!("expected an identifier, found {}", describe(&t))),
        }
    }

    fn expect_eof(&mut self) -> PResult<()> {
        match self.peek() {
            Tok::Eof => Ok(()),
            t => {
                let d = describe(t);
                self.error(format!("unexpected {d}"))
            }
        }
    }

    // formula := ('!' | '?') vars ':' formula | equiv
    fn formula(&mut self) -> PResult<Formula> {
        if self.is_sym("!") || self.is_sym("?") {
            let universal = self.is_sym("!");
            self.bump();
            let vars = self.var_list()?;
            self.expect(":")?;
            let body = self.formula()?;
            return Ok(if universal {
                Formula::Forall(vars, Box::new(body))
            } else {
                Formula::Exists(vars, Box::new(body))
            });
        }
        let lhs = self.implication()?;
        if self.eat("<=>") {
            let rhs = self.implication()?;
            return Ok(Formula::equiv(lhs, rhs));
        }
        Ok(lhs)
    }

    fn var_list(&mut self) -> PResult<Vec<String>> {
        let mut vars = vec![self.ident()?];
        while let Tok::Ident(_) = self.peek() {
            vars.push(self.ident()?);
        }
        Ok(vars)
    }

    fn implication(&mut self) -> PResult<Formula> {
        let lhs = self.disjunction()?;
        if self.eat("=>") {
            let rhs = if self.is_sym("!") || self.is_sym("?") { self.formula()? } else { self.implication()? };
            return Ok(Formula::implies(lhs, rhs));
        }
        Ok(lhs)
    }

    fn disjunction(&mut self) -> PResult<Formula> {
        let mut parts = vec![self.conjunction()?];
        while self.eat("|") {
            parts.push(self.conjunction()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Formula::Or(parts) })
    }

    fn conjunction(&mut self) -> PResult<Formula> {
        let mut parts = vec![self.unary()?];
        while self.eat("&") {
            parts.push(self.unary()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Formula::And(parts) })
    }

    fn unary(&mut self) -> PResult<Formula> {
        if self.eat("~") {
            return Ok(Formula::not(self.unary()?));
        }
        if self.is_sym("!") || self.is_sym("?") {
            return self.formula();
        }
        self.primary()
    }

    fn primary(&mut self) -> PResult<Formula> {
        if self.eat("(") {
            let f = self.formula()?;
            self.expect(")")?;
            return Ok(f);
        }
        if self.is_word("true") && !self.next_is_cmp(1) {
            self.bump();
            return Ok(Formula::True);
        }
        if self.is_word("false") && !self.next_is_cmp(1) {
            self.bump();
            return Ok(Formula::False);
        }
        match self.peek().clone() {
            Tok::Num(_) => {
                let t = self.term()?;
                self.comparison(t)
            }
            Tok::Ident(name) => {
                let save = self.pos;
                self.bump();
                let args = if self.is_sym("(") { Some(self.term_args()?) } else { None };
                if self.at_cmp() {
                    let t = match args {
                        Some(a) => Term::App(name, a),
                        None => Term::Var(name),
                    };
                    return self.comparison(t);
                }
                if AggFn::from_name(&name).is_some() && self.is_sym("{") {
                    self.pos = save;
                    return self.error("an aggregate must appear to the right of a comparison");
                }
                Ok(Formula::Atom(Atom::new(name, args.unwrap_or_default())))
            }
            t => self.error(format!("expected a formula, found {}", describe(&t))),
        }
    }

    fn next_is_cmp(&self, k: usize) -> bool {
        matches!(self.peek_at(k), Tok::Sym("=" | "~=" | "<" | "=<" | ">" | ">="))
    }

    fn at_cmp(&self) -> bool {
        self.next_is_cmp(0)
    }

    fn comparison(&mut self, lhs: Term) -> PResult<Formula> {
        let op = match self.bump() {
            Tok::Sym(s) => s,
            _ => unreachable!("checked by caller"),
        };
        if let Tok::Ident(w) = self.peek().clone() {
            if let Some(func) = AggFn::from_name(&w) {
                if matches!(self.peek_at(1), Tok::Sym("{")) {
                    self.bump();
                    let cmp = match op {
                        ">=" => AggCmp::Ge,
                        "=<" => AggCmp::Le,
                        ">" => AggCmp::Gt,
                        "<" => AggCmp::Lt,
                        "=" => AggCmp::Eq,
                        _ => return self.error(format!("`{op}` cannot compare with an aggregate")),
                    };
                    let set = self.set_expr()?;
                    return Ok(Formula::Agg(Box::new(AggAtom { term: lhs, cmp, func, set })));
                }
            }
        }
        let rhs = self.term()?;
        Ok(match op {
            "=" => Formula::Cmp(CmpOp::Eq, lhs, rhs),
            "~=" => Formula::Cmp(CmpOp::Ne, lhs, rhs),
            "<" => Formula::Cmp(CmpOp::Lt, lhs, rhs),
            "=<" => Formula::Cmp(CmpOp::Le, lhs, rhs),
            ">" => Formula::Cmp(CmpOp::Lt, rhs, lhs),
            ">=" => Formula::Cmp(CmpOp::Le, rhs, lhs),
            _ => unreachable!(),
        })
    }

    // set := '{' vars? ':' formula '}'
    fn set_expr(&mut self) -> PResult<SetExpr> {
        self.expect("{")?;
        let vars = if self.is_sym(":") { Vec::new() } else { self.var_list()? };
        self.expect(":")?;
        let cond = self.formula()?;
        self.expect("}")?;
        Ok(SetExpr { vars, cond: Box::new(cond) })
    }

    fn term(&mut self) -> PResult<Term> {
        match self.peek().clone() {
            Tok::Num(x) => {
                self.bump();
                Ok(Term::Num(x))
            }
            Tok::Ident(name) => {
                self.bump();
                if self.is_sym("(") {
                    Ok(Term::App(name, self.term_args()?))
                } else {
                    Ok(Term::Var(name))
                }
            }
            t => self.error(format!("expected a term, found {}", describe(&t))),
        }
    }

    fn term_args(&mut self) -> PResult<Vec<Term>> {
        self.expect("(")?;
        let mut args = Vec::new();
        if !self.is_sym(")") {
            args.push(self.term()?);
            while self.eat(",") {
                args.push(self.term()?);
            }
        }
        self.expect(")")?;
        Ok(args)
    }

    fn rule(&mut self) -> PResult<Rule> {
        let vars = if self.eat("!") {
            let v = self.var_list()?;
            self.expect(":")?;
            v
        } else {
            Vec::new()
        };
        let pred = self.ident()?;
        let args = if self.is_sym("(") { self.term_args()? } else { Vec::new() };
        self.expect("<-")?;
        let body = self.formula()?;
        self.expect(".")?;
        Ok(Rule { vars, head: Atom::new(pred, args), body })
    }

    fn theory_block(&mut self) -> PResult<Theory> {
        self.expect("{")?;
        let mut t = Theory::new();
        while !self.is_sym("}") {
            if self.is_word("define") && matches!(self.peek_at(1), Tok::Sym("{")) {
                self.bump();
                self.bump();
                let mut d = Definition::default();
                while !self.eat("}") {
                    d.rules.push(self.rule()?);
                }
                t.elements.push(TheoryElement::Definition(d));
            } else {
                let f = self.formula()?;
                self.expect(".")?;
                t.push(f);
            }
        }
        self.bump();
        Ok(t)
    }

    fn element(&mut self) -> PResult<(String, usize, usize)> {
        let (line, col) = (self.toks[self.pos].line, self.toks[self.pos].col);
        match self.bump() {
            Tok::Ident(s) => Ok((s, line, col)),
            Tok::Num(x) => Ok((format_num(x), line, col)),
            t => Err(ParseError { line, col, msg: format!("expected a domain element, found {}", describe(&t)) }),
        }
    }

    fn tuple(&mut self) -> PResult<Vec<(String, usize, usize)>> {
        if self.eat("(") {
            let mut v = Vec::new();
            if !self.is_sym(")") {
                v.push(self.element()?);
                while self.eat(",") {
                    v.push(self.element()?);
                }
            }
            self.expect(")")?;
            Ok(v)
        } else {
            Ok(vec![self.element()?])
        }
    }
}

/// Parses a single formula.
pub fn parse_formula(text: &str) -> Result<Formula, ParseError> {
    let mut p = Parser::new(text)?;
    let f = p.formula()?;
    p.expect_eof()?;
    Ok(f)
}

/// Parses a query `{ x y : body }`.
pub fn parse_query(text: &str) -> Result<QueryDef, ParseError> {
    let mut p = Parser::new(text)?;
    let set = p.set_expr()?;
    p.expect_eof()?;
    Ok(QueryDef { vars: set.vars, body: *set.cond })
}

/// Parses a bare theory body: sentences and `define` blocks.
pub fn parse_theory(text: &str) -> Result<Theory, ParseError> {
    let mut p = Parser::new(&format!("{{{text}\n}}"))?;
    let t = p.theory_block()?;
    p.expect_eof()?;
    Ok(t)
}

struct RawInterp {
    pred: String,
    kind: Option<&'static str>,
    tuples: Vec<Vec<(String, usize, usize)>>,
    line: usize,
    col: usize,
}

/// Parses a `.fop` problem.
pub fn parse_problem(text: &str) -> Result<Problem, ParseError> {
    let mut p = Parser::new(text)?;
    let mut vocab: Option<Vocabulary> = None;
    let mut domain: Option<(Vec<(String, usize, usize)>, usize, usize)> = None;
    let mut theory = Theory::new();
    let mut interps: Vec<RawInterp> = Vec::new();
    let mut inputs: Vec<(String, InputMode, usize, usize)> = Vec::new();
    while *p.peek() != Tok::Eof {
        let (line, col) = (p.toks[p.pos].line, p.toks[p.pos].col);
        let word = p.ident()?;
        match word.as_str() {
            "vocabulary" => {
                p.expect("{")?;
                let mut v = vocab.take().unwrap_or_default();
                while !p.eat("}") {
                    let is_fn = p.is_word("function") && matches!(p.peek_at(1), Tok::Ident(_));
                    if is_fn {
                        p.bump();
                    }
                    let name = p.ident()?;
                    p.expect("/")?;
                    let arity = match p.bump() {
                        Tok::Num(x) if x >= 0.0 && x.fract() == 0.0 => x as usize,
                        _ => return p.error("expected an arity"),
                    };
                    if v.predicate(&name).is_some() || v.function(&name).is_some() {
                        return Err(ParseError { line, col, msg: format!("symbol `{name}` declared twice") });
                    }
                    if is_fn {
                        v.add_function(name, arity);
                    } else {
                        v.add_predicate(name, arity);
                    }
                    p.eat(",");
                }
                vocab = Some(v);
            }
            "domain" => {
                p.expect("{")?;
                let mut elems = Vec::new();
                if !p.is_sym("}") {
                    elems.push(p.element()?);
                    while p.eat(",") {
                        elems.push(p.element()?);
                    }
                }
                p.expect("}")?;
                domain = Some((elems, line, col));
            }
            "theory" => {
                let t = p.theory_block()?;
                theory.elements.extend(t.elements);
            }
            "structure" => {
                p.expect("{")?;
                while !p.eat("}") {
                    let (line, col) = (p.toks[p.pos].line, p.toks[p.pos].col);
                    let pred = p.ident()?;
                    let kind = if p.eat("<") {
                        let k = match p.ident()?.as_str() {
                            "ct" => "ct",
                            "cf" => "cf",
                            other => return p.error(format!("expected `ct` or `cf`, found `{other}`")),
                        };
                        p.expect(">")?;
                        Some(k)
                    } else {
                        None
                    };
                    p.expect("=")?;
                    p.expect("{")?;
                    let mut tuples = Vec::new();
                    if !p.is_sym("}") {
                        tuples.push(p.tuple()?);
                        while p.eat(",") {
                            tuples.push(p.tuple()?);
                        }
                    }
                    p.expect("}")?;
                    interps.push(RawInterp { pred, kind, tuples, line, col });
                }
            }
            "input" => {
                p.expect("{")?;
                while !p.eat("}") {
                    let (line, col) = (p.toks[p.pos].line, p.toks[p.pos].col);
                    let pred = p.ident()?;
                    p.expect(":")?;
                    let mode = match p.ident()?.as_str() {
                        "two_valued" => InputMode::TwoValued,
                        "ct_only" => InputMode::CtOnly,
                        "no_info" => InputMode::NoInfo,
                        other => return p.error(format!("unknown input mode `{other}`")),
                    };
                    inputs.push((pred, mode, line, col));
                    p.eat(",");
                }
            }
            other => return Err(ParseError { line, col, msg: format!("unknown section `{other}`") }),
        }
    }
    let vocab = vocab.unwrap_or_default();
    let (elems, dl, dc) = domain.ok_or(ParseError { line: 1, col: 1, msg: "missing domain section".into() })?;
    let dom = Domain::new(elems.iter().map(|(n, _, _)| n.clone()))
        .map_err(|e| ParseError { line: dl, col: dc, msg: e.to_string() })?;
    let dom = Arc::new(dom);
    let theory = resolve_constants(theory, &vocab);
    let structure = build_structure(&dom, &vocab, interps)?;
    let mut modes = BTreeMap::new();
    for (pred, mode, line, col) in inputs {
        if vocab.predicate(&pred).is_none() {
            return Err(ParseError { line, col, msg: format!("unknown predicate `{pred}`") });
        }
        modes.insert(pred, mode);
    }
    Ok(Problem { vocabulary: vocab, theory, structure, inputs: modes })
}

fn build_structure(dom: &Arc<Domain>, vocab: &Vocabulary, interps: Vec<RawInterp>) -> Result<FourValuedStructure, ParseError> {
    let mut s = FourValuedStructure::new(dom.clone(), vocab);
    let mut seen: HashSet<(String, &'static str)> = HashSet::new();
    for ri in interps {
        let err = |msg: String| ParseError { line: ri.line, col: ri.col, msg };
        let arity = vocab.predicate(&ri.pred).ok_or_else(|| err(format!("unknown predicate `{}`", ri.pred)))?.arity;
        let kinds: &[&'static str] = match ri.kind {
            None => &["ct", "cf"],
            Some("ct") => &["ct"],
            Some(_) => &["cf"],
        };
        for k in kinds {
            if !seen.insert((ri.pred.clone(), k)) {
                return Err(err(format!("`{}` is interpreted twice", ri.pred)));
            }
        }
        let mut set = rustc_hash::FxHashSet::default();
        for t in &ri.tuples {
            if t.len() != arity {
                return Err(err(format!("`{}` has arity {arity}, got a tuple of length {}", ri.pred, t.len())));
            }
            let mut tup = Tuple::new();
            for (n, line, col) in t {
                let e = dom
                    .lookup(n)
                    .ok_or_else(|| ParseError { line: *line, col: *col, msg: format!("unknown domain element `{n}`") })?;
                tup.push(e);
            }
            set.insert(tup);
        }
        let r = s.relation_mut(&ri.pred).unwrap();
        match ri.kind {
            None => {
                r.cf = dom.all_tuples(arity).filter(|t| !set.contains(t)).collect();
                r.ct = set;
            }
            Some("ct") => r.ct = set,
            Some(_) => r.cf = set,
        }
    }
    Ok(s)
}

/// Free identifiers naming declared constants become 0-ary applications.
pub fn resolve_constants(t: Theory, v: &Vocabulary) -> Theory {
    let consts: HashSet<String> = v.functions.iter().filter(|f| f.arity == 0).map(|f| f.name.clone()).collect();
    if consts.is_empty() {
        return t;
    }
    let elements = t
        .elements
        .into_iter()
        .map(|e| match e {
            TheoryElement::Sentence(f) => TheoryElement::Sentence(resolve_in(&f, &consts, &mut Vec::new())),
            TheoryElement::Definition(d) => TheoryElement::Definition(Definition {
                rules: d
                    .rules
                    .into_iter()
                    .map(|r| {
                        let mut bound = r.vars.clone();
                        let body = resolve_in(&r.body, &consts, &mut bound);
                        Rule { vars: r.vars, head: r.head, body }
                    })
                    .collect(),
            }),
        })
        .collect();
    Theory { elements }
}

fn resolve_term(t: &Term, consts: &HashSet<String>, bound: &[String]) -> Term {
    match t {
        Term::Var(x) if consts.contains(x) && !bound.contains(x) => Term::App(x.clone(), vec![]),
        Term::App(f, args) => Term::App(f.clone(), args.iter().map(|a| resolve_term(a, consts, bound)).collect()),
        _ => t.clone(),
    }
}

fn resolve_in(f: &Formula, consts: &HashSet<String>, bound: &mut Vec<String>) -> Formula {
    let rt = |t: &Term, bound: &[String]| resolve_term(t, consts, bound);
    match f {
        Formula::True | Formula::False => f.clone(),
        Formula::Atom(a) => Formula::Atom(Atom::new(a.pred.clone(), a.args.iter().map(|t| rt(t, bound)).collect())),
        Formula::Cmp(op, l, r) => Formula::Cmp(*op, rt(l, bound), rt(r, bound)),
        Formula::Not(a) => Formula::not(resolve_in(a, consts, bound)),
        Formula::And(xs) => Formula::And(xs.iter().map(|x| resolve_in(x, consts, bound)).collect()),
        Formula::Or(xs) => Formula::Or(xs.iter().map(|x| resolve_in(x, consts, bound)).collect()),
        Formula::Implies(a, b) => Formula::implies(resolve_in(a, consts, bound), resolve_in(b, consts, bound)),
        Formula::Equiv(a, b) => Formula::equiv(resolve_in(a, consts, bound), resolve_in(b, consts, bound)),
        Formula::Forall(vs, b) | Formula::Exists(vs, b) => {
            let n = bound.len();
            bound.extend(vs.iter().cloned());
            let body = resolve_in(b, consts, bound);
            bound.truncate(n);
            if matches!(f, Formula::Forall(..)) {
                Formula::Forall(vs.clone(), Box::new(body))
            } else {
                Formula::Exists(vs.clone(), Box::new(body))
            }
        }
        Formula::Agg(a) => {
            let term = rt(&a.term, bound);
            let n = bound.len();
            bound.extend(a.set.vars.iter().cloned());
            let cond = resolve_in(&a.set.cond, consts, bound);
            bound.truncate(n);
            Formula::Agg(Box::new(AggAtom {
                term,
                cmp: a.cmp,
                func: a.func,
                set: SetExpr { vars: a.set.vars.clone(), cond: Box::new(cond) },
            }))
        }
    }
}

// ---------------------------------------------------------------- printing

pub fn format_num(x: f64) -> String {
    format!("{x}")
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => f.write_str(v),
            Term::Num(x) => f.write_str(&format_num(*x)),
            Term::App(name, args) if args.is_empty() => f.write_str(name),
            Term::App(name, args) => {
                write!(f, "{name}(")?;
                write_list(f, args)?;
                f.write_str(")")
            }
        }
    }
}

fn write_list<T: fmt::Display>(f: &mut fmt::Formatter<'_>, xs: &[T]) -> fmt::Result {
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            f.write_str(",")?;
        }
        write!(f, "{x}")?;
    }
    Ok(())
}

fn prec(f: &Formula) -> u8 {
    match f {
        Formula::Forall(..) | Formula::Exists(..) => 0,
        Formula::Equiv(..) => 1,
        Formula::Implies(..) => 2,
        Formula::Or(xs) if xs.len() > 1 => 3,
        Formula::And(xs) if xs.len() > 1 => 4,
        Formula::Not(_) => 5,
        _ => 6,
    }
}

fn write_formula(f: &Formula, ctx: u8, out: &mut fmt::Formatter<'_>) -> fmt::Result {
    let p = prec(f);
    let paren = p < ctx || (p == 0 && ctx > 0);
    if paren {
        out.write_str("(")?;
    }
    match f {
        Formula::True => out.write_str("true")?,
        Formula::False => out.write_str("false")?,
        Formula::Atom(a) => {
            out.write_str(&a.pred)?;
            if !a.args.is_empty() {
                out.write_str("(")?;
                write_list(out, &a.args)?;
                out.write_str(")")?;
            }
        }
        Formula::Cmp(op, l, r) => match op {
            CmpOp::Eq => write!(out, "{l} = {r}")?,
            CmpOp::Ne => write!(out, "{l} ~= {r}")?,
            CmpOp::Lt => write!(out, "{l} < {r}")?,
            CmpOp::Le => write!(out, "{l} =< {r}")?,
            CmpOp::Nlt => write!(out, "~({l} < {r})")?,
            CmpOp::Nle => write!(out, "~({l} =< {r})")?,
        },
        Formula::Agg(a) => {
            let op = match a.cmp {
                AggCmp::Ge => ">=",
                AggCmp::Le => "=<",
                AggCmp::Gt => ">",
                AggCmp::Lt => "<",
                AggCmp::Eq => "=",
            };
            write!(out, "{} {op} {}{{ ", a.term, a.func.name())?;
            for v in &a.set.vars {
                write!(out, "{v} ")?;
            }
            out.write_str(": ")?;
            write_formula(&a.set.cond, 0, out)?;
            out.write_str(" }")?;
        }
        Formula::Not(a) => {
            out.write_str("~")?;
            write_formula(a, 5, out)?;
        }
        Formula::And(xs) | Formula::Or(xs) if xs.is_empty() => {
            out.write_str(if matches!(f, Formula::And(_)) { "true" } else { "false" })?
        }
        Formula::And(xs) if xs.len() == 1 => write_formula(&xs[0], ctx, out)?,
        Formula::Or(xs) if xs.len() == 1 => write_formula(&xs[0], ctx, out)?,
        Formula::And(xs) => {
            for (i, x) in xs.iter().enumerate() {
                if i > 0 {
                    out.write_str(" & ")?;
                }
                write_formula(x, 5, out)?;
            }
        }
        Formula::Or(xs) => {
            for (i, x) in xs.iter().enumerate() {
                if i > 0 {
                    out.write_str(" | ")?;
                }
                write_formula(x, 4, out)?;
            }
        }
        Formula::Implies(a, b) => {
            write_formula(a, 3, out)?;
            out.write_str(" => ")?;
            write_formula(b, 3, out)?;
        }
        Formula::Equiv(a, b) => {
            write_formula(a, 2, out)?;
            out.write_str(" <=> ")?;
            write_formula(b, 2, out)?;
        }
        Formula::Forall(vs, b) | Formula::Exists(vs, b) => {
            out.write_str(if matches!(f, Formula::Forall(..)) { "! " } else { "? " })?;
            out.write_str(&vs.join(" "))?;
            out.write_str(" : ")?;
            write_formula(b, 0, out)?;
        }
    }
    if paren {
        out.write_str(")")?;
    }
    Ok(())
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_formula(self, 0, f)
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.vars.is_empty() {
            write!(f, "! {} : ", self.vars.join(" "))?;
        }
        write!(f, "{} <- {}.", Formula::Atom(self.head.clone()), self.body)
    }
}

impl fmt::Display for QueryDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{ ")?;
        for v in &self.vars {
            write!(f, "{v} ")?;
        }
        write!(f, ": {} }}", self.body)
    }
}

/// Theory body lines, indented by `indent` spaces.
pub fn print_theory(t: &Theory, indent: usize) -> String {
    let pad = " ".repeat(indent);
    let mut s = String::new();
    for e in &t.elements {
        match e {
            TheoryElement::Sentence(f) => {
                let _ = writeln!(s, "{pad}{f}.");
            }
            TheoryElement::Definition(d) => {
                let _ = writeln!(s, "{pad}define {{");
                for r in &d.rules {
                    let _ = writeln!(s, "{pad}  {r}");
                }
                let _ = writeln!(s, "{pad}}}");
            }
        }
    }
    s
}

fn tuple_text(dom: &Domain, t: &[crate::structure::Elem]) -> String {
    if t.len() == 1 {
        dom.name(t[0]).to_string()
    } else {
        format!("({})", dom.tuple_names(t).join(","))
    }
}

fn set_text<'a>(dom: &Domain, tuples: impl IntoIterator<Item = &'a Tuple>) -> String {
    let sorted = dom.sorted(tuples);
    if sorted.is_empty() {
        "{ }".into()
    } else {
        format!("{{ {} }}", sorted.iter().map(|t| tuple_text(dom, t)).collect::<Vec<_>>().join(", "))
    }
}

/// The `structure { ... }` block. Predicates appear in `order` when given,
/// otherwise by name; predicates with only unknown atoms are omitted.
pub fn print_structure(s: &FourValuedStructure, order: Option<&Vocabulary>) -> String {
    let dom = s.domain();
    let names: Vec<String> = match order {
        Some(v) => v.predicates.iter().map(|p| p.name.clone()).filter(|n| s.has_predicate(n)).collect(),
        None => s.relations().keys().cloned().collect(),
    };
    let mut out = String::from("structure {\n");
    for n in names {
        let r = s.relation(&n).unwrap();
        if r.ct.is_empty() && r.cf.is_empty() {
            continue;
        }
        let full = dom.len().pow(r.arity as u32);
        if r.ct.is_disjoint(&r.cf) && r.ct.len() + r.cf.len() == full {
            let _ = writeln!(out, "  {n} = {}", set_text(dom, &r.ct));
        } else {
            let _ = writeln!(out, "  {n}<ct> = {}", set_text(dom, &r.ct));
            let _ = writeln!(out, "  {n}<cf> = {}", set_text(dom, &r.cf));
        }
    }
    out.push_str("}\n");
    out
}

/// Canonical text of a problem; `parse_problem` inverts it.
pub fn print_problem(p: &Problem) -> String {
    let mut out = String::from("vocabulary {\n");
    for s in &p.vocabulary.predicates {
        let _ = writeln!(out, "  {}/{}", s.name, s.arity);
    }
    for s in &p.vocabulary.functions {
        let _ = writeln!(out, "  function {}/{}", s.name, s.arity);
    }
    out.push_str("}\n");
    let _ = writeln!(out, "domain {{ {} }}", p.structure.domain().names().join(", "));
    out.push_str("theory {\n");
    out.push_str(&print_theory(&p.theory, 2));
    out.push_str("}\n");
    out.push_str(&print_structure(&p.structure, Some(&p.vocabulary)));
    if !p.inputs.is_empty() {
        out.push_str("input {\n");
        for (n, m) in &p.inputs {
            let _ = writeln!(out, "  {n} : {}", m.keyword());
        }
        out.push_str("}\n");
    }
    out
}

// ---------------------------------------------------------------- interchange

/// `{"domain": [...], "predicates": {"P": [[["a","b"], "t"], ...]}}`; unknown
/// atoms are omitted.
pub fn structure_to_json(s: &FourValuedStructure) -> Json {
    let dom = s.domain();
    let mut preds = Map::new();
    for (n, r) in s.relations() {
        let mut tuples: Vec<&Tuple> = r.ct.union(&r.cf).collect();
        tuples.sort_by(|a, b| dom.cmp_tuples(a, b));
        let entries: Vec<Json> =
            tuples.into_iter().map(|t| json!([dom.tuple_names(t), r.value(t).symbol()])).collect();
        preds.insert(n.clone(), Json::Array(entries));
    }
    json!({ "domain": dom.names(), "predicates": preds })
}

#[derive(Debug, Error, PartialEq)]
pub enum InterchangeError {
    #[error("malformed structure document: {0}")]
    Malformed(String),
    #[error(transparent)]
    Structure(#[from] crate::structure::StructureError),
}

/// Reads the interchange document; predicates are taken from `vocab`.
pub fn structure_from_json(v: &Json, vocab: &Vocabulary) -> Result<FourValuedStructure, InterchangeError> {
    let bad = |m: &str| InterchangeError::Malformed(m.to_string());
    let names: Vec<String> = v
        .get("domain")
        .and_then(Json::as_array)
        .ok_or_else(|| bad("missing domain"))?
        .iter()
        .map(|x| x.as_str().map(str::to_string).ok_or_else(|| bad("domain elements must be strings")))
        .collect::<Result<_, _>>()?;
    let dom = Arc::new(Domain::new(names)?);
    let mut s = FourValuedStructure::new(dom.clone(), vocab);
    if let Some(preds) = v.get("predicates") {
        let preds = preds.as_object().ok_or_else(|| bad("predicates must be an object"))?;
        for (n, entries) in preds {
            for e in entries.as_array().ok_or_else(|| bad("predicate entries must be a list"))? {
                let pair = e.as_array().filter(|a| a.len() == 2).ok_or_else(|| bad("entry must be [tuple, value]"))?;
                let elems: Vec<String> = pair[0]
                    .as_array()
                    .ok_or_else(|| bad("tuple must be a list"))?
                    .iter()
                    .map(|x| x.as_str().map(str::to_string).ok_or_else(|| bad("tuple elements must be strings")))
                    .collect::<Result<_, _>>()?;
                let val = pair[1].as_str().and_then(TruthValue::from_symbol).ok_or_else(|| bad("bad truth value"))?;
                let t = dom.tuple(&elems)?;
                s.set(n, t, val)?;
            }
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    const STUDENT: &str = "
vocabulary { Module/1 Selected/1 In/2 MutExcl/2 Course/1 }
domain { m1, m2, c1, c2, c3, c4 }
theory {
  ! x y : MutExcl(x,y) => ~(Selected(x) & Selected(y)).
  ? m : Module(m) & Selected(m).
  ! c : Course(c) & (? m : Module(m) & Selected(m) & In(c,m)) => Selected(c).
}
structure {
  Module = { m1, m2 }
  Course = { c1, c2, c3, c4 }
  In = { (c1,m1), (c3,m1), (c2,m2) }
  MutExcl = { (c1,c2) }
  Selected<ct> = { c1 }
  Selected<cf> = { }
}
";

    #[test]
    fn parses_student_problem() {
        let p = parse_problem(STUDENT).unwrap();
        assert_eq!(p.theory.sentences().count(), 3);
        assert_eq!(p.structure.value_of("Selected", &["c1"]), TruthValue::T);
        assert_eq!(p.structure.value_of("Selected", &["c2"]), TruthValue::U);
        assert_eq!(p.structure.value_of("In", &["c2", "m1"]), TruthValue::F);
        let again = parse_problem(&print_problem(&p)).unwrap();
        assert_eq!(again, p);
    }

    #[test]
    fn empty_theory() {
        let p = parse_problem("vocabulary { } domain { a } theory { }").unwrap();
        assert!(p.theory.is_empty());
    }

    #[test]
    fn syntax_error_location() {
        let e = parse_formula("! x P(x").unwrap_err();
        assert_eq!((e.line, e.col), (1, 6));
        let e = parse_formula("! x : P(x").unwrap_err();
        assert_eq!((e.line, e.col), (1, 10));
    }

    #[test]
    fn four_valued_atom_prints_in_both_lists() {
        let mut p = parse_problem("vocabulary { P/1 } domain { a, b } theory { }").unwrap();
        p.structure.set_named("P", &["a"], TruthValue::I);
        let text = print_structure(&p.structure, None);
        assert!(text.contains("P<ct> = { a }") && text.contains("P<cf> = { a }"), "{text}");
    }

    #[test]
    fn definitions_print_with_arrow() {
        let t = parse_theory("define { ! x y : Reach(x,y) <- Edge(x,y). ! x y : Reach(x,y) <- ? z : Reach(x,z) & Reach(z,y). }")
            .unwrap();
        let text = print_theory(&t, 0);
        assert!(text.starts_with("define {\n  ! x y : Reach(x,y) <- Edge(x,y).\n"), "{text}");
        assert_eq!(parse_theory(&text).unwrap(), t);
    }

    #[test]
    fn operators_and_aggregates() {
        let f = parse_formula("! x : x > 2 => ~(x =< y) | z >= card{ y : R(x,y) } & P").unwrap();
        let text = f.to_string();
        assert_eq!(parse_formula(&text).unwrap(), f);
        assert!(text.contains("2 < x"), "{text}");
        let g = parse_formula("a => b => c").unwrap();
        assert_eq!(g, parse_formula("a => (b => c)").unwrap());
    }

    #[test]
    fn json_interchange() {
        let p = parse_problem(STUDENT).unwrap();
        let j = structure_to_json(&p.structure);
        let back = structure_from_json(&j, &p.vocabulary).unwrap();
        assert_eq!(back, p.structure);
    }

    #[test]
    fn constants_resolve() {
        let p = parse_problem("vocabulary { Selected/1 function C/0 } domain { a } theory { Selected(C). ! C : Selected(C). }")
            .unwrap();
        let fs: Vec<&Formula> = p.theory.sentences().collect();
        assert_eq!(*fs[0], Formula::Atom(Atom::new("Selected", vec![Term::App("C".into(), vec![])])));
        assert_eq!(*fs[1], parse_formula("! C : Selected(C)").unwrap());
    }
}
