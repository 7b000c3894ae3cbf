//! The `foprop` command line: parse a problem, then check, normalize,
//! propagate, emit rules, run symbolic propagation, rewrite a query or
//! serve the session API.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand};
use foprop_core::io::{parse_problem, parse_query, print_structure, Problem};
use foprop_core::normalize::{normalize, NormalizeOptions};
use foprop_core::oracle::complete_propagate;
use foprop_core::propagate::{propagate, propagators_for, working_vocabulary, PropagateConfig, PropagatorSpec};
use foprop_core::rules::emit_rule_set;
use foprop_core::symbolic::{initial_symbolic, rewrite_certain, rewrite_possible, symbolic_propagate, SymbolicBudget};
use foprop_core::syntax::{validate, validate_query};

#[derive(Parser, Debug)]
#[command(name = "foprop", version, about = "Constraint propagation for first-order theories with definitions and aggregates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct Input {
    /// Problem file; standard input when absent or `-`.
    pub file: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parse and validate a problem.
    Check(Input),
    /// Print the normalized theory.
    #[command(group(ArgGroup::new("form").required(true).args(["enf", "inf"])))]
    Normalize {
        #[command(flatten)]
        input: Input,
        /// Equivalence normal form.
        #[arg(long)]
        enf: bool,
        /// Implicational normal form.
        #[arg(long)]
        inf: bool,
    },
    /// Propagate the theory on the structure of the problem.
    Propagate {
        #[command(flatten)]
        input: Input,
        /// Use exhaustive model enumeration instead (small problems only).
        #[arg(long)]
        oracle: bool,
        /// Also print the refinement steps.
        #[arg(long)]
        trace: bool,
        /// Stop after this many changing steps.
        #[arg(long, value_name = "N")]
        budget: Option<usize>,
        /// Keep auxiliary predicates in the output.
        #[arg(long)]
        keep_aux: bool,
    },
    /// Print the positive rule set of the theory, one rule per line.
    EmitRules(Input),
    /// Propagate symbolically from the input modes of the problem.
    Symbolic {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        budget: BudgetArgs,
    },
    /// Rewrite a query into one over the input predicates.
    #[command(group(ArgGroup::new("side").required(true).args(["certain", "possible"])))]
    Rewrite {
        #[command(flatten)]
        input: Input,
        /// Query of the form `{ x y : formula }`.
        #[arg(long)]
        query: String,
        /// Underestimate of the certain answers.
        #[arg(long)]
        certain: bool,
        /// Overestimate of the possible answers.
        #[arg(long)]
        possible: bool,
        #[command(flatten)]
        budget: BudgetArgs,
    },
    /// Serve the session API over HTTP.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

#[derive(Args, Debug)]
pub struct BudgetArgs {
    /// Rounds over all sentences; defaults to the number of sentences.
    #[arg(long, value_name = "N")]
    rounds: Option<usize>,
    /// Node count at which a query stops growing.
    #[arg(long, value_name = "N", default_value_t = 500)]
    max_query_size: usize,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    /// Bad input: exit status 1.
    Input(String),
    /// Internal invariant broken: exit status 2.
    Internal(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Input(_) => 1,
            Failure::Internal(_) => 2,
        }
    }
}

fn input_err(e: impl std::fmt::Display) -> Failure {
    Failure::Input(e.to_string())
}

fn internal(e: impl std::fmt::Display) -> Failure {
    Failure::Internal(e.to_string())
}

fn read_input(input: &Input, stdin: &mut dyn Read) -> Result<(String, String), Failure> {
    match &input.file {
        Some(p) if p.as_os_str() != "-" => {
            let text = std::fs::read_to_string(p).map_err(|e| input_err(format!("{}: {e}", p.display())))?;
            Ok((p.display().to_string(), text))
        }
        _ => {
            let mut text = String::new();
            stdin.read_to_string(&mut text).map_err(input_err)?;
            Ok(("<stdin>".into(), text))
        }
    }
}

/// Parses and validates the problem, with diagnostics prefixed by `name`.
fn load(input: &Input, stdin: &mut dyn Read) -> Result<Problem, Failure> {
    let (name, text) = read_input(input, stdin)?;
    let p = parse_problem(&text).map_err(|e| input_err(format!("{name}:{}:{}: {}", e.line, e.col, e.msg)))?;
    let report = validate(&p.theory, &p.vocabulary);
    if !report.is_ok() {
        let lines: Vec<String> = report.issues.iter().map(|i| format!("{name}: {i}")).collect();
        return Err(Failure::Input(lines.join("\n")));
    }
    Ok(p)
}

fn budget(b: &BudgetArgs, sentences: usize) -> SymbolicBudget {
    let mut out = SymbolicBudget::for_sentences(sentences);
    if let Some(r) = b.rounds {
        out.max_rounds = r;
    }
    out.max_query_size = b.max_query_size;
    out
}

fn execute(cmd: Command, stdin: &mut dyn Read) -> Result<String, Failure> {
    let mut out = String::new();
    match cmd {
        Command::Check(input) => {
            let p = load(&input, stdin)?;
            let _ = writeln!(
                out,
                "ok: {} predicates, {} theory elements, {} domain elements",
                p.vocabulary.predicates.len(),
                p.theory.elements.len(),
                p.domain().len()
            );
        }
        Command::Normalize { input, enf, .. } => {
            let p = load(&input, stdin)?;
            let norm = normalize(&p.theory, &p.vocabulary, NormalizeOptions::default());
            if enf {
                norm.enf.iter().for_each(|e| {
                    let _ = writeln!(out, "{e}");
                });
                for d in &norm.definitions {
                    out.push_str(&foprop_core::io::print_theory(
                        &foprop_core::syntax::Theory { elements: vec![foprop_core::syntax::TheoryElement::Definition(d.clone())] },
                        0,
                    ));
                }
            } else {
                for s in norm.infs() {
                    let _ = writeln!(out, "{s}");
                }
            }
        }
        Command::Propagate { input, oracle, trace, budget, keep_aux } => {
            let p = load(&input, stdin)?;
            if oracle {
                let r = complete_propagate(&p.theory, &p.structure).map_err(input_err)?;
                out.push_str(&print_structure(&r, Some(&p.vocabulary)));
            } else {
                let cfg = PropagateConfig { budget, keep_aux, trace, ..PropagateConfig::default() };
                let r = propagate(&p.theory, &p.structure, &cfg).map_err(internal)?;
                let order = if keep_aux { r.normalization.vocabulary.clone() } else { p.vocabulary.clone() };
                out.push_str(&print_structure(&r.structure, Some(&order)));
                if r.inconsistent {
                    out.push_str("// inconsistent\n");
                }
                if trace {
                    let dom = p.domain();
                    for (k, s) in r.trace.steps.iter().enumerate() {
                        let _ = writeln!(out, "// step {} by [{}] {}", k + 1, s.propagator, r.propagators[s.propagator]);
                        for (lit, v) in &s.changes {
                            let _ = writeln!(out, "//   {}({}) := {}", lit.pred, dom.tuple_names(&lit.tuple).join(","), v.symbol());
                        }
                    }
                }
            }
        }
        Command::EmitRules(input) => {
            let p = load(&input, stdin)?;
            let v = working_vocabulary(&p.theory, &p.structure);
            let cfg = PropagateConfig { clauses: false, simplify: false, ..PropagateConfig::default() };
            let (props, _) = propagators_for(&p.theory, &v, &cfg);
            let infs: Vec<_> = props
                .into_iter()
                .filter_map(|x| if let PropagatorSpec::Inf(s) = x { Some(s) } else { None })
                .collect();
            out.push_str(&emit_rule_set(&infs).map_err(input_err)?.to_datalog());
        }
        Command::Symbolic { input, budget: b } => {
            let p = load(&input, stdin)?;
            let (phi, infs) = symbolic_start(&p);
            let r = symbolic_propagate(&infs, &phi, budget(&b, infs.len())).map_err(input_err)?;
            let _ = write!(out, "{}", r.structure);
            for f in &r.frozen {
                let _ = writeln!(out, "// {f} reached the size limit");
            }
        }
        Command::Rewrite { input, query, certain, budget: b, .. } => {
            let p = load(&input, stdin)?;
            let q = parse_query(&query).map_err(|e| input_err(format!("query:{}:{}: {}", e.line, e.col, e.msg)))?;
            let report = validate_query(&q, &p.vocabulary);
            if !report.is_ok() {
                let lines: Vec<String> = report.issues.iter().map(|i| format!("query: {i}")).collect();
                return Err(Failure::Input(lines.join("\n")));
            }
            let (phi, infs) = symbolic_start(&p);
            let r = symbolic_propagate(&infs, &phi, budget(&b, infs.len())).map_err(input_err)?;
            let rewritten = if certain { rewrite_certain(&r.structure, &q) } else { rewrite_possible(&r.structure, &q) }
                .map_err(input_err)?;
            let _ = writeln!(out, "{{ {} : {} }}", rewritten.vars.join(" "), rewritten.body);
        }
        Command::Serve { port } => {
            let addr = SocketAddr::from(([0, 0, 0, 0], port));
            let rt = tokio::runtime::Runtime::new().map_err(internal)?;
            rt.block_on(foprop_service::serve(addr)).map_err(input_err)?;
        }
    }
    Ok(out)
}

fn symbolic_start(p: &Problem) -> (foprop_core::symbolic::SymbolicStructure, Vec<foprop_core::normalize::InfSentence>) {
    let norm = normalize(&p.theory, &p.vocabulary, NormalizeOptions::default());
    let phi = initial_symbolic(&norm.vocabulary, &p.input_modes());
    (phi, norm.infs())
}

/// Runs one command line and returns the exit status.
pub fn run<I, T>(args: I, stdin: &mut dyn Read, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if !e.use_stderr() {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            let _ = write!(stderr, "{e}");
            return 1;
        }
    };
    match execute(cli.command, stdin) {
        Ok(text) => {
            let _ = stdout.write_all(text.as_bytes());
            0
        }
        Err(f) => {
            let (Failure::Input(m) | Failure::Internal(m)) = &f;
            let _ = writeln!(stderr, "error: {m}");
            f.code()
        }
    }
}
