use std::process::Command;

fn problem(name: &str) -> String {
    format!("{}/../../problems/{name}", env!("CARGO_MANIFEST_DIR"))
}

/// Runs the command line in-process: (exit status, stdout, stderr).
fn run(args: &[&str], stdin: &str) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("foprop").chain(args.iter().copied());
    let code = foprop_cli::run(argv, &mut stdin.as_bytes(), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

#[test]
fn propagates_the_student_problem() {
    let file = problem("student.fop");
    let (code, out, _) = run(&["propagate", &file], "");
    assert_eq!(code, 0);
    assert!(out.contains("Selected<ct> = { c1, c3, m1 }"), "{out}");
    assert!(out.contains("Selected<cf> = { c2, m2 }"), "{out}");
    let (_, again, _) = run(&["propagate", &file], "");
    assert_eq!(out, again);
    let (_, oracle, _) = run(&["propagate", "--oracle", &file], "");
    assert_eq!(out, oracle);
}

#[test]
fn reads_standard_input() {
    let text = std::fs::read_to_string(problem("student.fop")).unwrap();
    let (code, out, _) = run(&["propagate", "-"], &text);
    assert_eq!(code, 0);
    assert!(out.contains("Selected<ct> = { c1, c3, m1 }"));
}

#[test]
fn trace_names_the_propagators() {
    let (code, out, _) = run(&["propagate", "--trace", &problem("student.fop")], "");
    assert_eq!(code, 0);
    let steps: Vec<&str> = out.lines().filter(|l| l.starts_with("// step")).collect();
    assert!(!steps.is_empty());
    assert!(out.contains("Selected(c3) := t"), "{out}");
}

#[test]
fn definitions_fill_in_the_missing_edge() {
    let (code, out, _) = run(&["propagate", &problem("reach.fop")], "");
    assert_eq!(code, 0);
    assert!(out.contains("Edge = { (a,b), (b,c), (c,d) }"), "{out}");
}

#[test]
fn normal_forms() {
    let file = problem("student.fop");
    let (code, enf, _) = run(&["normalize", "--enf", &file], "");
    assert_eq!(code, 0);
    assert_eq!(enf.lines().count(), 8);
    assert!(enf.lines().any(|l| l == "! m : Aux2(m) <=> Module(m) & Selected(m)."), "{enf}");
    let (code, inf, _) = run(&["normalize", "--inf", &file], "");
    assert_eq!(code, 0);
    assert!(inf.lines().all(|l| l.contains("=>")));
    let (code, _, err) = run(&["normalize", &file], "");
    assert_eq!(code, 1);
    assert!(err.contains("--enf|--inf"), "{err}");
}

#[test]
fn emits_positive_rules() {
    let (code, out, _) = run(&["emit-rules", &problem("student.fop")], "");
    assert_eq!(code, 0);
    assert!(out.lines().any(|l| l == "Selected_cf(Y) :- Aux1_ct(X,Y), MutExcl_ct(X,Y), Selected_ct(X)."), "{out}");
    assert!(out.lines().all(|l| l.ends_with('.') && !l.contains('~')));
}

#[test]
fn symbolic_and_rewrite() {
    let file = problem("student.fop");
    let (code, out, _) = run(&["symbolic", "--rounds", "1", &file], "");
    assert_eq!(code, 0);
    assert!(out.contains("Selected<ct> = { x :"), "{out}");
    let (code, out, _) = run(&["rewrite", "--query", "{ x : Selected(x) }", "--certain", "--rounds", "1", &file], "");
    assert_eq!(code, 0);
    assert!(out.starts_with("{ x : ") && out.contains("Selected_ct(x)"), "{out}");
    assert!(!out.contains("Selected(x)"), "{out}");
    let (code, _, err) = run(&["rewrite", "--query", "{ x : Nope(x) }", "--possible", &file], "");
    assert_eq!(code, 1);
    assert!(err.contains("query"), "{err}");
}

#[test]
fn input_errors_exit_with_one() {
    let (code, out, err) = run(&["check", &problem("malformed.fop")], "");
    assert_eq!(code, 1);
    assert!(out.is_empty());
    assert!(err.contains("malformed.fop:4:16:"), "{err}");
    let (code, _, err) = run(&["check", &problem("missing.fop")], "");
    assert_eq!(code, 1);
    assert!(err.contains("missing.fop"));
    let (code, _, err) = run(&["propagate", "--oracle", &problem("chain.fop")], "");
    assert_eq!(code, 1);
    assert!(err.contains("unknown atoms"), "{err}");
}

#[test]
fn binary_reports_status() {
    let bin = env!("CARGO_BIN_EXE_foprop");
    let ok = Command::new(bin).args(["check", &problem("student.fop")]).output().unwrap();
    assert!(ok.status.success());
    assert_eq!(String::from_utf8_lossy(&ok.stdout), "ok: 5 predicates, 3 theory elements, 6 domain elements\n");
    let bad = Command::new(bin).args(["check", &problem("malformed.fop")]).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
}
