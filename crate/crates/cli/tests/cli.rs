use std::path::PathBuf;
use std::process::{Command, Output};

fn rcm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rcm")).args(args).output().expect("binary runs")
}

fn golden(name: &str) -> String {
    root().join("../core/tests/corpus/golden").join(name).to_string_lossy().into_owned()
}

fn data(name: &str) -> String {
    root().join("tests/data").join(name).to_string_lossy().into_owned()
}

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// `(mean, variance)` of the first variable line.
fn first_moments(text: &str) -> (f64, f64) {
    let line = text.lines().find(|l| l.contains("mean=")).unwrap();
    let field = |key: &str| line.split('\t').find_map(|f| f.strip_prefix(key)).unwrap().parse::<f64>().unwrap();
    (field("mean="), field("variance="))
}

#[test]
fn infer_lifted_matches_ground_and_prints_trace() {
    let lifted = rcm(&["infer", &golden("recession.rcm"), "--method", "lifted"]);
    let ground = rcm(&["infer", &golden("recession.rcm"), "--method", "ground"]);
    assert_eq!(lifted.status.code(), Some(0), "{}", stderr(&lifted));
    assert_eq!(ground.status.code(), Some(0));
    let (lm, lv) = first_moments(&stdout(&lifted));
    let (gm, gv) = first_moments(&stdout(&ground));
    assert!((lm - gm).abs() <= 1e-8 * (1.0 + gm.abs()));
    assert!((lv - gv).abs() <= 1e-8 * (1.0 + gv.abs()));

    let out = stdout(&lifted);
    let mean = out.lines().next().unwrap().split('\t').nth(1).unwrap().trim_start_matches("mean=");
    let mantissa = mean.split('e').next().unwrap().trim_start_matches('-').replace('.', "");
    assert_eq!(mantissa.len(), 17, "{mean}");

    let steps: Vec<serde_json::Value> =
        out.lines().filter(|l| l.starts_with('{')).map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(!steps.is_empty());
    assert!(steps.iter().all(|s| s["method"].is_string() && s["target"].is_string()));
    assert_eq!(steps[0]["method"], "inversion");
    assert!(!stdout(&ground).contains('{'));
}

#[test]
fn query_override() {
    let o = rcm(&["infer", &golden("recession.rcm"), "--query", "Market(2),Revenue(1)"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("Market(2)\tmean=") && out.contains("Revenue(1)\tmean=") && out.contains("covariance="));
    let bad = rcm(&["infer", &golden("recession.rcm"), "--query", "Nope(1)"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn malformed_file_exits_1_with_position() {
    let path = root().join("../core/tests/corpus/malformed/unknown_atom.rcm");
    let o = rcm(&["validate", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with(&format!("{}:3:14:", path.display())), "{}", stderr(&o));
    assert_eq!(rcm(&["infer", "/no/such/file.rcm"]).status.code(), Some(1));
}

#[test]
fn unanchored_model_exits_2() {
    for args in [vec!["validate"], vec!["infer"], vec!["infer", "--method", "ground"]] {
        let mut a = args.clone();
        let file = data("unanchored.rcm");
        a.insert(1, &file);
        let o = rcm(&a);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        let msg = stderr(&o);
        assert!(msg.contains("constant or observed argument"), "{msg}");
    }
}

#[test]
fn validate_reports_components() {
    let o = rcm(&["validate", &golden("disconnected.rcm")]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.starts_with("component")).count(), 2);
    assert!(out.ends_with("valid\n"));
}

#[test]
fn unsupported_model_exits_4() {
    let o = rcm(&["infer", &data("unsupported.rcm")]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("no lifted elimination"));
    assert_eq!(rcm(&["infer", &data("unsupported.rcm"), "--method", "ground"]).status.code(), Some(0));
}

#[test]
fn ground_cap_comes_from_the_environment() {
    let o = Command::new(env!("CARGO_BIN_EXE_rcm"))
        .args(["infer", &golden("recession.rcm"), "--method", "ground"])
        .env("RCM_GROUND_CAP", "5")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("cap of 5"));
}

#[test]
fn compare_exit_codes() {
    let root = root().join("../core/tests/corpus/golden");
    for e in std::fs::read_dir(root).unwrap() {
        let p = e.unwrap().path();
        let o = rcm(&["compare", p.to_str().unwrap(), "--tol", "1e-8"]);
        assert_eq!(o.status.code(), Some(0), "{}: {}{}", p.display(), stdout(&o), stderr(&o));
    }
    let strict = rcm(&["compare", &golden("recession.rcm"), "--tol", "0"]);
    assert_eq!(strict.status.code(), Some(5));
    let out = stdout(&strict);
    assert!(out.contains("log_normalizer") && out.contains("mismatch"));

    let div = rcm(&["compare", &data("unanchored.rcm")]);
    assert_eq!(div.status.code(), Some(3));
    let msg = stderr(&div);
    assert!(msg.contains("lifted:") && msg.contains("ground:") && msg.contains("deltas skipped"), "{msg}");
    assert!(stdout(&div).is_empty());
}

#[test]
fn bench_writes_csv() {
    let o = rcm(&[
        "bench",
        "--markets",
        "2..4",
        "--banks",
        "2",
        "--timeout",
        "10",
        "--methods",
        "lifted,ground",
        "--seed",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let mut lines = out.lines();
    assert_eq!(lines.next().unwrap(), "model,n_markets,n_banks,method,wall_ms,mean,variance,log_normalizer,status");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        assert_eq!(r.len(), 9);
        assert_eq!(r[0], "recession");
        assert_eq!(r[8], "ok");
        assert_eq!(r[4].split('.').nth(1).unwrap().len(), 3);
    }
    assert_eq!((rows[0][1], rows[0][3], rows[1][3], rows[2][1]), ("2", "lifted", "ground", "4"));
    let bad = rcm(&["bench", "--methods", "fastest"]);
    assert_ne!(bad.status.code(), Some(0));
}

#[test]
fn generated_models_are_reproducible() {
    let a = rcm(&["generate", "--markets", "5", "--banks", "7", "--seed", "11"]);
    let b = rcm(&["generate", "--markets", "5", "--banks", "7", "--seed", "11"]);
    let c = rcm(&["generate", "--markets", "5", "--banks", "7", "--seed", "12"]);
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
    assert!(rcm_core::parse_model(&stdout(&a)).is_ok());
}
