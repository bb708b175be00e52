use std::fs;
use std::path::PathBuf;

use rcm_core::{fove_continuous, ground_marginal, parse_model, serialize_model};

fn corpus(kind: &str) -> Vec<(String, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/corpus").join(kind);
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "rcm"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read_to_string(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn golden_files_round_trip() {
    let files = corpus("golden");
    assert!(files.len() >= 10);
    assert!(files.iter().any(|(n, _)| n == "recession.rcm"));
    for (name, src) in files {
        let m = parse_model(&src).unwrap_or_else(|d| panic!("{name}: {d:?}"));
        let text = serialize_model(&m);
        let again = parse_model(&text).unwrap_or_else(|d| panic!("{name} reparse: {d:?}"));
        assert_eq!(again, m, "{name}");
        assert_eq!(serialize_model(&again), text, "{name}");
    }
}

#[test]
fn golden_files_match_the_oracle() {
    for (name, src) in corpus("golden") {
        let m = parse_model(&src).unwrap();
        let lifted = fove_continuous(&m).unwrap_or_else(|e| panic!("{name}: {e}"));
        let ground = ground_marginal::<f64>(&m, 1000, None).unwrap();
        let d = lifted.marginal.max_rel_diff(&ground);
        assert!(d <= 1e-8, "{name}: {d:e}");
    }
}

/// Each malformed file starts with `# expect: line:col`.
#[test]
fn malformed_files_report_positions() {
    let files = corpus("malformed");
    assert!(files.len() >= 10);
    for (name, src) in files {
        let header = src.lines().next().and_then(|l| l.strip_prefix("# expect: ")).expect("expect header");
        let (line, col) = header.split_once(':').unwrap();
        let expected: (usize, usize) = (line.trim().parse().unwrap(), col.trim().parse().unwrap());
        let diags = parse_model(&src).expect_err(&name);
        assert_eq!((diags[0].line, diags[0].col), expected, "{name}: {}", diags[0].message);
        let mut lines: Vec<usize> = diags.iter().map(|d| d.line).collect();
        lines.dedup();
        assert_eq!(lines.len(), diags.len(), "{name}: several diagnostics on one line");
    }
}
