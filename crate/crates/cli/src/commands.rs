//! Subcommand bodies. Each writes results to `out`, diagnostics to `err`, and
//! returns the process exit code.

use std::io::Write;
use std::path::Path;

use rcm_core::engine::EngineErrorKind;
use rcm_core::synth::{recession, RecessionParams};
use rcm_core::{
    fove_continuous, ground_cap, ground_marginal, parse_model, serialize_model, validate, Marginal, Model, OracleError,
};

use crate::fmt_sig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARSE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_DIVERGENT: i32 = 3;
pub const EXIT_UNSUPPORTED: i32 = 4;
pub const EXIT_MISMATCH: i32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InferMethod {
    Lifted,
    Ground,
}

/// A failed run, already mapped to its exit code.
struct Failure {
    code: i32,
    message: String,
}

fn engine_failure(kind: &EngineErrorKind) -> Failure {
    let code = match kind {
        EngineErrorKind::Model(_) | EngineErrorKind::NoQuery | EngineErrorKind::Unanchored(_) => EXIT_INVALID,
        EngineErrorKind::DivergentIntegral { .. } => EXIT_DIVERGENT,
        EngineErrorKind::NonPairwiseModel(_) | EngineErrorKind::NonPairwiseResidue(_) | EngineErrorKind::Timeout => {
            EXIT_UNSUPPORTED
        }
    };
    Failure { code, message: kind.to_string() }
}

fn oracle_failure(e: &OracleError) -> Failure {
    let code = match e {
        OracleError::DivergentIntegral { .. } => EXIT_DIVERGENT,
        OracleError::NoQuery | OracleError::Model(_) => EXIT_INVALID,
        OracleError::TooLarge { .. } | OracleError::Timeout => EXIT_UNSUPPORTED,
    };
    let message = match e {
        OracleError::TooLarge { .. } => format!("{e} (raise it with RCM_GROUND_CAP)"),
        _ => e.to_string(),
    };
    Failure { code, message }
}

/// Reads and parses a model file, printing `file:line:col: message` for each
/// diagnostic.
fn load(path: &Path, err: &mut dyn Write) -> Result<Model, i32> {
    let src = match std::fs::read_to_string(path) {
        Ok(s) => s,
        Err(e) => {
            writeln!(err, "{}: {e}", path.display()).ok();
            return Err(EXIT_PARSE);
        }
    };
    parse_model(&src).map_err(|diags| {
        for d in diags {
            writeln!(err, "{}:{}:{}: {}", path.display(), d.line, d.col, d.message).ok();
        }
        EXIT_PARSE
    })
}

/// Replaces the model's query by the ground variables written in `spec`, e.g.
/// `Market(3)` or `Recession,Gain(1,2)`.
fn override_query(model: &mut Model, spec: &str, err: &mut dyn Write) -> Result<(), i32> {
    model.query.clear();
    let mut src = serialize_model(model);
    let base = src.lines().count();
    for q in split_top_level(spec) {
        src.push_str(&format!("query {}\n", q.trim()));
    }
    match parse_model(&src) {
        Ok(m) => {
            *model = m;
            Ok(())
        }
        Err(diags) => {
            for d in diags {
                let line = d.line.saturating_sub(base);
                writeln!(err, "--query:{line}:{}: {}", d.col.saturating_sub(6), d.message).ok();
            }
            Err(EXIT_PARSE)
        }
    }
}

/// Splits on commas outside parentheses.
fn split_top_level(s: &str) -> Vec<&str> {
    let (mut depth, mut start, mut parts) = (0i32, 0, Vec::new());
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                parts.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&s[start..]);
    parts
}

/// Prints the per-component report; fails when a component holding a query
/// variable has no constant argument anywhere, since its product of pairwise
/// potentials then has no finite integral.
fn check_valid(model: &Model, out: Option<&mut dyn Write>, err: &mut dyn Write) -> Result<(), i32> {
    let report = validate(model);
    if let Some(out) = out {
        for (i, c) in report.components.iter().enumerate() {
            writeln!(
                out,
                "component {i}: {} ground variables, {}{} [{}]",
                c.ground_variables,
                if c.anchored { "anchored" } else { "unanchored" },
                if c.has_query { ", query" } else { "" },
                c.labels.join(", ")
            )
            .ok();
        }
    }
    if report.is_valid() {
        return Ok(());
    }
    for c in report.failures() {
        writeln!(
            err,
            "invalid model: component [{}] contains a query but no potential with a constant or observed argument; \
             a connected product of relational normals integrates to a finite value only when anchored",
            c.labels.join(", ")
        )
        .ok();
    }
    Err(EXIT_INVALID)
}

pub fn cmd_validate(path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let model = match load(path, err) {
        Ok(m) => m,
        Err(code) => return code,
    };
    match check_valid(&model, Some(out), err) {
        Ok(()) => {
            writeln!(out, "valid").ok();
            EXIT_OK
        }
        Err(code) => code,
    }
}

fn print_marginal(out: &mut dyn Write, m: &Marginal) {
    for (i, v) in m.variables.iter().enumerate() {
        writeln!(out, "{v}\tmean={}\tvariance={}", fmt_sig(m.mean[i]), fmt_sig(m.variance(i))).ok();
    }
    for i in 0..m.dim() {
        for k in i + 1..m.dim() {
            writeln!(out, "{} ~ {}\tcovariance={}", m.variables[i], m.variables[k], fmt_sig(m.cov(i, k))).ok();
        }
    }
    writeln!(out, "log_normalizer={}", fmt_sig(m.log_normalizer)).ok();
}

pub fn cmd_infer(
    path: &Path,
    method: InferMethod,
    query: Option<&str>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let mut model = match load(path, err) {
        Ok(m) => m,
        Err(code) => return code,
    };
    if let Some(q) = query {
        if let Err(code) = override_query(&mut model, q, err) {
            return code;
        }
    }
    if let Err(code) = check_valid(&model, None, err) {
        return code;
    }
    match method {
        InferMethod::Lifted => match fove_continuous(&model) {
            Ok(r) => {
                print_marginal(out, &r.marginal);
                for step in &r.trace {
                    writeln!(out, "{}", serde_json::to_string(step).expect("steps serialize")).ok();
                }
                EXIT_OK
            }
            Err(e) => {
                let f = engine_failure(&e.kind);
                writeln!(err, "lifted inference failed: {}", f.message).ok();
                f.code
            }
        },
        InferMethod::Ground => match ground_marginal::<f64>(&model, ground_cap(), None) {
            Ok(m) => {
                print_marginal(out, &m);
                EXIT_OK
            }
            Err(e) => {
                let f = oracle_failure(&e);
                writeln!(err, "ground inference failed: {}", f.message).ok();
                f.code
            }
        },
    }
}

/// `|a - b| / (1 + |b|)`, the ground value `b` as reference.
pub fn rel_delta(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + b.abs())
}

/// Runs both methods without validating first, so a model whose query
/// component has no anchor is reported as divergent by each.
pub fn cmd_compare(path: &Path, tol: f64, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let model = match load(path, err) {
        Ok(m) => m,
        Err(code) => return code,
    };
    let lifted = fove_continuous(&model).map(|r| r.marginal).map_err(|e| match e.kind {
        EngineErrorKind::Unanchored(c) => {
            Failure { code: EXIT_DIVERGENT, message: format!("integral over {c} diverges (no constant argument)") }
        }
        kind => engine_failure(&kind),
    });
    let ground = ground_marginal::<f64>(&model, ground_cap(), None).map_err(|e| oracle_failure(&e));
    let (l, g) = match (lifted, ground) {
        (Ok(l), Ok(g)) => (l, g),
        (l, g) => {
            let mut code = EXIT_OK;
            for (name, r) in [("lifted", l.err()), ("ground", g.err())] {
                match r {
                    Some(f) => {
                        writeln!(err, "{name}: {}", f.message).ok();
                        code = code.max(f.code);
                    }
                    None => {
                        writeln!(err, "{name}: ok").ok();
                    }
                }
            }
            writeln!(err, "deltas skipped").ok();
            return code;
        }
    };
    let mut rows = Vec::new();
    for i in 0..l.dim() {
        let v = &l.variables[i];
        rows.push((format!("mean[{v}]"), l.mean[i], g.mean[i]));
        for k in i..l.dim() {
            let name = if k == i { format!("variance[{v}]") } else { format!("covariance[{v}, {}]", l.variables[k]) };
            rows.push((name, l.cov(i, k), g.cov(i, k)));
        }
    }
    rows.push(("log_normalizer".into(), l.log_normalizer, g.log_normalizer));
    let mut worst: f64 = 0.0;
    writeln!(out, "quantity\tlifted\tground\trel_delta").ok();
    for (name, a, b) in rows {
        let d = rel_delta(a, b);
        worst = worst.max(d);
        writeln!(out, "{name}\t{}\t{}\t{d:.3e}", fmt_sig(a), fmt_sig(b)).ok();
    }
    if worst <= tol {
        writeln!(out, "match: max rel_delta {worst:.3e} <= {tol:e}").ok();
        EXIT_OK
    } else {
        writeln!(out, "mismatch: max rel_delta {worst:.3e} > {tol:e}").ok();
        EXIT_MISMATCH
    }
}

/// Writes the recession model of the given size in the model language.
pub fn cmd_generate(markets: usize, banks: usize, seed: u64, out: &mut dyn Write) -> i32 {
    let m = recession(markets, banks, &RecessionParams::seeded(seed));
    write!(out, "{}", serialize_model(&m)).ok();
    EXIT_OK
}
