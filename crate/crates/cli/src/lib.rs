//! Command-line front end for `rcm-core`: validation, inference, lifted vs
//! ground comparison and the recession scaling benchmark.

pub mod bench;
pub mod commands;

/// Scientific notation with 17 significant digits, enough to round-trip any
/// `f64`.
pub fn fmt_sig(v: f64) -> String {
    format!("{v:.16e}")
}
