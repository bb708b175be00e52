//! Recession-model scaling benchmark.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rcm_core::engine::EngineErrorKind;
use rcm_core::synth::{recession, RecessionParams};
use rcm_core::{fove_continuous_with, ground_cap, ground_marginal, EngineOptions, Marginal, Mode, Model, OracleError};

use crate::fmt_sig;

pub const CSV_HEADER: [&str; 9] =
    ["model", "n_markets", "n_banks", "method", "wall_ms", "mean", "variance", "log_normalizer", "status"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMethod {
    Lifted,
    InversionOnly,
    Ground,
}

impl BenchMethod {
    pub const ALL: [BenchMethod; 3] = [BenchMethod::Lifted, BenchMethod::InversionOnly, BenchMethod::Ground];

    pub fn name(self) -> &'static str {
        match self {
            BenchMethod::Lifted => "lifted",
            BenchMethod::InversionOnly => "inversion_only",
            BenchMethod::Ground => "ground",
        }
    }
}

impl fmt::Display for BenchMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BenchMethod::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| format!("unknown method `{s}` (expected lifted, inversion_only or ground)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchStatus {
    Ok,
    Timeout,
    Divergent,
}

impl BenchStatus {
    pub fn name(self) -> &'static str {
        match self {
            BenchStatus::Ok => "ok",
            BenchStatus::Timeout => "timeout",
            BenchStatus::Divergent => "divergent",
        }
    }
}

/// One CSV line. `mean`, `variance` and `log_normalizer` are present iff the
/// status is `Ok`.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub model_name: String,
    pub n_markets: usize,
    pub n_banks: usize,
    pub method: BenchMethod,
    pub wall_ms: f64,
    pub mean: Option<f64>,
    pub variance: Option<f64>,
    pub log_normalizer: Option<f64>,
    pub status: BenchStatus,
}

impl BenchRow {
    fn record(&self) -> [String; 9] {
        let num = |v: Option<f64>| v.map(fmt_sig).unwrap_or_default();
        [
            self.model_name.clone(),
            self.n_markets.to_string(),
            self.n_banks.to_string(),
            self.method.name().to_string(),
            format!("{:.3}", self.wall_ms),
            num(self.mean),
            num(self.variance),
            num(self.log_normalizer),
            self.status.name().to_string(),
        ]
    }
}

/// Doubling sequence `a, 2a, 4a, ...` up to `b`, written `a..b`; a single
/// number is a one-element range.
pub fn parse_range(s: &str) -> Result<Vec<usize>, String> {
    let (lo, hi) = match s.split_once("..") {
        Some((a, b)) => (a, b),
        None => (s, s),
    };
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("invalid range bound `{t}` in `{s}`"));
    let (lo, hi) = (parse(lo)?, parse(hi)?);
    if lo == 0 || hi < lo {
        return Err(format!("range `{s}` must satisfy 1 <= a <= b"));
    }
    Ok(std::iter::successors(Some(lo), |&x| x.checked_mul(2)).take_while(|&x| x <= hi).collect())
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub markets: Vec<usize>,
    pub banks: Vec<usize>,
    pub timeout: Duration,
    pub methods: Vec<BenchMethod>,
    pub seed: u64,
    pub parallel: bool,
}

enum Outcome {
    Ok(Marginal),
    Timeout,
    Divergent,
}

fn run_once(model: &Model, method: BenchMethod, timeout: Duration) -> Outcome {
    let deadline = Some(Instant::now() + timeout);
    match method {
        BenchMethod::Lifted | BenchMethod::InversionOnly => {
            let mode = if method == BenchMethod::Lifted { Mode::Lifted } else { Mode::InversionOnly };
            let opts = EngineOptions { mode, deadline, ..Default::default() };
            match fove_continuous_with::<f64>(model, &opts) {
                Ok(r) => Outcome::Ok(r.marginal),
                Err(e) if e.kind == EngineErrorKind::Timeout => Outcome::Timeout,
                Err(_) => Outcome::Divergent,
            }
        }
        BenchMethod::Ground => match ground_marginal::<f64>(model, ground_cap(), deadline) {
            Ok(m) => Outcome::Ok(m),
            Err(OracleError::Timeout | OracleError::TooLarge { .. }) => Outcome::Timeout,
            Err(_) => Outcome::Divergent,
        },
    }
}

/// Times one (size, method) cell: a discarded warm-up run, then the measured
/// run. A warm-up that misses the deadline settles the cell as a timeout.
pub fn run_cell(model: &Model, n_markets: usize, n_banks: usize, method: BenchMethod, timeout: Duration) -> BenchRow {
    let mut row = BenchRow {
        model_name: "recession".into(),
        n_markets,
        n_banks,
        method,
        wall_ms: 0.0,
        mean: None,
        variance: None,
        log_normalizer: None,
        status: BenchStatus::Timeout,
    };
    let start = Instant::now();
    let warm = run_once(model, method, timeout);
    let outcome = match warm {
        Outcome::Ok(_) => {
            let start = Instant::now();
            let o = run_once(model, method, timeout);
            row.wall_ms = start.elapsed().as_secs_f64() * 1e3;
            o
        }
        other => {
            row.wall_ms = start.elapsed().as_secs_f64() * 1e3;
            other
        }
    };
    match outcome {
        Outcome::Ok(m) => {
            row.mean = Some(m.mean[0]);
            row.variance = Some(m.variance(0));
            row.log_normalizer = Some(m.log_normalizer);
            row.status = BenchStatus::Ok;
        }
        Outcome::Timeout => row.status = BenchStatus::Timeout,
        Outcome::Divergent => row.status = BenchStatus::Divergent,
    }
    row
}

/// Every (markets, banks, method) cell in row-major order.
pub fn run_bench(cfg: &BenchConfig) -> Vec<BenchRow> {
    let params = RecessionParams::seeded(cfg.seed);
    let mut cells = Vec::new();
    for &s in &cfg.markets {
        for &b in &cfg.banks {
            for &m in &cfg.methods {
                cells.push((s, b, m));
            }
        }
    }
    let run = |&(s, b, m): &(usize, usize, BenchMethod)| run_cell(&recession(s, b, &params), s, b, m, cfg.timeout);
    if cfg.parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = cells.iter().map(|c| scope.spawn(move || run(c))).collect();
            handles.into_iter().map(|h| h.join().expect("bench cell panicked")).collect()
        })
    } else {
        cells.iter().map(run).collect()
    }
}

pub fn write_csv<W: Write>(out: W, rows: &[BenchRow]) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().quote_style(csv::QuoteStyle::Necessary).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_double() {
        assert_eq!(parse_range("2..16").unwrap(), vec![2, 4, 8, 16]);
        assert_eq!(parse_range("3..20").unwrap(), vec![3, 6, 12]);
        assert_eq!(parse_range("10").unwrap(), vec![10]);
        assert!(parse_range("0..4").is_err());
        assert!(parse_range("8..2").is_err());
        assert!(parse_range("a..2").is_err());
    }

    #[test]
    fn methods_parse() {
        assert_eq!("inversion_only".parse::<BenchMethod>().unwrap(), BenchMethod::InversionOnly);
        assert!("fast".parse::<BenchMethod>().is_err());
    }

    #[test]
    fn rows_have_empty_numbers_unless_ok() {
        let m = recession(2, 2, &RecessionParams::default());
        let ok = run_cell(&m, 2, 2, BenchMethod::Lifted, Duration::from_secs(5));
        assert_eq!(ok.status, BenchStatus::Ok);
        assert!(ok.record()[5..8].iter().all(|f| !f.is_empty()));
        let late = run_cell(&m, 2, 2, BenchMethod::Ground, Duration::ZERO);
        assert_eq!(late.status, BenchStatus::Timeout);
        assert!(late.record()[5..8].iter().all(String::is_empty));
        assert!(late.wall_ms >= 0.0);
    }

    #[test]
    fn csv_layout() {
        let cfg = BenchConfig {
            markets: vec![2],
            banks: vec![2, 4],
            timeout: Duration::from_secs(5),
            methods: BenchMethod::ALL.to_vec(),
            seed: 0,
            parallel: true,
        };
        let rows = run_bench(&cfg);
        assert_eq!(rows.len(), 6);
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "model,n_markets,n_banks,method,wall_ms,mean,variance,log_normalizer,status");
        assert_eq!(lines.count(), 6);
    }
}
