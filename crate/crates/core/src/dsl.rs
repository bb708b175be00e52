//! Line-oriented text format for models (`.rcm`).
//!
//! ```text
//! # comment
//! domain S = 10
//! domain Firm = { auto, stock }
//! var Recession
//! atom Market(S)
//! atom Share(Firm \ { auto })
//! factor rn(Recession, Market(S); sigma2=1, d=0.5)
//! factor rn(Market(S), 0.25; sigma2=2)
//! observe Market(3) = 0.3
//! query Recession
//! ```
//!
//! Logical variables in a factor take their domain from the parameter
//! position they fill. Parsing is total: malformed input yields positioned
//! diagnostics, at most one per line.

use std::collections::{BTreeSet, HashMap};
use std::fmt::{self, Write as _};

use crate::model::{
    Constraint, Domain, GroundVariable, LogicalVariable, Model, Observation, Parfactor, RelationalAtom, RnPotential,
    Term,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(String),
    Punct(char),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    col: usize,
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '\''
}

fn tokenize(line: &str, lineno: usize) -> Result<Vec<Token>, Diagnostic> {
    let chars: Vec<char> = line.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c == '#' {
            break;
        }
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if is_ident_start(c) {
            let start = i;
            while i < chars.len() && is_ident_char(chars[i]) {
                i += 1;
            }
            out.push(Token { tok: Tok::Ident(chars[start..i].iter().collect()), col });
            continue;
        }
        let signed = (c == '-' || c == '+') && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit() || *n == '.');
        if c.is_ascii_digit() || c == '.' || signed {
            let start = i;
            i += 1;
            while i < chars.len() {
                let d = chars[i];
                let exp_sign = (d == '-' || d == '+') && matches!(chars[i - 1], 'e' | 'E');
                if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exp_sign {
                    i += 1;
                } else {
                    break;
                }
            }
            out.push(Token { tok: Tok::Num(chars[start..i].iter().collect()), col });
            continue;
        }
        if "(),;={}\\".contains(c) {
            out.push(Token { tok: Tok::Punct(c), col });
            i += 1;
            continue;
        }
        return Err(Diagnostic { line: lineno, col, message: format!("unexpected character `{c}`") });
    }
    Ok(out)
}

struct Line<'a> {
    toks: &'a [Token],
    pos: usize,
    lineno: usize,
    end_col: usize,
}

type Res<T> = Result<T, Diagnostic>;

impl<'a> Line<'a> {
    fn err<T>(&self, col: usize, message: impl Into<String>) -> Res<T> {
        Err(Diagnostic { line: self.lineno, col, message: message.into() })
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |t| t.col)
    }

    fn peek(&self) -> Option<&'a Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn next(&mut self) -> Option<&'a Token> {
        let t = self.toks.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn punct(&mut self, p: char) -> Res<()> {
        match self.peek() {
            Some(Tok::Punct(c)) if *c == p => {
                self.pos += 1;
                Ok(())
            }
            _ => self.err(self.col(), format!("expected `{p}`")),
        }
    }

    fn eat(&mut self, p: char) -> bool {
        if matches!(self.peek(), Some(Tok::Punct(c)) if *c == p) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn ident(&mut self, what: &str) -> Res<(String, usize)> {
        let col = self.col();
        match self.next() {
            Some(Token { tok: Tok::Ident(s), .. }) => Ok((s.clone(), col)),
            _ => self.err(col, format!("expected {what}")),
        }
    }

    /// Identifier or integer naming a domain constant.
    fn constant(&mut self) -> Res<(String, usize)> {
        let col = self.col();
        match self.next() {
            Some(Token { tok: Tok::Ident(s) | Tok::Num(s), .. }) => Ok((s.clone(), col)),
            _ => self.err(col, "expected a constant"),
        }
    }

    fn number(&mut self) -> Res<(f64, usize)> {
        let col = self.col();
        match self.next() {
            Some(Token { tok: Tok::Num(s), .. }) => match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok((v, col)),
                _ => self.err(col, format!("invalid number `{s}`")),
            },
            _ => self.err(col, "expected a number"),
        }
    }

    fn end(&self) -> Res<()> {
        if self.pos < self.toks.len() {
            self.err(self.col(), "unexpected trailing input")
        } else {
            Ok(())
        }
    }
}

#[derive(Default)]
struct Builder {
    model: Model,
    names: HashMap<String, &'static str>,
    observed: BTreeSet<GroundVariable>,
    queried: BTreeSet<GroundVariable>,
}

enum RawTerm {
    Atom { name: String, col: usize, args: Vec<(String, usize)> },
    Value(f64),
}

impl Builder {
    fn declare(&mut self, l: &Line, name: &str, col: usize, kind: &'static str) -> Res<()> {
        if let Some(prev) = self.names.get(name) {
            return l.err(col, format!("`{name}` already declared as {prev}"));
        }
        self.names.insert(name.to_owned(), kind);
        Ok(())
    }

    fn domain(&mut self, l: &mut Line) -> Res<()> {
        let (name, col) = l.ident("a domain name")?;
        l.punct('=')?;
        let dom = if l.eat('{') {
            let mut names = Vec::new();
            let mut seen = BTreeSet::new();
            if !l.eat('}') {
                loop {
                    let (c, ccol) = l.constant()?;
                    if !seen.insert(c.clone()) {
                        return l.err(ccol, format!("constant `{c}` repeated"));
                    }
                    names.push(c);
                    if l.eat('}') {
                        break;
                    }
                    l.punct(',')?;
                }
            }
            if names.is_empty() {
                return l.err(col, format!("domain `{name}` is empty"));
            }
            Domain::named(name.clone(), names)
        } else {
            let ncol = l.col();
            let (v, _) = l.number()?;
            if v.fract() != 0.0 || v < 0.0 || v > u32::MAX as f64 {
                return l.err(ncol, "domain size must be a non-negative integer");
            }
            if v == 0.0 {
                return l.err(ncol, format!("domain `{name}` is empty"));
            }
            Domain::sized(name.clone(), v as usize)
        };
        l.end()?;
        self.declare(l, &name, col, "a domain")?;
        self.model.domains.push(dom);
        Ok(())
    }

    fn resolve_constant(&self, l: &Line, domain: usize, c: &str, col: usize) -> Res<usize> {
        let d = &self.model.domains[domain];
        match d.lookup(c) {
            Some(i) => Ok(i),
            None => l.err(col, format!("`{c}` is not a constant of domain `{}`", d.name)),
        }
    }

    fn atom(&mut self, l: &mut Line, zero_arity: bool) -> Res<()> {
        let (name, col) = l.ident("an atom name")?;
        let mut params = Vec::new();
        let mut excluded = Vec::new();
        if !zero_arity {
            l.punct('(')?;
            loop {
                let (d, dcol) = l.ident("a domain")?;
                let Some(di) = self.model.domain_index(&d) else {
                    return l.err(dcol, format!("unknown domain `{d}`"));
                };
                let mut ex = BTreeSet::new();
                if l.eat('\\') {
                    l.punct('{')?;
                    if !l.eat('}') {
                        loop {
                            let (c, ccol) = l.constant()?;
                            ex.insert(self.resolve_constant(l, di, &c, ccol)?);
                            if l.eat('}') {
                                break;
                            }
                            l.punct(',')?;
                        }
                    }
                }
                if ex.len() >= self.model.domains[di].size {
                    return l.err(dcol, format!("atom `{name}` has an empty effective domain"));
                }
                params.push(di);
                excluded.push(ex);
                if l.eat(')') {
                    break;
                }
                l.punct(',')?;
            }
        }
        l.end()?;
        self.declare(l, &name, col, "an atom")?;
        self.model.atoms.push(RelationalAtom { name, params, constraint: Constraint { excluded } });
        Ok(())
    }

    fn raw_term(&mut self, l: &mut Line) -> Res<RawTerm> {
        match l.peek() {
            Some(Tok::Num(_)) => Ok(RawTerm::Value(l.number()?.0)),
            Some(Tok::Ident(_)) => {
                let (name, col) = l.ident("a term")?;
                let mut args = Vec::new();
                if l.eat('(') {
                    loop {
                        args.push(l.ident("a logical variable")?);
                        if l.eat(')') {
                            break;
                        }
                        l.punct(',')?;
                    }
                }
                Ok(RawTerm::Atom { name, col, args })
            }
            _ => l.err(l.col(), "expected an atom, variable or number"),
        }
    }

    fn factor(&mut self, l: &mut Line) -> Res<()> {
        let (kind, kcol) = l.ident("a potential")?;
        if kind != "rn" {
            return l.err(kcol, format!("unknown potential `{kind}` (only `rn` is supported)"));
        }
        l.punct('(')?;
        let left = self.raw_term(l)?;
        l.punct(',')?;
        let right = self.raw_term(l)?;
        l.punct(';')?;
        let mut sigma2 = None;
        let mut offset = None;
        loop {
            let (key, col) = l.ident("`sigma2` or `d`")?;
            l.punct('=')?;
            let (v, vcol) = l.number()?;
            let slot = match key.as_str() {
                "sigma2" => &mut sigma2,
                "d" => &mut offset,
                _ => return l.err(col, format!("unknown parameter `{key}`")),
            };
            if slot.is_some() {
                return l.err(col, format!("parameter `{key}` given twice"));
            }
            *slot = Some((v, vcol));
            if !l.eat(',') {
                break;
            }
        }
        l.punct(')')?;
        l.end()?;
        let Some((s2, s2col)) = sigma2 else {
            return l.err(l.end_col, "missing `sigma2`");
        };
        if s2 <= 0.0 {
            return l.err(s2col, "sigma2 must be positive");
        }
        let rn = match RnPotential::new(s2, offset.map_or(0.0, |o| o.0)) {
            Ok(rn) => rn,
            Err(e) => return l.err(s2col, e.to_string()),
        };
        if matches!((&left, &right), (RawTerm::Value(_), RawTerm::Value(_))) {
            return l.err(kcol, "a potential needs at least one atom");
        }
        let mut lvs: Vec<LogicalVariable> = Vec::new();
        let mut terms = Vec::new();
        for raw in [left, right] {
            terms.push(match raw {
                RawTerm::Value(v) => Term::Value(v),
                RawTerm::Atom { name, col, args } => {
                    let Some(atom) = self.model.atom_index(&name) else {
                        return l.err(col, format!("unknown atom `{name}`"));
                    };
                    let params = &self.model.atoms[atom].params;
                    if params.len() != args.len() {
                        return l.err(col, format!("`{name}` takes {} argument(s), got {}", params.len(), args.len()));
                    }
                    let mut idx = Vec::new();
                    for ((lv, lcol), &d) in args.iter().zip(params) {
                        let i = match lvs.iter().position(|x| &x.name == lv) {
                            Some(i) if lvs[i].domain != d => {
                                return l.err(*lcol, format!("logical variable `{lv}` used with two domains"))
                            }
                            Some(i) => i,
                            None => {
                                lvs.push(LogicalVariable { name: lv.clone(), domain: d });
                                lvs.len() - 1
                            }
                        };
                        if idx.contains(&i) {
                            return l.err(*lcol, format!("logical variable `{lv}` repeated in one term"));
                        }
                        idx.push(i);
                    }
                    Term::Atom { atom, args: idx }
                }
            });
        }
        let right = terms.pop().unwrap();
        let left = terms.pop().unwrap();
        self.model.parfactors.push(Parfactor::rn(lvs, left, right, rn));
        Ok(())
    }

    fn ground(&mut self, l: &mut Line) -> Res<(GroundVariable, usize)> {
        let (name, col) = l.ident("an atom")?;
        let Some(atom) = self.model.atom_index(&name) else {
            return l.err(col, format!("unknown atom `{name}`"));
        };
        let mut consts = Vec::new();
        if l.eat('(') {
            loop {
                consts.push(l.constant()?);
                if l.eat(')') {
                    break;
                }
                l.punct(',')?;
            }
        }
        let params = self.model.atoms[atom].params.clone();
        if params.len() != consts.len() {
            return l.err(col, format!("`{name}` takes {} argument(s), got {}", params.len(), consts.len()));
        }
        let mut args = Vec::new();
        for (p, ((c, ccol), d)) in consts.iter().zip(params).enumerate() {
            let i = self.resolve_constant(l, d, c, *ccol)?;
            if self.model.atoms[atom].constraint.excluded[p].contains(&i) {
                return l.err(*ccol, format!("`{c}` is excluded from `{name}`"));
            }
            args.push(i);
        }
        Ok((GroundVariable::new(atom, args), col))
    }

    fn observe(&mut self, l: &mut Line) -> Res<()> {
        let (gv, col) = self.ground(l)?;
        l.punct('=')?;
        let (value, _) = l.number()?;
        l.end()?;
        if self.queried.contains(&gv) {
            return l.err(col, "cannot observe a query variable");
        }
        if !self.observed.insert(gv.clone()) {
            return l.err(col, format!("duplicate observation of {}", self.model.label(&gv)));
        }
        self.model.observations.push(Observation { variable: gv, value });
        Ok(())
    }

    fn query(&mut self, l: &mut Line) -> Res<()> {
        let (gv, col) = self.ground(l)?;
        l.end()?;
        if self.observed.contains(&gv) {
            return l.err(col, "cannot query an observed variable");
        }
        if !self.queried.insert(gv.clone()) {
            return l.err(col, format!("{} queried twice", self.model.label(&gv)));
        }
        self.model.query.push(gv);
        Ok(())
    }
}

/// Parses a model, or returns every diagnostic (at most one per line).
pub fn parse_model(source: &str) -> Result<Model, Vec<Diagnostic>> {
    let mut b = Builder::default();
    let mut diags = Vec::new();
    for (i, text) in source.lines().enumerate() {
        let lineno = i + 1;
        let toks = match tokenize(text, lineno) {
            Ok(t) => t,
            Err(d) => {
                diags.push(d);
                continue;
            }
        };
        if toks.is_empty() {
            continue;
        }
        let mut l = Line { toks: &toks, pos: 0, lineno, end_col: text.chars().count() + 1 };
        let r = match l.ident("a statement") {
            Ok((kw, col)) => match kw.as_str() {
                "domain" => b.domain(&mut l),
                "atom" => b.atom(&mut l, false),
                "var" => b.atom(&mut l, true),
                "factor" => b.factor(&mut l),
                "observe" => b.observe(&mut l),
                "query" => b.query(&mut l),
                _ => l.err(col, format!("unknown statement `{kw}`")),
            },
            Err(d) => Err(d),
        };
        if let Err(d) = r {
            diags.push(d);
        }
    }
    if diags.is_empty() {
        if let Err(e) = b.model.check() {
            diags.push(Diagnostic { line: 1, col: 1, message: e.to_string() });
        }
    }
    if diags.is_empty() {
        Ok(b.model)
    } else {
        Err(diags)
    }
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

fn ground_text(model: &Model, gv: &GroundVariable) -> String {
    let a = &model.atoms[gv.atom];
    if a.params.is_empty() {
        return a.name.clone();
    }
    let args: Vec<String> = gv.args.iter().zip(&a.params).map(|(&c, &d)| model.domains[d].constant_name(c)).collect();
    format!("{}({})", a.name, args.join(", "))
}

fn term_text(model: &Model, pf: &Parfactor, t: &Term) -> String {
    match t {
        Term::Value(v) => fmt_num(*v),
        Term::Atom { atom, args } => {
            let a = &model.atoms[*atom];
            if args.is_empty() {
                a.name.clone()
            } else {
                let names: Vec<&str> = args.iter().map(|&l| pf.logical_vars[l].name.as_str()).collect();
                format!("{}({})", a.name, names.join(", "))
            }
        }
    }
}

/// Canonical text. Parfactors holding several potentials are written as one
/// `factor` line per potential.
pub fn serialize_model(model: &Model) -> String {
    let mut out = String::new();
    for d in &model.domains {
        match &d.names {
            Some(names) => writeln!(out, "domain {} = {{ {} }}", d.name, names.join(", ")),
            None => writeln!(out, "domain {} = {}", d.name, d.size),
        }
        .unwrap();
    }
    for a in &model.atoms {
        if a.params.is_empty() {
            writeln!(out, "var {}", a.name).unwrap();
            continue;
        }
        let params: Vec<String> = a
            .params
            .iter()
            .zip(&a.constraint.excluded)
            .map(|(&d, ex)| {
                let dom = &model.domains[d];
                if ex.is_empty() {
                    dom.name.clone()
                } else {
                    let cs: Vec<String> = ex.iter().map(|&c| dom.constant_name(c)).collect();
                    format!("{} \\ {{ {} }}", dom.name, cs.join(", "))
                }
            })
            .collect();
        writeln!(out, "atom {}({})", a.name, params.join(", ")).unwrap();
    }
    for pf in &model.parfactors {
        for p in &pf.potentials {
            let mut line = format!(
                "factor rn({}, {}; sigma2={}",
                term_text(model, pf, &pf.terms[p.left]),
                term_text(model, pf, &pf.terms[p.right]),
                fmt_num(p.rn.sigma2())
            );
            if p.rn.offset() != 0.0 || p.rn.offset().is_sign_negative() {
                write!(line, ", d={}", fmt_num(p.rn.offset())).unwrap();
            }
            writeln!(out, "{line})").unwrap();
        }
    }
    for o in &model.observations {
        writeln!(out, "observe {} = {}", ground_text(model, &o.variable), fmt_num(o.value)).unwrap();
    }
    for q in &model.query {
        writeln!(out, "query {}", ground_text(model, q)).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const RECESSION: &str = "\
domain S = 10
domain B = 8
var Recession
atom Market(S)
atom Gain(S, B)
atom Revenue(B)
factor rn(Recession, Market(S); sigma2=1)
factor rn(Market(S), Gain(S, B); sigma2=1)
factor rn(Gain(S, B), Revenue(B); sigma2=1)
observe Market(0) = 0.3
observe Revenue(0) = 0.1
query Recession
";

    #[test]
    fn recession_structure() {
        let m = parse_model(RECESSION).unwrap();
        assert_eq!(m.atoms.len(), 4);
        assert_eq!(m.parfactors.len(), 3);
        assert_eq!(m.cardinality(2), 80);
        assert_eq!(serialize_model(&m), RECESSION);
    }

    #[test]
    fn negative_variance_rejected() {
        let src = "domain S = 3\natom A(S)\natom B(S)\nfactor rn(A(S), B(S); sigma2=-1)\n";
        let d = parse_model(src).unwrap_err();
        assert_eq!(d.len(), 1);
        assert_eq!((d[0].line, d[0].col), (4, 30));
    }

    #[test]
    fn exclusions_and_names_round_trip() {
        let src = "domain Firm = { auto, stock, bank }\natom Share(Firm \\ { auto })\nvar R\n\
                   factor rn(R, Share(F); sigma2=0.5, d=-0.25)\nfactor rn(R, 1e-3; sigma2=2)\n\
                   observe Share(stock) = 1.5\nquery Share(bank)\n";
        let m = parse_model(src).unwrap();
        assert_eq!(m.cardinality(0), 2);
        let text = serialize_model(&m);
        assert!(text.contains("atom Share(Firm \\ { auto })"));
        assert_eq!(parse_model(&text).unwrap(), m);
        assert_eq!(serialize_model(&parse_model(&text).unwrap()), text);
    }

    #[test]
    fn one_diagnostic_per_line() {
        let src = "domain S = 3\natom A(S, T)\nfactor rn(A(S), A(S); sigma2=1 1)\nobserve Q = 1\n$\n";
        let d = parse_model(src).unwrap_err();
        let lines: Vec<usize> = d.iter().map(|d| d.line).collect();
        assert_eq!(lines, vec![2, 3, 4, 5]);
        assert_eq!(d[0].col, 11);
    }

    #[test]
    fn garbage_never_panics() {
        for src in [
            "(",
            "domain",
            "domain X = {",
            "atom A(",
            "factor rn(1, 2; sigma2=1)",
            "query",
            "\u{1F600}",
            "domain X = 1e400",
        ] {
            assert!(parse_model(src).is_err(), "{src}");
        }
    }

    #[test]
    fn empty_observation_list_serializes_cleanly() {
        let m = parse_model("var X\nfactor rn(X, 0; sigma2=1)\nquery X\n").unwrap();
        assert!(!serialize_model(&m).contains("observe"));
    }
}
