//! Relational model vocabulary: domains, relational atoms, parfactors over
//! relational normal potentials, observations and queries.
//!
//! Constants of a domain are the indices `0..size`; a domain may carry names
//! for them. Atoms range over the cartesian product of their parameter
//! domains minus per-position exclusions.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

/// Smallest variance accepted for a potential.
pub const MIN_SIGMA2: f64 = 1e-12;

pub type DomainId = usize;
pub type AtomId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("domain `{0}` must contain at least one constant")]
    EmptyDomain(String),
    #[error("duplicate name `{0}`")]
    DuplicateName(String),
    #[error("atom `{0}` has an empty effective domain")]
    EmptyAtom(String),
    #[error("sigma2 must be greater than {MIN_SIGMA2:e}, got {0:e}")]
    BadVariance(f64),
    #[error("non-finite value {0}")]
    NonFinite(f64),
    #[error("{0}")]
    Malformed(String),
    #[error("ground variable {0} does not exist")]
    NoSuchVariable(String),
    #[error("{0} is observed more than once")]
    DuplicateObservation(String),
    #[error("query variable {0} is observed")]
    ObservedQuery(String),
    #[error("no value assigned to {0}")]
    MissingAssignment(String),
    #[error("cardinality of `{0}` overflows")]
    Overflow(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Domain {
    pub name: String,
    pub size: usize,
    /// Optional constant names, `names.len() == size` when present.
    pub names: Option<Vec<String>>,
}

impl Domain {
    pub fn sized(name: impl Into<String>, size: usize) -> Self {
        Domain { name: name.into(), size, names: None }
    }

    pub fn named<S: Into<String>>(name: impl Into<String>, names: impl IntoIterator<Item = S>) -> Self {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        Domain { name: name.into(), size: names.len(), names: Some(names) }
    }

    pub fn constant_name(&self, index: usize) -> String {
        match &self.names {
            Some(names) => names[index].clone(),
            None => index.to_string(),
        }
    }

    pub fn lookup(&self, constant: &str) -> Option<usize> {
        match &self.names {
            Some(names) => names.iter().position(|n| n == constant),
            None => constant.parse::<usize>().ok().filter(|&i| i < self.size),
        }
    }
}

/// Constants excluded from an atom, one set per parameter position.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Constraint {
    pub excluded: Vec<BTreeSet<usize>>,
}

impl Constraint {
    pub fn none(arity: usize) -> Self {
        Constraint { excluded: vec![BTreeSet::new(); arity] }
    }

    pub fn allows(&self, args: &[usize]) -> bool {
        args.iter().zip(&self.excluded).all(|(a, ex)| !ex.contains(a))
    }

    pub fn is_empty(&self) -> bool {
        self.excluded.iter().all(BTreeSet::is_empty)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationalAtom {
    pub name: String,
    pub params: Vec<DomainId>,
    pub constraint: Constraint,
}

/// A ground random variable: an atom with every parameter bound.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct GroundVariable {
    pub atom: AtomId,
    pub args: Vec<usize>,
}

impl GroundVariable {
    pub fn new(atom: AtomId, args: impl Into<Vec<usize>>) -> Self {
        GroundVariable { atom, args: args.into() }
    }
}

/// Relational normal potential `exp(-(x - y - offset)^2 / (2 sigma2)) / sqrt(2 pi sigma2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RnPotential {
    sigma2: f64,
    offset: f64,
}

impl RnPotential {
    pub fn new(sigma2: f64, offset: f64) -> Result<Self, ModelError> {
        if !sigma2.is_finite() {
            return Err(ModelError::NonFinite(sigma2));
        }
        if !offset.is_finite() {
            return Err(ModelError::NonFinite(offset));
        }
        if sigma2 <= MIN_SIGMA2 {
            return Err(ModelError::BadVariance(sigma2));
        }
        Ok(RnPotential { sigma2, offset })
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn precision(&self) -> f64 {
        1.0 / self.sigma2
    }

    /// Log of the potential at one pair of values.
    pub fn log_value(&self, x: f64, y: f64) -> f64 {
        let r = x - y - self.offset;
        -r * r / (2.0 * self.sigma2) - 0.5 * (2.0 * std::f64::consts::PI * self.sigma2).ln()
    }
}

/// A logical variable of a parfactor, ranging over one domain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogicalVariable {
    pub name: String,
    pub domain: DomainId,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Term {
    /// An atom whose parameters are bound to the parfactor's logical variables
    /// (indices into `Parfactor::logical_vars`).
    Atom { atom: AtomId, args: Vec<usize> },
    /// A literal constant value.
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairPotential {
    pub left: usize,
    pub right: usize,
    pub rn: RnPotential,
}

/// A parfactor: one product of pairwise potentials per ground substitution of
/// its logical variables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Parfactor {
    pub logical_vars: Vec<LogicalVariable>,
    pub terms: Vec<Term>,
    pub potentials: Vec<PairPotential>,
}

impl Parfactor {
    /// Single relational normal between two terms; logical variables are taken
    /// from the terms in order of appearance.
    pub fn rn(logical_vars: Vec<LogicalVariable>, left: Term, right: Term, rn: RnPotential) -> Self {
        Parfactor { logical_vars, terms: vec![left, right], potentials: vec![PairPotential { left: 0, right: 1, rn }] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Observation {
    pub variable: GroundVariable,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Model {
    pub domains: Vec<Domain>,
    pub atoms: Vec<RelationalAtom>,
    pub parfactors: Vec<Parfactor>,
    pub observations: Vec<Observation>,
    pub query: Vec<GroundVariable>,
}

/// Calls `f` on every tuple of the mixed-radix counter `sizes`.
pub(crate) fn for_each_tuple(sizes: &[usize], mut f: impl FnMut(&[usize])) {
    if sizes.contains(&0) {
        return;
    }
    let mut idx = vec![0usize; sizes.len()];
    loop {
        f(&idx);
        let mut k = sizes.len();
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < sizes[k] {
                break;
            }
            idx[k] = 0;
        }
    }
}

impl Model {
    pub fn domain_index(&self, name: &str) -> Option<DomainId> {
        self.domains.iter().position(|d| d.name == name)
    }

    pub fn atom_index(&self, name: &str) -> Option<AtomId> {
        self.atoms.iter().position(|a| a.name == name)
    }

    /// Number of ground variables of an atom under its constraint.
    pub fn cardinality(&self, atom: AtomId) -> u64 {
        let a = &self.atoms[atom];
        a.params.iter().zip(&a.constraint.excluded).map(|(&d, ex)| (self.domains[d].size - ex.len()) as u64).product()
    }

    pub fn ground_variable_count(&self) -> u64 {
        (0..self.atoms.len()).map(|a| self.cardinality(a)).sum()
    }

    pub fn exists(&self, gv: &GroundVariable) -> bool {
        let Some(a) = self.atoms.get(gv.atom) else { return false };
        gv.args.len() == a.params.len()
            && gv.args.iter().zip(&a.params).all(|(&c, &d)| c < self.domains[d].size)
            && a.constraint.allows(&gv.args)
    }

    /// Every ground variable of `atom`, in lexicographic argument order.
    pub fn groundings(&self, atom: AtomId) -> Vec<GroundVariable> {
        let a = &self.atoms[atom];
        let sizes: Vec<usize> = a.params.iter().map(|&d| self.domains[d].size).collect();
        let mut out = Vec::new();
        for_each_tuple(&sizes, |args| {
            if a.constraint.allows(args) {
                out.push(GroundVariable::new(atom, args));
            }
        });
        out
    }

    pub fn label(&self, gv: &GroundVariable) -> String {
        let a = &self.atoms[gv.atom];
        if a.params.is_empty() {
            return a.name.clone();
        }
        let args: Vec<String> =
            gv.args.iter().zip(&a.params).map(|(&c, &d)| self.domains[d].constant_name(c)).collect();
        format!("{}({})", a.name, args.join(", "))
    }

    pub fn observation_map(&self) -> HashMap<&GroundVariable, f64> {
        self.observations.iter().map(|o| (&o.variable, o.value)).collect()
    }

    /// Calls `f` with every valid ground substitution of a parfactor. Bindings
    /// that name an excluded ground variable are skipped.
    pub fn for_each_substitution(&self, pf: &Parfactor, mut f: impl FnMut(&[usize])) {
        let sizes: Vec<usize> = pf.logical_vars.iter().map(|lv| self.domains[lv.domain].size).collect();
        let mut args = Vec::new();
        for_each_tuple(&sizes, |theta| {
            let ok = pf.terms.iter().all(|t| match t {
                Term::Atom { atom, args: lvs } => {
                    args.clear();
                    args.extend(lvs.iter().map(|&l| theta[l]));
                    self.atoms[*atom].constraint.allows(&args)
                }
                Term::Value(_) => true,
            });
            if ok {
                f(theta);
            }
        });
    }

    /// Checks every structural invariant. Parsers and builders call this last.
    pub fn check(&self) -> Result<(), ModelError> {
        let mut names = BTreeSet::new();
        for d in &self.domains {
            if d.size == 0 {
                return Err(ModelError::EmptyDomain(d.name.clone()));
            }
            if let Some(n) = &d.names {
                if n.len() != d.size {
                    return Err(ModelError::Malformed(format!("domain `{}` size mismatch", d.name)));
                }
                let uniq: BTreeSet<_> = n.iter().collect();
                if uniq.len() != n.len() {
                    return Err(ModelError::Malformed(format!("domain `{}` repeats a constant", d.name)));
                }
            }
            if !names.insert(d.name.as_str()) {
                return Err(ModelError::DuplicateName(d.name.clone()));
            }
        }
        for a in &self.atoms {
            if !names.insert(a.name.as_str()) {
                return Err(ModelError::DuplicateName(a.name.clone()));
            }
            if a.constraint.excluded.len() != a.params.len() {
                return Err(ModelError::Malformed(format!("atom `{}` constraint arity", a.name)));
            }
            let mut card: u64 = 1;
            for (&d, ex) in a.params.iter().zip(&a.constraint.excluded) {
                let dom = self
                    .domains
                    .get(d)
                    .ok_or_else(|| ModelError::Malformed(format!("atom `{}` references an unknown domain", a.name)))?;
                if ex.iter().any(|&c| c >= dom.size) {
                    return Err(ModelError::Malformed(format!("atom `{}` excludes an unknown constant", a.name)));
                }
                card = card
                    .checked_mul((dom.size - ex.len()) as u64)
                    .ok_or_else(|| ModelError::Overflow(a.name.clone()))?;
            }
            if card == 0 {
                return Err(ModelError::EmptyAtom(a.name.clone()));
            }
        }
        for pf in &self.parfactors {
            for lv in &pf.logical_vars {
                if lv.domain >= self.domains.len() {
                    return Err(ModelError::Malformed(format!("logical variable `{}` has no domain", lv.name)));
                }
            }
            for t in &pf.terms {
                match t {
                    Term::Atom { atom, args } => {
                        let a = self
                            .atoms
                            .get(*atom)
                            .ok_or_else(|| ModelError::Malformed("term references an unknown atom".into()))?;
                        if args.len() != a.params.len() {
                            return Err(ModelError::Malformed(format!("arity mismatch for `{}`", a.name)));
                        }
                        let mut seen = BTreeSet::new();
                        for (&l, &d) in args.iter().zip(&a.params) {
                            let lv = pf.logical_vars.get(l).ok_or_else(|| {
                                ModelError::Malformed(format!(
                                    "term of `{}` uses an undeclared logical variable",
                                    a.name
                                ))
                            })?;
                            if lv.domain != d {
                                return Err(ModelError::Malformed(format!(
                                    "logical variable `{}` used with two domains",
                                    lv.name
                                )));
                            }
                            if !seen.insert(l) {
                                return Err(ModelError::Malformed(format!(
                                    "logical variable `{}` repeated in one term of `{}`",
                                    lv.name, a.name
                                )));
                            }
                        }
                    }
                    Term::Value(v) if !v.is_finite() => return Err(ModelError::NonFinite(*v)),
                    Term::Value(_) => {}
                }
            }
            for p in &pf.potentials {
                if p.left == p.right || p.left >= pf.terms.len() || p.right >= pf.terms.len() {
                    return Err(ModelError::Malformed("potential must join two distinct terms".into()));
                }
                if matches!(pf.terms[p.left], Term::Value(_)) && matches!(pf.terms[p.right], Term::Value(_)) {
                    return Err(ModelError::Malformed("potential between two constants".into()));
                }
                RnPotential::new(p.rn.sigma2, p.rn.offset)?;
            }
        }
        let mut observed = BTreeSet::new();
        for o in &self.observations {
            if !self.exists(&o.variable) {
                return Err(ModelError::NoSuchVariable(format!("{:?}", o.variable)));
            }
            if !o.value.is_finite() {
                return Err(ModelError::NonFinite(o.value));
            }
            if !observed.insert(&o.variable) {
                return Err(ModelError::DuplicateObservation(self.label(&o.variable)));
            }
        }
        let mut queried = BTreeSet::new();
        for q in &self.query {
            if !self.exists(q) {
                return Err(ModelError::NoSuchVariable(format!("{:?}", q)));
            }
            if observed.contains(q) {
                return Err(ModelError::ObservedQuery(self.label(q)));
            }
            if !queried.insert(q) {
                return Err(ModelError::Malformed(format!("{} queried twice", self.label(q))));
            }
        }
        Ok(())
    }

    /// Log of the unnormalized density at a full valuation: the sum over every
    /// parfactor and every ground substitution of the log potential, pair
    /// normalizers included. Observed variables take their observed value;
    /// every other ground variable must be assigned.
    pub fn ground_weight(&self, valuation: &HashMap<GroundVariable, f64>) -> Result<f64, ModelError> {
        let observed = self.observation_map();
        let mut total = 0.0;
        let mut missing = None;
        for pf in &self.parfactors {
            self.for_each_substitution(pf, |theta| {
                let values: Vec<Option<f64>> = pf
                    .terms
                    .iter()
                    .map(|t| match t {
                        Term::Value(v) => Some(*v),
                        Term::Atom { atom, args } => {
                            let gv = GroundVariable::new(*atom, args.iter().map(|&l| theta[l]).collect::<Vec<_>>());
                            let v = observed.get(&gv).copied().or_else(|| valuation.get(&gv).copied());
                            if v.is_none() && missing.is_none() {
                                missing = Some(gv);
                            }
                            v
                        }
                    })
                    .collect();
                for p in &pf.potentials {
                    if let (Some(x), Some(y)) = (values[p.left], values[p.right]) {
                        total += p.rn.log_value(x, y);
                    }
                }
            });
        }
        match missing {
            Some(gv) => Err(ModelError::MissingAssignment(self.label(&gv))),
            None => Ok(total),
        }
    }
}

impl fmt::Display for GroundVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}{:?}", self.atom, self.args)
    }
}

/// Programmatic construction of models by name.
#[derive(Debug, Default)]
pub struct ModelBuilder {
    model: Model,
}

/// A term given by name when building a factor.
#[derive(Debug, Clone)]
pub enum TermSpec<'a> {
    Atom(&'a str, Vec<&'a str>),
    Value(f64),
}

impl ModelBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn domain(mut self, name: &str, size: usize) -> Self {
        self.model.domains.push(Domain::sized(name, size));
        self
    }

    pub fn named_domain(mut self, name: &str, constants: &[&str]) -> Self {
        self.model.domains.push(Domain::named(name, constants.iter().copied()));
        self
    }

    pub fn var(self, name: &str) -> Self {
        self.atom(name, &[])
    }

    pub fn atom(mut self, name: &str, params: &[&str]) -> Self {
        let params: Vec<DomainId> =
            params.iter().map(|p| self.model.domain_index(p).unwrap_or_else(|| panic!("unknown domain {p}"))).collect();
        let constraint = Constraint::none(params.len());
        self.model.atoms.push(RelationalAtom { name: name.into(), params, constraint });
        self
    }

    pub fn exclude(mut self, atom: &str, position: usize, constant: usize) -> Self {
        let a = self.model.atom_index(atom).unwrap_or_else(|| panic!("unknown atom {atom}"));
        self.model.atoms[a].constraint.excluded[position].insert(constant);
        self
    }

    /// Adds `rn(left, right; sigma2, d)`. Logical variable domains are taken
    /// from the atom parameter positions they occupy.
    pub fn rn(mut self, left: TermSpec<'_>, right: TermSpec<'_>, sigma2: f64, d: f64) -> Result<Self, ModelError> {
        let rn = RnPotential::new(sigma2, d)?;
        let mut lvs: Vec<LogicalVariable> = Vec::new();
        let mut terms = Vec::new();
        for spec in [left, right] {
            terms.push(match spec {
                TermSpec::Value(v) => Term::Value(v),
                TermSpec::Atom(name, args) => {
                    let atom = self
                        .model
                        .atom_index(name)
                        .ok_or_else(|| ModelError::Malformed(format!("unknown atom `{name}`")))?;
                    let params = self.model.atoms[atom].params.clone();
                    if params.len() != args.len() {
                        return Err(ModelError::Malformed(format!("arity mismatch for `{name}`")));
                    }
                    let mut idx = Vec::new();
                    for (lv, d) in args.into_iter().zip(params) {
                        let i = match lvs.iter().position(|l| l.name == lv) {
                            Some(i) => i,
                            None => {
                                lvs.push(LogicalVariable { name: lv.into(), domain: d });
                                lvs.len() - 1
                            }
                        };
                        idx.push(i);
                    }
                    Term::Atom { atom, args: idx }
                }
            });
        }
        self.model.parfactors.push(Parfactor::rn(lvs, terms[0].clone(), terms[1].clone(), rn));
        Ok(self)
    }

    pub fn observe(mut self, atom: &str, args: &[usize], value: f64) -> Self {
        let a = self.model.atom_index(atom).unwrap_or_else(|| panic!("unknown atom {atom}"));
        self.model.observations.push(Observation { variable: GroundVariable::new(a, args), value });
        self
    }

    pub fn query(mut self, atom: &str, args: &[usize]) -> Self {
        let a = self.model.atom_index(atom).unwrap_or_else(|| panic!("unknown atom {atom}"));
        self.model.query.push(GroundVariable::new(a, args));
        self
    }

    pub fn build(self) -> Result<Model, ModelError> {
        self.model.check()?;
        Ok(self.model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recession(markets: usize, banks: usize) -> Model {
        ModelBuilder::new()
            .domain("S", markets)
            .domain("B", banks)
            .var("Recession")
            .atom("Market", &["S"])
            .atom("Gain", &["S", "B"])
            .atom("Revenue", &["B"])
            .rn(TermSpec::Atom("Recession", vec![]), TermSpec::Atom("Market", vec!["S"]), 1.0, 0.0)
            .unwrap()
            .rn(TermSpec::Atom("Market", vec!["S"]), TermSpec::Atom("Gain", vec!["S", "B"]), 1.0, 0.0)
            .unwrap()
            .rn(TermSpec::Atom("Gain", vec!["S", "B"]), TermSpec::Atom("Revenue", vec!["B"]), 1.0, 0.0)
            .unwrap()
            .build()
            .unwrap()
    }

    #[test]
    fn cardinalities() {
        let m = recession(10, 8);
        assert_eq!(m.cardinality(m.atom_index("Revenue").unwrap()), 8);
        assert_eq!(m.cardinality(m.atom_index("Gain").unwrap()), 80);
        assert_eq!(m.cardinality(m.atom_index("Recession").unwrap()), 1);
        let m = ModelBuilder::new()
            .named_domain("S", &["auto", "bond", "stock", "a", "b", "c", "d", "e", "f", "g"])
            .atom("Market", &["S"])
            .exclude("Market", 0, 0)
            .build()
            .unwrap();
        assert_eq!(m.cardinality(0), 9);
        assert_eq!(m.groundings(0).len(), 9);
    }

    #[test]
    fn weight_of_single_pair() {
        let m = ModelBuilder::new()
            .var("X")
            .var("Y")
            .rn(TermSpec::Atom("X", vec![]), TermSpec::Atom("Y", vec![]), 1.0, 0.0)
            .unwrap()
            .build()
            .unwrap();
        let norm = -(2.0 * std::f64::consts::PI).sqrt().ln();
        let mut v = HashMap::new();
        v.insert(GroundVariable::new(0, []), 0.0);
        v.insert(GroundVariable::new(1, []), 0.0);
        assert!((m.ground_weight(&v).unwrap() - norm).abs() < 1e-15);
        v.insert(GroundVariable::new(0, []), 1.0);
        assert!((m.ground_weight(&v).unwrap() - (norm - 0.5)).abs() < 1e-15);
        v.remove(&GroundVariable::new(1, []));
        assert!(matches!(m.ground_weight(&v), Err(ModelError::MissingAssignment(_))));
    }

    #[test]
    fn weight_matches_pair_enumeration() {
        let m = recession(2, 2);
        // x_v = 0.1 * (index of v in the grounding order) + 0.05 * atom
        let mut val = HashMap::new();
        let mut k = 0.0;
        for a in 0..m.atoms.len() {
            for gv in m.groundings(a) {
                val.insert(gv, 0.1 * k + 0.05 * a as f64 - 0.3);
                k += 1.0;
            }
        }
        let x = |a: &str, args: &[usize]| val[&GroundVariable::new(m.atom_index(a).unwrap(), args)];
        let lp = |x: f64, y: f64| -(x - y) * (x - y) / 2.0 - 0.5 * (2.0 * std::f64::consts::PI).ln();
        let mut expected = 0.0;
        for s in 0..2 {
            expected += lp(x("Recession", &[]), x("Market", &[s]));
            for b in 0..2 {
                expected += lp(x("Market", &[s]), x("Gain", &[s, b]));
                expected += lp(x("Gain", &[s, b]), x("Revenue", &[b]));
            }
        }
        assert!((m.ground_weight(&val).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_variance() {
        assert!(matches!(RnPotential::new(-1.0, 0.0), Err(ModelError::BadVariance(_))));
        assert!(matches!(RnPotential::new(1e-13, 0.0), Err(ModelError::BadVariance(_))));
        assert!(RnPotential::new(1e-11, 0.0).is_ok());
    }

    #[test]
    fn rejects_empty_atom_and_observed_query() {
        let m = ModelBuilder::new().domain("S", 1).atom("A", &["S"]).exclude("A", 0, 0).build();
        assert!(matches!(m, Err(ModelError::EmptyAtom(_))));
        let m = ModelBuilder::new().var("A").observe("A", &[], 1.0).query("A", &[]).build();
        assert!(matches!(m, Err(ModelError::ObservedQuery(_))));
        let m = ModelBuilder::new().var("A").observe("A", &[], 1.0).observe("A", &[], 2.0).build();
        assert!(matches!(m, Err(ModelError::DuplicateObservation(_))));
    }
}
