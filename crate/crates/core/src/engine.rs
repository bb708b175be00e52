//! Lifted variable elimination for relational normal models.
//!
//! After shattering, every sub-parfactor becomes a [`LocalParfactor`]: a
//! quadratic over its terms that is repeated once per substitution of its live
//! logical variables. Parfactors whose coupled terms never share a logical
//! variable are all-pairs products and can be folded into the
//! [`LiftedQuadraticForm`]; the others stay structured. An atom is removed
//! either by inversion (it owns every logical variable of the parfactors it
//! appears in, so one symbolic integral serves all substitutions) or, once all
//! of its parfactors are folded, by a closed-form update of the form.

use std::collections::{BTreeSet, HashMap};
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::form::{FormAtom, FormError, LiftedQuadraticForm};
use crate::marginal::QueryMarginal;
use crate::model::{GroundVariable, Model, ModelError};
use crate::scalar::Scalar;
use crate::shatter::{Cell, LvCell, Shatter, SubParfactor, SubTerm};
use crate::validate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Inversion,
    AtomEntire,
    AtomWithin,
    OneGround,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Inversion plus every relational elimination.
    #[default]
    Lifted,
    /// Inversion, otherwise one ground variable at a time.
    InversionOnly,
}

#[derive(Debug, Clone, Default)]
pub struct EngineOptions {
    pub mode: Mode,
    /// Decompose the form into pairwise potentials after every step.
    pub check_closure: bool,
    pub deadline: Option<Instant>,
}

/// One elimination with the facts its precondition depends on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EliminationStep {
    pub target: String,
    pub method: Method,
    /// Coefficient updates performed.
    pub cost: usize,
    /// Ground variables of the target before the step.
    pub cardinality: u64,
    pub eliminated: u64,
    /// Inversion: live logical variables of the target's term.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub atom_lvs: Option<usize>,
    /// Inversion: live logical variables of each parfactor combined.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub parfactor_lvs: Vec<usize>,
    /// Relational: every parfactor touching the target was all-pairs.
    pub all_pairs: bool,
    /// Eigenvalues (orthogonal to 1, along 1) of the integrated block.
    pub eigenvalues: [f64; 2],
    pub neighbors: usize,
}

impl EliminationStep {
    /// Re-checks the method's precondition from the recorded facts.
    pub fn precondition_holds(&self) -> bool {
        let pd = self.eigenvalues.iter().all(|&l| l > 0.0);
        pd && match self.method {
            Method::Inversion => {
                !self.parfactor_lvs.is_empty() && self.parfactor_lvs.iter().all(|&n| Some(n) == self.atom_lvs)
            }
            Method::AtomEntire => self.all_pairs && self.eliminated == self.cardinality,
            Method::AtomWithin => self.all_pairs && self.eliminated < self.cardinality && self.neighbors == 0,
            Method::OneGround => self.all_pairs && self.eliminated == 1,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineErrorKind {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no query variables")]
    NoQuery,
    #[error("query component has no constant argument: {0}")]
    Unanchored(String),
    #[error("integral over {atom} diverges (eigenvalue {eigenvalue:e})")]
    DivergentIntegral { atom: String, eigenvalue: f64 },
    #[error("no lifted elimination applies to {0}")]
    NonPairwiseModel(String),
    #[error("intermediate form is not pairwise: {0}")]
    NonPairwiseResidue(String),
    #[error("deadline reached")]
    Timeout,
}

impl From<FormError> for EngineErrorKind {
    fn from(e: FormError) -> Self {
        match e {
            FormError::DivergentIntegral { atom, eigenvalue } => {
                EngineErrorKind::DivergentIntegral { atom, eigenvalue }
            }
            FormError::NonPairwiseResidue(s) => EngineErrorKind::NonPairwiseResidue(s),
            other => EngineErrorKind::NonPairwiseModel(other.to_string()),
        }
    }
}

/// Failure together with the steps applied before it.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{kind}")]
pub struct EngineError {
    pub kind: EngineErrorKind,
    pub trace: Vec<EliminationStep>,
}

impl EngineError {
    fn bare(kind: impl Into<EngineErrorKind>) -> Self {
        EngineError { kind: kind.into(), trace: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inference<T> {
    pub marginal: QueryMarginal<T>,
    pub trace: Vec<EliminationStep>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalTerm {
    /// Lifted atom index.
    pub atom: usize,
    /// Local logical variable per live parameter of the atom.
    pub lvs: Vec<usize>,
}

/// `sum over substitutions of (-1/2 t'Qt + h't + c)` where `t` are the term
/// values under the substitution.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalParfactor<T> {
    pub lvs: Vec<LvCell>,
    pub terms: Vec<LocalTerm>,
    /// Row-major, symmetric.
    pub q: Vec<T>,
    pub h: Vec<T>,
    pub c: T,
}

impl<T: Scalar> LocalParfactor<T> {
    fn k(&self) -> usize {
        self.terms.len()
    }

    fn from_sub(sp: &SubParfactor) -> Self {
        let mut terms: Vec<LocalTerm> = Vec::new();
        let slot: Vec<Option<usize>> = sp
            .terms
            .iter()
            .map(|t| match t {
                SubTerm::Live { atom, lvs } => {
                    let lt = LocalTerm { atom: *atom, lvs: lvs.clone() };
                    Some(terms.iter().position(|x| *x == lt).unwrap_or_else(|| {
                        terms.push(lt);
                        terms.len() - 1
                    }))
                }
                SubTerm::Value(_) => None,
            })
            .collect();
        let k = terms.len();
        let mut pf = LocalParfactor {
            lvs: sp.lvs.clone(),
            terms,
            q: vec![T::zero(); k * k],
            h: vec![T::zero(); k],
            c: T::zero(),
        };
        let value = |i: usize| match sp.terms[i] {
            SubTerm::Value(v) => v,
            SubTerm::Live { .. } => unreachable!(),
        };
        for p in &sp.potentials {
            let w = T::of(p.rn.precision());
            let d = T::of(p.rn.offset());
            let norm = -T::half() * (T::ln_2pi() + T::of(p.rn.sigma2()).ln());
            match (slot[p.left], slot[p.right]) {
                (Some(i), Some(j)) => {
                    pf.q[i * k + i] = pf.q[i * k + i] + w;
                    pf.q[j * k + j] = pf.q[j * k + j] + w;
                    pf.q[i * k + j] = pf.q[i * k + j] - w;
                    pf.q[j * k + i] = pf.q[j * k + i] - w;
                    pf.h[i] = pf.h[i] + w * d;
                    pf.h[j] = pf.h[j] - w * d;
                    pf.c = pf.c + norm - w * d * d * T::half();
                }
                (Some(i), None) => {
                    let m = T::of(value(p.right)) + d;
                    pf.q[i * k + i] = pf.q[i * k + i] + w;
                    pf.h[i] = pf.h[i] + w * m;
                    pf.c = pf.c + norm - w * m * m * T::half();
                }
                (None, Some(j)) => {
                    let m = T::of(value(p.left)) - d;
                    pf.q[j * k + j] = pf.q[j * k + j] + w;
                    pf.h[j] = pf.h[j] + w * m;
                    pf.c = pf.c + norm - w * m * m * T::half();
                }
                (None, None) => {
                    let r = T::of(value(p.left) - value(p.right)) - d;
                    pf.c = pf.c + norm - w * r * r * T::half();
                }
            }
        }
        pf
    }

    /// Drops inert terms and logical variables no term uses (scaling by their
    /// counts). Returns the total constant instead when no term is left.
    fn normalize(mut self) -> Result<Self, T> {
        let k = self.k();
        let keep: Vec<usize> =
            (0..k).filter(|&i| self.h[i] != T::zero() || (0..k).any(|j| self.q[i * k + j] != T::zero())).collect();
        if keep.len() < k {
            let nk = keep.len();
            let mut q = vec![T::zero(); nk * nk];
            for (a, &i) in keep.iter().enumerate() {
                for (b, &j) in keep.iter().enumerate() {
                    q[a * nk + b] = self.q[i * k + j];
                }
            }
            self.h = keep.iter().map(|&i| self.h[i]).collect();
            self.terms = keep.iter().map(|&i| self.terms[i].clone()).collect();
            self.q = q;
        }
        let used: BTreeSet<usize> = self.terms.iter().flat_map(|t| t.lvs.iter().copied()).collect();
        if used.len() < self.lvs.len() {
            let mut factor = T::one();
            let mut remap = vec![usize::MAX; self.lvs.len()];
            let mut lvs = Vec::new();
            for (l, cell) in self.lvs.iter().enumerate() {
                if used.contains(&l) {
                    remap[l] = lvs.len();
                    lvs.push(*cell);
                } else {
                    factor = factor * T::count(cell.count);
                }
            }
            self.lvs = lvs;
            for t in &mut self.terms {
                t.lvs.iter_mut().for_each(|l| *l = remap[*l]);
            }
            self.q.iter_mut().for_each(|x| *x = *x * factor);
            self.h.iter_mut().for_each(|x| *x = *x * factor);
            self.c = self.c * factor;
        }
        if self.terms.is_empty() {
            Err(self.c)
        } else {
            Ok(self)
        }
    }

    pub fn touches(&self, atom: usize) -> bool {
        self.terms.iter().any(|t| t.atom == atom)
    }

    /// Every coupled pair of terms uses disjoint logical variables, so the sum
    /// over substitutions factorizes into atom-level statistics.
    pub fn is_all_pairs(&self) -> bool {
        let k = self.k();
        (0..k).all(|i| {
            (i + 1..k).all(|j| {
                self.q[i * k + j] == T::zero() || self.terms[i].lvs.iter().all(|l| !self.terms[j].lvs.contains(l))
            })
        })
    }

    fn count_without(&self, used: &[&[usize]]) -> T {
        self.lvs
            .iter()
            .enumerate()
            .filter(|(l, _)| !used.iter().any(|u| u.contains(l)))
            .fold(T::one(), |s, (_, c)| s * T::count(c.count))
    }

    fn fold_into(&self, form: &mut LiftedQuadraticForm<T>) {
        debug_assert!(self.is_all_pairs());
        let k = self.k();
        for i in 0..k {
            let t = &self.terms[i];
            let a = FormAtom(t.atom);
            let mult = self.count_without(&[&t.lvs]);
            form.add_sq(a, -T::half() * self.q[i * k + i] * mult);
            form.add_lin(a, self.h[i] * mult);
            for j in i + 1..k {
                let qij = self.q[i * k + j];
                if qij == T::zero() {
                    continue;
                }
                let u = &self.terms[j];
                let mult = self.count_without(&[&t.lvs, &u.lvs]);
                if t.atom == u.atom {
                    form.add_sq(a, -qij * mult);
                    form.add_within(a, -T::two() * qij * mult);
                } else {
                    form.add_cross(a, FormAtom(u.atom), -qij * mult);
                }
            }
        }
        form.add_const(self.c * self.count_without(&[]));
    }
}

/// The shattered model: structured parfactors plus everything already folded
/// into the lifted form. Form slot `i` is lifted atom `i`.
#[derive(Debug, Clone)]
pub struct SplitModel<T> {
    pub shatter: Shatter,
    /// Lifted atoms still carrying free variables in a query component.
    pub active: Vec<bool>,
    pub parfactors: Vec<LocalParfactor<T>>,
    pub form: LiftedQuadraticForm<T>,
}

/// Shatters the model, absorbs observations and keeps only the components
/// that contain a query variable.
pub fn split<T: Scalar>(model: &Model) -> Result<SplitModel<T>, EngineError> {
    model.check().map_err(EngineError::bare)?;
    if model.query.is_empty() {
        return Err(EngineError::bare(EngineErrorKind::NoQuery));
    }
    let shatter = Shatter::new(model);
    let report = validate::validate_shattered(&shatter);
    if let Some(bad) = report.failures().next() {
        return Err(EngineError::bare(EngineErrorKind::Unanchored(bad.labels.join(", "))));
    }
    let (comp, _) = validate::components(&shatter);
    let query_comps: BTreeSet<usize> =
        (0..shatter.atoms.len()).filter(|&i| shatter.atoms[i].query.is_some()).filter_map(|i| comp[i]).collect();
    let active: Vec<bool> = comp.iter().map(|c| c.is_some_and(|c| query_comps.contains(&c))).collect();

    let mut form = LiftedQuadraticForm::new();
    for (i, a) in shatter.atoms.iter().enumerate() {
        let slot = form.add_atom(a.label.clone(), a.cardinality);
        if !active[i] {
            form.drop_atom(slot);
        }
    }
    let mut parfactors = Vec::new();
    for sp in &shatter.subparfactors {
        let pruned = sp.terms.iter().any(|t| matches!(t, SubTerm::Live { atom, .. } if !active[*atom]));
        if pruned {
            continue;
        }
        match LocalParfactor::from_sub(sp).normalize() {
            Ok(pf) => parfactors.push(pf),
            Err(c) => form.add_const(c),
        }
    }
    Ok(SplitModel { shatter, active, parfactors, form })
}

/// What [`find_eliminable`] decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Plan {
    pub atom: usize,
    pub method: Method,
}

impl<T: Scalar> SplitModel<T> {
    pub fn label(&self, atom: usize) -> &str {
        &self.shatter.atoms[atom].label
    }

    fn is_query(&self, atom: usize) -> bool {
        self.shatter.atoms[atom].query.is_some()
    }

    pub fn remaining(&self) -> Vec<usize> {
        (0..self.active.len()).filter(|&i| self.active[i] && !self.is_query(i)).collect()
    }

    fn touching(&self, atom: usize) -> Vec<usize> {
        (0..self.parfactors.len()).filter(|&p| self.parfactors[p].touches(atom)).collect()
    }

    fn coupled_atoms(&self, atom: usize) -> BTreeSet<usize> {
        let mut out: BTreeSet<usize> = self.form.neighbors(FormAtom(atom)).into_iter().map(|(b, _)| b.0).collect();
        for p in self.touching(atom) {
            out.extend(self.parfactors[p].terms.iter().map(|t| t.atom).filter(|&a| a != atom));
        }
        out
    }

    /// Inversion applies when the atom's term carries every logical variable of
    /// each parfactor it appears in, once, and the form couples it to nothing
    /// with more than one variable.
    fn invertible(&self, atom: usize) -> bool {
        let e = FormAtom(atom);
        if self.form.within(e) != T::zero() {
            return false;
        }
        if self.form.neighbors(e).iter().any(|(b, _)| self.form.cardinality(*b) != 1) {
            return false;
        }
        let touching = self.touching(atom);
        !touching.is_empty()
            && touching.iter().all(|&p| {
                let pf = &self.parfactors[p];
                let own: Vec<&LocalTerm> = pf.terms.iter().filter(|t| t.atom == atom).collect();
                own.len() == 1 && own[0].lvs.len() == pf.lvs.len()
            })
    }

    /// Deterministic choice of the next elimination.
    pub fn find_eliminable(&self, mode: Mode) -> Result<Plan, EngineErrorKind> {
        let remaining = self.remaining();
        for &a in &remaining {
            let structured = self.touching(a).iter().any(|&p| !self.parfactors[p].is_all_pairs());
            if structured && self.invertible(a) {
                return Ok(Plan { atom: a, method: Method::Inversion });
            }
        }
        let relational: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|&a| self.touching(a).iter().all(|&p| self.parfactors[p].is_all_pairs()))
            .collect();
        if mode == Mode::Lifted {
            let m = |a: usize| self.form.cardinality(FormAtom(a));
            if let Some(&a) = relational.iter().find(|&&a| m(a) >= 2 && !self.coupled_atoms(a).is_empty()) {
                return Ok(Plan { atom: a, method: Method::AtomEntire });
            }
            if let Some(&a) = relational.iter().find(|&&a| m(a) >= 2) {
                return Ok(Plan { atom: a, method: Method::AtomWithin });
            }
        }
        relational
            .iter()
            .copied()
            .min_by_key(|&a| self.coupled_atoms(a).len())
            .map(|atom| Plan { atom, method: Method::OneGround })
            .ok_or_else(|| {
                EngineErrorKind::NonPairwiseModel(
                    remaining.iter().map(|&a| self.label(a).to_owned()).collect::<Vec<_>>().join(", "),
                )
            })
    }

    fn fold_touching(&mut self, atom: usize) {
        let (fold, keep): (Vec<_>, Vec<_>) =
            std::mem::take(&mut self.parfactors).into_iter().partition(|p| p.touches(atom));
        self.parfactors = keep;
        for pf in fold {
            pf.fold_into(&mut self.form);
        }
    }

    /// Combines every parfactor touching `atom` over the atom's logical
    /// variables and integrates the atom once for all substitutions.
    pub fn inversion_eliminate(&mut self, atom: usize) -> Result<EliminationStep, EngineErrorKind> {
        assert!(self.invertible(atom), "inversion precondition");
        let e = FormAtom(atom);
        let card = self.form.cardinality(e);
        let (taken, keep): (Vec<_>, Vec<_>) =
            std::mem::take(&mut self.parfactors).into_iter().partition(|p| p.touches(atom));
        self.parfactors = keep;
        let parfactor_lvs: Vec<usize> = taken.iter().map(|p| p.lvs.len()).collect();

        let first = &taken[0];
        let first_e = first.terms.iter().find(|t| t.atom == atom).unwrap();
        let lvs: Vec<LvCell> = first_e.lvs.iter().map(|&l| first.lvs[l]).collect();
        let width = lvs.len();
        let mut terms = vec![LocalTerm { atom, lvs: (0..width).collect() }];
        let mut maps = Vec::new();
        for pf in &taken {
            let own = pf.terms.iter().find(|t| t.atom == atom).unwrap();
            let mut rename = vec![usize::MAX; pf.lvs.len()];
            for (p, &l) in own.lvs.iter().enumerate() {
                rename[l] = p;
            }
            let idx: Vec<usize> = pf
                .terms
                .iter()
                .map(|t| {
                    let lt = LocalTerm { atom: t.atom, lvs: t.lvs.iter().map(|&l| rename[l]).collect() };
                    terms.iter().position(|x| *x == lt).unwrap_or_else(|| {
                        terms.push(lt);
                        terms.len() - 1
                    })
                })
                .collect();
            maps.push(idx);
        }
        let singles: Vec<(FormAtom, T)> = self.form.neighbors(e);
        for (b, _) in &singles {
            let lt = LocalTerm { atom: b.0, lvs: Vec::new() };
            if !terms.contains(&lt) {
                terms.push(lt);
            }
        }
        let k = terms.len();
        let mut q = vec![T::zero(); k * k];
        let mut h = vec![T::zero(); k];
        let mut c = T::zero();
        for (pf, idx) in taken.iter().zip(&maps) {
            let pk = pf.k();
            for i in 0..pk {
                h[idx[i]] = h[idx[i]] + pf.h[i];
                for j in 0..pk {
                    q[idx[i] * k + idx[j]] = q[idx[i] * k + idx[j]] + pf.q[i * pk + j];
                }
            }
            c = c + pf.c;
        }
        q[0] = q[0] - T::two() * self.form.sq(e);
        h[0] = h[0] + self.form.lin(e);
        for (b, cr) in &singles {
            let j = terms.iter().position(|t| t.atom == b.0 && t.lvs.is_empty()).unwrap();
            q[j] = q[j] - *cr;
            q[j * k] = q[j * k] - *cr;
        }
        self.form.drop_atom(e);
        self.active[atom] = false;

        let pivot = q[0];
        if !(pivot > T::zero()) {
            return Err(EngineErrorKind::DivergentIntegral {
                atom: self.label(atom).to_owned(),
                eigenvalue: pivot.as_f64(),
            });
        }
        let he = h[0];
        let r = k - 1;
        let mut nq = vec![T::zero(); r * r];
        let mut nh = vec![T::zero(); r];
        for i in 0..r {
            let qie = q[(i + 1) * k];
            nh[i] = h[i + 1] - qie * he / pivot;
            for j in 0..r {
                nq[i * r + j] = q[(i + 1) * k + j + 1] - qie * q[j + 1] / pivot;
            }
        }
        let nc = c + T::half() * (T::ln_2pi() - pivot.ln()) + he * he / (T::two() * pivot);
        let result = LocalParfactor { lvs, terms: terms[1..].to_vec(), q: nq, h: nh, c: nc };
        match result.normalize() {
            Ok(pf) => self.parfactors.push(pf),
            Err(c) => self.form.add_const(c),
        }
        let p = pivot.as_f64();
        Ok(EliminationStep {
            target: self.label(atom).to_owned(),
            method: Method::Inversion,
            cost: k * k,
            cardinality: card,
            eliminated: card,
            atom_lvs: Some(width),
            parfactor_lvs,
            all_pairs: false,
            eigenvalues: [p, p],
            neighbors: k - 1,
        })
    }

    /// Folds the atom's all-pairs parfactors into the form and integrates
    /// `n` of its variables there.
    pub fn relational_atom_eliminate(
        &mut self,
        atom: usize,
        method: Method,
        n: u64,
    ) -> Result<EliminationStep, EngineErrorKind> {
        let all_pairs = self.touching(atom).iter().all(|&p| self.parfactors[p].is_all_pairs());
        if !all_pairs {
            return Err(EngineErrorKind::NonPairwiseModel(self.label(atom).to_owned()));
        }
        self.fold_touching(atom);
        let e = FormAtom(atom);
        let m = self.form.cardinality(e);
        let neighbors = self.form.neighbors(e).len();
        let (par, one) = self.form.eigenvalues(e, n);
        let cost = self.form.integrate_block(e, n)?;
        if n == m {
            self.active[atom] = false;
        }
        let eig = if n >= 2 { [par.as_f64(), one.as_f64()] } else { [one.as_f64(), one.as_f64()] };
        Ok(EliminationStep {
            target: self.label(atom).to_owned(),
            method,
            cost,
            cardinality: m,
            eliminated: n,
            atom_lvs: None,
            parfactor_lvs: Vec::new(),
            all_pairs,
            eigenvalues: eig,
            neighbors,
        })
    }

    /// Applies a plan, possibly as more than one step.
    pub fn apply(&mut self, plan: Plan) -> Result<Vec<EliminationStep>, EngineErrorKind> {
        let m = self.form.cardinality(FormAtom(plan.atom));
        Ok(match plan.method {
            Method::Inversion => vec![self.inversion_eliminate(plan.atom)?],
            Method::AtomEntire => vec![self.relational_atom_eliminate(plan.atom, Method::AtomEntire, m)?],
            Method::AtomWithin => vec![
                self.relational_atom_eliminate(plan.atom, Method::AtomWithin, m - 1)?,
                self.relational_atom_eliminate(plan.atom, Method::AtomEntire, 1)?,
            ],
            Method::OneGround => vec![self.relational_atom_eliminate(plan.atom, Method::OneGround, 1)?],
        })
    }

    /// Folds what is left and reads off the marginal over the query atoms.
    pub fn finish(mut self, model: &Model) -> Result<QueryMarginal<T>, EngineErrorKind> {
        if let Some(&a) = self.remaining().first() {
            return Err(EngineErrorKind::NonPairwiseModel(self.label(a).to_owned()));
        }
        for pf in std::mem::take(&mut self.parfactors) {
            pf.fold_into(&mut self.form);
        }
        let mut slots = vec![usize::MAX; model.query.len()];
        for (i, a) in self.shatter.atoms.iter().enumerate() {
            if let Some(q) = a.query {
                slots[q] = i;
            }
        }
        let k = slots.len();
        let mut j = vec![T::zero(); k * k];
        let mut h = vec![T::zero(); k];
        for (r, &a) in slots.iter().enumerate() {
            let fa = FormAtom(a);
            h[r] = self.form.lin(fa);
            j[r * k + r] = -T::two() * self.form.sq(fa);
            for (s, &b) in slots.iter().enumerate() {
                if s != r {
                    j[r * k + s] = -self.form.cross(fa, FormAtom(b));
                }
            }
        }
        let labels: Vec<String> = model.query.iter().map(|q| model.label(q)).collect();
        QueryMarginal::from_canonical(labels.clone(), &j, &h, self.form.log_const())
            .ok_or_else(|| EngineErrorKind::DivergentIntegral { atom: labels.join(", "), eigenvalue: 0.0 })
    }

    /// Log-weight of a full valuation of the free ground variables that are
    /// still represented, before any elimination step.
    pub fn log_weight(&self, model: &Model, values: &HashMap<GroundVariable, f64>) -> T {
        let members: Vec<Vec<usize>> = self.shatter.domains.iter().map(|d| d.members(Cell::Rest)).collect();
        let mut total = self.form.log_const();
        for pf in &self.parfactors {
            let cells: Vec<Vec<usize>> = pf
                .lvs
                .iter()
                .map(|l| match l.cell {
                    Cell::Single(c) => vec![c],
                    Cell::Rest => members[l.domain].clone(),
                })
                .collect();
            let sizes: Vec<usize> = cells.iter().map(Vec::len).collect();
            let k = pf.k();
            crate::model::for_each_tuple(&sizes, |theta| {
                let t: Vec<T> = pf
                    .terms
                    .iter()
                    .map(|term| {
                        let la = &self.shatter.atoms[term.atom];
                        let mut live = term.lvs.iter();
                        let args: Vec<usize> = la
                            .cells
                            .iter()
                            .zip(&la.counts)
                            .zip(&model.atoms[la.origin].params)
                            .map(|((&cell, &count), &d)| {
                                if count >= 2 {
                                    let l = *live.next().unwrap();
                                    cells[l][theta[l]]
                                } else {
                                    self.shatter.domains[d].members(cell)[0]
                                }
                            })
                            .collect();
                        T::of(values[&GroundVariable::new(la.origin, args)])
                    })
                    .collect();
                let mut s = pf.c;
                for i in 0..k {
                    s = s + pf.h[i] * t[i];
                    for j in 0..k {
                        s = s - T::half() * t[i] * pf.q[i * k + j] * t[j];
                    }
                }
                total = total + s;
            });
        }
        total
    }
}

pub fn fove_continuous(model: &Model) -> Result<Inference<f64>, EngineError> {
    fove_continuous_with(model, &EngineOptions::default())
}

/// Eliminates every non-query atom and returns the query marginal with the
/// steps taken.
pub fn fove_continuous_with<T: Scalar>(model: &Model, opts: &EngineOptions) -> Result<Inference<T>, EngineError> {
    let mut state = split::<T>(model)?;
    let mut trace = Vec::new();
    let fail = |kind: EngineErrorKind, trace: &Vec<EliminationStep>| EngineError { kind, trace: trace.clone() };
    while !state.remaining().is_empty() {
        if opts.deadline.is_some_and(|d| Instant::now() >= d) {
            return Err(fail(EngineErrorKind::Timeout, &trace));
        }
        let plan = state.find_eliminable(opts.mode).map_err(|k| fail(k, &trace))?;
        let steps = state.apply(plan).map_err(|k| fail(k, &trace))?;
        trace.extend(steps);
        if opts.check_closure {
            let reference =
                state.parfactors.iter().flat_map(|p| p.q.iter().chain(&p.h)).fold(T::zero(), |s, x| s.max(x.abs()));
            state.form.to_pairwise_scaled(reference).map_err(|e| fail(e.into(), &trace))?;
        }
    }
    let marginal = state.finish(model).map_err(|k| fail(k, &trace))?;
    Ok(Inference { marginal, trace })
}
