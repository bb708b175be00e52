//! Quadratic exponents over exchangeable atoms.
//!
//! For an atom `A` with `m` live ground variables write `S = sum x_i`,
//! `S2 = sum x_i^2` and `P = sum_{i<j} x_i x_j`. A [`LiftedQuadraticForm`]
//! stores the exponent
//!
//! ```text
//! sum_A sq[A] S2_A + within[A] P_A + lin[A] S_A  +  sum_{A<B} cross[A,B] S_A S_B  +  log_const
//! ```
//!
//! which is invariant under permutations inside each atom. The ground
//! precision matrix has `-2 sq[A]` on the diagonal, `-within[A]` between two
//! variables of `A` and `-cross[A,B]` between `A` and `B`; the potential vector
//! is `lin`. Marginalizing `n` variables of an atom is a closed-form update that
//! only touches the atom's neighbours, so the cost never depends on `m`.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::scalar::Scalar;

/// Relative size below which an eigenvalue counts as zero.
pub const PIVOT_EPS: f64 = 1e-12;
/// Relative tolerance used when splitting a form into pairwise potentials.
pub const PAIRWISE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct FormAtom(pub usize);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormError {
    #[error("integral over {atom} diverges (eigenvalue {eigenvalue:e})")]
    DivergentIntegral { atom: String, eigenvalue: f64 },
    #[error("cannot eliminate {n} of {m} variables of {atom} within the atom")]
    TooMany { atom: String, n: u64, m: u64 },
    #[error("unknown atom #{0}")]
    UnknownAtom(usize),
    #[error("form is not a product of pairwise potentials: {0}")]
    NonPairwiseResidue(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomCoeffs<T> {
    pub label: String,
    pub cardinality: u64,
    pub sq: T,
    pub within: T,
    pub lin: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LiftedQuadraticForm<T> {
    atoms: Vec<Option<AtomCoeffs<T>>>,
    cross: BTreeMap<(usize, usize), T>,
    log_const: T,
}

impl<T: Scalar> Default for LiftedQuadraticForm<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn key(a: FormAtom, b: FormAtom) -> (usize, usize) {
    if a.0 < b.0 {
        (a.0, b.0)
    } else {
        (b.0, a.0)
    }
}

/// `log` of `int exp(-a x^2 + 2 b x + c) dx = sqrt(pi / a) exp(b^2 / a + c)`.
pub fn integrate_scalar<T: Scalar>(a: T, b: T, c: T) -> Result<T, FormError> {
    if !(a > T::zero()) {
        return Err(FormError::DivergentIntegral { atom: "scalar".into(), eigenvalue: a.as_f64() });
    }
    Ok(T::half() * (T::of(std::f64::consts::PI) / a).ln() + b * b / a + c)
}

/// Eigenvalues of the precision block of `n` exchangeable variables with
/// diagonal `-2 sq` and off-diagonal `-within`: `(orthogonal to 1, along 1)`.
pub fn block_eigenvalues<T: Scalar>(sq: T, within: T, n: u64) -> (T, T) {
    let diag = -T::two() * sq;
    let par = diag + within;
    let one = diag - T::count(n.saturating_sub(1)) * within;
    (par, one)
}

impl<T: Scalar> LiftedQuadraticForm<T> {
    pub fn new() -> Self {
        LiftedQuadraticForm { atoms: Vec::new(), cross: BTreeMap::new(), log_const: T::zero() }
    }

    pub fn add_atom(&mut self, label: impl Into<String>, cardinality: u64) -> FormAtom {
        assert!(cardinality >= 1, "atoms have at least one variable");
        self.atoms.push(Some(AtomCoeffs {
            label: label.into(),
            cardinality,
            sq: T::zero(),
            within: T::zero(),
            lin: T::zero(),
        }));
        FormAtom(self.atoms.len() - 1)
    }

    /// Form of a single relational normal between two distinct atoms of the
    /// given sizes.
    pub fn from_rn(card_x: u64, card_y: u64, sigma2: T, offset: T) -> (Self, FormAtom, FormAtom) {
        let mut f = Self::new();
        let x = f.add_atom("X", card_x);
        let y = f.add_atom("Y", card_y);
        f.add_rn(x, y, sigma2, offset);
        (f, x, y)
    }

    pub fn atom(&self, a: FormAtom) -> Option<&AtomCoeffs<T>> {
        self.atoms.get(a.0).and_then(Option::as_ref)
    }

    fn atom_mut(&mut self, a: FormAtom) -> &mut AtomCoeffs<T> {
        self.atoms[a.0].as_mut().expect("live atom")
    }

    fn get(&self, a: FormAtom) -> Result<&AtomCoeffs<T>, FormError> {
        self.atom(a).ok_or(FormError::UnknownAtom(a.0))
    }

    pub fn atoms(&self) -> impl Iterator<Item = (FormAtom, &AtomCoeffs<T>)> + '_ {
        self.atoms.iter().enumerate().filter_map(|(i, a)| a.as_ref().map(|a| (FormAtom(i), a)))
    }

    pub fn slot_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn cardinality(&self, a: FormAtom) -> u64 {
        self.atom(a).map_or(0, |c| c.cardinality)
    }

    pub fn sq(&self, a: FormAtom) -> T {
        self.atom(a).map_or(T::zero(), |c| c.sq)
    }

    pub fn within(&self, a: FormAtom) -> T {
        self.atom(a).map_or(T::zero(), |c| c.within)
    }

    pub fn lin(&self, a: FormAtom) -> T {
        self.atom(a).map_or(T::zero(), |c| c.lin)
    }

    pub fn cross(&self, a: FormAtom, b: FormAtom) -> T {
        self.cross.get(&key(a, b)).copied().unwrap_or_else(T::zero)
    }

    pub fn log_const(&self) -> T {
        self.log_const
    }

    /// Atoms coupled to `a` with their cross coefficient.
    pub fn neighbors(&self, a: FormAtom) -> Vec<(FormAtom, T)> {
        self.cross
            .iter()
            .filter_map(|(&(i, j), &c)| {
                if i == a.0 {
                    Some((FormAtom(j), c))
                } else if j == a.0 {
                    Some((FormAtom(i), c))
                } else {
                    None
                }
            })
            .collect()
    }

    pub fn add_sq(&mut self, a: FormAtom, v: T) {
        self.atom_mut(a).sq = self.atom_mut(a).sq + v;
    }

    pub fn add_within(&mut self, a: FormAtom, v: T) {
        let c = self.atom_mut(a);
        if c.cardinality >= 2 {
            c.within = c.within + v;
        }
    }

    pub fn add_lin(&mut self, a: FormAtom, v: T) {
        self.atom_mut(a).lin = self.atom_mut(a).lin + v;
    }

    pub fn add_cross(&mut self, a: FormAtom, b: FormAtom, v: T) {
        assert_ne!(a, b, "cross coefficient needs two atoms");
        if v == T::zero() {
            return;
        }
        let e = self.cross.entry(key(a, b)).or_insert_with(T::zero);
        *e = *e + v;
    }

    pub fn add_const(&mut self, v: T) {
        self.log_const = self.log_const + v;
    }

    /// Removes an atom and every coefficient that mentions it.
    pub(crate) fn drop_atom(&mut self, a: FormAtom) {
        if let Some(slot) = self.atoms.get_mut(a.0) {
            *slot = None;
        }
        self.cross.retain(|&(i, j), _| i != a.0 && j != a.0);
    }

    /// Multiplies in `prod_{x in a, y in b} N(x - y; offset, sigma2)`.
    pub fn add_rn(&mut self, a: FormAtom, b: FormAtom, sigma2: T, offset: T) {
        let (m, n) = (self.cardinality(a), self.cardinality(b));
        let (mt, nt) = (T::count(m), T::count(n));
        let w = sigma2.recip();
        self.add_sq(a, -nt * w * T::half());
        self.add_sq(b, -mt * w * T::half());
        self.add_cross(a, b, w);
        self.add_lin(a, nt * w * offset);
        self.add_lin(b, -mt * w * offset);
        let per_pair = -w * offset * offset * T::half() - T::half() * (T::ln_2pi() + sigma2.ln());
        self.add_const(mt * nt * per_pair);
    }

    /// Multiplies in `prod_{x in a} N(x; value, sigma2)`.
    pub fn add_anchor(&mut self, a: FormAtom, value: T, sigma2: T) {
        let mt = T::count(self.cardinality(a));
        let w = sigma2.recip();
        self.add_sq(a, -w * T::half());
        self.add_lin(a, w * value);
        self.add_const(mt * (-w * value * value * T::half() - T::half() * (T::ln_2pi() + sigma2.ln())));
    }

    /// Multiplies in `prod_{i<j} N(x_i - x_j; 0, sigma2)` over one atom.
    pub fn add_within_rn(&mut self, a: FormAtom, sigma2: T) {
        let m = self.cardinality(a);
        if m < 2 {
            return;
        }
        let w = sigma2.recip();
        let mt = T::count(m);
        self.add_sq(a, -(mt - T::one()) * w * T::half());
        self.add_within(a, w);
        let pairs = T::count(m * (m - 1) / 2);
        self.add_const(-pairs * T::half() * (T::ln_2pi() + sigma2.ln()));
    }

    /// `(orthogonal to 1, along 1)` eigenvalues of the precision block of `n`
    /// variables of `a`.
    pub fn eigenvalues(&self, a: FormAtom, n: u64) -> (T, T) {
        let c = self.atom(a).expect("live atom");
        block_eigenvalues(c.sq, c.within, n)
    }

    /// Integrates `n` of the `m` variables of `a` in closed form and returns the
    /// number of coefficients written.
    pub(crate) fn integrate_block(&mut self, a: FormAtom, n: u64) -> Result<usize, FormError> {
        let c = self.get(a)?.clone();
        let m = c.cardinality;
        debug_assert!(n >= 1 && n <= m);
        let (par, one) = block_eigenvalues(c.sq, c.within, n);
        let scale = (T::two() * c.sq).abs() + T::count(n.saturating_sub(1)) * c.within.abs();
        let eps = T::of(PIVOT_EPS) * scale.max(T::min_positive_value());
        if n >= 2 && !(par > eps) {
            return Err(FormError::DivergentIntegral { atom: c.label.clone(), eigenvalue: par.as_f64() });
        }
        if !(one > eps) {
            return Err(FormError::DivergentIntegral { atom: c.label.clone(), eigenvalue: one.as_f64() });
        }
        let nt = T::count(n);
        let half_ln2pi = T::half() * T::ln_2pi();
        let mut delta = nt * half_ln2pi - T::half() * one.ln() + nt * c.lin * c.lin / (T::two() * one);
        if n >= 2 {
            delta = delta - T::half() * T::count(n - 1) * par.ln();
        }
        self.log_const = self.log_const + delta;

        let mut nbrs = self.neighbors(a);
        let remaining = m - n;
        if remaining == 0 {
            self.atoms[a.0] = None;
            self.cross.retain(|&(i, j), _| i != a.0 && j != a.0);
        } else {
            let rest = self.atom_mut(a);
            rest.cardinality = remaining;
            if remaining == 1 {
                rest.within = T::zero();
            }
            if c.within != T::zero() {
                nbrs.push((a, c.within));
            }
        }
        nbrs.sort_by_key(|(p, _)| *p);

        let g = nt / one;
        let mut updates = 1;
        for (idx, &(p, cp)) in nbrs.iter().enumerate() {
            self.add_lin(p, g * c.lin * cp);
            self.add_sq(p, g * cp * cp * T::half());
            self.add_within(p, g * cp * cp);
            updates += 3;
            for &(q, cq) in &nbrs[idx + 1..] {
                self.add_cross(p, q, g * cp * cq);
                updates += 1;
            }
        }
        Ok(updates)
    }

    /// Marginalizes every variable of `e` using the exchangeable eigenstructure.
    pub fn eliminate_atom_entirely(&self, e: FormAtom) -> Result<Self, FormError> {
        let mut f = self.clone();
        let m = f.get(e)?.cardinality;
        f.integrate_block(e, m)?;
        Ok(f)
    }

    /// Marginalizes `n < m` variables of `e`, leaving `m - n` exchangeable ones.
    /// For a pure within-atom product with variance `s` the remaining pairwise
    /// variance is `s (m - n) / m`.
    pub fn eliminate_within_atom(&self, e: FormAtom, n: u64) -> Result<Self, FormError> {
        let mut f = self.clone();
        f.eliminate_within_atom_mut(e, n)?;
        Ok(f)
    }

    pub(crate) fn eliminate_within_atom_mut(&mut self, e: FormAtom, n: u64) -> Result<usize, FormError> {
        let c = self.get(e)?;
        if n >= c.cardinality {
            return Err(FormError::TooMany { atom: c.label.clone(), n, m: c.cardinality });
        }
        if n == 0 {
            return Ok(0);
        }
        self.integrate_block(e, n)
    }

    /// Splits one ground variable off `e` and integrates it symbolically.
    pub fn eliminate_one_ground(&self, e: FormAtom) -> Result<Self, FormError> {
        let mut f = self.clone();
        f.get(e)?;
        f.integrate_block(e, 1)?;
        Ok(f)
    }

    /// Exponent at a point given the values of every atom's variables.
    pub fn evaluate(&self, values: &BTreeMap<FormAtom, Vec<T>>) -> T {
        let sums: BTreeMap<FormAtom, T> =
            values.iter().map(|(&a, v)| (a, v.iter().fold(T::zero(), |s, &x| s + x))).collect();
        let mut total = self.log_const;
        for (a, c) in self.atoms() {
            let v = &values[&a];
            assert_eq!(v.len() as u64, c.cardinality);
            let s2 = v.iter().fold(T::zero(), |s, &x| s + x * x);
            let p = (sums[&a] * sums[&a] - s2) * T::half();
            total = total + c.sq * s2 + c.within * p + c.lin * sums[&a];
        }
        for (&(i, j), &c) in &self.cross {
            total = total + c * sums[&FormAtom(i)] * sums[&FormAtom(j)];
        }
        total
    }

    /// Ground Gaussian in canonical form: `exponent = -1/2 x'Jx + h'x + c`,
    /// variables ordered by atom slot.
    pub fn to_dense(&self) -> DenseForm<T> {
        let mut vars = Vec::new();
        for (a, c) in self.atoms() {
            for i in 0..c.cardinality {
                vars.push((a, i));
            }
        }
        let n = vars.len();
        let mut j = vec![vec![T::zero(); n]; n];
        let mut h = vec![T::zero(); n];
        for r in 0..n {
            let (a, _) = vars[r];
            h[r] = self.lin(a);
            for s in 0..n {
                let (b, _) = vars[s];
                j[r][s] = if r == s {
                    -T::two() * self.sq(a)
                } else if a == b {
                    -self.within(a)
                } else {
                    -self.cross(a, b)
                };
            }
        }
        (vars, j, h, self.log_const)
    }

    /// Largest coefficient magnitude, used as a scale for comparisons.
    pub fn scale(&self) -> T {
        let mut s = T::zero();
        for (_, c) in self.atoms() {
            s = s.max(c.sq.abs()).max(c.within.abs()).max(c.lin.abs());
        }
        self.cross.values().fold(s, |s, c| s.max(c.abs()))
    }

    /// Maximum coefficient-wise difference to another form over the same slots,
    /// ignoring `log_const`.
    pub fn max_coeff_diff(&self, other: &Self) -> T {
        let mut d = T::zero();
        let slots = self.atoms.len().max(other.atoms.len());
        for i in 0..slots {
            let a = FormAtom(i);
            d = d
                .max((self.sq(a) - other.sq(a)).abs())
                .max((self.within(a) - other.within(a)).abs())
                .max((self.lin(a) - other.lin(a)).abs());
        }
        let keys: BTreeSet<_> = self.cross.keys().chain(other.cross.keys()).copied().collect();
        for (i, j) in keys {
            d = d.max((self.cross(FormAtom(i), FormAtom(j)) - other.cross(FormAtom(i), FormAtom(j))).abs());
        }
        d
    }

    fn row_sum(&self, a: FormAtom) -> (T, T) {
        let c = self.atom(a).expect("live atom");
        let m1 = T::count(c.cardinality - 1);
        let mut r = -T::two() * c.sq - m1 * c.within;
        let mut scale = (T::two() * c.sq).abs() + m1 * c.within.abs();
        for (b, x) in self.neighbors(a) {
            let nb = T::count(self.cardinality(b));
            r = r - nb * x;
            scale = scale + nb * x.abs();
        }
        (r, scale)
    }

    /// Rewrites the form as a product of relational (mean-shifted) normals:
    /// within-atom pairs, all-pairs links between atoms and per-variable
    /// anchors. Fails when a coupling has the wrong sign or a linear term cannot
    /// be carried by any anchor.
    pub fn to_pairwise(&self) -> Result<PairwiseDecomposition<T>, FormError> {
        self.to_pairwise_scaled(T::zero())
    }

    /// As [`to_pairwise`](Self::to_pairwise), with residues judged against at
    /// least `reference` (the magnitude of potentials held outside the form).
    pub fn to_pairwise_scaled(&self, reference: T) -> Result<PairwiseDecomposition<T>, FormError> {
        let tol = T::of(PAIRWISE_EPS);
        let scale = self.scale().max(reference.abs()).max(T::min_positive_value());
        let mut terms = Vec::new();
        for (a, c) in self.atoms() {
            if c.cardinality >= 2 && c.within != T::zero() {
                if c.within < -tol * scale {
                    return Err(FormError::NonPairwiseResidue(format!("negative within-atom coupling on {}", c.label)));
                }
                terms.push(PairwiseTerm::Within { atom: a, precision: c.within });
            }
        }
        // anchors and spanning forest over cross links
        let live: Vec<FormAtom> = self.atoms().map(|(a, _)| a).collect();
        let mut anchor = BTreeMap::new();
        let mut anchored = BTreeSet::new();
        for &a in &live {
            let (r, s) = self.row_sum(a);
            let s = s.max(scale);
            if r < -tol * s {
                return Err(FormError::NonPairwiseResidue(format!(
                    "{} has a negative anchor weight",
                    self.atom(a).unwrap().label
                )));
            }
            if r > tol * s {
                anchored.insert(a);
            }
            anchor.insert(a, r);
        }
        let mut cross_terms: BTreeMap<(usize, usize), (T, T)> = BTreeMap::new();
        for (&(i, j), &w) in &self.cross {
            if w < -tol * scale {
                return Err(FormError::NonPairwiseResidue(format!(
                    "negative coupling between {} and {}",
                    self.atom(FormAtom(i)).unwrap().label,
                    self.atom(FormAtom(j)).unwrap().label
                )));
            }
            cross_terms.insert((i, j), (w, T::zero()));
        }

        let mut visited = BTreeSet::new();
        let mut residual: BTreeMap<FormAtom, T> = live.iter().map(|&a| (a, self.lin(a))).collect();
        let mut anchor_values: BTreeMap<FormAtom, T> = BTreeMap::new();
        let mut roots: Vec<FormAtom> = live.iter().copied().filter(|a| anchored.contains(a)).collect();
        roots.extend(live.iter().copied().filter(|a| !anchored.contains(a)));
        for root in roots {
            if visited.contains(&root) {
                continue;
            }
            // breadth-first tree over positive links
            let mut order = vec![root];
            let mut parent = BTreeMap::new();
            visited.insert(root);
            let mut k = 0;
            while k < order.len() {
                let v = order[k];
                k += 1;
                for (u, w) in self.neighbors(v) {
                    if w > T::zero() && visited.insert(u) {
                        parent.insert(u, v);
                        order.push(u);
                    }
                }
            }
            let mass_scale = order.iter().fold(T::zero(), |s, &v| {
                let m = T::count(self.cardinality(v));
                s + m * (self.lin(v).abs() + scale)
            });
            for &v in order.iter().rev() {
                let res = residual[&v];
                if anchored.contains(&v) {
                    anchor_values.insert(v, res / anchor[&v]);
                    continue;
                }
                match parent.get(&v) {
                    Some(&p) => {
                        let (mv, mp) = (T::count(self.cardinality(v)), T::count(self.cardinality(p)));
                        let w = self.cross(v, p);
                        // link (v, p) with offset d adds mp w d to lin[v] and -mv w d to lin[p]
                        let d = res / (mp * w);
                        let k = key(v, p);
                        let entry = cross_terms.get_mut(&k).expect("tree edge");
                        entry.1 = if k.0 == v.0 { d } else { -d };
                        *residual.get_mut(&p).unwrap() = residual[&p] + mv * res / mp;
                    }
                    None => {
                        let mv = T::count(self.cardinality(v));
                        if (mv * res).abs() > tol * mass_scale {
                            return Err(FormError::NonPairwiseResidue(format!(
                                "unanchored linear term on {}",
                                self.atom(v).unwrap().label
                            )));
                        }
                    }
                }
            }
        }
        for ((i, j), (w, d)) in cross_terms {
            terms.push(PairwiseTerm::Cross { left: FormAtom(i), right: FormAtom(j), precision: w, offset: d });
        }
        for &a in &live {
            let r = anchor[&a];
            if r != T::zero() {
                let value = anchor_values.get(&a).copied().unwrap_or_else(T::zero);
                terms.push(PairwiseTerm::Anchor { atom: a, precision: r, value });
            }
        }
        let mut decomposition = PairwiseDecomposition {
            slots: self.atoms.iter().map(|a| a.as_ref().map(|c| (c.label.clone(), c.cardinality))).collect(),
            terms,
            log_const: T::zero(),
        };
        let expanded = decomposition.expand();
        decomposition.log_const = self.log_const - expanded.log_const;
        Ok(decomposition)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum PairwiseTerm<T> {
    /// `prod_{i<j} exp(-precision/2 (x_i - x_j)^2)`
    Within { atom: FormAtom, precision: T },
    /// `prod_{x, y} exp(-precision/2 (x - y - offset)^2)`
    Cross { left: FormAtom, right: FormAtom, precision: T, offset: T },
    /// `prod_x exp(-precision/2 (x - value)^2)`
    Anchor { atom: FormAtom, precision: T, value: T },
}

impl<T: Scalar> PairwiseTerm<T> {
    pub fn variance(&self) -> T {
        match self {
            PairwiseTerm::Within { precision, .. }
            | PairwiseTerm::Cross { precision, .. }
            | PairwiseTerm::Anchor { precision, .. } => precision.recip(),
        }
    }
}

/// `(variables as (atom, index), J, h, c)`.
pub type DenseForm<T> = (Vec<(FormAtom, u64)>, Vec<Vec<T>>, Vec<T>, T);

/// Explicit pairwise potentials equivalent to a form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairwiseDecomposition<T> {
    pub slots: Vec<Option<(String, u64)>>,
    pub terms: Vec<PairwiseTerm<T>>,
    /// Constant left over once the terms are expanded without normalizers.
    pub log_const: T,
}

impl<T: Scalar> PairwiseDecomposition<T> {
    /// Multiplies the terms back out, reproducing the originating form.
    pub fn expand(&self) -> LiftedQuadraticForm<T> {
        let mut f = LiftedQuadraticForm {
            atoms: self
                .slots
                .iter()
                .map(|s| {
                    s.as_ref().map(|(label, card)| AtomCoeffs {
                        label: label.clone(),
                        cardinality: *card,
                        sq: T::zero(),
                        within: T::zero(),
                        lin: T::zero(),
                    })
                })
                .collect(),
            cross: BTreeMap::new(),
            log_const: self.log_const,
        };
        for t in &self.terms {
            match *t {
                PairwiseTerm::Within { atom, precision } => {
                    let m = T::count(f.cardinality(atom));
                    f.add_sq(atom, -(m - T::one()) * precision * T::half());
                    f.add_within(atom, precision);
                }
                PairwiseTerm::Cross { left, right, precision, offset } => {
                    let (m, n) = (T::count(f.cardinality(left)), T::count(f.cardinality(right)));
                    f.add_sq(left, -n * precision * T::half());
                    f.add_sq(right, -m * precision * T::half());
                    f.add_cross(left, right, precision);
                    f.add_lin(left, n * precision * offset);
                    f.add_lin(right, -m * precision * offset);
                    f.add_const(-m * n * precision * offset * offset * T::half());
                }
                PairwiseTerm::Anchor { atom, precision, value } => {
                    let m = T::count(f.cardinality(atom));
                    f.add_sq(atom, -precision * T::half());
                    f.add_lin(atom, precision * value);
                    f.add_const(-m * precision * value * value * T::half());
                }
            }
        }
        f
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn from_rn_coefficients() {
        let (f, x, y) = LiftedQuadraticForm::<f64>::from_rn(2, 3, 1.0, 0.0);
        assert!(close(f.sq(x), -1.5, 1e-15) && close(f.sq(y), -1.0, 1e-15));
        assert!(close(f.cross(x, y), 1.0, 1e-15));
        assert_eq!(f.lin(x), 0.0);
        let (f, x, y) = LiftedQuadraticForm::<f64>::from_rn(1, 1, 2.0, 0.0);
        assert!(close(f.sq(x), -0.25, 1e-15) && close(f.sq(y), -0.25, 1e-15));
        assert!(close(f.cross(x, y), 0.5, 1e-15));
        let (f, x, y) = LiftedQuadraticForm::<f64>::from_rn(1, 1, 1.0, 3.0);
        assert!(close(f.lin(x), 3.0, 1e-15) && close(f.lin(y), -3.0, 1e-15));
        let expected = -4.5 - 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!(close(f.log_const(), expected, 1e-14));
    }

    #[test]
    fn scalar_integral() {
        let pi = std::f64::consts::PI;
        assert!(close(integrate_scalar(1.0, 0.0, 0.0).unwrap(), 0.5 * pi.ln(), 1e-15));
        assert!(close(integrate_scalar(2.0, 1.0, 0.0).unwrap(), 0.5 * (pi / 2.0).ln() + 0.5, 1e-15));
        assert!(matches!(integrate_scalar(-1.0, 0.0, 0.0), Err(FormError::DivergentIntegral { .. })));
        assert!(integrate_scalar(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn whole_atom_matches_pairwise_parameter() {
        let (f, x, y) = LiftedQuadraticForm::<f64>::from_rn(4, 3, 1.0, 0.0);
        let g = f.eliminate_atom_entirely(x).unwrap();
        assert!(g.atom(x).is_none());
        // pairwise parameter |X| / (2 sigma2 |Y|) => within = 2 * 4/6
        assert!(close(g.within(y), 4.0 / 3.0, 1e-14));
        assert!(close(1.0 / g.within(y), 0.75, 1e-14));
        let (f, x, y) = LiftedQuadraticForm::<f64>::from_rn(1, 2, 1.0, 0.0);
        let g = f.eliminate_atom_entirely(x).unwrap();
        assert!(close(g.within(y) / 2.0, 0.25, 1e-15));
    }

    #[test]
    fn cardinality_one_matches_scalar_integral() {
        let mut f = LiftedQuadraticForm::<f64>::new();
        let x = f.add_atom("x", 1);
        let y = f.add_atom("y", 3);
        f.add_rn(x, y, 0.7, 0.4);
        f.add_anchor(x, 1.3, 2.0);
        let whole = f.eliminate_atom_entirely(x).unwrap();
        let one = f.eliminate_one_ground(x).unwrap();
        assert_eq!(whole, one);
        // constant part against the numeric kernel: exponent in x is -a x^2 + 2 b x + c with y = 0
        let a = -f.sq(x);
        let b = f.lin(x) / 2.0;
        let c = f.log_const();
        assert!(close(whole.log_const(), integrate_scalar(a, b, c).unwrap(), 1e-12));
    }

    #[test]
    fn one_ground_reproduces_linear_elimination_identity() {
        // per-pair potential exp(-(x - y)^2), i.e. precision 2
        let mut f = LiftedQuadraticForm::<f64>::new();
        let x = f.add_atom("X", 2);
        let y = f.add_atom("Y", 1);
        let xp = f.add_atom("x'", 1);
        f.add_rn(xp, x, 0.5, 0.0);
        f.add_rn(xp, y, 0.5, 0.0);
        let g = f.eliminate_one_ground(xp).unwrap();
        let (m, n) = (2.0, 1.0);
        assert!(close(g.sq(x), -(m + n - 1.0) / (m + n), 1e-14));
        assert!(close(g.within(x), 2.0 / (m + n), 1e-14));
        assert!(close(g.cross(x, y), 2.0 / (m + n), 1e-14));
        assert!(close(g.sq(y), -(m + n - 1.0) / (m + n), 1e-14));
        let c = f.log_const() + 0.5 * (std::f64::consts::PI / (m + n)).ln();
        assert!(close(g.log_const(), c, 1e-13));
    }

    #[test]
    fn within_atom_variance_recurrence() {
        let mut f = LiftedQuadraticForm::<f64>::new();
        let x = f.add_atom("X", 5);
        f.add_within_rn(x, 2.0);
        let g = f.eliminate_within_atom(x, 2).unwrap();
        assert_eq!(g.cardinality(x), 3);
        assert!(close(1.0 / g.within(x), 1.2, 1e-14));
        assert_eq!(f.eliminate_within_atom(x, 0).unwrap(), f);
        assert!(matches!(f.eliminate_within_atom(x, 5), Err(FormError::TooMany { .. })));

        let mut f = LiftedQuadraticForm::<f64>::new();
        let x = f.add_atom("X", 3);
        f.add_within_rn(x, 1.0);
        let twice = f.eliminate_within_atom(x, 1).unwrap().eliminate_within_atom(x, 1).unwrap();
        let once = f.eliminate_within_atom(x, 2).unwrap();
        assert_eq!(once.cardinality(x), 1);
        assert!(close(twice.log_const(), once.log_const(), 1e-13));
        assert!(twice.max_coeff_diff(&once) < 1e-13);
    }

    #[test]
    fn within_atom_keeps_pairwise_variance_readable() {
        let mut f = LiftedQuadraticForm::<f64>::new();
        let x = f.add_atom("X", 6);
        f.add_within_rn(x, 1.0);
        let g = f.eliminate_within_atom(x, 2).unwrap();
        let d = g.to_pairwise().unwrap();
        let PairwiseTerm::Within { precision, .. } = d.terms[0] else { panic!() };
        assert!(close(1.0 / precision, 4.0 / 6.0, 1e-14));
        assert_eq!(d.terms.len(), 1);
    }

    #[test]
    fn divergence_is_reported() {
        let (f, x, _) = LiftedQuadraticForm::<f64>::from_rn(3, 3, 1.0, 0.0);
        let g = f.eliminate_atom_entirely(x).unwrap();
        let y = FormAtom(1);
        assert!(matches!(g.eliminate_atom_entirely(y), Err(FormError::DivergentIntegral { .. })));
    }

    #[test]
    fn zero_form_decomposes_to_nothing() {
        let f = LiftedQuadraticForm::<f64>::new();
        assert!(f.to_pairwise().unwrap().terms.is_empty());
    }

    #[test]
    fn pairwise_round_trip_with_offsets() {
        let mut f = LiftedQuadraticForm::<f64>::new();
        let a = f.add_atom("A", 3);
        let b = f.add_atom("B", 2);
        let c = f.add_atom("C", 1);
        f.add_rn(a, b, 0.8, 1.5);
        f.add_rn(b, c, 1.7, -0.4);
        f.add_within_rn(a, 2.5);
        f.add_anchor(c, 0.9, 0.6);
        let d = f.to_pairwise().unwrap();
        let e = d.expand();
        assert!(e.max_coeff_diff(&f) < 1e-13);
        assert!(close(e.log_const(), f.log_const(), 1e-12));
    }

    #[test]
    fn unanchored_linear_residue_rejected() {
        let mut f = LiftedQuadraticForm::<f64>::new();
        let a = f.add_atom("A", 2);
        f.add_within_rn(a, 1.0);
        f.add_lin(a, 0.5);
        assert!(matches!(f.to_pairwise(), Err(FormError::NonPairwiseResidue(_))));
    }
}
