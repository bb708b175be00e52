//! Ground reference: the model as one dense multivariate Gaussian.
//!
//! Every substitution of every parfactor is enumerated into a precision matrix
//! `J`, potential vector `h` and constant, and non-query variables are removed by
//! symmetric Gaussian elimination. Cost is cubic in the number of ground
//! variables; this is the baseline the lifted engine is checked and timed
//! against.

use std::collections::HashMap;
use std::time::Instant;

use thiserror::Error;

use crate::marginal::QueryMarginal;
use crate::model::{GroundVariable, Model, ModelError, Term};
use crate::scalar::Scalar;

pub const DEFAULT_GROUND_CAP: usize = 20_000;
pub const CAP_ENV: &str = "RCM_GROUND_CAP";
pub const PIVOT_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("{variables} ground variables exceed the cap of {cap}")]
    TooLarge { variables: u64, cap: usize },
    #[error("integral over {variable} diverges (pivot {pivot:e})")]
    DivergentIntegral { variable: String, pivot: f64 },
    #[error("deadline reached")]
    Timeout,
    #[error("no query variables")]
    NoQuery,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Cap from `RCM_GROUND_CAP`, or the default.
pub fn ground_cap() -> usize {
    std::env::var(CAP_ENV).ok().and_then(|v| v.trim().parse().ok()).unwrap_or(DEFAULT_GROUND_CAP)
}

/// `log p(v) = -1/2 v'Jv + h'v + log_const + sum(var_const)` over the
/// unobserved ground variables.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionModel<T> {
    pub variables: Vec<GroundVariable>,
    pub labels: Vec<String>,
    /// Row-major `n x n`.
    pub j: Vec<T>,
    pub h: Vec<T>,
    /// Constants of ground factors without a free variable.
    pub log_const: T,
    /// Constants of ground factors, charged to their first free variable.
    pub var_const: Vec<T>,
}

impl<T: Scalar> PrecisionModel<T> {
    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn total_const(&self) -> T {
        self.var_const.iter().fold(self.log_const, |s, &c| s + c)
    }

    pub fn index(&self) -> HashMap<&GroundVariable, usize> {
        self.variables.iter().enumerate().map(|(i, v)| (v, i)).collect()
    }

    pub fn log_density(&self, v: &[T]) -> T {
        let n = self.len();
        let mut s = self.total_const();
        for i in 0..n {
            s = s + self.h[i] * v[i];
            for k in 0..n {
                s = s - T::half() * v[i] * self.j[i * n + k] * v[k];
            }
        }
        s
    }

    /// Connected components of the coupling graph, labelled by smallest member.
    pub fn components(&self) -> Vec<usize> {
        let n = self.len();
        let mut comp: Vec<usize> = (0..n).collect();
        fn find(c: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while c[r] != r {
                r = c[r];
            }
            c[x] = r;
            r
        }
        for i in 0..n {
            for k in i + 1..n {
                if self.j[i * n + k] != T::zero() {
                    let (a, b) = (find(&mut comp, i), find(&mut comp, k));
                    if a != b {
                        comp[a.max(b)] = a.min(b);
                    }
                }
            }
        }
        (0..n).map(|i| find(&mut comp, i)).collect()
    }
}

/// Grounds the model into precision form, refusing more than `cap` free
/// variables.
pub fn ground_model<T: Scalar>(model: &Model, cap: usize) -> Result<PrecisionModel<T>, OracleError> {
    let observed = model.observation_map();
    let total = model.ground_variable_count().saturating_sub(observed.len() as u64);
    if total > cap as u64 {
        return Err(OracleError::TooLarge { variables: total, cap });
    }
    let mut variables = Vec::with_capacity(total as usize);
    for a in 0..model.atoms.len() {
        variables.extend(model.groundings(a).into_iter().filter(|gv| !observed.contains_key(gv)));
    }
    let n = variables.len();
    let index: HashMap<GroundVariable, usize> = variables.iter().cloned().enumerate().map(|(i, v)| (v, i)).collect();
    let mut j = vec![T::zero(); n * n];
    let mut h = vec![T::zero(); n];
    let mut var_const = vec![T::zero(); n];
    let mut log_const = T::zero();

    enum Slot {
        Free(usize),
        Fixed(f64),
    }
    for pf in &model.parfactors {
        model.for_each_substitution(pf, |theta| {
            let slots: Vec<Slot> = pf
                .terms
                .iter()
                .map(|t| match t {
                    Term::Value(v) => Slot::Fixed(*v),
                    Term::Atom { atom, args } => {
                        let gv = GroundVariable::new(*atom, args.iter().map(|&l| theta[l]).collect::<Vec<_>>());
                        match observed.get(&gv) {
                            Some(&v) => Slot::Fixed(v),
                            None => Slot::Free(index[&gv]),
                        }
                    }
                })
                .collect();
            for p in &pf.potentials {
                let w = T::of(p.rn.precision());
                let d = T::of(p.rn.offset());
                let norm = -T::half() * (T::ln_2pi() + T::of(p.rn.sigma2()).ln());
                // -w/2 (x - y - d)^2 + norm
                let (c, owner) = match (&slots[p.left], &slots[p.right]) {
                    (Slot::Free(x), Slot::Free(y)) => {
                        let (x, y) = (*x, *y);
                        j[x * n + x] = j[x * n + x] + w;
                        j[y * n + y] = j[y * n + y] + w;
                        j[x * n + y] = j[x * n + y] - w;
                        j[y * n + x] = j[y * n + x] - w;
                        h[x] = h[x] + w * d;
                        h[y] = h[y] - w * d;
                        (norm - w * d * d * T::half(), Some(x.min(y)))
                    }
                    (Slot::Free(x), Slot::Fixed(v)) => {
                        let m = T::of(*v) + d;
                        j[x * n + x] = j[x * n + x] + w;
                        h[*x] = h[*x] + w * m;
                        (norm - w * m * m * T::half(), Some(*x))
                    }
                    (Slot::Fixed(v), Slot::Free(y)) => {
                        let m = T::of(*v) - d;
                        j[y * n + y] = j[y * n + y] + w;
                        h[*y] = h[*y] + w * m;
                        (norm - w * m * m * T::half(), Some(*y))
                    }
                    (Slot::Fixed(a), Slot::Fixed(b)) => {
                        let r = T::of(*a - *b) - d;
                        (norm - w * r * r * T::half(), None)
                    }
                };
                match owner {
                    Some(i) => var_const[i] = var_const[i] + c,
                    None => log_const = log_const + c,
                }
            }
        });
    }
    let labels = variables.iter().map(|v| model.label(v)).collect();
    Ok(PrecisionModel { variables, labels, j, h, log_const, var_const })
}

/// Exact marginal over `query` of the components that contain it. Variables
/// are eliminated in declaration order.
pub fn oracle_marginal<T: Scalar>(
    pm: &PrecisionModel<T>,
    query: &[GroundVariable],
    deadline: Option<Instant>,
) -> Result<QueryMarginal<T>, OracleError> {
    if query.is_empty() {
        return Err(OracleError::NoQuery);
    }
    let index = pm.index();
    let qidx: Vec<usize> = query
        .iter()
        .map(|q| index.get(q).copied().ok_or_else(|| ModelError::NoSuchVariable(format!("{q:?}"))))
        .collect::<Result<_, _>>()?;
    let comp = pm.components();
    let keep: Vec<bool> = {
        let qc: Vec<usize> = qidx.iter().map(|&i| comp[i]).collect();
        comp.iter().map(|c| qc.contains(c)).collect()
    };
    let mut order: Vec<usize> = (0..pm.len()).filter(|&i| keep[i] && !qidx.contains(&i)).collect();
    let eliminated = order.len();
    order.extend(qidx.iter().copied());
    let c0 = (0..pm.len()).filter(|&i| keep[i]).fold(pm.log_const, |s, i| s + pm.var_const[i]);
    marginalize_ordered(pm, &order, eliminated, c0, deadline)
}

/// Eliminates the first `eliminated` entries of `order` and returns the
/// marginal over the rest.
pub fn marginalize_ordered<T: Scalar>(
    pm: &PrecisionModel<T>,
    order: &[usize],
    eliminated: usize,
    c0: T,
    deadline: Option<Instant>,
) -> Result<QueryMarginal<T>, OracleError> {
    let n = order.len();
    let big = pm.len();
    let mut a = vec![T::zero(); n * n];
    let mut h = vec![T::zero(); n];
    for (r, &i) in order.iter().enumerate() {
        h[r] = pm.h[i];
        for (s, &k) in order.iter().enumerate().skip(r) {
            a[r * n + s] = pm.j[i * big + k];
        }
    }
    let mut c = c0;
    let half_ln2pi = T::half() * T::ln_2pi();
    for k in 0..eliminated {
        if deadline.is_some_and(|d| Instant::now() >= d) {
            return Err(OracleError::Timeout);
        }
        let p = a[k * n + k];
        let scale = pm.j[order[k] * big + order[k]].abs().max(T::one());
        if !(p > T::of(PIVOT_EPS) * scale) {
            return Err(OracleError::DivergentIntegral { variable: pm.labels[order[k]].clone(), pivot: p.as_f64() });
        }
        let hk = h[k];
        c = c + half_ln2pi - T::half() * p.ln() + hk * hk / (T::two() * p);
        let (head, tail) = a.split_at_mut((k + 1) * n);
        let row_k = &head[k * n..];
        for i in k + 1..n {
            let f = row_k[i] / p;
            if f == T::zero() {
                continue;
            }
            h[i] = h[i] - f * hk;
            let row_i = &mut tail[(i - k - 1) * n + i..(i - k) * n];
            for (x, &y) in row_i.iter_mut().zip(&row_k[i..]) {
                *x = *x - f * y;
            }
        }
    }
    let k = n - eliminated;
    let mut j = vec![T::zero(); k * k];
    for r in 0..k {
        for s in r..k {
            let v = a[(eliminated + r) * n + eliminated + s];
            j[r * k + s] = v;
            j[s * k + r] = v;
        }
    }
    let labels: Vec<String> = order[eliminated..].iter().map(|&i| pm.labels[i].clone()).collect();
    let h = h[eliminated..].to_vec();
    QueryMarginal::from_canonical(labels, &j, &h, c)
        .ok_or_else(|| OracleError::DivergentIntegral { variable: pm.labels[order[eliminated]].clone(), pivot: 0.0 })
}

/// Grounds and marginalizes in one call.
pub fn ground_marginal<T: Scalar>(
    model: &Model,
    cap: usize,
    deadline: Option<Instant>,
) -> Result<QueryMarginal<T>, OracleError> {
    let pm = ground_model::<T>(model, cap)?;
    oracle_marginal(&pm, &model.query, deadline)
}
