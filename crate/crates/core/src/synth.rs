//! Model generators: the recession network used for benchmarking and seeded
//! random models for property tests.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{
    Constraint, Domain, GroundVariable, LogicalVariable, Model, Observation, Parfactor, RelationalAtom, RnPotential,
    Term,
};
use crate::shatter::Shatter;
use crate::validate::validate_shattered;

/// Parameters of the recession network. Families are, in order,
/// `Recession-Market`, `Market-Gain`, `Gain-Revenue`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecessionParams {
    pub sigma2: [f64; 3],
    pub offset: [f64; 3],
    pub market_obs: f64,
    pub revenue_obs: f64,
}

impl Default for RecessionParams {
    fn default() -> Self {
        RecessionParams { sigma2: [1.0; 3], offset: [0.0; 3], market_obs: 0.3, revenue_obs: 0.1 }
    }
}

impl RecessionParams {
    /// Seed 0 gives the defaults; any other seed draws variances in
    /// `[0.5, 2]`, offsets in `[-0.5, 0.5]` and observations in `[-1, 1]`.
    pub fn seeded(seed: u64) -> Self {
        if seed == 0 {
            return Self::default();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::default();
        for i in 0..3 {
            p.sigma2[i] = rng.gen_range(0.5..=2.0);
            p.offset[i] = rng.gen_range(-0.5..=0.5);
        }
        p.market_obs = rng.gen_range(-1.0..=1.0);
        p.revenue_obs = rng.gen_range(-1.0..=1.0);
        p
    }
}

/// `Recession - Market[S] - Gain[S,B] - Revenue[B]` with `Market(0)` and
/// `Revenue(0)` observed and `Recession` queried.
pub fn recession(markets: usize, banks: usize, p: &RecessionParams) -> Model {
    let lv = |name: &str, domain| LogicalVariable { name: name.into(), domain };
    let atom = |name: &str, params: Vec<usize>| RelationalAtom {
        name: name.into(),
        constraint: Constraint::none(params.len()),
        params,
    };
    let rn = |i: usize| RnPotential::new(p.sigma2[i], p.offset[i]).expect("valid recession parameters");
    let at = |atom, args: Vec<usize>| Term::Atom { atom, args };
    Model {
        domains: vec![Domain::sized("S", markets), Domain::sized("B", banks)],
        atoms: vec![
            atom("Recession", vec![]),
            atom("Market", vec![0]),
            atom("Gain", vec![0, 1]),
            atom("Revenue", vec![1]),
        ],
        parfactors: vec![
            Parfactor::rn(vec![lv("S", 0)], at(0, vec![]), at(1, vec![0]), rn(0)),
            Parfactor::rn(vec![lv("S", 0), lv("B", 1)], at(1, vec![0]), at(2, vec![0, 1]), rn(1)),
            Parfactor::rn(vec![lv("S", 0), lv("B", 1)], at(2, vec![0, 1]), at(3, vec![1]), rn(2)),
        ],
        observations: vec![
            Observation { variable: GroundVariable::new(1, vec![0]), value: p.market_obs },
            Observation { variable: GroundVariable::new(3, vec![0]), value: p.revenue_obs },
        ],
        query: vec![GroundVariable::new(0, vec![])],
    }
}

#[derive(Debug, Clone)]
pub struct RandomSpec {
    pub max_ground: u64,
    pub min_atoms: usize,
    pub max_atoms: usize,
    /// Keep adding observations until every component is anchored and holds a
    /// variable coupled to an observed one.
    pub anchored: bool,
    pub sigma2: (f64, f64),
    pub offset: (f64, f64),
}

impl Default for RandomSpec {
    fn default() -> Self {
        RandomSpec {
            max_ground: 60,
            min_atoms: 2,
            max_atoms: 5,
            anchored: true,
            sigma2: (0.3, 3.0),
            offset: (-2.0, 2.0),
        }
    }
}

struct Draft<'r, R> {
    rng: &'r mut R,
    spec: &'r RandomSpec,
    model: Model,
}

impl<R: Rng> Draft<'_, R> {
    fn potential(&mut self) -> RnPotential {
        let s = self.rng.gen_range(self.spec.sigma2.0..=self.spec.sigma2.1);
        let d = self.rng.gen_range(self.spec.offset.0..=self.spec.offset.1);
        RnPotential::new(s, d).expect("sampled parameters are valid")
    }

    fn value(&mut self) -> f64 {
        self.rng.gen_range(-3.0..=3.0)
    }

    /// Term over fresh logical variables appended to `lvs`.
    fn fresh_term(&self, atom: usize, lvs: &mut Vec<LogicalVariable>) -> Term {
        let args = self.model.atoms[atom]
            .params
            .iter()
            .map(|&d| {
                lvs.push(LogicalVariable { name: format!("X{}", lvs.len()), domain: d });
                lvs.len() - 1
            })
            .collect();
        Term::Atom { atom, args }
    }

    fn push(&mut self, lvs: Vec<LogicalVariable>, left: Term, right: Term) {
        let rn = self.potential();
        self.model.parfactors.push(Parfactor::rn(lvs, left, right, rn));
    }
}

/// Draws a random model in the class the lifted engine eliminates exactly.
///
/// Atoms are either plain (coupled all-pairs, within themselves and to
/// constants) or links: a link shares its logical variables with partner
/// atoms whose parameter positions are pairwise disjoint, so each link can be
/// integrated per substitution and leaves all-pairs couplings behind.
pub fn random_model<R: Rng>(rng: &mut R, spec: &RandomSpec) -> Model {
    loop {
        if let Some(m) = try_random(rng, spec) {
            return m;
        }
    }
}

fn try_random<R: Rng>(rng: &mut R, spec: &RandomSpec) -> Option<Model> {
    let n_domains = rng.gen_range(1..=2);
    let domains: Vec<Domain> = (0..n_domains).map(|i| Domain::sized(["S", "B"][i], rng.gen_range(1..=5))).collect();
    let n_atoms = rng.gen_range(spec.min_atoms..=spec.max_atoms);
    let mut atoms = Vec::new();
    let mut is_link = Vec::new();
    for i in 0..n_atoms {
        let arity = rng.gen_range(0..=2usize);
        let params: Vec<usize> = (0..arity).map(|_| rng.gen_range(0..n_domains)).collect();
        is_link.push(arity > 0 && rng.gen_bool(0.35));
        atoms.push(RelationalAtom { name: format!("A{i}"), constraint: Constraint::none(params.len()), params });
    }
    let model = Model { domains, atoms, ..Model::default() };
    if model.ground_variable_count() > spec.max_ground || model.check().is_err() {
        return None;
    }
    let mut d = Draft { rng, spec, model };
    let plain: Vec<usize> = (0..n_atoms).filter(|&a| !is_link[a]).collect();

    for (i, &a) in plain.iter().enumerate() {
        for &b in &plain[i + 1..] {
            if d.rng.gen_bool(0.5) {
                let mut lvs = Vec::new();
                let l = d.fresh_term(a, &mut lvs);
                let r = d.fresh_term(b, &mut lvs);
                d.push(lvs, l, r);
            }
        }
        if !d.model.atoms[a].params.is_empty() && d.rng.gen_bool(0.3) {
            let mut lvs = Vec::new();
            let l = d.fresh_term(a, &mut lvs);
            let r = d.fresh_term(a, &mut lvs);
            d.push(lvs, l, r);
        }
    }
    for a in 0..n_atoms {
        if d.rng.gen_bool(0.25) {
            let mut lvs = Vec::new();
            let l = d.fresh_term(a, &mut lvs);
            let v = d.value();
            d.push(lvs, l, Term::Value(v));
        }
    }
    for l in (0..n_atoms).filter(|&a| is_link[a]) {
        let lparams = d.model.atoms[l].params.clone();
        let mut lvs = Vec::new();
        let lterm = d.fresh_term(l, &mut lvs);
        let mut free: Vec<bool> = vec![true; lparams.len()];
        let mut partners = plain.clone();
        partners.shuffle(d.rng);
        for p in partners {
            if !d.rng.gen_bool(0.6) {
                continue;
            }
            let pparams = d.model.atoms[p].params.clone();
            let mut args = Vec::new();
            let mut used = free.clone();
            for &dom in &pparams {
                let slots: Vec<usize> = (0..lparams.len()).filter(|&k| used[k] && lparams[k] == dom).collect();
                match slots.choose(d.rng) {
                    Some(&k) => {
                        used[k] = false;
                        args.push(k);
                    }
                    None => break,
                }
            }
            if args.len() != pparams.len() {
                continue;
            }
            free = used;
            d.push(lvs.clone(), lterm.clone(), Term::Atom { atom: p, args });
        }
    }
    let mut model = d.model;
    let rng = d.rng;

    let mut ground: Vec<GroundVariable> = (0..model.atoms.len()).flat_map(|a| model.groundings(a)).collect();
    ground.shuffle(rng);
    let n_obs = rng.gen_range(0..=2).min(ground.len().saturating_sub(1));
    for gv in ground.drain(..n_obs) {
        model.observations.push(Observation { variable: gv, value: rng.gen_range(-3.0..=3.0) });
    }
    let n_query = rng.gen_range(1..=2).min(ground.len());
    if n_query == 0 {
        return None;
    }
    model.query.extend(ground.drain(..n_query));

    if spec.anchored {
        for _ in 0..8 {
            let sh = Shatter::new(&model);
            let report = validate_shattered(&sh);
            let touched = touches_observation(&model);
            let Some(bad) = report.components.iter().find(|c| {
                !c.anchored || !c.atoms.iter().flat_map(|&a| sh.groundings(&model, a)).any(|g| touched.contains(&g))
            }) else {
                break;
            };
            let candidates: Vec<GroundVariable> = bad
                .atoms
                .iter()
                .flat_map(|&a| sh.groundings(&model, a))
                .filter(|gv| !model.query.contains(gv))
                .collect();
            let gv = candidates.choose(rng)?.clone();
            model.observations.push(Observation { variable: gv, value: rng.gen_range(-3.0..=3.0) });
        }
        let sh = Shatter::new(&model);
        let touched = touches_observation(&model);
        let report = validate_shattered(&sh);
        let observed = report
            .components
            .iter()
            .all(|c| c.atoms.iter().flat_map(|&a| sh.groundings(&model, a)).any(|g| touched.contains(&g)));
        if !report.is_proper() || !observed {
            return None;
        }
    }
    model.check().ok()?;
    Some(model)
}

/// Unobserved ground variables sharing a potential with an observed one.
fn touches_observation(model: &Model) -> HashSet<GroundVariable> {
    let observed = model.observation_map();
    let mut out = HashSet::new();
    for pf in &model.parfactors {
        model.for_each_substitution(pf, |theta| {
            let ground = |t: &Term| match t {
                Term::Atom { atom, args } => {
                    Some(GroundVariable::new(*atom, args.iter().map(|&l| theta[l]).collect::<Vec<_>>()))
                }
                Term::Value(_) => None,
            };
            for p in &pf.potentials {
                if let (Some(a), Some(b)) = (ground(&pf.terms[p.left]), ground(&pf.terms[p.right])) {
                    match (observed.contains_key(&a), observed.contains_key(&b)) {
                        (true, false) => {
                            out.insert(b);
                        }
                        (false, true) => {
                            out.insert(a);
                        }
                        _ => {}
                    }
                }
            }
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::serialize_model;

    #[test]
    fn recession_defaults() {
        let m = recession(10, 8, &RecessionParams::default());
        m.check().unwrap();
        assert_eq!(m.ground_variable_count(), 1 + 10 + 80 + 8);
        assert_eq!(RecessionParams::seeded(0), RecessionParams::default());
        assert_ne!(RecessionParams::seeded(1), RecessionParams::default());
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let a = serialize_model(&recession(4, 4, &RecessionParams::seeded(7)));
        let b = serialize_model(&recession(4, 4, &RecessionParams::seeded(7)));
        assert_eq!(a, b);
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        let spec = RandomSpec::default();
        assert_eq!(random_model(&mut r1, &spec), random_model(&mut r2, &spec));
    }

    #[test]
    fn random_models_respect_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = RandomSpec::default();
        for _ in 0..50 {
            let m = random_model(&mut rng, &spec);
            assert!(m.ground_variable_count() <= 60);
            assert!((2..=5).contains(&m.atoms.len()));
            assert!(crate::validate::validate(&m).is_proper());
        }
    }
}
