//! Normalizability check for products of relational normals.
//!
//! A product of relational normals is a density when its connectivity graph is
//! connected and at least one potential joins it to a constant. The graph is
//! built over lifted atoms after shattering: edges are potentials between two
//! live terms, and a potential with an observed or literal argument anchors its
//! live side. Each component is reported separately.

use serde::Serialize;

use crate::model::Model;
use crate::shatter::{Shatter, SubTerm};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentReport {
    /// Lifted atom indices into `Shatter::atoms`.
    pub atoms: Vec<usize>,
    pub labels: Vec<String>,
    pub ground_variables: u64,
    pub anchored: bool,
    pub has_query: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub components: Vec<ComponentReport>,
}

impl ValidationReport {
    /// The query's conditional density exists iff every component holding a
    /// query variable is anchored.
    pub fn is_valid(&self) -> bool {
        self.components.iter().filter(|c| c.has_query).all(|c| c.anchored)
    }

    /// The whole model normalizes.
    pub fn is_proper(&self) -> bool {
        self.components.iter().all(|c| c.anchored)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ComponentReport> {
        self.components.iter().filter(|c| c.has_query && !c.anchored)
    }
}

#[derive(Debug, Clone)]
struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }

    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut y = x;
        while self.0[y] != r {
            let next = self.0[y];
            self.0[y] = r;
            y = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

/// Component id per lifted atom (observed atoms get `None`) and the anchored
/// flag per component root.
pub(crate) fn components(sh: &Shatter) -> (Vec<Option<usize>>, Vec<bool>) {
    let n = sh.atoms.len();
    let mut uf = UnionFind::new(n);
    let mut anchored_atom = vec![false; n];
    for sp in &sh.subparfactors {
        for p in &sp.potentials {
            match (&sp.terms[p.left], &sp.terms[p.right]) {
                (SubTerm::Live { atom: a, .. }, SubTerm::Live { atom: b, .. }) => uf.union(*a, *b),
                (SubTerm::Live { atom, .. }, SubTerm::Value(_)) | (SubTerm::Value(_), SubTerm::Live { atom, .. }) => {
                    anchored_atom[*atom] = true
                }
                (SubTerm::Value(_), SubTerm::Value(_)) => {}
            }
        }
    }
    let mut comp = vec![None; n];
    let mut anchored = vec![false; n];
    for i in sh.live_atoms() {
        let r = uf.find(i);
        comp[i] = Some(r);
        anchored[r] |= anchored_atom[i];
    }
    (comp, anchored)
}

pub fn validate(model: &Model) -> ValidationReport {
    validate_shattered(&Shatter::new(model))
}

pub fn validate_shattered(sh: &Shatter) -> ValidationReport {
    let (comp, anchored) = components(sh);
    let mut roots: Vec<usize> = comp.iter().flatten().copied().collect();
    roots.sort_unstable();
    roots.dedup();
    let components = roots
        .into_iter()
        .map(|r| {
            let atoms: Vec<usize> = (0..sh.atoms.len()).filter(|&i| comp[i] == Some(r)).collect();
            ComponentReport {
                labels: atoms.iter().map(|&i| sh.atoms[i].label.clone()).collect(),
                ground_variables: atoms.iter().map(|&i| sh.atoms[i].cardinality).sum(),
                anchored: anchored[r],
                has_query: atoms.iter().any(|&i| sh.atoms[i].query.is_some()),
                atoms,
            }
        })
        .collect();
    ValidationReport { components }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelBuilder, TermSpec};

    #[test]
    fn unanchored_pair_is_invalid() {
        let m = ModelBuilder::new()
            .var("X")
            .var("Y")
            .rn(TermSpec::Atom("X", vec![]), TermSpec::Atom("Y", vec![]), 1.0, 0.0)
            .unwrap()
            .query("X", &[])
            .build()
            .unwrap();
        let r = validate(&m);
        assert_eq!(r.components.len(), 1);
        assert!(!r.components[0].anchored);
        assert!(!r.is_valid());
    }

    #[test]
    fn per_component_verdicts() {
        let m = ModelBuilder::new()
            .var("X")
            .var("Y")
            .var("Z")
            .rn(TermSpec::Atom("X", vec![]), TermSpec::Value(0.0), 1.0, 0.0)
            .unwrap()
            .rn(TermSpec::Atom("Y", vec![]), TermSpec::Atom("Z", vec![]), 1.0, 0.0)
            .unwrap()
            .query("X", &[])
            .build()
            .unwrap();
        let r = validate(&m);
        assert_eq!(r.components.len(), 2);
        assert!(r.components[0].anchored && r.components[0].has_query);
        assert!(!r.components[1].anchored);
        assert!(r.is_valid());
        assert!(!r.is_proper());
    }

    #[test]
    fn observation_anchors_through_split() {
        let m = ModelBuilder::new()
            .domain("S", 3)
            .var("R")
            .atom("M", &["S"])
            .rn(TermSpec::Atom("R", vec![]), TermSpec::Atom("M", vec!["S"]), 1.0, 0.0)
            .unwrap()
            .observe("M", &[1], 0.5)
            .query("R", &[])
            .build()
            .unwrap();
        let r = validate(&m);
        assert!(r.is_valid() && r.is_proper());
        assert_eq!(r.components.len(), 1);
        assert_eq!(r.components[0].ground_variables, 3);
    }
}
