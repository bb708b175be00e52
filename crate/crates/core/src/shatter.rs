//! Shattering against constants.
//!
//! Every constant that is observed, queried or excluded somewhere becomes a
//! singleton cell of its domain; all other constants form one remainder cell.
//! Atoms are split into lifted atoms, one per combination of parameter cells,
//! and parfactors into sub-parfactors, one per combination of logical variable
//! cells. Lifted atoms are pairwise disjoint and each sub-parfactor maps its
//! terms onto exactly one lifted atom. Only counts are manipulated; no
//! grounding is ever enumerated.

use std::collections::{BTreeSet, HashMap};

use crate::model::{AtomId, DomainId, GroundVariable, Model, PairPotential, Term};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Cell {
    Single(usize),
    Rest,
}

#[derive(Debug, Clone)]
pub struct DomainCells {
    pub size: usize,
    pub singles: BTreeSet<usize>,
}

impl DomainCells {
    pub fn rest_count(&self) -> u64 {
        (self.size - self.singles.len()) as u64
    }

    pub fn count(&self, cell: Cell) -> u64 {
        match cell {
            Cell::Single(_) => 1,
            Cell::Rest => self.rest_count(),
        }
    }

    pub fn cell_of(&self, constant: usize) -> Cell {
        if self.singles.contains(&constant) {
            Cell::Single(constant)
        } else {
            Cell::Rest
        }
    }

    /// Non-empty cells in canonical order: singletons ascending, then the remainder.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out: Vec<Cell> = self.singles.iter().map(|&c| Cell::Single(c)).collect();
        if self.rest_count() > 0 {
            out.push(Cell::Rest);
        }
        out
    }

    pub fn members(&self, cell: Cell) -> Vec<usize> {
        match cell {
            Cell::Single(c) => vec![c],
            Cell::Rest => (0..self.size).filter(|c| !self.singles.contains(c)).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LiftedAtom {
    pub origin: AtomId,
    pub cells: Vec<Cell>,
    /// Per-parameter cell sizes.
    pub counts: Vec<u64>,
    pub cardinality: u64,
    pub observed: Option<f64>,
    /// Position in the model's query list.
    pub query: Option<usize>,
    pub label: String,
}

impl LiftedAtom {
    /// Parameter positions whose cell has more than one constant.
    pub fn live_params(&self) -> Vec<usize> {
        (0..self.counts.len()).filter(|&p| self.counts[p] >= 2).collect()
    }

    pub fn is_live(&self) -> bool {
        self.observed.is_none()
    }
}

/// A live logical variable of a sub-parfactor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LvCell {
    pub domain: DomainId,
    pub cell: Cell,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SubTerm {
    /// `lvs[k]` is the live logical variable bound to the k-th live parameter
    /// of the lifted atom.
    Live {
        atom: usize,
        lvs: Vec<usize>,
    },
    Value(f64),
}

#[derive(Debug, Clone)]
pub struct SubParfactor {
    pub parfactor: usize,
    pub lvs: Vec<LvCell>,
    pub terms: Vec<SubTerm>,
    pub potentials: Vec<PairPotential>,
}

impl SubParfactor {
    pub fn substitutions(&self) -> u64 {
        self.lvs.iter().map(|l| l.count).product()
    }
}

#[derive(Debug, Clone)]
pub struct Shatter {
    pub domains: Vec<DomainCells>,
    pub atoms: Vec<LiftedAtom>,
    pub subparfactors: Vec<SubParfactor>,
    index: HashMap<(AtomId, Vec<Cell>), usize>,
}

impl Shatter {
    pub fn new(model: &Model) -> Self {
        let mut singles: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); model.domains.len()];
        let mut mark = |gv: &GroundVariable| {
            for (&c, &d) in gv.args.iter().zip(&model.atoms[gv.atom].params) {
                singles[d].insert(c);
            }
        };
        model.observations.iter().for_each(|o| mark(&o.variable));
        model.query.iter().for_each(&mut mark);
        for a in &model.atoms {
            for (&d, ex) in a.params.iter().zip(&a.constraint.excluded) {
                singles[d].extend(ex.iter().copied());
            }
        }
        let domains: Vec<DomainCells> =
            model.domains.iter().zip(singles).map(|(d, singles)| DomainCells { size: d.size, singles }).collect();

        let observed = model.observation_map();
        let queried: HashMap<&GroundVariable, usize> = model.query.iter().enumerate().map(|(i, q)| (q, i)).collect();

        let mut atoms = Vec::new();
        let mut index = HashMap::new();
        for (id, a) in model.atoms.iter().enumerate() {
            let choices: Vec<Vec<Cell>> = a
                .params
                .iter()
                .zip(&a.constraint.excluded)
                .map(|(&d, ex)| {
                    domains[d].cells().into_iter().filter(|c| !matches!(c, Cell::Single(k) if ex.contains(k))).collect()
                })
                .collect();
            let sizes: Vec<usize> = choices.iter().map(Vec::len).collect();
            crate::model::for_each_tuple(&sizes, |pick| {
                let cells: Vec<Cell> = pick.iter().zip(&choices).map(|(&i, c)| c[i]).collect();
                let counts: Vec<u64> = cells.iter().zip(&a.params).map(|(&c, &d)| domains[d].count(c)).collect();
                let ground = cells.iter().all(|c| matches!(c, Cell::Single(_)));
                let (obs, query) = if ground {
                    let gv = GroundVariable::new(
                        id,
                        cells.iter().map(|c| if let Cell::Single(k) = c { *k } else { 0 }).collect::<Vec<_>>(),
                    );
                    (observed.get(&gv).copied(), queried.get(&gv).copied())
                } else {
                    (None, None)
                };
                let label = lifted_label(model, &domains, id, &cells);
                index.insert((id, cells.clone()), atoms.len());
                atoms.push(LiftedAtom {
                    origin: id,
                    cardinality: counts.iter().product(),
                    counts,
                    cells,
                    observed: obs,
                    query,
                    label,
                });
            });
        }

        let mut sh = Shatter { domains, atoms, subparfactors: Vec::new(), index };
        for (pid, pf) in model.parfactors.iter().enumerate() {
            let choices: Vec<Vec<Cell>> = pf.logical_vars.iter().map(|lv| sh.domains[lv.domain].cells()).collect();
            let sizes: Vec<usize> = choices.iter().map(Vec::len).collect();
            let mut subs = Vec::new();
            crate::model::for_each_tuple(&sizes, |pick| {
                let lv_cells: Vec<Cell> = pick.iter().zip(&choices).map(|(&i, c)| c[i]).collect();
                if let Some(sp) = sh.sub_parfactor(model, pid, &lv_cells) {
                    subs.push(sp);
                }
            });
            sh.subparfactors.extend(subs);
        }
        sh
    }

    fn sub_parfactor(&self, model: &Model, pid: usize, lv_cells: &[Cell]) -> Option<SubParfactor> {
        let pf = &model.parfactors[pid];
        let mut live_index = vec![usize::MAX; lv_cells.len()];
        let mut lvs = Vec::new();
        for (i, (lv, &cell)) in pf.logical_vars.iter().zip(lv_cells).enumerate() {
            let count = self.domains[lv.domain].count(cell);
            if count >= 2 {
                live_index[i] = lvs.len();
                lvs.push(LvCell { domain: lv.domain, cell, count });
            }
        }
        let mut terms = Vec::with_capacity(pf.terms.len());
        for t in &pf.terms {
            terms.push(match t {
                Term::Value(v) => SubTerm::Value(*v),
                Term::Atom { atom, args } => {
                    let cells: Vec<Cell> = args.iter().map(|&l| lv_cells[l]).collect();
                    let lifted = *self.index.get(&(*atom, cells))?;
                    let la = &self.atoms[lifted];
                    match la.observed {
                        Some(v) => SubTerm::Value(v),
                        None => SubTerm::Live {
                            atom: lifted,
                            lvs: la.live_params().into_iter().map(|p| live_index[args[p]]).collect(),
                        },
                    }
                }
            });
        }
        Some(SubParfactor { parfactor: pid, lvs, terms, potentials: pf.potentials.clone() })
    }

    pub fn lifted_of(&self, model: &Model, gv: &GroundVariable) -> Option<usize> {
        let cells: Vec<Cell> =
            gv.args.iter().zip(&model.atoms[gv.atom].params).map(|(&c, &d)| self.domains[d].cell_of(c)).collect();
        self.index.get(&(gv.atom, cells)).copied()
    }

    /// Ground variables of a lifted atom, in lexicographic order.
    pub fn groundings(&self, model: &Model, lifted: usize) -> Vec<GroundVariable> {
        let la = &self.atoms[lifted];
        let members: Vec<Vec<usize>> =
            la.cells.iter().zip(&model.atoms[la.origin].params).map(|(&c, &d)| self.domains[d].members(c)).collect();
        let sizes: Vec<usize> = members.iter().map(Vec::len).collect();
        let mut out = Vec::new();
        crate::model::for_each_tuple(&sizes, |pick| {
            out.push(GroundVariable::new(la.origin, pick.iter().zip(&members).map(|(&i, m)| m[i]).collect::<Vec<_>>()));
        });
        out
    }

    pub fn live_atoms(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.atoms.len()).filter(|&i| self.atoms[i].is_live())
    }
}

fn lifted_label(model: &Model, domains: &[DomainCells], atom: AtomId, cells: &[Cell]) -> String {
    let a = &model.atoms[atom];
    if a.params.is_empty() {
        return a.name.clone();
    }
    let parts: Vec<String> = cells
        .iter()
        .zip(&a.params)
        .map(|(&c, &d)| {
            let dom = &model.domains[d];
            match c {
                Cell::Single(k) => dom.constant_name(k),
                Cell::Rest if domains[d].singles.is_empty() => dom.name.clone(),
                Cell::Rest => {
                    let ex: Vec<String> = domains[d].singles.iter().map(|&k| dom.constant_name(k)).collect();
                    format!("{}\\{{{}}}", dom.name, ex.join(","))
                }
            }
        })
        .collect();
    format!("{}({})", a.name, parts.join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelBuilder, TermSpec};

    fn market_model() -> Model {
        ModelBuilder::new()
            .named_domain("S", &["auto", "bond", "stock", "s3", "s4", "s5", "s6", "s7", "s8", "s9"])
            .domain("B", 4)
            .atom("Market", &["S"])
            .atom("Gain", &["S", "B"])
            .rn(TermSpec::Atom("Market", vec!["S"]), TermSpec::Atom("Gain", vec!["S", "B"]), 1.0, 0.0)
            .unwrap()
            .observe("Market", &[0], 0.3)
            .build()
            .unwrap()
    }

    #[test]
    fn observation_splits_market() {
        let m = market_model();
        let sh = Shatter::new(&m);
        let markets: Vec<&LiftedAtom> = sh.atoms.iter().filter(|a| a.origin == 0).collect();
        assert_eq!(markets.len(), 2);
        assert_eq!(markets[0].observed, Some(0.3));
        assert_eq!(markets[0].cardinality, 1);
        assert_eq!(markets[1].cardinality, 9);
        assert_eq!(markets[1].label, "Market(S\\{auto})");
        // cardinality after splitting equals original minus removed groundings
        let total: u64 = sh.atoms.iter().filter(|a| a.origin == 1).map(|a| a.cardinality).sum();
        assert_eq!(total, m.cardinality(1));
        assert_eq!(sh.subparfactors.len(), 2);
    }

    #[test]
    fn groundings_partition_atoms() {
        let m = market_model();
        let sh = Shatter::new(&m);
        for a in 0..m.atoms.len() {
            let mut all: Vec<GroundVariable> = sh
                .atoms
                .iter()
                .enumerate()
                .filter(|(_, la)| la.origin == a)
                .flat_map(|(i, _)| sh.groundings(&m, i))
                .collect();
            all.sort();
            assert_eq!(all, m.groundings(a));
            for gv in m.groundings(a) {
                let l = sh.lifted_of(&m, &gv).unwrap();
                assert!(sh.groundings(&m, l).contains(&gv));
            }
        }
    }

    #[test]
    fn sub_parfactor_terms() {
        let m = market_model();
        let sh = Shatter::new(&m);
        let obs = &sh.subparfactors[0];
        assert!(obs.lvs.len() == 1 && obs.lvs[0].count == 4);
        assert_eq!(obs.terms[0], SubTerm::Value(0.3));
        let rest = &sh.subparfactors[1];
        assert_eq!(rest.substitutions(), 36);
        assert!(matches!(&rest.terms[1], SubTerm::Live { lvs, .. } if lvs == &vec![0, 1]));
    }
}
