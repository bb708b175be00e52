use proptest::prelude::*;
use rcm_core::form::LiftedQuadraticForm;
use rcm_core::marginal::QueryMarginal;
use rcm_core::model::GroundVariable;
use rcm_core::oracle::{marginalize_ordered, PrecisionModel};
use rcm_core::{Form, FormAtom};

#[derive(Debug, Clone)]
enum Piece {
    Rn { a: usize, b: usize, sigma2: f64, d: f64 },
    Within { a: usize, sigma2: f64 },
    Anchor { a: usize, value: f64, sigma2: f64 },
}

fn piece(n: usize) -> impl Strategy<Value = Piece> {
    let s2 = 0.3..3.0f64;
    prop_oneof![
        (0..n, 0..n, s2.clone(), -2.0..2.0f64).prop_map(|(a, b, sigma2, d)| Piece::Rn { a, b, sigma2, d }),
        (0..n, s2.clone()).prop_map(|(a, sigma2)| Piece::Within { a, sigma2 }),
        (0..n, -3.0..3.0f64, s2).prop_map(|(a, value, sigma2)| Piece::Anchor { a, value, sigma2 }),
    ]
}

/// Cardinalities and pieces of a random relational pairwise form.
fn recipe() -> impl Strategy<Value = (Vec<u64>, Vec<Piece>)> {
    (2..=5usize).prop_flat_map(|n| (prop::collection::vec(1..=6u64, n), prop::collection::vec(piece(n), 1..10)))
}

fn build(cards: &[u64], pieces: &[Piece], anchor_all: bool) -> (Form, Vec<FormAtom>) {
    let mut f = LiftedQuadraticForm::new();
    let atoms: Vec<FormAtom> = cards.iter().enumerate().map(|(i, &c)| f.add_atom(format!("A{i}"), c)).collect();
    for p in pieces {
        match *p {
            Piece::Rn { a, b, sigma2, d } if a != b => f.add_rn(atoms[a], atoms[b], sigma2, d),
            Piece::Rn { .. } => {}
            Piece::Within { a, sigma2 } => f.add_within_rn(atoms[a], sigma2),
            Piece::Anchor { a, value, sigma2 } => f.add_anchor(atoms[a], value, sigma2),
        }
    }
    if anchor_all {
        for (i, &a) in atoms.iter().enumerate() {
            f.add_anchor(a, 0.5 * i as f64, 1.5);
        }
    }
    (f, atoms)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + b.abs())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn pairwise_round_trip((cards, pieces) in recipe()) {
        let (f, _) = build(&cards, &pieces, false);
        let back = f.to_pairwise().unwrap().expand();
        prop_assert!(back.max_coeff_diff(&f) <= 1e-9 * (1.0 + f.scale()));
        prop_assert!(rel(back.log_const(), f.log_const()) <= 1e-9);
    }

    #[test]
    fn elimination_order_is_irrelevant((cards, pieces) in recipe(), seed in any::<u64>()) {
        let (f, atoms) = build(&cards, &pieces, true);
        let mut rest: Vec<FormAtom> = atoms[1..].to_vec();
        let run = |order: &[FormAtom]| {
            order.iter().try_fold(f.clone(), |g, &a| {
                let g = g.eliminate_atom_entirely(a)?;
                g.to_pairwise()?;
                Ok::<_, rcm_core::FormError>(g)
            })
        };
        let first = run(&rest).unwrap();
        // deterministic shuffle from the seed
        let mut s = seed;
        for i in (1..rest.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            rest.swap(i, (s >> 33) as usize % (i + 1));
        }
        let second = run(&rest).unwrap();
        prop_assert!(second.max_coeff_diff(&first) <= 1e-9 * (1.0 + first.scale()));
        prop_assert!(rel(second.log_const(), first.log_const()) <= 1e-9);
    }
}

fn as_precision(f: &Form) -> PrecisionModel<f64> {
    let (vars, j, h, c) = f.to_dense();
    let n = vars.len();
    PrecisionModel {
        variables: vars.iter().map(|&(a, i)| GroundVariable::new(a.0, vec![i as usize])).collect(),
        labels: vars.iter().map(|&(a, i)| format!("{}[{i}]", f.atom(a).unwrap().label)).collect(),
        j: j.concat(),
        h,
        log_const: c,
        var_const: vec![0.0; n],
    }
}

fn marginal_of(f: &Form, a: FormAtom) -> QueryMarginal<f64> {
    let j = -2.0 * f.sq(a);
    QueryMarginal::from_canonical(vec![f.atom(a).unwrap().label.clone()], &[j], &[f.lin(a)], f.log_const()).unwrap()
}

#[test]
fn sequential_one_ground_matches_dense_elimination() {
    // eight ground variables: X has seven, Y one
    let mut f = LiftedQuadraticForm::new();
    let x = f.add_atom("X", 7);
    let y = f.add_atom("Y", 1);
    f.add_within_rn(x, 0.7);
    f.add_rn(x, y, 1.3, 0.4);
    f.add_anchor(x, -0.6, 2.2);
    f.add_anchor(y, 1.1, 0.9);
    let mut g = f.clone();
    for _ in 0..7 {
        g = g.eliminate_one_ground(x).unwrap();
    }
    assert!(g.atom(x).is_none());
    let pm = as_precision(&f);
    let order: Vec<usize> = (0..8).collect();
    let dense = marginalize_ordered(&pm, &order, 7, pm.log_const, None).unwrap();
    let lifted = marginal_of(&g, y);
    assert!(lifted.max_rel_diff(&dense) < 1e-10, "{}", lifted.max_rel_diff(&dense));
    let whole = marginal_of(&f.eliminate_atom_entirely(x).unwrap(), y);
    assert!(whole.max_rel_diff(&dense) < 1e-10);
}
