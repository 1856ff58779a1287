//! Cross-checks between independent structural classifiers on seeded
//! random families.

use oqrw::structure::{
    analyze, bn_decomposition, c2_m_classifier, classify_c2, invariance_residual,
    irreducibility_methods, is_irreducible_l, is_irreducible_m, is_regular, period, MVerdict,
};
use oqrw::walkmodel::{random_c2_model, random_model, C2Family};
use oqrw::{builtin, CMatrix, KrausModel, StepSet, Tolerances};

const TOL: Tolerances = Tolerances::DEFAULT;

fn family_model(k: u64) -> (C2Family, KrausModel) {
    let family = C2Family::ALL[(k % 4) as usize];
    (family, random_c2_model(1000 + k, family))
}

#[test]
fn walk_classifier_and_return_paths_never_contradict() {
    let mut conclusive = 0;
    for k in 0..40 {
        let (family, m) = family_model(k);
        let exact = c2_m_classifier(&m, &TOL).unwrap();
        let paths = is_irreducible_m(&m, 10, &TOL).unwrap();
        match paths.verdict {
            MVerdict::Irreducible => assert!(exact.m_irreducible, "{family:?} {k}"),
            MVerdict::Reducible { ref witness } => {
                assert!(!exact.m_irreducible, "{family:?} {k}");
                assert!(witness.ncols() > 0 && witness.ncols() < 2);
            }
            MVerdict::Inconclusive => continue,
        }
        conclusive += 1;
    }
    assert!(conclusive >= 30, "only {conclusive} conclusive verdicts");
}

#[test]
fn irreducibility_methods_agree_on_families() {
    for k in 0..40 {
        let (family, m) = family_model(k);
        let r = irreducibility_methods(&m, &TOL).unwrap();
        assert_eq!(r.algebraic, r.spectral, "{family:?} {k}");
        if family == C2Family::Diagonal || family == C2Family::SharedEigenvector {
            assert!(!r.algebraic, "{family:?} {k}");
        }
    }
}

#[test]
fn even_period_forces_reducible_walk() {
    let mut seen = 0;
    for k in 0..40 {
        let (_, m) = family_model(k);
        if !is_irreducible_l(&m, &TOL).unwrap().verdict {
            continue;
        }
        let p = period(&m, &TOL).unwrap();
        if p.d % 2 == 0 {
            seen += 1;
            assert!(!c2_m_classifier(&m, &TOL).unwrap().m_irreducible, "{k}");
        }
    }
    assert!(seen >= 5, "antidiagonal family should supply periodic maps");
}

#[test]
fn cyclic_projections_resolve_identity_and_shift() {
    for k in (2..40).step_by(4) {
        let m = random_c2_model(1000 + k, C2Family::Antidiagonal);
        let p = period(&m, &TOL).unwrap();
        assert_eq!(p.d, 2);
        let sum: CMatrix = p.projections.iter().sum();
        assert!((sum - CMatrix::identity(2, 2)).norm() < 1e-9);
        for l in m.operators() {
            // p_1 L = L p_0
            let lhs = &p.projections[1] * l;
            let rhs = l * &p.projections[0];
            assert!((lhs - rhs).norm() < 1e-9);
        }
    }
}

#[test]
fn generic_models_are_regular_with_full_support() {
    for seed in 0..10 {
        let m = random_model(seed, 3, StepSet::nearest_neighbour(2));
        assert!(is_irreducible_l(&m, &TOL).unwrap().verdict);
        assert!(is_regular(&m, &TOL).unwrap().regular);
        let bn = bn_decomposition(&m, &TOL).unwrap();
        assert_eq!(bn.r_basis.ncols(), 3);
    }
}

#[test]
fn recurrent_subspace_is_invariant_for_shared_eigenvector_family() {
    for k in (3..40).step_by(4) {
        let m = random_c2_model(1000 + k, C2Family::SharedEigenvector);
        let bn = bn_decomposition(&m, &TOL).unwrap();
        assert!(bn.r_basis.ncols() >= 1);
        assert!(invariance_residual(m.operators(), &bn.r_basis) < 1e-8);
        assert_eq!(classify_c2(&m, &TOL).unwrap().situation, 2);
    }
}

#[test]
fn builtin_reports_match_known_structure() {
    let std = analyze(&builtin("std_example").unwrap(), &TOL).unwrap();
    assert!(std.l_irreducible && std.regular);
    assert_eq!(std.period, Some(1));
    assert_eq!(std.r_dimension, 2);
    assert_eq!(std.c2_situation, Some(1));

    let periodic = analyze(&builtin("periodic_example").unwrap(), &TOL).unwrap();
    assert!(periodic.l_irreducible && !periodic.regular);
    assert_eq!(periodic.period, Some(2));
    assert_eq!(periodic.m_verdict.label(), "reducible");

    let breakdown = analyze(&builtin("breakdown_example").unwrap(), &TOL).unwrap();
    assert!(!breakdown.l_irreducible);
    assert_eq!(breakdown.c2_situation, Some(2));
    assert_eq!(breakdown.r_dimension, 1);
    assert!((breakdown.r_subspace[(0, 0)].norm() - 1.0).abs() < 1e-9);
}

#[test]
fn squared_periodic_map_blocks_are_aperiodic() {
    let m = builtin("periodic_example").unwrap();
    let p = period(&m, &TOL).unwrap();
    // Two-step operators restricted to each cyclic block.
    let mut two_step = Vec::new();
    for a in m.operators() {
        for b in m.operators() {
            two_step.push(b * a);
        }
    }
    for proj in &p.projections {
        let (vals, vecs) = oqrw::numerics::hermitian_eigen(proj);
        let k = vals.iter().position(|v| *v > 0.5).unwrap();
        let e = vecs.column(k).into_owned();
        let ops: Vec<CMatrix> = two_step
            .iter()
            .map(|l| CMatrix::from_element(1, 1, e.dotc(&(l * &e))))
            .collect();
        let steps = StepSet::new(1, (0..4).map(|i| vec![i as i64 - 2]).collect()).unwrap();
        let block = KrausModel::validated(steps, ops, &TOL).unwrap();
        assert_eq!(period(&block, &TOL).unwrap().d, 1);
    }
}
