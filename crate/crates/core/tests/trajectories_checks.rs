//! Simulation against the exact oracle, reproducibility across thread
//! counts and trajectory state validity.

use oqrw::asymptotics::covariance;
use oqrw::nalgebra::DMatrix;
use oqrw::numerics::psd_check;
use oqrw::trajectories::{
    batch_csv, batch_statistics, exact_distribution, exact_distribution_iterated,
    exact_distribution_paths, mgf_check, sample_trajectory,
};
use oqrw::walkmodel::{random_initial_density, random_model};
use oqrw::{builtin, CMatrix, DensityMatrix, LatticeState, StepSet, Tolerances};
use std::collections::BTreeMap;

const TOL: Tolerances = Tolerances::DEFAULT;

fn origin(n: usize, d: usize) -> LatticeState {
    LatticeState::localized(vec![0; d], &DensityMatrix::maximally_mixed(n))
}

#[test]
fn empirical_frequencies_match_exact_masses() {
    let m = builtin("std_example").unwrap();
    let init = origin(2, 1);
    let p = 6;
    let exact = exact_distribution(&m, &init, p).unwrap();
    let n = 100_000;
    let c = DMatrix::from_element(1, 1, 8.0 / 9.0);
    let stats = batch_statistics(&m, &init, p, n, 2024, &[0.0], &c).unwrap();
    let mut counts: BTreeMap<Vec<i64>, usize> = BTreeMap::new();
    for r in &stats.records {
        *counts.entry(r.x_final.clone()).or_default() += 1;
    }
    for (site, mass) in &exact.masses {
        let q = mass.probability;
        let freq = *counts.get(site).unwrap_or(&0) as f64 / n as f64;
        let band = 4.0 * (q * (1.0 - q) / n as f64).sqrt();
        assert!((freq - q).abs() <= band, "site {site:?}: {freq} vs {q}");
    }
    assert!(counts.keys().all(|k| exact.masses.contains_key(k)));
}

#[test]
fn batch_is_identical_across_thread_counts() {
    let m = builtin("periodic_example").unwrap();
    let init = origin(2, 1);
    let c = DMatrix::from_element(1, 1, 7.0 / 8.0);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| batch_statistics(&m, &init, 200, 500, 99, &[0.25], &c).unwrap())
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(batch_csv(&a), batch_csv(&b));
    assert_eq!(a.mean, b.mean);
    assert_eq!(a.ks_distance, b.ks_distance);
}

#[test]
fn long_trajectories_keep_valid_states() {
    let m = random_model(5, 3, StepSet::nearest_neighbour(2));
    let init = LatticeState::localized(vec![0, 0], &random_initial_density(8, 3));
    let t = sample_trajectory(&m, &init, 10_000, 17).unwrap();
    assert_eq!(t.positions.len(), 10_001);
    for r in t.states.iter().step_by(97) {
        assert!(psd_check(r.matrix(), TOL.positivity).unwrap().is_psd);
        assert!((oqrw::numerics::trace(r.matrix()).re - 1.0).abs() <= 1e-8);
    }
    for (w, s) in t.positions.windows(2).zip(&t.steps) {
        let step: Vec<i64> = w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect();
        assert_eq!(&step, &m.steps()[*s]);
    }
}

#[test]
fn oracle_implementations_agree_for_builtins() {
    for name in ["std_example", "periodic_example", "breakdown_example", "antidiag_example", "classical_dilation(0.4)"] {
        let m = builtin(name).unwrap();
        let init = origin(m.internal_dim(), 1);
        for p in 0..=10 {
            let a = exact_distribution_paths(&m, &init, p).unwrap();
            let b = exact_distribution_iterated(&m, &init, p).unwrap();
            assert!(a.total_variation(&b) <= 1e-10, "{name} p={p}");
            let total: f64 = a.masses.values().map(|s| s.probability).sum();
            assert!((total - 1.0).abs() <= 1e-10);
        }
    }
}

#[test]
fn oracle_handles_spread_initial_states() {
    let m = random_model(3, 2, StepSet::nearest_neighbour(2));
    let mut sites = BTreeMap::new();
    let a = random_initial_density(1, 2).into_matrix().scale(0.25);
    let b = random_initial_density(2, 2).into_matrix().scale(0.75);
    sites.insert(vec![0, 0], a);
    sites.insert(vec![3, -1], b);
    let init = LatticeState::new(sites).unwrap();
    let d = exact_distribution(&m, &init, 4).unwrap();
    let total: f64 = d.masses.values().map(|s| s.probability).sum();
    assert!((total - 1.0).abs() < 1e-12);
    let r = mgf_check(&m, &init, 4, &[0.4, -0.9]).unwrap();
    assert!(r.relative_error() < 1e-10);
}

#[test]
fn breakdown_probability_of_running_right() {
    // P(X_n = n) = |L_+^n e_2|^2; the cross term enters squared.
    let m = builtin("breakdown_example").unwrap();
    let init = LatticeState::localized(vec![0], &DensityMatrix::basis_projector(2, 1));
    let (s2, s3) = (2f64.sqrt(), 3f64.sqrt());
    for n in 1..=10 {
        let d = exact_distribution(&m, &init, n).unwrap();
        let nf = n as i32;
        let cross = 0.125 * (2f64.powi(1 - nf) * (s3.powi(nf) - s2.powi(nf)) / (s3 - s2)).powi(2);
        let expected = 0.75f64.powi(nf) + cross;
        assert!((d.probability(&[n as i64]) - expected).abs() < 1e-12, "n = {n}");
    }
}

#[test]
fn spectral_statistics_drive_the_clt() {
    let m = builtin("std_example").unwrap();
    let stats = covariance(&m, &TOL).unwrap();
    let b = batch_statistics(&m, &origin(2, 1), 400, 4000, 5, &stats.m, &stats.c).unwrap();
    assert!(b.standardized_mean[0].abs() <= 4.0 / (4000f64).sqrt());
    assert!(b.ks_distance <= 0.05);
    assert!((b.variance[0][0] - 8.0 / 9.0).abs() < 0.1);
}

#[test]
fn deterministic_walk_has_no_spread() {
    let m = builtin("classical_dilation(1)").unwrap();
    let c = DMatrix::zeros(1, 1);
    let b = batch_statistics(&m, &origin(1, 1), 10, 3, 0, &[1.0], &c).unwrap();
    assert!(b.records.iter().all(|r| r.x_final == vec![10]));
    let one = CMatrix::identity(1, 1);
    assert_eq!(exact_distribution(&m, &origin(1, 1), 10).unwrap().masses[&vec![10]].block, one);
}
