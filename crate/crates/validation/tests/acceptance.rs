//! Acceptance criteria. Prints one PASS/FAIL line per criterion, followed
//! by the failing checks, and exits non-zero if any criterion fails.

use std::time::{Duration, Instant};

use oqrw::asymptotics::{
    convexity_violation, covariance, covariance_ags,
    directional_derivatives, drift, invariant_state, lambda_curve, rate_at, RateOptions, UWindow,
};
use oqrw::nalgebra::DMatrix;
use oqrw::numerics::real_matrix;
use oqrw::structure::{
    bn_decomposition, c2_m_classifier, classify_c2, irreducibility_methods, is_irreducible_l,
    is_irreducible_m, period, MVerdict,
};
use oqrw::superops::{l_superop, log_lambda};
use oqrw::trajectories::{
    batch_statistics, exact_distribution, exact_distribution_iterated, exact_distribution_paths,
    mgf_check,
};
use oqrw::walkmodel::{random_c2_model, random_model, validate, C2Family};
use oqrw::{builtin, DensityMatrix, KrausModel, LatticeState, StepSet, Tolerances};

const TOL: Tolerances = Tolerances::DEFAULT;

struct Report {
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Report {
    fn new() -> Self {
        Self {
            failures: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.failures.push(what.into());
        }
    }

    /// `|got - want| <= tol`, recorded with the values.
    fn close(&mut self, what: &str, got: f64, want: f64, tol: f64) {
        let err = (got - want).abs();
        self.check(
            err <= tol,
            format!("{what}: got {got:.12e}, want {want:.12e}, error {err:.2e} > {tol:.0e}"),
        );
    }

    fn relative(&mut self, what: &str, got: f64, want: f64, tol: f64) {
        let err = (got - want).abs() / want.abs().max(f64::MIN_POSITIVE);
        self.check(
            err <= tol,
            format!("{what}: got {got:.12e}, want {want:.12e}, relative error {err:.2e} > {tol:.0e}"),
        );
    }

    fn note(&mut self, what: impl Into<String>) {
        self.notes.push(what.into());
    }

    fn fail_on<T>(&mut self, what: &str, r: oqrw::Result<T>) -> Option<T> {
        match r {
            Ok(v) => Some(v),
            Err(e) => {
                self.failures.push(format!("{what}: {e}"));
                None
            }
        }
    }
}

fn origin(model: &KrausModel, rho: &DensityMatrix) -> LatticeState {
    LatticeState::localized(vec![0; model.lattice_dim()], rho)
}

fn all_builtins() -> Vec<(String, KrausModel)> {
    [
        "std_example",
        "periodic_example",
        "breakdown_example",
        "antidiag_example",
        "classical_dilation(0.3)",
        "classical_dilation(1)",
    ]
    .iter()
    .map(|n| (n.to_string(), builtin(n).unwrap()))
    .collect()
}

// ---------------------------------------------------------------------------

fn standard_example(r: &mut Report) {
    let m = builtin("std_example").unwrap();
    let Some(stats) = r.fail_on("covariance", covariance(&m, &TOL)) else { return };
    r.close("m", stats.m[0], 0.0, 1e-10);
    r.close("C", stats.c[(0, 0)], 8.0 / 9.0, 1e-9);
    let eta = real_matrix(2, 2, &[5.0, 2.0, 2.0, -5.0]).unscale(12.0);
    for i in 0..2 {
        for j in 0..2 {
            let got = stats.eta_basis[0][(i, j)];
            r.close(&format!("eta[{i}][{j}] real"), got.re, eta[(i, j)].re, 1e-9);
            r.close(&format!("eta[{i}][{j}] imag"), got.im, 0.0, 1e-9);
        }
    }
    for u in [-2.0f64, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0] {
        let s = u.exp() + (-u).exp();
        let inner = s + ((2.0 * u).exp() + (-2.0 * u).exp() + 3.0).sqrt();
        let closed = (s + inner.cbrt() - inner.cbrt().recip()) / 3.0;
        if let Some(l) = r.fail_on("log_lambda", log_lambda(&m, &[u])) {
            r.relative(&format!("lambda at u = {u}"), l.exp(), closed, 1e-9);
        }
    }
}

fn periodic_rate(t: f64) -> f64 {
    let ut = 0.5 * ((2.0 * t + (t * t + 3.0).sqrt()) / (3.0 * (1.0 - t))).ln();
    t * ut + 1.5 * 2f64.ln()
        - 0.5 * ((ut.exp() + (-ut).exp()).ln() + (3.0 * ut.exp() + (-ut).exp()).ln())
}

fn periodic_example(r: &mut Report) {
    let m = builtin("periodic_example").unwrap();
    if let Some(p) = r.fail_on("period", period(&m, &TOL)) {
        r.check(p.d == 2, format!("period {} != 2", p.d));
        if p.d == 2 {
            let p0 = real_matrix(2, 2, &[1.0, 0.0, 0.0, 0.0]);
            let p1 = real_matrix(2, 2, &[0.0, 0.0, 0.0, 1.0]);
            let e0 = (&p.projections[0] - &p0).norm();
            let e1 = (&p.projections[1] - &p1).norm();
            r.close("projection p0 = diag(1,0)", e0, 0.0, 1e-9);
            r.close("projection p1 = diag(0,1)", e1, 0.0, 1e-9);
        }
    }
    if let Some(stats) = r.fail_on("covariance", covariance(&m, &TOL)) {
        r.close("m", stats.m[0], 0.25, 1e-9);
        r.close("C", stats.c[(0, 0)], 7.0 / 8.0, 1e-9);
    }
    for t in [0.0, 0.25, 0.5] {
        if let Some(v) = r.fail_on("rate", rate_at(&m, &[t], &RateOptions::default())) {
            r.close(&format!("I({t})"), v, periodic_rate(t), 1e-6);
        }
    }
}

fn breakdown_example(r: &mut Report) {
    let m = builtin("breakdown_example").unwrap();
    if let Some(c) = r.fail_on("classify_c2", classify_c2(&m, &TOL)) {
        r.check(c.situation == 2, format!("situation {} != 2", c.situation));
    }
    if let Some(bn) = r.fail_on("bn_decomposition", bn_decomposition(&m, &TOL)) {
        r.check(bn.r_basis.ncols() == 1, format!("dim R = {} != 1", bn.r_basis.ncols()));
        if bn.r_basis.ncols() == 1 {
            r.close("R spanned by e1", bn.r_basis[(0, 0)].norm(), 1.0, 1e-9);
        }
    }
    let grid = UWindow::default().grid(1);
    for u in &grid {
        let u = u[0];
        let want = ((u.exp() + (-u).exp()) / 2.0).max(0.75 * u.exp());
        if let Some(l) = r.fail_on("log_lambda", log_lambda(&m, &[u])) {
            r.close(&format!("lambda at u = {u:.1}"), l.exp(), want, 1e-9);
        }
    }
    if let Some(curve) = r.fail_on("lambda_curve", lambda_curve(&m, &grid, &TOL)) {
        r.check(curve.kinks.len() == 1, format!("{} kinks found, want 1", curve.kinks.len()));
        if let Some(k) = curve.kinks.first() {
            r.close("kink location", k.u, 0.5 * 2f64.ln(), 1e-4);
            r.close("left slope", k.left_lambda_slope, 2f64.sqrt() / 4.0, 1e-3);
            r.close("right slope", k.right_lambda_slope, 3.0 * 2f64.sqrt() / 4.0, 1e-3);
        }
    }
    let init = origin(&m, &DensityMatrix::basis_projector(2, 1));
    let (s2, s3) = (2f64.sqrt(), 3f64.sqrt());
    let mut corrected_ok = true;
    for n in 1..=10usize {
        let Some(d) = r.fail_on("exact_distribution", exact_distribution(&m, &init, n)) else {
            continue;
        };
        let nf = n as i32;
        let cross = 2f64.powi(1 - nf) * (s3.powi(nf) - s2.powi(nf)) / (s3 - s2);
        let stated = 0.75f64.powi(nf) + 0.125 * cross;
        let corrected = 0.75f64.powi(nf) + 0.125 * cross * cross;
        let got = d.probability(&[n as i64]);
        r.close(&format!("P(X_{n} = {n}) vs stated formula"), got, stated, 1e-10);
        corrected_ok &= (got - corrected).abs() <= 1e-10;
    }
    r.note(format!(
        "P(X_n = n) with the cross term squared matches for n <= 10: {}",
        if corrected_ok { "yes" } else { "no" }
    ));
}

fn clt_reproduction(r: &mut Report) {
    let n = 10_000;
    let p = 1000;
    for (k, name) in ["std_example", "periodic_example", "breakdown_example"].iter().enumerate() {
        let m = builtin(name).unwrap();
        let Some(stats) = r.fail_on(name, covariance(&m, &TOL)) else { continue };
        let Some(rho) = r.fail_on(name, invariant_state(&m, &TOL)) else { continue };
        let init = origin(&m, &rho);
        let seed = 4000 + k as u64;
        let Some(b) = r.fail_on(name, batch_statistics(&m, &init, p, n, seed, &stats.m, &stats.c))
        else {
            continue;
        };
        let bound = 4.0 / (n as f64).sqrt();
        let mean = b.standardized_mean[0];
        r.check(
            mean.abs() <= bound,
            format!("{name}: |standardized mean| {:.4} > {bound:.4}", mean.abs()),
        );
        r.check(
            b.ks_distance <= 0.05,
            format!("{name}: KS distance {:.4} > 0.05", b.ks_distance),
        );
        r.note(format!("{name}: standardized mean {mean:+.4}, KS {:.4}", b.ks_distance));
    }
}

fn oracle_suite(r: &mut Report) {
    for (name, m) in all_builtins() {
        let init = origin(&m, &DensityMatrix::maximally_mixed(m.internal_dim()));
        for p in 0..=8 {
            for u in [0.0, 0.5, -0.5, 1.0, -1.0] {
                if let Some(c) = r.fail_on(&name, mgf_check(&m, &init, p, &[u])) {
                    r.relative(
                        &format!("{name} MGF p={p} u={u}"),
                        c.path_sum,
                        c.superop_value,
                        1e-10,
                    );
                }
            }
        }
        for p in 0..=10 {
            let a = exact_distribution_paths(&m, &init, p);
            let b = exact_distribution_iterated(&m, &init, p);
            if let (Some(a), Some(b)) = (r.fail_on(&name, a), r.fail_on(&name, b)) {
                let tv = a.total_variation(&b);
                r.check(tv <= 1e-10, format!("{name} p={p}: total variation {tv:.2e}"));
            }
        }
    }
}

fn structure_cross_validation(r: &mut Report) {
    let (mut conclusive, mut periodic) = (0, 0);
    for k in 0..100u64 {
        let family = C2Family::ALL[(k % 4) as usize];
        let m = random_c2_model(6000 + k, family);
        let label = format!("model {k} ({family:?})");
        let Some(exact) = r.fail_on(&label, c2_m_classifier(&m, &TOL)) else { continue };
        if let Some(paths) = r.fail_on(&label, is_irreducible_m(&m, 10, &TOL)) {
            match paths.verdict {
                MVerdict::Irreducible => {
                    conclusive += 1;
                    r.check(exact.m_irreducible, format!("{label}: return paths say irreducible"));
                }
                MVerdict::Reducible { .. } => {
                    conclusive += 1;
                    r.check(!exact.m_irreducible, format!("{label}: return paths say reducible"));
                }
                MVerdict::Inconclusive => {}
            }
        }
        match irreducibility_methods(&m, &TOL) {
            Ok(i) => r.check(
                i.algebraic == i.spectral,
                format!("{label}: closure {} vs invariant state {}", i.algebraic, i.spectral),
            ),
            Err(e) => r.check(false, format!("{label}: irreducibility methods: {e}")),
        }
        if let Ok(i) = is_irreducible_l(&m, &TOL) {
            if i.verdict {
                if let Some(p) = r.fail_on(&label, period(&m, &TOL)) {
                    if p.d % 2 == 0 {
                        periodic += 1;
                        r.check(
                            !exact.m_irreducible,
                            format!("{label}: period {} but walk irreducible", p.d),
                        );
                    }
                }
            }
        }
    }
    r.note(format!("{conclusive}/100 conclusive return-path verdicts, {periodic} even-period maps"));
}

fn dual_covariance(r: &mut Report) {
    let mut models = all_builtins();
    let mut seed = 7000;
    while models.len() < all_builtins().len() + 20 {
        let m = if seed % 2 == 0 {
            random_model(seed, 2 + (seed as usize % 3), StepSet::plus_minus())
        } else {
            random_model(seed, 2 + (seed as usize % 2), StepSet::nearest_neighbour(2))
        };
        if matches!(is_irreducible_l(&m, &TOL), Ok(i) if i.verdict) {
            models.push((format!("random {seed}"), m));
        }
        seed += 1;
    }
    for (name, m) in &models {
        let a = r.fail_on(name, covariance(m, &TOL));
        let b = r.fail_on(name, covariance_ags(m, &TOL));
        if let (Some(a), Some(b)) = (a, b) {
            let diff: DMatrix<f64> = a.c - b;
            r.close(&format!("{name}: max entry difference"), diff.amax(), 0.0, 1e-9);
        }
    }
}

fn property_suite(r: &mut Report) {
    let axis = UWindow::default().axis();
    for (name, m) in all_builtins() {
        r.close(&format!("{name}: trace preservation"), validate(&m, &TOL).residual, 0.0, 1e-12);
        match l_superop(&m).is_completely_positive(&TOL) {
            Ok(cp) => r.check(cp, format!("{name}: Choi matrix not PSD")),
            Err(e) => r.check(false, format!("{name}: {e}")),
        }
        if let Some(l0) = r.fail_on(&name, log_lambda(&m, &[0.0])) {
            r.close(&format!("{name}: lambda_0"), l0.exp(), 1.0, 1e-12);
        }
        let values: Vec<f64> = axis.iter().map(|u| log_lambda(&m, &[*u]).unwrap_or(f64::NAN)).collect();
        let violation = convexity_violation(&axis, &values);
        r.check(
            violation <= 1e-9 && values.iter().all(|v| v.is_finite()),
            format!("{name}: convexity violation {violation:.2e}"),
        );
        if let Some(mu) = r.fail_on(&name, drift(&m, &TOL)) {
            if let Some(i) = r.fail_on(&name, rate_at(&m, &mu, &RateOptions::default())) {
                r.close(&format!("{name}: I(m)"), i, 0.0, 1e-6);
            }
        }
        let Some(rho) = r.fail_on(&name, invariant_state(&m, &TOL)) else { continue };
        for dir in [1.0, -1.0] {
            let Some(dd) = r.fail_on(&name, directional_derivatives(&m, rho.matrix(), &[dir], &TOL))
            else {
                continue;
            };
            let h = 1e-4;
            let lam = |t: f64| log_lambda(&m, &[dir * t]).map(f64::exp).unwrap_or(f64::NAN);
            let (fp, f0, fm) = (lam(h), lam(0.0), lam(-h));
            let first = (fp - fm) / (2.0 * h);
            let second = (fp - 2.0 * f0 + fm) / (h * h);
            let scale1 = dd.first.abs().max(1.0);
            let scale2 = dd.second.abs().max(1.0);
            r.close(&format!("{name}: lambda' along {dir}"), dd.first / scale1, first / scale1, 1e-5);
            r.close(&format!("{name}: lambda'' along {dir}"), dd.second / scale2, second / scale2, 1e-5);
        }
    }
}

// ---------------------------------------------------------------------------

struct Criterion {
    number: u8,
    title: &'static str,
    limit: Option<Duration>,
    run: fn(&mut Report),
}

fn main() {
    let criteria = [
        Criterion { number: 1, title: "standard example", limit: Some(Duration::from_secs(1)), run: standard_example },
        Criterion { number: 2, title: "periodic example", limit: Some(Duration::from_secs(1)), run: periodic_example },
        Criterion { number: 3, title: "breakdown example", limit: Some(Duration::from_secs(1)), run: breakdown_example },
        Criterion { number: 4, title: "CLT reproduction", limit: Some(Duration::from_secs(60)), run: clt_reproduction },
        Criterion { number: 5, title: "oracle suite", limit: Some(Duration::from_secs(30)), run: oracle_suite },
        Criterion { number: 6, title: "structure cross-validation", limit: Some(Duration::from_secs(60)), run: structure_cross_validation },
        Criterion { number: 7, title: "dual covariance formulas", limit: Some(Duration::from_secs(10)), run: dual_covariance },
        Criterion { number: 8, title: "property suite", limit: None, run: property_suite },
    ];
    let mut failed = Vec::new();
    for c in &criteria {
        let mut report = Report::new();
        let start = Instant::now();
        (c.run)(&mut report);
        let elapsed = start.elapsed();
        if let Some(limit) = c.limit {
            report.check(
                elapsed < limit,
                format!("runtime {:.2}s exceeds {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64()),
            );
        }
        let status = if report.failures.is_empty() { "PASS" } else { "FAIL" };
        println!(
            "criterion {}: {status}  {} ({:.2}s)",
            c.number,
            c.title,
            elapsed.as_secs_f64()
        );
        for f in report.failures.iter().take(12) {
            println!("    fail: {f}");
        }
        if report.failures.len() > 12 {
            println!("    ... {} more", report.failures.len() - 12);
        }
        for n in &report.notes {
            println!("    note: {n}");
        }
        if !report.failures.is_empty() {
            failed.push(c.number);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {} criteria pass", criteria.len());
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
