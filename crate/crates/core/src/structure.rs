//! Structural analysis: irreducibility and period of the auxiliary channel,
//! regularity, the recurrent/transient splitting of the internal space, the
//! `C^2` classification, and irreducibility of the walk itself via
//! return-path algebras.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{
    c, eigendecompose_with, eigenvalues, hermitian_eigen, null_space, orthonormalize, re, trace,
    unvectorize, vectorize, CMatrix, CVector, Tolerances, C64,
};
use crate::superops::{l_superop, perron, projected_identity};
use crate::walkmodel::{matrix_serde, validate, KrausModel};

// ---------------------------------------------------------------------------
// Small helpers
// ---------------------------------------------------------------------------

fn is_scalar(m: &CMatrix, tol: f64) -> bool {
    let n = m.nrows();
    let s = trace(m) / re(n as f64);
    (m - CMatrix::identity(n, n).map(|z| z * s)).norm() <= tol * m.norm().max(1.0)
}

/// `|m v - <v, m v> v|` for unit `v`: the sine test for `v` being an
/// eigenvector, scaled by `|m|`.
fn is_eigenvector(m: &CMatrix, v: &CVector, tol: f64) -> bool {
    let mv = m * v;
    let along = v.dotc(&mv);
    (mv - v.map(|z| z * along)).norm() <= tol * m.norm().max(1.0)
}

/// `m v` lies on the ray of unit `w` (the zero vector counts).
fn maps_into_ray(m: &CMatrix, v: &CVector, w: &CVector, tol: f64) -> bool {
    let mv = m * v;
    let along = w.dotc(&mv);
    (mv - w.map(|z| z * along)).norm() <= tol * m.norm().max(1.0)
}

/// Unit vector with its first non-negligible component real positive.
fn phase_fixed(v: &CVector) -> CVector {
    let v = v.unscale(v.norm());
    match v.iter().find(|z| z.norm() > 1e-12) {
        Some(z) => {
            let phase = z.conj() / z.norm();
            v.map(|x| x * phase)
        }
        None => v,
    }
}

fn same_ray(a: &CVector, b: &CVector, tol: f64) -> bool {
    let along = a.dotc(b);
    (b - a.map(|z| z * along)).norm() <= tol
}

fn push_ray(rays: &mut Vec<CVector>, v: CVector, tol: f64) {
    let v = phase_fixed(&v);
    if !rays.iter().any(|r| same_ray(r, &v, tol)) {
        rays.push(v);
    }
}

/// Eigenvector rays of a matrix, or `None` when the matrix is scalar and
/// every vector is an eigenvector.
fn eigen_rays(m: &CMatrix, tol: &Tolerances) -> Result<Option<Vec<CVector>>> {
    if is_scalar(m, tol.ray) {
        return Ok(None);
    }
    let sys = eigendecompose_with(m, tol)?;
    let mut rays = Vec::new();
    for v in sys.right_eigenvectors {
        if is_eigenvector(m, &v, tol.ray) {
            push_ray(&mut rays, v, tol.ray);
        }
    }
    Ok(Some(rays))
}

/// Common eigenvector rays of a family; `None` means all vectors.
fn common_eigen_rays(mats: &[&CMatrix], tol: &Tolerances) -> Result<Option<Vec<CVector>>> {
    let mut candidates: Option<Vec<CVector>> = None;
    for m in mats {
        if let Some(rays) = eigen_rays(m, tol)? {
            candidates = Some(rays);
            break;
        }
    }
    Ok(candidates.map(|rays| {
        rays.into_iter()
            .filter(|v| mats.iter().all(|m| is_eigenvector(m, v, tol.ray)))
            .collect()
    }))
}

/// Orthogonal projector onto the column span of an orthonormal basis.
fn projector(basis: &CMatrix) -> CMatrix {
    basis * basis.adjoint()
}

/// Orthonormal basis of the orthogonal complement of the columns of `basis`.
pub fn orthogonal_complement(basis: &CMatrix) -> CMatrix {
    let n = basis.nrows();
    let k = basis.ncols();
    if k == 0 {
        return CMatrix::identity(n, n);
    }
    if k >= n {
        return CMatrix::zeros(n, 0);
    }
    null_space(&basis.adjoint(), n - k)
}

/// `max_s |(Id - P) L_s P|` for the subspace spanned by `basis`.
pub fn invariance_residual(ops: &[CMatrix], basis: &CMatrix) -> f64 {
    let n = basis.nrows();
    let p = projector(basis);
    let q = CMatrix::identity(n, n) - &p;
    ops.iter()
        .map(|l| (&q * l * &p).norm())
        .fold(0.0, f64::max)
}

/// Adds `candidate` to an orthonormal matrix basis if it is independent.
fn extend_basis(basis: &mut Vec<CMatrix>, candidate: &CMatrix, tol: f64) -> bool {
    let original = candidate.norm();
    if original == 0.0 {
        return false;
    }
    let mut w = candidate.clone();
    for _ in 0..2 {
        for b in basis.iter() {
            let proj = crate::numerics::hs_inner(b, &w);
            w -= b.map(|z| z * proj);
        }
    }
    let wn = w.norm();
    if wn > tol * original {
        basis.push(w.unscale(wn));
        true
    } else {
        false
    }
}

fn random_unit_vector(rng: &mut ChaCha8Rng, n: usize) -> CVector {
    let v = CVector::from_fn(n, |_, _| {
        c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    v.unscale(v.norm())
}

// ---------------------------------------------------------------------------
// Algebra closure
// ---------------------------------------------------------------------------

/// Orthonormal (Hilbert-Schmidt) basis of the algebra generated by a
/// family of matrices.
#[derive(Debug, Clone)]
pub struct AlgebraClosure {
    pub generators: Vec<CMatrix>,
    pub basis: Vec<CMatrix>,
    pub dimension: usize,
}

impl AlgebraClosure {
    pub fn matrix_dim(&self) -> usize {
        self.basis.first().map_or(0, |b| b.nrows())
    }

    pub fn is_full(&self) -> bool {
        let n = self.matrix_dim();
        self.dimension == n * n
    }

    /// Distance from `m` to the span of the basis, relative to `|m|`.
    pub fn projection_residual(&self, m: &CMatrix) -> f64 {
        let norm = m.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let mut w = m.clone();
        for b in &self.basis {
            let proj = crate::numerics::hs_inner(b, &w);
            w -= b.map(|z| z * proj);
        }
        w.norm() / norm
    }

    /// Largest projection residual of `g b` over generators and basis.
    pub fn closure_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for g in &self.generators {
            for b in &self.basis {
                worst = worst.max(self.projection_residual(&(g * b)));
            }
        }
        worst
    }

    /// A random element of the algebra with seeded coefficients.
    fn random_element(&self, rng: &mut ChaCha8Rng) -> CMatrix {
        let n = self.matrix_dim();
        let mut x = CMatrix::zeros(n, n);
        for b in &self.basis {
            let coeff = c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            x += b.map(|z| z * coeff);
        }
        x
    }
}

/// Smallest algebra containing `mats` (and the identity if requested),
/// built by adjoining `generator * basis element` until nothing new appears.
pub fn algebra_closure(
    mats: &[CMatrix],
    include_identity: bool,
    tol: &Tolerances,
) -> Result<AlgebraClosure> {
    let n = mats
        .first()
        .ok_or_else(|| Error::Precondition("algebra closure needs a generator".into()))?
        .nrows();
    for (k, m) in mats.iter().enumerate() {
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::Dimension(format!(
                "generator {k} is {}x{}, expected {n}x{n}",
                m.nrows(),
                m.ncols()
            )));
        }
    }
    let gtol = tol.residual;
    let mut basis = Vec::new();
    if include_identity {
        extend_basis(&mut basis, &CMatrix::identity(n, n), gtol);
    }
    for m in mats {
        extend_basis(&mut basis, m, gtol);
    }
    let generators: Vec<CMatrix> = mats.to_vec();
    let mut start = 0;
    // Every round only multiplies the elements added in the previous round.
    while start < basis.len() && basis.len() < n * n {
        let end = basis.len();
        for i in start..end {
            for g in &generators {
                let product = g * &basis[i];
                extend_basis(&mut basis, &product, gtol);
                if basis.len() == n * n {
                    break;
                }
            }
        }
        start = end;
    }
    let dimension = basis.len();
    Ok(AlgebraClosure {
        generators,
        basis,
        dimension,
    })
}

// ---------------------------------------------------------------------------
// Irreducibility of the channel
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct Irreducibility {
    pub verdict: bool,
    /// The generated algebra is all of `M_n`.
    pub algebraic: bool,
    /// Eigenvalue 1 is simple and its eigenvector is faithful.
    pub spectral: bool,
    pub method_agreement: bool,
    pub algebra_dimension: usize,
    pub fixed_space_dimension: usize,
}

/// Runs both irreducibility tests and reports them without resolving a
/// disagreement.
pub fn irreducibility_methods(model: &KrausModel, tol: &Tolerances) -> Result<Irreducibility> {
    let n = model.internal_dim();
    let closure = algebra_closure(model.operators(), true, tol)?;
    let algebraic = closure.dimension == n * n;

    let sop = l_superop(model);
    let values = eigenvalues(sop.matrix())?;
    let mut fixed = 0;
    for z in &values {
        let dist = (z - re(1.0)).norm();
        if dist <= tol.degeneracy {
            fixed += 1;
        } else if dist < tol.peripheral {
            return Err(Error::Indeterminate { gap: dist });
        }
    }
    let spectral = if fixed == 1 {
        let sd = perron(&sop, tol)?;
        let (vals, _) = hermitian_eigen(sd.rho.matrix());
        vals[0] > tol.faithful
    } else {
        false
    };
    Ok(Irreducibility {
        verdict: algebraic,
        algebraic,
        spectral,
        method_agreement: algebraic == spectral,
        algebra_dimension: closure.dimension,
        fixed_space_dimension: fixed,
    })
}

/// Irreducibility of the auxiliary channel; the two methods must agree.
pub fn is_irreducible_l(model: &KrausModel, tol: &Tolerances) -> Result<Irreducibility> {
    let r = irreducibility_methods(model, tol)?;
    if !r.method_agreement {
        return Err(Error::MethodDisagreement {
            algebraic: r.algebraic,
            spectral: r.spectral,
        });
    }
    Ok(r)
}

// ---------------------------------------------------------------------------
// Period
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct PeriodData {
    pub d: usize,
    /// `p_0, ..., p_{d-1}` with `p_j L_s = L_s p_{j-1}`; `p_0` is the block
    /// carrying most of `e_1`.
    #[serde(serialize_with = "matrix_serde::list")]
    pub projections: Vec<CMatrix>,
    /// `max_{j,s} |p_j L_s - L_s p_{j-1}|`.
    pub cyclic_residual: f64,
}

fn cyclic_residual(ops: &[CMatrix], projections: &[CMatrix]) -> f64 {
    let d = projections.len();
    let mut worst = 0.0f64;
    for j in 0..d {
        let prev = &projections[(j + d - 1) % d];
        for l in ops {
            worst = worst.max((&projections[j] * l - l * prev).norm() / l.norm().max(1.0));
        }
    }
    worst
}

/// Period of an irreducible channel and its cyclic projections.
pub fn period(model: &KrausModel, tol: &Tolerances) -> Result<PeriodData> {
    let irr = is_irreducible_l(model, tol)?;
    if !irr.verdict {
        return Err(Error::Precondition(
            "period is defined here for irreducible channels only".into(),
        ));
    }
    let n = model.internal_dim();
    let sop = l_superop(model);
    let values = eigenvalues(sop.matrix())?;
    let peripheral: Vec<C64> = values
        .iter()
        .copied()
        .filter(|z| (z.norm() - 1.0).abs() <= tol.peripheral)
        .collect();
    let d = peripheral.len();
    if d == 0 {
        return Err(Error::SpectralPattern("no eigenvalue on the unit circle".into()));
    }
    let mut hit = vec![false; d];
    for z in &peripheral {
        let j = (z.arg() * d as f64 / std::f64::consts::TAU).round() as i64;
        let j = j.rem_euclid(d as i64) as usize;
        let root = C64::from_polar(1.0, std::f64::consts::TAU * j as f64 / d as f64);
        if (z - root).norm() > tol.peripheral || hit[j] {
            return Err(Error::SpectralPattern(format!(
                "peripheral eigenvalues {peripheral:?} are not the {d}-th roots of unity"
            )));
        }
        hit[j] = true;
    }
    if d == 1 {
        return Ok(PeriodData {
            d,
            projections: vec![CMatrix::identity(n, n)],
            cyclic_residual: 0.0,
        });
    }

    let omega = C64::from_polar(1.0, std::f64::consts::TAU / d as f64);
    let adjoint = sop.adjoint();
    let sys = eigendecompose_with(adjoint.matrix(), tol)?;
    let (k, _) = sys
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(k, z)| (k, (z - omega).norm()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("nonempty spectrum");
    let u = unvectorize(&sys.right_eigenvectors[k], n);

    // `u` is a multiple of a unitary, hence normal: its Schur vectors are
    // orthonormal eigenvectors.
    let schur = nalgebra::linalg::Schur::try_new(u.clone(), f64::EPSILON, 10_000)
        .ok_or(Error::Convergence { norm: u.norm() })?;
    let (q, t) = schur.unpack();
    let scale = (0..n).map(|i| t[(i, i)].norm()).fold(0.0, f64::max);
    let mut clusters: Vec<(C64, Vec<usize>)> = Vec::new();
    for i in 0..n {
        let z = t[(i, i)];
        match clusters.iter_mut().find(|(w, _)| (w - z).norm() <= 1e-6 * scale) {
            Some((_, members)) => members.push(i),
            None => clusters.push((z, vec![i])),
        }
    }
    if clusters.len() != d {
        return Err(Error::SpectralPattern(format!(
            "cyclic operator has {} distinct eigenvalues, expected {d}",
            clusters.len()
        )));
    }
    let blocks: Vec<CMatrix> = clusters
        .iter()
        .map(|(_, members)| {
            let cols: Vec<CVector> = members.iter().map(|&i| q.column(i).into_owned()).collect();
            let b = CMatrix::from_columns(&cols);
            projector(&b)
        })
        .collect();
    let reference = (0..d)
        .max_by(|&a, &b| blocks[a][(0, 0)].re.total_cmp(&blocks[b][(0, 0)].re))
        .expect("d > 1");
    let z_ref = clusters[reference].0;
    let mut labels = Vec::with_capacity(d);
    for (z, _) in &clusters {
        let ratio = z / z_ref;
        if (ratio.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::SpectralPattern(
                "cyclic operator is not a multiple of a unitary".into(),
            ));
        }
        let j = (ratio.arg() * d as f64 / std::f64::consts::TAU).round() as i64;
        labels.push(j.rem_euclid(d as i64) as usize);
    }
    let mut seen = labels.clone();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() != d {
        return Err(Error::SpectralPattern(
            "cyclic operator eigenvalues are not distinct roots of unity".into(),
        ));
    }
    let assemble = |reverse: bool| -> Vec<CMatrix> {
        let mut ps = vec![CMatrix::zeros(n, n); d];
        for (b, &j) in blocks.iter().zip(&labels) {
            let j = if reverse { (d - j) % d } else { j };
            ps[j] = b.clone();
        }
        ps
    };
    let bound = tol.residual;
    for reverse in [false, true] {
        let projections = assemble(reverse);
        let residual = cyclic_residual(model.operators(), &projections);
        if residual <= bound {
            return Ok(PeriodData {
                d,
                projections,
                cyclic_residual: residual,
            });
        }
    }
    Err(Error::SpectralPattern(
        "spectral projections of the cyclic operator do not intertwine the L_s".into(),
    ))
}

// ---------------------------------------------------------------------------
// Regularity
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct Regularity {
    pub regular: bool,
    /// Heuristic: smallest `N <= 4 n^2` sending 200 random pure states to
    /// faithful states.
    pub n_estimate: Option<usize>,
}

/// Number of random pure states used by the regularity estimate.
pub const REGULARITY_PROBES: usize = 200;

pub fn regularity_estimate(model: &KrausModel, tol: &Tolerances) -> Result<Option<usize>> {
    let n = model.internal_dim();
    let sop = l_superop(model);
    let mut rng = ChaCha8Rng::seed_from_u64(0x0051_7e9a_4e5f_0001);
    let mut states: Vec<CVector> = (0..REGULARITY_PROBES)
        .map(|_| {
            let x = random_unit_vector(&mut rng, n);
            vectorize(&(&x * x.adjoint()))
        })
        .collect();
    for big_n in 1..=4 * n * n {
        let mut worst = f64::INFINITY;
        for s in states.iter_mut() {
            *s = sop.matrix() * &*s;
            let (vals, _) = hermitian_eigen(&unvectorize(s, n));
            worst = worst.min(vals[0]);
        }
        if worst > tol.faithful {
            return Ok(Some(big_n));
        }
    }
    Ok(None)
}

/// Regular means irreducible and aperiodic.
pub fn is_regular(model: &KrausModel, tol: &Tolerances) -> Result<Regularity> {
    let irr = is_irreducible_l(model, tol)?;
    let regular = irr.verdict && period(model, tol)?.d == 1;
    Ok(Regularity {
        regular,
        n_estimate: regularity_estimate(model, tol)?,
    })
}

// ---------------------------------------------------------------------------
// Recurrent / transient splitting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct BnDecomposition {
    /// Orthonormal basis of the support of the invariant states.
    #[serde(serialize_with = "matrix_serde::serialize")]
    pub r_basis: CMatrix,
    /// Orthonormal basis of the complement, where mass decays.
    #[serde(serialize_with = "matrix_serde::serialize")]
    pub d_basis: CMatrix,
    /// Invariant state of maximal support.
    #[serde(serialize_with = "matrix_serde::serialize")]
    pub rho_star: CMatrix,
    pub invariance_residual: f64,
}

/// Support threshold for the invariant state of maximal support.
pub const SUPPORT_THRESHOLD: f64 = 1e-9;

/// `rho* = E_1(Id / n)` where `E_1` is the spectral projection of the
/// channel on eigenvalue 1; its support is the recurrent subspace.
pub fn bn_decomposition(model: &KrausModel, tol: &Tolerances) -> Result<BnDecomposition> {
    let n = model.internal_dim();
    let sop = l_superop(model);
    let (raw, _) = projected_identity(&sop, re(1.0), tol.peripheral, tol)?;
    let h = crate::numerics::hermitian_part(&raw);
    let rho_star = h.unscale(trace(&h).re);
    let (vals, vecs) = hermitian_eigen(&rho_star);
    if vals[0] < -tol.peripheral {
        return Err(Error::Positivity {
            min_eigenvalue: vals[0],
        });
    }
    let r_cols: Vec<CVector> = (0..n)
        .filter(|&i| vals[i] > SUPPORT_THRESHOLD)
        .map(|i| vecs.column(i).into_owned())
        .collect();
    let d_cols: Vec<CVector> = (0..n)
        .filter(|&i| vals[i] <= SUPPORT_THRESHOLD)
        .map(|i| vecs.column(i).into_owned())
        .collect();
    let r_basis = if r_cols.is_empty() {
        CMatrix::zeros(n, 0)
    } else {
        CMatrix::from_columns(&r_cols)
    };
    let d_basis = if d_cols.is_empty() {
        CMatrix::zeros(n, 0)
    } else {
        CMatrix::from_columns(&d_cols)
    };
    let invariance_residual = invariance_residual(model.operators(), &r_basis);
    if invariance_residual > 1e-8 {
        return Err(Error::Precondition(format!(
            "support of the invariant state is not invariant (residual {invariance_residual:.3e})"
        )));
    }
    Ok(BnDecomposition {
        r_basis,
        d_basis,
        rho_star,
        invariance_residual,
    })
}

/// `(1/N) sum_{k<N} L^k(Id/n)`, kept as a cross-check of the spectral
/// projection; it converges like `1/N` when mass decays out of a transient
/// part.
pub fn cesaro_average(model: &KrausModel, terms: usize) -> CMatrix {
    let n = model.internal_dim();
    let sop = l_superop(model);
    let mut x = vectorize(&CMatrix::identity(n, n).unscale(n as f64));
    let mut acc = CVector::zeros(n * n);
    for _ in 0..terms {
        acc += &x;
        x = sop.matrix() * x;
    }
    unvectorize(&acc.unscale(terms as f64), n)
}

// ---------------------------------------------------------------------------
// C^2 classification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct C2Classification {
    /// 1: no common eigenvector; 2: exactly one common ray; 3: two.
    pub situation: u8,
    /// Columns `(e_1, e_2)`: the common eigenvector and its orthogonal
    /// complement (situation 2) or the common eigenbasis (situation 3).
    #[serde(serialize_with = "matrix_serde::option")]
    pub basis: Option<CMatrix>,
    /// `<e_1, L_s e_1>` per step.
    #[serde(skip)]
    pub alpha: Vec<C64>,
    /// `<e_2, L_s e_2>` per step.
    #[serde(skip)]
    pub beta: Vec<C64>,
    /// `<e_1, L_s e_2>` per step.
    #[serde(skip)]
    pub gamma: Vec<C64>,
}

fn c2_coefficients(model: &KrausModel, basis: &CMatrix) -> (Vec<C64>, Vec<C64>, Vec<C64>) {
    let e1 = basis.column(0).into_owned();
    let e2 = basis.column(1).into_owned();
    let mut alpha = Vec::new();
    let mut beta = Vec::new();
    let mut gamma = Vec::new();
    for l in model.operators() {
        alpha.push(e1.dotc(&(l * &e1)));
        beta.push(e2.dotc(&(l * &e2)));
        gamma.push(e1.dotc(&(l * &e2)));
    }
    (alpha, beta, gamma)
}

/// Classifies a `C^2` model by the common eigenvectors of its operators.
pub fn classify_c2(model: &KrausModel, tol: &Tolerances) -> Result<C2Classification> {
    if model.internal_dim() != 2 {
        return Err(Error::Scope(format!(
            "the C^2 classification needs internal dimension 2, got {}",
            model.internal_dim()
        )));
    }
    let report = validate(model, tol);
    if !report.h1_holds || !report.h2_holds {
        return Err(Error::Precondition(format!(
            "C^2 classification needs H1 and H2 (H1: {}, H2: {})",
            report.h1_holds, report.h2_holds
        )));
    }
    let ops: Vec<&CMatrix> = model.operators().iter().collect();
    let rays = common_eigen_rays(&ops, tol)?
        .ok_or_else(|| Error::Precondition("all operators are scalar".into()))?;
    let independent = orthonormalize(&rays, tol.ray);
    match independent.len() {
        0 => Ok(C2Classification {
            situation: 1,
            basis: None,
            alpha: vec![],
            beta: vec![],
            gamma: vec![],
        }),
        1 => {
            let e1 = independent[0].clone();
            let e2 = phase_fixed(&CVector::from_vec(vec![-e1[1].conj(), e1[0].conj()]));
            let basis = CMatrix::from_columns(&[e1, e2]);
            let (alpha, beta, gamma) = c2_coefficients(model, &basis);
            let norm: f64 = alpha.iter().map(|a| a.norm_sqr()).sum();
            let cross: C64 = alpha.iter().zip(&gamma).map(|(a, g)| a.conj() * g).sum();
            if (norm - 1.0).abs() > 1e-8 || cross.norm() > 1e-8 {
                return Err(Error::Precondition(format!(
                    "canonical form violated: |alpha|^2 = {norm}, <alpha, gamma> = {cross}"
                )));
            }
            Ok(C2Classification {
                situation: 2,
                basis: Some(basis),
                alpha,
                beta,
                gamma,
            })
        }
        _ => {
            let basis = CMatrix::from_columns(&[phase_fixed(&rays[0]), phase_fixed(&rays[1])]);
            let gram = basis.adjoint() * &basis;
            let basis = if (gram[(0, 1)]).norm() > 1e-8 {
                // Stochasticity forces orthogonality; fall back to
                // Gram-Schmidt if rounding says otherwise.
                CMatrix::from_columns(&independent)
            } else {
                basis
            };
            let (alpha, beta, gamma) = c2_coefficients(model, &basis);
            Ok(C2Classification {
                situation: 3,
                basis: Some(basis),
                alpha,
                beta,
                gamma,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Irreducibility of the walk
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum MVerdict {
    Irreducible,
    Reducible {
        /// Orthonormal basis of a common invariant subspace of all return
        /// words checked.
        #[serde(serialize_with = "matrix_serde::serialize")]
        witness: CMatrix,
    },
    Inconclusive,
}

impl MVerdict {
    pub fn label(&self) -> &'static str {
        match self {
            MVerdict::Irreducible => "irreducible",
            MVerdict::Reducible { .. } => "reducible",
            MVerdict::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReturnPathAnalysis {
    #[serde(flatten)]
    pub verdict: MVerdict,
    /// Dimension of the closure of return words up to each length.
    pub closure_dimensions: Vec<usize>,
}

pub fn default_max_len(model: &KrausModel) -> usize {
    let n = model.internal_dim();
    2 * n * n + 2
}

/// Orthonormal spans of the return words `L_{s_k} ... L_{s_1}` with
/// `s_1 + ... + s_k = 0`, for every length `k = 1..=max_len`.
fn return_word_spans(model: &KrausModel, max_len: usize, tol: &Tolerances) -> Vec<Vec<CMatrix>> {
    let n = model.internal_dim();
    let d = model.lattice_dim();
    let reach: Vec<i64> = (0..d)
        .map(|i| model.steps().iter().map(|s| s[i].abs()).max().unwrap_or(0))
        .collect();
    let mut layer: BTreeMap<Vec<i64>, Vec<CMatrix>> = BTreeMap::new();
    layer.insert(vec![0; d], vec![CMatrix::identity(n, n)]);
    let mut out = Vec::with_capacity(max_len);
    for len in 1..=max_len {
        let remaining = (max_len - len) as i64;
        let mut next: BTreeMap<Vec<i64>, Vec<CMatrix>> = BTreeMap::new();
        for (pos, span) in &layer {
            for (s, l) in model.steps().iter().zip(model.operators()) {
                let target: Vec<i64> = pos.iter().zip(s).map(|(a, b)| a + b).collect();
                if target
                    .iter()
                    .zip(&reach)
                    .any(|(x, r)| x.abs() > remaining * r)
                {
                    continue;
                }
                let entry = next.entry(target).or_default();
                for w in span {
                    if entry.len() < n * n {
                        extend_basis(entry, &(l * w), tol.residual);
                    }
                }
            }
        }
        out.push(next.get(&vec![0; d]).cloned().unwrap_or_default());
        layer = next;
    }
    out
}

/// Searches for a proper invariant subspace of a non-full algebra.
fn invariant_subspace_witness(closure: &AlgebraClosure, tol: &Tolerances) -> Result<Option<CMatrix>> {
    let n = closure.matrix_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0a19_eb7a_0000_0001);
    let cyclic = |basis: &[CMatrix], x: &CVector| -> CMatrix {
        let images: Vec<CVector> = basis.iter().map(|b| b * x).collect();
        let span = orthonormalize(&images, tol.ray);
        CMatrix::from_columns(&span)
    };
    // Eigenvectors of a generic element generate invariant subspaces.
    for _ in 0..3 {
        let x = closure.random_element(&mut rng);
        let sys = eigendecompose_with(&x, tol)?;
        for v in &sys.right_eigenvectors {
            let sub = cyclic(&closure.basis, v);
            if sub.ncols() < n {
                return Ok(Some(sub));
            }
        }
    }
    // The adjoint algebra leaves the orthocomplement invariant.
    let adjoint_basis: Vec<CMatrix> = closure.basis.iter().map(|b| b.adjoint()).collect();
    let adjoint = AlgebraClosure {
        generators: adjoint_basis.clone(),
        basis: adjoint_basis,
        dimension: closure.dimension,
    };
    for _ in 0..3 {
        let x = adjoint.random_element(&mut rng);
        let sys = eigendecompose_with(&x, tol)?;
        for v in &sys.right_eigenvectors {
            let sub = cyclic(&adjoint.basis, v);
            if sub.ncols() < n {
                return Ok(Some(orthogonal_complement(&sub)));
            }
        }
    }
    // Eigenspaces of a non-scalar commutant element are invariant.
    let blocks: Vec<CMatrix> = closure
        .basis
        .iter()
        .map(|b| {
            let id = CMatrix::identity(n, n);
            id.kronecker(b) - b.transpose().kronecker(&id)
        })
        .collect();
    let mut stacked = CMatrix::zeros(blocks.len() * n * n, n * n);
    for (k, b) in blocks.iter().enumerate() {
        stacked.view_mut((k * n * n, 0), (n * n, n * n)).copy_from(b);
    }
    let svd = stacked.svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let smax = svd.singular_values.max().max(1.0);
    let commutant: Vec<CMatrix> = (0..n * n)
        .filter(|&i| svd.singular_values[i] <= tol.ray * smax)
        .map(|i| unvectorize(&v_t.row(i).adjoint(), n))
        .collect();
    if commutant.len() > 1 {
        let mut y = CMatrix::zeros(n, n);
        for b in &commutant {
            let coeff = c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            y += b.map(|z| z * coeff);
        }
        if !is_scalar(&y, tol.ray) {
            let sys = eigendecompose_with(&y, tol)?;
            let lambda = sys.eigenvalues[0];
            let cols: Vec<CVector> = sys
                .eigenvalues
                .iter()
                .zip(&sys.right_eigenvectors)
                .filter(|(z, _)| (**z - lambda).norm() <= 1e-6 * lambda.norm().max(1.0))
                .map(|(_, v)| v.clone())
                .collect();
            let span = orthonormalize(&cols, tol.ray);
            if span.len() < n {
                return Ok(Some(CMatrix::from_columns(&span)));
            }
        }
    }
    Ok(None)
}

fn witness_holds(spans: &[Vec<CMatrix>], witness: &CMatrix, tol: &Tolerances) -> bool {
    spans
        .iter()
        .flatten()
        .all(|w| invariance_residual(std::slice::from_ref(w), witness) <= tol.ray * w.norm().max(1.0))
}

/// Decides irreducibility of the walk from the algebra generated by return
/// words up to `max_len`.
pub fn is_irreducible_m(
    model: &KrausModel,
    max_len: usize,
    tol: &Tolerances,
) -> Result<ReturnPathAnalysis> {
    if max_len < 2 {
        return Err(Error::Precondition(format!("max_len must be at least 2, got {max_len}")));
    }
    let n = model.internal_dim();
    let spans = return_word_spans(model, max_len, tol);
    let mut generators: Vec<CMatrix> = Vec::new();
    let mut dims = Vec::with_capacity(max_len);
    let mut attempted_at: Option<usize> = None;
    for (k, span) in spans.iter().enumerate() {
        for w in span {
            if generators.len() < n * n {
                extend_basis(&mut generators, w, tol.residual);
            }
        }
        let closure = if generators.is_empty() {
            algebra_closure(&[CMatrix::identity(n, n)], true, tol)?
        } else {
            algebra_closure(&generators, true, tol)?
        };
        dims.push(closure.dimension);
        if closure.dimension == n * n {
            return Ok(ReturnPathAnalysis {
                verdict: MVerdict::Irreducible,
                closure_dimensions: dims,
            });
        }
        let stable = k >= 2 && dims[k] == dims[k - 1] && dims[k - 1] == dims[k - 2];
        if stable && attempted_at.map_or(true, |a| dims[a] != closure.dimension) {
            attempted_at = Some(k);
            if let Some(w) = invariant_subspace_witness(&closure, tol)? {
                if witness_holds(&spans, &w, tol) {
                    return Ok(ReturnPathAnalysis {
                        verdict: MVerdict::Reducible { witness: w },
                        closure_dimensions: dims,
                    });
                }
            }
        }
    }
    Ok(ReturnPathAnalysis {
        verdict: MVerdict::Inconclusive,
        closure_dimensions: dims,
    })
}

// ---------------------------------------------------------------------------
// C^2 classifier for the walk on Z with S = {+1, -1}
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct C2MClassification {
    pub m_irreducible: bool,
    /// 2 or 4 when irreducible.
    pub m_period: Option<u8>,
    /// W contains an eigenvector of `L_+` or `L_-`.
    pub shares_eigenvector: bool,
    /// W is exactly two rays swapped by both operators.
    pub swap_pair: bool,
    /// Common eigenvector rays of `L_+ L_-` and `L_- L_+`; `None` when both
    /// products are scalar.
    #[serde(skip)]
    pub w_rays: Option<Vec<CVector>>,
    /// Orthonormal basis putting one operator diagonal and the other
    /// antidiagonal, when the period is 4.
    #[serde(serialize_with = "matrix_serde::option")]
    pub period_four_basis: Option<CMatrix>,
}

fn plus_minus_operators(model: &KrausModel) -> Result<(CMatrix, CMatrix)> {
    let scope = || {
        Error::Scope("the walk classifier needs n = 2, d = 1 and S = {+1, -1}".into())
    };
    if model.internal_dim() != 2 || model.lattice_dim() != 1 || model.num_steps() != 2 {
        return Err(scope());
    }
    let plus = model.operator_for(&[1]).ok_or_else(scope)?.clone();
    let minus = model.operator_for(&[-1]).ok_or_else(scope)?.clone();
    Ok((plus, minus))
}

/// Orthonormal basis in which `diag_op` is diagonal and `anti_op`
/// antidiagonal with all four entries nonzero, if one exists.
fn diagonal_antidiagonal_basis(
    diag_op: &CMatrix,
    anti_op: &CMatrix,
    tol: &Tolerances,
) -> Result<Option<CMatrix>> {
    let nonzero = 1e-9;
    if is_scalar(diag_op, tol.ray) {
        let a = trace(diag_op) / re(2.0);
        if a.norm() <= nonzero {
            return Ok(None);
        }
        let m = anti_op;
        if trace(m).norm() > tol.ray * m.norm().max(1.0) || m.determinant().norm() <= nonzero {
            return Ok(None);
        }
        // A unit vector f with <f, m f> = 0: its Bloch vector must be
        // orthogonal to those of the Hermitian and anti-Hermitian parts.
        let h = (m + m.adjoint()).scale(0.5);
        let k = (m - m.adjoint()).map(|z| z * c(0.0, -0.5));
        let bloch = |x: &CMatrix| -> [f64; 3] {
            [x[(0, 1)].re * 2.0, -x[(0, 1)].im * 2.0, (x[(0, 0)] - x[(1, 1)]).re]
        };
        let (hv, kv) = (bloch(&h), bloch(&k));
        let mut r = [
            hv[1] * kv[2] - hv[2] * kv[1],
            hv[2] * kv[0] - hv[0] * kv[2],
            hv[0] * kv[1] - hv[1] * kv[0],
        ];
        let mut rn = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
        if rn <= 1e-12 {
            // h and k are parallel: any direction orthogonal to both works.
            let base = if hv.iter().map(|x| x * x).sum::<f64>() > 1e-24 { hv } else { kv };
            let trial = if base[0].abs() < 0.9 * (base[0].powi(2) + base[1].powi(2) + base[2].powi(2)).sqrt() {
                [1.0, 0.0, 0.0]
            } else {
                [0.0, 1.0, 0.0]
            };
            r = [
                base[1] * trial[2] - base[2] * trial[1],
                base[2] * trial[0] - base[0] * trial[2],
                base[0] * trial[1] - base[1] * trial[0],
            ];
            rn = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
        }
        let (x, y, z) = (r[0] / rn, r[1] / rn, r[2] / rn);
        let theta = z.clamp(-1.0, 1.0).acos();
        let phi = y.atan2(x);
        let f0 = CVector::from_vec(vec![
            re((theta / 2.0).cos()),
            C64::from_polar((theta / 2.0).sin(), phi),
        ]);
        let f1 = m * &f0;
        let f1 = f1.unscale(f1.norm());
        return Ok(Some(CMatrix::from_columns(&[f0, f1])));
    }
    let sys = eigendecompose_with(diag_op, tol)?;
    if (sys.eigenvalues[0] - sys.eigenvalues[1]).norm() <= tol.degeneracy {
        // Non-scalar with a repeated eigenvalue: not diagonalizable.
        return Ok(None);
    }
    if sys.eigenvalues.iter().any(|z| z.norm() <= nonzero) {
        return Ok(None);
    }
    let f0 = sys.right_eigenvectors[0].clone();
    let f1 = sys.right_eigenvectors[1].clone();
    if f0.dotc(&f1).norm() > tol.ray {
        return Ok(None);
    }
    let ok = maps_into_ray(anti_op, &f0, &f1, tol.ray)
        && maps_into_ray(anti_op, &f1, &f0, tol.ray)
        && (anti_op * &f0).norm() > nonzero
        && (anti_op * &f1).norm() > nonzero;
    Ok(ok.then(|| CMatrix::from_columns(&[f0, f1])))
}

/// Exact irreducibility and period criteria for the walk when `n = 2`,
/// `d = 1`, `S = {+1, -1}`.
pub fn c2_m_classifier(model: &KrausModel, tol: &Tolerances) -> Result<C2MClassification> {
    let (plus, minus) = plus_minus_operators(model)?;
    let pm = &plus * &minus;
    let mp = &minus * &plus;
    let w = common_eigen_rays(&[&pm, &mp], tol)?;

    let shares_eigenvector = match &w {
        // Every vector is in W, and L_+ has an eigenvector.
        None => true,
        Some(rays) => rays
            .iter()
            .any(|v| is_eigenvector(&plus, v, tol.ray) || is_eigenvector(&minus, v, tol.ray)),
    };
    let swap_pair = match &w {
        Some(rays) if rays.len() == 2 && orthonormalize(rays, tol.ray).len() == 2 => {
            let (e0, e1) = (&rays[0], &rays[1]);
            [&plus, &minus].iter().all(|l| {
                maps_into_ray(l, e0, e1, tol.ray) && maps_into_ray(l, e1, e0, tol.ray)
            })
        }
        _ => false,
    };
    let m_irreducible = !(shares_eigenvector || swap_pair);
    let mut period_four_basis = None;
    let m_period = if m_irreducible {
        for (d, a) in [(&plus, &minus), (&minus, &plus)] {
            if let Some(b) = diagonal_antidiagonal_basis(d, a, tol)? {
                period_four_basis = Some(b);
                break;
            }
        }
        Some(if period_four_basis.is_some() { 4 } else { 2 })
    } else {
        None
    };
    Ok(C2MClassification {
        m_irreducible,
        m_period,
        shares_eigenvector,
        swap_pair,
        w_rays: w,
        period_four_basis,
    })
}

// ---------------------------------------------------------------------------
// Full report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct StructureReport {
    pub internal_dim: usize,
    pub lattice_dim: usize,
    pub num_steps: usize,
    pub stochasticity_residual: f64,
    pub h1: bool,
    pub h2: bool,
    pub l_irreducible: bool,
    pub irreducibility: Irreducibility,
    pub period: Option<usize>,
    #[serde(serialize_with = "matrix_serde::option_list")]
    pub cyclic_projections: Option<Vec<CMatrix>>,
    pub regular: bool,
    pub regular_n_estimate: Option<usize>,
    #[serde(serialize_with = "matrix_serde::serialize")]
    pub r_subspace: CMatrix,
    #[serde(serialize_with = "matrix_serde::serialize")]
    pub d_subspace: CMatrix,
    pub r_dimension: usize,
    /// False for reducible channels with `n > 2` and a proper recurrent
    /// subspace, where only the single-block splitting is computed.
    pub decomposition_supported: bool,
    pub c2: Option<C2Classification>,
    pub c2_situation: Option<u8>,
    /// Final verdict for the walk: the exact `C^2` classifier when it
    /// applies, otherwise the return-path algebra.
    pub m_verdict: MVerdict,
    pub m_return_paths: ReturnPathAnalysis,
    pub m_max_len: usize,
    pub c2_walk: Option<C2MClassification>,
    /// Return-path verdict does not contradict the exact classifier.
    pub m_methods_consistent: Option<bool>,
}

/// Runs every structural classifier on a model.
pub fn analyze(model: &KrausModel, tol: &Tolerances) -> Result<StructureReport> {
    let n = model.internal_dim();
    let v = validate(model, tol);
    if v.residual > tol.stochasticity {
        return Err(Error::Validation {
            residual: v.residual,
            tolerance: tol.stochasticity,
        });
    }
    let irreducibility = is_irreducible_l(model, tol)?;
    let period_data = if irreducibility.verdict {
        Some(period(model, tol)?)
    } else {
        None
    };
    let regular = irreducibility.verdict && period_data.as_ref().is_some_and(|p| p.d == 1);
    let regular_n_estimate = regularity_estimate(model, tol)?;
    let bn = bn_decomposition(model, tol)?;
    let r_dimension = bn.r_basis.ncols();
    let decomposition_supported = !(n > 2 && !irreducibility.verdict && r_dimension < n);
    let c2 = if n == 2 && v.h1_holds && v.h2_holds {
        Some(classify_c2(model, tol)?)
    } else {
        None
    };
    let m_max_len = default_max_len(model);
    let m_return_paths = is_irreducible_m(model, m_max_len, tol)?;
    let c2_walk = match c2_m_classifier(model, tol) {
        Ok(r) => Some(r),
        Err(Error::Scope(_)) => None,
        Err(e) => return Err(e),
    };
    let (m_verdict, m_methods_consistent) = match &c2_walk {
        Some(cw) => {
            let consistent = match &m_return_paths.verdict {
                MVerdict::Irreducible => cw.m_irreducible,
                MVerdict::Reducible { .. } => !cw.m_irreducible,
                MVerdict::Inconclusive => true,
            };
            let verdict = if cw.m_irreducible {
                MVerdict::Irreducible
            } else {
                match &m_return_paths.verdict {
                    MVerdict::Reducible { witness } => MVerdict::Reducible {
                        witness: witness.clone(),
                    },
                    _ => MVerdict::Reducible {
                        witness: c2_walk_witness(model, cw),
                    },
                }
            };
            (verdict, Some(consistent))
        }
        None => (m_return_paths.verdict.clone(), None),
    };
    Ok(StructureReport {
        internal_dim: n,
        lattice_dim: model.lattice_dim(),
        num_steps: model.num_steps(),
        stochasticity_residual: v.residual,
        h1: v.h1_holds,
        h2: v.h2_holds,
        l_irreducible: irreducibility.verdict,
        irreducibility,
        period: period_data.as_ref().map(|p| p.d),
        cyclic_projections: period_data.map(|p| p.projections),
        regular,
        regular_n_estimate,
        r_dimension,
        r_subspace: bn.r_basis,
        d_subspace: bn.d_basis,
        decomposition_supported,
        c2_situation: c2.as_ref().map(|c| c.situation),
        c2,
        m_verdict,
        m_return_paths,
        m_max_len,
        c2_walk,
        m_methods_consistent,
    })
}

/// A ray witnessing reducibility from the exact classifier's data.
fn c2_walk_witness(model: &KrausModel, cw: &C2MClassification) -> CMatrix {
    let (plus, minus) = plus_minus_operators(model).expect("classifier ran");
    let tol = Tolerances::DEFAULT;
    let ray = match &cw.w_rays {
        Some(rays) => rays
            .iter()
            .find(|v| is_eigenvector(&plus, v, tol.ray) || is_eigenvector(&minus, v, tol.ray))
            .or_else(|| rays.first())
            .cloned(),
        None => None,
    };
    let ray = ray.unwrap_or_else(|| {
        eigendecompose_with(&plus, &tol)
            .map(|s| s.right_eigenvectors[0].clone())
            .unwrap_or_else(|_| CVector::from_vec(vec![re(1.0), re(0.0)]))
    });
    let _ = minus;
    CMatrix::from_columns(&[ray])
}
