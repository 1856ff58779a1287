//! Dense complex linear algebra shared by the rest of the crate.
//!
//! Everything here is small and dense: superoperators act on vectorized
//! `n x n` matrices, so the largest matrices are `n^2 x n^2` with `n <= 8`.
//! Matrices are vectorized by stacking columns, which is also nalgebra's
//! storage order.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Numerical tolerances used across the crate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Negative eigenvalues above `-positivity` count as zero.
    pub positivity: f64,
    /// Relative eigenpair residual bound.
    pub residual: f64,
    /// Absolute bound on traces that must vanish.
    pub trace: f64,
    /// Frobenius bound on `sum L*L - Id`.
    pub stochasticity: f64,
    /// Singular values below `rank * max` are treated as zero.
    pub rank: f64,
    /// Sine of the angle under which two rays are identified.
    pub ray: f64,
    /// Relative distance under which eigenvalues are identified.
    pub degeneracy: f64,
    /// Distance to the unit circle for peripheral eigenvalues of a channel.
    pub peripheral: f64,
    /// Minimum eigenvalue for a state to count as faithful.
    pub faithful: f64,
}

impl Tolerances {
    pub const DEFAULT: Tolerances = Tolerances {
        positivity: 1e-10,
        residual: 1e-9,
        trace: 1e-12,
        stochasticity: 1e-10,
        rank: 1e-10,
        ray: 1e-9,
        degeneracy: 1e-9,
        peripheral: 1e-8,
        faithful: 1e-8,
    };
}

impl Default for Tolerances {
    fn default() -> Self {
        Self::DEFAULT
    }
}

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Builds a complex matrix from real row-major data.
pub fn real_matrix(rows: usize, cols: usize, data: &[f64]) -> CMatrix {
    assert_eq!(data.len(), rows * cols);
    CMatrix::from_fn(rows, cols, |i, j| re(data[i * cols + j]))
}

pub fn ensure_finite(m: &CMatrix, what: &str) -> Result<()> {
    if m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

pub fn ensure_square(m: &CMatrix, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "{what} is {}x{}, expected a square matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

/// Column-stacking vectorization.
pub fn vectorize(m: &CMatrix) -> CVector {
    CVector::from_column_slice(m.as_slice())
}

pub fn unvectorize(v: &CVector, n: usize) -> CMatrix {
    assert_eq!(v.len(), n * n, "vector length must be n^2");
    CMatrix::from_column_slice(n, n, v.as_slice())
}

pub fn trace(m: &CMatrix) -> C64 {
    m.diagonal().sum()
}

pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

/// `Tr(a^* b)`, the Hilbert-Schmidt inner product.
pub fn hs_inner(a: &CMatrix, b: &CMatrix) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// Eigenvalues with residual-checked right eigenvectors.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub eigenvalues: Vec<C64>,
    pub right_eigenvectors: Vec<CVector>,
    pub residuals: Vec<f64>,
    /// Set when the leading modulus is shared by more than one eigenvalue.
    pub leading_degenerate: bool,
}

impl EigenSystem {
    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues.first().map_or(0.0, |z| z.norm())
    }
}

pub fn eigendecompose(m: &CMatrix) -> Result<EigenSystem> {
    eigendecompose_with(m, &Tolerances::DEFAULT)
}

/// Full dense eigendecomposition via a complex Schur form.
///
/// Eigenvalues come back sorted by decreasing modulus; equal moduli are
/// ordered by decreasing real part, then increasing imaginary part.
pub fn eigendecompose_with(m: &CMatrix, tol: &Tolerances) -> Result<EigenSystem> {
    let n = ensure_square(m, "eigendecompose input")?;
    ensure_finite(m, "eigendecompose input")?;
    let norm = m.norm();
    if n == 0 {
        return Ok(EigenSystem {
            eigenvalues: vec![],
            right_eigenvectors: vec![],
            residuals: vec![],
            leading_degenerate: false,
        });
    }
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), f64::EPSILON, 10_000)
        .ok_or(Error::Convergence { norm })?;
    let (q, t) = schur.unpack();
    let small = (f64::EPSILON * norm).max(f64::MIN_POSITIVE);

    let mut pairs = Vec::with_capacity(n);
    for k in 0..n {
        let lambda = t[(k, k)];
        let mut y = CVector::zeros(n);
        y[k] = re(1.0);
        for j in (0..k).rev() {
            let mut acc = C64::new(0.0, 0.0);
            for l in (j + 1)..=k {
                acc += t[(j, l)] * y[l];
            }
            let mut denom = t[(j, j)] - lambda;
            if denom.norm() < small {
                denom = re(small);
            }
            y[j] = -acc / denom;
        }
        let mut v = &q * y;
        let vn = v.norm();
        if !(vn.is_finite() && vn > 0.0) {
            return Err(Error::Convergence { norm });
        }
        v.unscale_mut(vn);
        let residual = (m * &v - v.map(|z| z * lambda)).norm();
        let bound = tol.residual * norm.max(f64::MIN_POSITIVE);
        if residual > bound {
            return Err(Error::EigenResidual { residual, bound });
        }
        pairs.push((lambda, v, residual));
    }

    sort_spectrum(&mut pairs, |p| p.0);
    let lead = pairs[0].0.norm();
    let leading_degenerate = pairs
        .iter()
        .skip(1)
        .any(|p| (lead - p.0.norm()).abs() <= tol.degeneracy * lead.max(f64::MIN_POSITIVE));

    let mut eigenvalues = Vec::with_capacity(n);
    let mut right_eigenvectors = Vec::with_capacity(n);
    let mut residuals = Vec::with_capacity(n);
    for (l, v, r) in pairs {
        eigenvalues.push(l);
        right_eigenvectors.push(v);
        residuals.push(r);
    }
    Ok(EigenSystem {
        eigenvalues,
        right_eigenvectors,
        residuals,
        leading_degenerate,
    })
}

/// Eigenvalues only, in the same order as [`eigendecompose`].
pub fn eigenvalues(m: &CMatrix) -> Result<Vec<C64>> {
    let n = ensure_square(m, "eigenvalue input")?;
    ensure_finite(m, "eigenvalue input")?;
    if n == 0 {
        return Ok(vec![]);
    }
    let norm = m.norm();
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), f64::EPSILON, 10_000)
        .ok_or(Error::Convergence { norm })?;
    let (_, t) = schur.unpack();
    let mut values: Vec<C64> = (0..n).map(|k| t[(k, k)]).collect();
    sort_spectrum(&mut values, |z| *z);
    Ok(values)
}

/// Orders by decreasing modulus; moduli within `1e-12` relative form a tie
/// group, sorted by decreasing real part then increasing imaginary part.
fn sort_spectrum<T>(items: &mut Vec<T>, key: impl Fn(&T) -> C64) {
    items.sort_by(|a, b| key(b).norm().total_cmp(&key(a).norm()));
    let scale = items.first().map_or(0.0, |x| key(x).norm()).max(1e-300);
    let mut start = 0;
    while start < items.len() {
        let mut end = start + 1;
        while end < items.len()
            && (key(&items[end - 1]).norm() - key(&items[end]).norm()).abs() <= 1e-12 * scale
        {
            end += 1;
        }
        // Real parts are bucketed so that rounding noise does not split a
        // conjugate pair.
        let bucket = |z: C64| (z.re / (1e-12 * scale)).round() as i64;
        items[start..end].sort_by(|a, b| {
            let (za, zb) = (key(a), key(b));
            bucket(zb).cmp(&bucket(za)).then(za.im.total_cmp(&zb.im))
        });
        start = end;
    }
}

/// Eigenvalues (ascending) and orthonormal eigenvectors of a Hermitian matrix.
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let h = hermitian_part(m);
    let eig = h.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(n, n, |r, col| eig.eigenvectors[(r, order[col])]);
    (values, vectors)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdReport {
    pub is_psd: bool,
    pub min_eigenvalue: f64,
}

/// Positive semi-definiteness test for a Hermitian matrix.
pub fn psd_check(m: &CMatrix, tol: f64) -> Result<PsdReport> {
    ensure_square(m, "psd_check input")?;
    ensure_finite(m, "psd_check input")?;
    let norm = m.norm();
    let deviation = (m - m.adjoint()).norm();
    if deviation > tol * norm + 1e-14 * norm.max(1.0) {
        return Err(Error::NotHermitian { deviation });
    }
    let (values, _) = hermitian_eigen(m);
    let min_eigenvalue = values.first().copied().unwrap_or(0.0);
    Ok(PsdReport {
        is_psd: min_eigenvalue >= -tol,
        min_eigenvalue,
    })
}

/// Singular values (descending) and right singular vectors (columns).
fn svd_right(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let svd = m.clone().svd(false, true);
    let v = svd.v_t.expect("right singular vectors requested").adjoint();
    (svd.singular_values.iter().copied().collect(), v)
}

/// Orthonormal basis of the null space of `m`, using the `dim` smallest
/// right singular vectors.
pub fn null_space(m: &CMatrix, dim: usize) -> CMatrix {
    let ncols = m.ncols();
    if m.nrows() < ncols {
        let padded = CMatrix::from_fn(ncols, ncols, |i, j| {
            if i < m.nrows() {
                m[(i, j)]
            } else {
                re(0.0)
            }
        });
        return null_space(&padded, dim);
    }
    let (_, v) = svd_right(m);
    v.columns(ncols - dim, dim).into_owned()
}

/// Gram-Schmidt with one reorthogonalization pass; drops vectors whose
/// residual norm falls below `tol` times their original norm.
pub fn orthonormalize(vectors: &[CVector], tol: f64) -> Vec<CVector> {
    let mut basis: Vec<CVector> = Vec::new();
    for v in vectors {
        let original = v.norm();
        if original == 0.0 {
            continue;
        }
        let mut w = v.clone();
        for _ in 0..2 {
            for b in &basis {
                let proj = b.dotc(&w);
                w.axpy(-proj, b, re(1.0));
            }
        }
        let wn = w.norm();
        if wn > tol * original {
            basis.push(w.unscale(wn));
        }
    }
    basis
}

/// Solves `a x = b` for `x` restricted to the hyperplane `<normal, x> = 0`.
///
/// `a` must be invertible from the hyperplane onto its image; the smallest
/// singular value of the restriction is checked against `1e-12 * |a|`.
pub fn solve_on_hyperplane(
    a: &CMatrix,
    b: &CVector,
    normal: &CVector,
    tol: &Tolerances,
) -> Result<CVector> {
    let n = ensure_square(a, "solve operator")?;
    if b.len() != n || normal.len() != n {
        return Err(Error::Dimension(format!(
            "operator acts on C^{n}, right-hand side has length {}, normal has length {}",
            b.len(),
            normal.len()
        )));
    }
    let nn = normal.norm();
    if nn == 0.0 {
        return Err(Error::Precondition("hyperplane normal is zero".into()));
    }
    let unit = normal.unscale(nn);
    // Orthonormal basis of the complement of `normal`.
    let projector = CMatrix::identity(n, n) - &unit * unit.adjoint();
    let (values, vectors) = hermitian_eigen(&projector);
    let basis_cols: Vec<usize> = (0..n).filter(|&i| values[i] > 0.5).collect();
    let k = basis_cols.len();
    if k == 0 {
        // The hyperplane is {0}.
        let bn = b.norm();
        if bn > tol.residual * 1e-1 {
            return Err(Error::SolveResidual {
                residual: bn,
                bound: 0.0,
            });
        }
        return Ok(CVector::zeros(n));
    }
    let basis = CMatrix::from_fn(n, k, |r, col| vectors[(r, basis_cols[col])]);
    let restricted = a * &basis;
    let svd = restricted.clone().svd(true, true);
    let sigma_min = svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min);
    let a_norm = a.norm();
    if sigma_min <= 1e-12 * a_norm {
        return Err(Error::RankDeficient { sigma_min });
    }
    let y = svd
        .solve(b, 0.0)
        .map_err(|e| Error::Precondition(format!("least-squares solve failed: {e}")))?;
    let mut x = &basis * y;
    let drift = unit.dotc(&x);
    x.axpy(-drift, &unit, re(1.0));

    let residual = (a * &x - b).norm();
    let bound = 1e-10 * b.norm();
    if residual > bound && residual > 1e-14 * a_norm.max(1.0) {
        return Err(Error::SolveResidual { residual, bound });
    }
    Ok(x)
}

/// Solves `a(x) = b` over traceless `n x n` matrices, where `a` is the
/// `n^2 x n^2` matrix of a linear map in column-stacking convention.
pub fn solve_on_traceless(a: &CMatrix, b: &CMatrix, tol: &Tolerances) -> Result<CMatrix> {
    let n = ensure_square(b, "right-hand side")?;
    if a.nrows() != n * n || a.ncols() != n * n {
        return Err(Error::Dimension(format!(
            "map is {}x{}, right-hand side is {n}x{n}",
            a.nrows(),
            a.ncols()
        )));
    }
    let tr = trace(b);
    if tr.norm() > 1e-10 {
        return Err(Error::TraceContract { trace: tr.norm() });
    }
    let identity = vectorize(&CMatrix::identity(n, n));
    let x = solve_on_hyperplane(a, &vectorize(b), &identity, tol)?;
    let mut x = unvectorize(&x, n);
    let residual_trace = trace(&x);
    let shift = residual_trace / re(n as f64);
    for i in 0..n {
        x[(i, i)] -= shift;
    }
    Ok(x)
}
