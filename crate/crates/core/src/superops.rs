//! The auxiliary channel `L(rho) = sum_s L_s rho L_s^*`, the lattice map,
//! exponential deformations and Perron spectral data.
//!
//! Superoperators act on column-stacked matrices, so `rho -> A rho B^*`
//! has matrix `conj(B) (x) A`.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{
    eigendecompose_with, eigenvalues, ensure_square, hermitian_eigen, hermitian_part, psd_check,
    re, trace, unvectorize, vectorize, CMatrix, CVector, Tolerances, C64,
};
use crate::walkmodel::{DensityMatrix, KrausModel, LatticeState};

/// Linear map on `n x n` matrices stored as an `n^2 x n^2` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Superoperator {
    dim: usize,
    matrix: CMatrix,
}

impl Superoperator {
    pub fn from_matrix(dim: usize, matrix: CMatrix) -> Result<Self> {
        if matrix.nrows() != dim * dim || matrix.ncols() != dim * dim {
            return Err(Error::Dimension(format!(
                "superoperator on {dim}x{dim} matrices must be {0}x{0}, got {1}x{2}",
                dim * dim,
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { dim, matrix })
    }

    /// `rho -> sum_k w_k A_k rho A_k^*`.
    pub fn from_kraus_weighted(ops: &[CMatrix], weights: &[f64]) -> Self {
        assert_eq!(ops.len(), weights.len());
        let n = ops[0].nrows();
        let mut m = CMatrix::zeros(n * n, n * n);
        for (a, &w) in ops.iter().zip(weights) {
            if w != 0.0 {
                m += a.conjugate().kronecker(a).map(|z| z * w);
            }
        }
        Self { dim: n, matrix: m }
    }

    /// `rho -> A rho B^*`.
    pub fn sandwich(a: &CMatrix, b: &CMatrix) -> Self {
        Self {
            dim: a.nrows(),
            matrix: b.conjugate().kronecker(a),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            matrix: CMatrix::identity(dim * dim, dim * dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn apply(&self, x: &CMatrix) -> CMatrix {
        assert_eq!(x.nrows(), self.dim, "operand dimension");
        unvectorize(&(&self.matrix * vectorize(x)), self.dim)
    }

    /// Adjoint for the Hilbert-Schmidt inner product.
    pub fn adjoint(&self) -> Self {
        Self {
            dim: self.dim,
            matrix: self.matrix.adjoint(),
        }
    }

    pub fn compose(&self, other: &Self) -> Self {
        Self {
            dim: self.dim,
            matrix: &self.matrix * &other.matrix,
        }
    }

    /// `sum_{ij} E_ij (x) Phi(E_ij)`.
    pub fn choi(&self) -> CMatrix {
        let n = self.dim;
        let mut choi = CMatrix::zeros(n * n, n * n);
        for i in 0..n {
            for j in 0..n {
                let mut e = CMatrix::zeros(n, n);
                e[(i, j)] = re(1.0);
                let image = self.apply(&e);
                for k in 0..n {
                    for l in 0..n {
                        choi[(i * n + k, j * n + l)] = image[(k, l)];
                    }
                }
            }
        }
        choi
    }

    /// Smallest eigenvalue of the Choi matrix, after checking Hermiticity.
    pub fn choi_min_eigenvalue(&self, tol: &Tolerances) -> Result<f64> {
        let choi = self.choi();
        let scale = choi.norm().max(1.0);
        let dev = (&choi - choi.adjoint()).norm();
        if dev > tol.positivity * scale {
            return Err(Error::NotCompletelyPositive {
                min_eigenvalue: f64::NAN,
            });
        }
        Ok(psd_check(&hermitian_part(&choi), tol.positivity * scale)?.min_eigenvalue)
    }

    pub fn is_completely_positive(&self, tol: &Tolerances) -> Result<bool> {
        let scale = self.matrix.norm().max(1.0);
        Ok(self.choi_min_eigenvalue(tol)? >= -tol.positivity * scale)
    }
}

fn check_u(model: &KrausModel, u: &[f64]) -> Result<()> {
    if u.len() != model.lattice_dim() {
        return Err(Error::Dimension(format!(
            "u has length {}, lattice dimension is {}",
            u.len(),
            model.lattice_dim()
        )));
    }
    if u.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("u".into()));
    }
    Ok(())
}

fn check_rho(model: &KrausModel, rho: &CMatrix) -> Result<()> {
    let n = ensure_square(rho, "state")?;
    if n != model.internal_dim() {
        return Err(Error::Dimension(format!(
            "state is {n}x{n}, model acts on C^{}",
            model.internal_dim()
        )));
    }
    Ok(())
}

/// `<u, s>` for every step.
pub fn pairings(model: &KrausModel, u: &[f64]) -> Vec<f64> {
    (0..model.num_steps())
        .map(|k| model.step_set().pairing(k, u))
        .collect()
}

/// The superoperator of the auxiliary channel.
pub fn l_superop(model: &KrausModel) -> Superoperator {
    Superoperator::from_kraus_weighted(model.operators(), &vec![1.0; model.num_steps()])
}

/// `sum_s L_s rho L_s^*` on an arbitrary matrix.
pub fn apply_l_matrix(model: &KrausModel, rho: &CMatrix) -> Result<CMatrix> {
    check_rho(model, rho)?;
    let n = model.internal_dim();
    let mut out = CMatrix::zeros(n, n);
    for l in model.operators() {
        out += l * rho * l.adjoint();
    }
    Ok(out)
}

/// One step of the auxiliary channel on a state.
pub fn apply_l(model: &KrausModel, rho: &DensityMatrix) -> Result<DensityMatrix> {
    let out = apply_l_matrix(model, rho.matrix())?;
    Ok(DensityMatrix::from_matrix_unchecked(hermitian_part(&out)))
}

/// One step of the walk on the lattice: the block at `i` becomes
/// `sum_s L_s rho(i - s) L_s^*`.
pub fn apply_m(model: &KrausModel, state: &LatticeState) -> Result<LatticeState> {
    let n = model.internal_dim();
    let mut out: BTreeMap<Vec<i64>, CMatrix> = BTreeMap::new();
    for (pos, block) in state.sites() {
        check_rho(model, block)?;
        for (s, l) in model.steps().iter().zip(model.operators()) {
            let target: Vec<i64> = pos.iter().zip(s).map(|(a, b)| a + b).collect();
            let image = l * block * l.adjoint();
            *out.entry(target).or_insert_with(|| CMatrix::zeros(n, n)) += image;
        }
    }
    Ok(LatticeState::from_blocks(out))
}

/// `rho -> sum_s e^{<u,s>} L_s rho L_s^*`.
pub fn deform(model: &KrausModel, u: &[f64]) -> Result<Superoperator> {
    check_u(model, u)?;
    let weights: Vec<f64> = pairings(model, u).into_iter().map(f64::exp).collect();
    Ok(Superoperator::from_kraus_weighted(model.operators(), &weights))
}

/// `rho -> sum_s e^{t phi(s)} L_s rho L_s^*`.
pub fn deform_weighted(model: &KrausModel, phi: &[f64], t: f64) -> Result<Superoperator> {
    if phi.len() != model.num_steps() {
        return Err(Error::Dimension(format!(
            "{} weights for {} steps",
            phi.len(),
            model.num_steps()
        )));
    }
    if !t.is_finite() || phi.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("weights".into()));
    }
    let weights: Vec<f64> = phi.iter().map(|&f| (t * f).exp()).collect();
    Ok(Superoperator::from_kraus_weighted(model.operators(), &weights))
}

/// First and second derivatives in `t` of `deform(t u)` at `t = 0`:
/// `rho -> sum <u,s> L_s rho L_s^*` and `rho -> sum <u,s>^2 L_s rho L_s^*`.
pub fn derivative_maps(model: &KrausModel, u: &[f64]) -> Result<(Superoperator, Superoperator)> {
    check_u(model, u)?;
    let first = pairings(model, u);
    let second: Vec<f64> = first.iter().map(|x| x * x).collect();
    Ok((
        Superoperator::from_kraus_weighted(model.operators(), &first),
        Superoperator::from_kraus_weighted(model.operators(), &second),
    ))
}

/// Perron data of a positive map.
#[derive(Debug, Clone, Serialize)]
pub struct SpectralData {
    /// Spectral radius.
    pub lambda: f64,
    #[serde(skip)]
    pub rho: DensityMatrix,
    /// Left eigenvector, normalized by `Tr(m rho) = 1`.
    #[serde(skip)]
    pub m: CMatrix,
    /// The Perron root has multiplicity above one.
    pub degenerate: bool,
    /// `lambda` minus the largest modulus off the peripheral circle.
    pub gap: f64,
    /// Eigenvalues of modulus `lambda`, up to the peripheral tolerance.
    #[serde(skip)]
    pub peripheral: Vec<C64>,
    pub residual: f64,
}

/// Peripheral spectrum with multiplicity, the largest modulus outside it,
/// and the full sorted spectrum.
fn split_peripheral(values: &[C64], tol: &Tolerances) -> (Vec<C64>, f64) {
    let r = values.first().map_or(0.0, |z| z.norm());
    let cut = tol.peripheral * r.max(f64::MIN_POSITIVE);
    let mut peripheral = Vec::new();
    let mut inner = 0.0f64;
    for z in values {
        if r - z.norm() <= cut {
            peripheral.push(*z);
        } else {
            inner = inner.max(z.norm());
        }
    }
    (peripheral, inner)
}

/// Projects a candidate eigenvector onto the positive cone: Hermitian part,
/// trace-positive sign, clip of tiny negative eigenvalues. Negative parts
/// larger than the peripheral tolerance are reported, not repaired.
fn positive_representative(v: &CMatrix, tol: &Tolerances) -> Result<CMatrix> {
    let tr = trace(v);
    let phased = if tr.norm() > 0.0 {
        v.map(|z| z * (tr.conj() / tr.norm()))
    } else {
        v.clone()
    };
    let h = hermitian_part(&phased);
    let t = trace(&h).re;
    if !(t.abs() > 0.0) {
        return Err(Error::Positivity { min_eigenvalue: 0.0 });
    }
    let h = h.unscale(t);
    let (values, vectors) = hermitian_eigen(&h);
    if values[0] < -tol.peripheral {
        return Err(Error::Positivity {
            min_eigenvalue: values[0],
        });
    }
    if values[0] >= 0.0 {
        return Ok(h);
    }
    let clipped = CVector::from_iterator(values.len(), values.iter().map(|&x| re(x.max(0.0))));
    let rebuilt = &vectors * CMatrix::from_diagonal(&clipped) * vectors.adjoint();
    let t = trace(&rebuilt).re;
    Ok(hermitian_part(&rebuilt.unscale(t)))
}

/// Image of the identity under the spectral projector of the eigenvalues
/// within `cut` of `target`, for the matrix and its adjoint. Falls back to
/// the first eigenvector when the left/right pairing is singular, which
/// happens on defective eigenvalues.
pub fn projected_identity(
    superop: &Superoperator,
    target: C64,
    cut: f64,
    tol: &Tolerances,
) -> Result<(CMatrix, CMatrix)> {
    let n = superop.dim();
    let right = eigendecompose_with(superop.matrix(), tol)?;
    let left = eigendecompose_with(&superop.matrix().adjoint(), tol)?;
    let pick = |sys: &crate::numerics::EigenSystem, t: C64| -> Vec<CVector> {
        sys.eigenvalues
            .iter()
            .zip(&sys.right_eigenvectors)
            .filter(|(z, _)| (**z - t).norm() <= cut)
            .map(|(_, v)| v.clone())
            .collect()
    };
    let rs = pick(&right, target);
    let ls = pick(&left, target.conj());
    let identity = vectorize(&CMatrix::identity(n, n));
    if rs.is_empty() || ls.is_empty() {
        return Err(Error::Precondition("no eigenvector at the Perron root".into()));
    }
    if rs.len() == ls.len() {
        let r = CMatrix::from_columns(&rs);
        let l = CMatrix::from_columns(&ls);
        let pairing = l.adjoint() * &r;
        let sv = pairing.singular_values();
        let smax = sv.max();
        if sv.min() > 1e-8 * smax.max(f64::MIN_POSITIVE) {
            if let Some(inv) = pairing.try_inverse() {
                let rho = &r * (&inv * (l.adjoint() * &identity));
                let m = &l * (inv.adjoint() * (r.adjoint() * &identity));
                return Ok((unvectorize(&rho, n), unvectorize(&m, n)));
            }
        }
    }
    Ok((unvectorize(&rs[0], n), unvectorize(&ls[0], n)))
}

/// Spectral radius and Perron eigenvectors of a completely positive map.
pub fn perron(superop: &Superoperator, tol: &Tolerances) -> Result<SpectralData> {
    let min_choi = superop.choi_min_eigenvalue(tol)?;
    let scale = superop.matrix().norm().max(1.0);
    if min_choi < -tol.positivity * scale {
        return Err(Error::NotCompletelyPositive {
            min_eigenvalue: min_choi,
        });
    }
    let values = eigenvalues(superop.matrix())?;
    let lambda = values[0].norm();
    let (peripheral, inner) = split_peripheral(&values, tol);
    let gap = lambda - inner;
    let target = re(lambda);
    let cut = tol.peripheral * lambda.max(f64::MIN_POSITIVE);
    let dup = tol.degeneracy * lambda.max(f64::MIN_POSITIVE);
    let degenerate = peripheral
        .iter()
        .enumerate()
        .any(|(i, a)| peripheral[i + 1..].iter().any(|b| (a - b).norm() <= dup));

    let (rho_raw, m_raw) = projected_identity(superop, target, cut, tol)?;
    let rho = positive_representative(&rho_raw, tol)?;
    let m = positive_representative(&m_raw, tol)?;
    let norm = trace(&(&m * &rho)).re;
    if !(norm > 0.0) {
        return Err(Error::Positivity { min_eigenvalue: norm });
    }
    let m = m.unscale(norm);
    let residual = (superop.apply(&rho) - rho.map(|z| z * lambda)).norm();
    Ok(SpectralData {
        lambda,
        rho: DensityMatrix::from_matrix_unchecked(rho),
        m,
        degenerate,
        gap,
        peripheral,
        residual,
    })
}

/// Spectral radius from the eigenvalues alone.
pub fn spectral_radius(superop: &Superoperator) -> Result<f64> {
    Ok(eigenvalues(superop.matrix())?
        .first()
        .map_or(0.0, |z| z.norm()))
}

/// `log r(L_u)`, evaluated with the largest exponent factored out so that
/// large `|u|` does not overflow.
pub fn log_lambda(model: &KrausModel, u: &[f64]) -> Result<f64> {
    check_u(model, u)?;
    let p = pairings(model, u);
    let shift = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = p.iter().map(|x| (x - shift).exp()).collect();
    let r = spectral_radius(&Superoperator::from_kraus_weighted(model.operators(), &weights))?;
    Ok(shift + r.ln())
}

/// `Tr(L_u^p(rho))` by repeated application.
pub fn trace_of_power(superop: &Superoperator, rho: &CMatrix, p: usize) -> C64 {
    let mut v = vectorize(rho);
    for _ in 0..p {
        v = superop.matrix() * v;
    }
    trace(&unvectorize(&v, superop.dim()))
}
