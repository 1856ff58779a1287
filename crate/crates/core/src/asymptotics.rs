//! Invariant state, drift, CLT covariance (two formulas), the curve
//! `u -> log lambda_u` and its Legendre transform.

use nalgebra::{DMatrix, DVector};
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::numerics::{
    eigenvalues, hermitian_eigen, re, solve_on_hyperplane, solve_on_traceless, trace, vectorize,
    CMatrix, Tolerances, C64,
};
use crate::structure::{bn_decomposition, classify_c2, is_irreducible_l, period};
use crate::superops::{derivative_maps, l_superop, log_lambda, perron, deform};
use crate::walkmodel::{matrix_serde, DensityMatrix, KrausModel, LatticeState, StepSet};

// ---------------------------------------------------------------------------
// Invariant state, drift, covariance
// ---------------------------------------------------------------------------

/// The unique fixed point of the channel.
pub fn invariant_state(model: &KrausModel, tol: &Tolerances) -> Result<DensityMatrix> {
    let sop = l_superop(model);
    let values = eigenvalues(sop.matrix())?;
    let mut multiplicity = 0;
    for z in &values {
        let dist = (z - re(1.0)).norm();
        if dist <= tol.degeneracy {
            multiplicity += 1;
        } else if dist < tol.peripheral {
            return Err(Error::Indeterminate { gap: dist });
        }
    }
    if multiplicity != 1 {
        return Err(Error::Multiplicity { multiplicity });
    }
    let sd = perron(&sop, tol)?;
    let rho = sd.rho;
    let residual = (sop.apply(rho.matrix()) - rho.matrix()).norm();
    if residual > 1e-10 {
        return Err(Error::EigenResidual {
            residual,
            bound: 1e-10,
        });
    }
    Ok(rho)
}

/// `m = sum_s Tr(L_s rho L_s^*) s` for a given internal state.
pub fn drift_for_state(model: &KrausModel, rho: &CMatrix) -> Vec<f64> {
    let d = model.lattice_dim();
    let mut m = vec![0.0; d];
    for (s, p) in model.steps().iter().zip(model.step_probabilities(rho)) {
        for i in 0..d {
            m[i] += p * s[i] as f64;
        }
    }
    m
}

/// Asymptotic drift per step.
pub fn drift(model: &KrausModel, tol: &Tolerances) -> Result<Vec<f64>> {
    let rho = invariant_state(model, tol)?;
    Ok(drift_for_state(model, rho.matrix()))
}

/// Gradient of `log lambda_u` at `u = 0` by central differences.
pub fn drift_finite_difference(model: &KrausModel, h: f64) -> Result<Vec<f64>> {
    let d = model.lattice_dim();
    (0..d)
        .map(|i| {
            let mut up = vec![0.0; d];
            let mut down = vec![0.0; d];
            up[i] = h;
            down[i] = -h;
            Ok((log_lambda(model, &up)? - log_lambda(model, &down)?) / (2.0 * h))
        })
        .collect()
}

fn serialize_rows<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect();
    rows.serialize(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct AsymptoticStats {
    pub m: Vec<f64>,
    #[serde(serialize_with = "serialize_rows")]
    pub c: DMatrix<f64>,
    /// Traceless solutions `eta_{e_i}` for the coordinate directions.
    #[serde(serialize_with = "matrix_serde::list")]
    pub eta_basis: Vec<CMatrix>,
    /// Residuals `|(Id - L)(eta) - rhs|` of the traceless solves.
    pub method_residuals: Vec<f64>,
    #[serde(serialize_with = "matrix_serde::serialize")]
    pub rho_inv: CMatrix,
}

/// `lambda'_u`, `lambda''_u` and `eta_u` at zero along direction `u`.
#[derive(Debug, Clone)]
pub struct DirectionalDerivatives {
    pub first: f64,
    pub second: f64,
    pub eta: CMatrix,
    pub residual: f64,
}

/// First and second derivatives of `t -> lambda_{t u}` at `t = 0`:
/// `lambda' = Tr(L'_u(rho))` and `lambda'' = Tr(L''_u(rho)) + 2 Tr(L'_u(eta))`
/// with `eta` the traceless solution of
/// `(Id - L)(eta) = L'_u(rho) - Tr(L'_u(rho)) rho`.
pub fn directional_derivatives(
    model: &KrausModel,
    rho: &CMatrix,
    u: &[f64],
    tol: &Tolerances,
) -> Result<DirectionalDerivatives> {
    let n = model.internal_dim();
    let (d1, d2) = derivative_maps(model, u)?;
    let image = d1.apply(rho);
    let first = trace(&image).re;
    let rhs = &image - rho.map(|z| z * first);
    let a = CMatrix::identity(n * n, n * n) - l_superop(model).matrix();
    let eta = solve_on_traceless(&a, &rhs, tol)?;
    let residual = (crate::numerics::unvectorize(&(&a * vectorize(&eta)), n) - &rhs).norm();
    let second = trace(&d2.apply(rho)).re + 2.0 * trace(&d1.apply(&eta)).re;
    Ok(DirectionalDerivatives {
        first,
        second,
        eta,
        residual,
    })
}

/// Drift and covariance from the derivatives of the Perron eigenvalue,
/// with off-diagonal entries obtained by polarization.
pub fn covariance(model: &KrausModel, tol: &Tolerances) -> Result<AsymptoticStats> {
    let d = model.lattice_dim();
    let rho = invariant_state(model, tol)?;
    let rho = rho.matrix();
    let unit = |i: usize| -> Vec<f64> {
        let mut u = vec![0.0; d];
        u[i] = 1.0;
        u
    };
    let mut q = vec![0.0; d];
    let mut m = vec![0.0; d];
    let mut eta_basis = Vec::with_capacity(d);
    let mut method_residuals = Vec::with_capacity(d);
    for i in 0..d {
        let dd = directional_derivatives(model, rho, &unit(i), tol)?;
        q[i] = dd.second - dd.first * dd.first;
        m[i] = dd.first;
        eta_basis.push(dd.eta);
        method_residuals.push(dd.residual);
    }
    let mut c = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        c[(i, i)] = q[i];
        for j in (i + 1)..d {
            let mut u = unit(i);
            u[j] = 1.0;
            let dd = directional_derivatives(model, rho, &u, tol)?;
            let qij = dd.second - dd.first * dd.first;
            let value = 0.5 * (qij - q[i] - q[j]);
            c[(i, j)] = value;
            c[(j, i)] = value;
        }
    }
    Ok(AsymptoticStats {
        m,
        c,
        eta_basis,
        method_residuals,
        rho_inv: rho.clone(),
    })
}

/// Covariance from the dual formulation: solve
/// `(Id - L^*)(Y_j) = sum_s s_j L_s^* L_s - m_j Id` with `Tr(rho Y_j) = 0`
/// and assemble
/// `C_ij = sum_s s_i s_j Tr(L_s rho L_s^*) + Tr(L'_{e_i}(rho) Y_j)
///        + Tr(L'_{e_j}(rho) Y_i) - m_i Tr(rho Y_j) - m_j Tr(rho Y_i) - m_i m_j`.
pub fn covariance_ags(model: &KrausModel, tol: &Tolerances) -> Result<DMatrix<f64>> {
    let n = model.internal_dim();
    let d = model.lattice_dim();
    let rho = invariant_state(model, tol)?;
    let rho = rho.matrix();
    let m = drift_for_state(model, rho);
    let probs = model.step_probabilities(rho);
    let a = CMatrix::identity(n * n, n * n) - l_superop(model).adjoint().matrix();
    let normal = vectorize(rho);
    let mut ys = Vec::with_capacity(d);
    let mut primes = Vec::with_capacity(d);
    for j in 0..d {
        let mut rhs = CMatrix::identity(n, n).map(|z| z * -m[j]);
        for (s, l) in model.steps().iter().zip(model.operators()) {
            rhs += (l.adjoint() * l).map(|z| z * s[j] as f64);
        }
        let y = solve_on_hyperplane(&a, &vectorize(&rhs), &normal, tol)?;
        ys.push(crate::numerics::unvectorize(&y, n));
        let mut u = vec![0.0; d];
        u[j] = 1.0;
        primes.push(derivative_maps(model, &u)?.0.apply(rho));
    }
    let mut c = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let mut v = 0.0;
            for (s, p) in model.steps().iter().zip(&probs) {
                v += (s[i] * s[j]) as f64 * p;
            }
            v += trace(&(&primes[i] * &ys[j])).re + trace(&(&primes[j] * &ys[i])).re;
            v -= m[i] * trace(&(rho * &ys[j])).re + m[j] * trace(&(rho * &ys[i])).re;
            v -= m[i] * m[j];
            c[(i, j)] = v;
        }
    }
    Ok(c)
}

// ---------------------------------------------------------------------------
// C^2 closed forms
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct C2Parameters {
    pub situation: u8,
    pub periodic: bool,
    pub m: Vec<f64>,
    #[serde(serialize_with = "serialize_rows")]
    pub c: DMatrix<f64>,
    /// Weight `p = sum_i <e_1, rho(i) e_1>` of the first law in situation 3.
    pub mixture_weight: Option<f64>,
}

/// Mean and covariance of the law `P(A = s) = weights[s]` on the steps.
fn law_moments(steps: &StepSet, weights: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let d = steps.lattice_dim();
    let mut mean = vec![0.0; d];
    for (s, w) in steps.steps().iter().zip(weights) {
        for i in 0..d {
            mean[i] += w * s[i] as f64;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for (s, w) in steps.steps().iter().zip(weights) {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += w * (s[i] as f64 - mean[i]) * (s[j] as f64 - mean[j]);
            }
        }
    }
    (mean, cov)
}

fn mix(a: &[f64], b: &[f64], p: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| p * x + (1.0 - p) * y).collect()
}

/// Drift and covariance of a `C^2` walk, dispatching on the common
/// eigenvector situation and the period.
pub fn c2_parameters(
    model: &KrausModel,
    initial: &LatticeState,
    tol: &Tolerances,
) -> Result<C2Parameters> {
    if model.internal_dim() != 2 {
        return Err(Error::Scope(format!(
            "closed-form C^2 parameters need internal dimension 2, got {}",
            model.internal_dim()
        )));
    }
    let class = classify_c2(model, tol)?;
    let steps = model.step_set();
    let sq = |v: &[C64]| -> Vec<f64> { v.iter().map(|z| z.norm_sqr()).collect() };
    match class.situation {
        1 => {
            let p = period(model, tol)?;
            if p.d == 1 {
                let stats = covariance(model, tol)?;
                return Ok(C2Parameters {
                    situation: 1,
                    periodic: false,
                    m: stats.m,
                    c: stats.c,
                    mixture_weight: None,
                });
            }
            // Unit vectors spanning the two cyclic blocks.
            let e1 = block_vector(&p.projections[0]);
            let e2 = block_vector(&p.projections[1]);
            let nu: Vec<C64> = model.operators().iter().map(|l| e2.dotc(&(l * &e1))).collect();
            let gamma: Vec<C64> = model.operators().iter().map(|l| e1.dotc(&(l * &e2))).collect();
            let (ma, ca) = law_moments(steps, &sq(&nu));
            let (mb, cb) = law_moments(steps, &sq(&gamma));
            Ok(C2Parameters {
                situation: 1,
                periodic: true,
                m: mix(&ma, &mb, 0.5),
                c: (ca + cb).scale(0.5),
                mixture_weight: None,
            })
        }
        2 => {
            let (ma, ca) = law_moments(steps, &sq(&class.alpha));
            Ok(C2Parameters {
                situation: 2,
                periodic: false,
                m: ma,
                c: ca,
                mixture_weight: None,
            })
        }
        _ => {
            let basis = class.basis.as_ref().expect("situation 3 has a basis");
            let e1 = basis.column(0).into_owned();
            let p: f64 = initial
                .sites()
                .values()
                .map(|b| e1.dotc(&(b * &e1)).re)
                .sum();
            let (ma, ca) = law_moments(steps, &sq(&class.alpha));
            let (mb, cb) = law_moments(steps, &sq(&class.beta));
            Ok(C2Parameters {
                situation: 3,
                periodic: false,
                m: mix(&ma, &mb, p),
                c: ca.scale(p) + cb.scale(1.0 - p),
                mixture_weight: Some(p),
            })
        }
    }
}

/// Unit vector in the range of a rank-one projection.
fn block_vector(p: &CMatrix) -> crate::numerics::CVector {
    let (_, vecs) = hermitian_eigen(p);
    vecs.column(p.nrows() - 1).into_owned()
}

// ---------------------------------------------------------------------------
// The curve u -> log lambda_u
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct UWindow {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Default for UWindow {
    fn default() -> Self {
        Self {
            min: -4.0,
            max: 4.0,
            points: 41,
        }
    }
}

impl UWindow {
    pub fn axis(&self) -> Vec<f64> {
        linspace(self.min, self.max, self.points)
    }

    /// Tensor grid in `d` dimensions, last coordinate fastest.
    pub fn grid(&self, d: usize) -> Vec<Vec<f64>> {
        tensor_grid(&self.axis(), d)
    }
}

pub fn linspace(a: f64, b: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![a],
        _ => (0..points)
            .map(|k| a + (b - a) * k as f64 / (points - 1) as f64)
            .collect(),
    }
}

pub fn tensor_grid(axis: &[f64], d: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![]];
    for _ in 0..d {
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for prefix in &out {
            for &x in axis {
                let mut p = prefix.clone();
                p.push(x);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct CurvePoint {
    pub u: Vec<f64>,
    pub log_lambda: f64,
    /// Perron root is repeated (unavailable when the Perron data fails).
    pub degenerate: Option<bool>,
    pub gap: Option<f64>,
}

/// A point where the one-sided derivatives of `log lambda_u` differ.
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct Kink {
    pub u: f64,
    pub left_slope: f64,
    pub right_slope: f64,
    /// One-sided derivatives of `lambda_u` itself.
    pub left_lambda_slope: f64,
    pub right_lambda_slope: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaCurve {
    pub points: Vec<CurvePoint>,
    pub kinks: Vec<Kink>,
    /// The channel is reducible, so analyticity is not guaranteed.
    pub reducible: bool,
    /// `log lambda_u` of the channel restricted to the recurrent subspace,
    /// when that subspace is proper.
    pub restricted: Option<Vec<f64>>,
}

/// The model compressed to the recurrent subspace, if it is proper.
pub fn restricted_model(model: &KrausModel, tol: &Tolerances) -> Result<Option<KrausModel>> {
    let bn = bn_decomposition(model, tol)?;
    let r = bn.r_basis;
    if r.ncols() == model.internal_dim() || r.ncols() == 0 {
        return Ok(None);
    }
    let ops = model
        .operators()
        .iter()
        .map(|l| r.adjoint() * l * &r)
        .collect();
    Ok(Some(KrausModel::new(model.step_set().clone(), ops)?))
}

/// `log lambda_u` on a list of points, with Perron diagnostics, kink
/// detection along one-dimensional grids, and the restricted curve for
/// reducible channels.
pub fn lambda_curve(model: &KrausModel, u_grid: &[Vec<f64>], tol: &Tolerances) -> Result<LambdaCurve> {
    let mut points = Vec::with_capacity(u_grid.len());
    for u in u_grid {
        let value = log_lambda(model, u)?;
        let (degenerate, gap) = match deform(model, u).and_then(|s| perron(&s, tol)) {
            Ok(sd) => (Some(sd.degenerate), Some(sd.gap / sd.lambda)),
            Err(_) => (None, None),
        };
        points.push(CurvePoint {
            u: u.clone(),
            log_lambda: value,
            degenerate,
            gap,
        });
    }
    let reducible = !is_irreducible_l(model, tol)?.verdict;
    let kinks = if model.lattice_dim() == 1 && u_grid.len() >= 2 {
        let axis: Vec<f64> = u_grid.iter().map(|u| u[0]).collect();
        find_kinks(model, &axis)?
    } else {
        vec![]
    };
    let restricted = match restricted_model(model, tol)? {
        Some(r) => Some(
            u_grid
                .iter()
                .map(|u| log_lambda(&r, u))
                .collect::<Result<Vec<f64>>>()?,
        ),
        None => None,
    };
    Ok(LambdaCurve {
        points,
        kinks,
        reducible,
        restricted,
    })
}

/// Step for one-sided slopes at a located kink.
const KINK_DELTA: f64 = 1e-5;
/// Bisection stops at this bracket width.
const KINK_WIDTH: f64 = 1e-7;

/// Locates derivative jumps of `log lambda_u` on a sorted 1-d grid.
///
/// Each grid segment, widened by half a spacing on both sides so that
/// kinks on grid points are not missed, is bisected towards the part that
/// carries the largest increase of the one-sided derivatives. At the final
/// bracket the slopes are measured just outside it and compared with what
/// the local curvature alone would explain.
pub fn find_kinks(model: &KrausModel, axis: &[f64]) -> Result<Vec<Kink>> {
    let f = |u: f64| log_lambda(model, &[u]);
    let mut kinks: Vec<Kink> = Vec::new();
    for w in axis.windows(2) {
        let half = 0.5 * (w[1] - w[0]);
        let (mut a, mut b) = (w[0] - half, w[1] + half);
        while b - a > KINK_WIDTH {
            let delta = KINK_DELTA.min((b - a) / 4.0);
            let m = 0.5 * (a + b);
            let (fa, fm, fb) = (f(a)?, f(m)?, f(b)?);
            let d_plus_a = (f(a + delta)? - fa) / delta;
            let d_minus_m = (fm - f(m - delta)?) / delta;
            let d_plus_m = (f(m + delta)? - fm) / delta;
            let d_minus_b = (fb - f(b - delta)?) / delta;
            let left = d_minus_m - d_plus_a;
            let right = d_minus_b - d_plus_m;
            let middle = d_plus_m - d_minus_m;
            if middle >= left && middle >= right {
                a = m - delta;
                b = m + delta;
            } else if left >= right {
                b = m;
            } else {
                a = m;
            }
        }
        let d = KINK_DELTA;
        let (fa, fb) = (f(a)?, f(b)?);
        let (fa1, fa2) = (f(a - d)?, f(a - 2.0 * d)?);
        let (fb1, fb2) = (f(b + d)?, f(b + 2.0 * d)?);
        let left_slope = (fa - fa1) / d;
        let right_slope = (fb1 - fb) / d;
        let kappa = ((fa - 2.0 * fa1 + fa2).abs() / (d * d)).max((fb2 - 2.0 * fb1 + fb).abs() / (d * d));
        let jump = right_slope - left_slope;
        let scale = 1f64.max(left_slope.abs()).max(right_slope.abs());
        if jump > 1e-6 * scale + 4.0 * d * kappa {
            let u = 0.5 * (a + b);
            if kinks.iter().any(|k| (k.u - u).abs() < 1e-5) {
                continue;
            }
            let lam = f(u)?.exp();
            kinks.push(Kink {
                u,
                left_slope,
                right_slope,
                left_lambda_slope: lam * left_slope,
                right_lambda_slope: lam * right_slope,
            });
        }
    }
    kinks.sort_by(|x, y| x.u.total_cmp(&y.u));
    Ok(kinks)
}

/// Largest violation of convexity along a sorted 1-d grid (positive means
/// a negative second difference).
pub fn convexity_violation(axis: &[f64], values: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for k in 1..axis.len().saturating_sub(1) {
        let (h1, h2) = (axis[k] - axis[k - 1], axis[k + 1] - axis[k]);
        let s1 = (values[k] - values[k - 1]) / h1;
        let s2 = (values[k + 1] - values[k]) / h2;
        worst = worst.max(s1 - s2);
    }
    worst
}

// ---------------------------------------------------------------------------
// Rate function
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateOptions {
    pub window: UWindow,
    /// Values above this are reported as `+inf`.
    pub cap: f64,
    /// Window doublings allowed when the maximizer sits on the edge.
    pub max_doublings: usize,
    /// Tolerance in `u` of the golden-section refinement.
    pub u_tol: f64,
}

impl Default for RateOptions {
    fn default() -> Self {
        Self {
            window: UWindow::default(),
            cap: 1e6,
            max_doublings: 6,
            u_tol: 1e-8,
        }
    }
}

fn serialize_extended<S: Serializer>(v: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    let items: Vec<serde_json::Value> = v
        .iter()
        .map(|x| {
            if x.is_finite() {
                serde_json::json!(x)
            } else {
                serde_json::json!("inf")
            }
        })
        .collect();
    items.serialize(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct RateFunctionTable {
    pub u_grid: Vec<Vec<f64>>,
    pub log_lambda: Vec<f64>,
    pub x_grid: Vec<Vec<f64>>,
    #[serde(serialize_with = "serialize_extended")]
    pub rate: Vec<f64>,
    pub kinks: Vec<Kink>,
    /// The channel is reducible: the transform is only an upper bound
    /// argument for the true rate.
    pub upper_bound_only: bool,
    pub restricted_log_lambda: Option<Vec<f64>>,
}

/// Non-negative least squares (Lawson-Hanson).
fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::<f64>::zeros(n);
    let mut passive = vec![false; n];
    let solve_passive = |passive: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
        let sub = DMatrix::from_fn(a.nrows(), idx.len(), |r, c| a[(r, idx[c])]);
        let z = sub
            .svd(true, true)
            .solve(b, 1e-14)
            .unwrap_or_else(|_| DVector::zeros(idx.len()));
        let mut full = DVector::zeros(n);
        for (k, &i) in idx.iter().enumerate() {
            full[i] = z[k];
        }
        full
    };
    for _ in 0..(3 * n + 10) {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..n)
            .filter(|&i| !passive[i] && w[i] > 1e-12)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else { break };
        passive[j] = true;
        for _ in 0..(3 * n + 10) {
            let z = solve_passive(&passive);
            if (0..n).filter(|&i| passive[i]).all(|i| z[i] > 0.0) {
                x = z;
                break;
            }
            let mut alpha = f64::INFINITY;
            for i in 0..n {
                if passive[i] && z[i] <= 0.0 {
                    alpha = alpha.min(x[i] / (x[i] - z[i]));
                }
            }
            x += (z - &x).scale(alpha);
            for i in 0..n {
                if passive[i] && x[i] <= 1e-14 {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            }
        }
    }
    x
}

/// Whether `x` lies in the convex hull of the steps.
pub fn in_step_hull(steps: &StepSet, x: &[f64]) -> bool {
    let d = steps.lattice_dim();
    if d == 1 {
        let lo = steps.steps().iter().map(|s| s[0]).min().unwrap_or(0) as f64;
        let hi = steps.steps().iter().map(|s| s[0]).max().unwrap_or(0) as f64;
        return x[0] >= lo - 1e-12 && x[0] <= hi + 1e-12;
    }
    let k = steps.len();
    let a = DMatrix::from_fn(d + 1, k, |r, c| {
        if r < d {
            steps.steps()[c][r] as f64
        } else {
            1.0
        }
    });
    let mut b = DVector::from_element(d + 1, 1.0);
    for i in 0..d {
        b[i] = x[i];
    }
    let w = nnls(&a, &b);
    (a * w - b).norm() <= 1e-9
}

/// Maximizes a concave function on `[lo, hi]` by golden-section search.
fn golden_max(g: &dyn Fn(f64) -> Result<f64>, mut lo: f64, mut hi: f64, tol: f64) -> Result<(f64, f64)> {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let mut g1 = g(x1)?;
    let mut g2 = g(x2)?;
    while hi - lo > tol {
        if g1 < g2 {
            lo = x1;
            x1 = x2;
            g1 = g2;
            x2 = lo + r * (hi - lo);
            g2 = g(x2)?;
        } else {
            hi = x2;
            x2 = x1;
            g2 = g1;
            x1 = hi - r * (hi - lo);
            g1 = g(x1)?;
        }
    }
    let u = 0.5 * (lo + hi);
    Ok((u, g(u)?.max(g1).max(g2)))
}

/// `sup_u <u, x> - c(u)` for one `x`.
fn legendre_point(
    c: &dyn Fn(&[f64]) -> Result<f64>,
    x: &[f64],
    opts: &RateOptions,
) -> Result<f64> {
    let d = x.len();
    let objective = |u: &[f64]| -> Result<f64> {
        Ok(u.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - c(u)?)
    };
    let mut lo = vec![opts.window.min; d];
    let mut hi = vec![opts.window.max; d];
    let points = opts.window.points.max(3);
    let mut previous_edge: Option<f64> = None;
    for _ in 0..=opts.max_doublings {
        let axes: Vec<Vec<f64>> = (0..d).map(|i| linspace(lo[i], hi[i], points)).collect();
        // Grid sup over the tensor grid.
        let mut best = f64::NEG_INFINITY;
        let mut best_idx = vec![0usize; d];
        let mut idx = vec![0usize; d];
        loop {
            let u: Vec<f64> = (0..d).map(|i| axes[i][idx[i]]).collect();
            let v = objective(&u)?;
            if v > best {
                best = v;
                best_idx = idx.clone();
            }
            let mut k = d;
            while k > 0 {
                k -= 1;
                idx[k] += 1;
                if idx[k] < points {
                    break;
                }
                idx[k] = 0;
                if k == 0 {
                    k = usize::MAX;
                    break;
                }
            }
            if k == usize::MAX || d == 0 {
                break;
            }
        }
        let on_edge: Vec<Option<bool>> = best_idx
            .iter()
            .map(|&k| {
                if k == 0 {
                    Some(false)
                } else if k == points - 1 {
                    Some(true)
                } else {
                    None
                }
            })
            .collect();
        if on_edge.iter().all(Option::is_none) {
            // Interior maximizer: refine by coordinate ascent.
            let mut u: Vec<f64> = (0..d).map(|i| axes[i][best_idx[i]]).collect();
            let mut value = best;
            for _ in 0..200 {
                let before = value;
                for i in 0..d {
                    let h = axes[i][1] - axes[i][0];
                    let base = u.clone();
                    let line = |t: f64| -> Result<f64> {
                        let mut v = base.clone();
                        v[i] = t;
                        objective(&v)
                    };
                    let (t, val) = golden_max(&line, u[i] - h, u[i] + h, opts.u_tol)?;
                    if val >= value {
                        u[i] = t;
                        value = val;
                    }
                }
                if value - before <= 1e-13 || d == 1 {
                    break;
                }
            }
            return Ok(value.max(best));
        }
        if best > opts.cap {
            return Ok(f64::INFINITY);
        }
        if let Some(p) = previous_edge {
            if (best - p).abs() < 1e-9 {
                return Ok(best);
            }
        }
        previous_edge = Some(best);
        for i in 0..d {
            let width = hi[i] - lo[i];
            match on_edge[i] {
                Some(true) => hi[i] += width,
                Some(false) => lo[i] -= width,
                None => {}
            }
        }
    }
    Err(Error::Window { x: x.to_vec() })
}

/// Legendre transform of `log lambda_u` on a grid of `x` values.
pub fn rate_function(
    model: &KrausModel,
    x_grid: &[Vec<f64>],
    opts: &RateOptions,
    tol: &Tolerances,
) -> Result<RateFunctionTable> {
    let d = model.lattice_dim();
    for x in x_grid {
        if x.len() != d {
            return Err(Error::Dimension(format!(
                "x has length {}, lattice dimension is {d}",
                x.len()
            )));
        }
    }
    let u_grid = opts.window.grid(d);
    let curve = lambda_curve(model, &u_grid, tol)?;
    let c = |u: &[f64]| log_lambda(model, u);
    let mut rate = Vec::with_capacity(x_grid.len());
    for x in x_grid {
        if !in_step_hull(model.step_set(), x) {
            rate.push(f64::INFINITY);
            continue;
        }
        rate.push(legendre_point(&c, x, opts)?.max(0.0));
    }
    Ok(RateFunctionTable {
        log_lambda: curve.points.iter().map(|p| p.log_lambda).collect(),
        u_grid,
        x_grid: x_grid.to_vec(),
        rate,
        kinks: curve.kinks,
        upper_bound_only: curve.reducible,
        restricted_log_lambda: curve.restricted,
    })
}

/// `I(x)` for a single point.
pub fn rate_at(model: &KrausModel, x: &[f64], opts: &RateOptions) -> Result<f64> {
    if !in_step_hull(model.step_set(), x) {
        return Ok(f64::INFINITY);
    }
    let c = |u: &[f64]| log_lambda(model, u);
    Ok(legendre_point(&c, x, opts)?.max(0.0))
}
