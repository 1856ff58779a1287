//! Seeded quantum-trajectory simulation, the exact path-sum oracle and
//! empirical CLT statistics.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::numerics::{trace, CMatrix, C64};
use crate::superops::{apply_m, deform};
use crate::walkmodel::{matrix_serde, DensityMatrix, KrausModel, LatticeState};

/// The 64-bit avalanche finalizer used to derive per-trajectory seeds.
pub fn mix64(mut x: u64) -> u64 {
    x ^= x >> 33;
    x = x.wrapping_mul(0xff51_afd7_ed55_8ccd);
    x ^= x >> 33;
    x = x.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    x ^= x >> 33;
    x
}

/// Seed of trajectory `index` in a batch.
pub fn trajectory_seed(seed: u64, index: u64) -> u64 {
    mix64(seed ^ index)
}

/// Step probabilities may deviate from 1 by this much before it is an error.
pub const PROBABILITY_DRIFT: f64 = 1e-9;
/// The conditional state is renormalized every this many steps.
pub const RENORMALIZE_EVERY: usize = 64;
/// Trace drift tolerated at a renormalization.
pub const TRACE_DRIFT: f64 = 1e-8;
/// All step probabilities below this means the trajectory is trapped.
const TRAP: f64 = 1e-15;

#[derive(Debug, Clone, Serialize)]
pub struct TrajectorySample {
    pub positions: Vec<Vec<i64>>,
    #[serde(serialize_with = "serialize_states")]
    pub states: Vec<DensityMatrix>,
    pub steps: Vec<usize>,
    pub seed: u64,
}

fn serialize_states<S: serde::Serializer>(
    states: &[DensityMatrix],
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    let ms: Vec<CMatrix> = states.iter().map(|r| r.matrix().clone()).collect();
    matrix_serde::list(&ms, s)
}

/// Allocation-free stepping kernel on row-major buffers.
struct Stepper {
    n: usize,
    ops: Vec<Vec<C64>>,
    /// `L_s^* L_s`, so that `Tr(L_s rho L_s^*) = Tr(rho L_s^* L_s)`.
    grams: Vec<Vec<C64>>,
    rho: Vec<C64>,
    tmp: Vec<C64>,
    next: Vec<C64>,
    probs: Vec<f64>,
}

fn row_major(m: &CMatrix) -> Vec<C64> {
    let n = m.nrows();
    (0..n * n).map(|k| m[(k / n, k % n)]).collect()
}

impl Stepper {
    fn new(model: &KrausModel) -> Self {
        let n = model.internal_dim();
        Self {
            n,
            ops: model.operators().iter().map(row_major).collect(),
            grams: model
                .operators()
                .iter()
                .map(|l| row_major(&(l.adjoint() * l)))
                .collect(),
            rho: vec![C64::new(0.0, 0.0); n * n],
            tmp: vec![C64::new(0.0, 0.0); n * n],
            next: vec![C64::new(0.0, 0.0); n * n],
            probs: vec![0.0; model.num_steps()],
        }
    }

    fn load(&mut self, rho: &CMatrix) {
        self.rho = row_major(rho);
    }

    fn state(&self) -> CMatrix {
        CMatrix::from_row_slice(self.n, self.n, &self.rho)
    }

    fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.rho[i * self.n + i].re).sum()
    }

    /// Fills `probs` and returns their sum.
    fn probabilities(&mut self) -> f64 {
        let n = self.n;
        let mut total = 0.0;
        for (g, p) in self.grams.iter().zip(self.probs.iter_mut()) {
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..n {
                    acc += (self.rho[i * n + j] * g[j * n + i]).re;
                }
            }
            *p = acc.max(0.0);
            total += *p;
        }
        total
    }

    /// `rho <- L_s rho L_s^* / p`.
    fn update(&mut self, s: usize, p: f64) {
        let n = self.n;
        let l = &self.ops[s];
        for i in 0..n {
            for j in 0..n {
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..n {
                    acc += l[i * n + k] * self.rho[k * n + j];
                }
                self.tmp[i * n + j] = acc;
            }
        }
        let scale = 1.0 / p;
        for i in 0..n {
            for j in 0..n {
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..n {
                    acc += self.tmp[i * n + k] * l[j * n + k].conj();
                }
                self.next[i * n + j] = acc * scale;
            }
        }
        std::mem::swap(&mut self.rho, &mut self.next);
    }

    /// Checks the trace drift, then restores unit trace and Hermiticity.
    fn renormalize(&mut self) -> Result<()> {
        let n = self.n;
        let t = self.trace();
        if (t - 1.0).abs() > TRACE_DRIFT {
            return Err(Error::NumericalDrift { sum: t });
        }
        for i in 0..n {
            for j in i..n {
                let h = (self.rho[i * n + j] + self.rho[j * n + i].conj()) * (0.5 / t);
                self.rho[i * n + j] = h;
                self.rho[j * n + i] = h.conj();
            }
        }
        Ok(())
    }

    /// One measured step: returns the chosen step index.
    fn step(&mut self, rng: &mut ChaCha8Rng) -> Result<usize> {
        let total = self.probabilities();
        if self.probs.iter().all(|&p| p <= TRAP) {
            return Err(Error::Degeneracy(
                "all step probabilities vanish".to_string(),
            ));
        }
        if (total - 1.0).abs() > PROBABILITY_DRIFT {
            return Err(Error::NumericalDrift { sum: total });
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = None;
        for (k, &p) in self.probs.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            acc += p;
            chosen = Some(k);
            if target < acc {
                break;
            }
        }
        let s = chosen.expect("some step has positive probability");
        self.update(s, self.probs[s]);
        Ok(s)
    }
}

/// Draws the starting site with probability `Tr rho(i)`.
fn draw_start(initial: &LatticeState, rng: &mut ChaCha8Rng) -> Result<(Vec<i64>, CMatrix)> {
    let total = initial.total_trace();
    if initial.is_empty() || total <= 0.0 {
        return Err(Error::InvalidState("initial state has no mass".to_string()));
    }
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = None;
    for (pos, block) in initial.sites() {
        let t = trace(block).re;
        if t <= 0.0 {
            continue;
        }
        acc += t;
        last = Some((pos, block, t));
        if target < acc {
            break;
        }
    }
    let (pos, block, t) = last.expect("positive total mass");
    Ok((pos.clone(), block.unscale(t)))
}

fn check_inputs(model: &KrausModel, initial: &LatticeState) -> Result<()> {
    if let Some(n) = initial.internal_dim() {
        if n != model.internal_dim() {
            return Err(Error::Dimension(format!(
                "initial blocks are {n}x{n}, model acts on dimension {}",
                model.internal_dim()
            )));
        }
    }
    for pos in initial.sites().keys() {
        if pos.len() != model.lattice_dim() {
            return Err(Error::Dimension(format!(
                "site {pos:?} does not match lattice dimension {}",
                model.lattice_dim()
            )));
        }
    }
    Ok(())
}

/// Simulates `(X_p, rho_p)` for `p = 0..=horizon` from a seed.
pub fn sample_trajectory(
    model: &KrausModel,
    initial: &LatticeState,
    horizon: usize,
    seed: u64,
) -> Result<TrajectorySample> {
    check_inputs(model, initial)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut pos, rho0) = draw_start(initial, &mut rng)?;
    let mut stepper = Stepper::new(model);
    stepper.load(&rho0);
    let mut positions = vec![pos.clone()];
    let mut states = vec![DensityMatrix::from_matrix_unchecked(rho0)];
    let mut steps = Vec::with_capacity(horizon);
    for p in 1..=horizon {
        let s = stepper.step(&mut rng)?;
        if p % RENORMALIZE_EVERY == 0 {
            stepper.renormalize()?;
        }
        for (x, ds) in pos.iter_mut().zip(&model.steps()[s]) {
            *x += ds;
        }
        positions.push(pos.clone());
        states.push(DensityMatrix::from_matrix_unchecked(stepper.state()));
        steps.push(s);
    }
    Ok(TrajectorySample {
        positions,
        states,
        steps,
        seed,
    })
}

/// Start and end positions of a trajectory, without recording states.
fn endpoints(
    model: &KrausModel,
    initial: &LatticeState,
    horizon: usize,
    seed: u64,
) -> Result<(Vec<i64>, Vec<i64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (start, rho0) = draw_start(initial, &mut rng)?;
    let mut stepper = Stepper::new(model);
    stepper.load(&rho0);
    let mut pos = start.clone();
    for p in 1..=horizon {
        let s = stepper.step(&mut rng)?;
        if p % RENORMALIZE_EVERY == 0 {
            stepper.renormalize()?;
        }
        for (x, ds) in pos.iter_mut().zip(&model.steps()[s]) {
            *x += ds;
        }
    }
    Ok((start, pos))
}

// ---------------------------------------------------------------------------
// Exact oracle
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct SiteMass {
    pub probability: f64,
    #[serde(serialize_with = "matrix_serde::serialize")]
    pub block: CMatrix,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExactDistribution {
    pub horizon: usize,
    pub masses: BTreeMap<Vec<i64>, SiteMass>,
}

impl ExactDistribution {
    pub fn probability(&self, position: &[i64]) -> f64 {
        self.masses.get(position).map_or(0.0, |m| m.probability)
    }

    /// Total variation distance to another distribution.
    pub fn total_variation(&self, other: &ExactDistribution) -> f64 {
        let mut keys: Vec<&Vec<i64>> = self.masses.keys().collect();
        keys.extend(other.masses.keys());
        keys.sort();
        keys.dedup();
        0.5 * keys
            .into_iter()
            .map(|k| (self.probability(k) - other.probability(k)).abs())
            .sum::<f64>()
    }

    fn from_blocks(horizon: usize, blocks: BTreeMap<Vec<i64>, CMatrix>) -> Self {
        let masses = blocks
            .into_iter()
            .map(|(k, block)| {
                let probability = trace(&block).re;
                (k, SiteMass { probability, block })
            })
            .collect();
        Self { horizon, masses }
    }
}

/// Default oracle cap for two-step walks.
pub const TWO_STEP_CAP: usize = 14;
/// Largest number of step sequences enumerated for other step sets.
pub const PATH_CAP: u64 = 1 << 20;

pub fn check_cap(model: &KrausModel, p: usize) -> Result<()> {
    let k = model.num_steps() as u64;
    let ok = if k == 2 {
        p <= TWO_STEP_CAP
    } else {
        k.checked_pow(p as u32).is_some_and(|c| c <= PATH_CAP)
    };
    if ok {
        Ok(())
    } else {
        Err(Error::CapExceeded(format!(
            "{k}^{p} step sequences exceed the enumeration cap"
        )))
    }
}

/// Depth-first enumeration of all step sequences of length `p`, calling
/// `leaf(displacement, block)` on every complete path.
fn enumerate_paths(
    model: &KrausModel,
    rho: &CMatrix,
    p: usize,
    leaf: &mut dyn FnMut(&[i64], &CMatrix),
) {
    fn go(
        model: &KrausModel,
        block: &CMatrix,
        disp: &mut Vec<i64>,
        depth: usize,
        leaf: &mut dyn FnMut(&[i64], &CMatrix),
    ) {
        if depth == 0 {
            leaf(disp, block);
            return;
        }
        for (s, l) in model.steps().iter().zip(model.operators()) {
            let next = l * block * l.adjoint();
            for (x, ds) in disp.iter_mut().zip(s) {
                *x += ds;
            }
            go(model, &next, disp, depth - 1, leaf);
            for (x, ds) in disp.iter_mut().zip(s) {
                *x -= ds;
            }
        }
    }
    let mut disp = vec![0; model.lattice_dim()];
    go(model, rho, &mut disp, p, leaf);
}

/// `M^p(initial)` by explicit enumeration of all step sequences.
pub fn exact_distribution_paths(
    model: &KrausModel,
    initial: &LatticeState,
    p: usize,
) -> Result<ExactDistribution> {
    check_inputs(model, initial)?;
    check_cap(model, p)?;
    let mut blocks: BTreeMap<Vec<i64>, CMatrix> = BTreeMap::new();
    for (start, rho) in initial.sites() {
        enumerate_paths(model, rho, p, &mut |disp, block| {
            let pos: Vec<i64> = start.iter().zip(disp).map(|(a, b)| a + b).collect();
            *blocks
                .entry(pos)
                .or_insert_with(|| CMatrix::zeros(rho.nrows(), rho.ncols())) += block;
        });
    }
    Ok(ExactDistribution::from_blocks(p, blocks))
}

/// `M^p(initial)` by iterating the lattice map.
pub fn exact_distribution_iterated(
    model: &KrausModel,
    initial: &LatticeState,
    p: usize,
) -> Result<ExactDistribution> {
    check_inputs(model, initial)?;
    let mut state = initial.clone();
    for _ in 0..p {
        state = apply_m(model, &state)?;
    }
    Ok(ExactDistribution::from_blocks(p, state.sites().clone()))
}

/// Agreement bound between the two oracle implementations.
pub const ORACLE_AGREEMENT: f64 = 1e-10;

/// Exact law of `X_p`, computed by path enumeration and checked against
/// the iterated lattice map.
pub fn exact_distribution(
    model: &KrausModel,
    initial: &LatticeState,
    p: usize,
) -> Result<ExactDistribution> {
    let paths = exact_distribution_paths(model, initial, p)?;
    let iterated = exact_distribution_iterated(model, initial, p)?;
    let tv = paths.total_variation(&iterated);
    if tv > ORACLE_AGREEMENT {
        return Err(Error::SolveResidual {
            residual: tv,
            bound: ORACLE_AGREEMENT,
        });
    }
    Ok(paths)
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct MgfCheck {
    pub path_sum: f64,
    pub superop_value: f64,
}

impl MgfCheck {
    pub fn relative_error(&self) -> f64 {
        (self.path_sum - self.superop_value).abs() / self.superop_value.abs().max(f64::MIN_POSITIVE)
    }
}

/// Both sides of `E exp<u, X_p - X_0> = sum_i Tr(L_u^p(rho(i)))`.
pub fn mgf_check(
    model: &KrausModel,
    initial: &LatticeState,
    p: usize,
    u: &[f64],
) -> Result<MgfCheck> {
    check_inputs(model, initial)?;
    check_cap(model, p)?;
    if u.len() != model.lattice_dim() {
        return Err(Error::Dimension(format!(
            "u has length {}, lattice dimension is {}",
            u.len(),
            model.lattice_dim()
        )));
    }
    let mut path_sum = 0.0;
    let mut total = CMatrix::zeros(model.internal_dim(), model.internal_dim());
    for rho in initial.sites().values() {
        total += rho;
        enumerate_paths(model, rho, p, &mut |disp, block| {
            let pairing: f64 = disp.iter().zip(u).map(|(&x, y)| x as f64 * y).sum();
            path_sum += trace(block).re * pairing.exp();
        });
    }
    let lu = deform(model, u)?;
    for _ in 0..p {
        total = lu.apply(&total);
    }
    Ok(MgfCheck {
        path_sum,
        superop_value: trace(&total).re,
    })
}

// ---------------------------------------------------------------------------
// Batch statistics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct BatchRecord {
    pub index: u64,
    pub seed: u64,
    pub x_final: Vec<i64>,
    pub standardized: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchStatistics {
    pub horizon: usize,
    pub count: usize,
    pub seed: u64,
    /// Sample mean of `(X_P - X_0) / P`.
    pub mean: Vec<f64>,
    /// Sample covariance of `(X_P - X_0) / sqrt(P)`.
    pub variance: Vec<Vec<f64>>,
    /// Sample mean of the standardized samples.
    pub standardized_mean: Vec<f64>,
    /// Kolmogorov-Smirnov distance of the first standardized coordinate
    /// to the standard normal law.
    pub ks_distance: f64,
    #[serde(skip)]
    pub records: Vec<BatchRecord>,
}

/// `C^{-1/2}` on the support of `C`, plus a basis of its kernel.
fn inverse_sqrt(c: &DMatrix<f64>) -> (DMatrix<f64>, Vec<nalgebra::DVector<f64>>) {
    let d = c.nrows();
    let eig = nalgebra::SymmetricEigen::new(c.clone());
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cut = 1e-12 * scale.max(1e-300);
    let mut w = DMatrix::<f64>::zeros(d, d);
    let mut kernel = Vec::new();
    for k in 0..d {
        let v = eig.eigenvectors.column(k).into_owned();
        let lam = eig.eigenvalues[k];
        if lam > cut {
            w += &v * v.transpose() / lam.sqrt();
        } else {
            kernel.push(v);
        }
    }
    (w, kernel)
}

/// Kolmogorov-Smirnov distance of a sample to the standard normal law.
pub fn ks_distance_normal(sample: &[f64]) -> f64 {
    let normal = Normal::standard();
    let mut z = sample.to_vec();
    z.sort_by(f64::total_cmp);
    let n = z.len() as f64;
    z.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal.cdf(x);
            ((i as f64 + 1.0) / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Runs `count` independent trajectories of length `horizon` and
/// standardizes `X_P - X_0 - P m` with the given drift and covariance.
pub fn batch_statistics(
    model: &KrausModel,
    initial: &LatticeState,
    horizon: usize,
    count: usize,
    seed: u64,
    m: &[f64],
    c: &DMatrix<f64>,
) -> Result<BatchStatistics> {
    check_inputs(model, initial)?;
    let d = model.lattice_dim();
    if m.len() != d || c.nrows() != d || c.ncols() != d {
        return Err(Error::Dimension(format!(
            "drift/covariance do not match lattice dimension {d}"
        )));
    }
    if count == 0 {
        return Err(Error::Precondition("batch needs at least one trajectory".to_string()));
    }
    let runs: Vec<(u64, u64, Vec<i64>, Vec<i64>)> = (0..count as u64)
        .into_par_iter()
        .map(|index| {
            let s = trajectory_seed(seed, index);
            endpoints(model, initial, horizon, s).map(|(a, b)| (index, s, a, b))
        })
        .collect::<Result<Vec<_>>>()?;

    let (w, kernel) = inverse_sqrt(c);
    let p = horizon as f64;
    let root = p.sqrt().max(f64::MIN_POSITIVE);
    let nf = count as f64;
    let mut increments = Vec::with_capacity(count);
    let mut records = Vec::with_capacity(count);
    for (index, s, start, end) in runs {
        let inc: Vec<f64> = (0..d).map(|i| (end[i] - start[i]) as f64).collect();
        let y = nalgebra::DVector::from_iterator(d, (0..d).map(|i| inc[i] - p * m[i]));
        for k in &kernel {
            let off = k.dot(&y).abs();
            if horizon > 0 && off / p > 1e-8 {
                return Err(Error::Standardization(format!(
                    "covariance is singular and trajectory {index} moves {off:.3e} along its kernel"
                )));
            }
        }
        let z = &w * y / root;
        increments.push(inc);
        records.push(BatchRecord {
            index,
            seed: s,
            x_final: end,
            standardized: z.iter().copied().collect(),
        });
    }

    let mut mean = vec![0.0; d];
    for inc in &increments {
        for i in 0..d {
            mean[i] += inc[i];
        }
    }
    for v in mean.iter_mut() {
        *v /= nf;
    }
    let mut variance = vec![vec![0.0; d]; d];
    for inc in &increments {
        for i in 0..d {
            for j in 0..d {
                variance[i][j] += (inc[i] - mean[i]) * (inc[j] - mean[j]);
            }
        }
    }
    let denom = (nf - 1.0).max(1.0) * p.max(1.0);
    for row in variance.iter_mut() {
        for v in row.iter_mut() {
            *v /= denom;
        }
    }
    let scale = if horizon > 0 { p } else { 1.0 };
    for v in mean.iter_mut() {
        *v /= scale;
    }
    let mut standardized_mean = vec![0.0; d];
    for r in &records {
        for i in 0..d {
            standardized_mean[i] += r.standardized[i];
        }
    }
    for v in standardized_mean.iter_mut() {
        *v /= nf;
    }
    let first: Vec<f64> = records.iter().map(|r| r.standardized[0]).collect();
    let ks_distance = if d == 0 { 0.0 } else { ks_distance_normal(&first) };
    Ok(BatchStatistics {
        horizon,
        count,
        seed,
        mean,
        variance,
        standardized_mean,
        ks_distance,
        records,
    })
}

/// Batch CSV: `index,seed,x_final...,standardized...`.
pub fn batch_csv(stats: &BatchStatistics) -> String {
    let d = stats.mean.len();
    let mut out = String::from("index,seed");
    for i in 0..d {
        out.push_str(&format!(",x_final_{i}"));
    }
    for i in 0..d {
        out.push_str(&format!(",standardized_{i}"));
    }
    out.push('\n');
    for r in &stats.records {
        out.push_str(&format!("{},{}", r.index, r.seed));
        for x in &r.x_final {
            out.push_str(&format!(",{x}"));
        }
        for z in &r.standardized {
            out.push_str(&format!(",{z:e}"));
        }
        out.push('\n');
    }
    out
}
