//! Homogeneous open quantum random walk models on `Z^d`.
//!
//! A model is a finite step set together with one `n x n` transition
//! operator per step. Stochasticity means `sum_s L_s^* L_s = Id`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    ensure_finite, hermitian_eigen, re, trace, CMatrix, CVector, Tolerances, C64,
};

/// Lattice displacements `S`, a finite subset of `Z^d`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepSet {
    lattice_dim: usize,
    steps: Vec<Vec<i64>>,
}

impl StepSet {
    pub fn new(lattice_dim: usize, steps: Vec<Vec<i64>>) -> Result<Self> {
        if lattice_dim == 0 {
            return Err(Error::Schema("lattice dimension must be positive".into()));
        }
        if steps.is_empty() {
            return Err(Error::Schema("step set is empty".into()));
        }
        let mut seen = HashSet::new();
        for (k, s) in steps.iter().enumerate() {
            if s.len() != lattice_dim {
                return Err(Error::Schema(format!(
                    "step {k} has {} coordinates, lattice dimension is {lattice_dim}",
                    s.len()
                )));
            }
            if !seen.insert(s.clone()) {
                return Err(Error::Schema(format!("duplicate displacement {s:?}")));
            }
        }
        if steps.iter().all(|s| s.iter().all(|&x| x == 0)) {
            return Err(Error::Schema(
                "step set must contain a nonzero displacement".into(),
            ));
        }
        Ok(Self { lattice_dim, steps })
    }

    /// `{+1, -1}` on `Z`, in that order.
    pub fn plus_minus() -> Self {
        Self::new(1, vec![vec![1], vec![-1]]).expect("valid step set")
    }

    /// `{+e_1, -e_1, ..., +e_d, -e_d}`.
    pub fn nearest_neighbour(lattice_dim: usize) -> Self {
        let mut steps = Vec::with_capacity(2 * lattice_dim);
        for i in 0..lattice_dim {
            for sign in [1, -1] {
                let mut s = vec![0; lattice_dim];
                s[i] = sign;
                steps.push(s);
            }
        }
        Self::new(lattice_dim, steps).expect("valid step set")
    }

    pub fn lattice_dim(&self) -> usize {
        self.lattice_dim
    }

    pub fn steps(&self) -> &[Vec<i64>] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `<u, s>` for step `k`.
    pub fn pairing(&self, k: usize, u: &[f64]) -> f64 {
        self.steps[k].iter().zip(u).map(|(&s, &x)| s as f64 * x).sum()
    }
}

/// Transition operators `L_s`, one per step.
#[derive(Debug, Clone, PartialEq)]
pub struct KrausModel {
    step_set: StepSet,
    operators: Vec<CMatrix>,
    internal_dim: usize,
}

impl KrausModel {
    /// Checks shapes only; stochasticity is checked by [`validate`].
    pub fn new(step_set: StepSet, operators: Vec<CMatrix>) -> Result<Self> {
        if operators.len() != step_set.len() {
            return Err(Error::Schema(format!(
                "{} operators for {} steps",
                operators.len(),
                step_set.len()
            )));
        }
        let n = operators[0].nrows();
        if n == 0 {
            return Err(Error::Schema("internal dimension must be positive".into()));
        }
        for (k, l) in operators.iter().enumerate() {
            if l.nrows() != n || l.ncols() != n {
                return Err(Error::Schema(format!(
                    "operator for step {:?} is {}x{}, expected {n}x{n}",
                    step_set.steps[k],
                    l.nrows(),
                    l.ncols()
                )));
            }
            ensure_finite(l, &format!("operator for step {:?}", step_set.steps[k]))?;
        }
        Ok(Self {
            step_set,
            operators,
            internal_dim: n,
        })
    }

    /// Builds the model and rejects it unless stochasticity holds.
    pub fn validated(step_set: StepSet, operators: Vec<CMatrix>, tol: &Tolerances) -> Result<Self> {
        let model = Self::new(step_set, operators)?;
        let report = validate(&model, tol);
        if report.residual > tol.stochasticity {
            return Err(Error::Validation {
                residual: report.residual,
                tolerance: tol.stochasticity,
            });
        }
        Ok(model)
    }

    pub fn step_set(&self) -> &StepSet {
        &self.step_set
    }

    pub fn steps(&self) -> &[Vec<i64>] {
        self.step_set.steps()
    }

    pub fn operators(&self) -> &[CMatrix] {
        &self.operators
    }

    pub fn internal_dim(&self) -> usize {
        self.internal_dim
    }

    pub fn lattice_dim(&self) -> usize {
        self.step_set.lattice_dim
    }

    pub fn num_steps(&self) -> usize {
        self.operators.len()
    }

    /// Operator attached to the displacement `s`, if any.
    pub fn operator_for(&self, s: &[i64]) -> Option<&CMatrix> {
        self.steps()
            .iter()
            .position(|x| x.as_slice() == s)
            .map(|k| &self.operators[k])
    }

    /// `Tr(L_s rho L_s^*)` for every step, in step order.
    pub fn step_probabilities(&self, rho: &CMatrix) -> Vec<f64> {
        self.operators
            .iter()
            .map(|l| trace(&(l * rho * l.adjoint())).re)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidationReport {
    pub residual: f64,
    pub h1_holds: bool,
    pub h2_holds: bool,
}

impl ValidationReport {
    pub fn stochastic(&self, tol: &Tolerances) -> bool {
        self.residual <= tol.stochasticity
    }
}

/// Stochasticity residual `|sum L*L - Id|_F` and the two non-degeneracy
/// assumptions: the ranges of the `L_s` span the internal space (H1), and
/// not every `L_s` is a multiple of the identity (H2).
pub fn validate(model: &KrausModel, tol: &Tolerances) -> ValidationReport {
    let n = model.internal_dim;
    let mut sum = CMatrix::zeros(n, n);
    for l in &model.operators {
        sum += l.adjoint() * l;
    }
    let residual = (sum - CMatrix::identity(n, n)).norm();

    let joint = CMatrix::from_fn(n, n * model.num_steps(), |i, j| {
        model.operators[j / n][(i, j % n)]
    });
    let sv = joint.singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let rank = sv.iter().filter(|&&x| x > tol.rank * smax.max(1.0)).count();
    let h1_holds = rank == n;

    let h2_holds = model.operators.iter().any(|l| {
        let scalar = trace(l) / re(n as f64);
        (l - CMatrix::identity(n, n).map(|z| z * scalar)).norm() > tol.stochasticity
    });
    ValidationReport {
        residual,
        h1_holds,
        h2_holds,
    }
}

/// A state of the internal system: Hermitian, positive, unit trace.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(CMatrix);

impl DensityMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n || n == 0 {
            return Err(Error::InvalidState("density matrix must be square".into()));
        }
        ensure_finite(&m, "density matrix")?;
        let herm = (&m - m.adjoint()).norm();
        if herm > 1e-12 {
            return Err(Error::InvalidState(format!(
                "not Hermitian (deviation {herm:.3e})"
            )));
        }
        let (values, _) = hermitian_eigen(&m);
        if values[0] < -1e-10 {
            return Err(Error::InvalidState(format!(
                "not positive (eigenvalue {:.3e})",
                values[0]
            )));
        }
        let tr = trace(&m);
        if (tr - re(1.0)).norm() > 1e-10 {
            return Err(Error::InvalidState(format!("trace is {tr}, expected 1")));
        }
        Ok(Self(m))
    }

    /// Wraps a matrix the caller has already made Hermitian, positive and
    /// unit-trace.
    pub(crate) fn from_matrix_unchecked(m: CMatrix) -> Self {
        Self(m)
    }

    pub fn maximally_mixed(n: usize) -> Self {
        Self(CMatrix::identity(n, n).unscale(n as f64))
    }

    /// `|e_k><e_k|`.
    pub fn basis_projector(n: usize, k: usize) -> Self {
        let mut m = CMatrix::zeros(n, n);
        m[(k, k)] = re(1.0);
        Self(m)
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }
}

/// Finitely supported lattice state `sum_i rho(i) (x) |i><i|`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LatticeState {
    sites: BTreeMap<Vec<i64>, CMatrix>,
}

impl LatticeState {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a state and checks positivity and total trace one.
    pub fn new(sites: BTreeMap<Vec<i64>, CMatrix>) -> Result<Self> {
        let state = Self { sites };
        state.check()?;
        Ok(state)
    }

    /// Blocks without the normalization check (used for intermediate maps).
    pub fn from_blocks(sites: BTreeMap<Vec<i64>, CMatrix>) -> Self {
        Self { sites }
    }

    /// `rho (x) |position><position|`.
    pub fn localized(position: Vec<i64>, rho: &DensityMatrix) -> Self {
        let mut sites = BTreeMap::new();
        sites.insert(position, rho.matrix().clone());
        Self { sites }
    }

    fn check(&self) -> Result<()> {
        let mut dim = None;
        let mut total = 0.0;
        for (pos, block) in &self.sites {
            if block.nrows() != block.ncols() {
                return Err(Error::InvalidState(format!("block at {pos:?} is not square")));
            }
            if *dim.get_or_insert(block.nrows()) != block.nrows() {
                return Err(Error::InvalidState(format!(
                    "block at {pos:?} has a different dimension"
                )));
            }
            ensure_finite(block, &format!("block at {pos:?}"))?;
            let herm = (block - block.adjoint()).norm();
            if herm > 1e-10 {
                return Err(Error::InvalidState(format!("block at {pos:?} is not Hermitian")));
            }
            let (values, _) = hermitian_eigen(block);
            if values[0] < -1e-10 {
                return Err(Error::InvalidState(format!(
                    "block at {pos:?} has eigenvalue {:.3e}",
                    values[0]
                )));
            }
            total += trace(block).re;
        }
        if (total - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidState(format!("total trace is {total}, expected 1")));
        }
        Ok(())
    }

    pub fn sites(&self) -> &BTreeMap<Vec<i64>, CMatrix> {
        &self.sites
    }

    pub fn block(&self, position: &[i64]) -> Option<&CMatrix> {
        self.sites.get(position)
    }

    pub fn total_trace(&self) -> f64 {
        self.sites.values().map(|b| trace(b).re).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn internal_dim(&self) -> Option<usize> {
        self.sites.values().next().map(|b| b.nrows())
    }

    /// Probability mass `Tr rho(i)` per site.
    pub fn masses(&self) -> BTreeMap<Vec<i64>, f64> {
        self.sites
            .iter()
            .map(|(k, b)| (k.clone(), trace(b).re))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// JSON documents
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ComplexEntry {
    pub re: f64,
    pub im: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepDocument {
    pub displacement: Vec<i64>,
    pub matrix: Vec<Vec<ComplexEntry>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDocument {
    pub lattice_dim: usize,
    pub internal_dim: usize,
    pub steps: Vec<StepDocument>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SiteDocument {
    pub position: Vec<i64>,
    pub block: Vec<Vec<ComplexEntry>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InitialStateDocument {
    pub sites: Vec<SiteDocument>,
}

fn matrix_from_rows(rows: &[Vec<ComplexEntry>], n: usize, what: &str) -> Result<CMatrix> {
    if rows.len() != n {
        return Err(Error::Schema(format!(
            "{what}: matrix has {} rows, expected {n}",
            rows.len()
        )));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n {
            return Err(Error::Schema(format!(
                "{what}: row {i} has {} entries, expected {n}",
                row.len()
            )));
        }
    }
    Ok(CMatrix::from_fn(n, n, |i, j| {
        C64::new(rows[i][j].re, rows[i][j].im)
    }))
}

pub(crate) fn rows_from_matrix(m: &CMatrix) -> Vec<Vec<ComplexEntry>> {
    (0..m.nrows())
        .map(|i| {
            (0..m.ncols())
                .map(|j| ComplexEntry {
                    re: m[(i, j)].re,
                    im: m[(i, j)].im,
                })
                .collect()
        })
        .collect()
}

/// Serde adapters writing matrices as rows of `{re, im}` entries.
pub mod matrix_serde {
    use serde::ser::{SerializeSeq, Serializer};

    use super::rows_from_matrix;
    use crate::numerics::CMatrix;

    pub fn serialize<S: Serializer>(m: &CMatrix, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(rows_from_matrix(m))
    }

    pub fn option<S: Serializer>(m: &Option<CMatrix>, s: S) -> Result<S::Ok, S::Error> {
        match m {
            Some(m) => s.serialize_some(&rows_from_matrix(m)),
            None => s.serialize_none(),
        }
    }

    pub fn list<S: Serializer>(ms: &[CMatrix], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(ms.len()))?;
        for m in ms {
            seq.serialize_element(&rows_from_matrix(m))?;
        }
        seq.end()
    }

    pub fn option_list<S: Serializer>(ms: &Option<Vec<CMatrix>>, s: S) -> Result<S::Ok, S::Error> {
        match ms {
            Some(ms) => s.serialize_some(
                &ms.iter().map(rows_from_matrix).collect::<Vec<_>>(),
            ),
            None => s.serialize_none(),
        }
    }
}

impl ModelDocument {
    pub fn from_model(model: &KrausModel) -> Self {
        Self {
            lattice_dim: model.lattice_dim(),
            internal_dim: model.internal_dim(),
            steps: model
                .steps()
                .iter()
                .zip(model.operators())
                .map(|(s, l)| StepDocument {
                    displacement: s.clone(),
                    matrix: rows_from_matrix(l),
                })
                .collect(),
        }
    }

    /// Schema checks only; no stochasticity check.
    pub fn into_model(self) -> Result<KrausModel> {
        let n = self.internal_dim;
        if n == 0 {
            return Err(Error::Schema("internal_dim must be positive".into()));
        }
        let mut steps = Vec::with_capacity(self.steps.len());
        let mut ops = Vec::with_capacity(self.steps.len());
        for (k, step) in self.steps.iter().enumerate() {
            let what = format!("step {k} (displacement {:?})", step.displacement);
            ops.push(matrix_from_rows(&step.matrix, n, &what)?);
            steps.push(step.displacement.clone());
        }
        KrausModel::new(StepSet::new(self.lattice_dim, steps)?, ops)
    }
}

pub fn model_to_json(model: &KrausModel) -> String {
    serde_json::to_string_pretty(&ModelDocument::from_model(model)).expect("serializable")
}

fn parse_error(e: serde_json::Error) -> Error {
    Error::Parse(format!("line {}, column {}: {e}", e.line(), e.column()))
}

/// Parses and validates a model document. Validation failures abort the
/// load and report the stochasticity residual.
pub fn load_model(text: &str, tol: &Tolerances) -> Result<KrausModel> {
    let doc: ModelDocument = serde_json::from_str(text).map_err(parse_error)?;
    let model = doc.into_model()?;
    let report = validate(&model, tol);
    if report.residual > tol.stochasticity {
        return Err(Error::Validation {
            residual: report.residual,
            tolerance: tol.stochasticity,
        });
    }
    Ok(model)
}

pub fn load_model_file(path: impl AsRef<Path>, tol: &Tolerances) -> Result<KrausModel> {
    load_model(&std::fs::read_to_string(path)?, tol)
}

pub fn parse_initial_state(text: &str) -> Result<LatticeState> {
    let doc: InitialStateDocument = serde_json::from_str(text).map_err(parse_error)?;
    let mut sites = BTreeMap::new();
    for (k, site) in doc.sites.iter().enumerate() {
        let n = site.block.len();
        let block = matrix_from_rows(&site.block, n, &format!("site {k}"))?;
        if sites.insert(site.position.clone(), block).is_some() {
            return Err(Error::Schema(format!("duplicate site {:?}", site.position)));
        }
    }
    LatticeState::new(sites)
}

pub fn initial_state_to_json(state: &LatticeState) -> String {
    let doc = InitialStateDocument {
        sites: state
            .sites()
            .iter()
            .map(|(p, b)| SiteDocument {
                position: p.clone(),
                block: rows_from_matrix(b),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("serializable")
}

// ---------------------------------------------------------------------------
// Built-in models
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Builtin {
    StdExample,
    PeriodicExample,
    BreakdownExample,
    AntidiagExample,
    /// Scalar walk with `L_+ = sqrt(p)`, `L_- = sqrt(1 - p)`.
    ClassicalDilation(f64),
}

pub const BUILTIN_NAMES: &[&str] = &[
    "std_example",
    "periodic_example",
    "breakdown_example",
    "antidiag_example",
    "classical_dilation(p)",
];

impl Builtin {
    pub fn model(&self) -> Result<KrausModel> {
        let s2 = 2f64.sqrt();
        let s3 = 3f64.sqrt();
        let ops = match *self {
            Builtin::StdExample => vec![
                CMatrix::from_row_slice(2, 2, &[re(1.0), re(1.0), re(0.0), re(1.0)]).unscale(s3),
                CMatrix::from_row_slice(2, 2, &[re(1.0), re(0.0), re(-1.0), re(1.0)]).unscale(s3),
            ],
            Builtin::PeriodicExample => vec![
                CMatrix::from_row_slice(2, 2, &[re(0.0), re(s3 / 2.0), re(1.0 / s2), re(0.0)]),
                CMatrix::from_row_slice(2, 2, &[re(0.0), re(0.5), re(1.0 / s2), re(0.0)]),
            ],
            Builtin::BreakdownExample => vec![
                CMatrix::from_row_slice(
                    2,
                    2,
                    &[re(1.0 / s2), re(1.0 / (2.0 * s2)), re(0.0), re(s3 / 2.0)],
                ),
                CMatrix::from_row_slice(
                    2,
                    2,
                    &[re(1.0 / s2), re(-1.0 / (2.0 * s2)), re(0.0), re(0.0)],
                ),
            ],
            Builtin::AntidiagExample => {
                let (ap, bp, am, bm) = (0.6, 0.8, 0.8, 0.6);
                vec![
                    CMatrix::from_row_slice(2, 2, &[re(0.0), re(ap), re(bp), re(0.0)]),
                    CMatrix::from_row_slice(2, 2, &[re(0.0), re(am), re(bm), re(0.0)]),
                ]
            }
            Builtin::ClassicalDilation(p) => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::Schema(format!(
                        "classical_dilation needs p in [0, 1], got {p}"
                    )));
                }
                vec![
                    CMatrix::from_element(1, 1, re(p.sqrt())),
                    CMatrix::from_element(1, 1, re((1.0 - p).sqrt())),
                ]
            }
        };
        KrausModel::new(StepSet::plus_minus(), ops)
    }

    pub fn all_fixed() -> [Builtin; 4] {
        [
            Builtin::StdExample,
            Builtin::PeriodicExample,
            Builtin::BreakdownExample,
            Builtin::AntidiagExample,
        ]
    }
}

impl fmt::Display for Builtin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Builtin::StdExample => write!(f, "std_example"),
            Builtin::PeriodicExample => write!(f, "periodic_example"),
            Builtin::BreakdownExample => write!(f, "breakdown_example"),
            Builtin::AntidiagExample => write!(f, "antidiag_example"),
            Builtin::ClassicalDilation(p) => write!(f, "classical_dilation({p})"),
        }
    }
}

impl FromStr for Builtin {
    type Err = Error;

    fn from_str(name: &str) -> Result<Self> {
        let unknown = || Error::UnknownBuiltin {
            name: name.to_string(),
            valid: BUILTIN_NAMES.join(", "),
        };
        match name.trim() {
            "std_example" => Ok(Builtin::StdExample),
            "periodic_example" => Ok(Builtin::PeriodicExample),
            "breakdown_example" => Ok(Builtin::BreakdownExample),
            "antidiag_example" => Ok(Builtin::AntidiagExample),
            other => {
                let arg = other
                    .strip_prefix("classical_dilation(")
                    .and_then(|rest| rest.strip_suffix(')'))
                    .ok_or_else(unknown)?;
                let p: f64 = arg.trim().parse().map_err(|_| unknown())?;
                Ok(Builtin::ClassicalDilation(p))
            }
        }
    }
}

/// Looks up a built-in model by name, e.g. `std_example` or
/// `classical_dilation(0.3)`.
pub fn builtin(name: &str) -> Result<KrausModel> {
    name.parse::<Builtin>()?.model()
}

/// A random stochastic model obtained by cutting a random isometry
/// `C^n -> C^(n|S|)` into `|S|` blocks.
pub fn random_model(seed: u64, internal_dim: usize, step_set: StepSet) -> KrausModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = step_set.len();
    let n = internal_dim;
    let g = CMatrix::from_fn(n * k, n, |_, _| {
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    let q = g.qr().q();
    let ops = (0..k)
        .map(|b| q.view((b * n, 0), (n, n)).into_owned())
        .collect();
    KrausModel::new(step_set, ops).expect("isometry blocks have matching shapes")
}

/// Structured families of random `C^2` walks with steps `{+1, -1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum C2Family {
    /// Blocks of a random isometry.
    Generic,
    /// Both operators diagonal in the canonical basis.
    Diagonal,
    /// Both operators anti-diagonal in the canonical basis.
    Antidiagonal,
    /// `e_1` is a common eigenvector of both operators.
    SharedEigenvector,
}

impl C2Family {
    pub const ALL: [C2Family; 4] = [
        C2Family::Generic,
        C2Family::Diagonal,
        C2Family::Antidiagonal,
        C2Family::SharedEigenvector,
    ];
}

fn random_unit(rng: &mut ChaCha8Rng, k: usize) -> CVector {
    let v = CVector::from_fn(k, |_, _| {
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    let norm = v.norm();
    v.unscale(norm)
}

/// A random stochastic `C^2` model from one of the structured families.
pub fn random_c2_model(seed: u64, family: C2Family) -> KrausModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = C64::new(0.0, 0.0);
    let ops = match family {
        C2Family::Generic => return random_model(seed, 2, StepSet::plus_minus()),
        C2Family::Diagonal | C2Family::Antidiagonal => {
            // Columns (a_+, a_-) and (b_+, b_-) are unit vectors.
            let a = random_unit(&mut rng, 2);
            let b = random_unit(&mut rng, 2);
            (0..2)
                .map(|s| {
                    if family == C2Family::Diagonal {
                        CMatrix::from_row_slice(2, 2, &[a[s], z, z, b[s]])
                    } else {
                        CMatrix::from_row_slice(2, 2, &[z, b[s], a[s], z])
                    }
                })
                .collect()
        }
        C2Family::SharedEigenvector => {
            // Isometry C^2 -> C^4 whose first column only touches `e_1`.
            let a = random_unit(&mut rng, 2);
            let c1 = CVector::from_vec(vec![a[0], z, a[1], z]);
            let g = random_unit(&mut rng, 4);
            let c2 = &g - &c1 * c1.dotc(&g);
            let norm = c2.norm();
            let c2 = c2.unscale(norm);
            (0..2)
                .map(|s| {
                    CMatrix::from_row_slice(
                        2,
                        2,
                        &[c1[2 * s], c2[2 * s], c1[2 * s + 1], c2[2 * s + 1]],
                    )
                })
                .collect()
        }
    };
    KrausModel::new(StepSet::plus_minus(), ops).expect("2x2 blocks")
}

/// `X X^T / Tr(X X^T)` with `X` having i.i.d. uniform `[0, 1]` entries.
pub fn random_initial_density(seed: u64, n: usize) -> DensityMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::<f64>::from_fn(n, n, |_, _| rng.random::<f64>());
    let xx = &x * x.transpose();
    let t = xx.trace();
    let m = xx.map(|v| re(v / t));
    DensityMatrix(crate::numerics::hermitian_part(&m))
}
