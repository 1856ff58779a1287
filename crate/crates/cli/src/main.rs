//! `oqrw`: validate, analyze, compute asymptotics and rate functions,
//! simulate and cross-check open quantum random walks.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use oqrw::asymptotics::{
    c2_parameters, covariance, covariance_ags, drift_finite_difference, linspace,
    rate_function, tensor_grid, RateOptions, RateFunctionTable, UWindow,
};
use oqrw::nalgebra::DMatrix;
use oqrw::structure::analyze;
use oqrw::superops::l_superop;
use oqrw::trajectories::{
    batch_csv, batch_statistics, exact_distribution_iterated, exact_distribution_paths, mgf_check,
    ORACLE_AGREEMENT,
};
use oqrw::walkmodel::{
    parse_initial_state, random_initial_density, validate, ModelDocument, BUILTIN_NAMES,
};
use oqrw::{builtin, DensityMatrix, Error, KrausModel, LatticeState, Tolerances};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "oqrw", version, about = "Homogeneous open quantum random walks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check stochasticity, the non-degeneracy assumptions and complete positivity.
    Validate(Common),
    /// Structural report: irreducibility, period, regularity, decomposition.
    Analyze(Common),
    /// Drift, covariance, the curve log lambda_u and the rate function.
    Asymptotics(Common),
    /// Rate function table only.
    Rate(Common),
    /// Batch trajectory simulation with CLT statistics.
    Simulate(Common),
    /// MGF identity and exact distribution cross-checks.
    OracleCheck(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// Model document (JSON).
    #[arg(long, conflicts_with = "builtin", required_unless_present = "builtin")]
    model: Option<PathBuf>,
    /// Built-in model name.
    #[arg(long)]
    builtin: Option<String>,
    /// Step probability for `--builtin classical_dilation`.
    #[arg(long = "p")]
    dilation_p: Option<f64>,
    /// Initial lattice state document (JSON); default is delta_0 x Id/n.
    #[arg(long, conflicts_with = "random_initial")]
    initial: Option<PathBuf>,
    /// Use delta_0 x XX'/Tr(XX') with X seeded uniformly.
    #[arg(long)]
    random_initial: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for JSON/CSV files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trajectory horizon.
    #[arg(short = 'P', default_value_t = 1000)]
    horizon: usize,
    /// Number of trajectories.
    #[arg(short = 'N', default_value_t = 1000)]
    count: usize,
    /// Oracle horizon.
    #[arg(short = 'p', default_value_t = 6)]
    oracle_p: usize,
    /// Oracle MGF argument, comma separated for d > 1.
    #[arg(short = 'u', value_delimiter = ',', allow_hyphen_values = true)]
    u: Vec<f64>,
    #[arg(long, allow_hyphen_values = true)]
    u_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    u_max: Option<f64>,
    #[arg(long)]
    u_points: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    x_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    x_max: Option<f64>,
    #[arg(long)]
    x_points: Option<usize>,
    #[arg(long)]
    tol_positivity: Option<f64>,
    #[arg(long)]
    tol_residual: Option<f64>,
    #[arg(long)]
    tol_trace: Option<f64>,
    #[arg(long)]
    tol_stochasticity: Option<f64>,
    #[arg(long)]
    tol_rank: Option<f64>,
    #[arg(long)]
    tol_ray: Option<f64>,
    #[arg(long)]
    tol_degeneracy: Option<f64>,
    #[arg(long)]
    tol_peripheral: Option<f64>,
    #[arg(long)]
    tol_faithful: Option<f64>,
}

/// Failures carrying the exit code of the stable contract.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Parse(_) | Error::Schema(_) | Error::UnknownBuiltin { .. } | Error::Io(_) => 2,
            Error::Validation { .. } | Error::NotCompletelyPositive { .. } => 3,
            Error::Indeterminate { .. } | Error::MethodDisagreement { .. } => 4,
            Error::Multiplicity { .. } => 5,
            Error::Standardization(_) | Error::Degeneracy(_) => 6,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            code: 1,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<u8, Failure>;

impl Common {
    fn tolerances(&self) -> Tolerances {
        let mut t = Tolerances::DEFAULT;
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut t.positivity, self.tol_positivity);
        set(&mut t.residual, self.tol_residual);
        set(&mut t.trace, self.tol_trace);
        set(&mut t.stochasticity, self.tol_stochasticity);
        set(&mut t.rank, self.tol_rank);
        set(&mut t.ray, self.tol_ray);
        set(&mut t.degeneracy, self.tol_degeneracy);
        set(&mut t.peripheral, self.tol_peripheral);
        set(&mut t.faithful, self.tol_faithful);
        t
    }

    /// The model without the stochasticity check.
    fn raw_model(&self) -> Result<KrausModel, Error> {
        match (&self.model, &self.builtin) {
            (Some(path), _) => {
                let text = fs::read_to_string(path)?;
                let doc: ModelDocument = serde_json::from_str(&text).map_err(|e| {
                    Error::Parse(format!("line {}, column {}: {e}", e.line(), e.column()))
                })?;
                doc.into_model()
            }
            (None, Some(name)) => {
                let name = match (name.as_str(), self.dilation_p) {
                    ("classical_dilation", Some(p)) => format!("classical_dilation({p})"),
                    ("classical_dilation", None) => {
                        return Err(Error::Schema(
                            "classical_dilation needs --p".to_string(),
                        ))
                    }
                    _ => name.clone(),
                };
                builtin(&name)
            }
            (None, None) => Err(Error::Schema(format!(
                "one of --model or --builtin is required; builtins: {}",
                BUILTIN_NAMES.join(", ")
            ))),
        }
    }

    fn model(&self) -> Result<KrausModel, Error> {
        let model = self.raw_model()?;
        let tol = self.tolerances();
        let report = validate(&model, &tol);
        if !report.stochastic(&tol) {
            return Err(Error::Validation {
                residual: report.residual,
                tolerance: tol.stochasticity,
            });
        }
        Ok(model)
    }

    fn initial(&self, model: &KrausModel) -> Result<LatticeState, Error> {
        let n = model.internal_dim();
        let origin = vec![0; model.lattice_dim()];
        if let Some(path) = &self.initial {
            return parse_initial_state(&fs::read_to_string(path)?);
        }
        let rho = match self.random_initial {
            Some(seed) => random_initial_density(seed, n),
            None => DensityMatrix::maximally_mixed(n),
        };
        Ok(LatticeState::localized(origin, &rho))
    }

    fn window(&self) -> UWindow {
        let d = UWindow::default();
        UWindow {
            min: self.u_min.unwrap_or(d.min),
            max: self.u_max.unwrap_or(d.max),
            points: self.u_points.unwrap_or(d.points),
        }
    }

    /// Default x range is the hull of the first step coordinates.
    fn x_grid(&self, model: &KrausModel) -> Vec<Vec<f64>> {
        let lo = model.steps().iter().map(|s| s[0]).min().unwrap_or(0) as f64;
        let hi = model.steps().iter().map(|s| s[0]).max().unwrap_or(0) as f64;
        let axis = linspace(
            self.x_min.unwrap_or(lo),
            self.x_max.unwrap_or(hi),
            self.x_points.unwrap_or(41),
        );
        tensor_grid(&axis, model.lattice_dim())
    }

    fn emit(&self, name: &str, contents: &str) -> Result<(), Failure> {
        if let Some(dir) = &self.out {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(name), contents)?;
        }
        Ok(())
    }
}

fn pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn cmd_validate(c: &Common) -> CmdResult {
    let model = c.raw_model()?;
    let tol = c.tolerances();
    let report = validate(&model, &tol);
    let choi_min = l_superop(&model).choi_min_eigenvalue(&tol)?;
    let choi_psd = l_superop(&model).is_completely_positive(&tol)?;
    let stochastic = report.stochastic(&tol);
    let out = json!({
        "internal_dim": model.internal_dim(),
        "lattice_dim": model.lattice_dim(),
        "num_steps": model.num_steps(),
        "residual": report.residual,
        "stochastic": stochastic,
        "h1": report.h1_holds,
        "h2": report.h2_holds,
        "choi_psd": choi_psd,
        "choi_min_eigenvalue": choi_min,
    });
    let text = pretty(&out);
    print!("{text}");
    c.emit("validate.json", &text)?;
    // The non-degeneracy assumptions are reported but do not fail validation:
    // scalar walks violate them by construction.
    if stochastic && choi_psd {
        Ok(0)
    } else {
        eprintln!(
            "validation failed: residual {:.3e} (tolerance {:.1e}), choi_psd {}",
            report.residual, tol.stochasticity, choi_psd
        );
        Ok(3)
    }
}

fn cmd_analyze(c: &Common) -> CmdResult {
    let model = c.model()?;
    let report = analyze(&model, &c.tolerances())?;
    let text = pretty(&report);
    print!("{text}");
    c.emit("analysis.json", &text)?;
    Ok(0)
}

/// Drift and covariance: the spectral formulas when the invariant state is
/// unique, otherwise the closed forms for internal dimension 2.
fn theory(
    model: &KrausModel,
    initial: &LatticeState,
    tol: &Tolerances,
) -> Result<(Vec<f64>, DMatrix<f64>, Value), Error> {
    match covariance(model, tol) {
        Ok(stats) => {
            let extra = json!({
                "source": "spectral",
                "eta": stats.eta_basis.iter().map(matrix_json).collect::<Vec<_>>(),
                "rho_inv": matrix_json(&stats.rho_inv),
                "method_residuals": stats.method_residuals,
            });
            Ok((stats.m, stats.c, extra))
        }
        Err(Error::Multiplicity { .. }) if model.internal_dim() == 2 => {
            let p = c2_parameters(model, initial, tol)?;
            let extra = json!({
                "source": "c2_closed_form",
                "situation": p.situation,
                "periodic": p.periodic,
                "mixture_weight": p.mixture_weight,
            });
            Ok((p.m, p.c, extra))
        }
        Err(e) => Err(e),
    }
}

fn matrix_json(m: &oqrw::CMatrix) -> Value {
    let rows: Vec<Vec<[f64; 2]>> = (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect();
    json!(rows)
}

fn curve_csv(table: &RateFunctionTable) -> (String, String) {
    let d = table.x_grid.first().map_or(1, Vec::len);
    let mut lam = (0..d).map(|i| format!("u_{i},")).collect::<String>() + "log_lambda";
    if table.restricted_log_lambda.is_some() {
        lam.push_str(",restricted_log_lambda");
    }
    lam.push('\n');
    for (k, (u, v)) in table.u_grid.iter().zip(&table.log_lambda).enumerate() {
        for x in u {
            lam.push_str(&format!("{x},"));
        }
        lam.push_str(&format!("{v:e}"));
        if let Some(r) = &table.restricted_log_lambda {
            lam.push_str(&format!(",{:e}", r[k]));
        }
        lam.push('\n');
    }
    let mut rate = (0..d).map(|i| format!("x_{i},")).collect::<String>() + "rate\n";
    for (x, v) in table.x_grid.iter().zip(&table.rate) {
        for y in x {
            rate.push_str(&format!("{y},"));
        }
        if v.is_finite() {
            rate.push_str(&format!("{v:e}\n"));
        } else {
            rate.push_str("inf\n");
        }
    }
    (lam, rate)
}

fn rate_table(c: &Common, model: &KrausModel) -> Result<RateFunctionTable, Error> {
    let opts = RateOptions {
        window: c.window(),
        ..RateOptions::default()
    };
    rate_function(model, &c.x_grid(model), &opts, &c.tolerances())
}

fn cmd_asymptotics(c: &Common) -> CmdResult {
    let model = c.model()?;
    let tol = c.tolerances();
    let initial = c.initial(&model)?;
    let (m, cov, extra) = theory(&model, &initial, &tol)?;
    let ags = covariance_ags(&model, &tol).ok().map(|a| rows(&a));
    let table = rate_table(c, &model)?;
    let out = json!({
        "m": m,
        "c": rows(&cov),
        "c_dual": ags,
        "drift_gradient_check": drift_finite_difference(&model, 1e-5)?,
        "details": extra,
        "kinks": table.kinks,
        "upper_bound_only": table.upper_bound_only,
    });
    let text = pretty(&out);
    print!("{text}");
    let (lam, rate) = curve_csv(&table);
    c.emit("asymptotics.json", &text)?;
    c.emit("rate_table.json", &pretty(&table))?;
    c.emit("lambda.csv", &lam)?;
    c.emit("rate.csv", &rate)?;
    Ok(0)
}

fn cmd_rate(c: &Common) -> CmdResult {
    let model = c.model()?;
    let table = rate_table(c, &model)?;
    let text = pretty(&table);
    print!("{text}");
    let (lam, rate) = curve_csv(&table);
    c.emit("rate_table.json", &text)?;
    c.emit("lambda.csv", &lam)?;
    c.emit("rate.csv", &rate)?;
    Ok(0)
}

fn cmd_simulate(c: &Common) -> CmdResult {
    let model = c.model()?;
    let tol = c.tolerances();
    let initial = c.initial(&model)?;
    let (m, cov, _) = theory(&model, &initial, &tol)?;
    let stats = batch_statistics(&model, &initial, c.horizon, c.count, c.seed, &m, &cov)?;
    let summary = json!({
        "horizon": stats.horizon,
        "count": stats.count,
        "seed": stats.seed,
        "mean": stats.mean,
        "variance": stats.variance,
        "standardized_mean": stats.standardized_mean,
        "ks_distance": stats.ks_distance,
        "theoretical_m": m,
        "theoretical_c": rows(&cov),
    });
    let text = pretty(&summary);
    print!("{text}");
    c.emit("summary.json", &text)?;
    c.emit("batch.csv", &batch_csv(&stats))?;
    Ok(0)
}

fn cmd_oracle(c: &Common) -> CmdResult {
    let model = c.model()?;
    let initial = c.initial(&model)?;
    let d = model.lattice_dim();
    let u = if c.u.is_empty() { vec![0.0; d] } else { c.u.clone() };
    let mgf = mgf_check(&model, &initial, c.oracle_p, &u)?;
    let paths = exact_distribution_paths(&model, &initial, c.oracle_p)?;
    let iterated = exact_distribution_iterated(&model, &initial, c.oracle_p)?;
    let tv = paths.total_variation(&iterated);
    let rel = mgf.relative_error();
    let agree = rel <= ORACLE_AGREEMENT && tv <= ORACLE_AGREEMENT;
    let masses: Vec<Value> = paths
        .masses
        .iter()
        .map(|(k, v)| json!({"position": k, "probability": v.probability}))
        .collect();
    let out = json!({
        "p": c.oracle_p,
        "u": u,
        "path_sum": mgf.path_sum,
        "superop_value": mgf.superop_value,
        "relative_error": rel,
        "total_variation": tv,
        "agree": agree,
        "distribution": masses,
    });
    let text = pretty(&out);
    print!("{text}");
    c.emit("oracle.json", &text)?;
    Ok(if agree { 0 } else { 1 })
}

fn run(cli: Cli) -> CmdResult {
    match &cli.command {
        Command::Validate(c) => cmd_validate(c),
        Command::Analyze(c) => cmd_analyze(c),
        Command::Asymptotics(c) => cmd_asymptotics(c),
        Command::Rate(c) => cmd_rate(c),
        Command::Simulate(c) => cmd_simulate(c),
        Command::OracleCheck(c) => cmd_oracle(c),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let started = std::time::Instant::now();
    let code = match run(cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    };
    eprintln!("elapsed: {:.3}s", started.elapsed().as_secs_f64());
    ExitCode::from(code)
}
