//! The `spincool` command surface.
//!
//! Every experiment is driven by a [`RunConfig`] resolved in three
//! layers: built-in defaults for the experiment, then an optional TOML
//! file (`--config`), then `--set key=value` overrides (dotted keys).
//! Each emitted data file gets a `.config.json` sidecar with the fully
//! resolved configuration.
//!
//! Exit codes: 0 success, 2 config error, 3 numeric failure, 4 IO.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::dynamics::{ModelParams, SpinBasis};
use crate::lindblad::{DEFAULT_OPEN_DT, LindbladRates, run_protocol_open};
use crate::optimizer::{OptimizeConfig, evaluate_target, optimize_target};
use crate::postselect::{TargetState, target_corr2, target_corr3};
use crate::protocol::{
    IterationRecord, Strategy, run_protocol_full, sweep_ratio,
};
use crate::util;
use crate::{Error, Result};

const BOHR_MAGNETON: f64 = 9.274e-24; // J/T
const HBAR: f64 = 1.0546e-34; // J s

#[derive(Parser)]
#[command(name = "spincool", version, about = "Iterative spin-postselection cooling of a nanomechanical oscillator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single-step (t, lambda) sweep: cooling ratio and quadrature ratio.
    Fig1(CommonArgs),
    /// Single-step ratio against the coupling for N = 1..4.
    Fig2(CommonArgs),
    /// Iterated cooling records for N = 1..4.
    Fig3(CommonArgs),
    /// Correlated targets against the independent strategy.
    Fig6(CommonArgs),
    /// Collective (Dicke) run with many spins.
    Collective(CommonArgs),
    /// Open-system run under the master equation.
    Open(CommonArgs),
    /// Search for the optimal postselection target.
    Optimize(CommonArgs),
    /// Dimensionless coupling from a magnetic-gradient setup.
    #[command(name = "estimate-coupling")]
    EstimateCoupling(CommonArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-key overrides, e.g. --set model.lambda=0.1
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker-thread bound for sweeps.
    #[arg(long)]
    jobs: Option<usize>,
}

/// Entry point for the binary; returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Command::Fig1(a) => ("fig1", a),
        Command::Fig2(a) => ("fig2", a),
        Command::Fig3(a) => ("fig3", a),
        Command::Fig6(a) => ("fig6", a),
        Command::Collective(a) => ("collective", a),
        Command::Open(a) => ("open", a),
        Command::Optimize(a) => ("optimize", a),
        Command::EstimateCoupling(a) => ("estimate-coupling", a),
    };
    match run(name, args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Domain(_) => 2,
        Error::Io { .. } => 4,
        _ => 3,
    }
}

fn run(name: &str, args: &CommonArgs) -> Result<()> {
    if let Some(jobs) = args.jobs {
        if jobs == 0 {
            return Err(Error::Config("--jobs must be >= 1".into()));
        }
        // Ignore the error if a global pool already exists (tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    let config = load_config(name, args.config.as_deref(), &args.set)?;
    std::fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    match name {
        "fig1" => cmd_fig1(&config, &args.out),
        "fig2" => cmd_fig2(&config, &args.out),
        "fig3" => cmd_fig3(&config, &args.out),
        "fig6" => cmd_fig6(&config, &args.out),
        "collective" => cmd_collective(&config, &args.out),
        "open" => cmd_open(&config, &args.out),
        "optimize" => cmd_optimize(&config, &args.out),
        "estimate-coupling" => cmd_estimate_coupling(&config, &args.out),
        _ => unreachable!("subcommands are exhaustive"),
    }
}

// ---------------------------------------------------------------- config

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: String,
    pub model: ModelSection,
    pub protocol: ProtocolSection,
    pub rates: RatesSection,
    pub grid: GridSection,
    pub optimize: OptimizeSection,
    pub estimate: EstimateSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub lambda: f64,
    pub t: f64,
    pub nbar: f64,
    pub n_spins: usize,
    pub dim: usize,
    /// "product" or "collective".
    pub basis: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    /// "independent", "corr2", "corr3" or "collective".
    pub strategy: String,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesSection {
    pub gamma: f64,
    pub spin_relaxation: f64,
    pub dephasing: f64,
    /// Defaults to the model nbar when absent.
    pub nbar_bath: Option<f64>,
    /// Integrator step for open runs.
    pub dt: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_points: usize,
    pub t_min: f64,
    pub t_max: f64,
    pub t_points: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeSection {
    pub restarts: usize,
    pub max_evals: usize,
    pub tol: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateSection {
    /// Magnetic gradient dB/dz in T/m.
    pub gradient: f64,
    /// Oscillator mass in kg.
    pub mass: f64,
    /// Mechanical angular frequency in rad/s.
    pub omega: f64,
}

impl RunConfig {
    fn defaults(experiment: &str) -> Self {
        let mut cfg = Self {
            experiment: experiment.to_string(),
            model: ModelSection {
                lambda: 0.12,
                t: PI / 2.0,
                nbar: 10.0,
                n_spins: 1,
                dim: 150,
                basis: "product".into(),
            },
            protocol: ProtocolSection {
                strategy: "independent".into(),
                iterations: 10,
            },
            rates: RatesSection {
                gamma: 0.0,
                spin_relaxation: 0.0,
                dephasing: 0.0,
                nbar_bath: None,
                dt: DEFAULT_OPEN_DT,
            },
            grid: GridSection {
                lambda_min: 0.0,
                lambda_max: 0.3,
                lambda_points: 61,
                t_min: PI / 64.0,
                t_max: PI,
                t_points: 64,
            },
            optimize: OptimizeSection {
                restarts: 32,
                max_evals: 4000,
                tol: 1e-10,
                seed: 7,
            },
            estimate: EstimateSection {
                gradient: 1e6,
                mass: 1e-14,
                omega: 1e6,
            },
        };
        match experiment {
            "collective" => {
                cfg.model.n_spins = 50;
                cfg.model.lambda = 0.028;
                cfg.model.basis = "collective".into();
                cfg.protocol.strategy = "collective".into();
                cfg.protocol.iterations = 5;
            }
            "open" => {
                cfg.model.nbar = 3.0;
                cfg.model.dim = 60;
                cfg.protocol.iterations = 5;
                cfg.rates.gamma = 1e-3;
                cfg.rates.spin_relaxation = 1e-3;
                cfg.rates.dephasing = 1e-2;
            }
            "optimize" => {
                cfg.model.n_spins = 2;
            }
            _ => {}
        }
        cfg
    }

    pub fn model_params(&self) -> Result<ModelParams> {
        let basis = match self.model.basis.as_str() {
            "product" => SpinBasis::Product,
            "collective" => SpinBasis::Collective,
            other => {
                return Err(Error::Config(format!(
                    "unknown basis {other:?} (expected \"product\" or \"collective\")"
                )));
            }
        };
        let params = ModelParams {
            lambda: self.model.lambda,
            t: self.model.t,
            nbar: self.model.nbar,
            n_spins: self.model.n_spins,
            dim: self.model.dim,
            basis,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn strategy(&self) -> Result<Strategy> {
        match self.protocol.strategy.as_str() {
            "independent" => Ok(Strategy::Independent),
            "corr2" => Ok(Strategy::Correlated(target_corr2())),
            "corr3" => Ok(Strategy::Correlated(target_corr3())),
            "collective" => Ok(Strategy::Collective),
            other => Err(Error::Config(format!(
                "unknown strategy {other:?} (expected independent | corr2 | corr3 | collective)"
            ))),
        }
    }

    pub fn lindblad_rates(&self) -> Result<LindbladRates> {
        let rates = LindbladRates {
            gamma: self.rates.gamma,
            spin_relaxation: self.rates.spin_relaxation,
            dephasing: self.rates.dephasing,
            nbar_bath: self.rates.nbar_bath.unwrap_or(self.model.nbar),
        };
        rates.validate()?;
        Ok(rates)
    }
}

/// Resolve the configuration: defaults <- file <- --set overrides.
pub fn load_config(
    experiment: &str,
    path: Option<&Path>,
    sets: &[String],
) -> Result<RunConfig> {
    let defaults = toml::Value::try_from(RunConfig::defaults(experiment))
        .expect("defaults serialize");
    let mut merged = defaults;
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
        let file: toml::Value = text
            .parse()
            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
        merge_toml(&mut merged, file);
    }
    for pair in sets {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set {pair:?} is not KEY=VALUE")))?;
        apply_set(&mut merged, key.trim(), value.trim())?;
    }
    let mut config: RunConfig = merged
        .try_into()
        .map_err(|e| Error::Config(format!("invalid configuration: {e}")))?;
    config.experiment = experiment.to_string();
    Ok(config)
}

fn merge_toml(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_toml(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn apply_set(root: &mut toml::Value, key: &str, value: &str) -> Result<()> {
    // Parse the value with TOML semantics; bare words fall back to strings.
    let parsed: toml::Value = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let mut slot = root;
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        if part.is_empty() {
            return Err(Error::Config(format!("--set key {key:?} has an empty segment")));
        }
        let table = slot
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("--set key {key:?} indexes a non-table")))?;
        if parts.peek().is_none() {
            table.insert(part.to_string(), parsed);
            return Ok(());
        }
        slot = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    unreachable!("split produces at least one segment")
}

// ---------------------------------------------------------------- output

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source: e,
    }
}

/// 12 significant digits, locale-free.
fn sig12(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    format!("{v:.11e}")
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|e| io_err(path, e))
}

fn write_sidecar(data_path: &Path, config: &RunConfig) -> Result<()> {
    let json = serde_json::to_string_pretty(config).expect("config serializes");
    let mut side = data_path.as_os_str().to_owned();
    // foo.csv -> foo.config.json
    let side_path = data_path.with_extension("config.json");
    side.clear();
    side.push(side_path.as_os_str());
    write_file(&side_path, &(json + "\n"))
}

fn write_csv(path: &Path, header: &str, rows: &[String], config: &RunConfig) -> Result<()> {
    let mut out = String::with_capacity(rows.len() * 48 + header.len() + 1);
    out.push_str(header);
    out.push('\n');
    for r in rows {
        out.push_str(r);
        out.push('\n');
    }
    write_file(path, &out)?;
    write_sidecar(path, config)
}

fn record_rows(records: &[IterationRecord]) -> Vec<String> {
    records
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{}",
                r.index,
                sig12(r.mean_phonon),
                sig12(r.ratio),
                sig12(r.dx),
                sig12(r.dy),
                sig12(r.step_probability),
                sig12(r.cumulative_probability)
            )
        })
        .collect()
}

const RECORD_HEADER: &str = "iter,mean_phonon,ratio,dx,dy,p_step,p_cum";

/// Run the protocol, keeping whatever records precede a vanishing
/// branch so partial results can still be written.
fn records_partial(
    params: &ModelParams,
    strategy: &Strategy,
    iterations: usize,
) -> Result<(Vec<IterationRecord>, Option<Error>)> {
    match run_protocol_full(params, strategy, iterations) {
        Ok(run) => Ok((run.records, None)),
        Err(Error::VanishingBranch {
            probability,
            iteration: Some(i),
        }) if i > 1 => {
            let run = run_protocol_full(params, strategy, i - 1)?;
            Ok((
                run.records,
                Some(Error::VanishingBranch {
                    probability,
                    iteration: Some(i),
                }),
            ))
        }
        Err(e) => Err(e),
    }
}

// ------------------------------------------------------------- commands

fn cmd_fig1(config: &RunConfig, out: &Path) -> Result<()> {
    let mut params = config.model_params()?;
    // Single spin by construction.
    params.n_spins = 1;
    params.basis = SpinBasis::Product;
    let g = &config.grid;
    let lambdas = util::linspace(g.lambda_min, g.lambda_max, g.lambda_points);
    let times = util::linspace(g.t_min, g.t_max, g.t_points);
    let points = sweep_ratio(&params, &Strategy::Independent, &lambdas, &times)?;
    let ratio_rows: Vec<String> = points
        .iter()
        .map(|p| format!("{},{},{}", sig12(p.t), sig12(p.lambda), sig12(p.ratio)))
        .collect();
    let var_rows: Vec<String> = points
        .iter()
        .map(|p| format!("{},{},{}", sig12(p.t), sig12(p.lambda), sig12(p.var_ratio)))
        .collect();
    write_csv(&out.join("fig1_ratio.csv"), "t,lambda,ratio", &ratio_rows, config)?;
    write_csv(&out.join("fig1_var.csv"), "t,lambda,var_ratio", &var_rows, config)
}

fn cmd_fig2(config: &RunConfig, out: &Path) -> Result<()> {
    let base = config.model_params()?;
    let g = &config.grid;
    let lambdas = util::linspace(g.lambda_min, g.lambda_max, g.lambda_points);
    let mut rows = Vec::new();
    for n in 1..=4usize {
        let params = ModelParams {
            n_spins: n,
            basis: SpinBasis::Product,
            ..base
        };
        let points = sweep_ratio(&params, &Strategy::Independent, &lambdas, &[params.t])?;
        for p in points {
            rows.push(format!("{n},{},{}", sig12(p.lambda), sig12(p.ratio)));
        }
    }
    write_csv(&out.join("fig2.csv"), "n_spins,lambda,ratio", &rows, config)
}

fn cmd_fig3(config: &RunConfig, out: &Path) -> Result<()> {
    let base = config.model_params()?;
    let mut deferred = None;
    for n in 1..=4usize {
        let params = ModelParams {
            n_spins: n,
            basis: SpinBasis::Product,
            ..base
        };
        let (records, err) =
            records_partial(&params, &Strategy::Independent, config.protocol.iterations)?;
        write_csv(
            &out.join(format!("fig3_n{n}.csv")),
            RECORD_HEADER,
            &record_rows(&records),
            config,
        )?;
        deferred = deferred.or(err);
    }
    match deferred {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn cmd_fig6(config: &RunConfig, out: &Path) -> Result<()> {
    let base = config.model_params()?;
    let runs: [(&str, usize, Strategy); 3] = [
        ("fig6_independent4.csv", 4, Strategy::Independent),
        ("fig6_corr2.csv", 2, Strategy::Correlated(target_corr2())),
        ("fig6_corr3.csv", 3, Strategy::Correlated(target_corr3())),
    ];
    let mut deferred = None;
    for (file, n, strategy) in runs {
        let params = ModelParams {
            n_spins: n,
            basis: SpinBasis::Product,
            ..base
        };
        let (records, err) = records_partial(&params, &strategy, config.protocol.iterations)?;
        write_csv(&out.join(file), RECORD_HEADER, &record_rows(&records), config)?;
        deferred = deferred.or(err);
    }
    match deferred {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn cmd_collective(config: &RunConfig, out: &Path) -> Result<()> {
    let params = config.model_params()?;
    if params.basis != SpinBasis::Collective {
        return Err(Error::Config(
            "the collective experiment needs model.basis = \"collective\"".into(),
        ));
    }
    let run = run_protocol_full(&params, &Strategy::Collective, config.protocol.iterations)?;
    write_csv(
        &out.join("collective.csv"),
        RECORD_HEADER,
        &record_rows(&run.records),
        config,
    )?;
    let dist = run.final_state.fock_distribution()?;
    let rows: Vec<String> = dist
        .iter()
        .enumerate()
        .map(|(n, p)| format!("{n},{}", sig12(*p)))
        .collect();
    write_csv(&out.join("collective_fock.csv"), "n,probability", &rows, config)
}

fn cmd_open(config: &RunConfig, out: &Path) -> Result<()> {
    let params = config.model_params()?;
    let rates = config.lindblad_rates()?;
    if !(config.rates.dt > 0.0) {
        return Err(Error::Config("rates.dt must be positive".into()));
    }
    let records = run_protocol_open(
        &params,
        &Strategy::Independent,
        &rates,
        config.protocol.iterations,
        config.rates.dt,
    )?;
    write_csv(&out.join("open.csv"), RECORD_HEADER, &record_rows(&records), config)
}

#[derive(Serialize)]
struct OptimizeOutput {
    n_spins: usize,
    basis: String,
    seed: u64,
    restarts: usize,
    evaluations: usize,
    converged: bool,
    coefficients_re: Vec<f64>,
    coefficients_im: Vec<f64>,
    ratio: f64,
    probability: f64,
    /// Single-step ratio of the corresponding built-in reference
    /// target, when one exists for this spin count.
    reference_ratio: Option<f64>,
    reference_probability: Option<f64>,
}

fn cmd_optimize(config: &RunConfig, out: &Path) -> Result<()> {
    let params = config.model_params()?;
    if params.n_spins > 4 {
        return Err(Error::Config("optimize is limited to n_spins <= 4".into()));
    }
    let ocfg = OptimizeConfig {
        n_spins: params.n_spins,
        basis: params.basis,
        restarts: config.optimize.restarts,
        max_evals: config.optimize.max_evals,
        tol: config.optimize.tol,
        probability_floor: None,
        seed: config.optimize.seed,
    };
    let res = optimize_target(&ocfg, &params)?;
    let reference: Option<TargetState> = match (params.n_spins, params.basis) {
        (2, SpinBasis::Product) => Some(target_corr2()),
        (3, SpinBasis::Product) => Some(target_corr3()),
        _ => None,
    };
    let (reference_ratio, reference_probability) = match &reference {
        Some(t) => {
            let (r, p) = evaluate_target(t, &params)?;
            (Some(r), Some(p))
        }
        None => (None, None),
    };
    let output = OptimizeOutput {
        n_spins: params.n_spins,
        basis: config.model.basis.clone(),
        seed: config.optimize.seed,
        restarts: config.optimize.restarts,
        evaluations: res.evaluations,
        converged: res.converged,
        coefficients_re: res.target.coeffs().iter().map(|c| c.re).collect(),
        coefficients_im: res.target.coeffs().iter().map(|c| c.im).collect(),
        ratio: res.ratio,
        probability: res.probability,
        reference_ratio,
        reference_probability,
    };
    let path = out.join("optimize.json");
    let json = serde_json::to_string_pretty(&output).expect("output serializes");
    write_file(&path, &(json + "\n"))?;
    write_sidecar(&path, config)?;
    if !res.converged {
        eprintln!("warning: optimizer hit the evaluation budget before converging");
    }
    Ok(())
}

/// lambda = mu_B (dB/dz) sqrt(hbar / (2 m omega^3)) / hbar.
pub fn estimate_coupling(gradient: f64, mass: f64, omega: f64) -> Result<f64> {
    for (name, v) in [("gradient", gradient), ("mass", mass), ("omega", omega)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Domain(format!("{name} = {v} must be positive")));
        }
    }
    Ok(BOHR_MAGNETON * gradient / (2.0 * mass * omega.powi(3) * HBAR).sqrt())
}

fn cmd_estimate_coupling(config: &RunConfig, out: &Path) -> Result<()> {
    let e = &config.estimate;
    let lambda = estimate_coupling(e.gradient, e.mass, e.omega)?;
    let mut json = String::new();
    let _ = writeln!(json, "{{");
    let _ = writeln!(json, "  \"gradient\": {},", e.gradient);
    let _ = writeln!(json, "  \"mass\": {},", e.mass);
    let _ = writeln!(json, "  \"omega\": {},", e.omega);
    let _ = writeln!(json, "  \"lambda\": {lambda}");
    let _ = writeln!(json, "}}");
    let path = out.join("estimate.json");
    write_file(&path, &json)?;
    write_sidecar(&path, config)?;
    println!("lambda = {lambda:.6e}");
    Ok(())
}
