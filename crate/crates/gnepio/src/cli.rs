//! The `gnepio` command line. Each subcommand parses and validates its
//! inputs, calls the library and prints the result, as text or as one JSON
//! document with `--json`.
//!
//! Exit codes: 0 success, 1 invalid input, 2 a solver did not converge.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use gnepio_core::analysis::spectral_check;
use gnepio_core::equilibrium::SolverSettings;
use gnepio_core::game::CostMode;
use gnepio_core::inverse::{
    build_residual_program, interpret_solution, predicted_variable_count, GraphKind, ParameterBounds,
};
use gnepio_core::lp::{write_mps, LpSolver, LpStatus, SimplexSolver};
use gnepio_core::network::{Network, OdPair};
use serde_json::{json, Value};

use crate::experiment::{
    default_threads, read_group_report, routable_pairs, run_experiment, summarize_groups, AlphaRule, CostIntervals,
    ExperimentConfig, ExperimentError, ForwardBatch, LpBackend, NetworkSpec, DEFAULT_TIME_BUDGET,
};
use crate::formats::{self, CostsFile, FormatError};
use crate::highs_backend::HighsSolver;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "gnepio", version, about = "Forward and inverse solvers for joint-capacity routing games")]
pub struct Cli {
    /// Print results as a single JSON document.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a square grid network as JSON.
    GenerateGrid(GenerateGridArgs),
    /// Solve the forward game on one or all OD pairs.
    SolveForward(SolveForwardArgs),
    /// Recover cost parameters from observed equilibria.
    Recover(RecoverArgs),
    /// Run the seeded randomize / observe / recover / re-simulate pipeline.
    RunExperiment(RunExperimentArgs),
    /// Smallest eigenvalue of the symmetric part of the interaction matrix.
    SpectralCheck(SpectralCheckArgs),
    /// Closed-form variable count of the residual program.
    CountVariables(CountVariablesArgs),
    /// Boxplot summary CSV from group report JSON files.
    Summarize(SummarizeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Shared,
    PerPlayer,
}

impl From<ModeArg> for CostMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Shared => CostMode::SharedAcrossPlayers,
            ModeArg::PerPlayer => CostMode::PerPlayer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlphaRuleArg {
    Half,
    Full,
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LpArg {
    Highs,
    Simplex,
}

impl From<LpArg> for LpBackend {
    fn from(l: LpArg) -> Self {
        match l {
            LpArg::Highs => LpBackend::Highs,
            LpArg::Simplex => LpBackend::Simplex,
        }
    }
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected two comma-separated values, got {s:?}"))?;
    let num = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("{t:?} is not a node number"));
    Ok((num(a)?, num(b)?))
}

fn parse_interval(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected low,high, got {s:?}"))?;
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("{t:?} is not a number"));
    Ok((num(a)?, num(b)?))
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    /// KKT residual tolerance.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Newton iterations per start point.
    #[arg(long, default_value_t = 500)]
    pub max_iterations: usize,
    /// Parallel OD solves (defaults to the available cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

impl SolverArgs {
    fn settings(&self) -> SolverSettings {
        SolverSettings { tolerance: self.tol, max_iterations: self.max_iterations, ..SolverSettings::default() }
    }

    fn threads(&self) -> usize {
        self.threads.unwrap_or_else(default_threads)
    }
}

#[derive(Debug, Args)]
pub struct GenerateGridArgs {
    #[arg(long)]
    pub side: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SolveForwardArgs {
    /// Network JSON or TNTP file.
    #[arg(long)]
    pub network: PathBuf,
    #[arg(long)]
    pub players: usize,
    #[arg(long, value_enum, default_value = "full")]
    pub alpha_rule: AlphaRuleArg,
    /// Capacity for `--alpha-rule explicit`: one value, or one per arc.
    #[arg(long, value_delimiter = ',')]
    pub alpha: Vec<f64>,
    /// 1-based origin,destination; every routable OD pair when omitted.
    #[arg(long, value_parser = parse_pair)]
    pub od: Option<(usize, usize)>,
    /// Cost parameter JSON.
    #[arg(long)]
    pub costs: PathBuf,
    /// Observation CSV to write (a `.json` sidecar is written next to it).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct RecoverArgs {
    /// Observation CSV with its `.json` sidecar.
    #[arg(long)]
    pub observations: PathBuf,
    #[arg(long, value_enum, default_value = "shared")]
    pub cost_mode: ModeArg,
    #[arg(long, value_parser = parse_interval, default_value = "1,5")]
    pub bounds_cint: (f64, f64),
    #[arg(long, value_parser = parse_interval, default_value = "5,20")]
    pub bounds_cbase: (f64, f64),
    #[arg(long, value_enum, default_value = "highs")]
    pub lp: LpArg,
    /// Recovered cost JSON to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also export the residual program in free MPS.
    #[arg(long)]
    pub mps: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunExperimentArgs {
    /// Required: every random draw derives from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Grid sides.
    #[arg(long, value_delimiter = ',', conflicts_with = "network")]
    pub grid: Vec<usize>,
    /// Network files instead of grids.
    #[arg(long)]
    pub network: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "2,5")]
    pub players: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "half,full")]
    pub alpha_rule: Vec<AlphaRuleArg>,
    /// Capacity for `--alpha-rule explicit`.
    #[arg(long, value_delimiter = ',')]
    pub alpha: Vec<f64>,
    #[arg(long, value_enum, default_value = "shared")]
    pub cost_mode: ModeArg,
    #[arg(long, default_value_t = 3)]
    pub trials: usize,
    #[arg(long, value_parser = parse_interval, default_value = "1,5")]
    pub bounds_cint: (f64, f64),
    #[arg(long, value_parser = parse_interval, default_value = "5,20")]
    pub bounds_cbase: (f64, f64),
    /// Sampling interval for C; defaults to the bounds.
    #[arg(long, value_parser = parse_interval)]
    pub intervals_cint: Option<(f64, f64)>,
    /// Sampling interval for c̄; defaults to the bounds.
    #[arg(long, value_parser = parse_interval)]
    pub intervals_cbase: Option<(f64, f64)>,
    /// Per-trial wall-clock budget in seconds.
    #[arg(long, default_value_t = DEFAULT_TIME_BUDGET.as_secs_f64())]
    pub time_budget: f64,
    #[arg(long, value_enum, default_value = "highs")]
    pub lp: LpArg,
    /// Report directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct SpectralCheckArgs {
    #[arg(long)]
    pub costs: PathBuf,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("graph").required(true).args(["grid", "nodes", "network"])))]
pub struct CountVariablesArgs {
    /// Grid with this many nodes (a perfect square).
    #[arg(long)]
    pub grid: Option<u64>,
    /// General network with this many nodes; needs `--arcs`.
    #[arg(long, requires = "arcs")]
    pub nodes: Option<u64>,
    #[arg(long)]
    pub arcs: Option<u64>,
    /// General network read from a file.
    #[arg(long)]
    pub network: Option<PathBuf>,
    #[arg(long)]
    pub players: u64,
    #[arg(long, value_enum)]
    pub mode: ModeArg,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    /// Group report JSON files written by run-experiment.
    #[arg(long, required = true, num_args = 1..)]
    pub report: Vec<PathBuf>,
    /// Summary CSV to write; printed when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Invalid(String),
    NotConverged(String),
}

impl From<FormatError> for Failure {
    fn from(e: FormatError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

fn invalid(e: impl ToString) -> Failure {
    Failure::Invalid(e.to_string())
}

type Outcome = Result<(i32, Value, String), Failure>;

/// Runs the CLI on `args` (including the program name).
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let rendered = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{rendered}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{rendered}");
                    EXIT_INVALID
                }
            };
        }
    };
    let result = match &cli.command {
        Command::GenerateGrid(a) => generate_grid(a),
        Command::SolveForward(a) => solve_forward(a),
        Command::Recover(a) => recover(a),
        Command::RunExperiment(a) => run_experiment_cmd(a, err),
        Command::SpectralCheck(a) => spectral(a),
        Command::CountVariables(a) => count_variables(a),
        Command::Summarize(a) => summarize(a),
    };
    match result {
        Ok((code, value, text)) => {
            let _ = if cli.json { writeln!(out, "{value:#}") } else { write!(out, "{text}") };
            code
        }
        Err(Failure::Invalid(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_INVALID
        }
        Err(Failure::NotConverged(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_NOT_CONVERGED
        }
    }
}

fn generate_grid(a: &GenerateGridArgs) -> Outcome {
    let net = Network::grid(a.side).map_err(invalid)?;
    formats::write_network(&a.out, &net)?;
    let value = json!({
        "nodes": net.node_count(),
        "arcs": net.arc_count(),
        "od_pairs": net.od_pairs().len(),
        "out": a.out,
    });
    let text = format!("{} nodes, {} arcs -> {}\n", net.node_count(), net.arc_count(), a.out.display());
    Ok((EXIT_OK, value, text))
}

fn alpha_rule(rule: AlphaRuleArg, alpha: &[f64]) -> Result<AlphaRule, Failure> {
    match (rule, alpha.is_empty()) {
        (AlphaRuleArg::Half, true) => Ok(AlphaRule::HalfN),
        (AlphaRuleArg::Full, true) => Ok(AlphaRule::FullN),
        (AlphaRuleArg::Explicit, false) => Ok(AlphaRule::Explicit(alpha.to_vec())),
        (AlphaRuleArg::Explicit, true) => Err(invalid("--alpha-rule explicit needs --alpha")),
        (_, false) => Err(invalid("--alpha is only used with --alpha-rule explicit")),
    }
}

fn absolute(path: &Path) -> String {
    path.canonicalize().unwrap_or_else(|_| path.to_path_buf()).display().to_string()
}

fn solve_forward(a: &SolveForwardArgs) -> Outcome {
    let net = formats::read_network(&a.network)?;
    let params = formats::read_costs(&a.costs)?;
    if a.players == 0 {
        return Err(invalid("--players must be positive"));
    }
    let capacity = alpha_rule(a.alpha_rule, &a.alpha)?.capacity(a.players, net.arc_count())?;
    let pairs = match a.od {
        Some((o, d)) => vec![OdPair::from_one_based(o, d, net.node_count()).map_err(invalid)?],
        None => routable_pairs(&net),
    };
    let settings = a.solver.settings();
    let batch = ForwardBatch {
        network: &net,
        players: a.players,
        capacity: &capacity,
        settings: &settings,
        threads: a.solver.threads(),
        deadline: None,
    };
    if params.players() != a.players || params.arcs() != net.arc_count() {
        return Err(invalid(format!(
            "costs are for {} players on {} arcs, the game has {} players on {} arcs",
            params.players(),
            params.arcs(),
            a.players,
            net.arc_count()
        )));
    }
    let result = batch.run(&params, &pairs)?;
    let mut text = String::new();
    let mut rows = Vec::new();
    for (od, o) in result.pairs.iter().zip(&result.outcomes) {
        let residual = o.kkt_residual.unwrap_or(f64::NAN);
        text += &format!(
            "od {od}: {} kkt {residual:.3e} iterations {}\n",
            if o.converged { "converged" } else { "NOT converged" },
            o.iterations
        );
        rows.push(json!({
            "od": [od.origin + 1, od.destination + 1],
            "converged": o.converged,
            "kkt_residual": o.kkt_residual,
            "iterations": o.iterations,
        }));
    }
    let max_residual = result.outcomes.iter().filter_map(|o| o.kkt_residual).fold(0.0, f64::max);
    let mut value = json!({ "pairs": rows, "max_kkt_residual": max_residual });
    if !result.all_converged() {
        let failed = result.outcomes.iter().filter(|o| !o.converged).count();
        return Err(Failure::NotConverged(format!("{failed} OD pairs did not converge\n{text}")));
    }
    if let Some(path) = &a.out {
        let obs = result.observation_set(&net, a.players, &capacity).map_err(invalid)?;
        formats::write_observations(path, &obs, &absolute(&a.network))?;
        text += &format!("flows -> {}\n", path.display());
        value["out"] = json!(path);
    }
    Ok((EXIT_OK, value, text))
}

fn recover(a: &RecoverArgs) -> Outcome {
    let obs = formats::read_observations(&a.observations)?;
    let mode = CostMode::from(a.cost_mode);
    let bounds =
        ParameterBounds::uniform(obs.network().arc_count(), a.bounds_cint, a.bounds_cbase).map_err(invalid)?;
    let (lp, index) = build_residual_program(&obs, &bounds, mode).map_err(invalid)?;
    if let Some(path) = &a.mps {
        formats::write_text(path, &write_mps(&lp, "residual"))?;
    }
    let solver: Box<dyn LpSolver> = match a.lp {
        LpArg::Highs => Box::new(HighsSolver::default()),
        LpArg::Simplex => Box::new(SimplexSolver::default()),
    };
    let result = solver.solve(&lp);
    let status = result.status;
    let rec = match interpret_solution(&obs, &bounds, &index, result) {
        Ok(rec) => rec,
        Err(e) if status == LpStatus::NumericalFailure => return Err(Failure::NotConverged(e.to_string())),
        Err(e) => return Err(invalid(e)),
    };
    if let Some(path) = &a.out {
        formats::write_costs(path, &rec.params)?;
    }
    let value = json!({
        "io_objective": rec.io_objective,
        "negative_objective": rec.negative_objective,
        "stationarity": rec.stationarity,
        "complementarity_flow": rec.complementarity_flow,
        "complementarity_capacity": rec.complementarity_capacity,
        "variables": lp.num_variables(),
        "rows": lp.num_rows(),
        "lp_iterations": rec.lp_iterations,
        "params": CostsFile::from_params(&rec.params),
    });
    let mut text = format!(
        "io_objective {:.6e} (stationarity {:.3e}, flow complementarity {:.3e}, capacity complementarity {:.3e})\n\
         residual program: {} variables, {} rows\n",
        rec.io_objective,
        rec.stationarity,
        rec.complementarity_flow,
        rec.complementarity_capacity,
        lp.num_variables(),
        lp.num_rows()
    );
    if rec.negative_objective {
        text += "warning: objective below -1e-9\n";
    }
    if let Some(path) = &a.out {
        text += &format!("costs -> {}\n", path.display());
    }
    Ok((EXIT_OK, value, text))
}

/// Builds the experiment config a `run-experiment` invocation describes.
pub fn experiment_config(a: &RunExperimentArgs) -> Result<ExperimentConfig, String> {
    let seed = a.seed.ok_or("run-experiment needs --seed")?;
    let networks = if !a.network.is_empty() {
        a.network.iter().cloned().map(NetworkSpec::File).collect()
    } else if !a.grid.is_empty() {
        a.grid.iter().copied().map(NetworkSpec::Grid).collect()
    } else {
        (2..=4).map(NetworkSpec::Grid).collect()
    };
    let mut rules = Vec::new();
    for &r in &a.alpha_rule {
        rules.push(match r {
            AlphaRuleArg::Half => AlphaRule::HalfN,
            AlphaRuleArg::Full => AlphaRule::FullN,
            AlphaRuleArg::Explicit if a.alpha.is_empty() => return Err("--alpha-rule explicit needs --alpha".into()),
            AlphaRuleArg::Explicit => AlphaRule::Explicit(a.alpha.clone()),
        });
    }
    if !(a.time_budget > 0.0 && a.time_budget.is_finite()) {
        return Err("--time-budget must be a positive number of seconds".into());
    }
    let bounds = CostIntervals { c_int: a.bounds_cint, c_base: a.bounds_cbase };
    let config = ExperimentConfig {
        networks,
        cost_mode: a.cost_mode.into(),
        players: a.players.clone(),
        alpha_rules: rules,
        trials: a.trials,
        seed,
        bounds,
        intervals: CostIntervals {
            c_int: a.intervals_cint.unwrap_or(bounds.c_int),
            c_base: a.intervals_cbase.unwrap_or(bounds.c_base),
        },
        solver: a.solver.settings(),
        threads: a.solver.threads(),
        time_budget: Duration::from_secs_f64(a.time_budget),
        lp_backend: a.lp.into(),
        output_dir: a.out.clone(),
    };
    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.3e}"))
}

fn run_experiment_cmd(a: &RunExperimentArgs, log: &mut dyn Write) -> Outcome {
    let config = experiment_config(a).map_err(Failure::Invalid)?;
    let groups = config.groups()?;
    let _ = writeln!(log, "{} groups x {} trials", groups.len(), config.trials);
    let report = run_experiment(&config)?;
    let mut text = String::new();
    for r in report.records() {
        text += &format!(
            "{} trial {}: {:?} io_objective {} flow_error {} c_gap {} c_base_gap {}{}\n",
            r.group,
            r.trial,
            r.status,
            fmt_opt(r.io_objective),
            fmt_opt(r.flow_error),
            fmt_opt(r.c_gap),
            fmt_opt(r.c_base_gap),
            if r.issues.is_empty() { String::new() } else { format!(" [{}]", r.issues.join("; ")) }
        );
    }
    let incomplete: usize = report.groups.iter().map(|g| g.incomplete).sum();
    let total: usize = report.groups.iter().map(|g| g.records.len()).sum();
    text += &format!("{} of {total} trials complete\n", total - incomplete);
    if let Some(dir) = &config.output_dir {
        text += &format!("report -> {}\n", dir.display());
    }
    let value = json!({
        "groups": report.groups,
        "summaries": report.summaries.iter().map(|s| json!({
            "metric": s.metric,
            "group": s.group,
            "q1": s.summary.q1,
            "median": s.summary.median,
            "q3": s.summary.q3,
            "whisker_low": s.summary.whisker_low,
            "whisker_high": s.summary.whisker_high,
            "outliers": s.summary.outliers,
        })).collect::<Vec<_>>(),
        "complete": total - incomplete,
        "incomplete": incomplete,
    });
    let code = if incomplete > 0 { EXIT_NOT_CONVERGED } else { EXIT_OK };
    Ok((code, value, text))
}

fn spectral(a: &SpectralCheckArgs) -> Outcome {
    let params = formats::read_costs(&a.costs)?;
    let report = spectral_check(&params, params.players()).map_err(invalid)?;
    let value = json!({
        "min_eig_symmetric_part": report.min_eig_symmetric_part,
        "is_positive_definite": report.is_positive_definite,
        "modulus_lower_bound": report.modulus_lower_bound,
    });
    let mut text = format!(
        "min eigenvalue of the symmetric part {:.6e} ({})\n",
        report.min_eig_symmetric_part,
        if report.is_positive_definite { "positive definite" } else { "not positive definite" }
    );
    if let Some(bound) = report.modulus_lower_bound {
        text += &format!("lower bound min diag C {bound:.6e}\n");
    }
    Ok((EXIT_OK, value, text))
}

fn count_variables(a: &CountVariablesArgs) -> Outcome {
    let mode = CostMode::from(a.mode);
    let (m, arcs, kind) = if let Some(m) = a.grid {
        (m, 0, GraphKind::Grid)
    } else if let Some(m) = a.nodes {
        (m, a.arcs.expect("clap requires --arcs"), GraphKind::General)
    } else {
        let net = formats::read_network(a.network.as_ref().expect("clap requires a graph"))?;
        (net.node_count() as u64, net.arc_count() as u64, GraphKind::General)
    };
    let count = predicted_variable_count(m, a.players, arcs, mode, kind).map_err(invalid)?;
    let value = json!({ "variables": count });
    Ok((EXIT_OK, value, format!("{count}\n")))
}

fn summarize(a: &SummarizeArgs) -> Outcome {
    let groups = a.report.iter().map(|p| read_group_report(p)).collect::<Result<Vec<_>, _>>()?;
    let rows = summarize_groups(&groups);
    let csv = formats::summary_csv(&rows).map_err(invalid)?;
    if let Some(path) = &a.out {
        formats::write_text(path, &csv)?;
    }
    let value = json!({ "rows": rows.len(), "out": a.out, "csv": csv });
    let text = match &a.out {
        Some(p) => format!("{} summary rows -> {}\n", rows.len(), p.display()),
        None => csv,
    };
    Ok((EXIT_OK, value, text))
}
