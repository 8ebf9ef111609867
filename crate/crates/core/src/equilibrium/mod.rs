//! Forward solver for the routing game: the KKT system solved as a mixed
//! complementarity problem, plus a feasibility check and an independent
//! potential-minimisation oracle for the shared-cost case.

mod newton;
mod oracle;
mod starts;

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use thiserror::Error;

use crate::analysis::spectral_check;
use crate::game::{
    CostParameterization, EquilibriumSolution, GameError, GameInstance, KktResidualReport,
};
use crate::lp::{LinearProgram, LpSolver, LpStatus, SimplexSolver};

pub use oracle::{solve_potential_oracle, OracleSettings, OracleSolution};

use newton::{Problem, RunSettings};

/// How a Newton run is initialised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StartPoint {
    /// Vertex of the joint polytope found by the phase-one LP, zero duals.
    FeasibilityRestoration,
    /// Each player splits its unit evenly over all minimum-hop paths.
    ShortestHopSplit,
    /// Each player alone on its cheapest path, potentials from the path costs.
    MyopicShortestPath,
}

impl StartPoint {
    pub const ALL: [StartPoint; 3] = [
        StartPoint::FeasibilityRestoration,
        StartPoint::ShortestHopSplit,
        StartPoint::MyopicShortestPath,
    ];

    pub fn label(self) -> &'static str {
        match self {
            StartPoint::FeasibilityRestoration => "feasibility-restoration",
            StartPoint::ShortestHopSplit => "shortest-hop-split",
            StartPoint::MyopicShortestPath => "myopic-shortest-path",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    pub tolerance: f64,
    /// Newton iterations per start point.
    pub max_iterations: usize,
    pub start_points: Vec<StartPoint>,
    pub line_search_shrink: f64,
    pub armijo_constant: f64,
    /// Collect a line per iteration in [`SolveOutcome::trace`].
    pub trace: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tolerance: 1e-8,
            max_iterations: 500,
            start_points: StartPoint::ALL.to_vec(),
            line_search_shrink: 0.5,
            armijo_constant: 1e-4,
            trace: false,
        }
    }
}

impl SolverSettings {
    pub fn with_tolerance(tolerance: f64) -> Self {
        SolverSettings {
            tolerance,
            ..SolverSettings::default()
        }
    }

    fn validate(&self) -> Result<(), EquilibriumError> {
        if !(self.tolerance > 0.0) {
            return Err(EquilibriumError::InvalidSettings("tolerance must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(EquilibriumError::InvalidSettings("max_iterations must be positive"));
        }
        if self.start_points.is_empty() {
            return Err(EquilibriumError::InvalidSettings("at least one start point is required"));
        }
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !unit(self.line_search_shrink) || !unit(self.armijo_constant) {
            return Err(EquilibriumError::InvalidSettings(
                "line search constants must lie in (0, 1)",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EquilibriumError {
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("invalid solver settings: {0}")]
    InvalidSettings(&'static str),
    #[error("no flow satisfies conservation and the joint capacity (phase-one infeasibility {infeasibility:.3e})")]
    Infeasible {
        /// Farkas multipliers for the rows of the joint-polytope program.
        certificate: Vec<f64>,
        infeasibility: f64,
    },
    #[error("solver did not converge; best KKT residual {:.3e}", .best.kkt_residual)]
    DidNotConverge {
        best: Box<EquilibriumSolution>,
        report: KktResidualReport,
    },
    #[error("linear subproblem failed: {0}")]
    Lp(String),
    #[error("potential oracle stalled with gap {gap:.3e} after {iterations} iterations")]
    OracleStalled { gap: f64, iterations: usize },
    #[error("the potential oracle needs shared costs")]
    NotShared,
}

/// Result of [`feasibility_check`].
#[derive(Debug, Clone, PartialEq)]
pub enum Feasibility {
    /// A stacked flow vector in the joint polytope.
    Feasible { flows: Vec<f64> },
    /// `certificate` is `y` with `Aᵀy ≤ 0` on every column and `bᵀy > 0` for
    /// the rows of [`JointPolytope`].
    Infeasible { certificate: Vec<f64>, infeasibility: f64 },
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Feasibility::Feasible { .. })
    }
}

/// The set `{D x_i = f (all i), x ≥ 0, Σ x_i + s = α, s ≥ 0}` as an LP with
/// zero objective. The conservation row of the highest-index node is dropped
/// for every player since it is implied by the others.
pub struct JointPolytope {
    pub lp: LinearProgram,
    pub flows: Range<usize>,
    pub slacks: Range<usize>,
}

impl JointPolytope {
    pub fn new(instance: &GameInstance<'_>) -> Self {
        let (players, n, m) = (instance.players, instance.arcs(), instance.nodes());
        let mut lp = LinearProgram::new();
        let flows = lp.add_variables(players * n, 0.0, 0.0, f64::INFINITY);
        let slacks = lp.add_variables(n, 0.0, 0.0, f64::INFINITY);
        let demand = instance.demand();
        let arcs = instance.network.arcs();
        let mut terms = Vec::new();
        for i in 0..players {
            for node in 0..m - 1 {
                terms.clear();
                for (a, arc) in arcs.iter().enumerate() {
                    if arc.tail == node {
                        terms.push((flows.start + i * n + a, -1.0));
                    } else if arc.head == node {
                        terms.push((flows.start + i * n + a, 1.0));
                    }
                }
                lp.add_row(&terms, demand[node])
                    .expect("variables exist");
            }
        }
        for a in 0..n {
            terms.clear();
            terms.extend((0..players).map(|i| (flows.start + i * n + a, 1.0)));
            terms.push((slacks.start + a, 1.0));
            lp.add_row(&terms, instance.capacity[a])
                .expect("variables exist");
        }
        JointPolytope { lp, flows, slacks }
    }
}

/// Phase-one LP over the joint polytope.
pub fn feasibility_check(instance: &GameInstance<'_>) -> Result<Feasibility, EquilibriumError> {
    let polytope = JointPolytope::new(instance);
    let result = SimplexSolver::default().solve(&polytope.lp);
    match result.status {
        LpStatus::Optimal => Ok(Feasibility::Feasible {
            flows: result.z[polytope.flows].to_vec(),
        }),
        LpStatus::Infeasible => Ok(Feasibility::Infeasible {
            certificate: result.y,
            infeasibility: result.objective_value,
        }),
        _ => Err(EquilibriumError::Lp(result.diagnostics)),
    }
}

/// Details of a successful forward solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub solution: EquilibriumSolution,
    pub report: KktResidualReport,
    pub start: StartPoint,
    pub iterations: usize,
    pub trace: Vec<String>,
}

fn check_params(
    instance: &GameInstance<'_>,
    params: &CostParameterization,
) -> Result<(), EquilibriumError> {
    if params.players() != instance.players {
        return Err(GameError::Dimension {
            what: "cost parameter players",
            expected: instance.players,
            got: params.players(),
        }
        .into());
    }
    if params.arcs() != instance.arcs() {
        return Err(GameError::Dimension {
            what: "cost parameter arcs",
            expected: instance.arcs(),
            got: params.arcs(),
        }
        .into());
    }
    Ok(())
}

fn start_vector(
    problem: &Problem<'_>,
    instance: &GameInstance<'_>,
    params: &CostParameterization,
    start: StartPoint,
    feasible: &[f64],
) -> Vec<f64> {
    let (n, m, players) = (instance.arcs(), instance.nodes(), instance.players);
    let zeros_v = vec![0.0; players * m];
    let zeros_u = vec![0.0; n];
    match start {
        StartPoint::FeasibilityRestoration => problem.pack(feasible, &zeros_v, &zeros_u),
        StartPoint::ShortestHopSplit => {
            problem.pack(&starts::shortest_hop_split(instance), &zeros_v, &zeros_u)
        }
        StartPoint::MyopicShortestPath => {
            let (flows, v) = starts::myopic_shortest_paths(instance, params);
            problem.pack(&flows, &v, &zeros_u)
        }
    }
}

fn run_settings(settings: &SolverSettings) -> RunSettings {
    RunSettings {
        tolerance: settings.tolerance,
        max_iterations: settings.max_iterations,
        shrink: settings.line_search_shrink,
        armijo: settings.armijo_constant,
    }
}

fn feasible_point(instance: &GameInstance<'_>) -> Result<Vec<f64>, EquilibriumError> {
    match feasibility_check(instance)? {
        Feasibility::Feasible { flows } => Ok(flows),
        Feasibility::Infeasible {
            certificate,
            infeasibility,
        } => Err(EquilibriumError::Infeasible {
            certificate,
            infeasibility,
        }),
    }
}

/// Solves the game; start points are tried in order and the first run that
/// reaches the tolerance wins.
pub fn solve_equilibrium_detailed(
    instance: &GameInstance<'_>,
    params: &CostParameterization,
    settings: &SolverSettings,
) -> Result<SolveOutcome, EquilibriumError> {
    settings.validate()?;
    check_params(instance, params)?;
    let feasible = feasible_point(instance)?;
    let problem = Problem::new(instance, params);
    let run_cfg = run_settings(settings);
    let mut trace = Vec::new();
    let mut best: Option<(EquilibriumSolution, KktResidualReport)> = None;
    for &start in &settings.start_points {
        let z0 = start_vector(&problem, instance, params, start, &feasible);
        if settings.trace {
            trace.push(alloc::format!("start {}", start.label()));
        }
        let run = newton::run(&problem, z0, &run_cfg, settings.trace.then_some(&mut trace));
        if run.report.max() <= settings.tolerance {
            return Ok(SolveOutcome {
                solution: run.best,
                report: run.report,
                start,
                iterations: run.iterations,
                trace,
            });
        }
        if best.as_ref().map_or(true, |(_, r)| run.report.max() < r.max()) {
            best = Some((run.best, run.report));
        }
    }
    let (best, report) = best.expect("at least one start point");
    Err(EquilibriumError::DidNotConverge {
        best: Box::new(best),
        report,
    })
}

pub fn solve_equilibrium(
    instance: &GameInstance<'_>,
    params: &CostParameterization,
    settings: &SolverSettings,
) -> Result<EquilibriumSolution, EquilibriumError> {
    solve_equilibrium_detailed(instance, params, settings).map(|o| o.solution)
}

/// One start point's result inside a [`MultiStartReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct StartRun {
    pub start: StartPoint,
    pub converged: bool,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub flows: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiStartReport {
    pub runs: Vec<StartRun>,
    /// Smallest eigenvalue of the symmetric part of the interaction matrix.
    pub min_eig_symmetric_part: f64,
    /// Positive definite symmetric part, so the equilibrium is unique.
    pub uniqueness_expected: bool,
    /// Largest infinity-norm flow difference between converged runs.
    pub max_flow_disagreement: f64,
}

impl MultiStartReport {
    /// Disagreement is only a defect when uniqueness is guaranteed.
    pub fn consistent(&self, tolerance: f64) -> bool {
        !self.uniqueness_expected || self.max_flow_disagreement <= tolerance
    }
}

/// Runs every configured start point to completion and compares the flows.
pub fn multistart(
    instance: &GameInstance<'_>,
    params: &CostParameterization,
    settings: &SolverSettings,
) -> Result<MultiStartReport, EquilibriumError> {
    settings.validate()?;
    check_params(instance, params)?;
    let spectral = spectral_check(params, instance.players)?;
    let feasible = feasible_point(instance)?;
    let problem = Problem::new(instance, params);
    let run_cfg = run_settings(settings);
    let mut runs = Vec::new();
    for &start in &settings.start_points {
        let z0 = start_vector(&problem, instance, params, start, &feasible);
        let run = newton::run(&problem, z0, &run_cfg, None);
        runs.push(StartRun {
            start,
            converged: run.report.max() <= settings.tolerance,
            kkt_residual: run.report.max(),
            iterations: run.iterations,
            flows: run.best.flows,
        });
    }
    let mut disagreement: f64 = 0.0;
    let converged: Vec<&StartRun> = runs.iter().filter(|r| r.converged).collect();
    for (k, a) in converged.iter().enumerate() {
        for b in &converged[k + 1..] {
            for (x, y) in a.flows.iter().zip(&b.flows) {
                disagreement = disagreement.max((x - y).abs());
            }
        }
    }
    Ok(MultiStartReport {
        runs,
        min_eig_symmetric_part: spectral.min_eig_symmetric_part,
        uniqueness_expected: spectral.is_positive_definite,
        max_flow_disagreement: disagreement,
    })
}

#[cfg(test)]
mod tests;
