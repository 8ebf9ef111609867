//! Seeded experiment pipeline: draw costs, observe equilibria on every OD
//! pair, recover costs from the observations, re-simulate under the
//! recovered costs and score the trial.
//!
//! Every trial draws from its own ChaCha8 stream seeded by
//! [`stream_seed`]`(seed, group label, trial)`, so records do not depend on
//! thread count or on which other groups run.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use gnepio_core::analysis::{
    flow_error, normalized_flow_error, spectral_check, summarize_trials, FlowTensor, SpectralReport,
};
use gnepio_core::equilibrium::{solve_equilibrium_detailed, EquilibriumError, SolverSettings};
use gnepio_core::game::{CostMode, CostParameterization, GameError, GameInstance};
use gnepio_core::inverse::{
    build_residual_program, interpret_solution, InverseError, ObservationSet, ParameterBounds,
};
use gnepio_core::lp::{LpSolver, SimplexSolver};
use gnepio_core::network::{Network, NetworkError, OdPair};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formats::{self, CostsFile, FormatError, SummaryRow};
use crate::highs_backend::HighsSolver;

pub const DEFAULT_TIME_BUDGET: Duration = Duration::from_secs(600);

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("OD pair {od} admits no flow under the joint capacity")]
    InfeasiblePair { od: OdPair },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error(transparent)]
    Inverse(#[from] InverseError),
}

fn config_err(message: impl Into<String>) -> ExperimentError {
    ExperimentError::Config(message.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkSpec {
    /// Square grid with this many nodes per side.
    Grid(usize),
    File(PathBuf),
}

impl NetworkSpec {
    pub fn load(&self) -> Result<Network, ExperimentError> {
        Ok(match self {
            NetworkSpec::Grid(side) => Network::grid(*side)?,
            NetworkSpec::File(path) => formats::read_network(path)?,
        })
    }
}

/// Joint arc capacity as a function of the player count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaRule {
    HalfN,
    FullN,
    /// One value for every arc, or one per arc.
    Explicit(Vec<f64>),
}

impl AlphaRule {
    pub fn capacity(&self, players: usize, arcs: usize) -> Result<Vec<f64>, ExperimentError> {
        let cap = match self {
            AlphaRule::HalfN => vec![0.5 * players as f64; arcs],
            AlphaRule::FullN => vec![players as f64; arcs],
            AlphaRule::Explicit(v) if v.len() == 1 => vec![v[0]; arcs],
            AlphaRule::Explicit(v) if v.len() == arcs => v.clone(),
            AlphaRule::Explicit(v) => {
                return Err(config_err(format!("explicit alpha has {} entries for {arcs} arcs", v.len())));
            }
        };
        if cap.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(config_err("alpha must be positive and finite"));
        }
        Ok(cap)
    }

    /// The alpha part of a group label: the scalar capacity, or `explicit`
    /// when arcs differ.
    pub fn label(&self, players: usize) -> String {
        let value = match self {
            AlphaRule::HalfN => 0.5 * players as f64,
            AlphaRule::FullN => players as f64,
            AlphaRule::Explicit(v) if v.iter().all(|a| *a == v[0]) && !v.is_empty() => v[0],
            AlphaRule::Explicit(_) => return "explicit".into(),
        };
        format!("{value:?}")
    }
}

/// Closed intervals for the interaction and base costs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostIntervals {
    pub c_int: (f64, f64),
    pub c_base: (f64, f64),
}

impl Default for CostIntervals {
    fn default() -> Self {
        CostIntervals { c_int: (1.0, 5.0), c_base: (5.0, 20.0) }
    }
}

impl CostIntervals {
    fn validate(&self, what: &str) -> Result<(), ExperimentError> {
        let ok = |(lo, hi): (f64, f64), min_ok: bool| lo.is_finite() && hi.is_finite() && lo <= hi && min_ok;
        if !ok(self.c_int, self.c_int.0 > 0.0) || !ok(self.c_base, self.c_base.0 >= 0.0) {
            return Err(config_err(format!(
                "{what}: need 0 < C low ≤ C high and 0 ≤ c̄ low ≤ c̄ high, got {:?} / {:?}",
                self.c_int, self.c_base
            )));
        }
        Ok(())
    }

    fn within(&self, outer: &CostIntervals) -> bool {
        let inside = |(a, b): (f64, f64), (lo, hi): (f64, f64)| lo <= a && b <= hi;
        inside(self.c_int, outer.c_int) && inside(self.c_base, outer.c_base)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpBackend {
    Highs,
    Simplex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub networks: Vec<NetworkSpec>,
    pub cost_mode: CostMode,
    pub players: Vec<usize>,
    pub alpha_rules: Vec<AlphaRule>,
    pub trials: usize,
    pub seed: u64,
    /// Box constraints of the residual program.
    pub bounds: CostIntervals,
    /// Where true costs are drawn from.
    pub intervals: CostIntervals,
    pub solver: SolverSettings,
    /// Parallel OD solves.
    pub threads: usize,
    /// Per trial, wall clock.
    pub time_budget: Duration,
    pub lp_backend: LpBackend,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Grids 2x2 to 4x4, N ∈ {2, 5}, α ∈ {N/2, N}, three trials.
    pub fn desk(cost_mode: CostMode, seed: u64) -> Self {
        ExperimentConfig {
            networks: (2..=4).map(NetworkSpec::Grid).collect(),
            cost_mode,
            players: vec![2, 5],
            alpha_rules: vec![AlphaRule::HalfN, AlphaRule::FullN],
            trials: 3,
            seed,
            bounds: CostIntervals::default(),
            intervals: CostIntervals::default(),
            solver: SolverSettings::default(),
            threads: default_threads(),
            time_budget: DEFAULT_TIME_BUDGET,
            lp_backend: LpBackend::Highs,
            output_dir: None,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.networks.is_empty() {
            return Err(config_err("no networks"));
        }
        if self.players.is_empty() {
            return Err(config_err("player list is empty"));
        }
        if self.players.contains(&0) {
            return Err(config_err("player counts must be positive"));
        }
        if self.alpha_rules.is_empty() {
            return Err(config_err("no alpha rules"));
        }
        if self.trials == 0 {
            return Err(config_err("trials must be at least 1"));
        }
        if self.threads == 0 {
            return Err(config_err("threads must be at least 1"));
        }
        if self.time_budget.is_zero() {
            return Err(config_err("time budget must be positive"));
        }
        self.bounds.validate("bounds")?;
        self.intervals.validate("cost intervals")?;
        if !self.intervals.within(&self.bounds) {
            return Err(config_err("cost intervals must lie within the bounds"));
        }
        if !(self.solver.tolerance > 0.0) {
            return Err(config_err("solver tolerance must be positive"));
        }
        Ok(())
    }

    /// Every (network, players, alpha) combination, networks outermost.
    pub fn groups(&self) -> Result<Vec<Group>, ExperimentError> {
        self.validate()?;
        let mut groups = Vec::new();
        for spec in &self.networks {
            let network = spec.load()?;
            let size = match spec {
                NetworkSpec::Grid(side) => side.to_string(),
                NetworkSpec::File(_) => network.name().to_string(),
            };
            for &players in &self.players {
                for rule in &self.alpha_rules {
                    let capacity = rule.capacity(players, network.arc_count())?;
                    groups.push(Group {
                        label: format!("{size}/{players}/{}", rule.label(players)),
                        network: network.clone(),
                        players,
                        capacity,
                    });
                }
            }
        }
        Ok(groups)
    }

    fn echo(&self) -> ConfigEcho {
        ConfigEcho {
            networks: self.networks.clone(),
            cost_mode: self.cost_mode.label().to_string(),
            players: self.players.clone(),
            alpha_rules: self.alpha_rules.clone(),
            trials: self.trials,
            seed: self.seed,
            bounds: self.bounds,
            intervals: self.intervals,
            tolerance: self.solver.tolerance,
            max_iterations: self.solver.max_iterations,
            threads: self.threads,
            time_budget_seconds: self.time_budget.as_secs_f64(),
            lp_backend: self.lp_backend,
        }
    }

    fn lp_solver(&self, remaining: Duration) -> Box<dyn LpSolver> {
        match self.lp_backend {
            LpBackend::Highs => Box::new(HighsSolver::with_time_limit(remaining.as_secs_f64().max(1.0))),
            LpBackend::Simplex => Box::new(SimplexSolver::default()),
        }
    }
}

pub fn default_threads() -> usize {
    thread::available_parallelism().map_or(1, |n| n.get())
}

/// The config as echoed into reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub networks: Vec<NetworkSpec>,
    pub cost_mode: String,
    pub players: Vec<usize>,
    pub alpha_rules: Vec<AlphaRule>,
    pub trials: usize,
    pub seed: u64,
    pub bounds: CostIntervals,
    pub intervals: CostIntervals,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub threads: usize,
    pub time_budget_seconds: f64,
    pub lp_backend: LpBackend,
}

/// One cell of the experiment grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    /// `size/players/alpha`, e.g. `4/10/5.0`.
    pub label: String,
    pub network: Network,
    pub players: usize,
    pub capacity: Vec<f64>,
}

// --------------------------------------------------------------- randomness

/// Seed of the substream for one trial of one group.
///
/// FNV-1a over the label bytes, folded with the seed and trial index through
/// the SplitMix64 finaliser.
pub fn stream_seed(seed: u64, label: &str, trial: usize) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    mix(mix(mix(seed) ^ h) ^ trial as u64)
}

pub fn trial_rng(seed: u64, label: &str, trial: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, label, trial))
}

/// Uniform draws on the closed intervals.
///
/// Shared mode draws one `diag C` then one `c̄`; per-player mode draws all
/// `N` interaction rows, then all `N` base rows.
pub fn randomize_costs<R: Rng + ?Sized>(
    rng: &mut R,
    mode: CostMode,
    intervals: &CostIntervals,
    players: usize,
    arcs: usize,
) -> Result<CostParameterization, GameError> {
    let mut draw = |(lo, hi): (f64, f64)| -> Vec<f64> { (0..arcs).map(|_| rng.random_range(lo..=hi)).collect() };
    match mode {
        CostMode::SharedAcrossPlayers => {
            let c = draw(intervals.c_int);
            let cb = draw(intervals.c_base);
            CostParameterization::shared(c, cb, players)
        }
        CostMode::PerPlayer => {
            let c = (0..players).map(|_| draw(intervals.c_int)).collect();
            let cb = (0..players).map(|_| draw(intervals.c_base)).collect();
            CostParameterization::per_player(c, cb)
        }
    }
}

// ------------------------------------------------------------ forward batch

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub converged: bool,
    /// Best KKT residual reached; `None` when the pair was never attempted.
    pub kkt_residual: Option<f64>,
    pub iterations: usize,
    pub timed_out: bool,
}

/// Forward solves for a list of OD pairs, in pair order.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationBatch {
    pub pairs: Vec<OdPair>,
    /// Stacked `N × n` flows; `None` for pairs that did not converge.
    pub flows: Vec<Option<Vec<f64>>>,
    pub outcomes: Vec<PairOutcome>,
}

impl ObservationBatch {
    pub fn all_converged(&self) -> bool {
        self.outcomes.iter().all(|o| o.converged)
    }

    pub fn converged_flags(&self) -> Vec<bool> {
        self.outcomes.iter().map(|o| o.converged).collect()
    }

    /// Observation set over the converged pairs.
    pub fn observation_set(
        &self,
        network: &Network,
        players: usize,
        capacity: &[f64],
    ) -> Result<ObservationSet, InverseError> {
        let (pairs, flows) = self
            .pairs
            .iter()
            .zip(&self.flows)
            .filter_map(|(od, x)| x.as_ref().map(|x| (*od, x.clone())))
            .unzip();
        ObservationSet::new(network.clone(), players, capacity.to_vec(), pairs, flows)
    }
}

/// Settings shared by the solves of one batch.
#[derive(Debug, Clone)]
pub struct ForwardBatch<'a> {
    pub network: &'a Network,
    pub players: usize,
    pub capacity: &'a [f64],
    pub settings: &'a SolverSettings,
    pub threads: usize,
    /// Pairs not started by then are reported as timed out.
    pub deadline: Option<Instant>,
}

impl ForwardBatch<'_> {
    /// Solves every pair in `pairs`. Non-converged pairs are flagged; an
    /// infeasible pair aborts the batch.
    pub fn run(&self, params: &CostParameterization, pairs: &[OdPair]) -> Result<ObservationBatch, ExperimentError> {
        type Solved = Result<(Option<Vec<f64>>, PairOutcome), ExperimentError>;
        let next = AtomicUsize::new(0);
        let solve_one = |k: usize| -> Solved {
            if self.deadline.is_some_and(|d| Instant::now() >= d) {
                let outcome = PairOutcome { converged: false, kkt_residual: None, iterations: 0, timed_out: true };
                return Ok((None, outcome));
            }
            let instance = GameInstance::new(self.network, self.players, self.capacity.to_vec(), pairs[k])?;
            match solve_equilibrium_detailed(&instance, params, self.settings) {
                Ok(out) => {
                    let outcome = PairOutcome {
                        converged: true,
                        kkt_residual: Some(out.solution.kkt_residual),
                        iterations: out.iterations,
                        timed_out: false,
                    };
                    Ok((Some(out.solution.flows), outcome))
                }
                Err(EquilibriumError::DidNotConverge { best, .. }) => Ok((
                    None,
                    PairOutcome {
                        converged: false,
                        kkt_residual: Some(best.kkt_residual),
                        iterations: self.settings.max_iterations,
                        timed_out: false,
                    },
                )),
                Err(EquilibriumError::Infeasible { .. }) => Err(ExperimentError::InfeasiblePair { od: pairs[k] }),
                Err(e) => Err(e.into()),
            }
        };
        let workers = self.threads.clamp(1, pairs.len().max(1));
        let mut solved: Vec<(usize, Solved)> = thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|_| {
                    s.spawn(|| {
                        let mut local = Vec::new();
                        loop {
                            let k = next.fetch_add(1, Ordering::Relaxed);
                            if k >= pairs.len() {
                                break local;
                            }
                            local.push((k, solve_one(k)));
                        }
                    })
                })
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("forward worker panicked")).collect()
        });
        solved.sort_by_key(|(k, _)| *k);
        let mut flows = Vec::with_capacity(pairs.len());
        let mut outcomes = Vec::with_capacity(pairs.len());
        for (_, result) in solved {
            let (x, outcome) = result?;
            flows.push(x);
            outcomes.push(outcome);
        }
        Ok(ObservationBatch { pairs: pairs.to_vec(), flows, outcomes })
    }
}

/// OD pairs joined by a directed path, in `Network::od_pairs` order. On
/// strongly connected networks (grids, Sioux Falls) this is every pair.
pub fn routable_pairs(network: &Network) -> Vec<OdPair> {
    let reach: Vec<Vec<Option<usize>>> = (0..network.node_count()).map(|o| network.hop_distances_from(o)).collect();
    network.od_pairs().into_iter().filter(|od| reach[od.origin][od.destination].is_some()).collect()
}

/// Observes the game on every routable OD pair of `network`,
/// single-threaded.
pub fn generate_observations(
    network: &Network,
    params: &CostParameterization,
    players: usize,
    capacity: &[f64],
    settings: &SolverSettings,
) -> Result<ObservationBatch, ExperimentError> {
    let batch = ForwardBatch { network, players, capacity, settings, threads: 1, deadline: None };
    batch.run(params, &routable_pairs(network))
}

// -------------------------------------------------------------------- trials

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub forward_batch: f64,
    pub lp_build: f64,
    pub lp_solve: f64,
    pub resimulation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralRecord {
    pub min_eig_symmetric_part: f64,
    pub is_positive_definite: bool,
    pub modulus_lower_bound: Option<f64>,
}

impl From<SpectralReport> for SpectralRecord {
    fn from(r: SpectralReport) -> Self {
        SpectralRecord {
            min_eig_symmetric_part: r.min_eig_symmetric_part,
            is_positive_definite: r.is_positive_definite,
            modulus_lower_bound: r.modulus_lower_bound,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Complete,
    Incomplete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub group: String,
    pub trial: usize,
    pub stream_seed: u64,
    pub status: TrialStatus,
    /// Why the trial is incomplete; empty when complete.
    pub issues: Vec<String>,
    pub true_params: CostsFile,
    pub recovered_params: Option<CostsFile>,
    pub io_objective: Option<f64>,
    /// The LP optimum fell below `−1e-9`.
    pub negative_objective: bool,
    pub flow_error: Option<f64>,
    pub normalized_flow_error: Option<f64>,
    /// Frobenius norm of the `diag C` difference; one matrix in shared mode,
    /// all `N` stacked in per-player mode.
    pub c_gap: Option<f64>,
    /// Euclidean norm of the `c̄` difference, stacked like `c_gap`.
    pub c_base_gap: Option<f64>,
    pub lp_variables: Option<usize>,
    pub lp_rows: Option<usize>,
    pub lp_iterations: Option<usize>,
    /// Per routable OD pair, in [`routable_pairs`] order.
    pub observed: Vec<PairOutcome>,
    /// Per observed pair, in observation order.
    pub resimulated: Vec<PairOutcome>,
    pub spectral: SpectralRecord,
    pub timings: PhaseTimes,
}

impl TrialRecord {
    pub fn is_complete(&self) -> bool {
        self.status == TrialStatus::Complete
    }

    /// The record with wall times zeroed, for determinism comparisons.
    pub fn without_timings(&self) -> TrialRecord {
        TrialRecord { timings: PhaseTimes::default(), ..self.clone() }
    }
}

fn parameter_gaps(truth: &CostParameterization, recovered: &CostParameterization) -> (f64, f64) {
    let rows = match truth.mode() {
        CostMode::SharedAcrossPlayers => 1,
        CostMode::PerPlayer => truth.players(),
    };
    let gap = |a: &[Vec<f64>], b: &[Vec<f64>]| {
        a[..rows]
            .iter()
            .zip(&b[..rows])
            .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)))
            .sum::<f64>()
            .sqrt()
    };
    (
        gap(truth.c_int_rows(), recovered.c_int_rows()),
        gap(truth.c_base_rows(), recovered.c_base_rows()),
    )
}

/// Runs one trial of `group`. Failures of any phase end up in
/// [`TrialRecord::issues`] rather than in an error.
pub fn run_trial(config: &ExperimentConfig, group: &Group, trial: usize) -> Result<TrialRecord, ExperimentError> {
    config.validate()?;
    let started = Instant::now();
    let deadline = started + config.time_budget;
    let (net, players) = (&group.network, group.players);
    let seed = stream_seed(config.seed, &group.label, trial);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = randomize_costs(&mut rng, config.cost_mode, &config.intervals, players, net.arc_count())?;
    let spectral = spectral_check(&truth, players)?;
    let bounds = ParameterBounds::uniform(net.arc_count(), config.bounds.c_int, config.bounds.c_base)?;

    let mut record = TrialRecord {
        group: group.label.clone(),
        trial,
        stream_seed: seed,
        status: TrialStatus::Incomplete,
        issues: Vec::new(),
        true_params: CostsFile::from_params(&truth),
        recovered_params: None,
        io_objective: None,
        negative_objective: false,
        flow_error: None,
        normalized_flow_error: None,
        c_gap: None,
        c_base_gap: None,
        lp_variables: None,
        lp_rows: None,
        lp_iterations: None,
        observed: Vec::new(),
        resimulated: Vec::new(),
        spectral: spectral.into(),
        timings: PhaseTimes::default(),
    };
    let batch = ForwardBatch {
        network: net,
        players,
        capacity: &group.capacity,
        settings: &config.solver,
        threads: config.threads,
        deadline: Some(deadline),
    };

    let clock = Instant::now();
    let observed = batch.run(&truth, &routable_pairs(net));
    record.timings.forward_batch = clock.elapsed().as_secs_f64();
    let observed = match observed {
        Ok(b) => b,
        Err(e) => {
            record.issues.push(format!("forward batch: {e}"));
            return Ok(record);
        }
    };
    record.observed = observed.outcomes.clone();
    let dropped = observed.outcomes.iter().filter(|o| !o.converged).count();
    if dropped > 0 {
        record.issues.push(format!("{dropped} OD pairs excluded from the observations"));
    }
    let obs = match observed.observation_set(net, players, &group.capacity) {
        Ok(obs) => obs,
        Err(e) => {
            record.issues.push(format!("observations: {e}"));
            return Ok(record);
        }
    };

    let clock = Instant::now();
    let built = build_residual_program(&obs, &bounds, config.cost_mode);
    record.timings.lp_build = clock.elapsed().as_secs_f64();
    let (lp, index) = match built {
        Ok(b) => b,
        Err(e) => {
            record.issues.push(format!("LP build: {e}"));
            return Ok(record);
        }
    };
    record.lp_variables = Some(lp.num_variables());
    record.lp_rows = Some(lp.num_rows());

    let remaining = deadline.saturating_duration_since(Instant::now());
    if remaining.is_zero() {
        record.issues.push("time budget exhausted before the LP solve".into());
        return Ok(record);
    }
    let clock = Instant::now();
    let result = config.lp_solver(remaining).solve(&lp);
    record.timings.lp_solve = clock.elapsed().as_secs_f64();
    record.lp_iterations = Some(result.iterations);
    let recovered = match interpret_solution(&obs, &bounds, &index, result) {
        Ok(r) => r,
        Err(e) => {
            record.issues.push(format!("recovery: {e}"));
            return Ok(record);
        }
    };
    record.io_objective = Some(recovered.io_objective);
    record.negative_objective = recovered.negative_objective;
    record.recovered_params = Some(CostsFile::from_params(&recovered.params));
    let (c_gap, c_base_gap) = parameter_gaps(&truth, &recovered.params);
    record.c_gap = Some(c_gap);
    record.c_base_gap = Some(c_base_gap);

    let clock = Instant::now();
    let again = batch.run(&recovered.params, obs.pairs());
    record.timings.resimulation = clock.elapsed().as_secs_f64();
    let again = match again {
        Ok(b) => b,
        Err(e) => {
            record.issues.push(format!("re-simulation: {e}"));
            return Ok(record);
        }
    };
    record.resimulated = again.outcomes.clone();
    let failed = again.outcomes.iter().filter(|o| !o.converged).count();
    if failed > 0 {
        record.issues.push(format!("{failed} OD pairs did not converge under the recovered costs"));
        return Ok(record);
    }
    let original: Vec<Vec<f64>> = (0..obs.len()).map(|k| obs.flows(k).to_vec()).collect();
    let resimulated: Vec<Vec<f64>> = again.flows.into_iter().map(|x| x.expect("converged")).collect();
    let a = FlowTensor::from_pairs(players, net.arc_count(), &original).expect("observation shape");
    let b = FlowTensor::from_pairs(players, net.arc_count(), &resimulated).expect("observation shape");
    record.flow_error = Some(flow_error(&a, &b).expect("same shape"));
    record.normalized_flow_error = Some(normalized_flow_error(&a, &b).expect("same shape"));
    if record.negative_objective {
        record.issues.push("residual objective below the tolerance band".into());
    }
    if started.elapsed() > config.time_budget {
        record.issues.push("time budget exceeded".into());
    }
    if record.issues.is_empty() {
        record.status = TrialStatus::Complete;
    }
    Ok(record)
}

// -------------------------------------------------------------------- groups

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub label: String,
    pub network: String,
    pub players: usize,
    pub capacity: Vec<f64>,
    pub config: ConfigEcho,
    pub records: Vec<TrialRecord>,
    pub completed: usize,
    pub incomplete: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub groups: Vec<GroupReport>,
    pub summaries: Vec<SummaryRow>,
}

impl ExperimentReport {
    pub fn records(&self) -> impl Iterator<Item = &TrialRecord> {
        self.groups.iter().flat_map(|g| g.records.iter())
    }
}

pub fn run_group(config: &ExperimentConfig, group: &Group) -> Result<GroupReport, ExperimentError> {
    let records = (0..config.trials)
        .map(|t| run_trial(config, group, t))
        .collect::<Result<Vec<_>, _>>()?;
    let completed = records.iter().filter(|r| r.is_complete()).count();
    Ok(GroupReport {
        label: group.label.clone(),
        network: group.network.name().to_string(),
        players: group.players,
        capacity: group.capacity.clone(),
        config: config.echo(),
        incomplete: records.len() - completed,
        completed,
        records,
    })
}

/// Runs every group and summarises the metrics; writes the report when the
/// config names an output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    let groups = config
        .groups()?
        .iter()
        .map(|g| run_group(config, g))
        .collect::<Result<Vec<_>, _>>()?;
    let report = ExperimentReport { summaries: summarize_groups(&groups), groups };
    if let Some(dir) = &config.output_dir {
        write_report(dir, &report)?;
    }
    Ok(report)
}

/// Metrics summarised per group, as `(name, accessor)`.
pub const SUMMARY_METRICS: [(&str, fn(&TrialRecord) -> Option<f64>); 8] = [
    ("io_objective", |r| r.io_objective),
    ("flow_error", |r| r.flow_error),
    ("normalized_flow_error", |r| r.normalized_flow_error),
    ("c_gap", |r| r.c_gap),
    ("c_base_gap", |r| r.c_base_gap),
    ("forward_seconds", |r| Some(r.timings.forward_batch)),
    ("lp_solve_seconds", |r| Some(r.timings.lp_solve)),
    ("resimulation_seconds", |r| Some(r.timings.resimulation)),
];

/// Boxplot rows over the completed trials of each group. Groups without a
/// completed trial contribute nothing.
pub fn summarize_groups(groups: &[GroupReport]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for (metric, get) in SUMMARY_METRICS {
        for g in groups {
            let values: Vec<f64> = g.records.iter().filter(|r| r.is_complete()).filter_map(get).collect();
            if let Ok(summary) = summarize_trials(&values) {
                rows.push(SummaryRow { metric: metric.to_string(), group: g.label.clone(), summary });
            }
        }
    }
    rows
}

/// File-name form of a group label.
pub fn group_file_stem(label: &str) -> String {
    let safe: String = label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' }).collect();
    format!("group_{safe}")
}

/// One JSON document per group plus `summary.csv`.
pub fn write_report(dir: &Path, report: &ExperimentReport) -> Result<(), FormatError> {
    for g in &report.groups {
        formats::write_json(&dir.join(format!("{}.json", group_file_stem(&g.label))), g)?;
    }
    formats::write_summary(&dir.join("summary.csv"), &report.summaries)
}

pub fn read_group_report(path: &Path) -> Result<GroupReport, FormatError> {
    let text = formats::read_text(path)?;
    serde_json::from_str(&text).map_err(|source| FormatError::Json { path: path.to_path_buf(), source })
}
