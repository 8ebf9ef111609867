//! Inverse optimisation: recover cost parameters from observed equilibria by
//! minimising the L1 norm of the KKT residuals.
//!
//! For every observation `k` (one OD pair) and player `i` the program carries
//! potentials `v_i^k ∈ ℝ^m`, multipliers `u_i^k ≥ 0` and one shared capacity
//! multiplier `ū^k ≥ 0`. With the flows fixed as data every residual is affine
//! in the unknowns, so the whole model is a linear program:
//!
//! ```text
//! min Σ_k [ Σ_i ‖C_i(2x_i^k + Σ_{j≠i} x_j^k) + c̄_i + Dᵀv_i^k − u_i^k + ū^k‖₁
//!         + Σ_i |x_i^kᵀ u_i^k| + |(α − Σ_j x_j^k)ᵀ ū^k| ]
//! ```
//!
//! subject to box bounds on `diag(C_i)` and `c̄_i`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use thiserror::Error;

use crate::game::{CostMode, CostParameterization, GameError};
use crate::lp::{AffineExpr, L1Group, LinearProgram, LpError, LpResult, LpSolver, LpStatus};
use crate::network::{Network, OdPair};

/// Slack allowed when checking that observations are primal feasible.
pub const OBSERVATION_TOLERANCE: f64 = 1e-6;

/// Optimal values below this are reported as suspicious rather than clamped.
pub const NEGATIVE_OBJECTIVE_FLAG: f64 = -1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InverseError {
    #[error("observation set is empty")]
    Empty,
    #[error("observation {index}: {reason}")]
    InvalidObservation { index: usize, reason: String },
    #[error("invalid parameter bounds: {0}")]
    InvalidBounds(String),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Build(#[from] LpError),
    #[error("residual program ended {status:?}: {diagnostics}")]
    Solve { status: LpStatus, diagnostics: String },
    #[error("grid variable counts need a perfect-square node count, got {0}")]
    NotSquare(u64),
}

/// Observed equilibrium flows, one entry per OD pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    network: Network,
    players: usize,
    capacity: Vec<f64>,
    pairs: Vec<OdPair>,
    /// Per pair, stacked `N × n` player-major.
    flows: Vec<Vec<f64>>,
}

impl ObservationSet {
    /// Validates every observation: nonnegative, conserving unit demand for
    /// each player and within capacity, all up to [`OBSERVATION_TOLERANCE`].
    pub fn new(
        network: Network,
        players: usize,
        capacity: Vec<f64>,
        pairs: Vec<OdPair>,
        flows: Vec<Vec<f64>>,
    ) -> Result<Self, InverseError> {
        if pairs.is_empty() {
            return Err(InverseError::Empty);
        }
        if players == 0 {
            return Err(GameError::NoPlayers.into());
        }
        let (n, m) = (network.arc_count(), network.node_count());
        let invalid = |index: usize, reason: String| InverseError::InvalidObservation { index, reason };
        if capacity.len() != n {
            return Err(InverseError::InvalidBounds(alloc::format!(
                "capacity has {} entries for {n} arcs",
                capacity.len()
            )));
        }
        if flows.len() != pairs.len() {
            return Err(invalid(
                flows.len().min(pairs.len()),
                alloc::format!("{} flow blocks for {} OD pairs", flows.len(), pairs.len()),
            ));
        }
        let mut dx = vec![0.0; m];
        for (k, (od, x)) in pairs.iter().zip(&flows).enumerate() {
            if od.origin >= m || od.destination >= m {
                return Err(invalid(k, "OD pair outside the network".into()));
            }
            if x.len() != players * n {
                return Err(invalid(k, alloc::format!("expected {} flows, got {}", players * n, x.len())));
            }
            if let Some(bad) = x.iter().position(|v| !v.is_finite() || *v < -OBSERVATION_TOLERANCE) {
                return Err(invalid(k, alloc::format!("flow entry {bad} is negative or not finite")));
            }
            let demand = network.demand_vector(*od);
            for i in 0..players {
                let xi = &x[i * n..(i + 1) * n];
                if xi.iter().all(|v| *v <= 0.0) {
                    return Err(invalid(k, alloc::format!("player {i} carries no flow")));
                }
                network.apply_incidence(xi, &mut dx);
                let err = dx.iter().zip(&demand).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                if err > OBSERVATION_TOLERANCE {
                    return Err(invalid(k, alloc::format!("player {i} violates conservation by {err:.3e}")));
                }
            }
            for a in 0..n {
                let total: f64 = (0..players).map(|i| x[i * n + a]).sum();
                if total > capacity[a] + OBSERVATION_TOLERANCE {
                    return Err(invalid(k, alloc::format!("arc {a} exceeds capacity by {:.3e}", total - capacity[a])));
                }
            }
        }
        Ok(ObservationSet {
            network,
            players,
            capacity,
            pairs,
            flows,
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn players(&self) -> usize {
        self.players
    }

    pub fn capacity(&self) -> &[f64] {
        &self.capacity
    }

    pub fn pairs(&self) -> &[OdPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Stacked flows of observation `k`.
    pub fn flows(&self, k: usize) -> &[f64] {
        &self.flows[k]
    }

    /// The same observations in a different order; `order` is a permutation
    /// of `0..len()`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        ObservationSet {
            network: self.network.clone(),
            players: self.players,
            capacity: self.capacity.clone(),
            pairs: order.iter().map(|&k| self.pairs[k]).collect(),
            flows: order.iter().map(|&k| self.flows[k].clone()).collect(),
        }
    }
}

/// Box bounds `L1 ≤ diag(C_i) ≤ U1`, `L2 ≤ c̄_i ≤ U2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterBounds {
    pub c_int_lower: Vec<f64>,
    pub c_int_upper: Vec<f64>,
    pub c_base_lower: Vec<f64>,
    pub c_base_upper: Vec<f64>,
}

impl ParameterBounds {
    pub fn new(
        c_int_lower: Vec<f64>,
        c_int_upper: Vec<f64>,
        c_base_lower: Vec<f64>,
        c_base_upper: Vec<f64>,
    ) -> Result<Self, InverseError> {
        let n = c_int_lower.len();
        if [&c_int_upper, &c_base_lower, &c_base_upper].iter().any(|v| v.len() != n) {
            return Err(InverseError::InvalidBounds("bound vectors differ in length".into()));
        }
        for (name, lo, hi) in [("interaction", &c_int_lower, &c_int_upper), ("base", &c_base_lower, &c_base_upper)] {
            for a in 0..n {
                if !(lo[a] > 0.0 && lo[a] <= hi[a] && hi[a].is_finite()) {
                    return Err(InverseError::InvalidBounds(alloc::format!(
                        "{name} bounds on arc {a} are [{}, {}]",
                        lo[a],
                        hi[a]
                    )));
                }
            }
        }
        Ok(ParameterBounds {
            c_int_lower,
            c_int_upper,
            c_base_lower,
            c_base_upper,
        })
    }

    /// The same interval on every arc.
    pub fn uniform(arcs: usize, c_int: (f64, f64), c_base: (f64, f64)) -> Result<Self, InverseError> {
        ParameterBounds::new(
            vec![c_int.0; arcs],
            vec![c_int.1; arcs],
            vec![c_base.0; arcs],
            vec![c_base.1; arcs],
        )
    }

    pub fn arcs(&self) -> usize {
        self.c_int_lower.len()
    }

    pub fn contains(&self, params: &CostParameterization) -> bool {
        let inside = |v: &[f64], lo: &[f64], hi: &[f64]| {
            v.iter().zip(lo.iter().zip(hi)).all(|(x, (l, h))| *l <= *x && *x <= *h)
        };
        (0..params.players()).all(|i| {
            inside(params.c_int(i), &self.c_int_lower, &self.c_int_upper)
                && inside(params.c_base(i), &self.c_base_lower, &self.c_base_upper)
        })
    }
}

/// Where every variable family of the residual program lives.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualIndex {
    pub mode: CostMode,
    pub players: usize,
    /// One range per parameter row: a single row in shared mode, `N` otherwise.
    pub c_int: Vec<Range<usize>>,
    pub c_base: Vec<Range<usize>>,
    /// Indexed `k * N + i`, each of length `m`.
    pub v: Vec<Range<usize>>,
    /// Indexed `k * N + i`, each of length `n`.
    pub u: Vec<Range<usize>>,
    /// One per observation, length `n`.
    pub ubar: Vec<Range<usize>>,
    /// Per observation: `N · n` stationarity rows, player-major.
    pub stationarity: Vec<L1Group>,
    /// Per observation: one scalar `x_iᵀu_i` per player.
    pub complementarity_flow: Vec<L1Group>,
    /// Per observation: the scalar `(α − Σx)ᵀū`.
    pub complementarity_capacity: Vec<L1Group>,
}

impl ResidualIndex {
    fn row(&self, player: usize) -> usize {
        match self.mode {
            CostMode::SharedAcrossPlayers => 0,
            CostMode::PerPlayer => player,
        }
    }
}

/// Variables of the compiled program, by family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct VariableCount {
    pub c_int: usize,
    pub c_base: usize,
    pub v: usize,
    pub u: usize,
    pub ubar: usize,
    pub stationarity_split: usize,
    pub complementarity_flow_split: usize,
    pub complementarity_capacity_split: usize,
}

impl VariableCount {
    pub fn total(&self) -> usize {
        self.c_int
            + self.c_base
            + self.v
            + self.u
            + self.ubar
            + self.stationarity_split
            + self.complementarity_flow_split
            + self.complementarity_capacity_split
    }
}

/// Compiles the residual model for `obs`.
pub fn build_residual_program(
    obs: &ObservationSet,
    bounds: &ParameterBounds,
    mode: CostMode,
) -> Result<(LinearProgram, ResidualIndex), InverseError> {
    let net = &obs.network;
    let (n, m, players) = (net.arc_count(), net.node_count(), obs.players);
    if bounds.arcs() != n {
        return Err(InverseError::InvalidBounds(alloc::format!(
            "bounds cover {} arcs, network has {n}",
            bounds.arcs()
        )));
    }
    let rows = match mode {
        CostMode::SharedAcrossPlayers => 1,
        CostMode::PerPlayer => players,
    };
    let mut lp = LinearProgram::new();
    let mut index = ResidualIndex {
        mode,
        players,
        c_int: Vec::with_capacity(rows),
        c_base: Vec::with_capacity(rows),
        v: Vec::with_capacity(obs.len() * players),
        u: Vec::with_capacity(obs.len() * players),
        ubar: Vec::with_capacity(obs.len()),
        stationarity: Vec::with_capacity(obs.len()),
        complementarity_flow: Vec::with_capacity(obs.len()),
        complementarity_capacity: Vec::with_capacity(obs.len()),
    };
    let boxed = |lp: &mut LinearProgram, lo: &[f64], hi: &[f64]| {
        let start = lp.num_variables();
        for (l, h) in lo.iter().zip(hi) {
            lp.add_variable(0.0, *l, *h);
        }
        start..lp.num_variables()
    };
    for _ in 0..rows {
        let r = boxed(&mut lp, &bounds.c_int_lower, &bounds.c_int_upper);
        index.c_int.push(r);
    }
    for _ in 0..rows {
        let r = boxed(&mut lp, &bounds.c_base_lower, &bounds.c_base_upper);
        index.c_base.push(r);
    }

    let arcs = net.arcs();
    let mut exprs = Vec::with_capacity(players * n);
    for (k, x) in obs.flows.iter().enumerate() {
        for _ in 0..players {
            index.v.push(lp.add_variables(m, 0.0, f64::NEG_INFINITY, f64::INFINITY));
        }
        for _ in 0..players {
            index.u.push(lp.add_variables(n, 0.0, 0.0, f64::INFINITY));
        }
        let ubar = lp.add_variables(n, 0.0, 0.0, f64::INFINITY);
        index.ubar.push(ubar.clone());

        let total: Vec<f64> = (0..n).map(|a| (0..players).map(|i| x[i * n + a]).sum()).collect();
        exprs.clear();
        for i in 0..players {
            let (c, cb) = (&index.c_int[index.row(i)], &index.c_base[index.row(i)]);
            let (v, u) = (&index.v[k * players + i], &index.u[k * players + i]);
            for (a, arc) in arcs.iter().enumerate() {
                let load = x[i * n + a] + total[a];
                exprs.push(AffineExpr::new(
                    vec![
                        (c.start + a, load),
                        (cb.start + a, 1.0),
                        (v.start + arc.head, 1.0),
                        (v.start + arc.tail, -1.0),
                        (u.start + a, -1.0),
                        (ubar.start + a, 1.0),
                    ],
                    0.0,
                ));
            }
        }
        index.stationarity.push(lp.linearize_l1_group(&exprs, 1.0)?);

        exprs.clear();
        for i in 0..players {
            let u = &index.u[k * players + i];
            let terms = (0..n)
                .filter(|&a| x[i * n + a] != 0.0)
                .map(|a| (u.start + a, x[i * n + a]))
                .collect();
            exprs.push(AffineExpr::new(terms, 0.0));
        }
        index.complementarity_flow.push(lp.linearize_l1_group(&exprs, 1.0)?);

        let terms = (0..n)
            .map(|a| (ubar.start + a, obs.capacity[a] - total[a]))
            .filter(|&(_, slack)| slack != 0.0)
            .collect();
        let capacity = [AffineExpr::new(terms, 0.0)];
        index.complementarity_capacity.push(lp.linearize_l1_group(&capacity, 1.0)?);
    }
    Ok((lp, index))
}

/// Family sizes of a compiled program.
pub fn actual_variable_count(index: &ResidualIndex) -> VariableCount {
    let sum = |ranges: &[Range<usize>]| ranges.iter().map(|r| r.len()).sum::<usize>();
    let split = |groups: &[L1Group]| groups.iter().map(|g| 2 * g.len()).sum::<usize>();
    VariableCount {
        c_int: sum(&index.c_int),
        c_base: sum(&index.c_base),
        v: sum(&index.v),
        u: sum(&index.u),
        ubar: sum(&index.ubar),
        stationarity_split: split(&index.stationarity),
        complementarity_flow_split: split(&index.complementarity_flow),
        complementarity_capacity_split: split(&index.complementarity_capacity),
    }
}

/// Parameters and duals read back from an optimal residual program.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredParameters {
    pub params: CostParameterization,
    /// Optimal value of the residual program.
    pub io_objective: f64,
    /// Set when `io_objective` is below [`NEGATIVE_OBJECTIVE_FLAG`], which an
    /// exact optimum cannot be.
    pub negative_objective: bool,
    /// Per observation, stacked `N × m`.
    pub v: Vec<Vec<f64>>,
    /// Per observation, stacked `N × n`.
    pub u: Vec<Vec<f64>>,
    /// Per observation, length `n`.
    pub ubar: Vec<Vec<f64>>,
    /// Contributions of the three residual groups to `io_objective`.
    pub stationarity: f64,
    pub complementarity_flow: f64,
    pub complementarity_capacity: f64,
    pub variables: VariableCount,
    pub lp_iterations: usize,
}

/// Builds and solves the residual program with `solver`.
pub fn recover_parameters<S: LpSolver + ?Sized>(
    obs: &ObservationSet,
    bounds: &ParameterBounds,
    mode: CostMode,
    solver: &S,
) -> Result<RecoveredParameters, InverseError> {
    let (lp, index) = build_residual_program(obs, bounds, mode)?;
    let result = solver.solve(&lp);
    interpret_solution(obs, bounds, &index, result)
}

/// Reads recovered parameters and duals out of a solved residual program.
///
/// Split from [`recover_parameters`] so callers can time or export the
/// program between building and solving it.
pub fn interpret_solution(
    obs: &ObservationSet,
    bounds: &ParameterBounds,
    index: &ResidualIndex,
    result: LpResult,
) -> Result<RecoveredParameters, InverseError> {
    let mode = index.mode;
    if result.status != LpStatus::Optimal {
        return Err(InverseError::Solve {
            status: result.status,
            diagnostics: result.diagnostics,
        });
    }
    let z = &result.z;
    // backends may return values a rounding error outside their bounds
    let clip = |r: &Range<usize>, lo: &[f64], hi: &[f64]| -> Vec<f64> {
        z[r.clone()].iter().zip(lo.iter().zip(hi)).map(|(v, (l, h))| v.clamp(*l, *h)).collect()
    };
    let players = obs.players;
    let c_int: Vec<Vec<f64>> = (0..players)
        .map(|i| clip(&index.c_int[index.row(i)], &bounds.c_int_lower, &bounds.c_int_upper))
        .collect();
    let c_base: Vec<Vec<f64>> = (0..players)
        .map(|i| clip(&index.c_base[index.row(i)], &bounds.c_base_lower, &bounds.c_base_upper))
        .collect();
    let params = CostParameterization::new(mode, c_int, c_base)?;
    let nonneg = |r: &Range<usize>| z[r.clone()].iter().map(|v| v.max(0.0)).collect::<Vec<f64>>();
    let stack = |ranges: &[Range<usize>], k: usize, clamp: bool| -> Vec<f64> {
        ranges[k * players..(k + 1) * players]
            .iter()
            .flat_map(|r| if clamp { nonneg(r) } else { z[r.clone()].to_vec() })
            .collect()
    };
    let groups = |gs: &[L1Group]| gs.iter().map(|g| g.contribution(z)).sum::<f64>();
    let io_objective = result.objective_value;
    Ok(RecoveredParameters {
        params,
        io_objective,
        negative_objective: io_objective < NEGATIVE_OBJECTIVE_FLAG,
        v: (0..obs.len()).map(|k| stack(&index.v, k, false)).collect(),
        u: (0..obs.len()).map(|k| stack(&index.u, k, true)).collect(),
        ubar: index.ubar.iter().map(nonneg).collect(),
        stationarity: groups(&index.stationarity),
        complementarity_flow: groups(&index.complementarity_flow),
        complementarity_capacity: groups(&index.complementarity_capacity),
        variables: actual_variable_count(&index),
        lp_iterations: result.iterations,
    })
}

/// Network family for the closed-form variable counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphKind {
    /// Square grid with `m` nodes; the arc count follows from `m`.
    Grid,
    /// Any network with `a` arcs.
    General,
}

/// Closed-form variable counts of the residual program over all
/// `m(m − 1)` OD pairs, as polynomials in `m`, `N` and `a`.
pub fn predicted_variable_count(
    m: u64,
    players: u64,
    arcs: u64,
    mode: CostMode,
    kind: GraphKind,
) -> Result<i128, InverseError> {
    let (m, n, a) = (m as i128, players as i128, arcs as i128);
    Ok(match kind {
        GraphKind::Grid => {
            let s = (m as u64).isqrt() as i128;
            if s * s != m {
                return Err(InverseError::NotSquare(m as u64));
            }
            let (m3, m52, m2, m32) = (m * m * m, m * m * s, m * m, m * s);
            let (lead, tail) = match mode {
                CostMode::SharedAcrossPlayers => ((13, 12), 16),
                CostMode::PerPlayer => ((21, 20), 8),
            };
            lead.0 * n * m3 - lead.1 * n * m52 - lead.0 * n * m2 + lead.1 * n * m32 + tail * m3
                - tail * m52
                - tail * m2
                + tail * m32
        }
        GraphKind::General => {
            let (lead, tail) = match mode {
                CostMode::SharedAcrossPlayers => (3, 4),
                CostMode::PerPlayer => (5, 2),
            };
            lead * a * n * m * m - lead * a * n * m + m * m * m * n - m * m * n + tail * a * m * m
                - tail * a * m
        }
    })
}

#[cfg(test)]
mod tests;
