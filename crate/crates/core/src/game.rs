//! The joint-capacity routing game: cost parameters, the VI map, the block
//! interaction matrix, the shared-cost potential and KKT residual scoring.
//!
//! Player `i` minimises `x_iᵀ C_i (Σ_j x_j) + c̄_iᵀ x_i` subject to
//! `D x_i = f_i`, `x_i ≥ 0` and the joint constraint `Σ_j x_j ≤ α`.
//! Stacked vectors are player-major: entry `i * n + a` is arc `a` of player `i`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::network::{Network, OdPair};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GameError {
    #[error("{what}: expected length {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{what} entry {index} is not strictly positive ({value})")]
    NonPositive {
        what: &'static str,
        index: usize,
        value: f64,
    },
    #[error("shared-cost parameters differ between players 0 and {0}")]
    SharedRowsDiffer(usize),
    #[error("operation requires shared costs across players")]
    NotShared,
    #[error("game needs at least one player")]
    NoPlayers,
    #[error("OD pair does not name two distinct nodes of the network")]
    InvalidOd,
}

/// Whether every player perceives the same costs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CostMode {
    SharedAcrossPlayers,
    PerPlayer,
}

impl CostMode {
    pub fn label(self) -> &'static str {
        match self {
            CostMode::SharedAcrossPlayers => "shared",
            CostMode::PerPlayer => "per-player",
        }
    }
}

/// Per-player interaction diagonals `diag(C_i)` and base costs `c̄_i`.
///
/// Interaction costs are strictly positive; base costs are nonnegative.
/// Rows are stored per player even in shared mode, where they are identical.
#[derive(Debug, Clone, PartialEq)]
pub struct CostParameterization {
    mode: CostMode,
    c_int: Vec<Vec<f64>>,
    c_base: Vec<Vec<f64>>,
}

impl CostParameterization {
    pub fn new(
        mode: CostMode,
        c_int: Vec<Vec<f64>>,
        c_base: Vec<Vec<f64>>,
    ) -> Result<Self, GameError> {
        if c_int.is_empty() {
            return Err(GameError::NoPlayers);
        }
        if c_base.len() != c_int.len() {
            return Err(GameError::Dimension {
                what: "c_base players",
                expected: c_int.len(),
                got: c_base.len(),
            });
        }
        let n = c_int[0].len();
        for (what, rows) in [("c_int", &c_int), ("c_base", &c_base)] {
            for row in rows.iter() {
                if row.len() != n {
                    return Err(GameError::Dimension {
                        what,
                        expected: n,
                        got: row.len(),
                    });
                }
                for (index, &value) in row.iter().enumerate() {
                    // base costs may be zero, interaction costs may not
                    let ok = if what == "c_int" { value > 0.0 } else { value >= 0.0 };
                    if !ok || !value.is_finite() {
                        return Err(GameError::NonPositive { what, index, value });
                    }
                }
            }
        }
        if mode == CostMode::SharedAcrossPlayers {
            for i in 1..c_int.len() {
                if c_int[i] != c_int[0] || c_base[i] != c_base[0] {
                    return Err(GameError::SharedRowsDiffer(i));
                }
            }
        }
        Ok(CostParameterization {
            mode,
            c_int,
            c_base,
        })
    }

    /// One `(diag C, c̄)` pair replicated for `players` players.
    pub fn shared(c_int: Vec<f64>, c_base: Vec<f64>, players: usize) -> Result<Self, GameError> {
        if players == 0 {
            return Err(GameError::NoPlayers);
        }
        CostParameterization::new(
            CostMode::SharedAcrossPlayers,
            vec![c_int; players],
            vec![c_base; players],
        )
    }

    pub fn per_player(c_int: Vec<Vec<f64>>, c_base: Vec<Vec<f64>>) -> Result<Self, GameError> {
        CostParameterization::new(CostMode::PerPlayer, c_int, c_base)
    }

    pub fn mode(&self) -> CostMode {
        self.mode
    }

    pub fn players(&self) -> usize {
        self.c_int.len()
    }

    pub fn arcs(&self) -> usize {
        self.c_int[0].len()
    }

    pub fn c_int(&self, player: usize) -> &[f64] {
        &self.c_int[player]
    }

    pub fn c_base(&self, player: usize) -> &[f64] {
        &self.c_base[player]
    }

    pub fn c_int_rows(&self) -> &[Vec<f64>] {
        &self.c_int
    }

    pub fn c_base_rows(&self) -> &[Vec<f64>] {
        &self.c_base
    }

    /// Multiplies every `C` and `c̄` entry by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Self {
        let scale = |rows: &Vec<Vec<f64>>| {
            rows.iter()
                .map(|r| r.iter().map(|v| v * factor).collect())
                .collect()
        };
        CostParameterization {
            mode: self.mode,
            c_int: scale(&self.c_int),
            c_base: scale(&self.c_base),
        }
    }

    fn check_players(&self, players: usize) -> Result<(), GameError> {
        if players == 0 {
            return Err(GameError::NoPlayers);
        }
        if self.players() != players {
            return Err(GameError::Dimension {
                what: "cost parameter players",
                expected: players,
                got: self.players(),
            });
        }
        Ok(())
    }
}

/// `F(x)`: block `i` is `C_i (2 x_i + Σ_{j≠i} x_j) + c̄_i`.
pub fn eval_f(
    params: &CostParameterization,
    x: &[f64],
    players: usize,
) -> Result<Vec<f64>, GameError> {
    params.check_players(players)?;
    let n = params.arcs();
    check_len("stacked flows", n * players, x.len())?;
    let total = aggregate(x, n, players);
    let mut out = vec![0.0; n * players];
    for i in 0..players {
        let (c, cb) = (params.c_int(i), params.c_base(i));
        let own = &x[i * n..(i + 1) * n];
        for a in 0..n {
            out[i * n + a] = c[a] * (total[a] + own[a]) + cb[a];
        }
    }
    Ok(out)
}

/// Jacobian of [`eval_f`]: block `(i,i)` is `2C_i`, block `(i,j)` is `C_i`.
pub fn interaction_matrix(
    params: &CostParameterization,
    players: usize,
) -> Result<DMatrix<f64>, GameError> {
    params.check_players(players)?;
    let n = params.arcs();
    let mut m = DMatrix::zeros(n * players, n * players);
    for i in 0..players {
        let c = params.c_int(i);
        for j in 0..players {
            let factor = if i == j { 2.0 } else { 1.0 };
            for a in 0..n {
                m[(i * n + a, j * n + a)] = factor * c[a];
            }
        }
    }
    Ok(m)
}

/// Exact potential of the shared-cost game; its gradient is [`eval_f`].
///
/// `P(x) = Σ_i x_iᵀ C x_i + ½ Σ_{i≠j} x_iᵀ C x_j + c̄ᵀ Σ_i x_i`.
pub fn potential_value(
    params: &CostParameterization,
    x: &[f64],
    players: usize,
) -> Result<f64, GameError> {
    if params.mode() != CostMode::SharedAcrossPlayers {
        return Err(GameError::NotShared);
    }
    params.check_players(players)?;
    let n = params.arcs();
    check_len("stacked flows", n * players, x.len())?;
    let (c, cb) = (params.c_int(0), params.c_base(0));
    let total = aggregate(x, n, players);
    let mut value = 0.0;
    for a in 0..n {
        // Σ_i x_i² + ½ Σ_{i≠j} x_i x_j = ½ (Σ x_i)² + ½ Σ x_i²
        let squares: f64 = (0..players).map(|i| x[i * n + a] * x[i * n + a]).sum();
        value += c[a] * 0.5 * (total[a] * total[a] + squares) + cb[a] * total[a];
    }
    Ok(value)
}

/// Per-arc sum over players of a stacked vector.
pub fn aggregate(x: &[f64], arcs: usize, players: usize) -> Vec<f64> {
    let mut total = vec![0.0; arcs];
    for i in 0..players {
        for (t, v) in total.iter_mut().zip(&x[i * arcs..(i + 1) * arcs]) {
            *t += v;
        }
    }
    total
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), GameError> {
    if expected != got {
        return Err(GameError::Dimension {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

/// One forward game: `N` players routing one unit each between the same
/// OD pair under the joint arc capacity `α`.
#[derive(Debug, Clone)]
pub struct GameInstance<'a> {
    pub network: &'a Network,
    pub players: usize,
    pub capacity: Vec<f64>,
    pub od: OdPair,
}

impl<'a> GameInstance<'a> {
    pub fn new(
        network: &'a Network,
        players: usize,
        capacity: Vec<f64>,
        od: OdPair,
    ) -> Result<Self, GameError> {
        if players == 0 {
            return Err(GameError::NoPlayers);
        }
        check_len("capacity", network.arc_count(), capacity.len())?;
        for (index, &value) in capacity.iter().enumerate() {
            if !(value > 0.0) {
                return Err(GameError::NonPositive {
                    what: "capacity",
                    index,
                    value,
                });
            }
        }
        if od.origin.max(od.destination) >= network.node_count() || od.origin == od.destination {
            return Err(GameError::InvalidOd);
        }
        Ok(GameInstance {
            network,
            players,
            capacity,
            od,
        })
    }

    /// Capacity `scale` on every arc (`α = scale · 1`).
    pub fn uniform(
        network: &'a Network,
        players: usize,
        scale: f64,
        od: OdPair,
    ) -> Result<Self, GameError> {
        GameInstance::new(network, players, vec![scale; network.arc_count()], od)
    }

    pub fn arcs(&self) -> usize {
        self.network.arc_count()
    }

    pub fn nodes(&self) -> usize {
        self.network.node_count()
    }

    pub fn demand(&self) -> Vec<f64> {
        self.network.demand_vector(self.od)
    }
}

/// Primal-dual point of the game's KKT system.
///
/// `flows` and `u` are stacked `N × n`, `v` is stacked `N × m`.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumSolution {
    pub players: usize,
    pub flows: Vec<f64>,
    pub v: Vec<f64>,
    pub u: Vec<f64>,
    pub ubar: Vec<f64>,
    pub kkt_residual: f64,
}

impl EquilibriumSolution {
    pub fn arcs(&self) -> usize {
        self.ubar.len()
    }

    pub fn flow(&self, player: usize) -> &[f64] {
        let n = self.arcs();
        &self.flows[player * n..(player + 1) * n]
    }

    pub fn total_flow(&self) -> Vec<f64> {
        aggregate(&self.flows, self.arcs(), self.players)
    }
}

/// Infinity norms of each block of the KKT system.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResidualReport {
    /// `C_i(2x_i + Σ_{j≠i} x_j) + c̄_i + Dᵀv_i − u_i + ū`.
    pub stationarity_inf_norm: f64,
    /// `max_i |x_iᵀ u_i|`.
    pub complementarity_nonneg_inf_norm: f64,
    /// `|(α − Σ_j x_j)ᵀ ū|`.
    pub complementarity_capacity_inf_norm: f64,
    /// `max_i ‖D x_i − f_i‖∞`.
    pub primal_equality_inf_norm: f64,
    /// Largest negative part of `x`, `u`, `ū` or `α − Σ_j x_j`.
    pub primal_bound_violation: f64,
}

impl KktResidualReport {
    pub fn max(&self) -> f64 {
        self.stationarity_inf_norm
            .max(self.complementarity_nonneg_inf_norm)
            .max(self.complementarity_capacity_inf_norm)
            .max(self.primal_equality_inf_norm)
            .max(self.primal_bound_violation)
    }

    pub fn describe(&self) -> String {
        alloc::format!(
            "stationarity={:.3e} comp_nonneg={:.3e} comp_capacity={:.3e} equality={:.3e} bounds={:.3e}",
            self.stationarity_inf_norm,
            self.complementarity_nonneg_inf_norm,
            self.complementarity_capacity_inf_norm,
            self.primal_equality_inf_norm,
            self.primal_bound_violation
        )
    }
}

/// Scores a candidate primal-dual point against the KKT system.
pub fn kkt_residuals(
    instance: &GameInstance<'_>,
    params: &CostParameterization,
    candidate: &EquilibriumSolution,
) -> Result<KktResidualReport, GameError> {
    let (n, m, players) = (instance.arcs(), instance.nodes(), instance.players);
    check_len("cost parameter arcs", n, params.arcs())?;
    check_len("candidate players", players, candidate.players)?;
    check_len("candidate flows", n * players, candidate.flows.len())?;
    check_len("candidate v", m * players, candidate.v.len())?;
    check_len("candidate u", n * players, candidate.u.len())?;
    check_len("candidate ubar", n, candidate.ubar.len())?;

    let f_val = eval_f(params, &candidate.flows, players)?;
    let demand = instance.demand();
    let mut report = KktResidualReport::default();
    let mut dtv = vec![0.0; n];
    let mut dx = vec![0.0; m];
    let neg = |v: f64| if v < 0.0 { -v } else { 0.0 };

    for i in 0..players {
        let xs = &candidate.flows[i * n..(i + 1) * n];
        let us = &candidate.u[i * n..(i + 1) * n];
        instance
            .network
            .apply_incidence_transpose(&candidate.v[i * m..(i + 1) * m], &mut dtv);
        let mut product = 0.0;
        for a in 0..n {
            let r = f_val[i * n + a] + dtv[a] - us[a] + candidate.ubar[a];
            report.stationarity_inf_norm = report.stationarity_inf_norm.max(r.abs());
            product += xs[a] * us[a];
            report.primal_bound_violation = report
                .primal_bound_violation
                .max(neg(xs[a]))
                .max(neg(us[a]));
        }
        report.complementarity_nonneg_inf_norm =
            report.complementarity_nonneg_inf_norm.max(product.abs());
        instance.network.apply_incidence(xs, &mut dx);
        for (d, f) in dx.iter().zip(&demand) {
            report.primal_equality_inf_norm = report.primal_equality_inf_norm.max((d - f).abs());
        }
    }
    let total = candidate.total_flow();
    let mut product = 0.0;
    for a in 0..n {
        let slack = instance.capacity[a] - total[a];
        product += slack * candidate.ubar[a];
        report.primal_bound_violation = report
            .primal_bound_violation
            .max(neg(slack))
            .max(neg(candidate.ubar[a]));
    }
    report.complementarity_capacity_inf_norm = product.abs();
    Ok(report)
}
