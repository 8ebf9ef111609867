//! Potential minimisation for the shared-cost game.
//!
//! With `C_1 = … = C_N` the equilibrium is the unique minimiser of the convex
//! quadratic potential `P(x) = ½ xᵀMx + gᵀx` over the joint polytope. This
//! module minimises it with Wolfe's minimum-norm-point scheme (a fully
//! corrective conditional-gradient method): linear subproblems over the
//! polytope supply vertices, and the potential is minimised exactly over
//! their convex hull. It shares nothing with the Newton solver apart from the
//! polytope description.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use super::{EquilibriumError, Feasibility, JointPolytope};
use crate::game::{eval_f, potential_value, CostMode, CostParameterization, GameInstance};
use crate::lp::{LpSolver, LpStatus, SimplexSolver};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSettings {
    /// Stop once the linearisation gap `∇P(x)ᵀ(x − s)` falls below this.
    pub gap_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for OracleSettings {
    fn default() -> Self {
        OracleSettings {
            gap_tolerance: 1e-9,
            max_iterations: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub flows: Vec<f64>,
    pub potential: f64,
    /// Final linearisation gap, an upper bound on `P(x) − min P`.
    pub gap: f64,
    pub iterations: usize,
    pub vertices: usize,
}

pub fn solve_potential_oracle(
    instance: &GameInstance<'_>,
    params: &CostParameterization,
    settings: &OracleSettings,
) -> Result<OracleSolution, EquilibriumError> {
    if params.mode() != CostMode::SharedAcrossPlayers {
        return Err(EquilibriumError::NotShared);
    }
    super::check_params(instance, params)?;
    let players = instance.players;
    let mut polytope = JointPolytope::new(instance);
    let solver = SimplexSolver::default();
    let dim = polytope.flows.len();

    let offset: Vec<f64> = eval_f(params, &alloc::vec![0.0; dim], players)?;
    let apply_m = |x: &[f64]| -> Result<Vec<f64>, EquilibriumError> {
        let fx = eval_f(params, x, players)?;
        Ok(fx.iter().zip(&offset).map(|(a, b)| a - b).collect())
    };
    let mut linear_vertex = |cost: &[f64]| -> Result<Vec<f64>, EquilibriumError> {
        for (k, c) in cost.iter().enumerate() {
            polytope.lp.set_cost(polytope.flows.start + k, *c);
        }
        let result = solver.solve(&polytope.lp);
        match result.status {
            LpStatus::Optimal => Ok(result.z[polytope.flows.clone()].to_vec()),
            LpStatus::Infeasible => match super::feasibility_check(instance)? {
                Feasibility::Infeasible {
                    certificate,
                    infeasibility,
                } => Err(EquilibriumError::Infeasible {
                    certificate,
                    infeasibility,
                }),
                Feasibility::Feasible { .. } => Err(EquilibriumError::Lp(result.diagnostics)),
            },
            _ => Err(EquilibriumError::Lp(result.diagnostics)),
        }
    };

    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let first = linear_vertex(&offset)?;
    let mut vertices: Vec<Vec<f64>> = alloc::vec![first];
    let mut m_vertices: Vec<Vec<f64>> = alloc::vec![apply_m(&vertices[0])?];
    let mut weights: Vec<f64> = alloc::vec![1.0];
    let mut gap = f64::INFINITY;
    let mut iterations = 0;

    let combine = |vertices: &[Vec<f64>], weights: &[f64]| -> Vec<f64> {
        let mut x = alloc::vec![0.0; dim];
        for (v, w) in vertices.iter().zip(weights) {
            for (xi, vi) in x.iter_mut().zip(v) {
                *xi += w * vi;
            }
        }
        x
    };

    while iterations < settings.max_iterations {
        iterations += 1;
        let x = combine(&vertices, &weights);
        let grad = eval_f(params, &x, players)?;
        let s = linear_vertex(&grad)?;
        gap = dot(&grad, &x) - dot(&grad, &s);
        if gap <= settings.gap_tolerance {
            break;
        }
        if vertices
            .iter()
            .any(|v| v.iter().zip(&s).all(|(a, b)| (a - b).abs() <= 1e-12))
        {
            // the oracle returned a vertex already in the hull; the gap
            // cannot shrink further in floating point
            break;
        }
        m_vertices.push(apply_m(&s)?);
        vertices.push(s);
        weights.push(0.0);

        // minor cycles: move to the affine minimiser, dropping vertices
        // whenever it leaves the simplex
        loop {
            let k = vertices.len();
            let mut system = DMatrix::<f64>::zeros(k + 1, k + 1);
            let mut rhs = DVector::<f64>::zeros(k + 1);
            for a in 0..k {
                for b in 0..k {
                    system[(a, b)] = dot(&vertices[a], &m_vertices[b]);
                }
                system[(a, k)] = 1.0;
                system[(k, a)] = 1.0;
                rhs[a] = -dot(&offset, &vertices[a]);
            }
            rhs[k] = 1.0;
            let Some(sol) = system.lu().solve(&rhs) else {
                // affinely dependent hull: drop the newest vertex
                vertices.pop();
                m_vertices.pop();
                weights.pop();
                break;
            };
            let mu: Vec<f64> = (0..k).map(|a| sol[a]).collect();
            if mu.iter().all(|&v| v > 1e-14) {
                weights = mu;
                break;
            }
            let mut theta: f64 = 1.0;
            for a in 0..k {
                if mu[a] <= 1e-14 {
                    let denom = weights[a] - mu[a];
                    if denom > 0.0 {
                        theta = theta.min(weights[a] / denom);
                    }
                }
            }
            for a in 0..k {
                weights[a] += theta * (mu[a] - weights[a]);
            }
            let mut a = 0;
            while a < weights.len() {
                if weights[a] <= 1e-14 {
                    weights.remove(a);
                    vertices.remove(a);
                    m_vertices.remove(a);
                } else {
                    a += 1;
                }
            }
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            if vertices.len() <= 1 {
                break;
            }
        }
    }

    let flows = combine(&vertices, &weights);
    if !(gap <= settings.gap_tolerance) {
        return Err(EquilibriumError::OracleStalled { gap, iterations });
    }
    Ok(OracleSolution {
        potential: potential_value(params, &flows, players)?,
        flows,
        gap,
        iterations,
        vertices: vertices.len(),
    })
}
