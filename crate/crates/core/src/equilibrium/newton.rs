//! Semismooth Newton on the Fischer–Burmeister form of the game's MCP.
//!
//! Unknowns are the stacked flows `x` (player-major), the node potentials
//! `v_i` with the highest-index node pinned to zero, and the shared capacity
//! multipliers `ū`. The residual has the same layout: one FB term per
//! `(i, a)`, the conservation rows of `D x_i = f` without the pinned row, and
//! one FB term per arc for `0 ≤ α − Σx ⊥ ū ≥ 0`.
//!
//! Because the cost matrices are diagonal, the Jacobian couples `x_{·a}` and
//! `ū_a` only within arc `a`. The step eliminates these `(N+1)`-sized blocks
//! and solves a Schur system in the potentials alone.
//!
//! Globalisation is by smoothing: `φ` is replaced by `φ_μ` with `μ` driven to
//! zero alongside the residual, so every linear system stays nonsingular on
//! the way in. Near degenerate solutions a short active-set polish finishes.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::game::{
    kkt_residuals, CostParameterization, EquilibriumSolution, GameInstance, KktResidualReport,
};

/// `φ(a, b) = a + b − √(a² + b²)`, zero iff `a ≥ 0, b ≥ 0, ab = 0`.
#[inline]
pub(crate) fn fischer_burmeister(a: f64, b: f64) -> f64 {
    a + b - libm::hypot(a, b)
}

/// Smoothed `φ_μ(a, b) = a + b − √(a² + b² + 2μ²)` with its gradient in
/// `(a, b)` and its derivative in `μ`. At `μ = 0` this is
/// [`fischer_burmeister`] and [`fischer_burmeister_gradient`].
#[inline]
fn smoothed(a: f64, b: f64, mu: f64) -> (f64, (f64, f64), f64) {
    if mu == 0.0 {
        return (fischer_burmeister(a, b), fischer_burmeister_gradient(a, b), 0.0);
    }
    let r = libm::sqrt(a * a + b * b + 2.0 * mu * mu);
    (a + b - r, (1.0 - a / r, 1.0 - b / r), -2.0 * mu / r)
}

/// An element of the generalized gradient of [`fischer_burmeister`]; the
/// kink at the origin uses `(1 − 1/√2, 1 − 1/√2)`.
#[inline]
pub(crate) fn fischer_burmeister_gradient(a: f64, b: f64) -> (f64, f64) {
    let r = libm::hypot(a, b);
    if r == 0.0 {
        let k = 1.0 - core::f64::consts::FRAC_1_SQRT_2;
        (k, k)
    } else {
        (1.0 - a / r, 1.0 - b / r)
    }
}

pub(crate) struct Problem<'a> {
    instance: &'a GameInstance<'a>,
    params: &'a CostParameterization,
    players: usize,
    n: usize,
    m: usize,
    c: Vec<f64>,
    cb: Vec<f64>,
    demand: Vec<f64>,
}

/// Residual and derivative data at one point.
pub(crate) struct Evaluation {
    pub phi: Vec<f64>,
    /// `G_ia = F_ia + (Dᵀv_i)_a + ū_a`, the recovered `u`.
    pub g: Vec<f64>,
    /// FB gradients of the flow rows.
    flow_grad: Vec<(f64, f64)>,
    /// FB gradients of the capacity rows.
    cap_grad: Vec<(f64, f64)>,
    /// `∂Φ/∂μ`, nonzero on the complementarity rows only.
    mu_grad: Vec<f64>,
}

impl Evaluation {
    pub fn merit(&self) -> f64 {
        0.5 * self.phi.iter().map(|v| v * v).sum::<f64>()
    }
}

impl<'a> Problem<'a> {
    pub fn new(instance: &'a GameInstance<'a>, params: &'a CostParameterization) -> Self {
        let (players, n, m) = (instance.players, instance.arcs(), instance.nodes());
        let mut c = Vec::with_capacity(n * players);
        let mut cb = Vec::with_capacity(n * players);
        for i in 0..players {
            c.extend_from_slice(params.c_int(i));
            cb.extend_from_slice(params.c_base(i));
        }
        Problem {
            instance,
            params,
            players,
            n,
            m,
            c,
            cb,
            demand: instance.demand(),
        }
    }

    pub fn dim(&self) -> usize {
        self.players * (self.n + self.m - 1) + self.n
    }

    #[inline]
    fn pinned(&self) -> usize {
        self.m - 1
    }

    #[inline]
    fn x_idx(&self, i: usize, a: usize) -> usize {
        i * self.n + a
    }

    /// Index of `v_{i,node}` in the unknown vector; `None` for the pinned node.
    #[inline]
    fn v_idx(&self, i: usize, node: usize) -> Option<usize> {
        (node != self.pinned()).then(|| self.players * self.n + i * (self.m - 1) + node)
    }

    #[inline]
    fn u_idx(&self, a: usize) -> usize {
        self.players * (self.n + self.m - 1) + a
    }

    #[inline]
    fn v_value(&self, z: &[f64], i: usize, node: usize) -> f64 {
        self.v_idx(i, node).map_or(0.0, |k| z[k])
    }

    /// Packs flows, full-length potentials (`N × m`) and `ū` into an unknown vector.
    pub fn pack(&self, flows: &[f64], v: &[f64], ubar: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.dim()];
        z[..flows.len()].copy_from_slice(flows);
        for i in 0..self.players {
            let shift = v[i * self.m + self.pinned()];
            for node in 0..self.pinned() {
                z[self.v_idx(i, node).unwrap_or(0)] = v[i * self.m + node] - shift;
            }
        }
        for a in 0..self.n {
            z[self.u_idx(a)] = ubar[a];
        }
        z
    }

    pub fn evaluate(&self, z: &[f64]) -> Evaluation {
        self.evaluate_smoothed(z, 0.0)
    }

    pub fn evaluate_smoothed(&self, z: &[f64], mu: f64) -> Evaluation {
        let (players, n) = (self.players, self.n);
        let mut phi = vec![0.0; self.dim()];
        let mut g = vec![0.0; players * n];
        let mut flow_grad = vec![(0.0, 0.0); players * n];
        let mut cap_grad = vec![(0.0, 0.0); n];
        let mut mu_grad = vec![0.0; self.dim()];
        let arcs = self.instance.network.arcs();
        for (a, arc) in arcs.iter().enumerate() {
            let total: f64 = (0..players).map(|i| z[self.x_idx(i, a)]).sum();
            let ubar = z[self.u_idx(a)];
            for i in 0..players {
                let k = self.x_idx(i, a);
                let x = z[k];
                let value = self.c[k] * (total + x)
                    + self.cb[k]
                    + self.v_value(z, i, arc.head)
                    - self.v_value(z, i, arc.tail)
                    + ubar;
                g[k] = value;
                (phi[k], flow_grad[k], mu_grad[k]) = smoothed(x, value, mu);
            }
            let slack = self.instance.capacity[a] - total;
            let ua = self.u_idx(a);
            (phi[ua], cap_grad[a], mu_grad[ua]) = smoothed(slack, ubar, mu);
        }
        for i in 0..players {
            for node in 0..self.pinned() {
                phi[self.v_idx(i, node).unwrap_or(0)] = -self.demand[node];
            }
            for (a, arc) in arcs.iter().enumerate() {
                let x = z[self.x_idx(i, a)];
                if let Some(k) = self.v_idx(i, arc.tail) {
                    phi[k] -= x;
                }
                if let Some(k) = self.v_idx(i, arc.head) {
                    phi[k] += x;
                }
            }
        }
        Evaluation {
            phi,
            g,
            flow_grad,
            cap_grad,
            mu_grad,
        }
    }

    /// Full primal-dual point for scoring; `u` is the recovered `G`.
    pub fn solution(&self, z: &[f64], ev: &Evaluation) -> EquilibriumSolution {
        let (players, n, m) = (self.players, self.n, self.m);
        let mut v = vec![0.0; players * m];
        for i in 0..players {
            for node in 0..m {
                v[i * m + node] = self.v_value(z, i, node);
            }
        }
        let mut solution = EquilibriumSolution {
            players,
            flows: z[..players * n].to_vec(),
            v,
            u: ev.g.clone(),
            ubar: (0..n).map(|a| z[self.u_idx(a)]).collect(),
            kkt_residual: f64::INFINITY,
        };
        if let Ok(report) = kkt_residuals(self.instance, self.params, &solution) {
            solution.kkt_residual = report.max();
        }
        solution
    }

    pub fn report(&self, solution: &EquilibriumSolution) -> KktResidualReport {
        kkt_residuals(self.instance, self.params, solution).unwrap_or(KktResidualReport {
            stationarity_inf_norm: f64::INFINITY,
            ..KktResidualReport::default()
        })
    }

    /// `Jᵀ w`.
    #[cfg(test)]
    pub fn jac_t_vec(&self, ev: &Evaluation, w: &[f64]) -> Vec<f64> {
        let (players, n) = (self.players, self.n);
        let mut out = vec![0.0; self.dim()];
        for (a, arc) in self.instance.network.arcs().iter().enumerate() {
            let mut shared = 0.0;
            for i in 0..players {
                let k = self.x_idx(i, a);
                let (p, q) = ev.flow_grad[k];
                let wq = w[k] * q;
                shared += wq * self.c[k];
                out[k] += wq * self.c[k] + p * w[k];
                if let Some(h) = self.v_idx(i, arc.head) {
                    out[h] += wq;
                }
                if let Some(t) = self.v_idx(i, arc.tail) {
                    out[t] -= wq;
                }
                out[self.u_idx(a)] += wq;
            }
            let (p, q) = ev.cap_grad[a];
            let wu = w[self.u_idx(a)];
            shared -= p * wu;
            out[self.u_idx(a)] += q * wu;
            for i in 0..players {
                let k = self.x_idx(i, a);
                out[k] += shared;
                if let Some(t) = self.v_idx(i, arc.tail) {
                    out[k] -= w[t];
                }
                if let Some(h) = self.v_idx(i, arc.head) {
                    out[k] += w[h];
                }
            }
        }
        debug_assert_eq!(out.len(), players * (n + self.m - 1) + n);
        out
    }

    /// Dense Jacobian, for checking the structured step.
    #[cfg(test)]
    fn dense_jacobian(&self, ev: &Evaluation) -> DMatrix<f64> {
        let dim = self.dim();
        let players = self.players;
        let mut jac = DMatrix::zeros(dim, dim);
        for (a, arc) in self.instance.network.arcs().iter().enumerate() {
            let ua = self.u_idx(a);
            for i in 0..players {
                let k = self.x_idx(i, a);
                let (p, q) = ev.flow_grad[k];
                for j in 0..players {
                    jac[(k, self.x_idx(j, a))] += q * self.c[k];
                }
                jac[(k, k)] += q * self.c[k] + p;
                if let Some(h) = self.v_idx(i, arc.head) {
                    jac[(k, h)] += q;
                    jac[(h, k)] += 1.0;
                }
                if let Some(t) = self.v_idx(i, arc.tail) {
                    jac[(k, t)] -= q;
                    jac[(t, k)] -= 1.0;
                }
                jac[(k, ua)] += q;
            }
            let (p, q) = ev.cap_grad[a];
            for j in 0..players {
                jac[(ua, self.x_idx(j, a))] -= p;
            }
            jac[(ua, ua)] += q;
        }
        jac
    }

    /// Solves `J d = −phi` with the Jacobian selected at `ev`, through the
    /// per-arc Schur elimination.
    pub fn structured_step(&self, ev: &Evaluation, phi: &[f64]) -> Option<Vec<f64>> {
        self.schur_solve(&ev.flow_grad, &ev.cap_grad, phi)
    }

    /// Newton step on `min(a, b)` in place of `φ`. For this affine problem it
    /// lands on the solution once the guessed active set is right, which the
    /// smoothing iteration cannot do quickly at degenerate solutions.
    pub fn active_set_step(&self, z: &[f64], ev: &Evaluation) -> Option<Vec<f64>> {
        let pick = |a: f64, b: f64| if a <= b { (a, (1.0, 0.0)) } else { (b, (0.0, 1.0)) };
        let mut phi = ev.phi.clone();
        let mut flow_grad = Vec::with_capacity(ev.g.len());
        for (k, &g) in ev.g.iter().enumerate() {
            let (value, grad) = pick(z[k], g);
            phi[k] = value;
            flow_grad.push(grad);
        }
        let mut cap_grad = Vec::with_capacity(self.n);
        for a in 0..self.n {
            let total: f64 = (0..self.players).map(|i| z[self.x_idx(i, a)]).sum();
            let ua = self.u_idx(a);
            let (value, grad) = pick(self.instance.capacity[a] - total, z[ua]);
            phi[ua] = value;
            cap_grad.push(grad);
        }
        self.schur_solve(&flow_grad, &cap_grad, &phi)
    }

    fn schur_solve(&self, flow_grad: &[(f64, f64)], cap_grad: &[(f64, f64)], phi: &[f64]) -> Option<Vec<f64>> {
        let (players, m) = (self.players, self.m);
        let nv = players * (m - 1);
        let offset = players * self.n;
        let local = players + 1;
        let mut schur = DMatrix::<f64>::zeros(nv, nv);
        let mut rhs = DVector::<f64>::zeros(nv);
        for i in 0..players {
            for node in 0..self.pinned() {
                let k = self.v_idx(i, node).unwrap_or(0);
                rhs[k - offset] = phi[k];
            }
        }
        struct ArcSolve {
            d_loc: Vec<f64>,
            cols: Vec<usize>,
            h: DMatrix<f64>,
        }
        let arcs = self.instance.network.arcs();
        let mut solves = Vec::with_capacity(arcs.len());
        for (a, arc) in arcs.iter().enumerate() {
            let mut block = DMatrix::<f64>::zeros(local, local);
            let mut cols = Vec::with_capacity(2 * players);
            for j in 0..players {
                for node in [arc.tail, arc.head] {
                    if let Some(k) = self.v_idx(j, node) {
                        cols.push(k);
                    }
                }
            }
            let mut right = DMatrix::<f64>::zeros(local, 1 + cols.len());
            for i in 0..players {
                let k = self.x_idx(i, a);
                let (p, q) = flow_grad[k];
                for j in 0..players {
                    block[(i, j)] = q * self.c[k];
                }
                block[(i, i)] += q * self.c[k] + p;
                block[(i, players)] = q;
                right[(i, 0)] = -phi[k];
                for (c, &col) in cols.iter().enumerate() {
                    if Some(col) == self.v_idx(i, arc.head) {
                        right[(i, 1 + c)] = q;
                    } else if Some(col) == self.v_idx(i, arc.tail) {
                        right[(i, 1 + c)] = -q;
                    }
                }
            }
            let (p, q) = cap_grad[a];
            for j in 0..players {
                block[(players, j)] = -p;
            }
            block[(players, players)] = q;
            right[(players, 0)] = -phi[self.u_idx(a)];
            let solved = block.lu().solve(&right)?;
            if solved.iter().any(|v| !v.is_finite()) {
                return None;
            }
            let d_loc: Vec<f64> = solved.column(0).iter().copied().collect();
            let h = solved.columns(1, cols.len()).into_owned();
            for i in 0..players {
                for (node, sign) in [(arc.tail, -1.0), (arc.head, 1.0)] {
                    let Some(row) = self.v_idx(i, node) else {
                        continue;
                    };
                    rhs[row - offset] += sign * d_loc[i];
                    for (c, &col) in cols.iter().enumerate() {
                        schur[(row - offset, col - offset)] += sign * h[(i, c)];
                    }
                }
            }
            solves.push(ArcSolve { d_loc, cols, h });
        }

        let lu = schur.clone().lu();
        let pivots = lu.u().diagonal().abs();
        let well_posed = pivots.min() > 1e-11 * pivots.max();
        let dv = match well_posed.then(|| lu.solve(&rhs)).flatten() {
            Some(dv) if dv.iter().all(|v| v.is_finite()) => dv,
            _ => {
                // a player whose flow leaves some nodes entirely makes the
                // system singular; those potentials are left where they are
                let svd = schur.svd(true, true);
                let cutoff = 1e-9 * svd.singular_values.max();
                svd.solve(&rhs, cutoff).ok()?
            }
        };

        let mut step = vec![0.0; self.dim()];
        step[offset..offset + nv].copy_from_slice(dv.as_slice());
        for (a, solve) in solves.iter().enumerate() {
            for r in 0..local {
                let mut value = solve.d_loc[r];
                for (c, &col) in solve.cols.iter().enumerate() {
                    value -= solve.h[(r, c)] * dv[col - offset];
                }
                let k = if r < players { self.x_idx(r, a) } else { self.u_idx(a) };
                step[k] = value;
            }
        }
        step.iter().all(|v| v.is_finite()).then_some(step)
    }
}

/// Outcome of one Newton run from one start point.
pub(crate) struct Run {
    pub best: EquilibriumSolution,
    pub report: KktResidualReport,
    pub iterations: usize,
}

pub(crate) struct RunSettings {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub shrink: f64,
    pub armijo: f64,
}

fn axpy(z: &[f64], t: f64, d: &[f64]) -> Vec<f64> {
    z.iter().zip(d).map(|(a, b)| a + t * b).collect()
}

/// Smoothing-parameter target scale; `μ` starts here and is driven to zero.
const MU_BAR: f64 = 1.0;
/// Below this `ψ` each iteration also tries [`Problem::active_set_step`].
const POLISH_BELOW: f64 = 1e-4;
const POLISH_ROUNDS: usize = 4;
/// Centring weight; `γ·μ̄ < 1` keeps the line search well posed.
const GAMMA: f64 = 0.2;

/// A few primal-dual active-set updates from `z`; returns the point if it
/// meets `target`.
fn polish(problem: &Problem<'_>, z: &[f64], target: f64) -> Option<(EquilibriumSolution, KktResidualReport)> {
    let mut z = z.to_vec();
    for _ in 0..POLISH_ROUNDS {
        let d = problem.active_set_step(&z, &problem.evaluate(&z))?;
        z = axpy(&z, 1.0, &d);
        let solution = problem.solution(&z, &problem.evaluate(&z));
        let report = problem.report(&solution);
        if report.max() <= target {
            return Some((solution, report));
        }
    }
    None
}

/// Smoothing Newton: the unknown is `(μ, z)`, the system `(μ, Φ_μ(z)) = 0`,
/// and each step pulls `μ` towards `γ·min(1, ψ)·μ̄` while solving the
/// linearised smoothed residual. `ψ = μ² + ‖Φ_μ‖²`. At `μ = 0` the iteration
/// is the plain semismooth Newton method.
pub(crate) fn run(
    problem: &Problem<'_>,
    start: Vec<f64>,
    settings: &RunSettings,
    mut trace: Option<&mut Vec<String>>,
) -> Run {
    let mut z = start;
    let mut mu = MU_BAR;
    let mut ev = problem.evaluate_smoothed(&z, mu);
    let mut best = problem.solution(&z, &problem.evaluate(&z));
    let mut best_report = problem.report(&best);
    let target = settings.tolerance * 1e-3;
    let decrease = 2.0 * settings.armijo * (1.0 - GAMMA * MU_BAR);
    let mut iterations = 0;
    while iterations < settings.max_iterations && best_report.max() > target {
        let psi = mu * mu + 2.0 * ev.merit();
        if psi < POLISH_BELOW {
            if let Some((solution, report)) = polish(problem, &z, target) {
                iterations += 1;
                if let Some(log) = trace.as_deref_mut() {
                    log.push(format!("iter {iterations} active-set kkt {:.3e}", report.max()));
                }
                best = solution;
                best_report = report;
                break;
            }
        }
        let beta = GAMMA * psi.min(1.0);
        let dmu = -mu + beta * MU_BAR;
        let rhs: Vec<f64> = ev.phi.iter().zip(&ev.mu_grad).map(|(p, g)| p + g * dmu).collect();
        iterations += 1;
        let Some(d) = problem.structured_step(&ev, &rhs) else {
            if let Some(log) = trace.as_deref_mut() {
                log.push(format!("iter {iterations} merit {psi:.3e} singular step kkt {:.3e}", best_report.max()));
            }
            break;
        };
        let mut t = 1.0;
        let accepted = loop {
            let mu_t = mu + t * dmu;
            let zt = axpy(&z, t, &d);
            let evt = problem.evaluate_smoothed(&zt, mu_t);
            if mu_t * mu_t + 2.0 * evt.merit() <= (1.0 - decrease * t) * psi {
                break Some((mu_t, zt, evt));
            }
            t *= settings.shrink;
            if t < 1e-12 {
                break None;
            }
        };
        let Some((mu_t, zt, evt)) = accepted else {
            if let Some(log) = trace.as_deref_mut() {
                log.push(format!("iter {iterations} merit {psi:.3e} no acceptable step kkt {:.3e}", best_report.max()));
            }
            break;
        };
        mu = mu_t;
        z = zt;
        ev = evt;
        let candidate = problem.solution(&z, &problem.evaluate(&z));
        let report = problem.report(&candidate);
        if let Some(log) = trace.as_deref_mut() {
            log.push(format!(
                "iter {iterations} merit {:.3e} mu {mu:.3e} step {t:.3e} kkt {:.3e}",
                mu * mu + 2.0 * ev.merit(),
                report.max()
            ));
        }
        if report.max() < best_report.max() {
            best = candidate;
            best_report = report;
        }
    }
    Run {
        best,
        report: best_report,
        iterations,
    }
}
