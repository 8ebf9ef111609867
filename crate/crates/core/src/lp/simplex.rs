//! Bounded-variable revised simplex with a dense basis inverse.
//!
//! Two phases: phase one minimises the sum of one artificial per row, phase
//! two the true objective with artificials fixed at zero. Pricing is Dantzig's
//! rule with a Harris ratio test; after a run of degenerate pivots the solver
//! switches to Bland's smallest-index rule until it makes progress again, so
//! it cannot cycle. Everything is deterministic.
//!
//! The basis inverse is dense (`m²` memory), which suits the small and medium
//! programs in this crate: feasibility problems, linear subproblems of the
//! potential oracle and residual programs on small networks.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use super::{LinearProgram, LpResult, LpSolver, LpStatus};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexSettings {
    pub feasibility_tol: f64,
    pub optimality_tol: f64,
    pub pivot_tol: f64,
    /// Defaults to `50 (m + n) + 1000` when `None`.
    pub max_iterations: Option<usize>,
    pub refactor_every: usize,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub degenerate_switch: usize,
}

impl Default for SimplexSettings {
    fn default() -> Self {
        SimplexSettings {
            feasibility_tol: 1e-10,
            optimality_tol: 1e-10,
            pivot_tol: 1e-9,
            max_iterations: None,
            refactor_every: 64,
            degenerate_switch: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SimplexSolver {
    pub settings: SimplexSettings,
}

impl SimplexSolver {
    pub fn new(settings: SimplexSettings) -> Self {
        SimplexSolver { settings }
    }
}

impl LpSolver for SimplexSolver {
    fn solve(&self, lp: &LinearProgram) -> LpResult {
        if let Err(e) = lp.validate() {
            return LpResult::failed(LpStatus::NumericalFailure, lp, format!("invalid program: {e}"));
        }
        let mut state = Simplex::new(lp, self.settings);
        state.solve()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Position {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free variable held at zero.
    Zero,
}

enum Phase {
    Optimal,
    Unbounded,
    IterationLimit,
    Singular,
}

struct Simplex<'a> {
    lp: &'a LinearProgram,
    settings: SimplexSettings,
    m: usize,
    n: usize,
    art_sign: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    x: Vec<f64>,
    pos: Vec<Position>,
    basis: Vec<usize>,
    binv: Vec<f64>,
    iterations: usize,
    max_iterations: usize,
    since_refactor: usize,
}

impl<'a> Simplex<'a> {
    fn new(lp: &'a LinearProgram, settings: SimplexSettings) -> Self {
        let (m, n) = (lp.num_rows(), lp.num_variables());
        let total = n + m;
        let mut lower = Vec::with_capacity(total);
        let mut upper = Vec::with_capacity(total);
        lower.extend_from_slice(lp.lower());
        upper.extend_from_slice(lp.upper());
        lower.extend(core::iter::repeat(0.0).take(m));
        upper.extend(core::iter::repeat(f64::INFINITY).take(m));

        let mut x = vec![0.0; total];
        let mut pos = vec![Position::Basic; total];
        for j in 0..n {
            let (lo, hi) = (lower[j], upper[j]);
            let (p, v) = if lo.is_finite() {
                (Position::AtLower, lo)
            } else if hi.is_finite() {
                (Position::AtUpper, hi)
            } else {
                (Position::Zero, 0.0)
            };
            pos[j] = p;
            x[j] = v;
        }
        let mut residual = lp.rhs().to_vec();
        for j in 0..n {
            if x[j] != 0.0 {
                for &(r, c) in lp.column(j) {
                    residual[r] -= c * x[j];
                }
            }
        }
        let art_sign: Vec<f64> = residual
            .iter()
            .map(|&r| if r < 0.0 { -1.0 } else { 1.0 })
            .collect();
        let mut binv = vec![0.0; m * m];
        let mut basis = Vec::with_capacity(m);
        for k in 0..m {
            x[n + k] = residual[k].abs();
            binv[k * m + k] = art_sign[k];
            basis.push(n + k);
        }
        let max_iterations = settings
            .max_iterations
            .unwrap_or(50 * (m + n) + 1000);
        Simplex {
            lp,
            settings,
            m,
            n,
            art_sign,
            lower,
            upper,
            cost: vec![0.0; total],
            x,
            pos,
            basis,
            binv,
            iterations: 0,
            max_iterations,
            since_refactor: 0,
        }
    }

    fn is_artificial(&self, j: usize) -> bool {
        j >= self.n
    }

    /// Calls `f(row, coef)` for every nonzero of column `j`.
    #[inline]
    fn for_column(&self, j: usize, mut f: impl FnMut(usize, f64)) {
        if j < self.n {
            for &(r, c) in self.lp.column(j) {
                f(r, c);
            }
        } else {
            f(j - self.n, self.art_sign[j - self.n]);
        }
    }

    /// `B⁻¹ a_j`.
    fn ftran(&self, j: usize) -> Vec<f64> {
        let m = self.m;
        let mut alpha = vec![0.0; m];
        self.for_column(j, |r, c| {
            for (i, a) in alpha.iter_mut().enumerate() {
                *a += self.binv[i * m + r] * c;
            }
        });
        alpha
    }

    /// `y = B⁻ᵀ c_B`.
    fn duals(&self) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for (i, &b) in self.basis.iter().enumerate() {
            let c = self.cost[b];
            if c != 0.0 {
                let row = &self.binv[i * m..(i + 1) * m];
                for (yr, br) in y.iter_mut().zip(row) {
                    *yr += c * br;
                }
            }
        }
        y
    }

    fn reduced_cost(&self, j: usize, y: &[f64]) -> f64 {
        let mut d = self.cost[j];
        self.for_column(j, |r, c| d -= c * y[r]);
        d
    }

    /// Rebuilds `B⁻¹` from scratch and recomputes the basic values.
    fn refactor(&mut self) -> bool {
        let m = self.m;
        self.since_refactor = 0;
        if m == 0 {
            return true;
        }
        let mut b = DMatrix::<f64>::zeros(m, m);
        for (col, &j) in self.basis.iter().enumerate() {
            self.for_column(j, |r, c| b[(r, col)] = c);
        }
        let Some(inv) = b.lu().try_inverse() else {
            return false;
        };
        for i in 0..m {
            for r in 0..m {
                self.binv[i * m + r] = inv[(i, r)];
            }
        }
        let mut residual = self.lp.rhs().to_vec();
        for j in 0..self.n + m {
            if self.pos[j] != Position::Basic && self.x[j] != 0.0 {
                let xj = self.x[j];
                self.for_column(j, |r, c| residual[r] -= c * xj);
            }
        }
        for i in 0..m {
            let row = &self.binv[i * m..(i + 1) * m];
            let v: f64 = row.iter().zip(&residual).map(|(a, b)| a * b).sum();
            self.x[self.basis[i]] = v;
        }
        true
    }

    fn eligible(&self, j: usize, d: f64) -> bool {
        let tol = self.settings.optimality_tol;
        match self.pos[j] {
            Position::Basic => false,
            _ if self.lower[j] == self.upper[j] => false,
            Position::AtLower => d < -tol,
            Position::AtUpper => d > tol,
            Position::Zero => d.abs() > tol,
        }
    }

    fn run_phase(&mut self) -> Phase {
        let mut degenerate_streak = 0usize;
        loop {
            if self.iterations >= self.max_iterations {
                return Phase::IterationLimit;
            }
            if self.since_refactor >= self.settings.refactor_every && !self.refactor() {
                return Phase::Singular;
            }
            let bland = degenerate_streak >= self.settings.degenerate_switch;
            let y = self.duals();

            let mut entering: Option<(usize, f64)> = None;
            for j in 0..self.n + self.m {
                if self.pos[j] == Position::Basic {
                    continue;
                }
                let d = self.reduced_cost(j, &y);
                if !self.eligible(j, d) {
                    continue;
                }
                if bland {
                    entering = Some((j, d));
                    break;
                }
                if entering.map_or(true, |(_, best)| d.abs() > best.abs()) {
                    entering = Some((j, d));
                }
            }
            let Some((q, dq)) = entering else {
                // confirm on a fresh factorisation before declaring optimality
                if self.since_refactor > 0 {
                    if !self.refactor() {
                        return Phase::Singular;
                    }
                    continue;
                }
                return Phase::Optimal;
            };

            // the entering variable moves in direction `dir`; basics move by −dir·α·t
            let dir = if dq < 0.0 { 1.0 } else { -1.0 };
            let alpha = self.ftran(q);
            let feas = self.settings.feasibility_tol;
            let piv = self.settings.pivot_tol;

            // Harris pass one: relaxed step bound
            let mut relaxed = f64::INFINITY;
            for i in 0..self.m {
                let delta = -dir * alpha[i];
                if delta.abs() <= piv {
                    continue;
                }
                let b = self.basis[i];
                let bound = if delta < 0.0 {
                    (self.x[b] - self.lower[b] + feas) / -delta
                } else {
                    (self.upper[b] - self.x[b] + feas) / delta
                };
                if bound < relaxed {
                    relaxed = bound;
                }
            }
            // pass two: among rows within the relaxed bound take the largest pivot
            let mut leave: Option<(usize, f64)> = None;
            let mut best_pivot = 0.0;
            for i in 0..self.m {
                let delta = -dir * alpha[i];
                if delta.abs() <= piv {
                    continue;
                }
                let b = self.basis[i];
                let ratio = if delta < 0.0 {
                    (self.x[b] - self.lower[b]) / -delta
                } else {
                    (self.upper[b] - self.x[b]) / delta
                };
                if !ratio.is_finite() || ratio > relaxed {
                    continue;
                }
                let better = if bland {
                    leave.map_or(true, |(li, lr)| {
                        ratio < lr - 1e-12 || (ratio <= lr + 1e-12 && b < self.basis[li])
                    })
                } else {
                    delta.abs() > best_pivot
                };
                if better {
                    best_pivot = delta.abs();
                    leave = Some((i, ratio.max(0.0)));
                }
            }

            let span = self.upper[q] - self.lower[q];
            let step = leave.map_or(f64::INFINITY, |(_, t)| t);
            self.iterations += 1;
            if span.is_finite() && span <= step {
                // bound flip, basis unchanged
                self.shift(q, dir, span, &alpha);
                self.pos[q] = if dir > 0.0 {
                    Position::AtUpper
                } else {
                    Position::AtLower
                };
                self.x[q] = if dir > 0.0 { self.upper[q] } else { self.lower[q] };
                degenerate_streak = 0;
                continue;
            }
            let Some((r, t)) = leave else {
                return Phase::Unbounded;
            };
            self.shift(q, dir, t, &alpha);
            let leaving = self.basis[r];
            let delta = -dir * alpha[r];
            if delta < 0.0 {
                self.pos[leaving] = Position::AtLower;
                self.x[leaving] = self.lower[leaving];
            } else {
                self.pos[leaving] = Position::AtUpper;
                self.x[leaving] = self.upper[leaving];
            }
            if !self.x[leaving].is_finite() {
                // a free variable can only leave through a finite bound
                self.pos[leaving] = Position::Zero;
                self.x[leaving] = 0.0;
            }
            self.pivot(r, q, &alpha);
            if t <= feas {
                degenerate_streak += 1;
            } else {
                degenerate_streak = 0;
            }
        }
    }

    fn shift(&mut self, q: usize, dir: f64, t: f64, alpha: &[f64]) {
        if t == 0.0 {
            return;
        }
        self.x[q] += dir * t;
        for i in 0..self.m {
            let b = self.basis[i];
            self.x[b] -= dir * t * alpha[i];
        }
    }

    fn pivot(&mut self, r: usize, q: usize, alpha: &[f64]) {
        let m = self.m;
        let inv_pivot = 1.0 / alpha[r];
        for k in 0..m {
            self.binv[r * m + k] *= inv_pivot;
        }
        let (before, rest) = self.binv.split_at_mut(r * m);
        let (pivot_row, after) = rest.split_at_mut(m);
        for (i, row) in before.chunks_exact_mut(m).enumerate() {
            let a = alpha[i];
            if a != 0.0 {
                row.iter_mut().zip(pivot_row.iter()).for_each(|(v, p)| *v -= a * p);
            }
        }
        for (offset, row) in after.chunks_exact_mut(m).enumerate() {
            let a = alpha[r + 1 + offset];
            if a != 0.0 {
                row.iter_mut().zip(pivot_row.iter()).for_each(|(v, p)| *v -= a * p);
            }
        }
        self.pos[q] = Position::Basic;
        self.basis[r] = q;
        self.since_refactor += 1;
    }

    /// Pivots basic artificials out where a structural column allows it.
    fn drive_out_artificials(&mut self) {
        let m = self.m;
        for r in 0..m {
            if !self.is_artificial(self.basis[r]) {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for j in 0..self.n {
                if self.pos[j] == Position::Basic {
                    continue;
                }
                let mut v = 0.0;
                for &(row, c) in self.lp.column(j) {
                    v += self.binv[r * m + row] * c;
                }
                if v.abs() > 1e-7 && best.map_or(true, |(_, b)| v.abs() > b.abs()) {
                    best = Some((j, v));
                }
            }
            if let Some((j, _)) = best {
                let alpha = self.ftran(j);
                let leaving = self.basis[r];
                self.pos[leaving] = Position::AtLower;
                self.x[leaving] = 0.0;
                self.pivot(r, j, &alpha);
            }
        }
    }

    fn solve(&mut self) -> LpResult {
        let (m, n) = (self.m, self.n);
        // phase one
        for k in 0..m {
            self.cost[n + k] = 1.0;
        }
        match self.run_phase() {
            Phase::Optimal => {}
            other => return self.failure(other, "phase one"),
        }
        let infeasibility: f64 = (0..m).map(|k| self.x[n + k]).sum();
        let scale = 1.0 + self.lp.rhs().iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if infeasibility > 1e-9 * scale {
            let y = self.duals();
            let mut result = LpResult::failed(
                LpStatus::Infeasible,
                self.lp,
                format!("phase one ended with total infeasibility {infeasibility:.3e}"),
            );
            result.y = y;
            result.objective_value = infeasibility;
            result.iterations = self.iterations;
            return result;
        }

        // phase two: artificials pinned at zero
        for k in 0..m {
            let j = n + k;
            self.upper[j] = 0.0;
            self.cost[j] = 0.0;
            if self.pos[j] != Position::Basic {
                self.pos[j] = Position::AtLower;
                self.x[j] = 0.0;
            }
        }
        self.drive_out_artificials();
        if !self.refactor() {
            return self.failure(Phase::Singular, "phase two start");
        }
        self.cost[..n].copy_from_slice(self.lp.objective());
        match self.run_phase() {
            Phase::Optimal => {}
            other => return self.failure(other, "phase two"),
        }

        let y = self.duals();
        let z = self.x[..n].to_vec();
        let reduced_costs = (0..n).map(|j| self.reduced_cost(j, &y)).collect();
        LpResult {
            status: LpStatus::Optimal,
            objective_value: self.lp.objective_value(&z),
            z,
            y,
            reduced_costs,
            iterations: self.iterations,
            diagnostics: format!("optimal after {} iterations", self.iterations),
        }
    }

    fn failure(&self, phase: Phase, label: &str) -> LpResult {
        let (status, what) = match phase {
            Phase::Unbounded => (LpStatus::Unbounded, "unbounded direction"),
            Phase::IterationLimit => (LpStatus::NumericalFailure, "iteration limit"),
            Phase::Singular => (LpStatus::NumericalFailure, "singular basis on refactorisation"),
            Phase::Optimal => (LpStatus::NumericalFailure, "unexpected"),
        };
        let mut result = LpResult::failed(status, self.lp, format!("{label}: {what}"));
        result.iterations = self.iterations;
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::{check_optimality, AffineExpr};
    use proptest::prelude::*;

    const INF: f64 = f64::INFINITY;

    fn solve(lp: &LinearProgram) -> LpResult {
        SimplexSolver::default().solve(lp)
    }

    #[test]
    fn single_fixed_equality() {
        let mut lp = LinearProgram::new();
        let z = lp.add_variable(1.0, 0.0, 2.0);
        lp.add_row(&[(z, 1.0)], 1.0).unwrap();
        let r = solve(&lp);
        assert_eq!(r.status, LpStatus::Optimal);
        assert!((r.z[0] - 1.0).abs() < 1e-12);
        assert!((r.objective_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn upper_bounded_maximisation_is_bounded() {
        // min −z with z ≤ 1 stops at the bound
        let mut lp = LinearProgram::new();
        lp.add_variable(-1.0, -INF, 1.0);
        let r = solve(&lp);
        assert_eq!(r.status, LpStatus::Optimal);
        assert_eq!(r.objective_value, -1.0);
    }

    #[test]
    fn free_below_minimisation_is_unbounded() {
        let mut lp = LinearProgram::new();
        let z = lp.add_variable(1.0, -INF, 1.0);
        let s = lp.add_variable(0.0, 0.0, INF);
        // z + s = 1 keeps z ≤ 1 as a row instead of a bound
        lp.add_row(&[(z, 1.0), (s, 1.0)], 1.0).unwrap();
        lp.set_bounds(z, -INF, INF);
        assert_eq!(solve(&lp).status, LpStatus::Unbounded);
    }

    #[test]
    fn infeasible_rows() {
        let mut lp = LinearProgram::new();
        let a = lp.add_variable(0.0, 0.0, 1.0);
        let b = lp.add_variable(0.0, 0.0, 1.0);
        lp.add_row(&[(a, 1.0), (b, 1.0)], 3.0).unwrap();
        let r = solve(&lp);
        assert_eq!(r.status, LpStatus::Infeasible);
        assert!((r.objective_value - 1.0).abs() < 1e-12);
    }

    fn assignment(costs: [[f64; 2]; 2]) -> LinearProgram {
        let mut lp = LinearProgram::new();
        let z: Vec<usize> = (0..4).map(|k| lp.add_variable(costs[k / 2][k % 2], 0.0, INF)).collect();
        for i in 0..2 {
            lp.add_row(&[(z[2 * i], 1.0), (z[2 * i + 1], 1.0)], 1.0).unwrap();
        }
        for j in 0..2 {
            lp.add_row(&[(z[j], 1.0), (z[2 + j], 1.0)], 1.0).unwrap();
        }
        lp
    }

    #[test]
    fn assignment_matches_enumerated_bases() {
        for costs in [[[1.0, 4.0], [3.0, 2.0]], [[5.0, 1.0], [2.0, 7.0]], [[2.0, 2.0], [2.0, 2.0]]] {
            // the two permutation matrices are the only basic feasible points
            let brute = f64::min(costs[0][0] + costs[1][1], costs[0][1] + costs[1][0]);
            let lp = assignment(costs);
            let r = solve(&lp);
            assert_eq!(r.status, LpStatus::Optimal);
            assert!((r.objective_value - brute).abs() < 1e-12);
            assert!(check_optimality(&lp, &r).max() <= 1e-9);
        }
    }

    #[test]
    fn l1_split_recovers_absolute_value() {
        for value in [-2.0, 0.0, 3.5] {
            let mut lp = LinearProgram::new();
            let x = lp.add_variable(0.0, value, value);
            let g = lp
                .linearize_l1_group(&[AffineExpr::new(vec![(x, 1.0)], 0.0)], 1.0)
                .unwrap();
            let r = solve(&lp);
            assert_eq!(r.status, LpStatus::Optimal);
            assert!((g.contribution(&r.z) - value.abs()).abs() < 1e-12);
            if value < 0.0 {
                assert!((r.z[g.minus.start] - 2.0).abs() < 1e-12);
                assert_eq!(r.z[g.plus.start], 0.0);
            }
        }
    }

    #[test]
    fn redundant_rows_are_tolerated() {
        let mut lp = LinearProgram::new();
        let a = lp.add_variable(1.0, 0.0, INF);
        let b = lp.add_variable(2.0, 0.0, INF);
        lp.add_row(&[(a, 1.0), (b, 1.0)], 2.0).unwrap();
        lp.add_row(&[(a, 2.0), (b, 2.0)], 4.0).unwrap();
        let r = solve(&lp);
        assert_eq!(r.status, LpStatus::Optimal);
        assert!((r.objective_value - 2.0).abs() < 1e-12);
        assert!(check_optimality(&lp, &r).max() <= 1e-9);
    }

    #[test]
    fn deterministic_results() {
        let lp = assignment([[2.0, 2.0], [2.0, 2.0]]);
        assert_eq!(solve(&lp), solve(&lp));
    }

    /// Random feasible LP: rows built around a known interior point.
    fn random_lp(seed: u64, rows: usize, cols: usize) -> LinearProgram {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state % 10_000) as f64 / 10_000.0
        };
        let mut lp = LinearProgram::new();
        let point: Vec<f64> = (0..cols).map(|_| next() * 2.0).collect();
        for j in 0..cols {
            let (lo, hi) = match j % 4 {
                0 => (0.0, INF),
                1 => (-1.0, 3.0),
                2 => (-INF, INF),
                _ => (0.0, 2.5),
            };
            // positive costs on the unbounded-above columns keep the optimum finite
            let cost = if j % 4 == 0 { 0.1 + next() * 3.0 } else { next() * 4.0 - 1.0 };
            lp.add_variable(cost, lo, hi);
        }
        for _ in 0..rows {
            let mut terms = Vec::new();
            for j in 0..cols {
                if next() < 0.6 {
                    terms.push((j, next() * 2.0 - 1.0));
                }
            }
            let rhs: f64 = terms.iter().map(|&(j, c)| c * point[j]).sum();
            lp.add_row(&terms, rhs).unwrap();
        }
        // keep the free columns from making the program unbounded
        for j in (2..cols).step_by(4) {
            lp.set_bounds(j, -10.0, 10.0);
        }
        lp
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn optimal_results_certify_themselves(seed in 0u64..10_000, rows in 1usize..12, extra in 1usize..12) {
            let lp = random_lp(seed, rows, rows + extra);
            let r = solve(&lp);
            prop_assert_eq!(r.status, LpStatus::Optimal);
            let report = check_optimality(&lp, &r);
            prop_assert!(report.primal_infeasibility <= 1e-9, "{:?}", report);
            prop_assert!(report.dual_infeasibility <= 1e-9, "{:?}", report);
            prop_assert!(report.complementary_slackness <= 1e-9, "{:?}", report);
            prop_assert!(report.relative_duality_gap <= 1e-9, "{:?}", report);
        }

        #[test]
        fn l1_pairs_never_both_positive(values in proptest::collection::vec(-5.0f64..5.0, 1..8)) {
            let mut lp = LinearProgram::new();
            let exprs: Vec<AffineExpr> = values
                .iter()
                .map(|&v| {
                    let x = lp.add_variable(0.0, v, v);
                    AffineExpr::new(vec![(x, 1.0)], 0.0)
                })
                .collect();
            let g = lp.linearize_l1_group(&exprs, 1.0).unwrap();
            let r = solve(&lp);
            prop_assert_eq!(r.status, LpStatus::Optimal);
            let l1: f64 = values.iter().map(|v| v.abs()).sum();
            prop_assert!((g.contribution(&r.z) - l1).abs() <= 1e-9);
            for k in 0..g.len() {
                prop_assert!(r.z[g.plus.start + k] * r.z[g.minus.start + k] <= 1e-9);
            }
        }
    }
}
