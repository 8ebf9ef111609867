//! [`LpSolver`] backed by HiGHS.
//!
//! The in-repo simplex handles the small programs of the forward solver; the
//! residual programs of 3x3 and larger grids have tens of thousands of rows
//! and go to HiGHS instead.

use gnepio_core::lp::{LinearProgram, LpResult, LpSolver, LpStatus};
use highs::{ColProblem, HighsModelStatus, Sense};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HighsSolver {
    /// Wall-clock limit in seconds.
    pub time_limit: Option<f64>,
    pub verbose: bool,
}

impl Default for HighsSolver {
    fn default() -> Self {
        HighsSolver { time_limit: None, verbose: false }
    }
}

impl HighsSolver {
    pub fn with_time_limit(seconds: f64) -> Self {
        HighsSolver { time_limit: Some(seconds), ..HighsSolver::default() }
    }
}

impl LpSolver for HighsSolver {
    fn solve(&self, lp: &LinearProgram) -> LpResult {
        if let Err(e) = lp.validate() {
            return LpResult::failed(LpStatus::NumericalFailure, lp, e.to_string());
        }
        let (n, rows) = (lp.num_variables(), lp.num_rows());
        if n == 0 {
            return if lp.rhs().iter().all(|b| *b == 0.0) {
                LpResult {
                    status: LpStatus::Optimal,
                    z: Vec::new(),
                    objective_value: 0.0,
                    y: vec![0.0; rows],
                    reduced_costs: Vec::new(),
                    iterations: 0,
                    diagnostics: String::new(),
                }
            } else {
                LpResult::failed(LpStatus::Infeasible, lp, "no variables and a nonzero right-hand side")
            };
        }

        let mut problem = ColProblem::new();
        let handles: Vec<_> = lp.rhs().iter().map(|&b| problem.add_row(b..=b)).collect();
        for j in 0..n {
            let entries: Vec<_> = lp.column(j).iter().map(|&(r, v)| (handles[r], v)).collect();
            problem.add_column(lp.objective()[j], lp.lower()[j]..=lp.upper()[j], entries);
        }
        let mut model = match problem.try_optimise(Sense::Minimise) {
            Ok(model) => model,
            Err(status) => {
                return LpResult::failed(LpStatus::NumericalFailure, lp, format!("HiGHS rejected the model: {status:?}"))
            }
        };
        if !self.verbose {
            model.make_quiet();
        }
        // one thread per solve; callers parallelise across trials
        model.set_option("threads", 1);
        if let Some(limit) = self.time_limit {
            model.set_option("time_limit", limit);
        }
        let solved = match model.try_solve() {
            Ok(solved) => solved,
            Err(status) => return LpResult::failed(LpStatus::NumericalFailure, lp, format!("HiGHS failed: {status:?}")),
        };
        let status = match solved.status() {
            HighsModelStatus::Optimal => LpStatus::Optimal,
            HighsModelStatus::Infeasible => LpStatus::Infeasible,
            HighsModelStatus::Unbounded => LpStatus::Unbounded,
            other => {
                return LpResult::failed(LpStatus::NumericalFailure, lp, format!("HiGHS model status {other:?}"));
            }
        };
        let iterations = solved.simplex_iteration_count().max(0) as usize + solved.ipm_iteration_count().max(0) as usize;
        if status != LpStatus::Optimal {
            let mut failed = LpResult::failed(status, lp, format!("HiGHS model status {:?}", solved.status()));
            failed.iterations = iterations;
            return failed;
        }
        let solution = solved.get_solution();
        let z = solution.columns().to_vec();
        LpResult {
            status,
            objective_value: lp.objective_value(&z),
            z,
            y: solution.dual_rows().to_vec(),
            reduced_costs: solution.dual_columns().to_vec(),
            iterations,
            diagnostics: String::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use gnepio_core::lp::{check_optimality, SimplexSolver};

    fn transport() -> LinearProgram {
        // two sources, two sinks, balanced
        let mut lp = LinearProgram::new();
        let costs = [4.0, 6.0, 5.0, 3.0];
        let x: Vec<usize> = costs.iter().map(|&c| lp.add_variable(c, 0.0, f64::INFINITY)).collect();
        lp.add_row(&[(x[0], 1.0), (x[1], 1.0)], 3.0).unwrap();
        lp.add_row(&[(x[2], 1.0), (x[3], 1.0)], 2.0).unwrap();
        lp.add_row(&[(x[0], 1.0), (x[2], 1.0)], 1.5).unwrap();
        lp.add_row(&[(x[1], 1.0), (x[3], 1.0)], 3.5).unwrap();
        lp
    }

    #[test]
    fn agrees_with_the_in_repo_simplex() {
        let lp = transport();
        let a = HighsSolver::default().solve(&lp);
        let b = SimplexSolver::default().solve(&lp);
        assert!(a.is_optimal() && b.is_optimal());
        assert!((a.objective_value - b.objective_value).abs() < 1e-9);
        assert!(check_optimality(&lp, &a).max() < 1e-7, "{:?}", check_optimality(&lp, &a));
    }

    #[test]
    fn free_variables_and_upper_bounds() {
        let mut lp = LinearProgram::new();
        let z = lp.add_variable(-1.0, f64::NEG_INFINITY, 1.0);
        let w = lp.add_variable(1.0, 0.0, 4.0);
        lp.add_row(&[(z, 1.0), (w, -1.0)], -2.0).unwrap();
        let r = HighsSolver::default().solve(&lp);
        assert!(r.is_optimal());
        assert!((r.objective_value - 2.0).abs() < 1e-9, "{}", r.objective_value);
        assert!(check_optimality(&lp, &r).max() < 1e-7);
    }

    #[test]
    fn statuses_map() {
        let mut lp = LinearProgram::new();
        let z = lp.add_variable(0.0, 0.0, 1.0);
        lp.add_row(&[(z, 1.0)], 2.0).unwrap();
        assert_eq!(HighsSolver::default().solve(&lp).status, LpStatus::Infeasible);

        let mut lp = LinearProgram::new();
        let z = lp.add_variable(1.0, f64::NEG_INFINITY, f64::INFINITY);
        let w = lp.add_variable(0.0, 0.0, f64::INFINITY);
        lp.add_row(&[(z, 1.0), (w, 1.0)], 0.0).unwrap();
        let status = HighsSolver::default().solve(&lp).status;
        assert!(matches!(status, LpStatus::Unbounded | LpStatus::NumericalFailure), "{status:?}");

        assert_eq!(HighsSolver::default().solve(&LinearProgram::new()).status, LpStatus::Optimal);
    }
}
