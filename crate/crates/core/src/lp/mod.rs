//! Linear programs in equality form with variable bounds.
//!
//! `min cᵀz  s.t.  A z = b,  lb ≤ z ≤ ub`. The constraint matrix is stored
//! column-wise. Any backend implementing [`LpSolver`] can solve it; the
//! in-crate [`SimplexSolver`] is a bounded-variable revised simplex.

mod mps;
mod simplex;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

pub use mps::write_mps;
pub use simplex::{SimplexSettings, SimplexSolver};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LpError {
    #[error("variable {0} has lower bound above upper bound")]
    InvertedBounds(usize),
    #[error("variable {var} referenced in row {row} does not exist")]
    UnknownVariable { var: usize, row: usize },
    #[error("{0} is not finite")]
    NonFinite(&'static str),
}

/// A sparse linear program `min cᵀz, A z = b, lb ≤ z ≤ ub`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearProgram {
    objective: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    columns: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
    names: Option<Vec<String>>,
}

impl LinearProgram {
    pub fn new() -> Self {
        LinearProgram::default()
    }

    /// Adds a variable; infinite bounds are allowed.
    pub fn add_variable(&mut self, cost: f64, lower: f64, upper: f64) -> usize {
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.columns.push(Vec::new());
        if let Some(names) = &mut self.names {
            names.push(alloc::format!("z{}", self.objective.len() - 1));
        }
        self.objective.len() - 1
    }

    /// Adds `count` variables sharing cost and bounds, returning their range.
    pub fn add_variables(&mut self, count: usize, cost: f64, lower: f64, upper: f64) -> Range<usize> {
        let start = self.num_variables();
        for _ in 0..count {
            self.add_variable(cost, lower, upper);
        }
        start..self.num_variables()
    }

    /// Adds the row `Σ coef·z = rhs`. Repeated variables are summed.
    pub fn add_row(&mut self, terms: &[(usize, f64)], rhs: f64) -> Result<usize, LpError> {
        let row = self.rhs.len();
        for &(var, _) in terms {
            if var >= self.num_variables() {
                return Err(LpError::UnknownVariable { var, row });
            }
        }
        for &(var, coef) in terms {
            if coef == 0.0 {
                continue;
            }
            let column = &mut self.columns[var];
            match column.last_mut() {
                Some((r, c)) if *r == row => *c += coef,
                _ => column.push((row, coef)),
            }
        }
        self.rhs.push(rhs);
        Ok(row)
    }

    pub fn set_name(&mut self, var: usize, name: impl Into<String>) {
        let n = self.num_variables();
        let names = self
            .names
            .get_or_insert_with(|| (0..n).map(|j| alloc::format!("z{j}")).collect());
        names[var] = name.into();
    }

    pub fn name(&self, var: usize) -> Option<&str> {
        self.names.as_ref().map(|n| n[var].as_str())
    }

    pub fn num_variables(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn num_nonzeros(&self) -> usize {
        self.columns.iter().map(Vec::len).sum()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    /// Nonzeros of column `var` as `(row, coefficient)`, rows ascending.
    pub fn column(&self, var: usize) -> &[(usize, f64)] {
        &self.columns[var]
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.lower[var] = lower;
        self.upper[var] = upper;
    }

    pub fn set_cost(&mut self, var: usize, cost: f64) {
        self.objective[var] = cost;
    }

    pub fn validate(&self) -> Result<(), LpError> {
        for j in 0..self.num_variables() {
            if self.lower[j] > self.upper[j] {
                return Err(LpError::InvertedBounds(j));
            }
            if !self.objective[j].is_finite() {
                return Err(LpError::NonFinite("objective coefficient"));
            }
            if self.lower[j] == f64::INFINITY || self.upper[j] == f64::NEG_INFINITY {
                return Err(LpError::InvertedBounds(j));
            }
            if self.columns[j].iter().any(|(_, c)| !c.is_finite()) {
                return Err(LpError::NonFinite("constraint coefficient"));
            }
        }
        if self.rhs.iter().any(|b| !b.is_finite()) {
            return Err(LpError::NonFinite("right-hand side"));
        }
        Ok(())
    }

    /// `A z` for a full-length `z`.
    pub fn row_activity(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_rows()];
        for (j, column) in self.columns.iter().enumerate() {
            if z[j] != 0.0 {
                for &(r, c) in column {
                    out[r] += c * z[j];
                }
            }
        }
        out
    }

    pub fn objective_value(&self, z: &[f64]) -> f64 {
        self.objective.iter().zip(z).map(|(c, v)| c * v).sum()
    }

    /// Introduces `e⁺, e⁻ ≥ 0` with `expr_q = e⁺_q − e⁻_q` for every
    /// expression and adds `weight · Σ(e⁺ + e⁻)` to the objective.
    ///
    /// At an optimum with `weight > 0` the added cost equals `weight · ‖expr‖₁`.
    pub fn linearize_l1_group(
        &mut self,
        exprs: &[AffineExpr],
        weight: f64,
    ) -> Result<L1Group, LpError> {
        let q = exprs.len();
        let plus = self.add_variables(q, weight, 0.0, f64::INFINITY);
        let minus = self.add_variables(q, weight, 0.0, f64::INFINITY);
        let first_row = self.num_rows();
        let mut terms = Vec::new();
        for (k, expr) in exprs.iter().enumerate() {
            terms.clear();
            terms.extend_from_slice(&expr.terms);
            terms.push((plus.start + k, -1.0));
            terms.push((minus.start + k, 1.0));
            self.add_row(&terms, -expr.constant)?;
        }
        Ok(L1Group {
            plus,
            minus,
            rows: first_row..self.num_rows(),
        })
    }
}

/// `Σ coef·z + constant` over existing variables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffineExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl AffineExpr {
    pub fn new(terms: Vec<(usize, f64)>, constant: f64) -> Self {
        AffineExpr { terms, constant }
    }

    pub fn constant(value: f64) -> Self {
        AffineExpr {
            terms: Vec::new(),
            constant: value,
        }
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(j, c)| c * z[j]).sum::<f64>()
    }
}

/// Variables and rows introduced by [`LinearProgram::linearize_l1_group`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct L1Group {
    pub plus: Range<usize>,
    pub minus: Range<usize>,
    pub rows: Range<usize>,
}

impl L1Group {
    pub fn len(&self) -> usize {
        self.plus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plus.is_empty()
    }

    /// `Σ (e⁺ + e⁻)` at `z`.
    pub fn contribution(&self, z: &[f64]) -> f64 {
        z[self.plus.clone()].iter().chain(&z[self.minus.clone()]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// The backend gave up (iteration limit, singular basis, ...).
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpResult {
    pub status: LpStatus,
    /// Primal point; meaningful when `Optimal`.
    pub z: Vec<f64>,
    pub objective_value: f64,
    /// Equality-row duals `y`, with reduced costs `d = c − Aᵀy`.
    pub y: Vec<f64>,
    pub reduced_costs: Vec<f64>,
    pub iterations: usize,
    pub diagnostics: String,
}

impl LpResult {
    pub fn failed(status: LpStatus, lp: &LinearProgram, diagnostics: impl Into<String>) -> Self {
        LpResult {
            status,
            z: vec![0.0; lp.num_variables()],
            objective_value: f64::NAN,
            y: vec![0.0; lp.num_rows()],
            reduced_costs: vec![0.0; lp.num_variables()],
            iterations: 0,
            diagnostics: diagnostics.into(),
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

/// Any LP backend.
pub trait LpSolver {
    fn solve(&self, lp: &LinearProgram) -> LpResult;
}

impl<S: LpSolver + ?Sized> LpSolver for &S {
    fn solve(&self, lp: &LinearProgram) -> LpResult {
        (**self).solve(lp)
    }
}

/// Measured optimality conditions of a claimed optimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalityReport {
    /// Largest `|A z − b|` or bound violation.
    pub primal_infeasibility: f64,
    /// Largest reduced cost with the wrong sign for its variable's position.
    pub dual_infeasibility: f64,
    /// Largest `|d_j| · distance(z_j, bound that d_j prices)`.
    pub complementary_slackness: f64,
    /// `|cᵀz − (bᵀy + Σ bound terms)| / (1 + |cᵀz|)`.
    pub relative_duality_gap: f64,
}

impl OptimalityReport {
    pub fn max(&self) -> f64 {
        self.primal_infeasibility
            .max(self.dual_infeasibility)
            .max(self.complementary_slackness)
            .max(self.relative_duality_gap)
    }
}

/// Recomputes feasibility, slackness and the duality gap from scratch.
pub fn check_optimality(lp: &LinearProgram, result: &LpResult) -> OptimalityReport {
    let z = &result.z;
    let activity = lp.row_activity(z);
    let mut primal: f64 = activity
        .iter()
        .zip(lp.rhs())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    // recompute reduced costs from y instead of trusting the backend's
    let mut dual_inf: f64 = 0.0;
    let mut slack: f64 = 0.0;
    let mut bound_terms = 0.0;
    for j in 0..lp.num_variables() {
        let (lo, hi) = (lp.lower()[j], lp.upper()[j]);
        primal = primal.max(lo - z[j]).max(z[j] - hi);
        let d = lp.objective()[j]
            - lp.column(j)
                .iter()
                .map(|&(r, c)| c * result.y[r])
                .sum::<f64>();
        if d > 0.0 {
            if lo.is_finite() {
                slack = slack.max(d * (z[j] - lo).abs());
                bound_terms += d * lo;
            } else {
                dual_inf = dual_inf.max(d);
            }
        } else if d < 0.0 {
            if hi.is_finite() {
                slack = slack.max(-d * (hi - z[j]).abs());
                bound_terms += d * hi;
            } else {
                dual_inf = dual_inf.max(-d);
            }
        }
    }
    let primal_obj = lp.objective_value(z);
    let dual_obj: f64 = lp.rhs().iter().zip(&result.y).map(|(b, y)| b * y).sum::<f64>() + bound_terms;
    OptimalityReport {
        primal_infeasibility: primal.max(0.0),
        dual_infeasibility: dual_inf,
        complementary_slackness: slack,
        relative_duality_gap: (primal_obj - dual_obj).abs() / (1.0 + primal_obj.abs()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_row_merges_repeated_variables() {
        let mut lp = LinearProgram::new();
        let x = lp.add_variable(1.0, 0.0, 1.0);
        lp.add_row(&[(x, 1.0), (x, 2.0)], 3.0).unwrap();
        assert_eq!(lp.column(x), &[(0, 3.0)]);
        assert!(matches!(
            lp.add_row(&[(7, 1.0)], 0.0),
            Err(LpError::UnknownVariable { var: 7, row: 1 })
        ));
    }

    #[test]
    fn validate_rejects_inverted_bounds() {
        let mut lp = LinearProgram::new();
        lp.add_variable(0.0, 2.0, 1.0);
        assert_eq!(lp.validate(), Err(LpError::InvertedBounds(0)));
    }

    #[test]
    fn l1_group_rows_encode_the_split() {
        let mut lp = LinearProgram::new();
        let x = lp.add_variable(0.0, f64::NEG_INFINITY, f64::INFINITY);
        let group = lp
            .linearize_l1_group(&[AffineExpr::new(vec![(x, 2.0)], 1.0)], 1.0)
            .unwrap();
        assert_eq!(group.len(), 1);
        assert_eq!(group.rows, 0..1);
        // 2x + 1 − e⁺ + e⁻ = 0  ⇔  2x − e⁺ + e⁻ = −1
        assert_eq!(lp.rhs(), &[-1.0]);
        assert_eq!(lp.column(group.plus.start), &[(0, -1.0)]);
        assert_eq!(lp.column(group.minus.start), &[(0, 1.0)]);
    }

    #[test]
    fn names_default_and_override() {
        let mut lp = LinearProgram::new();
        lp.add_variable(0.0, 0.0, 1.0);
        assert_eq!(lp.name(0), None);
        lp.set_name(0, "flow");
        lp.add_variable(0.0, 0.0, 1.0);
        assert_eq!(lp.name(0), Some("flow"));
        assert_eq!(lp.name(1), Some("z1"));
    }
}
