//! Error metrics, spectral monotonicity diagnostics and boxplot statistics.

use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::game::{CostMode, CostParameterization, GameError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("flow tensors differ in shape: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize, usize), (usize, usize, usize)),
    #[error("expected {expected} values for the tensor shape, got {got}")]
    Length { expected: usize, got: usize },
    #[error("cannot summarise an empty list")]
    Empty,
    #[error("value {0} is not finite")]
    NonFinite(f64),
}

/// Flows indexed by `(od pair k, player i, arc a)`, stored `k`-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTensor {
    pairs: usize,
    players: usize,
    arcs: usize,
    values: Vec<f64>,
}

impl FlowTensor {
    pub fn new(pairs: usize, players: usize, arcs: usize, values: Vec<f64>) -> Result<Self, AnalysisError> {
        let expected = pairs * players * arcs;
        if values.len() != expected {
            return Err(AnalysisError::Length {
                expected,
                got: values.len(),
            });
        }
        Ok(FlowTensor {
            pairs,
            players,
            arcs,
            values,
        })
    }

    /// Builds a tensor from per-pair stacked `N × n` flow vectors.
    pub fn from_pairs(players: usize, arcs: usize, flows: &[Vec<f64>]) -> Result<Self, AnalysisError> {
        let mut values = Vec::with_capacity(flows.len() * players * arcs);
        for f in flows {
            if f.len() != players * arcs {
                return Err(AnalysisError::Length {
                    expected: players * arcs,
                    got: f.len(),
                });
            }
            values.extend_from_slice(f);
        }
        FlowTensor::new(flows.len(), players, arcs, values)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.pairs, self.players, self.arcs)
    }

    pub fn get(&self, pair: usize, player: usize, arc: usize) -> f64 {
        self.values[(pair * self.players + player) * self.arcs + arc]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Stacked `N × n` flows of one pair.
    pub fn pair(&self, k: usize) -> &[f64] {
        let len = self.players * self.arcs;
        &self.values[k * len..(k + 1) * len]
    }
}

/// Frobenius norm of the difference over every `(k, i, a)`.
pub fn flow_error(original: &FlowTensor, recovered: &FlowTensor) -> Result<f64, AnalysisError> {
    if original.shape() != recovered.shape() {
        return Err(AnalysisError::ShapeMismatch(original.shape(), recovered.shape()));
    }
    let sum: f64 = original
        .values
        .iter()
        .zip(&recovered.values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(libm::sqrt(sum))
}

/// [`flow_error`] divided by `K·N·n`.
pub fn normalized_flow_error(original: &FlowTensor, recovered: &FlowTensor) -> Result<f64, AnalysisError> {
    let error = flow_error(original, recovered)?;
    let count = original.values.len();
    Ok(if count == 0 { 0.0 } else { error / count as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralReport {
    pub min_eig_symmetric_part: f64,
    pub is_positive_definite: bool,
    /// Smallest `C` diagonal entry; reported in shared mode only.
    pub modulus_lower_bound: Option<f64>,
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn symmetric_min_eigenvalue(matrix: DMatrix<f64>) -> f64 {
    if matrix.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(matrix)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Minimum eigenvalue of `½(M + Mᵀ)`.
///
/// With diagonal cost matrices the symmetric part splits into one `N × N`
/// matrix per arc, with `2c_ia` on the diagonal and `(c_ia + c_ja)/2` off it.
pub fn spectral_check(params: &CostParameterization, players: usize) -> Result<SpectralReport, GameError> {
    if params.players() != players {
        return Err(GameError::Dimension {
            what: "cost parameter players",
            expected: players,
            got: params.players(),
        });
    }
    let mut min_eig = f64::INFINITY;
    for a in 0..params.arcs() {
        let block = DMatrix::from_fn(players, players, |i, j| {
            let (ci, cj) = (params.c_int(i)[a], params.c_int(j)[a]);
            if i == j {
                2.0 * ci
            } else {
                0.5 * (ci + cj)
            }
        });
        min_eig = min_eig.min(symmetric_min_eigenvalue(block));
    }
    let modulus_lower_bound = (params.mode() == CostMode::SharedAcrossPlayers)
        .then(|| params.c_int(0).iter().copied().fold(f64::INFINITY, f64::min));
    Ok(SpectralReport {
        min_eig_symmetric_part: min_eig,
        is_positive_definite: min_eig > 0.0,
        modulus_lower_bound,
    })
}

/// Boxplot statistics with linear-interpolation quartiles and whiskers at
/// `1.5 · IQR` beyond the quartiles.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSummary {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    /// Values outside the whiskers, ascending.
    pub outliers: Vec<f64>,
}

pub fn summarize_trials(values: &[f64]) -> Result<TrialSummary, AnalysisError> {
    if values.is_empty() {
        return Err(AnalysisError::Empty);
    }
    if let Some(&bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite(bad));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let quantile = |p: f64| {
        let pos = (sorted.len() - 1) as f64 * p;
        let lo = libm::floor(pos) as usize;
        let hi = (lo + 1).min(sorted.len() - 1);
        let frac = pos - lo as f64;
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    };
    let (q1, median, q3) = (quantile(0.25), quantile(0.5), quantile(0.75));
    let iqr = q3 - q1;
    let (whisker_low, whisker_high) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let outliers = sorted
        .iter()
        .copied()
        .filter(|&v| v < whisker_low || v > whisker_high)
        .collect();
    Ok(TrialSummary {
        q1,
        median,
        q3,
        whisker_low,
        whisker_high,
        outliers,
    })
}
