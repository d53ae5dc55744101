//! Numerical tolerances shared by every module.

use serde::{Deserialize, Serialize};

/// Tolerance record. All solvers read their thresholds from here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Slack allowed on inequality feasibility (cone membership, wealth ≥ 0).
    pub feasibility: f64,
    /// Gradient-norm target for the concave solvers.
    pub optimality: f64,
    /// Minimum state-price mass for a measure to count as equivalent.
    pub strict_positivity: f64,
    /// Allowed utility gain along a price section before a price stops being marginal.
    pub marginal: f64,
    /// Default Gauss–Legendre node count for density models.
    pub quad_nodes: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            feasibility: 1e-9,
            optimality: 1e-8,
            strict_positivity: 1e-9,
            marginal: 1e-7,
            quad_nodes: 200,
        }
    }
}

impl Tolerances {
    /// Override the optimality tolerance, keeping everything else.
    pub fn with_optimality(mut self, tol: f64) -> Self {
        self.optimality = tol;
        self
    }
}
