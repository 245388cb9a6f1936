//! Mixed-binary linear programming: model construction, a built-in
//! branch-and-bound solver, LP-format export/import and the big-M encodings
//! of ReLU networks used by the counterfactual search.

mod branch;
pub mod encode;
mod lp_format;
mod model;
mod simplex;

use thiserror::Error;

pub use branch::{solve, solve_relaxation, solve_with, SolveOptions};
pub use lp_format::{export_lp, parse_lp};
pub use model::{Comparator, Constraint, LinExpr, MilpModel, Objective, Sense, VarId, Variable};

#[derive(Debug, Error)]
pub enum MilpError {
    #[error("malformed model: {0}")]
    Malformed(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("LP parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    Timeout,
}

#[derive(Clone, Debug)]
pub struct MilpSolution {
    pub status: SolveStatus,
    /// One value per model variable; empty when no feasible point is known.
    pub values: Vec<f64>,
    pub objective_value: f64,
    /// Branch-and-bound nodes processed.
    pub nodes: usize,
}

impl MilpSolution {
    fn empty(status: SolveStatus, nodes: usize) -> Self {
        MilpSolution { status, values: Vec::new(), objective_value: f64::NAN, nodes }
    }

    pub fn has_values(&self) -> bool {
        !self.values.is_empty()
    }

    pub fn value(&self, v: VarId) -> f64 {
        self.values[v.0]
    }

    pub fn eval(&self, expr: &LinExpr) -> f64 {
        expr.eval(&self.values)
    }
}
