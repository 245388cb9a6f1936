//! Best-first branch-and-bound over LP relaxations.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use super::model::{MilpModel, VarId};
use super::simplex::{solve_lp, solve_lp_from, Basis, LpOutcome, StandardForm};
use super::{MilpError, MilpSolution, SolveStatus};

#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub time_limit: Option<Duration>,
    /// Absolute optimality gap.
    pub gap: f64,
    pub integrality_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { time_limit: None, gap: 1e-9, integrality_tol: 1e-6 }
    }
}

impl SolveOptions {
    pub fn with_time_limit(limit: Duration) -> Self {
        SolveOptions { time_limit: Some(limit), ..Self::default() }
    }
}

struct Node {
    bound: f64,
    depth: usize,
    seq: usize,
    fixings: Vec<(usize, f64)>,
    /// Optimal basis of the parent's relaxation.
    start: Option<std::rc::Rc<Basis>>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // BinaryHeap is a max-heap: smallest bound first, then deepest, then oldest.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(self.depth.cmp(&other.depth))
            .then(other.seq.cmp(&self.seq))
    }
}

pub fn solve(model: &MilpModel, time_limit: Duration) -> Result<MilpSolution, MilpError> {
    solve_with(model, &SolveOptions::with_time_limit(time_limit))
}

/// Solves the LP relaxation only (binaries relaxed to `[0, 1]`).
pub fn solve_relaxation(model: &MilpModel) -> Result<MilpSolution, MilpError> {
    model.validate()?;
    let sf = StandardForm::from_model(model);
    let outcome = solve_lp(&sf, &sf.lower, &sf.upper)?;
    Ok(match outcome {
        LpOutcome::Optimal { x, objective, .. } => MilpSolution {
            status: SolveStatus::Optimal,
            objective_value: sf.cost_sign * objective + sf.cost_constant,
            values: x,
            nodes: 1,
        },
        LpOutcome::Infeasible => MilpSolution::empty(SolveStatus::Infeasible, 1),
        LpOutcome::Unbounded => MilpSolution::empty(SolveStatus::Unbounded, 1),
    })
}

pub fn solve_with(model: &MilpModel, options: &SolveOptions) -> Result<MilpSolution, MilpError> {
    model.validate()?;
    let start = Instant::now();
    let sf = StandardForm::from_model(model);
    let binaries: Vec<usize> = model.binaries().map(|VarId(i)| i).collect();

    let mut heap = BinaryHeap::new();
    heap.push(Node { bound: f64::NEG_INFINITY, depth: 0, seq: 0, fixings: Vec::new(), start: None });
    let mut seq = 1;
    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let mut nodes = 0usize;
    let mut lower = sf.lower.clone();
    let mut upper = sf.upper.clone();

    while let Some(node) = heap.pop() {
        if let Some((best, _)) = &incumbent {
            if node.bound >= best - options.gap {
                break;
            }
        }
        if options.time_limit.is_some_and(|limit| start.elapsed() > limit) {
            return Ok(finish(SolveStatus::Timeout, incumbent, &sf, nodes));
        }
        nodes += 1;

        lower.copy_from_slice(&sf.lower);
        upper.copy_from_slice(&sf.upper);
        for &(j, v) in &node.fixings {
            lower[j] = v;
            upper[j] = v;
        }
        let (x, obj, basis) = match solve_lp_from(&sf, &lower, &upper, node.start.as_deref())? {
            LpOutcome::Optimal { x, objective, basis } => (x, objective, basis),
            LpOutcome::Infeasible => continue,
            LpOutcome::Unbounded => {
                if node.depth == 0 {
                    return Ok(MilpSolution::empty(SolveStatus::Unbounded, nodes));
                }
                return Err(MilpError::Numeric("unbounded relaxation below a bounded root".into()));
            }
        };
        if let Some((best, _)) = &incumbent {
            if obj >= best - options.gap {
                continue;
            }
        }

        // Most fractional binary; lowest index on ties.
        let mut branch: Option<(usize, f64)> = None;
        for &j in &binaries {
            let frac = (x[j] - x[j].floor()).min(x[j].ceil() - x[j]);
            if frac > options.integrality_tol && branch.is_none_or(|(_, f)| frac > f + 1e-12) {
                branch = Some((j, frac));
            }
        }

        match branch {
            None => {
                let (obj, x) = polish(&sf, &binaries, &mut lower, &mut upper, obj, x)?;
                if incumbent.as_ref().is_none_or(|(best, _)| obj < *best) {
                    incumbent = Some((obj, x));
                }
            }
            Some((j, _)) => {
                let basis = std::rc::Rc::new(basis);
                for v in [0.0, 1.0] {
                    let mut fixings = node.fixings.clone();
                    fixings.push((j, v));
                    let start = Some(basis.clone());
                    heap.push(Node { bound: obj, depth: node.depth + 1, seq, fixings, start });
                    seq += 1;
                }
            }
        }
    }

    let status = if incumbent.is_some() { SolveStatus::Optimal } else { SolveStatus::Infeasible };
    Ok(finish(status, incumbent, &sf, nodes))
}

/// Rounds the binaries of an integral LP point and re-solves with them fixed,
/// so continuous values are consistent with exact 0/1 gates.
fn polish(
    sf: &StandardForm,
    binaries: &[usize],
    lower: &mut [f64],
    upper: &mut [f64],
    obj: f64,
    x: Vec<f64>,
) -> Result<(f64, Vec<f64>), MilpError> {
    if binaries.is_empty() {
        return Ok((obj, x));
    }
    lower.copy_from_slice(&sf.lower);
    upper.copy_from_slice(&sf.upper);
    for &j in binaries {
        let v = x[j].round();
        lower[j] = v;
        upper[j] = v;
    }
    match solve_lp(sf, lower, upper)? {
        LpOutcome::Optimal { x, objective, .. } => Ok((objective, x)),
        _ => Ok((obj, x)),
    }
}

fn finish(status: SolveStatus, incumbent: Option<(f64, Vec<f64>)>, sf: &StandardForm, nodes: usize) -> MilpSolution {
    match incumbent {
        Some((obj, values)) => {
            MilpSolution { status, objective_value: sf.cost_sign * obj + sf.cost_constant, values, nodes }
        }
        None => MilpSolution::empty(status, nodes),
    }
}
