use std::collections::HashMap;
use std::sync::Mutex;

use serde::Serialize;

use super::{abstraction, IntervalNetwork, ModelShiftSet, OutputBound};
use crate::error::{check_dim, Error, Result};
use crate::milp::encode::{encode_shifted, recover_shifted_model};
use crate::milp::{solve_with, LinExpr, MilpModel, Sense, SolveOptions, SolveStatus};
use crate::nn::ReluNetwork;

/// Outcome of an exact robustness check at one input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Certificate {
    pub robust: bool,
    /// Smallest logit any shifted model assigns to the input.
    pub worst_logit: f64,
    /// Interval-propagation bounds at the same input.
    pub bounds: OutputBound,
}

/// A shifted model attaining the smallest logit at an input.
#[derive(Clone, Debug)]
pub struct WorstCase {
    pub model: ReluNetwork,
    pub worst_logit: f64,
}

/// Finds a network within the shift set that minimises the logit at `x`.
/// A solver timeout yields `Error::SolverTimeout`.
pub fn worst_case_model(net: &ReluNetwork, shifts: &ModelShiftSet, x: &[f64], solver: &SolveOptions) -> Result<WorstCase> {
    check_dim(net.input_dim(), x.len())?;
    let mut model = MilpModel::new();
    let enc = encode_shifted(&mut model, net, x, shifts.delta(), "")?;
    model.set_objective(Sense::Minimize, &LinExpr::var(enc.output));
    let sol = solve_with(&model, solver)?;
    match sol.status {
        SolveStatus::Optimal => {}
        SolveStatus::Timeout => return Err(Error::SolverTimeout),
        other => return Err(Error::Internal(format!("worst-case model search ended {other:?}"))),
    }
    let (model, worst_logit) = recover_shifted_model(net, x, shifts.delta(), &enc, &sol.values)?;
    Ok(WorstCase { model, worst_logit })
}

/// Exact robustness test of `x` against every model in the shift set.
pub fn certify_delta_robust(net: &ReluNetwork, shifts: &ModelShiftSet, x: &[f64], solver: &SolveOptions) -> Result<Certificate> {
    let bounds = abstraction(net, shifts).propagate(x)?;
    let worst = match worst_case_model(net, shifts, x, solver) {
        Ok(w) => w.worst_logit,
        Err(Error::SolverTimeout) => return Err(Error::CertificationInconclusive),
        Err(e) => return Err(e),
    };
    Ok(Certificate { robust: worst >= 0.0, worst_logit: worst, bounds })
}

pub trait RobustnessCheck {
    fn is_robust(&self, x: &[f64]) -> Result<bool>;
}

/// Memoising robustness checker: interval bounds decide when they can, the
/// exact MILP decides otherwise.
pub struct Certifier<'a> {
    net: &'a ReluNetwork,
    shifts: ModelShiftSet,
    inet: IntervalNetwork,
    solver: SolveOptions,
    memo: Mutex<HashMap<Vec<u64>, bool>>,
}

impl<'a> Certifier<'a> {
    pub fn new(net: &'a ReluNetwork, shifts: ModelShiftSet, solver: SolveOptions) -> Self {
        let inet = abstraction(net, &shifts);
        Certifier { net, shifts, inet, solver, memo: Mutex::new(HashMap::new()) }
    }

    pub fn shifts(&self) -> &ModelShiftSet {
        &self.shifts
    }

    pub fn certify(&self, x: &[f64]) -> Result<Certificate> {
        certify_delta_robust(self.net, &self.shifts, x, &self.solver)
    }

    /// Number of distinct inputs checked so far.
    pub fn checked(&self) -> usize {
        self.memo.lock().unwrap().len()
    }

    fn decide(&self, x: &[f64]) -> Result<bool> {
        let b = self.inet.propagate(x)?;
        if b.l >= 0.0 {
            return Ok(true);
        }
        if b.u < 0.0 {
            return Ok(false);
        }
        Ok(self.certify(x)?.robust)
    }
}

impl RobustnessCheck for Certifier<'_> {
    fn is_robust(&self, x: &[f64]) -> Result<bool> {
        let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        if let Some(&r) = self.memo.lock().unwrap().get(&key) {
            return Ok(r);
        }
        let r = self.decide(x)?;
        self.memo.lock().unwrap().insert(key, r);
        Ok(r)
    }
}
