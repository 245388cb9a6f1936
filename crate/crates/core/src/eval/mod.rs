//! Proximity, plausibility and robustness metrics for generated counterfactuals.

mod lof;

use std::fmt::Write;

use serde::Serialize;

pub use lof::{lof10, LofModel, LOF_NEIGHBOURS};

use crate::error::{check_dim, Error, Result};
use crate::interval::{Certifier, ModelShiftSet, RobustnessCheck};
use crate::milp::SolveOptions;
use crate::neighbors::Metric;
use crate::nn::ReluNetwork;

/// Mean absolute per-feature difference; in `[0, 1]` for scaled features.
pub fn l1_distance(x: &[f64], x_prime: &[f64]) -> Result<f64> {
    check_dim(x.len(), x_prime.len())?;
    Ok(Metric::NormalisedL1.distance(x, x_prime))
}

/// Percentage of (counterfactual, model) pairs classified as class 1.
pub fn validity_rate(ces: &[Vec<f64>], models: &[ReluNetwork]) -> Result<f64> {
    if ces.is_empty() || models.is_empty() {
        return Err(Error::InvalidConfig("validity rate needs counterfactuals and models".into()));
    }
    let mut valid = 0usize;
    for ce in ces {
        valid += valid_count(ce, models)?;
    }
    Ok(100.0 * valid as f64 / (ces.len() * models.len()) as f64)
}

fn valid_count(ce: &[f64], models: &[ReluNetwork]) -> Result<usize> {
    let mut n = 0;
    for m in models {
        if m.forward_logit(ce)? >= 0.0 {
            n += 1;
        }
    }
    Ok(n)
}

/// Percentage of counterfactuals that certify robust under `shifts`.
pub fn v_delta_rate(ces: &[Vec<f64>], net: &ReluNetwork, shifts: &ModelShiftSet, solver: &SolveOptions) -> Result<f64> {
    if ces.is_empty() {
        return Err(Error::InvalidConfig("robustness rate needs counterfactuals".into()));
    }
    let certifier = Certifier::new(net, *shifts, solver.clone());
    let mut robust = 0usize;
    for ce in ces {
        if certifier.is_robust(ce)? {
            robust += 1;
        }
    }
    Ok(100.0 * robust as f64 / ces.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InstanceMetrics {
    pub input: Vec<f64>,
    pub counterfactual: Vec<f64>,
    pub l1: f64,
    pub lof: f64,
    /// Retrained models classifying the counterfactual as class 1.
    pub valid_models: usize,
    pub certified: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub count: usize,
    pub l1_mean: f64,
    pub lof_mean: f64,
    pub vr_percent: f64,
    pub v_delta_percent: f64,
    pub retrained_models: usize,
    pub per_instance: Vec<InstanceMetrics>,
}

impl MetricsReport {
    /// Scores each `(input, counterfactual)` pair. `reference` is the LOF
    /// reference set and `retrained` the validity ensemble.
    pub fn evaluate(
        pairs: &[(Vec<f64>, Vec<f64>)],
        reference: &[Vec<f64>],
        retrained: &[ReluNetwork],
        net: &ReluNetwork,
        shifts: &ModelShiftSet,
        solver: &SolveOptions,
    ) -> Result<Self> {
        if pairs.is_empty() || retrained.is_empty() {
            return Err(Error::InvalidConfig("metrics need counterfactuals and retrained models".into()));
        }
        let lof = LofModel::fit(reference, LOF_NEIGHBOURS)?;
        let certifier = Certifier::new(net, *shifts, solver.clone());
        let per_instance = pairs
            .iter()
            .map(|(x, ce)| {
                Ok(InstanceMetrics {
                    input: x.clone(),
                    counterfactual: ce.clone(),
                    l1: l1_distance(x, ce)?,
                    lof: lof.score(ce)?,
                    valid_models: valid_count(ce, retrained)?,
                    certified: certifier.is_robust(ce)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_instances(per_instance, retrained.len()))
    }

    pub fn from_instances(per_instance: Vec<InstanceMetrics>, retrained_models: usize) -> Self {
        let n = per_instance.len().max(1) as f64;
        let valid: usize = per_instance.iter().map(|i| i.valid_models).sum();
        let certified = per_instance.iter().filter(|i| i.certified).count();
        MetricsReport {
            count: per_instance.len(),
            l1_mean: per_instance.iter().map(|i| i.l1).sum::<f64>() / n,
            lof_mean: per_instance.iter().map(|i| i.lof).sum::<f64>() / n,
            vr_percent: 100.0 * valid as f64 / (n * retrained_models.max(1) as f64),
            v_delta_percent: 100.0 * certified as f64 / n,
            retrained_models,
            per_instance,
        }
    }

    /// Aligned summary table with one row per method.
    pub fn to_table(&self, method: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<10} {:>8} {:>8} {:>8} {:>8} {:>6}", "method", "vr", "vdelta", "l1", "lof", "n");
        let _ = writeln!(
            s,
            "{:<10} {:>8.2} {:>8.2} {:>8.4} {:>8.4} {:>6}",
            method, self.vr_percent, self.v_delta_percent, self.l1_mean, self.lof_mean, self.count
        );
        s
    }
}
