//! The evaluation protocol end to end: split the data into halves, train the
//! original model on part of the first half, train the retraining ensemble,
//! explain class-0 inputs and score the explanations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{permutation, Dataset};
use crate::error::{Error, Result};
use crate::eval::{MetricsReport, LOF_NEIGHBOURS};
use crate::nn::{accuracy, retrain_ensemble, train, ReluNetwork, TrainConfig};
use crate::proplace::{CeResult, Explainer, ProplaceConfig};

/// Where the inputs to explain are drawn from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExplainPool {
    /// Held-out test split of the first half.
    #[default]
    Test,
    /// Every row of the dataset.
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub proplace: ProplaceConfig,
    pub n_explain: usize,
    pub pool: ExplainPool,
    /// Seeds the data splits, training and input selection.
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            train: TrainConfig::default(),
            proplace: ProplaceConfig::default(),
            n_explain: 50,
            pool: ExplainPool::Test,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.proplace.validate()?;
        if self.n_explain == 0 {
            return Err(Error::InvalidConfig("n_explain must be at least 1".into()));
        }
        Ok(())
    }
}

/// The data and models the explanations are computed against.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub first_half: Dataset,
    pub second_half: Dataset,
    pub train: Dataset,
    pub test: Dataset,
    pub model: ReluNetwork,
    pub retrained: Vec<ReluNetwork>,
}

pub fn prepare(data: &Dataset, config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    data.ensure_unit_range()?;
    let (first_half, second_half) = data.split_halves(config.seed);
    let (train_set, test) = first_half.train_test_split(config.train.train_fraction, config.seed)?;
    let train_config = TrainConfig { seed: config.seed, ..config.train.clone() };
    let model = train(&train_set, &train_config)?;
    let retrained = retrain_ensemble(&first_half, &second_half, &train_config)?;
    Ok(Prepared { first_half, second_half, train: train_set, test, model, retrained })
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "lowercase", tag = "status")]
pub enum Outcome {
    /// A counterfactual was produced (`result.certified` tells whether it certified).
    Explained { result: Box<CeResult> },
    /// No explanation exists under the configured constraints.
    Infeasible { error: String },
    Failed { error: String },
}

#[derive(Clone, Debug, Serialize)]
pub struct Instance {
    /// Row of the pool the input was taken from.
    pub row: usize,
    pub input: Vec<f64>,
    #[serde(flatten)]
    pub outcome: Outcome,
}

impl Instance {
    pub fn certified(&self) -> Option<&CeResult> {
        match &self.outcome {
            Outcome::Explained { result } if result.certified => Some(result),
            _ => None,
        }
    }

    /// Certified, or a reported infeasibility.
    pub fn acceptable(&self) -> bool {
        match &self.outcome {
            Outcome::Explained { result } => result.certified,
            Outcome::Infeasible { .. } => true,
            Outcome::Failed { .. } => false,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub dataset_rows: usize,
    pub features: Vec<String>,
    pub test_accuracy: f64,
    pub retrained_models: usize,
    pub requested: usize,
    /// Class-0 inputs available in the pool.
    pub available: usize,
    pub note: Option<String>,
    pub instances: Vec<Instance>,
    /// Metrics over the explained instances, if any.
    pub metrics: Option<MetricsReport>,
}

impl ExperimentReport {
    pub fn all_acceptable(&self) -> bool {
        self.instances.iter().all(Instance::acceptable)
    }
}

/// Picks up to `n` rows that `net` predicts as class 0, in a seeded random order.
pub fn select_inputs(pool: &Dataset, net: &ReluNetwork, n: usize, seed: u64) -> Result<(Vec<usize>, usize)> {
    let mut candidates = Vec::new();
    for i in permutation(pool.len(), seed ^ 0x0e_c0de) {
        if net.predict(&pool.rows()[i])? == 0 {
            candidates.push(i);
        }
    }
    let available = candidates.len();
    candidates.truncate(n);
    Ok((candidates, available))
}

pub fn run(data: &Dataset, config: &ExperimentConfig) -> Result<ExperimentReport> {
    let prepared = prepare(data, config)?;
    run_prepared(data, &prepared, config, None)
}

/// Explains and evaluates against already trained models. `lp_dump` names a
/// directory to receive every MILP in LP format.
pub fn run_prepared(
    data: &Dataset,
    prepared: &Prepared,
    config: &ExperimentConfig,
    lp_dump: Option<&std::path::Path>,
) -> Result<ExperimentReport> {
    let pool = match config.pool {
        ExplainPool::Test => &prepared.test,
        ExplainPool::All => data,
    };
    let (rows, available) = select_inputs(pool, &prepared.model, config.n_explain, config.seed)?;
    let note = (available < config.n_explain)
        .then(|| format!("requested {} inputs but only {available} class-0 inputs are available", config.n_explain));

    // Neighbours come from the training data the model was fitted on.
    let mut explainer = Explainer::new(&prepared.model, &prepared.train, config.proplace.clone())?;
    if let Some(dir) = lp_dump {
        explainer = explainer.with_lp_dump(dir);
    }
    let instances: Vec<Instance> = rows
        .par_iter()
        .map(|&row| {
            let input = pool.rows()[row].clone();
            let outcome = match explainer.explain_tagged(&input, &format!("row{row}")) {
                Ok(result) => Outcome::Explained { result: Box::new(result) },
                Err(e) if e.is_reported_infeasibility() => Outcome::Infeasible { error: e.to_string() },
                Err(e) => Outcome::Failed { error: e.to_string() },
            };
            Instance { row, input, outcome }
        })
        .collect();

    let pairs: Vec<(Vec<f64>, Vec<f64>)> = instances
        .iter()
        .filter_map(|i| match &i.outcome {
            Outcome::Explained { result } => Some((result.x.clone(), result.x_prime.clone())),
            _ => None,
        })
        .collect();
    let reference = lof_reference(&prepared.train);
    let metrics = if pairs.is_empty() {
        None
    } else {
        Some(MetricsReport::evaluate(
            &pairs,
            &reference,
            &prepared.retrained,
            &prepared.model,
            &config.proplace.shifts()?,
            &config.proplace.solver(),
        )?)
    };

    Ok(ExperimentReport {
        config: config.clone(),
        dataset_rows: data.len(),
        features: data.feature_names.clone(),
        test_accuracy: if prepared.test.is_empty() { f64::NAN } else { accuracy(&prepared.model, &prepared.test) },
        retrained_models: prepared.retrained.len(),
        requested: config.n_explain,
        available,
        note,
        instances,
        metrics,
    })
}

/// Class-1 training rows, the reference set for plausibility scores. Falls
/// back to all training rows when there are too few.
pub fn lof_reference(train: &Dataset) -> Vec<Vec<f64>> {
    let positives: Vec<Vec<f64>> = train.iter().filter(|(_, y)| *y == 1).map(|(x, _)| x.to_vec()).collect();
    if positives.len() > LOF_NEIGHBOURS {
        positives
    } else {
        train.rows().to_vec()
    }
}
