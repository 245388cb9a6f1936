//! Robust, plausible counterfactual search by a cutting-plane loop.
//!
//! The outer problem finds the closest point of the plausible region that
//! every model collected so far classifies with logit at least `sigma`. The
//! inner problem finds the shifted model with the lowest logit at that
//! point. If that logit is below `sigma - t` the model joins the collection
//! and the outer problem is solved again.

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::interval::{certify_delta_robust, worst_case_model, Certifier, ModelShiftSet, RobustnessCheck};
use crate::milp::encode::encode_fixed_with_bounds;
use crate::milp::{export_lp, solve_with, Comparator, LinExpr, MilpModel, Sense, SolveOptions, SolveStatus, VarId};
use crate::neighbors::{build_tree, make_region, robust_knn, KdTree, Metric, Neighbour, PlausibleRegion};
use crate::nn::ReluNetwork;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProplaceConfig {
    pub delta: f64,
    pub k: usize,
    pub sigma: f64,
    pub t: f64,
    pub max_iters: usize,
    /// Per-MILP time limit in seconds.
    pub milp_time_limit: f64,
}

impl Default for ProplaceConfig {
    fn default() -> Self {
        ProplaceConfig { delta: 0.02, k: 10, sigma: 1e-4, t: 1e-5, max_iters: 50, milp_time_limit: 60.0 }
    }
}

impl ProplaceConfig {
    pub fn validate(&self) -> Result<()> {
        ModelShiftSet::new(self.delta)?;
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if !(self.sigma > self.t && self.t > 0.0) {
            return Err(Error::InvalidConfig(format!("need sigma > t > 0, got sigma={} t={}", self.sigma, self.t)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.milp_time_limit > 0.0) {
            return Err(Error::InvalidConfig("MILP time limit must be positive".into()));
        }
        Ok(())
    }

    pub fn shifts(&self) -> Result<ModelShiftSet> {
        ModelShiftSet::new(self.delta)
    }

    pub fn solver(&self) -> SolveOptions {
        SolveOptions::with_time_limit(Duration::from_secs_f64(self.milp_time_limit))
    }
}

/// A distance that an outer MILP can minimise through linear constraints.
pub trait LinearDistance: Sync {
    fn distance(&self, x: &[f64], y: &[f64]) -> f64;

    /// Adds auxiliary variables and constraints to `model` and returns the
    /// objective expression for the distance from `x` to the point `y`,
    /// where `y_box[i]` bounds `y[i]`.
    fn encode(&self, model: &mut MilpModel, x: &[f64], y: &[VarId], y_box: &[(f64, f64)]) -> LinExpr;
}

/// L1 distance divided by the number of features.
#[derive(Clone, Copy, Debug, Default)]
pub struct NormalisedL1;

impl LinearDistance for NormalisedL1 {
    fn distance(&self, x: &[f64], y: &[f64]) -> f64 {
        Metric::NormalisedL1.distance(x, y)
    }

    fn encode(&self, model: &mut MilpModel, x: &[f64], y: &[VarId], y_box: &[(f64, f64)]) -> LinExpr {
        let scale = 1.0 / x.len().max(1) as f64;
        let mut objective = LinExpr::new();
        for (i, (&v, &(lo, hi))) in y.iter().zip(y_box).enumerate() {
            let reach = (x[i] - lo).abs().max((hi - x[i]).abs());
            let a = model.add_var(format!("abs{i}"), 0.0, reach);
            model.add_constraint(format!("abs{i}_pos"), &LinExpr::var(a).term(v, -1.0), Comparator::Ge, -x[i]);
            model.add_constraint(format!("abs{i}_neg"), &LinExpr::var(a).term(v, 1.0), Comparator::Ge, x[i]);
            objective.add_term(a, scale);
        }
        objective
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub candidate: Vec<f64>,
    /// Outer objective (distance to the input).
    pub objective: f64,
    /// Lowest logit over the shift set at the candidate.
    pub worst_logit: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CeResult {
    pub x: Vec<f64>,
    pub x_prime: Vec<f64>,
    pub iterations: usize,
    /// Original model followed by each worst-case model added as a cut.
    pub cut_models: Vec<ReluNetwork>,
    pub objective: f64,
    pub certified: bool,
    pub worst_logit: f64,
    /// Validity margin actually used after clamping to the region.
    pub sigma: f64,
    pub t: f64,
    pub region: PlausibleRegion,
    /// Dataset rows used as region vertices, nearest first.
    pub neighbour_ids: Vec<usize>,
    pub trace: Vec<IterationRecord>,
}

/// Closest point of `region` (under `distance`) on which every model in
/// `cut_models` has logit at least `sigma`. Returns the point and its distance.
pub fn outer_minimisation(
    x: &[f64],
    region: &PlausibleRegion,
    cut_models: &[ReluNetwork],
    sigma: f64,
    distance: &dyn LinearDistance,
    solver: &SolveOptions,
) -> Result<(Vec<f64>, f64)> {
    let model = outer_model(x, region, cut_models, sigma, distance)?;
    let sol = solve_with(&model, solver)?;
    match sol.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Err(Error::NoFeasibleCe),
        SolveStatus::Timeout => return Err(Error::SolverTimeout),
        SolveStatus::Unbounded => return Err(Error::Internal("outer problem unbounded".into())),
    }
    let bbox = region.bounding_box();
    let point: Vec<f64> = (0..x.len()).map(|i| sol.values[i].clamp(bbox[i].lo, bbox[i].hi)).collect();
    let d = distance.distance(x, &point);
    Ok((point, d))
}

fn outer_model(
    x: &[f64],
    region: &PlausibleRegion,
    cut_models: &[ReluNetwork],
    sigma: f64,
    distance: &dyn LinearDistance,
) -> Result<MilpModel> {
    check_dim(region.dim(), x.len())?;
    if cut_models.is_empty() {
        return Err(Error::InvalidConfig("the outer problem needs at least one model".into()));
    }
    let bbox = region.bounding_box();
    let mut model = MilpModel::new();
    let point: Vec<VarId> = bbox.iter().enumerate().map(|(i, b)| model.add_var(format!("x{i}"), b.lo, b.hi)).collect();
    region.encode_membership(&mut model, &point);
    let y_box: Vec<(f64, f64)> = bbox.iter().map(|b| (b.lo, b.hi)).collect();
    let objective = distance.encode(&mut model, x, &point, &y_box);
    let inputs: Vec<LinExpr> = point.iter().map(|&v| LinExpr::var(v)).collect();
    for (j, net) in cut_models.iter().enumerate() {
        let bounds = region.pre_activation_bounds(net)?;
        let enc = encode_fixed_with_bounds(&mut model, net, &inputs, &bounds, &format!("m{j}_"))?;
        model.add_constraint(format!("m{j}_valid"), &LinExpr::var(enc.output), Comparator::Ge, sigma);
    }
    model.set_objective(Sense::Minimize, &objective);
    Ok(model)
}

#[derive(Clone, Debug)]
pub struct InnerResult {
    pub model: ReluNetwork,
    /// Negated lowest logit: positive means the candidate fails on `model`.
    pub neg_logit: f64,
}

/// The model in the shift set with the lowest logit at `x_prime`.
pub fn inner_maximisation(
    x_prime: &[f64],
    net: &ReluNetwork,
    shifts: &ModelShiftSet,
    solver: &SolveOptions,
) -> Result<InnerResult> {
    let w = worst_case_model(net, shifts, x_prime, solver)?;
    Ok(InnerResult { model: w.model, neg_logit: -w.worst_logit })
}

/// Writes the MILPs of a run in LP format to `dir`, named `<tag>_outer_<i>.lp`
/// and `<tag>_inner_<i>.lp`.
#[derive(Clone, Debug)]
pub struct LpDump {
    pub dir: PathBuf,
    pub tag: String,
}

impl LpDump {
    fn write(&self, kind: &str, iteration: usize, model: &MilpModel) -> Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        std::fs::write(self.dir.join(format!("{}_{kind}_{iteration}.lp", self.tag)), export_lp(model))?;
        Ok(())
    }
}

/// Runs the cutting-plane loop inside a given region.
pub fn generate_in_region(
    x: &[f64],
    net: &ReluNetwork,
    region: &PlausibleRegion,
    config: &ProplaceConfig,
    distance: &dyn LinearDistance,
    dump: Option<&LpDump>,
) -> Result<CeResult> {
    config.validate()?;
    check_dim(net.input_dim(), x.len())?;
    let shifts = config.shifts()?;
    let solver = config.solver();

    // Keep every neighbour vertex feasible for the outer problem.
    let mut vertex_worst = f64::INFINITY;
    for v in region.neighbours() {
        vertex_worst = vertex_worst.min(worst_case_model(net, &shifts, v, &solver)?.worst_logit);
    }
    let (sigma, t) = if vertex_worst > 0.0 && config.sigma > 0.5 * vertex_worst {
        let s = 0.5 * vertex_worst;
        (s, config.t * s / config.sigma)
    } else {
        (config.sigma, config.t)
    };

    let mut cut_models = vec![net.clone()];
    let mut trace = Vec::new();
    for iteration in 1..=config.max_iters {
        if let Some(d) = dump {
            d.write("outer", iteration, &outer_model(x, region, &cut_models, sigma, distance)?)?;
        }
        let (candidate, objective) = outer_minimisation(x, region, &cut_models, sigma, distance, &solver)?;
        let inner = inner_maximisation(&candidate, net, &shifts, &solver)?;
        if let Some(d) = dump {
            let mut m = MilpModel::new();
            let enc = crate::milp::encode::encode_shifted(&mut m, net, &candidate, shifts.delta(), "")?;
            m.set_objective(Sense::Minimize, &LinExpr::var(enc.output));
            d.write("inner", iteration, &m)?;
        }
        let worst_logit = -inner.neg_logit;
        trace.push(IterationRecord { iteration, candidate: candidate.clone(), objective, worst_logit });
        if worst_logit >= sigma - t {
            let cert = certify_delta_robust(net, &shifts, &candidate, &solver)?;
            return Ok(CeResult {
                x: x.to_vec(),
                x_prime: candidate,
                iterations: iteration,
                cut_models,
                objective,
                certified: cert.robust,
                worst_logit: cert.worst_logit,
                sigma,
                t,
                region: region.clone(),
                neighbour_ids: Vec::new(),
                trace,
            });
        }
        cut_models.push(inner.model);
    }
    Err(Error::NonConvergence { iterations: config.max_iters, trace })
}

/// Reusable search state for one network and dataset: the tree of
/// class-1 points and a memoised robustness checker.
pub struct Explainer<'a> {
    net: &'a ReluNetwork,
    config: ProplaceConfig,
    tree: KdTree,
    certifier: Certifier<'a>,
    dump_dir: Option<PathBuf>,
}

impl<'a> Explainer<'a> {
    pub fn new(net: &'a ReluNetwork, data: &Dataset, config: ProplaceConfig) -> Result<Self> {
        config.validate()?;
        check_dim(net.input_dim(), data.dim())?;
        let tree = build_tree(data, net, 1, Metric::NormalisedL1)?;
        let certifier = Certifier::new(net, config.shifts()?, config.solver());
        Ok(Explainer { net, config, tree, certifier, dump_dir: None })
    }

    /// Dump every MILP of later calls to `explain_tagged` into `dir`.
    pub fn with_lp_dump(mut self, dir: impl Into<PathBuf>) -> Self {
        self.dump_dir = Some(dir.into());
        self
    }

    pub fn config(&self) -> &ProplaceConfig {
        &self.config
    }

    pub fn robust_neighbours(&self, x: &[f64]) -> Result<Vec<Neighbour>> {
        robust_knn(x, self.config.k, &self.tree, &self.certifier as &dyn RobustnessCheck)
    }

    pub fn explain(&self, x: &[f64]) -> Result<CeResult> {
        self.explain_tagged(x, "ce")
    }

    pub fn explain_tagged(&self, x: &[f64], tag: &str) -> Result<CeResult> {
        let logit = self.net.forward_logit(x)?;
        if logit >= 0.0 {
            return Err(Error::InputAlreadyDesired(logit));
        }
        let neighbours = self.robust_neighbours(x)?;
        let points: Vec<Vec<f64>> = neighbours.iter().map(|n| n.point.clone()).collect();
        let region = make_region(x, &points)?;
        let dump = self.dump_dir.as_ref().map(|dir| LpDump { dir: dir.clone(), tag: tag.to_string() });
        let mut result = generate_in_region(x, self.net, &region, &self.config, &NormalisedL1, dump.as_ref())?;
        result.neighbour_ids = neighbours.iter().map(|n| n.id).collect();
        Ok(result)
    }
}

/// Robust counterfactual for `x`, searched inside the hull of its `k`
/// nearest robust class-1 points of `data`.
pub fn generate(x: &[f64], net: &ReluNetwork, data: &Dataset, config: &ProplaceConfig) -> Result<CeResult> {
    Explainer::new(net, data, config.clone())?.explain(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tiny_net;

    fn solver() -> SolveOptions {
        SolveOptions::with_time_limit(Duration::from_secs(30))
    }

    fn segment() -> PlausibleRegion {
        make_region(&[0.5], &[vec![2.0]]).unwrap()
    }

    fn low_corner() -> ReluNetwork {
        ReluNetwork::from_rows(1, vec![(vec![vec![0.9]], vec![-0.1]), (vec![vec![0.9]], vec![-1.1])]).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(ProplaceConfig::default().validate().is_ok());
        let bad = |f: fn(&mut ProplaceConfig)| {
            let mut c = ProplaceConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.sigma = c.t));
        assert!(bad(|c| c.t = 0.0));
        assert!(bad(|c| c.max_iters = 0));
        assert!(bad(|c| c.k = 0));
        assert!(bad(|c| c.delta = 0.0));
    }

    #[test]
    fn outer_with_original_model_only() {
        let (p, d) = outer_minimisation(&[0.5], &segment(), &[tiny_net()], 1e-9, &NormalisedL1, &solver()).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-6, "{p:?}");
        assert!((d - 0.5).abs() < 1e-6);
    }

    #[test]
    fn outer_with_low_corner_cut() {
        let (p, _) =
            outer_minimisation(&[0.5], &segment(), &[tiny_net(), low_corner()], 1e-9, &NormalisedL1, &solver()).unwrap();
        // Line search along the segment for the first point where 0.81 x - 1.19 >= 0.
        let mut lo = 0.5;
        let mut hi = 2.0;
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if low_corner().logit(&[mid]) >= 1e-9 && tiny_net().logit(&[mid]) >= 1e-9 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        assert!((p[0] - hi).abs() < 1e-6, "{} vs {hi}", p[0]);
        assert!((p[0] - 1.19 / 0.81).abs() < 1e-6);
    }

    #[test]
    fn outer_returns_input_when_already_valid() {
        let region = make_region(&[1.5], &[vec![2.0]]).unwrap();
        let (p, d) = outer_minimisation(&[1.5], &region, &[tiny_net()], 1e-4, &NormalisedL1, &solver()).unwrap();
        assert!((p[0] - 1.5).abs() < 1e-9 && d.abs() < 1e-9);
    }

    #[test]
    fn outer_infeasible_region() {
        let region = make_region(&[0.0], &[vec![0.5]]).unwrap();
        let r = outer_minimisation(&[0.0], &region, &[tiny_net()], 1e-4, &NormalisedL1, &solver());
        assert!(matches!(r, Err(Error::NoFeasibleCe)));
    }

    #[test]
    fn inner_examples() {
        let net = tiny_net();
        let shifts = ModelShiftSet::new(0.1).unwrap();
        let r = inner_maximisation(&[2.0], &net, &shifts, &solver()).unwrap();
        assert!((r.neg_logit + 0.43).abs() < 1e-9);
        assert!(r.model.max_param_distance(&low_corner()).unwrap() < 1e-9);

        let r = inner_maximisation(&[1.19 / 0.81], &net, &shifts, &solver()).unwrap();
        assert!(r.neg_logit.abs() < 1e-9);

        let tiny = ModelShiftSet::new(1e-12).unwrap();
        let r = inner_maximisation(&[1.7], &net, &tiny, &solver()).unwrap();
        assert!((r.neg_logit + net.logit(&[1.7])).abs() < 1e-9);
    }

    #[test]
    fn tiny_scenario_converges_in_two_iterations() {
        let config = ProplaceConfig { delta: 0.1, k: 1, sigma: 1e-6, t: 1e-7, ..ProplaceConfig::default() };
        let r = generate_in_region(&[0.5], &tiny_net(), &segment(), &config, &NormalisedL1, None).unwrap();
        assert_eq!(r.iterations, 2);
        assert_eq!(r.cut_models.len(), 2);
        assert!((r.x_prime[0] - 1.19 / 0.81).abs() < 1e-4);
        assert!(r.certified);
        assert!(r.trace[0].worst_logit < r.sigma - r.t);
        assert!(r.trace[1].objective >= r.trace[0].objective);
    }

    #[test]
    fn iteration_cap_is_reported() {
        let config = ProplaceConfig { delta: 0.1, k: 1, max_iters: 1, ..ProplaceConfig::default() };
        match generate_in_region(&[0.5], &tiny_net(), &segment(), &config, &NormalisedL1, None) {
            Err(Error::NonConvergence { iterations: 1, trace }) => assert_eq!(trace.len(), 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn robust_input_is_returned_unchanged() {
        let config = ProplaceConfig { delta: 0.1, k: 1, ..ProplaceConfig::default() };
        let region = make_region(&[1.8], &[vec![2.0]]).unwrap();
        let r = generate_in_region(&[1.8], &tiny_net(), &region, &config, &NormalisedL1, None).unwrap();
        assert_eq!(r.iterations, 1);
        assert!((r.x_prime[0] - 1.8).abs() < 1e-9);
        assert!(r.objective.abs() < 1e-9);
    }

    #[test]
    fn generate_on_a_line_dataset() {
        let data = Dataset::from_rows(vec![vec![0.2], vec![1.2], vec![2.0], vec![2.5]], vec![0, 1, 1, 1]).unwrap();
        let config = ProplaceConfig { delta: 0.1, k: 2, ..ProplaceConfig::default() };
        let r = generate(&[0.5], &tiny_net(), &data, &config).unwrap();
        // 1.2 is class 1 but not robust, so the region is spanned by 2.0 and 2.5.
        assert_eq!(r.neighbour_ids, vec![2, 3]);
        assert!(r.certified);
        assert!(r.region.contains(&r.x_prime).unwrap());
        assert!(matches!(generate(&[2.0], &tiny_net(), &data, &config), Err(Error::InputAlreadyDesired(_))));
    }

    #[test]
    fn lp_dump_writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let config = ProplaceConfig { delta: 0.1, k: 1, ..ProplaceConfig::default() };
        let dump = LpDump { dir: dir.path().to_path_buf(), tag: "t".into() };
        generate_in_region(&[0.5], &tiny_net(), &segment(), &config, &NormalisedL1, Some(&dump)).unwrap();
        for f in ["t_outer_1.lp", "t_inner_1.lp", "t_outer_2.lp", "t_inner_2.lp"] {
            let text = std::fs::read_to_string(dir.path().join(f)).unwrap();
            assert!(crate::milp::parse_lp(&text).is_ok());
        }
    }
}
