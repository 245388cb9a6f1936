//! Nearest robust neighbours and the plausible region they span.

mod kdtree;
mod region;

pub use kdtree::{KdTree, Metric, NearestIter, Neighbour};
pub use region::{make_region, PlausibleRegion};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::interval::RobustnessCheck;
use crate::nn::ReluNetwork;

/// Builds a tree over the rows of `data` that `net` predicts as `class`.
/// Ids are row indices into `data`.
pub fn build_tree(data: &Dataset, net: &ReluNetwork, class: u8, metric: Metric) -> Result<KdTree> {
    let mut entries = Vec::new();
    for (i, row) in data.rows().iter().enumerate() {
        if net.predict(row)? == class {
            entries.push((i, row.clone()));
        }
    }
    KdTree::build(entries, metric)
}

/// The `k` nearest points in `tree` that pass `check`, in order of distance
/// (ties by id). Points are examined nearest first until `k` pass.
pub fn robust_knn(x: &[f64], k: usize, tree: &KdTree, check: &dyn RobustnessCheck) -> Result<Vec<Neighbour>> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let mut found = Vec::with_capacity(k);
    for candidate in tree.nearest_iter(x)? {
        if check.is_robust(&candidate.point)? {
            found.push(candidate);
            if found.len() == k {
                return Ok(found);
            }
        }
    }
    Err(Error::InsufficientRobustNeighbours { found: found.len(), required: k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval::{Certifier, ModelShiftSet};
    use crate::milp::SolveOptions;
    use crate::nn::tiny_net;

    struct Always;
    impl RobustnessCheck for Always {
        fn is_robust(&self, _: &[f64]) -> Result<bool> {
            Ok(true)
        }
    }

    fn line(points: &[f64]) -> Dataset {
        Dataset::from_rows(points.iter().map(|&p| vec![p]).collect(), vec![1; points.len()]).unwrap()
    }

    #[test]
    fn vacuous_filter_gives_plain_neighbours() {
        let data = line(&[0.9, 0.2, 0.5, 0.35]);
        let tree = build_tree(&data, &tiny_net(), 0, Metric::NormalisedL1).unwrap();
        let nn = robust_knn(&[0.3], 2, &tree, &Always).unwrap();
        assert_eq!(nn.iter().map(|n| n.id).collect::<Vec<_>>(), vec![3, 1]);
    }

    #[test]
    fn skips_non_robust_nearest_point() {
        // Both are class 1 for the tiny net, but only 2.0 survives delta = 0.1.
        let data = line(&[1.2, 2.0]);
        let net = tiny_net();
        let tree = build_tree(&data, &net, 1, Metric::NormalisedL1).unwrap();
        assert_eq!(tree.len(), 2);
        let certifier = Certifier::new(&net, ModelShiftSet::new(0.1).unwrap(), SolveOptions::default());
        let nn = robust_knn(&[0.5], 1, &tree, &certifier).unwrap();
        assert_eq!(nn[0].id, 1);
        assert_eq!(nn[0].point, vec![2.0]);

        match robust_knn(&[0.5], 2, &tree, &certifier) {
            Err(Error::InsufficientRobustNeighbours { found: 1, required: 2 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn no_robust_points() {
        let data = line(&[1.1, 1.2]);
        let net = tiny_net();
        let tree = build_tree(&data, &net, 1, Metric::NormalisedL1).unwrap();
        let certifier = Certifier::new(&net, ModelShiftSet::new(0.5).unwrap(), SolveOptions::default());
        assert!(matches!(
            robust_knn(&[0.5], 1, &tree, &certifier),
            Err(Error::InsufficientRobustNeighbours { found: 0, required: 1 })
        ));
    }

    #[test]
    fn filter_without_matches_is_no_candidates() {
        let data = line(&[0.1, 0.2]);
        assert!(matches!(build_tree(&data, &tiny_net(), 1, Metric::NormalisedL1), Err(Error::NoCandidates)));
    }
}
