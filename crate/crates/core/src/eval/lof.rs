//! Local outlier factor in novelty mode: fitted on a reference set, scored
//! on new points. Neighbourhoods hold exactly `k` points (ties by index) and
//! densities carry a `1e-10` guard so duplicate points have ratio 1.

use crate::error::{check_dim, Error, Result};
use crate::neighbors::{KdTree, Metric};

pub const LOF_NEIGHBOURS: usize = 10;

#[derive(Clone, Debug)]
pub struct LofModel {
    k: usize,
    tree: KdTree,
    k_distance: Vec<f64>,
    lrd: Vec<f64>,
}

impl LofModel {
    pub fn fit(reference: &[Vec<f64>], k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidConfig("LOF needs k >= 1".into()));
        }
        if reference.len() <= k {
            return Err(Error::InsufficientReference { needed: k + 1, found: reference.len() });
        }
        let tree = KdTree::build(reference.iter().cloned().enumerate().collect(), Metric::Euclidean)?;
        let neighbourhoods: Vec<Vec<(usize, f64)>> = reference
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut nn: Vec<(usize, f64)> =
                    tree.nearest(p, k + 1)?.into_iter().map(|n| (n.id, n.distance)).collect();
                // Drop the point itself, or its first duplicate if it fell outside the list.
                let pos = nn.iter().position(|&(id, _)| id == i).unwrap_or(0);
                nn.remove(pos);
                Ok(nn)
            })
            .collect::<Result<_>>()?;
        let k_distance: Vec<f64> = neighbourhoods.iter().map(|nn| nn[k - 1].1).collect();
        let lrd = neighbourhoods.iter().map(|nn| local_density(nn, &k_distance)).collect();
        Ok(LofModel { k, tree, k_distance, lrd })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn score(&self, point: &[f64]) -> Result<f64> {
        check_dim(self.tree.dim(), point.len())?;
        let nn: Vec<(usize, f64)> = self.tree.nearest(point, self.k)?.into_iter().map(|n| (n.id, n.distance)).collect();
        let own = local_density(&nn, &self.k_distance);
        let mean_ratio = nn.iter().map(|&(id, _)| self.lrd[id] / own).sum::<f64>() / nn.len() as f64;
        Ok(mean_ratio)
    }
}

fn local_density(nn: &[(usize, f64)], k_distance: &[f64]) -> f64 {
    let reach = nn.iter().map(|&(id, d)| d.max(k_distance[id])).sum::<f64>() / nn.len() as f64;
    1.0 / (reach + 1e-10)
}

/// LOF with ten neighbours of `point` relative to `reference`.
pub fn lof10(point: &[f64], reference: &[Vec<f64>]) -> Result<f64> {
    LofModel::fit(reference, LOF_NEIGHBOURS)?.score(point)
}
