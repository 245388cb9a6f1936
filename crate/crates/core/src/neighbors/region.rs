use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::interval::{layer_bounds_from, Interval};
use crate::nn::ReluNetwork;
use crate::milp::encode::tighten_bounds;
use crate::milp::{solve_relaxation, Comparator, LinExpr, MilpModel, SolveStatus, VarId};

/// Convex hull of an input and its robust neighbours. `vertices[0]` is the input.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlausibleRegion {
    vertices: Vec<Vec<f64>>,
}

pub fn make_region(x: &[f64], neighbours: &[Vec<f64>]) -> Result<PlausibleRegion> {
    if neighbours.is_empty() {
        return Err(Error::InvalidConfig("a plausible region needs at least one neighbour".into()));
    }
    for n in neighbours {
        check_dim(x.len(), n.len())?;
    }
    let mut vertices = Vec::with_capacity(neighbours.len() + 1);
    vertices.push(x.to_vec());
    vertices.extend(neighbours.iter().cloned());
    Ok(PlausibleRegion { vertices })
}

impl PlausibleRegion {
    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    pub fn input(&self) -> &[f64] {
        &self.vertices[0]
    }

    pub fn neighbours(&self) -> &[Vec<f64>] {
        &self.vertices[1..]
    }

    pub fn dim(&self) -> usize {
        self.vertices[0].len()
    }

    pub fn bounding_box(&self) -> Vec<Interval> {
        (0..self.dim())
            .map(|d| {
                let (lo, hi) = self
                    .vertices
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v[d]), hi.max(v[d])));
                Interval::new(lo, hi)
            })
            .collect()
    }

    /// Pre-activation bounds of `net` over the hull. The first layer is exact
    /// (a linear function attains its range at vertices); later layers come
    /// from LP relaxations over the hull.
    pub fn pre_activation_bounds(&self, net: &ReluNetwork) -> Result<Vec<Vec<Interval>>> {
        check_dim(net.input_dim(), self.dim())?;
        let first = (0..net.fan_out(0))
            .map(|j| {
                let (lo, hi) = self.vertices.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    let z = net.row(0, j).iter().zip(v).map(|(w, x)| w * x).sum::<f64>() + net.biases(0)[j];
                    (lo.min(z), hi.max(z))
                });
                Interval::new(lo, hi)
            })
            .collect();
        let mut bounds = layer_bounds_from(net, 0.0, first);
        if net.num_layers() > 1 {
            let mut base = MilpModel::new();
            let point: Vec<VarId> = self
                .bounding_box()
                .iter()
                .enumerate()
                .map(|(d, b)| base.add_var(format!("x{d}"), b.lo, b.hi))
                .collect();
            self.encode_membership(&mut base, &point);
            let inputs: Vec<LinExpr> = point.iter().map(|&v| LinExpr::var(v)).collect();
            tighten_bounds(&base, net, &inputs, &mut bounds)?;
        }
        Ok(bounds)
    }

    /// Adds convex-combination weights tying `point` to the hull:
    /// `point = sum(lambda_l * vertex_l)`, `sum(lambda) = 1`, `lambda >= 0`.
    pub fn encode_membership(&self, model: &mut MilpModel, point: &[VarId]) -> Vec<VarId> {
        let lambdas: Vec<VarId> = (0..self.vertices.len()).map(|l| model.add_var(format!("lambda{l}"), 0.0, 1.0)).collect();
        let mut total = LinExpr::new();
        for &l in &lambdas {
            total.add_term(l, 1.0);
        }
        model.add_constraint("lambda_sum", &total, Comparator::Eq, 1.0);
        for (d, &p) in point.iter().enumerate() {
            let mut e = LinExpr::var(p);
            for (v, &l) in self.vertices.iter().zip(&lambdas) {
                if v[d] != 0.0 {
                    e.add_term(l, -v[d]);
                }
            }
            model.add_constraint(format!("hull{d}"), &e, Comparator::Eq, 0.0);
        }
        lambdas
    }

    /// Convex-combination weights expressing `y`, if it lies in the hull.
    pub fn weights_for(&self, y: &[f64]) -> Result<Option<Vec<f64>>> {
        check_dim(self.dim(), y.len())?;
        let mut model = MilpModel::new();
        let point: Vec<VarId> = y.iter().enumerate().map(|(d, &v)| model.add_var(format!("y{d}"), v, v)).collect();
        let lambdas = self.encode_membership(&mut model, &point);
        let sol = solve_relaxation(&model)?;
        Ok(match sol.status {
            SolveStatus::Optimal => Some(lambdas.iter().map(|&l| sol.value(l)).collect()),
            _ => None,
        })
    }

    pub fn contains(&self, y: &[f64]) -> Result<bool> {
        Ok(self.weights_for(y)?.is_some())
    }
}
