//! Helpers and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use proplace::milp::{Comparator, LinExpr, MilpModel, Sense, VarId};
use proplace::ReluNetwork;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

pub fn random_net(rng: &mut ChaCha8Rng, sizes: &[usize]) -> ReluNetwork {
    let layers = sizes
        .windows(2)
        .map(|w| {
            let rows = (0..w[1]).map(|_| (0..w[0]).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let bias = (0..w[1]).map(|_| rng.random_range(-0.5..0.5)).collect();
            (rows, bias)
        })
        .collect();
    ReluNetwork::from_rows(sizes[0], layers).unwrap()
}

/// A network with every parameter moved by `shift(old)`.
pub fn perturbed(net: &ReluNetwork, mut shift: impl FnMut(f64) -> f64) -> ReluNetwork {
    let sizes = net.layer_sizes().to_vec();
    let weights = (0..net.num_layers()).map(|l| net.weights(l).iter().map(|&w| w + shift(w)).collect()).collect();
    let biases = (0..net.num_layers()).map(|l| net.biases(l).iter().map(|&b| b + shift(b)).collect()).collect();
    ReluNetwork::new(sizes, weights, biases).unwrap()
}

/// Uniform sample from the box of networks within `delta`; every other
/// sample is a random corner of the box.
pub fn sample_shift(net: &ReluNetwork, rng: &mut ChaCha8Rng, delta: f64, corner: bool) -> ReluNetwork {
    perturbed(net, |_| {
        if corner {
            if rng.random_bool(0.5) {
                delta
            } else {
                -delta
            }
        } else {
            rng.random_range(-delta..=delta)
        }
    })
}

fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let p = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[p][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, p);
        b.swap(col, p);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    if n < k {
        return vec![];
    }
    let mut out = subsets(n - 1, k);
    for mut c in subsets(n - 1, k - 1) {
        c.push(n - 1);
        out.push(c);
    }
    out
}

/// Minimum of `cost . v + c0` over the bounded polytope `{v : a . v <= b}`
/// by enumerating its vertices; `None` if empty.
pub fn min_over_polytope(cost: &[f64], c0: f64, rows: &[(Vec<f64>, f64)]) -> Option<f64> {
    let n = cost.len();
    if n == 0 {
        return rows.iter().all(|(_, b)| *b >= -1e-9).then_some(c0);
    }
    let mut best: Option<f64> = None;
    for subset in subsets(rows.len(), n) {
        let a: Vec<Vec<f64>> = subset.iter().map(|&i| rows[i].0.clone()).collect();
        let b: Vec<f64> = subset.iter().map(|&i| rows[i].1).collect();
        let Some(v) = solve_square(a, b) else { continue };
        if rows.iter().all(|(a, b)| a.iter().zip(&v).map(|(p, q)| p * q).sum::<f64>() <= b + 1e-9) {
            let val = cost.iter().zip(&v).map(|(p, q)| p * q).sum::<f64>() + c0;
            best = Some(best.map_or(val, |b: f64| b.min(val)));
        }
    }
    best
}

/// Lowest logit at `x` over networks within `delta` of `net`, for one or
/// two hidden layers. Enumerates every corner of the parameter box after the
/// first layer, and for two hidden layers every activation pattern of the
/// second, minimising over the box of reachable first-layer activations.
pub fn brute_force_worst_logit(net: &ReluNetwork, x: &[f64], delta: f64) -> f64 {
    let h = net.hidden_layers();
    assert!((1..=2).contains(&h));
    let n1 = net.fan_out(0);
    // Post-activations are non-negative, so each first-layer node ranges
    // over relu(c -+ delta * (|x|_1 + 1)) independently of the others.
    let radius = delta * (x.iter().map(|v| v.abs()).sum::<f64>() + 1.0);
    let boxes: Vec<(f64, f64)> = (0..n1)
        .map(|j| {
            let c = net.row(0, j).iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + net.biases(0)[j];
            ((c - radius).max(0.0), (c + radius).max(0.0))
        })
        .collect();
    let mut box_rows = Vec::new();
    for (j, &(lo, hi)) in boxes.iter().enumerate() {
        let mut e = vec![0.0; n1];
        e[j] = 1.0;
        box_rows.push((e.clone(), hi));
        e[j] = -1.0;
        box_rows.push((e, -lo));
    }

    let base: Vec<f64> = (1..net.num_layers())
        .flat_map(|l| net.weights(l).iter().chain(net.biases(l)).copied().collect::<Vec<_>>())
        .collect();
    assert!(base.len() <= 16);
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << base.len()) {
        let p: Vec<f64> =
            base.iter().enumerate().map(|(i, v)| if mask >> i & 1 == 1 { v + delta } else { v - delta }).collect();
        let val = if h == 1 {
            let (w, b) = (&p[..n1], p[n1]);
            w.iter().zip(&boxes).map(|(w, (lo, hi))| (w * lo).min(w * hi)).sum::<f64>() + b
        } else {
            let n2 = net.fan_out(1);
            let w2 = &p[..n1 * n2];
            let b2 = &p[n1 * n2..n1 * n2 + n2];
            let w3 = &p[n1 * n2 + n2..n1 * n2 + 2 * n2];
            let b3 = p[n1 * n2 + 2 * n2];
            let mut local = f64::INFINITY;
            for pattern in 0u32..(1 << n2) {
                let mut rows = box_rows.clone();
                let mut cost = vec![0.0; n1];
                let mut c0 = b3;
                for j in 0..n2 {
                    let row = &w2[j * n1..(j + 1) * n1];
                    if pattern >> j & 1 == 1 {
                        rows.push((row.iter().map(|v| -v).collect(), b2[j]));
                        for (c, r) in cost.iter_mut().zip(row) {
                            *c += w3[j] * r;
                        }
                        c0 += w3[j] * b2[j];
                    } else {
                        rows.push((row.to_vec(), -b2[j]));
                    }
                }
                if let Some(v) = min_over_polytope(&cost, c0, &rows) {
                    local = local.min(v);
                }
            }
            local
        };
        best = best.min(val);
    }
    best
}

/// A small random MILP: binaries first, then up to two boxed continuous variables.
pub struct RandomMilp {
    pub model: MilpModel,
    pub binaries: Vec<VarId>,
    pub continuous: Vec<VarId>,
}

pub fn random_milp(rng: &mut ChaCha8Rng, max_binaries: usize) -> RandomMilp {
    let mut model = MilpModel::new();
    let nb = rng.random_range(1..=max_binaries);
    let nc = rng.random_range(0..=2);
    let binaries: Vec<VarId> = (0..nb).map(|i| model.add_binary(format!("b{i}"))).collect();
    let continuous: Vec<VarId> = (0..nc)
        .map(|i| {
            let lo = rng.random_range(-2.0..0.0);
            let hi = rng.random_range(0.0..2.0);
            model.add_var(format!("y{i}"), lo, hi)
        })
        .collect();
    let all: Vec<VarId> = binaries.iter().chain(&continuous).copied().collect();
    for r in 0..rng.random_range(1..=5) {
        let mut e = LinExpr::new();
        for &v in &all {
            if rng.random_bool(0.7) {
                e.add_term(v, rng.random_range(-3.0..3.0));
            }
        }
        let cmp = if rng.random_bool(0.5) { Comparator::Le } else { Comparator::Ge };
        let rhs = match cmp {
            Comparator::Le => rng.random_range(-1.0..4.0),
            _ => rng.random_range(-4.0..1.0),
        };
        model.add_constraint(format!("c{r}"), &e, cmp, rhs);
    }
    let mut obj = LinExpr::constant(rng.random_range(-1.0..1.0));
    for &v in &all {
        obj.add_term(v, rng.random_range(-2.0..2.0));
    }
    let sense = if rng.random_bool(0.5) { Sense::Minimize } else { Sense::Maximize };
    model.set_objective(sense, &obj);
    RandomMilp { model, binaries, continuous }
}

/// Optimum of a [`RandomMilp`] by enumerating every binary assignment and
/// the vertices of the remaining continuous polytope. `None` if infeasible.
pub fn enumerate_milp(m: &RandomMilp) -> Option<f64> {
    let model = &m.model;
    let sign = if model.objective().sense == Sense::Maximize { -1.0 } else { 1.0 };
    let cidx: Vec<usize> = m.continuous.iter().map(|v| v.0).collect();
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << m.binaries.len()) {
        let mut fixed = vec![0.0; model.num_vars()];
        for (i, b) in m.binaries.iter().enumerate() {
            fixed[b.0] = (mask >> i & 1) as f64;
        }
        let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
        for c in model.constraints() {
            let mut a = vec![0.0; cidx.len()];
            let mut rest = 0.0;
            for &(v, coef) in &c.terms {
                match cidx.iter().position(|&j| j == v.0) {
                    Some(k) => a[k] += coef,
                    None => rest += coef * fixed[v.0],
                }
            }
            let rhs = c.rhs - rest;
            match c.cmp {
                Comparator::Le => rows.push((a, rhs)),
                Comparator::Ge => rows.push((a.iter().map(|v| -v).collect(), -rhs)),
                Comparator::Eq => {
                    rows.push((a.clone(), rhs));
                    rows.push((a.iter().map(|v| -v).collect(), -rhs));
                }
            }
        }
        for (k, &j) in cidx.iter().enumerate() {
            let var = &model.vars()[j];
            let mut e = vec![0.0; cidx.len()];
            e[k] = 1.0;
            rows.push((e.clone(), var.upper));
            e[k] = -1.0;
            rows.push((e, -var.lower));
        }
        let mut cost = vec![0.0; cidx.len()];
        let mut c0 = model.objective().constant;
        for &(v, coef) in &model.objective().terms {
            match cidx.iter().position(|&j| j == v.0) {
                Some(k) => cost[k] += sign * coef,
                None => c0 += coef * fixed[v.0],
            }
        }
        c0 *= sign;
        if let Some(v) = min_over_polytope(&cost, c0, &rows) {
            best = Some(best.map_or(v, |b: f64| b.min(v)));
        }
    }
    best.map(|v| sign * v)
}
