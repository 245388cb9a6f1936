//! Big-M encodings of ReLU networks.
//!
//! `encode_fixed` encodes a network with known parameters over symbolic (or
//! constant) inputs. `encode_shifted` encodes, at a fixed input, the set of
//! logits reachable by any network whose parameters lie within `delta` of
//! the base network. Because post-activation values are non-negative, the
//! pre-activation of a node over all shifted parameters is exactly the
//! interval `w.v + b +- delta * (sum(v) + 1)`, which is two linear
//! constraints in the previous layer's activations. The first layer sees a
//! constant input, so its activations only need box bounds.

use super::branch::solve_relaxation;
use super::model::{Comparator, LinExpr, MilpModel, Sense, VarId};
use super::SolveStatus;
use crate::error::{Error, Result};
use crate::interval::{affine_bounds, layer_bounds, Interval};
use crate::nn::ReluNetwork;

pub const BIG_M_FACTOR: f64 = 1.1;

#[derive(Clone, Debug)]
pub struct HiddenNode {
    /// Affine pre-activation; `None` for first-layer nodes of a shifted
    /// encoding, which have no single pre-activation.
    pub pre: Option<LinExpr>,
    pub post: VarId,
    /// Activation indicator; `None` where the node needs no binary.
    pub gate: Option<VarId>,
    /// Pre-activation bounds used for the big-M constants.
    pub bounds: Interval,
}

#[derive(Clone, Debug)]
pub struct NetworkEncoding {
    pub hidden: Vec<Vec<HiddenNode>>,
    pub output: VarId,
    pub output_bounds: Interval,
}

impl NetworkEncoding {
    pub fn gates(&self) -> impl Iterator<Item = VarId> + '_ {
        self.hidden.iter().flatten().filter_map(|n| n.gate)
    }
}

/// Adds `post = relu(pre)` with an indicator and big-M constants derived
/// from `bounds`. Stable nodes get their indicator fixed through bounds.
fn add_relu(model: &mut MilpModel, pre: LinExpr, bounds: Interval, name: &str) -> HiddenNode {
    let post = model.add_var(format!("{name}_v"), bounds.lo.max(0.0), bounds.hi.max(0.0));
    let gate = model.add_binary(format!("{name}_g"));
    if bounds.lo >= 0.0 {
        model.set_bounds(gate, 1.0, 1.0);
    } else if bounds.hi <= 0.0 {
        model.set_bounds(gate, 0.0, 0.0);
    }
    let m_on = BIG_M_FACTOR * bounds.hi.max(0.0);
    let m_off = BIG_M_FACTOR * (-bounds.lo).max(0.0);

    // post <= M * gate
    model.add_constraint(format!("{name}_on"), &LinExpr::var(post).term(gate, -m_on), Comparator::Le, 0.0);
    // post >= pre
    let mut lower = LinExpr::var(post);
    lower.add_scaled(&pre, -1.0);
    model.add_constraint(format!("{name}_ge"), &lower, Comparator::Ge, 0.0);
    // post <= pre + M * (1 - gate)
    let mut upper = LinExpr::var(post).term(gate, m_off);
    upper.add_scaled(&pre, -1.0);
    model.add_constraint(format!("{name}_le"), &upper, Comparator::Le, m_off);

    HiddenNode { pre: Some(pre), post, gate: Some(gate), bounds }
}

/// Tightens `bounds` (pre-activation bounds of every layer of `net`, valid
/// over the feasible set of `base`) by minimising and maximising each
/// pre-activation of the second and later layers over the LP relaxation of
/// `base` plus the earlier layers. Later layers are re-propagated after each
/// layer is tightened.
pub fn tighten_bounds(base: &MilpModel, net: &ReluNetwork, inputs: &[LinExpr], bounds: &mut [Vec<Interval>]) -> Result<()> {
    crate::error::check_dim(net.input_dim(), inputs.len())?;
    crate::error::check_dim(net.num_layers(), bounds.len())?;
    let mut model = base.clone();
    let mut current: Vec<LinExpr> = inputs.to_vec();
    for l in 0..net.num_layers() {
        if l > 0 {
            for j in 0..net.fan_out(l) {
                let pre = affine(net, l, j, &current);
                let mut b = bounds[l][j];
                model.set_objective(Sense::Minimize, &pre);
                if let Some(v) = relaxed_optimum(&model)? {
                    b.lo = b.lo.max(v);
                }
                model.set_objective(Sense::Maximize, &pre);
                if let Some(v) = relaxed_optimum(&model)? {
                    b.hi = b.hi.min(v);
                }
                if b.lo > b.hi {
                    // Numerical crossing; keep a valid point interval.
                    let mid = 0.5 * (b.lo + b.hi);
                    b = Interval::new(mid, mid);
                }
                bounds[l][j] = b;
            }
            for k in l + 1..net.num_layers() {
                let post: Vec<Interval> = bounds[k - 1].iter().map(Interval::relu).collect();
                bounds[k] = affine_bounds(net, k, 0.0, &post);
            }
        }
        if l + 1 < net.num_layers() {
            let layer: Vec<HiddenNode> = (0..net.fan_out(l))
                .map(|j| add_relu(&mut model, affine(net, l, j, &current), bounds[l][j], &format!("t{l}_{j}")))
                .collect();
            current = layer.iter().map(|n| LinExpr::var(n.post)).collect();
        }
    }
    Ok(())
}

/// Optimal value of the LP relaxation, widened by a small safety margin, or
/// `None` when the LP does not solve to optimality.
fn relaxed_optimum(model: &MilpModel) -> Result<Option<f64>> {
    let sol = solve_relaxation(model)?;
    if sol.status != SolveStatus::Optimal {
        return Ok(None);
    }
    let v = sol.objective_value;
    let slack = 1e-7 * v.abs().max(1.0);
    Ok(Some(match model.objective().sense {
        Sense::Minimize => v - slack,
        Sense::Maximize => v + slack,
    }))
}

/// Encodes `net` with its own parameters. `inputs[k]` is the expression fed
/// to input `k` (a variable or a constant) and `input_box[k]` its range.
pub fn encode_fixed(
    model: &mut MilpModel,
    net: &ReluNetwork,
    inputs: &[LinExpr],
    input_box: &[Interval],
    prefix: &str,
) -> Result<NetworkEncoding> {
    crate::error::check_dim(net.input_dim(), input_box.len())?;
    encode_fixed_with_bounds(model, net, inputs, &layer_bounds(net, 0.0, input_box), prefix)
}

/// As [`encode_fixed`], with caller-supplied pre-activation bounds for every
/// layer (they must be valid over the inputs' feasible set).
pub fn encode_fixed_with_bounds(
    model: &mut MilpModel,
    net: &ReluNetwork,
    inputs: &[LinExpr],
    bounds: &[Vec<Interval>],
    prefix: &str,
) -> Result<NetworkEncoding> {
    crate::error::check_dim(net.input_dim(), inputs.len())?;
    crate::error::check_dim(net.num_layers(), bounds.len())?;
    let mut current: Vec<LinExpr> = inputs.to_vec();
    let mut hidden = Vec::with_capacity(net.hidden_layers());
    for l in 0..net.hidden_layers() {
        let mut layer = Vec::with_capacity(net.fan_out(l));
        for j in 0..net.fan_out(l) {
            let pre = affine(net, l, j, &current);
            layer.push(add_relu(model, pre, bounds[l][j], &format!("{prefix}h{l}_{j}")));
        }
        current = layer.iter().map(|n: &HiddenNode| LinExpr::var(n.post)).collect();
        hidden.push(layer);
    }
    let last = net.num_layers() - 1;
    let out_bounds = bounds[last][0];
    let output = model.add_var(format!("{prefix}out"), out_bounds.lo, out_bounds.hi);
    let mut def = LinExpr::var(output);
    def.add_scaled(&affine(net, last, 0, &current), -1.0);
    model.add_constraint(format!("{prefix}out_def"), &def, Comparator::Eq, 0.0);
    Ok(NetworkEncoding { hidden, output, output_bounds: out_bounds })
}

fn affine(net: &ReluNetwork, layer: usize, node: usize, inputs: &[LinExpr]) -> LinExpr {
    let mut e = LinExpr::constant(net.biases(layer)[node]);
    for (w, input) in net.row(layer, node).iter().zip(inputs) {
        e.add_scaled(input, *w);
    }
    e
}

/// First-layer pre-activation centre and radius at a fixed input.
fn first_layer_range(net: &ReluNetwork, node: usize, x: &[f64], delta: f64) -> (f64, f64) {
    let centre = net.row(0, node).iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + net.biases(0)[node];
    let radius = delta * (x.iter().map(|v| v.abs()).sum::<f64>() + 1.0);
    (centre, radius)
}

/// Encodes every logit reachable at the fixed input `x` by a network within
/// infinity-norm distance `delta` of `net`.
pub fn encode_shifted(model: &mut MilpModel, net: &ReluNetwork, x: &[f64], delta: f64, prefix: &str) -> Result<NetworkEncoding> {
    crate::error::check_dim(net.input_dim(), x.len())?;
    let point: Vec<Interval> = x.iter().map(|&v| Interval::point(v)).collect();
    let bounds = layer_bounds(net, delta, &point);
    let mut hidden: Vec<Vec<HiddenNode>> = Vec::with_capacity(net.hidden_layers());

    for l in 0..net.hidden_layers() {
        let mut layer = Vec::with_capacity(net.fan_out(l));
        for j in 0..net.fan_out(l) {
            let name = format!("{prefix}h{l}_{j}");
            if l == 0 {
                let (c, r) = first_layer_range(net, j, x, delta);
                let range = Interval::around(c, r).relu();
                let post = model.add_var(format!("{name}_v"), range.lo, range.hi);
                layer.push(HiddenNode { pre: None, post, gate: None, bounds: bounds[0][j] });
            } else {
                let z = shifted_pre(model, net, l, j, &hidden[l - 1], delta, bounds[l][j], &name);
                layer.push(add_relu(model, LinExpr::var(z), bounds[l][j], &name));
            }
        }
        hidden.push(layer);
    }
    let last = net.num_layers() - 1;
    let out_bounds = bounds[last][0];
    let output = if last == 0 {
        // No hidden layer: the logit is the first-layer range itself.
        let (c, r) = first_layer_range(net, 0, x, delta);
        model.add_var(format!("{prefix}out"), c - r, c + r)
    } else {
        shifted_pre(model, net, last, 0, &hidden[last - 1], delta, out_bounds, &format!("{prefix}out"))
    };
    Ok(NetworkEncoding { hidden, output, output_bounds: out_bounds })
}

#[allow(clippy::too_many_arguments)]
fn shifted_pre(
    model: &mut MilpModel,
    net: &ReluNetwork,
    layer: usize,
    node: usize,
    prev: &[HiddenNode],
    delta: f64,
    bounds: Interval,
    name: &str,
) -> VarId {
    let z = model.add_var(format!("{name}_z"), bounds.lo, bounds.hi);
    let b = net.biases(layer)[node];
    let row = net.row(layer, node);
    // z <= sum (w + delta) v + b + delta
    let mut up = LinExpr::var(z);
    // z >= sum (w - delta) v + b - delta
    let mut down = LinExpr::var(z);
    for (w, p) in row.iter().zip(prev) {
        up.add_term(p.post, -(w + delta));
        down.add_term(p.post, -(w - delta));
    }
    model.add_constraint(format!("{name}_up"), &up, Comparator::Le, b + delta);
    model.add_constraint(format!("{name}_down"), &down, Comparator::Ge, b - delta);
    z
}

/// Rebuilds a concrete network within `delta` of `net` that realises the
/// shifted encoding's solution `values` at `x`, and returns it with its
/// logit at `x`. Fails with `Error::Encoding` if the re-simulated logit
/// disagrees with the solver's output value.
pub fn recover_shifted_model(
    net: &ReluNetwork,
    x: &[f64],
    delta: f64,
    enc: &NetworkEncoding,
    values: &[f64],
) -> Result<(ReluNetwork, f64)> {
    let mut shifted = net.clone();
    let mut prev: Vec<f64> = Vec::new();
    for l in 0..net.num_layers() {
        let fan_in = net.fan_in(l);
        let outputs = net.fan_out(l);
        let is_output = l + 1 == net.num_layers();
        let mut post = Vec::with_capacity(outputs);
        for j in 0..outputs {
            let scale = if l == 0 {
                let (c, r) = first_layer_range(net, j, x, delta);
                let target = if is_output {
                    values[enc.output.0]
                } else {
                    let v = values[enc.hidden[0][j].post.0];
                    if v > 1e-12 {
                        v
                    } else {
                        c - r
                    }
                };
                ((target - c) / r).clamp(-1.0, 1.0)
            } else {
                let c = net.row(l, j).iter().zip(&prev).map(|(w, v)| w * v).sum::<f64>() + net.biases(l)[j];
                let r = delta * (prev.iter().sum::<f64>() + 1.0);
                let target = if is_output {
                    values[enc.output.0]
                } else {
                    let pre = enc.hidden[l][j].pre.as_ref().expect("deeper shifted nodes carry a pre-activation");
                    pre.eval(values)
                };
                ((target - c) / r).clamp(-1.0, 1.0)
            };
            let step = scale * delta;
            let w = &mut shifted.weights_mut(l)[j * fan_in..(j + 1) * fan_in];
            for (k, wk) in w.iter_mut().enumerate() {
                *wk += if l == 0 && x[k] < 0.0 { -step } else { step };
            }
            shifted.biases_mut(l)[j] += step;
            if !is_output {
                post.push(values[enc.hidden[l][j].post.0].max(0.0));
            }
        }
        prev = post;
    }
    let logit = shifted.forward_logit(x)?;
    let reported = values[enc.output.0];
    if (logit - reported).abs() > 1e-5 * reported.abs().max(1.0) {
        return Err(Error::Encoding(format!(
            "recovered model gives logit {logit} but the solver reported {reported}"
        )));
    }
    Ok((shifted, logit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::solve;
    use crate::nn::tiny_net;
    use std::time::Duration;

    const LIMIT: Duration = Duration::from_secs(10);

    #[test]
    fn fixed_network_minimum_over_input_box() {
        let net = tiny_net();
        let mut m = MilpModel::new();
        let x = m.add_var("x", 0.0, 2.0);
        let enc = encode_fixed(&mut m, &net, &[LinExpr::var(x)], &[Interval::new(0.0, 2.0)], "").unwrap();
        m.set_objective(Sense::Minimize, &LinExpr::var(enc.output));
        let s = solve(&m, LIMIT).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.objective_value + 1.0).abs() < 1e-9);
        assert!(s.value(x).abs() < 1e-9);
    }

    #[test]
    fn fixed_network_constant_input() {
        let net = tiny_net();
        let mut m = MilpModel::new();
        let enc = encode_fixed(&mut m, &net, &[LinExpr::constant(2.0)], &[Interval::point(2.0)], "").unwrap();
        m.set_objective(Sense::Minimize, &LinExpr::var(enc.output));
        let s = solve(&m, LIMIT).unwrap();
        assert!((s.value(enc.output) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn stable_active_node_has_fixed_gate() {
        let net = tiny_net();
        let mut m = MilpModel::new();
        let x = m.add_var("x", 0.5, 2.0);
        let enc = encode_fixed(&mut m, &net, &[LinExpr::var(x)], &[Interval::new(0.5, 2.0)], "").unwrap();
        let g = m.var(enc.hidden[0][0].gate.unwrap());
        assert_eq!((g.lower, g.upper), (1.0, 1.0));

        let mut m = MilpModel::new();
        let x = m.add_var("x", -2.0, -0.5);
        let enc = encode_fixed(&mut m, &net, &[LinExpr::var(x)], &[Interval::new(-2.0, -0.5)], "").unwrap();
        let g = m.var(enc.hidden[0][0].gate.unwrap());
        assert_eq!((g.lower, g.upper), (0.0, 0.0));
    }

    #[test]
    fn fixed_encoding_matches_forward_pass_at_many_points() {
        let net = ReluNetwork::from_rows(
            2,
            vec![
                (vec![vec![1.0, -1.0], vec![0.5, 0.5], vec![-1.0, 2.0]], vec![0.1, -0.3, 0.0]),
                (vec![vec![1.0, -2.0, 0.5]], vec![0.2]),
            ],
        )
        .unwrap();
        for (a, b) in [(0.0, 0.0), (0.3, 0.9), (1.0, 0.2), (0.7, 0.7)] {
            let mut m = MilpModel::new();
            let enc = encode_fixed(
                &mut m,
                &net,
                &[LinExpr::constant(a), LinExpr::constant(b)],
                &[Interval::point(a), Interval::point(b)],
                "",
            )
            .unwrap();
            m.set_objective(Sense::Minimize, &LinExpr::var(enc.output));
            let s = solve(&m, LIMIT).unwrap();
            assert!((s.value(enc.output) - net.logit(&[a, b])).abs() < 1e-9);
        }
    }

    #[test]
    fn shifted_tiny_net_worst_case_and_recovery() {
        let net = tiny_net();
        let mut m = MilpModel::new();
        let enc = encode_shifted(&mut m, &net, &[2.0], 0.1, "").unwrap();
        m.set_objective(Sense::Minimize, &LinExpr::var(enc.output));
        let s = solve(&m, LIMIT).unwrap();
        assert!((s.objective_value - 0.43).abs() < 1e-9, "{}", s.objective_value);
        let (worst, logit) = recover_shifted_model(&net, &[2.0], 0.1, &enc, &s.values).unwrap();
        assert!((logit - 0.43).abs() < 1e-9);
        assert!(net.max_param_distance(&worst).unwrap() <= 0.1 + 1e-12);

        // Maximising reaches the upper interval bound too.
        m.set_objective(Sense::Maximize, &LinExpr::var(enc.output));
        let s = solve(&m, LIMIT).unwrap();
        assert!((s.objective_value - 1.63).abs() < 1e-9);
    }

    #[test]
    fn shifted_without_hidden_layers() {
        let net = ReluNetwork::from_rows(2, vec![(vec![vec![1.0, -1.0]], vec![0.5])]).unwrap();
        let mut m = MilpModel::new();
        let x = [0.5, -1.0];
        let enc = encode_shifted(&mut m, &net, &x, 0.1, "").unwrap();
        m.set_objective(Sense::Minimize, &LinExpr::var(enc.output));
        let s = solve(&m, LIMIT).unwrap();
        // 2.0 - 0.1 * (1.5 + 1)
        assert!((s.objective_value - 1.75).abs() < 1e-12);
        let (worst, logit) = recover_shifted_model(&net, &x, 0.1, &enc, &s.values).unwrap();
        assert!((logit - 1.75).abs() < 1e-12);
        assert!(net.max_param_distance(&worst).unwrap() <= 0.1 + 1e-12);
    }
}
