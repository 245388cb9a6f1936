//! Interval abstraction of a network under bounded (infinity-norm) parameter
//! shifts, and exact certification of robustness against every shifted model.

mod certify;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::nn::ReluNetwork;

pub use certify::{certify_delta_robust, worst_case_model, Certificate, Certifier, RobustnessCheck, WorstCase};

/// Closed real interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "empty interval [{lo}, {hi}]");
        Interval { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    /// `[v - r, v + r]`
    pub fn around(v: f64, r: f64) -> Self {
        Interval { lo: v - r, hi: v + r }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn relu(&self) -> Self {
        Interval { lo: self.lo.max(0.0), hi: self.hi.max(0.0) }
    }

    pub fn add(&self, other: &Interval) -> Self {
        Interval { lo: self.lo + other.lo, hi: self.hi + other.hi }
    }

    pub fn mul(&self, other: &Interval) -> Self {
        let c = [self.lo * other.lo, self.lo * other.hi, self.hi * other.lo, self.hi * other.hi];
        Interval { lo: c.iter().copied().fold(f64::INFINITY, f64::min), hi: c.iter().copied().fold(f64::NEG_INFINITY, f64::max) }
    }

    /// Largest absolute value in the interval.
    pub fn magnitude(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }
}

/// The set of models within infinity-norm distance `delta` of a base network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelShiftSet {
    delta: f64,
}

impl ModelShiftSet {
    pub fn new(delta: f64) -> Result<Self> {
        if delta > 0.0 && delta.is_finite() {
            Ok(ModelShiftSet { delta })
        } else {
            Err(Error::InvalidShift(delta))
        }
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Whether `candidate` lies in the shift set around `base` (with slack `tol`).
    pub fn contains(&self, base: &ReluNetwork, candidate: &ReluNetwork, tol: f64) -> bool {
        base.max_param_distance(candidate).is_ok_and(|d| d <= self.delta + tol)
    }
}

/// Lower and upper bound on the logit over all shifted models.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputBound {
    pub l: f64,
    pub u: f64,
}

/// A network whose every parameter `theta` is replaced by `[theta - delta, theta + delta]`.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalNetwork {
    base: ReluNetwork,
    delta: f64,
}

pub fn abstraction(net: &ReluNetwork, shifts: &ModelShiftSet) -> IntervalNetwork {
    IntervalNetwork { base: net.clone(), delta: shifts.delta() }
}

impl IntervalNetwork {
    pub fn base(&self) -> &ReluNetwork {
        &self.base
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn weight(&self, layer: usize, node: usize, input: usize) -> Interval {
        Interval::around(self.base.weight(layer, node, input), self.delta)
    }

    pub fn bias(&self, layer: usize, node: usize) -> Interval {
        Interval::around(self.base.biases(layer)[node], self.delta)
    }

    /// Every parameter interval, layer by layer, weights before biases.
    pub fn intervals(&self) -> impl Iterator<Item = Interval> + '_ {
        self.base.params().map(|p| Interval::around(p, self.delta))
    }

    /// Sound bounds on the logit at `x` over every shifted model.
    pub fn propagate(&self, x: &[f64]) -> Result<OutputBound> {
        check_dim(self.base.input_dim(), x.len())?;
        let input: Vec<Interval> = x.iter().map(|&v| Interval::point(v)).collect();
        let layers = layer_bounds(&self.base, self.delta, &input);
        let out = layers.last().unwrap()[0];
        Ok(OutputBound { l: out.lo, u: out.hi })
    }
}

pub fn propagate_bounds(inet: &IntervalNetwork, x: &[f64]) -> Result<OutputBound> {
    inet.propagate(x)
}

/// Pre-activation bounds of every layer (hidden layers, then the output)
/// for inputs in `input` and parameters within `delta` of `net` (`delta`
/// may be zero for the fixed network).
pub fn layer_bounds(net: &ReluNetwork, delta: f64, input: &[Interval]) -> Vec<Vec<Interval>> {
    let first = affine_bounds(net, 0, delta, input);
    layer_bounds_from(net, delta, first)
}

/// Completes `first` (first-layer pre-activation bounds) by propagating
/// through the remaining layers.
pub fn layer_bounds_from(net: &ReluNetwork, delta: f64, first: Vec<Interval>) -> Vec<Vec<Interval>> {
    let mut out: Vec<Vec<Interval>> = Vec::with_capacity(net.num_layers());
    out.push(first);
    for l in 1..net.num_layers() {
        let post: Vec<Interval> = out[l - 1].iter().map(Interval::relu).collect();
        out.push(affine_bounds(net, l, delta, &post));
    }
    out
}

pub(crate) fn affine_bounds(net: &ReluNetwork, l: usize, delta: f64, input: &[Interval]) -> Vec<Interval> {
    (0..net.fan_out(l))
        .map(|j| {
            let mut acc = Interval::around(net.biases(l)[j], delta);
            for (k, v) in input.iter().enumerate() {
                acc = acc.add(&Interval::around(net.weight(l, j, k), delta).mul(v));
            }
            acc
        })
        .collect()
}
