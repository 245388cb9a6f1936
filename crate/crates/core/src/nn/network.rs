use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Fully-connected ReLU network with a single linear output node.
///
/// Layer `l` maps `layer_sizes[l]` inputs to `layer_sizes[l + 1]` outputs.
/// Weights are stored row-major with one row per output node. All hidden
/// layers apply ReLU; the last layer is affine and yields the pre-sigmoid
/// logit. Class 1 is predicted iff the logit is `>= 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkRepr", into = "NetworkRepr")]
pub struct ReluNetwork {
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct NetworkRepr {
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl TryFrom<NetworkRepr> for ReluNetwork {
    type Error = Error;

    fn try_from(r: NetworkRepr) -> Result<Self> {
        ReluNetwork::new(r.layer_sizes, r.weights, r.biases)
    }
}

impl From<ReluNetwork> for NetworkRepr {
    fn from(n: ReluNetwork) -> Self {
        NetworkRepr { layer_sizes: n.layer_sizes, weights: n.weights, biases: n.biases }
    }
}

impl ReluNetwork {
    pub fn new(layer_sizes: Vec<usize>, weights: Vec<Vec<f64>>, biases: Vec<Vec<f64>>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidNetwork("need at least an input and an output layer".into()));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::InvalidNetwork("layer sizes must be positive".into()));
        }
        if *layer_sizes.last().unwrap() != 1 {
            return Err(Error::InvalidNetwork(format!(
                "output layer must have exactly one node, got {}",
                layer_sizes.last().unwrap()
            )));
        }
        let layers = layer_sizes.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(Error::InvalidNetwork(format!(
                "expected {layers} weight matrices and bias vectors, got {} and {}",
                weights.len(),
                biases.len()
            )));
        }
        for l in 0..layers {
            let (fan_in, fan_out) = (layer_sizes[l], layer_sizes[l + 1]);
            if weights[l].len() != fan_in * fan_out {
                return Err(Error::InvalidNetwork(format!(
                    "layer {} weights: expected {}x{} = {} entries, got {}",
                    l + 1,
                    fan_out,
                    fan_in,
                    fan_in * fan_out,
                    weights[l].len()
                )));
            }
            if biases[l].len() != fan_out {
                return Err(Error::InvalidNetwork(format!(
                    "layer {} biases: expected {} entries, got {}",
                    l + 1,
                    fan_out,
                    biases[l].len()
                )));
            }
        }
        if weights.iter().chain(biases.iter()).flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidNetwork("parameters must be finite".into()));
        }
        Ok(ReluNetwork { layer_sizes, weights, biases })
    }

    /// Builds a network from per-layer `(rows, bias)` pairs where `rows[j]` holds
    /// the incoming weights of node `j`.
    pub fn from_rows(input_dim: usize, layers: Vec<(Vec<Vec<f64>>, Vec<f64>)>) -> Result<Self> {
        let mut sizes = vec![input_dim];
        let mut weights = Vec::with_capacity(layers.len());
        let mut biases = Vec::with_capacity(layers.len());
        for (rows, bias) in layers {
            sizes.push(rows.len());
            weights.push(rows.into_iter().flatten().collect());
            biases.push(bias);
        }
        ReluNetwork::new(sizes, weights, biases)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    /// Number of hidden layers.
    pub fn hidden_layers(&self) -> usize {
        self.layer_sizes.len() - 2
    }

    /// Number of affine layers (hidden layers plus the output layer).
    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn hidden_nodes(&self) -> usize {
        self.layer_sizes[1..self.layer_sizes.len() - 1].iter().sum()
    }

    pub fn fan_in(&self, layer: usize) -> usize {
        self.layer_sizes[layer]
    }

    pub fn fan_out(&self, layer: usize) -> usize {
        self.layer_sizes[layer + 1]
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    /// Incoming weights of `node` in `layer`.
    pub fn row(&self, layer: usize, node: usize) -> &[f64] {
        let n = self.fan_in(layer);
        &self.weights[layer][node * n..(node + 1) * n]
    }

    pub fn weight(&self, layer: usize, node: usize, input: usize) -> f64 {
        self.weights[layer][node * self.fan_in(layer) + input]
    }

    pub(crate) fn weights_mut(&mut self, layer: usize) -> &mut Vec<f64> {
        &mut self.weights[layer]
    }

    pub(crate) fn biases_mut(&mut self, layer: usize) -> &mut Vec<f64> {
        &mut self.biases[layer]
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().chain(self.biases.iter()).map(Vec::len).sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.num_layers()).flat_map(move |l| self.weights[l].iter().chain(self.biases[l].iter()).copied())
    }

    /// Largest absolute parameter difference to a network of the same shape.
    pub fn max_param_distance(&self, other: &ReluNetwork) -> Result<f64> {
        if self.layer_sizes != other.layer_sizes {
            return Err(Error::InvalidNetwork("architectures differ".into()));
        }
        Ok(self.params().zip(other.params()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    pub fn forward_logit(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.input_dim(), x.len())?;
        Ok(self.logit(x))
    }

    /// Unchecked forward pass; panics on a shape mismatch.
    pub fn logit(&self, x: &[f64]) -> f64 {
        let mut current = x.to_vec();
        let last = self.num_layers() - 1;
        for l in 0..=last {
            current = self.affine(l, &current);
            if l < last {
                current.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        current[0]
    }

    pub fn predict(&self, x: &[f64]) -> Result<u8> {
        Ok(u8::from(self.forward_logit(x)? >= 0.0))
    }

    /// Pre-activations of every layer for input `x` (hidden layers then output).
    pub fn pre_activations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        check_dim(self.input_dim(), x.len())?;
        let mut out = Vec::with_capacity(self.num_layers());
        let mut current = x.to_vec();
        for l in 0..self.num_layers() {
            let z = self.affine(l, &current);
            current = z.iter().map(|v| v.max(0.0)).collect();
            out.push(z);
        }
        Ok(out)
    }

    pub(crate) fn affine(&self, layer: usize, input: &[f64]) -> Vec<f64> {
        let n = self.fan_in(layer);
        self.weights[layer]
            .chunks_exact(n)
            .zip(&self.biases[layer])
            .map(|(row, b)| row.iter().zip(input).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
pub(crate) fn tiny_net() -> ReluNetwork {
    ReluNetwork::from_rows(1, vec![(vec![vec![1.0]], vec![0.0]), (vec![vec![1.0]], vec![-1.0])]).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tiny_net_logits() {
        let net = tiny_net();
        assert_eq!(net.forward_logit(&[2.0]).unwrap(), 1.0);
        assert_eq!(net.predict(&[2.0]).unwrap(), 1);
        assert_eq!(net.forward_logit(&[0.5]).unwrap(), -0.5);
        assert_eq!(net.predict(&[0.5]).unwrap(), 0);
        assert_eq!(net.forward_logit(&[-3.0]).unwrap(), -1.0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let net = tiny_net();
        assert!(matches!(net.forward_logit(&[1.0, 2.0]), Err(Error::InputShape { expected: 1, found: 2 })));
    }

    #[test]
    fn construction_validates_shapes() {
        assert!(ReluNetwork::new(vec![2, 3, 2], vec![vec![0.0; 6], vec![0.0; 6]], vec![vec![0.0; 3], vec![0.0; 2]]).is_err());
        assert!(ReluNetwork::new(vec![2, 3, 1], vec![vec![0.0; 5], vec![0.0; 3]], vec![vec![0.0; 3], vec![0.0]]).is_err());
        assert!(ReluNetwork::new(vec![1, 1], vec![vec![f64::NAN]], vec![vec![0.0]]).is_err());
        assert!(ReluNetwork::new(vec![2, 3, 1], vec![vec![0.0; 6], vec![0.0; 3]], vec![vec![0.0; 3], vec![0.0]]).is_ok());
    }

    #[test]
    fn json_rejects_malformed_networks() {
        let bad = r#"{"layer_sizes":[1,2],"weights":[[1.0,2.0]],"biases":[[0.0,0.0]]}"#;
        assert!(ReluNetwork::from_json(bad).is_err());
    }

    fn arb_net() -> impl Strategy<Value = ReluNetwork> {
        (1usize..4, prop::collection::vec(1usize..5, 1..3)).prop_flat_map(|(d, hidden)| {
            let mut sizes = vec![d];
            sizes.extend(hidden);
            sizes.push(1);
            let ws: Vec<_> = sizes.windows(2).map(|w| prop::collection::vec(-3.0..3.0f64, w[0] * w[1])).collect();
            let bs: Vec<_> = sizes.windows(2).map(|w| prop::collection::vec(-1.0..1.0f64, w[1])).collect();
            (Just(sizes), ws, bs).prop_map(|(s, w, b)| ReluNetwork::new(s, w, b).unwrap())
        })
    }

    proptest! {
        #[test]
        fn json_round_trip_is_bit_exact(net in arb_net()) {
            let back = ReluNetwork::from_json(&net.to_json().unwrap()).unwrap();
            let a: Vec<u64> = net.params().map(f64::to_bits).collect();
            let b: Vec<u64> = back.params().map(f64::to_bits).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(net.layer_sizes(), back.layer_sizes());
        }

        #[test]
        fn permuting_hidden_nodes_preserves_output(
            net in arb_net(),
            seed in any::<u64>(),
            x in prop::collection::vec(-2.0..2.0f64, 3),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut permuted = net.clone();
            for l in 0..net.hidden_layers() {
                let mut perm: Vec<usize> = (0..net.fan_out(l)).collect();
                perm.shuffle(&mut rng);
                let fan_in = permuted.fan_in(l);
                let (old_w, old_b) = (permuted.weights(l).to_vec(), permuted.biases(l).to_vec());
                for (new_j, &old_j) in perm.iter().enumerate() {
                    permuted.weights_mut(l)[new_j * fan_in..(new_j + 1) * fan_in]
                        .copy_from_slice(&old_w[old_j * fan_in..(old_j + 1) * fan_in]);
                    permuted.biases_mut(l)[new_j] = old_b[old_j];
                }
                let next_in = permuted.fan_in(l + 1);
                let old_next = permuted.weights(l + 1).to_vec();
                for row in 0..permuted.fan_out(l + 1) {
                    for (new_j, &old_j) in perm.iter().enumerate() {
                        permuted.weights_mut(l + 1)[row * next_in + new_j] = old_next[row * next_in + old_j];
                    }
                }
            }
            let x = &x[..net.input_dim()];
            prop_assert!((net.logit(x) - permuted.logit(x)).abs() < 1e-9);
        }

        #[test]
        fn logit_is_lipschitz_along_lines(
            net in arb_net(),
            x in prop::collection::vec(-1.0..1.0f64, 3),
            v in prop::collection::vec(-1.0..1.0f64, 3),
        ) {
            let d = net.input_dim();
            // Product of induced infinity norms bounds |f(a) - f(b)| / |a - b|_inf.
            let lipschitz: f64 = (0..net.num_layers())
                .map(|l| net.weights(l).chunks(net.fan_in(l)).map(|r| r.iter().map(|w| w.abs()).sum::<f64>()).fold(0.0, f64::max))
                .product();
            let step = 1e-3;
            let vmax = v[..d].iter().map(|a| a.abs()).fold(0.0, f64::max);
            let mut prev = net.logit(&x[..d]);
            for i in 1..=1000 {
                let t = i as f64 * step;
                let p: Vec<f64> = (0..d).map(|k| x[k] + t * v[k]).collect();
                let cur = net.logit(&p);
                prop_assert!((cur - prev).abs() <= lipschitz * vmax * step + 1e-9);
                prev = cur;
            }
        }
    }
}
