use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ReluNetwork;
use crate::data::{permutation, Dataset};
use crate::error::{check_dim, Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Widths of the hidden layers.
    pub hidden_layers: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Share of the training half used for fitting; the rest is held out for testing.
    pub train_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { hidden_layers: vec![16, 16], epochs: 100, batch_size: 32, learning_rate: 0.01, seed: 0, train_fraction: 0.8 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!("train_fraction must be in (0, 1], got {}", self.train_fraction)));
        }
        if self.hidden_layers.contains(&0) {
            return Err(Error::InvalidConfig("hidden layer widths must be positive".into()));
        }
        Ok(())
    }

    fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig { seed, ..self.clone() }
    }
}

/// Mean binary cross-entropy over the whole training set after each epoch.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
}

/// Network with weights and biases drawn uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn init_network(input_dim: usize, hidden: &[usize], seed: u64) -> Result<ReluNetwork> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sizes = vec![input_dim];
    sizes.extend_from_slice(hidden);
    sizes.push(1);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for w in sizes.windows(2) {
        let bound = (1.0 / w[0] as f64).sqrt();
        weights.push((0..w[0] * w[1]).map(|_| rng.random_range(-bound..=bound)).collect());
        biases.push((0..w[1]).map(|_| rng.random_range(-bound..=bound)).collect());
    }
    ReluNetwork::new(sizes, weights, biases)
}

pub fn train(data: &Dataset, config: &TrainConfig) -> Result<ReluNetwork> {
    Ok(train_with_report(data, config)?.0)
}

/// Mini-batch Adam on binary cross-entropy of `sigmoid(logit)`.
pub fn train_with_report(data: &Dataset, config: &TrainConfig) -> Result<(ReluNetwork, TrainReport)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::DegenerateData("empty dataset".into()));
    }
    if data.count_label(0) == 0 || data.count_label(1) == 0 {
        return Err(Error::DegenerateData("both classes must be present".into()));
    }
    let mut net = init_network(data.dim(), &config.hidden_layers, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005e_ed0f_da7a);
    let mut adam = Adam::new(&net);
    let mut grads = Grads::zeros(&net);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport::default();

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            grads.clear();
            for &i in batch {
                accumulate_gradient(&net, &data.rows()[i], data.labels()[i], &mut grads);
            }
            grads.scale(1.0 / batch.len() as f64);
            adam.step(&mut net, &grads, config.learning_rate);
        }
        report.epoch_losses.push(mean_loss(&net, data));
    }
    if net.params().any(|p| !p.is_finite()) {
        return Err(Error::Internal("training diverged to non-finite parameters".into()));
    }
    Ok((net, report))
}

pub fn mean_loss(net: &ReluNetwork, data: &Dataset) -> f64 {
    data.iter().map(|(x, y)| bce_with_logit(net.logit(x), y)).sum::<f64>() / data.len() as f64
}

pub fn accuracy(net: &ReluNetwork, data: &Dataset) -> f64 {
    let hits = data.iter().filter(|(x, y)| u8::from(net.logit(x) >= 0.0) == *y).count();
    hits as f64 / data.len() as f64
}

fn bce_with_logit(z: f64, y: u8) -> f64 {
    z.max(0.0) - z * f64::from(y) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

struct Grads {
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl Grads {
    fn zeros(net: &ReluNetwork) -> Self {
        Grads {
            weights: (0..net.num_layers()).map(|l| vec![0.0; net.weights(l).len()]).collect(),
            biases: (0..net.num_layers()).map(|l| vec![0.0; net.biases(l).len()]).collect(),
        }
    }

    fn clear(&mut self) {
        self.weights.iter_mut().chain(self.biases.iter_mut()).for_each(|v| v.fill(0.0));
    }

    fn scale(&mut self, s: f64) {
        self.weights.iter_mut().chain(self.biases.iter_mut()).flatten().for_each(|g| *g *= s);
    }
}

fn accumulate_gradient(net: &ReluNetwork, x: &[f64], y: u8, grads: &mut Grads) {
    let layers = net.num_layers();
    // activations[l] is the input to layer l.
    let mut activations = vec![x.to_vec()];
    let mut pre = Vec::with_capacity(layers);
    for l in 0..layers {
        let z = net.affine(l, &activations[l]);
        if l + 1 < layers {
            activations.push(z.iter().map(|v| v.max(0.0)).collect());
        }
        pre.push(z);
    }
    let mut delta = vec![sigmoid(pre[layers - 1][0]) - f64::from(y)];
    for l in (0..layers).rev() {
        let fan_in = net.fan_in(l);
        let input = &activations[l];
        for (j, d) in delta.iter().enumerate() {
            grads.biases[l][j] += d;
            for (k, a) in input.iter().enumerate() {
                grads.weights[l][j * fan_in + k] += d * a;
            }
        }
        if l > 0 {
            let mut back = vec![0.0; fan_in];
            for (j, d) in delta.iter().enumerate() {
                for (k, b) in back.iter_mut().enumerate() {
                    *b += net.weight(l, j, k) * d;
                }
            }
            for (b, z) in back.iter_mut().zip(&pre[l - 1]) {
                if *z <= 0.0 {
                    *b = 0.0;
                }
            }
            delta = back;
        }
    }
}

struct Adam {
    t: i32,
    m: Grads,
    v: Grads,
}

impl Adam {
    fn new(net: &ReluNetwork) -> Self {
        Adam { t: 0, m: Grads::zeros(net), v: Grads::zeros(net) }
    }

    fn step(&mut self, net: &mut ReluNetwork, g: &Grads, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPSILON);
            }
        };
        for l in 0..net.num_layers() {
            update(net.weights_mut(l), &g.weights[l], &mut self.m.weights[l], &mut self.v.weights[l]);
            update(net.biases_mut(l), &g.biases[l], &mut self.m.biases[l], &mut self.v.biases[l]);
        }
    }
}

/// The retraining protocol with the standard 10 + 10 split.
pub fn retrain_ensemble(first_half: &Dataset, second_half: &Dataset, config: &TrainConfig) -> Result<Vec<ReluNetwork>> {
    retrain_ensemble_sized(first_half, second_half, config, 10, 10)
}

/// Trains `n_full` models on both halves and `n_subsample` models on 99% of
/// the first half, each discarding a different 1% slice. Model `i` (1-based,
/// in that order) is seeded with `config.seed + i`.
pub fn retrain_ensemble_sized(
    first_half: &Dataset,
    second_half: &Dataset,
    config: &TrainConfig,
    n_full: usize,
    n_subsample: usize,
) -> Result<Vec<ReluNetwork>> {
    if first_half.is_empty() || second_half.is_empty() {
        return Err(Error::DegenerateData("both halves must be nonempty".into()));
    }
    check_dim(first_half.dim(), second_half.dim())?;
    let both = first_half.concat(second_half)?;
    let n = first_half.len();
    let slice = ((n as f64) * 0.01).round().max(1.0) as usize;
    let order = permutation(n, config.seed);

    let jobs: Vec<(u64, Dataset)> = (0..n_full)
        .map(|i| (i as u64 + 1, both.clone()))
        .chain((0..n_subsample).map(|i| {
            let start = (i * slice) % n;
            let dropped: Vec<usize> = (start..start + slice).map(|p| order[p % n]).collect();
            let kept: Vec<usize> = (0..n).filter(|j| !dropped.contains(j)).collect();
            ((n_full + i) as u64 + 1, first_half.subset(&kept))
        }))
        .collect();

    jobs.into_par_iter()
        .map(|(offset, data)| train(&data, &config.with_seed(config.seed.wrapping_add(offset))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::blobs;

    fn logistic_regression_accuracy(data: &Dataset) -> f64 {
        // Full-batch gradient descent; independent of the network code.
        let d = data.dim();
        let mut w = vec![0.0; d];
        let mut b = 0.0;
        for _ in 0..2000 {
            let mut gw = vec![0.0; d];
            let mut gb = 0.0;
            for (x, y) in data.iter() {
                let z: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b;
                let e = 1.0 / (1.0 + (-z).exp()) - f64::from(y);
                gw.iter_mut().zip(x).for_each(|(g, xi)| *g += e * xi);
                gb += e;
            }
            let n = data.len() as f64;
            w.iter_mut().zip(&gw).for_each(|(wi, g)| *wi -= 2.0 * g / n);
            b -= 2.0 * gb / n;
        }
        let hits = data
            .iter()
            .filter(|(x, y)| u8::from(w.iter().zip(*x).map(|(a, b)| a * b).sum::<f64>() + b >= 0.0) == *y)
            .count();
        hits as f64 / data.len() as f64
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig { hidden_layers: vec![8, 8], epochs, seed: 11, ..TrainConfig::default() }
    }

    #[test]
    fn separable_blobs_are_learned() {
        let data = blobs(200, 0.45, 3).unwrap();
        assert!(logistic_regression_accuracy(&data) >= 0.95);
        let (net, report) = train_with_report(&data, &cfg(50)).unwrap();
        assert!(accuracy(&net, &data) >= 0.95, "accuracy {}", accuracy(&net, &data));
        assert!(report.epoch_losses.last() <= report.epoch_losses.first());
        assert!(net.params().all(f64::is_finite));
    }

    #[test]
    fn zero_epochs_returns_initial_network() {
        let data = blobs(20, 0.5, 1).unwrap();
        let net = train(&data, &cfg(0)).unwrap();
        assert_eq!(net, init_network(2, &[8, 8], 11).unwrap());
    }

    #[test]
    fn training_is_deterministic() {
        let data = blobs(60, 0.5, 2).unwrap();
        assert_eq!(train(&data, &cfg(5)).unwrap(), train(&data, &cfg(5)).unwrap());
    }

    #[test]
    fn single_class_data_is_rejected() {
        let data = Dataset::from_rows(vec![vec![0.1], vec![0.2]], vec![1, 1]).unwrap();
        assert!(matches!(train(&data, &cfg(1)), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let net = init_network(4, &[16], 5).unwrap();
        assert!(net.weights(0).iter().chain(net.biases(0)).all(|w| w.abs() <= 0.5));
        assert!(net.weights(1).iter().all(|w| w.abs() <= 0.25));
    }

    #[test]
    fn ensemble_sizes_and_determinism() {
        let data = blobs(80, 0.5, 4).unwrap();
        let (a, b) = data.split_halves(0);
        let models = retrain_ensemble(&a, &b, &cfg(2)).unwrap();
        assert_eq!(models.len(), 20);
        assert_eq!(models, retrain_ensemble(&a, &b, &cfg(2)).unwrap());
        assert_eq!(retrain_ensemble_sized(&a, &b, &cfg(1), 1, 1).unwrap().len(), 2);
        // Each subsample model sees a different data set, so all differ.
        for i in 10..20 {
            for j in i + 1..20 {
                assert_ne!(models[i], models[j]);
            }
        }
    }

    #[test]
    fn ensemble_rejects_mismatched_halves() {
        let a = blobs(20, 0.5, 1).unwrap();
        let b = Dataset::from_rows(vec![vec![0.1, 0.2, 0.3]; 4], vec![0, 1, 0, 1]).unwrap();
        assert!(matches!(retrain_ensemble(&a, &b, &cfg(1)), Err(Error::InputShape { .. })));
    }
}
