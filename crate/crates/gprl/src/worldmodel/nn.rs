//! Small fully-connected regressors trained from scratch.
//!
//! Inputs and targets are z-scored with statistics from the training split
//! only. Weight updates use a Vario-Eta style rule: each parameter's step
//! is the global learning rate times the gradient divided by the running
//! standard deviation of that parameter's gradient. The parameter snapshot
//! with the best validation MSE is the training result.

use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Rectifier,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Rectifier => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed in terms of the pre-activation input.
    fn deriv(self, x: f64) -> f64 {
        match self {
            Activation::Rectifier => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - x.tanh().powi(2),
        }
    }
}

/// Per-feature z-scoring. Features with zero variance get std 1 so the
/// round trip stays exact.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Normalizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn fit(rows: &[Vec<f64>]) -> Self {
        assert!(!rows.is_empty());
        let dim = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for row in rows {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; dim];
        for row in rows {
            for i in 0..dim {
                var[i] += (row[i] - mean[i]).powi(2);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Normalizer { mean, std }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}

/// Feed-forward regressor: linear layers with a nonlinearity on every
/// hidden layer and a linear output, wrapped in input/output normalizers.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Regressor {
    /// Layer widths, input first: [in, h1, ..., out].
    pub sizes: Vec<usize>,
    /// weights[l] has sizes[l+1] x sizes[l] entries, row-major.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub activation: Activation,
    pub in_norm: Normalizer,
    pub out_norm: Normalizer,
}

/// Gradient (or optimizer moment) storage shaped like a regressor's
/// parameters.
#[derive(Clone, Debug)]
pub struct GradBuf {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl GradBuf {
    pub fn zeros_like(net: &Regressor) -> Self {
        GradBuf {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn fill(&mut self, v: f64) {
        for w in &mut self.weights {
            w.iter_mut().for_each(|x| *x = v);
        }
        for b in &mut self.biases {
            b.iter_mut().for_each(|x| *x = v);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for w in &mut self.weights {
            w.iter_mut().for_each(|x| *x *= c);
        }
        for b in &mut self.biases {
            b.iter_mut().for_each(|x| *x *= c);
        }
    }
}

impl Regressor {
    /// Random initialization: uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
    pub fn new_random(sizes: Vec<usize>, activation: Activation, rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..sizes.len() - 1 {
            let bound = 1.0 / (sizes[l] as f64).sqrt();
            weights.push(
                (0..sizes[l] * sizes[l + 1])
                    .map(|_| rng.random_range(-bound..=bound))
                    .collect(),
            );
            biases.push(vec![0.0; sizes[l + 1]]);
        }
        let in_dim = sizes[0];
        let out_dim = *sizes.last().unwrap();
        Regressor {
            sizes,
            weights,
            biases,
            activation,
            in_norm: Normalizer::identity(in_dim),
            out_norm: Normalizer::identity(out_dim),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    fn layer_count(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Forward pass in normalized space, recording pre-activations per layer.
    fn forward_normalized(&self, xn: &[f64]) -> Vec<Vec<f64>> {
        let mut pre = Vec::with_capacity(self.layer_count());
        let mut input = xn.to_vec();
        for l in 0..self.layer_count() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let mut z = self.biases[l].clone();
            for (j, zj) in z.iter_mut().enumerate() {
                let row = &self.weights[l][j * n_in..(j + 1) * n_in];
                *zj += row.iter().zip(&input).map(|(w, x)| w * x).sum::<f64>();
            }
            if l + 1 < self.layer_count() {
                input = z.iter().map(|&v| self.activation.apply(v)).collect();
            } else {
                input = z.clone();
            }
            pre.push(z);
            let _ = n_out;
        }
        pre
    }

    /// Allocation-light forward pass; this is the rollout hot path.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let width = *self.sizes.iter().max().unwrap();
        let mut a = vec![0.0; width];
        let mut b = vec![0.0; width];
        for (i, v) in x.iter().enumerate() {
            a[i] = (v - self.in_norm.mean[i]) / self.in_norm.std[i];
        }
        let layers = self.layer_count();
        for l in 0..layers {
            let n_in = self.sizes[l];
            let last = l + 1 == layers;
            for (j, out) in b[..self.sizes[l + 1]].iter_mut().enumerate() {
                let row = &self.weights[l][j * n_in..(j + 1) * n_in];
                let mut z = self.biases[l][j];
                for (w, xv) in row.iter().zip(&a[..n_in]) {
                    z += w * xv;
                }
                *out = if last { z } else { self.activation.apply(z) };
            }
            std::mem::swap(&mut a, &mut b);
        }
        let out_dim = self.output_dim();
        a.truncate(out_dim);
        for (i, v) in a.iter_mut().enumerate() {
            *v = *v * self.out_norm.std[i] + self.out_norm.mean[i];
        }
        a
    }

    /// Vector-Jacobian product: given the gradient of some scalar loss with
    /// respect to the (denormalized) output, accumulates parameter gradients
    /// into `grads` (when given) and returns the gradient with respect to
    /// the (raw) input.
    pub fn vjp(&self, x: &[f64], gy: &[f64], mut grads: Option<&mut GradBuf>) -> Vec<f64> {
        let xn = self.in_norm.normalize(x);
        let pre = self.forward_normalized(&xn);
        // Output denormalization scales the gradient by the output stds.
        let mut delta: Vec<f64> = gy
            .iter()
            .zip(&self.out_norm.std)
            .map(|(g, s)| g * s)
            .collect();
        for l in (0..self.layer_count()).rev() {
            let n_in = self.sizes[l];
            let prev_activ: Vec<f64> = if l == 0 {
                xn.clone()
            } else {
                pre[l - 1]
                    .iter()
                    .map(|&v| self.activation.apply(v))
                    .collect()
            };
            if let Some(g) = grads.as_deref_mut() {
                for (j, &d) in delta.iter().enumerate() {
                    g.biases[l][j] += d;
                    let row = &mut g.weights[l][j * n_in..(j + 1) * n_in];
                    for (wi, &a) in row.iter_mut().zip(&prev_activ) {
                        *wi += d * a;
                    }
                }
            }
            // Gradient w.r.t. the previous layer's activations.
            let mut gprev = vec![0.0; n_in];
            for (j, &d) in delta.iter().enumerate() {
                let row = &self.weights[l][j * n_in..(j + 1) * n_in];
                for (gp, &w) in gprev.iter_mut().zip(row) {
                    *gp += d * w;
                }
            }
            if l > 0 {
                delta = gprev
                    .iter()
                    .zip(&pre[l - 1])
                    .map(|(&g, &z)| g * self.activation.deriv(z))
                    .collect();
            } else {
                // Through input normalization.
                return gprev
                    .iter()
                    .zip(&self.in_norm.std)
                    .map(|(g, s)| g / s)
                    .collect();
            }
        }
        unreachable!()
    }

    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(usize, &mut f64)) {
        let mut idx = 0;
        for l in 0..self.weights.len() {
            for w in &mut self.weights[l] {
                f(idx, w);
                idx += 1;
            }
            for b in &mut self.biases[l] {
                f(idx, b);
                idx += 1;
            }
        }
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }
}

pub fn flatten_grads(g: &GradBuf) -> Vec<f64> {
    let mut out = Vec::new();
    for l in 0..g.weights.len() {
        out.extend_from_slice(&g.weights[l]);
        out.extend_from_slice(&g.biases[l]);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    VarioEta,
    Sgd,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    /// Decay of the running gradient moments in the Vario-Eta rule.
    pub eta_decay: f64,
    pub eta_eps: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: vec![10, 10, 10],
            activation: Activation::Rectifier,
            epochs: 500,
            batch_size: 32,
            learning_rate: 0.01,
            optimizer: Optimizer::VarioEta,
            eta_decay: 0.99,
            eta_eps: 1e-8,
            patience: 50,
            seed: 0,
        }
    }
}

/// Training outcome of a single regressor.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubReport {
    pub train_mse: f64,
    pub validation_mse: f64,
    pub generalization_mse: f64,
    pub generalization_r2: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
}

/// Mean squared error per output element, in raw target units.
pub fn mse(net: &Regressor, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
    assert_eq!(inputs.len(), targets.len());
    let mut acc = 0.0;
    let mut count = 0usize;
    for (x, t) in inputs.iter().zip(targets) {
        let y = net.forward(x);
        for (yi, ti) in y.iter().zip(t) {
            acc += (yi - ti).powi(2);
            count += 1;
        }
    }
    acc / count.max(1) as f64
}

fn variance(targets: &[Vec<f64>]) -> f64 {
    let dim = targets[0].len();
    let n = (targets.len() * dim) as f64;
    let mean: f64 = targets.iter().flatten().sum::<f64>() / n;
    targets
        .iter()
        .flatten()
        .map(|v| (v - mean).powi(2))
        .sum::<f64>()
        / n
}

pub fn r_squared(net: &Regressor, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
    let var = variance(targets);
    if var == 0.0 {
        return 1.0;
    }
    1.0 - mse(net, inputs, targets) / var
}

/// Trains a regressor on (inputs, targets), selecting the weights with the
/// best validation MSE. Loss is computed in normalized space; reported MSEs
/// are in raw target units.
pub fn train_regressor(
    train_x: &[Vec<f64>],
    train_y: &[Vec<f64>],
    val_x: &[Vec<f64>],
    val_y: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<(Regressor, SubReport)> {
    if train_x.is_empty() {
        return Err(Error::Usage("empty training set".into()));
    }
    let in_dim = train_x[0].len();
    let out_dim = train_y[0].len();
    let mut sizes = vec![in_dim];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(out_dim);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = Regressor::new_random(sizes, cfg.activation, &mut rng);
    net.in_norm = Normalizer::fit(train_x);
    net.out_norm = Normalizer::fit(train_y);

    // Pre-normalized targets for the loss; inputs go through the net's own
    // normalizer inside vjp/forward.
    let tn: Vec<Vec<f64>> = train_y.iter().map(|t| net.out_norm.normalize(t)).collect();

    let mut grads = GradBuf::zeros_like(&net);
    let mut ema_g = GradBuf::zeros_like(&net);
    let mut ema_g2 = GradBuf::zeros_like(&net);

    let mut best = net.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut stale = 0usize;
    let mut epochs_run = 0usize;

    let mut order: Vec<usize> = (0..train_x.len()).collect();
    for epoch in 1..=cfg.epochs {
        epochs_run = epoch;
        // Seeded shuffle per epoch.
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        for batch in order.chunks(cfg.batch_size) {
            grads.fill(0.0);
            for &i in batch {
                let y = net.forward(&train_x[i]);
                let yn = net.out_norm.normalize(&y);
                // d/dy of mean over the batch of |yn - tn|^2, expressed in
                // raw output units so vjp can rescale internally.
                let gy: Vec<f64> = yn
                    .iter()
                    .zip(&tn[i])
                    .zip(&net.out_norm.std)
                    .map(|((p, t), s)| 2.0 * (p - t) / (batch.len() as f64) / s)
                    .collect();
                net.vjp(&train_x[i], &gy, Some(&mut grads));
            }
            apply_update(&mut net, &grads, &mut ema_g, &mut ema_g2, cfg);
        }
        let train_loss = mse(&net, train_x, train_y);
        if !train_loss.is_finite() {
            return Err(Error::Training(format!(
                "non-finite training loss at epoch {epoch}"
            )));
        }
        let val_loss = if val_x.is_empty() {
            train_loss
        } else {
            mse(&net, val_x, val_y)
        };
        if val_loss < best_val {
            best_val = val_loss;
            best = net.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    let report = SubReport {
        train_mse: mse(&best, train_x, train_y),
        validation_mse: if val_x.is_empty() {
            mse(&best, train_x, train_y)
        } else {
            mse(&best, val_x, val_y)
        },
        generalization_mse: f64::NAN, // filled by the caller on the held-out split
        generalization_r2: f64::NAN,
        epochs_run,
        best_epoch,
    };
    Ok((best, report))
}

fn apply_update(
    net: &mut Regressor,
    grads: &GradBuf,
    ema_g: &mut GradBuf,
    ema_g2: &mut GradBuf,
    cfg: &TrainConfig,
) {
    let flat = flatten_grads(grads);
    match cfg.optimizer {
        Optimizer::Sgd => {
            net.for_each_param_mut(|i, p| {
                *p -= cfg.learning_rate * flat[i];
            });
        }
        Optimizer::VarioEta => {
            let fg = flatten_grads(ema_g);
            let fg2 = flatten_grads(ema_g2);
            let beta = cfg.eta_decay;
            let mut new_g = fg.clone();
            let mut new_g2 = fg2.clone();
            net.for_each_param_mut(|i, p| {
                let g = flat[i];
                new_g[i] = beta * fg[i] + (1.0 - beta) * g;
                new_g2[i] = beta * fg2[i] + (1.0 - beta) * g * g;
                let var = (new_g2[i] - new_g[i] * new_g[i]).max(0.0);
                *p -= cfg.learning_rate * g / (cfg.eta_eps + var.sqrt());
            });
            unflatten_into(&new_g, ema_g);
            unflatten_into(&new_g2, ema_g2);
        }
    }
}

fn unflatten_into(flat: &[f64], buf: &mut GradBuf) {
    let mut idx = 0;
    for l in 0..buf.weights.len() {
        for w in &mut buf.weights[l] {
            *w = flat[idx];
            idx += 1;
        }
        for b in &mut buf.biases[l] {
            *b = flat[idx];
            idx += 1;
        }
    }
}
