//! Masked autoregressive density estimator over bitstrings.
//!
//! Conditionals model `P(b_i = 1 | b_<i)` where `b_i` is the packed bit of a
//! [`SpinConfig`] (1 means spin −1). Hidden units use `tanh`, outputs use a
//! sigmoid clamped to `[ε, 1 − ε]`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ising::MAX_SITES;
use crate::{Error, Result, SpinConfig};

/// Clamp applied to every conditional probability.
pub const PROB_EPSILON: f64 = 1e-7;
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Hidden layer widths; empty means one layer of width `4N`.
    pub hidden_sizes: Vec<usize>,
    pub rng_seed: u64,
    /// Stop after this many epochs without an improvement above `plateau_tolerance`.
    pub patience: usize,
    pub plateau_tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 64,
            learning_rate: 1e-3,
            hidden_sizes: Vec::new(),
            rng_seed: 0,
            patience: 50,
            plateau_tolerance: 1e-5,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0
            || self.batch_size == 0
            || !(self.learning_rate > 0.0 && self.learning_rate.is_finite())
            || self.hidden_sizes.contains(&0)
        {
            return Err(Error::InvalidArgument(format!(
                "training settings must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn resolved_hidden(&self, n: usize) -> Vec<usize> {
        if self.hidden_sizes.is_empty() {
            vec![4 * n.max(1)]
        } else {
            self.hidden_sizes.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Layer {
    n_in: usize,
    n_out: usize,
    /// Row-major `n_out × n_in`.
    weights: Vec<f64>,
    biases: Vec<f64>,
    mask: Vec<f64>,
}

impl Layer {
    fn zeros(n_in: usize, n_out: usize, mask: Vec<f64>) -> Self {
        Self {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            biases: vec![0.0; n_out],
            mask,
        }
    }

    fn forward(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.n_out {
            let row = o * self.n_in;
            let mut acc = self.biases[o];
            for (i, x) in input.iter().enumerate() {
                acc += self.weights[row + i] * self.mask[row + i] * x;
            }
            out.push(acc);
        }
    }
}

/// Training record returned next to the fitted network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_nll: f64,
    pub final_nll: f64,
    /// Mean minibatch loss of every completed epoch.
    pub epoch_losses: Vec<f64>,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MadeNetwork {
    version: u32,
    n_inputs: usize,
    order: Vec<usize>,
    hidden_sizes: Vec<usize>,
    layers: Vec<Layer>,
    #[serde(default)]
    config: Option<TrainConfig>,
    #[serde(default)]
    data_digest: Option<String>,
}

fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON)
}

/// FNV-1a over the packed samples, used to tag checkpoints with their data.
pub fn data_digest(samples: &[SpinConfig]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for s in samples {
        for byte in s.bits().to_le_bytes().into_iter().chain([s.len() as u8]) {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

fn hidden_degrees(n: usize, width: usize) -> Vec<usize> {
    (0..width)
        .map(|k| if n <= 1 { 1 } else { 1 + k % (n - 1) })
        .collect()
}

impl MadeNetwork {
    /// All-zero network: every conditional is 1/2.
    pub fn zeros(n_inputs: usize, hidden_sizes: &[usize], order: Option<Vec<usize>>) -> Result<Self> {
        if n_inputs == 0 || n_inputs > MAX_SITES {
            return Err(Error::Capacity {
                what: "MADE inputs",
                size: n_inputs,
                limit: MAX_SITES,
            });
        }
        if hidden_sizes.is_empty() || hidden_sizes.contains(&0) {
            return Err(Error::InvalidArgument(
                "need at least one non-empty hidden layer".into(),
            ));
        }
        let order = order.unwrap_or_else(|| (0..n_inputs).collect());
        let mut seen = vec![false; n_inputs];
        if order.len() != n_inputs || order.iter().any(|&v| v >= n_inputs || std::mem::replace(&mut seen[v], true)) {
            return Err(Error::InvalidArgument(format!(
                "variable order {order:?} is not a permutation of 0..{n_inputs}"
            )));
        }
        let masks = Self::build_masks(n_inputs, hidden_sizes, &order);
        let mut layers = Vec::with_capacity(masks.len());
        let mut n_in = n_inputs;
        for (mask, &n_out) in masks.into_iter().zip(hidden_sizes.iter().chain([&n_inputs])) {
            layers.push(Layer::zeros(n_in, n_out, mask));
            n_in = n_out;
        }
        Ok(Self {
            version: CHECKPOINT_VERSION,
            n_inputs,
            order,
            hidden_sizes: hidden_sizes.to_vec(),
            layers,
            config: None,
            data_digest: None,
        })
    }

    /// Connectivity masks. Input `j` has degree `pos(j) + 1`; hidden unit `k`
    /// of any layer has degree `1 + k mod (N − 1)`.
    fn build_masks(n: usize, hidden: &[usize], order: &[usize]) -> Vec<Vec<f64>> {
        let mut input_degree = vec![0; n];
        for (pos, &v) in order.iter().enumerate() {
            input_degree[v] = pos + 1;
        }
        let mut masks = Vec::new();
        let mut prev = input_degree.clone();
        for &width in hidden {
            let deg = hidden_degrees(n, width);
            let mut m = vec![0.0; width * prev.len()];
            for (k, &dk) in deg.iter().enumerate() {
                for (j, &dj) in prev.iter().enumerate() {
                    if dk >= dj {
                        m[k * prev.len() + j] = 1.0;
                    }
                }
            }
            masks.push(m);
            prev = deg;
        }
        let mut m = vec![0.0; n * prev.len()];
        for (i, &di) in input_degree.iter().enumerate() {
            for (k, &dk) in prev.iter().enumerate() {
                if di > dk {
                    m[i * prev.len() + k] = 1.0;
                }
            }
        }
        masks.push(m);
        masks
    }

    /// Uniform `±1/√fan_in` initialization on unmasked connections.
    pub fn random(n_inputs: usize, hidden_sizes: &[usize], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(n_inputs, hidden_sizes, None)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.n_in as f64).sqrt();
            for (w, m) in layer.weights.iter_mut().zip(&layer.mask) {
                let v = rng.gen_range(-bound..=bound);
                *w = if *m != 0.0 { v } else { 0.0 };
            }
            for b in &mut layer.biases {
                *b = rng.gen_range(-bound..=bound);
            }
        }
        Ok(net)
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn hidden_sizes(&self) -> &[usize] {
        &self.hidden_sizes
    }

    pub fn train_config(&self) -> Option<&TrainConfig> {
        self.config.as_ref()
    }

    pub fn training_digest(&self) -> Option<&str> {
        self.data_digest.as_deref()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Overrides one mask entry. Only meant for negative-control checks of
    /// the autoregressive property.
    pub fn set_mask_entry(&mut self, layer: usize, out: usize, input: usize, on: bool) -> Result<()> {
        let l = self.layers.get_mut(layer).ok_or(Error::Index {
            index: layer,
            len: self.hidden_sizes.len() + 1,
        })?;
        if out >= l.n_out || input >= l.n_in {
            return Err(Error::Index {
                index: out * l.n_in + input,
                len: l.mask.len(),
            });
        }
        l.mask[out * l.n_in + input] = if on { 1.0 } else { 0.0 };
        Ok(())
    }

    /// Sets every weight and bias to `value`; mask still applies.
    pub fn fill_parameters(&mut self, value: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = value);
            l.biases.iter_mut().for_each(|b| *b = value);
        }
    }

    fn inputs_of(&self, bits: u64) -> Vec<f64> {
        (0..self.n_inputs).map(|i| ((bits >> i) & 1) as f64).collect()
    }

    /// Output logits for every variable.
    fn logits(&self, input: &[f64]) -> Vec<f64> {
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            layer.forward(&cur, &mut next);
            if li != last {
                next.iter_mut().for_each(|v| *v = v.tanh());
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Clamped `P(b_i = 1 | preceding bits)` for every variable `i`.
    pub fn conditionals(&self, config: &SpinConfig) -> Result<Vec<f64>> {
        self.check_len(config)?;
        Ok(self
            .logits(&self.inputs_of(config.bits()))
            .into_iter()
            .map(|a| clamp_prob(sigmoid(a)))
            .collect())
    }

    fn check_len(&self, config: &SpinConfig) -> Result<()> {
        if config.len() != self.n_inputs {
            return Err(Error::Dimension {
                expected: self.n_inputs,
                actual: config.len(),
            });
        }
        Ok(())
    }

    pub fn log_prob(&self, config: &SpinConfig) -> Result<f64> {
        self.check_len(config)?;
        Ok(self.log_prob_bits(config.bits()))
    }

    pub(crate) fn log_prob_bits(&self, bits: u64) -> f64 {
        self.logits(&self.inputs_of(bits))
            .into_iter()
            .enumerate()
            .map(|(i, a)| {
                let p = clamp_prob(sigmoid(a));
                if (bits >> i) & 1 == 1 {
                    p.ln()
                } else {
                    (1.0 - p).ln()
                }
            })
            .sum()
    }

    /// Ancestral draw in variable order.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SpinConfig {
        let mut input = vec![0.0; self.n_inputs];
        let mut bits = 0u64;
        for &v in &self.order {
            // only earlier variables feed output v, later zeros are ignored
            let a = self.logits(&input)[v];
            let p = clamp_prob(sigmoid(a));
            if rng.gen::<f64>() < p {
                bits |= 1 << v;
                input[v] = 1.0;
            }
        }
        SpinConfig::from_bits(bits, self.n_inputs)
    }

    /// `exp(log_prob)` for all `2^N` configurations.
    pub fn exhaustive_probs(&self) -> Result<Vec<f64>> {
        if self.n_inputs > crate::ising::MAX_ENUMERATION_SITES {
            return Err(Error::Capacity {
                what: "exhaustive MADE enumeration",
                size: self.n_inputs,
                limit: crate::ising::MAX_ENUMERATION_SITES,
            });
        }
        Ok((0..1u64 << self.n_inputs)
            .map(|b| self.log_prob_bits(b).exp())
            .collect())
    }

    /// Perturbation test of the autoregressive structure over every input
    /// pattern up to `max_patterns`. Returns the first violating `(i, j)`:
    /// flipping input `j` changed conditional `i` although `j` does not
    /// precede `i`.
    pub fn find_mask_violation(&self, max_patterns: u64) -> Option<(usize, usize)> {
        let n = self.n_inputs;
        let mut pos = vec![0; n];
        for (p, &v) in self.order.iter().enumerate() {
            pos[v] = p;
        }
        let patterns = (1u64 << n.min(20)).min(max_patterns.max(1));
        for pattern in 0..patterns {
            let base = self.logits(&self.inputs_of(pattern));
            for j in 0..n {
                let other = self.logits(&self.inputs_of(pattern ^ (1 << j)));
                for i in 0..n {
                    if pos[j] >= pos[i] && base[i] != other[i] {
                        return Some((i, j));
                    }
                }
            }
        }
        None
    }

    fn sample_loss_and_grad(&self, bits: u64, grads: Option<&mut [Layer]>) -> f64 {
        let input = self.inputs_of(bits);
        let last = self.layers.len() - 1;
        let mut acts = vec![input];
        let mut buf = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            layer.forward(acts.last().unwrap(), &mut buf);
            if li != last {
                buf.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(buf.clone());
        }
        let logits = acts.pop().unwrap();
        let mut loss = 0.0;
        let mut delta = Vec::with_capacity(self.n_inputs);
        for (i, &a) in logits.iter().enumerate() {
            let raw = sigmoid(a);
            let p = clamp_prob(raw);
            let b = ((bits >> i) & 1) as f64;
            loss -= if b == 1.0 { p.ln() } else { (1.0 - p).ln() };
            // clamped region has zero slope
            delta.push(if p == raw { raw - b } else { 0.0 });
        }
        let Some(grads) = grads else {
            return loss;
        };
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let x = &acts[li];
            let g = &mut grads[li];
            for o in 0..layer.n_out {
                let row = o * layer.n_in;
                g.biases[o] += delta[o];
                for (i, xi) in x.iter().enumerate() {
                    g.weights[row + i] += delta[o] * xi * layer.mask[row + i];
                }
            }
            if li == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.n_in];
            for o in 0..layer.n_out {
                let row = o * layer.n_in;
                for (i, p) in prev.iter_mut().enumerate() {
                    *p += layer.weights[row + i] * layer.mask[row + i] * delta[o];
                }
            }
            for (p, h) in prev.iter_mut().zip(x) {
                *p *= 1.0 - h * h;
            }
            delta = prev;
        }
        loss
    }

    /// Mean negative log-likelihood of `samples`.
    pub fn nll(&self, samples: &[SpinConfig]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("empty sample set".into()));
        }
        let mut total = 0.0;
        for s in samples {
            self.check_len(s)?;
            total += self.sample_loss_and_grad(s.bits(), None);
        }
        Ok(total / samples.len() as f64)
    }

    /// Analytic gradient of the mean NLL, flattened layer by layer as
    /// `[weights, biases]`.
    pub fn nll_gradient(&self, samples: &[SpinConfig]) -> Result<Vec<f64>> {
        let mut grads = self.zero_like();
        for s in samples {
            self.check_len(s)?;
            self.sample_loss_and_grad(s.bits(), Some(&mut grads));
        }
        let scale = 1.0 / samples.len().max(1) as f64;
        Ok(flatten(&grads).into_iter().map(|g| g * scale).collect())
    }

    /// Current parameters in the layout of [`MadeNetwork::nll_gradient`].
    pub fn parameters(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_parameters() {
            return Err(Error::Dimension {
                expected: self.num_parameters(),
                actual: params.len(),
            });
        }
        let mut it = params.iter();
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.biases.iter_mut()).for_each(|w| *w = *it.next().unwrap());
        }
        Ok(())
    }

    fn zero_like(&self) -> Vec<Layer> {
        self.layers
            .iter()
            .map(|l| Layer::zeros(l.n_in, l.n_out, Vec::new()))
            .collect()
    }

    /// Fits a fresh network to `samples` with minibatch Adam.
    pub fn train(samples: &[SpinConfig], cfg: &TrainConfig) -> Result<(Self, TrainReport)> {
        cfg.validate()?;
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty training set".into()))?;
        let n = first.len();
        let mut net = Self::random(n, &cfg.resolved_hidden(n), cfg.rng_seed)?;
        let initial_nll = net.nll(samples)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed.wrapping_add(1));
        let mut params = net.parameters();
        let (mut m1, mut m2) = (vec![0.0; params.len()], vec![0.0; params.len()]);
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let mut t = 0i32;
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut epoch_losses = Vec::new();
        let mut best = f64::INFINITY;
        let mut since_best = 0;
        let mut stopped_early = false;
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                let mut grads = net.zero_like();
                let mut loss = 0.0;
                for &k in batch {
                    loss += net.sample_loss_and_grad(samples[k].bits(), Some(&mut grads));
                }
                epoch_loss += loss;
                let scale = 1.0 / batch.len() as f64;
                t += 1;
                let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
                for (((p, g), m), v) in params.iter_mut().zip(flatten(&grads)).zip(&mut m1).zip(&mut m2) {
                    let g = g * scale;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
                net.set_parameters(&params)?;
            }
            let epoch_loss = epoch_loss / samples.len() as f64;
            if !epoch_loss.is_finite() {
                return Err(Error::Training(format!(
                    "loss became {epoch_loss} after {} epochs",
                    epoch_losses.len()
                )));
            }
            epoch_losses.push(epoch_loss);
            if epoch_loss < best - cfg.plateau_tolerance {
                best = epoch_loss;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
        let final_nll = net.nll(samples)?;
        if !final_nll.is_finite() {
            return Err(Error::Training(format!("final loss is {final_nll}")));
        }
        net.config = Some(cfg.clone());
        net.data_digest = Some(data_digest(samples));
        Ok((
            net,
            TrainReport {
                initial_nll,
                final_nll,
                epoch_losses,
                stopped_early,
            },
        ))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses a checkpoint and checks its masks against the declared order.
    pub fn from_json(text: &str) -> Result<Self> {
        let net: Self = serde_json::from_str(text)?;
        if net.version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported checkpoint version {}",
                net.version
            )));
        }
        let mut fresh = Self::zeros(net.n_inputs, &net.hidden_sizes, Some(net.order.clone()))?;
        if fresh.layers.len() != net.layers.len()
            || fresh
                .layers
                .iter()
                .zip(&net.layers)
                .any(|(a, b)| a.mask != b.mask || b.weights.len() != a.weights.len() || b.biases.len() != a.biases.len())
        {
            return Err(Error::Parse(
                "checkpoint masks or shapes do not match its variable order".into(),
            ));
        }
        fresh.set_parameters(&net.parameters())?;
        fresh.config = net.config;
        fresh.data_digest = net.data_digest;
        Ok(fresh)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn flatten(layers: &[Layer]) -> Vec<f64> {
    layers
        .iter()
        .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
        .collect()
}
