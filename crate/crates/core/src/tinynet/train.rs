use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{Dataset, BATCH_SIZE};
use super::net::{loss_and_grads, AdapterStack, QuantCache, TargetNet};
use crate::error::{invalid, Error, Result};
use crate::linalg::Mat;
use crate::qconfig::ModelQuantConfig;

/// Default Adam learning rate.
pub const DEFAULT_LR: f64 = 1e-4;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Independent random streams derived from one seed, so that changing how
/// many configurations are sampled never shifts the batch sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 0,
    Batches = 1,
    Configs = 2,
    Unseen = 3,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            steps: 200,
            lr: DEFAULT_LR,
            batch_size: BATCH_SIZE,
            seed: 0,
        }
    }
}

/// Adam without weight decay.
#[derive(Clone, Debug)]
pub struct Adam {
    t: u64,
    m: Vec<Mat<f64>>,
    v: Vec<Mat<f64>>,
}

impl Adam {
    pub fn new(stack: &AdapterStack) -> Self {
        let zeros: Vec<Mat<f64>> = stack.params().iter().map(|p| Mat::zeros(p.rows(), p.cols())).collect();
        Self {
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, stack: &mut AdapterStack, grads: &[Mat<f64>], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for (k, p) in stack.params_mut().into_iter().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], &grads[k]);
            let ps = p.as_mut_slice();
            for (i, &gi) in g.as_slice().iter().enumerate() {
                let mi = ADAM_BETA1 * m.as_slice()[i] + (1.0 - ADAM_BETA1) * gi;
                let vi = ADAM_BETA2 * v.as_slice()[i] + (1.0 - ADAM_BETA2) * gi * gi;
                m.as_mut_slice()[i] = mi;
                v.as_mut_slice()[i] = vi;
                ps[i] -= lr * (mi / c1) / ((vi / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Minibatch trainer. Each step samples one configuration uniformly from
/// the given set and one batch from the training split, then takes an Adam
/// step on every trainable tensor.
pub struct Trainer<'a> {
    net: &'a TargetNet,
    data: &'a Dataset,
    cache: &'a QuantCache,
    pub stack: AdapterStack,
    adam: Adam,
    use_hyper: bool,
    batch_size: usize,
    batch_rng: ChaCha8Rng,
    config_rng: ChaCha8Rng,
    pub step: u64,
}

impl<'a> Trainer<'a> {
    pub fn new(
        net: &'a TargetNet,
        data: &'a Dataset,
        cache: &'a QuantCache,
        stack: AdapterStack,
        use_hyper: bool,
        seed: u64,
        batch_size: usize,
    ) -> Result<Self> {
        if batch_size == 0 || batch_size > data.train.len() {
            return Err(invalid(format!(
                "batch size {batch_size} must be in 1..={}",
                data.train.len()
            )));
        }
        if use_hyper && !stack.has_hyper() {
            return Err(invalid("hypernetwork training needs a stack with a hypernetwork"));
        }
        Ok(Self {
            net,
            data,
            cache,
            adam: Adam::new(&stack),
            stack,
            use_hyper,
            batch_size,
            batch_rng: stream_rng(seed, Stream::Batches),
            config_rng: stream_rng(seed, Stream::Configs),
            step: 0,
        })
    }

    /// Runs `steps` updates; returns the minibatch loss before each update.
    pub fn train(&mut self, configs: &[ModelQuantConfig], steps: usize, lr: f64) -> Result<Vec<f64>> {
        if configs.is_empty() {
            return Err(invalid("configuration set is empty"));
        }
        if !lr.is_finite() || lr < 0.0 {
            return Err(invalid(format!("learning rate {lr} must be finite and non-negative")));
        }
        let mut losses = Vec::with_capacity(steps);
        for _ in 0..steps {
            let cfg = &configs[self.config_rng.random_range(0..configs.len())];
            let idx: Vec<usize> = index::sample(&mut self.batch_rng, self.data.train.len(), self.batch_size)
                .into_iter()
                .map(|k| self.data.train[k])
                .collect();
            let (x, y) = self.data.batch(&idx);
            let (loss, grads) = loss_and_grads(self.net, cfg, &self.stack, self.use_hyper, &x, &y, self.cache)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.all_finite()) {
                return Err(Error::Diverged {
                    step: self.step as usize,
                    loss,
                    last_good: Box::new(self.stack.clone()),
                });
            }
            let before = self.stack.clone();
            self.adam.step(&mut self.stack, &grads, lr);
            if !self.stack.all_finite() {
                return Err(Error::Diverged {
                    step: self.step as usize,
                    loss,
                    last_good: Box::new(before),
                });
            }
            losses.push(loss);
            self.step += 1;
        }
        Ok(losses)
    }

    pub fn into_stack(self) -> AdapterStack {
        self.stack
    }
}

/// Trained adapters and the per-step minibatch losses.
#[derive(Clone, Debug)]
pub struct Trained {
    pub stack: AdapterStack,
    pub losses: Vec<f64>,
}

fn run(
    net: &TargetNet,
    data: &Dataset,
    configs: &[ModelQuantConfig],
    stack: AdapterStack,
    use_hyper: bool,
    opts: &TrainOptions,
    cache: &QuantCache,
) -> Result<Trained> {
    let mut trainer = Trainer::new(net, data, cache, stack, use_hyper, opts.seed, opts.batch_size)?;
    let losses = trainer.train(configs, opts.steps, opts.lr)?;
    Ok(Trained {
        stack: trainer.into_stack(),
        losses,
    })
}

/// Fresh adapters drawn from the seed's initialization stream.
pub fn init_stack(net: &TargetNet, rank: usize, with_hyper: bool, seed: u64) -> Result<AdapterStack> {
    AdapterStack::new(net, rank, with_hyper, &mut stream_rng(seed, Stream::Init))
}

/// Configuration-aware training of `L1`, `L2`, the hypernetwork and the
/// embedding tables over `configs`.
pub fn train_theta(
    net: &TargetNet,
    data: &Dataset,
    configs: &[ModelQuantConfig],
    rank: usize,
    opts: &TrainOptions,
    cache: &QuantCache,
) -> Result<Trained> {
    let stack = init_stack(net, rank, true, opts.seed)?;
    run(net, data, configs, stack, true, opts, cache)
}

/// One plain adapter for a single configuration, zero- or SVD-initialized.
pub fn train_lora_per_config(
    net: &TargetNet,
    data: &Dataset,
    cfg: &ModelQuantConfig,
    rank: usize,
    svd_init: bool,
    opts: &TrainOptions,
    cache: &QuantCache,
) -> Result<Trained> {
    let stack = if svd_init {
        AdapterStack::svd_init(net, cfg, rank, cache)?
    } else {
        init_stack(net, rank, false, opts.seed)?
    };
    run(net, data, std::slice::from_ref(cfg), stack, false, opts, cache)
}

/// One plain adapter shared by every configuration in `configs`.
pub fn train_shared(
    net: &TargetNet,
    data: &Dataset,
    configs: &[ModelQuantConfig],
    rank: usize,
    opts: &TrainOptions,
    cache: &QuantCache,
) -> Result<Trained> {
    let stack = init_stack(net, rank, false, opts.seed)?;
    run(net, data, configs, stack, false, opts, cache)
}

/// Result of comparing analytic and finite-difference gradients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub coords: usize,
}

/// Finite-difference step used by [`grad_check`].
pub const GRAD_CHECK_STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so gradients that are zero up
/// to rounding are compared absolutely.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Compares analytic gradients against central differences on up to
/// `max_coords` coordinates, spread evenly over the tensors in `tensors`
/// (indices into [`AdapterStack::params`]; empty means all).
#[allow(clippy::too_many_arguments)]
pub fn grad_check(
    net: &TargetNet,
    cfg: &ModelQuantConfig,
    stack: &AdapterStack,
    use_hyper: bool,
    x: &Mat<f64>,
    y: &Mat<f64>,
    tensors: &[usize],
    max_coords: usize,
    seed: u64,
    cache: &QuantCache,
) -> Result<GradCheck> {
    let (_, grads) = loss_and_grads(net, cfg, stack, use_hyper, x, y, cache)?;
    let all: Vec<usize> = if tensors.is_empty() {
        (0..grads.len()).collect()
    } else {
        tensors.to_vec()
    };
    if let Some(&bad) = all.iter().find(|&&t| t >= grads.len()) {
        return Err(invalid(format!("tensor index {bad} out of range")));
    }
    let per = max_coords.div_ceil(all.len().max(1)).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::new();
    for &t in &all {
        let len = grads[t].len();
        for i in index::sample(&mut rng, len, per.min(len)) {
            coords.push((t, i));
        }
    }
    coords.truncate(max_coords);
    let mut worst: f64 = 0.0;
    for &(t, i) in &coords {
        let eval = |delta: f64| -> Result<f64> {
            let mut s = stack.clone();
            s.params_mut()[t].as_mut_slice()[i] += delta;
            super::net::forward_loss(net, cfg, &s, use_hyper, x, y, cache)
        };
        let fd = (eval(GRAD_CHECK_STEP)? - eval(-GRAD_CHECK_STEP)?) / (2.0 * GRAD_CHECK_STEP);
        let an = grads[t].as_slice()[i];
        let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(GRAD_CHECK_FLOOR);
        worst = worst.max(rel);
    }
    Ok(GradCheck {
        max_rel_err: worst,
        coords: coords.len(),
    })
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized adapters with the seed and step count that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub seed: u64,
    pub step: u64,
    pub stack: AdapterStack,
}

impl Checkpoint {
    pub fn new(seed: u64, step: u64, stack: AdapterStack) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            seed,
            step,
            stack,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        if c.version != CHECKPOINT_VERSION {
            return Err(invalid(format!("unsupported checkpoint version {}", c.version)));
        }
        Ok(c)
    }
}
