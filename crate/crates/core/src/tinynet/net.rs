use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{invalid, Result};
use crate::linalg::{truncated_svd, Mat};
use crate::nfquant::fake_quantize;
use crate::qconfig::{EmbeddingTables, LayerQuantConfig, ModelQuantConfig, LAYER_EMBED_DIM};

/// Hidden width of the configuration hypernetwork.
pub const HYPER_HIDDEN: usize = 64;
/// Factor applied to the hypernetwork output before it is added to `I`.
pub const HYPER_OUT_SCALE: f64 = 0.1;
/// Default adapter rank.
pub const DEFAULT_RANK: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    /// Gain on the `1/sqrt(fan_in)` weight scale. Tanh needs more than 1 to
    /// keep activations from collapsing over eight layers; the identity keeps
    /// variance at 1.
    pub fn weight_gain(self) -> f64 {
        match self {
            Activation::Tanh => 1.5,
            Activation::Identity => 1.0,
        }
    }
}

/// Architecture of the frozen network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub in_dim: usize,
    pub width: usize,
    pub out_dim: usize,
    pub num_layers: usize,
    pub activation: Activation,
}

impl Default for NetSpec {
    fn default() -> Self {
        Self {
            in_dim: 16,
            width: 32,
            out_dim: 1,
            num_layers: 8,
            activation: Activation::Tanh,
        }
    }
}

impl NetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.width == 0 || self.out_dim == 0 {
            return Err(invalid("network dimensions must be positive"));
        }
        if self.num_layers == 0 {
            return Err(invalid("network needs at least one layer"));
        }
        Ok(())
    }

    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        (0..self.num_layers)
            .map(|i| {
                let d = if i == 0 { self.in_dim } else { self.width };
                let n = if i + 1 == self.num_layers { self.out_dim } else { self.width };
                (d, n)
            })
            .collect()
    }
}


/// Frozen feed-forward network `x ↦ act(…act(x·W_1)…)·W_N` without biases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetNet {
    pub spec: NetSpec,
    pub layers: Vec<Mat<f64>>,
}

impl TargetNet {
    pub fn random(spec: NetSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(d, n)| Mat::randn(d, n, spec.activation.weight_gain() / (d as f64).sqrt(), rng))
            .collect();
        Ok(Self { spec, layers })
    }

    pub fn from_layers(spec: NetSpec, layers: Vec<Mat<f64>>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.layer_shapes();
        if layers.len() != shapes.len() || layers.iter().zip(&shapes).any(|(w, &s)| w.shape() != s) {
            return Err(invalid("layer matrices do not match the network spec"));
        }
        Ok(Self { spec, layers })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.spec.layer_shapes()
    }

    /// Every layer is a plain linear map, so all share one name id.
    pub fn name_id(&self, _layer: usize) -> usize {
        0
    }

    pub fn block_idx(&self, layer: usize) -> usize {
        layer
    }

    fn act(&self, m: Mat<f64>) -> Mat<f64> {
        match self.spec.activation {
            Activation::Tanh => m.map(f64::tanh),
            Activation::Identity => m,
        }
    }

    /// Full-precision forward pass.
    pub fn forward(&self, x: &Mat<f64>) -> Mat<f64> {
        self.forward_with(x, &self.layers.iter().collect::<Vec<_>>())
    }

    /// Forward pass with substitute layer weights.
    pub fn forward_with(&self, x: &Mat<f64>, layers: &[&Mat<f64>]) -> Mat<f64> {
        let mut h = x.clone();
        for (i, w) in layers.iter().enumerate() {
            h = h.matmul(w);
            if i + 1 < layers.len() {
                h = self.act(h);
            }
        }
        h
    }
}

/// Configuration hypernetwork `28 → 64 (tanh) → r²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperNet {
    pub w1: Mat<f64>,
    pub b1: Mat<f64>,
    pub w2: Mat<f64>,
    pub b2: Mat<f64>,
}

impl HyperNet {
    /// Random first layer, zero output layer (so the initial output is 0).
    pub fn new(rank: usize, rng: &mut impl Rng) -> Self {
        Self {
            w1: Mat::randn(LAYER_EMBED_DIM, HYPER_HIDDEN, 1.0 / (LAYER_EMBED_DIM as f64).sqrt(), rng),
            b1: Mat::zeros(1, HYPER_HIDDEN),
            w2: Mat::zeros(HYPER_HIDDEN, rank * rank),
            b2: Mat::zeros(1, rank * rank),
        }
    }

    /// `U` for one embedding, as an `r × r` matrix.
    pub fn adjustment(&self, embedding: &[f64], rank: usize) -> Mat<f64> {
        let e = Mat::from_vec(1, embedding.len(), embedding.to_vec()).expect("row");
        let h = e.matmul(&self.w1).add(&self.b1).map(f64::tanh);
        let u = h.matmul(&self.w2).add(&self.b2).scale(HYPER_OUT_SCALE);
        u.reshape(rank, rank).expect("r² outputs")
    }
}

/// Trainable state: per-layer low-rank pairs and, for the configuration-aware
/// model, the hypernetwork with its embedding tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdapterStack {
    pub rank: usize,
    pub l1: Vec<Mat<f64>>,
    pub l2: Vec<Mat<f64>>,
    pub hyper: Option<HyperNet>,
    pub tables: Option<EmbeddingTables<f64>>,
}

impl AdapterStack {
    /// `L1` random with scale `1/sqrt(d)`, `L2 = 0`; optionally a fresh
    /// hypernetwork and random embedding tables.
    pub fn new(net: &TargetNet, rank: usize, with_hyper: bool, rng: &mut impl Rng) -> Result<Self> {
        if rank == 0 {
            return Err(invalid("adapter rank must be positive"));
        }
        let shapes = net.layer_shapes();
        let l1 = shapes
            .iter()
            .map(|&(d, _)| Mat::randn(d, rank, 1.0 / (d as f64).sqrt(), rng))
            .collect();
        let l2 = shapes.iter().map(|&(_, n)| Mat::zeros(rank, n)).collect();
        let (hyper, tables) = if with_hyper {
            let tables = EmbeddingTables::random(1, net.num_layers(), 1.0, rng);
            (Some(HyperNet::new(rank, rng)), Some(tables))
        } else {
            (None, None)
        };
        Ok(Self {
            rank,
            l1,
            l2,
            hyper,
            tables,
        })
    }

    /// Adapters initialized from the top singular triplets of each layer's
    /// quantization residual, split as `U√S` and `√S Vᵀ`. Layers with
    /// `min(d, n) < rank` use all available triplets and zero-pad the rest.
    pub fn svd_init(net: &TargetNet, cfg: &ModelQuantConfig, rank: usize, cache: &QuantCache) -> Result<Self> {
        if rank == 0 {
            return Err(invalid("adapter rank must be positive"));
        }
        check_config(net, cfg)?;
        let mut l1 = Vec::new();
        let mut l2 = Vec::new();
        for (i, w) in net.layers.iter().enumerate() {
            let (d, n) = w.shape();
            let residual = w.sub(&*cache.get(net, i, &cfg.layers[i])?);
            let k = rank.min(d.min(n));
            let svd = truncated_svd(&residual, k)?;
            let mut a = Mat::zeros(d, rank);
            let mut b = Mat::zeros(rank, n);
            for t in 0..k {
                let s = svd.s[t].sqrt();
                for r in 0..d {
                    a[(r, t)] = svd.u[(r, t)] * s;
                }
                for c in 0..n {
                    b[(t, c)] = svd.v[(c, t)] * s;
                }
            }
            l1.push(a);
            l2.push(b);
        }
        Ok(Self {
            rank,
            l1,
            l2,
            hyper: None,
            tables: None,
        })
    }

    pub fn has_hyper(&self) -> bool {
        self.hyper.is_some() && self.tables.is_some()
    }

    /// Every trainable tensor in a fixed order: `L1`s, `L2`s, then the
    /// hypernetwork (w1, b1, w2, b2) and the seven tables if present.
    pub fn params(&self) -> Vec<&Mat<f64>> {
        let mut out: Vec<&Mat<f64>> = self.l1.iter().chain(&self.l2).collect();
        if let Some(h) = &self.hyper {
            out.extend([&h.w1, &h.b1, &h.w2, &h.b2]);
        }
        if let Some(t) = &self.tables {
            out.extend(t.tables.iter());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Mat<f64>> {
        let mut out: Vec<&mut Mat<f64>> = self.l1.iter_mut().chain(self.l2.iter_mut()).collect();
        if let Some(h) = &mut self.hyper {
            out.extend([&mut h.w1, &mut h.b1, &mut h.w2, &mut h.b2]);
        }
        if let Some(t) = &mut self.tables {
            out.extend(t.tables.iter_mut());
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.all_finite())
    }

    /// Adds Gaussian noise of the given scale to every trainable entry.
    pub fn perturb(&mut self, scale: f64, rng: &mut impl Rng) {
        for p in self.params_mut() {
            let noise = Mat::randn(p.rows(), p.cols(), scale, rng);
            p.add_assign(&noise);
        }
    }

    /// `U_θ` for layer `layer` under `c`, or `None` without a hypernetwork.
    pub fn adjustment(&self, net: &TargetNet, layer: usize, c: &LayerQuantConfig) -> Result<Option<Mat<f64>>> {
        match (&self.hyper, &self.tables) {
            (Some(h), Some(t)) => {
                let e = t.embed_layer(c, net.name_id(layer), net.block_idx(layer))?;
                Ok(Some(h.adjustment(&e, self.rank)))
            }
            _ => Ok(None),
        }
    }
}

type CacheKey = (usize, LayerQuantConfig);

/// Memoized `dequantize(quantize_layer(W_i, c))` keyed by `(layer, c)`.
/// Safe to share between threads.
#[derive(Debug, Default)]
pub struct QuantCache {
    map: RwLock<HashMap<CacheKey, Arc<Mat<f64>>>>,
}

impl QuantCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, net: &TargetNet, layer: usize, c: &LayerQuantConfig) -> Result<Arc<Mat<f64>>> {
        if let Some(w) = self.map.read().expect("cache lock").get(&(layer, *c)) {
            return Ok(w.clone());
        }
        let w = Arc::new(fake_quantize(&net.layers[layer], c)?);
        let mut map = self.map.write().expect("cache lock");
        Ok(map.entry((layer, *c)).or_insert(w).clone())
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Snapshot of every cached entry.
    pub fn entries(&self) -> Vec<(CacheKey, Arc<Mat<f64>>)> {
        self.map
            .read()
            .expect("cache lock")
            .iter()
            .map(|(k, v)| (*k, v.clone()))
            .collect()
    }
}

pub(crate) fn check_config(net: &TargetNet, cfg: &ModelQuantConfig) -> Result<()> {
    if cfg.layer_shapes != net.layer_shapes() {
        return Err(invalid(format!(
            "configuration shapes {:?} do not match the network {:?}",
            cfg.layer_shapes,
            net.layer_shapes()
        )));
    }
    Ok(())
}

/// Tape handles of the trainable tensors, in [`AdapterStack::params`] order.
pub(crate) struct ParamVars {
    pub vars: Vec<Var>,
}

/// Records the adapted forward pass and its MSE on `tape`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn record_loss(
    tape: &mut Tape<f64>,
    net: &TargetNet,
    cfg: &ModelQuantConfig,
    stack: &AdapterStack,
    use_hyper: bool,
    x: &Mat<f64>,
    y: &Mat<f64>,
    cache: &QuantCache,
) -> Result<(Var, ParamVars)> {
    check_config(net, cfg)?;
    if stack.l1.len() != net.num_layers() || stack.l2.len() != net.num_layers() {
        return Err(invalid("adapter stack does not match the network depth"));
    }
    if x.cols() != net.spec.in_dim || y.cols() != net.spec.out_dim || x.rows() != y.rows() {
        return Err(invalid(format!(
            "batch shapes {:?} / {:?} do not fit the network",
            x.shape(),
            y.shape()
        )));
    }
    if use_hyper && !stack.has_hyper() {
        return Err(invalid("hypernetwork requested but the stack has none"));
    }
    let vars: Vec<Var> = stack.params().into_iter().map(|p| tape.leaf(p.clone())).collect();
    let n = net.num_layers();
    let (l1, l2) = (&vars[..n], &vars[n..2 * n]);
    let hyper = if use_hyper {
        let t: Vec<Var> = vars[2 * n + 4..2 * n + 11].to_vec();
        Some((vars[2 * n], vars[2 * n + 1], vars[2 * n + 2], vars[2 * n + 3], t))
    } else {
        None
    };
    let tables = stack.tables.as_ref();
    let eye = tape.leaf(Mat::identity(stack.rank));

    let mut h = tape.leaf(x.clone());
    for i in 0..n {
        let w = tape.leaf((*cache.get(net, i, &cfg.layers[i])?).clone());
        let base = tape.matmul(h, w);
        let xa = tape.matmul(h, l1[i]);
        let xa = match &hyper {
            Some((w1, b1, w2, b2, tv)) => {
                let rows = tables
                    .expect("checked above")
                    .row_indices(&cfg.layers[i], net.name_id(i), net.block_idx(i))?;
                let parts: Vec<Var> = rows.iter().zip(tv).map(|(&r, &t)| tape.row(t, r)).collect();
                let e = tape.concat_cols(&parts);
                let z = tape.matmul(e, *w1);
                let z = tape.add_row(z, *b1);
                let z = tape.tanh(z);
                let u = tape.matmul(z, *w2);
                let u = tape.add_row(u, *b2);
                let u = tape.scale(u, HYPER_OUT_SCALE);
                let u = tape.reshape(u, stack.rank, stack.rank);
                let m = tape.add(eye, u);
                tape.matmul(xa, m)
            }
            None => xa,
        };
        let delta = tape.matmul(xa, l2[i]);
        h = tape.add(base, delta);
        if i + 1 < n && net.spec.activation == Activation::Tanh {
            h = tape.tanh(h);
        }
    }
    let target = tape.leaf(y.clone());
    let loss = tape.mse(h, target);
    Ok((loss, ParamVars { vars }))
}

/// Mean squared error of the adapted, quantized network on `(x, y)`.
/// Each layer computes `h·W̃ + h·L1·(I + U)·L2` (or `h·W̃ + h·L1·L2`
/// without the hypernetwork), which equals `h·(W̃ + L1(I+U)L2)`.
pub fn forward_loss(
    net: &TargetNet,
    cfg: &ModelQuantConfig,
    stack: &AdapterStack,
    use_hyper: bool,
    x: &Mat<f64>,
    y: &Mat<f64>,
    cache: &QuantCache,
) -> Result<f64> {
    let mut tape = Tape::new();
    let (loss, _) = record_loss(&mut tape, net, cfg, stack, use_hyper, x, y, cache)?;
    Ok(tape.scalar(loss))
}

/// Loss together with the gradient of every trainable tensor.
pub fn loss_and_grads(
    net: &TargetNet,
    cfg: &ModelQuantConfig,
    stack: &AdapterStack,
    use_hyper: bool,
    x: &Mat<f64>,
    y: &Mat<f64>,
    cache: &QuantCache,
) -> Result<(f64, Vec<Mat<f64>>)> {
    let mut tape = Tape::new();
    let (loss, pv) = record_loss(&mut tape, net, cfg, stack, use_hyper, x, y, cache)?;
    let grads = tape.backward(loss);
    Ok((tape.scalar(loss), pv.vars.iter().map(|&v| grads.wrt(v)).collect()))
}
