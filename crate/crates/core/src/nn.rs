//! Minimal feed-forward networks with a signed scalar score.
//!
//! A [`Classifier`] is a stack of dense layers with relu hidden activations
//! and an identity output of width one. Gradients with respect to inputs and
//! parameters are computed by hand-written reverse mode. The relu
//! subgradient at zero is taken to be zero.

use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Identity => z,
        }
    }

    #[inline]
    fn slope(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Dense layer `a = act(W x + b)`; `W` is row-major `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
    activation: Activation,
}

impl Layer {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        biases: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::usage("layer dimensions must be positive"));
        }
        if weights.len() != in_dim * out_dim || biases.len() != out_dim {
            return Err(Error::usage(format!(
                "layer {in_dim}->{out_dim} needs {} weights and {out_dim} biases, got {} and {}",
                in_dim * out_dim,
                weights.len(),
                biases.len()
            )));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            biases,
            activation,
        })
    }

    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Result<Self> {
        Self::new(
            in_dim,
            out_dim,
            vec![0.0; in_dim * out_dim],
            vec![0.0; out_dim],
            activation,
        )
    }

    /// Glorot-uniform weights in `[-a, a]`, `a = sqrt(6 / (fan_in + fan_out))`,
    /// with biases drawn from the same range.
    pub fn glorot<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Result<Self> {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit);
        let weights = (0..in_dim * out_dim).map(|_| dist.sample(rng)).collect();
        let biases = (0..out_dim).map(|_| dist.sample(rng)).collect();
        Self::new(in_dim, out_dim, weights, biases, activation)
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    #[inline]
    fn affine(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weights.chunks_exact(self.in_dim).zip(&self.biases) {
            let mut acc = *b;
            for (w, a) in row.iter().zip(input) {
                acc += w * a;
            }
            out.push(acc);
        }
    }

    /// Largest singular value of `W`, estimated by power iteration on `WᵀW`.
    pub fn spectral_norm(&self, iters: usize) -> f64 {
        let mut v = vec![1.0 / (self.in_dim as f64).sqrt(); self.in_dim];
        let mut sigma = 0.0;
        for _ in 0..iters.max(1) {
            let wv: Vec<f64> = self
                .weights
                .chunks_exact(self.in_dim)
                .map(|row| row.iter().zip(&v).map(|(w, x)| w * x).sum())
                .collect();
            let mut wtwv = vec![0.0; self.in_dim];
            for (row, s) in self.weights.chunks_exact(self.in_dim).zip(&wv) {
                for (acc, w) in wtwv.iter_mut().zip(row) {
                    *acc += w * s;
                }
            }
            let norm = wtwv.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            sigma = norm.sqrt();
            v = wtwv.into_iter().map(|x| x / norm).collect();
        }
        sigma
    }
}

/// One training pair; labels are `-1.0` or `+1.0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x: Vec<f64>,
    pub y: f64,
}

impl Example {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        Self { x, y }
    }
}

/// Parameter-shaped gradient buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(c: &Classifier) -> Self {
        Self {
            weights: c.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: c.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    fn scale(&mut self, k: f64) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            v.iter_mut().for_each(|g| *g *= k);
        }
    }

    /// Flattened in [`Classifier::params`] order.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

/// Numerically stable `log(1 + exp(-margin))`.
#[inline]
pub fn logistic_loss(margin: f64) -> f64 {
    let m = -margin;
    if m > 0.0 {
        m + (-m).exp().ln_1p()
    } else {
        m.exp().ln_1p()
    }
}

/// Derivative of `logistic_loss(y·s)` with respect to `s`: `-y·σ(-y·s)`.
#[inline]
fn logistic_dscore(score: f64, y: f64) -> f64 {
    let m = y * score;
    let sig = if m >= 0.0 {
        let e = (-m).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + m.exp())
    };
    -y * sig
}

#[derive(Default)]
struct Scratch {
    // pre[l] and post[l] hold layer l's pre-activation and output.
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    delta: Vec<f64>,
    next: Vec<f64>,
}

/// Feed-forward network with a signed scalar score.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    layers: Vec<Layer>,
}

impl Classifier {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let last = layers
            .last()
            .ok_or_else(|| Error::usage("a classifier needs at least one layer"))?;
        if last.out_dim != 1 || last.activation != Activation::Identity {
            return Err(Error::usage(
                "final layer must have output dimension 1 and identity activation",
            ));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::usage(format!(
                    "incompatible layer dimensions {} -> {}",
                    pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Relu MLP `input_dim -> hidden... -> 1`, Glorot-initialized from `seed`.
    pub fn mlp(input_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, stream::INIT, 0));
        Self::mlp_with_rng(input_dim, hidden, &mut rng)
    }

    pub fn mlp_with_rng<R: Rng + ?Sized>(input_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input_dim;
        for &h in hidden {
            layers.push(Layer::glorot(prev, h, Activation::Relu, rng)?);
            prev = h;
        }
        layers.push(Layer::glorot(prev, 1, Activation::Identity, rng)?);
        Self::new(layers)
    }

    /// All-zero network of the given shape.
    pub fn zeros(input_dim: usize, hidden: &[usize]) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input_dim;
        for &h in hidden {
            layers.push(Layer::zeros(prev, h, Activation::Relu)?);
            prev = h;
        }
        layers.push(Layer::zeros(prev, 1, Activation::Identity)?);
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    /// `[input_dim, hidden..., 1]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.out_dim))
            .collect()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::InputShape {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Signed score `s(x)`.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.eval(x))
    }

    /// Unchecked hot-path forward pass; `x.len()` must equal the input dimension.
    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.input_dim());
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.affine(&cur, &mut next);
            for z in next.iter_mut() {
                *z = layer.activation.apply(*z);
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur[0]
    }

    fn trace(&self, x: &[f64], s: &mut Scratch) -> f64 {
        s.pre.resize_with(self.layers.len(), Vec::new);
        s.post.resize_with(self.layers.len(), Vec::new);
        for (l, layer) in self.layers.iter().enumerate() {
            let (before, after) = s.post.split_at_mut(l);
            let input: &[f64] = if l == 0 { x } else { &before[l - 1] };
            layer.affine(input, &mut s.pre[l]);
            let out = &mut after[0];
            out.clear();
            out.extend(s.pre[l].iter().map(|&z| layer.activation.apply(z)));
        }
        s.post[self.layers.len() - 1][0]
    }

    /// Backpropagates `d loss / d score = seed` through a traced pass.
    /// Accumulates parameter gradients into `grads` when given and leaves
    /// the input gradient in `s.delta`.
    fn backward(&self, x: &[f64], seed: f64, s: &mut Scratch, mut grads: Option<&mut Gradients>) {
        s.delta.clear();
        s.delta.push(seed);
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            for (d, &z) in s.delta.iter_mut().zip(&s.pre[l]) {
                *d *= layer.activation.slope(z);
            }
            let input: &[f64] = if l == 0 { x } else { &s.post[l - 1] };
            if let Some(g) = grads.as_deref_mut() {
                let gw = &mut g.weights[l];
                for (row, &d) in gw.chunks_exact_mut(layer.in_dim).zip(&s.delta) {
                    if d != 0.0 {
                        for (gw, a) in row.iter_mut().zip(input) {
                            *gw += d * a;
                        }
                    }
                }
                for (gb, d) in g.biases[l].iter_mut().zip(&s.delta) {
                    *gb += d;
                }
            }
            s.next.clear();
            s.next.resize(layer.in_dim, 0.0);
            for (row, &d) in layer.weights.chunks_exact(layer.in_dim).zip(&s.delta) {
                if d != 0.0 {
                    for (acc, w) in s.next.iter_mut().zip(row) {
                        *acc += w * d;
                    }
                }
            }
            std::mem::swap(&mut s.delta, &mut s.next);
        }
    }

    /// `∇_x s(x)`.
    pub fn input_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.grad_unchecked(x))
    }

    fn grad_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut s = Scratch::default();
        self.trace(x, &mut s);
        self.backward(x, 1.0, &mut s, None);
        s.delta
    }

    /// Gradient of the mean logistic loss over `batch` with respect to all
    /// parameters, together with that mean loss.
    pub fn param_gradient(&self, batch: &[Example]) -> Result<(Gradients, f64)> {
        if batch.is_empty() {
            return Err(Error::usage("parameter gradient of an empty batch"));
        }
        for ex in batch {
            self.check_input(&ex.x)?;
            if ex.y != 1.0 && ex.y != -1.0 {
                return Err(Error::usage(format!("label {} is not -1 or +1", ex.y)));
            }
        }
        let mut grads = Gradients::zeros_like(self);
        let mut scratch = Scratch::default();
        let mut loss = 0.0;
        for ex in batch {
            let score = self.trace(&ex.x, &mut scratch);
            loss += logistic_loss(ex.y * score);
            let seed = logistic_dscore(score, ex.y);
            self.backward(&ex.x, seed, &mut scratch, Some(&mut grads));
        }
        let inv = 1.0 / batch.len() as f64;
        grads.scale(inv);
        Ok((grads, loss * inv))
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::usage(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let mut rest = params;
        for l in &mut self.layers {
            let (w, r) = rest.split_at(l.weights.len());
            let (b, r) = r.split_at(l.biases.len());
            l.weights.copy_from_slice(w);
            l.biases.copy_from_slice(b);
            rest = r;
        }
        Ok(())
    }

    /// `θ ← θ - lr·(g + weight_decay·θ)`.
    pub fn apply_sgd(&mut self, grads: &Gradients, lr: f64, weight_decay: f64) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (p, g) in layer.weights.iter_mut().zip(&grads.weights[l]) {
                *p -= lr * (g + weight_decay * *p);
            }
            for (p, g) in layer.biases.iter_mut().zip(&grads.biases[l]) {
                *p -= lr * (g + weight_decay * *p);
            }
        }
    }

    /// Upper bound on the Lipschitz constant of the score: the product of
    /// per-layer spectral norms (relu is 1-Lipschitz).
    pub fn lipschitz_bound(&self, iters: usize) -> f64 {
        self.layers.iter().map(|l| l.spectral_norm(iters)).product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    #[serde(default)]
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config("weight decay must be finite and non-negative".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Plain SGD on the mean logistic loss. Returns the per-epoch mean loss.
pub fn train_epochs(c: &mut Classifier, data: &[Example], cfg: &SgdConfig) -> Result<Vec<f64>> {
    train_epochs_with(c, data, cfg, |_, _, _| Ok(None))
}

/// SGD loop with an input hook.
///
/// Before each minibatch step `perturb(model, epoch, batch_indices)` may
/// return replacement inputs (one per index, labels unchanged); `None`
/// trains on the clean inputs. Shuffling uses its own seeded stream, so a
/// hook that never changes inputs reproduces [`train_epochs`] exactly.
pub fn train_epochs_with<F>(c: &mut Classifier, data: &[Example], cfg: &SgdConfig, mut perturb: F) -> Result<Vec<f64>>
where
    F: FnMut(&Classifier, usize, &[usize]) -> Result<Option<Vec<Vec<f64>>>>,
{
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::usage("training set is empty"));
    }
    for ex in data {
        c.check_input(&ex.x)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, stream::SHUFFLE, 0));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            batch.clear();
            match perturb(c, epoch, idx)? {
                Some(inputs) => {
                    if inputs.len() != idx.len() {
                        return Err(Error::usage("perturbation hook returned wrong batch size"));
                    }
                    for (x, &i) in inputs.into_iter().zip(idx) {
                        batch.push(Example::new(x, data[i].y));
                    }
                }
                None => batch.extend(idx.iter().map(|&i| data[i].clone())),
            }
            let (grads, loss) = c.param_gradient(&batch)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            epoch_loss += loss * idx.len() as f64;
            c.apply_sgd(&grads, cfg.learning_rate, cfg.weight_decay);
        }
        let mean = epoch_loss / data.len() as f64;
        if !mean.is_finite() || c.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence { epoch });
        }
        trace.push(mean);
    }
    Ok(trace)
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    dims: Vec<usize>,
    activations: Vec<Activation>,
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
}

impl Classifier {
    /// Checkpoint JSON: `{"dims","activations","weights","biases"}` with
    /// row-major weights per layer.
    pub fn to_json(&self) -> Result<String> {
        let file = CheckpointFile {
            dims: self.dims(),
            activations: self.layers.iter().map(|l| l.activation).collect(),
            weights: self
                .layers
                .iter()
                .map(|l| l.weights.chunks_exact(l.in_dim).map(<[f64]>::to_vec).collect())
                .collect(),
            biases: self.layers.iter().map(|l| l.biases.clone()).collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        let n = file.activations.len();
        if file.dims.len() != n + 1 || file.weights.len() != n || file.biases.len() != n {
            return Err(Error::Checkpoint(
                "dims, activations, weights and biases disagree on the layer count".into(),
            ));
        }
        let mut layers = Vec::with_capacity(n);
        for l in 0..n {
            let (fan_in, fan_out) = (file.dims[l], file.dims[l + 1]);
            let rows = &file.weights[l];
            if rows.len() != fan_out || rows.iter().any(|r| r.len() != fan_in) {
                return Err(Error::Checkpoint(format!(
                    "layer {l} weights are not {fan_out}x{fan_in}"
                )));
            }
            let weights = rows.concat();
            layers.push(
                Layer::new(fan_in, fan_out, weights, file.biases[l].clone(), file.activations[l])
                    .map_err(|e| Error::Checkpoint(e.to_string()))?,
            );
        }
        Classifier::new(layers).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}
