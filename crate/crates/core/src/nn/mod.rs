//! Small dense networks in `f64` with hand-written reverse-mode gradients.
//!
//! Every trainable struct implements [`Parameters`], which exposes its
//! tensors in a fixed order. Gradients are stored in a struct of the same
//! type (see [`Parameters::zeros_like`]), and the optimizer, gradient
//! accumulation and checkpointing all go through that traversal.

pub mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};

use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const LN_EPS: f64 = 1e-5;

/// Named-tensor traversal in a fixed order.
pub trait Parameters {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64]));

    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        z.visit_mut("", &mut |_, _, d| d.fill(0.0));
        z
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, _, d| n += d.len());
        n
    }

    /// All values concatenated in traversal order.
    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit("", &mut |_, _, d| out.extend_from_slice(d));
        out
    }

    /// Overwrites all values from a flat slice produced by [`flatten`](Self::flatten).
    fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(Error::Dimension {
                context: "flat parameter vector",
                expected: n,
                got: flat.len(),
            });
        }
        let mut k = 0;
        self.visit_mut("", &mut |_, _, d| {
            d.copy_from_slice(&flat[k..k + d.len()]);
            k += d.len();
        });
        Ok(())
    }

    /// `self += other`, elementwise.
    fn add_assign(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let flat = other.flatten();
        let mut k = 0;
        self.visit_mut("", &mut |_, _, d| {
            for (x, g) in d.iter_mut().zip(&flat[k..]) {
                *x += g;
            }
            k += d.len();
        });
    }

    fn scale(&mut self, s: f64) {
        self.visit_mut("", &mut |_, _, d| d.iter_mut().for_each(|x| *x *= s));
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit("", &mut |_, _, d| ok &= d.iter().all(|x| x.is_finite()));
        ok
    }
}

/// One plain gradient-descent update: `θ ← θ − η·g`.
pub fn sgd_step<P: Parameters>(params: &mut P, grads: &P, lr: f64) {
    let g = grads.flatten();
    let mut k = 0;
    params.visit_mut("", &mut |_, _, d| {
        for (x, gi) in d.iter_mut().zip(&g[k..]) {
            *x -= lr * gi;
        }
        k += d.len();
    });
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            got,
        })
    }
}

/// Fully connected layer `y = W x + b` with `W` stored row-major (out × in).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let a = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weight = (0..in_dim * out_dim).map(|_| rng.gen_range(-a..=a)).collect();
        Linear {
            in_dim,
            out_dim,
            weight,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        let mut y = self.bias.clone();
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            *yo += row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Linear) -> Vec<f64> {
        let mut dx = vec![0.0; self.in_dim];
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let row = o * self.in_dim;
            let gw = &mut grad.weight[row..row + self.in_dim];
            for (gwi, xi) in gw.iter_mut().zip(x) {
                *gwi += g * xi;
            }
            for (dxi, w) in dx.iter_mut().zip(&self.weight[row..row + self.in_dim]) {
                *dxi += g * w;
            }
        }
        dx
    }
}

impl Parameters for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(&join(prefix, "weight"), &[self.out_dim, self.in_dim], &self.weight);
        f(&join(prefix, "bias"), &[self.out_dim], &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        f(&join(prefix, "weight"), &[self.out_dim, self.in_dim], &mut self.weight);
        f(&join(prefix, "bias"), &[self.out_dim], &mut self.bias);
    }
}

/// Normalized values and inverse standard deviation kept for backward.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormCache {
    pub xhat: Vec<f64>,
    pub inv_std: f64,
}

/// Zero-mean, unit (population) variance normalization followed by an
/// elementwise affine map.
pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
    layer_norm_cached(x, gain, bias).0
}

pub fn layer_norm_cached(x: &[f64], gain: &[f64], bias: &[f64]) -> (Vec<f64>, LayerNormCache) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LN_EPS).sqrt();
    let xhat: Vec<f64> = x.iter().map(|v| (v - mean) * inv_std).collect();
    let y = xhat
        .iter()
        .zip(gain.iter().zip(bias))
        .map(|(h, (g, b))| g * h + b)
        .collect();
    (y, LayerNormCache { xhat, inv_std })
}

/// Returns `dL/dx`, accumulating `dL/dgain` and `dL/dbias`.
pub fn layer_norm_backward(
    cache: &LayerNormCache,
    gain: &[f64],
    dy: &[f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let n = dy.len() as f64;
    let mut dxhat = vec![0.0; dy.len()];
    for i in 0..dy.len() {
        dgain[i] += dy[i] * cache.xhat[i];
        dbias[i] += dy[i];
        dxhat[i] = dy[i] * gain[i];
    }
    let m1 = dxhat.iter().sum::<f64>() / n;
    let m2 = dxhat.iter().zip(&cache.xhat).map(|(d, h)| d * h).sum::<f64>() / n;
    dxhat
        .iter()
        .zip(&cache.xhat)
        .map(|(d, h)| cache.inv_std * (d - m1 - h * m2))
        .collect()
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Backward of softmax: given `p = softmax(z)` and `dL/dp`, returns `dL/dz`.
pub fn softmax_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
    p.iter().zip(dp).map(|(pi, di)| pi * (di - dot)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerNormParams {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerNormParams {
    pub fn new(dim: usize) -> Self {
        LayerNormParams {
            gain: vec![1.0; dim],
            bias: vec![0.0; dim],
        }
    }
}

impl Parameters for LayerNormParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(&join(prefix, "gain"), &[self.gain.len()], &self.gain);
        f(&join(prefix, "bias"), &[self.bias.len()], &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        f(&join(prefix, "gain"), &[self.gain.len()], &mut self.gain);
        f(&join(prefix, "bias"), &[self.bias.len()], &mut self.bias);
    }
}

/// Multi-layer perceptron: each hidden layer is affine → layer norm → ReLU,
/// the output layer is affine only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub norms: Vec<LayerNormParams>,
}

/// Activations recorded by [`Mlp::forward`].
#[derive(Clone, Debug, PartialEq)]
pub struct MlpTape {
    /// Input to every affine layer.
    inputs: Vec<Vec<f64>>,
    norms: Vec<LayerNormCache>,
    /// Post-norm, pre-ReLU activations of the hidden layers.
    pre_relu: Vec<Vec<f64>>,
}

impl Mlp {
    /// `sizes = [in, hidden.., out]`, at least two entries.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let layers = sizes.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect();
        let norms = sizes[1..sizes.len() - 1].iter().map(|&d| LayerNormParams::new(d)).collect();
        Mlp { layers, norms }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let layers = sizes.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect();
        let norms = sizes[1..sizes.len() - 1].iter().map(|&d| LayerNormParams::new(d)).collect();
        Mlp { layers, norms }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, MlpTape)> {
        check_len("mlp input", self.in_dim(), x.len())?;
        let mut tape = MlpTape {
            inputs: Vec::with_capacity(self.layers.len()),
            norms: Vec::with_capacity(self.norms.len()),
            pre_relu: Vec::with_capacity(self.norms.len()),
        };
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h);
            tape.inputs.push(std::mem::take(&mut h));
            if i == last {
                h = z;
            } else {
                let ln = &self.norms[i];
                let (y, cache) = layer_norm_cached(&z, &ln.gain, &ln.bias);
                h = y.iter().map(|&v| relu(v)).collect();
                tape.norms.push(cache);
                tape.pre_relu.push(y);
            }
        }
        Ok((h, tape))
    }

    /// Forward pass without recording a tape.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("mlp input", self.in_dim(), x.len())?;
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h);
            h = if i == last {
                z
            } else {
                let ln = &self.norms[i];
                layer_norm(&z, &ln.gain, &ln.bias).into_iter().map(relu).collect()
            };
        }
        Ok(h)
    }

    /// Accumulates gradients into `grads` (same shape as `self`) and returns
    /// `dL/dx`.
    pub fn backward(&self, tape: &MlpTape, dy: &[f64], grads: &mut Mlp) -> Result<Vec<f64>> {
        check_len("mlp upstream gradient", self.out_dim(), dy.len())?;
        let mut g = dy.to_vec();
        for i in (0..self.layers.len()).rev() {
            if i < self.layers.len() - 1 {
                for (gi, y) in g.iter_mut().zip(&tape.pre_relu[i]) {
                    if *y <= 0.0 {
                        *gi = 0.0;
                    }
                }
                let ln = &self.norms[i];
                let gl = &mut grads.norms[i];
                g = layer_norm_backward(&tape.norms[i], &ln.gain, &g, &mut gl.gain, &mut gl.bias);
            }
            g = self.layers[i].backward(&tape.inputs[i], &g, &mut grads.layers[i]);
        }
        Ok(g)
    }
}

impl Parameters for Mlp {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("layer{i}")), f);
            if let Some(n) = self.norms.get(i) {
                n.visit(&join(prefix, &format!("norm{i}")), f);
            }
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("layer{i}")), f);
            if let Some(n) = self.norms.get_mut(i) {
                n.visit_mut(&join(prefix, &format!("norm{i}")), f);
            }
        }
    }
}

/// Single-head scaled dot-product attention of one query over `keys`.
/// Returns the context vector and the attention weights.
pub fn attention(query: &[f64], keys: &[Vec<f64>], values: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    if keys.is_empty() {
        return Err(Error::Empty("attention keys"));
    }
    check_len("attention values", keys.len(), values.len())?;
    let d = query.len();
    for k in keys {
        check_len("attention key", d, k.len())?;
    }
    let dv = values[0].len();
    for v in values {
        check_len("attention value", dv, v.len())?;
    }
    let scale = 1.0 / (d as f64).sqrt();
    let logits: Vec<f64> = keys
        .iter()
        .map(|k| scale * k.iter().zip(query).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let w = softmax(&logits);
    let mut ctx = vec![0.0; dv];
    for (wi, v) in w.iter().zip(values) {
        for (c, x) in ctx.iter_mut().zip(v) {
            *c += wi * x;
        }
    }
    Ok((ctx, w))
}

/// Gradients of [`attention`] with respect to query, keys and values, given
/// the upstream gradient of the context and (optionally) of the weights.
pub struct AttentionGrads {
    pub dquery: Vec<f64>,
    pub dkeys: Vec<Vec<f64>>,
    pub dvalues: Vec<Vec<f64>>,
}

pub fn attention_backward(
    query: &[f64],
    keys: &[Vec<f64>],
    values: &[Vec<f64>],
    weights: &[f64],
    dctx: &[f64],
    dweights: Option<&[f64]>,
) -> AttentionGrads {
    let scale = 1.0 / (query.len() as f64).sqrt();
    let mut dw: Vec<f64> = values
        .iter()
        .map(|v| v.iter().zip(dctx).map(|(a, b)| a * b).sum())
        .collect();
    if let Some(extra) = dweights {
        for (a, b) in dw.iter_mut().zip(extra) {
            *a += b;
        }
    }
    let dlogits = softmax_backward(weights, &dw);
    let mut dquery = vec![0.0; query.len()];
    let mut dkeys = Vec::with_capacity(keys.len());
    for (k, &dl) in keys.iter().zip(&dlogits) {
        let g = dl * scale;
        for (dq, ki) in dquery.iter_mut().zip(k) {
            *dq += g * ki;
        }
        dkeys.push(query.iter().map(|q| g * q).collect());
    }
    let dvalues = weights
        .iter()
        .map(|&wi| dctx.iter().map(|d| wi * d).collect())
        .collect();
    AttentionGrads {
        dquery,
        dkeys,
        dvalues,
    }
}
