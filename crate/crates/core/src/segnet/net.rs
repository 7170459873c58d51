//! U-Net forward and backward passes.
//!
//! Layer order (the order of parameters in [`ModelWeights`]):
//!
//! 1. `enc{l}.a`, `enc{l}.b` for l = 0..depth: 3×3 convs, each + ReLU,
//!    followed by a 2×2 max-pool (the pre-pool activation is the skip).
//! 2. `bottleneck.a`, `bottleneck.b`: 3×3 convs + ReLU.
//! 3. `dec{l}.up`, `dec{l}.a`, `dec{l}.b` for l = depth-1 down to 0:
//!    nearest 2× upsample, 3×3 conv + ReLU, concatenate `[skip, up]`,
//!    two 3×3 convs + ReLU.
//! 4. `head`: 1×1 conv to a single channel, logistic sigmoid.
//!
//! Level l has `base_channels · 2^l` channels; every kernel is stored
//! `cout × cin × k × k` followed by its `cout` biases.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    concat, conv_backward, conv_forward, maxpool_backward, maxpool_forward, relu_backward,
    relu_inplace, sigmoid, split_channels, upsample_backward, upsample_forward, ConvShape, Tensor,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input_size: usize,
    pub depth: usize,
    pub base_channels: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            input_size: 256,
            depth: 3,
            base_channels: 8,
        }
    }
}

impl NetConfig {
    pub fn desk() -> Self {
        NetConfig {
            input_size: 64,
            ..NetConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 || self.input_size == 0 {
            return Err(Error::invalid("net depth, channels and input size must be positive"));
        }
        if self.input_size % (1 << self.depth) != 0 {
            return Err(Error::invalid(format!(
                "input size {} is not divisible by 2^{}",
                self.input_size, self.depth
            )));
        }
        Ok(())
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Named layer shapes in parameter order.
    pub fn layers(&self) -> Vec<(String, ConvShape)> {
        let conv = |cin, cout| ConvShape { cin, cout, k: 3 };
        let mut out = Vec::new();
        let mut cin = 1;
        for l in 0..self.depth {
            let c = self.channels(l);
            out.push((format!("enc{l}.a"), conv(cin, c)));
            out.push((format!("enc{l}.b"), conv(c, c)));
            cin = c;
        }
        let cb = self.channels(self.depth);
        out.push(("bottleneck.a".into(), conv(cin, cb)));
        out.push(("bottleneck.b".into(), conv(cb, cb)));
        for l in (0..self.depth).rev() {
            let c = self.channels(l);
            out.push((format!("dec{l}.up"), conv(self.channels(l + 1), c)));
            out.push((format!("dec{l}.a"), conv(2 * c, c)));
            out.push((format!("dec{l}.b"), conv(c, c)));
        }
        out.push((
            "head".into(),
            ConvShape {
                cin: self.channels(0),
                cout: 1,
                k: 1,
            },
        ));
        out
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(_, s)| s.param_len()).sum()
    }
}

/// Flat parameter vector plus its layer table.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    config: NetConfig,
    shapes: Vec<ConvShape>,
    offsets: Vec<usize>,
    params: Vec<f64>,
}

impl ModelWeights {
    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let shapes: Vec<ConvShape> = config.layers().into_iter().map(|(_, s)| s).collect();
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut total = 0;
        for s in &shapes {
            offsets.push(total);
            total += s.param_len();
        }
        Ok(ModelWeights {
            config,
            shapes,
            offsets,
            params: vec![0.0; total],
        })
    }

    /// He-uniform kernels (bound √(6 / fan_in)), zero biases.
    pub fn he_uniform(config: NetConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut w = ModelWeights::zeros(config)?;
        for (i, s) in w.shapes.clone().iter().enumerate() {
            let bound = (6.0 / (s.cin * s.k * s.k) as f64).sqrt();
            let off = w.offsets[i];
            for v in &mut w.params[off..off + s.kernel_len()] {
                *v = rng.gen_range(-bound..bound);
            }
        }
        Ok(w)
    }

    pub fn from_params(config: NetConfig, params: Vec<f64>) -> Result<Self> {
        let mut w = ModelWeights::zeros(config)?;
        if params.len() != w.params.len() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                w.params.len(),
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("weights".into()));
        }
        w.params = params;
        Ok(w)
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn shapes(&self) -> &[ConvShape] {
        &self.shapes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }

    fn layer(&self, i: usize) -> (ConvShape, &[f64]) {
        let s = self.shapes[i];
        (s, &self.params[self.offsets[i]..self.offsets[i] + s.param_len()])
    }

    fn layer_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i] + self.shapes[i].param_len()
    }
}

/// Intermediate values kept for backpropagation.
pub struct ForwardCache {
    // im2col buffer and ReLU output per conv layer, head excluded.
    cols: Vec<Vec<f64>>,
    acts: Vec<Tensor>,
    pool_args: Vec<Vec<usize>>,
    skip_shapes: Vec<(usize, usize, usize)>,
    head_col: Vec<f64>,
    pub output: Tensor,
}

fn conv_relu(w: &ModelWeights, idx: usize, x: &Tensor, cols: &mut Vec<Vec<f64>>, acts: &mut Vec<Tensor>) -> Tensor {
    let (shape, p) = w.layer(idx);
    let (mut y, col) = conv_forward(shape, p, x);
    relu_inplace(&mut y);
    cols.push(col);
    acts.push(y.clone());
    y
}

/// Sigmoid probability map for one `1 × n × n` input.
pub fn forward(w: &ModelWeights, input: &Tensor) -> Result<ForwardCache> {
    let cfg = w.config;
    if input.c != 1 || input.h != cfg.input_size || input.w != cfg.input_size {
        return Err(Error::invalid(format!(
            "input is {}x{}x{}, network expects 1x{}x{}",
            input.c, input.h, input.w, cfg.input_size, cfg.input_size
        )));
    }
    let mut cols = Vec::new();
    let mut acts = Vec::new();
    let mut pool_args = Vec::new();
    let mut skips = Vec::new();
    let mut skip_shapes = Vec::new();
    let mut idx = 0;
    let mut x = input.clone();
    for _ in 0..cfg.depth {
        x = conv_relu(w, idx, &x, &mut cols, &mut acts);
        x = conv_relu(w, idx + 1, &x, &mut cols, &mut acts);
        idx += 2;
        skip_shapes.push((x.c, x.h, x.w));
        let (pooled, arg) = maxpool_forward(&x);
        skips.push(x);
        pool_args.push(arg);
        x = pooled;
    }
    x = conv_relu(w, idx, &x, &mut cols, &mut acts);
    x = conv_relu(w, idx + 1, &x, &mut cols, &mut acts);
    idx += 2;
    for _ in 0..cfg.depth {
        let up = upsample_forward(&x);
        let up = conv_relu(w, idx, &up, &mut cols, &mut acts);
        let skip = skips.pop().expect("one skip per level");
        let merged = concat(&skip, &up);
        x = conv_relu(w, idx + 1, &merged, &mut cols, &mut acts);
        x = conv_relu(w, idx + 2, &x, &mut cols, &mut acts);
        idx += 3;
    }
    let (shape, p) = w.layer(idx);
    let (mut out, head_col) = conv_forward(shape, p, &x);
    for v in &mut out.data {
        *v = sigmoid(*v);
    }
    if out.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("forward activations".into()));
    }
    Ok(ForwardCache {
        cols,
        acts,
        pool_args,
        skip_shapes,
        head_col,
        output: out,
    })
}

/// Gradient of a loss with respect to every parameter, given the gradient
/// with respect to the sigmoid output. Accumulates into `grad`.
pub fn backward(w: &ModelWeights, cache: &ForwardCache, grad_output: &Tensor, grad: &mut [f64]) -> Result<()> {
    let cfg = w.config;
    let n_layers = w.shapes.len();
    // Through the sigmoid.
    let mut g = grad_output.clone();
    for (gv, &y) in g.data.iter_mut().zip(&cache.output.data) {
        *gv *= y * (1.0 - y);
    }
    let head = n_layers - 1;
    let (shape, p) = w.layer(head);
    let range = w.layer_range(head);
    let mut g = conv_backward(shape, p, &cache.head_col, &g, &mut grad[range], true).expect("input grad");

    let mut conv_i = cache.cols.len();
    let mut layer_i = head;
    // Steps back through one conv + ReLU.
    let mut conv_relu_back = |g: &mut Tensor, grad: &mut [f64]| -> Tensor {
        conv_i -= 1;
        layer_i -= 1;
        relu_backward(&cache.acts[conv_i], g);
        let (shape, p) = w.layer(layer_i);
        let range = w.layer_range(layer_i);
        conv_backward(shape, p, &cache.cols[conv_i], g, &mut grad[range], layer_i > 0).unwrap_or_else(|| Tensor::zeros(0, 0, 0))
    };

    let mut skip_grads = Vec::with_capacity(cfg.depth);
    for level in 0..cfg.depth {
        g = conv_relu_back(&mut g, grad); // dec.b
        let merged = conv_relu_back(&mut g, grad); // dec.a
        let skip_c = cache.skip_shapes[level].0;
        let (g_skip, mut g_up) = split_channels(&merged, skip_c);
        skip_grads.push(g_skip);
        let g_upsampled = conv_relu_back(&mut g_up, grad); // dec.up
        g = upsample_backward(&g_upsampled);
    }
    g = conv_relu_back(&mut g, grad); // bottleneck.b
    g = conv_relu_back(&mut g, grad); // bottleneck.a
    for level in (0..cfg.depth).rev() {
        let (c, h, wd) = cache.skip_shapes[level];
        let mut g_pre = maxpool_backward(&cache.pool_args[level], &g, c, h, wd);
        let g_skip = &skip_grads[level];
        for (a, b) in g_pre.data.iter_mut().zip(&g_skip.data) {
            *a += b;
        }
        g = conv_relu_back(&mut g_pre, grad); // enc.b
        g = conv_relu_back(&mut g, grad); // enc.a
    }
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradients".into()));
    }
    Ok(())
}

/// Mean over all pixels of `(pred - target)²`.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::invalid(format!(
            "loss shapes differ: {} vs {}",
            pred.len(),
            target.len()
        )));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

/// Loss and parameter gradient of the batch-mean MSE.
pub fn loss_and_gradient(w: &ModelWeights, inputs: &[&Tensor], targets: &[&[f64]]) -> Result<(f64, Vec<f64>)> {
    if inputs.len() != targets.len() || inputs.is_empty() {
        return Err(Error::invalid("batch inputs and targets differ in length"));
    }
    let pixels = inputs[0].plane();
    let scale = 2.0 / (pixels * inputs.len()) as f64;
    let mut grad = vec![0.0; w.len()];
    let mut loss = 0.0;
    for (x, t) in inputs.iter().zip(targets) {
        let cache = forward(w, x)?;
        if t.len() != cache.output.data.len() {
            return Err(Error::invalid("target size does not match output"));
        }
        loss += mse_loss(&cache.output.data, t)?;
        let gout = Tensor::from_vec(
            1,
            x.h,
            x.w,
            cache.output.data.iter().zip(t.iter()).map(|(p, t)| scale * (p - t)).collect(),
        );
        backward(w, &cache, &gout, &mut grad)?;
    }
    Ok((loss / inputs.len() as f64, grad))
}
