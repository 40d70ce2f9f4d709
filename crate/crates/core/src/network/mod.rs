//! Feedforward chain with exact reverse-mode gradients.
//!
//! Layers are numbered `1..=n`; layer `l` maps width `d_{l-1}` to `d_l`, and
//! "layer 0" denotes the raw input. The representation at layer `l` is the
//! post-activation output of layer `l`. A `Softmax` layer is only allowed
//! last and emits logits; the softmax itself lives in [`loss_ce`].

mod counter;
mod gradcheck;

pub use counter::{segment_macs, OpCounter, Phase, PhaseMacs};
pub use gradcheck::{grad_check, grad_check_with, GradCheckReport};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
    Softmax,
}

impl Activation {
    fn apply(self, pre: &Matrix) -> Matrix {
        let mut out = pre.clone();
        match self {
            Activation::Relu => out.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Tanh => out.as_mut_slice().iter_mut().for_each(|v| *v = libm::tanh(*v)),
            Activation::Identity | Activation::Softmax => {}
        }
        out
    }

    /// Multiplies `grad` in place by the activation derivative. ReLU uses a
    /// zero subgradient at 0.
    fn backprop(self, pre: &Matrix, post: &Matrix, grad: &mut Matrix) {
        match self {
            Activation::Relu => {
                for (g, p) in grad.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                    if *p <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            Activation::Tanh => {
                for (g, y) in grad.as_mut_slice().iter_mut().zip(post.as_slice()) {
                    *g *= 1.0 - y * y;
                }
            }
            Activation::Identity | Activation::Softmax => {}
        }
    }
}

/// Layer widths `d_0..=d_n` and one activation per layer.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Architecture {
    pub dims: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl Architecture {
    pub fn new(dims: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        let a = Self { dims, activations };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 {
            return Err(Error::InvalidArchitecture(format!(
                "need at least input and output widths, got {:?}",
                self.dims
            )));
        }
        if self.activations.len() != self.dims.len() - 1 {
            return Err(Error::InvalidArchitecture(format!(
                "{} layers but {} activations",
                self.dims.len() - 1,
                self.activations.len()
            )));
        }
        if let Some(i) = self.dims.iter().position(|&d| d == 0) {
            return Err(Error::InvalidArchitecture(format!("width d_{i} is zero")));
        }
        let last = self.activations.len() - 1;
        if let Some(i) = self.activations[..last]
            .iter()
            .position(|a| *a == Activation::Softmax)
        {
            return Err(Error::InvalidArchitecture(format!(
                "softmax at layer {} is not the final layer",
                i + 1
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `d_in x d_out`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn d_in(&self) -> usize {
        self.weights.rows()
    }

    pub fn d_out(&self) -> usize {
        self.weights.cols()
    }

    fn pre_activation(&self, input: &Matrix) -> Result<Matrix> {
        let mut z = input.matmul(&self.weights)?;
        for r in 0..z.rows() {
            for (v, b) in z.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub layers: Vec<Layer>,
    /// Layers with index `< frozen_below` receive no parameter updates.
    pub frozen_below: Option<usize>,
    pub seed: u64,
}

/// Uniform `[-1/√d_in, 1/√d_in]` weights, zero biases, deterministic per seed.
pub fn init_model(arch: &Architecture, seed: u64) -> Result<Model> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = arch
        .dims
        .windows(2)
        .zip(&arch.activations)
        .map(|(w, &activation)| {
            let (d_in, d_out) = (w[0], w[1]);
            let bound = 1.0 / libm::sqrt(d_in as f64);
            let data = (0..d_in * d_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            Layer {
                weights: Matrix::new(d_in, d_out, data).expect("finite init"),
                bias: vec![0.0; d_out],
                activation,
            }
        })
        .collect();
    Ok(Model {
        layers,
        frozen_below: None,
        seed,
    })
}

impl Model {
    /// Assembles a model from explicit layers, checking the chain.
    pub fn from_layers(layers: Vec<Layer>, frozen_below: Option<usize>, seed: u64) -> Result<Self> {
        let m = Self {
            layers,
            frozen_below: None,
            seed,
        };
        m.architecture().validate()?;
        for (i, l) in m.layers.iter().enumerate() {
            if l.bias.len() != l.d_out() {
                return Err(Error::InvalidArchitecture(format!(
                    "layer {} bias has {} entries for width {}",
                    i + 1,
                    l.bias.len(),
                    l.d_out()
                )));
            }
            if i > 0 && m.layers[i - 1].d_out() != l.d_in() {
                return Err(Error::InvalidArchitecture(format!(
                    "layer {} expects width {} but layer {} produces {}",
                    i + 1,
                    l.d_in(),
                    i,
                    m.layers[i - 1].d_out()
                )));
            }
        }
        let mut m = m;
        m.set_frozen_below(frozen_below)?;
        Ok(m)
    }

    /// Number of layers `n`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = Vec::with_capacity(self.layers.len() + 1);
        d.push(self.layers[0].d_in());
        d.extend(self.layers.iter().map(Layer::d_out));
        d
    }

    /// `d_l`; `l = 0` is the input width.
    pub fn width(&self, l: usize) -> usize {
        if l == 0 {
            self.layers[0].d_in()
        } else {
            self.layers[l - 1].d_out()
        }
    }

    pub fn num_classes(&self) -> usize {
        self.width(self.depth())
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            dims: self.dims(),
            activations: self.layers.iter().map(|l| l.activation).collect(),
        }
    }

    /// Layer `l`, 1-based.
    pub fn layer(&self, l: usize) -> &Layer {
        &self.layers[l - 1]
    }

    pub fn set_frozen_below(&mut self, frozen_below: Option<usize>) -> Result<()> {
        if let Some(f) = frozen_below {
            if f == 0 || f > self.depth() {
                return Err(Error::OutOfRange {
                    name: "frozen_below",
                    value: f,
                    min: 1,
                    max: self.depth(),
                });
            }
        }
        self.frozen_below = frozen_below;
        Ok(())
    }

    pub fn is_frozen(&self, l: usize) -> bool {
        self.frozen_below.is_some_and(|f| l < f)
    }

    /// First layer that receives updates.
    pub fn first_trainable(&self) -> usize {
        self.frozen_below.unwrap_or(1)
    }

    /// `f^{[1,l]}(x)`; `l = 0` returns a copy of `x`.
    pub fn representation(&self, x: &Matrix, l: usize) -> Result<Matrix> {
        Ok(forward_span(self, 1, l, x, None)?.into_output())
    }

    /// Representations at every layer `0..=n`.
    pub fn all_representations(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        let cache = forward_segment(self, 1, self.depth(), x, None)?;
        let mut reps = Vec::with_capacity(self.depth() + 1);
        reps.push(cache.input);
        reps.extend(cache.post);
        Ok(reps)
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        self.representation(x, self.depth())
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(x)?))
    }

    /// Plain SGD step on every unfrozen layer covered by `grads`.
    pub fn apply_gradients(&mut self, grads: &GradBundle, lr: f64) {
        for (offset, g) in grads.param_grads.iter().enumerate() {
            let l = grads.first + offset;
            if self.is_frozen(l) {
                continue;
            }
            let layer = &mut self.layers[l - 1];
            for (w, dw) in layer.weights.as_mut_slice().iter_mut().zip(g.weights.as_slice()) {
                *w -= lr * dw;
            }
            for (b, db) in layer.bias.iter_mut().zip(&g.bias) {
                *b -= lr * db;
            }
        }
    }
}

pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    m.iter_rows()
        .map(|r| {
            let mut best = 0;
            for (i, v) in r.iter().enumerate() {
                if *v > r[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Activations recorded by a forward pass over layers `first..=last`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub first: usize,
    pub last: usize,
    pub input: Matrix,
    /// Pre-activations of layers `first..=last`.
    pub pre: Vec<Matrix>,
    /// Post-activations of layers `first..=last`.
    pub post: Vec<Matrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.post.last().unwrap_or(&self.input)
    }

    pub fn into_output(mut self) -> Matrix {
        self.post.pop().unwrap_or(self.input)
    }

    pub fn is_empty(&self) -> bool {
        self.post.is_empty()
    }
}

fn check_range(model: &Model, first: usize, last: usize) -> Result<()> {
    let n = model.depth();
    if first == 0 || first > n + 1 || last > n || last + 1 < first {
        return Err(Error::InvalidParameter {
            name: "segment",
            reason: format!("[{first}, {last}] is not a layer range of a depth-{n} model"),
        });
    }
    Ok(())
}

/// Runs layers `first..=last` (`1 <= first <= last <= n`) on `input`, whose
/// width must be `d_{first-1}`.
pub fn forward_segment(
    model: &Model,
    first: usize,
    last: usize,
    input: &Matrix,
    counter: Option<&mut OpCounter>,
) -> Result<ForwardCache> {
    if first > last {
        return Err(Error::InvalidParameter {
            name: "segment",
            reason: format!("empty range [{first}, {last}]"),
        });
    }
    forward_span(model, first, last, input, counter)
}

/// Like [`forward_segment`] but also accepts the empty range
/// `first = last + 1`, whose output is the input itself.
pub(crate) fn forward_span(
    model: &Model,
    first: usize,
    last: usize,
    input: &Matrix,
    mut counter: Option<&mut OpCounter>,
) -> Result<ForwardCache> {
    check_range(model, first, last)?;
    let expected = model.width(first - 1);
    if input.cols() != expected {
        return Err(Error::DimensionMismatch {
            context: "forward_segment input",
            expected,
            got: input.cols(),
        });
    }
    let mut pre = Vec::with_capacity(last + 1 - first);
    let mut post: Vec<Matrix> = Vec::with_capacity(last + 1 - first);
    for l in first..=last {
        let layer = model.layer(l);
        let x = post.last().unwrap_or(input);
        let z = layer.pre_activation(x)?;
        let a = layer.activation.apply(&z);
        if let Some(c) = counter.as_deref_mut() {
            c.charge_forward(l, (x.rows() * layer.d_in() * layer.d_out()) as u64);
        }
        pre.push(z);
        post.push(a);
    }
    Ok(ForwardCache {
        first,
        last,
        input: input.clone(),
        pre,
        post,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Gradients of a segment `first..=last`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle {
    pub first: usize,
    /// Aligned with layers `first..=last`; zero for frozen layers.
    pub param_grads: Vec<LayerGrad>,
    /// Gradient with respect to the segment input.
    pub input_grad: Matrix,
}

/// Reverse-mode pass through the layers recorded in `cache`, given the
/// gradient of the loss with respect to the segment output.
pub fn backward_segment(
    model: &Model,
    cache: &ForwardCache,
    output_grad: &Matrix,
    counter: Option<&mut OpCounter>,
) -> Result<GradBundle> {
    backward_impl(model, cache, output_grad, counter, true)
}

/// Only the input gradient of [`backward_segment`]; parameter gradients are
/// skipped. Charges the same MACs.
pub fn backward_input(
    model: &Model,
    cache: &ForwardCache,
    output_grad: &Matrix,
    counter: Option<&mut OpCounter>,
) -> Result<Matrix> {
    Ok(backward_impl(model, cache, output_grad, counter, false)?.input_grad)
}

fn backward_impl(
    model: &Model,
    cache: &ForwardCache,
    output_grad: &Matrix,
    mut counter: Option<&mut OpCounter>,
    with_params: bool,
) -> Result<GradBundle> {
    check_range(model, cache.first, cache.last)?;
    let len = cache.last + 1 - cache.first;
    if cache.pre.len() != len || cache.post.len() != len {
        return Err(Error::CacheMismatch);
    }
    if output_grad.shape() != cache.output().shape() {
        return Err(Error::DimensionMismatch {
            context: "backward_segment output_grad",
            expected: cache.output().as_slice().len(),
            got: output_grad.as_slice().len(),
        });
    }
    let mut param_grads = Vec::with_capacity(len);
    let mut grad = output_grad.clone();
    for l in (cache.first..=cache.last).rev() {
        let idx = l - cache.first;
        let layer = model.layer(l);
        if cache.pre[idx].cols() != layer.d_out() {
            return Err(Error::CacheMismatch);
        }
        layer.activation.backprop(&cache.pre[idx], &cache.post[idx], &mut grad);
        let x = if idx == 0 { &cache.input } else { &cache.post[idx - 1] };
        if with_params {
            if model.is_frozen(l) {
                param_grads.push(LayerGrad {
                    weights: Matrix::zeros(layer.d_in(), layer.d_out()),
                    bias: vec![0.0; layer.d_out()],
                });
            } else {
                let dw = x.t_matmul(&grad)?;
                let mut db = vec![0.0; layer.d_out()];
                for row in grad.iter_rows() {
                    for (b, g) in db.iter_mut().zip(row) {
                        *b += g;
                    }
                }
                param_grads.push(LayerGrad { weights: dw, bias: db });
            }
        }
        if let Some(c) = counter.as_deref_mut() {
            c.charge_backward((x.rows() * layer.d_in() * layer.d_out()) as u64);
        }
        grad = grad.matmul_t(&layer.weights)?;
    }
    param_grads.reverse();
    Ok(GradBundle {
        first: cache.first,
        param_grads,
        input_grad: grad,
    })
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn loss_ce(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (b, c) = logits.shape();
    if b == 0 {
        return Err(Error::Empty("loss_ce"));
    }
    if labels.len() != b {
        return Err(Error::DimensionMismatch {
            context: "loss_ce labels",
            expected: b,
            got: labels.len(),
        });
    }
    let mut grad = Matrix::zeros(b, c);
    let mut total = 0.0;
    for (i, (row, &y)) in logits.iter_rows().zip(labels).enumerate() {
        if y >= c {
            return Err(Error::LabelOutOfRange { label: y, classes: c });
        }
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| libm::exp(v - m)).sum();
        let lse = m + libm::log(sum);
        total += lse - row[y];
        let g = grad.row_mut(i);
        for (gj, v) in g.iter_mut().zip(row) {
            *gj = libm::exp(v - lse) / b as f64;
        }
        g[y] -= 1.0 / b as f64;
    }
    Ok((total / b as f64, grad))
}
