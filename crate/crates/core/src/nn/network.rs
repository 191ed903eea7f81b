//! Forward pass, backpropagation and mini-batch SGD over a flat parameter
//! vector.
//!
//! Parameters are laid out layer by layer; within a layer all weights come
//! before all biases, and weights are row-major in the PyTorch order
//! (`[out][in]` for dense, `[out_c][in_c][ky][kx]` for convolutions).
//! Activations are `f32`; every dot product and gradient sum accumulates in
//! `f64`.

use rand::distr::{Distribution, Uniform};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::arch::{Layer, ModelArch, Shape, KERNEL};
use super::{Batch, ConfidenceMatrix, ParamVector};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Local-training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.01,
        }
    }
}

/// A compiled architecture. Cheap to clone and safe to share between threads;
/// every operation allocates its own scratch space.
#[derive(Debug, Clone)]
pub struct Network {
    arch: ModelArch,
    offsets: Vec<usize>,
    param_count: usize,
}

struct Workspace {
    acts: Vec<Vec<f32>>,
    pool_argmax: Vec<Vec<u32>>,
    delta: Vec<f32>,
    delta_prev: Vec<f32>,
    acc: Vec<f64>,
}

impl Workspace {
    fn new(arch: &ModelArch) -> Self {
        let n = arch.layers().len();
        let acts = (0..=n).map(|i| vec![0.0; arch.shape_at(i).volume()]).collect();
        let pool_argmax = (0..n)
            .map(|i| match arch.layers()[i] {
                Layer::MaxPool2 => vec![0; arch.shape_at(i + 1).volume()],
                _ => Vec::new(),
            })
            .collect();
        let widest = (0..=n).map(|i| arch.shape_at(i).volume()).max().unwrap();
        Self {
            acts,
            pool_argmax,
            delta: Vec::with_capacity(widest),
            delta_prev: Vec::with_capacity(widest),
            acc: Vec::with_capacity(widest),
        }
    }

    fn logits(&self) -> &[f32] {
        self.acts.last().unwrap()
    }
}

impl Network {
    pub fn new(arch: ModelArch) -> Self {
        let offsets = arch.param_offsets();
        let param_count = arch.param_count();
        Self {
            arch,
            offsets,
            param_count,
        }
    }

    pub fn arch(&self) -> &ModelArch {
        &self.arch
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn class_count(&self) -> usize {
        self.arch.class_count()
    }

    /// All-zero parameters.
    pub fn zeros(&self) -> ParamVector {
        ParamVector::new(vec![0.0; self.param_count], self.arch.id())
    }

    /// He-uniform initialization: each weight is drawn from
    /// `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`, biases are zero. Layers are
    /// filled in parameter order from a single generator seeded by `seed`.
    pub fn init(&self, seed: u64) -> ParamVector {
        let mut rng = rng_from_seed(seed);
        let mut values = vec![0.0f32; self.param_count];
        for (layer, &offset) in self.arch.layers().iter().zip(&self.offsets) {
            let weights = layer.weight_count();
            if weights == 0 {
                continue;
            }
            let bound = (6.0 / layer.fan_in() as f64).sqrt() as f32;
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            for w in &mut values[offset..offset + weights] {
                *w = dist.sample(&mut rng);
            }
        }
        ParamVector::new(values, self.arch.id())
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.arch_id() != self.arch.id() || params.len() != self.param_count {
            return Err(Error::Dimension(format!(
                "parameter vector of length {} does not belong to architecture {}",
                params.len(),
                self.arch
            )));
        }
        Ok(())
    }

    fn check_input(&self, shape: Shape) -> Result<()> {
        if shape != self.arch.input() {
            return Err(Error::Dimension(format!(
                "input samples are {shape}, network expects {}",
                self.arch.input()
            )));
        }
        Ok(())
    }

    /// Softmax confidences for every sample in the batch.
    pub fn forward(&self, params: &ParamVector, batch: &Batch<'_>) -> Result<ConfidenceMatrix> {
        self.check_params(params)?;
        self.check_input(batch.shape())?;
        let classes = self.class_count();
        let mut ws = Workspace::new(&self.arch);
        let mut out = Vec::with_capacity(batch.len() * classes);
        let mut probs = vec![0.0f32; classes];
        for i in 0..batch.len() {
            self.forward_sample(params.values(), batch.image(i), &mut ws);
            softmax(ws.logits(), &mut probs);
            out.extend_from_slice(&probs);
        }
        Ok(ConfidenceMatrix::new(batch.len(), classes, out))
    }

    /// Fraction of samples whose arg-max confidence (lowest class index on
    /// ties) matches the label.
    pub fn evaluate(&self, params: &ParamVector, data: &LabeledDataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Data("cannot evaluate on an empty dataset".into()));
        }
        let conf = self.forward(params, &data.as_batch())?;
        let correct = (0..conf.rows())
            .filter(|&i| argmax(conf.row(i)) == data.label(i))
            .count();
        Ok(correct as f64 / data.len() as f64)
    }

    /// Mean softmax cross-entropy over `data`.
    pub fn mean_loss(&self, params: &ParamVector, data: &LabeledDataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Data("cannot compute loss on an empty dataset".into()));
        }
        self.check_params(params)?;
        self.check_input(data.shape())?;
        let mut ws = Workspace::new(&self.arch);
        let mut total = 0.0f64;
        for i in 0..data.len() {
            self.forward_sample(params.values(), data.image(i), &mut ws);
            total += cross_entropy(ws.logits(), data.label(i));
        }
        Ok(total / data.len() as f64)
    }

    /// Gradient of the mean cross-entropy over `batch` with respect to every
    /// parameter.
    pub fn gradient(&self, params: &ParamVector, batch: &Batch<'_>) -> Result<Vec<f64>> {
        self.check_params(params)?;
        self.check_input(batch.shape())?;
        if batch.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let mut ws = Workspace::new(&self.arch);
        let mut grads = vec![0.0f64; self.param_count];
        let mut dlogits = vec![0.0f32; self.class_count()];
        for i in 0..batch.len() {
            self.forward_sample(params.values(), batch.image(i), &mut ws);
            softmax_grad(ws.logits(), batch.label(i), &mut dlogits);
            self.backward_sample(params.values(), &mut ws, &dlogits, &mut grads);
        }
        let scale = 1.0 / batch.len() as f64;
        grads.iter_mut().for_each(|g| *g *= scale);
        Ok(grads)
    }

    /// Mini-batch SGD on softmax cross-entropy. The sample order of every
    /// epoch is drawn from a generator seeded by `seed`; the input is left
    /// untouched.
    pub fn train_local(
        &self,
        params: &ParamVector,
        data: &LabeledDataset,
        cfg: &TrainConfig,
        seed: u64,
    ) -> Result<ParamVector> {
        self.train_observed(params, data, cfg, seed, |_, _| {})
    }

    /// [`train_local`](Self::train_local) with a callback invoked after each
    /// epoch with the epoch index and current parameters.
    pub fn train_observed(
        &self,
        params: &ParamVector,
        data: &LabeledDataset,
        cfg: &TrainConfig,
        seed: u64,
        mut on_epoch: impl FnMut(usize, &ParamVector),
    ) -> Result<ParamVector> {
        self.check_params(params)?;
        if data.is_empty() {
            return Err(Error::Data("cannot train on an empty dataset".into()));
        }
        self.check_input(data.shape())?;
        if cfg.epochs == 0 || cfg.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch size must both be at least 1".into(),
            ));
        }
        let mut current = params.clone();
        let mut ws = Workspace::new(&self.arch);
        let mut grads = vec![0.0f64; self.param_count];
        let mut dlogits = vec![0.0f32; self.class_count()];
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = rng_from_seed(seed);
        let lr = f64::from(cfg.learning_rate);

        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size) {
                grads.fill(0.0);
                for &i in chunk {
                    self.forward_sample(current.values(), data.image(i), &mut ws);
                    softmax_grad(ws.logits(), data.label(i), &mut dlogits);
                    self.backward_sample(current.values(), &mut ws, &dlogits, &mut grads);
                }
                let step = lr / chunk.len() as f64;
                for (p, g) in current.values_mut().iter_mut().zip(&grads) {
                    *p -= (step * g) as f32;
                }
            }
            on_epoch(epoch, &current);
        }
        Ok(current)
    }

    fn forward_sample(&self, params: &[f32], input: &[f32], ws: &mut Workspace) {
        ws.acts[0].copy_from_slice(input);
        for (i, layer) in self.arch.layers().iter().enumerate() {
            let (before, after) = ws.acts.split_at_mut(i + 1);
            let x = &before[i];
            let y = &mut after[0];
            let p = &params[self.offsets[i]..self.offsets[i] + layer.param_count()];
            let in_shape = self.arch.shape_at(i);
            match *layer {
                Layer::Dense { in_dim, out_dim } => {
                    let (w, b) = p.split_at(in_dim * out_dim);
                    for o in 0..out_dim {
                        let row = &w[o * in_dim..(o + 1) * in_dim];
                        let acc = row
                            .iter()
                            .zip(x.iter())
                            .fold(f64::from(b[o]), |acc, (&wi, &xi)| {
                                acc + f64::from(wi) * f64::from(xi)
                            });
                        y[o] = acc as f32;
                    }
                }
                Layer::Relu => {
                    for (yo, &xi) in y.iter_mut().zip(x.iter()) {
                        *yo = if xi > 0.0 { xi } else { 0.0 };
                    }
                }
                Layer::Flatten => y.copy_from_slice(x),
                Layer::MaxPool2 => maxpool_forward(x, in_shape, y, &mut ws.pool_argmax[i]),
                Layer::Conv2d {
                    in_channels,
                    out_channels,
                } => conv_forward(p, x, in_shape, in_channels, out_channels, y, &mut ws.acc),
            }
        }
    }

    /// Accumulates parameter gradients for one sample whose activations are
    /// cached in `ws`. `dlogits` is the gradient at the pre-softmax output.
    fn backward_sample(&self, params: &[f32], ws: &mut Workspace, dlogits: &[f32], grads: &mut [f64]) {
        ws.delta.clear();
        ws.delta.extend_from_slice(dlogits);
        for (i, layer) in self.arch.layers().iter().enumerate().rev() {
            let x = &ws.acts[i];
            let in_shape = self.arch.shape_at(i);
            let range = self.offsets[i]..self.offsets[i] + layer.param_count();
            let p = &params[range.clone()];
            let g = &mut grads[range];
            let need_input_grad = i > 0;
            ws.delta_prev.clear();
            ws.delta_prev.resize(in_shape.volume(), 0.0);
            let dy = &ws.delta;
            let dx = &mut ws.delta_prev;
            match *layer {
                Layer::Dense { in_dim, out_dim } => {
                    let (w, _) = p.split_at(in_dim * out_dim);
                    let (gw, gb) = g.split_at_mut(in_dim * out_dim);
                    for o in 0..out_dim {
                        let d = f64::from(dy[o]);
                        if d == 0.0 {
                            continue;
                        }
                        gb[o] += d;
                        let grow = &mut gw[o * in_dim..(o + 1) * in_dim];
                        for (gwi, &xi) in grow.iter_mut().zip(x.iter()) {
                            *gwi += d * f64::from(xi);
                        }
                    }
                    if need_input_grad {
                        ws.acc.clear();
                        ws.acc.resize(in_dim, 0.0);
                        for o in 0..out_dim {
                            let d = f64::from(dy[o]);
                            if d == 0.0 {
                                continue;
                            }
                            let row = &w[o * in_dim..(o + 1) * in_dim];
                            for (a, &wi) in ws.acc.iter_mut().zip(row) {
                                *a += f64::from(wi) * d;
                            }
                        }
                        for (dxi, &a) in dx.iter_mut().zip(&ws.acc) {
                            *dxi = a as f32;
                        }
                    }
                }
                Layer::Relu => {
                    for ((dxi, &dyi), &xi) in dx.iter_mut().zip(dy.iter()).zip(x.iter()) {
                        *dxi = if xi > 0.0 { dyi } else { 0.0 };
                    }
                }
                Layer::Flatten => dx.copy_from_slice(dy),
                Layer::MaxPool2 => {
                    for (&src, &d) in ws.pool_argmax[i].iter().zip(dy.iter()) {
                        dx[src as usize] += d;
                    }
                }
                Layer::Conv2d {
                    in_channels,
                    out_channels,
                } => conv_backward(
                    p,
                    x,
                    in_shape,
                    in_channels,
                    out_channels,
                    dy,
                    g,
                    need_input_grad.then_some(dx),
                    &mut ws.acc,
                ),
            }
            std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
        }
    }
}

fn maxpool_forward(x: &[f32], shape: Shape, y: &mut [f32], argmax: &mut [u32]) {
    let (h, w) = (shape.height, shape.width);
    let (oh, ow) = (h / 2, w / 2);
    for c in 0..shape.channels {
        let plane = c * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = plane + (2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = plane + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                let o = c * oh * ow + oy * ow + ox;
                y[o] = x[best];
                argmax[o] = best as u32;
            }
        }
    }
}

/// Visits every (output pixel, kernel tap) pair whose input tap lies inside
/// the zero-padded image.
#[inline]
fn for_each_tap(h: usize, w: usize, mut f: impl FnMut(usize, usize, usize)) {
    for oy in 0..h {
        for ox in 0..w {
            for ky in 0..KERNEL {
                let iy = oy + ky;
                if iy == 0 || iy > h {
                    continue;
                }
                for kx in 0..KERNEL {
                    let ix = ox + kx;
                    if ix == 0 || ix > w {
                        continue;
                    }
                    f(oy * w + ox, (iy - 1) * w + (ix - 1), ky * KERNEL + kx);
                }
            }
        }
    }
}

fn conv_forward(
    p: &[f32],
    x: &[f32],
    shape: Shape,
    in_c: usize,
    out_c: usize,
    y: &mut [f32],
    acc: &mut Vec<f64>,
) {
    let (h, w) = (shape.height, shape.width);
    let plane = h * w;
    let taps = KERNEL * KERNEL;
    let (weights, bias) = p.split_at(out_c * in_c * taps);
    acc.clear();
    acc.resize(plane, 0.0);
    for oc in 0..out_c {
        acc.fill(f64::from(bias[oc]));
        for ic in 0..in_c {
            let k = &weights[(oc * in_c + ic) * taps..(oc * in_c + ic + 1) * taps];
            let xin = &x[ic * plane..(ic + 1) * plane];
            for_each_tap(h, w, |o, src, t| {
                acc[o] += f64::from(k[t]) * f64::from(xin[src]);
            });
        }
        for (yo, &a) in y[oc * plane..(oc + 1) * plane].iter_mut().zip(acc.iter()) {
            *yo = a as f32;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    p: &[f32],
    x: &[f32],
    shape: Shape,
    in_c: usize,
    out_c: usize,
    dy: &[f32],
    g: &mut [f64],
    dx: Option<&mut Vec<f32>>,
    acc: &mut Vec<f64>,
) {
    let (h, w) = (shape.height, shape.width);
    let plane = h * w;
    let taps = KERNEL * KERNEL;
    let (gw, gb) = g.split_at_mut(out_c * in_c * taps);
    for oc in 0..out_c {
        let d = &dy[oc * plane..(oc + 1) * plane];
        gb[oc] += d.iter().map(|&v| f64::from(v)).sum::<f64>();
        for ic in 0..in_c {
            let gk = &mut gw[(oc * in_c + ic) * taps..(oc * in_c + ic + 1) * taps];
            let xin = &x[ic * plane..(ic + 1) * plane];
            for_each_tap(h, w, |o, src, t| {
                gk[t] += f64::from(d[o]) * f64::from(xin[src]);
            });
        }
    }
    let Some(dx) = dx else { return };
    let weights = &p[..out_c * in_c * taps];
    acc.clear();
    acc.resize(in_c * plane, 0.0);
    for oc in 0..out_c {
        let d = &dy[oc * plane..(oc + 1) * plane];
        for ic in 0..in_c {
            let k = &weights[(oc * in_c + ic) * taps..(oc * in_c + ic + 1) * taps];
            let a = &mut acc[ic * plane..(ic + 1) * plane];
            for_each_tap(h, w, |o, src, t| {
                a[src] += f64::from(k[t]) * f64::from(d[o]);
            });
        }
    }
    for (dxi, &a) in dx.iter_mut().zip(acc.iter()) {
        *dxi = a as f32;
    }
}

/// Numerically stable softmax, computed in `f64`.
pub fn softmax(logits: &[f32], out: &mut [f32]) {
    let max = logits
        .iter()
        .fold(f64::NEG_INFINITY, |m, &v| m.max(f64::from(v)));
    let sum: f64 = logits.iter().map(|&v| (f64::from(v) - max).exp()).sum();
    for (o, &v) in out.iter_mut().zip(logits) {
        *o = ((f64::from(v) - max).exp() / sum) as f32;
    }
}

fn cross_entropy(logits: &[f32], label: usize) -> f64 {
    let max = logits
        .iter()
        .fold(f64::NEG_INFINITY, |m, &v| m.max(f64::from(v)));
    let lse = logits
        .iter()
        .map(|&v| (f64::from(v) - max).exp())
        .sum::<f64>()
        .ln()
        + max;
    lse - f64::from(logits[label])
}

/// `softmax(logits) - onehot(label)`.
fn softmax_grad(logits: &[f32], label: usize, out: &mut [f32]) {
    softmax(logits, out);
    out[label] -= 1.0;
}

/// Index of the largest entry; the lowest index wins ties and NaNs never win.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
