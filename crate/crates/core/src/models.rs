//! Generators, patch discriminators with a feature tap, and the digit classifier.
//!
//! Every forward pass takes the network's parameters already recorded on a
//! graph (`ParamSet::bind`), so the caller decides which nets are trainable
//! in a given step.

use std::rc::Rc;

use accr_autodiff::{Bound, Graph, ParamId, ParamSet, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::ImageBatch;
use crate::error::{Error, Result};
use crate::rng;

const NORM_EPS: f64 = 1e-5;
const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// Weights from N(0, 0.02^2), biases zero.
    #[serde(rename = "normal-0.02")]
    Normal002,
    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    Default,
}

/// Anything with a parameter set.
pub trait Net {
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
}

/// Re-initializes every parameter of `net` from `seed`.
pub fn init_weights<N: Net>(net: &mut N, seed: u64, scheme: InitScheme) {
    let params = net.params_mut();
    let ids: Vec<ParamId> = params.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let shape = params.get(id).shape().to_vec();
        let n: usize = shape.iter().product();
        let value = if params.name(id).ends_with(".bias") {
            Tensor::zeros(&shape)
        } else {
            let mut r = rng::rng(seed, &[0x1417, k as u64]);
            let data: Vec<f64> = match scheme {
                InitScheme::Normal002 => {
                    let normal = Normal::new(0.0, 0.02).expect("valid sigma");
                    (0..n).map(|_| normal.sample(&mut r)).collect()
                }
                InitScheme::Default => {
                    let fan_in: usize = shape[1..].iter().product();
                    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                    (0..n).map(|_| r.gen_range(-bound..bound)).collect()
                }
            };
            Tensor::new(&shape, data).expect("shape matches")
        };
        params.set(id, value);
    }
}

/// Per-(sample, channel) normalization over spatial positions, no affine part.
pub fn instance_norm(x: Var<'_>) -> Var<'_> {
    let shape = x.shape();
    let centered = x - x.mean_trailing(2).broadcast_trailing(&shape);
    let var = centered.square().mean_trailing(2).add_scalar(NORM_EPS);
    centered * var.powf(-0.5).broadcast_trailing(&shape)
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

/// Mirror padding of the two spatial axes (edge pixel not repeated).
pub fn reflect_pad(x: Var<'_>, pad: usize) -> Result<Var<'_>> {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    if pad >= h || pad >= w {
        return Err(Error::Shape(format!("reflection pad {pad} needs spatial size above it, got {h}x{w}")));
    }
    let (oh, ow) = (h + 2 * pad, w + 2 * pad);
    let mut index = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        for y in 0..oh {
            let sy = reflect(y as isize - pad as isize, h);
            for xx in 0..ow {
                let sx = reflect(xx as isize - pad as isize, w);
                index.push((plane * h + sy) * w + sx);
            }
        }
    }
    Ok(x.gather(Rc::from(index), &[n, c, oh, ow]))
}

/// 2x2 max pooling with stride 2; ties go to the first element in row-major order.
pub fn max_pool2(x: Var<'_>) -> Result<Var<'_>> {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("max pool needs even spatial size, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let index: Vec<usize> = {
        let v = x.value_ref();
        let d = v.data();
        let mut index = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = (plane * h + 2 * y) * w + 2 * xx;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = (plane * h + 2 * y + dy) * w + 2 * xx + dx;
                        if d[i] > d[best] {
                            best = i;
                        }
                    }
                    index.push(best);
                }
            }
        }
        index
    };
    Ok(x.gather(Rc::from(index), &[n, c, oh, ow]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ConvKind {
    Forward,
    Transpose,
}

#[derive(Clone, Debug, PartialEq)]
struct ConvLayer {
    weight: ParamId,
    bias: Option<ParamId>,
    kind: ConvKind,
    stride: usize,
    pad: usize,
    reflect: usize,
}

impl ConvLayer {
    #[allow(clippy::too_many_arguments)]
    fn add(
        params: &mut ParamSet,
        name: &str,
        kind: ConvKind,
        (cin, cout, k): (usize, usize, usize),
        stride: usize,
        pad: usize,
        reflect: usize,
        bias: bool,
    ) -> Self {
        let shape = match kind {
            ConvKind::Forward => [cout, cin, k, k],
            ConvKind::Transpose => [cin, cout, k, k],
        };
        let weight = params.add(format!("{name}.weight"), Tensor::zeros(&shape));
        let bias = bias.then(|| params.add(format!("{name}.bias"), Tensor::zeros(&[cout])));
        Self { weight, bias, kind, stride, pad, reflect }
    }

    fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Result<Var<'g>> {
        let x = if self.reflect > 0 { reflect_pad(x, self.reflect)? } else { x };
        let y = match self.kind {
            ConvKind::Forward => x.conv2d(p[self.weight], self.stride, self.pad)?,
            ConvKind::Transpose => {
                let s = x.shape();
                x.conv_transpose2d(p[self.weight], self.stride, self.pad, (s[2] * self.stride, s[3] * self.stride))?
            }
        };
        Ok(match self.bias {
            Some(b) => y.add_channel_bias(p[b]),
            None => y,
        })
    }
}

fn check_channels(x: &Var<'_>, channels: usize, what: &str) -> Result<()> {
    let s = x.shape();
    if s.len() != 4 || s[1] != channels {
        return Err(Error::Shape(format!("{what} expects [N, {channels}, H, W], got {s:?}")));
    }
    Ok(())
}

/// Builds a throwaway graph without gradient tracking, binds `params`, and runs `f`.
fn inference<T>(params: &ParamSet, f: impl for<'g> FnOnce(&'g Graph, &Bound<'g>) -> Result<T>) -> Result<T> {
    let graph = Graph::new();
    let _guard = graph.no_grad();
    let bound = params.bind(&graph, false);
    f(&graph, &bound)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub width: usize,
    /// Stride-2 downsampling layers, mirrored by as many upsampling layers.
    pub downsampling: usize,
    pub res_blocks: usize,
    pub norm: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { in_channels: 3, out_channels: 3, width: 64, downsampling: 2, res_blocks: 2, norm: true }
    }
}

/// Encoder (reflect-padded stride-2 convs), residual blocks, decoder
/// (stride-2 transposed convs), tanh head.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub config: GeneratorConfig,
    params: ParamSet,
    downs: Vec<ConvLayer>,
    blocks: Vec<(ConvLayer, ConvLayer)>,
    ups: Vec<ConvLayer>,
}

impl Net for Generator {
    fn params(&self) -> &ParamSet {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }
}

impl Generator {
    pub fn new(config: GeneratorConfig, seed: u64, scheme: InitScheme) -> Result<Self> {
        if config.width == 0 || config.downsampling == 0 || config.in_channels == 0 || config.out_channels == 0 {
            return Err(Error::Config(format!("degenerate generator config {config:?}")));
        }
        let mut params = ParamSet::new();
        let bias = !config.norm;
        let mut ch = config.in_channels;
        let mut downs = Vec::new();
        for i in 0..config.downsampling {
            let out = config.width << i;
            downs.push(ConvLayer::add(
                &mut params,
                &format!("down{i}"),
                ConvKind::Forward,
                (ch, out, 4),
                2,
                0,
                1,
                bias,
            ));
            ch = out;
        }
        let blocks = (0..config.res_blocks)
            .map(|i| {
                let a =
                    ConvLayer::add(&mut params, &format!("res{i}.a"), ConvKind::Forward, (ch, ch, 3), 1, 0, 1, bias);
                let b =
                    ConvLayer::add(&mut params, &format!("res{i}.b"), ConvKind::Forward, (ch, ch, 3), 1, 0, 1, bias);
                (a, b)
            })
            .collect();
        let mut ups = Vec::new();
        for i in (0..config.downsampling).rev() {
            let last = i == 0;
            let out = if last { config.out_channels } else { config.width << (i - 1) };
            ups.push(ConvLayer::add(
                &mut params,
                &format!("up{}", config.downsampling - 1 - i),
                ConvKind::Transpose,
                (ch, out, 4),
                2,
                1,
                0,
                bias || last,
            ));
            ch = out;
        }
        let mut net = Self { config, params, downs, blocks, ups };
        init_weights(&mut net, seed, scheme);
        Ok(net)
    }

    fn norm_act<'g>(&self, x: Var<'g>, relu: bool) -> Var<'g> {
        let x = if self.config.norm { instance_norm(x) } else { x };
        if relu {
            x.relu()
        } else {
            x
        }
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Result<Var<'g>> {
        check_channels(&x, self.config.in_channels, "generator")?;
        let s = x.shape();
        let factor = 1 << self.config.downsampling;
        if !s[2].is_multiple_of(factor) || !s[3].is_multiple_of(factor) {
            return Err(Error::Shape(format!("generator needs H and W divisible by {factor}, got {}x{}", s[2], s[3])));
        }
        let mut h = x;
        for layer in &self.downs {
            h = self.norm_act(layer.forward(p, h)?, true);
        }
        for (a, b) in &self.blocks {
            let r = self.norm_act(a.forward(p, h)?, true);
            let r = self.norm_act(b.forward(p, r)?, false);
            h = h + r;
        }
        let last = self.ups.len() - 1;
        for (i, layer) in self.ups.iter().enumerate() {
            let y = layer.forward(p, h)?;
            h = if i == last { y.tanh() } else { self.norm_act(y, true) };
        }
        Ok(h)
    }

    /// Translates a batch without recording gradients.
    pub fn translate(&self, x: &ImageBatch) -> Result<ImageBatch> {
        let out = inference(&self.params, |g, p| {
            let y = self.forward(p, g.constant(x.tensor().clone()))?;
            Ok(y.value().as_ref().clone())
        })?;
        ImageBatch::new(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub in_channels: usize,
    pub width: usize,
    /// Strides of the hidden layers; stride-2 layers use 4x4 kernels, stride-1
    /// layers 3x3. A 3x3 stride-1 one-channel head follows.
    pub strides: Vec<usize>,
    pub norm: bool,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { in_channels: 3, width: 64, strides: vec![2, 2, 2, 1], norm: true }
    }
}

/// PatchGAN discriminator; the feature tap is the last hidden activation.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    params: ParamSet,
    hidden: Vec<ConvLayer>,
    head: ConvLayer,
}

impl Net for Discriminator {
    fn params(&self) -> &ParamSet {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig, seed: u64, scheme: InitScheme) -> Result<Self> {
        if config.width == 0 || config.in_channels == 0 || config.strides.iter().any(|&s| s != 1 && s != 2) {
            return Err(Error::Config(format!("unsupported discriminator config {config:?}")));
        }
        let mut params = ParamSet::new();
        let mut ch = config.in_channels;
        let mut hidden = Vec::new();
        for (i, &stride) in config.strides.iter().enumerate() {
            let out = config.width << i.min(3);
            let k = if stride == 2 { 4 } else { 3 };
            let bias = i == 0 || !config.norm;
            hidden.push(ConvLayer::add(
                &mut params,
                &format!("conv{i}"),
                ConvKind::Forward,
                (ch, out, k),
                stride,
                1,
                0,
                bias,
            ));
            ch = out;
        }
        let head = ConvLayer::add(&mut params, "head", ConvKind::Forward, (ch, 1, 3), 1, 1, 0, true);
        let mut net = Self { config, params, hidden, head };
        init_weights(&mut net, seed, scheme);
        Ok(net)
    }

    /// Score map `[N, 1, h, w]` and, when asked, the penultimate activations.
    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>, want_features: bool) -> Result<(Var<'g>, Option<Var<'g>>)> {
        check_channels(&x, self.config.in_channels, "discriminator")?;
        let mut h = x;
        for (i, layer) in self.hidden.iter().enumerate() {
            let y = layer.forward(p, h)?;
            let y = if i > 0 && self.config.norm { instance_norm(y) } else { y };
            h = y.leaky_relu(LEAKY_SLOPE);
        }
        let scores = self.head.forward(p, h)?;
        Ok((scores, want_features.then_some(h)))
    }

    pub fn scores<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Result<Var<'g>> {
        Ok(self.forward(p, x, false)?.0)
    }

    /// Score-map shape for inputs of spatial size `h x w`.
    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        self.config.strides.iter().fold((h, w), |(h, w), &s| if s == 2 { (h / 2, w / 2) } else { (h, w) })
    }

    /// Evaluates without gradients; returns the score map and feature map.
    pub fn evaluate(&self, x: &ImageBatch) -> Result<(Tensor, Tensor)> {
        inference(&self.params, |g, p| {
            let (s, f) = self.forward(p, g.constant(x.tensor().clone()), true)?;
            Ok((s.value().as_ref().clone(), f.expect("requested").value().as_ref().clone()))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub in_channels: usize,
    /// Input height and width; must be divisible by 4.
    pub size: usize,
    pub width: usize,
    pub hidden: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { in_channels: 3, size: 32, width: 32, hidden: 128 }
    }
}

/// LeNet-style digit classifier: two conv+pool stages, two dense layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub config: ClassifierConfig,
    params: ParamSet,
    convs: [ConvLayer; 2],
    fc1: (ParamId, ParamId),
    fc2: (ParamId, ParamId),
}

impl Net for Classifier {
    fn params(&self) -> &ParamSet {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }
}

pub const CLASSES: usize = 10;

impl Classifier {
    pub fn new(config: ClassifierConfig, seed: u64, scheme: InitScheme) -> Result<Self> {
        if !config.size.is_multiple_of(4) || config.size == 0 || config.width == 0 || config.hidden == 0 {
            return Err(Error::Config(format!("unsupported classifier config {config:?}")));
        }
        let mut params = ParamSet::new();
        let w = config.width;
        let convs = [
            ConvLayer::add(&mut params, "conv0", ConvKind::Forward, (config.in_channels, w, 5), 1, 2, 0, true),
            ConvLayer::add(&mut params, "conv1", ConvKind::Forward, (w, 2 * w, 5), 1, 2, 0, true),
        ];
        let flat = 2 * w * (config.size / 4) * (config.size / 4);
        let fc1 = (
            params.add("fc0.weight", Tensor::zeros(&[config.hidden, flat])),
            params.add("fc0.bias", Tensor::zeros(&[config.hidden])),
        );
        let fc2 = (
            params.add("fc1.weight", Tensor::zeros(&[CLASSES, config.hidden])),
            params.add("fc1.bias", Tensor::zeros(&[CLASSES])),
        );
        let mut net = Self { config, params, convs, fc1, fc2 };
        init_weights(&mut net, seed, scheme);
        Ok(net)
    }

    /// Class scores `[N, 10]`.
    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Result<Var<'g>> {
        check_channels(&x, self.config.in_channels, "classifier")?;
        let s = x.shape();
        if s[2] != self.config.size || s[3] != self.config.size {
            return Err(Error::Shape(format!(
                "classifier expects {0}x{0} images, got {1}x{2}",
                self.config.size, s[2], s[3]
            )));
        }
        let mut h = x;
        for layer in &self.convs {
            h = max_pool2(layer.forward(p, h)?.relu())?;
        }
        let h = h.flatten();
        let h = h.matmul(p[self.fc1.0].t()).add_channel_bias(p[self.fc1.1]).relu();
        Ok(h.matmul(p[self.fc2.0].t()).add_channel_bias(p[self.fc2.1]))
    }

    pub fn logits(&self, x: &ImageBatch) -> Result<Tensor> {
        inference(&self.params, |g, p| Ok(self.forward(p, g.constant(x.tensor().clone()))?.value().as_ref().clone()))
    }

    /// Argmax class per image.
    pub fn predict(&self, x: &ImageBatch) -> Result<Vec<u8>> {
        let logits = self.logits(x)?;
        Ok(logits
            .data()
            .chunks(CLASSES)
            .map(|row| (0..CLASSES).fold(0, |best, c| if row[c] > row[best] { c } else { best }) as u8)
            .collect())
    }
}
