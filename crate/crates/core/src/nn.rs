//! Layers, models, and the small reference conv nets used throughout.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Tape, Var};
use crate::data::NormalizationStats;
use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::loss;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T: Real = f32> {
    /// Weight `(out, in)`, bias `(out)`.
    Dense { weight: Tensor<T>, bias: Tensor<T> },
    /// Stride-1 convolution with zero padding; weight `(out, in, kh, kw)`.
    Conv2d {
        weight: Tensor<T>,
        bias: Tensor<T>,
        pad: usize,
    },
    Relu,
    MaxPool { size: usize },
    Flatten,
}

impl<T: Real> Layer<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv2d { .. } => "conv2d",
            Layer::Relu => "relu",
            Layer::MaxPool { .. } => "maxpool",
            Layer::Flatten => "flatten",
        }
    }

    pub fn is_parameterized(&self) -> bool {
        matches!(self, Layer::Dense { .. } | Layer::Conv2d { .. })
    }

    /// Filter count `O` for conv layers, output width for dense layers.
    pub fn out_channels(&self) -> Option<usize> {
        match self {
            Layer::Dense { weight, .. } | Layer::Conv2d { weight, .. } => Some(weight.shape()[0]),
            _ => None,
        }
    }

    fn cast<U: Real>(&self) -> Layer<U> {
        match self {
            Layer::Dense { weight, bias } => Layer::Dense {
                weight: weight.cast(),
                bias: bias.cast(),
            },
            Layer::Conv2d { weight, bias, pad } => Layer::Conv2d {
                weight: weight.cast(),
                bias: bias.cast(),
                pad: *pad,
            },
            Layer::Relu => Layer::Relu,
            Layer::MaxPool { size } => Layer::MaxPool { size: *size },
            Layer::Flatten => Layer::Flatten,
        }
    }

    /// Output shape for the given input shape, or a diagnostic naming layer `index`.
    fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |expected: &[usize]| Error::shape(format!("layer {index} ({})", self.name()), expected, input);
        match self {
            Layer::Dense { weight, .. } => {
                let ws = weight.shape();
                if input.len() != 2 || input[1] != ws[1] {
                    return Err(bad(&[input.first().copied().unwrap_or(0), ws[1]]));
                }
                Ok(vec![input[0], ws[0]])
            }
            Layer::Conv2d { weight, pad, .. } => {
                let ws = weight.shape();
                if input.len() != 4 || input[1] != ws[1] || input[2] + 2 * pad < ws[2] || input[3] + 2 * pad < ws[3] {
                    return Err(bad(&[input.first().copied().unwrap_or(0), ws[1], ws[2], ws[3]]));
                }
                Ok(vec![input[0], ws[0], input[2] + 2 * pad + 1 - ws[2], input[3] + 2 * pad + 1 - ws[3]])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool { size } => {
                if input.len() != 4 || input[2] < *size || input[3] < *size {
                    return Err(bad(&[input.first().copied().unwrap_or(0), 0, *size, *size]));
                }
                Ok(vec![input[0], input[1], input[2] / size, input[3] / size])
            }
            Layer::Flatten => {
                if input.is_empty() {
                    return Err(bad(&[0, 0]));
                }
                Ok(vec![input[0], input[1..].iter().product()])
            }
        }
    }

    fn apply(&self, x: &Tensor<T>, out_shape: &[usize]) -> Tensor<T> {
        let data = match self {
            Layer::Dense { weight, bias } => {
                let ws = weight.shape();
                kernels::dense_forward(x.shape()[0], ws[1], ws[0], x.data(), weight.data(), bias.data())
            }
            Layer::Conv2d { weight, bias, pad } => {
                let (xs, ws) = (x.shape(), weight.shape());
                let geom = ConvGeom {
                    batch: xs[0],
                    in_ch: xs[1],
                    in_h: xs[2],
                    in_w: xs[3],
                    out_ch: ws[0],
                    kh: ws[2],
                    kw: ws[3],
                    pad: *pad,
                };
                kernels::conv2d_forward(&geom, x.data(), weight.data(), bias.data())
            }
            Layer::Relu => kernels::relu_forward(x.data()),
            Layer::MaxPool { size } => {
                let s = x.shape();
                kernels::maxpool_forward(s[0] * s[1], s[2], s[3], *size, x.data()).0
            }
            Layer::Flatten => x.data().to_vec(),
        };
        Tensor::new(out_shape, data).expect("layer output shape")
    }
}

/// Logits plus the captured post-activation feature maps, keyed by layer index.
#[derive(Debug, Clone)]
pub struct ForwardOutput<T: Real = f32> {
    pub logits: Tensor<T>,
    pub features: BTreeMap<usize, Tensor<T>>,
}

/// Loss value and gradients for every parameter, in [`Model::params`] order.
#[derive(Debug, Clone)]
pub struct LossGradients<T: Real = f32> {
    pub loss: T,
    pub params: Vec<Tensor<T>>,
    pub input: Option<Tensor<T>>,
    pub logits: Tensor<T>,
}

/// An ordered stack of layers with an optional fixed input normalization.
///
/// Inputs are pixel-space `(batch, C, H, W)` images; when `input_norm` is set
/// the model standardizes them per channel before the first layer, so input
/// gradients are reported in pixel space.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Real = f32> {
    input_shape: [usize; 3],
    classes: usize,
    input_norm: Option<NormalizationStats>,
    layers: Vec<Layer<T>>,
    taps: Vec<usize>,
}

impl<T: Real> Model<T> {
    /// Validates the layer stack against `input_shape` and the tap set.
    pub fn new(
        input_shape: [usize; 3],
        classes: usize,
        layers: Vec<Layer<T>>,
        taps: Vec<usize>,
        input_norm: Option<NormalizationStats>,
    ) -> Result<Self> {
        let mut shape = vec![1, input_shape[0], input_shape[1], input_shape[2]];
        for (i, layer) in layers.iter().enumerate() {
            shape = layer.output_shape(i, &shape)?;
        }
        if shape.len() != 2 || shape[1] != classes {
            return Err(Error::shape("model output", &[1, classes], &shape));
        }
        for &t in &taps {
            if t >= layers.len() {
                return Err(Error::invalid(format!("feature tap {t} beyond {} layers", layers.len())));
            }
        }
        if let Some(norm) = &input_norm {
            norm.validate(input_shape[0])?;
        }
        Ok(Self {
            input_shape,
            classes,
            input_norm,
            layers,
            taps,
        })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    /// Layer indices whose outputs can be captured, one per tapped layer `l = 1..L`.
    pub fn taps(&self) -> &[usize] {
        &self.taps
    }

    /// `L`, the number of tapped layers.
    pub fn tapped_layers(&self) -> usize {
        self.taps.len()
    }

    pub fn input_norm(&self) -> Option<&NormalizationStats> {
        self.input_norm.as_ref()
    }

    pub fn set_input_norm(&mut self, norm: Option<NormalizationStats>) -> Result<()> {
        if let Some(n) = &norm {
            n.validate(self.input_shape[0])?;
        }
        self.input_norm = norm;
        Ok(())
    }

    /// The parameterized layer whose filters produce tap `tap` (0-based tap ordinal).
    pub fn tap_source(&self, tap: usize) -> Option<&Layer<T>> {
        let idx = *self.taps.get(tap)?;
        self.layers[..=idx].iter().rev().find(|l| l.is_parameterized())
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for l in &self.layers {
            if let Layer::Dense { weight, bias } | Layer::Conv2d { weight, bias, .. } = l {
                out.push(weight);
                out.push(bias);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            if let Layer::Dense { weight, bias } | Layer::Conv2d { weight, bias, .. } = l {
                out.push(weight);
                out.push(bias);
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            input_shape: self.input_shape,
            classes: self.classes,
            input_norm: self.input_norm.clone(),
            layers: self.layers.iter().map(|l| l.cast()).collect(),
            taps: self.taps.clone(),
        }
    }

    fn check_input(&self, batch: &Tensor<T>) -> Result<()> {
        let s = batch.shape();
        let [c, h, w] = self.input_shape;
        if s.len() != 4 || s[1] != c || s[2] != h || s[3] != w {
            return Err(Error::shape("model input", &[s.first().copied().unwrap_or(0), c, h, w], s));
        }
        Ok(())
    }

    fn check_capture(&self, capture: &[usize]) -> Result<()> {
        match capture.iter().find(|c| !self.taps.contains(c)) {
            Some(c) => Err(Error::invalid(format!("layer {c} is not a feature tap"))),
            None => Ok(()),
        }
    }

    /// Standardizes a pixel-space batch with the model's input normalization.
    pub fn normalize_input(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(batch)?;
        Ok(match &self.input_norm {
            Some(n) => {
                let (mean, std) = n.as_real::<T>();
                let s = batch.shape();
                Tensor::new(s, kernels::channel_affine(batch.data(), s[1], s[2] * s[3], &mean, &std))?
            }
            None => batch.clone(),
        })
    }

    /// Inference pass on a pixel-space batch. Does not record a graph, so it
    /// is safe to call concurrently from several threads.
    pub fn forward(&self, batch: &Tensor<T>, capture: &[usize]) -> Result<ForwardOutput<T>> {
        let x = self.normalize_input(batch)?;
        self.forward_normalized(&x, capture)
    }

    /// Inference pass on an already-normalized batch.
    pub fn forward_normalized(&self, batch: &Tensor<T>, capture: &[usize]) -> Result<ForwardOutput<T>> {
        self.check_input(batch)?;
        self.check_capture(capture)?;
        let mut features = BTreeMap::new();
        let mut x = batch.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let shape = layer.output_shape(i, x.shape())?;
            x = layer.apply(&x, &shape);
            if capture.contains(&i) {
                features.insert(i, x.clone());
            }
        }
        Ok(ForwardOutput { logits: x, features })
    }

    pub fn logits(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(batch, &[])?.logits)
    }

    pub fn predict(&self, batch: &Tensor<T>) -> Result<Vec<usize>> {
        Ok(self.logits(batch)?.argmax_rows())
    }

    /// Pushes every parameter onto `tape` as a leaf, in [`Model::params`] order.
    pub fn param_leaves(&self, tape: &mut Tape<T>, requires_grad: bool) -> Vec<Var> {
        self.params().into_iter().map(|p| tape.leaf(p.clone(), requires_grad)).collect()
    }

    /// Records the forward pass of pixel-space `input` on `tape`.
    pub fn record(&self, tape: &mut Tape<T>, input: Var, params: &[Var]) -> Result<Var> {
        self.check_input(tape.value(input))?;
        let mut x = match &self.input_norm {
            Some(n) => {
                let (mean, std) = n.as_real::<T>();
                tape.channel_affine(input, &mean, &std)?
            }
            None => input,
        };
        let mut p = params.iter();
        let mut next = |ctx: &str| {
            p.next()
                .copied()
                .ok_or_else(|| Error::invalid(format!("missing parameter leaf for {ctx}")))
        };
        for (i, layer) in self.layers.iter().enumerate() {
            let shape = layer.output_shape(i, tape.value(x).shape())?;
            x = match layer {
                Layer::Dense { .. } => {
                    let (w, b) = (next("dense weight")?, next("dense bias")?);
                    tape.dense(x, w, b)?
                }
                Layer::Conv2d { pad, .. } => {
                    let (w, b) = (next("conv weight")?, next("conv bias")?);
                    tape.conv2d(x, w, b, *pad)?
                }
                Layer::Relu => tape.relu(x),
                Layer::MaxPool { size } => tape.maxpool(x, *size)?,
                Layer::Flatten => tape.reshape(x, &shape)?,
            };
        }
        Ok(x)
    }

    /// Weighted smoothed cross-entropy and its gradients.
    ///
    /// `weights` defaults to all ones; a zero weight removes that sample from
    /// both the loss and every gradient.
    pub fn loss_gradients(
        &self,
        batch: &Tensor<T>,
        labels: &[usize],
        smoothing: f64,
        weights: Option<&[T]>,
        want_input: bool,
    ) -> Result<LossGradients<T>> {
        if batch.dim0() != labels.len() {
            return Err(Error::shape("labels", &[batch.dim0()], &[labels.len()]));
        }
        let mut tape = Tape::new();
        let input = tape.leaf(batch.clone(), want_input);
        let params = self.param_leaves(&mut tape, true);
        let logits = self.record(&mut tape, input, &params)?;
        let targets = loss::smoothed_targets::<T>(labels, self.classes, smoothing)?;
        let ones;
        let w = match weights {
            Some(w) => w,
            None => {
                ones = vec![T::one(); labels.len()];
                &ones
            }
        };
        let l = tape.smoothed_cross_entropy(logits, &targets, w)?;
        let mut grads = tape.backward(l)?;
        let param_grads = params
            .iter()
            .map(|&p| grads.take(p).expect("parameter gradient"))
            .collect();
        Ok(LossGradients {
            loss: tape.value(l).data()[0],
            params: param_grads,
            input: if want_input { grads.take(input) } else { None },
            logits: tape.value(logits).clone(),
        })
    }
}

impl<T: Real> Model<T> {
    /// Mean cross-entropy of a pixel-space batch and its gradient with
    /// respect to the input; parameters are treated as constants.
    pub fn input_gradient(&self, batch: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
        if batch.dim0() != labels.len() {
            return Err(Error::shape("labels", &[batch.dim0()], &[labels.len()]));
        }
        let mut tape = Tape::new();
        let input = tape.leaf(batch.clone(), true);
        let params = self.param_leaves(&mut tape, false);
        let logits = self.record(&mut tape, input, &params)?;
        let targets = loss::smoothed_targets::<T>(labels, self.classes, 0.0)?;
        let l = tape.smoothed_cross_entropy(logits, &targets, &vec![T::one(); labels.len()])?;
        let mut grads = tape.backward(l)?;
        let g = grads.take(input).expect("input gradient");
        Ok((tape.value(l).data()[0], g))
    }
}

impl<T: Real> fmt::Display for Model<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [c, h, w] = self.input_shape;
        write!(f, "input {c}x{h}x{w}")?;
        for l in &self.layers {
            match l {
                Layer::Conv2d { weight, .. } => write!(f, " -> conv{}", weight.shape()[0])?,
                Layer::Dense { weight, .. } => write!(f, " -> dense{}", weight.shape()[0])?,
                Layer::MaxPool { size } => write!(f, " -> pool{size}")?,
                other => write!(f, " -> {}", other.name())?,
            }
        }
        write!(f, " ({} params, {} taps)", self.num_params(), self.taps.len())
    }
}

/// Recipe for the small reference networks: `conv → relu [→ pool]` blocks,
/// then an optional hidden dense layer and the classifier.
///
/// Feature taps sit on each block's ReLU output, before pooling.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvNetSpec {
    pub input_shape: [usize; 3],
    pub classes: usize,
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    /// Max-pool after every block when `> 1`.
    pub pool: usize,
    pub hidden: Option<usize>,
}

impl ConvNetSpec {
    pub fn new(input_shape: [usize; 3], classes: usize, conv_channels: &[usize]) -> Self {
        Self {
            input_shape,
            classes,
            conv_channels: conv_channels.to_vec(),
            kernel: 3,
            pool: 2,
            hidden: None,
        }
    }

    pub fn build(&self, seed: u64) -> Result<Model<f32>> {
        self.build_as::<f32>(seed)
    }

    /// Kaiming-normal weights and small uniform biases from `seed`.
    pub fn build_as<T: Real>(&self, seed: u64) -> Result<Model<T>> {
        if self.classes == 0 || self.kernel == 0 {
            return Err(Error::invalid("classes and kernel must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [mut ch, mut h, mut w] = self.input_shape;
        let pad = self.kernel / 2;
        let mut layers = Vec::new();
        let mut taps = Vec::new();
        for &out in &self.conv_channels {
            if out == 0 {
                return Err(Error::invalid("conv block with zero filters"));
            }
            let fan_in = ch * self.kernel * self.kernel;
            layers.push(Layer::Conv2d {
                weight: init_weight(&mut rng, &[out, ch, self.kernel, self.kernel], fan_in),
                bias: init_bias(&mut rng, out, fan_in),
                pad,
            });
            layers.push(Layer::Relu);
            taps.push(layers.len() - 1);
            ch = out;
            if self.pool > 1 && h >= self.pool && w >= self.pool {
                layers.push(Layer::MaxPool { size: self.pool });
                h /= self.pool;
                w /= self.pool;
            }
        }
        layers.push(Layer::Flatten);
        let mut width = ch * h * w;
        if let Some(hidden) = self.hidden {
            layers.push(Layer::Dense {
                weight: init_weight(&mut rng, &[hidden, width], width),
                bias: init_bias(&mut rng, hidden, width),
            });
            layers.push(Layer::Relu);
            width = hidden;
        }
        layers.push(Layer::Dense {
            weight: init_weight(&mut rng, &[self.classes, width], width),
            bias: init_bias(&mut rng, self.classes, width),
        });
        Model::new(self.input_shape, self.classes, layers, taps, None)
    }
}

fn init_weight<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of_f64(dist.sample(rng))).collect();
    Tensor::new(shape, data).expect("init shape")
}

fn init_bias<T: Real>(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::from_vec((0..n).map(|_| T::of_f64(rng.random_range(-bound..bound))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_dense_relu() {
        let layers = vec![
            Layer::Flatten,
            Layer::Dense {
                weight: Tensor::new(&[2, 2], vec![1.0f32, 0.0, 0.0, 1.0]).unwrap(),
                bias: Tensor::zeros(&[2]),
            },
            Layer::Relu,
        ];
        let m = Model::new([2, 1, 1], 2, layers, vec![], None).unwrap();
        let x = Tensor::new(&[1, 2, 1, 1], vec![1.0, -1.0]).unwrap();
        assert_eq!(m.logits(&x).unwrap().data(), &[1.0, 0.0]);
    }

    #[test]
    fn unit_conv_captures_scaled_map() {
        let layers = vec![
            Layer::Conv2d {
                weight: Tensor::new(&[1, 1, 1, 1], vec![2.0f32]).unwrap(),
                bias: Tensor::zeros(&[1]),
                pad: 0,
            },
            Layer::Relu,
            Layer::Flatten,
            Layer::Dense {
                weight: Tensor::zeros(&[2, 4]),
                bias: Tensor::zeros(&[2]),
            },
        ];
        let m = Model::new([1, 2, 2], 2, layers, vec![1], None).unwrap();
        let out = m.forward(&Tensor::full(&[1, 1, 2, 2], 1.0), &[1]).unwrap();
        assert_eq!(out.features[&1].shape(), &[1, 1, 2, 2]);
        assert!(out.features[&1].data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let layers = vec![
            Layer::Flatten,
            Layer::Dense {
                weight: Tensor::<f32>::zeros(&[2, 3]),
                bias: Tensor::zeros(&[2]),
            },
        ];
        let err = Model::new([2, 1, 1], 2, layers, vec![], None).unwrap_err();
        assert!(err.to_string().contains("layer 1 (dense)"), "{err}");
    }

    #[test]
    fn capture_must_be_a_tap() {
        let m = ConvNetSpec::new([1, 6, 6], 3, &[2]).build(1).unwrap();
        let x = Tensor::zeros(&[1, 1, 6, 6]);
        assert!(m.forward(&x, &[0]).is_err());
        assert!(m.forward(&x, m.taps()).is_ok());
    }

    #[test]
    fn forward_is_deterministic() {
        let m = ConvNetSpec::new([3, 8, 8], 4, &[4, 6]).build(7).unwrap();
        let x = Tensor::new(&[2, 3, 8, 8], (0..384).map(|i| (i as f32 * 0.37).sin()).collect()).unwrap();
        let a = m.forward(&x, m.taps()).unwrap();
        let b = m.forward(&x, m.taps()).unwrap();
        assert_eq!(a.logits, b.logits);
        assert_eq!(a.features, b.features);
    }

    #[test]
    fn recorded_and_inference_logits_agree() {
        let m = ConvNetSpec::new([2, 6, 6], 3, &[3]).build(3).unwrap();
        let x = Tensor::new(&[2, 2, 6, 6], (0..144).map(|i| (i as f32 * 0.11).cos()).collect()).unwrap();
        let g = m.loss_gradients(&x, &[0, 2], 0.0, None, false).unwrap();
        assert_eq!(g.logits, m.logits(&x).unwrap());
    }
}
