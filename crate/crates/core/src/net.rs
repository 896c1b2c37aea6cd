//! Sequential bottom-up inference.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{FeatureVolume, Shape3, Window};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    MaxPool,
    AvgPool,
    Relu,
    Fc,
    Softmax,
    Flatten,
}

/// Convolution parameters. Weights are `out x in x k x k`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub window: Window,
    pub in_channels: usize,
    pub out_channels: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv {
    pub fn new(
        window: Window,
        in_channels: usize,
        out_channels: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        let k = window.kernel;
        let expected = out_channels * in_channels * k * k;
        if weights.len() != expected {
            return Err(Error::Shape(format!(
                "conv weights need {out_channels}x{in_channels}x{k}x{k} = {expected} values, got {}",
                weights.len()
            )));
        }
        if bias.len() != out_channels {
            return Err(Error::Shape(format!(
                "conv bias needs {out_channels} values, got {}",
                bias.len()
            )));
        }
        if k == 0 || window.stride == 0 || window.padding >= k {
            return Err(Error::Shape(format!("bad conv window {window:?}")));
        }
        Ok(Self {
            window,
            in_channels,
            out_channels,
            weights,
            bias,
        })
    }

    #[inline]
    pub fn weight(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> f32 {
        let k = self.window.kernel;
        self.weights[((oc * self.in_channels + ic) * k + ky) * k + kx]
    }

    /// Kernel of output channel `oc`: `in x k x k`.
    pub fn kernel(&self, oc: usize) -> &[f32] {
        let len = self.in_channels * self.window.kernel * self.window.kernel;
        &self.weights[oc * len..(oc + 1) * len]
    }
}

/// Fully-connected parameters. Weights are `out x in`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_features: usize,
    pub out_features: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Dense {
    pub fn new(
        in_features: usize,
        out_features: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        if weights.len() != in_features * out_features {
            return Err(Error::Shape(format!(
                "fc weights need {out_features}x{in_features} values, got {}",
                weights.len()
            )));
        }
        if bias.len() != out_features {
            return Err(Error::Shape(format!(
                "fc bias needs {out_features} values, got {}",
                bias.len()
            )));
        }
        Ok(Self {
            in_features,
            out_features,
            weights,
            bias,
        })
    }

    pub fn row(&self, out: usize) -> &[f32] {
        &self.weights[out * self.in_features..(out + 1) * self.in_features]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerOp {
    Conv(Conv),
    MaxPool(Window),
    AvgPool(Window),
    Relu,
    Fc(Dense),
    Softmax,
    /// Bridge between the spatial stack and the fully-connected stack.
    Flatten,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub op: LayerOp,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, op: LayerOp) -> Self {
        Self {
            name: name.into(),
            op,
        }
    }

    pub fn relu(name: impl Into<String>) -> Self {
        Self::new(name, LayerOp::Relu)
    }

    pub fn softmax(name: impl Into<String>) -> Self {
        Self::new(name, LayerOp::Softmax)
    }

    pub fn flatten(name: impl Into<String>) -> Self {
        Self::new(name, LayerOp::Flatten)
    }

    pub fn max_pool(name: impl Into<String>, kernel: usize, stride: usize, padding: usize) -> Self {
        Self::new(name, LayerOp::MaxPool(Window::new(kernel, stride, padding)))
    }

    pub fn avg_pool(name: impl Into<String>, kernel: usize, stride: usize, padding: usize) -> Self {
        Self::new(name, LayerOp::AvgPool(Window::new(kernel, stride, padding)))
    }

    /// Convolution with every weight equal to `value` and zero bias.
    pub fn conv_uniform(
        name: impl Into<String>,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        value: f32,
    ) -> Self {
        let weights = vec![value; out_channels * in_channels * kernel * kernel];
        let conv = Conv::new(
            Window::new(kernel, stride, padding),
            in_channels,
            out_channels,
            weights,
            vec![0.0; out_channels],
        )
        .expect("uniform conv is well formed");
        Self::new(name, LayerOp::Conv(conv))
    }

    pub fn kind(&self) -> LayerKind {
        match self.op {
            LayerOp::Conv(_) => LayerKind::Conv,
            LayerOp::MaxPool(_) => LayerKind::MaxPool,
            LayerOp::AvgPool(_) => LayerKind::AvgPool,
            LayerOp::Relu => LayerKind::Relu,
            LayerOp::Fc(_) => LayerKind::Fc,
            LayerOp::Softmax => LayerKind::Softmax,
            LayerOp::Flatten => LayerKind::Flatten,
        }
    }

    /// Sliding window of spatial layers; relu counts as a 1x1 identity window.
    /// `None` for layers without spatial geometry.
    pub fn spatial_window(&self) -> Option<Window> {
        match &self.op {
            LayerOp::Conv(c) => Some(c.window),
            LayerOp::MaxPool(w) | LayerOp::AvgPool(w) => Some(*w),
            LayerOp::Relu => Some(Window::IDENTITY),
            LayerOp::Fc(_) | LayerOp::Softmax | LayerOp::Flatten => None,
        }
    }

    /// Output shape for an input of shape `input`.
    pub fn output_shape(&self, input: Shape3) -> Result<Shape3> {
        let spatial = |w: Window, channels: usize| -> Result<Shape3> {
            match (w.output_extent(input.height), w.output_extent(input.width)) {
                (Some(h), Some(wd)) => Ok(Shape3::new(channels, h, wd)),
                _ => Err(Error::Network(format!(
                    "layer `{}`: window {w:?} does not fit input {}x{}",
                    self.name, input.height, input.width
                ))),
            }
        };
        match &self.op {
            LayerOp::Conv(c) => {
                if c.in_channels != input.channels {
                    return Err(Error::Network(format!(
                        "layer `{}` expects {} input channels, got {}",
                        self.name, c.in_channels, input.channels
                    )));
                }
                spatial(c.window, c.out_channels)
            }
            LayerOp::MaxPool(w) | LayerOp::AvgPool(w) => {
                if w.kernel == 0 || w.stride == 0 || w.padding >= w.kernel {
                    return Err(Error::Network(format!(
                        "layer `{}`: bad window {w:?}",
                        self.name
                    )));
                }
                spatial(*w, input.channels)
            }
            LayerOp::Relu | LayerOp::Softmax => Ok(input),
            LayerOp::Flatten => Ok(Shape3::vector(input.len())),
            LayerOp::Fc(d) => {
                if d.in_features != input.len() {
                    return Err(Error::Network(format!(
                        "layer `{}` expects {} inputs, got {}",
                        self.name,
                        d.in_features,
                        input.len()
                    )));
                }
                Ok(Shape3::vector(d.out_features))
            }
        }
    }
}

/// Per-channel input normalisation applied before the first layer:
/// `(x - mean[c]) * scale[c]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocess {
    pub mean: Vec<f32>,
    pub scale: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input: Shape3,
    layers: Vec<LayerSpec>,
    shapes: Vec<Shape3>,
    bridge: Option<usize>,
    preprocess: Option<Preprocess>,
}

impl Network {
    pub fn new(input: Shape3, layers: Vec<LayerSpec>) -> Result<Self> {
        let mut shapes = Vec::with_capacity(layers.len() + 1);
        shapes.push(input);
        let mut bridge = None;
        for (i, layer) in layers.iter().enumerate() {
            if layers[..i].iter().any(|l| l.name == layer.name) {
                return Err(Error::Network(format!(
                    "duplicate layer name `{}`",
                    layer.name
                )));
            }
            match layer.kind() {
                LayerKind::Flatten if bridge.is_some() => {
                    return Err(Error::Network("more than one flatten layer".into()));
                }
                LayerKind::Flatten => bridge = Some(i),
                LayerKind::Fc if bridge.is_none() => {
                    return Err(Error::Network(format!(
                        "fc layer `{}` before flatten",
                        layer.name
                    )));
                }
                LayerKind::Conv | LayerKind::MaxPool | LayerKind::AvgPool if bridge.is_some() => {
                    return Err(Error::Network(format!(
                        "spatial layer `{}` after flatten",
                        layer.name
                    )));
                }
                _ => {}
            }
            let next = layer.output_shape(shapes[i])?;
            shapes.push(next);
        }
        Ok(Self {
            input,
            layers,
            shapes,
            bridge,
            preprocess: None,
        })
    }

    pub fn with_preprocess(mut self, preprocess: Preprocess) -> Result<Self> {
        let c = self.input.channels;
        if preprocess.mean.len() != c || preprocess.scale.len() != c {
            return Err(Error::Network(format!(
                "preprocess needs {c} mean and scale values"
            )));
        }
        self.preprocess = Some(preprocess);
        Ok(self)
    }

    pub fn input_shape(&self) -> Shape3 {
        self.input
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Shape of every volume: index 0 is the input, index `l` the output of layer `l - 1`.
    pub fn shapes(&self) -> &[Shape3] {
        &self.shapes
    }

    pub fn output_shape(&self) -> Shape3 {
        *self.shapes.last().expect("input shape always present")
    }

    pub fn num_classes(&self) -> usize {
        self.output_shape().len()
    }

    /// Index of the flatten layer, if any.
    pub fn bridge(&self) -> Option<usize> {
        self.bridge
    }

    pub fn preprocess(&self) -> Option<&Preprocess> {
        self.preprocess.as_ref()
    }

    /// Volume index produced by the layer called `name`; `"input"` is volume 0.
    pub fn volume_index(&self, name: &str) -> Result<usize> {
        if name == "input" {
            return Ok(0);
        }
        self.layers
            .iter()
            .position(|l| l.name == name)
            .map(|i| i + 1)
            .ok_or_else(|| Error::UnknownLayer(name.to_string()))
    }

    pub fn forward(&self, image: &FeatureVolume) -> Result<ActivationTrace> {
        network_forward(self, image)
    }
}

/// Every volume of one bottom-up pass; index 0 is the (preprocessed) input.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    volumes: Vec<FeatureVolume>,
}

impl ActivationTrace {
    pub fn volumes(&self) -> &[FeatureVolume] {
        &self.volumes
    }

    pub fn volume(&self, index: usize) -> &FeatureVolume {
        &self.volumes[index]
    }

    pub fn len(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }

    pub fn output(&self) -> &FeatureVolume {
        self.volumes.last().expect("trace holds at least the input")
    }
}

pub fn network_forward(net: &Network, image: &FeatureVolume) -> Result<ActivationTrace> {
    if image.shape() != net.input {
        return Err(Error::Shape(format!(
            "image {:?} does not match network input {:?}",
            image.shape(),
            net.input
        )));
    }
    let mut input = image.clone();
    if let Some(pre) = &net.preprocess {
        let plane = input.shape().plane();
        for (i, v) in input.data_mut().iter_mut().enumerate() {
            let c = i / plane;
            *v = (*v - pre.mean[c]) * pre.scale[c];
        }
    }
    let mut volumes = Vec::with_capacity(net.layers.len() + 1);
    volumes.push(input);
    for layer in &net.layers {
        let x = volumes.last().expect("nonempty");
        let y = layer_forward(x, layer)?;
        if !y.is_finite() {
            return Err(Error::NonFinite(layer.name.clone()));
        }
        volumes.push(y);
    }
    Ok(ActivationTrace { volumes })
}

pub fn layer_forward(input: &FeatureVolume, layer: &LayerSpec) -> Result<FeatureVolume> {
    match &layer.op {
        LayerOp::Conv(c) => conv_forward(input, c),
        LayerOp::MaxPool(w) => maxpool_forward(input, *w),
        LayerOp::AvgPool(w) => avgpool_forward(input, *w),
        LayerOp::Relu => Ok(relu_forward(input)),
        LayerOp::Fc(d) => fc_forward(input, d),
        LayerOp::Softmax => Ok(softmax_forward(input)),
        LayerOp::Flatten => Ok(flatten(input)),
    }
}

fn spatial_out(input: Shape3, w: Window, channels: usize) -> Result<Shape3> {
    match (w.output_extent(input.height), w.output_extent(input.width)) {
        (Some(h), Some(wd)) => Ok(Shape3::new(channels, h, wd)),
        _ => Err(Error::Shape(format!("window {w:?} does not fit {input:?}"))),
    }
}

pub fn conv_forward(input: &FeatureVolume, conv: &Conv) -> Result<FeatureVolume> {
    let ishape = input.shape();
    if ishape.channels != conv.in_channels {
        return Err(Error::Shape(format!(
            "conv expects {} channels, got {}",
            conv.in_channels, ishape.channels
        )));
    }
    let w = conv.window;
    let oshape = spatial_out(ishape, w, conv.out_channels)?;
    let mut out = vec![0f32; oshape.len()];
    out.par_chunks_mut(oshape.plane())
        .enumerate()
        .for_each(|(oc, sheet)| {
            for oy in 0..oshape.height {
                let rows = w.input_span(oy, ishape.height);
                for ox in 0..oshape.width {
                    let cols = w.input_span(ox, ishape.width);
                    let mut acc = conv.bias[oc] as f64;
                    for ic in 0..ishape.channels {
                        for y in rows.clone() {
                            let ky = w.kernel_offset(oy, y);
                            for x in cols.clone() {
                                let kx = w.kernel_offset(ox, x);
                                acc +=
                                    input.get(ic, y, x) as f64 * conv.weight(oc, ic, ky, kx) as f64;
                            }
                        }
                    }
                    sheet[oy * oshape.width + ox] = acc as f32;
                }
            }
        });
    FeatureVolume::new(oshape, out)
}

fn pool_forward(
    input: &FeatureVolume,
    w: Window,
    reduce: impl Fn(&mut dyn Iterator<Item = f32>) -> f32 + Sync,
) -> Result<FeatureVolume> {
    let ishape = input.shape();
    let oshape = spatial_out(ishape, w, ishape.channels)?;
    let mut out = vec![0f32; oshape.len()];
    out.par_chunks_mut(oshape.plane())
        .enumerate()
        .for_each(|(c, sheet)| {
            let src = input.channel(c);
            for oy in 0..oshape.height {
                let rows = w.input_span(oy, ishape.height);
                for ox in 0..oshape.width {
                    let cols = w.input_span(ox, ishape.width);
                    let mut it = rows
                        .clone()
                        .flat_map(|y| cols.clone().map(move |x| (y, x)))
                        .map(|(y, x)| src[y * ishape.width + x]);
                    sheet[oy * oshape.width + ox] = reduce(&mut it);
                }
            }
        });
    FeatureVolume::new(oshape, out)
}

/// Max over the unpadded part of each window.
pub fn maxpool_forward(input: &FeatureVolume, window: Window) -> Result<FeatureVolume> {
    pool_forward(input, window, |it| it.fold(f32::NEG_INFINITY, f32::max))
}

/// Window sum divided by `k * k`; padded positions contribute zero.
pub fn avgpool_forward(input: &FeatureVolume, window: Window) -> Result<FeatureVolume> {
    let area = (window.kernel * window.kernel) as f64;
    pool_forward(input, window, move |it| {
        (it.map(|v| v as f64).sum::<f64>() / area) as f32
    })
}

pub fn relu_forward(input: &FeatureVolume) -> FeatureVolume {
    let data = input.data().iter().map(|v| v.max(0.0)).collect();
    FeatureVolume::new(input.shape(), data).expect("same shape")
}

pub fn flatten(input: &FeatureVolume) -> FeatureVolume {
    input
        .reshaped(Shape3::vector(input.shape().len()))
        .expect("same length")
}

pub fn fc_forward(input: &FeatureVolume, dense: &Dense) -> Result<FeatureVolume> {
    let ishape = input.shape();
    if ishape.height != 1 || ishape.width != 1 {
        return Err(Error::Shape(format!(
            "fc needs a flattened vector, got {ishape:?}"
        )));
    }
    if ishape.len() != dense.in_features {
        return Err(Error::Shape(format!(
            "fc expects {} inputs, got {}",
            dense.in_features,
            ishape.len()
        )));
    }
    let x = input.data();
    let out: Vec<f32> = (0..dense.out_features)
        .into_par_iter()
        .map(|o| {
            let acc = dense
                .row(o)
                .iter()
                .zip(x)
                .fold(dense.bias[o] as f64, |acc, (w, v)| {
                    acc + *w as f64 * *v as f64
                });
            acc as f32
        })
        .collect();
    FeatureVolume::new(Shape3::vector(dense.out_features), out)
}

/// Softmax over every element of the volume.
pub fn softmax_forward(input: &FeatureVolume) -> FeatureVolume {
    let data = input.data();
    let max = data.iter().fold(f32::NEG_INFINITY, |m, v| m.max(*v)) as f64;
    let exps: Vec<f64> = data.iter().map(|v| (*v as f64 - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let out = exps.iter().map(|e| (e / total) as f32).collect();
    FeatureVolume::new(input.shape(), out).expect("same shape")
}
