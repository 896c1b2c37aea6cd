//! Dense volumes and receptive-field arithmetic.
//!
//! Every volume is stored channel-outermost: element `(c, h, w)` lives at
//! `c * height * width + h * width + w`, so one channel's spatial sheet is a
//! contiguous slice.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::LayerSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape3 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape3 {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    /// A 1-D vector of `n` features, laid out as `1 x 1 x n`.
    pub const fn vector(n: usize) -> Self {
        Self::new(n, 1, 1)
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub const fn index(&self, c: usize, h: usize, w: usize) -> usize {
        (c * self.height + h) * self.width + w
    }

    /// Inverse of [`Shape3::index`], returning `(c, h, w)`.
    #[inline]
    pub const fn coords(&self, index: usize) -> (usize, usize, usize) {
        let plane = self.plane();
        let c = index / plane;
        let rem = index % plane;
        (c, rem / self.width, rem % self.width)
    }
}

/// Hidden-node activities of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVolume {
    shape: Shape3,
    data: Vec<f32>,
}

impl FeatureVolume {
    pub fn new(shape: Shape3, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::Shape(format!(
                "volume {shape:?} needs {} values, got {}",
                shape.len(),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape3) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn from_fn(shape: Shape3, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..shape.channels {
            for h in 0..shape.height {
                for w in 0..shape.width {
                    data.push(f(c, h, w));
                }
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, h: usize, w: usize) -> f32 {
        self.data[self.shape.index(c, h, w)]
    }

    /// Spatial sheet of channel `c`.
    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.shape.plane();
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same data reinterpreted under another shape of equal length.
    pub fn reshaped(&self, shape: Shape3) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }
}

/// Top-down gating activities, one per hidden node.
#[derive(Debug, Clone, PartialEq)]
pub struct GatingVolume {
    shape: Shape3,
    data: Vec<f64>,
}

impl GatingVolume {
    pub fn zeros(shape: Shape3) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    /// Top-layer initialisation: 1 at `index`, 0 everywhere else.
    pub fn one_hot(shape: Shape3, index: usize) -> Result<Self> {
        if index >= shape.len() {
            return Err(Error::BadClass {
                index,
                classes: shape.len(),
            });
        }
        let mut g = Self::zeros(shape);
        g.data[index] = 1.0;
        Ok(g)
    }

    pub fn from_data(shape: Shape3, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::Shape(format!(
                "gating {shape:?} needs {} values, got {}",
                shape.len(),
                data.len()
            )));
        }
        if data.iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(Error::Shape("gating activities must be >= 0".into()));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.shape.index(c, h, w)]
    }

    /// Adds a nonnegative increment to the node at flat `index`.
    #[inline]
    pub fn add(&mut self, index: usize, amount: f64) {
        debug_assert!(amount >= 0.0);
        self.data[index] += amount;
    }

    pub fn zero_at(&mut self, index: usize) {
        self.data[index] = 0.0;
    }

    pub fn mass(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn active_count(&self) -> usize {
        self.data.iter().filter(|v| **v > 0.0).count()
    }

    /// Flat indices of nonzero nodes in scan order.
    pub fn active_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0.0)
            .map(|(i, _)| i)
    }

    pub(crate) fn reshape_into(self, shape: Shape3) -> Self {
        debug_assert_eq!(shape.len(), self.data.len());
        Self {
            shape,
            data: self.data,
        }
    }
}

/// Square sliding window of a convolution or pooling layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Window {
    pub const IDENTITY: Window = Window {
        kernel: 1,
        stride: 1,
        padding: 0,
    };

    pub const fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
        }
    }

    /// Output extent along one axis, or `None` when the window does not fit.
    pub fn output_extent(&self, input: usize) -> Option<usize> {
        if self.kernel == 0 || self.stride == 0 {
            return None;
        }
        let padded = input + 2 * self.padding;
        if padded < self.kernel {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }

    /// Lower-layer positions feeding output position `top` along one axis,
    /// clipped to `[0, input)`. Padded positions are not part of the span.
    pub fn input_span(&self, top: usize, input: usize) -> Range<usize> {
        let start = (top * self.stride) as isize - self.padding as isize;
        let end = start + self.kernel as isize;
        let lo = start.max(0) as usize;
        let hi = (end.max(0) as usize).min(input);
        lo..hi.max(lo)
    }

    /// Position inside the kernel of lower position `pos` for output `top`.
    #[inline]
    pub fn kernel_offset(&self, top: usize, pos: usize) -> usize {
        pos + self.padding - top * self.stride
    }
}

/// Accumulated input-pixel footprint of a node at some depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfGeometry {
    /// Receptive-field side length in input pixels.
    pub rf_size: usize,
    /// Input pixels between adjacent nodes (product of strides below).
    pub jump: usize,
    /// Input coordinate of the first node's receptive-field centre.
    pub offset: f64,
}

impl RfGeometry {
    pub const IDENTITY: RfGeometry = RfGeometry {
        rf_size: 1,
        jump: 1,
        offset: 0.0,
    };

    /// Geometry after stacking one more window on top.
    pub fn then(self, window: Window) -> Self {
        let k = window.kernel;
        RfGeometry {
            rf_size: self.rf_size + (k - 1) * self.jump,
            jump: self.jump * window.stride,
            offset: self.offset
                + ((k as f64 - 1.0) / 2.0 - window.padding as f64) * self.jump as f64,
        }
    }

    /// Input coordinate of the centre of node `index` along one axis.
    pub fn center(&self, index: usize) -> f64 {
        self.offset + (index * self.jump) as f64
    }
}

/// Composes the receptive-field geometry of `layers`, applied bottom-up.
pub fn rf_geometry(layers: &[LayerSpec]) -> Result<RfGeometry> {
    layers.iter().try_fold(RfGeometry::IDENTITY, |geom, layer| {
        layer
            .spatial_window()
            .map(|w| geom.then(w))
            .ok_or_else(|| Error::GeometryPastBridge(layer.name.clone()))
    })
}

/// Spatial cuboid of lower nodes feeding one top node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RfWindow {
    pub rows: Range<usize>,
    pub cols: Range<usize>,
}

impl RfWindow {
    pub fn height(&self) -> usize {
        self.rows.len()
    }

    pub fn width(&self) -> usize {
        self.cols.len()
    }
}

/// Lower-layer rows and columns inside the receptive field of the node at
/// `top = (h, w)` of a spatial `layer` whose input has spatial extent `lower`.
pub fn rf_window(
    layer: &LayerSpec,
    top: (usize, usize),
    lower: (usize, usize),
) -> Result<RfWindow> {
    let window = layer
        .spatial_window()
        .ok_or_else(|| Error::GeometryPastBridge(layer.name.clone()))?;
    let out_h = window.output_extent(lower.0);
    let out_w = window.output_extent(lower.1);
    match (out_h, out_w) {
        (Some(oh), Some(ow)) if top.0 < oh && top.1 < ow => Ok(RfWindow {
            rows: window.input_span(top.0, lower.0),
            cols: window.input_span(top.1, lower.1),
        }),
        _ => Err(Error::OutOfRange {
            position: (0, top.0, top.1),
            extent: (0, out_h.unwrap_or(0), out_w.unwrap_or(0)),
        }),
    }
}
