use crate::error::{Error, Result};
use crate::net::{ActivationTrace, LayerOp, Network};
use crate::tensor::{rf_window, Shape3};

/// Post-synaptic activities of one top node: each lower activation in its
/// receptive field multiplied by the connecting weight.
///
/// Spatial fields are laid out channel, row, column over the (clipped)
/// receptive-field window, so entry `i` sits in window cell `i % cells`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsField {
    values: Vec<f64>,
    sources: Vec<usize>,
    window: Option<(usize, usize)>,
}

impl PsField {
    pub fn new(values: Vec<f64>, sources: Vec<usize>, window: Option<(usize, usize)>) -> Self {
        assert_eq!(values.len(), sources.len());
        if let Some((h, w)) = window {
            assert!(h * w > 0 && values.len().is_multiple_of(h * w));
        }
        Self {
            values,
            sources,
            window,
        }
    }

    /// Non-spatial field (fully-connected rows), sources `0..n`.
    pub fn vector(values: Vec<f64>) -> Self {
        let sources = (0..values.len()).collect();
        Self::new(values, sources, None)
    }

    /// Spatial field over a `rows x cols` window with `values.len() / (rows * cols)` channels.
    pub fn spatial(values: Vec<f64>, rows: usize, cols: usize) -> Self {
        let sources = (0..values.len()).collect();
        Self::new(values, sources, Some((rows, cols)))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Flat lower-volume index of every entry.
    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `(rows, cols)` of the receptive-field window for spatial layers.
    pub fn window(&self) -> Option<(usize, usize)> {
        self.window
    }

    /// Window cell (row-major) of entry `i`, for spatial fields.
    pub fn cell(&self, i: usize) -> Option<usize> {
        self.window.map(|(h, w)| i % (h * w))
    }

    pub fn has_positive(&self) -> bool {
        self.values.iter().any(|v| *v > 0.0)
    }
}

/// PS field of the node at flat index `top` in the output of layer `layer`.
pub fn ps_activities(
    trace: &ActivationTrace,
    net: &Network,
    layer: usize,
    top: usize,
) -> Result<PsField> {
    let spec = net
        .layers()
        .get(layer)
        .ok_or_else(|| Error::UnknownLayer(format!("#{layer}")))?;
    let lower = trace.volume(layer);
    let upper = trace.volume(layer + 1);
    let ushape = upper.shape();
    if top >= ushape.len() {
        let (c, h, w) = ushape.coords(top.min(ushape.len().saturating_sub(1)));
        return Err(Error::OutOfRange {
            position: (c, h, w),
            extent: (ushape.channels, ushape.height, ushape.width),
        });
    }
    let lshape = lower.shape();
    let (c, h, w) = ushape.coords(top);
    let x = lower.data();

    match &spec.op {
        LayerOp::Fc(dense) => {
            let values = dense
                .row(top)
                .iter()
                .zip(x)
                .map(|(wt, v)| *wt as f64 * *v as f64)
                .collect();
            Ok(PsField::vector(values))
        }
        LayerOp::Conv(conv) => {
            let win = rf_window(spec, (h, w), (lshape.height, lshape.width))?;
            let cw = conv.window;
            let n = lshape.channels * win.height() * win.width();
            let mut values = Vec::with_capacity(n);
            let mut sources = Vec::with_capacity(n);
            for ic in 0..lshape.channels {
                for y in win.rows.clone() {
                    let ky = cw.kernel_offset(h, y);
                    for xx in win.cols.clone() {
                        let kx = cw.kernel_offset(w, xx);
                        let idx = lshape.index(ic, y, xx);
                        values.push(x[idx] as f64 * conv.weight(c, ic, ky, kx) as f64);
                        sources.push(idx);
                    }
                }
            }
            Ok(PsField::new(
                values,
                sources,
                Some((win.height(), win.width())),
            ))
        }
        LayerOp::MaxPool(_) | LayerOp::AvgPool(_) => {
            let win = rf_window(spec, (h, w), (lshape.height, lshape.width))?;
            let sources = channel_window(lshape, c, &win.rows, &win.cols);
            let values = match &spec.op {
                LayerOp::MaxPool(_) => {
                    // route everything to the first maximal source
                    let mut best = 0;
                    for (i, idx) in sources.iter().enumerate() {
                        if x[*idx] > x[sources[best]] {
                            best = i;
                        }
                    }
                    let mut v = vec![0.0; sources.len()];
                    v[best] = upper.data()[top] as f64;
                    v
                }
                LayerOp::AvgPool(pw) => {
                    let area = (pw.kernel * pw.kernel) as f64;
                    sources.iter().map(|idx| x[*idx] as f64 / area).collect()
                }
                _ => unreachable!(),
            };
            Ok(PsField::new(
                values,
                sources,
                Some((win.height(), win.width())),
            ))
        }
        LayerOp::Relu | LayerOp::Softmax | LayerOp::Flatten => {
            Err(Error::NoPsField(spec.name.clone()))
        }
    }
}

fn channel_window(
    shape: Shape3,
    c: usize,
    rows: &std::ops::Range<usize>,
    cols: &std::ops::Range<usize>,
) -> Vec<usize> {
    rows.clone()
        .flat_map(|y| cols.clone().map(move |x| shape.index(c, y, x)))
        .collect()
}
