//! Class-hypothesis maps: receptive-field vote counts at attended pixels,
//! smoothed and rendered as grayscale or heat overlays.

use std::path::Path;

use crate::error::{Error, Result};
use crate::localize::ImageDims;
use crate::model_io::{write_pnm, PnmImage};
use crate::tensor::RfGeometry;

/// Default smoothing width.
pub const DEFAULT_SIGMA: f64 = 6.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ChMap {
    pub height: usize,
    pub width: usize,
    /// Row-major.
    pub values: Vec<f64>,
}

impl ChMap {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Inclusive pixel span of an `rf`-wide box centred on `p`, clipped to `[0, n)`.
fn box_span(p: usize, rf: usize, n: usize) -> std::ops::RangeInclusive<usize> {
    let lo = p.saturating_sub(rf / 2);
    let hi = (p + rf - 1 - rf / 2).min(n - 1);
    lo..=hi
}

/// Adds one vote to every pixel of the receptive-field box around each anchor.
pub fn ch_accumulate(points: &[(usize, usize)], geom: &RfGeometry, image: ImageDims) -> ChMap {
    let (h, w) = image;
    let mut map = ChMap::zeros(h, w);
    for &(row, col) in points {
        for y in box_span(row, geom.rf_size, h) {
            for x in box_span(col, geom.rf_size, w) {
                map.values[y * w + x] += 1.0;
            }
        }
    }
    map
}

/// Mirror index into `[0, n)` without repeating the edge sample.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Normalised 1-D Gaussian taps, radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable Gaussian blur with reflected borders.
pub fn gaussian_smooth(map: &ChMap, sigma: f64) -> Result<ChMap> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let (h, w) = (map.height, map.width);

    let mut rows = vec![0.0; h * w];
    for y in 0..h {
        let src = &map.values[y * w..(y + 1) * w];
        for x in 0..w {
            rows[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, t)| t * src[reflect(x as isize + k as isize - radius, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, t)| t * rows[reflect(y as isize + k as isize - radius, h) * w + x])
                .sum();
        }
    }
    Ok(ChMap {
        height: h,
        width: w,
        values: out,
    })
}

/// Min-max normalises to 0..=255; a flat map renders as mid-gray.
pub fn to_gray(map: &ChMap) -> PnmImage {
    let (lo, hi) = (map.min(), map.max());
    let pixels = if hi > lo {
        map.values
            .iter()
            .map(|v| ((v - lo) / (hi - lo) * 255.0).round() as u8)
            .collect()
    } else {
        vec![128; map.values.len()]
    };
    PnmImage::gray(map.width, map.height, pixels).expect("map dims are consistent")
}

fn heat(t: f64) -> [f64; 3] {
    let ramp = |c: f64| (1.5 - (4.0 * t - c).abs()).clamp(0.0, 1.0);
    [ramp(3.0), ramp(2.0), ramp(1.0)]
}

/// Blends a heat colouring of `map` over `source` (gray or RGB, same size).
pub fn overlay(map: &ChMap, source: &PnmImage, opacity: f64) -> Result<PnmImage> {
    if source.width != map.width || source.height != map.height {
        return Err(Error::Image(format!(
            "overlay source is {}x{}, map is {}x{}",
            source.width, source.height, map.width, map.height
        )));
    }
    let gray = to_gray(map);
    let mut pixels = Vec::with_capacity(map.values.len() * 3);
    for (i, g) in gray.pixels.iter().enumerate() {
        let rgb = heat(*g as f64 / 255.0);
        for (ch, h) in rgb.iter().enumerate() {
            let s = if source.channels == 3 {
                source.pixels[i * 3 + ch]
            } else {
                source.pixels[i]
            } as f64;
            pixels.push(
                ((1.0 - opacity) * s + opacity * h * 255.0)
                    .round()
                    .clamp(0.0, 255.0) as u8,
            );
        }
    }
    PnmImage::rgb(map.width, map.height, pixels)
}

/// Writes `map` as a binary grayscale PGM.
pub fn render(map: &ChMap, path: &Path) -> Result<()> {
    if map.values.is_empty() {
        return Err(Error::Image("empty map".into()));
    }
    write_pnm(path, &to_gray(map))
}
