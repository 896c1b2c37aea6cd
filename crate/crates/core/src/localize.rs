//! Attention maps, box proposals and IoU-based localization scoring.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{td_pass, SelectionConfig, TdOutcome};
use crate::error::{Error, Result};
use crate::net::Network;
use crate::tensor::{rf_geometry, FeatureVolume, GatingVolume, RfGeometry};

/// Channel-collapsed gating volume.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttentionMap {
    pub height: usize,
    pub width: usize,
    /// Row-major, `height * width`.
    pub values: Vec<f64>,
    pub layer: String,
    pub class_k: usize,
}

impl AttentionMap {
    #[inline]
    pub fn get(&self, h: usize, w: usize) -> f64 {
        self.values[h * self.width + w]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn nonzero_count(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }
}

pub fn attention_map(gating: &GatingVolume, layer: &str, class_k: usize) -> AttentionMap {
    let shape = gating.shape();
    let plane = shape.plane();
    let mut values = vec![0.0; plane];
    for c in 0..shape.channels {
        let sheet = &gating.data()[c * plane..(c + 1) * plane];
        for (v, g) in values.iter_mut().zip(sheet) {
            *v += g;
        }
    }
    AttentionMap {
        height: shape.height,
        width: shape.width,
        values,
        layer: layer.to_string(),
        class_k,
    }
}

/// Which cells the post-processing mean is taken over.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdMode {
    /// Mean over every cell, zeros included.
    #[default]
    MeanAll,
    /// Mean over the nonzero cells only.
    MeanNonzero,
}

/// Zeroes every entry strictly below the map mean.
pub fn threshold_map(map: &AttentionMap, mode: ThresholdMode) -> AttentionMap {
    let mean = match mode {
        ThresholdMode::MeanAll => map.sum() / map.values.len().max(1) as f64,
        ThresholdMode::MeanNonzero => {
            let n = map.nonzero_count();
            if n == 0 {
                0.0
            } else {
                map.sum() / n as f64
            }
        }
    };
    AttentionMap {
        values: map
            .values
            .iter()
            .map(|v| if *v < mean { 0.0 } else { *v })
            .collect(),
        ..map.clone()
    }
}

/// Input-image extent, `(height, width)`.
pub type ImageDims = (usize, usize);

fn project(coord: f64, extent: usize) -> usize {
    let p = (coord + 0.5).floor();
    p.clamp(0.0, (extent - 1) as f64) as usize
}

/// Input-pixel `(row, col)` anchor of every nonzero map cell.
pub fn map_to_input(
    map: &AttentionMap,
    geom: &RfGeometry,
    image: ImageDims,
) -> Vec<(usize, usize)> {
    let mut points = Vec::new();
    for h in 0..map.height {
        for w in 0..map.width {
            if map.get(h, w) != 0.0 {
                points.push((
                    project(geom.center(h), image.0),
                    project(geom.center(w), image.1),
                ));
            }
        }
    }
    points
}

/// Axis-aligned box in input pixels, bounds inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl BBox {
    pub fn new(x_min: usize, y_min: usize, x_max: usize, y_max: usize) -> Self {
        assert!(x_min <= x_max && y_min <= y_max, "inverted box");
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> usize {
        self.x_max - self.x_min + 1
    }

    pub fn height(&self) -> usize {
        self.y_max - self.y_min + 1
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.y_min..=self.y_max).contains(&row) && (self.x_min..=self.x_max).contains(&col)
    }

    pub fn from_corners(c: [usize; 4]) -> Result<Self> {
        let [x0, y0, x1, y1] = c;
        if x0 > x1 || y0 > y1 {
            return Err(Error::Config(format!("inverted box {c:?}")));
        }
        Ok(Self::new(x0, y0, x1, y1))
    }
}

/// Tight box around `points`, padded by half the receptive field and clipped.
pub fn propose_bbox(
    points: &[(usize, usize)],
    geom: &RfGeometry,
    image: ImageDims,
) -> Result<BBox> {
    let (first, rest) = points.split_first().ok_or(Error::NoAttendedRegion)?;
    let (mut y0, mut x0) = *first;
    let (mut y1, mut x1) = *first;
    for &(y, x) in rest {
        y0 = y0.min(y);
        y1 = y1.max(y);
        x0 = x0.min(x);
        x1 = x1.max(x);
    }
    let pad = geom.rf_size / 2;
    Ok(BBox::new(
        x0.saturating_sub(pad),
        y0.saturating_sub(pad),
        (x1 + pad).min(image.1 - 1),
        (y1 + pad).min(image.0 - 1),
    ))
}

/// Intersection over union with inclusive pixel areas.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let x0 = a.x_min.max(b.x_min);
    let y0 = a.y_min.max(b.y_min);
    let x1 = a.x_max.min(b.x_max);
    let y1 = a.y_max.min(b.y_max);
    if x0 > x1 || y0 > y1 {
        return 0.0;
    }
    let inter = ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64;
    inter / (a.area() as f64 + b.area() as f64 - inter)
}

/// Everything produced while localizing one image.
#[derive(Debug, Clone)]
pub struct Localization {
    pub td: TdOutcome,
    pub geometry: RfGeometry,
    pub map: AttentionMap,
    pub thresholded: AttentionMap,
    pub points: Vec<(usize, usize)>,
    pub bbox: BBox,
}

/// Forward pass, top-down pass for `class_k`, and box proposal.
pub fn localize(
    net: &Network,
    image: &FeatureVolume,
    class_k: usize,
    selection: &SelectionConfig,
    threshold: ThresholdMode,
) -> Result<Localization> {
    let trace = net.forward(image)?;
    let td = td_pass(&trace, net, class_k, selection)?;
    let geometry = rf_geometry(&net.layers()[..td.stop])?;
    let map = attention_map(td.gating(), &selection.stop_layer, class_k);
    let thresholded = threshold_map(&map, threshold);
    let input = net.input_shape();
    let dims = (input.height, input.width);
    let points = map_to_input(&thresholded, &geometry, dims);
    let bbox = propose_bbox(&points, &geometry, dims)?;
    Ok(Localization {
        td,
        geometry,
        map,
        thresholded,
        points,
        bbox,
    })
}

/// One line of a dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label_index: usize,
    /// `[x0, y0, x1, y1]`, inclusive.
    pub boxes: Vec<[usize; 4]>,
}

/// Parses a JSON-lines manifest. Blank lines are skipped.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Config(format!("manifest line {}: {e}", n + 1)))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub name: String,
    pub image: FeatureVolume,
    pub label: usize,
    pub boxes: Vec<BBox>,
}

/// Reads a manifest and every image it lists. Relative image paths resolve
/// against the manifest's directory.
pub fn load_dataset(manifest: &Path) -> Result<Vec<Sample>> {
    let text = std::fs::read_to_string(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    parse_manifest(&text)?
        .into_iter()
        .map(|entry| {
            let path = if entry.path.is_absolute() {
                entry.path.clone()
            } else {
                base.join(&entry.path)
            };
            let boxes = entry
                .boxes
                .iter()
                .map(|b| BBox::from_corners(*b))
                .collect::<Result<_>>()?;
            Ok(Sample {
                name: entry.path.display().to_string(),
                image: crate::model_io::read_image(&path)?,
                label: entry.label_index,
                boxes,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageResult {
    pub name: String,
    pub label: usize,
    pub bbox: Option<BBox>,
    /// Best IoU over the ground-truth boxes.
    pub iou: Option<f64>,
    pub correct: bool,
    pub active_fraction: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparsityStats {
    pub mean_active_fraction: f64,
    pub max_active_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalizationReport {
    pub images: usize,
    pub correct: usize,
    pub error_rate: f64,
    pub iou_threshold: f64,
    pub mean_iou: f64,
    /// Mean predicted-box area over images that produced a box.
    pub mean_box_area: f64,
    pub failures: usize,
    pub sparsity: SparsityStats,
    pub per_image: Vec<ImageResult>,
}

impl LocalizationReport {
    /// Aligned plain-text summary.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<32} {:>5} {:>7} {:>8} {:>8}  box",
            "image", "label", "iou", "correct", "active"
        );
        for r in &self.per_image {
            let iou = r.iou.map_or("-".to_string(), |v| format!("{v:.3}"));
            let active = r
                .active_fraction
                .map_or("-".to_string(), |v| format!("{:.2}%", v * 100.0));
            let bbox = match (&r.bbox, &r.error) {
                (Some(b), _) => format!("({},{})-({},{})", b.x_min, b.y_min, b.x_max, b.y_max),
                (None, Some(e)) => e.clone(),
                (None, None) => "-".into(),
            };
            let _ = writeln!(
                out,
                "{:<32} {:>5} {:>7} {:>8} {:>8}  {}",
                r.name,
                r.label,
                iou,
                if r.correct { "yes" } else { "no" },
                active,
                bbox
            );
        }
        let _ = writeln!(
            out,
            "error rate {:.4} ({} / {} correct, {} failed), mean IoU {:.3}, mean active {:.3}%",
            self.error_rate,
            self.correct,
            self.images,
            self.failures,
            self.mean_iou,
            self.sparsity.mean_active_fraction * 100.0
        );
        out
    }
}

/// Localization is counted correct above this IoU with any ground-truth box.
pub const IOU_THRESHOLD: f64 = 0.5;

/// Runs the ground-truth-initiated localization protocol over `dataset`.
pub fn evaluate(
    dataset: &[Sample],
    net: &Network,
    selection: &SelectionConfig,
    threshold: ThresholdMode,
) -> Result<LocalizationReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    selection.validate()?;
    let per_image: Vec<ImageResult> = dataset
        .par_iter()
        .map(
            |s| match localize(net, &s.image, s.label, selection, threshold) {
                Ok(loc) => {
                    let best = s
                        .boxes
                        .iter()
                        .map(|gt| iou(&loc.bbox, gt))
                        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
                    ImageResult {
                        name: s.name.clone(),
                        label: s.label,
                        bbox: Some(loc.bbox),
                        iou: best,
                        correct: best.is_some_and(|v| v > IOU_THRESHOLD),
                        active_fraction: Some(loc.td.active_fraction()),
                        error: None,
                    }
                }
                Err(e) => {
                    log::warn!("{}: {e}", s.name);
                    ImageResult {
                        name: s.name.clone(),
                        label: s.label,
                        bbox: None,
                        iou: None,
                        correct: false,
                        active_fraction: None,
                        error: Some(e.to_string()),
                    }
                }
            },
        )
        .collect();

    let images = per_image.len();
    let correct = per_image.iter().filter(|r| r.correct).count();
    let with_box: Vec<&ImageResult> = per_image.iter().filter(|r| r.bbox.is_some()).collect();
    let mean = |xs: &mut dyn Iterator<Item = f64>, n: usize| {
        if n == 0 {
            0.0
        } else {
            xs.sum::<f64>() / n as f64
        }
    };
    let mean_iou = mean(&mut per_image.iter().map(|r| r.iou.unwrap_or(0.0)), images);
    let mean_box_area = mean(
        &mut with_box
            .iter()
            .map(|r| r.bbox.map_or(0.0, |b| b.area() as f64)),
        with_box.len(),
    );
    let fractions: Vec<f64> = per_image.iter().filter_map(|r| r.active_fraction).collect();
    let sparsity = SparsityStats {
        mean_active_fraction: mean(&mut fractions.iter().copied(), fractions.len()),
        max_active_fraction: fractions.iter().copied().fold(0.0, f64::max),
    };
    Ok(LocalizationReport {
        images,
        correct,
        error_rate: 1.0 - correct as f64 / images as f64,
        iou_threshold: IOU_THRESHOLD,
        mean_iou,
        mean_box_area,
        failures: images - with_box.len(),
        sparsity,
        per_image,
    })
}
