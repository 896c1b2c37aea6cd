//! The three selection stages applied to one top gating node.

use crate::attention::ps::PsField;
use crate::attention::regions::{label_regions, winning_region};
use crate::error::{Error, Result};
use crate::tensor::GatingVolume;

/// Coefficients scanned by the statistical (SI) grouping, strictest first.
pub const SI_COEFFICIENTS: [i32; 7] = [3, 2, 1, 0, -1, -2, -3];

/// Lower bound of the parametric WTA margin.
///
/// Starting from the sum of all non-positive activities, positives are added
/// largest first until the running total reaches `epsilon`; the last positive
/// added is returned. When the positives run out first, the smallest positive
/// is returned. `None` marks a dead node (no positive activity).
pub fn ap_threshold(values: &[f64], epsilon: f64) -> Option<f64> {
    let mut buffer: f64 = values.iter().filter(|s| **s <= 0.0).sum();
    let mut positives: Vec<f64> = values.iter().copied().filter(|s| *s > 0.0).collect();
    positives.sort_by(|a, b| b.total_cmp(a));
    let mut last = None;
    for p in positives {
        buffer += p;
        last = Some(p);
        if buffer >= epsilon {
            break;
        }
    }
    last
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1 {
    /// Positions in the PS field, ascending.
    pub winners: Vec<usize>,
    /// Margin below the strongest activity.
    pub theta: f64,
    pub lower_bound: f64,
}

/// Parametric WTA: every activity within `theta` of the maximum, where the
/// margin comes from [`ap_threshold`].
pub fn stage1_pwta(ps: &PsField, epsilon: f64) -> Option<Stage1> {
    let values = ps.values();
    let lower_bound = ap_threshold(values, epsilon)?;
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let winners = (0..values.len())
        .filter(|i| values[*i] >= lower_bound)
        .collect();
    Some(Stage1 {
        winners,
        theta: max - lower_bound,
        lower_bound,
    })
}

/// Mean-plus-coefficient-sigma cut over `values`; returns selected positions.
///
/// The first coefficient (strictest first) leaving a nonempty selection is
/// loosened by `offset` steps, clamped to the last coefficient. Population
/// sigma is used. A single value, or a set with zero spread (where no cut can
/// select anything), is returned whole.
pub fn si_select(values: &[f64], offset: usize) -> Vec<usize> {
    let n = values.len();
    if n <= 1 {
        return (0..n).collect();
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let sigma = var.sqrt();
    let cut = |k: usize| mean + SI_COEFFICIENTS[k] as f64 * sigma;
    let Some(first) = (0..SI_COEFFICIENTS.len()).find(|k| values.iter().any(|v| *v > cut(*k)))
    else {
        return (0..n).collect();
    };
    let k = (first + offset).min(SI_COEFFICIENTS.len() - 1);
    let threshold = cut(k);
    (0..n).filter(|i| values[*i] > threshold).collect()
}

/// Statistically-important grouping of the stage-1 winners.
pub fn stage2_si(w1: &[usize], ps: &PsField, offset: usize) -> Vec<usize> {
    let values: Vec<f64> = w1.iter().map(|i| ps.values()[*i]).collect();
    si_select(&values, offset)
        .into_iter()
        .map(|k| w1[k])
        .collect()
}

/// Spatially-contiguous grouping: keeps the stage-1 winners lying in the best
/// 8-connected region of the channel-summed window projection.
pub fn stage2_sc(w1: &[usize], ps: &PsField, sc_alpha: f64) -> Vec<usize> {
    let Some((rows, cols)) = ps.window() else {
        return w1.to_vec();
    };
    let cells = rows * cols;
    let mut occupied = vec![false; cells];
    let mut cell_ps = vec![0.0; cells];
    for &i in w1 {
        let cell = i % cells;
        occupied[cell] = true;
        cell_ps[cell] += ps.values()[i];
    }
    let regions = label_regions(rows, cols, &occupied);
    let Some(best) = winning_region(&regions, &cell_ps, sc_alpha) else {
        return Vec::new();
    };
    let mut keep = vec![false; cells];
    for c in &regions[best] {
        keep[*c] = true;
    }
    w1.iter().copied().filter(|i| keep[i % cells]).collect()
}

/// Stage-2 replacement used when grouping is disabled at non-spatial layers:
/// the single strongest stage-1 winner (first on ties).
pub fn strongest(w1: &[usize], ps: &PsField) -> Vec<usize> {
    let mut best: Option<usize> = None;
    for &i in w1 {
        if best.is_none_or(|b| ps.values()[i] > ps.values()[b]) {
            best = Some(i);
        }
    }
    best.into_iter().collect()
}

/// Distributes `top_activity` over the winners in proportion to their PS
/// activities, accumulating into `lower`.
pub fn stage3_propagate(top_activity: f64, w2: &[usize], ps: &PsField, lower: &mut GatingVolume) {
    if top_activity == 0.0 || w2.is_empty() {
        return;
    }
    let total: f64 = w2.iter().map(|i| ps.values()[*i]).sum();
    debug_assert!(total > 0.0);
    for &i in w2 {
        let weight = ps.values()[i] / total;
        lower.add(ps.sources()[i], weight * top_activity);
    }
}

/// Extra statistical pruning over the whole bridge gating volume. Returns the
/// gating mass removed.
pub fn bridge_select(gating: &mut GatingVolume, offset: usize) -> Result<f64> {
    let active: Vec<usize> = gating.active_indices().collect();
    if active.is_empty() {
        return Err(Error::TdDied("bridge".into()));
    }
    let values: Vec<f64> = active.iter().map(|i| gating.data()[*i]).collect();
    let mut keep = vec![false; active.len()];
    for k in si_select(&values, offset) {
        keep[k] = true;
    }
    let mut pruned = 0.0;
    for (k, idx) in active.into_iter().enumerate() {
        if !keep[k] {
            pruned += gating.data()[idx];
            gating.zero_at(idx);
        }
    }
    Ok(pruned)
}
