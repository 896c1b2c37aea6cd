//! Slow, obviously-correct reference implementations.

use std::collections::VecDeque;

use stnet::net::{Conv, Dense, LayerSpec, Network};
use stnet::tensor::{FeatureVolume, Shape3};

/// Direct six-loop convolution in f64.
pub fn conv(input: &FeatureVolume, c: &Conv) -> Vec<f64> {
    let s = input.shape();
    let (k, st, p) = (c.window.kernel, c.window.stride, c.window.padding);
    let oh = (s.height + 2 * p - k) / st + 1;
    let ow = (s.width + 2 * p - k) / st + 1;
    let mut out = vec![0.0; c.out_channels * oh * ow];
    for o in 0..c.out_channels {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = c.bias[o] as f64;
                for i in 0..c.in_channels {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (y * st + ky) as isize - p as isize;
                            let ix = (x * st + kx) as isize - p as isize;
                            if iy < 0 || ix < 0 || iy >= s.height as isize || ix >= s.width as isize
                            {
                                continue;
                            }
                            let w = c.weights[((o * c.in_channels + i) * k + ky) * k + kx] as f64;
                            acc += w * input.get(i, iy as usize, ix as usize) as f64;
                        }
                    }
                }
                out[(o * oh + y) * ow + x] = acc;
            }
        }
    }
    out
}

pub fn fc(input: &[f32], d: &Dense) -> Vec<f64> {
    (0..d.out_features)
        .map(|o| {
            d.bias[o] as f64
                + (0..d.in_features)
                    .map(|i| d.weights[o * d.in_features + i] as f64 * input[i] as f64)
                    .sum::<f64>()
        })
        .collect()
}

/// Tries every descending prefix of the positives, recomputing each sum from
/// scratch, and returns the last element of the shortest one that restores
/// the buffer to `epsilon`.
pub fn ap_threshold(values: &[f64], epsilon: f64) -> Option<f64> {
    let neg: f64 = values.iter().filter(|v| **v <= 0.0).sum();
    let mut pos: Vec<f64> = values.iter().copied().filter(|v| *v > 0.0).collect();
    if pos.is_empty() {
        return None;
    }
    pos.sort_by(|a, b| b.partial_cmp(a).unwrap());
    for m in 1..=pos.len() {
        let mut total = neg;
        for v in &pos[..m] {
            total += v;
        }
        if total >= epsilon {
            return Some(pos[m - 1]);
        }
    }
    Some(pos[pos.len() - 1])
}

/// BFS flood fill over the 8-neighbourhood; regions sorted by smallest cell.
pub fn flood_regions(h: usize, w: usize, occ: &[bool]) -> Vec<Vec<usize>> {
    let mut seen = vec![false; h * w];
    let mut regions = Vec::new();
    for start in 0..h * w {
        if !occ[start] || seen[start] {
            continue;
        }
        let mut region = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(c) = queue.pop_front() {
            region.push(c);
            let (y, x) = ((c / w) as isize, (c % w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let n = ny as usize * w + nx as usize;
                    if occ[n] && !seen[n] {
                        seen[n] = true;
                        queue.push_back(n);
                    }
                }
            }
        }
        region.sort_unstable();
        regions.push(region);
    }
    regions
}

/// Exhaustive winner: best score, then larger PS sum, then smallest anchor.
pub fn best_region(regions: &[Vec<usize>], cell_ps: &[f64], alpha: f64) -> Option<usize> {
    let scored: Vec<(f64, f64, usize)> = regions
        .iter()
        .map(|r| {
            let sum: f64 = r.iter().map(|c| cell_ps[*c]).sum();
            (alpha * sum + (1.0 - alpha) * r.len() as f64, sum, r[0])
        })
        .collect();
    (0..regions.len()).min_by(|a, b| {
        let (sa, ua, ka) = scored[*a];
        let (sb, ub, kb) = scored[*b];
        sb.partial_cmp(&sa)
            .unwrap()
            .then(ub.partial_cmp(&ua).unwrap())
            .then(ka.cmp(&kb))
    })
}

/// Column footprint of output node `(row, col)` of a single-channel stack
/// with nonnegative weights: the input columns whose lighting changes it.
pub fn column_footprint(layers: &[LayerSpec], n: usize, row: usize, col: usize) -> Vec<usize> {
    let net = Network::new(Shape3::new(1, n, n), layers.to_vec()).unwrap();
    let mut hits = Vec::new();
    for c in 0..n {
        let img = FeatureVolume::from_fn(
            Shape3::new(1, n, n),
            |_, _, x| if x == c { 1.0 } else { 0.0 },
        );
        let out = net.forward(&img).unwrap();
        if out.output().get(0, row, col) > 0.0 {
            hits.push(c);
        }
    }
    hits
}

/// Gating-mass bookkeeping of one top-down pass. Between consecutive volumes
/// the mass may only drop by the activity of dead nodes (no positive PS
/// entry, recomputed here) and by bridge pruning. Returns the violations.
pub fn conservation_errors(
    trace: &stnet::ActivationTrace,
    net: &Network,
    outcome: &stnet::attention::TdOutcome,
    tol: f64,
) -> Vec<String> {
    use stnet::net::LayerOp;
    let top = outcome.stop + outcome.volumes.len() - 1;
    let mut errors = Vec::new();
    for (t, record) in outcome.layers.iter().enumerate() {
        let upper = top - t;
        let layer = upper - 1;
        let above = outcome.volume(upper).unwrap();
        let below = outcome.volume(layer).unwrap();
        let dead: f64 = match net.layers()[layer].op {
            LayerOp::Relu | LayerOp::Softmax | LayerOp::Flatten => 0.0,
            _ => above
                .active_indices()
                .filter(|i| {
                    !stnet::attention::ps_activities(trace, net, layer, *i)
                        .unwrap()
                        .has_positive()
                })
                .map(|i| above.data()[i])
                .sum(),
        };
        let pruned = record.bridge_pruned.unwrap_or(0.0);
        let expected = above.mass() - dead - pruned;
        let got = below.mass();
        if (got - expected).abs() > tol * above.mass().max(1.0) {
            errors.push(format!(
                "layer `{}`: mass {} -> {}, dead {dead}, pruned {pruned}",
                record.layer,
                above.mass(),
                got
            ));
        }
    }
    errors
}

/// Compares composed geometry against the perturbation footprint of a middle
/// output node and its right neighbour on an `n x n` input. `None` when the
/// stack does not fit or the footprint reaches the image border.
pub fn geometry_mismatch(layers: &[LayerSpec], n: usize) -> Option<Result<(), String>> {
    let net = Network::new(Shape3::new(1, n, n), layers.to_vec()).ok()?;
    let out = net.output_shape();
    if out.width < 3 {
        return None;
    }
    let (row, col) = (out.height / 2, out.width / 2);
    let a = column_footprint(layers, n, row, col);
    let b = column_footprint(layers, n, row, col + 1);
    for fp in [&a, &b] {
        if fp.is_empty() || fp[0] == 0 || fp[fp.len() - 1] == n - 1 {
            return None;
        }
    }
    let geom = stnet::tensor::rf_geometry(layers).unwrap();
    let (lo, hi) = (a[0], a[a.len() - 1]);
    let want = (hi - lo + 1, b[0] - lo, (lo + hi) as f64 / 2.0);
    let got = (geom.rf_size, geom.jump, geom.center(col));
    Some(if want == got {
        Ok(())
    } else {
        Err(format!(
            "{:?}: footprint (rf, jump, centre) {want:?}, composed {got:?}",
            names(layers)
        ))
    })
}

fn names(layers: &[LayerSpec]) -> Vec<String> {
    layers
        .iter()
        .map(|l| match l.spatial_window() {
            Some(w) => format!("{}(k{} s{} p{})", l.name, w.kernel, w.stride, w.padding),
            None => l.name.clone(),
        })
        .collect()
}
