//! Seeded random layers, networks and inputs.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use stnet::net::{Conv, Dense, LayerOp, LayerSpec, Network};
use stnet::tensor::{FeatureVolume, Shape3, Window};

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn volume(rng: &mut ChaCha8Rng, shape: Shape3, lo: f32, hi: f32) -> FeatureVolume {
    FeatureVolume::new(shape, uniform(rng, shape.len(), lo, hi)).unwrap()
}

pub fn conv(rng: &mut ChaCha8Rng, input: Shape3, out: usize) -> Option<Conv> {
    let k = rng.gen_range(1..=3.min(input.height + 2).min(input.width + 2));
    let stride = rng.gen_range(1..=2);
    let padding = rng.gen_range(0..k);
    let window = Window::new(k, stride, padding);
    window.output_extent(input.height)?;
    window.output_extent(input.width)?;
    let weights = uniform(rng, out * input.channels * k * k, -1.0, 1.0);
    let bias = uniform(rng, out, -0.2, 0.2);
    Some(Conv::new(window, input.channels, out, weights, bias).unwrap())
}

pub fn dense(rng: &mut ChaCha8Rng, inputs: usize, out: usize) -> Dense {
    Dense::new(
        inputs,
        out,
        uniform(rng, inputs * out, -1.0, 1.0),
        uniform(rng, out, -0.2, 0.2),
    )
    .unwrap()
}

/// A sequential net of at most `depth` weighted or pooling layers (relus are
/// free), optionally ending in flatten + fc (+ softmax).
pub fn network(rng: &mut ChaCha8Rng, depth: usize) -> Network {
    loop {
        let input = Shape3::new(
            rng.gen_range(1..=3),
            rng.gen_range(4..=12),
            rng.gen_range(4..=12),
        );
        if let Some(net) = try_network(rng, input, depth) {
            return net;
        }
    }
}

fn try_network(rng: &mut ChaCha8Rng, input: Shape3, depth: usize) -> Option<Network> {
    let mut layers = Vec::new();
    let mut shape = input;
    let with_fc = rng.gen_bool(0.5);
    let spatial = if with_fc {
        depth.saturating_sub(1)
    } else {
        depth
    }
    .max(1);
    for i in 0..rng.gen_range(1..=spatial) {
        let spec = match rng.gen_range(0..4) {
            0 | 1 => {
                let out = rng.gen_range(1..=3);
                LayerSpec::new(format!("conv{i}"), LayerOp::Conv(conv(rng, shape, out)?))
            }
            2 => LayerSpec::max_pool(format!("pool{i}"), 2, rng.gen_range(1..=2), 0),
            _ => LayerSpec::avg_pool(format!("avg{i}"), 2, rng.gen_range(1..=2), 0),
        };
        shape = spec.output_shape(shape).ok()?;
        layers.push(spec);
        if rng.gen_bool(0.5) {
            layers.push(LayerSpec::relu(format!("relu{i}")));
        }
    }
    if with_fc {
        layers.push(LayerSpec::flatten("flatten"));
        let classes = rng.gen_range(2..=5);
        layers.push(LayerSpec::new(
            "fc",
            LayerOp::Fc(dense(rng, shape.len(), classes)),
        ));
        if rng.gen_bool(0.5) {
            layers.push(LayerSpec::softmax("prob"));
        }
    }
    Network::new(input, layers).ok()
}

/// Single-channel stack of 1 to 4 spatial layers with nonnegative weights and
/// a total stride of at most 4.
pub fn geometry_stack(rng: &mut ChaCha8Rng) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    let mut total_stride = 1;
    for i in 0..rng.gen_range(1..=4) {
        let stride = if total_stride < 4 {
            rng.gen_range(1..=2)
        } else {
            1
        };
        total_stride *= stride;
        let spec = match rng.gen_range(0..4) {
            0 | 1 => {
                let k = rng.gen_range(1..=3);
                LayerSpec::conv_uniform(
                    format!("conv{i}"),
                    1,
                    1,
                    k,
                    stride,
                    rng.gen_range(0..k),
                    1.0,
                )
            }
            2 => LayerSpec::max_pool(format!("pool{i}"), rng.gen_range(2..=3), stride, 0),
            _ => LayerSpec::avg_pool(format!("avg{i}"), rng.gen_range(2..=3), stride, 0),
        };
        layers.push(spec);
        if rng.gen_bool(0.3) {
            layers.push(LayerSpec::relu(format!("relu{i}")));
        }
    }
    layers
}
